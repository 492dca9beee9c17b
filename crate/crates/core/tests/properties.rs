use proptest::prelude::*;

use sparsecomm_core::cbp::CurriculumState;
use sparsecomm_core::fca::{
    deformable_enrich, refine_confidence, select_foreground, ConfidenceGrid, DeformAttnParams,
};
use sparsecomm_core::tensor::{
    bilinear_sample, cellwise_max, conv2d_3x3, layer_norm, minmax_normalize, topk_cells, CellMask,
    FeatureGrid, Kernel3x3, ScalarGrid, Shape,
};

fn scalar_grid(max_side: usize) -> impl Strategy<Value = ScalarGrid> {
    (1..=max_side, 1..=max_side).prop_flat_map(|(h, w)| {
        prop::collection::vec(-50.0f32..50.0, h * w)
            .prop_map(move |d| ScalarGrid::from_vec(h, w, d).unwrap())
    })
}

fn unit_grid(h: usize, w: usize) -> impl Strategy<Value = ScalarGrid> {
    prop::collection::vec(0.0f32..=1.0, h * w).prop_map(move |d| ScalarGrid::from_vec(h, w, d).unwrap())
}

fn feature_grid(shape: Shape) -> impl Strategy<Value = FeatureGrid> {
    prop::collection::vec(-4.0f32..4.0, shape.len())
        .prop_map(move |d| FeatureGrid::from_vec(shape, d).unwrap())
}

fn small_shape() -> impl Strategy<Value = Shape> {
    (1..=6usize, 1..=6usize, 1..=6usize).prop_map(|(c, h, w)| Shape::new(c, h, w))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn topk_matches_full_sort(g in scalar_grid(8), bits in prop::collection::vec(any::<bool>(), 64), k_frac in 0.0f64..=1.0) {
        let (h, w) = g.dims();
        let eligible = CellMask::from_bits(h, w, bits[..h * w].to_vec()).unwrap();
        let k = (k_frac * eligible.count() as f64) as usize;
        let got = topk_cells(&g, k, &eligible).unwrap();
        let mut all: Vec<usize> = (0..h * w).filter(|&c| eligible.get(c)).collect();
        all.sort_by(|&a, &b| g.get(b).partial_cmp(&g.get(a)).unwrap().then(a.cmp(&b)));
        all.truncate(k);
        prop_assert_eq!(got, all);
    }

    #[test]
    fn topk_rejects_oversized_k(g in scalar_grid(5)) {
        let (h, w) = g.dims();
        prop_assert!(topk_cells(&g, h * w + 1, &CellMask::full(h, w)).is_err());
    }

    #[test]
    fn minmax_is_in_range_and_idempotent(g in scalar_grid(8)) {
        let n = minmax_normalize(&g);
        prop_assert!(n.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let twice = minmax_normalize(&n);
        for (a, b) in n.data().iter().zip(twice.data()) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn layer_norm_standardizes(v in prop::collection::vec(-100.0f32..100.0, 2..64)) {
        let spread = v.iter().cloned().fold(f32::NEG_INFINITY, f32::max) - v.iter().cloned().fold(f32::INFINITY, f32::min);
        prop_assume!(spread > 1e-2);
        let out = layer_norm(&v, 1e-9);
        let n = out.len() as f64;
        let mean = out.iter().map(|&x| x as f64).sum::<f64>() / n;
        let var = out.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
        prop_assert!(mean.abs() < 1e-4);
        prop_assert!((var - 1.0).abs() < 1e-3);
    }

    #[test]
    fn delta_kernel_is_identity(f in small_shape().prop_flat_map(feature_grid)) {
        let out = conv2d_3x3(&f, &Kernel3x3::delta(f.channels())).unwrap();
        prop_assert_eq!(out, f);
    }

    #[test]
    fn cellwise_max_is_a_semilattice((a, b, c) in small_shape().prop_flat_map(|s| (feature_grid(s), feature_grid(s), feature_grid(s)))) {
        let ab = cellwise_max(&[&a, &b]).unwrap();
        prop_assert_eq!(&ab, &cellwise_max(&[&b, &a]).unwrap());
        let left = cellwise_max(&[&ab, &c]).unwrap();
        let bc = cellwise_max(&[&b, &c]).unwrap();
        prop_assert_eq!(&left, &cellwise_max(&[&a, &bc]).unwrap());
        prop_assert_eq!(&left, &cellwise_max(&[&a, &b, &c]).unwrap());
        prop_assert_eq!(&cellwise_max(&[&a, &a]).unwrap(), &a);
    }

    #[test]
    fn bilinear_is_linear_in_the_grid(
        (a, b) in small_shape().prop_flat_map(|s| (feature_grid(s), feature_grid(s))),
        alpha in -2.0f32..2.0,
        px in -1.5f64..7.5,
        py in -1.5f64..7.5,
    ) {
        let combo = FeatureGrid::from_vec(
            a.shape(),
            a.data().iter().zip(b.data()).map(|(&x, &y)| alpha * x + y).collect(),
        ).unwrap();
        let lhs = bilinear_sample(&combo, px, py);
        let sa = bilinear_sample(&a, px, py);
        let sb = bilinear_sample(&b, px, py);
        for ((l, x), y) in lhs.iter().zip(&sa).zip(&sb) {
            prop_assert!((l - (alpha * x + y)).abs() <= 1e-4);
        }
    }

    #[test]
    fn bilinear_hits_cell_values_at_integer_points(f in small_shape().prop_flat_map(feature_grid)) {
        for y in 0..f.height() {
            for x in 0..f.width() {
                prop_assert_eq!(bilinear_sample(&f, x as f64, y as f64), f.cell(y * f.width() + x).to_vec());
            }
        }
    }

    #[test]
    fn refinement_is_monotone(
        (conf, dens) in (1..=8usize, 1..=8usize).prop_flat_map(|(h, w)| (unit_grid(h, w), unit_grid(h, w))),
        cell_seed in any::<usize>(),
        bump in 0.0f32..2.0,
    ) {
        let (h, w) = conf.dims();
        let dens = dens.map(|d| d * 10.0);
        let cell = cell_seed % (h * w);
        let c = ConfidenceGrid::new(conf.clone()).unwrap();
        let base = refine_confidence(&c, &dens).unwrap();
        let mut more_dense = dens.clone();
        more_dense.data_mut()[cell] += bump;
        let r = refine_confidence(&c, &more_dense).unwrap();
        prop_assert!(r.grid().get(cell) <= base.grid().get(cell));
        let mut more_conf = conf.clone();
        more_conf.data_mut()[cell] = (more_conf.get(cell) + bump).min(1.0);
        let r = refine_confidence(&ConfidenceGrid::new(more_conf).unwrap(), &dens).unwrap();
        prop_assert!(r.grid().get(cell) >= base.grid().get(cell));
        prop_assert!(base.grid().data().iter().zip(conf.data()).all(|(r, c)| r <= c));
    }

    #[test]
    fn larger_ratios_select_supersets(conf in (1..=10usize, 1..=10usize).prop_flat_map(|(h, w)| unit_grid(h, w)), a in 0.01f64..=1.0, b in 0.01f64..=1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let c = ConfidenceGrid::new(conf).unwrap();
        let small = select_foreground(&c, lo).unwrap();
        let large = select_foreground(&c, hi).unwrap();
        prop_assert!(small.is_subset(&large));
    }

    #[test]
    fn enrichment_leaves_unselected_cells_alone(
        f in (1..=4usize, 2..=6usize, 2..=6usize).prop_flat_map(|(c, h, w)| feature_grid(Shape::new(c, h, w))),
        bits in prop::collection::vec(any::<bool>(), 36),
        seed in any::<u64>(),
    ) {
        let (h, w) = (f.height(), f.width());
        let fg = CellMask::from_bits(h, w, bits[..h * w].to_vec()).unwrap();
        let p = DeformAttnParams::seeded(f.channels(), 4, seed);
        let out = deformable_enrich(&f, &fg, &p).unwrap();
        for cell in 0..h * w {
            if !fg.get(cell) {
                prop_assert_eq!(out.cell(cell), f.cell(cell));
            }
        }
    }

    #[test]
    fn curriculum_never_increases(r0 in 0.0f64..0.99, gamma in 0.01f64..=1.0, period in 1u32..10, cutoff in prop::option::of(0u32..60)) {
        let s = CurriculumState::new(r0, gamma, period, 0.05, cutoff).unwrap();
        let mut prev = f64::INFINITY;
        for e in 0..80 {
            let r = s.ratio_at(e);
            prop_assert!(r <= prev);
            prop_assert!((0.0..=r0).contains(&r));
            prev = r;
        }
    }
}
