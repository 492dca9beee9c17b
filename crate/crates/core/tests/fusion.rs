use sparsecomm_core::faf::{fuse, FusionParams};
use sparsecomm_core::fca::{deformable_enrich, DeformAttnParams};
use sparsecomm_core::rng::SplitMix64;
use sparsecomm_core::tensor::{CellMask, FeatureGrid, Shape};

fn random_grid(rng: &mut SplitMix64, shape: Shape) -> FeatureGrid {
    FeatureGrid::from_vec(shape, (0..shape.len()).map(|_| rng.uniform(-3.0, 3.0) as f32).collect()).unwrap()
}

fn random_shape(rng: &mut SplitMix64) -> Shape {
    Shape::new(
        rng.range_inclusive(1, 12) as usize,
        rng.range_inclusive(1, 12) as usize,
        rng.range_inclusive(1, 12) as usize,
    )
}

#[test]
fn no_neighbors_or_empty_masks_keep_ego() {
    let mut rng = SplitMix64::new(1);
    for i in 0..40 {
        let shape = random_shape(&mut rng);
        let p = FusionParams::seeded(shape.channels, i);
        let ego = random_grid(&mut rng, shape);
        assert_eq!(fuse(&ego, &[], &p).unwrap().fused, ego);
        let neighbors: Vec<_> = (0..3)
            .map(|_| (random_grid(&mut rng, shape), CellMask::empty(shape.height, shape.width)))
            .collect();
        assert_eq!(fuse(&ego, &neighbors, &p).unwrap().fused, ego);
    }
}

#[test]
fn only_covered_cells_change() {
    let mut rng = SplitMix64::new(2);
    for i in 0..20 {
        let shape = random_shape(&mut rng);
        let p = FusionParams::seeded(shape.channels, i);
        let ego = random_grid(&mut rng, shape);
        let bits = (0..shape.cells()).map(|_| rng.below(3) == 0).collect();
        let mask = CellMask::from_bits(shape.height, shape.width, bits).unwrap();
        let out = fuse(&ego, &[(random_grid(&mut rng, shape), mask.clone())], &p).unwrap();
        for cell in 0..shape.cells() {
            if !mask.get(cell) {
                assert_eq!(out.fused.cell(cell), ego.cell(cell));
            }
        }
    }
}

#[test]
fn fusion_is_deterministic() {
    let mut rng = SplitMix64::new(3);
    let shape = Shape::new(16, 20, 24);
    let p = FusionParams::seeded(16, 9);
    let ego = random_grid(&mut rng, shape);
    let n: Vec<_> = (0..4)
        .map(|_| (random_grid(&mut rng, shape), CellMask::full(20, 24)))
        .collect();
    assert_eq!(fuse(&ego, &n, &p).unwrap(), fuse(&ego, &n, &p).unwrap());
}

#[test]
fn neighbor_order_does_not_matter() {
    let mut rng = SplitMix64::new(4);
    let shape = Shape::new(8, 6, 7);
    let p = FusionParams::seeded(8, 1);
    let ego = random_grid(&mut rng, shape);
    let mk = |rng: &mut SplitMix64| {
        let bits = (0..shape.cells()).map(|_| rng.below(2) == 0).collect();
        (random_grid(rng, shape), CellMask::from_bits(6, 7, bits).unwrap())
    };
    let (a, b) = (mk(&mut rng), mk(&mut rng));
    let ab = fuse(&ego, &[a.clone(), b.clone()], &p).unwrap();
    let ba = fuse(&ego, &[b, a], &p).unwrap();
    assert_eq!(ab, ba);
}

#[test]
fn zero_offset_uniform_attention_is_identity() {
    let mut rng = SplitMix64::new(5);
    for _ in 0..20 {
        let shape = random_shape(&mut rng);
        let f = random_grid(&mut rng, shape);
        let p = DeformAttnParams::identity(shape.channels, 4);
        let out = deformable_enrich(&f, &CellMask::full(shape.height, shape.width), &p).unwrap();
        for (a, b) in out.data().iter().zip(f.data()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }
}
