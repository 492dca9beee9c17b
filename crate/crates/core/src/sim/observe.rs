//! Per-agent observation by 2D ray casting over the scene grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fca::ConfidenceGrid;
use crate::rng::SplitMix64;
use crate::sim::scene::{Occupant, SceneSpec};
use crate::tensor::{conv2d_3x3, CellMask, FeatureGrid, Kernel3x3, ScalarGrid, Shape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObservationParams {
    pub channels: usize,
    pub n_rays: usize,
    /// Ray length in cells; a ray that runs out of range leaves a ground
    /// return in its last cell.
    pub max_range: f64,
    /// Clutter noise half-width relative to a unit signature magnitude.
    pub sigma: f64,
    /// Gain applied to the blurred visibility indicator before clamping.
    pub conf_gain: f64,
}

impl Default for ObservationParams {
    fn default() -> Self {
        Self {
            channels: 256,
            n_rays: 1440,
            max_range: 60.0,
            sigma: 0.05,
            conf_gain: 2.25,
        }
    }
}

impl ObservationParams {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::param("channels must be positive"));
        }
        if self.n_rays == 0 {
            return Err(Error::param("n_rays must be at least 1"));
        }
        if !(self.max_range > 0.0) {
            return Err(Error::param("max_range must be positive"));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::param("sigma must be nonnegative"));
        }
        if !(self.conf_gain > 0.0) {
            return Err(Error::param("conf_gain must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentObservation {
    /// Ray terminations per cell.
    pub density: ScalarGrid,
    /// Fraction of geometrically possible rays that reach each cell.
    pub visibility: ScalarGrid,
    pub features: FeatureGrid,
    pub conf: ConfidenceGrid,
    pub gt_fg: CellMask,
    pub gt_bg: CellMask,
}

/// Cells visited by a ray from `(ox, oy)` along `(dx, dy)` up to `range`,
/// in traversal order (Amanatides-Woo grid walk).
fn traverse(ox: f64, oy: f64, dx: f64, dy: f64, range: f64, h: usize, w: usize) -> (Vec<usize>, bool) {
    let mut cells = Vec::new();
    let (mut x, mut y) = (ox.floor() as isize, oy.floor() as isize);
    let step_x: isize = if dx > 0.0 { 1 } else { -1 };
    let step_y: isize = if dy > 0.0 { 1 } else { -1 };
    let inv = |d: f64| if d.abs() < 1e-12 { f64::INFINITY } else { 1.0 / d.abs() };
    let (delta_x, delta_y) = (inv(dx), inv(dy));
    let frac_x = if dx > 0.0 { x as f64 + 1.0 - ox } else { ox - x as f64 };
    let frac_y = if dy > 0.0 { y as f64 + 1.0 - oy } else { oy - y as f64 };
    let mut t_x = frac_x * delta_x;
    let mut t_y = frac_y * delta_y;
    loop {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            // Left the grid before the range ran out.
            return (cells, false);
        }
        cells.push(y as usize * w + x as usize);
        let t_exit = t_x.min(t_y);
        if t_exit >= range {
            return (cells, true);
        }
        if t_x < t_y {
            x += step_x;
            t_x += delta_x;
        } else {
            y += step_y;
            t_y += delta_y;
        }
    }
}

/// Ray-cast observation of `scene` from agent `agent`.
///
/// Rays are spread uniformly over 360 degrees starting at the agent's
/// heading. A ray stops in the first object or occluder cell it enters,
/// which records a return; rays that exhaust `max_range` record a ground
/// return. Cell visibility is `reached / geometric`, where the geometric
/// count ignores all obstacles. Object cells share one visibility: the
/// fraction of the rays geometrically crossing the object that actually
/// end on it.
pub fn observe(scene: &SceneSpec, agent: usize, params: &ObservationParams) -> Result<AgentObservation> {
    params.validate()?;
    let pose = *scene.agents.get(agent).ok_or_else(|| {
        Error::param(format!("agent index {agent} out of range for {} agents", scene.agents.len()))
    })?;
    let (h, w) = (scene.height, scene.width);
    let n = h * w;
    let occupancy = scene.occupancy();

    let mut geometric = vec![0u32; n];
    let mut reached = vec![0u32; n];
    let mut returns = vec![0u32; n];
    let mut object_crossings = vec![0u32; scene.objects.len()];
    let mut object_hits = vec![0u32; scene.objects.len()];
    let mut crossed = vec![false; scene.objects.len()];

    for r in 0..params.n_rays {
        let theta = pose.heading + std::f64::consts::TAU * r as f64 / params.n_rays as f64;
        let (cells, ran_out) = traverse(pose.x, pose.y, theta.cos(), theta.sin(), params.max_range, h, w);
        crossed.iter_mut().for_each(|c| *c = false);
        let mut stopped = false;
        for (i, &c) in cells.iter().enumerate() {
            geometric[c] += 1;
            if let Occupant::Object(o) = occupancy[c] {
                crossed[o] = true;
            }
            if stopped {
                continue;
            }
            reached[c] += 1;
            match occupancy[c] {
                Occupant::Free => {
                    if ran_out && i + 1 == cells.len() {
                        returns[c] += 1;
                    }
                }
                Occupant::Object(o) => {
                    returns[c] += 1;
                    object_hits[o] += 1;
                    stopped = true;
                }
                Occupant::Occluder(_) => {
                    returns[c] += 1;
                    stopped = true;
                }
            }
        }
        for (o, &c) in crossed.iter().enumerate() {
            object_crossings[o] += c as u32;
        }
    }

    let object_vis: Vec<f32> = object_hits
        .iter()
        .zip(&object_crossings)
        .map(|(&hits, &cross)| if cross == 0 { 0.0 } else { hits as f32 / cross as f32 })
        .collect();
    let visibility: Vec<f32> = (0..n)
        .map(|c| match occupancy[c] {
            Occupant::Object(o) => object_vis[o],
            _ if geometric[c] == 0 => 0.0,
            _ => reached[c] as f32 / geometric[c] as f32,
        })
        .collect();

    let object_of = |c: usize| match occupancy[c] {
        Occupant::Object(o) => Some(o),
        _ => None,
    };
    let gt_fg = CellMask::from_bits(h, w, (0..n).map(|c| object_of(c).is_some()).collect())?;
    let gt_bg = gt_fg.not();

    let shape = Shape::new(params.channels, h, w);
    let signatures: Vec<Vec<f32>> = (0..scene.objects.len())
        .map(|o| object_signature(scene.seed, o, params.channels))
        .collect();
    let mut noise = SplitMix64::fork(scene.seed, 0x0B5E_0000 + agent as u64);
    let sigma = params.sigma;
    let features = FeatureGrid::from_fn(shape, |c, ch| {
        // Draw for every element so the noise stream does not depend on
        // the scene layout.
        let clutter = noise.uniform(-sigma, sigma) as f32;
        match object_of(c) {
            Some(o) if object_vis[o] > 0.0 => signatures[o][ch] * object_vis[o],
            _ => clutter,
        }
    });

    let indicator = FeatureGrid::from_fn(Shape::new(1, h, w), |c, _| {
        object_of(c).map_or(0.0, |o| object_vis[o])
    });
    let blur = conv2d_3x3(&indicator, &Kernel3x3::new(1, 1, vec![1.0 / 9.0; 9])?)?;
    let gain = params.conf_gain as f32;
    let conf = ScalarGrid::from_vec(h, w, blur.data().iter().map(|&b| (b * gain).clamp(0.0, 1.0)).collect())?;

    Ok(AgentObservation {
        density: ScalarGrid::from_vec(h, w, returns.iter().map(|&r| r as f32).collect())?,
        visibility: ScalarGrid::from_vec(h, w, visibility)?,
        features,
        conf: ConfidenceGrid::new(conf)?,
        gt_fg,
        gt_bg,
    })
}

/// Per-object signature, entries uniform in `[0.5, 1.5)`.
pub fn object_signature(scene_seed: u64, object: usize, channels: usize) -> Vec<f32> {
    let mut rng = SplitMix64::fork(scene_seed, 0x0B1E_C700 + object as u64);
    (0..channels).map(|_| rng.uniform(0.5, 1.5) as f32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::scene::{Pose, Rect};

    fn params(channels: usize) -> ObservationParams {
        ObservationParams {
            channels,
            n_rays: 720,
            max_range: 30.0,
            ..ObservationParams::default()
        }
    }

    fn scene(objects: Vec<Rect>, occluders: Vec<Rect>, agents: Vec<Pose>) -> SceneSpec {
        SceneSpec {
            height: 8,
            width: 8,
            meters_per_cell: 1.0,
            objects,
            occluders,
            agents,
            seed: 17,
        }
    }

    #[test]
    fn traverse_walks_a_row() {
        let (cells, ran_out) = traverse(0.5, 0.5, 1.0, 0.0, 100.0, 1, 4);
        assert_eq!(cells, vec![0, 1, 2, 3]);
        assert!(!ran_out);
        let (cells, ran_out) = traverse(0.5, 0.5, 1.0, 0.0, 2.0, 1, 4);
        assert_eq!(cells, vec![0, 1, 2]);
        assert!(ran_out);
    }

    #[test]
    fn adjacent_target_fully_visible() {
        let s = scene(
            vec![Rect::from_cells(4, 3, 2, 2)],
            vec![],
            vec![Pose { x: 2.5, y: 3.5, heading: 0.0 }],
        );
        let obs = observe(&s, 0, &params(4)).unwrap();
        let target = [28, 29, 36, 37];
        for &c in &target {
            assert_eq!(obs.visibility.get(c), 1.0);
            assert!(obs.conf.grid().get(c) > 0.999);
            assert!(obs.gt_fg.get(c));
        }
        assert_eq!(obs.gt_fg.count(), 4);
        // Free cells with no obstacle in the way are fully visible.
        assert_eq!(obs.visibility.get(3 * 8 + 1), 1.0);
    }

    #[test]
    fn occluded_target_is_invisible() {
        // A wall at columns 3..5 spans the full height between agent and target.
        let s = scene(
            vec![Rect::from_cells(6, 3, 2, 2)],
            vec![Rect::from_cells(3, 0, 2, 8)],
            vec![Pose { x: 1.5, y: 3.5, heading: 0.0 }],
        );
        let obs = observe(&s, 0, &params(4)).unwrap();
        for c in Rect::from_cells(6, 3, 2, 2).cells(8, 8) {
            assert_eq!(obs.visibility.get(c), 0.0);
            assert_eq!(obs.conf.grid().get(c), 0.0);
        }
        assert!(obs.conf.grid().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn quiet_empty_scene_has_no_features() {
        let s = scene(vec![], vec![], vec![Pose { x: 4.5, y: 4.5, heading: 0.3 }]);
        let p = ObservationParams { sigma: 0.0, ..params(3) };
        let obs = observe(&s, 0, &p).unwrap();
        assert!(obs.features.data().iter().all(|&v| v == 0.0));
        assert!(obs.gt_fg.is_empty());
        assert_eq!(obs.gt_bg.count(), 64);
    }

    #[test]
    fn density_implies_visibility() {
        let s = scene(
            vec![Rect::from_cells(5, 1, 2, 3)],
            vec![Rect::from_cells(1, 5, 3, 1)],
            vec![Pose { x: 2.5, y: 2.5, heading: 0.0 }],
        );
        let obs = observe(&s, 0, &params(2)).unwrap();
        for c in 0..64 {
            if obs.density.get(c) > 0.0 {
                assert!(obs.visibility.get(c) > 0.0, "cell {c}");
            }
        }
        assert_eq!(obs.gt_fg.or(&obs.gt_bg).unwrap().count(), 64);
        assert!(obs.gt_fg.and(&obs.gt_bg).unwrap().is_empty());
    }

    #[test]
    fn bad_agent_index() {
        let s = scene(vec![], vec![], vec![Pose { x: 1.5, y: 1.5, heading: 0.0 }]);
        assert!(observe(&s, 1, &params(2)).is_err());
        let p = ObservationParams { n_rays: 0, ..params(2) };
        assert!(observe(&s, 0, &p).is_err());
    }
}
