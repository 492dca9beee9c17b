use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Maximum number of collaborating agents in a scene.
pub const MAX_AGENTS: usize = 5;

const PLACEMENT_RETRIES: usize = 1000;

/// Axis-aligned rectangle in continuous cell coordinates; cell `(x, y)`
/// spans `[x, x + 1) x [y, y + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl Rect {
    /// Rectangle covering whole cells `[x0, x0 + w) x [y0, y0 + h)`.
    pub fn from_cells(x0: usize, y0: usize, w: usize, h: usize) -> Self {
        Self {
            cx: x0 as f64 + w as f64 / 2.0,
            cy: y0 as f64 + h as f64 / 2.0,
            w: w as f64,
            h: h as f64,
        }
    }

    /// A cell belongs to the rectangle when its center lies inside it
    /// (half-open on the far edges).
    pub fn contains_cell(&self, x: usize, y: usize) -> bool {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        px >= self.cx - self.w / 2.0
            && px < self.cx + self.w / 2.0
            && py >= self.cy - self.h / 2.0
            && py < self.cy + self.h / 2.0
    }

    /// Row-major indices of covered cells inside a `height x width` grid.
    pub fn cells(&self, height: usize, width: usize) -> Vec<usize> {
        let x_lo = (self.cx - self.w / 2.0 - 0.5).ceil().max(0.0) as usize;
        let y_lo = (self.cy - self.h / 2.0 - 0.5).ceil().max(0.0) as usize;
        let x_hi = ((self.cx + self.w / 2.0 - 0.5).ceil().max(0.0) as usize).min(width);
        let y_hi = ((self.cy + self.h / 2.0 - 0.5).ceil().max(0.0) as usize).min(height);
        let mut out = Vec::new();
        for y in y_lo..y_hi {
            for x in x_lo..x_hi {
                if self.contains_cell(x, y) {
                    out.push(y * width + x);
                }
            }
        }
        out
    }

    fn within(&self, height: usize, width: usize) -> bool {
        self.cx - self.w / 2.0 >= 0.0
            && self.cy - self.h / 2.0 >= 0.0
            && self.cx + self.w / 2.0 <= width as f64
            && self.cy + self.h / 2.0 <= height as f64
    }
}

/// Agent pose in the shared global BEV frame, in cell units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    /// Radians; rotates the ray fan.
    pub heading: f64,
}

impl Pose {
    pub fn cell(&self, width: usize) -> usize {
        self.y.floor() as usize * width + self.x.floor() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub meters_per_cell: f64,
    /// Target objects (the foreground).
    pub objects: Vec<Rect>,
    /// Opaque non-target structures.
    pub occluders: Vec<Rect>,
    pub agents: Vec<Pose>,
    pub seed: u64,
}

/// What occupies a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Occupant {
    Free,
    Object(usize),
    Occluder(usize),
}

impl SceneSpec {
    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::param(msg));
        if self.height == 0 || self.width == 0 {
            return bad("scene extent must be positive".into());
        }
        if self.agents.is_empty() || self.agents.len() > MAX_AGENTS {
            return bad(format!(
                "scene has {} agents, expected 1..={MAX_AGENTS}",
                self.agents.len()
            ));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if !o.within(self.height, self.width) {
                return bad(format!("object {i} lies outside the extent"));
            }
            if o.cells(self.height, self.width).is_empty() {
                return bad(format!("object {i} covers no cell"));
            }
        }
        for (i, o) in self.occluders.iter().enumerate() {
            if !o.within(self.height, self.width) {
                return bad(format!("occluder {i} lies outside the extent"));
            }
        }
        let occupancy = self.occupancy();
        for (i, a) in self.agents.iter().enumerate() {
            let inside = a.x >= 0.0
                && a.y >= 0.0
                && a.x < self.width as f64
                && a.y < self.height as f64;
            if !inside {
                return bad(format!("agent {i} lies outside the extent"));
            }
            if occupancy[a.cell(self.width)] != Occupant::Free {
                return bad(format!("agent {i} stands inside an object or occluder"));
            }
        }
        Ok(())
    }

    /// Per-cell occupant. Objects take precedence over occluders.
    pub fn occupancy(&self) -> Vec<Occupant> {
        let mut occ = vec![Occupant::Free; self.cells()];
        for (i, r) in self.occluders.iter().enumerate() {
            for c in r.cells(self.height, self.width) {
                occ[c] = Occupant::Occluder(i);
            }
        }
        for (i, r) in self.objects.iter().enumerate() {
            for c in r.cells(self.height, self.width) {
                occ[c] = Occupant::Object(i);
            }
        }
        occ
    }
}

/// Ranges for random scene generation (all sizes in cells).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneParams {
    pub height: usize,
    pub width: usize,
    pub meters_per_cell: f64,
    pub min_objects: usize,
    pub max_objects: usize,
    pub min_object_size: usize,
    pub max_object_size: usize,
    pub occluders: usize,
    pub min_occluder_size: usize,
    pub max_occluder_size: usize,
    pub agents: usize,
}

impl Default for SceneParams {
    fn default() -> Self {
        // 176 x 48 cells at 1.6 m per cell.
        Self {
            height: 48,
            width: 176,
            meters_per_cell: 1.6,
            min_objects: 6,
            max_objects: 12,
            min_object_size: 2,
            max_object_size: 4,
            occluders: 6,
            min_occluder_size: 2,
            max_occluder_size: 6,
            agents: MAX_AGENTS,
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::param(msg));
        if self.height == 0 || self.width == 0 {
            return bad("scene extent must be positive".into());
        }
        if self.height > u16::MAX as usize || self.width > u16::MAX as usize {
            return bad("scene extent must fit in 16 bits".into());
        }
        if !(1..=MAX_AGENTS).contains(&self.agents) {
            return bad(format!("agent count {} outside 1..={MAX_AGENTS}", self.agents));
        }
        if self.min_objects > self.max_objects {
            return bad("min_objects exceeds max_objects".into());
        }
        if self.min_object_size == 0 || self.min_object_size > self.max_object_size {
            return bad("object size range must be positive and ordered".into());
        }
        if self.min_occluder_size == 0 || self.min_occluder_size > self.max_occluder_size {
            return bad("occluder size range must be positive and ordered".into());
        }
        let side = self.max_object_size.max(self.max_occluder_size);
        if side > self.height || side > self.width {
            return bad("object or occluder size exceeds the extent".into());
        }
        if !(self.meters_per_cell > 0.0) {
            return bad("meters_per_cell must be positive".into());
        }
        Ok(())
    }
}

/// Deterministic random scene: non-overlapping targets, occluders that do
/// not touch targets, agents on free cells.
pub fn generate_scene(params: &SceneParams, seed: u64) -> Result<SceneSpec> {
    params.validate()?;
    let (h, w) = (params.height, params.width);
    let mut rng = SplitMix64::fork(seed, 0x5CE7E);
    let mut taken = vec![false; h * w];

    let place = |rng: &mut SplitMix64, lo: usize, hi: usize, taken: &mut Vec<bool>, what: &str| {
        for _ in 0..PLACEMENT_RETRIES {
            let rw = rng.range_inclusive(lo as u64, hi as u64) as usize;
            let rh = rng.range_inclusive(lo as u64, hi as u64) as usize;
            let x0 = rng.range_inclusive(0, (w - rw) as u64) as usize;
            let y0 = rng.range_inclusive(0, (h - rh) as u64) as usize;
            let rect = Rect::from_cells(x0, y0, rw, rh);
            let cells = rect.cells(h, w);
            if cells.iter().all(|&c| !taken[c]) {
                cells.iter().for_each(|&c| taken[c] = true);
                return Ok(rect);
            }
        }
        Err(Error::SceneGeneration(format!(
            "could not place {what} after {PLACEMENT_RETRIES} attempts"
        )))
    };

    let n_objects =
        rng.range_inclusive(params.min_objects as u64, params.max_objects as u64) as usize;
    let mut objects = Vec::with_capacity(n_objects);
    for _ in 0..n_objects {
        objects.push(place(&mut rng, params.min_object_size, params.max_object_size, &mut taken, "an object")?);
    }
    let mut occluders = Vec::with_capacity(params.occluders);
    for _ in 0..params.occluders {
        occluders.push(place(&mut rng, params.min_occluder_size, params.max_occluder_size, &mut taken, "an occluder")?);
    }

    let mut agents = Vec::with_capacity(params.agents);
    'agents: for _ in 0..params.agents {
        for _ in 0..PLACEMENT_RETRIES {
            let x = rng.below(w as u64) as usize;
            let y = rng.below(h as u64) as usize;
            if !taken[y * w + x] {
                taken[y * w + x] = true;
                agents.push(Pose {
                    x: x as f64 + 0.5,
                    y: y as f64 + 0.5,
                    heading: rng.uniform(0.0, std::f64::consts::TAU),
                });
                continue 'agents;
            }
        }
        return Err(Error::SceneGeneration(format!(
            "could not place an agent after {PLACEMENT_RETRIES} attempts"
        )));
    }

    let scene = SceneSpec {
        height: h,
        width: w,
        meters_per_cell: params.meters_per_cell,
        objects,
        occluders,
        agents,
        seed,
    };
    scene.validate()?;
    Ok(scene)
}

/// Two-agent occlusion layout on a 16 x 40 grid: a full-height wall at
/// columns 14..16 separates the receiver (agent 0, left) from one target
/// and the helper (agent 1), both on the right. The receiver has no line of
/// sight to the target; the helper has an unobstructed view.
pub fn occlusion_scene(seed: u64) -> SceneSpec {
    let (h, w) = (16usize, 40usize);
    let mut rng = SplitMix64::fork(seed, 0x0CC1_0DED);
    let tw = rng.range_inclusive(2, 4) as usize;
    let th = rng.range_inclusive(2, 4) as usize;
    let target = Rect::from_cells(
        rng.range_inclusive(20, 30) as usize,
        rng.range_inclusive(0, (h - th) as u64) as usize,
        tw,
        th,
    );
    let receiver = Pose {
        x: rng.range_inclusive(2, 10) as f64 + 0.5,
        y: rng.range_inclusive(1, 14) as f64 + 0.5,
        heading: 0.0,
    };
    let helper = loop {
        let x = rng.range_inclusive(18, 38) as usize;
        let y = rng.range_inclusive(0, h as u64 - 1) as usize;
        if !target.contains_cell(x, y) {
            break Pose {
                x: x as f64 + 0.5,
                y: y as f64 + 0.5,
                heading: 0.0,
            };
        }
    };
    SceneSpec {
        height: h,
        width: w,
        meters_per_cell: 1.6,
        objects: vec![target],
        occluders: vec![Rect::from_cells(14, 0, 2, h)],
        agents: vec![receiver, helper],
        seed,
    }
}
