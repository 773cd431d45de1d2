//! Synthetic dual-plane RF scene simulator.
//!
//! Persons are capsule assemblies (torso, head, two swinging legs) walking
//! inside a box arena. Each frame renders three orthographic occupancy
//! grids — the image-plane silhouette (x-z), a plan view (x-y), and a side
//! view (y-z) — and corrupts the two heatmap planes with Gaussian blur and
//! multiplicative speckle noise. Fully deterministic given the seed.

use crate::error::{Error, Result};
use crate::num::{seeded_rng, standard_normal, Scalar};
use crate::data::{Frame, HeatmapPair, SequenceSample, SilhouetteMask};
use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PersonConfig {
    /// Body height in meters.
    pub height: f64,
    /// Torso radius in meters.
    pub radius: f64,
    /// Walking speed in m/s.
    pub gait_speed: f64,
    /// Initial heading in radians (0 = +x).
    pub heading: f64,
    /// Initial (x, y) position in meters.
    pub start: [f64; 2],
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct PlaneResolutions {
    /// Image plane (rows = z, cols = x).
    pub image: (usize, usize),
    /// Horizontal plane (rows = y, cols = x).
    pub horizontal: (usize, usize),
    /// Vertical plane (rows = z, cols = y).
    pub vertical: (usize, usize),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SceneConfig {
    /// Arena extents in meters (x, y, z).
    pub arena: [f64; 3],
    pub persons: Vec<PersonConfig>,
    /// Multiplicative speckle noise level.
    pub speckle_sigma: f64,
    /// Gaussian blur width for heatmaps, in cells. 0 disables blurring.
    pub blur_sigma_cells: f64,
    pub resolutions: PlaneResolutions,
    pub seed: u64,
    /// Permit zero persons (empty-scene test mode).
    #[serde(default)]
    pub allow_empty_scene: bool,
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.persons.is_empty() && !self.allow_empty_scene {
            return Err(Error::Config("scene needs at least one person".into()));
        }
        if self.arena.iter().any(|&e| e <= 0.0) {
            return Err(Error::Config("arena extents must be positive".into()));
        }
        if self.speckle_sigma < 0.0 || self.blur_sigma_cells < 0.0 {
            return Err(Error::Config("noise levels must be non-negative".into()));
        }
        for (i, p) in self.persons.iter().enumerate() {
            if p.height <= 0.0 || p.radius <= 0.0 || p.gait_speed < 0.0 {
                return Err(Error::Config(format!("person {i} has non-positive geometry")));
            }
            let margin = p.radius;
            if p.start[0] < margin
                || p.start[0] > self.arena[0] - margin
                || p.start[1] < margin
                || p.start[1] > self.arena[1] - margin
            {
                return Err(Error::Config(format!(
                    "person {i} initial position ({}, {}) outside arena",
                    p.start[0], p.start[1]
                )));
            }
            if p.height > self.arena[2] {
                return Err(Error::Config(format!("person {i} taller than the arena")));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical serialized configuration.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let text = toml::to_string(self).expect("scene config serializes");
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        let d = hasher.finalize();
        d.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// A small indoor scene with one walker; heatmaps 64x64, masks `mask_hw`.
    pub fn single_walker(mask_hw: (usize, usize), seed: u64) -> Self {
        Self {
            arena: [6.0, 6.0, 2.5],
            persons: vec![PersonConfig {
                height: 1.75,
                radius: 0.22,
                gait_speed: 1.2,
                heading: 0.6,
                start: [2.0, 3.0],
            }],
            speckle_sigma: 0.25,
            blur_sigma_cells: 1.2,
            resolutions: PlaneResolutions {
                image: mask_hw,
                horizontal: (64, 64),
                vertical: (64, 64),
            },
            seed,
            allow_empty_scene: false,
        }
    }
}

/// Capsule (line segment with radius) in world coordinates.
#[derive(Debug, Clone, Copy)]
pub struct Capsule {
    pub p0: [f64; 3],
    pub p1: [f64; 3],
    pub radius: f64,
}

/// Projection planes. Each drops one world axis:
/// image keeps (x, z), horizontal keeps (x, y), vertical keeps (y, z).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Plane {
    Image,
    Horizontal,
    Vertical,
}

impl Plane {
    fn project(self, p: [f64; 3]) -> [f64; 2] {
        match self {
            Plane::Image => [p[0], p[2]],
            Plane::Horizontal => [p[0], p[1]],
            Plane::Vertical => [p[1], p[2]],
        }
    }

    /// (axis1 extent, axis2 extent) in world units for a given arena.
    fn extents(self, arena: [f64; 3]) -> (f64, f64) {
        match self {
            Plane::Image => (arena[0], arena[2]),
            Plane::Horizontal => (arena[0], arena[1]),
            Plane::Vertical => (arena[1], arena[2]),
        }
    }
}

#[derive(Debug, Clone)]
struct WalkerState {
    pos: [f64; 2],
    heading: f64,
    phase: f64,
    cfg: PersonConfig,
}

impl WalkerState {
    fn capsules(&self) -> Vec<Capsule> {
        let h = self.cfg.height;
        let r = self.cfg.radius;
        let (x, y) = (self.pos[0], self.pos[1]);
        let (dx, dy) = (self.heading.cos(), self.heading.sin());
        let (lx, ly) = (-dy, dx); // lateral unit
        let leg_top = 0.45 * h;
        let leg_bottom = 0.06 * h;
        let swing = 0.22 * (leg_top - leg_bottom) * self.phase.sin();
        let hip = r * 0.5;
        vec![
            // torso
            Capsule {
                p0: [x, y, 0.45 * h],
                p1: [x, y, 0.80 * h],
                radius: r,
            },
            // head (degenerate capsule = sphere)
            Capsule {
                p0: [x, y, 0.88 * h],
                p1: [x, y, 0.88 * h],
                radius: 0.6 * r,
            },
            // legs, swinging in antiphase along the heading
            Capsule {
                p0: [x + lx * hip, y + ly * hip, leg_top],
                p1: [x + lx * hip + dx * swing, y + ly * hip + dy * swing, leg_bottom],
                radius: 0.4 * r,
            },
            Capsule {
                p0: [x - lx * hip, y - ly * hip, leg_top],
                p1: [x - lx * hip - dx * swing, y - ly * hip - dy * swing, leg_bottom],
                radius: 0.4 * r,
            },
        ]
    }

    fn advance<R: Rng>(&mut self, arena: [f64; 3], dt: f64, rng: &mut R) {
        let jitter: f64 = standard_normal::<f64, _>(rng) * 0.05;
        self.heading += jitter;
        let step = self.cfg.gait_speed * dt;
        let mut nx = self.pos[0] + step * self.heading.cos();
        let mut ny = self.pos[1] + step * self.heading.sin();
        let margin = self.cfg.radius;
        if nx < margin || nx > arena[0] - margin {
            self.heading = std::f64::consts::PI - self.heading;
            nx = nx.clamp(margin, arena[0] - margin);
        }
        if ny < margin || ny > arena[1] - margin {
            self.heading = -self.heading;
            ny = ny.clamp(margin, arena[1] - margin);
        }
        self.pos = [nx, ny];
        // stride period tied to speed: one full leg cycle per ~0.7 m
        self.phase += std::f64::consts::TAU * (self.cfg.gait_speed * dt / 0.7);
    }
}

fn dist_sq_point_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len_sq = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len_sq > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len_sq).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let cx = a[0] + t * ab[0] - p[0];
    let cy = a[1] + t * ab[1] - p[1];
    cx * cx + cy * cy
}

/// Cell-center coordinates for a plane grid. Row 0 is the highest value of
/// the second axis (image convention).
pub fn cell_center(plane_extents: (f64, f64), shape: (usize, usize), row: usize, col: usize) -> [f64; 2] {
    let (rows, cols) = shape;
    let (e1, e2) = plane_extents;
    let c1 = (col as f64 + 0.5) * e1 / cols as f64;
    let c2 = (rows as f64 - row as f64 - 0.5) * e2 / rows as f64;
    [c1, c2]
}

/// Orthographic occupancy of a capsule set on a plane grid: a cell is set
/// when its center lies within radius of a projected capsule segment.
pub fn render_occupancy(
    capsules: &[Capsule],
    plane: Plane,
    arena: [f64; 3],
    shape: (usize, usize),
) -> Array2<u8> {
    let extents = plane.extents(arena);
    let mut grid = Array2::<u8>::zeros(shape);
    let projected: Vec<([f64; 2], [f64; 2], f64)> = capsules
        .iter()
        .map(|c| (plane.project(c.p0), plane.project(c.p1), c.radius))
        .collect();
    for row in 0..shape.0 {
        for col in 0..shape.1 {
            let p = cell_center(extents, shape, row, col);
            for &(a, b, r) in &projected {
                if dist_sq_point_segment(p, a, b) <= r * r {
                    grid[[row, col]] = 1;
                    break;
                }
            }
        }
    }
    grid
}

fn gaussian_blur(grid: &Array2<f64>, sigma: f64) -> Array2<f64> {
    if sigma <= 0.0 {
        return grid.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    let mut norm = 0.0;
    for k in -radius..=radius {
        let w = (-(k as f64 * k as f64) / (2.0 * sigma * sigma)).exp();
        kernel.push(w);
        norm += w;
    }
    for w in &mut kernel {
        *w /= norm;
    }
    let (rows, cols) = grid.dim();
    let mut tmp = Array2::<f64>::zeros((rows, cols));
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = 0.0;
            for (ki, &w) in kernel.iter().enumerate() {
                let cc = c as isize + ki as isize - radius;
                if cc >= 0 && cc < cols as isize {
                    acc += w * grid[[r, cc as usize]];
                }
            }
            tmp[[r, c]] = acc;
        }
    }
    let mut out = Array2::<f64>::zeros((rows, cols));
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = 0.0;
            for (ki, &w) in kernel.iter().enumerate() {
                let rr = r as isize + ki as isize - radius;
                if rr >= 0 && rr < rows as isize {
                    acc += w * tmp[[rr as usize, c]];
                }
            }
            out[[r, c]] = acc;
        }
    }
    out
}

fn heatmap_from_occupancy<T: Scalar, R: Rng>(
    occ: &Array2<u8>,
    blur_sigma: f64,
    speckle_sigma: f64,
    rng: &mut R,
) -> Array2<T> {
    let raw = occ.mapv(|v| v as f64);
    let mut h = gaussian_blur(&raw, blur_sigma);
    let max = h.iter().cloned().fold(0.0f64, f64::max);
    if max > 0.0 {
        h.mapv_inplace(|v| v / max);
    }
    // speckle draws happen for every cell regardless of sigma so that the
    // rng stream (and thus every downstream frame) does not depend on it
    let mut out = Array2::<T>::zeros(h.dim());
    for (o, &v) in out.iter_mut().zip(h.iter()) {
        let n: f64 = standard_normal(rng);
        let corrupted = (v * (1.0 + speckle_sigma * n)).clamp(0.0, 1.0);
        *o = T::from_f(corrupted);
    }
    out
}

/// Render `num_frames` of walking persons. Deterministic per (config, seed).
pub fn simulate_sequence<T: Scalar>(cfg: &SceneConfig, num_frames: usize) -> Result<SequenceSample<T>> {
    if num_frames == 0 {
        return Err(Error::Config("num_frames must be positive".into()));
    }
    cfg.validate()?;
    let dt = 0.1;
    let mut rng = seeded_rng(cfg.seed, "scene", 0);
    let mut walkers: Vec<WalkerState> = cfg
        .persons
        .iter()
        .map(|p| WalkerState {
            pos: p.start,
            heading: p.heading,
            phase: 0.0,
            cfg: p.clone(),
        })
        .collect();

    let mut frames = Vec::with_capacity(num_frames);
    for frame_index in 0..num_frames {
        if frame_index > 0 {
            for w in &mut walkers {
                w.advance(cfg.arena, dt, &mut rng);
            }
        }
        let capsules: Vec<Capsule> = walkers.iter().flat_map(|w| w.capsules()).collect();
        let mask = render_occupancy(&capsules, Plane::Image, cfg.arena, cfg.resolutions.image);
        let hor_occ =
            render_occupancy(&capsules, Plane::Horizontal, cfg.arena, cfg.resolutions.horizontal);
        let ver_occ =
            render_occupancy(&capsules, Plane::Vertical, cfg.arena, cfg.resolutions.vertical);
        let horizontal =
            heatmap_from_occupancy::<T, _>(&hor_occ, cfg.blur_sigma_cells, cfg.speckle_sigma, &mut rng);
        let vertical =
            heatmap_from_occupancy::<T, _>(&ver_occ, cfg.blur_sigma_cells, cfg.speckle_sigma, &mut rng);
        frames.push(Frame {
            heatmaps: HeatmapPair {
                horizontal,
                vertical,
                frame_index,
            },
            mask: SilhouetteMask {
                labels: mask,
                frame_index,
            },
        });
    }
    Ok(SequenceSample {
        frames,
        group_id: format!("sim{:04}", cfg.seed % 10_000),
        person_count: cfg.persons.len(),
    })
}
