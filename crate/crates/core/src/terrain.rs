//! Procedural terrain: six heightfield families over 21 difficulty levels,
//! bilinear height queries, the body-frame height-map scan, and the
//! promotion/demotion curriculum.
//!
//! Every family shares a flat spawn strip across the block center so walkers
//! always start on level ground, with difficulty growing outward along x in
//! both directions. Difficulty parameters interpolate linearly in level:
//! slope angle 0°..22.92°, stair rise 5..24.95 cm (0.31 m run), obstacle
//! height bound 5..24 cm, rough noise amplitude 0..±5 cm.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};
use crate::rng::derive_stream;

/// Terrain family. `SlopeUp`/`StairsUp` ascend away from the spawn strip,
/// the `Down` variants descend, `RoughSlope` is an ascending slope with
/// per-cell noise, and `DiscreteObstacles` is a field of raised/sunken pads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerrainFamily {
    SlopeUp,
    SlopeDown,
    RoughSlope,
    StairsUp,
    StairsDown,
    DiscreteObstacles,
}

impl TerrainFamily {
    pub const ALL: [TerrainFamily; 6] = [
        TerrainFamily::SlopeUp,
        TerrainFamily::SlopeDown,
        TerrainFamily::RoughSlope,
        TerrainFamily::StairsUp,
        TerrainFamily::StairsDown,
        TerrainFamily::DiscreteObstacles,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TerrainFamily::SlopeUp => "slope-up",
            TerrainFamily::SlopeDown => "slope-down",
            TerrainFamily::RoughSlope => "rough-slope",
            TerrainFamily::StairsUp => "stairs-up",
            TerrainFamily::StairsDown => "stairs-down",
            TerrainFamily::DiscreteObstacles => "discrete-obstacles",
        }
    }

    /// Reporting group: the up/down variants of a kind share one bucket.
    pub fn group(self) -> &'static str {
        match self {
            TerrainFamily::SlopeUp | TerrainFamily::SlopeDown => "slope",
            TerrainFamily::RoughSlope => "rough",
            TerrainFamily::StairsUp | TerrainFamily::StairsDown => "stairs",
            TerrainFamily::DiscreteObstacles => "obstacles",
        }
    }
}

impl fmt::Display for TerrainFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Geometry and difficulty schedule for terrain generation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TerrainConfig {
    /// Block extent along x in meters.
    pub block_size_x: f64,
    /// Block extent along y in meters.
    pub block_size_y: f64,
    /// Cell edge length in meters.
    pub resolution: f64,
    /// Highest difficulty level (levels run 0..=max_level).
    pub max_level: u32,
    /// Half-width of the flat spawn strip across the block center.
    pub platform_radius: f64,
    /// Slope angle at max level, degrees.
    pub max_slope_deg: f64,
    /// Rough-terrain noise amplitude at max level, meters.
    pub rough_noise_max: f64,
    /// Stair rise at level 0 / max level, meters.
    pub stair_rise_min: f64,
    pub stair_rise_max: f64,
    /// Stair tread depth, meters.
    pub stair_run: f64,
    /// Obstacle height bound at level 0 / max level, meters.
    pub obstacle_height_min: f64,
    pub obstacle_height_max: f64,
    /// Obstacle footprint side-length range, meters.
    pub obstacle_size_min: f64,
    pub obstacle_size_max: f64,
    /// Obstacles stamped per block.
    pub num_obstacles: usize,
}

impl Default for TerrainConfig {
    fn default() -> Self {
        Self {
            block_size_x: 8.0,
            block_size_y: 8.0,
            resolution: 0.1,
            max_level: 20,
            platform_radius: 0.5,
            max_slope_deg: 22.92,
            rough_noise_max: 0.05,
            stair_rise_min: 0.05,
            stair_rise_max: 0.2495,
            stair_run: 0.31,
            obstacle_height_min: 0.05,
            obstacle_height_max: 0.24,
            obstacle_size_min: 0.5,
            obstacle_size_max: 1.0,
            num_obstacles: 40,
        }
    }
}

/// The per-family difficulty parameter at a level: slope angle (rad) for the
/// slope families, noise amplitude (m) for rough, stair rise (m), obstacle
/// height bound (m). Linear in level for every family.
pub fn difficulty(cfg: &TerrainConfig, family: TerrainFamily, level: u32) -> f64 {
    let frac = level as f64 / cfg.max_level as f64;
    match family {
        TerrainFamily::SlopeUp | TerrainFamily::SlopeDown | TerrainFamily::RoughSlope => {
            (frac * cfg.max_slope_deg).to_radians()
        }
        TerrainFamily::StairsUp | TerrainFamily::StairsDown => {
            cfg.stair_rise_min + frac * (cfg.stair_rise_max - cfg.stair_rise_min)
        }
        TerrainFamily::DiscreteObstacles => {
            cfg.obstacle_height_min + frac * (cfg.obstacle_height_max - cfg.obstacle_height_min)
        }
    }
}

/// Noise amplitude added by the rough family at a level.
pub fn rough_amplitude(cfg: &TerrainConfig, level: u32) -> f64 {
    cfg.rough_noise_max * level as f64 / cfg.max_level as f64
}

/// Immutable grid of terrain heights.
#[derive(Debug, Clone)]
pub struct Heightfield {
    pub family: TerrainFamily,
    pub level: u32,
    /// Meters per cell.
    pub resolution: f64,
    /// Grid nodes along x (block_size_x / resolution + 1).
    pub nx: usize,
    /// Grid nodes along y.
    pub ny: usize,
    /// Row-major heights: index `j * nx + i` is node (x = i·res, y = j·res).
    heights: Vec<f64>,
}

impl Heightfield {
    /// Uniform-height field, used for flat-ground training and tests.
    pub fn flat(cfg: &TerrainConfig, height: f64) -> Self {
        let nx = (cfg.block_size_x / cfg.resolution).round() as usize + 1;
        let ny = (cfg.block_size_y / cfg.resolution).round() as usize + 1;
        Self {
            family: TerrainFamily::SlopeUp,
            level: 0,
            resolution: cfg.resolution,
            nx,
            ny,
            heights: vec![height; nx * ny],
        }
    }

    pub fn size_x(&self) -> f64 {
        (self.nx - 1) as f64 * self.resolution
    }

    pub fn size_y(&self) -> f64 {
        (self.ny - 1) as f64 * self.resolution
    }

    /// X coordinate of the spawn strip center.
    pub fn center_x(&self) -> f64 {
        self.size_x() / 2.0
    }

    pub fn center_y(&self) -> f64 {
        self.size_y() / 2.0
    }

    pub fn node(&self, i: usize, j: usize) -> f64 {
        self.heights[j * self.nx + i]
    }

    /// Bilinearly interpolated height. Coordinates outside the block clamp
    /// to the nearest edge so walkers near the boundary still get answers.
    pub fn height_at(&self, x: f64, y: f64) -> f64 {
        // Division leaves node coordinates a few ulps shy of integers
        // (0.7 / 0.1 < 7); snapping keeps node queries exact.
        let snap = |f: f64| {
            let r = f.round();
            if (f - r).abs() < 1e-9 {
                r
            } else {
                f
            }
        };
        let fx = snap(x / self.resolution).clamp(0.0, (self.nx - 1) as f64);
        let fy = snap(y / self.resolution).clamp(0.0, (self.ny - 1) as f64);
        let i0 = fx.floor() as usize;
        let j0 = fy.floor() as usize;
        let i1 = (i0 + 1).min(self.nx - 1);
        let j1 = (j0 + 1).min(self.ny - 1);
        let tx = fx - i0 as f64;
        let ty = fy - j0 as f64;
        let h00 = self.node(i0, j0);
        let h10 = self.node(i1, j0);
        let h01 = self.node(i0, j1);
        let h11 = self.node(i1, j1);
        h00 * (1.0 - tx) * (1.0 - ty)
            + h10 * tx * (1.0 - ty)
            + h01 * (1.0 - tx) * ty
            + h11 * tx * ty
    }

    /// Largest absolute height difference between horizontally or vertically
    /// adjacent nodes — the local relief a walker has to negotiate.
    pub fn max_adjacent_step(&self) -> f64 {
        let mut max_step: f64 = 0.0;
        for j in 0..self.ny {
            for i in 0..self.nx {
                let h = self.node(i, j);
                if i + 1 < self.nx {
                    max_step = max_step.max((self.node(i + 1, j) - h).abs());
                }
                if j + 1 < self.ny {
                    max_step = max_step.max((self.node(i, j + 1) - h).abs());
                }
            }
        }
        max_step
    }

    /// Plain-text dump: one row per y line, 6 decimal places, space
    /// separated. Used for debugging and regression fixtures.
    pub fn export_text(&self) -> String {
        let mut out = String::new();
        for j in 0..self.ny {
            for i in 0..self.nx {
                if i > 0 {
                    out.push(' ');
                }
                out.push_str(&format!("{:.6}", self.node(i, j)));
            }
            out.push('\n');
        }
        out
    }
}

/// Generates one terrain block. Deterministic for a fixed
/// (family, level, seed) triple.
pub fn generate_terrain(
    cfg: &TerrainConfig,
    family: TerrainFamily,
    level: u32,
    seed: u64,
) -> Result<Heightfield> {
    if level > cfg.max_level {
        return Err(Error::InvalidArgument(format!(
            "terrain level {level} out of range 0..={}",
            cfg.max_level
        )));
    }
    let mut field = Heightfield::flat(cfg, 0.0);
    field.family = family;
    field.level = level;
    let cx = field.center_x();
    let res = cfg.resolution;
    let nx = field.nx;
    let ny = field.ny;
    // Stream keyed by family and level so blocks differ even with one seed.
    let mut rng = derive_stream(seed, family.name(), level as u64);

    // Signed distance beyond the spawn strip along x.
    let beyond = |x: f64| -> f64 { (x - cx).abs() - cfg.platform_radius };

    match family {
        TerrainFamily::SlopeUp | TerrainFamily::SlopeDown | TerrainFamily::RoughSlope => {
            let slope = difficulty(cfg, family, level).tan();
            let sign = if family == TerrainFamily::SlopeDown {
                -1.0
            } else {
                1.0
            };
            let amp = if family == TerrainFamily::RoughSlope {
                rough_amplitude(cfg, level)
            } else {
                0.0
            };
            for j in 0..ny {
                for i in 0..nx {
                    let d = beyond(i as f64 * res);
                    if d <= 0.0 {
                        continue;
                    }
                    let mut h = sign * slope * d;
                    if amp > 0.0 {
                        h += rng.gen_range(-amp..=amp);
                    }
                    field.heights[j * nx + i] = h;
                }
            }
        }
        TerrainFamily::StairsUp | TerrainFamily::StairsDown => {
            let rise = difficulty(cfg, family, level);
            let sign = if family == TerrainFamily::StairsDown {
                -1.0
            } else {
                1.0
            };
            for j in 0..ny {
                for i in 0..nx {
                    let d = beyond(i as f64 * res);
                    if d <= 0.0 {
                        continue;
                    }
                    let tread = (d / cfg.stair_run).floor();
                    field.heights[j * nx + i] = sign * rise * tread;
                }
            }
        }
        TerrainFamily::DiscreteObstacles => {
            let bound = difficulty(cfg, family, level);
            for _ in 0..cfg.num_obstacles {
                let ox = rng.gen_range(0.0..field.size_x());
                let oy = rng.gen_range(0.0..field.size_y());
                let w = rng.gen_range(cfg.obstacle_size_min..=cfg.obstacle_size_max);
                let d = rng.gen_range(cfg.obstacle_size_min..=cfg.obstacle_size_max);
                let h = rng.gen_range(-bound..=bound);
                let i_lo = ((ox - w / 2.0) / res).ceil().max(0.0) as usize;
                let i_hi = ((ox + w / 2.0) / res).floor().min((nx - 1) as f64) as usize;
                let j_lo = ((oy - d / 2.0) / res).ceil().max(0.0) as usize;
                let j_hi = ((oy + d / 2.0) / res).floor().min((ny - 1) as f64) as usize;
                for j in j_lo..=j_hi {
                    for i in i_lo..=i_hi {
                        if beyond(i as f64 * res) <= 0.0 {
                            continue;
                        }
                        field.heights[j * nx + i] = h;
                    }
                }
            }
        }
    }
    Ok(field)
}

/// Family assignment for the 20 terrain instances of one level: 4 rough,
/// 4 obstacle, 3 up-slope, 3 down-slope, 3 stair-ascent, 3 stair-descent
/// blocks in a fixed interleaved order. The layout is identical for every
/// level; the argument exists because callers iterate levels.
pub fn terrain_level_layout(_level: u32) -> [TerrainFamily; 20] {
    use TerrainFamily::*;
    [
        RoughSlope,
        DiscreteObstacles,
        SlopeUp,
        SlopeDown,
        StairsUp,
        StairsDown,
        RoughSlope,
        DiscreteObstacles,
        SlopeUp,
        SlopeDown,
        StairsUp,
        StairsDown,
        RoughSlope,
        DiscreteObstacles,
        SlopeUp,
        SlopeDown,
        StairsUp,
        StairsDown,
        RoughSlope,
        DiscreteObstacles,
    ]
}

/// Scan grid for the privileged height map: `nx x ny` points over a
/// `range_x x range_y` rectangle centered on the base.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScanGrid {
    pub nx: usize,
    pub ny: usize,
    pub range_x: f64,
    pub range_y: f64,
}

impl ScanGrid {
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Default for ScanGrid {
    /// 11x5 grid over a 1.6 m x 1.0 m rectangle: 55 scan points.
    fn default() -> Self {
        Self {
            nx: 11,
            ny: 5,
            range_x: 1.6,
            range_y: 1.0,
        }
    }
}

/// Height-map scan: for each grid point (rotated by `base_yaw` around the
/// base, row-major over y then x), the base height above the terrain there:
/// `base_z - terrain(x, y)`. On flat ground every entry equals the base
/// height.
pub fn scan_height_map(
    field: &Heightfield,
    base_x: f64,
    base_y: f64,
    base_z: f64,
    base_yaw: f64,
    grid: &ScanGrid,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(grid.len());
    let (sin_yaw, cos_yaw) = base_yaw.sin_cos();
    for j in 0..grid.ny {
        let ly = if grid.ny > 1 {
            -grid.range_y / 2.0 + grid.range_y * j as f64 / (grid.ny - 1) as f64
        } else {
            0.0
        };
        for i in 0..grid.nx {
            let lx = if grid.nx > 1 {
                -grid.range_x / 2.0 + grid.range_x * i as f64 / (grid.nx - 1) as f64
            } else {
                0.0
            };
            let wx = base_x + cos_yaw * lx - sin_yaw * ly;
            let wy = base_y + sin_yaw * lx + cos_yaw * ly;
            out.push(base_z - field.height_at(wx, wy));
        }
    }
    out
}

/// Per-environment curriculum bookkeeping.
#[derive(Debug, Clone)]
pub struct CurriculumState {
    pub family: TerrainFamily,
    pub level: u32,
    /// Forward distance covered this episode, meters.
    pub distance_traveled: f64,
    /// Distance the command would have covered over the episode, meters.
    pub commanded_distance: f64,
}

/// Promotion/demotion thresholds as fractions of commanded distance.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct CurriculumConfig {
    pub promote_fraction: f64,
    pub demote_fraction: f64,
    pub max_level: u32,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            promote_fraction: 0.8,
            demote_fraction: 0.4,
            max_level: 20,
        }
    }
}

/// Level for the next episode: promote one level when the walker covered at
/// least `promote_fraction` of the commanded distance, demote one when under
/// `demote_fraction`, clamp at 0, and reassign a uniformly random level to
/// walkers that graduate past the top (keeps the population spread instead of
/// saturating). A non-positive commanded distance leaves the level alone —
/// a stand-still command says nothing about terrain competence.
pub fn curriculum_update(state: &CurriculumState, cfg: &CurriculumConfig, rng: &mut ChaCha8Rng) -> u32 {
    if state.commanded_distance <= 0.0 {
        return state.level;
    }
    let ratio = state.distance_traveled / state.commanded_distance;
    if ratio >= cfg.promote_fraction {
        if state.level >= cfg.max_level {
            rng.gen_range(0..=cfg.max_level)
        } else {
            state.level + 1
        }
    } else if ratio < cfg.demote_fraction {
        state.level.saturating_sub(1)
    } else {
        state.level
    }
}
