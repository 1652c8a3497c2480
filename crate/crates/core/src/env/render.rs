use super::route::Route;
use super::world::WorldState;
use crate::numerics::derive_seed;
use serde::{Deserialize, Serialize};

pub const RASTER_H: usize = 32;
pub const RASTER_W: usize = 32;
pub const RASTER_C: usize = 3;

/// Ego-centred, ego-aligned raster, channel-major: lane, route ahead,
/// obstacles. Row 0 is the far edge; column 0 is the left edge.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub raster: Vec<f64>,
}

impl Observation {
    pub const LEN: usize = RASTER_H * RASTER_W * RASTER_C;

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.raster[c * RASTER_H * RASTER_W..(c + 1) * RASTER_H * RASTER_W]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    /// Metres per cell.
    pub resolution: f64,
    /// Metres of road visible behind the ego position.
    pub behind: f64,
    pub road_half_width: f64,
    /// Length of the route-ahead stripe.
    pub ahead: f64,
    /// Seconds of obstacle motion drawn as a dim trail behind each obstacle,
    /// so that a single frame shows which way it is moving.
    pub trail: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            resolution: 0.75,
            behind: 3.0,
            road_half_width: 2.5,
            ahead: 40.0,
            trail: 1.0,
        }
    }
}

/// Constant-velocity disc.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obstacle {
    pub start: [f64; 2],
    pub velocity: [f64; 2],
    pub radius: f64,
}

impl Obstacle {
    pub fn position(&self, slot: u64, tau: f64) -> [f64; 2] {
        let t = slot as f64 * tau;
        [self.start[0] + self.velocity[0] * t, self.start[1] + self.velocity[1] * t]
    }
}

/// Image-degradation stand-in for weather: a contrast factor and a
/// per-pixel multiplicative speckle, both applied to lit cells only.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Weather {
    pub contrast: f64,
    pub speckle: f64,
    pub seed: u64,
}

impl Weather {
    pub fn clear() -> Self {
        Weather {
            contrast: 1.0,
            speckle: 0.0,
            seed: 0,
        }
    }

    /// Level in `[0, 1)`: 0 is clear, larger values dim and speckle.
    pub fn from_level(level: f64, seed: u64) -> Self {
        Weather {
            contrast: 1.0 - 0.5 * level,
            speckle: level,
            seed,
        }
    }
}

fn seg_dist(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p[0] - a[0] - t * dx).hypot(p[1] - a[1] - t * dy)
}

fn cell_centre(r: usize, c: usize, cfg: &RenderConfig) -> [f64; 2] {
    let front = RASTER_H as f64 * cfg.resolution - cfg.behind;
    [
        front - (r as f64 + 0.5) * cfg.resolution,
        (RASTER_W as f64 / 2.0 - (c as f64 + 0.5)) * cfg.resolution,
    ]
}

fn in_view(p: [f64; 2], margin: f64, cfg: &RenderConfig) -> bool {
    let front = RASTER_H as f64 * cfg.resolution - cfg.behind;
    let half = RASTER_W as f64 / 2.0 * cfg.resolution;
    p[0] > -cfg.behind - margin && p[0] < front + margin && p[1].abs() < half + margin
}

/// Distance field of a polyline (already in ego frame) over the grid.
fn stamp_polyline(pts: &[[f64; 2]], reach: f64, cfg: &RenderConfig, out: &mut [f64], value: impl Fn(f64) -> f64) {
    let segs: Vec<([f64; 2], [f64; 2])> = pts
        .windows(2)
        .filter(|w| in_view(w[0], reach + 1.0, cfg) || in_view(w[1], reach + 1.0, cfg))
        .map(|w| (w[0], w[1]))
        .collect();
    if segs.is_empty() {
        return;
    }
    for r in 0..RASTER_H {
        for c in 0..RASTER_W {
            let p = cell_centre(r, c, cfg);
            let mut d = f64::INFINITY;
            for (a, b) in &segs {
                d = d.min(seg_dist(p, *a, *b));
            }
            let v = value(d);
            let o = &mut out[r * RASTER_W + c];
            *o = o.max(v);
        }
    }
}

fn speckle_noise(seed: u64, slot: u64, idx: usize) -> f64 {
    let h = derive_seed(seed, &[slot, idx as u64]);
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Deterministic rasterisation of the scene around `state`. `progress` is
/// the ego's arc-length position on the route; the route-ahead channel
/// starts there.
pub fn render(
    state: &WorldState,
    route: &Route,
    progress: f64,
    obstacles: &[Obstacle],
    tau: f64,
    weather: &Weather,
    cfg: &RenderConfig,
) -> Observation {
    let plane = RASTER_H * RASTER_W;
    let mut raster = vec![0.0; Observation::LEN];
    let res = cfg.resolution;

    let ego_pts: Vec<[f64; 2]> = route.points.iter().map(|p| state.to_ego(*p)).collect();
    let w = cfg.road_half_width;
    stamp_polyline(&ego_pts, w, cfg, &mut raster[..plane], |d| ((w + 0.5 * res - d) / res).clamp(0.0, 1.0));

    let ahead = route.point_range(progress, progress + cfg.ahead);
    stamp_polyline(&ego_pts[ahead], res, cfg, &mut raster[plane..2 * plane], |d| {
        (1.0 - d / res).clamp(0.0, 1.0)
    });

    let obs_plane = &mut raster[2 * plane..];
    for o in obstacles {
        let p = state.to_ego(o.position(state.slot, tau));
        if !in_view(p, o.radius + res, cfg) {
            continue;
        }
        let v_ego = state.to_ego_vector(o.velocity);
        let tail = [p[0] - v_ego[0] * cfg.trail, p[1] - v_ego[1] * cfg.trail];
        let moving = o.velocity[0] != 0.0 || o.velocity[1] != 0.0;
        for r in 0..RASTER_H {
            for c in 0..RASTER_W {
                let q = cell_centre(r, c, cfg);
                let d = (q[0] - p[0]).hypot(q[1] - p[1]);
                let mut v = ((o.radius + 0.5 * res - d) / res).clamp(0.0, 1.0);
                if moving {
                    let dt = seg_dist(q, tail, p);
                    v = v.max(0.5 * ((0.5 * o.radius + 0.5 * res - dt) / res).clamp(0.0, 1.0));
                }
                let cell = &mut obs_plane[r * RASTER_W + c];
                *cell = cell.max(v);
            }
        }
    }

    if weather.contrast != 1.0 || weather.speckle != 0.0 {
        for (i, v) in raster.iter_mut().enumerate() {
            if *v > 0.0 {
                let u = speckle_noise(weather.seed, state.slot, i);
                *v = (*v * weather.contrast * (1.0 - weather.speckle * u)).clamp(0.0, 1.0);
            }
        }
    }
    Observation { raster }
}
