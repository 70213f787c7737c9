use serde::{Deserialize, Serialize};

use super::world::World;
use super::{SimState, MAX_FRAMES};
use crate::geometry::Pose2;

/// Raycast depth camera. Each column is one ray; an object at distance `d`
/// fills the rows between the floor and the object top as seen from
/// `camera_height`, with value `1 - d / max_range`. Everything else is 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub frames: usize,
    pub rows: usize,
    pub cols: usize,
    /// Horizontal field of view, radians.
    pub fov: f64,
    /// Vertical field of view, radians.
    pub vertical_fov: f64,
    pub max_range: f64,
    pub camera_height: f64,
    /// Height of walls and obstacles.
    pub object_height: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            frames: 2,
            rows: 16,
            cols: 32,
            fov: 150f64.to_radians(),
            vertical_fov: 60f64.to_radians(),
            max_range: 4.0,
            camera_height: 0.5,
            object_height: 1.0,
        }
    }
}

impl RenderConfig {
    pub fn frame_len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.frames == 0 || self.frames > MAX_FRAMES {
            return Err(format!("render.frames must be in 1..={MAX_FRAMES}, got {}", self.frames));
        }
        if self.rows == 0 || self.cols == 0 {
            return Err(format!("render size must be positive, got {}x{}", self.rows, self.cols));
        }
        let pos = [("fov", self.fov), ("vertical_fov", self.vertical_fov), ("max_range", self.max_range), ("camera_height", self.camera_height)];
        for (n, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("render.{n} must be positive, got {v}"));
            }
        }
        if self.fov >= 2.0 * std::f64::consts::PI || self.vertical_fov >= std::f64::consts::PI {
            return Err("render field of view too wide".into());
        }
        Ok(())
    }

    /// Ray angle of column `j` relative to the forward axis, counter-clockwise
    /// positive, so column 0 looks furthest left.
    pub fn column_angle(&self, j: usize) -> f64 {
        self.fov / 2.0 - (j as f64 + 0.5) * self.fov / self.cols as f64
    }

    fn row_elevation(&self, i: usize) -> f64 {
        self.vertical_fov / 2.0 - (i as f64 + 0.5) * self.vertical_fov / self.rows as f64
    }
}

/// `frames x rows x cols` image, oldest frame first, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub frames: usize,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Observation {
    pub fn zeros(frames: usize, rows: usize, cols: usize) -> Self {
        Self { frames, rows, cols, data: vec![0.0; frames * rows * cols] }
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.frames, self.rows, self.cols]
    }

    pub fn frame(&self, k: usize) -> &[f64] {
        let n = self.rows * self.cols;
        &self.data[k * n..(k + 1) * n]
    }
}

/// Distance along the unit ray `(ux, uy)` from `(px, py)` to the first wall
/// or obstacle surface. The origin is assumed inside the room.
pub(crate) fn cast_ray(world: &World, px: f64, py: f64, ux: f64, uy: f64) -> f64 {
    let c = &world.config;
    let mut best = f64::INFINITY;
    if ux > 0.0 {
        best = best.min((c.room_width - px) / ux);
    } else if ux < 0.0 {
        best = best.min(-px / ux);
    }
    if uy > 0.0 {
        best = best.min((c.room_length - py) / uy);
    } else if uy < 0.0 {
        best = best.min(-py / uy);
    }
    for o in &world.obstacles {
        let (mx, my) = (px - o.x, py - o.y);
        let b = mx * ux + my * uy;
        let cc = mx * mx + my * my - o.r * o.r;
        if cc <= 0.0 {
            return 0.0;
        }
        let disc = b * b - cc;
        if disc < 0.0 {
            continue;
        }
        let t = -b - disc.sqrt();
        if t >= 0.0 {
            best = best.min(t);
        }
    }
    best.max(0.0)
}

/// Renders one `rows x cols` frame from `pose`.
pub fn render_frame(pose: &Pose2, world: &World, cfg: &RenderConfig) -> Vec<f64> {
    let mut out = vec![0.0; cfg.frame_len()];
    for j in 0..cfg.cols {
        let heading = pose.yaw + cfg.column_angle(j);
        let (ux, uy) = (-heading.sin(), heading.cos());
        let d = cast_ray(world, pose.x, pose.y, ux, uy);
        if d >= cfg.max_range {
            continue;
        }
        let value = 1.0 - d / cfg.max_range;
        let low = (-cfg.camera_height).atan2(d);
        let high = (cfg.object_height - cfg.camera_height).atan2(d);
        for i in 0..cfg.rows {
            let e = cfg.row_elevation(i);
            if e >= low && e <= high {
                out[i * cfg.cols + j] = value;
            }
        }
    }
    out
}

/// Stacks `cfg.frames` frames ending at the current pose. Before the episode
/// start the earliest pose is repeated.
pub fn render_observation(state: &SimState, world: &World, cfg: &RenderConfig) -> Observation {
    let mut obs = Observation::zeros(cfg.frames, cfg.rows, cfg.cols);
    let n = cfg.frame_len();
    for k in 0..cfg.frames {
        let pose = state.pose_back(cfg.frames - 1 - k);
        obs.data[k * n..(k + 1) * n].copy_from_slice(&render_frame(&pose, world, cfg));
    }
    obs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{DynamicsVariant, World, WorldConfig};

    fn room(w: f64, l: f64) -> World {
        let cfg = WorldConfig { room_width: w, room_length: l, start_count: 1, start_y: 1.0, ..Default::default() };
        World::empty(&cfg).unwrap()
    }

    #[test]
    fn nothing_in_range_gives_zero_image() {
        let w = room(100.0, 100.0);
        let obs = render_observation(&SimState::new(Pose2::new(50.0, 50.0, 0.3).unwrap(), DynamicsVariant::Normal), &w, &RenderConfig::default());
        assert!(obs.data.iter().all(|&v| v == 0.0));
        assert_eq!(obs.shape(), [2, 16, 32]);
    }

    #[test]
    fn wall_ahead_at_half_range_matches_analytic_oracle() {
        // Far wall 2 m ahead, side walls far away.
        let w = room(200.0, 12.0);
        let cfg = RenderConfig::default();
        let pose = Pose2::new(100.0, 10.0, 0.0).unwrap();
        let img = render_frame(&pose, &w, &cfg);
        let mid_row = cfg.rows / 2;
        for j in [cfg.cols / 2 - 1, cfg.cols / 2] {
            let alpha = cfg.column_angle(j);
            // Distance to the plane y = 12 along a ray tilted by alpha.
            let expected = 1.0 - (2.0 / alpha.cos()) / cfg.max_range;
            assert!((img[mid_row * cfg.cols + j] - expected).abs() < 1e-12);
            assert!((img[mid_row * cfg.cols + j] - 0.5).abs() < 2e-3);
        }
    }

    #[test]
    fn vertical_band_shrinks_with_distance() {
        let cfg = RenderConfig::default();
        let lit = |gap: f64| {
            let w = room(200.0, 12.0);
            let img = render_frame(&Pose2::new(100.0, 12.0 - gap, 0.0).unwrap(), &w, &cfg);
            (0..cfg.rows).filter(|i| img[i * cfg.cols + cfg.cols / 2] > 0.0).count()
        };
        assert!(lit(0.6) > lit(1.5));
        assert!(lit(1.5) > lit(3.5));
        assert!(lit(3.5) > 0);
    }

    #[test]
    fn obstacle_disc_hit_distance() {
        let mut w = room(100.0, 100.0);
        w.obstacles.push(crate::sim::Disc { x: 50.0, y: 53.0, r: 0.5 });
        let d = cast_ray(&w, 50.0, 50.0, 0.0, 1.0);
        assert!((d - 2.5).abs() < 1e-12);
        // Tangent ray grazes at distance 3.
        let d = cast_ray(&w, 49.5, 50.0, 0.0, 1.0);
        assert!((d - 3.0).abs() < 1e-9);
        assert!(cast_ray(&w, 49.0, 50.0, 0.0, 1.0) > 40.0);
    }

    #[test]
    fn rendering_is_deterministic_and_bounded() {
        let w = World::generate(&WorldConfig { rng_seed: 3, ..Default::default() }).unwrap();
        let cfg = RenderConfig::default();
        let s = SimState::new(Pose2::new(4.0, 1.0, 0.1).unwrap(), DynamicsVariant::Normal);
        let a = render_observation(&s, &w, &cfg);
        let b = render_observation(&s, &w, &cfg);
        assert_eq!(a.data.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.data.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        assert!(a.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
        // At the episode start both frames show the same pose.
        assert_eq!(a.frame(0), a.frame(1));
    }
}
