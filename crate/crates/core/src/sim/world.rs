use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::geometry::Pose2;

/// Cluttered rectangular room. The room spans `[0, room_width] x [0, room_length]`
/// and obstacles are discs on a jittered grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub room_width: f64,
    pub room_length: f64,
    pub obstacle_grid_rows: usize,
    pub obstacle_grid_cols: usize,
    pub obstacle_radius_range: [f64; 2],
    pub placement_jitter: f64,
    pub robot_radius: f64,
    pub goal_radius: f64,
    /// Goal point; defaults to the middle of the far wall, one goal radius in.
    pub goal: Option<[f64; 2]>,
    /// Number of designated start cells, spread evenly along `start_y`.
    pub start_count: usize,
    pub start_y: f64,
    /// Extra free space kept around start cells and the goal region.
    pub keep_clear: f64,
    pub rng_seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            room_width: 8.0,
            room_length: 12.0,
            obstacle_grid_rows: 4,
            obstacle_grid_cols: 4,
            obstacle_radius_range: [0.25, 0.45],
            placement_jitter: 0.4,
            robot_radius: 0.2,
            goal_radius: 1.0,
            goal: None,
            start_count: 5,
            start_y: 1.0,
            keep_clear: 0.5,
            rng_seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn goal_point(&self) -> [f64; 2] {
        self.goal.unwrap_or([self.room_width / 2.0, self.room_length - self.goal_radius])
    }

    pub fn start_cells(&self) -> Vec<Pose2> {
        let n = self.start_count;
        (0..n)
            .map(|i| {
                let x = self.room_width * (i as f64 + 1.0) / (n as f64 + 1.0);
                Pose2 { x, y: self.start_y, yaw: 0.0 }
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidWorld(m));
        if !(self.room_width > 0.0 && self.room_length > 0.0) {
            return bad(format!("room must have positive size, got {}x{}", self.room_width, self.room_length));
        }
        let [rmin, rmax] = self.obstacle_radius_range;
        if !(rmin > 0.0 && rmax >= rmin) {
            return bad(format!("obstacle_radius_range must satisfy 0 < min <= max, got {rmin}..{rmax}"));
        }
        if !(self.robot_radius > 0.0 && self.goal_radius > 0.0 && self.placement_jitter >= 0.0) {
            return bad("robot_radius and goal_radius must be positive, placement_jitter non-negative".into());
        }
        let [gx, gy] = self.goal_point();
        if !(gx > 0.0 && gx < self.room_width && gy > 0.0 && gy < self.room_length) {
            return bad(format!("goal ({gx}, {gy}) lies outside the room"));
        }
        for s in self.start_cells() {
            if s.x - self.robot_radius <= 0.0
                || s.x + self.robot_radius >= self.room_width
                || s.y - self.robot_radius <= 0.0
                || s.y + self.robot_radius >= self.room_length
            {
                return bad(format!("start cell ({}, {}) touches a wall", s.x, s.y));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disc {
    pub x: f64,
    pub y: f64,
    pub r: f64,
}

/// A generated room: configuration plus the sampled obstacle layout.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub config: WorldConfig,
    pub obstacles: Vec<Disc>,
}

impl World {
    pub fn generate(config: &WorldConfig) -> Result<Self, SimError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        let (rows, cols) = (config.obstacle_grid_rows, config.obstacle_grid_cols);
        let cell_w = config.room_width / cols.max(1) as f64;
        let cell_l = config.room_length / rows.max(1) as f64;
        let [rmin, rmax] = config.obstacle_radius_range;
        let starts = config.start_cells();
        let [gx, gy] = config.goal_point();
        let mut obstacles = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                // Always draw all three numbers so the layout of one cell never
                // depends on whether an earlier cell was dropped.
                let jx = rng.gen_range(-1.0..=1.0) * config.placement_jitter;
                let jy = rng.gen_range(-1.0..=1.0) * config.placement_jitter;
                let r = if rmax > rmin { rng.gen_range(rmin..=rmax) } else { rmin };
                let d = Disc { x: (j as f64 + 0.5) * cell_w + jx, y: (i as f64 + 0.5) * cell_l + jy, r };
                let blocks_start = starts.iter().any(|s| (d.x - s.x).hypot(d.y - s.y) < d.r + config.robot_radius + config.keep_clear);
                let blocks_goal = (d.x - gx).hypot(d.y - gy) < d.r + config.goal_radius + config.keep_clear;
                if !blocks_start && !blocks_goal {
                    obstacles.push(d);
                }
            }
        }
        Ok(Self { config: config.clone(), obstacles })
    }

    pub fn empty(config: &WorldConfig) -> Result<Self, SimError> {
        config.validate()?;
        Ok(Self { config: config.clone(), obstacles: Vec::new() })
    }

    pub fn goal(&self) -> [f64; 2] {
        self.config.goal_point()
    }

    /// Signed gap between the robot disc at `(x, y)` and the nearest obstacle
    /// or wall. Negative means the discs overlap.
    pub fn clearance(&self, x: f64, y: f64) -> f64 {
        let c = &self.config;
        let mut best = x.min(c.room_width - x).min(y).min(c.room_length - y);
        for o in &self.obstacles {
            best = best.min((x - o.x).hypot(y - o.y) - o.r);
        }
        best - c.robot_radius
    }

    pub fn in_goal(&self, pose: &Pose2) -> bool {
        let [gx, gy] = self.goal();
        pose.distance_to(gx, gy) < self.config.goal_radius
    }

    /// Uniformly samples a pose whose clearance is at least `margin`.
    pub fn sample_free_pose<R: Rng>(&self, rng: &mut R, margin: f64) -> Pose2 {
        let c = &self.config;
        for _ in 0..10_000 {
            let x = rng.gen_range(0.0..c.room_width);
            let y = rng.gen_range(0.0..c.room_length);
            let yaw = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            if self.clearance(x, y) >= margin {
                return Pose2::new(x, y, yaw).expect("finite sample");
            }
        }
        // Start cells are always kept clear.
        c.start_cells()[0]
    }
}

/// True iff the robot disc at `pose` strictly overlaps an obstacle or leaves the room.
/// Touching (zero gap) is not a collision.
pub fn check_collision(pose: &Pose2, world: &World) -> bool {
    world.clearance(pose.x, pose.y) < 0.0
}
