//! Seedable 2-D cluttered-room simulator: single-integrator car with four
//! dynamics variants, disc obstacles, goal logic and a raycast depth camera.

mod episode;
mod render;
mod world;

pub use episode::{run_episode, FnPolicy, Policy, PolicyContext};
pub use render::{render_frame, render_observation, Observation, RenderConfig};
pub use world::{check_collision, Disc, World, WorldConfig};

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::geometry::{Action, ActionBounds, Pose2, RobotState};

/// Frames kept in [`SimState::pose_history`]; caps `RenderConfig::frames`.
pub const MAX_FRAMES: usize = 8;

/// Modification of the single-integrator car.
///
/// `RightTurnOnly` admits only positive yaw rates. With the body-frame forward
/// axis at +y a positive rate turns counter-clockwise in the world frame. The
/// name is historical; only the bound matters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum DynamicsVariant {
    Normal,
    LimitedSteering,
    RightTurnOnly,
    /// The yaw update uses the action commanded `k` steps earlier.
    Lag(usize),
}

pub const DEFAULT_LAG: usize = 3;

const VALID_VARIANTS: &str = "normal, limited-steering, right-turn-only, lag, lag:<k>";

impl DynamicsVariant {
    pub const ALL_DEFAULT: [DynamicsVariant; 4] =
        [DynamicsVariant::Normal, DynamicsVariant::LimitedSteering, DynamicsVariant::RightTurnOnly, DynamicsVariant::Lag(DEFAULT_LAG)];

    pub fn bounds(&self) -> ActionBounds {
        match self {
            DynamicsVariant::Normal | DynamicsVariant::Lag(_) => ActionBounds::scalar(-2.0 * PI / 3.0, 2.0 * PI / 3.0),
            DynamicsVariant::LimitedSteering => ActionBounds::scalar(-PI / 3.0, PI / 3.0),
            DynamicsVariant::RightTurnOnly => ActionBounds::scalar(0.0, 2.0 * PI / 3.0),
        }
    }

    pub fn lag(&self) -> usize {
        match self {
            DynamicsVariant::Lag(k) => *k,
            _ => 0,
        }
    }

    /// Length of the [`RobotState`] this variant exposes.
    pub fn state_dim(&self) -> usize {
        self.lag()
    }

    pub const fn action_dim(&self) -> usize {
        1
    }
}

impl fmt::Display for DynamicsVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DynamicsVariant::Normal => f.write_str("normal"),
            DynamicsVariant::LimitedSteering => f.write_str("limited-steering"),
            DynamicsVariant::RightTurnOnly => f.write_str("right-turn-only"),
            DynamicsVariant::Lag(k) => write!(f, "lag:{k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownVariant(pub String);

impl fmt::Display for UnknownVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown dynamics variant `{}`; valid variants: {VALID_VARIANTS}", self.0)
    }
}

impl std::error::Error for UnknownVariant {}

impl FromStr for DynamicsVariant {
    type Err = UnknownVariant;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        match norm.as_str() {
            "normal" => Ok(DynamicsVariant::Normal),
            "limited-steering" => Ok(DynamicsVariant::LimitedSteering),
            "right-turn-only" => Ok(DynamicsVariant::RightTurnOnly),
            "lag" => Ok(DynamicsVariant::Lag(DEFAULT_LAG)),
            other => other
                .strip_prefix("lag:")
                .and_then(|k| k.parse::<usize>().ok())
                .filter(|&k| k >= 1)
                .map(DynamicsVariant::Lag)
                .ok_or_else(|| UnknownVariant(s.to_string())),
        }
    }
}

impl TryFrom<String> for DynamicsVariant {
    type Error = UnknownVariant;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<DynamicsVariant> for String {
    fn from(v: DynamicsVariant) -> String {
        v.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Seconds per step.
    pub dt: f64,
    /// Constant forward speed, m/s.
    pub speed: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { dt: 0.25, speed: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub pose: Pose2,
    /// Last `k` commanded (clamped) actions for `Lag(k)`, oldest first,
    /// zero-padded at episode start. Empty for the other variants.
    pub action_history: VecDeque<f64>,
    /// Poses before the current one, oldest first, at most `MAX_FRAMES - 1`.
    pub pose_history: VecDeque<Pose2>,
    pub collided: bool,
    pub steps_elapsed: usize,
    /// Number of steps whose requested action had to be clamped.
    pub clamped_steps: usize,
}

impl SimState {
    pub fn new(pose: Pose2, variant: DynamicsVariant) -> Self {
        Self {
            pose,
            action_history: std::iter::repeat_n(0.0, variant.lag()).collect(),
            pose_history: VecDeque::new(),
            collided: false,
            steps_elapsed: 0,
            clamped_steps: 0,
        }
    }

    pub fn robot_state(&self) -> RobotState {
        RobotState(self.action_history.iter().copied().collect())
    }

    /// Pose `back` steps ago, saturating at the episode start.
    pub fn pose_back(&self, back: usize) -> Pose2 {
        if back == 0 {
            return self.pose;
        }
        let n = self.pose_history.len();
        if n == 0 {
            self.pose
        } else {
            self.pose_history[n.saturating_sub(back)]
        }
    }
}

/// Kinematic update without collision checking. Requested actions outside the
/// variant's bounds are clamped and counted in `clamped_steps`.
pub fn step_dynamics(state: &SimState, a: &Action, variant: DynamicsVariant, dt: f64, speed: f64) -> Result<SimState, SimError> {
    if state.collided {
        return Err(SimError::SteppedAfterCollision { step: state.steps_elapsed });
    }
    let req = a.angular_velocity;
    if !req.is_finite() {
        return Err(SimError::NonFiniteAction { step: state.steps_elapsed, value: req });
    }
    let cmd = variant.bounds().clamp(0, req);
    let mut next = state.clone();
    if cmd != req {
        next.clamped_steps += 1;
    }
    let a_eff = if variant.lag() > 0 {
        next.action_history.push_back(cmd);
        next.action_history.pop_front().expect("lag history holds k entries")
    } else {
        cmd
    };
    let theta = state.pose.yaw + dt * a_eff;
    let x = state.pose.x + dt * speed * (-theta.sin());
    let y = state.pose.y + dt * speed * theta.cos();
    next.pose = Pose2 { x, y, yaw: crate::geometry::wrap(theta) };
    next.pose_history.push_back(state.pose);
    if next.pose_history.len() > MAX_FRAMES - 1 {
        next.pose_history.pop_front();
    }
    next.steps_elapsed += 1;
    Ok(next)
}

/// −1 once collided, 0 otherwise (goal entry is not rewarded).
pub fn episode_reward(state: &SimState) -> f64 {
    if state.collided {
        -1.0
    } else {
        0.0
    }
}

/// One world with one dynamics variant.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub world: World,
    pub variant: DynamicsVariant,
    pub config: SimConfig,
    pub render: RenderConfig,
}

impl Simulator {
    pub fn new(world: World, variant: DynamicsVariant, config: SimConfig, render: RenderConfig) -> Self {
        Self { world, variant, config, render }
    }

    pub fn reset(&self, start: Pose2) -> SimState {
        let mut s = SimState::new(start, self.variant);
        s.collided = check_collision(&start, &self.world);
        s
    }

    pub fn step(&self, state: &SimState, a: &Action) -> Result<SimState, SimError> {
        let mut next = step_dynamics(state, a, self.variant, self.config.dt, self.config.speed)?;
        next.collided = check_collision(&next.pose, &self.world);
        Ok(next)
    }

    pub fn observe(&self, state: &SimState) -> Observation {
        render_observation(state, &self.world, &self.render)
    }
}
