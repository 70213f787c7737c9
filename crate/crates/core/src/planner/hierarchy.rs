use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{cem, CemConfig, Objective, PathPrior, PlanInput, PlanResult, PoseDynamics, RewardFunction, RewardPredictor, Solution};
use crate::error::PlanError;
use crate::geometry::{ActionBounds, ActionSeq, PoseDelta, PoseDeltaSeq, RewardSeq, RobotState};
use crate::sim::SimConfig;

/// Memoryless unicycle at constant speed, controlled by yaw rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnicyclePrior {
    pub dt: f64,
    pub speed: f64,
}

impl From<SimConfig> for UnicyclePrior {
    fn from(c: SimConfig) -> Self {
        Self { dt: c.dt, speed: c.speed }
    }
}

impl PathPrior for UnicyclePrior {
    fn rollout(&self, controls: &[f64], horizon: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(controls.len() * PoseDelta::DIM);
        for seq in controls.chunks_exact(horizon) {
            let (mut x, mut y, mut th) = (0.0, 0.0, 0.0);
            for &u in seq {
                th += self.dt * u;
                x -= self.dt * self.speed * th.sin();
                y += self.dt * self.speed * th.cos();
                out.extend_from_slice(&[x, y, th]);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HierarchyConfig {
    /// Path search over the kinematic prior's controls.
    pub path: CemConfig,
    /// Action search that tracks the chosen path.
    pub tracking: CemConfig,
}

impl Default for HierarchyConfig {
    /// Tracking is a local fit seeded from the path controls; anchors only
    /// aid the reward search.
    fn default() -> Self {
        Self { path: CemConfig::default(), tracking: CemConfig { anchors: 0, ..CemConfig::default() } }
    }
}

impl HierarchyConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        self.path.validate()?;
        self.tracking.validate()
    }
}

struct PathObjective<'a> {
    perception: &'a dyn RewardPredictor,
    prior: &'a dyn PathPrior,
    input: PlanInput<'a>,
    rf: RewardFunction,
    horizon: usize,
}

impl Objective for PathObjective<'_> {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn score(&self, controls: &[f64]) -> Result<Vec<f64>, PlanError> {
        let d = self.prior.rollout(controls, self.horizon);
        let r = self.perception.predict_rewards(self.input.obs, &d)?;
        let h = self.horizon;
        Ok(r.chunks_exact(h).zip(d.chunks_exact(h * PoseDelta::DIM)).map(|(r, d)| self.rf.value(r, d, &self.input.goal)).collect())
    }
}

struct TrackingObjective<'a> {
    dynamics: &'a dyn PoseDynamics,
    state: &'a RobotState,
    target: Vec<f64>,
}

impl Objective for TrackingObjective<'_> {
    fn horizon(&self) -> usize {
        self.dynamics.horizon()
    }

    fn action_dim(&self) -> usize {
        self.dynamics.action_dim()
    }

    fn score(&self, actions: &[f64]) -> Result<Vec<f64>, PlanError> {
        let d = self.dynamics.predict_deltas(self.state, actions)?;
        Ok(d.chunks_exact(self.target.len()).map(|c| -c.iter().zip(&self.target).map(|(a, b)| (a - b).powi(2)).sum::<f64>()).collect())
    }
}

/// Step 2 alone: actions within `bounds` whose predicted deltas best match
/// `target`, by `Σ_h ‖δp̂_h − δp*_h‖²`. The objective is the negated residual.
pub fn track_targets<R: Rng>(
    dynamics: &dyn PoseDynamics,
    state: &RobotState,
    target: &PoseDeltaSeq,
    bounds: &ActionBounds,
    cfg: &CemConfig,
    rng: &mut R,
    init: Option<&ActionSeq>,
) -> Result<Solution, PlanError> {
    if target.len() != dynamics.horizon() {
        return Err(PlanError::HorizonMismatch { expected: dynamics.horizon(), found: target.len() });
    }
    let obj = TrackingObjective { dynamics, state, target: target.flatten() };
    cem(&obj, bounds, cfg, rng, init)
}

/// Two-step baseline: pick a path with the perception model over the
/// kinematic prior's reachable set, then track it with the dynamics model.
///
/// The returned objective is the task reward of the tracked actions under the
/// composed model, for comparison with integrated planning.
#[allow(clippy::too_many_arguments)]
pub fn plan_hierarchy<R: Rng>(
    perception: &dyn RewardPredictor,
    dynamics: &dyn PoseDynamics,
    prior: &dyn PathPrior,
    input: PlanInput<'_>,
    rf: &RewardFunction,
    kin_bounds: &ActionBounds,
    bounds: &ActionBounds,
    cfg: &HierarchyConfig,
    rng: &mut R,
    warm: Option<&ActionSeq>,
) -> Result<PlanResult, PlanError> {
    rf.validate()?;
    rf.check_goal(&input.goal)?;
    cfg.validate()?;
    let h = perception.horizon();
    if dynamics.horizon() != h {
        return Err(PlanError::HorizonMismatch { expected: h, found: dynamics.horizon() });
    }
    if kin_bounds.dim() != 1 {
        return Err(PlanError::InvalidConfig(format!("kinematic prior takes 1 control, bounds have {}", kin_bounds.dim())));
    }
    let warm_path = warm.filter(|w| w.dim() == 1);
    let path_obj = PathObjective { perception, prior, input, rf: *rf, horizon: h };
    let path = cem(&path_obj, kin_bounds, &cfg.path, rng, warm_path)?;
    let target = PoseDeltaSeq::from_flat(&prior.rollout(path.actions.as_flat(), h));

    let init = (bounds.dim() == 1).then(|| bounds.clamp_seq(&path.actions));
    let track = track_targets(dynamics, input.state, &target, bounds, &cfg.tracking, rng, init.as_ref())?;

    let d = dynamics.predict_deltas(input.state, track.actions.as_flat())?;
    let r = perception.predict_rewards(input.obs, &d)?;
    let objective = rf.value(&r, &d, &input.goal);
    Ok(PlanResult {
        actions: track.actions,
        rewards: RewardSeq(r),
        deltas: PoseDeltaSeq::from_flat(&d),
        objective,
        history: track.history,
        candidates: track.candidates,
        discarded: path.discarded + track.discarded,
        target: Some(target),
        tracking_residual: Some(-track.objective),
    })
}
