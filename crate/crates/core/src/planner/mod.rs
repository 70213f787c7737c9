//! Sampling-based planning over the composed model, the task rewards, the
//! receding-horizon controller and the two-step hierarchical baseline.

mod cem;
mod hierarchy;
mod mpc;
mod mppi;

pub use cem::{cem, CemConfig};
pub use hierarchy::{plan_hierarchy, track_targets, HierarchyConfig, UnicyclePrior};
pub use mpc::{goal_for, mpc_run, HierarchyPlanner, HintPlanner, MpcConfig, MpcOutcome, MpcTermination, Planner};
pub use mppi::{mppi, mppi_weights, MppiConfig};

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, PlanError};
use crate::geometry::{bearing_angle, wrap, Action, ActionBounds, ActionSeq, Goal, Pose2, PoseDelta, PoseDeltaSeq, RewardSeq, RobotState};
use crate::models::{DynamicsModel, IntegratedModel, PerceptionModel};
use crate::sim::{step_dynamics, DynamicsVariant, Observation, SimConfig, SimState};

/// Task reward scored on predicted rewards and pose deltas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RewardFunction {
    /// `Σ r̂ − coef·Σ_h |wrap(δyaw_h − g)|`, goal given as a relative heading.
    SimHeading { coef: f64 },
    /// `Σ r̂ − angle_coef·Σ_h ∠(δp_h, g) − magnitude_coef·Σ_h ‖δp_h‖₁`, goal given as a body-frame point.
    PointGoal { angle_coef: f64, magnitude_coef: f64 },
    /// `Σ r̂ − Σ_h ‖δp_h‖₁`, no goal.
    MinTurn,
}

impl Default for RewardFunction {
    fn default() -> Self {
        RewardFunction::sim_heading()
    }
}

impl RewardFunction {
    pub fn sim_heading() -> Self {
        RewardFunction::SimHeading { coef: 0.01 }
    }

    pub fn point_goal() -> Self {
        RewardFunction::PointGoal { angle_coef: 0.3, magnitude_coef: 0.05 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            RewardFunction::SimHeading { .. } => "sim-heading",
            RewardFunction::PointGoal { .. } => "point-goal",
            RewardFunction::MinTurn => "min-turn",
        }
    }

    /// Goal kind this reward consumes.
    pub fn goal_kind(&self) -> &'static str {
        match self {
            RewardFunction::SimHeading { .. } => "heading",
            RewardFunction::PointGoal { .. } => "point",
            RewardFunction::MinTurn => "none",
        }
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        let coefs: &[f64] = match self {
            RewardFunction::SimHeading { coef } => &[*coef],
            RewardFunction::PointGoal { angle_coef, magnitude_coef } => &[*angle_coef, *magnitude_coef],
            RewardFunction::MinTurn => &[],
        };
        if coefs.iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
            return Err(PlanError::InvalidConfig(format!("{} coefficients must be non-negative, got {coefs:?}", self.name())));
        }
        Ok(())
    }

    pub fn check_goal(&self, goal: &Goal) -> Result<(), PlanError> {
        if goal.kind() != self.goal_kind() {
            return Err(PlanError::GoalMismatch { reward: self.name(), expected: self.goal_kind(), found: goal.kind() });
        }
        Ok(())
    }

    /// Unchecked evaluation on flat `H` rewards and `H x 3` deltas.
    pub(crate) fn value(&self, r: &[f64], d: &[f64], goal: &Goal) -> f64 {
        let steps = d.chunks_exact(PoseDelta::DIM).map(PoseDelta::from_slice);
        let sum_r: f64 = r.iter().sum();
        match (*self, *goal) {
            (RewardFunction::SimHeading { coef }, Goal::Heading(g)) => sum_r - coef * steps.map(|p| wrap(p.dyaw - g).abs()).sum::<f64>(),
            (RewardFunction::PointGoal { angle_coef, magnitude_coef }, Goal::Point { x, y }) => {
                let (mut ang, mut mag) = (0.0, 0.0);
                for p in steps {
                    ang += bearing_angle(&p, x, y);
                    mag += p.l1_norm();
                }
                sum_r - angle_coef * ang - magnitude_coef * mag
            }
            (RewardFunction::MinTurn, _) => sum_r - steps.map(|p| p.l1_norm()).sum::<f64>(),
            _ => f64::NAN,
        }
    }
}

/// Scores one predicted rollout. `a` only fixes the horizon.
pub fn evaluate_reward(rf: &RewardFunction, r: &RewardSeq, dp: &PoseDeltaSeq, a: &ActionSeq, goal: &Goal) -> Result<f64, PlanError> {
    rf.check_goal(goal)?;
    for found in [r.len(), dp.len()] {
        if found != a.len() {
            return Err(PlanError::HorizonMismatch { expected: a.len(), found });
        }
    }
    Ok(rf.value(&r.0, &dp.flatten(), goal))
}

/// Predicts rewards for pose-delta sequences from one observation.
pub trait RewardPredictor: Sync {
    fn horizon(&self) -> usize;
    /// `deltas` is flat `N x H x 3`; returns flat `N x H`.
    fn predict_rewards(&self, obs: &Observation, deltas: &[f64]) -> Result<Vec<f64>, ModelError>;
}

/// Predicts pose deltas for action sequences from one robot state.
pub trait PoseDynamics: Sync {
    fn horizon(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// `actions` is flat `N x H x A`; returns flat `N x H x 3`.
    fn predict_deltas(&self, state: &RobotState, actions: &[f64]) -> Result<Vec<f64>, ModelError>;
}

/// Dynamics-agnostic path generator for the hierarchy's first step.
pub trait PathPrior: Sync {
    /// `controls` is flat `N x H`; returns flat `N x H x 3`.
    fn rollout(&self, controls: &[f64], horizon: usize) -> Vec<f64>;
}

impl RewardPredictor for PerceptionModel {
    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn predict_rewards(&self, obs: &Observation, deltas: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.predict_many(obs, deltas)
    }
}

impl PoseDynamics for DynamicsModel {
    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn action_dim(&self) -> usize {
        self.config.action_dim
    }

    fn predict_deltas(&self, state: &RobotState, actions: &[f64]) -> Result<Vec<f64>, ModelError> {
        let n = actions.len() / (self.config.horizon * self.config.action_dim).max(1);
        self.predict_many(&state.0.repeat(n), actions)
    }
}

/// The simulator's own dynamics behind the [`PoseDynamics`] interface; a
/// reference for learned models and a stand-in for tests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactDynamics {
    pub variant: DynamicsVariant,
    pub config: SimConfig,
    pub horizon: usize,
}

impl PoseDynamics for ExactDynamics {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn action_dim(&self) -> usize {
        self.variant.action_dim()
    }

    fn predict_deltas(&self, state: &RobotState, actions: &[f64]) -> Result<Vec<f64>, ModelError> {
        if state.dim() != self.variant.state_dim() {
            return Err(ModelError::DimMismatch { what: "robot state", expected: self.variant.state_dim(), found: state.dim() });
        }
        crate::models::check_len("action sequence", actions.len(), self.horizon)?;
        let mut out = Vec::with_capacity(actions.len() * PoseDelta::DIM);
        let mut start = SimState::new(Pose2::origin(), self.variant);
        start.action_history = state.0.iter().copied().collect();
        for seq in actions.chunks_exact(self.horizon) {
            let mut s = start.clone();
            for &a in seq {
                s = step_dynamics(&s, &Action::angular(a), self.variant, self.config.dt, self.config.speed)
                    .map_err(|e| ModelError::InvalidConfig(e.to_string()))?;
                out.extend_from_slice(&s.pose.relative_to(&Pose2::origin()).to_array());
            }
        }
        Ok(out)
    }
}

/// Inputs shared by every planning call at one control step.
#[derive(Debug, Clone, Copy)]
pub struct PlanInput<'a> {
    pub obs: &'a Observation,
    pub state: &'a RobotState,
    pub goal: Goal,
}

/// Something a solver maximizes over flat candidate action sequences.
pub trait Objective {
    fn horizon(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// Scores `N` candidates (flat `N x H x A`). Non-finite scores are
    /// discarded by the solver.
    fn score(&self, candidates: &[f64]) -> Result<Vec<f64>, PlanError>;
}

/// Task reward of `f_per(o, f_dyn(s, a))`.
pub struct IntegratedObjective<'a> {
    pub perception: &'a dyn RewardPredictor,
    pub dynamics: &'a dyn PoseDynamics,
    pub input: PlanInput<'a>,
    pub rf: RewardFunction,
}

/// Flat rewards (`N x H`), deltas (`N x H x 3`) and objectives (`N`).
pub type Rollout = (Vec<f64>, Vec<f64>, Vec<f64>);

impl IntegratedObjective<'_> {
    /// Rewards, deltas and objective for each of `N` candidates.
    pub fn rollout(&self, candidates: &[f64]) -> Result<Rollout, PlanError> {
        let d = self.dynamics.predict_deltas(self.input.state, candidates)?;
        let r = self.perception.predict_rewards(self.input.obs, &d)?;
        let h = self.horizon();
        let scores = r.chunks_exact(h).zip(d.chunks_exact(h * PoseDelta::DIM)).map(|(r, d)| self.rf.value(r, d, &self.input.goal)).collect();
        Ok((r, d, scores))
    }
}

impl Objective for IntegratedObjective<'_> {
    fn horizon(&self) -> usize {
        self.dynamics.horizon()
    }

    fn action_dim(&self) -> usize {
        self.dynamics.action_dim()
    }

    fn score(&self, candidates: &[f64]) -> Result<Vec<f64>, PlanError> {
        Ok(self.rollout(candidates)?.2)
    }
}

/// Output of one solver call on an [`Objective`].
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub actions: ActionSeq,
    pub objective: f64,
    /// Objective of the solver's current answer after each iteration.
    pub history: Vec<f64>,
    /// Every finite-scored candidate with its objective, when requested.
    pub candidates: Option<Vec<(ActionSeq, f64)>>,
    /// Candidates dropped for non-finite objectives.
    pub discarded: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub actions: ActionSeq,
    pub rewards: RewardSeq,
    pub deltas: PoseDeltaSeq,
    pub objective: f64,
    pub history: Vec<f64>,
    pub candidates: Option<Vec<(ActionSeq, f64)>>,
    pub discarded: usize,
    /// Hierarchy only: the step-1 path and the step-2 tracking error to it.
    pub target: Option<PoseDeltaSeq>,
    pub tracking_residual: Option<f64>,
}

/// Sampling solver and its settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SolverConfig {
    Cem(CemConfig),
    Mppi(MppiConfig),
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig::Cem(CemConfig::default())
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        match self {
            SolverConfig::Cem(c) => c.validate(),
            SolverConfig::Mppi(c) => c.validate(),
        }
    }

    pub fn solve<R: rand::Rng>(
        &self,
        obj: &dyn Objective,
        bounds: &ActionBounds,
        rng: &mut R,
        init: Option<&ActionSeq>,
    ) -> Result<Solution, PlanError> {
        match self {
            SolverConfig::Cem(c) => cem(obj, bounds, c, rng, init),
            SolverConfig::Mppi(c) => mppi(obj, bounds, c, rng, init),
        }
    }
}

fn check_plan_args(dynamics: &dyn PoseDynamics, input: &PlanInput<'_>, rf: &RewardFunction, bounds: &ActionBounds) -> Result<(), PlanError> {
    rf.validate()?;
    rf.check_goal(&input.goal)?;
    if bounds.dim() != dynamics.action_dim() {
        return Err(PlanError::InvalidConfig(format!("bounds have {} dims, model actions have {}", bounds.dim(), dynamics.action_dim())));
    }
    Ok(())
}

fn finish(obj: &IntegratedObjective<'_>, sol: Solution) -> Result<PlanResult, PlanError> {
    let (r, d, _) = obj.rollout(sol.actions.as_flat())?;
    Ok(PlanResult {
        actions: sol.actions,
        rewards: RewardSeq(r),
        deltas: PoseDeltaSeq::from_flat(&d),
        objective: sol.objective,
        history: sol.history,
        candidates: sol.candidates,
        discarded: sol.discarded,
        target: None,
        tracking_residual: None,
    })
}

/// Plans through `perception ∘ dynamics` using `solver`; `warm` seeds the
/// initial mean or nominal sequence.
#[allow(clippy::too_many_arguments)]
pub fn plan_integrated<R: rand::Rng>(
    perception: &dyn RewardPredictor,
    dynamics: &dyn PoseDynamics,
    input: PlanInput<'_>,
    rf: &RewardFunction,
    bounds: &ActionBounds,
    solver: &SolverConfig,
    rng: &mut R,
    warm: Option<&ActionSeq>,
) -> Result<PlanResult, PlanError> {
    check_plan_args(dynamics, &input, rf, bounds)?;
    if perception.horizon() != dynamics.horizon() {
        return Err(PlanError::HorizonMismatch { expected: perception.horizon(), found: dynamics.horizon() });
    }
    solver.validate()?;
    let obj = IntegratedObjective { perception, dynamics, input, rf: *rf };
    let sol = solver.solve(&obj, bounds, rng, warm)?;
    finish(&obj, sol)
}

pub fn plan_cem<R: rand::Rng>(
    model: &IntegratedModel<'_>,
    input: PlanInput<'_>,
    rf: &RewardFunction,
    bounds: &ActionBounds,
    cfg: &CemConfig,
    rng: &mut R,
    warm: Option<&ActionSeq>,
) -> Result<PlanResult, PlanError> {
    plan_integrated(model.perception, model.dynamics, input, rf, bounds, &SolverConfig::Cem(cfg.clone()), rng, warm)
}

pub fn plan_mppi<R: rand::Rng>(
    model: &IntegratedModel<'_>,
    input: PlanInput<'_>,
    rf: &RewardFunction,
    bounds: &ActionBounds,
    cfg: &MppiConfig,
    rng: &mut R,
    prev_plan: Option<&ActionSeq>,
) -> Result<PlanResult, PlanError> {
    plan_integrated(model.perception, model.dynamics, input, rf, bounds, &SolverConfig::Mppi(cfg.clone()), rng, prev_plan)
}

/// Starting mean: `init` clamped into `bounds`, else the interval midpoints.
pub(crate) fn initial_mean(bounds: &ActionBounds, horizon: usize, init: Option<&ActionSeq>) -> Result<Vec<f64>, PlanError> {
    let d = bounds.dim();
    match init {
        Some(a) if a.len() != horizon => Err(PlanError::HorizonMismatch { expected: horizon, found: a.len() }),
        Some(a) if a.dim() != d => Err(PlanError::InvalidConfig(format!("warm start has action dim {}, bounds have {d}", a.dim()))),
        Some(a) => Ok(bounds.clamp_seq(a).as_flat().to_vec()),
        None => Ok((0..horizon * d).map(|i| bounds.clamp(i % d, 0.5 * (bounds.low[i % d] + bounds.high[i % d]))).collect()),
    }
}

#[cfg(test)]
mod tests;
