use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    plan_hierarchy, plan_integrated, HierarchyConfig, PlanInput, PlanResult, PoseDynamics, RewardFunction, RewardPredictor, SolverConfig,
    UnicyclePrior,
};
use crate::error::{PlanError, SimError};
use crate::geometry::{relative_heading, ActionBounds, ActionSeq, Goal, Pose2};
use crate::models::IntegratedModel;
use crate::sim::{DynamicsVariant, Simulator, World};

/// A receding-horizon planner: one full plan per control step.
pub trait Planner: Sync {
    fn name(&self) -> &'static str;
    fn horizon(&self) -> usize;
    fn reward(&self) -> &RewardFunction;
    fn plan(&self, input: PlanInput<'_>, warm: Option<&ActionSeq>, rng: &mut ChaCha8Rng) -> Result<PlanResult, PlanError>;
}

/// Plans through the composed perception and dynamics models.
pub struct HintPlanner<'m> {
    pub perception: &'m dyn RewardPredictor,
    pub dynamics: &'m dyn PoseDynamics,
    pub rf: RewardFunction,
    pub bounds: ActionBounds,
    pub solver: SolverConfig,
}

impl<'m> HintPlanner<'m> {
    pub fn new(model: IntegratedModel<'m>, sim: &Simulator, rf: RewardFunction, solver: SolverConfig) -> Self {
        Self { perception: model.perception, dynamics: model.dynamics, rf, bounds: sim.variant.bounds(), solver }
    }
}

impl Planner for HintPlanner<'_> {
    fn name(&self) -> &'static str {
        "hint"
    }

    fn horizon(&self) -> usize {
        self.dynamics.horizon()
    }

    fn reward(&self) -> &RewardFunction {
        &self.rf
    }

    fn plan(&self, input: PlanInput<'_>, warm: Option<&ActionSeq>, rng: &mut ChaCha8Rng) -> Result<PlanResult, PlanError> {
        plan_integrated(self.perception, self.dynamics, input, &self.rf, &self.bounds, &self.solver, rng, warm)
    }
}

/// Two-step baseline; the path search always uses the unconstrained
/// variant's yaw-rate limits, whatever the deployment variant.
pub struct HierarchyPlanner<'m> {
    pub perception: &'m dyn RewardPredictor,
    pub dynamics: &'m dyn PoseDynamics,
    pub prior: UnicyclePrior,
    pub rf: RewardFunction,
    pub kin_bounds: ActionBounds,
    pub bounds: ActionBounds,
    pub cfg: HierarchyConfig,
}

impl<'m> HierarchyPlanner<'m> {
    pub fn new(
        perception: &'m dyn RewardPredictor,
        dynamics: &'m dyn PoseDynamics,
        sim: &Simulator,
        rf: RewardFunction,
        cfg: HierarchyConfig,
    ) -> Self {
        Self { perception, dynamics, prior: sim.config.into(), rf, kin_bounds: DynamicsVariant::Normal.bounds(), bounds: sim.variant.bounds(), cfg }
    }
}

impl Planner for HierarchyPlanner<'_> {
    fn name(&self) -> &'static str {
        "hierarchy"
    }

    fn horizon(&self) -> usize {
        self.perception.horizon()
    }

    fn reward(&self) -> &RewardFunction {
        &self.rf
    }

    fn plan(&self, input: PlanInput<'_>, warm: Option<&ActionSeq>, rng: &mut ChaCha8Rng) -> Result<PlanResult, PlanError> {
        plan_hierarchy(self.perception, self.dynamics, &self.prior, input, &self.rf, &self.kin_bounds, &self.bounds, &self.cfg, rng, warm)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    pub max_steps: usize,
    /// Seed each plan with the previous one shifted by a step.
    pub warm_start: bool,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self { max_steps: 150, warm_start: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MpcTermination {
    Goal,
    Collision,
    Timeout,
    /// The planner failed; the episode counts as a failure.
    PlannerFailure(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcOutcome {
    pub success: bool,
    pub termination: MpcTermination,
    pub steps: usize,
    /// Start pose followed by the pose after every executed step.
    pub trajectory: Vec<Pose2>,
    /// Executed (clamped) actions.
    pub actions: Vec<f64>,
    /// Smallest robot clearance seen; negative after a collision.
    pub min_clearance: f64,
}

/// Task goal for `rf` as seen from `pose`, built from the world's goal point.
pub fn goal_for(rf: &RewardFunction, world: &World, pose: &Pose2) -> Goal {
    let [gx, gy] = world.goal();
    match rf {
        RewardFunction::SimHeading { .. } => Goal::heading(relative_heading(pose, gx, gy)),
        RewardFunction::PointGoal { .. } => {
            let (x, y) = pose.to_body(gx, gy);
            Goal::Point { x, y }
        }
        RewardFunction::MinTurn => Goal::None,
    }
}

/// Closed-loop episode: plan, execute the first action, repeat.
///
/// Planner errors end the episode as [`MpcTermination::PlannerFailure`];
/// only simulator misuse (such as a start in collision) is returned as `Err`.
pub fn mpc_run(planner: &dyn Planner, sim: &Simulator, start: Pose2, cfg: &MpcConfig, rng: &mut ChaCha8Rng) -> Result<MpcOutcome, PlanError> {
    let mut state = sim.reset(start);
    if state.collided {
        return Err(SimError::InvalidWorld(format!("start pose ({:.3}, {:.3}) is in collision", start.x, start.y)).into());
    }
    let bounds = sim.variant.bounds();
    let mut out = MpcOutcome {
        success: false,
        termination: MpcTermination::Timeout,
        steps: 0,
        trajectory: vec![start],
        actions: Vec::new(),
        min_clearance: sim.world.clearance(start.x, start.y),
    };
    let mut prev: Option<ActionSeq> = None;
    for _ in 0..cfg.max_steps {
        let obs = sim.observe(&state);
        let robot_state = state.robot_state();
        let goal = goal_for(planner.reward(), &sim.world, &state.pose);
        let warm = if cfg.warm_start { prev.as_ref().map(ActionSeq::shifted) } else { None };
        let plan = match planner.plan(PlanInput { obs: &obs, state: &robot_state, goal }, warm.as_ref(), rng) {
            Ok(p) => p,
            Err(e) => {
                out.termination = MpcTermination::PlannerFailure(e.to_string());
                return Ok(out);
            }
        };
        let action = plan.actions.action(0);
        state = sim.step(&state, &action)?;
        out.steps += 1;
        out.actions.push(bounds.clamp(0, action.angular_velocity));
        out.trajectory.push(state.pose);
        out.min_clearance = out.min_clearance.min(sim.world.clearance(state.pose.x, state.pose.y));
        prev = Some(plan.actions);
        if state.collided {
            out.termination = MpcTermination::Collision;
            return Ok(out);
        }
        if sim.world.in_goal(&state.pose) {
            out.termination = MpcTermination::Goal;
            out.success = true;
            return Ok(out);
        }
    }
    Ok(out)
}
