use super::{episode_reward, Observation, SimState, Simulator};
use crate::datastore::{EpisodeMeta, EpisodeRecord, TerminalCause};
use crate::error::SimError;
use crate::geometry::{Action, Pose2, RobotState};

/// What a policy sees before choosing the action for one step.
pub struct PolicyContext<'a> {
    pub step: usize,
    pub sim: &'a Simulator,
    pub state: &'a SimState,
    pub robot_state: RobotState,
    /// Present when the policy asked for observations.
    pub observation: Option<&'a Observation>,
}

pub trait Policy {
    fn name(&self) -> String;

    fn wants_observation(&self) -> bool {
        false
    }

    fn act(&mut self, ctx: &PolicyContext<'_>) -> Result<Action, String>;
}

/// Adapts a closure into a [`Policy`] that ignores observations.
pub struct FnPolicy<F> {
    name: String,
    f: F,
}

impl<F: FnMut(&PolicyContext<'_>) -> f64> FnPolicy<F> {
    pub fn new(name: impl Into<String>, f: F) -> Self {
        Self { name: name.into(), f }
    }
}

impl<F: FnMut(&PolicyContext<'_>) -> f64> Policy for FnPolicy<F> {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn act(&mut self, ctx: &PolicyContext<'_>) -> Result<Action, String> {
        Ok(Action::angular((self.f)(ctx)))
    }
}

/// Runs one episode until collision, goal entry or `max_steps`.
///
/// When `record_frames` is set, the newest rendered frame of every step is
/// logged; observations are rebuilt from these by [`EpisodeRecord::observation`].
pub fn run_episode(policy: &mut dyn Policy, sim: &Simulator, start: Pose2, max_steps: usize, record_frames: bool) -> Result<EpisodeRecord, SimError> {
    if max_steps == 0 {
        return Err(SimError::Policy { step: 0, message: "max_steps must be at least 1".into() });
    }
    let mut state = sim.reset(start);
    if state.collided {
        return Err(SimError::InvalidWorld(format!("start pose ({:.3}, {:.3}) is in collision", start.x, start.y)));
    }
    let meta = EpisodeMeta {
        variant: sim.variant,
        world_seed: sim.world.config.rng_seed,
        policy: policy.name(),
        dt: sim.config.dt,
        speed: sim.config.speed,
        start,
        frames_per_obs: sim.render.frames,
        frame_rows: if record_frames { sim.render.rows } else { 0 },
        frame_cols: if record_frames { sim.render.cols } else { 0 },
        state_dim: sim.variant.state_dim(),
        action_dim: sim.variant.action_dim(),
    };
    let mut rec = EpisodeRecord::empty(meta);
    let needs_obs = policy.wants_observation();
    let mut terminal = TerminalCause::Timeout;
    for step in 0..max_steps {
        let obs = needs_obs.then(|| sim.observe(&state));
        if record_frames {
            let newest = match &obs {
                Some(o) => o.frame(o.frames - 1).to_vec(),
                None => super::render_frame(&state.pose, &sim.world, &sim.render),
            };
            rec.frames.extend_from_slice(&newest);
        }
        let robot_state = state.robot_state();
        rec.states.extend_from_slice(&robot_state.0);
        let ctx = PolicyContext { step, sim, state: &state, robot_state, observation: obs.as_ref() };
        let action = policy.act(&ctx).map_err(|message| SimError::Policy { step, message })?;
        if !action.angular_velocity.is_finite() {
            return Err(SimError::NonFiniteAction { step, value: action.angular_velocity });
        }
        let next = sim.step(&state, &action)?;
        rec.actions.push(sim.variant.bounds().clamp(0, action.angular_velocity));
        rec.poses.push(next.pose);
        rec.rewards.push(episode_reward(&next));
        state = next;
        if state.collided {
            terminal = TerminalCause::Collision;
            break;
        }
        if sim.world.in_goal(&state.pose) {
            terminal = TerminalCause::Goal;
            break;
        }
    }
    rec.terminal = terminal;
    rec.clamped_steps = state.clamped_steps;
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{DynamicsVariant, RenderConfig, SimConfig, World, WorldConfig};

    fn empty_sim(variant: DynamicsVariant) -> Simulator {
        let cfg = WorldConfig { room_width: 10.0, room_length: 40.0, goal: Some([1.0, 39.0]), goal_radius: 0.5, ..Default::default() };
        Simulator::new(World::empty(&cfg).unwrap(), variant, SimConfig::default(), RenderConfig::default())
    }

    #[test]
    fn zero_policy_runs_straight_to_timeout() {
        let sim = empty_sim(DynamicsVariant::Normal);
        let mut p = FnPolicy::new("zero", |_| 0.0);
        let rec = run_episode(&mut p, &sim, Pose2::new(5.0, 1.0, 0.0).unwrap(), 50, true).unwrap();
        assert_eq!(rec.len(), 50);
        assert_eq!(rec.terminal, TerminalCause::Timeout);
        assert!(rec.rewards.iter().all(|&r| r == 0.0));
        for (k, p) in rec.poses.iter().enumerate() {
            assert_eq!(p.x, 5.0);
            assert!((p.y - (1.0 + 0.25 * (k + 1) as f64)).abs() < 1e-12);
        }
        // Observation rebuilt from the log equals a direct render.
        let mut s = sim.reset(rec.meta.start);
        for t in 0..5 {
            assert_eq!(rec.observation(t).unwrap(), sim.observe(&s));
            s = sim.step(&s, &Action::angular(0.0)).unwrap();
        }
    }

    #[test]
    fn driving_into_wall_ends_with_collision() {
        let sim = empty_sim(DynamicsVariant::Normal);
        let mut p = FnPolicy::new("left", |_| 2.0);
        let rec = run_episode(&mut p, &sim, Pose2::new(1.0, 20.0, 0.0).unwrap(), 500, false).unwrap();
        assert!(rec.len() < 500);
        assert_eq!(rec.terminal, TerminalCause::Collision);
        assert_eq!(*rec.rewards.last().unwrap(), -1.0);
        assert!(rec.frames.is_empty());
    }

    #[test]
    fn non_finite_action_aborts() {
        let sim = empty_sim(DynamicsVariant::Normal);
        let mut p = FnPolicy::new("nan", |c| if c.step == 3 { f64::NAN } else { 0.0 });
        let err = run_episode(&mut p, &sim, Pose2::new(5.0, 1.0, 0.0).unwrap(), 10, false).unwrap_err();
        assert!(matches!(err, SimError::NonFiniteAction { step: 3, .. }));
    }

    #[test]
    fn logged_pose_changes_recompose_final_pose() {
        let sim = empty_sim(DynamicsVariant::Lag(3));
        let mut k = 0u32;
        let mut p = FnPolicy::new("wiggle", move |_| {
            k += 1;
            (k as f64 * 0.7).sin() * 1.5
        });
        let rec = run_episode(&mut p, &sim, Pose2::new(5.0, 2.0, 0.2).unwrap(), 80, false).unwrap();
        let mut pose = rec.meta.start;
        let mut prev = rec.meta.start;
        for p in &rec.poses {
            pose = pose.compose(&p.relative_to(&prev));
            prev = *p;
        }
        let last = rec.poses.last().unwrap();
        assert!((pose.x - last.x).abs() < 1e-9 && (pose.y - last.y).abs() < 1e-9);
        assert!(crate::geometry::wrap(pose.yaw - last.yaw).abs() < 1e-9);
        assert_eq!(rec.states.len(), rec.len() * 3);
    }

    #[test]
    fn goal_entry_terminates() {
        let sim = empty_sim(DynamicsVariant::Normal);
        let mut p = FnPolicy::new("zero", |_| 0.0);
        let rec = run_episode(&mut p, &sim, Pose2::new(1.0, 30.0, 0.0).unwrap(), 500, false).unwrap();
        assert_eq!(rec.terminal, TerminalCause::Goal);
        assert_eq!(*rec.rewards.last().unwrap(), 0.0);
    }
}
