use super::{Dataset, TerminalCause};
use crate::error::DataError;
use crate::geometry::PoseDelta;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowKind {
    /// `(o_t, δp_{t:t+H}, r_{t:t+H})`, one per step including frozen tails.
    Perception,
    /// `(s_t, a_{t:t+H}, δp_{t:t+H})`, only where all `H` actions exist.
    Dynamics,
}

/// A length-`H` training sample. Observations are not copied; rebuild them
/// with `dataset.episodes[episode].observation(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub episode: usize,
    pub t: usize,
    /// `H x 3` cumulative deltas in the body frame of the pose before step `t`.
    pub deltas: Vec<f64>,
    /// `H` labels in `{-1, 0}`; empty for dynamics windows.
    pub rewards: Vec<f64>,
    pub state: Vec<f64>,
    /// `H x action_dim`; empty for perception windows.
    pub actions: Vec<f64>,
    pub has_collision: bool,
}

/// Cuts every episode of `ds` into windows of length `horizon`.
///
/// Past the last logged step the pose stays frozen at its final value and the
/// reward is −1 if the episode ended in a collision, else 0.
pub fn extract_windows(ds: &Dataset, horizon: usize, kind: WindowKind) -> Result<Vec<Window>, DataError> {
    if horizon == 0 {
        return Err(DataError::InvalidHorizon);
    }
    if kind == WindowKind::Perception && !ds.has_observations() {
        return Err(DataError::Missing("observations"));
    }
    let mut out = Vec::new();
    for (ei, ep) in ds.episodes.iter().enumerate() {
        let l = ep.len();
        let collided = ep.terminal == TerminalCause::Collision;
        let starts = match kind {
            WindowKind::Perception => l,
            WindowKind::Dynamics => (l + 1).saturating_sub(horizon),
        };
        for t in 0..starts {
            let base = ep.pose_before(t);
            let mut deltas = Vec::with_capacity(horizon * PoseDelta::DIM);
            let mut rewards = Vec::new();
            let mut actions = Vec::new();
            let mut has_collision = false;
            for h in 0..horizon {
                let idx = t + h;
                let (pose, r) = if idx < l { (ep.poses[idx], ep.rewards[idx]) } else { (ep.poses[l - 1], if collided { -1.0 } else { 0.0 }) };
                deltas.extend_from_slice(&pose.relative_to(&base).to_array());
                has_collision |= r < 0.0;
                match kind {
                    WindowKind::Perception => rewards.push(r),
                    WindowKind::Dynamics => actions.extend_from_slice(ep.action(idx)),
                }
            }
            out.push(Window { episode: ei, t, deltas, rewards, state: ep.state(t).to_vec(), actions, has_collision });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose2;
    use crate::sim::{run_episode, DynamicsVariant, FnPolicy, RenderConfig, SimConfig, Simulator, World, WorldConfig};

    fn sim(variant: DynamicsVariant) -> Simulator {
        let cfg = WorldConfig { room_width: 10.0, room_length: 40.0, goal: Some([1.0, 39.0]), goal_radius: 0.5, ..Default::default() };
        let render = RenderConfig { rows: 2, cols: 4, ..Default::default() };
        Simulator::new(World::empty(&cfg).unwrap(), variant, SimConfig::default(), render)
    }

    fn episode(policy_rate: f64, start: Pose2, steps: usize) -> Dataset {
        let s = sim(DynamicsVariant::Normal);
        let mut p = FnPolicy::new("const", move |c| policy_rate * (c.step as f64 * 0.3).cos());
        Dataset::new(vec![run_episode(&mut p, &s, start, steps, true).unwrap()]).unwrap()
    }

    #[test]
    fn window_counts() {
        let ds = episode(0.5, Pose2::new(5.0, 5.0, 0.0).unwrap(), 20);
        assert_eq!(ds.episodes[0].len(), 20);
        let per = extract_windows(&ds, 6, WindowKind::Perception).unwrap();
        let dynw = extract_windows(&ds, 6, WindowKind::Dynamics).unwrap();
        assert_eq!(per.len(), 20);
        assert_eq!(dynw.len(), 20 - 6 + 1);
        assert!(per.iter().all(|w| w.rewards.iter().all(|&r| r == 0.0)));
        assert!(dynw.iter().all(|w| w.actions.len() == 6 && w.rewards.is_empty()));
        assert!(matches!(extract_windows(&ds, 0, WindowKind::Dynamics), Err(DataError::InvalidHorizon)));
    }

    #[test]
    fn collision_freezes_labels() {
        // Heading straight at the left wall from x = 1.2 collides quickly.
        let ds = episode(0.0, Pose2::new(1.2, 5.0, std::f64::consts::FRAC_PI_2).unwrap(), 50);
        let ep = &ds.episodes[0];
        assert_eq!(ep.terminal, TerminalCause::Collision);
        let c = ep.len() - 1;
        let per = extract_windows(&ds, 6, WindowKind::Perception).unwrap();
        for w in &per {
            for h in 0..6 {
                let expected = if w.t + h >= c { -1.0 } else { 0.0 };
                assert_eq!(w.rewards[h], expected, "t={} h={h}", w.t);
                if w.t + h > c {
                    assert_eq!(w.deltas[3 * h..3 * h + 3], w.deltas[3 * (c - w.t)..3 * (c - w.t) + 3]);
                }
            }
            assert_eq!(w.has_collision, w.t + 6 > c);
        }
    }

    #[test]
    fn labels_recompose_logged_poses() {
        let ds = episode(1.7, Pose2::new(5.0, 5.0, 0.4).unwrap(), 30);
        let ep = &ds.episodes[0];
        for w in extract_windows(&ds, 6, WindowKind::Dynamics).unwrap() {
            let base = ep.pose_before(w.t);
            for h in 0..6 {
                let p = base.compose(&PoseDelta::from_slice(&w.deltas[3 * h..3 * h + 3]));
                let truth = ep.poses[w.t + h];
                assert!((p.x - truth.x).abs() < 1e-9 && (p.y - truth.y).abs() < 1e-9);
                assert!(crate::geometry::wrap(p.yaw - truth.yaw).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn perception_needs_frames() {
        let s = sim(DynamicsVariant::Normal);
        let mut p = FnPolicy::new("zero", |_| 0.0);
        let ds = Dataset::new(vec![run_episode(&mut p, &s, Pose2::new(5.0, 5.0, 0.0).unwrap(), 10, false).unwrap()]).unwrap();
        assert!(matches!(extract_windows(&ds, 6, WindowKind::Perception), Err(DataError::Missing(_))));
        assert_eq!(extract_windows(&ds, 6, WindowKind::Dynamics).unwrap().len(), 5);
    }
}
