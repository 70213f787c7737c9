//! Planar poses, frame-relative displacements and the sequence types that
//! flow between the dynamics model, the perception model and the planner.
//!
//! Body-frame convention: the robot's forward axis is `+y` and its right-hand
//! side is `+x`. A pose with yaw `θ` moves forward along `(-sin θ, cos θ)` in
//! the world frame, so positive yaw rates turn counter-clockwise.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::GeometryError;

/// Wraps an angle into `(-π, π]`.
///
/// Non-finite input is rejected.
pub fn wrap_angle(theta: f64) -> Result<f64, GeometryError> {
    if !theta.is_finite() {
        return Err(GeometryError::NonFinite { what: "angle", value: theta });
    }
    Ok(wrap(theta))
}

/// Infallible wrap for values already known to be finite.
#[inline]
pub(crate) fn wrap(theta: f64) -> f64 {
    if theta > -PI && theta <= PI {
        return theta;
    }
    let r = theta.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Planar kinematic configuration in the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    /// Always in `(-π, π]`.
    pub yaw: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, yaw: f64) -> Result<Self, GeometryError> {
        for (what, value) in [("x", x), ("y", y), ("yaw", yaw)] {
            if !value.is_finite() {
                return Err(GeometryError::NonFinite { what, value });
            }
        }
        Ok(Self { x, y, yaw: wrap(yaw) })
    }

    pub const fn origin() -> Self {
        Self { x: 0.0, y: 0.0, yaw: 0.0 }
    }

    /// Unit vector of the robot's forward axis in the world frame.
    pub fn forward(&self) -> (f64, f64) {
        (-self.yaw.sin(), self.yaw.cos())
    }

    /// `self` advanced by `delta`, where `delta` is expressed in the body frame of `self`.
    pub fn compose(&self, delta: &PoseDelta) -> Pose2 {
        let (s, c) = self.yaw.sin_cos();
        Pose2 { x: self.x + c * delta.dx - s * delta.dy, y: self.y + s * delta.dx + c * delta.dy, yaw: wrap(self.yaw + delta.dyaw) }
    }

    /// Displacement that takes `base` to `self`, expressed in `base`'s body frame.
    ///
    /// Inverse of [`Pose2::compose`]: `base.compose(&p.relative_to(&base)) == p`
    /// up to rounding.
    pub fn relative_to(&self, base: &Pose2) -> PoseDelta {
        let (s, c) = base.yaw.sin_cos();
        let wx = self.x - base.x;
        let wy = self.y - base.y;
        PoseDelta { dx: c * wx + s * wy, dy: -s * wx + c * wy, dyaw: wrap(self.yaw - base.yaw) }
    }

    /// Expresses a world-frame point in this pose's body frame.
    pub fn to_body(&self, px: f64, py: f64) -> (f64, f64) {
        let (s, c) = self.yaw.sin_cos();
        let wx = px - self.x;
        let wy = py - self.y;
        (c * wx + s * wy, -s * wx + c * wy)
    }

    pub fn distance_to(&self, px: f64, py: f64) -> f64 {
        (self.x - px).hypot(self.y - py)
    }
}

/// Compose as a free function, mirroring the operation table.
pub fn compose(base: &Pose2, delta: &PoseDelta) -> Pose2 {
    base.compose(delta)
}

/// Displacement of a future pose in the body frame of the pose at planning time.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PoseDelta {
    pub dx: f64,
    pub dy: f64,
    pub dyaw: f64,
}

impl PoseDelta {
    pub const ZERO: PoseDelta = PoseDelta { dx: 0.0, dy: 0.0, dyaw: 0.0 };
    /// Number of scalar components when flattened for a network.
    pub const DIM: usize = 3;

    pub fn new(dx: f64, dy: f64, dyaw: f64) -> Self {
        Self { dx, dy, dyaw: wrap(dyaw) }
    }

    pub fn l1_norm(&self) -> f64 {
        self.dx.abs() + self.dy.abs() + self.dyaw.abs()
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.dx, self.dy, self.dyaw]
    }

    /// Builds a delta from raw network outputs. The yaw component is not
    /// re-wrapped: predictions stay inside `(-π, π)` for every horizon the
    /// simulator supports, and wrapping would break differentiability.
    pub fn from_slice(v: &[f64]) -> Self {
        Self { dx: v[0], dy: v[1], dyaw: v[2] }
    }
}

/// Unsigned angle in `[0, π]` between the displacement `(dx, dy)` and the
/// goal point, both seen from the origin of the planning-time body frame.
///
/// A zero displacement is treated as the forward axis `(0, 1)`. A goal at the
/// origin yields `0`.
pub fn bearing_angle(delta: &PoseDelta, goal_x: f64, goal_y: f64) -> f64 {
    let (vx, vy) = if delta.dx == 0.0 && delta.dy == 0.0 { (0.0, 1.0) } else { (delta.dx, delta.dy) };
    if goal_x == 0.0 && goal_y == 0.0 {
        return 0.0;
    }
    let cross = vx * goal_y - vy * goal_x;
    let dot = vx * goal_x + vy * goal_y;
    cross.abs().atan2(dot)
}

/// Cumulative pose deltas for the `H` steps of a planning horizon.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PoseDeltaSeq(pub Vec<PoseDelta>);

impl PoseDeltaSeq {
    pub fn zeros(horizon: usize) -> Self {
        Self(vec![PoseDelta::ZERO; horizon])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, PoseDelta> {
        self.0.iter()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.0.iter().flat_map(|d| d.to_array()).collect()
    }

    pub fn from_flat(v: &[f64]) -> Self {
        Self(v.chunks_exact(PoseDelta::DIM).map(PoseDelta::from_slice).collect())
    }
}

/// One control input. The simulator only commands the angular velocity; the
/// linear component exists for platforms that command both.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    /// rad/s
    pub angular_velocity: f64,
    /// m/s
    pub linear_velocity: Option<f64>,
}

impl Action {
    pub fn angular(w: f64) -> Self {
        Self { angular_velocity: w, linear_velocity: None }
    }
}

/// `H` actions, stored flat as `[a_0.., a_1.., ...]` with `dim` components each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSeq {
    values: Vec<f64>,
    dim: usize,
}

impl ActionSeq {
    pub fn new(values: Vec<f64>, dim: usize) -> Self {
        assert!(dim > 0 && values.len().is_multiple_of(dim), "action buffer not a multiple of dim");
        Self { values, dim }
    }

    pub fn from_angular(rates: &[f64]) -> Self {
        Self { values: rates.to_vec(), dim: 1 }
    }

    pub fn zeros(horizon: usize, dim: usize) -> Self {
        Self { values: vec![0.0; horizon * dim], dim }
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.values
    }

    pub fn step(&self, h: usize) -> &[f64] {
        &self.values[h * self.dim..(h + 1) * self.dim]
    }

    pub fn action(&self, h: usize) -> Action {
        let s = self.step(h);
        Action { angular_velocity: s[0], linear_velocity: s.get(1).copied() }
    }

    /// Drops the first step and repeats the last one, for warm starts.
    pub fn shifted(&self) -> ActionSeq {
        if self.is_empty() {
            return self.clone();
        }
        let mut values = self.values[self.dim..].to_vec();
        values.extend_from_slice(&self.values[self.values.len() - self.dim..]);
        ActionSeq { values, dim: self.dim }
    }
}

/// Inset applied when clamping into open action bounds.
pub const BOUND_EPS: f64 = 1e-6;

/// Open per-dimension action interval `(low, high)`. Clamping lands
/// `BOUND_EPS` inside each end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionBounds {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl ActionBounds {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Self {
        assert_eq!(low.len(), high.len(), "bounds dimension mismatch");
        assert!(low.iter().zip(&high).all(|(l, h)| l.is_finite() && h.is_finite() && h - l > 2.0 * BOUND_EPS), "empty or non-finite action interval");
        Self { low, high }
    }

    pub fn scalar(low: f64, high: f64) -> Self {
        Self::new(vec![low], vec![high])
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn width(&self, d: usize) -> f64 {
        self.high[d] - self.low[d]
    }

    pub fn clamp(&self, d: usize, v: f64) -> f64 {
        v.clamp(self.low[d] + BOUND_EPS, self.high[d] - BOUND_EPS)
    }

    /// Clamps every step of a sequence whose `dim` matches these bounds.
    pub fn clamp_seq(&self, seq: &ActionSeq) -> ActionSeq {
        assert_eq!(seq.dim(), self.dim(), "action dim does not match bounds");
        let d = self.dim();
        let values = seq.as_flat().iter().enumerate().map(|(i, &v)| self.clamp(i % d, v)).collect();
        ActionSeq::new(values, d)
    }

    /// True iff every component of `seq` lies in the closed, inset interval.
    pub fn contains_seq(&self, seq: &ActionSeq) -> bool {
        let d = self.dim();
        seq.dim() == d && seq.as_flat().iter().enumerate().all(|(i, &v)| v >= self.low[i % d] + BOUND_EPS && v <= self.high[i % d] - BOUND_EPS)
    }
}

/// Low-dimensional robot state fed to the dynamics model. Empty for the
/// memoryless variants; the pending actions for the lag variant.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RobotState(pub Vec<f64>);

impl RobotState {
    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Per-step rewards over the horizon; labels are in `{-1, 0}`, predictions in `(-1, 0)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardSeq(pub Vec<f64>);

impl RewardSeq {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// Task goal, expressed relative to the robot at planning time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Goal {
    /// Signed angle from the forward axis to the goal, counter-clockwise positive.
    Heading(f64),
    /// Goal point in the planning-time body frame.
    Point {
        x: f64,
        y: f64,
    },
    None,
}

impl Goal {
    pub fn heading(angle: f64) -> Self {
        Goal::Heading(wrap(angle))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Goal::Heading(_) => "heading",
            Goal::Point { .. } => "point",
            Goal::None => "none",
        }
    }
}

/// Signed heading of a world-frame goal point as seen from `pose`.
pub fn relative_heading(pose: &Pose2, goal_x: f64, goal_y: f64) -> f64 {
    let (bx, by) = pose.to_body(goal_x, goal_y);
    // Forward is +y, counter-clockwise (towards -x) positive.
    (-bx).atan2(by)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn rot_oracle(base: &Pose2, d: &PoseDelta) -> (f64, f64) {
        // Plain 2x2 rotation matrix [[c, -s], [s, c]] applied to (dx, dy).
        let m = [[base.yaw.cos(), -base.yaw.sin()], [base.yaw.sin(), base.yaw.cos()]];
        (base.x + m[0][0] * d.dx + m[0][1] * d.dy, base.y + m[1][0] * d.dx + m[1][1] * d.dy)
    }

    #[test]
    fn compose_examples() {
        let o = Pose2::origin();
        assert_eq!(o.compose(&PoseDelta::ZERO), o);
        let p = o.compose(&PoseDelta::new(0.0, 1.0, 0.0));
        assert_eq!((p.x, p.y, p.yaw), (0.0, 1.0, 0.0));

        let base = Pose2::new(1.0, 2.0, FRAC_PI_2).unwrap();
        let p = base.compose(&PoseDelta::new(0.0, 1.0, 0.0));
        let (ox, oy) = rot_oracle(&base, &PoseDelta::new(0.0, 1.0, 0.0));
        assert!((p.x - 0.0).abs() < 1e-12 && (p.x - ox).abs() < 1e-12);
        assert!((p.y - 2.0).abs() < 1e-12 && (p.y - oy).abs() < 1e-12);
        assert_eq!(p.yaw, FRAC_PI_2);
    }

    #[test]
    fn wrap_examples() {
        assert_eq!(wrap_angle(0.0).unwrap(), 0.0);
        assert!((wrap_angle(3.0 * PI).unwrap() - PI).abs() < 1e-12);
        assert_eq!(wrap_angle(-PI).unwrap(), PI);
        assert_eq!(wrap_angle(PI).unwrap(), PI);
        assert!(wrap_angle(f64::NAN).is_err());
        assert!(wrap_angle(f64::INFINITY).is_err());
    }

    #[test]
    fn bearing_examples() {
        assert_eq!(bearing_angle(&PoseDelta::new(0.0, 1.0, 0.3), 0.0, 5.0), 0.0);
        assert!((bearing_angle(&PoseDelta::new(0.0, 1.0, 0.0), 5.0, 0.0) - FRAC_PI_2).abs() < 1e-15);
        // arccos of the normalized dot product, computed independently.
        let (v, g) = ([1.0f64, 1.0], [0.0f64, 1.0]);
        let oracle = ((v[0] * g[0] + v[1] * g[1]) / (v[0].hypot(v[1]) * g[0].hypot(g[1]))).acos();
        let got = bearing_angle(&PoseDelta::new(1.0, 1.0, 0.0), 0.0, 1.0);
        assert!((got - oracle).abs() < 1e-12);
        assert!((got - PI / 4.0).abs() < 1e-12);
        // zero displacement falls back to the forward axis
        assert!((bearing_angle(&PoseDelta::ZERO, 1.0, 0.0) - FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn relative_heading_signs() {
        let p = Pose2::origin();
        assert_eq!(relative_heading(&p, 0.0, 3.0), 0.0);
        assert!((relative_heading(&p, -1.0, 0.0) - FRAC_PI_2).abs() < 1e-15);
        assert!((relative_heading(&p, 1.0, 0.0) + FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn compose_matches_rotation_oracle_on_random_inputs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let base = Pose2::new(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0), rng.gen_range(-PI..PI)).unwrap();
            let d = PoseDelta::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-PI..PI));
            let p = base.compose(&d);
            let (ox, oy) = rot_oracle(&base, &d);
            assert!((p.x - ox).abs() < 1e-12 && (p.y - oy).abs() < 1e-12);
        }
    }

    #[test]
    fn action_seq_shift_repeats_tail() {
        let a = ActionSeq::from_angular(&[1.0, 2.0, 3.0]);
        assert_eq!(a.shifted().as_flat(), &[2.0, 3.0, 3.0]);
    }

    proptest! {
        #[test]
        fn compose_zero_is_identity(x in -100.0..100.0f64, y in -100.0..100.0f64, yaw in -10.0..10.0f64) {
            let p = Pose2::new(x, y, yaw).unwrap();
            prop_assert_eq!(p.compose(&PoseDelta::ZERO), p);
        }

        #[test]
        fn wrap_is_idempotent_and_in_range(t in -1e4..1e4f64) {
            let w = wrap_angle(t).unwrap();
            prop_assert!(w > -PI && w <= PI);
            prop_assert_eq!(wrap_angle(w).unwrap(), w);
            let k = ((t - w) / (2.0 * PI)).round();
            prop_assert!((t - w - k * 2.0 * PI).abs() < 1e-9);
        }

        #[test]
        fn bearing_scale_invariant(dx in -5.0..5.0f64, dy in -5.0..5.0f64, gx in -5.0..5.0f64, gy in -5.0..5.0f64, s in 0.1..10.0f64) {
            prop_assume!(dx.hypot(dy) > 1e-3 && gx.hypot(gy) > 1e-3);
            let a = bearing_angle(&PoseDelta::new(dx, dy, 0.0), gx, gy);
            let b = bearing_angle(&PoseDelta::new(s * dx, s * dy, 0.0), gx, gy);
            let c = bearing_angle(&PoseDelta::new(dx, dy, 0.0), s * gx, s * gy);
            prop_assert!((a - b).abs() < 1e-12 && (a - c).abs() < 1e-12);
            prop_assert!((0.0..=PI).contains(&a));
        }

        #[test]
        fn relative_to_inverts_compose(x in -10.0..10.0f64, y in -10.0..10.0f64, yaw in -3.0..3.0f64,
                                       dx in -3.0..3.0f64, dy in -3.0..3.0f64, dyaw in -3.0..3.0f64) {
            let base = Pose2::new(x, y, yaw).unwrap();
            let d = PoseDelta::new(dx, dy, dyaw);
            let back = base.compose(&d).relative_to(&base);
            prop_assert!((back.dx - d.dx).abs() < 1e-9 && (back.dy - d.dy).abs() < 1e-9);
            prop_assert!(wrap(back.dyaw - d.dyaw).abs() < 1e-9);
        }
    }
}
