use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::atomic::{AtomicUsize, Ordering};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::models::{DynamicsConfig, PerceptionConfig};
use crate::sim::{Disc, RenderConfig, Simulator, World, WorldConfig};

fn exact(variant: DynamicsVariant, horizon: usize) -> ExactDynamics {
    ExactDynamics { variant, config: SimConfig::default(), horizon }
}

fn small_perception(h: usize, seed: u64) -> PerceptionModel {
    PerceptionModel::new(PerceptionConfig {
        horizon: h,
        frames: 2,
        rows: 8,
        cols: 16,
        conv_channels: vec![4, 4],
        latent: 16,
        head_hidden: 16,
        init_seed: seed,
    })
    .unwrap()
}

fn random_obs(rng: &mut ChaCha8Rng) -> Observation {
    let mut o = Observation::zeros(2, 8, 16);
    o.data.iter_mut().for_each(|v| *v = rng.gen_range(0.0..1.0));
    o
}

/// Scores a known concave quadratic.
struct Quadratic {
    center: Vec<f64>,
}

impl Objective for Quadratic {
    fn horizon(&self) -> usize {
        self.center.len()
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn score(&self, c: &[f64]) -> Result<Vec<f64>, PlanError> {
        Ok(c.chunks_exact(self.center.len()).map(|a| -a.iter().zip(&self.center).map(|(x, m)| (x - m).powi(2)).sum::<f64>()).collect())
    }
}

/// Reads obstacle points off the newest depth frame and predicts −1 from the
/// first step whose position comes within `radius` of one.
struct DepthOracle {
    render: RenderConfig,
    radius: f64,
    horizon: usize,
}

impl RewardPredictor for DepthOracle {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn predict_rewards(&self, obs: &Observation, deltas: &[f64]) -> Result<Vec<f64>, ModelError> {
        let frame = obs.frame(obs.frames - 1);
        let cols = self.render.cols;
        let mut pts = Vec::new();
        for j in 0..cols {
            let v = (0..self.render.rows).map(|i| frame[i * cols + j]).fold(0.0, f64::max);
            if v > 0.0 {
                let d = (1.0 - v) * self.render.max_range;
                let a = self.render.column_angle(j);
                pts.push((-d * a.sin(), d * a.cos()));
            }
        }
        let mut out = Vec::with_capacity(deltas.len() / 3);
        for seq in deltas.chunks_exact(self.horizon * 3) {
            let mut hit = false;
            for p in seq.chunks_exact(3) {
                hit = hit || pts.iter().any(|&(x, y)| (p[0] - x).hypot(p[1] - y) < self.radius);
                out.push(if hit { -1.0 } else { 0.0 });
            }
        }
        Ok(out)
    }
}

struct Counting<'a, T: ?Sized> {
    inner: &'a T,
    calls: AtomicUsize,
}

impl<'a, T: ?Sized> Counting<'a, T> {
    fn new(inner: &'a T) -> Self {
        Self { inner, calls: AtomicUsize::new(0) }
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<T: RewardPredictor + ?Sized> RewardPredictor for Counting<'_, T> {
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    fn predict_rewards(&self, obs: &Observation, deltas: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.predict_rewards(obs, deltas)
    }
}

impl<T: PoseDynamics + ?Sized> PoseDynamics for Counting<'_, T> {
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    fn action_dim(&self) -> usize {
        self.inner.action_dim()
    }

    fn predict_deltas(&self, state: &RobotState, actions: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.predict_deltas(state, actions)
    }
}

impl<T: PathPrior + ?Sized> PathPrior for Counting<'_, T> {
    fn rollout(&self, controls: &[f64], horizon: usize) -> Vec<f64> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.rollout(controls, horizon)
    }
}

fn seq(v: &[f64]) -> ActionSeq {
    ActionSeq::from_angular(v)
}

#[test]
fn sim_heading_is_zero_when_heading_matches() {
    let d = PoseDeltaSeq(vec![PoseDelta::new(0.0, 0.25, 0.3); 4]);
    let v = evaluate_reward(&RewardFunction::sim_heading(), &RewardSeq(vec![0.0; 4]), &d, &seq(&[0.0; 4]), &Goal::heading(0.3)).unwrap();
    assert_eq!(v, 0.0);
}

#[test]
fn sim_heading_error_wraps_around() {
    let d = PoseDeltaSeq(vec![PoseDelta::new(0.0, 0.0, PI - 0.1)]);
    let v = evaluate_reward(&RewardFunction::sim_heading(), &RewardSeq(vec![0.0]), &d, &seq(&[0.0]), &Goal::heading(-PI + 0.1)).unwrap();
    assert!((v + 0.01 * 0.2).abs() < 1e-12, "{v}");
}

#[test]
fn point_goal_example_value() {
    let d = PoseDeltaSeq(vec![PoseDelta::new(1.0, 0.0, 0.0)]);
    let v = evaluate_reward(&RewardFunction::point_goal(), &RewardSeq(vec![-1.0]), &d, &seq(&[0.0]), &Goal::Point { x: 0.0, y: 3.0 }).unwrap();
    let expected = -1.0 - 0.3 * FRAC_PI_2 - 0.05;
    assert!((v - expected).abs() <= 1e-12, "{v} vs {expected}");
    assert!((v + 1.5212).abs() < 1e-4);
}

#[test]
fn min_turn_straight_path_pays_only_forward_distance() {
    let d = PoseDeltaSeq((1..=3).map(|k| PoseDelta::new(0.0, 0.25 * k as f64, 0.0)).collect());
    let v = evaluate_reward(&RewardFunction::MinTurn, &RewardSeq(vec![0.0; 3]), &d, &seq(&[0.0; 3]), &Goal::None).unwrap();
    assert!((v + 1.5).abs() < 1e-12);
}

#[test]
fn reward_rejects_wrong_goal_and_horizon() {
    let d = PoseDeltaSeq::zeros(2);
    let r = RewardSeq(vec![0.0; 2]);
    let e = evaluate_reward(&RewardFunction::point_goal(), &r, &d, &seq(&[0.0; 2]), &Goal::heading(0.0)).unwrap_err();
    assert!(matches!(e, PlanError::GoalMismatch { expected: "point", found: "heading", .. }));
    let e = evaluate_reward(&RewardFunction::MinTurn, &r, &d, &seq(&[0.0; 3]), &Goal::None).unwrap_err();
    assert!(matches!(e, PlanError::HorizonMismatch { expected: 3, found: 2 }));
    assert!(RewardFunction::SimHeading { coef: -0.1 }.validate().is_err());
}

#[test]
fn cem_finds_quadratic_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let bounds = ActionBounds::scalar(-2.0, 2.0);
    for trial in 0..5 {
        let center: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let obj = Quadratic { center: center.clone() };
        let sol = cem(&obj, &bounds, &CemConfig { iterations: 10, ..CemConfig::default() }, &mut rng, None).unwrap();
        for (a, c) in sol.actions.as_flat().iter().zip(&center) {
            assert!((a - c).abs() < 0.05, "trial {trial}: {a} vs {c}");
        }
    }
}

#[test]
fn cem_anchors_reach_the_far_bound_from_a_pinned_warm_start() {
    let obj = Quadratic { center: vec![2.0; 4] };
    let bounds = ActionBounds::scalar(-2.0, 2.0);
    let warm = seq(&[-2.0; 4]);
    let run = |anchors| {
        let cfg = CemConfig { init_std: 0.0, min_std: 0.0, anchors, ..CemConfig::default() };
        cem(&obj, &bounds, &cfg, &mut ChaCha8Rng::seed_from_u64(3), Some(&warm)).unwrap()
    };
    // Clamping keeps actions BOUND_EPS inside the bounds.
    assert!(run(0).actions.as_flat().iter().all(|a| (a + 2.0).abs() < 1e-5));
    let sol = run(5);
    assert!(sol.actions.as_flat().iter().all(|a| (a - 2.0).abs() < 1e-5), "{:?}", sol.actions);
    assert!(sol.objective > -1e-9);
}

#[test]
fn cem_with_zero_variance_at_optimum_returns_it() {
    let center = vec![0.3, -0.7, 1.1];
    let obj = Quadratic { center: center.clone() };
    let cfg = CemConfig { init_std: 0.0, min_std: 0.0, ..CemConfig::default() };
    let sol = cem(&obj, &ActionBounds::scalar(-2.0, 2.0), &cfg, &mut ChaCha8Rng::seed_from_u64(1), Some(&seq(&center))).unwrap();
    assert_eq!(sol.actions.as_flat(), &center[..]);
    assert_eq!(sol.objective, 0.0);
}

/// `score` returns NaN for any candidate whose first action is negative.
struct HalfNan;

impl Objective for HalfNan {
    fn horizon(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn score(&self, c: &[f64]) -> Result<Vec<f64>, PlanError> {
        Ok(c.chunks_exact(2).map(|a| if a[0] < 0.0 { f64::NAN } else { -a[1].abs() }).collect())
    }
}

#[test]
fn non_finite_candidates_are_discarded() {
    let bounds = ActionBounds::scalar(-1.0, 1.0);
    let sol = cem(&HalfNan, &bounds, &CemConfig::default(), &mut ChaCha8Rng::seed_from_u64(2), None).unwrap();
    assert!(sol.discarded > 0);
    assert!(sol.objective.is_finite() && sol.actions.as_flat()[0] >= 0.0);
    let all_bad = ActionBounds::scalar(-1.0, -0.5);
    let e = cem(&HalfNan, &all_bad, &CemConfig::default(), &mut ChaCha8Rng::seed_from_u64(2), None).unwrap_err();
    assert!(matches!(e, PlanError::AllCandidatesDiscarded(128)));
    let e = mppi(&HalfNan, &all_bad, &MppiConfig::default(), &mut ChaCha8Rng::seed_from_u64(2), None).unwrap_err();
    assert!(matches!(e, PlanError::AllCandidatesDiscarded(_)));
}

#[test]
fn cem_config_needs_two_elites() {
    let cfg = CemConfig { population: 10, elite_fraction: 0.1, ..CemConfig::default() };
    assert!(matches!(cfg.validate(), Err(PlanError::InvalidConfig(_))));
    assert!(MppiConfig { temperature: 0.0, ..MppiConfig::default() }.validate().is_err());
}

#[test]
fn mppi_weights_are_uniform_for_equal_scores() {
    let w = mppi_weights(&[-0.7; 16], 0.05);
    assert!(w.iter().all(|&x| x == 1.0 / 16.0));
}

#[test]
fn mppi_weights_are_shift_invariant() {
    // Dyadic scores and shift keep every subtraction exact.
    let scores: Vec<f64> = (0..32).map(|k| -(k as f64) / 64.0).collect();
    let shifted: Vec<f64> = scores.iter().map(|s| s + 3.0).collect();
    assert_eq!(mppi_weights(&scores, 0.05), mppi_weights(&shifted, 0.05));
    let sum: f64 = mppi_weights(&scores, 0.05).iter().sum();
    assert!((sum - 1.0).abs() < 1e-12);
}

#[test]
fn mppi_with_equal_scores_returns_nominal_mean() {
    struct Flat;
    impl Objective for Flat {
        fn horizon(&self) -> usize {
            1
        }
        fn action_dim(&self) -> usize {
            1
        }
        fn score(&self, c: &[f64]) -> Result<Vec<f64>, PlanError> {
            Ok(vec![-1.0; c.len()])
        }
    }
    // Wide bounds so no sample is clamped; the average is the sample mean.
    let bounds = ActionBounds::scalar(-1e3, 1e3);
    let cfg = MppiConfig { noise_std: 1e-4, iterations: 1, ..MppiConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let sol = mppi(&Flat, &bounds, &cfg, &mut rng, Some(&seq(&[0.5]))).unwrap();
    let mut replay = ChaCha8Rng::seed_from_u64(3);
    let mut samples = vec![0.5];
    for _ in 1..cfg.population {
        let z: f64 = replay.sample(rand_distr::StandardNormal);
        samples.push(0.5 + cfg.noise_std * 2e3 * z);
    }
    let mean = samples.iter().map(|s| s / cfg.population as f64).sum::<f64>();
    assert!((sol.actions.as_flat()[0] - mean).abs() < 1e-12);
}

#[test]
fn mppi_small_temperature_picks_argmax() {
    let obj = Quadratic { center: vec![0.8] };
    let cfg = MppiConfig { temperature: 1e-9, keep_candidates: true, ..MppiConfig::default() };
    let sol = mppi(&obj, &ActionBounds::scalar(-2.0, 2.0), &cfg, &mut ChaCha8Rng::seed_from_u64(4), None).unwrap();
    let (best, _) = sol.candidates.unwrap().into_iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    assert!((sol.actions.as_flat()[0] - best.as_flat()[0]).abs() < 1e-9);
}

fn grid_best(obj: &dyn Objective, bounds: &ActionBounds) -> f64 {
    let (lo, hi) = (bounds.low[0] + BOUND_EPS_TEST, bounds.high[0] - BOUND_EPS_TEST);
    let grid: Vec<f64> = (0..1000).map(|i| lo + (hi - lo) * i as f64 / 999.0).collect();
    obj.score(&grid).unwrap().into_iter().fold(f64::NEG_INFINITY, f64::max)
}

const BOUND_EPS_TEST: f64 = crate::geometry::BOUND_EPS;

#[test]
fn solvers_match_grid_search_for_one_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dynamics = DynamicsModel::new(DynamicsConfig { horizon: 1, ..DynamicsConfig::default() }).unwrap();
    for trial in 0..5u64 {
        let p = small_perception(1, trial);
        let obs = random_obs(&mut rng);
        let state = RobotState::empty();
        let goal = Goal::Point { x: rng.gen_range(-3.0..3.0), y: rng.gen_range(-1.0..3.0) };
        let input = PlanInput { obs: &obs, state: &state, goal };
        let obj = IntegratedObjective { perception: &p, dynamics: &dynamics, input, rf: RewardFunction::point_goal() };
        let bounds = DynamicsVariant::Normal.bounds();
        let best = grid_best(&obj, &bounds);
        let c = cem(&obj, &bounds, &CemConfig::default(), &mut rng, None).unwrap();
        let m = mppi(&obj, &bounds, &MppiConfig::default(), &mut rng, None).unwrap();
        for (name, v) in [("cem", c.objective), ("mppi", m.objective)] {
            assert!(best - v <= 0.01 * best.abs(), "trial {trial} {name}: {v} vs grid {best}");
        }
    }
}

#[test]
fn mppi_tracks_cem_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let dynamics = exact(DynamicsVariant::Normal, 6);
    for trial in 0..20u64 {
        let p = small_perception(6, 100 + trial);
        let obs = random_obs(&mut rng);
        let state = RobotState::empty();
        let goal = Goal::heading(rng.gen_range(-PI..PI));
        let input = PlanInput { obs: &obs, state: &state, goal };
        let bounds = DynamicsVariant::Normal.bounds();
        let model_c =
            plan_integrated(&p, &dynamics, input, &RewardFunction::sim_heading(), &bounds, &SolverConfig::default(), &mut rng, None).unwrap();
        let model_m = plan_integrated(
            &p,
            &dynamics,
            input,
            &RewardFunction::sim_heading(),
            &bounds,
            &SolverConfig::Mppi(MppiConfig::default()),
            &mut rng,
            None,
        )
        .unwrap();
        let (c, m) = (model_c.objective, model_m.objective);
        assert!((c - m).abs() <= 0.05 * c.abs(), "trial {trial}: cem {c} mppi {m}");
    }
}

#[test]
fn cem_best_objective_never_decreases() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let p = small_perception(6, 1);
    let d = exact(DynamicsVariant::LimitedSteering, 6);
    let obs = random_obs(&mut rng);
    let state = RobotState::empty();
    let input = PlanInput { obs: &obs, state: &state, goal: Goal::heading(1.0) };
    let cfg = SolverConfig::Cem(CemConfig { iterations: 8, keep_candidates: true, ..CemConfig::default() });
    let bounds = DynamicsVariant::LimitedSteering.bounds();
    let r = plan_integrated(&p, &d, input, &RewardFunction::sim_heading(), &bounds, &cfg, &mut rng, None).unwrap();
    assert_eq!(r.history.len(), 8);
    assert!(r.history.windows(2).all(|w| w[1] >= w[0]), "{:?}", r.history);
    assert_eq!(*r.history.last().unwrap(), r.objective);
    assert!(r.candidates.unwrap().iter().all(|(_, s)| *s <= r.objective));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn plans_stay_within_bounds(seed in 0u64..1000, variant_idx in 0usize..4, warm in -5.0f64..5.0, use_mppi: bool) {
        let variant = [DynamicsVariant::Normal, DynamicsVariant::LimitedSteering, DynamicsVariant::RightTurnOnly, DynamicsVariant::Lag(3)][variant_idx];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = small_perception(4, seed);
        let d = exact(variant, 4);
        let obs = random_obs(&mut rng);
        let state = RobotState(vec![0.1; variant.state_dim()]);
        let input = PlanInput { obs: &obs, state: &state, goal: Goal::heading(warm) };
        let solver = if use_mppi { SolverConfig::Mppi(MppiConfig { population: 32, ..MppiConfig::default() }) } else {
            SolverConfig::Cem(CemConfig { population: 32, elite_fraction: 0.25, ..CemConfig::default() })
        };
        let bounds = variant.bounds();
        let r = plan_integrated(&p, &d, input, &RewardFunction::sim_heading(), &bounds, &solver, &mut rng, Some(&seq(&[warm; 4]))).unwrap();
        prop_assert!(bounds.contains_seq(&r.actions), "{:?} outside {:?}", r.actions, bounds);
        let kin = DynamicsVariant::Normal.bounds();
        let hcfg = HierarchyConfig {
            path: CemConfig { population: 32, elite_fraction: 0.25, ..CemConfig::default() },
            tracking: CemConfig { population: 32, elite_fraction: 0.25, ..CemConfig::default() },
        };
        let prior = UnicyclePrior::from(SimConfig::default());
        let h = plan_hierarchy(&p, &d, &prior, input, &RewardFunction::sim_heading(), &kin, &bounds, &hcfg, &mut rng, None).unwrap();
        prop_assert!(bounds.contains_seq(&h.actions));
    }
}

#[test]
fn unicycle_prior_matches_normal_dynamics() {
    let prior = UnicyclePrior::from(SimConfig::default());
    let u = [0.4, -1.2, 2.0, 0.0, 0.3, -0.5];
    let a = prior.rollout(&u, 6);
    let b = exact(DynamicsVariant::Normal, 6).predict_deltas(&RobotState::empty(), &u).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn exact_dynamics_honours_pending_lag_actions() {
    let d = exact(DynamicsVariant::Lag(3), 3);
    // The three pending commands execute first; the planned ones never do within H = 3.
    let out = d.predict_deltas(&RobotState(vec![0.0, 0.0, 0.0]), &[2.0, 2.0, 2.0]).unwrap();
    assert!(out.chunks_exact(3).all(|p| p[0] == 0.0 && p[2] == 0.0));
}

#[test]
fn hierarchy_step_two_never_queries_perception() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p_inner = small_perception(6, 2);
    let d_inner = exact(DynamicsVariant::Normal, 6);
    let prior_inner = UnicyclePrior::from(SimConfig::default());
    let p = Counting::new(&p_inner);
    let d = Counting::new(&d_inner);
    let prior = Counting::new(&prior_inner);
    let obs = random_obs(&mut rng);
    let state = RobotState::empty();
    let input = PlanInput { obs: &obs, state: &state, goal: Goal::heading(0.5) };
    let cfg = HierarchyConfig::default();
    let bounds = DynamicsVariant::Normal.bounds();
    plan_hierarchy(&p, &d, &prior, input, &RewardFunction::sim_heading(), &bounds, &bounds, &cfg, &mut rng, None).unwrap();
    // Path search: one perception and one prior call per iteration, plus one
    // prior call for the chosen path. Tracking: one dynamics call per
    // iteration. Reporting: one call to each model.
    assert_eq!(p.calls(), cfg.path.iterations + 1);
    assert_eq!(prior.calls(), cfg.path.iterations + 1);
    assert_eq!(d.calls(), cfg.tracking.iterations + 1);

    let (p0, pr0) = (p.calls(), prior.calls());
    let target = PoseDeltaSeq::from_flat(&prior_inner.rollout(&[0.3; 6], 6));
    track_targets(&d, &state, &target, &bounds, &CemConfig::default(), &mut rng, None).unwrap();
    assert_eq!((p.calls(), prior.calls()), (p0, pr0));

    plan_integrated(&p, &d, input, &RewardFunction::sim_heading(), &bounds, &SolverConfig::default(), &mut rng, None).unwrap();
    assert_eq!(prior.calls(), pr0, "integrated planning touched the kinematic prior");
}

#[test]
fn hierarchy_matches_integrated_when_prior_equals_dynamics() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let d = exact(DynamicsVariant::Normal, 6);
    let prior = UnicyclePrior::from(SimConfig::default());
    let bounds = DynamicsVariant::Normal.bounds();
    for trial in 0..5u64 {
        let p = small_perception(6, 200 + trial);
        let obs = random_obs(&mut rng);
        let state = RobotState::empty();
        let input = PlanInput { obs: &obs, state: &state, goal: Goal::heading(rng.gen_range(-1.5..1.5)) };
        let h = plan_hierarchy(&p, &d, &prior, input, &RewardFunction::sim_heading(), &bounds, &bounds, &HierarchyConfig::default(), &mut rng, None)
            .unwrap();
        let i = plan_integrated(&p, &d, input, &RewardFunction::sim_heading(), &bounds, &SolverConfig::default(), &mut rng, None).unwrap();
        assert!(h.tracking_residual.unwrap() < 1e-9, "residual {:?}", h.tracking_residual);
        assert!((h.objective - i.objective).abs() <= 0.1 * i.objective.abs(), "{} vs {}", h.objective, i.objective);
    }
}

#[test]
fn hierarchy_cannot_track_infeasible_turn() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let d = exact(DynamicsVariant::RightTurnOnly, 6);
    let prior = UnicyclePrior::from(SimConfig::default());
    // Negative rates are outside this variant's interval.
    let target = PoseDeltaSeq::from_flat(&prior.rollout(&[-1.5; 6], 6));
    let sol =
        track_targets(&d, &RobotState::empty(), &target, &DynamicsVariant::RightTurnOnly.bounds(), &CemConfig::default(), &mut rng, None).unwrap();
    let residual = -sol.objective;
    assert!(residual > 0.1, "{residual}");
    let got = d.predict_deltas(&RobotState::empty(), sol.actions.as_flat()).unwrap();
    assert!(got.last().unwrap() >= &0.0 && target.0.last().unwrap().dyaw < 0.0);
}

#[test]
fn tracking_straight_path_recovers_zero_actions() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let d = exact(DynamicsVariant::Normal, 6);
    let target = PoseDeltaSeq::from_flat(&UnicyclePrior::from(SimConfig::default()).rollout(&[0.0; 6], 6));
    let cfg = CemConfig { iterations: 8, ..CemConfig::default() };
    let sol = track_targets(&d, &RobotState::empty(), &target, &DynamicsVariant::Normal.bounds(), &cfg, &mut rng, Some(&seq(&[0.8; 6]))).unwrap();
    assert!(sol.actions.as_flat().iter().all(|a| a.abs() < 0.1), "{:?}", sol.actions);
}

fn obstacle_sim(variant: DynamicsVariant) -> Simulator {
    let cfg = WorldConfig::default();
    let mut world = World::empty(&cfg).unwrap();
    world.obstacles.push(Disc { x: cfg.room_width / 2.0, y: 4.5, r: 0.45 });
    Simulator::new(world, variant, SimConfig::default(), RenderConfig::default())
}

fn oracle_planner_parts(variant: DynamicsVariant, sim: &Simulator) -> (DepthOracle, ExactDynamics) {
    let oracle = DepthOracle { render: sim.render.clone(), radius: sim.world.config.robot_radius + 0.2, horizon: 6 };
    (oracle, exact(variant, 6))
}

#[test]
fn mpc_reaches_goal_straight_ahead_in_empty_room() {
    let cfg = WorldConfig::default();
    let sim = Simulator::new(World::empty(&cfg).unwrap(), DynamicsVariant::Normal, SimConfig::default(), RenderConfig::default());
    let (p, d) = oracle_planner_parts(DynamicsVariant::Normal, &sim);
    let planner = HintPlanner {
        perception: &p,
        dynamics: &d,
        rf: RewardFunction::sim_heading(),
        bounds: sim.variant.bounds(),
        solver: SolverConfig::default(),
    };
    let start = Pose2::new(cfg.room_width / 2.0, 1.0, 0.0).unwrap();
    let out = mpc_run(&planner, &sim, start, &MpcConfig::default(), &mut ChaCha8Rng::seed_from_u64(12)).unwrap();
    assert!(out.success, "{:?}", out.termination);
    let max_dx = out.trajectory.iter().map(|p| (p.x - start.x).abs()).fold(0.0, f64::max);
    assert!(max_dx < 0.3, "path wandered {max_dx} m sideways");
    assert_eq!(out.trajectory.len(), out.steps + 1);
}

#[test]
fn mpc_steers_around_obstacle_ahead() {
    for variant in [DynamicsVariant::Normal, DynamicsVariant::RightTurnOnly] {
        let sim = obstacle_sim(variant);
        let (p, d) = oracle_planner_parts(variant, &sim);
        let planner = HintPlanner {
            perception: &p,
            dynamics: &d,
            rf: RewardFunction::sim_heading(),
            bounds: sim.variant.bounds(),
            solver: SolverConfig::default(),
        };
        let start = Pose2::new(sim.world.config.room_width / 2.0, 1.0, 0.0).unwrap();
        let out = mpc_run(&planner, &sim, start, &MpcConfig::default(), &mut ChaCha8Rng::seed_from_u64(13)).unwrap();
        let disc = sim.world.obstacles[0];
        let rr = sim.world.config.robot_radius;
        let disc_clearance = out.trajectory.iter().map(|p| (p.x - disc.x).hypot(p.y - disc.y) - disc.r - rr).fold(f64::INFINITY, f64::min);
        assert!(disc_clearance > 0.0, "{variant}: {:?}", out.termination);
        // A right-turn-only robot that swerves cannot steer back under a myopic heading cost.
        if variant == DynamicsVariant::Normal {
            assert!(out.min_clearance > 0.0 && out.success, "{variant}: {:?}", out.termination);
        }
    }
}

#[test]
fn mpc_is_deterministic_for_fixed_seed() {
    let sim = obstacle_sim(DynamicsVariant::LimitedSteering);
    let (p, d) = oracle_planner_parts(DynamicsVariant::LimitedSteering, &sim);
    let planner = HintPlanner {
        perception: &p,
        dynamics: &d,
        rf: RewardFunction::sim_heading(),
        bounds: sim.variant.bounds(),
        solver: SolverConfig::Mppi(MppiConfig::default()),
    };
    let start = Pose2::new(3.0, 1.0, 0.2).unwrap();
    let cfg = MpcConfig { max_steps: 30, ..MpcConfig::default() };
    let a = mpc_run(&planner, &sim, start, &cfg, &mut ChaCha8Rng::seed_from_u64(14)).unwrap();
    let b = mpc_run(&planner, &sim, start, &cfg, &mut ChaCha8Rng::seed_from_u64(14)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn mpc_reports_planner_failure_as_failed_episode() {
    let sim = obstacle_sim(DynamicsVariant::Normal);
    let (p, _) = oracle_planner_parts(DynamicsVariant::Normal, &sim);
    let wrong_h = exact(DynamicsVariant::Normal, 4);
    let planner = HintPlanner {
        perception: &p,
        dynamics: &wrong_h,
        rf: RewardFunction::sim_heading(),
        bounds: sim.variant.bounds(),
        solver: SolverConfig::default(),
    };
    let out = mpc_run(&planner, &sim, Pose2::new(4.0, 1.0, 0.0).unwrap(), &MpcConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(!out.success);
    assert!(matches!(out.termination, MpcTermination::PlannerFailure(ref m) if m.contains("horizon")));
    let e = mpc_run(&planner, &sim, Pose2::new(4.0, 4.5, 0.0).unwrap(), &MpcConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
    assert!(matches!(e, PlanError::Sim(_)));
}

#[test]
fn goal_for_matches_reward_kind() {
    let sim = obstacle_sim(DynamicsVariant::Normal);
    let pose = Pose2::new(4.0, 1.0, 0.0).unwrap();
    assert_eq!(goal_for(&RewardFunction::sim_heading(), &sim.world, &pose), Goal::heading(0.0));
    let Goal::Point { x, y } = goal_for(&RewardFunction::point_goal(), &sim.world, &pose) else { panic!() };
    assert!(x.abs() < 1e-12 && (y - 10.0).abs() < 1e-12);
    assert_eq!(goal_for(&RewardFunction::MinTurn, &sim.world, &pose), Goal::None);
}
