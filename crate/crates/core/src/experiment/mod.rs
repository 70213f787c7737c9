//! End-to-end experiment driver: collect, train, evaluate and benchmark from
//! one [`ExperimentConfig`], with CSV and SVG outputs.

mod config;
mod plot;

pub use config::{DataSection, DynamicsData, EvalConfig, ExperimentConfig, ModelSection, PerceptionData, PolicySpec, TrainerSection};
pub use plot::{load_traces, parse_trajectories, render_svg, Trace};

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::datastore::{collect, extract_windows, Dataset, WindowKind};
use crate::error::{ConfigError, Error, ModelError, Result};
use crate::geometry::{Pose2, RobotState};
use crate::models::{train_dynamics, train_perception, DynamicsModel, PerceptionModel, TrainReport};
use crate::planner::{mpc_run, ExactDynamics, HierarchyPlanner, HintPlanner, MpcOutcome, MpcTermination, Planner, PoseDynamics};
use crate::sim::{DynamicsVariant, Simulator, World, WorldConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Hint,
    Hierarchy,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::Hint, Method::Hierarchy];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Hint => "hint",
            Method::Hierarchy => "hierarchy",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "hint" => Ok(Method::Hint),
            "hierarchy" => Ok(Method::Hierarchy),
            _ => Err(ConfigError::Invalid(format!("unknown method `{s}`; valid methods: hint, hierarchy"))),
        }
    }
}

/// Collects perception source `source` of the configured pool on `variant`.
pub fn collect_perception_data(cfg: &ExperimentConfig, variant: DynamicsVariant, source: usize) -> Result<Dataset> {
    let d = &cfg.data.perception;
    let world = WorldConfig { rng_seed: d.world_seed, ..cfg.world.clone() };
    Ok(collect(&d.policy.policy(), &world, variant, &cfg.sim, &cfg.render, &d.collect_config(source))?)
}

/// Collects dynamics data on `variant`; `held_out` selects the test seed.
pub fn collect_dynamics_data(cfg: &ExperimentConfig, variant: DynamicsVariant, held_out: bool) -> Result<Dataset> {
    let d = &cfg.data.dynamics;
    let world = WorldConfig { rng_seed: d.world_seed, ..cfg.world.clone() };
    let cc = d.collect_config(if held_out { d.test_seed } else { d.seed });
    Ok(collect(&d.policy.policy(), &world, variant, &cfg.sim, &cfg.render, &cc)?)
}

/// Trains a fresh perception model on the pooled `sources`.
pub fn train_perception_model(cfg: &ExperimentConfig, sources: &[&Dataset]) -> Result<(PerceptionModel, TrainReport)> {
    let mut m = PerceptionModel::new(cfg.model.perception.clone())?;
    let mut tc = cfg.trainer.perception.clone();
    if cfg.trainer.perception_steps_per_source {
        tc.steps *= sources.len().max(1);
    }
    if tc.source_ratios.as_ref().is_some_and(|r| r.len() != sources.len()) {
        tc.source_ratios = None;
    }
    let report = train_perception(&mut m, sources, &tc)?;
    Ok((m, report))
}

/// Trains a fresh dynamics model for `variant` on `sources`.
pub fn train_dynamics_model(cfg: &ExperimentConfig, variant: DynamicsVariant, sources: &[&Dataset]) -> Result<(DynamicsModel, TrainReport)> {
    for (i, src) in sources.iter().enumerate() {
        let found = src.manifest()?.variant;
        if found != variant {
            return Err(ConfigError::Invalid(format!(
                "dynamics data must come from the deployment variant {variant}, but source {i} was collected on {found}"
            ))
            .into());
        }
    }
    let mut m = DynamicsModel::new(cfg.dynamics_model(variant))?;
    let mut tc = cfg.trainer.dynamics.clone();
    if tc.source_ratios.as_ref().is_some_and(|r| r.len() != sources.len()) {
        tc.source_ratios = None;
    }
    let report = train_dynamics(&mut m, sources, &tc)?;
    Ok((m, report))
}

/// Mean end-of-horizon position error of `model` on `test`, as a fraction
/// of the arc length driven over the horizon, next to the same number for
/// the exact simulator dynamics (which should be ~0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fidelity {
    pub windows: usize,
    pub relative_error: f64,
    pub oracle_relative_error: f64,
}

pub fn dynamics_fidelity(model: &DynamicsModel, cfg: &ExperimentConfig, variant: DynamicsVariant, test: &Dataset) -> Result<Fidelity> {
    let h = model.horizon();
    let windows = extract_windows(test, h, WindowKind::Dynamics)?;
    if windows.is_empty() {
        return Err(ModelError::EmptyWindows(format!("no H={h} dynamics windows in the held-out set")).into());
    }
    let oracle = ExactDynamics { variant, config: cfg.sim, horizon: h };
    let arc = h as f64 * cfg.sim.dt * cfg.sim.speed;
    let last = 3 * (h - 1);
    let (mut err, mut err_oracle) = (0.0, 0.0);
    for w in &windows {
        let state = RobotState(w.state.clone());
        let p = model.predict_deltas(&state, &w.actions)?;
        let o = oracle.predict_deltas(&state, &w.actions)?;
        let (tx, ty) = (w.deltas[last], w.deltas[last + 1]);
        err += (p[last] - tx).hypot(p[last + 1] - ty);
        err_oracle += (o[last] - tx).hypot(o[last + 1] - ty);
    }
    let n = windows.len() as f64;
    Ok(Fidelity { windows: windows.len(), relative_error: err / n / arc, oracle_relative_error: err_oracle / n / arc })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub start: usize,
    pub trial: usize,
    pub outcome: MpcOutcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub method: Method,
    pub variant: DynamicsVariant,
    /// Ordered by `(start, trial)`.
    pub trials: Vec<TrialRecord>,
}

impl EvalReport {
    pub fn successes(&self) -> usize {
        self.trials.iter().filter(|t| t.outcome.success).count()
    }

    pub fn success_rate(&self) -> f64 {
        self.successes() as f64 / self.trials.len() as f64
    }

    /// One row per trial: start, trial, success, steps, min clearance.
    pub fn trials_csv(&self) -> String {
        let mut s = String::from("start,trial,success,steps,min_clearance,termination\n");
        for t in &self.trials {
            let _ = writeln!(
                s,
                "{},{},{},{},{:.6},{}",
                t.start,
                t.trial,
                u8::from(t.outcome.success),
                t.outcome.steps,
                t.outcome.min_clearance,
                termination_name(&t.outcome.termination)
            );
        }
        s
    }

    /// Every pose of every trial, for plotting.
    pub fn trajectories_csv(&self) -> String {
        let mut s = String::from("method,start,trial,step,x,y,yaw,termination\n");
        for t in &self.trials {
            let term = termination_name(&t.outcome.termination);
            for (k, p) in t.outcome.trajectory.iter().enumerate() {
                let _ = writeln!(s, "{},{},{},{k},{:.6},{:.6},{:.6},{term}", self.method.as_str(), t.start, t.trial, p.x, p.y, p.yaw);
            }
        }
        s
    }
}

pub fn termination_name(t: &MpcTermination) -> &'static str {
    match t {
        MpcTermination::Goal => "goal",
        MpcTermination::Collision => "collision",
        MpcTermination::Timeout => "timeout",
        MpcTermination::PlannerFailure(_) => "planner-failure",
    }
}

/// Runs `S x T` closed-loop episodes in the evaluation world. Trials run in
/// parallel; each draws from its own RNG stream, so results do not depend
/// on scheduling.
pub fn evaluate(
    cfg: &ExperimentConfig,
    variant: DynamicsVariant,
    perception: &PerceptionModel,
    dynamics: &DynamicsModel,
    method: Method,
) -> Result<EvalReport> {
    let h = cfg.horizon;
    for (what, found) in [("perception", perception.horizon()), ("dynamics", dynamics.horizon())] {
        if found != h {
            return Err(ConfigError::Invalid(format!("{what} checkpoint has H={found} but the config has horizon = {h}")).into());
        }
    }
    if dynamics.config.state_dim != variant.state_dim() {
        return Err(ConfigError::Invalid(format!(
            "dynamics checkpoint takes a {}-dim state but variant {variant} has {}",
            dynamics.config.state_dim,
            variant.state_dim()
        ))
        .into());
    }
    let world = World::generate(&cfg.eval_world())?;
    let sim = Simulator::new(world, variant, cfg.sim, cfg.render.clone());
    let planner: Box<dyn Planner> = match method {
        Method::Hint => Box::new(HintPlanner { perception, dynamics, rf: cfg.reward, bounds: variant.bounds(), solver: cfg.solver.clone() }),
        Method::Hierarchy => Box::new(HierarchyPlanner::new(perception, dynamics, &sim, cfg.reward, cfg.hierarchy.clone())),
    };
    let starts = sim.world.config.start_cells();
    let (s_count, t_count) = (cfg.evaluation.starts, cfg.evaluation.trials);
    let mpc = cfg.evaluation.mpc();
    let trials: Vec<TrialRecord> = (0..s_count * t_count)
        .into_par_iter()
        .map(|k| {
            let (start, trial) = (k / t_count, k % t_count);
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.evaluation.seed);
            rng.set_stream(k as u64);
            let pose: Pose2 = starts[start];
            mpc_run(planner.as_ref(), &sim, pose, &mpc, &mut rng).map(|outcome| TrialRecord { start, trial, outcome })
        })
        .collect::<std::result::Result<_, _>>()?;
    Ok(EvalReport { method, variant, trials })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkCell {
    pub variant: DynamicsVariant,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    pub perception_curve: TrainReport,
    pub dynamics_fidelity: Vec<(DynamicsVariant, Fidelity)>,
    pub cells: Vec<BenchmarkCell>,
}

impl BenchmarkReport {
    pub fn rate(&self, variant: DynamicsVariant, method: Method) -> Option<f64> {
        self.cells.iter().find(|c| c.variant == variant && c.report.method == method).map(|c| c.report.success_rate())
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("variant,method,successes,trials,success_rate\n");
        for c in &self.cells {
            let r = &c.report;
            let _ = writeln!(s, "{},{},{},{},{:.4}", c.variant, r.method.as_str(), r.successes(), r.trials.len(), r.success_rate());
        }
        s
    }
}

/// Full pipeline: one perception model from the configured sources, then a
/// dynamics model per benchmark variant, then both methods on each variant.
/// With `out`, datasets stay in memory but checkpoints, loss curves and CSVs
/// are written under it.
pub fn run_benchmark(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<BenchmarkReport> {
    cfg.validate()?;
    if let Some(dir) = out {
        create_dir(dir)?;
        write_text(&dir.join("config.toml"), &cfg.to_toml())?;
    }
    let per_sources =
        cfg.data.perception.variants.iter().enumerate().map(|(i, &v)| collect_perception_data(cfg, v, i)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Dataset> = per_sources.iter().collect();
    let (perception, per_report) = train_perception_model(cfg, &refs)?;
    if let Some(dir) = out {
        perception.save(&dir.join("perception.ckpt"))?;
        write_text(&dir.join("perception.loss.csv"), &per_report.to_csv())?;
    }
    let mut cells = Vec::new();
    let mut fidelity = Vec::new();
    for &variant in &cfg.benchmark_variants {
        let data = collect_dynamics_data(cfg, variant, false)?;
        let held_out = collect_dynamics_data(cfg, variant, true)?;
        let (dynamics, dyn_report) = train_dynamics_model(cfg, variant, &[&data])?;
        fidelity.push((variant, dynamics_fidelity(&dynamics, cfg, variant, &held_out)?));
        let vdir = out.map(|d| d.join(variant.to_string().replace(':', "-")));
        if let Some(vd) = &vdir {
            create_dir(vd)?;
            dynamics.save(&vd.join("dynamics.ckpt"))?;
            write_text(&vd.join("dynamics.loss.csv"), &dyn_report.to_csv())?;
        }
        for method in Method::ALL {
            let report = evaluate(cfg, variant, &perception, &dynamics, method)?;
            if let Some(vd) = &vdir {
                write_eval(&vd.join(method.as_str()), cfg, &report)?;
            }
            cells.push(BenchmarkCell { variant, report });
        }
    }
    let report = BenchmarkReport { perception_curve: per_report, dynamics_fidelity: fidelity, cells };
    if let Some(dir) = out {
        write_text(&dir.join("summary.csv"), &report.summary_csv())?;
    }
    Ok(report)
}

/// Writes `trials.csv`, `trajectories.csv`, `summary.txt` and the resolved
/// config into `dir`.
pub fn write_eval(dir: &Path, cfg: &ExperimentConfig, report: &EvalReport) -> Result<()> {
    create_dir(dir)?;
    write_text(&dir.join("config.toml"), &cfg.to_toml())?;
    write_text(&dir.join("trials.csv"), &report.trials_csv())?;
    write_text(&dir.join("trajectories.csv"), &report.trajectories_csv())?;
    let summary = format!(
        "method = \"{}\"\nvariant = \"{}\"\nsuccesses = {}\ntrials = {}\nsuccess_rate = {:.4}\n",
        report.method.as_str(),
        report.variant,
        report.successes(),
        report.trials.len(),
        report.success_rate()
    );
    write_text(&dir.join("summary.txt"), &summary)
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
