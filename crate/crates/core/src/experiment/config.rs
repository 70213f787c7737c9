use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datastore::{CollectConfig, CollectionPolicy, StartMode};
use crate::error::{ConfigError, Error};
use crate::models::{DynamicsConfig, PerceptionConfig, TrainConfig};
use crate::planner::{HierarchyConfig, MpcConfig, RewardFunction, SolverConfig};
use crate::sim::{DynamicsVariant, RenderConfig, SimConfig, WorldConfig};
use crate::tensor::AdamConfig;

/// Serializable form of the off-policy collection policies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PolicySpec {
    RandomWalk,
    CorrelatedRandomWalk { beta: f64 },
}

impl PolicySpec {
    pub fn policy(&self) -> CollectionPolicy<'static> {
        match *self {
            PolicySpec::RandomWalk => CollectionPolicy::RandomWalk,
            PolicySpec::CorrelatedRandomWalk { beta } => CollectionPolicy::CorrelatedRandomWalk { beta },
        }
    }
}

/// Perception data: one dataset per platform in `variants`, gathered in
/// generated worlds seeded from `world_seed` (never the evaluation world's
/// seed), one world per episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptionData {
    pub policy: PolicySpec,
    pub variants: Vec<DynamicsVariant>,
    pub world_seed: u64,
    pub episodes: usize,
    pub max_steps: usize,
    pub start: StartMode,
    pub seed: u64,
}

impl Default for PerceptionData {
    fn default() -> Self {
        Self {
            policy: PolicySpec::CorrelatedRandomWalk { beta: 0.8 },
            variants: vec![DynamicsVariant::Normal],
            world_seed: 1000,
            episodes: 5000,
            max_steps: 80,
            start: StartMode::RandomFree { margin: 0.3 },
            seed: 1,
        }
    }
}

impl PerceptionData {
    /// Collection settings for pooled source `source`.
    pub fn collect_config(&self, source: usize) -> CollectConfig {
        CollectConfig {
            episodes: self.episodes,
            max_steps: self.max_steps,
            min_transitions: 0,
            record_frames: true,
            start: self.start.clone(),
            vary_world: true,
            empty_world: false,
            seed: self.seed.wrapping_add(source as u64),
        }
    }
}

/// Dynamics data from the deployment variant, without observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsData {
    pub policy: PolicySpec,
    pub world_seed: u64,
    /// Episodes are added until at least this many steps are logged.
    pub min_transitions: usize,
    pub max_steps: usize,
    /// Drop obstacles so episodes end at walls only.
    pub empty_world: bool,
    pub seed: u64,
    /// Seed of the held-out set used to report model fidelity.
    pub test_seed: u64,
}

impl Default for DynamicsData {
    fn default() -> Self {
        Self { policy: PolicySpec::RandomWalk, world_seed: 2000, min_transitions: 5000, max_steps: 100, empty_world: true, seed: 2, test_seed: 102 }
    }
}

impl DynamicsData {
    pub fn collect_config(&self, seed: u64) -> CollectConfig {
        CollectConfig {
            episodes: 1,
            max_steps: self.max_steps,
            min_transitions: self.min_transitions,
            record_frames: false,
            start: StartMode::RandomFree { margin: 0.3 },
            vary_world: false,
            empty_world: self.empty_world,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub perception: PerceptionData,
    pub dynamics: DynamicsData,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub perception: PerceptionConfig,
    pub dynamics: DynamicsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerSection {
    pub perception: TrainConfig,
    pub dynamics: TrainConfig,
    /// Multiply `perception.steps` by the number of pooled sources so each
    /// source keeps the same gradient budget.
    pub perception_steps_per_source: bool,
}

impl Default for TrainerSection {
    /// The conv encoder underfits at the optimizer defaults within a few
    /// thousand steps, so perception trains faster and without decay.
    fn default() -> Self {
        let perception = TrainConfig {
            steps: 4000,
            eval_every: 500,
            adam: AdamConfig { learning_rate: 1e-3, weight_decay: 0.0, ..AdamConfig::default() },
            ..TrainConfig::default()
        };
        Self { perception, dynamics: TrainConfig::default(), perception_steps_per_source: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Start positions S, spread along the world's start line.
    pub starts: usize,
    /// Trials per start T; trials differ only in planner randomness.
    pub trials: usize,
    pub max_steps: usize,
    pub warm_start: bool,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let mpc = MpcConfig::default();
        Self { starts: 5, trials: 5, max_steps: mpc.max_steps, warm_start: mpc.warm_start, seed: 5 }
    }
}

impl EvalConfig {
    pub fn mpc(&self) -> MpcConfig {
        MpcConfig { max_steps: self.max_steps, warm_start: self.warm_start }
    }
}

/// Everything needed to regenerate one experiment, seeds included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Deployment variant for `collect`, `train-dynamics` and `evaluate`.
    pub variant: DynamicsVariant,
    /// Variants swept by `benchmark`.
    pub benchmark_variants: Vec<DynamicsVariant>,
    pub horizon: usize,
    pub world: WorldConfig,
    pub sim: SimConfig,
    pub render: RenderConfig,
    pub data: DataSection,
    pub model: ModelSection,
    pub trainer: TrainerSection,
    pub solver: SolverConfig,
    pub hierarchy: HierarchyConfig,
    pub reward: RewardFunction,
    pub evaluation: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            variant: DynamicsVariant::Normal,
            benchmark_variants: DynamicsVariant::ALL_DEFAULT.to_vec(),
            horizon: 6,
            world: WorldConfig::default(),
            sim: SimConfig::default(),
            render: RenderConfig::default(),
            data: DataSection::default(),
            model: ModelSection::default(),
            trainer: TrainerSection::default(),
            solver: SolverConfig::default(),
            hierarchy: HierarchyConfig::default(),
            reward: RewardFunction::default(),
            evaluation: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates; `origin` names the source in diagnostics.
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse { path: origin.to_string(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_toml(&text, &path.display().to_string())?)
    }

    /// The fully resolved config, every default and seed spelled out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config always serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.horizon == 0 {
            return bad("horizon must be positive".into());
        }
        for (section, h) in [("model.perception", self.model.perception.horizon), ("model.dynamics", self.model.dynamics.horizon)] {
            if h != self.horizon {
                return bad(format!("{section}.horizon = {h} disagrees with horizon = {}", self.horizon));
            }
        }
        let p = &self.model.perception;
        let r = &self.render;
        if (p.frames, p.rows, p.cols) != (r.frames, r.rows, r.cols) {
            return bad(format!(
                "model.perception expects {}x{}x{} observations but render produces {}x{}x{}",
                p.frames, p.rows, p.cols, r.frames, r.rows, r.cols
            ));
        }
        if self.model.dynamics.action_dim != 1 {
            return bad(format!("model.dynamics.action_dim must be 1, got {}", self.model.dynamics.action_dim));
        }
        if self.data.perception.episodes == 0 || self.data.perception.max_steps == 0 || self.data.dynamics.max_steps == 0 {
            return bad("data episode counts and max_steps must be positive".into());
        }
        if self.evaluation.starts == 0 || self.evaluation.trials == 0 || self.evaluation.max_steps == 0 {
            return bad("evaluation.starts, trials and max_steps must be positive".into());
        }
        if self.data.perception.variants.is_empty() {
            return bad("data.perception.variants must list at least one platform".into());
        }
        if self.benchmark_variants.is_empty() {
            return bad("benchmark_variants must not be empty".into());
        }
        if !(self.sim.dt > 0.0 && self.sim.speed > 0.0) {
            return bad(format!("sim.dt and sim.speed must be positive, got {} and {}", self.sim.dt, self.sim.speed));
        }
        r.validate().map_err(ConfigError::Invalid)?;
        self.world.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.eval_world().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        p.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.model.dynamics.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.trainer
            .perception
            .validate(self.data.perception.variants.len())
            .map_err(|e| ConfigError::Invalid(format!("trainer.perception: {e}")))?;
        self.trainer.dynamics.validate(1).map_err(|e| ConfigError::Invalid(format!("trainer.dynamics: {e}")))?;
        self.solver.validate().map_err(|e| ConfigError::Invalid(format!("solver: {e}")))?;
        self.hierarchy.validate().map_err(|e| ConfigError::Invalid(format!("hierarchy: {e}")))?;
        self.reward.validate().map_err(|e| ConfigError::Invalid(format!("reward: {e}")))?;
        for policy in [self.data.perception.policy, self.data.dynamics.policy] {
            if let PolicySpec::CorrelatedRandomWalk { beta } = policy {
                if !(0.0..1.0).contains(&beta) {
                    return bad(format!("correlated random walk needs beta in [0, 1), got {beta}"));
                }
            }
        }
        Ok(())
    }

    /// World used for evaluation: `evaluation.starts` start cells.
    pub fn eval_world(&self) -> WorldConfig {
        WorldConfig { start_count: self.evaluation.starts, ..self.world.clone() }
    }

    /// Dynamics model config for `variant` (state width follows the variant).
    pub fn dynamics_model(&self, variant: DynamicsVariant) -> DynamicsConfig {
        DynamicsConfig { state_dim: variant.state_dim(), ..self.model.dynamics.clone() }
    }
}
