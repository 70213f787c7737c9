use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, EpisodeRecord};
use crate::error::DataError;
use crate::geometry::{Action, ActionBounds};
use crate::sim::{run_episode, DynamicsVariant, Policy, PolicyContext, RenderConfig, SimConfig, Simulator, World, WorldConfig};

/// Builds the behaviour policy for one on-policy collection episode.
pub trait PolicyFactory: Sync {
    fn make(&self, episode: usize, seed: u64) -> Box<dyn Policy + '_>;
}

pub enum CollectionPolicy<'a> {
    RandomWalk,
    /// AR(1) smoothing `a_t = β a_{t-1} + (1 - β) u`, `β ∈ [0, 1)`.
    CorrelatedRandomWalk {
        beta: f64,
    },
    OnPolicy(&'a dyn PolicyFactory),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StartMode {
    /// Uniform pose with at least `margin` clearance.
    RandomFree { margin: f64 },
    /// Cycle through the world's designated start cells.
    StartCells,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectConfig {
    pub episodes: usize,
    pub max_steps: usize,
    /// Keep adding episodes past `episodes` until this many steps are logged.
    pub min_transitions: usize,
    pub record_frames: bool,
    pub start: StartMode,
    /// Use world seed `world.rng_seed + episode` for every episode.
    pub vary_world: bool,
    /// Drop all obstacles (walls remain).
    pub empty_world: bool,
    pub seed: u64,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            episodes: 100,
            max_steps: 100,
            min_transitions: 0,
            record_frames: true,
            start: StartMode::RandomFree { margin: 0.3 },
            vary_world: true,
            empty_world: false,
            seed: 0,
        }
    }
}

/// Upper bound on episodes when topping up to `min_transitions`.
const MAX_EPISODES: usize = 1_000_000;

pub struct RandomWalk {
    bounds: ActionBounds,
    rng: ChaCha8Rng,
}

impl RandomWalk {
    pub fn new(bounds: ActionBounds, rng: ChaCha8Rng) -> Self {
        Self { bounds, rng }
    }

    pub fn sample(&mut self) -> f64 {
        uniform_in(&self.bounds, &mut self.rng)
    }
}

impl Policy for RandomWalk {
    fn name(&self) -> String {
        "random-walk".into()
    }

    fn act(&mut self, _ctx: &PolicyContext<'_>) -> Result<Action, String> {
        Ok(Action::angular(self.sample()))
    }
}

pub struct CorrelatedRandomWalk {
    bounds: ActionBounds,
    beta: f64,
    prev: Option<f64>,
    rng: ChaCha8Rng,
}

impl CorrelatedRandomWalk {
    pub fn new(bounds: ActionBounds, beta: f64, rng: ChaCha8Rng) -> Result<Self, DataError> {
        if !(0.0..1.0).contains(&beta) {
            return Err(DataError::InvalidConfig(format!("correlated random walk needs beta in [0, 1), got {beta}")));
        }
        Ok(Self { bounds, beta, prev: None, rng })
    }

    pub fn sample(&mut self) -> f64 {
        let u = uniform_in(&self.bounds, &mut self.rng);
        let prev = self.prev.unwrap_or(u);
        let a = self.bounds.clamp(0, self.beta * prev + (1.0 - self.beta) * u);
        self.prev = Some(a);
        a
    }
}

impl Policy for CorrelatedRandomWalk {
    fn name(&self) -> String {
        format!("correlated-random-walk({})", self.beta)
    }

    fn act(&mut self, _ctx: &PolicyContext<'_>) -> Result<Action, String> {
        Ok(Action::angular(self.sample()))
    }
}

fn uniform_in<R: Rng>(b: &ActionBounds, rng: &mut R) -> f64 {
    let lo = b.low[0] + crate::geometry::BOUND_EPS;
    let hi = b.high[0] - crate::geometry::BOUND_EPS;
    rng.gen_range(lo..hi)
}

/// Independent stream per `(seed, index)`.
pub(crate) fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Runs `cfg.episodes` episodes (more if `min_transitions` demands it).
pub fn collect(
    policy: &CollectionPolicy<'_>,
    world: &WorldConfig,
    variant: DynamicsVariant,
    sim_cfg: &SimConfig,
    render: &RenderConfig,
    cfg: &CollectConfig,
) -> Result<Dataset, DataError> {
    if cfg.episodes == 0 || cfg.max_steps == 0 {
        return Err(DataError::InvalidConfig("episodes and max_steps must be positive".into()));
    }
    if let CollectionPolicy::CorrelatedRandomWalk { beta } = policy {
        if !(0.0..1.0).contains(beta) {
            return Err(DataError::InvalidConfig(format!("correlated random walk needs beta in [0, 1), got {beta}")));
        }
    }
    let mut episodes: Vec<EpisodeRecord> = Vec::new();
    let mut steps = 0usize;
    let mut i = 0usize;
    let mut cached: Option<(u64, Simulator)> = None;
    while i < cfg.episodes || (steps < cfg.min_transitions && i < MAX_EPISODES) {
        let world_seed = if cfg.vary_world { world.rng_seed.wrapping_add(i as u64) } else { world.rng_seed };
        if cached.as_ref().is_none_or(|(s, _)| *s != world_seed) {
            let wc = WorldConfig { rng_seed: world_seed, ..world.clone() };
            let w = if cfg.empty_world { World::empty(&wc)? } else { World::generate(&wc)? };
            cached = Some((world_seed, Simulator::new(w, variant, *sim_cfg, render.clone())));
        }
        let sim = &cached.as_ref().expect("simulator built above").1;
        // Stream 2i drives the start pose, stream 2i + 1 the policy.
        let mut start_rng = stream_rng(cfg.seed, 2 * i as u64);
        let start = match &cfg.start {
            StartMode::RandomFree { margin } => sim.world.sample_free_pose(&mut start_rng, *margin),
            StartMode::StartCells => {
                let cells = world.start_cells();
                cells[i % cells.len()]
            }
        };
        let policy_rng = stream_rng(cfg.seed, 2 * i as u64 + 1);
        let mut behaviour: Box<dyn Policy + '_> = match policy {
            CollectionPolicy::RandomWalk => Box::new(RandomWalk::new(variant.bounds(), policy_rng)),
            CollectionPolicy::CorrelatedRandomWalk { beta } => Box::new(CorrelatedRandomWalk::new(variant.bounds(), *beta, policy_rng)?),
            CollectionPolicy::OnPolicy(f) => {
                let mut r = policy_rng;
                f.make(i, r.gen())
            }
        };
        let rec = run_episode(behaviour.as_mut(), sim, start, cfg.max_steps, cfg.record_frames)?;
        steps += rec.len();
        episodes.push(rec);
        i += 1;
    }
    Dataset::new(episodes)
}
