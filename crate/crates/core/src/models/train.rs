use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{dynamics_loss, perception_loss, DynamicsModel, PerceptionModel};
use crate::datastore::{extract_windows, Dataset, Window, WindowKind};
use crate::error::{DataError, ModelError};
use crate::geometry::PoseDelta;
use crate::tensor::{Adam, AdamConfig, Gradients, Params, Tape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub adam: AdamConfig,
    /// Fraction of every batch drawn from windows that contain a collision
    /// (`0.5` is a 50:50 split). `None` samples windows uniformly.
    pub collision_rebalance: Option<f64>,
    /// Relative weight per pooled source; normalized, so `[33, 33, 33]`
    /// works. `None` samples pooled windows uniformly.
    pub source_ratios: Option<Vec<f64>>,
    /// Fraction of episodes (not windows) held out per source.
    pub validation_fraction: f64,
    /// Steps between loss-curve points.
    pub eval_every: usize,
    /// Cap on windows used for each loss-curve evaluation.
    pub eval_windows: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            steps: 2000,
            adam: AdamConfig::default(),
            collision_rebalance: None,
            source_ratios: None,
            validation_fraction: 0.1,
            eval_every: 100,
            eval_windows: 512,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, sources: usize) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.batch_size == 0 || self.eval_every == 0 || self.eval_windows == 0 {
            return bad("batch_size, eval_every and eval_windows must be positive".into());
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad(format!("validation_fraction must be in [0, 1), got {}", self.validation_fraction));
        }
        if let Some(p) = self.collision_rebalance {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("collision_rebalance must be in [0, 1], got {p}"));
            }
        }
        if let Some(r) = &self.source_ratios {
            if r.len() != sources {
                return bad(format!("{} source ratios given for {sources} sources", r.len()));
            }
            if r.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                return bad(format!("source ratios must be positive, got {r:?}"));
            }
        }
        self.adam.validate().map_err(ModelError::InvalidConfig)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossPoint {
    pub step: usize,
    /// Mean per-window loss on a fixed subset of training windows.
    pub train_loss: f64,
    /// Mean per-window loss on held-out episodes, when any exist.
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub curve: Vec<LossPoint>,
    pub train_windows: usize,
    pub val_windows: usize,
}

impl TrainReport {
    pub fn initial(&self) -> &LossPoint {
        &self.curve[0]
    }

    pub fn last(&self) -> &LossPoint {
        self.curve.last().expect("curve has the step-0 point")
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,train_loss,val_loss\n");
        for p in &self.curve {
            let v = p.val_loss.map(|v| v.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{}\n", p.step, p.train_loss, v));
        }
        s
    }
}

/// Splits `total` into integer counts proportional to `weights` (largest remainder).
pub fn allocate_counts(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let short = total - counts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    counts
}

/// A window identified by `(source, index into that source's windows)`.
type Ref = (usize, usize);

struct Split {
    train: Vec<Vec<usize>>,
    val: Vec<Ref>,
}

fn split_by_episode(windows: &[Vec<Window>], sources: &[&Dataset], frac: f64, rng: &mut ChaCha8Rng) -> Split {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (s, ws) in windows.iter().enumerate() {
        let n_eps = sources[s].episodes.len();
        let mut eps: Vec<usize> = (0..n_eps).collect();
        eps.shuffle(rng);
        let n_val = if n_eps >= 2 && frac > 0.0 { ((frac * n_eps as f64).round() as usize).clamp(1, n_eps - 1) } else { 0 };
        let mut is_val = vec![false; n_eps];
        eps[..n_val].iter().for_each(|&e| is_val[e] = true);
        let mut tr = Vec::new();
        for (i, w) in ws.iter().enumerate() {
            if is_val[w.episode] {
                val.push((s, i));
            } else {
                tr.push(i);
            }
        }
        train.push(tr);
    }
    Split { train, val }
}

/// Draws batches with the configured source and collision composition.
struct Sampler {
    /// Per source: (collision windows, collision-free windows).
    strata: Vec<(Vec<usize>, Vec<usize>)>,
    all: Vec<Ref>,
    /// All sources pooled: (collision windows, collision-free windows).
    pooled: (Vec<Ref>, Vec<Ref>),
    source_counts: Option<Vec<usize>>,
    collision: Option<f64>,
}

impl Sampler {
    fn new(windows: &[Vec<Window>], train: &[Vec<usize>], cfg: &TrainConfig) -> Result<Self, ModelError> {
        let strata: Vec<_> =
            train.iter().enumerate().map(|(s, idx)| idx.iter().partition::<Vec<usize>, _>(|&&i| windows[s][i].has_collision)).collect();
        let all: Vec<Ref> = train.iter().enumerate().flat_map(|(s, idx)| idx.iter().map(move |&i| (s, i))).collect();
        if all.is_empty() {
            return Err(ModelError::EmptyWindows("no training windows after the validation split".into()));
        }
        if let Some(r) = &cfg.source_ratios {
            if let Some(s) = train.iter().position(Vec::is_empty) {
                return Err(ModelError::EmptyWindows(format!("source {s} has no training windows but a ratio of {}", r[s])));
            }
        }
        let source_counts = cfg.source_ratios.as_ref().map(|r| allocate_counts(cfg.batch_size, r));
        let pooled = all.iter().partition(|&&(s, i)| windows[s][i].has_collision);
        Ok(Self { strata, all, pooled, source_counts, collision: cfg.collision_rebalance })
    }

    fn draw_from(&self, s: usize, n: usize, rng: &mut ChaCha8Rng, out: &mut Vec<Ref>) {
        let (col, free) = &self.strata[s];
        let n_col = match self.collision {
            Some(p) if !col.is_empty() && !free.is_empty() => (p * n as f64).round() as usize,
            Some(_) if free.is_empty() => n,
            _ if self.collision.is_none() => {
                // Uniform over the source's windows.
                for _ in 0..n {
                    let k = rng.gen_range(0..col.len() + free.len());
                    out.push((s, if k < col.len() { col[k] } else { free[k - col.len()] }));
                }
                return;
            }
            _ => 0,
        };
        for _ in 0..n_col {
            out.push((s, col[rng.gen_range(0..col.len())]));
        }
        for _ in n_col..n {
            out.push((s, free[rng.gen_range(0..free.len())]));
        }
    }

    fn batch(&self, size: usize, rng: &mut ChaCha8Rng) -> Vec<Ref> {
        let mut out = Vec::with_capacity(size);
        match &self.source_counts {
            Some(counts) => {
                for (s, &n) in counts.iter().enumerate() {
                    self.draw_from(s, n, rng, &mut out);
                }
            }
            None if self.collision.is_some() => {
                // Pool all sources into one stratum pair.
                let (col, free) = &self.pooled;
                let p = self.collision.unwrap_or(0.0);
                let n_col = if col.is_empty() {
                    0
                } else if free.is_empty() {
                    size
                } else {
                    (p * size as f64).round() as usize
                };
                for _ in 0..n_col {
                    out.push(col[rng.gen_range(0..col.len())]);
                }
                for _ in n_col..size {
                    out.push(free[rng.gen_range(0..free.len())]);
                }
            }
            None => {
                for _ in 0..size {
                    out.push(self.all[rng.gen_range(0..self.all.len())]);
                }
            }
        }
        out
    }
}

/// Runs Adam on `loss(model, batch, with_grad)`; `loss` returns the summed
/// batch loss and, when asked, its parameter gradients.
fn run_loop<M>(
    model: &mut M,
    params: fn(&mut M) -> &mut Params,
    windows: &[Vec<Window>],
    sources: &[&Dataset],
    cfg: &TrainConfig,
    loss: impl Fn(&M, &[Ref]) -> Result<(f64, Option<Gradients>), ModelError>,
) -> Result<TrainReport, ModelError> {
    cfg.validate(sources.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let split = split_by_episode(windows, sources, cfg.validation_fraction, &mut rng);
    let sampler = Sampler::new(windows, &split.train, cfg)?;
    let mut train_eval = sampler.all.clone();
    train_eval.shuffle(&mut rng);
    train_eval.truncate(cfg.eval_windows);
    let mut val_eval = split.val.clone();
    val_eval.shuffle(&mut rng);
    val_eval.truncate(cfg.eval_windows);

    let eval = |m: &M, refs: &[Ref]| -> Result<f64, ModelError> {
        let mut total = 0.0;
        for chunk in refs.chunks(256) {
            total += loss(m, chunk)?.0;
        }
        Ok(total / refs.len() as f64)
    };
    let point = |m: &M, step: usize| -> Result<LossPoint, ModelError> {
        let val_loss = if val_eval.is_empty() { None } else { Some(eval(m, &val_eval)?) };
        Ok(LossPoint { step, train_loss: eval(m, &train_eval)?, val_loss })
    };

    let mut adam = Adam::new(cfg.adam.clone(), params(model));
    let mut curve = vec![point(model, 0)?];
    for step in 1..=cfg.steps {
        let batch = sampler.batch(cfg.batch_size, &mut rng);
        let (_, grads) = loss(model, &batch)?;
        let p = params(model);
        grads.expect("gradients requested").accumulate_into(p);
        adam.step(p)?;
        if step % cfg.eval_every == 0 || step == cfg.steps {
            curve.push(point(model, step)?);
        }
    }
    Ok(TrainReport { curve, train_windows: sampler.all.len(), val_windows: split.val.len() })
}

fn perception_params(m: &mut PerceptionModel) -> &mut Params {
    &mut m.params
}

fn dynamics_params(m: &mut DynamicsModel) -> &mut Params {
    &mut m.params
}

/// Trains on the pooled perception windows of `sources`. Sources may come
/// from different dynamics variants; only observation dims must agree.
pub fn train_perception(model: &mut PerceptionModel, sources: &[&Dataset], cfg: &TrainConfig) -> Result<TrainReport, ModelError> {
    if sources.is_empty() {
        return Err(ModelError::EmptyWindows("no perception datasets given".into()));
    }
    let c = model.config.clone();
    let mut dims = Vec::new();
    for ds in sources {
        let m = ds.manifest()?;
        dims.push((m.frames_per_obs, m.frame_rows, m.frame_cols));
    }
    if let Some(bad) = dims.iter().position(|&d| d != (c.frames, c.rows, c.cols)) {
        let list = dims.iter().enumerate().map(|(i, (f, r, w))| format!("source {i}: {f}x{r}x{w}")).collect::<Vec<_>>().join(", ");
        return Err(DataError::DimMismatch {
            what: format!("observation (model {}x{}x{}; {list})", c.frames, c.rows, c.cols),
            expected: c.obs_len(),
            found: dims[bad].0 * dims[bad].1 * dims[bad].2,
        }
        .into());
    }
    let windows = sources.iter().map(|ds| extract_windows(ds, c.horizon, WindowKind::Perception)).collect::<Result<Vec<_>, _>>()?;
    let h = c.horizon;
    let obs_len = c.obs_len();
    let loss = |m: &PerceptionModel, refs: &[Ref]| -> Result<(f64, Option<Gradients>), ModelError> {
        let n = refs.len();
        let mut obs = vec![0.0; n * obs_len];
        let mut deltas = Vec::with_capacity(n * h * PoseDelta::DIM);
        let mut labels = Vec::with_capacity(n * h);
        for (k, &(s, i)) in refs.iter().enumerate() {
            let w = &windows[s][i];
            sources[s].episodes[w.episode].write_observation(w.t, &mut obs[k * obs_len..(k + 1) * obs_len]);
            deltas.extend_from_slice(&w.deltas);
            labels.extend_from_slice(&w.rewards);
        }
        let tape = Tape::new();
        let p = m.bind(&tape, true);
        let o = tape.constant(&[n, c.frames, c.rows, c.cols], obs)?;
        let d = tape.constant(&[n, h, PoseDelta::DIM], deltas)?;
        let l = perception_loss(m, &p, o, d, &labels)?;
        Ok((l.item(), Some(tape.backward(l)?)))
    };
    run_loop(model, perception_params, &windows, sources, cfg, loss)
}

/// Trains on the dynamics windows of `sources`, whose state and action dims
/// must match the model.
pub fn train_dynamics(model: &mut DynamicsModel, sources: &[&Dataset], cfg: &TrainConfig) -> Result<TrainReport, ModelError> {
    if sources.is_empty() {
        return Err(ModelError::EmptyWindows("no dynamics datasets given".into()));
    }
    let c = model.config.clone();
    for (i, ds) in sources.iter().enumerate() {
        let m = ds.manifest()?;
        for (what, expected, found) in [("state", c.state_dim, m.state_dim), ("action", c.action_dim, m.action_dim)] {
            if expected != found {
                return Err(DataError::DimMismatch { what: format!("source {i} ({}) {what}", m.variant), expected, found }.into());
            }
        }
    }
    let windows = sources.iter().map(|ds| extract_windows(ds, c.horizon, WindowKind::Dynamics)).collect::<Result<Vec<_>, _>>()?;
    let per = c.horizon * c.action_dim;
    let loss = |m: &DynamicsModel, refs: &[Ref]| -> Result<(f64, Option<Gradients>), ModelError> {
        let n = refs.len();
        let mut states = Vec::with_capacity(n * c.state_dim);
        let mut actions = Vec::with_capacity(n * per);
        let mut labels = Vec::with_capacity(n * c.horizon * PoseDelta::DIM);
        for &(s, i) in refs {
            let w = &windows[s][i];
            states.extend_from_slice(&w.state);
            actions.extend_from_slice(&w.actions);
            labels.extend_from_slice(&w.deltas);
        }
        let tape = Tape::new();
        let p = m.bind(&tape, true);
        let a = tape.constant(&[n, per], actions)?;
        let st = (c.state_dim > 0).then(|| tape.constant(&[n, c.state_dim], states)).transpose()?;
        let l = dynamics_loss(m, &p, st, a, &labels)?;
        Ok((l.item(), Some(tape.backward(l)?)))
    };
    run_loop(model, dynamics_params, &windows, sources, cfg, loss)
}
