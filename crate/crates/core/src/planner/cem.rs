use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{initial_mean, Objective, Solution};
use crate::error::PlanError;
use crate::geometry::{ActionBounds, ActionSeq};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CemConfig {
    pub population: usize,
    pub elite_fraction: f64,
    pub iterations: usize,
    /// Initial sampling std as a fraction of each action dim's bound width.
    pub init_std: f64,
    /// Floor on the refit std, same units as `init_std`.
    pub min_std: f64,
    /// Constant sequences evenly spaced from each dim's low to high bound,
    /// swapped in for samples in the first iteration. A warm-started mean
    /// pinned at one bound rarely samples the opposite extreme otherwise.
    pub anchors: usize,
    pub keep_candidates: bool,
}

impl Default for CemConfig {
    fn default() -> Self {
        Self { population: 128, elite_fraction: 0.1, iterations: 3, init_std: 0.3, min_std: 0.02, anchors: 5, keep_candidates: false }
    }
}

impl CemConfig {
    pub fn elites(&self) -> usize {
        (self.population as f64 * self.elite_fraction).round() as usize
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        let bad = |m: String| Err(PlanError::InvalidConfig(m));
        if self.iterations == 0 {
            return bad("cem.iterations must be at least 1".into());
        }
        if self.population as f64 * self.elite_fraction < 2.0 || self.elites() > self.population {
            return bad(format!(
                "cem needs population x elite_fraction >= 2 and at most the population, got {} x {}",
                self.population, self.elite_fraction
            ));
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite() && self.min_std >= 0.0 && self.min_std.is_finite()) {
            return bad(format!("cem std fractions must be non-negative, got {} / {}", self.init_std, self.min_std));
        }
        Ok(())
    }
}

fn write_anchors(cand: &mut [f64], bounds: &ActionBounds, len: usize, n: usize) {
    let d = bounds.dim();
    for j in 0..n {
        let f = if n == 1 { 0.5 } else { j as f64 / (n - 1) as f64 };
        for (k, v) in cand[j * len..(j + 1) * len].iter_mut().enumerate() {
            *v = bounds.clamp(k % d, bounds.low[k % d] + f * bounds.width(k % d));
        }
    }
}

/// Cross-entropy method with best-ever retention.
///
/// Each iteration scores the current mean plus `population - 1` clamped
/// Gaussian samples (the first `anchors` of them replaced by constant
/// sequences on the first iteration), refits mean and std to the elites, and keeps the best
/// candidate seen so far.
pub fn cem<R: Rng>(
    obj: &dyn Objective,
    bounds: &ActionBounds,
    cfg: &CemConfig,
    rng: &mut R,
    init: Option<&ActionSeq>,
) -> Result<Solution, PlanError> {
    cfg.validate()?;
    let (h, d) = (obj.horizon(), obj.action_dim());
    if bounds.dim() != d {
        return Err(PlanError::InvalidConfig(format!("bounds have {} dims, objective has {d}", bounds.dim())));
    }
    let len = h * d;
    let mut mean = initial_mean(bounds, h, init)?;
    let mut std: Vec<f64> = (0..len).map(|i| cfg.init_std * bounds.width(i % d)).collect();
    let floor: Vec<f64> = (0..len).map(|i| cfg.min_std * bounds.width(i % d)).collect();
    let n_elite = cfg.elites();

    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut history = Vec::with_capacity(cfg.iterations);
    let mut kept = cfg.keep_candidates.then(Vec::new);
    let mut discarded = 0;
    let mut cand = vec![0.0; cfg.population * len];
    for it in 0..cfg.iterations {
        cand[..len].copy_from_slice(&mean);
        for (i, v) in cand[len..].iter_mut().enumerate() {
            let k = i % len;
            let z: f64 = rng.sample(StandardNormal);
            *v = bounds.clamp(k % d, mean[k] + std[k] * z);
        }
        if it == 0 {
            write_anchors(&mut cand[len..], bounds, len, cfg.anchors.min(cfg.population - 1));
        }
        let scores = obj.score(&cand)?;
        let mut ranked: Vec<usize> = (0..cfg.population).filter(|&i| scores[i].is_finite()).collect();
        discarded += cfg.population - ranked.len();
        if ranked.is_empty() {
            return Err(PlanError::AllCandidatesDiscarded(cfg.population));
        }
        ranked.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        if let Some(k) = kept.as_mut() {
            k.extend(ranked.iter().map(|&i| (ActionSeq::new(cand[i * len..(i + 1) * len].to_vec(), d), scores[i])));
        }
        let top = ranked[0];
        if best.as_ref().is_none_or(|(_, s)| scores[top] > *s) {
            best = Some((cand[top * len..(top + 1) * len].to_vec(), scores[top]));
        }
        history.push(best.as_ref().map_or(f64::NAN, |b| b.1));

        let elites = &ranked[..n_elite.min(ranked.len())];
        let m = elites.len() as f64;
        for k in 0..len {
            let mu = elites.iter().map(|&i| cand[i * len + k]).sum::<f64>() / m;
            let var = elites.iter().map(|&i| (cand[i * len + k] - mu).powi(2)).sum::<f64>() / m;
            mean[k] = bounds.clamp(k % d, mu);
            std[k] = var.sqrt().max(floor[k]);
        }
    }
    let (actions, objective) = best.expect("at least one finite candidate");
    Ok(Solution { actions: ActionSeq::new(actions, d), objective, history, candidates: kept, discarded })
}
