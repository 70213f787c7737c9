use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{initial_mean, Objective, Solution};
use crate::error::PlanError;
use crate::geometry::{ActionBounds, ActionSeq};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MppiConfig {
    pub population: usize,
    /// Softmax temperature λ.
    pub temperature: f64,
    /// Perturbation std as a fraction of each action dim's bound width.
    pub noise_std: f64,
    /// Rounds of perturb-and-average, each centred on the previous average.
    pub iterations: usize,
    /// Factor applied to the noise std after each round.
    pub noise_decay: f64,
    pub keep_candidates: bool,
}

impl Default for MppiConfig {
    fn default() -> Self {
        Self { population: 128, temperature: 0.005, noise_std: 0.3, iterations: 6, noise_decay: 0.5, keep_candidates: false }
    }
}

impl MppiConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(PlanError::InvalidConfig(format!("mppi.temperature must be positive, got {}", self.temperature)));
        }
        if self.population < 2 || self.iterations == 0 {
            return Err(PlanError::InvalidConfig("mppi needs population >= 2 and iterations >= 1".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(PlanError::InvalidConfig(format!("mppi.noise_std must be non-negative, got {}", self.noise_std)));
        }
        if !(self.noise_decay > 0.0 && self.noise_decay <= 1.0) {
            return Err(PlanError::InvalidConfig(format!("mppi.noise_decay must be in (0, 1], got {}", self.noise_decay)));
        }
        Ok(())
    }
}

/// Softmax weights `exp((R_i − max R) / λ)`, normalized. Non-finite scores get weight 0.
pub fn mppi_weights(scores: &[f64], temperature: f64) -> Vec<f64> {
    let max = scores.iter().copied().filter(|s| s.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|&s| if s.is_finite() { ((s - max) / temperature).exp() } else { 0.0 }).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|w| w / z).collect()
}

/// Model predictive path integral update around a nominal sequence.
///
/// The nominal itself is candidate 0. The answer is the weight-averaged
/// candidate, which may score below the best individual sample.
pub fn mppi<R: Rng>(
    obj: &dyn Objective,
    bounds: &ActionBounds,
    cfg: &MppiConfig,
    rng: &mut R,
    init: Option<&ActionSeq>,
) -> Result<Solution, PlanError> {
    cfg.validate()?;
    let (h, d) = (obj.horizon(), obj.action_dim());
    if bounds.dim() != d {
        return Err(PlanError::InvalidConfig(format!("bounds have {} dims, objective has {d}", bounds.dim())));
    }
    let len = h * d;
    let mut std: Vec<f64> = (0..len).map(|i| cfg.noise_std * bounds.width(i % d)).collect();
    let mut nominal = initial_mean(bounds, h, init)?;
    let mut history = Vec::with_capacity(cfg.iterations);
    let mut kept = cfg.keep_candidates.then(Vec::new);
    let mut discarded = 0;
    let mut cand = vec![0.0; cfg.population * len];
    let mut objective = f64::NAN;
    for _ in 0..cfg.iterations {
        cand[..len].copy_from_slice(&nominal);
        for (i, v) in cand[len..].iter_mut().enumerate() {
            let k = i % len;
            let z: f64 = rng.sample(StandardNormal);
            *v = bounds.clamp(k % d, nominal[k] + std[k] * z);
        }
        let scores = obj.score(&cand)?;
        let finite = scores.iter().filter(|s| s.is_finite()).count();
        discarded += cfg.population - finite;
        if finite == 0 {
            return Err(PlanError::AllCandidatesDiscarded(cfg.population));
        }
        if let Some(k) = kept.as_mut() {
            k.extend(
                (0..cfg.population).filter(|&i| scores[i].is_finite()).map(|i| (ActionSeq::new(cand[i * len..(i + 1) * len].to_vec(), d), scores[i])),
            );
        }
        let w = mppi_weights(&scores, cfg.temperature);
        for (k, n) in nominal.iter_mut().enumerate() {
            let avg: f64 = w.iter().enumerate().map(|(i, wi)| if *wi > 0.0 { wi * cand[i * len + k] } else { 0.0 }).sum();
            *n = bounds.clamp(k % d, avg);
        }
        objective = obj.score(&nominal)?[0];
        history.push(objective);
        std.iter_mut().for_each(|s| *s *= cfg.noise_decay);
    }
    if !objective.is_finite() {
        return Err(PlanError::AllCandidatesDiscarded(1));
    }
    Ok(Solution { actions: ActionSeq::new(nominal, d), objective, history, candidates: kept, discarded })
}
