use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_len, init_dense, ModelKind};
use crate::error::ModelError;
use crate::geometry::{PoseDelta, PoseDeltaSeq, RewardSeq};
use crate::sim::Observation;
use crate::tensor::{ParamId, Params, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptionConfig {
    pub horizon: usize,
    pub frames: usize,
    pub rows: usize,
    pub cols: usize,
    /// Output channels of the stride-2, 3x3 convolution stack.
    pub conv_channels: Vec<usize>,
    pub latent: usize,
    /// Width of the two hidden layers of the per-step head.
    pub head_hidden: usize,
    pub init_seed: u64,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        Self { horizon: 6, frames: 2, rows: 16, cols: 32, conv_channels: vec![8, 16, 16], latent: 128, head_hidden: 64, init_seed: 0 }
    }
}

impl PerceptionConfig {
    pub fn obs_len(&self) -> usize {
        self.frames * self.rows * self.cols
    }

    /// Spatial size after the conv stack.
    fn conv_out(&self) -> (usize, usize) {
        let step = |n: usize| (n + 2 - 3) / 2 + 1;
        self.conv_channels.iter().fold((self.rows, self.cols), |(h, w), _| (step(h), step(w)))
    }

    fn flat_len(&self) -> usize {
        let (h, w) = self.conv_out();
        self.conv_channels.last().copied().unwrap_or(self.frames) * h * w
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.horizon == 0 {
            return bad("perception horizon must be positive".into());
        }
        if self.frames == 0 || self.rows < 3 || self.cols < 3 {
            return bad(format!("observation {}x{}x{} too small", self.frames, self.rows, self.cols));
        }
        if self.conv_channels.contains(&0) || self.latent == 0 || self.head_hidden == 0 {
            return bad("layer widths must be positive".into());
        }
        let (mut h, mut w) = (self.rows, self.cols);
        for _ in &self.conv_channels {
            if h < 2 || w < 2 {
                return bad(format!("conv stack of depth {} shrinks a {}x{} image to nothing", self.conv_channels.len(), self.rows, self.cols));
            }
            h = (h - 1) / 2 + 1;
            w = (w - 1) / 2 + 1;
        }
        Ok(())
    }
}

/// Observation encoder plus a per-step reward head shared across the horizon.
///
/// The head's first layer acts on `[latent, δp_h]`; it is split into a latent
/// part computed once per observation and a pose part computed per step,
/// which is the same affine map.
#[derive(Debug, Clone, PartialEq)]
pub struct PerceptionModel {
    pub config: PerceptionConfig,
    pub params: Params,
    ids: Ids,
}

#[derive(Debug, Clone, PartialEq)]
struct Ids {
    conv: Vec<(ParamId, ParamId)>,
    enc: (ParamId, ParamId),
    head_lat: ParamId,
    head_pose: ParamId,
    head_b: ParamId,
    head2: (ParamId, ParamId),
    out: (ParamId, ParamId),
}

/// Parameters placed on one tape.
pub struct BoundPerception<'t> {
    conv: Vec<(Var<'t>, Var<'t>)>,
    enc: (Var<'t>, Var<'t>),
    head_lat: Var<'t>,
    head_pose: Var<'t>,
    head_b: Var<'t>,
    head2: (Var<'t>, Var<'t>),
    out: (Var<'t>, Var<'t>),
}

impl PerceptionModel {
    pub fn new(config: PerceptionConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut params = Params::new();
        let mut conv = Vec::new();
        let mut in_ch = config.frames;
        for (i, &c) in config.conv_channels.iter().enumerate() {
            let fan_in = in_ch * 9;
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = params.add(format!("conv{i}.w"), Tensor::uniform(&[c, in_ch, 3, 3], bound, &mut rng));
            let b = params.add(format!("conv{i}.b"), Tensor::uniform(&[c], bound, &mut rng));
            conv.push((w, b));
            in_ch = c;
        }
        let enc = init_dense(&mut params, "enc", config.flat_len(), config.latent, &mut rng);
        let hh = config.head_hidden;
        let bound = 1.0 / ((config.latent + PoseDelta::DIM) as f64).sqrt();
        let head_lat = params.add("head.w_latent", Tensor::uniform(&[config.latent, hh], bound, &mut rng));
        let head_pose = params.add("head.w_pose", Tensor::uniform(&[PoseDelta::DIM, hh], bound, &mut rng));
        let head_b = params.add("head.b", Tensor::uniform(&[hh], bound, &mut rng));
        let head2 = init_dense(&mut params, "head2", hh, hh, &mut rng);
        let out = init_dense(&mut params, "out", hh, 1, &mut rng);
        Ok(Self { config, params, ids: Ids { conv, enc, head_lat, head_pose, head_b, head2, out } })
    }

    pub fn horizon(&self) -> usize {
        self.config.horizon
    }

    /// Places the parameters on `tape`, tracked for gradients iff `train`.
    pub fn bind<'t>(&self, tape: &'t Tape, train: bool) -> BoundPerception<'t> {
        let p = |id: ParamId| if train { tape.param(&self.params, id) } else { tape.frozen_param(&self.params, id) };
        let ids = &self.ids;
        BoundPerception {
            conv: ids.conv.iter().map(|&(w, b)| (p(w), p(b))).collect(),
            enc: (p(ids.enc.0), p(ids.enc.1)),
            head_lat: p(ids.head_lat),
            head_pose: p(ids.head_pose),
            head_b: p(ids.head_b),
            head2: (p(ids.head2.0), p(ids.head2.1)),
            out: (p(ids.out.0), p(ids.out.1)),
        }
    }

    /// Encodes `[B, frames, rows, cols]` observations into the latent part of
    /// the head's first layer, `[B, head_hidden]`.
    pub fn encode<'t>(&self, p: &BoundPerception<'t>, obs: Var<'t>) -> Result<Var<'t>, ModelError> {
        let c = &self.config;
        let shape = obs.shape();
        if shape.len() != 4 || shape[1..] != [c.frames, c.rows, c.cols] {
            return Err(ModelError::DimMismatch { what: "observation", expected: c.obs_len(), found: shape[1..].iter().product() });
        }
        let mut x = obs;
        for (w, b) in &p.conv {
            x = x.conv2d(w, b, 2, 1)?.relu();
        }
        let x = x.reshape(&[shape[0], c.flat_len()])?;
        let latent = x.matmul(&p.enc.0)?.add_row(&p.enc.1)?.relu();
        Ok(latent.matmul(&p.head_lat)?)
    }

    /// Reward predictions `[N, H]` for `N` delta sequences `[N, H, 3]`;
    /// sequence `i` is paired with encoded observation `obs_index[i]`.
    pub fn head<'t>(&self, p: &BoundPerception<'t>, encoded: Var<'t>, deltas: Var<'t>, obs_index: &[usize]) -> Result<Var<'t>, ModelError> {
        let h = self.config.horizon;
        let ds = deltas.shape();
        if ds.len() != 3 || ds[2] != PoseDelta::DIM {
            return Err(ModelError::DimMismatch { what: "pose delta", expected: PoseDelta::DIM, found: *ds.last().unwrap_or(&0) });
        }
        if ds[1] != h {
            return Err(ModelError::HorizonMismatch { expected: h, found: ds[1] });
        }
        let n = ds[0];
        if obs_index.len() != n {
            return Err(ModelError::DimMismatch { what: "observation index", expected: n, found: obs_index.len() });
        }
        let rows: Vec<usize> = obs_index.iter().flat_map(|&i| std::iter::repeat_n(i, h)).collect();
        let lat = encoded.gather_rows(rows)?;
        let d = deltas.reshape(&[n * h, PoseDelta::DIM])?;
        let z = lat.add(&d.matmul(&p.head_pose)?)?.add_row(&p.head_b)?.relu();
        let z = z.matmul(&p.head2.0)?.add_row(&p.head2.1)?.relu();
        let logit = z.matmul(&p.out.0)?.add_row(&p.out.1)?;
        Ok(logit.sigmoid().neg().reshape(&[n, h])?)
    }

    /// Predictions for `N` delta sequences (flat `N*H*3`) all paired with
    /// one observation. Returns flat `N*H`.
    pub fn predict_many(&self, obs: &Observation, deltas: &[f64]) -> Result<Vec<f64>, ModelError> {
        let c = &self.config;
        if obs.shape() != [c.frames, c.rows, c.cols] {
            return Err(ModelError::DimMismatch { what: "observation", expected: c.obs_len(), found: obs.data.len() });
        }
        let per = c.horizon * PoseDelta::DIM;
        check_len("pose delta sequence", deltas.len(), per)?;
        let n = deltas.len() / per;
        let tape = Tape::new();
        let p = self.bind(&tape, false);
        let o = tape.constant(&[1, c.frames, c.rows, c.cols], obs.data.clone())?;
        let d = tape.constant(&[n, c.horizon, PoseDelta::DIM], deltas.to_vec())?;
        let enc = self.encode(&p, o)?;
        let r = self.head(&p, enc, d, &vec![0; n])?;
        Ok(r.value().to_vec())
    }

    pub fn predict(&self, obs: &Observation, dp: &PoseDeltaSeq) -> Result<RewardSeq, ModelError> {
        if dp.len() != self.config.horizon {
            return Err(ModelError::HorizonMismatch { expected: self.config.horizon, found: dp.len() });
        }
        Ok(RewardSeq(self.predict_many(obs, &dp.flatten())?))
    }

    pub fn kind() -> ModelKind {
        ModelKind::Perception
    }
}

/// `Σ_batch ‖r̂ − r‖²` on the tape. Labels must lie in `[−1, 0]`.
pub fn perception_loss<'t>(
    model: &PerceptionModel,
    p: &BoundPerception<'t>,
    obs: Var<'t>,
    deltas: Var<'t>,
    labels: &[f64],
) -> Result<Var<'t>, ModelError> {
    if let Some(&bad) = labels.iter().find(|&&r| !(-1.0..=0.0).contains(&r)) {
        return Err(ModelError::InvalidLabel { value: bad });
    }
    let n = obs.shape()[0];
    let enc = model.encode(p, obs)?;
    let idx: Vec<usize> = (0..n).collect();
    let pred = model.head(p, enc, deltas, &idx)?;
    let target = obs.tape().constant(&pred.shape(), labels.to_vec())?;
    Ok(pred.squared_error_sum(&target)?)
}
