//! Perception model `f_per(o, δp) -> r̂`, dynamics model `f_dyn(s, a) -> δp`,
//! their composition, training loops and checkpoints.

mod dynamics;
mod integrated;
mod perception;
mod train;

pub use dynamics::{dynamics_loss, BoundDynamics, DynamicsConfig, DynamicsModel};
pub use integrated::IntegratedModel;
pub use perception::{perception_loss, BoundPerception, PerceptionConfig, PerceptionModel};
pub use train::{allocate_counts, train_dynamics, train_perception, LossPoint, TrainConfig, TrainReport};

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::binio::{read_file, write_file};
use crate::error::{FormatError, ModelError};
use crate::tensor::{decode_tensors, encode_tensors, ParamId, Params, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Perception,
    Dynamics,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Perception => "perception",
            ModelKind::Dynamics => "dynamics",
        }
    }
}

/// Dense layer `[fan_in, fan_out]` plus bias, uniform in `±1/sqrt(fan_in)`.
pub(crate) fn init_dense<R: Rng>(params: &mut Params, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> (ParamId, ParamId) {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let w = params.add(format!("{name}.w"), Tensor::uniform(&[fan_in, fan_out], bound, rng));
    let b = params.add(format!("{name}.b"), Tensor::uniform(&[fan_out], bound, rng));
    (w, b)
}

pub(crate) fn check_len(what: &'static str, len: usize, per: usize) -> Result<(), ModelError> {
    if len == 0 || !len.is_multiple_of(per) {
        return Err(ModelError::DimMismatch { what, expected: per, found: len });
    }
    Ok(())
}

const CKPT_FORMAT: &str = "hint-model";
const CKPT_VERSION: u32 = 1;
const HEADER_END: &[u8] = b"\n---\n";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    kind: String,
    horizon: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    perception: Option<PerceptionConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dynamics: Option<DynamicsConfig>,
}

fn write_checkpoint(path: &Path, header: &Header, params: &Params) -> Result<(), ModelError> {
    let text = toml::to_string(header).map_err(|e| ModelError::InvalidConfig(e.to_string()))?;
    let mut bytes = text.into_bytes();
    bytes.extend_from_slice(HEADER_END);
    bytes.extend(encode_tensors(params.iter()));
    write_file(path, &bytes)?;
    Ok(())
}

fn read_checkpoint(path: &Path, kind: ModelKind) -> Result<(Header, Vec<(String, Tensor)>), ModelError> {
    let bytes = read_file(path)?;
    let split = bytes.windows(HEADER_END.len()).position(|w| w == HEADER_END).ok_or(FormatError::BadMagic { expected: "model checkpoint" })?;
    let text = std::str::from_utf8(&bytes[..split]).map_err(|_| FormatError::BadMagic { expected: "model checkpoint" })?;
    let header: Header = toml::from_str(text).map_err(|e| FormatError::Malformed(format!("checkpoint header: {e}")))?;
    if header.format != CKPT_FORMAT {
        return Err(FormatError::BadMagic { expected: "model checkpoint" }.into());
    }
    if header.version != CKPT_VERSION {
        return Err(FormatError::VersionMismatch { found: header.version, expected: CKPT_VERSION }.into());
    }
    if header.kind != kind.as_str() {
        return Err(FormatError::Malformed(format!("expected a {} checkpoint, found {}", kind.as_str(), header.kind)).into());
    }
    let tensors = decode_tensors(&bytes[split + HEADER_END.len()..])?;
    Ok((header, tensors))
}

impl PerceptionModel {
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let header = Header {
            format: CKPT_FORMAT.into(),
            version: CKPT_VERSION,
            kind: ModelKind::Perception.as_str().into(),
            horizon: self.config.horizon,
            perception: Some(self.config.clone()),
            dynamics: None,
        };
        write_checkpoint(path, &header, &self.params)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let (header, tensors) = read_checkpoint(path, ModelKind::Perception)?;
        let cfg = header.perception.ok_or_else(|| FormatError::Malformed("checkpoint lacks [perception] config".into()))?;
        if cfg.horizon != header.horizon {
            return Err(FormatError::Malformed("checkpoint horizon disagrees with its config".into()).into());
        }
        let mut m = PerceptionModel::new(cfg)?;
        m.params.load_from(tensors)?;
        Ok(m)
    }
}

impl DynamicsModel {
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let header = Header {
            format: CKPT_FORMAT.into(),
            version: CKPT_VERSION,
            kind: ModelKind::Dynamics.as_str().into(),
            horizon: self.config.horizon,
            perception: None,
            dynamics: Some(self.config.clone()),
        };
        write_checkpoint(path, &header, &self.params)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let (header, tensors) = read_checkpoint(path, ModelKind::Dynamics)?;
        let cfg = header.dynamics.ok_or_else(|| FormatError::Malformed("checkpoint lacks [dynamics] config".into()))?;
        if cfg.horizon != header.horizon {
            return Err(FormatError::Malformed("checkpoint horizon disagrees with its config".into()).into());
        }
        let mut m = DynamicsModel::new(cfg)?;
        m.params.load_from(tensors)?;
        Ok(m)
    }
}

/// Central-difference check of `d loss / d params` for any model.
///
/// `analytic` holds the tape gradient of `loss` at the current parameters in
/// each tensor's `grad`. Returns the largest relative error, using the same
/// floor as [`crate::tensor::gradcheck`].
pub fn check_param_gradients<M>(
    model: &mut M,
    params: fn(&mut M) -> &mut Params,
    analytic: &Params,
    h: f64,
    mut loss: impl FnMut(&M) -> Result<f64, ModelError>,
) -> Result<f64, ModelError> {
    let names: Vec<String> = params(model).iter().map(|(n, _)| n.to_string()).collect();
    let mut worst = 0.0f64;
    for name in names {
        let n = params(model).by_name(&name)?.numel();
        let grad = analytic.by_name(&name)?.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
        for (j, &g) in grad.iter().enumerate() {
            let x0 = params(model).by_name(&name)?.data()[j];
            params(model).by_name_mut(&name)?.data_mut()[j] = x0 + h;
            let fp = loss(model)?;
            params(model).by_name_mut(&name)?.data_mut()[j] = x0 - h;
            let fm = loss(model)?;
            params(model).by_name_mut(&name)?.data_mut()[j] = x0;
            let numeric = (fp - fm) / (2.0 * h);
            let err = (g - numeric).abs() / g.abs().max(numeric.abs()).max(crate::tensor::gradcheck::REL_FLOOR);
            if !err.is_finite() {
                return Ok(f64::INFINITY);
            }
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
