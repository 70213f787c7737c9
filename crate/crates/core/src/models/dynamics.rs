use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_len, init_dense};
use crate::error::ModelError;
use crate::geometry::{ActionSeq, PoseDelta, PoseDeltaSeq, RobotState};
use crate::tensor::{ParamId, Params, Tape, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsConfig {
    pub horizon: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    pub hidden: Vec<usize>,
    pub init_seed: u64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self { horizon: 6, state_dim: 0, action_dim: 1, hidden: vec![128, 128], init_seed: 0 }
    }
}

impl DynamicsConfig {
    pub fn input_len(&self) -> usize {
        self.state_dim + self.horizon * self.action_dim
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.horizon == 0 || self.action_dim == 0 {
            return Err(ModelError::InvalidConfig("dynamics horizon and action_dim must be positive".into()));
        }
        if self.hidden.contains(&0) {
            return Err(ModelError::InvalidConfig("dynamics hidden widths must be positive".into()));
        }
        Ok(())
    }
}

/// Tanh MLP over `[s, a_flat]` producing `H` pose increments in the frame of
/// time `t`; their running sum is the cumulative delta sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsModel {
    pub config: DynamicsConfig,
    pub params: Params,
    layers: Vec<(ParamId, ParamId)>,
}

pub struct BoundDynamics<'t> {
    layers: Vec<(Var<'t>, Var<'t>)>,
}

impl DynamicsModel {
    pub fn new(config: DynamicsConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut params = Params::new();
        let mut layers = Vec::new();
        let mut width = config.input_len();
        for (i, &h) in config.hidden.iter().enumerate() {
            layers.push(init_dense(&mut params, &format!("fc{i}"), width, h, &mut rng));
            width = h;
        }
        layers.push(init_dense(&mut params, "out", width, config.horizon * PoseDelta::DIM, &mut rng));
        Ok(Self { config, params, layers })
    }

    pub fn horizon(&self) -> usize {
        self.config.horizon
    }

    /// Sets the output layer to zero so every prediction is the zero sequence.
    pub fn zero_output_layer(&mut self) {
        let (w, b) = *self.layers.last().expect("output layer");
        self.params.get_mut(w).data_mut().fill(0.0);
        self.params.get_mut(b).data_mut().fill(0.0);
    }

    pub fn bind<'t>(&self, tape: &'t Tape, train: bool) -> BoundDynamics<'t> {
        let p = |id: ParamId| if train { tape.param(&self.params, id) } else { tape.frozen_param(&self.params, id) };
        BoundDynamics { layers: self.layers.iter().map(|&(w, b)| (p(w), p(b))).collect() }
    }

    /// `states [N, S]` (ignored when `S = 0`), `actions [N, H*A]` -> `[N, H, 3]`.
    pub fn forward<'t>(&self, p: &BoundDynamics<'t>, states: Option<Var<'t>>, actions: Var<'t>) -> Result<Var<'t>, ModelError> {
        let c = &self.config;
        let a_shape = actions.shape();
        if a_shape.len() != 2 || a_shape[1] != c.horizon * c.action_dim {
            let found = a_shape.get(1).copied().unwrap_or(0);
            if found % c.action_dim == 0 && found / c.action_dim != c.horizon {
                return Err(ModelError::HorizonMismatch { expected: c.horizon, found: found / c.action_dim });
            }
            return Err(ModelError::DimMismatch { what: "action sequence", expected: c.horizon * c.action_dim, found });
        }
        let n = a_shape[0];
        let mut x = match (c.state_dim, states) {
            (0, _) => actions,
            (s, Some(st)) => {
                let ss = st.shape();
                if ss != [n, s] {
                    return Err(ModelError::DimMismatch { what: "robot state", expected: s, found: ss.get(1).copied().unwrap_or(0) });
                }
                Var::concat(&[st, actions], 1)?
            }
            (s, None) => return Err(ModelError::DimMismatch { what: "robot state", expected: s, found: 0 }),
        };
        let last = p.layers.len() - 1;
        for (i, (w, b)) in p.layers.iter().enumerate() {
            x = x.matmul(w)?.add_row(b)?;
            if i < last {
                x = x.tanh();
            }
        }
        Ok(x.reshape(&[n, c.horizon, PoseDelta::DIM])?.cumsum(1)?)
    }

    /// Flat batch inference: `states` is `N*S`, `actions` is `N*H*A`; returns `N*H*3`.
    pub fn predict_many(&self, states: &[f64], actions: &[f64]) -> Result<Vec<f64>, ModelError> {
        let c = &self.config;
        let per = c.horizon * c.action_dim;
        check_len("action sequence", actions.len(), per)?;
        let n = actions.len() / per;
        if states.len() != n * c.state_dim {
            return Err(ModelError::DimMismatch { what: "robot state", expected: c.state_dim, found: states.len() / n.max(1) });
        }
        let tape = Tape::new();
        let p = self.bind(&tape, false);
        let a = tape.constant(&[n, per], actions.to_vec())?;
        let s = (c.state_dim > 0).then(|| tape.constant(&[n, c.state_dim], states.to_vec())).transpose()?;
        Ok(self.forward(&p, s, a)?.value().to_vec())
    }

    pub fn predict(&self, s: &RobotState, a: &ActionSeq) -> Result<PoseDeltaSeq, ModelError> {
        let c = &self.config;
        if a.dim() != c.action_dim {
            return Err(ModelError::DimMismatch { what: "action", expected: c.action_dim, found: a.dim() });
        }
        if a.len() != c.horizon {
            return Err(ModelError::HorizonMismatch { expected: c.horizon, found: a.len() });
        }
        if s.dim() != c.state_dim {
            return Err(ModelError::DimMismatch { what: "robot state", expected: c.state_dim, found: s.dim() });
        }
        Ok(PoseDeltaSeq::from_flat(&self.predict_many(&s.0, a.as_flat())?))
    }
}

/// `Σ_batch ‖δp̂ − δp‖²` on the tape.
pub fn dynamics_loss<'t>(
    model: &DynamicsModel,
    p: &BoundDynamics<'t>,
    states: Option<Var<'t>>,
    actions: Var<'t>,
    labels: &[f64],
) -> Result<Var<'t>, ModelError> {
    let pred = model.forward(p, states, actions)?;
    let target = actions.tape().constant(&pred.shape(), labels.to_vec())?;
    Ok(pred.squared_error_sum(&target)?)
}
