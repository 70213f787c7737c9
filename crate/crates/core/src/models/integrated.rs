use super::{BoundDynamics, BoundPerception, DynamicsModel, PerceptionModel};
use crate::error::ModelError;
use crate::geometry::{ActionSeq, PoseDelta, PoseDeltaSeq, RewardSeq, RobotState};
use crate::sim::Observation;
use crate::tensor::{Tape, Var};

/// `f_per(o, f_dyn(s, a))` with no parameters of its own.
#[derive(Debug, Clone, Copy)]
pub struct IntegratedModel<'m> {
    pub perception: &'m PerceptionModel,
    pub dynamics: &'m DynamicsModel,
}

impl<'m> IntegratedModel<'m> {
    pub fn new(perception: &'m PerceptionModel, dynamics: &'m DynamicsModel) -> Result<Self, ModelError> {
        let (hp, hd) = (perception.horizon(), dynamics.horizon());
        if hp != hd {
            return Err(ModelError::HorizonMismatch { expected: hp, found: hd });
        }
        Ok(Self { perception, dynamics })
    }

    pub fn horizon(&self) -> usize {
        self.perception.horizon()
    }

    /// Tape-level composition; gradients flow from rewards to actions.
    pub fn forward<'t>(
        &self,
        pp: &BoundPerception<'t>,
        pd: &BoundDynamics<'t>,
        obs: Var<'t>,
        states: Option<Var<'t>>,
        actions: Var<'t>,
        obs_index: &[usize],
    ) -> Result<(Var<'t>, Var<'t>), ModelError> {
        let deltas = self.dynamics.forward(pd, states, actions)?;
        let enc = self.perception.encode(pp, obs)?;
        let rewards = self.perception.head(pp, enc, deltas, obs_index)?;
        Ok((rewards, deltas))
    }

    /// Scores `N` action sequences (flat `N*H*A`) from one observation and
    /// state. Returns flat `(N*H rewards, N*H*3 deltas)`.
    pub fn predict_many(&self, obs: &Observation, state: &RobotState, actions: &[f64]) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
        let dc = &self.dynamics.config;
        let pc = &self.perception.config;
        if obs.shape() != [pc.frames, pc.rows, pc.cols] {
            return Err(ModelError::DimMismatch { what: "observation", expected: pc.obs_len(), found: obs.data.len() });
        }
        if state.dim() != dc.state_dim {
            return Err(ModelError::DimMismatch { what: "robot state", expected: dc.state_dim, found: state.dim() });
        }
        let per = dc.horizon * dc.action_dim;
        super::check_len("action sequence", actions.len(), per)?;
        let n = actions.len() / per;
        let tape = Tape::new();
        let pp = self.perception.bind(&tape, false);
        let pd = self.dynamics.bind(&tape, false);
        let o = tape.constant(&[1, pc.frames, pc.rows, pc.cols], obs.data.clone())?;
        let a = tape.constant(&[n, per], actions.to_vec())?;
        let s = (dc.state_dim > 0).then(|| tape.constant(&[n, dc.state_dim], state.0.repeat(n))).transpose()?;
        let (r, d) = self.forward(&pp, &pd, o, s, a, &vec![0; n])?;
        let (r, d) = (r.value().to_vec(), d.value().to_vec());
        Ok((r, d))
    }

    pub fn predict(&self, obs: &Observation, state: &RobotState, a: &ActionSeq) -> Result<(RewardSeq, PoseDeltaSeq), ModelError> {
        if a.len() != self.horizon() {
            return Err(ModelError::HorizonMismatch { expected: self.horizon(), found: a.len() });
        }
        if a.dim() != self.dynamics.config.action_dim {
            return Err(ModelError::DimMismatch { what: "action", expected: self.dynamics.config.action_dim, found: a.dim() });
        }
        let (r, d) = self.predict_many(obs, state, a.as_flat())?;
        debug_assert_eq!(d.len(), self.horizon() * PoseDelta::DIM);
        Ok((RewardSeq(r), PoseDeltaSeq::from_flat(&d)))
    }
}
