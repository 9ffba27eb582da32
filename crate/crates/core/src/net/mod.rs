//! Learned active-sensing controller: per-user LSTM cells with shared
//! weights, a graph neural network over user and RIS nodes, end-to-end
//! training and frame-by-frame inference.

pub mod model;
pub mod params;
pub mod rollout;
pub mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use model::{Controller, ControllerState, Dims, UnitOutputs};
pub use rollout::{infer_frame, rollout_eval, rollout_loss, EpisodeTrace, FrameDecision, Session};
pub use train::{train, TrainHistory, TrainOutcome};

/// Controller wiring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Sensing matrices designed by the network from the pilot history.
    FullActive,
    /// LSTM and GNN with fresh random sensing phases every frame.
    FixedSensingRandom,
    /// LSTM and GNN with one trainable sensing matrix shared by all frames.
    FixedSensingLearned,
    /// Sensing columns of the next frame copy the current reflection vector.
    ReuseWSensing,
    /// The user head emits beamformers directly instead of dual powers.
    #[serde(rename = "direct_B_head")]
    DirectBHead,
    /// Same network as `FullActive`; inference keeps the network's powers.
    NoRefinement,
    /// No recurrence: the GNN sees only the current frame's pilots, sensing is random.
    NoLstmGnnOnly,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::FullActive,
        Variant::FixedSensingRandom,
        Variant::FixedSensingLearned,
        Variant::ReuseWSensing,
        Variant::DirectBHead,
        Variant::NoRefinement,
        Variant::NoLstmGnnOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::FullActive => "full_active",
            Variant::FixedSensingRandom => "fixed_sensing_random",
            Variant::FixedSensingLearned => "fixed_sensing_learned",
            Variant::ReuseWSensing => "reuse_w_sensing",
            Variant::DirectBHead => "direct_B_head",
            Variant::NoRefinement => "no_refinement",
            Variant::NoLstmGnnOnly => "no_lstm_gnn_only",
        }
    }

    pub fn uses_lstm(self) -> bool {
        self != Variant::NoLstmGnnOnly
    }

    pub fn has_sensing_head(self) -> bool {
        matches!(self, Variant::FullActive | Variant::NoRefinement | Variant::DirectBHead)
    }

    /// Whether inference replaces network powers by the fixed-point solution.
    pub fn refines_by_default(self) -> bool {
        self != Variant::NoRefinement
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownMode(s.to_string()))
    }
}

/// Which LSTM state feeds the GNN.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GnnInput {
    Cell,
    Hidden,
}

/// Network sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    /// LSTM state size `d`.
    pub hidden: usize,
    /// GNN node representation size.
    pub node_dim: usize,
    /// Hidden widths of the encoders `f1..f3`.
    pub encoder_hidden: Vec<usize>,
    /// Hidden widths of the update networks `f4..f9`, `f_w`, `f_V`.
    pub update_hidden: Vec<usize>,
    /// Number of GNN update layers `D`.
    pub layers: usize,
    pub gnn_input: GnnInput,
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.node_dim == 0 || self.layers == 0 {
            return Err(Error::Config("network hidden, node_dim and layers must be positive".into()));
        }
        if self.encoder_hidden.contains(&0) || self.update_hidden.contains(&0) {
            return Err(Error::Config("network layer widths must be positive".into()));
        }
        Ok(())
    }
}

/// Training schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    /// Frames `U` unrolled per training episode.
    pub frames: usize,
    pub episodes_per_epoch: usize,
    pub minibatch: usize,
    pub learning_rate: f64,
    /// Learning-rate multiplier applied on a validation plateau.
    pub lr_decay: f64,
    /// Epochs without improvement before the learning rate decays.
    pub lr_patience: usize,
    /// Epochs without improvement before training stops.
    pub patience: usize,
    pub max_epochs: usize,
    pub validation_episodes: usize,
    /// Global gradient-norm cap; zero disables clipping.
    pub grad_clip: f64,
    /// Parallel episode evaluation inside a minibatch.
    pub parallel: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(Error::Config("training frames U must be at least 2".into()));
        }
        if self.patience == 0 || self.lr_patience == 0 {
            return Err(Error::Config("patience values must be at least 1".into()));
        }
        if self.minibatch == 0 || self.episodes_per_epoch == 0 || self.validation_episodes == 0 {
            return Err(Error::Config("episode counts and minibatch must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config("learning_rate must be positive and lr_decay in (0, 1]".into()));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(Error::Config("grad_clip must be non-negative".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!(matches!("bogus".parse::<Variant>(), Err(Error::UnknownMode(_))));
    }
}
