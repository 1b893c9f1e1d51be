//! Trajectory-based anomaly experts: a pairwise GRU autoencoder scoring
//! abnormal interactions and a per-object GRU predictor scoring
//! inconsistent future predictions.

pub mod behavior;
pub mod common;
pub mod error;
pub mod interaction;

pub use behavior::{consistency_score, BehaviorConfig, BehaviorExpert, BehaviorNet, HeightRule, PredictionBuffer};
pub use common::{LowpassConfig, TrainReport};
pub use error::{ExpertError, Result};
pub use interaction::{pair_loss, select_pairs, InteractionConfig, InteractionExpert, InteractionNet, PairWindow};
