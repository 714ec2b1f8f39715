//! Neural survival models with an MTLR head.
//!
//! All layers implement forward and analytic backward passes over a generic
//! scalar ([`Real`]): `f32` for training, `f64` for gradient checks.

mod encoder;
pub mod ensemble;
mod gat;
pub mod gradcheck;
pub mod model;
pub mod mtlr;
mod real;
pub mod train;

pub use encoder::{PatchData, BN_EPS, CHANNELS, TAPS};
pub use ensemble::{ensemble_risk, fill_median, EnsembleMode};
pub use gat::{gatv2_backward, gatv2_forward, GatCache, GatWeights, LEAKY_SLOPE};
pub use gradcheck::{check_gradient, GradCheckReport};
pub use model::{
    Architecture, BatchStats, Block, Layout, ModelConfig, Network, PatientInput, Prediction, TrainingSample, TumorGraph,
    DEEP_FUSION_PATCH, GRAPH_PATCH, HIDDEN,
};
pub use mtlr::{default_bin_count, make_time_bins, mtlr_loss, mtlr_risk, sequence_probabilities, TimeBins};
pub use real::Real;
pub use train::{train, EpochRecord, TrainConfig, TrainedModel, CHECKPOINT_FORMAT};
