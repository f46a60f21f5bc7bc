//! ETA networks: the multi-factor attention model, the learned baselines
//! that swap its sequence extractor, and the route-sum baseline.

mod checkpoint;
mod config;
mod features;
mod multi_factor;
mod network;
mod record;
mod route;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{matched_config, ModelConfig, Variant};
pub use features::{
    FactorKind, FactorSequence, FactorValues, GlobalFeatures, Moments, Normalization,
    TripFeatures, DAYS_PER_WEEK, SLICES_PER_DAY,
};
pub use multi_factor::{multi_factor_attention, MultiFactorParams};
pub use network::{count_parameters, EtaModel, Forward};
pub use route::route_eta;
