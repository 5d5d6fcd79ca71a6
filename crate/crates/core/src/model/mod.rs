//! The order-aware tabular network: shared cell embedding, an order branch
//! producing one score per column, and a prediction branch whose feature
//! attention is restricted by those scores, decoded into Gaussian means and
//! variances.

mod check;
mod config;
mod mask;
mod network;
mod params;

pub use check::{grad_check_mask, model_grad_check};
pub use config::{ModelConfig, Schedule, BETA_SCHEDULE, TAU_SCHEDULE};
pub use mask::{
    build_mask_bias, extract_order, hard_mask, pointwise_variance, soft_mask, strict_predecessors, MaskBias,
    MaskMode, OrderScores, HARD_BETA,
};
pub use network::{
    const_vars, embed_cells, forward, forward_scores, infer_scores, param_vars, predict, DropoutRng,
    ForwardVars, MaskSpec, ModelInput, PredictionOutput, SIGMA2_FLOOR,
};
pub use params::ModelParams;
