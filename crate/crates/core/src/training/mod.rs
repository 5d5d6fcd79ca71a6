//! Masked-cell pretraining: task construction, Gaussian NLL, annealing,
//! the optimization loop, per-table fine-tuning, inference helpers and
//! checkpoints.

mod checkpoint;
mod config;
mod inference;
mod task;
mod trainer;

pub use checkpoint::{
    checkpoint_dtype, load_checkpoint, save_checkpoint, sha256_hex, Checkpoint, RngState, FORMAT_VERSION, MAGIC,
};
pub use config::{DataConfig, RunConfig, TrainConfig};
pub use inference::{infer_order, predict_table, predict_with_context, CellPredictions};
pub use task::{
    anneal, gaussian_nll, gaussian_nll_var, mask_entries, mask_nonempty, MaskedTask, Standardization, STD_FLOOR,
};
pub use trainer::{
    finetune, finetune_trainer, subsample_rows, train_loop, DataSource, FinetuneConfig, FixedSource, LossTrace, OrderMode,
    SyntheticSource, TraceRow, Trainer,
};
