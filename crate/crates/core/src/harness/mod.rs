//! Run configuration, training, evaluation, ablations and gradient checks.

mod ablation;
mod checks;
mod config;
mod optim;
mod train;

pub use ablation::{apply_ablation, run_ablation_rows, run_ablation_suite, AblationRow, AblationTable, SUITE};
pub use checks::{gradcheck_suite, ToyDims, GRADCHECK_TOL};
pub use config::RunConfig;
pub use optim::{lr_at_epoch, AdamW};
pub use train::{build_model, evaluate, generate_data, train, train_observed, Accuracy, Data, EpochObserver, Predictor, RunReport};
