//! Synthetic data, training orchestration, rate-distortion evaluation and
//! reporting for the `pcvox` toolkit.

pub mod config;
pub mod experiment;
pub mod rd;
pub mod report;
pub mod synth;
pub mod train;

pub use config::ExperimentConfig;
pub use experiment::{bd_table, evaluate, write_report, Results};
pub use rd::{bd_rate, RdCurve, RdPoint};
pub use synth::{synth_dataset, ShapeKind, SynthCloud, SynthSpec};
pub use train::{load_trained, train_pipeline, Trained};
