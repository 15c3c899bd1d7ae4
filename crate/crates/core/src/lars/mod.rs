//! Learnable response scorer: a small transformer encoder over the question,
//! the answer tokens and few-hot codes of their probabilities, trained with
//! binary cross-entropy on correctness labels.

pub mod config;
pub mod container;
pub mod gradcheck;
pub mod input;
pub mod model;
pub mod params;
pub mod partition;
pub mod tokenize;
pub mod train;

pub use config::{Association, LarsConfig};
pub use container::{load_model, save_model};
pub use gradcheck::{gradient_check, GradcheckReport};
pub use input::{build_input, build_input_parts, LarsInput, Slot};
pub use model::{loss_and_gradients, LarsModel};
pub use params::Params;
pub use partition::{encode_probability, fit_partition, ProbPartition};
pub use tokenize::tokenize;
pub use train::{train, AdamWConfig, EpochMetrics, TrainOptions};
