//! Conditional video generator: patch tokenizer, in-context transformer with
//! LoRA adapters on Q/K/V, flow-matching training and Euler sampling.

pub mod checkpoint;
pub mod error;
pub mod flow;
pub mod network;
pub mod ops;
pub mod optim;
pub mod tokenizer;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use error::{Error, Result};
pub use flow::{euler_integrate, flow_matching_loss, interpolate, sample};
pub use network::{Conditioning, ForwardOptions, Generator, ModelConfig, ParamRole, Precision, TrainMode, VelocityField};
pub use tokenizer::{LatentGrid, LatentTokens, TokenizerConfig};
pub use train::{LossWeighting, StepLog, TrainConfig, Trainer};
