//! Model loading and the transformer forward pass.

pub mod config;
pub mod container;
pub mod runtime;
pub mod tokenizer;

pub use config::{ActivationKind, ConfigError, ModelConfig, NormKind, PositionKind, TemplateSpec};
pub use container::{ContainerError, TensorArchive};
pub use runtime::{
    KvCache, LayerHiddenStates, Model, ResidualHook, RuntimeError, CONFIG_FILE, WEIGHTS_FILE,
};
pub use tokenizer::{Tokenizer, TokenizerError, TokenizerMode};
