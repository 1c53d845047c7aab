//! Speculative decoding with semantic adaptive tokens on a small decoder-only
//! transformer: the model, the greedy and tree-attention decoders, the
//! adaptive-token trainer and the reference oracles they are tested against.

pub mod bench;
pub mod draft;
pub mod error;
pub mod greedy;
pub mod model;
pub mod oracle;
pub mod sampling;
pub mod tokenizer;
pub mod train;
pub mod tree;

pub use draft::{AdaptiveTokens, GenStats};
pub use error::{CheckpointError, DecodeError, ModelError, TrainError};
pub use greedy::{generate_greedy, GreedyOptions};
pub use model::{argmax, AttnMask, KvCache, Logits, ModelConfig, ModelParams, TokenId};
pub use sampling::{truncate_dist, SamplingConfig};
pub use tree::{generate_nucleus, BranchProfile, NucleusOptions};
