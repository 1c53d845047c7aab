//! Adaptive-token training: mask planning, objectives, data preparation and
//! a small AdamW loop with hand-written backpropagation.

pub mod backprop;
pub mod corpus;
pub mod infill;
pub mod loss;
pub mod masking;
pub mod optim;
pub mod trainer;

pub use corpus::{Corpus, MarkovSource, PeriodicSource};
pub use infill::{encode_infill, make_infill, reassemble, InfillFormat, InfillSample};
pub use loss::{loss_basic, loss_improved, LossReport};
pub use masking::{apply_masks, plan_masks, MaskPlan, MixedSeq};
pub use trainer::{
    batch_objective, make_batch, train, write_loss_csv, AdaptiveKind, Batch, LossMode, LossRecord,
    TrainConfig,
};
