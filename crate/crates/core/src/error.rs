use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("attention mask is {rows}x{cols}, expected {want_rows}x{want_cols}")]
    MaskShape {
        rows: usize,
        cols: usize,
        want_rows: usize,
        want_cols: usize,
    },
    #[error("mask row {row} does not allow its own column")]
    MaskSelf { row: usize },
    #[error("{tokens} tokens but {positions} positions")]
    PositionCount { tokens: usize, positions: usize },
    #[error("position {pos} out of range (max_seq = {max_seq})")]
    Position { pos: usize, max_seq: usize },
    #[error("token id {id} out of range (vocab_size = {vocab})")]
    Token { id: u32, vocab: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("cannot roll back cache of length {len} to {requested}")]
    Rollback { len: usize, requested: usize },
    #[error("sequence of {needed} positions exceeds max_seq = {max_seq}")]
    SequenceTooLong { needed: usize, max_seq: usize },
    #[error("cache belongs to a different model shape")]
    CacheShape,
}

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("prompt must not be empty")]
    EmptyPrompt,
    #[error("k = {k} exceeds the {available} diverse adaptive ids")]
    TooManyDrafts { k: usize, available: usize },
    #[error("logits contain no finite value")]
    DegenerateLogits,
    #[error("invalid sampling configuration: {0}")]
    Sampling(String),
    #[error("draft tree holds {nodes} nodes, budget is {budget}")]
    NodeBudget { nodes: usize, budget: usize },
    #[error("malformed draft tree: {0}")]
    Tree(String),
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("diverse adaptive tokens: run of {run} exceeds {available} ids")]
    RunTooLong { run: usize, available: usize },
    #[error("mask window at {start}+{window} lies outside a sequence of {len}")]
    PlanBounds { start: usize, window: usize, len: usize },
    #[error("loss has no contributing positions")]
    EmptyLoss,
    #[error("document has {0} characters, need at least 3")]
    DocTooShort(usize),
    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error("corpus has no window of {need} tokens")]
    CorpusTooShort { need: usize },
    #[error("invalid training setting: {0}")]
    Setting(String),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file")]
    Magic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    Checksum { stored: u64, computed: u64 },
    #[error("truncated checkpoint")]
    Truncated,
    #[error(transparent)]
    Model(#[from] ModelError),
}
