use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown model preset `{0}`")]
    UnknownPreset(String),

    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),

    #[error("sequence length overflow: {len} tokens exceeds max_seq {max_seq}")]
    SeqOverflow { len: usize, max_seq: usize },

    #[error("token id {id} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },

    #[error("{op}: dimension mismatch (expected {expected}, got {got})")]
    DimensionMismatch { op: &'static str, expected: usize, got: usize },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unknown memory tag `{0}`")]
    UnknownTag(String),

    #[error("cannot shard: {0}")]
    Shard(String),

    #[error("invalid operand: {0}")]
    Operand(String),

    #[error("sync deadlock: {0}")]
    Deadlock(String),

    #[error("mismatched sync slices: {0}")]
    SliceMismatch(String),

    #[error("weight file: {0}")]
    WeightFile(String),

    #[error("config: {0}")]
    Config(String),

    #[error("core {core}, instruction {index}: {source}")]
    Exec {
        core: usize,
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
