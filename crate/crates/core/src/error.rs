use std::io;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("sentence {sentence}: alignment link {src}-{tgt} out of range (source length {src_len}, target length {tgt_len})")]
    AlignmentOutOfRange {
        sentence: usize,
        src: usize,
        tgt: usize,
        src_len: usize,
        tgt_len: usize,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("key is not a bijection: {0}")]
    NotBijective(String),

    #[error("unmapped word: {0}")]
    UnmappedWord(String),

    #[error("threshold would empty all rows (tau {tau} >= 1/{vocab_size})")]
    ThresholdTooHigh { tau: f64, vocab_size: usize },

    #[error("all weights are zero")]
    AllZeroWeights,

    #[error("length mismatch at sentence {sentence}: hypothesis has {hyp} tokens, reference has {reference}")]
    LengthMismatch {
        sentence: usize,
        hyp: usize,
        reference: usize,
    },

    #[error("vocabulary mismatch: {0}")]
    VocabularyMismatch(String),

    #[error("no surviving path at position {position}")]
    NoPath { position: usize },

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
