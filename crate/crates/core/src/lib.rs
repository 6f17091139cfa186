//! Unsupervised training of sparse translation lexicons for monotone 1:1
//! decipherment.
//!
//! A target n-gram LM and a lexicon `p(f|e)` define a noisy channel over
//! source sentences. EM re-estimates the lexicon from pruned forward-backward
//! posteriors, keeping only entries above a threshold and smoothing the
//! remainder with a target-independent backoff distribution.

pub mod class_init;
pub mod classes;
pub mod corpus;
pub mod decode;
pub mod em;
pub mod error;
pub mod eval;
pub mod lexicon;
pub mod lm;
pub mod search;

pub use class_init::{init_class_lexicon, ClassInitConfig};
pub use classes::{class_bigram_loglik, cluster_exchange, map_corpus, ClassId, ClassInit, ClassMap, ClusterConfig, Clustering};
pub use corpus::{Corpus, Side, Vocabulary, WordId};
pub use decode::{viterbi_decode, Decoder};
pub use em::{m_step, train, train_with, IterationStats, PosteriorAccumulator, TrainConfig, TrainStats};
pub use error::{Error, Result};
pub use eval::{token_accuracy, Accuracy};
pub use lexicon::{class_to_word_lexicon, threshold_renormalize, BackoffKind, BackoffModel, LexiconRow, RowSlot, Smoothing, SparseLexicon};
pub use lm::{Discount, LmState, NGramLm};
pub use search::{forward_backward, Beams, SentencePosteriors, UNLIMITED};

/// Runs `f` on a dedicated pool of `workers` threads; 0 uses the available
/// parallelism.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}
