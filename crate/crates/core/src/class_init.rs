//! Lexicon initialization from word classes: EM on class-mapped text with a
//! class LM, then expansion of the class lexicon to words.

use crate::classes::{map_corpus, ClassMap};
use crate::corpus::Corpus;
use crate::em::{train, TrainConfig};
use crate::error::{Error, Result};
use crate::lexicon::{class_to_word_lexicon, Smoothing, SparseLexicon};
use crate::lm::{Discount, NGramLm};

#[derive(Debug, Clone, PartialEq)]
pub struct ClassInitConfig {
    pub lm_order: usize,
    pub discount: Discount,
    /// EM iterations on the class task.
    pub iterations: usize,
    /// Threshold applied to the expanded word rows.
    pub tau: f64,
    pub workers: usize,
}

impl Default for ClassInitConfig {
    fn default() -> Self {
        Self { lm_order: 2, discount: Discount::Estimate, iterations: 20, tau: 1e-6, workers: 0 }
    }
}

/// Builds a word lexicon from a class-to-class lexicon trained with exact
/// EM (full table, no smoothing or pruning) on the class-mapped input.
///
/// Returns the word lexicon and the trained class lexicon.
pub fn init_class_lexicon(
    input: &Corpus,
    src_classes: &ClassMap,
    lm_text: &Corpus,
    tgt_classes: &ClassMap,
    config: &ClassInitConfig,
    smoothing: Smoothing,
) -> Result<(SparseLexicon, SparseLexicon)> {
    if config.iterations == 0 {
        return Err(Error::InvalidArgument("class initialization needs at least one iteration".into()));
    }
    let class_input = map_corpus(input, src_classes)?;
    let class_text = map_corpus(lm_text, tgt_classes)?;
    let class_vocab = tgt_classes.class_vocabulary();
    let class_lm = NGramLm::train(&class_text, &class_vocab, config.lm_order, &config.discount)?;
    let n_src = src_classes.num_classes();
    let init = SparseLexicon::init_uniform(n_src, tgt_classes.num_classes(), 0.0, Smoothing::none(n_src))?;
    let mut em = TrainConfig::exact(config.iterations);
    em.workers = config.workers;
    let (class_lex, stats) = train(&class_input, &class_lm, &em, init)?;
    if let Some(last) = stats.iterations.last() {
        log::info!("class EM finished: loglik {:.4}", last.loglik);
    }
    let word_lex = class_to_word_lexicon(&class_lex, src_classes, tgt_classes, config.tau, smoothing)?;
    Ok((word_lex, class_lex))
}
