//! Benchmark fixtures: a synthetic cipher task with its LM and a lexicon
//! trained for a few iterations, so benches time a realistic sparsity.

use sparselex::corpus::{generate_synthetic_cipher, random_key, SyntheticLanguage, NUM_SPECIALS};
use sparselex::{train, Corpus, Discount, NGramLm, Smoothing, SparseLexicon, TrainConfig};

pub struct Fixture {
    pub input: Corpus,
    pub lm_text: Corpus,
    pub lm: NGramLm,
    pub lexicon: SparseLexicon,
    pub config: TrainConfig,
}

/// `types` regular words, about `tokens` input tokens, a bigram LM on ten
/// times as much text.
pub fn fixture(types: usize, tokens: usize, warmup_iterations: usize) -> Fixture {
    let lang = SyntheticLanguage::new(types, 8, 10.0, 7);
    let key = random_key(NUM_SPECIALS + types, 11);
    let task = generate_synthetic_cipher(&lang.sample(2 * tokens, 1), &key).expect("key is a bijection");
    let lm_text = lang.sample(10 * tokens, 2);
    let lm = NGramLm::train(&lm_text, &lang.vocabulary(), 2, &Discount::Estimate).expect("non-empty text");
    let src = NUM_SPECIALS + types;
    let config = TrainConfig { iterations: warmup_iterations, tau: 1e-4, lambda: 0.15, workers: 1, ..TrainConfig::default() };
    let init = SparseLexicon::init_uniform(src, lm.vocab_size(), 0.0, Smoothing::none(src)).expect("valid sizes");
    let (lexicon, _) = train(&task.source_input, &lm, &config, init).expect("training runs");
    Fixture { input: task.source_input, lm_text, lm, lexicon, config }
}
