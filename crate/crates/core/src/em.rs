//! EM training of the sparse lexicon against a fixed target LM.

use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use rustc_hash::FxHashMap;

use crate::corpus::{Corpus, WordId};
use crate::decode::Decoder;
use crate::error::{Error, Result};
use crate::eval::token_accuracy;
use crate::lexicon::{threshold_renormalize, BackoffKind, BackoffModel, LexiconRow, RowSlot, Smoothing, SparseLexicon};
use crate::lm::NGramLm;
use crate::search::{forward_backward_with, Beams, SearchCache, Preselector, SearchModel};

/// Sentences handed to a worker at a time.
const CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub tau: f64,
    pub lambda: f64,
    pub backoff: BackoffKind,
    pub beams: Beams,
    /// Stop once the relative log-likelihood change drops below this.
    pub convergence_rel_tol: Option<f64>,
    /// Worker threads; 0 uses the available parallelism.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            tau: 1e-6,
            lambda: 0.15,
            backoff: BackoffKind::Uniform,
            beams: Beams::default(),
            convergence_rel_tol: None,
            workers: 0,
        }
    }
}

impl TrainConfig {
    /// Exact EM: no thresholding, smoothing, pruning or preselection.
    pub fn exact(iterations: usize) -> Self {
        Self { iterations, tau: 0.0, lambda: 1.0, beams: Beams::unlimited(), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.tau) {
            return Err(Error::InvalidArgument(format!("tau {} not in [0,1)", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidArgument(format!("lambda {} not in [0,1]", self.lambda)));
        }
        if let Some(tol) = self.convergence_rel_tol {
            if !(tol >= 0.0) {
                return Err(Error::InvalidArgument(format!("convergence tolerance {tol} is negative")));
            }
        }
        self.beams.validate()
    }
}

/// Fixed-point scale for accumulated quantities. Integer sums are exact,
/// so merging partial accumulators in any order gives identical totals.
const SCALE: f64 = (1u64 << 62) as f64;

fn to_fixed(x: f64) -> i128 {
    (x * SCALE).round() as i128
}

fn from_fixed(x: i128) -> f64 {
    x as f64 / SCALE
}

/// Expected (target, source) counts and log-likelihood of an E-step.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PosteriorAccumulator {
    counts: FxHashMap<(WordId, WordId), i128>,
    loglik: i128,
    sentences: usize,
    skipped: usize,
}

impl PosteriorAccumulator {
    pub fn add(&mut self, e: WordId, f: WordId, count: f64) {
        let c = to_fixed(count);
        if c > 0 {
            *self.counts.entry((e, f)).or_insert(0) += c;
        }
    }

    /// Adds the posteriors of one sentence.
    pub fn add_sentence(&mut self, sentence: &[WordId], positions: &[Vec<(WordId, f64)>], loglik: f64) {
        for (&f, post) in sentence.iter().zip(positions) {
            for &(e, p) in post {
                self.add(e, f, p);
            }
        }
        self.loglik += to_fixed(loglik);
        self.sentences += 1;
    }

    pub fn merge(&mut self, other: PosteriorAccumulator) {
        for (key, c) in other.counts {
            *self.counts.entry(key).or_insert(0) += c;
        }
        self.loglik += other.loglik;
        self.sentences += other.sentences;
        self.skipped += other.skipped;
    }

    pub fn count(&self, e: WordId, f: WordId) -> f64 {
        self.counts.get(&(e, f)).map_or(0.0, |&c| from_fixed(c))
    }

    pub fn loglik(&self) -> f64 {
        from_fixed(self.loglik)
    }

    pub fn sentences(&self) -> usize {
        self.sentences
    }

    /// Sentences without any surviving path.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

/// Re-estimates the lexicon from expected counts: per-target relative
/// frequencies, thresholded and renormalized. Targets without counts get
/// no row.
pub fn m_step(
    acc: &PosteriorAccumulator,
    tau: f64,
    src_vocab_size: usize,
    tgt_vocab_size: usize,
    smoothing: Smoothing,
) -> Result<SparseLexicon> {
    if acc.is_empty() {
        return Err(Error::InvalidArgument("empty accumulator".into()));
    }
    let mut entries: Vec<(WordId, WordId, i128)> = acc.counts.iter().map(|(&(e, f), &c)| (e, f, c)).collect();
    entries.sort_unstable_by_key(|&(e, f, _)| (e, f));
    let mut rows = vec![RowSlot::Missing; tgt_vocab_size];
    for group in entries.chunk_by(|a, b| a.0 == b.0) {
        let e = group[0].0;
        if e as usize >= tgt_vocab_size || group.iter().any(|&(_, f, _)| f as usize >= src_vocab_size) {
            return Err(Error::VocabularyMismatch("accumulated pair outside the vocabularies".into()));
        }
        let total: i128 = group.iter().map(|g| g.2).sum();
        let weights: Vec<(WordId, f64)> = group.iter().map(|&(_, f, c)| (f, c as f64 / total as f64)).collect();
        let row = threshold_renormalize(&LexiconRow::from_weights(weights)?, tau)?;
        rows[e as usize] = RowSlot::Stored(Arc::new(row));
    }
    SparseLexicon::from_rows(rows, src_vocab_size, tau, smoothing)
}

/// Runs one E-step over `input` and returns the merged accumulator.
pub fn e_step(input: &Corpus, lex: &SparseLexicon, lm: &NGramLm, beams: &Beams) -> Result<PosteriorAccumulator> {
    let pre = Preselector::new(lex, lm, input.sentences.iter().flatten().copied(), beams);
    let model = SearchModel { lex, lm, preselector: &pre, histogram: beams.histogram };
    let parts: Vec<Result<PosteriorAccumulator>> = input
        .sentences
        .par_chunks(CHUNK)
        .map_init(SearchCache::default, |cache, chunk| {
            let mut acc = PosteriorAccumulator::default();
            for sentence in chunk.iter().filter(|s| !s.is_empty()) {
                match forward_backward_with(sentence, &model, cache) {
                    Ok(post) => acc.add_sentence(sentence, &post.positions, post.loglik),
                    Err(Error::NoPath { .. }) => acc.skipped += 1,
                    Err(e) => return Err(e),
                }
            }
            Ok(acc)
        })
        .collect();
    let mut total = PosteriorAccumulator::default();
    for part in parts {
        total.merge(part?);
    }
    Ok(total)
}

/// Statistics of one completed iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationStats {
    pub iteration: usize,
    /// Total log-likelihood of the input under the lexicon the E-step used.
    pub loglik: f64,
    /// Active fraction of the re-estimated lexicon.
    pub active_fraction: f64,
    /// Token accuracy of the re-estimated lexicon, if a reference was given.
    pub accuracy: Option<f64>,
    pub skipped: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainStats {
    pub iterations: Vec<IterationStats>,
}

impl TrainStats {
    /// `iter  loglik  active_fraction  accuracy  seconds`, tab separated,
    /// with `NA` for a missing accuracy.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("iter\tloglik\tactive_fraction\taccuracy\tseconds\n");
        for s in &self.iterations {
            let acc = s.accuracy.map_or_else(|| "NA".to_string(), |a| a.to_string());
            let _ = writeln!(out, "{}\t{}\t{}\t{}\t{:.3}", s.iteration, s.loglik, s.active_fraction, acc, s.seconds);
        }
        out
    }
}

/// Trains without a reference or observer.
pub fn train(input: &Corpus, lm: &NGramLm, config: &TrainConfig, init: SparseLexicon) -> Result<(SparseLexicon, TrainStats)> {
    train_with(input, lm, config, init, None, &mut |_, _| Ok(()))
}

/// EM loop. The initial lexicon's rows are kept; its smoothing is replaced
/// by the configured λ and backoff. `observer` runs after every iteration
/// with the new lexicon, e.g. for checkpoints.
pub fn train_with(
    input: &Corpus,
    lm: &NGramLm,
    config: &TrainConfig,
    init: SparseLexicon,
    reference: Option<&Corpus>,
    observer: &mut dyn FnMut(&IterationStats, &SparseLexicon) -> Result<()>,
) -> Result<(SparseLexicon, TrainStats)> {
    config.validate()?;
    if init.tgt_vocab_size() != lm.vocab_size() {
        return Err(Error::VocabularyMismatch(format!(
            "lexicon has {} target rows, LM vocabulary has {} words",
            init.tgt_vocab_size(),
            lm.vocab_size()
        )));
    }
    input.validate(init.src_vocab_size())?;
    if let Some(reference) = reference {
        if reference.len() != input.len() {
            return Err(Error::InvalidArgument("reference and input differ in sentence count".into()));
        }
    }
    let mut stats = TrainStats::default();
    if config.iterations == 0 {
        return Ok((init, stats));
    }
    let src_size = init.src_vocab_size();
    let backoff = BackoffModel::estimate(config.backoff, input, src_size)?;
    let smoothing = Smoothing::new(config.lambda, backoff)?;
    let mut lex = init.with_smoothing(smoothing.clone())?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let mut previous: Option<f64> = None;
    for iteration in 1..=config.iterations {
        let start = Instant::now();
        let acc = pool.install(|| e_step(input, &lex, lm, &config.beams))?;
        if acc.is_empty() {
            return Err(Error::NoPath { position: 0 });
        }
        if acc.skipped() > 0 {
            log::warn!("iteration {iteration}: {} sentences had no surviving path", acc.skipped());
        }
        lex = m_step(&acc, config.tau, src_size, lm.vocab_size(), smoothing.clone())?;
        let accuracy = match reference {
            Some(reference) => {
                let hyp = pool.install(|| Decoder::new(&lex, lm, config.beams, input).decode_corpus(input));
                Some(token_accuracy(&hyp, reference)?.value())
            }
            None => None,
        };
        let record = IterationStats {
            iteration,
            loglik: acc.loglik(),
            active_fraction: lex.active_fraction(),
            accuracy,
            skipped: acc.skipped(),
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "iteration {iteration}: loglik {:.4} active {:.6}{}",
            record.loglik,
            record.active_fraction,
            accuracy.map(|a| format!(" accuracy {a:.4}")).unwrap_or_default()
        );
        observer(&record, &lex)?;
        stats.iterations.push(record);
        if let (Some(tol), Some(prev)) = (config.convergence_rel_tol, previous) {
            if ((acc.loglik() - prev) / prev).abs() < tol {
                log::info!("converged after {iteration} iterations");
                break;
            }
        }
        previous = Some(acc.loglik());
    }
    Ok((lex, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Side, Vocabulary};
    use crate::lm::Discount;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn acc_from(entries: &[(WordId, WordId, f64)]) -> PosteriorAccumulator {
        let mut acc = PosteriorAccumulator::default();
        for &(e, f, c) in entries {
            acc.add(e, f, c);
        }
        acc
    }

    #[test]
    fn m_step_relative_frequency() {
        let acc = acc_from(&[(3, 3, 3.0), (3, 4, 1.0)]);
        let lex = m_step(&acc, 0.0, 5, 5, Smoothing::none(5)).unwrap();
        assert_abs_diff_eq!(lex.sparse_prob(3, 3), 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(lex.sparse_prob(4, 3), 0.25, epsilon = 1e-15);
        assert_eq!(lex.row(4), &RowSlot::Missing);
    }

    #[test]
    fn m_step_threshold() {
        let acc = acc_from(&[(3, 3, 3.0), (3, 4, 1.0)]);
        let lex = m_step(&acc, 0.3, 5, 5, Smoothing::none(5)).unwrap();
        assert_eq!(lex.sparse_prob(3, 3), 1.0);
        assert_eq!(lex.sparse_prob(4, 3), 0.0);
    }

    #[test]
    fn m_step_point_mass() {
        let acc = acc_from(&[(4, 3, 2.5)]);
        let lex = m_step(&acc, 0.0, 5, 5, Smoothing::none(5)).unwrap();
        assert_eq!(lex.sparse_prob(3, 4), 1.0);
    }

    #[test]
    fn active_fraction_non_increasing_in_tau() {
        let acc = acc_from(&[(3, 3, 3.0), (3, 4, 1.0), (4, 3, 0.2), (4, 4, 0.5), (4, 2, 0.3)]);
        let mut prev = f64::INFINITY;
        for tau in [0.0, 0.1, 0.25, 0.35, 0.5, 0.9] {
            let a = m_step(&acc, tau, 5, 5, Smoothing::none(5)).unwrap().active_fraction();
            assert!(a <= prev);
            prev = a;
        }
    }

    proptest! {
        #[test]
        fn merge_is_order_insensitive(
            parts in prop::collection::vec(
                prop::collection::vec((0u32..4, 0u32..4, 0.0f64..1.0), 0..8), 1..6),
            seed in any::<u64>(),
        ) {
            let accs: Vec<PosteriorAccumulator> = parts
                .iter()
                .map(|p| { let mut a = acc_from(p); a.loglik = to_fixed(-(p.len() as f64) * 0.37); a })
                .collect();
            let mut forward = PosteriorAccumulator::default();
            for a in accs.iter().cloned() {
                forward.merge(a);
            }
            let mut order: Vec<usize> = (0..accs.len()).collect();
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let mut shuffled = PosteriorAccumulator::default();
            for i in order {
                shuffled.merge(accs[i].clone());
            }
            prop_assert_eq!(forward, shuffled);
        }
    }

    fn small_task() -> (Corpus, NGramLm) {
        let text: Vec<Vec<&str>> = ["a b c", "b c a", "a c", "c b a b"].iter().map(|l| l.split(' ').collect()).collect();
        let vocab = Vocabulary::build(&text, 1).unwrap();
        let lm = NGramLm::train(&vocab.encode_sentences(&text, Side::Target), &vocab, 2, &Discount::Estimate).unwrap();
        let input = Corpus::new(vec![vec![3, 4, 5], vec![4, 5, 3], vec![5, 3]], Side::Source);
        (input, lm)
    }

    #[test]
    fn zero_iterations_is_identity() {
        let (input, lm) = small_task();
        let init = SparseLexicon::init_uniform(6, lm.vocab_size(), 0.0, Smoothing::none(6)).unwrap();
        let (out, stats) = train(&input, &lm, &TrainConfig { iterations: 0, ..TrainConfig::default() }, init.clone()).unwrap();
        assert_eq!(out, init);
        assert!(stats.iterations.is_empty());
    }

    #[test]
    fn exact_em_is_monotone_and_parallel_deterministic() {
        let (input, lm) = small_task();
        let init = SparseLexicon::init_uniform(6, lm.vocab_size(), 0.0, Smoothing::none(6)).unwrap();
        let mut config = TrainConfig::exact(8);
        config.workers = 1;
        let (serial, stats) = train(&input, &lm, &config, init.clone()).unwrap();
        for w in stats.iterations.windows(2) {
            assert!(w[1].loglik >= w[0].loglik - 1e-9);
        }
        config.workers = 4;
        let (parallel, stats4) = train(&input, &lm, &config, init).unwrap();
        assert_eq!(serial, parallel);
        let lls: Vec<f64> = stats.iterations.iter().map(|s| s.loglik).collect();
        let lls4: Vec<f64> = stats4.iterations.iter().map(|s| s.loglik).collect();
        assert_eq!(lls, lls4);
    }

    #[test]
    fn vocabulary_mismatch_is_rejected() {
        let (input, lm) = small_task();
        let init = SparseLexicon::init_uniform(6, lm.vocab_size() + 1, 0.0, Smoothing::none(6)).unwrap();
        assert!(matches!(train(&input, &lm, &TrainConfig::exact(1), init), Err(Error::VocabularyMismatch(_))));
    }

    #[test]
    fn convergence_stops_early() {
        let (input, lm) = small_task();
        let init = SparseLexicon::init_uniform(6, lm.vocab_size(), 0.0, Smoothing::none(6)).unwrap();
        let mut config = TrainConfig::exact(200);
        config.convergence_rel_tol = Some(1e-3);
        let (_, stats) = train(&input, &lm, &config, init).unwrap();
        assert!(stats.iterations.len() < 200);
    }

    #[test]
    fn stats_tsv_layout() {
        let stats = TrainStats {
            iterations: vec![IterationStats {
                iteration: 1,
                loglik: -2.5,
                active_fraction: 0.5,
                accuracy: None,
                skipped: 0,
                seconds: 0.25,
            }],
        };
        assert_eq!(stats.to_tsv(), "iter\tloglik\tactive_fraction\taccuracy\tseconds\n1\t-2.5\t0.5\tNA\t0.250\n");
    }
}
