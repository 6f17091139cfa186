//! The translation lexicon `p(f|e)`: sparse thresholded rows smoothed at
//! query time with a target-independent backoff distribution.

use std::sync::Arc;

use crate::classes::ClassMap;
use crate::corpus::WordId;
use crate::error::{Error, Result};

mod backoff;
mod io;

pub use backoff::{BackoffKind, BackoffModel};

/// One row of a lexicon: source ids sorted ascending with their weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LexiconRow {
    sources: Vec<WordId>,
    weights: Vec<f64>,
    normalized: bool,
}

impl LexiconRow {
    /// Unnormalized row from `(source, weight)` pairs. Duplicate sources are
    /// summed.
    pub fn from_weights(mut entries: Vec<(WordId, f64)>) -> Result<Self> {
        if entries.iter().any(|&(_, w)| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("lexicon weights must be finite and >= 0".into()));
        }
        entries.sort_by_key(|&(f, _)| f);
        let mut sources = Vec::with_capacity(entries.len());
        let mut weights: Vec<f64> = Vec::with_capacity(entries.len());
        for (f, w) in entries {
            if sources.last() == Some(&f) {
                *weights.last_mut().unwrap() += w;
            } else {
                sources.push(f);
                weights.push(w);
            }
        }
        Ok(Self { sources, weights, normalized: false })
    }

    /// Normalized row from nonnegative weights, not all zero.
    pub fn normalized(entries: Vec<(WordId, f64)>) -> Result<Self> {
        threshold_renormalize(&Self::from_weights(entries)?, 0.0)
    }

    /// Already-normalized row; the caller guarantees sorted unique ids and
    /// positive weights summing to one.
    fn normalized_unchecked(sources: Vec<WordId>, weights: Vec<f64>) -> Self {
        Self { sources, weights, normalized: true }
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn get(&self, f: WordId) -> f64 {
        match self.sources.binary_search(&f) {
            Ok(i) => self.weights[i],
            Err(_) => 0.0,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (WordId, f64)> + '_ {
        self.sources.iter().copied().zip(self.weights.iter().copied())
    }
}

/// Normalizes `row`, drops entries below `tau` and renormalizes the rest.
/// When nothing survives, the argmax (lowest id on ties) is kept with
/// probability one.
pub fn threshold_renormalize(row: &LexiconRow, tau: f64) -> Result<LexiconRow> {
    let total: f64 = row.weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::AllZeroWeights);
    }
    let mut sources = Vec::with_capacity(row.len());
    let mut weights = Vec::with_capacity(row.len());
    for (f, w) in row.iter() {
        let p = w / total;
        if p >= tau && p > 0.0 {
            sources.push(f);
            weights.push(p);
        }
    }
    if sources.is_empty() {
        let mut best = 0;
        for i in 1..row.len() {
            if row.weights[i] > row.weights[best] {
                best = i;
            }
        }
        return Ok(LexiconRow::normalized_unchecked(vec![row.sources[best]], vec![1.0]));
    }
    let kept: f64 = weights.iter().sum();
    for p in &mut weights {
        *p /= kept;
    }
    Ok(LexiconRow::normalized_unchecked(sources, weights))
}

/// Storage of one target word's row.
#[derive(Debug, Clone, PartialEq)]
pub enum RowSlot {
    /// Implicit uniform distribution over the whole source vocabulary.
    Uniform,
    /// No row: `p_sp(.|e) = 0` everywhere.
    Missing,
    /// Rows may be shared between target words of the same class.
    Stored(Arc<LexiconRow>),
}

/// Query-time smoothing: `λ·p_sp(f|e) + (1−λ)·p_bo(f)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Smoothing {
    pub lambda: f64,
    pub backoff: Arc<BackoffModel>,
}

impl Smoothing {
    pub fn new(lambda: f64, backoff: BackoffModel) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidArgument(format!("lambda {lambda} not in [0,1]")));
        }
        Ok(Self { lambda, backoff: Arc::new(backoff) })
    }

    /// `λ = 1`: the sparse lexicon alone.
    pub fn none(src_vocab_size: usize) -> Self {
        Self {
            lambda: 1.0,
            backoff: Arc::new(BackoffModel::uniform(src_vocab_size)),
        }
    }
}

/// Sparse translation lexicon over `tgt_vocab_size` rows and
/// `src_vocab_size` source words.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseLexicon {
    rows: Vec<RowSlot>,
    src_vocab_size: usize,
    tau: f64,
    smoothing: Smoothing,
}

impl SparseLexicon {
    /// Every row uniform, stored implicitly.
    pub fn init_uniform(src_vocab_size: usize, tgt_vocab_size: usize, tau: f64, smoothing: Smoothing) -> Result<Self> {
        if src_vocab_size == 0 || tgt_vocab_size == 0 {
            return Err(Error::InvalidArgument("vocabulary sizes must be >= 1".into()));
        }
        check_tau(tau)?;
        if tau >= 1.0 / src_vocab_size as f64 {
            return Err(Error::ThresholdTooHigh { tau, vocab_size: src_vocab_size });
        }
        Self::from_rows(vec![RowSlot::Uniform; tgt_vocab_size], src_vocab_size, tau, smoothing)
    }

    pub fn from_rows(rows: Vec<RowSlot>, src_vocab_size: usize, tau: f64, smoothing: Smoothing) -> Result<Self> {
        check_tau(tau)?;
        if smoothing.backoff.len() != src_vocab_size {
            return Err(Error::VocabularyMismatch(format!(
                "backoff covers {} source words, lexicon {}",
                smoothing.backoff.len(),
                src_vocab_size
            )));
        }
        for row in &rows {
            if let RowSlot::Stored(r) = row {
                if !r.normalized || r.is_empty() {
                    return Err(Error::InvalidArgument("stored rows must be normalized and non-empty".into()));
                }
                if r.sources.last().is_some_and(|&f| f as usize >= src_vocab_size) {
                    return Err(Error::VocabularyMismatch("row entry outside source vocabulary".into()));
                }
            }
        }
        Ok(Self { rows, src_vocab_size, tau, smoothing })
    }

    pub fn src_vocab_size(&self) -> usize {
        self.src_vocab_size
    }

    pub fn tgt_vocab_size(&self) -> usize {
        self.rows.len()
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn smoothing(&self) -> &Smoothing {
        &self.smoothing
    }

    pub fn lambda(&self) -> f64 {
        self.smoothing.lambda
    }

    pub fn with_smoothing(mut self, smoothing: Smoothing) -> Result<Self> {
        if smoothing.backoff.len() != self.src_vocab_size {
            return Err(Error::VocabularyMismatch("backoff size differs from source vocabulary".into()));
        }
        self.smoothing = smoothing;
        Ok(self)
    }

    pub fn row(&self, e: WordId) -> &RowSlot {
        &self.rows[e as usize]
    }

    pub fn rows(&self) -> &[RowSlot] {
        &self.rows
    }

    /// The unsmoothed sparse probability.
    pub fn sparse_prob(&self, f: WordId, e: WordId) -> f64 {
        match &self.rows[e as usize] {
            RowSlot::Uniform => 1.0 / self.src_vocab_size as f64,
            RowSlot::Missing => 0.0,
            RowSlot::Stored(row) => row.get(f),
        }
    }

    /// Smoothed probability. A target word without a row falls through to
    /// the backoff distribution entirely, so every row stays normalized.
    pub fn smoothed_prob(&self, f: WordId, e: WordId) -> f64 {
        let lambda = self.smoothing.lambda;
        let backoff = self.smoothing.backoff.prob(f);
        match &self.rows[e as usize] {
            RowSlot::Missing => backoff,
            _ if lambda == 0.0 => backoff,
            _ => lambda * self.sparse_prob(f, e) + (1.0 - lambda) * backoff,
        }
    }

    /// Entries physically held in memory; implicit uniform rows hold none,
    /// and shared rows count once per target word.
    pub fn materialized_entries(&self) -> usize {
        self.rows
            .iter()
            .map(|r| match r {
                RowSlot::Stored(row) => row.len(),
                _ => 0,
            })
            .sum()
    }

    /// Fraction of the full `V_src × V_tgt` table with non-zero sparse
    /// probability. Implicit uniform rows are fully active.
    pub fn active_fraction(&self) -> f64 {
        let active: usize = self
            .rows
            .iter()
            .map(|r| match r {
                RowSlot::Uniform => self.src_vocab_size,
                RowSlot::Missing => 0,
                RowSlot::Stored(row) => row.len(),
            })
            .sum();
        active as f64 / (self.src_vocab_size as f64 * self.rows.len() as f64)
    }

    /// Per-target row support sizes.
    pub fn row_sizes(&self) -> Vec<usize> {
        self.rows
            .iter()
            .map(|r| match r {
                RowSlot::Uniform => self.src_vocab_size,
                RowSlot::Missing => 0,
                RowSlot::Stored(row) => row.len(),
            })
            .collect()
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!("tau {tau} not in [0,1)")));
    }
    Ok(())
}

/// Expands a class-to-class lexicon into a word lexicon.
///
/// Each source word receives its class's probability under the target
/// word's class, giving an unnormalized row that is then thresholded and
/// renormalized. Target words of one class share a single row.
pub fn class_to_word_lexicon(
    class_lex: &SparseLexicon,
    src_classes: &ClassMap,
    tgt_classes: &ClassMap,
    tau: f64,
    smoothing: Smoothing,
) -> Result<SparseLexicon> {
    if class_lex.src_vocab_size() != src_classes.num_classes() || class_lex.tgt_vocab_size() != tgt_classes.num_classes() {
        return Err(Error::VocabularyMismatch(format!(
            "class lexicon is {}x{}, class maps have {} source and {} target classes",
            class_lex.tgt_vocab_size(),
            class_lex.src_vocab_size(),
            src_classes.num_classes(),
            tgt_classes.num_classes()
        )));
    }
    check_tau(tau)?;
    let members = src_classes.members();
    let mut class_rows: Vec<Option<RowSlot>> = vec![None; tgt_classes.num_classes()];
    let mut rows = Vec::with_capacity(tgt_classes.num_words());
    for e in 0..tgt_classes.num_words() as WordId {
        let ce = tgt_classes
            .class_of(e)
            .ok_or_else(|| Error::UnmappedWord(format!("target id {e}")))?;
        let slot = class_rows[ce as usize].get_or_insert_with(|| {
            let weights: Vec<(WordId, f64)> = (0..src_classes.num_classes() as WordId)
                .map(|cf| (cf, class_lex.sparse_prob(cf, ce)))
                .filter(|&(_, p)| p > 0.0)
                .flat_map(|(cf, p)| members[cf as usize].iter().map(move |&f| (f, p)))
                .collect();
            if weights.is_empty() {
                return RowSlot::Missing;
            }
            let raw = LexiconRow::from_weights(weights).expect("class probabilities are valid weights");
            RowSlot::Stored(Arc::new(threshold_renormalize(&raw, tau).expect("row has positive mass")))
        });
        rows.push(slot.clone());
    }
    SparseLexicon::from_rows(rows, src_classes.num_words(), tau, smoothing)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Side;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn row(entries: &[(WordId, f64)]) -> LexiconRow {
        LexiconRow::from_weights(entries.to_vec()).unwrap()
    }

    #[test]
    fn threshold_drops_and_renormalizes() {
        let r = threshold_renormalize(&row(&[(1, 0.7), (2, 0.25), (3, 0.05)]), 0.1).unwrap();
        assert_eq!(r.len(), 2);
        assert_abs_diff_eq!(r.get(1), 0.7 / 0.95, epsilon = 1e-15);
        assert_abs_diff_eq!(r.get(2), 0.25 / 0.95, epsilon = 1e-15);
        assert_abs_diff_eq!(r.get(1), 0.73684, epsilon = 1e-5);
        assert_eq!(r.get(3), 0.0);
    }

    #[test]
    fn zero_threshold_is_normalization() {
        let r = row(&[(1, 0.5), (4, 0.3), (7, 0.2)]);
        let t = threshold_renormalize(&r, 0.0).unwrap();
        for (f, w) in r.iter() {
            assert_abs_diff_eq!(t.get(f), w, epsilon = 1e-15);
        }
    }

    #[test]
    fn fallback_keeps_lowest_argmax() {
        let r = threshold_renormalize(&row(&[(2, 0.5), (1, 0.5)]), 0.6).unwrap();
        assert_eq!(r.iter().collect::<Vec<_>>(), vec![(1, 1.0)]);
    }

    #[test]
    fn all_zero_row_is_an_error() {
        assert!(matches!(threshold_renormalize(&row(&[(1, 0.0)]), 0.0), Err(Error::AllZeroWeights)));
        assert!(LexiconRow::from_weights(vec![(1, -0.5)]).is_err());
    }

    fn uniform_smoothing(v: usize, lambda: f64) -> Smoothing {
        Smoothing::new(lambda, BackoffModel::uniform(v)).unwrap()
    }

    #[test]
    fn uniform_init() {
        let lex = SparseLexicon::init_uniform(4, 3, 0.0, uniform_smoothing(4, 0.3)).unwrap();
        for e in 0..3 {
            for f in 0..4 {
                assert_eq!(lex.sparse_prob(f, e), 0.25);
                assert_abs_diff_eq!(lex.smoothed_prob(f, e), 0.25, epsilon = 1e-15);
            }
        }
        assert_eq!(lex.materialized_entries(), 0);
        assert_eq!(lex.active_fraction(), 1.0);
        assert!(matches!(
            SparseLexicon::init_uniform(4, 3, 0.25, uniform_smoothing(4, 0.3)),
            Err(Error::ThresholdTooHigh { .. })
        ));
    }

    #[test]
    fn smoothing_boundaries() {
        let stored = |lambda| {
            let r = threshold_renormalize(&row(&[(0, 0.5), (1, 0.5)]), 0.0).unwrap();
            SparseLexicon::from_rows(
                vec![RowSlot::Stored(Arc::new(r)), RowSlot::Missing],
                677,
                0.0,
                uniform_smoothing(677, lambda),
            )
            .unwrap()
        };
        let lex = stored(1.0);
        assert_eq!(lex.smoothed_prob(0, 0), 0.5);
        assert_eq!(lex.smoothed_prob(5, 0), 0.0);
        let lex = stored(0.0);
        assert_abs_diff_eq!(lex.smoothed_prob(0, 0), 1.0 / 677.0, epsilon = 1e-15);
        assert_abs_diff_eq!(lex.smoothed_prob(0, 1), 1.0 / 677.0, epsilon = 1e-15);
        let lex = stored(0.99);
        assert_abs_diff_eq!(lex.smoothed_prob(0, 0), 0.99 * 0.5 + 0.01 / 677.0, epsilon = 1e-15);
        assert_abs_diff_eq!(lex.smoothed_prob(0, 0), 0.4950148, epsilon = 1e-7);
        assert!(lex.smoothed_prob(300, 1) > 0.0);
    }

    #[test]
    fn active_fraction_counts_entries() {
        let r1 = threshold_renormalize(&row(&[(0, 1.0)]), 0.0).unwrap();
        let r2 = threshold_renormalize(&row(&[(0, 1.0), (1, 1.0)]), 0.0).unwrap();
        let lex = SparseLexicon::from_rows(
            vec![RowSlot::Stored(Arc::new(r1)), RowSlot::Stored(Arc::new(r2))],
            2,
            0.0,
            Smoothing::none(2),
        )
        .unwrap();
        assert_eq!(lex.active_fraction(), 0.75);
    }

    fn class_setup(tau: f64) -> SparseLexicon {
        // source words 3,4 in class 3 and word 5 in class 4; target words
        // 3,4 both in class 3
        let src = ClassMap::new(vec![0, 1, 2, 3, 3, 4], 5, Side::Source).unwrap();
        let tgt = ClassMap::new(vec![0, 1, 2, 3, 3], 4, Side::Target).unwrap();
        let class_row = threshold_renormalize(&row(&[(3, 0.8), (4, 0.2)]), 0.0).unwrap();
        let mut class_rows = vec![RowSlot::Missing; 4];
        class_rows[3] = RowSlot::Stored(Arc::new(class_row));
        let class_lex = SparseLexicon::from_rows(class_rows, 5, 0.0, Smoothing::none(5)).unwrap();
        class_to_word_lexicon(&class_lex, &src, &tgt, tau, Smoothing::none(6)).unwrap()
    }

    #[test]
    fn class_expansion_unthresholded() {
        let lex = class_setup(0.0);
        assert_abs_diff_eq!(lex.sparse_prob(3, 3), 4.0 / 9.0, epsilon = 1e-15);
        assert_abs_diff_eq!(lex.sparse_prob(4, 3), 4.0 / 9.0, epsilon = 1e-15);
        assert_abs_diff_eq!(lex.sparse_prob(5, 3), 1.0 / 9.0, epsilon = 1e-15);
        assert_eq!(lex.row(3), lex.row(4));
        assert_eq!(lex.row(0), &RowSlot::Missing);
    }

    #[test]
    fn class_expansion_drops_whole_class() {
        let lex = class_setup(0.15);
        assert_eq!(lex.sparse_prob(3, 4), 0.5);
        assert_eq!(lex.sparse_prob(4, 4), 0.5);
        assert_eq!(lex.sparse_prob(5, 4), 0.0);
        match (lex.row(3), lex.row(4)) {
            (RowSlot::Stored(a), RowSlot::Stored(b)) => assert!(Arc::ptr_eq(a, b)),
            other => panic!("unexpected rows {other:?}"),
        }
    }

    fn weights() -> impl Strategy<Value = Vec<(WordId, f64)>> {
        proptest::collection::vec((0u32..30, 0.0f64..1.0), 1..20)
            .prop_filter("positive mass", |v| v.iter().map(|x| x.1).sum::<f64>() > 1e-6)
    }

    proptest! {
        #[test]
        fn threshold_is_idempotent(w in weights(), tau in 0.0f64..0.5) {
            let once = threshold_renormalize(&row(&w), tau).unwrap();
            let twice = threshold_renormalize(&once, tau).unwrap();
            prop_assert_eq!(once.sources.clone(), twice.sources.clone());
            for (a, b) in once.weights.iter().zip(&twice.weights) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn raising_tau_never_grows_support(w in weights(), t1 in 0.0f64..0.5, t2 in 0.0f64..0.5) {
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            let a = threshold_renormalize(&row(&w), lo).unwrap();
            let b = threshold_renormalize(&row(&w), hi).unwrap();
            prop_assert!(b.len() <= a.len());
        }

        #[test]
        fn smoothed_rows_normalize(w in weights(), lambda in 0.0f64..=1.0, tau in 0.0f64..0.3) {
            let v = 30;
            let r = threshold_renormalize(&row(&w), tau).unwrap();
            let lex = SparseLexicon::from_rows(
                vec![RowSlot::Stored(Arc::new(r)), RowSlot::Uniform, RowSlot::Missing],
                v, tau, uniform_smoothing(v, lambda)).unwrap();
            for e in 0..3 {
                let total: f64 = (0..v as WordId).map(|f| lex.smoothed_prob(f, e)).sum();
                prop_assert!((total - 1.0).abs() < 1e-9);
            }
        }
    }
}
