//! Trellis search over (target word, LM state) nodes shared by the E-step
//! and the decoder. The forward recursion runs in the log semiring for
//! training and in the max semiring for decoding.

use rustc_hash::FxHashMap;

use crate::corpus::WordId;
use crate::error::{Error, Result};
use crate::lexicon::{RowSlot, SparseLexicon};
use crate::lm::{LmState, NGramLm};

/// Beam value meaning "no limit".
pub const UNLIMITED: usize = usize::MAX;

/// Pruning and preselection limits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Beams {
    /// Nodes kept per position.
    pub histogram: usize,
    /// Target words kept per source word by lexicon score.
    pub lex: usize,
    /// Target words kept per LM state by LM score.
    pub lm: usize,
}

impl Default for Beams {
    fn default() -> Self {
        Self { histogram: 50, lex: 5, lm: 50 }
    }
}

impl Beams {
    pub fn unlimited() -> Self {
        Self { histogram: UNLIMITED, lex: UNLIMITED, lm: UNLIMITED }
    }

    pub fn validate(&self) -> Result<()> {
        if self.histogram == 0 {
            return Err(Error::InvalidArgument("histogram beam must be >= 1".into()));
        }
        if self.lex == 0 && self.lm == 0 {
            return Err(Error::InvalidArgument("lexical and LM beams cannot both be 0".into()));
        }
        Ok(())
    }
}

/// Candidate target words for each source position.
///
/// The lexical part depends only on the source word and is computed once;
/// the LM part depends only on the LM state and is cached per worker.
#[derive(Debug, Clone)]
pub struct Preselector<'a> {
    lm: &'a NGramLm,
    emittable: Vec<WordId>,
    /// Indexed by source id; ascending target ids. Empty for words not
    /// requested at construction.
    lexical: Vec<Vec<WordId>>,
    lm_beam: usize,
    all: bool,
}

/// Per-worker scratch space: LM preselection lists by state, and lexicon
/// log-scores of the current position stamped by a generation counter.
#[derive(Debug, Default)]
pub struct SearchCache {
    lm_lists: FxHashMap<LmState, Vec<WordId>>,
    lex_scores: Vec<f64>,
    lex_stamp: Vec<u32>,
    generation: u32,
}

impl SearchCache {
    fn next_position(&mut self, tgt_vocab_size: usize) {
        if self.lex_stamp.len() != tgt_vocab_size || self.generation == u32::MAX {
            self.lex_scores = vec![0.0; tgt_vocab_size];
            self.lex_stamp = vec![0; tgt_vocab_size];
            self.generation = 0;
        }
        self.generation += 1;
    }

    fn lex_log_prob(&mut self, lex: &SparseLexicon, f: WordId, e: WordId) -> f64 {
        let i = e as usize;
        if self.lex_stamp[i] != self.generation {
            self.lex_stamp[i] = self.generation;
            self.lex_scores[i] = lex.smoothed_prob(f, e).ln();
        }
        self.lex_scores[i]
    }
}

impl<'a> Preselector<'a> {
    /// Builds lexical candidate lists for the given source words.
    pub fn new(
        lex: &SparseLexicon,
        lm: &'a NGramLm,
        sources: impl IntoIterator<Item = WordId>,
        beams: &Beams,
    ) -> Self {
        let emittable: Vec<WordId> = lm.emittable_words().collect();
        let all = beams.lex >= emittable.len() || beams.lm >= emittable.len();
        let mut lexical = vec![Vec::new(); lex.src_vocab_size()];
        if !all {
            let mut needed = vec![false; lex.src_vocab_size()];
            for f in sources {
                needed[f as usize] = true;
            }
            let lists = lexical_lists(lex, &emittable, &needed, beams.lex);
            for (f, list) in lists {
                lexical[f as usize] = list;
            }
        }
        Self { lm, emittable, lexical, lm_beam: beams.lm, all }
    }

    /// Whether every emittable word is always a candidate.
    pub fn is_exhaustive(&self) -> bool {
        self.all
    }

    pub fn emittable(&self) -> &[WordId] {
        &self.emittable
    }

    /// Writes the ascending, duplicate-free candidate set into `out`.
    pub fn candidates(&self, f: WordId, state: LmState, cache: &mut SearchCache, out: &mut Vec<WordId>) {
        out.clear();
        if self.all {
            out.extend_from_slice(&self.emittable);
            return;
        }
        let lexical = &self.lexical[f as usize];
        let lm_list: &[WordId] = if self.lm_beam == 0 {
            &[]
        } else {
            cache.lm_lists.entry(state).or_insert_with(|| {
                let mut top = self.lm.top_successors(state, self.lm_beam);
                top.sort_unstable();
                top
            })
        };
        let (mut i, mut j) = (0, 0);
        while i < lexical.len() || j < lm_list.len() {
            let next = match (lexical.get(i), lm_list.get(j)) {
                (Some(&a), Some(&b)) if a == b => {
                    i += 1;
                    j += 1;
                    a
                }
                (Some(&a), Some(&b)) if a < b => {
                    i += 1;
                    a
                }
                (Some(_), Some(&b)) => {
                    j += 1;
                    b
                }
                (Some(&a), None) => {
                    i += 1;
                    a
                }
                (None, Some(&b)) => {
                    j += 1;
                    b
                }
                (None, None) => unreachable!(),
            };
            out.push(next);
        }
    }
}

/// Top `k` emittable targets by `smoothed_prob(f|e)` for each needed `f`,
/// ties by lowest id, returned in ascending id order.
///
/// For fixed `f` the smoothed score is `λ·s + const`, where `s` is the
/// sparse probability, or `p_bo(f)` for rows that are absent and fall
/// through to the backoff. Ranking by `s` therefore ranks by the smoothed
/// score whenever `λ > 0`.
fn lexical_lists(lex: &SparseLexicon, emittable: &[WordId], needed: &[bool], k: usize) -> Vec<(WordId, Vec<WordId>)> {
    let needed_ids: Vec<WordId> = (0..needed.len() as WordId).filter(|&f| needed[f as usize]).collect();
    if k == 0 {
        return Vec::new();
    }
    if lex.lambda() == 0.0 {
        let first: Vec<WordId> = emittable[..k.min(emittable.len())].to_vec();
        return needed_ids.into_iter().map(|f| (f, first.clone())).collect();
    }
    let uniform_p = 1.0 / lex.src_vocab_size() as f64;
    let mut uniform = Vec::new();
    let mut missing = Vec::new();
    let mut inverted: Vec<Vec<(WordId, f64)>> = vec![Vec::new(); needed.len()];
    for &e in emittable {
        match lex.row(e) {
            RowSlot::Uniform => uniform.push(e),
            RowSlot::Missing => missing.push(e),
            RowSlot::Stored(row) => {
                for (f, p) in row.iter() {
                    if needed[f as usize] {
                        inverted[f as usize].push((e, p));
                    }
                }
            }
        }
    }
    let backoff = &lex.smoothing().backoff;
    let mut chosen = vec![false; lex.tgt_vocab_size()];
    needed_ids
        .into_iter()
        .map(|f| {
            let mut scored = std::mem::take(&mut inverted[f as usize]);
            scored.extend(uniform.iter().take(k).map(|&e| (e, uniform_p)));
            let p_bo = backoff.prob(f);
            if p_bo > 0.0 {
                scored.extend(missing.iter().take(k).map(|&e| (e, p_bo)));
            }
            scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            scored.truncate(k);
            let mut list: Vec<WordId> = scored.into_iter().map(|(e, _)| e).collect();
            if list.len() < k {
                // everything left scores s = 0; fill by id
                for &e in &list {
                    chosen[e as usize] = true;
                }
                let fill: Vec<WordId> = emittable
                    .iter()
                    .copied()
                    .filter(|&e| !chosen[e as usize])
                    .take(k - list.len())
                    .collect();
                for &e in &list {
                    chosen[e as usize] = false;
                }
                list.extend(fill);
            }
            list.sort_unstable();
            (f, list)
        })
        .collect()
}

/// Everything a trellis expansion reads.
#[derive(Clone, Copy)]
pub struct SearchModel<'m, 'a> {
    pub lex: &'m SparseLexicon,
    pub lm: &'a NGramLm,
    pub preselector: &'m Preselector<'a>,
    pub histogram: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Semiring {
    Sum,
    Max,
}

#[derive(Debug, Clone, Copy)]
struct Node {
    e: WordId,
    state: LmState,
    score: f64,
    /// Best predecessor in the previous layer (max semiring only).
    back: u32,
}

#[derive(Debug, Clone, Copy)]
struct Edge {
    from: u32,
    to: u32,
    weight: f64,
}

#[derive(Debug, Default)]
struct Layer {
    nodes: Vec<Node>,
    /// Edges from the previous layer (sum semiring only).
    edges: Vec<Edge>,
}

/// Log-sum-exp per slot, given each slot's maximum and the (slot, value)
/// pairs. One exponential per value and one logarithm per slot.
fn grouped_log_sum(max: impl Iterator<Item = f64>, values: impl Iterator<Item = (u32, f64)>) -> Vec<f64> {
    let max: Vec<f64> = max.collect();
    let mut sums = vec![0.0; max.len()];
    for (slot, v) in values {
        let m = max[slot as usize];
        if m > f64::NEG_INFINITY {
            sums[slot as usize] += (v - m).exp();
        }
    }
    max.iter()
        .zip(sums)
        .map(|(&m, s)| if m == f64::NEG_INFINITY { m } else { m + s.ln() })
        .collect()
}

fn log_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let values: Vec<f64> = values.into_iter().collect();
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + values.iter().map(|v| (v - hi).exp()).sum::<f64>().ln()
}

/// Forward pass. Layer 0 is the sentence-start node; layer `n` holds the
/// nodes retained for position `n - 1`. Retained nodes of every layer are
/// sorted by (target id, LM state).
fn forward(sentence: &[WordId], model: &SearchModel, mode: Semiring, cache: &mut SearchCache) -> Result<Vec<Layer>> {
    if sentence.is_empty() {
        return Err(Error::InvalidArgument("empty sentence".into()));
    }
    let lm = model.lm;
    let mut layers = Vec::with_capacity(sentence.len() + 1);
    layers.push(Layer {
        nodes: vec![Node { e: crate::corpus::BOS_ID, state: lm.begin_state(), score: 0.0, back: 0 }],
        edges: Vec::new(),
    });
    let mut candidates = Vec::new();
    let mut index: FxHashMap<(WordId, LmState), u32> = FxHashMap::default();
    for (pos, &f) in sentence.iter().enumerate() {
        let prev = &layers[pos].nodes;
        let mut nodes: Vec<Node> = Vec::new();
        let mut edges: Vec<Edge> = Vec::new();
        index.clear();
        cache.next_position(model.lex.tgt_vocab_size());
        for (from, node) in prev.iter().enumerate() {
            model.preselector.candidates(f, node.state, cache, &mut candidates);
            for &e in &candidates {
                let lex_lp = cache.lex_log_prob(model.lex, f, e);
                if lex_lp == f64::NEG_INFINITY {
                    continue;
                }
                let (lm_lp, next) = lm.score(node.state, e);
                let weight = lm_lp + lex_lp;
                if weight == f64::NEG_INFINITY {
                    continue;
                }
                let score = node.score + weight;
                let to = *index.entry((e, next)).or_insert_with(|| {
                    nodes.push(Node { e, state: next, score: f64::NEG_INFINITY, back: from as u32 });
                    nodes.len() as u32 - 1
                });
                let target = &mut nodes[to as usize];
                match mode {
                    Semiring::Sum => {
                        // running max; the sum is formed once all edges are known
                        target.score = target.score.max(score);
                        edges.push(Edge { from: from as u32, to, weight });
                    }
                    Semiring::Max => {
                        // predecessors arrive in ascending target id, so a
                        // strict comparison keeps the lowest id on ties
                        if score > target.score {
                            target.score = score;
                            target.back = from as u32;
                        }
                    }
                }
            }
        }
        if nodes.is_empty() {
            return Err(Error::NoPath { position: pos });
        }
        if mode == Semiring::Sum {
            let sums = grouped_log_sum(
                nodes.iter().map(|n| n.score),
                edges.iter().map(|edge| (edge.to, prev[edge.from as usize].score + edge.weight)),
            );
            for (node, s) in nodes.iter_mut().zip(sums) {
                node.score = s;
            }
        }
        // prune, then restore (e, state) order and remap edges
        let mut order: Vec<u32> = (0..nodes.len() as u32).collect();
        if nodes.len() > model.histogram {
            let cmp = |a: &u32, b: &u32| {
                let (x, y) = (&nodes[*a as usize], &nodes[*b as usize]);
                y.score.total_cmp(&x.score).then((x.e, x.state).cmp(&(y.e, y.state)))
            };
            order.select_nth_unstable_by(model.histogram - 1, cmp);
            order.truncate(model.histogram);
        }
        order.sort_by_key(|&i| (nodes[i as usize].e, nodes[i as usize].state));
        let mut remap = vec![u32::MAX; nodes.len()];
        for (new, &old) in order.iter().enumerate() {
            remap[old as usize] = new as u32;
        }
        let kept: Vec<Node> = order.iter().map(|&i| nodes[i as usize]).collect();
        edges.retain_mut(|edge| {
            edge.to = remap[edge.to as usize];
            edge.to != u32::MAX
        });
        layers.push(Layer { nodes: kept, edges });
    }
    Ok(layers)
}

/// Posterior distribution over target words at each position.
#[derive(Debug, Clone, PartialEq)]
pub struct SentencePosteriors {
    /// Per position: (target id, probability), ascending ids, summing to 1.
    pub positions: Vec<Vec<(WordId, f64)>>,
    /// Log of the total forward mass at sentence end. A lower bound on the
    /// exact marginal when pruning removed nodes.
    pub loglik: f64,
}

/// Pruned forward-backward over one sentence.
pub fn forward_backward_with(
    sentence: &[WordId],
    model: &SearchModel,
    cache: &mut SearchCache,
) -> Result<SentencePosteriors> {
    let layers = forward(sentence, model, Semiring::Sum, cache)?;
    let lm = model.lm;
    let last = layers.last().expect("non-empty sentence");
    let mut beta: Vec<f64> = last
        .nodes
        .iter()
        .map(|n| lm.log_prob(n.state, crate::corpus::EOS_ID))
        .collect();
    let loglik = log_sum(last.nodes.iter().zip(&beta).map(|(n, b)| n.score + b));
    if loglik == f64::NEG_INFINITY {
        return Err(Error::NoPath { position: sentence.len() });
    }
    let mut positions = vec![Vec::new(); sentence.len()];
    for pos in (1..layers.len()).rev() {
        let layer = &layers[pos];
        let joint: Vec<f64> = layer.nodes.iter().zip(&beta).map(|(n, b)| n.score + b).collect();
        let z = log_sum(joint.iter().copied());
        let mut post: Vec<(WordId, f64)> = Vec::new();
        for (node, j) in layer.nodes.iter().zip(&joint) {
            let p = (j - z).exp();
            match post.last_mut() {
                Some((e, acc)) if *e == node.e => *acc += p,
                _ => post.push((node.e, p)),
            }
        }
        post.retain(|&(_, p)| p > 0.0);
        positions[pos - 1] = post;

        let prev_len = layers[pos - 1].nodes.len();
        let mut max = vec![f64::NEG_INFINITY; prev_len];
        for edge in &layer.edges {
            let v = edge.weight + beta[edge.to as usize];
            max[edge.from as usize] = max[edge.from as usize].max(v);
        }
        beta = grouped_log_sum(
            max.into_iter(),
            layer.edges.iter().map(|edge| (edge.from, edge.weight + beta[edge.to as usize])),
        );
    }
    Ok(SentencePosteriors { positions, loglik })
}

/// Best path under the max semiring and its joint log-score.
pub fn viterbi_with(sentence: &[WordId], model: &SearchModel, cache: &mut SearchCache) -> Result<(Vec<WordId>, f64)> {
    let layers = forward(sentence, model, Semiring::Max, cache)?;
    let lm = model.lm;
    let last = layers.last().expect("non-empty sentence");
    let mut best = (f64::NEG_INFINITY, 0u32);
    for (i, node) in last.nodes.iter().enumerate() {
        let s = node.score + lm.log_prob(node.state, crate::corpus::EOS_ID);
        if s > best.0 {
            best = (s, i as u32);
        }
    }
    if best.0 == f64::NEG_INFINITY {
        return Err(Error::NoPath { position: sentence.len() });
    }
    let mut path = vec![0; sentence.len()];
    let mut idx = best.1;
    for pos in (1..layers.len()).rev() {
        let node = &layers[pos].nodes[idx as usize];
        path[pos - 1] = node.e;
        idx = node.back;
    }
    Ok((path, best.0))
}

/// One-off forward-backward with freshly built preselection.
pub fn forward_backward(sentence: &[WordId], lex: &SparseLexicon, lm: &NGramLm, beams: &Beams) -> Result<SentencePosteriors> {
    beams.validate()?;
    let pre = Preselector::new(lex, lm, sentence.iter().copied(), beams);
    let model = SearchModel { lex, lm, preselector: &pre, histogram: beams.histogram };
    forward_backward_with(sentence, &model, &mut SearchCache::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Side, Vocabulary};
    use crate::lexicon::{LexiconRow, Smoothing};
    use crate::lm::Discount;
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    fn toy_lm() -> NGramLm {
        let text: Vec<Vec<&str>> = ["a b", "a c", "b a c", "c"].iter().map(|l| l.split(' ').collect()).collect();
        let vocab = Vocabulary::build(&text, 1).unwrap();
        let corpus = vocab.encode_sentences(&text, Side::Target);
        NGramLm::train(&corpus, &vocab, 2, &Discount::Estimate).unwrap()
    }

    fn stored(entries: &[(WordId, f64)]) -> RowSlot {
        RowSlot::Stored(Arc::new(LexiconRow::normalized(entries.to_vec()).unwrap()))
    }

    #[test]
    fn single_position_closed_form() {
        let lm = toy_lm();
        let v = lm.vocab_size();
        let lex = SparseLexicon::init_uniform(5, v, 0.0, Smoothing::none(5)).unwrap();
        let post = forward_backward(&[3], &lex, &lm, &Beams::unlimited()).unwrap();
        let begin = lm.begin_state();
        let weights: Vec<(WordId, f64)> = lm
            .emittable_words()
            .map(|e| {
                let (lp, next) = lm.score(begin, e);
                (e, (lp + lm.log_prob(next, crate::corpus::EOS_ID)).exp() * 0.2)
            })
            .collect();
        let z: f64 = weights.iter().map(|w| w.1).sum();
        assert_abs_diff_eq!(post.loglik, z.ln(), epsilon = 1e-12);
        for ((e, p), (e2, w)) in post.positions[0].iter().zip(&weights) {
            assert_eq!(e, e2);
            assert_abs_diff_eq!(*p, w / z, epsilon = 1e-12);
        }
    }

    #[test]
    fn lexical_preselection_ranks_by_smoothed_score() {
        let lm = toy_lm();
        let v = lm.vocab_size();
        // emittable: 2 (unk), 3, 4, 5
        let mut rows = vec![RowSlot::Missing; v];
        rows[3] = stored(&[(3, 0.9), (4, 0.1)]);
        rows[4] = stored(&[(3, 0.1), (4, 0.9)]);
        rows[5] = stored(&[(4, 1.0)]);
        rows[2] = RowSlot::Uniform;
        let lex = SparseLexicon::from_rows(rows, 5, 0.0, Smoothing::none(5)).unwrap();
        let beams = Beams { histogram: UNLIMITED, lex: 1, lm: 0 };
        let pre = Preselector::new(&lex, &lm, [3, 4], &beams);
        let mut cache = SearchCache::default();
        let mut out = Vec::new();
        pre.candidates(3, lm.begin_state(), &mut cache, &mut out);
        assert_eq!(out, vec![3]);
        pre.candidates(4, lm.begin_state(), &mut cache, &mut out);
        assert_eq!(out, vec![5]);
        let beams = Beams { histogram: UNLIMITED, lex: 3, lm: 0 };
        let pre = Preselector::new(&lex, &lm, [3], &beams);
        pre.candidates(3, lm.begin_state(), &mut cache, &mut out);
        // 0.9 (e=3), 0.2 uniform (e=2), 0.1 (e=4)
        assert_eq!(out, vec![2, 3, 4]);
    }

    #[test]
    fn missing_rows_rank_by_backoff_when_smoothing() {
        let lm = toy_lm();
        let v = lm.vocab_size();
        let mut rows = vec![RowSlot::Missing; v];
        rows[3] = stored(&[(4, 1.0)]);
        rows[4] = stored(&[(3, 0.1), (4, 0.9)]);
        let smoothing = Smoothing::new(0.5, crate::lexicon::BackoffModel::uniform(5)).unwrap();
        let lex = SparseLexicon::from_rows(rows, 5, 0.0, smoothing).unwrap();
        let beams = Beams { histogram: UNLIMITED, lex: 2, lm: 0 };
        let pre = Preselector::new(&lex, &lm, [3], &beams);
        let mut out = Vec::new();
        pre.candidates(3, lm.begin_state(), &mut SearchCache::default(), &mut out);
        // s: e=2 -> 0.2 (falls through), e=5 -> 0.2, e=4 -> 0.1, e=3 -> 0
        assert_eq!(out, vec![2, 5]);
        for e in [2, 5] {
            assert!(lex.smoothed_prob(3, e) > lex.smoothed_prob(3, 4));
        }
    }

    #[test]
    fn candidate_union_with_lm_beam() {
        let lm = toy_lm();
        let v = lm.vocab_size();
        let lex = SparseLexicon::init_uniform(5, v, 0.0, Smoothing::none(5)).unwrap();
        let beams = Beams { histogram: UNLIMITED, lex: 1, lm: 1 };
        let pre = Preselector::new(&lex, &lm, [3], &beams);
        let mut out = Vec::new();
        let s = lm.begin_state();
        pre.candidates(3, s, &mut SearchCache::default(), &mut out);
        let mut expected = vec![2, lm.top_successors(s, 1)[0]];
        expected.sort();
        expected.dedup();
        assert_eq!(out, expected);
    }

    #[test]
    fn posteriors_normalize_under_pruning() {
        let lm = toy_lm();
        let v = lm.vocab_size();
        let lex = SparseLexicon::init_uniform(5, v, 0.0, Smoothing::none(5)).unwrap();
        let beams = Beams { histogram: 2, lex: 2, lm: 1 };
        let post = forward_backward(&[3, 4, 3, 3], &lex, &lm, &beams).unwrap();
        for p in &post.positions {
            let total: f64 = p.iter().map(|x| x.1).sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
            assert!(p.len() <= 2);
        }
        let exact = forward_backward(&[3, 4, 3, 3], &lex, &lm, &Beams::unlimited()).unwrap();
        assert!(post.loglik <= exact.loglik + 1e-12);
    }

    #[test]
    fn zero_probability_sentence_has_no_path() {
        let lm = toy_lm();
        let v = lm.vocab_size();
        let mut rows = vec![RowSlot::Missing; v];
        for slot in rows.iter_mut().skip(2) {
            *slot = stored(&[(3, 1.0)]);
        }
        let lex = SparseLexicon::from_rows(rows, 5, 0.0, Smoothing::none(5)).unwrap();
        assert!(matches!(
            forward_backward(&[3, 4], &lex, &lm, &Beams::unlimited()),
            Err(Error::NoPath { position: 1 })
        ));
    }

    #[test]
    fn invalid_beams() {
        assert!(Beams { histogram: 0, lex: 1, lm: 1 }.validate().is_err());
        assert!(Beams { histogram: 1, lex: 0, lm: 0 }.validate().is_err());
        assert!(Beams { histogram: 1, lex: 1, lm: 0 }.validate().is_ok());
    }
}
