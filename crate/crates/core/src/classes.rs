//! Word clustering by the exchange algorithm on the class-bigram likelihood.
//!
//! The special tokens keep singleton classes whose ids equal their word ids
//! (0..3); the `K` clusterable classes follow. A class corpus therefore uses
//! the same boundary/unknown ids as a word corpus and can be fed straight to
//! the language model and the trainer.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashMap;

use crate::corpus::{Corpus, Side, Vocabulary, WordId, BOS_ID, EOS_ID, NUM_SPECIALS};
use crate::error::{Error, Result};

pub type ClassId = u32;

/// Word-to-class assignment for one language side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMap {
    assignment: Vec<ClassId>,
    num_classes: usize,
    side: Side,
}

impl ClassMap {
    pub fn new(assignment: Vec<ClassId>, num_classes: usize, side: Side) -> Result<Self> {
        if num_classes < NUM_SPECIALS || assignment.len() < NUM_SPECIALS {
            return Err(Error::InvalidArgument("class map must include the specials".into()));
        }
        for (w, &c) in assignment.iter().enumerate() {
            if c as usize >= num_classes {
                return Err(Error::InvalidArgument(format!("word {w} has class {c} >= {num_classes}")));
            }
            let special_word = w < NUM_SPECIALS;
            let special_class = (c as usize) < NUM_SPECIALS;
            if special_word != special_class || (special_word && c as usize != w) {
                return Err(Error::InvalidArgument(format!(
                    "word {w}: special tokens must keep their own singleton class"
                )));
            }
        }
        Ok(Self { assignment, num_classes, side })
    }

    /// Identity-like map with one class per word.
    pub fn identity(vocab_size: usize, side: Side) -> Self {
        Self {
            assignment: (0..vocab_size as ClassId).collect(),
            num_classes: vocab_size,
            side,
        }
    }

    pub fn class_of(&self, w: WordId) -> Option<ClassId> {
        self.assignment.get(w as usize).copied()
    }

    /// Total number of classes, specials included.
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Number of clusterable classes (`K`).
    pub fn k(&self) -> usize {
        self.num_classes - NUM_SPECIALS
    }

    pub fn num_words(&self) -> usize {
        self.assignment.len()
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn assignment(&self) -> &[ClassId] {
        &self.assignment
    }

    /// Member words of every class, in ascending word id.
    pub fn members(&self) -> Vec<Vec<WordId>> {
        let mut out = vec![Vec::new(); self.num_classes];
        for (w, &c) in self.assignment.iter().enumerate() {
            out[c as usize].push(w as WordId);
        }
        out
    }

    /// Vocabulary over class ids: the specials, then `C3`, `C4`, ...
    pub fn class_vocabulary(&self) -> Vocabulary {
        Vocabulary::from_words((NUM_SPECIALS..self.num_classes).map(|c| (format!("C{c}"), 0)))
    }

    /// Writes `word<TAB>class-id` rows, one per word type.
    pub fn write_tsv(&self, vocab: &Vocabulary, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        for (w, &c) in self.assignment.iter().enumerate() {
            writeln!(out, "{}\t{}", vocab.decode(w as WordId), c)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a class map and aligns it with `vocab`. Every vocabulary word
    /// must be listed.
    pub fn read_tsv(vocab: &Vocabulary, side: Side, path: impl AsRef<Path>) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut by_word: FxHashMap<String, ClassId> = FxHashMap::default();
        let mut max_class = 0;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let parsed = line
                .split_once('\t')
                .and_then(|(w, c)| Some((w.to_string(), c.trim().parse::<ClassId>().ok()?)));
            let (w, c) = parsed.ok_or_else(|| Error::Parse {
                line: lineno + 1,
                message: format!("expected word<TAB>class, got {line:?}"),
            })?;
            max_class = max_class.max(c);
            by_word.insert(w, c);
        }
        let assignment = vocab
            .words()
            .iter()
            .map(|w| by_word.get(w).copied().ok_or_else(|| Error::UnmappedWord(w.clone())))
            .collect::<Result<Vec<_>>>()?;
        Self::new(assignment, (max_class as usize + 1).max(NUM_SPECIALS), side)
    }
}

/// Replaces every token by its class.
pub fn map_corpus(text: &Corpus, map: &ClassMap) -> Result<Corpus> {
    let sentences = text
        .sentences
        .iter()
        .map(|s| {
            s.iter()
                .map(|&w| map.class_of(w).ok_or_else(|| Error::UnmappedWord(format!("id {w}"))))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus::new(sentences, text.side))
}

fn xlogx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

/// Word unigram and bigram counts over `<s>`/`</s>`-padded sentences.
struct WordCounts {
    unigram: Vec<f64>,
    /// successors[w]: (v, n(w,v)), sorted by v
    successors: Vec<Vec<(WordId, f64)>>,
    predecessors: Vec<Vec<(WordId, f64)>>,
    first_seen: Vec<usize>,
}

impl WordCounts {
    fn new(text: &Corpus, vocab_size: usize) -> Self {
        let mut unigram = vec![0.0; vocab_size];
        let mut first_seen = vec![usize::MAX; vocab_size];
        let mut bigrams: FxHashMap<(WordId, WordId), f64> = FxHashMap::default();
        let mut pos = 0usize;
        for s in &text.sentences {
            if s.is_empty() {
                continue;
            }
            let padded = std::iter::once(BOS_ID).chain(s.iter().copied()).chain(std::iter::once(EOS_ID));
            let mut prev: Option<WordId> = None;
            for w in padded {
                unigram[w as usize] += 1.0;
                if first_seen[w as usize] == usize::MAX {
                    first_seen[w as usize] = pos;
                }
                pos += 1;
                if let Some(p) = prev {
                    *bigrams.entry((p, w)).or_insert(0.0) += 1.0;
                }
                prev = Some(w);
            }
        }
        let mut successors = vec![Vec::new(); vocab_size];
        let mut predecessors = vec![Vec::new(); vocab_size];
        let mut pairs: Vec<_> = bigrams.into_iter().collect();
        pairs.sort_by_key(|&((a, b), _)| (a, b));
        for ((a, b), n) in pairs {
            successors[a as usize].push((b, n));
            predecessors[b as usize].push((a, n));
        }
        for p in &mut predecessors {
            p.sort_by_key(|&(a, _)| a);
        }
        Self { unigram, successors, predecessors, first_seen }
    }
}

/// `Σ N(c,c')·log N(c,c') − 2·Σ N(c)·log N(c)` over padded sentences.
pub fn class_bigram_loglik(text: &Corpus, map: &ClassMap) -> f64 {
    let mut unigram = vec![0.0; map.num_classes()];
    let mut bigram: FxHashMap<(ClassId, ClassId), f64> = FxHashMap::default();
    for s in text.sentences.iter().filter(|s| !s.is_empty()) {
        let classes: Vec<ClassId> = std::iter::once(BOS_ID)
            .chain(s.iter().copied())
            .chain(std::iter::once(EOS_ID))
            .map(|w| map.class_of(w).expect("class map covers corpus"))
            .collect();
        for &c in &classes {
            unigram[c as usize] += 1.0;
        }
        for pair in classes.windows(2) {
            *bigram.entry((pair[0], pair[1])).or_insert(0.0) += 1.0;
        }
    }
    let mut pairs: Vec<_> = bigram.into_iter().collect();
    pairs.sort_by_key(|&(k, _)| k);
    let bigram_term: f64 = pairs.iter().map(|&(_, n)| xlogx(n)).sum();
    let unigram_term: f64 = unigram.iter().map(|&n| xlogx(n)).sum();
    bigram_term - 2.0 * unigram_term
}

/// How the clusterable words get their first class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClassInit {
    /// Frequency rank modulo K.
    #[default]
    FrequencyModulo,
    /// Uniformly random class per word, from the configured seed.
    Random,
}

#[derive(Debug, Clone)]
pub struct ClusterConfig {
    pub classes: usize,
    pub max_sweeps: usize,
    pub seed: u64,
    pub init: ClassInit,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            classes: 100,
            max_sweeps: 10,
            seed: 0,
            init: ClassInit::FrequencyModulo,
        }
    }
}

/// Result of clustering, with the objective after each sweep.
#[derive(Debug, Clone)]
pub struct Clustering {
    pub map: ClassMap,
    /// Objective of the initial assignment followed by one value per sweep.
    pub objective_trace: Vec<f64>,
    pub moves_per_sweep: Vec<usize>,
}

/// Dense class-level count tables for the exchange loop.
struct ClassCounts {
    k: usize,
    unigram: Vec<f64>,
    bigram: Vec<f64>,
}

impl ClassCounts {
    fn at(&self, a: ClassId, b: ClassId) -> f64 {
        self.bigram[a as usize * self.k + b as usize]
    }

    fn add(&mut self, a: ClassId, b: ClassId, n: f64) {
        self.bigram[a as usize * self.k + b as usize] += n;
    }

    fn objective(&self) -> f64 {
        self.bigram.iter().map(|&n| xlogx(n)).sum::<f64>()
            - 2.0 * self.unigram.iter().map(|&n| xlogx(n)).sum::<f64>()
    }
}

/// Clusters the regular words of `text` into `config.classes` classes.
///
/// Words are visited in descending frequency (ties by first occurrence) and
/// moved to the class with the largest objective gain; a word only moves on
/// a strict improvement, and equal gains go to the lowest class id.
pub fn cluster_exchange(text: &Corpus, vocab_size: usize, config: &ClusterConfig) -> Result<Clustering> {
    let k = config.classes;
    let clusterable = vocab_size.saturating_sub(NUM_SPECIALS);
    if k < 2 {
        return Err(Error::InvalidArgument("need at least 2 classes".into()));
    }
    if k > clusterable {
        return Err(Error::InvalidArgument(format!(
            "{k} classes requested for {clusterable} clusterable word types"
        )));
    }
    text.validate(vocab_size)?;
    let counts = WordCounts::new(text, vocab_size);

    let mut order: Vec<WordId> = (NUM_SPECIALS as WordId..vocab_size as WordId).collect();
    order.sort_by(|&a, &b| {
        counts.unigram[b as usize]
            .total_cmp(&counts.unigram[a as usize])
            .then(counts.first_seen[a as usize].cmp(&counts.first_seen[b as usize]))
            .then(a.cmp(&b))
    });

    let total_classes = k + NUM_SPECIALS;
    let mut assignment: Vec<ClassId> = (0..vocab_size as ClassId).collect();
    match config.init {
        ClassInit::FrequencyModulo => {
            for (rank, &w) in order.iter().enumerate() {
                assignment[w as usize] = (NUM_SPECIALS + rank % k) as ClassId;
            }
        }
        ClassInit::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let mut labels: Vec<usize> = (0..order.len()).map(|r| r % k).collect();
            labels.shuffle(&mut rng);
            for (&w, label) in order.iter().zip(labels) {
                assignment[w as usize] = (NUM_SPECIALS + label) as ClassId;
            }
        }
    }

    let mut cc = ClassCounts {
        k: total_classes,
        unigram: vec![0.0; total_classes],
        bigram: vec![0.0; total_classes * total_classes],
    };
    for w in 0..vocab_size {
        cc.unigram[assignment[w] as usize] += counts.unigram[w];
        for &(v, n) in &counts.successors[w] {
            cc.add(assignment[w], assignment[v as usize], n);
        }
    }

    let mut trace = vec![cc.objective()];
    let mut moves_per_sweep = Vec::new();
    // scratch: class-aggregated neighbour counts of the word being moved
    let mut right = vec![0.0; total_classes];
    let mut left = vec![0.0; total_classes];
    let mut touched: Vec<ClassId> = Vec::new();

    for _ in 0..config.max_sweeps {
        let mut moves = 0;
        for &w in &order {
            let nw = counts.unigram[w as usize];
            if nw == 0.0 {
                continue;
            }
            let from = assignment[w as usize];
            let mut self_loop = 0.0;
            touched.clear();
            for &(v, n) in &counts.successors[w as usize] {
                if v == w {
                    self_loop = n;
                } else {
                    let c = assignment[v as usize];
                    if right[c as usize] == 0.0 && left[c as usize] == 0.0 {
                        touched.push(c);
                    }
                    right[c as usize] += n;
                }
            }
            for &(v, n) in &counts.predecessors[w as usize] {
                if v != w {
                    let c = assignment[v as usize];
                    if right[c as usize] == 0.0 && left[c as usize] == 0.0 {
                        touched.push(c);
                    }
                    left[c as usize] += n;
                }
            }

            apply_word(&mut cc, from, &touched, &right, &left, self_loop, nw, -1.0);

            let stay_gain = move_gain(&cc, from, &touched, &right, &left, self_loop, nw);
            let mut best = from;
            let mut best_gain = f64::NEG_INFINITY;
            for target in NUM_SPECIALS as ClassId..total_classes as ClassId {
                if target == from {
                    continue;
                }
                let gain = move_gain(&cc, target, &touched, &right, &left, self_loop, nw);
                if gain > best_gain {
                    best = target;
                    best_gain = gain;
                }
            }
            // float noise must not trigger moves between equivalent classes
            if best_gain <= stay_gain + 1e-9 {
                best = from;
            }

            apply_word(&mut cc, best, &touched, &right, &left, self_loop, nw, 1.0);
            if best != from {
                assignment[w as usize] = best;
                moves += 1;
            }
            for &c in &touched {
                right[c as usize] = 0.0;
                left[c as usize] = 0.0;
            }
        }
        trace.push(cc.objective());
        moves_per_sweep.push(moves);
        log::debug!("exchange sweep: {moves} moves, objective {}", trace.last().unwrap());
        if moves == 0 {
            break;
        }
    }

    Ok(Clustering {
        map: ClassMap::new(assignment, total_classes, text.side)?,
        objective_trace: trace,
        moves_per_sweep,
    })
}

/// Adds (`sign` = 1) or removes (`sign` = -1) a word's counts to class `k`.
#[allow(clippy::too_many_arguments)]
fn apply_word(
    cc: &mut ClassCounts,
    k: ClassId,
    touched: &[ClassId],
    right: &[f64],
    left: &[f64],
    self_loop: f64,
    nw: f64,
    sign: f64,
) {
    if sign < 0.0 {
        // removing: the word's own classes for neighbours in `k` are `k`
        for &c in touched {
            if c != k {
                cc.add(k, c, -right[c as usize]);
                cc.add(c, k, -left[c as usize]);
            }
        }
        cc.add(k, k, -(right[k as usize] + left[k as usize] + self_loop));
    } else {
        for &c in touched {
            if c != k {
                cc.add(k, c, right[c as usize]);
                cc.add(c, k, left[c as usize]);
            }
        }
        cc.add(k, k, right[k as usize] + left[k as usize] + self_loop);
    }
    cc.unigram[k as usize] += sign * nw;
}

/// Objective change from adding the (removed) word to class `k`.
fn move_gain(
    cc: &ClassCounts,
    k: ClassId,
    touched: &[ClassId],
    right: &[f64],
    left: &[f64],
    self_loop: f64,
    nw: f64,
) -> f64 {
    let mut gain = 0.0;
    for &c in touched {
        if c == k {
            continue;
        }
        let r = right[c as usize];
        if r != 0.0 {
            let n = cc.at(k, c);
            gain += xlogx(n + r) - xlogx(n);
        }
        let l = left[c as usize];
        if l != 0.0 {
            let n = cc.at(c, k);
            gain += xlogx(n + l) - xlogx(n);
        }
    }
    let diag = cc.at(k, k);
    gain += xlogx(diag + right[k as usize] + left[k as usize] + self_loop) - xlogx(diag);
    let n = cc.unigram[k as usize];
    gain - 2.0 * (xlogx(n + nw) - xlogx(n))
}
