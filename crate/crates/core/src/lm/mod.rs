//! Backoff n-gram language models with interpolated Kneser-Ney training and
//! ARPA interchange.
//!
//! N-grams are stored in a trie keyed by (prefix node, next word). Every
//! node carries the natural-log probability of its last word given the
//! prefix, and a log backoff weight used when the node acts as a history.
//! Query states are trie nodes, so scoring a word is a handful of hash
//! lookups along the suffix chain.

use rustc_hash::FxHashMap;

use crate::corpus::{Vocabulary, WordId, BOS_ID, EOS_ID, NUM_SPECIALS, UNK_ID};

mod arpa;
mod train;

pub use train::Discount;

const ROOT: u32 = 0;

/// A language model query state: the (recombined) history, as a trie node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LmState(u32);

#[derive(Debug, Clone)]
struct Node {
    word: WordId,
    order: u32,
    parent: u32,
    suffix: u32,
    log_prob: f64,
    log_bow: f64,
    is_history: bool,
}

#[derive(Debug, Clone)]
pub struct NGramLm {
    order: usize,
    vocab: Vocabulary,
    nodes: Vec<Node>,
    children: FxHashMap<(u32, WordId), u32>,
}

impl NGramLm {
    /// Empty model with one unigram node per vocabulary word, all with
    /// probability zero.
    fn skeleton(vocab: Vocabulary, order: usize) -> Self {
        let mut nodes = Vec::with_capacity(vocab.len() + 1);
        nodes.push(Node {
            word: 0,
            order: 0,
            parent: ROOT,
            suffix: ROOT,
            log_prob: 0.0,
            log_bow: 0.0,
            is_history: false,
        });
        for w in 0..vocab.len() as WordId {
            nodes.push(Node {
                word: w,
                order: 1,
                parent: ROOT,
                suffix: ROOT,
                log_prob: f64::NEG_INFINITY,
                log_bow: 0.0,
                is_history: false,
            });
        }
        Self {
            order,
            vocab,
            nodes,
            children: FxHashMap::default(),
        }
    }

    fn unigram_node(w: WordId) -> u32 {
        w + 1
    }

    fn set_unigram(&mut self, w: WordId, log_prob: f64, log_bow: f64) {
        let node = &mut self.nodes[Self::unigram_node(w) as usize];
        node.log_prob = log_prob;
        node.log_bow = log_bow;
    }

    fn node_of(&self, gram: &[WordId]) -> Option<u32> {
        let (&first, rest) = gram.split_first()?;
        if first as usize >= self.vocab.len() {
            return None;
        }
        let mut node = Self::unigram_node(first);
        for &w in rest {
            node = *self.children.get(&(node, w))?;
        }
        Some(node)
    }

    /// Inserts an n-gram of order >= 2. Its prefix and its suffix must
    /// already be present.
    fn insert(&mut self, gram: &[WordId], log_prob: f64, log_bow: f64) -> Result<u32, String> {
        debug_assert!(gram.len() >= 2);
        let (&w, prefix) = gram.split_last().unwrap();
        let parent = self
            .node_of(prefix)
            .ok_or_else(|| "n-gram prefix is missing".to_string())?;
        let suffix = self
            .node_of(&gram[1..])
            .ok_or_else(|| "n-gram suffix is missing".to_string())?;
        let id = self.nodes.len() as u32;
        if self.children.insert((parent, w), id).is_some() {
            return Err("duplicate n-gram".into());
        }
        self.nodes.push(Node {
            word: w,
            order: gram.len() as u32,
            parent,
            suffix,
            log_prob,
            log_bow,
            is_history: false,
        });
        self.nodes[parent as usize].is_history = true;
        Ok(id)
    }

    /// Nodes with a non-trivial backoff weight are kept as states even
    /// without continuations, so recombination never changes a score.
    fn finalize(&mut self) {
        for node in &mut self.nodes[1..] {
            if node.log_bow != 0.0 && (node.order as usize) < self.order {
                node.is_history = true;
            }
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    /// Number of stored n-grams per order (index 0 is unigrams).
    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.order];
        for node in &self.nodes[1..] {
            counts[node.order as usize - 1] += 1;
        }
        counts
    }

    /// State before the first word of a sentence.
    pub fn begin_state(&self) -> LmState {
        self.next_state(LmState(ROOT), BOS_ID)
    }

    /// The empty history.
    pub fn null_state(&self) -> LmState {
        LmState(ROOT)
    }

    /// Words of the history a state stands for, oldest first.
    pub fn state_history(&self, state: LmState) -> Vec<WordId> {
        let mut out = Vec::new();
        let mut node = state.0;
        while node != ROOT {
            out.push(self.nodes[node as usize].word);
            node = self.nodes[node as usize].parent;
        }
        out.reverse();
        out
    }

    fn clamp_word(&self, w: WordId) -> WordId {
        if (w as usize) < self.vocab.len() {
            w
        } else {
            UNK_ID
        }
    }

    fn child(&self, node: u32, w: WordId) -> Option<u32> {
        if node == ROOT {
            Some(Self::unigram_node(w))
        } else {
            self.children.get(&(node, w)).copied()
        }
    }

    /// Natural-log probability of `word` after `state`.
    pub fn log_prob(&self, state: LmState, word: WordId) -> f64 {
        let w = self.clamp_word(word);
        let mut h = state.0;
        let mut acc = 0.0;
        loop {
            if let Some(n) = self.child(h, w) {
                return acc + self.nodes[n as usize].log_prob;
            }
            let node = &self.nodes[h as usize];
            acc += node.log_bow;
            h = node.suffix;
        }
    }

    /// History after appending `word`, truncated to at most `order - 1`
    /// words and then to the longest suffix that is a stored history.
    pub fn next_state(&self, state: LmState, word: WordId) -> LmState {
        if self.order <= 1 {
            return LmState(ROOT);
        }
        let w = self.clamp_word(word);
        let mut h = state.0;
        if self.nodes[h as usize].order as usize >= self.order - 1 {
            h = self.nodes[h as usize].suffix;
        }
        loop {
            if let Some(n) = self.child(h, w) {
                if self.nodes[n as usize].is_history {
                    return LmState(n);
                }
            }
            if h == ROOT {
                return LmState(ROOT);
            }
            h = self.nodes[h as usize].suffix;
        }
    }

    /// Scores `word` after `state`, returning the log-probability and the
    /// next state.
    pub fn score(&self, state: LmState, word: WordId) -> (f64, LmState) {
        (self.log_prob(state, word), self.next_state(state, word))
    }

    /// Standard ARPA lookup with an explicit history (oldest word first).
    /// Independent of the state machinery; used to cross-check it.
    pub fn log_prob_history(&self, history: &[WordId], word: WordId) -> f64 {
        let w = self.clamp_word(word);
        let keep = history.len().min(self.order.saturating_sub(1));
        let h: Vec<WordId> = history[history.len() - keep..]
            .iter()
            .map(|&x| self.clamp_word(x))
            .collect();
        let mut bow = 0.0;
        for start in 0..=h.len() {
            let mut gram = h[start..].to_vec();
            gram.push(w);
            if let Some(n) = self.node_of(&gram) {
                return bow + self.nodes[n as usize].log_prob;
            }
            if let Some(hn) = self.node_of(&h[start..]) {
                bow += self.nodes[hn as usize].log_bow;
            }
        }
        unreachable!("every word has a unigram entry")
    }

    /// Log-probability of a whole sentence including the end marker.
    pub fn sentence_log_prob(&self, sentence: &[WordId]) -> f64 {
        let mut state = self.begin_state();
        let mut total = 0.0;
        for &w in sentence.iter().chain(std::iter::once(&EOS_ID)) {
            let (lp, next) = self.score(state, w);
            total += lp;
            state = next;
        }
        total
    }

    /// Ids a sentence position can take: everything except the boundary
    /// markers.
    pub fn emittable_words(&self) -> impl Iterator<Item = WordId> {
        std::iter::once(UNK_ID).chain(NUM_SPECIALS as WordId..self.vocab.len() as WordId)
    }

    /// The `k` emittable words with the highest probability after `state`,
    /// ties broken by lowest id.
    pub fn top_successors(&self, state: LmState, k: usize) -> Vec<WordId> {
        let mut scored: Vec<(f64, WordId)> = self
            .emittable_words()
            .map(|w| (self.log_prob(state, w), w))
            .collect();
        let k = k.min(scored.len());
        let cmp = |a: &(f64, WordId), b: &(f64, WordId)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
        if k < scored.len() && k > 0 {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_by(cmp);
        scored.truncate(k);
        scored.into_iter().map(|(_, w)| w).collect()
    }

    /// All stored histories, as states.
    pub fn history_states(&self) -> Vec<LmState> {
        (0..self.nodes.len() as u32)
            .filter(|&n| n == ROOT || self.nodes[n as usize].is_history)
            .map(LmState)
            .collect()
    }
}
