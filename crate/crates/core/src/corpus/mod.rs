//! Vocabularies, id-encoded corpora and the monotone 1:1 task.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rustc_hash::FxHashMap;

use crate::error::{Error, Result};

mod synthetic;
mod task;

pub use synthetic::{
    generate_synthetic_cipher, inject_ambiguity, random_key, SyntheticLanguage,
};
pub use task::{build_monotone_task, read_alignments, MonotoneTask, MonotoneText};

/// Dense integer id of a word (or of a class, when working on class corpora).
pub type WordId = u32;

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

/// Special tokens always occupy the first three ids.
pub const BOS_ID: WordId = 0;
pub const EOS_ID: WordId = 1;
pub const UNK_ID: WordId = 2;
pub const NUM_SPECIALS: usize = 3;

/// Which language side a corpus or vocabulary belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Source,
    Target,
}

/// Bidirectional word/id mapping.
///
/// Ids are dense. The three special tokens take ids 0..3, regular words
/// follow in descending frequency with ties broken by first occurrence.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    counts: Vec<u64>,
    index: FxHashMap<String, WordId>,
}

impl Vocabulary {
    /// Vocabulary containing only the special tokens.
    pub fn specials_only() -> Self {
        Self::from_words(std::iter::empty::<(String, u64)>())
    }

    /// Builds a vocabulary from tokenized sentences, keeping tokens seen at
    /// least `min_count` times.
    pub fn build<S: AsRef<str>>(sentences: &[Vec<S>], min_count: u64) -> Result<Self> {
        if min_count < 1 {
            return Err(Error::InvalidArgument("min_count must be >= 1".into()));
        }
        if sentences.iter().all(|s| s.is_empty()) {
            return Err(Error::EmptyCorpus);
        }
        // (count, first occurrence)
        let mut seen: FxHashMap<&str, (u64, usize)> = FxHashMap::default();
        for (position, tok) in sentences.iter().flatten().enumerate() {
            seen.entry(tok.as_ref()).or_insert((0, position)).0 += 1;
        }
        let mut entries: Vec<(&str, u64, usize)> = seen
            .into_iter()
            .filter(|(w, (c, _))| *c >= min_count && !is_special(w))
            .map(|(w, (c, first))| (w, c, first))
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        Ok(Self::from_words(
            entries.into_iter().map(|(w, c, _)| (w.to_string(), c)),
        ))
    }

    /// Builds a vocabulary from words in the given order, after the specials.
    /// Special tokens appearing in the input are skipped; duplicates keep
    /// their first position.
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = (S, u64)>,
        S: Into<String>,
    {
        let mut vocab = Vocabulary {
            words: Vec::new(),
            counts: Vec::new(),
            index: FxHashMap::default(),
        };
        for special in [BOS, EOS, UNK] {
            vocab.push(special.to_string(), 0);
        }
        for (w, c) in words {
            let w = w.into();
            if is_special(&w) {
                continue;
            }
            if !vocab.index.contains_key(&w) {
                vocab.push(w, c);
            }
        }
        vocab
    }

    fn push(&mut self, word: String, count: u64) {
        let id = self.words.len() as WordId;
        self.index.insert(word.clone(), id);
        self.words.push(word);
        self.counts.push(count);
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Id of `word`, falling back to the unknown id.
    pub fn encode(&self, word: &str) -> WordId {
        self.index.get(word).copied().unwrap_or(UNK_ID)
    }

    pub fn get(&self, word: &str) -> Option<WordId> {
        self.index.get(word).copied()
    }

    pub fn decode(&self, id: WordId) -> &str {
        &self.words[id as usize]
    }

    pub fn count(&self, id: WordId) -> u64 {
        self.counts[id as usize]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Ids of all non-special words.
    pub fn regular_ids(&self) -> impl Iterator<Item = WordId> {
        NUM_SPECIALS as WordId..self.words.len() as WordId
    }

    pub fn encode_sentences<S: AsRef<str>>(&self, sentences: &[Vec<S>], side: Side) -> Corpus {
        Corpus {
            sentences: sentences
                .iter()
                .map(|s| s.iter().map(|w| self.encode(w.as_ref())).collect())
                .collect(),
            side,
        }
    }

    pub fn decode_sentence(&self, sentence: &[WordId]) -> Vec<&str> {
        sentence.iter().map(|&id| self.decode(id)).collect()
    }

    /// Writes the `id<TAB>word<TAB>count` TSV form.
    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        for (id, (w, c)) in self.words.iter().zip(&self.counts).enumerate() {
            writeln!(out, "{id}\t{w}\t{c}")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_tsv(path: impl AsRef<Path>) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut words = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: &str| Error::Parse {
                line: lineno + 1,
                message: message.to_string(),
            };
            let mut fields = line.split('\t');
            let id: usize = fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| parse_err("bad id"))?;
            let word = fields.next().ok_or_else(|| parse_err("missing word"))?;
            let count: u64 = fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| parse_err("bad count"))?;
            if id != words.len() {
                return Err(parse_err("ids must be dense and sorted"));
            }
            words.push((word.to_string(), count));
        }
        if words.len() < NUM_SPECIALS
            || words[0].0 != BOS
            || words[1].0 != EOS
            || words[2].0 != UNK
        {
            return Err(Error::Parse {
                line: 1,
                message: "special tokens must occupy ids 0..3".into(),
            });
        }
        let mut vocab = Self::from_words(words[NUM_SPECIALS..].iter().cloned());
        for (i, (_, c)) in words.iter().take(NUM_SPECIALS).enumerate() {
            vocab.counts[i] = *c;
        }
        Ok(vocab)
    }
}

pub fn is_special(word: &str) -> bool {
    word == BOS || word == EOS || word == UNK
}

/// Sentences of word ids for one language side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub sentences: Vec<Vec<WordId>>,
    pub side: Side,
}

impl Corpus {
    pub fn new(sentences: Vec<Vec<WordId>>, side: Side) -> Self {
        Self { sentences, side }
    }

    pub fn num_tokens(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Largest id used, plus one.
    pub fn id_bound(&self) -> usize {
        self.sentences
            .iter()
            .flatten()
            .map(|&w| w as usize + 1)
            .max()
            .unwrap_or(0)
    }

    /// Checks that all ids fit the vocabulary and that no sentence embeds
    /// sentence boundary markers.
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        for (i, s) in self.sentences.iter().enumerate() {
            for &w in s {
                if w as usize >= vocab_size {
                    return Err(Error::VocabularyMismatch(format!(
                        "sentence {}: id {w} outside vocabulary of size {vocab_size}",
                        i + 1
                    )));
                }
                if w == BOS_ID || w == EOS_ID {
                    return Err(Error::InvalidArgument(format!(
                        "sentence {}: embedded sentence boundary token",
                        i + 1
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Reads whitespace-tokenized text, one sentence per line.
pub fn read_tokenized(path: impl AsRef<Path>) -> Result<Vec<Vec<String>>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        out.push(line.split_whitespace().map(str::to_string).collect());
    }
    Ok(out)
}

pub fn write_tokenized<S: AsRef<str>>(path: impl AsRef<Path>, sentences: &[Vec<S>]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for s in sentences {
        let mut first = true;
        for w in s {
            if !first {
                out.write_all(b" ")?;
            }
            out.write_all(w.as_ref().as_bytes())?;
            first = false;
        }
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sents(text: &[&str]) -> Vec<Vec<String>> {
        text.iter()
            .map(|s| s.split_whitespace().map(str::to_string).collect())
            .collect()
    }

    #[test]
    fn frequency_order() {
        let v = Vocabulary::build(&sents(&["a b a"]), 1).unwrap();
        assert_eq!(v.len(), NUM_SPECIALS + 2);
        assert!(v.get("a").unwrap() < v.get("b").unwrap());
    }

    #[test]
    fn min_count_maps_to_unknown() {
        let v = Vocabulary::build(&sents(&["a b a"]), 2).unwrap();
        assert_eq!(v.get("b"), None);
        assert_eq!(v.encode("b"), UNK_ID);
        assert_eq!(v.len(), NUM_SPECIALS + 1);
    }

    #[test]
    fn ties_broken_by_first_occurrence() {
        // a:5, b:5, c:1; b occurs first
        let v = Vocabulary::build(&sents(&["b a b a c", "a b a b", "b a"]), 2).unwrap();
        assert_eq!(v.len(), NUM_SPECIALS + 2);
        assert_eq!(v.count(v.get("a").unwrap()), 5);
        assert_eq!(v.count(v.get("b").unwrap()), 5);
        assert_eq!(v.get("b"), Some(3));
        assert_eq!(v.get("a"), Some(4));
        assert_eq!(v.get("c"), None);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert!(matches!(
            Vocabulary::build::<String>(&[], 1),
            Err(Error::EmptyCorpus)
        ));
        assert!(matches!(
            Vocabulary::build(&sents(&["", ""]), 1),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn specials_present_once() {
        let v = Vocabulary::build(&sents(&["<s> a </s> <unk>"]), 1).unwrap();
        assert_eq!(v.len(), NUM_SPECIALS + 1);
        assert_eq!(v.decode(BOS_ID), BOS);
        assert_eq!(v.decode(EOS_ID), EOS);
        assert_eq!(v.decode(UNK_ID), UNK);
        for (i, w) in v.words().iter().enumerate() {
            assert_eq!(v.encode(w), i as WordId);
        }
    }

    #[test]
    fn tsv_round_trip() {
        let v = Vocabulary::build(&sents(&["x y z x", "y x"]), 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.tsv");
        v.write_tsv(&path).unwrap();
        let back = Vocabulary::read_tsv(&path).unwrap();
        assert_eq!(v, back);
    }

    #[test]
    fn corpus_validation() {
        let c = Corpus::new(vec![vec![3, 4], vec![5]], Side::Target);
        assert!(c.validate(6).is_ok());
        assert!(c.validate(5).is_err());
        let c = Corpus::new(vec![vec![3, EOS_ID]], Side::Target);
        assert!(c.validate(6).is_err());
    }

    proptest::proptest! {
        #[test]
        fn encode_decode_round_trip(words in proptest::collection::vec("[a-e]{1,3}", 1..40)) {
            let v = Vocabulary::build(&[words.clone()], 1).unwrap();
            for w in &words {
                proptest::prop_assert_eq!(v.decode(v.encode(w)), w.as_str());
            }
        }
    }
}
