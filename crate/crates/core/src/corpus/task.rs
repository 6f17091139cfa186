use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use super::{Corpus, Side, Vocabulary};
use crate::error::{Error, Result};

/// The monotone 1:1 task on id-encoded corpora.
///
/// `source_input` and `reference` are token-parallel; `lm_text` comes from
/// the disjoint second part of the corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MonotoneTask {
    pub source_input: Corpus,
    pub reference: Corpus,
    pub lm_text: Corpus,
}

impl MonotoneTask {
    pub fn check_parallel(&self) -> Result<()> {
        if self.source_input.len() != self.reference.len() {
            return Err(Error::InvalidArgument(format!(
                "input has {} sentences, reference has {}",
                self.source_input.len(),
                self.reference.len()
            )));
        }
        for (i, (s, r)) in self
            .source_input
            .sentences
            .iter()
            .zip(&self.reference.sentences)
            .enumerate()
        {
            if s.len() != r.len() {
                return Err(Error::LengthMismatch {
                    sentence: i + 1,
                    hyp: s.len(),
                    reference: r.len(),
                });
            }
        }
        Ok(())
    }
}

/// The monotone task on surface tokens, before vocabulary construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MonotoneText {
    pub source_input: Vec<Vec<String>>,
    pub reference: Vec<Vec<String>>,
    pub lm_text: Vec<Vec<String>>,
}

impl MonotoneText {
    /// Builds the source vocabulary from the input and the target vocabulary
    /// from the LM text, then encodes all three parts.
    pub fn encode(&self, min_count: u64) -> Result<(MonotoneTask, Vocabulary, Vocabulary)> {
        let src_vocab = Vocabulary::build(&self.source_input, min_count)?;
        let tgt_vocab = Vocabulary::build(&self.lm_text, min_count)?;
        let task = MonotoneTask {
            source_input: src_vocab.encode_sentences(&self.source_input, Side::Source),
            reference: tgt_vocab.encode_sentences(&self.reference, Side::Target),
            lm_text: tgt_vocab.encode_sentences(&self.lm_text, Side::Target),
        };
        Ok((task, src_vocab, tgt_vocab))
    }
}

/// Rearranges a word-aligned bitext into the monotone 1:1 task.
///
/// Only links whose source and target positions each take part in exactly
/// one link survive. Kept source words are reordered by their target
/// position. The first `split_fraction` of sentence pairs becomes the
/// input/reference part (sentences left empty are dropped); the target side
/// of the remaining pairs becomes the LM text.
pub fn build_monotone_task<S: AsRef<str>>(
    source: &[Vec<S>],
    target: &[Vec<S>],
    alignments: &[Vec<(usize, usize)>],
    split_fraction: f64,
) -> Result<MonotoneText> {
    if source.len() != target.len() || source.len() != alignments.len() {
        return Err(Error::InvalidArgument(format!(
            "sentence counts differ: source {}, target {}, alignments {}",
            source.len(),
            target.len(),
            alignments.len()
        )));
    }
    if !(split_fraction > 0.0 && split_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split fraction {split_fraction} not in (0,1)"
        )));
    }
    let n_first = (source.len() as f64 * split_fraction).round() as usize;

    let mut text = MonotoneText {
        source_input: Vec::new(),
        reference: Vec::new(),
        lm_text: Vec::new(),
    };
    for (i, ((src, tgt), links)) in source.iter().zip(target).zip(alignments).enumerate() {
        let mut src_degree = vec![0usize; src.len()];
        let mut tgt_degree = vec![0usize; tgt.len()];
        for &(s, t) in links {
            if s >= src.len() || t >= tgt.len() {
                return Err(Error::AlignmentOutOfRange {
                    sentence: i + 1,
                    src: s,
                    tgt: t,
                    src_len: src.len(),
                    tgt_len: tgt.len(),
                });
            }
            src_degree[s] += 1;
            tgt_degree[t] += 1;
        }
        if i >= n_first {
            if !tgt.is_empty() {
                text.lm_text
                    .push(tgt.iter().map(|w| w.as_ref().to_string()).collect());
            }
            continue;
        }
        let mut kept: Vec<(usize, usize)> = links
            .iter()
            .copied()
            .filter(|&(s, t)| src_degree[s] == 1 && tgt_degree[t] == 1)
            .collect();
        if kept.is_empty() {
            continue;
        }
        kept.sort_by_key(|&(_, t)| t);
        text.source_input.push(
            kept.iter()
                .map(|&(s, _)| src[s].as_ref().to_string())
                .collect(),
        );
        text.reference.push(
            kept.iter()
                .map(|&(_, t)| tgt[t].as_ref().to_string())
                .collect(),
        );
    }
    Ok(text)
}

/// Reads Pharaoh-style alignments: one line per sentence of `i-j` pairs.
pub fn read_alignments(path: impl AsRef<Path>) -> Result<Vec<Vec<(usize, usize)>>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let mut links = Vec::new();
        for pair in line.split_whitespace() {
            let parsed = pair
                .split_once('-')
                .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)));
            match parsed {
                Some(link) => links.push(link),
                None => {
                    return Err(Error::Parse {
                        line: lineno + 1,
                        message: format!("bad alignment pair {pair:?}"),
                    })
                }
            }
        }
        out.push(links);
    }
    Ok(out)
}
