use std::fmt;
use std::str::FromStr;

use rustc_hash::FxHashSet;

use crate::corpus::{Corpus, WordId, BOS_ID};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BackoffKind {
    #[default]
    Uniform,
    Unigram,
    /// Continuation unigram: distinct left contexts per source word.
    KneserNey,
}

impl FromStr for BackoffKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "unigram" => Ok(Self::Unigram),
            "kneser-ney" | "kn" => Ok(Self::KneserNey),
            other => Err(Error::InvalidArgument(format!("unknown backoff kind {other:?}"))),
        }
    }
}

impl fmt::Display for BackoffKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Uniform => "uniform",
            Self::Unigram => "unigram",
            Self::KneserNey => "kneser-ney",
        })
    }
}

/// Target-independent source distribution `p_bo(f)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BackoffModel {
    kind: BackoffKind,
    size: usize,
    /// Empty for the uniform kind.
    probs: Vec<f64>,
}

impl BackoffModel {
    pub fn uniform(src_vocab_size: usize) -> Self {
        Self { kind: BackoffKind::Uniform, size: src_vocab_size, probs: Vec::new() }
    }

    /// Builds a backoff distribution of the given kind from the source text.
    pub fn estimate(kind: BackoffKind, source: &Corpus, src_vocab_size: usize) -> Result<Self> {
        if kind == BackoffKind::Uniform {
            return Ok(Self::uniform(src_vocab_size));
        }
        source.validate(src_vocab_size)?;
        let mut counts = vec![0.0; src_vocab_size];
        match kind {
            BackoffKind::Unigram => {
                for &f in source.sentences.iter().flatten() {
                    counts[f as usize] += 1.0;
                }
            }
            BackoffKind::KneserNey => {
                let mut seen: FxHashSet<(WordId, WordId)> = FxHashSet::default();
                for s in &source.sentences {
                    let mut prev = BOS_ID;
                    for &f in s {
                        if seen.insert((prev, f)) {
                            counts[f as usize] += 1.0;
                        }
                        prev = f;
                    }
                }
            }
            BackoffKind::Uniform => unreachable!(),
        }
        let total: f64 = counts.iter().sum();
        if total == 0.0 {
            return Err(Error::EmptyCorpus);
        }
        for c in &mut counts {
            *c /= total;
        }
        Ok(Self { kind, size: src_vocab_size, probs: counts })
    }

    pub fn kind(&self) -> BackoffKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn prob(&self, f: WordId) -> f64 {
        match self.kind {
            BackoffKind::Uniform => 1.0 / self.size as f64,
            _ => self.probs[f as usize],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Side;
    use approx::assert_abs_diff_eq;

    fn corpus() -> Corpus {
        // 3 a b a / 4 a
        Corpus::new(vec![vec![3, 4, 3], vec![5, 3]], Side::Source)
    }

    #[test]
    fn all_kinds_normalize() {
        for kind in [BackoffKind::Uniform, BackoffKind::Unigram, BackoffKind::KneserNey] {
            let bo = BackoffModel::estimate(kind, &corpus(), 6).unwrap();
            let total: f64 = (0..6).map(|f| bo.prob(f)).sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn unigram_and_continuation_counts() {
        let uni = BackoffModel::estimate(BackoffKind::Unigram, &corpus(), 6).unwrap();
        assert_abs_diff_eq!(uni.prob(3), 3.0 / 5.0);
        // left contexts: 3 <- {<s>, 4, 5}, 4 <- {3}, 5 <- {<s>}
        let kn = BackoffModel::estimate(BackoffKind::KneserNey, &corpus(), 6).unwrap();
        assert_abs_diff_eq!(kn.prob(3), 3.0 / 5.0);
        assert_abs_diff_eq!(kn.prob(4), 1.0 / 5.0);
        assert_abs_diff_eq!(kn.prob(5), 1.0 / 5.0);
    }

    #[test]
    fn parses_kind_names() {
        assert_eq!("kneser-ney".parse::<BackoffKind>().unwrap(), BackoffKind::KneserNey);
        assert!("nope".parse::<BackoffKind>().is_err());
        assert_eq!(BackoffKind::Unigram.to_string().parse::<BackoffKind>().unwrap(), BackoffKind::Unigram);
    }
}
