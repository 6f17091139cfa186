//! Token-level accuracy between hypothesis and reference.

use std::fmt;

use crate::corpus::Corpus;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Accuracy {
    pub correct: usize,
    pub tokens: usize,
}

impl Accuracy {
    pub fn value(&self) -> f64 {
        self.correct as f64 / self.tokens as f64
    }
}

impl fmt::Display for Accuracy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Debug keeps the decimal point on whole numbers ("1.0") and round-trips
        write!(f, "accuracy={:?} tokens={}", self.value(), self.tokens)
    }
}

/// Position-wise exact-match fraction pooled over all sentences. Tokens
/// compare by id, so distinct unknown words mapped to `<unk>` match.
pub fn token_accuracy(hyp: &Corpus, reference: &Corpus) -> Result<Accuracy> {
    if hyp.len() != reference.len() {
        let sentence = hyp.len().min(reference.len());
        return Err(Error::LengthMismatch {
            sentence,
            hyp: hyp.sentences.get(sentence).map_or(0, Vec::len),
            reference: reference.sentences.get(sentence).map_or(0, Vec::len),
        });
    }
    let mut acc = Accuracy { correct: 0, tokens: 0 };
    for (i, (h, r)) in hyp.sentences.iter().zip(&reference.sentences).enumerate() {
        if h.len() != r.len() {
            return Err(Error::LengthMismatch { sentence: i, hyp: h.len(), reference: r.len() });
        }
        acc.tokens += h.len();
        acc.correct += h.iter().zip(r).filter(|(a, b)| a == b).count();
    }
    if acc.tokens == 0 {
        return Err(Error::EmptyCorpus);
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Side;
    use proptest::prelude::*;

    fn c(s: Vec<Vec<u32>>) -> Corpus {
        Corpus::new(s, Side::Target)
    }

    #[test]
    fn direct_count() {
        let acc = token_accuracy(&c(vec![vec![3, 4, 5, 6]]), &c(vec![vec![3, 9, 5, 8]])).unwrap();
        assert_eq!(acc.value(), 0.5);
        assert_eq!(acc.to_string(), "accuracy=0.5 tokens=4");
    }

    #[test]
    fn identity_prints_one() {
        let x = c(vec![vec![3, 4], vec![5]]);
        assert_eq!(token_accuracy(&x, &x).unwrap().to_string(), "accuracy=1.0 tokens=3");
    }

    #[test]
    fn mismatch_names_first_sentence() {
        let h = c(vec![vec![3], vec![4, 5], vec![6]]);
        let r = c(vec![vec![3], vec![4], vec![6, 7]]);
        assert!(matches!(token_accuracy(&h, &r), Err(Error::LengthMismatch { sentence: 1, hyp: 2, reference: 1 })));
        assert!(matches!(token_accuracy(&h, &c(vec![vec![3]])), Err(Error::LengthMismatch { sentence: 1, .. })));
    }

    proptest! {
        #[test]
        fn symmetric_and_order_invariant(pairs in prop::collection::vec(
            prop::collection::vec((0u32..4, 0u32..4), 1..6), 1..6)) {
            let h = c(pairs.iter().map(|s| s.iter().map(|p| p.0).collect()).collect());
            let r = c(pairs.iter().map(|s| s.iter().map(|p| p.1).collect()).collect());
            let a = token_accuracy(&h, &r).unwrap();
            prop_assert_eq!(a, token_accuracy(&r, &h).unwrap());
            let mut hr = h.clone();
            let mut rr = r.clone();
            hr.sentences.reverse();
            rr.sentences.reverse();
            prop_assert_eq!(a, token_accuracy(&hr, &rr).unwrap());
            prop_assert_eq!(a.value() == 1.0, h == r);
        }
    }
}
