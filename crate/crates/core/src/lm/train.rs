use rustc_hash::FxHashMap;

use super::NGramLm;
use crate::corpus::{Corpus, Vocabulary, WordId, BOS_ID, EOS_ID};
use crate::error::{Error, Result};

/// Per-order absolute discounts for Kneser-Ney.
#[derive(Debug, Clone, PartialEq)]
pub enum Discount {
    /// `D = n1 / (n1 + 2 n2)` from count-of-counts at each order.
    Estimate,
    /// One value per order, or a single value used for every order.
    Fixed(Vec<f64>),
}

impl Discount {
    fn resolve(&self, order: usize, counts: &[FxHashMap<Vec<WordId>, u64>]) -> Result<Vec<f64>> {
        match self {
            Discount::Estimate => Ok(counts.iter().map(estimate_discount).collect()),
            Discount::Fixed(values) => {
                let values = match values.len() {
                    1 => vec![values[0]; order],
                    n if n == order => values.clone(),
                    n => {
                        return Err(Error::InvalidArgument(format!(
                            "{n} discounts given for an order-{order} model"
                        )))
                    }
                };
                if let Some(bad) = values.iter().find(|d| !(**d > 0.0 && **d <= 1.0)) {
                    return Err(Error::InvalidArgument(format!(
                        "discount {bad} not in (0,1]"
                    )));
                }
                Ok(values)
            }
        }
    }
}

fn estimate_discount(counts: &FxHashMap<Vec<WordId>, u64>) -> f64 {
    let n1 = counts.values().filter(|&&c| c == 1).count() as f64;
    let n2 = counts.values().filter(|&&c| c == 2).count() as f64;
    if n1 == 0.0 {
        // no singletons: the formula degenerates to 0, which would leave
        // unseen words without mass
        0.5
    } else {
        n1 / (n1 + 2.0 * n2)
    }
}

impl NGramLm {
    /// Trains an interpolated Kneser-Ney model.
    ///
    /// Sentences are padded with one `<s>` and one `</s>`. The highest order
    /// and n-grams starting with `<s>` use raw counts; other lower orders use
    /// continuation counts. The unigram level interpolates with a uniform
    /// distribution over every predictable word, so unseen words (including
    /// `<unk>`) keep non-zero probability.
    pub fn train(text: &Corpus, vocab: &Vocabulary, order: usize, discount: &Discount) -> Result<Self> {
        if order < 1 {
            return Err(Error::InvalidArgument("order must be >= 1".into()));
        }
        if text.sentences.iter().all(|s| s.is_empty()) {
            return Err(Error::EmptyCorpus);
        }
        text.validate(vocab.len())?;
        let longest = text.sentences.iter().map(Vec::len).max().unwrap_or(0);
        if order > longest + 1 {
            log::warn!("order {order} exceeds longest sentence length + 1 ({})", longest + 1);
        }

        // raw[k-1]: raw counts of k-grams ending at a predicted position
        let mut raw: Vec<FxHashMap<Vec<WordId>, u64>> = vec![FxHashMap::default(); order];
        let mut padded = Vec::new();
        for sentence in &text.sentences {
            if sentence.is_empty() {
                continue;
            }
            padded.clear();
            padded.push(BOS_ID);
            padded.extend_from_slice(sentence);
            padded.push(EOS_ID);
            for end in 1..padded.len() {
                for k in 1..=order.min(end + 1) {
                    *raw[k - 1].entry(padded[end + 1 - k..=end].to_vec()).or_insert(0) += 1;
                }
            }
        }
        if order >= 2 && raw[1].is_empty() {
            return Err(Error::InvalidArgument("no bigrams in training text".into()));
        }

        // adjusted counts
        let mut adjusted: Vec<FxHashMap<Vec<WordId>, u64>> = vec![FxHashMap::default(); order];
        adjusted[order - 1] = raw[order - 1].clone();
        for k in (1..order).rev() {
            let mut continuation: FxHashMap<Vec<WordId>, u64> = FxHashMap::default();
            for gram in raw[k].keys() {
                if gram[1] != BOS_ID {
                    *continuation.entry(gram[1..].to_vec()).or_insert(0) += 1;
                }
            }
            let level = &mut adjusted[k - 1];
            for (gram, &count) in &raw[k - 1] {
                let value = if gram[0] == BOS_ID {
                    count
                } else {
                    continuation.get(gram).copied().unwrap_or(0)
                };
                if value > 0 {
                    level.insert(gram.clone(), value);
                }
            }
        }
        let discounts = discount.resolve(order, &adjusted)?;
        log::debug!("kneser-ney discounts {discounts:?}");

        let mut lm = NGramLm::skeleton(vocab.clone(), order);

        // unigrams
        let d1 = discounts[0];
        let predictable = vocab.len() - 1;
        let total: u64 = adjusted[0].values().sum();
        let types = adjusted[0].len() as f64;
        let floor = d1 * types / total as f64 / predictable as f64;
        for w in 0..vocab.len() as WordId {
            if w == BOS_ID {
                continue;
            }
            let a = adjusted[0].get(&vec![w]).copied().unwrap_or(0) as f64;
            let p = (a - d1).max(0.0) / total as f64 + floor;
            lm.set_unigram(w, p.ln(), 0.0);
        }

        // higher orders, lowest first, so lower-order interpolation terms can
        // be read back from the partially built model
        for k in 2..=order {
            let d = discounts[k - 1];
            let mut by_history: FxHashMap<&[WordId], (u64, u64)> = FxHashMap::default();
            for (gram, &a) in &adjusted[k - 1] {
                let e = by_history.entry(&gram[..k - 1]).or_insert((0, 0));
                e.0 += a;
                e.1 += 1;
            }
            let mut bows: Vec<(Vec<WordId>, f64)> = by_history
                .iter()
                .map(|(h, &(sum, types))| (h.to_vec(), d * types as f64 / sum as f64))
                .collect();
            bows.sort_by(|a, b| a.0.cmp(&b.0));
            let mut grams: Vec<(&Vec<WordId>, u64)> =
                adjusted[k - 1].iter().map(|(g, &a)| (g, a)).collect();
            grams.sort();
            let mut entries = Vec::with_capacity(grams.len());
            for (gram, a) in grams {
                let (sum, _) = by_history[&gram[..k - 1]];
                let gamma = by_history
                    .get(&gram[..k - 1])
                    .map(|&(s, t)| d * t as f64 / s as f64)
                    .unwrap();
                let lower = lm.log_prob_history(&gram[1..k - 1], gram[k - 1]).exp();
                let p = (a as f64 - d).max(0.0) / sum as f64 + gamma * lower;
                entries.push((gram.clone(), p.ln()));
            }
            // backoff weights of the histories live on order k-1 nodes
            for (h, gamma) in bows {
                let node = lm.node_of(&h).expect("history n-gram is stored");
                lm.nodes[node as usize].log_bow = gamma.ln();
            }
            for (gram, lp) in entries {
                lm.insert(&gram, lp, 0.0).map_err(Error::InvalidArgument)?;
            }
        }
        lm.finalize();
        Ok(lm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Side, UNK_ID};
    use crate::lm::LmState;
    use approx::assert_abs_diff_eq;

    fn train_text(lines: &[&str], order: usize, d: &Discount) -> NGramLm {
        let text: Vec<Vec<&str>> = lines.iter().map(|l| l.split_whitespace().collect()).collect();
        let vocab = Vocabulary::build(&text, 1).unwrap();
        let corpus = vocab.encode_sentences(&text, Side::Target);
        NGramLm::train(&corpus, &vocab, order, d).unwrap()
    }

    fn mass(lm: &NGramLm, s: LmState) -> f64 {
        (0..lm.vocab_size() as WordId)
            .filter(|&w| w != BOS_ID)
            .map(|w| lm.log_prob(s, w).exp())
            .sum()
    }

    #[test]
    fn every_history_normalizes() {
        let lines = [
            "the cat sat on the mat",
            "the dog sat on the log",
            "a cat saw a dog",
            "the mat",
            "on the log the cat sat",
        ];
        for order in 1..=4 {
            let lm = train_text(&lines, order, &Discount::Estimate);
            for s in lm.history_states() {
                assert_abs_diff_eq!(mass(&lm, s), 1.0, epsilon = 1e-9);
            }
            for &lp in lm.nodes.iter().skip(1).map(|n| &n.log_prob) {
                assert!(lp <= 1e-12);
            }
            assert!(lm.nodes.iter().all(|n| n.log_bow.is_finite()));
        }
    }

    #[test]
    fn unknown_gets_floor_mass() {
        let lm = train_text(&["a b c", "a b"], 3, &Discount::Estimate);
        assert!(lm.log_prob(lm.begin_state(), UNK_ID).is_finite());
    }

    #[test]
    fn discount_validation() {
        let text = vec![vec!["a"]];
        let vocab = Vocabulary::build(&text, 1).unwrap();
        let corpus = vocab.encode_sentences(&text, Side::Target);
        for bad in [vec![0.0], vec![1.5], vec![0.5, 0.5, 0.5]] {
            assert!(NGramLm::train(&corpus, &vocab, 2, &Discount::Fixed(bad)).is_err());
        }
    }

    #[test]
    fn estimated_discount_formula() {
        let mut counts: FxHashMap<Vec<WordId>, u64> = FxHashMap::default();
        for (i, c) in [1, 1, 1, 2, 3].into_iter().enumerate() {
            counts.insert(vec![i as WordId], c);
        }
        assert_abs_diff_eq!(estimate_discount(&counts), 3.0 / 5.0);
    }

    #[test]
    fn trigram_counts_at_sentence_start() {
        // "<s> a b </s>": trigrams (<s> a b), (a b </s>); bigram (<s> a)
        let lm = train_text(&["a b"], 3, &Discount::Fixed(vec![0.5]));
        assert_eq!(lm.counts(), vec![lm.vocab_size(), 3, 2]);
    }
}
