//! Deterministic synthetic languages and substitution ciphers for testing.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Corpus, MonotoneTask, Side, Vocabulary, WordId, BOS_ID, NUM_SPECIALS};
use crate::error::{Error, Result};

/// A random sparse bigram "language" over `num_words` regular words.
///
/// Each context (sentence start or a word) has a handful of successors drawn
/// with a Zipf-like preference for low word indices, so unigram frequencies
/// are skewed and bigram contexts are distinctive.
#[derive(Debug, Clone)]
pub struct SyntheticLanguage {
    num_words: usize,
    end_prob: f64,
    max_len: usize,
    /// successors[c] for c in 0..=num_words; index 0 is sentence start,
    /// index i+1 is regular word i. Weights are cumulative.
    successors: Vec<Vec<(WordId, f64)>>,
}

impl SyntheticLanguage {
    pub fn new(num_words: usize, branching: usize, mean_len: f64, seed: u64) -> Self {
        assert!(num_words >= 1 && branching >= 1 && mean_len >= 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let zipf: Vec<f64> = (0..num_words).map(|i| 1.0 / (i as f64 + 1.0)).collect();
        let zipf_total: f64 = zipf.iter().sum();
        let mut successors = Vec::with_capacity(num_words + 1);
        for _ in 0..=num_words {
            let mut chosen: Vec<usize> = Vec::with_capacity(branching);
            let want = branching.min(num_words);
            while chosen.len() < want {
                let mut u = rng.gen::<f64>() * zipf_total;
                let mut pick = num_words - 1;
                for (i, z) in zipf.iter().enumerate() {
                    if u < *z {
                        pick = i;
                        break;
                    }
                    u -= z;
                }
                if !chosen.contains(&pick) {
                    chosen.push(pick);
                }
            }
            let mut acc = 0.0;
            let mut row: Vec<(WordId, f64)> = chosen
                .into_iter()
                .map(|w| {
                    acc += -(1.0 - rng.gen::<f64>()).ln();
                    ((w + NUM_SPECIALS) as WordId, acc)
                })
                .collect();
            for entry in &mut row {
                entry.1 /= acc;
            }
            successors.push(row);
        }
        Self {
            num_words,
            end_prob: 1.0 / mean_len,
            max_len: (4.0 * mean_len).ceil() as usize,
            successors,
        }
    }

    pub fn num_words(&self) -> usize {
        self.num_words
    }

    /// Target-side vocabulary `w0..w{n-1}` with ids following the specials.
    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary::from_words((0..self.num_words).map(|i| (format!("w{i}"), 0)))
    }

    /// Vocabulary for the enciphered side, `x0..x{n-1}`.
    pub fn source_vocabulary(&self) -> Vocabulary {
        Vocabulary::from_words((0..self.num_words).map(|i| (format!("x{i}"), 0)))
    }

    /// Samples whole sentences until at least `num_tokens` tokens exist.
    pub fn sample(&self, num_tokens: usize, seed: u64) -> Corpus {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sentences = Vec::new();
        let mut total = 0;
        while total < num_tokens {
            let mut sentence = Vec::new();
            let mut context = BOS_ID;
            loop {
                let row = if context == BOS_ID {
                    &self.successors[0]
                } else {
                    &self.successors[context as usize - NUM_SPECIALS + 1]
                };
                let u = rng.gen::<f64>();
                let next = row
                    .iter()
                    .find(|(_, cum)| u < *cum)
                    .map(|(w, _)| *w)
                    .unwrap_or(row[row.len() - 1].0);
                sentence.push(next);
                context = next;
                if sentence.len() >= self.max_len || rng.gen::<f64>() < self.end_prob {
                    break;
                }
            }
            total += sentence.len();
            sentences.push(sentence);
        }
        Corpus::new(sentences, Side::Target)
    }
}

/// Random bijection over `vocab_size` ids that leaves the specials fixed.
pub fn random_key(vocab_size: usize, seed: u64) -> Vec<WordId> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut key: Vec<WordId> = (0..vocab_size as WordId).collect();
    if vocab_size > NUM_SPECIALS {
        key[NUM_SPECIALS..].shuffle(&mut rng);
    }
    key
}

fn check_bijection(key: &[WordId], id_bound: usize) -> Result<()> {
    if key.len() < id_bound {
        return Err(Error::NotBijective(format!(
            "key covers {} ids, text uses {}",
            key.len(),
            id_bound
        )));
    }
    let mut seen = vec![false; key.len()];
    for (from, &to) in key.iter().enumerate() {
        let slot = seen.get_mut(to as usize).ok_or_else(|| {
            Error::NotBijective(format!("{from} maps to {to}, outside 0..{}", key.len()))
        })?;
        if *slot {
            return Err(Error::NotBijective(format!("{to} is hit twice")));
        }
        *slot = true;
    }
    Ok(())
}

/// Enciphers the first half of `target_text` with `key` (target id to
/// source id); the second half becomes LM text.
pub fn generate_synthetic_cipher(target_text: &Corpus, key: &[WordId]) -> Result<MonotoneTask> {
    check_bijection(key, target_text.id_bound())?;
    let n_first = (target_text.len() as f64 * 0.5).round() as usize;
    let (first, second) = target_text.sentences.split_at(n_first);
    let source = first
        .iter()
        .map(|s| s.iter().map(|&w| key[w as usize]).collect())
        .collect();
    Ok(MonotoneTask {
        source_input: Corpus::new(source, Side::Source),
        reference: Corpus::new(first.to_vec(), Side::Target),
        lm_text: Corpus::new(second.to_vec(), Side::Target),
    })
}

/// Makes the channel ambiguous: every regular target word gets a fixed
/// random alternative, and with probability `noise` a token is enciphered
/// as its alternative's cipher symbol instead of its own.
pub fn inject_ambiguity(
    task: &MonotoneTask,
    key: &[WordId],
    noise: f64,
    seed: u64,
) -> Result<MonotoneTask> {
    if !(0.0..=1.0).contains(&noise) {
        return Err(Error::InvalidArgument(format!("noise {noise} not in [0,1]")));
    }
    check_bijection(key, task.reference.id_bound())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let regular = key.len().saturating_sub(NUM_SPECIALS);
    let alternative: Vec<WordId> = (0..key.len())
        .map(|e| {
            if e < NUM_SPECIALS || regular < 2 {
                return e as WordId;
            }
            loop {
                let alt = rng.gen_range(NUM_SPECIALS..key.len());
                if alt != e {
                    return alt as WordId;
                }
            }
        })
        .collect();
    let source = task
        .reference
        .sentences
        .iter()
        .map(|s| {
            s.iter()
                .map(|&e| {
                    let e = e as usize;
                    if rng.gen::<f64>() < noise {
                        key[alternative[e] as usize]
                    } else {
                        key[e]
                    }
                })
                .collect()
        })
        .collect();
    Ok(MonotoneTask {
        source_input: Corpus::new(source, Side::Source),
        reference: task.reference.clone(),
        lm_text: task.lm_text.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direct_substitution() {
        // A=3 -> x=4, B=4 -> y=3
        let text = Corpus::new(vec![vec![3, 4, 3], vec![4]], Side::Target);
        let key = vec![0, 1, 2, 4, 3];
        let task = generate_synthetic_cipher(&text, &key).unwrap();
        assert_eq!(task.source_input.sentences, vec![vec![4, 3, 4]]);
        assert_eq!(task.reference.sentences, vec![vec![3, 4, 3]]);
        assert_eq!(task.lm_text.sentences, vec![vec![4]]);
    }

    #[test]
    fn identity_key() {
        let lang = SyntheticLanguage::new(10, 3, 5.0, 1);
        let text = lang.sample(200, 2);
        let key: Vec<WordId> = (0..lang.vocabulary().len() as WordId).collect();
        let task = generate_synthetic_cipher(&text, &key).unwrap();
        assert_eq!(task.source_input.sentences, task.reference.sentences);
    }

    #[test]
    fn halves_are_disjoint() {
        let text = Corpus::new((0..1000).map(|i| vec![3 + (i % 5) as WordId]).collect(), Side::Target);
        let key = random_key(8, 3);
        let task = generate_synthetic_cipher(&text, &key).unwrap();
        assert_eq!(task.source_input.len(), 500);
        assert_eq!(task.lm_text.len(), 500);
        assert_eq!(&text.sentences[..500], &task.reference.sentences[..]);
        assert_eq!(&text.sentences[500..], &task.lm_text.sentences[..]);
    }

    #[test]
    fn rejects_non_bijection() {
        let text = Corpus::new(vec![vec![3, 4]], Side::Target);
        assert!(matches!(
            generate_synthetic_cipher(&text, &[0, 1, 2, 3, 3]),
            Err(Error::NotBijective(_))
        ));
        assert!(matches!(
            generate_synthetic_cipher(&text, &[0, 1, 2, 3]),
            Err(Error::NotBijective(_))
        ));
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = SyntheticLanguage::new(20, 4, 8.0, 7).sample(500, 9);
        let b = SyntheticLanguage::new(20, 4, 8.0, 7).sample(500, 9);
        assert_eq!(a, b);
        assert!(a.num_tokens() >= 500);
        assert!(a.validate(23).is_ok());
    }

    #[test]
    fn key_fixes_specials() {
        let key = random_key(50, 11);
        assert_eq!(&key[..NUM_SPECIALS], &[0, 1, 2]);
        let mut sorted = key.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn ambiguity_keeps_shape() {
        let lang = SyntheticLanguage::new(10, 3, 5.0, 1);
        let text = lang.sample(400, 2);
        let key = random_key(lang.vocabulary().len(), 5);
        let task = generate_synthetic_cipher(&text, &key).unwrap();
        let noisy = inject_ambiguity(&task, &key, 0.3, 6).unwrap();
        noisy.check_parallel().unwrap();
        assert_ne!(noisy.source_input, task.source_input);
        let clean = inject_ambiguity(&task, &key, 0.0, 6).unwrap();
        assert_eq!(clean.source_input, task.source_input);
    }
}
