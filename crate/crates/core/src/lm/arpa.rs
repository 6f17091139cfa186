use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::NGramLm;
use crate::corpus::{Vocabulary, WordId, EOS, UNK};
use crate::error::{Error, Result};

/// log10 values at or below this are read as log(0).
const LOG10_ZERO: f64 = -99.0;
/// Substitute log10 probability for a required token missing from a file.
const LOG10_MISSING: f64 = -100.0;

fn to_log10(ln: f64) -> f64 {
    if ln == f64::NEG_INFINITY {
        LOG10_ZERO
    } else {
        ln / std::f64::consts::LN_10
    }
}

fn from_log10(v: f64) -> f64 {
    if v <= LOG10_ZERO {
        f64::NEG_INFINITY
    } else {
        v * std::f64::consts::LN_10
    }
}

impl NGramLm {
    pub fn write_arpa(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_arpa_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn write_arpa_to<W: Write>(&self, out: &mut W) -> Result<()> {
        let counts = self.counts();
        writeln!(out, "\\data\\")?;
        for (k, c) in counts.iter().enumerate() {
            writeln!(out, "ngram {}={}", k + 1, c)?;
        }
        let mut by_order: Vec<Vec<u32>> = vec![Vec::new(); self.order];
        for (id, node) in self.nodes.iter().enumerate().skip(1) {
            by_order[node.order as usize - 1].push(id as u32);
        }
        let mut words = Vec::with_capacity(self.order);
        for (k, ids) in by_order.iter().enumerate() {
            writeln!(out)?;
            writeln!(out, "\\{}-grams:", k + 1)?;
            for &id in ids {
                let node = &self.nodes[id as usize];
                words.clear();
                let mut n = id;
                while n != 0 {
                    words.push(self.vocab.decode(self.nodes[n as usize].word));
                    n = self.nodes[n as usize].parent;
                }
                words.reverse();
                write!(out, "{}\t{}", to_log10(node.log_prob), words.join(" "))?;
                if k + 1 < self.order && node.is_history {
                    write!(out, "\t{}", to_log10(node.log_bow))?;
                }
                writeln!(out)?;
            }
        }
        writeln!(out)?;
        writeln!(out, "\\end\\")?;
        Ok(())
    }

    /// Reads an ARPA model. The vocabulary is taken from the unigram section
    /// in file order, with the special tokens moved to ids 0..3.
    pub fn read_arpa(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_arpa_from(BufReader::new(File::open(path)?))
    }

    pub fn read_arpa_from<R: BufRead>(reader: R) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse { line, message };
        let mut declared: Vec<usize> = Vec::new();
        // entries per order: (line, words, log10 prob, log10 bow)
        let mut sections: Vec<Vec<(usize, Vec<String>, f64, f64)>> = Vec::new();
        let mut state = 0u8; // 0 before \data\, 1 header, 2 in n-gram section, 3 ended
        let mut current = 0usize;
        let mut last_line = 0;
        for (idx, line) in reader.lines().enumerate() {
            let lineno = idx + 1;
            last_line = lineno;
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            match state {
                0 => {
                    if line == "\\data\\" {
                        state = 1;
                    }
                }
                3 => return Err(err(lineno, "content after \\end\\".into())),
                _ => {
                    if line == "\\end\\" {
                        state = 3;
                    } else if let Some(rest) = line.strip_prefix("ngram ") {
                        if state != 1 {
                            return Err(err(lineno, "ngram count outside header".into()));
                        }
                        let (k, c) = rest
                            .split_once('=')
                            .and_then(|(k, c)| Some((k.trim().parse::<usize>().ok()?, c.trim().parse::<usize>().ok()?)))
                            .ok_or_else(|| err(lineno, format!("bad count line {line:?}")))?;
                        if k != declared.len() + 1 {
                            return Err(err(lineno, format!("expected order {}", declared.len() + 1)));
                        }
                        declared.push(c);
                    } else if line.starts_with('\\') && line.ends_with("-grams:") {
                        let k: usize = line[1..line.len() - 7]
                            .parse()
                            .map_err(|_| err(lineno, format!("bad section header {line:?}")))?;
                        if k != sections.len() + 1 || k > declared.len() {
                            return Err(err(lineno, format!("unexpected section {k}")));
                        }
                        sections.push(Vec::new());
                        current = k;
                        state = 2;
                    } else if state == 2 {
                        let mut fields = line.split_whitespace();
                        let lp: f64 = fields
                            .next()
                            .and_then(|f| f.parse().ok())
                            .ok_or_else(|| err(lineno, "bad log-probability".into()))?;
                        let words: Vec<String> = fields.by_ref().take(current).map(str::to_string).collect();
                        if words.len() != current {
                            return Err(err(lineno, format!("expected {current} words")));
                        }
                        let bow = match fields.next() {
                            Some(f) => f.parse().map_err(|_| err(lineno, "bad backoff".into()))?,
                            None => 0.0,
                        };
                        if fields.next().is_some() {
                            return Err(err(lineno, "trailing fields".into()));
                        }
                        sections[current - 1].push((lineno, words, lp, bow));
                    } else {
                        return Err(err(lineno, format!("unexpected line {line:?}")));
                    }
                }
            }
        }
        if state != 3 {
            return Err(err(last_line, "missing \\end\\ marker".into()));
        }
        if declared.is_empty() || sections.len() != declared.len() {
            return Err(err(last_line, "section count does not match header".into()));
        }
        for (k, (entries, &count)) in sections.iter().zip(&declared).enumerate() {
            if entries.len() != count {
                return Err(err(
                    entries.last().map(|e| e.0).unwrap_or(last_line),
                    format!("{}-grams: header declares {count}, found {}", k + 1, entries.len()),
                ));
            }
        }

        let vocab = Vocabulary::from_words(sections[0].iter().map(|(_, w, _, _)| (w[0].clone(), 0)));
        let mut lm = NGramLm::skeleton(vocab, declared.len());
        let mut has_unigram = vec![false; lm.vocab.len()];
        for (_, words, lp, bow) in &sections[0] {
            let w = lm.vocab.encode(&words[0]);
            lm.set_unigram(w, from_log10(*lp), bow * std::f64::consts::LN_10);
            has_unigram[w as usize] = true;
        }
        for required in [EOS, UNK] {
            let w = lm.vocab.encode(required);
            if !has_unigram[w as usize] {
                log::warn!("ARPA model has no {required} unigram; assigning log10 {LOG10_MISSING}");
                lm.set_unigram(w, from_log10(LOG10_MISSING), 0.0);
            }
        }
        let mut ids: Vec<WordId> = Vec::new();
        for entries in &sections[1..] {
            for (lineno, words, lp, bow) in entries {
                ids.clear();
                for w in words {
                    ids.push(
                        lm.vocab
                            .get(w)
                            .ok_or_else(|| err(*lineno, format!("word {w:?} has no unigram")))?,
                    );
                }
                lm.insert(&ids, from_log10(*lp), bow * std::f64::consts::LN_10)
                    .map_err(|m| err(*lineno, m))?;
            }
        }
        lm.finalize();
        Ok(lm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Side, BOS_ID, EOS_ID};
    use crate::lm::Discount;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    fn toy(order: usize) -> NGramLm {
        let text: Vec<Vec<&str>> = ["a b c a", "b c", "c a b b", "a"]
            .iter()
            .map(|l| l.split_whitespace().collect())
            .collect();
        let vocab = Vocabulary::build(&text, 1).unwrap();
        let corpus = vocab.encode_sentences(&text, Side::Target);
        NGramLm::train(&corpus, &vocab, order, &Discount::Estimate).unwrap()
    }

    fn round_trip(lm: &NGramLm) -> NGramLm {
        let mut buf = Vec::new();
        lm.write_arpa_to(&mut buf).unwrap();
        NGramLm::read_arpa_from(&buf[..]).unwrap()
    }

    #[test]
    fn round_trip_preserves_scores() {
        for order in 1..=3 {
            let lm = toy(order);
            let back = round_trip(&lm);
            assert_eq!(back.vocab().words(), lm.vocab().words());
            assert_eq!(back.counts(), lm.counts());
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(order as u64);
            let v = lm.vocab_size() as WordId;
            for _ in 0..100 {
                let len = rng.gen_range(0..4);
                let hist: Vec<WordId> = (0..len).map(|_| rng.gen_range(0..v)).collect();
                let w = rng.gen_range(1..v);
                let a = lm.log_prob_history(&hist, w);
                let b = back.log_prob_history(&hist, w);
                assert_abs_diff_eq!(a, b, epsilon = 1e-9);
            }
            for (a, b) in lm.nodes.iter().zip(&back.nodes) {
                if a.log_prob.is_finite() {
                    assert_abs_diff_eq!(a.log_prob, b.log_prob, epsilon = 1e-9);
                } else {
                    assert_eq!(b.log_prob, f64::NEG_INFINITY);
                }
                assert_abs_diff_eq!(a.log_bow, b.log_bow, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn missing_end_marker() {
        let text = "\\data\\\nngram 1=2\n\n\\1-grams:\n-0.3\t</s>\n-0.3\ta\n";
        match NGramLm::read_arpa_from(text.as_bytes()) {
            Err(Error::Parse { message, .. }) => assert!(message.contains("end")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn count_mismatch_reports_line() {
        let text = "\\data\\\nngram 1=3\n\n\\1-grams:\n-0.3\t</s>\n-0.3\ta\n\n\\end\\\n";
        assert!(matches!(
            NGramLm::read_arpa_from(text.as_bytes()),
            Err(Error::Parse { line: 6, .. })
        ));
    }

    #[test]
    fn unknown_word_in_higher_order() {
        let text = "\\data\\\nngram 1=2\nngram 2=1\n\n\\1-grams:\n-0.3\t</s>\n-0.3\ta\t-0.1\n\n\\2-grams:\n-0.2\ta b\n\n\\end\\\n";
        assert!(matches!(
            NGramLm::read_arpa_from(text.as_bytes()),
            Err(Error::Parse { line: 10, .. })
        ));
    }

    /// A hand-written backoff bigram model. The expected sentence score is
    /// worked out by hand with the standard ARPA backoff rule:
    ///   log10 p(<s> a c </s>)
    ///     = p(a|<s>) + [bow(a) + p(c)] + p(</s>|c)
    ///     = -0.2 + (-0.3 + -1.0) + -0.4 = -1.9
    #[test]
    fn scores_external_model() {
        let text = "\
\\data\\
ngram 1=5
ngram 2=4

\\1-grams:
-1.0\t<unk>
-99\t<s>\t-0.5
-0.6\t</s>
-0.5\ta\t-0.3
-1.0\tc\t-0.25

\\2-grams:
-0.2\t<s> a
-0.7\ta </s>
-0.4\tc </s>
-0.1\ta a

\\end\\
";
        let lm = NGramLm::read_arpa_from(text.as_bytes()).unwrap();
        let v = lm.vocab().clone();
        let sent = [v.encode("a"), v.encode("c")];
        let got = lm.sentence_log_prob(&sent) / std::f64::consts::LN_10;
        assert_abs_diff_eq!(got, -1.9, epsilon = 1e-4);
        assert_eq!(lm.log_prob(lm.null_state(), BOS_ID), f64::NEG_INFINITY);
        assert!(lm.log_prob(lm.begin_state(), EOS_ID).is_finite());
    }
}
