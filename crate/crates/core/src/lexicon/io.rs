use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use super::{LexiconRow, RowSlot, Smoothing, SparseLexicon};
use crate::corpus::{Vocabulary, WordId};
use crate::error::{Error, Result};

impl SparseLexicon {
    /// Writes `target<TAB>source<TAB>probability` rows grouped by target
    /// word. Probabilities use the shortest exact decimal form. Implicit
    /// uniform rows are written out in full.
    pub fn write_tsv(&self, src_vocab: &Vocabulary, tgt_vocab: &Vocabulary, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_tsv_to(src_vocab, tgt_vocab, &mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn write_tsv_to<W: Write>(&self, src_vocab: &Vocabulary, tgt_vocab: &Vocabulary, out: &mut W) -> Result<()> {
        if src_vocab.len() != self.src_vocab_size() || tgt_vocab.len() != self.tgt_vocab_size() {
            return Err(Error::VocabularyMismatch("vocabularies do not match the lexicon".into()));
        }
        for (e, slot) in self.rows().iter().enumerate() {
            let e_word = tgt_vocab.decode(e as WordId);
            match slot {
                RowSlot::Missing => {}
                RowSlot::Uniform => {
                    let p = 1.0 / self.src_vocab_size() as f64;
                    for f in 0..self.src_vocab_size() as WordId {
                        writeln!(out, "{e_word}\t{}\t{p}", src_vocab.decode(f))?;
                    }
                }
                RowSlot::Stored(row) => {
                    for (f, p) in row.iter() {
                        writeln!(out, "{e_word}\t{}\t{p}", src_vocab.decode(f))?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Reads a lexicon TSV. Every word must be in its vocabulary, each row
    /// must sum to one within 1e-6, and target words without rows get none.
    pub fn read_tsv(
        src_vocab: &Vocabulary,
        tgt_vocab: &Vocabulary,
        tau: f64,
        smoothing: Smoothing,
        path: impl AsRef<Path>,
    ) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut rows: Vec<Option<Vec<(WordId, f64)>>> = vec![None; tgt_vocab.len()];
        let mut last_target: Option<WordId> = None;
        for (idx, line) in reader.lines().enumerate() {
            let lineno = idx + 1;
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse { line: lineno, message };
            let mut fields = line.split('\t');
            let (Some(e), Some(f), Some(p), None) = (fields.next(), fields.next(), fields.next(), fields.next()) else {
                return Err(err(format!("expected 3 tab-separated fields, got {line:?}")));
            };
            let e = tgt_vocab.get(e).ok_or_else(|| Error::UnmappedWord(e.to_string()))?;
            let f = src_vocab.get(f).ok_or_else(|| Error::UnmappedWord(f.to_string()))?;
            let p: f64 = p.parse().map_err(|_| err(format!("bad probability {p:?}")))?;
            if !(p > 0.0 && p <= 1.0) {
                return Err(err(format!("probability {p} not in (0,1]")));
            }
            if last_target != Some(e) && rows[e as usize].is_some() {
                return Err(err("rows of one target word must be contiguous".into()));
            }
            last_target = Some(e);
            rows[e as usize].get_or_insert_with(Vec::new).push((f, p));
        }
        let rows = rows
            .into_iter()
            .map(|entries| match entries {
                None => Ok(RowSlot::Missing),
                Some(mut entries) => {
                    entries.sort_by_key(|&(f, _)| f);
                    if entries.windows(2).any(|w| w[0].0 == w[1].0) {
                        return Err(Error::InvalidArgument("duplicate lexicon entry".into()));
                    }
                    let total: f64 = entries.iter().map(|&(_, p)| p).sum();
                    if (total - 1.0).abs() > 1e-6 {
                        return Err(Error::InvalidArgument(format!("lexicon row sums to {total}")));
                    }
                    let (sources, weights) = entries.into_iter().unzip();
                    Ok(RowSlot::Stored(Arc::new(LexiconRow::normalized_unchecked(sources, weights))))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        SparseLexicon::from_rows(rows, src_vocab.len(), tau, smoothing)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::threshold_renormalize;

    fn vocabs() -> (Vocabulary, Vocabulary) {
        (
            Vocabulary::from_words([("x", 1), ("y", 1)]),
            Vocabulary::from_words([("A", 1), ("B", 1)]),
        )
    }

    #[test]
    fn text_round_trip_is_exact() {
        let (src, tgt) = vocabs();
        let r = LexiconRow::from_weights(vec![(3, 1.0), (4, 2.0), (2, 1e-7)]).unwrap();
        let r = threshold_renormalize(&r, 0.0).unwrap();
        let mut rows = vec![RowSlot::Missing; 5];
        rows[3] = RowSlot::Stored(Arc::new(r));
        rows[4] = RowSlot::Uniform;
        let lex = SparseLexicon::from_rows(rows, 5, 0.0, Smoothing::none(5)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lex.tsv");
        lex.write_tsv(&src, &tgt, &p).unwrap();
        let back = SparseLexicon::read_tsv(&src, &tgt, 0.0, Smoothing::none(5), &p).unwrap();
        for e in 0..5 {
            for f in 0..5 {
                assert_eq!(lex.sparse_prob(f, e), back.sparse_prob(f, e));
            }
        }
        let p2 = dir.path().join("lex2.tsv");
        back.write_tsv(&src, &tgt, &p2).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn rejects_unknown_words_and_bad_rows() {
        let (src, tgt) = vocabs();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lex.tsv");
        for (text, unmapped) in [
            ("Z\tx\t1.0\n", true),
            ("A\tz\t1.0\n", true),
            ("A\tx\t0.5\n", false),
            ("A\tx\t0.5\nB\tx\t1\nA\ty\t0.5\n", false),
            ("A\tx\n", false),
        ] {
            std::fs::write(&p, text).unwrap();
            let res = SparseLexicon::read_tsv(&src, &tgt, 0.0, Smoothing::none(5), &p);
            match res {
                Err(Error::UnmappedWord(_)) => assert!(unmapped, "{text:?}"),
                Err(_) => assert!(!unmapped, "{text:?}"),
                Ok(_) => panic!("accepted {text:?}"),
            }
        }
    }
}
