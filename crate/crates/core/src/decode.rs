//! Viterbi decoding with the training search's trellis and preselection.

use rayon::prelude::*;

use crate::corpus::{Corpus, Side, WordId, UNK_ID};
use crate::error::Result;
use crate::lexicon::SparseLexicon;
use crate::lm::NGramLm;
use crate::search::{viterbi_with, Beams, SearchCache, Preselector, SearchModel};

/// A decoder with preselection lists prepared for one input corpus.
pub struct Decoder<'m, 'a> {
    lex: &'m SparseLexicon,
    lm: &'a NGramLm,
    preselector: Preselector<'a>,
    histogram: usize,
}

impl<'m, 'a> Decoder<'m, 'a> {
    pub fn new(lex: &'m SparseLexicon, lm: &'a NGramLm, beams: Beams, input: &Corpus) -> Self {
        let preselector = Preselector::new(lex, lm, input.sentences.iter().flatten().copied(), &beams);
        Self { lex, lm, preselector, histogram: beams.histogram }
    }

    fn model(&self) -> SearchModel<'_, 'a> {
        SearchModel { lex: self.lex, lm: self.lm, preselector: &self.preselector, histogram: self.histogram }
    }

    /// Best target sequence and its joint log-score. Source words must have
    /// been part of the corpus given to `new`.
    pub fn decode_sentence(&self, sentence: &[WordId], cache: &mut SearchCache) -> Result<(Vec<WordId>, f64)> {
        viterbi_with(sentence, &self.model(), cache)
    }

    /// Decodes every sentence in parallel. A sentence without a surviving
    /// path decodes to `<unk>` tokens so lengths always match the input.
    pub fn decode_corpus(&self, input: &Corpus) -> Corpus {
        let sentences = input
            .sentences
            .par_iter()
            .map_init(SearchCache::default, |cache, sentence| {
                if sentence.is_empty() {
                    return Vec::new();
                }
                match self.decode_sentence(sentence, cache) {
                    Ok((path, _)) => path,
                    Err(e) => {
                        log::warn!("decoding failed ({e}); emitting <unk>");
                        vec![UNK_ID; sentence.len()]
                    }
                }
            })
            .collect();
        Corpus::new(sentences, Side::Target)
    }
}

/// Decodes one sentence with freshly built preselection.
pub fn viterbi_decode(sentence: &[WordId], lex: &SparseLexicon, lm: &NGramLm, beams: Beams) -> Result<Vec<WordId>> {
    beams.validate()?;
    let input = Corpus::new(vec![sentence.to_vec()], Side::Source);
    let decoder = Decoder::new(lex, lm, beams, &input);
    Ok(decoder.decode_sentence(sentence, &mut SearchCache::default())?.0)
}
