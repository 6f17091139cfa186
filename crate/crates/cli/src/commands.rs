//! Subcommand bodies. Data problems surface as plain errors (exit 2);
//! contradictory settings as `UsageError` (exit 1).

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use sparselex::corpus::{
    build_monotone_task, generate_synthetic_cipher, inject_ambiguity, random_key, read_alignments,
    read_tokenized, write_tokenized, SyntheticLanguage,
};
use sparselex::{
    cluster_exchange, token_accuracy, with_workers, BackoffModel, ClassInit,
    ClassInitConfig, ClassMap, ClusterConfig, Corpus, Decoder, Discount, NGramLm, Side, Smoothing,
    SparseLexicon, Vocabulary,
};

use crate::config::{InitSpec, RunConfig};
use crate::{
    BuildTaskArgs, ClusterArgs, DecodeArgs, EvaluateArgs, GenSyntheticArgs, InitClassArgs, InitKind,
    TrainArgs, TrainLmArgs, TrainOverrides, UsageError,
};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn read_text(path: &Path) -> Result<Vec<Vec<String>>> {
    read_tokenized(path).with_context(|| format!("reading {}", path.display()))
}

fn write_text<S: AsRef<str>>(path: &Path, sentences: &[Vec<S>]) -> Result<()> {
    write_tokenized(path, sentences).with_context(|| format!("writing {}", path.display()))
}

fn decode_corpus<'v>(vocab: &'v Vocabulary, corpus: &Corpus) -> Vec<Vec<&'v str>> {
    corpus.sentences.iter().map(|s| vocab.decode_sentence(s)).collect()
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn read_lm(path: &Path) -> Result<NGramLm> {
    NGramLm::read_arpa(path).with_context(|| format!("reading LM {}", path.display()))
}

fn word_list(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(str::trim).filter(|w| !w.is_empty()).map(str::to_string).collect())
}

/// Source vocabulary: the declared word list if given, else the words of
/// `text` by frequency; then any input words missing from the list, then
/// source words that only occur in the lexicon file so its rows can be read
/// without loss.
fn source_vocabulary(text: &[Vec<String>], declared: Option<&Path>, lexicon: Option<&Path>) -> Result<Vocabulary> {
    let observed = Vocabulary::build(text, 1).context("building source vocabulary")?;
    let mut words: Vec<(String, u64)> = Vec::new();
    if let Some(path) = declared {
        words.extend(word_list(path)?.into_iter().map(|w| (w, 0)));
    }
    words.extend(observed.regular_ids().map(|id| (observed.decode(id).to_string(), observed.count(id))));
    if let Some(path) = lexicon {
        let reader = BufReader::new(File::open(path).with_context(|| format!("reading {}", path.display()))?);
        for line in reader.lines() {
            if let Some(f) = line?.split('\t').nth(1) {
                words.push((f.to_string(), 0));
            }
        }
    }
    // duplicates keep their first position
    Ok(Vocabulary::from_words(words))
}

fn run_config(settings: &TrainOverrides, init: Option<&str>, checkpoint_every: Option<&str>) -> Result<RunConfig> {
    let mut config = match &settings.config {
        Some(path) => RunConfig::read(path)?,
        None => RunConfig::default(),
    };
    let flags = [
        ("iterations", &settings.iterations),
        ("tau", &settings.tau),
        ("lambda", &settings.lambda),
        ("backoff", &settings.backoff),
        ("histogram_beam", &settings.histogram_beam),
        ("lex_beam", &settings.lex_beam),
        ("lm_beam", &settings.lm_beam),
        ("convergence_rel_tol", &settings.convergence_rel_tol),
        ("workers", &settings.workers),
    ];
    for (key, value) in flags {
        if let Some(value) = value {
            config.set(key, value)?;
        }
    }
    if let Some(init) = init {
        config.set("init", init)?;
    }
    if let Some(k) = checkpoint_every {
        config.set("checkpoint_every", k)?;
    }
    config.train.validate().map_err(|e| usage(e.to_string()))?;
    Ok(config)
}

pub fn build_task(a: BuildTaskArgs) -> Result<()> {
    if !(a.split > 0.0 && a.split < 1.0) {
        return Err(usage(format!("--split {} not in (0,1)", a.split)));
    }
    if a.min_count == 0 {
        return Err(usage("--min-count must be at least 1"));
    }
    let src = read_text(&a.src)?;
    let tgt = read_text(&a.tgt)?;
    let align = read_alignments(&a.align).with_context(|| format!("reading {}", a.align.display()))?;
    let text = build_monotone_task(&src, &tgt, &align, a.split)?;
    let (task, src_vocab, tgt_vocab) = text.encode(a.min_count)?;
    task.check_parallel()?;
    create_dir(&a.out_dir)?;
    write_text(&a.out_dir.join("input.txt"), &decode_corpus(&src_vocab, &task.source_input))?;
    write_text(&a.out_dir.join("reference.txt"), &decode_corpus(&tgt_vocab, &task.reference))?;
    write_text(&a.out_dir.join("lm.txt"), &decode_corpus(&tgt_vocab, &task.lm_text))?;
    log::info!(
        "{} input sentences ({} tokens), {} LM sentences",
        task.source_input.len(),
        task.source_input.num_tokens(),
        task.lm_text.len()
    );
    Ok(())
}

pub fn train_lm(a: TrainLmArgs) -> Result<()> {
    if a.order == 0 {
        return Err(usage("--order must be at least 1"));
    }
    if a.min_count == 0 {
        return Err(usage("--min-count must be at least 1"));
    }
    let discount = match a.discount {
        None => Discount::Estimate,
        Some(d) if d.len() == 1 || d.len() == a.order => Discount::Fixed(d),
        Some(d) => return Err(usage(format!("{} discounts given for order {}", d.len(), a.order))),
    };
    let text = read_text(&a.text)?;
    let vocab = Vocabulary::build(&text, a.min_count)?;
    let corpus = vocab.encode_sentences(&text, Side::Target);
    let lm = NGramLm::train(&corpus, &vocab, a.order, &discount)?;
    lm.write_arpa(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    log::info!("n-gram counts {:?}", lm.counts());
    Ok(())
}

pub fn cluster(a: ClusterArgs) -> Result<()> {
    if a.classes == 0 {
        return Err(usage("--classes must be at least 1"));
    }
    if a.min_count == 0 {
        return Err(usage("--min-count must be at least 1"));
    }
    let text = read_text(&a.text)?;
    let vocab = Vocabulary::build(&text, a.min_count)?;
    let corpus = vocab.encode_sentences(&text, Side::Target);
    let config = ClusterConfig {
        classes: a.classes,
        max_sweeps: a.sweeps,
        seed: a.seed,
        init: match a.init {
            InitKind::Frequency => ClassInit::FrequencyModulo,
            InitKind::Random => ClassInit::Random,
        },
    };
    let clustering = cluster_exchange(&corpus, vocab.len(), &config)?;
    log::info!("objective trace {:?}", clustering.objective_trace);
    clustering.map.write_tsv(&vocab, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}

pub fn init_class_lexicon(a: InitClassArgs) -> Result<()> {
    if a.iterations == 0 {
        return Err(usage("--iterations must be at least 1"));
    }
    if a.class_lm_order == 0 {
        return Err(usage("--class-lm-order must be at least 1"));
    }
    if a.min_count == 0 {
        return Err(usage("--min-count must be at least 1"));
    }
    if !(0.0..1.0).contains(&a.tau) {
        return Err(usage(format!("--tau {} not in [0,1)", a.tau)));
    }
    let input_text = read_text(&a.input)?;
    let lm_text = read_text(&a.lm_text)?;
    let src_vocab = Vocabulary::build(&input_text, 1)?;
    let tgt_vocab = Vocabulary::build(&lm_text, a.min_count)?;
    let input = src_vocab.encode_sentences(&input_text, Side::Source);
    let target = tgt_vocab.encode_sentences(&lm_text, Side::Target);
    let src_classes = ClassMap::read_tsv(&src_vocab, Side::Source, &a.classes_src)
        .with_context(|| format!("reading {}", a.classes_src.display()))?;
    let tgt_classes = ClassMap::read_tsv(&tgt_vocab, Side::Target, &a.classes_tgt)
        .with_context(|| format!("reading {}", a.classes_tgt.display()))?;
    let config = ClassInitConfig {
        lm_order: a.class_lm_order,
        discount: Discount::Estimate,
        iterations: a.iterations,
        tau: a.tau,
        workers: a.workers,
    };
    let (word_lex, class_lex) = sparselex::init_class_lexicon(
        &input,
        &src_classes,
        &target,
        &tgt_classes,
        &config,
        Smoothing::none(src_vocab.len()),
    )?;
    word_lex.write_tsv(&src_vocab, &tgt_vocab, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(path) = &a.class_out {
        let class_vocab = tgt_classes.class_vocabulary();
        let src_class_vocab = src_classes.class_vocabulary();
        class_lex
            .write_tsv(&src_class_vocab, &class_vocab, path)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    log::info!("initial lexicon: active fraction {:.6}", word_lex.active_fraction());
    Ok(())
}

fn checkpoint_path(out: &Path, iteration: usize) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(format!(".iter{iteration}"));
    PathBuf::from(name)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let config = run_config(&a.settings, a.init.as_deref(), a.checkpoint_every.as_deref())?;
    let lm = read_lm(&a.lm)?;
    let tgt_vocab = lm.vocab().clone();
    let input_text = read_text(&a.input)?;
    let init_file = match &config.init {
        InitSpec::File(path) => Some(path.as_path()),
        InitSpec::Uniform => None,
    };
    let src_vocab = source_vocabulary(&input_text, a.src_vocab.as_deref(), init_file)?;
    let input = src_vocab.encode_sentences(&input_text, Side::Source);
    let reference = match &a.reference {
        Some(path) => Some(tgt_vocab.encode_sentences(&read_text(path)?, Side::Target)),
        None => None,
    };
    let (n_src, n_tgt) = (src_vocab.len(), tgt_vocab.len());
    let tau = config.train.tau;
    let init = match init_file {
        Some(path) => SparseLexicon::read_tsv(&src_vocab, &tgt_vocab, tau, Smoothing::none(n_src), path)
            .with_context(|| format!("reading lexicon {}", path.display()))?,
        None => SparseLexicon::init_uniform(n_src, n_tgt, tau, Smoothing::none(n_src))?,
    };

    if config.train.iterations == 0 {
        // nothing to train: a file init is passed through byte for byte
        match init_file {
            Some(path) => {
                fs::copy(path, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
            }
            None => init.write_tsv(&src_vocab, &tgt_vocab, &a.out)?,
        }
        if let Some(path) = &a.stats {
            fs::write(path, sparselex::TrainStats::default().to_tsv())?;
        }
        return Ok(());
    }

    let out = a.out.clone();
    let mut observer = |stats: &sparselex::IterationStats, lex: &SparseLexicon| -> sparselex::Result<()> {
        if let Some(k) = config.checkpoint_every {
            if stats.iteration % k == 0 {
                lex.write_tsv(&src_vocab, &tgt_vocab, checkpoint_path(&out, stats.iteration))?;
            }
        }
        Ok(())
    };
    let (lex, stats) = sparselex::train_with(&input, &lm, &config.train, init, reference.as_ref(), &mut observer)?;
    lex.write_tsv(&src_vocab, &tgt_vocab, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(path) = &a.stats {
        fs::write(path, stats.to_tsv()).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

pub fn decode(a: DecodeArgs) -> Result<()> {
    let config = run_config(&a.settings, None, None)?;
    let lm = read_lm(&a.lm)?;
    let tgt_vocab = lm.vocab();
    let input_text = read_text(&a.input)?;
    let src_vocab = source_vocabulary(&input_text, a.src_vocab.as_deref(), Some(&a.lexicon))?;
    let input = src_vocab.encode_sentences(&input_text, Side::Source);
    let n_src = src_vocab.len();
    let backoff = BackoffModel::estimate(config.train.backoff, &input, n_src)?;
    let smoothing = Smoothing::new(config.train.lambda, backoff).map_err(|e| usage(e.to_string()))?;
    let lex = SparseLexicon::read_tsv(&src_vocab, tgt_vocab, 0.0, smoothing, &a.lexicon)
        .with_context(|| format!("reading lexicon {}", a.lexicon.display()))?;
    let beams = config.train.beams;
    let hyp = with_workers(config.train.workers, || Decoder::new(&lex, &lm, beams, &input).decode_corpus(&input))?;
    let hyp = decode_corpus(tgt_vocab, &hyp);
    match &a.out {
        Some(path) => write_text(path, &hyp)?,
        None => {
            let mut out = BufWriter::new(io::stdout().lock());
            for s in &hyp {
                writeln!(out, "{}", s.join(" "))?;
            }
            out.flush()?;
        }
    }
    Ok(())
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let hyp = read_text(&a.hyp)?;
    let reference = read_text(&a.reference)?;
    // one vocabulary over both files, so distinct words never collapse
    let vocab = Vocabulary::from_words(hyp.iter().chain(&reference).flatten().map(|w| (w.as_str(), 0)));
    let accuracy = token_accuracy(
        &vocab.encode_sentences(&hyp, Side::Target),
        &vocab.encode_sentences(&reference, Side::Target),
    )?;
    println!("{accuracy}");
    Ok(())
}

pub fn gen_synthetic(a: GenSyntheticArgs) -> Result<()> {
    if a.types == 0 || a.branching == 0 {
        return Err(usage("--types and --branching must be at least 1"));
    }
    if a.mean_len < 1.0 {
        return Err(usage("--mean-len must be at least 1"));
    }
    if !(0.0..=1.0).contains(&a.noise) {
        return Err(usage(format!("--noise {} not in [0,1]", a.noise)));
    }
    if a.input_tokens == 0 || a.lm_tokens == 0 {
        return Err(usage("token counts must be positive"));
    }
    let lang = SyntheticLanguage::new(a.types, a.branching, a.mean_len, a.lang_seed);
    let tgt_vocab = lang.vocabulary();
    let src_vocab = lang.source_vocabulary();
    let key = random_key(tgt_vocab.len(), a.key_seed);
    // the sample is split in half: the first half is enciphered
    let text = lang.sample(2 * a.input_tokens, a.sample_seed);
    let mut task = generate_synthetic_cipher(&text, &key)?;
    if a.noise > 0.0 {
        task = inject_ambiguity(&task, &key, a.noise, a.key_seed + 2)?;
    }
    let lm_text = lang.sample(a.lm_tokens, a.sample_seed + 1);
    create_dir(&a.out_dir)?;
    write_text(&a.out_dir.join("input.txt"), &decode_corpus(&src_vocab, &task.source_input))?;
    write_text(&a.out_dir.join("reference.txt"), &decode_corpus(&tgt_vocab, &task.reference))?;
    write_text(&a.out_dir.join("lm.txt"), &decode_corpus(&tgt_vocab, &lm_text))?;
    let mut key_out = BufWriter::new(File::create(a.out_dir.join("key.tsv"))?);
    for id in tgt_vocab.regular_ids() {
        writeln!(key_out, "{}\t{}", tgt_vocab.decode(id), src_vocab.decode(key[id as usize]))?;
    }
    key_out.flush()?;
    let src_words: Vec<Vec<&str>> = src_vocab.regular_ids().map(|id| vec![src_vocab.decode(id)]).collect();
    write_text(&a.out_dir.join("src_vocab.txt"), &src_words)?;
    Ok(())
}
