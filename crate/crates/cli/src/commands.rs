use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use unipunc_core::acoustic::{load_features, AcousticInput};
use unipunc_core::bootstrapper;
use unipunc_core::data::{corpus_stats, read_corpus, render, samples_from_records, RawRecord, Sample};
use unipunc_core::lexical::{tokens_from_words, Vocabulary};
use unipunc_core::train::{evaluate, load_checkpoint, Trainer, BEST_CHECKPOINT, LAST_CHECKPOINT, METRICS_LOG};
use unipunc_core::{Error, UniPunc};

use crate::config::{check_model, require_file, ModelOverrides, TrainOverrides};
use crate::error::CliError;

pub const VOCAB_FILE: &str = "vocab.txt";

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training corpus (JSON lines)
    #[arg(long)]
    pub corpus: PathBuf,
    /// Evaluation corpus; defaults to the training corpus
    #[arg(long)]
    pub eval: Option<PathBuf>,
    /// Directory feature paths are resolved against; defaults to each corpus's directory
    #[arg(long)]
    pub features_root: Option<PathBuf>,
    /// Existing vocabulary to use instead of building one from the corpus
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Output directory for the vocabulary, checkpoints and metric log
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Print the final metric record as JSON
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub features_root: Option<PathBuf>,
    /// Defaults to vocab.txt next to the checkpoint
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Also write the report as JSON to this file
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Add the macro average to the table
    #[arg(long = "macro")]
    pub macro_avg: bool,
    /// Config whose model section must agree with the checkpoint
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelOverrides,
}

#[derive(Args, Debug)]
pub struct PunctuateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Defaults to vocab.txt next to the checkpoint
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Lines of `text` or `text<TAB>features.upft`; defaults to stdin
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Directory feature paths are resolved against; defaults to the current directory
    #[arg(long)]
    pub features_root: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub features_root: Option<PathBuf>,
    /// Also write the statistics as JSON to this file
    #[arg(long)]
    pub json: Option<PathBuf>,
}

fn feature_root(explicit: &Option<PathBuf>, corpus: &Path) -> PathBuf {
    explicit
        .clone()
        .unwrap_or_else(|| corpus.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf))
}

fn vocab_path(explicit: &Option<PathBuf>, checkpoint: &Path) -> PathBuf {
    explicit
        .clone()
        .unwrap_or_else(|| checkpoint.parent().unwrap_or(Path::new(".")).join(VOCAB_FILE))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text + "\n").map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn load_samples(path: &Path, records: Vec<RawRecord>, vocab: &Vocabulary, root: &Path) -> Result<Vec<Sample>, CliError> {
    let samples = samples_from_records(path, records, vocab, root)?;
    if samples.is_empty() {
        return Err(CliError::Usage(format!("corpus is empty: {}", path.display())));
    }
    Ok(samples)
}

pub fn train(args: TrainArgs) -> Result<(), CliError> {
    require_file(&args.corpus, "training corpus")?;
    for (path, what) in [(&args.eval, "evaluation corpus"), (&args.vocab, "vocabulary")] {
        if let Some(p) = path {
            require_file(p, what)?;
        }
    }
    let mut cfg = args.overrides.resolve(args.seed)?;

    let train_records = read_corpus(&args.corpus)?;
    let vocab = match &args.vocab {
        Some(p) => Vocabulary::load(p)?,
        None => Vocabulary::build(train_records.iter().map(|r| &r.words), 1)?,
    };
    cfg.model.vocab_size = vocab.len();
    let train = load_samples(
        &args.corpus,
        train_records,
        &vocab,
        &feature_root(&args.features_root, &args.corpus),
    )?;
    let eval = match &args.eval {
        Some(p) => Some(load_samples(p, read_corpus(p)?, &vocab, &feature_root(&args.features_root, p))?),
        None => None,
    };
    let eval = eval.as_deref().unwrap_or(&train);

    fs::create_dir_all(&args.out).map_err(|e| Error::Io {
        path: args.out.clone(),
        source: e,
    })?;
    vocab.save(args.out.join(VOCAB_FILE))?;
    let mut trainer = Trainer::new(cfg)?;
    eprintln!(
        "training on {} samples ({} with audio), {} parameters",
        train.len(),
        train.iter().filter(|s| s.has_audio()).count(),
        trainer.params.num_scalars()
    );
    let outcome = trainer.run(&train, Some(eval), Some(&args.out))?;
    if let Some(last) = outcome.records.last() {
        if args.json {
            println!("{}", serde_json::to_string(last).expect("serializable"));
        } else {
            let f1 = last.overall_f1.map_or_else(|| "n/a".into(), |f| format!("{f:.4}"));
            println!("step {} loss {:.4} overall F1 {f1}", last.step, last.loss);
        }
    }
    eprintln!(
        "wrote {}, {}, {} and {} to {}",
        VOCAB_FILE,
        METRICS_LOG,
        BEST_CHECKPOINT,
        LAST_CHECKPOINT,
        args.out.display()
    );
    Ok(())
}

fn load_model(checkpoint: &Path, vocab: &Option<PathBuf>) -> Result<(UniPunc, unipunc_core::ParamStore, Vocabulary, usize), CliError> {
    require_file(checkpoint, "checkpoint")?;
    let vocab_path = vocab_path(vocab, checkpoint);
    require_file(&vocab_path, "vocabulary")?;
    let ckpt = load_checkpoint(checkpoint)?;
    let vocab = Vocabulary::load(&vocab_path)?;
    if vocab.len() != ckpt.config.model.vocab_size {
        return Err(Error::ConfigMismatch(format!(
            "vocabulary {} has {} entries, checkpoint expects {}",
            vocab_path.display(),
            vocab.len(),
            ckpt.config.model.vocab_size
        ))
        .into());
    }
    let batch_size = ckpt.config.batch_size;
    let model = UniPunc::new(ckpt.config.model)?;
    let mut params = model.init_params(0);
    params.copy_values_from(&ckpt.params)?;
    Ok((model, params, vocab, batch_size))
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    require_file(&args.corpus, "corpus")?;
    require_file(&args.checkpoint, "checkpoint")?;
    let trained = load_checkpoint(&args.checkpoint)?.config.model;
    check_model(&trained, args.config.as_deref(), &args.model)?;
    let (model, params, vocab, batch_size) = load_model(&args.checkpoint, &args.vocab)?;
    let samples = load_samples(
        &args.corpus,
        read_corpus(&args.corpus)?,
        &vocab,
        &feature_root(&args.features_root, &args.corpus),
    )?;
    let report = evaluate(&model, &params, &samples, batch_size)?;
    let mut table = String::new();
    report.write_table(&mut table, args.macro_avg).expect("writing to a string");
    println!("{table}");
    if let Some(path) = &args.json {
        write_json(path, &report)?;
    }
    Ok(())
}

pub fn punctuate(args: PunctuateArgs) -> Result<(), CliError> {
    if let Some(p) = &args.input {
        require_file(p, "input")?;
    }
    let (model, params, vocab, _) = load_model(&args.checkpoint, &args.vocab)?;
    let root = args.features_root.clone().unwrap_or_else(|| PathBuf::from("."));
    let reader: Box<dyn BufRead> = match &args.input {
        Some(p) => Box::new(io::BufReader::new(fs::File::open(p).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        })?)),
        None => Box::new(io::stdin().lock()),
    };
    let mut out = io::stdout().lock();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Io {
            path: args.input.clone().unwrap_or_else(|| "<stdin>".into()),
            source: e,
        })?;
        let (text, features) = match line.split_once('\t') {
            Some((t, f)) => (t, Some(f.trim())),
            None => (line.as_str(), None),
        };
        let words: Vec<&str> = text.split_whitespace().collect();
        if words.is_empty() {
            eprintln!("warning: line {} is empty, skipped", i + 1);
            continue;
        }
        let features = features
            .filter(|f| !f.is_empty())
            .map(|f| load_features(root.join(f)))
            .transpose()?;
        let input = features.as_ref().map_or(AcousticInput::Missing, AcousticInput::Audio);
        let tokens = tokens_from_words(words.iter().map(|w| w.to_lowercase()).collect(), &vocab);
        let logits = model.logits(&params, &tokens.ids, input)?;
        let labels = bootstrapper::predict(&logits);
        writeln!(out, "{}", render(&words, &labels)).map_err(|e| Error::Io {
            path: "<stdout>".into(),
            source: e,
        })?;
    }
    Ok(())
}

pub fn stats(args: StatsArgs) -> Result<(), CliError> {
    require_file(&args.corpus, "corpus")?;
    let records = read_corpus(&args.corpus)?;
    let vocab = Vocabulary::build(records.iter().map(|r| &r.words), 1)?;
    let samples = samples_from_records(&args.corpus, records, &vocab, &feature_root(&args.features_root, &args.corpus))?;
    let stats = corpus_stats(&samples);
    println!("{stats}");
    if let Some(path) = &args.json {
        write_json(path, &stats)?;
    }
    Ok(())
}
