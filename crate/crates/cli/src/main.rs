//! Command-line surface: train, generate, evaluate, probe, gradcheck,
//! synth.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure, 3 gradient
//! check over threshold.

mod config;

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};

use config::{Preset, RunConfig};
use superae::corpus::{self, Vocab};
use superae::decode::{self, DecodeOptions};
use superae::model::{checkpoint, ModelConfig, ModelParams};
use superae::numerics::check;
use superae::objective;
use superae::probe;
use superae::rouge::{self, Tokenization};
use superae::synth::{self, SynthConfig, SynthTask};
use superae::trainer;
use superae::{Real, Tensor};

const EXIT_USAGE: i32 = 1;
const EXIT_RUNTIME: i32 = 2;
const EXIT_GRADCHECK: i32 = 3;

#[derive(Parser)]
#[command(
    name = "superae",
    version,
    about = "Summarization lab: a seq2seq summarizer whose representation is supervised by a summary autoencoder"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a JSONL corpus of {"text", "summary"} records.
    Train(TrainArgs),
    /// Decode summaries for a JSONL corpus with a trained model.
    Generate(GenerateArgs),
    /// Score candidate summaries against references with ROUGE-1/2/L.
    Evaluate(EvaluateArgs),
    /// Freeze a trained encoder and fit a sentiment probe on it.
    Probe(ProbeArgs),
    /// Verify analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Emit a deterministic synthetic corpus.
    Synth(SynthArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Training corpus (JSON lines).
    #[arg(long)]
    data: PathBuf,
    /// Validation corpus; model selection uses greedy ROUGE-L on it.
    #[arg(long)]
    val: Option<PathBuf>,
    /// Output directory for model.ckpt, model.opt, vocab.txt,
    /// train_log.jsonl.
    #[arg(long)]
    out: PathBuf,
    /// Size preset: desk or paper.
    #[arg(long, default_value = "desk")]
    preset: String,
    /// Flat key = value config file layered over the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Supervision weight λ.
    #[arg(long)]
    lambda: Option<f64>,
    /// Disable the adversarial sub-steps.
    #[arg(long)]
    no_adversarial: bool,
    /// Train a plain seq2seq baseline (no autoencoder, no supervision).
    #[arg(long)]
    no_ae: bool,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Args)]
struct GenerateArgs {
    /// Directory written by `train` (model.ckpt + vocab.txt).
    #[arg(long)]
    model: PathBuf,
    /// Input corpus; only the "text" field is read.
    #[arg(long)]
    data: PathBuf,
    /// Output JSONL of {"text", "generated", "log_prob"}.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    beam_size: usize,
    /// Decode length cap; default is 1.5x the source length.
    #[arg(long)]
    max_len: Option<usize>,
    /// Never emit UNK.
    #[arg(long)]
    no_unk: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Candidate JSONL; the first present of generated/summary/text is
    /// scored.
    #[arg(long)]
    candidates: PathBuf,
    /// Reference JSONL, same field priority.
    #[arg(long)]
    references: PathBuf,
    /// Token unit: char or space.
    #[arg(long, default_value = "char")]
    tokens: String,
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long)]
    model: PathBuf,
    /// Labeled training JSONL: {"text", "summary", "label"}.
    #[arg(long)]
    train: PathBuf,
    /// Labeled held-out JSONL.
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 300)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Finite-difference step for the primitive checks. The composite
    /// full-loss check uses its own calibrated step.
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    /// Random points per primitive.
    #[arg(long, default_value_t = 100)]
    points: usize,
}

#[derive(Args)]
struct SynthArgs {
    /// Task: copy, extract-span, or sentiment.
    #[arg(long)]
    task: String,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Classes for the sentiment task.
    #[arg(long, default_value_t = 2)]
    classes: usize,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let outcome = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Generate(args) => cmd_generate(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Probe(args) => cmd_probe(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Synth(args) => cmd_synth(args),
    };
    match outcome {
        Ok(code) => std::process::exit(code),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            std::process::exit(EXIT_USAGE);
        }
        Err(Failure::Runtime(err)) => {
            eprintln!("error: {err:#}");
            std::process::exit(EXIT_RUNTIME);
        }
    }
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(err: anyhow::Error) -> Self {
        Failure::Runtime(err)
    }
}

impl From<superae::Error> for Failure {
    fn from(err: superae::Error) -> Self {
        Failure::Runtime(err.into())
    }
}

type Outcome = std::result::Result<i32, Failure>;

fn resolve_config(args: &TrainArgs) -> std::result::Result<RunConfig, Failure> {
    let preset: Preset = args.preset.parse().map_err(Failure::Usage)?;
    let mut cfg = RunConfig::preset_defaults(preset);
    if let Some(path) = &args.config {
        cfg.apply_file(path).map_err(Failure::Usage)?;
    }
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    if let Some(lambda) = args.lambda {
        if lambda < 0.0 {
            return Err(Failure::Usage("lambda must be >= 0".into()));
        }
        cfg.train.lambda = lambda;
    }
    if args.no_adversarial {
        cfg.train.adversarial_enabled = false;
    }
    if args.no_ae {
        cfg.train.ae_enabled = false;
    }
    if let Some(steps) = args.steps {
        cfg.train.max_steps = steps;
    }
    if let Some(bs) = args.batch_size {
        cfg.train.batch_size = bs;
    }
    Ok(cfg)
}

fn read_filtered_pairs(path: &Path, vocab: &Vocab, min_score: i32) -> Result<Vec<corpus::PairExample>> {
    let raw = corpus::read_pairs_jsonl(path)?;
    let encoded = corpus::encode_pairs(&raw, vocab);
    Ok(corpus::filter_by_score(encoded, min_score))
}

fn cmd_train(args: TrainArgs) -> Outcome {
    let cfg = resolve_config(&args)?;
    let raw_train = corpus::read_pairs_jsonl(&args.data)
        .with_context(|| format!("reading training data {}", args.data.display()))?;
    if raw_train.is_empty() {
        return Err(Failure::Runtime(anyhow!("{}: no records", args.data.display())));
    }

    let mut texts: Vec<&str> = Vec::with_capacity(2 * raw_train.len());
    for p in &raw_train {
        texts.push(&p.text);
        texts.push(&p.summary);
    }
    let vocab = Vocab::build(&texts, cfg.vocab_max)?;

    let mut train = corpus::filter_by_score(corpus::encode_pairs(&raw_train, &vocab), cfg.min_score);
    let mut val = match &args.val {
        Some(path) => read_filtered_pairs(path, &vocab, cfg.min_score)
            .with_context(|| format!("reading validation data {}", path.display()))?,
        None => Vec::new(),
    };
    corpus::truncate_pairs(&mut train, cfg.max_source_len, cfg.max_summary_len);
    corpus::truncate_pairs(&mut val, cfg.max_source_len, cfg.max_summary_len);

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    vocab.save(&args.out.join("vocab.txt"))?;

    let model_cfg = cfg.model_config(vocab.len());
    let report = trainer::fit::<Real>(&train, &val, &vocab, &model_cfg, &cfg.train, &args.out)?;

    println!("preset: {}", cfg.preset);
    println!("vocab: {} tokens", vocab.len());
    println!("pairs: {} train / {} val", train.len(), val.len());
    println!("steps: {}", report.steps);
    if let Some(score) = report.best_val_rouge_l {
        println!("best validation ROUGE-L F1: {score:.4}");
    }
    println!("checkpoint: {}", report.checkpoint.display());
    println!("log: {}", report.log.display());
    Ok(0)
}

fn load_model(dir: &Path) -> Result<(ModelConfig, ModelParams<Tensor<Real>>, Vocab)> {
    let ckpt = dir.join("model.ckpt");
    let (cfg, params) = checkpoint::load::<Real>(&ckpt)
        .with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
    let vocab_path = dir.join("vocab.txt");
    let vocab = Vocab::load(&vocab_path)
        .with_context(|| format!("loading vocabulary {}", vocab_path.display()))?;
    if vocab.len() != cfg.vocab_size {
        return Err(anyhow!(
            "vocabulary has {} tokens but the checkpoint was trained with {}",
            vocab.len(),
            cfg.vocab_size
        ));
    }
    Ok((cfg, params, vocab))
}

fn cmd_generate(args: GenerateArgs) -> Outcome {
    if args.beam_size < 1 {
        return Err(Failure::Usage("beam-size must be >= 1".into()));
    }
    let (model_cfg, params, vocab) = load_model(&args.model)?;
    let records = corpus::read_pairs_jsonl(&args.data)
        .with_context(|| format!("reading {}", args.data.display()))?;

    use std::io::Write;
    let file = std::fs::File::create(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let mut out = std::io::BufWriter::new(file);
    for rec in &records {
        let source = vocab.encode(&rec.text);
        if source.is_empty() {
            continue;
        }
        let max_len = args.max_len.unwrap_or_else(|| decode::default_max_len(source.len()));
        let opts = DecodeOptions {
            beam_size: args.beam_size,
            max_len,
            suppress_unk: args.no_unk,
        };
        let hyp = decode::beam_search(&source, &params, &model_cfg, &opts)?;
        let generated = vocab.decode(hyp.surface_tokens());
        let line = serde_json::json!({
            "text": rec.text,
            "generated": generated,
            "log_prob": hyp.log_prob,
        });
        writeln!(out, "{line}").with_context(|| format!("writing {}", args.out.display()))?;
    }
    out.flush().with_context(|| format!("writing {}", args.out.display()))?;
    println!("decoded {} records -> {}", records.len(), args.out.display());
    Ok(0)
}

/// Scored text of one JSONL record: generated, then summary, then text.
fn scored_field(line: &str, path: &Path, lineno: usize) -> Result<String> {
    let value: serde_json::Value = serde_json::from_str(line)
        .with_context(|| format!("{}:{}", path.display(), lineno))?;
    for key in ["generated", "summary", "text"] {
        if let Some(s) = value.get(key).and_then(|v| v.as_str()) {
            return Ok(s.to_string());
        }
    }
    Err(anyhow!("{}:{}: no generated/summary/text field", path.display(), lineno))
}

fn read_scored_texts(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).with_context(|| path.display().to_string())?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(scored_field(line, path, i + 1)?);
    }
    Ok(out)
}

fn cmd_evaluate(args: EvaluateArgs) -> Outcome {
    let mode = match args.tokens.as_str() {
        "char" => Tokenization::Char,
        "space" => Tokenization::Whitespace,
        other => return Err(Failure::Usage(format!("unknown token unit {other:?}; expected char or space"))),
    };
    let candidates = read_scored_texts(&args.candidates)?;
    let references = read_scored_texts(&args.references)?;
    if candidates.len() != references.len() {
        return Err(Failure::Runtime(anyhow!(
            "{} candidates vs {} references",
            candidates.len(),
            references.len()
        )));
    }
    let pairs: Vec<(Vec<String>, Vec<String>)> = candidates
        .iter()
        .zip(&references)
        .map(|(c, r)| (rouge::tokenize(c, mode), rouge::tokenize(r, mode)))
        .collect();
    let scores = rouge::corpus_rouge(&pairs)?;

    println!("metric        P       R      F1");
    for (name, s) in [
        ("ROUGE-1", scores.rouge_1),
        ("ROUGE-2", scores.rouge_2),
        ("ROUGE-L", scores.rouge_l),
    ] {
        println!("{name}  {:.4}  {:.4}  {:.4}", s.precision, s.recall, s.f1);
    }
    let json = serde_json::to_string(&scores).context("serializing scores")?;
    println!("{json}");
    Ok(0)
}

fn encode_labeled(
    records: &[probe::LabeledRecord],
    vocab: &Vocab,
    classes: usize,
) -> std::result::Result<Vec<(Vec<u32>, usize)>, Failure> {
    let mut out = Vec::with_capacity(records.len());
    for rec in records {
        if rec.label >= classes {
            return Err(Failure::Usage(format!(
                "label {} out of range for {classes} classes",
                rec.label
            )));
        }
        let ids = vocab.encode(&rec.text);
        if !ids.is_empty() {
            out.push((ids, rec.label));
        }
    }
    Ok(out)
}

fn cmd_probe(args: ProbeArgs) -> Outcome {
    if args.classes < 2 {
        return Err(Failure::Usage("classes must be >= 2".into()));
    }
    let (model_cfg, params, vocab) = load_model(&args.model)?;
    let train_recs = probe::read_labeled_jsonl(&args.train)?;
    let test_recs = probe::read_labeled_jsonl(&args.test)?;
    let train = encode_labeled(&train_recs, &vocab, args.classes)?;
    let test = encode_labeled(&test_recs, &vocab, args.classes)?;

    let cfg = probe::ProbeConfig { steps: args.steps, seed: args.seed, ..probe::ProbeConfig::default() };
    let clf = probe::train_probe(&params, &model_cfg, &train, args.classes, &cfg)?;
    let accuracy = probe::probe_accuracy(&clf, &params, &model_cfg, &test, args.classes)?;
    println!("probe examples: {} train / {} test", train.len(), test.len());
    println!("{}-class accuracy: {accuracy:.4}", args.classes);
    println!(
        "{}",
        serde_json::json!({ "classes": args.classes, "accuracy": accuracy })
    );
    Ok(0)
}

fn cmd_gradcheck(args: GradcheckArgs) -> Outcome {
    if args.eps.is_nan() || args.eps <= 0.0 {
        return Err(Failure::Usage("eps must be positive".into()));
    }
    let primitives = check::check_primitives(args.points, args.eps, 1234)?;
    let mut failed = false;
    let mut worst = 0.0f64;
    println!(
        "primitives (eps {:.0e}, {} points each, threshold 1e-6; the lstm_cell composite 1e-4):",
        args.eps, args.points
    );
    for p in &primitives {
        let ok = p.passed();
        failed |= !ok;
        worst = worst.max(p.max_rel_err);
        println!("  {:16} {:>12.3e}  {}", p.name, p.max_rel_err, if ok { "ok" } else { "FAIL" });
    }

    let composite = objective::check_total_loss_gradients(objective::COMPOSITE_FD_STEP)?;
    println!(
        "full loss on a 2-example batch (eps {:.0e}, threshold 1e-4):",
        objective::COMPOSITE_FD_STEP
    );
    for (name, err) in [
        ("total_main", composite.main),
        ("discriminator", composite.discriminator),
        ("generator", composite.generator),
    ] {
        let ok = err < 1e-4;
        failed |= !ok;
        worst = worst.max(err);
        println!("  {:16} {:>12.3e}  {}", name, err, if ok { "ok" } else { "FAIL" });
    }
    println!("max relative error: {worst:.3e}");
    Ok(if failed { EXIT_GRADCHECK } else { 0 })
}

fn cmd_synth(args: SynthArgs) -> Outcome {
    let task: SynthTask = args.task.parse().map_err(|e: superae::Error| Failure::Usage(e.to_string()))?;
    let mut cfg = SynthConfig::new(task, args.n, args.seed);
    cfg.classes = args.classes;
    let records = synth::generate(&cfg).map_err(|e| Failure::Usage(e.to_string()))?;
    synth::write_jsonl(&args.out, &records)?;
    println!("wrote {} {} records -> {}", records.len(), args.task, args.out.display());
    Ok(0)
}
