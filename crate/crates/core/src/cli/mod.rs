//! Command-line entry point.
//!
//! Subcommands: `gen-data`, `validate`, `train`, `eval`, `grad-check`,
//! `dump-losses`, `dump-embeddings`. Exit codes: 0 success, 2
//! configuration/usage, 3 I/O, 4 numeric failure.
//!
//! Configuration precedence is defaults < `--config` TOML file < flags;
//! the resolved snapshot lands in the run manifest next to the outputs.

mod manifest;

pub use manifest::{sha256_hex, RunManifest};

use crate::corpus::{self, Corpus, CorpusError, GeneratorSpec, Lexicon};
use crate::encoder::{self, load_checkpoint, save_checkpoint, Pooling};
use crate::labels::LabelSpace;
use crate::losses::{gradcheck, LossError, Term};
use crate::numerics::NumericsError;
use crate::train::{
    self, build_vocab, evaluate, fit, AblationMode, EpochMetrics, SwitchConfig, TrainConfig,
    TrainCtx, TrainError, TrainState,
};
use clap::{Args, Parser, Subcommand};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug)]
enum CliError {
    Config(String),
    Io(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) | CliError::Io(m) | CliError::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Config(_) => CliError::Config(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(m) => CliError::Config(m),
            TrainError::Corpus(c) => c.into(),
            TrainError::Loss(l) => l.into(),
            TrainError::Numerics(n) => CliError::Numeric(n.to_string()),
        }
    }
}

impl From<LossError> for CliError {
    fn from(e: LossError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<NumericsError> for CliError {
    fn from(e: NumericsError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<encoder::CheckpointError> for CliError {
    fn from(e: encoder::CheckpointError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<crate::labels::LabelError> for CliError {
    fn from(e: crate::labels::LabelError) -> Self {
        CliError::Io(e.to_string())
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "xslu",
    version,
    about = "Cross-lingual SLU lab: contrastive training over sample queues on synthetic multilingual corpora"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic multilingual corpus set
    GenData(GenDataArgs),
    /// Check corpus/lexicon/label files against their invariants
    Validate(ValidateArgs),
    /// Train a model and write checkpoint, curves, metrics, and manifest
    Train(TrainArgs),
    /// Evaluate a checkpoint on a corpus
    Eval(EvalArgs),
    /// Verify analytic gradients of every loss term by finite differences
    GradCheck(GradCheckArgs),
    /// Print the loss breakdown for one batch as JSON
    DumpLosses(DumpLossesArgs),
    /// Write sentence embeddings with labels and view cosines as TSV
    DumpEmbeddings(DumpEmbeddingsArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Output directory (created if missing)
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    intents: usize,
    /// Number of non-O slot kinds (each expands to B-/I- labels)
    #[arg(long, default_value_t = 5)]
    slots: usize,
    #[arg(long, default_value_t = 8)]
    templates: usize,
    /// Training utterances in the source language
    #[arg(long, default_value_t = 400)]
    train: usize,
    /// Test utterances per target language
    #[arg(long, default_value_t = 100)]
    test: usize,
    /// Vocabulary size per language
    #[arg(long, default_value_t = 60)]
    vocab: usize,
    #[arg(long, default_value = "en")]
    source_lang: String,
    /// Comma-separated target languages
    #[arg(long, default_value = "de", value_delimiter = ',')]
    target_langs: Vec<String>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    lexicon: Option<PathBuf>,
}

/// Flag-level overrides shared by `train` and `dump-losses`; every field
/// defaults to "leave the resolved config alone".
#[derive(Args, Clone)]
struct OverrideArgs {
    /// TOML config file applied between defaults and flags
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Sample queue capacity K
    #[arg(long)]
    queue_size: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    tau_prime: Option<f64>,
    /// Word-level code-switch probability
    #[arg(long)]
    p_switch: Option<f64>,
    #[arg(long)]
    lambda_i: Option<f64>,
    #[arg(long)]
    lambda_s: Option<f64>,
    #[arg(long)]
    lambda_un_i: Option<f64>,
    #[arg(long)]
    lambda_un_s: Option<f64>,
    #[arg(long)]
    lambda_un_gis: Option<f64>,
    #[arg(long)]
    beta_i: Option<f64>,
    #[arg(long)]
    beta_s: Option<f64>,
    #[arg(long)]
    beta_j: Option<f64>,
    #[arg(long)]
    gamma1: Option<f64>,
    #[arg(long)]
    gamma2: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    /// sgd or adam
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    ablation: Option<AblationMode>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    /// mean or attention
    #[arg(long)]
    pooling: Option<String>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Restrict token-level unsupervised positives to aligned positions
    #[arg(long)]
    strict_pairing: Option<bool>,
    /// Include O-labeled words as token-level anchors
    #[arg(long)]
    include_o_anchors: Option<bool>,
    /// Comma-separated code-switch target languages (default: all lexicon languages)
    #[arg(long, value_delimiter = ',')]
    target_langs: Option<Vec<String>>,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory holding train.jsonl, labels.json, lexicon.json, test.<lang>.jsonl
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    overrides: OverrideArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Write metrics JSON here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradCheckArgs {
    /// Micro-instances per term
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Restrict to one term by name (e.g. L_slscl_Joint)
    #[arg(long)]
    term: Option<String>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    tau_prime: Option<f64>,
}

#[derive(Args)]
struct DumpLossesArgs {
    #[arg(long)]
    data_dir: PathBuf,
    /// Start from this checkpoint instead of seeded initialization
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Training steps to run before the probed batch (fills the queues)
    #[arg(long, default_value_t = 1)]
    warmup_batches: usize,
    #[command(flatten)]
    overrides: OverrideArgs,
}

#[derive(Args)]
struct DumpEmbeddingsArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    lexicon: PathBuf,
    /// Code-switch probability for the paired view
    #[arg(long, default_value_t = 0.5)]
    p_switch: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Write TSV here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parse argv and run; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::GenData(args) => cmd_gen_data(args),
        Command::Validate(args) => cmd_validate(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::GradCheck(args) => cmd_grad_check(args),
        Command::DumpLosses(args) => cmd_dump_losses(args),
        Command::DumpEmbeddings(args) => cmd_dump_embeddings(args),
    }
}

// ---------------------------------------------------------------- gen-data

fn cmd_gen_data(args: GenDataArgs) -> CliResult<()> {
    let spec = GeneratorSpec {
        intents: args.intents,
        slot_kinds: args.slots,
        templates: args.templates,
        train_size: args.train,
        test_size: args.test,
        vocab_per_lang: args.vocab,
        source_lang: args.source_lang,
        target_langs: args.target_langs,
    };
    let data = corpus::generate_synthetic(&spec, args.seed)?;
    std::fs::create_dir_all(&args.out_dir).map_err(|e| io_err(&args.out_dir, e))?;
    let dir = &args.out_dir;
    corpus::save_corpus(&data.train, &dir.join("train.jsonl"))?;
    for (lang, test) in &data.tests {
        corpus::save_corpus(test, &dir.join(format!("test.{lang}.jsonl")))?;
    }
    data.lexicon.save(&dir.join("lexicon.json"))?;
    data.space().save(&dir.join("labels.json"))?;
    println!(
        "wrote {} train + {} test utterances per language to {}",
        data.train.examples.len(),
        spec.test_size,
        dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------- validate

fn cmd_validate(args: ValidateArgs) -> CliResult<()> {
    let space = LabelSpace::load(&args.labels)?;
    let corpus = corpus::load_corpus(&args.corpus, &space)?;
    if let Some(lex_path) = &args.lexicon {
        Lexicon::load(lex_path)?;
    }
    println!(
        "ok: {} utterances, {} intents, {} slot labels",
        corpus.examples.len(),
        space.num_intents(),
        space.num_slots()
    );
    Ok(())
}

// ------------------------------------------------------------------ shared

struct DataSet {
    space: LabelSpace,
    train: Corpus,
    tests: Vec<(String, Corpus)>,
    lexicon: Lexicon,
    paths: BTreeMap<String, PathBuf>,
}

fn load_data_dir(dir: &Path) -> CliResult<DataSet> {
    let labels_path = dir.join("labels.json");
    let train_path = dir.join("train.jsonl");
    let lexicon_path = dir.join("lexicon.json");
    let space = LabelSpace::load(&labels_path)?;
    let train = corpus::load_corpus(&train_path, &space)?;
    let lexicon = Lexicon::load(&lexicon_path)?;
    let mut tests = Vec::new();
    let mut paths = BTreeMap::new();
    paths.insert("labels".to_string(), labels_path);
    paths.insert("train".to_string(), train_path);
    paths.insert("lexicon".to_string(), lexicon_path);
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for path in entries {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if let Some(lang) = name
            .strip_prefix("test.")
            .and_then(|n| n.strip_suffix(".jsonl"))
        {
            tests.push((lang.to_string(), corpus::load_corpus(&path, &space)?));
            paths.insert(format!("test.{lang}"), path);
        }
    }
    if tests.is_empty() {
        return Err(CliError::Io(format!(
            "no test.<lang>.jsonl corpora found in {}",
            dir.display()
        )));
    }
    Ok(DataSet {
        space,
        train,
        tests,
        lexicon,
        paths,
    })
}

fn resolve_config(overrides: &OverrideArgs, lexicon: &Lexicon) -> CliResult<TrainConfig> {
    let mut config = match &overrides.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            toml::from_str::<TrainConfig>(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => TrainConfig::default(),
    };
    let o = overrides;
    macro_rules! apply {
        ($($field:expr => $opt:expr;)*) => {
            $(if let Some(v) = $opt.clone() { $field = v; })*
        };
    }
    apply! {
        config.seed => o.seed;
        config.epochs => o.epochs;
        config.batch_size => o.batch_size;
        config.queue_capacity => o.queue_size;
        config.cl.tau => o.tau;
        config.cl.tau_prime => o.tau_prime;
        config.cl.strict_pairing => o.strict_pairing;
        config.cl.include_o_anchors => o.include_o_anchors;
        config.switch.p => o.p_switch;
        config.weights.lambda_i => o.lambda_i;
        config.weights.lambda_s => o.lambda_s;
        config.weights.lambda_un_i => o.lambda_un_i;
        config.weights.lambda_un_s => o.lambda_un_s;
        config.weights.lambda_un_gis => o.lambda_un_gis;
        config.weights.beta_i => o.beta_i;
        config.weights.beta_s => o.beta_s;
        config.weights.beta_j => o.beta_j;
        config.weights.gamma1 => o.gamma1;
        config.weights.gamma2 => o.gamma2;
        config.ablation => o.ablation;
        config.encoder.dim => o.dim;
        config.encoder.hidden => o.hidden;
        config.encoder.dropout => o.dropout;
        config.switch.target_langs => o.target_langs;
    }
    if let Some(p) = &o.pooling {
        config.encoder.pooling = match p.as_str() {
            "mean" => Pooling::Mean,
            "attention" => Pooling::Attention,
            other => {
                return Err(CliError::Config(format!(
                    "unknown pooling {other:?}; expected mean or attention"
                )))
            }
        };
    }
    if let Some(kind) = &o.optimizer {
        config.optimizer = match kind.as_str() {
            "sgd" => train::OptimizerKind::Sgd {
                lr: o.lr.unwrap_or(config.optimizer.lr()),
            },
            "adam" => {
                let mut def = train::OptimizerKind::default();
                if let train::OptimizerKind::Adam { lr, .. } = &mut def {
                    *lr = o.lr.unwrap_or(config.optimizer.lr());
                }
                def
            }
            other => {
                return Err(CliError::Config(format!(
                    "unknown optimizer {other:?}; expected sgd or adam"
                )))
            }
        };
    } else if let Some(lr) = o.lr {
        config.optimizer = match config.optimizer {
            train::OptimizerKind::Sgd { .. } => train::OptimizerKind::Sgd { lr },
            train::OptimizerKind::Adam {
                beta1, beta2, eps, ..
            } => train::OptimizerKind::Adam {
                lr,
                beta1,
                beta2,
                eps,
            },
        };
    }
    if config.switch.target_langs.is_empty() {
        let mut langs: Vec<String> = lexicon
            .entries
            .values()
            .flat_map(|m| m.keys().cloned())
            .collect();
        langs.sort();
        langs.dedup();
        config.switch.target_langs = langs;
    }
    config.validate().map_err(CliError::Config)?;
    Ok(config)
}

// ------------------------------------------------------------------- train

fn metrics_json(history: &[EpochMetrics], best_epoch: usize) -> serde_json::Value {
    let epochs: Vec<serde_json::Value> = history
        .iter()
        .map(|em| {
            let per_lang: BTreeMap<&str, serde_json::Value> = em
                .per_lang
                .iter()
                .map(|(lang, m)| {
                    (
                        lang.as_str(),
                        serde_json::json!({
                            "intent_accuracy": m.intent_accuracy,
                            "slot_f1": m.slot_f1,
                            "overall_accuracy": m.overall_accuracy,
                        }),
                    )
                })
                .collect();
            serde_json::json!({
                "epoch": em.epoch,
                "per_lang": per_lang,
                "mean_overall": em.mean_overall,
            })
        })
        .collect();
    serde_json::json!({
        "best_epoch": best_epoch,
        "epochs": epochs,
    })
}

fn curves_csv(curves: &[train::EpochCurve]) -> String {
    let mut out = String::from("epoch");
    for t in Term::ALL {
        write!(out, ",{}", t.name()).unwrap();
    }
    out.push_str(",total\n");
    for c in curves {
        write!(out, "{}", c.epoch).unwrap();
        for v in c.terms {
            write!(out, ",{v}").unwrap();
        }
        writeln!(out, ",{}", c.total).unwrap();
    }
    out
}

fn cmd_train(args: TrainArgs) -> CliResult<()> {
    let data = load_data_dir(&args.data_dir)?;
    let config = resolve_config(&args.overrides, &data.lexicon)?;
    let vocab = build_vocab(&data.train, &data.lexicon);

    let result = fit(&config, &data.train, &data.tests, &data.lexicon, &vocab)?;

    std::fs::create_dir_all(&args.out_dir).map_err(|e| io_err(&args.out_dir, e))?;
    let ckpt_path = args.out_dir.join("checkpoint.json");
    let curves_path = args.out_dir.join("curves.csv");
    let metrics_path = args.out_dir.join("metrics.json");
    let manifest_path = args.out_dir.join("run_manifest.json");

    save_checkpoint(
        &ckpt_path,
        &config.encoder,
        &data.space,
        &vocab,
        &result.best_params,
    )?;
    std::fs::write(&curves_path, curves_csv(&result.curves))
        .map_err(|e| io_err(&curves_path, e))?;
    let metrics = metrics_json(&result.history, result.best_epoch);
    std::fs::write(
        &metrics_path,
        format!("{}\n", serde_json::to_string_pretty(&metrics).unwrap()),
    )
    .map_err(|e| io_err(&metrics_path, e))?;

    let mut input_hashes = BTreeMap::new();
    for (role, path) in &data.paths {
        input_hashes.insert(role.clone(), sha256_hex(path).map_err(|e| io_err(path, e))?);
    }
    let mut artifacts = BTreeMap::new();
    for (role, path) in [
        ("checkpoint", &ckpt_path),
        ("curves", &curves_path),
        ("metrics", &metrics_path),
    ] {
        artifacts.insert(role.to_string(), path.display().to_string());
    }
    RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config,
        input_hashes,
        artifacts,
        best_epoch: result.best_epoch,
    }
    .save(&manifest_path)
    .map_err(|e| io_err(&manifest_path, e))?;

    if let Some(last) = result.history.last() {
        println!(
            "trained {} epochs; best epoch {} (mean overall {:.4})",
            result.curves.len(),
            result.best_epoch,
            result
                .history
                .iter()
                .find(|h| h.epoch == result.best_epoch)
                .map(|h| h.mean_overall)
                .unwrap_or(last.mean_overall)
        );
    }
    println!("artifacts in {}", args.out_dir.display());
    Ok(())
}

// -------------------------------------------------------------------- eval

fn cmd_eval(args: EvalArgs) -> CliResult<()> {
    let (config, space, vocab, params) = load_checkpoint(&args.checkpoint)?;
    let corpus = corpus::load_corpus(&args.corpus, &space)?;
    let m = evaluate(&params, &config, &vocab, &corpus)?;
    let json = serde_json::json!({
        "intent_accuracy": m.intent_accuracy,
        "slot_f1": m.slot_f1,
        "overall_accuracy": m.overall_accuracy,
    });
    let text = format!("{}\n", serde_json::to_string_pretty(&json).unwrap());
    match &args.out {
        Some(path) => std::fs::write(path, text).map_err(|e| io_err(path, e))?,
        None => print!("{text}"),
    }
    Ok(())
}

// -------------------------------------------------------------- grad-check

fn cmd_grad_check(args: GradCheckArgs) -> CliResult<()> {
    if args.trials == 0 {
        return Err(CliError::Config("--trials must be at least 1".into()));
    }
    let mut cl = crate::losses::CLConfig::default();
    if let Some(t) = args.tau {
        cl.tau = t;
    }
    if let Some(t) = args.tau_prime {
        cl.tau_prime = t;
    }
    cl.validate().map_err(CliError::Config)?;
    let terms: Vec<Term> = match &args.term {
        Some(name) => vec![Term::from_name(name).ok_or_else(|| {
            CliError::Config(format!(
                "unknown term {name:?}; expected one of: {}",
                Term::ALL.map(|t| t.name()).join(", ")
            ))
        })?],
        None => Term::ALL.to_vec(),
    };
    let mut failures = Vec::new();
    for term in terms {
        let report = gradcheck::check_term(term, args.trials, args.seed, &cl)?;
        println!(
            "{} {:>14}  worst rel. error {:.3e}  ({} trials)",
            if report.passed() { "PASS" } else { "FAIL" },
            report.term.name(),
            report.worst_error,
            report.trials
        );
        if !report.passed() {
            failures.push(report);
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numeric(format!(
            "gradient check failed for: {}",
            failures
                .iter()
                .map(|r| format!("{} ({:.3e})", r.term.name(), r.worst_error))
                .collect::<Vec<_>>()
                .join(", ")
        )))
    }
}

// ------------------------------------------------------------- dump-losses

fn cmd_dump_losses(args: DumpLossesArgs) -> CliResult<()> {
    let data = load_data_dir(&args.data_dir)?;
    let config = resolve_config(&args.overrides, &data.lexicon)?;
    let vocab = build_vocab(&data.train, &data.lexicon);
    let mut state = TrainState::new(&config, &vocab, &data.space);
    if let Some(ckpt) = &args.checkpoint {
        let (ckpt_config, _space, ckpt_vocab, params) = load_checkpoint(ckpt)?;
        if ckpt_config != config.encoder {
            return Err(CliError::Config(
                "checkpoint encoder configuration disagrees with the resolved config".into(),
            ));
        }
        state = TrainState::new(&config, &ckpt_vocab, &data.space);
        state.params = params;
    }
    let ctx = TrainCtx {
        config: &config,
        vocab: &vocab,
        space: &data.space,
        lexicon: &data.lexicon,
    };
    let total_needed = (args.warmup_batches + 1) * config.batch_size;
    if data.train.examples.len() < total_needed {
        return Err(CliError::Config(format!(
            "need {} utterances for {} warmup batches plus the probe batch, corpus has {}",
            total_needed,
            args.warmup_batches,
            data.train.examples.len()
        )));
    }
    for b in 0..args.warmup_batches {
        let batch = train::slice_batch(&data.train, b * config.batch_size, config.batch_size);
        train::train_step(&mut state, &batch, &ctx)?;
    }

    // probe the next batch without updating parameters: eval-mode
    // encodings, current queue snapshot
    let batch = train::slice_batch(
        &data.train,
        args.warmup_batches * config.batch_size,
        config.batch_size,
    );
    let mut tape = crate::numerics::Tape::new();
    let nodes = state.params.register(&mut tape);
    let mut switch_rng = crate::seed::stream(config.seed, "dump-losses", &[]);
    let mut items = Vec::new();
    for u in &batch {
        let view = corpus::code_switch_with_rng(
            u,
            &data.lexicon,
            config.switch.p,
            &config.switch.target_langs,
            &mut switch_rng,
        );
        let src = encoder::encode(&mut tape, &nodes, &config.encoder, &vocab, u, false, None)?;
        let view_enc = encoder::encode(
            &mut tape,
            &nodes,
            &config.encoder,
            &vocab,
            &view,
            false,
            None,
        )?;
        items.push(crate::losses::BatchItem::new(
            src,
            view_enc,
            u.intent,
            u.slots.clone(),
            &data.space,
        ));
    }
    let snapshot = state.queues.snapshot();
    let gates = config.ablation.gates();
    let (_, breakdown) = crate::losses::total_loss(
        &mut tape,
        &nodes,
        &items,
        &snapshot,
        &config.weights,
        &gates,
        &config.cl,
        data.space.o_index,
    )?;
    println!(
        "{}",
        serde_json::to_string_pretty(&breakdown.to_json()).unwrap()
    );
    Ok(())
}

// --------------------------------------------------------- dump-embeddings

fn cmd_dump_embeddings(args: DumpEmbeddingsArgs) -> CliResult<()> {
    let (config, space, vocab, params) = load_checkpoint(&args.checkpoint)?;
    let corpus = corpus::load_corpus(&args.corpus, &space)?;
    let lexicon = Lexicon::load(&args.lexicon)?;
    let mut langs: Vec<String> = lexicon
        .entries
        .values()
        .flat_map(|m| m.keys().cloned())
        .collect();
    langs.sort();
    langs.dedup();
    let switch = SwitchConfig {
        p: args.p_switch,
        target_langs: langs,
    };
    let cosines = train::view_cosines(
        &params, &config, &vocab, &corpus, &lexicon, &switch, args.seed,
    )?;

    let mut out = String::from("index\tlang\tintent\tview_cosine");
    for d in 0..config.dim {
        write!(out, "\tdim{d}").unwrap();
    }
    out.push('\n');
    for (i, (u, cos)) in corpus.examples.iter().zip(&cosines).enumerate() {
        let mut tape = crate::numerics::Tape::new();
        let nodes = params.register(&mut tape);
        let enc = encoder::encode(&mut tape, &nodes, &config, &vocab, u, false, None)?;
        write!(out, "{i}\t{}\t{}\t{cos}", u.lang, space.intents[u.intent]).unwrap();
        for v in tape.value(enc.h_cls).data() {
            write!(out, "\t{v}").unwrap();
        }
        out.push('\n');
    }
    match &args.out {
        Some(path) => std::fs::write(path, out).map_err(|e| io_err(path, e))?,
        None => print!("{out}"),
    }
    Ok(())
}
