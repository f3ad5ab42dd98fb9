//! The `biaslab` command line.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data errors (bad
//! input files, validation failures, overlap found, failed gradient check).

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use biaslab_core::agreement::{self, ReliabilityMatrix, Statistic};
use biaslab_core::corpus::{CorpusKind, OutletRule, SentenceRecord, SplitSpec, Stratify};
use biaslab_core::evaluation::{evaluate_sliced, EvalExample, SliceSuite};
use biaslab_core::model::{
    gradient_check, pretrain_then_finetune, Checkpoint, ClassifierModel, LabeledExample, ModelShape, TextExample,
    TwoStageConfig,
};
use biaslab_core::textprep::EncodedSequence;
use biaslab_core::{Label, SentenceId};
use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::api::{self, AppState};
use crate::commands::Command;
use crate::store::Store;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

/// Acceptance threshold for `gradcheck`.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "biaslab", version, about = "Media-bias corpus, annotation and classifier workbench")]
pub struct Cli {
    /// Store directory.
    #[arg(long, global = true, env = "BIASLAB_STORE", default_value = "biaslab-store")]
    pub store: PathBuf,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Register outlets from a CSV registry (id,name,leaning,standard).
    Outlets { registry: PathBuf },
    /// Ingest a JSONL sentence file.
    Ingest {
        #[arg(long)]
        kind: CorpusKind,
        input: PathBuf,
    },
    /// Label the distant corpus from outlet metadata.
    DistantLabel {
        /// JSON list of {leaning, standard, outcome}; the built-in rule when absent.
        #[arg(long)]
        rule: Option<PathBuf>,
    },
    /// Report distant/gold text collisions; exits 2 when any exist.
    CheckOverlap,
    /// Print a deterministic train/validation/test split.
    Split {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Train, validation and test fractions.
        #[arg(long, value_parser = parse_fractions, default_value = "0.8,0.1,0.1")]
        fractions: [f64; 3],
        #[arg(long, value_enum, default_value_t = StratifyArg::None)]
        stratify: StratifyArg,
        #[arg(long, default_value = "gold")]
        kind: CorpusKind,
    },
    /// Import or export MBIC-style annotation CSV.
    Annotate {
        #[command(subcommand)]
        action: AnnotateAction,
    },
    /// Majority-vote gold labels over annotated sentences.
    Gold {
        #[arg(long, default_value_t = 1)]
        min_annotators: usize,
        /// Write the labels onto the corpus.
        #[arg(long)]
        apply: bool,
    },
    /// Inter-annotator agreement over the store or a JSON matrix.
    Agreement {
        #[arg(long, value_enum, default_value_t = StatArg::Alpha)]
        stat: StatArg,
        /// JSON rows of cells: "biased", "neutral" or null.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Train a classifier on the stored corpora.
    Train {
        #[arg(long, value_enum, default_value_t = StageArg::Both)]
        stage: StageArg,
        /// TOML training config; defaults apply when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the vocabulary file here.
        #[arg(long)]
        vocab_out: Option<PathBuf>,
        /// Overrides the init and shuffle seeds of the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Register the checkpoint in the store under this id.
        #[arg(long)]
        register: Option<String>,
    },
    /// Compare analytic and finite-difference gradients on random models.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        runs: u64,
        #[arg(long, default_value_t = 8)]
        dim: usize,
        #[arg(long, default_value_t = 8)]
        hidden: usize,
    },
    /// Score JSONL lines of {id, text} with a checkpoint.
    Classify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Overall and sliced metrics on a labeled JSONL test file.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// JSON list of slice suites; one suite per tag when absent.
        #[arg(long)]
        suites: Option<PathBuf>,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        #[arg(long, env = "BIASLAB_TOKEN", hide_env_values = true)]
        token: String,
        /// Seconds between idle-session sweeps.
        #[arg(long, default_value_t = 60)]
        expire_every: u64,
    },
}

#[derive(Debug, Subcommand)]
pub enum AnnotateAction {
    Import { input: PathBuf },
    Export { output: PathBuf },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StratifyArg {
    None,
    Label,
    Topic,
}

impl From<StratifyArg> for Stratify {
    fn from(s: StratifyArg) -> Self {
        match s {
            StratifyArg::None => Stratify::None,
            StratifyArg::Label => Stratify::Label,
            StratifyArg::Topic => Stratify::Topic,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StatArg {
    Alpha,
    Kappa,
    Percent,
}

impl From<StatArg> for Statistic {
    fn from(s: StatArg) -> Self {
        match s {
            StatArg::Alpha => Statistic::KrippendorffAlphaNominal,
            StatArg::Kappa => Statistic::FleissKappa,
            StatArg::Percent => Statistic::PercentAgreement,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    /// Distant pretraining then gold fine-tuning.
    Both,
    /// Gold fine-tuning from a fresh init.
    Gold,
}

fn parse_fractions(s: &str) -> Result<[f64; 3], String> {
    let parts = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    parts
        .try_into()
        .map_err(|p: Vec<f64>| format!("expected 3 comma-separated fractions, got {}", p.len()))
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_DATA
        }
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}, line {}", path.display(), i + 1))?);
    }
    Ok(out)
}

pub fn run(cli: Cli) -> Result<i32> {
    let store_dir = cli.store;
    let open = || Store::open(&store_dir).with_context(|| format!("opening store {}", store_dir.display()));
    match cli.command {
        Cmd::Outlets { registry } => {
            let mut store = open()?;
            let mut staged = store.workbench().corpus.clone();
            let before: Vec<_> = staged.outlets().map(|o| o.id.clone()).collect();
            let n = staged
                .register_outlets_path(&registry)
                .with_context(|| format!("reading {}", registry.display()))?;
            let added: Vec<_> = staged.outlets().filter(|o| !before.contains(&o.id)).cloned().collect();
            for outlet in added {
                store.commit(Command::AddOutlet { outlet })?;
            }
            println!("registered {n} outlets");
        }
        Cmd::Ingest { kind, input } => {
            let mut store = open()?;
            // Validate against a copy first so errors carry file line numbers.
            let mut staged = store.workbench().corpus.clone();
            let n = staged
                .ingest_path(&input, kind)
                .with_context(|| format!("ingesting {}", input.display()))?;
            let records: Vec<SentenceRecord> = read_jsonl(&input)?;
            store.commit(Command::IngestSentences { kind, records })?;
            println!("ingested {n} {kind} sentences");
        }
        Cmd::DistantLabel { rule } => {
            let rule: OutletRule = match rule {
                Some(path) => serde_json::from_str(&fs::read_to_string(&path)?).with_context(|| format!("parsing {}", path.display()))?,
                None => OutletRule::default(),
            };
            let mut store = open()?;
            let outcome = store.commit(Command::AssignDistantLabels { rule })?;
            print_json(&outcome)?;
        }
        Cmd::CheckOverlap => {
            let store = open()?;
            let report = store.workbench().corpus.check_overlap();
            print_json(&report)?;
            if !report.is_clean() {
                eprintln!("{} collision(s) between gold and distant corpora", report.collisions.len());
                return Ok(EXIT_DATA);
            }
        }
        Cmd::Split {
            seed,
            fractions,
            stratify,
            kind,
        } => {
            let store = open()?;
            let spec = SplitSpec::new(seed, fractions[0], fractions[1], fractions[2], stratify.into());
            print_json(&store.workbench().corpus.split(&spec, kind)?)?;
        }
        Cmd::Annotate { action } => match action {
            AnnotateAction::Import { input } => {
                let mut store = open()?;
                let csv = fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
                let outcome = store.commit(Command::ImportAnnotations { csv })?;
                print_json(&outcome)?;
            }
            AnnotateAction::Export { output } => {
                let store = open()?;
                let n = store.workbench().annotations.export_mbic_style(&output)?;
                println!("exported {n} annotations to {}", output.display());
            }
        },
        Cmd::Gold { min_annotators, apply } => {
            let mut store = open()?;
            let annotations = &store.workbench().annotations;
            let ids: Vec<SentenceId> = annotations.annotated_sentences().cloned().collect();
            let gold = annotations.aggregate_gold(&ids, min_annotators);
            print_json(&gold)?;
            if apply {
                let labels = gold.labels.iter().map(|g| (g.sentence_id.clone(), g.label)).collect();
                store.commit(Command::SetGoldLabels { labels })?;
            }
        }
        Cmd::Agreement { stat, input } => {
            let matrix = match input {
                Some(path) => {
                    let rows: Vec<Vec<Option<Label>>> =
                        serde_json::from_str(&fs::read_to_string(&path)?).with_context(|| format!("parsing {}", path.display()))?;
                    ReliabilityMatrix::from_rows(rows)?
                }
                None => ReliabilityMatrix::from_records(open()?.workbench().annotations.records())?,
            };
            print_json(&agreement::compute(stat.into(), &matrix)?)?;
        }
        Cmd::Train {
            stage,
            config,
            out,
            vocab_out,
            seed,
            register,
        } => {
            let mut cfg: TwoStageConfig = match config {
                Some(path) => toml::from_str(&fs::read_to_string(&path)?).with_context(|| format!("parsing {}", path.display()))?,
                None => TwoStageConfig::default(),
            };
            if let Some(seed) = seed {
                cfg.init_seed = seed;
                cfg.distant.seed = seed;
                cfg.gold.seed = seed;
            }
            if stage == StageArg::Gold {
                cfg.distant.epochs = 0;
            }
            let mut store = open()?;
            let wb = store.workbench();
            let distant: Vec<TextExample> = wb
                .corpus
                .distant_labels()
                .filter_map(|d| wb.corpus.sentence(&d.sentence_id).map(|s| TextExample::new(s.id.clone(), s.text.clone(), d.label)))
                .collect();
            let gold: Vec<TextExample> = wb
                .corpus
                .sentences_of(CorpusKind::Gold)
                .filter_map(|s| s.label.map(|l| TextExample::new(s.id.clone(), s.text.clone(), l)))
                .collect();
            if gold.is_empty() {
                bail!("no labeled gold sentences in the store");
            }
            let outcome = pretrain_then_finetune(&wb.tokenizer, &distant, &gold, None, &cfg)?;
            let checkpoint = Checkpoint::new(wb.tokenizer.clone(), cfg.max_length, outcome.vocabulary, outcome.model)?;
            checkpoint.save(&out)?;
            if let Some(path) = vocab_out {
                fs::write(&path, checkpoint.vocabulary.to_text())?;
            }
            print_json(&serde_json::json!({
                "checksum": checkpoint.model.checksum(),
                "vocabulary": checkpoint.model.vocabulary,
                "distant": outcome.distant_report,
                "gold": outcome.gold_report,
            }))?;
            if let Some(id) = register {
                store.commit(Command::RegisterModel {
                    id,
                    checkpoint: Box::new(checkpoint),
                })?;
            }
        }
        Cmd::Gradcheck {
            seed,
            runs,
            dim,
            hidden,
        } => {
            let mut worst: f64 = 0.0;
            for run in 0..runs {
                let error = gradcheck_once(seed.wrapping_add(run), dim, hidden)?;
                println!("seed {}: max relative error {error:.3e}", seed.wrapping_add(run));
                worst = worst.max(error);
            }
            println!("worst {worst:.3e} (tolerance {GRADCHECK_TOLERANCE:e})");
            if worst >= GRADCHECK_TOLERANCE {
                return Ok(EXIT_DATA);
            }
        }
        Cmd::Classify { model, input } => {
            #[derive(Deserialize)]
            struct Line {
                id: Option<String>,
                text: String,
            }
            #[derive(Serialize)]
            struct Scored {
                id: Option<String>,
                score: f64,
                label: Label,
            }
            let checkpoint = Checkpoint::load(&model)?;
            let lines: Vec<Line> = read_jsonl(&input)?;
            let mut out = io::stdout().lock();
            for (i, line) in lines.into_iter().enumerate() {
                let score = checkpoint.score(&line.text).with_context(|| format!("scoring entry {}", i + 1))?;
                let label = if score >= biaslab_core::evaluation::DEFAULT_THRESHOLD { Label::Biased } else { Label::Neutral };
                serde_json::to_writer(&mut out, &Scored { id: line.id, score, label })?;
                writeln!(out)?;
            }
        }
        Cmd::Eval { model, input, suites } => {
            let checkpoint = Checkpoint::load(&model)?;
            let records: Vec<SentenceRecord> = read_jsonl(&input)?;
            let test = records
                .into_iter()
                .map(|r| {
                    let label = r.label.ok_or_else(|| anyhow!("test sentence `{}` has no label", r.id))?;
                    Ok(EvalExample {
                        encoded: checkpoint.encode(&r.text),
                        id: r.id,
                        label,
                        tags: r.tags,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let suites: Vec<SliceSuite> = match suites {
                Some(path) => serde_json::from_str(&fs::read_to_string(&path)?).with_context(|| format!("parsing {}", path.display()))?,
                None => {
                    let tags: std::collections::BTreeSet<&String> = test.iter().flat_map(|e| &e.tags).collect();
                    tags.into_iter().map(|t| SliceSuite::tagged(t.clone(), t.clone())).collect()
                }
            };
            let dataset = input.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
            print_json(&evaluate_sliced(&checkpoint.model, &suites, &test, &dataset)?)?;
        }
        Cmd::Serve {
            bind,
            token,
            expire_every,
        } => {
            if token.trim().is_empty() {
                bail!("an auth token is required (--token or BIASLAB_TOKEN)");
            }
            let store = open()?;
            serve(store, bind, token, Duration::from_secs(expire_every.max(1)))?;
        }
    }
    Ok(0)
}

/// One gradient check on a random model and input; returns the max relative error.
pub fn gradcheck_once(seed: u64, dim: usize, hidden: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = 12;
    let model = ClassifierModel::random(ModelShape::new(vocab, dim, hidden), "gradcheck", seed, 0.5);
    let len = rng.gen_range(1..8);
    let ids = (0..len).map(|_| rng.gen_range(0..vocab as u32)).collect();
    let label = if rng.gen_bool(0.5) { Label::Biased } else { Label::Neutral };
    let example = LabeledExample::new(EncodedSequence::new(ids, 16), label);
    Ok(gradient_check(&model, &example, 1e-5)?)
}

fn serve(store: Store, bind: SocketAddr, token: String, expire_every: Duration) -> Result<()> {
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let state = AppState::new(store, token);
        let listener = tokio::net::TcpListener::bind(bind)
            .await
            .with_context(|| format!("binding {bind}"))?;
        println!("listening on {}", listener.local_addr()?);
        io::stdout().flush()?;
        let expiry = api::spawn_expiry(state.clone(), expire_every);
        axum::serve(listener, api::router(state.clone()))
            .with_graceful_shutdown(shutdown_signal())
            .await?;
        expiry.abort();
        api::flush(&state)?;
        log::info!("store flushed");
        Ok(())
    })
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        if let Ok(mut s) = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            s.recv().await;
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}
