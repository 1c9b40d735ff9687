//! The `rxd` operator command line.
//!
//! Exit codes: 0 success, 1 runtime error, 2 usage error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use rxdialog::corpusio::{
    export_dialogues, import_conll, import_conll_with, import_dialogues, write_conll, ColumnLayout, ConllDocument,
    TagStyle,
};
use rxdialog::datagen::{imbalance_ratio, BalanceTarget, CorpusConfig};
use rxdialog::engine::{Engine, EngineConfig, PolicyKind};
use rxdialog::metrics::{aggregate, load_participants, parse_event_log, parse_event_table, write_metrics_csv, EventLog, GroupBy};
use rxdialog::nlu::{evaluate_nlu, train_nlu, CrfTrainConfig, IntentTrainConfig, NluModel, NluTrainConfig};
use rxdialog::policy::{evaluate_policy, ted_train, Optimizer, TedConfig, TedModel};

use crate::api::{router, system_clock, AppState};
use crate::config::ServiceConfig;
use crate::eventlog::EventSink;

#[derive(Debug, Parser)]
#[command(name = "rxd", version, about = "Prescription dialogue engine: data generation, training, evaluation and serving")]
pub struct Cli {
    /// JSON config file (defaults to $RXD_CONFIG, then built-in data).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Write a JSON report to this path (`-` for stdout).
    #[arg(long, global = true)]
    pub report: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GroupArg {
    Category,
    AgeBand,
    Gender,
    None,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the balanced NLU corpus and write train/test CoNLL files.
    GenData {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 120)]
        min_count: usize,
        #[arg(long, default_value_t = 10_000)]
        max_total: usize,
        /// Expansions drawn from every non-prescription start symbol.
        #[arg(long, default_value_t = 150)]
        per_start: usize,
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Generate dialogue sessions from the scenario templates (JSON lines).
    GenDialogues {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Train the slot tagger and intent classifier on a CoNLL file.
    TrainNlu {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 15)]
        intent_epochs: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Train the dialogue policy on generated sessions.
    TrainPolicy {
        #[arg(long)]
        dialogues: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
        optimizer: OptimizerArg,
        /// Learning rate (default: 0.001 for adam, 0.01 for sgd).
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long, default_value_t = 3)]
        seed: u64,
    },
    /// Score an NLU model on a CoNLL file.
    EvalNlu {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
    /// Next-action accuracy of a policy model on logged sessions.
    EvalPolicy {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dialogues: PathBuf,
    },
    /// Run the HTTP API.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        host: Option<String>,
    },
    /// Aggregate usage metrics from event logs.
    Metrics {
        /// Event files (`.jsonl`, or `.tsv` tables) or directories of them.
        #[arg(long, required = true, num_args = 1..)]
        events: Vec<PathBuf>,
        #[arg(long)]
        participants: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = GroupArg::Category)]
        group_by: GroupArg,
        /// CSV output (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-export a CoNLL corpus, optionally from another column layout.
    ExportConll {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Input column roles, e.g. `idx,token,_,tag`.
        #[arg(long)]
        layout: Option<String>,
        /// Write bare slot names instead of BIO tags.
        #[arg(long)]
        flat: bool,
    },
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            1
        }
    }
}

/// The error chain, skipping causes already spelled out by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.ends_with(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn write_report<T: Serialize>(path: Option<&Path>, report: &T) -> anyhow::Result<()> {
    let Some(path) = path else { return Ok(()) };
    let text = serde_json::to_string_pretty(report)?;
    if path == Path::new("-") {
        println!("{text}");
    } else {
        fs::write(path, text + "\n").with_context(|| format!("report {}", path.display()))?;
    }
    Ok(())
}

fn write_conll_file(path: &Path, source: &str, utts: Vec<rxdialog::nlu::AnnotatedUtterance>, style: TagStyle) -> anyhow::Result<()> {
    let text = write_conll(&ConllDocument::new(source, utts), style)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_nlu(path: &Path) -> anyhow::Result<NluModel<f64>> {
    NluModel::load(path).with_context(|| format!("NLU model {}", path.display()))
}

fn load_ted(path: &Path) -> anyhow::Result<TedModel<f64>> {
    TedModel::load(path).with_context(|| format!("policy model {}", path.display()))
}

fn read_events(paths: &[PathBuf]) -> anyhow::Result<EventLog> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut inner: Vec<PathBuf> = fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| matches!(f.extension().and_then(|x| x.to_str()), Some("jsonl" | "tsv")))
                .collect();
            inner.sort();
            files.extend(inner);
        } else {
            files.push(p.clone());
        }
    }
    let mut all = EventLog::default();
    for f in files {
        let log = if f.extension().and_then(|x| x.to_str()) == Some("tsv") {
            parse_event_table(File::open(&f).with_context(|| format!("events {}", f.display()))?)?
        } else {
            parse_event_log(&f).with_context(|| format!("events {}", f.display()))?
        };
        for (id, evs) in log.sessions {
            all.sessions.entry(id).or_default().extend(evs);
        }
        all.rejects.extend(log.rejects);
    }
    for evs in all.sessions.values_mut() {
        evs.sort_by(|a, b| a.ts.total_cmp(&b.ts));
    }
    Ok(all)
}

pub fn execute(cli: Cli) -> anyhow::Result<()> {
    let cfg = ServiceConfig::resolve(cli.config.as_deref())?;
    let report = cli.report.as_deref();
    match cli.command {
        Command::GenData { out_dir, min_count, max_total, per_start, test_fraction, seed } => {
            if !(0.0..=1.0).contains(&test_fraction) {
                bail!("--test-fraction must lie in [0, 1]");
            }
            let res = cfg.data.load()?;
            let cc = CorpusConfig {
                balance: BalanceTarget { min_count_per_slot: min_count, max_total },
                per_start_symbol: per_start,
                test_fraction,
                seed,
            };
            let built = res.nlu_corpus(&cc)?;
            fs::create_dir_all(&out_dir)?;
            let (n_train, n_test) = (built.train.len(), built.test.len());
            write_conll_file(&out_dir.join("train.conll"), "generated", built.train, TagStyle::Bio)?;
            write_conll_file(&out_dir.join("test.conll"), "generated", built.test, TagStyle::Bio)?;
            let reachable = built
                .balance
                .final_distribution
                .keys()
                .filter(|l| !built.balance.unreachable.contains(l))
                .cloned()
                .collect();
            let ratio = imbalance_ratio(&built.balance.final_distribution, &reachable);
            println!("train {n_train}, test {n_test}, generated {}, imbalance {ratio:.2}", built.balance.generated.len());
            write_report(
                report,
                &json!({
                    "n_train": n_train,
                    "n_test": n_test,
                    "n_balanced": built.balance.generated.len(),
                    "exhausted": built.balance.exhausted,
                    "unreachable": built.balance.unreachable,
                    "distribution": built.balance.final_distribution,
                    "imbalance_ratio": ratio,
                    "seed": seed,
                }),
            )
        }
        Command::GenDialogues { out, n, seed } => {
            let res = cfg.data.load()?;
            let sessions = res.dialogues(n, seed)?;
            export_dialogues(&sessions, &out)?;
            let mut by_scenario: BTreeMap<&str, usize> = BTreeMap::new();
            for s in &sessions {
                *by_scenario.entry(s.scenario.as_str()).or_default() += 1;
            }
            println!("{} sessions written to {}", sessions.len(), out.display());
            write_report(report, &json!({ "n_sessions": sessions.len(), "by_scenario": by_scenario, "seed": seed }))
        }
        Command::TrainNlu { train, out, epochs, intent_epochs, seed } => {
            let res = cfg.data.load()?;
            let data = import_conll(&train).with_context(|| format!("training corpus {}", train.display()))?.utterances;
            let tc = NluTrainConfig {
                crf: CrfTrainConfig { epochs, seed, ..Default::default() },
                intent: IntentTrainConfig { epochs: intent_epochs, seed, ..Default::default() },
            };
            let (model, losses) = train_nlu(&data, &res.db, &res.schema, &tc)?;
            model.save(&out)?;
            println!("trained on {} utterances, final loss {:.4}", data.len(), losses.last().copied().unwrap_or(0.0));
            write_report(
                report,
                &json!({ "n_utterances": data.len(), "n_features": model.crf.features.len(), "epoch_losses": losses, "seed": seed }),
            )
        }
        Command::TrainPolicy { dialogues, out, epochs, optimizer, lr, seed } => {
            let res = cfg.data.load()?;
            let sessions = import_dialogues(&dialogues)?;
            let base = match optimizer {
                OptimizerArg::Adam => TedConfig::default(),
                OptimizerArg::Sgd => TedConfig::sgd(),
            };
            let tc = TedConfig { epochs, seed, lr: lr.unwrap_or(base.lr), history: cfg.history, ..base };
            let (model, log) = ted_train::<f64>(&sessions, &res.world(), &tc)?;
            model.save(&out)?;
            println!("trained on {} sessions, final loss {:.4}", sessions.len(), log.epoch_losses.last().copied().unwrap_or(0.0));
            let opt = match tc.optimizer {
                Optimizer::Adam => "adam",
                Optimizer::Sgd => "sgd",
            };
            write_report(
                report,
                &json!({ "n_sessions": sessions.len(), "vocab": model.vocab.len(), "n_params": model.n_params(),
                         "optimizer": opt, "epoch_losses": log.epoch_losses, "seed": seed }),
            )
        }
        Command::EvalNlu { model, test } => {
            let res = cfg.data.load()?;
            let m = load_nlu(&model)?;
            let data = import_conll(&test).with_context(|| format!("test corpus {}", test.display()))?.utterances;
            let r = evaluate_nlu(&m.crf, &m.intent, &data, &res.slot_labels());
            println!(
                "intent accuracy {:.4}, slot micro F1 {:.4}, macro F1 {:.4} ({} utterances)",
                r.intent_accuracy, r.slots.micro.f1, r.slots.macro_avg.f1, r.n_utterances
            );
            write_report(report, &r)
        }
        Command::EvalPolicy { model, dialogues } => {
            let res = cfg.data.load()?;
            let m = load_ted(&model)?;
            let sessions = import_dialogues(&dialogues)?;
            let r = evaluate_policy(&m, &sessions, &res.world())?;
            println!("next-action accuracy {:.4} (masked {:.4}) over {} decisions", r.accuracy, r.masked_accuracy, r.n_steps);
            write_report(report, &r)
        }
        Command::Serve { port, host } => {
            let mut cfg = cfg;
            if let Some(p) = port {
                cfg.port = p;
            }
            if let Some(h) = host {
                cfg.host = h;
            }
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(cfg))
        }
        Command::Metrics { events, participants, group_by, out } => {
            let log = read_events(&events)?;
            let meta = match &participants {
                Some(p) => load_participants(p)?,
                None => Vec::new(),
            };
            let gb = match group_by {
                GroupArg::Category => GroupBy::Category,
                GroupArg::AgeBand => GroupBy::AgeBand,
                GroupArg::Gender => GroupBy::Gender,
                GroupArg::None => GroupBy::None,
            };
            if participants.is_none() && gb != GroupBy::None {
                bail!("--participants is required unless --group-by none");
            }
            let rows = aggregate(&log.sessions, &meta, gb)?;
            match &out {
                Some(p) => write_metrics_csv(&rows, BufWriter::new(File::create(p)?))?,
                None => write_metrics_csv(&rows, io::stdout().lock())?,
            }
            if !log.rejects.is_empty() {
                eprintln!("{} malformed event lines skipped", log.rejects.len());
            }
            write_report(report, &json!({ "rows": rows, "n_sessions": log.sessions.len(), "rejects": log.rejects.len() }))
        }
        Command::ExportConll { input, out, layout, flat } => {
            let layout = match layout {
                Some(spec) => ColumnLayout::parse(&spec)?,
                None => ColumnLayout::default(),
            };
            let mut doc = import_conll_with(&input, &layout)?;
            if doc.source.is_empty() {
                doc.source = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            }
            let style = if flat { TagStyle::Flat } else { TagStyle::Bio };
            let text = write_conll(&doc, style)?;
            let mut f = BufWriter::new(File::create(&out).with_context(|| format!("writing {}", out.display()))?);
            f.write_all(text.as_bytes())?;
            f.flush()?;
            println!("{} utterances written to {}", doc.utterances.len(), out.display());
            write_report(report, &json!({ "n_utterances": doc.utterances.len() }))
        }
    }
}

/// Loads models and data from `cfg` and builds the engine.
pub fn build_engine(cfg: &ServiceConfig) -> anyhow::Result<Engine> {
    let res = cfg.data.load()?;
    let nlu_path = cfg.nlu_model.as_ref().context("config has no `nlu_model` path")?;
    let nlu = load_nlu(nlu_path)?;
    let ted = match &cfg.policy_model {
        Some(p) => Some(load_ted(p)?),
        None => None,
    };
    if cfg.policy == PolicyKind::Ted && ted.is_none() {
        bail!("policy `ted` needs a `policy_model` path");
    }
    Ok(Engine::new(res.schema, res.db, nlu, ted, EngineConfig { policy: cfg.policy, history: cfg.history })?)
}

pub async fn serve(cfg: ServiceConfig) -> anyhow::Result<()> {
    let engine = build_engine(&cfg)?;
    let sink = EventSink::new(&cfg.log_dir).with_context(|| format!("log dir {}", cfg.log_dir.display()))?;
    let app = AppState::new(engine, sink, system_clock());
    let addr = format!("{}:{}", cfg.host, cfg.port);
    let listener = tokio::net::TcpListener::bind(&addr).await.with_context(|| format!("binding {addr}"))?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(app)).await?;
    Ok(())
}
