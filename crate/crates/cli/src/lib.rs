//! `fairrec-lab`: generate data, train, evaluate, audit fairness and check
//! the projection bounds from one command.

pub mod config;
pub mod experiment;
pub mod manifest;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use fairrec_core::evaluator::{fairness_csv, performance_csv, ReportRecord, PROBE_KS};
use fairrec_core::fairrec::Mode;
use fairrec_core::geometry::{verify_grid, BoundCheckResult, Regime};
use fairrec_core::trainer::Checkpoint;
use serde::Serialize;

use config::{LabConfig, Overrides};
use experiment::Workspace;
use manifest::RunManifest;

pub const HOME_ENV: &str = "FAIRREC_LAB_HOME";
const DEFAULT_HOME: &str = "fairrec-lab";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "fairrec-lab", version, about = "Fairness-aware news recommendation lab")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// fairrec, baseline, adversarial_only, no_LG, no_LD or no_adv.
    #[arg(long, global = true)]
    pub mode: Option<Mode>,
    /// Probe a single cutoff instead of 1, 3, 5 and 10.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// Generator bias strength.
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    /// Output directory; defaults to $FAIRREC_LAB_HOME, else ./fairrec-lab.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub deterministic: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus into <out>/corpus.
    GenData,
    /// Train a model and write a checkpoint and epoch log.
    Train {
        /// Corpus directory; defaults to <out>/corpus.
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
    },
    /// Ranking metrics of a checkpoint on the test split.
    Eval {
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        /// Defaults to <out>/checkpoint.json.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Attribute probe on a checkpoint's top-K recommendations.
    Probe {
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Monte-Carlo check of the projection bounds over the angle grid.
    Geometry,
    /// gen-data, train, eval, probe and geometry in sequence.
    Pipeline,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Probe { .. } => "probe",
            Command::Geometry => "geometry",
            Command::Pipeline => "pipeline",
        }
    }
}

/// Parse `args` (program name first) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let argv: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli, &argv) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_FAILURE
        }
    }
}

pub fn output_root(out: Option<&Path>) -> PathBuf {
    match out {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os(HOME_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_HOME)),
    }
}

pub fn resolve_config(global: &GlobalArgs) -> Result<LabConfig> {
    let overrides = Overrides {
        seed: global.seed,
        mode: global.mode,
        beta: global.beta,
        deterministic: global.deterministic,
    };
    LabConfig::layered(global.config.as_deref(), &overrides)
}

struct Run {
    out: PathBuf,
    config: LabConfig,
    ks: Vec<usize>,
    artifacts: Vec<PathBuf>,
}

impl Run {
    fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.out.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        self.artifacts.push(PathBuf::from(name));
        Ok(())
    }

    fn write_jsonl<T: Serialize>(&mut self, name: &str, records: &[T]) -> Result<()> {
        let mut text = String::new();
        for r in records {
            text.push_str(&serde_json::to_string(r)?);
            text.push('\n');
        }
        self.write_text(name, &text)
    }

    fn corpus_dir(&self, data: &Option<PathBuf>) -> PathBuf {
        data.clone().unwrap_or_else(|| self.out.join("corpus"))
    }

    fn checkpoint_path(&self, checkpoint: &Option<PathBuf>) -> PathBuf {
        checkpoint.clone().unwrap_or_else(|| self.out.join("checkpoint.json"))
    }

    fn gen_data(&mut self) -> Result<()> {
        let ws = Workspace::generate(&self.config.gen, &self.config.train)?;
        ws.save(&self.out.join("corpus"))?;
        for f in ["news.jsonl", "users.jsonl", "impressions.jsonl", experiment::GEN_CONFIG_FILE] {
            self.artifacts.push(Path::new("corpus").join(f));
        }
        println!(
            "generated {} news, {} users, {} impressions",
            ws.news.len(),
            ws.users.len(),
            ws.impressions.len()
        );
        Ok(())
    }

    fn train(&mut self, data: &Option<PathBuf>) -> Result<()> {
        let ws = Workspace::load(&self.corpus_dir(data), &self.config.train)?;
        let prepared = ws.prepare(&self.config.train)?;
        let trained = experiment::train(&prepared, &ws.split, &self.config.train)?;
        trained.checkpoint.save(&self.out.join("checkpoint.json"))?;
        self.artifacts.push(PathBuf::from("checkpoint.json"));
        self.write_jsonl("epochs.jsonl", &trained.outcome.epochs)?;
        println!(
            "trained {} for {} epochs; best epoch {} with validation AUC {:.4}",
            self.config.train.mode,
            trained.outcome.epochs.len(),
            trained.outcome.best_epoch,
            trained.outcome.best_val_auc
        );
        Ok(())
    }

    fn load_checkpoint(&self, checkpoint: &Option<PathBuf>) -> Result<Checkpoint> {
        let path = self.checkpoint_path(checkpoint);
        if !path.exists() {
            anyhow::bail!("checkpoint not found: {}", path.display());
        }
        Ok(Checkpoint::load(&path)?)
    }

    fn eval(&mut self, data: &Option<PathBuf>, checkpoint: &Option<PathBuf>) -> Result<ReportRecord> {
        let ckpt = self.load_checkpoint(checkpoint)?;
        let ws = Workspace::load(&self.corpus_dir(data), &ckpt.config)?;
        let (prepared, snapshot) = experiment::restore(&ws, &ckpt)?;
        let record = experiment::evaluate(&prepared, &snapshot, &ws.split, ckpt.config.mode, ckpt.config.seed)?;
        self.write_jsonl("eval.jsonl", std::slice::from_ref(&record))?;
        self.write_text("performance.csv", &performance_csv(std::slice::from_ref(&record)))?;
        println!(
            "test AUC {:.4}  MRR {:.4}  nDCG@5 {:.4}  nDCG@10 {:.4}",
            record.auc.unwrap_or(f64::NAN),
            record.mrr.unwrap_or(f64::NAN),
            record.ndcg5.unwrap_or(f64::NAN),
            record.ndcg10.unwrap_or(f64::NAN)
        );
        Ok(record)
    }

    fn probe(&mut self, data: &Option<PathBuf>, checkpoint: &Option<PathBuf>) -> Result<Vec<ReportRecord>> {
        let ckpt = self.load_checkpoint(checkpoint)?;
        let ws = Workspace::load(&self.corpus_dir(data), &ckpt.config)?;
        let (prepared, snapshot) = experiment::restore(&ws, &ckpt)?;
        let (reports, records) = experiment::probe(
            &prepared,
            &snapshot,
            &self.ks,
            &self.config.probe,
            ckpt.config.mode,
            ckpt.config.seed,
        )?;
        self.write_jsonl("fairness_reports.jsonl", &reports)?;
        self.write_jsonl("probe.jsonl", &records)?;
        self.write_text("fairness.csv", &fairness_csv(&records))?;
        for r in &reports {
            println!(
                "K={:<2} probe accuracy {:.2}%  macro-F {:.2}%  (random {:.2}%){}",
                r.k,
                r.probe_accuracy,
                r.probe_macro_f,
                r.reference_random.accuracy,
                if r.non_convergent { "  [non-convergent]" } else { "" }
            );
        }
        Ok(records)
    }

    fn geometry(&mut self) -> Result<()> {
        let g = &self.config.geometry;
        let results = verify_grid(g.dim, g.samples, g.seed)?;
        self.write_jsonl("geometry.jsonl", &results)?;
        for regime in [Regime::AdversarialOnly, Regime::FairRec] {
            let rs: Vec<&BoundCheckResult> = results.iter().filter(|r| r.regime == regime).collect();
            let violating = rs.iter().filter(|r| r.violations > 0).count();
            println!(
                "{}: {} scenarios, {} with violations, {} violating samples",
                regime.as_str(),
                rs.len(),
                violating,
                rs.iter().map(|r| r.violations).sum::<usize>()
            );
        }
        Ok(())
    }

    fn pipeline(&mut self) -> Result<()> {
        self.gen_data()?;
        self.train(&None)?;
        let mut records = vec![self.eval(&None, &None)?];
        records.extend(self.probe(&None, &None)?);
        self.write_jsonl("report.jsonl", &records)?;
        self.geometry()
    }
}

pub fn execute(cli: &Cli, argv: &[String]) -> Result<()> {
    let started = Instant::now();
    let config = resolve_config(&cli.global)?;
    let out = output_root(cli.global.out.as_deref());
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut run = Run {
        out,
        config,
        ks: cli.global.k.map(|k| vec![k]).unwrap_or_else(|| PROBE_KS.to_vec()),
        artifacts: Vec::new(),
    };
    match &cli.command {
        Command::GenData => run.gen_data()?,
        Command::Train { data } => run.train(data)?,
        Command::Eval { data, checkpoint } => {
            run.eval(data, checkpoint)?;
        }
        Command::Probe { data, checkpoint } => {
            run.probe(data, checkpoint)?;
        }
        Command::Geometry => run.geometry()?,
        Command::Pipeline => run.pipeline()?,
    }
    let manifest = RunManifest::new(
        cli.command.name(),
        argv,
        &run.config,
        run.artifacts.clone(),
        started.elapsed(),
    );
    manifest.write(&run.out)?;
    Ok(())
}
