//! Corpus preparation, training and evaluation shared by the subcommands and
//! the acceptance suite.

use std::path::Path;

use anyhow::{Context, Result};
use fairrec_core::datagen::{
    generate_corpus, read_corpus, split_dataset, write_corpus, CorpusPaths, DatasetSplit, GenConfig,
    ImpressionSession, NewsArticle, UserRecord,
};
use fairrec_core::evaluator::{
    evaluate_sessions, fairness_report_from, probe_model, probe_random, FairnessReport, ModelSnapshot,
    ProbeConfig, ReportRecord, ScoringMode,
};
use fairrec_core::fairrec::Mode;
use fairrec_core::trainer::{Checkpoint, PreparedData, TrainConfig, TrainOutcome, Trainer};

pub const GEN_CONFIG_FILE: &str = "gen_config.json";

/// A corpus on disk or in memory together with its chronological split.
pub struct Workspace {
    pub gen: GenConfig,
    pub news: Vec<NewsArticle>,
    pub users: Vec<UserRecord>,
    pub impressions: Vec<ImpressionSession>,
    pub split: DatasetSplit,
}

impl Workspace {
    pub fn generate(gen: &GenConfig, train: &TrainConfig) -> Result<Self> {
        let corpus = generate_corpus(gen)?;
        Self::from_parts(gen.clone(), corpus.news, corpus.users, corpus.impressions, train)
    }

    pub fn from_parts(
        gen: GenConfig,
        news: Vec<NewsArticle>,
        users: Vec<UserRecord>,
        impressions: Vec<ImpressionSession>,
        train: &TrainConfig,
    ) -> Result<Self> {
        let split = split_dataset(&impressions, gen.days, train.val_fraction, train.seed)?;
        Ok(Self {
            gen,
            news,
            users,
            impressions,
            split,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_corpus(&CorpusPaths::in_dir(dir), &self.news, &self.users, &self.impressions)?;
        let path = dir.join(GEN_CONFIG_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(&self.gen)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    pub fn load(dir: &Path, train: &TrainConfig) -> Result<Self> {
        let path = dir.join(GEN_CONFIG_FILE);
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let gen: GenConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let (news, users, impressions) = read_corpus(&CorpusPaths::in_dir(dir))?;
        Self::from_parts(gen, news, users, impressions, train)
    }

    pub fn prepare(&self, train: &TrainConfig) -> Result<PreparedData> {
        Ok(PreparedData::new(&self.news, &self.users, &train.encoder, train.min_count)?)
    }
}

pub struct TrainedModel {
    pub outcome: TrainOutcome,
    pub checkpoint: Checkpoint,
    pub snapshot: ModelSnapshot,
}

pub fn train(data: &PreparedData, split: &DatasetSplit, config: &TrainConfig) -> Result<TrainedModel> {
    let mut trainer = Trainer::new(config.clone(), data)?;
    let outcome = trainer.fit(split)?;
    Ok(TrainedModel {
        outcome,
        checkpoint: trainer.checkpoint(),
        snapshot: trainer.snapshot(),
    })
}

/// Rebuild prepared data and inference embeddings from a checkpoint.
pub fn restore(ws: &Workspace, checkpoint: &Checkpoint) -> Result<(PreparedData, ModelSnapshot)> {
    let data = PreparedData::with_vocab(&ws.news, &ws.users, &checkpoint.config.encoder, checkpoint.vocab.clone())?;
    let store = checkpoint.store()?;
    let snapshot = ModelSnapshot::new(&checkpoint.model, &store, &data);
    Ok((data, snapshot))
}

/// Test-split ranking metrics under bias-free scoring.
pub fn evaluate(
    data: &PreparedData,
    snapshot: &ModelSnapshot,
    split: &DatasetSplit,
    mode: Mode,
    seed: u64,
) -> Result<ReportRecord> {
    let m = evaluate_sessions(snapshot, data, &split.test, ScoringMode::BiasFree)?;
    Ok(ReportRecord {
        mode: mode.to_string(),
        k: None,
        accuracy: None,
        macro_f: None,
        auc: Some(m.auc),
        mrr: Some(m.mrr),
        ndcg5: Some(m.ndcg5),
        ndcg10: Some(m.ndcg10),
        seed,
    })
}

fn probe_record(mode: &str, k: usize, accuracy: f64, macro_f: f64, seed: u64) -> ReportRecord {
    ReportRecord {
        mode: mode.to_string(),
        k: Some(k),
        accuracy: Some(accuracy),
        macro_f: Some(macro_f),
        seed,
        ..Default::default()
    }
}

/// Fairness audit at each cutoff, plus report records for the model and
/// for the random-ranking reference.
pub fn probe(
    data: &PreparedData,
    snapshot: &ModelSnapshot,
    ks: &[usize],
    config: &ProbeConfig,
    mode: Mode,
    seed: u64,
) -> Result<(Vec<FairnessReport>, Vec<ReportRecord>)> {
    let mut reports = Vec::new();
    let mut records = Vec::new();
    for &k in ks {
        let model = probe_model(snapshot, data, k, ScoringMode::BiasFree, config)?;
        let random = probe_random(data, k, config)?;
        let report = fairness_report_from(k, &model, &random);
        records.push(probe_record(mode.as_str(), k, report.probe_accuracy, report.probe_macro_f, seed));
        records.push(probe_record(
            "random",
            k,
            report.reference_random.accuracy,
            report.reference_random.macro_f,
            seed,
        ));
        reports.push(report);
    }
    Ok((reports, records))
}
