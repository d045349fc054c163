//! Training loop behaviour on small generated corpora.

mod common;

use fairrec_core::autograd::Graph;
use fairrec_core::datagen::{generate_corpus, split_dataset, Corpus, DatasetSplit, GenConfig};
use fairrec_core::encoders::EncoderConfig;
use fairrec_core::evaluator::ModelSnapshot;
use fairrec_core::fairrec::{Lambdas, Mode};
use fairrec_core::rng::stream_rng;
use fairrec_core::trainer::{sample_negatives, Checkpoint, PreparedData, TrainConfig, Trainer, TrainingSample};

use common::{build, fixture};

fn small_corpus(seed: u64) -> (Corpus, DatasetSplit) {
    let gen = GenConfig {
        num_users: 150,
        num_news: 400,
        sessions_per_user: 6,
        seed,
        ..GenConfig::default()
    };
    let corpus = generate_corpus(&gen).unwrap();
    let split = split_dataset(&corpus.impressions, gen.days, 0.1, seed).unwrap();
    (corpus, split)
}

fn small_config(mode: Mode) -> TrainConfig {
    TrainConfig {
        mode,
        epochs: 2,
        max_batches_per_epoch: 5,
        encoder: EncoderConfig {
            word_dim: 16,
            num_heads: 2,
            head_out_dim: 8,
            attention_query_dim: 16,
            ..EncoderConfig::default()
        },
        ..TrainConfig::default()
    }
}

fn first_samples(split: &DatasetSplit, n: usize) -> Vec<TrainingSample> {
    let mut rng = stream_rng(0, 0);
    split
        .train
        .iter()
        .filter_map(|s| sample_negatives(s, 4, &mut rng))
        .flatten()
        .take(n)
        .collect()
}

#[test]
fn fixed_batch_is_overfit() {
    let (corpus, split) = small_corpus(1);
    let config = TrainConfig {
        encoder: EncoderConfig {
            dropout_rate: 0.0,
            ..small_config(Mode::Baseline).encoder
        },
        ..small_config(Mode::Baseline)
    };
    let data = PreparedData::new(&corpus.news, &corpus.users, &config.encoder, 1).unwrap();
    let mut trainer = Trainer::new(config, &data).unwrap();
    let batch = first_samples(&split, 50);
    assert_eq!(batch.len(), 50);
    let first = trainer.train_step(&batch).unwrap().l_r;
    let mut last = first;
    for _ in 0..199 {
        last = trainer.train_step(&batch).unwrap().l_r;
    }
    assert!(last <= 0.5 * first, "L_R {first} -> {last}");
}

#[test]
fn same_seed_same_parameters() {
    let (corpus, split) = small_corpus(2);
    let config = small_config(Mode::FairRec);
    let data = PreparedData::new(&corpus.news, &corpus.users, &config.encoder, 1).unwrap();
    let run = || {
        let mut t = Trainer::new(config.clone(), &data).unwrap();
        let outcome = t.fit(&split).unwrap();
        (t.store.checksum(), serde_json::to_string(&outcome).unwrap())
    };
    assert_eq!(run(), run());
    let mut other = Trainer::new(TrainConfig { seed: 9, ..config.clone() }, &data).unwrap();
    other.fit(&split).unwrap();
    assert_ne!(other.store.checksum(), run().0);
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let (corpus, split) = small_corpus(3);
    let config = small_config(Mode::FairRec);
    let data = PreparedData::new(&corpus.news, &corpus.users, &config.encoder, 1).unwrap();
    let mut trainer = Trainer::new(config, &data).unwrap();
    trainer.fit(&split).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    trainer.checkpoint().save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    let store = loaded.store().unwrap();
    assert_eq!(store.checksum(), trainer.store.checksum());
    assert_eq!(loaded.config, trainer.config);
    assert_eq!(loaded.step, trainer.step());
    let reloaded = PreparedData::with_vocab(&corpus.news, &corpus.users, &loaded.config.encoder, loaded.vocab.clone()).unwrap();
    let a = trainer.snapshot();
    let b = ModelSnapshot::new(&loaded.model, &store, &reloaded);
    assert_eq!(a.news, b.news);
    assert_eq!(a.users.free, b.users.free);
    assert_eq!(a.users.bias, b.users.bias);
}

#[test]
fn unlabeled_batch_drops_attribute_terms() {
    let mut fx = fixture();
    fx.labels = vec![None; fx.labels.len()];
    let (store, model) = build(Mode::FairRec, 1);
    let mut g = Graph::new(&store);
    let b = model.forward(&mut g, &fx.batch(), Lambdas::default(), None).breakdown;
    assert!(b.no_labeled_users);
    assert_eq!((b.l_g, b.l_a), (0.0, 0.0));
    assert!((b.total - (b.l_r + 0.5 * b.l_d)).abs() < 1e-15);
}

#[test]
fn every_mode_trains_without_error() {
    let (corpus, split) = small_corpus(4);
    let data = PreparedData::new(&corpus.news, &corpus.users, &small_config(Mode::FairRec).encoder, 1).unwrap();
    for mode in Mode::ALL {
        let mut t = Trainer::new(small_config(mode), &data).unwrap();
        let outcome = t.fit(&split).unwrap();
        assert!(!outcome.epochs.is_empty());
        let last = outcome.epochs.last().unwrap();
        assert!(last.l_r.is_finite() && last.val_auc.is_finite(), "{mode}");
        if !mode.is_decomposed() {
            assert_eq!(last.l_d, 0.0);
        }
    }
}
