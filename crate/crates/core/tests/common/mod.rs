#![allow(dead_code)]

use fairrec_core::datagen::EncodedTitle;
use fairrec_core::encoders::EncoderConfig;
use fairrec_core::fairrec::{BatchInput, FairRecModel, Mode};
use fairrec_core::params::ParamStore;
use fairrec_core::rng::stream_rng;

pub const VOCAB: usize = 12;

pub fn tiny_encoder() -> EncoderConfig {
    EncoderConfig {
        word_dim: 4,
        num_heads: 2,
        head_out_dim: 2,
        attention_query_dim: 3,
        dropout_rate: 0.2,
        max_title_len: 5,
        max_history_len: 3,
    }
}

fn title(tokens: &[u32], max_len: usize) -> EncodedTitle {
    let mut indices = tokens.to_vec();
    let mut mask = vec![true; tokens.len()];
    indices.resize(max_len, 0);
    mask.resize(max_len, false);
    EncodedTitle { indices, mask }
}

/// Six titles of uneven length, three users (one cold start, one with a
/// history longer than the encoder keeps), two labeled.
pub struct Fixture {
    pub titles: Vec<EncodedTitle>,
    pub histories: Vec<Vec<usize>>,
    pub labels: Vec<Option<usize>>,
    pub samples: Vec<(usize, Vec<usize>)>,
}

pub fn fixture() -> Fixture {
    let n = tiny_encoder().max_title_len;
    Fixture {
        titles: vec![
            title(&[1, 2, 3], n),
            title(&[4, 5], n),
            title(&[6, 7, 8, 9, 10], n),
            title(&[11], n),
            title(&[2, 4, 6, 8], n),
            title(&[3, 3, 5], n),
        ],
        histories: vec![vec![0, 1], vec![], vec![2, 3, 4, 5]],
        labels: vec![Some(0), None, Some(1)],
        samples: vec![(0, vec![2, 3, 5]), (1, vec![0, 4, 1]), (2, vec![1, 0, 3]), (0, vec![4, 5, 2])],
    }
}

impl Fixture {
    pub fn batch(&self) -> BatchInput<'_> {
        BatchInput {
            titles: self.titles.iter().collect(),
            histories: self.histories.clone(),
            labels: self.labels.clone(),
            samples: self.samples.clone(),
        }
    }
}

pub fn build(mode: Mode, seed: u64) -> (ParamStore, FairRecModel) {
    let mut store = ParamStore::new();
    let model = FairRecModel::new(&mut store, mode, VOCAB, &tiny_encoder(), 2, &mut stream_rng(seed, 0)).unwrap();
    (store, model)
}
