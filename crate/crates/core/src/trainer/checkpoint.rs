use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::datagen::Vocab;
use crate::error::{Error, Result};
use crate::fairrec::FairRecModel;
use crate::params::ParamStore;
use crate::rng::Rng;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

/// Everything needed to score with, or resume from, a trained model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub model: FairRecModel,
    pub vocab: Vocab,
    pub params: Vec<NamedTensor>,
    pub rng: Rng,
    pub step: u64,
    pub epoch: usize,
}

impl Checkpoint {
    pub fn new(
        config: &TrainConfig,
        model: &FairRecModel,
        store: &ParamStore,
        vocab: &Vocab,
        rng: &Rng,
        step: u64,
        epoch: usize,
    ) -> Self {
        let params = store
            .ids()
            .map(|id| {
                let v = store.get(id);
                NamedTensor {
                    name: store.name(id).to_string(),
                    shape: [v.nrows(), v.ncols()],
                    data: v.iter().copied().collect(),
                }
            })
            .collect();
        Self {
            version: CHECKPOINT_VERSION,
            config: config.clone(),
            model: model.clone(),
            vocab: vocab.clone(),
            params,
            rng: rng.clone(),
            step,
            epoch,
        }
    }

    /// Rebuild the parameter store; ids follow the stored order.
    pub fn store(&self) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        for t in &self.params {
            let value = Array2::from_shape_vec((t.shape[0], t.shape[1]), t.data.clone())
                .map_err(|e| Error::Checkpoint(format!("tensor {}: {e}", t.name)))?;
            store.add(t.name.clone(), value);
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut ckpt: Checkpoint = serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "{}: unsupported version {} (expected {CHECKPOINT_VERSION})",
                path.display(),
                ckpt.version
            )));
        }
        ckpt.vocab = ckpt.vocab.reindex();
        Ok(ckpt)
    }
}
