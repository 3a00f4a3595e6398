//! JSON checkpoints: named parameter tensors plus the settings needed to
//! rebuild the model and its input features.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decompose::DecompositionConfig;
use crate::error::{Error, Result};
use crate::nn::Tensor2;

use super::aa::{AAModel, ModelConfig};
use super::train::TrainConfig;

const FORMAT: &str = "aa-forecast-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: ModelConfig,
    pub decomposition: DecompositionConfig,
    pub training: Option<TrainConfig>,
    pub params: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_model(
        model: &AAModel,
        decomposition: DecompositionConfig,
        training: Option<TrainConfig>,
    ) -> Self {
        let store = model.store();
        let params = store
            .ids()
            .map(|id| {
                let t = store.value(id);
                NamedTensor {
                    name: store.name(id).to_string(),
                    rows: t.rows(),
                    cols: t.cols(),
                    values: t.data().to_vec(),
                }
            })
            .collect();
        Self {
            format: FORMAT.into(),
            version: VERSION,
            model: *model.config(),
            decomposition,
            training,
            params,
        }
    }

    pub fn to_model(&self) -> Result<AAModel> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        let mut model = AAModel::new(self.model, 0)?;
        let names = model.store().names().to_vec();
        if names.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                names.len(),
                self.params.len()
            )));
        }
        let mut values = Vec::with_capacity(names.len());
        for (name, p) in names.iter().zip(&self.params) {
            if *name != p.name {
                return Err(Error::Checkpoint(format!(
                    "expected parameter `{name}`, found `{}`",
                    p.name
                )));
            }
            let t = Tensor2::from_vec(p.rows, p.cols, p.values.clone())
                .map_err(|e| Error::Checkpoint(format!("parameter `{name}`: {e}")))?;
            values.push(t);
        }
        model
            .store_mut()
            .load_values(values)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self).map_err(|e| Error::Checkpoint(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}
