//! Versioned, self-describing model files (JSON).

use std::path::Path;

use ivdfm::diffcore::Tensor;
use ivdfm::vimodel::{ModelConfig, VIModel};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchivedParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelArchive {
    pub format_version: u32,
    pub config: ModelConfig,
    pub n: usize,
    /// Seed the parameters were initialized from.
    pub init_seed: u64,
    /// Seed of the training run, if any.
    pub train_seed: Option<u64>,
    pub params: Vec<ArchivedParam>,
}

impl ModelArchive {
    pub fn from_model(model: &VIModel, init_seed: u64, train_seed: Option<u64>) -> Self {
        let params = model
            .store
            .iter()
            .map(|(_, name, t)| ArchivedParam {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            })
            .collect();
        Self {
            format_version: FORMAT_VERSION,
            config: model.config.clone(),
            n: model.n,
            init_seed,
            train_seed,
            params,
        }
    }

    /// Rebuild the model skeleton from the config and overwrite every
    /// parameter, checking names and shapes.
    pub fn into_model(self) -> Result<VIModel> {
        if self.format_version != FORMAT_VERSION {
            return Err(CliError::Archive(format!(
                "archive format version {} is not supported (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        let mut model = VIModel::new(self.config, self.n, self.init_seed)?;
        if model.store.len() != self.params.len() {
            return Err(CliError::Archive(format!(
                "archive holds {} tensors, model has {}",
                self.params.len(),
                model.store.len()
            )));
        }
        for p in self.params {
            let id = model
                .store
                .find(&p.name)
                .ok_or_else(|| CliError::Archive(format!("unknown tensor {:?}", p.name)))?;
            let expected = model.store.get(id).shape().to_vec();
            if p.shape != expected {
                return Err(CliError::Archive(format!(
                    "tensor {:?}: archived shape {:?}, model expects {:?}",
                    p.name, p.shape, expected
                )));
            }
            let t = Tensor::new(p.shape, p.data).map_err(|e| CliError::Archive(format!("tensor {:?}: {e}", p.name)))?;
            model.store.set(id, t)?;
        }
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("archive serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Archive(e.to_string()))
    }
}

pub fn save_model(model: &VIModel, init_seed: u64, train_seed: Option<u64>, path: &Path) -> Result<()> {
    let text = ModelArchive::from_model(model, init_seed, train_seed).to_json();
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn load_model(path: &Path) -> Result<VIModel> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    ModelArchive::from_json(&text)?.into_model()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ivdfm::features::{context_matrix, ContextKind};
    use ivdfm::vimodel::{TrainConfig, Window};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> ModelConfig {
        ModelConfig {
            r: 2,
            encoder_hidden: 8,
            decoder_hidden: 8,
            ..ModelConfig::default()
        }
    }

    fn trained() -> (VIModel, Window) {
        let data = ivdfm::synthdata::gen_dynamic_dgp(40, 4, 2, 1, 3).unwrap();
        let u = context_matrix(ContextKind::Timestep, 0, 40, 40.0);
        let mut m = VIModel::new(small(), 4, 7).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            window: 20,
            seed: 1,
            ..TrainConfig::default()
        };
        m.train(&data.y, &u, &cfg).unwrap();
        (m, Window { y: data.y, u })
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (m, w) = trained();
        let text = ModelArchive::from_model(&m, 7, Some(1)).to_json();
        let back = ModelArchive::from_json(&text).unwrap().into_model().unwrap();
        assert_eq!(back.store, m.store);
        let noise = m.sample_noise(w.y.rows(), &mut ChaCha8Rng::seed_from_u64(5));
        let (a, b) = (m.elbo(&w, &noise).unwrap(), back.elbo(&w, &noise).unwrap());
        assert!((a.loss - b.loss).abs() < 1e-12);
        let again = ModelArchive::from_model(&back, 7, Some(1)).to_json();
        assert_eq!(text, again);
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let (m, _) = trained();
        let mut a = ModelArchive::from_model(&m, 7, None);
        a.format_version = 99;
        let err = a.into_model().unwrap_err().to_string();
        assert!(err.contains("version 99"), "{err}");
    }

    #[test]
    fn tampered_shape_names_the_tensor() {
        let (m, _) = trained();
        let mut a = ModelArchive::from_model(&m, 7, None);
        let idx = a.params.iter().position(|p| p.name == "decoder.l0.weight").unwrap();
        a.params[idx].shape = vec![3, 3];
        let err = a.into_model().unwrap_err().to_string();
        assert!(err.contains("decoder.l0.weight"), "{err}");
    }

    #[test]
    fn truncated_data_is_rejected() {
        let (m, _) = trained();
        let mut a = ModelArchive::from_model(&m, 7, None);
        a.params[0].data.pop();
        assert!(a.into_model().is_err());
        assert!(ModelArchive::from_json("{\"format_version\": 1}").is_err());
    }
}
