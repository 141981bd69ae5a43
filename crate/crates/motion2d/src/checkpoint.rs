//! Self-describing JSON checkpoints for the denoiser and the evaluator.

use std::fs;
use std::path::Path;

use motion2d_core::denoiser::Denoiser;
use motion2d_core::evaluator::EvalModel;
use motion2d_core::nn::ParamStore;
use motion2d_core::tensor::Tensor;
use motion2d_core::trainer::TrainState;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::io::write_text;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointKind {
    Denoiser,
    Evaluator,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub kind: CheckpointKind,
    pub config: RunConfig,
    pub text_dim: usize,
    pub num_timesteps: usize,
    pub params: Vec<NamedTensor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<TrainState>,
}

fn named(params: &ParamStore) -> Vec<NamedTensor> {
    params.iter().map(|(name, t)| NamedTensor { name: name.to_owned(), tensor: t.clone() }).collect()
}

impl Checkpoint {
    pub fn of_denoiser(model: &Denoiser, config: &RunConfig, state: Option<&TrainState>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            kind: CheckpointKind::Denoiser,
            config: config.clone(),
            text_dim: model.text_dim(),
            num_timesteps: model.num_timesteps(),
            params: named(model.params()),
            state: state.cloned(),
        }
    }

    pub fn of_evaluator(model: &EvalModel, config: &RunConfig) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            kind: CheckpointKind::Evaluator,
            config: config.clone(),
            text_dim: model.text_dim(),
            num_timesteps: 0,
            params: named(model.params()),
            state: None,
        }
    }

    fn store(&self) -> ParamStore {
        let mut store = ParamStore::new();
        for p in &self.params {
            store.add(p.name.clone(), p.tensor.clone());
        }
        store
    }

    fn expect(&self, kind: CheckpointKind) -> CliResult<()> {
        if self.kind != kind {
            return Err(CliError::Data(format!("expected a {kind:?} checkpoint, found {:?}", self.kind)));
        }
        Ok(())
    }

    /// Rebuild the denoiser; shapes are checked against the echoed config.
    pub fn denoiser(&self) -> CliResult<Denoiser> {
        self.expect(CheckpointKind::Denoiser)?;
        Ok(Denoiser::from_params(&self.config.denoiser, self.text_dim, self.num_timesteps, &self.store())?)
    }

    pub fn evaluator(&self) -> CliResult<EvalModel> {
        self.expect(CheckpointKind::Evaluator)?;
        Ok(EvalModel::from_params(&self.config.evaluator, self.text_dim, &self.store())?)
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string(self).expect("checkpoints always serialize");
        text.push('\n');
        text
    }

    /// Write the file and return its SHA-256 in hex.
    pub fn save(&self, path: &Path) -> CliResult<String> {
        let text = self.to_json();
        write_text(path, &text)?;
        Ok(sha256_hex(text.as_bytes()))
    }

    /// Read a checkpoint and the SHA-256 of its bytes.
    pub fn load(path: &Path) -> CliResult<(Self, String)> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        let ckpt: Self = serde_json::from_slice(&bytes).map_err(|e| CliError::data(path, e))?;
        if ckpt.format_version != FORMAT_VERSION {
            return Err(CliError::data(path, format!("unsupported format_version {}", ckpt.format_version)));
        }
        Ok((ckpt, sha256_hex(&bytes)))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use motion2d_core::denoiser::DenoiserConfig;

    fn small() -> (Denoiser, RunConfig) {
        let mut cfg = RunConfig::default();
        cfg.denoiser = DenoiserConfig { num_layers: 1, model_dim: 8, num_heads: 2, max_len: 8, ..cfg.denoiser };
        (Denoiser::new(&cfg.denoiser, 6, 20).unwrap(), cfg)
    }

    #[test]
    fn round_trip_restores_weights_and_hash() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.json");
        let (model, cfg) = small();
        let hash = Checkpoint::of_denoiser(&model, &cfg, None).save(&path).unwrap();
        let (loaded, hash2) = Checkpoint::load(&path).unwrap();
        assert_eq!(hash, hash2);
        assert_eq!(loaded.denoiser().unwrap().params(), model.params());
        assert!(loaded.evaluator().is_err());
    }

    #[test]
    fn shape_mismatch_is_a_data_error() {
        let (model, cfg) = small();
        let mut ckpt = Checkpoint::of_denoiser(&model, &cfg, None);
        ckpt.config.denoiser.model_dim = 12;
        assert!(matches!(ckpt.denoiser(), Err(CliError::Data(_))));
    }
}
