//! Text feature sources selected by the run config.
//!
//! External features live in a directory of JSON files, one caption per
//! file: `{"caption": str, "local": [[f64; dim]; n_tokens], "pooled": [f64; dim]}`.
//! Captions are matched exactly, including the person-count prefix.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use motion2d_core::tensor::Tensor;
use motion2d_core::text::{FeatureSource, StandinText, TextFeatures};
use motion2d_core::Error;
use serde::Deserialize;

use crate::config::{EncoderKind, TextSettings};
use crate::error::{CliError, CliResult};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureFile {
    caption: String,
    local: Vec<Vec<f64>>,
    pooled: Vec<f64>,
}

/// Precomputed per-caption features loaded from a directory.
#[derive(Clone, Debug)]
pub struct ExternalFeatures {
    dim: usize,
    by_caption: BTreeMap<String, TextFeatures>,
}

impl ExternalFeatures {
    pub fn load(dir: &Path) -> CliResult<Self> {
        let mut paths: Vec<_> = fs::read_dir(dir)
            .map_err(|e| CliError::io(dir, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        let mut by_caption = BTreeMap::new();
        let mut dim = None;
        for path in &paths {
            let file: FeatureFile = crate::io::read_json(path)?;
            let cols = file.pooled.len();
            let rows = file.local.len();
            if file.local.iter().any(|r| r.len() != cols) {
                return Err(CliError::data(path, format!("every local row must have {cols} values")));
            }
            let local = Tensor::from_vec(rows, cols, file.local.concat())?;
            let features = TextFeatures::new(local, file.pooled).map_err(|e| CliError::data(path, e))?;
            if *dim.get_or_insert(cols) != cols {
                return Err(CliError::data(path, format!("feature width {cols} differs from {}", dim.unwrap_or(0))));
            }
            if by_caption.insert(file.caption.clone(), features).is_some() {
                return Err(CliError::data(path, format!("duplicate caption {:?}", file.caption)));
            }
        }
        let dim = dim.ok_or_else(|| CliError::data(dir, "no feature files found"))?;
        Ok(Self { dim, by_caption })
    }
}

impl FeatureSource for ExternalFeatures {
    fn dim(&self) -> usize {
        self.dim
    }

    fn features(&self, caption: &str) -> motion2d_core::Result<TextFeatures> {
        self.by_caption
            .get(caption)
            .cloned()
            .ok_or_else(|| Error::InvalidInput(format!("no precomputed features for caption {caption:?}")))
    }
}

pub fn feature_source(settings: &TextSettings) -> CliResult<Box<dyn FeatureSource>> {
    match settings.encoder {
        EncoderKind::Standin => Ok(Box::new(StandinText::new(&settings.standin)?)),
        EncoderKind::External => {
            let dir = settings
                .external_dir
                .as_deref()
                .ok_or_else(|| CliError::Usage("text.external_dir is not set".into()))?;
            Ok(Box::new(ExternalFeatures::load(dir)?))
        }
    }
}
