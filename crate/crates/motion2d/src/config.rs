//! The single JSON run configuration shared by every command.
//!
//! Missing keys take their defaults, so `{}` is a valid config. The
//! top-level `seed` drives every random component; the `seed` fields of
//! the nested model and trainer sections are overwritten from it.

use std::path::{Path, PathBuf};

use motion2d_core::cleaning::CleaningConfig;
use motion2d_core::denoiser::DenoiserConfig;
use motion2d_core::diffusion::{DiffusionConfig, SamplerConfig};
use motion2d_core::evaluator::EvalConfig;
use motion2d_core::seed::derive_seed;
use motion2d_core::text::TextConfig;
use motion2d_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::io::read_json;

const STREAM_DENOISER_INIT: u64 = 101;
const STREAM_TRAIN: u64 = 102;
const STREAM_EVALUATOR: u64 = 103;
pub const STREAM_SAMPLE: u64 = 104;
pub const STREAM_METRICS: u64 = 105;
pub const STREAM_SPLIT: u64 = 106;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    #[default]
    Standin,
    External,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextSettings {
    pub encoder: EncoderKind,
    pub standin: TextConfig,
    /// Directory of per-caption feature files, for `encoder = "external"`.
    pub external_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSettings {
    /// Condition on the first frames of the matching reference motion.
    pub reference: bool,
    /// Length for caption-driven sampling.
    pub frames: usize,
    pub frame_size: (f64, f64),
}

impl Default for SampleSettings {
    fn default() -> Self {
        Self { reference: false, frames: 60, frame_size: (640.0, 480.0) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub r_precision_batch: usize,
    pub r_precision_trials: usize,
    pub diversity_pairs: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { r_precision_batch: 32, r_precision_trials: 1000, diversity_pairs: 300 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderStyle {
    /// Output pixels per motion pixel.
    pub scale: f64,
    pub line_width: f64,
    pub joint_radius: f64,
    pub fps: u16,
    pub colors: [String; 2],
    pub background: String,
}

impl Default for RenderStyle {
    fn default() -> Self {
        Self {
            scale: 1.0,
            line_width: 3.0,
            joint_radius: 4.0,
            fps: 10,
            colors: ["#d62728".into(), "#1f77b4".into()],
            background: "#ffffff".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Pad training sequences to this many frames.
    pub pad_to: Option<usize>,
    pub test_fraction: f64,
    pub cleaning: CleaningConfig,
    pub text: TextSettings,
    pub denoiser: DenoiserConfig,
    pub diffusion: DiffusionConfig,
    pub train: TrainConfig,
    pub evaluator: EvalConfig,
    pub sampler: SamplerConfig,
    pub sample: SampleSettings,
    pub eval: EvalSettings,
    pub render: RenderStyle,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            pad_to: None,
            test_fraction: 0.2,
            cleaning: CleaningConfig::default(),
            text: TextSettings::default(),
            denoiser: DenoiserConfig::default(),
            diffusion: DiffusionConfig::default(),
            train: TrainConfig::default(),
            evaluator: EvalConfig::default(),
            sampler: SamplerConfig::default(),
            sample: SampleSettings::default(),
            eval: EvalSettings::default(),
            render: RenderStyle::default(),
        }
    }
}

impl RunConfig {
    /// Read `path` (defaults when absent), apply a seed override and
    /// propagate the seed into the component configs.
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> CliResult<Self> {
        let mut cfg: Self = match path {
            Some(p) => read_json(p)?,
            None => Self::default(),
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.propagate_seed();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn propagate_seed(&mut self) {
        self.denoiser.seed = derive_seed(self.seed, STREAM_DENOISER_INIT, 0);
        self.train.seed = derive_seed(self.seed, STREAM_TRAIN, 0);
        self.evaluator.seed = derive_seed(self.seed, STREAM_EVALUATOR, 0);
    }

    pub fn validate(&self) -> CliResult<()> {
        self.cleaning.validate()?;
        self.denoiser.validate()?;
        self.train.validate()?;
        self.evaluator.validate()?;
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(CliError::Usage(format!("test_fraction {} must lie in (0, 1)", self.test_fraction)));
        }
        if self.text.encoder == EncoderKind::External && self.text.external_dir.is_none() {
            return Err(CliError::Usage("text.encoder \"external\" needs text.external_dir".into()));
        }
        let e = &self.eval;
        if e.r_precision_batch < 2 || e.r_precision_trials == 0 || e.diversity_pairs == 0 {
            return Err(CliError::Usage(format!("invalid eval settings {e:?}")));
        }
        Ok(())
    }
}
