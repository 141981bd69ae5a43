//! Two-stage training: diffusion pretraining, then fine-tuning with the
//! evaluator-based terms. Every random draw derives from the seed and the
//! global step, so runs are reproducible and resumable.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::batch::{prepare_pair, LossMask, MotionPair, ReferenceFrames};
use crate::denoiser::{ConditionedDenoiser, Denoiser};
use crate::diffusion::{gaussian_pair, q_sample_pair, sample_with, NoiseSchedule, SamplerConfig};
use crate::error::{invalid, Error, Result};
use crate::evaluator::{EvalExample, EvalModel};
use crate::losses::{motion_fid_loss, text_fid_loss, total_loss, LossTerms, LossValues, LossWeights, PairVars, Stage};
use crate::motion::{MotionSample, SkeletonTopology};
use crate::nn::Binding;
use crate::optim::{clip_global_norm, AdamWConfig, AdamWState};
use crate::seed::derive_seed;
use crate::tensor::Tensor;
use crate::text::{FeatureSource, TextFeatures};

const STREAM_SHUFFLE: u64 = 1;
const STREAM_STEP: u64 = 2;
const STREAM_PROBE: u64 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: AdamWConfig,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub grad_clip: f64,
    /// Probability of training on the null caption.
    pub caption_dropout: f64,
    /// Probability of conditioning on the first frame.
    pub reference_rate: f64,
    /// Checkpoint every this many steps; 0 checkpoints only at stage ends.
    pub checkpoint_every: usize,
    pub lr_schedule: LrSchedule,
}

/// Learning-rate multiplier over the whole planned run of both stages.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine from 1 down to `floor`.
    Cosine { floor: f64 },
}

impl LrSchedule {
    pub fn factor(&self, step: u64, total_steps: u64) -> f64 {
        match *self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine { floor } => {
                let p = if total_steps == 0 { 1.0 } else { (step as f64 / total_steps as f64).min(1.0) };
                floor + (1.0 - floor) * 0.5 * (1.0 + libm::cos(core::f64::consts::PI * p))
            }
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: AdamWConfig::default(),
            stage1_epochs: 200,
            stage2_epochs: 100,
            batch_size: 8,
            seed: 0,
            weights: LossWeights::default(),
            grad_clip: 1.0,
            caption_dropout: 0.0,
            reference_rate: 0.0,
            checkpoint_every: 0,
            lr_schedule: LrSchedule::Constant,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        self.weights.validate()?;
        if self.batch_size == 0 {
            return Err(invalid!("batch_size must be positive"));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::OutOfRange(format!("grad_clip {} must be positive", self.grad_clip)));
        }
        for (name, p) in [("caption_dropout", self.caption_dropout), ("reference_rate", self.reference_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::OutOfRange(format!("{name} {p} outside [0, 1]")));
            }
        }
        if let LrSchedule::Cosine { floor } = self.lr_schedule {
            if !(0.0..=1.0).contains(&floor) {
                return Err(Error::OutOfRange(format!("lr floor {floor} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Optimizer steps in the planned run over `examples` training pairs.
    pub fn total_steps(&self, examples: usize) -> u64 {
        ((self.stage1_epochs + self.stage2_epochs) * examples.div_ceil(self.batch_size)) as u64
    }
}

/// One prepared training pair in model coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainExample {
    pub source_id: String,
    pub pair: MotionPair,
    pub mask: LossMask,
    pub text: TextFeatures,
}

impl TrainExample {
    /// From a normalized, count-tagged sample.
    pub fn from_sample(sample: &MotionSample, text: &dyn FeatureSource, pad_to: Option<usize>) -> Result<Self> {
        let (pair, mask) = prepare_pair(sample, pad_to)?;
        Ok(Self { source_id: sample.source_id.clone(), pair, mask, text: text.features(&sample.caption)? })
    }

    pub fn eval_example(&self) -> EvalExample {
        EvalExample { text: self.text.clone(), motion: self.pair.clone(), frames: self.mask.frames.clone() }
    }
}

/// Optimizer and loop counters; together with the weights this is all that
/// is needed to resume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub stage: Stage,
    pub epoch: u64,
    pub step: u64,
    pub optimizer: AdamWState,
}

impl TrainState {
    pub fn new(model: &Denoiser) -> Self {
        Self { stage: Stage::First, epoch: 0, step: 0, optimizer: AdamWState::new(model.params()) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub stage: Stage,
    pub epoch: u64,
    pub step: u64,
    pub losses: LossValues,
    pub grad_norm: f64,
}

/// Callbacks invoked by the loop.
pub trait TrainObserver {
    fn on_step(&mut self, _log: &StepLog) -> Result<()> {
        Ok(())
    }

    fn on_checkpoint(&mut self, _model: &Denoiser, _state: &TrainState) -> Result<()> {
        Ok(())
    }
}

/// Observer that ignores everything.
pub struct Silent;

impl TrainObserver for Silent {}

/// Observer that keeps every step log.
#[derive(Default)]
pub struct History {
    pub steps: Vec<StepLog>,
}

impl TrainObserver for History {
    fn on_step(&mut self, log: &StepLog) -> Result<()> {
        self.steps.push(*log);
        Ok(())
    }
}

/// Per-example draws of one step.
struct Draw {
    t: usize,
    noise: MotionPair,
    null_caption: bool,
    reference: bool,
}

fn draw(rng: &mut ChaCha8Rng, schedule: &NoiseSchedule, frames: usize, cfg: &TrainConfig) -> Draw {
    let t = rng.random_range(0..schedule.num_steps());
    let noise = gaussian_pair(rng, frames);
    let null_caption = cfg.caption_dropout > 0.0 && rng.random::<f64>() < cfg.caption_dropout;
    let reference = cfg.reference_rate > 0.0 && rng.random::<f64>() < cfg.reference_rate;
    Draw { t, noise, null_caption, reference }
}

#[allow(clippy::too_many_arguments)]
fn example_loss(
    tape: &mut Tape,
    model: &Denoiser,
    binding: &Binding,
    eval: Option<(&EvalModel, &Binding)>,
    ex: &TrainExample,
    d: &Draw,
    schedule: &NoiseSchedule,
    stage: Stage,
    weights: &LossWeights,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<(Var, LossTerms)> {
    let topology = SkeletonTopology::coco17();
    let noised = q_sample_pair(&ex.pair, d.t, &d.noise, schedule)?;
    let text = if d.null_caption { TextFeatures::null(ex.text.dim()) } else { ex.text.clone() };
    let reference = d.reference.then(|| ex.pair.first_frames());
    let input = PairVars::constant(tape, &noised);
    let pred = model.denoise_pair(tape, binding, input, d.t, &text, reference.as_ref(), &ex.mask.frames, dropout_rng);
    let mut terms = LossTerms::first_stage(tape, pred, &ex.pair, &ex.mask, &topology, weights.contact_threshold)?;
    if stage == Stage::Second {
        let (em, eb) = eval.ok_or_else(|| invalid!("second stage needs an evaluator"))?;
        if weights.text_fid > 0.0 {
            terms.text_fid = Some(text_fid_loss(tape, em, eb, &ex.text, pred, &ex.mask.frames)?);
        }
        if weights.motion_fid > 0.0 {
            terms.motion_fid = Some(motion_fid_loss(tape, em, eb, &ex.pair, pred, &ex.mask.frames)?);
        }
    }
    let total = total_loss(tape, stage, &terms, weights)?;
    Ok((total, terms))
}

fn average_values(values: &[LossValues]) -> LossValues {
    let n = values.len().max(1) as f64;
    let mean = |f: fn(&LossValues) -> f64| values.iter().map(f).sum::<f64>() / n;
    let mean_opt = |f: fn(&LossValues) -> Option<f64>| {
        let present: Vec<f64> = values.iter().filter_map(f).collect();
        (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
    };
    LossValues {
        total: mean(|v| v.total),
        recon: mean(|v| v.recon),
        bone_length: mean(|v| v.bone_length),
        velocity: mean(|v| v.velocity),
        distance_map: mean(|v| v.distance_map),
        joint_awareness: mean(|v| v.joint_awareness),
        text_fid: mean_opt(|v| v.text_fid),
        motion_fid: mean_opt(|v| v.motion_fid),
    }
}

/// One optimizer step over `batch`. Leaves model and state untouched when
/// the loss or gradient is not finite.
#[allow(clippy::too_many_arguments)]
fn train_step(
    model: &mut Denoiser,
    state: &mut TrainState,
    batch: &[&TrainExample],
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
    stage: Stage,
    weights: &LossWeights,
    eval: Option<&EvalModel>,
    total_steps: u64,
) -> Result<StepLog> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_STEP, state.step));
    let draws: Vec<Draw> = batch.iter().map(|ex| draw(&mut rng, schedule, ex.pair.frames(), cfg)).collect();

    let mut tape = Tape::new();
    let binding = model.params().bind(&mut tape, true);
    let eval_binding = eval.map(|e| (e, e.params().bind(&mut tape, false)));
    let mut totals = Vec::with_capacity(batch.len());
    let mut values = Vec::with_capacity(batch.len());
    for (ex, d) in batch.iter().zip(&draws) {
        let eb = eval_binding.as_ref().map(|(e, b)| (*e, b));
        let (total, terms) =
            example_loss(&mut tape, model, &binding, eb, ex, d, schedule, stage, weights, Some(&mut rng))?;
        values.push(terms.values(&tape, total));
        totals.push(total);
    }
    let stacked = tape.concat_rows(&totals);
    let sum = tape.sum(stacked);
    let loss = tape.scale(sum, 1.0 / batch.len() as f64);
    let mut losses = average_values(&values);
    losses.total = tape.value(loss).item();
    if !losses.total.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss at step {} (epoch {}); weights left at the last good step",
            state.step, state.epoch
        )));
    }
    let mut grads = tape.backward(loss);
    let mut g = binding.gradients(&mut grads, model.params());
    let grad_norm = clip_global_norm(&mut g, cfg.grad_clip);
    if !grad_norm.is_finite() {
        return Err(Error::NonFinite(format!("gradient at step {}; weights left at the last good step", state.step)));
    }
    let mut opt = cfg.optimizer;
    opt.learning_rate *= cfg.lr_schedule.factor(state.step, total_steps);
    state.optimizer.update(&opt, model.params_mut(), &g);
    let log = StepLog { stage, epoch: state.epoch, step: state.step, losses, grad_norm };
    state.step += 1;
    Ok(log)
}

#[allow(clippy::too_many_arguments)]
fn run_epochs(
    model: &mut Denoiser,
    state: &mut TrainState,
    data: &[TrainExample],
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
    stage: Stage,
    end_epoch: u64,
    eval: Option<&EvalModel>,
    observer: &mut dyn TrainObserver,
) -> Result<()> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(invalid!("training set is empty"));
    }
    if schedule.num_steps() != model.num_timesteps() {
        return Err(invalid!("schedule has {} steps, model expects {}", schedule.num_steps(), model.num_timesteps()));
    }
    let text_dim = model.text_dim();
    if let Some(ex) = data.iter().find(|ex| ex.text.dim() != text_dim) {
        return Err(Error::Shape(format!("{}: text width {} vs model {text_dim}", ex.source_id, ex.text.dim())));
    }
    state.stage = stage;
    let weights = cfg.weights;
    let total_steps = cfg.total_steps(data.len());
    while state.epoch < end_epoch {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_SHUFFLE, state.epoch)));
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&TrainExample> = chunk.iter().map(|&i| &data[i]).collect();
            let log = train_step(model, state, &batch, schedule, cfg, stage, &weights, eval, total_steps)?;
            observer.on_step(&log)?;
            if cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every as u64 == 0 {
                observer.on_checkpoint(model, state)?;
            }
        }
        state.epoch += 1;
    }
    observer.on_checkpoint(model, state)
}

/// Diffusion pretraining up to `stage1_epochs` total epochs. Resumes from
/// whatever point `state` records.
pub fn stage1_train(
    model: &mut Denoiser,
    state: &mut TrainState,
    data: &[TrainExample],
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<()> {
    if state.stage == Stage::Second {
        return Err(invalid!("state is already in the second stage"));
    }
    run_epochs(model, state, data, schedule, cfg, Stage::First, cfg.stage1_epochs as u64, None, observer)
}

/// Fine-tuning for `stage2_epochs` further epochs after the first stage,
/// with the evaluator frozen. Step and epoch counters continue from the
/// first stage.
pub fn stage2_finetune(
    model: &mut Denoiser,
    state: &mut TrainState,
    data: &[TrainExample],
    schedule: &NoiseSchedule,
    eval: &EvalModel,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<()> {
    if state.stage == Stage::First && state.epoch < cfg.stage1_epochs as u64 {
        return Err(invalid!("first stage incomplete: epoch {} of {}", state.epoch, cfg.stage1_epochs));
    }
    if eval.text_dim() != model.text_dim() {
        return Err(Error::Shape(format!("evaluator text width {} vs model {}", eval.text_dim(), model.text_dim())));
    }
    let before = eval.params().fingerprint();
    let end = (cfg.stage1_epochs + cfg.stage2_epochs) as u64;
    run_epochs(model, state, data, schedule, cfg, Stage::Second, end, Some(eval), observer)?;
    if eval.params().fingerprint() != before {
        return Err(invalid!("evaluator weights changed during fine-tuning"));
    }
    Ok(())
}

/// Fixed evaluation draws for [`probe_losses`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    /// Evenly spaced timesteps per example.
    pub per_example: usize,
    pub seed: u64,
    /// Condition on each example's first frames.
    pub reference: bool,
}

/// Mean loss components over a fixed set of (example, timestep, noise)
/// draws.
pub fn probe_losses(
    model: &Denoiser,
    data: &[TrainExample],
    schedule: &NoiseSchedule,
    eval: Option<&EvalModel>,
    weights: &LossWeights,
    probe: &ProbeConfig,
) -> Result<LossValues> {
    let ProbeConfig { per_example, seed, reference } = *probe;
    if data.is_empty() || per_example == 0 {
        return Err(invalid!("probe needs data and at least one draw per example"));
    }
    let stage = if eval.is_some() { Stage::Second } else { Stage::First };
    let mut values = Vec::with_capacity(data.len() * per_example);
    for (i, ex) in data.iter().enumerate() {
        for k in 0..per_example {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_PROBE, (i * per_example + k) as u64));
            let t = (2 * k + 1) * schedule.num_steps() / (2 * per_example);
            let d = Draw { t, noise: gaussian_pair(&mut rng, ex.pair.frames()), null_caption: false, reference };
            let mut tape = Tape::new();
            let binding = model.params().bind(&mut tape, false);
            let eb = eval.map(|e| (e, e.params().bind(&mut tape, false)));
            let (total, terms) =
                example_loss(&mut tape, model, &binding, eb.as_ref().map(|(e, b)| (*e, b)), ex, &d, schedule, stage, weights, None)?;
            values.push(terms.values(&tape, total));
        }
    }
    Ok(average_values(&values))
}

/// Generate a pair of `frames` frames for one caption.
pub fn sample_motion(
    model: &Denoiser,
    schedule: &NoiseSchedule,
    text: &TextFeatures,
    frames: usize,
    reference: Option<ReferenceFrames>,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<MotionPair> {
    if frames == 0 || frames > model.config().max_len {
        return Err(invalid!("length {frames} outside [1, {}]", model.config().max_len));
    }
    let predictor = ConditionedDenoiser {
        model,
        text: text.clone(),
        reference,
        frames: alloc::vec![true; frames],
        guidance: cfg.guidance,
    };
    sample_with(&predictor, schedule, cfg, frames, seed)
}

/// Evaluator-space embeddings of `motions`, one row each.
pub fn embed_motions(eval: &EvalModel, motions: &[(MotionPair, Vec<bool>)]) -> Result<Tensor> {
    let rows: Result<Vec<Vec<f64>>> = motions.iter().map(|(m, f)| eval.embed_motion(m, f)).collect();
    crate::metrics::stack_rows(&rows?)
}
