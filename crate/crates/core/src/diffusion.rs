//! Noise schedules, forward noising, and the deterministic/stochastic DDIM
//! sampler for an x0-predicting network.

use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::batch::{LossMask, MotionPair};
use crate::error::{invalid, Error, Result};
use crate::motion::COORDS_PER_CHARACTER;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Cosine,
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionConfig {
    pub num_steps: usize,
    pub schedule: ScheduleKind,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self { num_steps: 1000, schedule: ScheduleKind::Cosine }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

const COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

impl NoiseSchedule {
    /// Schedule from per-step retention factors, each in (0, 1]. Only the
    /// factor range is checked; see [`build_schedule`] for the full checks.
    pub fn from_alphas(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(invalid!("schedule needs at least one step"));
        }
        if let Some((i, a)) = alpha.iter().enumerate().find(|(_, a)| !(**a > 0.0 && **a <= 1.0)) {
            return Err(Error::OutOfRange(format!("alpha[{i}] = {a} outside (0, 1]")));
        }
        let mut alpha_bar = Vec::with_capacity(alpha.len());
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        Ok(Self { alpha, alpha_bar })
    }

    pub fn num_steps(&self) -> usize {
        self.alpha.len()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_bar(&self) -> &[f64] {
        &self.alpha_bar
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t >= self.num_steps() {
            return Err(Error::OutOfRange(format!("timestep {t} outside [0, {})", self.num_steps())));
        }
        Ok(())
    }

    /// Strictly decreasing cumulative products that start near 1 and end
    /// near 0.
    pub fn check_invariants(&self) -> Result<()> {
        let ab = &self.alpha_bar;
        if let Some(i) = ab.windows(2).position(|w| w[1] >= w[0]) {
            return Err(invalid!("alpha_bar not strictly decreasing at step {}", i + 1));
        }
        if ab[0] < 0.99 {
            return Err(invalid!("alpha_bar[0] = {} is below 0.99", ab[0]));
        }
        let last = ab[ab.len() - 1];
        if last > 0.01 {
            return Err(invalid!("alpha_bar[T-1] = {last} is above 0.01"));
        }
        Ok(())
    }
}

fn cosine_betas(steps: usize) -> Vec<f64> {
    let f = |t: f64| {
        let c = libm::cos((t / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * core::f64::consts::FRAC_PI_2);
        c * c
    };
    (0..steps).map(|i| (1.0 - f((i + 1) as f64) / f(i as f64)).min(MAX_BETA)).collect()
}

fn linear_betas(steps: usize) -> Vec<f64> {
    let scale = 1000.0 / steps as f64;
    let (lo, hi) = (scale * 1e-4, (scale * 0.02).min(MAX_BETA));
    if steps == 1 {
        return alloc::vec![hi];
    }
    (0..steps).map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64).collect()
}

pub fn build_schedule(cfg: &DiffusionConfig) -> Result<NoiseSchedule> {
    if cfg.num_steps == 0 {
        return Err(invalid!("diffusion needs at least one step"));
    }
    let betas = match cfg.schedule {
        ScheduleKind::Cosine => cosine_betas(cfg.num_steps),
        ScheduleKind::Linear => linear_betas(cfg.num_steps),
    };
    let schedule = NoiseSchedule::from_alphas(betas.iter().map(|b| 1.0 - b).collect())?;
    schedule.check_invariants()?;
    Ok(schedule)
}

/// Closed-form marginal `sqrt(ab_t) s0 + sqrt(1 - ab_t) eps`.
pub fn q_sample(s0: &Tensor, t: usize, epsilon: &Tensor, schedule: &NoiseSchedule) -> Result<Tensor> {
    schedule.check_t(t)?;
    if s0.shape() != epsilon.shape() {
        return Err(Error::Shape(format!("noise {:?} vs signal {:?}", epsilon.shape(), s0.shape())));
    }
    let ab = schedule.alpha_bar[t];
    let (c0, c1) = (libm::sqrt(ab), libm::sqrt(1.0 - ab));
    Ok(s0.zip_map(epsilon, |x, e| c0 * x + c1 * e))
}

pub fn q_sample_pair(s0: &MotionPair, t: usize, epsilon: &MotionPair, schedule: &NoiseSchedule) -> Result<MotionPair> {
    Ok(MotionPair { a: q_sample(&s0.a, t, &epsilon.a, schedule)?, b: q_sample(&s0.b, t, &epsilon.b, schedule)? })
}

/// One Markov noising step `sqrt(a_t) s + sqrt(1 - a_t) eps`.
pub fn q_step(s_prev: &Tensor, t: usize, epsilon: &Tensor, schedule: &NoiseSchedule) -> Result<Tensor> {
    schedule.check_t(t)?;
    if s_prev.shape() != epsilon.shape() {
        return Err(Error::Shape(format!("noise {:?} vs signal {:?}", epsilon.shape(), s_prev.shape())));
    }
    let a = schedule.alpha[t];
    let (c0, c1) = (libm::sqrt(a), libm::sqrt(1.0 - a));
    Ok(s_prev.zip_map(epsilon, |x, e| c0 * x + c1 * e))
}

/// Masked mean squared error of an x0 prediction.
pub fn training_target(s0: &MotionPair, prediction: &MotionPair, mask: &LossMask) -> Result<f64> {
    if s0.a.shape() != prediction.a.shape() || s0.a.rows() != mask.len() {
        return Err(Error::Shape(format!(
            "prediction {:?}, target {:?}, mask {}",
            prediction.a.shape(),
            s0.a.shape(),
            mask.len()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0.0;
    for (c, (p, g)) in [(&prediction.a, &s0.a), (&prediction.b, &s0.b)].into_iter().enumerate() {
        for ((pv, gv), w) in p.data().iter().zip(g.data()).zip(mask.weights[c].data()) {
            sum += w * (pv - gv) * (pv - gv);
            count += w;
        }
    }
    Ok(if count > 0.0 { sum / count } else { 0.0 })
}

/// Deterministic (`eta = 0`) or stochastic DDIM update from `t` to `t_prev`
/// given an x0 estimate. `t_prev = None` denotes the clean end point with
/// cumulative retention 1. `z` supplies the fresh noise when `eta > 0`.
pub fn ddim_step(
    s_t: &Tensor,
    x0_hat: &Tensor,
    t: usize,
    t_prev: Option<usize>,
    schedule: &NoiseSchedule,
    eta: f64,
    z: Option<&Tensor>,
) -> Result<Tensor> {
    schedule.check_t(t)?;
    if s_t.shape() != x0_hat.shape() {
        return Err(Error::Shape(format!("state {:?} vs estimate {:?}", s_t.shape(), x0_hat.shape())));
    }
    if let Some(tp) = t_prev {
        if tp >= t {
            return Err(invalid!("t_prev {tp} must be below t {t}"));
        }
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::OutOfRange(format!("eta {eta} outside [0, 1]")));
    }
    let ab_t = schedule.alpha_bar[t];
    if ab_t >= 1.0 {
        return Err(invalid!("alpha_bar at t = {t} is 1; the implied noise is undefined"));
    }
    let ab_prev = t_prev.map_or(1.0, |tp| schedule.alpha_bar[tp]);
    let sigma = eta * libm::sqrt((1.0 - ab_prev) / (1.0 - ab_t)) * libm::sqrt((1.0 - ab_t / ab_prev).max(0.0));
    let (sq_t, sq_1mt) = (libm::sqrt(ab_t), libm::sqrt(1.0 - ab_t));
    let c_x0 = libm::sqrt(ab_prev);
    let c_eps = libm::sqrt((1.0 - ab_prev - sigma * sigma).max(0.0));
    let mut out = s_t.zip_map(x0_hat, |s, x| {
        let eps = (s - sq_t * x) / sq_1mt;
        c_x0 * x + c_eps * eps
    });
    if sigma > 0.0 {
        let z = z.ok_or_else(|| invalid!("stochastic DDIM step needs noise"))?;
        if z.shape() != s_t.shape() {
            return Err(Error::Shape(format!("noise {:?} vs state {:?}", z.shape(), s_t.shape())));
        }
        out = out.zip_map(z, |o, zv| o + sigma * zv);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub num_inference_steps: usize,
    pub eta: f64,
    /// Classifier-free guidance scale; `None` disables guidance.
    pub guidance: Option<f64>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { num_inference_steps: 50, eta: 0.0, guidance: None }
    }
}

impl SamplerConfig {
    pub fn validate(&self, schedule: &NoiseSchedule) -> Result<()> {
        if self.num_inference_steps == 0 || self.num_inference_steps > schedule.num_steps() {
            return Err(Error::OutOfRange(format!(
                "num_inference_steps {} outside [1, {}]",
                self.num_inference_steps,
                schedule.num_steps()
            )));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::OutOfRange(format!("eta {} outside [0, 1]", self.eta)));
        }
        if let Some(g) = self.guidance {
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("guidance scale {g}")));
            }
        }
        Ok(())
    }
}

/// Uniformly spaced timesteps `floor(i T / n)` for `i = 0..n`, ascending.
pub fn inference_timesteps(num_steps: usize, n: usize) -> Vec<usize> {
    (0..n).map(|i| i * num_steps / n).collect()
}

/// Anything that estimates the clean pair from a noised one.
pub trait X0Predictor {
    fn predict_x0(&self, s_t: &MotionPair, t: usize) -> Result<MotionPair>;
}

impl<F> X0Predictor for F
where
    F: Fn(&MotionPair, usize) -> Result<MotionPair>,
{
    fn predict_x0(&self, s_t: &MotionPair, t: usize) -> Result<MotionPair> {
        self(s_t, t)
    }
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Seeded standard-normal pair of `frames x 34` tensors.
pub fn gaussian_pair(rng: &mut ChaCha8Rng, frames: usize) -> MotionPair {
    let a = gaussian(rng, frames, COORDS_PER_CHARACTER);
    let b = gaussian(rng, frames, COORDS_PER_CHARACTER);
    MotionPair { a, b }
}

/// Run the DDIM chain from seeded noise and return the final clean pair (in
/// model coordinates).
pub fn sample_with(
    predictor: &dyn X0Predictor,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
    frames: usize,
    seed: u64,
) -> Result<MotionPair> {
    cfg.validate(schedule)?;
    if frames == 0 {
        return Err(invalid!("cannot sample zero frames"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = gaussian_pair(&mut rng, frames);
    let steps = inference_timesteps(schedule.num_steps(), cfg.num_inference_steps);
    for i in (0..steps.len()).rev() {
        let t = steps[i];
        let t_prev = if i == 0 { None } else { Some(steps[i - 1]) };
        let x0 = predictor.predict_x0(&state, t)?;
        if x0.a.shape() != state.a.shape() || !x0.is_finite() {
            return Err(Error::NonFinite(format!("predictor output at t = {t}")));
        }
        let z = if cfg.eta > 0.0 { Some(gaussian_pair(&mut rng, frames)) } else { None };
        state = MotionPair {
            a: ddim_step(&state.a, &x0.a, t, t_prev, schedule, cfg.eta, z.as_ref().map(|z| &z.a))?,
            b: ddim_step(&state.b, &x0.b, t, t_prev, schedule, cfg.eta, z.as_ref().map(|z| &z.b))?,
        };
    }
    Ok(state)
}

/// Classifier-free guidance combination `uncond + w (cond - uncond)`.
pub fn guide(cond: &MotionPair, uncond: &MotionPair, scale: f64) -> MotionPair {
    uncond.zip_map(cond, |u, c| u.zip_map(c, |uv, cv| uv + scale * (cv - uv)))
}
