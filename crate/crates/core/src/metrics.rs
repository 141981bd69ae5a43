//! Distribution and retrieval metrics over embedding sets: Fréchet
//! distance, R-precision, multimodal distance and diversity.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

/// Mean and unbiased covariance of a feature population.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianStats {
    pub mu: Vec<f64>,
    /// `d x d`, symmetric.
    pub sigma: Tensor,
    pub n: usize,
}

impl GaussianStats {
    pub fn new(mu: Vec<f64>, sigma: Tensor, n: usize) -> Result<Self> {
        let d = mu.len();
        if sigma.shape() != (d, d) {
            return Err(Error::Shape(format!("covariance {:?} for mean of length {d}", sigma.shape())));
        }
        if n < 2 {
            return Err(invalid!("gaussian statistics need n >= 2, got {n}"));
        }
        for i in 0..d {
            for j in 0..i {
                let (x, y) = (sigma.get(i, j), sigma.get(j, i));
                if (x - y).abs() > 1e-9 * (1.0 + x.abs().max(y.abs())) {
                    return Err(invalid!("covariance not symmetric at ({i}, {j})"));
                }
            }
        }
        Ok(Self { mu, sigma, n })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Sample mean and unbiased covariance of the rows of `features`.
pub fn fit_gaussian(features: &Tensor) -> Result<GaussianStats> {
    let (n, d) = features.shape();
    if n < 2 {
        return Err(invalid!("need at least 2 feature rows, got {n}"));
    }
    if !features.is_finite() {
        return Err(Error::NonFinite(alloc::string::String::from("features")));
    }
    let mut mu = alloc::vec![0.0; d];
    for r in 0..n {
        for (m, v) in mu.iter_mut().zip(features.row(r)) {
            *m += v;
        }
    }
    for m in &mut mu {
        *m /= n as f64;
    }
    let centered = Tensor::from_fn(n, d, |r, c| features.get(r, c) - mu[c]);
    let mut sigma = centered.matmul_tn(&centered).scale(1.0 / (n - 1) as f64);
    for i in 0..d {
        for j in 0..i {
            let avg = 0.5 * (sigma.get(i, j) + sigma.get(j, i));
            sigma.set(i, j, avg);
            sigma.set(j, i, avg);
        }
    }
    Ok(GaussianStats { mu, sigma, n })
}

fn to_matrix(t: &Tensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.rows(), t.cols(), t.data())
}

fn symmetric_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let roots = eig.eigenvalues.map(|l| libm::sqrt(l.max(0.0)));
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2))`. The trace of the
/// cross term is taken from the eigenvalues of the symmetric matrix
/// `S_a^(1/2) S_b S_a^(1/2)`, with negative eigenvalues clamped to zero.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("dimension mismatch: {} vs {}", a.dim(), b.dim())));
    }
    if a.mu == b.mu && a.sigma == b.sigma {
        return Ok(0.0);
    }
    let mean_term: f64 = a.mu.iter().zip(&b.mu).map(|(x, y)| (x - y) * (x - y)).sum();
    let sa = to_matrix(&a.sigma);
    let sb = to_matrix(&b.sigma);
    let root_a = symmetric_sqrt(&sa);
    let mut inner = &root_a * &sb * &root_a;
    inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = SymmetricEigen::new(inner).eigenvalues.iter().map(|l| libm::sqrt(l.max(0.0))).sum();
    let fid = mean_term + sa.trace() + sb.trace() - 2.0 * cross;
    if !fid.is_finite() {
        return Err(Error::NonFinite(alloc::string::String::from("frechet distance")));
    }
    Ok(fid.max(0.0))
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

fn check_pairs(text: &Tensor, motion: &Tensor) -> Result<()> {
    if text.shape() != motion.shape() {
        return Err(Error::Shape(format!("text {:?} vs motion {:?} embeddings", text.shape(), motion.shape())));
    }
    Ok(())
}

/// Top-1/2/3 retrieval accuracy in percent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RPrecision {
    pub top1: f64,
    pub top2: f64,
    pub top3: f64,
}

/// For each seeded trial, draw one matched pair and `batch_size - 1`
/// distractor captions and return how many distractors lie strictly closer
/// to the motion than its own caption.
pub fn retrieval_ranks(
    text: &Tensor,
    motion: &Tensor,
    batch_size: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    check_pairs(text, motion)?;
    let n = text.rows();
    if batch_size < 1 || n < batch_size {
        return Err(invalid!("need at least batch_size = {batch_size} pairs, got {n}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ranks = Vec::with_capacity(trials);
    for _ in 0..trials {
        let target = rng.random_range(0..n);
        let own = euclidean(motion.row(target), text.row(target));
        let picks = index::sample(&mut rng, n - 1, batch_size - 1);
        let mut rank = 0;
        for p in picks.iter() {
            let j = if p >= target { p + 1 } else { p };
            if euclidean(motion.row(target), text.row(j)) < own {
                rank += 1;
            }
        }
        ranks.push(rank);
    }
    Ok(ranks)
}

pub fn r_precision(text: &Tensor, motion: &Tensor, batch_size: usize, trials: usize, seed: u64) -> Result<RPrecision> {
    if trials == 0 {
        return Err(invalid!("r_precision needs at least one trial"));
    }
    let ranks = retrieval_ranks(text, motion, batch_size, trials, seed)?;
    let pct = |k: usize| 100.0 * ranks.iter().filter(|&&r| r < k).count() as f64 / trials as f64;
    Ok(RPrecision { top1: pct(1), top2: pct(2), top3: pct(3) })
}

/// Mean Euclidean distance between matched text and motion embeddings.
pub fn mm_distance(text: &Tensor, motion: &Tensor) -> Result<f64> {
    check_pairs(text, motion)?;
    if text.rows() == 0 {
        return Err(invalid!("mm_distance needs at least one pair"));
    }
    let total: f64 = (0..text.rows()).map(|r| euclidean(text.row(r), motion.row(r))).sum();
    Ok(total / text.rows() as f64)
}

/// Mean Euclidean distance over `num_pairs` seeded pairs of distinct rows.
pub fn diversity(embeddings: &Tensor, num_pairs: usize, seed: u64) -> Result<f64> {
    let n = embeddings.rows();
    if n < 2 {
        return Err(invalid!("diversity needs at least 2 motions, got {n}"));
    }
    if num_pairs == 0 {
        return Err(invalid!("diversity needs at least one pair"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..num_pairs {
        let pick = index::sample(&mut rng, n, 2);
        total += euclidean(embeddings.row(pick.index(0)), embeddings.row(pick.index(1)));
    }
    Ok(total / num_pairs as f64)
}

/// Convenience: a `Tensor` of `rows` embedding vectors.
pub fn stack_rows(rows: &[Vec<f64>]) -> Result<Tensor> {
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::Shape(format!("ragged embedding rows (first has {d})")));
    }
    Tensor::from_vec(rows.len(), d, rows.iter().flatten().copied().collect())
}
