//! Synthetic sparse-feature dataset generator.
//!
//! Each feature vector gets `round(sparsity * d)` nonzero entries at uniform
//! random positions with values drawn from `[0, 1]`; the label is the sign of
//! `u' a` for a direction `u` drawn uniformly from `[-1, 1]^d`, fresh per
//! sample by default or shared across the dataset when `shared_u` is set.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Label encoding of the sign: `{-1, +1}` for regression-style tasks,
/// `{0, 1}` for logistic tasks (mapped via `(sign + 1) / 2`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelMode {
    PlusMinusOne,
    ZeroOne,
}

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub dimension: usize,
    pub size: usize,
    /// Fraction of nonzero feature entries, in (0, 1].
    pub sparsity: f64,
    pub label_mode: LabelMode,
    /// Draw one labeling direction for the whole dataset instead of one per
    /// sample. Per-sample directions add label noise; this switches it off.
    pub shared_u: bool,
    pub seed: u64,
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    if cfg.dimension == 0 || cfg.size == 0 {
        return Err(Error::InvalidConfig("dimension and size must be positive".into()));
    }
    if !(cfg.sparsity > 0.0 && cfg.sparsity <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "sparsity must lie in (0, 1], got {}",
            cfg.sparsity
        )));
    }
    let nnz = (cfg.sparsity * cfg.dimension as f64).round() as usize;
    if nnz == 0 {
        return Err(Error::InvalidConfig(format!(
            "sparsity {} rounds to zero nonzero entries at dimension {}",
            cfg.sparsity, cfg.dimension
        )));
    }

    let mut rng = stream_rng(cfg.seed, Stream::DataGen);
    let shared_u: Option<Vec<f64>> = cfg.shared_u.then(|| draw_direction(cfg.dimension, &mut rng));

    let mut samples = Vec::with_capacity(cfg.size);
    for _ in 0..cfg.size {
        let mut features = vec![0.0; cfg.dimension];
        for pos in rand::seq::index::sample(&mut rng, cfg.dimension, nnz) {
            features[pos] = rng.gen_range(0.0..1.0);
        }
        let u_local;
        let u = match &shared_u {
            Some(u) => u,
            None => {
                u_local = draw_direction(cfg.dimension, &mut rng);
                &u_local
            }
        };
        let t: f64 = u.iter().zip(&features).map(|(a, b)| a * b).sum();
        let sign = if t >= 0.0 { 1.0 } else { -1.0 };
        let label = match cfg.label_mode {
            LabelMode::PlusMinusOne => sign,
            LabelMode::ZeroOne => (sign + 1.0) / 2.0,
        };
        samples.push(Sample { features, label });
    }
    Dataset::new(samples, cfg.dimension)
}

fn draw_direction(dimension: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..dimension).map(|_| rng.gen_range(-1.0..1.0)).collect()
}
