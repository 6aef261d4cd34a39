//! Variance-reduced gradient estimator with periodic large-batch restarts.
//!
//! The estimate `v_k` is rebuilt from a fresh batch of size `s1` whenever the
//! iteration index is a multiple of the restart period, and otherwise updated
//! recursively with `v_k = v_{k-1} + grad(x_k; S2) - grad(x_{k-1}; S2)` on a
//! single batch of size `s2` evaluated at both points.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::objectives::Objective;

/// How batch indices are drawn from the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMode {
    /// Independent uniform draws; matches the i.i.d. sampling model.
    WithReplacement,
    /// Distinct uniform indices; with the batch size equal to the dataset
    /// size this makes every batch gradient exact, which the tests exploit.
    WithoutReplacement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchKind {
    Restart,
    Refresh,
}

/// The indices drawn for one estimator step, returned so downstream
/// consumers (the curvature-pair construction) can reuse the same batch
/// instead of sampling again.
#[derive(Debug, Clone)]
pub struct BatchDraw {
    pub indices: Vec<usize>,
    pub kind: BatchKind,
}

/// Estimator state for one run.
#[derive(Debug, Clone)]
pub struct SpiderState {
    v: Vec<f64>,
    iteration: usize,
    restart_period: usize,
    s1_size: usize,
    s2_size: usize,
    samples_consumed: usize,
    sampling: SamplingMode,
}

impl SpiderState {
    pub fn new(
        dimension: usize,
        s1_size: usize,
        s2_size: usize,
        restart_period: usize,
        sampling: SamplingMode,
    ) -> Result<Self> {
        if dimension == 0 || s1_size == 0 || s2_size == 0 || restart_period == 0 {
            return Err(Error::InvalidConfig(
                "dimension, batch sizes and restart period must be positive".into(),
            ));
        }
        Ok(SpiderState {
            v: vec![0.0; dimension],
            iteration: 0,
            restart_period,
            s1_size,
            s2_size,
            samples_consumed: 0,
            sampling,
        })
    }

    pub fn estimate(&self) -> &[f64] {
        &self.v
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn samples_consumed(&self) -> usize {
        self.samples_consumed
    }

    pub fn restart_period(&self) -> usize {
        self.restart_period
    }

    pub fn s1_size(&self) -> usize {
        self.s1_size
    }

    pub fn s2_size(&self) -> usize {
        self.s2_size
    }

    /// True when the current iteration must rebuild the estimate from a
    /// fresh large batch.
    pub fn is_restart_step(&self) -> bool {
        self.iteration.is_multiple_of(self.restart_period)
    }

    /// Number of samples the next step will draw.
    pub fn next_step_cost(&self) -> usize {
        if self.is_restart_step() {
            self.s1_size
        } else {
            self.s2_size
        }
    }

    /// Advance the iteration counter after the surrounding optimizer has
    /// finished its update for the current iteration.
    pub fn advance(&mut self) {
        self.iteration += 1;
    }

    /// Rebuild the estimate from a fresh batch: `v <- grad(x; S1)`.
    pub fn restart<O: Objective>(
        &mut self,
        obj: &O,
        x: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> Result<BatchDraw> {
        if !self.is_restart_step() {
            return Err(Error::ContractViolation(format!(
                "restart called at iteration {} with period {}",
                self.iteration, self.restart_period
            )));
        }
        let indices = draw_batch(obj.num_samples(), self.s1_size, self.sampling, rng)?;
        self.v = obj.batch_gradient(x, &indices);
        self.samples_consumed += self.s1_size;
        Ok(BatchDraw { indices, kind: BatchKind::Restart })
    }

    /// Recursive update on one batch evaluated at the current and previous
    /// iterate: `v <- v + grad(x; S2) - grad(x_prev; S2)`.
    pub fn refresh<O: Objective>(
        &mut self,
        obj: &O,
        x: &[f64],
        x_prev: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> Result<BatchDraw> {
        if self.is_restart_step() {
            return Err(Error::ContractViolation(format!(
                "refresh called at restart iteration {}",
                self.iteration
            )));
        }
        if x_prev.len() != x.len() {
            return Err(Error::DimensionMismatch { expected: x.len(), actual: x_prev.len() });
        }
        let indices = draw_batch(obj.num_samples(), self.s2_size, self.sampling, rng)?;
        let g_new = obj.batch_gradient(x, &indices);
        let g_old = obj.batch_gradient(x_prev, &indices);
        for ((v, n), o) in self.v.iter_mut().zip(&g_new).zip(&g_old) {
            *v += n - o;
        }
        self.samples_consumed += self.s2_size;
        Ok(BatchDraw { indices, kind: BatchKind::Refresh })
    }
}

fn draw_batch(
    n: usize,
    size: usize,
    sampling: SamplingMode,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    match sampling {
        SamplingMode::WithReplacement => Ok((0..size).map(|_| rng.gen_range(0..n)).collect()),
        SamplingMode::WithoutReplacement => {
            if size > n {
                return Err(Error::InvalidConfig(format!(
                    "cannot draw {size} distinct indices from {n} samples"
                )));
            }
            Ok(rand::seq::index::sample(rng, n, size).into_vec())
        }
    }
}

/// Batch sizes and restart period that meet the accuracy target `eps`:
/// `s1 = ceil(2 sigma^2 / eps^2)`, `s2 = ceil(4 h1^2 / eps)`,
/// `r = ceil(1 / eps)`, each clamped to at least one.
pub fn theory_batch_sizes(eps: f64, sigma: f64, h1: f64) -> Result<(usize, usize, usize)> {
    if !(eps > 0.0) {
        return Err(Error::InvalidConfig(format!("eps must be positive, got {eps}")));
    }
    if !(h1 > 0.0) {
        return Err(Error::InvalidConfig(format!("h1 must be positive, got {h1}")));
    }
    if sigma < 0.0 {
        return Err(Error::InvalidConfig(format!("sigma must be nonnegative, got {sigma}")));
    }
    let s1 = ((2.0 * sigma * sigma / (eps * eps)).ceil() as usize).max(1);
    let s2 = ((4.0 * h1 * h1 / eps).ceil() as usize).max(1);
    let r = ((1.0 / eps).ceil() as usize).max(1);
    Ok((s1, s2, r))
}
