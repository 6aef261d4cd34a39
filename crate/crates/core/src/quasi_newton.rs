//! Adaptive damped L-BFGS.
//!
//! The inverse-Hessian action is computed in `O(p d)` by the two-loop
//! recursion over damped curvature pairs. Damping replaces the raw gradient
//! difference `y` by a convex combination with the positive definite
//! surrogate direction `c s`, which guarantees `s' ybar > 0` and hence
//! positive definiteness of every intermediate approximation. The damping
//! weights adapt to a data-dependent smoothness proxy `Gamma` computed from
//! per-sample gradient norms, which is what makes the eigenvalue range of the
//! approximation controllable through the design parameters.
//!
//! Dense forms of both the limited-memory recursion and the full BFGS update
//! are provided as test oracles; production paths never form matrices.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::objectives::SmoothnessParams;

/// Guard for the dense oracle forms; they are quadratic in the dimension and
/// exist only to check the `O(p d)` path at test scale.
pub const DENSE_DIMENSION_GUARD: usize = 64;

/// Clamp margin keeping the effective damping threshold strictly below one.
const Q_CLAMP: f64 = 1.0 - 1e-6;

/// One damped curvature pair.
#[derive(Debug, Clone)]
pub struct CurvaturePair {
    /// Displacement `x_k - x_{k-1}`.
    pub s: Vec<f64>,
    /// Raw gradient difference on the shared batch.
    pub y: Vec<f64>,
    /// Damped difference actually used by the recursion.
    pub y_bar: Vec<f64>,
    /// `1 / (s' y_bar)`.
    pub rho: f64,
    /// Smoothness proxy the damping weights were derived from.
    pub gamma: f64,
}

/// Design parameters of the damping scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DampingParams {
    /// Lower bound for the initial-matrix scaling `c_k`.
    pub delta: f64,
    /// Coefficient of the damping threshold `q_k = q Gamma^4`.
    pub q_coeff: f64,
    /// Coefficient of the pair weight `w_k = kappa^2 / Gamma^2`.
    pub kappa: f64,
    /// Ring size `p`.
    pub memory_size: usize,
}

impl DampingParams {
    pub fn new(delta: f64, q_coeff: f64, kappa: f64, memory_size: usize) -> Result<Self> {
        if !(delta > 0.0 && q_coeff > 0.0 && kappa > 0.0) {
            return Err(Error::InvalidConfig(
                "delta, q and kappa must all be positive".into(),
            ));
        }
        if memory_size == 0 {
            return Err(Error::InvalidConfig("memory size must be at least 1".into()));
        }
        Ok(DampingParams { delta, q_coeff, kappa, memory_size })
    }
}

/// Guaranteed eigenvalue range of the inverse-Hessian approximations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenBounds {
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl EigenBounds {
    pub fn new(lambda_min: f64, lambda_max: f64) -> Result<Self> {
        if !(lambda_min > 0.0 && lambda_min <= lambda_max) {
            return Err(Error::InvalidConfig(format!(
                "need 0 < lambda_min <= lambda_max, got ({lambda_min}, {lambda_max})"
            )));
        }
        Ok(EigenBounds { lambda_min, lambda_max })
    }

    /// Bounds from the closed forms evaluated at the damping parameters.
    pub fn from_damping(params: &DampingParams, gamma0: f64) -> Result<Self> {
        Self::new(lambda_min_bound(params, gamma0), lambda_max_bound(params, gamma0))
    }
}

/// Smoothness proxy from the per-sample gradient norms of one batch:
/// `Gamma = gamma0 (1 + e^{gamma1/L0} / L0) + (gamma1^2 / m) sum ||g_l||`
/// with `L0` the gamma-form constant.
pub fn compute_gamma_from_norms(norms: &[f64], params: &SmoothnessParams) -> Result<f64> {
    let g0 = params.gamma0;
    let g1 = params.gamma1;
    if norms.is_empty() && g1 > 0.0 {
        return Err(Error::EmptyBatch);
    }
    let l0 = params.gamma_l0();
    let base = g0 * (1.0 + (g1 / l0).exp() / l0);
    if g1 == 0.0 {
        return Ok(base);
    }
    let mean: f64 = norms.iter().sum::<f64>() / norms.len() as f64;
    Ok(base + g1 * g1 * mean)
}

/// As [`compute_gamma_from_norms`], taking the gradient vectors themselves.
pub fn compute_gamma(batch_gradients: &[Vec<f64>], params: &SmoothnessParams) -> Result<f64> {
    let norms: Vec<f64> = batch_gradients.iter().map(|g| linalg::norm(g)).collect();
    compute_gamma_from_norms(&norms, params)
}

/// Damping weights for one pair: `q_k = q Gamma^4` clamped below one, and
/// `w_k = kappa^2 / Gamma^2`. The flag reports whether clamping fired.
pub fn effective_damping(gamma: f64, params: &DampingParams) -> (f64, f64, bool) {
    let raw = params.q_coeff * gamma.powi(4);
    let clamped = raw >= Q_CLAMP;
    let q_k = if clamped { Q_CLAMP } else { raw };
    let w_k = params.kappa * params.kappa / (gamma * gamma);
    (q_k, w_k, clamped)
}

/// Scaling of the initial matrix, `c_k = max(delta, w y'y / s'y)`; the second
/// operand only participates for positive curvature.
pub fn compute_scaling(s: &[f64], y: &[f64], gamma_prev: f64, params: &DampingParams) -> f64 {
    let sy = linalg::dot(s, y);
    if sy <= 0.0 {
        return params.delta;
    }
    let w = params.kappa * params.kappa / (gamma_prev * gamma_prev);
    let candidate = w * linalg::dot(y, y) / sy;
    if candidate.is_finite() {
        params.delta.max(candidate)
    } else {
        params.delta
    }
}

/// Build a damped pair from explicit weights. `s' y_bar >= w q c s's > 0`
/// holds for the result.
pub fn damp_pair_with(
    s: &[f64],
    y: &[f64],
    c: f64,
    q_k: f64,
    w_k: f64,
    gamma: f64,
) -> Result<CurvaturePair> {
    if s.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: s.len(), actual: y.len() });
    }
    if !(c > 0.0 && w_k > 0.0) || !(q_k > 0.0 && q_k < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "damping needs c > 0, w > 0 and q in (0,1); got c={c}, w={w_k}, q={q_k}"
        )));
    }
    if !linalg::all_finite(s) || !linalg::all_finite(y) {
        return Err(Error::PairRejected("non-finite pair input".into()));
    }
    let ss = linalg::dot(s, s);
    if ss == 0.0 {
        return Err(Error::PairRejected("zero displacement".into()));
    }
    let sy = linalg::dot(s, y);
    let mu_bar = c * ss;
    let theta = if sy >= q_k * mu_bar { 1.0 } else { (1.0 - q_k) * mu_bar / (mu_bar - sy) };
    let mut y_bar = vec![0.0; s.len()];
    for ((yb, yi), si) in y_bar.iter_mut().zip(y).zip(s) {
        *yb = w_k * (theta * yi + (1.0 - theta) * c * si);
    }
    let s_ybar = linalg::dot(s, &y_bar);
    let rho = 1.0 / s_ybar;
    if !rho.is_finite() || rho <= 0.0 {
        return Err(Error::PairRejected(format!("degenerate curvature s'ybar = {s_ybar}")));
    }
    Ok(CurvaturePair { s: s.to_vec(), y: y.to_vec(), y_bar, rho, gamma })
}

/// Build a damped pair with weights derived from the smoothness proxy.
pub fn damp_pair(
    s: &[f64],
    y: &[f64],
    c: f64,
    gamma: f64,
    params: &DampingParams,
) -> Result<CurvaturePair> {
    let (q_k, w_k, _) = effective_damping(gamma, params);
    damp_pair_with(s, y, c, q_k, w_k, gamma)
}

/// Ring of damped pairs plus the current initial-matrix scaling.
#[derive(Debug, Clone)]
pub struct LbfgsMemory {
    pairs: VecDeque<CurvaturePair>,
    memory_size: usize,
    c: f64,
    clamp_warnings: usize,
}

/// What a memory update did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryUpdateOutcome {
    /// False when the pair was skipped (zero displacement) and the memory
    /// was left untouched.
    pub stored: bool,
    /// True when the damping threshold had to be clamped below one.
    pub clamped: bool,
}

impl LbfgsMemory {
    pub fn new(memory_size: usize, delta: f64) -> Result<Self> {
        if memory_size == 0 {
            return Err(Error::InvalidConfig("memory size must be at least 1".into()));
        }
        if !(delta > 0.0) {
            return Err(Error::InvalidConfig(format!("delta must be positive, got {delta}")));
        }
        Ok(LbfgsMemory {
            pairs: VecDeque::with_capacity(memory_size),
            memory_size,
            c: delta,
            clamp_warnings: 0,
        })
    }

    pub fn scaling(&self) -> f64 {
        self.c
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn memory_size(&self) -> usize {
        self.memory_size
    }

    pub fn clamp_warnings(&self) -> usize {
        self.clamp_warnings
    }

    /// Pairs in chronological order, oldest first.
    pub fn pairs(&self) -> impl Iterator<Item = &CurvaturePair> {
        self.pairs.iter()
    }

    /// Human-readable dump of the memory state for run diagnostics.
    pub fn diagnostic_dump(&self) -> String {
        use std::fmt::Write as _;
        let mut out = format!(
            "scaling c = {:.6e}, {} pair(s), {} clamp warning(s)\n",
            self.c,
            self.pairs.len(),
            self.clamp_warnings
        );
        for (i, p) in self.pairs.iter().enumerate() {
            let _ = writeln!(
                out,
                "  pair {i}: |s| = {:.6e}, |y| = {:.6e}, s'ybar = {:.6e}, gamma = {:.6e}",
                crate::linalg::norm(&p.s),
                crate::linalg::norm(&p.y),
                1.0 / p.rho,
                p.gamma
            );
        }
        out
    }

    /// Store a pair, evicting the oldest when the ring is full, and adopt a
    /// new initial-matrix scaling.
    pub fn push(&mut self, pair: CurvaturePair, scaling: f64) {
        while self.pairs.len() >= self.memory_size {
            self.pairs.pop_front();
        }
        self.pairs.push_back(pair);
        self.c = scaling;
    }

    /// One adaptive update: scaling from the pair itself, damping weights
    /// from `gamma`. A zero displacement leaves the memory untouched.
    pub fn update_adaptive(
        &mut self,
        s: &[f64],
        y: &[f64],
        gamma: f64,
        params: &DampingParams,
    ) -> Result<MemoryUpdateOutcome> {
        if linalg::dot(s, s) == 0.0 {
            return Ok(MemoryUpdateOutcome { stored: false, clamped: false });
        }
        let (q_k, w_k, clamped) = effective_damping(gamma, params);
        let c = compute_scaling(s, y, gamma, params);
        let pair = damp_pair_with(s, y, c, q_k, w_k, gamma)?;
        self.push(pair, c);
        if clamped {
            self.clamp_warnings += 1;
        }
        Ok(MemoryUpdateOutcome { stored: true, clamped })
    }

    /// One fixed-weight update (`w = 1`, constant damping threshold); used by
    /// the non-adaptive quasi-Newton baseline.
    pub fn update_fixed(
        &mut self,
        s: &[f64],
        y: &[f64],
        q_fixed: f64,
        delta: f64,
    ) -> Result<MemoryUpdateOutcome> {
        if linalg::dot(s, s) == 0.0 {
            return Ok(MemoryUpdateOutcome { stored: false, clamped: false });
        }
        let sy = linalg::dot(s, y);
        let c = if sy > 0.0 {
            let candidate = linalg::dot(y, y) / sy;
            if candidate.is_finite() { delta.max(candidate) } else { delta }
        } else {
            delta
        };
        let pair = damp_pair_with(s, y, c, q_fixed, 1.0, 1.0)?;
        self.push(pair, c);
        Ok(MemoryUpdateOutcome { stored: true, clamped: false })
    }
}

/// Action of the inverse-Hessian approximation on `v` in `O(p d)`: the
/// classical two-loop recursion over the stored pairs with initial matrix
/// `c^{-1} I`. An empty memory yields `v / c`.
pub fn two_loop_apply(memory: &LbfgsMemory, v: &[f64]) -> Vec<f64> {
    let mut q = v.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for pair in memory.pairs.iter().rev() {
        let alpha = pair.rho * linalg::dot(&pair.s, &q);
        linalg::axpy(-alpha, &pair.y_bar, &mut q);
        alphas.push(alpha);
    }
    let mut r = linalg::scale(1.0 / memory.scaling(), &q);
    for (pair, alpha) in memory.pairs.iter().zip(alphas.iter().rev()) {
        let beta = pair.rho * linalg::dot(&pair.y_bar, &r);
        linalg::axpy(alpha - beta, &pair.s, &mut r);
    }
    r
}

/// Dense test oracle for [`two_loop_apply`]: materializes the recursion
/// `H_i = (I - rho s ybar') H_{i-1} (I - rho ybar s') + rho s s'` over the
/// stored pairs in chronological order, starting from `c^{-1} I`.
pub fn dense_hk(memory: &LbfgsMemory, dimension: usize) -> Result<DMatrix<f64>> {
    if dimension > DENSE_DIMENSION_GUARD {
        return Err(Error::DenseGuard(dimension, DENSE_DIMENSION_GUARD));
    }
    let eye = DMatrix::<f64>::identity(dimension, dimension);
    let mut h = &eye / memory.scaling();
    for pair in memory.pairs() {
        if pair.s.len() != dimension {
            return Err(Error::DimensionMismatch { expected: dimension, actual: pair.s.len() });
        }
        let s = DVector::from_column_slice(&pair.s);
        let ybar = DVector::from_column_slice(&pair.y_bar);
        let left = &eye - pair.rho * &s * ybar.transpose();
        h = &left * h * left.transpose() + pair.rho * &s * s.transpose();
    }
    Ok(h)
}

/// Dense full-matrix adaptive BFGS state; a test oracle for the damping and
/// inverse-update algebra at small dimension.
#[derive(Debug, Clone)]
pub struct DenseBfgsState {
    /// Hessian approximation.
    pub b: DMatrix<f64>,
    /// Its inverse, maintained by the complementary rank-two update.
    pub h: DMatrix<f64>,
}

impl DenseBfgsState {
    pub fn identity(dimension: usize) -> Result<Self> {
        if dimension > DENSE_DIMENSION_GUARD {
            return Err(Error::DenseGuard(dimension, DENSE_DIMENSION_GUARD));
        }
        Ok(DenseBfgsState {
            b: DMatrix::identity(dimension, dimension),
            h: DMatrix::identity(dimension, dimension),
        })
    }
}

/// One damped dense BFGS step with explicit weights `q_hat` in (0,1) and
/// `w_hat > 0`: damp `y` against `B s`, update `B` by the rank-two formula
/// and `H` by its inverse counterpart.
pub fn dense_bfgs_step(
    state: &DenseBfgsState,
    s: &[f64],
    y: &[f64],
    q_hat: f64,
    w_hat: f64,
) -> Result<DenseBfgsState> {
    if !(q_hat > 0.0 && q_hat < 1.0 && w_hat > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "dense step needs q in (0,1) and w > 0, got ({q_hat}, {w_hat})"
        )));
    }
    let d = state.b.nrows();
    if s.len() != d || y.len() != d {
        return Err(Error::DimensionMismatch { expected: d, actual: s.len().max(y.len()) });
    }
    if linalg::dot(s, s) == 0.0 {
        return Err(Error::PairRejected("zero displacement".into()));
    }
    let s_v = DVector::from_column_slice(s);
    let y_v = DVector::from_column_slice(y);
    let bs = &state.b * &s_v;
    let mu = s_v.dot(&bs);
    if !(mu > 0.0) {
        return Err(Error::ContractViolation(format!("s'Bs = {mu} must be positive")));
    }
    let sy = s_v.dot(&y_v);
    let theta = if sy >= q_hat * mu { 1.0 } else { (1.0 - q_hat) * mu / (mu - sy) };
    let y_hat = w_hat * (theta * &y_v + (1.0 - theta) * &bs);
    let s_yhat = s_v.dot(&y_hat);
    let rho = 1.0 / s_yhat;

    let b_next = &state.b - (&bs * bs.transpose()) / mu + (&y_hat * y_hat.transpose()) / s_yhat;
    let eye = DMatrix::<f64>::identity(d, d);
    let left = &eye - rho * &s_v * y_hat.transpose();
    let h_next = &left * &state.h * left.transpose() + rho * &s_v * s_v.transpose();
    Ok(DenseBfgsState { b: b_next, h: h_next })
}

/// Closed-form lower eigenvalue bound of the inverse-Hessian approximations
/// under the adaptive weights.
pub fn lambda_min_bound(params: &DampingParams, gamma0: f64) -> f64 {
    let DampingParams { delta, q_coeff: q, kappa, memory_size } = *params;
    let p = memory_size as f64;
    let k2 = kappa * kappa;
    let g = gamma0;
    let inner = 1.0 / delta
        + (delta * g + k2) / g.powi(3)
        + (p + 2.0 * q * g.powi(4)) / (2.0 * p * g);
    1.0 / (delta + (k2 * p / (q * g.powi(4))) * inner)
}

/// Closed-form upper eigenvalue bound under the same weights.
pub fn lambda_max_bound(params: &DampingParams, gamma0: f64) -> f64 {
    let DampingParams { delta, q_coeff: q, kappa, memory_size } = *params;
    let k2 = kappa * kappa;
    let g = gamma0;
    let t = 1.0 / (delta * g * k2 * q);
    let a = 1.0 + 2.0 * t + t * t;
    let base = 1.0 / (delta * g * g * k2 * q);
    // (a^p - 1) / (a - 1) = 1 + a + ... + a^{p-1}
    let mut series = 0.0;
    let mut power = 1.0;
    for _ in 0..memory_size {
        series += power;
        power *= a;
    }
    base * series
}

#[cfg(test)]
mod tests;
