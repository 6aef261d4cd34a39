//! Finite-sum objective oracles, synthetic data generation, and smoothness
//! verification utilities.
//!
//! Both benchmark objectives are means of per-sample losses over a
//! [`Dataset`]:
//!
//! * robust linear regression, per-sample loss `log((b - a'x)^2/2 + 1)`;
//! * non-convex logistic regression, per-sample loss
//!   `-[b log s(a'x) + (1-b) log s(-a'x)]` with `s` the sigmoid.
//!
//! A third single-purpose objective, `b * log s(a'x)`, backs the analytic
//! Hessian-to-gradient ratio check in [`check_cross_entropy_smoothness`].

mod io;
mod synthetic;

pub use synthetic::{generate_synthetic, LabelMode, SyntheticConfig};

use crate::error::{Error, Result};
use crate::linalg;

/// One observation: a feature vector and a scalar label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: f64,
}

/// An immutable collection of samples sharing one feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    dimension: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, dimension: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidConfig("dataset dimension must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::InvalidConfig("dataset must contain at least one sample".into()));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.features.len() != dimension {
                return Err(Error::InvalidConfig(format!(
                    "sample {i} has {} features, dataset dimension is {dimension}",
                    s.features.len()
                )));
            }
        }
        Ok(Dataset { samples, dimension })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample(&self, index: usize) -> &Sample {
        &self.samples[index]
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }
}

/// Problem constants tied to the gradient-norm-dependent smoothness model.
///
/// `l0`/`l1` bound the mean-square gradient variation of the full objective;
/// `gamma0`/`gamma1` play the same role per sample and drive the adaptive
/// damping; `sigma` bounds the per-sample gradient standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothnessParams {
    pub l0: f64,
    pub l1: f64,
    pub gamma0: f64,
    pub gamma1: f64,
    pub sigma: f64,
}

impl SmoothnessParams {
    pub fn new(l0: f64, l1: f64, gamma0: f64, gamma1: f64, sigma: f64) -> Result<Self> {
        if !(l0 > 0.0) {
            return Err(Error::InvalidConfig(format!("l0 must be positive, got {l0}")));
        }
        if l1 < 0.0 || gamma1 < 0.0 || sigma < 0.0 {
            return Err(Error::InvalidConfig("l1, gamma1 and sigma must be nonnegative".into()));
        }
        if !(gamma0 > 0.0) {
            return Err(Error::InvalidConfig(format!("gamma0 must be positive, got {gamma0}")));
        }
        Ok(SmoothnessParams { l0, l1, gamma0, gamma1, sigma })
    }

    /// Derive `(l0, l1)` from the per-sample constants:
    /// `l0 = sqrt(2 (gamma0^2 + gamma1^2 sigma^2))`, `l1 = gamma1 sqrt(2)`.
    pub fn from_gamma(gamma0: f64, gamma1: f64, sigma: f64) -> Result<Self> {
        let l0 = (2.0 * (gamma0 * gamma0 + gamma1 * gamma1 * sigma * sigma)).sqrt();
        let l1 = gamma1 * std::f64::consts::SQRT_2;
        Self::new(l0, l1, gamma0, gamma1, sigma)
    }

    /// The derived `l0` implied by the gamma-form constants.
    pub fn gamma_l0(&self) -> f64 {
        (2.0 * (self.gamma0 * self.gamma0 + self.gamma1 * self.gamma1 * self.sigma * self.sigma)).sqrt()
    }

    /// True when `(l0, l1)` match the gamma-form identities exactly.
    pub fn is_gamma_consistent(&self) -> bool {
        self.l0 == self.gamma_l0() && self.l1 == self.gamma1 * std::f64::consts::SQRT_2
    }
}

/// Which per-sample loss/gradient formula pair an oracle evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveKind {
    RobustLinearRegression,
    NonconvexLogistic,
    SigmoidCrossEntropy,
}

/// Numerically stable sigmoid, split on the sign of the argument.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `log(sigmoid(z))`.
pub fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

fn sample_loss(kind: ObjectiveKind, x: &[f64], sample: &Sample) -> Result<f64> {
    let z = linalg::dot(&sample.features, x);
    let b = sample.label;
    match kind {
        ObjectiveKind::RobustLinearRegression => {
            let t = b - z;
            Ok((t * t / 2.0 + 1.0).ln())
        }
        ObjectiveKind::NonconvexLogistic => {
            if b != 0.0 && b != 1.0 {
                return Err(Error::LabelDomain(b));
            }
            Ok(-(b * log_sigmoid(z) + (1.0 - b) * log_sigmoid(-z)))
        }
        ObjectiveKind::SigmoidCrossEntropy => Ok(b * log_sigmoid(z)),
    }
}

/// The scalar multiplying the feature vector in this sample's gradient.
fn sample_gradient_coefficient(kind: ObjectiveKind, x: &[f64], sample: &Sample) -> Result<f64> {
    let z = linalg::dot(&sample.features, x);
    let b = sample.label;
    match kind {
        ObjectiveKind::RobustLinearRegression => {
            let t = b - z;
            Ok(-t / (t * t / 2.0 + 1.0))
        }
        ObjectiveKind::NonconvexLogistic => {
            if b != 0.0 && b != 1.0 {
                return Err(Error::LabelDomain(b));
            }
            Ok(sigmoid(z) - b)
        }
        ObjectiveKind::SigmoidCrossEntropy => Ok(b * (1.0 - sigmoid(z))),
    }
}

fn validate_batch(x: &[f64], dataset: &Dataset, batch: &[usize]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if x.len() != dataset.dimension() {
        return Err(Error::DimensionMismatch { expected: dataset.dimension(), actual: x.len() });
    }
    for &i in batch {
        if i >= dataset.len() {
            return Err(Error::IndexOutOfBounds { index: i, size: dataset.len() });
        }
    }
    Ok(())
}

/// Mean per-sample loss over the batch.
pub fn loss(kind: ObjectiveKind, x: &[f64], dataset: &Dataset, batch: &[usize]) -> Result<f64> {
    validate_batch(x, dataset, batch)?;
    let mut acc = 0.0;
    for &i in batch {
        acc += sample_loss(kind, x, dataset.sample(i))?;
    }
    Ok(acc / batch.len() as f64)
}

/// Mean per-sample gradient over the batch.
pub fn gradient(kind: ObjectiveKind, x: &[f64], dataset: &Dataset, batch: &[usize]) -> Result<Vec<f64>> {
    validate_batch(x, dataset, batch)?;
    let mut g = vec![0.0; x.len()];
    let inv = 1.0 / batch.len() as f64;
    for &i in batch {
        let coef = sample_gradient_coefficient(kind, x, dataset.sample(i))?;
        linalg::axpy(coef * inv, &dataset.sample(i).features, &mut g);
    }
    Ok(g)
}

/// Gradient over the whole dataset; diagnostics and stationarity reporting.
pub fn full_gradient(kind: ObjectiveKind, x: &[f64], dataset: &Dataset) -> Result<Vec<f64>> {
    let batch: Vec<usize> = (0..dataset.len()).collect();
    gradient(kind, x, dataset, &batch)
}

/// Batched oracle interface consumed by the optimizers. Implementations must
/// be pure in `x`, so shared references can be evaluated concurrently.
pub trait Objective {
    fn dimension(&self) -> usize;
    fn num_samples(&self) -> usize;
    fn sample_loss(&self, x: &[f64], index: usize) -> f64;
    fn sample_gradient_into(&self, x: &[f64], index: usize, out: &mut [f64]);

    fn batch_loss(&self, x: &[f64], batch: &[usize]) -> f64 {
        let mut acc = 0.0;
        for &i in batch {
            acc += self.sample_loss(x, i);
        }
        acc / batch.len() as f64
    }

    fn batch_gradient(&self, x: &[f64], batch: &[usize]) -> Vec<f64> {
        let mut g = vec![0.0; self.dimension()];
        let mut buf = vec![0.0; self.dimension()];
        let inv = 1.0 / batch.len() as f64;
        for &i in batch {
            self.sample_gradient_into(x, i, &mut buf);
            linalg::axpy(inv, &buf, &mut g);
        }
        g
    }

    /// Euclidean norms of the per-sample gradients over the batch.
    fn sample_gradient_norms(&self, x: &[f64], batch: &[usize]) -> Vec<f64> {
        let mut buf = vec![0.0; self.dimension()];
        batch
            .iter()
            .map(|&i| {
                self.sample_gradient_into(x, i, &mut buf);
                linalg::norm(&buf)
            })
            .collect()
    }

    fn full_loss(&self, x: &[f64]) -> f64 {
        let batch: Vec<usize> = (0..self.num_samples()).collect();
        self.batch_loss(x, &batch)
    }

    fn full_gradient(&self, x: &[f64]) -> Vec<f64> {
        let batch: Vec<usize> = (0..self.num_samples()).collect();
        self.batch_gradient(x, &batch)
    }
}

/// A [`Dataset`] viewed through one of the named loss formulas.
#[derive(Debug, Clone, Copy)]
pub struct DatasetObjective<'a> {
    kind: ObjectiveKind,
    data: &'a Dataset,
}

impl<'a> DatasetObjective<'a> {
    pub fn new(kind: ObjectiveKind, data: &'a Dataset) -> Self {
        DatasetObjective { kind, data }
    }

    pub fn kind(&self) -> ObjectiveKind {
        self.kind
    }

    pub fn dataset(&self) -> &'a Dataset {
        self.data
    }
}

impl Objective for DatasetObjective<'_> {
    fn dimension(&self) -> usize {
        self.data.dimension()
    }

    fn num_samples(&self) -> usize {
        self.data.len()
    }

    fn sample_loss(&self, x: &[f64], index: usize) -> f64 {
        sample_loss(self.kind, x, self.data.sample(index)).expect("labels validated at construction")
    }

    fn sample_gradient_into(&self, x: &[f64], index: usize, out: &mut [f64]) {
        let sample = self.data.sample(index);
        let coef = sample_gradient_coefficient(self.kind, x, sample)
            .expect("labels validated at construction");
        for (o, f) in out.iter_mut().zip(&sample.features) {
            *o = coef * f;
        }
    }
}

/// Result of probing `F(x) = y log s(u'x)` at a set of points.
#[derive(Debug, Clone)]
pub struct CrossEntropyReport {
    /// Hessian-norm-to-gradient-norm ratio at each probe with nonzero gradient.
    pub ratios: Vec<f64>,
    /// Largest observed ratio, absent when every probe had zero gradient.
    pub max_ratio: Option<f64>,
    /// The claimed upper bound `||u||`.
    pub bound: f64,
}

/// Evaluates `||H(x)|| / ||grad(x)||` for `F(x) = y log s(u'x)` at each probe
/// point, using the closed forms of both norms. The rank-one Hessian is
/// `-y yhat (1 - yhat) u u'`, so the ratio equals `yhat ||u||` and can never
/// exceed `||u||`. Probes where the gradient vanishes are skipped.
pub fn check_cross_entropy_smoothness(u: &[f64], y: f64, xs: &[Vec<f64>]) -> CrossEntropyReport {
    let u_norm = linalg::norm(u);
    let mut ratios = Vec::new();
    for x in xs {
        let yhat = sigmoid(linalg::dot(u, x));
        // ||grad|| = |y| (1 - yhat) ||u||; ||H|| = |y| yhat (1 - yhat) ||u||^2
        let grad_norm = (y * (1.0 - yhat)).abs() * u_norm;
        if grad_norm == 0.0 {
            continue;
        }
        let hess_norm = (y * yhat * (1.0 - yhat)).abs() * u_norm * u_norm;
        ratios.push(hess_norm / grad_norm);
    }
    let max_ratio = ratios.iter().cloned().fold(None, |m: Option<f64>, r| {
        Some(m.map_or(r, |v| v.max(r)))
    });
    CrossEntropyReport { ratios, max_ratio, bound: u_norm }
}

/// Local smoothness estimates along a trajectory: for consecutive iterates,
/// pairs `(||grad F(x_k)||, ||grad F(x_{k+1}) - grad F(x_k)|| / ||x_{k+1} - x_k||)`.
/// Coincident consecutive iterates are skipped.
pub fn estimate_smoothness_along_trajectory(
    kind: ObjectiveKind,
    dataset: &Dataset,
    xs: &[Vec<f64>],
) -> Result<Vec<(f64, f64)>> {
    if xs.len() < 2 {
        return Err(Error::ContractViolation(
            "smoothness estimation needs at least two iterates".into(),
        ));
    }
    let mut out = Vec::with_capacity(xs.len() - 1);
    let mut grad_prev = full_gradient(kind, &xs[0], dataset)?;
    for w in xs.windows(2) {
        let step = linalg::sub(&w[1], &w[0]);
        let step_norm = linalg::norm(&step);
        let grad_next = full_gradient(kind, &w[1], dataset)?;
        if step_norm > 0.0 {
            let diff = linalg::sub(&grad_next, &grad_prev);
            out.push((linalg::norm(&grad_prev), linalg::norm(&diff) / step_norm));
        }
        grad_prev = grad_next;
    }
    Ok(out)
}
