//! The clipped stochastic quasi-Newton driver.
//!
//! Each iteration refreshes the variance-reduced gradient estimate, picks a
//! stepsize as the minimum of three terms (a constant cap and two clipping
//! terms scaling with `1/||v||` and `1/||v||^2`), rebuilds the damped L-BFGS
//! memory from the previous iteration's batch, and moves against the
//! preconditioned estimate. The clipping keeps the displacement bounded when
//! the gradient is large, which is what makes the method sound when the
//! smoothness constant grows with the gradient norm.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::objectives::{Objective, SmoothnessParams};
use crate::quasi_newton::{
    compute_gamma_from_norms, two_loop_apply, DampingParams, EigenBounds, LbfgsMemory,
};
use crate::rng::{stream_rng, Stream};
use crate::spider::{theory_batch_sizes, SamplingMode, SpiderState};
use crate::trace::{AbortInfo, IterationRecord, RunTrace, StepBranch};

/// How batch sizes and the restart period are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchPlan {
    Explicit { s1_size: usize, s2_size: usize, restart_period: usize },
    /// Derive them from the accuracy target: `s1 = 2 sigma^2 / eps^2`,
    /// `s2 = 4 h1^2 / eps`, `r = 1 / eps`.
    Theory,
}

/// How long a run lasts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BudgetMode {
    Iterations(usize),
    /// Stop before the next step would exceed this many drawn samples.
    Samples(usize),
}

#[derive(Debug, Clone)]
pub struct ClippedSqnConfig {
    /// Stationarity target driving the clipping terms.
    pub eps: f64,
    /// Young-inequality split parameter of the descent analysis.
    pub beta: f64,
    /// Displacement-scale constant of the descent analysis.
    pub c_param: f64,
    pub smoothness: SmoothnessParams,
    pub damping: DampingParams,
    /// Eigenvalue range fed to the stepsize rule; defaults to the closed-form
    /// bounds computed from the damping parameters.
    pub eigen_override: Option<EigenBounds>,
    pub batches: BatchPlan,
    pub sampling: SamplingMode,
    /// Enforce the analysis' feasibility ranges for `beta` and `c_param`
    /// instead of only requiring a positive stepsize margin.
    pub strict_theory: bool,
    pub seed: u64,
    /// Record the full training loss every this many iterations.
    pub record_every: usize,
    /// Also record the exact full-gradient norm at recorded iterations.
    pub track_true_gradient: bool,
}

impl ClippedSqnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(Error::InvalidConfig(format!("eps must be positive, got {}", self.eps)));
        }
        if !(self.beta > 0.0) {
            return Err(Error::InvalidConfig(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.c_param > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "c_param must be positive, got {}",
                self.c_param
            )));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidConfig("record_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// The three-term stepsize rule. Baselines reuse it with unit margin and
/// unit eigenvalue scale, which reduces it to the plain clipped rules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepsizeRule {
    pub h1: f64,
    pub eps: f64,
    pub l0: f64,
    pub l1: f64,
    pub lambda_max: f64,
}

impl StepsizeRule {
    /// `min { h1/(2 L0 lam^2), h1 eps/(L0 lam^2 ||v||), h1 eps/(L1 lam^2 ||v||^2) }`
    /// together with the active branch. A zero norm leaves only the constant
    /// term; `l1 = 0` removes the quadratic term.
    pub fn stepsize(&self, v_norm: f64) -> (f64, StepBranch) {
        let lam2 = self.lambda_max * self.lambda_max;
        let constant = self.h1 / (2.0 * self.l0 * lam2);
        let linear = if v_norm > 0.0 {
            self.h1 * self.eps / (self.l0 * lam2 * v_norm)
        } else {
            f64::INFINITY
        };
        let quadratic = if v_norm > 0.0 && self.l1 > 0.0 {
            self.h1 * self.eps / (self.l1 * lam2 * v_norm * v_norm)
        } else {
            f64::INFINITY
        };
        let mut eta = constant;
        let mut branch = StepBranch::Constant;
        if linear < eta {
            eta = linear;
            branch = StepBranch::Linear;
        }
        if quadratic < eta {
            eta = quadratic;
            branch = StepBranch::Quadratic;
        }
        (eta, branch)
    }
}

/// Stepsize margin `h1 = lambda_min - (beta lambda_max^2 / 4)(2 + 3 L1 c)`.
/// Configurations with a nonpositive margin are rejected upstream.
pub fn compute_h1(beta: f64, c_param: f64, l1: f64, eigen: &EigenBounds) -> f64 {
    eigen.lambda_min - beta * eigen.lambda_max * eigen.lambda_max / 4.0 * (2.0 + 3.0 * l1 * c_param)
}

/// Free-function form of [`StepsizeRule::stepsize`].
pub fn compute_stepsize(v_norm: f64, rule: &StepsizeRule) -> (f64, StepBranch) {
    rule.stepsize(v_norm)
}

/// Iteration count needed for the accuracy target:
/// `K = ceil(2 L0 lambda_max^2 delta0 / (h1^2 eps^2))`, capped at `hard_max`.
/// The flag reports whether the cap fired.
pub fn iteration_budget(
    delta0_estimate: f64,
    eps: f64,
    l0: f64,
    lambda_max: f64,
    h1: f64,
    hard_max: usize,
) -> Result<(usize, bool)> {
    if !(delta0_estimate > 0.0) || !(h1 > 0.0) || !(eps > 0.0) {
        return Err(Error::InvalidConfig(
            "iteration budget needs positive delta0, h1 and eps".into(),
        ));
    }
    let raw = 2.0 * l0 * lambda_max * lambda_max * delta0_estimate / (h1 * h1 * eps * eps);
    if !raw.is_finite() || raw >= hard_max as f64 {
        return Ok((hard_max, true));
    }
    Ok(((raw.ceil() as usize).max(1), false))
}

/// Configuration after resolving derived quantities.
#[derive(Debug, Clone)]
pub struct ResolvedSqn {
    pub eigen: EigenBounds,
    pub h1: f64,
    pub s1_size: usize,
    pub s2_size: usize,
    pub restart_period: usize,
    pub rule: StepsizeRule,
}

/// Validate a configuration and derive the eigenvalue range, stepsize margin
/// and batch plan.
pub fn resolve(cfg: &ClippedSqnConfig) -> Result<ResolvedSqn> {
    cfg.validate()?;
    let eigen = match cfg.eigen_override {
        Some(e) => e,
        None => EigenBounds::from_damping(&cfg.damping, cfg.smoothness.gamma0)?,
    };
    let h1 = compute_h1(cfg.beta, cfg.c_param, cfg.smoothness.l1, &eigen);
    if !(h1 > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "stepsize margin h1 = lambda_min - (beta lambda_max^2/4)(2 + 3 l1 c) = {h1} \
             is not positive; shrink beta or c_param, or widen the eigenvalue range"
        )));
    }
    if cfg.strict_theory {
        let lm = eigen.lambda_min;
        let lmx = eigen.lambda_max;
        let beta_cap = lm / (1.0 + lmx * lmx);
        if cfg.beta > beta_cap {
            return Err(Error::InvalidConfig(format!(
                "strict mode: beta = {} exceeds lambda_min/(1 + lambda_max^2) = {beta_cap}",
                cfg.beta
            )));
        }
        if cfg.smoothness.l1 > 0.0 {
            let c_cap = (4.0 * lm - 2.0 * cfg.beta * (1.0 + lmx * lmx))
                / (cfg.smoothness.l1 * lmx * lmx * cfg.beta * (3.0 + cfg.beta * cfg.beta));
            if cfg.c_param > c_cap {
                return Err(Error::InvalidConfig(format!(
                    "strict mode: c_param = {} exceeds the feasible cap {c_cap}",
                    cfg.c_param
                )));
            }
        }
    }
    let (s1_size, s2_size, restart_period) = match cfg.batches {
        BatchPlan::Explicit { s1_size, s2_size, restart_period } => {
            if s1_size == 0 || s2_size == 0 || restart_period == 0 {
                return Err(Error::InvalidConfig(
                    "batch sizes and restart period must be positive".into(),
                ));
            }
            (s1_size, s2_size, restart_period)
        }
        BatchPlan::Theory => theory_batch_sizes(cfg.eps, cfg.smoothness.sigma, h1)?,
    };
    let rule = StepsizeRule {
        h1,
        eps: cfg.eps,
        l0: cfg.smoothness.l0,
        l1: cfg.smoothness.l1,
        lambda_max: eigen.lambda_max,
    };
    Ok(ResolvedSqn { eigen, h1, s1_size, s2_size, restart_period, rule })
}

struct PrevStep {
    x: Vec<f64>,
    batch: Vec<usize>,
}

/// Mutable state of one run.
pub struct TrainState {
    x: Vec<f64>,
    spider: SpiderState,
    memory: LbfgsMemory,
    prev: Option<PrevStep>,
    restart_rng: ChaCha8Rng,
    refresh_rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(cfg: &ClippedSqnConfig, resolved: &ResolvedSqn, x0: &[f64]) -> Result<Self> {
        if x0.is_empty() {
            return Err(Error::InvalidConfig("empty initial point".into()));
        }
        Ok(TrainState {
            x: x0.to_vec(),
            spider: SpiderState::new(
                x0.len(),
                resolved.s1_size,
                resolved.s2_size,
                resolved.restart_period,
                cfg.sampling,
            )?,
            memory: LbfgsMemory::new(cfg.damping.memory_size, cfg.damping.delta)?,
            prev: None,
            restart_rng: stream_rng(cfg.seed, Stream::Restart),
            refresh_rng: stream_rng(cfg.seed, Stream::Refresh),
        })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn iteration(&self) -> usize {
        self.spider.iteration()
    }

    pub fn samples_consumed(&self) -> usize {
        self.spider.samples_consumed()
    }

    pub fn next_step_cost(&self) -> usize {
        self.spider.next_step_cost()
    }

    pub fn memory(&self) -> &LbfgsMemory {
        &self.memory
    }

    pub fn gradient_estimate(&self) -> &[f64] {
        self.spider.estimate()
    }
}

/// What one iteration did, for the caller's records.
#[derive(Debug, Clone, Copy)]
pub struct StepOutcome {
    pub v_norm: f64,
    pub stepsize: f64,
    pub branch: StepBranch,
    pub samples_consumed: usize,
    pub pair_stored: bool,
}

/// One full iteration: estimator update, stepsize, memory rebuild from the
/// previous iteration's batch, preconditioned move.
pub fn step<O: Objective>(
    state: &mut TrainState,
    cfg: &ClippedSqnConfig,
    resolved: &ResolvedSqn,
    obj: &O,
) -> Result<StepOutcome> {
    let k = state.spider.iteration();
    let draw = if state.spider.is_restart_step() {
        state.spider.restart(obj, &state.x, &mut state.restart_rng)?
    } else {
        let prev = state.prev.as_ref().ok_or_else(|| {
            Error::ContractViolation("refresh step without a previous iterate".into())
        })?;
        let prev_x = prev.x.clone();
        state.spider.refresh(obj, &state.x, &prev_x, &mut state.refresh_rng)?
    };

    let v_norm = linalg::norm(state.spider.estimate());
    let (eta, branch) = resolved.rule.stepsize(v_norm);

    // Curvature pair from the batch drawn at the previous iteration,
    // evaluated at both endpoints of the last displacement. A rejected pair
    // is skipped; the iterate still moves with the unchanged memory.
    let mut pair_stored = false;
    if let Some(prev) = &state.prev {
        let s = linalg::sub(&state.x, &prev.x);
        if linalg::dot(&s, &s) > 0.0 && linalg::all_finite(&s) {
            let g_new = obj.batch_gradient(&state.x, &prev.batch);
            let g_old = obj.batch_gradient(&prev.x, &prev.batch);
            let y = linalg::sub(&g_new, &g_old);
            let norms = obj.sample_gradient_norms(&prev.x, &prev.batch);
            let gamma = compute_gamma_from_norms(&norms, &cfg.smoothness)?;
            if gamma.is_finite() && linalg::all_finite(&y) {
                match state.memory.update_adaptive(&s, &y, gamma, &cfg.damping) {
                    Ok(outcome) => pair_stored = outcome.stored,
                    Err(Error::PairRejected(_)) => {}
                    Err(e) => return Err(e),
                }
            }
        }
    }

    let direction = two_loop_apply(&state.memory, state.spider.estimate());
    let mut x_next = state.x.clone();
    linalg::axpy(-eta, &direction, &mut x_next);
    if !linalg::all_finite(&x_next) {
        return Err(Error::NonFinite { what: "iterate", iteration: k });
    }

    // The batch drawn this iteration seeds the next pair.
    state.prev = Some(PrevStep { x: std::mem::replace(&mut state.x, x_next), batch: draw.indices });
    state.spider.advance();

    Ok(StepOutcome {
        v_norm,
        stepsize: eta,
        branch,
        samples_consumed: state.spider.samples_consumed(),
        pair_stored,
    })
}

/// Run to the budget, recording the full loss every `record_every`
/// iterations (and always at the last one). Non-finite losses or iterates
/// abort the run, leaving a partial trace with the abort reason.
pub fn run<O: Objective>(
    cfg: &ClippedSqnConfig,
    obj: &O,
    x0: &[f64],
    budget: BudgetMode,
) -> Result<RunTrace> {
    let resolved = resolve(cfg)?;
    let mut state = TrainState::new(cfg, &resolved, x0)?;
    let mut records = Vec::new();
    let mut abort = None;

    loop {
        let k = state.spider.iteration();
        let proceed = match budget {
            BudgetMode::Iterations(max_k) => k < max_k,
            BudgetMode::Samples(max_samples) => {
                state.spider.samples_consumed() + state.spider.next_step_cost() <= max_samples
            }
        };
        if !proceed {
            break;
        }
        let samples_after = state.spider.samples_consumed() + state.spider.next_step_cost();
        let next_cost = if (k + 1) % resolved.restart_period == 0 {
            resolved.s1_size
        } else {
            resolved.s2_size
        };
        let last_iteration = match budget {
            BudgetMode::Iterations(max_k) => k + 1 == max_k,
            BudgetMode::Samples(max_samples) => samples_after + next_cost > max_samples,
        };
        let record_now = k % cfg.record_every == 0 || last_iteration;
        let x_before = record_now.then(|| state.x.clone());

        match step(&mut state, cfg, &resolved, obj) {
            Ok(outcome) => {
                if let Some(x) = x_before {
                    let loss = obj.full_loss(&x);
                    if !loss.is_finite() {
                        abort = Some(AbortInfo {
                            iteration: k,
                            reason: format!("non-finite loss {loss}"),
                        });
                        records.push(IterationRecord {
                            k,
                            samples: outcome.samples_consumed,
                            loss,
                            grad_norm: outcome.v_norm,
                            grad_norm_true: None,
                            stepsize: outcome.stepsize,
                            branch: outcome.branch,
                        });
                        break;
                    }
                    let grad_norm_true =
                        cfg.track_true_gradient.then(|| linalg::norm(&obj.full_gradient(&x)));
                    records.push(IterationRecord {
                        k,
                        samples: outcome.samples_consumed,
                        loss,
                        grad_norm: outcome.v_norm,
                        grad_norm_true,
                        stepsize: outcome.stepsize,
                        branch: outcome.branch,
                    });
                }
            }
            Err(Error::NonFinite { what, iteration }) => {
                abort = Some(AbortInfo { iteration, reason: format!("non-finite {what}") });
                break;
            }
            Err(other) => return Err(other),
        }
    }

    let iterations = state.spider.iteration();
    let output_index = (iterations > 0).then(|| {
        let mut rng = stream_rng(cfg.seed, Stream::Output);
        rng.gen_range(0..iterations)
    });
    Ok(RunTrace {
        records,
        output_index,
        final_loss: obj.full_loss(&state.x),
        final_x: state.x,
        iterations,
        samples_total: state.spider.samples_consumed(),
        clamp_warnings: state.memory.clamp_warnings(),
        abort,
    })
}
