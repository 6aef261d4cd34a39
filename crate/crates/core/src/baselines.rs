//! The comparison algorithms: mini-batch SGD, the two variance-reduced
//! first-order methods (two-term and three-term clipped stepsizes), and a
//! non-adaptive damped L-BFGS with mini-batch gradients and a decaying
//! stepsize. All of them share the estimator, memory and stepsize machinery
//! of the main method and honor the same sample-accounting contract, so
//! equal-sample-budget comparisons are exact.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::objectives::Objective;
use crate::optimizer::StepsizeRule;
use crate::quasi_newton::{two_loop_apply, LbfgsMemory};
use crate::rng::{stream_rng, Stream};
use crate::spider::{SamplingMode, SpiderState};
use crate::trace::{AbortInfo, IterationRecord, RunTrace, StepBranch};

#[derive(Debug, Clone)]
pub struct SgdConfig {
    pub batch_size: usize,
    pub stepsize: f64,
    pub seed: u64,
    pub record_every: usize,
}

/// One mini-batch gradient step with a fixed stepsize.
pub fn sgd_step<O: Objective>(
    x: &mut [f64],
    obj: &O,
    stepsize: f64,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let n = obj.num_samples();
    let batch: Vec<usize> = (0..batch_size).map(|_| rng.gen_range(0..n)).collect();
    let g = obj.batch_gradient(x, &batch);
    linalg::axpy(-stepsize, &g, x);
    g
}

pub fn run_sgd<O: Objective>(
    cfg: &SgdConfig,
    obj: &O,
    x0: &[f64],
    sample_budget: usize,
) -> Result<RunTrace> {
    if cfg.batch_size == 0 || cfg.record_every == 0 {
        return Err(Error::InvalidConfig("batch size and record_every must be positive".into()));
    }
    let mut rng = stream_rng(cfg.seed, Stream::Batch);
    let mut x = x0.to_vec();
    let mut records = Vec::new();
    let mut abort = None;
    let mut samples = 0usize;
    let mut k = 0usize;
    while samples + cfg.batch_size <= sample_budget {
        let record_now = k.is_multiple_of(cfg.record_every) || samples + 2 * cfg.batch_size > sample_budget;
        let x_before = record_now.then(|| x.clone());
        let g = sgd_step(&mut x, obj, cfg.stepsize, cfg.batch_size, &mut rng);
        samples += cfg.batch_size;
        if !linalg::all_finite(&x) {
            abort = Some(AbortInfo { iteration: k, reason: "non-finite iterate".into() });
            break;
        }
        if let Some(xb) = x_before {
            let loss = obj.full_loss(&xb);
            if !loss.is_finite() {
                abort = Some(AbortInfo { iteration: k, reason: format!("non-finite loss {loss}") });
                break;
            }
            records.push(IterationRecord {
                k,
                samples,
                loss,
                grad_norm: linalg::norm(&g),
                grad_norm_true: None,
                stepsize: cfg.stepsize,
                branch: StepBranch::Constant,
            });
        }
        k += 1;
    }
    Ok(RunTrace {
        records,
        output_index: None,
        final_loss: obj.full_loss(&x),
        final_x: x,
        iterations: k,
        samples_total: samples,
        clamp_warnings: 0,
        abort,
    })
}

/// Variance-reduced first-order baseline; `quadratic_l1 = None` gives the
/// two-term stepsize `min(1/(2L), eps/(L ||v||))`, `Some(l1)` adds the
/// third term `eps/(l1 ||v||^2)`.
#[derive(Debug, Clone)]
pub struct VrSpiderConfig {
    pub s1_size: usize,
    pub s2_size: usize,
    pub restart_period: usize,
    pub smooth_l0: f64,
    pub quadratic_l1: Option<f64>,
    pub eps: f64,
    pub sampling: SamplingMode,
    pub seed: u64,
    pub record_every: usize,
}

impl VrSpiderConfig {
    /// The rule these baselines step with; the unit margin and unit
    /// eigenvalue scale recover the plain clipped stepsizes.
    pub fn rule(&self) -> StepsizeRule {
        StepsizeRule {
            h1: 1.0,
            eps: self.eps,
            l0: self.smooth_l0,
            l1: self.quadratic_l1.unwrap_or(0.0),
            lambda_max: 1.0,
        }
    }
}

/// One estimator update plus the clipped first-order move `x -= eta v`.
pub fn vr_spider_step<O: Objective>(
    state: &mut SpiderState,
    x: &mut [f64],
    x_prev: &mut Option<Vec<f64>>,
    obj: &O,
    rule: &StepsizeRule,
    restart_rng: &mut ChaCha8Rng,
    refresh_rng: &mut ChaCha8Rng,
) -> Result<(f64, StepBranch, f64)> {
    if state.is_restart_step() {
        state.restart(obj, x, restart_rng)?;
    } else {
        let prev = x_prev
            .as_ref()
            .ok_or_else(|| Error::ContractViolation("refresh without previous iterate".into()))?
            .clone();
        state.refresh(obj, x, &prev, refresh_rng)?;
    }
    let v_norm = linalg::norm(state.estimate());
    let (eta, branch) = rule.stepsize(v_norm);
    *x_prev = Some(x.to_vec());
    let estimate = state.estimate().to_vec();
    linalg::axpy(-eta, &estimate, x);
    state.advance();
    Ok((eta, branch, v_norm))
}

pub fn run_vr_spider<O: Objective>(
    cfg: &VrSpiderConfig,
    obj: &O,
    x0: &[f64],
    sample_budget: usize,
) -> Result<RunTrace> {
    if cfg.record_every == 0 {
        return Err(Error::InvalidConfig("record_every must be positive".into()));
    }
    let rule = cfg.rule();
    let mut state =
        SpiderState::new(x0.len(), cfg.s1_size, cfg.s2_size, cfg.restart_period, cfg.sampling)?;
    let mut restart_rng = stream_rng(cfg.seed, Stream::Restart);
    let mut refresh_rng = stream_rng(cfg.seed, Stream::Refresh);
    let mut x = x0.to_vec();
    let mut x_prev: Option<Vec<f64>> = None;
    let mut records = Vec::new();
    let mut abort = None;
    loop {
        let k = state.iteration();
        if state.samples_consumed() + state.next_step_cost() > sample_budget {
            break;
        }
        let samples_after = state.samples_consumed() + state.next_step_cost();
        let next_cost =
            if (k + 1) % cfg.restart_period == 0 { cfg.s1_size } else { cfg.s2_size };
        let record_now =
            k % cfg.record_every == 0 || samples_after + next_cost > sample_budget;
        let x_before = record_now.then(|| x.clone());
        let (eta, branch, v_norm) =
            vr_spider_step(&mut state, &mut x, &mut x_prev, obj, &rule, &mut restart_rng, &mut refresh_rng)?;
        if !linalg::all_finite(&x) {
            abort = Some(AbortInfo { iteration: k, reason: "non-finite iterate".into() });
            break;
        }
        if let Some(xb) = x_before {
            let loss = obj.full_loss(&xb);
            if !loss.is_finite() {
                abort = Some(AbortInfo { iteration: k, reason: format!("non-finite loss {loss}") });
                break;
            }
            records.push(IterationRecord {
                k,
                samples: state.samples_consumed(),
                loss,
                grad_norm: v_norm,
                grad_norm_true: None,
                stepsize: eta,
                branch,
            });
        }
    }
    Ok(RunTrace {
        records,
        output_index: None,
        final_loss: obj.full_loss(&x),
        final_x: x,
        iterations: state.iteration(),
        samples_total: state.samples_consumed(),
        clamp_warnings: 0,
        abort,
    })
}

/// Non-adaptive damped L-BFGS baseline: plain mini-batch gradients, fixed
/// damping threshold, unit pair weight, stepsize `eta0 / sqrt(1 + k)`.
#[derive(Debug, Clone)]
pub struct SdLbfgsConfig {
    pub batch_size: usize,
    pub eta0: f64,
    /// Fixed damping threshold in (0, 1).
    pub q_fixed: f64,
    pub delta: f64,
    pub memory_size: usize,
    pub seed: u64,
    pub record_every: usize,
}

/// One step: fresh batch gradient, curvature pair from the previous batch,
/// decayed preconditioned move. Returns the batch for the next pair.
#[allow(clippy::too_many_arguments)]
pub fn sdlbfgs_step<O: Objective>(
    x: &mut [f64],
    memory: &mut LbfgsMemory,
    prev: &mut Option<(Vec<f64>, Vec<usize>)>,
    obj: &O,
    cfg: &SdLbfgsConfig,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64)> {
    let n = obj.num_samples();
    let batch: Vec<usize> = (0..cfg.batch_size).map(|_| rng.gen_range(0..n)).collect();
    let g = obj.batch_gradient(x, &batch);

    if let Some((x_old, batch_old)) = prev.as_ref() {
        let s = linalg::sub(x, x_old);
        if linalg::dot(&s, &s) > 0.0 {
            let g_new = obj.batch_gradient(x, batch_old);
            let g_old = obj.batch_gradient(x_old, batch_old);
            let y = linalg::sub(&g_new, &g_old);
            memory.update_fixed(&s, &y, cfg.q_fixed, cfg.delta)?;
        }
    }

    let eta = cfg.eta0 / (1.0 + k as f64).sqrt();
    let direction = two_loop_apply(memory, &g);
    *prev = Some((x.to_vec(), batch));
    linalg::axpy(-eta, &direction, x);
    Ok((eta, linalg::norm(&g)))
}

pub fn run_sdlbfgs<O: Objective>(
    cfg: &SdLbfgsConfig,
    obj: &O,
    x0: &[f64],
    sample_budget: usize,
) -> Result<RunTrace> {
    if cfg.batch_size == 0 || cfg.record_every == 0 {
        return Err(Error::InvalidConfig("batch size and record_every must be positive".into()));
    }
    if !(cfg.q_fixed > 0.0 && cfg.q_fixed < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "fixed damping threshold must lie in (0, 1), got {}",
            cfg.q_fixed
        )));
    }
    let mut rng = stream_rng(cfg.seed, Stream::Batch);
    let mut memory = LbfgsMemory::new(cfg.memory_size, cfg.delta)?;
    let mut x = x0.to_vec();
    let mut prev: Option<(Vec<f64>, Vec<usize>)> = None;
    let mut records = Vec::new();
    let mut abort = None;
    let mut samples = 0usize;
    let mut k = 0usize;
    while samples + cfg.batch_size <= sample_budget {
        let record_now = k.is_multiple_of(cfg.record_every) || samples + 2 * cfg.batch_size > sample_budget;
        let x_before = record_now.then(|| x.clone());
        let (eta, g_norm) = sdlbfgs_step(&mut x, &mut memory, &mut prev, obj, cfg, k, &mut rng)?;
        samples += cfg.batch_size;
        if !linalg::all_finite(&x) {
            abort = Some(AbortInfo { iteration: k, reason: "non-finite iterate".into() });
            break;
        }
        if let Some(xb) = x_before {
            let loss = obj.full_loss(&xb);
            if !loss.is_finite() {
                abort = Some(AbortInfo { iteration: k, reason: format!("non-finite loss {loss}") });
                break;
            }
            records.push(IterationRecord {
                k,
                samples,
                loss,
                grad_norm: g_norm,
                grad_norm_true: None,
                stepsize: eta,
                branch: StepBranch::Constant,
            });
        }
        k += 1;
    }
    Ok(RunTrace {
        records,
        output_index: None,
        final_loss: obj.full_loss(&x),
        final_x: x,
        iterations: k,
        samples_total: samples,
        clamp_warnings: 0,
        abort,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{
        generate_synthetic, DatasetObjective, LabelMode, Objective, ObjectiveKind, SyntheticConfig,
    };
    use crate::quasi_newton::dense_hk;
    use approx::assert_relative_eq;
    use nalgebra::SymmetricEigen;

    struct Bowl {
        d: usize,
    }
    impl Objective for Bowl {
        fn dimension(&self) -> usize {
            self.d
        }
        fn num_samples(&self) -> usize {
            1
        }
        fn sample_loss(&self, x: &[f64], _i: usize) -> f64 {
            0.5 * crate::linalg::dot(x, x)
        }
        fn sample_gradient_into(&self, x: &[f64], _i: usize, out: &mut [f64]) {
            out.copy_from_slice(x);
        }
    }

    fn synthetic(seed: u64, n: usize, d: usize) -> crate::objectives::Dataset {
        generate_synthetic(&SyntheticConfig {
            dimension: d,
            size: n,
            sparsity: 0.5,
            label_mode: LabelMode::PlusMinusOne,
            shared_u: false,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn sgd_zero_stepsize_leaves_x_fixed() {
        let bowl = Bowl { d: 3 };
        let mut rng = stream_rng(1, Stream::Batch);
        let mut x = vec![1.0, -2.0, 0.5];
        sgd_step(&mut x, &bowl, 0.0, 4, &mut rng);
        assert_eq!(x, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn sgd_unit_step_contracts_quadratic_in_one_move() {
        let bowl = Bowl { d: 2 };
        let mut rng = stream_rng(2, Stream::Batch);
        let mut x = vec![3.0, -4.0];
        // power-of-two batch keeps the batch mean exact in floating point
        sgd_step(&mut x, &bowl, 1.0, 4, &mut rng);
        assert_eq!(x, vec![0.0, 0.0]);
    }

    #[test]
    fn spider_two_term_rule_matches_shared_stepsize_formula() {
        let cfg = VrSpiderConfig {
            s1_size: 10,
            s2_size: 4,
            restart_period: 5,
            smooth_l0: 1.0,
            quadratic_l1: None,
            eps: 0.1,
            sampling: SamplingMode::WithReplacement,
            seed: 0,
            record_every: 1,
        };
        let rule = cfg.rule();
        // ||v|| = 10, L = 1, eps = 0.1 -> eta = 0.01
        let (eta, branch) = rule.stepsize(10.0);
        assert_relative_eq!(eta, 0.01, max_relative = 1e-15);
        assert_eq!(branch, crate::trace::StepBranch::Linear);
        // small ||v|| pins the constant branch at 1/(2L)
        let (eta, branch) = rule.stepsize(0.1);
        assert_relative_eq!(eta, 0.5, max_relative = 1e-15);
        assert_eq!(branch, crate::trace::StepBranch::Constant);
    }

    #[test]
    fn three_term_rule_reduces_to_two_term_when_l1_vanishes() {
        let base = VrSpiderConfig {
            s1_size: 10,
            s2_size: 4,
            restart_period: 5,
            smooth_l0: 1.0,
            quadratic_l1: Some(1.0),
            eps: 0.1,
            sampling: SamplingMode::WithReplacement,
            seed: 0,
            record_every: 1,
        };
        // worked three-term value
        let (eta, branch) = base.rule().stepsize(10.0);
        assert_relative_eq!(eta, 0.001, max_relative = 1e-15);
        assert_eq!(branch, crate::trace::StepBranch::Quadratic);
        // l1 -> 0 limit agrees with the two-term rule everywhere
        let two = VrSpiderConfig { quadratic_l1: None, ..base.clone() };
        let three = VrSpiderConfig { quadratic_l1: Some(0.0), ..base };
        for i in 0..100 {
            let v = i as f64 * 0.3;
            assert_eq!(two.rule().stepsize(v), three.rule().stepsize(v));
        }
    }

    #[test]
    fn vr_spider_zero_estimate_keeps_x() {
        // all-zero-label cross-entropy: gradient identically zero
        let samples = (0..6)
            .map(|i| crate::objectives::Sample {
                features: vec![1.0 + i as f64, 0.3],
                label: 0.0,
            })
            .collect();
        let data = crate::objectives::Dataset::new(samples, 2).unwrap();
        let obj = DatasetObjective::new(ObjectiveKind::SigmoidCrossEntropy, &data);
        let cfg = VrSpiderConfig {
            s1_size: 6,
            s2_size: 3,
            restart_period: 3,
            smooth_l0: 1.0,
            quadratic_l1: Some(1.0),
            eps: 0.1,
            sampling: SamplingMode::WithReplacement,
            seed: 5,
            record_every: 1,
        };
        let trace = run_vr_spider(&cfg, &obj, &[0.4, -0.6], 30).unwrap();
        assert_eq!(trace.final_x, vec![0.4, -0.6]);
        // zero estimate means the constant branch was active throughout
        assert!(trace.records.iter().all(|r| r.branch == crate::trace::StepBranch::Constant));
    }

    #[test]
    fn sdlbfgs_first_step_is_collinear_with_gradient() {
        let data = synthetic(7, 12, 3);
        let obj = DatasetObjective::new(ObjectiveKind::RobustLinearRegression, &data);
        let cfg = SdLbfgsConfig {
            batch_size: 12,
            eta0: 0.5,
            q_fixed: 0.25,
            delta: 2.0,
            memory_size: 5,
            seed: 3,
            record_every: 1,
        };
        let mut rng = stream_rng(cfg.seed, Stream::Batch);
        let mut memory = LbfgsMemory::new(cfg.memory_size, cfg.delta).unwrap();
        let mut prev = None;
        let x0 = vec![0.5, -0.5, 0.2];
        let mut x = x0.clone();
        sdlbfgs_step(&mut x, &mut memory, &mut prev, &obj, &cfg, 0, &mut rng).unwrap();
        // direction = g / delta, eta = eta0
        let step_vec = crate::linalg::sub(&x0, &x);
        let g = &prev.as_ref().unwrap().1;
        let g = obj.batch_gradient(&x0, g);
        for (si, gi) in step_vec.iter().zip(&g) {
            assert_relative_eq!(*si, 0.5 * gi / 2.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn sdlbfgs_preconditioner_stays_positive_definite() {
        let data = synthetic(9, 30, 4);
        let obj = DatasetObjective::new(ObjectiveKind::RobustLinearRegression, &data);
        let cfg = SdLbfgsConfig {
            batch_size: 6,
            eta0: 0.5,
            q_fixed: 0.25,
            delta: 0.01,
            memory_size: 5,
            seed: 11,
            record_every: 1,
        };
        let mut rng = stream_rng(cfg.seed, Stream::Batch);
        let mut memory = LbfgsMemory::new(cfg.memory_size, cfg.delta).unwrap();
        let mut prev = None;
        let mut x = vec![0.8, -0.3, 0.1, 0.6];
        for k in 0..25 {
            sdlbfgs_step(&mut x, &mut memory, &mut prev, &obj, &cfg, k, &mut rng).unwrap();
            let h = dense_hk(&memory, 4).unwrap();
            let eig = SymmetricEigen::new(h);
            let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(min > 0.0, "preconditioner lost positive definiteness at step {k}");
        }
    }

    #[test]
    fn budgeted_runs_share_the_sample_accounting_contract() {
        let data = synthetic(13, 40, 4);
        let obj = DatasetObjective::new(ObjectiveKind::RobustLinearRegression, &data);
        let budget = 400;
        let x0 = vec![0.2; 4];

        let sgd = run_sgd(
            &SgdConfig { batch_size: 30, stepsize: 0.1, seed: 1, record_every: 3 },
            &obj,
            &x0,
            budget,
        )
        .unwrap();
        assert_eq!(sgd.samples_total, 390); // 13 steps of 30
        assert_eq!(sgd.iterations, 13);

        let spider = run_vr_spider(
            &VrSpiderConfig {
                s1_size: 40,
                s2_size: 10,
                restart_period: 4,
                smooth_l0: 1.0,
                quadratic_l1: Some(0.5),
                eps: 0.1,
                sampling: SamplingMode::WithReplacement,
                seed: 2,
                record_every: 4,
            },
            &obj,
            &x0,
            budget,
        )
        .unwrap();
        let restarts = spider.iterations.div_ceil(4);
        assert_eq!(
            spider.samples_total,
            restarts * 40 + (spider.iterations - restarts) * 10
        );
        assert!(spider.samples_total <= budget);
        // every run stops within one largest-step of the budget
        assert!(budget - spider.samples_total < 40 + 10);

        let sdl = run_sdlbfgs(
            &SdLbfgsConfig {
                batch_size: 30,
                eta0: 0.3,
                q_fixed: 0.25,
                delta: 0.1,
                memory_size: 3,
                seed: 3,
                record_every: 5,
            },
            &obj,
            &x0,
            budget,
        )
        .unwrap();
        assert_eq!(sdl.samples_total, 390);

        // the final recorded row is always present
        assert_eq!(sgd.records.last().unwrap().k, sgd.iterations - 1);
        assert_eq!(spider.records.last().unwrap().k, spider.iterations - 1);
    }
}
