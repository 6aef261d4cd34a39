//! Fast property checks behind the `verify` subcommand: a compact sweep of
//! the library's oracle identities, printed one line per check.

use rand::Rng;

use sqn_core::linalg;
use sqn_core::objectives::{
    check_cross_entropy_smoothness, generate_synthetic, gradient, loss, Dataset, LabelMode,
    Objective, ObjectiveKind, SyntheticConfig,
};
use sqn_core::optimizer::StepsizeRule;
use sqn_core::quasi_newton::{
    damp_pair_with, dense_bfgs_step, dense_hk, two_loop_apply, DenseBfgsState, LbfgsMemory,
};
use sqn_core::rng::{stream_rng, Stream};
use sqn_core::spider::{theory_batch_sizes, SamplingMode, SpiderState};
use sqn_core::trace::StepBranch;

type CheckResult = std::result::Result<(), String>;

fn data(seed: u64, label_mode: LabelMode) -> Dataset {
    generate_synthetic(&SyntheticConfig {
        dimension: 6,
        size: 24,
        sparsity: 0.4,
        label_mode,
        shared_u: false,
        seed,
    })
    .expect("static synthetic config")
}

fn check_gradients() -> CheckResult {
    let mut rng = stream_rng(1, Stream::Init);
    for (kind, mode) in [
        (ObjectiveKind::RobustLinearRegression, LabelMode::PlusMinusOne),
        (ObjectiveKind::NonconvexLogistic, LabelMode::ZeroOne),
    ] {
        let d = data(11, mode);
        for _ in 0..10 {
            let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let batch = [0usize, 5, 9];
            let g = gradient(kind, &x, &d, &batch).map_err(|e| e.to_string())?;
            let h = 1e-5;
            let mut xp = x.clone();
            for j in 0..6 {
                xp[j] = x[j] + h;
                let up = loss(kind, &xp, &d, &batch).map_err(|e| e.to_string())?;
                xp[j] = x[j] - h;
                let dn = loss(kind, &xp, &d, &batch).map_err(|e| e.to_string())?;
                xp[j] = x[j];
                let fd = (up - dn) / (2.0 * h);
                if (fd - g[j]).abs() > 1e-6 * g[j].abs().max(1e-4) {
                    return Err(format!("{kind:?}: coordinate {j} fd {fd} vs {}", g[j]));
                }
            }
        }
    }
    Ok(())
}

fn check_curvature_ratio() -> CheckResult {
    let mut rng = stream_rng(2, Stream::Init);
    for _ in 0..20 {
        let u: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let x = vec![(0..4).map(|_| rng.gen_range(-3.0..3.0)).collect::<Vec<f64>>()];
        let rep = check_cross_entropy_smoothness(&u, 1.0, &x);
        if let Some(r) = rep.max_ratio {
            if r > rep.bound + 1e-12 {
                return Err(format!("ratio {r} exceeds bound {}", rep.bound));
            }
        }
    }
    Ok(())
}

fn check_two_loop_against_dense() -> CheckResult {
    let mut rng = stream_rng(3, Stream::Init);
    for _ in 0..30 {
        let d = rng.gen_range(2..8);
        let mut memory = LbfgsMemory::new(4, 1.0).map_err(|e| e.to_string())?;
        for _ in 0..5 {
            let s: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            if linalg::dot(&s, &s) < 1e-9 {
                continue;
            }
            let y: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let c = rng.gen_range(0.2..3.0);
            let pair = damp_pair_with(&s, &y, c, 0.3, 1.0, 1.0).map_err(|e| e.to_string())?;
            memory.push(pair, c);
        }
        let h = dense_hk(&memory, d).map_err(|e| e.to_string())?;
        let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fast = two_loop_apply(&memory, &v);
        let slow = &h * nalgebra_vec(&v);
        let err: f64 =
            fast.iter().zip(slow.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        if err > 1e-10 * linalg::norm(&v).max(1.0) {
            return Err(format!("two-loop deviates from dense by {err}"));
        }
    }
    Ok(())
}

fn nalgebra_vec(v: &[f64]) -> nalgebra::DVector<f64> {
    nalgebra::DVector::from_column_slice(v)
}

fn check_damping_floor() -> CheckResult {
    let mut rng = stream_rng(4, Stream::Init);
    for _ in 0..200 {
        let d = rng.gen_range(1..6);
        let s: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if linalg::dot(&s, &s) < 1e-9 {
            continue;
        }
        let y: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let (c, qk, wk) =
            (rng.gen_range(0.05..4.0), rng.gen_range(0.05..0.95), rng.gen_range(0.1..2.0));
        let pair = damp_pair_with(&s, &y, c, qk, wk, 1.0).map_err(|e| e.to_string())?;
        let floor = wk * qk * c * linalg::dot(&s, &s);
        if linalg::dot(&pair.s, &pair.y_bar) < floor - 1e-12 {
            return Err("damped curvature fell below the guaranteed floor".into());
        }
    }
    Ok(())
}

fn check_dense_bfgs_inverse() -> CheckResult {
    let mut rng = stream_rng(5, Stream::Init);
    let mut state = DenseBfgsState::identity(4).map_err(|e| e.to_string())?;
    for _ in 0..10 {
        let s: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if linalg::dot(&s, &s) < 1e-9 {
            continue;
        }
        let y: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        state = dense_bfgs_step(&state, &s, &y, 0.3, 1.0).map_err(|e| e.to_string())?;
        let err = (&state.b * &state.h - nalgebra::DMatrix::<f64>::identity(4, 4)).norm();
        if err > 1e-8 {
            return Err(format!("B H deviates from identity by {err}"));
        }
    }
    Ok(())
}

fn check_stepsize_rule() -> CheckResult {
    let rule = StepsizeRule { h1: 1.0, eps: 0.1, l0: 1.0, l1: 1.0, lambda_max: 1.0 };
    let cases = [
        (10.0, 0.001, StepBranch::Quadratic),
        (0.1, 0.5, StepBranch::Constant),
    ];
    for (v, eta_expect, branch_expect) in cases {
        let (eta, branch) = rule.stepsize(v);
        if (eta - eta_expect).abs() > 1e-15 || branch != branch_expect {
            return Err(format!("stepsize({v}) gave ({eta}, {branch:?})"));
        }
    }
    Ok(())
}

fn check_theory_batches() -> CheckResult {
    match theory_batch_sizes(0.1, 1.0, 1.0) {
        Ok((200, 40, 10)) => Ok(()),
        other => Err(format!("unexpected theory batch sizes {other:?}")),
    }
}

fn check_dataset_round_trip() -> CheckResult {
    let d = data(21, LabelMode::PlusMinusOne);
    let text = d.to_text();
    let back = Dataset::from_text(&text).map_err(|e| e.to_string())?;
    if back != d {
        return Err("dataset text round trip lost information".into());
    }
    Ok(())
}

fn check_estimator_telescoping() -> CheckResult {
    let d = data(31, LabelMode::PlusMinusOne);
    let obj = sqn_core::objectives::DatasetObjective::new(
        ObjectiveKind::RobustLinearRegression,
        &d,
    );
    let n = d.len();
    let mut st =
        SpiderState::new(6, n, n, 100, SamplingMode::WithoutReplacement).map_err(|e| e.to_string())?;
    let mut rng = stream_rng(6, Stream::Restart);
    let mut x = vec![0.2; 6];
    st.restart(&obj, &x, &mut rng).map_err(|e| e.to_string())?;
    for k in 0..5 {
        let prev = x.clone();
        x[k % 6] += 0.03;
        st.advance();
        st.refresh(&obj, &x, &prev, &mut rng).map_err(|e| e.to_string())?;
        let exact = obj.full_gradient(&x);
        let err = linalg::norm(&linalg::sub(st.estimate(), &exact));
        if err > 1e-12 {
            return Err(format!("full-batch telescoping drifted by {err}"));
        }
    }
    Ok(())
}

type Check = (&'static str, fn() -> CheckResult);

/// Run every check, print one line each, and report whether all passed.
pub fn run_all(mut sink: impl std::io::Write) -> std::io::Result<bool> {
    let checks: [Check; 9] = [
        ("gradient finite differences", check_gradients),
        ("analytic curvature ratio bound", check_curvature_ratio),
        ("two-loop vs dense recursion", check_two_loop_against_dense),
        ("damped curvature floor", check_damping_floor),
        ("dense BFGS inverse consistency", check_dense_bfgs_inverse),
        ("stepsize rule worked values", check_stepsize_rule),
        ("theory batch sizes", check_theory_batches),
        ("dataset text round trip", check_dataset_round_trip),
        ("estimator full-batch telescoping", check_estimator_telescoping),
    ];
    let mut all_ok = true;
    for (name, check) in checks {
        match check() {
            Ok(()) => writeln!(sink, "ok      {name}")?,
            Err(msg) => {
                all_ok = false;
                writeln!(sink, "FAILED  {name}: {msg}")?;
            }
        }
    }
    Ok(all_ok)
}
