use super::*;
use approx::assert_relative_eq;
use nalgebra::SymmetricEigen;
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::rng::{stream_rng, Stream};

fn params(delta: f64, q: f64, kappa: f64, p: usize) -> DampingParams {
    DampingParams::new(delta, q, kappa, p).unwrap()
}

#[test]
fn gamma_worked_values() {
    // gamma1 = 0: L0 = sqrt(2), Gamma = 1 + 1/sqrt(2)
    let p = SmoothnessParams::from_gamma(1.0, 0.0, 0.0).unwrap();
    let g = compute_gamma(&[], &p).unwrap();
    assert_relative_eq!(g, 1.0 + std::f64::consts::FRAC_1_SQRT_2, max_relative = 1e-12);

    // gamma0 = gamma1 = sigma = 1: L0 = 2; mean norm 2 adds gamma1^2 * 2
    let p = SmoothnessParams::from_gamma(1.0, 1.0, 1.0).unwrap();
    let g = compute_gamma(&[vec![2.0, 0.0], vec![0.0, 2.0]], &p).unwrap();
    assert_relative_eq!(g, 1.0 + 0.5f64.exp() / 2.0 + 2.0, max_relative = 1e-12);

    // empty batch is fine only when gamma1 = 0
    assert!(compute_gamma(&[], &p).is_err());
}

#[test]
fn gamma_is_at_least_gamma0() {
    let mut rng = stream_rng(31, Stream::Init);
    for _ in 0..100 {
        let p = SmoothnessParams::from_gamma(
            rng.gen_range(0.1..3.0),
            rng.gen_range(0.0..2.0),
            rng.gen_range(0.0..2.0),
        )
        .unwrap();
        let norms: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..4.0)).collect();
        let g = compute_gamma_from_norms(&norms, &p).unwrap();
        assert!(g >= p.gamma0);
    }
}

#[test]
fn scaling_worked_values() {
    let pr = params(0.1, 0.5, 1.0, 1);
    // w = 1, y'y / s'y = 1 -> max(0.1, 1) = 1
    assert_relative_eq!(compute_scaling(&[1.0, 0.0], &[1.0, 0.0], 1.0, &pr), 1.0);
    // negative curvature falls back to delta
    assert_relative_eq!(compute_scaling(&[1.0, 0.0], &[-1.0, 0.0], 1.0, &pr), 0.1);
    // large delta dominates
    let pr = params(10.0, 0.5, 1.0, 1);
    assert_relative_eq!(compute_scaling(&[1.0, 0.0], &[1.0, 0.0], 1.0, &pr), 10.0);
}

#[test]
fn damp_pair_branches() {
    // undamped branch: s'y >= q mu, so ybar = w y
    let pair = damp_pair_with(&[1.0, 0.0], &[1.0, 0.5], 1.0, 0.5, 2.0, 1.0).unwrap();
    assert_eq!(pair.y_bar, vec![2.0, 1.0]);

    // boundary example: theta = 1/4, ybar = (0.5, 0), s'ybar = w q mu exactly
    let pair = damp_pair_with(&[1.0, 0.0], &[-1.0, 0.0], 1.0, 0.5, 1.0, 1.0).unwrap();
    assert_relative_eq!(pair.y_bar[0], 0.5, max_relative = 1e-15);
    assert_eq!(pair.y_bar[1], 0.0);
    assert_relative_eq!(1.0 / pair.rho, 0.5, max_relative = 1e-15);

    // zero displacement is rejected
    assert!(matches!(
        damp_pair_with(&[0.0, 0.0], &[1.0, 0.0], 1.0, 0.5, 1.0, 1.0),
        Err(Error::PairRejected(_))
    ));
}

#[test]
fn damped_curvature_lower_bound_randomized() {
    let mut rng = stream_rng(37, Stream::Init);
    for _ in 0..100 {
        let d = rng.gen_range(1..8);
        let s: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if crate::linalg::dot(&s, &s) == 0.0 {
            continue;
        }
        let y: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let c = rng.gen_range(0.01..5.0);
        let q_k = rng.gen_range(0.01..0.99);
        let w_k = rng.gen_range(0.1..3.0);
        let pair = damp_pair_with(&s, &y, c, q_k, w_k, 1.0).unwrap();
        let floor = w_k * q_k * c * crate::linalg::dot(&s, &s);
        assert!(
            crate::linalg::dot(&pair.s, &pair.y_bar) >= floor - 1e-12,
            "curvature floor violated"
        );
    }
}

proptest! {
    #[test]
    fn damped_curvature_lower_bound_property(
        s in proptest::collection::vec(-10.0f64..10.0, 1..6),
        y in proptest::collection::vec(-10.0f64..10.0, 1..6),
        c in 1e-3f64..10.0,
        q_k in 1e-3f64..0.999,
        w_k in 1e-3f64..10.0,
    ) {
        let d = s.len().min(y.len());
        let (s, y) = (&s[..d], &y[..d]);
        prop_assume!(crate::linalg::dot(s, s) > 1e-12);
        let pair = damp_pair_with(s, y, c, q_k, w_k, 1.0).unwrap();
        let floor = w_k * q_k * c * crate::linalg::dot(s, s);
        prop_assert!(crate::linalg::dot(&pair.s, &pair.y_bar) >= floor - 1e-9 * floor.max(1.0));
    }
}

#[test]
fn two_loop_empty_memory_scales_by_inverse_c() {
    let mut memory = LbfgsMemory::new(3, 1.0).unwrap();
    memory.c = 2.0;
    assert_eq!(two_loop_apply(&memory, &[4.0, 6.0]), vec![2.0, 3.0]);
}

#[test]
fn two_loop_single_unit_pair_is_identity() {
    // d = 1, s = 1, ybar = 1, c = 1 collapses the recursion to rho s s' = 1.
    let mut memory = LbfgsMemory::new(1, 1.0).unwrap();
    let pair = damp_pair_with(&[1.0], &[1.0], 1.0, 0.5, 1.0, 1.0).unwrap();
    memory.push(pair, 1.0);
    let out = two_loop_apply(&memory, &[3.5]);
    assert_relative_eq!(out[0], 3.5, max_relative = 1e-15);
}

fn random_memory(rng: &mut ChaCha8Rng, d: usize, p: usize, steps: usize) -> LbfgsMemory {
    let mut memory = LbfgsMemory::new(p, 1.0).unwrap();
    for _ in 0..steps {
        let s: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if crate::linalg::dot(&s, &s) < 1e-9 {
            continue;
        }
        let y: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c = rng.gen_range(0.1..4.0);
        let q_k = rng.gen_range(0.05..0.95);
        let w_k = rng.gen_range(0.2..2.0);
        let pair = damp_pair_with(&s, &y, c, q_k, w_k, 1.0).unwrap();
        memory.push(pair, c);
    }
    memory
}

#[test]
fn two_loop_matches_dense_oracle() {
    let mut rng = stream_rng(41, Stream::Init);
    for _ in 0..50 {
        let d = rng.gen_range(2..8);
        let p = rng.gen_range(1..=5usize);
        let memory = random_memory(&mut rng, d, p, p + 2);
        let h = dense_hk(&memory, d).unwrap();
        let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let fast = two_loop_apply(&memory, &v);
        let slow = &h * nalgebra::DVector::from_column_slice(&v);
        let diff: f64 =
            fast.iter().zip(slow.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let scale = crate::linalg::norm(&v).max(1e-12);
        assert!(diff / scale <= 1e-10, "two-loop deviates from dense: {}", diff / scale);
    }
}

#[test]
fn dense_hk_is_symmetric_positive_definite() {
    let mut rng = stream_rng(43, Stream::Init);
    for _ in 0..20 {
        let d = rng.gen_range(2..8);
        let memory = random_memory(&mut rng, d, 4, 6);
        let h = dense_hk(&memory, d).unwrap();
        let asym = (&h - h.transpose()).norm();
        assert!(asym <= 1e-12, "asymmetry {asym}");
        let eig = SymmetricEigen::new(h);
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min > 0.0, "dense form lost positive definiteness: {min}");
    }
}

#[test]
fn dense_hk_respects_guard_and_empty_memory() {
    let memory = LbfgsMemory::new(2, 0.5).unwrap();
    let h = dense_hk(&memory, 3).unwrap();
    assert_relative_eq!(h[(0, 0)], 2.0, max_relative = 1e-15);
    assert_eq!(h[(0, 1)], 0.0);
    assert!(matches!(dense_hk(&memory, 65), Err(Error::DenseGuard(65, _))));
}

#[test]
fn dense_bfgs_identity_fixed_point() {
    let state = DenseBfgsState::identity(2).unwrap();
    let next = dense_bfgs_step(&state, &[1.0, 0.0], &[1.0, 0.0], 0.5, 1.0).unwrap();
    assert!((next.b - DMatrix::<f64>::identity(2, 2)).norm() <= 1e-14);
    assert!((next.h - DMatrix::<f64>::identity(2, 2)).norm() <= 1e-14);
}

#[test]
fn dense_bfgs_h_tracks_inverse_of_b() {
    let mut rng = stream_rng(47, Stream::Init);
    let d = 4;
    let mut state = DenseBfgsState::identity(d).unwrap();
    for _ in 0..20 {
        let s: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if crate::linalg::dot(&s, &s) < 1e-9 {
            continue;
        }
        state = dense_bfgs_step(&state, &s, &y, 0.3, 1.2).unwrap();
        let product = &state.b * &state.h;
        let err = (&product - DMatrix::<f64>::identity(d, d)).norm();
        assert!(err <= 1e-8, "B H drifted from identity: {err}");
    }
}

#[test]
fn dense_bfgs_stays_positive_definite_under_negative_curvature() {
    let mut rng = stream_rng(53, Stream::Init);
    let d = 3;
    let mut state = DenseBfgsState::identity(d).unwrap();
    for _ in 0..30 {
        let s: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if crate::linalg::dot(&s, &s) < 1e-9 {
            continue;
        }
        // force s'y < 0 half the time
        let mut y: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if rng.gen_bool(0.5) {
            let sy = crate::linalg::dot(&s, &y);
            if sy > 0.0 {
                for (yi, si) in y.iter_mut().zip(&s) {
                    *yi -= 2.0 * sy * si / crate::linalg::dot(&s, &s);
                }
            }
        }
        state = dense_bfgs_step(&state, &s, &y, 0.4, 1.0).unwrap();
        let eig = SymmetricEigen::new(state.b.clone());
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min > 0.0, "B lost positive definiteness: {min}");
    }
}

#[test]
fn eigen_bound_worked_values() {
    // delta = kappa = gamma0 = 1, q = 0.5:
    //   p = 1: inner sum 1 + 2 + 1 = 4, coefficient 2, lambda_min = 1/9
    //   p = 2: (1 + 4 * 3.75)^{-1} = 1/16
    assert_relative_eq!(lambda_min_bound(&params(1.0, 0.5, 1.0, 1), 1.0), 1.0 / 9.0, max_relative = 1e-15);
    assert_relative_eq!(lambda_min_bound(&params(1.0, 0.5, 1.0, 2), 1.0), 1.0 / 16.0, max_relative = 1e-15);
    //   a = 9: p = 1 gives 2, p = 2 gives 2 * (81-1)/8 = 20
    assert_relative_eq!(lambda_max_bound(&params(1.0, 0.5, 1.0, 1), 1.0), 2.0, max_relative = 1e-15);
    assert_relative_eq!(lambda_max_bound(&params(1.0, 0.5, 1.0, 2), 1.0), 20.0, max_relative = 1e-15);
}

#[test]
fn lambda_min_grows_with_q() {
    let low = lambda_min_bound(&params(1.0, 0.5, 1.0, 1), 1.0);
    let high = lambda_min_bound(&params(1.0, 1.0, 1.0, 1), 1.0);
    assert!(high > low);
}

/// Admissible-run generator for the eigenvalue-range checks: per-step pairs
/// `y = G s` with `G` symmetric positive semidefinite, `||G|| <= gamma0`, and
/// damping weights derived from a smoothness proxy kept small enough that the
/// threshold never clamps.
pub(super) struct EnvelopeRun {
    pub memory: LbfgsMemory,
    pub smooth: SmoothnessParams,
    pub damping: DampingParams,
}

pub(super) fn random_psd_matrix(rng: &mut ChaCha8Rng, d: usize, norm_cap: f64) -> DMatrix<f64> {
    let raw = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    let qr = raw.qr();
    let q = qr.q();
    let evs = DVector::from_fn(d, |_, _| rng.gen_range(0.0..norm_cap));
    &q * DMatrix::from_diagonal(&evs) * q.transpose()
}

pub(super) fn envelope_run(
    rng: &mut ChaCha8Rng,
    d: usize,
    p: usize,
    q_coeff: f64,
    steps: usize,
) -> EnvelopeRun {
    let smooth = SmoothnessParams::from_gamma(1.0, 10.0, 10.0).unwrap();
    let damping = DampingParams::new(1.0, q_coeff, 1.0, p).unwrap();
    let gamma_floor = compute_gamma_from_norms(&[0.0], &smooth).unwrap();
    let gamma_cap = (1.0 / q_coeff).powf(0.25) * 0.999;
    assert!(gamma_floor < gamma_cap, "no unclamped headroom for q = {q_coeff}");
    let mut memory = LbfgsMemory::new(p, damping.delta).unwrap();
    for _ in 0..steps {
        let g_mat = random_psd_matrix(rng, d, smooth.gamma0);
        let mut s: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = crate::linalg::norm(&s);
        if n == 0.0 {
            continue;
        }
        let scale = rng.gen_range(0.1..1.0) * 1e-3 / n;
        for si in &mut s {
            *si *= scale;
        }
        let s_v = DVector::from_column_slice(&s);
        let y: Vec<f64> = (&g_mat * s_v).iter().cloned().collect();
        // tiny per-sample gradient norms keep the proxy inside the
        // unclamped band
        let max_mean = (gamma_cap - gamma_floor) / (smooth.gamma1 * smooth.gamma1);
        let norms = vec![rng.gen_range(0.0..max_mean)];
        let gamma = compute_gamma_from_norms(&norms, &smooth).unwrap();
        let outcome = memory.update_adaptive(&s, &y, gamma, &damping).unwrap();
        assert!(outcome.stored && !outcome.clamped);
    }
    EnvelopeRun { memory, smooth, damping }
}

#[test]
fn eigenvalues_respect_lower_bound_for_admissible_runs() {
    let mut rng = stream_rng(59, Stream::Init);
    for _ in 0..100 {
        let d = rng.gen_range(2..7);
        let p = rng.gen_range(1..=5usize);
        let run = envelope_run(&mut rng, d, p, 0.5, p + 3);
        let bound = lambda_min_bound(&run.damping, run.smooth.gamma0);
        let h = dense_hk(&run.memory, d).unwrap();
        let eig = SymmetricEigen::new(h);
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min >= bound - 1e-12, "lambda_min {min} below bound {bound} (p = {p})");
    }
}

#[test]
fn eigenvalues_respect_upper_bound_for_deeper_memories() {
    // For a single-pair memory the closed-form upper bound can be exceeded;
    // the acceptance suite exercises that case and documents the failure.
    let mut rng = stream_rng(61, Stream::Init);
    for _ in 0..100 {
        let d = rng.gen_range(2..7);
        let p = rng.gen_range(2..=5usize);
        let run = envelope_run(&mut rng, d, p, 0.5, p + 3);
        let bound = lambda_max_bound(&run.damping, run.smooth.gamma0);
        let h = dense_hk(&run.memory, d).unwrap();
        let eig = SymmetricEigen::new(h);
        let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(max <= bound + 1e-12, "lambda_max {max} above bound {bound} (p = {p})");
    }
}

#[test]
fn diagnostic_dump_names_the_state() {
    let mut memory = LbfgsMemory::new(2, 0.5).unwrap();
    let pair = damp_pair_with(&[1.0, 0.0], &[1.0, 0.0], 1.0, 0.5, 1.0, 1.25).unwrap();
    memory.push(pair, 1.0);
    let dump = memory.diagnostic_dump();
    assert!(dump.contains("1 pair(s)"));
    assert!(dump.contains("gamma = 1.25"));
}

#[test]
fn memory_ring_evicts_oldest_and_counts_clamps() {
    let pr = params(1.0, 0.5, 1.0, 2);
    let mut memory = LbfgsMemory::new(2, 1.0).unwrap();
    // Gamma = 2 gives q * Gamma^4 = 8, which clamps
    for i in 0..3 {
        let s = vec![1.0 + i as f64, 0.0];
        let y = vec![1.0, 0.0];
        let outcome = memory.update_adaptive(&s, &y, 2.0, &pr).unwrap();
        assert!(outcome.stored && outcome.clamped);
    }
    assert_eq!(memory.len(), 2);
    assert_eq!(memory.clamp_warnings(), 3);
    assert_eq!(memory.pairs().next().unwrap().s[0], 2.0);

    // zero displacement leaves everything untouched
    let before_c = memory.scaling();
    let outcome = memory.update_adaptive(&[0.0, 0.0], &[1.0, 0.0], 2.0, &pr).unwrap();
    assert!(!outcome.stored);
    assert_eq!(memory.len(), 2);
    assert_eq!(memory.scaling(), before_c);
}
