//! Property bodies shared by the proptest target and the acceptance binary.
#![allow(dead_code)]

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

use reshuffle::dynamics::exact_mean_reshuffle;
use reshuffle::kernels::{
    penrose_residual, pseudoinverse, range_projector, SingularDecomposition, spectral_norm, truncated_geometric, Mat, SymmetricMatrix, Vector,
};
use reshuffle::problem::generalization_risk;
use reshuffle::reshuffle::{commutation_residual, epoch_identity_residual, pi_closed_form, pi_enumerate};
use reshuffle::risk::{risk_exact_reshuffle, sample_covariance_norm};
use reshuffle::{assemble, generate_gaussian, partition, BetaSpec, RegressionProblem, Route};

pub type Outcome = Result<(), TestCaseError>;

pub fn symmetric(entries: &[f64], d: usize) -> Mat {
    let a = Mat::from_fn(d, d, |i, j| entries[i * d + j]);
    (&a + a.transpose()) * 0.5
}

/// Gaussian problem with `n = m B`.
pub fn problem(m: usize, b: usize, p: usize, sigma2: f64, seed: u64) -> RegressionProblem {
    generate_gaussian(m * b, p, None, sigma2, &BetaSpec::Gaussian, seed).unwrap()
}

pub fn geometric_cases() -> impl Strategy<Value = (usize, Vec<f64>, f64, usize)> {
    (2usize..=6, prop::collection::vec(-1.0f64..1.0, 36), 0.01f64..2.0, 0usize..=20)
}

/// Eigen-based truncated geometric sum against `I + A + ... + A^{k-1}`.
pub fn geometric((d, entries, radius, k): (usize, Vec<f64>, f64, usize)) -> Outcome {
    let mut a = symmetric(&entries, d);
    let norm = spectral_norm(&a);
    prop_assume!(norm > 1e-6);
    a *= radius / norm;
    let mut naive = Mat::zeros(d, d);
    let mut power = Mat::identity(d, d);
    for _ in 0..k {
        naive += &power;
        power = &power * &a;
    }
    let fast = truncated_geometric(&SymmetricMatrix::symmetrize(a), k);
    let scale = naive.amax().max(1.0);
    prop_assert!((fast - &naive).amax() <= 1e-10 * scale);
    Ok(())
}

/// Entries are exactly zero half of the time.
fn sparse_entries() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(0.0), -1.0f64..1.0], 32)
}

pub fn low_rank_cases() -> impl Strategy<Value = (usize, usize, usize, Vec<f64>, Vec<f64>)> {
    (1usize..8, 1usize..8, 0usize..4, sparse_entries(), sparse_entries())
}

/// Penrose conditions and projector idempotence/symmetry on a random low-rank matrix.
pub fn pinv_and_projectors((rows, cols, rank, u, v): (usize, usize, usize, Vec<f64>, Vec<f64>)) -> Outcome {
    let r = rank.min(rows).min(cols);
    let uu = Mat::from_fn(rows, r, |i, j| u[i * 4 + j]);
    let vv = Mat::from_fn(cols, r, |i, j| v[i * 4 + j]);
    let a = uu * vv.transpose();
    let svd = SingularDecomposition::of(&a).unwrap();
    let rebuilt = &svd.u * Mat::from_diagonal(&svd.singular_values) * svd.v.transpose();
    prop_assert!((rebuilt - &a).amax() <= 1e-13);
    // Penrose residuals of any computed pseudoinverse grow like cond^2 * eps.
    let cut = reshuffle::kernels::default_rank_tol(rows, cols) * svd.sigma_max();
    let kept: Vec<f64> = svd.singular_values.iter().copied().filter(|&x| x > cut).collect();
    prop_assume!(kept.last().map_or(true, |&smin| smin >= 1e-2 * svd.sigma_max()));
    let pinv = pseudoinverse(&a, None).unwrap();
    prop_assert!(penrose_residual(&a, &pinv) <= 1e-10);
    let proj = range_projector(&a, None).unwrap();
    prop_assert!(proj.idempotence_residual() <= 1e-10);
    prop_assert!(proj.symmetry_residual() <= 1e-10);
    prop_assert!(proj.complement().idempotence_residual() <= 1e-10);
    Ok(())
}

pub fn modifier_cases(max_b: usize) -> impl Strategy<Value = (usize, usize, usize, f64, u64)> {
    (2usize..=max_b, 1usize..4, 1usize..5, 0.0f64..0.6, any::<u64>())
}

/// Both exact routes agree, the modifiers commute through the batch covariances, and
/// `Z` with its projectors is symmetric.
pub fn modifiers((b, m, p, alpha, seed): (usize, usize, usize, f64, u64)) -> Outcome {
    let pr = problem(m, b, p, 0.0, seed);
    let part = partition(&pr, b).unwrap();
    let mut pis = Vec::new();
    for j in 0..b {
        let e = pi_enumerate(&part, alpha, j).unwrap();
        let c = pi_closed_form(&part, alpha, j).unwrap();
        prop_assert!((&e - &c).amax() <= 1e-11, "B = {}, batch {}", b, j);
        pis.push(c);
    }
    prop_assert!(commutation_residual(&part, &pis) <= 1e-11);
    let ops = assemble(&part, alpha, Route::ClosedForm).unwrap();
    prop_assert!(ops.symmetry_residual() <= 1e-11);
    prop_assert!(ops.p_z().idempotence_residual() <= 1e-10);
    prop_assert!(ops.p_z0().symmetry_residual() <= 1e-10);
    Ok(())
}

pub fn epoch_cases() -> impl Strategy<Value = (usize, usize, f64, u64)> {
    (1usize..=5, 1usize..4, 0.0f64..0.8, any::<u64>())
}

/// Telescoping identity over one epoch, by enumeration.
pub fn epoch_identity((b, p, alpha, seed): (usize, usize, f64, u64)) -> Outcome {
    let pr = problem(2, b, p, 0.0, seed);
    let part = partition(&pr, b).unwrap();
    prop_assert!(epoch_identity_residual(&part, alpha).unwrap() <= 1e-11);
    Ok(())
}

pub fn rotation_cases() -> impl Strategy<Value = (usize, usize, Vec<f64>, f64, f64, u64)> {
    (
        1usize..=3,
        2usize..6,
        prop::collection::vec(-1.0f64..1.0, 36),
        0.0f64..0.8,
        0.05f64..0.9,
        any::<u64>(),
    )
}

/// Risk is unchanged when `X`, `Sigma`, `beta*` and `beta_0` are rotated together.
pub fn rotation((b, p, q, rho, alpha_frac, seed): (usize, usize, Vec<f64>, f64, f64, u64)) -> Outcome {
    let sigma = SymmetricMatrix::symmetrize(Mat::from_fn(p, p, |i, j| rho.powi((i as i32 - j as i32).abs())));
    let pr = generate_gaussian(4 * b, p, Some(&sigma), 0.3, &BetaSpec::Gaussian, seed)
        .unwrap()
        .with_beta0(Vector::from_fn(p, |i, _| 0.2 * i as f64 - 0.1))
        .unwrap();
    let rot = Mat::from_fn(p, p, |i, j| q[i * p + j]).qr().q();
    let turned = pr.rotated(&rot).unwrap();
    let alpha = alpha_frac / (b as f64 * sample_covariance_norm(&pr));
    let risk = |problem: &RegressionProblem| {
        let ops = assemble(&partition(problem, b).unwrap(), alpha, Route::ClosedForm).unwrap();
        let mean = exact_mean_reshuffle(problem, &ops, 6).unwrap();
        (
            risk_exact_reshuffle(problem, &ops, 6).unwrap().totals(),
            generalization_risk(&mean.iterates[6], problem).unwrap(),
        )
    };
    let (r0, g0) = risk(&pr);
    let (r1, g1) = risk(&turned);
    for (a, c) in r0.iter().zip(&r1) {
        prop_assert!((a - c).abs() <= 1e-9 * a.abs().max(1.0));
    }
    prop_assert!((g0 - g1).abs() <= 1e-9 * g0.abs().max(1.0));
    Ok(())
}

/// Runs `check` over `cases` draws of `strategy` with a fixed seed.
pub fn run_property<S: Strategy>(
    cases: u32,
    strategy: S,
    check: impl Fn(S::Value) -> Outcome,
) -> Result<(), String> {
    let mut runner = TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        proptest::test_runner::TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha),
    );
    runner.run(&strategy, check).map_err(|e| e.to_string())
}
