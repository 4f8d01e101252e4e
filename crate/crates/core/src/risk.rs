//! Exact generalization error of the mean iterate, its limit, and two-batch bounds.
//!
//! For an iteration operator `A` (the cross-covariance `Z`, or `W` for full batch) with
//! per-step size `s`, steps `m` per epoch and noise Gram matrix `G` (`X~^T X~ / n`, or `W`),
//! the expected risk over the noise at epoch `k` splits as
//!
//! * `bias_frozen   = a^T P_0 Sigma P_0 a`,
//! * `bias_decaying = |M^k P a|_Sigma^2 + 2 (P_0 a)^T Sigma M^k P a`,
//! * `variance      = (sigma^2 / n) Tr([I - M^k] Sigma [I - M^k] A^+ G A^+)`,
//!
//! with `a = beta_0 - beta*`, `M = I - s A`, `P` the projector onto `range(A)` and
//! `P_0 = I - P`. The cross term vanishes when `Sigma` commutes with `P`. Everything is
//! evaluated in the eigenbasis of `A`, so each epoch costs `O(p^2)`.

use crate::dynamics::{Hypothesis, SampleSpectrum};
use crate::error::{Error, Result};
use crate::kernels::{default_rank_tol, Mat, SpectralDecomposition, Vector};
use crate::problem::{BatchPartition, RegressionProblem};
use crate::reshuffle::ReshuffleOperators;

/// Risk components at one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskPoint {
    pub bias_frozen: f64,
    pub bias_decaying: f64,
    pub variance: f64,
    pub total: f64,
}

impl RiskPoint {
    fn new(bias_frozen: f64, bias_decaying: f64, variance: f64) -> Self {
        RiskPoint {
            bias_frozen,
            bias_decaying,
            variance,
            total: bias_frozen + bias_decaying + variance,
        }
    }

    /// Components with tiny negative rounding clamped to zero, for display and export.
    pub fn clamped(&self) -> RiskPoint {
        let c = |v: f64| if v < 0.0 && v > -1e-12 { 0.0 } else { v };
        RiskPoint::new(c(self.bias_frozen), c(self.bias_decaying), c(self.variance))
    }
}

/// Limiting risk as `k -> infinity`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskLimit {
    pub bias_frozen: f64,
    pub variance: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct RiskReport {
    /// Components for `k = 0..=epochs`.
    pub epochs: Vec<RiskPoint>,
    /// Present when the iteration contracts on `range(A)`.
    pub limit: Option<RiskLimit>,
    /// Two-batch interval `(R_-(k), R_+(k))`, when requested.
    pub bounds: Option<Vec<(f64, f64)>>,
}

impl RiskReport {
    pub fn totals(&self) -> Vec<f64> {
        self.epochs.iter().map(|r| r.total).collect()
    }
}

/// Everything needed to evaluate the risk, expressed in the eigenbasis of `A`.
struct EigenRisk {
    lambda: Vec<f64>,
    mask: Vec<bool>,
    step: f64,
    steps_per_epoch: usize,
    /// `V^T Sigma V`.
    sigma: Mat,
    /// `V^T a` restricted to `range(A)` and to its complement.
    active: Vector,
    frozen: Vector,
    /// `Lambda^+ V^T G V Lambda^+`.
    noise: Mat,
    noise_scale: f64,
}

impl EigenRisk {
    fn new(
        eig: &SpectralDecomposition,
        mask: Vec<bool>,
        step: f64,
        steps_per_epoch: usize,
        problem: &RegressionProblem,
        gram: &Mat,
    ) -> Self {
        let v = &eig.eigenvectors;
        let sigma = v.transpose() * problem.sigma().as_mat() * v;
        let coords = v.tr_mul(&problem.initial_error());
        let active = Vector::from_fn(coords.len(), |i, _| if mask[i] { coords[i] } else { 0.0 });
        let frozen = &coords - &active;
        let inv: Vec<f64> = eig
            .eigenvalues
            .iter()
            .zip(&mask)
            .map(|(&l, &m)| if m { 1.0 / l } else { 0.0 })
            .collect();
        let g = v.transpose() * gram * v;
        let noise = Mat::from_fn(g.nrows(), g.ncols(), |i, j| inv[i] * g[(i, j)] * inv[j]);
        EigenRisk {
            lambda: eig.eigenvalues.iter().copied().collect(),
            mask,
            step,
            steps_per_epoch,
            sigma,
            active,
            frozen,
            noise,
            noise_scale: problem.sigma2() / problem.n() as f64,
        }
    }

    fn rates(&self, k: usize) -> Vec<f64> {
        let power = (self.steps_per_epoch * k) as i32;
        self.lambda
            .iter()
            .zip(&self.mask)
            .map(|(&l, &m)| if m { (1.0 - self.step * l).powi(power) } else { 1.0 })
            .collect()
    }

    fn bias_frozen(&self) -> f64 {
        self.frozen.dot(&(&self.sigma * &self.frozen))
    }

    fn bias_decaying(&self, rates: &[f64]) -> f64 {
        let d = Vector::from_fn(self.active.len(), |i, _| rates[i] * self.active[i]);
        let sd = &self.sigma * &d;
        d.dot(&sd) + 2.0 * self.frozen.dot(&sd)
    }

    /// `scale * Tr(D Sigma D H)` with `D = diag(1 - rate)` on the active coordinates.
    fn trace_term(&self, rates: &[f64], h: &Mat) -> f64 {
        let d: Vec<f64> = rates
            .iter()
            .zip(&self.mask)
            .map(|(&r, &m)| if m { 1.0 - r } else { 0.0 })
            .collect();
        let p = d.len();
        let mut acc = 0.0;
        for i in 0..p {
            if d[i] == 0.0 {
                continue;
            }
            for j in 0..p {
                acc += d[i] * self.sigma[(i, j)] * d[j] * h[(j, i)];
            }
        }
        self.noise_scale * acc
    }

    fn point(&self, k: usize) -> RiskPoint {
        let rates = self.rates(k);
        RiskPoint::new(
            self.bias_frozen(),
            self.bias_decaying(&rates),
            self.trace_term(&rates, &self.noise),
        )
    }

    fn restricted_norm(&self) -> f64 {
        self.lambda
            .iter()
            .zip(&self.mask)
            .filter(|(_, m)| **m)
            .map(|(l, _)| (1.0 - self.step * l).abs())
            .fold(0.0, f64::max)
    }

    fn limit(&self) -> Option<RiskLimit> {
        if self.restricted_norm() >= 1.0 {
            return None;
        }
        let rates = vec![0.0; self.lambda.len()];
        let bias_frozen = self.bias_frozen();
        let variance = self.trace_term(&rates, &self.noise);
        Some(RiskLimit {
            bias_frozen,
            variance,
            total: bias_frozen + variance,
        })
    }

    fn report(&self, epochs: usize) -> RiskReport {
        RiskReport {
            epochs: (0..=epochs).map(|k| self.point(k)).collect(),
            limit: self.limit(),
            bounds: None,
        }
    }
}

fn reshuffle_engine(problem: &RegressionProblem, ops: &ReshuffleOperators, hypothesis: Hypothesis) -> Result<EigenRisk> {
    if ops.n() != problem.n() || ops.p() != problem.p() {
        return Err(Error::InvalidInput("operators do not match the problem".into()));
    }
    if hypothesis == Hypothesis::Enforce && !ops.hypothesis_holds() {
        return Err(Error::HypothesisViolated {
            residual: ops.hypothesis_residual(),
        });
    }
    Ok(EigenRisk::new(
        ops.z_eigen(),
        ops.nonzero_mask(),
        ops.epoch_step(),
        1,
        problem,
        ops.modified_gram().as_mat(),
    ))
}

/// Per-epoch risk of the mean reshuffling iterate.
pub fn risk_exact_reshuffle(problem: &RegressionProblem, ops: &ReshuffleOperators, epochs: usize) -> Result<RiskReport> {
    risk_exact_reshuffle_with(problem, ops, epochs, Hypothesis::Enforce)
}

pub fn risk_exact_reshuffle_with(
    problem: &RegressionProblem,
    ops: &ReshuffleOperators,
    epochs: usize,
    hypothesis: Hypothesis,
) -> Result<RiskReport> {
    Ok(reshuffle_engine(problem, ops, hypothesis)?.report(epochs))
}

fn full_batch_engine(problem: &RegressionProblem, alpha: f64, steps_per_epoch: usize) -> Result<EigenRisk> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::InvalidInput(format!("step size must be finite and >= 0, got {alpha}")));
    }
    let spectrum = SampleSpectrum::of(problem);
    let w = problem.sample_covariance();
    Ok(EigenRisk::new(
        &spectrum.eigen,
        spectrum.mask,
        alpha,
        steps_per_epoch,
        problem,
        w.as_mat(),
    ))
}

/// Per-epoch risk of full-batch gradient descent; the variance limit is `(sigma^2/n) Tr(Sigma W^+)`.
pub fn risk_exact_full_batch(problem: &RegressionProblem, alpha: f64, epochs: usize) -> Result<RiskReport> {
    Ok(full_batch_engine(problem, alpha, 1)?.report(epochs))
}

/// Per-epoch risk of the mean iterate when batches are sampled with replacement.
pub fn risk_exact_with_replacement(
    problem: &RegressionProblem,
    partition: &BatchPartition,
    alpha: f64,
    epochs: usize,
) -> Result<RiskReport> {
    Ok(full_batch_engine(problem, alpha, partition.b_count())?.report(epochs))
}

/// `bias_frozen + (sigma^2/n) Tr(Sigma Z^+ (X~^T X~ / n) Z^+)`.
pub fn risk_limit_reshuffle(problem: &RegressionProblem, ops: &ReshuffleOperators) -> Result<RiskLimit> {
    let engine = reshuffle_engine(problem, ops, Hypothesis::Enforce)?;
    engine.limit().ok_or(Error::NotConvergent {
        norm: engine.restricted_norm(),
    })
}

/// `(1/n) ||X^T X||`.
pub fn sample_covariance_norm(problem: &RegressionProblem) -> f64 {
    SampleSpectrum::of(problem).eigen.max_abs_eigenvalue()
}

/// Two-batch risk with the interval `R_-(k) <= R(k) <= R_+(k)`, where the noise Gram
/// matrix is replaced by `(1 -/+ alpha ||W||) Z`. Requires `B = 2` and `alpha ||W|| <= 1`.
pub fn risk_bounds_twobatch(problem: &RegressionProblem, ops: &ReshuffleOperators, epochs: usize) -> Result<RiskReport> {
    if ops.b_count() != 2 {
        return Err(Error::InvalidInput(format!("two-batch bounds need B = 2, got {}", ops.b_count())));
    }
    let w_norm = sample_covariance_norm(problem);
    if ops.alpha() * w_norm > 1.0 {
        return Err(Error::InvalidInput(format!(
            "two-batch bounds need alpha ||W|| <= 1, got {}",
            ops.alpha() * w_norm
        )));
    }
    risk_bounds_twobatch_unchecked(problem, ops, epochs)
}

/// [`risk_bounds_twobatch`] without the step-size precondition, for probing the bounds
/// outside the regime where they are guaranteed.
pub fn risk_bounds_twobatch_unchecked(
    problem: &RegressionProblem,
    ops: &ReshuffleOperators,
    epochs: usize,
) -> Result<RiskReport> {
    let engine = reshuffle_engine(problem, ops, Hypothesis::Enforce)?;
    let width = ops.alpha() * sample_covariance_norm(problem);
    let z_pinv = Mat::from_diagonal(&Vector::from_fn(engine.lambda.len(), |i, _| {
        if engine.mask[i] {
            1.0 / engine.lambda[i]
        } else {
            0.0
        }
    }));
    let mut report = engine.report(epochs);
    let bounds = (0..=epochs)
        .map(|k| {
            let rates = engine.rates(k);
            let bias = engine.bias_frozen() + engine.bias_decaying(&rates);
            let trace = engine.trace_term(&rates, &z_pinv);
            (bias + (1.0 - width) * trace, bias + (1.0 + width) * trace)
        })
        .collect();
    report.bounds = Some(bounds);
    Ok(report)
}

/// `(sigma^2/n) Tr([I - M^k] Sigma [I - M^k] Z^+)` for `k = 0..=epochs`: the trace whose
/// multiples form the two-batch interval.
pub fn twobatch_trace_term(problem: &RegressionProblem, ops: &ReshuffleOperators, epochs: usize) -> Result<Vec<f64>> {
    let engine = reshuffle_engine(problem, ops, Hypothesis::Acknowledge)?;
    let z_pinv = Mat::from_diagonal(&Vector::from_fn(engine.lambda.len(), |i, _| {
        if engine.mask[i] {
            1.0 / engine.lambda[i]
        } else {
            0.0
        }
    }));
    Ok((0..=epochs).map(|k| engine.trace_term(&engine.rates(k), &z_pinv)).collect())
}

/// Rank tolerance used for the full-batch operators of `problem`.
pub fn full_batch_rank_tol(problem: &RegressionProblem) -> f64 {
    default_rank_tol(problem.n(), problem.p())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{exact_mean_full_batch, exact_mean_reshuffle};
    use crate::kernels::SymmetricMatrix;
    use crate::problem::{generate_gaussian, generalization_risk, partition, BetaSpec};
    use crate::reshuffle::{assemble, Route};
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn correlated(p: usize, rho: f64) -> SymmetricMatrix {
        SymmetricMatrix::symmetrize(Mat::from_fn(p, p, |i, j| rho.powi((i as i32 - j as i32).abs())))
    }

    fn problem(n: usize, p: usize, sigma2: f64, seed: u64) -> RegressionProblem {
        let s = correlated(p, 0.4);
        let pr = generate_gaussian(n, p, Some(&s), sigma2, &BetaSpec::UnitSphere, seed).unwrap();
        let beta0 = Vector::from_fn(p, |i, _| 0.2 * (i as f64 + 0.5).cos());
        pr.with_beta0(beta0).unwrap()
    }

    #[test]
    fn zero_noise_at_truth_has_zero_risk() {
        let pr = problem(12, 4, 0.0, 1);
        let pr = pr.clone().with_beta0(pr.beta_star().clone()).unwrap();
        let part = partition(&pr, 2).unwrap();
        let ops = assemble(&part, 0.2, Route::ClosedForm).unwrap();
        let rep = risk_exact_reshuffle(&pr, &ops, 10).unwrap();
        assert!(rep.totals().iter().all(|&r| r.abs() < 1e-15));
        assert_eq!(risk_limit_reshuffle(&pr, &ops).unwrap().total, 0.0);
    }

    #[test]
    fn epoch_zero_is_initial_risk_and_components_sum() {
        for (n, p) in [(12, 4), (8, 12)] {
            let pr = problem(n, p, 0.3, 2);
            let part = partition(&pr, 2).unwrap();
            let ops = assemble(&part, 0.2, Route::ClosedForm).unwrap();
            let rep = risk_exact_reshuffle(&pr, &ops, 20).unwrap();
            let r0 = generalization_risk(pr.beta0(), &pr).unwrap();
            assert!((rep.epochs[0].total - r0).abs() < 1e-12);
            assert_eq!(rep.epochs[0].variance, 0.0);
            for pt in &rep.epochs {
                assert!((pt.total - (pt.bias_frozen + pt.bias_decaying + pt.variance)).abs() <= 1e-12);
                assert!(pt.bias_frozen >= -1e-12 && pt.variance >= -1e-12);
            }
        }
    }

    #[test]
    fn single_batch_matches_full_batch_exactly() {
        let pr = problem(10, 14, 0.3, 3);
        let part = partition(&pr, 1).unwrap();
        let ops = assemble(&part, 0.3, Route::ClosedForm).unwrap();
        let a = risk_exact_reshuffle(&pr, &ops, 25).unwrap();
        let b = risk_exact_full_batch(&pr, 0.3, 25).unwrap();
        assert_eq!(a.epochs, b.epochs);
        assert_eq!(a.limit, b.limit);
    }

    #[test]
    fn noise_resampling_agrees() {
        let pr = problem(40, 10, 0.5, 4);
        let part = partition(&pr, 2).unwrap();
        let ops = assemble(&part, 0.3, Route::ClosedForm).unwrap();
        let rep = risk_exact_reshuffle(&pr, &ops, 25).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let draws = 10_000;
        let ks = [1usize, 5, 25];
        let mut sums = [0.0; 3];
        let mut sqs = [0.0; 3];
        for _ in 0..draws {
            let eta = Vector::from_fn(40, |_, _| 0.5f64.sqrt() * { let z: f64 = StandardNormal.sample(&mut rng); z });
            let noisy = pr.with_noise(eta).unwrap();
            let t = exact_mean_reshuffle(&noisy, &ops, 25).unwrap();
            for (slot, &k) in ks.iter().enumerate() {
                let r = generalization_risk(&t.iterates[k], &pr).unwrap();
                sums[slot] += r;
                sqs[slot] += r * r;
            }
        }
        let d = draws as f64;
        for (slot, &k) in ks.iter().enumerate() {
            let mean = sums[slot] / d;
            let se = ((sqs[slot] / d - mean * mean) / (d - 1.0)).sqrt();
            assert!((mean - rep.epochs[k].total).abs() <= 4.0 * se, "k = {k}");
        }
    }

    #[test]
    fn full_batch_limit_and_constructive_check() {
        let pr = problem(30, 8, 0.4, 5);
        let rep = risk_exact_full_batch(&pr, 0.4, 3000).unwrap();
        let w_pinv = pr.sample_covariance().eigen().pseudoinverse(full_batch_rank_tol(&pr));
        let want = pr.sigma2() / 30.0 * (pr.sigma().as_mat() * w_pinv).trace();
        let limit = rep.limit.unwrap();
        assert!((limit.variance - want).abs() < 1e-12);
        assert!((rep.epochs[3000].variance - want).abs() < 1e-10);
        // Bias from the noiseless iterate plus the variance term.
        let quiet = pr.with_noise(Vector::zeros(30)).unwrap();
        let t = exact_mean_full_batch(&quiet, 0.4, 20).unwrap();
        for k in [0, 3, 20] {
            let bias = generalization_risk(&t.iterates[k], &quiet).unwrap();
            let pt = rep.epochs[k];
            assert!((bias + pt.variance - pt.total).abs() < 1e-12);
        }
    }

    #[test]
    fn learnable_initial_error_vanishes() {
        let pr = problem(6, 10, 0.0, 6);
        let lift = pr.x().transpose() * Vector::from_fn(6, |i, _| (i as f64 - 2.0) * 0.1);
        let pr = pr.clone().with_beta0(pr.beta_star() + lift).unwrap();
        let rep = risk_exact_full_batch(&pr, 0.5, 4000).unwrap();
        assert!(rep.epochs[4000].total < 1e-12);
        assert!(rep.epochs[0].total > 1e-3);
    }

    #[test]
    fn limit_matches_long_run() {
        let pr = problem(40, 6, 0.3, 7);
        let part = partition(&pr, 2).unwrap();
        let ops = assemble(&part, 0.2, Route::ClosedForm).unwrap();
        let limit = risk_limit_reshuffle(&pr, &ops).unwrap();
        let rep = risk_exact_reshuffle(&pr, &ops, 5000).unwrap();
        assert!((rep.epochs[5000].total - limit.total).abs() < 1e-8);
    }

    #[test]
    fn single_batch_limit_is_full_batch_limit() {
        let pr = problem(30, 8, 0.4, 8);
        let part = partition(&pr, 1).unwrap();
        let ops = assemble(&part, 0.3, Route::ClosedForm).unwrap();
        let a = risk_limit_reshuffle(&pr, &ops).unwrap();
        let b = risk_exact_full_batch(&pr, 0.3, 0).unwrap().limit.unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn divergent_step_has_no_limit() {
        let pr = problem(30, 8, 0.4, 9);
        let part = partition(&pr, 2).unwrap();
        let big = 5.0 / sample_covariance_norm(&pr);
        let ops = assemble(&part, big, Route::ClosedForm).unwrap();
        assert!(matches!(risk_limit_reshuffle(&pr, &ops), Err(Error::NotConvergent { .. })));
    }

    #[test]
    fn two_batch_limit_gap_is_second_order() {
        let pr = problem(60, 10, 0.5, 10);
        let part = partition(&pr, 2).unwrap();
        let full = risk_exact_full_batch(&pr, 0.0, 0).unwrap();
        let gap = |a: f64| {
            let ops = assemble(&part, a, Route::ClosedForm).unwrap();
            let fb = risk_exact_full_batch(&pr, 2.0 * a, 0).unwrap();
            risk_limit_reshuffle(&pr, &ops).unwrap().total - fb.limit.unwrap().total
        };
        assert!(full.limit.is_none());
        // First-order corrections to Z^+ and X~^T X~ / n cancel in the noise term.
        let (g1, g2) = (gap(0.01), gap(0.005));
        assert!(g1 > 1e-10, "gap {g1}");
        assert!((g1 / g2 - 4.0).abs() < 0.2, "ratio {}", g1 / g2);
    }

    #[test]
    fn two_batch_bounds_contain_and_have_exact_width() {
        for (n, p) in [(40, 8), (8, 14)] {
            let pr = problem(n, p, 0.5, 11);
            let part = partition(&pr, 2).unwrap();
            let alpha = 0.9 / sample_covariance_norm(&pr);
            let ops = assemble(&part, alpha, Route::ClosedForm).unwrap();
            let rep = risk_bounds_twobatch(&pr, &ops, 30).unwrap();
            let trace = twobatch_trace_term(&pr, &ops, 30).unwrap();
            let width = alpha * sample_covariance_norm(&pr);
            for (k, (pt, &(lo, hi))) in rep.epochs.iter().zip(rep.bounds.as_ref().unwrap()).enumerate() {
                assert!(pt.total - lo >= -1e-10 && hi - pt.total >= -1e-10, "k = {k}");
                assert!(((hi - lo) - 2.0 * width * trace[k]).abs() <= 1e-12 * hi.abs().max(1.0));
            }
        }
    }

    #[test]
    fn two_batch_bounds_preconditions() {
        let pr = problem(12, 4, 0.5, 12);
        let ops = assemble(&partition(&pr, 3).unwrap(), 0.1, Route::ClosedForm).unwrap();
        assert!(matches!(risk_bounds_twobatch(&pr, &ops, 3), Err(Error::InvalidInput(_))));
        let big = 1.5 / sample_covariance_norm(&pr);
        let ops = assemble(&partition(&pr, 2).unwrap(), big, Route::ClosedForm).unwrap();
        assert!(matches!(risk_bounds_twobatch(&pr, &ops, 3), Err(Error::InvalidInput(_))));
        assert!(risk_bounds_twobatch_unchecked(&pr, &ops, 3).is_ok());
    }

    #[test]
    fn two_batch_width_vanishes_at_zero_step() {
        let pr = problem(12, 4, 0.5, 13);
        let ops = assemble(&partition(&pr, 2).unwrap(), 0.0, Route::ClosedForm).unwrap();
        let rep = risk_bounds_twobatch(&pr, &ops, 5).unwrap();
        for (pt, &(lo, hi)) in rep.epochs.iter().zip(rep.bounds.as_ref().unwrap()) {
            assert_eq!(lo, hi);
            assert_eq!(pt.total, hi);
        }
    }
}
