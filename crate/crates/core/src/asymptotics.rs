//! Fixed-`p`, large-`n` behaviour of reshuffling at the linearly scaled step `alpha / B`.
//!
//! When every batch covariance is close to `Sigma`, each modifier `Pi_b` approaches
//! `I - p_{B,alpha}(Sigma)` and `Z(alpha / B)` approaches `Sigma (I - p_{B,alpha}(Sigma))`,
//! with
//!
//! ```text
//! p_{B,alpha}(lambda) = sum_{i=1}^{B-1} (-1)^{i+1} binom(B-1, i) / (i+1) * (alpha/B)^i * lambda^i
//!                     = 1 - (1 - (1 - alpha lambda / B)^B) / (alpha lambda).
//! ```

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::{spectral_norm, Mat, SymmetricMatrix, Vector};
use crate::problem::{generate_gaussian, partition, BetaSpec, RegressionProblem};
use crate::reshuffle::{assemble, Route};

/// `p(lambda) = sum_i c_i lambda^i` (no constant term).
#[derive(Debug, Clone, PartialEq)]
pub struct ShrinkagePolynomial {
    pub b_count: usize,
    pub alpha: f64,
    /// `c_1, ..., c_{B-1}`.
    pub coefficients: Vec<f64>,
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, j| acc * j as f64)
}

impl ShrinkagePolynomial {
    /// `c_i = (-1)^{i+1} binom(B-1, i) / (i+1) * (alpha/B)^i`.
    pub fn new(b_count: usize, alpha: f64) -> Result<Self> {
        Self::check(b_count, alpha)?;
        let x = alpha / b_count as f64;
        let coefficients = (1..b_count)
            .map(|i| sign(i) * binomial(b_count - 1, i) / (i + 1) as f64 * x.powi(i as i32))
            .collect();
        Ok(ShrinkagePolynomial {
            b_count,
            alpha,
            coefficients,
        })
    }

    /// The variant `c_i = (-1)^{i+1} (B-1)! (B-1-i)! / (i+1)! * (alpha/B)^i`. It agrees with
    /// [`ShrinkagePolynomial::new`] for `B <= 3` and differs at `i = 1` from `B = 4` on.
    pub fn factorial_variant(b_count: usize, alpha: f64) -> Result<Self> {
        Self::check(b_count, alpha)?;
        let x = alpha / b_count as f64;
        let coefficients = (1..b_count)
            .map(|i| {
                sign(i) * factorial(b_count - 1) * factorial(b_count - 1 - i) / factorial(i + 1)
                    * x.powi(i as i32)
            })
            .collect();
        Ok(ShrinkagePolynomial {
            b_count,
            alpha,
            coefficients,
        })
    }

    /// An arbitrary polynomial `sum_i c_i lambda^i`, for driving [`decoupled_dynamics`].
    pub fn from_coefficients(alpha: f64, coefficients: Vec<f64>) -> Self {
        ShrinkagePolynomial {
            b_count: coefficients.len() + 1,
            alpha,
            coefficients,
        }
    }

    fn check(b_count: usize, alpha: f64) -> Result<()> {
        if b_count == 0 {
            return Err(Error::InvalidInput("B must be at least 1".into()));
        }
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::InvalidInput(format!("step size must be finite and >= 0, got {alpha}")));
        }
        Ok(())
    }

    pub fn eval(&self, lambda: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, c| (acc + c) * lambda)
    }

    /// `lambda (1 - p(lambda))`.
    pub fn shrink(&self, lambda: f64) -> f64 {
        lambda * (1.0 - self.eval(lambda))
    }

    /// `p(A)` for a square matrix.
    pub fn eval_matrix(&self, a: &Mat) -> Mat {
        let mut coeffs = vec![0.0];
        coeffs.extend_from_slice(&self.coefficients);
        crate::kernels::matrix_polynomial(&coeffs, a)
    }

    /// `Sigma (I - p(Sigma))`, the limit of `Z(alpha / B)`.
    pub fn limit_matrix(&self, sigma: &SymmetricMatrix) -> Mat {
        let s = sigma.as_mat();
        let p = s.nrows();
        s * (Mat::identity(p, p) - self.eval_matrix(s))
    }
}

fn sign(i: usize) -> f64 {
    if i % 2 == 1 {
        1.0
    } else {
        -1.0
    }
}

/// One `(n, seed)` cell of a convergence sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitSample {
    pub n: usize,
    pub seed: u64,
    /// `||Z(alpha/B) - Sigma (I - p(Sigma))||`.
    pub error_norm: f64,
    /// The same residual against the factorial-variant coefficients.
    pub variant_error_norm: f64,
}

#[derive(Debug, Clone)]
pub struct LimitReport {
    pub b_count: usize,
    pub alpha: f64,
    pub samples: Vec<LimitSample>,
    /// `(n, mean error)` per schedule entry.
    pub mean_errors: Vec<(usize, f64)>,
    /// `(n, mean variant error)` per schedule entry.
    pub mean_variant_errors: Vec<(usize, f64)>,
    /// Least-squares slope of `log(mean error)` against `log(n)`.
    pub slope: f64,
}

impl LimitReport {
    /// Mean variant residual over mean residual at the largest `n`.
    pub fn discrimination_ratio(&self) -> f64 {
        let (_, e) = *self.mean_errors.last().expect("non-empty schedule");
        let (_, v) = *self.mean_variant_errors.last().expect("non-empty schedule");
        v / e
    }
}

fn loglog_slope(points: &[(usize, f64)]) -> f64 {
    let xs: Vec<f64> = points.iter().map(|(n, _)| (*n as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, e)| e.ln()).collect();
    let m = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / m, ys.iter().sum::<f64>() / m);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Draws Gaussian designs with covariance `sigma` for every `n` in `n_schedule` and every
/// seed, assembles `Z(alpha / B)` exactly, and measures the distance to the limit. Entries
/// of the schedule not divisible by `B` are rounded down to a multiple of `B`.
pub fn verify_limit(
    b_count: usize,
    alpha: f64,
    sigma: &SymmetricMatrix,
    n_schedule: &[usize],
    seeds: &[u64],
) -> Result<LimitReport> {
    let poly = ShrinkagePolynomial::new(b_count, alpha)?;
    let variant = ShrinkagePolynomial::factorial_variant(b_count, alpha)?;
    if n_schedule.len() < 2 || seeds.is_empty() {
        return Err(Error::InvalidInput("need at least two sample sizes and one seed".into()));
    }
    let p = sigma.dim();
    let target = poly.limit_matrix(sigma);
    let variant_target = variant.limit_matrix(sigma);
    let ns: Vec<usize> = n_schedule.iter().map(|&n| n - n % b_count).collect();
    if ns.iter().any(|&n| n < b_count) || ns.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput("n_schedule must be increasing and at least B".into()));
    }
    let cells: Vec<(usize, u64)> = ns.iter().flat_map(|&n| seeds.iter().map(move |&s| (n, s))).collect();
    let samples: Vec<LimitSample> = cells
        .par_iter()
        .map(|&(n, seed)| {
            let pr = generate_gaussian(n, p, Some(sigma), 0.0, &BetaSpec::UnitSphere, seed)?;
            let ops = assemble(&partition(&pr, b_count)?, alpha / b_count as f64, Route::ClosedForm)?;
            let z = ops.z().as_mat();
            Ok(LimitSample {
                n,
                seed,
                error_norm: spectral_norm(&(z - &target)),
                variant_error_norm: spectral_norm(&(z - &variant_target)),
            })
        })
        .collect::<Result<_>>()?;
    let mean = |n: usize, f: fn(&LimitSample) -> f64| {
        let vals: Vec<f64> = samples.iter().filter(|s| s.n == n).map(f).collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    };
    let mean_errors: Vec<(usize, f64)> = ns.iter().map(|&n| (n, mean(n, |s| s.error_norm))).collect();
    let mean_variant_errors = ns.iter().map(|&n| (n, mean(n, |s| s.variant_error_norm))).collect();
    Ok(LimitReport {
        b_count,
        alpha,
        samples,
        slope: loglog_slope(&mean_errors),
        mean_errors,
        mean_variant_errors,
    })
}

/// Per-coordinate description of reshuffling when every modifier equals `I - p(W)`.
#[derive(Debug, Clone)]
pub struct AsymptoticDynamics {
    /// Diagonal of `V^T Sigma V`.
    pub lambda: Vec<f64>,
    /// Eigenvalues of `W`, descending.
    pub lambda_hat: Vec<f64>,
    /// `1 - alpha lambda_hat (1 - p(lambda_hat))`.
    pub rates: Vec<f64>,
    /// `V^T (beta_0 - beta*)`.
    pub initial: Vector,
    /// `[U^T eta]_i / sqrt(n lambda_hat_i)`, the limit of the noise coordinate.
    pub noise: Vector,
    /// Eigenvectors `V` of `W`.
    pub basis: Mat,
    pub noise_scale: f64,
}

impl AsymptoticDynamics {
    /// `[V^T (beta-bar_k - beta*)]_i = r_i^k a_i + (1 - r_i^k) h_i`.
    pub fn coordinates(&self, k: usize) -> Vector {
        Vector::from_fn(self.rates.len(), |i, _| {
            let rk = self.rates[i].powi(k as i32);
            rk * self.initial[i] + (1.0 - rk) * self.noise[i]
        })
    }

    /// `sum_i lambda_i r_i^{2k} a_i^2 + (sigma^2/n) sum_i (lambda_i / lambda_hat_i) (1 - r_i^k)^2`.
    pub fn risk(&self, k: usize) -> f64 {
        (0..self.rates.len())
            .map(|i| {
                let rk = self.rates[i].powi(k as i32);
                self.lambda[i] * rk * rk * self.initial[i].powi(2)
                    + self.noise_scale * self.lambda[i] / self.lambda_hat[i] * (1.0 - rk).powi(2)
            })
            .sum()
    }
}

#[derive(Debug, Clone)]
pub struct DecoupledSeries {
    pub dynamics: AsymptoticDynamics,
    /// Coordinates for `k = 0..=epochs`.
    pub coordinates: Vec<Vector>,
    pub risk: Vec<f64>,
}

/// Relative size of the off-diagonal part of `V^T Sigma V` accepted as diagonal.
pub const DIAGONAL_TOL: f64 = 1e-10;

/// Decoupled error coordinates and risk when every `Pi_b = I - p(W)`, with `p` given by
/// `poly` and `alpha` the epoch step (`B` times the per-batch step). Requires `X` of full
/// column rank, `I - p(W)` invertible and `V^T Sigma V` diagonal.
pub fn decoupled_dynamics(
    problem: &RegressionProblem,
    alpha: f64,
    poly: &ShrinkagePolynomial,
    epochs: usize,
) -> Result<DecoupledSeries> {
    let n = problem.n() as f64;
    let eig = problem.sample_covariance().eigen();
    let top = eig.max_abs_eigenvalue();
    let tol = crate::kernels::default_rank_tol(problem.n(), problem.p());
    if eig.eigenvalues.iter().any(|&l| l <= tol * top) {
        return Err(Error::AssumptionViolated("X does not have full column rank".into()));
    }
    if eig.eigenvalues.iter().any(|&l| (1.0 - poly.eval(l)).abs() <= tol) {
        return Err(Error::AssumptionViolated("I - p(W) is singular".into()));
    }
    let v = &eig.eigenvectors;
    let rotated = v.transpose() * problem.sigma().as_mat() * v;
    let scale = rotated.amax().max(f64::MIN_POSITIVE);
    let off = Mat::from_fn(rotated.nrows(), rotated.ncols(), |i, j| if i == j { 0.0 } else { rotated[(i, j)] });
    if off.amax() > DIAGONAL_TOL * scale {
        return Err(Error::AssumptionViolated(format!(
            "V^T Sigma V is not diagonal (off-diagonal {:.3e})",
            off.amax()
        )));
    }
    let lambda_hat: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let rates = lambda_hat.iter().map(|&l| 1.0 - alpha * poly.shrink(l)).collect();
    let xt_eta = v.tr_mul(&problem.x().tr_mul(problem.eta()));
    let noise = Vector::from_fn(lambda_hat.len(), |i, _| xt_eta[i] / (n * lambda_hat[i]));
    let dynamics = AsymptoticDynamics {
        lambda: (0..rotated.nrows()).map(|i| rotated[(i, i)]).collect(),
        lambda_hat,
        rates,
        initial: v.tr_mul(&problem.initial_error()),
        noise,
        basis: v.clone(),
        noise_scale: problem.sigma2() / n,
    };
    Ok(DecoupledSeries {
        coordinates: (0..=epochs).map(|k| dynamics.coordinates(k)).collect(),
        risk: (0..=epochs).map(|k| dynamics.risk(k)).collect(),
        dynamics,
    })
}

/// Eigenvalues `lambda_i` of `Sigma` (descending) beside `lambda_i (1 - p(lambda_i))`.
/// Requires `alpha ||Sigma|| <= 1`.
pub fn shrinkage_comparison(b_count: usize, alpha: f64, sigma: &SymmetricMatrix) -> Result<Vec<(f64, f64)>> {
    let poly = ShrinkagePolynomial::new(b_count, alpha)?;
    let eigenvalues = sigma.eigenvalues();
    let top = eigenvalues.iter().fold(0.0_f64, |m, l| m.max(l.abs()));
    if alpha * top > 1.0 {
        return Err(Error::InvalidInput(format!("need alpha ||Sigma|| <= 1, got {}", alpha * top)));
    }
    Ok(eigenvalues.into_iter().map(|l| (l, poly.shrink(l))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::exact_mean_reshuffle;
    use crate::reshuffle::{pi_closed_form, ReshuffleOperators};
    use crate::risk::risk_exact_reshuffle;

    #[test]
    fn low_order_polynomials() {
        let a = 0.6;
        let p2 = ShrinkagePolynomial::new(2, a).unwrap();
        assert_eq!(p2.coefficients.len(), 1);
        assert!((p2.coefficients[0] - a / 4.0).abs() < 1e-15);
        let p3 = ShrinkagePolynomial::new(3, a).unwrap();
        assert!((p3.coefficients[0] - a / 3.0).abs() < 1e-15);
        assert!((p3.coefficients[1] + a * a / 27.0).abs() < 1e-15);
        let s = SymmetricMatrix::symmetrize(Mat::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]));
        let m = s.as_mat();
        let want = m - m * m * (a / 3.0) + m * m * m * (a * a / 27.0);
        assert!((p3.limit_matrix(&s) - want).amax() < 1e-14);
        let p1 = ShrinkagePolynomial::new(1, a).unwrap();
        assert!(p1.coefficients.is_empty());
        assert_eq!(p1.limit_matrix(&s), *m);
    }

    #[test]
    fn variant_agrees_only_for_small_b() {
        for b in 1..=3 {
            let (a, v) = (ShrinkagePolynomial::new(b, 0.5).unwrap(), ShrinkagePolynomial::factorial_variant(b, 0.5).unwrap());
            for (x, y) in a.coefficients.iter().zip(&v.coefficients) {
                assert!((x - y).abs() < 1e-15);
            }
        }
        let a = ShrinkagePolynomial::new(4, 1.0).unwrap();
        let v = ShrinkagePolynomial::factorial_variant(4, 1.0).unwrap();
        assert!((a.coefficients[0] - 1.5 / 4.0).abs() < 1e-15);
        assert!((v.coefficients[0] - 6.0 / 4.0).abs() < 1e-15);
        assert!((a.coefficients[1] - v.coefficients[1]).abs() < 1e-15);
        assert!((a.coefficients[2] - v.coefficients[2]).abs() < 1e-15);
    }

    #[test]
    fn closed_form_of_the_polynomial() {
        for b in 1..=7 {
            for &(a, l) in &[(0.3, 1.2), (0.9, 0.4), (2.0, 0.5)] {
                let p = ShrinkagePolynomial::new(b, a).unwrap();
                let x: f64 = a * l / b as f64;
                let want = (1.0 - (1.0 - x).powi(b as i32)) / (a * l);
                assert!(((1.0 - p.eval(l)) - want).abs() < 1e-13, "B = {b}");
            }
        }
    }

    #[test]
    fn scalar_covariances_reduce_to_the_polynomial() {
        // Per-batch step alpha, W_b = lambda I: Pi_b = (1 - p_{B, alpha B}(lambda)) I.
        for b in 1..=6 {
            let (alpha, lambda) = (0.15, 1.7);
            let ws: Vec<Mat> = (0..b).map(|_| Mat::identity(2, 2) * lambda).collect();
            let pi = pi_closed_form(&ws, alpha, 0).unwrap();
            let poly = ShrinkagePolynomial::new(b, alpha * b as f64).unwrap();
            assert!((pi - Mat::identity(2, 2) * (1.0 - poly.eval(lambda))).amax() < 1e-14);
        }
    }

    #[test]
    fn zero_step_limit_is_the_law_of_large_numbers() {
        let sigma = SymmetricMatrix::identity(3);
        let rep = verify_limit(2, 0.0, &sigma, &[100, 1000], &[1, 2]).unwrap();
        for s in &rep.samples {
            let pr = generate_gaussian(s.n, 3, Some(&sigma), 0.0, &BetaSpec::UnitSphere, s.seed).unwrap();
            let lln = spectral_norm(&(pr.sample_covariance().as_mat() - sigma.as_mat()));
            assert!((s.error_norm - lln).abs() < 1e-12);
        }
    }

    #[test]
    fn two_batch_limit_converges() {
        let sigma = SymmetricMatrix::identity(3);
        let rep = verify_limit(2, 0.5, &sigma, &[1_000, 10_000, 100_000], &(0..20).collect::<Vec<_>>()).unwrap();
        assert!(rep.mean_errors[2].1 < 0.02);
        assert!(rep.slope <= -0.35, "slope {}", rep.slope);
        assert_eq!(rep.samples.len(), 60);
    }

    fn isotropic_problem(n: usize, p: usize, seed: u64) -> RegressionProblem {
        let pr = generate_gaussian(n, p, None, 0.4, &BetaSpec::UnitSphere, seed).unwrap();
        pr.with_beta0(Vector::from_fn(p, |i, _| 0.1 * i as f64)).unwrap()
    }

    #[test]
    fn substitution_oracle_matches_exact_mean() {
        let pr = isotropic_problem(24, 4, 3);
        for b in [2usize, 3, 4] {
            let alpha = 0.5;
            let poly = ShrinkagePolynomial::new(b, alpha).unwrap();
            let w = pr.sample_covariance();
            let pi = Mat::identity(4, 4) - poly.eval_matrix(w.as_mat());
            let part = partition(&pr, b).unwrap();
            let ops = ReshuffleOperators::from_modifiers(&part, alpha / b as f64, vec![pi; b]).unwrap();
            let exact = exact_mean_reshuffle(&pr, &ops, 12).unwrap();
            let risk = risk_exact_reshuffle(&pr, &ops, 12).unwrap();
            let series = decoupled_dynamics(&pr, alpha, &poly, 12).unwrap();
            let v = &series.dynamics.basis;
            for k in 0..=12 {
                let coords = v.tr_mul(&(&exact.iterates[k] - pr.beta_star()));
                assert!((coords - &series.coordinates[k]).amax() < 1e-10, "B = {b}, k = {k}");
                assert!((risk.epochs[k].total - series.risk[k]).abs() < 1e-10, "B = {b}, k = {k}");
            }
        }
    }

    #[test]
    fn degenerate_polynomial_gives_full_batch_rates() {
        let pr = isotropic_problem(20, 3, 4);
        let series = decoupled_dynamics(&pr, 0.3, &ShrinkagePolynomial::new(1, 0.3).unwrap(), 5).unwrap();
        for (r, l) in series.dynamics.rates.iter().zip(&series.dynamics.lambda_hat) {
            assert_eq!(*r, 1.0 - 0.3 * l);
        }
        assert_eq!(series.coordinates[0], series.dynamics.initial);
        let fb = crate::dynamics::exact_mean_full_batch(&pr, 0.3, 5).unwrap();
        let v = &series.dynamics.basis;
        for k in 0..=5 {
            assert!((v.tr_mul(&(&fb.iterates[k] - pr.beta_star())) - &series.coordinates[k]).amax() < 1e-12);
        }
    }

    #[test]
    fn assumption_violations() {
        let s = SymmetricMatrix::symmetrize(Mat::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 1.0]));
        let pr = generate_gaussian(30, 2, Some(&s), 0.1, &BetaSpec::UnitSphere, 1).unwrap();
        let poly = ShrinkagePolynomial::new(2, 0.3).unwrap();
        assert!(matches!(decoupled_dynamics(&pr, 0.3, &poly, 3), Err(Error::AssumptionViolated(_))));
        let wide = isotropic_problem(4, 6, 2);
        assert!(matches!(decoupled_dynamics(&wide, 0.3, &poly, 3), Err(Error::AssumptionViolated(_))));
    }

    #[test]
    fn shrinkage_table() {
        let s = SymmetricMatrix::symmetrize(Mat::from_diagonal(&Vector::from_vec(vec![1.0, 0.5, 0.0])));
        let t = shrinkage_comparison(2, 0.4, &s).unwrap();
        assert!((t[0].1 - 0.9).abs() < 1e-15);
        assert_eq!(t[2], (0.0, 0.0));
        let none = shrinkage_comparison(3, 0.0, &s).unwrap();
        assert!(none.iter().all(|(l, m)| l == m));
        assert!(shrinkage_comparison(2, 1.5, &s).is_err());
        // Stronger shrinkage with more batches at fixed alpha lambda.
        for al in [0.1, 0.5, 1.0] {
            let shrunk: Vec<f64> = (2..=5)
                .map(|b| ShrinkagePolynomial::new(b, al).unwrap().shrink(1.0))
                .collect();
            assert!(shrunk.windows(2).all(|w| w[1] < w[0]), "alpha lambda = {al}");
        }
    }
}
