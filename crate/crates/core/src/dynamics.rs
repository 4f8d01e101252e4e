//! Trajectories: simulated mini-batch gradient descent and the exact mean-iterate
//! recursions for reshuffling, full batch and sampling with replacement.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::kernels::{default_rank_tol, range_projector, Mat, SpectralDecomposition, Vector};
use crate::problem::{BatchPartition, RegressionProblem};
use crate::reshuffle::{assemble, ReshuffleOperators, Route};
use crate::rng::{stream_rng, Stream};

/// Iterates whose norm exceeds this are declared divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;
/// Relative disagreement tolerated between the closed form and the unrolled recursion.
pub const FORM_AGREEMENT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    FullBatch,
    ReshuffleEmpirical,
    WithReplacementEmpirical,
    ReshuffleExactMean,
    FullBatchExactMean,
    WithReplacementExactMean,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::FullBatch => "full_batch",
            Method::ReshuffleEmpirical => "reshuffle_empirical",
            Method::WithReplacementEmpirical => "with_replacement_empirical",
            Method::ReshuffleExactMean => "reshuffle_exact_mean",
            Method::FullBatchExactMean => "full_batch_exact_mean",
            Method::WithReplacementExactMean => "with_replacement_exact_mean",
        }
    }
}

/// End-of-epoch iterates `beta_0, ..., beta_K` and their distances to `beta*`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub method: Method,
    pub alpha: f64,
    pub b_count: usize,
    pub seed: u64,
    pub iterates: Vec<Vector>,
    pub errors: Vec<f64>,
    /// First epoch at which the iterate left the finite range; later entries are NaN.
    pub diverged_at: Option<usize>,
    /// Per-update iterates, filled only by the traced simulators.
    pub steps: Vec<Vector>,
    /// Largest relative gap between the closed form and the recursion (exact-mean methods).
    pub form_discrepancy: Option<f64>,
}

impl Trajectory {
    fn new(method: Method, alpha: f64, b_count: usize, seed: u64, beta0: &Vector, beta_star: &Vector) -> Self {
        Trajectory {
            method,
            alpha,
            b_count,
            seed,
            iterates: vec![beta0.clone()],
            errors: vec![(beta0 - beta_star).norm()],
            diverged_at: None,
            steps: Vec::new(),
            form_discrepancy: None,
        }
    }

    pub fn epochs(&self) -> usize {
        self.iterates.len() - 1
    }

    fn push(&mut self, beta: Vector, beta_star: &Vector) {
        self.errors.push((&beta - beta_star).norm());
        self.iterates.push(beta);
    }

    /// Marks divergence at the next epoch and pads to `epochs + 1` entries.
    fn pad_diverged(&mut self, epochs: usize) {
        let p = self.iterates[0].len();
        self.diverged_at = Some(self.iterates.len());
        while self.iterates.len() < epochs + 1 {
            self.iterates.push(Vector::from_element(p, f64::NAN));
            self.errors.push(f64::INFINITY);
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha.is_finite() && alpha >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("step size must be finite and >= 0, got {alpha}")))
    }
}

fn diverged(beta: &Vector) -> bool {
    let norm = beta.norm();
    !norm.is_finite() || norm > DIVERGENCE_THRESHOLD
}

/// `beta - scale * X_b^T (X_b beta - y_b)`.
fn gradient_step(beta: &mut Vector, x: &Mat, y: &Vector, scale: f64) {
    let residual = x * &*beta - y;
    beta.axpy(-scale, &x.tr_mul(&residual), 1.0);
}

#[derive(Clone, Copy)]
enum Sampling {
    Reshuffle,
    WithReplacement,
}

fn simulate(
    problem: &RegressionProblem,
    partition: &BatchPartition,
    alpha: f64,
    epochs: usize,
    seed: u64,
    sampling: Sampling,
    trace: bool,
) -> Result<Trajectory> {
    check_alpha(alpha)?;
    if partition.n() != problem.n() || partition.p() != problem.p() {
        return Err(Error::InvalidInput("partition does not match the problem".into()));
    }
    let bc = partition.b_count();
    let method = match sampling {
        Sampling::Reshuffle => Method::ReshuffleEmpirical,
        Sampling::WithReplacement => Method::WithReplacementEmpirical,
    };
    let mut traj = Trajectory::new(method, alpha, bc, seed, problem.beta0(), problem.beta_star());
    let mut rng = stream_rng(seed, Stream::Permutations);
    let scale = bc as f64 * alpha / problem.n() as f64;
    let mut beta = problem.beta0().clone();
    let mut order: Vec<usize> = (0..bc).collect();
    for _ in 0..epochs {
        match sampling {
            Sampling::Reshuffle => order.shuffle(&mut rng),
            Sampling::WithReplacement => order.iter_mut().for_each(|o| *o = rng.random_range(0..bc)),
        }
        for &b in &order {
            let batch = partition.batch(b);
            gradient_step(&mut beta, &batch.x, &batch.y, scale);
            if trace {
                traj.steps.push(beta.clone());
            }
        }
        if diverged(&beta) {
            traj.pad_diverged(epochs);
            return Ok(traj);
        }
        traj.push(beta.clone(), problem.beta_star());
    }
    Ok(traj)
}

/// One run of reshuffled mini-batch gradient descent: each epoch visits the batches in
/// a fresh uniformly random order with per-update step `B alpha / n`.
pub fn simulate_reshuffle(
    problem: &RegressionProblem,
    partition: &BatchPartition,
    alpha: f64,
    epochs: usize,
    seed: u64,
) -> Result<Trajectory> {
    simulate(problem, partition, alpha, epochs, seed, Sampling::Reshuffle, false)
}

/// As [`simulate_reshuffle`], also recording every intermediate update in `steps`.
pub fn simulate_reshuffle_traced(
    problem: &RegressionProblem,
    partition: &BatchPartition,
    alpha: f64,
    epochs: usize,
    seed: u64,
) -> Result<Trajectory> {
    simulate(problem, partition, alpha, epochs, seed, Sampling::Reshuffle, true)
}

/// Mini-batch gradient descent drawing `B` batches per epoch independently with replacement.
pub fn simulate_with_replacement(
    problem: &RegressionProblem,
    partition: &BatchPartition,
    alpha: f64,
    epochs: usize,
    seed: u64,
) -> Result<Trajectory> {
    simulate(problem, partition, alpha, epochs, seed, Sampling::WithReplacement, false)
}

/// Full-batch gradient descent `beta <- beta - (alpha / n) X^T (X beta - y)`.
pub fn simulate_full_batch(problem: &RegressionProblem, alpha: f64, epochs: usize) -> Result<Trajectory> {
    check_alpha(alpha)?;
    let mut traj = Trajectory::new(Method::FullBatch, alpha, 1, problem.seed(), problem.beta0(), problem.beta_star());
    let scale = alpha / problem.n() as f64;
    let mut beta = problem.beta0().clone();
    for _ in 0..epochs {
        gradient_step(&mut beta, problem.x(), problem.y(), scale);
        if diverged(&beta) {
            traj.pad_diverged(epochs);
            return Ok(traj);
        }
        traj.push(beta.clone(), problem.beta_star());
    }
    Ok(traj)
}

/// The affine error recursion `e_k = (I - s A) e_{k-1} + s f` for symmetric `A` given by
/// its eigendecomposition, evaluated at epoch `k` as
/// `(I - sA)^{m k} e_0 + [I - (I - sA)^{m k}] A^+ f`, where `m` is the number of
/// steps per epoch. Components of `f` outside the range of `A` are dropped.
struct AffineMean<'a> {
    eig: &'a SpectralDecomposition,
    mask: Vec<bool>,
    step: f64,
    steps_per_epoch: usize,
    e0: Vector,
    forcing: Vector,
}

impl AffineMean<'_> {
    fn error_at(&self, k: usize) -> Vector {
        let v = &self.eig.eigenvectors;
        let c0 = v.tr_mul(&self.e0);
        let cf = v.tr_mul(&self.forcing);
        let power = (self.steps_per_epoch * k) as i32;
        let coords = Vector::from_fn(self.eig.dim(), |i, _| {
            let rate = (1.0 - self.step * self.eig.eigenvalues[i]).powi(power);
            if self.mask[i] {
                rate * c0[i] + (1.0 - rate) * cf[i] / self.eig.eigenvalues[i]
            } else {
                c0[i]
            }
        });
        v * coords
    }

    /// Unrolls the one-step recursion in the original basis.
    fn recursion(&self, epochs: usize) -> Vec<Vector> {
        let p = self.e0.len();
        let a = self.eig.reconstruct();
        let m = Mat::identity(p, p) - a * self.step;
        let drive = &self.forcing * self.step;
        let mut e = self.e0.clone();
        let mut out = vec![e.clone()];
        for _ in 0..epochs {
            for _ in 0..self.steps_per_epoch {
                e = &m * e + &drive;
            }
            out.push(e.clone());
        }
        out
    }

    fn run(&self, epochs: usize, beta_star: &Vector, check: bool) -> Result<(Vec<Vector>, Option<f64>)> {
        let closed: Vec<Vector> = (0..=epochs).map(|k| self.error_at(k)).collect();
        let discrepancy = if check {
            let unrolled = self.recursion(epochs);
            let mut worst = 0.0_f64;
            for (c, u) in closed.iter().zip(&unrolled) {
                let scale = c.norm().max(u.norm()).max(self.e0.norm()).max(1.0);
                let gap = (c - u).norm() / scale;
                if gap.is_finite() {
                    worst = worst.max(gap);
                }
            }
            if worst > FORM_AGREEMENT_TOL {
                return Err(Error::NumericalInconsistency(format!(
                    "closed form and recursion disagree (relative gap {worst:.3e})"
                )));
            }
            Some(worst)
        } else {
            None
        };
        Ok((closed.into_iter().map(|e| e + beta_star).collect(), discrepancy))
    }
}

fn mean_trajectory(
    method: Method,
    problem: &RegressionProblem,
    alpha: f64,
    b_count: usize,
    engine: AffineMean<'_>,
    epochs: usize,
    check: bool,
) -> Result<Trajectory> {
    let (iterates, discrepancy) = engine.run(epochs, problem.beta_star(), check)?;
    let mut traj = Trajectory::new(method, alpha, b_count, problem.seed(), problem.beta0(), problem.beta_star());
    for beta in iterates.into_iter().skip(1) {
        traj.push(beta, problem.beta_star());
    }
    traj.form_discrepancy = discrepancy;
    Ok(traj)
}

/// Whether the range hypothesis must hold before the exact mean is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hypothesis {
    Enforce,
    /// Proceed even when the hypothesis fails; the component of `X~^T eta` outside
    /// `range(Z)` is then dropped from the forcing.
    Acknowledge,
}

/// Mean reshuffling iterate `beta-bar_k` for `k = 0..=epochs`.
///
/// The error obeys `e_k = (I - B alpha Z) e_{k-1} + (B alpha / n) X~^T eta`, whose closed
/// form is `(I - B alpha Z)^k e_0 + (1/n)[I - (I - B alpha Z)^k] Z^+ X~^T eta`. Both are
/// computed and must agree.
pub fn exact_mean_reshuffle(problem: &RegressionProblem, ops: &ReshuffleOperators, epochs: usize) -> Result<Trajectory> {
    exact_mean_reshuffle_with(problem, ops, epochs, Hypothesis::Enforce)
}

pub fn exact_mean_reshuffle_with(
    problem: &RegressionProblem,
    ops: &ReshuffleOperators,
    epochs: usize,
    hypothesis: Hypothesis,
) -> Result<Trajectory> {
    if ops.n() != problem.n() || ops.p() != problem.p() {
        return Err(Error::InvalidInput("operators do not match the problem".into()));
    }
    if hypothesis == Hypothesis::Enforce && !ops.hypothesis_holds() {
        return Err(Error::HypothesisViolated {
            residual: ops.hypothesis_residual(),
        });
    }
    let engine = AffineMean {
        eig: ops.z_eigen(),
        mask: ops.nonzero_mask(),
        step: ops.epoch_step(),
        steps_per_epoch: 1,
        e0: problem.initial_error(),
        forcing: ops.xtilde_t_mul(problem.eta()) / problem.n() as f64,
    };
    let check = ops.hypothesis_holds();
    mean_trajectory(Method::ReshuffleExactMean, problem, ops.alpha(), ops.b_count(), engine, epochs, check)
}

/// Eigendecomposition of `W = X^T X / n` together with the nonzero mask.
pub struct SampleSpectrum {
    pub eigen: SpectralDecomposition,
    pub mask: Vec<bool>,
}

impl SampleSpectrum {
    pub fn of(problem: &RegressionProblem) -> Self {
        let eigen = problem.sample_covariance().eigen();
        let mask = eigen.nonzero_mask(default_rank_tol(problem.n(), problem.p()));
        SampleSpectrum { eigen, mask }
    }
}

fn full_batch_mean(
    problem: &RegressionProblem,
    spectrum: &SampleSpectrum,
    alpha: f64,
    steps_per_epoch: usize,
    epochs: usize,
    method: Method,
    b_count: usize,
) -> Result<Trajectory> {
    check_alpha(alpha)?;
    let engine = AffineMean {
        eig: &spectrum.eigen,
        mask: spectrum.mask.clone(),
        step: alpha,
        steps_per_epoch,
        e0: problem.initial_error(),
        forcing: problem.x().tr_mul(problem.eta()) / problem.n() as f64,
    };
    mean_trajectory(method, problem, alpha, b_count, engine, epochs, true)
}

/// Full-batch iterate `beta_k`: `(I - alpha W)^k e_0 + (1/n)[I - (I - alpha W)^k] W^+ X^T eta`.
pub fn exact_mean_full_batch(problem: &RegressionProblem, alpha: f64, epochs: usize) -> Result<Trajectory> {
    full_batch_mean(problem, &SampleSpectrum::of(problem), alpha, 1, epochs, Method::FullBatchExactMean, 1)
}

/// Mean iterate when each of the `B` updates per epoch draws a batch uniformly with
/// replacement: the full-batch dynamics run for `B k` steps.
pub fn exact_mean_with_replacement(
    problem: &RegressionProblem,
    partition: &BatchPartition,
    alpha: f64,
    epochs: usize,
) -> Result<Trajectory> {
    let bc = partition.b_count();
    full_batch_mean(problem, &SampleSpectrum::of(problem), alpha, bc, epochs, Method::WithReplacementExactMean, bc)
}

/// Limiting iterate of a gradient scheme.
#[derive(Debug, Clone)]
pub struct LimitVector {
    pub vector: Vector,
    pub converged: bool,
    /// `max |1 - s lambda|` over nonzero eigenvalues `lambda` of the iteration operator.
    pub spectral_radius_restricted: f64,
}

#[derive(Debug, Clone)]
pub struct Limits {
    /// `P_{Z,0} beta_0 + (X~^T X)^+ X~^T y`.
    pub reshuffle: LimitVector,
    /// `P_{X,0} beta_0 + (X^T X)^+ X^T y`.
    pub full_batch: LimitVector,
}

pub fn limit_vector(problem: &RegressionProblem, ops: &ReshuffleOperators) -> Result<Limits> {
    if ops.n() != problem.n() || ops.p() != problem.p() {
        return Err(Error::InvalidInput("operators do not match the problem".into()));
    }
    let n = problem.n() as f64;
    let z_eig = ops.z_eigen();
    let beta_bar = ops.p_z0().apply(problem.beta0()) + ops.z_pinv() * ops.xtilde_t_mul(problem.y()) / n;
    let cut = z_eig.cutoff(ops.rank_tol());
    let z_psd = z_eig.eigenvalues.iter().all(|&l| l >= -cut);
    let z_norm = z_eig.max_abs_eigenvalue();
    let reshuffle = LimitVector {
        vector: beta_bar,
        converged: z_psd && ops.epoch_step() * z_norm < 2.0,
        spectral_radius_restricted: ops.restricted_norm(),
    };

    let spectrum = SampleSpectrum::of(problem);
    let alpha = ops.alpha();
    let w_pinv = spectrum.eigen.pseudoinverse(default_rank_tol(problem.n(), problem.p()));
    let px = range_projector(problem.x(), None)?;
    let beta_hat = px.complement().apply(problem.beta0()) + w_pinv * problem.x().tr_mul(problem.y()) / n;
    let radius = spectrum
        .eigen
        .eigenvalues
        .iter()
        .zip(&spectrum.mask)
        .filter(|(_, m)| **m)
        .map(|(l, _)| (1.0 - alpha * l).abs())
        .fold(0.0, f64::max);
    let full_batch = LimitVector {
        vector: beta_hat,
        converged: alpha * spectrum.eigen.max_abs_eigenvalue() < 2.0,
        spectral_radius_restricted: radius,
    };
    Ok(Limits { reshuffle, full_batch })
}

/// `|| beta-bar_k(B, alpha / B) - beta_k(full, alpha) ||` for `k = 0..=epochs`: the gap
/// between reshuffling at the linearly scaled step and full batch.
pub fn linear_scaling_residual(
    problem: &RegressionProblem,
    partition: &BatchPartition,
    alpha: f64,
    epochs: usize,
) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    let bc = partition.b_count();
    let ops = assemble(partition, alpha / bc as f64, Route::ClosedForm)?;
    let mini = exact_mean_reshuffle_with(problem, &ops, epochs, Hypothesis::Acknowledge)?;
    let full = exact_mean_full_batch(problem, alpha, epochs)?;
    Ok(mini
        .iterates
        .iter()
        .zip(&full.iterates)
        .map(|(a, b)| (a - b).norm())
        .collect())
}
