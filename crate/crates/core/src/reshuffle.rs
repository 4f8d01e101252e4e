//! Permutation-averaged batch modifiers and the cross-covariance operator.
//!
//! For batch `b`, `Pi_b` is the average over uniformly random batch orders of the
//! product of `(I - alpha W_j)` over the batches `j` visited before `b`. Products
//! over a prefix `(tau(1), ..., tau(m))` are taken right to left: the batch visited
//! first is the rightmost factor, matching how the iterate is updated. The modified
//! features are `X~_b = X_b Pi_b` and the cross-covariance is `Z = X~^T X / n`.
//!
//! Three routes compute `Pi_b`:
//!
//! * [`pi_enumerate`] sums over all `B!` orders (the reference, feasible for small `B`);
//! * [`pi_closed_form`] expands the average into sums over ordered tuples of distinct
//!   batches, accumulated by dynamic programming over subsets;
//! * [`pi_monte_carlo`] samples orders and reports per-entry standard errors.

use itertools::Itertools;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::{
    default_rank_tol, symmetry_residual, tree_sum, Mat, Projector, SpectralDecomposition,
    SymmetricMatrix, Vector, SYMMETRY_DIAGNOSTIC_TOL,
};
use crate::problem::{BatchPartition, Covariances, RegressionProblem};
use crate::rng::{substream_rng, Stream};

/// Largest `B` accepted by [`pi_enumerate`].
pub const ENUMERATION_CAP: usize = 8;
/// Largest `B` accepted by [`pi_closed_form`].
pub const CLOSED_FORM_CAP: usize = 7;
/// Residual of `P_{Z,0} X~^T` (relative) under which the range hypothesis is accepted.
pub const HYPOTHESIS_TOL: f64 = 1e-8;

const PERMUTATION_CHUNK: usize = 64;
const TRIAL_CHUNK: usize = 256;

/// How `Pi_b` was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    Enumerate,
    ClosedForm,
    MonteCarlo { trials: usize, seed: u64 },
    /// Caller-provided modifiers (used to impose structural assumptions).
    Supplied,
}

impl Route {
    pub fn name(&self) -> &'static str {
        match self {
            Route::Enumerate => "enumerate",
            Route::ClosedForm => "closed_form",
            Route::MonteCarlo { .. } => "monte_carlo",
            Route::Supplied => "supplied",
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

fn check_batch<C: Covariances + ?Sized>(ws: &C, b: usize) -> Result<()> {
    if b >= ws.count() {
        return Err(Error::InvalidInput(format!(
            "batch index {b} out of range for {} batches",
            ws.count()
        )));
    }
    Ok(())
}

/// `W_j A`, using symmetry of `W_j` to route through [`Covariances::right_mul`].
fn left_mul<C: Covariances + ?Sized>(ws: &C, j: usize, a: &Mat) -> Mat {
    ws.right_mul(&a.transpose(), j).transpose()
}

/// Product of `(I - alpha W_j)` over `order`, the first entry being the rightmost factor.
pub fn ordered_prefix_product<C: Covariances + ?Sized>(ws: &C, alpha: f64, order: &[usize]) -> Mat {
    let p = ws.dim();
    let mut acc = Mat::identity(p, p);
    for &j in order {
        let wa = left_mul(ws, j, &acc);
        acc -= wa * alpha;
    }
    acc
}

/// The batches visited before `b` in `perm`, in visiting order.
fn prefix_before(perm: &[usize], b: usize) -> &[usize] {
    let pos = perm.iter().position(|&j| j == b).expect("b occurs in the permutation");
    &perm[..pos]
}

/// `Pi_b` by explicit enumeration of all `B!` batch orders.
pub fn pi_enumerate<C: Covariances + ?Sized>(ws: &C, alpha: f64, b: usize) -> Result<Mat> {
    check_alpha(alpha)?;
    check_batch(ws, b)?;
    let bc = ws.count();
    if bc > ENUMERATION_CAP {
        return Err(Error::CapacityExceeded {
            what: "B (enumeration)",
            value: bc,
            cap: ENUMERATION_CAP,
        });
    }
    let perms: Vec<Vec<usize>> = (0..bc).permutations(bc).collect();
    let partials: Vec<Mat> = perms
        .par_chunks(PERMUTATION_CHUNK)
        .map(|chunk| {
            let p = ws.dim();
            let mut acc = Mat::zeros(p, p);
            for perm in chunk {
                acc += ordered_prefix_product(ws, alpha, prefix_before(perm, b));
            }
            acc
        })
        .collect();
    let total = tree_sum(partials).expect("at least one permutation");
    Ok(total / perms.len() as f64)
}

/// Sums of ordered products `W_{b_1} ... W_{b_i}` over distinct `b_1..b_i` drawn from
/// `others`, for `i = 1..=others.len()`.
///
/// Subset dynamic programming: for a subset `T`, `S(T)` is the sum over all orderings
/// of `T` and satisfies `S(T) = sum_{j in T} S(T \ j) W_j`. Only one level of subsets
/// is kept in memory at a time.
fn ordered_tuple_sums<C: Covariances + ?Sized>(ws: &C, others: &[usize]) -> Vec<Mat> {
    let m = others.len();
    let p = ws.dim();
    let mut level: std::collections::BTreeMap<u32, Mat> = std::collections::BTreeMap::new();
    level.insert(0, Mat::identity(p, p));
    let mut sums = Vec::with_capacity(m);
    for _ in 1..=m {
        let masks: Vec<u32> = {
            let mut next: Vec<u32> = level
                .keys()
                .flat_map(|&mask| {
                    (0..m as u32)
                        .filter(move |&j| mask & (1 << j) == 0)
                        .map(move |j| mask | (1 << j))
                })
                .collect();
            next.sort_unstable();
            next.dedup();
            next
        };
        let computed: Vec<(u32, Mat)> = masks
            .par_iter()
            .map(|&mask| {
                let mut acc = Mat::zeros(p, p);
                for j in 0..m {
                    if mask & (1 << j) != 0 {
                        let prev = &level[&(mask & !(1 << j))];
                        acc += ws.right_mul(prev, others[j]);
                    }
                }
                (mask, acc)
            })
            .collect();
        let level_sum = tree_sum(computed.iter().map(|(_, s)| s.clone()).collect())
            .expect("non-empty level");
        sums.push(level_sum);
        level = computed.into_iter().collect();
    }
    sums
}

/// `Pi_b = I - sum_{i=1}^{B-1} (-1)^{i+1} alpha^i / (i+1)! * (sum of ordered products of
/// i distinct covariances other than W_b)`.
pub fn pi_closed_form<C: Covariances + ?Sized>(ws: &C, alpha: f64, b: usize) -> Result<Mat> {
    check_alpha(alpha)?;
    check_batch(ws, b)?;
    let bc = ws.count();
    if bc > CLOSED_FORM_CAP {
        return Err(Error::CapacityExceeded {
            what: "B (closed form)",
            value: bc,
            cap: CLOSED_FORM_CAP,
        });
    }
    let p = ws.dim();
    let mut pi = Mat::identity(p, p);
    if alpha == 0.0 || bc == 1 {
        return Ok(pi);
    }
    let others: Vec<usize> = (0..bc).filter(|&j| j != b).collect();
    let sums = ordered_tuple_sums(ws, &others);
    let mut factorial = 1.0;
    for (idx, s) in sums.iter().enumerate() {
        let i = idx + 1;
        factorial *= (i + 1) as f64;
        let sign = if i % 2 == 1 { 1.0 } else { -1.0 };
        pi -= s * (sign * alpha.powi(i as i32) / factorial);
    }
    Ok(pi)
}

/// Sampled estimate of `Pi_b` with per-entry standard errors.
#[derive(Debug, Clone)]
pub struct MonteCarloEstimate {
    pub mean: Mat,
    pub std_err: Mat,
    pub trials: usize,
}

/// Averages the prefix product over `trials` uniformly random orders. Trial `t`
/// draws its order from substream `t` of `seed`, so the estimate does not depend
/// on the number of worker threads.
pub fn pi_monte_carlo<C: Covariances + ?Sized>(
    ws: &C,
    alpha: f64,
    b: usize,
    trials: usize,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    check_alpha(alpha)?;
    check_batch(ws, b)?;
    if trials == 0 {
        return Err(Error::InvalidInput("trials must be at least 1".into()));
    }
    let bc = ws.count();
    let p = ws.dim();
    let indices: Vec<usize> = (0..trials).collect();
    let partials: Vec<(Mat, Mat)> = indices
        .par_chunks(TRIAL_CHUNK)
        .map(|chunk| {
            let mut sum = Mat::zeros(p, p);
            let mut sq = Mat::zeros(p, p);
            let mut perm: Vec<usize> = (0..bc).collect();
            for &t in chunk {
                let mut rng = substream_rng(seed, Stream::MonteCarlo, t as u64);
                perm.sort_unstable();
                perm.shuffle(&mut rng);
                let prod = ordered_prefix_product(ws, alpha, prefix_before(&perm, b));
                sq += prod.component_mul(&prod);
                sum += prod;
            }
            (sum, sq)
        })
        .collect();
    let (sums, sqs): (Vec<Mat>, Vec<Mat>) = partials.into_iter().unzip();
    let tf = trials as f64;
    let mean = tree_sum(sums).expect("non-empty") / tf;
    let second = tree_sum(sqs).expect("non-empty") / tf;
    let std_err = if trials > 1 {
        Mat::from_fn(p, p, |i, j| {
            let var = (second[(i, j)] - mean[(i, j)].powi(2)).max(0.0) * tf / (tf - 1.0);
            (var / tf).sqrt()
        })
    } else {
        Mat::zeros(p, p)
    };
    Ok(MonteCarloEstimate {
        mean,
        std_err,
        trials,
    })
}

/// All `Pi_b` for a route (Monte-Carlo trials for batch `b` use substreams of `seed + b`).
pub fn pi_all<C: Covariances + ?Sized>(ws: &C, alpha: f64, route: Route) -> Result<Vec<Mat>> {
    match route {
        Route::Supplied => Err(Error::InvalidInput(
            "the supplied route has no computation; use ReshuffleOperators::from_modifiers".into(),
        )),
        _ => (0..ws.count())
            .map(|b| match route {
                Route::Enumerate => pi_enumerate(ws, alpha, b),
                Route::ClosedForm => pi_closed_form(ws, alpha, b),
                Route::MonteCarlo { trials, seed } => {
                    pi_monte_carlo(ws, alpha, b, trials, seed.wrapping_add(b as u64)).map(|e| e.mean)
                }
                Route::Supplied => unreachable!(),
            })
            .collect(),
    }
}

/// `sum_b Pi_b W_b - sum_b W_b Pi_b`, which vanishes for the exact modifiers.
pub fn commutation_residual<C: Covariances + ?Sized>(ws: &C, pis: &[Mat]) -> f64 {
    let p = ws.dim();
    let mut d = Mat::zeros(p, p);
    for (b, pi) in pis.iter().enumerate() {
        d += pi * ws.covariance(b) - ws.covariance(b) * pi;
    }
    d.amax()
}

/// The modifiers, modified features and cross-covariance for one `(partition, alpha)`.
#[derive(Debug, Clone)]
pub struct ReshuffleOperators {
    alpha: f64,
    n: usize,
    pi: Vec<Mat>,
    xtilde: Mat,
    z: SymmetricMatrix,
    z_eigen: SpectralDecomposition,
    p_z: Projector,
    p_z0: Projector,
    modified_gram: SymmetricMatrix,
    route: Route,
    symmetry_residual: f64,
    hypothesis_residual: f64,
    rank_tol: f64,
}

/// Builds every `Pi_b` by `route` and assembles the operators.
pub fn assemble(partition: &BatchPartition, alpha: f64, route: Route) -> Result<ReshuffleOperators> {
    check_alpha(alpha)?;
    let pis = pi_all(partition, alpha, route)?;
    ReshuffleOperators::build(partition, alpha, pis, route)
}

impl ReshuffleOperators {
    /// Assembles the operators from caller-provided modifiers `Pi_b`. The symmetry
    /// diagnostic is skipped since arbitrary modifiers need not produce a symmetric `Z`.
    pub fn from_modifiers(partition: &BatchPartition, alpha: f64, pis: Vec<Mat>) -> Result<Self> {
        check_alpha(alpha)?;
        Self::build(partition, alpha, pis, Route::Supplied)
    }

    fn build(partition: &BatchPartition, alpha: f64, pis: Vec<Mat>, route: Route) -> Result<Self> {
        let (n, p) = (partition.n(), partition.p());
        if pis.len() != partition.b_count() || pis.iter().any(|m| m.shape() != (p, p)) {
            return Err(Error::InvalidInput("need one p x p modifier per batch".into()));
        }
        let mut xtilde = Mat::zeros(n, p);
        for (batch, pi) in partition.batches().iter().zip(&pis) {
            xtilde
                .rows_mut(batch.rows.start, batch.rows.len())
                .copy_from(&(&batch.x * pi));
        }
        let (x, _) = partition.reassemble();
        let z_raw = xtilde.transpose() * &x / n as f64;
        let symmetry = symmetry_residual(&z_raw);
        let exact = matches!(route, Route::Enumerate | Route::ClosedForm);
        if exact && symmetry > SYMMETRY_DIAGNOSTIC_TOL {
            return Err(Error::NumericalInconsistency(format!(
                "assembled Z is not symmetric (relative residual {symmetry:.3e})"
            )));
        }
        let z = SymmetricMatrix::symmetrize(z_raw);
        let z_eigen = z.eigen();
        let rank_tol = default_rank_tol(n, p);
        let p_z = z_eigen.range_projector(rank_tol);
        let p_z0 = p_z.complement();
        let modified_gram = SymmetricMatrix::symmetrize(xtilde.transpose() * &xtilde / n as f64);
        let xt_norm = xtilde.norm();
        let hypothesis_residual = if xt_norm == 0.0 {
            0.0
        } else {
            (&xtilde * p_z0.as_mat()).norm() / xt_norm
        };
        Ok(ReshuffleOperators {
            alpha,
            n,
            pi: pis,
            xtilde,
            z,
            z_eigen,
            p_z,
            p_z0,
            modified_gram,
            route,
            symmetry_residual: symmetry,
            hypothesis_residual,
            rank_tol,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn b_count(&self) -> usize {
        self.pi.len()
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn p(&self) -> usize {
        self.z.dim()
    }
    pub fn pi(&self) -> &[Mat] {
        &self.pi
    }
    pub fn xtilde(&self) -> &Mat {
        &self.xtilde
    }
    pub fn z(&self) -> &SymmetricMatrix {
        &self.z
    }
    pub fn z_eigen(&self) -> &SpectralDecomposition {
        &self.z_eigen
    }
    pub fn p_z(&self) -> &Projector {
        &self.p_z
    }
    pub fn p_z0(&self) -> &Projector {
        &self.p_z0
    }
    /// `X~^T X~ / n`.
    pub fn modified_gram(&self) -> &SymmetricMatrix {
        &self.modified_gram
    }
    pub fn route(&self) -> Route {
        self.route
    }
    /// Relative asymmetry of `X~^T X / n` before symmetrization.
    pub fn symmetry_residual(&self) -> f64 {
        self.symmetry_residual
    }
    pub fn rank_tol(&self) -> f64 {
        self.rank_tol
    }

    /// Effective per-epoch step `B alpha`.
    pub fn epoch_step(&self) -> f64 {
        self.b_count() as f64 * self.alpha
    }

    /// `Z^+` with the crate's rank tolerance.
    pub fn z_pinv(&self) -> Mat {
        self.z_eigen.pseudoinverse(self.rank_tol)
    }

    /// Mask of eigenvalues of `Z` treated as nonzero (aligned with `z_eigen`).
    pub fn nonzero_mask(&self) -> Vec<bool> {
        self.z_eigen.nonzero_mask(self.rank_tol)
    }

    /// `||(I - B alpha Z) P_Z||`: the largest `|1 - B alpha lambda|` over nonzero eigenvalues.
    pub fn restricted_norm(&self) -> f64 {
        let s = self.epoch_step();
        self.z_eigen
            .eigenvalues
            .iter()
            .zip(self.nonzero_mask())
            .filter(|(_, nz)| *nz)
            .map(|(l, _)| (1.0 - s * l).abs())
            .fold(0.0, f64::max)
    }

    /// Relative size of `P_{Z,0} X~^T`; zero exactly when `range(X~^T)` lies in `range(X~^T X)`.
    pub fn hypothesis_residual(&self) -> f64 {
        self.hypothesis_residual
    }

    pub fn hypothesis_holds(&self) -> bool {
        self.hypothesis_residual <= HYPOTHESIS_TOL
    }

    /// `X~^T v`.
    pub fn xtilde_t_mul(&self, v: &Vector) -> Vector {
        self.xtilde.tr_mul(v)
    }
}

/// Ranks and containment residuals for `range(Z) ⊆ range(X~^T) ⊆ range(X^T)` and the
/// trajectory hypothesis `range(X~^T) ⊆ range(X~^T X)`.
#[derive(Debug, Clone)]
pub struct RangeReport {
    pub rank_x: usize,
    pub rank_xtilde: usize,
    pub rank_z: usize,
    /// `||(I - P_{X~^T}) Z|| / ||Z||`.
    pub z_in_xtilde: f64,
    /// `||(I - P_{X^T}) X~^T|| / ||X~||`.
    pub xtilde_in_x: f64,
    /// `||(I - P_Z) X~^T|| / ||X~||`.
    pub hypothesis_residual: f64,
    pub hypothesis_holds: bool,
}

pub fn range_inclusion_check(ops: &ReshuffleOperators, problem: &RegressionProblem) -> Result<RangeReport> {
    use crate::kernels::range_projector;
    let tol = ops.rank_tol();
    let x = problem.x();
    let px = range_projector(x, Some(tol))?;
    let pxt = range_projector(ops.xtilde(), Some(tol))?;
    let z = ops.z().as_mat();
    let rel = |m: Mat, scale: f64| if scale == 0.0 { 0.0 } else { m.norm() / scale };
    let zt = z.norm();
    let xt = ops.xtilde().norm();
    Ok(RangeReport {
        rank_x: px.rank(),
        rank_xtilde: pxt.rank(),
        rank_z: ops.p_z().rank(),
        z_in_xtilde: rel(pxt.complement().as_mat() * z, zt),
        xtilde_in_x: rel(px.complement().as_mat() * ops.xtilde().transpose(), xt),
        hypothesis_residual: ops.hypothesis_residual(),
        hypothesis_holds: ops.hypothesis_holds(),
    })
}

/// Largest entry of `avg_tau sum_b [prod_{j > tau^-1(b)} (I - alpha W_tau(j))] alpha W_b`
/// minus `I - avg_tau prod_j (I - alpha W_tau(j))`, by enumeration. The suffix products
/// telescope, so this vanishes for every order individually.
pub fn epoch_identity_residual<C: Covariances + ?Sized>(ws: &C, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let bc = ws.count();
    if bc > ENUMERATION_CAP {
        return Err(Error::CapacityExceeded {
            what: "B (enumeration)",
            value: bc,
            cap: ENUMERATION_CAP,
        });
    }
    let p = ws.dim();
    let perms: Vec<Vec<usize>> = (0..bc).permutations(bc).collect();
    let partials: Vec<Mat> = perms
        .par_chunks(PERMUTATION_CHUNK)
        .map(|chunk| {
            let mut acc = Mat::zeros(p, p);
            for perm in chunk {
                let mut lhs = Mat::zeros(p, p);
                for pos in 0..bc {
                    let suffix = ordered_prefix_product(ws, alpha, &perm[pos + 1..]);
                    lhs += suffix * ws.covariance(perm[pos]) * alpha;
                }
                let full = ordered_prefix_product(ws, alpha, perm);
                acc += lhs - (Mat::identity(p, p) - full);
            }
            acc
        })
        .collect();
    let total = tree_sum(partials).expect("at least one permutation") / perms.len() as f64;
    Ok(total.amax())
}

const OPERATORS_MAGIC: &[u8; 8] = b"RRLSOPER";
const OPERATORS_VERSION: u32 = 1;

impl ReshuffleOperators {
    /// Writes the modifiers: magic `RRLSOPER`, `u32` version, `u64` B, `u64` p,
    /// `alpha: f64`, route tag `u8` (0 enumerate, 1 closed form, 2 Monte Carlo, 3 supplied),
    /// `u64` trials and `u64` seed, then each `Pi_b` row-major (little endian).
    /// Reload with [`ReshuffleOperators::load`] against the same partition.
    pub fn write_to(&self, mut w: impl std::io::Write) -> Result<()> {
        let p = self.p();
        w.write_all(OPERATORS_MAGIC)?;
        w.write_all(&OPERATORS_VERSION.to_le_bytes())?;
        w.write_all(&(self.b_count() as u64).to_le_bytes())?;
        w.write_all(&(p as u64).to_le_bytes())?;
        w.write_all(&self.alpha.to_le_bytes())?;
        let (tag, trials, seed) = match self.route {
            Route::Enumerate => (0u8, 0u64, 0u64),
            Route::ClosedForm => (1, 0, 0),
            Route::MonteCarlo { trials, seed } => (2, trials as u64, seed),
            Route::Supplied => (3, 0, 0),
        };
        w.write_all(&[tag])?;
        w.write_all(&trials.to_le_bytes())?;
        w.write_all(&seed.to_le_bytes())?;
        for pi in &self.pi {
            for i in 0..p {
                for j in 0..p {
                    w.write_all(&pi[(i, j)].to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl std::io::Read, partition: &BatchPartition) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != OPERATORS_MAGIC {
            return Err(Error::InvalidInput("not an operators container (bad magic)".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        if u32::from_le_bytes(b4) != OPERATORS_VERSION {
            return Err(Error::InvalidInput("unsupported operators container version".into()));
        }
        let mut b8 = [0u8; 8];
        let mut word = |r: &mut dyn std::io::Read| -> Result<[u8; 8]> {
            r.read_exact(&mut b8)?;
            Ok(b8)
        };
        let bc = u64::from_le_bytes(word(&mut r)?) as usize;
        let p = u64::from_le_bytes(word(&mut r)?) as usize;
        if bc != partition.b_count() || p != partition.p() {
            return Err(Error::InvalidInput(format!(
                "stored operators are for B = {bc}, p = {p}; partition has B = {}, p = {}",
                partition.b_count(),
                partition.p()
            )));
        }
        let alpha = f64::from_le_bytes(word(&mut r)?);
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        let trials = u64::from_le_bytes(word(&mut r)?) as usize;
        let seed = u64::from_le_bytes(word(&mut r)?);
        let route = match tag[0] {
            0 => Route::Enumerate,
            1 => Route::ClosedForm,
            2 => Route::MonteCarlo { trials, seed },
            3 => Route::Supplied,
            t => return Err(Error::InvalidInput(format!("unknown route tag {t}"))),
        };
        let mut pis = Vec::with_capacity(bc);
        for _ in 0..bc {
            let mut vals = Vec::with_capacity(p * p);
            for _ in 0..p * p {
                vals.push(f64::from_le_bytes(word(&mut r)?));
            }
            pis.push(Mat::from_row_slice(p, p, &vals));
        }
        check_alpha(alpha)?;
        Self::build(partition, alpha, pis, route)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        std::io::Write::flush(&mut w)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>, partition: &BatchPartition) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f), partition)
    }
}
