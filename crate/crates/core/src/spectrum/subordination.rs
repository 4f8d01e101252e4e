//! Operator-valued Cauchy transforms and the subordination fixed point for
//! `L = b0 + b1 ⊗ w1 + b2 ⊗ w2` with `w1`, `w2` free.

use nalgebra::{Complex, DMatrix};

use super::linearization::Linearization;
use super::mp::C64;
use super::quadrature::QuadratureMeasure;
use crate::error::{Error, Result};
use crate::kernels::Mat;

pub type CMat = DMatrix<C64>;

/// Numerical parameters of the subordination solver.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorCauchyState {
    pub epsilon: f64,
    /// The auxiliary diagonal of `Lambda` is `i · epsilon · aux_ratio`. Equal
    /// regularization of `z` and the auxiliary entries perturbs the readout at
    /// `|z| ~ epsilon`, which biases the zero atom.
    pub aux_ratio: f64,
    /// Gauss–Legendre nodes per input measure.
    pub quad_nodes: usize,
    /// Bound on `max |f(omega) - omega|` relative to `max |omega|`.
    pub fixed_point_tol: f64,
    /// Relaxation factor `d` in `omega <- omega + d (f(omega) - omega)`.
    pub damping: f64,
    pub max_iters: usize,
    /// Track the smallest eigenvalue of `Im h` along the iteration.
    pub monitor_herglotz: bool,
}

impl Default for OperatorCauchyState {
    fn default() -> Self {
        OperatorCauchyState {
            epsilon: 1e-6,
            aux_ratio: 1e-3,
            quad_nodes: 2000,
            fixed_point_tol: 1e-6,
            damping: 0.5,
            max_iters: 20_000,
            monitor_herglotz: false,
        }
    }
}

impl OperatorCauchyState {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidInput(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if !(self.aux_ratio > 0.0 && self.aux_ratio <= 1.0) {
            return Err(Error::InvalidInput(format!("aux_ratio must lie in (0, 1], got {}", self.aux_ratio)));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidInput(format!("damping must lie in (0, 1], got {}", self.damping)));
        }
        if self.quad_nodes == 0 || self.max_iters == 0 || !(self.fixed_point_tol > 0.0) {
            return Err(Error::InvalidInput("quad_nodes, max_iters and fixed_point_tol must be positive".into()));
        }
        Ok(())
    }
}

pub(crate) fn complexify(m: &Mat) -> CMat {
    m.map(|x| Complex::new(x, 0.0))
}

/// `(b - b^*) / 2i`.
pub fn imaginary_part(b: &CMat) -> CMat {
    (b - b.adjoint()) * Complex::new(0.0, -0.5)
}

/// Smallest eigenvalue of the Hermitian matrix `Im b`.
pub fn min_imaginary_eigenvalue(b: &CMat) -> f64 {
    let im = imaginary_part(b);
    // Hermitian n×n as a real symmetric 2n×2n: [[Re, -Im], [Im, Re]].
    let n = im.nrows();
    let real = Mat::from_fn(2 * n, 2 * n, |i, j| {
        let (a, b) = (i % n, j % n);
        let z = im[(a, b)];
        match (i < n, j < n) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    });
    let real = (&real + real.transpose()) * 0.5;
    real.symmetric_eigenvalues().min()
}

fn invert(m: &CMat, what: &str) -> Result<CMat> {
    m.clone()
        .try_inverse()
        .filter(|inv| inv.iter().all(|z| z.re.is_finite() && z.im.is_finite()))
        .ok_or_else(|| Error::QuadratureFailure(format!("singular {what}")))
}

const NODE_SINGULARITY: f64 = 1e-14;

/// `∫ (b - t U V^T)^-1 dnu(t)` via Woodbury. With `K = V^T b^-1 U` the integrand is
/// `b^-1 + t b^-1 U (I - t K)^-1 V^T b^-1`, so only the scalar integrals of the
/// entries of `t (I - t K)^-1` are needed.
fn woodbury_cauchy(b: &CMat, u: &Mat, v: &Mat, measure: &QuadratureMeasure) -> Result<CMat> {
    let binv = invert(b, "argument of the operator Cauchy transform")?;
    let uc = complexify(u);
    let vc = complexify(v);
    let k = vc.transpose() * &binv * &uc;
    let r = k.nrows();
    let mut m = CMat::zeros(r, r);
    let mut failure = None;
    let mut check = |det: C64, t: f64| {
        if det.norm() < NODE_SINGULARITY && failure.is_none() {
            failure = Some(t);
        }
    };
    match r {
        1 => {
            let k0 = k[(0, 0)];
            m[(0, 0)] = measure.integrate(|t| {
                let d = 1.0 - k0 * t;
                check(d, t);
                t / d
            });
        }
        2 => {
            let tr = k[(0, 0)] + k[(1, 1)];
            let det = k[(0, 0)] * k[(1, 1)] - k[(0, 1)] * k[(1, 0)];
            let mut a = C64::new(0.0, 0.0);
            let mut q = C64::new(0.0, 0.0);
            let mut acc = |t: f64, w: f64| {
                let d = 1.0 - tr * t + det * (t * t);
                check(d, t);
                let s = w * t / d;
                a += s;
                q += s * t;
            };
            for (t, w) in measure.nodes.iter().zip(&measure.weights) {
                acc(*t, *w);
            }
            for (t, w) in &measure.atoms {
                acc(*t, *w);
            }
            m[(0, 0)] = a - k[(1, 1)] * q;
            m[(0, 1)] = k[(0, 1)] * q;
            m[(1, 0)] = k[(1, 0)] * q;
            m[(1, 1)] = a - k[(0, 0)] * q;
        }
        _ => {
            return Err(Error::InvalidInput(format!(
                "coefficient matrices of rank {r} are not supported"
            )))
        }
    }
    if let Some(t) = failure {
        return Err(Error::QuadratureFailure(format!("resolvent singular at node t = {t:.6e}")));
    }
    Ok(&binv * Complex::new(measure.total_mass(), 0.0) + &binv * uc * m * vc.transpose() * &binv)
}

/// Which coefficient of the pencil the transform is taken against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    B1W1,
    B2W2,
}

impl Which {
    fn index(self) -> usize {
        match self {
            Which::B1W1 => 0,
            Which::B2W2 => 1,
        }
    }
}

/// `G_{b_j ⊗ w_j}(b) = ∫ (b - t b_j)^-1 dnu_j(t)` for `b` in the operator upper
/// half-plane.
pub fn operator_cauchy(b: &CMat, which: Which, lin: &Linearization, measure: &QuadratureMeasure) -> Result<CMat> {
    if b.nrows() != lin.size || b.ncols() != lin.size {
        return Err(Error::InvalidInput(format!("argument must be {0}×{0}", lin.size)));
    }
    let lo = min_imaginary_eigenvalue(b);
    if !(lo > 0.0) {
        return Err(Error::InvalidInput(format!(
            "argument is not in the operator upper half-plane (min eigenvalue of Im b = {lo:.3e})"
        )));
    }
    let (u, v) = &lin.factors[which.index()];
    woodbury_cauchy(b, u, v, measure)
}

/// The pencil together with the laws of its free inputs.
#[derive(Debug, Clone)]
pub struct FreePencil {
    pub lin: Linearization,
    pub measures: [QuadratureMeasure; 2],
}

impl FreePencil {
    fn cauchy(&self, j: usize, b: &CMat) -> Result<CMat> {
        let (u, v) = &self.lin.factors[j];
        woodbury_cauchy(b, u, v, &self.measures[j])
    }

    /// `h_j(a) = G_j(a)^-1 - a`.
    pub fn h_transform(&self, j: usize, a: &CMat) -> Result<CMat> {
        let g = self.cauchy(j, a)?;
        Ok(invert(&g, "operator Cauchy transform")? - a)
    }

    /// `f_b(omega) = h2(h1(omega) + b) + b`, also returning `h1(omega)` and the
    /// inner `h2` value for monitoring.
    fn map(&self, b: &CMat, omega: &CMat) -> Result<(CMat, CMat, CMat)> {
        let h1 = self.h_transform(0, omega)?;
        let h2 = self.h_transform(1, &(&h1 + b))?;
        Ok((&h2 + b, h1, h2))
    }

    /// `max |f_b(omega) - omega| / max |omega|`.
    pub fn residual(&self, b: &CMat, omega: &CMat) -> Result<f64> {
        let (f, _, _) = self.map(b, omega)?;
        Ok(max_abs(&(f - omega)) / max_abs(omega).max(1e-300))
    }

    /// `G_L(b + b0) = G_1(omega(b))`, the operator Cauchy transform of the pencil.
    pub fn pencil_cauchy(&self, omega: &CMat) -> Result<CMat> {
        self.cauchy(0, omega)
    }

    /// `Lambda_eps(z) - b0`.
    pub fn shifted_argument(&self, z: C64, epsilon: f64) -> CMat {
        let mut lam = CMat::zeros(self.lin.size, self.lin.size);
        lam[(0, 0)] = z;
        for i in 1..self.lin.size {
            lam[(i, i)] = Complex::new(0.0, epsilon);
        }
        lam - complexify(&self.lin.b0)
    }
}

fn max_abs(m: &CMat) -> f64 {
    m.iter().fold(0.0f64, |a, z| a.max(z.norm()))
}

/// Result of one fixed-point solve.
#[derive(Debug, Clone)]
pub struct FixedPoint {
    pub omega: CMat,
    pub iterations: usize,
    /// `max |f_b(omega) - omega| / max |omega|` at the returned point.
    pub residual: f64,
    /// Relaxation factor that converged.
    pub damping: f64,
    /// Smallest eigenvalue of `Im h` seen over all iterates (`+inf` unless monitored).
    pub min_imag_h: f64,
}

fn iterate(
    pencil: &FreePencil,
    b: &CMat,
    start: &CMat,
    damping: f64,
    state: &OperatorCauchyState,
) -> Result<FixedPoint> {
    let mut omega = start.clone();
    let mut min_imag_h = f64::INFINITY;
    let mut change = f64::INFINITY;
    for it in 0..state.max_iters {
        let (f, h1, h2) = pencil.map(b, &omega)?;
        if state.monitor_herglotz {
            min_imag_h = min_imag_h.min(min_imaginary_eigenvalue(&h1)).min(min_imaginary_eigenvalue(&h2));
        }
        let step = f - &omega;
        change = max_abs(&step) / max_abs(&omega).max(1e-300);
        if !change.is_finite() {
            break;
        }
        if change <= state.fixed_point_tol {
            return Ok(FixedPoint {
                omega,
                iterations: it,
                residual: change,
                damping,
                min_imag_h,
            });
        }
        omega += step * Complex::new(damping, 0.0);
    }
    Err(Error::NonConvergence {
        iterations: state.max_iters,
        last_change: change,
    })
}

/// Solves `omega = f_b(omega)` from `init` (default `b`), falling back to the
/// undamped map when the damped iteration stalls.
pub fn subordination_fixed_point(
    b: &CMat,
    pencil: &FreePencil,
    state: &OperatorCauchyState,
    init: Option<&CMat>,
) -> Result<FixedPoint> {
    state.validate()?;
    let start = init.unwrap_or(b);
    match iterate(pencil, b, start, state.damping, state) {
        Err(Error::NonConvergence { .. }) | Err(Error::QuadratureFailure(_)) if state.damping < 1.0 => {
            iterate(pencil, b, start, 1.0, state)
        }
        other => other,
    }
}

/// `G_p(z) = [G_L(Lambda_eps(z))]_{11}` along with the fixed point used.
#[derive(Debug, Clone)]
pub struct CauchyPoint {
    pub value: C64,
    pub fixed_point: FixedPoint,
}

pub fn polynomial_cauchy(
    z: C64,
    pencil: &FreePencil,
    state: &OperatorCauchyState,
    init: Option<&CMat>,
) -> Result<CauchyPoint> {
    if !(z.im > 0.0) {
        return Err(Error::InvalidInput(format!("polynomial Cauchy transform needs Im z > 0, got {z}")));
    }
    polynomial_cauchy_aux(z, state.epsilon * state.aux_ratio, pencil, state, init)
}

/// As [`polynomial_cauchy`] with the regularization of the auxiliary diagonal
/// entries of `Lambda` given separately from `z`.
pub fn polynomial_cauchy_aux(
    z: C64,
    aux_epsilon: f64,
    pencil: &FreePencil,
    state: &OperatorCauchyState,
    init: Option<&CMat>,
) -> Result<CauchyPoint> {
    if !(z.im > 0.0 && aux_epsilon > 0.0) {
        return Err(Error::InvalidInput(format!("needs Im z > 0 and aux epsilon > 0, got {z}, {aux_epsilon}")));
    }
    let b = pencil.shifted_argument(z, aux_epsilon);
    let fp = subordination_fixed_point(&b, pencil, state, init)?;
    let g = pencil.pencil_cauchy(&fp.omega)?;
    Ok(CauchyPoint {
        value: g[(0, 0)],
        fixed_point: fp,
    })
}
