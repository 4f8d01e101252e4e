//! Density and zero atom of the limiting law, read off the pencil's Cauchy transform.

use rayon::prelude::*;

use super::linearization::Linearization;
use super::mp::{MarchenkoPastur, C64};
use super::quadrature::QuadratureMeasure;
use super::subordination::{polynomial_cauchy, CMat, FreePencil, OperatorCauchyState};
use crate::error::{Error, Result};

/// Evaluation grid: `points` uniform nodes on `[lo, hi_factor · x+]`, where `x+` is the
/// right edge of MP(`gamma`, `alpha`), then up to `refine_levels` rounds of midpoint
/// insertion wherever consecutive values jump by more than `refine_jump · max f`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub points: usize,
    pub lo: f64,
    pub hi_factor: f64,
    pub refine_levels: usize,
    pub refine_jump: f64,
    /// Points per warm-started chunk.
    pub chunk: usize,
    /// Regularizations for the atom extrapolation, decreasing by a constant ratio.
    pub atom_epsilons: [f64; 3],
    pub tol_norm: f64,
    /// Cancel the first-order smoothing bias with a second solve at `2 eps`.
    pub richardson: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            points: 800,
            lo: -0.05,
            hi_factor: 1.1,
            refine_levels: 3,
            refine_jump: 0.05,
            chunk: 32,
            atom_epsilons: [1e-3, 1e-4, 1e-5],
            tol_norm: 0.01,
            richardson: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpectralDensity {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub point_mass_at_zero: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub epsilon: f64,
    /// `∫ f + point mass`.
    pub mass: f64,
    /// Fixed-point iterations per grid point.
    pub iterations: Vec<usize>,
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2).zip(y.windows(2)).map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1])).sum()
}

impl SpectralDensity {
    pub fn integral(&self) -> f64 {
        trapezoid(&self.grid, &self.density)
    }

    /// `∫ x^k f(x) dx`; the zero atom only contributes at `k = 0`.
    pub fn moment(&self, k: i32) -> f64 {
        let y: Vec<f64> = self.grid.iter().zip(&self.density).map(|(x, f)| x.powi(k) * f).collect();
        trapezoid(&self.grid, &y) + if k == 0 { self.point_mass_at_zero } else { 0.0 }
    }

    /// Running integral of the continuous part at the grid nodes.
    fn cumulative(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.grid.len()];
        for i in 1..self.grid.len() {
            acc[i] = acc[i - 1]
                + 0.5 * (self.grid[i] - self.grid[i - 1]) * (self.density[i] + self.density[i - 1]);
        }
        acc
    }

    fn continuous_cdf(&self, cum: &[f64], x: f64) -> f64 {
        let g = &self.grid;
        if x <= g[0] {
            return 0.0;
        }
        if x >= g[g.len() - 1] {
            return cum[cum.len() - 1];
        }
        let i = g.partition_point(|&t| t <= x) - 1;
        let w = (x - g[i]) / (g[i + 1] - g[i]);
        cum[i] + w * (cum[i + 1] - cum[i])
    }

    /// Kolmogorov–Smirnov distance to the empirical law of `eigenvalues`; values with
    /// `|λ| < zero_tol` are treated as exact zeros.
    pub fn ks_distance(&self, eigenvalues: &[f64], zero_tol: f64) -> f64 {
        let mut ev: Vec<f64> = eigenvalues.iter().map(|&l| if l.abs() < zero_tol { 0.0 } else { l }).collect();
        ev.sort_by(f64::total_cmp);
        let n = ev.len() as f64;
        let cum = self.cumulative();
        let total = cum[cum.len() - 1] + self.point_mass_at_zero;
        // Theoretical CDF renormalized to unit mass; left and right limits at x.
        let cdf = |x: f64, right: bool| {
            let atom = if x > 0.0 || (right && x == 0.0) { self.point_mass_at_zero } else { 0.0 };
            (self.continuous_cdf(&cum, x) + atom) / total
        };
        let mut d = 0.0f64;
        let mut probe = |x: f64| {
            let below = ev.partition_point(|&l| l < x) as f64 / n;
            let upto = ev.partition_point(|&l| l <= x) as f64 / n;
            d = d.max((cdf(x, false) - below).abs()).max((cdf(x, true) - upto).abs());
        };
        for &x in &ev {
            probe(x);
        }
        probe(0.0);
        d
    }

    /// Largest `|f(x) - g(x)|` over the grid.
    pub fn sup_distance(&self, reference: impl Fn(f64) -> f64) -> f64 {
        self.grid.iter().zip(&self.density).map(|(x, f)| (f - reference(*x)).abs()).fold(0.0, f64::max)
    }

    /// Counts of grid points by iteration count, in buckets `[2^k, 2^(k+1))`.
    pub fn iteration_histogram(&self) -> Vec<(usize, usize)> {
        let mut buckets: Vec<(usize, usize)> = Vec::new();
        for &it in &self.iterations {
            let lo = if it == 0 { 0 } else { 1 << (usize::BITS - 1 - it.leading_zeros()) };
            match buckets.iter_mut().find(|b| b.0 == lo) {
                Some(b) => b.1 += 1,
                None => buckets.push((lo, 1)),
            }
        }
        buckets.sort();
        buckets
    }
}

struct Sample {
    value: C64,
    /// `G` at twice the regularization, when requested.
    coarse: Option<C64>,
    omega: CMat,
    iterations: usize,
}

fn evaluate_chunk(
    xs: &[f64],
    inits: Option<&[CMat]>,
    pencil: &FreePencil,
    state: &OperatorCauchyState,
    richardson: bool,
) -> Result<Vec<Sample>> {
    let doubled = OperatorCauchyState {
        epsilon: 2.0 * state.epsilon,
        ..state.clone()
    };
    let mut out: Vec<Sample> = Vec::with_capacity(xs.len());
    for (i, &x) in xs.iter().enumerate() {
        let init = match inits {
            Some(v) => Some(&v[i]),
            None => out.last().map(|s| &s.omega),
        };
        let c = polynomial_cauchy(C64::new(x, state.epsilon), pencil, state, init)?;
        let mut iterations = c.fixed_point.iterations;
        let coarse = if richardson {
            let c2 = polynomial_cauchy(C64::new(x, doubled.epsilon), pencil, &doubled, Some(&c.fixed_point.omega))?;
            iterations += c2.fixed_point.iterations;
            Some(c2.value)
        } else {
            None
        };
        out.push(Sample {
            value: c.value,
            coarse,
            omega: c.fixed_point.omega,
            iterations,
        });
    }
    Ok(out)
}

const ATOM_FLOOR: f64 = 1e-3;
const ATOM_WINDOW: f64 = 1e3;

/// `Re(i eps G(i eps))` at the regularization of `state`.
fn atom_at(pencil: &FreePencil, state: &OperatorCauchyState, eps: f64) -> Result<f64> {
    let st = OperatorCauchyState { epsilon: eps, ..state.clone() };
    let z = C64::new(0.0, eps);
    polynomial_cauchy(z, pencil, &st, None).map(|c| (z * c.value).re)
}

/// `lim_{eps -> 0} i eps G(i eps)` by two rounds of Richardson extrapolation.
fn zero_atom(pencil: &FreePencil, state: &OperatorCauchyState, eps: [f64; 3]) -> Result<f64> {
    let vals = eps
        .par_iter()
        .map(|&e| atom_at(pencil, state, e))
        .collect::<Result<Vec<f64>>>()?;
    let q = eps[0] / eps[1];
    let r1 = (q * vals[1] - vals[0]) / (q - 1.0);
    let r2 = (q * vals[2] - vals[1]) / (q - 1.0);
    let r = (q * q * r2 - r1) / (q * q - 1.0);
    Ok(r.clamp(0.0, 1.0))
}

/// Density of the law of `L` for a pencil with free inputs, on the grid described by
/// `grid` with right end taken from `x_plus`.
pub fn pencil_density(
    pencil: &FreePencil,
    x_plus: f64,
    grid: &GridSpec,
    state: &OperatorCauchyState,
    gamma: f64,
    alpha: f64,
) -> Result<SpectralDensity> {
    state.validate()?;
    if grid.points < 2 || grid.chunk == 0 {
        return Err(Error::InvalidInput("grid needs at least 2 points and a positive chunk".into()));
    }
    let atom = zero_atom(pencil, state, grid.atom_epsilons)?;
    // The atom as smeared at the working regularization, removed from the readout.
    let local_atom = atom_at(pencil, state, state.epsilon)?.max(0.0);
    let coarse_atom = if grid.richardson {
        atom_at(pencil, state, 2.0 * state.epsilon)?.max(0.0)
    } else {
        0.0
    };
    let hi = grid.hi_factor * x_plus;
    let n = grid.points;
    // Within a few hundred eps of a zero atom the continuous part is lost in the
    // atom's Lorentzian; such nodes are dropped.
    let window = if atom > ATOM_FLOOR { ATOM_WINDOW * state.epsilon } else { 0.0 };
    let keep = |x: f64| x.abs() >= window;
    let mut xs: Vec<f64> = (0..n)
        .map(|i| grid.lo + (hi - grid.lo) * i as f64 / (n - 1) as f64)
        .filter(|&x| keep(x))
        .collect();
    let chunks = xs
        .par_chunks(grid.chunk)
        .map(|c| evaluate_chunk(c, None, pencil, state, grid.richardson))
        .collect::<Result<Vec<_>>>()?;
    let mut samples: Vec<Sample> = chunks.into_iter().flatten().collect();

    let eps = state.epsilon;
    let at = |x: f64, g: C64, e: f64, atom: f64| {
        let lorentz = atom * e / (std::f64::consts::PI * (x * x + e * e));
        -g.im / std::f64::consts::PI - lorentz
    };
    let readout = |x: f64, s: &Sample| {
        let fine = at(x, s.value, eps, local_atom);
        match s.coarse {
            Some(g2) => 2.0 * fine - at(x, g2, 2.0 * eps, coarse_atom),
            None => fine,
        }
    };
    for _ in 0..grid.refine_levels {
        let f: Vec<f64> = xs.iter().zip(&samples).map(|(x, s)| readout(*x, s)).collect();
        let fmax = f.iter().cloned().fold(0.0, f64::max);
        let marked: Vec<usize> = (0..xs.len() - 1)
            .filter(|&i| (f[i + 1] - f[i]).abs() > grid.refine_jump * fmax && keep(0.5 * (xs[i] + xs[i + 1])))
            .collect();
        if marked.is_empty() {
            break;
        }
        let mids: Vec<f64> = marked.iter().map(|&i| 0.5 * (xs[i] + xs[i + 1])).collect();
        let inits: Vec<CMat> = marked.iter().map(|&i| samples[i].omega.clone()).collect();
        let new = mids
            .par_iter()
            .zip(inits.par_iter())
            .map(|(x, w)| evaluate_chunk(std::slice::from_ref(x), Some(std::slice::from_ref(w)), pencil, state, grid.richardson))
            .collect::<Result<Vec<_>>>()?;
        let mut merged_x = Vec::with_capacity(xs.len() + mids.len());
        let mut merged_s = Vec::with_capacity(xs.len() + mids.len());
        let mut new_iter = mids.into_iter().zip(new.into_iter().flatten()).peekable();
        let mut marks = marked.into_iter().peekable();
        for (i, (x, s)) in xs.into_iter().zip(samples).enumerate() {
            merged_x.push(x);
            merged_s.push(s);
            if marks.peek() == Some(&i) {
                marks.next();
                let (mx, ms) = new_iter.next().expect("one midpoint per mark");
                merged_x.push(mx);
                merged_s.push(ms);
            }
        }
        xs = merged_x;
        samples = merged_s;
    }

    let density: Vec<f64> = xs.iter().zip(&samples).map(|(x, s)| readout(*x, s)).collect();
    let iterations = samples.iter().map(|s| s.iterations).collect();
    let mut out = SpectralDensity {
        grid: xs,
        density,
        point_mass_at_zero: atom,
        gamma,
        alpha,
        epsilon: eps,
        mass: 0.0,
        iterations,
    };
    out.mass = out.integral() + atom;
    if (out.mass - 1.0).abs() > grid.tol_norm {
        return Err(Error::NormalizationFailure {
            mass: out.mass,
            lo: 1.0 - grid.tol_norm,
            hi: 1.0 + grid.tol_norm,
        });
    }
    Ok(out)
}

fn half_batch_inputs(gamma: f64, alpha: f64, state: &OperatorCauchyState, lin: Linearization) -> Result<(FreePencil, f64)> {
    let reference = MarchenkoPastur::new(gamma, alpha)?;
    let half = MarchenkoPastur::new(2.0 * gamma, alpha / 2.0)?;
    let q = QuadratureMeasure::marchenko_pastur(&half, state.quad_nodes);
    Ok((
        FreePencil {
            lin,
            measures: [q.clone(), q],
        },
        reference.support().1,
    ))
}

/// Limiting spectral law of `alpha Z(alpha / 2)` for two batches at `p / n -> gamma`.
pub fn spectral_density(gamma: f64, alpha: f64, grid: &GridSpec, state: &OperatorCauchyState) -> Result<SpectralDensity> {
    let (pencil, x_plus) = half_batch_inputs(gamma, alpha, state, Linearization::two_batch())?;
    pencil_density(&pencil, x_plus, grid, state, gamma, alpha)
}

/// Law of `w1 + w2` for the same inputs, which is MP(`gamma`, `alpha`): the full-batch
/// `alpha W` computed through the subordination machinery.
pub fn free_sum_density(gamma: f64, alpha: f64, grid: &GridSpec, state: &OperatorCauchyState) -> Result<SpectralDensity> {
    let (pencil, x_plus) = half_batch_inputs(gamma, alpha, state, Linearization::free_sum())?;
    pencil_density(&pencil, x_plus, grid, state, gamma, alpha)
}
