//! Discrete approximations of spectral measures for resolvent integrals.

use super::mp::{MarchenkoPastur, C64};

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Chebyshev-like initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else if n == 1 { x } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pm) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// A measure approximated by weighted nodes plus exact atoms.
#[derive(Debug, Clone)]
pub struct QuadratureMeasure {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// `(location, mass)`.
    pub atoms: Vec<(f64, f64)>,
}

impl QuadratureMeasure {
    /// The continuous part of MP is integrated in `theta` with `t = c + r cos(theta)`,
    /// which turns the square-root edges into the smooth weight
    /// `r^2 sin^2(theta) / (2 pi var gamma t)`.
    pub fn marchenko_pastur(mp: &MarchenkoPastur, n: usize) -> Self {
        let (lo, hi) = mp.support();
        let (c, r) = ((hi + lo) / 2.0, (hi - lo) / 2.0);
        let (x, w) = gauss_legendre(n);
        let half_pi = std::f64::consts::FRAC_PI_2;
        let mut nodes = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for (xi, wi) in x.iter().zip(&w) {
            let theta = half_pi * (xi + 1.0);
            let t = c + r * theta.cos();
            let s = theta.sin();
            let density = r * r * s * s / (2.0 * std::f64::consts::PI * mp.var * mp.gamma * t);
            nodes.push(t);
            weights.push(half_pi * wi * density);
        }
        let mass = mp.point_mass_at_zero();
        let atoms = if mass > 0.0 { vec![(0.0, mass)] } else { Vec::new() };
        QuadratureMeasure { nodes, weights, atoms }
    }

    /// The point mass `delta_c`.
    pub fn atom(c: f64) -> Self {
        QuadratureMeasure {
            nodes: Vec::new(),
            weights: Vec::new(),
            atoms: vec![(c, 1.0)],
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum::<f64>() + self.atoms.iter().map(|a| a.1).sum::<f64>()
    }

    /// `sum_t w_t f(t)` over nodes and atoms.
    pub fn integrate(&self, mut f: impl FnMut(f64) -> C64) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for (t, w) in self.nodes.iter().zip(&self.weights) {
            acc += f(*t) * *w;
        }
        for (t, m) in &self.atoms {
            acc += f(*t) * *m;
        }
        acc
    }

    pub fn len(&self) -> usize {
        self.nodes.len() + self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
