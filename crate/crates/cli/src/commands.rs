//! Library calls behind the subcommands, config runs and presets.

use rayon::prelude::*;
use serde_json::json;

use reshuffle::dynamics::{
    exact_mean_full_batch, exact_mean_reshuffle, limit_vector, simulate_full_batch, simulate_reshuffle,
    simulate_with_replacement, Trajectory,
};
use reshuffle::export::{self, write_risk_report, write_trajectories};
use reshuffle::kernels::{Mat, SymmetricMatrix};
use reshuffle::risk::{risk_bounds_twobatch, risk_exact_full_batch, risk_exact_reshuffle, RiskReport};
use reshuffle::spectrum::{spectral_density, GridSpec, MarchenkoPastur, OperatorCauchyState, SpectralDensity};
use reshuffle::{assemble, generate_gaussian, partition, Error, RegressionProblem, Result, Route};

use crate::artifacts::Artifacts;
use crate::config::{MethodKind, MethodSpec, ProblemSpec, Sampling};

pub fn make_problem(spec: &ProblemSpec) -> Result<RegressionProblem> {
    let sigma = spec.sigma.build(spec.p).map_err(Error::InvalidInput)?;
    generate_gaussian(spec.n, spec.p, Some(&sigma), spec.sigma2, &spec.beta.spec(), spec.seed)
}

/// `(beta_k - beta*)^T Sigma (beta_k - beta*)` for every iterate.
pub fn risk_series(traj: &Trajectory, problem: &RegressionProblem) -> Vec<f64> {
    let p = problem.p();
    let identity = problem.sigma().as_mat() == &Mat::identity(p, p);
    traj.iterates
        .iter()
        .map(|b| {
            let e = b - problem.beta_star();
            if identity {
                e.norm_squared()
            } else {
                e.dot(&(problem.sigma().as_mat() * &e))
            }
        })
        .collect()
}

pub fn route_for(b_count: usize) -> Route {
    if b_count <= reshuffle::reshuffle::CLOSED_FORM_CAP {
        Route::ClosedForm
    } else {
        Route::MonteCarlo {
            trials: 10_000,
            seed: 0,
        }
    }
}

fn simulate_once(problem: &RegressionProblem, m: &MethodSpec, seed: u64) -> Result<Trajectory> {
    match m.sampling {
        Sampling::FullBatch => simulate_full_batch(problem, m.alpha, m.epochs),
        Sampling::Reshuffle => simulate_reshuffle(problem, &partition(problem, m.b_count)?, m.alpha, m.epochs, seed),
        Sampling::WithReplacement => {
            simulate_with_replacement(problem, &partition(problem, m.b_count)?, m.alpha, m.epochs, seed)
        }
    }
}

/// Exact risk report: full batch for `B = 1`, reshuffling otherwise.
pub fn exact_risk(problem: &RegressionProblem, b_count: usize, alpha: f64, epochs: usize, bounds: bool) -> Result<RiskReport> {
    if b_count == 1 {
        return risk_exact_full_batch(problem, alpha, epochs);
    }
    let ops = assemble(&partition(problem, b_count)?, alpha, route_for(b_count))?;
    if bounds {
        risk_bounds_twobatch(problem, &ops, epochs)
    } else {
        risk_exact_reshuffle(problem, &ops, epochs)
    }
}

pub fn exact_mean(problem: &RegressionProblem, b_count: usize, alpha: f64, epochs: usize) -> Result<Trajectory> {
    if b_count == 1 {
        exact_mean_full_batch(problem, alpha, epochs)
    } else {
        let ops = assemble(&partition(problem, b_count)?, alpha, route_for(b_count))?;
        exact_mean_reshuffle(problem, &ops, epochs)
    }
}

/// Runs one method and writes `<stem>.csv`.
pub fn run_method(problem: &RegressionProblem, m: &MethodSpec, seed: u64, art: &mut Artifacts, stem: &str) -> Result<()> {
    let file = format!("{stem}.csv");
    match m.kind {
        MethodKind::Simulate => {
            let runs = (0..m.trials as u64)
                .into_par_iter()
                .map(|t| simulate_once(problem, m, seed.wrapping_add(t)))
                .collect::<Result<Vec<_>>>()?;
            let risks: Vec<Vec<f64>> = runs.iter().map(|t| risk_series(t, problem)).collect();
            let refs: Vec<&Trajectory> = runs.iter().collect();
            art.table(&file, |w, prov| write_trajectories(w, &refs, Some(&risks), prov))
        }
        MethodKind::Exact => {
            let t = exact_mean(problem, m.b_count, m.alpha, m.epochs)?;
            let risk = exact_risk(problem, m.b_count, m.alpha, m.epochs, false)?;
            art.table(&file, |w, prov| write_trajectories(w, &[&t], Some(&[risk.totals()]), prov))
        }
        MethodKind::Risk => {
            let report = exact_risk(problem, m.b_count, m.alpha, m.epochs, m.bounds)?;
            art.table(&file, |w, prov| write_risk_report(w, &report, prov))
        }
    }
}

/// Analytic MP density on the grid of `like`, with its zero atom.
pub fn mp_on_grid(mp: &MarchenkoPastur, like: &SpectralDensity) -> SpectralDensity {
    let density: Vec<f64> = like.grid.iter().map(|&x| mp.density(x)).collect();
    let mut out = SpectralDensity {
        grid: like.grid.clone(),
        density,
        point_mass_at_zero: mp.point_mass_at_zero(),
        gamma: mp.gamma,
        alpha: mp.var,
        epsilon: 0.0,
        mass: 0.0,
        iterations: vec![0; like.grid.len()],
    };
    out.mass = out.integral() + out.point_mass_at_zero;
    out
}

/// Two-batch density and the full-batch MP reference, written as
/// `<stem>_two_batch.csv` (+ `.json`) and `<stem>_full_batch.csv`.
pub fn write_densities(art: &mut Artifacts, stem: &str, gamma: f64, alpha: f64, state: &OperatorCauchyState) -> Result<(SpectralDensity, SpectralDensity)> {
    let two = spectral_density(gamma, alpha, &GridSpec::default(), state)?;
    let full = mp_on_grid(&MarchenkoPastur::new(gamma, alpha)?, &two);
    art.table(&format!("{stem}_two_batch.csv"), |w, prov| export::write_density(w, &two, prov))?;
    art.json(&format!("{stem}_two_batch.json"), &export::density_sidecar(&two))?;
    art.table(&format!("{stem}_full_batch.csv"), |w, prov| export::write_density(w, &full, prov))?;
    Ok((two, full))
}

/// Limit vectors of reshuffling and full batch on one problem.
pub fn limit_comparison(problem: &RegressionProblem, b_count: usize, alpha: f64) -> Result<serde_json::Value> {
    let ops = assemble(&partition(problem, b_count)?, alpha, route_for(b_count))?;
    let l = limit_vector(problem, &ops)?;
    Ok(json!({
        "B": b_count,
        "alpha": alpha,
        "reshuffle_converged": l.reshuffle.converged,
        "full_batch_converged": l.full_batch.converged,
        "reshuffle_restricted_radius": l.reshuffle.spectral_radius_restricted,
        "full_batch_restricted_radius": l.full_batch.spectral_radius_restricted,
        "limit_gap_l2": (&l.reshuffle.vector - &l.full_batch.vector).norm(),
    }))
}

pub fn identity(p: usize) -> SymmetricMatrix {
    SymmetricMatrix::identity(p)
}
