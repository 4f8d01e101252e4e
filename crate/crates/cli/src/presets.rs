//! Frozen parameter sets for the published figures.

use rayon::prelude::*;
use serde::Deserialize;
use serde_json::json;

use reshuffle::dynamics::{
    exact_mean_full_batch, exact_mean_reshuffle_with, simulate_full_batch, simulate_reshuffle, Hypothesis, Trajectory,
};
use reshuffle::export::{write_table, write_trajectories, Provenance};
use reshuffle::spectrum::{OperatorCauchyState, SpectralDensity};
use reshuffle::{assemble, generate_gaussian, partition, BetaSpec, RegressionProblem, Result, Route};

use crate::artifacts::Artifacts;
use crate::commands::{exact_risk, risk_series, write_densities};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum PresetName {
    #[serde(rename = "fig1_under")]
    #[value(name = "fig1_under")]
    Fig1Under,
    #[serde(rename = "fig1_over")]
    #[value(name = "fig1_over")]
    Fig1Over,
    #[serde(rename = "appD_diverge")]
    #[value(name = "appD_diverge")]
    AppDDiverge,
    #[serde(rename = "appD_traj_over")]
    #[value(name = "appD_traj_over")]
    AppDTrajOver,
    #[serde(rename = "appD_traj_under")]
    #[value(name = "appD_traj_under")]
    AppDTrajUnder,
}

impl PresetName {
    pub fn as_str(self) -> &'static str {
        match self {
            PresetName::Fig1Under => "fig1_under",
            PresetName::Fig1Over => "fig1_over",
            PresetName::AppDDiverge => "appD_diverge",
            PresetName::AppDTrajOver => "appD_traj_over",
            PresetName::AppDTrajUnder => "appD_traj_under",
        }
    }

    pub fn caption_ref(self) -> &'static str {
        match self {
            PresetName::Fig1Under => "Figure 1a",
            PresetName::Fig1Over => "Figure 1b",
            PresetName::AppDDiverge => "Appendix D.1 divergence figure",
            PresetName::AppDTrajOver => "Figure 2",
            PresetName::AppDTrajUnder => "Figure 3",
        }
    }

    pub fn provenance(self) -> Provenance {
        Provenance {
            preset: self.as_str().to_string(),
            caption_ref: self.caption_ref().to_string(),
        }
    }

    /// Seed used when none is given.
    pub fn default_seed(self) -> u64 {
        match self {
            PresetName::AppDDiverge => DIVERGE_SEED,
            _ => 0,
        }
    }
}

pub const DEFAULT_TRIALS: usize = 100;

/// Data seed of the divergence demo.
pub const DIVERGE_SEED: u64 = 2;

struct Spectra {
    n: usize,
    p: usize,
    alpha: f64,
}

struct Dynamics {
    n: usize,
    p: usize,
    sigma: f64,
    alpha: f64,
    batches: &'static [usize],
    epochs: usize,
}

pub fn run(name: PresetName, seed: Option<u64>, trials: Option<usize>, art: &mut Artifacts) -> Result<()> {
    let seed = seed.unwrap_or(name.default_seed());
    match name {
        PresetName::Fig1Under => spectra(name, Spectra { n: 4000, p: 1000, alpha: 0.4 }, seed, art),
        PresetName::Fig1Over => spectra(name, Spectra { n: 1000, p: 1500, alpha: 0.2 }, seed, art),
        PresetName::AppDDiverge => diverge(name, seed, art),
        PresetName::AppDTrajOver => dynamics(
            name,
            Dynamics {
                n: 1000,
                p: 1500,
                sigma: 0.5,
                alpha: 0.2,
                batches: &[1, 2, 4],
                epochs: 300,
            },
            seed,
            trials.unwrap_or(DEFAULT_TRIALS),
            art,
        ),
        PresetName::AppDTrajUnder => dynamics(
            name,
            Dynamics {
                n: 4000,
                p: 1000,
                sigma: 1.0,
                alpha: 0.4,
                batches: &[1, 2, 4],
                epochs: 100,
            },
            seed,
            trials.unwrap_or(DEFAULT_TRIALS),
            art,
        ),
    }
}

const ZERO_TOL: f64 = 1e-9;

fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0.0; bins];
    for &v in values.iter().filter(|v| v.abs() >= ZERO_TOL) {
        let i = ((v - lo) / width).floor();
        if i >= 0.0 && (i as usize) < bins {
            counts[i as usize] += 1.0;
        }
    }
    counts.iter().map(|c| c / (values.len() as f64 * width)).collect()
}

fn spectra(name: PresetName, s: Spectra, seed: u64, art: &mut Artifacts) -> Result<()> {
    let gamma = s.p as f64 / s.n as f64;
    let problem = generate_gaussian(s.n, s.p, None, 0.0, &BetaSpec::UnitSphere, seed)?;
    let full: Vec<f64> = problem.sample_covariance().eigenvalues().iter().map(|l| s.alpha * l).collect();
    let ops = assemble(&partition(&problem, 2)?, s.alpha / 2.0, Route::ClosedForm)?;
    let two: Vec<f64> = ops.z().eigenvalues().iter().map(|l| s.alpha * l).collect();

    let stem = name.as_str();
    let (d_two, d_full) = write_densities(art, &format!("{stem}_density"), gamma, s.alpha, &OperatorCauchyState::default())?;
    let (lo, hi) = (d_two.grid[0], *d_two.grid.last().expect("grid"));
    let bins = 100;
    let h_full = histogram(&full, lo, hi, bins);
    let h_two = histogram(&two, lo, hi, bins);
    let width = (hi - lo) / bins as f64;
    let rows: Vec<Vec<String>> = (0..bins)
        .map(|i| {
            vec![
                format!("{}", lo + i as f64 * width),
                format!("{}", lo + (i + 1) as f64 * width),
                format!("{}", h_full[i]),
                format!("{}", h_two[i]),
            ]
        })
        .collect();
    art.table(&format!("{stem}_empirical_histogram.csv"), |w, prov| {
        write_table(w, &["bin_lo", "bin_hi", "full_batch", "two_batch"], rows, prov)
    })?;
    let zero_fraction = |v: &[f64]| v.iter().filter(|x| x.abs() < ZERO_TOL).count() as f64 / v.len() as f64;
    let ks = |d: &SpectralDensity, v: &[f64]| d.ks_distance(v, ZERO_TOL);
    art.json(
        &format!("{stem}_summary.json"),
        &json!({
            "n": s.n, "p": s.p, "gamma": gamma, "alpha": s.alpha, "seed": seed,
            "ks_two_batch": ks(&d_two, &two),
            "ks_full_batch": ks(&d_full, &full),
            "point_mass_two_batch": d_two.point_mass_at_zero,
            "point_mass_full_batch": d_full.point_mass_at_zero,
            "empirical_zero_fraction_two_batch": zero_fraction(&two),
            "empirical_zero_fraction_full_batch": zero_fraction(&full),
        }),
    )
}

/// Full batch at step `alpha` against two batches, under both readings of the
/// two-batch step: `alpha / 2` per batch and `alpha` per batch.
fn diverge(name: PresetName, seed: u64, art: &mut Artifacts) -> Result<()> {
    let (n, p, alpha, epochs) = (1000, 1500, 0.5, 100);
    let problem = generate_gaussian(n, p, None, 1.0, &BetaSpec::Gaussian, seed)?;
    let parts = partition(&problem, 2)?;
    let mut runs: Vec<Trajectory> = vec![
        simulate_full_batch(&problem, alpha, epochs)?,
        exact_mean_full_batch(&problem, alpha, epochs)?,
    ];
    let mut readings = Vec::new();
    for step in [alpha / 2.0, alpha] {
        let ops = assemble(&parts, step, Route::ClosedForm)?;
        let mean = exact_mean_reshuffle_with(&problem, &ops, epochs, Hypothesis::Acknowledge)?;
        let sim = simulate_reshuffle(&problem, &parts, step, epochs, seed)?;
        readings.push(json!({
            "per_batch_step": step,
            "restricted_norm": ops.restricted_norm(),
            "hypothesis_holds": ops.hypothesis_holds(),
            "exact_mean_final_error": mean.errors[epochs],
            "empirical_diverged_at": sim.diverged_at,
        }));
        runs.push(mean);
        runs.push(sim);
    }
    let w_eigs = problem.sample_covariance().eigenvalues();
    let full_norm = w_eigs.iter().map(|l| (1.0 - alpha * l).abs()).fold(0.0, f64::max);
    let risks: Vec<Vec<f64>> = runs.iter().map(|t| risk_series(t, &problem)).collect();
    let refs: Vec<&Trajectory> = runs.iter().collect();
    art.table(&format!("{}_trajectories.csv", name.as_str()), |w, prov| {
        write_trajectories(w, &refs, Some(&risks), prov)
    })?;
    art.json(
        &format!("{}_summary.json", name.as_str()),
        &json!({
            "n": n, "p": p, "alpha": alpha, "seed": seed, "epochs": epochs,
            "full_batch_norm": full_norm,
            "full_batch_diverged_at": runs[0].diverged_at,
            "full_batch_exact_final_error": runs[1].errors[epochs],
            "two_batch": readings,
        }),
    )
}

fn mean_runs(runs: &[(Vec<f64>, Vec<f64>)]) -> (Vec<f64>, Vec<f64>) {
    let len = runs[0].0.len();
    let m = runs.len() as f64;
    let avg = |f: &dyn Fn(&(Vec<f64>, Vec<f64>)) -> &Vec<f64>| {
        (0..len).map(|k| runs.iter().map(|r| f(r)[k]).sum::<f64>() / m).collect::<Vec<f64>>()
    };
    (avg(&|r| &r.0), avg(&|r| &r.1))
}

/// Exact risk curves for every `B` at step `alpha / B` plus trial averages with fresh
/// noise and shuffles per trial.
fn dynamics(name: PresetName, d: Dynamics, seed: u64, trials: usize, art: &mut Artifacts) -> Result<()> {
    let problem = generate_gaussian(d.n, d.p, None, d.sigma * d.sigma, &BetaSpec::UnitSphere, seed)?;
    let stem = name.as_str();
    let mut exact_totals = Vec::new();
    for &b in d.batches {
        let report = exact_risk(&problem, b, d.alpha / b as f64, d.epochs, false)?;
        art.table(&format!("{stem}_risk_B{b}.csv"), |w, prov| reshuffle::export::write_risk_report(w, &report, prov))?;
        exact_totals.push(report.totals());
    }

    let cells: Vec<(usize, u64)> = d.batches.iter().flat_map(|&b| (0..trials as u64).map(move |t| (b, t))).collect();
    let per_cell = cells
        .par_iter()
        .map(|&(b, t)| -> Result<(Vec<f64>, Vec<f64>)> {
            let pr: RegressionProblem = problem.with_resampled_noise(t)?;
            let step = d.alpha / b as f64;
            let traj = if b == 1 {
                simulate_full_batch(&pr, step, d.epochs)?
            } else {
                simulate_reshuffle(&pr, &partition(&pr, b)?, step, d.epochs, seed.wrapping_add(t))?
            };
            Ok((traj.errors.clone(), risk_series(&traj, &pr)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (i, &b) in d.batches.iter().enumerate() {
        let (err, risk) = mean_runs(&per_cell[i * trials..(i + 1) * trials]);
        let method = if b == 1 { "full_batch" } else { "reshuffle_empirical" };
        for k in 0..=d.epochs {
            rows.push(vec![
                k.to_string(),
                method.to_string(),
                format!("{}", d.alpha / b as f64),
                b.to_string(),
                seed.to_string(),
                format!("{}", err[k]),
                format!("{}", risk[k]),
            ]);
        }
    }
    art.table(&format!("{stem}_empirical.csv"), |w, prov| {
        write_table(w, &["epoch", "method", "alpha", "B", "seed", "err_l2", "risk"], rows, prov)
    })?;
    let gaps: Vec<f64> = exact_totals[1..]
        .iter()
        .map(|c| c.iter().zip(&exact_totals[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
        .collect();
    let limits: Vec<f64> = exact_totals.iter().map(|c| *c.last().expect("epochs")).collect();
    art.json(
        &format!("{stem}_summary.json"),
        &json!({
            "n": d.n, "p": d.p, "sigma": d.sigma, "alpha": d.alpha, "B": d.batches,
            "epochs": d.epochs, "trials": trials, "seed": seed,
            "max_gap_to_full_batch": gaps,
            "final_exact_risk": limits,
        }),
    )
}
