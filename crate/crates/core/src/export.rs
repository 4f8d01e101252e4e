//! CSV writers for trajectories, risk reports, densities and limit reports, with
//! optional `#`-prefixed provenance lines ahead of the header.

use std::io::Write;

use serde_json::{json, Value};

use crate::asymptotics::LimitReport;
use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::risk::RiskReport;
use crate::spectrum::SpectralDensity;

/// Where a data file comes from; written as comment lines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub preset: String,
    pub caption_ref: String,
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

fn num(x: f64) -> String {
    // Shortest round-trip form; stable across runs.
    format!("{x}")
}

/// Writes `header` and `rows` after the provenance lines; returns the data row count.
pub fn write_table<W: Write>(
    mut w: W,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
    provenance: Option<&Provenance>,
) -> Result<usize> {
    if let Some(p) = provenance {
        writeln!(w, "# preset: {}", p.preset)?;
        writeln!(w, "# caption_ref: {}", p.caption_ref)?;
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header)?;
    let mut count = 0;
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::InvalidInput(format!(
                "row has {} fields, header has {}",
                row.len(),
                header.len()
            )));
        }
        out.write_record(&row)?;
        count += 1;
    }
    out.flush()?;
    Ok(count)
}

/// One row per epoch and trajectory: `epoch, method, alpha, B, seed, err_l2, risk`.
/// `risks[i]`, when given, fills the risk column of `trajectories[i]`.
pub fn write_trajectories<W: Write>(
    w: W,
    trajectories: &[&Trajectory],
    risks: Option<&[Vec<f64>]>,
    provenance: Option<&Provenance>,
) -> Result<usize> {
    if let Some(r) = risks {
        if r.len() != trajectories.len() {
            return Err(Error::InvalidInput("one risk series per trajectory".into()));
        }
    }
    let mut rows = Vec::new();
    for (i, t) in trajectories.iter().enumerate() {
        for (k, e) in t.errors.iter().enumerate() {
            let risk = risks.and_then(|r| r[i].get(k)).map(|&v| num(v)).unwrap_or_default();
            rows.push(vec![
                k.to_string(),
                t.method.name().to_string(),
                num(t.alpha),
                t.b_count.to_string(),
                t.seed.to_string(),
                num(*e),
                risk,
            ]);
        }
    }
    write_table(w, &["epoch", "method", "alpha", "B", "seed", "err_l2", "risk"], rows, provenance)
}

/// `epoch, bias_frozen, bias_decaying, variance, total, r_minus, r_plus`; the bound
/// columns are empty when the report carries none.
pub fn write_risk_report<W: Write>(w: W, report: &RiskReport, provenance: Option<&Provenance>) -> Result<usize> {
    let rows = report.epochs.iter().enumerate().map(|(k, r)| {
        let (lo, hi) = match report.bounds.as_ref().and_then(|b| b.get(k)) {
            Some(&(lo, hi)) => (num(lo), num(hi)),
            None => (String::new(), String::new()),
        };
        vec![
            k.to_string(),
            num(r.bias_frozen),
            num(r.bias_decaying),
            num(r.variance),
            num(r.total),
            lo,
            hi,
        ]
    });
    write_table(
        w,
        &["epoch", "bias_frozen", "bias_decaying", "variance", "total", "r_minus", "r_plus"],
        rows.collect::<Vec<_>>(),
        provenance,
    )
}

/// `x, f`.
pub fn write_density<W: Write>(w: W, density: &SpectralDensity, provenance: Option<&Provenance>) -> Result<usize> {
    let rows = density.grid.iter().zip(&density.density).map(|(x, f)| vec![num(*x), num(*f)]);
    write_table(w, &["x", "f"], rows.collect::<Vec<_>>(), provenance)
}

/// Sidecar metadata for a density file.
pub fn density_sidecar(density: &SpectralDensity) -> Value {
    let hist: Vec<Value> = density
        .iteration_histogram()
        .into_iter()
        .map(|(lo, count)| json!({ "iterations_from": lo, "points": count }))
        .collect();
    json!({
        "gamma": density.gamma,
        "alpha": density.alpha,
        "epsilon": density.epsilon,
        "point_mass": density.point_mass_at_zero,
        "mass_check": {
            "integral": density.integral(),
            "total": density.mass,
        },
        "grid_points": density.grid.len(),
        "iterations_histogram": hist,
    })
}

/// `n, seed, error_norm`.
pub fn write_limit_report<W: Write>(w: W, report: &LimitReport, provenance: Option<&Provenance>) -> Result<usize> {
    let rows = report
        .samples
        .iter()
        .map(|s| vec![s.n.to_string(), s.seed.to_string(), num(s.error_norm)]);
    write_table(w, &["n", "seed", "error_norm"], rows.collect::<Vec<_>>(), provenance)
}

pub fn limit_summary(report: &LimitReport) -> Value {
    json!({
        "B": report.b_count,
        "alpha": report.alpha,
        "mean_errors": report.mean_errors,
        "mean_variant_errors": report.mean_variant_errors,
        "slope": report.slope,
        "discrimination_ratio": report.discrimination_ratio(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::simulate_full_batch;
    use crate::problem::{generate_gaussian, BetaSpec};
    use crate::risk::risk_exact_full_batch;

    fn read(buf: &[u8]) -> (Vec<String>, Vec<csv::StringRecord>) {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(buf);
        let header = r.headers().unwrap().iter().map(String::from).collect();
        (header, r.records().map(|x| x.unwrap()).collect())
    }

    #[test]
    fn trajectory_and_risk_tables() {
        let problem = generate_gaussian(20, 5, None, 0.1, &BetaSpec::UnitSphere, 1).unwrap();
        let t = simulate_full_batch(&problem, 0.1, 4).unwrap();
        let report = risk_exact_full_batch(&problem, 0.1, 4).unwrap();
        let prov = Provenance {
            preset: "demo".into(),
            caption_ref: "none".into(),
        };
        let mut buf = Vec::new();
        let n = write_trajectories(&mut buf, &[&t], Some(&[report.totals()]), Some(&prov)).unwrap();
        assert_eq!(n, 5);
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# preset: demo\n# caption_ref: none\nepoch,method,"));
        let (h, rows) = read(&buf);
        assert_eq!(h, ["epoch", "method", "alpha", "B", "seed", "err_l2", "risk"]);
        assert_eq!(rows[3][5].parse::<f64>().unwrap(), t.errors[3]);
        assert_eq!(rows[2][6].parse::<f64>().unwrap(), report.epochs[2].total);

        let mut buf = Vec::new();
        assert_eq!(write_risk_report(&mut buf, &report, None).unwrap(), 5);
        let (h, rows) = read(&buf);
        assert_eq!(h.len(), 7);
        assert_eq!(&rows[0][5], "");
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let rows = vec![vec!["1".to_string()]];
        assert!(write_table(Vec::new(), &["a", "b"], rows, None).is_err());
    }
}
