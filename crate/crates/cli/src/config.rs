//! Strict JSON experiment configuration.

use serde::Deserialize;

use reshuffle::kernels::SymmetricMatrix;
use reshuffle::BetaSpec;

use crate::presets::PresetName;

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub problem: Option<ProblemSpec>,
    #[serde(default)]
    pub methods: Option<Vec<MethodSpec>>,
    #[serde(default)]
    pub output: Option<String>,
    #[serde(default)]
    pub preset: Option<PresetName>,
    /// Trial count for presets that average over simulations.
    #[serde(default)]
    pub trials: Option<usize>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub n: usize,
    pub p: usize,
    #[serde(default)]
    pub sigma: SigmaSpec,
    #[serde(default)]
    pub sigma2: f64,
    #[serde(default)]
    pub beta: BetaKind,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SigmaSpec {
    #[default]
    Identity,
    /// Diagonal entries.
    Diagonal(Vec<f64>),
    /// `Sigma_ij = rho^|i - j|`.
    Ar1(f64),
}

impl SigmaSpec {
    pub fn build(&self, p: usize) -> Result<SymmetricMatrix, String> {
        match self {
            SigmaSpec::Identity => Ok(SymmetricMatrix::identity(p)),
            SigmaSpec::Diagonal(d) => {
                if d.len() != p || d.iter().any(|&x| !(x >= 0.0)) {
                    return Err(format!("diagonal must have {p} nonnegative entries"));
                }
                Ok(SymmetricMatrix::symmetrize(nalgebra::DMatrix::from_diagonal(
                    &nalgebra::DVector::from_column_slice(d),
                )))
            }
            SigmaSpec::Ar1(rho) => {
                if !(rho.abs() < 1.0) {
                    return Err("ar1 needs |rho| < 1".into());
                }
                Ok(SymmetricMatrix::symmetrize(nalgebra::DMatrix::from_fn(p, p, |i, j| {
                    rho.powi((i as i32 - j as i32).abs())
                })))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BetaKind {
    #[default]
    UnitSphere,
    Gaussian,
}

impl BetaKind {
    pub fn spec(self) -> BetaSpec {
        match self {
            BetaKind::UnitSphere => BetaSpec::UnitSphere,
            BetaKind::Gaussian => BetaSpec::Gaussian,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Simulate,
    Exact,
    Risk,
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    #[default]
    Reshuffle,
    WithReplacement,
    FullBatch,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub kind: MethodKind,
    #[serde(rename = "B")]
    pub b_count: usize,
    pub alpha: f64,
    pub epochs: usize,
    #[serde(default = "one")]
    pub trials: usize,
    #[serde(default)]
    pub sampling: Sampling,
    /// Two-batch risk bounds alongside the exact risk.
    #[serde(default)]
    pub bounds: bool,
}

fn one() -> usize {
    1
}

/// A configuration problem with its 1-based position in the source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}, column {}: {}", self.line, self.column, self.message)
    }
}

/// Line and column of the first occurrence of `"key"`, or the top of the document.
fn locate(text: &str, key: &str) -> (usize, usize) {
    let needle = format!("\"{key}\"");
    for (i, line) in text.lines().enumerate() {
        if let Some(c) = line.find(&needle) {
            return (i + 1, c + 1);
        }
    }
    (1, 1)
}

fn semantic(text: &str, key: &str, message: impl Into<String>) -> ConfigError {
    let (line, column) = locate(text, key);
    ConfigError {
        line,
        column,
        message: message.into(),
    }
}

pub fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| ConfigError {
        line: e.line().max(1),
        column: e.column().max(1),
        message: e.to_string(),
    })?;
    validate(&cfg, text)?;
    Ok(cfg)
}

fn validate(cfg: &ExperimentConfig, text: &str) -> Result<(), ConfigError> {
    match (&cfg.preset, &cfg.problem, &cfg.methods) {
        (Some(_), None, None) => {}
        (Some(_), _, _) => {
            return Err(semantic(text, "preset", "preset parameters are fixed; drop \"problem\" and \"methods\""));
        }
        (None, Some(_), Some(_)) => {}
        (None, _, _) => return Err(semantic(text, "name", "need either \"preset\" or both \"problem\" and \"methods\"")),
    }
    if cfg.trials == Some(0) {
        return Err(semantic(text, "trials", "trials must be at least 1"));
    }
    if let Some(p) = &cfg.problem {
        if p.n == 0 || p.p == 0 {
            return Err(semantic(text, "problem", "n and p must be positive"));
        }
        if !(p.sigma2 >= 0.0 && p.sigma2.is_finite()) {
            return Err(semantic(text, "sigma2", "sigma2 must be finite and >= 0"));
        }
        p.sigma.build(p.p).map_err(|m| semantic(text, "sigma", m))?;
    }
    for m in cfg.methods.iter().flatten() {
        if m.b_count == 0 {
            return Err(semantic(text, "B", "B must be at least 1"));
        }
        if let Some(p) = &cfg.problem {
            if p.n % m.b_count != 0 {
                return Err(semantic(text, "B", format!("B = {} does not divide n = {}", m.b_count, p.n)));
            }
        }
        if !(m.alpha >= 0.0 && m.alpha.is_finite()) {
            return Err(semantic(text, "alpha", "alpha must be finite and >= 0"));
        }
        if m.trials == 0 {
            return Err(semantic(text, "trials", "trials must be at least 1"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_full_config() {
        let text = r#"{
  "name": "demo",
  "problem": {"n": 20, "p": 5, "sigma": {"ar1": 0.3}, "sigma2": 0.1, "beta": "gaussian", "seed": 4},
  "methods": [{"kind": "exact", "B": 2, "alpha": 0.1, "epochs": 5},
              {"kind": "simulate", "B": 4, "alpha": 0.1, "epochs": 5, "trials": 3, "sampling": "with_replacement"}]
}"#;
        let cfg = parse(text).unwrap();
        assert_eq!(cfg.methods.as_ref().unwrap()[1].sampling, Sampling::WithReplacement);
        assert_eq!(cfg.problem.unwrap().sigma, SigmaSpec::Ar1(0.3));
    }

    #[test]
    fn unknown_keys_report_their_line() {
        let text = "{\n  \"name\": \"x\",\n  \"preset\": \"fig1_under\",\n  \"colour\": 3\n}";
        let err = parse(text).unwrap_err();
        assert_eq!(err.line, 4);
        assert!(err.message.contains("colour"));
    }

    #[test]
    fn semantic_errors_point_at_the_key() {
        let text = "{\n  \"name\": \"x\",\n  \"problem\": {\"n\": 10, \"p\": 3},\n  \"methods\": [\n    {\"kind\": \"risk\", \"B\": 3, \"alpha\": 0.1, \"epochs\": 2}\n  ]\n}";
        let err = parse(text).unwrap_err();
        assert_eq!(err.line, 5);
        assert!(err.message.contains("does not divide"));
        let frozen = "{\"name\": \"x\", \"preset\": \"fig1_over\", \"problem\": {\"n\": 4, \"p\": 2}}";
        assert!(parse(frozen).unwrap_err().message.contains("fixed"));
    }
}
