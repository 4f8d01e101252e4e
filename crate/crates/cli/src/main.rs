//! `reshuffle`: command-line harness for the reshuffling dynamics library.

mod artifacts;
mod commands;
mod config;
mod presets;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use reshuffle::asymptotics::verify_limit;
use reshuffle::export::{limit_summary, write_limit_report, write_table};
use reshuffle::reshuffle::{pi_all, pi_closed_form, pi_enumerate, pi_monte_carlo};
use reshuffle::spectrum::OperatorCauchyState;
use reshuffle::{generate_gaussian, partition, Error, RegressionProblem};

use artifacts::Artifacts;
use commands::{exact_mean, exact_risk, identity, limit_comparison, risk_series, write_densities};
use config::{BetaKind, ExperimentConfig, Sampling};
use presets::PresetName;

#[derive(Parser, Debug)]
#[command(name = "reshuffle", version, about = "Random-reshuffling gradient descent experiments")]
struct Cli {
    /// JSON experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run a frozen preset.
    #[arg(long, global = true, value_enum)]
    preset: Option<PresetName>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the data seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args, Debug, Clone)]
struct ProblemArgs {
    /// Saved problem file; overrides the generation flags.
    #[arg(long)]
    problem: Option<PathBuf>,
    /// Default divisible by every B up to 6 and by 8.
    #[arg(long, default_value_t = 240)]
    n: usize,
    #[arg(long, default_value_t = 50)]
    p: usize,
    #[arg(long, default_value_t = 0.0)]
    sigma2: f64,
    #[arg(long, value_enum, default_value_t = BetaKind::UnitSphere)]
    beta: BetaKind,
    /// Also save the problem used to this path.
    #[arg(long)]
    save_problem: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long = "B", default_value_t = 2)]
    b_count: usize,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum PiRoute {
    Enumerate,
    ClosedForm,
    MonteCarlo,
    Both,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Empirical trajectories.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 1)]
        trials: usize,
        #[arg(long, value_enum, default_value_t = Sampling::Reshuffle)]
        sampling: Sampling,
    },
    /// Exact mean iterates with their risk.
    Exact {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Exact risk decomposition.
    Risk {
        #[command(flatten)]
        run: RunArgs,
        /// Add the two-batch bounds (B = 2 only).
        #[arg(long)]
        bounds: bool,
    },
    /// Permutation-averaged modifiers.
    Pi {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long = "B", default_value_t = 3)]
        b_count: usize,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long, value_enum, default_value_t = PiRoute::ClosedForm)]
        route: PiRoute,
        #[arg(long, default_value_t = 10_000)]
        mc_trials: usize,
    },
    /// Limiting two-batch spectrum against the full-batch law.
    Spectrum {
        #[arg(long, default_value_t = 1.5)]
        gamma: f64,
        #[arg(long, default_value_t = 0.2)]
        alpha: f64,
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Large-n convergence of the cross-covariance and limit-vector comparison.
    Limits {
        #[arg(long = "B", default_value_t = 2)]
        b_count: usize,
        #[arg(long, default_value_t = 0.2)]
        alpha: f64,
        #[arg(long, default_value_t = 20)]
        p: usize,
        #[arg(long, value_delimiter = ',', default_value = "200,400,800,1600")]
        n_schedule: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        seeds: u64,
    },
    /// Run a frozen preset.
    Preset {
        #[arg(value_enum)]
        name: PresetName,
        /// Trials for averaged presets.
        #[arg(long)]
        trials: Option<usize>,
    },
}

enum Failure {
    Config(String),
    Numeric(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Numeric(e)
    }
}

fn load_problem(a: &ProblemArgs, seed: u64) -> Result<RegressionProblem, Error> {
    let pr = match &a.problem {
        Some(path) => RegressionProblem::load(path)?,
        None => generate_gaussian(a.n, a.p, None, a.sigma2, &a.beta.spec(), seed)?,
    };
    if let Some(path) = &a.save_problem {
        pr.save(path)?;
    }
    Ok(pr)
}

fn run_config(cfg: &ExperimentConfig, cli: &Cli) -> Result<(), Failure> {
    let out = cfg.output.as_ref().map(PathBuf::from).unwrap_or_else(|| cli.out.clone());
    if let Some(name) = cfg.preset {
        let mut art = Artifacts::new(&out, Some(name.provenance()), cli.verbose)?;
        presets::run(name, cli.seed, cfg.trials, &mut art)?;
        art.finish()?;
        return Ok(());
    }
    let (Some(spec), Some(methods)) = (&cfg.problem, &cfg.methods) else {
        unreachable!("validated config");
    };
    let mut spec = spec.clone();
    if let Some(s) = cli.seed {
        spec.seed = s;
    }
    let problem = commands::make_problem(&spec)?;
    let mut art = Artifacts::new(&out, None, cli.verbose)?;
    for (i, m) in methods.iter().enumerate() {
        let stem = format!("{}_{i}_{:?}_B{}", cfg.name, m.kind, m.b_count).to_lowercase();
        commands::run_method(&problem, m, spec.seed, &mut art, &stem)?;
    }
    art.finish()?;
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        let cfg = config::parse(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        return run_config(&cfg, cli);
    }
    let seed = cli.seed.unwrap_or(0);
    let Some(command) = &cli.command else {
        let Some(name) = cli.preset else {
            return Err(Failure::Config("nothing to do: give a subcommand, --preset or --config".into()));
        };
        let mut art = Artifacts::new(&cli.out, Some(name.provenance()), cli.verbose)?;
        presets::run(name, cli.seed, None, &mut art)?;
        art.finish()?;
        return Ok(());
    };
    let prov = match command {
        Command::Preset { name, .. } => Some(name.provenance()),
        _ => None,
    };
    let mut art = Artifacts::new(&cli.out, prov, cli.verbose)?;
    match command {
        Command::Simulate { run, trials, sampling } => {
            let pr = load_problem(&run.problem, seed)?;
            let m = config::MethodSpec {
                kind: config::MethodKind::Simulate,
                b_count: run.b_count,
                alpha: run.alpha,
                epochs: run.epochs,
                trials: *trials,
                sampling: *sampling,
                bounds: false,
            };
            commands::run_method(&pr, &m, seed, &mut art, "simulate")?;
        }
        Command::Exact { run } => {
            let pr = load_problem(&run.problem, seed)?;
            let t = exact_mean(&pr, run.b_count, run.alpha, run.epochs)?;
            let risk = risk_series(&t, &pr);
            art.table("exact.csv", |w, p| reshuffle::export::write_trajectories(w, &[&t], Some(&[risk]), p))?;
            println!("final error {:.6e}", t.errors.last().copied().unwrap_or(f64::NAN));
        }
        Command::Risk { run, bounds } => {
            let pr = load_problem(&run.problem, seed)?;
            let report = exact_risk(&pr, run.b_count, run.alpha, run.epochs, *bounds)?;
            art.table("risk.csv", |w, p| reshuffle::export::write_risk_report(w, &report, p))?;
            if let Some(l) = &report.limit {
                println!("limit risk {:.6e}", l.total);
            }
        }
        Command::Pi {
            problem,
            b_count,
            alpha,
            route,
            mc_trials,
        } => {
            let pr = load_problem(problem, seed)?;
            let parts = partition(&pr, *b_count)?;
            let pis = match route {
                PiRoute::Enumerate => pi_all(&parts, *alpha, reshuffle::Route::Enumerate)?,
                PiRoute::ClosedForm => pi_all(&parts, *alpha, reshuffle::Route::ClosedForm)?,
                PiRoute::MonteCarlo => {
                    let mut out = Vec::new();
                    let mut worst = 0.0f64;
                    for b in 0..*b_count {
                        let est = pi_monte_carlo(&parts, *alpha, b, *mc_trials, seed)?;
                        worst = worst.max(est.std_err.amax());
                        out.push(est.mean);
                    }
                    println!("max standard error {worst:.3e}");
                    out
                }
                PiRoute::Both => {
                    let mut worst = 0.0f64;
                    let mut out = Vec::new();
                    for b in 0..*b_count {
                        let e = pi_enumerate(&parts, *alpha, b)?;
                        let c = pi_closed_form(&parts, *alpha, b)?;
                        worst = worst.max((&e - &c).amax());
                        out.push(c);
                    }
                    println!("max discrepancy {worst:.3e}");
                    art.json("pi_discrepancy.json", &json!({ "B": b_count, "alpha": alpha, "max_discrepancy": worst }))?;
                    out
                }
            };
            let p = pr.p();
            let rows = pis.iter().enumerate().flat_map(|(b, m)| {
                (0..p).map(move |i| {
                    let mut row = vec![b.to_string(), i.to_string()];
                    row.extend((0..p).map(|j| format!("{}", m[(i, j)])));
                    row
                })
            });
            let mut header = vec!["batch".to_string(), "row".to_string()];
            header.extend((0..p).map(|j| format!("c{j}")));
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            art.table("pi.csv", |w, prov| write_table(w, &header, rows, prov))?;
        }
        Command::Spectrum { gamma, alpha, epsilon } => {
            let mut state = OperatorCauchyState::default();
            if let Some(e) = epsilon {
                state.epsilon = *e;
            }
            let (two, full) = write_densities(&mut art, "spectrum", *gamma, *alpha, &state)?;
            println!(
                "point mass at zero: two-batch {:.6}, full batch {:.6}; total mass {:.6}",
                two.point_mass_at_zero, full.point_mass_at_zero, two.mass
            );
        }
        Command::Limits {
            b_count,
            alpha,
            p,
            n_schedule,
            seeds,
        } => {
            let seed_list: Vec<u64> = (0..*seeds).map(|s| seed + s).collect();
            let report = verify_limit(*b_count, *alpha, &identity(*p), n_schedule, &seed_list)?;
            art.table("limits.csv", |w, prov| write_limit_report(w, &report, prov))?;
            art.json("limits_summary.json", &limit_summary(&report))?;
            let n = n_schedule.last().copied().unwrap_or(200);
            let n = n - n % b_count;
            let pr = generate_gaussian(n, *p, None, 0.25, &reshuffle::BetaSpec::UnitSphere, seed)?;
            art.json("limit_vectors.json", &limit_comparison(&pr, *b_count, *alpha / *b_count as f64)?)?;
            println!("log-log slope {:.3}", report.slope);
        }
        Command::Preset { name, trials } => presets::run(*name, cli.seed, *trials, &mut art)?,
    }
    art.finish()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(w) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Numeric(Error::Io(msg))) => {
            eprintln!("i/o error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Numeric(e @ (Error::InvalidInput(_) | Error::CapacityExceeded { .. }))) => {
            eprintln!("{}: {e}", e.name());
            ExitCode::from(2)
        }
        Err(Failure::Numeric(e)) => {
            eprintln!("{}: {e}", e.name());
            ExitCode::from(3)
        }
    }
}
