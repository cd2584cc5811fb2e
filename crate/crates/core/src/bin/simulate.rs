//! Config-driven simulation runner with direct subcommands for each
//! experiment recipe.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use randmart::harness::{
    run_experiment, write_json, ExperimentConfig, ExperimentKind, ThreadCount,
};
use randmart::martingales::{GeneratorKind, IidDist};
use randmart::quantities::GammaNormalization;
use randmart::ratefit::{fit_rate, RatePoint, RateSeries};

#[derive(Parser)]
#[command(
    name = "simulate",
    version,
    about = "Monte Carlo experiments on sphere-randomized martingale sums"
)]
struct Cli {
    /// JSON experiment config; used when no subcommand is given.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread count override.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Clone, Copy, ValueEnum)]
enum GenArg {
    Rademacher,
    Gaussian,
    TwoPoint,
    Arch,
}

#[derive(Args)]
struct GeneratorArgs {
    /// Martingale-difference generator.
    #[arg(long = "gen", value_enum, default_value = "arch")]
    generator: GenArg,
    /// ARCH recursion exponent (requires > 2).
    #[arg(long, default_value_t = 3.0)]
    gamma: f64,
    /// Two-point atom location (requires >= 1).
    #[arg(long, default_value_t = 2.0)]
    a: f64,
}

impl GeneratorArgs {
    fn kind(&self) -> GeneratorKind {
        match self.generator {
            GenArg::Rademacher => GeneratorKind::Iid {
                dist: IidDist::Rademacher,
            },
            GenArg::Gaussian => GeneratorKind::Iid {
                dist: IidDist::StandardGaussian,
            },
            GenArg::TwoPoint => GeneratorKind::Iid {
                dist: IidDist::TwoPointSymmetric { a: self.a },
            },
            GenArg::Arch => GeneratorKind::Arch { gamma: self.gamma },
        }
    }
}

#[derive(Args)]
struct CommonArgs {
    /// Row lengths to sweep (comma separated).
    #[arg(long = "n", value_delimiter = ',', required = true)]
    n_list: Vec<usize>,
    /// Outer sample count (theta draws).
    #[arg(long = "outer", default_value_t = 64)]
    outer: usize,
    /// Inner sample count (paths per theta / replications).
    #[arg(long = "m", default_value_t = 1_000_000)]
    inner: usize,
    /// DKW confidence level.
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the bound quantities and theorem bounds across n.
    Quantities {
        #[command(flatten)]
        generator: GeneratorArgs,
        #[command(flatten)]
        common: CommonArgs,
        /// Gamma normalization entering the fast-rate bound.
        #[arg(long, value_enum, default_value = "sum")]
        gamma_norm: GammaNormArg,
    },
    /// Estimate Kolmogorov distances (randomized by default).
    Distance {
        #[command(flatten)]
        generator: GeneratorArgs,
        #[command(flatten)]
        common: CommonArgs,
        /// Use the fixed 1/sqrt(n) weights instead of sphere draws.
        #[arg(long)]
        classical: bool,
        /// Log-power for the rate fit (default: 2 for randomized ARCH,
        /// else 0).
        #[arg(long)]
        q: Option<f64>,
    },
    /// Characteristic-function diagnostics: gap/bound ratios, truncation
    /// frequencies, the smoothing integral.
    CfCheck {
        #[command(flatten)]
        generator: GeneratorArgs,
        #[command(flatten)]
        common: CommonArgs,
        /// Smoothing window rule, e.g. "4*sqrt(log n)" or a constant > 1.
        #[arg(long, default_value = "4*sqrt(log n)")]
        t0_rule: String,
    },
    /// Gaussian-mixture inequality battery over built-in variance profiles.
    GaussmixCheck {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Fit a decay exponent to an (n, value, stderr) CSV.
    Ratefit {
        /// Input CSV with columns n, kappa_mean|value [, stderr_outer|stderr].
        #[arg(long)]
        input: PathBuf,
        /// Fixed log-power of the model C (log n)^q n^{-p}.
        #[arg(long)]
        q: f64,
        /// Optional output path for the fit JSON (stdout otherwise).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Sphere moment self-tests and stream independence checks.
    Selftest {
        /// Row lengths to check (comma separated).
        #[arg(long = "n", value_delimiter = ',', default_value = "10")]
        n_list: Vec<usize>,
        /// Draws per check.
        #[arg(long, default_value_t = 1_000_000)]
        draws: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum GammaNormArg {
    Sum,
    Mean,
}

#[allow(clippy::too_many_arguments)]
fn build_config(
    cli: &Cli,
    experiment: ExperimentKind,
    generator: GeneratorKind,
    n_list: Vec<usize>,
    outer: usize,
    inner: usize,
    delta: f64,
    t0_rule: String,
    fit_q: Option<f64>,
    gamma_normalization: GammaNormalization,
) -> ExperimentConfig {
    ExperimentConfig {
        experiment,
        generator,
        n_list,
        outer_samples: outer,
        inner_samples: inner,
        delta,
        t0_rule,
        master_seed: cli.seed.unwrap_or(1),
        threads: cli.threads.map(ThreadCount::Fixed).unwrap_or_default(),
        out_dir: cli.out.clone().unwrap_or_else(|| PathBuf::from("results")),
        fit_q,
        gamma_normalization,
    }
}

fn run(config: ExperimentConfig) -> randmart::Result<bool> {
    let record = run_experiment(&config)?;
    println!(
        "[{}] manifest: {}",
        record.experiment_id,
        record.manifest_path.display()
    );
    Ok(record.failures.is_empty())
}

fn run_ratefit(input: &PathBuf, q: f64, output: Option<&PathBuf>) -> randmart::Result<bool> {
    let text = std::fs::read_to_string(input)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| randmart::Error::InvalidArgument("empty CSV".into()))?;
    let columns: Vec<&str> = header.split(',').collect();
    let find = |names: &[&str]| {
        names
            .iter()
            .find_map(|name| columns.iter().position(|c| c == name))
    };
    let n_col = find(&["n"])
        .ok_or_else(|| randmart::Error::InvalidArgument("CSV needs an 'n' column".into()))?;
    let value_col = find(&["kappa_mean", "value"]).ok_or_else(|| {
        randmart::Error::InvalidArgument("CSV needs a 'kappa_mean' or 'value' column".into())
    })?;
    let stderr_col = find(&["stderr_outer", "stderr"]);
    let mut points = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        let parse = |idx: usize| -> randmart::Result<f64> {
            cells
                .get(idx)
                .and_then(|c| c.parse::<f64>().ok())
                .ok_or_else(|| {
                    randmart::Error::InvalidArgument(format!("bad CSV cell in line {line:?}"))
                })
        };
        points.push(RatePoint {
            n: parse(n_col)? as usize,
            value: parse(value_col)?,
            stderr: match stderr_col {
                Some(idx) => parse(idx)?,
                None => 0.0,
            },
        });
    }
    points.sort_by_key(|p| p.n);
    let series = RateSeries::new(points, input.display().to_string())?;
    let fit = fit_rate(&series, q)?;
    match output {
        Some(path) => write_json(path, &fit)?,
        None => println!("{}", serde_json::to_string_pretty(&fit)?),
    }
    eprintln!(
        "p = {:.4} +- {:.4}, q = {q}, r^2 = {:.4}",
        fit.p, fit.p_stderr, fit.r_squared
    );
    Ok(true)
}

fn dispatch(cli: Cli) -> randmart::Result<bool> {
    match &cli.command {
        None => {
            let path = cli.config.clone().ok_or_else(|| {
                randmart::Error::InvalidConfig(
                    "either pass --config <file> or use a subcommand (see --help)".into(),
                )
            })?;
            let mut config = ExperimentConfig::load(&path)?;
            if let Some(seed) = cli.seed {
                config.master_seed = seed;
            }
            if let Some(threads) = cli.threads {
                config.threads = ThreadCount::Fixed(threads);
            }
            if let Some(out) = &cli.out {
                config.out_dir = out.clone();
            }
            run(config)
        }
        Some(Command::Quantities {
            generator,
            common,
            gamma_norm,
        }) => run(build_config(
            &cli,
            ExperimentKind::Quantities,
            generator.kind(),
            common.n_list.clone(),
            common.outer,
            common.inner,
            common.delta,
            "4*sqrt(log n)".into(),
            None,
            match gamma_norm {
                GammaNormArg::Sum => GammaNormalization::Sum,
                GammaNormArg::Mean => GammaNormalization::Mean,
            },
        )),
        Some(Command::Distance {
            generator,
            common,
            classical,
            q,
        }) => run(build_config(
            &cli,
            if *classical {
                ExperimentKind::ClassicalRate
            } else {
                ExperimentKind::RandomizedRate
            },
            generator.kind(),
            common.n_list.clone(),
            common.outer,
            common.inner,
            common.delta,
            "4*sqrt(log n)".into(),
            *q,
            GammaNormalization::Sum,
        )),
        Some(Command::CfCheck {
            generator,
            common,
            t0_rule,
        }) => run(build_config(
            &cli,
            ExperimentKind::CfDiagnostics,
            generator.kind(),
            common.n_list.clone(),
            common.outer,
            common.inner,
            common.delta,
            t0_rule.clone(),
            None,
            GammaNormalization::Sum,
        )),
        Some(Command::GaussmixCheck { common }) => run(build_config(
            &cli,
            ExperimentKind::GaussmixCheck,
            GeneratorKind::Iid {
                dist: IidDist::Rademacher,
            },
            common.n_list.clone(),
            common.outer,
            common.inner,
            common.delta,
            "4*sqrt(log n)".into(),
            None,
            GammaNormalization::Sum,
        )),
        Some(Command::Ratefit { input, q, output }) => run_ratefit(input, *q, output.as_ref()),
        Some(Command::Selftest { n_list, draws }) => run(build_config(
            &cli,
            ExperimentKind::SphereSelftest,
            GeneratorKind::Iid {
                dist: IidDist::Rademacher,
            },
            n_list.clone(),
            64,
            *draws,
            0.05,
            "4*sqrt(log n)".into(),
            None,
            GammaNormalization::Sum,
        )),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more invariant checks failed");
            ExitCode::FAILURE
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
