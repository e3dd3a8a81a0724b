use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use degen_ustat::bootstrap::{self, TestOutcome};
use degen_ustat::harness::{self, ExperimentConfig, ExperimentKind, ExperimentReport, TestSpec};
use degen_ustat::process::{simulate, RegressionMap, TimeSeries};
use degen_ustat::rng::{derive_seed, Purpose};
use degen_ustat::Error;

/// Degenerate U-/V-statistic bootstrap tests for weakly dependent series.
#[derive(Parser)]
#[command(name = "degen-ustat", version)]
struct Cli {
    /// Experiment configuration (JSON); omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory for reports and CSV files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Sizes {
    /// Sample size.
    #[arg(long)]
    n: Option<usize>,
    /// Monte Carlo repetitions.
    #[arg(long = "reps")]
    m: Option<usize>,
    /// Bootstrap replicates per test.
    #[arg(long = "b")]
    b: Option<usize>,
    /// Test level.
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Args, Clone)]
struct Input {
    /// Observed series: one value per line, or `t,value` rows; simulated
    /// from the configured model when omitted.
    #[arg(long)]
    input: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the configured process and write `series.csv`.
    Simulate {
        #[arg(long)]
        n: Option<usize>,
    },
    /// Bootstrap test of marginal symmetry.
    TestSymmetry {
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        mu: Option<f64>,
        #[command(flatten)]
        sizes: Sizes,
    },
    /// Residual-bootstrap test of a linear AR(1) null `g0(x) = a x`, or of the
    /// configured null map when `--a` is omitted.
    TestModelspec {
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        a: Option<f64>,
        #[arg(long)]
        bw: Option<f64>,
        #[command(flatten)]
        sizes: Sizes,
    },
    /// Monte Carlo rejection rate under the null model.
    McSize {
        #[command(flatten)]
        sizes: Sizes,
    },
    /// Monte Carlo rejection rate under `alt_model`.
    McPower {
        #[command(flatten)]
        sizes: Sizes,
    },
    /// KS distance between bootstrap replicates and the Monte Carlo law.
    DistCompare {
        #[command(flatten)]
        sizes: Sizes,
        #[arg(long)]
        base_samples: Option<usize>,
    },
    /// Draw from the wavelet limit sampler and compare with Monte Carlo.
    LimitSample {
        #[command(flatten)]
        sizes: Sizes,
        #[arg(long)]
        draws: Option<usize>,
        /// Reuse (or store) the fitted limit model at this path.
        #[arg(long)]
        limit_cache: Option<PathBuf>,
    },
    /// Coupling estimate of the τ-dependence coefficients.
    TauDiag {
        /// Coupled pairs.
        #[arg(long = "reps")]
        m: Option<usize>,
        /// Largest coupling lag
        #[arg(long)]
        max_lag: Option<usize>,
        /// Exponent used in the summability check
        #[arg(long)]
        delta: Option<f64>,
    },
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.master_seed = seed;
    }
    if cli.out.is_some() {
        config.output_dir = cli.out.clone();
    }
    Ok(config)
}

fn apply_sizes(config: &mut ExperimentConfig, sizes: &Sizes) {
    if let Some(n) = sizes.n {
        config.n = n;
    }
    if let Some(m) = sizes.m {
        config.m = m;
    }
    if let Some(b) = sizes.b {
        config.plan.b = b;
    }
    if let Some(a) = sizes.alpha {
        config.alpha = a;
    }
}

fn read_series(path: &Path) -> Result<TimeSeries, Failure> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let field = line.rsplit(',').next().unwrap_or(line).trim();
        match field.parse::<f64>() {
            Ok(v) => values.push(v),
            Err(_) if i == 0 => {}
            Err(_) => return Err(Failure::Config(format!("{}:{}: not a number: {field}", path.display(), i + 1))),
        }
    }
    Ok(TimeSeries::from_values(values))
}

fn write_series(f: &mut impl Write, series: &TimeSeries) -> std::io::Result<()> {
    if series.dim == 1 {
        writeln!(f, "t,value")?;
    } else {
        let cols: Vec<String> = (0..series.dim).map(|k| format!("x{k}")).collect();
        writeln!(f, "t,{}", cols.join(","))?;
    }
    for t in 0..series.len() {
        let row: Vec<String> = series.point(t).iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(f, "{},{}", t + 1, row.join(","))?;
    }
    f.flush()
}

fn observed_series(config: &ExperimentConfig, input: &Input) -> Result<TimeSeries, Failure> {
    match &input.input {
        Some(path) => read_series(path),
        None => Ok(config.replication_inputs(&config.model, 0)?.0),
    }
}

fn print_json(value: &ExperimentReport) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    println!("{text}");
    Ok(())
}

fn run_test(config: &ExperimentConfig, input: &Input, out: Option<&Path>) -> Result<(), Failure> {
    config.validate()?;
    let series = observed_series(config, input)?;
    let plan = config.plan.with_seed(derive_seed(config.master_seed, Purpose::ReplicationBootstrap, 0));
    let outcome: TestOutcome = config.test.run(&series, &plan, config.alpha)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(Error::from)?;
        bootstrap::write_replicates_csv(&dir.join("replicates.csv"), &outcome.replicates)?;
        let f = std::fs::File::create(dir.join("outcome.json")).map_err(Error::from)?;
        serde_json::to_writer_pretty(f, &outcome).map_err(Error::from)?;
    }
    println!(
        "statistic={:.6e} p_value={:.4} reject={} (B={}, alpha={})",
        outcome.statistic, outcome.p_value, outcome.reject, plan.b, config.alpha
    );
    for w in &outcome.diagnostics.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn summarize(report: &ExperimentReport) -> Result<(), Failure> {
    if report.config.output_dir.is_none() {
        return print_json(report);
    }
    if let (Some(rate), Some(se)) = (report.rejection_rate, report.rejection_se) {
        println!("rejection_rate={rate:.4} se={se:.4} M={}", report.replications.len());
    }
    if let Some(ks) = &report.ks {
        println!("mean_ks={:.4} over {} samples", ks.mean, ks.per_sample.len());
    }
    if let Some(l) = &report.limit {
        println!("ks_vs_monte_carlo={:.4} eigenvalues={}", l.ks_vs_monte_carlo, l.eigenvalues.len());
    }
    if let Some(t) = &report.tau {
        println!(
            "fitted_rate={:.4} covariance_violations={}/{}",
            t.profile.fitted_rate,
            t.covariance_violations,
            t.covariance_checks.len()
        );
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn experiment(mut config: ExperimentConfig, kind: ExperimentKind) -> Result<(), Failure> {
    config.experiment = kind;
    config.plan.scheme = config.test.scheme();
    let report = harness::run(&config)?;
    summarize(&report)
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Config(format!("thread pool: {e}")))?;
    }
    let mut config = load_config(&cli)?;
    let out = cli.out.clone();
    match cli.command {
        Command::Simulate { n } => {
            if let Some(n) = n {
                config.n = n;
            }
            config.model.validate()?;
            let seed = derive_seed(config.master_seed, Purpose::ReplicationData, 0);
            let burn = config.burn_in.unwrap_or_else(|| config.model.default_burn_in());
            let series = simulate(&config.model, config.n, seed, burn)?;
            match &out {
                Some(dir) => {
                    std::fs::create_dir_all(dir).map_err(Error::from)?;
                    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("series.csv")).map_err(Error::from)?);
                    write_series(&mut f, &series).map_err(Error::from)?;
                    println!("wrote {} values to {}", series.len(), dir.join("series.csv").display());
                }
                None => write_series(&mut std::io::stdout().lock(), &series).map_err(Error::from)?,
            }
            Ok(())
        }
        Command::TestSymmetry { input, gamma, mu, sizes } => {
            let (g, m) = match config.test {
                TestSpec::Symmetry { gamma, mu } => (gamma, mu),
                _ => (1.0, 0.0),
            };
            config.test = TestSpec::Symmetry { gamma: gamma.unwrap_or(g), mu: mu.unwrap_or(m) };
            config.plan.scheme = config.test.scheme();
            apply_sizes(&mut config, &sizes);
            run_test(&config, &input, out.as_deref())
        }
        Command::TestModelspec { input, a, bw, sizes } => {
            let (g0, b) = match &config.test {
                TestSpec::ModelSpec { g0, bw } => (g0.clone(), *bw),
                _ => (RegressionMap::Linear { a: 0.5 }, 1.0),
            };
            let g0 = a.map(|a| RegressionMap::Linear { a }).unwrap_or(g0);
            config.test = TestSpec::ModelSpec { g0, bw: bw.unwrap_or(b) };
            config.plan.scheme = config.test.scheme();
            apply_sizes(&mut config, &sizes);
            run_test(&config, &input, out.as_deref())
        }
        Command::McSize { sizes } => {
            apply_sizes(&mut config, &sizes);
            experiment(config, ExperimentKind::McSize)
        }
        Command::McPower { sizes } => {
            apply_sizes(&mut config, &sizes);
            experiment(config, ExperimentKind::McPower)
        }
        Command::DistCompare { sizes, base_samples } => {
            apply_sizes(&mut config, &sizes);
            if let Some(s) = base_samples {
                config.base_samples = s;
            }
            experiment(config, ExperimentKind::DistCompare)
        }
        Command::LimitSample { sizes, draws, limit_cache } => {
            apply_sizes(&mut config, &sizes);
            if let Some(d) = draws {
                config.limit.draws = d;
            }
            if limit_cache.is_some() {
                config.limit.cache = limit_cache;
            }
            experiment(config, ExperimentKind::LimitStudy)
        }
        Command::TauDiag { m, max_lag, delta } => {
            if let Some(m) = m {
                config.m = m;
            }
            if let Some(l) = max_lag {
                config.tau.max_lag = l;
            }
            if let Some(d) = delta {
                config.tau.delta = d;
            }
            experiment(config, ExperimentKind::TauStudy)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 2 } else { 3 })
        }
    }
}
