use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use lpgp::bench::{
    aggregate, aggregate_csv, cells_csv, gamma_report, median_iqr, preset, run_experiment, run_single, trace_csv,
    write_csv, Algo, BenchError, ExperimentConfig,
};
use lpgp::kernels::{holder_profile, KernelFamily, KernelSpec};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "lpgp", version, about = "Multi-scale GP-UCB optimizer and regret benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize one synthetic objective and write the per-round trace.
    Run(RunArgs),
    /// Run a benchmark preset over several seeds and write aggregates.
    Bench(BenchArgs),
    /// Report information-gain estimates for a kernel.
    Gamma(GammaArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgoArg {
    Lpgpucb,
    Heuristic,
    Igpucb,
    Ei,
    Pi,
    Random,
}

impl From<AlgoArg> for Algo {
    fn from(a: AlgoArg) -> Self {
        match a {
            AlgoArg::Lpgpucb => Algo::LpGpUcb,
            AlgoArg::Heuristic => Algo::Heuristic,
            AlgoArg::Igpucb => Algo::IgpUcb,
            AlgoArg::Ei => Algo::Ei,
            AlgoArg::Pi => Algo::Pi,
            AlgoArg::Random => Algo::Random,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelArg {
    Se,
    Matern,
    Rq,
    Ge,
    Pp,
}

#[derive(Args)]
struct KernelArgs {
    #[arg(long, value_enum, default_value = "matern")]
    kernel: KernelArg,
    /// Matérn smoothness.
    #[arg(long, default_value_t = 2.5)]
    nu: f64,
    #[arg(long, default_value_t = 0.2)]
    lengthscale: f64,
    /// RQ shape or GE exponent.
    #[arg(long, default_value_t = 1.0)]
    a: f64,
    /// Piecewise-polynomial degree.
    #[arg(long, default_value_t = 0)]
    q: u32,
    #[arg(long, default_value_t = 1)]
    dim: usize,
}

impl KernelArgs {
    fn family(&self) -> KernelFamily {
        match self.kernel {
            KernelArg::Se => KernelFamily::SquaredExponential,
            KernelArg::Matern => KernelFamily::Matern { nu: self.nu },
            KernelArg::Rq => KernelFamily::RationalQuadratic { a: self.a },
            KernelArg::Ge => KernelFamily::GammaExponential { a: self.a },
            KernelArg::Pp => KernelFamily::PiecewisePolynomial { q: self.q },
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_enum, default_value = "lpgpucb")]
    algo: AlgoArg,
    #[command(flatten)]
    kernel: KernelArgs,
    #[arg(long, default_value_t = 100)]
    budget: usize,
    #[arg(long, default_value_t = 0.05)]
    sigma: f64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// RKHS norm bound of the objective.
    #[arg(long = "B", default_value_t = 1.0)]
    norm_bound: f64,
    /// Hölder constant; defaults to the kernel-implied value.
    #[arg(long = "L")]
    holder: Option<f64>,
    /// Polynomial degree of the local estimator.
    #[arg(long)]
    k: Option<u32>,
    /// Hölder exponent.
    #[arg(long)]
    alpha: Option<f64>,
    /// Kernel terms of the synthetic objective.
    #[arg(long, default_value_t = 10)]
    centers: usize,
    /// Choose the model lengthscale by marginal likelihood on five extra samples.
    #[arg(long)]
    select_lengthscale: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the selected cell of every round next to the trace.
    #[arg(long)]
    trace_cells: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value = "matern25-d1")]
    preset: String,
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    #[arg(long)]
    out: PathBuf,
    /// Directory for one trace CSV per algorithm and seed.
    #[arg(long)]
    traces: Option<PathBuf>,
}

#[derive(Args)]
struct GammaArgs {
    #[command(flatten)]
    kernel: KernelArgs,
    #[arg(long, default_value_t = 100)]
    budget: usize,
    #[arg(long, default_value_t = 1000)]
    grid_size: usize,
    /// Observation noise scale used by the greedy estimate.
    #[arg(long, default_value_t = 0.05)]
    sigma: f64,
}

fn run_config(args: &RunArgs) -> Result<ExperimentConfig, BenchError> {
    let family = args.kernel.family();
    let mut config = ExperimentConfig {
        family,
        dim: args.kernel.dim,
        lengthscale: args.kernel.lengthscale,
        centers: args.centers,
        norm_bound: args.norm_bound,
        noise: args.sigma,
        delta: args.delta,
        budget: args.budget,
        holder_bound: args.holder,
        select_lengthscale: args.select_lengthscale,
        ..ExperimentConfig::default()
    };
    let algo = Algo::from(args.algo);
    if algo == Algo::Heuristic {
        if args.k.is_some_and(|k| k != 0) {
            return Err(BenchError::Config("the heuristic uses k = 0".into()));
        }
        if let Some(alpha) = args.alpha {
            config.heuristic_alpha = alpha;
        }
    } else if args.k.is_some() || args.alpha.is_some() {
        let kernel = KernelSpec::new(family, args.kernel.lengthscale, args.kernel.dim)?;
        let implied = holder_profile(&kernel, args.norm_bound, args.budget.max(2), args.holder)?;
        config.smoothness = Some((args.k.unwrap_or(implied.k()), args.alpha.unwrap_or(implied.alpha())));
    }
    config.validate()?;
    Ok(config)
}

fn cmd_run(args: RunArgs) -> Result<(), BenchError> {
    let config = run_config(&args)?;
    let algo = Algo::from(args.algo);
    let trace = run_single(algo, &config, args.seed)?;
    write_csv(&args.out, &trace_csv(&trace.rows, config.dim))?;
    if args.trace_cells {
        let mut name = args.out.clone().into_os_string();
        name.push(".cells.csv");
        write_csv(&PathBuf::from(name), &cells_csv(&trace.rows, config.dim))?;
    }
    println!("algo: {algo}");
    println!("rounds: {}", trace.rows.len());
    println!("evaluations: {}", trace.evaluations());
    println!("recommendation: {:?}", trace.recommendation);
    println!("simple_regret: {}", trace.final_simple);
    println!("cumulative_regret: {}", trace.final_cumulative);
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<(), BenchError> {
    let (config, algos) =
        preset(&args.preset).ok_or_else(|| BenchError::Config(format!("unknown preset {:?}", args.preset)))?;
    if args.seeds == 0 {
        return Err(BenchError::Config("at least one seed is required".into()));
    }
    let seeds: Vec<u64> = (0..args.seeds).collect();
    let traces = run_experiment(&algos, &config, &seeds)?;
    write_csv(&args.out, &aggregate_csv(&aggregate(&traces, config.budget)))?;
    if let Some(dir) = &args.traces {
        std::fs::create_dir_all(dir).map_err(|source| BenchError::Io { path: dir.clone(), source })?;
        for t in &traces {
            write_csv(&dir.join(format!("{}_seed{}.csv", t.algo, t.seed)), &trace_csv(&t.rows, config.dim))?;
        }
    }
    println!("algo,median_final_simple,median_final_cum");
    for algo in algos {
        let pick = |f: fn(&lpgp::bench::RegretTrace) -> f64| -> Vec<f64> {
            traces.iter().filter(|t| t.algo == algo).map(f).collect()
        };
        let simple = median_iqr(&pick(|t| t.final_simple)).0;
        let cum = median_iqr(&pick(|t| t.final_cumulative)).0;
        println!("{algo},{simple},{cum}");
    }
    Ok(())
}

fn cmd_gamma(args: GammaArgs) -> Result<(), BenchError> {
    let spec = KernelSpec::new(args.kernel.family(), args.kernel.lengthscale, args.kernel.dim)?;
    if args.budget == 0 {
        return Err(BenchError::Config("budget must be at least 1".into()));
    }
    let noise = args.sigma.max(1e-3);
    let report = gamma_report(&spec, args.budget, args.grid_size, noise)?;
    match report.analytic {
        Some(v) => println!("analytic: {v}"),
        None => println!("analytic: none"),
    }
    println!("greedy_mutual_information: {}", report.greedy_mutual_information);
    println!("greedy_gamma: {}", report.greedy_bound);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Gamma(args) => cmd_gamma(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { EXIT_CONFIG } else { EXIT_RUNTIME })
        }
    }
}
