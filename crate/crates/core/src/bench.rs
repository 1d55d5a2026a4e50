//! Synthetic objectives, regret accounting and the multi-seed experiment
//! harness with its CSV output.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use statrs::statistics::{Data, Median, OrderStatistics};
use thiserror::Error;

use crate::baselines::{golden_max, Acquisition, AcquisitionOptimizer, Heuristic, HeuristicConfig, RandomSearch};
use crate::gp::GpPosterior;
use crate::kernels::{greedy_info_gain, info_gain_bound, KernelError, KernelFamily, KernelSpec, SmoothnessProfile};
use crate::geometry::kronecker_points;
use crate::optimizer::{
    Action, ExpansionEvent, LpGpUcb, Oracle, OracleError, OptimizerConfig, OptimizerError, RoundRecord,
    SequentialOptimizer,
};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("{algo} failed on seed {seed}: {source}")]
    Run {
        algo: Algo,
        seed: u64,
        #[source]
        source: OptimizerError,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl BenchError {
    /// True for errors caused by the inputs rather than by the run.
    pub fn is_config(&self) -> bool {
        match self {
            BenchError::Config(_) | BenchError::Kernel(_) => true,
            BenchError::Run { source, .. } => matches!(source, OptimizerError::Config(_) | OptimizerError::Kernel(_)),
            BenchError::Io { .. } => false,
        }
    }
}

/// Largest dimension for which the optimum can be located by grid search.
pub const MAX_REGRET_DIM: usize = 2;

/// `f(x) = Σ a_i K(x, c_i)` with `‖f‖_K = √(aᵀGa)` rescaled to a target.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFunction {
    pub spec: KernelSpec,
    pub centers: Vec<Vec<f64>>,
    pub coefficients: Vec<f64>,
    pub rkhs_norm: f64,
    pub target_norm: f64,
    pub argmax: Vec<f64>,
    pub max_value: f64,
}

impl SyntheticFunction {
    pub fn value(&self, x: &[f64]) -> f64 {
        self.centers.iter().zip(&self.coefficients).map(|(c, a)| a * self.spec.cov(x, c)).sum()
    }

    pub fn regret(&self, x: &[f64]) -> f64 {
        self.max_value - self.value(x)
    }
}

fn grid_side(dim: usize) -> usize {
    if dim == 1 {
        2001
    } else {
        201
    }
}

/// Random RKHS element with `m` uniform centers and standard normal
/// coefficients, scaled to norm `B` and signed so the coefficients sum to a
/// non-negative value. The optimum is located by grid search plus a
/// golden-section polish per coordinate.
pub fn make_synthetic<R: Rng + ?Sized>(
    spec: KernelSpec,
    centers: usize,
    norm_bound: f64,
    rng: &mut R,
) -> Result<SyntheticFunction, BenchError> {
    let dim = spec.dim();
    if dim > MAX_REGRET_DIM {
        return Err(BenchError::Config(format!(
            "optimum search supports dimension at most {MAX_REGRET_DIM}, got {dim}"
        )));
    }
    if centers == 0 {
        return Err(BenchError::Config("at least one center is required".into()));
    }
    if !(norm_bound > 0.0) {
        return Err(BenchError::Config(format!("norm bound must be positive, got {norm_bound}")));
    }
    let cs: Vec<Vec<f64>> = (0..centers).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect();
    let mut a: Vec<f64> = (0..centers).map(|_| StandardNormal.sample(rng)).collect();
    let gram = spec.gram(&cs);
    let av = nalgebra::DVector::from_column_slice(&a);
    let raw = av.dot(&(&gram * &av)).max(0.0).sqrt();
    if !(raw > 0.0) {
        return Err(BenchError::Config("degenerate synthetic coefficients".into()));
    }
    let sign = if a.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
    for v in &mut a {
        *v *= sign * norm_bound / raw;
    }
    let scaled = nalgebra::DVector::from_column_slice(&a);
    let rkhs_norm = scaled.dot(&(&gram * &scaled)).max(0.0).sqrt();
    let mut f = SyntheticFunction {
        spec,
        centers: cs,
        coefficients: a,
        rkhs_norm,
        target_norm: norm_bound,
        argmax: vec![0.0; dim],
        max_value: f64::NEG_INFINITY,
    };
    let side = grid_side(dim);
    let step = 1.0 / (side - 1) as f64;
    let mut idx = vec![0usize; dim];
    loop {
        let x: Vec<f64> = idx.iter().map(|&i| i as f64 * step).collect();
        let v = f.value(&x);
        if v > f.max_value {
            f.max_value = v;
            f.argmax = x;
        }
        let mut axis = 0;
        while axis < dim {
            idx[axis] += 1;
            if idx[axis] < side {
                break;
            }
            idx[axis] = 0;
            axis += 1;
        }
        if axis == dim {
            break;
        }
    }
    for axis in 0..dim {
        let lo = (f.argmax[axis] - step).max(0.0);
        let hi = (f.argmax[axis] + step).min(1.0);
        let mut probe = f.argmax.clone();
        let (s, v) = golden_max(lo, hi, 60, |s| {
            probe[axis] = s;
            f.value(&probe)
        });
        if v > f.max_value {
            f.argmax[axis] = s;
            f.max_value = v;
        }
    }
    Ok(f)
}

/// Gaussian-noise oracle over a synthetic function that keeps the
/// noiseless values of every query.
pub struct NoisyObjective<'a> {
    pub function: &'a SyntheticFunction,
    noise: Normal<f64>,
    rng: ChaCha8Rng,
    pub true_values: Vec<f64>,
}

impl<'a> NoisyObjective<'a> {
    pub fn new(function: &'a SyntheticFunction, noise: f64, rng: ChaCha8Rng) -> Result<Self, BenchError> {
        let noise = Normal::new(0.0, noise).map_err(|e| BenchError::Config(format!("noise scale: {e}")))?;
        Ok(Self { function, noise, rng, true_values: Vec::new() })
    }
}

impl Oracle for NoisyObjective<'_> {
    fn query(&mut self, x: &[f64]) -> Result<f64, OracleError> {
        if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(OracleError(format!("query {x:?} outside the unit cube")));
        }
        let f = self.function.value(x);
        self.true_values.push(f);
        Ok(f + self.noise.sample(&mut self.rng))
    }
}

/// Independent random streams derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Objective = 0,
    Lengthscale = 1,
    Algorithm = 2,
    Noise = 3,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algo {
    LpGpUcb,
    Heuristic,
    IgpUcb,
    Ei,
    Pi,
    Random,
}

impl Algo {
    pub const ALL: [Algo; 6] = [Algo::LpGpUcb, Algo::Heuristic, Algo::IgpUcb, Algo::Ei, Algo::Pi, Algo::Random];

    pub fn as_str(&self) -> &'static str {
        match self {
            Algo::LpGpUcb => "lpgpucb",
            Algo::Heuristic => "heuristic",
            Algo::IgpUcb => "igpucb",
            Algo::Ei => "ei",
            Algo::Pi => "pi",
            Algo::Random => "random",
        }
    }
}

impl std::fmt::Display for Algo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algo {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algo::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown algorithm {s:?}"))
    }
}

/// Everything needed to run one algorithm on one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub family: KernelFamily,
    pub dim: usize,
    /// Lengthscale of the objective, and of the model unless selected.
    pub lengthscale: f64,
    pub centers: usize,
    pub norm_bound: f64,
    pub noise: f64,
    pub delta: f64,
    pub budget: usize,
    pub holder_bound: Option<f64>,
    /// `(k, α)` replacing the kernel-implied profile of the main algorithm.
    pub smoothness: Option<(u32, f64)>,
    pub heuristic_alpha: f64,
    /// Pick the model lengthscale by marginal likelihood on a pre-phase.
    pub select_lengthscale: bool,
    pub pool_size: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            family: KernelFamily::Matern { nu: 2.5 },
            dim: 1,
            lengthscale: 0.2,
            centers: 10,
            norm_bound: 1.0,
            noise: 0.05,
            delta: 0.1,
            budget: 100,
            holder_bound: Some(std::f64::consts::SQRT_2),
            smoothness: None,
            heuristic_alpha: 1.0,
            select_lengthscale: false,
            pool_size: crate::baselines::DEFAULT_POOL_SIZE,
        }
    }
}

/// Named presets for the `bench` command.
pub fn preset(name: &str) -> Option<(ExperimentConfig, Vec<Algo>)> {
    match name {
        "matern25-d1" => Some((
            ExperimentConfig {
                budget: 200,
                select_lengthscale: true,
                smoothness: Some((0, 1.0)),
                ..ExperimentConfig::default()
            },
            Algo::ALL.to_vec(),
        )),
        _ => None,
    }
}

pub const PREPHASE_SAMPLES: usize = 5;
pub const LENGTHSCALE_GRID: usize = 25;

/// Log-spaced lengthscale candidates on `[0.01, √D]`.
pub fn lengthscale_grid(dim: usize) -> Vec<f64> {
    let (lo, hi) = (0.01f64.ln(), (dim as f64).sqrt().ln());
    (0..LENGTHSCALE_GRID)
        .map(|i| (lo + (hi - lo) * i as f64 / (LENGTHSCALE_GRID - 1) as f64).exp())
        .collect()
}

/// Candidate with the largest log marginal likelihood; first on ties.
pub fn select_lengthscale(
    family: KernelFamily,
    dim: usize,
    data: &[(Vec<f64>, f64)],
    lambda: f64,
) -> Result<f64, BenchError> {
    let mut best = (f64::NEG_INFINITY, None);
    for theta in lengthscale_grid(dim) {
        let spec = KernelSpec::new(family, theta, dim)?;
        let Ok(gp) = GpPosterior::fit(spec, data, lambda) else { continue };
        let lml = gp.log_marginal_likelihood();
        if lml > best.0 {
            best = (lml, Some(theta));
        }
    }
    best.1.ok_or_else(|| BenchError::Config("no lengthscale candidate admits a GP fit".into()))
}

impl ExperimentConfig {
    pub fn objective_kernel(&self) -> Result<KernelSpec, BenchError> {
        Ok(KernelSpec::new(self.family, self.lengthscale, self.dim)?)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.dim == 0 || self.dim > MAX_REGRET_DIM {
            return Err(BenchError::Config(format!(
                "regret accounting supports dimension 1..={MAX_REGRET_DIM}, got {}",
                self.dim
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(BenchError::Config(format!("noise scale must be non-negative, got {}", self.noise)));
        }
        let kernel = self.objective_kernel()?;
        for algo in Algo::ALL {
            self.build(algo, kernel).map_err(|e| match e {
                OptimizerError::Kernel(k) => BenchError::Kernel(k),
                OptimizerError::Config(m) => BenchError::Config(m),
                other => BenchError::Config(other.to_string()),
            })?;
        }
        if self.centers == 0 {
            return Err(BenchError::Config("at least one center is required".into()));
        }
        if !(self.norm_bound > 0.0) {
            return Err(BenchError::Config(format!("norm bound must be positive, got {}", self.norm_bound)));
        }
        Ok(())
    }

    fn lambda(&self) -> f64 {
        (self.noise * self.noise).max(1e-6)
    }

    /// Optimizer for `algo` with model kernel `kernel`.
    pub fn build(&self, algo: Algo, kernel: KernelSpec) -> Result<Box<dyn SequentialOptimizer + Send>, OptimizerError> {
        let base = || OptimizerConfig::new(kernel, self.budget, self.norm_bound, self.noise, self.delta, self.holder_bound);
        Ok(match algo {
            Algo::LpGpUcb => {
                let mut config = base()?;
                if let Some((k, alpha)) = self.smoothness {
                    let profile = SmoothnessProfile::new(k, alpha, config.profile.holder_bound())?;
                    config = config.with_profile(profile);
                }
                Box::new(LpGpUcb::new(config)?)
            }
            Algo::Heuristic => {
                let cfg = HeuristicConfig::new(
                    kernel,
                    self.budget,
                    self.norm_bound,
                    self.noise,
                    self.delta,
                    self.holder_bound,
                    self.heuristic_alpha,
                )?;
                Box::new(Heuristic::new(cfg)?)
            }
            Algo::IgpUcb | Algo::Ei | Algo::Pi => {
                let config = base()?;
                let acq = match algo {
                    Algo::IgpUcb => Acquisition::Ucb { beta: config.beta() },
                    Algo::Ei => Acquisition::Ei { jitter: 0.01 },
                    _ => Acquisition::Pi { jitter: 0.01 },
                };
                Box::new(AcquisitionOptimizer::new(acq, &config)?.with_pool_size(self.pool_size))
            }
            Algo::Random => {
                if self.budget == 0 {
                    return Err(OptimizerError::Config("budget must be at least 1".into()));
                }
                Box::new(RandomSearch::new(kernel.dim(), self.budget))
            }
        })
    }
}

/// One trace row: the round record plus regret bookkeeping on evaluations.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub record: RoundRecord,
    pub true_value: Option<f64>,
    /// `f(x*) − f(z_t)` for the recommendation after this round.
    pub simple_regret: Option<f64>,
    pub cum_regret: Option<f64>,
}

/// Complete regret record of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretTrace {
    pub algo: Algo,
    pub seed: u64,
    pub lengthscale: f64,
    pub max_value: f64,
    pub rows: Vec<TraceRow>,
    pub expansions: Vec<ExpansionEvent>,
    pub recommendation: Vec<f64>,
    pub final_simple: f64,
    pub final_cumulative: f64,
}

impl RegretTrace {
    /// `(simple, cumulative)` after each evaluation, indexed by `n_e − 1`.
    pub fn per_evaluation(&self) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter_map(|r| Some((r.simple_regret?, r.cum_regret?)))
            .collect()
    }

    pub fn evaluations(&self) -> usize {
        self.rows.iter().filter(|r| r.record.action == Action::Evaluate).count()
    }
}

/// Objective of a seed: shared by every algorithm run on that seed.
pub fn objective_for_seed(config: &ExperimentConfig, seed: u64) -> Result<SyntheticFunction, BenchError> {
    make_synthetic(config.objective_kernel()?, config.centers, config.norm_bound, &mut stream_rng(seed, Stream::Objective))
}

/// Model lengthscale for a seed: fixed, or chosen from a pre-phase of
/// uniform noisy samples that do not count toward the budget.
pub fn model_lengthscale(config: &ExperimentConfig, objective: &SyntheticFunction, seed: u64) -> Result<f64, BenchError> {
    if !config.select_lengthscale {
        return Ok(config.lengthscale);
    }
    let mut rng = stream_rng(seed, Stream::Lengthscale);
    let noise = Normal::new(0.0, config.noise).map_err(|e| BenchError::Config(format!("noise scale: {e}")))?;
    let data: Vec<(Vec<f64>, f64)> = (0..PREPHASE_SAMPLES)
        .map(|_| {
            let x: Vec<f64> = (0..config.dim).map(|_| rng.random::<f64>()).collect();
            let y = objective.value(&x) + noise.sample(&mut rng);
            (x, y)
        })
        .collect();
    select_lengthscale(config.family, config.dim, &data, config.lambda())
}

/// Run `algo` for one seed on the seed's objective.
pub fn run_single(algo: Algo, config: &ExperimentConfig, seed: u64) -> Result<RegretTrace, BenchError> {
    let objective = objective_for_seed(config, seed)?;
    run_on(algo, config, &objective, seed)
}

/// Run `algo` for one seed on a given objective.
pub fn run_on(algo: Algo, config: &ExperimentConfig, objective: &SyntheticFunction, seed: u64) -> Result<RegretTrace, BenchError> {
    let wrap = |source| BenchError::Run { algo, seed, source };
    let lengthscale = model_lengthscale(config, objective, seed)?;
    let kernel = KernelSpec::new(config.family, lengthscale, config.dim)?;
    let mut opt = config.build(algo, kernel).map_err(wrap)?;
    let mut oracle = NoisyObjective::new(objective, config.noise, stream_rng(seed, Stream::Noise))?;
    let mut rng = stream_rng(seed, Stream::Algorithm);
    let mut rows = Vec::new();
    let mut cumulative = 0.0;
    while !opt.finished() {
        let record = opt.next_round(&mut oracle, &mut rng as &mut dyn RngCore).map_err(wrap)?;
        let row = if record.action == Action::Evaluate {
            let truth = *oracle.true_values.last().expect("evaluation recorded a value");
            cumulative += objective.max_value - truth;
            let rec = opt.current_recommendation().map_err(wrap)?;
            TraceRow {
                record,
                true_value: Some(truth),
                simple_regret: Some(objective.regret(&rec)),
                cum_regret: Some(cumulative),
            }
        } else {
            TraceRow { record, true_value: None, simple_regret: None, cum_regret: None }
        };
        rows.push(row);
    }
    let recommendation = opt.current_recommendation().map_err(wrap)?;
    Ok(RegretTrace {
        algo,
        seed,
        lengthscale,
        max_value: objective.max_value,
        expansions: opt.expansion_events().to_vec(),
        final_simple: objective.regret(&recommendation),
        final_cumulative: cumulative,
        recommendation,
        rows,
    })
}

/// Every algorithm on every seed, in parallel over (algorithm, seed) pairs.
/// Results come back ordered by algorithm, then seed.
pub fn run_experiment(algos: &[Algo], config: &ExperimentConfig, seeds: &[u64]) -> Result<Vec<RegretTrace>, BenchError> {
    config.validate()?;
    let objectives: Vec<SyntheticFunction> = seeds
        .par_iter()
        .map(|&s| objective_for_seed(config, s))
        .collect::<Result<_, _>>()?;
    let jobs: Vec<(Algo, usize)> = algos.iter().flat_map(|&a| (0..seeds.len()).map(move |i| (a, i))).collect();
    jobs.par_iter()
        .map(|&(algo, i)| run_on(algo, config, &objectives[i], seeds[i]))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

/// Evaluation counts at which aggregates are reported: every tenth
/// evaluation and the budget.
pub fn checkpoints(budget: usize) -> Vec<usize> {
    let mut out: Vec<usize> = if budget < 10 { (1..budget).collect() } else { (10..budget).step_by(10).collect() };
    if budget > 0 {
        out.push(budget);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub checkpoint: usize,
    pub algo: Algo,
    pub median_simple: f64,
    pub iqr_simple: f64,
    pub median_cum: f64,
    pub iqr_cum: f64,
}

/// Median and interquartile range.
pub fn median_iqr(values: &[f64]) -> (f64, f64) {
    let mut data = Data::new(values.to_vec());
    let iqr = data.interquartile_range();
    (data.median(), iqr)
}

/// Per-checkpoint median and IQR across seeds, grouped by algorithm in
/// first-appearance order.
pub fn aggregate(traces: &[RegretTrace], budget: usize) -> Vec<AggregateRow> {
    let mut algos: Vec<Algo> = Vec::new();
    for t in traces {
        if !algos.contains(&t.algo) {
            algos.push(t.algo);
        }
    }
    let per: Vec<Vec<(f64, f64)>> = traces.iter().map(|t| t.per_evaluation()).collect();
    let mut out = Vec::new();
    for algo in algos {
        for c in checkpoints(budget) {
            let (simple, cum): (Vec<f64>, Vec<f64>) = traces
                .iter()
                .zip(&per)
                .filter(|(t, p)| t.algo == algo && p.len() >= c)
                .map(|(_, p)| p[c - 1])
                .unzip();
            if simple.is_empty() {
                continue;
            }
            let (median_simple, iqr_simple) = median_iqr(&simple);
            let (median_cum, iqr_cum) = median_iqr(&cum);
            out.push(AggregateRow { checkpoint: c, algo, median_simple, iqr_simple, median_cum, iqr_cum });
        }
    }
    out
}

/// Decimal with 17 significant digits in the shortest of fixed or
/// scientific notation, trailing zeros removed. `NaN` is the empty field.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        return String::new();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{v:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..17).contains(&exp) {
        let fixed = format!("{:.*}", (16 - exp) as usize, v);
        trim_zeros(&fixed).to_string()
    } else {
        let m = trim_zeros(mantissa);
        format!("{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn opt_float(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_default()
}

pub fn trace_header(dim: usize) -> String {
    let xs: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
    format!("t,n_e,action,{},y,ucb,beta_sigma,b_t,simple_regret,cum_regret", xs.join(","))
}

/// Trace CSV text: one row per round.
pub fn trace_csv(rows: &[TraceRow], dim: usize) -> String {
    let mut out = trace_header(dim);
    out.push('\n');
    for r in rows {
        let rec = &r.record;
        let xs: Vec<String> = rec.x.iter().map(|&v| format_float(v)).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            rec.round,
            rec.evaluations,
            rec.action.as_str(),
            xs.join(","),
            opt_float(rec.y),
            format_float(rec.ucb),
            format_float(rec.beta_sigma),
            format_float(rec.b_t),
            opt_float(r.simple_regret),
            opt_float(r.cum_regret),
        );
    }
    out
}

/// Selected cell of every round.
pub fn cells_csv(rows: &[TraceRow], dim: usize) -> String {
    let lo: Vec<String> = (0..dim).map(|i| format!("lower{i}")).collect();
    let hi: Vec<String> = (0..dim).map(|i| format!("upper{i}")).collect();
    let mut out = format!("t,action,side,{},{},partition_size\n", lo.join(","), hi.join(","));
    for r in rows {
        let rec = &r.record;
        let l: Vec<String> = rec.cell_lower.iter().map(|&v| format_float(v)).collect();
        let u: Vec<String> = rec.cell_upper.iter().map(|&v| format_float(v)).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            rec.round,
            rec.action.as_str(),
            format_float(rec.cell_side),
            l.join(","),
            u.join(","),
            rec.partition_size
        );
    }
    out
}

pub const AGGREGATE_HEADER: &str = "checkpoint,algo,median_simple,iqr_simple,median_cum,iqr_cum";

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = format!("{AGGREGATE_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.checkpoint,
            r.algo,
            format_float(r.median_simple),
            format_float(r.iqr_simple),
            format_float(r.median_cum),
            format_float(r.iqr_cum)
        );
    }
    out
}

pub fn write_csv(path: &Path, contents: &str) -> Result<(), BenchError> {
    std::fs::write(path, contents).map_err(|source| BenchError::Io { path: path.to_path_buf(), source })
}

/// Analytic `γ_n` (when the kernel has a known rate) and the greedy
/// estimate on a Kronecker grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaReport {
    pub analytic: Option<f64>,
    pub greedy_mutual_information: f64,
    pub greedy_bound: f64,
}

pub fn gamma_report(spec: &KernelSpec, budget: usize, grid_size: usize, noise: f64) -> Result<GammaReport, BenchError> {
    let analytic = match info_gain_bound(spec, budget as f64) {
        Ok(v) => Some(v),
        Err(KernelError::NoAnalyticBound(_)) => None,
        Err(e) => return Err(e.into()),
    };
    let grid = kronecker_points(grid_size, spec.dim(), &vec![0.5; spec.dim()]);
    let greedy = greedy_info_gain(spec, &grid, budget, noise)?;
    Ok(GammaReport {
        analytic,
        greedy_mutual_information: greedy.mutual_information,
        greedy_bound: greedy.gamma_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(budget: usize) -> ExperimentConfig {
        ExperimentConfig { budget, pool_size: 50, ..ExperimentConfig::default() }
    }

    #[test]
    fn single_center_peaks_at_norm() {
        for spec in [KernelSpec::matern(2.5, 0.2, 1).unwrap(), KernelSpec::se(0.1, 2).unwrap()] {
            let mut rng = stream_rng(3, Stream::Objective);
            let f = make_synthetic(spec, 1, 1.5, &mut rng).unwrap();
            assert!((f.coefficients[0] - 1.5).abs() < 1e-12);
            assert!((f.max_value - 1.5).abs() < 1e-9);
            let d = crate::kernels::euclidean(&f.argmax, &f.centers[0]);
            assert!(d < 1e-3, "{d}");
        }
    }

    #[test]
    fn rescaled_norm_matches_target() {
        let spec = KernelSpec::matern(2.5, 0.2, 2).unwrap();
        let f = make_synthetic(spec, 10, 1.0, &mut stream_rng(1, Stream::Objective)).unwrap();
        assert!((f.rkhs_norm - 1.0).abs() < 1e-9);
        assert!(f.coefficients.iter().sum::<f64>() >= 0.0);
        assert!(make_synthetic(KernelSpec::se(0.2, 3).unwrap(), 2, 1.0, &mut stream_rng(1, Stream::Objective)).is_err());
    }

    #[test]
    fn grid_optimum_beats_dense_samples() {
        let spec = KernelSpec::matern(2.5, 0.2, 1).unwrap();
        let f = make_synthetic(spec, 10, 1.0, &mut stream_rng(7, Stream::Objective)).unwrap();
        let dense = (0..=100_000).map(|i| f.value(&[i as f64 / 1e5])).fold(f64::NEG_INFINITY, f64::max);
        assert!(f.max_value >= dense - 1e-9);
    }

    #[test]
    fn float_formatting() {
        assert_eq!(format_float(0.0), "0");
        assert_eq!(format_float(1.0), "1");
        assert_eq!(format_float(0.1), "0.10000000000000001");
        assert_eq!(format_float(-2.5), "-2.5");
        assert_eq!(format_float(1e-7), "9.9999999999999995e-08");
        assert_eq!(format_float(1.5e20), "1.5e+20");
        assert_eq!(format_float(f64::NAN), "");
        assert_eq!(format_float(f64::INFINITY), "inf");
        assert_eq!(format_float(123456.789), "123456.789");
        assert_eq!(format_float(0.0001), "0.0001");
    }

    #[test]
    fn aggregate_statistics() {
        let (m, iqr) = median_iqr(&[1.0, 2.0, 3.0, 4.0, 100.0]);
        assert_eq!(m, 3.0);
        assert!(iqr > 0.0);
        assert_eq!(checkpoints(25), vec![10, 20, 25]);
        assert_eq!(checkpoints(3), vec![1, 2, 3]);
        assert_eq!(checkpoints(20), vec![10, 20]);
    }

    #[test]
    fn two_seeds_two_traces() {
        let cfg = small(5);
        let traces = run_experiment(&[Algo::Random], &cfg, &[1, 2]).unwrap();
        assert_eq!(traces.len(), 2);
        assert!(traces.iter().all(|t| t.evaluations() == 5));
        let csv = trace_csv(&traces[0].rows, 1);
        assert_eq!(csv.lines().count(), 6);
        assert_eq!(csv.lines().next().unwrap(), "t,n_e,action,x0,y,ucb,beta_sigma,b_t,simple_regret,cum_regret");
    }

    #[test]
    fn empty_trace_is_header_only() {
        assert_eq!(trace_csv(&[], 2), "t,n_e,action,x0,x1,y,ucb,beta_sigma,b_t,simple_regret,cum_regret\n");
        assert_eq!(aggregate_csv(&[]), format!("{AGGREGATE_HEADER}\n"));
    }

    #[test]
    fn cumulative_regret_matches_independent_pass() {
        let cfg = small(30);
        for algo in [Algo::LpGpUcb, Algo::Heuristic, Algo::IgpUcb] {
            let t = run_single(algo, &cfg, 4).unwrap();
            let f = objective_for_seed(&cfg, 4).unwrap();
            let xs: Vec<&Vec<f64>> = t.rows.iter().filter(|r| r.record.action == Action::Evaluate).map(|r| &r.record.x).collect();
            let direct = xs.len() as f64 * f.max_value - xs.iter().map(|x| f.value(x)).sum::<f64>();
            assert!((direct - t.final_cumulative).abs() < 1e-9);
            let per = t.per_evaluation();
            assert!(per.windows(2).all(|w| w[1].1 >= w[0].1 - 1e-9));
        }
    }

    #[test]
    fn parallel_equals_sequential() {
        let cfg = small(15);
        let algos = [Algo::LpGpUcb, Algo::Ei];
        let par = run_experiment(&algos, &cfg, &[1, 2, 3]).unwrap();
        let seq: Vec<RegretTrace> = algos
            .iter()
            .flat_map(|&a| [1, 2, 3].map(|s| run_single(a, &cfg, s).unwrap()))
            .collect();
        // NaN fields defeat PartialEq, so compare the serialized form
        for (a, b) in par.iter().zip(&seq) {
            assert_eq!(trace_csv(&a.rows, 1), trace_csv(&b.rows, 1));
        }
        assert_eq!(aggregate_csv(&aggregate(&par, 15)), aggregate_csv(&aggregate(&seq, 15)));
    }

    #[test]
    fn lengthscale_selection_is_on_grid() {
        let cfg = ExperimentConfig { select_lengthscale: true, ..small(5) };
        let f = objective_for_seed(&cfg, 9).unwrap();
        let theta = model_lengthscale(&cfg, &f, 9).unwrap();
        assert!(lengthscale_grid(1).contains(&theta));
        assert_eq!(theta, model_lengthscale(&cfg, &f, 9).unwrap());
    }

    #[test]
    fn gamma_report_kinds() {
        let m = gamma_report(&KernelSpec::matern(2.5, 0.2, 1).unwrap(), 10, 200, 0.1).unwrap();
        assert!(m.analytic.is_some() && m.greedy_bound >= m.greedy_mutual_information);
        let rq = gamma_report(&KernelSpec::rq(1.0, 0.2, 1).unwrap(), 10, 200, 0.1).unwrap();
        assert!(rq.analytic.is_none());
        assert!(gamma_report(&KernelSpec::se(0.2, 1).unwrap(), 300, 200, 0.1).is_err());
    }

    #[test]
    fn config_errors_are_flagged() {
        let bad = ExperimentConfig { delta: 2.0, ..small(5) };
        assert!(bad.validate().unwrap_err().is_config());
        let wide = ExperimentConfig { dim: 3, ..small(5) };
        assert!(wide.validate().unwrap_err().is_config());
        assert!("nope".parse::<Algo>().is_err());
        assert_eq!("igpucb".parse::<Algo>().unwrap(), Algo::IgpUcb);
    }
}
