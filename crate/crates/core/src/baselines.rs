//! Comparison optimizers: the regression-tree heuristic, GP acquisition
//! rules (IGP-UCB, EI, PI) maximized over a candidate pool, and random
//! search.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};

use crate::geometry::{kronecker_points, sample_uniform, Cell};
use crate::gp::GpPosterior;
use crate::kernels::{holder_profile, KernelSpec, SmoothnessProfile};
use crate::optimizer::{
    prefer, ucb_terms, Action, Oracle, OptimizerConfig, OptimizerError, RoundRecord, SequentialOptimizer,
};

/// Axis-aligned box of a fitted tree with the sample indices it holds.
#[derive(Debug, Clone, PartialEq)]
pub struct Leaf {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub samples: Vec<usize>,
}

impl Leaf {
    /// Longest side, used as the cell radius.
    pub fn max_side(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreePartitioner {
    pub max_leaves: usize,
    pub min_samples_leaf: usize,
    leaves: Vec<Leaf>,
}

impl TreePartitioner {
    pub fn leaves(&self) -> &[Leaf] {
        &self.leaves
    }

    /// Leaves as partition cells carrying their observations.
    pub fn cells(&self, ys: &[f64]) -> Vec<Cell> {
        self.leaves
            .iter()
            .enumerate()
            .map(|(i, leaf)| {
                let mut cell = Cell::from_bounds(leaf.lower.clone(), leaf.upper.clone(), leaf.max_side(), i);
                for &s in &leaf.samples {
                    cell.record(s, ys[s]);
                }
                cell
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
struct Split {
    axis: usize,
    threshold: f64,
    gain: f64,
    left: Vec<usize>,
    right: Vec<usize>,
}

fn best_split(leaf: &Leaf, points: &[Vec<f64>], ys: &[f64], min_samples_leaf: usize) -> Option<Split> {
    let n = leaf.samples.len();
    let min = min_samples_leaf.max(1);
    if n < 2 * min {
        return None;
    }
    let mean = leaf.samples.iter().map(|&i| ys[i]).sum::<f64>() / n as f64;
    let total: f64 = leaf.samples.iter().map(|&i| (ys[i] - mean).powi(2)).sum();
    let mut best: Option<Split> = None;
    for axis in 0..leaf.lower.len() {
        let mut order = leaf.samples.clone();
        order.sort_by(|&a, &b| points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b)));
        // prefix sums of centered targets
        let mut s = 0.0;
        let mut s2 = 0.0;
        let total_s: f64 = order.iter().map(|&i| ys[i] - mean).sum();
        for cut in 1..n {
            let y = ys[order[cut - 1]] - mean;
            s += y;
            s2 += y * y;
            let (lo, hi) = (points[order[cut - 1]][axis], points[order[cut]][axis]);
            if cut < min || n - cut < min || lo == hi {
                continue;
            }
            let nl = cut as f64;
            let nr = (n - cut) as f64;
            let sr = total_s - s;
            let sse = (s2 - s * s / nl) + (total - s2 - sr * sr / nr);
            let gain = total - sse;
            if best.as_ref().is_none_or(|b| gain > b.gain) {
                best = Some(Split {
                    axis,
                    threshold: 0.5 * (lo + hi),
                    gain,
                    left: order[..cut].to_vec(),
                    right: order[cut..].to_vec(),
                });
            }
        }
    }
    best.filter(|b| b.gain > 1e-12 * total.max(f64::MIN_POSITIVE) && b.gain > 0.0)
}

/// Greedy best-first CART on `[0,1]^D`: split the leaf whose best midpoint
/// split lowers the squared error most, until `max_leaves` or no admissible
/// split remains.
pub fn fit_tree(points: &[Vec<f64>], ys: &[f64], dim: usize, max_leaves: usize, min_samples_leaf: usize) -> TreePartitioner {
    let mut leaves = vec![Leaf { lower: vec![0.0; dim], upper: vec![1.0; dim], samples: (0..points.len()).collect() }];
    let mut splits: Vec<Option<Split>> = vec![best_split(&leaves[0], points, ys, min_samples_leaf)];
    while leaves.len() < max_leaves.max(1) {
        let mut pick: Option<usize> = None;
        for (i, s) in splits.iter().enumerate() {
            if let Some(s) = s {
                if pick.is_none_or(|p| s.gain > splits[p].as_ref().map_or(0.0, |b| b.gain)) {
                    pick = Some(i);
                }
            }
        }
        let Some(i) = pick else { break };
        let split = splits[i].take().expect("picked leaf has a split");
        let parent = leaves[i].clone();
        let mut left = Leaf { lower: parent.lower.clone(), upper: parent.upper.clone(), samples: split.left };
        let mut right = Leaf { lower: parent.lower, upper: parent.upper, samples: split.right };
        left.upper[split.axis] = split.threshold;
        right.lower[split.axis] = split.threshold;
        splits[i] = best_split(&left, points, ys, min_samples_leaf);
        splits.insert(i + 1, best_split(&right, points, ys, min_samples_leaf));
        leaves[i] = left;
        leaves.insert(i + 1, right);
    }
    TreePartitioner { max_leaves, min_samples_leaf, leaves }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeuristicConfig {
    /// Shares budget, kernel, noise and confidence inputs with the main
    /// algorithm; its profile has `k = 0`.
    pub base: OptimizerConfig,
    pub min_samples_leaf: usize,
    /// Leaves allowed per observation: `max_leaves = max(2, ⌈n_e / divisor⌉)`.
    pub leaf_divisor: usize,
}

impl HeuristicConfig {
    pub fn new(
        kernel: KernelSpec,
        budget: usize,
        norm_bound: f64,
        noise: f64,
        delta: f64,
        holder_override: Option<f64>,
        alpha: f64,
    ) -> Result<Self, OptimizerError> {
        let base = OptimizerConfig::new(kernel, budget, norm_bound, noise, delta, holder_override)?;
        let l = match holder_override {
            Some(l) => l,
            None => holder_profile(&kernel, norm_bound, budget.max(2), None)?.holder_bound(),
        };
        let profile = SmoothnessProfile::new(0, alpha, l)?;
        Ok(Self { base: base.with_profile(profile), min_samples_leaf: 2, leaf_divisor: 3 })
    }

    pub fn max_leaves(&self, evaluations: usize) -> usize {
        2.max(evaluations.div_ceil(self.leaf_divisor.max(1)))
    }
}

#[derive(Debug, Clone)]
pub struct Heuristic {
    config: HeuristicConfig,
    beta: f64,
    gp: GpPosterior,
    cells: Vec<Cell>,
    points: Vec<Vec<f64>>,
    ys: Vec<f64>,
    beta_sigmas: Vec<f64>,
}

impl Heuristic {
    pub fn new(config: HeuristicConfig) -> Result<Self, OptimizerError> {
        let gp = GpPosterior::prior(config.base.kernel, config.base.lambda)?;
        Ok(Self {
            beta: config.base.beta(),
            cells: vec![Cell::unit(config.base.dim())],
            config,
            gp,
            points: Vec::new(),
            ys: Vec::new(),
            beta_sigmas: Vec::new(),
        })
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn step<R: Rng + ?Sized>(&mut self, oracle: &mut (impl Oracle + ?Sized), rng: &mut R) -> Result<RoundRecord, OptimizerError> {
        if self.finished() {
            return Err(OptimizerError::BudgetSpent);
        }
        let cfg = &self.config.base;
        let t = self.ys.len() + 1;
        let candidates: Vec<Vec<f64>> = self.cells.iter().map(|c| sample_uniform(c, rng)).collect();
        let moments = self.gp.predict_many(&candidates);
        let mut best = 0;
        let mut best_u = f64::NEG_INFINITY;
        for (i, (cell, (mu, var))) in self.cells.iter().zip(&moments).enumerate() {
            let u = ucb_terms(cell, *mu, var.sqrt(), t, cfg, false).u;
            if i == 0 || prefer(u, cell, best_u, &self.cells[best]) {
                best = i;
                best_u = u;
            }
        }
        let x = candidates[best].clone();
        let beta_sigma = self.beta * moments[best].1.sqrt();
        let cell = &self.cells[best];
        let b = crate::optimizer::b_t(cell.count(), t, cfg);
        let y = oracle.query(&x)?;
        let record = RoundRecord {
            round: t,
            action: Action::Evaluate,
            evaluations: t,
            cell_lower: cell.lower().to_vec(),
            cell_upper: cell.upper().to_vec(),
            cell_side: cell.side(),
            x: x.clone(),
            y: Some(y),
            ucb: best_u,
            beta_sigma,
            b_t: b,
            partition_size: self.cells.len(),
        };
        self.gp = self.gp.update(&x, y)?;
        self.points.push(x);
        self.ys.push(y);
        self.beta_sigmas.push(beta_sigma);
        let tree = fit_tree(
            &self.points,
            &self.ys,
            cfg.dim(),
            self.config.max_leaves(self.ys.len()),
            self.config.min_samples_leaf,
        );
        self.cells = tree.cells(&self.ys);
        Ok(record)
    }

    /// Evaluated point with the smallest `β σ_t(x_t)`; earliest on ties.
    pub fn recommend(&self) -> Result<Vec<f64>, OptimizerError> {
        let mut best: Option<usize> = None;
        for (i, v) in self.beta_sigmas.iter().enumerate() {
            if best.is_none_or(|b| *v < self.beta_sigmas[b]) {
                best = Some(i);
            }
        }
        best.map(|i| self.points[i].clone()).ok_or(OptimizerError::NoEvaluations)
    }
}

impl SequentialOptimizer for Heuristic {
    fn name(&self) -> &'static str {
        "heuristic"
    }

    fn next_round(&mut self, oracle: &mut dyn Oracle, rng: &mut dyn RngCore) -> Result<RoundRecord, OptimizerError> {
        self.step(oracle, rng)
    }

    fn finished(&self) -> bool {
        self.ys.len() >= self.config.base.budget
    }

    fn evaluation_count(&self) -> usize {
        self.ys.len()
    }

    fn current_recommendation(&self) -> Result<Vec<f64>, OptimizerError> {
        self.recommend()
    }
}

/// Run the heuristic to completion.
pub fn heuristic_run<O, R>(oracle: &mut O, config: HeuristicConfig, rng: &mut R) -> Result<(Vec<RoundRecord>, Vec<f64>), OptimizerError>
where
    O: Oracle + ?Sized,
    R: Rng + ?Sized,
{
    let mut h = Heuristic::new(config)?;
    let mut trace = Vec::new();
    while !h.finished() {
        trace.push(h.step(oracle, rng)?);
    }
    let rec = h.recommend()?;
    Ok((trace, rec))
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `E[max(f − y⁺ − ξ, 0)]` under `N(μ, σ²)`.
pub fn expected_improvement(mu: f64, sd: f64, best: f64, jitter: f64) -> f64 {
    let gap = mu - best - jitter;
    if sd <= 0.0 {
        return gap.max(0.0);
    }
    let z = gap / sd;
    gap * normal_cdf(z) + sd * normal_pdf(z)
}

/// `P(f > y⁺ + ξ)` under `N(μ, σ²)`.
pub fn probability_of_improvement(mu: f64, sd: f64, best: f64, jitter: f64) -> f64 {
    let gap = mu - best - jitter;
    if sd <= 0.0 {
        return if gap > 0.0 { 1.0 } else { 0.0 };
    }
    normal_cdf(gap / sd)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Acquisition {
    Ucb { beta: f64 },
    Ei { jitter: f64 },
    Pi { jitter: f64 },
}

impl Acquisition {
    pub fn name(&self) -> &'static str {
        match self {
            Acquisition::Ucb { .. } => "igpucb",
            Acquisition::Ei { .. } => "ei",
            Acquisition::Pi { .. } => "pi",
        }
    }

    /// Score at a point with posterior `(μ, σ)`; `best` is the incumbent
    /// value, ignored by UCB.
    pub fn score(&self, mu: f64, sd: f64, best: f64) -> f64 {
        match *self {
            Acquisition::Ucb { beta } => mu + beta * sd,
            Acquisition::Ei { jitter } => expected_improvement(mu, sd, best, jitter),
            Acquisition::Pi { jitter } => probability_of_improvement(mu, sd, best, jitter),
        }
    }
}

/// Index of the largest score, first index on ties.
pub fn argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        if best.is_none_or(|b| *s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

pub const DEFAULT_POOL_SIZE: usize = 500;
const PERTURBATIONS: usize = 16;
const PERTURBATION_SCALES: [f64; 2] = [0.02, 0.005];
const POLISH_ITERATIONS: usize = 24;

/// `pool_size·D` shifted Kronecker points followed by Gaussian
/// perturbations of `incumbent`, all inside the cube.
pub fn candidate_pool<R: Rng + ?Sized>(dim: usize, pool_size: usize, incumbent: Option<&[f64]>, rng: &mut R) -> Vec<Vec<f64>> {
    let shift: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
    let mut pool = kronecker_points(pool_size * dim, dim, &shift);
    if let Some(x) = incumbent {
        for j in 0..PERTURBATIONS {
            let scale = PERTURBATION_SCALES[j % PERTURBATION_SCALES.len()];
            pool.push(
                x.iter()
                    .map(|v| {
                        let e: f64 = StandardNormal.sample(rng);
                        (v + scale * e).clamp(0.0, 1.0)
                    })
                    .collect(),
            );
        }
    }
    pool
}

/// Golden-section maximization of `g` on `[a, b]`; returns the better of
/// the last two probes and its value.
pub fn golden_max(mut a: f64, mut b: f64, iterations: usize, mut g: impl FnMut(f64) -> f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut gc, mut gd) = (g(c), g(d));
    for _ in 0..iterations {
        if gc >= gd {
            b = d;
            d = c;
            gd = gc;
            c = b - inv_phi * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + inv_phi * (b - a);
            gd = g(d);
        }
    }
    if gc >= gd {
        (c, gc)
    } else {
        (d, gd)
    }
}

/// GP model with an acquisition rule maximized over a fresh pool each round.
#[derive(Debug, Clone)]
pub struct AcquisitionOptimizer {
    acquisition: Acquisition,
    budget: usize,
    dim: usize,
    pool_size: usize,
    /// `β` reported in traces; UCB uses its own.
    beta: f64,
    gp: GpPosterior,
    points: Vec<Vec<f64>>,
    ys: Vec<f64>,
    incumbent: Option<usize>,
}

impl AcquisitionOptimizer {
    pub fn new(acquisition: Acquisition, config: &OptimizerConfig) -> Result<Self, OptimizerError> {
        Ok(Self {
            acquisition,
            budget: config.budget,
            dim: config.dim(),
            pool_size: DEFAULT_POOL_SIZE,
            beta: config.beta(),
            gp: GpPosterior::prior(config.kernel, config.lambda)?,
            points: Vec::new(),
            ys: Vec::new(),
            incumbent: None,
        })
    }

    pub fn with_pool_size(mut self, pool_size: usize) -> Self {
        self.pool_size = pool_size.max(1);
        self
    }

    pub fn gp(&self) -> &GpPosterior {
        &self.gp
    }

    fn best_value(&self) -> f64 {
        self.incumbent.map_or(f64::NEG_INFINITY, |i| self.ys[i])
    }

    /// Next query point and its acquisition value.
    pub fn propose<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, f64) {
        let needs_data = !matches!(self.acquisition, Acquisition::Ucb { .. });
        if needs_data && self.ys.is_empty() {
            let x: Vec<f64> = (0..self.dim).map(|_| rng.random::<f64>()).collect();
            return (x, f64::NAN);
        }
        let incumbent = self.incumbent.map(|i| self.points[i].as_slice());
        let pool = candidate_pool(self.dim, self.pool_size, incumbent, rng);
        let best = self.best_value();
        let scores: Vec<f64> = self
            .gp
            .predict_many(&pool)
            .into_iter()
            .map(|(mu, var)| self.acquisition.score(mu, var.sqrt(), best))
            .collect();
        let i = argmax(&scores).expect("pool is never empty");
        let mut x = pool[i].clone();
        let mut value = scores[i];
        if let Acquisition::Ucb { .. } = self.acquisition {
            let half = 1.0 / self.pool_size as f64;
            for axis in 0..self.dim {
                let lo = (x[axis] - half).max(0.0);
                let hi = (x[axis] + half).min(1.0);
                let mut probe = x.clone();
                let (s, v) = golden_max(lo, hi, POLISH_ITERATIONS, |s| {
                    probe[axis] = s;
                    let (mu, var) = self.gp.predict(&probe);
                    self.acquisition.score(mu, var.sqrt(), best)
                });
                if v > value {
                    x[axis] = s;
                    value = v;
                }
            }
        }
        (x, value)
    }

    pub fn step<R: Rng + ?Sized>(&mut self, oracle: &mut (impl Oracle + ?Sized), rng: &mut R) -> Result<RoundRecord, OptimizerError> {
        if self.finished() {
            return Err(OptimizerError::BudgetSpent);
        }
        let (x, value) = self.propose(rng);
        let beta_sigma = match self.acquisition {
            Acquisition::Ucb { beta } => beta * self.gp.std_dev(&x),
            _ => f64::NAN,
        };
        let y = oracle.query(&x)?;
        self.gp = self.gp.update(&x, y)?;
        self.points.push(x.clone());
        self.ys.push(y);
        if self.incumbent.is_none_or(|i| y > self.ys[i]) {
            self.incumbent = Some(self.ys.len() - 1);
        }
        Ok(whole_cube_record(self.ys.len(), self.dim, x, y, value, beta_sigma))
    }

    pub fn recommend(&self) -> Result<Vec<f64>, OptimizerError> {
        self.incumbent.map(|i| self.points[i].clone()).ok_or(OptimizerError::NoEvaluations)
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

fn whole_cube_record(t: usize, dim: usize, x: Vec<f64>, y: f64, ucb: f64, beta_sigma: f64) -> RoundRecord {
    RoundRecord {
        round: t,
        action: Action::Evaluate,
        evaluations: t,
        cell_lower: vec![0.0; dim],
        cell_upper: vec![1.0; dim],
        cell_side: 1.0,
        x,
        y: Some(y),
        ucb,
        beta_sigma,
        b_t: f64::NAN,
        partition_size: 1,
    }
}

impl SequentialOptimizer for AcquisitionOptimizer {
    fn name(&self) -> &'static str {
        self.acquisition.name()
    }

    fn next_round(&mut self, oracle: &mut dyn Oracle, rng: &mut dyn RngCore) -> Result<RoundRecord, OptimizerError> {
        self.step(oracle, rng)
    }

    fn finished(&self) -> bool {
        self.ys.len() >= self.budget
    }

    fn evaluation_count(&self) -> usize {
        self.ys.len()
    }

    fn current_recommendation(&self) -> Result<Vec<f64>, OptimizerError> {
        self.recommend()
    }
}

/// Uniform point of the unit cube.
pub fn random_step<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    (0..dim).map(|_| rng.random::<f64>()).collect()
}

#[derive(Debug, Clone)]
pub struct RandomSearch {
    budget: usize,
    dim: usize,
    points: Vec<Vec<f64>>,
    ys: Vec<f64>,
    incumbent: Option<usize>,
}

impl RandomSearch {
    pub fn new(dim: usize, budget: usize) -> Self {
        Self { budget, dim, points: Vec::new(), ys: Vec::new(), incumbent: None }
    }
}

impl SequentialOptimizer for RandomSearch {
    fn name(&self) -> &'static str {
        "random"
    }

    fn next_round(&mut self, oracle: &mut dyn Oracle, rng: &mut dyn RngCore) -> Result<RoundRecord, OptimizerError> {
        if self.finished() {
            return Err(OptimizerError::BudgetSpent);
        }
        let x = random_step(self.dim, rng);
        let y = oracle.query(&x)?;
        self.points.push(x.clone());
        self.ys.push(y);
        if self.incumbent.is_none_or(|i| y > self.ys[i]) {
            self.incumbent = Some(self.ys.len() - 1);
        }
        Ok(whole_cube_record(self.ys.len(), self.dim, x, y, f64::NAN, f64::NAN))
    }

    fn finished(&self) -> bool {
        self.ys.len() >= self.budget
    }

    fn evaluation_count(&self) -> usize {
        self.ys.len()
    }

    fn current_recommendation(&self) -> Result<Vec<f64>, OptimizerError> {
        self.incumbent.map(|i| self.points[i].clone()).ok_or(OptimizerError::NoEvaluations)
    }
}
