//! The multi-scale GP-UCB loop over an adaptively refined partition.
//!
//! Each round draws one uniform candidate per active cell and scores it by
//! `U = min{u⁽⁰⁾, u⁽¹⁾, u⁽²⁾}`:
//!
//! * `u⁽⁰⁾` is inherited from the refinement that created the cell,
//! * `u⁽¹⁾ = μ(x) + β σ(x) + L (√D r)^α₁` comes from the GP surrogate,
//! * `u⁽²⁾ = μ̂(E) + b_t(E) + L (√D r)^α₁` from the cell's empirical mean.
//!
//! The best cell is then either refined (three guards) or evaluated.

use std::cmp::Ordering;
use std::f64::consts::PI;

use rand::{Rng, RngCore};
use thiserror::Error;

use crate::geometry::{kronecker_points, partition, sample_uniform, Cell, GeometryError};
use crate::gp::{beta, GpError, GpPosterior};
use crate::kernels::{
    greedy_info_gain, holder_profile, info_gain_bound, rho0, KernelError, KernelFamily, KernelSpec,
    SmoothnessProfile,
};
use crate::local_poly::{default_candidate_count, max_err, LocalEstimator, LpError};

#[derive(Debug, Clone, PartialEq, Error)]
#[error("oracle failed: {0}")]
pub struct OracleError(pub String);

/// Noisy zero-order access to the objective.
pub trait Oracle {
    fn query(&mut self, x: &[f64]) -> Result<f64, OracleError>;
}

impl<F: FnMut(&[f64]) -> f64> Oracle for F {
    fn query(&mut self, x: &[f64]) -> Result<f64, OracleError> {
        Ok(self(x))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimizerError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    LocalPoly(#[from] LpError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("round cap {cap} reached after {evaluations} of {budget} evaluations")]
    RoundCapExceeded { cap: usize, evaluations: usize, budget: usize },
    #[error("evaluation budget already spent")]
    BudgetSpent,
    #[error("no evaluations recorded")]
    NoEvaluations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub budget: usize,
    pub kernel: KernelSpec,
    pub norm_bound: f64,
    pub profile: SmoothnessProfile,
    pub noise: f64,
    pub delta: f64,
    /// Information-gain value behind `β_n`.
    pub gamma: f64,
    pub rho0: f64,
    /// GP regularizer.
    pub lambda: f64,
    pub max_rounds: usize,
    /// Interior candidates used by the error maximization.
    pub max_err_candidates: usize,
}

/// Largest number of rounds the algorithm can need, `(n/2)^D + n`.
pub fn round_bound(budget: usize, dim: usize) -> f64 {
    (budget as f64 / 2.0).powi(dim as i32) + budget as f64
}

/// `γ_n` from the analytic rate when known, otherwise from greedy
/// maximum-variance selection on a low-discrepancy grid.
pub fn information_gain(kernel: &KernelSpec, budget: usize, noise: f64) -> Result<f64, KernelError> {
    match kernel.family() {
        KernelFamily::SquaredExponential | KernelFamily::Matern { .. } => {
            info_gain_bound(kernel, budget.max(2) as f64)
        }
        _ => {
            let grid = kronecker_points((4 * budget).max(256), kernel.dim(), &vec![0.5; kernel.dim()]);
            Ok(greedy_info_gain(kernel, &grid, budget, noise)?.gamma_bound)
        }
    }
}

impl OptimizerConfig {
    /// Configuration with every derived input filled in: Hölder profile,
    /// `γ_n`, `ρ₀ ≥ 1/n`, `λ = σ²` and the round cap.
    pub fn new(
        kernel: KernelSpec,
        budget: usize,
        norm_bound: f64,
        noise: f64,
        delta: f64,
        holder_override: Option<f64>,
    ) -> Result<Self, OptimizerError> {
        if budget == 0 {
            return Err(OptimizerError::Config("budget must be at least 1".into()));
        }
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(OptimizerError::Config(format!("noise scale must be non-negative, got {noise}")));
        }
        let profile = holder_profile(&kernel, norm_bound, budget.max(2), holder_override)?;
        let lambda = (noise * noise).max(1e-6);
        let gamma = information_gain(&kernel, budget, lambda.sqrt())?;
        let mut config = Self {
            budget,
            kernel,
            norm_bound,
            profile,
            noise,
            delta,
            gamma,
            rho0: 1.0,
            lambda,
            max_rounds: 0,
            max_err_candidates: default_candidate_count(profile.k(), kernel.dim()),
        };
        config.max_rounds = (round_bound(budget, kernel.dim()) + 16.0).min(usize::MAX as f64 / 2.0) as usize;
        config.refresh_rho0();
        config.validate()?;
        Ok(config)
    }

    /// Replace the smoothness profile and recompute the dependent `ρ₀`.
    pub fn with_profile(mut self, profile: SmoothnessProfile) -> Self {
        self.profile = profile;
        self.max_err_candidates = default_candidate_count(profile.k(), self.kernel.dim());
        self.refresh_rho0();
        self
    }

    fn refresh_rho0(&mut self) {
        let raw = rho0(&self.profile, self.gamma, self.budget, self.kernel.dim());
        self.rho0 = raw.max(1.0 / self.budget as f64).min(1.0);
    }

    pub fn validate(&self) -> Result<(), OptimizerError> {
        let bad = |m: String| Err(OptimizerError::Config(m));
        if self.budget == 0 {
            return bad("budget must be at least 1".into());
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if !(self.norm_bound > 0.0) {
            return bad(format!("norm bound must be positive, got {}", self.norm_bound));
        }
        if !(self.lambda > 0.0) {
            return bad(format!("regularizer must be positive, got {}", self.lambda));
        }
        if !(self.rho0 >= 1.0 / self.budget as f64 && self.rho0 <= 1.0) {
            return bad(format!("rho0 must lie in [1/n, 1], got {}", self.rho0));
        }
        if (self.max_rounds as f64) < round_bound(self.budget, self.kernel.dim()) {
            return bad(format!("max_rounds {} is below (n/2)^D + n", self.max_rounds));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.kernel.dim()
    }

    /// `β_n`, fixed for the whole run.
    pub fn beta(&self) -> f64 {
        beta(self.gamma, self.norm_bound, self.noise, self.delta)
    }

    /// `L (√D r)^p`.
    pub fn variation(&self, side: f64, exponent: f64) -> f64 {
        self.profile.holder_bound() * ((self.dim() as f64).sqrt() * side).powf(exponent)
    }
}

/// `δ_t = 2δ / (n^D π² t²)`.
pub fn delta_t(t: usize, budget: usize, delta: f64, dim: usize) -> f64 {
    2.0 * delta / ((budget as f64).powi(dim as i32) * PI * PI * (t as f64).powi(2))
}

fn log_inv_delta_t(t: usize, budget: usize, delta: f64, dim: usize) -> f64 {
    dim as f64 * (budget as f64).ln() + 2.0 * PI.ln() + 2.0 * (t as f64).ln() - (2.0 * delta).ln()
}

/// Confidence width of the cell mean, `σ √(2 ln(1/δ_t) / n_E)`; `+∞` for an
/// empty cell.
pub fn b_t(count: usize, t: usize, config: &OptimizerConfig) -> f64 {
    if count == 0 {
        return f64::INFINITY;
    }
    let log_term = log_inv_delta_t(t, config.budget, config.delta, config.dim());
    config.noise * (2.0 * log_term / count as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UcbTerms {
    pub u: f64,
    pub u1: f64,
    pub u2: f64,
}

/// Upper confidence terms of `cell` at a candidate with posterior mean `mu`
/// and standard deviation `sd`. `include_u0 = false` drops the inherited
/// bound.
pub fn ucb_terms(
    cell: &Cell,
    mu: f64,
    sd: f64,
    t: usize,
    config: &OptimizerConfig,
    include_u0: bool,
) -> UcbTerms {
    let inflation = config.variation(cell.side(), config.profile.alpha1());
    let u1 = mu + config.beta() * sd + inflation;
    let u2 = match cell.mean() {
        Some(m) => m + b_t(cell.count(), t, config) + inflation,
        None => f64::INFINITY,
    };
    let mut u = u1.min(u2);
    if include_u0 {
        u = u.min(cell.u0);
    }
    UcbTerms { u, u1, u2 }
}

/// Strict order for candidate cells: larger `U`, then earlier creation, then
/// lexicographically smaller lower corner.
pub fn prefer(a_u: f64, a: &Cell, b_u: f64, b: &Cell) -> bool {
    match a_u.partial_cmp(&b_u) {
        Some(Ordering::Greater) => return true,
        Some(Ordering::Less) => return false,
        _ => {}
    }
    match a.created_at.cmp(&b.created_at) {
        Ordering::Less => return true,
        Ordering::Greater => return false,
        Ordering::Equal => {}
    }
    a.lower().partial_cmp(b.lower()) == Some(Ordering::Less)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Evaluate,
    /// Halving triggered by a small GP width.
    ExpandFlag1a,
    /// Halving triggered by a small empirical-mean width.
    ExpandFlag1b,
    /// Local-polynomial refinement below `ρ₀`.
    ExpandFlag2,
}

impl Action {
    pub fn as_str(&self) -> &'static str {
        match self {
            Action::Evaluate => "Evaluate",
            Action::ExpandFlag1a => "ExpandFlag1a",
            Action::ExpandFlag1b => "ExpandFlag1b",
            Action::ExpandFlag2 => "ExpandFlag2",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub action: Action,
    /// Evaluations completed after this round.
    pub evaluations: usize,
    pub cell_lower: Vec<f64>,
    pub cell_upper: Vec<f64>,
    pub cell_side: f64,
    pub x: Vec<f64>,
    pub y: Option<f64>,
    /// `U_{t,E_t}`, the largest upper bound over the partition.
    pub ucb: f64,
    pub beta_sigma: f64,
    pub b_t: f64,
    /// Active cells after the round.
    pub partition_size: usize,
}

/// Refinement audit entry: the cell's side and evaluation count when it was
/// split.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionEvent {
    pub round: usize,
    pub action: Action,
    pub side: f64,
    pub count: usize,
    pub children: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExpandFlag {
    /// Halve the cell; every child inherits `u⁽⁰⁾ = val`.
    Halve { val: f64 },
    /// Refine with local polynomial bounds.
    LocalPoly,
}

/// Child side after a local-polynomial refinement:
/// `min{r/2, (err/L)^(1/α₁) / √D}`.
pub fn refined_side(side: f64, err: f64, profile: &SmoothnessProfile, dim: usize) -> f64 {
    let geometric = (err / profile.holder_bound()).powf(1.0 / profile.alpha1()) / (dim as f64).sqrt();
    (side / 2.0).min(geometric)
}

/// Refine `cell` and hand its observations to the children.
///
/// With [`ExpandFlag::LocalPoly`] the children have side
/// `min{r/2, (err/L)^(1/α₁)/√D}` and bound `f̂(x_F) + 2 err`, where `f̂` is
/// the local polynomial fitted on the parent's data (the data `err` was
/// computed for) and evaluated at the child's center.
pub fn expand_and_bound(
    cell: &Cell,
    flag: ExpandFlag,
    data: &[(Vec<f64>, f64)],
    t: usize,
    config: &OptimizerConfig,
) -> Result<Vec<Cell>, OptimizerError> {
    let flag = match flag {
        ExpandFlag::LocalPoly if cell.count() == 0 => ExpandFlag::Halve { val: f64::INFINITY },
        f => f,
    };
    let mut children = match flag {
        ExpandFlag::Halve { val } => {
            let mut kids = partition(cell, cell.side() / 2.0, t)?;
            for k in &mut kids {
                k.u0 = val;
            }
            kids
        }
        ExpandFlag::LocalPoly => {
            let points: Vec<&[f64]> = cell.observations.iter().map(|&i| data[i].0.as_slice()).collect();
            let ys: Vec<f64> = cell.observations.iter().map(|&i| data[i].1).collect();
            let dt = delta_t(t, config.budget, config.delta, config.dim());
            let err = max_err(cell, &points, &config.profile, config.noise, dt, config.max_err_candidates)?;
            let side = refined_side(cell.side(), err, &config.profile, config.dim());
            let mut kids = partition(cell, side, t)?;
            let estimator = LocalEstimator::new(cell, &points, config.profile.k())?;
            for k in &mut kids {
                let f_hat = estimator.weights_at(&k.center()).estimate(&ys);
                k.u0 = f_hat + 2.0 * err;
            }
            kids
        }
    };
    for &i in &cell.observations {
        let x = &data[i].0;
        if let Some(child) = children.iter_mut().find(|c| c.owns(x)) {
            child.record(i, data[i].1);
        } else if let Some(child) = children.iter_mut().find(|c| c.contains(x)) {
            child.record(i, data[i].1);
        }
    }
    Ok(children)
}

/// Recommended point and which rule produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Recommendation {
    pub point: Vec<f64>,
    /// True when the center of the smallest cell was returned.
    pub from_smallest_cell: bool,
}

#[derive(Debug, Clone)]
struct EvaluationNote {
    x: Vec<f64>,
    beta_sigma: f64,
}

/// Mutable state of one optimization run.
#[derive(Debug, Clone)]
pub struct LpGpUcb {
    config: OptimizerConfig,
    beta: f64,
    gp: GpPosterior,
    cells: Vec<Cell>,
    data: Vec<(Vec<f64>, f64)>,
    round: usize,
    evaluations: Vec<EvaluationNote>,
    expansions: Vec<ExpansionEvent>,
}

impl LpGpUcb {
    pub fn new(config: OptimizerConfig) -> Result<Self, OptimizerError> {
        config.validate()?;
        let gp = GpPosterior::prior(config.kernel, config.lambda)?;
        Ok(Self {
            beta: config.beta(),
            cells: vec![Cell::unit(config.dim())],
            config,
            gp,
            data: Vec::new(),
            round: 0,
            evaluations: Vec::new(),
            expansions: Vec::new(),
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn data(&self) -> &[(Vec<f64>, f64)] {
        &self.data
    }

    pub fn gp(&self) -> &GpPosterior {
        &self.gp
    }

    pub fn rounds(&self) -> usize {
        self.round
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations.len()
    }

    pub fn expansions(&self) -> &[ExpansionEvent] {
        &self.expansions
    }

    pub fn is_done(&self) -> bool {
        self.evaluations.len() >= self.config.budget
    }

    /// One round: select a cell, then refine it or evaluate its candidate.
    pub fn step<O, R>(&mut self, oracle: &mut O, rng: &mut R) -> Result<RoundRecord, OptimizerError>
    where
        O: Oracle + ?Sized,
        R: Rng + ?Sized,
    {
        if self.is_done() {
            return Err(OptimizerError::BudgetSpent);
        }
        if self.round >= self.config.max_rounds {
            return Err(OptimizerError::RoundCapExceeded {
                cap: self.config.max_rounds,
                evaluations: self.evaluations.len(),
                budget: self.config.budget,
            });
        }
        let t = self.round + 1;
        let candidates: Vec<Vec<f64>> = self.cells.iter().map(|c| sample_uniform(c, rng)).collect();
        let moments = self.gp.predict_many(&candidates);

        let mut best = 0;
        let mut best_terms = UcbTerms { u: f64::NEG_INFINITY, u1: 0.0, u2: 0.0 };
        for (i, (cell, (mu, var))) in self.cells.iter().zip(&moments).enumerate() {
            let terms = ucb_terms(cell, *mu, var.sqrt(), t, &self.config, true);
            if i == 0 || prefer(terms.u, cell, best_terms.u, &self.cells[best]) {
                best = i;
                best_terms = terms;
            }
        }

        let x = candidates[best].clone();
        let sd = moments[best].1.sqrt();
        let beta_sigma = self.beta * sd;
        let cell = &self.cells[best];
        let side = cell.side();
        let count = cell.count();
        let width = b_t(count, t, &self.config);
        let lipschitz = self.config.variation(side, self.config.profile.alpha1());
        let holder = self.config.variation(side, self.config.profile.order());
        let above = side >= self.config.rho0;
        let refinable = side >= 1.0 / self.config.budget as f64 && side < self.config.rho0;

        let decision = if beta_sigma < lipschitz && above {
            Some((Action::ExpandFlag1a, ExpandFlag::Halve { val: best_terms.u1 }))
        } else if width <= lipschitz && above {
            Some((Action::ExpandFlag1b, ExpandFlag::Halve { val: best_terms.u2 }))
        } else if width <= holder && refinable {
            Some((Action::ExpandFlag2, ExpandFlag::LocalPoly))
        } else {
            None
        };

        let record_base = |action, y, evaluations, partition_size| RoundRecord {
            round: t,
            action,
            evaluations,
            cell_lower: cell.lower().to_vec(),
            cell_upper: cell.upper().to_vec(),
            cell_side: side,
            x: x.clone(),
            y,
            ucb: best_terms.u,
            beta_sigma,
            b_t: width,
            partition_size,
        };

        let record = match decision {
            Some((action, flag)) => {
                let children = expand_and_bound(cell, flag, &self.data, t, &self.config)?;
                let n_children = children.len();
                self.expansions.push(ExpansionEvent { round: t, action, side, count, children: n_children });
                let evaluations = self.evaluations.len();
                let size = self.cells.len() - 1 + n_children;
                let rec = record_base(action, None, evaluations, size);
                self.cells.remove(best);
                self.cells.extend(children);
                rec
            }
            None => {
                let y = oracle.query(&x)?;
                let rec = record_base(Action::Evaluate, Some(y), self.evaluations.len() + 1, self.cells.len());
                self.gp = self.gp.update(&x, y)?;
                let index = self.data.len();
                self.data.push((x.clone(), y));
                self.cells[best].record(index, y);
                self.evaluations.push(EvaluationNote { x, beta_sigma });
                rec
            }
        };
        self.round = t;
        Ok(record)
    }

    /// Center of the smallest cell when its variation bound is below the
    /// smallest recorded `β σ_t(x_t)`, otherwise the evaluated point that
    /// attained that minimum.
    pub fn recommend(&self) -> Result<Recommendation, OptimizerError> {
        let (tau, xi) = self
            .evaluations
            .iter()
            .enumerate()
            .fold(None, |acc: Option<(usize, f64)>, (i, e)| match acc {
                Some((_, v)) if v <= e.beta_sigma => acc,
                _ => Some((i, e.beta_sigma)),
            })
            .ok_or(OptimizerError::NoEvaluations)?;
        let smallest = self
            .cells
            .iter()
            .reduce(|a, b| {
                if b.side() < a.side() || (b.side() == a.side() && b.created_at < a.created_at) {
                    b
                } else {
                    a
                }
            })
            .expect("partition is never empty");
        if self.config.variation(smallest.side(), self.config.profile.alpha1()) <= xi {
            Ok(Recommendation { point: smallest.center(), from_smallest_cell: true })
        } else {
            Ok(Recommendation { point: self.evaluations[tau].x.clone(), from_smallest_cell: false })
        }
    }
}

/// Common driver interface over every optimizer in the crate.
pub trait SequentialOptimizer {
    fn name(&self) -> &'static str;
    fn next_round(&mut self, oracle: &mut dyn Oracle, rng: &mut dyn RngCore) -> Result<RoundRecord, OptimizerError>;
    fn finished(&self) -> bool;
    fn evaluation_count(&self) -> usize;
    /// Point the optimizer would report if stopped now.
    fn current_recommendation(&self) -> Result<Vec<f64>, OptimizerError>;
    /// Refinements performed so far; empty for optimizers without a
    /// refinement rule.
    fn expansion_events(&self) -> &[ExpansionEvent] {
        &[]
    }
}

impl SequentialOptimizer for LpGpUcb {
    fn name(&self) -> &'static str {
        "lpgpucb"
    }

    fn next_round(&mut self, oracle: &mut dyn Oracle, rng: &mut dyn RngCore) -> Result<RoundRecord, OptimizerError> {
        self.step(oracle, rng)
    }

    fn finished(&self) -> bool {
        self.is_done()
    }

    fn evaluation_count(&self) -> usize {
        self.evaluations()
    }

    fn current_recommendation(&self) -> Result<Vec<f64>, OptimizerError> {
        self.recommend().map(|r| r.point)
    }

    fn expansion_events(&self) -> &[ExpansionEvent] {
        &self.expansions
    }
}

/// Result of a complete run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub recommendation: Recommendation,
    pub trace: Vec<RoundRecord>,
    pub expansions: Vec<ExpansionEvent>,
}

/// Step until the budget is spent, then recommend.
pub fn run<O, R>(oracle: &mut O, config: OptimizerConfig, rng: &mut R) -> Result<RunOutcome, OptimizerError>
where
    O: Oracle + ?Sized,
    R: Rng + ?Sized,
{
    let mut state = LpGpUcb::new(config)?;
    let mut trace = Vec::new();
    while !state.is_done() {
        trace.push(state.step(oracle, rng)?);
    }
    Ok(RunOutcome {
        recommendation: state.recommend()?,
        expansions: state.expansions.clone(),
        trace,
    })
}
