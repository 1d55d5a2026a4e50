//! Stationary isotropic kernels, Hölder smoothness profiles and
//! information-gain bounds.
//!
//! Every kernel here is normalized so that `K(0) = 1` and depends on the
//! inputs only through the Euclidean distance `r = ‖x − z‖`.

use std::f64::consts::{E, LN_2};

use nalgebra::DMatrix;
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("invalid kernel parameter: {0}")]
    InvalidParameter(String),
    #[error("no analytic information-gain bound for the {0} kernel; use greedy_info_gain")]
    NoAnalyticBound(&'static str),
    #[error("greedy budget {budget} exceeds grid size {grid}")]
    BudgetExceedsGrid { budget: usize, grid: usize },
}

/// Kernel family together with its family-specific shape parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelFamily {
    SquaredExponential,
    /// Matérn with smoothness `nu`.
    Matern { nu: f64 },
    /// Rational quadratic with shape `a`.
    RationalQuadratic { a: f64 },
    /// Gamma exponential with exponent `a ∈ (0, 2]`.
    GammaExponential { a: f64 },
    /// Compactly supported piecewise polynomial of order `q ∈ {0, 1}`.
    PiecewisePolynomial { q: u32 },
}

impl KernelFamily {
    pub fn name(&self) -> &'static str {
        match self {
            KernelFamily::SquaredExponential => "se",
            KernelFamily::Matern { .. } => "matern",
            KernelFamily::RationalQuadratic { .. } => "rq",
            KernelFamily::GammaExponential { .. } => "ge",
            KernelFamily::PiecewisePolynomial { .. } => "pp",
        }
    }
}

/// A validated kernel: family, lengthscale and input dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    family: KernelFamily,
    lengthscale: f64,
    dim: usize,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, lengthscale: f64, dim: usize) -> Result<Self, KernelError> {
        let bad = |msg: String| Err(KernelError::InvalidParameter(msg));
        if !(lengthscale > 0.0 && lengthscale.is_finite()) {
            return bad(format!("lengthscale must be positive, got {lengthscale}"));
        }
        if dim == 0 {
            return bad("dimension must be at least 1".into());
        }
        match family {
            KernelFamily::SquaredExponential => {}
            KernelFamily::Matern { nu } => {
                if !(nu > 0.0 && nu.is_finite()) {
                    return bad(format!("Matérn nu must be positive, got {nu}"));
                }
            }
            KernelFamily::RationalQuadratic { a } => {
                if !(a > 0.0 && a.is_finite()) {
                    return bad(format!("RQ shape a must be positive, got {a}"));
                }
            }
            KernelFamily::GammaExponential { a } => {
                if !(a > 0.0 && a <= 2.0) {
                    return bad(format!("GE exponent must lie in (0, 2], got {a}"));
                }
            }
            KernelFamily::PiecewisePolynomial { q } => {
                if q > 1 {
                    return bad(format!("PP order q must be 0 or 1, got {q}"));
                }
            }
        }
        Ok(Self { family, lengthscale, dim })
    }

    pub fn se(lengthscale: f64, dim: usize) -> Result<Self, KernelError> {
        Self::new(KernelFamily::SquaredExponential, lengthscale, dim)
    }

    pub fn matern(nu: f64, lengthscale: f64, dim: usize) -> Result<Self, KernelError> {
        Self::new(KernelFamily::Matern { nu }, lengthscale, dim)
    }

    pub fn rq(a: f64, lengthscale: f64, dim: usize) -> Result<Self, KernelError> {
        Self::new(KernelFamily::RationalQuadratic { a }, lengthscale, dim)
    }

    pub fn ge(a: f64, lengthscale: f64, dim: usize) -> Result<Self, KernelError> {
        Self::new(KernelFamily::GammaExponential { a }, lengthscale, dim)
    }

    pub fn pp(q: u32, lengthscale: f64, dim: usize) -> Result<Self, KernelError> {
        Self::new(KernelFamily::PiecewisePolynomial { q }, lengthscale, dim)
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Same kernel with a different lengthscale.
    pub fn with_lengthscale(&self, lengthscale: f64) -> Result<Self, KernelError> {
        Self::new(self.family, lengthscale, self.dim)
    }

    /// Exponent `j = ⌊D/2⌋ + q + 1` of the piecewise-polynomial kernel.
    pub fn pp_exponent(&self) -> Option<u32> {
        match self.family {
            KernelFamily::PiecewisePolynomial { q } => Some(self.dim as u32 / 2 + q + 1),
            _ => None,
        }
    }

    /// Covariance at distance `r ≥ 0`.
    pub fn eval(&self, r: f64) -> f64 {
        debug_assert!(r >= 0.0);
        let theta = self.lengthscale;
        match self.family {
            KernelFamily::SquaredExponential => (-r * r / (2.0 * theta * theta)).exp(),
            KernelFamily::Matern { nu } => matern(nu, theta, r),
            KernelFamily::RationalQuadratic { a } => (1.0 + r * r / (2.0 * a * theta)).powf(-a),
            KernelFamily::GammaExponential { a } => (-(r / theta).powf(a)).exp(),
            KernelFamily::PiecewisePolynomial { q } => {
                let j = self.pp_exponent().unwrap_or(1) as i32;
                let s = r / theta;
                let base = (1.0 - s).max(0.0);
                if q == 0 {
                    base.powi(j)
                } else {
                    base.powi(j + 1) * ((j as f64 + 1.0) * s + 1.0)
                }
            }
        }
    }

    /// Covariance between two points.
    pub fn cov(&self, x: &[f64], z: &[f64]) -> f64 {
        self.eval(euclidean(x, z))
    }

    /// Gram matrix `G[i][j] = K(‖x_i − x_j‖)`.
    pub fn gram(&self, points: &[Vec<f64>]) -> DMatrix<f64> {
        let n = points.len();
        let mut g = DMatrix::zeros(n, n);
        for i in 0..n {
            g[(i, i)] = self.eval(0.0);
            for j in 0..i {
                let v = self.cov(&points[i], &points[j]);
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        g
    }
}

pub fn euclidean(x: &[f64], z: &[f64]) -> f64 {
    x.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn matern(nu: f64, theta: f64, r: f64) -> f64 {
    let s = r / theta;
    if nu == 0.5 {
        (-s).exp()
    } else if nu == 1.5 {
        let u = 3f64.sqrt() * s;
        (1.0 + u) * (-u).exp()
    } else if nu == 2.5 {
        let u = 5f64.sqrt() * s;
        (1.0 + u + u * u / 3.0) * (-u).exp()
    } else {
        matern_bessel(nu, theta, r)
    }
}

/// Matérn covariance through the modified Bessel function of the second
/// kind, valid for every `nu > 0`.
pub fn matern_bessel(nu: f64, lengthscale: f64, r: f64) -> f64 {
    if r == 0.0 {
        return 1.0;
    }
    let x = (2.0 * nu).sqrt() * r / lengthscale;
    let log_val = (1.0 - nu) * LN_2 - ln_gamma(nu) + nu * x.ln() + ln_bessel_k(nu, x);
    log_val.exp().clamp(0.0, 1.0)
}

/// Modified Bessel function of the second kind `K_nu(x)` for `x > 0`.
pub fn bessel_k(nu: f64, x: f64) -> f64 {
    ln_bessel_k(nu, x).exp()
}

/// `ln K_nu(x)` from `K_nu(x) = ∫₀^∞ exp(−x cosh t) cosh(nu t) dt`.
///
/// The integrand is entire and doubly-exponentially decaying, so the
/// trapezoid rule converges geometrically in `1/h`. Everything is summed in
/// log space so tiny `x` (where `K_nu` overflows) stays finite.
pub fn ln_bessel_k(nu: f64, x: f64) -> f64 {
    assert!(x > 0.0, "bessel_k requires x > 0");
    let nu = nu.abs();
    let log_term = |t: f64| -> f64 {
        // ln cosh(nu t) without overflow
        let nt = nu * t;
        let ln_cosh = nt + (-2.0 * nt).exp().ln_1p() - LN_2;
        -x * t.cosh() + ln_cosh
    };
    let peak = (nu / x).asinh();
    let h = (0.25 / (x * x + nu * nu).sqrt().sqrt()).min(0.1);

    let mut terms = Vec::with_capacity(256);
    let first = log_term(0.0) - LN_2;
    terms.push(first);
    let mut max_log = first;
    let mut j = 1usize;
    loop {
        let t = j as f64 * h;
        let lt = log_term(t);
        terms.push(lt);
        if lt > max_log {
            max_log = lt;
        }
        if t > peak && lt < max_log - 45.0 {
            break;
        }
        j += 1;
    }
    let sum: f64 = terms.iter().map(|lt| (lt - max_log).exp()).sum();
    max_log + sum.ln() + h.ln()
}

/// Hölder parameters `(k, α)` and constant bound `L`.
///
/// `α1 = max{α, min{1, k}}` is derived on demand and never stored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothnessProfile {
    k: u32,
    alpha: f64,
    holder_bound: f64,
}

impl SmoothnessProfile {
    pub fn new(k: u32, alpha: f64, holder_bound: f64) -> Result<Self, KernelError> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(KernelError::InvalidParameter(format!(
                "Hölder exponent must lie in (0, 1], got {alpha}"
            )));
        }
        if !(holder_bound > 0.0 && holder_bound.is_finite()) {
            return Err(KernelError::InvalidParameter(format!(
                "Hölder constant must be positive, got {holder_bound}"
            )));
        }
        Ok(Self { k, alpha, holder_bound })
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// The Hölder norm bound `L`.
    pub fn holder_bound(&self) -> f64 {
        self.holder_bound
    }

    pub fn alpha1(&self) -> f64 {
        self.alpha.max((self.k.min(1)) as f64)
    }

    /// `k + α`, the polynomial approximation order.
    pub fn order(&self) -> f64 {
        self.k as f64 + self.alpha
    }

    pub fn with_holder_bound(&self, holder_bound: f64) -> Result<Self, KernelError> {
        Self::new(self.k, self.alpha, holder_bound)
    }
}

/// `(α, C_K)` with `√(K(0) − K(r)) ≤ C_K r^α`, known for RQ, GE and PP.
pub fn embedding_constant(spec: &KernelSpec) -> Option<(f64, f64)> {
    let theta = spec.lengthscale();
    let d = spec.dim() as f64;
    match spec.family() {
        KernelFamily::RationalQuadratic { a } => {
            Some((1.0, (1.0 / (d * (1.0 + 1.0 / (2.0 * a * theta)).powf(a))).sqrt()))
        }
        KernelFamily::GammaExponential { a } => Some((0.5, (a.max(1.0) / theta).sqrt())),
        KernelFamily::PiecewisePolynomial { q } => {
            let j = spec.pp_exponent()? as f64;
            Some((0.5, (j + q as f64).sqrt()))
        }
        KernelFamily::SquaredExponential | KernelFamily::Matern { .. } => None,
    }
}

/// Hölder profile implied by `‖f‖_K ≤ B`.
///
/// SE and Matérn use `L = B·ln n` unless `holder_override` is given; the
/// embedding constants for these kernels are not computable in closed form.
pub fn holder_profile(
    spec: &KernelSpec,
    norm_bound: f64,
    budget: usize,
    holder_override: Option<f64>,
) -> Result<SmoothnessProfile, KernelError> {
    if !(norm_bound > 0.0) {
        return Err(KernelError::InvalidParameter(format!(
            "norm bound B must be positive, got {norm_bound}"
        )));
    }
    if budget < 2 {
        return Err(KernelError::InvalidParameter(format!(
            "budget must be at least 2 for a Hölder profile, got {budget}"
        )));
    }
    let log_n = (budget as f64).ln();
    let (k, alpha, l) = match spec.family() {
        KernelFamily::SquaredExponential => (1, 1.0, norm_bound * log_n),
        KernelFamily::Matern { nu } => {
            let k = nu.ceil() as u32 - 1;
            (k, nu - k as f64, norm_bound * log_n)
        }
        _ => {
            let (alpha, c_k) = embedding_constant(spec).expect("RQ/GE/PP carry constants");
            (0, alpha, std::f64::consts::SQRT_2 * norm_bound * c_k)
        }
    };
    SmoothnessProfile::new(k, alpha, holder_override.unwrap_or(l))
}

/// Order-level bound on the maximum information gain `γ_n`, leading
/// constants set to one. Only SE and Matérn have known rates.
pub fn info_gain_bound(spec: &KernelSpec, budget: f64) -> Result<f64, KernelError> {
    let d = spec.dim() as f64;
    let log_n = budget.ln();
    match spec.family() {
        KernelFamily::SquaredExponential => Ok(log_n.powf(d + 1.0)),
        KernelFamily::Matern { nu } => Ok(budget.powf(matern_gain_exponent(nu, spec.dim())) * log_n),
        other => Err(KernelError::NoAnalyticBound(other.name())),
    }
}

/// `D̃/(D̃ + 2ν)` with `D̃ = D(D+1)`.
pub fn matern_gain_exponent(nu: f64, dim: usize) -> f64 {
    let dt = (dim * (dim + 1)) as f64;
    dt / (dt + 2.0 * nu)
}

/// Outcome of running the greedy maximum-variance rule on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyGain {
    /// Grid indices in selection order.
    pub selected: Vec<usize>,
    /// `½ log det(I + σ⁻² K_S)` for the selected set.
    pub mutual_information: f64,
    /// `(1 − 1/e)⁻¹` times the mutual information.
    pub gamma_bound: f64,
}

/// Numeric `γ_n` surrogate from `n` greedy maximum-variance selections.
pub fn greedy_info_gain(
    spec: &KernelSpec,
    grid: &[Vec<f64>],
    budget: usize,
    noise: f64,
) -> Result<GreedyGain, KernelError> {
    if budget > grid.len() {
        return Err(KernelError::BudgetExceedsGrid { budget, grid: grid.len() });
    }
    if !(noise > 0.0) {
        return Err(KernelError::InvalidParameter(format!(
            "noise scale must be positive for a finite information gain, got {noise}"
        )));
    }
    let noise_var = noise * noise;
    let m = grid.len();
    let mut var = vec![spec.eval(0.0); m];
    // columns of the incremental noisy-Cholesky factor, one per selection
    let mut factors: Vec<Vec<f64>> = Vec::with_capacity(budget);
    let mut selected = Vec::with_capacity(budget);
    let mut mi = 0.0;
    for _ in 0..budget {
        let mut best = 0;
        for i in 1..m {
            if var[i] > var[best] {
                best = i;
            }
        }
        let v = var[best].max(0.0);
        mi += 0.5 * (v / noise_var).ln_1p();
        let scale = (v + noise_var).sqrt();
        let col: Vec<f64> = (0..m)
            .map(|i| {
                let prior = spec.cov(&grid[i], &grid[best]);
                let explained: f64 = factors.iter().map(|c| c[i] * c[best]).sum();
                (prior - explained) / scale
            })
            .collect();
        for i in 0..m {
            var[i] -= col[i] * col[i];
        }
        factors.push(col);
        selected.push(best);
    }
    Ok(GreedyGain {
        selected,
        mutual_information: mi,
        gamma_bound: mi / (1.0 - 1.0 / E),
    })
}

/// Threshold side length separating the GP regime from the local
/// polynomial regime, clipped to 1.
pub fn rho0(profile: &SmoothnessProfile, gamma: f64, budget: usize, dim: usize) -> f64 {
    let a1 = profile.alpha1();
    let denom = (profile.holder_bound() * budget as f64 * (dim as f64).powf(a1)).sqrt();
    (gamma / denom).powf(1.0 / a1).min(1.0)
}
