//! Minimum-norm local polynomial interpolation weights and the error
//! calculus built on them.
//!
//! For a cell `E` with observations `x_1..x_m` and a target point `z`, the
//! weights solve
//!
//! ```text
//! min ‖v‖₂  subject to  Σ_i v_i p(x_i) = p(z)  for every p of degree ≤ k
//! ```
//!
//! so the estimate `Σ_i v_i y_i` reproduces polynomials exactly. The design
//! is built on the cell rescaled to `[−1, 1]^D`, which leaves the feasible
//! set unchanged and keeps the monomial matrix well conditioned.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::geometry::{kronecker_points, Cell};
use crate::kernels::SmoothnessProfile;

/// Constraint violation above which a weight vector counts as infeasible.
pub const FEASIBILITY_TOL: f64 = 1e-6;
/// Relative singular-value cutoff of the least-norm solve.
pub const SINGULAR_CUTOFF: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LpError {
    #[error("cell holds no observations")]
    NoData,
}

/// Multi-indices `a ∈ ℕ^D` with `|a| ≤ k` in graded lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct MonomialBasis {
    dim: usize,
    degree: u32,
    exponents: Vec<Vec<u32>>,
}

impl MonomialBasis {
    pub fn new(dim: usize, degree: u32) -> Self {
        let mut exponents = Vec::new();
        for total in 0..=degree {
            let mut current = vec![0u32; dim];
            push_compositions(total, 0, &mut current, &mut exponents);
        }
        Self { dim, degree, exponents }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn exponents(&self) -> &[Vec<u32>] {
        &self.exponents
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn evaluate(&self, x: &[f64]) -> Vec<f64> {
        self.exponents
            .iter()
            .map(|a| a.iter().zip(x).map(|(&e, &v)| v.powi(e as i32)).product())
            .collect()
    }
}

// lexicographically descending compositions of `remaining` over the axes
fn push_compositions(remaining: u32, axis: usize, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if axis + 1 == current.len() {
        current[axis] = remaining;
        out.push(current.clone());
        return;
    }
    for e in (0..=remaining).rev() {
        current[axis] = e;
        push_compositions(remaining - e, axis + 1, current, out);
    }
    current[axis] = 0;
}

/// Interpolation weights with their norms and constraint residual.
#[derive(Debug, Clone, PartialEq)]
pub struct LpWeights {
    pub weights: Vec<f64>,
    pub l1: f64,
    pub l2: f64,
    /// `‖M w − m(z)‖∞` in rescaled coordinates.
    pub residual: f64,
    pub feasible: bool,
    pub fallback_uniform: bool,
}

impl LpWeights {
    pub fn uniform(count: usize) -> Self {
        let w = 1.0 / count as f64;
        Self {
            weights: vec![w; count],
            l1: 1.0,
            l2: (count as f64).sqrt() * w,
            residual: 0.0,
            feasible: true,
            fallback_uniform: true,
        }
    }

    fn from_solution(weights: Vec<f64>, residual: f64) -> Self {
        let l1 = weights.iter().map(|w| w.abs()).sum();
        let l2 = weights.iter().map(|w| w * w).sum::<f64>().sqrt();
        Self {
            weights,
            l1,
            l2,
            residual,
            feasible: residual <= FEASIBILITY_TOL,
            fallback_uniform: false,
        }
    }

    pub fn estimate(&self, ys: &[f64]) -> f64 {
        self.weights.iter().zip(ys).map(|(w, y)| w * y).sum()
    }
}

/// Least-norm solver for a fixed design; the SVD is shared by every target
/// point in the cell.
pub struct LpSolver {
    basis: MonomialBasis,
    lower: Vec<f64>,
    upper: Vec<f64>,
    design: DMatrix<f64>,
    pinv: DMatrix<f64>,
}

impl LpSolver {
    pub fn new(cell: &Cell, points: &[&[f64]], degree: u32) -> Self {
        let basis = MonomialBasis::new(cell.dim(), degree);
        let lower = cell.lower().to_vec();
        let upper = cell.upper().to_vec();
        let p = basis.len();
        let mut design = DMatrix::zeros(p, points.len());
        for (j, x) in points.iter().enumerate() {
            let u = rescale(&lower, &upper, x);
            for (i, v) in basis.evaluate(&u).into_iter().enumerate() {
                design[(i, j)] = v;
            }
        }
        let svd = design.clone().svd(true, true);
        let cutoff = SINGULAR_CUTOFF * svd.singular_values.max();
        let pinv = svd
            .pseudo_inverse(cutoff)
            .unwrap_or_else(|_| DMatrix::zeros(points.len(), p));
        Self { basis, lower, upper, design, pinv }
    }

    pub fn weights_at(&self, z: &[f64]) -> LpWeights {
        let target = DVector::from_vec(self.basis.evaluate(&rescale(&self.lower, &self.upper, z)));
        let w = &self.pinv * &target;
        let residual = (&self.design * &w - &target).amax();
        LpWeights::from_solution(w.iter().copied().collect(), residual)
    }
}

fn rescale(lower: &[f64], upper: &[f64], x: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(lower.iter().zip(upper))
        .map(|(v, (l, u))| 2.0 * (v - l) / (u - l) - 1.0)
        .collect()
}

/// Minimum-norm weights reproducing polynomials of degree `≤ degree` at `z`.
/// Infeasibility is reported, not raised.
pub fn solve_weights(points: &[&[f64]], z: &[f64], degree: u32, cell: &Cell) -> LpWeights {
    LpSolver::new(cell, points, degree).weights_at(z)
}

/// Number of observations above which the least-norm system is used.
pub fn solver_threshold(degree: u32, dim: usize) -> usize {
    (degree as usize + 2).pow(dim as u32)
}

/// The weight rule of the local polynomial estimator for one cell:
/// least-norm weights when `n_E > (k+2)^D` and the system is feasible,
/// uniform weights `1/n_E` otherwise.
pub struct LocalEstimator {
    count: usize,
    solver: Option<LpSolver>,
}

impl LocalEstimator {
    pub fn new(cell: &Cell, points: &[&[f64]], degree: u32) -> Result<Self, LpError> {
        if points.is_empty() {
            return Err(LpError::NoData);
        }
        let solver = (points.len() > solver_threshold(degree, cell.dim()))
            .then(|| LpSolver::new(cell, points, degree));
        Ok(Self { count: points.len(), solver })
    }

    pub fn weights_at(&self, z: &[f64]) -> LpWeights {
        match &self.solver {
            Some(solver) => {
                let w = solver.weights_at(z);
                if w.feasible {
                    w
                } else {
                    LpWeights::uniform(self.count)
                }
            }
            None => LpWeights::uniform(self.count),
        }
    }
}

/// Local polynomial estimate of `f(z)` from the cell's observations.
pub fn local_poly(
    cell: &Cell,
    points: &[&[f64]],
    ys: &[f64],
    z: &[f64],
    degree: u32,
) -> Result<(f64, LpWeights), LpError> {
    let w = LocalEstimator::new(cell, points, degree)?.weights_at(z);
    Ok((w.estimate(ys), w))
}

/// `(e_D, e_S)`: smoothness bias bound and sub-Gaussian noise bound of an
/// estimate built from `weights` in a cell of nominal side `side`.
pub fn error_terms(
    weights: &LpWeights,
    profile: &SmoothnessProfile,
    side: f64,
    dim: usize,
    noise: f64,
    delta: f64,
) -> (f64, f64) {
    let bias = (1.0 + weights.l1) * profile.holder_bound() * ((dim as f64).sqrt() * side).powf(profile.order());
    let stochastic = noise * weights.l2 * (2.0 * (2.0 / delta).ln()).sqrt();
    (bias, stochastic)
}

/// Default size of the interior candidate set used by [`max_err`].
pub fn default_candidate_count(degree: u32, dim: usize) -> usize {
    64.max(2 * solver_threshold(degree, dim))
}

/// Corners, center and `interior` low-discrepancy points of the cell.
pub fn candidate_points(cell: &Cell, interior: usize) -> Vec<Vec<f64>> {
    let d = cell.dim();
    let mut out = Vec::with_capacity((1 << d) + 1 + interior);
    for mask in 0..(1usize << d) {
        out.push(
            (0..d)
                .map(|i| if mask >> i & 1 == 1 { cell.upper()[i] } else { cell.lower()[i] })
                .collect(),
        );
    }
    out.push(cell.center());
    let sides = cell.sides();
    for p in kronecker_points(interior, d, &vec![0.5; d]) {
        out.push((0..d).map(|i| cell.lower()[i] + p[i] * sides[i]).collect());
    }
    out
}

/// Largest `e_D + e_S` over a deterministic candidate set, standing in for
/// the continuous maximum over the cell.
pub fn max_err(
    cell: &Cell,
    points: &[&[f64]],
    profile: &SmoothnessProfile,
    noise: f64,
    delta: f64,
    interior: usize,
) -> Result<f64, LpError> {
    let estimator = LocalEstimator::new(cell, points, profile.k())?;
    let dim = cell.dim();
    Ok(candidate_points(cell, interior)
        .iter()
        .map(|z| {
            let (bias, stoch) = error_terms(&estimator.weights_at(z), profile, cell.side(), dim, noise, delta);
            bias + stoch
        })
        .fold(f64::NEG_INFINITY, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn refs(points: &[Vec<f64>]) -> Vec<&[f64]> {
        points.iter().map(Vec::as_slice).collect()
    }

    #[test]
    fn basis_sizes_and_order() {
        let b = MonomialBasis::new(2, 2);
        assert_eq!(b.len(), 6);
        assert_eq!(b.exponents()[0], vec![0, 0]);
        assert_eq!(b.exponents()[1], vec![1, 0]);
        assert_eq!(b.exponents()[2], vec![0, 1]);
        assert_eq!(MonomialBasis::new(3, 2).len(), 10);
        assert_eq!(MonomialBasis::new(1, 4).len(), 5);
    }

    #[test]
    fn degree_zero_is_uniform() {
        let cell = Cell::unit(1);
        let pts = vec![vec![0.1], vec![0.4], vec![0.9]];
        let w = solve_weights(&refs(&pts), &[0.3], 0, &cell);
        for v in &w.weights {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_interpolation_weights() {
        let cell = Cell::unit(1);
        let pts = vec![vec![0.2], vec![0.8]];
        let w = solve_weights(&refs(&pts), &[0.5], 1, &cell);
        assert!((w.weights[0] - 0.5).abs() < 1e-12 && (w.weights[1] - 0.5).abs() < 1e-12);
        let w = solve_weights(&refs(&pts), &[0.6], 1, &cell);
        assert!((w.weights[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((w.weights[1] - 2.0 / 3.0).abs() < 1e-12);
        assert!(w.feasible && !w.fallback_uniform);
    }

    #[test]
    fn collinear_design_cannot_reproduce_quadratics() {
        let cell = Cell::unit(2);
        let pts: Vec<Vec<f64>> = (0..5).map(|i| vec![0.1 + 0.2 * i as f64, 0.5]).collect();
        let w = solve_weights(&refs(&pts), &[0.5, 0.9], 2, &cell);
        assert!(w.residual > 1e-6);
        assert!(!w.feasible);
    }

    #[test]
    fn singleton_estimate() {
        let cell = Cell::unit(1);
        let (est, w) = local_poly(&cell, &[&[0.3]], &[1.7], &[0.6], 2).unwrap();
        assert_eq!(est, 1.7);
        assert!(w.fallback_uniform);
        assert_eq!(local_poly(&cell, &[], &[], &[0.6], 2), Err(LpError::NoData));
    }

    #[test]
    fn reproduces_line_and_parabola() {
        let cell = Cell::unit(1);
        let pts: Vec<Vec<f64>> = (0..10).map(|i| vec![0.05 + 0.1 * i as f64]).collect();
        let lin: Vec<f64> = pts.iter().map(|p| 3.0 * p[0] + 1.0).collect();
        for z in [0.0, 0.33, 0.71, 1.0] {
            let (est, _) = local_poly(&cell, &refs(&pts), &lin, &[z], 1).unwrap();
            assert!((est - (3.0 * z + 1.0)).abs() < 1e-8);
        }
        let sq: Vec<f64> = pts.iter().map(|p| p[0] * p[0]).collect();
        let (est, _) = local_poly(&cell, &refs(&pts), &sq, &[0.3], 2).unwrap();
        assert!((est - 0.09).abs() < 1e-8);
    }

    #[test]
    fn falls_back_when_infeasible() {
        let cell = Cell::unit(2);
        let pts: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 / 19.0, 0.5]).collect();
        let ys = vec![1.0; 20];
        let (_, w) = local_poly(&cell, &refs(&pts), &ys, &[0.5, 0.9], 2).unwrap();
        assert!(w.fallback_uniform);
        assert_eq!(w.l1, 1.0);
    }

    #[test]
    fn error_term_arithmetic() {
        let p = SmoothnessProfile::new(0, 1.0, 1.0).unwrap();
        let w = LpWeights::uniform(4);
        let (bias, stoch) = error_terms(&w, &p, 0.5, 1, 0.0, 0.1);
        assert!((bias - 1.0).abs() < 1e-15);
        assert_eq!(stoch, 0.0);
        let (_, stoch) = error_terms(&w, &p, 0.5, 1, 0.3, 0.1);
        assert!((stoch - 0.3 * (2.0 * 20f64.ln() / 4.0).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn max_err_degree_zero_closed_form() {
        let p = SmoothnessProfile::new(0, 0.5, 2.0).unwrap();
        let cell = Cell::from_bounds(vec![0.0, 0.0], vec![0.25, 0.25], 0.25, 0);
        let pts = vec![vec![0.1, 0.1], vec![0.2, 0.05], vec![0.02, 0.2]];
        let (sigma, delta) = (0.1f64, 0.05f64);
        let expect = 2.0 * 2.0 * (2f64.sqrt() * 0.25).sqrt()
            + sigma * (2.0 * (2.0 / delta).ln() / 3.0).sqrt();
        let err = max_err(&cell, &refs(&pts), &p, sigma, delta, 64).unwrap();
        assert!((err - expect).abs() < 1e-12);

        let one = max_err(&cell, &refs(&pts[..1]), &p, sigma, delta, 64).unwrap();
        let expect = 2.0 * 2.0 * (2f64.sqrt() * 0.25).sqrt() + sigma * (2.0 * (2.0 / delta).ln()).sqrt();
        assert!((one - expect).abs() < 1e-12);
    }

    #[test]
    fn max_err_dominates_center() {
        let p = SmoothnessProfile::new(2, 0.5, 1.4).unwrap();
        let cell = Cell::from_bounds(vec![0.25], vec![0.5], 0.25, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<Vec<f64>> = (0..12).map(|_| vec![rng.random_range(0.25..0.5)]).collect();
        let err = max_err(&cell, &refs(&pts), &p, 0.05, 0.01, 64).unwrap();
        let w = LocalEstimator::new(&cell, &refs(&pts), 2).unwrap().weights_at(&cell.center());
        let (b, s) = error_terms(&w, &p, 0.25, 1, 0.05, 0.01);
        assert!(err >= b + s - 1e-15);
    }

    #[test]
    fn minimal_norm_against_subset_interpolant() {
        let cell = Cell::unit(1);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let pts: Vec<Vec<f64>> = (0..8).map(|_| vec![rng.random()]).collect();
            let z = [rng.random::<f64>()];
            let w = solve_weights(&refs(&pts), &z, 1, &cell);
            // exact linear interpolation through the first two points
            let (a, b) = (pts[0][0], pts[1][0]);
            let wa = (b - z[0]) / (b - a);
            let alt = (wa * wa + (1.0 - wa) * (1.0 - wa)).sqrt();
            assert!(w.l2 <= alt + 1e-8);
            assert!(w.l1 >= 1.0 - 1e-9);
            assert!((w.weights.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn affine_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let pts: Vec<Vec<f64>> =
            (0..15).map(|_| vec![rng.random_range(0.5..0.75), rng.random_range(0.25..0.5)]).collect();
        let small = Cell::from_bounds(vec![0.5, 0.25], vec![0.75, 0.5], 0.25, 0);
        let z = [0.6, 0.3];
        let local = solve_weights(&refs(&pts), &z, 2, &small);
        let global = solve_weights(&refs(&pts), &z, 2, &Cell::unit(2));
        for (a, b) in local.weights.iter().zip(&global.weights) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
