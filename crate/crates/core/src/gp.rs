//! Exact GP surrogate with a Cholesky factor of `G + λI` that can be
//! extended one observation at a time.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::kernels::KernelSpec;

/// Diagonal jitter ladder tried before giving up on a factorization.
pub const JITTER_LADDER: [f64; 3] = [1e-10, 1e-8, 1e-6];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GpError {
    #[error("regularizer must be positive, got {0}")]
    InvalidRegularizer(f64),
    #[error("Gram matrix is ill-conditioned: Cholesky failed with jitter up to 1e-6 ({0} points)")]
    IllConditioned(usize),
    #[error("input has dimension {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone)]
pub struct GpPosterior {
    spec: KernelSpec,
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
    lambda: f64,
    jitter: f64,
    /// Lower-triangular `L` with `L Lᵀ = G + (λ + jitter) I`.
    factor: DMatrix<f64>,
    /// `(G + λI)⁻¹ y`.
    weights: DVector<f64>,
}

impl GpPosterior {
    /// Posterior with no observations (the prior).
    pub fn prior(spec: KernelSpec, lambda: f64) -> Result<Self, GpError> {
        Self::fit(spec, &[], lambda)
    }

    pub fn fit(spec: KernelSpec, data: &[(Vec<f64>, f64)], lambda: f64) -> Result<Self, GpError> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(GpError::InvalidRegularizer(lambda));
        }
        for (x, _) in data {
            check_dim(&spec, x)?;
        }
        let inputs: Vec<Vec<f64>> = data.iter().map(|(x, _)| x.clone()).collect();
        let targets: Vec<f64> = data.iter().map(|(_, y)| *y).collect();
        let gram = spec.gram(&inputs);
        let n = inputs.len();
        for jitter in JITTER_LADDER {
            let shifted = &gram + DMatrix::identity(n, n) * (lambda + jitter);
            if let Some(chol) = shifted.cholesky() {
                let factor = chol.l();
                let weights = chol.solve(&DVector::from_column_slice(&targets));
                return Ok(Self { spec, inputs, targets, lambda, jitter, factor, weights });
            }
        }
        Err(GpError::IllConditioned(n))
    }

    /// Posterior after adding `(x, y)`, extending the factor by one row.
    pub fn update(&self, x: &[f64], y: f64) -> Result<Self, GpError> {
        check_dim(&self.spec, x)?;
        let n = self.inputs.len();
        let cross = self.cross_cov(x);
        let row = self
            .factor
            .solve_lower_triangular(&cross)
            .expect("factor has a positive diagonal");
        let pivot_sq = self.spec.eval(0.0) + self.lambda + self.jitter - row.norm_squared();
        if !(pivot_sq > 1e-14) {
            let mut data: Vec<(Vec<f64>, f64)> =
                self.inputs.iter().cloned().zip(self.targets.iter().copied()).collect();
            data.push((x.to_vec(), y));
            return Self::fit(self.spec, &data, self.lambda);
        }
        let mut factor = self.factor.clone().resize(n + 1, n + 1, 0.0);
        for j in 0..n {
            factor[(n, j)] = row[j];
        }
        factor[(n, n)] = pivot_sq.sqrt();

        let mut inputs = self.inputs.clone();
        inputs.push(x.to_vec());
        let mut targets = self.targets.clone();
        targets.push(y);
        let weights = solve_normal(&factor, &DVector::from_column_slice(&targets));
        Ok(Self {
            spec: self.spec,
            inputs,
            targets,
            lambda: self.lambda,
            jitter: self.jitter,
            factor,
            weights,
        })
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    /// Diagonal jitter that the factorization ended up needing.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    fn cross_cov(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.inputs.len(), self.inputs.iter().map(|xi| self.spec.cov(x, xi)))
    }

    pub fn mean(&self, x: &[f64]) -> f64 {
        if self.inputs.is_empty() {
            return 0.0;
        }
        self.cross_cov(x).dot(&self.weights)
    }

    /// Posterior variance, clamped to `[0, K(0)]`.
    pub fn variance(&self, x: &[f64]) -> f64 {
        self.predict(x).1
    }

    pub fn std_dev(&self, x: &[f64]) -> f64 {
        self.variance(x).sqrt()
    }

    /// `(μ(x), σ²(x))`.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let prior = self.spec.eval(0.0);
        if self.inputs.is_empty() {
            return (0.0, prior);
        }
        let k = self.cross_cov(x);
        let mean = k.dot(&self.weights);
        let v = self.factor.solve_lower_triangular(&k).expect("positive diagonal");
        (mean, (prior - v.norm_squared()).clamp(0.0, prior))
    }

    /// Batched `(μ, σ²)` over many query points.
    pub fn predict_many(&self, points: &[Vec<f64>]) -> Vec<(f64, f64)> {
        let prior = self.spec.eval(0.0);
        let n = self.inputs.len();
        if n == 0 {
            return vec![(0.0, prior); points.len()];
        }
        let cross = DMatrix::from_fn(n, points.len(), |i, j| self.spec.cov(&self.inputs[i], &points[j]));
        let means = cross.tr_mul(&self.weights);
        let v = self.factor.solve_lower_triangular(&cross).expect("positive diagonal");
        (0..points.len())
            .map(|j| (means[j], (prior - v.column(j).norm_squared()).clamp(0.0, prior)))
            .collect()
    }

    /// `log p(y)` under the GP with noise variance `λ`.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.inputs.len() as f64;
        let y = DVector::from_column_slice(&self.targets);
        let log_det: f64 = self.factor.diagonal().iter().map(|d| d.ln()).sum();
        -0.5 * y.dot(&self.weights) - log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }
}

fn check_dim(spec: &KernelSpec, x: &[f64]) -> Result<(), GpError> {
    if x.len() != spec.dim() {
        return Err(GpError::DimensionMismatch { expected: spec.dim(), got: x.len() });
    }
    Ok(())
}

fn solve_normal(factor: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    let z = factor.solve_lower_triangular(rhs).expect("positive diagonal");
    factor.tr_solve_lower_triangular(&z).expect("positive diagonal")
}

/// Confidence multiplier `B + σ √(2(γ + 1 + ln(3/δ)))`.
pub fn beta(gamma: f64, norm_bound: f64, noise: f64, delta: f64) -> f64 {
    norm_bound + noise * (2.0 * (gamma + 1.0 + (3.0 / delta).ln())).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_data(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<(Vec<f64>, f64)> {
        (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..d).map(|_| rng.random()).collect();
                let y = rng.random_range(-1.0..1.0);
                (x, y)
            })
            .collect()
    }

    #[test]
    fn empty_posterior_is_prior() {
        let gp = GpPosterior::prior(KernelSpec::se(0.3, 2).unwrap(), 0.01).unwrap();
        assert_eq!(gp.predict(&[0.4, 0.1]), (0.0, 1.0));
    }

    #[test]
    fn single_observation_closed_form() {
        let spec = KernelSpec::se(0.3, 1).unwrap();
        let gp = GpPosterior::fit(spec, &[(vec![0.4], 2.0)], 0.01).unwrap();
        let (m, v) = gp.predict(&[0.4]);
        // jitter of 1e-10 perturbs the 1×1 system well below the tolerance
        assert!((m - 2.0 / 1.01).abs() < 1e-9);
        assert!((v - (1.0 - 1.0 / 1.01)).abs() < 1e-9);
    }

    #[test]
    fn rejects_nonpositive_regularizer() {
        let spec = KernelSpec::se(0.3, 1).unwrap();
        assert!(matches!(GpPosterior::prior(spec, 0.0), Err(GpError::InvalidRegularizer(_))));
    }

    #[test]
    fn factor_reconstructs_shifted_gram() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = KernelSpec::matern(2.5, 0.2, 2).unwrap();
        let data = random_data(&mut rng, 30, 2);
        let mut gp = GpPosterior::prior(spec, 0.01).unwrap();
        for (x, y) in &data {
            gp = gp.update(x, *y).unwrap();
        }
        let gram = spec.gram(gp.inputs()) + DMatrix::identity(30, 30) * 0.01;
        let rebuilt = gp.factor() * gp.factor().transpose();
        assert!((rebuilt - &gram).norm() / gram.norm() < 1e-8);
    }

    #[test]
    fn update_matches_refit() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let spec = KernelSpec::matern(2.5, 0.25, 1).unwrap();
        let data = random_data(&mut rng, 30, 1);
        let mut gp = GpPosterior::prior(spec, 0.0025).unwrap();
        for (x, y) in &data {
            gp = gp.update(x, *y).unwrap();
        }
        let refit = GpPosterior::fit(spec, &data, 0.0025).unwrap();
        for i in 0..50 {
            let q = [i as f64 / 49.0];
            let (m1, v1) = gp.predict(&q);
            let (m2, v2) = refit.predict(&q);
            assert!((m1 - m2).abs() < 1e-8 && (v1 - v2).abs() < 1e-8);
        }
    }

    #[test]
    fn duplicate_inputs_stay_well_posed() {
        let spec = KernelSpec::se(0.3, 1).unwrap();
        let gp = GpPosterior::fit(spec, &[(vec![0.5], 1.0)], 1e-4).unwrap();
        let gp = gp.update(&[0.5], 1.2).unwrap();
        let (m, v) = gp.predict(&[0.5]);
        assert!(m.is_finite() && v >= 0.0);
    }

    #[test]
    fn interpolates_noiseless_targets() {
        let spec = KernelSpec::se(0.3, 1).unwrap();
        let c = [0.37];
        let data: Vec<(Vec<f64>, f64)> =
            (0..8).map(|i| i as f64 / 7.0).map(|x| (vec![x], spec.cov(&[x], &c))).collect();
        let gp = GpPosterior::fit(spec, &data, 1e-8).unwrap();
        for (x, y) in &data {
            assert!((gp.mean(x) - y).abs() < 1e-4);
            assert!(gp.variance(x) < 1.0);
        }
    }

    #[test]
    fn batched_prediction_matches_pointwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = KernelSpec::se(0.2, 2).unwrap();
        let gp = GpPosterior::fit(spec, &random_data(&mut rng, 12, 2), 0.01).unwrap();
        let qs: Vec<Vec<f64>> = (0..20).map(|_| vec![rng.random(), rng.random()]).collect();
        for (q, (m, v)) in qs.iter().zip(gp.predict_many(&qs)) {
            let (m2, v2) = gp.predict(q);
            assert!((m - m2).abs() < 1e-12 && (v - v2).abs() < 1e-12);
        }
    }

    #[test]
    fn beta_cases() {
        assert_eq!(beta(5.0, 1.0, 0.0, 0.1), 1.0);
        let delta = 3.0 / std::f64::consts::E;
        assert!((beta(0.0, 1.0, 1.0, delta) - 3.0).abs() < 1e-14);
        assert!(beta(2.0, 1.0, 0.1, 0.1) > beta(1.0, 1.0, 0.1, 0.1));
        assert!(beta(1.0, 1.0, 0.1, 0.05) > beta(1.0, 1.0, 0.1, 0.1));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]
        #[test]
        fn variance_bounded_and_monotone(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let spec = KernelSpec::matern(1.5, 0.3, 2).unwrap();
            let data = random_data(&mut rng, 10, 2);
            let qs: Vec<Vec<f64>> = (0..10).map(|_| vec![rng.random(), rng.random()]).collect();
            let mut gp = GpPosterior::prior(spec, 0.01).unwrap();
            let mut prev: Vec<f64> = qs.iter().map(|q| gp.variance(q)).collect();
            for (x, y) in &data {
                gp = gp.update(x, *y).unwrap();
                for (q, p) in qs.iter().zip(prev.iter_mut()) {
                    let v = gp.variance(q);
                    proptest::prop_assert!((0.0..=1.0 + 1e-9).contains(&v));
                    proptest::prop_assert!(v <= *p + 1e-9);
                    *p = v;
                }
            }
        }
    }
}
