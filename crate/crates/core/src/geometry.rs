//! Axis-aligned cells of the unit cube and the grid partition rule.

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("partition side {requested} must be positive and below the cell side {side}")]
    InvalidSide { requested: f64, side: f64 },
}

/// A box `⨉ [lower_i, upper_i] ⊂ [0,1]^D` with a nominal side length that
/// upper-bounds every actual side, plus the observations it currently owns.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    lower: Vec<f64>,
    upper: Vec<f64>,
    side: f64,
    /// Inherited upper bound `u⁽⁰⁾`; `+∞` when nothing is known.
    pub u0: f64,
    /// Indices into the owning run's observation list.
    pub observations: Vec<usize>,
    pub sum_y: f64,
    /// Round in which the cell was created; first tie-break key.
    pub created_at: usize,
}

impl Cell {
    pub fn unit(dim: usize) -> Self {
        Self::from_bounds(vec![0.0; dim], vec![1.0; dim], 1.0, 0)
    }

    pub fn from_bounds(lower: Vec<f64>, upper: Vec<f64>, side: f64, created_at: usize) -> Self {
        debug_assert_eq!(lower.len(), upper.len());
        Self {
            lower,
            upper,
            side,
            u0: f64::INFINITY,
            observations: Vec::new(),
            sum_y: 0.0,
            created_at,
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Actual side lengths.
    pub fn sides(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).collect()
    }

    /// Nominal side length `r_E`.
    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| l + (u - l) / 2.0).collect()
    }

    pub fn volume(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).product()
    }

    /// `n_E`.
    pub fn count(&self) -> usize {
        self.observations.len()
    }

    /// Empirical mean `μ̂(E)`, `None` without observations.
    pub fn mean(&self) -> Option<f64> {
        (!self.observations.is_empty()).then(|| self.sum_y / self.observations.len() as f64)
    }

    /// Closed-box membership.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    /// Half-open membership used for observation bookkeeping: `[lower, upper)`
    /// per axis, closed on the domain's upper face. Sibling cells therefore
    /// never both own a shared boundary point.
    pub fn owns(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| {
                *l <= *v && (*v < *u || (*u >= 1.0 && *v <= *u))
            })
    }

    pub fn record(&mut self, index: usize, y: f64) {
        self.observations.push(index);
        self.sum_y += y;
    }
}

/// Split `cell` on a grid of pitch `r` anchored at its lower corner.
///
/// Each axis `[a, b]` becomes `[a + l r, min(a + (l+1) r, b)]` for
/// `l = 0..=⌊(b − a)/r⌋`; zero-width slivers are dropped. Children carry
/// nominal side `r` and no observations.
pub fn partition(cell: &Cell, r: f64, created_at: usize) -> Result<Vec<Cell>, GeometryError> {
    if !(r > 0.0 && r < cell.side()) {
        return Err(GeometryError::InvalidSide { requested: r, side: cell.side() });
    }
    let axes: Vec<Vec<f64>> = cell
        .lower()
        .iter()
        .zip(cell.upper())
        .map(|(&a, &b)| axis_breaks(a, b, r))
        .collect();

    let mut children = Vec::new();
    let mut idx = vec![0usize; axes.len()];
    loop {
        let lower: Vec<f64> = idx.iter().zip(&axes).map(|(&i, br)| br[i]).collect();
        let upper: Vec<f64> = idx.iter().zip(&axes).map(|(&i, br)| br[i + 1]).collect();
        children.push(Cell::from_bounds(lower, upper, r, created_at));
        // odometer over the per-axis segment indices, last axis fastest
        let mut axis = axes.len();
        loop {
            if axis == 0 {
                return Ok(children);
            }
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] + 1 < axes[axis].len() {
                break;
            }
            idx[axis] = 0;
        }
    }
}

fn axis_breaks(a: f64, b: f64, r: f64) -> Vec<f64> {
    let width = b - a;
    let steps = (width / r).floor() as usize;
    let mut breaks = vec![a];
    for l in 1..=steps + 1 {
        let p = (a + l as f64 * r).min(b);
        let last = *breaks.last().expect("non-empty");
        if p - last > 1e-12 * r.max(width) {
            breaks.push(p);
        }
        if p >= b {
            break;
        }
    }
    // never leave the far face uncovered because of rounding
    let last = breaks.len() - 1;
    if breaks[last] < b {
        if b - breaks[last] > 1e-12 * r.max(width) {
            breaks.push(b);
        } else {
            breaks[last] = b;
        }
    }
    breaks
}

/// Uniform draw from the cell, one independent coordinate per axis.
pub fn sample_uniform<R: Rng + ?Sized>(cell: &Cell, rng: &mut R) -> Vec<f64> {
    cell.lower()
        .iter()
        .zip(cell.upper())
        .map(|(l, u)| l + rng.random::<f64>() * (u - l))
        .collect()
}

/// Shifted Kronecker (R_d) low-discrepancy points in `[0,1)^D`.
pub fn kronecker_points(count: usize, dim: usize, shift: &[f64]) -> Vec<Vec<f64>> {
    // generalized golden ratio: unique positive root of x^(d+1) = x + 1
    let mut phi = 2.0f64;
    for _ in 0..64 {
        phi = (1.0 + phi).powf(1.0 / (dim as f64 + 1.0));
    }
    let alphas: Vec<f64> = (1..=dim).map(|j| (1.0 / phi.powi(j as i32)).fract()).collect();
    (0..count)
        .map(|i| {
            (0..dim)
                .map(|j| {
                    let s = shift.get(j).copied().unwrap_or(0.5);
                    (s + (i as f64 + 1.0) * alphas[j]).fract()
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Midpoint;

    impl RngCore for Midpoint {
        fn next_u32(&mut self) -> u32 {
            1 << 31
        }
        fn next_u64(&mut self) -> u64 {
            1 << 63
        }
        fn fill_bytes(&mut self, dst: &mut [u8]) {
            dst.fill(0x80);
        }
    }

    fn volume_sum(cells: &[Cell]) -> f64 {
        cells.iter().map(Cell::volume).sum()
    }

    #[test]
    fn halving_unit_interval() {
        let kids = partition(&Cell::unit(1), 0.5, 1).unwrap();
        assert_eq!(kids.len(), 2);
        assert_eq!((kids[0].lower()[0], kids[0].upper()[0]), (0.0, 0.5));
        assert_eq!((kids[1].lower()[0], kids[1].upper()[0]), (0.5, 1.0));
        assert!(kids.iter().all(|c| c.side() == 0.5));
    }

    #[test]
    fn uneven_grid_in_two_dims() {
        let kids = partition(&Cell::unit(2), 0.4, 1).unwrap();
        assert_eq!(kids.len(), 9);
        let boundary: Vec<&Cell> = kids.iter().filter(|c| c.lower()[0] > 0.79).collect();
        assert_eq!(boundary.len(), 3);
        for c in boundary {
            assert!((c.sides()[0] - 0.2).abs() < 1e-12);
        }
        assert!((volume_sum(&kids) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_halving_gives_two_to_the_d() {
        for d in 1..=3 {
            let parent = Cell::from_bounds(vec![0.25; d], vec![0.5; d], 0.25, 0);
            let kids = partition(&parent, 0.125, 1).unwrap();
            assert_eq!(kids.len(), 1 << d);
            for k in &kids {
                assert!(k.sides().iter().all(|s| (s - 0.125).abs() < 1e-15));
                assert!(parent.contains(k.lower()) && parent.contains(k.upper()));
            }
        }
    }

    #[test]
    fn sliver_parent_uses_actual_extent() {
        let parent = Cell::from_bounds(vec![0.8], vec![1.0], 0.4, 0);
        let kids = partition(&parent, 0.15, 1).unwrap();
        assert_eq!(kids.len(), 2);
        assert!((kids[1].sides()[0] - 0.05).abs() < 1e-12);
    }

    #[test]
    fn rejects_oversized_side() {
        assert!(partition(&Cell::unit(1), 1.0, 1).is_err());
        assert!(partition(&Cell::unit(1), 0.0, 1).is_err());
    }

    #[test]
    fn midpoint_rng_draws_center() {
        let c = Cell::from_bounds(vec![0.2, 0.5], vec![0.4, 1.0], 0.5, 0);
        assert_eq!(sample_uniform(&c, &mut Midpoint), c.center());
    }

    #[test]
    fn monte_carlo_mean_and_membership() {
        let c = Cell::from_bounds(vec![0.0, 0.0], vec![0.5, 0.5], 0.5, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut sum = [0.0; 2];
        for _ in 0..10_000 {
            let x = sample_uniform(&c, &mut rng);
            assert!(c.contains(&x));
            sum[0] += x[0];
            sum[1] += x[1];
        }
        assert!((sum[0] / 1e4 - 0.25).abs() < 0.01);
        assert!((sum[1] / 1e4 - 0.25).abs() < 0.01);
    }

    #[test]
    fn membership_rules() {
        let kids = partition(&Cell::unit(1), 0.5, 1).unwrap();
        assert!(kids[0].contains(&kids[0].center()));
        assert!(!kids[0].contains(&[0.6]));
        let shared = [0.5];
        assert_eq!(kids.iter().filter(|c| c.owns(&shared)).count(), 1);
        assert_eq!(kids.iter().filter(|c| c.owns(&[1.0])).count(), 1);
        assert_eq!(kids.iter().filter(|c| c.owns(&[0.0])).count(), 1);
    }

    #[test]
    fn kronecker_points_in_cube() {
        let pts = kronecker_points(100, 3, &[0.1, 0.2, 0.3]);
        assert!(pts.iter().flatten().all(|v| (0.0..1.0).contains(v)));
    }

    proptest::proptest! {
        #[test]
        fn partition_tiles_parent(
            lo in proptest::collection::vec(0.0f64..0.5, 2),
            ext in proptest::collection::vec(0.05f64..0.5, 2),
            frac in 0.05f64..0.95,
            probes in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 50),
        ) {
            let upper: Vec<f64> = lo.iter().zip(&ext).map(|(l, e)| l + e).collect();
            let side = ext.iter().cloned().fold(0.0, f64::max);
            let parent = Cell::from_bounds(lo.clone(), upper.clone(), side, 0);
            let kids = partition(&parent, frac * side, 1).unwrap();
            proptest::prop_assert!((volume_sum(&kids) - parent.volume()).abs() < 1e-12);
            for (a, b) in probes {
                let x = [lo[0] + a * ext[0], lo[1] + b * ext[1]];
                let owners = kids.iter().filter(|k| k.contains(&x)).count();
                proptest::prop_assert!(owners >= 1);
            }
            for k in &kids {
                proptest::prop_assert!(k.sides().iter().all(|s| *s > 0.0 && *s <= k.side() + 1e-12));
            }
        }
    }
}
