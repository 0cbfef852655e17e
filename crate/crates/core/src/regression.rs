//! Least-squares projection onto polynomials of the state vector.
//!
//! Coordinates are standardized per time index; coordinates with no spread
//! (e.g. every path at `t_0`) are dropped, so the trivial σ-field reduces to
//! the intercept and the projection to the ensemble mean. A coordinate that is
//! an affine copy of an earlier one carries no extra information and is
//! dropped as well.
//!
//! A joint regressor adds the block `φ(X)·m` for a per-path multiplier `m`
//! (a martingale increment), so that `y ≈ a(X) + b(X) m` is fitted in one
//! least-squares problem and the residual is orthogonal in-sample to both
//! blocks. Gram matrices are
//! accumulated over fixed path chunks and summed in chunk order, which keeps
//! results independent of the rayon thread count.

use std::ops::{Add, Range};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

const CHUNK: usize = 2048;
/// Relative pivot floor below which the Gram matrix is treated as singular.
const PIVOT_FLOOR: f64 = 1e-11;
/// Ridge penalty as a fraction of `trace(Gram) / dim`.
pub const RIDGE_FACTOR: f64 = 1e-8;
pub const MAX_DEGREE: usize = 6;
pub const MAX_COORDS: usize = 5;

/// Total-degree monomial exponents in `dim` variables, graded order.
pub fn monomial_exponents(dim: usize, degree: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    for total in 0..=degree {
        let mut cur = vec![0u32; dim];
        push_compositions(&mut out, &mut cur, 0, total as u32);
    }
    out
}

fn push_compositions(out: &mut Vec<Vec<u32>>, cur: &mut [u32], pos: usize, left: u32) {
    if cur.is_empty() {
        if left == 0 {
            out.push(Vec::new());
        }
        return;
    }
    if pos == cur.len() - 1 {
        cur[pos] = left;
        out.push(cur.to_vec());
        cur[pos] = 0;
        return;
    }
    for e in (0..=left).rev() {
        cur[pos] = e;
        push_compositions(out, cur, pos + 1, left - e);
    }
    cur[pos] = 0;
}

#[derive(Debug)]
pub struct Regressor {
    kept: Vec<usize>,
    center: Vec<f64>,
    scale: Vec<f64>,
    exponents: Vec<Vec<u32>>,
    /// `φ_b = φ_{parent} · z_{coord}` for `b >= 1`.
    recipe: Vec<(usize, usize)>,
    chol: Cholesky<f64, Dyn>,
    ridge: Option<f64>,
    n_paths: usize,
    /// RMS of the multiplier for joint regressors, used to normalize it.
    mult_scale: Option<f64>,
}

impl Regressor {
    /// Build the projection operator for state columns `cols` (each of length
    /// `P`) and total polynomial degree `degree`.
    pub fn new(cols: &[&[f64]], degree: usize) -> Self {
        Self::build(cols, None, degree)
    }

    /// Joint regressor on `[φ(X), φ(X)·mult]`. A multiplier that vanishes on
    /// every path gives a plain regressor with a zero second block.
    pub fn joint(cols: &[&[f64]], mult: &[f64], degree: usize) -> Self {
        let ms = (mult.iter().map(|m| m * m).sum::<f64>() / mult.len().max(1) as f64).sqrt();
        if ms > 0.0 && ms.is_finite() {
            Self::build(cols, Some((mult, ms)), degree)
        } else {
            Self::build(cols, None, degree)
        }
    }

    fn build(cols: &[&[f64]], mult: Option<(&[f64], f64)>, degree: usize) -> Self {
        assert!(degree <= MAX_DEGREE, "basis degree {degree} above {MAX_DEGREE}");
        assert!(cols.len() <= MAX_COORDS, "at most {MAX_COORDS} state coordinates");
        let n_paths = cols.first().map_or(0, |c| c.len());
        let mut kept = Vec::new();
        let mut center = Vec::new();
        let mut scale = Vec::new();
        for (c, col) in cols.iter().enumerate() {
            let mean = col.iter().sum::<f64>() / n_paths as f64;
            let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n_paths as f64;
            let sd = var.sqrt();
            if !(sd > 1e-12 * mean.abs().max(1.0)) {
                continue;
            }
            let duplicate = kept.iter().zip(&center).zip(&scale).any(|((&k, &mk), &sk): ((&usize, &f64), &f64)| {
                let cov = col.iter().zip(cols[k]).map(|(x, y)| (x - mean) * (y - mk)).sum::<f64>();
                (cov / (n_paths as f64 * sd * sk)).abs() > 1.0 - 1e-10
            });
            if !duplicate {
                kept.push(c);
                center.push(mean);
                scale.push(sd);
            }
        }
        let exponents = monomial_exponents(kept.len(), degree);
        let recipe = exponents
            .iter()
            .skip(1)
            .map(|ex| {
                let j = ex.iter().position(|&e| e > 0).expect("nonconstant monomial");
                let mut parent = ex.clone();
                parent[j] -= 1;
                (exponents.iter().position(|e| *e == parent).expect("graded order"), j)
            })
            .collect();
        let k = exponents.len() * if mult.is_some() { 2 } else { 1 };
        let m = mult.map(|(m, _)| m);
        let mut reg = Self {
            kept,
            center,
            scale,
            exponents,
            recipe,
            chol: Cholesky::new(DMatrix::identity(1, 1)).expect("identity is positive definite"),
            ridge: None,
            n_paths,
            mult_scale: mult.map(|(_, ms)| ms),
        };

        let gram = reg.chunked(|range| {
            let x = reg.design(cols, m, range);
            let mut g = DMatrix::<f64>::zeros(k, k);
            g.gemm(1.0, &x, &x.transpose(), 0.0);
            g
        });

        let well_posed = Cholesky::new(gram.clone()).filter(|ch| {
            let l = ch.l_dirty();
            let diag: Vec<f64> = (0..k).map(|i| l[(i, i)] * l[(i, i)]).collect();
            let max_gram = (0..k).map(|i| gram[(i, i)]).fold(0.0, f64::max);
            diag.iter().all(|&d| d > PIVOT_FLOOR * max_gram)
        });
        match well_posed {
            Some(ch) => reg.chol = ch,
            None => {
                let trace: f64 = (0..k).map(|i| gram[(i, i)]).sum();
                let lambda = RIDGE_FACTOR * trace / k as f64;
                let mut g = gram;
                // The intercept is left unpenalized so constants stay exact.
                for i in 1..k {
                    g[(i, i)] += lambda;
                }
                reg.chol = Cholesky::new(g).expect("ridge-regularized Gram is positive definite");
                reg.ridge = Some(lambda);
            }
        }
        reg
    }

    fn basis_into(&self, cols: &[&[f64]], mult: Option<&[f64]>, p: usize, phi: &mut [f64]) {
        let mut z = [0.0f64; MAX_COORDS];
        for (j, &c) in self.kept.iter().enumerate() {
            z[j] = (cols[c][p] - self.center[j]) / self.scale[j];
        }
        let k = self.exponents.len();
        phi[0] = 1.0;
        for (b, &(parent, j)) in self.recipe.iter().enumerate() {
            phi[b + 1] = phi[parent] * z[j];
        }
        if let (Some(m), Some(ms)) = (mult, self.mult_scale) {
            let x = m[p] / ms;
            for b in 0..k {
                phi[k + b] = phi[b] * x;
            }
        }
    }

    /// Basis values on the paths of `range`, one column per path. The
    /// multiplier block is included when `mult` is given to a joint regressor.
    fn design(&self, cols: &[&[f64]], mult: Option<&[f64]>, range: Range<usize>) -> DMatrix<f64> {
        let k = if mult.is_some() { self.width() } else { self.exponents.len() };
        let mut x = DMatrix::<f64>::zeros(k, range.len());
        for (col, p) in range.enumerate() {
            self.basis_into(cols, mult, p, x.column_mut(col).as_mut_slice());
        }
        x
    }

    /// Sum of `f` over fixed path chunks, added in chunk order.
    fn chunked<T: Send + Add<Output = T>>(&self, f: impl Fn(Range<usize>) -> T + Sync) -> T {
        let starts: Vec<usize> = (0..self.n_paths).step_by(CHUNK).collect();
        let partial: Vec<T> =
            starts.par_iter().map(|&a| f(a..(a + CHUNK).min(self.n_paths))).collect();
        let mut it = partial.into_iter();
        let first = it.next().expect("at least one path");
        it.fold(first, |acc, m| acc + m)
    }

    /// Number of functions of the state, excluding a multiplier block.
    pub fn basis_size(&self) -> usize {
        self.exponents.len()
    }

    fn width(&self) -> usize {
        self.exponents.len() * if self.mult_scale.is_some() { 2 } else { 1 }
    }

    pub fn is_joint(&self) -> bool {
        self.mult_scale.is_some()
    }

    pub fn ridge(&self) -> Option<f64> {
        self.ridge
    }

    fn coefficients(&self, cols: &[&[f64]], mult: Option<&[f64]>, target: &[f64]) -> Vec<f64> {
        debug_assert_eq!(target.len(), self.n_paths);
        let mult = mult.filter(|_| self.is_joint());
        let rhs = self.chunked(|range| {
            let y = DVector::from_column_slice(&target[range.clone()]);
            self.design(cols, mult, range) * y
        });
        self.chol.solve(&rhs).as_slice().to_vec()
    }

    /// `Σ_a φ_a(X_p) β_a` on every path.
    fn evaluate(&self, cols: &[&[f64]], beta: &[f64]) -> Vec<f64> {
        let beta = DVector::from_column_slice(beta);
        let starts: Vec<usize> = (0..self.n_paths).step_by(CHUNK).collect();
        starts
            .par_iter()
            .flat_map_iter(|&a| {
                let x = self.design(cols, None, a..(a + CHUNK).min(self.n_paths));
                x.tr_mul(&beta).as_slice().to_vec()
            })
            .collect()
    }

    /// Returns fitted values and the residual RMS. For a joint regressor the
    /// multiplier block is left out of the fit.
    pub fn project(&self, cols: &[&[f64]], target: &[f64]) -> (Vec<f64>, f64) {
        assert!(!self.is_joint(), "project needs a plain regressor");
        let beta = self.coefficients(cols, None, target);
        let fitted = self.evaluate(cols, &beta);
        let ss: f64 = fitted.iter().zip(target).map(|(f, y)| (y - f) * (y - f)).sum();
        (fitted, (ss / self.n_paths as f64).sqrt())
    }

    /// Heteroscedasticity-robust score statistic for `E[target | X] = 0`:
    /// `S' B⁺ S` with `S = Σ φ(X_p) y_p` and `B = Σ φ φ' y_p²`. Returns the
    /// statistic and the rank of `B`, its degrees of freedom under the null.
    pub fn score_statistic(&self, cols: &[&[f64]], target: &[f64]) -> (f64, usize) {
        let k = self.basis_size();
        // One matrix holding `[S | B]` so both are summed in chunk order.
        let sb = self.chunked(|range| {
            let mut x = self.design(cols, None, range.clone());
            let s = &x * DVector::from_column_slice(&target[range.clone()]);
            for (mut col, y) in x.column_iter_mut().zip(&target[range]) {
                col *= y.abs();
            }
            let mut out = DMatrix::<f64>::zeros(k, k + 1);
            out.column_mut(0).copy_from(&s);
            out.view_mut((0, 1), (k, k)).gemm(1.0, &x, &x.transpose(), 0.0);
            out
        });
        let s = sb.column(0).into_owned();
        let b = sb.columns(1, k).into_owned();
        let eig = b.symmetric_eigen();
        let max = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
        if !(max > 0.0) {
            return (0.0, 0);
        }
        let mut stat = 0.0;
        let mut rank = 0;
        for (j, &ev) in eig.eigenvalues.iter().enumerate() {
            if ev > 1e-10 * max {
                let proj = eig.eigenvectors.column(j).dot(&s);
                stat += proj * proj / ev;
                rank += 1;
            }
        }
        (stat, rank)
    }

    /// Joint fit `target ≈ a(X) + b(X) mult`; returns `(a(X), b(X))` per
    /// path. A plain regressor returns `b ≡ 0`.
    pub fn represent(&self, cols: &[&[f64]], mult: &[f64], target: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let k = self.exponents.len();
        let beta = self.coefficients(cols, Some(mult), target);
        let a = self.evaluate(cols, &beta[..k]);
        let b = match self.mult_scale {
            Some(ms) => self.evaluate(cols, &beta[k..]).into_iter().map(|v| v / ms).collect(),
            None => vec![0.0; self.n_paths],
        };
        (a, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monomial_counts() {
        assert_eq!(monomial_exponents(0, 3).len(), 1);
        assert_eq!(monomial_exponents(1, 3).len(), 4);
        assert_eq!(monomial_exponents(2, 2).len(), 6);
        assert_eq!(monomial_exponents(3, 3).len(), 20);
        assert!(monomial_exponents(3, 3).iter().all(|e| e.iter().sum::<u32>() <= 3));
    }

    #[test]
    fn constant_columns_reduce_to_mean() {
        let c = vec![3.0; 10];
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let r = Regressor::new(&[&c], 3);
        assert_eq!(r.basis_size(), 1);
        let (f, _) = r.project(&[&c], &y);
        assert!(f.iter().all(|v| (v - 4.5).abs() < 1e-12));
    }

    #[test]
    fn exact_polynomial_is_recovered() {
        let x: Vec<f64> = (0..200).map(|i| (i as f64 - 100.0) / 37.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 1.0 - 2.0 * v + 0.5 * v * v * v).collect();
        let r = Regressor::new(&[&x], 3);
        assert!(r.ridge().is_none());
        let (f, rms) = r.project(&[&x], &y);
        assert!(rms < 1e-9);
        for (a, b) in f.iter().zip(&y) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn affine_copies_are_dropped() {
        let x: Vec<f64> = (0..300).map(|i| ((i * 7919) % 300) as f64 / 50.0).collect();
        let x2: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let y: Vec<f64> = x.iter().map(|v| v * v).collect();
        let r = Regressor::new(&[&x, &x2], 2);
        assert_eq!(r.basis_size(), 3);
        assert!(r.ridge().is_none());
        let (f, _) = r.project(&[&x, &x2], &y);
        for (a, b) in f.iter().zip(&y) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn degenerate_design_falls_back_to_ridge() {
        // Two distinct values only: x, x² and x³ span the same space.
        let x: Vec<f64> = (0..300).map(|i| (i % 2) as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 1.0).collect();
        let r = Regressor::new(&[&x], 3);
        assert!(r.ridge().is_some());
        let (f, _) = r.project(&[&x], &y);
        for (a, b) in f.iter().zip(&y) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn thread_count_does_not_change_output() {
        let x: Vec<f64> = (0..9000).map(|i| ((i as f64) * 0.37).sin()).collect();
        let y: Vec<f64> = (0..9000).map(|i| ((i as f64) * 0.11).cos()).collect();
        let a = Regressor::new(&[&x], 3).project(&[&x], &y).0;
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| Regressor::new(&[&x], 3).project(&[&x], &y).0);
        assert_eq!(a, b);
    }

    #[test]
    fn ridge_keeps_constants_exact() {
        let x: Vec<f64> = (0..300).map(|i| (i % 2) as f64).collect();
        let r = Regressor::new(&[&x], 3);
        assert!(r.ridge().is_some());
        let (f, _) = r.project(&[&x], &vec![2.5; 300]);
        assert!(f.iter().all(|v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn score_statistic_is_chi_square_under_the_null() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mut total = 0.0;
        let reps = 200;
        for _ in 0..reps {
            let x: Vec<f64> = (0..2000).map(|_| rng.random_range(-1.0..1.0)).collect();
            // Heteroscedastic noise with zero conditional mean.
            let y: Vec<f64> = x.iter().map(|v| (1.0 + 3.0 * v * v) * (rng.random::<f64>() - 0.5)).collect();
            let r = Regressor::new(&[&x], 3);
            let (w, dof) = r.score_statistic(&[&x], &y);
            assert_eq!(dof, 4);
            total += w;
        }
        let mean = total / reps as f64;
        assert!((mean - 4.0).abs() < 0.6, "{mean}");
        let x: Vec<f64> = (0..2000).map(|i| (i as f64 / 1000.0) - 1.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.5 * v + (v * 91.0).sin()).collect();
        assert!(Regressor::new(&[&x], 3).score_statistic(&[&x], &y).0 > 100.0);
    }

    #[test]
    fn joint_fit_recovers_representation() {
        let x: Vec<f64> = (0..4000).map(|i| ((i as f64) * 0.37).sin()).collect();
        let m: Vec<f64> = (0..4000).map(|i| ((i as f64) * 1.713).cos() * 0.1).collect();
        let y: Vec<f64> = x.iter().zip(&m).map(|(x, m)| 1.0 + x * x + (2.0 - x) * m).collect();
        let r = Regressor::joint(&[&x], &m, 2);
        assert!(r.is_joint());
        let (a, b) = r.represent(&[&x], &m, &y);
        for p in 0..4000 {
            assert!((a[p] - 1.0 - x[p] * x[p]).abs() < 1e-8);
            assert!((b[p] - 2.0 + x[p]).abs() < 1e-8);
        }
        let zero = vec![0.0; 4000];
        let r = Regressor::joint(&[&x], &zero, 2);
        assert!(!r.is_joint());
        let (_, b) = r.represent(&[&x], &zero, &y);
        assert!(b.iter().all(|v| *v == 0.0));
    }
}
