//! Backward equations
//! `Y_t = ξ + ∫_t^T f(s, Y_s, Z_s) d⟨M⟩_s - ∫_t^T Z_s dM_s - (O_T - O_t)`
//! on the simulation grid, with `Z` measurable for the declared information.
//!
//! All solvers define `ΔO` as the pathwise residual of the discrete equation,
//! so the recursion holds on every path and the orthogonality of `O` is what
//! the statistics test.

mod claim;
mod delayed;
mod driver;
mod norm;
mod reduce;
mod solver;

use serde::{Deserialize, Serialize};

pub use claim::{Claim, ClaimSpec, Payoff, Underlying};
pub use delayed::solve_bsde_delayed_blocks;
pub use driver::{Driver, DriverArgs, DriverSpec};
pub use norm::{block_count, p_norm, PNorm, P_NORM_BASE};
pub use reduce::{reduce_full_to_partial, Reduction};
pub use solver::{picard_step, solve_bsde_partial, SolverSettings};

pub(crate) use delayed::solve_delayed_with;
pub(crate) use solver::solve_with;

use crate::information::InformationModel;
use crate::market::{Grid, PathEnsemble};
use crate::stats::ROUNDING_TOL;
use crate::Process;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Picard,
    DelayedBlocks,
    Reduced,
}

/// Discrete solution `(Y, Z, ΔO)` with the driver increments it was built
/// with and solver diagnostics.
#[derive(Debug, Clone)]
pub struct BsdeSolution {
    pub grid: Grid,
    /// `Y_{t_i}`, `N + 1` rows.
    pub y: Process,
    /// `Z_i` on `(t_i, t_{i+1}]`, `N` rows.
    pub z: Process,
    /// `ΔO_i = O_{t_{i+1}} - O_{t_i}`, `N` rows.
    pub d_o: Process,
    /// `f(t_i, Y_i, Z_i) Δ⟨M⟩_i`, `N` rows.
    pub drv: Process,
    pub info: InformationModel,
    pub scheme: Scheme,
    pub driver_name: String,
    pub driver_depends_on_z: bool,
    pub iterations: usize,
    /// Squared weighted-norm distances between successive iterates, scaled by
    /// `210^-(m̂-1)`. The first entry is the distance of the first iterate
    /// from the starting point `(0, 0, 0)`.
    pub p_norm_history: Vec<f64>,
    /// `sqrt(d_k / d_{k-1})` for `k >= 2`.
    pub ratios: Vec<f64>,
    /// Relative classical-norm distances between successive iterates.
    pub classical_history: Vec<f64>,
    pub converged: bool,
    /// Paths per step where the dual projection hit a null denominator.
    pub null_paths: usize,
    pub ridge_steps: usize,
}

impl BsdeSolution {
    pub fn n_steps(&self) -> usize {
        self.z.len()
    }

    pub fn n_paths(&self) -> usize {
        self.y[0].len()
    }

    /// `Y_0`, constant across paths since `F_0` is trivial.
    pub fn y0(&self) -> f64 {
        self.y[0][0]
    }

    /// `O_T - O_0` per path.
    pub fn o_total(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_paths()];
        for row in &self.d_o {
            for (o, d) in out.iter_mut().zip(row) {
                *o += d;
            }
        }
        out
    }

    /// `max_p |Y_{p,N} - ξ_p|`.
    pub fn terminal_error(&self, claim: &Claim) -> f64 {
        self.y[self.n_steps()].iter().zip(claim.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Largest rounding-scaled violation of
    /// `Y_i = Y_{i+1} + drv_i - Z_i ΔM_i - ΔO_i`, in units of
    /// [`ROUNDING_TOL`]. Values up to 1 are rounding.
    pub fn identity_error(&self, ens: &PathEnsemble) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n_steps() {
            let dm = ens.dm(i);
            for p in 0..self.n_paths() {
                let zdm = self.z[i][p] * dm[p];
                let rhs = self.y[i + 1][p] + self.drv[i][p] - zdm - self.d_o[i][p];
                let scale = self.y[i][p].abs()
                    + self.y[i + 1][p].abs()
                    + self.drv[i][p].abs()
                    + zdm.abs()
                    + self.d_o[i][p].abs();
                worst = worst.max((self.y[i][p] - rhs).abs() / (ROUNDING_TOL * scale.max(f64::MIN_POSITIVE)));
            }
        }
        worst
    }

    pub fn triplet(&self) -> Triplet {
        Triplet { y: self.y.clone(), z: self.z.clone(), d_o: self.d_o.clone() }
    }
}

/// A bare `(Y, Z, ΔO)` triple, e.g. the difference of two solutions.
#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub y: Process,
    pub z: Process,
    pub d_o: Process,
}

impl Triplet {
    pub fn difference(a: &BsdeSolution, b: &BsdeSolution) -> Triplet {
        fn sub(x: &Process, y: &Process) -> Process {
            x.iter().zip(y).map(|(r, s)| r.iter().zip(s).map(|(u, v)| u - v).collect()).collect()
        }
        Triplet { y: sub(&a.y, &b.y), z: sub(&a.z, &b.z), d_o: sub(&a.d_o, &b.d_o) }
    }
}
