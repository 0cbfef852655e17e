//! Full and delayed information, and the regression engines for conditional
//! expectations and predictable dual projections.
//!
//! At grid step `i` the full filtration exposes the state `X_{t_i}`; the
//! delayed one exposes `X_{(t_i - τ)+}`. Both are served by one regressor per
//! time index, so an `F`-estimate at time `j` and an `H`-estimate at time
//! `j + τ/Δt` share the same operator.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{Grid, PathEnsemble};
use crate::regression::{Regressor, MAX_COORDS, MAX_DEGREE};
use crate::Process;

pub const DEFAULT_BASIS_DEGREE: usize = 3;
/// Denominators of the dual projection below this are treated as null sets.
pub const DEFAULT_EPS_DEN: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfoKind {
    Full,
    Delayed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InfoLevel {
    F,
    H,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InformationModel {
    pub kind: InfoKind,
    /// Delay in time units; ignored for `Full`.
    pub tau: f64,
    pub basis_degree: usize,
}

impl InformationModel {
    pub fn full(basis_degree: usize) -> Self {
        Self { kind: InfoKind::Full, tau: 0.0, basis_degree }
    }

    pub fn delayed(tau: f64, basis_degree: usize) -> Self {
        Self { kind: InfoKind::Delayed, tau, basis_degree }
    }

    pub fn is_full(&self) -> bool {
        self.kind == InfoKind::Full
    }

    pub fn level(&self) -> InfoLevel {
        match self.kind {
            InfoKind::Full => InfoLevel::F,
            InfoKind::Delayed => InfoLevel::H,
        }
    }

    /// The same basis, full information.
    pub fn as_full(&self) -> Self {
        Self::full(self.basis_degree)
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        if self.basis_degree > MAX_DEGREE {
            return Err(Error::InvalidInformation(format!(
                "basis degree {} above supported maximum {MAX_DEGREE}",
                self.basis_degree
            )));
        }
        if self.kind == InfoKind::Delayed {
            let t = grid.horizon();
            if !(self.tau > 0.0 && self.tau < t) {
                return Err(Error::InvalidInformation(format!("delay {} must lie in (0, {t})", self.tau)));
            }
            if grid.steps_for(self.tau).is_none() {
                return Err(Error::InvalidInformation(format!(
                    "delay {} is not a multiple of the step {}",
                    self.tau,
                    grid.dt()
                )));
            }
        }
        Ok(())
    }

    /// Delay in grid steps (0 for full information).
    pub fn lag_steps(&self, grid: &Grid) -> Result<usize> {
        self.validate(grid)?;
        Ok(match self.kind {
            InfoKind::Full => 0,
            InfoKind::Delayed => grid.steps_for(self.tau).expect("validated"),
        })
    }

    /// Grid index whose state generates the information at step `i`.
    pub fn info_index(&self, grid: &Grid, i: usize) -> Result<usize> {
        Ok(i.saturating_sub(self.lag_steps(grid)?))
    }
}

/// Per-path estimate of `E[target | G_{t_i}]`.
#[derive(Debug, Clone)]
pub struct ConditionalEstimate {
    pub values: Vec<f64>,
    pub level: InfoLevel,
    pub step: usize,
    /// Grid index of the state the estimate is a function of.
    pub info_index: usize,
    pub basis_size: usize,
    pub residual_rms: f64,
    pub ridge: Option<f64>,
}

/// Density `dL^H / d⟨M⟩^H` per step and path, with null-set bookkeeping.
#[derive(Debug, Clone)]
pub struct DualProjection {
    pub z: Process,
    /// Paths per step where the denominator estimate fell below `eps_den`.
    pub null_paths: Vec<usize>,
    /// Steps whose regressions needed the ridge fallback.
    pub ridge_steps: Vec<usize>,
}

/// Lazily built regressors, one per time index, for a fixed ensemble and
/// basis degree.
pub struct Projector<'a> {
    ens: &'a PathEnsemble,
    degree: usize,
    /// `Σ_{k = i-L}^{i-1} (M_k - M_0) Δ⟨M⟩_k` per step, appended to the state.
    memory: Option<Process>,
    regs: Vec<OnceLock<Regressor>>,
    joint: Vec<OnceLock<Regressor>>,
}

impl<'a> Projector<'a> {
    pub fn new(ens: &'a PathEnsemble, degree: usize) -> Result<Self> {
        Self::with_memory(ens, degree, 0)
    }

    /// Projector whose state also carries the `⟨M⟩`-integral of `M - M_0`
    /// over the last `lag` steps. Under delayed information a driver in `z`
    /// makes `Y` depend on that window, so the plain state is not Markov.
    /// `lag = 0` gives [`Projector::new`].
    pub fn with_memory(ens: &'a PathEnsemble, degree: usize, lag: usize) -> Result<Self> {
        if degree > MAX_DEGREE {
            return Err(Error::InvalidInformation(format!("basis degree {degree} above {MAX_DEGREE}")));
        }
        if ens.config().state.len() + usize::from(lag > 0) > MAX_COORDS {
            return Err(Error::InvalidInformation(format!("state vector longer than {MAX_COORDS}")));
        }
        let memory = (lag > 0).then(|| {
            let m0 = ens.config().m0;
            let weighted: Process =
                (0..ens.n_steps()).map(|k| ens.m(k).iter().map(|m| (m - m0) * ens.d_bracket(k)).collect()).collect();
            let mut rows = Vec::with_capacity(ens.n_steps() + 1);
            let mut acc = vec![0.0; ens.n_paths()];
            rows.push(acc.clone());
            for i in 1..=ens.n_steps() {
                for (a, w) in acc.iter_mut().zip(&weighted[i - 1]) {
                    *a += w;
                }
                if i > lag {
                    for (a, w) in acc.iter_mut().zip(&weighted[i - 1 - lag]) {
                        *a -= w;
                    }
                }
                rows.push(acc.clone());
            }
            rows
        });
        let regs = (0..=ens.n_steps()).map(|_| OnceLock::new()).collect();
        let joint = (0..ens.n_steps()).map(|_| OnceLock::new()).collect();
        Ok(Self { ens, degree, memory, regs, joint })
    }

    /// Projector suited to a backward equation under `info`: with memory of
    /// the delay window when the driver reads `z` and information is delayed.
    pub fn for_equation(ens: &'a PathEnsemble, info: &InformationModel, driver_depends_on_z: bool) -> Result<Self> {
        let lag = if driver_depends_on_z && !info.is_full() { info.lag_steps(ens.grid())? } else { 0 };
        Self::with_memory(ens, info.basis_degree, lag)
    }

    fn state(&self, i: usize) -> Vec<&[f64]> {
        let mut s = self.ens.state(i);
        if let Some(mem) = &self.memory {
            s.push(&mem[i]);
        }
        s
    }

    pub fn has_memory(&self) -> bool {
        self.memory.is_some()
    }

    pub fn ensemble(&self) -> &'a PathEnsemble {
        self.ens
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    fn regressor(&self, j: usize) -> &Regressor {
        self.regs[j].get_or_init(|| Regressor::new(&self.state(j), self.degree))
    }

    fn joint_regressor(&self, i: usize) -> &Regressor {
        self.joint[i].get_or_init(|| Regressor::joint(&self.state(i), self.ens.dm(i), self.degree))
    }

    /// Least-squares martingale representation over step `i`:
    /// `target ≈ Ê + Z̃ ΔM_i` with `Ê` and `Z̃` functions of `X_{t_i}`, fitted
    /// jointly. Returns `(Ê, Z̃)` and whether the ridge fallback was used.
    pub fn represent(&self, i: usize, target: &[f64]) -> Result<(Vec<f64>, Vec<f64>, bool)> {
        if i >= self.ens.n_steps() {
            return Err(Error::ShapeMismatch(format!("step {i} has no increment")));
        }
        if target.len() != self.ens.n_paths() {
            return Err(Error::ShapeMismatch(format!(
                "target has {} entries for {} paths",
                target.len(),
                self.ens.n_paths()
            )));
        }
        if let Some(p) = target.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: i, what: format!("regression target on path {p}") });
        }
        let reg = self.joint_regressor(i);
        let (e, z) = reg.represent(&self.state(i), self.ens.dm(i), target);
        Ok((e, z, reg.ridge().is_some()))
    }

    /// Number of basis functions at time index `j`.
    pub fn basis_size(&self, j: usize) -> usize {
        self.regressor(j).basis_size()
    }

    pub fn ridge(&self, j: usize) -> Option<f64> {
        self.regressor(j).ridge()
    }

    /// Robust score statistic for `E[target | X_{t_j}] = 0` and its degrees
    /// of freedom.
    pub fn score_statistic(&self, j: usize, target: &[f64]) -> Result<(f64, usize)> {
        if target.len() != self.ens.n_paths() {
            return Err(Error::ShapeMismatch(format!("target has {} entries", target.len())));
        }
        if let Some(p) = target.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: j, what: format!("test target on path {p}") });
        }
        Ok(self.regressor(j).score_statistic(&self.state(j), target))
    }

    /// Least-squares projection of `target` onto the basis in `X_{t_j}`.
    pub fn project_on_state(&self, j: usize, target: &[f64]) -> Result<(Vec<f64>, f64)> {
        if target.len() != self.ens.n_paths() {
            return Err(Error::ShapeMismatch(format!(
                "target has {} entries for {} paths",
                target.len(),
                self.ens.n_paths()
            )));
        }
        if let Some(p) = target.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: j, what: format!("regression target on path {p}") });
        }
        Ok(self.regressor(j).project(&self.state(j), target))
    }

    pub fn cond_expect(&self, info: &InformationModel, step: usize, target: &[f64]) -> Result<ConditionalEstimate> {
        if step > self.ens.n_steps() {
            return Err(Error::ShapeMismatch(format!("step {step} beyond grid")));
        }
        let j = info.info_index(self.ens.grid(), step)?;
        let (values, residual_rms) = self.project_on_state(j, target)?;
        let reg = self.regressor(j);
        Ok(ConditionalEstimate {
            values,
            level: info.level(),
            step,
            info_index: j,
            basis_size: reg.basis_size(),
            residual_rms,
            ridge: reg.ridge(),
        })
    }

    /// Discrete `dL^H / d⟨M⟩^H`: the ratio of the `H`-estimates of the
    /// numerator and denominator increments at each step.
    pub fn dual_project(
        &self,
        info: &InformationModel,
        numerator: &[Vec<f64>],
        denominator: &[Vec<f64>],
        eps_den: f64,
    ) -> Result<DualProjection> {
        let n = self.ens.n_steps();
        if numerator.len() != n || denominator.len() != n {
            return Err(Error::ShapeMismatch(format!("dual projection needs {n} steps of increments")));
        }
        let mut out = DualProjection { z: Vec::with_capacity(n), null_paths: vec![0; n], ridge_steps: Vec::new() };
        for i in 0..n {
            if let Some(p) = denominator[i].iter().position(|&d| !(d >= 0.0)) {
                return Err(Error::InvalidInformation(format!(
                    "negative or NaN denominator increment at step {i}, path {p}"
                )));
            }
            let (z, nulls, ridge) = self.dual_project_step(info, i, &numerator[i], &denominator[i], eps_den)?;
            out.null_paths[i] = nulls;
            if ridge {
                out.ridge_steps.push(i);
            }
            out.z.push(z);
        }
        Ok(out)
    }

    pub(crate) fn dual_project_step(
        &self,
        info: &InformationModel,
        i: usize,
        numerator: &[f64],
        denominator: &[f64],
        eps_den: f64,
    ) -> Result<(Vec<f64>, usize, bool)> {
        let num = self.cond_expect(info, i, numerator)?;
        let ridge = num.ridge.is_some();
        // A denominator that is the same on every path is already predictable.
        let den: Vec<f64> = if denominator.iter().all(|&d| d == denominator[0]) {
            denominator.to_vec()
        } else {
            self.cond_expect(info, i, denominator)?.values
        };
        let mut nulls = 0;
        let z = num
            .values
            .iter()
            .zip(&den)
            .map(|(&a, &d)| {
                if d > eps_den {
                    a / d
                } else {
                    nulls += 1;
                    0.0
                }
            })
            .collect();
        Ok((z, nulls, ridge))
    }
}

/// `E[target | G_{t_step}]` where `G` is `F` or `H` according to `info`.
pub fn cond_expect(
    ens: &PathEnsemble,
    step: usize,
    info: &InformationModel,
    target: &[f64],
) -> Result<ConditionalEstimate> {
    info.validate(ens.grid())?;
    Projector::new(ens, info.basis_degree)?.cond_expect(info, step, target)
}

/// Discrete `H`-predictable dual projection density of `L` against `⟨M⟩`.
pub fn dual_project(
    ens: &PathEnsemble,
    info: &InformationModel,
    numerator: &[Vec<f64>],
    denominator: &[Vec<f64>],
) -> Result<DualProjection> {
    info.validate(ens.grid())?;
    Projector::new(ens, info.basis_degree)?.dual_project(info, numerator, denominator, DEFAULT_EPS_DEN)
}

/// The bracket increments laid out per step and path.
pub fn bracket_increments(ens: &PathEnsemble) -> Process {
    (0..ens.n_steps()).map(|i| vec![ens.d_bracket(i); ens.n_paths()]).collect()
}
