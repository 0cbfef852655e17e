//! Remaining quadratic risk `R^H_t = E[(C_T - C_t)² | H_t]` and the local
//! risk quotient on a partition, used to falsify local risk-minimality.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::information::{InformationModel, Projector};
use crate::market::PathEnsemble;
use crate::stats::mean_se;
use crate::Process;

use super::Strategy;

#[derive(Debug, Clone)]
pub struct RiskProcess {
    /// `R^H_{t_i}`, `N + 1` rows, zero at `t_N`.
    pub values: Process,
    /// Path-steps where the regression estimate was negative and clipped.
    pub clipped: usize,
}

pub(crate) fn risk_with(proj: &Projector, info: &InformationModel, strategy: &Strategy) -> Result<RiskProcess> {
    let n = strategy.n_steps();
    let last = &strategy.cost[n];
    let mut values = Vec::with_capacity(n + 1);
    let mut clipped = 0;
    for i in 0..n {
        let sq: Vec<f64> = last.iter().zip(&strategy.cost[i]).map(|(a, b)| (a - b) * (a - b)).collect();
        let mut r = proj.cond_expect(info, i, &sq)?.values;
        for v in r.iter_mut().filter(|v| **v < 0.0) {
            *v = 0.0;
            clipped += 1;
        }
        values.push(r);
    }
    values.push(vec![0.0; last.len()]);
    Ok(RiskProcess { values, clipped })
}

/// `R^H_{t_i} = E[(C_N - C_i)² | H_{t_i}]`, clipped at zero.
pub fn risk_process(strategy: &Strategy, ens: &PathEnsemble, info: &InformationModel) -> Result<RiskProcess> {
    info.validate(ens.grid())?;
    risk_with(&Projector::new(ens, info.basis_degree)?, info, strategy)
}

/// Bounded, `H`-predictable test perturbations `δ`, zero on the last step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Perturbation {
    Constant { value: f64 },
    /// `value * sign(M - M0)` at the information index.
    SignLaggedM { value: f64 },
    /// `value` on the steps of one partition cell, zero elsewhere.
    CellBump { cell: usize, value: f64 },
}

impl Perturbation {
    pub fn battery(value: f64, cells: usize) -> Vec<Perturbation> {
        vec![
            Perturbation::Constant { value },
            Perturbation::SignLaggedM { value },
            Perturbation::CellBump { cell: cells / 2, value },
        ]
    }

    pub fn name(&self) -> String {
        match self {
            Perturbation::Constant { value } => format!("constant({value})"),
            Perturbation::SignLaggedM { value } => format!("sign_lagged_m({value})"),
            Perturbation::CellBump { cell, value } => format!("cell_bump({cell}, {value})"),
        }
    }

    pub fn eval(&self, ens: &PathEnsemble, info: &InformationModel, partition: &Partition, i: usize) -> Result<Vec<f64>> {
        let pc = ens.n_paths();
        if i + 1 >= ens.n_steps() {
            return Ok(vec![0.0; pc]);
        }
        Ok(match *self {
            Perturbation::Constant { value } => vec![value; pc],
            Perturbation::SignLaggedM { value } => {
                let j = info.info_index(ens.grid(), i)?;
                let m0 = ens.config().m0;
                ens.m(j).iter().map(|m| if m - m0 >= 0.0 { value } else { -value }).collect()
            }
            Perturbation::CellBump { cell, value } => {
                let inside = partition.cell_of(i) == Some(cell);
                vec![if inside { value } else { 0.0 }; pc]
            }
        })
    }

    /// `δ_i` on every step, `N` rows.
    pub fn process(&self, ens: &PathEnsemble, info: &InformationModel, partition: &Partition) -> Result<Process> {
        (0..ens.n_steps()).map(|i| self.eval(ens, info, partition, i)).collect()
    }
}

/// Sub-grid `0 = a_0 < a_1 < ... < a_m = N` of step indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    points: Vec<usize>,
}

impl Partition {
    pub fn new(points: Vec<usize>, n_steps: usize) -> Result<Self> {
        let ok = points.first() == Some(&0)
            && points.last() == Some(&n_steps)
            && points.windows(2).all(|w| w[0] < w[1]);
        if !ok {
            return Err(Error::InvalidGrid(format!("partition {points:?} is not a strictly increasing sub-grid of 0..={n_steps}")));
        }
        Ok(Self { points })
    }

    /// `cells` cells of equal width; `cells` must divide `n_steps`.
    pub fn uniform(n_steps: usize, cells: usize) -> Result<Self> {
        if cells == 0 || n_steps % cells != 0 {
            return Err(Error::InvalidGrid(format!("{cells} cells do not divide {n_steps} steps")));
        }
        let w = n_steps / cells;
        Self::new((0..=cells).map(|k| k * w).collect(), n_steps)
    }

    pub fn n_cells(&self) -> usize {
        self.points.len() - 1
    }

    pub fn cell(&self, k: usize) -> (usize, usize) {
        (self.points[k], self.points[k + 1])
    }

    pub fn cell_of(&self, step: usize) -> Option<usize> {
        (0..self.n_cells()).find(|&k| self.points[k] <= step && step < self.points[k + 1])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellQuotient {
    pub start: usize,
    pub end: usize,
    /// Ensemble mean of the quotient.
    pub mean: f64,
    pub se: f64,
    /// Whether `δ` is nonzero somewhere on the cell.
    pub active: bool,
    /// Zero bracket increment on the cell.
    pub skipped: bool,
}

#[derive(Debug, Clone)]
pub struct RiskQuotient {
    pub cells: Vec<CellQuotient>,
    /// Per-path `r̂` per cell, `H_{t_a}`-measurable.
    pub values: Vec<Vec<f64>>,
    /// `sqrt(mean SE²)` over active cells.
    pub pooled_se: f64,
}

impl RiskQuotient {
    /// Smallest cell mean among active cells.
    pub fn min_mean(&self) -> f64 {
        self.cells.iter().filter(|c| c.active && !c.skipped).map(|c| c.mean).fold(f64::INFINITY, f64::min)
    }

    /// Monte-Carlo floor `3 * pooled SE`.
    pub fn floor(&self) -> f64 {
        3.0 * self.pooled_se
    }
}

pub(crate) fn quotient_with(
    proj: &Projector,
    info: &InformationModel,
    strategy: &Strategy,
    delta: &Process,
    partition: &Partition,
) -> Result<RiskQuotient> {
    let ens = proj.ensemble();
    let n = ens.n_steps();
    if partition.cell(partition.n_cells() - 1).1 != n || delta.len() != n {
        return Err(Error::ShapeMismatch("partition and perturbation must span the grid".into()));
    }
    let pc = ens.n_paths();
    let c_last = &strategy.cost[n];
    let mut cells = Vec::with_capacity(partition.n_cells());
    let mut values = Vec::with_capacity(partition.n_cells());
    for k in 0..partition.n_cells() {
        let (a, b) = partition.cell(k);
        let active = delta[a..b].iter().flatten().any(|&d| d != 0.0);
        let bracket = ens.bracket(b) - ens.bracket(a);
        if !active || !(bracket > 0.0) {
            cells.push(CellQuotient { start: a, end: b, mean: 0.0, se: 0.0, active, skipped: !(bracket > 0.0) });
            values.push(vec![0.0; pc]);
            continue;
        }
        // Change of the mean-self-financing cost from t_a on when θ is
        // replaced by θ + δ on (t_a, t_b].
        let mut gain = vec![0.0; pc];
        for i in a..b {
            for ((g, d), ds) in gain.iter_mut().zip(&delta[i]).zip(ens.ds(i)) {
                *g += d * ds;
            }
        }
        let (gain_hat, _) = proj.project_on_state(a, &gain)?;
        let diff: Vec<f64> = (0..pc)
            .map(|p| {
                let g = gain[p] - gain_hat[p];
                let rem = c_last[p] - strategy.cost[a][p];
                g * g - 2.0 * rem * g
            })
            .collect();
        let r: Vec<f64> = proj.cond_expect(info, a, &diff)?.values.iter().map(|v| v / bracket).collect();
        let (m, se) = mean_se(&diff);
        cells.push(CellQuotient { start: a, end: b, mean: m / bracket, se: se / bracket, active, skipped: false });
        values.push(r);
    }
    let act: Vec<f64> = cells.iter().filter(|c| c.active && !c.skipped).map(|c| c.se * c.se).collect();
    let pooled_se = if act.is_empty() { 0.0 } else { (act.iter().sum::<f64>() / act.len() as f64).sqrt() };
    Ok(RiskQuotient { cells, values, pooled_se })
}

/// Per-cell `[R^H_{t_a}(θ + δ 1_{(t_a, t_b]}) - R^H_{t_a}(θ)] / E[⟨M⟩_{t_b} - ⟨M⟩_{t_a} | H_{t_a}]`
/// for the mean-self-financing strategy `strategy`.
pub fn risk_quotient(
    strategy: &Strategy,
    ens: &PathEnsemble,
    info: &InformationModel,
    perturbation: &Perturbation,
    partition: &Partition,
) -> Result<RiskQuotient> {
    info.validate(ens.grid())?;
    let proj = Projector::new(ens, info.basis_degree)?;
    let delta = perturbation.process(ens, info, partition)?;
    quotient_with(&proj, info, strategy, &delta, partition)
}

/// [`risk_quotient`] with an explicit `H`-predictable perturbation process.
pub fn risk_quotient_for(
    strategy: &Strategy,
    ens: &PathEnsemble,
    info: &InformationModel,
    delta: &Process,
    partition: &Partition,
) -> Result<RiskQuotient> {
    info.validate(ens.grid())?;
    quotient_with(&Projector::new(ens, info.basis_degree)?, info, strategy, delta, partition)
}
