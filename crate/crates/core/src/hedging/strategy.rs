use crate::bsde::{solve_with, Claim, Driver, SolverSettings};
use crate::decomposition::{fs_with, Decomposition};
use crate::error::{Error, Result};
use crate::information::{InformationModel, Projector};
use crate::market::PathEnsemble;
use crate::Process;

/// Hedging strategy `(θ, η)` with value `V = θ S + η` and cost
/// `C_i = V_i - Σ_{j<i} θ_j ΔS_j`.
#[derive(Debug, Clone)]
pub struct Strategy {
    pub info: InformationModel,
    /// Risky holding over `(t_i, t_{i+1}]`, `N` rows.
    pub theta: Process,
    /// Riskless holding at `t_i`, `N + 1` rows.
    pub eta: Process,
    pub value: Process,
    pub cost: Process,
}

impl Strategy {
    /// Assemble from a holding `θ` and a value process `V`.
    pub fn from_theta_and_value(ens: &PathEnsemble, info: InformationModel, theta: Process, value: Process) -> Self {
        let n = ens.n_steps();
        let pc = ens.n_paths();
        let mut cost = Vec::with_capacity(n + 1);
        let mut gains = vec![0.0; pc];
        for i in 0..=n {
            cost.push(value[i].iter().zip(&gains).map(|(v, g)| v - g).collect::<Vec<f64>>());
            if i < n {
                for ((g, th), ds) in gains.iter_mut().zip(&theta[i]).zip(ens.ds(i)) {
                    *g += th * ds;
                }
            }
        }
        // Holding in force at t_i: θ_{i-1} for i >= 1, θ_0 at the start.
        let eta = (0..=n)
            .map(|i| {
                let th = &theta[i.saturating_sub(1).min(n - 1)];
                value[i].iter().zip(th).zip(ens.s(i)).map(|((v, t), s)| v - t * s).collect()
            })
            .collect();
        Self { info, theta, eta, value, cost }
    }

    pub fn n_steps(&self) -> usize {
        self.theta.len()
    }

    /// `ΔC_i`, `N` rows.
    pub fn cost_increments(&self) -> Process {
        self.cost.windows(2).map(|w| w[1].iter().zip(&w[0]).map(|(b, a)| b - a).collect()).collect()
    }

    /// `max_p |V_{p,N} - ξ_p|`.
    pub fn replication_error(&self, claim: &Claim) -> f64 {
        self.value[self.n_steps()].iter().zip(claim.values()).map(|(v, x)| (v - x).abs()).fold(0.0, f64::max)
    }
}

/// Strategy read off a Föllmer-Schweizer decomposition: `θ = β`, `V = Y`.
pub fn strategy_from_decomposition(ens: &PathEnsemble, decomposition: &Decomposition) -> Strategy {
    Strategy::from_theta_and_value(
        ens,
        decomposition.info,
        decomposition.integrand.clone(),
        decomposition.solution.y.clone(),
    )
}

pub(crate) fn optimal_with(
    proj: &Projector,
    info: &InformationModel,
    claim: &Claim,
    settings: &SolverSettings,
) -> Result<(Strategy, Decomposition)> {
    let fs = fs_with(proj, info, claim, settings)?;
    Ok((strategy_from_decomposition(proj.ensemble(), &fs), fs))
}

/// Locally risk-minimizing strategy for `claim`: `θ = β^H` from the
/// Föllmer-Schweizer decomposition, `V = Y`, `C = Y₀ + O`.
pub fn optimal_strategy(
    ens: &PathEnsemble,
    info: &InformationModel,
    claim: &Claim,
    settings: &SolverSettings,
) -> Result<(Strategy, Decomposition)> {
    info.validate(ens.grid())?;
    optimal_with(&Projector::for_equation(ens, info, !ens.config().alpha.is_zero())?, info, claim, settings)
}

pub(crate) fn mean_self_financing_with(
    proj: &Projector,
    info: &InformationModel,
    claim: &Claim,
    theta: Process,
) -> Result<Strategy> {
    let ens = proj.ensemble();
    let n = ens.n_steps();
    if theta.len() != n || theta.iter().any(|r| r.len() != ens.n_paths()) {
        return Err(Error::ShapeMismatch(format!("holding must have {n} rows of {} paths", ens.n_paths())));
    }
    let mut c_final = claim.values().to_vec();
    for (i, row) in theta.iter().enumerate() {
        for ((c, th), ds) in c_final.iter_mut().zip(row).zip(ens.ds(i)) {
            *c -= th * ds;
        }
    }
    let c_claim = Claim::from_values("terminal cost", c_final)?;
    let cost =
        solve_with(proj, &info.as_full(), &Driver::zero(), &c_claim, &SolverSettings::default())?.y;
    let mut value = Vec::with_capacity(n + 1);
    let mut gains = vec![0.0; ens.n_paths()];
    for i in 0..=n {
        value.push(cost[i].iter().zip(&gains).map(|(c, g)| c + g).collect::<Vec<f64>>());
        if i < n {
            for ((g, th), ds) in gains.iter_mut().zip(&theta[i]).zip(ens.ds(i)) {
                *g += th * ds;
            }
        }
    }
    value[n] = claim.values().to_vec();
    Ok(Strategy::from_theta_and_value(ens, *info, theta, value))
}

/// The mean-self-financing strategy with holding `θ` that replicates
/// `claim`: `C_t = E[ξ - Σ θ ΔS | F_t]`.
pub fn mean_self_financing_strategy(
    ens: &PathEnsemble,
    info: &InformationModel,
    claim: &Claim,
    theta: Process,
) -> Result<Strategy> {
    info.validate(ens.grid())?;
    mean_self_financing_with(&Projector::new(ens, info.basis_degree)?, info, claim, theta)
}
