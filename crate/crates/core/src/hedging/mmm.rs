//! Minimal martingale measure `dP*/dP = E(-∫ α dM)_T`, discretized as
//! `L̃_{i+1} = L̃_i (1 - α_i ΔM_i)`.

use crate::bsde::Claim;
use crate::error::{Error, Result};
use crate::information::{InformationModel, Projector};
use crate::market::PathEnsemble;
use crate::Process;

#[derive(Debug, Clone)]
pub struct MmmWeights {
    /// `L̃_{t_i}`, `N + 1` rows.
    pub density: Process,
    /// `1 - α_i ΔM_i > 0` on every step of the path.
    pub valid: Vec<bool>,
    pub invalid: usize,
}

impl MmmWeights {
    pub fn terminal(&self) -> &[f64] {
        &self.density[self.density.len() - 1]
    }

    pub fn all_valid(&self) -> bool {
        self.invalid == 0
    }
}

/// Discrete stochastic exponential of `-∫ α dM`. Errors when more than
/// `max_failure_fraction` of the paths have a nonpositive factor.
pub fn mmm_density(ens: &PathEnsemble, max_failure_fraction: f64) -> Result<MmmWeights> {
    let n = ens.n_steps();
    let pc = ens.n_paths();
    let mut density = Vec::with_capacity(n + 1);
    density.push(vec![1.0; pc]);
    let mut valid = vec![true; pc];
    for i in 0..n {
        let row: Vec<f64> = (0..pc)
            .map(|p| {
                let factor = 1.0 - ens.alpha(i)[p] * ens.dm(i)[p];
                if !(factor > 0.0) {
                    valid[p] = false;
                }
                density[i][p] * factor
            })
            .collect();
        density.push(row);
    }
    let invalid = valid.iter().filter(|v| !**v).count();
    if invalid as f64 > max_failure_fraction * pc as f64 {
        return Err(Error::JumpConditionViolated { invalid, total: pc });
    }
    Ok(MmmWeights { density, valid, invalid })
}

#[derive(Debug, Clone)]
pub struct MmmPrice {
    /// `E*[ξ | F_{t_i}]` per path.
    pub values: Vec<f64>,
    /// Paths where `E[L̃_T / L̃_t | F_t]` was not positive and `1` was used.
    pub fallback_paths: usize,
}

pub(crate) fn price_with(proj: &Projector, weights: &MmmWeights, claim: &Claim, step: usize) -> Result<MmmPrice> {
    if !weights.all_valid() {
        return Err(Error::JumpConditionViolated { invalid: weights.invalid, total: weights.valid.len() });
    }
    // L̃_t is F_t-measurable and positive, so condition on L̃_T / L̃_t
    // instead, which depends on the state only through the future.
    let lt: Vec<f64> = weights.terminal().iter().zip(&weights.density[step]).map(|(a, b)| a / b).collect();
    let weighted: Vec<f64> = lt.iter().zip(claim.values()).map(|(l, x)| l * x).collect();
    let info = InformationModel::full(proj.degree());
    let num = proj.cond_expect(&info, step, &weighted)?.values;
    let den = proj.cond_expect(&info, step, &lt)?.values;
    let mut fallback_paths = 0;
    let values = num
        .iter()
        .zip(&den)
        .map(|(a, d)| {
            if *d > 0.0 {
                a / d
            } else {
                fallback_paths += 1;
                *a
            }
        })
        .collect();
    Ok(MmmPrice { values, fallback_paths })
}

/// Bayes formula `E*[ξ | F_t] = E[L̃_T ξ | F_t] / E[L̃_T | F_t]` under full
/// information.
pub fn mmm_price(ens: &PathEnsemble, claim: &Claim, step: usize, basis_degree: usize) -> Result<MmmPrice> {
    if step > ens.n_steps() {
        return Err(Error::ShapeMismatch(format!("step {step} beyond grid")));
    }
    let weights = mmm_density(ens, 0.0)?;
    price_with(&Projector::new(ens, basis_degree)?, &weights, claim, step)
}
