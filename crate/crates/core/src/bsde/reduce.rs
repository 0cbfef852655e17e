use crate::error::{Error, Result};
use crate::information::{InfoKind, InformationModel, Projector, DEFAULT_EPS_DEN};
use crate::market::PathEnsemble;

use super::{BsdeSolution, Scheme};

/// A partial-information solution obtained from a full-information one, with
/// the `Δ⟨M⟩`-weighted second moments of both integrands.
#[derive(Debug, Clone)]
pub struct Reduction {
    pub solution: BsdeSolution,
    /// `E[Σ |Z̃_i|² Δ⟨M⟩_i]`
    pub full_z_norm: f64,
    /// `E[Σ |Ẑ_i|² Δ⟨M⟩_i]`
    pub reduced_z_norm: f64,
}

impl Reduction {
    /// `‖Ẑ‖ <= ‖Z̃‖` up to rounding.
    pub fn projection_contracts(&self) -> bool {
        self.reduced_z_norm <= self.full_z_norm * (1.0 + 1e-12)
    }
}

fn weighted_z_norm(ens: &PathEnsemble, z: &[Vec<f64>]) -> f64 {
    let total: f64 = z
        .iter()
        .enumerate()
        .map(|(i, row)| row.iter().map(|v| v * v).sum::<f64>() * ens.d_bracket(i))
        .sum();
    total / ens.n_paths() as f64
}

/// Keep `Ỹ`, replace `Z̃` by the density of the `H`-dual projection of
/// `∫ Z̃ d⟨M⟩` against `⟨M⟩`, and fold `B = ∫ (Z̃ - Ẑ) dM` into `O`.
///
/// Exact for drivers that do not depend on `z`; for `z`-dependent drivers the
/// full-information equation would need `Ẑ` inside the driver, which is not
/// supported here.
pub fn reduce_full_to_partial(
    full: &BsdeSolution,
    ens: &PathEnsemble,
    info: &InformationModel,
) -> Result<Reduction> {
    if full.info.kind != InfoKind::Full {
        return Err(Error::InvalidInformation("reduction expects a full-information solution".into()));
    }
    if &full.grid != ens.grid() || full.n_paths() != ens.n_paths() {
        return Err(Error::InvalidGrid("solution and ensemble grids differ".into()));
    }
    if full.driver_depends_on_z {
        return Err(Error::Unsupported(format!(
            "{}: reduction with a z-dependent driver needs the coupled full-information equation",
            full.driver_name
        )));
    }
    info.validate(ens.grid())?;
    let full_z_norm = weighted_z_norm(ens, &full.z);
    if info.kind == InfoKind::Full {
        return Ok(Reduction { solution: full.clone(), full_z_norm, reduced_z_norm: full_z_norm });
    }

    let proj = Projector::new(ens, info.basis_degree)?;
    let n = ens.n_steps();
    let pc = ens.n_paths();
    let mut sol = full.clone();
    let mut null_paths = 0;
    for i in 0..n {
        let db = ens.d_bracket(i);
        let num: Vec<f64> = full.z[i].iter().map(|z| z * db).collect();
        let (z_hat, nulls, _) = proj.dual_project_step(info, i, &num, &vec![db; pc], DEFAULT_EPS_DEN)?;
        null_paths += nulls;
        let dm = ens.dm(i);
        for p in 0..pc {
            sol.d_o[i][p] += (full.z[i][p] - z_hat[p]) * dm[p];
        }
        sol.z[i] = z_hat;
    }
    sol.info = *info;
    sol.scheme = Scheme::Reduced;
    sol.null_paths = null_paths;
    let reduced_z_norm = weighted_z_norm(ens, &sol.z);
    Ok(Reduction { solution: sol, full_z_norm, reduced_z_norm })
}
