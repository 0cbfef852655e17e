//! Block construction for delayed information with a `z`-only driver.
//!
//! On each block `[(j-1)τ, jτ]`, walked backwards, the terminal value is the
//! solution at the block's right end. Its full-information martingale
//! representation gives `Z̃`, the driver is evaluated at the delayed
//! projection `ᵖZ̃`, and since `ᵖZ̃` on the block depends only on the state up
//! to the block start, the driver integral adds to `E[ξ^j | F_t]` without a
//! further projection.

use crate::error::{Error, Result};
use crate::information::{InfoKind, InformationModel, Projector};
use crate::market::PathEnsemble;

use super::solver::driver_increments;
use super::{BsdeSolution, Claim, Driver, Scheme};

pub(crate) fn solve_delayed_with(
    proj: &Projector,
    info: &InformationModel,
    driver: &Driver,
    claim: &Claim,
    eps_den: f64,
) -> Result<BsdeSolution> {
    let ens = proj.ensemble();
    let grid = ens.grid();
    if info.kind != InfoKind::Delayed {
        return Err(Error::InvalidInformation("block solver needs delayed information".into()));
    }
    let d = info.lag_steps(grid)?;
    let n = grid.n_steps();
    if n % d != 0 {
        return Err(Error::InvalidInformation(format!(
            "horizon {} is not a whole number of delays {}",
            grid.horizon(),
            info.tau
        )));
    }
    if driver.depends_on_y() {
        return Err(Error::InvalidDriver(format!("{}: block solver needs a driver independent of y", driver.name())));
    }
    if driver.growth_c().is_none() {
        return Err(Error::InvalidDriver(format!("{}: no sublinear growth constant declared", driver.name())));
    }
    if claim.n_paths() != ens.n_paths() {
        return Err(Error::ShapeMismatch("claim and ensemble path counts differ".into()));
    }

    let pc = ens.n_paths();
    let mut y = vec![Vec::new(); n + 1];
    let mut z = vec![Vec::new(); n];
    let mut d_o = vec![Vec::new(); n];
    let mut drv = vec![Vec::new(); n];
    let mut null_paths = 0;
    let mut ridge_steps = 0;
    y[n] = claim.values().to_vec();

    for block in (0..n / d).rev() {
        let (start, end) = (block * d, (block + 1) * d);
        // Full-information representation of ξ^j = Y_end on the block.
        let mut e = vec![Vec::new(); d + 1];
        e[d] = y[end].clone();
        for i in (start..end).rev() {
            let k = i - start;
            let (e_hat, z_full, ridge) = proj.represent(i, &e[k + 1])?;
            ridge_steps += usize::from(ridge);
            e[k] = e_hat;
            let db = ens.d_bracket(i);
            let num: Vec<f64> = z_full.iter().map(|z| z * db).collect();
            let (zi, nulls, r) = proj.dual_project_step(info, i, &num, &vec![db; pc], eps_den)?;
            null_paths += nulls;
            ridge_steps += usize::from(r);
            z[i] = zi;
        }
        for i in start..end {
            drv[i] = driver_increments(ens, driver, i, None, Some(&z[i]))?;
        }
        let mut tail = vec![0.0; pc];
        for i in (start..end).rev() {
            for (t, g) in tail.iter_mut().zip(&drv[i]) {
                *t += g;
            }
            y[i] = e[i - start].iter().zip(&tail).map(|(a, b)| a + b).collect();
        }
        for i in start..end {
            let dm = ens.dm(i);
            d_o[i] = (0..pc).map(|p| y[i + 1][p] - y[i][p] + drv[i][p] - z[i][p] * dm[p]).collect();
        }
    }

    Ok(BsdeSolution {
        grid: grid.clone(),
        y,
        z,
        d_o,
        drv,
        info: *info,
        scheme: Scheme::DelayedBlocks,
        driver_name: driver.name().to_string(),
        driver_depends_on_z: driver.depends_on_z(),
        iterations: 1,
        p_norm_history: Vec::new(),
        ratios: Vec::new(),
        classical_history: Vec::new(),
        converged: true,
        null_paths,
        ridge_steps,
    })
}

/// Solve `Y_t = ξ + ∫ f(s, Z_s) d⟨M⟩ - ∫ Z dM - (O_T - O_t)` under delayed
/// information block by block. Requires `T` to be a whole number of delays
/// and a driver that ignores `y` and declares a growth constant.
pub fn solve_bsde_delayed_blocks(
    ens: &PathEnsemble,
    info: &InformationModel,
    driver: &Driver,
    claim: &Claim,
) -> Result<BsdeSolution> {
    info.validate(ens.grid())?;
    let proj = Projector::for_equation(ens, info, driver.depends_on_z())?;
    solve_delayed_with(&proj, info, driver, claim, crate::information::DEFAULT_EPS_DEN)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bsde::{solve_bsde_partial, ClaimSpec, Payoff, Underlying};
    use crate::market::{simulate_market, Grid, MarketConfig};
    use crate::stats::rms_diff_rows;

    fn setup(p: usize) -> (PathEnsemble, Claim) {
        let c = MarketConfig { n_paths: p, seed: 5, ..Default::default() };
        let e = simulate_market(&c, &Grid::new(1.0, 16).unwrap()).unwrap();
        let claim = Claim::from_spec(&ClaimSpec::new(Payoff::Power { exponent: 2.0 }, Underlying::W), &e).unwrap();
        (e, claim)
    }

    #[test]
    fn rejects_misaligned_horizon_and_y_drivers() {
        let (e, c) = setup(100);
        let info = InformationModel::delayed(0.375, 3);
        assert!(solve_bsde_delayed_blocks(&e, &info, &Driver::zero(), &c).is_err());
        let info = InformationModel::delayed(0.25, 3);
        assert!(solve_bsde_delayed_blocks(&e, &info, &Driver::discount(0.1).unwrap(), &c).is_err());
        assert!(solve_bsde_delayed_blocks(&e, &InformationModel::full(3), &Driver::zero(), &c).is_err());
    }

    #[test]
    fn constant_driver_adds_deterministic_integral() {
        let (e, c) = setup(2000);
        let info = InformationModel::delayed(0.25, 3);
        let base = solve_bsde_delayed_blocks(&e, &info, &Driver::zero(), &c).unwrap();
        let shifted = solve_bsde_delayed_blocks(&e, &info, &Driver::constant(0.7).unwrap(), &c).unwrap();
        for i in 0..=16 {
            let remaining = e.bracket(16) - e.bracket(i);
            for (a, b) in shifted.y[i].iter().zip(&base.y[i]) {
                assert!((a - b - 0.7 * remaining).abs() < 1e-9);
            }
        }
        assert!(shifted.identity_error(&e) <= 1.0);
    }

    #[test]
    fn agrees_with_picard_for_zero_driver() {
        let (e, c) = setup(4000);
        let info = InformationModel::delayed(0.25, 3);
        let a = solve_bsde_delayed_blocks(&e, &info, &Driver::zero(), &c).unwrap();
        let b = solve_bsde_partial(&e, &info, &Driver::zero(), &c, &Default::default()).unwrap();
        assert!(rms_diff_rows(&a.y, &b.y) < 0.05);
        assert!(rms_diff_rows(&a.z, &b.z) < 0.1);
    }
}
