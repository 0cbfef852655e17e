//! Backward regression sweep with frozen driver, and the Picard loop.
//!
//! One sweep at step `i`, with `a = Y_{i+1} + f(t_i, U_i, V_i) Δ⟨M⟩_i`:
//!
//! 1. `a ≈ Ê_i + Z̃_i ΔM_i`, fitted jointly on the basis in `X_{t_i}`
//! 2. `Z_i = E[Z̃_i Δ⟨M⟩_i | H_i] / E[Δ⟨M⟩_i | H_i]`, or `Z̃_i` under full information
//! 3. `Y_i = Ê_i`
//! 4. `ΔO_i = a - Z_i ΔM_i - Y_i`
//!
//! Fitting `Z̃` jointly with `Ê` keeps the residual orthogonal to `φ(X) ΔM`
//! on the sample itself, so regressing on the same paths does not bias the
//! orthogonality of `O`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::information::{InformationModel, Projector, DEFAULT_EPS_DEN};
use crate::market::PathEnsemble;

use super::norm::p_norm;
use super::{BsdeSolution, Claim, Driver, DriverArgs, Scheme, Triplet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// Relative tolerance on successive iterates, in both the weighted and the
    /// classical norm.
    pub tol: f64,
    pub max_iter: usize,
    pub eps_den: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { tol: 1e-3, max_iter: 20, eps_den: DEFAULT_EPS_DEN }
    }
}

pub(crate) fn driver_increments(
    ens: &PathEnsemble,
    driver: &Driver,
    i: usize,
    y: Option<&[f64]>,
    z: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let t = ens.grid().time(i);
    let db = ens.d_bracket(i);
    let alpha = ens.alpha(i);
    let g: Vec<f64> = (0..ens.n_paths())
        .into_par_iter()
        .map(|p| {
            let args = DriverArgs {
                t,
                step: i,
                path: p,
                y: y.map_or(0.0, |v| v[p]),
                z: z.map_or(0.0, |v| v[p]),
                alpha: alpha[p],
            };
            driver.eval(&args) * db
        })
        .collect();
    if let Some(p) = g.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { step: i, what: format!("driver {} on path {p}", driver.name()) });
    }
    Ok(g)
}

fn check_inputs(ens: &PathEnsemble, info: &InformationModel, claim: &Claim) -> Result<()> {
    info.validate(ens.grid())?;
    if claim.n_paths() != ens.n_paths() {
        return Err(Error::ShapeMismatch(format!(
            "claim has {} paths, ensemble {}",
            claim.n_paths(),
            ens.n_paths()
        )));
    }
    Ok(())
}

pub(crate) fn sweep(
    proj: &Projector,
    info: &InformationModel,
    driver: &Driver,
    claim: &Claim,
    prev: Option<(&[Vec<f64>], &[Vec<f64>])>,
    eps_den: f64,
) -> Result<BsdeSolution> {
    let ens = proj.ensemble();
    let n = ens.n_steps();
    let pc = ens.n_paths();
    let mut y = vec![Vec::new(); n + 1];
    let mut z = vec![Vec::new(); n];
    let mut d_o = vec![Vec::new(); n];
    let mut drv = vec![Vec::new(); n];
    let mut null_paths = 0;
    let mut ridge_steps = 0;
    y[n] = claim.values().to_vec();
    let bracket = |i: usize| vec![ens.d_bracket(i); pc];
    for i in (0..n).rev() {
        let g = driver_increments(ens, driver, i, prev.map(|(u, _)| u[i].as_slice()), prev.map(|(_, v)| v[i].as_slice()))?;
        let a: Vec<f64> = y[i + 1].iter().zip(&g).map(|(y, g)| y + g).collect();
        let (yi, z_full, ridge) = proj.represent(i, &a)?;
        let zi = if info.is_full() {
            z_full
        } else {
            let db = ens.d_bracket(i);
            let num: Vec<f64> = z_full.iter().map(|z| z * db).collect();
            let (zi, nulls, r) = proj.dual_project_step(info, i, &num, &bracket(i), eps_den)?;
            null_paths += nulls;
            ridge_steps += usize::from(r);
            zi
        };
        ridge_steps += usize::from(ridge);
        let dm = ens.dm(i);
        d_o[i] = (0..pc).map(|p| a[p] - yi[p] - zi[p] * dm[p]).collect();
        y[i] = yi;
        z[i] = zi;
        drv[i] = g;
    }
    Ok(BsdeSolution {
        grid: ens.grid().clone(),
        y,
        z,
        d_o,
        drv,
        info: *info,
        scheme: Scheme::Picard,
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

/// One application of the Picard map: solve the equation with the driver
/// frozen at `prev = (U, V)`.
pub fn picard_step(
    ens: &PathEnsemble,
    info: &InformationModel,
    driver: &Driver,
    claim: &Claim,
    prev: (&[Vec<f64>], &[Vec<f64>]),
) -> Result<BsdeSolution> {
    check_inputs(ens, info, claim)?;
    let n = ens.n_steps();
    if prev.0.len() < n || prev.1.len() < n {
        return Err(Error::ShapeMismatch(format!("previous iterate must cover {n} steps")));
    }
    let proj = Projector::for_equation(ens, info, driver.depends_on_z())?;
    sweep(&proj, info, driver, claim, Some(prev), DEFAULT_EPS_DEN)
}

/// Re-evaluate the driver at the solution itself and redefine `ΔO` so the
/// recursion holds with `f(t_i, Y_i, Z_i)`.
pub(crate) fn close_identity(ens: &PathEnsemble, driver: &Driver, sol: &mut BsdeSolution) -> Result<()> {
    for i in 0..sol.n_steps() {
        let g = driver_increments(ens, driver, i, Some(&sol.y[i]), Some(&sol.z[i]))?;
        let dm = ens.dm(i);
        sol.d_o[i] = (0..ens.n_paths())
            .map(|p| sol.y[i + 1][p] - sol.y[i][p] + g[p] - sol.z[i][p] * dm[p])
            .collect();
        sol.drv[i] = g;
    }
    Ok(())
}

pub(crate) fn solve_with(
    proj: &Projector,
    info: &InformationModel,
    driver: &Driver,
    claim: &Claim,
    settings: &SolverSettings,
) -> Result<BsdeSolution> {
    let ens = proj.ensemble();
    check_inputs(ens, info, claim)?;
    if settings.max_iter == 0 {
        return Err(Error::InvalidDriver("max_iter must be at least 1".into()));
    }
    let d_bracket: Vec<f64> = (0..ens.n_steps()).map(|i| ens.d_bracket(i)).collect();
    let k = driver.lipschitz_k();
    let c_bar = ens.config().c_bar();
    let measure = |t: &Triplet| p_norm(t, ens.grid(), &d_bracket, k, c_bar);

    let mut current = sweep(proj, info, driver, claim, None, settings.eps_den)?;
    let mut p_hist = vec![measure(&current.triplet())?.scaled()];
    let mut c_hist = vec![1.0];
    let mut ratios = Vec::new();
    let mut converged = !(driver.depends_on_y() || driver.depends_on_z());
    let mut iterations = 1;
    while !converged && iterations < settings.max_iter {
        let next = sweep(
            proj,
            info,
            driver,
            claim,
            Some((current.y.as_slice(), current.z.as_slice())),
            settings.eps_den,
        )?;
        iterations += 1;
        let delta = measure(&Triplet::difference(&next, &current))?;
        let size = measure(&next.triplet())?;
        let dist = delta.scaled();
        let prev_dist = *p_hist.last().expect("history is nonempty");
        ratios.push(if prev_dist > 0.0 { (dist / prev_dist).sqrt() } else { 0.0 });
        p_hist.push(dist);
        let rel_p = if size.scaled() > 0.0 { (dist / size.scaled()).sqrt() } else { 0.0 };
        let rel_c = if size.classical > 0.0 { (delta.classical / size.classical).sqrt() } else { 0.0 };
        c_hist.push(rel_c);
        converged = rel_p <= settings.tol && rel_c <= settings.tol;
        current = next;
    }
    close_identity(ens, driver, &mut current)?;
    current.iterations = iterations;
    current.p_norm_history = p_hist;
    current.classical_history = c_hist;
    current.ratios = ratios;
    current.converged = converged;
    Ok(current)
}

/// Picard iteration from `(U, V) = (0, 0)` until successive iterates agree to
/// `settings.tol` or `settings.max_iter` sweeps have run. A run that stops on
/// the iteration cap returns its last iterate with `converged = false`.
pub fn solve_bsde_partial(
    ens: &PathEnsemble,
    info: &InformationModel,
    driver: &Driver,
    claim: &Claim,
    settings: &SolverSettings,
) -> Result<BsdeSolution> {
    info.validate(ens.grid())?;
    let proj = Projector::for_equation(ens, info, driver.depends_on_z())?;
    solve_with(&proj, info, driver, claim, settings)
}
