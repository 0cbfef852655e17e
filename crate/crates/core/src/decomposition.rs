//! Galtchouk-Kunita-Watanabe and Föllmer-Schweizer decompositions
//! `ξ = U₀ + Σ H_i ΔX_i + Σ ΔA_i` with `X = M` or `X = S`, obtained from the
//! backward solver with `f = 0` and `f = -α z` respectively.

use serde::{Deserialize, Serialize};

use crate::bsde::{solve_with, BsdeSolution, Claim, Driver, SolverSettings};
use crate::error::{Error, Result};
use crate::information::{InformationModel, Projector};
use crate::market::{tradeoff_process, PathEnsemble};
use crate::stats::ROUNDING_TOL;
use crate::Process;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecompositionKind {
    Gkw,
    Fs,
}

#[derive(Debug, Clone)]
pub struct Decomposition {
    pub kind: DecompositionKind,
    pub info: InformationModel,
    pub u0: f64,
    /// `H^H` (GKW) or `β^H` (FS), `N` rows.
    pub integrand: Process,
    /// `ΔA_i`, `N` rows.
    pub residual: Process,
    /// The backward solution the decomposition was read off.
    pub solution: BsdeSolution,
}

impl Decomposition {
    fn from_solution(kind: DecompositionKind, solution: BsdeSolution) -> Self {
        Self {
            kind,
            info: solution.info,
            u0: solution.y0(),
            integrand: solution.z.clone(),
            residual: solution.d_o.clone(),
            solution,
        }
    }

    /// Increments the integrand is paired with: `ΔM` or `ΔS`.
    pub fn integrator<'e>(&self, ens: &'e PathEnsemble, i: usize) -> &'e [f64] {
        match self.kind {
            DecompositionKind::Gkw => ens.dm(i),
            DecompositionKind::Fs => ens.ds(i),
        }
    }

    /// Largest violation of `ξ = U₀ + Σ H ΔX + Σ ΔA` over paths, in units of
    /// the rounding tolerance accumulated over the `2N + 2` summands.
    pub fn reconstruction_error(&self, ens: &PathEnsemble, claim: &Claim) -> f64 {
        let n = ens.n_steps();
        let terms = (2 * n + 2) as f64;
        let mut worst = 0.0f64;
        for (p, &xi) in claim.values().iter().enumerate() {
            let mut sum = self.u0;
            let mut scale = self.u0.abs() + xi.abs();
            for i in 0..n {
                let a = self.integrand[i][p] * self.integrator(ens, i)[p];
                let b = self.residual[i][p];
                sum += a + b;
                scale += a.abs() + b.abs();
            }
            worst = worst.max((xi - sum).abs() / (ROUNDING_TOL * terms * scale.max(f64::MIN_POSITIVE)));
        }
        worst
    }
}

/// Largest `K_T` over paths and the bound `K̄² C̄ T` it must respect.
pub fn tradeoff_bound(ens: &PathEnsemble) -> (f64, f64) {
    let k = tradeoff_process(ens);
    let max = k[ens.n_steps()].iter().copied().fold(0.0, f64::max);
    let c = ens.config();
    (max, c.k_bar() * c.k_bar() * c.c_bar() * ens.grid().horizon())
}

pub(crate) fn gkw_with(proj: &Projector, info: &InformationModel, claim: &Claim) -> Result<Decomposition> {
    let sol = solve_with(proj, info, &Driver::zero(), claim, &SolverSettings::default())?;
    Ok(Decomposition::from_solution(DecompositionKind::Gkw, sol))
}

pub(crate) fn fs_with(
    proj: &Projector,
    info: &InformationModel,
    claim: &Claim,
    settings: &SolverSettings,
) -> Result<Decomposition> {
    let ens = proj.ensemble();
    let (k_t, bound) = tradeoff_bound(ens);
    if !(k_t <= bound * (1.0 + 1e-12)) {
        return Err(Error::InvalidMarket(format!("mean-variance tradeoff {k_t} exceeds K_bar² C_bar T = {bound}")));
    }
    let driver = Driver::market_price_of_risk(ens.config().k_bar())?;
    let sol = solve_with(proj, info, &driver, claim, settings)?;
    Ok(Decomposition::from_solution(DecompositionKind::Fs, sol))
}

/// `ξ = U₀ + Σ H_i ΔM_i + Σ ΔA_i` with `H` measurable for `info` and `A`
/// weakly orthogonal to `M`.
pub fn gkw_decompose(ens: &PathEnsemble, info: &InformationModel, claim: &Claim) -> Result<Decomposition> {
    info.validate(ens.grid())?;
    gkw_with(&Projector::new(ens, info.basis_degree)?, info, claim)
}

/// `ξ = Ū₀ + Σ β_i ΔS_i + Σ ΔA_i`, through the backward equation with
/// driver `-α z`.
pub fn fs_decompose(
    ens: &PathEnsemble,
    info: &InformationModel,
    claim: &Claim,
    settings: &SolverSettings,
) -> Result<Decomposition> {
    info.validate(ens.grid())?;
    fs_with(&Projector::for_equation(ens, info, !ens.config().alpha.is_zero())?, info, claim, settings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bsde::{ClaimSpec, Payoff, Underlying};
    use crate::market::{simulate_market, AlphaSpec, Grid, MarketConfig};
    use crate::stats::{rms_diff, rms_diff_rows};

    fn ens(alpha: f64, p: usize) -> PathEnsemble {
        let c = MarketConfig { n_paths: p, seed: 21, alpha: AlphaSpec::Constant { value: alpha }, ..Default::default() };
        simulate_market(&c, &Grid::new(1.0, 16).unwrap()).unwrap()
    }

    fn claim(e: &PathEnsemble, payoff: Payoff, u: Underlying) -> Claim {
        Claim::from_spec(&ClaimSpec::new(payoff, u), e).unwrap()
    }

    #[test]
    fn constant_claim() {
        let e = ens(0.0, 300);
        let c = Claim::from_values("c", vec![2.0; 300]).unwrap();
        let d = gkw_decompose(&e, &InformationModel::delayed(0.25, 3), &c).unwrap();
        assert!((d.u0 - 2.0).abs() < 1e-12);
        assert!(d.integrand.iter().flatten().all(|v| v.abs() < 1e-10));
        assert!(d.residual.iter().flatten().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn terminal_price_is_hedged_by_one_unit() {
        for alpha in [0.0, 0.3] {
            let e = ens(alpha, 20_000);
            let c = claim(&e, Payoff::Identity, Underlying::S);
            let d = fs_decompose(&e, &InformationModel::full(3), &c, &Default::default()).unwrap();
            assert!((d.u0 - e.config().s0).abs() < 0.01, "alpha {alpha}: u0 {}", d.u0);
            let ones = vec![vec![1.0; 20_000]; 16];
            assert!(rms_diff_rows(&d.integrand, &ones) < 0.05);
            let a_total = d.solution.o_total();
            assert!(rms_diff(&a_total, &vec![0.0; 20_000]) < 0.05);
            assert!(d.reconstruction_error(&e, &c) <= 1.0);
        }
    }

    #[test]
    fn fs_collapses_to_gkw_without_drift() {
        let e = ens(0.0, 1000);
        let c = claim(&e, Payoff::Call { strike: 1.0 }, Underlying::S);
        let info = InformationModel::delayed(0.25, 3);
        let g = gkw_decompose(&e, &info, &c).unwrap();
        let f = fs_decompose(&e, &info, &c, &Default::default()).unwrap();
        assert_eq!(g.integrand, f.integrand);
        assert_eq!(g.u0, f.u0);
        assert!(f.reconstruction_error(&e, &c) <= 1.0);
        assert!(g.reconstruction_error(&e, &c) <= 1.0);
    }

    #[test]
    fn tradeoff_respects_declared_bounds() {
        let cfg = MarketConfig {
            n_paths: 200,
            alpha: AlphaSpec::TanhOfM { bound: 0.5, slope: 2.0 },
            alpha_bound: Some(0.6),
            ..Default::default()
        };
        let e = simulate_market(&cfg, &Grid::new(1.0, 8).unwrap()).unwrap();
        let (k, bound) = tradeoff_bound(&e);
        assert!(k > 0.0 && k <= bound);
    }
}
