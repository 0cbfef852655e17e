//! Locally risk-minimizing hedging under delayed information: strategies
//! built from Föllmer-Schweizer decompositions, their cost and risk
//! processes, the local risk quotient, and the minimal martingale measure.

mod mmm;
mod risk;
mod strategy;

pub use mmm::{mmm_density, mmm_price, MmmPrice, MmmWeights};
pub use risk::{
    risk_process, risk_quotient, risk_quotient_for, CellQuotient, Partition, Perturbation, RiskProcess, RiskQuotient,
};
pub use strategy::{mean_self_financing_strategy, optimal_strategy, strategy_from_decomposition, Strategy};

pub(crate) use mmm::price_with;
pub(crate) use risk::{quotient_with, risk_with};
pub(crate) use strategy::{mean_self_financing_with, optimal_with};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bsde::{Claim, ClaimSpec, Payoff, Underlying};
    use crate::information::InformationModel;
    use crate::market::{simulate_market, AlphaSpec, Grid, MarketConfig, PathEnsemble};
    use crate::stats::rms_diff_rows;

    fn ens(alpha: f64, p: usize, n: usize) -> PathEnsemble {
        let c = MarketConfig { n_paths: p, seed: 5, alpha: AlphaSpec::Constant { value: alpha }, ..Default::default() };
        simulate_market(&c, &Grid::new(1.0, n).unwrap()).unwrap()
    }

    fn w_squared(e: &PathEnsemble) -> Claim {
        Claim::from_spec(&ClaimSpec::new(Payoff::Power { exponent: 2.0 }, Underlying::W), e).unwrap()
    }

    #[test]
    fn constant_claim_needs_no_trading() {
        let e = ens(0.2, 400, 8);
        let c = Claim::from_values("c", vec![1.5; 400]).unwrap();
        let (s, _) = optimal_strategy(&e, &InformationModel::delayed(0.25, 3), &c, &Default::default()).unwrap();
        assert!(s.theta.iter().flatten().all(|v| v.abs() < 1e-9));
        assert!(s.cost_increments().iter().flatten().all(|v| v.abs() < 1e-9));
        assert!(s.replication_error(&c) < 1e-12);
    }

    #[test]
    fn delayed_holding_of_w_squared_is_lagged_delta() {
        let e = ens(0.0, 20_000, 16);
        let info = InformationModel::delayed(0.25, 3);
        let (s, _) = optimal_strategy(&e, &info, &w_squared(&e), &Default::default()).unwrap();
        let oracle: Vec<Vec<f64>> = (0..16)
            .map(|i| {
                let j = info.info_index(e.grid(), i).unwrap();
                e.w(j).iter().map(|w| 2.0 * w).collect()
            })
            .collect();
        assert!(rms_diff_rows(&s.theta, &oracle) < 0.1);
        assert!(s.replication_error(&w_squared(&e)) < 1e-9);
    }

    #[test]
    fn risk_is_zero_at_maturity_and_nonnegative() {
        let e = ens(0.0, 2000, 8);
        let info = InformationModel::delayed(0.25, 3);
        let (s, _) = optimal_strategy(&e, &info, &w_squared(&e), &Default::default()).unwrap();
        let r = risk_process(&s, &e, &info).unwrap();
        assert!(r.values[8].iter().all(|v| *v == 0.0));
        assert!(r.values.iter().flatten().all(|v| *v >= 0.0));
        assert!(r.values[0][0] > 0.0);
    }

    #[test]
    fn risk_quotient_separates_optimal_from_perturbed() {
        let n = 16;
        let e = ens(0.0, 20_000, n);
        let info = InformationModel::delayed(0.25, 3);
        let claim = w_squared(&e);
        let part = Partition::uniform(n, 4).unwrap();
        let (opt, _) = optimal_strategy(&e, &info, &claim, &Default::default()).unwrap();
        let msf = mean_self_financing_strategy(&e, &info, &claim, opt.theta.clone()).unwrap();
        for pert in Perturbation::battery(0.5, 4) {
            let q = risk_quotient(&msf, &e, &info, &pert, &part).unwrap();
            assert!(q.min_mean() >= -q.floor(), "{}: {}", pert.name(), q.min_mean());
        }
        let d0 = 0.5;
        let shifted: Vec<Vec<f64>> = opt.theta.iter().map(|r| r.iter().map(|t| t + d0).collect()).collect();
        let bad = mean_self_financing_strategy(&e, &info, &claim, shifted).unwrap();
        let back = Perturbation::Constant { value: -d0 };
        let q = risk_quotient(&bad, &e, &info, &back, &part).unwrap();
        assert!(q.min_mean() < -q.floor());
        assert!((q.min_mean() + d0 * d0).abs() < 0.1, "{}", q.min_mean());
    }

    #[test]
    fn partition_validation() {
        assert!(Partition::uniform(16, 3).is_err());
        assert!(Partition::new(vec![0, 4, 4, 16], 16).is_err());
        let p = Partition::new(vec![0, 3, 16], 16).unwrap();
        assert_eq!(p.cell_of(3), Some(1));
        assert_eq!(p.cell_of(16), None);
    }

    #[test]
    fn density_is_one_without_drift() {
        let e = ens(0.0, 100, 4);
        let w = mmm_density(&e, 0.0).unwrap();
        assert!(w.density.iter().flatten().all(|v| *v == 1.0));
    }

    #[test]
    fn mmm_price_matches_shifted_gaussian() {
        let alpha = 0.4;
        let e = ens(alpha, 20_000, 16);
        let claim = w_squared(&e);
        for step in [0, 8] {
            let t = e.grid().time(step);
            let price = mmm_price(&e, &claim, step, 3).unwrap();
            let oracle: Vec<f64> =
                e.w(step).iter().map(|w| (w - alpha * (1.0 - t)).powi(2) + 1.0 - t).collect();
            assert!(rms_diff_rows(&[price.values], &[oracle]) < 0.05, "step {step}");
        }
    }

    #[test]
    fn density_flags_nonpositive_factors() {
        let c = MarketConfig {
            n_paths: 2000,
            seed: 3,
            alpha: AlphaSpec::Constant { value: 3.0 },
            ..Default::default()
        };
        let e = simulate_market(&c, &Grid::new(1.0, 2).unwrap()).unwrap();
        assert!(matches!(mmm_density(&e, 0.0), Err(crate::Error::JumpConditionViolated { .. })));
        let w = mmm_density(&e, 1.0).unwrap();
        assert!(w.invalid > 0 && !w.all_valid());
    }
}
