use pibsde::bsde::{solve_bsde_partial, Claim, ClaimSpec, Driver, Payoff, Underlying};
use pibsde::decomposition::{fs_decompose, gkw_decompose};
use pibsde::hedging::{mmm_density, optimal_strategy, Partition, Perturbation};
use pibsde::market::{AlphaSpec, MarkDistribution};
use pibsde::{
    cond_expect, dual_project, simulate_market, tradeoff_process, Grid, InformationModel, MarketConfig, Overrides,
    PathEnsemble, Scenario,
};
use proptest::prelude::*;

const STEPS: usize = 8;
// Normal equations lose about five digits when S and M are nearly collinear.
const REGRESSION_TOL: f64 = 1e-4;

fn ensemble(seed: u64, lambda: f64, alpha: f64, paths: usize) -> PathEnsemble {
    let config = MarketConfig {
        sigma_bar: 0.9,
        jump_intensity: lambda,
        marks: MarkDistribution::Uniform { low: -0.4, high: 0.3 },
        alpha: AlphaSpec::TanhOfM { bound: alpha, slope: 1.5 },
        seed,
        n_paths: paths,
        ..Default::default()
    };
    simulate_market(&config, &Grid::new(1.0, STEPS).unwrap()).unwrap()
}

fn info(delayed: bool) -> InformationModel {
    if delayed {
        InformationModel::delayed(0.25, 2)
    } else {
        InformationModel::full(2)
    }
}

fn claim(ens: &PathEnsemble, strike: f64) -> Claim {
    Claim::from_spec(&ClaimSpec::new(Payoff::Call { strike }, Underlying::S), ens).unwrap()
}

fn market() -> impl Strategy<Value = (u64, f64, f64)> {
    (0u64..1000, prop_oneof![Just(0.0), 0.5f64..3.0], 0.0f64..0.5)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn simulation_is_a_function_of_the_seed((seed, lambda, alpha) in market()) {
        let a = ensemble(seed, lambda, alpha, 200);
        let b = ensemble(seed, lambda, alpha, 200);
        prop_assert_eq!(a.fingerprint(), b.fingerprint());
        prop_assert_ne!(a.fingerprint(), ensemble(seed + 1, lambda, alpha, 200).fingerprint());
    }

    #[test]
    fn structure_condition_holds_exactly((seed, lambda, alpha) in market()) {
        let e = ensemble(seed, lambda, alpha, 200);
        for i in 0..STEPS {
            for p in 0..200 {
                prop_assert_eq!(e.ds(i)[p], e.dm(i)[p] + e.alpha(i)[p] * e.d_bracket(i));
            }
        }
    }

    #[test]
    fn tradeoff_is_nondecreasing((seed, lambda, alpha) in market()) {
        let k = tradeoff_process(&ensemble(seed, lambda, alpha, 200));
        for w in k.windows(2) {
            prop_assert!(w[1].iter().zip(&w[0]).all(|(b, a)| b >= a));
        }
    }

    #[test]
    fn constants_are_their_own_conditional_expectation(
        (seed, lambda, alpha) in market(), c in -5.0f64..5.0, step in 0usize..=STEPS, delayed: bool,
    ) {
        let e = ensemble(seed, lambda, alpha, 300);
        let est = cond_expect(&e, step, &info(delayed), &vec![c; 300]).unwrap();
        prop_assert!(est.values.iter().all(|v| (v - c).abs() <= 1e-9 * c.abs().max(1.0)));
    }

    #[test]
    fn predictable_numerators_project_to_themselves((seed, lambda, alpha) in market(), c in 0.1f64..3.0, delayed: bool) {
        let e = ensemble(seed, lambda, alpha, 300);
        let den: Vec<Vec<f64>> = (0..STEPS).map(|i| vec![e.d_bracket(i); 300]).collect();
        let num: Vec<Vec<f64>> = den.iter().map(|r| r.iter().map(|d| c * d).collect()).collect();
        let z = dual_project(&e, &info(delayed), &num, &den).unwrap().z;
        let err = z.iter().flatten().fold(0.0f64, |m, v| m.max((v - c).abs() / c));
        prop_assert!(err <= REGRESSION_TOL, "relative error {err}");
    }

    #[test]
    fn solutions_replicate_and_satisfy_the_recursion(
        (seed, lambda, alpha) in market(), strike in 0.6f64..1.4, a_y in -1.0f64..1.0, a_z in -0.5f64..0.5, delayed: bool,
    ) {
        let e = ensemble(seed, lambda, alpha, 400);
        let xi = claim(&e, strike);
        let driver = Driver::linear(a_y, a_z, 0.1).unwrap();
        let sol = solve_bsde_partial(&e, &info(delayed), &driver, &xi, &Default::default()).unwrap();
        prop_assert_eq!(sol.terminal_error(&xi), 0.0);
        prop_assert!(sol.identity_error(&e) <= 1.0);
    }

    #[test]
    fn decompositions_reconstruct_the_claim((seed, lambda, alpha) in market(), strike in 0.6f64..1.4, delayed: bool) {
        let e = ensemble(seed, lambda, alpha, 400);
        let xi = claim(&e, strike);
        let gkw = gkw_decompose(&e, &info(delayed), &xi).unwrap();
        let fs = fs_decompose(&e, &info(delayed), &xi, &Default::default()).unwrap();
        prop_assert!(gkw.reconstruction_error(&e, &xi) <= 1.0);
        prop_assert!(fs.reconstruction_error(&e, &xi) <= 1.0);
    }

    #[test]
    fn optimal_strategies_end_at_the_claim((seed, lambda, alpha) in market(), strike in 0.6f64..1.4, delayed: bool) {
        let e = ensemble(seed, lambda, alpha, 400);
        let xi = claim(&e, strike);
        let (opt, _) = optimal_strategy(&e, &info(delayed), &xi, &Default::default()).unwrap();
        prop_assert_eq!(opt.replication_error(&xi), 0.0);
    }

    #[test]
    fn density_is_positive_when_factors_are((seed, lambda) in (0u64..1000, 0.0f64..3.0), a in 0.0f64..0.5) {
        let config = MarketConfig {
            jump_intensity: lambda,
            marks: MarkDistribution::Uniform { low: -0.3, high: 0.3 },
            alpha: AlphaSpec::Constant { value: a },
            seed,
            n_paths: 200,
            ..Default::default()
        };
        let e = simulate_market(&config, &Grid::new(1.0, STEPS).unwrap()).unwrap();
        let w = mmm_density(&e, 0.0).unwrap();
        prop_assert!(w.all_valid());
        prop_assert!(w.density.iter().flatten().all(|l| *l > 0.0));
    }

    #[test]
    fn perturbations_vanish_on_the_last_step((seed, lambda, alpha) in market(), v in -1.0f64..1.0, delayed: bool) {
        let e = ensemble(seed, lambda, alpha, 50);
        let partition = Partition::uniform(STEPS, 4).unwrap();
        for pert in Perturbation::battery(v, 4) {
            let d = pert.process(&e, &info(delayed), &partition).unwrap();
            prop_assert!(d[STEPS - 1].iter().all(|x| *x == 0.0));
        }
    }

    #[test]
    fn scenario_hash_tracks_semantics(seed in 0u64..1000, paths in 100usize..5000) {
        let s = Scenario::baseline().with_overrides(Overrides { paths: Some(paths), steps: None, seed: Some(seed) }).unwrap();
        let mut moved = s.clone();
        moved.run.output_dir = "elsewhere".into();
        prop_assert_eq!(s.hash(), moved.hash());
        let reseeded = s.clone().with_overrides(Overrides { paths: None, steps: None, seed: Some(seed + 1) }).unwrap();
        prop_assert_ne!(s.hash(), reseeded.hash());
        prop_assert_eq!(Scenario::from_toml(&s.to_toml()).unwrap(), s);
    }
}
