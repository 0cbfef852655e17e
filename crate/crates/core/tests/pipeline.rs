use pibsde::bsde::DriverSpec;
use pibsde::{run, Overrides, Scenario, Subcommand};

fn small(kind: &str) -> Scenario {
    let text = format!(
        r#"
[market]
sigma_bar = 1.0
lambda_per_time = 1.0
marks = {{ kind = "uniform", low = -0.2, high = 0.2 }}
alpha = {{ kind = "constant", value = 0.2 }}
n_steps = 16
n_paths = 4000

[info]
kind = "{kind}"
tau_time = 0.25
basis_degree = 2

[claim]
payoff = "call"
strike = 1.0
underlying = "s"

[bsde]
driver = {{ kind = "linear", a_y = -0.3, a_z = 0.2 }}

[run]
seed = 5
"#
    );
    Scenario::from_toml(&text).unwrap()
}

#[test]
fn reports_are_reproducible_and_written() {
    let dir = tempfile::tempdir().unwrap();
    let s = small("delayed");
    let a = run(&s, Subcommand::Hedge, Some(dir.path())).unwrap();
    let b = run(&s, Subcommand::Hedge, None).unwrap();
    assert_eq!(a.checks, b.checks);
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.ensemble_fingerprint, b.ensemble_fingerprint);
    let written = std::fs::read_to_string(dir.path().join(a.report_file_name())).unwrap();
    assert!(written.contains(&a.scenario_hash));
    for f in &a.artifacts {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn exact_identities_hold_in_every_mode() {
    for kind in ["full", "delayed"] {
        let r = run(&small(kind), Subcommand::Validate, None).unwrap();
        for name in ["bsde.terminal_condition", "bsde.recursion_identity", "gkw.reconstruction", "fs.reconstruction", "hedge.replication", "market.structure_condition"] {
            let c = r.check(name).unwrap_or_else(|| panic!("{name} missing"));
            assert!(c.passed, "{kind}: {c:?}");
        }
    }
}

#[test]
fn constant_driver_converges_in_one_iteration() {
    let mut s = small("delayed");
    s.bsde.driver = DriverSpec::Constant { value: 0.4 };
    let r = run(&s, Subcommand::Solve, None).unwrap();
    assert_eq!(r.picard[0].iterations, 1);
    assert!(r.check("bsde.constant_driver_one_iteration").unwrap().passed);
}

#[test]
fn overrides_change_the_scenario_hash() {
    let s = small("full");
    let t = s.clone().with_overrides(Overrides { paths: Some(1000), steps: None, seed: None }).unwrap();
    assert_ne!(s.hash(), t.hash());
    assert!(t.validate().is_ok());
}
