//! Python bindings. Scenarios go in as TOML text and reports come back as
//! JSON text, so the Python side needs nothing beyond the standard library.

use std::path::PathBuf;

use pibsde::{Error, Overrides, Scenario, Subcommand};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Scenario(_)
        | Error::InvalidGrid(_)
        | Error::InvalidMarket(_)
        | Error::InvalidInformation(_)
        | Error::InvalidDriver(_)
        | Error::InvalidClaim(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn scenario_from(text: &str, overrides: Overrides) -> Result<Scenario, Error> {
    Scenario::from_toml(text)?.with_overrides(overrides)
}

/// Run `subcommand` on a scenario and return the report as JSON.
pub fn run_json(
    text: &str,
    subcommand: &str,
    output_dir: Option<PathBuf>,
    overrides: Overrides,
) -> Result<String, Error> {
    let scenario = scenario_from(text, overrides)?;
    let sub: Subcommand = subcommand.parse()?;
    let report = pibsde::run(&scenario, sub, output_dir.as_deref())?;
    serde_json::to_string(&report).map_err(|e| Error::Scenario(e.to_string()))
}

/// Run a subcommand (`simulate`, `solve`, `decompose`, `hedge`, `mmm` or
/// `validate`) on a TOML scenario and return the JSON report.
#[pyfunction]
#[pyo3(signature = (scenario_toml, subcommand = "validate", output_dir = None, paths = None, steps = None, seed = None))]
fn run(
    py: Python<'_>,
    scenario_toml: &str,
    subcommand: &str,
    output_dir: Option<PathBuf>,
    paths: Option<usize>,
    steps: Option<usize>,
    seed: Option<u64>,
) -> PyResult<String> {
    let overrides = Overrides { paths, steps, seed };
    py.detach(|| run_json(scenario_toml, subcommand, output_dir, overrides)).map_err(to_py)
}

/// Canonical TOML of the built-in baseline scenario.
#[pyfunction]
fn baseline_scenario() -> String {
    Scenario::baseline().to_toml()
}

/// Validate a scenario and return its full SHA-256 hash.
#[pyfunction]
fn scenario_hash(scenario_toml: &str) -> PyResult<String> {
    scenario_from(scenario_toml, Overrides::default()).map(|s| s.hash()).map_err(to_py)
}

#[pymodule]
fn pibsde_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(baseline_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(scenario_hash, m)?)?;
    m.add("SUBCOMMANDS", Subcommand::ALL.iter().map(|s| s.as_str()).collect::<Vec<_>>())?;
    Ok(())
}
