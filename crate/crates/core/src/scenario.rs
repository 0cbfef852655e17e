//! Scenario files: TOML with `[market]`, `[info]`, `[claim]`, `[bsde]`,
//! `[hedge]` and `[run]` sections. Field names carry their units.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bsde::{ClaimSpec, DriverSpec, Payoff, SolverSettings, Underlying};
use crate::error::{Error, Result};
use crate::information::{InfoKind, InformationModel, DEFAULT_BASIS_DEGREE, DEFAULT_EPS_DEN};
use crate::market::{default_state, AlphaSpec, Grid, MarkDistribution, MarketConfig, StateCoord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSection {
    #[serde(default = "one")]
    pub sigma_bar: f64,
    #[serde(default)]
    pub lambda_per_time: f64,
    #[serde(default)]
    pub marks: MarkDistribution,
    #[serde(default)]
    pub alpha: AlphaSpec,
    #[serde(default)]
    pub alpha_bound: Option<f64>,
    #[serde(default)]
    pub c_bar: Option<f64>,
    #[serde(default = "one")]
    pub s0: f64,
    #[serde(default)]
    pub m0: f64,
    #[serde(default = "one")]
    pub horizon_time: f64,
    #[serde(default = "default_steps")]
    pub n_steps: usize,
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default = "default_state")]
    pub state: Vec<StateCoord>,
}

impl Default for MarketSection {
    fn default() -> Self {
        toml::from_str("").expect("all market fields have defaults")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfoSection {
    #[serde(default = "full_kind")]
    pub kind: InfoKind,
    #[serde(default)]
    pub tau_time: f64,
    #[serde(default = "default_degree")]
    pub basis_degree: usize,
}

impl Default for InfoSection {
    fn default() -> Self {
        Self { kind: InfoKind::Full, tau_time: 0.0, basis_degree: DEFAULT_BASIS_DEGREE }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeChoice {
    #[default]
    Picard,
    DelayedBlocks,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BsdeSection {
    #[serde(default)]
    pub driver: DriverSpec,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub scheme: SchemeChoice,
}

impl Default for BsdeSection {
    fn default() -> Self {
        Self { driver: DriverSpec::Zero, tol: default_tol(), max_iter: default_max_iter(), scheme: SchemeChoice::Picard }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HedgeSection {
    /// Cells of the uniform partition used by the risk quotient.
    #[serde(default = "default_cells")]
    pub partition_cells: usize,
    /// Size `δ₀` of the test perturbations.
    #[serde(default = "default_perturbation")]
    pub perturbation: f64,
}

impl Default for HedgeSection {
    fn default() -> Self {
        Self { partition_cells: default_cells(), perturbation: default_perturbation() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Write the ensemble as `(path, step, M, bracket, S)` rows.
    #[serde(default)]
    pub export_ensemble: bool,
    /// Write per-path processes (`Y`, `Z`, `ΔO`, `θ`, ...) in long format.
    #[serde(default)]
    pub export_processes: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { seed: 0, output_dir: default_output(), export_ensemble: false, export_processes: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub market: MarketSection,
    #[serde(default)]
    pub info: InfoSection,
    pub claim: ClaimSpec,
    #[serde(default)]
    pub bsde: BsdeSection,
    #[serde(default)]
    pub hedge: HedgeSection,
    #[serde(default)]
    pub run: RunSection,
}

/// Command-line overrides.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Overrides {
    pub paths: Option<usize>,
    pub steps: Option<usize>,
    pub seed: Option<u64>,
}

fn one() -> f64 {
    1.0
}
fn default_steps() -> usize {
    64
}
fn default_paths() -> usize {
    50_000
}
fn full_kind() -> InfoKind {
    InfoKind::Full
}
fn default_degree() -> usize {
    DEFAULT_BASIS_DEGREE
}
fn default_tol() -> f64 {
    1e-3
}
fn default_max_iter() -> usize {
    20
}
fn default_cells() -> usize {
    4
}
fn default_perturbation() -> f64 {
    0.5
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl Scenario {
    /// Parse and validate. Errors carry the TOML line and field.
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Scenario(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Scenario(m) => Error::Scenario(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// The α ≡ 0, f ≡ 0 martingale baseline with claim `W_T²`.
    pub fn baseline() -> Self {
        Scenario {
            market: MarketSection::default(),
            info: InfoSection::default(),
            claim: ClaimSpec::new(Payoff::Power { exponent: 2.0 }, Underlying::W),
            bsde: BsdeSection::default(),
            hedge: HedgeSection::default(),
            run: RunSection::default(),
        }
    }

    pub fn with_overrides(mut self, o: Overrides) -> Result<Self> {
        if let Some(p) = o.paths {
            self.market.n_paths = p;
        }
        if let Some(n) = o.steps {
            self.market.n_steps = n;
        }
        if let Some(s) = o.seed {
            self.run.seed = s;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.market.horizon_time, self.market.n_steps)
    }

    pub fn market_config(&self) -> MarketConfig {
        let m = &self.market;
        MarketConfig {
            sigma_bar: m.sigma_bar,
            jump_intensity: m.lambda_per_time,
            marks: m.marks,
            alpha: m.alpha,
            alpha_bound: m.alpha_bound,
            c_bar: m.c_bar,
            s0: m.s0,
            m0: m.m0,
            seed: self.run.seed,
            n_paths: m.n_paths,
            state: m.state.clone(),
        }
    }

    pub fn info_model(&self) -> InformationModel {
        match self.info.kind {
            InfoKind::Full => InformationModel::full(self.info.basis_degree),
            InfoKind::Delayed => InformationModel::delayed(self.info.tau_time, self.info.basis_degree),
        }
    }

    pub fn solver_settings(&self) -> SolverSettings {
        SolverSettings { tol: self.bsde.tol, max_iter: self.bsde.max_iter, eps_den: DEFAULT_EPS_DEN }
    }

    /// Cross-field constraints, checked before any computation.
    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        let market = self.market_config();
        market.validate()?;
        let info = self.info_model();
        info.validate(&grid)?;
        self.bsde.driver.build(&market)?;
        if !(self.bsde.tol > 0.0) || self.bsde.max_iter == 0 {
            return Err(Error::Scenario("bsde.tol must be > 0 and bsde.max_iter >= 1".into()));
        }
        if self.bsde.scheme == SchemeChoice::DelayedBlocks {
            let d = info.lag_steps(&grid)?;
            if info.is_full() || grid.n_steps() % d != 0 {
                return Err(Error::Scenario(format!(
                    "delayed_blocks needs delayed information with horizon a multiple of tau_time ({} steps, lag {d})",
                    grid.n_steps()
                )));
            }
        }
        let cells = self.hedge.partition_cells;
        if cells == 0 || grid.n_steps() % cells != 0 {
            return Err(Error::Scenario(format!("hedge.partition_cells = {cells} must divide n_steps")));
        }
        if !self.hedge.perturbation.is_finite() {
            return Err(Error::Scenario("hedge.perturbation must be finite".into()));
        }
        Ok(())
    }

    /// SHA-256 over every field that affects results. The output directory
    /// and export flags only decide where and what is written.
    pub fn hash(&self) -> String {
        let mut semantic = self.clone();
        semantic.run.output_dir = PathBuf::new();
        semantic.run.export_ensemble = false;
        semantic.run.export_processes = false;
        let bytes = serde_json::to_vec(&semantic).expect("scenario serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn short_hash(&self) -> String {
        self.hash()[..12].to_string()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DELAYED: &str = r#"
[market]
lambda_per_time = 0.0
n_steps = 16
n_paths = 1000

[info]
kind = "delayed"
tau_time = 0.25

[claim]
payoff = "power"
exponent = 2.0
underlying = "w"

[bsde]
driver = { kind = "discount", rate = 0.5 }

[run]
seed = 3
"#;

    #[test]
    fn parses_sections_and_defaults() {
        let s = Scenario::from_toml(DELAYED).unwrap();
        assert_eq!(s.info_model(), InformationModel::delayed(0.25, 3));
        assert_eq!(s.market.sigma_bar, 1.0);
        assert_eq!(s.bsde.driver, DriverSpec::Discount { rate: 0.5 });
        assert_eq!(s.market_config().seed, 3);
        assert_eq!(Scenario::from_toml(&s.to_toml()).unwrap(), s);
    }

    #[test]
    fn errors_name_the_field() {
        let e = Scenario::from_toml(&DELAYED.replace("tau_time", "tau")).unwrap_err().to_string();
        assert!(e.contains("tau") && e.contains("line"), "{e}");
        let e = Scenario::from_toml(&DELAYED.replace("0.25", "0.3")).unwrap_err();
        assert!(matches!(e, Error::InvalidInformation(_)), "{e}");
        let blocks = DELAYED.replace("[run]", "[hedge]\npartition_cells = 3\n[run]");
        assert!(Scenario::from_toml(&blocks).is_err());
    }

    #[test]
    fn hash_tracks_semantic_fields_only() {
        let s = Scenario::from_toml(DELAYED).unwrap();
        let mut t = s.clone();
        t.run.output_dir = "elsewhere".into();
        t.run.export_processes = true;
        assert_eq!(s.hash(), t.hash());
        t.market.n_paths += 1;
        assert_ne!(s.hash(), t.hash());
        let u = s.clone().with_overrides(Overrides { seed: Some(4), ..Default::default() }).unwrap();
        assert_ne!(s.hash(), u.hash());
        let mut v = s.clone();
        v.bsde.driver = DriverSpec::Discount { rate: 0.25 };
        assert_ne!(s.hash(), v.hash());
    }

    #[test]
    fn block_scheme_needs_aligned_delay() {
        let ok = DELAYED.replace("[run]", "scheme = \"delayed_blocks\"\n[run]");
        let ok = ok.replace("{ kind = \"discount\", rate = 0.5 }", "{ kind = \"zero\" }");
        Scenario::from_toml(&ok).unwrap();
        let bad = ok.replace("kind = \"delayed\"", "kind = \"full\"");
        assert!(Scenario::from_toml(&bad).is_err());
    }
}
