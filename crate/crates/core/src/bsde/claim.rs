use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::PathEnsemble;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Underlying {
    #[default]
    S,
    M,
    W,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "payoff", rename_all = "snake_case")]
pub enum Payoff {
    Call { strike: f64 },
    Put { strike: f64 },
    Power { exponent: f64 },
    Identity,
    Constant { value: f64 },
}

impl Payoff {
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            Payoff::Call { strike } => (x - strike).max(0.0),
            Payoff::Put { strike } => (strike - x).max(0.0),
            Payoff::Power { exponent } => {
                if exponent.fract() == 0.0 && exponent.abs() <= i32::MAX as f64 {
                    x.powi(exponent as i32)
                } else {
                    x.powf(exponent)
                }
            }
            Payoff::Identity => x,
            Payoff::Constant { value } => value,
        }
    }
}

/// Terminal payoff declared by name: `payoff` applied to the terminal value of
/// `underlying`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClaimSpec {
    #[serde(flatten)]
    pub payoff: Payoff,
    #[serde(default)]
    pub underlying: Underlying,
}

impl ClaimSpec {
    pub fn new(payoff: Payoff, underlying: Underlying) -> Self {
        Self { payoff, underlying }
    }

    pub fn name(&self) -> String {
        let u = match self.underlying {
            Underlying::S => "S_T",
            Underlying::M => "M_T",
            Underlying::W => "W_T",
        };
        match self.payoff {
            Payoff::Call { strike } => format!("call({u}, {strike})"),
            Payoff::Put { strike } => format!("put({u}, {strike})"),
            Payoff::Power { exponent } => format!("{u}^{exponent}"),
            Payoff::Identity => u.to_string(),
            Payoff::Constant { value } => format!("constant({value})"),
        }
    }
}

/// Terminal condition `ξ`, one value per path.
#[derive(Debug, Clone, PartialEq)]
pub struct Claim {
    name: String,
    values: Vec<f64>,
}

impl Claim {
    pub fn from_spec(spec: &ClaimSpec, ens: &PathEnsemble) -> Result<Self> {
        let n = ens.n_steps();
        let x = match spec.underlying {
            Underlying::S => ens.s(n),
            Underlying::M => ens.m(n),
            Underlying::W => ens.w(n),
        };
        Self::from_values(spec.name(), x.iter().map(|&v| spec.payoff.apply(v)).collect())
    }

    pub fn from_values(name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if values.is_empty() {
            return Err(Error::InvalidClaim(format!("{name}: no paths")));
        }
        if let Some(p) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidClaim(format!("{name}: non-finite payoff on path {p}")));
        }
        Ok(Self { name, values })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n_paths(&self) -> usize {
        self.values.len()
    }

    /// Sample second moment; the empirical square-integrability check.
    pub fn second_moment(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>() / self.values.len() as f64
    }
}
