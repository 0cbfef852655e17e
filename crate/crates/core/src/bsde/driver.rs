use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{MarketConfig, PathEnsemble};

/// Arguments of one driver evaluation. `alpha` is the drift loading of the
/// price on the same step and path, so `f = -α z` fits the same signature.
#[derive(Debug, Clone, Copy)]
pub struct DriverArgs {
    pub t: f64,
    pub step: usize,
    pub path: usize,
    pub y: f64,
    pub z: f64,
    pub alpha: f64,
}

type DriverFn = dyn Fn(&DriverArgs) -> f64 + Send + Sync;

/// The generator `f(t, y, z)` with its declared regularity constants.
#[derive(Clone)]
pub struct Driver {
    name: String,
    f: Arc<DriverFn>,
    lipschitz_k: f64,
    depends_on_y: bool,
    depends_on_z: bool,
    growth_c: Option<f64>,
}

impl fmt::Debug for Driver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Driver")
            .field("name", &self.name)
            .field("lipschitz_k", &self.lipschitz_k)
            .field("depends_on_y", &self.depends_on_y)
            .field("depends_on_z", &self.depends_on_z)
            .field("growth_c", &self.growth_c)
            .finish()
    }
}

impl Driver {
    /// A custom driver. `growth_c` is the constant `C` in
    /// `|f(t, z)|² <= C (1 + |z|²)`, when it exists.
    pub fn new(
        name: impl Into<String>,
        lipschitz_k: f64,
        depends_on_y: bool,
        depends_on_z: bool,
        growth_c: Option<f64>,
        f: impl Fn(&DriverArgs) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if !(lipschitz_k.is_finite() && lipschitz_k >= 0.0) {
            return Err(Error::InvalidDriver(format!("Lipschitz constant must be >= 0, got {lipschitz_k}")));
        }
        if let Some(c) = growth_c {
            if !(c.is_finite() && c >= 0.0) {
                return Err(Error::InvalidDriver(format!("growth constant must be >= 0, got {c}")));
            }
        }
        Ok(Self { name: name.into(), f: Arc::new(f), lipschitz_k, depends_on_y, depends_on_z, growth_c })
    }

    pub fn zero() -> Self {
        Self::new("zero", 0.0, false, false, Some(0.0), |_| 0.0).expect("valid constants")
    }

    pub fn constant(c: f64) -> Result<Self> {
        if !c.is_finite() {
            return Err(Error::InvalidDriver("constant driver must be finite".into()));
        }
        Self::new(format!("constant({c})"), 0.0, false, false, Some(c * c), move |_| c)
    }

    /// `f = a_y y + a_z z + c`.
    pub fn linear(a_y: f64, a_z: f64, c: f64) -> Result<Self> {
        if !(a_y.is_finite() && a_z.is_finite() && c.is_finite()) {
            return Err(Error::InvalidDriver("linear driver coefficients must be finite".into()));
        }
        let k = a_y.abs().max(a_z.abs());
        let growth = (a_y == 0.0).then(|| 2.0 * c.abs().powi(2).max(a_z * a_z));
        Self::new(
            format!("linear(a_y={a_y}, a_z={a_z}, c={c})"),
            k,
            a_y != 0.0,
            a_z != 0.0,
            growth,
            move |a| a_y * a.y + a_z * a.z + c,
        )
    }

    /// `f = -r y`.
    pub fn discount(rate: f64) -> Result<Self> {
        let mut d = Self::linear(-rate, 0.0, 0.0)?;
        d.name = format!("discount(r={rate})");
        Ok(d)
    }

    /// `f = -α z`, the driver of the Föllmer-Schweizer decomposition. `k_bar`
    /// bounds `|α|`.
    pub fn market_price_of_risk(k_bar: f64) -> Result<Self> {
        Self::new("market_price_of_risk", k_bar, false, true, Some(k_bar * k_bar), |a| -a.alpha * a.z)
    }

    /// `f = amplitude * sin(z)`.
    pub fn z_sine(amplitude: f64) -> Result<Self> {
        if !amplitude.is_finite() {
            return Err(Error::InvalidDriver("amplitude must be finite".into()));
        }
        Self::new(
            format!("z_sine({amplitude})"),
            amplitude.abs(),
            false,
            amplitude != 0.0,
            Some(amplitude * amplitude),
            move |a| amplitude * a.z.sin(),
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn lipschitz_k(&self) -> f64 {
        self.lipschitz_k
    }

    pub fn depends_on_y(&self) -> bool {
        self.depends_on_y
    }

    pub fn depends_on_z(&self) -> bool {
        self.depends_on_z
    }

    pub fn growth_c(&self) -> Option<f64> {
        self.growth_c
    }

    pub fn eval(&self, args: &DriverArgs) -> f64 {
        (self.f)(args)
    }

    /// Largest observed `|f(y,z) - f(y',z')| / (|y-y'| + |z-z'|)` over random
    /// triples at random grid points of `ens`. Errors if it exceeds the
    /// declared constant.
    pub fn check_lipschitz(&self, ens: &PathEnsemble, samples: usize, seed: u64) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        for _ in 0..samples {
            let step = rng.random_range(0..ens.n_steps());
            let path = rng.random_range(0..ens.n_paths());
            let base = DriverArgs {
                t: ens.grid().time(step),
                step,
                path,
                y: rng.random_range(-10.0..10.0),
                z: rng.random_range(-10.0..10.0),
                alpha: ens.alpha(step)[path],
            };
            let other = DriverArgs { y: rng.random_range(-10.0..10.0), z: rng.random_range(-10.0..10.0), ..base };
            let num = (self.eval(&base) - self.eval(&other)).abs();
            let den = (base.y - other.y).abs() + (base.z - other.z).abs();
            if den > 0.0 {
                worst = worst.max(num / den);
            }
        }
        if worst > self.lipschitz_k * (1.0 + 1e-9) + 1e-12 {
            return Err(Error::InvalidDriver(format!(
                "{}: observed Lipschitz ratio {worst} above declared {}",
                self.name, self.lipschitz_k
            )));
        }
        Ok(worst)
    }

    /// Sample mean of `Σ_i f(t_i, 0, 0)² Δ⟨M⟩_i`.
    pub fn integrability(&self, ens: &PathEnsemble) -> Result<f64> {
        let mut total = 0.0;
        for i in 0..ens.n_steps() {
            let db = ens.d_bracket(i);
            let t = ens.grid().time(i);
            for (path, &alpha) in ens.alpha(i).iter().enumerate() {
                let v = self.eval(&DriverArgs { t, step: i, path, y: 0.0, z: 0.0, alpha });
                total += v * v * db;
            }
        }
        let mean = total / ens.n_paths() as f64;
        if !mean.is_finite() {
            return Err(Error::InvalidDriver(format!("{}: E[∫ f(t,0,0)² d⟨M⟩] is not finite", self.name)));
        }
        Ok(mean)
    }
}

/// Named drivers for scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriverSpec {
    Zero,
    Constant { value: f64 },
    Linear {
        #[serde(default)]
        a_y: f64,
        #[serde(default)]
        a_z: f64,
        #[serde(default)]
        c: f64,
    },
    Discount { rate: f64 },
    MarketPriceOfRisk,
    ZSine { amplitude: f64 },
}

impl Default for DriverSpec {
    fn default() -> Self {
        DriverSpec::Zero
    }
}

impl DriverSpec {
    pub fn build(&self, market: &MarketConfig) -> Result<Driver> {
        match *self {
            DriverSpec::Zero => Ok(Driver::zero()),
            DriverSpec::Constant { value } => Driver::constant(value),
            DriverSpec::Linear { a_y, a_z, c } => Driver::linear(a_y, a_z, c),
            DriverSpec::Discount { rate } => Driver::discount(rate),
            DriverSpec::MarketPriceOfRisk => Driver::market_price_of_risk(market.k_bar()),
            DriverSpec::ZSine { amplitude } => Driver::z_sine(amplitude),
        }
    }
}
