//! Jump-diffusion martingale `M`, its predictable bracket and the price
//! `S = S0 + M + ∫ α d⟨M⟩` on a uniform grid.
//!
//! `M` is a Brownian part scaled by `sigma_bar` plus a compensated compound
//! Poisson part with i.i.d. marks. The bracket increment is the compensator
//! `(sigma_bar² + λ E[mark²]) Δt`, deterministic and identical on every path.
//!
//! Every path draws from its own ChaCha stream keyed by `(seed, path)`, so the
//! ensemble does not depend on how rayon schedules the work.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Process;

/// Uniform time grid `0 = t_0 < ... < t_N = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    horizon: f64,
    times: Vec<f64>,
}

impl Grid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::InvalidGrid("n_steps must be at least 1".into()));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidGrid(format!("horizon must be positive, got {horizon}")));
        }
        let mut times: Vec<f64> = (0..=n_steps)
            .map(|i| horizon * i as f64 / n_steps as f64)
            .collect();
        times[n_steps] = horizon;
        Ok(Self { horizon, times })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps() as f64
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn time(&self, i: usize) -> f64 {
        self.times[i]
    }

    /// Number of whole steps spanned by `duration`, or `None` when it does not
    /// land on the grid.
    pub fn steps_for(&self, duration: f64) -> Option<usize> {
        let k = duration / self.dt();
        let r = k.round();
        if (k - r).abs() <= 1e-9 * k.abs().max(1.0) && r >= 0.0 {
            Some(r as usize)
        } else {
            None
        }
    }
}

/// Distribution of the jump marks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MarkDistribution {
    Constant { value: f64 },
    Normal { mean: f64, std: f64 },
    Uniform { low: f64, high: f64 },
}

impl Default for MarkDistribution {
    fn default() -> Self {
        MarkDistribution::Constant { value: 0.0 }
    }
}

impl MarkDistribution {
    pub fn mean(&self) -> f64 {
        match *self {
            MarkDistribution::Constant { value } => value,
            MarkDistribution::Normal { mean, .. } => mean,
            MarkDistribution::Uniform { low, high } => 0.5 * (low + high),
        }
    }

    pub fn second_moment(&self) -> f64 {
        match *self {
            MarkDistribution::Constant { value } => value * value,
            MarkDistribution::Normal { mean, std } => mean * mean + std * std,
            MarkDistribution::Uniform { low, high } => {
                (low * low + low * high + high * high) / 3.0
            }
        }
    }

    /// Bound on `|mark|`, when the distribution has bounded support.
    pub fn sup_abs(&self) -> Option<f64> {
        match *self {
            MarkDistribution::Constant { value } => Some(value.abs()),
            MarkDistribution::Normal { std, mean } => (std == 0.0).then_some(mean.abs()),
            MarkDistribution::Uniform { low, high } => Some(low.abs().max(high.abs())),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            MarkDistribution::Constant { value } => value.is_finite(),
            MarkDistribution::Normal { mean, std } => mean.is_finite() && std.is_finite() && std >= 0.0,
            MarkDistribution::Uniform { low, high } => low.is_finite() && high.is_finite() && low <= high,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidMarket(format!("bad mark distribution {self:?}")))
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            MarkDistribution::Constant { value } => value,
            MarkDistribution::Normal { mean, std } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + std * z
            }
            MarkDistribution::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
        }
    }
}

/// Drift loading `α` in the structure condition. Evaluated at the left end
/// of each step, so it is predictable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AlphaSpec {
    Constant { value: f64 },
    /// `bound * tanh(slope * (M - M0))`
    TanhOfM { bound: f64, slope: f64 },
}

impl Default for AlphaSpec {
    fn default() -> Self {
        AlphaSpec::Constant { value: 0.0 }
    }
}

impl AlphaSpec {
    pub fn eval(&self, m_minus_m0: f64) -> f64 {
        match *self {
            AlphaSpec::Constant { value } => value,
            AlphaSpec::TanhOfM { bound, slope } => bound * (slope * m_minus_m0).tanh(),
        }
    }

    pub fn sup_abs(&self) -> f64 {
        match *self {
            AlphaSpec::Constant { value } => value.abs(),
            AlphaSpec::TanhOfM { bound, .. } => bound.abs(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            AlphaSpec::Constant { value } => value == 0.0,
            AlphaSpec::TanhOfM { bound, slope } => bound == 0.0 || slope == 0.0,
        }
    }
}

/// Coordinates of the per-path state vector fed to regression bases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateCoord {
    M,
    S,
    JumpCount,
    W,
}

pub fn default_state() -> Vec<StateCoord> {
    vec![StateCoord::M, StateCoord::S, StateCoord::JumpCount]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketConfig {
    pub sigma_bar: f64,
    pub jump_intensity: f64,
    #[serde(default)]
    pub marks: MarkDistribution,
    #[serde(default)]
    pub alpha: AlphaSpec,
    /// Declared `K̄` with `|α| <= K̄`. Defaults to `sup |α|`.
    #[serde(default)]
    pub alpha_bound: Option<f64>,
    /// Declared `C̄` with `sigma_bar² + λ E[mark²] <= C̄`. Defaults to equality.
    #[serde(default)]
    pub c_bar: Option<f64>,
    pub s0: f64,
    #[serde(default)]
    pub m0: f64,
    pub seed: u64,
    pub n_paths: usize,
    #[serde(default = "default_state")]
    pub state: Vec<StateCoord>,
}

impl Default for MarketConfig {
    fn default() -> Self {
        Self {
            sigma_bar: 1.0,
            jump_intensity: 0.0,
            marks: MarkDistribution::default(),
            alpha: AlphaSpec::default(),
            alpha_bound: None,
            c_bar: None,
            s0: 1.0,
            m0: 0.0,
            seed: 0,
            n_paths: 10_000,
            state: default_state(),
        }
    }
}

impl MarketConfig {
    /// `sigma_bar² + λ E[mark²]`, the bracket rate per unit time.
    pub fn bracket_rate(&self) -> f64 {
        self.sigma_bar * self.sigma_bar + self.jump_intensity * self.marks.second_moment()
    }

    pub fn c_bar(&self) -> f64 {
        self.c_bar.unwrap_or_else(|| self.bracket_rate())
    }

    pub fn k_bar(&self) -> f64 {
        self.alpha_bound.unwrap_or_else(|| self.alpha.sup_abs())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_bar.is_finite() && self.sigma_bar >= 0.0) {
            return Err(Error::InvalidMarket(format!("sigma_bar must be >= 0, got {}", self.sigma_bar)));
        }
        if !(self.jump_intensity.is_finite() && self.jump_intensity >= 0.0) {
            return Err(Error::InvalidMarket(format!(
                "jump intensity must be >= 0, got {}",
                self.jump_intensity
            )));
        }
        if self.n_paths == 0 {
            return Err(Error::InvalidMarket("n_paths must be at least 1".into()));
        }
        if !(self.s0.is_finite() && self.m0.is_finite()) {
            return Err(Error::InvalidMarket("s0 and m0 must be finite".into()));
        }
        if self.state.is_empty() {
            return Err(Error::InvalidMarket("state vector needs at least one coordinate".into()));
        }
        self.marks.validate()?;
        let rate = self.bracket_rate();
        let c_bar = self.c_bar();
        if !(rate <= c_bar * (1.0 + 1e-12)) {
            return Err(Error::InvalidMarket(format!(
                "bracket rate {rate} exceeds declared C_bar {c_bar}"
            )));
        }
        let k_bar = self.k_bar();
        if !(self.alpha.sup_abs() <= k_bar) {
            return Err(Error::InvalidMarket(format!(
                "alpha bound {} exceeds declared K_bar {k_bar}",
                self.alpha.sup_abs()
            )));
        }
        Ok(())
    }
}

/// Raw per-path draws: Brownian increments and per-step jump counts / mark sums.
#[derive(Debug, Clone, Default)]
pub struct PathDraws {
    pub dw: Vec<f64>,
    pub jump_counts: Vec<u32>,
    pub jump_sums: Vec<f64>,
}

/// `P` simulated paths on a shared grid. All per-path arrays are stored step
/// major: `field(i)` returns the slice over paths at step / time `i`.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    grid: Grid,
    config: MarketConfig,
    n_paths: usize,
    dw: Vec<f64>,
    w: Vec<f64>,
    jump_sum: Vec<f64>,
    jump_count: Vec<f64>,
    dm: Vec<f64>,
    m: Vec<f64>,
    d_bracket: Vec<f64>,
    alpha: Vec<f64>,
    ds: Vec<f64>,
    s: Vec<f64>,
}

impl PathEnsemble {
    /// Assemble an ensemble from explicit draws. `simulate_market` goes through
    /// here; tests use it to build coupled ensembles.
    pub fn from_draws(config: &MarketConfig, grid: &Grid, draws: &[PathDraws]) -> Result<Self> {
        config.validate()?;
        let n = grid.n_steps();
        let p_count = draws.len();
        if p_count == 0 {
            return Err(Error::InvalidMarket("n_paths must be at least 1".into()));
        }
        for (p, d) in draws.iter().enumerate() {
            if d.dw.len() != n || d.jump_counts.len() != n || d.jump_sums.len() != n {
                return Err(Error::ShapeMismatch(format!("path {p} draws do not match {n} steps")));
            }
            if let Some(i) = d.jump_sums.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite { step: i, what: format!("jump marks on path {p}") });
            }
        }
        let dt = grid.dt();
        let rate = config.bracket_rate();
        let compensator = config.jump_intensity * config.marks.mean() * dt;
        let d_bracket = vec![rate * dt; n];

        let mut ens = Self {
            grid: grid.clone(),
            config: config.clone(),
            n_paths: p_count,
            dw: vec![0.0; n * p_count],
            w: vec![0.0; (n + 1) * p_count],
            jump_sum: vec![0.0; n * p_count],
            jump_count: vec![0.0; (n + 1) * p_count],
            dm: vec![0.0; n * p_count],
            m: vec![0.0; (n + 1) * p_count],
            d_bracket,
            alpha: vec![0.0; n * p_count],
            ds: vec![0.0; n * p_count],
            s: vec![0.0; (n + 1) * p_count],
        };
        for (p, d) in draws.iter().enumerate() {
            let mut w = 0.0;
            let mut count = 0.0;
            let mut m = config.m0;
            let mut s = config.s0;
            ens.m[p] = m;
            ens.s[p] = s;
            for i in 0..n {
                let k = i * p_count + p;
                let k1 = (i + 1) * p_count + p;
                let dm = config.sigma_bar * d.dw[i] + (d.jump_sums[i] - compensator);
                let a = config.alpha.eval(m - config.m0);
                let ds = dm + a * ens.d_bracket[i];
                w += d.dw[i];
                count += f64::from(d.jump_counts[i]);
                m += dm;
                s += ds;
                ens.dw[k] = d.dw[i];
                ens.jump_sum[k] = d.jump_sums[i];
                ens.dm[k] = dm;
                ens.alpha[k] = a;
                ens.ds[k] = ds;
                ens.w[k1] = w;
                ens.jump_count[k1] = count;
                ens.m[k1] = m;
                ens.s[k1] = s;
            }
        }
        Ok(ens)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn config(&self) -> &MarketConfig {
        &self.config
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn n_steps(&self) -> usize {
        self.grid.n_steps()
    }

    fn row<'a>(&self, v: &'a [f64], i: usize) -> &'a [f64] {
        &v[i * self.n_paths..(i + 1) * self.n_paths]
    }

    /// Standard Brownian increments `ΔW_i` (before scaling by `sigma_bar`).
    pub fn dw(&self, i: usize) -> &[f64] {
        self.row(&self.dw, i)
    }

    pub fn w(&self, i: usize) -> &[f64] {
        self.row(&self.w, i)
    }

    /// Uncompensated sum of jump marks during step `i`.
    pub fn jump_sum(&self, i: usize) -> &[f64] {
        self.row(&self.jump_sum, i)
    }

    /// Running jump count at time `i`.
    pub fn jump_count(&self, i: usize) -> &[f64] {
        self.row(&self.jump_count, i)
    }

    pub fn dm(&self, i: usize) -> &[f64] {
        self.row(&self.dm, i)
    }

    pub fn m(&self, i: usize) -> &[f64] {
        self.row(&self.m, i)
    }

    /// Bracket increment `Δ⟨M⟩_i`; the same on every path.
    pub fn d_bracket(&self, i: usize) -> f64 {
        self.d_bracket[i]
    }

    /// `⟨M⟩_{t_i}`.
    pub fn bracket(&self, i: usize) -> f64 {
        self.d_bracket[..i].iter().sum()
    }

    pub fn alpha(&self, i: usize) -> &[f64] {
        self.row(&self.alpha, i)
    }

    pub fn ds(&self, i: usize) -> &[f64] {
        self.row(&self.ds, i)
    }

    pub fn s(&self, i: usize) -> &[f64] {
        self.row(&self.s, i)
    }

    pub fn coord(&self, c: StateCoord, i: usize) -> &[f64] {
        match c {
            StateCoord::M => self.m(i),
            StateCoord::S => self.s(i),
            StateCoord::JumpCount => self.jump_count(i),
            StateCoord::W => self.w(i),
        }
    }

    /// State vector columns at time `i`, in the configured order.
    pub fn state(&self, i: usize) -> Vec<&[f64]> {
        self.config.state.iter().map(|&c| self.coord(c, i)).collect()
    }

    /// Byte-level fingerprint of the simulated arrays.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for v in [&self.dw, &self.jump_sum, &self.dm, &self.m, &self.s, &self.alpha] {
            for x in v.iter() {
                h.update(x.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

fn draw_path(config: &MarketConfig, grid: &Grid, path: usize) -> Result<PathDraws> {
    let n = grid.n_steps();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(path as u64);
    let poisson = if config.jump_intensity > 0.0 {
        Some(Poisson::new(config.jump_intensity * dt).map_err(|e| Error::InvalidMarket(e.to_string()))?)
    } else {
        None
    };
    let mut d = PathDraws {
        dw: Vec::with_capacity(n),
        jump_counts: Vec::with_capacity(n),
        jump_sums: Vec::with_capacity(n),
    };
    for i in 0..n {
        let z: f64 = StandardNormal.sample(&mut rng);
        d.dw.push(sqrt_dt * z);
        let (count, sum) = match &poisson {
            Some(pois) => {
                let k = pois.sample(&mut rng) as u32;
                let mut sum = 0.0;
                for _ in 0..k {
                    let mark = config.marks.sample(&mut rng);
                    if !mark.is_finite() {
                        return Err(Error::NonFinite { step: i, what: format!("jump mark on path {path}") });
                    }
                    sum += mark;
                }
                (k, sum)
            }
            None => (0, 0.0),
        };
        d.jump_counts.push(count);
        d.jump_sums.push(sum);
    }
    Ok(d)
}

/// Simulate `config.n_paths` paths of `(W, J, M, ⟨M⟩, S)` on `grid`.
pub fn simulate_market(config: &MarketConfig, grid: &Grid) -> Result<PathEnsemble> {
    config.validate()?;
    let draws = (0..config.n_paths)
        .into_par_iter()
        .map(|p| draw_path(config, grid, p))
        .collect::<Result<Vec<_>>>()?;
    PathEnsemble::from_draws(config, grid, &draws)
}

/// Mean-variance tradeoff `K_i = Σ_{j<i} α_j² Δ⟨M⟩_j`, indexed `[time][path]`.
pub fn tradeoff_process(ens: &PathEnsemble) -> Process {
    let n = ens.n_steps();
    let mut k = vec![vec![0.0; ens.n_paths()]; n + 1];
    for i in 0..n {
        let db = ens.d_bracket(i);
        let (head, tail) = k.split_at_mut(i + 1);
        let prev = &head[i];
        for ((next, &kp), &a) in tail[0].iter_mut().zip(prev).zip(ens.alpha(i)) {
            *next = kp + a * a * db;
        }
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(sigma: f64, lambda: f64, n_paths: usize) -> MarketConfig {
        MarketConfig { sigma_bar: sigma, jump_intensity: lambda, n_paths, seed: 7, ..Default::default() }
    }

    #[test]
    fn grid_is_uniform_and_ends_at_horizon() {
        let g = Grid::new(1.0, 3).unwrap();
        assert_eq!(g.times().len(), 4);
        assert_eq!(g.time(3), 1.0);
        assert!(g.times().windows(2).all(|w| w[1] > w[0]));
        assert_eq!(g.steps_for(1.0 / 3.0), Some(1));
        assert_eq!(g.steps_for(0.25), None);
        assert!(Grid::new(1.0, 0).is_err());
        assert!(Grid::new(-1.0, 4).is_err());
    }

    #[test]
    fn degenerate_martingale_is_constant() {
        let mut c = cfg(0.0, 0.0, 50);
        c.m0 = 2.5;
        let g = Grid::new(1.0, 8).unwrap();
        let e = simulate_market(&c, &g).unwrap();
        for i in 0..=8 {
            assert!(e.m(i).iter().all(|&m| m == 2.5));
        }
        for i in 0..8 {
            assert_eq!(e.d_bracket(i), 0.0);
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let g = Grid::new(1.0, 4).unwrap();
        assert!(simulate_market(&cfg(-1.0, 0.0, 10), &g).is_err());
        assert!(simulate_market(&cfg(1.0, -0.5, 10), &g).is_err());
        assert!(simulate_market(&cfg(1.0, 0.0, 0), &g).is_err());
        let mut c = cfg(1.0, 1.0, 10);
        c.marks = MarkDistribution::Normal { mean: 0.0, std: f64::NAN };
        assert!(simulate_market(&c, &g).is_err());
        let mut c = cfg(1.0, 0.0, 10);
        c.alpha = AlphaSpec::Constant { value: 0.5 };
        c.alpha_bound = Some(0.1);
        assert!(simulate_market(&c, &g).is_err());
        let mut c = cfg(1.0, 0.0, 10);
        c.c_bar = Some(0.5);
        assert!(simulate_market(&c, &g).is_err());
    }

    #[test]
    fn non_finite_marks_are_rejected() {
        let c = cfg(1.0, 1.0, 1);
        let g = Grid::new(1.0, 2).unwrap();
        let draws = vec![PathDraws { dw: vec![0.0, 0.0], jump_counts: vec![1, 0], jump_sums: vec![f64::INFINITY, 0.0] }];
        assert!(matches!(PathEnsemble::from_draws(&c, &g, &draws), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn structure_condition_holds_bitwise() {
        let mut c = cfg(0.8, 2.0, 200);
        c.marks = MarkDistribution::Uniform { low: -0.3, high: 0.2 };
        c.alpha = AlphaSpec::TanhOfM { bound: 0.7, slope: 1.5 };
        let g = Grid::new(1.0, 16).unwrap();
        let e = simulate_market(&c, &g).unwrap();
        for i in 0..16 {
            for p in 0..200 {
                assert_eq!(e.ds(i)[p], e.dm(i)[p] + e.alpha(i)[p] * e.d_bracket(i));
                assert!(e.alpha(i)[p].abs() <= 0.7);
            }
        }
    }

    #[test]
    fn bracket_is_bounded_by_declared_constant() {
        let mut c = cfg(0.5, 3.0, 10);
        c.marks = MarkDistribution::Uniform { low: -0.4, high: 0.4 };
        // sigma² + λ sup|mark|² bounds the rate
        c.c_bar = Some(0.25 + 3.0 * 0.16);
        let g = Grid::new(2.0, 20).unwrap();
        let e = simulate_market(&c, &g).unwrap();
        let c_bar = c.c_bar();
        for s in 0..=20 {
            for t in s..=20 {
                let inc = e.bracket(t) - e.bracket(s);
                assert!(inc <= c_bar * (g.time(t) - g.time(s)) + 1e-12);
            }
        }
    }

    #[test]
    fn same_seed_same_bytes_regardless_of_threads() {
        let mut c = cfg(1.0, 1.5, 300);
        c.marks = MarkDistribution::Normal { mean: 0.1, std: 0.2 };
        let g = Grid::new(1.0, 10).unwrap();
        let a = simulate_market(&c, &g).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| simulate_market(&c, &g).unwrap());
        assert_eq!(a.fingerprint(), b.fingerprint());
        c.seed += 1;
        let d = simulate_market(&c, &g).unwrap();
        assert_ne!(a.fingerprint(), d.fingerprint());
    }

    #[test]
    fn tradeoff_closed_forms() {
        let g = Grid::new(1.0, 8).unwrap();
        let e = simulate_market(&cfg(1.0, 0.0, 20), &g).unwrap();
        assert!(tradeoff_process(&e).iter().flatten().all(|&k| k == 0.0));

        let mut c = cfg(1.0, 0.0, 20);
        c.alpha = AlphaSpec::Constant { value: 0.6 };
        let e = simulate_market(&c, &g).unwrap();
        let k = tradeoff_process(&e);
        for i in 0..=8 {
            for &v in &k[i] {
                assert!((v - 0.36 * g.time(i)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tradeoff_is_nondecreasing_and_bounded() {
        let mut c = cfg(0.9, 1.0, 500);
        c.marks = MarkDistribution::Uniform { low: -0.5, high: 0.5 };
        c.alpha = AlphaSpec::TanhOfM { bound: 0.8, slope: 3.0 };
        c.alpha_bound = Some(0.8);
        let g = Grid::new(1.5, 12).unwrap();
        let e = simulate_market(&c, &g).unwrap();
        let k = tradeoff_process(&e);
        let cap = 0.8 * 0.8 * c.c_bar() * 1.5;
        for p in 0..500 {
            for i in 0..12 {
                assert!(k[i + 1][p] >= k[i][p]);
            }
            assert!(k[12][p] <= cap + 1e-12);
        }
    }
}
