//! Scenario runs: simulate, solve, decompose, hedge, mmm and validate
//! pipelines with their checks, CSV artifacts and JSON reports.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bsde::{
    reduce_full_to_partial, solve_delayed_with, solve_with, BsdeSolution, Claim, Driver, Payoff, Underlying,
};
use crate::decomposition::{fs_with, gkw_with, tradeoff_bound, Decomposition};
use crate::error::{Error, Result};
use crate::hedging::{
    mean_self_financing_with, mmm_density, optimal_with, price_with, quotient_with, risk_with, Partition,
    Perturbation, Strategy,
};
use crate::information::{InformationModel, Projector};
use crate::market::{simulate_market, tradeoff_process, PathEnsemble, StateCoord};
use crate::scenario::{SchemeChoice, Scenario};
use crate::stats::{family_threshold, martingale_increment_check, mean_se, orthogonality_battery, rms_diff, rms_diff_rows, z_score, Check};
use crate::Process;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subcommand {
    Simulate,
    Solve,
    Decompose,
    Hedge,
    Mmm,
    Validate,
}

impl Subcommand {
    pub const ALL: [Subcommand; 6] = [
        Subcommand::Simulate,
        Subcommand::Solve,
        Subcommand::Decompose,
        Subcommand::Hedge,
        Subcommand::Mmm,
        Subcommand::Validate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Subcommand::Simulate => "simulate",
            Subcommand::Solve => "solve",
            Subcommand::Decompose => "decompose",
            Subcommand::Hedge => "hedge",
            Subcommand::Mmm => "mmm",
            Subcommand::Validate => "validate",
        }
    }
}

impl fmt::Display for Subcommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Subcommand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Subcommand::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Scenario(format!("unknown subcommand {s:?}")))
    }
}

/// Convergence record of one backward solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PicardHistory {
    pub name: String,
    pub scheme: String,
    pub iterations: usize,
    pub converged: bool,
    pub p_norm: Vec<f64>,
    pub ratios: Vec<f64>,
    pub classical: Vec<f64>,
}

impl PicardHistory {
    fn from_solution(name: &str, s: &BsdeSolution) -> Self {
        Self {
            name: name.to_string(),
            scheme: format!("{:?}", s.scheme).to_lowercase(),
            iterations: s.iterations,
            converged: s.converged,
            p_norm: s.p_norm_history.clone(),
            ratios: s.ratios.clone(),
            classical: s.classical_history.clone(),
        }
    }
}

/// Wall-clock seconds per stage. Written to a separate file so that reports
/// are reproducible byte for byte.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub stages: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub subcommand: Subcommand,
    pub scenario_hash: String,
    pub scenario: Scenario,
    pub ensemble_fingerprint: String,
    pub checks: Vec<Check>,
    pub picard: Vec<PicardHistory>,
    /// Named scalar results (prices, RMS errors, counts).
    pub metrics: BTreeMap<String, f64>,
    /// File names written to the output directory, report excluded.
    pub artifacts: Vec<String>,
    #[serde(skip)]
    pub timings: Timings,
}

impl RunReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn report_file_name(&self) -> String {
        format!("{}_{}_report.json", self.subcommand, &self.scenario_hash[..12])
    }

    pub fn timings_file_name(&self) -> String {
        format!("{}_{}_timings.json", self.subcommand, &self.scenario_hash[..12])
    }
}

/// Where artifacts go; `None` runs without touching the disk.
struct Output {
    dir: Option<PathBuf>,
    prefix: String,
    written: Vec<String>,
}

impl Output {
    fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let file = format!("{}_{name}.csv", self.prefix);
        let mut w = csv::Writer::from_path(dir.join(&file))?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        self.written.push(file);
        Ok(())
    }

    /// Long format `(path, step, value)`.
    fn process(&mut self, name: &str, p: &Process) -> Result<()> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let file = format!("{}_{name}.csv", self.prefix);
        let mut w = csv::Writer::from_path(dir.join(&file))?;
        w.write_record(["path", "step", name])?;
        let paths = p.first().map_or(0, Vec::len);
        for path in 0..paths {
            for (step, row) in p.iter().enumerate() {
                w.write_record([path.to_string(), step.to_string(), row[path].to_string()])?;
            }
        }
        w.flush()?;
        self.written.push(file);
        Ok(())
    }
}

struct Run<'a> {
    scenario: &'a Scenario,
    ens: &'a PathEnsemble,
    proj: Projector<'a>,
    info: InformationModel,
    claim: Claim,
    driver: Driver,
    out: Output,
    checks: Vec<Check>,
    picard: Vec<PicardHistory>,
    metrics: BTreeMap<String, f64>,
    timings: Timings,
}

fn row_mean_sd(row: &[f64]) -> (f64, f64) {
    let (m, se) = mean_se(row);
    (m, if se.is_finite() { se * (row.len() as f64).sqrt() } else { 0.0 })
}

fn error_check(name: &str, e: &Error) -> Check {
    Check::at_most(name, f64::INFINITY, 0.0).with_detail(e.to_string())
}

impl<'a> Run<'a> {
    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let r = f(self);
        self.timings.stages.push((name.to_string(), start.elapsed().as_secs_f64()));
        r
    }

    fn push(&mut self, c: Check) {
        self.checks.push(c);
    }

    fn metric(&mut self, name: &str, v: f64) {
        self.metrics.insert(name.to_string(), v);
    }

    fn n(&self) -> usize {
        self.ens.n_steps()
    }

    fn w_squared_claim(&self) -> bool {
        self.scenario.claim.underlying == Underlying::W
            && self.scenario.claim.payoff == Payoff::Power { exponent: 2.0 }
    }

    fn jump_free(&self) -> bool {
        let c = self.ens.config();
        c.jump_intensity == 0.0 || c.marks.second_moment() == 0.0
    }

    /// `2 W_{j(i)} / σ̄`, the integrand of `W_T²` against `M` under `info`.
    fn w_squared_integrand(&self, info: &InformationModel) -> Result<Process> {
        let sigma = self.ens.config().sigma_bar;
        (0..self.n())
            .map(|i| {
                let j = info.info_index(self.ens.grid(), i)?;
                Ok(self.ens.w(j).iter().map(|w| 2.0 * w / sigma).collect())
            })
            .collect()
    }

    fn market(&mut self) -> Result<()> {
        let ens = self.ens;
        let n = self.n();
        let mut mart = Vec::with_capacity(n);
        let mut comp = Vec::with_capacity(n);
        for i in 0..n {
            mart.push(z_score(ens.dm(i)));
            let db = ens.d_bracket(i);
            let sq: Vec<f64> = ens.dm(i).iter().map(|d| d * d - db).collect();
            comp.push(z_score(&sq));
        }
        let threshold = family_threshold(n);
        for (name, z) in [("market.martingale", &mart), ("market.bracket_compensation", &comp)] {
            let (at, worst) = z.iter().copied().enumerate().fold((0, 0.0f64), |a, (i, v)| if v > a.1 { (i, v) } else { a });
            let above = z.iter().filter(|v| **v > 3.0).count();
            self.metric(&format!("{name}.steps_above_3se"), above as f64);
            self.push(Check::at_most(name, worst, threshold).with_detail(format!(
                "max over {n} steps at step {at}; family-wise 3-SE level; {above} steps above 3 SE"
            )));
        }
        let mut mismatches = 0usize;
        for i in 0..n {
            let db = ens.d_bracket(i);
            for p in 0..ens.n_paths() {
                if ens.ds(i)[p] != ens.dm(i)[p] + ens.alpha(i)[p] * db {
                    mismatches += 1;
                }
            }
        }
        self.push(Check::at_most("market.structure_condition", mismatches as f64, 0.0));
        let k = tradeoff_process(ens);
        let decreasing = k.windows(2).flat_map(|w| w[1].iter().zip(&w[0]).filter(|(b, a)| b < a)).count();
        let (k_max, bound) = tradeoff_bound(ens);
        self.push(Check::at_most("market.tradeoff_monotone", decreasing as f64, 0.0));
        self.push(Check::at_most("market.tradeoff_bound", k_max, bound));
        self.metric("market.tradeoff_max", k_max);
        self.metric("market.bracket_T", ens.bracket(n));

        let rows = (0..=n).map(|i| {
            let (mm, ms) = row_mean_sd(ens.m(i));
            let (sm, ss) = row_mean_sd(ens.s(i));
            vec![i as f64, ens.grid().time(i), mm, ms, sm, ss, ens.bracket(i)]
        });
        self.out.csv("market_summary", &["step", "t", "m_mean", "m_sd", "s_mean", "s_sd", "bracket"], rows)?;
        if self.scenario.run.export_ensemble {
            let Some(dir) = &self.out.dir else { return Ok(()) };
            let file = format!("{}_ensemble.csv", self.out.prefix);
            let mut w = csv::Writer::from_path(dir.join(&file))?;
            w.write_record(["path", "step", "M", "bracket", "S"])?;
            for p in 0..ens.n_paths() {
                for i in 0..=n {
                    w.write_record([
                        p.to_string(),
                        i.to_string(),
                        ens.m(i)[p].to_string(),
                        ens.bracket(i).to_string(),
                        ens.s(i)[p].to_string(),
                    ])?;
                }
            }
            w.flush()?;
            self.out.written.push(file);
        }
        Ok(())
    }

    fn market_determinism(&mut self) -> Result<()> {
        let again = simulate_market(self.ens.config(), self.ens.grid())?;
        let same = again.fingerprint() == self.ens.fingerprint();
        self.push(Check::at_most("market.seed_determinism", f64::from(u8::from(!same)), 0.0));
        Ok(())
    }

    fn information(&mut self) -> Result<()> {
        let ens = self.ens;
        let n = self.n();
        let info = self.info;
        let mid = n / 2;
        let ones = vec![1.0; ens.n_paths()];
        let est = self.proj.cond_expect(&info, mid, &ones)?;
        let err = est.values.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
        self.push(Check::at_most("information.constant_target", err, 1e-9));
        if ens.config().state.contains(&StateCoord::M) {
            let est = self.proj.cond_expect(&info, mid, ens.m(n))?;
            let j = info.info_index(ens.grid(), mid)?;
            let rms = rms_diff(&est.values, ens.m(j));
            self.push(Check::at_most("information.martingale_oracle", rms, 0.05).with_detail(format!("step {mid}")));
        }
        if !info.is_full() {
            let full = info.as_full();
            let f_est = self.proj.cond_expect(&full, mid, self.claim.values())?;
            let tower = self.proj.cond_expect(&info, mid, &f_est.values)?;
            let direct = self.proj.cond_expect(&info, mid, self.claim.values())?;
            let (_, sd) = row_mean_sd(self.claim.values());
            let rel = if sd > 0.0 { rms_diff(&tower.values, &direct.values) / sd } else { 0.0 };
            self.push(Check::at_most("information.tower_property", rel, 0.05).with_detail("relative to sd of the claim"));
        }
        Ok(())
    }

    fn solve_scheme(&self, info: &InformationModel, driver: &Driver) -> Result<BsdeSolution> {
        let settings = self.scenario.solver_settings();
        match self.scenario.bsde.scheme {
            SchemeChoice::Picard => solve_with(&self.proj, info, driver, &self.claim, &settings),
            SchemeChoice::DelayedBlocks => solve_delayed_with(&self.proj, info, driver, &self.claim, settings.eps_den),
        }
    }

    fn blocks_admissible(&self) -> bool {
        let info = self.info;
        !info.is_full()
            && !self.driver.depends_on_y()
            && self.driver.growth_c().is_some()
            && info.lag_steps(self.ens.grid()).is_ok_and(|d| d > 0 && self.n() % d == 0)
    }

    fn solve(&mut self) -> Result<BsdeSolution> {
        let ens = self.ens;
        let n = self.n();
        let driver = self.driver.clone();
        match driver.check_lipschitz(ens, 2000, self.scenario.run.seed) {
            Ok(r) => self.push(Check::at_most("bsde.driver_lipschitz", r, driver.lipschitz_k() * (1.0 + 1e-9) + 1e-12)),
            Err(e) => self.push(error_check("bsde.driver_lipschitz", &e)),
        }
        match driver.integrability(ens) {
            Ok(v) => self.push(Check::at_most("bsde.driver_integrability", v, f64::MAX)),
            Err(e) => self.push(error_check("bsde.driver_integrability", &e)),
        }
        let sol = self.solve_scheme(&self.info, &driver)?;
        self.picard.push(PicardHistory::from_solution("bsde", &sol));
        self.metric("bsde.y0", sol.y0());
        self.metric("bsde.null_paths", sol.null_paths as f64);
        self.metric("bsde.ridge_steps", sol.ridge_steps as f64);
        self.push(Check::at_most("bsde.terminal_condition", sol.terminal_error(&self.claim), 0.0));
        self.push(Check::at_most("bsde.recursion_identity", sol.identity_error(ens), 1.0).with_detail("rounding units"));
        self.push(Check::at_least("bsde.converged", f64::from(u8::from(sol.converged)), 1.0)
            .with_detail(format!("{} iterations", sol.iterations)));
        if !driver.depends_on_y() && !driver.depends_on_z() {
            self.push(Check::at_most("bsde.constant_driver_one_iteration", sol.iterations as f64, 1.0));
        }
        let d_o = sol.d_o.clone();
        for c in orthogonality_battery("bsde", ens, &self.info, &d_o)? {
            self.push(c);
        }
        let increments = sol.d_o.clone();
        self.push(martingale_increment_check("bsde.residual_martingale", &self.proj, &increments)?);

        if self.w_squared_claim() && self.jump_free() && driver.name() == "zero" {
            let horizon = ens.grid().horizon();
            let y_oracle: Process = (0..=n)
                .map(|i| ens.w(i).iter().map(|w| w * w + horizon - ens.grid().time(i)).collect())
                .collect();
            let z_oracle = self.w_squared_integrand(&self.info)?;
            let ry = rms_diff_rows(&sol.y, &y_oracle);
            let rz = rms_diff_rows(&sol.z, &z_oracle);
            self.push(Check::at_most("bsde.y_oracle_rms", ry, 0.05));
            self.push(Check::at_most("bsde.z_oracle_rms", rz, 0.1));
        }
        if let crate::bsde::DriverSpec::Discount { rate } = self.scenario.bsde.driver {
            let full = self.info.as_full();
            let mut oracle = Vec::with_capacity(n + 1);
            for i in 0..=n {
                let e = self.proj.cond_expect(&full, i, self.claim.values())?.values;
                let disc = (-rate * (ens.bracket(n) - ens.bracket(i))).exp();
                oracle.push(e.iter().map(|v| disc * v).collect::<Vec<f64>>());
            }
            self.push(Check::at_most("bsde.discount_oracle_rms", rms_diff_rows(&sol.y, &oracle), 0.05));
        }

        let rows = (0..=n).map(|i| {
            let (ym, ys) = row_mean_sd(&sol.y[i]);
            let (zm, zs, om) = if i < n {
                let (zm, zs) = row_mean_sd(&sol.z[i]);
                (zm, zs, row_mean_sd(&sol.d_o[i]).0)
            } else {
                (0.0, 0.0, 0.0)
            };
            vec![i as f64, ens.grid().time(i), ym, ys, zm, zs, om]
        });
        self.out.csv("bsde_summary", &["step", "t", "y_mean", "y_sd", "z_mean", "z_sd", "do_mean"], rows)?;
        if self.scenario.run.export_processes {
            self.out.process("Y", &sol.y)?;
            self.out.process("Z", &sol.z)?;
            self.out.process("dO", &sol.d_o)?;
        }
        Ok(sol)
    }

    /// Cross-checks between solvers and information levels.
    fn solver_collapse(&mut self, sol: &BsdeSolution) -> Result<()> {
        let ens = self.ens;
        let settings = self.scenario.solver_settings();
        let full_info = self.info.as_full();
        if self.info.is_full() {
            if !self.driver.depends_on_z() {
                let r = reduce_full_to_partial(sol, ens, &full_info)?;
                let same = r.solution.y == sol.y && r.solution.z == sol.z && r.solution.d_o == sol.d_o;
                self.push(Check::at_most("bsde.full_reduction_identity", f64::from(u8::from(!same)), 0.0));
            }
            return Ok(());
        }
        if !self.driver.depends_on_z() {
            let full = solve_with(&self.proj, &full_info, &self.driver, &self.claim, &settings)?;
            let r = reduce_full_to_partial(&full, ens, &self.info)?;
            self.push(Check::at_least(
                "bsde.reduction_contracts",
                f64::from(u8::from(r.projection_contracts())),
                1.0,
            ));
            self.push(Check::at_most("bsde.reduction_y_rms", rms_diff_rows(&r.solution.y, &sol.y), 0.05));
        }
        if self.blocks_admissible() {
            let other = match self.scenario.bsde.scheme {
                SchemeChoice::Picard => solve_delayed_with(&self.proj, &self.info, &self.driver, &self.claim, settings.eps_den)?,
                SchemeChoice::DelayedBlocks => solve_with(&self.proj, &self.info, &self.driver, &self.claim, &settings)?,
            };
            self.push(Check::at_most("bsde.blocks_vs_picard_y_rms", rms_diff_rows(&other.y, &sol.y), 0.05));
            self.push(Check::at_most("bsde.blocks_vs_picard_identity", other.identity_error(ens), 1.0));
        }
        Ok(())
    }

    fn decompose(&mut self) -> Result<(Decomposition, Decomposition)> {
        let ens = self.ens;
        let n = self.n();
        let settings = self.scenario.solver_settings();
        let gkw = gkw_with(&self.proj, &self.info, &self.claim)?;
        let fs = fs_with(&self.proj, &self.info, &self.claim, &settings)?;
        self.picard.push(PicardHistory::from_solution("fs", &fs.solution));
        self.metric("gkw.u0", gkw.u0);
        self.metric("fs.u0", fs.u0);
        self.push(Check::at_most("gkw.reconstruction", gkw.reconstruction_error(ens, &self.claim), 1.0));
        self.push(Check::at_most("fs.reconstruction", fs.reconstruction_error(ens, &self.claim), 1.0));
        self.push(Check::at_least("fs.converged", f64::from(u8::from(fs.solution.converged)), 1.0));
        for c in orthogonality_battery("gkw", ens, &self.info, &gkw.residual)? {
            self.push(c);
        }
        for c in orthogonality_battery("fs", ens, &self.info, &fs.residual)? {
            self.push(c);
        }
        if ens.config().alpha.is_zero() {
            let d = rms_diff_rows(&gkw.integrand, &fs.integrand).max(rms_diff_rows(&gkw.residual, &fs.residual));
            self.push(Check::at_most("fs.collapses_to_gkw", d, 1e-8));
        }
        let rows = (0..n).map(|i| {
            vec![
                i as f64,
                ens.grid().time(i),
                row_mean_sd(&gkw.integrand[i]).0,
                row_mean_sd(&fs.integrand[i]).0,
                row_mean_sd(&gkw.residual[i]).0,
                row_mean_sd(&fs.residual[i]).0,
            ]
        });
        self.out.csv("decomposition", &["step", "t", "gkw_h_mean", "fs_beta_mean", "gkw_da_mean", "fs_da_mean"], rows)?;
        if self.scenario.run.export_processes {
            self.out.process("H_gkw", &gkw.integrand)?;
            self.out.process("beta_fs", &fs.integrand)?;
        }
        Ok((gkw, fs))
    }

    fn hedge(&mut self) -> Result<()> {
        let ens = self.ens;
        let n = self.n();
        let settings = self.scenario.solver_settings();
        let (opt, fs) = optimal_with(&self.proj, &self.info, &self.claim, &settings)?;
        self.metric("hedge.initial_value", fs.u0);
        self.push(Check::at_most("hedge.replication", opt.replication_error(&self.claim), 0.0));
        let dc = opt.cost_increments();
        self.push(martingale_increment_check("hedge.cost_martingale", &self.proj, &dc)?);
        for c in orthogonality_battery("hedge.cost", ens, &self.info, &dc)? {
            self.push(c);
        }
        let risk = risk_with(&self.proj, &self.info, &opt)?;
        self.metric("hedge.risk_clipped", risk.clipped as f64);
        self.metric("hedge.initial_risk", risk.values[0][0]);

        if self.w_squared_claim() && self.jump_free() && ens.config().alpha.is_zero() {
            let oracle = self.w_squared_integrand(&self.info)?;
            self.push(Check::at_most("hedge.theta_oracle_rms", rms_diff_rows(&opt.theta, &oracle), 0.1));
        }
        if self.info.is_full() {
            self.mmm_agreement("hedge.mmm_agreement", &opt.value)?;
        }
        self.risk_quotients(&opt)?;

        let rows = (0..=n).map(|i| {
            let th = if i < n { row_mean_sd(&opt.theta[i]) } else { (0.0, 0.0) };
            vec![
                i as f64,
                ens.grid().time(i),
                th.0,
                th.1,
                row_mean_sd(&opt.eta[i]).0,
                row_mean_sd(&opt.value[i]).0,
                row_mean_sd(&opt.cost[i]).0,
                row_mean_sd(&risk.values[i]).0,
            ]
        });
        self.out.csv(
            "strategy",
            &["step", "t", "theta_mean", "theta_sd", "eta_mean", "value_mean", "cost_mean", "risk_mean"],
            rows,
        )?;
        if self.scenario.run.export_processes {
            self.out.process("theta", &opt.theta)?;
            self.out.process("cost", &opt.cost)?;
        }
        Ok(())
    }

    fn risk_quotients(&mut self, opt: &Strategy) -> Result<()> {
        let ens = self.ens;
        let n = self.n();
        let h = self.scenario.hedge;
        let partition = Partition::uniform(n, h.partition_cells)?;
        let msf = mean_self_financing_with(&self.proj, &self.info, &self.claim, opt.theta.clone())?;
        for pert in Perturbation::battery(h.perturbation, h.partition_cells) {
            let delta = pert.process(ens, &self.info, &partition)?;
            let q = quotient_with(&self.proj, &self.info, &msf, &delta, &partition)?;
            let name = format!("hedge.risk_quotient.{}", pert.name());
            self.metric(&format!("{name}.min"), q.min_mean());
            self.push(Check::at_least(name, q.min_mean(), -q.floor()));
        }
        let d0 = h.perturbation;
        let shifted: Process = opt.theta.iter().map(|r| r.iter().map(|t| t + d0).collect()).collect();
        let bad = mean_self_financing_with(&self.proj, &self.info, &self.claim, shifted)?;
        let back = Perturbation::Constant { value: -d0 }.process(ens, &self.info, &partition)?;
        let q = quotient_with(&self.proj, &self.info, &bad, &back, &partition)?;
        self.metric("hedge.risk_quotient.perturbed.min", q.min_mean());
        self.push(
            Check::at_most("hedge.risk_quotient.detects_perturbed", q.min_mean(), -q.floor())
                .with_detail(format!("theta + {d0}, reverse perturbation")),
        );
        Ok(())
    }

    /// RMS of the MMM price against a full-information value process over
    /// all steps before maturity.
    fn mmm_agreement(&mut self, name: &str, value: &Process) -> Result<()> {
        let weights = match mmm_density(self.ens, 0.0) {
            Ok(w) => w,
            Err(e) => {
                self.push(error_check(name, &e));
                return Ok(());
            }
        };
        let mut prices = Vec::with_capacity(self.n());
        let mut fallback = 0;
        for i in 0..self.n() {
            let p = price_with(&self.proj, &weights, &self.claim, i)?;
            fallback += p.fallback_paths;
            prices.push(p.values);
        }
        self.push(
            Check::at_most(name, rms_diff_rows(&prices, &value[..self.n()]), 0.1)
                .with_detail(format!("{fallback} fallback path-steps")),
        );
        Ok(())
    }

    fn mmm(&mut self) -> Result<()> {
        let ens = self.ens;
        let n = self.n();
        let weights = mmm_density(ens, 1.0)?;
        self.push(
            Check::at_most("mmm.positivity", weights.invalid as f64, 0.0)
                .with_detail(format!("{} of {} paths", weights.invalid, ens.n_paths())),
        );
        let lt = weights.terminal();
        let centered: Vec<f64> = lt.iter().map(|l| l - 1.0).collect();
        self.metric("mmm.mean_density", row_mean_sd(lt).0);
        self.push(Check::at_most("mmm.mean_density", z_score(&centered), 3.0));
        let s0 = ens.config().s0;
        let disc: Vec<f64> = lt.iter().zip(ens.s(n)).map(|(l, s)| l * s - s0).collect();
        self.push(Check::at_most("mmm.price_martingale", z_score(&disc), 3.0));
        if weights.all_valid() {
            let full = self.info.as_full();
            let fs = fs_with(&self.proj, &full, &self.claim, &self.scenario.solver_settings())?;
            self.metric("mmm.price0", price_with(&self.proj, &weights, &self.claim, 0)?.values[0]);
            self.mmm_agreement("mmm.fs_agreement", &fs.solution.y)?;
        }
        let rows = (0..=n).map(|i| {
            let (m, sd) = row_mean_sd(&weights.density[i]);
            vec![i as f64, ens.grid().time(i), m, sd]
        });
        self.out.csv("mmm_density", &["step", "t", "density_mean", "density_sd"], rows)?;
        Ok(())
    }
}

/// Execute `subcommand` on `scenario`. Artifacts go to `output_dir` when
/// given (created if missing); the report and timings are written there too.
pub fn run(scenario: &Scenario, subcommand: Subcommand, output_dir: Option<&Path>) -> Result<RunReport> {
    scenario.validate()?;
    let hash = scenario.hash();
    let prefix = format!("{subcommand}_{}", &hash[..12]);
    if let Some(d) = output_dir {
        fs::create_dir_all(d)?;
    }
    let grid = scenario.grid()?;
    let start = Instant::now();
    let ens = simulate_market(&scenario.market_config(), &grid)?;
    let sim_time = start.elapsed().as_secs_f64();
    let info = scenario.info_model();
    let driver = scenario.bsde.driver.build(ens.config())?;
    let memory = driver.depends_on_z() || !ens.config().alpha.is_zero();
    let mut r = Run {
        scenario,
        ens: &ens,
        proj: Projector::for_equation(&ens, &info, memory)?,
        info,
        claim: Claim::from_spec(&scenario.claim, &ens)?,
        driver,
        out: Output { dir: output_dir.map(Path::to_path_buf), prefix, written: Vec::new() },
        checks: Vec::new(),
        picard: Vec::new(),
        metrics: BTreeMap::new(),
        timings: Timings { stages: vec![("simulate".into(), sim_time)] },
    };
    match subcommand {
        Subcommand::Simulate => r.stage("market", Run::market)?,
        Subcommand::Solve => {
            r.stage("solve", Run::solve)?;
        }
        Subcommand::Decompose => {
            r.stage("decompose", Run::decompose)?;
        }
        Subcommand::Hedge => r.stage("hedge", Run::hedge)?,
        Subcommand::Mmm => r.stage("mmm", Run::mmm)?,
        Subcommand::Validate => {
            r.stage("market", Run::market)?;
            r.stage("determinism", Run::market_determinism)?;
            r.stage("information", Run::information)?;
            let sol = r.stage("solve", Run::solve)?;
            r.stage("collapse", |r| r.solver_collapse(&sol))?;
            r.stage("decompose", Run::decompose)?;
            r.stage("hedge", Run::hedge)?;
            r.stage("mmm", Run::mmm)?;
        }
    }
    let report = RunReport {
        subcommand,
        scenario_hash: hash,
        scenario: scenario.clone(),
        ensemble_fingerprint: ens.fingerprint(),
        checks: r.checks,
        picard: r.picard,
        metrics: r.metrics,
        artifacts: r.out.written,
        timings: r.timings,
    };
    debug_assert!(
        {
            let mut names: Vec<&str> = report.checks.iter().map(|c| c.name.as_str()).collect();
            names.sort_unstable();
            names.windows(2).all(|w| w[0] != w[1])
        },
        "duplicate check names"
    );
    if let Some(d) = output_dir {
        fs::write(d.join(report.report_file_name()), serde_json::to_string_pretty(&report)? + "\n")?;
        fs::write(d.join(report.timings_file_name()), serde_json::to_string_pretty(&report.timings)? + "\n")?;
    }
    Ok(report)
}
