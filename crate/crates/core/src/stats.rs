//! Monte-Carlo test statistics shared by the modules and the run reports.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::information::{InformationModel, Projector};
use crate::market::PathEnsemble;

/// Relative tolerance for identities that hold algebraically and differ only
/// by floating-point rounding.
pub const ROUNDING_TOL: f64 = 64.0 * f64::EPSILON;

/// One named pass/fail check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub statistic: f64,
    pub threshold: f64,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

impl Check {
    /// Passes when `statistic <= threshold`.
    pub fn at_most(name: impl Into<String>, statistic: f64, threshold: f64) -> Self {
        Self { name: name.into(), statistic, threshold, passed: statistic <= threshold, detail: String::new() }
    }

    /// Passes when `statistic >= threshold`.
    pub fn at_least(name: impl Into<String>, statistic: f64, threshold: f64) -> Self {
        Self { name: name.into(), statistic, threshold, passed: statistic >= threshold, detail: String::new() }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }
}

/// Per-test `|z|` threshold for `m` simultaneous tests such that the chance
/// of any false alarm equals that of a single two-sided 3-SE test (Šidák).
pub fn family_threshold(m: usize) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    let n = Normal::standard();
    let single = 2.0 * (1.0 - n.cdf(3.0));
    if m <= 1 {
        return 3.0;
    }
    let per_test = 1.0 - (1.0 - single).powf(1.0 / m as f64);
    n.inverse_cdf(1.0 - per_test / 2.0)
}

/// Sample mean and standard error of the mean.
pub fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `|mean| / SE`; zero when the sample is constant at zero.
pub fn z_score(x: &[f64]) -> f64 {
    let (m, se) = mean_se(x);
    if se > 0.0 {
        (m / se).abs()
    } else if m == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Root mean square of `a - b` over all entries.
pub fn rms_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (ss / a.len() as f64).sqrt()
}

/// RMS of `a - b` pooled over a range of rows.
pub fn rms_diff_rows(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut ss = 0.0;
    let mut n = 0usize;
    for (ra, rb) in a.iter().zip(b) {
        ss += ra.iter().zip(rb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        n += ra.len();
    }
    (ss / n as f64).sqrt()
}

/// Largest `|x_i|` relative to `scale_i`, for rounding-level identity checks.
pub fn max_relative(residuals: impl Iterator<Item = (f64, f64)>) -> f64 {
    residuals.map(|(r, scale)| r.abs() / scale.max(1.0)).fold(0.0, f64::max)
}

/// Wilson-Hilferty normal approximation of a `χ²_k` statistic.
pub fn chi_square_to_z(stat: f64, dof: usize) -> f64 {
    if dof == 0 {
        return 0.0;
    }
    let k = dof as f64;
    let v = 2.0 / (9.0 * k);
    ((stat / k).cbrt() - (1.0 - v)) / v.sqrt()
}

/// Score for `E[x | F_{t_i}] = 0`: the heteroscedasticity-robust score
/// statistic of `x` against the basis in `X_{t_i}` (intercept included, so
/// the unconditional mean is covered), mapped to a standard normal scale.
pub fn conditional_mean_z(proj: &Projector, step: usize, x: &[f64]) -> Result<f64> {
    let (stat, dof) = proj.score_statistic(step, x)?;
    Ok(chi_square_to_z(stat, dof))
}

/// Max over steps of `conditional_mean_z` for a family of increments, against
/// the family-wise 3-SE threshold for that many steps.
pub fn martingale_increment_check(
    name: &str,
    proj: &Projector,
    increments: &[Vec<f64>],
) -> Result<Check> {
    let mut worst = f64::NEG_INFINITY;
    let mut at = 0;
    let mut above = 0;
    for (i, row) in increments.iter().enumerate() {
        let z = conditional_mean_z(proj, i, row)?;
        above += usize::from(z > 3.0);
        if z > worst {
            worst = z;
            at = i;
        }
    }
    let threshold = family_threshold(increments.len());
    Ok(Check::at_most(name, worst, threshold).with_detail(format!(
        "max over {} steps at step {at}; family-wise 3-SE level; {above} steps above 3",
        increments.len()
    )))
}

/// A test integrand in the orthogonality battery: `φ_i` as a function of the
/// information state at step `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestIntegrand {
    One,
    IndicatorMAboveStart,
    LaggedM,
    LaggedMSquared,
    Time,
    TimeTimesLaggedM,
}

impl TestIntegrand {
    pub const BATTERY: [TestIntegrand; 6] = [
        TestIntegrand::One,
        TestIntegrand::IndicatorMAboveStart,
        TestIntegrand::LaggedM,
        TestIntegrand::LaggedMSquared,
        TestIntegrand::Time,
        TestIntegrand::TimeTimesLaggedM,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TestIntegrand::One => "one",
            TestIntegrand::IndicatorMAboveStart => "indicator_m_above_m0",
            TestIntegrand::LaggedM => "lagged_m",
            TestIntegrand::LaggedMSquared => "lagged_m_squared",
            TestIntegrand::Time => "time",
            TestIntegrand::TimeTimesLaggedM => "time_times_lagged_m",
        }
    }

    /// `φ` at step `i` on every path; a function of `M` at the information
    /// index of step `i` only.
    pub fn eval(self, ens: &PathEnsemble, info: &InformationModel, i: usize) -> Result<Vec<f64>> {
        let j = info.info_index(ens.grid(), i)?;
        let m0 = ens.config().m0;
        let t = ens.grid().time(i);
        let m = ens.m(j);
        Ok(m.iter()
            .map(|&m| {
                let x = m - m0;
                match self {
                    TestIntegrand::One => 1.0,
                    TestIntegrand::IndicatorMAboveStart => f64::from(u8::from(x > 0.0)),
                    TestIntegrand::LaggedM => x,
                    TestIntegrand::LaggedMSquared => x * x,
                    TestIntegrand::Time => t,
                    TestIntegrand::TimeTimesLaggedM => t * x,
                }
            })
            .collect())
    }
}

/// Weak orthogonality of a residual martingale to `M`: for each `φ` in the
/// battery, the z-score of `O_T * Σ φ_i ΔM_i`.
pub fn orthogonality_battery(
    prefix: &str,
    ens: &PathEnsemble,
    info: &InformationModel,
    d_o: &[Vec<f64>],
) -> Result<Vec<Check>> {
    let n = ens.n_steps();
    let p = ens.n_paths();
    let mut o_total = vec![0.0; p];
    for row in d_o {
        for (o, d) in o_total.iter_mut().zip(row) {
            *o += d;
        }
    }
    let mut checks = Vec::with_capacity(TestIntegrand::BATTERY.len());
    for phi in TestIntegrand::BATTERY {
        let mut integral = vec![0.0; p];
        for i in 0..n {
            let f = phi.eval(ens, info, i)?;
            for ((acc, fi), dm) in integral.iter_mut().zip(&f).zip(ens.dm(i)) {
                *acc += fi * dm;
            }
        }
        let x: Vec<f64> = o_total.iter().zip(&integral).map(|(o, g)| o * g).collect();
        checks.push(Check::at_most(format!("{prefix}.orthogonality.{}", phi.name()), z_score(&x), 3.0));
    }
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_standard_error() {
        let (m, se) = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(z_score(&[0.0, 0.0]), 0.0);
        assert!(z_score(&[1.0, 1.0]).is_infinite());
    }

    #[test]
    fn wilson_hilferty_matches_chi_square_quantiles() {
        // Quantiles of χ²_10 at Φ(3) and at the median.
        assert!((chi_square_to_z(28.784988651566042, 10) - 3.0).abs() < 0.02);
        assert!(chi_square_to_z(9.34181776559197, 10).abs() < 0.02);
    }

    #[test]
    fn family_threshold_grows_with_tests() {
        assert_eq!(family_threshold(1), 3.0);
        let t64 = family_threshold(64);
        assert!(t64 > 4.0 && t64 < 4.2, "{t64}");
        assert!(family_threshold(2) > 3.0 && family_threshold(2) < t64);
    }

    #[test]
    fn check_directions() {
        assert!(Check::at_most("a", 1.0, 1.0).passed);
        assert!(!Check::at_most("a", f64::NAN, 1.0).passed);
        assert!(Check::at_least("a", 2.0, 1.0).passed);
    }

    #[test]
    fn rms_of_rows() {
        let a = vec![vec![1.0, 1.0], vec![0.0, 0.0]];
        let b = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        assert!((rms_diff_rows(&a, &b) - 0.5f64.sqrt()).abs() < 1e-15);
    }
}
