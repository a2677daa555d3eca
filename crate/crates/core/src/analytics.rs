//! Cross-method comparison statistics over many treatments: standard-error
//! reduction, paired t-tests, significance tallies and CI overlap counts.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{invalid, Error, Result};
use crate::estimators::FitResult;

/// Confidence levels tallied by [`build_comparison_report`].
pub const REPORT_LEVELS: [f64; 2] = [0.90, 0.95];

/// Two fits of the same treatment, e.g. baseline against partial knowledge.
#[derive(Debug, Clone, PartialEq)]
pub struct TreatmentComparison {
    pub treatment_id: String,
    pub fit_a: FitResult,
    pub fit_b: FitResult,
}

/// Tallies at one confidence level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelTally {
    pub level: f64,
    pub significant_a: usize,
    pub significant_b: usize,
    pub ci_overlap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub n_treatments: usize,
    pub avg_se_a: f64,
    pub avg_se_b: f64,
    /// 100·(avg_se_a − avg_se_b)/avg_se_a, in percent.
    pub se_reduction_pct: f64,
    pub avg_abs_t_a: f64,
    pub avg_abs_t_b: f64,
    pub paired_t_p_value_se: f64,
    pub paired_t_p_value_ate: f64,
    pub same_sign_count: usize,
    pub levels: Vec<LevelTally>,
}

impl ComparisonReport {
    pub fn tally(&self, level: f64) -> Option<&LevelTally> {
        self.levels.iter().find(|t| t.level == level)
    }

    /// Flat `(key, value)` pairs. Level-specific keys carry the level in
    /// percent, e.g. `ci_overlap_count_95`.
    pub fn to_key_values(&self) -> Vec<(String, String)> {
        let mut kv = vec![
            ("n_treatments".to_string(), self.n_treatments.to_string()),
            ("avg_se_a".into(), self.avg_se_a.to_string()),
            ("avg_se_b".into(), self.avg_se_b.to_string()),
            ("se_reduction_pct".into(), self.se_reduction_pct.to_string()),
            ("avg_abs_t_a".into(), self.avg_abs_t_a.to_string()),
            ("avg_abs_t_b".into(), self.avg_abs_t_b.to_string()),
            ("paired_t_p_value_se".into(), self.paired_t_p_value_se.to_string()),
            ("paired_t_p_value_ate".into(), self.paired_t_p_value_ate.to_string()),
            ("same_sign_count".into(), self.same_sign_count.to_string()),
        ];
        for t in &self.levels {
            let pct = level_suffix(t.level);
            kv.push((format!("significant_a_{pct}"), t.significant_a.to_string()));
            kv.push((format!("significant_b_{pct}"), t.significant_b.to_string()));
            kv.push((format!("ci_overlap_count_{pct}"), t.ci_overlap.to_string()));
        }
        kv
    }
}

fn level_suffix(level: f64) -> String {
    let pct = level * 100.0;
    if (pct - pct.round()).abs() < 1e-9 {
        format!("{}", pct.round() as i64)
    } else {
        pct.to_string().replace('.', "_")
    }
}

/// Percentage reduction of b's average SE relative to a's. NaN when a's
/// average is not positive.
pub fn se_reduction_pct(avg_se_a: f64, avg_se_b: f64) -> f64 {
    if avg_se_a > 0.0 {
        100.0 * (avg_se_a - avg_se_b) / avg_se_a
    } else {
        f64::NAN
    }
}

/// Two-sided paired t-test on per-pair differences, returning (t, p).
///
/// With zero spread the statistic is degenerate: (0, 1) when the mean is zero
/// and (±∞, 0) otherwise.
pub fn paired_t_test(diffs: &[f64]) -> Result<(f64, f64)> {
    let n = diffs.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "paired t-test needs at least 2 differences, got {n}"
        )));
    }
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(invalid("paired t-test input contains non-finite values"));
    }
    let nf = n as f64;
    let mean = diffs.iter().sum::<f64>() / nf;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let sd = var.sqrt();
    // Rounding leaves a tiny spread on constant input; treat it as zero.
    let scale = diffs.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    if sd <= 1e-14 * scale || sd == 0.0 {
        return Ok(if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY.copysign(mean), 0.0)
        });
    }
    let t = mean / (sd / nf.sqrt());
    let dist = StudentsT::new(0.0, 1.0, nf - 1.0).map_err(|e| invalid(e.to_string()))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok((t, p))
}

fn check_se(fit: &FitResult, id: &str) -> Result<()> {
    if fit.se_ate.is_finite() && fit.se_ate >= 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("treatment `{id}` has no usable standard error")))
    }
}

/// Number of comparisons whose two CIs at `level` intersect. Intervals are
/// closed, so touching endpoints count as overlap.
pub fn ci_overlap_count(comparisons: &[TreatmentComparison], level: f64) -> Result<usize> {
    let mut count = 0;
    for c in comparisons {
        check_se(&c.fit_a, &c.treatment_id)?;
        check_se(&c.fit_b, &c.treatment_id)?;
        let (lo_a, hi_a) = c.fit_a.interval_at(level)?;
        let (lo_b, hi_b) = c.fit_b.interval_at(level)?;
        if lo_a <= hi_b && lo_b <= hi_a {
            count += 1;
        }
    }
    Ok(count)
}

fn mean(xs: impl Iterator<Item = f64>, n: usize) -> f64 {
    xs.sum::<f64>() / n as f64
}

/// p-value of a paired test; a single pair has no spread to test against, so
/// identical values give 1 and anything else NaN.
fn paired_p(diffs: &[f64]) -> Result<f64> {
    if diffs.len() == 1 {
        return Ok(if diffs[0] == 0.0 { 1.0 } else { f64::NAN });
    }
    paired_t_test(diffs).map(|(_, p)| p)
}

pub fn build_comparison_report(
    comparisons: &[TreatmentComparison],
    levels: &[f64],
) -> Result<ComparisonReport> {
    let n = comparisons.len();
    if n == 0 {
        return Err(Error::InsufficientData("no treatments to compare".into()));
    }
    for c in comparisons {
        check_se(&c.fit_a, &c.treatment_id)?;
        check_se(&c.fit_b, &c.treatment_id)?;
    }
    let avg_se_a = mean(comparisons.iter().map(|c| c.fit_a.se_ate), n);
    let avg_se_b = mean(comparisons.iter().map(|c| c.fit_b.se_ate), n);
    let se_diffs: Vec<f64> = comparisons
        .iter()
        .map(|c| c.fit_a.se_ate - c.fit_b.se_ate)
        .collect();
    let ate_diffs: Vec<f64> = comparisons
        .iter()
        .map(|c| c.fit_a.ate - c.fit_b.ate)
        .collect();
    let same_sign_count = comparisons
        .iter()
        .filter(|c| {
            let (a, b) = (c.fit_a.ate, c.fit_b.ate);
            a * b > 0.0 || (a == 0.0 && b == 0.0)
        })
        .count();

    let levels = levels
        .iter()
        .map(|&level| {
            let significant = |f: fn(&TreatmentComparison) -> &FitResult| -> Result<usize> {
                let mut k = 0;
                for c in comparisons {
                    k += usize::from(f(c).is_significant(level)?);
                }
                Ok(k)
            };
            Ok(LevelTally {
                level,
                significant_a: significant(|c| &c.fit_a)?,
                significant_b: significant(|c| &c.fit_b)?,
                ci_overlap: ci_overlap_count(comparisons, level)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ComparisonReport {
        n_treatments: n,
        avg_se_a,
        avg_se_b,
        se_reduction_pct: se_reduction_pct(avg_se_a, avg_se_b),
        avg_abs_t_a: mean(comparisons.iter().map(|c| c.fit_a.t_value.abs()), n),
        avg_abs_t_b: mean(comparisons.iter().map(|c| c.fit_b.t_value.abs()), n),
        paired_t_p_value_se: paired_p(&se_diffs)?,
        paired_t_p_value_ate: paired_p(&ate_diffs)?,
        same_sign_count,
        levels,
    })
}
