//! Monte Carlo replication engine.
//!
//! A sweep varies one axis (trigger-intensity scale, sample budget m, or noise
//! scale) over a grid. For every replication index a fresh dataset seed is
//! derived from the root seed and the index only, so all grid points of one
//! replication share their randomness (common random numbers); comparisons
//! across the grid are therefore much sharper than with independent draws.
//! Replications run in parallel and are aggregated strictly in index order.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::estimators::{fit, Method};
use crate::model::{generate_population, GenConfig, Population};
use crate::sampling::{ate_bias_bound, sample_population, variance_gap_bound, SamplingPlan};
use crate::seed::{self, TAG_REPLICATION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Scales the support of the trigger law (`Uniform[0,1]` becomes `Uniform[0,x]`).
    TriggerIntensity,
    /// Sets the per-unit sample budget m.
    SampleBudgetM,
    /// Multiplies every noise sigma.
    NoiseScale,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::TriggerIntensity => "trigger_intensity",
            SweepAxis::SampleBudgetM => "sample_budget_m",
            SweepAxis::NoiseScale => "noise_scale",
        }
    }
}

fn default_ci_level() -> f64 {
    0.95
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub gen: GenConfig,
    pub axis: SweepAxis,
    pub grid: Vec<f64>,
    pub replications: usize,
    pub estimators: BTreeSet<Method>,
    #[serde(default)]
    pub plan: Option<SamplingPlan>,
    #[serde(default = "default_ci_level")]
    pub ci_level: f64,
}

/// Configuration of one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub axis_value: f64,
    pub gen: GenConfig,
    pub plan: Option<SamplingPlan>,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        if self.grid.is_empty() {
            return Err(invalid("sweep grid is empty"));
        }
        if self.grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(invalid("sweep grid must be strictly increasing"));
        }
        if self.replications < 2 {
            return Err(invalid("need at least 2 replications"));
        }
        if self.estimators.is_empty() {
            return Err(invalid("no estimators selected"));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(invalid("ci_level must lie in (0, 1)"));
        }
        let partial = self.estimators.contains(&Method::PartialKnowledge);
        match (&self.plan, partial) {
            (None, true) => return Err(invalid("partial_knowledge requires a sampling plan")),
            (Some(_), false) => {
                return Err(invalid("a sampling plan is only meaningful with partial_knowledge"))
            }
            (Some(p), true) => p.validate()?,
            (None, false) => {}
        }
        for point in self.points()? {
            point.gen.validate()?;
            if let Some(p) = point.plan {
                p.validate()?;
            }
        }
        Ok(())
    }

    pub fn points(&self) -> Result<Vec<GridPoint>> {
        self.grid.iter().map(|&x| self.point(x)).collect()
    }

    fn point(&self, x: f64) -> Result<GridPoint> {
        let mut gen = self.gen.clone();
        let mut plan = self.plan;
        match self.axis {
            SweepAxis::TriggerIntensity => {
                if !(0.0..=1.0).contains(&x) {
                    return Err(invalid(format!("intensity scale {x} outside [0, 1]")));
                }
                gen.trigger_law = gen.trigger_law.scaled(x);
            }
            SweepAxis::SampleBudgetM => {
                if !(x >= 1.0 && x.fract() == 0.0) {
                    return Err(invalid(format!("sample budget {x} is not a positive integer")));
                }
                let p = plan
                    .as_mut()
                    .ok_or_else(|| invalid("sample_budget_m sweeps need a sampling plan"))?;
                p.m = x as u64;
            }
            SweepAxis::NoiseScale => {
                if !(x > 0.0 && x.is_finite()) {
                    return Err(invalid(format!("noise scale {x} must be positive")));
                }
                gen.noise = gen.noise.scaled(x);
            }
        }
        Ok(GridPoint {
            axis_value: x,
            gen,
            plan,
        })
    }
}

/// What one fit contributes to the aggregates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitSummary {
    pub ate: f64,
    pub se_ate: f64,
    pub residual_variance: f64,
}

/// A fit, or the name of the error that stopped it.
pub type Outcome = std::result::Result<FitSummary, &'static str>;

/// Per-replication outcomes for one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPoint {
    pub axis_value: f64,
    pub true_rho: f64,
    pub outcomes: BTreeMap<Method, Vec<Outcome>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawSweep {
    pub config: SweepConfig,
    pub points: Vec<RawPoint>,
}

fn run_replication(
    config: &SweepConfig,
    points: &[GridPoint],
    rep: u64,
) -> Result<Vec<Vec<(Method, Outcome)>>> {
    let mut cached: Option<Population> = None;
    let mut per_point = Vec::with_capacity(points.len());
    for point in points {
        let mut gen = point.gen.clone();
        gen.seed = seed::derive(config.gen.seed, &[TAG_REPLICATION, rep]);
        // Only the m axis leaves the data-generating process untouched.
        let population = match (&cached, config.axis) {
            (Some(p), SweepAxis::SampleBudgetM) => p.clone(),
            _ => generate_population(&gen)?,
        };
        let dataset = match point.plan {
            Some(plan) => {
                let plan = SamplingPlan {
                    seed: seed::derive(plan.seed, &[TAG_REPLICATION, rep]),
                    ..plan
                };
                sample_population(&population, &plan)?
            }
            None => population.dataset.clone(),
        };
        let fits = config
            .estimators
            .iter()
            .map(|&method| {
                let outcome = fit(&dataset, method, config.ci_level)
                    .map(|f| FitSummary {
                        ate: f.ate,
                        se_ate: f.se_ate,
                        residual_variance: f.residual_variance,
                    })
                    .map_err(|e| e.name());
                (method, outcome)
            })
            .collect();
        per_point.push(fits);
        cached = Some(population);
    }
    Ok(per_point)
}

/// Run every replication and keep the raw per-replication outcomes.
pub fn replicate(config: &SweepConfig) -> Result<RawSweep> {
    config.validate()?;
    let points = config.points()?;
    let reps: Vec<Vec<Vec<(Method, Outcome)>>> = (0..config.replications as u64)
        .into_par_iter()
        .map(|rep| run_replication(config, &points, rep))
        .collect::<Result<_>>()?;

    let raw_points = points
        .iter()
        .enumerate()
        .map(|(g, point)| {
            let mut outcomes: BTreeMap<Method, Vec<Outcome>> = config
                .estimators
                .iter()
                .map(|&m| (m, Vec::with_capacity(reps.len())))
                .collect();
            for rep in &reps {
                for &(method, outcome) in &rep[g] {
                    outcomes.get_mut(&method).expect("selected estimator").push(outcome);
                }
            }
            RawPoint {
                axis_value: point.axis_value,
                true_rho: point.gen.true_ate(),
                outcomes,
            }
        })
        .collect();
    Ok(RawSweep {
        config: config.clone(),
        points: raw_points,
    })
}

/// Aggregates for one (grid point, estimator) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis_value: f64,
    pub estimator: Method,
    pub n_ok: usize,
    pub n_failed: usize,
    /// Failed replications by error name.
    pub failures: BTreeMap<String, usize>,
    /// β2·E[p] from the configured law.
    pub true_rho: f64,
    pub mean_ate: f64,
    /// mean_ate − true_rho.
    pub empirical_bias: f64,
    /// Monte Carlo standard error of `empirical_bias`.
    pub bias_se: f64,
    /// Standard deviation of the ATE across replications.
    pub empirical_se: f64,
    pub empirical_var: f64,
    pub mean_reported_se: f64,
    pub mean_residual_variance: f64,
    /// |β2|/(m − 1); partial knowledge with m ≥ 2 only.
    pub bias_bound: Option<f64>,
    /// var(ρ̂′) − var(ρ̂) across replications; needs both trigger estimators.
    pub variance_gap: Option<f64>,
    pub variance_gap_se: Option<f64>,
    /// The population-form gap bound divided by N, i.e. on the scale of
    /// replication variances.
    pub variance_gap_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepMetadata {
    pub config: SweepConfig,
    pub seed: u64,
    pub true_rho_source: String,
    /// Excluded from serialized reports so that outputs are reproducible.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
    pub metadata: SweepMetadata,
}

impl SweepReport {
    pub fn row(&self, axis_value: f64, estimator: Method) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.axis_value == axis_value && r.estimator == estimator)
    }

    pub fn estimators(&self) -> BTreeSet<Method> {
        self.rows.iter().map(|r| r.estimator).collect()
    }
}

struct Moments {
    n: usize,
    mean: f64,
    var: f64,
}

fn moments(xs: &[f64]) -> Moments {
    let n = xs.len();
    if n == 0 {
        return Moments {
            n,
            mean: f64::NAN,
            var: f64::NAN,
        };
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        f64::NAN
    };
    Moments { n, mean, var }
}

/// Standard error of a sample variance under approximate normality.
fn variance_se(m: &Moments) -> f64 {
    m.var * (2.0 / (m.n as f64 - 1.0)).sqrt()
}

impl RawSweep {
    pub fn summarize(&self, wall_time_secs: f64) -> SweepReport {
        let cfg = &self.config;
        let n_units = cfg.gen.n_units as f64;
        let points = cfg.points().expect("validated in replicate");
        let mut rows = Vec::new();
        for (raw, point) in self.points.iter().zip(&points) {
            let ok_ates = |m: Method| -> Option<Vec<f64>> {
                raw.outcomes
                    .get(&m)
                    .map(|v| v.iter().filter_map(|o| o.ok().map(|s| s.ate)).collect())
            };
            let full_moments = ok_ates(Method::FullKnowledge).map(|v| moments(&v));
            for (&method, outcomes) in &raw.outcomes {
                let ok: Vec<FitSummary> = outcomes.iter().filter_map(|o| o.ok()).collect();
                let mut failures = BTreeMap::new();
                for name in outcomes.iter().filter_map(|o| o.err()) {
                    *failures.entry(name.to_string()).or_insert(0) += 1;
                }
                let ates: Vec<f64> = ok.iter().map(|s| s.ate).collect();
                let m = moments(&ates);
                let n_ok = ok.len();
                let mean_of = |f: fn(&FitSummary) -> f64| {
                    if n_ok == 0 {
                        f64::NAN
                    } else {
                        ok.iter().map(f).sum::<f64>() / n_ok as f64
                    }
                };
                let partial = method == Method::PartialKnowledge;
                let budget = point.plan.map(|p| p.m);
                let params = &point.gen.params;
                let bias_bound = budget
                    .filter(|_| partial)
                    .and_then(|m| ate_bias_bound(params.beta2, m).ok());
                let variance_gap_bound = budget
                    .filter(|_| partial)
                    .and_then(|m| variance_gap_bound(params.beta1, params.beta2, m).ok())
                    .map(|b| b / n_units);
                let (variance_gap, variance_gap_se) = match (&full_moments, partial) {
                    (Some(full), true) if full.n > 1 && m.n > 1 => (
                        Some(m.var - full.var),
                        Some(variance_se(&m).hypot(variance_se(full))),
                    ),
                    _ => (None, None),
                };
                rows.push(SweepRow {
                    axis_value: raw.axis_value,
                    estimator: method,
                    n_ok,
                    n_failed: outcomes.len() - n_ok,
                    failures,
                    true_rho: raw.true_rho,
                    mean_ate: m.mean,
                    empirical_bias: m.mean - raw.true_rho,
                    bias_se: (m.var / m.n as f64).sqrt(),
                    empirical_se: m.var.sqrt(),
                    empirical_var: m.var,
                    mean_reported_se: mean_of(|s| s.se_ate),
                    mean_residual_variance: mean_of(|s| s.residual_variance),
                    bias_bound,
                    variance_gap,
                    variance_gap_se,
                    variance_gap_bound,
                });
            }
        }
        SweepReport {
            axis: cfg.axis,
            rows,
            metadata: SweepMetadata {
                config: cfg.clone(),
                seed: cfg.gen.seed,
                true_rho_source: "analytic: beta2 * E[p] of the configured trigger law".into(),
                wall_time_secs,
            },
        }
    }
}

/// Run a sweep on the current rayon pool.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepReport> {
    let start = Instant::now();
    let raw = replicate(config)?;
    Ok(raw.summarize(start.elapsed().as_secs_f64()))
}

/// Run a sweep on a dedicated pool of `threads` workers (all cores if None).
pub fn run_sweep_with_threads(config: &SweepConfig, threads: Option<usize>) -> Result<SweepReport> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n.max(1));
    }
    let pool = builder.build().map_err(|e| invalid(e.to_string()))?;
    pool.install(|| run_sweep(config))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FigureTarget {
    AteVsIntensity,
    SeVsIntensity,
    BiasVsM,
    SeVsM,
}

impl FigureTarget {
    pub const ALL: [FigureTarget; 4] = [
        FigureTarget::AteVsIntensity,
        FigureTarget::SeVsIntensity,
        FigureTarget::BiasVsM,
        FigureTarget::SeVsM,
    ];

    pub fn axis(self) -> SweepAxis {
        match self {
            FigureTarget::AteVsIntensity | FigureTarget::SeVsIntensity => SweepAxis::TriggerIntensity,
            FigureTarget::BiasVsM | FigureTarget::SeVsM => SweepAxis::SampleBudgetM,
        }
    }

    pub fn file_stem(self) -> &'static str {
        match self {
            FigureTarget::AteVsIntensity => "ate_vs_intensity",
            FigureTarget::SeVsIntensity => "se_vs_intensity",
            FigureTarget::BiasVsM => "bias_vs_m",
            FigureTarget::SeVsM => "se_vs_m",
        }
    }

    fn metric(self) -> &'static str {
        match self {
            FigureTarget::AteVsIntensity => "mean_ate",
            FigureTarget::BiasVsM => "bias",
            FigureTarget::SeVsIntensity | FigureTarget::SeVsM => "se",
        }
    }
}

/// One long-format plot row: `axis,estimator,metric,value`.
#[derive(Debug, Clone, PartialEq)]
pub struct FigureRow {
    pub axis: f64,
    pub estimator: Method,
    pub metric: &'static str,
    pub value: f64,
}

/// Long-format data for one figure. SE figures use the mean reported SE.
pub fn emit_figure_data(report: &SweepReport, target: FigureTarget) -> Result<Vec<FigureRow>> {
    if report.axis != target.axis() {
        return Err(invalid(format!(
            "figure {:?} needs a {} sweep, report is {}",
            target,
            target.axis().as_str(),
            report.axis.as_str()
        )));
    }
    if report.rows.is_empty() {
        return Err(invalid("report has no estimator rows"));
    }
    Ok(report
        .rows
        .iter()
        .map(|row| FigureRow {
            axis: row.axis_value,
            estimator: row.estimator,
            metric: target.metric(),
            value: match target {
                FigureTarget::AteVsIntensity => row.mean_ate,
                FigureTarget::BiasVsM => row.empirical_bias,
                FigureTarget::SeVsIntensity | FigureTarget::SeVsM => row.mean_reported_se,
            },
        })
        .collect())
}
