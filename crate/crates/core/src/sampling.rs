//! Sampled trigger-intensity estimation and the bounds it implies.
//!
//! For each unit, `m` observations are inspected and `r′ = (#triggered)/m`.
//! With independent draws the error `ε = r′ − r` has `E[ε | r] = 0` and
//! `E[ε² | r] = r(1 − r)/m`, hence population-wide `E[ε²] = (E[r] − E[r²])/m`.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Binomial, Distribution, Hypergeometric};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{Dataset, IntensitySource, ObservationRecord, Population};
use crate::seed::{self, TAG_SAMPLE};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Independent draws; the error variance is exactly r(1 − r)/m.
    #[default]
    WithReplacement,
    /// Simple random sample of distinct observations. Variance carries the
    /// finite-population factor (n − m)/(n − 1).
    WithoutReplacement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub m: u64,
    #[serde(default)]
    pub mode: SamplingMode,
    #[serde(default)]
    pub seed: u64,
}

impl SamplingPlan {
    pub fn new(m: u64, mode: SamplingMode, seed: u64) -> Result<Self> {
        let plan = SamplingPlan { m, mode, seed };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(invalid("sample budget m must be at least 1"));
        }
        Ok(())
    }

    fn check_budget(&self, unit_id: &str, n_obs: u64) -> Result<()> {
        if self.mode == SamplingMode::WithoutReplacement && self.m > n_obs {
            return Err(Error::InsufficientObservations {
                unit_id: unit_id.to_string(),
                requested: self.m,
                available: n_obs,
            });
        }
        Ok(())
    }
}

/// Error moments of the sampled intensity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonMoments {
    pub mean_eps: f64,
    pub mean_eps2: f64,
}

/// Estimate one unit's intensity by inspecting `plan.m` of its observations.
/// The result is a multiple of 1/m in [0, 1].
pub fn estimate_trigger_intensity<R: Rng + ?Sized>(
    observations: &[ObservationRecord],
    plan: &SamplingPlan,
    rng: &mut R,
) -> Result<f64> {
    plan.validate()?;
    let unit_id = observations.first().map_or("", |o| o.unit_id.as_str());
    let n = observations.len();
    if n == 0 {
        return Err(Error::InsufficientObservations {
            unit_id: unit_id.to_string(),
            requested: plan.m,
            available: 0,
        });
    }
    plan.check_budget(unit_id, n as u64)?;
    let label = |i: usize| -> Result<u64> {
        let o = &observations[i];
        o.trigger_status
            .map(u64::from)
            .ok_or_else(|| Error::MissingTriggerData {
                unit_id: o.unit_id.clone(),
                field: "trigger_status",
            })
    };
    let mut hits = 0u64;
    match plan.mode {
        SamplingMode::WithReplacement => {
            for _ in 0..plan.m {
                hits += label(rng.random_range(0..n))?;
            }
        }
        SamplingMode::WithoutReplacement => {
            for i in index::sample(rng, n, plan.m as usize) {
                hits += label(i)?;
            }
        }
    }
    Ok(hits as f64 / plan.m as f64)
}

/// Same estimator when only the unit's trigger count is known: draws the
/// number of sampled triggers from Binomial(m, k/n) or Hypergeometric(n, k, m).
pub fn sample_intensity_from_counts<R: Rng + ?Sized>(
    unit_id: &str,
    n_obs: u64,
    n_triggered: u64,
    plan: &SamplingPlan,
    rng: &mut R,
) -> Result<f64> {
    plan.validate()?;
    if n_obs == 0 || n_triggered > n_obs {
        return Err(invalid(format!(
            "unit `{unit_id}`: {n_triggered} triggers out of {n_obs} observations"
        )));
    }
    plan.check_budget(unit_id, n_obs)?;
    let hits = match plan.mode {
        SamplingMode::WithReplacement => {
            let p = n_triggered as f64 / n_obs as f64;
            Binomial::new(plan.m, p)
                .map_err(|e| invalid(e.to_string()))?
                .sample(rng)
        }
        SamplingMode::WithoutReplacement => Hypergeometric::new(n_obs, n_triggered, plan.m)
            .map_err(|e| invalid(e.to_string()))?
            .sample(rng),
    };
    Ok(hits as f64 / plan.m as f64)
}

/// Fill the estimated-intensity column of a synthesized population. Each
/// unit's draw comes from its own `(plan.seed, unit_id)` stream.
pub fn sample_population(population: &Population, plan: &SamplingPlan) -> Result<Dataset> {
    let estimates = population
        .dataset
        .units()
        .iter()
        .zip(&population.trigger_counts)
        .map(|(u, &k)| {
            let mut rng = seed::unit_stream(plan.seed, TAG_SAMPLE, &u.unit_id);
            sample_intensity_from_counts(&u.unit_id, u.n_obs, k, plan, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    population.dataset.clone().with_estimated_intensities(&estimates)
}

/// Pooled E[ε] and E[ε²] of the estimated column against the true one.
pub fn empirical_epsilon_moments(dataset: &Dataset) -> Result<EpsilonMoments> {
    let r = dataset.intensities(IntensitySource::True)?;
    let est = dataset.intensities(IntensitySource::Estimated)?;
    if r.is_empty() {
        return Err(Error::InsufficientData("empty dataset".into()));
    }
    let n = r.len() as f64;
    let (s1, s2) = r
        .iter()
        .zip(&est)
        .fold((0.0, 0.0), |(a, b), (ri, ei)| {
            let e = ei - ri;
            (a + e, b + e * e)
        });
    Ok(EpsilonMoments {
        mean_eps: s1 / n,
        mean_eps2: s2 / n,
    })
}

/// `E[ε] = 0`, `E[ε²] = (E[r] − E[r²])/m`.
pub fn epsilon_moments(mean_r: f64, mean_r2: f64, m: u64) -> Result<EpsilonMoments> {
    if m == 0 {
        return Err(invalid("m must be at least 1"));
    }
    check_moment_order(mean_r, mean_r2)?;
    Ok(EpsilonMoments {
        mean_eps: 0.0,
        mean_eps2: (mean_r - mean_r2) / m as f64,
    })
}

fn check_moment_order(mean_r: f64, mean_r2: f64) -> Result<()> {
    let ok = mean_r.is_finite()
        && mean_r2.is_finite()
        && 0.0 <= mean_r2
        && mean_r2 <= mean_r
        && mean_r <= 1.0
        // Jensen, with slack for rounding.
        && mean_r * mean_r <= mean_r2 + 1e-12;
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidMoments(format!(
            "E[r] = {mean_r}, E[r^2] = {mean_r2} are not moments of a variable in [0, 1]"
        )))
    }
}

/// Upper bound on the downward ATE bias: |β2|/(m − 1).
pub fn ate_bias_bound(beta2: f64, m: u64) -> Result<f64> {
    if m < 2 {
        return Err(invalid("the bias bound needs m >= 2"));
    }
    if !beta2.is_finite() {
        return Err(invalid("non-finite beta2"));
    }
    Ok(beta2.abs() / (m - 1) as f64)
}

/// Expected downward bias ρ − E[ρ̂′] = β2·E[ε²]·E[r]/(E[r²] + E[ε²]) with
/// E[ε²] from [`epsilon_moments`].
pub fn expected_ate_bias(beta2: f64, mean_r: f64, mean_r2: f64, m: u64) -> Result<f64> {
    let q = epsilon_moments(mean_r, mean_r2, m)?.mean_eps2;
    let denom = mean_r2 + q;
    if !(denom > 0.0) {
        return Err(Error::NoTriggers);
    }
    Ok(beta2 * q * mean_r / denom)
}

/// Upper bound on σ²(ρ̂′) − σ²(ρ̂), in population (un-scaled by N) form:
/// `(1/m)·[(β1 + β2/2)² + β2²/4]`.
pub fn variance_gap_bound(beta1: f64, beta2: f64, m: u64) -> Result<f64> {
    if m == 0 {
        return Err(invalid("m must be at least 1"));
    }
    if !(beta1.is_finite() && beta2.is_finite()) {
        return Err(invalid("non-finite coefficient"));
    }
    Ok(((beta1 + 0.5 * beta2).powi(2) + 0.25 * beta2 * beta2) / m as f64)
}

/// σ²(ρ̂)/σ²(α̂1) = E[r]²/(h·E[r²]) where h ≥ 1 is the ratio of baseline to
/// trigger-design residual variance.
pub fn variance_ratio(mean_r: f64, mean_r2: f64, h: f64) -> Result<f64> {
    if !(h >= 1.0 && h.is_finite()) {
        return Err(invalid(format!("h must be >= 1, got {h}")));
    }
    if mean_r2 == 0.0 {
        return Err(Error::NoTriggers);
    }
    check_moment_order(mean_r, mean_r2)?;
    Ok((mean_r * mean_r / (h * mean_r2)).min(1.0 / h))
}
