//! Domain types and the synthetic data-generating process.
//!
//! A unit (a product, in a product-randomized experiment) receives an
//! assignment and a stream of observations. Observation `j` of unit `i` is
//!
//! ```text
//! y_ij = β0 + β1·r_ij + β2·T_i·r_ij + η_ij,   r_ij ~ Bernoulli(p_i)
//! ```
//!
//! and the unit row used by every estimator is the per-unit average:
//! `y_i = mean_j y_ij`, `r_i = mean_j r_ij`.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_distr::{Binomial, Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::seed::{self, TAG_ASSIGN, TAG_UNIT};

/// Hard cap on observations per unit.
pub const DEFAULT_OBS_CAP: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Assignment {
    Control,
    Treatment,
}

impl Assignment {
    pub fn from_flag(flag: u8) -> Option<Self> {
        match flag {
            0 => Some(Assignment::Control),
            1 => Some(Assignment::Treatment),
            _ => None,
        }
    }

    pub fn flag(self) -> u8 {
        match self {
            Assignment::Control => 0,
            Assignment::Treatment => 1,
        }
    }

    /// 0.0 or 1.0, for use as a regressor.
    #[inline]
    pub fn indicator(self) -> f64 {
        f64::from(self.flag())
    }

    pub fn is_treatment(self) -> bool {
        self == Assignment::Treatment
    }
}

/// Which trigger-intensity column an estimator reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntensitySource {
    True,
    Estimated,
}

impl IntensitySource {
    pub fn field_name(self) -> &'static str {
        match self {
            IntensitySource::True => "trigger_intensity",
            IntensitySource::Estimated => "estimated_trigger_intensity",
        }
    }
}

/// One randomized unit after aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitRecord {
    pub unit_id: String,
    pub assignment: Assignment,
    pub n_obs: u64,
    pub mean_response: f64,
    pub true_trigger_intensity: Option<f64>,
    pub estimated_trigger_intensity: Option<f64>,
}

impl UnitRecord {
    pub fn intensity(&self, source: IntensitySource) -> Option<f64> {
        match source {
            IntensitySource::True => self.true_trigger_intensity,
            IntensitySource::Estimated => self.estimated_trigger_intensity,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_obs == 0 {
            return Err(invalid(format!("unit `{}` has n_obs = 0", self.unit_id)));
        }
        if !self.mean_response.is_finite() {
            return Err(invalid(format!(
                "unit `{}` has non-finite mean_response",
                self.unit_id
            )));
        }
        for r in [self.true_trigger_intensity, self.estimated_trigger_intensity]
            .into_iter()
            .flatten()
        {
            if !(0.0..=1.0).contains(&r) {
                return Err(invalid(format!(
                    "unit `{}` has trigger intensity {r} outside [0, 1]",
                    self.unit_id
                )));
            }
        }
        Ok(())
    }
}

/// A validated collection of unit records with unique ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    units: Vec<UnitRecord>,
}

impl Dataset {
    pub fn new(units: Vec<UnitRecord>) -> Result<Self> {
        let mut seen = HashMap::with_capacity(units.len());
        for u in &units {
            u.validate()?;
            if seen.insert(u.unit_id.as_str(), ()).is_some() {
                return Err(Error::DuplicateUnit(u.unit_id.clone()));
            }
        }
        Ok(Dataset { units })
    }

    pub fn units(&self) -> &[UnitRecord] {
        &self.units
    }

    pub fn into_units(self) -> Vec<UnitRecord> {
        self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    /// (control, treatment) unit counts.
    pub fn arm_counts(&self) -> (usize, usize) {
        let treated = self
            .units
            .iter()
            .filter(|u| u.assignment.is_treatment())
            .count();
        (self.units.len() - treated, treated)
    }

    /// True when every unit carries the given intensity field.
    pub fn has_intensity(&self, source: IntensitySource) -> bool {
        !self.units.is_empty() && self.units.iter().all(|u| u.intensity(source).is_some())
    }

    /// The intensity column, or `MissingTriggerData` naming the first gap.
    pub fn intensities(&self, source: IntensitySource) -> Result<Vec<f64>> {
        self.units
            .iter()
            .map(|u| {
                u.intensity(source).ok_or_else(|| Error::MissingTriggerData {
                    unit_id: u.unit_id.clone(),
                    field: source.field_name(),
                })
            })
            .collect()
    }

    /// Replace the estimated intensity column. `values` is in unit order.
    pub fn with_estimated_intensities(mut self, values: &[f64]) -> Result<Self> {
        if values.len() != self.units.len() {
            return Err(invalid("estimated intensity count does not match unit count"));
        }
        for (u, &v) in self.units.iter_mut().zip(values) {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(format!("estimated intensity {v} outside [0, 1]")));
            }
            u.estimated_trigger_intensity = Some(v);
        }
        Ok(self)
    }
}

/// One raw observation.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRecord {
    pub unit_id: String,
    pub response: f64,
    pub trigger_status: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl ModelParams {
    pub fn new(beta0: f64, beta1: f64, beta2: f64) -> Self {
        ModelParams { beta0, beta1, beta2 }
    }

    /// Expected response of one observation.
    #[inline]
    pub fn mean_response(&self, assignment: Assignment, trigger: f64) -> f64 {
        self.beta0 + self.beta1 * trigger + self.beta2 * assignment.indicator() * trigger
    }

    fn validate(&self) -> Result<()> {
        if [self.beta0, self.beta1, self.beta2].iter().all(|b| b.is_finite()) {
            Ok(())
        } else {
            Err(invalid("model parameters must be finite"))
        }
    }
}

/// Per-unit noise standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    Homogeneous { sigma: f64 },
    /// Each unit draws its sigma uniformly from `[lower, upper]`.
    Heterogeneous { lower: f64, upper: f64 },
}

impl NoiseSpec {
    /// Heterogeneous noise centred on `sigma`: uniform on `[0.5σ, 1.5σ]`.
    pub fn heterogeneous_around(sigma: f64) -> Self {
        NoiseSpec::Heterogeneous {
            lower: 0.5 * sigma,
            upper: 1.5 * sigma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseSpec::Homogeneous { sigma } if sigma.is_finite() && sigma > 0.0 => Ok(()),
            NoiseSpec::Heterogeneous { lower, upper }
                if lower.is_finite() && upper.is_finite() && lower > 0.0 && upper >= lower =>
            {
                Ok(())
            }
            _ => Err(invalid(format!("noise spec {self:?} must have positive sigma"))),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        match *self {
            NoiseSpec::Homogeneous { sigma } => NoiseSpec::Homogeneous {
                sigma: sigma * factor,
            },
            NoiseSpec::Heterogeneous { lower, upper } => NoiseSpec::Heterogeneous {
                lower: lower * factor,
                upper: upper * factor,
            },
        }
    }

    /// E[σ_i²] over units.
    pub fn mean_variance(&self) -> f64 {
        match *self {
            NoiseSpec::Homogeneous { sigma } => sigma * sigma,
            NoiseSpec::Heterogeneous { lower, upper } => {
                (lower * lower + lower * upper + upper * upper) / 3.0
            }
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            NoiseSpec::Homogeneous { sigma } => sigma,
            NoiseSpec::Heterogeneous { lower, upper } => {
                lower + (upper - lower) * rng.random::<f64>()
            }
        }
    }
}

/// Whether the noise sigma describes one observation or the unit average.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScope {
    /// `sigma` is the standard deviation of the unit-level noise η_i, so the
    /// aggregated regression sees residual variance σ² regardless of n_obs.
    #[default]
    UnitMean,
    /// `sigma` is the standard deviation of each η_ij; η_i has variance σ²/n_i.
    Observation,
}

/// Distribution of the per-unit trigger probability p_i over [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TriggerLaw {
    Constant { value: f64 },
    /// `high` with probability `p_high`, otherwise `low`.
    TwoPoint { low: f64, high: f64, p_high: f64 },
    Uniform { low: f64, high: f64 },
    /// One value per unit, in unit order.
    Explicit { values: Vec<f64> },
}

impl TriggerLaw {
    pub fn validate(&self, n_units: usize) -> Result<()> {
        let in_unit = |x: f64| (0.0..=1.0).contains(&x);
        let ok = match self {
            TriggerLaw::Constant { value } => in_unit(*value),
            TriggerLaw::TwoPoint { low, high, p_high } => {
                in_unit(*low) && in_unit(*high) && in_unit(*p_high)
            }
            TriggerLaw::Uniform { low, high } => in_unit(*low) && in_unit(*high) && low <= high,
            TriggerLaw::Explicit { values } => {
                if values.len() != n_units {
                    return Err(invalid(format!(
                        "explicit trigger law has {} values for {n_units} units",
                        values.len()
                    )));
                }
                values.iter().all(|&v| in_unit(v))
            }
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("trigger law {self:?} leaves [0, 1]")))
        }
    }

    /// E[p].
    pub fn mean(&self) -> f64 {
        match self {
            TriggerLaw::Constant { value } => *value,
            TriggerLaw::TwoPoint { low, high, p_high } => low + p_high * (high - low),
            TriggerLaw::Uniform { low, high } => 0.5 * (low + high),
            TriggerLaw::Explicit { values } => values.iter().sum::<f64>() / values.len() as f64,
        }
    }

    /// E[p²].
    pub fn second_moment(&self) -> f64 {
        match self {
            TriggerLaw::Constant { value } => value * value,
            TriggerLaw::TwoPoint { low, high, p_high } => {
                (1.0 - p_high) * low * low + p_high * high * high
            }
            TriggerLaw::Uniform { low, high } => (low * low + low * high + high * high) / 3.0,
            TriggerLaw::Explicit { values } => {
                values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64
            }
        }
    }

    pub fn variance(&self) -> f64 {
        (self.second_moment() - self.mean().powi(2)).max(0.0)
    }

    /// Multiply the support by `factor`; used by intensity sweeps.
    pub fn scaled(&self, factor: f64) -> Self {
        match self {
            TriggerLaw::Constant { value } => TriggerLaw::Constant {
                value: value * factor,
            },
            TriggerLaw::TwoPoint { low, high, p_high } => TriggerLaw::TwoPoint {
                low: low * factor,
                high: high * factor,
                p_high: *p_high,
            },
            TriggerLaw::Uniform { low, high } => TriggerLaw::Uniform {
                low: low * factor,
                high: high * factor,
            },
            TriggerLaw::Explicit { values } => TriggerLaw::Explicit {
                values: values.iter().map(|v| v * factor).collect(),
            },
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R, index: usize) -> f64 {
        match self {
            TriggerLaw::Constant { value } => *value,
            TriggerLaw::TwoPoint { low, high, p_high } => {
                if rng.random::<f64>() < *p_high {
                    *high
                } else {
                    *low
                }
            }
            TriggerLaw::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
            TriggerLaw::Explicit { values } => values[index],
        }
    }
}

/// Distribution of observation counts per unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObsCountLaw {
    Constant { n: u64 },
    /// Uniform on the integers `low..=high`.
    Uniform { low: u64, high: u64 },
}

impl Default for ObsCountLaw {
    fn default() -> Self {
        ObsCountLaw::Constant { n: 1000 }
    }
}

impl ObsCountLaw {
    fn validate(&self) -> Result<()> {
        match *self {
            ObsCountLaw::Constant { n } if n >= 1 => Ok(()),
            ObsCountLaw::Uniform { low, high } if low >= 1 && high >= low => Ok(()),
            _ => Err(invalid(format!("observation count law {self:?} must be >= 1"))),
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match *self {
            ObsCountLaw::Constant { n } => n,
            ObsCountLaw::Uniform { low, high } => rng.random_range(low..=high),
        }
    }

    /// E[1/n] after capping at `cap`.
    fn mean_reciprocal(&self, cap: u64) -> f64 {
        match *self {
            ObsCountLaw::Constant { n } => 1.0 / n.min(cap) as f64,
            ObsCountLaw::Uniform { low, high } => {
                let total: f64 = (low..=high).map(|n| 1.0 / n.min(cap) as f64).sum();
                total / (high - low + 1) as f64
            }
        }
    }
}

fn default_obs_cap() -> u64 {
    DEFAULT_OBS_CAP
}

/// Everything needed to synthesize one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_units: usize,
    pub params: ModelParams,
    pub trigger_law: TriggerLaw,
    #[serde(default)]
    pub obs_count_law: ObsCountLaw,
    #[serde(default = "default_obs_cap")]
    pub obs_cap: u64,
    pub noise: NoiseSpec,
    #[serde(default)]
    pub noise_scope: NoiseScope,
    #[serde(default)]
    pub seed: u64,
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_units < 2 {
            return Err(invalid("n_units must be at least 2"));
        }
        if self.obs_cap == 0 {
            return Err(invalid("obs_cap must be positive"));
        }
        self.params.validate()?;
        self.trigger_law.validate(self.n_units)?;
        self.obs_count_law.validate()?;
        self.noise.validate()
    }

    /// True ATE ρ = β2·E[p] under the configured law.
    pub fn true_ate(&self) -> f64 {
        self.params.beta2 * self.trigger_law.mean()
    }

    /// E[σ²(η_i)], the variance of the unit-level noise.
    pub fn unit_noise_variance(&self) -> f64 {
        let base = self.noise.mean_variance();
        match self.noise_scope {
            NoiseScope::UnitMean => base,
            NoiseScope::Observation => base * self.obs_count_law.mean_reciprocal(self.obs_cap),
        }
    }

    pub fn unit_id(index: usize) -> String {
        format!("u{index:06}")
    }

    fn unit_ids(&self) -> Vec<String> {
        (0..self.n_units).map(Self::unit_id).collect()
    }
}

/// Assign each unit to treatment with probability 1/2. The draw for a unit
/// depends only on `(seed, unit_id)`.
pub fn assign_randomly<S: AsRef<str>>(unit_ids: &[S], seed: u64) -> Result<Vec<Assignment>> {
    if unit_ids.is_empty() {
        return Err(invalid("cannot assign an empty list of units"));
    }
    Ok(unit_ids
        .iter()
        .map(|id| {
            let mut rng = seed::unit_stream(seed, TAG_ASSIGN, id.as_ref());
            if rng.random_bool(0.5) {
                Assignment::Treatment
            } else {
                Assignment::Control
            }
        })
        .collect())
}

/// A unit before its observations exist.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitSpec {
    pub unit_id: String,
    pub assignment: Assignment,
    pub n_obs: u64,
    /// Per-observation trigger probability.
    pub trigger_intensity: f64,
}

/// Draw `n_obs` observations for one unit; `sigma` is the per-observation
/// noise standard deviation.
pub fn generate_observations<R: Rng + ?Sized>(
    unit: &UnitSpec,
    params: &ModelParams,
    sigma: f64,
    rng: &mut R,
) -> Result<Vec<ObservationRecord>> {
    let r = unit.trigger_intensity;
    if !(0.0..=1.0).contains(&r) {
        return Err(invalid(format!("trigger intensity {r} outside [0, 1]")));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(invalid(format!("noise sigma must be positive, got {sigma}")));
    }
    if unit.n_obs == 0 {
        return Err(invalid("n_obs must be positive"));
    }
    let noise = Normal::new(0.0, sigma).map_err(|e| invalid(e.to_string()))?;
    Ok((0..unit.n_obs)
        .map(|_| {
            let triggered = rng.random_bool(r);
            let response = params.mean_response(unit.assignment, f64::from(u8::from(triggered)))
                + noise.sample(rng);
            ObservationRecord {
                unit_id: unit.unit_id.clone(),
                response,
                trigger_status: Some(triggered),
            }
        })
        .collect())
}

/// Collapse observations to one row per unit, in order of first appearance.
pub fn aggregate_to_units(
    observations: &[ObservationRecord],
    assignments: &BTreeMap<String, Assignment>,
) -> Result<Dataset> {
    struct Acc {
        n: u64,
        sum_y: f64,
        triggers: u64,
        labelled: u64,
    }
    let mut order: Vec<&str> = Vec::new();
    let mut acc: HashMap<&str, Acc> = HashMap::new();
    for obs in observations {
        if !assignments.contains_key(&obs.unit_id) {
            return Err(Error::MissingAssignment(obs.unit_id.clone()));
        }
        let a = acc.entry(obs.unit_id.as_str()).or_insert_with(|| {
            order.push(obs.unit_id.as_str());
            Acc {
                n: 0,
                sum_y: 0.0,
                triggers: 0,
                labelled: 0,
            }
        });
        a.n += 1;
        a.sum_y += obs.response;
        if let Some(t) = obs.trigger_status {
            a.labelled += 1;
            a.triggers += u64::from(t);
        }
    }
    let units = order
        .into_iter()
        .map(|id| {
            let a = &acc[id];
            UnitRecord {
                unit_id: id.to_string(),
                assignment: assignments[id],
                n_obs: a.n,
                mean_response: a.sum_y / a.n as f64,
                true_trigger_intensity: (a.labelled == a.n)
                    .then(|| a.triggers as f64 / a.n as f64),
                estimated_trigger_intensity: None,
            }
        })
        .collect();
    Dataset::new(units)
}

/// A synthesized experiment at the unit level, with the trigger counts the
/// samplers need.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub dataset: Dataset,
    /// Number of triggered observations per unit, in unit order.
    pub trigger_counts: Vec<u64>,
}

struct UnitDraw {
    probability: f64,
    n_obs: u64,
    sigma: f64,
}

fn draw_unit_shape<R: Rng + ?Sized>(cfg: &GenConfig, index: usize, rng: &mut R) -> UnitDraw {
    let probability = cfg.trigger_law.draw(rng, index);
    let n_obs = cfg.obs_count_law.draw(rng).min(cfg.obs_cap);
    let sigma = cfg.noise.draw(rng);
    UnitDraw {
        probability,
        n_obs,
        sigma,
    }
}

/// Generate the unit-level dataset directly.
///
/// Equal in distribution to [`generate_observation_population`] followed by
/// [`aggregate_to_units`]: the trigger count is Binomial(n_i, p_i) and the
/// averaged noise is Normal with the matching variance, so nothing of size
/// n_i is materialized.
pub fn generate_population(cfg: &GenConfig) -> Result<Population> {
    cfg.validate()?;
    let ids = cfg.unit_ids();
    let assignments = assign_randomly(&ids, cfg.seed)?;
    let mut units = Vec::with_capacity(cfg.n_units);
    let mut counts = Vec::with_capacity(cfg.n_units);
    for (index, (id, assignment)) in ids.into_iter().zip(assignments).enumerate() {
        let mut rng = seed::unit_stream(cfg.seed, TAG_UNIT, &id);
        let shape = draw_unit_shape(cfg, index, &mut rng);
        let k = Binomial::new(shape.n_obs, shape.probability)
            .map_err(|e| invalid(e.to_string()))?
            .sample(&mut rng);
        let unit_sd = match cfg.noise_scope {
            NoiseScope::UnitMean => shape.sigma,
            NoiseScope::Observation => shape.sigma / (shape.n_obs as f64).sqrt(),
        };
        let eta = Normal::new(0.0, unit_sd)
            .map_err(|e| invalid(e.to_string()))?
            .sample(&mut rng);
        let r = k as f64 / shape.n_obs as f64;
        units.push(UnitRecord {
            unit_id: id,
            assignment,
            n_obs: shape.n_obs,
            mean_response: cfg.params.mean_response(assignment, r) + eta,
            true_trigger_intensity: Some(r),
            estimated_trigger_intensity: None,
        });
        counts.push(k);
    }
    Ok(Population {
        dataset: Dataset::new(units)?,
        trigger_counts: counts,
    })
}

/// Generate every observation of every unit, plus the assignment map.
/// Units are generated in parallel; output order is unit order.
pub fn generate_observation_population(
    cfg: &GenConfig,
) -> Result<(Vec<ObservationRecord>, BTreeMap<String, Assignment>)> {
    cfg.validate()?;
    let ids = cfg.unit_ids();
    let assignments = assign_randomly(&ids, cfg.seed)?;
    let per_unit: Vec<Vec<ObservationRecord>> = ids
        .par_iter()
        .zip(assignments.par_iter())
        .enumerate()
        .map(|(index, (id, &assignment))| {
            let mut rng = seed::unit_stream(cfg.seed, TAG_UNIT, id);
            let shape = draw_unit_shape(cfg, index, &mut rng);
            let obs_sd = match cfg.noise_scope {
                NoiseScope::UnitMean => shape.sigma * (shape.n_obs as f64).sqrt(),
                NoiseScope::Observation => shape.sigma,
            };
            let spec = UnitSpec {
                unit_id: id.clone(),
                assignment,
                n_obs: shape.n_obs,
                trigger_intensity: shape.probability,
            };
            generate_observations(&spec, &cfg.params, obs_sd, &mut rng)
        })
        .collect::<Result<_>>()?;
    let map = ids.into_iter().zip(assignments).collect();
    Ok((per_unit.into_iter().flatten().collect(), map))
}
