//! Closed-form OLS fits for the three evaluation methods.
//!
//! * Baseline: `y = α0 + α1·T + η`, ATE = α̂1.
//! * Full knowledge: `y = β0 + β1·r + β2·T·r + η` on the true intensities,
//!   ATE ρ̂ = β̂2·E[r].
//! * Partial knowledge: the same regression on sampled intensities r′,
//!   ATE ρ̂′ = β̂2′·E[r′].
//!
//! Everything is driven by the normalized moment matrix `XᵀX / N`, built from
//! the realized assignments. When the realized design is exactly balanced the
//! textbook closed-form inverses are used directly; otherwise the matrix is
//! inverted by cofactors. Standard errors are per-estimate:
//! `var(β̂_k) = σ̂²·[(XᵀX/N)⁻¹]_kk / N`, with σ̂² = SSR / (N − p).

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{invalid, Error, Result};
use crate::model::{Assignment, Dataset, IntensitySource, ModelParams};

pub type Mat2 = [[f64; 2]; 2];
pub type Mat3 = [[f64; 3]; 3];

/// Tolerance on |E[T] − 1/2| (and the matching cross moments) for the
/// balanced fast path.
pub const BALANCE_TOL: f64 = 1e-12;

/// σ²(r) at or below this fraction of E[r²] counts as a constant column.
const COLLINEAR_REL_TOL: f64 = 1e-12;

/// Relative determinant threshold for declaring a moment matrix singular.
const SINGULAR_REL_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Baseline,
    FullKnowledge,
    PartialKnowledge,
}

impl Method {
    pub const ALL: [Method; 3] = [
        Method::Baseline,
        Method::FullKnowledge,
        Method::PartialKnowledge,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::FullKnowledge => "full_knowledge",
            Method::PartialKnowledge => "partial_knowledge",
        }
    }

    /// Accepts the canonical names plus the short forms `full` / `partial`.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Method::Baseline),
            "full" | "full_knowledge" => Ok(Method::FullKnowledge),
            "partial" | "partial_knowledge" => Ok(Method::PartialKnowledge),
            other => Err(invalid(format!("unknown method `{other}`"))),
        }
    }

    pub fn intensity_source(self) -> Option<IntensitySource> {
        match self {
            Method::Baseline => None,
            Method::FullKnowledge => Some(IntensitySource::True),
            Method::PartialKnowledge => Some(IntensitySource::Estimated),
        }
    }

    /// Parameter count of the full design.
    pub fn n_params(self) -> usize {
        match self {
            Method::Baseline => 2,
            _ => 3,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Sample moments of (T, r, y). All expectations are plain averages over units.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSet {
    pub n_units: usize,
    /// E[T]
    pub mean_t: f64,
    /// E[r]
    pub mean_r: f64,
    /// E[r²]
    pub mean_r2: f64,
    /// σ²(r), computed in two passes.
    pub var_r: f64,
    /// E[T·r]
    pub mean_tr: f64,
    /// E[T·r²]
    pub mean_tr2: f64,
    /// E[y]
    pub mean_y: f64,
    /// E[T·y]
    pub mean_ty: f64,
    /// E[y·r]
    pub mean_yr: f64,
    /// E[T·y·r]
    pub mean_tyr: f64,
    /// [E[y | T=0], E[y | T=1]]
    pub mean_y_given: [f64; 2],
    /// [E[y·r | T=0], E[y·r | T=1]]
    pub mean_yr_given: [f64; 2],
}

impl MomentSet {
    /// Moments of parallel columns. Both arms must be present.
    pub fn from_columns(t: &[Assignment], y: &[f64], r: &[f64]) -> Result<Self> {
        let n = t.len();
        if y.len() != n || r.len() != n {
            return Err(invalid("moment columns have different lengths"));
        }
        let mut count = [0usize; 2];
        let mut sum_y = [0.0f64; 2];
        let mut sum_yr = [0.0f64; 2];
        let (mut s_r, mut s_r2, mut s_tr, mut s_tr2) = (0.0, 0.0, 0.0, 0.0);
        for ((&ti, &yi), &ri) in t.iter().zip(y).zip(r) {
            let arm = usize::from(ti.flag());
            count[arm] += 1;
            sum_y[arm] += yi;
            sum_yr[arm] += yi * ri;
            s_r += ri;
            s_r2 += ri * ri;
            if ti.is_treatment() {
                s_tr += ri;
                s_tr2 += ri * ri;
            }
        }
        if count[0] == 0 || count[1] == 0 {
            return Err(Error::DegenerateDesign(format!(
                "need both arms, got {} control and {} treatment units",
                count[0], count[1]
            )));
        }
        let nf = n as f64;
        let mean_r = s_r / nf;
        let var_r = r.iter().map(|&ri| (ri - mean_r).powi(2)).sum::<f64>() / nf;
        Ok(MomentSet {
            n_units: n,
            mean_t: count[1] as f64 / nf,
            mean_r,
            mean_r2: s_r2 / nf,
            var_r,
            mean_tr: s_tr / nf,
            mean_tr2: s_tr2 / nf,
            mean_y: (sum_y[0] + sum_y[1]) / nf,
            mean_ty: sum_y[1] / nf,
            mean_yr: (sum_yr[0] + sum_yr[1]) / nf,
            mean_tyr: sum_yr[1] / nf,
            mean_y_given: [sum_y[0] / count[0] as f64, sum_y[1] / count[1] as f64],
            mean_yr_given: [sum_yr[0] / count[0] as f64, sum_yr[1] / count[1] as f64],
        })
    }

    /// Design moments of an exactly balanced experiment with r independent of
    /// T: E[T] = 1/2, E[T·r] = E[r]/2, E[T·r²] = E[r²]/2. Response moments are 0.
    pub fn balanced(mean_r: f64, mean_r2: f64) -> Self {
        MomentSet {
            n_units: 0,
            mean_t: 0.5,
            mean_r,
            mean_r2,
            var_r: mean_r2 - mean_r * mean_r,
            mean_tr: 0.5 * mean_r,
            mean_tr2: 0.5 * mean_r2,
            mean_y: 0.0,
            mean_ty: 0.0,
            mean_yr: 0.0,
            mean_tyr: 0.0,
            mean_y_given: [0.0; 2],
            mean_yr_given: [0.0; 2],
        }
    }

    /// `XᵀX/N` for the design (1, T).
    pub fn baseline_matrix(&self) -> Mat2 {
        [[1.0, self.mean_t], [self.mean_t, self.mean_t]]
    }

    /// `XᵀX/N` for the design (1, r, T·r).
    pub fn trigger_matrix(&self) -> Mat3 {
        [
            [1.0, self.mean_r, self.mean_tr],
            [self.mean_r, self.mean_r2, self.mean_tr2],
            [self.mean_tr, self.mean_tr2, self.mean_tr2],
        ]
    }

    fn is_balanced_baseline(&self) -> bool {
        (self.mean_t - 0.5).abs() < BALANCE_TOL
    }

    fn is_balanced_trigger(&self) -> bool {
        self.is_balanced_baseline()
            && (self.mean_tr - 0.5 * self.mean_r).abs() < BALANCE_TOL
            && (self.mean_tr2 - 0.5 * self.mean_r2).abs() < BALANCE_TOL
    }

    fn intensity_is_constant(&self) -> bool {
        self.var_r <= COLLINEAR_REL_TOL * self.mean_r2
    }
}

/// Inverse of `[[1, a], [a, d]]`; exact closed form when a = d = 1/2.
fn invert_design_2x2(a: f64, d: f64) -> Result<Mat2> {
    if (a - 0.5).abs() < BALANCE_TOL && (d - 0.5).abs() < BALANCE_TOL {
        return Ok([[2.0, -2.0], [-2.0, 4.0]]);
    }
    let det = d - a * a;
    let scale = (1.0 + a * a).sqrt() * (a * a + d * d).sqrt();
    if !(det.abs() > SINGULAR_REL_TOL * scale) {
        return Err(Error::DegenerateDesign(format!(
            "2x2 moment matrix is singular (det = {det:e})"
        )));
    }
    Ok([[d / det, -a / det], [-a / det, 1.0 / det]])
}

/// `(XᵀX/N)⁻¹` for the baseline design (1, T).
///
/// Balanced assignment gives `4·[[1/2, −1/2], [−1/2, 1]]`.
pub fn closed_form_inverse_2x2(moments: &MomentSet) -> Result<Mat2> {
    invert_design_2x2(moments.mean_t, moments.mean_t)
}

/// `(XᵀX/N)⁻¹` for the trigger design (1, r, T·r).
///
/// With m = E[r], s = E[r²], v = σ²(r) and balanced assignment this is
/// `[[s/v, −m/v, 0], [−m/v, 1/v + 1/s, −2/s], [0, −2/s, 4/s]]`. A constant
/// intensity column (v = 0) is collinear with the intercept and is reported
/// as `DegenerateDesign`; the fitting routines switch to the reduced design
/// before getting here.
pub fn closed_form_inverse_3x3(moments: &MomentSet) -> Result<Mat3> {
    let m = moments.mean_r;
    let s = moments.mean_r2;
    if !(s > 0.0) {
        return Err(Error::DegenerateDesign("E[r^2] = 0".into()));
    }
    if moments.intensity_is_constant() {
        return Err(Error::DegenerateDesign(
            "trigger intensity is constant (sigma^2(r) = 0)".into(),
        ));
    }
    if moments.is_balanced_trigger() {
        let v = moments.var_r;
        return Ok([
            [s / v, -m / v, 0.0],
            [-m / v, 1.0 / v + 1.0 / s, -2.0 / s],
            [0.0, -2.0 / s, 4.0 / s],
        ]);
    }
    invert_symmetric_3x3(&moments.trigger_matrix())
}

fn invert_symmetric_3x3(a: &Mat3) -> Result<Mat3> {
    let c00 = a[1][1] * a[2][2] - a[1][2] * a[2][1];
    let c01 = a[1][2] * a[2][0] - a[1][0] * a[2][2];
    let c02 = a[1][0] * a[2][1] - a[1][1] * a[2][0];
    let det = a[0][0] * c00 + a[0][1] * c01 + a[0][2] * c02;
    let hadamard: f64 = a
        .iter()
        .map(|row| row.iter().map(|x| x * x).sum::<f64>().sqrt())
        .product();
    if !(det.abs() > SINGULAR_REL_TOL * hadamard) {
        return Err(Error::DegenerateDesign(format!(
            "3x3 moment matrix is singular (det = {det:e})"
        )));
    }
    let c11 = a[0][0] * a[2][2] - a[0][2] * a[2][0];
    let c12 = a[0][1] * a[2][0] - a[0][0] * a[2][1];
    let c22 = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let inv = 1.0 / det;
    Ok([
        [c00 * inv, c01 * inv, c02 * inv],
        [c01 * inv, c11 * inv, c12 * inv],
        [c02 * inv, c12 * inv, c22 * inv],
    ])
}

/// Coefficient vector written directly in moments, valid only for a balanced
/// design: `β̂ = [s/v·E[y] − m/v·E[ry], −m/v·E[y] + E[ry]/v − Δ/(2s), Δ/s]`
/// with `Δ = E[yr | T=1] − E[yr | T=0]`.
pub fn balanced_trigger_coefficients(moments: &MomentSet) -> [f64; 3] {
    let (m, s, v) = (moments.mean_r, moments.mean_r2, moments.var_r);
    let delta = moments.mean_yr_given[1] - moments.mean_yr_given[0];
    [
        s / v * moments.mean_y - m / v * moments.mean_yr,
        -m / v * moments.mean_y + moments.mean_yr / v - delta / (2.0 * s),
        delta / s,
    ]
}

/// Output of one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub method: Method,
    /// (α̂0, α̂1) for the baseline, (β̂0, β̂1, β̂2) otherwise. In the reduced
    /// design β̂1 is reported as 0 and β̂0 absorbs β1·r.
    pub coefficients: Vec<f64>,
    pub ate: f64,
    pub residual_variance: f64,
    pub se_ate: f64,
    #[serde(with = "crate::io::nonfinite")]
    pub t_value: f64,
    pub ci: (f64, f64),
    pub ci_level: f64,
    pub dof: u64,
    pub n_units: u64,
    /// True when a constant intensity column forced the (1, T·r) design.
    pub reduced_design: bool,
}

impl FitResult {
    /// Two-sided interval at any level, rebuilt from the SE and dof.
    pub fn interval_at(&self, level: f64) -> Result<(f64, f64)> {
        if level == self.ci_level {
            return Ok(self.ci);
        }
        let half = t_critical(level, self.dof)? * self.se_ate;
        Ok((self.ate - half, self.ate + half))
    }

    /// |t| above the two-sided critical value at `level` with this fit's dof.
    pub fn is_significant(&self, level: f64) -> Result<bool> {
        Ok(self.t_value.abs() > t_critical(level, self.dof)?)
    }
}

/// Two-sided Student-t critical value.
pub fn t_critical(level: f64, dof: u64) -> Result<f64> {
    check_level(level)?;
    if dof == 0 {
        return Err(Error::InsufficientData("zero residual degrees of freedom".into()));
    }
    let dist = StudentsT::new(0.0, 1.0, dof as f64).map_err(|e| invalid(e.to_string()))?;
    Ok(dist.inverse_cdf(0.5 + 0.5 * level))
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("confidence level {level} not in (0, 1)")))
    }
}

fn t_stat(ate: f64, se: f64) -> f64 {
    if se > 0.0 {
        ate / se
    } else if ate == 0.0 {
        0.0
    } else {
        f64::INFINITY.copysign(ate)
    }
}

fn check_arms(dataset: &Dataset) -> Result<()> {
    let (control, treated) = dataset.arm_counts();
    if control == 0 || treated == 0 {
        return Err(Error::DegenerateDesign(format!(
            "need both arms, got {control} control and {treated} treatment units"
        )));
    }
    Ok(())
}

struct Columns {
    t: Vec<Assignment>,
    y: Vec<f64>,
}

fn columns(dataset: &Dataset) -> Columns {
    Columns {
        t: dataset.units().iter().map(|u| u.assignment).collect(),
        y: dataset.units().iter().map(|u| u.mean_response).collect(),
    }
}

fn sum_squared_residuals(cols: &Columns, r: Option<&[f64]>, coefficients: &[f64]) -> f64 {
    match r {
        None => cols
            .t
            .iter()
            .zip(&cols.y)
            .map(|(t, y)| {
                let e = y - coefficients[0] - coefficients[1] * t.indicator();
                e * e
            })
            .sum(),
        Some(r) => cols
            .t
            .iter()
            .zip(&cols.y)
            .zip(r)
            .map(|((t, y), ri)| {
                let e = y
                    - coefficients[0]
                    - coefficients[1] * ri
                    - coefficients[2] * t.indicator() * ri;
                e * e
            })
            .sum(),
    }
}

fn residual_dof(n: usize, p: usize) -> Result<u64> {
    if n <= p {
        return Err(Error::InsufficientData(format!(
            "{n} units cannot support {p} parameters"
        )));
    }
    Ok((n - p) as u64)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    method: Method,
    coefficients: Vec<f64>,
    ate: f64,
    residual_variance: f64,
    se_ate: f64,
    dof: u64,
    n_units: usize,
    ci_level: f64,
    reduced_design: bool,
) -> Result<FitResult> {
    let half = t_critical(ci_level, dof)? * se_ate;
    Ok(FitResult {
        method,
        coefficients,
        ate,
        residual_variance,
        se_ate,
        t_value: t_stat(ate, se_ate),
        ci: (ate - half, ate + half),
        ci_level,
        dof,
        n_units: n_units as u64,
        reduced_design,
    })
}

/// Difference in means, ignoring trigger information.
pub fn fit_baseline(dataset: &Dataset, ci_level: f64) -> Result<FitResult> {
    check_level(ci_level)?;
    check_arms(dataset)?;
    let cols = columns(dataset);
    let ones = vec![1.0; cols.t.len()];
    let moments = MomentSet::from_columns(&cols.t, &cols.y, &ones)?;
    let inv = closed_form_inverse_2x2(&moments)?;
    let rhs = [moments.mean_y, moments.mean_ty];
    let alpha = [
        inv[0][0] * rhs[0] + inv[0][1] * rhs[1],
        inv[1][0] * rhs[0] + inv[1][1] * rhs[1],
    ];
    let n = cols.t.len();
    let dof = residual_dof(n, 2)?;
    let sigma2 = sum_squared_residuals(&cols, None, &alpha) / dof as f64;
    let se = (sigma2 * inv[1][1] / n as f64).sqrt();
    finish(
        Method::Baseline,
        alpha.to_vec(),
        alpha[1],
        sigma2,
        se,
        dof,
        n,
        ci_level,
        false,
    )
}

/// Regression on (1, r, T·r) with exact intensities.
pub fn fit_full_knowledge(dataset: &Dataset, ci_level: f64) -> Result<FitResult> {
    fit_trigger(dataset, Method::FullKnowledge, ci_level)
}

/// Regression on (1, r′, T·r′) with sampled intensities.
pub fn fit_partial_knowledge(dataset: &Dataset, ci_level: f64) -> Result<FitResult> {
    fit_trigger(dataset, Method::PartialKnowledge, ci_level)
}

pub fn fit(dataset: &Dataset, method: Method, ci_level: f64) -> Result<FitResult> {
    match method {
        Method::Baseline => fit_baseline(dataset, ci_level),
        _ => fit_trigger(dataset, method, ci_level),
    }
}

fn fit_trigger(dataset: &Dataset, method: Method, ci_level: f64) -> Result<FitResult> {
    check_level(ci_level)?;
    let source = method
        .intensity_source()
        .expect("trigger fits always read an intensity column");
    let r = dataset.intensities(source)?;
    check_arms(dataset)?;
    let cols = columns(dataset);
    let moments = MomentSet::from_columns(&cols.t, &cols.y, &r)?;
    if !(moments.mean_r2 > 0.0) {
        return Err(Error::NoTriggers);
    }
    let n = cols.t.len();

    let (beta, inv_22, p, reduced) = if moments.intensity_is_constant() {
        // Columns 1 and r coincide up to scale; fit (1, T·r) instead.
        let inv = invert_design_2x2(moments.mean_tr, moments.mean_tr2)?;
        let rhs = [moments.mean_y, moments.mean_tyr];
        let c0 = inv[0][0] * rhs[0] + inv[0][1] * rhs[1];
        let c1 = inv[1][0] * rhs[0] + inv[1][1] * rhs[1];
        ([c0, 0.0, c1], inv[1][1], 2, true)
    } else {
        let inv = closed_form_inverse_3x3(&moments)?;
        let rhs = [moments.mean_y, moments.mean_yr, moments.mean_tyr];
        let beta: [f64; 3] =
            std::array::from_fn(|i| (0..3).map(|j| inv[i][j] * rhs[j]).sum::<f64>());
        (beta, inv[2][2], 3, false)
    };

    let dof = residual_dof(n, p)?;
    let sigma2 = sum_squared_residuals(&cols, Some(&r), &beta) / dof as f64;
    let se_beta2 = (sigma2 * inv_22 / n as f64).sqrt();
    let ate = beta[2] * moments.mean_r;
    let se_ate = se_beta2 * moments.mean_r;
    finish(
        method,
        beta.to_vec(),
        ate,
        sigma2,
        se_ate,
        dof,
        n,
        ci_level,
        reduced,
    )
}

/// SSR / (N − p) for given coefficients; p = 2 for the baseline design and 3
/// for the trigger designs.
pub fn residual_variance(dataset: &Dataset, coefficients: &[f64], method: Method) -> Result<f64> {
    let p = method.n_params();
    if coefficients.len() != p {
        return Err(invalid(format!(
            "{method} needs {p} coefficients, got {}",
            coefficients.len()
        )));
    }
    let dof = residual_dof(dataset.len(), p)?;
    let cols = columns(dataset);
    let r = match method.intensity_source() {
        Some(source) => Some(dataset.intensities(source)?),
        None => None,
    };
    Ok(sum_squared_residuals(&cols, r.as_deref(), coefficients) / dof as f64)
}

/// Large-N approximation of the residual variance when the regression uses
/// noisy intensities: `σ²(η) + [(β1 + β2/2)² + β2²/4]·E[ε²]`.
pub fn predicted_partial_residual_variance(
    sigma2_eta: f64,
    params: &ModelParams,
    e_eps2: f64,
) -> Result<f64> {
    let inputs = [sigma2_eta, e_eps2, params.beta1, params.beta2];
    if inputs.iter().any(|x| !x.is_finite()) {
        return Err(invalid("non-finite input"));
    }
    if sigma2_eta < 0.0 || e_eps2 < 0.0 {
        return Err(invalid("variances must be non-negative"));
    }
    Ok(sigma2_eta + error_loading(params) * e_eps2)
}

/// `(β1 + β2/2)² + β2²/4`, the weight of E[ε²] in the residual variance.
pub fn error_loading(params: &ModelParams) -> f64 {
    (params.beta1 + 0.5 * params.beta2).powi(2) + 0.25 * params.beta2 * params.beta2
}
