mod common;

use common::*;
use proptest::prelude::*;
use trigeval::estimators::{
    closed_form_inverse_2x2, closed_form_inverse_3x3, fit, t_critical, Method, MomentSet,
};
use trigeval::model::IntensitySource;
use trigeval::Assignment;

#[test]
fn coefficients_match_normal_equations() {
    for seed in 0..40 {
        let n = 10 + (seed as usize * 37) % 400;
        let ds = random_dataset(seed, n, seed % 4 == 0 && n.is_multiple_of(2));
        let y = responses(&ds);
        for method in Method::ALL {
            let got = fit(&ds, method, 0.95).unwrap();
            let want = ols_oracle(&design(&ds, method), &y);
            let err = max_rel_err(&got.coefficients, &want);
            assert!(err < 1e-9, "seed {seed} {method}: {err:e}");
        }
    }
}

#[test]
fn residuals_are_orthogonal_to_the_design() {
    let ds = random_dataset(99, 500, false);
    let y = responses(&ds);
    for method in Method::ALL {
        let f = fit(&ds, method, 0.95).unwrap();
        let cols = design(&ds, method);
        let resid: Vec<f64> = (0..y.len())
            .map(|i| y[i] - cols.iter().zip(&f.coefficients).map(|(c, b)| c[i] * b).sum::<f64>())
            .collect();
        for c in &cols {
            let dot: f64 = c.iter().zip(&resid).map(|(a, b)| a * b).sum();
            assert!(dot.abs() < 1e-9 * y.len() as f64, "{method}: {dot}");
        }
        let ssr: f64 = resid.iter().map(|e| e * e).sum();
        let p = cols.len() as f64;
        let want = ssr / (y.len() as f64 - p);
        assert!((f.residual_variance - want).abs() < 1e-10 * want);
        assert_eq!(f.dof as usize, y.len() - cols.len());
    }
}

#[test]
fn standard_errors_and_intervals() {
    let ds = random_dataset(5, 300, false);
    for method in Method::ALL {
        let f = fit(&ds, method, 0.90).unwrap();
        let cols = design(&ds, method);
        let k = cols.len() - 1;
        let scale = match method {
            Method::Baseline => 1.0,
            _ => {
                let r = ds.intensities(method.intensity_source().unwrap()).unwrap();
                r.iter().sum::<f64>() / r.len() as f64
            }
        };
        let se = (f.residual_variance * inverse_diagonal(&cols, k)).sqrt() * scale;
        assert!((f.se_ate - se).abs() < 1e-10 * se, "{method}");
        assert!((f.t_value - f.ate / f.se_ate).abs() < 1e-12 * f.t_value.abs().max(1.0));
        // The interval half-width in SE units holds exactly 90% of the t mass.
        let q = (f.ci.1 - f.ate) / f.se_ate;
        assert!((f.ate - f.ci.0 - (f.ci.1 - f.ate)).abs() < 1e-12);
        assert!((t_central_mass(q, f.dof as f64) - 0.90).abs() < 1e-8);
    }
    assert!((t_central_mass(t_critical(0.95, 7).unwrap(), 7.0) - 0.95).abs() < 1e-9);
}

#[test]
fn ate_is_beta2_times_mean_intensity() {
    let ds = random_dataset(11, 200, false);
    for method in [Method::FullKnowledge, Method::PartialKnowledge] {
        let f = fit(&ds, method, 0.95).unwrap();
        let r = ds.intensities(method.intensity_source().unwrap()).unwrap();
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        assert!((f.ate - f.coefficients[2] * mean).abs() < 1e-14);
    }
}

#[test]
fn missing_trigger_column_is_reported() {
    let units: Vec<_> = random_dataset(3, 20, false)
        .into_units()
        .into_iter()
        .map(|mut u| {
            u.estimated_trigger_intensity = None;
            u
        })
        .collect();
    let ds = trigeval::Dataset::new(units).unwrap();
    let e = fit(&ds, Method::PartialKnowledge, 0.95).unwrap_err();
    assert_eq!(e.name(), "MissingTriggerData");
    assert!(fit(&ds, Method::FullKnowledge, 0.95).is_ok());
    assert!(!ds.has_intensity(IntensitySource::Estimated));
}

fn mat_mul<const N: usize>(a: &[[f64; N]; N], b: &[[f64; N]; N]) -> [[f64; N]; N] {
    let mut c = [[0.0; N]; N];
    for i in 0..N {
        for j in 0..N {
            c[i][j] = (0..N).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn inverses_invert(seed in 0u64..10_000, n in 4usize..300) {
        let ds = random_dataset(seed, n, false);
        let t: Vec<Assignment> = ds.units().iter().map(|u| u.assignment).collect();
        let r = ds.intensities(IntensitySource::True).unwrap();
        let moments = MomentSet::from_columns(&t, &responses(&ds), &r).unwrap();
        let p2 = mat_mul(&moments.baseline_matrix(), &closed_form_inverse_2x2(&moments).unwrap());
        let p3 = mat_mul(&moments.trigger_matrix(), &closed_form_inverse_3x3(&moments).unwrap());
        for i in 0..3 {
            for j in 0..3 {
                let id = if i == j { 1.0 } else { 0.0 };
                if i < 2 && j < 2 {
                    prop_assert!((p2[i][j] - id).abs() < 1e-10);
                }
                prop_assert!((p3[i][j] - id).abs() < 1e-10, "{:?}", p3);
            }
        }
    }

    #[test]
    fn ate_scales_with_responses(seed in 0u64..10_000, c in 0.1f64..50.0) {
        let ds = random_dataset(seed, 60, false);
        let scaled = trigeval::Dataset::new(
            ds.units().iter().cloned().map(|mut u| { u.mean_response *= c; u }).collect()
        ).unwrap();
        for method in Method::ALL {
            let a = fit(&ds, method, 0.95).unwrap();
            let b = fit(&scaled, method, 0.95).unwrap();
            prop_assert!((b.ate - c * a.ate).abs() <= 1e-9 * (c * a.ate).abs().max(1e-9));
            prop_assert!((b.se_ate - c * a.se_ate).abs() <= 1e-9 * c * a.se_ate);
            prop_assert!((b.t_value - a.t_value).abs() <= 1e-7 * a.t_value.abs().max(1.0));
        }
    }
}
