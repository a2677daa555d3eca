//! Helpers shared by the integration tests: a textbook OLS oracle, a
//! Student-t oracle by numerical integration, and random datasets.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trigeval::estimators::Method;
use trigeval::{Assignment, Dataset, UnitRecord};

/// Solve `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        let (upper, lower) = a.split_at_mut(col + 1);
        let pivot_row = &upper[col];
        for (offset, row) in lower.iter_mut().enumerate() {
            let f = row[col] / pivot_row[col];
            for (x, p) in row.iter_mut().zip(pivot_row).skip(col) {
                *x -= f * p;
            }
            b[col + 1 + offset] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Unnormalized XᵀX and Xᵀy from explicit design columns.
pub fn normal_equations(columns: &[Vec<f64>], y: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let p = columns.len();
    let mut xtx = vec![vec![0.0; p]; p];
    let mut xty = vec![0.0; p];
    for i in 0..y.len() {
        for a in 0..p {
            xty[a] += columns[a][i] * y[i];
            for b in 0..p {
                xtx[a][b] += columns[a][i] * columns[b][i];
            }
        }
    }
    (xtx, xty)
}

pub fn ols_oracle(columns: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let (xtx, xty) = normal_equations(columns, y);
    solve(xtx, xty)
}

/// Diagonal entry k of (XᵀX)⁻¹.
pub fn inverse_diagonal(columns: &[Vec<f64>], k: usize) -> f64 {
    let (xtx, _) = normal_equations(columns, &vec![0.0; columns[0].len()]);
    let mut e = vec![0.0; columns.len()];
    e[k] = 1.0;
    solve(xtx, e)[k]
}

/// Design columns of a method: (1, T) or (1, r, T·r).
pub fn design(ds: &Dataset, method: Method) -> Vec<Vec<f64>> {
    let units = ds.units();
    let ones = vec![1.0; units.len()];
    let t: Vec<f64> = units.iter().map(|u| u.assignment.indicator()).collect();
    match method {
        Method::Baseline => vec![ones, t],
        Method::FullKnowledge | Method::PartialKnowledge => {
            let r: Vec<f64> = units
                .iter()
                .map(|u| {
                    if method == Method::FullKnowledge {
                        u.true_trigger_intensity.unwrap()
                    } else {
                        u.estimated_trigger_intensity.unwrap()
                    }
                })
                .collect();
            let tr = t.iter().zip(&r).map(|(a, b)| a * b).collect();
            vec![ones, r, tr]
        }
    }
}

pub fn responses(ds: &Dataset) -> Vec<f64> {
    ds.units().iter().map(|u| u.mean_response).collect()
}

/// A random experiment of `n` units with both intensity columns filled.
/// `mirrored` datasets pair every control unit with a treated twin of equal
/// intensities, which makes the design exactly balanced.
pub fn random_dataset(seed: u64, n: usize, mirrored: bool) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta: [f64; 3] = [
        rng.random_range(-2.0..2.0),
        rng.random_range(-2.0..2.0),
        rng.random_range(-2.0..2.0),
    ];
    let sigma = rng.random_range(0.1..2.0);
    let m = rng.random_range(2..50u32);
    let mut units = Vec::with_capacity(n);
    let draw_r = |rng: &mut ChaCha8Rng| {
        let r: f64 = rng.random();
        let hits = (0..m).filter(|_| rng.random_bool(r)).count();
        (r, hits as f64 / m as f64)
    };
    let mut pair = None;
    for i in 0..n {
        let assignment = if mirrored {
            if i % 2 == 0 {
                Assignment::Control
            } else {
                Assignment::Treatment
            }
        } else if i < 2 {
            // Guarantee both arms.
            if i == 0 {
                Assignment::Control
            } else {
                Assignment::Treatment
            }
        } else if rng.random_bool(0.5) {
            Assignment::Treatment
        } else {
            Assignment::Control
        };
        let (r, r_est) = if mirrored && i % 2 == 1 {
            pair.take().unwrap()
        } else {
            let d = draw_r(&mut rng);
            if mirrored {
                pair = Some(d);
            }
            d
        };
        let noise: f64 = sigma * (rng.random::<f64>() - 0.5) * 3.46;
        units.push(UnitRecord {
            unit_id: format!("unit-{i}"),
            assignment,
            n_obs: 100,
            mean_response: beta[0] + beta[1] * r + beta[2] * assignment.indicator() * r + noise,
            true_trigger_intensity: Some(r),
            estimated_trigger_intensity: Some(r_est),
        });
    }
    Dataset::new(units).unwrap()
}

/// ln Γ(x) by the Lanczos approximation (g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + 7.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

pub fn t_pdf(x: f64, dof: f64) -> f64 {
    let ln_c = ln_gamma((dof + 1.0) / 2.0)
        - ln_gamma(dof / 2.0)
        - 0.5 * (dof * std::f64::consts::PI).ln();
    (ln_c - (dof + 1.0) / 2.0 * (1.0 + x * x / dof).ln()).exp()
}

/// P(|T| ≤ x) by composite Simpson integration of the density.
pub fn t_central_mass(x: f64, dof: f64) -> f64 {
    let x = x.abs();
    let n = 20_000;
    let h = x / n as f64;
    let mut s = t_pdf(0.0, dof) + t_pdf(x, dof);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * t_pdf(i as f64 * h, dof);
    }
    2.0 * s * h / 3.0
}

/// Two-sided p-value of a t statistic.
pub fn t_two_sided_p(t: f64, dof: f64) -> f64 {
    1.0 - t_central_mass(t, dof)
}

pub fn max_rel_err(got: &[f64], want: &[f64]) -> f64 {
    let scale = want.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    got.iter()
        .zip(want)
        .map(|(g, w)| (g - w).abs() / scale)
        .fold(0.0, f64::max)
}
