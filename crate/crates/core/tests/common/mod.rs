#![allow(dead_code)]

use cokrige::synthetic::{nested_instance, Adjustment};
use cokrige::{fit, KernelSpec, LevelSpec, MultiFidelityModel, ThetaChoice};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `|a − b| ≤ max(rel·max(|a|, |b|), abs)`.
pub fn close(a: f64, b: f64, rel: f64, abs: f64) -> bool {
    (a - b).abs() <= (rel * a.abs().max(b.abs())).max(abs)
}

/// Floor for comparing predictive variances: rounding in `v² − tᵀV⁻¹t`
/// scales with the prior variance `v²`, not with the result.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Randomized nested instance with fixed random length scales.
pub fn random_model(sizes: &[usize], d: usize, adjustment: Adjustment, seed: u64) -> MultiFidelityModel {
    let levels = nested_instance(sizes, d, seed, adjustment).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let specs = levels
        .into_iter()
        .map(|l| {
            let theta = (0..d).map(|_| rng.random_range(0.2..0.8)).collect();
            LevelSpec::new(l, ThetaChoice::Fixed(KernelSpec::matern52(theta).unwrap()))
        })
        .collect();
    fit(specs, &Default::default()).unwrap()
}

/// Textbook kriging at `x` from a dense LU inverse of the correlation
/// matrix. With `universal`, the trend is estimated by generalized least
/// squares and its uncertainty added to the variance; otherwise the trend
/// coefficients `beta` are taken as known.
pub fn kriging_oracle(
    level: &cokrige::LevelData,
    kernel: &KernelSpec,
    beta: Option<&[f64]>,
    sigma2: f64,
    x: &[f64],
) -> (f64, f64) {
    use nalgebra::{DMatrix, DVector};
    let n = level.n();
    let nugget = kernel.nugget();
    let corr = |a: &[f64], b: &[f64]| {
        let r = cokrige::kernels::correlation(a, b, kernel).unwrap();
        if a == b {
            r + nugget
        } else {
            r
        }
    };
    let r_mat = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0 + nugget
        } else {
            cokrige::kernels::correlation(&level.design[i], &level.design[j], kernel).unwrap()
        }
    });
    let r_inv = r_mat.lu().try_inverse().unwrap();
    let f_mat = level.f_basis.matrix(&level.design);
    let f = level.f_basis.eval(x);
    let r = DVector::from_iterator(n, level.design.iter().map(|p| corr(x, p)));
    let z = &level.observations;
    let info = f_mat.transpose() * &r_inv * &f_mat;
    let info_inv = info.clone().lu().try_inverse().unwrap();
    let b = match beta {
        Some(b) => DVector::from_column_slice(b),
        None => &info_inv * (f_mat.transpose() * &r_inv * z),
    };
    let mean = f.dot(&b) + r.dot(&(&r_inv * (z - &f_mat * &b)));
    let mut var = sigma2 * (1.0 + nugget - r.dot(&(&r_inv * &r)));
    if beta.is_none() {
        let u = f - f_mat.transpose() * (&r_inv * &r);
        var += sigma2 * u.dot(&(&info_inv * &u));
    }
    (mean, var.max(0.0))
}
