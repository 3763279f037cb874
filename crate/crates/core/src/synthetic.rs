//! Deterministic synthetic multi-level problems for tests, benchmarks and
//! timing runs.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::design::{nest, DesignMethod, DesignRequest};
use crate::gp::{BasisSpec, LevelData};
use crate::kernels::{correlation_matrix, KernelSpec};
use crate::{Error, Result};

/// Shape of the adjustment between consecutive levels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Adjustment {
    /// `ρ(x) = c`.
    Constant,
    /// `ρ(x) = c₀ + c₁x₁`.
    Affine,
}

impl Adjustment {
    pub fn basis(self) -> BasisSpec {
        match self {
            Adjustment::Constant => BasisSpec::constant(),
            Adjustment::Affine => BasisSpec::affine_in(0),
        }
    }
}

/// Smooth random response surfaces `z₁, …, z_s` on `[0, 1]^d` with
/// `z_t = ρ_t z_{t−1} + δ_t`.
#[derive(Clone, Debug)]
pub struct SyntheticFamily {
    dim: usize,
    adjustment: Adjustment,
    terms: Vec<Vec<(f64, f64, f64)>>,
    rho: Vec<(f64, f64)>,
}

impl SyntheticFamily {
    pub fn new(levels: usize, dim: usize, adjustment: Adjustment, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let terms = (0..levels)
            .map(|t| {
                let amp = if t == 0 { 1.0 } else { 0.3 };
                (0..dim)
                    .map(|_| (amp * rng.random_range(0.5..1.5), rng.random_range(2.0..6.0), rng.random_range(0.0..TAU)))
                    .collect()
            })
            .collect();
        let rho = (0..levels).map(|_| (rng.random_range(0.8..1.6), rng.random_range(-0.5..0.5))).collect();
        SyntheticFamily { dim, adjustment, terms, rho }
    }

    pub fn levels(&self) -> usize {
        self.terms.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Response of level `t` (one-based) at `x`.
    pub fn eval(&self, t: usize, x: &[f64]) -> f64 {
        let own: f64 = self.terms[t - 1].iter().zip(x).map(|((a, w, p), v)| a * (w * v + p).sin()).sum::<f64>()
            + if t == 1 { x[0] * x[0] } else { 0.0 };
        if t == 1 {
            return own;
        }
        let (c0, c1) = self.rho[t - 1];
        let rho = match self.adjustment {
            Adjustment::Constant => c0,
            Adjustment::Affine => c0 + c1 * x[0],
        };
        rho * self.eval(t - 1, x) + own
    }
}

/// Nested LHS designs in `[0, 1]^d` with sizes cheapest level first and
/// responses from [`SyntheticFamily`]. Every level uses a constant trend.
pub fn nested_instance(sizes: &[usize], d: usize, seed: u64, adjustment: Adjustment) -> Result<Vec<LevelData<f64>>> {
    if d == 0 {
        return Err(Error::Size("dimension must be positive".into()));
    }
    let designs =
        nest(&DesignRequest { sizes: sizes.to_vec(), bounds: vec![(0.0, 1.0); d], method: DesignMethod::Lhs, seed })?;
    let family = SyntheticFamily::new(sizes.len(), d, adjustment, seed.wrapping_mul(0x9e37_79b9).wrapping_add(1));
    Ok(levels_from_family(&family, designs, adjustment))
}

/// Attaches the family's responses to given nested designs.
pub fn levels_from_family(
    family: &SyntheticFamily,
    designs: Vec<Vec<Vec<f64>>>,
    adjustment: Adjustment,
) -> Vec<LevelData<f64>> {
    designs
        .into_iter()
        .enumerate()
        .map(|(i, design)| {
            let t = i + 1;
            let z: Vec<f64> = design.iter().map(|x| family.eval(t, x)).collect();
            if t == 1 {
                LevelData::base(design, z, BasisSpec::constant())
            } else {
                LevelData::upper(design, z, BasisSpec::constant(), adjustment.basis(), None)
            }
        })
        .collect()
}

/// Uniform points in `[0, 1]^d`.
pub fn query_points(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect()
}

/// Draw of a zero-mean Gaussian process with correlation `kernel` and
/// variance `sigma2` at the design points.
pub fn gp_sample(design: &[Vec<f64>], kernel: &KernelSpec<f64>, sigma2: f64, seed: u64) -> Result<Vec<f64>> {
    let corr = correlation_matrix(design, kernel)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e =
        nalgebra::DVector::from_iterator(design.len(), (0..design.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
    Ok((corr.factor.lower() * e * sigma2.sqrt()).iter().copied().collect())
}
