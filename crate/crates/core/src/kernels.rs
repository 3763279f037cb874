//! Stationary anisotropic correlation functions and correlation matrices.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::linalg::Factor;
use crate::{Error, Result, Scalar};

/// Default relative diagonal inflation applied to correlation matrices.
pub const DEFAULT_NUGGET: f64 = 1e-10;
/// Largest nugget the escalation in [`correlation_matrix`] will try.
pub const MAX_NUGGET: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum KernelFamily {
    #[default]
    Matern52,
    SquaredExponential,
}

impl KernelFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            KernelFamily::Matern52 => "matern52",
            KernelFamily::SquaredExponential => "squared_exponential",
        }
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "matern52" | "matern5/2" => Ok(KernelFamily::Matern52),
            "squared_exponential" | "gaussian" => Ok(KernelFamily::SquaredExponential),
            other => Err(Error::InvalidHyperparameter(format!("unknown kernel family `{other}`"))),
        }
    }
}

/// Tensorized correlation function with one length scale per input dimension.
///
/// `nugget` is a relative inflation of the variance at coincident points: the
/// effective kernel is `r(x, x') + nugget·1{x = x'}`, so the diagonal of every
/// correlation matrix is `1 + nugget` and predictions at design points
/// interpolate exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelSpec<T: Scalar> {
    family: KernelFamily,
    theta: Vec<T>,
    nugget: T,
}

impl<T: Scalar> KernelSpec<T> {
    pub fn new(family: KernelFamily, theta: Vec<T>, nugget: T) -> Result<Self> {
        if theta.is_empty() {
            return Err(Error::InvalidHyperparameter("theta must have at least one dimension".into()));
        }
        if let Some((j, t)) = theta.iter().enumerate().find(|(_, t)| !(**t > T::zero() && t.is_finite())) {
            return Err(Error::InvalidHyperparameter(format!("theta[{j}] = {t} must be positive and finite")));
        }
        if !(nugget >= T::zero() && nugget.is_finite()) {
            return Err(Error::InvalidHyperparameter(format!("nugget = {nugget} must be nonnegative")));
        }
        Ok(KernelSpec { family, theta, nugget })
    }

    /// Matérn-5/2 kernel with the default nugget.
    pub fn matern52(theta: Vec<T>) -> Result<Self> {
        Self::new(KernelFamily::Matern52, theta, T::lit(DEFAULT_NUGGET))
    }

    pub fn with_nugget(&self, nugget: T) -> Result<Self> {
        Self::new(self.family, self.theta.clone(), nugget)
    }

    pub fn with_theta(&self, theta: Vec<T>) -> Result<Self> {
        Self::new(self.family, theta, self.nugget)
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn theta(&self) -> &[T] {
        &self.theta
    }

    pub fn nugget(&self) -> T {
        self.nugget
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    /// Correlation without dimension checks; callers validate shapes once.
    pub(crate) fn eval(&self, x: &[T], y: &[T]) -> T {
        let mut r = T::one();
        for ((a, b), theta) in x.iter().zip(y).zip(&self.theta) {
            let h = (*a - *b).abs();
            r *= match self.family {
                KernelFamily::Matern52 => matern52_unchecked(h, *theta),
                KernelFamily::SquaredExponential => {
                    let s = h / *theta;
                    (-T::lit(0.5) * s * s).exp()
                }
            };
        }
        r
    }

    /// Kernel value including the nugget when the two points coincide.
    pub(crate) fn eval_with_nugget(&self, x: &[T], y: &[T]) -> T {
        let r = self.eval(x, y);
        if x == y {
            r + self.nugget
        } else {
            r
        }
    }

    /// Prior variance (in correlation units) at any point: `1 + nugget`.
    pub fn self_correlation(&self) -> T {
        T::one() + self.nugget
    }

    /// Correlation vector between `x` and every design point, with the
    /// nugget added for design points that coincide with `x`.
    pub fn cross_correlation(&self, x: &[T], design: &[Vec<T>]) -> DVector<T> {
        DVector::from_iterator(design.len(), design.iter().map(|p| self.eval_with_nugget(x, p)))
    }
}

fn matern52_unchecked<T: Scalar>(h: T, theta: T) -> T {
    let s = T::lit(5.0).sqrt() * h / theta;
    (T::one() + s + s * s / T::lit(3.0)) * (-s).exp()
}

/// One-dimensional Matérn-5/2 correlation
/// `(1 + √5 h/θ + 5h²/(3θ²)) exp(−√5 h/θ)`.
pub fn matern52_1d<T: Scalar>(h: T, theta: T) -> Result<T> {
    if !(theta > T::zero()) || !theta.is_finite() {
        return Err(Error::InvalidHyperparameter(format!("theta = {theta} must be positive")));
    }
    if !(h >= T::zero()) {
        return Err(Error::InvalidHyperparameter(format!("distance h = {h} must be nonnegative")));
    }
    Ok(matern52_unchecked(h, theta))
}

/// Product over dimensions of the one-dimensional correlations.
pub fn correlation<T: Scalar>(x: &[T], x2: &[T], spec: &KernelSpec<T>) -> Result<T> {
    if x.len() != spec.dim() || x2.len() != spec.dim() {
        return Err(Error::Shape(format!(
            "points of dimension {} and {} for a kernel of dimension {}",
            x.len(),
            x2.len(),
            spec.dim()
        )));
    }
    Ok(spec.eval(x, x2))
}

/// A factorized correlation matrix together with the nugget that made it
/// factorizable.
#[derive(Clone, Debug)]
pub struct CorrelationMatrix<T: Scalar> {
    pub matrix: DMatrix<T>,
    pub factor: Factor<T>,
    pub nugget: T,
}

pub(crate) fn check_design<T: Scalar>(design: &[Vec<T>], dim: usize) -> Result<()> {
    if design.is_empty() {
        return Err(Error::Shape("design must contain at least one point".into()));
    }
    for (i, p) in design.iter().enumerate() {
        if p.len() != dim {
            return Err(Error::Shape(format!("design point {i} has dimension {}, expected {dim}", p.len())));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape(format!("design point {i} has a non-finite coordinate")));
        }
    }
    Ok(())
}

/// Raw correlation matrix with `1 + nugget` on the diagonal. Repeated points
/// get the nugget only on their own diagonal entries, so duplicates stay
/// factorizable for a positive nugget.
pub(crate) fn assemble<T: Scalar>(design: &[Vec<T>], spec: &KernelSpec<T>, nugget: T) -> DMatrix<T> {
    let n = design.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = T::one() + nugget;
        for j in (i + 1)..n {
            let r = spec.eval(&design[i], &design[j]);
            m[(i, j)] = r;
            m[(j, i)] = r;
        }
    }
    m
}

/// Builds and factorizes the correlation matrix of `design`.
///
/// The nugget starts at `spec.nugget()` and is multiplied by ten, up to
/// [`MAX_NUGGET`], until the Cholesky factorization succeeds. A zero nugget is
/// never escalated.
pub fn correlation_matrix<T: Scalar>(design: &[Vec<T>], spec: &KernelSpec<T>) -> Result<CorrelationMatrix<T>> {
    check_design(design, spec.dim())?;
    let max = T::lit(MAX_NUGGET);
    let ten = T::lit(10.0);
    let mut nugget = spec.nugget();
    loop {
        let matrix = assemble(design, spec, nugget);
        if let Some(factor) = Factor::new(matrix.clone()) {
            return Ok(CorrelationMatrix { matrix, factor, nugget });
        }
        let next = nugget * ten;
        if nugget == T::zero() || next > max * T::lit(1.0 + 1e-9) {
            return Err(Error::IllConditioned { size: design.len(), nugget: nugget.as_f64() });
        }
        nugget = next;
    }
}

/// Like [`correlation_matrix`] but uses `spec.nugget()` as is.
pub fn correlation_matrix_fixed<T: Scalar>(design: &[Vec<T>], spec: &KernelSpec<T>) -> Result<CorrelationMatrix<T>> {
    check_design(design, spec.dim())?;
    let nugget = spec.nugget();
    let matrix = assemble(design, spec, nugget);
    let factor =
        Factor::new(matrix.clone()).ok_or(Error::IllConditioned { size: design.len(), nugget: nugget.as_f64() })?;
    Ok(CorrelationMatrix { matrix, factor, nugget })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matern_at_zero_and_at_theta() {
        assert_eq!(matern52_1d(0.0, 0.7).unwrap(), 1.0);
        // (1 + √5 + 5/3)·exp(−√5), evaluated independently.
        let s5 = 5f64.sqrt();
        let expected = (1.0 + s5 + 5.0 / 3.0) * (-s5).exp();
        assert!((expected - 0.5240).abs() < 1e-4);
        for theta in [0.01, 0.3, 1.0, 42.0] {
            let v = matern52_1d(theta, theta).unwrap();
            assert!((v - expected).abs() < 1e-12, "{v}");
        }
        assert!((matern52_1d(1.0f64, 1e9).unwrap() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn matern_rejects_bad_theta() {
        assert!(matches!(matern52_1d(1.0, 0.0), Err(Error::InvalidHyperparameter(_))));
        assert!(matches!(matern52_1d(1.0, -2.0), Err(Error::InvalidHyperparameter(_))));
        assert!(KernelSpec::matern52(vec![0.5, 0.0]).is_err());
        assert!(KernelSpec::new(KernelFamily::Matern52, vec![0.5], -1e-3).is_err());
    }

    #[test]
    fn correlation_product_rule_and_shape() {
        // Pick distances whose 1-d correlations are exactly known values by
        // construction: find h with r(h) = 0.5 and r(h') = 0.4 by bisection.
        let solve = |target: f64| {
            let (mut lo, mut hi) = (0.0, 10.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if matern52_1d(mid, 1.0).unwrap() > target {
                    lo = mid
                } else {
                    hi = mid
                }
            }
            0.5 * (lo + hi)
        };
        let spec = KernelSpec::matern52(vec![1.0, 1.0]).unwrap();
        let x = [0.0, 0.0];
        let y = [solve(0.5), solve(0.4)];
        assert!((correlation(&x, &y, &spec).unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(correlation(&x, &x, &spec).unwrap(), 1.0);
        assert!(matches!(correlation(&[0.0], &y, &spec), Err(Error::Shape(_))));
    }

    #[test]
    fn one_point_matrix() {
        let spec = KernelSpec::new(KernelFamily::Matern52, vec![0.3], 1e-4).unwrap();
        let cm = correlation_matrix(&[vec![0.2]], &spec).unwrap();
        assert_eq!(cm.matrix[(0, 0)], 1.0 + 1e-4);
    }

    #[test]
    fn duplicate_points() {
        let design = vec![vec![0.3, 0.4], vec![0.3, 0.4]];
        let ok = KernelSpec::new(KernelFamily::Matern52, vec![0.5, 0.5], 1e-8).unwrap();
        assert!(correlation_matrix(&design, &ok).is_ok());
        let zero = ok.with_nugget(0.0).unwrap();
        match correlation_matrix(&design, &zero) {
            Err(Error::IllConditioned { nugget, .. }) => assert_eq!(nugget, 0.0),
            other => panic!("expected ill-conditioned error, got {other:?}"),
        }
    }

    #[test]
    fn nugget_escalates_until_factorizable() {
        // Gaussian kernel on a dense grid: a 1e-15 nugget is too small.
        let design: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64 * 1e-4]).collect();
        let spec = KernelSpec::new(KernelFamily::SquaredExponential, vec![1.0], 1e-15).unwrap();
        let cm = correlation_matrix(&design, &spec).unwrap();
        assert!(cm.nugget > 1e-15 && cm.nugget <= MAX_NUGGET, "nugget {}", cm.nugget);
        assert!(correlation_matrix_fixed(&design, &spec).is_err());
    }

    #[test]
    fn factor_reconstructs_random_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let design: Vec<Vec<f64>> = (0..10).map(|_| vec![rng.random(), rng.random()]).collect();
        let spec = KernelSpec::matern52(vec![0.4, 0.7]).unwrap();
        let cm = correlation_matrix(&design, &spec).unwrap();
        let diff = cm.factor.reconstruct() - &cm.matrix;
        assert!(diff.amax() < 1e-10);
        for i in 0..10 {
            assert_eq!(cm.matrix[(i, i)], 1.0 + cm.nugget);
            for j in 0..10 {
                assert_eq!(cm.matrix[(i, j)], cm.matrix[(j, i)]);
            }
        }
    }

    #[test]
    fn works_in_single_precision() {
        let spec = KernelSpec::<f32>::new(KernelFamily::Matern52, vec![0.5], 1e-5).unwrap();
        let design = vec![vec![0.0f32], vec![0.3], vec![0.9]];
        let cm = correlation_matrix(&design, &spec).unwrap();
        assert!((cm.factor.reconstruct() - &cm.matrix).amax() < 1e-5);
    }

    proptest! {
        #[test]
        fn symmetric_and_tensorized(
            x in proptest::collection::vec(-3.0f64..3.0, 3),
            y in proptest::collection::vec(-3.0f64..3.0, 3),
            theta in proptest::collection::vec(0.05f64..5.0, 3),
        ) {
            let spec = KernelSpec::matern52(theta.clone()).unwrap();
            let r = correlation(&x, &y, &spec).unwrap();
            prop_assert_eq!(r, correlation(&y, &x, &spec).unwrap());
            let product: f64 = (0..3)
                .map(|j| matern52_1d((x[j] - y[j]).abs(), theta[j]).unwrap())
                .product();
            prop_assert!((r - product).abs() <= 1e-15);
            prop_assert!(r > 0.0 && r <= 1.0);
        }

        #[test]
        fn matern_monotone(theta in 0.01f64..10.0, h in 0.0f64..20.0, dh in 0.0f64..1.0) {
            let a = matern52_1d(h, theta).unwrap();
            let b = matern52_1d(h + dh, theta).unwrap();
            prop_assert!(b <= a);
        }
    }
}
