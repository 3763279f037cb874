//! Reference joint formulation: all levels stacked into a single Gaussian
//! vector with one dense covariance matrix. Used to validate the
//! recursive predictor and to compare costs; not a production path.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::gp::{BasisSpec, LevelData};
use crate::kernels::KernelSpec;
use crate::linalg::{symmetrize, Factor};
use crate::model::{fit, LevelSpec, MultiFidelityModel, PredictionMode, ThetaChoice};
use crate::{Error, Result, Scalar};

/// Fixed parameters of one level of the joint model.
#[derive(Clone, Debug, PartialEq)]
pub struct JointLevelParams<T: Scalar> {
    /// Kernel including the nugget used at coincident points.
    pub kernel: KernelSpec<T>,
    pub f_basis: BasisSpec,
    pub beta: DVector<T>,
    /// Basis and coefficients of the adjustment linking this level to the
    /// one below; absent at level 1.
    pub adjustment: Option<(BasisSpec, DVector<T>)>,
    pub sigma2: T,
}

impl<T: Scalar> JointLevelParams<T> {
    fn rho(&self, x: &[T]) -> T {
        self.adjustment.as_ref().map_or(T::one(), |(g, c)| g.eval(x).dot(c))
    }
}

/// Parameters of the joint model taken from a fitted recursive model: the
/// posterior trend means and the given level variances.
pub fn params_from_model<T: Scalar>(model: &MultiFidelityModel<T>, sigma2: &[T]) -> Result<Vec<JointLevelParams<T>>> {
    if sigma2.len() != model.n_levels() {
        return Err(Error::Shape(format!("{} variances for {} levels", sigma2.len(), model.n_levels())));
    }
    Ok(model
        .levels()
        .iter()
        .zip(sigma2)
        .map(|(level, &s2)| {
            let fit = &level.fitted;
            let q = fit.n_adjust();
            JointLevelParams {
                kernel: fit.kernel.clone(),
                f_basis: level.data.f_basis.clone(),
                beta: fit.trend_mean.rows(q, fit.trend_mean.len() - q).into_owned(),
                adjustment: level.data.g_basis.clone().map(|g| (g, fit.rho_coefficients())),
                sigma2: s2,
            }
        })
        .collect())
}

/// Stacked covariance, trend matrix and observations of all levels.
#[derive(Clone, Debug)]
pub struct JointModel<T: Scalar> {
    pub covariance: DMatrix<T>,
    pub trend_matrix: DMatrix<T>,
    pub beta: DVector<T>,
    pub observations: DVector<T>,
    /// Diagonal inflation added on top of the level nuggets to factorize
    /// the covariance; zero when none was needed.
    pub extra_jitter: T,
    params: Vec<JointLevelParams<T>>,
    points: Vec<(usize, Vec<T>)>,
    rhos: Vec<Vec<T>>,
    factor: Factor<T>,
    weights: DVector<T>,
}

/// `ρ_l(x)` for every level `l ≤ top` (entry 0 is one).
fn rho_values<T: Scalar>(params: &[JointLevelParams<T>], x: &[T], top: usize) -> Vec<T> {
    (0..=top).map(|l| if l == 0 { T::one() } else { params[l].rho(x) }).collect()
}

/// Covariance of `Z_a(x)` and `Z_b(y)`, where `rx`, `ry` hold the
/// adjustment factors at each point up to its own level. The lift from the
/// lower to the higher level uses the factors at the higher-level point.
fn cross_cov<T: Scalar>(params: &[JointLevelParams<T>], a: usize, x: &[T], rx: &[T], b: usize, y: &[T], ry: &[T]) -> T {
    let (hi, hx, rh, lo, ly, rl) = if a >= b { (a, x, rx, b, y, ry) } else { (b, y, ry, a, x, rx) };
    let mut lift = T::one();
    for r in &rh[lo + 1..=hi] {
        lift *= *r;
    }
    let (mut ph, mut pl) = (T::one(), T::one());
    let mut c = T::zero();
    for j in (0..=lo).rev() {
        c += params[j].sigma2 * (ph * pl) * params[j].kernel.eval_with_nugget(hx, ly);
        ph *= rh[j];
        pl *= rl[j];
    }
    lift * c
}

/// Trend row `h_t(x)`: `Π_{l=j+1}^{t} ρ_l(x) f_j(x)` for each level `j ≤ t`.
fn trend_row<T: Scalar>(params: &[JointLevelParams<T>], t: usize, x: &[T], width: usize) -> DVector<T> {
    let rho = rho_values(params, x, t);
    let mut h = DVector::zeros(width);
    let mut lift = T::one();
    let offsets: Vec<usize> = params
        .iter()
        .scan(0, |acc, p| {
            let o = *acc;
            *acc += p.beta.len();
            Some(o)
        })
        .collect();
    for j in (0..=t).rev() {
        let f = params[j].f_basis.eval(x);
        h.rows_mut(offsets[j], f.len()).copy_from(&(f * lift));
        lift *= rho[j];
    }
    h
}

/// Assembles and factorizes the joint covariance of all observations.
pub fn build_joint<T: Scalar>(levels: &[LevelData<T>], params: &[JointLevelParams<T>]) -> Result<JointModel<T>> {
    if levels.is_empty() || levels.len() != params.len() {
        return Err(Error::Shape(format!("{} levels with {} parameter sets", levels.len(), params.len())));
    }
    for (t, (l, p)) in levels.iter().zip(params).enumerate() {
        l.validate(t + 1)?;
        if p.beta.len() != l.f_basis.len() || p.kernel.dim() != l.dim() || p.adjustment.is_some() != (t > 0) {
            return Err(Error::Shape(format!("level {}: parameters do not match the data", t + 1)));
        }
        if !(p.sigma2 >= T::zero()) {
            return Err(Error::InvalidHyperparameter(format!("level {}: negative variance", t + 1)));
        }
    }
    let points: Vec<(usize, Vec<T>)> =
        levels.iter().enumerate().flat_map(|(t, l)| l.design.iter().map(move |x| (t, x.clone()))).collect();
    let n = points.len();
    let width: usize = params.iter().map(|p| p.beta.len()).sum();

    let rhos: Vec<Vec<T>> = points.iter().map(|(t, x)| rho_values(params, x, *t)).collect();
    let mut cov = DMatrix::zeros(n, n);
    for k in 0..n {
        for i in 0..n {
            let (a, x) = &points[i];
            let (b, y) = &points[k];
            cov[(i, k)] = cross_cov(params, *a, x, &rhos[i], *b, y, &rhos[k]);
        }
    }
    let mut trend_matrix = DMatrix::zeros(n, width);
    for (i, (t, x)) in points.iter().enumerate() {
        trend_matrix.set_row(i, &trend_row(params, *t, x, width).transpose());
    }
    let beta = DVector::from_iterator(width, params.iter().flat_map(|p| p.beta.iter().copied()));
    let observations = DVector::from_iterator(n, levels.iter().flat_map(|l| l.observations.iter().copied()));

    let scale = cov.diagonal().amax().max(T::one());
    let mut extra_jitter = T::zero();
    let factor = loop {
        let mut m = symmetrize(cov.clone());
        for i in 0..n {
            m[(i, i)] += extra_jitter;
        }
        if let Some(f) = Factor::new(m) {
            break f;
        }
        extra_jitter = if extra_jitter == T::zero() { scale * T::lit(1e-10) } else { extra_jitter * T::lit(10.0) };
        if extra_jitter > scale * T::lit(1e-4) {
            return Err(Error::IllConditioned { size: n, nugget: (extra_jitter / scale).as_f64() });
        }
    };
    let weights = factor.solve(&(&observations - &trend_matrix * &beta));
    Ok(JointModel {
        covariance: cov,
        trend_matrix,
        beta,
        observations,
        extra_jitter,
        params: params.to_vec(),
        points,
        rhos,
        factor,
        weights,
    })
}

/// Mean and variance of the top level at `x`.
pub fn joint_predict<T: Scalar>(jm: &JointModel<T>, x: &[T]) -> Result<(T, T)> {
    let s = jm.params.len() - 1;
    if x.len() != jm.params[0].kernel.dim() {
        return Err(Error::Shape(format!(
            "point of dimension {} for a model of dimension {}",
            x.len(),
            jm.params[0].kernel.dim()
        )));
    }
    let rx = rho_values(&jm.params, x, s);
    let t_vec = DVector::from_iterator(
        jm.points.len(),
        jm.points.iter().zip(&jm.rhos).map(|((b, y), ry)| cross_cov(&jm.params, s, x, &rx, *b, y, ry)),
    );
    let h = trend_row(&jm.params, s, x, jm.beta.len());
    let mean = h.dot(&jm.beta) + t_vec.dot(&jm.weights);
    let prior_var = cross_cov(&jm.params, s, x, &rx, s, x, &rx);
    let w = jm.factor.solve_lower(&t_vec);
    Ok((mean, (prior_var - w.norm_squared()).max(T::zero())))
}

/// Prior variance `v²(x)` of the top level at `x`.
pub fn prior_variance<T: Scalar>(jm: &JointModel<T>, x: &[T]) -> Result<T> {
    let s = jm.params.len() - 1;
    if x.len() != jm.params[0].kernel.dim() {
        return Err(Error::Shape(format!(
            "point of dimension {} for a model of dimension {}",
            x.len(),
            jm.params[0].kernel.dim()
        )));
    }
    let rx = rho_values(&jm.params, x, s);
    Ok(cross_cov(&jm.params, s, x, &rx, s, x, &rx))
}

/// Wall-clock comparison of the recursive and joint pipelines.
#[derive(Clone, Debug)]
pub struct TimingReport {
    pub sizes: Vec<usize>,
    pub dim: usize,
    pub seed: u64,
    pub query_points: usize,
    pub recursive_seconds: f64,
    pub joint_seconds: f64,
    /// Largest absolute difference of the predicted means.
    pub max_mean_diff: f64,
    /// Largest absolute difference of the predicted variances.
    pub max_variance_diff: f64,
    pub recursive_means: Vec<f64>,
}

impl TimingReport {
    pub fn speedup(&self) -> f64 {
        self.joint_seconds / self.recursive_seconds
    }
}

/// Fits and predicts a synthetic nested instance with fixed length
/// scales through both pipelines. The joint pipeline reuses the
/// recursive estimates as its fixed parameters.
pub fn timed_fit_predict(sizes: &[usize], d: usize, seed: u64) -> Result<TimingReport> {
    let levels = crate::synthetic::nested_instance(sizes, d, seed, crate::synthetic::Adjustment::Constant)?;
    let queries = crate::synthetic::query_points(100, d, seed ^ 0x5eed);
    let theta = vec![0.3; d];

    let start = Instant::now();
    let specs = levels
        .iter()
        .map(|l| Ok(LevelSpec::new(l.clone(), ThetaChoice::Fixed(KernelSpec::matern52(theta.clone())?))))
        .collect::<Result<Vec<_>>>()?;
    let model = fit(specs, &Default::default())?;
    let rec = model.predict_batch(&queries, PredictionMode::Simple)?;
    let recursive_seconds = start.elapsed().as_secs_f64();

    let params = params_from_model(&model, &model.default_sigma2()?)?;
    let fitted_levels: Vec<LevelData<f64>> = model.levels().iter().map(|l| l.data.clone()).collect();
    let start = Instant::now();
    let jm = build_joint(&fitted_levels, &params)?;
    let joint = queries.iter().map(|x| joint_predict(&jm, x)).collect::<Result<Vec<_>>>()?;
    let joint_seconds = start.elapsed().as_secs_f64();

    let (mut max_mean_diff, mut max_variance_diff) = (0.0f64, 0.0f64);
    for (r, (m, v)) in rec.iter().zip(&joint) {
        max_mean_diff = max_mean_diff.max((r.mean() - m).abs());
        max_variance_diff = max_variance_diff.max((r.variance() - v).abs());
    }
    Ok(TimingReport {
        sizes: sizes.to_vec(),
        dim: d,
        seed,
        query_points: queries.len(),
        recursive_seconds,
        joint_seconds,
        max_mean_diff,
        max_variance_diff,
        recursive_means: rec.iter().map(|p| p.mean()).collect(),
    })
}
