//! Closed-form Bayesian estimation of one level's trend and variance.

use nalgebra::{DMatrix, DVector};

use super::level::{LevelData, PriorSpec};
use crate::kernels::{correlation_matrix, correlation_matrix_fixed, KernelSpec};
use crate::linalg::{dependent_columns, symmetrize, Factor};
use crate::{Error, Result, Scalar};

/// Regression matrix of a level: `F₁` at level 1, and
/// `[G_{t-1} ⊙ (z_{t-1}(D_t) 1ᵀ), F_t]` above.
pub fn build_experience_matrix<T: Scalar>(level: &LevelData<T>) -> Result<DMatrix<T>> {
    let f = level.f_basis.matrix(&level.design);
    let Some(g_basis) = &level.g_basis else {
        return Ok(f);
    };
    let lower = level
        .lower_observations
        .as_ref()
        .ok_or_else(|| Error::Structural("lower-level observations are required above level 1".into()))?;
    if lower.len() != level.n() {
        return Err(Error::Shape(format!("{} lower-level observations for {} design points", lower.len(), level.n())));
    }
    let g = g_basis.matrix(&level.design);
    let (n, q, p) = (level.n(), g.ncols(), f.ncols());
    let mut h = DMatrix::zeros(n, q + p);
    for i in 0..n {
        for k in 0..q {
            h[(i, k)] = g[(i, k)] * lower[i];
        }
        for k in 0..p {
            h[(i, q + k)] = f[(i, k)];
        }
    }
    Ok(h)
}

/// Whitened generalized-least-squares quantities `L⁻¹H`, `L⁻¹z`,
/// `HᵀR⁻¹H` and `HᵀR⁻¹z`.
#[derive(Clone, Debug)]
pub(crate) struct Gls<T: Scalar> {
    pub lh: DMatrix<T>,
    pub lz: DVector<T>,
    pub info: DMatrix<T>,
    pub rhs: DVector<T>,
}

impl<T: Scalar> Gls<T> {
    pub fn new(h: &DMatrix<T>, factor: &Factor<T>, z: &DVector<T>) -> Self {
        let lh = factor.solve_lower_mat(h);
        let lz = factor.solve_lower(z);
        let info = symmetrize(lh.transpose() * &lh);
        let rhs = lh.transpose() * &lz;
        Gls { lh, lz, info, rhs }
    }

    /// `(HᵀR⁻¹H)⁻¹ HᵀR⁻¹z`, or the dependent columns on failure.
    pub fn solve(&self) -> std::result::Result<(DVector<T>, Factor<T>), Vec<usize>> {
        match Factor::new(self.info.clone()) {
            Some(f) => Ok((f.solve(&self.rhs), f)),
            None => Err(dependent_columns(&self.lh)),
        }
    }

    /// `(z − Hλ)ᵀ R⁻¹ (z − Hλ)`.
    pub fn residual_quadratic(&self, lambda: &DVector<T>) -> T {
        (&self.lz - &self.lh * lambda).norm_squared()
    }
}

fn singular(columns: Vec<usize>, labels: Option<&[String]>) -> Error {
    let columns = columns
        .into_iter()
        .map(|j| labels.and_then(|l| l.get(j).cloned()).unwrap_or_else(|| format!("column {j}")))
        .collect();
    Error::SingularSystem { columns }
}

/// Posterior of the trend coefficients given `σ²`: `N(mean, cov)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrendPosterior<T: Scalar> {
    /// `Σν`.
    pub mean: DVector<T>,
    /// `Σ`.
    pub cov: DMatrix<T>,
}

/// Returns the posterior mean and `Σ/σ²`.
fn trend_parts<T: Scalar>(
    gls: &Gls<T>,
    prior: &PriorSpec<T>,
    labels: Option<&[String]>,
) -> Result<(DVector<T>, DMatrix<T>)> {
    match prior {
        PriorSpec::NonInformative => {
            let (mean, f) = gls.solve().map_err(|c| singular(c, labels))?;
            Ok((mean, f.inverse()))
        }
        PriorSpec::Informative { b, v, .. } => {
            let vf = Factor::new(v.clone()).ok_or_else(|| Error::InvalidPrior("V is not positive definite".into()))?;
            let precision = symmetrize(&gls.info + vf.inverse());
            let pf = Factor::new(precision).ok_or_else(|| singular(dependent_columns(&gls.lh), labels))?;
            let mean = pf.solve(&(&gls.rhs + vf.solve(b)));
            Ok((mean, pf.inverse()))
        }
    }
}

/// Trend posterior for a given `σ²`.
///
/// Non-informative: `Σ = σ²(HᵀR⁻¹H)⁻¹`, `Σν` the generalized least-squares
/// estimate. Informative: `Σ = σ²(HᵀR⁻¹H + V⁻¹)⁻¹`,
/// `Σν = (HᵀR⁻¹H + V⁻¹)⁻¹(HᵀR⁻¹z + V⁻¹b)`.
pub fn trend_posterior<T: Scalar>(
    h: &DMatrix<T>,
    factor: &Factor<T>,
    z: &DVector<T>,
    sigma2: T,
    prior: &PriorSpec<T>,
) -> Result<TrendPosterior<T>> {
    if !(sigma2 > T::zero()) {
        return Err(Error::InvalidHyperparameter(format!("sigma2 = {sigma2} must be positive")));
    }
    check_system(h, factor, z)?;
    prior.validate(h.ncols())?;
    let gls = Gls::new(h, factor, z);
    let (mean, scale) = trend_parts(&gls, prior, None)?;
    Ok(TrendPosterior { mean, cov: scale * sigma2 })
}

/// Inverse-gamma posterior `IG(a, Q/2)` of a level variance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VariancePosterior<T: Scalar> {
    pub q: T,
    pub a: T,
}

fn variance_parts<T: Scalar>(
    gls: &Gls<T>,
    n: usize,
    prior: &PriorSpec<T>,
    labels: Option<&[String]>,
) -> Result<VariancePosterior<T>> {
    let m = gls.lh.ncols();
    match prior {
        PriorSpec::NonInformative => {
            if n <= m {
                return Err(Error::InsufficientData {
                    level: 0,
                    detail: format!("{n} observations for {m} trend coefficients; need more than {m}"),
                });
            }
            let (lambda, _) = gls.solve().map_err(|c| singular(c, labels))?;
            Ok(VariancePosterior { q: gls.residual_quadratic(&lambda), a: T::from_usize_lossy(n - m) / T::lit(2.0) })
        }
        PriorSpec::Informative { b, v, alpha, gamma } => {
            let a = T::from_usize_lossy(n) / T::lit(2.0) + *alpha;
            let q = match gls.solve() {
                Ok((lambda, info)) => {
                    let d = b - &lambda;
                    let s = symmetrize(v + info.inverse());
                    let sf = Factor::new(s).ok_or_else(|| Error::InvalidPrior("V + (HᵀR⁻¹H)⁻¹ is singular".into()))?;
                    *gamma + d.dot(&sf.solve(&d)) + gls.residual_quadratic(&lambda)
                }
                // Rank-deficient H: the generalized least-squares estimate does
                // not exist, but Q does. Use the completed-square form.
                Err(_) => informative_q_completed_square(gls, b, v, *gamma)?,
            };
            Ok(VariancePosterior { q, a })
        }
    }
}

/// `γ + zᵀR⁻¹z + bᵀV⁻¹b − μᵀ(HᵀR⁻¹H + V⁻¹)μ` with `μ` the posterior mean.
pub(crate) fn informative_q_completed_square<T: Scalar>(
    gls: &Gls<T>,
    b: &DVector<T>,
    v: &DMatrix<T>,
    gamma: T,
) -> Result<T> {
    let vf = Factor::new(v.clone()).ok_or_else(|| Error::InvalidPrior("V is not positive definite".into()))?;
    let precision = symmetrize(&gls.info + vf.inverse());
    let pf =
        Factor::new(precision.clone()).ok_or_else(|| Error::InvalidPrior("posterior precision is singular".into()))?;
    let vb = vf.solve(b);
    let mu = pf.solve(&(&gls.rhs + &vb));
    Ok(gamma + gls.lz.norm_squared() + b.dot(&vb) - mu.dot(&(precision * &mu)))
}

/// `Q` and `a` of the variance posterior. In the non-informative case
/// `Q = (z − Hλ̂)ᵀR⁻¹(z − Hλ̂)` and `a = (n − p − q)/2`.
pub fn variance_posterior<T: Scalar>(
    h: &DMatrix<T>,
    factor: &Factor<T>,
    z: &DVector<T>,
    prior: &PriorSpec<T>,
) -> Result<VariancePosterior<T>> {
    check_system(h, factor, z)?;
    prior.validate(h.ncols())?;
    let gls = Gls::new(h, factor, z);
    variance_parts(&gls, z.len(), prior, None)
}

/// Restricted maximum-likelihood variance `Q / (2a)`.
pub fn sigma2_eml<T: Scalar>(q: T, a: T) -> Result<T> {
    if !(a > T::zero()) {
        return Err(Error::DegeneratePosterior(format!("shape a = {a} must be positive")));
    }
    Ok(q / (T::lit(2.0) * a))
}

fn check_system<T: Scalar>(h: &DMatrix<T>, factor: &Factor<T>, z: &DVector<T>) -> Result<()> {
    if h.nrows() != factor.dim() || z.len() != factor.dim() {
        return Err(Error::Shape(format!(
            "experience matrix {}x{}, observations {}, correlation {}",
            h.nrows(),
            h.ncols(),
            z.len(),
            factor.dim()
        )));
    }
    Ok(())
}

/// How the nugget of a level's correlation matrix is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NuggetPolicy {
    /// Start from the kernel's nugget and escalate on failure.
    Escalate,
    /// Use the kernel's nugget as is.
    Fixed,
}

/// Posterior quantities of one fitted level.
#[derive(Clone, Debug)]
pub struct FittedLevel<T: Scalar> {
    /// Kernel with the nugget actually applied.
    pub kernel: KernelSpec<T>,
    pub prior: PriorSpec<T>,
    /// Experience matrix `H_t`.
    pub h: DMatrix<T>,
    /// Posterior trend mean `Σ_t ν_t`; the first `q_{t-1}` entries are the
    /// adjustment coefficients.
    pub trend_mean: DVector<T>,
    /// `Σ_t / σ_t²`.
    pub trend_cov_scale: DMatrix<T>,
    pub q: T,
    pub a: T,
    pub log_det: T,
    n_adjust: usize,
    factor: Factor<T>,
    lh: DMatrix<T>,
    lz: DVector<T>,
    lresid: DVector<T>,
}

impl<T: Scalar> FittedLevel<T> {
    pub fn applied_nugget(&self) -> T {
        self.kernel.nugget()
    }

    pub fn factor(&self) -> &Factor<T> {
        &self.factor
    }

    pub fn n(&self) -> usize {
        self.factor.dim()
    }

    /// `q_{t-1}`, zero at level 1.
    pub fn n_adjust(&self) -> usize {
        self.n_adjust
    }

    pub fn rho_coefficients(&self) -> DVector<T> {
        self.trend_mean.rows(0, self.n_adjust).into_owned()
    }

    pub fn sigma2_eml(&self) -> Result<T> {
        sigma2_eml(self.q, self.a)
    }

    /// Posterior mean of `σ²`, `Q / (2(a − 1))`; requires `a > 1`.
    pub fn sigma2_posterior_mean(&self) -> Result<T> {
        if !(self.a > T::one()) {
            return Err(Error::DegeneratePosterior(format!(
                "posterior shape a = {} ≤ 1 leaves the variance mean undefined; add runs or use simple prediction with a fixed variance",
                self.a
            )));
        }
        Ok(self.q / (T::lit(2.0) * (self.a - T::one())))
    }

    /// `L⁻¹H`.
    pub(crate) fn whitened_h(&self) -> &DMatrix<T> {
        &self.lh
    }

    /// `L⁻¹z`.
    pub(crate) fn whitened_z(&self) -> &DVector<T> {
        &self.lz
    }

    /// `L⁻¹(z − Hλ)` for the stored trend.
    pub(crate) fn whitened_residual(&self) -> &DVector<T> {
        &self.lresid
    }

    /// Same level with the trend coefficients replaced (variance and
    /// covariance scale untouched).
    pub fn with_trend(&self, trend: DVector<T>) -> Result<Self> {
        if trend.len() != self.trend_mean.len() {
            return Err(Error::Shape(format!(
                "{} trend coefficients for a level with {}",
                trend.len(),
                self.trend_mean.len()
            )));
        }
        let mut out = self.clone();
        out.lresid = &self.lz - &self.lh * &trend;
        out.trend_mean = trend;
        Ok(out)
    }
}

/// Fits one level with fixed correlation hyperparameters. `level` is
/// one-based and used for validation and error messages.
pub fn fit_level<T: Scalar>(
    level: usize,
    data: &LevelData<T>,
    kernel: &KernelSpec<T>,
    prior: &PriorSpec<T>,
    nugget: NuggetPolicy,
) -> Result<FittedLevel<T>> {
    data.validate(level)?;
    if kernel.dim() != data.dim() {
        return Err(Error::Shape(format!(
            "level {level}: kernel of dimension {} for inputs of dimension {}",
            kernel.dim(),
            data.dim()
        )));
    }
    let h = build_experience_matrix(data)?;
    let m = h.ncols();
    prior.validate(m)?;
    if !prior.is_informative() && data.n() <= m {
        return Err(Error::InsufficientData {
            level,
            detail: format!("{} runs for {m} trend coefficients; need at least {}", data.n(), m + 1),
        });
    }
    let corr = match nugget {
        NuggetPolicy::Escalate => correlation_matrix(&data.design, kernel)?,
        NuggetPolicy::Fixed => correlation_matrix_fixed(&data.design, kernel)?,
    };
    let kernel = kernel.with_nugget(corr.nugget)?;
    let factor = corr.factor;
    let gls = Gls::new(&h, &factor, &data.observations);
    let labels = data.trend_labels();
    let (trend_mean, trend_cov_scale) = trend_parts(&gls, prior, Some(&labels))?;
    let var = variance_parts(&gls, data.n(), prior, Some(&labels)).map_err(|e| match e {
        Error::InsufficientData { detail, .. } => Error::InsufficientData { level, detail },
        other => other,
    })?;
    let lresid = &gls.lz - &gls.lh * &trend_mean;
    Ok(FittedLevel {
        log_det: factor.log_det(),
        kernel,
        prior: prior.clone(),
        h,
        trend_mean,
        trend_cov_scale,
        q: var.q,
        a: var.a,
        n_adjust: data.g_basis.as_ref().map_or(0, |g| g.len()),
        factor,
        lh: gls.lh,
        lz: gls.lz,
        lresid,
    })
}

/// Concentrated restricted log-likelihood (to be minimized):
/// `log det R + (n − p − q) log σ²_EML`.
pub fn concentrated_reml<T: Scalar>(level: &LevelData<T>, kernel: &KernelSpec<T>) -> Result<T> {
    let lvl = if level.g_basis.is_some() { 2 } else { 1 };
    level.validate(lvl)?;
    let h = build_experience_matrix(level)?;
    let m = h.ncols();
    let n = level.n();
    if n <= m {
        return Err(Error::InsufficientData { level: lvl, detail: format!("{n} runs for {m} trend coefficients") });
    }
    let corr = correlation_matrix(&level.design, kernel)?;
    let gls = Gls::new(&h, &corr.factor, &level.observations);
    let labels = level.trend_labels();
    let (lambda, _) = gls.solve().map_err(|c| singular(c, Some(&labels)))?;
    let dof = T::from_usize_lossy(n - m);
    let sigma2 = gls.residual_quadratic(&lambda) / dof;
    Ok(corr.factor.log_det() + dof * sigma2.ln())
}
