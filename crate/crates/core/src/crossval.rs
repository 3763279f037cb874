//! Cross-validation of the top level: closed-form fold updates that reuse
//! the fitted factorizations, and a brute-force refit oracle.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::gp::{fit_level, FittedLevel, NuggetPolicy, PriorSpec};
use crate::linalg::{symmetrize, Factor};
use crate::model::{predict_levels, Level, MultiFidelityModel, PredictionMode};
use crate::{Error, Result, Scalar};

/// Trend coefficients used for held-out prediction.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum TrendSource<T: Scalar> {
    /// Generalized least squares on the retained points of each fold.
    #[default]
    Reestimate,
    /// Posterior mean from the full data.
    Posterior,
    /// Given coefficients, one vector per level (all levels, cheapest first).
    Fixed(Vec<DVector<T>>),
}

/// Level variances used for held-out prediction.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum VarianceSource<T: Scalar> {
    /// `Q_{−ξ} / (2a_{−ξ})` from the retained points.
    #[default]
    Reestimate,
    /// `Q / (2(a − 1))` from the full data.
    PosteriorMean,
    /// Given values, one per level (all levels, cheapest first).
    Fixed(Vec<T>),
}

/// Adjustment coefficients propagating lower-level errors upward.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RhoSource {
    /// From the fold's trend coefficients.
    #[default]
    Fold,
    /// From the full-data posterior mean.
    Full,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CVRequest<T: Scalar> {
    /// Indices into the top-level design.
    pub folds: Vec<Vec<usize>>,
    /// Lowest level (one-based) from which held-out points are removed.
    pub t_min: usize,
    pub trend: TrendSource<T>,
    pub variance: VarianceSource<T>,
    pub rho: RhoSource,
    pub mode: PredictionMode,
}

impl<T: Scalar> CVRequest<T> {
    /// Leave-one-out over `n` points with full re-estimation.
    pub fn loo(n: usize, t_min: usize, mode: PredictionMode) -> Self {
        Self::from_folds((0..n).map(|i| vec![i]).collect(), t_min, mode)
    }

    /// `k` folds of near-equal size from a seeded shuffle.
    pub fn k_fold(n: usize, k: usize, seed: u64, t_min: usize, mode: PredictionMode) -> Result<Self> {
        if k == 0 || k > n {
            return Err(Error::Config(format!("cannot split {n} points into {k} folds")));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut folds = vec![Vec::new(); k];
        for (pos, i) in idx.into_iter().enumerate() {
            folds[pos % k].push(i);
        }
        for f in &mut folds {
            f.sort_unstable();
        }
        Ok(Self::from_folds(folds, t_min, mode))
    }

    pub fn from_folds(folds: Vec<Vec<usize>>, t_min: usize, mode: PredictionMode) -> Self {
        CVRequest {
            folds,
            t_min,
            trend: TrendSource::Reestimate,
            variance: VarianceSource::Reestimate,
            rho: RhoSource::Fold,
            mode,
        }
    }

    pub fn with_trend(mut self, trend: TrendSource<T>) -> Self {
        self.trend = trend;
        self
    }

    pub fn with_variance(mut self, variance: VarianceSource<T>) -> Self {
        self.variance = variance;
        self
    }

    pub fn with_rho(mut self, rho: RhoSource) -> Self {
        self.rho = rho;
        self
    }

    fn validate(&self, model: &MultiFidelityModel<T>) -> Result<()> {
        let s = model.n_levels();
        if self.t_min < 1 || self.t_min > s {
            return Err(Error::Config(format!("removal depth {} outside 1..={s}", self.t_min)));
        }
        let n = model.top().data.n();
        let mut seen = vec![false; n];
        for fold in &self.folds {
            if fold.is_empty() {
                return Err(Error::Config("empty fold".into()));
            }
            for &i in fold {
                if i >= n {
                    return Err(Error::Config(format!("fold index {i} outside the {n} top-level points")));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::Config(format!("index {i} appears in more than one fold")));
                }
            }
        }
        if let TrendSource::Fixed(v) = &self.trend {
            if v.len() != s {
                return Err(Error::Shape(format!("{} fixed trend vectors for {s} levels", v.len())));
            }
            for (l, (lambda, level)) in v.iter().zip(model.levels()).enumerate() {
                if lambda.len() != level.fitted.trend_mean.len() {
                    return Err(Error::Shape(format!("level {}: trend of length {}", l + 1, lambda.len())));
                }
            }
        }
        if let VarianceSource::Fixed(v) = &self.variance {
            if v.len() != s {
                return Err(Error::Shape(format!("{} fixed variances for {s} levels", v.len())));
            }
        }
        Ok(())
    }

    fn reestimates_trend(&self) -> bool {
        matches!(self.trend, TrendSource::Reestimate)
    }
}

/// Held-out results of one fold.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldResult<T: Scalar> {
    pub indices: Vec<usize>,
    /// Observed minus predicted, in fold order.
    pub errors: Vec<T>,
    pub variances: Vec<T>,
    /// Trend coefficients used at levels `t_min..=s`.
    pub trend: Vec<DVector<T>>,
    /// Variances used at levels `t_min..=s`.
    pub sigma2: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CVReport<T: Scalar> {
    pub t_min: usize,
    pub mode: PredictionMode,
    pub folds: Vec<FoldResult<T>>,
}

impl<T: Scalar> CVReport<T> {
    pub fn errors(&self) -> impl Iterator<Item = T> + '_ {
        self.folds.iter().flat_map(|f| f.errors.iter().copied())
    }

    pub fn variances(&self) -> impl Iterator<Item = T> + '_ {
        self.folds.iter().flat_map(|f| f.variances.iter().copied())
    }

    /// `(index, error, variance)` for every held-out point, by index.
    pub fn by_index(&self) -> Vec<(usize, T, T)> {
        let mut rows: Vec<_> = self
            .folds
            .iter()
            .flat_map(|f| f.indices.iter().zip(&f.errors).zip(&f.variances).map(|((i, e), v)| (*i, *e, *v)))
            .collect();
        rows.sort_by_key(|r| r.0);
        rows
    }
}

/// Root mean squared cross-validation error over all folds.
pub fn loo_rmse<T: Scalar>(report: &CVReport<T>) -> Result<T> {
    let (sum, count) = report.errors().fold((T::zero(), 0usize), |(s, c), e| (s + e * e, c + 1));
    if count == 0 {
        return Err(Error::Undefined("root mean squared error of an empty report".into()));
    }
    Ok((sum / T::from_usize_lossy(count)).sqrt())
}

/// Indices of the held-out points at each level `t_min..=s`, cheapest
/// first.
fn fold_indices<T: Scalar>(model: &MultiFidelityModel<T>, top: &[usize], t_min: usize) -> Vec<Vec<usize>> {
    let s = model.n_levels();
    let mut out = vec![top.to_vec()];
    for u in (t_min..s).rev() {
        let map = model.nest_map(u + 1);
        let next = out.last().map(|xi: &Vec<usize>| xi.iter().map(|&i| map[i]).collect()).unwrap_or_default();
        out.push(next);
    }
    out.reverse();
    out
}

fn check_fold_size<T: Scalar>(fitted: &FittedLevel<T>, k: usize, level: usize) -> Result<()> {
    let (n, m) = (fitted.n(), fitted.trend_mean.len());
    if n <= m + k {
        return Err(Error::InsufficientData {
            level,
            detail: format!("removing {k} of {n} points leaves too few for {m} trend coefficients"),
        });
    }
    Ok(())
}

/// Closed-form quantities of one level for one fold.
struct LevelFold<T: Scalar> {
    trend: DVector<T>,
    sigma2: T,
    innovation: DVector<T>,
    a_inv_diag: DVector<T>,
    /// `A⁻¹U` and `(HᵀR⁻¹H)_{−ξ}⁻¹`, present when the trend is re-estimated.
    trend_terms: Option<(DMatrix<T>, DMatrix<T>)>,
}

enum TrendChoice<'a, T: Scalar> {
    Reestimate,
    Given(&'a DVector<T>),
}

enum SigmaChoice<T: Scalar> {
    Reestimate,
    Given(T),
}

/// `y = L⁻¹E_ξ` are the whitened columns of the held-out points.
fn level_fold<T: Scalar>(
    fitted: &FittedLevel<T>,
    y: &DMatrix<T>,
    trend: TrendChoice<'_, T>,
    sigma: SigmaChoice<T>,
    level: usize,
) -> Result<LevelFold<T>> {
    let k = y.ncols();
    let n = fitted.n();
    let m = fitted.trend_mean.len();
    let a = symmetrize(y.transpose() * y);
    let af = Factor::new(a).ok_or(Error::IllConditioned { size: k, nugget: fitted.applied_nugget().as_f64() })?;
    let lh = fitted.whitened_h();
    let lz = fitted.whitened_z();

    let (lambda, trend_terms) = match trend {
        TrendChoice::Given(l) => (l.clone(), None),
        TrendChoice::Reestimate => {
            let u = y.transpose() * lh;
            let w = y.transpose() * lz;
            let a_inv_u = af.solve_mat(&u);
            let info = symmetrize(lh.transpose() * lh - u.transpose() * &a_inv_u);
            let rhs = lh.transpose() * lz - a_inv_u.transpose() * &w;
            let gf = Factor::new(info).ok_or_else(|| Error::SingularSystem {
                columns: vec![format!("level {level}: retained experience matrix is rank deficient")],
            })?;
            (gf.solve(&rhs), Some((a_inv_u, gf.inverse())))
        }
    };

    let ly = lz - lh * &lambda;
    let ry = y.transpose() * &ly;
    let innovation = af.solve(&ry);
    let sigma2 = match sigma {
        SigmaChoice::Given(v) => v,
        SigmaChoice::Reestimate => {
            let dof = T::from_usize_lossy(n - m - k);
            (ly.norm_squared() - ry.dot(&innovation)).max(T::zero()) / dof
        }
    };
    let a_inv_diag = af.inverse().diagonal();
    Ok(LevelFold { trend: lambda, sigma2, innovation, a_inv_diag, trend_terms })
}

/// Leave-one-out innovations of a single level with the trend
/// re-estimated for each left-out point.
pub(crate) fn level_loo_errors<T: Scalar>(fitted: &FittedLevel<T>) -> Result<DVector<T>> {
    let n = fitted.n();
    check_fold_size(fitted, 1, 0)?;
    let l_inv = fitted.factor().solve_lower_mat(&DMatrix::identity(n, n));
    let mut out = DVector::zeros(n);
    for i in 0..n {
        let y = l_inv.columns(i, 1).into_owned();
        let fold = level_fold(fitted, &y, TrendChoice::Reestimate, SigmaChoice::Given(T::one()), 0)?;
        out[i] = fold.innovation[0];
    }
    Ok(out)
}

/// Closed-form cross-validation reusing the full-data factorizations.
pub fn fast_cv<T: Scalar>(model: &MultiFidelityModel<T>, req: &CVRequest<T>) -> Result<CVReport<T>> {
    req.validate(model)?;
    for fold in &req.folds {
        for (off, xi) in fold_indices(model, fold, req.t_min).iter().enumerate() {
            check_fold_size(&model.levels()[req.t_min - 1 + off].fitted, xi.len(), req.t_min + off)?;
        }
    }
    let l_inv: Vec<Option<DMatrix<T>>> = model
        .levels()
        .iter()
        .enumerate()
        .map(|(l, level)| {
            (l + 1 >= req.t_min).then(|| {
                let n = level.fitted.n();
                level.fitted.factor().solve_lower_mat(&DMatrix::identity(n, n))
            })
        })
        .collect();
    let top = model.top();
    let mut folds = Vec::with_capacity(req.folds.len());
    for fold in &req.folds {
        let xis = fold_indices(model, fold, req.t_min);
        let k = fold.len();
        let points: Vec<&Vec<T>> = fold.iter().map(|&i| &top.data.design[i]).collect();
        let mut eps = DVector::<T>::zeros(k);
        let mut var = DVector::<T>::zeros(k);
        let (mut trends, mut sigmas) = (Vec::new(), Vec::new());
        for (off, xi) in xis.iter().enumerate() {
            let u = req.t_min + off;
            let level = &model.levels()[u - 1];
            let fitted = &level.fitted;
            let y = l_inv[u - 1].as_ref().map(|li| li.select_columns(xi.iter())).unwrap_or_default();
            let trend = match &req.trend {
                TrendSource::Reestimate => TrendChoice::Reestimate,
                TrendSource::Posterior => TrendChoice::Given(&fitted.trend_mean),
                TrendSource::Fixed(v) => TrendChoice::Given(&v[u - 1]),
            };
            let sigma = match &req.variance {
                VarianceSource::Reestimate => SigmaChoice::Reestimate,
                VarianceSource::PosteriorMean => {
                    SigmaChoice::Given(fitted.sigma2_posterior_mean().map_err(|e| e.at_level(u))?)
                }
                VarianceSource::Fixed(v) => SigmaChoice::Given(v[u - 1]),
            };
            let lf = level_fold(fitted, &y, trend, sigma, u)?;

            let q = fitted.n_adjust();
            let g_test: Option<DMatrix<T>> = level.data.g_basis.as_ref().map(|g| {
                let rows: Vec<_> = points.iter().map(|p| g.eval(p).transpose()).collect();
                DMatrix::from_rows(&rows)
            });
            let rho = match &g_test {
                Some(g) => {
                    let coeffs = match req.rho {
                        RhoSource::Fold => lf.trend.rows(0, q).into_owned(),
                        RhoSource::Full => fitted.rho_coefficients(),
                    };
                    g * coeffs
                }
                None => DVector::zeros(k),
            };

            let mut v_term = DVector::zeros(k);
            if req.mode == PredictionMode::Universal {
                if let Some((a_inv_u, cov)) = &lf.trend_terms {
                    let mut ucal = a_inv_u.clone();
                    if let Some(g) = &g_test {
                        for i in 0..k {
                            for j in 0..q {
                                ucal[(i, j)] -= g[(i, j)] * eps[i];
                            }
                        }
                    }
                    for i in 0..k {
                        let row = ucal.row(i).transpose();
                        v_term[i] = lf.sigma2 * row.dot(&(cov * &row)).max(T::zero());
                    }
                }
            }

            let new_eps = &lf.innovation + rho.component_mul(&eps);
            let new_var = rho.component_mul(&rho).component_mul(&var) + &lf.a_inv_diag * lf.sigma2 + v_term;
            eps = new_eps;
            var = new_var;
            trends.push(lf.trend);
            sigmas.push(lf.sigma2);
        }
        folds.push(FoldResult {
            indices: fold.clone(),
            errors: eps.iter().copied().collect(),
            variances: var.iter().copied().collect(),
            trend: trends,
            sigma2: sigmas,
        });
    }
    Ok(CVReport { t_min: req.t_min, mode: req.mode, folds })
}

/// Cross-validation by refitting trend and variance on the retained
/// points of every fold, with each level's kernel and nugget held fixed.
/// Adjustment factors always come from the refitted trend.
pub fn brute_force_cv<T: Scalar>(model: &MultiFidelityModel<T>, req: &CVRequest<T>) -> Result<CVReport<T>> {
    req.validate(model)?;
    let s = model.n_levels();
    let top = model.top();
    let mut folds = Vec::with_capacity(req.folds.len());
    for fold in &req.folds {
        let xis = fold_indices(model, fold, req.t_min);
        let mut levels: Vec<Level<T>> = model.levels().to_vec();
        let mut sigma2 = model.default_sigma2()?;
        let mut trend_term = vec![false; s];
        let (mut trends, mut sigmas) = (Vec::new(), Vec::new());
        for (off, xi) in xis.iter().enumerate() {
            let u = req.t_min + off;
            let full = &model.levels()[u - 1];
            check_fold_size(&full.fitted, xi.len(), u)?;
            let keep: Vec<usize> = (0..full.data.n()).filter(|i| !xi.contains(i)).collect();
            let data = full.data.subset(&keep);
            let mut fitted = fit_level(u, &data, &full.fitted.kernel, &PriorSpec::NonInformative, NuggetPolicy::Fixed)
                .map_err(|e| e.at_level(u))?;
            fitted = match &req.trend {
                TrendSource::Reestimate => fitted,
                TrendSource::Posterior => fitted.with_trend(full.fitted.trend_mean.clone())?,
                TrendSource::Fixed(v) => fitted.with_trend(v[u - 1].clone())?,
            };
            sigma2[u - 1] = match &req.variance {
                VarianceSource::Reestimate => fitted.sigma2_eml()?,
                VarianceSource::PosteriorMean => full.fitted.sigma2_posterior_mean().map_err(|e| e.at_level(u))?,
                VarianceSource::Fixed(v) => v[u - 1],
            };
            trend_term[u - 1] = req.mode == PredictionMode::Universal && req.reestimates_trend();
            trends.push(fitted.trend_mean.clone());
            sigmas.push(sigma2[u - 1]);
            levels[u - 1] = Level { data, fitted };
        }
        let mut errors = Vec::with_capacity(fold.len());
        let mut variances = Vec::with_capacity(fold.len());
        for &i in fold {
            let p = predict_levels(&levels, &top.data.design[i], &sigma2, &trend_term, req.mode);
            errors.push(top.data.observations[i] - p.mean());
            variances.push(p.variance());
        }
        folds.push(FoldResult { indices: fold.clone(), errors, variances, trend: trends, sigma2: sigmas });
    }
    Ok(CVReport { t_min: req.t_min, mode: req.mode, folds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{nested_instance, Adjustment};
    use crate::{fit, KernelSpec, LevelSpec, ThetaChoice};

    fn two_level() -> MultiFidelityModel<f64> {
        let levels = nested_instance(&[16, 8], 1, 3, Adjustment::Constant).unwrap();
        let specs = levels
            .into_iter()
            .map(|l| LevelSpec::new(l, ThetaChoice::Fixed(KernelSpec::matern52(vec![0.3]).unwrap())))
            .collect();
        fit(specs, &Default::default()).unwrap()
    }

    fn report(errors: &[f64]) -> CVReport<f64> {
        let folds = errors
            .iter()
            .enumerate()
            .map(|(i, e)| FoldResult {
                indices: vec![i],
                errors: vec![*e],
                variances: vec![1.0],
                trend: vec![],
                sigma2: vec![],
            })
            .collect();
        CVReport { t_min: 1, mode: PredictionMode::Simple, folds }
    }

    #[test]
    fn rmse_of_reports() {
        assert_eq!(loo_rmse(&report(&[0.0, 0.0])).unwrap(), 0.0);
        assert!((loo_rmse(&report(&[3.0, 4.0])).unwrap() - 12.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(loo_rmse(&report(&[4.0, 3.0])).unwrap(), loo_rmse(&report(&[3.0, 4.0])).unwrap());
        assert!(loo_rmse(&report(&[])).is_err());
    }

    #[test]
    fn k_fold_partitions_indices() {
        let req = CVRequest::<f64>::k_fold(11, 4, 9, 1, PredictionMode::Simple).unwrap();
        let mut all: Vec<usize> = req.folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..11).collect::<Vec<_>>());
        assert!(req.folds.iter().all(|f| f.len() == 2 || f.len() == 3));
        assert_eq!(req, CVRequest::k_fold(11, 4, 9, 1, PredictionMode::Simple).unwrap());
        assert!(CVRequest::<f64>::k_fold(3, 4, 0, 1, PredictionMode::Simple).is_err());
    }

    #[test]
    fn held_out_points_follow_the_nest_map() {
        let model = two_level();
        let xis = fold_indices(&model, &[2, 5], 1);
        assert_eq!(xis[1], vec![2, 5]);
        let map = model.nest_map(2);
        assert_eq!(xis[0], vec![map[2], map[5]]);
        assert_eq!(fold_indices(&model, &[2, 5], 2), vec![vec![2, 5]]);
    }

    #[test]
    fn rejects_malformed_requests() {
        let model = two_level();
        let bad = [
            CVRequest::from_folds(vec![vec![0], vec![0]], 2, PredictionMode::Simple),
            CVRequest::from_folds(vec![vec![99]], 2, PredictionMode::Simple),
            CVRequest::from_folds(vec![vec![]], 2, PredictionMode::Simple),
            CVRequest::loo(8, 3, PredictionMode::Simple),
            CVRequest::loo(8, 2, PredictionMode::Simple).with_variance(VarianceSource::Fixed(vec![1.0])),
        ];
        for req in &bad {
            assert!(fast_cv(&model, req).is_err(), "{req:?}");
        }
        let too_big = CVRequest::from_folds(vec![(0..6).collect()], 2, PredictionMode::Simple);
        assert!(matches!(fast_cv(&model, &too_big), Err(Error::InsufficientData { level: 2, .. })));
        assert!(matches!(brute_force_cv(&model, &too_big), Err(Error::InsufficientData { level: 2, .. })));
    }

    #[test]
    fn empty_fold_list_gives_empty_report() {
        let model = two_level();
        let req = CVRequest::from_folds(vec![], 1, PredictionMode::Universal);
        assert!(fast_cv(&model, &req).unwrap().folds.is_empty());
        assert!(brute_force_cv(&model, &req).unwrap().folds.is_empty());
    }

    #[test]
    fn single_level_loo_matches_fast_cv() {
        let model = two_level();
        let base = &model.levels()[0].fitted;
        let errs = level_loo_errors(base).unwrap();
        let req = CVRequest::loo(base.n(), 1, PredictionMode::Simple);
        let one = MultiFidelityModel::from_levels(vec![model.levels()[0].clone()]).unwrap();
        let report = fast_cv(&one, &req).unwrap();
        for (i, e, _) in report.by_index() {
            assert!((errs[i] - e).abs() <= 1e-10 * (1.0 + e.abs()));
        }
    }
}
