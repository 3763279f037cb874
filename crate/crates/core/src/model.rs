//! Recursive multi-level model: sequential fitting and co-kriging
//! prediction.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;

use crate::gp::{fit_level, optimize_theta, FittedLevel, LevelData, NuggetPolicy, OptimizeOptions, PriorSpec};
use crate::kernels::KernelSpec;
use crate::{Error, Result, Scalar};

/// Absolute per-coordinate tolerance for matching design points across
/// levels.
pub const NEST_TOLERANCE: f64 = 1e-12;

/// Which variance formula a prediction uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PredictionMode {
    /// Trend and adjustment coefficients treated as known; fixed variances.
    #[default]
    Simple,
    /// Trend uncertainty integrated over its posterior.
    Universal,
}

impl PredictionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PredictionMode::Simple => "simple",
            PredictionMode::Universal => "universal",
        }
    }
}

impl fmt::Display for PredictionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PredictionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "simple" => Ok(PredictionMode::Simple),
            "universal" => Ok(PredictionMode::Universal),
            other => Err(Error::Config(format!("unknown prediction mode `{other}` (expected simple or universal)"))),
        }
    }
}

/// Length scales of one level: given, or estimated.
#[derive(Clone, Debug, PartialEq)]
pub enum ThetaChoice<T: Scalar> {
    Fixed(KernelSpec<T>),
    Auto,
}

/// One level to be fitted.
#[derive(Clone, Debug)]
pub struct LevelSpec<T: Scalar> {
    pub data: LevelData<T>,
    pub prior: PriorSpec<T>,
    pub theta: ThetaChoice<T>,
}

impl<T: Scalar> LevelSpec<T> {
    pub fn new(data: LevelData<T>, theta: ThetaChoice<T>) -> Self {
        LevelSpec { data, prior: PriorSpec::NonInformative, theta }
    }

    pub fn with_prior(mut self, prior: PriorSpec<T>) -> Self {
        self.prior = prior;
        self
    }
}

/// A fitted level together with its data.
#[derive(Clone, Debug)]
pub struct Level<T: Scalar> {
    pub data: LevelData<T>,
    pub fitted: FittedLevel<T>,
}

/// Ordered fitted levels, cheapest first, with the position of every
/// design point of level `t` inside the design of level `t − 1`.
#[derive(Clone, Debug)]
pub struct MultiFidelityModel<T: Scalar> {
    levels: Vec<Level<T>>,
    nest_maps: Vec<Vec<usize>>,
    warnings: Vec<String>,
}

/// Index in `coarse` of every point of `fine`; `level` is the one-based
/// level of `fine`.
pub fn nest_map<T: Scalar>(fine: &[Vec<T>], coarse: &[Vec<T>], level: usize) -> Result<Vec<usize>> {
    let tol = T::lit(NEST_TOLERANCE);
    let mut used = vec![false; coarse.len()];
    let mut map = Vec::with_capacity(fine.len());
    for (i, x) in fine.iter().enumerate() {
        let found = coarse
            .iter()
            .enumerate()
            .position(|(j, y)| !used[j] && x.len() == y.len() && x.iter().zip(y).all(|(a, b)| (*a - *b).abs() <= tol));
        match found {
            Some(j) => {
                used[j] = true;
                map.push(j);
            }
            None => {
                let coords = x.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ");
                return Err(Error::Nesting { level, index: i, coords });
            }
        }
    }
    Ok(map)
}

/// Fits the levels in order, estimating length scales where requested.
pub fn fit<T: Scalar>(specs: Vec<LevelSpec<T>>, options: &OptimizeOptions) -> Result<MultiFidelityModel<T>> {
    if specs.is_empty() {
        return Err(Error::Structural("a model needs at least one level".into()));
    }
    let mut levels: Vec<Level<T>> = Vec::with_capacity(specs.len());
    let mut nest_maps = Vec::new();
    let mut warnings = Vec::new();
    for (idx, spec) in specs.into_iter().enumerate() {
        let t = idx + 1;
        let mut data = spec.data;
        if let Some(below) = levels.last() {
            let map = nest_map(&data.design, &below.data.design, t)?;
            data.lower_observations = Some(lower_from_map(&data, &below.data, &map, t)?);
            nest_maps.push(map);
        }
        data.validate(t)?;
        let kernel = match spec.theta {
            ThetaChoice::Fixed(k) => k,
            ThetaChoice::Auto => {
                let opts = OptimizeOptions { seed: options.seed.wrapping_add(idx as u64), ..options.clone() };
                optimize_theta(&data, &opts).map_err(|e| e.at_level(t))?
            }
        };
        let fitted = fit_level(t, &data, &kernel, &spec.prior, NuggetPolicy::Escalate).map_err(|e| e.at_level(t))?;
        if fitted.a < T::lit(1.5) {
            warnings.push(format!(
                "level {t}: posterior shape a = {} < 1.5; universal variances are unstable or undefined",
                fitted.a
            ));
        }
        levels.push(Level { data, fitted });
    }
    Ok(MultiFidelityModel { levels, nest_maps, warnings })
}

fn lower_from_map<T: Scalar>(data: &LevelData<T>, below: &LevelData<T>, map: &[usize], t: usize) -> Result<DVector<T>> {
    let lower = DVector::from_iterator(map.len(), map.iter().map(|&j| below.observations[j]));
    if let Some(given) = &data.lower_observations {
        if given.len() != lower.len() {
            return Err(Error::Shape(format!(
                "level {t}: {} lower-level observations for {} points",
                given.len(),
                lower.len()
            )));
        }
        for (i, (a, b)) in given.iter().zip(lower.iter()).enumerate() {
            if (*a - *b).abs() > T::lit(1e-12) * (T::one() + b.abs()) {
                return Err(Error::Structural(format!(
                    "level {t}: point {i} gives z_lower = {a} but level {} observed {b} there",
                    t - 1
                )));
            }
        }
    }
    Ok(lower)
}

impl<T: Scalar> MultiFidelityModel<T> {
    /// Assembles a model from already fitted levels, checking nesting and
    /// the lower-level observations.
    pub fn from_levels(levels: Vec<Level<T>>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Structural("a model needs at least one level".into()));
        }
        let mut nest_maps = Vec::new();
        for t in 1..levels.len() {
            let map = nest_map(&levels[t].data.design, &levels[t - 1].data.design, t + 1)?;
            if levels[t].data.lower_observations.is_none() {
                return Err(Error::Structural(format!("level {}: missing lower-level observations", t + 1)));
            }
            lower_from_map(&levels[t].data, &levels[t - 1].data, &map, t + 1)?;
            nest_maps.push(map);
        }
        Ok(MultiFidelityModel { levels, nest_maps, warnings: Vec::new() })
    }

    pub fn levels(&self) -> &[Level<T>] {
        &self.levels
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn dim(&self) -> usize {
        self.levels[0].data.dim()
    }

    pub fn top(&self) -> &Level<T> {
        &self.levels[self.levels.len() - 1]
    }

    /// Positions of level `t`'s points (one-based, `t ≥ 2`) in level `t − 1`.
    pub fn nest_map(&self, t: usize) -> &[usize] {
        &self.nest_maps[t - 2]
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub(crate) fn push_warning(&mut self, w: String) {
        self.warnings.push(w);
    }

    /// `Q_t / (2a_t)` for every level.
    pub fn default_sigma2(&self) -> Result<Vec<T>> {
        self.levels.iter().map(|l| l.fitted.sigma2_eml()).collect()
    }

    /// Simple co-kriging with the given per-level variances.
    pub fn predict_simple(&self, x: &[T], sigma2: &[T]) -> Result<Prediction<T>> {
        self.check_point(x)?;
        self.check_sigma2(sigma2)?;
        let trend = vec![false; self.levels.len()];
        Ok(predict_levels(&self.levels, x, sigma2, &trend, PredictionMode::Simple))
    }

    /// Universal co-kriging with variances at their posterior means.
    pub fn predict_universal(&self, x: &[T]) -> Result<Prediction<T>> {
        self.check_point(x)?;
        let sigma2 = self.universal_sigma2()?;
        let trend = vec![true; self.levels.len()];
        Ok(predict_levels(&self.levels, x, &sigma2, &trend, PredictionMode::Universal))
    }

    /// Prediction with the default variances of `mode`.
    pub fn predict(&self, x: &[T], mode: PredictionMode) -> Result<Prediction<T>> {
        match mode {
            PredictionMode::Simple => self.predict_simple(x, &self.default_sigma2()?),
            PredictionMode::Universal => self.predict_universal(x),
        }
    }

    pub fn predict_batch(&self, points: &[Vec<T>], mode: PredictionMode) -> Result<Vec<Prediction<T>>> {
        let (sigma2, trend) = match mode {
            PredictionMode::Simple => (self.default_sigma2()?, false),
            PredictionMode::Universal => (self.universal_sigma2()?, true),
        };
        let trend = vec![trend; self.levels.len()];
        points
            .iter()
            .map(|x| {
                self.check_point(x)?;
                Ok(predict_levels(&self.levels, x, &sigma2, &trend, mode))
            })
            .collect()
    }

    fn universal_sigma2(&self) -> Result<Vec<T>> {
        self.levels
            .iter()
            .enumerate()
            .map(|(i, l)| {
                l.fitted.sigma2_posterior_mean().map_err(|e| match e {
                    Error::DegeneratePosterior(m) => Error::DegeneratePosterior(format!("level {}: {m}", i + 1)),
                    other => other,
                })
            })
            .collect()
    }

    fn check_point(&self, x: &[T]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!(
                "point of dimension {} for a model of dimension {}",
                x.len(),
                self.dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("query point has a non-finite coordinate".into()));
        }
        Ok(())
    }

    fn check_sigma2(&self, sigma2: &[T]) -> Result<()> {
        if sigma2.len() != self.levels.len() {
            return Err(Error::Shape(format!("{} variances for {} levels", sigma2.len(), self.levels.len())));
        }
        if let Some((i, s)) = sigma2.iter().enumerate().find(|(_, s)| !(**s >= T::zero() && s.is_finite())) {
            return Err(Error::InvalidHyperparameter(format!("level {} variance {s} must be nonnegative", i + 1)));
        }
        Ok(())
    }
}

/// Mean, variance and adjustment factor at one level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevelPrediction<T: Scalar> {
    pub mean: T,
    pub variance: T,
    /// `ρ_{t−1}(x)`; `None` at level 1.
    pub rho: Option<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction<T: Scalar> {
    pub mode: PredictionMode,
    pub levels: Vec<LevelPrediction<T>>,
}

impl<T: Scalar> Prediction<T> {
    /// Prediction of the most accurate level.
    pub fn top(&self) -> &LevelPrediction<T> {
        &self.levels[self.levels.len() - 1]
    }

    pub fn mean(&self) -> T {
        self.top().mean
    }

    pub fn variance(&self) -> T {
        self.top().variance
    }
}

/// Recursion shared by every prediction path. `sigma2[t]` multiplies the
/// kriging and trend terms of level `t`; `trend_term[t]` adds the trend
/// uncertainty of level `t`.
pub(crate) fn predict_levels<T: Scalar>(
    levels: &[Level<T>],
    x: &[T],
    sigma2: &[T],
    trend_term: &[bool],
    mode: PredictionMode,
) -> Prediction<T> {
    let mut out = Vec::with_capacity(levels.len());
    let mut below: Option<(T, T)> = None;
    for (t, level) in levels.iter().enumerate() {
        let fit = &level.fitted;
        let r = fit.kernel.cross_correlation(x, &level.data.design);
        let w = fit.factor().solve_lower(&r);
        let f = level.data.f_basis.eval(x);
        let q = fit.n_adjust();
        let beta = fit.trend_mean.rows(q, f.len());

        let (rho, scaled_mean, scaled_var, h_top) = match (&level.data.g_basis, below) {
            (Some(g_basis), Some((m, v))) => {
                let g = g_basis.eval(x);
                let rho = g.dot(&fit.trend_mean.rows(0, q));
                (Some(rho), rho * m, rho * rho * v, g * m)
            }
            _ => (None, T::zero(), T::zero(), DVector::zeros(0)),
        };
        let mean = scaled_mean + f.dot(&beta) + w.dot(fit.whitened_residual());
        let spread = (fit.kernel.self_correlation() - w.norm_squared()).max(T::zero());
        let mut variance = scaled_var + sigma2[t] * spread;
        if trend_term[t] {
            let mut h = DVector::zeros(q + f.len());
            h.rows_mut(0, q).copy_from(&h_top);
            h.rows_mut(q, f.len()).copy_from(&f);
            let u = h - fit.whitened_h().transpose() * &w;
            let quad = u.dot(&(&fit.trend_cov_scale * &u));
            variance += sigma2[t] * quad.max(T::zero());
        }
        below = Some((mean, variance));
        out.push(LevelPrediction { mean, variance, rho });
    }
    Prediction { mode, levels: out }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::BasisSpec;

    fn kernel() -> ThetaChoice<f64> {
        ThetaChoice::Fixed(KernelSpec::matern52(vec![0.3]).unwrap())
    }

    fn grid(n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|i| vec![i as f64 / (n - 1) as f64]).collect()
    }

    fn specs(n1: usize, top: &[usize]) -> Vec<LevelSpec<f64>> {
        let d1 = grid(n1);
        let z1: Vec<f64> = d1.iter().map(|x| (5.0 * x[0]).sin()).collect();
        let d2: Vec<Vec<f64>> = top.iter().map(|&i| d1[i].clone()).collect();
        let z2: Vec<f64> = d2.iter().map(|x| 1.5 * (5.0 * x[0]).sin() + x[0]).collect();
        vec![
            LevelSpec::new(LevelData::base(d1, z1, BasisSpec::constant()), kernel()),
            LevelSpec::new(LevelData::upper(d2, z2, BasisSpec::constant(), BasisSpec::constant(), None), kernel()),
        ]
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("Universal".parse::<PredictionMode>().unwrap(), PredictionMode::Universal);
        assert_eq!(PredictionMode::Simple.to_string(), "simple");
        assert!("joint".parse::<PredictionMode>().is_err());
    }

    #[test]
    fn nest_map_finds_each_point_once() {
        let coarse = vec![vec![0.0], vec![0.5], vec![0.5], vec![1.0]];
        assert_eq!(nest_map(&[vec![0.5], vec![0.5]], &coarse, 2).unwrap(), vec![1, 2]);
        assert_eq!(nest_map(&[vec![1.0 + 1e-13]], &coarse, 2).unwrap(), vec![3]);
        match nest_map(&[vec![0.0], vec![0.25]], &coarse, 3) {
            Err(Error::Nesting { level: 3, index: 1, coords }) => assert_eq!(coords, "0.25"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn fit_fills_lower_observations() {
        let model = fit(specs(9, &[0, 4, 8]), &OptimizeOptions::default()).unwrap();
        assert_eq!(model.nest_map(2), &[0, 4, 8]);
        let lower = model.levels()[1].data.lower_observations.as_ref().unwrap();
        for (k, &j) in model.nest_map(2).iter().enumerate() {
            assert_eq!(lower[k], model.levels()[0].data.observations[j]);
        }
    }

    #[test]
    fn inconsistent_lower_observations_are_rejected() {
        let mut s = specs(9, &[0, 4, 8]);
        s[1].data.lower_observations = Some(DVector::from_vec(vec![0.0, 0.0, 0.0]));
        assert!(matches!(fit(s, &OptimizeOptions::default()), Err(Error::Structural(_))));
    }

    #[test]
    fn small_top_level_warns_and_blocks_universal() {
        // n = 3 with two trend terms gives a = 1/2.
        let model = fit(specs(9, &[0, 4, 8]), &OptimizeOptions::default()).unwrap();
        assert_eq!(model.warnings().len(), 1);
        assert!(model.warnings()[0].starts_with("level 2"));
        assert!(model.predict(&[0.3], PredictionMode::Simple).is_ok());
        match model.predict(&[0.3], PredictionMode::Universal) {
            Err(Error::DegeneratePosterior(m)) => assert!(m.starts_with("level 2")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn shape_checks() {
        let model = fit(specs(9, &[0, 2, 4, 6, 8]), &OptimizeOptions::default()).unwrap();
        assert!(model.predict(&[0.1, 0.2], PredictionMode::Simple).is_err());
        assert!(model.predict(&[f64::NAN], PredictionMode::Simple).is_err());
        assert!(model.predict_simple(&[0.1], &[1.0]).is_err());
        assert!(model.predict_simple(&[0.1], &[1.0, -1.0]).is_err());
        let p = model.predict(&[0.1], PredictionMode::Simple).unwrap();
        assert_eq!(p.levels.len(), 2);
        assert!(p.levels[0].rho.is_none() && p.levels[1].rho.is_some());
    }
}
