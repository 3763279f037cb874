use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::estimate::{concentrated_reml, fit_level, NuggetPolicy};
use super::level::{LevelData, PriorSpec};
use crate::kernels::{KernelFamily, KernelSpec, DEFAULT_NUGGET};
use crate::optim::NelderMead;
use crate::{Error, Result, Scalar};

/// Criterion minimized over the length scales.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Objective {
    /// Concentrated restricted log-likelihood.
    #[default]
    Reml,
    /// Sum of squared closed-form leave-one-out errors, trend re-estimated.
    LooCv,
}

impl Objective {
    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Reml => "reml",
            Objective::LooCv => "loo_cv",
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "reml" => Ok(Objective::Reml),
            "loo_cv" | "loo-cv" | "loo" => Ok(Objective::LooCv),
            other => Err(Error::Config(format!("unknown objective `{other}` (expected reml or loo_cv)"))),
        }
    }
}

/// Search box for each length scale, as multiples of the input range
/// along that dimension. Dimensions with zero range use a unit range.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThetaBounds {
    pub lower_factor: f64,
    pub upper_factor: f64,
}

impl Default for ThetaBounds {
    fn default() -> Self {
        ThetaBounds { lower_factor: 1e-2, upper_factor: 1e2 }
    }
}

impl ThetaBounds {
    fn validate(&self) -> Result<()> {
        let ok = self.lower_factor.is_finite()
            && self.upper_factor.is_finite()
            && self.lower_factor > 0.0
            && self.upper_factor > self.lower_factor;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "length-scale bounds [{}, {}] must be positive, finite and increasing",
                self.lower_factor, self.upper_factor
            )))
        }
    }

    /// Per-dimension `(lower, upper)` bounds in log space.
    pub fn log_box<T: Scalar>(&self, design: &[Vec<T>]) -> Vec<(f64, f64)> {
        let d = design.first().map_or(0, Vec::len);
        (0..d)
            .map(|j| {
                let (lo, hi) = design.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                    let v = x[j].as_f64();
                    (lo.min(v), hi.max(v))
                });
                let range = if hi > lo { hi - lo } else { 1.0 };
                ((self.lower_factor * range).ln(), (self.upper_factor * range).ln())
            })
            .collect()
    }
}

/// Settings of the multistart length-scale search.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizeOptions {
    pub objective: Objective,
    pub bounds: ThetaBounds,
    pub restarts: usize,
    pub seed: u64,
    pub family: KernelFamily,
    pub nugget: f64,
    /// Objective evaluations per start.
    pub max_evals: usize,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        OptimizeOptions {
            objective: Objective::Reml,
            bounds: ThetaBounds::default(),
            restarts: 10,
            seed: 0,
            family: KernelFamily::Matern52,
            nugget: DEFAULT_NUGGET,
            max_evals: 400,
        }
    }
}

fn kernel_at<T: Scalar>(log_theta: &[f64], opts: &OptimizeOptions) -> Result<KernelSpec<T>> {
    let theta = log_theta.iter().map(|l| T::lit(l.exp())).collect();
    KernelSpec::new(opts.family, theta, T::lit(opts.nugget))
}

/// Objective value at the given length scales (lower is better).
pub fn objective_value<T: Scalar>(level: &LevelData<T>, kernel: &KernelSpec<T>, objective: Objective) -> Result<f64> {
    match objective {
        Objective::Reml => Ok(concentrated_reml(level, kernel)?.as_f64()),
        Objective::LooCv => {
            let lvl = if level.g_basis.is_some() { 2 } else { 1 };
            let fitted = fit_level(lvl, level, kernel, &PriorSpec::NonInformative, NuggetPolicy::Escalate)?;
            let errors = crate::crossval::level_loo_errors(&fitted)?;
            Ok(errors.norm_squared().as_f64())
        }
    }
}

fn log_starts(bounds: &[(f64, f64)], opts: &OptimizeOptions) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    crate::design::unit_lhs(opts.restarts, bounds.len(), &mut rng)
        .into_iter()
        .map(|u| u.iter().zip(bounds).map(|(u, (lo, hi))| lo + u * (hi - lo)).collect())
        .collect()
}

/// Length scales at which [`optimize_theta`] starts its local searches.
pub fn start_points<T: Scalar>(level: &LevelData<T>, opts: &OptimizeOptions) -> Vec<Vec<f64>> {
    log_starts(&opts.bounds.log_box(&level.design), opts)
        .into_iter()
        .map(|x| x.iter().map(|l| l.exp()).collect())
        .collect()
}

/// Multistart simplex search for the length scales of one level, in
/// log space, from a Latin hypercube of starting points.
pub fn optimize_theta<T: Scalar>(level: &LevelData<T>, opts: &OptimizeOptions) -> Result<KernelSpec<T>> {
    opts.bounds.validate()?;
    if opts.restarts == 0 {
        return Err(Error::Config("restarts must be at least 1".into()));
    }
    if level.n() == 0 {
        return Err(Error::InsufficientData { level: 0, detail: "empty design".into() });
    }
    let bounds = opts.bounds.log_box(&level.design);
    let solver = NelderMead {
        lower: bounds.iter().map(|b| b.0).collect(),
        upper: bounds.iter().map(|b| b.1).collect(),
        max_evals: opts.max_evals,
        ftol: 1e-10,
        xtol: 1e-6,
    };

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut last_error = None;
    for start in log_starts(&bounds, opts) {
        let mut eval =
            |x: &[f64]| match kernel_at::<T>(x, opts).and_then(|k| objective_value(level, &k, opts.objective)) {
                Ok(v) => v,
                Err(e) => {
                    last_error = Some(e);
                    f64::INFINITY
                }
            };
        let start_value = eval(&start);
        let found = solver.minimize(&start, &mut eval);
        let candidate = if found.value <= start_value { (found.value, found.x) } else { (start_value, start) };
        if candidate.0.is_finite() && best.as_ref().is_none_or(|b| candidate.0 < b.0) {
            best = Some(candidate);
        }
    }
    match best {
        Some((_, x)) => kernel_at(&x, opts),
        None => Err(Error::OptimizationFailed(format!(
            "all {} starts failed; last error: {}",
            opts.restarts,
            last_error.map_or_else(|| "objective not finite".to_string(), |e| e.to_string())
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::BasisSpec;

    fn level() -> LevelData<f64> {
        let design: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64 / 11.0]).collect();
        let z = design.iter().map(|x| (4.0 * x[0]).sin() + 0.3 * x[0]).collect();
        LevelData::base(design, z, BasisSpec::constant())
    }

    #[test]
    fn objective_names() {
        assert_eq!("loo_cv".parse::<Objective>().unwrap(), Objective::LooCv);
        assert_eq!(Objective::Reml.as_str().parse::<Objective>().unwrap(), Objective::Reml);
        assert!("ml".parse::<Objective>().is_err());
    }

    #[test]
    fn box_scales_with_input_range() {
        let design = vec![vec![0.0, 3.0], vec![2.0, 3.0]];
        let b = ThetaBounds::default().log_box(&design);
        assert!((b[0].0 - 0.02f64.ln()).abs() < 1e-12 && (b[0].1 - 200f64.ln()).abs() < 1e-12);
        assert!((b[1].0 - 0.01f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_settings() {
        let l = level();
        let zero = OptimizeOptions { restarts: 0, ..Default::default() };
        assert!(optimize_theta(&l, &zero).is_err());
        let inverted = OptimizeOptions { bounds: ThetaBounds { lower_factor: 2.0, upper_factor: 1.0 }, ..zero };
        assert!(optimize_theta(&l, &inverted).is_err());
    }

    #[test]
    fn result_stays_in_bounds_and_is_reproducible() {
        let l = level();
        for objective in [Objective::Reml, Objective::LooCv] {
            let opts = OptimizeOptions { objective, restarts: 3, seed: 5, ..Default::default() };
            let a: KernelSpec<f64> = optimize_theta(&l, &opts).unwrap();
            let b: KernelSpec<f64> = optimize_theta(&l, &opts).unwrap();
            assert_eq!(a, b);
            let t = a.theta()[0];
            assert!((0.01 * (1.0 - 1e-9)..=100.0 * (1.0 + 1e-9)).contains(&t), "{t}");
        }
    }
}
