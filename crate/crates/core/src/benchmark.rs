//! Co-kriging versus kriging on an analytic two-level problem, repeated
//! over random nested designs.

use std::thread;

use crate::design::{base_design, nest, DesignMethod, DesignRequest};
use crate::gp::{BasisSpec, LevelData, OptimizeOptions};
use crate::io::Table;
use crate::metrics::{rmse, EvalSet};
use crate::model::{fit, LevelSpec, PredictionMode, ThetaChoice};
use crate::{Error, Result};

/// `(6x − 2)² sin(12x − 4)`.
pub fn forrester_high(x: f64) -> f64 {
    (6.0 * x - 2.0).powi(2) * (12.0 * x - 4.0).sin()
}

/// `0.5 f_high(x) + 10(x − 0.5) − 5`.
pub fn forrester_low(x: f64) -> f64 {
    0.5 * forrester_high(x) + 10.0 * (x - 0.5) - 5.0
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Problem {
    /// The one-dimensional pair on `[0, 1]`.
    #[default]
    Forrester,
    /// A two-dimensional extension on `[0, 1]²`.
    Forrester2d,
}

impl Problem {
    pub fn dim(self) -> usize {
        match self {
            Problem::Forrester => 1,
            Problem::Forrester2d => 2,
        }
    }

    pub fn high(self, x: &[f64]) -> f64 {
        match self {
            Problem::Forrester => forrester_high(x[0]),
            Problem::Forrester2d => forrester_high(x[0]) + 2.0 * (3.0 * x[1]).sin() * x[0],
        }
    }

    pub fn low(self, x: &[f64]) -> f64 {
        match self {
            Problem::Forrester => forrester_low(x[0]),
            Problem::Forrester2d => 0.5 * self.high(x) + 10.0 * (x[0] - 0.5) - 4.0 * x[1] - 3.0,
        }
    }

    /// 175 test points: a regular grid in 1-D, a fixed Latin hypercube in 2-D.
    pub fn test_points(self) -> Vec<Vec<f64>> {
        const N: usize = 175;
        match self {
            Problem::Forrester => (0..N).map(|i| vec![i as f64 / (N - 1) as f64]).collect(),
            Problem::Forrester2d => base_design(N, &[(0.0, 1.0); 2], DesignMethod::Lhs, 175).unwrap_or_default(),
        }
    }
}

impl std::str::FromStr for Problem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forrester" | "forrester1d" => Ok(Problem::Forrester),
            "forrester2d" => Ok(Problem::Forrester2d),
            other => Err(Error::Config(format!("unknown benchmark problem `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkConfig {
    pub problem: Problem,
    pub n1: usize,
    pub n2_values: Vec<usize>,
    pub repeats: usize,
    pub seed: u64,
    /// Starts of the length-scale search per level.
    pub restarts: usize,
    pub threads: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            problem: Problem::Forrester,
            n1: 25,
            n2_values: vec![5, 10, 15, 20, 25],
            repeats: 100,
            seed: 0,
            restarts: 5,
            threads: thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

/// Mean and 5 % / 95 % quantiles.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Spread {
    pub mean: f64,
    pub q05: f64,
    pub q95: f64,
}

impl Spread {
    fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Spread { mean: v.iter().sum::<f64>() / v.len() as f64, q05: quantile(&v, 0.05), q95: quantile(&v, 0.95) }
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Test-set RMSE of both methods for every repeat at one `n₂`.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkRow {
    pub n2: usize,
    pub cokriging: Vec<f64>,
    pub kriging: Vec<f64>,
}

impl BenchmarkRow {
    pub fn cokriging_spread(&self) -> Spread {
        Spread::of(&self.cokriging)
    }

    pub fn kriging_spread(&self) -> Spread {
        Spread::of(&self.kriging)
    }

    /// Fraction of repeats where co-kriging has the smaller error.
    pub fn win_fraction(&self) -> f64 {
        let wins = self.cokriging.iter().zip(&self.kriging).filter(|(c, k)| c < k).count();
        wins as f64 / self.cokriging.len() as f64
    }

    /// Kriging mean RMSE minus co-kriging mean RMSE.
    pub fn mean_gap(&self) -> f64 {
        self.kriging_spread().mean - self.cokriging_spread().mean
    }
}

/// Test-set RMSE of co-kriging and kriging for one random design.
pub fn run_once(problem: Problem, n1: usize, n2: usize, seed: u64, restarts: usize) -> Result<(f64, f64)> {
    let d = problem.dim();
    let designs =
        nest(&DesignRequest { sizes: vec![n1, n2], bounds: vec![(0.0, 1.0); d], method: DesignMethod::Lhs, seed })?;
    let z1: Vec<f64> = designs[0].iter().map(|x| problem.low(x)).collect();
    let z2: Vec<f64> = designs[1].iter().map(|x| problem.high(x)).collect();
    let opts = OptimizeOptions { restarts, seed, ..OptimizeOptions::default() };

    let co = fit(
        vec![
            LevelSpec::new(LevelData::base(designs[0].clone(), z1, BasisSpec::constant()), ThetaChoice::Auto),
            LevelSpec::new(
                LevelData::upper(designs[1].clone(), z2.clone(), BasisSpec::constant(), BasisSpec::constant(), None),
                ThetaChoice::Auto,
            ),
        ],
        &opts,
    )?;
    let kr = fit(
        vec![LevelSpec::new(LevelData::base(designs[1].clone(), z2, BasisSpec::constant()), ThetaChoice::Auto)],
        &opts,
    )?;

    let test = problem.test_points();
    let truth: Vec<f64> = test.iter().map(|x| problem.high(x)).collect();
    let score = |model: &crate::model::MultiFidelityModel<f64>| -> Result<f64> {
        let means = model.predict_batch(&test, PredictionMode::Simple)?.iter().map(|p| p.mean()).collect();
        rmse(&EvalSet::means_only(truth.clone(), means)?)
    };
    Ok((score(&co)?, score(&kr)?))
}

/// `(n₂ index, repeat, co-kriging RMSE, kriging RMSE)`.
type Outcome = (usize, usize, f64, f64);

/// Runs every `(n₂, repeat)` pair. Repeat `r` uses seed `seed + r` for
/// every `n₂`, so the rows are paired.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<Vec<BenchmarkRow>> {
    if cfg.repeats == 0 || cfg.n2_values.is_empty() {
        return Err(Error::Config("benchmark needs at least one repeat and one n2 value".into()));
    }
    if let Some(n2) = cfg.n2_values.iter().find(|n2| **n2 > cfg.n1 || **n2 < 3) {
        return Err(Error::Config(format!("n2 = {n2} must lie in 3..={}", cfg.n1)));
    }
    let jobs: Vec<(usize, usize)> =
        (0..cfg.n2_values.len()).flat_map(|i| (0..cfg.repeats).map(move |r| (i, r))).collect();
    let threads = cfg.threads.clamp(1, jobs.len());
    let chunk = jobs.len().div_ceil(threads);
    let results: Vec<Result<Vec<Outcome>>> = thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|&(i, r)| {
                            let (c, k) =
                                run_once(cfg.problem, cfg.n1, cfg.n2_values[i], cfg.seed + r as u64, cfg.restarts)?;
                            Ok((i, r, c, k))
                        })
                        .collect()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Undefined("worker panicked".into()))))
            .collect()
    });
    let mut rows: Vec<BenchmarkRow> = cfg
        .n2_values
        .iter()
        .map(|&n2| BenchmarkRow { n2, cokriging: vec![0.0; cfg.repeats], kriging: vec![0.0; cfg.repeats] })
        .collect();
    for part in results {
        for (i, r, c, k) in part? {
            rows[i].cokriging[r] = c;
            rows[i].kriging[r] = k;
        }
    }
    Ok(rows)
}

/// Plot-ready summary with one line per `n₂`.
pub fn summary_table(rows: &[BenchmarkRow]) -> Table {
    let header = [
        "n2",
        "cokriging_mean",
        "cokriging_q05",
        "cokriging_q95",
        "kriging_mean",
        "kriging_q05",
        "kriging_q95",
        "cokriging_win_fraction",
    ];
    Table {
        header: header.iter().map(|h| h.to_string()).collect(),
        rows: rows
            .iter()
            .map(|r| {
                let (c, k) = (r.cokriging_spread(), r.kriging_spread());
                vec![r.n2 as f64, c.mean, c.q05, c.q95, k.mean, k.q05, k.q95, r.win_fraction()]
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forrester_values() {
        assert!((forrester_high(0.0) - 4.0 * (-4.0f64).sin()).abs() < 1e-12);
        assert!((forrester_low(0.5) - 0.5 * forrester_high(0.5) + 5.0).abs() < 1e-12);
        assert_eq!(Problem::Forrester.test_points().len(), 175);
    }

    #[test]
    fn quantiles_interpolate() {
        let s = Spread::of(&(0..=100).map(f64::from).collect::<Vec<_>>());
        assert_eq!((s.mean, s.q05, s.q95), (50.0, 5.0, 95.0));
    }

    #[test]
    fn small_run_is_deterministic() {
        let cfg = BenchmarkConfig { n2_values: vec![5, 25], repeats: 3, restarts: 2, threads: 2, ..Default::default() };
        let a = run_benchmark(&cfg).unwrap();
        let b = run_benchmark(&BenchmarkConfig { threads: 1, ..cfg }).unwrap();
        assert_eq!(a, b);
    }
}
