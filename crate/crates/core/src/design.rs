//! Space-filling base designs and nested multi-level designs.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

const MAXIMIN_RESTARTS: usize = 20;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DesignMethod {
    /// Latin hypercube sample.
    #[default]
    Lhs,
    /// Best of several Latin hypercubes by minimum pairwise distance,
    /// refined by coordinate swaps.
    MaximinLhs,
    /// Independent uniform points.
    Random,
}

impl DesignMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            DesignMethod::Lhs => "lhs",
            DesignMethod::MaximinLhs => "maximin_lhs",
            DesignMethod::Random => "random",
        }
    }
}

impl fmt::Display for DesignMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DesignMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "lhs" => Ok(DesignMethod::Lhs),
            "maximin_lhs" | "maximin" => Ok(DesignMethod::MaximinLhs),
            "random" => Ok(DesignMethod::Random),
            other => Err(Error::Config(format!("unknown design method `{other}`"))),
        }
    }
}

/// Sizes of a nested design, cheapest level first: `sizes[0] = n₁ ≥ … ≥ n_s`.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignRequest {
    pub sizes: Vec<usize>,
    pub bounds: Vec<(f64, f64)>,
    pub method: DesignMethod,
    pub seed: u64,
}

fn check_bounds(bounds: &[(f64, f64)]) -> Result<()> {
    if bounds.is_empty() {
        return Err(Error::Size("bounds must cover at least one dimension".into()));
    }
    for (j, (lo, hi)) in bounds.iter().enumerate() {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Size(format!("dimension {j}: bounds [{lo}, {hi}] are not a nonempty interval")));
        }
    }
    Ok(())
}

/// Latin hypercube in `[0, 1]^d`.
pub(crate) fn unit_lhs<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut points = vec![vec![0.0; d]; n];
    let mut strata: Vec<usize> = (0..n).collect();
    for j in 0..d {
        strata.shuffle(rng);
        for (i, p) in points.iter_mut().enumerate() {
            p[j] = (strata[i] as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    points
}

fn unit_random<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect()
}

/// Smallest pairwise Euclidean distance; infinite below two points.
pub fn min_distance(points: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for k in (i + 1)..points.len() {
            best = best.min(sq_dist(&points[i], &points[k]));
        }
    }
    best.sqrt()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn unit_maximin<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut best = unit_lhs(n, d, rng);
    let mut best_score = min_distance(&best);
    for _ in 1..MAXIMIN_RESTARTS {
        let cand = unit_lhs(n, d, rng);
        let score = min_distance(&cand);
        if score > best_score {
            best = cand;
            best_score = score;
        }
    }
    if n < 3 {
        return best;
    }
    // Swapping one coordinate between two points keeps the hypercube
    // property; keep swaps that raise the minimum distance.
    for _ in 0..(10 * n).min(400) {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        let j = rng.random_range(0..d);
        if a == b {
            continue;
        }
        let (va, vb) = (best[a][j], best[b][j]);
        best[a][j] = vb;
        best[b][j] = va;
        let score = min_distance(&best);
        if score > best_score {
            best_score = score;
        } else {
            best[a][j] = va;
            best[b][j] = vb;
        }
    }
    best
}

fn scale(unit: Vec<Vec<f64>>, bounds: &[(f64, f64)]) -> Vec<Vec<f64>> {
    unit.into_iter().map(|p| p.iter().zip(bounds).map(|(u, (lo, hi))| lo + u * (hi - lo)).collect()).collect()
}

fn draw<R: Rng + ?Sized>(n: usize, bounds: &[(f64, f64)], method: DesignMethod, rng: &mut R) -> Vec<Vec<f64>> {
    let d = bounds.len();
    let unit = match method {
        DesignMethod::Lhs => unit_lhs(n, d, rng),
        DesignMethod::MaximinLhs => unit_maximin(n, d, rng),
        DesignMethod::Random => unit_random(n, d, rng),
    };
    scale(unit, bounds)
}

/// `n` points in the box `bounds`, reproducible from `seed`.
pub fn base_design(n: usize, bounds: &[(f64, f64)], method: DesignMethod, seed: u64) -> Result<Vec<Vec<f64>>> {
    check_bounds(bounds)?;
    if n == 0 {
        return Err(Error::Size("a design needs at least one point".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(draw(n, bounds, method, &mut rng))
}

/// One coarsening step: for each point of `fine` in order, the nearest
/// remaining candidate (Euclidean distance on unit-normalized
/// coordinates, ties to the lowest index) is removed. Returns the
/// surviving candidates followed by `fine`.
pub fn nest_step(fine: &[Vec<f64>], candidates: &[Vec<f64>], bounds: &[(f64, f64)]) -> Result<Vec<Vec<f64>>> {
    check_bounds(bounds)?;
    if candidates.len() < fine.len() {
        return Err(Error::Size(format!("{} candidates cannot absorb {} finer points", candidates.len(), fine.len())));
    }
    let unit = |p: &[f64]| -> Vec<f64> { p.iter().zip(bounds).map(|(v, (lo, hi))| (v - lo) / (hi - lo)).collect() };
    let cand_unit: Vec<Vec<f64>> = candidates.iter().map(|c| unit(c)).collect();
    let mut alive = vec![true; candidates.len()];
    for x in fine {
        let xu = unit(x);
        let mut nearest: Option<(usize, f64)> = None;
        for (j, c) in cand_unit.iter().enumerate() {
            if !alive[j] {
                continue;
            }
            let dist = sq_dist(&xu, c);
            if nearest.is_none_or(|(_, best)| dist < best) {
                nearest = Some((j, dist));
            }
        }
        if let Some((j, _)) = nearest {
            alive[j] = false;
        }
    }
    let mut out: Vec<Vec<f64>> = candidates.iter().zip(&alive).filter(|(_, a)| **a).map(|(c, _)| c.clone()).collect();
    out.extend(fine.iter().cloned());
    Ok(out)
}

/// Nested designs `D_s ⊆ … ⊆ D₁`, returned cheapest level first. The
/// finest design is drawn first from the seeded stream, so it equals
/// `base_design(n_s, bounds, method, seed)`.
pub fn nest(req: &DesignRequest) -> Result<Vec<Vec<Vec<f64>>>> {
    check_bounds(&req.bounds)?;
    if req.sizes.is_empty() {
        return Err(Error::Size("at least one level size is required".into()));
    }
    if req.sizes.contains(&0) {
        return Err(Error::Size("level sizes must be positive".into()));
    }
    for t in 1..req.sizes.len() {
        if req.sizes[t] > req.sizes[t - 1] {
            return Err(Error::Size(format!(
                "level {} has {} points but level {} only {}",
                t + 1,
                req.sizes[t],
                t,
                req.sizes[t - 1]
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    let s = req.sizes.len();
    let mut designs = vec![Vec::new(); s];
    designs[s - 1] = draw(req.sizes[s - 1], &req.bounds, req.method, &mut rng);
    for t in (0..s - 1).rev() {
        let candidates = draw(req.sizes[t], &req.bounds, req.method, &mut rng);
        designs[t] = nest_step(&designs[t + 1], &candidates, &req.bounds)?;
    }
    Ok(designs)
}
