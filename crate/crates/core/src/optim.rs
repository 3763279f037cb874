//! Bounded Nelder–Mead simplex search.

pub(crate) struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
}

pub(crate) struct NelderMead {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub max_evals: usize,
    pub ftol: f64,
    pub xtol: f64,
}

impl NelderMead {
    fn clamp(&self, x: &mut [f64]) {
        for (j, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[j], self.upper[j]);
        }
    }

    /// Minimizes `f` from `start`. Non-finite values are treated as `+inf`.
    pub fn minimize(&self, start: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Minimum {
        let d = start.len();
        let mut eval = |x: &[f64]| {
            let v = f(x);
            if v.is_finite() {
                v
            } else {
                f64::INFINITY
            }
        };
        let mut x0 = start.to_vec();
        self.clamp(&mut x0);
        let mut simplex = vec![x0.clone()];
        for j in 0..d {
            let step = 0.1 * (self.upper[j] - self.lower[j]).max(1e-8);
            let mut x = x0.clone();
            x[j] = if x[j] + step <= self.upper[j] { x[j] + step } else { x[j] - step };
            simplex.push(x);
        }
        let mut values: Vec<f64> = simplex.iter().map(|x| eval(x)).collect();
        let mut evals = d + 1;

        while evals < self.max_evals {
            let mut order: Vec<usize> = (0..=d).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            values = order.iter().map(|&i| values[i]).collect();

            let (best, worst) = (values[0], values[d]);
            let spread = simplex[1..]
                .iter()
                .flat_map(|x| x.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
                .fold(0.0, f64::max);
            if best.is_finite() && (worst - best).abs() <= self.ftol * (1.0 + best.abs()) && spread <= self.xtol {
                break;
            }

            let mut centroid = vec![0.0; d];
            for x in &simplex[..d] {
                for j in 0..d {
                    centroid[j] += x[j] / d as f64;
                }
            }
            let along = |t: f64| {
                let mut p: Vec<f64> = (0..d).map(|j| centroid[j] + t * (simplex[d][j] - centroid[j])).collect();
                self.clamp(&mut p);
                p
            };

            let reflected = along(-1.0);
            let fr = eval(&reflected);
            evals += 1;
            if fr < values[0] {
                let expanded = along(-2.0);
                let fe = eval(&expanded);
                evals += 1;
                if fe < fr {
                    simplex[d] = expanded;
                    values[d] = fe;
                } else {
                    simplex[d] = reflected;
                    values[d] = fr;
                }
                continue;
            }
            if fr < values[d - 1] {
                simplex[d] = reflected;
                values[d] = fr;
                continue;
            }
            let contracted = if fr < values[d] { along(-0.5) } else { along(0.5) };
            let fc = eval(&contracted);
            evals += 1;
            if fc < values[d].min(fr) {
                simplex[d] = contracted;
                values[d] = fc;
                continue;
            }
            let best = simplex[0].clone();
            for i in 1..=d {
                for (v, b) in simplex[i].iter_mut().zip(&best) {
                    *v = b + 0.5 * (*v - b);
                }
                values[i] = eval(&simplex[i]);
            }
            evals += d;
        }

        let best = (0..=d).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap_or(0);
        Minimum { x: simplex[best].clone(), value: values[best] }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solver(d: usize) -> NelderMead {
        NelderMead { lower: vec![-5.0; d], upper: vec![5.0; d], max_evals: 4000, ftol: 1e-14, xtol: 1e-10 }
    }

    #[test]
    fn rosenbrock() {
        let m = solver(2).minimize(&[-1.2, 1.0], |x| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2));
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4, "{:?}", m.x);
    }

    #[test]
    fn respects_bounds() {
        let m = solver(1).minimize(&[0.0], |x| x[0]);
        assert_eq!(m.x[0], -5.0);
    }

    #[test]
    fn survives_infinite_regions() {
        let m = solver(1).minimize(&[2.0], |x| if x[0] < 1.0 { f64::NAN } else { (x[0] - 1.5).powi(2) });
        assert!((m.x[0] - 1.5).abs() < 1e-5);
    }
}
