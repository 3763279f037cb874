use nalgebra::{DMatrix, DVector};

use super::basis::BasisSpec;
use crate::kernels::check_design;
use crate::linalg::Factor;
use crate::{Error, Result, Scalar};

/// Observations of one fidelity level.
///
/// Level 1 carries only its own regression basis `f`. Higher levels also
/// carry the adjustment basis `g` and the lower level's observations at
/// their own design points.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelData<T: Scalar> {
    pub design: Vec<Vec<T>>,
    pub observations: DVector<T>,
    pub f_basis: BasisSpec,
    pub g_basis: Option<BasisSpec>,
    pub lower_observations: Option<DVector<T>>,
}

impl<T: Scalar> LevelData<T> {
    /// The cheapest level.
    pub fn base(design: Vec<Vec<T>>, observations: Vec<T>, f_basis: BasisSpec) -> Self {
        LevelData {
            design,
            observations: DVector::from_vec(observations),
            f_basis,
            g_basis: None,
            lower_observations: None,
        }
    }

    /// A level above the first. `lower_observations` may be left empty and
    /// filled from the level below when the model is fitted.
    pub fn upper(
        design: Vec<Vec<T>>,
        observations: Vec<T>,
        f_basis: BasisSpec,
        g_basis: BasisSpec,
        lower_observations: Option<Vec<T>>,
    ) -> Self {
        LevelData {
            design,
            observations: DVector::from_vec(observations),
            f_basis,
            g_basis: Some(g_basis),
            lower_observations: lower_observations.map(DVector::from_vec),
        }
    }

    pub fn n(&self) -> usize {
        self.design.len()
    }

    pub fn dim(&self) -> usize {
        self.design.first().map_or(0, Vec::len)
    }

    /// Number of trend coefficients `q_{t-1} + p_t`.
    pub fn n_trend(&self) -> usize {
        self.f_basis.len() + self.g_basis.as_ref().map_or(0, BasisSpec::len)
    }

    /// Labels of the experience-matrix columns, adjustment terms first.
    pub fn trend_labels(&self) -> Vec<String> {
        let mut labels = Vec::new();
        if let Some(g) = &self.g_basis {
            labels.extend(g.labels().into_iter().map(|l| format!("rho[{l}]")));
        }
        labels.extend(self.f_basis.labels().into_iter().map(|l| format!("beta[{l}]")));
        labels
    }

    /// Checks shapes and finiteness; `level` is one-based.
    pub fn validate(&self, level: usize) -> Result<()> {
        let d = self.dim();
        check_design(&self.design, d)?;
        if self.observations.len() != self.n() {
            return Err(Error::Shape(format!(
                "level {level}: {} observations for {} design points",
                self.observations.len(),
                self.n()
            )));
        }
        if self.observations.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape(format!("level {level}: non-finite observation")));
        }
        let mut need = self.f_basis.required_dim();
        match (level, &self.g_basis) {
            (1, Some(_)) => return Err(Error::Structural("level 1 cannot have an adjustment basis".into())),
            (1, None) => {
                if self.lower_observations.is_some() {
                    return Err(Error::Structural("level 1 cannot have lower-level observations".into()));
                }
            }
            (_, None) => return Err(Error::Structural(format!("level {level} needs an adjustment basis"))),
            (_, Some(g)) => need = need.max(g.required_dim()),
        }
        if need > d {
            return Err(Error::Shape(format!("level {level}: basis uses dimension {need} but inputs have {d}")));
        }
        if let Some(lower) = &self.lower_observations {
            if lower.len() != self.n() {
                return Err(Error::Shape(format!(
                    "level {level}: {} lower-level observations for {} points",
                    lower.len(),
                    self.n()
                )));
            }
            if lower.iter().any(|v| !v.is_finite()) {
                return Err(Error::Shape(format!("level {level}: non-finite lower-level observation")));
            }
        }
        Ok(())
    }

    /// Copy restricted to the given point indices, in the given order.
    pub fn subset(&self, keep: &[usize]) -> Self {
        LevelData {
            design: keep.iter().map(|&i| self.design[i].clone()).collect(),
            observations: DVector::from_iterator(keep.len(), keep.iter().map(|&i| self.observations[i])),
            f_basis: self.f_basis.clone(),
            g_basis: self.g_basis.clone(),
            lower_observations: self
                .lower_observations
                .as_ref()
                .map(|z| DVector::from_iterator(keep.len(), keep.iter().map(|&i| z[i]))),
        }
    }
}

/// Prior on one level's trend coefficients and variance.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum PriorSpec<T: Scalar> {
    /// Jeffreys prior: flat on the trend, `1/σ²` on the variance.
    #[default]
    NonInformative,
    /// Conjugate normal / inverse-gamma prior. The trend prior is
    /// `N(b, σ² V)`; the variance posterior shape gains `alpha` and its
    /// scale statistic `Q` gains `gamma`.
    Informative { b: DVector<T>, v: DMatrix<T>, alpha: T, gamma: T },
}

impl<T: Scalar> PriorSpec<T> {
    pub fn is_informative(&self) -> bool {
        matches!(self, PriorSpec::Informative { .. })
    }

    /// Checks dimensions against the number of trend coefficients and that
    /// `V` is symmetric positive definite.
    pub fn validate(&self, n_trend: usize) -> Result<()> {
        let PriorSpec::Informative { b, v, alpha, gamma } = self else {
            return Ok(());
        };
        if b.len() != n_trend || v.nrows() != n_trend || v.ncols() != n_trend {
            return Err(Error::InvalidPrior(format!(
                "prior mean has length {} and covariance {}x{}, expected {n_trend}",
                b.len(),
                v.nrows(),
                v.ncols()
            )));
        }
        if !(*alpha > T::zero()) || !(*gamma > T::zero()) {
            return Err(Error::InvalidPrior("alpha and gamma must be positive".into()));
        }
        let scale = v.amax().max(T::one());
        if (v - v.transpose()).amax() > T::lit(1e-12) * scale {
            return Err(Error::InvalidPrior("prior covariance V is not symmetric".into()));
        }
        if Factor::new(v.clone()).is_none() {
            return Err(Error::InvalidPrior("prior covariance V is not positive definite".into()));
        }
        Ok(())
    }
}
