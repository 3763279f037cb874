use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result, Scalar};

/// A single regression function: the constant 1 or one input coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BasisTerm {
    Constant,
    /// Zero-based input dimension.
    Linear(usize),
}

impl fmt::Display for BasisTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BasisTerm::Constant => f.write_str("1"),
            BasisTerm::Linear(j) => write!(f, "x{}", j + 1),
        }
    }
}

impl FromStr for BasisTerm {
    type Err = Error;

    /// Accepts `1`/`const`/`constant` and `x<j>` with a one-based `j`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "1" | "const" | "constant" => return Ok(BasisTerm::Constant),
            _ => {}
        }
        s.strip_prefix('x')
            .and_then(|j| j.parse::<usize>().ok())
            .filter(|j| *j >= 1)
            .map(|j| BasisTerm::Linear(j - 1))
            .ok_or_else(|| Error::Config(format!("unknown basis term `{s}` (expected `1` or `x<j>`)")))
    }
}

/// Ordered list of regression functions.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BasisSpec {
    terms: Vec<BasisTerm>,
}

impl BasisSpec {
    pub fn new(terms: Vec<BasisTerm>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::Structural("a basis needs at least one term".into()));
        }
        for (i, t) in terms.iter().enumerate() {
            if terms[..i].contains(t) {
                return Err(Error::Structural(format!("duplicate basis term `{t}`")));
            }
        }
        Ok(BasisSpec { terms })
    }

    pub fn constant() -> Self {
        BasisSpec { terms: vec![BasisTerm::Constant] }
    }

    /// `(1, x_j)` for a zero-based dimension `j`.
    pub fn affine_in(j: usize) -> Self {
        BasisSpec { terms: vec![BasisTerm::Constant, BasisTerm::Linear(j)] }
    }

    pub fn terms(&self) -> &[BasisTerm] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Smallest input dimension this basis can be evaluated on.
    pub fn required_dim(&self) -> usize {
        self.terms
            .iter()
            .map(|t| match t {
                BasisTerm::Constant => 0,
                BasisTerm::Linear(j) => j + 1,
            })
            .max()
            .unwrap_or(0)
    }

    pub fn eval<T: Scalar>(&self, x: &[T]) -> DVector<T> {
        DVector::from_iterator(
            self.terms.len(),
            self.terms.iter().map(|t| match t {
                BasisTerm::Constant => T::one(),
                BasisTerm::Linear(j) => x[*j],
            }),
        )
    }

    /// Basis evaluated at every design point, one row per point.
    pub fn matrix<T: Scalar>(&self, design: &[Vec<T>]) -> DMatrix<T> {
        DMatrix::from_fn(design.len(), self.terms.len(), |i, k| match self.terms[k] {
            BasisTerm::Constant => T::one(),
            BasisTerm::Linear(j) => design[i][j],
        })
    }

    pub fn labels(&self) -> Vec<String> {
        self.terms.iter().map(ToString::to_string).collect()
    }
}

impl fmt::Display for BasisSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let labels = self.labels();
        write!(f, "({})", labels.join(", "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_eval() {
        let terms: Vec<BasisTerm> = ["1", "x2"].iter().map(|s| s.parse().unwrap()).collect();
        let b = BasisSpec::new(terms).unwrap();
        assert_eq!(b.required_dim(), 2);
        assert_eq!(b.eval(&[3.0, 5.0]).as_slice(), &[1.0, 5.0]);
        assert_eq!(b.to_string(), "(1, x2)");
        assert!("x0".parse::<BasisTerm>().is_err());
        assert!("y".parse::<BasisTerm>().is_err());
    }

    #[test]
    fn rejects_empty_and_duplicates() {
        assert!(BasisSpec::new(vec![]).is_err());
        assert!(BasisSpec::new(vec![BasisTerm::Constant, BasisTerm::Constant]).is_err());
    }
}
