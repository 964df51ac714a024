//! Uniform periodic grids on the unit torus `Rⁿ/Zⁿ`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clifford::DEFAULT_MAX_DIM;
use crate::error::{Error, Result};

/// Discrete derivative scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Spectral,
    Fd2,
    Fd4,
}

impl Scheme {
    /// Nominal convergence order; `None` for the spectral scheme.
    pub fn order(self) -> Option<u32> {
        match self {
            Scheme::Spectral => None,
            Scheme::Fd2 => Some(2),
            Scheme::Fd4 => Some(4),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Spectral => "spectral",
            Scheme::Fd2 => "fd2",
            Scheme::Fd4 => "fd4",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "spectral" => Ok(Scheme::Spectral),
            "fd2" => Ok(Scheme::Fd2),
            "fd4" => Ok(Scheme::Fd4),
            other => Err(Error::descriptor(other, "expected spectral, fd2 or fd4")),
        }
    }
}

/// `N` points per axis on `[0, 1)ⁿ`, axis 0 varying slowest in linear indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GridSpec {
    n: usize,
    points: usize,
    scheme: Scheme,
}

impl GridSpec {
    pub fn new(n: usize, points: usize, scheme: Scheme) -> Result<Self> {
        if n == 0 || n > DEFAULT_MAX_DIM {
            return Err(Error::Dimension {
                n,
                max: DEFAULT_MAX_DIM,
            });
        }
        if points < 4 || points % 2 != 0 {
            return Err(Error::Grid(format!(
                "points per axis must be even and at least 4, got {points}"
            )));
        }
        Ok(Self { n, points, scheme })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Points per axis.
    pub fn points(&self) -> usize {
        self.points
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn with_scheme(&self, scheme: Scheme) -> Self {
        Self { scheme, ..self.clone() }
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.points as f64
    }

    /// Total number of grid points, `Nⁿ`.
    pub fn len(&self) -> usize {
        self.points.pow(self.n as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Cell volume `hⁿ`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.n as i32)
    }

    /// Linear-index distance between neighbours along `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        self.points.pow((self.n - 1 - axis) as u32)
    }

    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.n];
        for a in (0..self.n).rev() {
            out[a] = idx % self.points;
            idx /= self.points;
        }
        out
    }

    pub fn linear_index(&self, multi: &[usize]) -> usize {
        multi.iter().fold(0, |acc, &i| acc * self.points + i)
    }

    /// Reduces an integer lattice point into the fundamental domain. Returns
    /// the linear index and the number of periods wrapped along each axis.
    pub fn wrap(&self, lattice: &[i64]) -> (usize, Vec<i64>) {
        let np = self.points as i64;
        let mut idx = 0usize;
        let mut wraps = Vec::with_capacity(self.n);
        for &i in lattice {
            let r = i.rem_euclid(np);
            wraps.push((i - r) / np);
            idx = idx * self.points + r as usize;
        }
        (idx, wraps)
    }

    pub fn coords(&self, idx: usize) -> Vec<f64> {
        let h = self.spacing();
        self.multi_index(idx).into_iter().map(|i| i as f64 * h).collect()
    }
}
