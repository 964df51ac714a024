//! Dirac operators on flat-chart tori.
//!
//! A torus `Tⁿ = Rⁿ/Zⁿ` carries a periodic Riemannian metric sampled on a
//! uniform grid, one of its `2ⁿ` spin structures (twisted boundary
//! conditions), and the Dirac operator built from the canonical orthonormal
//! frame. Orientation-preserving diffeomorphisms act on all three; the
//! crate implements that action through the two lifts `U±` and checks
//! equivariance of the operator and invariance of its spectrum.
//!
//! Modules:
//! - [`clifford`]: gamma matrices, the covering map `Spin(n) → SO(n)` and its lifts.
//! - [`grid`], [`derivative`]: periodic grids and spectral/finite-difference derivatives.
//! - [`metric`], [`geometry`]: metrics, frames, structure constants and frame Christoffel symbols.
//! - [`spinor`]: spin-structure labels and spinor fields.
//! - [`dirac`]: the operator and its spectrum.
//! - [`diffeo`]: diffeomorphisms, pullbacks, spin lifts and equivariance residuals.
//! - [`harness`]: config files and the experiment runs behind the command-line tool.

pub mod clifford;
pub mod config;
pub mod derivative;
mod descriptor;
pub mod diffeo;
pub mod dirac;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod harness;
pub mod metric;
pub mod output;
mod par;
pub mod spinor;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use clifford::{GammaSet, SpinElement};
pub use config::{RunConfig, Tolerances};
pub use diffeo::{DiffeoMap, LiftUnitary};
pub use dirac::{DiracOperator, Spectrum};
pub use error::{Error, Result};
pub use geometry::Geometry;
pub use grid::{GridSpec, Scheme};
pub use metric::{MetricField, MetricGenerator};
pub use par::is_parallel;
pub use spinor::{DiscreteSpinorField, SpinStructureLabel};

/// Which of the two preimages in the double cover.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sign::Plus => "+",
            Sign::Minus => "-",
        })
    }
}

impl FromStr for Sign {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "+" | "+1" | "1" | "plus" => Ok(Sign::Plus),
            "-" | "-1" | "minus" => Ok(Sign::Minus),
            other => Err(Error::Descriptor {
                desc: other.to_string(),
                reason: "sign must be + or -".into(),
            }),
        }
    }
}
