//! Closed-form periodic metrics and their grid samples.
//!
//! Descriptor syntax (axes are 1-based):
//!
//! | descriptor | metric |
//! |---|---|
//! | `flat` | `g = Id` |
//! | `constant(a11, a12, ..., a1n, a22, ..., ann)` | constant matrix, upper triangle row by row |
//! | `conformal(amp, m1, ..., mn)` or `conformal(amp, [m1, ..., mn])` | `g = e^{2u} Id`, `u = amp·sin(2π m·x)` |
//! | `diag_wave(axis, amp, mode)` | `Id` except `g_aa = (1 + amp·sin(2π·mode·x_b))²`, `b` the next axis cyclically |
//! | `pullback(<diffeo>, <metric>)` | `f*g` |
//!
//! `diag_wave(2, 0.2, 1)` on `T²` is `diag(1, (1 + 0.2 sin 2πx₁)²)`.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::DMatrix;

use crate::clifford::RMatrix;
use crate::descriptor::{self, parse_call};
use crate::diffeo::DiffeoMap;
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::par;

/// A metric given in closed form, so it can be resampled exactly at any
/// resolution or evaluated off-grid.
#[derive(Clone, Debug, PartialEq)]
pub enum MetricGenerator {
    Flat {
        n: usize,
    },
    Constant {
        matrix: RMatrix,
    },
    Conformal {
        amplitude: f64,
        mode: Vec<f64>,
    },
    DiagWave {
        n: usize,
        axis: usize,
        amplitude: f64,
        mode: f64,
    },
    Pullback {
        map: DiffeoMap,
        base: Box<MetricGenerator>,
    },
}

impl MetricGenerator {
    pub fn parse(desc: &str, n: usize) -> Result<Self> {
        let call = parse_call(desc)?;
        let generator = match call.name.as_str() {
            "flat" => {
                if !call.args.is_empty() {
                    return Err(Error::descriptor(desc, "flat takes no arguments"));
                }
                MetricGenerator::Flat { n }
            }
            "constant" => {
                let vals = descriptor::numbers(desc, &call.args)?;
                let expected = n * (n + 1) / 2;
                if vals.len() != expected {
                    return Err(Error::descriptor(
                        desc,
                        format!("expected {expected} upper-triangle entries"),
                    ));
                }
                let mut m = RMatrix::zeros(n, n);
                let mut it = vals.into_iter();
                for i in 0..n {
                    for j in i..n {
                        let v = it.next().unwrap_or_default();
                        m[(i, j)] = v;
                        m[(j, i)] = v;
                    }
                }
                MetricGenerator::Constant { matrix: m }
            }
            "conformal" => {
                let vals = descriptor::numbers(desc, &call.args)?;
                if vals.len() != n + 1 {
                    return Err(Error::descriptor(desc, format!("expected amplitude and {n} mode entries")));
                }
                MetricGenerator::Conformal {
                    amplitude: vals[0],
                    mode: vals[1..].to_vec(),
                }
            }
            "diag_wave" => {
                if call.args.len() != 3 {
                    return Err(Error::descriptor(desc, "expected diag_wave(axis, amplitude, mode)"));
                }
                if n < 2 {
                    return Err(Error::descriptor(desc, "diag_wave needs n >= 2"));
                }
                let axis = descriptor::axis(desc, &call.args[0], n)?;
                let amplitude = descriptor::number(desc, &call.args[1])?;
                if amplitude.abs() >= 1.0 {
                    return Err(Error::descriptor(desc, "amplitude must be below 1 in magnitude"));
                }
                MetricGenerator::DiagWave {
                    n,
                    axis,
                    amplitude,
                    mode: descriptor::number(desc, &call.args[2])?,
                }
            }
            "pullback" => {
                if call.args.len() != 2 {
                    return Err(Error::descriptor(desc, "expected pullback(diffeo, metric)"));
                }
                MetricGenerator::Pullback {
                    map: DiffeoMap::parse(&call.args[0], n)?,
                    base: Box::new(MetricGenerator::parse(&call.args[1], n)?),
                }
            }
            other => return Err(Error::descriptor(desc, format!("unknown metric `{other}`"))),
        };
        Ok(generator)
    }

    pub fn dim(&self) -> usize {
        match self {
            MetricGenerator::Flat { n } | MetricGenerator::DiagWave { n, .. } => *n,
            MetricGenerator::Constant { matrix } => matrix.nrows(),
            MetricGenerator::Conformal { mode, .. } => mode.len(),
            MetricGenerator::Pullback { base, .. } => base.dim(),
        }
    }

    /// `g_ab(x)`; `x` need not lie in the fundamental domain.
    pub fn eval(&self, x: &[f64]) -> RMatrix {
        match self {
            MetricGenerator::Flat { n } => RMatrix::identity(*n, *n),
            MetricGenerator::Constant { matrix } => matrix.clone(),
            MetricGenerator::Conformal { amplitude, mode } => {
                let phase: f64 = mode.iter().zip(x).map(|(m, xi)| m * xi).sum();
                let u = amplitude * (2.0 * PI * phase).sin();
                RMatrix::identity(mode.len(), mode.len()) * (2.0 * u).exp()
            }
            MetricGenerator::DiagWave {
                n,
                axis,
                amplitude,
                mode,
            } => {
                let along = (axis + 1) % n;
                let s = 1.0 + amplitude * (2.0 * PI * mode * x[along]).sin();
                let mut g = RMatrix::identity(*n, *n);
                g[(*axis, *axis)] = s * s;
                g
            }
            MetricGenerator::Pullback { map, base } => {
                let j = map.jacobian(x);
                let y = map.apply(x);
                j.transpose() * base.eval(&y) * j
            }
        }
    }
}

impl fmt::Display for MetricGenerator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricGenerator::Flat { .. } => f.write_str("flat"),
            MetricGenerator::Constant { matrix } => {
                let n = matrix.nrows();
                let mut parts = Vec::new();
                for i in 0..n {
                    for j in i..n {
                        parts.push(matrix[(i, j)].to_string());
                    }
                }
                write!(f, "constant({})", parts.join(","))
            }
            MetricGenerator::Conformal { amplitude, mode } => {
                let m: Vec<String> = mode.iter().map(|v| v.to_string()).collect();
                write!(f, "conformal({amplitude},[{}])", m.join(","))
            }
            MetricGenerator::DiagWave {
                axis,
                amplitude,
                mode,
                ..
            } => write!(f, "diag_wave({},{amplitude},{mode})", axis + 1),
            MetricGenerator::Pullback { map, base } => write!(f, "pullback({map},{base})"),
        }
    }
}

/// Symmetric positive definite metric sampled on a grid.
#[derive(Clone, Debug)]
pub struct MetricField {
    grid: GridSpec,
    values: Vec<RMatrix>,
    source: MetricGenerator,
}

impl MetricField {
    /// Samples `generator` at every grid point, checking positive definiteness.
    pub fn sample(generator: &MetricGenerator, grid: &GridSpec) -> Result<Self> {
        if generator.dim() != grid.dim() {
            return Err(Error::Wiring(format!(
                "metric of dimension {} on a {}-dimensional grid",
                generator.dim(),
                grid.dim()
            )));
        }
        let values = par::map_range(grid.len(), |i| generator.eval(&grid.coords(i)));
        Self::from_values(grid.clone(), values, generator.clone())
    }

    pub fn from_values(grid: GridSpec, values: Vec<RMatrix>, source: MetricGenerator) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Grid(format!(
                "expected {} metric samples, got {}",
                grid.len(),
                values.len()
            )));
        }
        for (i, g) in values.iter().enumerate() {
            if !is_spd(g) {
                return Err(Error::NotPositiveDefinite {
                    point: grid.multi_index(i),
                });
            }
        }
        Ok(Self { grid, values, source })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[RMatrix] {
        &self.values
    }

    pub fn at(&self, idx: usize) -> &RMatrix {
        &self.values[idx]
    }

    pub fn source(&self) -> &MetricGenerator {
        &self.source
    }

    /// Same closed form on a different grid.
    pub fn resample(&self, grid: &GridSpec) -> Result<Self> {
        Self::sample(&self.source, grid)
    }

    /// `√det g` at each point.
    pub fn volume_density(&self) -> Vec<f64> {
        self.values.iter().map(|g| g.determinant().sqrt()).collect()
    }

    /// Smallest eigenvalue over all samples.
    pub fn min_eigenvalue(&self) -> f64 {
        self.values
            .iter()
            .map(|g| g.clone().symmetric_eigenvalues().min())
            .fold(f64::INFINITY, f64::min)
    }
}

pub(crate) fn is_spd(g: &RMatrix) -> bool {
    let asym = (g - g.transpose()).amax();
    let scale = g.amax().max(1.0);
    g.iter().all(|v| v.is_finite()) && asym <= 1e-12 * scale && DMatrix::cholesky(g.clone()).is_some()
}
