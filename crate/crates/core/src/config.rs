//! Run configuration: a `key = value` text file plus overrides.
//!
//! ```text
//! # comments start with '#'
//! n = 2
//! N = 16
//! scheme = spectral
//! delta = 0.5,0
//! metric = conformal(0.1,1,0)
//! diffeo = affine(1,1,0,1)
//! ```
//!
//! | key | meaning | default |
//! |---|---|---|
//! | `n` | torus dimension | `2` |
//! | `N` | points per axis | `16` |
//! | `N_list` | comma-separated resolutions; `check-equivariance` uses `N` when unset, `convergence` defaults to `8,16,32` | unset |
//! | `scheme` | `spectral`, `fd2` or `fd4` | `spectral` |
//! | `delta` | spin structure, e.g. `0.5,0` | all zeros |
//! | `metric` | metric descriptor | `flat` |
//! | `diffeo` | diffeomorphism descriptor | `identity` |
//! | `seed` | probe seed | `0` |
//! | `probes` | number of random probe spinors | `4` |
//! | `probe_band` | probes use modes with `|p_a| ≤ probe_band` | `1.5` |
//! | `interpolate` | allow off-grid maps via trigonometric interpolation | `false` |
//! | `spectrum_window` | eigenvalue cutoff for spectrum comparison | automatic |
//! | `out` | output directory | none |
//! | `tol.residual` | exact-regime equivariance tolerance | `1e-10` |
//! | `tol.unitarity` | unitarity tolerance | `1e-12` |
//! | `tol.spectrum` | exact-regime spectrum distance tolerance | `1e-10` |
//! | `tol.residual_smooth` | single-resolution tolerance for off-grid maps | `1e-3` |
//! | `tol.spectrum_smooth` | same, for the spectrum distance | `1e-3` |
//! | `tol.order_slack` | allowed shortfall of fitted orders below the scheme order | `0.5` |
//! | `tol.spectral_floor` | final residual required from spectral convergence runs | `1e-8` |

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::diffeo::DiffeoMap;
use crate::error::{Error, Result};
use crate::grid::{GridSpec, Scheme};
use crate::metric::MetricGenerator;
use crate::spinor::SpinStructureLabel;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Tolerances {
    pub residual: f64,
    pub unitarity: f64,
    pub spectrum: f64,
    pub residual_smooth: f64,
    pub spectrum_smooth: f64,
    pub order_slack: f64,
    pub spectral_floor: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            residual: 1e-10,
            unitarity: 1e-12,
            spectrum: 1e-10,
            residual_smooth: 1e-3,
            spectrum_smooth: 1e-3,
            order_slack: 0.5,
            spectral_floor: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub n: usize,
    pub points: usize,
    pub points_list: Option<Vec<usize>>,
    pub scheme: Scheme,
    delta: Option<SpinStructureLabel>,
    pub metric: String,
    pub diffeo: String,
    pub seed: u64,
    pub probes: usize,
    pub probe_band: f64,
    pub interpolate: bool,
    pub spectrum_window: Option<f64>,
    pub out: Option<PathBuf>,
    pub tol: Tolerances,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n: 2,
            points: 16,
            points_list: None,
            scheme: Scheme::Spectral,
            delta: None,
            metric: "flat".into(),
            diffeo: "identity".into(),
            seed: 0,
            probes: 4,
            probe_band: 1.5,
            interpolate: false,
            spectrum_window: None,
            out: None,
            tol: Tolerances::default(),
        }
    }
}

fn parse_value<T: FromStr>(value: &str) -> std::result::Result<T, String> {
    value.trim().parse::<T>().map_err(|_| format!("cannot parse `{}`", value.trim()))
}

fn parse_positive(value: &str) -> std::result::Result<f64, String> {
    let v: f64 = parse_value(value)?;
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(format!("`{}` must be a positive number", value.trim()))
    }
}

impl RunConfig {
    /// Parses a config file body; errors carry the 1-based line number.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config {
                    line: i + 1,
                    msg: format!("expected `key = value`, got `{line}`"),
                });
            };
            cfg.set(key.trim(), value.trim()).map_err(|msg| Error::Config { line: i + 1, msg })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Sets one key; used for file lines and command-line overrides alike.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let field = |e: String| format!("{key}: {e}");
        match key {
            "n" => self.n = parse_value(value).map_err(field)?,
            "N" => self.points = parse_value(value).map_err(field)?,
            "N_list" => {
                self.points_list = Some(
                    value
                        .split(',')
                        .map(parse_value::<usize>)
                        .collect::<std::result::Result<_, _>>()
                        .map_err(field)?,
                )
            }
            "scheme" => self.scheme = value.parse().map_err(|e: Error| field(e.to_string()))?,
            "delta" => {
                self.delta = Some(SpinStructureLabel::parse(value).map_err(|e| field(e.to_string()))?)
            }
            "metric" => self.metric = value.to_string(),
            "diffeo" => self.diffeo = value.to_string(),
            "seed" => self.seed = parse_value(value).map_err(field)?,
            "probes" => self.probes = parse_value(value).map_err(field)?,
            "probe_band" => self.probe_band = parse_positive(value).map_err(field)?,
            "interpolate" => self.interpolate = parse_value(value).map_err(field)?,
            "spectrum_window" => self.spectrum_window = Some(parse_positive(value).map_err(field)?),
            "out" => self.out = Some(PathBuf::from(value)),
            "tol.residual" => self.tol.residual = parse_positive(value).map_err(field)?,
            "tol.unitarity" => self.tol.unitarity = parse_positive(value).map_err(field)?,
            "tol.spectrum" => self.tol.spectrum = parse_positive(value).map_err(field)?,
            "tol.residual_smooth" => self.tol.residual_smooth = parse_positive(value).map_err(field)?,
            "tol.spectrum_smooth" => self.tol.spectrum_smooth = parse_positive(value).map_err(field)?,
            "tol.order_slack" => self.tol.order_slack = parse_positive(value).map_err(field)?,
            "tol.spectral_floor" => self.tol.spectral_floor = parse_positive(value).map_err(field)?,
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    /// Applies a command-line override, reported as a config error on failure.
    pub fn override_with(&mut self, key: &str, value: &str) -> Result<()> {
        self.set(key, value).map_err(Error::Setting)
    }

    pub fn set_delta(&mut self, delta: SpinStructureLabel) {
        self.delta = Some(delta);
    }

    /// The configured spin structure, periodic when unset.
    pub fn delta(&self) -> SpinStructureLabel {
        self.delta.clone().unwrap_or_else(|| SpinStructureLabel::periodic(self.n))
    }

    /// Resolutions for convergence runs.
    pub fn resolutions(&self) -> Vec<usize> {
        self.points_list.clone().unwrap_or_else(|| vec![8, 16, 32])
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.n, self.points, self.scheme)
    }

    pub fn grid_at(&self, points: usize) -> Result<GridSpec> {
        GridSpec::new(self.n, points, self.scheme)
    }

    pub fn metric_generator(&self) -> Result<MetricGenerator> {
        MetricGenerator::parse(&self.metric, self.n)
    }

    pub fn diffeo_map(&self) -> Result<DiffeoMap> {
        DiffeoMap::parse(&self.diffeo, self.n)
    }

    /// Checks every cross-field invariant before a run starts.
    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        if self.points_list.as_ref().is_some_and(|l| l.is_empty()) {
            return Err(Error::Setting("N_list is empty".into()));
        }
        for &np in self.points_list.iter().flatten() {
            self.grid_at(np)?;
        }
        if self.delta().dim() != self.n {
            return Err(Error::Setting(format!(
                "delta has {} entries but n = {}",
                self.delta().dim(),
                self.n
            )));
        }
        if self.probes == 0 {
            return Err(Error::Setting("probes must be at least 1".into()));
        }
        self.metric_generator()?;
        self.diffeo_map()?;
        Ok(())
    }
}
