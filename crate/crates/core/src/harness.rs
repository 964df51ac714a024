//! Experiment runs behind the command-line tool. Each run returns an
//! [`Outcome`]: a pass flag, a JSON report and the files to write.
//!
//! | run | files |
//! |---|---|
//! | [`run_gammas`] | `gammas.json` |
//! | [`run_spectrum`] | `spectrum.csv` (`index,eigenvalue`), `spectrum.json` |
//! | [`run_pullback`] | `metric_pulled.csv`, `pullback.json` |
//! | [`run_check_equivariance`] | `equivariance.json`, plus `equivariance.csv` for several resolutions |
//! | [`run_two_lifts`] | `psi.spnr`, `u_plus.spnr`, `u_minus.spnr`, `two_lifts.json` |
//! | [`run_convergence`] | `convergence.csv`, `convergence.json` |

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::clifford::GammaSet;
use crate::config::RunConfig;
use crate::diffeo::{self, DiffeoMap, LiftUnitary};
use crate::dirac::{self, DiracOperator, Spectrum};
use crate::error::Result;
use crate::geometry::Geometry;
use crate::grid::{GridSpec, Scheme};
use crate::metric::MetricField;
use crate::output::{format_float, to_json, Table};
use crate::spinor::{DiscreteSpinorField, PlaneWaveProbe, SpinStructureLabel};
use crate::Sign;

/// Eigenvalues below this magnitude count as zero modes.
pub const ZERO_MODE_TOL: f64 = 1e-8;

/// Values at or below this are treated as exactly zero when fitting orders.
pub const ZERO_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct OutputFile {
    pub name: String,
    pub contents: Vec<u8>,
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub pass: bool,
    /// One-line human summary.
    pub summary: String,
    pub json: String,
    pub files: Vec<OutputFile>,
}

impl Outcome {
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for f in &self.files {
            std::fs::write(dir.join(&f.name), &f.contents)?;
        }
        Ok(())
    }
}

fn text_file(name: &str, contents: String) -> OutputFile {
    OutputFile {
        name: name.into(),
        contents: contents.into_bytes(),
    }
}

/// Least-squares slope of `−log v` against `log N`; `None` when any value is
/// at or below [`ZERO_FLOOR`] or fewer than two points are given.
pub fn fit_order(points: &[usize], values: &[f64]) -> Option<f64> {
    if points.len() < 2 || points.len() != values.len() || values.iter().any(|v| !(*v > ZERO_FLOOR)) {
        return None;
    }
    let xs: Vec<f64> = points.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let m = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / m, ys.iter().sum::<f64>() / m);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Some(-sxy / sxx)
}

/// Seeded random plane-wave probes with modes `|p_a| ≤ band`; the same seed
/// gives the same continuum fields at every resolution.
pub fn probe_fields(
    seed: u64,
    count: usize,
    band: f64,
    grid: &GridSpec,
    delta: &SpinStructureLabel,
    k: usize,
) -> Result<Vec<DiscreteSpinorField>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| PlaneWaveProbe::random(delta, k, band, &mut rng).sample(grid))
        .collect()
}

fn operator_for(g: &MetricField, gammas: &GammaSet, delta: &SpinStructureLabel) -> Result<DiracOperator> {
    dirac::assemble(&Geometry::new(g.clone())?, gammas, delta)
}

#[derive(Clone, Debug, Serialize)]
pub struct GammasReport {
    pub n: usize,
    pub k: usize,
    pub anticommutation_defect: f64,
    pub hermiticity_defect: f64,
    /// `gammas[j][row][col] = [re, im]`.
    pub gammas: Vec<Vec<Vec<[f64; 2]>>>,
}

pub fn gammas_report(n: usize) -> Result<GammasReport> {
    let g = GammaSet::new(n)?;
    let k = g.spinor_dim();
    Ok(GammasReport {
        n,
        k,
        anticommutation_defect: g.anticommutation_defect(),
        hermiticity_defect: g.hermiticity_defect(),
        gammas: g
            .gammas()
            .iter()
            .map(|m| (0..k).map(|r| (0..k).map(|c| [m[(r, c)].re, m[(r, c)].im]).collect()).collect())
            .collect(),
    })
}

pub fn run_gammas(cfg: &RunConfig) -> Result<Outcome> {
    let report = gammas_report(cfg.n)?;
    let json = to_json(&report)?;
    let pass = report.anticommutation_defect == 0.0 && report.hermiticity_defect == 0.0;
    Ok(Outcome {
        pass,
        summary: format!(
            "n={} k={} anticommutation_defect={} hermiticity_defect={}",
            report.n,
            report.k,
            format_float(report.anticommutation_defect),
            format_float(report.hermiticity_defect)
        ),
        files: vec![text_file("gammas.json", json.clone())],
        json,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectrumReport {
    pub n: usize,
    #[serde(rename = "N")]
    pub points: usize,
    pub scheme: Scheme,
    pub delta: String,
    pub metric: String,
    pub size: usize,
    pub min_abs_eigenvalue: f64,
    pub max_abs_eigenvalue: f64,
    pub zero_modes: usize,
    pub hermiticity_defect: f64,
    pub hermiticity_defect_max_entry: f64,
}

pub fn spectrum_report(cfg: &RunConfig) -> Result<(SpectrumReport, Spectrum)> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let g = MetricField::sample(&cfg.metric_generator()?, &grid)?;
    let gammas = GammaSet::new(cfg.n)?;
    let delta = cfg.delta();
    let d = operator_for(&g, &gammas, &delta)?;
    let spectrum = d.spectrum()?;
    let report = SpectrumReport {
        n: cfg.n,
        points: cfg.points,
        scheme: cfg.scheme,
        delta: delta.to_string(),
        metric: g.source().to_string(),
        size: d.size(),
        min_abs_eigenvalue: spectrum.min_abs(),
        max_abs_eigenvalue: spectrum.max_abs(),
        zero_modes: spectrum.count_below(ZERO_MODE_TOL),
        hermiticity_defect: spectrum.smooth_hermiticity_defect,
        hermiticity_defect_max_entry: spectrum.hermiticity_defect,
    };
    Ok((report, spectrum))
}

pub fn run_spectrum(cfg: &RunConfig) -> Result<Outcome> {
    let (report, spectrum) = spectrum_report(cfg)?;
    let mut table = Table::new(&["index", "eigenvalue"]);
    for (i, v) in spectrum.eigenvalues.iter().enumerate() {
        table.push(vec![i.to_string(), format_float(*v)]);
    }
    let json = to_json(&report)?;
    Ok(Outcome {
        pass: true,
        summary: format!(
            "{} eigenvalues, min |λ| = {}, zero modes = {}",
            report.size,
            format_float(report.min_abs_eigenvalue),
            report.zero_modes
        ),
        files: vec![
            text_file("spectrum.csv", table.to_csv()),
            text_file("spectrum.json", json.clone()),
        ],
        json,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct LabelImage {
    pub delta: String,
    pub delta_pulled: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct PullbackReport {
    pub n: usize,
    #[serde(rename = "N")]
    pub points: usize,
    pub metric: String,
    pub diffeo: String,
    pub metric_pulled: String,
    pub min_eigenvalue_pulled: f64,
    pub rotation_orthogonality_defect: f64,
    pub twist_correction: Vec<u8>,
    pub labels: Vec<LabelImage>,
}

/// Orthogonality tolerance for frame rotation fields in reports.
pub const ROTATION_TOL: f64 = 1e-10;

pub fn run_pullback(cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let g = MetricField::sample(&cfg.metric_generator()?, &grid)?;
    let f = cfg.diffeo_map()?;
    let gammas = GammaSet::new(cfg.n)?;
    let pulled = diffeo::pullback_metric(&f, &g)?;
    let rotations = diffeo::frame_rotation_field(&f, &g)?;
    let lift = diffeo::spin_lift_field(&rotations, &gammas, Sign::Plus)?;
    let labels = SpinStructureLabel::all(cfg.n)
        .into_iter()
        .map(|d| LabelImage {
            delta_pulled: diffeo::pullback_spin_structure(&f, &d, &lift).to_string(),
            delta: d.to_string(),
        })
        .collect();
    let report = PullbackReport {
        n: cfg.n,
        points: cfg.points,
        metric: g.source().to_string(),
        diffeo: f.to_string(),
        metric_pulled: pulled.source().to_string(),
        min_eigenvalue_pulled: pulled.min_eigenvalue(),
        rotation_orthogonality_defect: rotations.orthogonality_defect(),
        twist_correction: lift.twist_correction().iter().map(|&t| t as u8).collect(),
        labels,
    };
    let n = cfg.n;
    let mut header: Vec<String> = (1..=n).map(|a| format!("i{a}")).collect();
    for a in 1..=n {
        for b in a..=n {
            header.push(format!("g{a}{b}"));
        }
    }
    let mut table = Table {
        header,
        rows: Vec::new(),
    };
    for idx in 0..grid.len() {
        let mut row: Vec<String> = grid.multi_index(idx).iter().map(|i| i.to_string()).collect();
        let m = pulled.at(idx);
        for a in 0..n {
            for b in a..n {
                row.push(format_float(m[(a, b)]));
            }
        }
        table.push(row);
    }
    let json = to_json(&report)?;
    Ok(Outcome {
        pass: report.rotation_orthogonality_defect <= ROTATION_TOL,
        summary: format!(
            "f*g = {}, twist correction {:?}, rotation defect {}",
            report.metric_pulled,
            report.twist_correction,
            format_float(report.rotation_orthogonality_defect)
        ),
        files: vec![
            text_file("metric_pulled.csv", table.to_csv()),
            text_file("pullback.json", json.clone()),
        ],
        json,
    })
}

/// Everything measured for one `(f, g, δ)` at one resolution.
#[derive(Clone, Debug, Serialize)]
pub struct EquivarianceRow {
    #[serde(rename = "N")]
    pub points: usize,
    pub delta_pulled: String,
    pub twist_correction: Vec<u8>,
    pub residual_plus: f64,
    pub residual_minus: f64,
    pub unitarity_defect: f64,
    /// Windowed distance of the spectra of `D` and `D′`; `null` when the
    /// windows hold different numbers of eigenvalues.
    pub spectra_distance: f64,
    pub spectrum_window: f64,
    pub hermiticity_defect: f64,
    pub hermiticity_defect_max_entry: f64,
    pub rotation_orthogonality_defect: f64,
}

struct Setup {
    g: MetricField,
    u: LiftUnitary,
    d: DiracOperator,
    d_prime: DiracOperator,
    probes: Vec<DiscreteSpinorField>,
}

fn setup(cfg: &RunConfig, points: usize) -> Result<Setup> {
    let grid = cfg.grid_at(points)?;
    let g = MetricField::sample(&cfg.metric_generator()?, &grid)?;
    let f = cfg.diffeo_map()?;
    let gammas = GammaSet::new(cfg.n)?;
    let delta = cfg.delta();
    let u = diffeo::lift_unitary(&f, &g, &delta, &gammas, Sign::Plus, cfg.interpolate)?;
    let d = operator_for(&g, &gammas, &delta)?;
    let d_prime = operator_for(u.target_metric(), &gammas, u.target_label())?;
    let probes = probe_fields(cfg.seed, cfg.probes, cfg.probe_band, &grid, &delta, gammas.spinor_dim())?;
    Ok(Setup {
        g,
        u,
        d,
        d_prime,
        probes,
    })
}

/// Measures one resolution. `window` fixes the spectrum comparison cutoff;
/// when `None` it comes from `cfg` or from the spectra themselves.
pub fn equivariance_row(cfg: &RunConfig, points: usize, window: Option<f64>) -> Result<(EquivarianceRow, Spectrum, Spectrum)> {
    let s = setup(cfg, points)?;
    let residual_plus = diffeo::equivariance_residual(&s.d_prime, &s.u, &s.d, &s.probes)?;
    let u_minus = s.u.with_sign(Sign::Minus);
    let residual_minus = diffeo::equivariance_residual(&s.d_prime, &u_minus, &s.d, &s.probes)?;
    let unitarity_defect = diffeo::unitarity_defect(&s.u, &s.probes)?;
    let a = s.d.spectrum()?;
    let b = s.d_prime.spectrum()?;
    let window = window
        .or(cfg.spectrum_window)
        .unwrap_or_else(|| dirac::default_window(&a.resolved, &b.resolved, cfg.scheme));
    let row = EquivarianceRow {
        points,
        delta_pulled: s.u.target_label().to_string(),
        twist_correction: s.u.lift().twist_correction().iter().map(|&t| t as u8).collect(),
        residual_plus,
        residual_minus,
        unitarity_defect,
        spectra_distance: dirac::spectrum_distance(&a.resolved, &b.resolved, window),
        spectrum_window: dirac::snap_window(&a.resolved, window),
        hermiticity_defect: a.smooth_hermiticity_defect.max(b.smooth_hermiticity_defect),
        hermiticity_defect_max_entry: a.hermiticity_defect.max(b.hermiticity_defect),
        rotation_orthogonality_defect: diffeo::frame_rotation_field(s.u.map(), &s.g)?.orthogonality_defect(),
    };
    Ok((row, a, b))
}

/// True when `f` maps every grid of the run onto itself.
fn is_exact(map: &DiffeoMap, grids: &[GridSpec]) -> bool {
    grids.iter().all(|g| map.lattice_shift(g).is_some())
}

#[derive(Clone, Debug, Serialize)]
pub struct FittedOrders {
    pub residual: Option<f64>,
    pub spectra_distance: Option<f64>,
    pub hermiticity_defect: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct EquivarianceReport {
    pub n: usize,
    pub scheme: Scheme,
    pub metric: String,
    pub diffeo: String,
    pub delta: String,
    /// `exact` for grid-preserving affine maps, `convergence` for a
    /// resolution sweep of any other map, `approximate` otherwise.
    pub regime: String,
    pub delta_pulled: String,
    pub twist_correction: Vec<u8>,
    pub residual_plus: f64,
    pub residual_minus: f64,
    pub unitarity_defect: f64,
    pub spectra_distance: f64,
    pub spectrum_window: f64,
    pub hermiticity_defect: f64,
    pub rows: Vec<EquivarianceRow>,
    pub fitted_orders: Option<FittedOrders>,
    pub tolerances: crate::config::Tolerances,
    pub failures: Vec<String>,
    pub pass: bool,
}

fn orders(rows: &[EquivarianceRow]) -> FittedOrders {
    let ns: Vec<usize> = rows.iter().map(|r| r.points).collect();
    let col = |f: fn(&EquivarianceRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    FittedOrders {
        residual: fit_order(&ns, &col(|r| r.residual_plus.max(r.residual_minus))),
        spectra_distance: fit_order(&ns, &col(|r| r.spectra_distance)),
        hermiticity_defect: fit_order(&ns, &col(|r| r.hermiticity_defect)),
    }
}

/// Measures every resolution of `points`, with the spectrum window fixed
/// from the first (coarsest) one.
pub fn sweep(cfg: &RunConfig, points: &[usize]) -> Result<Vec<EquivarianceRow>> {
    let mut rows = Vec::with_capacity(points.len());
    let mut window = cfg.spectrum_window;
    for &np in points {
        let (row, a, b) = equivariance_row(cfg, np, window)?;
        if window.is_none() {
            window = Some(dirac::default_window(&a.resolved, &b.resolved, cfg.scheme));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Checks a convergence sweep: FD schemes must reach their order minus the
/// slack, spectral runs must end below the spectral floor. Sequences that
/// are identically zero pass.
fn judge_convergence(
    cfg: &RunConfig,
    name: &str,
    values: &[f64],
    order: Option<f64>,
    failures: &mut Vec<String>,
) {
    if values.iter().all(|v| *v <= ZERO_FLOOR) {
        return;
    }
    match cfg.scheme.order() {
        Some(p) => {
            let need = p as f64 - cfg.tol.order_slack;
            match order {
                Some(o) if o >= need => {}
                Some(o) => failures.push(format!("{name}: fitted order {o:.3} below {need}")),
                None => failures.push(format!("{name}: no order could be fitted from {values:?}")),
            }
        }
        None => {
            let last = values.last().copied().unwrap_or(f64::INFINITY);
            if !(last <= cfg.tol.spectral_floor) {
                failures.push(format!("{name}: final value {last:e} above {:e}", cfg.tol.spectral_floor));
            }
        }
    }
}

pub fn equivariance_report(cfg: &RunConfig) -> Result<EquivarianceReport> {
    cfg.validate()?;
    let points = cfg.points_list.clone().unwrap_or_else(|| vec![cfg.points]);
    let grids = points.iter().map(|&np| cfg.grid_at(np)).collect::<Result<Vec<_>>>()?;
    let map = cfg.diffeo_map()?;
    let rows = sweep(cfg, &points)?;
    let exact = is_exact(&map, &grids);
    let regime = if exact {
        "exact"
    } else if rows.len() > 1 {
        "convergence"
    } else {
        "approximate"
    };
    let t = &cfg.tol;
    let mut failures = Vec::new();
    let fitted = (rows.len() > 1).then(|| orders(&rows));
    let mut check = |ok: bool, msg: String| {
        if !ok {
            failures.push(msg);
        }
    };
    match regime {
        "exact" | "approximate" => {
            let (res_tol, spec_tol, unit_tol) = if exact {
                (t.residual, t.spectrum, t.unitarity)
            } else {
                (t.residual_smooth, t.spectrum_smooth, t.residual_smooth)
            };
            for r in &rows {
                let n = r.points;
                check(r.residual_plus <= res_tol, format!("N={n}: residual_plus {:e} > {res_tol:e}", r.residual_plus));
                check(
                    r.residual_minus <= res_tol,
                    format!("N={n}: residual_minus {:e} > {res_tol:e}", r.residual_minus),
                );
                check(
                    r.unitarity_defect <= unit_tol,
                    format!("N={n}: unitarity_defect {:e} > {unit_tol:e}", r.unitarity_defect),
                );
                check(
                    r.spectra_distance <= spec_tol,
                    format!("N={n}: spectra_distance {:e} > {spec_tol:e}", r.spectra_distance),
                );
            }
        }
        _ => {
            let o = fitted.clone().expect("sweeps have fitted orders");
            let res: Vec<f64> = rows.iter().map(|r| r.residual_plus.max(r.residual_minus)).collect();
            let spec: Vec<f64> = rows.iter().map(|r| r.spectra_distance).collect();
            judge_convergence(cfg, "residual", &res, o.residual, &mut failures);
            let herm: Vec<f64> = rows.iter().map(|r| r.hermiticity_defect).collect();
            judge_convergence(cfg, "spectra_distance", &spec, o.spectra_distance, &mut failures);
            judge_convergence(cfg, "hermiticity_defect", &herm, o.hermiticity_defect, &mut failures);
        }
    }
    let last = rows.last().expect("at least one resolution").clone();
    Ok(EquivarianceReport {
        n: cfg.n,
        scheme: cfg.scheme,
        metric: cfg.metric_generator()?.to_string(),
        diffeo: map.to_string(),
        delta: cfg.delta().to_string(),
        regime: regime.into(),
        delta_pulled: last.delta_pulled.clone(),
        twist_correction: last.twist_correction.clone(),
        residual_plus: last.residual_plus,
        residual_minus: last.residual_minus,
        unitarity_defect: last.unitarity_defect,
        spectra_distance: last.spectra_distance,
        spectrum_window: last.spectrum_window,
        hermiticity_defect: last.hermiticity_defect,
        rows,
        fitted_orders: fitted,
        tolerances: cfg.tol.clone(),
        pass: failures.is_empty(),
        failures,
    })
}

fn rows_table(rows: &[EquivarianceRow]) -> Table {
    let mut t = Table::new(&[
        "N",
        "residual_plus",
        "residual_minus",
        "unitarity_defect",
        "spectra_distance",
        "hermiticity_defect",
        "hermiticity_defect_max_entry",
    ]);
    for r in rows {
        t.push(vec![
            r.points.to_string(),
            format_float(r.residual_plus),
            format_float(r.residual_minus),
            format_float(r.unitarity_defect),
            format_float(r.spectra_distance),
            format_float(r.hermiticity_defect),
            format_float(r.hermiticity_defect_max_entry),
        ]);
    }
    t
}

pub fn run_check_equivariance(cfg: &RunConfig) -> Result<Outcome> {
    let report = equivariance_report(cfg)?;
    let json = to_json(&report)?;
    let mut files = vec![text_file("equivariance.json", json.clone())];
    if report.rows.len() > 1 {
        files.push(text_file("equivariance.csv", rows_table(&report.rows).to_csv()));
    }
    Ok(Outcome {
        pass: report.pass,
        summary: format!(
            "{} regime: δ {} -> {}, residual ± = {} / {}, spectra distance = {}",
            report.regime,
            report.delta,
            report.delta_pulled,
            format_float(report.residual_plus),
            format_float(report.residual_minus),
            format_float(report.spectra_distance)
        ),
        files,
        json,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct TwoLiftsReport {
    pub n: usize,
    #[serde(rename = "N")]
    pub points: usize,
    pub metric: String,
    pub diffeo: String,
    pub delta: String,
    pub delta_pulled: String,
    pub twist_correction: Vec<u8>,
    /// `max |U₊ψ + U₋ψ|`, zero when the lifts differ by the global sign.
    pub sum_max_abs: f64,
    pub unitarity_defect_plus: f64,
    pub unitarity_defect_minus: f64,
    pub pass: bool,
}

pub fn run_two_lifts(cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate()?;
    let s = setup(cfg, cfg.points)?;
    let psi = &s.probes[0];
    let u_minus = s.u.with_sign(Sign::Minus);
    let plus = s.u.apply(psi)?;
    let minus = u_minus.apply(psi)?;
    let sum_max_abs = plus.add(&minus)?.max_abs();
    let unitarity_defect_plus = diffeo::unitarity_defect(&s.u, &s.probes)?;
    let unitarity_defect_minus = diffeo::unitarity_defect(&u_minus, &s.probes)?;
    let tol = if is_exact(s.u.map(), &[cfg.grid()?]) {
        cfg.tol.unitarity
    } else {
        cfg.tol.residual_smooth
    };
    let pass = sum_max_abs == 0.0 && unitarity_defect_plus <= tol && unitarity_defect_minus <= tol;
    let report = TwoLiftsReport {
        n: cfg.n,
        points: cfg.points,
        metric: s.g.source().to_string(),
        diffeo: s.u.map().to_string(),
        delta: cfg.delta().to_string(),
        delta_pulled: s.u.target_label().to_string(),
        twist_correction: s.u.lift().twist_correction().iter().map(|&t| t as u8).collect(),
        sum_max_abs,
        unitarity_defect_plus,
        unitarity_defect_minus,
        pass,
    };
    let mut files = Vec::new();
    for (name, field) in [("psi.spnr", psi), ("u_plus.spnr", &plus), ("u_minus.spnr", &minus)] {
        let mut buf = Vec::new();
        field.write_binary(&mut buf)?;
        files.push(OutputFile {
            name: name.into(),
            contents: buf,
        });
    }
    let json = to_json(&report)?;
    files.push(text_file("two_lifts.json", json.clone()));
    Ok(Outcome {
        pass,
        summary: format!(
            "δ {} -> {}, max|U₊ψ + U₋ψ| = {}, unitarity defects {} / {}",
            report.delta,
            report.delta_pulled,
            format_float(sum_max_abs),
            format_float(unitarity_defect_plus),
            format_float(unitarity_defect_minus)
        ),
        files,
        json,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceRow {
    #[serde(rename = "N")]
    pub points: usize,
    pub residual: f64,
    pub hermiticity_defect: f64,
    pub hermiticity_defect_max_entry: f64,
    pub spectrum_drift: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceReport {
    pub n: usize,
    pub scheme: Scheme,
    pub metric: String,
    pub diffeo: String,
    pub delta: String,
    pub delta_pulled: String,
    pub rows: Vec<ConvergenceRow>,
    pub fitted_orders: FittedOrders,
    /// `residual[N] / residual[2N]` for consecutive doublings.
    pub residual_ratios: Vec<Option<f64>>,
    pub failures: Vec<String>,
    pub pass: bool,
}

pub fn convergence_report(cfg: &RunConfig) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let points = cfg.resolutions();
    let rows = sweep(cfg, &points)?;
    let fitted = orders(&rows);
    let conv: Vec<ConvergenceRow> = rows
        .iter()
        .map(|r| ConvergenceRow {
            points: r.points,
            residual: r.residual_plus.max(r.residual_minus),
            hermiticity_defect: r.hermiticity_defect,
            hermiticity_defect_max_entry: r.hermiticity_defect_max_entry,
            spectrum_drift: r.spectra_distance,
        })
        .collect();
    let mut failures = Vec::new();
    let col = |f: fn(&ConvergenceRow) -> f64| conv.iter().map(f).collect::<Vec<f64>>();
    judge_convergence(cfg, "residual", &col(|r| r.residual), fitted.residual, &mut failures);
    judge_convergence(
        cfg,
        "hermiticity_defect",
        &col(|r| r.hermiticity_defect),
        fitted.hermiticity_defect,
        &mut failures,
    );
    judge_convergence(cfg, "spectrum_drift", &col(|r| r.spectrum_drift), fitted.spectra_distance, &mut failures);
    let residual_ratios = conv
        .windows(2)
        .map(|w| (w[1].points == 2 * w[0].points && w[1].residual > 0.0).then(|| w[0].residual / w[1].residual))
        .collect();
    Ok(ConvergenceReport {
        n: cfg.n,
        scheme: cfg.scheme,
        metric: cfg.metric_generator()?.to_string(),
        diffeo: cfg.diffeo_map()?.to_string(),
        delta: cfg.delta().to_string(),
        delta_pulled: rows.last().map(|r| r.delta_pulled.clone()).unwrap_or_default(),
        rows: conv,
        fitted_orders: fitted,
        residual_ratios,
        pass: failures.is_empty(),
        failures,
    })
}

pub fn run_convergence(cfg: &RunConfig) -> Result<Outcome> {
    let report = convergence_report(cfg)?;
    let mut table = Table::new(&[
        "N",
        "residual",
        "hermiticity_defect",
        "hermiticity_defect_max_entry",
        "spectrum_drift",
    ]);
    for r in &report.rows {
        table.push(vec![
            r.points.to_string(),
            format_float(r.residual),
            format_float(r.hermiticity_defect),
            format_float(r.hermiticity_defect_max_entry),
            format_float(r.spectrum_drift),
        ]);
    }
    let json = to_json(&report)?;
    let fmt_order = |o: Option<f64>| o.map_or("-".to_string(), |v| format!("{v:.3}"));
    Ok(Outcome {
        pass: report.pass,
        summary: format!(
            "fitted orders: residual {}, hermiticity {}, spectrum drift {}",
            fmt_order(report.fitted_orders.residual),
            fmt_order(report.fitted_orders.hermiticity_defect),
            fmt_order(report.fitted_orders.spectra_distance)
        ),
        files: vec![
            text_file("convergence.csv", table.to_csv()),
            text_file("convergence.json", json.clone()),
        ],
        json,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fitted_order_of_power_laws() {
        let ns = [8, 16, 32];
        let v: Vec<f64> = ns.iter().map(|&n| 3.0 * (n as f64).powi(-4)).collect();
        assert!((fit_order(&ns, &v).unwrap() - 4.0).abs() < 1e-12);
        assert_eq!(fit_order(&ns, &[1.0, 0.0, 1.0]), None);
        assert_eq!(fit_order(&[8], &[1.0]), None);
    }

    #[test]
    fn probes_do_not_depend_on_resolution() {
        let delta = SpinStructureLabel::parse("0.5,0").unwrap();
        let coarse = probe_fields(3, 2, 1.5, &GridSpec::new(2, 8, Scheme::Fd2).unwrap(), &delta, 2).unwrap();
        let fine = probe_fields(3, 2, 1.5, &GridSpec::new(2, 16, Scheme::Fd2).unwrap(), &delta, 2).unwrap();
        // grid point (1,1) of N=8 is (2,2) of N=16
        for (c, f) in coarse.iter().zip(&fine) {
            for (a, b) in c.at(9).iter().zip(f.at(34)) {
                assert!((a - b).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn identity_check_is_clean() {
        let cfg = RunConfig::parse("N = 8\nmetric = conformal(0.1,1,0)\ndelta = 0.5,0").unwrap();
        let r = equivariance_report(&cfg).unwrap();
        assert_eq!(r.regime, "exact");
        assert!(r.pass, "{:?}", r.failures);
        assert!(r.residual_plus < 1e-12 && r.unitarity_defect < 1e-12 && r.spectra_distance < 1e-12);
    }

    #[test]
    fn shear_check_moves_the_twist() {
        let cfg = RunConfig::parse("N = 8\ndelta = 0.5,0\ndiffeo = affine(1,1,0,1)").unwrap();
        let r = equivariance_report(&cfg).unwrap();
        assert!(r.pass, "{:?}", r.failures);
        assert_eq!(r.delta_pulled, "(0.5,0.5)");
    }

    #[test]
    fn flat_convergence_rows_are_zero() {
        let cfg = RunConfig::parse("scheme = fd2\nN_list = 8,16\ndiffeo = translation(0.25,0.5)").unwrap();
        let r = convergence_report(&cfg).unwrap();
        assert!(r.pass, "{:?}", r.failures);
        for row in &r.rows {
            assert!(row.residual <= 1e-12 && row.hermiticity_defect <= 1e-12 && row.spectrum_drift <= 1e-12);
        }
    }
}
