//! The Dirac operator on twisted spinor fields over a periodic grid.
//!
//! In the canonical frame,
//!
//! ```text
//! (Dψ)(x) = Σ_j γ_j ( Σ_a E^a_j(x) ∂_a ψ(x) + ¼ Σ_kl Γ_jkl(x) γ_k γ_l ψ(x) )
//! ```
//!
//! with the derivatives twisted according to the spin structure. With
//! Hermitian gammas `D` is formally skew-adjoint for the volume-weighted
//! inner product, so spectra are reported for the self-adjoint `−iD`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::clifford::{CMatrix, GammaSet};
use crate::derivative::Differentiator;
use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::grid::{GridSpec, Scheme};
use crate::metric::MetricGenerator;
use crate::par;
use crate::spinor::{DiscreteSpinorField, SpinStructureLabel};

/// Default cap on the dense matrix dimension `k·Nⁿ`.
pub const DEFAULT_DENSE_CAP: usize = 8192;

/// Default gap below which eigenvalues count as one cluster.
pub const MULTIPLICITY_GAP: f64 = 1e-8;

/// Relative gap below which magnitudes count as one cluster when placing
/// a comparison window.
pub const CLUSTER_TOL: f64 = 1e-6;

fn eigen_error(e: faer::linalg::evd::EvdError) -> Error {
    Error::Eigen(format!("{e:?}"))
}

const MINUS_I: Complex64 = Complex64::new(0.0, -1.0);

/// Matrix-free Dirac operator for one metric and spin structure.
#[derive(Clone, Debug)]
pub struct DiracOperator {
    grid: GridSpec,
    n: usize,
    k: usize,
    delta: SpinStructureLabel,
    // Σ_j E^a_j(x) γ_j, index ((p * n + a) * k + row) * k + col
    derivative_coeffs: Vec<Complex64>,
    // ¼ Σ_jkl Γ_jkl γ_j γ_k γ_l, index (p * k + row) * k + col
    connection_term: Vec<Complex64>,
    volume: Vec<f64>,
    diff: Differentiator,
    metric: MetricGenerator,
}

/// Builds the operator for `geom` and spin structure `delta`.
pub fn assemble(geom: &Geometry, gammas: &GammaSet, delta: &SpinStructureLabel) -> Result<DiracOperator> {
    let grid = geom.grid().clone();
    let n = grid.dim();
    if gammas.dim() != n || delta.dim() != n {
        return Err(Error::Wiring(format!(
            "grid dimension {n}, gamma dimension {}, spin structure dimension {}",
            gammas.dim(),
            delta.dim()
        )));
    }
    let k = gammas.spinor_dim();
    // γ_j γ_k γ_l products are reused at every point
    let mut triple = Vec::with_capacity(n * n * n);
    for j in 0..n {
        for a in 0..n {
            for b in 0..n {
                triple.push(gammas.gamma(j) * gammas.gamma(a) * gammas.gamma(b));
            }
        }
    }
    let per_point: Vec<(Vec<Complex64>, Vec<Complex64>)> = par::map_range(grid.len(), |p| {
        let e = geom.frame.frame(p);
        let mut coeffs = Vec::with_capacity(n * k * k);
        for a in 0..n {
            let row: Vec<f64> = (0..n).map(|j| e[(a, j)]).collect();
            let m = gammas.contract(&row);
            coeffs.extend(row_major(&m));
        }
        let gamma = geom.connection.christoffel.point(p);
        let mut conn = CMatrix::zeros(k, k);
        for (t, g) in triple.iter().enumerate() {
            let c = gamma[t];
            if c != 0.0 {
                conn += g * Complex64::new(0.25 * c, 0.0);
            }
        }
        (coeffs, row_major(&conn))
    });
    let mut derivative_coeffs = Vec::with_capacity(grid.len() * n * k * k);
    let mut connection_term = Vec::with_capacity(grid.len() * k * k);
    for (c, m) in per_point {
        derivative_coeffs.extend(c);
        connection_term.extend(m);
    }
    Ok(DiracOperator {
        diff: Differentiator::new(&grid),
        grid,
        n,
        k,
        delta: delta.clone(),
        derivative_coeffs,
        connection_term,
        volume: geom.connection.volume.clone(),
        metric: geom.metric.source().clone(),
    })
}

fn row_major(m: &CMatrix) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
    out
}

impl DiracOperator {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn label(&self) -> &SpinStructureLabel {
        &self.delta
    }

    pub fn spinor_dim(&self) -> usize {
        self.k
    }

    pub fn volume(&self) -> &[f64] {
        &self.volume
    }

    pub fn metric(&self) -> &MetricGenerator {
        &self.metric
    }

    /// Dimension `k·Nⁿ` of the discretized spinor space.
    pub fn size(&self) -> usize {
        self.grid.len() * self.k
    }

    pub fn apply(&self, psi: &DiscreteSpinorField) -> Result<DiscreteSpinorField> {
        if psi.label() != &self.delta {
            return Err(Error::IncompatibleSpinStructure {
                left: psi.label().to_string(),
                right: self.delta.to_string(),
            });
        }
        if psi.grid() != &self.grid || psi.components() != self.k {
            return Err(Error::Wiring("spinor field does not live on the operator grid".into()));
        }
        DiscreteSpinorField::from_values(&self.grid, &self.delta, self.k, self.apply_raw(psi.values()))
    }

    /// Applies `D` to raw component data laid out like a spinor field.
    pub fn apply_raw(&self, data: &[Complex64]) -> Vec<Complex64> {
        let (n, k) = (self.n, self.k);
        let derivs: Vec<Vec<Complex64>> = (0..n)
            .map(|a| self.diff.apply(data, k, a, self.delta.is_twisted(a)))
            .collect();
        let mut out = vec![Complex64::new(0.0, 0.0); data.len()];
        par::for_each_chunk_mut(&mut out, k, |p, o| {
            for (r, slot) in o.iter_mut().enumerate() {
                let mut acc = Complex64::new(0.0, 0.0);
                let conn = &self.connection_term[(p * k + r) * k..(p * k + r + 1) * k];
                for c in 0..k {
                    acc += conn[c] * data[p * k + c];
                }
                for (a, d) in derivs.iter().enumerate() {
                    let base = ((p * n + a) * k + r) * k;
                    for c in 0..k {
                        acc += self.derivative_coeffs[base + c] * d[p * k + c];
                    }
                }
                *slot = acc;
            }
        });
        out
    }

    /// Dense matrix of `D`, built column by column from [`Self::apply_raw`].
    pub fn dense(&self, cap: usize) -> Result<CMatrix> {
        let size = self.size();
        if size > cap {
            return Err(Error::SizeCap { size, cap });
        }
        let columns = par::map_range(size, |c| {
            let mut e = vec![Complex64::new(0.0, 0.0); size];
            e[c] = Complex64::new(1.0, 0.0);
            self.apply_raw(&e)
        });
        Ok(DMatrix::from_fn(size, size, |r, c| columns[c][r]))
    }

    /// `B = W^{½} (−iD) W^{−½}`, `W` the diagonal volume weights.
    pub fn weighted_matrix(&self, cap: usize) -> Result<CMatrix> {
        let mut b = self.dense(cap)?;
        let k = self.k;
        let sqrt_w: Vec<f64> = self.volume.iter().map(|w| w.sqrt()).collect();
        for c in 0..b.ncols() {
            for r in 0..b.nrows() {
                b[(r, c)] *= MINUS_I * (sqrt_w[r / k] / sqrt_w[c / k]);
            }
        }
        Ok(b)
    }

    pub fn spectrum(&self) -> Result<Spectrum> {
        self.spectrum_with_cap(DEFAULT_DENSE_CAP)
    }

    /// Eigenvalues of the Hermitian part of `B`, ascending, with the
    /// anti-Hermitian part reported as a diagnostic.
    pub fn spectrum_with_cap(&self, cap: usize) -> Result<Spectrum> {
        let b = self.weighted_matrix(cap)?;
        let skew = &b - b.adjoint();
        let hermiticity_defect = skew.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let smooth_hermiticity_defect = self.smooth_defect(&skew);
        let h = faer::Mat::from_fn(b.nrows(), b.ncols(), |r, c| 0.5 * (b[(r, c)] + b[(c, r)].conj()));
        drop(skew);
        let (eigenvalues, resolved) = if self.grid.scheme().order().is_none() {
            let eigenvalues = h.self_adjoint_eigenvalues(faer::Side::Lower).map_err(eigen_error)?;
            (eigenvalues.clone(), eigenvalues)
        } else {
            let evd = h.self_adjoint_eigen(faer::Side::Lower).map_err(eigen_error)?;
            let eigenvalues: Vec<f64> = evd.S().column_vector().iter().map(|z| z.re).collect();
            let resolved = self.resolved_eigenvalues(&eigenvalues, evd.U());
            (eigenvalues, resolved)
        };
        Ok(Spectrum {
            eigenvalues,
            resolved,
            hermiticity_defect,
            smooth_hermiticity_defect,
        })
    }

    /// Projects onto the modes `|p_a| < N/4` on every axis.
    fn resolved_band(&self, v: &[Complex64]) -> Vec<Complex64> {
        let cutoff = self.grid.points() as f64 / 4.0;
        (0..self.n).fold(v.to_vec(), |acc, a| {
            self.diff.low_pass(&acc, self.k, a, self.delta.is_twisted(a), cutoff)
        })
    }

    /// Eigenvalues of eigenvectors lying mostly inside the resolved band.
    /// Degenerate clusters are first rotated to diagonalize the band
    /// projector, which separates exactly degenerate doublers.
    fn resolved_eigenvalues(&self, eigenvalues: &[f64], vectors: faer::MatRef<'_, Complex64>) -> Vec<f64> {
        let mut clusters: Vec<std::ops::Range<usize>> = Vec::new();
        for i in 0..eigenvalues.len() {
            match clusters.last_mut() {
                Some(c) if eigenvalues[i] - eigenvalues[i - 1] <= MULTIPLICITY_GAP * eigenvalues[i].abs().max(1.0) => {
                    c.end = i + 1
                }
                _ => clusters.push(i..i + 1),
            }
        }
        let per_cluster: Vec<Vec<f64>> = par::map_range(clusters.len(), |ci| {
            let range = clusters[ci].clone();
            let cols: Vec<Vec<Complex64>> = range.clone().map(|i| vectors.col(i).iter().copied().collect()).collect();
            let projected: Vec<Vec<Complex64>> = cols.iter().map(|v| self.resolved_band(v)).collect();
            let m = cols.len();
            let gram = CMatrix::from_fn(m, m, |r, c| cols[r].iter().zip(&projected[c]).map(|(x, y)| x.conj() * y).sum());
            let eig = gram.symmetric_eigen();
            (0..m)
                .filter(|&j| eig.eigenvalues[j] >= 0.5)
                .map(|j| {
                    let w = eig.eigenvectors.column(j);
                    range.clone().enumerate().map(|(r, i)| w[r].norm_sqr() * eigenvalues[i]).sum()
                })
                .collect()
        });
        let mut out: Vec<f64> = per_cluster.into_iter().flatten().collect();
        out.sort_by(f64::total_cmp);
        out
    }

    /// `max ‖(B − B†) v‖ / ‖v‖` over `v = W^{½} ψ`, `ψ` the twisted plane waves
    /// `e^{2πi p·x} e_c` with `|p_a| ≤ 1.5`.
    fn smooth_defect(&self, skew: &CMatrix) -> f64 {
        let k = self.k;
        let shift = self.delta.delta();
        let mut modes: Vec<Vec<f64>> = vec![Vec::new()];
        for &s in &shift {
            modes = modes
                .into_iter()
                .flat_map(|m| {
                    (-2i32..=2).filter_map(move |i| {
                        let p = i as f64 + s;
                        (p.abs() <= 1.5).then(|| {
                            let mut next = m.clone();
                            next.push(p);
                            next
                        })
                    })
                })
                .collect();
        }
        let mut worst: f64 = 0.0;
        for p in &modes {
            for comp in 0..k {
                let v = nalgebra::DVector::from_fn(self.size(), |r, _| {
                    let idx = r / k;
                    if r % k != comp {
                        return Complex64::new(0.0, 0.0);
                    }
                    let x = self.grid.coords(idx);
                    let phase: f64 = p.iter().zip(&x).map(|(a, b)| a * b).sum();
                    Complex64::from_polar(self.volume[idx].sqrt(), 2.0 * std::f64::consts::PI * phase)
                });
                let d = skew * &v;
                worst = worst.max(d.norm() / v.norm());
            }
        }
        worst
    }
}

/// Sorted spectrum of `−iD` with Hermiticity diagnostics.
#[derive(Clone, Debug, Serialize)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    /// Eigenvalues whose eigenvectors lie mostly in the modes `|p_a| < N/4`.
    /// Finite-difference stencils also resolve the Nyquist doublers of each
    /// low mode; these are dropped here. Equal to `eigenvalues` for the
    /// spectral scheme.
    pub resolved: Vec<f64>,
    /// `max |(B − B†)_rs|`.
    pub hermiticity_defect: f64,
    /// Anti-Hermitian part measured on smooth fields; this is the quantity
    /// that vanishes under refinement for curved metrics.
    pub smooth_hermiticity_defect: f64,
}

impl Spectrum {
    pub fn min_abs(&self) -> f64 {
        self.eigenvalues.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.eigenvalues.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    pub fn count_below(&self, threshold: f64) -> usize {
        self.eigenvalues.iter().filter(|v| v.abs() < threshold).count()
    }
}

/// Groups a sorted list into `(value, multiplicity)` clusters separated by
/// more than `gap`.
pub fn cluster_eigenvalues(sorted: &[f64], gap: f64) -> Vec<(f64, usize)> {
    let mut out: Vec<(f64, usize)> = Vec::new();
    let mut last = f64::NEG_INFINITY;
    for &v in sorted {
        match out.last_mut() {
            Some((_, count)) if v - last <= gap => *count += 1,
            _ => out.push((v, 1)),
        }
        last = v;
    }
    out
}

/// Cutoff used when no explicit comparison window is given, computed from
/// resolved eigenvalues: a quarter of the smaller of the two largest
/// magnitudes for the spectral scheme, three quarters for finite
/// differences, whose resolved set already stops at `|p_a| < N/4`.
pub fn default_window(a: &[f64], b: &[f64], scheme: Scheme) -> f64 {
    let ma = a.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let mb = b.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let fraction = if scheme.order().is_none() { 0.25 } else { 0.75 };
    fraction * ma.min(mb)
}

/// Moves `window` into the middle of the gap of `|a|` just above it, so
/// that eigenvalue clusters near the cutoff are not split by rounding.
pub fn snap_window(a: &[f64], window: f64) -> f64 {
    let mut mags: Vec<f64> = a.iter().map(|v| v.abs()).collect();
    mags.sort_by(f64::total_cmp);
    let close = |lo: f64, hi: f64| hi - lo <= CLUSTER_TOL * hi.max(1.0);
    let Some(mut i) = mags.iter().position(|&m| m > window) else {
        return window;
    };
    if i == 0 {
        return window;
    }
    while i < mags.len() && close(mags[i - 1], mags[i]) {
        i += 1;
    }
    if i == mags.len() {
        return window;
    }
    0.5 * (mags[i - 1] + mags[i])
}

/// Largest difference between two sorted spectra restricted to
/// `|λ| ≤ window` (snapped to a gap of `a`). Returns `∞` when the windows
/// hold different numbers of eigenvalues.
///
/// Two discretizations of diffeomorphic operators only resolve the same
/// eigenvalues inside a common band, so comparison is windowed.
pub fn spectrum_distance(a: &[f64], b: &[f64], window: f64) -> f64 {
    let w = snap_window(a, window);
    let sa: Vec<f64> = a.iter().copied().filter(|v| v.abs() <= w).collect();
    let sb: Vec<f64> = b.iter().copied().filter(|v| v.abs() <= w).collect();
    if sa.len() != sb.len() {
        return f64::INFINITY;
    }
    sa.iter().zip(&sb).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::MetricField;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn operator(desc: &str, n: usize, np: usize, scheme: Scheme, delta: &str) -> DiracOperator {
        let grid = GridSpec::new(n, np, scheme).unwrap();
        let g = MetricField::sample(&MetricGenerator::parse(desc, n).unwrap(), &grid).unwrap();
        let geom = Geometry::new(g).unwrap();
        assemble(&geom, &GammaSet::new(n).unwrap(), &SpinStructureLabel::parse(delta).unwrap()).unwrap()
    }

    #[test]
    fn constant_spinor_is_a_zero_mode() {
        let d = operator("flat", 2, 8, Scheme::Spectral, "0,0");
        let grid = d.grid().clone();
        let psi = DiscreteSpinorField::from_fn(&grid, d.label(), 2, |_| {
            vec![Complex64::new(0.3, 0.1), Complex64::new(-1.0, 2.0)]
        })
        .unwrap();
        assert_eq!(d.apply(&psi).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn plane_wave_action() {
        let d = operator("flat", 2, 8, Scheme::Spectral, "0,0");
        let g = GammaSet::new(2).unwrap();
        let m = [1.0, -2.0];
        let v = [Complex64::new(0.5, 0.0), Complex64::new(0.0, 1.0)];
        let psi = DiscreteSpinorField::from_fn(d.grid(), d.label(), 2, |x| {
            let w = Complex64::from_polar(1.0, 2.0 * PI * (m[0] * x[0] + m[1] * x[1]));
            vec![v[0] * w, v[1] * w]
        })
        .unwrap();
        let out = d.apply(&psi).unwrap();
        // 2πi Σ_j γ_j m_j ψ(x), by explicit 2×2 multiplication
        let mat = g.contract(&m) * Complex64::new(0.0, 2.0 * PI);
        for p in 0..d.grid().len() {
            let s = psi.at(p);
            for r in 0..2 {
                let want = mat[(r, 0)] * s[0] + mat[(r, 1)] * s[1];
                assert!((out.at(p)[r] - want).norm() < 1e-11);
            }
        }
    }

    #[test]
    fn apply_is_linear() {
        let d = operator("conformal(0.1,1,0)", 2, 8, Scheme::Fd4, "0.5,0");
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = DiscreteSpinorField::random(d.grid(), d.label(), 2, &mut rng);
        let b = DiscreteSpinorField::random(d.grid(), d.label(), 2, &mut rng);
        let s = Complex64::new(0.7, -1.3);
        let lhs = d.apply(&a.scaled(s).add(&b).unwrap()).unwrap();
        let rhs = d.apply(&a).unwrap().scaled(s).add(&d.apply(&b).unwrap()).unwrap();
        assert!(lhs.sub(&rhs).unwrap().max_abs() < 1e-11);
    }

    #[test]
    fn constant_metric_commutes_with_grid_translations() {
        for scheme in [Scheme::Spectral, Scheme::Fd4] {
            let d = operator("constant(1,1,2)", 2, 4, scheme, "0.5,0");
            let dense = d.dense(DEFAULT_DENSE_CAP).unwrap();
            // translation matrix (Tψ)(x) = ψ(x + h e_1) with the seam twist
            let grid = d.grid().clone();
            let size = d.size();
            let mut t = CMatrix::zeros(size, size);
            for idx in 0..grid.len() {
                let m = grid.multi_index(idx);
                let (j, wraps) = grid.wrap(&[m[0] as i64 + 1, m[1] as i64]);
                let phase = d.label().seam_phase(&wraps);
                for c in 0..2 {
                    t[(idx * 2 + c, j * 2 + c)] = Complex64::new(phase, 0.0);
                }
            }
            let comm = &dense * &t - &t * &dense;
            assert!(comm.iter().map(|z| z.norm()).fold(0.0, f64::max) < 1e-12, "{scheme}");
        }
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let d = operator("flat", 2, 4, Scheme::Spectral, "0,0");
        let psi = DiscreteSpinorField::zeros(d.grid(), &SpinStructureLabel::parse("0.5,0").unwrap(), 2);
        assert!(matches!(d.apply(&psi), Err(Error::IncompatibleSpinStructure { .. })));
        assert!(matches!(d.dense(10), Err(Error::SizeCap { .. })));
    }

    #[test]
    fn flat_spectrum_is_exactly_hermitian() {
        let d = operator("flat", 2, 8, Scheme::Spectral, "0.5,0");
        let s = d.spectrum().unwrap();
        assert!(s.hermiticity_defect <= 1e-13);
        assert_eq!(s.eigenvalues.len(), 128);
    }

    #[test]
    fn clusters_and_windows() {
        let e = [-2.0, -1.0, -1.0 + 1e-12, 0.0, 1.0, 1.0 + 1e-9, 2.0];
        assert_eq!(
            cluster_eigenvalues(&e, MULTIPLICITY_GAP),
            vec![(-2.0, 1), (-1.0, 2), (0.0, 1), (1.0, 2), (2.0, 1)]
        );
        assert!((snap_window(&e, 1.5) - 1.5).abs() < 1e-8);
        assert!((snap_window(&e, 1.0) - 1.5).abs() < 1e-8);
        assert!((snap_window(&e, 0.2) - 0.5).abs() < 1e-8);
        assert_eq!(snap_window(&e, 3.0), 3.0);
        let shifted: Vec<f64> = e.iter().map(|v| v + 1e-3).collect();
        assert!((spectrum_distance(&e, &shifted, 1.2) - 1e-3).abs() < 1e-12);
        assert_eq!(spectrum_distance(&e, &[0.0], 1.2), f64::INFINITY);
    }

    #[test]
    fn finite_differences_drop_doublers() {
        // FD4 symbol (8 sin θ − sin 2θ) / 6h with θ = 2πph
        let np = 8;
        let h = 1.0 / np as f64;
        let symbol = |p: f64| {
            let t = 2.0 * PI * p * h;
            (8.0 * t.sin() - (2.0 * t).sin()) / (6.0 * h)
        };
        let d = operator("flat", 2, np, Scheme::Fd4, "0.5,0");
        let s = d.spectrum().unwrap();
        assert_eq!(s.eigenvalues.len(), 128);
        let mut want = Vec::new();
        for p1 in [-1.5, -0.5, 0.5, 1.5] {
            for p2 in [-1.0, 0.0, 1.0] {
                let l = symbol(p1).hypot(symbol(p2));
                want.extend([l, -l]);
            }
        }
        want.sort_by(f64::total_cmp);
        assert_eq!(s.resolved.len(), want.len());
        for (a, b) in s.resolved.iter().zip(&want) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
        // each low level also appears at the Nyquist doubler
        let lowest = s.eigenvalues.iter().filter(|v| (v.abs() - symbol(0.5)).abs() < 1e-10).count();
        assert_eq!(lowest, 8);
        assert_eq!(s.resolved.iter().filter(|v| (v.abs() - symbol(0.5)).abs() < 1e-10).count(), 4);
    }

    #[test]
    fn spectral_scheme_resolves_everything() {
        let s = operator("conformal(0.1,1,0)", 2, 8, Scheme::Spectral, "0.5,0").spectrum().unwrap();
        assert_eq!(s.resolved, s.eigenvalues);
    }
}
