//! Orthonormal frames, commutator structure constants and the Levi-Civita
//! connection in the frame, computed on a periodic grid.
//!
//! Index conventions (all zero-based in code):
//!
//! * `E^a_j`: coordinate component `a` of frame vector `e_j`, stored as
//!   `E[(a, j)]`; the coframe `θ = E⁻¹` has `θ[(k, b)] = θ^k_b`.
//! * `[e_i, e_j] = Σ_k c_ijk e_k`.
//! * `Γ_jkl = ⟨e_k, ∇_{e_j} e_l⟩`, skew in `(k, l)`. The Koszul formula gives
//!   `Γ_jkl = ½ (c_jlk − c_lkj + c_kjl)`, which is what the Dirac operator
//!   uses. The three-term combination `c_jkl + c_jlk + c_lkj` without the
//!   `½` is available as [`ConnectionFormula::ThreeTermLiteral`]; it is not
//!   skew in `(k, l)` and does not match the Levi-Civita connection. The
//!   Levi-Civita form equals `−½ (c_jkl − c_jlk + c_lkj)`: the same three
//!   terms with the middle sign flipped and an overall factor `−½`.

use crate::clifford::RMatrix;
use crate::derivative::Differentiator;
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::metric::MetricField;
use crate::par;

/// Canonical oriented orthonormal frame: the lower-triangular Cholesky
/// factor `E` of `g⁻¹`, so `Eᵀ g E = Id` with positive diagonal.
#[derive(Clone, Debug)]
pub struct FrameField {
    grid: GridSpec,
    frame: Vec<RMatrix>,
    coframe: Vec<RMatrix>,
}

/// Frame and coframe of a single metric matrix.
pub fn frame_of(g: &RMatrix) -> Option<(RMatrix, RMatrix)> {
    let ginv = g.clone().try_inverse()?;
    let sym = (&ginv + ginv.transpose()) * 0.5;
    let e = sym.cholesky()?.unpack();
    let theta = e.clone().try_inverse()?;
    Some((e, theta))
}

impl FrameField {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn frame(&self, idx: usize) -> &RMatrix {
        &self.frame[idx]
    }

    pub fn coframe(&self, idx: usize) -> &RMatrix {
        &self.coframe[idx]
    }

    /// Largest `|Eᵀ g E − Id|` over the grid.
    pub fn orthonormality_defect(&self, g: &MetricField) -> f64 {
        self.frame
            .iter()
            .zip(g.values())
            .map(|(e, gm)| (e.transpose() * gm * e - RMatrix::identity(e.nrows(), e.nrows())).amax())
            .fold(0.0, f64::max)
    }

    fn flattened(&self) -> Vec<f64> {
        self.frame.iter().flat_map(|e| e.as_slice().to_vec()).collect()
    }
}

pub fn orthonormal_frame(g: &MetricField) -> Result<FrameField> {
    let grid = g.grid().clone();
    let pairs = par::map_range(grid.len(), |i| frame_of(g.at(i)));
    let mut frame = Vec::with_capacity(grid.len());
    let mut coframe = Vec::with_capacity(grid.len());
    for (i, p) in pairs.into_iter().enumerate() {
        let (e, t) = p.ok_or_else(|| Error::NotPositiveDefinite {
            point: grid.multi_index(i),
        })?;
        frame.push(e);
        coframe.push(t);
    }
    Ok(FrameField { grid, frame, coframe })
}

/// Per-point rank-3 array with `n³` entries, last index fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Rank3Field {
    n: usize,
    values: Vec<f64>,
}

impl Rank3Field {
    fn zeros(n: usize, len: usize) -> Self {
        Self {
            n,
            values: vec![0.0; len * n * n * n],
        }
    }

    pub fn get(&self, p: usize, i: usize, j: usize, k: usize) -> f64 {
        let n = self.n;
        self.values[((p * n + i) * n + j) * n + k]
    }

    fn point_mut(&mut self, p: usize) -> &mut [f64] {
        let m = self.n * self.n * self.n;
        &mut self.values[p * m..(p + 1) * m]
    }

    pub fn point(&self, p: usize) -> &[f64] {
        let m = self.n * self.n * self.n;
        &self.values[p * m..(p + 1) * m]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest entrywise difference.
    pub fn max_diff(&self, other: &Rank3Field) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Largest `|T_jkl + T_jlk|`.
    pub fn skew_defect_last_two(&self) -> f64 {
        let n = self.n;
        let len = self.values.len() / (n * n * n);
        let mut worst: f64 = 0.0;
        for p in 0..len {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        worst = worst.max((self.get(p, j, k, l) + self.get(p, j, l, k)).abs());
                    }
                }
            }
        }
        worst
    }

    pub fn map_points<F>(&self, f: F) -> Rank3Field
    where
        F: Fn(&[f64]) -> Vec<f64>,
    {
        let m = self.n * self.n * self.n;
        let values = self.values.chunks(m).flat_map(f).collect();
        Rank3Field { n: self.n, values }
    }
}

/// `∂_a` of every entry of a per-point `n×n` matrix field (column-major).
fn matrix_field_derivatives(diff: &Differentiator, flat: &[f64], n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|a| diff.apply_real(flat, n * n, a)).collect()
}

/// `c_ijk` with `[e_i, e_j] = Σ_k c_ijk e_k`.
pub fn structure_constants(frame: &FrameField) -> Rank3Field {
    let grid = frame.grid();
    let n = grid.dim();
    let diff = Differentiator::new(grid);
    let de = matrix_field_derivatives(&diff, &frame.flattened(), n);
    let nn = n * n;
    let mut c = Rank3Field::zeros(n, grid.len());
    let points: Vec<Vec<f64>> = par::map_range(grid.len(), |p| {
        let e = frame.frame(p);
        let theta = frame.coframe(p);
        // x[(i*n + j)*n + b] = Σ_a E^a_i ∂_a E^b_j
        let mut x = vec![0.0; nn * n];
        for i in 0..n {
            for j in 0..n {
                for b in 0..n {
                    let mut s = 0.0;
                    for a in 0..n {
                        s += e[(a, i)] * de[a][p * nn + b + j * n];
                    }
                    x[(i * n + j) * n + b] = s;
                }
            }
        }
        let mut out = vec![0.0; nn * n];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let mut s = 0.0;
                    for b in 0..n {
                        s += theta[(k, b)] * (x[(i * n + j) * n + b] - x[(j * n + i) * n + b]);
                    }
                    out[(i * n + j) * n + k] = s;
                }
            }
        }
        out
    });
    for (p, v) in points.into_iter().enumerate() {
        c.point_mut(p).copy_from_slice(&v);
    }
    c
}

/// Which combination of structure constants builds the frame connection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ConnectionFormula {
    /// `½ (c_jlk − c_lkj + c_kjl)`, the Levi-Civita connection.
    #[default]
    LeviCivita,
    /// `c_jkl + c_jlk + c_lkj`, kept for cross-checking.
    ThreeTermLiteral,
}

pub fn christoffel_frame(c: &Rank3Field, formula: ConnectionFormula) -> Rank3Field {
    let n = c.n;
    c.map_points(|cp| {
        let at = |i: usize, j: usize, k: usize| cp[(i * n + j) * n + k];
        let mut out = vec![0.0; n * n * n];
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    out[(j * n + k) * n + l] = match formula {
                        ConnectionFormula::LeviCivita => 0.5 * (at(j, l, k) - at(l, k, j) + at(k, j, l)),
                        ConnectionFormula::ThreeTermLiteral => at(j, k, l) + at(j, l, k) + at(l, k, j),
                    };
                }
            }
        }
        out
    })
}

/// Coordinate Christoffel symbols and their projection onto the frame.
#[derive(Clone, Debug)]
pub struct LeviCivitaOracle {
    /// `Γ^a_bc`, stored as `get(p, a, b, c)`.
    pub coordinate: Rank3Field,
    /// `ω_jkl = θ^k(∇_{e_j} e_l)`, comparable with [`christoffel_frame`].
    pub frame: Rank3Field,
}

pub fn levi_civita_oracle(g: &MetricField) -> Result<LeviCivitaOracle> {
    let grid = g.grid();
    let n = grid.dim();
    let nn = n * n;
    let frame = orthonormal_frame(g)?;
    let diff = Differentiator::new(grid);
    let gflat: Vec<f64> = g.values().iter().flat_map(|m| m.as_slice().to_vec()).collect();
    let dg = matrix_field_derivatives(&diff, &gflat, n);
    let de = matrix_field_derivatives(&diff, &frame.flattened(), n);

    let mut coordinate = Rank3Field::zeros(n, grid.len());
    let mut projected = Rank3Field::zeros(n, grid.len());
    let points: Vec<(Vec<f64>, Vec<f64>)> = par::map_range(grid.len(), |p| {
        let ginv = g.at(p).clone().try_inverse().expect("metric validated as SPD");
        // ∂_a g_bc, column-major storage: index b + c*n
        let dgv = |a: usize, b: usize, c: usize| dg[a][p * nn + b + c * n];
        let mut chr = vec![0.0; nn * n];
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    let mut s = 0.0;
                    for d in 0..n {
                        s += ginv[(a, d)] * (dgv(b, d, c) + dgv(c, d, b) - dgv(d, b, c));
                    }
                    chr[(a * n + b) * n + c] = 0.5 * s;
                }
            }
        }
        let e = frame.frame(p);
        let theta = frame.coframe(p);
        let mut omega = vec![0.0; nn * n];
        for j in 0..n {
            for l in 0..n {
                // (∇_{e_j} e_l)^b
                let mut v = vec![0.0; n];
                for (b, vb) in v.iter_mut().enumerate() {
                    let mut s = 0.0;
                    for a in 0..n {
                        s += e[(a, j)] * de[a][p * nn + b + l * n];
                        for c in 0..n {
                            s += e[(a, j)] * chr[(b * n + a) * n + c] * e[(c, l)];
                        }
                    }
                    *vb = s;
                }
                for k in 0..n {
                    omega[(j * n + k) * n + l] = (0..n).map(|b| theta[(k, b)] * v[b]).sum();
                }
            }
        }
        (chr, omega)
    });
    for (p, (chr, omega)) in points.into_iter().enumerate() {
        coordinate.point_mut(p).copy_from_slice(&chr);
        projected.point_mut(p).copy_from_slice(&omega);
    }
    Ok(LeviCivitaOracle {
        coordinate,
        frame: projected,
    })
}

/// Structure constants, frame connection and volume density on a grid.
#[derive(Clone, Debug)]
pub struct ConnectionField {
    grid: GridSpec,
    pub structure: Rank3Field,
    pub christoffel: Rank3Field,
    pub volume: Vec<f64>,
}

impl ConnectionField {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }
}

/// Metric together with its canonical frame and connection.
#[derive(Clone, Debug)]
pub struct Geometry {
    pub metric: MetricField,
    pub frame: FrameField,
    pub connection: ConnectionField,
}

impl Geometry {
    pub fn new(metric: MetricField) -> Result<Self> {
        let frame = orthonormal_frame(&metric)?;
        let structure = structure_constants(&frame);
        let christoffel = christoffel_frame(&structure, ConnectionFormula::LeviCivita);
        let connection = ConnectionField {
            grid: metric.grid().clone(),
            structure,
            christoffel,
            volume: metric.volume_density(),
        };
        Ok(Self {
            metric,
            frame,
            connection,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        self.metric.grid()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Scheme;
    use crate::metric::MetricGenerator;
    use std::f64::consts::PI;

    fn field(desc: &str, n: usize, np: usize, scheme: Scheme) -> MetricField {
        let grid = GridSpec::new(n, np, scheme).unwrap();
        MetricField::sample(&MetricGenerator::parse(desc, n).unwrap(), &grid).unwrap()
    }

    #[test]
    fn flat_frame_is_identity() {
        let g = field("flat", 2, 8, Scheme::Spectral);
        let f = orthonormal_frame(&g).unwrap();
        for p in 0..g.grid().len() {
            assert_eq!(*f.frame(p), RMatrix::identity(2, 2));
        }
    }

    #[test]
    fn constant_frame_by_hand() {
        // g⁻¹ = [[2,-1],[-1,1]] = L Lᵀ with L = [[√2, 0], [-1/√2, 1/√2]]
        let g = field("constant(1,1,2)", 2, 4, Scheme::Spectral);
        let f = orthonormal_frame(&g).unwrap();
        let s = 2f64.sqrt();
        let want = RMatrix::from_row_slice(2, 2, &[s, 0.0, -1.0 / s, 1.0 / s]);
        assert!((f.frame(0) - want).amax() < 1e-15);
        assert!(f.orthonormality_defect(&g) < 1e-12);
    }

    #[test]
    fn conformal_frame_is_rescaled_identity() {
        let g = field("conformal(0.1,1,0)", 2, 16, Scheme::Spectral);
        let f = orthonormal_frame(&g).unwrap();
        for p in 0..g.grid().len() {
            let x = g.grid().coords(p);
            let u = 0.1 * (2.0 * PI * x[0]).sin();
            assert!((f.frame(p) - RMatrix::identity(2, 2) * (-u).exp()).amax() < 1e-14);
        }
    }

    #[test]
    fn frame_defect_on_many_metrics() {
        for desc in ["flat", "constant(2,0.3,-0.1,1,0.2,3)", "conformal(0.2,1,1,0)", "diag_wave(1,0.3,2)"] {
            let g = field(desc, 3, 4, Scheme::Fd4);
            let f = orthonormal_frame(&g).unwrap();
            assert!(f.orthonormality_defect(&g) < 1e-12, "{desc}");
            assert!((0..g.grid().len()).all(|p| f.frame(p).determinant() > 0.0));
        }
    }

    #[test]
    fn structure_constants_vanish_for_constant_frames() {
        for desc in ["flat", "constant(1,1,2)"] {
            let g = field(desc, 2, 8, Scheme::Spectral);
            let c = structure_constants(&orthonormal_frame(&g).unwrap());
            assert_eq!(c.max_abs(), 0.0, "{desc}");
            let gamma = christoffel_frame(&c, ConnectionFormula::LeviCivita);
            assert_eq!(gamma.max_abs(), 0.0);
        }
    }

    #[test]
    fn conformal_structure_constants_closed_form() {
        // e_i = e^{-u} ∂_i  =>  [e_1, e_2] = e^{-u}(∂_2 u e_1 − ∂_1 u e_2)
        let g = field("conformal(0.1,1,1)", 2, 32, Scheme::Spectral);
        let c = structure_constants(&orthonormal_frame(&g).unwrap());
        for p in 0..g.grid().len() {
            let x = g.grid().coords(p);
            let phase = 2.0 * PI * (x[0] + x[1]);
            let u = 0.1 * phase.sin();
            let du = 0.1 * 2.0 * PI * phase.cos();
            assert!((c.get(p, 0, 1, 0) - (-u).exp() * du).abs() < 1e-10);
            assert!((c.get(p, 0, 1, 1) + (-u).exp() * du).abs() < 1e-10);
            assert_eq!(c.get(p, 1, 0, 0), -c.get(p, 0, 1, 0));
        }
    }

    #[test]
    fn oracle_diag_wave_christoffel() {
        let g = field("diag_wave(2,0.2,1)", 2, 32, Scheme::Spectral);
        let o = levi_civita_oracle(&g).unwrap();
        for p in 0..g.grid().len() {
            let x = g.grid().coords(p);
            let s = 1.0 + 0.2 * (2.0 * PI * x[0]).sin();
            let ds = 0.2 * 2.0 * PI * (2.0 * PI * x[0]).cos();
            // Γ^2_{12} with 1-based indices
            assert!((o.coordinate.get(p, 1, 0, 1) - ds / s).abs() < 1e-10);
        }
        assert!(o.frame.skew_defect_last_two() < 1e-10);
    }

    #[test]
    fn levi_civita_combination_matches_oracle() {
        let g = field("conformal(0.1,1,0)", 2, 32, Scheme::Spectral);
        let c = structure_constants(&orthonormal_frame(&g).unwrap());
        let gamma = christoffel_frame(&c, ConnectionFormula::LeviCivita);
        let oracle = levi_civita_oracle(&g).unwrap();
        assert!(gamma.max_diff(&oracle.frame) < 1e-10);
        assert_eq!(gamma.skew_defect_last_two(), 0.0);
        let literal = christoffel_frame(&c, ConnectionFormula::ThreeTermLiteral);
        assert!(literal.max_diff(&oracle.frame) > 0.1);
    }

    #[test]
    fn oracle_discrepancy_follows_scheme_order() {
        for (scheme, order) in [(Scheme::Fd2, 2.0), (Scheme::Fd4, 4.0)] {
            let gaps: Vec<f64> = [16, 32]
                .iter()
                .map(|&np| {
                    let g = field("conformal(0.1,1,0)", 2, np, scheme);
                    let c = structure_constants(&orthonormal_frame(&g).unwrap());
                    let gamma = christoffel_frame(&c, ConnectionFormula::LeviCivita);
                    gamma.max_diff(&levi_civita_oracle(&g).unwrap().frame)
                })
                .collect();
            let fitted = (gaps[0] / gaps[1]).log2();
            assert!((fitted - order).abs() <= 0.3, "{scheme}: {gaps:?}");
        }
    }
}
