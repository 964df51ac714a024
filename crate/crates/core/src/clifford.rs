//! Fiber-level Clifford algebra: gamma matrices, the spin representation and
//! the two-to-one map from spin elements onto rotations.
//!
//! Gamma matrices are built by a fixed tensor recursion from the Pauli
//! matrices `s1 = [[0,1],[1,0]]`, `s2 = [[0,-i],[i,0]]`, `s3 = [[1,0],[0,-1]]`:
//!
//! ```text
//! n = 1        : g1 = [1]
//! n = 2m (even): g_j = s1 (x) g'_j  for j < n   (g' = set for n - 1)
//!                g_n = s2 (x) Id
//! n = 2m+1 > 1 : g_j = g'_j         for j < n   (g' = set for n - 1)
//!                g_n = s3 (x) Id_{k/2}
//! ```
//!
//! where `A (x) B` is the Kronecker product with `A` as the outer block
//! structure. This gives `g1, g2, g3 = s1, s2, s3` for `n = 2, 3` and spinor
//! dimension `k = 2^(n/2)` (integer division). All entries are `0, ±1, ±i`.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type RMatrix = DMatrix<f64>;

/// Largest dimension accepted by [`GammaSet::new`].
pub const DEFAULT_MAX_DIM: usize = 8;

/// Tolerance for group-property checks (rotation recovery, lift consistency).
pub const GROUP_TOL: f64 = 1e-10;
/// Tolerance for unitarity of spin elements.
pub const UNITARITY_TOL: f64 = 1e-12;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

fn pauli(which: usize) -> CMatrix {
    match which {
        1 => CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO]),
        2 => CMatrix::from_row_slice(2, 2, &[ZERO, -I, I, ZERO]),
        3 => CMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE]),
        _ => unreachable!("pauli index"),
    }
}

/// Gamma matrices `γ_1..γ_n` of the Dirac representation together with the
/// bivector generators `Σ_jk = ¼[γ_j, γ_k]` of its spin subgroup.
#[derive(Clone, Debug)]
pub struct GammaSet {
    n: usize,
    k: usize,
    gammas: Vec<CMatrix>,
    // indexed by j * n + k, zero on the diagonal
    bivectors: Vec<CMatrix>,
}

impl GammaSet {
    pub fn new(n: usize) -> Result<Self> {
        Self::with_max_dim(n, DEFAULT_MAX_DIM)
    }

    pub fn with_max_dim(n: usize, max: usize) -> Result<Self> {
        if n == 0 || n > max {
            return Err(Error::Dimension { n, max });
        }
        let gammas = build_recursive(n);
        let k = gammas[0].nrows();
        let mut bivectors = Vec::with_capacity(n * n);
        for a in 0..n {
            for b in 0..n {
                let comm = &gammas[a] * &gammas[b] - &gammas[b] * &gammas[a];
                bivectors.push(comm * Complex64::new(0.25, 0.0));
            }
        }
        Ok(Self {
            n,
            k,
            gammas,
            bivectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of spinor components, `2^⌊n/2⌋`.
    pub fn spinor_dim(&self) -> usize {
        self.k
    }

    /// `γ_j` for a zero-based index `j`.
    pub fn gamma(&self, j: usize) -> &CMatrix {
        &self.gammas[j]
    }

    pub fn gammas(&self) -> &[CMatrix] {
        &self.gammas
    }

    /// `Σ_jk = ¼[γ_j, γ_k]` (zero-based).
    pub fn bivector(&self, j: usize, k: usize) -> &CMatrix {
        &self.bivectors[j * self.n + k]
    }

    pub fn identity(&self) -> CMatrix {
        CMatrix::identity(self.k, self.k)
    }

    /// Largest entry of `γ_jγ_m + γ_mγ_j − 2δ_jm Id` over all pairs.
    pub fn anticommutation_defect(&self) -> f64 {
        let id = self.identity();
        let mut worst: f64 = 0.0;
        for j in 0..self.n {
            for m in 0..self.n {
                let mut ac = &self.gammas[j] * &self.gammas[m] + &self.gammas[m] * &self.gammas[j];
                if j == m {
                    ac -= &id * Complex64::new(2.0, 0.0);
                }
                worst = worst.max(ac.iter().map(|z| z.norm()).fold(0.0, f64::max));
            }
        }
        worst
    }

    /// Largest entry of `γ_j − γ_j†`.
    pub fn hermiticity_defect(&self) -> f64 {
        self.gammas
            .iter()
            .map(|g| (g - g.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max))
            .fold(0.0, f64::max)
    }

    /// `Σ_j γ_j v_j` for a real vector `v`.
    pub fn contract(&self, v: &[f64]) -> CMatrix {
        let mut out = CMatrix::zeros(self.k, self.k);
        for (g, &c) in self.gammas.iter().zip(v) {
            if c != 0.0 {
                out += g * Complex64::new(c, 0.0);
            }
        }
        out
    }
}

fn build_recursive(n: usize) -> Vec<CMatrix> {
    if n == 1 {
        return vec![CMatrix::from_element(1, 1, ONE)];
    }
    let prev = build_recursive(n - 1);
    let kp = prev[0].nrows();
    if n % 2 == 0 {
        let s1 = pauli(1);
        let mut out: Vec<CMatrix> = prev.iter().map(|g| s1.kronecker(g)).collect();
        out.push(pauli(2).kronecker(&CMatrix::identity(kp, kp)));
        out
    } else {
        let half = kp / 2;
        let mut out = prev;
        out.push(pauli(3).kronecker(&CMatrix::identity(half, half)));
        out
    }
}

/// Image `μ(h)` of an element of Spin(n) in the Dirac representation.
#[derive(Clone, Debug, PartialEq)]
pub struct SpinElement(CMatrix);

impl SpinElement {
    /// Wraps a matrix, checking unitarity to [`UNITARITY_TOL`].
    pub fn new(matrix: CMatrix) -> Result<Self> {
        let defect = unitarity_defect(&matrix);
        if defect > UNITARITY_TOL {
            return Err(Error::NotSpinElement {
                reason: format!("matrix is not unitary (defect {defect:.3e})"),
            });
        }
        Ok(Self(matrix))
    }

    pub fn identity(k: usize) -> Self {
        Self(CMatrix::identity(k, k))
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    /// The other preimage of the same rotation.
    pub fn negated(&self) -> Self {
        Self(-&self.0)
    }

    pub fn inverse(&self) -> Self {
        Self(self.0.adjoint())
    }

    pub fn compose(&self, other: &SpinElement) -> Self {
        Self(&self.0 * &other.0)
    }
}

fn unitarity_defect(m: &CMatrix) -> f64 {
    if !m.is_square() {
        return f64::INFINITY;
    }
    let prod = m.adjoint() * m;
    let id = CMatrix::identity(m.nrows(), m.nrows());
    (prod - id).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Largest entry of `RᵀR − Id`.
pub fn orthogonality_defect(r: &RMatrix) -> f64 {
    let id = RMatrix::identity(r.nrows(), r.ncols());
    (r.transpose() * r - id).amax()
}

/// Rotation `R` with `S γ_m S⁻¹ = Σ_j γ_j R_jm`, i.e. the covering map `ρ`.
pub fn adjoint_rotation(s: &SpinElement, gammas: &GammaSet) -> Result<RMatrix> {
    let n = gammas.dim();
    let k = gammas.spinor_dim();
    let m = s.matrix();
    if m.nrows() != k || m.ncols() != k {
        return Err(Error::NotSpinElement {
            reason: format!("expected a {k}x{k} matrix, got {}x{}", m.nrows(), m.ncols()),
        });
    }
    let inv = m.adjoint();
    let mut r = RMatrix::zeros(n, n);
    let mut residual: f64 = 0.0;
    for col in 0..n {
        let conj = m * gammas.gamma(col) * &inv;
        let mut rebuilt = CMatrix::zeros(k, k);
        for row in 0..n {
            // tr(γ_j γ_l) = k δ_jl
            let coeff = (gammas.gamma(row) * &conj).trace().re / k as f64;
            r[(row, col)] = coeff;
            rebuilt += gammas.gamma(row) * Complex64::new(coeff, 0.0);
        }
        residual = residual.max((conj - rebuilt).iter().map(|z| z.norm()).fold(0.0, f64::max));
    }
    if residual > GROUP_TOL {
        return Err(Error::NotSpinElement {
            reason: format!("adjoint action leaves the span of the gammas (residual {residual:.3e})"),
        });
    }
    let det = r.determinant();
    if det <= 0.0 {
        return Err(Error::NotSpinElement {
            reason: format!("adjoint action has determinant {det}"),
        });
    }
    Ok(r)
}

/// Rotation angles and the orthonormal basis of the invariant planes of `R`.
#[derive(Clone, Debug)]
pub struct RotationPlanes {
    /// Columns span the planes; plane `p` uses columns `planes[p].0, planes[p].1`.
    pub basis: RMatrix,
    pub planes: Vec<(usize, usize, f64)>,
}

impl RotationPlanes {
    /// Block decomposition of a rotation via the real Schur form. Blocks with
    /// eigenvalue pair `-1, -1` are paired into planes with angle `π`.
    pub fn of(r: &RMatrix) -> Self {
        let n = r.nrows();
        let (q, t) = r.clone().schur().unpack();
        let mut planes = Vec::new();
        let mut minus_ones = Vec::new();
        let mut i = 0;
        while i < n {
            let sub = if i + 1 < n { t[(i + 1, i)] } else { 0.0 };
            if i + 1 < n && sub.abs() > 1e-13 {
                let angle = (t[(i + 1, i)] - t[(i, i + 1)]).atan2(t[(i, i)] + t[(i + 1, i + 1)]);
                planes.push((i, i + 1, angle));
                i += 2;
            } else {
                if t[(i, i)] < 0.0 {
                    minus_ones.push(i);
                }
                i += 1;
            }
        }
        for pair in minus_ones.chunks(2) {
            if let [a, b] = *pair {
                planes.push((a, b, std::f64::consts::PI));
            }
        }
        Self { basis: q, planes }
    }

    pub fn max_angle(&self) -> f64 {
        self.planes.iter().map(|p| p.2.abs()).fold(0.0, f64::max)
    }

    /// Antisymmetric generator with all angles multiplied by `scale`.
    pub fn generator(&self, scale: f64) -> RMatrix {
        let n = self.basis.nrows();
        let mut l = RMatrix::zeros(n, n);
        for &(a, b, angle) in &self.planes {
            l[(b, a)] = angle * scale;
            l[(a, b)] = -angle * scale;
        }
        &self.basis * l * self.basis.transpose()
    }
}

/// Principal real logarithm of a rotation: an antisymmetric `A` with `exp(A) = R`.
pub fn rotation_log(r: &RMatrix) -> RMatrix {
    RotationPlanes::of(r).generator(1.0)
}

/// `exp(¼ Σ_jk A_jk γ_j γ_k)` for antisymmetric `A`; its adjoint action is `exp(A)`.
pub fn bivector_exp(a: &RMatrix, gammas: &GammaSet, orientation: f64) -> CMatrix {
    let n = gammas.dim();
    let k = gammas.spinor_dim();
    let mut x = CMatrix::zeros(k, k);
    for j in 0..n {
        for l in (j + 1)..n {
            let c = a[(j, l)];
            if c != 0.0 {
                // ¼(A_jl γ_jγ_l + A_lj γ_lγ_j) = A_jl Σ_jl
                x += gammas.bivector(j, l) * Complex64::new(c * orientation, 0.0);
            }
        }
    }
    x.exp()
}

/// Angles above this use the half-rotation factorisation.
const NEAR_PI: f64 = std::f64::consts::PI - 1e-3;

/// The two spin elements covering the rotation `R`, as `(S, −S)`.
pub fn spin_lift(r: &RMatrix, gammas: &GammaSet) -> Result<(SpinElement, SpinElement)> {
    let n = gammas.dim();
    if r.nrows() != n || r.ncols() != n {
        return Err(Error::Dimension { n: r.nrows(), max: n });
    }
    let defect = orthogonality_defect(r);
    if defect > GROUP_TOL {
        return Err(Error::NotOrthogonal { defect });
    }
    let det = r.determinant();
    if det <= 0.0 {
        return Err(Error::Orientation { det });
    }
    let planes = RotationPlanes::of(r);
    let lift_with = |orientation: f64| -> CMatrix {
        if planes.max_angle() > NEAR_PI {
            // The principal log jumps at π; lift R_half = exp(A/2) instead and square.
            let half = planes.generator(0.5).exp();
            let half_gen = rotation_log(&half);
            let s_half = bivector_exp(&half_gen, gammas, orientation);
            &s_half * &s_half
        } else {
            bivector_exp(&planes.generator(1.0), gammas, orientation)
        }
    };
    // The sign convention of the exponent is whichever reproduces R.
    for orientation in [1.0, -1.0] {
        let s = SpinElement::new(lift_with(orientation))?;
        if let Ok(back) = adjoint_rotation(&s, gammas) {
            if (&back - r).amax() <= GROUP_TOL {
                let neg = s.negated();
                return Ok((s, neg));
            }
        }
    }
    Err(Error::NotSpinElement {
        reason: "no bivector exponential reproduces the rotation".into(),
    })
}
