//! Orientation-preserving torus diffeomorphisms and their action on metrics,
//! spin structures and spinor fields.
//!
//! Descriptor syntax (axes are 1-based):
//!
//! | descriptor | map |
//! |---|---|
//! | `identity` | `x ↦ x` |
//! | `translation(b1, ..., bn)` | `x ↦ x + b` |
//! | `affine(A11, ..., Ann)` or `affine(A11, ..., Ann, b1, ..., bn)` | `x ↦ A x + b`, `A` integer with `det A = 1` |
//! | `smooth_shear(i, j, amp, mode)` | `x_i ↦ x_i + amp·sin(2π·mode·x_j)` |
//!
//! The lift of `f` acts on spinors as `(U±ψ)(x) = ±S(x)⁻¹ ψ(f(x))` where
//! `S(x)` covers the frame rotation `R(x) = E(f(x))⁻¹ J(x) E′(x)`.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;

use crate::clifford::{self, CMatrix, GammaSet, RMatrix, SpinElement};
use crate::descriptor::{self, parse_call};
use crate::dirac::DiracOperator;
use crate::error::{Error, Result};
use crate::geometry::{frame_of, orthonormal_frame};
use crate::grid::GridSpec;
use crate::metric::{MetricField, MetricGenerator};
use crate::par;
use crate::spinor::{weighted_inner_product, weighted_norm, DiscreteSpinorField, SpinStructureLabel, TrigInterpolant};
use crate::Sign;

/// Tolerance on `RᵀR − Id` for the frame rotation field.
pub const FRAME_TOL: f64 = 1e-8;

/// Largest admissible operator-norm jump between neighbouring lifts.
pub const CONTINUATION_TOL: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub enum DiffeoMap {
    Affine {
        n: usize,
        /// Row-major integer matrix.
        matrix: Vec<i64>,
        shift: Vec<f64>,
    },
    SmoothShear {
        n: usize,
        axis: usize,
        along: usize,
        amplitude: f64,
        mode: f64,
    },
}

fn integer_det(n: usize, matrix: &[i64]) -> i64 {
    let m = RMatrix::from_fn(n, n, |r, c| matrix[r * n + c] as f64);
    m.determinant().round() as i64
}

impl DiffeoMap {
    pub fn identity(n: usize) -> Self {
        Self::translation(vec![0.0; n])
    }

    pub fn translation(shift: Vec<f64>) -> Self {
        let n = shift.len();
        let mut matrix = vec![0; n * n];
        for i in 0..n {
            matrix[i * n + i] = 1;
        }
        DiffeoMap::Affine { n, matrix, shift }
    }

    /// Affine map with the orientation and invertibility checks applied.
    pub fn affine(n: usize, matrix: Vec<i64>, shift: Vec<f64>) -> Result<Self> {
        if matrix.len() != n * n || shift.len() != n {
            return Err(Error::Wiring(format!("affine map on T^{n} needs {n}x{n} matrix and {n} shifts")));
        }
        match integer_det(n, &matrix) {
            1 => Ok(DiffeoMap::Affine { n, matrix, shift }),
            -1 => Err(Error::OrientationReversing { det: -1 }),
            det => Err(Error::descriptor(
                &format!("{:?}", matrix),
                format!("determinant {det}; the matrix must be invertible over the integers"),
            )),
        }
    }

    pub fn parse(desc: &str, n: usize) -> Result<Self> {
        let call = parse_call(desc)?;
        match call.name.as_str() {
            "identity" => {
                if !call.args.is_empty() {
                    return Err(Error::descriptor(desc, "identity takes no arguments"));
                }
                Ok(Self::identity(n))
            }
            "translation" => {
                let b = descriptor::numbers(desc, &call.args)?;
                if b.len() != n {
                    return Err(Error::descriptor(desc, format!("expected {n} shift entries")));
                }
                Ok(Self::translation(b))
            }
            "affine" => {
                let vals = descriptor::numbers(desc, &call.args)?;
                if vals.len() != n * n && vals.len() != n * n + n {
                    return Err(Error::descriptor(desc, format!("expected {} or {} entries", n * n, n * n + n)));
                }
                let mut matrix = Vec::with_capacity(n * n);
                for &v in &vals[..n * n] {
                    if v.fract() != 0.0 || v.abs() > 1e9 {
                        return Err(Error::descriptor(desc, format!("matrix entry {v} is not an integer")));
                    }
                    matrix.push(v as i64);
                }
                let shift = if vals.len() > n * n { vals[n * n..].to_vec() } else { vec![0.0; n] };
                match Self::affine(n, matrix, shift) {
                    Err(Error::Descriptor { reason, .. }) => Err(Error::descriptor(desc, reason)),
                    other => other,
                }
            }
            "smooth_shear" => {
                if call.args.len() != 4 {
                    return Err(Error::descriptor(desc, "expected smooth_shear(i, j, amplitude, mode)"));
                }
                let axis = descriptor::axis(desc, &call.args[0], n)?;
                let along = descriptor::axis(desc, &call.args[1], n)?;
                if axis == along {
                    return Err(Error::descriptor(desc, "the shear needs two distinct axes"));
                }
                let amplitude = descriptor::number(desc, &call.args[2])?;
                let mode = descriptor::number(desc, &call.args[3])?;
                if mode.fract() != 0.0 {
                    return Err(Error::descriptor(desc, "mode must be an integer"));
                }
                if (2.0 * PI * mode * amplitude).abs() >= 1.0 {
                    // keeps x_i ↦ f_i injective on every line
                    return Err(Error::descriptor(desc, "2π·|mode·amplitude| must be below 1"));
                }
                Ok(DiffeoMap::SmoothShear {
                    n,
                    axis,
                    along,
                    amplitude,
                    mode,
                })
            }
            other => Err(Error::descriptor(desc, format!("unknown diffeomorphism `{other}`"))),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DiffeoMap::Affine { n, .. } | DiffeoMap::SmoothShear { n, .. } => *n,
        }
    }

    pub fn is_affine(&self) -> bool {
        matches!(self, DiffeoMap::Affine { .. })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            DiffeoMap::Affine { n, matrix, shift } => (0..*n)
                .map(|r| (0..*n).map(|c| matrix[r * n + c] as f64 * x[c]).sum::<f64>() + shift[r])
                .collect(),
            DiffeoMap::SmoothShear {
                axis,
                along,
                amplitude,
                mode,
                ..
            } => {
                let mut y = x.to_vec();
                y[*axis] += amplitude * (2.0 * PI * mode * x[*along]).sin();
                y
            }
        }
    }

    /// `J^a_b = ∂f^a/∂x^b`.
    pub fn jacobian(&self, x: &[f64]) -> RMatrix {
        match self {
            DiffeoMap::Affine { n, matrix, .. } => RMatrix::from_fn(*n, *n, |r, c| matrix[r * n + c] as f64),
            DiffeoMap::SmoothShear {
                n,
                axis,
                along,
                amplitude,
                mode,
            } => {
                let mut j = RMatrix::identity(*n, *n);
                j[(*axis, *along)] = 2.0 * PI * mode * amplitude * (2.0 * PI * mode * x[*along]).cos();
                j
            }
        }
    }

    /// Integer matrix of the induced map on `H₁(Tⁿ)`, row-major.
    pub fn linear_part(&self) -> Vec<i64> {
        match self {
            DiffeoMap::Affine { matrix, .. } => matrix.clone(),
            DiffeoMap::SmoothShear { n, .. } => {
                let mut m = vec![0; n * n];
                for i in 0..*n {
                    m[i * n + i] = 1;
                }
                m
            }
        }
    }

    /// `f₁ ∘ f₂` for two affine maps.
    pub fn compose(&self, inner: &DiffeoMap) -> Result<DiffeoMap> {
        match (self, inner) {
            (
                DiffeoMap::Affine { n, matrix: a1, shift: b1 },
                DiffeoMap::Affine {
                    n: n2,
                    matrix: a2,
                    shift: b2,
                },
            ) if n == n2 => {
                let n = *n;
                let mut matrix = vec![0; n * n];
                for r in 0..n {
                    for c in 0..n {
                        matrix[r * n + c] = (0..n).map(|t| a1[r * n + t] * a2[t * n + c]).sum();
                    }
                }
                let shift = (0..n)
                    .map(|r| (0..n).map(|t| a1[r * n + t] as f64 * b2[t]).sum::<f64>() + b1[r])
                    .collect();
                Ok(DiffeoMap::Affine { n, matrix, shift })
            }
            _ => Err(Error::Wiring("only affine maps of equal dimension compose in closed form".into())),
        }
    }

    /// Shift in grid steps when the map sends the grid onto itself.
    pub fn lattice_shift(&self, grid: &GridSpec) -> Option<Vec<i64>> {
        let DiffeoMap::Affine { shift, .. } = self else {
            return None;
        };
        let np = grid.points() as f64;
        shift
            .iter()
            .map(|b| {
                let s = b * np;
                ((s - s.round()).abs() < 1e-9).then(|| s.round() as i64)
            })
            .collect()
    }

    /// Image of the grid point `idx` as an integer lattice point, if exact.
    fn lattice_image(&self, grid: &GridSpec, idx: usize, steps: &[i64]) -> Vec<i64> {
        let DiffeoMap::Affine { n, matrix, .. } = self else {
            unreachable!("lattice images exist only for affine maps")
        };
        let m = grid.multi_index(idx);
        (0..*n)
            .map(|r| (0..*n).map(|c| matrix[r * n + c] * m[c] as i64).sum::<i64>() + steps[r])
            .collect()
    }
}

impl fmt::Display for DiffeoMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiffeoMap::Affine { matrix, shift, .. } => {
                let parts: Vec<String> = matrix
                    .iter()
                    .map(|v| v.to_string())
                    .chain(shift.iter().map(|v| v.to_string()))
                    .collect();
                write!(f, "affine({})", parts.join(","))
            }
            DiffeoMap::SmoothShear {
                axis,
                along,
                amplitude,
                mode,
                ..
            } => write!(f, "smooth_shear({},{},{amplitude},{mode})", axis + 1, along + 1),
        }
    }
}

fn check_dims(f: &DiffeoMap, grid: &GridSpec) -> Result<()> {
    if f.dim() != grid.dim() {
        return Err(Error::Wiring(format!(
            "map of dimension {} on a {}-dimensional grid",
            f.dim(),
            grid.dim()
        )));
    }
    Ok(())
}

/// `(f*g)_ab(x) = J^c_a(x) g_cd(f(x)) J^d_b(x)`. Grid-exact affine maps reuse
/// the samples of `g`; otherwise the closed form is evaluated at `f(x)`.
pub fn pullback_metric(f: &DiffeoMap, g: &MetricField) -> Result<MetricField> {
    let grid = g.grid();
    check_dims(f, grid)?;
    let generator = MetricGenerator::Pullback {
        map: f.clone(),
        base: Box::new(g.source().clone()),
    };
    match f.lattice_shift(grid) {
        Some(steps) => {
            let values = par::map_range(grid.len(), |idx| {
                let (src, _) = grid.wrap(&f.lattice_image(grid, idx, &steps));
                let j = f.jacobian(&[]);
                j.transpose() * g.at(src) * j
            });
            MetricField::from_values(grid.clone(), values, generator)
        }
        None => MetricField::sample(&generator, grid),
    }
}

/// Pointwise rotations between the canonical frames of `f*g` and `g`.
#[derive(Clone, Debug)]
pub struct RotationField {
    grid: GridSpec,
    values: Vec<RMatrix>,
}

impl RotationField {
    /// Wraps per-point rotations, checking orthogonality to [`FRAME_TOL`].
    pub fn from_values(grid: &GridSpec, values: Vec<RMatrix>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Grid(format!("expected {} rotations, got {}", grid.len(), values.len())));
        }
        for (i, r) in values.iter().enumerate() {
            let defect = clifford::orthogonality_defect(r);
            if defect > FRAME_TOL || r.determinant() <= 0.0 {
                return Err(Error::InconsistentFrames {
                    point: grid.multi_index(i),
                    defect,
                });
            }
        }
        Ok(Self {
            grid: grid.clone(),
            values,
        })
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

    /// Largest `|RᵀR − Id|` over the grid.
    pub fn orthogonality_defect(&self) -> f64 {
        self.values
            .iter()
            .map(clifford::orthogonality_defect)
            .fold(0.0, f64::max)
    }
}

/// `R(x) = E(f(x))⁻¹ J(x) E′(x)`, `E′` the canonical frame of `f*g`.
pub fn frame_rotation_field(f: &DiffeoMap, g: &MetricField) -> Result<RotationField> {
    let grid = g.grid().clone();
    let pulled = pullback_metric(f, g)?;
    let target = orthonormal_frame(&pulled)?;
    let steps = f.lattice_shift(&grid);
    let source = match steps {
        Some(_) => Some(orthonormal_frame(g)?),
        None => None,
    };
    let values: Vec<Option<RMatrix>> = par::map_range(grid.len(), |idx| {
        let x = grid.coords(idx);
        let theta = match (&steps, &source) {
            (Some(s), Some(frames)) => {
                let (src, _) = grid.wrap(&f.lattice_image(&grid, idx, s));
                frames.coframe(src).clone()
            }
            _ => frame_of(&g.source().eval(&f.apply(&x)))?.1,
        };
        Some(theta * f.jacobian(&x) * target.frame(idx))
    });
    let values = values
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            r.ok_or_else(|| Error::NotPositiveDefinite {
                point: grid.multi_index(i),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    RotationField::from_values(&grid, values)
}

fn operator_norm(m: &CMatrix) -> f64 {
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

/// Distances of `s` and `−s` from `prev`, in operator norm.
fn sign_distances(prev: &CMatrix, s: &CMatrix) -> (f64, f64) {
    (operator_norm(&(s - prev)), operator_norm(&(s + prev)))
}

/// Continues a lift along a path of rotations from `start`, choosing at each
/// step the preimage closer to the previous one.
pub fn continue_lift(path: &[RMatrix], gammas: &GammaSet, start: &SpinElement) -> Result<Vec<SpinElement>> {
    let mut out = Vec::with_capacity(path.len());
    let mut prev = start.clone();
    for (i, r) in path.iter().enumerate() {
        let (s, neg) = clifford::spin_lift(r, gammas)?;
        let (plus, minus) = sign_distances(prev.matrix(), s.matrix());
        let defect = plus.min(minus);
        if defect > CONTINUATION_TOL {
            return Err(Error::RefinementNeeded {
                from: vec![i.saturating_sub(1)],
                to: vec![i],
                defect,
            });
        }
        prev = if plus <= minus { s } else { neg };
        out.push(prev.clone());
    }
    Ok(out)
}

/// Continuous spin lift of a rotation field on the fundamental domain.
#[derive(Clone, Debug)]
pub struct SpinLiftField {
    grid: GridSpec,
    rotations: Vec<RMatrix>,
    spins: Vec<SpinElement>,
    base_sign: Sign,
    twist_correction: Vec<bool>,
}

impl SpinLiftField {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn rotation(&self, idx: usize) -> &RMatrix {
        &self.rotations[idx]
    }

    pub fn spin(&self, idx: usize) -> &SpinElement {
        &self.spins[idx]
    }

    pub fn spins(&self) -> &[SpinElement] {
        &self.spins
    }

    pub fn base_sign(&self) -> Sign {
        self.base_sign
    }

    /// Holonomy of the lift around each coordinate cycle, `true` = −1.
    pub fn twist_correction(&self) -> &[bool] {
        &self.twist_correction
    }

    /// Largest `|ρ(S(x)) − R(x)|` over the grid.
    pub fn covering_defect(&self, gammas: &GammaSet) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (s, r) in self.spins.iter().zip(&self.rotations) {
            worst = worst.max((clifford::adjoint_rotation(s, gammas)? - r).amax());
        }
        Ok(worst)
    }
}

/// Lifts `rotations` to Spin(n) continuously.
///
/// The lift at the origin is `base_sign · spin_lift(R(0)).0`; it is continued
/// over the lexicographic BFS tree of the non-wrapping grid edges, so any
/// sign change sits on the seam. Every grid edge is checked for an
/// unambiguous sign, and the sign picked up across the seam along each
/// coordinate loop through the origin is the twist correction.
pub fn spin_lift_field(rotations: &RotationField, gammas: &GammaSet, base_sign: Sign) -> Result<SpinLiftField> {
    let grid = rotations.grid().clone();
    let n = grid.dim();
    let np = grid.points();
    let lifts = par::map_range(grid.len(), |i| clifford::spin_lift(rotations.at(i), gammas));
    let lifts = lifts.into_iter().collect::<Result<Vec<_>>>()?;

    let mut spins: Vec<Option<SpinElement>> = vec![None; grid.len()];
    let origin = lifts[0].0.clone();
    spins[0] = Some(match base_sign {
        Sign::Plus => origin,
        Sign::Minus => origin.negated(),
    });
    let mut queue = VecDeque::from([0usize]);
    while let Some(p) = queue.pop_front() {
        let m = grid.multi_index(p);
        for a in 0..n {
            for step in [1i64, -1] {
                let next = m[a] as i64 + step;
                if next < 0 || next >= np as i64 {
                    continue;
                }
                let q = p as i64 + step * grid.stride(a) as i64;
                let q = q as usize;
                if spins[q].is_some() {
                    continue;
                }
                let prev = spins[p].as_ref().map(|s| s.matrix().clone()).unwrap_or_default();
                let (s, neg) = &lifts[q];
                let (plus, minus) = sign_distances(&prev, s.matrix());
                let defect = plus.min(minus);
                if defect > CONTINUATION_TOL {
                    return Err(Error::RefinementNeeded {
                        from: m.clone(),
                        to: grid.multi_index(q),
                        defect,
                    });
                }
                spins[q] = Some(if plus <= minus { s.clone() } else { neg.clone() });
                queue.push_back(q);
            }
        }
    }
    let spins: Vec<SpinElement> = spins.into_iter().map(|s| s.expect("grid graph is connected")).collect();

    // every non-wrapping edge must agree; wrapping edges carry the holonomy
    let mut twist_correction = vec![false; n];
    for p in 0..grid.len() {
        let m = grid.multi_index(p);
        for a in 0..n {
            let wraps = m[a] + 1 == np;
            let q = if wraps { p - (np - 1) * grid.stride(a) } else { p + grid.stride(a) };
            let (plus, minus) = sign_distances(spins[p].matrix(), spins[q].matrix());
            let defect = plus.min(minus);
            if defect > CONTINUATION_TOL {
                return Err(Error::RefinementNeeded {
                    from: m,
                    to: grid.multi_index(q),
                    defect,
                });
            }
            let flipped = minus < plus;
            if wraps {
                if m.iter().enumerate().all(|(b, &i)| b == a || i == 0) {
                    twist_correction[a] = flipped;
                }
            } else if flipped {
                return Err(Error::RefinementNeeded {
                    from: m,
                    to: grid.multi_index(q),
                    defect,
                });
            }
        }
    }
    Ok(SpinLiftField {
        grid,
        rotations: rotations.values().to_vec(),
        spins,
        base_sign,
        twist_correction,
    })
}

/// `δ′_a = Σ_c A_ca δ_c + t_a (mod 1)` with `A` the linear part of `f` and
/// `t` the twist correction of the lift.
pub fn pullback_spin_structure(f: &DiffeoMap, delta: &SpinStructureLabel, lift: &SpinLiftField) -> SpinStructureLabel {
    let n = f.dim();
    let a = f.linear_part();
    let bits = (0..n)
        .map(|col| {
            let transported: i64 = (0..n).filter(|&c| delta.is_twisted(c)).map(|c| a[c * n + col]).sum();
            (transported.rem_euclid(2) == 1) ^ lift.twist_correction()[col]
        })
        .collect();
    SpinStructureLabel::from_bits(bits)
}

#[derive(Clone, Debug)]
enum Sampling {
    // lattice point f(x) for every grid point
    Lattice(Vec<Vec<i64>>),
    // continuum point f(x) for every grid point
    Points(Vec<Vec<f64>>),
}

/// One of the two lifts `U±` of `f`, mapping fields over `(δ, g)` to fields
/// over `(δ′, f*g)`.
#[derive(Clone, Debug)]
pub struct LiftUnitary {
    map: DiffeoMap,
    sign: Sign,
    source_label: SpinStructureLabel,
    target_label: SpinStructureLabel,
    source_metric: MetricField,
    target_metric: MetricField,
    inverse_spins: Vec<CMatrix>,
    lift: SpinLiftField,
    sampling: Sampling,
    k: usize,
}

/// Builds `U±` for `f` acting on spinors over `(delta, g)`.
///
/// Smooth maps, and affine maps whose shift is off the grid lattice, read
/// `ψ(f(x))` from the trigonometric interpolant and need `interpolate`.
pub fn lift_unitary(
    f: &DiffeoMap,
    g: &MetricField,
    delta: &SpinStructureLabel,
    gammas: &GammaSet,
    sign: Sign,
    interpolate: bool,
) -> Result<LiftUnitary> {
    let grid = g.grid().clone();
    check_dims(f, &grid)?;
    if delta.dim() != grid.dim() || gammas.dim() != grid.dim() {
        return Err(Error::Wiring("spin structure, gammas and grid disagree in dimension".into()));
    }
    let sampling = match f.lattice_shift(&grid) {
        Some(steps) => Sampling::Lattice((0..grid.len()).map(|i| f.lattice_image(&grid, i, &steps)).collect()),
        None if interpolate => Sampling::Points((0..grid.len()).map(|i| f.apply(&grid.coords(i))).collect()),
        None => return Err(Error::InterpolationRequired),
    };
    let rotations = frame_rotation_field(f, g)?;
    let lift = spin_lift_field(&rotations, gammas, Sign::Plus)?;
    let target_label = pullback_spin_structure(f, delta, &lift);
    Ok(LiftUnitary {
        map: f.clone(),
        sign,
        source_label: delta.clone(),
        target_label,
        source_metric: g.clone(),
        target_metric: pullback_metric(f, g)?,
        inverse_spins: lift.spins().iter().map(|s| s.inverse().into_matrix()).collect(),
        lift,
        sampling,
        k: gammas.spinor_dim(),
    })
}

impl LiftUnitary {
    pub fn map(&self) -> &DiffeoMap {
        &self.map
    }

    pub fn sign(&self) -> Sign {
        self.sign
    }

    pub fn source_label(&self) -> &SpinStructureLabel {
        &self.source_label
    }

    pub fn target_label(&self) -> &SpinStructureLabel {
        &self.target_label
    }

    pub fn source_metric(&self) -> &MetricField {
        &self.source_metric
    }

    pub fn target_metric(&self) -> &MetricField {
        &self.target_metric
    }

    pub fn lift(&self) -> &SpinLiftField {
        &self.lift
    }

    /// The same lift with the other global sign.
    pub fn with_sign(&self, sign: Sign) -> Self {
        Self { sign, ..self.clone() }
    }

    /// `(U±ψ)(x) = ±S(x)⁻¹ ψ(f(x))`.
    pub fn apply(&self, psi: &DiscreteSpinorField) -> Result<DiscreteSpinorField> {
        if psi.label() != &self.source_label {
            return Err(Error::IncompatibleSpinStructure {
                left: psi.label().to_string(),
                right: self.source_label.to_string(),
            });
        }
        let grid = self.source_metric.grid();
        if psi.grid() != grid || psi.components() != self.k {
            return Err(Error::Wiring("spinor field does not live on the lift grid".into()));
        }
        let pulled: Vec<Vec<Complex64>> = match &self.sampling {
            Sampling::Lattice(points) => points
                .iter()
                .map(|lat| {
                    let (phase, v) = psi.at_lattice(lat);
                    v.iter().map(|z| z * phase).collect()
                })
                .collect(),
            Sampling::Points(points) => {
                let interp = TrigInterpolant::new(psi);
                par::map_range(points.len(), |i| interp.eval(&points[i]))
            }
        };
        self.finish(pulled)
    }

    /// Applies `U±` to a field given in closed form on `Rⁿ` (twist included).
    pub fn apply_fn<F>(&self, psi: F) -> Result<DiscreteSpinorField>
    where
        F: Fn(&[f64]) -> Vec<Complex64> + Sync,
    {
        let grid = self.source_metric.grid();
        let pulled = par::map_range(grid.len(), |i| psi(&self.map.apply(&grid.coords(i))));
        self.finish(pulled)
    }

    fn finish(&self, pulled: Vec<Vec<Complex64>>) -> Result<DiscreteSpinorField> {
        let k = self.k;
        let mut values = Vec::with_capacity(pulled.len() * k);
        for (v, s_inv) in pulled.iter().zip(&self.inverse_spins) {
            if v.len() != k {
                return Err(Error::Wiring(format!("expected {k} components, got {}", v.len())));
            }
            for r in 0..k {
                let z: Complex64 = (0..k).map(|c| s_inv[(r, c)] * v[c]).sum();
                values.push(match self.sign {
                    Sign::Plus => z,
                    Sign::Minus => -z,
                });
            }
        }
        DiscreteSpinorField::from_values(self.source_metric.grid(), &self.target_label, k, values)
    }
}

/// `max |⟨Uψ|Uφ⟩′ − ⟨ψ|φ⟩|` over all pairs of `probes`, each normalized to
/// unit norm for `g`.
pub fn unitarity_defect(u: &LiftUnitary, probes: &[DiscreteSpinorField]) -> Result<f64> {
    let vol = u.source_metric.volume_density();
    let vol_t = u.target_metric.volume_density();
    let mut normalized = Vec::with_capacity(probes.len());
    for p in probes {
        let norm = weighted_norm(p, &vol)?;
        let p = if norm > 0.0 { p.scaled(Complex64::new(1.0 / norm, 0.0)) } else { p.clone() };
        let up = u.apply(&p)?;
        normalized.push((p, up));
    }
    let mut worst: f64 = 0.0;
    for (a, ua) in &normalized {
        for (b, ub) in &normalized {
            let before = weighted_inner_product(a, b, &vol)?;
            let after = weighted_inner_product(ua, ub, &vol_t)?;
            worst = worst.max((after - before).norm());
        }
    }
    Ok(worst)
}

/// `max ‖D′Uψ − UDψ‖′ / ‖Dψ‖` over `probes`, in the volume-weighted norms of
/// the respective metrics. Probes with `Dψ ≈ 0` are measured against `‖ψ‖`.
pub fn equivariance_residual(
    d_prime: &DiracOperator,
    u: &LiftUnitary,
    d: &DiracOperator,
    probes: &[DiscreteSpinorField],
) -> Result<f64> {
    if d.label() != u.source_label() || d_prime.label() != u.target_label() {
        return Err(Error::Wiring(format!(
            "operators act on {} and {}, lift maps {} to {}",
            d.label(),
            d_prime.label(),
            u.source_label(),
            u.target_label()
        )));
    }
    if d.grid() != u.source_metric.grid() || d_prime.grid() != u.target_metric.grid() {
        return Err(Error::Wiring("operators and lift live on different grids".into()));
    }
    if d.metric() != u.source_metric.source() || d_prime.metric() != u.target_metric.source() {
        return Err(Error::Wiring(format!(
            "operators built for {} and {}, lift maps {} to {}",
            d.metric(),
            d_prime.metric(),
            u.source_metric.source(),
            u.target_metric.source()
        )));
    }
    let mut worst: f64 = 0.0;
    for psi in probes {
        let dpsi = d.apply(psi)?;
        let lhs = d_prime.apply(&u.apply(psi)?)?;
        let rhs = u.apply(&dpsi)?;
        let num = weighted_norm(&lhs.sub(&rhs)?, d_prime.volume())?;
        let scale = weighted_norm(&dpsi, d.volume())?;
        let den = if scale > 1e-12 * weighted_norm(psi, d.volume())? {
            scale
        } else {
            weighted_norm(psi, d.volume())?
        };
        if den > 0.0 {
            worst = worst.max(num / den);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dirac;
    use crate::geometry::Geometry;
    use crate::grid::Scheme;
    use crate::spinor::PlaneWaveProbe;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize, np: usize) -> GridSpec {
        GridSpec::new(n, np, Scheme::Spectral).unwrap()
    }

    fn metric(desc: &str, grid: &GridSpec) -> MetricField {
        MetricField::sample(&MetricGenerator::parse(desc, grid.dim()).unwrap(), grid).unwrap()
    }

    fn rotation(theta: f64) -> RMatrix {
        RMatrix::from_row_slice(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()])
    }

    #[test]
    fn parses_and_validates() {
        let f = DiffeoMap::parse("affine(1,1,0,1,0.25,0)", 2).unwrap();
        assert_eq!(f.apply(&[0.5, 0.5]), vec![1.25, 0.5]);
        assert_eq!(DiffeoMap::parse(&f.to_string(), 2).unwrap(), f);
        let s = DiffeoMap::parse("smooth_shear(1,2,0.05,1)", 2).unwrap();
        assert_eq!(DiffeoMap::parse(&s.to_string(), 2).unwrap(), s);
        assert!(matches!(
            DiffeoMap::parse("affine(0,1,1,0)", 2),
            Err(Error::OrientationReversing { det: -1 })
        ));
        assert!(DiffeoMap::parse("affine(2,0,0,1)", 2).is_err());
        assert!(DiffeoMap::parse("affine(1.5,0,0,1)", 2).is_err());
        assert!(DiffeoMap::parse("smooth_shear(1,1,0.05,1)", 2).is_err());
        assert!(DiffeoMap::parse("smooth_shear(1,2,0.05,0.5)", 2).is_err());
        assert_eq!(DiffeoMap::parse("identity", 3).unwrap(), DiffeoMap::identity(3));
    }

    #[test]
    fn smooth_shear_jacobian_matches_differences() {
        let f = DiffeoMap::parse("smooth_shear(1,2,0.05,2)", 2).unwrap();
        let x = [0.3, 0.17];
        let eps = 1e-6;
        let j = f.jacobian(&x);
        for b in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[b] += eps;
            xm[b] -= eps;
            let (fp, fm) = (f.apply(&xp), f.apply(&xm));
            for a in 0..2 {
                assert!(((fp[a] - fm[a]) / (2.0 * eps) - j[(a, b)]).abs() < 1e-8);
            }
        }
        assert!((j.determinant() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn pullbacks() {
        let gr = grid(2, 8);
        let flat = metric("flat", &gr);
        assert_eq!(
            pullback_metric(&DiffeoMap::identity(2), &flat).unwrap().values(),
            flat.values()
        );
        let shear = DiffeoMap::parse("affine(1,1,0,1)", 2).unwrap();
        let pulled = pullback_metric(&shear, &flat).unwrap();
        let ata = RMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 2.0]);
        assert!(pulled.values().iter().all(|g| *g == ata));

        let conf = metric("conformal(0.1,1,0)", &gr);
        let t = DiffeoMap::translation(vec![0.25, 0.0]);
        let moved = pullback_metric(&t, &conf).unwrap();
        for idx in 0..gr.len() {
            let x = gr.coords(idx);
            let want = conf.source().eval(&[x[0] + 0.25, x[1]]);
            assert!((moved.at(idx) - want).amax() < 1e-14);
        }
    }

    #[test]
    fn rotation_fields() {
        let gr = grid(2, 8);
        let flat = metric("flat", &gr);
        let id = frame_rotation_field(&DiffeoMap::identity(2), &flat).unwrap();
        assert!(id.values().iter().all(|r| (r - RMatrix::identity(2, 2)).amax() < 1e-15));

        let shear = DiffeoMap::parse("affine(1,1,0,1)", 2).unwrap();
        let r = frame_rotation_field(&shear, &flat).unwrap();
        // E′ = Cholesky frame of (AᵀA)⁻¹ = [[2,−1],[−1,1]]
        let e = RMatrix::from_row_slice(2, 2, &[2f64.sqrt(), 0.0, -1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt()]);
        let a = RMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!(r.values().iter().all(|m| (m - &a * &e).amax() < 1e-14));
        assert!(r.orthogonality_defect() < 1e-14);

        for amp in [1e-2, 1e-3] {
            let f = DiffeoMap::SmoothShear {
                n: 2,
                axis: 0,
                along: 1,
                amplitude: amp,
                mode: 1.0,
            };
            let r = frame_rotation_field(&f, &flat).unwrap();
            let dev = r.values().iter().map(|m| (m - RMatrix::identity(2, 2)).amax()).fold(0.0, f64::max);
            assert!(dev < 10.0 * amp && dev > 0.5 * amp, "{dev}");
        }
    }

    #[test]
    fn identity_lifts() {
        let gr = grid(2, 4);
        let g = GammaSet::new(2).unwrap();
        let ids = RotationField::from_values(&gr, vec![RMatrix::identity(2, 2); gr.len()]).unwrap();
        let plus = spin_lift_field(&ids, &g, Sign::Plus).unwrap();
        assert!(plus.spins().iter().all(|s| *s == SpinElement::identity(2)));
        assert_eq!(plus.twist_correction(), &[false, false]);
        let minus = spin_lift_field(&ids, &g, Sign::Minus).unwrap();
        assert!(minus.spins().iter().all(|s| *s == SpinElement::identity(2).negated()));
    }

    #[test]
    fn winding_rotation_has_holonomy_on_first_cycle() {
        let gr = grid(2, 16);
        let g = GammaSet::new(2).unwrap();
        let values = (0..gr.len()).map(|i| rotation(2.0 * PI * gr.coords(i)[0])).collect();
        let field = RotationField::from_values(&gr, values).unwrap();
        let lift = spin_lift_field(&field, &g, Sign::Plus).unwrap();
        assert_eq!(lift.twist_correction(), &[true, false]);
        assert!(lift.covering_defect(&g).unwrap() < 1e-9);
        // S(x) = cos(πx₁) ± sin(πx₁)·γ₁γ₂, so the trace is 2cos(πx₁)
        for i in 0..gr.len() {
            let x = gr.coords(i)[0];
            let tr = lift.spin(i).matrix().trace();
            assert!((tr - Complex64::new(2.0 * (PI * x).cos(), 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn coarse_jumps_need_refinement() {
        let gr = grid(2, 4);
        let g = GammaSet::new(2).unwrap();
        let values = (0..gr.len()).map(|i| rotation(6.0 * PI * gr.coords(i)[0])).collect();
        let field = RotationField::from_values(&gr, values).unwrap();
        assert!(matches!(
            spin_lift_field(&field, &g, Sign::Plus),
            Err(Error::RefinementNeeded { .. })
        ));
    }

    #[test]
    fn full_turn_ends_at_minus_identity() {
        let g = GammaSet::new(3).unwrap();
        let path: Vec<RMatrix> = (0..=64)
            .map(|i| {
                let t = 2.0 * PI * i as f64 / 64.0;
                let mut r = RMatrix::identity(3, 3);
                r.view_mut((0, 0), (2, 2)).copy_from(&rotation(t));
                r
            })
            .collect();
        let lifts = continue_lift(&path, &g, &SpinElement::identity(2)).unwrap();
        let last = lifts.last().unwrap().matrix();
        assert!((last + CMatrix::identity(2, 2)).iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn shear_moves_twist_to_second_axis() {
        let gr = grid(2, 8);
        let flat = metric("flat", &gr);
        let gammas = GammaSet::new(2).unwrap();
        let shear = DiffeoMap::parse("affine(1,1,0,1)", 2).unwrap();
        let cases = [("0,0", "0,0"), ("0.5,0", "0.5,0.5"), ("0,0.5", "0,0.5"), ("0.5,0.5", "0.5,0")];
        for (from, to) in cases {
            let delta = SpinStructureLabel::parse(from).unwrap();
            let u = lift_unitary(&shear, &flat, &delta, &gammas, Sign::Plus, false).unwrap();
            assert_eq!(u.target_label(), &SpinStructureLabel::parse(to).unwrap(), "{from}");
        }
    }

    #[test]
    fn identity_lift_is_identity() {
        let gr = grid(2, 8);
        let g = metric("conformal(0.1,1,1)", &gr);
        let gammas = GammaSet::new(2).unwrap();
        let delta = SpinStructureLabel::parse("0.5,0").unwrap();
        let u = lift_unitary(&DiffeoMap::identity(2), &g, &delta, &gammas, Sign::Plus, false).unwrap();
        let psi = DiscreteSpinorField::random(&gr, &delta, 2, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(u.apply(&psi).unwrap(), psi);
    }

    #[test]
    fn smooth_maps_need_interpolation() {
        let gr = grid(2, 8);
        let flat = metric("flat", &gr);
        let gammas = GammaSet::new(2).unwrap();
        let f = DiffeoMap::parse("smooth_shear(1,2,0.05,1)", 2).unwrap();
        let delta = SpinStructureLabel::periodic(2);
        assert!(matches!(
            lift_unitary(&f, &flat, &delta, &gammas, Sign::Plus, false),
            Err(Error::InterpolationRequired)
        ));
        let off_grid = DiffeoMap::translation(vec![0.01, 0.0]);
        assert!(lift_unitary(&off_grid, &flat, &delta, &gammas, Sign::Plus, false).is_err());
        assert!(lift_unitary(&f, &flat, &delta, &gammas, Sign::Plus, true).is_ok());
    }

    #[test]
    fn lifts_compose_up_to_sign() {
        let gr = grid(2, 8);
        let g = metric("conformal(0.1,1,0)", &gr);
        let gammas = GammaSet::new(2).unwrap();
        let delta = SpinStructureLabel::parse("0.5,0").unwrap();
        let f1 = DiffeoMap::parse("affine(1,1,0,1,0.125,0)", 2).unwrap();
        let f2 = DiffeoMap::parse("affine(1,0,1,1,0,0.25)", 2).unwrap();
        let u1 = lift_unitary(&f1, &g, &delta, &gammas, Sign::Plus, false).unwrap();
        let g1 = u1.target_metric().clone();
        let u2 = lift_unitary(&f2, &g1, u1.target_label(), &gammas, Sign::Plus, false).unwrap();
        let u12 = lift_unitary(&f1.compose(&f2).unwrap(), &g, &delta, &gammas, Sign::Plus, false).unwrap();
        assert_eq!(u12.target_label(), u2.target_label());

        let psi = DiscreteSpinorField::random(&gr, &delta, 2, &mut ChaCha8Rng::seed_from_u64(5));
        let direct = u12.apply(&psi).unwrap();
        let chained = u2.apply(&u1.apply(&psi).unwrap()).unwrap();
        let plus = direct.sub(&chained).unwrap().max_abs();
        let minus = direct.add(&chained).unwrap().max_abs();
        assert!(plus.min(minus) < 1e-10, "{plus} {minus}");
    }

    #[test]
    fn sheared_plane_waves_commute_exactly() {
        let gr = grid(2, 16);
        let flat = metric("flat", &gr);
        let gammas = GammaSet::new(2).unwrap();
        let delta = SpinStructureLabel::parse("0.5,0").unwrap();
        let shear = DiffeoMap::parse("affine(1,1,0,1)", 2).unwrap();
        let u = lift_unitary(&shear, &flat, &delta, &gammas, Sign::Plus, false).unwrap();
        let d = dirac::assemble(&Geometry::new(flat.clone()).unwrap(), &gammas, &delta).unwrap();
        let dp = dirac::assemble(&Geometry::new(u.target_metric().clone()).unwrap(), &gammas, u.target_label())
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let probes: Vec<_> = (0..3)
            .map(|_| PlaneWaveProbe::random(&delta, 2, 2.5, &mut rng).sample(&gr).unwrap())
            .collect();
        assert!(equivariance_residual(&dp, &u, &d, &probes).unwrap() < 1e-10);
        assert!(unitarity_defect(&u, &probes).unwrap() < 1e-12);
        // swapped operators are a wiring error
        assert!(matches!(
            equivariance_residual(&d, &u, &dp, &probes),
            Err(Error::Wiring(_))
        ));
    }
}
