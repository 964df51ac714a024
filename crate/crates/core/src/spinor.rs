//! Spin structures of the torus as twisted boundary conditions, and spinor
//! fields sampled on a grid.
//!
//! A spin structure on `Tⁿ` is labelled by `δ ∈ {0, ½}ⁿ`: a spinor field
//! satisfies `ψ(x + e_a) = (−1)^{2δ_a} ψ(x)`. Only the fundamental domain is
//! stored; the twist is applied whenever a value is read across the seam.
//! Stored components are taken in the canonical spinor frame over the
//! canonical orthonormal frame of the metric.

use std::f64::consts::PI;
use std::fmt;
use std::io::{Read, Write};

use num_complex::Complex64;
use rand::Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ConnectionField;
use crate::grid::{GridSpec, Scheme};
use crate::par;

/// Twist label `δ ∈ {0, ½}ⁿ`, stored as bits (`true` = ½).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpinStructureLabel {
    twists: Vec<bool>,
}

impl SpinStructureLabel {
    pub fn periodic(n: usize) -> Self {
        Self { twists: vec![false; n] }
    }

    pub fn from_bits(twists: Vec<bool>) -> Self {
        Self { twists }
    }

    /// From `δ` values; each entry must be exactly `0` or `½` (mod 1).
    pub fn from_halves(delta: &[f64]) -> Result<Self> {
        let twists = delta
            .iter()
            .map(|&d| {
                let r = d.rem_euclid(1.0);
                if r.abs() < 1e-12 || (1.0 - r).abs() < 1e-12 {
                    Ok(false)
                } else if (r - 0.5).abs() < 1e-12 {
                    Ok(true)
                } else {
                    Err(Error::descriptor(&d.to_string(), "spin structure entries must be 0 or 0.5"))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { twists })
    }

    /// Parses `"0.5,0"` style lists.
    pub fn parse(s: &str) -> Result<Self> {
        let vals = s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::descriptor(s, format!("`{p}` is not a number")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_halves(&vals)
    }

    /// All `2ⁿ` labels, in binary counting order with axis 0 most significant.
    pub fn all(n: usize) -> Vec<Self> {
        (0..1usize << n)
            .map(|bits| Self {
                twists: (0..n).map(|a| bits >> (n - 1 - a) & 1 == 1).collect(),
            })
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.twists.len()
    }

    pub fn bits(&self) -> &[bool] {
        &self.twists
    }

    pub fn is_twisted(&self, axis: usize) -> bool {
        self.twists[axis]
    }

    pub fn delta(&self) -> Vec<f64> {
        self.twists.iter().map(|&t| if t { 0.5 } else { 0.0 }).collect()
    }

    /// `(−1)^{2δ·m}` for a lattice translation `m`.
    pub fn seam_phase(&self, wraps: &[i64]) -> f64 {
        let odd = self
            .twists
            .iter()
            .zip(wraps)
            .filter(|(t, w)| **t && w.rem_euclid(2) == 1)
            .count();
        if odd % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Torsor action of `(Z/2)ⁿ`.
    pub fn shifted(&self, by: &[bool]) -> Self {
        Self {
            twists: self.twists.iter().zip(by).map(|(a, b)| a ^ b).collect(),
        }
    }

    /// The class in `(Z/2)ⁿ` carrying `other` to `self`.
    pub fn difference(&self, other: &Self) -> Vec<bool> {
        self.twists.iter().zip(&other.twists).map(|(a, b)| a ^ b).collect()
    }
}

impl fmt::Display for SpinStructureLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = self.twists.iter().map(|&t| if t { "0.5" } else { "0" }).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// `C^k`-valued grid function with twisted periodicity.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteSpinorField {
    grid: GridSpec,
    delta: SpinStructureLabel,
    k: usize,
    values: Vec<Complex64>,
}

impl DiscreteSpinorField {
    pub fn zeros(grid: &GridSpec, delta: &SpinStructureLabel, k: usize) -> Self {
        Self {
            grid: grid.clone(),
            delta: delta.clone(),
            k,
            values: vec![Complex64::new(0.0, 0.0); grid.len() * k],
        }
    }

    pub fn from_values(grid: &GridSpec, delta: &SpinStructureLabel, k: usize, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() * k {
            return Err(Error::Grid(format!(
                "expected {} spinor values, got {}",
                grid.len() * k,
                values.len()
            )));
        }
        if delta.dim() != grid.dim() {
            return Err(Error::Wiring(format!(
                "spin structure of dimension {} on a {}-dimensional grid",
                delta.dim(),
                grid.dim()
            )));
        }
        Ok(Self {
            grid: grid.clone(),
            delta: delta.clone(),
            k,
            values,
        })
    }

    /// Samples a closed-form field `x ↦ ψ(x)` on the fundamental domain.
    pub fn from_fn<F>(grid: &GridSpec, delta: &SpinStructureLabel, k: usize, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Vec<Complex64> + Sync + Send,
    {
        let pts = par::map_range(grid.len(), |i| f(&grid.coords(i)));
        let mut values = Vec::with_capacity(grid.len() * k);
        for v in pts {
            if v.len() != k {
                return Err(Error::Wiring(format!("closure returned {} components, expected {k}", v.len())));
            }
            values.extend(v);
        }
        Self::from_values(grid, delta, k, values)
    }

    /// Independent standard-normal real and imaginary parts at every entry.
    pub fn random<R: Rng>(grid: &GridSpec, delta: &SpinStructureLabel, k: usize, rng: &mut R) -> Self {
        let normal = rand_normal_pair;
        let values = (0..grid.len() * k)
            .map(|_| {
                let (a, b) = normal(rng);
                Complex64::new(a, b)
            })
            .collect();
        Self {
            grid: grid.clone(),
            delta: delta.clone(),
            k,
            values,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn label(&self) -> &SpinStructureLabel {
        &self.delta
    }

    pub fn components(&self) -> usize {
        self.k
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    /// Components at linear grid index `idx`.
    pub fn at(&self, idx: usize) -> &[Complex64] {
        &self.values[idx * self.k..(idx + 1) * self.k]
    }

    /// Value at an arbitrary lattice point, applying the seam twist.
    pub fn at_lattice(&self, lattice: &[i64]) -> (f64, &[Complex64]) {
        let (idx, wraps) = self.grid.wrap(lattice);
        (self.delta.seam_phase(&wraps), self.at(idx))
    }

    pub fn scaled(&self, s: Complex64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * s).collect(),
            ..self.clone()
        }
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        check_compatible(self, other)?;
        Ok(Self {
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
            ..self.clone()
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_compatible(self, other)?;
        Ok(Self {
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
            ..self.clone()
        })
    }

    /// Largest component modulus.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// `ψ(x + s·h)` for an integer step vector `s`, i.e. the same field with
    /// the fundamental domain moved; seam twists are applied.
    pub fn translate_by_steps(&self, steps: &[i64]) -> Self {
        let grid = &self.grid;
        let mut values = Vec::with_capacity(self.values.len());
        for idx in 0..grid.len() {
            let lattice: Vec<i64> = grid
                .multi_index(idx)
                .iter()
                .zip(steps)
                .map(|(&i, &s)| i as i64 + s)
                .collect();
            let (phase, v) = self.at_lattice(&lattice);
            values.extend(v.iter().map(|z| z * phase));
        }
        Self {
            values,
            ..self.clone()
        }
    }
}

fn rand_normal_pair<R: Rng>(rng: &mut R) -> (f64, f64) {
    // Box-Muller
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    let r = (-2.0 * u1.ln()).sqrt();
    (r * (2.0 * PI * u2).cos(), r * (2.0 * PI * u2).sin())
}

fn check_compatible(a: &DiscreteSpinorField, b: &DiscreteSpinorField) -> Result<()> {
    if a.delta != b.delta {
        return Err(Error::IncompatibleSpinStructure {
            left: a.delta.to_string(),
            right: b.delta.to_string(),
        });
    }
    if a.grid != b.grid || a.k != b.k {
        return Err(Error::Wiring("spinor fields live on different grids".into()));
    }
    Ok(())
}

/// `a_{ψ,φ}(x) = Σ_c conj(ψ_c(x)) φ_c(x)`.
pub fn pointwise_density(psi: &DiscreteSpinorField, phi: &DiscreteSpinorField) -> Result<Vec<Complex64>> {
    check_compatible(psi, phi)?;
    let k = psi.k;
    Ok(psi
        .values
        .chunks(k)
        .zip(phi.values.chunks(k))
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x.conj() * y).sum())
        .collect())
}

/// `⟨ψ|φ⟩ = Σ_x a_{ψ,φ}(x) vol(x) hⁿ`, conjugate-linear in `ψ`.
pub fn inner_product(psi: &DiscreteSpinorField, phi: &DiscreteSpinorField, geom: &ConnectionField) -> Result<Complex64> {
    weighted_inner_product(psi, phi, &geom.volume)
}

/// Inner product with an explicit volume density.
pub fn weighted_inner_product(psi: &DiscreteSpinorField, phi: &DiscreteSpinorField, volume: &[f64]) -> Result<Complex64> {
    let density = pointwise_density(psi, phi)?;
    if volume.len() != density.len() {
        return Err(Error::Wiring("volume density does not match the spinor grid".into()));
    }
    let cell = psi.grid.cell_volume();
    // fixed left-to-right order keeps the sum reproducible
    let sum: Complex64 = density.iter().zip(volume).map(|(a, w)| a * w).sum();
    Ok(sum * cell)
}

/// Weighted norm `√⟨ψ|ψ⟩`.
pub fn weighted_norm(psi: &DiscreteSpinorField, volume: &[f64]) -> Result<f64> {
    Ok(weighted_inner_product(psi, psi, volume)?.re.max(0.0).sqrt())
}

/// The two identity-covering prolongation isomorphisms act as `±1`.
pub fn equivalent_prolongation_unitary(psi: &DiscreteSpinorField, sign: crate::Sign) -> DiscreteSpinorField {
    match sign {
        crate::Sign::Plus => psi.clone(),
        crate::Sign::Minus => psi.scaled(Complex64::new(-1.0, 0.0)),
    }
}

/// Trigonometric interpolant of a twisted-periodic field, using the same mode
/// set as the spectral derivative, so it reproduces band-limited fields
/// exactly at every point of `Rⁿ` (with the twist built in).
#[derive(Clone, Debug)]
pub struct TrigInterpolant {
    grid: GridSpec,
    shift: Vec<f64>,
    k: usize,
    // coefficients of the demodulated field, grid layout, k per mode
    coeffs: Vec<Complex64>,
}

impl TrigInterpolant {
    pub fn new(psi: &DiscreteSpinorField) -> Self {
        let grid = psi.grid.clone();
        let n = grid.dim();
        let np = grid.points();
        let k = psi.k;
        let shift = psi.delta.delta();
        let mut data = psi.values.clone();
        // demodulate by e^{-2πi δ·x}
        for idx in 0..grid.len() {
            let x = grid.coords(idx);
            let phase: f64 = x.iter().zip(&shift).map(|(a, b)| a * b).sum();
            let w = Complex64::from_polar(1.0, -2.0 * PI * phase);
            for c in 0..k {
                data[idx * k + c] *= w;
            }
        }
        let fft = FftPlanner::new().plan_fft_forward(np);
        let norm = 1.0 / np as f64;
        for axis in 0..n {
            let stride = grid.stride(axis);
            let outer = grid.len() / (np * stride);
            let mut buf = vec![Complex64::new(0.0, 0.0); np];
            for o in 0..outer {
                for inner in 0..stride {
                    let base = o * np * stride + inner;
                    for c in 0..k {
                        for (j, b) in buf.iter_mut().enumerate() {
                            *b = data[(base + j * stride) * k + c];
                        }
                        fft.process(&mut buf);
                        for (j, b) in buf.iter().enumerate() {
                            data[(base + j * stride) * k + c] = b * norm;
                        }
                    }
                }
            }
        }
        Self {
            grid,
            shift,
            k,
            coeffs: data,
        }
    }

    /// Value at an arbitrary point `y ∈ Rⁿ`.
    pub fn eval(&self, y: &[f64]) -> Vec<Complex64> {
        let n = self.grid.dim();
        let np = self.grid.points();
        let half = np / 2;
        let basis: Vec<Vec<Complex64>> = (0..n)
            .map(|a| {
                (0..np)
                    .map(|f| {
                        let m = if f < half { f as f64 } else { f as f64 - np as f64 };
                        Complex64::from_polar(1.0, 2.0 * PI * m * y[a])
                    })
                    .collect()
            })
            .collect();
        let mut out = vec![Complex64::new(0.0, 0.0); self.k];
        for idx in 0..self.grid.len() {
            let mut w = Complex64::new(1.0, 0.0);
            let mut rem = idx;
            for a in (0..n).rev() {
                w *= basis[a][rem % np];
                rem /= np;
            }
            for (c, o) in out.iter_mut().enumerate() {
                *o += self.coeffs[idx * self.k + c] * w;
            }
        }
        let phase: f64 = y.iter().zip(&self.shift).map(|(a, b)| a * b).sum();
        let modulation = Complex64::from_polar(1.0, 2.0 * PI * phase);
        out.iter_mut().for_each(|o| *o *= modulation);
        out
    }
}

/// Finite sum of twisted plane waves `Σ_p c_p e^{2πi p·x}`, `p ∈ Zⁿ + δ`.
#[derive(Clone, Debug)]
pub struct PlaneWaveProbe {
    pub delta: SpinStructureLabel,
    pub terms: Vec<(Vec<f64>, Vec<Complex64>)>,
}

impl PlaneWaveProbe {
    /// Random coefficients on every mode with `|p_a| ≤ max_mode` for all axes.
    /// The mode set depends only on `delta`, so the probe is the same
    /// continuum function at every resolution.
    pub fn random<R: Rng>(delta: &SpinStructureLabel, k: usize, max_mode: f64, rng: &mut R) -> Self {
        let d = delta.delta();
        let mut modes: Vec<Vec<f64>> = vec![Vec::new()];
        for &s in &d {
            let lo = (-max_mode - s).ceil() as i64;
            let hi = (max_mode - s).floor() as i64;
            modes = modes
                .into_iter()
                .flat_map(|m| {
                    (lo..=hi).map(move |i| {
                        let mut next = m.clone();
                        next.push(i as f64 + s);
                        next
                    })
                })
                .collect();
        }
        let terms = modes
            .into_iter()
            .map(|p| {
                let c = (0..k)
                    .map(|_| {
                        let (a, b) = rand_normal_pair(rng);
                        Complex64::new(a, b)
                    })
                    .collect();
                (p, c)
            })
            .collect();
        Self {
            delta: delta.clone(),
            terms,
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<Complex64> {
        let k = self.terms.first().map_or(0, |t| t.1.len());
        let mut out = vec![Complex64::new(0.0, 0.0); k];
        for (p, c) in &self.terms {
            let phase: f64 = p.iter().zip(x).map(|(a, b)| a * b).sum();
            let w = Complex64::from_polar(1.0, 2.0 * PI * phase);
            for (o, ci) in out.iter_mut().zip(c) {
                *o += ci * w;
            }
        }
        out
    }

    pub fn sample(&self, grid: &GridSpec) -> Result<DiscreteSpinorField> {
        let k = self.terms.first().map_or(0, |t| t.1.len());
        DiscreteSpinorField::from_fn(grid, &self.delta, k, |x| self.eval(x))
    }
}

const MAGIC: &[u8; 4] = b"SPNR";
const FORMAT_VERSION: u32 = 1;

/// JSON layout of a spinor file.
#[derive(Serialize, Deserialize)]
struct SpinorJson {
    n: usize,
    #[serde(rename = "N")]
    points: usize,
    k: usize,
    delta: Vec<f64>,
    /// `[re, im]` pairs, grid points in row-major order (axis 1 slowest),
    /// components of each point contiguous.
    values: Vec<[f64; 2]>,
}

impl DiscreteSpinorField {
    pub fn to_json(&self) -> Result<String> {
        let doc = SpinorJson {
            n: self.grid.dim(),
            points: self.grid.points(),
            k: self.k,
            delta: self.delta.delta(),
            values: self.values.iter().map(|z| [z.re, z.im]).collect(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    /// Reads a JSON spinor file; the scheme is not stored and must be given.
    pub fn from_json(s: &str, scheme: Scheme) -> Result<Self> {
        let doc: SpinorJson = serde_json::from_str(s)?;
        let grid = GridSpec::new(doc.n, doc.points, scheme)?;
        if doc.delta.len() != doc.n {
            return Err(Error::Format(format!("delta has {} entries, expected {}", doc.delta.len(), doc.n)));
        }
        let delta = SpinStructureLabel::from_halves(&doc.delta)?;
        let values = doc.values.iter().map(|v| Complex64::new(v[0], v[1])).collect();
        Self::from_values(&grid, &delta, doc.k, values)
    }

    /// Binary layout, all integers and floats little-endian:
    ///
    /// ```text
    /// b"SPNR" | u32 version = 1 | u32 n | u32 N | u32 k | n × u8 twist (0 or 1)
    /// | N^n · k × (f64 re, f64 im)
    /// ```
    ///
    /// Values are ordered like the JSON layout.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        for v in [FORMAT_VERSION, self.grid.dim() as u32, self.grid.points() as u32, self.k as u32] {
            w.write_all(&v.to_le_bytes())?;
        }
        let twists: Vec<u8> = self.delta.bits().iter().map(|&t| t as u8).collect();
        w.write_all(&twists)?;
        for z in &self.values {
            w.write_all(&z.re.to_le_bytes())?;
            w.write_all(&z.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R, scheme: Scheme) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let mut word = [0u8; 4];
        let mut header = [0u32; 4];
        for h in header.iter_mut() {
            r.read_exact(&mut word)?;
            *h = u32::from_le_bytes(word);
        }
        let [version, n, np, k] = header;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let grid = GridSpec::new(n as usize, np as usize, scheme)?;
        let mut twists = vec![0u8; n as usize];
        r.read_exact(&mut twists)?;
        if twists.iter().any(|&t| t > 1) {
            return Err(Error::Format("twist bytes must be 0 or 1".into()));
        }
        let delta = SpinStructureLabel::from_bits(twists.iter().map(|&t| t == 1).collect());
        let count = grid.len() * k as usize;
        let mut values = Vec::with_capacity(count);
        let mut buf = [0u8; 8];
        for _ in 0..count {
            r.read_exact(&mut buf)?;
            let re = f64::from_le_bytes(buf);
            r.read_exact(&mut buf)?;
            values.push(Complex64::new(re, f64::from_le_bytes(buf)));
        }
        Self::from_values(&grid, &delta, k as usize, values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Geometry;
    use crate::metric::{MetricField, MetricGenerator};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize, np: usize) -> GridSpec {
        GridSpec::new(n, np, Scheme::Spectral).unwrap()
    }

    fn geometry(desc: &str, g: &GridSpec) -> Geometry {
        Geometry::new(MetricField::sample(&MetricGenerator::parse(desc, g.dim()).unwrap(), g).unwrap()).unwrap()
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn label_parsing_and_torsor() {
        let a = SpinStructureLabel::parse("0.5,0").unwrap();
        assert_eq!(a.delta(), vec![0.5, 0.0]);
        assert!(SpinStructureLabel::parse("0.25,0").is_err());
        assert_eq!(SpinStructureLabel::parse("1.5, -1").unwrap(), a);
        let b = SpinStructureLabel::parse("0,0.5").unwrap();
        assert_eq!(a.shifted(&a.difference(&b)), b);
        assert_eq!(SpinStructureLabel::all(2).len(), 4);
        assert_eq!(a.to_string(), "(0.5,0)");
    }

    #[test]
    fn density_of_unit_spinors() {
        let g = grid(2, 4);
        let d = SpinStructureLabel::periodic(2);
        let e1 = DiscreteSpinorField::from_fn(&g, &d, 2, |_| vec![c(1.0, 0.0), c(0.0, 0.0)]).unwrap();
        let e2 = DiscreteSpinorField::from_fn(&g, &d, 2, |_| vec![c(0.0, 0.0), c(0.0, 1.0)]).unwrap();
        assert!(pointwise_density(&e1, &e1).unwrap().iter().all(|a| *a == c(1.0, 0.0)));
        assert!(pointwise_density(&e1, &e2).unwrap().iter().all(|a| *a == c(0.0, 0.0)));
    }

    #[test]
    fn density_is_hermitian_and_rejects_mixed_labels() {
        let g = grid(2, 4);
        let d = SpinStructureLabel::parse("0.5,0.5").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let psi = DiscreteSpinorField::random(&g, &d, 2, &mut rng);
        let phi = DiscreteSpinorField::random(&g, &d, 2, &mut rng);
        let ab = pointwise_density(&psi, &phi).unwrap();
        let ba = pointwise_density(&phi, &psi).unwrap();
        assert!(ab.iter().zip(&ba).all(|(x, y)| *x == y.conj()));
        let other = DiscreteSpinorField::random(&g, &SpinStructureLabel::periodic(2), 2, &mut rng);
        assert!(matches!(
            pointwise_density(&psi, &other),
            Err(Error::IncompatibleSpinStructure { .. })
        ));
    }

    #[test]
    fn unit_spinor_has_unit_norm_on_flat_torus() {
        let g = grid(2, 8);
        let geo = geometry("flat", &g);
        let d = SpinStructureLabel::periodic(2);
        let e1 = DiscreteSpinorField::from_fn(&g, &d, 2, |_| vec![c(1.0, 0.0), c(0.0, 0.0)]).unwrap();
        assert!((inner_product(&e1, &e1, &geo.connection).unwrap() - c(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn scaled_metric_scales_inner_product() {
        let g = grid(3, 4);
        let lambda: f64 = 2.5;
        let base = geometry("flat", &g);
        let scaled = geometry("constant(2.5,0,0,2.5,0,2.5)", &g);
        let d = SpinStructureLabel::parse("0,0.5,0").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let psi = DiscreteSpinorField::random(&g, &d, 2, &mut rng);
        let phi = DiscreteSpinorField::random(&g, &d, 2, &mut rng);
        let a = inner_product(&psi, &phi, &base.connection).unwrap();
        let b = inner_product(&psi, &phi, &scaled.connection).unwrap();
        assert!((b - a * lambda.powf(1.5)).norm() < 1e-12 * b.norm());
    }

    #[test]
    fn inner_product_is_hermitian_and_positive() {
        let g = grid(2, 8);
        let geo = geometry("conformal(0.2,1,1)", &g);
        let d = SpinStructureLabel::parse("0,0.5").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let psi = DiscreteSpinorField::random(&g, &d, 2, &mut rng);
        let phi = DiscreteSpinorField::random(&g, &d, 2, &mut rng);
        let ab = inner_product(&psi, &phi, &geo.connection).unwrap();
        let ba = inner_product(&phi, &psi, &geo.connection).unwrap();
        assert!((ab - ba.conj()).norm() < 1e-13);
        assert!(inner_product(&psi, &psi, &geo.connection).unwrap().re > 0.0);
    }

    #[test]
    fn quadrature_is_exact_for_band_limited_integrands() {
        // ∫ |1 + 0.5 e^{2πi x₁}|² e^{2u} dx with u = 0.1 sin 2πx₂ equals
        // 1.25 · I₀(0.2); the Fourier tail of e^{2u} beyond N = 32 is far below 1e-16.
        let g = grid(2, 32);
        let geo = geometry("conformal(0.1,0,1)", &g);
        let d = SpinStructureLabel::periodic(2);
        let psi = DiscreteSpinorField::from_fn(&g, &d, 1, |x| {
            vec![c(1.0, 0.0) + Complex64::from_polar(0.5, 2.0 * PI * x[0])]
        })
        .unwrap();
        let got = inner_product(&psi, &psi, &geo.connection).unwrap();
        // I₀(0.2) = Σ (0.1)^{2m} / (m!)²
        let mut bessel = 0.0;
        let mut term = 1.0;
        for m in 0..20 {
            if m > 0 {
                term *= 0.01 / (m * m) as f64;
            }
            bessel += term;
        }
        assert!((got.re - 1.25 * bessel).abs() < 1e-13, "{}", got.re - 1.25 * bessel);
    }

    #[test]
    fn moving_the_origin_keeps_the_inner_product() {
        let g = grid(2, 8);
        let geo = geometry("conformal(0.1,1,0)", &g);
        let d = SpinStructureLabel::parse("0.5,0.5").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let psi = DiscreteSpinorField::random(&g, &d, 2, &mut rng);
        let phi = DiscreteSpinorField::random(&g, &d, 2, &mut rng);
        let before = inner_product(&psi, &phi, &geo.connection).unwrap();
        let vol = geo.connection.volume.clone();
        let steps = [1i64, 0];
        let vol_shift: Vec<f64> = (0..g.len())
            .map(|i| {
                let m = g.multi_index(i);
                let (j, _) = g.wrap(&[m[0] as i64 + 1, m[1] as i64]);
                vol[j]
            })
            .collect();
        let after =
            weighted_inner_product(&psi.translate_by_steps(&steps), &phi.translate_by_steps(&steps), &vol_shift)
                .unwrap();
        assert!((before - after).norm() < 1e-13);
    }

    #[test]
    fn prolongation_signs() {
        let g = grid(2, 4);
        let geo = geometry("flat", &g);
        let d = SpinStructureLabel::periodic(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let psi = DiscreteSpinorField::random(&g, &d, 2, &mut rng);
        let phi = DiscreteSpinorField::random(&g, &d, 2, &mut rng);
        assert_eq!(equivalent_prolongation_unitary(&psi, crate::Sign::Plus), psi);
        assert_eq!(
            equivalent_prolongation_unitary(&psi, crate::Sign::Minus),
            psi.scaled(c(-1.0, 0.0))
        );
        for s in [crate::Sign::Plus, crate::Sign::Minus] {
            let a = inner_product(
                &equivalent_prolongation_unitary(&psi, s),
                &equivalent_prolongation_unitary(&phi, s),
                &geo.connection,
            )
            .unwrap();
            assert_eq!(a, inner_product(&psi, &phi, &geo.connection).unwrap());
        }
    }

    #[test]
    fn interpolant_reproduces_band_limited_fields_off_grid() {
        let g = grid(2, 8);
        for d in SpinStructureLabel::all(2) {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let probe = PlaneWaveProbe::random(&d, 2, 2.5, &mut rng);
            let field = probe.sample(&g).unwrap();
            let interp = TrigInterpolant::new(&field);
            for y in [[0.31, -0.7], [1.2, 0.05], [0.0, 0.0]] {
                let a = interp.eval(&y);
                let b = probe.eval(&y);
                for (u, v) in a.iter().zip(&b) {
                    assert!((u - v).norm() < 1e-12, "{d}: {u} vs {v}");
                }
            }
        }
    }

    #[test]
    fn twisted_access_across_the_seam() {
        let g = grid(1, 4);
        let d = SpinStructureLabel::parse("0.5").unwrap();
        let f = DiscreteSpinorField::from_fn(&g, &d, 1, |x| vec![c(1.0 + x[0], 0.0)]).unwrap();
        let (phase, v) = f.at_lattice(&[5]);
        assert_eq!(phase, -1.0);
        assert_eq!(v[0], c(1.25, 0.0));
    }

    #[test]
    fn file_formats_round_trip() {
        let g = grid(2, 4);
        let d = SpinStructureLabel::parse("0,0.5").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let psi = DiscreteSpinorField::random(&g, &d, 2, &mut rng);
        let json = psi.to_json().unwrap();
        assert_eq!(DiscreteSpinorField::from_json(&json, Scheme::Spectral).unwrap(), psi);
        let mut bytes = Vec::new();
        psi.write_binary(&mut bytes).unwrap();
        assert_eq!(bytes.len(), 4 + 16 + 2 + 16 * 32);
        assert_eq!(&bytes[20..22], &[0, 1]);
        assert_eq!(DiscreteSpinorField::read_binary(bytes.as_slice(), Scheme::Spectral).unwrap(), psi);
        bytes[0] = b'X';
        assert!(DiscreteSpinorField::read_binary(bytes.as_slice(), Scheme::Spectral).is_err());
    }
}
