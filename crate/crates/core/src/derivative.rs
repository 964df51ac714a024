//! Discrete derivatives of (possibly twisted) periodic grid functions.
//!
//! A twisted axis carries antiperiodic data, `f(x + 1) = −f(x)`. The spectral
//! scheme handles it by demodulating with `e^{−iπx}`, differentiating the
//! periodic remainder with integer modes and remodulating, which amounts to
//! the half-integer modes `m + ½`. Integer modes run over `−N/2..N/2`, the
//! Nyquist mode being treated as `−N/2`. Finite-difference stencils pick up a
//! factor `−1` whenever they cross the seam of a twisted axis.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::grid::{GridSpec, Scheme};
use crate::par;

/// Differentiates fields sampled on one grid. Holds the FFT plans.
#[derive(Clone)]
pub struct Differentiator {
    grid: GridSpec,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    // e^{-iπ j/N}
    demod: Vec<Complex64>,
}

impl std::fmt::Debug for Differentiator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Differentiator").field("grid", &self.grid).finish()
    }
}

impl Differentiator {
    pub fn new(grid: &GridSpec) -> Self {
        let np = grid.points();
        let mut planner = FftPlanner::new();
        let demod = (0..np)
            .map(|j| Complex64::from_polar(1.0, -PI * j as f64 / np as f64))
            .collect();
        Self {
            grid: grid.clone(),
            forward: planner.plan_fft_forward(np),
            inverse: planner.plan_fft_inverse(np),
            demod,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// `∂_axis` of a field with `ncomp` interleaved components per point.
    pub fn apply(&self, data: &[Complex64], ncomp: usize, axis: usize, twist: bool) -> Vec<Complex64> {
        self.map_lines(data, ncomp, axis, |buf| self.line_derivative(buf, twist))
    }

    /// Keeps the modes `|m + twist/2| < cutoff` along `axis`.
    pub fn low_pass(&self, data: &[Complex64], ncomp: usize, axis: usize, twist: bool, cutoff: f64) -> Vec<Complex64> {
        self.map_lines(data, ncomp, axis, |buf| self.low_pass_line(buf, twist, cutoff))
    }

    fn map_lines<F>(&self, data: &[Complex64], ncomp: usize, axis: usize, line_op: F) -> Vec<Complex64>
    where
        F: Fn(&mut [Complex64]) + Sync,
    {
        let grid = &self.grid;
        let np = grid.points();
        assert_eq!(data.len(), grid.len() * ncomp, "field size does not match grid");
        let stride = grid.stride(axis);
        let outer = grid.len() / (np * stride);
        let nlines = outer * stride * ncomp;

        let lines: Vec<Vec<Complex64>> = par::map_range(nlines, |line| {
            let (base, comp) = line_base(line, stride, np, ncomp);
            let mut buf: Vec<Complex64> = (0..np)
                .map(|j| data[(base + j * stride) * ncomp + comp])
                .collect();
            line_op(&mut buf);
            buf
        });

        let mut out = vec![Complex64::new(0.0, 0.0); data.len()];
        for (line, values) in lines.into_iter().enumerate() {
            let (base, comp) = line_base(line, stride, np, ncomp);
            for (j, v) in values.into_iter().enumerate() {
                out[(base + j * stride) * ncomp + comp] = v;
            }
        }
        out
    }

    /// Derivative of a real untwisted field.
    pub fn apply_real(&self, data: &[f64], ncomp: usize, axis: usize) -> Vec<f64> {
        let cdata: Vec<Complex64> = data.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.apply(&cdata, ncomp, axis, false)
            .into_iter()
            .map(|z| z.re)
            .collect()
    }

    fn line_derivative(&self, buf: &mut [Complex64], twist: bool) {
        match self.grid.scheme() {
            Scheme::Spectral => self.spectral_line(buf, twist),
            Scheme::Fd2 => fd_line(buf, twist, &[(1, 0.5)], self.grid.spacing()),
            Scheme::Fd4 => fd_line(
                buf,
                twist,
                &[(1, 8.0 / 12.0), (2, -1.0 / 12.0)],
                self.grid.spacing(),
            ),
        }
    }

    fn spectral_line(&self, buf: &mut [Complex64], twist: bool) {
        if !twist && buf.iter().all(|v| *v == buf[0]) {
            buf.fill(Complex64::new(0.0, 0.0));
            return;
        }
        self.in_modes(buf, twist, |m| Complex64::new(0.0, 2.0 * PI * m));
    }

    fn low_pass_line(&self, buf: &mut [Complex64], twist: bool, cutoff: f64) {
        self.in_modes(buf, twist, |m| {
            Complex64::new(if m.abs() < cutoff { 1.0 } else { 0.0 }, 0.0)
        });
    }

    /// Multiplies mode `m` (half-integer on twisted lines) by `symbol(m)`.
    fn in_modes(&self, buf: &mut [Complex64], twist: bool, symbol: impl Fn(f64) -> Complex64) {
        let np = buf.len();
        if twist {
            for (v, d) in buf.iter_mut().zip(&self.demod) {
                *v *= d;
            }
        }
        self.forward.process(buf);
        let shift = if twist { 0.5 } else { 0.0 };
        let half = np / 2;
        for (f, v) in buf.iter_mut().enumerate() {
            let m = if f < half { f as f64 } else { f as f64 - np as f64 };
            *v *= symbol(m + shift) / np as f64;
        }
        self.inverse.process(buf);
        if twist {
            for (v, d) in buf.iter_mut().zip(&self.demod) {
                *v *= d.conj();
            }
        }
    }
}

fn line_base(line: usize, stride: usize, np: usize, ncomp: usize) -> (usize, usize) {
    let comp = line % ncomp;
    let l = line / ncomp;
    let inner = l % stride;
    let outer = l / stride;
    (outer * np * stride + inner, comp)
}

/// Central antisymmetric stencil `Σ_o w_o (f(j+o) − f(j−o)) / h`.
fn fd_line(buf: &mut [Complex64], twist: bool, weights: &[(usize, f64)], h: f64) {
    let np = buf.len() as i64;
    let src = buf.to_vec();
    let at = |j: i64| -> Complex64 {
        let r = j.rem_euclid(np);
        let wraps = (j - r) / np;
        let v = src[r as usize];
        if twist && wraps % 2 != 0 {
            -v
        } else {
            v
        }
    };
    for (j, out) in buf.iter_mut().enumerate() {
        let j = j as i64;
        let mut acc = Complex64::new(0.0, 0.0);
        for &(o, w) in weights {
            let o = o as i64;
            acc += (at(j + o) - at(j - o)) * w;
        }
        *out = acc / h;
    }
}

/// One-shot derivative, planning the FFT on the fly.
pub fn discrete_derivative(
    grid: &GridSpec,
    data: &[Complex64],
    ncomp: usize,
    axis: usize,
    twist: bool,
) -> Vec<Complex64> {
    Differentiator::new(grid).apply(data, ncomp, axis, twist)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(grid: &GridSpec, f: impl Fn(&[f64]) -> Complex64) -> Vec<Complex64> {
        (0..grid.len()).map(|i| f(&grid.coords(i))).collect()
    }

    fn max_err(a: &[Complex64], b: &[Complex64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn spectral_sine_is_exact() {
        let grid = GridSpec::new(1, 16, Scheme::Spectral).unwrap();
        let f = sample(&grid, |x| Complex64::new((2.0 * PI * x[0]).sin(), 0.0));
        let want = sample(&grid, |x| Complex64::new(2.0 * PI * (2.0 * PI * x[0]).cos(), 0.0));
        assert!(max_err(&discrete_derivative(&grid, &f, 1, 0, false), &want) < 1e-12);
    }

    #[test]
    fn spectral_lowest_antiperiodic_mode() {
        let grid = GridSpec::new(1, 8, Scheme::Spectral).unwrap();
        let f = sample(&grid, |x| Complex64::from_polar(1.0, PI * x[0]));
        let want: Vec<_> = f.iter().map(|v| v * Complex64::new(0.0, PI)).collect();
        assert!(max_err(&discrete_derivative(&grid, &f, 1, 0, true), &want) < 1e-13);
    }

    #[test]
    fn nyquist_mode_is_negative_half_band() {
        let grid = GridSpec::new(1, 8, Scheme::Spectral).unwrap();
        let f = sample(&grid, |x| Complex64::from_polar(1.0, -2.0 * PI * 4.0 * x[0]));
        let want: Vec<_> = f.iter().map(|v| v * Complex64::new(0.0, -8.0 * PI)).collect();
        assert!(max_err(&discrete_derivative(&grid, &f, 1, 0, false), &want) < 1e-12);
    }

    #[test]
    fn low_pass_keeps_band_modes_only() {
        let grid = GridSpec::new(1, 8, Scheme::Fd4).unwrap();
        let diff = Differentiator::new(&grid);
        let low = sample(&grid, |x| Complex64::from_polar(1.0, 2.0 * PI * 1.5 * x[0]));
        let high = sample(&grid, |x| Complex64::from_polar(1.0, 2.0 * PI * 3.5 * x[0]));
        let mixed: Vec<_> = low.iter().zip(&high).map(|(a, b)| a + b).collect();
        assert!(max_err(&diff.low_pass(&mixed, 1, 0, true, 2.0), &low) < 1e-13);
    }

    #[test]
    fn constants_have_zero_derivative() {
        for scheme in [Scheme::Spectral, Scheme::Fd2, Scheme::Fd4] {
            let grid = GridSpec::new(2, 8, scheme).unwrap();
            let f = vec![Complex64::new(1.3, -0.2); grid.len() * 2];
            for axis in 0..2 {
                let d = discrete_derivative(&grid, &f, 2, axis, false);
                assert!(d.iter().all(|z| *z == Complex64::new(0.0, 0.0)), "{scheme}");
            }
        }
    }

    #[test]
    fn axes_and_components_are_independent() {
        let grid = GridSpec::new(2, 8, Scheme::Spectral).unwrap();
        let mut f = Vec::new();
        for i in 0..grid.len() {
            let x = grid.coords(i);
            f.push(Complex64::new((2.0 * PI * x[0]).sin(), 0.0));
            f.push(Complex64::new((4.0 * PI * x[1]).cos(), 0.0));
        }
        let d1 = discrete_derivative(&grid, &f, 2, 1, false);
        for i in 0..grid.len() {
            let x = grid.coords(i);
            assert!(d1[2 * i].norm() < 1e-12);
            let want = -4.0 * PI * (4.0 * PI * x[1]).sin();
            assert!((d1[2 * i + 1].re - want).abs() < 1e-11);
        }
    }

    fn fd_error(scheme: Scheme, np: usize, twist: bool) -> f64 {
        let grid = GridSpec::new(1, np, scheme).unwrap();
        let p = if twist { 1.5 } else { 1.0 };
        let f = sample(&grid, |x| Complex64::from_polar(1.0, 2.0 * PI * p * x[0]));
        let want: Vec<_> = f.iter().map(|v| v * Complex64::new(0.0, 2.0 * PI * p)).collect();
        max_err(&discrete_derivative(&grid, &f, 1, 0, twist), &want)
    }

    #[test]
    fn finite_differences_converge_at_nominal_order() {
        for (scheme, order) in [(Scheme::Fd2, 2.0), (Scheme::Fd4, 4.0)] {
            for twist in [false, true] {
                let fitted = (fd_error(scheme, 32, twist) / fd_error(scheme, 64, twist)).log2();
                assert!((fitted - order).abs() < 0.3, "{scheme} twist={twist}: {fitted}");
            }
        }
    }
}
