//! Uniform planar array response.
//!
//! Element `(m, n)` (row `m`, column `n`, stored row-major) of an array with
//! spacing `s` wavelengths sees the phase
//! `2π·s·(n·sin(az)·cos(el) + m·sin(el))` for a plane wave from `(az, el)`.
//! Boresight is `(0, 0)`.

use std::f64::consts::TAU;

use num_complex::Complex64;

use super::Angles;
use crate::units::AntennaArray;

/// Per-element phase increments along rows and columns.
pub(crate) fn phase_steps(array: &AntennaArray, a: Angles) -> (f64, f64) {
    let k = TAU * array.element_spacing_wavelengths;
    let (sin_el, cos_el) = a.elevation.sin_cos();
    (k * sin_el, k * a.azimuth.sin() * cos_el)
}

fn progression(step: f64, count: usize, scale: f64) -> Vec<Complex64> {
    let z = Complex64::from_polar(1.0, step);
    let mut out = Vec::with_capacity(count);
    let mut p = Complex64::new(scale, 0.0);
    for _ in 0..count {
        out.push(p);
        p *= z;
    }
    out
}

/// A planar-array signature kept as the outer product of its row and column
/// phase progressions; element `(m, n)` is `rows[m]·cols[n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparableSignature {
    rows: Vec<Complex64>,
    cols: Vec<Complex64>,
}

impl SeparableSignature {
    pub fn new(array: &AntennaArray, a: Angles) -> Self {
        let (dr, dc) = phase_steps(array, a);
        let scale = 1.0 / (array.elements() as f64).sqrt();
        Self {
            rows: progression(dr, array.rows, scale),
            cols: progression(dc, array.cols, 1.0),
        }
    }

    /// Row-major element vector.
    pub fn to_vec(&self) -> Vec<Complex64> {
        self.rows
            .iter()
            .flat_map(|r| self.cols.iter().map(move |c| r * c))
            .collect()
    }

    /// `self^H · other`.
    pub fn overlap(&self, other: &Self) -> Complex64 {
        let rows: Complex64 = self
            .rows
            .iter()
            .zip(&other.rows)
            .map(|(a, b)| a.conj() * b)
            .sum();
        let cols: Complex64 = self
            .cols
            .iter()
            .zip(&other.cols)
            .map(|(a, b)| a.conj() * b)
            .sum();
        rows * cols
    }

    /// `w^H · self`.
    pub fn project(&self, w: &[Complex64]) -> Complex64 {
        debug_assert_eq!(w.len(), self.rows.len() * self.cols.len());
        w.chunks_exact(self.cols.len())
            .zip(&self.rows)
            .map(|(row, r)| {
                let inner: Complex64 = row
                    .iter()
                    .zip(&self.cols)
                    .map(|(wi, c)| wi.conj() * c)
                    .sum();
                r * inner
            })
            .sum()
    }
}

/// Unit-norm spatial signature of `array` towards `a`.
pub fn spatial_signature(array: &AntennaArray, a: Angles) -> Vec<Complex64> {
    let (dr, dc) = phase_steps(array, a);
    let scale = 1.0 / (array.elements() as f64).sqrt();
    let mut out = Vec::with_capacity(array.elements());
    for m in 0..array.rows {
        for n in 0..array.cols {
            out.push(Complex64::from_polar(scale, m as f64 * dr + n as f64 * dc));
        }
    }
    out
}

/// `Σ_{k<count} e^{ik·step}`.
fn geometric_sum(step: f64, count: usize) -> Complex64 {
    let z = Complex64::from_polar(1.0, step);
    let mut p = Complex64::new(1.0, 0.0);
    let mut acc = Complex64::new(0.0, 0.0);
    for _ in 0..count {
        acc += p;
        p *= z;
    }
    acc
}

/// `w^H · u(a)` without materializing the signature.
pub fn signature_projection(array: &AntennaArray, w: &[Complex64], a: Angles) -> Complex64 {
    projection_from_steps(array, w, phase_steps(array, a))
}

pub(crate) fn projection_from_steps(
    array: &AntennaArray,
    w: &[Complex64],
    (dr, dc): (f64, f64),
) -> Complex64 {
    debug_assert_eq!(w.len(), array.elements());
    let (zr, zc) = (
        Complex64::from_polar(1.0, dr),
        Complex64::from_polar(1.0, dc),
    );
    let mut acc = Complex64::new(0.0, 0.0);
    let mut r = Complex64::new(1.0, 0.0);
    for row in w.chunks_exact(array.cols) {
        let mut c = Complex64::new(1.0, 0.0);
        let mut inner = Complex64::new(0.0, 0.0);
        for wi in row {
            inner += wi.conj() * c;
            c *= zc;
        }
        acc += r * inner;
        r *= zr;
    }
    acc / (array.elements() as f64).sqrt()
}

/// `out += coeff · u(a)`, for phase steps of `a`.
pub(crate) fn accumulate_signature(
    array: &AntennaArray,
    out: &mut [Complex64],
    coeff: Complex64,
    (dr, dc): (f64, f64),
) {
    debug_assert_eq!(out.len(), array.elements());
    let (zr, zc) = (
        Complex64::from_polar(1.0, dr),
        Complex64::from_polar(1.0, dc),
    );
    let mut r = coeff / (array.elements() as f64).sqrt();
    for row in out.chunks_exact_mut(array.cols) {
        let mut x = r;
        for o in row {
            *o += x;
            x *= zc;
        }
        r *= zr;
    }
}

/// `u(a)^H · u(b)` for two unit-norm signatures of the same array.
pub fn signature_overlap(array: &AntennaArray, a: Angles, b: Angles) -> Complex64 {
    overlap_from_steps(array, phase_steps(array, a), phase_steps(array, b))
}

pub(crate) fn overlap_from_steps(
    array: &AntennaArray,
    (ar, ac): (f64, f64),
    (br, bc): (f64, f64),
) -> Complex64 {
    geometric_sum(br - ar, array.rows) * geometric_sum(bc - ac, array.cols)
        / array.elements() as f64
}
