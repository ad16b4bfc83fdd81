//! Radiometric and geometric calibration of captured cubes.
//!
//! Radiometric: optional dark-field subtraction followed by per-band division by a
//! reference-white capture. Geometric: a two-coefficient radial model about a
//! distortion center, composed with an affine map into the output frame, fitted
//! from chessboard corner correspondences.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::hypercube::{SpectralCube, ValidityMask};
use crate::resample::{bilinear_tap, resample_cube};
use crate::{Error, Result};

/// Reference-white guard: whites at or below this are treated as unusable.
pub const DEFAULT_FLAT_EPSILON: f32 = 1e-4;
pub const MAX_FIT_ITERATIONS: usize = 200;
pub const FIT_STEP_TOLERANCE: f64 = 1e-10;
pub const MAX_NEWTON_ITERATIONS: usize = 20;
pub const NEWTON_TOLERANCE_PX: f64 = 1e-8;

/// `clamp(lit − dark, 0, 1)` element-wise.
pub fn dark_field_subtract(lit: &SpectralCube, dark: &SpectralCube) -> Result<SpectralCube> {
    lit.require_same_shape(dark, "dark field")?;
    let data = lit
        .data()
        .iter()
        .zip(dark.data())
        .map(|(&l, &d)| (l - d).clamp(0.0, 1.0))
        .collect();
    SpectralCube::new(lit.width(), lit.height(), lit.wavelengths().to_vec(), data)
}

/// Per-band reference-white capture.
#[derive(Debug, Clone)]
pub struct FlatFieldRef {
    pub white: SpectralCube,
    pub epsilon: f32,
    /// Reflectance assigned to the white target.
    pub scale: f32,
}

impl FlatFieldRef {
    pub fn new(white: SpectralCube) -> Self {
        FlatFieldRef {
            white,
            epsilon: DEFAULT_FLAT_EPSILON,
            scale: 1.0,
        }
    }
}

/// Divides out the reference white. Pixels whose white is at or below epsilon
/// come out as 0 and invalid.
pub fn flat_field_correct(raw: &SpectralCube, reference: &FlatFieldRef) -> Result<(SpectralCube, ValidityMask)> {
    raw.require_same_shape(&reference.white, "flat field")?;
    if !(reference.epsilon > 0.0) || !reference.scale.is_finite() || !reference.epsilon.is_finite() {
        return Err(Error::InvalidArgument("flat-field epsilon and scale must be finite, epsilon > 0".into()));
    }
    if let Some(i) = reference.white.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let mut bits = Vec::with_capacity(raw.data().len());
    let data = raw
        .data()
        .iter()
        .zip(reference.white.data())
        .map(|(&r, &w)| {
            if w > reference.epsilon {
                bits.push(true);
                ((r as f64 / w as f64 * reference.scale as f64) as f32).clamp(0.0, 1.0)
            } else {
                bits.push(false);
                0.0
            }
        })
        .collect();
    let cube = SpectralCube::new(raw.width(), raw.height(), raw.wavelengths().to_vec(), data)?;
    let mask = ValidityMask::new(raw.width(), raw.height(), raw.bands(), bits)?;
    Ok((cube, mask))
}

/// Radial lens model `d = c + (u − c)(1 + k1 r² + k2 r⁴)`, `r = |u − c| / norm`,
/// plus an affine `affine` taking undistorted coordinates into the output frame.
///
/// All coordinates are pixel indices (pixel centers on integers).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortionModel {
    pub k1: f64,
    pub k2: f64,
    pub cx: f64,
    pub cy: f64,
    /// Radius normalization in pixels.
    pub norm: f64,
    /// Row-major 2×3 `[a, b, tx, c, d, ty]`.
    pub affine: [f64; 6],
}

pub(crate) fn affine_apply(m: &[f64; 6], x: f64, y: f64) -> (f64, f64) {
    (m[0] * x + m[1] * y + m[2], m[3] * x + m[4] * y + m[5])
}

pub(crate) fn affine_invert(m: &[f64; 6]) -> Option<[f64; 6]> {
    let det = m[0] * m[4] - m[1] * m[3];
    if det.abs() < 1e-12 || !det.is_finite() {
        return None;
    }
    let (a, b, c, d) = (m[4] / det, -m[1] / det, -m[3] / det, m[0] / det);
    Some([a, b, -(a * m[2] + b * m[5]), c, d, -(c * m[2] + d * m[5])])
}

pub(crate) const IDENTITY_AFFINE: [f64; 6] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];

impl DistortionModel {
    /// No distortion, centered, normalized by the half diagonal.
    pub fn identity(width: usize, height: usize) -> Self {
        DistortionModel {
            k1: 0.0,
            k2: 0.0,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            norm: half_diagonal(width, height),
            affine: IDENTITY_AFFINE,
        }
    }

    fn radial(&self, r: f64) -> f64 {
        r * (1.0 + self.k1 * r * r + self.k2 * r.powi(4))
    }

    fn radial_slope(&self, r: f64) -> f64 {
        1.0 + 3.0 * self.k1 * r * r + 5.0 * self.k2 * r.powi(4)
    }

    /// Undistorted → observed position.
    pub fn distort_point(&self, ux: f64, uy: f64) -> (f64, f64) {
        let (dx, dy) = (ux - self.cx, uy - self.cy);
        let r2 = (dx * dx + dy * dy) / (self.norm * self.norm);
        let f = 1.0 + self.k1 * r2 + self.k2 * r2 * r2;
        (self.cx + dx * f, self.cy + dy * f)
    }

    /// Observed → undistorted position by Newton iteration on the radius.
    pub fn undistort_point(&self, ox: f64, oy: f64) -> Result<(f64, f64)> {
        let (dx, dy) = (ox - self.cx, oy - self.cy);
        let rd = (dx * dx + dy * dy).sqrt() / self.norm;
        if rd == 0.0 {
            return Ok((self.cx, self.cy));
        }
        let mut r = rd;
        for _ in 0..MAX_NEWTON_ITERATIONS {
            let residual = self.radial(r) - rd;
            if (residual * self.norm).abs() < NEWTON_TOLERANCE_PX {
                let s = r / rd;
                return Ok((self.cx + dx * s, self.cy + dy * s));
            }
            let slope = self.radial_slope(r);
            if !(slope > 0.0) {
                break;
            }
            r -= residual / slope;
            if !r.is_finite() || r < 0.0 {
                break;
            }
        }
        Err(Error::NonConvergence(format!(
            "radial inversion failed at observed pixel ({ox:.3}, {oy:.3})"
        )))
    }

    /// Output-frame position → observed position.
    pub fn output_to_observed(&self, qx: f64, qy: f64) -> Result<(f64, f64)> {
        let inv = affine_invert(&self.affine)
            .ok_or_else(|| Error::Degenerate("distortion affine is singular".into()))?;
        let (ux, uy) = affine_apply(&inv, qx, qy);
        Ok(self.distort_point(ux, uy))
    }

    /// Observed position → output-frame position.
    pub fn observed_to_output(&self, ox: f64, oy: f64) -> Result<(f64, f64)> {
        let (ux, uy) = self.undistort_point(ox, oy)?;
        Ok(affine_apply(&self.affine, ux, uy))
    }

    /// Newton-inverts the image border and a coarse interior lattice.
    pub fn check_invertible(&self, width: usize, height: usize) -> Result<()> {
        affine_invert(&self.affine).ok_or_else(|| Error::Degenerate("distortion affine is singular".into()))?;
        let step = 8usize;
        let mut xs: Vec<usize> = (0..width).step_by(step).collect();
        xs.push(width - 1);
        let mut ys: Vec<usize> = (0..height).step_by(step).collect();
        ys.push(height - 1);
        for &y in &ys {
            for &x in &xs {
                self.undistort_point(x as f64, y as f64)?;
            }
        }
        Ok(())
    }
}

pub(crate) fn half_diagonal(width: usize, height: usize) -> f64 {
    0.5 * ((width as f64).powi(2) + (height as f64).powi(2)).sqrt()
}

/// Chessboard corner correspondences.
#[derive(Debug, Clone, PartialEq)]
pub struct CornerSet {
    /// `((obs_x, obs_y), (board_i, board_j))`.
    pub pairs: Vec<((f64, f64), (i32, i32))>,
    /// Spacing of the rectified board in output pixels; `None` keeps the camera frame.
    pub pitch: Option<f64>,
}

impl CornerSet {
    /// Parses `obs_x obs_y board_i board_j` lines with `#` comments.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                message,
            };
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(err(format!("expected 4 fields, found {}", f.len())));
            }
            let ox: f64 = f[0].parse().map_err(|e| err(format!("obs_x: {e}")))?;
            let oy: f64 = f[1].parse().map_err(|e| err(format!("obs_y: {e}")))?;
            let bi: i32 = f[2].parse().map_err(|e| err(format!("board_i: {e}")))?;
            let bj: i32 = f[3].parse().map_err(|e| err(format!("board_j: {e}")))?;
            if !ox.is_finite() || !oy.is_finite() {
                return Err(err("non-finite corner position".into()));
            }
            pairs.push(((ox, oy), (bi, bj)));
        }
        Ok(CornerSet { pairs, pitch: None })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    fn validate(&self) -> Result<()> {
        if self.pairs.len() < 6 {
            return Err(Error::InvalidArgument(format!(
                "need at least 6 corner correspondences, got {}",
                self.pairs.len()
            )));
        }
        let n = self.pairs.len() as f64;
        let (mi, mj) = self
            .pairs
            .iter()
            .fold((0.0, 0.0), |(a, b), (_, (i, j))| (a + *i as f64 / n, b + *j as f64 / n));
        let (mut sii, mut sjj, mut sij) = (0.0, 0.0, 0.0);
        for (_, (i, j)) in &self.pairs {
            let (di, dj) = (*i as f64 - mi, *j as f64 - mj);
            sii += di * di;
            sjj += dj * dj;
            sij += di * dj;
        }
        if sii * sjj - sij * sij < 1e-9 * (sii + sjj).max(1.0).powi(2) {
            return Err(Error::Degenerate("board coordinates are collinear".into()));
        }
        if let Some(p) = self.pitch {
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::InvalidArgument(format!("board pitch {p} must be positive")));
            }
        }
        Ok(())
    }
}

/// Result of [`fit_distortion`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortionFit {
    pub model: DistortionModel,
    /// Reprojection RMS of the fitted model on its corners, pixels.
    pub rms: f64,
    /// Reprojection RMS of the best distortion-free (affine only) model.
    pub identity_rms: f64,
    pub iterations: usize,
}

// Parameter vector: [k1, k2, cx, cy, b0..b5] with `b` the board → undistorted affine.
const N_PARAMS: usize = 10;

fn predict(p: &[f64], norm: f64, board: (i32, i32)) -> (f64, f64) {
    let (i, j) = (board.0 as f64, board.1 as f64);
    let b = [p[4], p[5], p[6], p[7], p[8], p[9]];
    let (ux, uy) = affine_apply(&b, i, j);
    let m = DistortionModel {
        k1: p[0],
        k2: p[1],
        cx: p[2],
        cy: p[3],
        norm,
        affine: IDENTITY_AFFINE,
    };
    m.distort_point(ux, uy)
}

fn residuals(p: &[f64], norm: f64, corners: &CornerSet) -> Vec<f64> {
    let mut r = Vec::with_capacity(corners.pairs.len() * 2);
    for &((ox, oy), board) in &corners.pairs {
        let (px, py) = predict(p, norm, board);
        r.push(px - ox);
        r.push(py - oy);
    }
    r
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Least-squares affine from board coordinates to observed positions.
fn fit_board_affine(corners: &CornerSet) -> Result<[f64; 6]> {
    let n = corners.pairs.len();
    let a = DMatrix::from_fn(n, 3, |r, c| {
        let (_, (i, j)) = corners.pairs[r];
        [i as f64, j as f64, 1.0][c]
    });
    let bx = DVector::from_fn(n, |r, _| corners.pairs[r].0 .0);
    let by = DVector::from_fn(n, |r, _| corners.pairs[r].0 .1);
    let ata = a.transpose() * &a;
    let lu = ata.lu();
    let sx = lu
        .solve(&(a.transpose() * bx))
        .ok_or_else(|| Error::Degenerate("board coordinates are collinear".into()))?;
    let sy = lu
        .solve(&(a.transpose() * by))
        .ok_or_else(|| Error::Degenerate("board coordinates are collinear".into()))?;
    Ok([sx[0], sx[1], sx[2], sy[0], sy[1], sy[2]])
}

/// Fits the radial model to chessboard corners by Gauss–Newton with a numeric
/// Jacobian and step halving.
///
/// `width`/`height` are the captured image size; they fix the radius
/// normalization (half diagonal) and the initial distortion center.
pub fn fit_distortion(corners: &CornerSet, width: usize, height: usize) -> Result<DistortionFit> {
    corners.validate()?;
    let norm = half_diagonal(width, height);
    let b0 = fit_board_affine(corners)?;
    let mut p = vec![
        0.0,
        0.0,
        (width as f64 - 1.0) / 2.0,
        (height as f64 - 1.0) / 2.0,
        b0[0],
        b0[1],
        b0[2],
        b0[3],
        b0[4],
        b0[5],
    ];
    let m = corners.pairs.len() * 2;
    let mut r = residuals(&p, norm, corners);
    let mut cost = sum_sq(&r);
    let identity_rms = (cost / corners.pairs.len() as f64).sqrt();
    let mut converged = cost == 0.0;
    let mut iterations = 0;

    while !converged && iterations < MAX_FIT_ITERATIONS {
        iterations += 1;
        let mut jac = DMatrix::<f64>::zeros(m, N_PARAMS);
        for k in 0..N_PARAMS {
            let h = 1e-6 * p[k].abs().max(1.0);
            let mut plus = p.clone();
            plus[k] += h;
            let mut minus = p.clone();
            minus[k] -= h;
            let rp = residuals(&plus, norm, corners);
            let rm = residuals(&minus, norm, corners);
            for row in 0..m {
                jac[(row, k)] = (rp[row] - rm[row]) / (2.0 * h);
            }
        }
        let jt = jac.transpose();
        let mut jtj = &jt * &jac;
        // Tiny ridge: with k1 = k2 = 0 the center columns are exactly zero.
        let floor = 1e-12 * (0..N_PARAMS).map(|k| jtj[(k, k)]).fold(0.0, f64::max).max(1e-300);
        for k in 0..N_PARAMS {
            jtj[(k, k)] += (1e-10 * jtj[(k, k)]).max(floor);
        }
        let g = &jt * DVector::from_vec(r.clone());
        let step = jtj
            .lu()
            .solve(&(-g))
            .ok_or_else(|| Error::Degenerate("singular normal equations; corners do not constrain the model".into()))?;

        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, s)| a + alpha * s).collect();
            let rt = residuals(&trial, norm, corners);
            let ct = sum_sq(&rt);
            if ct.is_finite() && ct <= cost {
                let moved = alpha * step.norm();
                p = trial;
                r = rt;
                cost = ct;
                accepted = true;
                if moved < FIT_STEP_TOLERANCE {
                    converged = true;
                }
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            // No descent along the Gauss-Newton direction: numerically at the minimum.
            converged = true;
        }
    }
    if !converged {
        return Err(Error::NonConvergence(format!(
            "distortion fit still moving after {MAX_FIT_ITERATIONS} iterations"
        )));
    }

    let board = [p[4], p[5], p[6], p[7], p[8], p[9]];
    let affine = match corners.pitch {
        None => IDENTITY_AFFINE,
        Some(pitch) => {
            // Output frame: board squares of `pitch` pixels, distortion center at the image center.
            let inv = affine_invert(&board)
                .ok_or_else(|| Error::Degenerate("fitted board affine is singular".into()))?;
            let (ci, cj) = affine_apply(&inv, p[2], p[3]);
            let tx = (width as f64 - 1.0) / 2.0 - pitch * ci;
            let ty = (height as f64 - 1.0) / 2.0 - pitch * cj;
            let g = [pitch, 0.0, tx, 0.0, pitch, ty];
            compose(&g, &inv)
        }
    };
    Ok(DistortionFit {
        model: DistortionModel {
            k1: p[0],
            k2: p[1],
            cx: p[2],
            cy: p[3],
            norm,
            affine,
        },
        rms: (cost / corners.pairs.len() as f64).sqrt(),
        identity_rms,
        iterations,
    })
}

/// `a ∘ b` for 2×3 affines.
pub(crate) fn compose(a: &[f64; 6], b: &[f64; 6]) -> [f64; 6] {
    [
        a[0] * b[0] + a[1] * b[3],
        a[0] * b[1] + a[1] * b[4],
        a[0] * b[2] + a[1] * b[5] + a[2],
        a[3] * b[0] + a[4] * b[3],
        a[3] * b[1] + a[4] * b[4],
        a[3] * b[2] + a[4] * b[5] + a[5],
    ]
}

/// Resamples an observed cube into the model's output frame.
///
/// Output pixels whose source falls outside the input, or touches an invalid
/// input pixel with non-zero weight, are invalid (value 0).
pub fn undistort(cube: &SpectralCube, model: &DistortionModel, mask: &ValidityMask) -> Result<(SpectralCube, ValidityMask)> {
    mask.check_against(cube)?;
    model.check_invertible(cube.width(), cube.height())?;
    let (w, h) = (cube.width(), cube.height());
    let mut taps = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = model.output_to_observed(x as f64, y as f64)?;
            taps.push(bilinear_tap(w, h, sx, sy));
        }
    }
    let fill = vec![0.0; cube.bands()];
    let (data, out_mask) = resample_cube(cube, mask, w, h, &taps, &fill)?;
    Ok((cube.with_data(data)?, out_mask))
}

/// Forward model of the lens: renders what the camera observes when the
/// output-frame image is `ideal`. Inverse of [`undistort`] up to resampling.
pub fn distort(ideal: &SpectralCube, model: &DistortionModel) -> Result<(SpectralCube, ValidityMask)> {
    let (w, h) = (ideal.width(), ideal.height());
    let mut taps = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (qx, qy) = model.observed_to_output(x as f64, y as f64)?;
            taps.push(bilinear_tap(w, h, qx, qy));
        }
    }
    let fill = vec![0.0; ideal.bands()];
    let (data, out_mask) = resample_cube(ideal, &ValidityMask::for_cube(ideal), w, h, &taps, &fill)?;
    Ok((ideal.with_data(data)?, out_mask))
}
