//! Bilinear taps shared by undistortion, capture simulation and affine warping.

use rayon::prelude::*;

use crate::hypercube::{SpectralCube, ValidityMask};
use crate::Result;

/// Four source indices and weights for one bilinear sample.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Tap {
    idx: [usize; 4],
    w: [f64; 4],
    x: [usize; 4],
    y: [usize; 4],
}

const EDGE_TOL: f64 = 1e-9;

/// Tap at index-space position `(sx, sy)` (pixel centers on integers), or `None`
/// when the position lies outside the sampled grid.
pub(crate) fn bilinear_tap(width: usize, height: usize, sx: f64, sy: f64) -> Option<Tap> {
    bilinear_tap_within(width, height, sx, sy, EDGE_TOL)
}

/// As [`bilinear_tap`], accepting positions up to `margin` beyond the outer
/// pixel centers; those sample the edge value.
pub(crate) fn bilinear_tap_within(width: usize, height: usize, sx: f64, sy: f64, margin: f64) -> Option<Tap> {
    if !sx.is_finite() || !sy.is_finite() {
        return None;
    }
    let max_x = (width - 1) as f64;
    let max_y = (height - 1) as f64;
    if sx < -margin || sy < -margin || sx > max_x + margin || sy > max_y + margin {
        return None;
    }
    let sx = sx.clamp(0.0, max_x);
    let sy = sy.clamp(0.0, max_y);
    let x0 = (sx.floor() as usize).min(width.saturating_sub(2));
    let y0 = (sy.floor() as usize).min(height.saturating_sub(2));
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = sx - x0 as f64;
    let fy = sy - y0 as f64;
    Some(Tap {
        idx: [y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1],
        w: [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy],
        x: [x0, x1, x0, x1],
        y: [y0, y0, y1, y1],
    })
}

impl Tap {
    #[inline]
    pub(crate) fn sample(&self, plane: &[f32]) -> f64 {
        let mut v = 0.0;
        for k in 0..4 {
            if self.w[k] != 0.0 {
                v += self.w[k] * plane[self.idx[k]] as f64;
            }
        }
        v
    }

    /// Every neighbor that contributes a non-zero weight is valid in band `b`.
    #[inline]
    pub(crate) fn valid(&self, mask: &ValidityMask, b: usize) -> bool {
        (0..4).all(|k| self.w[k] == 0.0 || mask.is_valid(self.x[k], self.y[k], b))
    }
}

/// Resamples every band of `cube` through per-output-pixel taps.
///
/// Pixels without a tap take `fill[b]` and are invalid. The output mask has the
/// same band count as `mask`.
pub(crate) fn resample_cube(
    cube: &SpectralCube,
    mask: &ValidityMask,
    out_width: usize,
    out_height: usize,
    taps: &[Option<Tap>],
    fill: &[f64],
) -> Result<(Vec<f32>, ValidityMask)> {
    let n_out = out_width * out_height;
    let bands = cube.bands();
    let planes: Vec<Vec<f32>> = (0..bands)
        .into_par_iter()
        .map(|b| {
            let src = cube.band(b);
            taps.iter()
                .map(|t| match t {
                    Some(t) => t.sample(src) as f32,
                    None => fill[b] as f32,
                })
                .collect()
        })
        .collect();
    let mut bits = Vec::with_capacity(n_out * mask.bands());
    for b in 0..mask.bands() {
        bits.extend(taps.iter().map(|t| t.map_or(false, |t| t.valid(mask, b))));
    }
    let out_mask = ValidityMask::new(out_width, out_height, mask.bands(), bits)?;
    Ok((planes.concat(), out_mask))
}
