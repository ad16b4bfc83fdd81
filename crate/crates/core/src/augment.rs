//! Random affine augmentation with truncated-normal parameters, uniform mean
//! fill outside the source, and validity-mask propagation.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::calibration::{affine_apply, affine_invert, compose};
use crate::hypercube::{SpectralCube, ValidityMask};
use crate::resample::{bilinear_tap_within, resample_cube};
use crate::{Error, Result};

/// Closed parameter interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Range { min, max }
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.min + self.max)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }

    /// Normal with mean at the midpoint and σ = width/4, redrawn until inside.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let width = self.max - self.min;
        if width <= 0.0 {
            return self.min;
        }
        let normal = Normal::new(self.midpoint(), width / 4.0).expect("finite positive sigma");
        loop {
            let v = normal.sample(rng);
            if self.contains(v) {
                return v;
            }
        }
    }
}

/// Sampling ranges for each affine component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineRanges {
    /// Fraction of width.
    pub tx: Range,
    /// Fraction of height.
    pub ty: Range,
    pub scale: Range,
    /// Degrees.
    pub rotate: Range,
    /// Degrees.
    pub shear: Range,
}

impl Default for AffineRanges {
    fn default() -> Self {
        AffineRanges {
            tx: Range::new(-0.2, 0.2),
            ty: Range::new(-0.2, 0.2),
            scale: Range::new(0.8, 1.6),
            rotate: Range::new(-30.0, 30.0),
            shear: Range::new(-5.0, 5.0),
        }
    }
}

impl AffineRanges {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("tx", self.tx),
            ("ty", self.ty),
            ("scale", self.scale),
            ("rotate", self.rotate),
            ("shear", self.shear),
        ] {
            if !(r.min.is_finite() && r.max.is_finite() && r.min <= r.max) {
                return Err(Error::InvalidArgument(format!("{name} range [{}, {}] is invalid", r.min, r.max)));
            }
        }
        if self.scale.min <= 0.0 {
            return Err(Error::InvalidArgument("scale range must be positive".into()));
        }
        Ok(())
    }

    pub fn contains(&self, p: &AffineParams) -> bool {
        self.tx.contains(p.tx)
            && self.ty.contains(p.ty)
            && self.scale.contains(p.scale)
            && self.rotate.contains(p.rotate)
            && self.shear.contains(p.shear)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub tx: f64,
    pub ty: f64,
    pub scale: f64,
    pub rotate: f64,
    pub shear: f64,
}

impl AffineParams {
    pub const IDENTITY: AffineParams = AffineParams {
        tx: 0.0,
        ty: 0.0,
        scale: 1.0,
        rotate: 0.0,
        shear: 0.0,
    };
}

/// Draws one parameter set with the default ranges.
pub fn sample_affine<R: Rng + ?Sized>(rng: &mut R) -> AffineParams {
    sample_affine_in(rng, &AffineRanges::default())
}

/// Draws tx, ty, scale, rotate, shear in that order.
pub fn sample_affine_in<R: Rng + ?Sized>(rng: &mut R, ranges: &AffineRanges) -> AffineParams {
    AffineParams {
        tx: ranges.tx.sample(rng),
        ty: ranges.ty.sample(rng),
        scale: ranges.scale.sample(rng),
        rotate: ranges.rotate.sample(rng),
        shear: ranges.shear.sample(rng),
    }
}

/// Row-major 2×3 forward map in continuous pixel coordinates (pixel `i` spans
/// `[i, i+1)`): `T · C · R · S · Sh · C⁻¹` with `C` centered on `(W/2, H/2)`.
pub type Affine = [f64; 6];

pub fn to_matrix(p: &AffineParams, width: usize, height: usize) -> Affine {
    let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
    let t = [1.0, 0.0, p.tx * width as f64, 0.0, 1.0, p.ty * height as f64];
    let c = [1.0, 0.0, cx, 0.0, 1.0, cy];
    let c_inv = [1.0, 0.0, -cx, 0.0, 1.0, -cy];
    let (s, co) = p.rotate.to_radians().sin_cos();
    let r = [co, -s, 0.0, s, co, 0.0];
    let sc = [p.scale, 0.0, 0.0, 0.0, p.scale, 0.0];
    let sh = [1.0, p.shear.to_radians().tan(), 0.0, 0.0, 1.0, 0.0];
    let mut m = compose(&t, &c);
    for next in [&r, &sc, &sh, &c_inv] {
        m = compose(&m, next);
    }
    m
}

/// Applies `m` to a point in continuous pixel coordinates.
pub fn transform_point(m: &Affine, x: f64, y: f64) -> (f64, f64) {
    affine_apply(m, x, y)
}

/// Inverse-map bilinear warp. Destination pixels whose source point falls outside
/// the image rectangle take the per-band source mean and are invalid; inside, a
/// pixel is valid when every source neighbor with non-zero weight is valid.
/// Within half a pixel of the border the edge pixels are extended.
pub fn warp(cube: &SpectralCube, mask: &ValidityMask, m: &Affine) -> Result<(SpectralCube, ValidityMask)> {
    mask.check_against(cube)?;
    let inv = affine_invert(m).ok_or_else(|| Error::Degenerate("affine matrix is singular".into()))?;
    let (w, h) = (cube.width(), cube.height());
    let taps: Vec<_> = (0..w * h)
        .map(|i| {
            let (qx, qy) = ((i % w) as f64 + 0.5, (i / w) as f64 + 0.5);
            let (sx, sy) = affine_apply(&inv, qx, qy);
            bilinear_tap_within(w, h, sx - 0.5, sy - 0.5, 0.5)
        })
        .collect();
    let fill = cube.band_means();
    let (data, out_mask) = resample_cube(cube, mask, w, h, &taps, &fill)?;
    Ok((cube.with_data(data)?, out_mask))
}

/// `K · m · K⁻¹` with `K` scaling continuous coordinates by `(kx, ky)`.
pub fn rescale_matrix(m: &Affine, kx: f64, ky: f64) -> Affine {
    [m[0], m[1] * kx / ky, m[2] * kx, m[3] * ky / kx, m[4], m[5] * ky]
}

#[derive(Debug, Clone)]
pub struct AugmentedPair {
    pub input: SpectralCube,
    pub gt: SpectralCube,
    /// Shared validity at ground-truth resolution.
    pub mask: ValidityMask,
    pub params: AffineParams,
}

/// Applies one physical transform to a registered input/ground-truth pair.
pub fn augment_pair<R: Rng + ?Sized>(
    input: &SpectralCube,
    input_mask: Option<&ValidityMask>,
    gt: &SpectralCube,
    gt_mask: Option<&ValidityMask>,
    rng: &mut R,
    ranges: &AffineRanges,
    warp_gt: bool,
) -> Result<AugmentedPair> {
    ranges.validate()?;
    let params = sample_affine_in(rng, ranges);
    apply_pair(input, input_mask, gt, gt_mask, &params, warp_gt)
}

/// Deterministic core of [`augment_pair`] for a given parameter set.
pub fn apply_pair(
    input: &SpectralCube,
    input_mask: Option<&ValidityMask>,
    gt: &SpectralCube,
    gt_mask: Option<&ValidityMask>,
    params: &AffineParams,
    warp_gt: bool,
) -> Result<AugmentedPair> {
    let m_gt = to_matrix(params, gt.width(), gt.height());
    let kx = input.width() as f64 / gt.width() as f64;
    let ky = input.height() as f64 / gt.height() as f64;
    let m_in = rescale_matrix(&m_gt, kx, ky);

    let in_mask = match input_mask {
        Some(m) => m.clone(),
        None => ValidityMask::all_valid(input.width(), input.height(), 1),
    };
    let g_mask = match gt_mask {
        Some(m) => m.clone(),
        None => ValidityMask::all_valid(gt.width(), gt.height(), 1),
    };
    let (input_w, input_m) = warp(input, &in_mask, &m_in)?;
    let (gt_w, gt_m) = if warp_gt {
        warp(gt, &g_mask, &m_gt)?
    } else {
        (gt.clone(), g_mask)
    };
    let reduced = reduce_mask(&input_m.collapse(), gt.width(), gt.height());
    let mask = gt_m.collapse().and(&reduced)?;
    Ok(AugmentedPair {
        input: input_w,
        gt: gt_w,
        mask,
        params: *params,
    })
}

/// Coarse pixel valid iff every fine pixel whose center lies in its footprint is valid.
fn reduce_mask(fine: &ValidityMask, width: usize, height: usize) -> ValidityMask {
    let (fw, fh) = (fine.width(), fine.height());
    let mut bits = vec![true; width * height];
    for y in 0..fh {
        let cy = (((y as f64 + 0.5) * height as f64 / fh as f64) as usize).min(height - 1);
        for x in 0..fw {
            if !fine.is_valid(x, y, 0) {
                let cx = (((x as f64 + 0.5) * width as f64 / fw as f64) as usize).min(width - 1);
                bits[cy * width + cx] = false;
            }
        }
    }
    ValidityMask::new(width, height, 1, bits).expect("bit count matches")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cube(w: usize, h: usize, bands: usize, f: impl Fn(usize, usize, usize) -> f32) -> SpectralCube {
        let mut data = Vec::new();
        for b in 0..bands {
            for y in 0..h {
                for x in 0..w {
                    data.push(f(x, y, b));
                }
            }
        }
        SpectralCube::new(w, h, (0..bands).map(|b| 500.0 + 10.0 * b as f64).collect(), data).unwrap()
    }

    #[test]
    fn monte_carlo_moments_and_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ranges = AffineRanges::default();
        let n = 10_000;
        let draws: Vec<_> = (0..n).map(|_| sample_affine(&mut rng)).collect();
        assert!(draws.iter().all(|p| ranges.contains(p)));
        let check = |vals: Vec<f64>, r: Range| {
            let mean = vals.iter().sum::<f64>() / n as f64;
            let tol = 2.0 * ((r.max - r.min) / 4.0) / (n as f64).sqrt();
            assert!((mean - r.midpoint()).abs() < tol, "mean {mean} vs {}", r.midpoint());
        };
        check(draws.iter().map(|p| p.tx).collect(), ranges.tx);
        check(draws.iter().map(|p| p.scale).collect(), ranges.scale);
        check(draws.iter().map(|p| p.rotate).collect(), ranges.rotate);
    }

    #[test]
    fn same_seed_same_sequence() {
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            assert_eq!(sample_affine(&mut a), sample_affine(&mut b));
        }
    }

    #[test]
    fn matrix_examples() {
        let id = to_matrix(&AffineParams::IDENTITY, 100, 60);
        for (a, b) in id.iter().zip([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        let t = to_matrix(&AffineParams { tx: 0.1, ..AffineParams::IDENTITY }, 100, 60);
        let (x, y) = transform_point(&t, 13.0, 7.0);
        assert!((x - 23.0).abs() < 1e-12 && (y - 7.0).abs() < 1e-12);
        let s = to_matrix(&AffineParams { scale: 2.0, ..AffineParams::IDENTITY }, 100, 60);
        let (x, y) = transform_point(&s, 50.0, 30.0);
        assert!((x - 50.0).abs() < 1e-12 && (y - 30.0).abs() < 1e-12);
    }

    #[test]
    fn identity_warp_is_exact() {
        let c = cube(13, 9, 3, |x, y, b| ((x * 3 + y * 5 + b) % 17) as f32 / 16.0);
        let mut mask = ValidityMask::all_valid(13, 9, 3);
        mask.set(4, 4, 1, false);
        let (out, m) = warp(&c, &mask, &to_matrix(&AffineParams::IDENTITY, 13, 9)).unwrap();
        assert_eq!(out, c);
        assert_eq!(m, mask);
    }

    #[test]
    fn full_translation_gives_fill() {
        let c = cube(10, 8, 2, |x, y, b| (x + y + b) as f32 / 20.0);
        let means = c.band_means();
        let m = to_matrix(&AffineParams { tx: 1.0, ..AffineParams::IDENTITY }, 10, 8);
        let (out, mask) = warp(&c, &ValidityMask::for_cube(&c), &m).unwrap();
        assert_eq!(mask.count_valid(), 0);
        for b in 0..2 {
            assert!(out.band(b).iter().all(|&v| v == means[b] as f32));
        }
    }

    #[test]
    fn constant_cube_stays_constant() {
        let c = cube(12, 12, 2, |_, _, _| 0.37);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = to_matrix(&sample_affine(&mut rng), 12, 12);
        let (out, _) = warp(&c, &ValidityMask::for_cube(&c), &m).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.37).abs() < 1e-6));
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let c = cube(4, 4, 1, |_, _, _| 0.1);
        assert!(warp(&c, &ValidityMask::for_cube(&c), &[0.0; 6]).is_err());
    }

    #[test]
    fn rescaled_matrix_matches_physical_transform() {
        let p = AffineParams {
            tx: 0.07,
            ty: -0.11,
            scale: 1.3,
            rotate: 17.0,
            shear: 3.0,
        };
        let coarse = to_matrix(&p, 16, 16);
        let fine = rescale_matrix(&coarse, 4.0, 4.0);
        for (a, b) in fine.iter().zip(to_matrix(&p, 64, 64)) {
            assert!((a - b).abs() < 1e-9);
        }
        let (x, y) = transform_point(&coarse, 3.0, 5.0);
        let (fx, fy) = transform_point(&fine, 12.0, 20.0);
        assert!((fx / 4.0 - x).abs() < 1e-9 && (fy / 4.0 - y).abs() < 1e-9);
    }

    #[test]
    fn identity_pair_is_unchanged() {
        let input = cube(16, 16, 2, |x, y, _| ((x + 2 * y) % 7) as f32 / 7.0);
        let gt = cube(4, 4, 3, |x, y, b| ((x + y + b) % 5) as f32 / 5.0);
        let out = apply_pair(&input, None, &gt, None, &AffineParams::IDENTITY, true).unwrap();
        assert_eq!(out.input, input);
        assert_eq!(out.gt, gt);
        assert_eq!(out.mask.count_valid(), 16);
    }
}
