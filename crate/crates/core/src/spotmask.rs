//! LED specular-spot detection by Otsu thresholding and cross-band inpainting.

use rayon::prelude::*;

use crate::hypercube::{quantize_u8, SpectralCube, ValidityMask};
use crate::{Error, Result};

/// Above-class mean must reach this multiple of the below-class mean.
pub const DEFAULT_SPOT_RATIO: f64 = 2.0;

pub type Histogram = [u64; 256];

/// 256-bin histogram of `values` after 8-bit quantization over [0, 1].
pub fn histogram(values: &[f32]) -> Histogram {
    let mut h = [0u64; 256];
    for &v in values {
        h[quantize_u8(v) as usize] += 1;
    }
    h
}

/// 128×128 → 256-bit product as (high, low) words.
fn mul_wide(a: u128, b: u128) -> (u128, u128) {
    const MASK: u128 = u64::MAX as u128;
    let (a_lo, a_hi) = (a & MASK, a >> 64);
    let (b_lo, b_hi) = (b & MASK, b >> 64);
    let ll = a_lo * b_lo;
    let lh = a_lo * b_hi;
    let hl = a_hi * b_lo;
    let hh = a_hi * b_hi;
    let mid = (ll >> 64) + (lh & MASK) + (hl & MASK);
    let lo = (ll & MASK) | (mid << 64);
    let hi = hh + (lh >> 64) + (hl >> 64) + (mid >> 64);
    (hi, lo)
}

/// Otsu threshold: the level `t` maximizing between-class variance with classes
/// `≤ t` and `> t`. Ties go to the lowest `t`. Computed in exact integer arithmetic.
///
/// Fails with [`Error::Degenerate`] when fewer than two levels are populated.
pub fn otsu_threshold(hist: &Histogram) -> Result<u8> {
    let populated = hist.iter().filter(|&&c| c > 0).count();
    if populated < 2 {
        return Err(Error::Degenerate("histogram has a single populated level".into()));
    }
    let n: u128 = hist.iter().map(|&c| c as u128).sum();
    let s: u128 = hist.iter().enumerate().map(|(l, &c)| l as u128 * c as u128).sum();

    // Between-class variance ∝ (n·s0 − s·n0)² / (n0·n1); compared by cross-multiplication.
    let mut best: Option<(u8, u128, u128)> = None;
    let (mut n0, mut s0) = (0u128, 0u128);
    for t in 0..255usize {
        n0 += hist[t] as u128;
        s0 += t as u128 * hist[t] as u128;
        let n1 = n - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let diff = (n * s0).abs_diff(s * n0);
        let num = diff * diff;
        let den = n0 * n1;
        let better = match best {
            None => true,
            Some((_, bn, bd)) => mul_wide(num, bd) > mul_wide(bn, den),
        };
        if better {
            best = Some((t as u8, num, den));
        }
    }
    best.map(|(t, _, _)| t)
        .ok_or_else(|| Error::Degenerate("no threshold separates the histogram".into()))
}

/// Per-band spot mask: pixels above the band's Otsu threshold are invalid when the
/// bright class is at least `spot_ratio` times the mean of the dark class.
/// Bands failing that check, or with a degenerate histogram, stay fully valid.
pub fn spot_mask(cube: &SpectralCube, spot_ratio: f64) -> Result<ValidityMask> {
    if !(spot_ratio.is_finite() && spot_ratio > 0.0) {
        return Err(Error::InvalidArgument(format!("spot ratio {spot_ratio} must be positive")));
    }
    let planes: Vec<Vec<bool>> = (0..cube.bands())
        .into_par_iter()
        .map(|b| band_spots(cube.band(b), spot_ratio))
        .collect();
    ValidityMask::new(cube.width(), cube.height(), cube.bands(), planes.concat())
}

fn band_spots(plane: &[f32], spot_ratio: f64) -> Vec<bool> {
    let all_valid = vec![true; plane.len()];
    let Ok(t) = otsu_threshold(&histogram(plane)) else {
        return all_valid;
    };
    let (mut sum_hi, mut n_hi, mut sum_lo, mut n_lo) = (0.0f64, 0usize, 0.0f64, 0usize);
    for &v in plane {
        if quantize_u8(v) > t {
            sum_hi += v as f64;
            n_hi += 1;
        } else {
            sum_lo += v as f64;
            n_lo += 1;
        }
    }
    let mean_hi = sum_hi / n_hi as f64;
    let mean_lo = sum_lo / n_lo as f64;
    if mean_hi < spot_ratio * mean_lo {
        return all_valid;
    }
    plane.iter().map(|&v| quantize_u8(v) <= t).collect()
}

/// Replaces invalid entries by linear interpolation over wavelength between the
/// nearest valid bands of the same pixel; constant extrapolation at the ends.
pub fn inpaint_spectral(cube: &SpectralCube, mask: &ValidityMask) -> Result<SpectralCube> {
    mask.check_against(cube)?;
    let mask = if mask.bands() == cube.bands() {
        mask.clone()
    } else {
        mask.expand(cube.bands())?
    };
    let (w, h, bands) = cube.dims();
    let wl = cube.wavelengths();
    let plane = w * h;
    let mut out = cube.data().to_vec();
    let mut bad_pixel = None;
    let mut valid = Vec::with_capacity(bands);
    for p in 0..plane {
        let (x, y) = (p % w, p / w);
        valid.clear();
        valid.extend((0..bands).filter(|&b| mask.is_valid(x, y, b)));
        if valid.len() == bands {
            continue;
        }
        if valid.is_empty() {
            bad_pixel = Some((x, y));
            break;
        }
        let mut k = 0;
        for b in 0..bands {
            while k < valid.len() && valid[k] < b {
                k += 1;
            }
            if k < valid.len() && valid[k] == b {
                continue;
            }
            let value = match (k.checked_sub(1).map(|i| valid[i]), valid.get(k).copied()) {
                (Some(lo), Some(hi)) => {
                    let t = (wl[b] - wl[lo]) / (wl[hi] - wl[lo]);
                    let a = cube.get(x, y, lo) as f64;
                    let c = cube.get(x, y, hi) as f64;
                    (a + t * (c - a)) as f32
                }
                (Some(lo), None) => cube.get(x, y, lo),
                (None, Some(hi)) => cube.get(x, y, hi),
                (None, None) => unreachable!(),
            };
            out[b * plane + p] = value;
        }
    }
    if let Some((x, y)) = bad_pixel {
        return Err(Error::InvalidArgument(format!("pixel ({x}, {y}) has no valid band to inpaint from")));
    }
    cube.with_data(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive oracle in plain u128, valid for small histograms.
    fn oracle(hist: &Histogram) -> Option<u8> {
        let n: u128 = hist.iter().map(|&c| c as u128).sum();
        let mean_num: u128 = hist.iter().enumerate().map(|(l, &c)| l as u128 * c as u128).sum();
        let mut best: Option<(usize, u128, u128)> = None;
        for t in 0..256 {
            let n0: u128 = hist[..=t].iter().map(|&c| c as u128).sum();
            let s0: u128 = hist[..=t].iter().enumerate().map(|(l, &c)| l as u128 * c as u128).sum();
            if n0 == 0 || n0 == n {
                continue;
            }
            let d = (s0 * n).abs_diff(mean_num * n0);
            let (num, den) = (d * d, n0 * (n - n0));
            if best.map_or(true, |(_, bn, bd)| num * bd > bn * den) {
                best = Some((t, num, den));
            }
        }
        best.map(|(t, _, _)| t as u8)
    }

    #[test]
    fn two_spikes_returns_lowest_separator() {
        let mut h = [0u64; 256];
        h[10] = 500;
        h[200] = 500;
        assert_eq!(otsu_threshold(&h).unwrap(), 10);
    }

    #[test]
    fn uniform_histogram_splits_at_midpoint() {
        assert_eq!(otsu_threshold(&[7u64; 256]).unwrap(), 127);
    }

    #[test]
    fn constant_image_is_degenerate() {
        let mut h = [0u64; 256];
        h[42] = 1000;
        assert!(matches!(otsu_threshold(&h), Err(Error::Degenerate(_))));
        assert!(matches!(otsu_threshold(&[0u64; 256]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn wide_products_compare_exactly() {
        let a = u128::MAX / 3;
        let (hi, lo) = mul_wide(a, 6);
        assert_eq!((hi, lo), (1, u128::MAX - 1));
        assert_eq!(mul_wide(1 << 100, 1 << 100), (1 << 72, 0));
    }

    proptest! {
        #[test]
        fn otsu_matches_exhaustive(counts in prop::collection::vec(0u64..1000, 256), sparse in prop::bool::ANY) {
            let mut h = [0u64; 256];
            for (i, c) in counts.iter().enumerate() {
                h[i] = if sparse && c % 7 != 0 { 0 } else { *c };
            }
            match oracle(&h) {
                Some(t) => prop_assert_eq!(otsu_threshold(&h).unwrap(), t),
                None => prop_assert!(otsu_threshold(&h).is_err()),
            }
        }
    }

    fn cube_from_band(w: usize, h: usize, f: impl Fn(usize, usize) -> f32) -> SpectralCube {
        let data = (0..w * h).map(|i| f(i % w, i / w)).collect();
        SpectralCube::new(w, h, vec![660.0], data).unwrap()
    }

    #[test]
    fn constant_band_stays_valid() {
        let c = cube_from_band(8, 8, |_, _| 0.3);
        assert_eq!(spot_mask(&c, DEFAULT_SPOT_RATIO).unwrap().count_valid(), 64);
    }

    #[test]
    fn bright_but_unimodal_band_is_not_masked() {
        let c = cube_from_band(16, 16, |x, _| 0.4 + 0.02 * (x % 5) as f32);
        assert_eq!(spot_mask(&c, DEFAULT_SPOT_RATIO).unwrap().count_valid(), 256);
    }

    #[test]
    fn inpaint_examples() {
        let data = vec![0.2, 0.9, 0.4];
        let c = SpectralCube::new(1, 1, vec![500.0, 550.0, 600.0], data).unwrap();
        let mut m = ValidityMask::all_valid(1, 1, 3);
        m.set(0, 0, 1, false);
        assert!((inpaint_spectral(&c, &m).unwrap().get(0, 0, 1) - 0.3).abs() < 1e-7);

        let c = SpectralCube::new(1, 1, vec![500.0, 550.0, 600.0], vec![0.1, 0.7, 0.2]).unwrap();
        let mut m = ValidityMask::all_valid(1, 1, 3);
        m.set(0, 0, 2, false);
        assert_eq!(inpaint_spectral(&c, &m).unwrap().get(0, 0, 2), 0.7);

        assert_eq!(inpaint_spectral(&c, &ValidityMask::for_cube(&c)).unwrap(), c);

        let mut none = ValidityMask::all_valid(1, 1, 3);
        for b in 0..3 {
            none.set(0, 0, b, false);
        }
        assert!(inpaint_spectral(&c, &none).is_err());
    }

    #[test]
    fn inpaint_uses_wavelength_not_index() {
        let c = SpectralCube::new(1, 1, vec![400.0, 410.0, 500.0], vec![0.0, 0.5, 1.0]).unwrap();
        let mut m = ValidityMask::all_valid(1, 1, 3);
        m.set(0, 0, 1, false);
        assert!((inpaint_spectral(&c, &m).unwrap().get(0, 0, 1) - 0.1).abs() < 1e-7);
    }

    proptest! {
        #[test]
        fn inpaint_keeps_valid_and_stays_in_range(
            values in prop::collection::vec(0.0f32..1.0, 3 * 3 * 6),
            bits in prop::collection::vec(prop::bool::weighted(0.7), 3 * 3 * 6),
        ) {
            let wl = vec![400.0, 450.0, 470.0, 560.0, 600.0, 700.0];
            let c = SpectralCube::new(3, 3, wl, values).unwrap();
            let mut bits = bits;
            for p in 0..9 {
                bits[p] = true;
            }
            let m = ValidityMask::new(3, 3, 6, bits).unwrap();
            let out = inpaint_spectral(&c, &m).unwrap();
            for y in 0..3 {
                for x in 0..3 {
                    let valid: Vec<f32> = (0..6).filter(|&b| m.is_valid(x, y, b)).map(|b| c.get(x, y, b)).collect();
                    let lo = valid.iter().cloned().fold(f32::MAX, f32::min);
                    let hi = valid.iter().cloned().fold(f32::MIN, f32::max);
                    for b in 0..6 {
                        let v = out.get(x, y, b);
                        if m.is_valid(x, y, b) {
                            prop_assert_eq!(v, c.get(x, y, b));
                        } else {
                            prop_assert!(v >= lo - 1e-6 && v <= hi + 1e-6);
                        }
                    }
                }
            }
        }
    }
}
