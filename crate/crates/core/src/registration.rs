//! Registration of our-camera frames into the reference frame: area downscaling to
//! the reference pixel density, masked normalized cross-correlation search, and
//! paired-sample extraction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::hypercube::{Plane, SpectralCube, ValidityMask};
use crate::{Error, Result};

/// Smallest side accepted from [`downscale_to_density`].
pub const MIN_DOWNSCALED_SIDE: usize = 8;
/// Band used for matching unless overridden.
pub const DEFAULT_MATCH_NM: f64 = 660.0;

/// Source taps `(index, weight)` of each output sample for an area filter of `factor`.
fn area_taps(src: usize, factor: f64, dst: usize) -> Vec<Vec<(usize, f64)>> {
    (0..dst)
        .map(|i| {
            let lo = i as f64 * factor;
            let hi = lo + factor;
            let mut taps = Vec::new();
            let mut k = lo.floor() as usize;
            while (k as f64) < hi && k < src {
                let cover = (hi.min(k as f64 + 1.0) - lo.max(k as f64)).max(0.0);
                if cover > 0.0 {
                    taps.push((k, cover / factor));
                }
                k += 1;
            }
            taps
        })
        .collect()
}

/// Area-average downscale by `factor ≥ 1`; output is `⌊W/factor⌋ × ⌊H/factor⌋`
/// and each output pixel averages the (fractionally covered) input pixels of its footprint.
pub fn area_downscale(img: &SpectralCube, factor: f64) -> Result<SpectralCube> {
    if !(factor.is_finite() && factor >= 1.0) {
        return Err(Error::InvalidArgument(format!("downscale factor {factor} must be ≥ 1")));
    }
    let ow = (img.width() as f64 / factor + 1e-9).floor() as usize;
    let oh = (img.height() as f64 / factor + 1e-9).floor() as usize;
    if ow == 0 || oh == 0 {
        return Err(Error::InvalidArgument(format!(
            "factor {factor} leaves no pixels from {}×{}",
            img.width(),
            img.height()
        )));
    }
    let tx = area_taps(img.width(), factor, ow);
    let ty = area_taps(img.height(), factor, oh);
    let w = img.width();
    let planes: Vec<Vec<f32>> = (0..img.bands())
        .into_par_iter()
        .map(|b| {
            let src = img.band(b);
            let rows: Vec<Vec<f64>> = ty
                .iter()
                .map(|taps| {
                    let mut row = vec![0.0f64; w];
                    for &(y, wy) in taps {
                        for (acc, &v) in row.iter_mut().zip(&src[y * w..(y + 1) * w]) {
                            *acc += wy * v as f64;
                        }
                    }
                    row
                })
                .collect();
            let mut out = Vec::with_capacity(ow * oh);
            for row in &rows {
                for taps in &tx {
                    out.push(taps.iter().map(|&(x, wx)| wx * row[x]).sum::<f64>() as f32);
                }
            }
            out
        })
        .collect();
    let data = planes.concat();
    if img.is_raw() {
        SpectralCube::new_raw(ow, oh, img.wavelengths().to_vec(), data)
    } else {
        SpectralCube::new(ow, oh, img.wavelengths().to_vec(), data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }
}

/// [`area_downscale`] restricted to outputs of at least 8×8.
pub fn downscale_to_density(img: &SpectralCube, factor: f64) -> Result<SpectralCube> {
    if factor.is_finite() && factor >= 1.0 {
        let ow = (img.width() as f64 / factor + 1e-9).floor() as usize;
        let oh = (img.height() as f64 / factor + 1e-9).floor() as usize;
        if ow < MIN_DOWNSCALED_SIDE || oh < MIN_DOWNSCALED_SIDE {
            return Err(Error::InvalidArgument(format!(
                "downscaled size {ow}×{oh} is below {MIN_DOWNSCALED_SIDE}×{MIN_DOWNSCALED_SIDE}"
            )));
        }
    }
    area_downscale(img, factor)
}

/// Reference sub-rectangle in reference pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// `(row, col)` of the template's top-left corner in the reference.
    pub offset: (usize, usize),
    pub score: f64,
    /// Downscale factor applied to the template before matching.
    pub scale: f64,
    pub crop: CropRect,
}

/// Template statistics reused across placements.
struct Prepared {
    /// Valid template pixels as `(dy, dx, centered value)`.
    pixels: Vec<(usize, usize, f64)>,
    energy: f64,
}

fn prepare(template: &Plane, mask: &ValidityMask) -> Result<Prepared> {
    if mask.width() != template.width || mask.height() != template.height {
        return Err(Error::DimensionMismatch(format!(
            "template mask {}×{} vs template {}×{}",
            mask.width(),
            mask.height(),
            template.width,
            template.height
        )));
    }
    let mut raw = Vec::new();
    for y in 0..template.height {
        for x in 0..template.width {
            if mask.is_valid(x, y, 0) {
                raw.push((y, x, template.get(x, y) as f64));
            }
        }
    }
    if raw.is_empty() {
        return Err(Error::Degenerate("template has no valid pixels".into()));
    }
    let mean = raw.iter().map(|p| p.2).sum::<f64>() / raw.len() as f64;
    let power: f64 = raw.iter().map(|p| p.2 * p.2).sum();
    let pixels: Vec<(usize, usize, f64)> = raw.into_iter().map(|(y, x, v)| (y, x, v - mean)).collect();
    let energy: f64 = pixels.iter().map(|p| p.2 * p.2).sum();
    if energy <= 1e-12 * power {
        return Err(Error::Degenerate("template has zero variance over valid pixels".into()));
    }
    Ok(Prepared { pixels, energy })
}

/// Masked NCC of the prepared template at one placement; 0 where the window is flat.
fn score_at(reference: &Plane, t: &Prepared, row: usize, col: usize) -> f64 {
    let n = t.pixels.len() as f64;
    let (mut cross, mut sum, mut sum_sq) = (0.0, 0.0, 0.0);
    let w = reference.width;
    for &(dy, dx, tv) in &t.pixels {
        let r = reference.data[(row + dy) * w + col + dx] as f64;
        cross += tv * r;
        sum += r;
        sum_sq += r * r;
    }
    let var = sum_sq - sum * sum / n;
    if var <= 1e-12 * sum_sq.max(f64::MIN_POSITIVE) {
        return 0.0;
    }
    (cross / (t.energy * var).sqrt()).clamp(-1.0, 1.0)
}

fn check_fits(reference: &Plane, template: &Plane) -> Result<()> {
    if template.width > reference.width || template.height > reference.height {
        return Err(Error::InvalidArgument(format!(
            "template {}×{} larger than reference {}×{}",
            template.width, template.height, reference.width, reference.height
        )));
    }
    Ok(())
}

/// Best placement of `template` in `reference` by masked normalized
/// cross-correlation over all integer offsets; ties go to the first placement in
/// row-major order. Equal-size template and reference give the single placement.
pub fn ncc_match(reference: &Plane, template: &Plane, template_mask: &ValidityMask) -> Result<MatchResult> {
    ncc_match_multi(&[reference], &[template], template_mask)
}

/// Sum-of-NCC matching over several aligned band pairs; the reported score is the mean.
pub fn ncc_match_multi(references: &[&Plane], templates: &[&Plane], template_mask: &ValidityMask) -> Result<MatchResult> {
    if references.is_empty() || references.len() != templates.len() {
        return Err(Error::InvalidArgument("need one template per reference band".into()));
    }
    let (rw, rh) = (references[0].width, references[0].height);
    let (tw, th) = (templates[0].width, templates[0].height);
    for (r, t) in references.iter().zip(templates) {
        if (r.width, r.height) != (rw, rh) || (t.width, t.height) != (tw, th) {
            return Err(Error::DimensionMismatch("matching bands differ in size".into()));
        }
        check_fits(r, t)?;
    }
    let prepared = templates
        .iter()
        .map(|t| prepare(t, template_mask))
        .collect::<Result<Vec<_>>>()?;
    let rows = rh - th + 1;
    let cols = rw - tw + 1;
    let k = references.len() as f64;
    let best_per_row: Vec<(usize, f64)> = (0..rows)
        .into_par_iter()
        .map(|row| {
            let mut best = (0usize, f64::NEG_INFINITY);
            for col in 0..cols {
                let s: f64 = references
                    .iter()
                    .zip(&prepared)
                    .map(|(r, t)| score_at(r, t, row, col))
                    .sum::<f64>()
                    / k;
                if s > best.1 {
                    best = (col, s);
                }
            }
            best
        })
        .collect();
    let mut best = (0usize, 0usize, f64::NEG_INFINITY);
    for (row, &(col, s)) in best_per_row.iter().enumerate() {
        if s > best.2 {
            best = (row, col, s);
        }
    }
    Ok(MatchResult {
        offset: (best.0, best.1),
        score: best.2,
        scale: 1.0,
        crop: CropRect {
            x: best.1,
            y: best.0,
            width: tw,
            height: th,
        },
    })
}

/// Which bands drive the match in [`pair_samples`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MatchBands {
    /// Single band nearest this wavelength in each cube.
    Nearest(f64),
    /// Every band of our cube against the nearest reference band.
    All,
}

impl Default for MatchBands {
    fn default() -> Self {
        MatchBands::Nearest(DEFAULT_MATCH_NM)
    }
}

/// A registered training pair.
#[derive(Debug, Clone)]
pub struct PairedSample {
    /// Our-camera cube at its native resolution.
    pub input: SpectralCube,
    /// Reference crop with the downscaled input's spatial size.
    pub gt: SpectralCube,
    pub result: MatchResult,
    /// `|reference band − our band|` at the matched placement (first matched band).
    pub mismatch: Plane,
}

/// Downscales `ours` by `factor`, locates it in `reference` and cuts the
/// matching ground-truth crop.
pub fn pair_samples(
    ours: &SpectralCube,
    ours_mask: Option<&ValidityMask>,
    reference: &SpectralCube,
    factor: f64,
    bands: MatchBands,
) -> Result<PairedSample> {
    let small = area_downscale(ours, factor)?;
    if small.width() > reference.width() || small.height() > reference.height() {
        return Err(Error::InvalidArgument(format!(
            "crop clipped: downscaled input {}×{} does not fit in reference {}×{}",
            small.width(),
            small.height(),
            reference.width(),
            reference.height()
        )));
    }
    let small_mask = match ours_mask {
        None => ValidityMask::all_valid(small.width(), small.height(), 1),
        Some(m) => {
            m.check_against(ours)?;
            downscale_mask(&m.collapse(), factor, small.width(), small.height())?
        }
    };
    let band_pairs: Vec<(usize, usize)> = match bands {
        MatchBands::Nearest(nm) => vec![(small.nearest_band(nm), reference.nearest_band(nm))],
        MatchBands::All => (0..small.bands())
            .map(|b| (b, reference.nearest_band(small.wavelengths()[b])))
            .collect(),
    };
    let ref_planes = band_pairs
        .iter()
        .map(|&(_, rb)| reference.band_slice(rb))
        .collect::<Result<Vec<_>>>()?;
    let our_planes = band_pairs
        .iter()
        .map(|&(ob, _)| small.band_slice(ob))
        .collect::<Result<Vec<_>>>()?;
    let mut result = ncc_match_multi(
        &ref_planes.iter().collect::<Vec<_>>(),
        &our_planes.iter().collect::<Vec<_>>(),
        &small_mask,
    )?;
    result.scale = factor;
    let c = result.crop;
    let gt = reference.crop(c.x, c.y, c.width, c.height)?;
    let (rp, op) = (&ref_planes[0], &our_planes[0]);
    let mismatch = (0..c.height)
        .flat_map(|y| (0..c.width).map(move |x| (x, y)))
        .map(|(x, y)| (rp.get(c.x + x, c.y + y) - op.get(x, y)).abs())
        .collect();
    Ok(PairedSample {
        input: ours.clone(),
        gt,
        result,
        mismatch: Plane::new(c.width, c.height, mismatch)?,
    })
}

/// A downscaled pixel is valid when every input pixel it touches is valid.
fn downscale_mask(mask: &ValidityMask, factor: f64, ow: usize, oh: usize) -> Result<ValidityMask> {
    let tx = area_taps(mask.width(), factor, ow);
    let ty = area_taps(mask.height(), factor, oh);
    let mut bits = Vec::with_capacity(ow * oh);
    for rows in &ty {
        for cols in &tx {
            bits.push(rows.iter().all(|&(y, _)| cols.iter().all(|&(x, _)| mask.is_valid(x, y, 0))));
        }
    }
    ValidityMask::new(ow, oh, 1, bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn plane(w: usize, h: usize, mut f: impl FnMut(usize, usize) -> f32) -> Plane {
        Plane::new(w, h, (0..w * h).map(|i| f(i % w, i / w)).collect()).unwrap()
    }

    fn cube1(p: &Plane) -> SpectralCube {
        SpectralCube::new(p.width, p.height, vec![660.0], p.data.clone()).unwrap()
    }

    #[test]
    fn downscale_dimensions_and_constants() {
        let c = SpectralCube::filled(1024, 1024, vec![500.0], 0.42).unwrap();
        let d = downscale_to_density(&c, 4.0).unwrap();
        assert_eq!((d.width(), d.height()), (256, 256));
        assert!(d.data().iter().all(|&v| (v - 0.42).abs() < 1e-6));
        let odd = downscale_to_density(&SpectralCube::filled(100, 90, vec![500.0], 0.42).unwrap(), 3.58).unwrap();
        assert_eq!((odd.width(), odd.height()), (27, 25));
        assert!(odd.data().iter().all(|&v| (v - 0.42).abs() < 1e-6));
    }

    #[test]
    fn checkerboard_averages_to_half() {
        let c = SpectralCube::new(2, 2, vec![500.0], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let d = area_downscale(&c, 2.0).unwrap();
        assert_eq!(d.data(), &[0.5]);
    }

    #[test]
    fn downscale_too_small_is_rejected() {
        let c = SpectralCube::filled(20, 20, vec![500.0], 0.1).unwrap();
        assert!(downscale_to_density(&c, 4.0).is_err());
        assert!(downscale_to_density(&c, 0.5).is_err());
    }

    #[test]
    fn downscale_preserves_mean_when_divisible() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f32> = (0..48 * 32).map(|_| rng.random()).collect();
        let c = SpectralCube::new(48, 32, vec![500.0], data).unwrap();
        let d = downscale_to_density(&c, 4.0).unwrap();
        let m0: f64 = c.data().iter().map(|&v| v as f64).sum::<f64>() / c.data().len() as f64;
        let m1: f64 = d.data().iter().map(|&v| v as f64).sum::<f64>() / d.data().len() as f64;
        assert!((m0 - m1).abs() < 1e-6);
    }

    fn texture(w: usize, h: usize, seed: u64) -> Plane {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        plane(w, h, |_, _| rng.random::<f32>())
    }

    #[test]
    fn self_match() {
        let r = texture(160, 140, 1);
        let t = plane(40, 30, |x, y| r.get(81 + x, 37 + y));
        let m = ncc_match(&r, &t, &ValidityMask::all_valid(40, 30, 1)).unwrap();
        assert_eq!(m.offset, (37, 81));
        assert!((m.score - 1.0).abs() < 1e-9);
    }

    #[test]
    fn constant_or_oversized_template_fails() {
        let r = texture(20, 20, 2);
        let flat = Plane::filled(5, 5, 0.3);
        assert!(matches!(
            ncc_match(&r, &flat, &ValidityMask::all_valid(5, 5, 1)),
            Err(Error::Degenerate(_))
        ));
        let big = texture(21, 5, 3);
        assert!(ncc_match(&r, &big, &ValidityMask::all_valid(21, 5, 1)).is_err());
    }

    #[test]
    fn affine_intensity_invariance() {
        let r = texture(60, 50, 4);
        let t = plane(20, 15, |x, y| r.get(30 + x, 12 + y) * 0.9 + 0.02 * ((x * y) % 3) as f32);
        let mask = ValidityMask::all_valid(20, 15, 1);
        let a = ncc_match(&r, &t, &mask).unwrap();
        let t2 = Plane::new(20, 15, t.data.iter().map(|v| 0.5 * v + 0.1).collect()).unwrap();
        let b = ncc_match(&r, &t2, &mask).unwrap();
        assert_eq!(a.offset, b.offset);
        assert!((a.score - b.score).abs() < 1e-9);
    }

    #[test]
    fn masked_pixels_are_ignored() {
        let r = texture(50, 50, 5);
        let mut t = plane(12, 12, |x, y| r.get(20 + x, 9 + y));
        let mut mask = ValidityMask::all_valid(12, 12, 1);
        for y in 0..5 {
            for x in 0..5 {
                t.data[y * 12 + x] = 1.0;
                mask.set(x, y, 0, false);
            }
        }
        let m = ncc_match(&r, &t, &mask).unwrap();
        assert_eq!(m.offset, (9, 20));
        assert!((m.score - 1.0).abs() < 1e-9);
    }

    #[test]
    fn identical_cubes_pair_at_origin() {
        let c = cube1(&texture(24, 20, 6));
        let p = pair_samples(&c, None, &c, 1.0, MatchBands::default()).unwrap();
        assert_eq!(p.result.offset, (0, 0));
        assert!(p.mismatch.data.iter().all(|&v| v == 0.0));
        assert_eq!(p.gt, c);
    }

    #[test]
    fn oversized_input_reports_clipped_crop() {
        let r = cube1(&texture(20, 20, 7));
        let ours = cube1(&texture(88, 40, 8));
        let err = pair_samples(&ours, None, &r, 4.0, MatchBands::default()).unwrap_err();
        assert!(err.to_string().contains("clipped"));
    }
}
