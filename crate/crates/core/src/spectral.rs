//! LED emission model, projection of fine spectra onto the LED bands, and the
//! normalized spectral-angle error.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::hypercube::{nearest_index, SpectralCube, ValidityMask};
use crate::{Error, Result};

/// Gaussian tails beyond this many standard deviations are treated as zero.
pub const SUPPORT_SIGMAS: f64 = 4.0;

/// Spectral model of one LED type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedBandSpec {
    pub name: String,
    /// Peak emission wavelength, nm.
    pub lambda_peak: f64,
    /// Half width at half maximum, nm.
    pub delta_lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forward_voltage: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_current_ma: Option<f64>,
    /// Measured emission curve `(nm, relative power)`; replaces the Gaussian when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measured: Option<Vec<(f64, f64)>>,
}

impl LedBandSpec {
    pub fn new(name: &str, lambda_peak: f64, delta_lambda: f64) -> Result<Self> {
        if !(lambda_peak > 0.0 && lambda_peak.is_finite()) || !(delta_lambda > 0.0 && delta_lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "LED {name}: peak {lambda_peak} and half width {delta_lambda} must be positive"
            )));
        }
        Ok(LedBandSpec {
            name: name.to_string(),
            lambda_peak,
            delta_lambda,
            forward_voltage: None,
            max_current_ma: None,
            measured: None,
        })
    }

    /// Gaussian standard deviation with HWHM equal to `delta_lambda`.
    pub fn sigma(&self) -> f64 {
        self.delta_lambda / (2.0 * std::f64::consts::LN_2).sqrt()
    }

    /// Unnormalized emission at `nm` (1 at the peak for the Gaussian model).
    pub fn emission(&self, nm: f64) -> f64 {
        if let Some(curve) = &self.measured {
            return interpolate_curve(curve, nm);
        }
        let d = nm - self.lambda_peak;
        if d.abs() > SUPPORT_SIGMAS * self.sigma() {
            return 0.0;
        }
        let s = self.sigma();
        (-(d * d) / (2.0 * s * s)).exp()
    }
}

fn interpolate_curve(curve: &[(f64, f64)], nm: f64) -> f64 {
    if curve.is_empty() || nm < curve[0].0 || nm > curve[curve.len() - 1].0 {
        return 0.0;
    }
    for w in curve.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if nm >= x0 && nm <= x1 {
            if x1 == x0 {
                return y0.max(0.0);
            }
            return (y0 + (y1 - y0) * (nm - x0) / (x1 - x0)).max(0.0);
        }
    }
    curve[0].1.max(0.0)
}

/// The eight LED types fitted to the prototype camera.
pub fn default_leds() -> Vec<LedBandSpec> {
    let table = [
        ("ultraviolet", 395.0, 10.0, 3.3, 60.0),
        ("blue", 466.0, 15.0, 2.9, 30.0),
        ("green", 520.0, 15.0, 2.9, 30.0),
        ("yellow-green", 573.0, 20.0, 2.4, 25.0),
        ("yellow", 585.0, 20.0, 2.4, 25.0),
        ("orange", 600.0, 20.0, 2.4, 25.0),
        ("red", 660.0, 17.0, 2.1, 100.0),
        ("infrared", 940.0, 40.0, 1.3, 200.0),
    ];
    table
        .iter()
        .map(|&(name, peak, hw, vf, imax)| LedBandSpec {
            name: name.to_string(),
            lambda_peak: peak,
            delta_lambda: hw,
            forward_voltage: Some(vf),
            max_current_ma: Some(imax),
            measured: None,
        })
        .collect()
}

/// Parses `name lambda_peak_nm delta_lambda_nm` lines; `#` starts a comment.
pub fn parse_led_table(text: &str, origin: &Path) -> Result<Vec<LedBandSpec>> {
    let mut leds = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(parse_err(format!("expected 3 fields, found {}", fields.len())));
        }
        let peak: f64 = fields[1].parse().map_err(|e| parse_err(format!("peak: {e}")))?;
        let hw: f64 = fields[2].parse().map_err(|e| parse_err(format!("half width: {e}")))?;
        leds.push(LedBandSpec::new(fields[0], peak, hw).map_err(|e| parse_err(e.to_string()))?);
    }
    if leds.is_empty() {
        return Err(Error::Parse {
            path: origin.to_path_buf(),
            line: 0,
            message: "no LEDs listed".into(),
        });
    }
    Ok(leds)
}

pub fn load_led_table(path: impl AsRef<Path>) -> Result<Vec<LedBandSpec>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_led_table(&text, path)
}

/// Normalized response of one LED sampled on `grid`.
pub fn led_response(spec: &LedBandSpec, grid: &[f64]) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(Error::Wavelengths("empty grid".into()));
    }
    let raw: Vec<f64> = grid.iter().map(|&nm| spec.emission(nm)).collect();
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "LED {} ({} nm) has no support on the {:.1}-{:.1} nm grid",
            spec.name,
            spec.lambda_peak,
            grid[0],
            grid[grid.len() - 1]
        )));
    }
    Ok(raw.into_iter().map(|v| v / total).collect())
}

/// Row-stochastic map from a fine wavelength grid onto LED bands.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    grid: Vec<f64>,
    peaks: Vec<f64>,
}

impl ProjectionMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn row(&self, r: usize) -> &[f64] {
        &self.weights[r * self.cols..(r + 1) * self.cols]
    }
    pub fn weight(&self, r: usize, c: usize) -> f64 {
        self.weights[r * self.cols + c]
    }
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }
    /// Output wavelengths, one per row.
    pub fn peaks(&self) -> &[f64] {
        &self.peaks
    }
}

fn sorted_by_peak(specs: &[LedBandSpec]) -> Vec<&LedBandSpec> {
    let mut sorted: Vec<&LedBandSpec> = specs.iter().collect();
    sorted.sort_by(|a, b| a.lambda_peak.total_cmp(&b.lambda_peak));
    sorted
}

/// Gaussian-weighted projection, rows ordered by ascending peak wavelength.
pub fn build_projection(specs: &[LedBandSpec], grid: &[f64]) -> Result<ProjectionMatrix> {
    if specs.is_empty() {
        return Err(Error::InvalidArgument("no LEDs".into()));
    }
    crate::hypercube::check_wavelengths(grid)?;
    let sorted = sorted_by_peak(specs);
    let mut weights = Vec::with_capacity(sorted.len() * grid.len());
    for spec in &sorted {
        weights.extend(led_response(spec, grid)?);
    }
    Ok(ProjectionMatrix {
        rows: sorted.len(),
        cols: grid.len(),
        weights,
        grid: grid.to_vec(),
        peaks: sorted.iter().map(|s| s.lambda_peak).collect(),
    })
}

/// Band-picking alternative: each row is one-hot at the grid point nearest the peak.
pub fn build_projection_nearest(specs: &[LedBandSpec], grid: &[f64]) -> Result<ProjectionMatrix> {
    if specs.is_empty() {
        return Err(Error::InvalidArgument("no LEDs".into()));
    }
    crate::hypercube::check_wavelengths(grid)?;
    let sorted = sorted_by_peak(specs);
    let mut weights = vec![0.0; sorted.len() * grid.len()];
    for (r, spec) in sorted.iter().enumerate() {
        // Same support rule as the Gaussian model.
        led_response(spec, grid)?;
        weights[r * grid.len() + nearest_index(grid, spec.lambda_peak)] = 1.0;
    }
    Ok(ProjectionMatrix {
        rows: sorted.len(),
        cols: grid.len(),
        weights,
        grid: grid.to_vec(),
        peaks: sorted.iter().map(|s| s.lambda_peak).collect(),
    })
}

/// `out(x, y, b) = Σ_i P[b, i] · gt(x, y, i)`; output wavelengths are the LED peaks.
pub fn project_cube(gt: &SpectralCube, p: &ProjectionMatrix) -> Result<SpectralCube> {
    if gt.bands() != p.cols {
        return Err(Error::DimensionMismatch(format!(
            "cube has {} bands, projection expects {}",
            gt.bands(),
            p.cols
        )));
    }
    let n = gt.plane_len();
    let mut acc = vec![0.0f64; n];
    let mut data = Vec::with_capacity(n * p.rows);
    for r in 0..p.rows {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for (i, &w) in p.row(r).iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (a, &v) in acc.iter_mut().zip(gt.band(i)) {
                *a += w * v as f64;
            }
        }
        if gt.is_raw() {
            data.extend(acc.iter().map(|&a| a as f32));
        } else {
            data.extend(acc.iter().map(|&a| (a as f32).clamp(0.0, 1.0)));
        }
    }
    if gt.is_raw() {
        SpectralCube::new_raw(gt.width(), gt.height(), p.peaks.clone(), data)
    } else {
        SpectralCube::new(gt.width(), gt.height(), p.peaks.clone(), data)
    }
}

/// Per-pixel spectral angle divided by π/2, so every entry lies in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularErrorMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl AngularErrorMap {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

/// Normalized angle between two spectra.
///
/// Evaluated as `2·atan2(|û − v̂|, |û + v̂|)`, which equals `arccos(cos θ)` but stays
/// accurate near 0 and π. Both zero gives 0; exactly one zero gives 1.
pub fn angle_between(a: &[f32], b: &[f32]) -> f64 {
    let na = a.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
    let nb = b.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
    match (na == 0.0, nb == 0.0) {
        (true, true) => return 0.0,
        (true, false) | (false, true) => return 1.0,
        _ => {}
    }
    let mut diff = 0.0f64;
    let mut sum = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let u = x as f64 / na;
        let v = y as f64 / nb;
        diff += (u - v) * (u - v);
        sum += (u + v) * (u + v);
    }
    let theta = 2.0 * diff.sqrt().atan2(sum.sqrt());
    (theta / std::f64::consts::FRAC_PI_2).clamp(0.0, 1.0)
}

pub fn spectral_angle(gt: &SpectralCube, pred: &SpectralCube) -> Result<AngularErrorMap> {
    gt.require_same_shape(pred, "spectral angle")?;
    let (w, h, bands) = gt.dims();
    let n = w * h;
    let mut a = vec![0.0f32; bands];
    let mut b = vec![0.0f32; bands];
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        for k in 0..bands {
            a[k] = gt.data()[k * n + i];
            b[k] = pred.data()[k * n + i];
        }
        values.push(angle_between(&a, &b));
    }
    Ok(AngularErrorMap {
        width: w,
        height: h,
        values,
    })
}

/// Mean, population standard deviation and count of one pixel class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassStat {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
    /// False when the class is empty and `mean`/`std` carry no information.
    pub defined: bool,
}

impl ClassStat {
    fn from_values(values: &[f64]) -> Self {
        if values.is_empty() {
            return ClassStat {
                mean: 0.0,
                std: 0.0,
                count: 0,
                defined: false,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        ClassStat {
            mean,
            std: var.sqrt(),
            count: values.len(),
            defined: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub root: ClassStat,
    pub soil: ClassStat,
}

/// Splits an error map by a segmentation mask whose valid (true) pixels are root.
pub fn class_stats(err: &AngularErrorMap, segmentation: &ValidityMask) -> Result<ClassStats> {
    if segmentation.width() != err.width || segmentation.height() != err.height {
        return Err(Error::DimensionMismatch(format!(
            "segmentation {}x{} vs error map {}x{}",
            segmentation.width(),
            segmentation.height(),
            err.width,
            err.height
        )));
    }
    let mut root = Vec::new();
    let mut soil = Vec::new();
    for y in 0..err.height {
        for x in 0..err.width {
            if segmentation.is_valid(x, y, 0) {
                root.push(err.get(x, y));
            } else {
                soil.push(err.get(x, y));
            }
        }
    }
    Ok(ClassStats {
        root: ClassStat::from_values(&root),
        soil: ClassStat::from_values(&soil),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypercube::{default_reference_grid, wavelength_grid};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn green_led_peaks_at_nearest_grid_point() {
        let grid = default_reference_grid();
        let green = &default_leds()[2];
        assert_eq!((green.lambda_peak, green.delta_lambda), (520.0, 15.0));
        let w = led_response(green, &grid).unwrap();
        let argmax = (0..w.len()).max_by(|&a, &b| w[a].total_cmp(&w[b]).then(b.cmp(&a))).unwrap();
        assert_eq!(argmax, nearest_index(&grid, 520.0));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_point_grid() {
        let led = LedBandSpec::new("x", 600.0, 20.0).unwrap();
        assert_eq!(led_response(&led, &[600.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn half_width_gives_half_maximum() {
        for led in default_leds() {
            let peak = led.emission(led.lambda_peak);
            for nm in [led.lambda_peak - led.delta_lambda, led.lambda_peak + led.delta_lambda] {
                assert!((led.emission(nm) / peak - 0.5).abs() < 1e-12, "{}", led.name);
            }
        }
    }

    #[test]
    fn full_table_projection() {
        let grid = default_reference_grid();
        let p = build_projection(&default_leds(), &grid).unwrap();
        assert_eq!((p.rows(), p.cols()), (8, 299));
        for r in 0..8 {
            assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(p.row(r).iter().all(|&w| w >= 0.0));
        }
        assert!(p.peaks().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn duplicate_leds_give_identical_rows() {
        let grid = default_reference_grid();
        let led = default_leds()[3].clone();
        let p = build_projection(&[led.clone(), led], &grid).unwrap();
        assert_eq!(p.row(0), p.row(1));
    }

    #[test]
    fn infrared_off_visible_grid_is_rejected() {
        let grid = wavelength_grid(400.0, 700.0, 151).unwrap();
        let ir = default_leds()[7].clone();
        assert!(led_response(&ir, &grid).is_err());
        assert!(build_projection(&[ir], &grid).is_err());
    }

    #[test]
    fn nearest_picker_is_one_hot() {
        let grid = default_reference_grid();
        let p = build_projection_nearest(&default_leds(), &grid).unwrap();
        for r in 0..8 {
            assert_eq!(p.row(r).iter().filter(|&&w| w == 1.0).count(), 1);
            assert_eq!(p.row(r).iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn led_table_parsing() {
        let text = "# name peak hw\nblue 466 15\nred 660 17 # comment\n";
        let leds = parse_led_table(text, Path::new("t")).unwrap();
        assert_eq!(leds.len(), 2);
        assert_eq!(leds[1].lambda_peak, 660.0);
        assert!(parse_led_table("blue 466\n", Path::new("t")).is_err());
        assert!(parse_led_table("blue 466 -1\n", Path::new("t")).is_err());
    }

    fn random_cube(rng: &mut ChaCha8Rng, w: usize, h: usize, grid: Vec<f64>) -> SpectralCube {
        let n = w * h * grid.len();
        SpectralCube::new(w, h, grid, (0..n).map(|_| rng.random::<f32>()).collect()).unwrap()
    }

    #[test]
    fn projection_of_constant_and_delta_spectra() {
        let grid = default_reference_grid();
        let p = build_projection(&default_leds(), &grid).unwrap();
        let c = SpectralCube::filled(2, 2, grid.clone(), 0.37).unwrap();
        let out = project_cube(&c, &p).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.37).abs() < 1e-6));
        assert_eq!(out.wavelengths(), p.peaks());

        let k = 150;
        let mut data = vec![0.0f32; 299];
        data[k] = 1.0;
        let delta = SpectralCube::new(1, 1, grid, data).unwrap();
        let out = project_cube(&delta, &p).unwrap();
        for b in 0..8 {
            assert!((out.get(0, 0, b) as f64 - p.weight(b, k)).abs() < 1e-7);
        }
    }

    #[test]
    fn projection_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let grid = default_reference_grid();
        let p = build_projection(&default_leds(), &grid).unwrap();
        let cube = random_cube(&mut rng, 4, 4, grid);
        let out = project_cube(&cube, &p).unwrap();
        for b in 0..8 {
            for y in 0..4 {
                for x in 0..4 {
                    let mut s = 0.0f64;
                    for i in 0..299 {
                        s += p.weight(b, i) * cube.get(x, y, i) as f64;
                    }
                    assert!((out.get(x, y, b) as f64 - s).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn projection_shape_mismatch() {
        let p = build_projection(&default_leds(), &default_reference_grid()).unwrap();
        let c = SpectralCube::filled(2, 2, vec![500.0, 600.0], 0.1).unwrap();
        assert!(matches!(project_cube(&c, &p), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn spectral_angle_fixtures() {
        let gt = [0.2f32, 0.4, 0.1, 0.3];
        assert_eq!(angle_between(&gt, &gt), 0.0);
        let doubled: Vec<f32> = gt.iter().map(|v| v * 2.0).collect();
        assert_eq!(angle_between(&gt, &doubled), 0.0);
        assert!((angle_between(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]) - 1.0).abs() < 1e-12);
        assert_eq!(angle_between(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert_eq!(angle_between(&[0.0, 0.0], &[0.0, 0.5]), 1.0);
        // 45 degrees: normalized 0.5.
        assert!((angle_between(&[1.0, 0.0], &[1.0, 1.0]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn spectral_angle_map() {
        let gt = SpectralCube::new(2, 1, vec![500.0, 600.0], vec![1.0, 0.2, 0.0, 0.4]).unwrap();
        let pred = SpectralCube::new(2, 1, vec![500.0, 600.0], vec![0.0, 0.1, 1.0, 0.2]).unwrap();
        let m = spectral_angle(&gt, &pred).unwrap();
        assert!((m.values[0] - 1.0).abs() < 1e-12);
        assert!(m.values[1].abs() < 1e-12);
    }

    #[test]
    fn class_stats_fixtures() {
        let err = AngularErrorMap {
            width: 2,
            height: 2,
            values: vec![0.1, 0.1, 0.3, 0.3],
        };
        let seg = ValidityMask::new(2, 2, 1, vec![true, true, false, false]).unwrap();
        let s = class_stats(&err, &seg).unwrap();
        assert_eq!((s.root.mean, s.soil.mean), (0.1, 0.3));
        assert_eq!((s.root.count, s.soil.count), (2, 2));

        let flat = AngularErrorMap {
            width: 2,
            height: 2,
            values: vec![0.2; 4],
        };
        let s = class_stats(&flat, &seg).unwrap();
        assert!((s.root.mean - 0.2).abs() < 1e-15 && s.root.std == 0.0 && s.soil.std == 0.0);

        let all_root = ValidityMask::all_valid(2, 2, 1);
        let s = class_stats(&flat, &all_root).unwrap();
        assert_eq!(s.soil.count, 0);
        assert!(!s.soil.defined && s.root.defined);
    }

    proptest! {
        #[test]
        fn angle_symmetric_bounded_scale_invariant(
            a in proptest::collection::vec(0.0f32..1.0, 6),
            b in proptest::collection::vec(0.0f32..1.0, 6),
            s in 0.1f32..10.0,
        ) {
            let e = angle_between(&a, &b);
            prop_assert!((0.0..=1.0).contains(&e));
            prop_assert!((e - angle_between(&b, &a)).abs() < 1e-12);
            let scaled: Vec<f32> = b.iter().map(|v| v * s).collect();
            prop_assert!((e - angle_between(&a, &scaled)).abs() < 1e-6);
        }

        #[test]
        fn projection_commutes_with_scaling(seed in 0u64..1000, c in 0.0f32..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let grid = wavelength_grid(400.0, 1000.0, 61).unwrap();
            let p = build_projection(&default_leds(), &grid).unwrap();
            let cube = random_cube(&mut rng, 2, 2, grid);
            let scaled = cube.with_data(cube.data().iter().map(|v| v * c).collect()).unwrap();
            let a = project_cube(&scaled, &p).unwrap();
            let b = project_cube(&cube, &p).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!((x - y * c).abs() < 1e-6);
            }
        }
    }
}
