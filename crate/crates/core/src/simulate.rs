//! Forward model of the LED camera and a synthetic dataset factory.
//!
//! Scenes are reflectance cubes of textured soil crossed by random-walk root
//! strokes. A capture projects a scene onto the LED bands and then applies
//! vignetting, lens distortion, saturated LED spots and sensor noise, in that order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::calibration::{distort, flat_field_correct, half_diagonal, DistortionModel, FlatFieldRef};
use crate::hypercube::{default_reference_grid, wavelength_grid, SpectralCube, ValidityMask};
use crate::registration::area_downscale;
use crate::spectral::{build_projection, build_projection_nearest, default_leds, project_cube, LedBandSpec};
use crate::{Error, Result};

/// Soil reflectance: a Gaussian over wavelength scaled by a smooth brightness texture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoilModel {
    pub center_nm: f64,
    pub width_nm: f64,
    pub amplitude: f64,
    /// Peak-to-peak relative brightness variation of the texture.
    pub texture: f64,
    /// Texture lattice spacing in pixels.
    pub texture_cell: f64,
    /// Per-pixel relative brightness grain.
    pub grain: f64,
    /// Standard deviation of independent per-entry noise.
    pub jitter: f64,
}

impl Default for SoilModel {
    fn default() -> Self {
        SoilModel {
            center_nm: 640.0,
            width_nm: 160.0,
            amplitude: 0.35,
            texture: 0.6,
            texture_cell: 8.0,
            grain: 0.15,
            jitter: 0.003,
        }
    }
}

/// Root reflectance: a broad Gaussian plus a sigmoid red edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootModel {
    pub center_nm: f64,
    pub width_nm: f64,
    pub amplitude: f64,
    pub edge_nm: f64,
    pub edge_height: f64,
    pub edge_width_nm: f64,
    /// Relative brightness variation between pixels.
    pub brightness: f64,
}

impl Default for RootModel {
    fn default() -> Self {
        RootModel {
            center_nm: 580.0,
            width_nm: 250.0,
            amplitude: 0.4,
            edge_nm: 700.0,
            edge_height: 0.25,
            edge_width_nm: 15.0,
            brightness: 0.2,
        }
    }
}

impl RootModel {
    pub fn reflectance(&self, nm: f64) -> f64 {
        let d = (nm - self.center_nm) / self.width_nm;
        self.amplitude * (-0.5 * d * d).exp()
            + self.edge_height / (1.0 + (-(nm - self.edge_nm) / self.edge_width_nm).exp())
    }
}

impl SoilModel {
    pub fn reflectance(&self, nm: f64) -> f64 {
        let d = (nm - self.center_nm) / self.width_nm;
        self.amplitude * (-0.5 * d * d).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub wavelengths: Vec<f64>,
    pub soil: SoilModel,
    pub root: RootModel,
    pub strokes: usize,
    /// Stroke diameter in pixels.
    pub stroke_width: f64,
    /// Random-walk steps per stroke (one pixel each).
    pub stroke_length: usize,
    pub seed: u64,
}

impl SceneSpec {
    pub fn new(width: usize, height: usize, seed: u64) -> Self {
        SceneSpec {
            width,
            height,
            wavelengths: default_reference_grid(),
            soil: SoilModel::default(),
            root: RootModel::default(),
            strokes: 3,
            stroke_width: 4.0,
            stroke_length: (width.max(height) * 3) / 2,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub cube: SpectralCube,
    /// Spatial mask, true on root pixels.
    pub roots: ValidityMask,
}

/// Smooth value noise in [0, 1]: random lattice values, bilinearly interpolated.
fn value_noise(rng: &mut ChaCha8Rng, width: usize, height: usize, cell: f64) -> Vec<f64> {
    let gw = (width as f64 / cell).ceil() as usize + 2;
    let gh = (height as f64 / cell).ceil() as usize + 2;
    let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.random::<f64>()).collect();
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        let fy = y as f64 / cell;
        let (y0, ty) = (fy.floor() as usize, fy.fract());
        for x in 0..width {
            let fx = x as f64 / cell;
            let (x0, tx) = (fx.floor() as usize, fx.fract());
            let l = |i: usize, j: usize| lattice[j * gw + i];
            let top = l(x0, y0) * (1.0 - tx) + l(x0 + 1, y0) * tx;
            let bottom = l(x0, y0 + 1) * (1.0 - tx) + l(x0 + 1, y0 + 1) * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}

fn paint_strokes(rng: &mut ChaCha8Rng, spec: &SceneSpec) -> Vec<bool> {
    let (w, h) = (spec.width, spec.height);
    let mut roots = vec![false; w * h];
    let radius = spec.stroke_width / 2.0;
    let turn = Normal::new(0.0, 0.25).expect("valid sigma");
    for _ in 0..spec.strokes {
        let mut x = rng.random::<f64>() * w as f64;
        let mut y = rng.random::<f64>() * h as f64;
        let mut angle = rng.random::<f64>() * std::f64::consts::TAU;
        for _ in 0..spec.stroke_length {
            let (x0, x1) = ((x - radius).floor().max(0.0) as usize, ((x + radius).ceil().max(0.0) as usize).min(w));
            let (y0, y1) = ((y - radius).floor().max(0.0) as usize, ((y + radius).ceil().max(0.0) as usize).min(h));
            for py in y0..y1 {
                for px in x0..x1 {
                    let (dx, dy) = (px as f64 + 0.5 - x, py as f64 + 0.5 - y);
                    if dx * dx + dy * dy <= radius * radius {
                        roots[py * w + px] = true;
                    }
                }
            }
            angle += turn.sample(rng);
            x += angle.cos();
            y += angle.sin();
        }
    }
    roots
}

/// Renders a reflectance scene and its root segmentation; deterministic per seed.
pub fn gen_scene(spec: &SceneSpec) -> Result<Scene> {
    if spec.width == 0 || spec.height == 0 {
        return Err(Error::InvalidArgument("scene must have positive size".into()));
    }
    if !(spec.soil.texture_cell > 0.0) || !(spec.stroke_width >= 0.0) {
        return Err(Error::InvalidArgument("texture cell and stroke width must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h) = (spec.width, spec.height);
    let n = w * h;
    let texture = value_noise(&mut rng, w, h, spec.soil.texture_cell);
    let roots = paint_strokes(&mut rng, spec);
    let brightness: Vec<f64> = (0..n)
        .map(|i| {
            let grain = 1.0 + spec.soil.grain * (rng.random::<f64>() - 0.5) * 2.0;
            if roots[i] {
                1.0 + spec.root.brightness * (texture[i] - 0.5) * grain
            } else {
                (1.0 + spec.soil.texture * (texture[i] - 0.5)) * grain
            }
        })
        .collect();
    let jitter = Normal::new(0.0, spec.soil.jitter.max(0.0)).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut data = Vec::with_capacity(n * spec.wavelengths.len());
    for &nm in &spec.wavelengths {
        let (soil, root) = (spec.soil.reflectance(nm), spec.root.reflectance(nm));
        for i in 0..n {
            let base = if roots[i] { root } else { soil };
            let noise = if spec.soil.jitter > 0.0 { jitter.sample(&mut rng) } else { 0.0 };
            data.push((base * brightness[i] + noise).clamp(0.0, 1.0) as f32);
        }
    }
    Ok(Scene {
        cube: SpectralCube::new(w, h, spec.wavelengths.clone(), data)?,
        roots: ValidityMask::new(w, h, 1, roots)?,
    })
}

/// Specular LED reflection pasted into one band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spot {
    pub band: usize,
    pub x: f64,
    pub y: f64,
    /// Saturated core radius in pixels.
    pub radius: f64,
    /// Added brightness at the inner edge of the halo, which extends to 1.5 × radius.
    pub intensity: f32,
}

/// How LED bands are formed from a fine spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionKind {
    /// Emission-weighted average over the LED's Gaussian support.
    #[default]
    Gaussian,
    /// Single grid band nearest each LED peak.
    Nearest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureSpec {
    pub leds: Vec<LedBandSpec>,
    #[serde(default)]
    pub projection: ProjectionKind,
    /// 0 disables; 1 applies the full cos⁴ falloff.
    pub vignette: f64,
    pub distortion: Option<DistortionModel>,
    pub spots: Vec<Spot>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl CaptureSpec {
    /// Projection only.
    pub fn clean(leds: Vec<LedBandSpec>) -> Self {
        CaptureSpec {
            leds,
            projection: ProjectionKind::Gaussian,
            vignette: 0.0,
            distortion: None,
            spots: Vec::new(),
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

/// Multiplies each pixel by `(1 − s) + s·cos⁴θ`, θ the field angle for a focal
/// length equal to the half diagonal.
pub fn apply_vignette(cube: &SpectralCube, strength: f64) -> Result<SpectralCube> {
    if !(0.0..=1.0).contains(&strength) {
        return Err(Error::InvalidArgument(format!("vignette strength {strength} not in [0, 1]")));
    }
    let gain = vignette_gain(cube.width(), cube.height(), strength);
    let n = cube.plane_len();
    let data = cube
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| (v as f64 * gain[i % n]) as f32)
        .collect();
    cube.with_data(data)
}

fn vignette_gain(width: usize, height: usize, strength: f64) -> Vec<f64> {
    let f = half_diagonal(width, height);
    let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
    (0..width * height)
        .map(|i| {
            let (dx, dy) = ((i % width) as f64 - cx, (i / width) as f64 - cy);
            let t2 = (dx * dx + dy * dy) / (f * f);
            let cos4 = 1.0 / ((1.0 + t2) * (1.0 + t2));
            (1.0 - strength) + strength * cos4
        })
        .collect()
}

/// Forward lens distortion; pixels mapped from outside the ideal frame are 0 and invalid.
pub fn apply_distortion(cube: &SpectralCube, model: &DistortionModel) -> Result<(SpectralCube, ValidityMask)> {
    distort(cube, model)
}

/// Saturates every pixel within `radius` of a spot center and brightens a halo around it.
pub fn add_led_spots(cube: &SpectralCube, spots: &[Spot]) -> Result<SpectralCube> {
    let (w, h) = (cube.width(), cube.height());
    let mut data = cube.data().to_vec();
    for s in spots {
        if s.band >= cube.bands() {
            return Err(Error::IndexOutOfRange {
                index: s.band,
                limit: cube.bands(),
            });
        }
        let outer = 1.5 * s.radius;
        let base = s.band * w * h;
        let (x0, x1) = ((s.x - outer).floor().max(0.0) as usize, ((s.x + outer).ceil().max(0.0) as usize + 1).min(w));
        let (y0, y1) = ((s.y - outer).floor().max(0.0) as usize, ((s.y + outer).ceil().max(0.0) as usize + 1).min(h));
        for y in y0..y1 {
            for x in x0..x1 {
                let d = ((x as f64 - s.x).powi(2) + (y as f64 - s.y).powi(2)).sqrt();
                let v = &mut data[base + y * w + x];
                if d <= s.radius {
                    *v = 1.0;
                } else if d < outer {
                    let fall = 1.0 - (d - s.radius) / (outer - s.radius);
                    *v = (*v + s.intensity * fall as f32).min(1.0);
                }
            }
        }
    }
    cube.with_data(data)
}

/// Adds clipped zero-mean Gaussian noise.
pub fn add_noise<R: Rng + ?Sized>(cube: &SpectralCube, sigma: f64, rng: &mut R) -> Result<SpectralCube> {
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(format!("noise sigma: {e}")))?;
    let data = cube
        .data()
        .iter()
        .map(|&v| (v as f64 + normal.sample(rng)).clamp(0.0, 1.0) as f32)
        .collect();
    cube.with_data(data)
}

/// Random spots, `per_band` in every band, radii uniform in `radius`.
pub fn random_spots<R: Rng + ?Sized>(
    rng: &mut R,
    width: usize,
    height: usize,
    bands: usize,
    per_band: usize,
    radius: (f64, f64),
) -> Vec<Spot> {
    let mut spots = Vec::with_capacity(bands * per_band);
    for band in 0..bands {
        for _ in 0..per_band {
            spots.push(Spot {
                band,
                x: rng.random::<f64>() * (width as f64 - 1.0),
                y: rng.random::<f64>() * (height as f64 - 1.0),
                radius: radius.0 + rng.random::<f64>() * (radius.1 - radius.0),
                intensity: 0.5,
            });
        }
    }
    spots
}

/// Simulated 8-band capture of a reflectance cube, with the validity mask left by distortion.
pub fn capture_with_mask(gt: &SpectralCube, cap: &CaptureSpec) -> Result<(SpectralCube, ValidityMask)> {
    let p = match cap.projection {
        ProjectionKind::Gaussian => build_projection(&cap.leds, gt.wavelengths())?,
        ProjectionKind::Nearest => build_projection_nearest(&cap.leds, gt.wavelengths())?,
    };
    let mut cube = project_cube(gt, &p)?;
    if cap.vignette != 0.0 {
        cube = apply_vignette(&cube, cap.vignette)?;
    }
    let mut mask = ValidityMask::all_valid(cube.width(), cube.height(), cube.bands());
    if let Some(model) = &cap.distortion {
        let (c, m) = apply_distortion(&cube, model)?;
        cube = c;
        mask = m;
    }
    if !cap.spots.is_empty() {
        cube = add_led_spots(&cube, &cap.spots)?;
    }
    if cap.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cap.seed);
        cube = add_noise(&cube, cap.noise_sigma, &mut rng)?;
    }
    Ok((cube, mask))
}

pub fn capture(gt: &SpectralCube, cap: &CaptureSpec) -> Result<SpectralCube> {
    capture_with_mask(gt, cap).map(|(c, _)| c)
}

/// Placement of our-camera frame inside the reference frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairSpec {
    /// `(row, col)` in reference pixels.
    pub offset: (usize, usize),
    /// Integer ratio between our pixel density and the reference's.
    pub factor: usize,
    /// Frame size in our-camera pixels.
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPair {
    pub ours: SpectralCube,
    pub reference: SpectralCube,
    pub truth: PairSpec,
}

/// Reference = area-downscaled `gt_hi`; ours = capture of the `gt_hi` crop at
/// the planted offset.
pub fn make_pair(gt_hi: &SpectralCube, cap: &CaptureSpec, spec: PairSpec) -> Result<SimulatedPair> {
    if spec.factor == 0 {
        return Err(Error::InvalidArgument("factor must be positive".into()));
    }
    let (x0, y0) = (spec.offset.1 * spec.factor, spec.offset.0 * spec.factor);
    if x0 + spec.width > gt_hi.width() || y0 + spec.height > gt_hi.height() {
        return Err(Error::InvalidArgument(format!(
            "offset {:?} with a {}×{} frame leaves the {}×{} scene",
            spec.offset,
            spec.width,
            spec.height,
            gt_hi.width(),
            gt_hi.height()
        )));
    }
    let crop = gt_hi.crop(x0, y0, spec.width, spec.height)?;
    Ok(SimulatedPair {
        ours: capture(&crop, cap)?,
        reference: area_downscale(gt_hi, spec.factor as f64)?,
        truth: spec,
    })
}

/// Linear interpolation of every pixel spectrum onto `grid` (constant beyond the ends).
pub fn resample_wavelengths(cube: &SpectralCube, grid: &[f64]) -> Result<SpectralCube> {
    crate::hypercube::check_wavelengths(grid)?;
    let src = cube.wavelengths();
    let n = cube.plane_len();
    let mut data = Vec::with_capacity(n * grid.len());
    for &nm in grid {
        let hi = src.partition_point(|&s| s < nm);
        if hi == 0 {
            data.extend_from_slice(cube.band(0));
        } else if hi == src.len() {
            data.extend_from_slice(cube.band(src.len() - 1));
        } else {
            let lo = hi - 1;
            let t = (nm - src[lo]) / (src[hi] - src[lo]);
            let (a, b) = (cube.band(lo), cube.band(hi));
            data.extend(a.iter().zip(b).map(|(&a, &b)| (a as f64 + t * (b as f64 - a as f64)) as f32));
        }
    }
    if cube.is_raw() {
        SpectralCube::new_raw(cube.width(), cube.height(), grid.to_vec(), data)
    } else {
        SpectralCube::new(cube.width(), cube.height(), grid.to_vec(), data)
    }
}

/// Settings of the synthetic training-pair factory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Side of the square our-camera input.
    pub input_size: usize,
    /// Input pixels per ground-truth pixel.
    pub factor: usize,
    pub gt_bands: usize,
    pub gt_start_nm: f64,
    pub gt_end_nm: f64,
    pub leds: Vec<LedBandSpec>,
    pub strokes: (usize, usize),
    pub stroke_width: f64,
    pub vignette: f64,
    pub spots_per_band: usize,
    pub spot_radius: (f64, f64),
    pub noise_sigma: f64,
}

impl SynthConfig {
    /// 64×64×8 inputs paired with 16×16×32 ground truth over 400–1000 nm.
    pub fn tiny() -> Self {
        SynthConfig {
            input_size: 64,
            factor: 4,
            gt_bands: 32,
            gt_start_nm: 400.0,
            gt_end_nm: 1000.0,
            leds: default_leds(),
            strokes: (1, 4),
            stroke_width: 6.0,
            vignette: 0.3,
            spots_per_band: 1,
            spot_radius: (1.5, 3.0),
            noise_sigma: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.factor == 0 || self.input_size % self.factor != 0 {
            return Err(Error::InvalidArgument(format!(
                "input size {} must be a positive multiple of factor {}",
                self.input_size, self.factor
            )));
        }
        if self.strokes.0 > self.strokes.1 || self.spot_radius.0 > self.spot_radius.1 {
            return Err(Error::InvalidArgument("stroke and spot ranges must be ordered".into()));
        }
        Ok(())
    }
}

/// One synthetic training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    /// Flat-field-corrected LED capture, spots included.
    pub input: SpectralCube,
    pub gt: SpectralCube,
    /// Root segmentation at ground-truth resolution.
    pub roots: ValidityMask,
}

/// Builds a pair from one seed: scene → capture with vignette, spots and noise →
/// flat-field against a clean white capture; ground truth is the scene
/// downscaled by `factor` and resampled onto the ground-truth grid.
pub fn synth_sample(cfg: &SynthConfig, seed: u64) -> Result<SynthSample> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = cfg.input_size;
    let mut scene_spec = SceneSpec::new(size, size, rng.random());
    scene_spec.strokes = rng.random_range(cfg.strokes.0..=cfg.strokes.1);
    scene_spec.stroke_width = cfg.stroke_width;
    let scene = gen_scene(&scene_spec)?;

    let spots = random_spots(&mut rng, size, size, cfg.leds.len(), cfg.spots_per_band, cfg.spot_radius);
    let cap = CaptureSpec {
        leds: cfg.leds.clone(),
        projection: ProjectionKind::Gaussian,
        vignette: cfg.vignette,
        distortion: None,
        spots,
        noise_sigma: cfg.noise_sigma,
        seed: rng.random(),
    };
    let raw = capture(&scene.cube, &cap)?;
    let white_scene = SpectralCube::filled(size, size, scene.cube.wavelengths().to_vec(), 1.0)?;
    let white = capture(&white_scene, &CaptureSpec { vignette: cfg.vignette, ..CaptureSpec::clean(cfg.leds.clone()) })?;
    let (input, _) = flat_field_correct(&raw, &FlatFieldRef::new(white))?;

    let grid = wavelength_grid(cfg.gt_start_nm, cfg.gt_end_nm, cfg.gt_bands)?;
    let small = area_downscale(&scene.cube, cfg.factor as f64)?;
    let gt = resample_wavelengths(&small, &grid)?;

    let root_cover = SpectralCube::new(
        size,
        size,
        vec![500.0],
        scene.roots.bits().iter().map(|&r| if r { 1.0 } else { 0.0 }).collect(),
    )?;
    let cover = area_downscale(&root_cover, cfg.factor as f64)?;
    let roots = ValidityMask::new(cover.width(), cover.height(), 1, cover.data().iter().map(|&c| c >= 0.5).collect())?;
    Ok(SynthSample { input, gt, roots })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypercube::wavelength_grid;

    #[test]
    fn zero_strokes_give_all_soil() {
        let mut spec = SceneSpec::new(24, 20, 1);
        spec.strokes = 0;
        assert_eq!(gen_scene(&spec).unwrap().roots.count_valid(), 0);
    }

    #[test]
    fn scene_is_deterministic() {
        let spec = SceneSpec::new(16, 16, 42);
        assert_eq!(gen_scene(&spec).unwrap(), gen_scene(&spec).unwrap());
        let other = SceneSpec::new(16, 16, 43);
        assert_ne!(gen_scene(&spec).unwrap().cube, gen_scene(&other).unwrap().cube);
    }

    #[test]
    fn clean_capture_is_projection() {
        let scene = gen_scene(&SceneSpec::new(12, 10, 3)).unwrap();
        let cap = CaptureSpec::clean(default_leds());
        let p = build_projection(&cap.leds, scene.cube.wavelengths()).unwrap();
        assert_eq!(capture(&scene.cube, &cap).unwrap(), project_cube(&scene.cube, &p).unwrap());
    }

    #[test]
    fn spot_core_saturates() {
        let c = SpectralCube::filled(20, 20, vec![500.0, 600.0], 0.2).unwrap();
        let s = Spot {
            band: 1,
            x: 9.0,
            y: 7.0,
            radius: 3.0,
            intensity: 0.5,
        };
        let out = add_led_spots(&c, &[s]).unwrap();
        for y in 0..20 {
            for x in 0..20 {
                let d = ((x as f64 - 9.0).powi(2) + (y as f64 - 7.0).powi(2)).sqrt();
                if d <= 3.0 {
                    assert_eq!(out.get(x, y, 1), 1.0);
                }
                assert_eq!(out.get(x, y, 0), 0.2);
            }
        }
        assert!(add_led_spots(&c, &[Spot { band: 2, ..s }]).is_err());
    }

    #[test]
    fn vignette_darkens_corners_only() {
        let c = SpectralCube::filled(11, 11, vec![500.0], 0.8).unwrap();
        let v = apply_vignette(&c, 1.0).unwrap();
        assert_eq!(v.get(5, 5, 0), 0.8);
        assert!(v.get(0, 0, 0) < 0.8 * 0.3);
        assert_eq!(apply_vignette(&c, 0.0).unwrap(), c);
    }

    #[test]
    fn wavelength_resampling_is_linear() {
        let c = SpectralCube::new(1, 1, vec![400.0, 500.0, 600.0], vec![0.0, 0.5, 0.7]).unwrap();
        let r = resample_wavelengths(&c, &[350.0, 450.0, 550.0, 700.0]).unwrap();
        let v: Vec<f32> = (0..4).map(|b| r.get(0, 0, b)).collect();
        assert!((v[0] - 0.0).abs() < 1e-7 && (v[1] - 0.25).abs() < 1e-7);
        assert!((v[2] - 0.6).abs() < 1e-7 && (v[3] - 0.7).abs() < 1e-7);
    }

    #[test]
    fn make_pair_rejects_out_of_bounds() {
        let scene = gen_scene(&SceneSpec {
            wavelengths: wavelength_grid(400.0, 1000.0, 61).unwrap(),
            ..SceneSpec::new(32, 32, 9)
        })
        .unwrap();
        let cap = CaptureSpec::clean(default_leds());
        let spec = PairSpec {
            offset: (5, 2),
            factor: 2,
            width: 24,
            height: 24,
        };
        assert!(make_pair(&scene.cube, &cap, spec).is_err());
        let ok = make_pair(&scene.cube, &cap, PairSpec { offset: (2, 3), ..spec }).unwrap();
        assert_eq!((ok.ours.width(), ok.reference.width()), (24, 16));
    }

    #[test]
    fn synth_sample_shapes() {
        let cfg = SynthConfig::tiny();
        let s = synth_sample(&cfg, 7).unwrap();
        assert_eq!(s.input.dims(), (64, 64, 8));
        assert_eq!(s.gt.dims(), (16, 16, 32));
        assert_eq!((s.roots.width(), s.roots.height()), (16, 16));
        assert_eq!(synth_sample(&cfg, 7).unwrap(), s);
    }
}
