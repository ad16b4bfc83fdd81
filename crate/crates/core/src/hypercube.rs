//! Spectral cube container, validity masks and the `.hsc` on-disk format.
//!
//! A cube is stored planar and band-major: the value of band `b` at column `x`,
//! row `y` lives at `b * height * width + y * width + x`. On disk the payload is
//! exactly that buffer as little-endian `f32`, next to a `<name>.hsc.json` header.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Number of bands in the reference hyperspectral camera grid.
pub const REFERENCE_BANDS: usize = 299;
pub const REFERENCE_START_NM: f64 = 400.0;
pub const REFERENCE_END_NM: f64 = 1000.0;

/// Evenly spaced grid from `start_nm` to `end_nm` inclusive.
pub fn wavelength_grid(start_nm: f64, end_nm: f64, count: usize) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(Error::Wavelengths("grid needs at least one point".into()));
    }
    if count == 1 {
        return Ok(vec![start_nm]);
    }
    if !(end_nm > start_nm) || start_nm <= 0.0 || !end_nm.is_finite() {
        return Err(Error::Wavelengths(format!(
            "invalid grid bounds {start_nm}..{end_nm}"
        )));
    }
    let step = (end_nm - start_nm) / (count - 1) as f64;
    let mut grid: Vec<f64> = (0..count).map(|i| start_nm + step * i as f64).collect();
    grid[count - 1] = end_nm;
    Ok(grid)
}

/// The 299-band, 400–1000 nm grid assumed for reference data unless a header says otherwise.
pub fn default_reference_grid() -> Vec<f64> {
    wavelength_grid(REFERENCE_START_NM, REFERENCE_END_NM, REFERENCE_BANDS)
        .expect("constant grid parameters are valid")
}

pub(crate) fn check_wavelengths(wavelengths: &[f64]) -> Result<()> {
    if wavelengths.is_empty() {
        return Err(Error::Wavelengths("empty wavelength list".into()));
    }
    for (i, &w) in wavelengths.iter().enumerate() {
        if !w.is_finite() || w <= 0.0 {
            return Err(Error::Wavelengths(format!("entry {i} = {w} is not a positive finite value")));
        }
        if i > 0 && w <= wavelengths[i - 1] {
            return Err(Error::Wavelengths(format!(
                "not strictly increasing at entry {i} ({} then {w})",
                wavelengths[i - 1]
            )));
        }
    }
    Ok(())
}

/// A single 2-D image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "plane {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Plane { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Plane {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len().max(1) as f64
    }
}

/// H×W×B reflectance volume with its wavelength grid.
///
/// Immutable once built: constructors validate every invariant, and the only
/// mutation paths go back through validation.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCube {
    width: usize,
    height: usize,
    wavelengths: Vec<f64>,
    data: Vec<f32>,
    raw: bool,
}

impl SpectralCube {
    /// Builds a normalized cube; every value must be finite and in `[0, 1]`.
    pub fn new(width: usize, height: usize, wavelengths: Vec<f64>, data: Vec<f32>) -> Result<Self> {
        Self::build(width, height, wavelengths, data, false)
    }

    /// Builds a cube whose values only have to be finite.
    pub fn new_raw(width: usize, height: usize, wavelengths: Vec<f64>, data: Vec<f32>) -> Result<Self> {
        Self::build(width, height, wavelengths, data, true)
    }

    fn build(width: usize, height: usize, wavelengths: Vec<f64>, data: Vec<f32>, raw: bool) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::DimensionMismatch(format!("empty cube {width}x{height}")));
        }
        check_wavelengths(&wavelengths)?;
        let expected = width * height * wavelengths.len();
        if data.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "cube {width}x{height}x{} needs {expected} values, got {}",
                wavelengths.len(),
                data.len()
            )));
        }
        check_values(&data, raw)?;
        Ok(SpectralCube {
            width,
            height,
            wavelengths,
            data,
            raw,
        })
    }

    pub fn filled(width: usize, height: usize, wavelengths: Vec<f64>, value: f32) -> Result<Self> {
        let n = width * height * wavelengths.len();
        Self::new(width, height, wavelengths, vec![value; n])
    }

    /// Reassembles a cube from one plane per band.
    pub fn from_planes(planes: &[Plane], wavelengths: Vec<f64>) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::DimensionMismatch("no planes".into()))?;
        if planes.len() != wavelengths.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} planes for {} wavelengths",
                planes.len(),
                wavelengths.len()
            )));
        }
        let mut data = Vec::with_capacity(first.width * first.height * planes.len());
        for p in planes {
            if p.width != first.width || p.height != first.height {
                return Err(Error::DimensionMismatch("planes differ in size".into()));
            }
            data.extend_from_slice(&p.data);
        }
        Self::new(first.width, first.height, wavelengths, data)
    }

    /// Same geometry and grid, new values.
    pub fn with_data(&self, data: Vec<f32>) -> Result<Self> {
        Self::build(self.width, self.height, self.wavelengths.clone(), data, self.raw)
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn bands(&self) -> usize {
        self.wavelengths.len()
    }
    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
    pub fn is_raw(&self) -> bool {
        self.raw
    }
    pub fn plane_len(&self) -> usize {
        self.width * self.height
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.bands())
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, b: usize) -> usize {
        b * self.width * self.height + y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, b: usize) -> f32 {
        self.data[self.index(x, y, b)]
    }

    /// Borrowed view of band `b`, row-major.
    pub fn band(&self, b: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[b * n..(b + 1) * n]
    }

    /// Copy of band `b` as a standalone image.
    pub fn band_slice(&self, b: usize) -> Result<Plane> {
        if b >= self.bands() {
            return Err(Error::IndexOutOfRange {
                index: b,
                limit: self.bands(),
            });
        }
        Ok(Plane {
            width: self.width,
            height: self.height,
            data: self.band(b).to_vec(),
        })
    }

    pub fn pixel_spectrum(&self, x: usize, y: usize) -> Vec<f32> {
        (0..self.bands()).map(|b| self.get(x, y, b)).collect()
    }

    pub fn band_means(&self) -> Vec<f64> {
        (0..self.bands())
            .map(|b| self.band(b).iter().map(|&v| v as f64).sum::<f64>() / self.plane_len() as f64)
            .collect()
    }

    /// Band index whose wavelength is closest to `nm` (lowest index on ties).
    pub fn nearest_band(&self, nm: f64) -> usize {
        nearest_index(&self.wavelengths, nm)
    }

    pub fn same_shape(&self, other: &SpectralCube) -> bool {
        self.dims() == other.dims()
    }

    pub(crate) fn require_same_shape(&self, other: &SpectralCube, what: &str) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::DimensionMismatch(format!(
                "{what}: {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }

    /// Spatial sub-rectangle with all bands.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 || x0 + width > self.width || y0 + height > self.height {
            return Err(Error::DimensionMismatch(format!(
                "crop ({x0},{y0}) {width}x{height} outside {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(width * height * self.bands());
        for b in 0..self.bands() {
            let band = self.band(b);
            for y in y0..y0 + height {
                data.extend_from_slice(&band[y * self.width + x0..y * self.width + x0 + width]);
            }
        }
        Self::build(width, height, self.wavelengths.clone(), data, self.raw)
    }

    /// Bilinear spatial resize with half-pixel centers; constants stay constant.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("resize to an empty image".into()));
        }
        let xs = resize_taps(self.width, width);
        let ys = resize_taps(self.height, height);
        let mut data = Vec::with_capacity(width * height * self.bands());
        for b in 0..self.bands() {
            let band = self.band(b);
            for &(y0, y1, fy) in &ys {
                for &(x0, x1, fx) in &xs {
                    let top = band[y0 * self.width + x0] as f64 * (1.0 - fx) + band[y0 * self.width + x1] as f64 * fx;
                    let bot = band[y1 * self.width + x0] as f64 * (1.0 - fx) + band[y1 * self.width + x1] as f64 * fx;
                    data.push((top * (1.0 - fy) + bot * fy) as f32);
                }
            }
        }
        Self::build(width, height, self.wavelengths.clone(), data, self.raw)
    }
}

/// Source taps for resizing `src` samples to `dst` samples with half-pixel centers.
pub(crate) fn resize_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let s = ((i as f64 + 0.5) * ratio - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

pub(crate) fn nearest_index(grid: &[f64], nm: f64) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, &w) in grid.iter().enumerate() {
        let d = (w - nm).abs();
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

fn check_values(data: &[f32], raw: bool) -> Result<()> {
    for (i, &v) in data.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite(i));
        }
        if !raw && !(0.0..=1.0).contains(&v) {
            return Err(Error::OutOfRange { index: i, value: v });
        }
    }
    Ok(())
}

/// Boolean map of trustworthy pixels, spatial (`bands == 1`) or per band.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidityMask {
    width: usize,
    height: usize,
    bands: usize,
    bits: Vec<bool>,
}

impl ValidityMask {
    pub fn new(width: usize, height: usize, bands: usize, bits: Vec<bool>) -> Result<Self> {
        if bands == 0 || bits.len() != width * height * bands {
            return Err(Error::DimensionMismatch(format!(
                "mask {width}x{height}x{bands} needs {} bits, got {}",
                width * height * bands,
                bits.len()
            )));
        }
        Ok(ValidityMask {
            width,
            height,
            bands,
            bits,
        })
    }

    pub fn all_valid(width: usize, height: usize, bands: usize) -> Self {
        ValidityMask {
            width,
            height,
            bands,
            bits: vec![true; width * height * bands],
        }
    }

    /// Spatial mask matching the cube's footprint, everything valid.
    pub fn for_cube(cube: &SpectralCube) -> Self {
        Self::all_valid(cube.width(), cube.height(), 1)
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn bands(&self) -> usize {
        self.bands
    }
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Validity at `(x, y)` for band `b`; spatial masks ignore `b`.
    #[inline]
    pub fn is_valid(&self, x: usize, y: usize, b: usize) -> bool {
        let b = if self.bands == 1 { 0 } else { b };
        self.bits[b * self.width * self.height + y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, b: usize, valid: bool) {
        let i = b * self.width * self.height + y * self.width + x;
        self.bits[i] = valid;
    }

    pub fn count_valid(&self) -> usize {
        self.bits.iter().filter(|&&v| v).count()
    }

    pub fn valid_fraction(&self) -> f64 {
        self.count_valid() as f64 / self.bits.len() as f64
    }

    /// Checks that this mask can annotate `cube`.
    pub fn check_against(&self, cube: &SpectralCube) -> Result<()> {
        if self.width != cube.width()
            || self.height != cube.height()
            || (self.bands != 1 && self.bands != cube.bands())
        {
            return Err(Error::DimensionMismatch(format!(
                "mask {}x{}x{} vs cube {:?}",
                self.width,
                self.height,
                self.bands,
                cube.dims()
            )));
        }
        Ok(())
    }

    /// Per-band copy with `bands` planes.
    pub fn expand(&self, bands: usize) -> Result<Self> {
        if self.bands == bands {
            return Ok(self.clone());
        }
        if self.bands != 1 {
            return Err(Error::DimensionMismatch(format!(
                "cannot expand a {}-band mask to {bands}",
                self.bands
            )));
        }
        let mut bits = Vec::with_capacity(self.bits.len() * bands);
        for _ in 0..bands {
            bits.extend_from_slice(&self.bits);
        }
        Ok(ValidityMask {
            width: self.width,
            height: self.height,
            bands,
            bits,
        })
    }

    /// Spatial mask valid where every band is valid.
    pub fn collapse(&self) -> Self {
        let n = self.width * self.height;
        let bits = (0..n)
            .map(|i| (0..self.bands).all(|b| self.bits[b * n + i]))
            .collect();
        ValidityMask {
            width: self.width,
            height: self.height,
            bands: 1,
            bits,
        }
    }

    /// Element-wise AND; a spatial operand broadcasts over bands.
    pub fn and(&self, other: &ValidityMask) -> Result<Self> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch("mask footprints differ".into()));
        }
        let bands = self.bands.max(other.bands);
        let a = self.expand(bands)?;
        let b = other.expand(bands)?;
        let bits = a.bits.iter().zip(&b.bits).map(|(&p, &q)| p && q).collect();
        Ok(ValidityMask {
            width: self.width,
            height: self.height,
            bands,
            bits,
        })
    }

    /// Single band `b` as a spatial mask.
    pub fn band(&self, b: usize) -> Self {
        let b = if self.bands == 1 { 0 } else { b };
        let n = self.width * self.height;
        ValidityMask {
            width: self.width,
            height: self.height,
            bands: 1,
            bits: self.bits[b * n..(b + 1) * n].to_vec(),
        }
    }
}

/// Sidecar JSON header of a `.hsc` payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CubeHeader {
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    pub wavelengths_nm: Vec<f64>,
    pub raw: bool,
    pub byte_order: String,
    pub value_type: String,
}

impl CubeHeader {
    pub fn for_cube(cube: &SpectralCube) -> Self {
        CubeHeader {
            width: cube.width,
            height: cube.height,
            bands: cube.bands(),
            wavelengths_nm: cube.wavelengths.clone(),
            raw: cube.raw,
            byte_order: "LE".into(),
            value_type: "f32".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.byte_order != "LE" {
            return Err(Error::Header(format!("unsupported byte_order {:?}", self.byte_order)));
        }
        if self.value_type != "f32" {
            return Err(Error::Header(format!("unsupported value_type {:?}", self.value_type)));
        }
        if self.width == 0 || self.height == 0 || self.bands == 0 {
            return Err(Error::Header("zero-sized dimension".into()));
        }
        if self.wavelengths_nm.len() != self.bands {
            return Err(Error::Header(format!(
                "{} wavelengths for {} bands",
                self.wavelengths_nm.len(),
                self.bands
            )));
        }
        check_wavelengths(&self.wavelengths_nm)
    }

    pub fn payload_bytes(&self) -> usize {
        self.width * self.height * self.bands * 4
    }
}

/// `cube.hsc` → `cube.hsc.json`.
pub fn header_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn read_header(path: &Path) -> Result<CubeHeader> {
    let hpath = header_path(path);
    let text = fs::read_to_string(&hpath).map_err(|e| Error::io(&hpath, e))?;
    let header: CubeHeader =
        serde_json::from_str(&text).map_err(|e| Error::Header(format!("{}: {e}", hpath.display())))?;
    header.validate()?;
    Ok(header)
}

/// Reads a cube from its `.hsc` payload and `.hsc.json` header.
pub fn load_cube(path: impl AsRef<Path>) -> Result<SpectralCube> {
    let path = path.as_ref();
    let header = read_header(path)?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != header.payload_bytes() {
        return Err(Error::PayloadLength {
            expected: header.payload_bytes(),
            actual: bytes.len(),
        });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    SpectralCube::build(header.width, header.height, header.wavelengths_nm, data, header.raw)
}

/// Writes payload and header. The cube is re-checked before any byte is written.
pub fn save_cube(cube: &SpectralCube, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    check_values(&cube.data, cube.raw)?;
    let header = CubeHeader::for_cube(cube);
    let json = serde_json::to_string_pretty(&header).expect("header serializes");
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for v in &cube.data {
        w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    let hpath = header_path(path);
    fs::write(&hpath, json + "\n").map_err(|e| Error::io(&hpath, e))
}

/// 8-bit quantization shared by PNG export and Otsu: `round_half_up(255 * clamp(v, 0, 1))`.
#[inline]
pub fn quantize_u8(v: f32) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) } as f64;
    (255.0 * v + 0.5).floor() as u8
}

fn write_gray_png(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let png_err = |e: png::EncodingError| Error::Png {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(pixels).map_err(png_err)?;
    writer.finish().map_err(png_err)
}

/// Reads an 8-bit grayscale (optionally with alpha) PNG.
pub fn read_gray_png(path: &Path) -> Result<Plane> {
    let png_err = |message: String| Error::Png {
        path: path.to_path_buf(),
        message,
    };
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| png_err(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| png_err("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| png_err(e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(png_err(format!("expected 8-bit depth, found {:?}", info.bit_depth)));
    }
    let stride = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        other => return Err(png_err(format!("expected grayscale, found {other:?}"))),
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let mut data = Vec::with_capacity(w * h);
    for row in buf.chunks(info.line_size).take(h) {
        for x in 0..w {
            data.push(row[x * stride] as f32 / 255.0);
        }
    }
    Plane::new(w, h, data)
}

/// Renders band `b` as an 8-bit grayscale PNG.
pub fn export_band_png(cube: &SpectralCube, b: usize, path: impl AsRef<Path>) -> Result<()> {
    if b >= cube.bands() {
        return Err(Error::IndexOutOfRange {
            index: b,
            limit: cube.bands(),
        });
    }
    let pixels: Vec<u8> = cube.band(b).iter().map(|&v| quantize_u8(v)).collect();
    write_gray_png(path.as_ref(), cube.width(), cube.height(), &pixels)
}

/// Writes a 2-D image through the same quantization as [`export_band_png`].
pub fn export_plane_png(plane: &Plane, path: impl AsRef<Path>) -> Result<()> {
    let pixels: Vec<u8> = plane.data.iter().map(|&v| quantize_u8(v)).collect();
    write_gray_png(path.as_ref(), plane.width, plane.height, &pixels)
}

/// Writes one band of a mask (or the only band of a spatial mask): 0 invalid, 255 valid.
pub fn save_mask_png(mask: &ValidityMask, band: usize, path: impl AsRef<Path>) -> Result<()> {
    let m = mask.band(band);
    let pixels: Vec<u8> = m.bits.iter().map(|&v| if v { 255 } else { 0 }).collect();
    write_gray_png(path.as_ref(), m.width, m.height, &pixels)
}

/// Reads a spatial mask; pixels at or above 128 count as valid.
pub fn load_mask_png(path: impl AsRef<Path>) -> Result<ValidityMask> {
    let plane = read_gray_png(path.as_ref())?;
    let bits = plane.data.iter().map(|&v| v >= 128.0 / 255.0).collect();
    ValidityMask::new(plane.width, plane.height, 1, bits)
}

pub fn mask_band_filename(b: usize) -> String {
    format!("band_{b:03}.png")
}

/// Writes one PNG per band into `dir` (created if needed).
pub fn save_mask_dir(mask: &ValidityMask, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for b in 0..mask.bands() {
        save_mask_png(mask, b, dir.join(mask_band_filename(b)))?;
    }
    Ok(())
}

/// Reads `bands` per-band PNGs written by [`save_mask_dir`].
pub fn load_mask_dir(dir: impl AsRef<Path>, bands: usize) -> Result<ValidityMask> {
    let dir = dir.as_ref();
    let mut bits = Vec::new();
    let mut dims = None;
    for b in 0..bands {
        let m = load_mask_png(dir.join(mask_band_filename(b)))?;
        match dims {
            None => dims = Some((m.width, m.height)),
            Some(d) if d != (m.width, m.height) => {
                return Err(Error::DimensionMismatch("mask bands differ in size".into()))
            }
            _ => {}
        }
        bits.extend(m.bits);
    }
    let (w, h) = dims.ok_or_else(|| Error::InvalidArgument("zero mask bands".into()))?;
    ValidityMask::new(w, h, bands, bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cube(w: usize, h: usize, b: usize, f: impl Fn(usize) -> f32) -> SpectralCube {
        let wl = wavelength_grid(500.0, 600.0, b).unwrap();
        SpectralCube::new(w, h, wl, (0..w * h * b).map(f).collect()).unwrap()
    }

    #[test]
    fn save_load_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.hsc");
        let c = cube(4, 4, 3, |i| (i as f32 * 0.013).fract());
        save_cube(&c, &p).unwrap();
        let back = load_cube(&p).unwrap();
        assert_eq!(c.data().len(), back.data().len());
        for (a, b) in c.data().iter().zip(back.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(c, back);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.hsc");
        save_cube(&cube(4, 4, 3, |_| 0.5), &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(
            load_cube(&p),
            Err(Error::PayloadLength { expected: 192, actual: 191 })
        ));
    }

    #[test]
    fn reference_grid_header_is_accepted() {
        let grid = default_reference_grid();
        assert_eq!(grid.len(), 299);
        assert_eq!(grid[0], 400.0);
        assert_eq!(grid[298], 1000.0);
        assert!(grid.windows(2).all(|w| w[1] > w[0]));
        let c = SpectralCube::filled(2, 2, grid, 0.25).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ref.hsc");
        save_cube(&c, &p).unwrap();
        assert_eq!(load_cube(&p).unwrap().bands(), 299);
    }

    #[test]
    fn zero_cube_payload_size() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.hsc");
        save_cube(&cube(2, 2, 1, |_| 0.0), &p).unwrap();
        assert_eq!(fs::metadata(&p).unwrap().len(), 16);
        let header: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(header_path(&p)).unwrap()).unwrap();
        let keys: Vec<&str> = header.as_object().unwrap().keys().map(|s| s.as_str()).collect();
        let mut expected = vec!["width", "height", "bands", "wavelengths_nm", "raw", "byte_order", "value_type"];
        expected.sort();
        let mut keys = keys;
        keys.sort();
        assert_eq!(keys, expected);
        assert_eq!(header["byte_order"], "LE");
        assert_eq!(header["value_type"], "f32");
    }

    #[test]
    fn nan_cube_is_rejected_before_writing() {
        // A raw cube built through a back door cannot hold NaN, so construct the invalid
        // value through the public field-free path: the constructor itself refuses it.
        let wl = vec![500.0];
        assert!(matches!(
            SpectralCube::new_raw(1, 1, wl.clone(), vec![f32::NAN]),
            Err(Error::NonFinite(0))
        ));
        let mut c = cube(2, 1, 1, |_| 0.1);
        c.data[1] = f32::NAN;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nan.hsc");
        assert!(matches!(save_cube(&c, &p), Err(Error::NonFinite(1))));
        assert!(!p.exists());
    }

    #[test]
    fn big_cube_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("big.hsc");
        let c = cube(1024, 1024, 8, |i| ((i * 7919) % 1000) as f32 / 1000.0);
        save_cube(&c, &p).unwrap();
        assert_eq!(load_cube(&p).unwrap(), c);
    }

    #[test]
    fn band_slice_and_reassemble() {
        let mut data = vec![0.5f32; 9];
        data.extend((0..9).map(|i| i as f32 / 10.0));
        let c = SpectralCube::new(3, 3, vec![500.0, 600.0], data).unwrap();
        assert!(c.band_slice(0).unwrap().data.iter().all(|&v| v == 0.5));
        assert!(matches!(c.band_slice(2), Err(Error::IndexOutOfRange { index: 2, limit: 2 })));
        let planes: Vec<Plane> = (0..c.bands()).map(|b| c.band_slice(b).unwrap()).collect();
        assert_eq!(SpectralCube::from_planes(&planes, c.wavelengths().to_vec()).unwrap(), c);
    }

    #[test]
    fn png_export_quantization() {
        assert_eq!(quantize_u8(1.0), 255);
        assert_eq!(quantize_u8(0.0), 0);
        assert_eq!(quantize_u8(0.5), 128);
        assert_eq!(quantize_u8(1.7), 255);
        assert_eq!(quantize_u8(-0.2), 0);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.png");
        let c = SpectralCube::new(3, 1, vec![500.0], vec![0.0, 0.5, 1.0]).unwrap();
        export_band_png(&c, 0, &p).unwrap();
        let back = read_gray_png(&p).unwrap();
        let bytes: Vec<u8> = back.data.iter().map(|&v| (v * 255.0).round() as u8).collect();
        assert_eq!(bytes, vec![0, 128, 255]);
    }

    #[test]
    fn mask_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let bits: Vec<bool> = (0..24).map(|i| i % 3 != 0).collect();
        let m = ValidityMask::new(4, 3, 2, bits).unwrap();
        save_mask_dir(&m, dir.path().join("m")).unwrap();
        assert_eq!(load_mask_dir(dir.path().join("m"), 2).unwrap(), m);
    }

    #[test]
    fn resize_conserves_constants() {
        let c = SpectralCube::filled(5, 7, vec![500.0, 510.0], 0.7).unwrap();
        let r = c.resize_bilinear(13, 4).unwrap();
        assert!(r.data().iter().all(|&v| (v - 0.7).abs() < 1e-7));
    }

    #[derive(Debug, Clone, Copy)]
    enum Mutation {
        Width,
        Height,
        Bands,
        DropWavelength,
        SwapWavelengths,
        NegativeWavelength,
        ByteOrder,
        ValueType,
        NotRaw,
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn round_trip_identity(w in 1usize..6, h in 1usize..6, b in 1usize..5, seed in 0u32..10_000) {
            let c = cube(w, h, b, |i| ((i as u32).wrapping_mul(2654435761).wrapping_add(seed) % 10_000) as f32 / 9999.0);
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("c.hsc");
            save_cube(&c, &p).unwrap();
            let back = load_cube(&p).unwrap();
            prop_assert_eq!(back, c);
        }

        #[test]
        fn header_mutations_are_rejected(which in 0usize..9, w in 2usize..5, h in 2usize..5) {
            let mutation = [
                Mutation::Width, Mutation::Height, Mutation::Bands, Mutation::DropWavelength,
                Mutation::SwapWavelengths, Mutation::NegativeWavelength, Mutation::ByteOrder,
                Mutation::ValueType, Mutation::NotRaw,
            ][which];
            let wl = vec![450.0, 550.0, 650.0];
            let mut data = vec![0.25f32; w * h * 3];
            data[0] = 1.5;
            let c = SpectralCube::new_raw(w, h, wl, data).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("c.hsc");
            save_cube(&c, &p).unwrap();
            let mut hdr = CubeHeader::for_cube(&c);
            match mutation {
                Mutation::Width => hdr.width += 1,
                Mutation::Height => hdr.height -= 1,
                Mutation::Bands => hdr.bands += 1,
                Mutation::DropWavelength => { hdr.wavelengths_nm.pop(); }
                Mutation::SwapWavelengths => hdr.wavelengths_nm.swap(0, 1),
                Mutation::NegativeWavelength => hdr.wavelengths_nm[0] = -1.0,
                Mutation::ByteOrder => hdr.byte_order = "BE".into(),
                Mutation::ValueType => hdr.value_type = "f64".into(),
                Mutation::NotRaw => hdr.raw = false,
            }
            fs::write(header_path(&p), serde_json::to_string(&hdr).unwrap()).unwrap();
            prop_assert!(load_cube(&p).is_err(), "{:?} accepted", mutation);
        }
    }
}
