//! Data types and image-space algorithms for an active-illumination multispectral camera.
//!
//! The camera captures one monochrome frame per narrowband LED. This crate covers
//! everything between those frames and a trainable dataset:
//!
//! - [`hypercube`]: the [`SpectralCube`] container, validity masks and the `.hsc` file format.
//! - [`calibration`]: dark-field subtraction, per-band flat fielding and radial undistortion.
//! - [`spotmask`]: Otsu-based LED specular spot detection and cross-band inpainting.
//! - [`registration`]: density-matching downscale and masked NCC template search.
//! - [`spectral`]: LED response model, band projection and the spectral-angle metric.
//! - [`augment`]: truncated-normal random affine augmentation with mask propagation.
//! - [`simulate`]: a forward model of the camera used to produce verifiable synthetic data.

pub mod augment;
pub mod calibration;
mod error;
mod resample;
pub mod hypercube;
pub mod registration;
pub mod simulate;
pub mod spectral;
pub mod spotmask;

pub use error::{Error, Result};
pub use hypercube::{Plane, SpectralCube, ValidityMask};
