//! Speckle spectrometer simulation and reconstruction.
//!
//! A multimode fiber maps each wavelength to a distinct speckle pattern; the
//! camera image of a polychromatic input is the intensity-weighted sum of those
//! patterns. This crate generates synthetic fiber transmission matrices and
//! datasets and recovers spectra with Tikhonov inversion, non-negative
//! compressive sensing and small convolutional networks.

pub mod bench;
pub mod domain;
pub mod error;
pub mod format;
pub mod nn;
pub mod pipeline;
pub mod recon;
pub mod recon_cs;
pub mod recon_linear;
pub mod rng;
pub mod specklegen;
pub mod stats;
pub mod synth;

pub use domain::{
    crop_roi, render_speckle, SamplingRatio, SpeckleImage, Spectrum, TransmissionMatrix,
    DEFAULT_CHANNELS,
};
pub use error::{Error, ErrorCategory, FormatError, Result};
pub use recon::Reconstructor;
pub use rng::SpeckleRng;
