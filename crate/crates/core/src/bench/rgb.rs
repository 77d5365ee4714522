//! RGB imaging through a fiber bundle: each raster position is one fiber,
//! each image occupies three wavelength channels.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::domain::{SpeckleImage, Spectrum};
use crate::error::{Error, Result};
use crate::format::write_pgm;
use crate::specklegen::FiberArrayModel;
use crate::stats::pearson;
use crate::synth::{encode_rgb_images, RgbImage, SpectrumSampler};

use super::experiments::sub_seed;
use super::methods::{fit_method, MethodKind, MethodSettings};
use super::table::{num, Table};

#[derive(Debug, Clone, PartialEq)]
pub struct RgbConfig {
    pub side: usize,
    /// Spectra the methods are tuned or trained on.
    pub train_sampler: SpectrumSampler,
    pub seed: u64,
}

/// One method's reassembled rasters and quality figures.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbMethodResult {
    pub method: MethodKind,
    /// Per image: `height * width` pixels of reconstructed (R, G, B), not
    /// clamped or rescaled.
    pub rasters: Vec<Vec<[f64; 3]>>,
    /// Mean squared reconstruction in the dark channel over the mean squared
    /// reconstruction in the signal channels.
    pub blank_energy_ratio: f64,
    /// Mean over images of the correlation between reconstructed and source
    /// raster values.
    pub raster_correlation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RgbResult {
    pub side: usize,
    pub ratio: f64,
    pub height: usize,
    pub width: usize,
    pub methods: Vec<RgbMethodResult>,
}

impl RgbResult {
    pub fn get(&self, method: MethodKind) -> Option<&RgbMethodResult> {
        self.methods.iter().find(|m| m.method == method)
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(&[
            "method",
            "ratio",
            "raster_correlation",
            "blank_energy_ratio",
        ]);
        for m in &self.methods {
            t.push(vec![
                m.method.to_string(),
                format!("{:.2}", self.ratio),
                num(m.raster_correlation),
                num(m.blank_energy_ratio),
            ]);
        }
        t
    }

    /// Writes `{method}_img{k}_{r,g,b}.pgm` into `dir`.
    pub fn write_rasters(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        for m in &self.methods {
            for (k, raster) in m.rasters.iter().enumerate() {
                for (c, name) in ["r", "g", "b"].iter().enumerate() {
                    let plane: Vec<f64> = raster.iter().map(|px| px[c].max(0.0)).collect();
                    let img = SpeckleImage::new(self.height, self.width, plane)?;
                    let file = format!("{}_img{k}_{name}.pgm", m.method.name().replace('+', "_"));
                    write_pgm(&img, dir.join(file))?;
                }
            }
        }
        Ok(())
    }
}

/// Encodes `images` into the first `height * width` fibers of `array`,
/// reconstructs every position with each method and reassembles rasters.
pub fn rgb_scenario(
    array: &FiberArrayModel,
    methods: &[MethodKind],
    images: &[RgbImage],
    cfg: &RgbConfig,
    settings: &MethodSettings,
) -> Result<RgbResult> {
    let first = images
        .first()
        .ok_or_else(|| Error::invalid("at least one RGB image is required"))?;
    let (h, w) = (first.height, first.width);
    let positions = h * w;
    if array.len() < positions {
        return Err(Error::invalid(format!(
            "a {h}x{w} raster needs {positions} fibers; the array has {}",
            array.len()
        )));
    }
    let roi = (cfg.side, cfg.side);
    let fibers = &array.fibers()[..positions];
    let roi_mats = fibers
        .iter()
        .map(|f| f.crop_centered(roi))
        .collect::<Result<Vec<_>>>()?;
    let enc = encode_rgb_images(images, &roi_mats)?;
    let y = array.channels();

    let methods_out = methods
        .iter()
        .map(|&m| -> Result<RgbMethodResult> {
            let recon: Vec<Spectrum> = (0..positions)
                .into_par_iter()
                .map(|p| {
                    let fitted = fit_method(
                        m,
                        &fibers[p],
                        roi,
                        cfg.train_sampler,
                        settings,
                        sub_seed(cfg.seed, &[p as u64]),
                    )?;
                    fitted.reconstruct(&enc.images[p])
                })
                .collect::<Result<_>>()?;
            let rasters: Vec<Vec<[f64; 3]>> = (0..images.len())
                .map(|k| {
                    recon
                        .iter()
                        .map(|s| std::array::from_fn(|c| s.values()[3 * k + c]))
                        .collect()
                })
                .collect();
            let signal = 3 * images.len();
            let blank: f64 = recon
                .iter()
                .map(|s| s.values()[enc.blank_channel].powi(2))
                .sum::<f64>()
                / positions as f64;
            let sig: f64 = recon
                .iter()
                .map(|s| s.values()[..signal].iter().map(|v| v * v).sum::<f64>())
                .sum::<f64>()
                / (positions * signal) as f64;
            let corr = images
                .iter()
                .zip(&rasters)
                .map(|(src, got)| {
                    let a: Vec<f64> = src.pixels.iter().flatten().copied().collect();
                    let b: Vec<f64> = got.iter().flatten().copied().collect();
                    pearson(&a, &b)
                })
                .sum::<f64>()
                / images.len() as f64;
            Ok(RgbMethodResult {
                method: m,
                rasters,
                blank_energy_ratio: if sig > 0.0 { blank / sig } else { f64::NAN },
                raster_correlation: corr,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RgbResult {
        side: cfg.side,
        ratio: (cfg.side * cfg.side) as f64 / y as f64,
        height: h,
        width: w,
        methods: methods_out,
    })
}
