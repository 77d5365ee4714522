//! Labeled dataset synthesis: random spectra rendered through a transmission
//! matrix, with optional intensity noise and one-pixel ROI shifts, plus the
//! RGB image-encoding scenario.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::domain::{
    centered_origin, check_len, crop_roi, render_speckle, SpeckleImage, Spectrum,
    TransmissionMatrix,
};
use crate::error::{Error, FormatError, Result};
use crate::format::{Decoder, Dtype, Encoder, Manifest};
use crate::rng::SpeckleRng;

pub const SPKD_MAGIC: [u8; 4] = *b"SPKD";
pub const SPKD_VERSION: u16 = 1;

/// Default random-walk step for dense spectra.
pub const DEFAULT_WALK_STEP: f64 = 0.2;

/// The eight unit displacements (row, col), diagonals included.
pub const SHIFT_DIRECTIONS: [(i8, i8); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

/// `n_lambda` distinct channels, uniform amplitudes on (0, 1], peak-normalized.
pub fn sample_sparse_spectrum(rng: &mut SpeckleRng, y: usize, n_lambda: usize) -> Result<Spectrum> {
    Ok(sparse_raw(rng, y, n_lambda)?.peak_normalized())
}

fn sparse_raw(rng: &mut SpeckleRng, y: usize, n_lambda: usize) -> Result<Spectrum> {
    if n_lambda == 0 || n_lambda > y {
        return Err(Error::invalid(format!(
            "n_lambda must lie in 1..={y} (got {n_lambda})"
        )));
    }
    let mut values = vec![0.0; y];
    for j in rng.choose_distinct(y, n_lambda) {
        values[j] = rng.uniform_open_closed();
    }
    Spectrum::new(values)
}

/// Random walk `s_{j+1} = clamp(s_j + step * U(-1, 1), 0, 1)` from `s_0 ~ U(0, 1)`,
/// peak-normalized.
pub fn sample_dense_spectrum(rng: &mut SpeckleRng, y: usize, walk_step: f64) -> Result<Spectrum> {
    Ok(dense_raw(rng, y, walk_step)?.peak_normalized())
}

fn dense_raw(rng: &mut SpeckleRng, y: usize, walk_step: f64) -> Result<Spectrum> {
    if !(walk_step > 0.0 && walk_step <= 1.0) {
        return Err(Error::invalid(format!(
            "walk_step must lie in (0, 1] (got {walk_step})"
        )));
    }
    let mut values = Vec::with_capacity(y);
    let mut s = rng.uniform();
    for j in 0..y {
        if j > 0 {
            s = (s + walk_step * rng.uniform_range(-1.0, 1.0)).clamp(0.0, 1.0);
        }
        values.push(s);
    }
    Spectrum::new(values)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SamplerKind {
    /// N_lambda drawn uniformly from `min..=max` per spectrum.
    Sparse {
        min: usize,
        max: usize,
    },
    Dense {
        walk_step: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumSampler {
    pub kind: SamplerKind,
    pub normalize_peak: bool,
}

impl SpectrumSampler {
    pub fn sparse(n_lambda: usize) -> Self {
        Self::sparse_range(n_lambda, n_lambda)
    }

    pub fn sparse_range(min: usize, max: usize) -> Self {
        Self {
            kind: SamplerKind::Sparse { min, max },
            normalize_peak: true,
        }
    }

    pub fn dense(walk_step: f64) -> Self {
        Self {
            kind: SamplerKind::Dense { walk_step },
            normalize_peak: true,
        }
    }

    /// Sparse spectra with fewer than half the channels lit: N_lambda on `1..=Y/2`.
    pub fn below_half(y: usize) -> Self {
        Self::sparse_range(1, (y / 2).max(1))
    }

    pub fn validate(&self, y: usize) -> Result<()> {
        match self.kind {
            SamplerKind::Sparse { min, max } => {
                if min == 0 || min > max || max > y {
                    return Err(Error::invalid(format!(
                        "sparse N_lambda range {min}..={max} must satisfy 1 <= min <= max <= {y}"
                    )));
                }
            }
            SamplerKind::Dense { walk_step } => {
                if !(walk_step > 0.0 && walk_step <= 1.0) {
                    return Err(Error::invalid(format!(
                        "walk_step must lie in (0, 1] (got {walk_step})"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut SpeckleRng, y: usize) -> Result<Spectrum> {
        let raw = match self.kind {
            SamplerKind::Sparse { min, max } => {
                let n = if min == max {
                    min
                } else {
                    min + rng.below(max - min + 1)
                };
                sparse_raw(rng, y, n)?
            }
            SamplerKind::Dense { walk_step } => dense_raw(rng, y, walk_step)?,
        };
        Ok(if self.normalize_peak {
            raw.peak_normalized()
        } else {
            raw
        })
    }
}

impl fmt::Display for SpectrumSampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            SamplerKind::Sparse { min, max } if min == max => write!(f, "sparse:{min}")?,
            SamplerKind::Sparse { min, max } => write!(f, "sparse:{min}..{max}")?,
            SamplerKind::Dense { walk_step } => write!(f, "dense:{walk_step}")?,
        }
        if !self.normalize_peak {
            write!(f, ":raw")?;
        }
        Ok(())
    }
}

impl FromStr for SpectrumSampler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("cannot parse sampler {s:?}"));
        let (body, normalize_peak) = match s.strip_suffix(":raw") {
            Some(b) => (b, false),
            None => (s, true),
        };
        let (kind, arg) = body.split_once(':').ok_or_else(bad)?;
        let kind = match kind {
            "sparse" => match arg.split_once("..") {
                Some((a, b)) => SamplerKind::Sparse {
                    min: a.parse().map_err(|_| bad())?,
                    max: b.parse().map_err(|_| bad())?,
                },
                None => {
                    let n = arg.parse().map_err(|_| bad())?;
                    SamplerKind::Sparse { min: n, max: n }
                }
            },
            "dense" => SamplerKind::Dense {
                walk_step: arg.parse().map_err(|_| bad())?,
            },
            _ => return Err(bad()),
        };
        Ok(Self {
            kind,
            normalize_peak,
        })
    }
}

/// Independent Gaussian noise with sigma = `p * mean(image)`, clamped at 0.
pub fn add_noise(image: &SpeckleImage, p: f64, rng: &mut SpeckleRng) -> Result<SpeckleImage> {
    if !(p >= 0.0 && p.is_finite()) {
        return Err(Error::invalid(format!(
            "noise level must be >= 0 (got {p})"
        )));
    }
    if p == 0.0 {
        return Ok(image.clone());
    }
    let sigma = p * image.mean();
    let pixels = image
        .pixels()
        .iter()
        .map(|v| (v + sigma * rng.normal()).max(0.0))
        .collect();
    Ok(SpeckleImage::from_parts(
        image.height(),
        image.width(),
        pixels,
        image.roi_origin(),
    ))
}

/// Crops `roi_shape` at `roi_origin` displaced by one of the eight unit steps,
/// chosen uniformly. Returns the crop and the displacement.
pub fn shift_roi(
    parent: &SpeckleImage,
    roi_origin: (usize, usize),
    roi_shape: (usize, usize),
    rng: &mut SpeckleRng,
) -> Result<(SpeckleImage, (i8, i8))> {
    let (r0, c0) = roi_origin;
    let (h, w) = roi_shape;
    if r0 < 1 || c0 < 1 || r0 + h + 1 > parent.height() || c0 + w + 1 > parent.width() {
        return Err(Error::invalid(format!(
            "ROI {h}x{w} at ({r0}, {c0}) needs a 1-pixel margin inside the {}x{} parent frame",
            parent.height(),
            parent.width()
        )));
    }
    let d = SHIFT_DIRECTIONS[rng.below(8)];
    let origin = (
        (r0 as isize + d.0 as isize) as usize,
        (c0 as isize + d.1 as isize) as usize,
    );
    Ok((crop_roi(parent, origin, roi_shape)?, d))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Perturbation {
    /// Noise sigma as a fraction of the clean image mean.
    pub noise_level: f64,
    pub shift_one_pixel: bool,
}

impl Perturbation {
    pub const NONE: Perturbation = Perturbation {
        noise_level: 0.0,
        shift_one_pixel: false,
    };

    pub fn noise(p: f64) -> Self {
        Self {
            noise_level: p,
            shift_one_pixel: false,
        }
    }

    pub fn shift() -> Self {
        Self {
            noise_level: 0.0,
            shift_one_pixel: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.noise_level) {
            return Err(Error::invalid(format!(
                "noise level must lie in [0, 1] (got {})",
                self.noise_level
            )));
        }
        Ok(())
    }

    pub fn is_none(&self) -> bool {
        self.noise_level == 0.0 && !self.shift_one_pixel
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Split {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Split {
    /// 31000 images: 29000 train, 1000 validation, 1000 test.
    pub const FULL: Split = Split {
        train: 29_000,
        val: 1_000,
        test: 1_000,
    };
    /// Desk-scale 9000 / 1000 / 1000.
    pub const DESK: Split = Split {
        train: 9_000,
        val: 1_000,
        test: 1_000,
    };

    pub fn new(train: usize, val: usize, test: usize) -> Self {
        Self { train, val, test }
    }

    /// 29:1:1 proportions of `n` samples; the remainder goes to training.
    pub fn proportional(n: usize) -> Self {
        let val = n / 31;
        Self {
            train: n - 2 * val,
            val,
            test: val,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.train, self.val, self.test)
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split(['/', ','])
            .map(|p| p.trim().parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::invalid(format!("cannot parse split {s:?} (TRAIN/VAL/TEST)")))?;
        match parts[..] {
            [train, val, test] => Ok(Split { train, val, test }),
            _ => Err(Error::invalid(format!("split {s:?} needs three parts"))),
        }
    }
}

/// Settings for [`build_dataset`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetSpec {
    pub sampler: SpectrumSampler,
    pub n_samples: usize,
    pub split: Split,
    pub perturbation: Perturbation,
    /// Centered ROI cropped from the matrix grid; must leave a 1-pixel margin
    /// when shifting.
    pub roi: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: SpeckleImage,
    pub spectrum: Spectrum,
    pub shift: Option<(i8, i8)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub seed: u64,
    pub sampler: SpectrumSampler,
    pub perturbation: Perturbation,
    pub matrix_fingerprint: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    split: Split,
    provenance: Provenance,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, split: Split, provenance: Provenance) -> Result<Self> {
        check_len("dataset split total", samples.len(), split.total())?;
        Ok(Self {
            samples,
            split,
            provenance,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn train(&self) -> &[Sample] {
        &self.samples[..self.split.train]
    }

    pub fn val(&self) -> &[Sample] {
        &self.samples[self.split.train..self.split.train + self.split.val]
    }

    pub fn test(&self) -> &[Sample] {
        &self.samples[self.split.train + self.split.val..]
    }

    pub fn roi_shape(&self) -> (usize, usize) {
        self.samples
            .first()
            .map(|s| s.image.shape())
            .unwrap_or((0, 0))
    }

    pub fn channels(&self) -> usize {
        self.samples.first().map(|s| s.spectrum.len()).unwrap_or(0)
    }
}

/// Draws `n_samples` spectra, renders them through `a`, and applies the
/// perturbations. Sample `i` uses its own stream derived from one draw of
/// `rng`, so the result does not depend on worker scheduling.
pub fn build_dataset(
    a: &TransmissionMatrix,
    spec: &DatasetSpec,
    rng: &mut SpeckleRng,
) -> Result<Dataset> {
    if spec.split.total() != spec.n_samples {
        return Err(Error::invalid(format!(
            "split {} does not sum to n_samples {}",
            spec.split, spec.n_samples
        )));
    }
    spec.sampler.validate(a.channels())?;
    spec.perturbation.validate()?;
    let roi_origin = centered_origin(a.roi_shape(), spec.roi)?;
    let roi_matrix = a.crop(roi_origin, spec.roi)?;
    let base_seed = rng.next_u64();
    let y = a.channels();

    let samples = (0..spec.n_samples)
        .into_par_iter()
        .map(|i| {
            let mut r = SpeckleRng::derive(base_seed, i as u64);
            let spectrum = spec.sampler.sample(&mut r, y)?;
            let (image, shift) = if spec.perturbation.shift_one_pixel {
                let parent = render_speckle(a, &spectrum)?;
                let (img, d) = shift_roi(&parent, roi_origin, spec.roi, &mut r)?;
                (img, Some(d))
            } else {
                (render_speckle(&roi_matrix, &spectrum)?, None)
            };
            let image = add_noise(&image, spec.perturbation.noise_level, &mut r)?;
            Ok(Sample {
                image,
                spectrum,
                shift,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Dataset::new(
        samples,
        spec.split,
        Provenance {
            seed: base_seed,
            sampler: spec.sampler,
            perturbation: spec.perturbation,
            matrix_fingerprint: a.fingerprint(),
        },
    )
}

/// Writes `manifest.txt`, `labels.csv` (one spectrum per row) and `images.spkd`.
///
/// `images.spkd` body: `n, h, w` as `u32`, dtype tag, `n * h * w` pixel
/// values (sample-major, row-major within an image), then per sample a shift
/// record `flag u8, drow i8, dcol i8, origin_row u32, origin_col u32`.
pub fn write_dataset(ds: &Dataset, dir: impl AsRef<Path>, dtype: Dtype) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let (h, w) = ds.roi_shape();
    let mut enc = Encoder::new(SPKD_MAGIC, SPKD_VERSION);
    enc.u32(ds.len() as u32)
        .u32(h as u32)
        .u32(w as u32)
        .u8(dtype.tag())
        .values(
            ds.samples
                .iter()
                .flat_map(|s| s.image.pixels().iter().copied()),
            dtype,
        );
    for s in &ds.samples {
        let (flag, d) = match s.shift {
            Some(d) => (1u8, d),
            None => (0u8, (0, 0)),
        };
        let (r0, c0) = s.image.roi_origin();
        enc.u8(flag)
            .u8(d.0 as u8)
            .u8(d.1 as u8)
            .u32(r0 as u32)
            .u32(c0 as u32);
    }
    fs::write(dir.join("images.spkd"), enc.finish())?;

    let mut labels = String::new();
    for s in &ds.samples {
        let row: Vec<String> = s
            .spectrum
            .values()
            .iter()
            .map(|v| format!("{v:?}"))
            .collect();
        labels.push_str(&row.join(","));
        labels.push('\n');
    }
    fs::write(dir.join("labels.csv"), labels)?;

    let p = &ds.provenance;
    let mut m = Manifest::new();
    m.set("samples", ds.len())
        .set("split", ds.split)
        .set("roi", format!("{h}x{w}"))
        .set("channels", ds.channels())
        .set("seed", p.seed)
        .set("sampler", p.sampler)
        .set("noise", p.perturbation.noise_level)
        .set("shift", p.perturbation.shift_one_pixel)
        .set(
            "matrix_fingerprint",
            format!("{:08x}", p.matrix_fingerprint),
        )
        .set("dtype", dtype.name());
    m.write(dir.join("manifest.txt"))
}

pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let m = Manifest::read(dir.join("manifest.txt"))?;
    let bytes = fs::read(dir.join("images.spkd"))?;
    let mut dec = Decoder::open(&bytes, SPKD_MAGIC, SPKD_VERSION)?;
    let n = dec.u32()? as usize;
    let h = dec.u32()? as usize;
    let w = dec.u32()? as usize;
    let dtype = Dtype::from_tag(dec.u8()?)?;
    let total = crate::format::checked_dims(&[n as u32, h as u32, w as u32])?;
    let pixels = dec.values(total, dtype)?;
    let mut shifts = Vec::with_capacity(n);
    for _ in 0..n {
        let flag = dec.u8()?;
        let dr = dec.u8()? as i8;
        let dc = dec.u8()? as i8;
        let origin = (dec.u32()? as usize, dec.u32()? as usize);
        shifts.push(((flag == 1).then_some((dr, dc)), origin));
    }
    dec.expect_end()?;

    let text = fs::read_to_string(dir.join("labels.csv"))?;
    let spectra = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let values = l
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::Format(FormatError::Malformed("labels.csv".into())))?;
            Spectrum::new(values)
        })
        .collect::<Result<Vec<_>>>()?;
    check_len("dataset labels vs images", n, spectra.len())?;

    let samples = spectra
        .into_iter()
        .zip(shifts)
        .enumerate()
        .map(|(i, (spectrum, (shift, origin)))| {
            let image = SpeckleImage::with_origin(
                h,
                w,
                pixels[i * h * w..(i + 1) * h * w].to_vec(),
                origin,
            )?;
            Ok(Sample {
                image,
                spectrum,
                shift,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let fingerprint = u32::from_str_radix(m.require("matrix_fingerprint")?, 16)
        .map_err(|_| Error::Format(FormatError::Malformed("matrix_fingerprint".into())))?;
    let provenance = Provenance {
        seed: m.parse_value("seed")?,
        sampler: m.require("sampler")?.parse()?,
        perturbation: Perturbation {
            noise_level: m.parse_value("noise")?,
            shift_one_pixel: m.parse_value("shift")?,
        },
        matrix_fingerprint: fingerprint,
    };
    Dataset::new(samples, m.require("split")?.parse()?, provenance)
}

/// Color raster with per-pixel RGB intensities in [0, 1], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, pixels: Vec<[f64; 3]>) -> Result<Self> {
        check_len("rgb raster", height * width, pixels.len())?;
        if pixels.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("RGB intensities must lie in [0, 1]"));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }
}

/// Procedural test rasters: a colored disk over a two-color gradient, all
/// parameters drawn from `rng`.
pub fn synthetic_rgb_images(
    n: usize,
    height: usize,
    width: usize,
    rng: &mut SpeckleRng,
) -> Vec<RgbImage> {
    (0..n)
        .map(|_| {
            let bg0: [f64; 3] = std::array::from_fn(|_| rng.uniform());
            let bg1: [f64; 3] = std::array::from_fn(|_| rng.uniform());
            let fg: [f64; 3] = std::array::from_fn(|_| rng.uniform());
            let cy = rng.uniform() * height as f64;
            let cx = rng.uniform() * width as f64;
            let radius = (0.2 + 0.3 * rng.uniform()) * height.min(width) as f64;
            let pixels = (0..height * width)
                .map(|p| {
                    let (r, c) = ((p / width) as f64, (p % width) as f64);
                    if (r - cy).powi(2) + (c - cx).powi(2) <= radius * radius {
                        fg
                    } else {
                        let t = if width > 1 {
                            c / (width - 1) as f64
                        } else {
                            0.0
                        };
                        std::array::from_fn(|k| bg0[k] * (1.0 - t) + bg1[k] * t)
                    }
                })
                .collect();
            RgbImage {
                height,
                width,
                pixels,
            }
        })
        .collect()
}

/// Per raster position: the fiber's speckle image and its encoded spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbEncoding {
    pub height: usize,
    pub width: usize,
    pub n_images: usize,
    /// Channel left dark everywhere; its reconstructed energy measures cross-talk.
    pub blank_channel: usize,
    pub images: Vec<SpeckleImage>,
    pub spectra: Vec<Spectrum>,
}

/// Encodes image `k`'s R, G, B planes into channels `3k`, `3k+1`, `3k+2`.
/// Raster position `p` is carried by fiber `p`; every channel from `3 * n`
/// upward stays zero.
pub fn encode_rgb_images(
    images: &[RgbImage],
    fibers: &[TransmissionMatrix],
) -> Result<RgbEncoding> {
    let first = images
        .first()
        .ok_or_else(|| Error::invalid("at least one RGB image is required"))?;
    let (h, w) = (first.height, first.width);
    if images.iter().any(|im| im.height != h || im.width != w) {
        return Err(Error::invalid("RGB images must share raster dimensions"));
    }
    check_len("rgb raster positions vs fibers", fibers.len(), h * w)?;
    let y = fibers[0].channels();
    let blank = 3 * images.len();
    if blank >= y {
        return Err(Error::invalid(format!(
            "{} RGB images need {} channels plus a blank one; fibers have {y}",
            images.len(),
            blank
        )));
    }
    let mut spectra = Vec::with_capacity(h * w);
    let mut speckles = Vec::with_capacity(h * w);
    for (p, fiber) in fibers.iter().enumerate() {
        let mut values = vec![0.0; y];
        for (k, im) in images.iter().enumerate() {
            values[3 * k..3 * k + 3].copy_from_slice(&im.pixels[p]);
        }
        let s = Spectrum::new(values)?;
        speckles.push(render_speckle(fiber, &s)?);
        spectra.push(s);
    }
    Ok(RgbEncoding {
        height: h,
        width: w,
        n_images: images.len(),
        blank_channel: blank,
        images: speckles,
        spectra,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specklegen::{generate_fiber, FiberModel};

    #[test]
    fn full_support_when_n_equals_y() {
        let mut rng = SpeckleRng::new(1);
        let s = sample_sparse_spectrum(&mut rng, 43, 43).unwrap();
        assert_eq!(s.support_size(), 43);
        assert!((s.peak() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn single_line_has_unit_peak() {
        let mut rng = SpeckleRng::new(2);
        let s = sample_sparse_spectrum(&mut rng, 43, 1).unwrap();
        assert_eq!(s.support_size(), 1);
        assert_eq!(s.peak(), 1.0);
    }

    #[test]
    fn n_lambda_out_of_range() {
        let mut rng = SpeckleRng::new(3);
        assert!(sample_sparse_spectrum(&mut rng, 43, 0).is_err());
        assert!(sample_sparse_spectrum(&mut rng, 43, 44).is_err());
    }

    #[test]
    fn channels_are_hit_uniformly() {
        let mut rng = SpeckleRng::new(4);
        let mut hits = [0usize; 43];
        let draws = 10_000;
        for _ in 0..draws {
            let s = sample_sparse_spectrum(&mut rng, 43, 10).unwrap();
            for (j, v) in s.values().iter().enumerate() {
                if *v > 0.0 {
                    hits[j] += 1;
                }
            }
        }
        let expected = 10.0 / 43.0;
        for (j, h) in hits.iter().enumerate() {
            let f = *h as f64 / draws as f64;
            assert!((f - expected).abs() < 0.02, "channel {j}: {f}");
        }
    }

    #[test]
    fn tiny_walk_step_is_nearly_constant() {
        let mut rng = SpeckleRng::new(5);
        let s = sample_dense_spectrum(&mut rng, 43, 1e-6).unwrap();
        let min = s.values().iter().copied().fold(f64::MAX, f64::min);
        assert!(1.0 - min < 1e-3, "min {min}");
    }

    #[test]
    fn walk_steps_are_bounded_before_normalization() {
        let mut rng = SpeckleRng::new(6);
        for _ in 0..200 {
            let s = dense_raw(&mut rng, 43, 0.2).unwrap();
            for pair in s.values().windows(2) {
                assert!((pair[1] - pair[0]).abs() <= 0.2 + 1e-15);
            }
        }
    }

    #[test]
    fn dense_autocorrelation_decays_with_lag() {
        let mut rng = SpeckleRng::new(7);
        let lag_corr = |lag: usize, rng: &mut SpeckleRng| -> f64 {
            let mut acc = 0.0;
            let n = 2000;
            let spectra: Vec<Spectrum> = (0..n)
                .map(|_| sample_dense_spectrum(rng, 43, 0.2).unwrap())
                .collect();
            for s in &spectra {
                let v = s.values();
                acc += crate::stats::pearson(&v[..43 - lag], &v[lag..]);
            }
            acc / n as f64
        };
        let c1 = lag_corr(1, &mut rng);
        let c5 = lag_corr(5, &mut rng);
        assert!(c1 > c5, "lag1 {c1} lag5 {c5}");
    }

    #[test]
    fn zero_noise_is_identity() {
        let img = SpeckleImage::new(2, 2, vec![1., 2., 3., 4.]).unwrap();
        assert_eq!(add_noise(&img, 0.0, &mut SpeckleRng::new(1)).unwrap(), img);
    }

    #[test]
    fn noise_sigma_matches_mean_reference() {
        let n = 100_000;
        let img = SpeckleImage::new(1, n, vec![2.0; n]).unwrap();
        let noisy = add_noise(&img, 0.1, &mut SpeckleRng::new(8)).unwrap();
        let diffs: Vec<f64> = noisy
            .pixels()
            .iter()
            .zip(img.pixels())
            .map(|(a, b)| a - b)
            .collect();
        let sd = crate::stats::std_dev(&diffs);
        assert!((sd - 0.2).abs() < 0.05 * 0.2, "sd {sd}");
        assert!(noisy.pixels().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn heavy_noise_stays_non_negative() {
        let img = SpeckleImage::new(10, 10, (0..100).map(|v| (v % 3) as f64).collect()).unwrap();
        let noisy = add_noise(&img, 1.0, &mut SpeckleRng::new(9)).unwrap();
        assert!(noisy.pixels().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn shift_equals_crop_at_shifted_origin() {
        let mut rng = SpeckleRng::new(10);
        let frame = SpeckleImage::new(8, 8, (0..64).map(|v| v as f64).collect()).unwrap();
        for _ in 0..20 {
            let (img, d) = shift_roi(&frame, (2, 2), (4, 4), &mut rng).unwrap();
            let origin = ((2 + d.0 as isize) as usize, (2 + d.1 as isize) as usize);
            assert_eq!(img, crop_roi(&frame, origin, (4, 4)).unwrap());
            assert!(d != (0, 0));
        }
    }

    #[test]
    fn shift_directions_are_uniform() {
        let mut rng = SpeckleRng::new(11);
        let frame = SpeckleImage::zeros(6, 6);
        let mut counts = [0usize; 8];
        let draws = 8000;
        for _ in 0..draws {
            let (_, d) = shift_roi(&frame, (1, 1), (4, 4), &mut rng).unwrap();
            counts[SHIFT_DIRECTIONS.iter().position(|x| *x == d).unwrap()] += 1;
        }
        for c in counts {
            let f = c as f64 / draws as f64;
            assert!((f - 0.125).abs() < 0.03, "{f}");
        }
    }

    #[test]
    fn zero_margin_shift_is_rejected() {
        let frame = SpeckleImage::zeros(4, 4);
        assert!(shift_roi(&frame, (0, 0), (4, 4), &mut SpeckleRng::new(1)).is_err());
    }

    fn small_fiber() -> TransmissionMatrix {
        generate_fiber(&FiberModel::default().with_seed(3), (8, 8), 12).unwrap()
    }

    #[test]
    fn unperturbed_images_equal_their_renders() {
        let a = small_fiber();
        let spec = DatasetSpec {
            sampler: SpectrumSampler::sparse_range(1, 6),
            n_samples: 30,
            split: Split::new(20, 5, 5),
            perturbation: Perturbation::NONE,
            roi: (6, 6),
        };
        let ds = build_dataset(&a, &spec, &mut SpeckleRng::new(4)).unwrap();
        let roi = a.crop_centered((6, 6)).unwrap();
        for s in ds.samples() {
            assert_eq!(s.image, render_speckle(&roi, &s.spectrum).unwrap());
        }
        assert_eq!(ds.train().len(), 20);
        assert_eq!(ds.val().len(), 5);
        assert_eq!(ds.test().len(), 5);
    }

    #[test]
    fn dataset_is_deterministic() {
        let a = small_fiber();
        let spec = DatasetSpec {
            sampler: SpectrumSampler::dense(0.2),
            n_samples: 40,
            split: Split::new(30, 5, 5),
            perturbation: Perturbation {
                noise_level: 0.1,
                shift_one_pixel: true,
            },
            roi: (6, 6),
        };
        let d1 = build_dataset(&a, &spec, &mut SpeckleRng::new(5)).unwrap();
        let d2 = build_dataset(&a, &spec, &mut SpeckleRng::new(5)).unwrap();
        assert_eq!(d1, d2);
        assert!(d1.samples().iter().all(|s| s.shift.is_some()));
    }

    #[test]
    fn split_must_sum() {
        let a = small_fiber();
        let spec = DatasetSpec {
            sampler: SpectrumSampler::sparse(1),
            n_samples: 10,
            split: Split::new(5, 2, 2),
            perturbation: Perturbation::NONE,
            roi: (8, 8),
        };
        assert!(build_dataset(&a, &spec, &mut SpeckleRng::new(1)).is_err());
    }

    #[test]
    fn split_presets() {
        assert_eq!(Split::FULL.total(), 31_000);
        assert_eq!(Split::DESK.total(), 11_000);
        let p = Split::proportional(31_000);
        assert_eq!(p, Split::FULL);
        assert_eq!("9000/1000/1000".parse::<Split>().unwrap(), Split::DESK);
    }

    #[test]
    fn sampler_text_round_trip() {
        for s in [
            SpectrumSampler::sparse(3),
            SpectrumSampler::sparse_range(1, 21),
            SpectrumSampler::dense(0.2),
        ] {
            assert_eq!(s.to_string().parse::<SpectrumSampler>().unwrap(), s);
        }
    }

    #[test]
    fn dataset_dir_round_trip() {
        let a = small_fiber();
        let spec = DatasetSpec {
            sampler: SpectrumSampler::dense(0.3),
            n_samples: 12,
            split: Split::new(8, 2, 2),
            perturbation: Perturbation {
                noise_level: 0.05,
                shift_one_pixel: true,
            },
            roi: (6, 6),
        };
        let ds = build_dataset(&a, &spec, &mut SpeckleRng::new(6)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path(), Dtype::F64).unwrap();
        assert_eq!(read_dataset(dir.path()).unwrap(), ds);
    }

    #[test]
    fn rgb_encoding_layout() {
        let fibers: Vec<TransmissionMatrix> = (0..4)
            .map(|i| generate_fiber(&FiberModel::default().with_seed(i), (8, 8), 43).unwrap())
            .collect();
        let mut images = synthetic_rgb_images(14, 2, 2, &mut SpeckleRng::new(1));
        images[5].pixels[3] = [1.0, 0.0, 0.0];
        let enc = encode_rgb_images(&images, &fibers).unwrap();
        assert_eq!(enc.blank_channel, 42);
        for s in &enc.spectra {
            assert_eq!(s.values()[42], 0.0);
        }
        let s3 = enc.spectra[3].values();
        assert_eq!(&s3[15..18], &[1.0, 0.0, 0.0]);
        assert_eq!(
            enc.images[3],
            render_speckle(&fibers[3], &enc.spectra[3]).unwrap()
        );
    }

    #[test]
    fn rgb_raster_mismatch_is_error() {
        let fibers = vec![small_fiber()];
        let images = synthetic_rgb_images(2, 2, 2, &mut SpeckleRng::new(1));
        assert!(encode_rgb_images(&images, &fibers).is_err());
    }
}
