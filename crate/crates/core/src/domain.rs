//! Shared domain types and the linear speckle forward model.
//!
//! A fiber core maps a spectrum `s` (one non-negative intensity per calibrated
//! wavelength channel, `Y` channels) to a monochrome speckle image `m` over a
//! region of interest of `X` pixels through its transmission matrix:
//! `m = A s`, with column `j` of `A` the speckle pattern of channel `j`.
//!
//! Images are vectorized row-major: pixel `(r, c)` of an `h x w` ROI is entry
//! `r * w + c`.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Default number of calibrated wavelength channels.
pub const DEFAULT_CHANNELS: usize = 43;

/// Non-negative intensity per wavelength channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    values: Vec<f64>,
}

impl Spectrum {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(Error::invalid(format!(
                "spectrum channel {i} has value {v}; intensities must be finite and >= 0"
            )));
        }
        Ok(Self { values })
    }

    /// Builds a spectrum, clamping negatives (and NaN) to zero.
    pub fn from_clamped(mut values: Vec<f64>) -> Self {
        for v in &mut values {
            if !(*v > 0.0) || !v.is_finite() {
                *v = if v.is_infinite() && *v > 0.0 {
                    f64::MAX
                } else {
                    0.0
                };
            }
        }
        Self { values }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            values: vec![0.0; n],
        }
    }

    /// Unit spectrum with all intensity in channel `j`.
    pub fn delta(n: usize, j: usize) -> Self {
        let mut values = vec![0.0; n];
        values[j] = 1.0;
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Number of non-zero channels (N_lambda).
    pub fn support_size(&self) -> usize {
        self.values.iter().filter(|v| **v > 0.0).count()
    }

    pub fn peak(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Rescaled so the largest channel is 1. All-zero spectra are returned unchanged.
    pub fn peak_normalized(&self) -> Self {
        let peak = self.peak();
        if peak > 0.0 {
            Self {
                values: self.values.iter().map(|v| v / peak).collect(),
            }
        } else {
            self.clone()
        }
    }

    /// Weighted sum `a * self + b * other`; weights must be non-negative.
    pub fn combine(&self, a: f64, other: &Spectrum, b: f64) -> Result<Self> {
        check_len("spectrum combine", self.len(), other.len())?;
        Spectrum::new(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        )
    }
}

/// Monochrome ROI pixel intensities, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeckleImage {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
    roi_origin: (usize, usize),
}

impl SpeckleImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        Self::with_origin(height, width, pixels, (0, 0))
    }

    pub fn with_origin(
        height: usize,
        width: usize,
        pixels: Vec<f64>,
        roi_origin: (usize, usize),
    ) -> Result<Self> {
        check_len("speckle image pixels", height * width, pixels.len())?;
        if let Some(v) = pixels.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::invalid(format!(
                "pixel value {v}; intensities must be finite and >= 0"
            )));
        }
        Ok(Self {
            height,
            width,
            pixels,
            roi_origin,
        })
    }

    /// Skips validation; callers guarantee non-negative finite pixels.
    pub(crate) fn from_parts(
        height: usize,
        width: usize,
        pixels: Vec<f64>,
        roi_origin: (usize, usize),
    ) -> Self {
        debug_assert_eq!(pixels.len(), height * width);
        Self {
            height,
            width,
            pixels,
            roi_origin,
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::from_parts(height, width, vec![0.0; height * width], (0, 0))
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// ROI pixel count X.
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn roi_origin(&self) -> (usize, usize) {
        self.roi_origin
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn mean(&self) -> f64 {
        if self.pixels.is_empty() {
            0.0
        } else {
            self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
        }
    }

    pub fn max(&self) -> f64 {
        self.pixels.iter().copied().fold(0.0, f64::max)
    }
}

/// Crops an `h x w` window whose top-left corner sits at `origin` (relative to
/// `frame`). The result records its absolute origin in the parent frame.
pub fn crop_roi(
    frame: &SpeckleImage,
    origin: (usize, usize),
    shape: (usize, usize),
) -> Result<SpeckleImage> {
    let (r0, c0) = origin;
    let (h, w) = shape;
    if h == 0 || w == 0 || r0 + h > frame.height || c0 + w > frame.width {
        return Err(Error::OutOfBounds {
            row: r0 as isize,
            col: c0 as isize,
            height: h,
            width: w,
            frame_height: frame.height,
            frame_width: frame.width,
        });
    }
    let mut pixels = Vec::with_capacity(h * w);
    for r in r0..r0 + h {
        let start = r * frame.width + c0;
        pixels.extend_from_slice(&frame.pixels[start..start + w]);
    }
    Ok(SpeckleImage::from_parts(
        h,
        w,
        pixels,
        (frame.roi_origin.0 + r0, frame.roi_origin.1 + c0),
    ))
}

/// Per-fiber map from `Y` wavelength channels to `X` ROI pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionMatrix {
    columns: DMatrix<f64>,
    roi_shape: (usize, usize),
    wavelength_labels: Vec<String>,
}

impl TransmissionMatrix {
    pub fn new(
        columns: DMatrix<f64>,
        roi_shape: (usize, usize),
        wavelength_labels: Vec<String>,
    ) -> Result<Self> {
        check_len(
            "transmission matrix rows vs roi shape",
            roi_shape.0 * roi_shape.1,
            columns.nrows(),
        )?;
        check_len(
            "transmission matrix wavelength labels",
            columns.ncols(),
            wavelength_labels.len(),
        )?;
        if columns.nrows() == 0 || columns.ncols() == 0 {
            return Err(Error::invalid("transmission matrix must be non-empty"));
        }
        if let Some(v) = columns.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::invalid(format!(
                "transmission matrix entry {v}; entries must be finite and >= 0"
            )));
        }
        Ok(Self {
            columns,
            roi_shape,
            wavelength_labels,
        })
    }

    /// Matrix with labels `ch00`, `ch01`, ...
    pub fn with_default_labels(columns: DMatrix<f64>, roi_shape: (usize, usize)) -> Result<Self> {
        let labels = default_labels(columns.ncols());
        Self::new(columns, roi_shape, labels)
    }

    pub fn pixels(&self) -> usize {
        self.columns.nrows()
    }

    pub fn channels(&self) -> usize {
        self.columns.ncols()
    }

    pub fn roi_shape(&self) -> (usize, usize) {
        self.roi_shape
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.columns
    }

    pub fn wavelength_labels(&self) -> &[String] {
        &self.wavelength_labels
    }

    pub fn sampling_ratio(&self) -> SamplingRatio {
        SamplingRatio::from_counts(self.pixels(), self.channels())
    }

    /// Column `j` reshaped as an image.
    pub fn column_image(&self, j: usize) -> SpeckleImage {
        let (h, w) = self.roi_shape;
        SpeckleImage::from_parts(
            h,
            w,
            self.columns.column(j).iter().copied().collect(),
            (0, 0),
        )
    }

    /// Sub-matrix for an `h x w` pixel window at `origin` of the ROI grid.
    pub fn crop(&self, origin: (usize, usize), shape: (usize, usize)) -> Result<Self> {
        let (r0, c0) = origin;
        let (h, w) = shape;
        let (fh, fw) = self.roi_shape;
        if h == 0 || w == 0 || r0 + h > fh || c0 + w > fw {
            return Err(Error::OutOfBounds {
                row: r0 as isize,
                col: c0 as isize,
                height: h,
                width: w,
                frame_height: fh,
                frame_width: fw,
            });
        }
        let rows: Vec<usize> = (r0..r0 + h)
            .flat_map(|r| (c0..c0 + w).map(move |c| r * fw + c))
            .collect();
        let columns = self.columns.select_rows(rows.iter());
        Ok(Self {
            columns,
            roi_shape: shape,
            wavelength_labels: self.wavelength_labels.clone(),
        })
    }

    /// Centered `h x w` crop.
    pub fn crop_centered(&self, shape: (usize, usize)) -> Result<Self> {
        let origin = centered_origin(self.roi_shape, shape)?;
        self.crop(origin, shape)
    }

    /// CRC32 over dimensions and entry bits; identifies the calibration a
    /// reconstructor was fitted to.
    pub fn fingerprint(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        h.update(&(self.pixels() as u64).to_le_bytes());
        h.update(&(self.channels() as u64).to_le_bytes());
        h.update(&(self.roi_shape.0 as u64).to_le_bytes());
        h.update(&(self.roi_shape.1 as u64).to_le_bytes());
        for v in self.columns.iter() {
            h.update(&v.to_bits().to_le_bytes());
        }
        h.finalize()
    }
}

pub(crate) fn default_labels(n: usize) -> Vec<String> {
    (0..n).map(|j| format!("ch{j:02}")).collect()
}

/// Top-left origin of a `shape` window centered in a `frame` grid.
pub fn centered_origin(frame: (usize, usize), shape: (usize, usize)) -> Result<(usize, usize)> {
    if shape.0 == 0 || shape.1 == 0 || shape.0 > frame.0 || shape.1 > frame.1 {
        return Err(Error::OutOfBounds {
            row: 0,
            col: 0,
            height: shape.0,
            width: shape.1,
            frame_height: frame.0,
            frame_width: frame.1,
        });
    }
    Ok(((frame.0 - shape.0) / 2, (frame.1 - shape.1) / 2))
}

/// Pixels per wavelength channel, `X / Y`.
///
/// The figures this convention follows label the quantity "Y/X" while quoting
/// pixel-over-channel numbers (25 / 43 = 0.58 for a 5x5 ROI); the numbers win.
/// Values above 1 are oversampled, below 1 undersampled (compressive).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct SamplingRatio(f64);

impl SamplingRatio {
    pub fn from_counts(pixels: usize, channels: usize) -> Self {
        SamplingRatio(pixels as f64 / channels as f64)
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_oversampled(self) -> bool {
        self.0 > 1.0
    }

    /// Side of the square ROI whose ratio is closest to `target` for `channels` channels.
    pub fn square_side_for(target: f64, channels: usize) -> usize {
        let side = (target * channels as f64).sqrt().round() as usize;
        side.max(1)
    }
}

impl fmt::Display for SamplingRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}", self.0)
    }
}

/// Renders the speckle image of spectrum `s`: `reshape(A s)`.
pub fn render_speckle(a: &TransmissionMatrix, s: &Spectrum) -> Result<SpeckleImage> {
    check_len("render_speckle spectrum", a.channels(), s.len())?;
    let v = DVector::from_column_slice(s.values());
    let m = a.matrix() * v;
    let (h, w) = a.roi_shape();
    // Products of non-negative operands; max() only scrubs -0.0.
    let pixels = m.iter().map(|x| x.max(0.0)).collect();
    Ok(SpeckleImage::from_parts(h, w, pixels, (0, 0)))
}

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}
