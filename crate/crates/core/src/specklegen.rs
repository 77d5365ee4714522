//! Synthetic multimode-fiber transmission matrices.
//!
//! Each fiber core is modeled as a random superposition of guided modes. The
//! field at ROI pixel `r` for wavelength channel `j` is
//! `E_j(r) = sum_k a_k phi_k(r) exp(i beta_k j)`, and the camera records the
//! intensity `|E_j(r)|^2`. Mode profiles `phi_k` are products of low-order 2-D
//! cosine harmonics masked by the circular core aperture; complex amplitudes
//! `a_k` are circular Gaussian; per-channel propagation phases `beta_k` are
//! Gaussian with standard deviation `1 / decorrelation_length`, which makes the
//! ensemble intensity correlation between channels `j` and `j + d` fall off as
//! `exp(-(d / decorrelation_length)^2)`.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::domain::{
    centered_origin, default_labels, SpeckleImage, Spectrum, TransmissionMatrix, DEFAULT_CHANNELS,
};
use crate::error::{Error, Result};
use crate::format::{import_matrix, write_matrix, Dtype, Manifest};
use crate::rng::SpeckleRng;
use crate::stats::pearson;

/// Desk-scale defaults: 16 fibers, 43 channels, a 20x20 ROI inside a 24x24
/// generated patch (2 px margin for shift perturbations).
pub mod desk {
    pub const FIBERS: usize = 16;
    pub const CHANNELS: usize = super::DEFAULT_CHANNELS;
    pub const ROI: (usize, usize) = (20, 20);
    pub const PATCH: (usize, usize) = (24, 24);
    pub const MODES: usize = 30;
    pub const CORE_RADIUS_PX: f64 = 12.0;
    pub const DECORRELATION: f64 = 1.0;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiberModel {
    pub n_modes: usize,
    pub core_radius_px: f64,
    /// Channel separation at which the speckle correlation falls to 1/e.
    pub decorrelation_length: f64,
    pub seed: u64,
}

impl Default for FiberModel {
    fn default() -> Self {
        Self {
            n_modes: desk::MODES,
            core_radius_px: desk::CORE_RADIUS_PX,
            decorrelation_length: desk::DECORRELATION,
            seed: 0,
        }
    }
}

impl FiberModel {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_modes == 0 {
            return Err(Error::invalid("n_modes must be >= 1"));
        }
        if !(self.decorrelation_length > 0.0 && self.decorrelation_length.is_finite()) {
            return Err(Error::invalid(format!(
                "decorrelation_length must be > 0 (got {})",
                self.decorrelation_length
            )));
        }
        if !(self.core_radius_px > 0.0 && self.core_radius_px.is_finite()) {
            return Err(Error::invalid("core_radius_px must be > 0"));
        }
        Ok(())
    }
}

struct Mode {
    profile: Vec<f64>,
    amp_re: f64,
    amp_im: f64,
    beta: f64,
}

/// Generates one fiber's transmission matrix on an `roi_shape` grid centered
/// on the core. Columns are normalized to unit mean.
pub fn generate_fiber(
    model: &FiberModel,
    roi_shape: (usize, usize),
    n_channels: usize,
) -> Result<TransmissionMatrix> {
    model.validate()?;
    let (h, w) = roi_shape;
    if h == 0 || w == 0 {
        return Err(Error::invalid("roi_shape must be positive"));
    }
    if n_channels < 2 {
        return Err(Error::invalid(format!(
            "n_channels must be >= 2 (got {n_channels})"
        )));
    }
    let x = h * w;
    if model.n_modes > x {
        return Err(Error::invalid(format!(
            "n_modes {} exceeds the {x} ROI pixels (underdetermined mode basis)",
            model.n_modes
        )));
    }

    let mut rng = SpeckleRng::new(model.seed);
    let radius = model.core_radius_px;
    let k_max = (model.n_modes as f64).sqrt() / radius;
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;

    let modes: Vec<Mode> = (0..model.n_modes)
        .map(|_| {
            let kx = rng.uniform_range(-k_max, k_max);
            let ky = rng.uniform_range(-k_max, k_max);
            let px = rng.uniform_range(0.0, 2.0 * PI);
            let py = rng.uniform_range(0.0, 2.0 * PI);
            let profile = (0..x)
                .map(|p| {
                    let yy = (p / w) as f64 - cy;
                    let xx = (p % w) as f64 - cx;
                    if yy * yy + xx * xx <= radius * radius {
                        (kx * xx + px).cos() * (ky * yy + py).cos()
                    } else {
                        0.0
                    }
                })
                .collect();
            Mode {
                profile,
                amp_re: rng.normal() / 2f64.sqrt(),
                amp_im: rng.normal() / 2f64.sqrt(),
                beta: rng.normal() / model.decorrelation_length,
            }
        })
        .collect();

    let mut columns = DMatrix::<f64>::zeros(x, n_channels);
    let mut re = vec![0.0; x];
    let mut im = vec![0.0; x];
    for j in 0..n_channels {
        re.iter_mut().for_each(|v| *v = 0.0);
        im.iter_mut().for_each(|v| *v = 0.0);
        for m in &modes {
            let (s, c) = (m.beta * j as f64).sin_cos();
            // a_k * exp(i beta_k j)
            let cr = m.amp_re * c - m.amp_im * s;
            let ci = m.amp_re * s + m.amp_im * c;
            for p in 0..x {
                re[p] += cr * m.profile[p];
                im[p] += ci * m.profile[p];
            }
        }
        let mut col = columns.column_mut(j);
        for p in 0..x {
            col[p] = re[p] * re[p] + im[p] * im[p];
        }
        let mean = col.mean();
        if !(mean > 0.0) {
            return Err(Error::invalid(
                "core aperture does not intersect the ROI (all-dark speckle)",
            ));
        }
        col /= mean;
    }
    TransmissionMatrix::new(columns, roi_shape, default_labels(n_channels))
}

/// Ordered set of fiber matrices laid out on a rectangular grid of cores.
#[derive(Debug, Clone, PartialEq)]
pub struct FiberArrayModel {
    fibers: Vec<TransmissionMatrix>,
    seeds: Vec<u64>,
    grid_layout: (usize, usize),
}

impl FiberArrayModel {
    pub fn new(fibers: Vec<TransmissionMatrix>, seeds: Vec<u64>) -> Result<Self> {
        if fibers.is_empty() {
            return Err(Error::invalid(
                "fiber array must contain at least one fiber",
            ));
        }
        let y = fibers[0].channels();
        let shape = fibers[0].roi_shape();
        if let Some((i, f)) = fibers
            .iter()
            .enumerate()
            .find(|(_, f)| f.channels() != y || f.roi_shape() != shape)
        {
            return Err(Error::invalid(format!(
                "fiber {i} has {} channels / roi {:?}; expected {y} / {shape:?}",
                f.channels(),
                f.roi_shape()
            )));
        }
        let cols = (fibers.len() as f64).sqrt().ceil() as usize;
        let rows = fibers.len().div_ceil(cols);
        Ok(Self {
            fibers,
            seeds,
            grid_layout: (rows, cols),
        })
    }

    pub fn fibers(&self) -> &[TransmissionMatrix] {
        &self.fibers
    }

    pub fn len(&self) -> usize {
        self.fibers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fibers.is_empty()
    }

    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    pub fn grid_layout(&self) -> (usize, usize) {
        self.grid_layout
    }

    pub fn channels(&self) -> usize {
        self.fibers[0].channels()
    }

    /// Shape of each fiber's generated patch.
    pub fn patch_shape(&self) -> (usize, usize) {
        self.fibers[0].roi_shape()
    }

    /// Full camera frame holding every patch on the grid, edge to edge.
    pub fn frame_shape(&self) -> (usize, usize) {
        let (ph, pw) = self.patch_shape();
        (self.grid_layout.0 * ph, self.grid_layout.1 * pw)
    }

    /// Top-left corner of fiber `i`'s patch in the frame.
    pub fn fiber_origin(&self, i: usize) -> (usize, usize) {
        let (ph, pw) = self.patch_shape();
        let cols = self.grid_layout.1;
        ((i / cols) * ph, (i % cols) * pw)
    }

    /// Each fiber's ROI matrix, a centered `roi` crop of its patch.
    pub fn roi_matrices(&self, roi: (usize, usize)) -> Result<Vec<TransmissionMatrix>> {
        self.fibers.iter().map(|f| f.crop_centered(roi)).collect()
    }

    /// Renders a full frame where fiber `i` carries `spectra[i]`. Unused grid
    /// cells stay dark.
    pub fn render_frame(&self, spectra: &[Spectrum]) -> Result<SpeckleImage> {
        crate::domain::check_len("render_frame spectra", self.len(), spectra.len())?;
        let (fh, fw) = self.frame_shape();
        let (ph, pw) = self.patch_shape();
        let mut pixels = vec![0.0; fh * fw];
        for (i, (a, s)) in self.fibers.iter().zip(spectra).enumerate() {
            let patch = crate::domain::render_speckle(a, s)?;
            let (r0, c0) = self.fiber_origin(i);
            for r in 0..ph {
                let dst = (r0 + r) * fw + c0;
                pixels[dst..dst + pw].copy_from_slice(&patch.pixels()[r * pw..(r + 1) * pw]);
            }
        }
        SpeckleImage::new(fh, fw, pixels)
    }

    /// Frame-relative origin of fiber `i`'s centered `roi` window.
    pub fn roi_origin_in_frame(&self, i: usize, roi: (usize, usize)) -> Result<(usize, usize)> {
        let (r0, c0) = self.fiber_origin(i);
        let (dr, dc) = centered_origin(self.patch_shape(), roi)?;
        Ok((r0 + dr, c0 + dc))
    }

    /// Writes `fiber_NNNN.spkt` files plus `manifest.txt` into `dir`.
    pub fn write_dir(&self, dir: impl AsRef<Path>, dtype: Dtype, extra: &Manifest) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        for (i, f) in self.fibers.iter().enumerate() {
            write_matrix(f, dir.join(fiber_file_name(i)), dtype)?;
        }
        let mut m = extra.clone();
        let (h, w) = self.patch_shape();
        m.set("fibers", self.len())
            .set("channels", self.channels())
            .set("roi", format!("{h}x{w}"))
            .set(
                "grid",
                format!("{}x{}", self.grid_layout.0, self.grid_layout.1),
            )
            .set("dtype", dtype.name())
            .set(
                "fiber_seeds",
                self.seeds
                    .iter()
                    .map(u64::to_string)
                    .collect::<Vec<_>>()
                    .join(","),
            );
        m.write(dir.join("manifest.txt"))
    }

    pub fn read_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest = Manifest::read(dir.join("manifest.txt"))?;
        let n: usize = manifest.parse_value("fibers")?;
        let fibers = (0..n)
            .map(|i| import_matrix(dir.join(fiber_file_name(i))))
            .collect::<Result<Vec<_>>>()?;
        let seeds = manifest
            .get("fiber_seeds")
            .map(|s| s.split(',').filter_map(|v| v.parse().ok()).collect())
            .unwrap_or_default();
        Self::new(fibers, seeds)
    }
}

pub fn fiber_file_name(i: usize) -> String {
    format!("fiber_{i:04}.spkt")
}

/// Generates `n_fibers` independent fibers from `template`, each seeded from `rng`.
pub fn generate_array(
    rng: &mut SpeckleRng,
    n_fibers: usize,
    template: &FiberModel,
    roi_shape: (usize, usize),
    n_channels: usize,
) -> Result<FiberArrayModel> {
    if n_fibers == 0 {
        return Err(Error::invalid("n_fibers must be >= 1"));
    }
    let seeds: Vec<u64> = (0..n_fibers).map(|_| rng.split().seed()).collect();
    let fibers = seeds
        .par_iter()
        .map(|&seed| generate_fiber(&template.with_seed(seed), roi_shape, n_channels))
        .collect::<Result<Vec<_>>>()?;
    FiberArrayModel::new(fibers, seeds)
}

/// Mean Pearson correlation between columns `j` and `j + d`, for `d` in `0..Y`.
pub fn spectral_correlation(a: &TransmissionMatrix) -> Vec<f64> {
    let y = a.channels();
    let cols: Vec<Vec<f64>> = (0..y)
        .map(|j| a.matrix().column(j).iter().copied().collect())
        .collect();
    (0..y)
        .map(|d| {
            let n = y - d;
            (0..n).map(|j| pearson(&cols[j], &cols[j + d])).sum::<f64>() / n as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;

    fn desk_model(seed: u64) -> FiberModel {
        FiberModel::default().with_seed(seed)
    }

    #[test]
    fn same_seed_bit_identical() {
        let a = generate_fiber(&desk_model(9), desk::PATCH, 43).unwrap();
        let b = generate_fiber(&desk_model(9), desk::PATCH, 43).unwrap();
        assert_eq!(a, b);
        let c = generate_fiber(&desk_model(10), desk::PATCH, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn columns_are_non_negative_unit_mean() {
        let a = generate_fiber(&desk_model(1), desk::PATCH, 43).unwrap();
        for j in 0..a.channels() {
            let col = a.matrix().column(j);
            assert!(col.iter().all(|v| *v >= 0.0));
            assert!((col.mean() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn correlation_falls_to_one_over_e_near_decorrelation_length() {
        let e_inv = (-1.0f64).exp();
        for (decorr, seeds) in [(2.0, 0..6u64), (4.0, 10..16)] {
            let mut curve = vec![0.0; 43];
            let n = seeds.clone().count() as f64;
            for seed in seeds {
                let m = FiberModel {
                    decorrelation_length: decorr,
                    ..desk_model(seed)
                };
                let c = spectral_correlation(&generate_fiber(&m, desk::PATCH, 43).unwrap());
                for (acc, v) in curve.iter_mut().zip(c) {
                    *acc += v / n;
                }
            }
            let crossing = curve.iter().position(|c| *c < e_inv).unwrap() as f64;
            assert!(
                crossing >= 0.5 * decorr && crossing <= 1.5 * decorr + 1.0,
                "decorr {decorr}: 1/e crossing at {crossing}, curve {curve:?}"
            );
        }
    }

    #[test]
    fn single_mode_has_no_wavelength_speckle() {
        let m = FiberModel {
            n_modes: 1,
            ..desk_model(3)
        };
        let a = generate_fiber(&m, (8, 8), 6).unwrap();
        for j in 1..6 {
            for p in 0..64 {
                let (x, y) = (a.matrix()[(p, 0)], a.matrix()[(p, j)]);
                assert!((x - y).abs() <= 1e-12 * x.max(1.0));
            }
        }
        let corr = spectral_correlation(&a);
        assert!(corr.iter().all(|c| (c - 1.0).abs() < 1e-9));
    }

    #[test]
    fn too_many_modes_is_rejected() {
        let m = FiberModel {
            n_modes: 26,
            ..desk_model(0)
        };
        assert!(generate_fiber(&m, (5, 5), 43).is_err());
    }

    #[test]
    fn zero_lag_correlation_is_one() {
        let a = generate_fiber(&desk_model(4), desk::PATCH, 43).unwrap();
        let c = spectral_correlation(&a);
        assert!((c[0] - 1.0).abs() < 1e-12);
        assert_eq!(c.len(), 43);
    }

    #[test]
    fn identical_columns_correlate_everywhere() {
        let col: Vec<f64> = (0..9).map(|v| (v * v) as f64).collect();
        let m = DMatrix::from_fn(9, 5, |r, _| col[r]);
        let a = TransmissionMatrix::with_default_labels(m, (3, 3)).unwrap();
        assert!(spectral_correlation(&a)
            .iter()
            .all(|c| (c - 1.0).abs() < 1e-12));
    }

    #[test]
    fn short_decorrelation_is_gone_by_lag_ten() {
        let m = FiberModel {
            decorrelation_length: 2.0,
            ..desk_model(5)
        };
        let c = spectral_correlation(&generate_fiber(&m, desk::PATCH, 43).unwrap());
        assert!(c[10] < 0.2, "lag-10 correlation {}", c[10]);
    }

    #[test]
    fn singleton_array() {
        let mut rng = SpeckleRng::new(1);
        let arr = generate_array(&mut rng, 1, &FiberModel::default(), (8, 8), 5).unwrap();
        assert_eq!(arr.len(), 1);
        assert_eq!(arr.grid_layout(), (1, 1));
    }

    #[test]
    fn array_is_deterministic_and_fibers_differ() {
        let arr1 = generate_array(
            &mut SpeckleRng::new(77),
            4,
            &FiberModel::default(),
            (12, 12),
            8,
        )
        .unwrap();
        let arr2 = generate_array(
            &mut SpeckleRng::new(77),
            4,
            &FiberModel::default(),
            (12, 12),
            8,
        )
        .unwrap();
        assert_eq!(arr1, arr2);
        assert_ne!(arr1.fibers()[0], arr1.fibers()[1]);
    }

    #[test]
    fn fibers_are_unrelated_permutation_test() {
        // Same-channel correlation between two fibers should look like the
        // correlation between randomly paired channels of the same two fibers.
        let arr = generate_array(
            &mut SpeckleRng::new(5),
            2,
            &FiberModel::default(),
            desk::PATCH,
            43,
        )
        .unwrap();
        let (a, b) = (&arr.fibers()[0], &arr.fibers()[1]);
        let col = |m: &TransmissionMatrix, j: usize| -> Vec<f64> {
            m.matrix().column(j).iter().copied().collect()
        };
        let stat = |perm: &[usize]| -> f64 {
            (0..43)
                .map(|j| pearson(&col(a, j), &col(b, perm[j])))
                .sum::<f64>()
                / 43.0
        };
        let identity: Vec<usize> = (0..43).collect();
        let observed = stat(&identity);
        let mut rng = SpeckleRng::new(99);
        let trials = 400;
        let mut as_extreme = 0;
        for _ in 0..trials {
            let mut perm = identity.clone();
            rng.shuffle(&mut perm);
            if stat(&perm) >= observed {
                as_extreme += 1;
            }
        }
        let p = (as_extreme + 1) as f64 / (trials + 1) as f64;
        assert!(
            p > 0.01,
            "fibers look related: observed {observed}, p = {p}"
        );
    }

    #[test]
    fn gram_matrix_is_well_conditioned_when_oversampled() {
        for n_modes in [desk::MODES, 43] {
            let m = FiberModel {
                n_modes,
                ..desk_model(2)
            };
            let a = generate_fiber(&m, desk::PATCH, 43)
                .unwrap()
                .crop_centered(desk::ROI)
                .unwrap();
            let gram = a.matrix().transpose() * a.matrix();
            let eig = SymmetricEigen::new(gram).eigenvalues;
            let (lo, hi) = eig
                .iter()
                .fold((f64::MAX, 0.0f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
            let cond = hi / lo;
            assert!(lo > 0.0 && cond.is_finite() && cond < 1e10, "cond {cond}");
        }
    }

    #[test]
    fn frame_layout_places_patches() {
        let arr = generate_array(
            &mut SpeckleRng::new(3),
            5,
            &FiberModel::default(),
            (6, 6),
            4,
        )
        .unwrap();
        assert_eq!(arr.grid_layout(), (2, 3));
        assert_eq!(arr.frame_shape(), (12, 18));
        let spectra: Vec<Spectrum> = (0..5).map(|i| Spectrum::delta(4, i % 4)).collect();
        let frame = arr.render_frame(&spectra).unwrap();
        let patch4 = crate::domain::crop_roi(&frame, arr.fiber_origin(4), (6, 6)).unwrap();
        assert_eq!(patch4.pixels(), arr.fibers()[4].column_image(0).pixels());
    }

    #[test]
    fn array_dir_round_trip() {
        let arr = generate_array(
            &mut SpeckleRng::new(8),
            3,
            &FiberModel::default(),
            (6, 6),
            4,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        arr.write_dir(dir.path(), Dtype::F64, &Manifest::new())
            .unwrap();
        assert_eq!(FiberArrayModel::read_dir(dir.path()).unwrap(), arr);
    }
}
