//! Tikhonov-regularized inversion.
//!
//! The reconstruction operator `P = (A^T A + lambda I)^{-1} A^T` is computed
//! once per fiber with a Cholesky factorization; reconstructing an image is a
//! single `Y x X` matrix-vector product followed by clamping negatives to zero.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::domain::{check_len, SpeckleImage, Spectrum, TransmissionMatrix};
use crate::error::{Error, Result};
use crate::format::{Decoder, Encoder};
use crate::recon::Reconstructor;
use crate::stats::pearson;

pub const SPKR_MAGIC: [u8; 4] = *b"SPKR";
pub const SPKR_VERSION: u16 = 1;

/// Relative residual the fitted operator must reach on the normal equations.
const RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearReconstructor {
    pinv: DMatrix<f64>,
    lambda: f64,
    source_matrix_id: u32,
    roi_shape: (usize, usize),
}

impl LinearReconstructor {
    pub fn pinv(&self) -> &DMatrix<f64> {
        &self.pinv
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn source_matrix_id(&self) -> u32 {
        self.source_matrix_id
    }

    /// `P m` before clamping.
    pub fn reconstruct_raw(&self, image: &SpeckleImage) -> Result<Vec<f64>> {
        check_len(
            "tikhonov reconstruct pixels",
            self.pinv.ncols(),
            image.len(),
        )?;
        let m = DVector::from_column_slice(image.pixels());
        Ok((&self.pinv * m).iter().copied().collect())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::new(SPKR_MAGIC, SPKR_VERSION);
        enc.u32(self.pinv.nrows() as u32)
            .u32(self.pinv.ncols() as u32)
            .u32(self.roi_shape.0 as u32)
            .u32(self.roi_shape.1 as u32)
            .f64(self.lambda)
            .u32(self.source_matrix_id)
            .values(self.pinv.iter().copied(), crate::format::Dtype::F64);
        enc.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut dec = Decoder::open(bytes, SPKR_MAGIC, SPKR_VERSION)?;
        let y = dec.u32()?;
        let x = dec.u32()?;
        let h = dec.u32()? as usize;
        let w = dec.u32()? as usize;
        let lambda = dec.f64()?;
        let source_matrix_id = dec.u32()?;
        let n = crate::format::checked_dims(&[y, x])?;
        let values = dec.f64_vec(n)?;
        dec.expect_end()?;
        check_len("SPKR roi shape", x as usize, h * w)?;
        Ok(Self {
            pinv: DMatrix::from_vec(y as usize, x as usize, values),
            lambda,
            source_matrix_id,
            roi_shape: (h, w),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}

impl Reconstructor for LinearReconstructor {
    type Scratch = ();

    fn reconstruct_with(&self, image: &SpeckleImage, _: &mut ()) -> Result<Spectrum> {
        reconstruct(self, image)
    }

    fn roi_shape(&self) -> (usize, usize) {
        self.roi_shape
    }

    fn channels(&self) -> usize {
        self.pinv.nrows()
    }
}

/// Solves the ridge normal equations for the reconstruction operator.
pub fn fit_tikhonov(a: &TransmissionMatrix, lambda: f64) -> Result<LinearReconstructor> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!(
            "lambda must be finite and >= 0 (got {lambda})"
        )));
    }
    let at = a.matrix().transpose();
    let mut gram = &at * a.matrix();
    for i in 0..gram.nrows() {
        gram[(i, i)] += lambda;
    }
    let singular = || {
        Error::Singular(format!(
            "A^T A + {lambda} I is not positive definite to working precision; use lambda > 0"
        ))
    };
    let chol = gram.clone().cholesky().ok_or_else(singular)?;
    let mut pinv = chol.solve(&at);
    let scale = at.norm().max(f64::MIN_POSITIVE);
    let mut residual = &at - &gram * &pinv;
    if residual.norm() > RESIDUAL_TOL * scale {
        // One step of iterative refinement.
        pinv += chol.solve(&residual);
        residual = &at - &gram * &pinv;
        if residual.norm() > RESIDUAL_TOL * scale {
            return Err(singular());
        }
    }
    Ok(LinearReconstructor {
        pinv,
        lambda,
        source_matrix_id: a.fingerprint(),
        roi_shape: a.roi_shape(),
    })
}

/// `clamp(P m, min 0)`.
pub fn reconstruct(r: &LinearReconstructor, image: &SpeckleImage) -> Result<Spectrum> {
    Ok(Spectrum::from_clamped(r.reconstruct_raw(image)?))
}

/// `1e-3 * trace(A^T A) / Y`.
pub fn default_lambda(a: &TransmissionMatrix) -> f64 {
    let trace: f64 = a.matrix().iter().map(|v| v * v).sum();
    1e-3 * trace / a.channels() as f64
}

/// Nine logarithmic decades centered on [`default_lambda`].
pub fn lambda_grid(a: &TransmissionMatrix) -> Vec<f64> {
    let center = default_lambda(a);
    (-4..=4).map(|e| center * 10f64.powi(e)).collect()
}

/// Grid value maximizing the mean validation cross-correlation. Ties go to the
/// larger lambda.
pub fn select_lambda(
    a: &TransmissionMatrix,
    validation: &[(SpeckleImage, Spectrum)],
    grid: &[f64],
) -> Result<f64> {
    if grid.is_empty() || validation.is_empty() {
        return Err(Error::invalid(
            "select_lambda needs a non-empty grid and validation set",
        ));
    }
    let mut best: Option<(f64, f64)> = None;
    for &lambda in grid {
        let score = match fit_tikhonov(a, lambda) {
            Ok(r) => mean_correlation(&r, validation)?,
            Err(Error::Singular(_)) => continue,
            Err(e) => return Err(e),
        };
        best = match best {
            None => Some((lambda, score)),
            Some((bl, bs)) => {
                if score > bs + 1e-12 || ((score - bs).abs() <= 1e-12 && lambda > bl) {
                    Some((lambda, score))
                } else {
                    Some((bl, bs))
                }
            }
        };
    }
    best.map(|(l, _)| l)
        .ok_or_else(|| Error::Singular("every grid lambda gave a singular system".into()))
}

/// Fits with [`select_lambda`] over [`lambda_grid`], or [`default_lambda`]
/// when no validation data is supplied.
pub fn fit_auto(
    a: &TransmissionMatrix,
    validation: &[(SpeckleImage, Spectrum)],
) -> Result<LinearReconstructor> {
    let lambda = if validation.is_empty() {
        default_lambda(a)
    } else {
        select_lambda(a, validation, &lambda_grid(a))?
    };
    fit_tikhonov(a, lambda)
}

fn mean_correlation(
    r: &LinearReconstructor,
    validation: &[(SpeckleImage, Spectrum)],
) -> Result<f64> {
    let mut acc = 0.0;
    for (img, truth) in validation {
        acc += pearson(reconstruct(r, img)?.values(), truth.values());
    }
    Ok(acc / validation.len() as f64)
}
