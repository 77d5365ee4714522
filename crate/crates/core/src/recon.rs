//! Common interface of the reconstruction backends.

use crate::domain::{SpeckleImage, Spectrum};
use crate::error::Result;

/// Maps a speckle image to a spectrum.
///
/// Implementations are immutable after construction and may be called from
/// many threads at once; any per-call working memory lives in the
/// caller-owned `Scratch`, so a worker that keeps one scratch value reuses its
/// buffers across calls.
pub trait Reconstructor: Send + Sync {
    type Scratch: Default + Send;

    fn reconstruct_with(
        &self,
        image: &SpeckleImage,
        scratch: &mut Self::Scratch,
    ) -> Result<Spectrum>;

    fn reconstruct(&self, image: &SpeckleImage) -> Result<Spectrum> {
        self.reconstruct_with(image, &mut Self::Scratch::default())
    }

    /// ROI shape the backend was calibrated for.
    fn roi_shape(&self) -> (usize, usize);

    fn channels(&self) -> usize;
}

impl<R: Reconstructor + ?Sized> Reconstructor for &R {
    type Scratch = R::Scratch;

    fn reconstruct_with(
        &self,
        image: &SpeckleImage,
        scratch: &mut Self::Scratch,
    ) -> Result<Spectrum> {
        (**self).reconstruct_with(image, scratch)
    }

    fn roi_shape(&self) -> (usize, usize) {
        (**self).roi_shape()
    }

    fn channels(&self) -> usize {
        (**self).channels()
    }
}
