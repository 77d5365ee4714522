//! Networks as spectrum reconstructors.

use super::network::{Network, Workspace};
use super::scalar::Scalar;
use crate::domain::{check_len, SpeckleImage, Spectrum};
use crate::error::{Error, Result};
use crate::recon::Reconstructor;

/// Per-caller inference buffers.
#[derive(Debug, Clone)]
pub struct NnScratch<T> {
    ws: Workspace<T>,
    input: Vec<T>,
    raw: Vec<f64>,
    out: Vec<f64>,
}

impl<T> Default for NnScratch<T> {
    fn default() -> Self {
        Self {
            ws: Workspace::default(),
            input: Vec::new(),
            raw: Vec::new(),
            out: Vec::new(),
        }
    }
}

/// Single-fiber network applied to one ROI image.
#[derive(Debug, Clone, PartialEq)]
pub struct NnReconstructor<T: Scalar = f32> {
    net: Network<T>,
}

impl<T: Scalar> NnReconstructor<T> {
    pub fn new(net: Network<T>) -> Result<Self> {
        if net.spec().input_shape.c != 1 {
            return Err(Error::invalid(
                "single-fiber reconstructor needs a one-channel network",
            ));
        }
        Ok(Self { net })
    }

    pub fn network(&self) -> &Network<T> {
        &self.net
    }
}

/// Forward pass in inference mode followed by clamping negatives to zero.
pub fn predict<T: Scalar>(net: &Network<T>, image: &SpeckleImage) -> Result<Spectrum> {
    let mut out = vec![0.0; net.output_len()];
    net.predict_into(
        image.pixels(),
        &mut Workspace::default(),
        &mut Vec::new(),
        &mut out,
    )?;
    Ok(Spectrum::from_clamped(out))
}

impl<T: Scalar> Reconstructor for NnReconstructor<T> {
    type Scratch = NnScratch<T>;

    fn reconstruct_with(&self, image: &SpeckleImage, s: &mut NnScratch<T>) -> Result<Spectrum> {
        let (h, w) = self.roi_shape();
        if image.shape() != (h, w) {
            return Err(Error::DimensionMismatch {
                context: "network ROI pixels",
                expected: h * w,
                actual: image.len(),
            });
        }
        s.out.resize(self.net.output_len(), 0.0);
        self.net
            .predict_into(image.pixels(), &mut s.ws, &mut s.input, &mut s.out)?;
        Ok(Spectrum::from_clamped(s.out.clone()))
    }

    fn roi_shape(&self) -> (usize, usize) {
        let s = self.net.spec().input_shape;
        (s.h, s.w)
    }

    fn channels(&self) -> usize {
        self.net.output_len()
    }
}

/// Network reconstructing `n` fibers from one stacked input.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiFiberReconstructor<T: Scalar = f32> {
    net: Network<T>,
}

impl<T: Scalar> MultiFiberReconstructor<T> {
    pub fn new(net: Network<T>) -> Result<Self> {
        let fibers = net.spec().input_shape.c;
        if net.output_len() % fibers != 0 {
            return Err(Error::invalid(
                "multi-fiber output is not a multiple of the fiber count",
            ));
        }
        Ok(Self { net })
    }

    pub fn fibers(&self) -> usize {
        self.net.spec().input_shape.c
    }

    pub fn channels(&self) -> usize {
        self.net.output_len() / self.fibers()
    }

    pub fn roi_shape(&self) -> (usize, usize) {
        let s = self.net.spec().input_shape;
        (s.h, s.w)
    }

    pub fn network(&self) -> &Network<T> {
        &self.net
    }

    /// Reconstructs one spectrum per image into `out` (`n * Y`, fiber-major).
    pub fn reconstruct_group(
        &self,
        images: &[&SpeckleImage],
        s: &mut NnScratch<T>,
        out: &mut [f64],
    ) -> Result<()> {
        let n = self.fibers();
        let y = self.channels();
        check_len("multi-fiber group size", n, images.len())?;
        check_len("multi-fiber output", n * y, out.len())?;
        let pixels = self.net.input_len() / n;
        s.raw.resize(self.net.input_len(), 0.0);
        for (f, img) in images.iter().enumerate() {
            check_len("multi-fiber image pixels", pixels, img.len())?;
            for (p, &v) in img.pixels().iter().enumerate() {
                s.raw[p * n + f] = v;
            }
        }
        s.out.resize(n * y, 0.0);
        self.net
            .predict_into(&s.raw, &mut s.ws, &mut s.input, &mut s.out)?;
        for f in 0..n {
            for j in 0..y {
                out[f * y + j] = s.out[j * n + f];
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::{build_cnn_small, build_multifiber};
    use crate::rng::SpeckleRng;

    #[test]
    fn predict_matches_forward_then_clamp() {
        let net = Network::<f64>::new(build_cnn_small(), &mut SpeckleRng::new(1)).unwrap();
        let img = SpeckleImage::new(5, 5, (0..25).map(|i| 1.0 + (i % 4) as f64).collect()).unwrap();
        let mut input = vec![0.0; 25];
        net.prepare_input(img.pixels(), &mut input).unwrap();
        let raw = net
            .forward_infer(&input, 1, &mut Workspace::default())
            .unwrap()
            .to_vec();
        let p = predict(&net, &img).unwrap();
        for (a, b) in p.values().iter().zip(&raw) {
            assert_eq!(*a, b.max(0.0));
        }
        let r = NnReconstructor::new(net).unwrap();
        let mut s = NnScratch::default();
        assert_eq!(r.reconstruct_with(&img, &mut s).unwrap(), p);
        assert_eq!(r.reconstruct_with(&img, &mut s).unwrap(), p);
        assert!(r.reconstruct(&SpeckleImage::zeros(4, 4)).is_err());
    }

    #[test]
    fn group_output_is_deinterleaved() {
        let net =
            Network::<f64>::new(build_multifiber(2).unwrap(), &mut SpeckleRng::new(2)).unwrap();
        let r = MultiFiberReconstructor::new(net.clone()).unwrap();
        let a =
            SpeckleImage::new(20, 20, (0..400).map(|i| 1.0 + (i % 7) as f64).collect()).unwrap();
        let b =
            SpeckleImage::new(20, 20, (0..400).map(|i| 1.0 + (i % 5) as f64).collect()).unwrap();
        let mut out = vec![0.0; 86];
        r.reconstruct_group(&[&a, &b], &mut NnScratch::default(), &mut out)
            .unwrap();
        let mut raw = vec![0.0; 800];
        for p in 0..400 {
            raw[2 * p] = a.pixels()[p];
            raw[2 * p + 1] = b.pixels()[p];
        }
        let mut inter = vec![0.0; 86];
        net.predict_into(&raw, &mut Workspace::default(), &mut Vec::new(), &mut inter)
            .unwrap();
        for j in 0..43 {
            assert_eq!(out[j], inter[2 * j]);
            assert_eq!(out[43 + j], inter[2 * j + 1]);
        }
    }
}
