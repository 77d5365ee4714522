//! Fixtures shared by the criterion benches: desk-scale fibers, fitted
//! reconstructors and untrained networks of the stock shapes.
//!
//! Timing does not depend on trained weights, so the networks here are
//! freshly initialized.

use speckle_core::nn::{ArchConfig, Network, NnReconstructor};
use speckle_core::recon_cs::{CsOptions, CsReconstructor};
use speckle_core::recon_linear::{default_lambda, fit_tikhonov, LinearReconstructor};
use speckle_core::specklegen::{generate_array, generate_fiber, FiberArrayModel, FiberModel};
use speckle_core::synth::SpectrumSampler;
use speckle_core::{render_speckle, SpeckleImage, SpeckleRng, TransmissionMatrix, DEFAULT_CHANNELS};

/// Desk fiber patch.
pub const PATCH: (usize, usize) = (24, 24);

pub fn fiber(seed: u64) -> TransmissionMatrix {
    generate_fiber(&FiberModel::default().with_seed(seed), PATCH, DEFAULT_CHANNELS)
        .expect("default fiber model is valid")
}

pub fn array(n: usize, seed: u64) -> FiberArrayModel {
    generate_array(
        &mut SpeckleRng::new(seed),
        n,
        &FiberModel::default(),
        PATCH,
        DEFAULT_CHANNELS,
    )
    .expect("default fiber model is valid")
}

/// Centered `side x side` crop and one dense-spectrum image rendered through it.
pub fn roi_case(seed: u64, side: usize) -> (TransmissionMatrix, SpeckleImage) {
    let m = fiber(seed)
        .crop_centered((side, side))
        .expect("side fits the patch");
    let mut rng = SpeckleRng::new(seed ^ 0x5eed);
    let s = SpectrumSampler::dense(0.2)
        .sample(&mut rng, DEFAULT_CHANNELS)
        .expect("dense sampler is valid");
    let img = render_speckle(&m, &s).expect("shapes agree");
    (m, img)
}

pub fn tikhonov(m: &TransmissionMatrix) -> LinearReconstructor {
    fit_tikhonov(m, default_lambda(m)).expect("default lambda is positive")
}

pub fn cs(m: &TransmissionMatrix) -> CsReconstructor {
    CsReconstructor::new(m.clone(), CsOptions::default()).expect("default options are valid")
}

/// The stock network for a square ROI: small below 10 pixels, large above.
pub fn network(side: usize, seed: u64) -> NnReconstructor<f32> {
    let arch = if side < 10 {
        ArchConfig::small()
    } else {
        ArchConfig::large()
    };
    let spec = arch
        .with_input((side, side))
        .single_fiber()
        .expect("stock architecture is valid");
    let net = Network::new(spec, &mut SpeckleRng::new(seed)).expect("spec validated");
    NnReconstructor::new(net).expect("single-fiber network")
}
