//! Fitting each reconstruction method to one fiber ROI.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::domain::{SpeckleImage, Spectrum, TransmissionMatrix};
use crate::error::{Error, Result};
use crate::format::Manifest;
use crate::nn::{train, ArchConfig, Network, NnReconstructor, TensorSet, TrainOptions};
use crate::recon::Reconstructor;
use crate::recon_cs::{default_gamma_grid, select_gamma, CsOptions, CsReconstructor};
use crate::recon_linear::{fit_auto, LinearReconstructor};
use crate::rng::SpeckleRng;
use crate::synth::{build_dataset, DatasetSpec, Perturbation, Sample, SpectrumSampler, Split};

use super::metrics::{cross_correlation, EvalReport};

/// Reconstruction method under comparison. The DL variants differ only in
/// the perturbation applied to their training data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MethodKind {
    Tr,
    Cs,
    Dl,
    /// Trained on noisy images.
    DlNoise,
    /// Trained on one-pixel-shifted crops.
    DlShift,
}

impl MethodKind {
    pub const ALL: [MethodKind; 5] = [
        MethodKind::Tr,
        MethodKind::Cs,
        MethodKind::Dl,
        MethodKind::DlNoise,
        MethodKind::DlShift,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Tr => "tr",
            MethodKind::Cs => "cs",
            MethodKind::Dl => "dl",
            MethodKind::DlNoise => "dl+n",
            MethodKind::DlShift => "dl+s",
        }
    }

    pub fn is_dl(self) -> bool {
        matches!(
            self,
            MethodKind::Dl | MethodKind::DlNoise | MethodKind::DlShift
        )
    }

    /// Parses a comma-separated list such as `tr,cs,dl`.
    pub fn parse_list(s: &str) -> Result<Vec<MethodKind>> {
        let kinds = s
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<_>>>()?;
        if kinds.is_empty() {
            return Err(Error::invalid("method list is empty"));
        }
        Ok(kinds)
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown method {s:?}; expected one of tr, cs, dl, dl+n, dl+s"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DlSettings {
    pub train: TrainOptions,
    pub n_train: usize,
    pub n_val: usize,
    /// Noise level of the DL+N training images.
    pub noise_level: f64,
    /// Architecture override; by default ROIs under 10 pixels a side get the
    /// small network and larger ones the large network.
    pub arch: Option<ArchConfig>,
}

impl Default for DlSettings {
    fn default() -> Self {
        Self {
            // Without the decay the 20x20 network stalls just under 0.9.
            train: TrainOptions {
                lr_decay: 0.9,
                ..TrainOptions::default()
            },
            n_train: Split::DESK.train,
            n_val: Split::DESK.val,
            noise_level: 0.25,
            arch: None,
        }
    }
}

impl DlSettings {
    pub fn arch_for(&self, roi: (usize, usize)) -> ArchConfig {
        match &self.arch {
            Some(a) => a.clone().with_input(roi),
            None if roi.0.min(roi.1) < 10 => ArchConfig::small().with_input(roi),
            None => ArchConfig::large().with_input(roi),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSettings {
    /// Validation spectra used to pick the Tikhonov weight.
    pub n_tune_tr: usize,
    /// Validation spectra used to pick the CS weight; 0 keeps `cs.gamma`.
    pub n_tune_cs: usize,
    pub cs: CsOptions,
    pub dl: DlSettings,
}

impl Default for MethodSettings {
    fn default() -> Self {
        Self {
            n_tune_tr: 200,
            n_tune_cs: 30,
            cs: CsOptions::default(),
            dl: DlSettings::default(),
        }
    }
}

impl MethodSettings {
    pub fn to_manifest(&self) -> Manifest {
        let mut m = Manifest::new();
        m.set("tr.n_tune", self.n_tune_tr)
            .set("cs.n_tune", self.n_tune_cs)
            .set("cs.gamma", self.cs.gamma)
            .set("cs.max_iters", self.cs.max_iters)
            .set("cs.rel_tol", self.cs.rel_tol)
            .set("dl.n_train", self.dl.n_train)
            .set("dl.n_val", self.dl.n_val)
            .set("dl.noise_level", self.dl.noise_level)
            .set("dl.train", self.dl.train);
        m
    }
}

/// A method fitted to one ROI matrix.
#[derive(Debug, Clone)]
pub enum FittedMethod {
    Tr(LinearReconstructor),
    Cs(CsReconstructor),
    Dl(NnReconstructor<f32>),
}

impl FittedMethod {
    pub fn reconstruct(&self, image: &SpeckleImage) -> Result<Spectrum> {
        match self {
            FittedMethod::Tr(r) => r.reconstruct(image),
            FittedMethod::Cs(r) => r.reconstruct(image),
            FittedMethod::Dl(r) => r.reconstruct(image),
        }
    }

    /// Reconstructs every image, in parallel on the ambient pool.
    pub fn reconstruct_all<'a, I>(&self, images: I) -> Result<Vec<Spectrum>>
    where
        I: IntoParallelIterator<Item = &'a SpeckleImage>,
        I::Iter: IndexedParallelIterator,
    {
        fn run<'a, R: Reconstructor>(
            r: &R,
            it: impl IndexedParallelIterator<Item = &'a SpeckleImage>,
        ) -> Result<Vec<Spectrum>> {
            it.map_init(R::Scratch::default, |s, img| r.reconstruct_with(img, s))
                .collect()
        }
        let it = images.into_par_iter();
        match self {
            FittedMethod::Tr(r) => run(r, it),
            FittedMethod::Cs(r) => run(r, it),
            FittedMethod::Dl(r) => run(r, it),
        }
    }

    /// Per-sample correlations against the samples' ground truth.
    pub fn correlations(&self, samples: &[Sample]) -> Result<Vec<f64>> {
        let recon = self.reconstruct_all(samples.par_iter().map(|s| &s.image))?;
        recon
            .iter()
            .zip(samples)
            .map(|(r, s)| cross_correlation(r, &s.spectrum))
            .collect()
    }

    pub fn evaluate(&self, samples: &[Sample], settings: Manifest) -> Result<EvalReport> {
        EvalReport::new(self.correlations(samples)?, settings)
    }

    /// Selected hyperparameter in text form, for report provenance.
    pub fn describe(&self) -> String {
        match self {
            FittedMethod::Tr(r) => format!("lambda={:e}", r.lambda()),
            FittedMethod::Cs(r) => format!("gamma={}", r.options().gamma),
            FittedMethod::Dl(r) => {
                format!("params={}", r.network().spec().param_count().unwrap_or(0))
            }
        }
    }
}

/// Samples drawn from `fiber` for a centered `roi`, all placed in the test
/// split. Equal seeds give equal spectra whatever the perturbation, so clean
/// and perturbed sets built with one seed pair up sample by sample.
pub fn test_samples(
    fiber: &TransmissionMatrix,
    roi: (usize, usize),
    sampler: SpectrumSampler,
    perturbation: Perturbation,
    n: usize,
    seed: u64,
) -> Result<Vec<Sample>> {
    let spec = DatasetSpec {
        sampler,
        n_samples: n,
        split: Split::new(0, 0, n),
        perturbation,
        roi,
    };
    Ok(build_dataset(fiber, &spec, &mut SpeckleRng::new(seed))?
        .samples()
        .to_vec())
}

/// Fits `kind` to the centered `roi` of `fiber`, tuning or training on
/// spectra from `sampler`.
pub fn fit_method(
    kind: MethodKind,
    fiber: &TransmissionMatrix,
    roi: (usize, usize),
    sampler: SpectrumSampler,
    settings: &MethodSettings,
    seed: u64,
) -> Result<FittedMethod> {
    let roi_matrix = fiber.crop_centered(roi)?;
    let tuning = |n: usize| -> Result<Vec<(SpeckleImage, Spectrum)>> {
        Ok(
            test_samples(fiber, roi, sampler, Perturbation::NONE, n, seed)?
                .into_iter()
                .map(|s| (s.image, s.spectrum))
                .collect(),
        )
    };
    match kind {
        MethodKind::Tr => Ok(FittedMethod::Tr(fit_auto(
            &roi_matrix,
            &tuning(settings.n_tune_tr)?,
        )?)),
        MethodKind::Cs => {
            let mut opts = settings.cs;
            if settings.n_tune_cs > 0 {
                opts.gamma = select_gamma(
                    &roi_matrix,
                    &tuning(settings.n_tune_cs)?,
                    &default_gamma_grid(),
                    &opts,
                )?;
            }
            Ok(FittedMethod::Cs(CsReconstructor::new(roi_matrix, opts)?))
        }
        MethodKind::Dl | MethodKind::DlNoise | MethodKind::DlShift => {
            let perturbation = match kind {
                MethodKind::DlNoise => Perturbation::noise(settings.dl.noise_level),
                MethodKind::DlShift => Perturbation::shift(),
                _ => Perturbation::NONE,
            };
            let net = train_dl(fiber, roi, sampler, perturbation, &settings.dl, seed)?;
            Ok(FittedMethod::Dl(NnReconstructor::new(net)?))
        }
    }
}

/// Trains a single-fiber network on a fresh dataset and returns the weights
/// of its best validation epoch.
pub fn train_dl(
    fiber: &TransmissionMatrix,
    roi: (usize, usize),
    sampler: SpectrumSampler,
    perturbation: Perturbation,
    dl: &DlSettings,
    seed: u64,
) -> Result<Network<f32>> {
    let split = Split::new(dl.n_train, dl.n_val, 0);
    let spec = DatasetSpec {
        sampler,
        n_samples: split.total(),
        split,
        perturbation,
        roi,
    };
    let mut rng = SpeckleRng::new(seed);
    let ds = build_dataset(fiber, &spec, &mut rng)?;
    let net = Network::new(dl.arch_for(roi).single_fiber()?, &mut rng)?;
    let tr = TensorSet::from_samples(&net, ds.train())?;
    let va = TensorSet::from_samples(&net, ds.val())?;
    let opts = TrainOptions {
        seed: rng.next_u64(),
        ..dl.train
    };
    Ok(train(net, &tr, &va, &opts)?.network)
}
