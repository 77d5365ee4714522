//! `recon`: reconstructs a dataset split or PGM images with one backend.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, ValueEnum};
use rayon::prelude::*;
use speckle_core::bench::{cross_correlation, EvalReport, Table};
use speckle_core::format::{decode_pgm, import_matrix, Manifest};
use speckle_core::nn::{load_checkpoint, NnReconstructor, NnScratch, Scalar};
use speckle_core::recon_cs::{
    default_gamma_grid, select_gamma, CsOptions, CsReconstructor, CsScratch, Gamma,
};
use speckle_core::recon_linear::{fit_auto, fit_tikhonov, LinearReconstructor};
use speckle_core::synth::read_dataset;
use speckle_core::{Reconstructor, SpeckleImage, Spectrum, TransmissionMatrix};

use crate::layout::Context;
use crate::{CliError, CliResult, Precision};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Tr,
    Cs,
    Dl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitPart {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Clone, Args)]
pub struct ReconArgs {
    #[arg(long, value_enum)]
    pub method: Method,
    /// SPKT calibration matrix (tr, cs); cropped centrally to the image size.
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    /// SPKN checkpoint (dl).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Tikhonov weight, or auto to select on the dataset's validation split.
    #[arg(long, default_value = "auto")]
    pub lambda: String,
    /// L1 weight (a number, or rel:C for C times ||A^T m||_inf), or auto.
    #[arg(long, default_value = "auto")]
    pub gamma: String,
    #[arg(long, default_value_t = 5000)]
    pub max_iters: usize,
    /// Relative change of the iterate below which FISTA stops.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Dataset directory whose images (and labels) to use.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitPart,
    /// 16-bit PGM images to reconstruct.
    #[arg(long)]
    pub image: Vec<PathBuf>,
    /// SPKR file caching the Tikhonov operator; reused when it matches.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Output directory name under reports/.
    #[arg(long)]
    pub name: Option<String>,
}

struct Inputs {
    images: Vec<SpeckleImage>,
    truth: Option<Vec<Spectrum>>,
    validation: Vec<(SpeckleImage, Spectrum)>,
}

fn load_inputs(a: &ReconArgs) -> CliResult<Inputs> {
    match (&a.dataset, a.image.is_empty()) {
        (Some(_), false) => Err(CliError::Usage(
            "--dataset and --image are mutually exclusive".into(),
        )),
        (None, true) => Err(CliError::Usage(
            "one of --dataset or --image is required".into(),
        )),
        (Some(dir), true) => {
            let ds = read_dataset(dir)?;
            let part = match a.split {
                SplitPart::Train => ds.train(),
                SplitPart::Val => ds.val(),
                SplitPart::Test => ds.test(),
                SplitPart::All => ds.samples(),
            };
            Ok(Inputs {
                images: part.iter().map(|s| s.image.clone()).collect(),
                truth: Some(part.iter().map(|s| s.spectrum.clone()).collect()),
                validation: ds
                    .val()
                    .iter()
                    .map(|s| (s.image.clone(), s.spectrum.clone()))
                    .collect(),
            })
        }
        (None, false) => {
            let images = a
                .image
                .iter()
                .map(|p| decode_pgm(&fs::read(p)?))
                .collect::<speckle_core::Result<Vec<_>>>()?;
            Ok(Inputs {
                images,
                truth: None,
                validation: Vec::new(),
            })
        }
    }
}

fn roi_matrix(path: Option<&Path>, shape: (usize, usize)) -> CliResult<TransmissionMatrix> {
    let path = path.ok_or_else(|| {
        CliError::Usage(
            "the following required argument was not provided: --matrix <MATRIX>".into(),
        )
    })?;
    let m = import_matrix(path)?;
    Ok(if m.roi_shape() == shape {
        m
    } else {
        m.crop_centered(shape)?
    })
}

/// One row per image: reconstruction, optional truth correlation, solver
/// iterations (CS only).
struct Outcome {
    spectra: Vec<Spectrum>,
    iterations: Option<Vec<(usize, bool, f64)>>,
    detail: String,
}

pub(crate) fn recon(ctx: &Context, a: ReconArgs) -> CliResult<()> {
    // Flag checks first so usage errors do not wait on data loading.
    match a.method {
        Method::Tr | Method::Cs if a.matrix.is_none() => {
            return Err(CliError::Usage(
                "the following required argument was not provided: --matrix <MATRIX>".into(),
            ))
        }
        Method::Dl if a.model.is_none() => {
            return Err(CliError::Usage(
                "the following required argument was not provided: --model <MODEL>".into(),
            ))
        }
        _ => {}
    }
    let inputs = load_inputs(&a)?;
    let shape = inputs
        .images
        .first()
        .map(SpeckleImage::shape)
        .ok_or_else(|| CliError::Config("no images to reconstruct".into()))?;
    if let Some(i) = inputs.images.iter().position(|im| im.shape() != shape) {
        return Err(CliError::Config(format!(
            "image {i} is {:?}, the first is {shape:?}",
            inputs.images[i].shape()
        )));
    }
    let start = Instant::now();
    let out = match a.method {
        Method::Tr => run_tr(&a, &inputs, shape)?,
        Method::Cs => run_cs(&a, &inputs, shape)?,
        Method::Dl => match ctx.precision {
            Precision::F32 => run_dl::<f32>(&a, &inputs)?,
            Precision::F64 => run_dl::<f64>(&a, &inputs)?,
        },
    };
    let elapsed = start.elapsed();

    let name = a
        .name
        .clone()
        .unwrap_or_else(|| format!("recon-{}", method_name(a.method)));
    let dir = ctx.out.reports(&name)?;
    let y = out.spectra.first().map_or(0, Spectrum::len);
    let mut header = vec!["sample".to_string()];
    header.extend((0..y).map(|j| format!("c{j}")));
    if inputs.truth.is_some() {
        header.push("correlation".into());
    }
    let mut t = Table::new(&header.iter().map(String::as_str).collect::<Vec<_>>());
    let corr = match &inputs.truth {
        Some(truth) => Some(
            out.spectra
                .iter()
                .zip(truth)
                .map(|(s, t)| cross_correlation(s, t))
                .collect::<speckle_core::Result<Vec<_>>>()?,
        ),
        None => None,
    };
    for (i, s) in out.spectra.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(s.values().iter().map(|v| format!("{v:?}")));
        if let Some(c) = &corr {
            row.push(format!("{:?}", c[i]));
        }
        t.push(row);
    }
    t.write_csv(dir.join("spectra.csv"))?;
    if let Some(iters) = &out.iterations {
        let mut it = Table::new(&["sample", "iterations", "converged", "gamma"]);
        for (i, (n, conv, g)) in iters.iter().enumerate() {
            it.push(vec![i.to_string(), n.to_string(), conv.to_string(), format!("{g:e}")]);
        }
        it.write_csv(dir.join("iterations.csv"))?;
    }

    let mut summary = String::new();
    let n = out.spectra.len();
    writeln!(summary, "method: {}", method_name(a.method)).unwrap();
    writeln!(summary, "{}", out.detail).unwrap();
    writeln!(
        summary,
        "images: {n}; wall time {:.3} s ({:.3} ms per image)",
        elapsed.as_secs_f64(),
        1e3 * elapsed.as_secs_f64() / n as f64
    )
    .unwrap();
    let mut man: Manifest = ctx.manifest("recon", None);
    man.set("method", method_name(a.method))
        .set("images", n)
        .set("detail", &out.detail)
        .set("seconds", elapsed.as_secs_f64());
    if let Some(c) = corr {
        let r = EvalReport::new(c, Manifest::new())?;
        writeln!(
            summary,
            "correlation: mean {:.4}, std {:.4}, failures {:.1}%",
            r.mean,
            r.std,
            100.0 * r.failure_fraction
        )
        .unwrap();
        man.set("mean_correlation", r.mean)
            .set("std_correlation", r.std);
    }
    if let Some(iters) = &out.iterations {
        let total: usize = iters.iter().map(|i| i.0).sum();
        writeln!(
            summary,
            "iterations: mean {:.1}, max {}",
            total as f64 / n as f64,
            iters.iter().map(|i| i.0).max().unwrap_or(0)
        )
        .unwrap();
    }
    if let Some(d) = &a.dataset {
        man.set("dataset", d.display()).set("split", format!("{:?}", a.split).to_lowercase());
    }
    man.write(dir.join("manifest.txt"))?;
    fs::write(dir.join("summary.txt"), &summary)?;
    print!("{summary}");
    println!("wrote {}", dir.display());
    Ok(())
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::Tr => "tr",
        Method::Cs => "cs",
        Method::Dl => "dl",
    }
}

fn fit_linear(a: &ReconArgs, m: &TransmissionMatrix, val: &[(SpeckleImage, Spectrum)]) -> CliResult<LinearReconstructor> {
    if a.lambda == "auto" {
        Ok(fit_auto(m, val)?)
    } else {
        let l: f64 = a
            .lambda
            .parse()
            .map_err(|_| CliError::Usage(format!("--lambda must be a number or auto (got {:?})", a.lambda)))?;
        Ok(fit_tikhonov(m, l)?)
    }
}

fn run_tr(a: &ReconArgs, inputs: &Inputs, shape: (usize, usize)) -> CliResult<Outcome> {
    let m = roi_matrix(a.matrix.as_deref(), shape)?;
    let fixed: Option<f64> = a.lambda.parse().ok();
    let cached = match &a.cache {
        Some(p) if p.exists() => {
            let r = LinearReconstructor::load(p)?;
            let fits = r.source_matrix_id() == m.fingerprint()
                && r.roi_shape() == shape
                && fixed.is_none_or(|l| l == r.lambda());
            fits.then_some(r)
        }
        _ => None,
    };
    let (r, from_cache) = match cached {
        Some(r) => (r, true),
        None => {
            let r = fit_linear(a, &m, &inputs.validation)?;
            if let Some(p) = &a.cache {
                r.save(p)?;
            }
            (r, false)
        }
    };
    let spectra = reconstruct_all(&r, &inputs.images)?;
    Ok(Outcome {
        spectra,
        iterations: None,
        detail: format!(
            "lambda={:e}{}",
            r.lambda(),
            if from_cache { " (cached)" } else { "" }
        ),
    })
}

fn run_cs(a: &ReconArgs, inputs: &Inputs, shape: (usize, usize)) -> CliResult<Outcome> {
    let m = roi_matrix(a.matrix.as_deref(), shape)?;
    let mut opts = CsOptions {
        max_iters: a.max_iters,
        rel_tol: a.tol,
        ..CsOptions::default()
    };
    opts.gamma = if a.gamma == "auto" {
        if inputs.validation.is_empty() {
            Gamma::DEFAULT
        } else {
            // A slice of the validation split keeps selection cheap.
            let n = inputs.validation.len().min(30);
            select_gamma(&m, &inputs.validation[..n], &default_gamma_grid(), &opts)?
        }
    } else {
        a.gamma.parse()?
    };
    let r = CsReconstructor::new(m, opts)?;
    let sols = inputs
        .images
        .par_iter()
        .map_init(CsScratch::default, |s, img| r.solve(img, s))
        .collect::<speckle_core::Result<Vec<_>>>()?;
    let iterations = sols.iter().map(|s| (s.iterations, s.converged, s.gamma)).collect();
    Ok(Outcome {
        spectra: sols.into_iter().map(|s| s.spectrum).collect(),
        iterations: Some(iterations),
        detail: format!("gamma={} max_iters={} tol={:e}", opts.gamma, opts.max_iters, opts.rel_tol),
    })
}

fn run_dl<T: Scalar>(a: &ReconArgs, inputs: &Inputs) -> CliResult<Outcome> {
    let path = a.model.as_deref().expect("checked above");
    let trained = load_checkpoint::<T>(path)?;
    if trained.network.spec().input_shape.c != 1 {
        return Err(CliError::Config(
            "multi-fiber checkpoints take grouped frames; use `stream`".into(),
        ));
    }
    let r = NnReconstructor::new(trained.network)?;
    let spectra = inputs
        .images
        .par_iter()
        .map_init(NnScratch::default, |s, img| r.reconstruct_with(img, s))
        .collect::<speckle_core::Result<Vec<_>>>()?;
    Ok(Outcome {
        spectra,
        iterations: None,
        detail: format!("model={} best_epoch={}", path.display(), trained.best_epoch),
    })
}

fn reconstruct_all<R: Reconstructor>(r: &R, images: &[SpeckleImage]) -> CliResult<Vec<Spectrum>> {
    Ok(images
        .par_iter()
        .map_init(R::Scratch::default, |s, img| r.reconstruct_with(img, s))
        .collect::<speckle_core::Result<Vec<_>>>()?)
}
