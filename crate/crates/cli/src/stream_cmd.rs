//! `stream`: full-array frames through preloaded per-fiber reconstructors.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use speckle_core::bench::{cross_correlation, EvalReport, Table};
use speckle_core::format::Manifest;
use speckle_core::nn::{
    load_checkpoint, MultiFiberReconstructor, NnReconstructor, Scalar, TrainedNetwork,
};
use speckle_core::pipeline::{
    run_multifiber_stream, run_stream, FramePacket, FrameSource, RandomSpectraSource,
    ScriptedSource, StreamOutput, SwitchScript,
};
use speckle_core::recon_cs::{CsOptions, CsReconstructor};
use speckle_core::recon_linear::{default_lambda, fit_tikhonov};
use speckle_core::specklegen::FiberArrayModel;
use speckle_core::Spectrum;

use crate::gen::parse_sampler;
use crate::layout::{parse_shape, Context};
use crate::{CliError, CliResult, Precision};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StreamMethod {
    Dl,
    Tr,
    Cs,
}

#[derive(Debug, Clone, Args)]
pub struct StreamArgs {
    /// Fiber array directory.
    #[arg(long, required = true)]
    pub matrix_dir: Option<PathBuf>,
    /// Checkpoints: `fiber_NNNN.spkn` per fiber, or one `model.spkn` shared
    /// by all fibers (a multi-fiber model is shared by every group).
    #[arg(long)]
    pub models_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "dl")]
    pub method: StreamMethod,
    /// Centered crop per fiber for tr and cs.
    #[arg(long, value_parser = parse_shape, default_value = "20x20")]
    pub roi: (usize, usize),
    #[arg(long, default_value_t = 10)]
    pub frames: usize,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Wavelength script: lines `start end channel[:weight],...`.
    #[arg(long)]
    pub script: Option<PathBuf>,
    /// Random spectra per fiber when no script is given: sparse N or A..B.
    #[arg(long)]
    pub sparse: Option<String>,
    /// Random dense spectra with this walk step (the default, at 0.2).
    #[arg(long)]
    pub dense: Option<f64>,
    /// Where to write the per-frame timing CSV (default: in the report).
    #[arg(long)]
    pub timing_out: Option<PathBuf>,
    /// Output directory name under reports/.
    #[arg(long)]
    pub name: Option<String>,
}

enum Feed<'a> {
    Script(ScriptedSource<'a>, &'a SwitchScript),
    Random(RandomSpectraSource<'a>),
}

/// Forwards frames and keeps each frame's per-fiber ground truth.
struct Logged<'a> {
    feed: Feed<'a>,
    fibers: usize,
    channels: usize,
    truth: Vec<Vec<Spectrum>>,
}

impl FrameSource for Logged<'_> {
    fn next_frame(&mut self) -> speckle_core::Result<Option<FramePacket>> {
        let p = match &mut self.feed {
            Feed::Script(src, _) => src.next_frame()?,
            Feed::Random(src) => src.next_frame()?,
        };
        if let Some(p) = &p {
            let t = match &self.feed {
                Feed::Script(_, script) => {
                    vec![script.spectrum_at(p.sequence as usize, self.channels)?; self.fibers]
                }
                Feed::Random(src) => src.last_spectra.clone(),
            };
            self.truth.push(t);
        }
        Ok(p)
    }
}

pub(crate) fn stream(ctx: &Context, a: StreamArgs) -> CliResult<()> {
    let dir_in = a.matrix_dir.as_deref().expect("required by clap");
    if a.method == StreamMethod::Dl && a.models_dir.is_none() {
        return Err(CliError::Usage(
            "the following required argument was not provided: --models-dir <MODELS_DIR> (needed by --method dl)".into(),
        ));
    }
    let array = FiberArrayModel::read_dir(dir_in)?;
    let script = match &a.script {
        Some(p) => Some(
            fs::read_to_string(p)?
                .parse::<SwitchScript>()
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
        ),
        None => None,
    };
    let n_frames = match &script {
        Some(s) => a.frames.min(s.len()),
        None => a.frames,
    };
    let seed = if script.is_none() { Some(ctx.seed()) } else { None };
    let feed = match (&script, seed) {
        (Some(s), _) => Feed::Script(ScriptedSource::new(&array, s), s),
        (None, Some(seed)) => {
            let sampler = parse_sampler(a.sparse.as_deref(), a.dense, false)?;
            Feed::Random(RandomSpectraSource::new(&array, sampler, seed))
        }
        (None, None) => unreachable!("random streams always get a seed"),
    };
    let mut source = Logged {
        feed,
        fibers: array.len(),
        channels: array.channels(),
        truth: Vec::new(),
    };
    let out = run(ctx, &a, &array, &mut source, n_frames)?;
    let spectra_log = source.truth;

    let name = a.name.clone().unwrap_or_else(|| "stream".to_string());
    let dir = ctx.out.reports(&name)?;
    let timing_path = a.timing_out.clone().unwrap_or_else(|| dir.join("timing.csv"));
    fs::write(&timing_path, out.timing.to_csv())?;

    let mut frames = Table::new(&["frame", "fiber", "dominant_channel", "correlation"]);
    let mut corr = Vec::new();
    for (k, f) in out.frames.iter().enumerate() {
        for i in 0..array.len() {
            let c = match spectra_log.get(k).and_then(|t| t.get(i)) {
                Some(t) => {
                    let got = Spectrum::from_clamped(f.spectrum(i).to_vec());
                    let c = cross_correlation(&got, t)?;
                    corr.push(c);
                    format!("{c:.6}")
                }
                None => String::new(),
            };
            frames.push(vec![
                f.sequence.to_string(),
                i.to_string(),
                f.dominant_channel(i).to_string(),
                c,
            ]);
        }
    }
    frames.write_csv(dir.join("frames.csv"))?;

    let mut summary = out.timing.summary();
    if !summary.ends_with('\n') {
        summary.push('\n');
    }
    let mut man: Manifest = ctx.manifest("stream", seed);
    man.set("matrix_dir", dir_in.display())
        .set("method", format!("{:?}", a.method).to_lowercase())
        .set("frames", out.frames.len())
        .set("workers", a.workers)
        .set("fibers", array.len());
    if let Some(p) = &a.models_dir {
        man.set("models_dir", p.display());
    }
    if let Some(p) = &a.script {
        man.set("script", p.display());
    }
    if !corr.is_empty() {
        let r = EvalReport::new(corr, Manifest::new())?;
        writeln!(
            summary,
            "correlation with the rendered spectra: mean {:.4}, std {:.4}",
            r.mean, r.std
        )
        .unwrap();
        man.set("mean_correlation", r.mean);
    }
    fs::write(dir.join("summary.txt"), &summary)?;
    man.write(dir.join("manifest.txt"))?;
    print!("{summary}");
    println!("wrote {}", dir.display());
    Ok(())
}

fn run(
    ctx: &Context,
    a: &StreamArgs,
    array: &FiberArrayModel,
    source: &mut dyn FrameSource,
    n_frames: usize,
) -> CliResult<StreamOutput> {
    let out = match a.method {
        StreamMethod::Tr => {
            let recons = array
                .roi_matrices(a.roi)?
                .iter()
                .map(|m| fit_tikhonov(m, default_lambda(m)))
                .collect::<speckle_core::Result<Vec<_>>>()?;
            run_stream(array, &recons, source, n_frames, a.workers)?
        }
        StreamMethod::Cs => {
            let recons = array
                .roi_matrices(a.roi)?
                .into_iter()
                .map(|m| CsReconstructor::new(m, CsOptions::default()))
                .collect::<speckle_core::Result<Vec<_>>>()?;
            run_stream(array, &recons, source, n_frames, a.workers)?
        }
        StreamMethod::Dl => {
            let dir = a.models_dir.as_deref().expect("checked by caller");
            match ctx.precision {
                Precision::F32 => run_dl::<f32>(dir, array, source, n_frames, a.workers)?,
                Precision::F64 => run_dl::<f64>(dir, array, source, n_frames, a.workers)?,
            }
        }
    };
    Ok(out)
}

fn run_dl<T: Scalar>(
    dir: &Path,
    array: &FiberArrayModel,
    source: &mut dyn FrameSource,
    n_frames: usize,
    workers: usize,
) -> CliResult<StreamOutput> {
    let per_fiber: Vec<PathBuf> = (0..array.len())
        .map(|i| dir.join(format!("fiber_{i:04}.spkn")))
        .collect();
    if per_fiber.iter().all(|p| p.exists()) {
        let recons = per_fiber
            .iter()
            .map(|p| NnReconstructor::new(load_checkpoint::<T>(p)?.network))
            .collect::<speckle_core::Result<Vec<_>>>()?;
        return Ok(run_stream(array, &recons, source, n_frames, workers)?);
    }
    let shared_path = dir.join("model.spkn");
    if !shared_path.exists() {
        return Err(CliError::Core(speckle_core::Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!(
                "{} has neither fiber_NNNN.spkn for every fiber nor model.spkn",
                dir.display()
            ),
        ))));
    }
    let shared: TrainedNetwork<T> = load_checkpoint(&shared_path)?;
    let group = shared.network.spec().input_shape.c;
    if group == 1 {
        let r = NnReconstructor::new(shared.network)?;
        let refs: Vec<&NnReconstructor<T>> = vec![&r; array.len()];
        Ok(run_stream(array, &refs, source, n_frames, workers)?)
    } else {
        let net = MultiFiberReconstructor::new(shared.network)?;
        let nets = vec![net; array.len() / group];
        Ok(run_multifiber_stream(array, &nets, source, n_frames, workers)?)
    }
}
