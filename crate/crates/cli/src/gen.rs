//! gen-fiber, gen-array, gen-dataset and import-matrix.

use std::path::{Path, PathBuf};

use clap::Args;
use speckle_core::format::{import_matrix, Dtype, Manifest};
use speckle_core::specklegen::{generate_array, generate_fiber, FiberArrayModel, FiberModel};
use speckle_core::synth::{build_dataset, write_dataset, DatasetSpec, Perturbation, SpectrumSampler, Split};
use speckle_core::{SpeckleRng, DEFAULT_CHANNELS};

use crate::layout::{parse_shape, Context};
use crate::{CliError, CliResult};

#[derive(Debug, Clone, Args)]
pub struct FiberArgs {
    /// Wavelength channels per fiber.
    #[arg(long, default_value_t = DEFAULT_CHANNELS)]
    pub channels: usize,
    /// Camera patch per fiber, HxW pixels.
    #[arg(long, value_parser = parse_shape, default_value = "24x24")]
    pub roi: (usize, usize),
    /// Guided modes superposed per speckle.
    #[arg(long, default_value_t = 30)]
    pub modes: usize,
    /// Channel separation at which speckle correlation drops to 1/e.
    #[arg(long, default_value_t = 1.0)]
    pub decorr: f64,
    /// Core radius in pixels.
    #[arg(long, default_value_t = 12.0)]
    pub core_radius: f64,
    /// Store matrices as f32 instead of f64.
    #[arg(long)]
    pub f32: bool,
    /// Output directory name under matrices/ (default: derived from the seed).
    #[arg(long)]
    pub name: Option<String>,
}

impl FiberArgs {
    fn model(&self) -> FiberModel {
        FiberModel {
            n_modes: self.modes,
            core_radius_px: self.core_radius,
            decorrelation_length: self.decorr,
            seed: 0,
        }
    }

    fn dtype(&self) -> Dtype {
        if self.f32 {
            Dtype::F32
        } else {
            Dtype::F64
        }
    }

    fn record(&self, m: &mut Manifest) {
        m.set("modes", self.modes)
            .set("decorr", self.decorr)
            .set("core_radius", self.core_radius);
    }
}

#[derive(Debug, Clone, Args)]
pub struct GenFiberArgs {
    #[command(flatten)]
    pub fiber: FiberArgs,
}

#[derive(Debug, Clone, Args)]
pub struct GenArrayArgs {
    /// Number of fibers in the bundle.
    #[arg(long, default_value_t = 16)]
    pub fibers: usize,
    #[command(flatten)]
    pub fiber: FiberArgs,
}

pub(crate) fn gen_fiber(ctx: &Context, a: GenFiberArgs) -> CliResult<()> {
    let seed = ctx.seed();
    let f = &a.fiber;
    let m = generate_fiber(&f.model().with_seed(seed), f.roi, f.channels)?;
    let array = FiberArrayModel::new(vec![m], vec![seed])?;
    let name = f.name.clone().unwrap_or_else(|| format!("fiber-{seed}"));
    let dir = ctx.out.matrices(&name)?;
    let mut man = ctx.manifest("gen-fiber", Some(seed));
    f.record(&mut man);
    array.write_dir(&dir, f.dtype(), &man)?;
    println!("wrote 1 fiber to {}", dir.display());
    Ok(())
}

pub(crate) fn gen_array(ctx: &Context, a: GenArrayArgs) -> CliResult<()> {
    let seed = ctx.seed();
    let f = &a.fiber;
    let array = generate_array(
        &mut SpeckleRng::new(seed),
        a.fibers,
        &f.model(),
        f.roi,
        f.channels,
    )?;
    let name = f.name.clone().unwrap_or_else(|| format!("array-{seed}"));
    let dir = ctx.out.matrices(&name)?;
    let mut man = ctx.manifest("gen-array", Some(seed));
    f.record(&mut man);
    array.write_dir(&dir, f.dtype(), &man)?;
    let (gr, gc) = array.grid_layout();
    println!(
        "wrote {} fibers ({gr}x{gc} grid) to {}",
        array.len(),
        dir.display()
    );
    Ok(())
}

#[derive(Debug, Clone, Args)]
#[command(group = clap::ArgGroup::new("spectra").args(["sparse", "dense"]))]
pub struct GenDatasetArgs {
    /// SPKT file of the fiber to render through.
    #[arg(long, required = true)]
    pub matrix: Option<PathBuf>,
    /// Number of samples (default: the split total).
    #[arg(long)]
    pub n: Option<usize>,
    /// TRAIN/VAL/TEST counts (default: 29:1:1 of --n, or 9000/1000/1000).
    #[arg(long)]
    pub split: Option<String>,
    /// Sparse spectra with N active channels, or A..B drawn uniformly.
    #[arg(long)]
    pub sparse: Option<String>,
    /// Dense random-walk spectra with this step (the default, at 0.2).
    #[arg(long)]
    pub dense: Option<f64>,
    /// Keep raw amplitudes instead of peak-normalizing.
    #[arg(long)]
    pub raw: bool,
    /// Gaussian noise, sigma as a fraction of the image mean.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Shift each crop by one pixel in a random direction.
    #[arg(long)]
    pub shift: bool,
    /// Centered crop, HxW (default: the whole matrix grid, less a one-pixel
    /// margin with --shift).
    #[arg(long, value_parser = parse_shape)]
    pub roi: Option<(usize, usize)>,
    /// Store images as f32.
    #[arg(long)]
    pub f32: bool,
    /// Output directory name under datasets/.
    #[arg(long)]
    pub name: Option<String>,
}

pub(crate) fn parse_sampler(
    sparse: Option<&str>,
    dense: Option<f64>,
    raw: bool,
) -> CliResult<SpectrumSampler> {
    let text = match (sparse, dense) {
        (Some(s), None) => format!("sparse:{s}"),
        (None, Some(d)) => format!("dense:{d}"),
        (None, None) => "dense:0.2".to_string(),
        (Some(_), Some(_)) => {
            return Err(CliError::Usage(
                "--sparse and --dense are mutually exclusive".into(),
            ))
        }
    };
    let text = if raw { format!("{text}:raw") } else { text };
    text.parse::<SpectrumSampler>()
        .map_err(|e| CliError::Usage(format!("{e}")))
}

pub(crate) fn gen_dataset(ctx: &Context, a: GenDatasetArgs) -> CliResult<()> {
    let path = a.matrix.as_deref().expect("required by clap");
    let m = import_matrix(path)?;
    let sampler = parse_sampler(a.sparse.as_deref(), a.dense, a.raw)?;
    let split = match (&a.split, a.n) {
        (Some(s), _) => s.parse::<Split>()?,
        (None, Some(n)) => Split::proportional(n),
        (None, None) => Split::DESK,
    };
    let n = a.n.unwrap_or(split.total());
    let roi = a.roi.unwrap_or_else(|| {
        let (h, w) = m.roi_shape();
        if a.shift {
            (h.saturating_sub(2), w.saturating_sub(2))
        } else {
            (h, w)
        }
    });
    let spec = DatasetSpec {
        sampler,
        n_samples: n,
        split,
        perturbation: Perturbation {
            noise_level: a.noise,
            shift_one_pixel: a.shift,
        },
        roi,
    };
    let seed = ctx.seed();
    let ds = build_dataset(&m, &spec, &mut SpeckleRng::new(seed))?;
    let name = a.name.clone().unwrap_or_else(|| format!("dataset-{seed}"));
    let dir = ctx.out.datasets(&name)?;
    write_dataset(&ds, &dir, if a.f32 { Dtype::F32 } else { Dtype::F64 })?;
    let mut run = ctx.manifest("gen-dataset", Some(seed));
    run.set("matrix", path.display());
    merge_run(&dir, &run)?;
    println!(
        "wrote {} samples ({split}, {}x{} ROI, {sampler}) to {}",
        ds.len(),
        roi.0,
        roi.1,
        dir.display()
    );
    Ok(())
}

/// Adds the CLI run entries to a manifest a library writer already produced,
/// under a `run.` prefix so they never shadow the format's own keys.
pub(crate) fn merge_run(dir: &Path, run: &Manifest) -> CliResult<()> {
    let path = dir.join("manifest.txt");
    let mut m = Manifest::read(&path)?;
    for (k, v) in run.iter() {
        m.set(&format!("run.{k}"), v);
    }
    m.write(&path)?;
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct ImportArgs {
    /// SPKT files, one per fiber, in array order.
    #[arg(long = "input", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    /// Output directory name under matrices/.
    #[arg(long, default_value = "imported")]
    pub name: String,
}

pub(crate) fn import(ctx: &Context, a: ImportArgs) -> CliResult<()> {
    let fibers = a
        .inputs
        .iter()
        .map(import_matrix)
        .collect::<speckle_core::Result<Vec<_>>>()?;
    // Files carry no generator seed.
    let array = FiberArrayModel::new(fibers, Vec::new())?;
    let dir = ctx.out.matrices(&a.name)?;
    let mut man = ctx.manifest("import-matrix", None);
    man.set(
        "sources",
        a.inputs
            .iter()
            .map(|p| p.display().to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    array.write_dir(&dir, Dtype::F64, &man)?;
    println!("imported {} matrices into {}", array.len(), dir.display());
    Ok(())
}
