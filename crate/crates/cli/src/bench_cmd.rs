//! `bench sampling|compare|robustness|rgb`.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use speckle_core::bench::{
    compare_methods, rgb_scenario, robustness_map, sweep_sampling, CompareConfig, MethodKind,
    MethodSettings, RgbConfig, RobustnessConfig, SweepConfig,
};
use speckle_core::specklegen::FiberArrayModel;
use speckle_core::synth::{synthetic_rgb_images, SpectrumSampler};
use speckle_core::SpeckleRng;

use crate::layout::{list, Context};
use crate::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Experiment {
    /// Mean correlation versus sampling ratio and active channels.
    Sampling,
    /// Correlation histograms of the methods on sparse and dense spectra.
    Compare,
    /// Noise and one-pixel-shift robustness.
    Robustness,
    /// RGB images carried through the bundle, one pixel per fiber.
    Rgb,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[arg(value_enum)]
    pub experiment: Experiment,
    /// Fiber array directory written by gen-array or import-matrix.
    #[arg(long, required = true)]
    pub matrix_dir: Option<PathBuf>,
    /// Comma-separated methods among tr, cs, dl, dl+n, dl+s.
    #[arg(long, default_value = "tr,cs,dl")]
    pub methods: String,
    /// Fiber used by compare and robustness.
    #[arg(long, default_value_t = 0)]
    pub fiber: usize,
    /// Use only the first N fibers of the array (sampling).
    #[arg(long)]
    pub fibers: Option<usize>,
    /// Test spectra per fiber (sampling), per class (compare) or per cell
    /// (robustness).
    #[arg(long)]
    pub n_spectra: Option<usize>,
    /// Sampling ratios, comma-separated (sampling).
    #[arg(long, value_delimiter = ',')]
    pub ratios: Option<Vec<f64>>,
    /// ROI sides, comma-separated (compare, robustness; first one for rgb).
    #[arg(long, value_delimiter = ',')]
    pub sides: Option<Vec<usize>>,
    /// Active-channel counts, comma-separated (sampling, robustness).
    #[arg(long, value_delimiter = ',')]
    pub n_lambdas: Option<Vec<usize>>,
    /// Noise levels, comma-separated (robustness).
    #[arg(long, value_delimiter = ',')]
    pub noise_levels: Option<Vec<f64>>,
    /// Skip the one-pixel-shift test (robustness).
    #[arg(long)]
    pub no_shift: bool,
    /// Images carried in the rgb scenario.
    #[arg(long, default_value_t = 3)]
    pub images: usize,
    /// Training epochs of the DL variants.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Training images of the DL variants.
    #[arg(long)]
    pub n_train: Option<usize>,
    /// Validation images of the DL variants.
    #[arg(long)]
    pub n_val: Option<usize>,
    /// FISTA iteration cap.
    #[arg(long)]
    pub cs_max_iters: Option<usize>,
    /// Validation spectra for choosing the CS weight (0 keeps the default).
    #[arg(long)]
    pub n_tune_cs: Option<usize>,
    /// Output directory name under reports/.
    #[arg(long)]
    pub name: Option<String>,
}

impl BenchArgs {
    fn settings(&self) -> MethodSettings {
        let mut s = MethodSettings::default();
        if let Some(e) = self.epochs {
            s.dl.train.epochs = e;
        }
        if let Some(n) = self.n_train {
            s.dl.n_train = n;
        }
        if let Some(n) = self.n_val {
            s.dl.n_val = n;
        }
        if let Some(n) = self.cs_max_iters {
            s.cs.max_iters = n;
        }
        if let Some(n) = self.n_tune_cs {
            s.n_tune_cs = n;
        }
        s
    }
}

pub(crate) fn bench(ctx: &Context, a: BenchArgs) -> CliResult<()> {
    let methods = MethodKind::parse_list(&a.methods)?;
    let dir_in = a.matrix_dir.as_deref().expect("required by clap");
    let array = FiberArrayModel::read_dir(dir_in)?;
    let settings = a.settings();
    let seed = ctx.seed();
    let exp_name = format!("{:?}", a.experiment).to_lowercase();
    let name = a
        .name
        .clone()
        .unwrap_or_else(|| format!("{exp_name}-{seed}"));
    let fiber = array.fibers().get(a.fiber).ok_or_else(|| {
        CliError::Config(format!(
            "--fiber {} is out of range for {} fibers",
            a.fiber,
            array.len()
        ))
    })?;

    let mut man = settings.to_manifest();
    for (k, v) in ctx.manifest("bench", Some(seed)).iter() {
        man.set(k, v);
    }
    man.set("experiment", &exp_name)
        .set("matrix_dir", dir_in.display())
        .set("methods", list(&methods));
    let mut summary = String::new();
    let mut tables = Vec::new();

    match a.experiment {
        Experiment::Sampling => {
            let mut cfg = SweepConfig::desk(seed);
            if let Some(r) = &a.ratios {
                cfg.ratios = r.clone();
            }
            if let Some(n) = &a.n_lambdas {
                cfg.n_lambdas = n.clone();
            }
            if let Some(n) = a.n_spectra {
                cfg.n_spectra_per_fiber = n;
            }
            let n = a.fibers.unwrap_or(array.len()).min(array.len());
            man.set("fibers", n)
                .set("ratios", list(&cfg.ratios))
                .set("n_lambdas", list(&cfg.n_lambdas))
                .set("n_spectra_per_fiber", cfg.n_spectra_per_fiber);
            for &m in &methods {
                let r = sweep_sampling(&array.fibers()[..n], m, &cfg, &settings)?;
                let t = r.table();
                writeln!(summary, "{m}:\n{}", t.to_text()).unwrap();
                let mut sides: Vec<usize> = r.cells.iter().map(|c| c.side).collect();
                sides.dedup();
                for s in sides {
                    writeln!(
                        summary,
                        "{m} at {s}x{s}: mean non-increasing in N_lambda within one std: {}",
                        r.non_increasing_within_std(s)
                    )
                    .unwrap();
                }
                summary.push('\n');
                tables.push((format!("sampling_{}.csv", file_safe(m)), t));
            }
        }
        Experiment::Compare => {
            let mut cfg = CompareConfig::desk(seed);
            if let Some(s) = &a.sides {
                cfg.sides = s.clone();
            }
            if let Some(n) = a.n_spectra {
                cfg.n_per_class = n;
            }
            man.set("fiber", a.fiber)
                .set("sides", list(&cfg.sides))
                .set("n_per_class", cfg.n_per_class);
            let r = compare_methods(fiber, &methods, &cfg, &settings)?;
            let t = r.summary();
            writeln!(summary, "{}", t.to_text()).unwrap();
            tables.push(("compare_summary.csv".into(), t));
            tables.push(("compare_histogram.csv".into(), r.histogram()));
        }
        Experiment::Robustness => {
            let mut cfg = RobustnessConfig::desk(seed);
            if let Some(s) = &a.sides {
                cfg.sides = s.clone();
            }
            if let Some(n) = &a.n_lambdas {
                cfg.n_lambdas = n.clone();
            }
            if let Some(n) = &a.noise_levels {
                cfg.noise_levels = n.clone();
            }
            if let Some(n) = a.n_spectra {
                cfg.n_per_cell = n;
            }
            cfg.shift_test = !a.no_shift;
            man.set("fiber", a.fiber)
                .set("sides", list(&cfg.sides))
                .set("noise_levels", list(&cfg.noise_levels))
                .set("n_lambdas", list(&cfg.n_lambdas))
                .set("n_per_cell", cfg.n_per_cell)
                .set("shift_test", cfg.shift_test);
            let r = robustness_map(fiber, &methods, &cfg, &settings)?;
            let map = r.ratio_map();
            writeln!(summary, "{}", map.to_text()).unwrap();
            if cfg.shift_test {
                let s = r.shift_table();
                writeln!(summary, "{}", s.to_text()).unwrap();
                tables.push(("robustness_shift.csv".into(), s));
            }
            tables.push(("robustness_grid.csv".into(), r.grid()));
            tables.push(("robustness_ratio_map.csv".into(), map));
        }
        Experiment::Rgb => {
            let side = a.sides.as_ref().and_then(|s| s.first().copied()).unwrap_or(5);
            let px = (array.len() as f64).sqrt().floor() as usize;
            if px == 0 {
                return Err(CliError::Config("the array has no fibers".into()));
            }
            let mut rng = SpeckleRng::new(seed);
            let images = synthetic_rgb_images(a.images, px, px, &mut rng);
            let cfg = RgbConfig {
                side,
                train_sampler: SpectrumSampler::sparse_range(1, array.channels()),
                seed: rng.next_u64(),
            };
            man.set("side", side)
                .set("raster", format!("{px}x{px}"))
                .set("images", a.images);
            let r = rgb_scenario(&array, &methods, &images, &cfg, &settings)?;
            let t = r.table();
            writeln!(summary, "{}", t.to_text()).unwrap();
            tables.push(("rgb.csv".into(), t));
            let dir = ctx.out.reports(&name)?;
            r.write_rasters(dir.join("rasters"))?;
        }
    }

    let dir = ctx.out.reports(&name)?;
    for (file, t) in &tables {
        t.write_csv(dir.join(file))?;
    }
    fs::write(dir.join("summary.txt"), &summary)?;
    man.write(dir.join("manifest.txt"))?;
    print!("{summary}");
    println!("wrote {}", dir.display());
    Ok(())
}

fn file_safe(m: MethodKind) -> String {
    m.name().replace('+', "_")
}
