//! `train`: fits a single- or multi-fiber network to datasets on disk.

use std::path::PathBuf;

use clap::Args;
use rayon::prelude::*;
use speckle_core::bench::{cross_correlation, EvalReport, Table};
use speckle_core::nn::{
    save_checkpoint, train as fit_network, ArchConfig, MultiFiberReconstructor, Network, NnReconstructor,
    NnScratch, Scalar, TensorSet, TrainOptions, TrainedNetwork, UpsampleHead,
};
use speckle_core::synth::{read_dataset, Dataset, Sample};
use speckle_core::{Reconstructor, SpeckleRng, Spectrum};

use crate::layout::{list, ArchChoice, Context};
use crate::{CliError, CliResult, Precision};

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Dataset directory; give it N times, in fiber order, for multi:N.
    #[arg(long, required = true)]
    pub dataset: Vec<PathBuf>,
    /// small, large or multi:N (default: small below a 10-pixel ROI side).
    #[arg(long)]
    pub arch: Option<ArchChoice>,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Learning-rate factor applied after every epoch.
    #[arg(long, default_value_t = 0.9)]
    pub lr_decay: f64,
    /// Stop after this many epochs without validation improvement.
    #[arg(long)]
    pub patience: Option<usize>,
    /// Output directory name under models/.
    #[arg(long)]
    pub name: Option<String>,
}

pub(crate) fn train(ctx: &Context, a: TrainArgs) -> CliResult<()> {
    match ctx.precision {
        Precision::F32 => run::<f32>(ctx, a),
        Precision::F64 => run::<f64>(ctx, a),
    }
}

fn run<T: Scalar>(ctx: &Context, a: TrainArgs) -> CliResult<()> {
    let datasets = a
        .dataset
        .iter()
        .map(read_dataset)
        .collect::<speckle_core::Result<Vec<_>>>()?;
    let first = &datasets[0];
    let roi = first.roi_shape();
    let y = first.channels();
    let arch = a.arch.unwrap_or(if roi.0.min(roi.1) < 10 {
        ArchChoice::Small
    } else {
        ArchChoice::Large
    });
    let base = match arch {
        ArchChoice::Small => ArchConfig::small(),
        ArchChoice::Large => ArchConfig::large(),
        ArchChoice::Multi(_) if roi.0.min(roi.1) < 10 => ArchConfig::small(),
        ArchChoice::Multi(_) => ArchConfig::large(),
    };
    let cfg = ArchConfig {
        channels: y,
        ..base.with_input(roi)
    };
    let spec = match arch {
        ArchChoice::Multi(n) => {
            if datasets.len() != n {
                return Err(CliError::Usage(format!(
                    "--arch multi:{n} needs --dataset exactly {n} times (got {})",
                    datasets.len()
                )));
            }
            for (d, path) in datasets.iter().zip(&a.dataset) {
                if d.roi_shape() != roi || d.channels() != y || d.split() != first.split() {
                    return Err(CliError::Config(format!(
                        "{} differs from the first dataset in ROI, channels or split",
                        path.display()
                    )));
                }
            }
            cfg.multi_fiber(n, &UpsampleHead::default())?
        }
        _ => {
            if datasets.len() != 1 {
                return Err(CliError::Usage(format!(
                    "--arch {arch} takes one --dataset (got {})",
                    datasets.len()
                )));
            }
            cfg.single_fiber()?
        }
    };

    let seed = ctx.seed();
    let mut rng = SpeckleRng::new(seed);
    let net = Network::<T>::new(spec, &mut rng)?;
    let (train_set, val_set) = if let ArchChoice::Multi(_) = arch {
        let tr: Vec<&[Sample]> = datasets.iter().map(Dataset::train).collect();
        let va: Vec<&[Sample]> = datasets.iter().map(Dataset::val).collect();
        (
            TensorSet::from_fiber_groups(&net, &tr)?,
            TensorSet::from_fiber_groups(&net, &va)?,
        )
    } else {
        (
            TensorSet::from_samples(&net, first.train())?,
            TensorSet::from_samples(&net, first.val())?,
        )
    };
    let opts = TrainOptions {
        epochs: a.epochs,
        batch_size: a.batch,
        learning_rate: a.lr,
        lr_decay: a.lr_decay,
        patience: a.patience,
        seed: rng.next_u64(),
        ..TrainOptions::default()
    };
    let trained = fit_network(net, &train_set, &val_set, &opts)?;

    let name = a.name.clone().unwrap_or_else(|| format!("model-{seed}"));
    let dir = ctx.out.models(&name)?;
    save_checkpoint(&trained, dir.join("model.spkn"))?;
    let mut hist = Table::new(&["epoch", "train_loss", "val_loss"]);
    for e in &trained.history {
        hist.push(vec![
            e.epoch.to_string(),
            format!("{:e}", e.train_loss),
            format!("{:e}", e.val_loss),
        ]);
    }
    hist.write_csv(dir.join("history.csv"))?;

    let test = test_correlations(&trained, &datasets, arch)?;
    let mut man = ctx.manifest("train", Some(seed));
    man.set("datasets", list(&a.dataset.iter().map(|p| p.display()).collect::<Vec<_>>()))
        .set("arch", arch)
        .set("roi", format!("{}x{}", roi.0, roi.1))
        .set("channels", y)
        .set("params", trained.network.spec().param_count()?)
        .set("options", opts)
        .set("best_epoch", trained.best_epoch)
        .set("dataset_hash", format!("{:08x}", trained.dataset_hash));
    if let Some(r) = &test {
        man.set("test_mean_correlation", r.mean)
            .set("test_std_correlation", r.std)
            .set("test_failure_fraction", r.failure_fraction);
    }
    man.write(dir.join("manifest.txt"))?;
    match test {
        Some(r) => println!(
            "best epoch {} of {}; test correlation {:.4} +- {:.4}; wrote {}",
            trained.best_epoch,
            trained.history.len(),
            r.mean,
            r.std,
            dir.display()
        ),
        None => println!(
            "best epoch {} of {}; wrote {}",
            trained.best_epoch,
            trained.history.len(),
            dir.display()
        ),
    }
    Ok(())
}

/// Correlations on the test split, pooled over fibers for multi-fiber nets.
fn test_correlations<T: Scalar>(
    trained: &TrainedNetwork<T>,
    datasets: &[Dataset],
    arch: ArchChoice,
) -> CliResult<Option<EvalReport>> {
    if datasets[0].test().is_empty() {
        return Ok(None);
    }
    let net = trained.network.clone();
    let corr: Vec<f64> = if let ArchChoice::Multi(n) = arch {
        let r = MultiFiberReconstructor::new(net)?;
        let y = r.channels();
        let per_sample: Vec<Vec<f64>> = (0..datasets[0].test().len())
            .into_par_iter()
            .map_init(NnScratch::default, |s, i| {
                let imgs: Vec<_> = datasets.iter().map(|d| &d.test()[i].image).collect();
                let mut out = vec![0.0; n * y];
                r.reconstruct_group(&imgs, s, &mut out)?;
                datasets
                    .iter()
                    .enumerate()
                    .map(|(f, d)| {
                        let got = Spectrum::from_clamped(out[f * y..(f + 1) * y].to_vec());
                        cross_correlation(&got, &d.test()[i].spectrum)
                    })
                    .collect()
            })
            .collect::<speckle_core::Result<_>>()?;
        per_sample.into_iter().flatten().collect()
    } else {
        let r = NnReconstructor::new(net)?;
        datasets[0]
            .test()
            .par_iter()
            .map_init(NnScratch::default, |s, t| {
                cross_correlation(&r.reconstruct_with(&t.image, s)?, &t.spectrum)
            })
            .collect::<speckle_core::Result<_>>()?
    };
    Ok(Some(EvalReport::new(corr, Default::default())?))
}
