//! Library-level path from fiber generation to a streamed hyperspectral frame.

use speckle_core::bench::{fit_method, test_samples, FittedMethod, MethodKind, MethodSettings};
use speckle_core::format::Dtype;
use speckle_core::nn::NnReconstructor;
use speckle_core::pipeline::{run_stream, RandomSpectraSource};
use speckle_core::recon_linear::fit_auto;
use speckle_core::specklegen::{generate_array, FiberArrayModel, FiberModel};
use speckle_core::synth::{
    build_dataset, read_dataset, write_dataset, DatasetSpec, Perturbation, Split,
    SpectrumSampler,
};
use speckle_core::{Reconstructor, SpeckleRng};

fn array() -> FiberArrayModel {
    generate_array(&mut SpeckleRng::new(3), 4, &FiberModel::default(), (24, 24), 43).unwrap()
}

#[test]
fn dataset_survives_disk_and_tikhonov_recovers_oversampled_spectra() {
    let arr = array();
    let fiber = &arr.fibers()[1];
    let spec = DatasetSpec {
        sampler: SpectrumSampler::dense(0.2),
        n_samples: 300,
        split: Split::new(0, 200, 100),
        perturbation: Perturbation::NONE,
        roi: (20, 20),
    };
    let ds = build_dataset(fiber, &spec, &mut SpeckleRng::new(4)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&ds, dir.path(), Dtype::F64).unwrap();
    let ds = read_dataset(dir.path()).unwrap();

    let pairs: Vec<_> = ds
        .val()
        .iter()
        .map(|s| (s.image.clone(), s.spectrum.clone()))
        .collect();
    let tr = FittedMethod::Tr(fit_auto(&fiber.crop_centered((20, 20)).unwrap(), &pairs).unwrap());
    let r = tr.evaluate(ds.test(), Default::default()).unwrap();
    assert!(r.mean > 0.99, "{}", r.mean);
}

#[test]
fn short_training_streams_a_whole_array() {
    let arr = array();
    let mut settings = MethodSettings::default();
    settings.dl.n_train = 3000;
    settings.dl.n_val = 300;
    settings.dl.train.epochs = 10;
    let sampler = SpectrumSampler::sparse_range(1, 5);
    let FittedMethod::Dl(net) =
        fit_method(MethodKind::Dl, &arr.fibers()[0], (5, 5), sampler, &settings, 9).unwrap()
    else {
        unreachable!()
    };
    let test = test_samples(&arr.fibers()[0], (5, 5), sampler, Perturbation::NONE, 50, 10).unwrap();
    let m = FittedMethod::Dl(net.clone())
        .evaluate(&test, Default::default())
        .unwrap();
    // Short training on few-line spectra; about 0.67 here.
    assert!(m.mean > 0.5, "mean {}", m.mean);

    let shared: Vec<&NnReconstructor> = vec![&net; arr.len()];
    let mut src = RandomSpectraSource::new(&arr, sampler, 11);
    let out = run_stream(&arr, &shared, &mut src, 3, 2).unwrap();
    assert_eq!(out.frames.len(), 3);
    assert_eq!(out.timing.frames.len(), 3);
    // The raster holds what the per-fiber reconstructor gives on the same crop.
    let mut src = RandomSpectraSource::new(&arr, sampler, 11);
    let packet = speckle_core::pipeline::FrameSource::next_frame(&mut src)
        .unwrap()
        .unwrap();
    let origin = arr.roi_origin_in_frame(2, (5, 5)).unwrap();
    let crop = speckle_core::crop_roi(&packet.frame, origin, (5, 5)).unwrap();
    let direct = net.reconstruct(&crop).unwrap();
    assert_eq!(out.frames[0].spectrum(2), direct.values());
}
