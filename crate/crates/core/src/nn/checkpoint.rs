//! `SPKN` checkpoint files.
//!
//! Layout (little-endian): magic `SPKN`, `u16` version, the network's
//! canonical text (`u32` length + UTF-8), a dtype tag, then per layer a `u16`
//! tensor count and per tensor a `u8` rank, `u32` dims and the values.
//! Trailing sections hold the epoch history, the selected epoch, the dataset
//! hash and the training options text. A CRC32 of everything before it ends
//! the file.

use std::fs;
use std::path::Path;

use super::network::{LayerParams, Network};
use super::scalar::Scalar;
use super::spec::NetworkSpec;
use super::train::{EpochStats, TrainedNetwork};
use crate::error::{FormatError, Result};
use crate::format::{checked_dims, Decoder, Dtype, Encoder};

pub const SPKN_MAGIC: [u8; 4] = *b"SPKN";
pub const SPKN_VERSION: u16 = 1;

pub fn encode_checkpoint<T: Scalar>(net: &TrainedNetwork<T>, dtype: Dtype) -> Vec<u8> {
    let mut enc = Encoder::new(SPKN_MAGIC, SPKN_VERSION);
    enc.text(&net.network.spec().canonical_text())
        .u8(dtype.tag());
    let shapes = net.network.shapes();
    for ((layer, p), input) in net
        .network
        .spec()
        .layers
        .iter()
        .zip(net.network.params())
        .zip(shapes)
    {
        let dims: Vec<Vec<usize>> = layer
            .param_shapes(*input)
            .into_iter()
            .chain(layer.running_shapes(*input))
            .collect();
        enc.u16(dims.len() as u16);
        for (d, t) in dims.iter().zip(p.trainable.iter().chain(&p.running)) {
            enc.u8(d.len() as u8);
            for &x in d {
                enc.u32(x as u32);
            }
            enc.values(t.iter().map(|v| v.as_f64()), dtype);
        }
    }
    enc.u32(net.history.len() as u32);
    for e in &net.history {
        enc.u32(e.epoch as u32).f64(e.train_loss).f64(e.val_loss);
    }
    enc.u32(net.best_epoch as u32)
        .u32(net.dataset_hash)
        .text(&net.options);
    enc.finish()
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<TrainedNetwork<T>> {
    let mut dec = Decoder::open(bytes, SPKN_MAGIC, SPKN_VERSION)?;
    let spec = NetworkSpec::parse(&dec.text()?)?;
    let dtype = Dtype::from_tag(dec.u8()?)?;
    let shapes = spec.shapes()?;
    let mut params = Vec::with_capacity(spec.layers.len());
    for (layer, input) in spec.layers.iter().zip(&shapes) {
        let trainable_n = layer.param_shapes(*input).len();
        let count = dec.u16()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let rank = dec.u8()? as usize;
            let dims = (0..rank)
                .map(|_| dec.u32())
                .collect::<Result<Vec<_>, _>>()?;
            let len = checked_dims(&dims)?;
            tensors.push(
                dec.values(len, dtype)?
                    .into_iter()
                    .map(T::of)
                    .collect::<Vec<T>>(),
            );
        }
        if count < trainable_n {
            return Err(FormatError::Malformed(format!(
                "{} layer has {count} tensors",
                layer.name()
            ))
            .into());
        }
        let running = tensors.split_off(trainable_n);
        params.push(LayerParams {
            trainable: tensors,
            running,
        });
    }
    let network = Network::from_params(spec, params)?;
    let epochs = dec.u32()? as usize;
    if epochs > dec.remaining() / 20 {
        return Err(FormatError::DimensionOverflow("epoch history".into()).into());
    }
    let history = (0..epochs)
        .map(|_| {
            Ok(EpochStats {
                epoch: dec.u32()? as usize,
                train_loss: dec.f64()?,
                val_loss: dec.f64()?,
            })
        })
        .collect::<Result<Vec<_>, FormatError>>()?;
    let best_epoch = dec.u32()? as usize;
    let dataset_hash = dec.u32()?;
    let options = dec.text()?;
    dec.expect_end()?;
    Ok(TrainedNetwork {
        network,
        history,
        best_epoch,
        dataset_hash,
        options,
    })
}

/// Writes tensors in the network's own precision.
pub fn save_checkpoint<T: Scalar>(net: &TrainedNetwork<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(net, T::DTYPE))?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<TrainedNetwork<T>> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::nn::network::Workspace;
    use crate::nn::spec::{build_cnn_large, build_cnn_small, build_multifiber};
    use crate::rng::SpeckleRng;

    fn trained<T: Scalar>(spec: NetworkSpec, seed: u64) -> TrainedNetwork<T> {
        let mut network = Network::<T>::new(spec, &mut SpeckleRng::new(seed)).unwrap();
        for p in network.params_mut() {
            for (i, r) in p.running.iter_mut().enumerate() {
                r.iter_mut()
                    .enumerate()
                    .for_each(|(j, v)| *v = T::of(0.1 * (i + j) as f64 + 0.5));
            }
        }
        TrainedNetwork {
            network,
            history: vec![
                EpochStats {
                    epoch: 1,
                    train_loss: 0.5,
                    val_loss: 0.4,
                },
                EpochStats {
                    epoch: 2,
                    train_loss: 0.3,
                    val_loss: 0.35,
                },
            ],
            best_epoch: 2,
            dataset_hash: 0xdeadbeef,
            options: "epochs=2".into(),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let a = trained::<f32>(build_cnn_small(), 1);
        let b: TrainedNetwork<f32> = decode_checkpoint(&encode_checkpoint(&a, Dtype::F32)).unwrap();
        assert_eq!(a, b);
        let c = trained::<f64>(build_multifiber(2).unwrap(), 2);
        let d: TrainedNetwork<f64> = decode_checkpoint(&encode_checkpoint(&c, Dtype::F64)).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn reloaded_predictions_match() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.spkn");
        let a = trained::<f32>(build_cnn_small(), 3);
        save_checkpoint(&a, &path).unwrap();
        let b: TrainedNetwork<f32> = load_checkpoint(&path).unwrap();
        let raw: Vec<f64> = (0..25).map(|i| (i as f64 * 0.4).sin() + 1.5).collect();
        let (mut pa, mut pb) = (vec![0.0; 43], vec![0.0; 43]);
        a.network
            .predict_into(&raw, &mut Workspace::default(), &mut Vec::new(), &mut pa)
            .unwrap();
        b.network
            .predict_into(&raw, &mut Workspace::default(), &mut Vec::new(), &mut pb)
            .unwrap();
        assert_eq!(pa, pb);
    }

    #[test]
    fn corrupted_payload_fails_crc() {
        let mut bytes = encode_checkpoint(&trained::<f32>(build_cnn_small(), 4), Dtype::F32);
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(
            decode_checkpoint::<f32>(&bytes),
            Err(Error::Format(FormatError::CrcMismatch { .. }))
        ));
    }

    #[test]
    fn large_checkpoint_is_dominated_by_first_dense_layer() {
        let bytes = encode_checkpoint(&trained::<f32>(build_cnn_large(), 5), Dtype::F32);
        let dense = 14 * 14 * 32 * 512 * 4;
        assert!(bytes.len() > dense);
        assert!(
            (dense as f64) > 0.9 * bytes.len() as f64,
            "{} of {}",
            dense,
            bytes.len()
        );
    }
}
