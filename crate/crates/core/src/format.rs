//! On-disk formats shared across modules.
//!
//! The binary containers (`SPKT` matrices, `SPKD` datasets, `SPKR` linear
//! reconstructors, `SPKN` networks) share one discipline: a 4-byte magic, a
//! little-endian `u16` version, a module-specific little-endian body, and a
//! trailing CRC32 (IEEE) over every preceding byte. The plain-text formats are
//! key=value manifests, spectrum CSVs and 16-bit binary PGM images.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::domain::{check_len, SpeckleImage, Spectrum, TransmissionMatrix};
use crate::error::{Error, FormatError, Result};

pub const SPKT_MAGIC: [u8; 4] = *b"SPKT";
pub const SPKT_VERSION: u16 = 1;

/// Element precision of a stored payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn tag(self) -> u8 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self, FormatError> {
        match tag {
            1 => Ok(Dtype::F32),
            2 => Ok(Dtype::F64),
            other => Err(FormatError::UnknownDtype(other)),
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        }
    }
}

impl std::str::FromStr for Dtype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Dtype::F32),
            "f64" => Ok(Dtype::F64),
            other => Err(Error::invalid(format!(
                "unknown precision {other:?} (f32|f64)"
            ))),
        }
    }
}

/// Builds a CRC-terminated container.
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new(magic: [u8; 4], version: u16) -> Self {
        let mut buf = Vec::with_capacity(64);
        buf.extend_from_slice(&magic);
        buf.extend_from_slice(&version.to_le_bytes());
        Self { buf }
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u16(&mut self, v: u16) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    /// Writes values at the given precision.
    pub fn values(&mut self, values: impl IntoIterator<Item = f64>, dtype: Dtype) -> &mut Self {
        for v in values {
            match dtype {
                Dtype::F32 => self.buf.extend_from_slice(&(v as f32).to_le_bytes()),
                Dtype::F64 => self.buf.extend_from_slice(&v.to_le_bytes()),
            }
        }
        self
    }

    pub fn f32_slice(&mut self, values: &[f32]) -> &mut Self {
        for v in values {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
        self
    }

    /// `u32` length prefix then UTF-8 bytes.
    pub fn text(&mut self, s: &str) -> &mut Self {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
        self
    }

    /// `u16` length prefix then UTF-8 bytes.
    pub fn short_text(&mut self, s: &str) -> &mut Self {
        self.u16(s.len() as u16);
        self.buf.extend_from_slice(s.as_bytes());
        self
    }

    pub fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.buf.extend_from_slice(&crc.to_le_bytes());
        self.buf
    }
}

/// Reads a container produced by [`Encoder`]. Magic, then CRC, then version
/// are verified before any body field is returned.
pub struct Decoder<'a> {
    body: &'a [u8],
    pos: usize,
    version: u16,
}

impl<'a> Decoder<'a> {
    pub fn open(bytes: &'a [u8], magic: [u8; 4], max_version: u16) -> Result<Self, FormatError> {
        if bytes.len() < 4 || bytes[..4] != magic {
            return Err(FormatError::BadMagic {
                expected: magic,
                found: bytes[..bytes.len().min(4)].to_vec(),
            });
        }
        if bytes.len() < 10 {
            return Err(FormatError::CrcMismatch {
                stored: 0,
                computed: crc32fast::hash(bytes),
            });
        }
        let (content, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4-byte tail"));
        let computed = crc32fast::hash(content);
        if stored != computed {
            return Err(FormatError::CrcMismatch { stored, computed });
        }
        let version = u16::from_le_bytes([content[4], content[5]]);
        if version == 0 || version > max_version {
            return Err(FormatError::UnsupportedVersion {
                found: version,
                supported: max_version,
            });
        }
        Ok(Self {
            body: content,
            pos: 6,
            version,
        })
    }

    pub fn version(&self) -> u16 {
        self.version
    }

    pub fn remaining(&self) -> usize {
        self.body.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.remaining() < n {
            return Err(FormatError::Malformed(format!(
                "needed {n} bytes at offset {}, {} left",
                self.pos,
                self.remaining()
            )));
        }
        let out = &self.body[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// Reads `n` values stored at `dtype`, widening f32 exactly.
    pub fn values(&mut self, n: usize, dtype: Dtype) -> Result<Vec<f64>, FormatError> {
        let bytes = n
            .checked_mul(dtype.size())
            .ok_or_else(|| FormatError::DimensionOverflow(format!("{n} elements")))?;
        if bytes > self.remaining() {
            return Err(FormatError::DimensionOverflow(format!(
                "header declares {n} {} values ({bytes} bytes) but only {} bytes remain",
                dtype.name(),
                self.remaining()
            )));
        }
        let raw = self.take(bytes)?;
        Ok(match dtype {
            Dtype::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            Dtype::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        })
    }

    pub fn f32_vec(&mut self, n: usize) -> Result<Vec<f32>, FormatError> {
        let bytes = n
            .checked_mul(4)
            .filter(|b| *b <= self.remaining())
            .ok_or_else(|| {
                FormatError::DimensionOverflow(format!("{n} f32 values exceed payload"))
            })?;
        Ok(self
            .take(bytes)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>, FormatError> {
        self.values(n, Dtype::F64)
    }

    pub fn text(&mut self) -> Result<String, FormatError> {
        let n = self.u32()? as usize;
        self.utf8(n)
    }

    pub fn short_text(&mut self) -> Result<String, FormatError> {
        let n = self.u16()? as usize;
        self.utf8(n)
    }

    fn utf8(&mut self, n: usize) -> Result<String, FormatError> {
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec())
            .map_err(|e| FormatError::Malformed(format!("invalid UTF-8 text: {e}")))
    }

    pub fn expect_end(&self) -> Result<(), FormatError> {
        if self.remaining() == 0 {
            Ok(())
        } else {
            Err(FormatError::Malformed(format!(
                "{} trailing bytes before CRC",
                self.remaining()
            )))
        }
    }
}

/// Checked product of dimensions declared in a header.
pub(crate) fn checked_dims(dims: &[u32]) -> Result<usize, FormatError> {
    dims.iter().try_fold(1usize, |acc, d| {
        acc.checked_mul(*d as usize)
            .ok_or_else(|| FormatError::DimensionOverflow(format!("dimensions {dims:?}")))
    })
}

/// Encodes a transmission matrix as an `SPKT` container.
///
/// Layout after magic/version: `X, Y, h, w` as `u32`, dtype tag `u8`, the
/// column-major payload (`X * Y` values), then `Y` wavelength labels each as
/// `u16` length + UTF-8, then the CRC.
pub fn encode_matrix(a: &TransmissionMatrix, dtype: Dtype) -> Vec<u8> {
    let (h, w) = a.roi_shape();
    let mut enc = Encoder::new(SPKT_MAGIC, SPKT_VERSION);
    enc.u32(a.pixels() as u32)
        .u32(a.channels() as u32)
        .u32(h as u32)
        .u32(w as u32)
        .u8(dtype.tag())
        // nalgebra storage is column-major already
        .values(a.matrix().iter().copied(), dtype);
    for label in a.wavelength_labels() {
        enc.short_text(label);
    }
    enc.finish()
}

pub fn decode_matrix(bytes: &[u8]) -> Result<TransmissionMatrix> {
    let mut dec = Decoder::open(bytes, SPKT_MAGIC, SPKT_VERSION)?;
    let x = dec.u32()?;
    let y = dec.u32()?;
    let h = dec.u32()?;
    let w = dec.u32()?;
    let dtype = Dtype::from_tag(dec.u8()?)?;
    if checked_dims(&[h, w])? != x as usize {
        return Err(FormatError::DimensionOverflow(format!(
            "roi {h}x{w} does not hold {x} pixels"
        ))
        .into());
    }
    let n = checked_dims(&[x, y])?;
    let payload = dec.values(n, dtype)?;
    let mut labels = Vec::with_capacity(y as usize);
    for _ in 0..y {
        labels.push(dec.short_text()?);
    }
    dec.expect_end()?;
    let m = DMatrix::from_vec(x as usize, y as usize, payload);
    TransmissionMatrix::new(m, (h as usize, w as usize), labels)
}

pub fn write_matrix(a: &TransmissionMatrix, path: impl AsRef<Path>, dtype: Dtype) -> Result<()> {
    fs::write(path, encode_matrix(a, dtype))?;
    Ok(())
}

/// Reads an `SPKT` file. Values stored as f32 widen exactly to f64.
pub fn import_matrix(path: impl AsRef<Path>) -> Result<TransmissionMatrix> {
    let bytes = fs::read(path)?;
    decode_matrix(&bytes)
}

/// Size in bytes of an `SPKT` file for the given dimensions and label lengths.
pub fn matrix_file_size(pixels: usize, channels: usize, dtype: Dtype, label_len: usize) -> usize {
    4 + 2 + 16 + 1 + pixels * channels * dtype.size() + channels * (2 + label_len) + 4
}

/// Binary 16-bit PGM (P5), scaled so the brightest pixel maps to 65535.
pub fn encode_pgm(img: &SpeckleImage) -> Vec<u8> {
    let max = img.max();
    let scale = if max > 0.0 { 65535.0 / max } else { 0.0 };
    let mut out = format!("P5\n{} {}\n65535\n", img.width(), img.height()).into_bytes();
    for p in img.pixels() {
        let v = (p * scale).round().clamp(0.0, 65535.0) as u16;
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

pub fn write_pgm(img: &SpeckleImage, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_pgm(img))?;
    Ok(())
}

/// Parses a 16-bit P5 PGM; pixel values are returned unscaled (0..=maxval).
pub fn decode_pgm(bytes: &[u8]) -> Result<SpeckleImage> {
    let malformed = |m: &str| Error::Format(FormatError::Malformed(format!("PGM: {m}")));
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(malformed("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| malformed("header"))?);
    }
    pos += 1;
    if fields[0] != "P5" {
        return Err(Error::Format(FormatError::BadMagic {
            expected: *b"P5\n ",
            found: fields[0].as_bytes().to_vec(),
        }));
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| malformed("non-numeric header"))
    };
    let (w, h, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
    if maxval < 256 {
        return Err(malformed("only 16-bit PGM is supported"));
    }
    let data = bytes.get(pos..).unwrap_or(&[]);
    if data.len() != w * h * 2 {
        return Err(malformed("payload size does not match header"));
    }
    let pixels = data
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64)
        .collect();
    SpeckleImage::new(h, w, pixels)
}

/// `index,wavelength_label,intensity` rows under a header line.
pub fn spectrum_to_csv(s: &Spectrum, labels: &[String]) -> Result<String> {
    check_len("spectrum csv labels", s.len(), labels.len())?;
    let mut out = String::from("index,wavelength_label,intensity\n");
    for (i, (v, label)) in s.values().iter().zip(labels).enumerate() {
        writeln!(out, "{i},{label},{v:?}").unwrap();
    }
    Ok(out)
}

pub fn spectrum_from_csv(text: &str) -> Result<(Spectrum, Vec<String>)> {
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (n == 0 && line.starts_with("index")) {
            continue;
        }
        let parts: Vec<&str> = line.splitn(3, ',').collect();
        let bad = || {
            Error::Format(FormatError::Malformed(format!(
                "spectrum csv line {}",
                n + 1
            )))
        };
        if parts.len() != 3 {
            return Err(bad());
        }
        let idx: usize = parts[0].parse().map_err(|_| bad())?;
        if idx != values.len() {
            return Err(bad());
        }
        labels.push(parts[1].to_string());
        values.push(parts[2].parse::<f64>().map_err(|_| bad())?);
    }
    Ok((Spectrum::new(values)?, labels))
}

/// Ordered key=value manifest.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    entries: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.entries.insert(key.to_string(), value.to_string());
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| {
            Error::Format(FormatError::Malformed(format!(
                "manifest is missing key {key:?}"
            )))
        })
    }

    pub fn parse_value<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.require(key)?.parse().map_err(|_| {
            Error::Format(FormatError::Malformed(format!(
                "manifest key {key:?} is malformed"
            )))
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Manifest::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Format(FormatError::Malformed(format!(
                    "manifest line {}: {line}",
                    n + 1
                )))
            })?;
            m.set(k.trim(), v.trim());
        }
        Ok(m)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SpeckleRng;
    use proptest::prelude::*;

    fn sample_matrix(seed: u64) -> TransmissionMatrix {
        let mut rng = SpeckleRng::new(seed);
        let m = DMatrix::from_fn(12, 5, |_, _| rng.uniform() * 3.0);
        TransmissionMatrix::with_default_labels(m, (3, 4)).unwrap()
    }

    #[test]
    fn matrix_round_trip_f64_is_bit_exact() {
        let a = sample_matrix(1);
        let back = decode_matrix(&encode_matrix(&a, Dtype::F64)).unwrap();
        assert_eq!(a, back);
    }

    #[test]
    fn f32_payload_widens_exactly() {
        let a = sample_matrix(2);
        let back = decode_matrix(&encode_matrix(&a, Dtype::F32)).unwrap();
        for (x, y) in a.matrix().iter().zip(back.matrix().iter()) {
            assert_eq!((*x as f32) as f64, *y);
        }
        // A second f32 round trip is lossless.
        let again = decode_matrix(&encode_matrix(&back, Dtype::F32)).unwrap();
        assert_eq!(back, again);
    }

    #[test]
    fn truncated_file_is_crc_error() {
        let bytes = encode_matrix(&sample_matrix(3), Dtype::F32);
        let err = decode_matrix(&bytes[..bytes.len() - 7]).unwrap_err();
        assert!(
            matches!(err, Error::Format(FormatError::CrcMismatch { .. })),
            "{err:?}"
        );
    }

    #[test]
    fn flipped_payload_bit_is_crc_error() {
        let mut bytes = encode_matrix(&sample_matrix(3), Dtype::F64);
        bytes[40] ^= 0x10;
        let err = decode_matrix(&bytes).unwrap_err();
        assert!(matches!(
            err,
            Error::Format(FormatError::CrcMismatch { .. })
        ));
    }

    #[test]
    fn bad_magic_is_distinct() {
        let mut bytes = encode_matrix(&sample_matrix(4), Dtype::F32);
        bytes[0] = b'X';
        let err = decode_matrix(&bytes).unwrap_err();
        match err {
            Error::Format(e @ FormatError::BadMagic { .. }) => assert_eq!(e.code(), 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn oversized_dims_are_overflow_not_panic() {
        let mut enc = Encoder::new(SPKT_MAGIC, SPKT_VERSION);
        enc.u32(u32::MAX).u32(u32::MAX).u32(65535).u32(65537).u8(1);
        let err = decode_matrix(&enc.finish()).unwrap_err();
        match err {
            Error::Format(e @ FormatError::DimensionOverflow(_)) => assert_eq!(e.code(), 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn storage_for_desk_array_at_paper_scale() {
        // 2700 fibers, 20x20 ROI, 43 channels, f32 payload.
        let per_fiber = matrix_file_size(400, 43, Dtype::F32, 4);
        let total = 2700 * per_fiber;
        let payload_only = 2700 * 400 * 43 * 4;
        assert_eq!(payload_only, 185_760_000);
        assert!(total > payload_only && (total as f64) < payload_only as f64 * 1.01);
        let a = TransmissionMatrix::with_default_labels(DMatrix::zeros(400, 43), (20, 20)).unwrap();
        assert_eq!(encode_matrix(&a, Dtype::F32).len(), per_fiber);
    }

    #[test]
    fn pgm_is_max_scaled_16_bit() {
        let img = SpeckleImage::new(2, 2, vec![0.0, 1.0, 2.0, 4.0]).unwrap();
        let bytes = encode_pgm(&img);
        assert!(bytes.starts_with(b"P5\n2 2\n65535\n"));
        let back = decode_pgm(&bytes).unwrap();
        assert_eq!(back.pixels(), &[0.0, 16384.0, 32768.0, 65535.0]);
    }

    #[test]
    fn spectrum_csv_round_trip() {
        let s = Spectrum::new(vec![0.0, 0.1, 1.0 / 3.0]).unwrap();
        let labels = vec!["450nm".to_string(), "455nm".into(), "460nm".into()];
        let text = spectrum_to_csv(&s, &labels).unwrap();
        assert!(text.starts_with("index,wavelength_label,intensity\n0,450nm,0.0\n"));
        let (back, back_labels) = spectrum_from_csv(&text).unwrap();
        assert_eq!(back, s);
        assert_eq!(back_labels, labels);
    }

    #[test]
    fn manifest_round_trip() {
        let mut m = Manifest::new();
        m.set("seed", 42).set("roi", "20x20");
        let parsed = Manifest::parse(&m.to_text()).unwrap();
        assert_eq!(parsed, m);
        assert_eq!(parsed.parse_value::<u64>("seed").unwrap(), 42);
    }

    proptest! {
        #[test]
        fn spkt_round_trips_any_matrix(
            h in 1usize..6, w in 1usize..6, y in 1usize..8, seed in 0u64..500
        ) {
            let mut rng = SpeckleRng::new(seed);
            let m = DMatrix::from_fn(h * w, y, |_, _| rng.uniform() * 10.0);
            let a = TransmissionMatrix::with_default_labels(m, (h, w)).unwrap();
            prop_assert_eq!(decode_matrix(&encode_matrix(&a, Dtype::F64)).unwrap(), a);
        }
    }
}
