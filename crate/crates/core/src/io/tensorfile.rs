//! Minimal binary tensor container.
//!
//! Single tensor (`.ocet`):
//!
//! ```text
//! "OCET" | version: u8 = 1 | dtype: u8 | ndim: u8 | dims: ndim x u32 LE | payload (row-major, LE)
//! ```
//!
//! dtype: 0 = float32, 1 = int32, 2 = uint8.
//!
//! Named archive (`.ocea`, used for checkpoints):
//!
//! ```text
//! "OCEA" | version: u8 = 1 | count: u32 LE | count x (name_len: u32 LE | name UTF-8 | tensor record)
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::LabelMask;
use crate::tensor::Tensor;

pub const TENSOR_MAGIC: [u8; 4] = *b"OCET";
pub const ARCHIVE_MAGIC: [u8; 4] = *b"OCEA";
pub const FORMAT_VERSION: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    I32(Vec<i32>),
    U8(Vec<u8>),
}

impl ArrayData {
    fn dtype(&self) -> u8 {
        match self {
            ArrayData::F32(_) => 0,
            ArrayData::I32(_) => 1,
            ArrayData::U8(_) => 2,
        }
    }

    fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::I32(v) => v.len(),
            ArrayData::U8(v) => v.len(),
        }
    }
}

fn element_size(dtype: u8) -> Result<usize> {
    match dtype {
        0 | 1 => Ok(4),
        2 => Ok(1),
        other => Err(Error::Dtype(other)),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorFile {
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(Error::Truncated {
                expected: self.pos.saturating_add(n),
                found: self.bytes.len(),
            }),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let b = self.take(4)?;
        let found = [b[0], b[1], b[2], b[3]];
        if found != expected {
            return Err(Error::BadMagic { expected, found });
        }
        Ok(())
    }

    fn version(&mut self) -> Result<()> {
        let found = self.u8()?;
        if found != FORMAT_VERSION {
            return Err(Error::Version {
                expected: FORMAT_VERSION,
                found,
            });
        }
        Ok(())
    }
}

impl TensorFile {
    pub fn new(shape: Vec<usize>, data: ArrayData) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape("TensorFile", format!("{numel} elements"), format!("{}", data.len())));
        }
        if shape.len() > u8::MAX as usize || shape.iter().any(|&d| d > u32::MAX as usize) {
            return Err(Error::Malformed(format!("shape {shape:?} not representable")));
        }
        Ok(Self { shape, data })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode_into(&mut out);
        out
    }

    fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&TENSOR_MAGIC);
        out.push(FORMAT_VERSION);
        out.push(self.data.dtype());
        out.push(self.shape.len() as u8);
        for &d in &self.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match &self.data {
            ArrayData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::U8(v) => out.extend_from_slice(v),
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let t = Self::decode_from(&mut r)?;
        if r.pos != bytes.len() {
            return Err(Error::Malformed(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(t)
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self> {
        r.magic(TENSOR_MAGIC)?;
        r.version()?;
        let dtype = r.u8()?;
        let esize = element_size(dtype)?;
        let ndim = r.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let available = r.bytes.len() - r.pos;
        let payload = shape
            .iter()
            .try_fold(esize, |acc, &d| acc.checked_mul(d))
            .ok_or(Error::Truncated {
                expected: usize::MAX,
                found: available,
            })?;
        if payload > available {
            return Err(Error::Truncated {
                expected: payload,
                found: available,
            });
        }
        let raw = r.take(payload)?;
        let data = match dtype {
            0 => ArrayData::F32(raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()),
            1 => ArrayData::I32(raw.chunks_exact(4).map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()),
            _ => ArrayData::U8(raw.to_vec()),
        };
        Ok(Self { shape, data })
    }

    pub fn from_tensor(t: &Tensor<f32>) -> Self {
        Self {
            shape: t.shape().to_vec(),
            data: ArrayData::F32(t.data().to_vec()),
        }
    }

    pub fn from_labels(m: &LabelMask) -> Self {
        Self {
            shape: vec![m.height(), m.width()],
            data: ArrayData::I32(m.data().iter().map(|&v| v as i32).collect()),
        }
    }

    pub fn into_tensor(self) -> Result<Tensor<f32>> {
        match self.data {
            ArrayData::F32(v) => Tensor::new(self.shape, v),
            ArrayData::U8(v) => Tensor::new(self.shape, v.into_iter().map(f32::from).collect()),
            ArrayData::I32(_) => Err(Error::Malformed("expected a float32 or uint8 tensor, found int32".into())),
        }
    }

    /// Accepts `[H, W]` or `[1, H, W]` integer tensors with non-negative ids.
    pub fn into_labels(self) -> Result<LabelMask> {
        let (h, w) = match self.shape[..] {
            [h, w] | [1, h, w] => (h, w),
            ref s => return Err(Error::Malformed(format!("label tensor must be 2D, got shape {s:?}"))),
        };
        let data: Vec<u32> = match self.data {
            ArrayData::I32(v) => v
                .into_iter()
                .map(|x| u32::try_from(x).map_err(|_| Error::Malformed(format!("negative label {x}"))))
                .collect::<Result<_>>()?,
            ArrayData::U8(v) => v.into_iter().map(u32::from).collect(),
            ArrayData::F32(_) => return Err(Error::Malformed("expected an integer label tensor, found float32".into())),
        };
        LabelMask::new(h, w, data)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
        Self::decode(&bytes)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|e| Error::file(path, e))
    }
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    TensorFile::read(path)?.into_tensor()
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor<f32>) -> Result<()> {
    TensorFile::from_tensor(t).write(path)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelMask> {
    TensorFile::read(path)?.into_labels()
}

pub fn write_labels(path: impl AsRef<Path>, m: &LabelMask) -> Result<()> {
    TensorFile::from_labels(m).write(path)
}

pub fn encode_archive(entries: &[(String, TensorFile)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&ARCHIVE_MAGIC);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        t.encode_into(&mut out);
    }
    out
}

pub fn decode_archive(bytes: &[u8]) -> Result<Vec<(String, TensorFile)>> {
    let mut r = Reader { bytes, pos: 0 };
    r.magic(ARCHIVE_MAGIC)?;
    r.version()?;
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Malformed("archive entry name is not UTF-8".into()))?
            .to_string();
        entries.push((name, TensorFile::decode_from(&mut r)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Malformed(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(entries)
}

pub fn read_archive(path: impl AsRef<Path>) -> Result<Vec<(String, TensorFile)>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    decode_archive(&bytes)
}

pub fn write_archive(path: impl AsRef<Path>, entries: &[(String, TensorFile)]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_archive(entries)).map_err(|e| Error::file(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn float_tensor_round_trip() {
        let t = Tensor::from_fn(&[2, 7, 5], |i| (i as f32 * 0.731).sin() * 1e3);
        let back = TensorFile::decode(&TensorFile::from_tensor(&t).encode()).unwrap().into_tensor().unwrap();
        assert_eq!(t.shape(), back.shape());
        for (a, b) in t.data().iter().zip(back.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn header_layout_is_fixed() {
        let t = TensorFile::new(vec![2, 1], ArrayData::U8(vec![9, 8])).unwrap();
        assert_eq!(t.encode(), vec![b'O', b'C', b'E', b'T', 1, 2, 2, 2, 0, 0, 0, 1, 0, 0, 0, 9, 8]);
    }

    #[test]
    fn bad_magic_is_reported() {
        let mut bytes = TensorFile::new(vec![1], ArrayData::U8(vec![0])).unwrap().encode();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(TensorFile::decode(&bytes), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn version_and_dtype_errors_are_distinct() {
        let good = TensorFile::new(vec![1], ArrayData::F32(vec![1.0])).unwrap().encode();
        let mut v = good.clone();
        v[4] = 7;
        match TensorFile::decode(&v) {
            Err(Error::Version { expected: 1, found: 7 }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let mut d = good;
        d[5] = 9;
        assert!(matches!(TensorFile::decode(&d), Err(Error::Dtype(9))));
    }

    #[test]
    fn oversized_dims_are_truncation() {
        let mut bytes = TensorFile::new(vec![2, 2], ArrayData::F32(vec![0.0; 4])).unwrap().encode();
        bytes[7..11].copy_from_slice(&u32::MAX.to_le_bytes());
        bytes[11..15].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(TensorFile::decode(&bytes), Err(Error::Truncated { .. })));
        let short = TensorFile::new(vec![3], ArrayData::I32(vec![1, 2, 3])).unwrap().encode();
        assert!(matches!(TensorFile::decode(&short[..short.len() - 1]), Err(Error::Truncated { .. })));
    }

    #[test]
    fn labels_round_trip_as_int32() {
        let m = LabelMask::new(2, 3, vec![0, 1, 2, 2, 0, 70000]).unwrap();
        let f = TensorFile::from_labels(&m);
        assert!(matches!(f.data, ArrayData::I32(_)));
        assert_eq!(TensorFile::decode(&f.encode()).unwrap().into_labels().unwrap(), m);
    }

    #[test]
    fn archive_round_trip_and_errors() {
        let entries = vec![
            ("a".to_string(), TensorFile::new(vec![2], ArrayData::F32(vec![1.5, -2.0])).unwrap()),
            ("step".to_string(), TensorFile::new(vec![1], ArrayData::I32(vec![42])).unwrap()),
        ];
        let bytes = encode_archive(&entries);
        assert_eq!(decode_archive(&bytes).unwrap(), entries);
        assert!(matches!(decode_archive(&bytes[..bytes.len() - 2]), Err(Error::Truncated { .. })));
        let mut v = bytes.clone();
        v[4] = 2;
        assert!(matches!(decode_archive(&v), Err(Error::Version { expected: 1, found: 2 })));
    }

    proptest! {
        #[test]
        fn any_float_payload_round_trips(dims in proptest::collection::vec(1usize..5, 1..4), seed in any::<u32>()) {
            let n: usize = dims.iter().product();
            let vals: Vec<f32> = (0..n).map(|i| f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add(i as u32 * 97))).collect();
            let t = TensorFile::new(dims, ArrayData::F32(vals)).unwrap();
            let back = TensorFile::decode(&t.encode()).unwrap();
            prop_assert_eq!(back.encode(), t.encode());
        }
    }
}
