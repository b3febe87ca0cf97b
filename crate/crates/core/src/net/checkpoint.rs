//! Checkpoints as named-tensor archives.
//!
//! Entries: `model.config` (int32 `[5]`), `param.<layer>.<weight|bias>`,
//! `adam.m.<i>`, `adam.v.<i>` (float32, parameter-shaped), `adam.step`
//! (uint8 `[8]`, u64 LE) and `adam.hyper` (uint8 `[32]`: lr, beta1, beta2,
//! eps as f64 LE).

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{decode_archive, encode_archive, read_archive, write_archive, ArrayData, TensorFile};
use crate::net::{AdamConfig, AdamState, ModelConfig, ModelParams};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub adam: AdamState,
}

fn f32_entry(shape: &[usize], data: &[f32]) -> TensorFile {
    TensorFile::new(shape.to_vec(), ArrayData::F32(data.to_vec())).expect("shape matches data")
}

fn bytes_entry(bytes: Vec<u8>) -> TensorFile {
    TensorFile::new(vec![bytes.len()], ArrayData::U8(bytes)).expect("1-D")
}

impl Checkpoint {
    pub fn to_entries(&self) -> Vec<(String, TensorFile)> {
        let c = self.params.config();
        let config = [c.in_channels, c.base_fmaps, c.fmap_factor, c.depth, c.out_channels];
        let mut out = vec![(
            "model.config".to_owned(),
            TensorFile::new(vec![5], ArrayData::I32(config.iter().map(|&v| v as i32).collect())).expect("5 values"),
        )];
        for (name, t) in self.params.names().into_iter().zip(self.params.tensors()) {
            out.push((format!("param.{name}"), f32_entry(t.shape(), t.data())));
        }
        for (i, t) in self.params.tensors().iter().enumerate() {
            out.push((format!("adam.m.{i}"), f32_entry(t.shape(), &self.adam.m[i])));
            out.push((format!("adam.v.{i}"), f32_entry(t.shape(), &self.adam.v[i])));
        }
        out.push(("adam.step".to_owned(), bytes_entry(self.adam.step.to_le_bytes().to_vec())));
        let a = &self.adam;
        let hyper = [a.lr, a.config.beta1, a.config.beta2, a.config.eps];
        out.push(("adam.hyper".to_owned(), bytes_entry(hyper.iter().flat_map(|v| v.to_le_bytes()).collect())));
        out
    }

    pub fn from_entries(entries: Vec<(String, TensorFile)>) -> Result<Self> {
        let mut map: HashMap<String, TensorFile> = entries.into_iter().collect();
        let mut take = |name: &str| map.remove(name).ok_or_else(|| Error::Malformed(format!("checkpoint lacks {name}")));
        let config = match take("model.config")?.data {
            ArrayData::I32(v) if v.len() == 5 && v.iter().all(|&x| x >= 0) => ModelConfig {
                in_channels: v[0] as usize,
                base_fmaps: v[1] as usize,
                fmap_factor: v[2] as usize,
                depth: v[3] as usize,
                out_channels: v[4] as usize,
            },
            _ => return Err(Error::Malformed("model.config must be 5 non-negative int32".into())),
        };
        config.validate()?;
        let float = |name: &str, tf: TensorFile, shape: &[usize]| -> Result<Vec<f32>> {
            match tf.data {
                ArrayData::F32(v) if tf.shape == shape => Ok(v),
                _ => Err(Error::shape("checkpoint", format!("{name} float32 {shape:?}"), format!("{:?}", tf.shape))),
            }
        };
        let template = ModelParams::init(&config, 0)?;
        let mut tensors = Vec::new();
        let (mut m, mut v) = (Vec::new(), Vec::new());
        for (i, (name, t)) in template.names().iter().zip(template.tensors()).enumerate() {
            let key = format!("param.{name}");
            let data = float(&key, take(&key)?, t.shape())?;
            tensors.push(Tensor::new(t.shape().to_vec(), data)?);
            for (prefix, dst) in [("adam.m", &mut m), ("adam.v", &mut v)] {
                let key = format!("{prefix}.{i}");
                dst.push(float(&key, take(&key)?, t.shape())?);
            }
        }
        let bytes = |tf: TensorFile, n: usize, name: &str| match tf.data {
            ArrayData::U8(b) if b.len() == n => Ok(b),
            _ => Err(Error::Malformed(format!("{name} must be {n} bytes"))),
        };
        let step = bytes(take("adam.step")?, 8, "adam.step")?;
        let hyper = bytes(take("adam.hyper")?, 32, "adam.hyper")?;
        let f = |k: usize| f64::from_le_bytes(hyper[8 * k..8 * k + 8].try_into().expect("8 bytes"));
        if let Some(extra) = map.keys().next() {
            return Err(Error::Malformed(format!("unexpected checkpoint entry {extra}")));
        }
        Ok(Self {
            params: ModelParams::from_tensors(config, tensors)?,
            adam: AdamState {
                config: AdamConfig {
                    beta1: f(1),
                    beta2: f(2),
                    eps: f(3),
                },
                lr: f(0),
                step: u64::from_le_bytes(step.try_into().expect("8 bytes")),
                m,
                v,
            },
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        encode_archive(&self.to_entries())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        Self::from_entries(decode_archive(bytes)?)
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &ModelParams, adam: &AdamState) -> Result<()> {
    let ckpt = Checkpoint {
        params: params.clone(),
        adam: adam.clone(),
    };
    write_archive(path, &ckpt.to_entries())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_entries(read_archive(path)?)
}
