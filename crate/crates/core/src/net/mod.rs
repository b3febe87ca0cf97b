//! The mini U-Net: one downsampling level, blocks of `[3x3, 1x1, 1x1, 3x3]`
//! valid convolutions with ReLU, nearest-neighbour upsampling and a
//! crop-and-concat skip, followed by a linear 1x1 head to two channels.
//!
//! Every output pixel sees a 16-pixel context (8 per side) of the input.

mod adam;
mod checkpoint;
mod train;

pub use adam::{AdamConfig, AdamState, LrSchedule};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use train::{crop_positions, train, EpochStats, TrainConfig, Trainer};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tape, Tensor, Var};

/// Kernel sizes of the convolutions inside every U-Net block.
pub const BLOCK_KERNELS: [usize; 4] = [3, 1, 1, 3];

/// Input pixels lost by the valid-convolution chain (8 per side).
pub const CONTEXT: usize = 16;

/// Side length of the training crops and of inference tiles.
pub const TILE: usize = 252;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub base_fmaps: usize,
    pub fmap_factor: usize,
    pub depth: usize,
    pub out_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            base_fmaps: 64,
            fmap_factor: 3,
            depth: 1,
            out_channels: 2,
        }
    }
}

/// One convolution of the network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.in_channels) {
            return Err(Error::Config(format!("in_channels must be 1 or 2, got {}", self.in_channels)));
        }
        if self.depth != 1 {
            return Err(Error::Config(format!("only depth 1 is supported, got {}", self.depth)));
        }
        if self.out_channels != 2 {
            return Err(Error::Config(format!("out_channels must be 2, got {}", self.out_channels)));
        }
        if self.base_fmaps == 0 || self.fmap_factor == 0 {
            return Err(Error::Config("feature map counts must be positive".into()));
        }
        Ok(())
    }

    pub fn layers(&self) -> Vec<LayerSpec> {
        let base = self.base_fmaps;
        let wide = base * self.fmap_factor;
        let mut layers = Vec::new();
        let mut block = |prefix: &str, cin: usize, cout: usize| {
            let mut c = cin;
            for (i, &k) in BLOCK_KERNELS.iter().enumerate() {
                layers.push(LayerSpec {
                    name: format!("{prefix}.{i}"),
                    in_channels: c,
                    out_channels: cout,
                    kernel: k,
                });
                c = cout;
            }
        };
        block("enc", self.in_channels, base);
        block("mid", base, wide);
        block("dec", base + wide, base);
        layers.push(LayerSpec {
            name: "head".into(),
            in_channels: base,
            out_channels: self.out_channels,
            kernel: 1,
        });
        layers
    }

    pub fn param_count(&self) -> usize {
        self.layers()
            .iter()
            .map(|l| l.in_channels * l.out_channels * l.kernel * l.kernel + l.out_channels)
            .sum()
    }

    /// Output side length for an input side length, if the chain fits.
    pub fn output_size(&self, input: usize) -> Option<usize> {
        let enc = input.checked_sub(4)?;
        if enc == 0 || enc % 2 != 0 {
            return None;
        }
        let mid = (enc / 2).checked_sub(4).filter(|&m| m > 0)?;
        (2 * mid).checked_sub(4).filter(|&d| d > 0)
    }
}

/// Weights and biases in layer order: `[w0, b0, w1, b1, ...]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    tensors: Vec<Tensor<f32>>,
}

impl ModelParams {
    /// He-normal weights (`std = sqrt(2 / fan_in)`), zero biases.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = Vec::new();
        for layer in config.layers() {
            let fan_in = layer.in_channels * layer.kernel * layer.kernel;
            let normal = Normal::new(0.0f64, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            let shape = [layer.out_channels, layer.in_channels, layer.kernel, layer.kernel];
            tensors.push(Tensor::from_fn(&shape, |_| normal.sample(&mut rng) as f32));
            tensors.push(Tensor::zeros(&[layer.out_channels]));
        }
        Ok(Self {
            config: config.clone(),
            tensors,
        })
    }

    pub fn from_tensors(config: ModelConfig, tensors: Vec<Tensor<f32>>) -> Result<Self> {
        config.validate()?;
        let layers = config.layers();
        if tensors.len() != 2 * layers.len() {
            return Err(Error::shape("ModelParams", format!("{} tensors", 2 * layers.len()), format!("{}", tensors.len())));
        }
        for (i, layer) in layers.iter().enumerate() {
            let w = [layer.out_channels, layer.in_channels, layer.kernel, layer.kernel];
            if tensors[2 * i].shape() != w || tensors[2 * i + 1].shape() != [layer.out_channels] {
                return Err(Error::shape(
                    "ModelParams",
                    format!("{} weights {w:?}", layer.name),
                    format!("{:?}", tensors[2 * i].shape()),
                ));
            }
        }
        Ok(Self { config, tensors })
    }

    /// Parameter names matching [`ModelParams::tensors`].
    pub fn names(&self) -> Vec<String> {
        self.config
            .layers()
            .iter()
            .flat_map(|l| [format!("{}.weight", l.name), format!("{}.bias", l.name)])
            .collect()
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[Tensor<f32>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<f32>] {
        &mut self.tensors
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Records every parameter as a trainable leaf.
    pub fn attach<T: Element>(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| tape.leaf(t.cast::<T>(), trainable))
            .collect()
    }

    /// Dense offset field `[2, H - 16, W - 16]` for an image `[C, H, W]`.
    pub fn forward(&self, image: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut tape = Tape::<f32>::new();
        let vars = self.attach(&mut tape, false);
        let x = tape.constant(image.clone());
        let out = forward_on_tape(&self.config, &mut tape, &vars, x)?;
        Ok(tape.take_value(out))
    }
}

/// Records the network on `tape` given parameter leaves from [`ModelParams::attach`].
pub fn forward_on_tape<T: Element>(config: &ModelConfig, tape: &mut Tape<T>, params: &[Var], image: Var) -> Result<Var> {
    const OP: &str = "forward";
    let (c, h, w) = tape.value(image).dims3(OP)?;
    if c != config.in_channels {
        return Err(Error::shape(OP, format!("{} input channels", config.in_channels), format!("{c}")));
    }
    if config.output_size(h).is_none() || config.output_size(w).is_none() {
        let small = h < 20 || w < 20;
        let msg = if small {
            format!("input {h}x{w} too small for the valid-convolution chain")
        } else {
            format!("input {h}x{w} gives odd or empty intermediate feature maps")
        };
        return Err(Error::precondition(OP, msg));
    }
    let mut layer = 0;
    let mut block = |tape: &mut Tape<T>, mut x: Var| -> Result<Var> {
        for _ in BLOCK_KERNELS {
            let conv = tape.conv2d_valid(x, params[2 * layer], params[2 * layer + 1])?;
            x = tape.relu(conv);
            layer += 1;
        }
        Ok(x)
    };
    let enc = block(tape, image)?;
    let pooled = tape.maxpool2(enc)?;
    let mid = block(tape, pooled)?;
    let up = tape.upsample_nearest2(mid)?;
    let merged = tape.crop_concat(enc, up)?;
    let dec = block(tape, merged)?;
    let head = params.len() - 2;
    tape.conv2d_valid(dec, params[head], params[head + 1])
}
