//! Binary PGM (P5) images, 8- or 16-bit.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::LabelMask;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    /// Raw sample values, row-major.
    pub data: Vec<u16>,
}

fn header_tokens(bytes: &[u8]) -> Result<(Vec<String>, usize)> {
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < 4 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() && bytes[i] != b'#' {
            i += 1;
        }
        if start == i {
            return Err(Error::Malformed("PGM header ended early".into()));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
        if tokens.len() == 1 && tokens[0] != "P5" {
            return Err(Error::UnsupportedFormat(format!("{} (only binary P5 PGM is supported)", tokens[0])));
        }
    }
    // Exactly one whitespace byte separates the header from the raster.
    if i >= bytes.len() || !bytes[i].is_ascii_whitespace() {
        return Err(Error::Malformed("missing whitespace after PGM maxval".into()));
    }
    Ok((tokens, i + 1))
}

impl Pgm {
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let (tokens, offset) = header_tokens(bytes)?;
        let num = |s: &str, what: &str| -> Result<usize> {
            s.parse::<usize>().map_err(|_| Error::Malformed(format!("bad PGM {what}: {s:?}")))
        };
        let width = num(&tokens[1], "width")?;
        let height = num(&tokens[2], "height")?;
        let maxval = num(&tokens[3], "maxval")?;
        if maxval == 0 || maxval > 65535 {
            return Err(Error::Malformed(format!("PGM maxval {maxval} out of range")));
        }
        let bps = if maxval < 256 { 1 } else { 2 };
        let need = width * height * bps;
        let raster = &bytes[offset..];
        if raster.len() < need {
            return Err(Error::Truncated {
                expected: need,
                found: raster.len(),
            });
        }
        let data = if bps == 1 {
            raster[..need].iter().map(|&b| u16::from(b)).collect()
        } else {
            raster[..need].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
        };
        Ok(Self {
            width,
            height,
            maxval: maxval as u16,
            data,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n{}\n", self.width, self.height, self.maxval).into_bytes();
        if self.maxval < 256 {
            out.extend(self.data.iter().map(|&v| v as u8));
        } else {
            self.data.iter().for_each(|v| out.extend_from_slice(&v.to_be_bytes()));
        }
        out
    }
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Pgm> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    Pgm::decode(&bytes)
}

pub fn write_pgm(path: impl AsRef<Path>, pgm: &Pgm) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, pgm.encode()).map_err(|e| Error::file(path, e))
}

/// Single-channel image `[1, H, W]` scaled to `[0, 1]`.
pub fn pgm_to_image(pgm: &Pgm) -> Tensor<f32> {
    let scale = pgm.maxval as f32;
    Tensor::new(
        vec![1, pgm.height, pgm.width],
        pgm.data.iter().map(|&v| v as f32 / scale).collect(),
    )
    .expect("raster matches header")
}

/// 8-bit rendering of one channel, clamped to `[0, 1]`.
pub fn image_to_pgm(image: &Tensor<f32>, channel: usize) -> Result<Pgm> {
    let (c, h, w) = image.dims3("image_to_pgm")?;
    if channel >= c {
        return Err(Error::precondition("image_to_pgm", format!("channel {channel} of {c}")));
    }
    let plane = &image.data()[channel * h * w..(channel + 1) * h * w];
    Ok(Pgm {
        width: w,
        height: h,
        maxval: 255,
        data: plane.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u16).collect(),
    })
}

/// Gray-level rendering of instance ids: background stays black and distinct
/// ids get distinct levels, spread across the range by an odd multiplier.
pub fn labels_to_pgm(labels: &LabelMask) -> Result<Pgm> {
    let max = labels.data().iter().copied().max().unwrap_or(0);
    let (maxval, modulus, mult) = if max < 256 {
        (255u16, 256u32, 167u32)
    } else if max < 65536 {
        (65535, 65536, 40503)
    } else {
        return Err(Error::precondition("labels_to_pgm", format!("id {max} exceeds 16-bit range")));
    };
    // Odd multipliers permute Z/2^k, so distinct ids stay distinct; 0 maps to 0.
    let data = labels.data().iter().map(|&v| ((v * mult) % modulus) as u16).collect();
    Ok(Pgm {
        width: labels.width(),
        height: labels.height(),
        maxval,
        data,
    })
}
