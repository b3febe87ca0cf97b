use crate::error::{Error, Result};
use crate::io::LabelMask;
use crate::tensor::Tensor;

pub const PERCENTILE_LOW: f64 = 1.0;
pub const PERCENTILE_HIGH: f64 = 99.8;

/// Linearly interpolated percentile (`q` in `[0, 100]`) of sorted data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty data");
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Per channel, maps the 1st percentile to 0 and the 99.8th to 1. No clipping.
pub fn normalize_percentile(image: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (c, h, w) = image.dims3("normalize_percentile")?;
    let plane = h * w;
    let mut out = image.clone();
    for ch in 0..c {
        let values = &image.data()[ch * plane..(ch + 1) * plane];
        let mut sorted: Vec<f64> = values.iter().map(|&v| v as f64).collect();
        sorted.sort_by(f64::total_cmp);
        let lo = percentile(&sorted, PERCENTILE_LOW);
        let hi = percentile(&sorted, PERCENTILE_HIGH);
        if !(hi > lo) {
            return Err(Error::Degenerate(format!(
                "channel {ch} has no intensity spread between its percentiles ({lo} .. {hi})"
            )));
        }
        let scale = 1.0 / (hi - lo);
        for (o, &v) in out.data_mut()[ch * plane..(ch + 1) * plane].iter_mut().zip(values) {
            *o = ((v as f64 - lo) * scale) as f32;
        }
    }
    Ok(out)
}

fn scaled_size(n: usize, factor: f64) -> Result<usize> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(Error::precondition("rescale", format!("factor must be positive, got {factor}")));
    }
    let size = (n as f64 * factor).round();
    if size < 1.0 {
        return Err(Error::precondition("rescale", format!("{n} x {factor} leaves no pixels")));
    }
    Ok(size as usize)
}

/// Bilinear resampling with pixel-center alignment and edge clamping.
pub fn rescale_image(image: &Tensor<f32>, factor: f64) -> Result<Tensor<f32>> {
    let (c, h, w) = image.dims3("rescale_image")?;
    let (oh, ow) = (scaled_size(h, factor)?, scaled_size(w, factor)?);
    if (oh, ow) == (h, w) {
        return Ok(image.clone());
    }
    let (sy, sx) = (h as f64 / oh as f64, w as f64 / ow as f64);
    let coord = |dst: usize, scale: f64, n: usize| {
        let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, src - i0 as f64)
    };
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for y in 0..oh {
            let (y0, y1, fy) = coord(y, sy, h);
            for x in 0..ow {
                let (x0, x1, fx) = coord(x, sx, w);
                let p = |yy: usize, xx: usize| image.at3(ch, yy, xx) as f64;
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                out.push((top * (1.0 - fy) + bottom * fy) as f32);
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

/// Nearest-neighbour resampling of an instance map to an exact size.
pub fn resize_labels(labels: &LabelMask, height: usize, width: usize) -> Result<LabelMask> {
    if height == 0 || width == 0 {
        return Err(Error::precondition("resize_labels", "target has no pixels"));
    }
    let (h, w) = labels.shape();
    let pick = |dst: usize, n_out: usize, n_in: usize| (((dst as f64 + 0.5) * n_in as f64 / n_out as f64).floor() as usize).min(n_in - 1);
    let mut data = Vec::with_capacity(height * width);
    for y in 0..height {
        let sy = pick(y, height, h);
        for x in 0..width {
            data.push(labels.get(sy, pick(x, width, w)));
        }
    }
    LabelMask::new(height, width, data)
}

pub fn rescale_labels(labels: &LabelMask, factor: f64) -> Result<LabelMask> {
    let (h, w) = labels.shape();
    resize_labels(labels, scaled_size(h, factor)?, scaled_size(w, factor)?)
}
