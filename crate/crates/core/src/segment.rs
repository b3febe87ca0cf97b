//! From offset fields to instances.
//!
//! Foreground is where predictions stay stable under salt-and-pepper noise
//! (low variance, split by Otsu). Each foreground pixel `i` votes for the
//! center `i - r_i` of its object; flat-kernel mean-shift groups the votes.

use std::collections::{BTreeSet, HashMap};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::LabelMask;
use crate::metrics::{iou_matrix, match_from_matrix, seg_parts, Counts};
use crate::morph::squared_edt;
use crate::net::{ModelParams, CONTEXT, TILE};
use crate::tensor::Tensor;

pub const MAX_SHRINK: usize = 6;
const MEAN_SHIFT_MAX_ITER: usize = 300;
const OTSU_BINS: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmenterConfig {
    pub noise_rounds: usize,
    /// Fraction of pixels corrupted per round, half to 0 and half to 1.
    pub noise_fraction: f64,
    pub bandwidth: f64,
    pub shrink: f64,
    pub min_instance_size: usize,
    /// Split every cluster into its 4-connected components.
    pub connectivity_relabel: bool,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            noise_rounds: 5,
            noise_fraction: 0.01,
            bandwidth: 8.0,
            shrink: 0.0,
            min_instance_size: 10,
            connectivity_relabel: false,
        }
    }
}

impl SegmenterConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("segment: {m}")));
        if self.noise_rounds < 2 {
            return bad(format!("noise_rounds must be at least 2, got {}", self.noise_rounds));
        }
        if !(self.noise_fraction > 0.0 && self.noise_fraction < 0.5) {
            return bad(format!("noise_fraction must be in (0, 0.5), got {}", self.noise_fraction));
        }
        if !(self.bandwidth > 0.0) || !self.bandwidth.is_finite() {
            return bad(format!("bandwidth must be positive, got {}", self.bandwidth));
        }
        if !(0.0..=MAX_SHRINK as f64).contains(&self.shrink) {
            return bad(format!("shrink must be in [0, {MAX_SHRINK}], got {}", self.shrink));
        }
        Ok(())
    }
}

/// Mirror padding without repeating the edge pixel.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as usize
}

fn tile_starts(extent: usize, tile: usize, step: usize) -> Vec<usize> {
    if extent <= tile {
        return vec![0];
    }
    let mut starts: Vec<usize> = (0..).map(|k| k * step).take_while(|&s| s + tile < extent).collect();
    starts.push(extent - tile);
    starts
}

/// Offset field `[2, H, W]` aligned with the input grid.
pub fn predict_full(params: &ModelParams, image: &Tensor<f32>) -> Result<Tensor<f32>> {
    predict_tiled(params, image, TILE)
}

/// As [`predict_full`] with square tiles of side `tile` (even, and valid for
/// the network). Odd sides get one extra reflected row or column so every tile
/// starts at an even offset, which keeps tiled output identical to a single
/// pass over the whole padded image.
pub fn predict_tiled(params: &ModelParams, image: &Tensor<f32>, tile: usize) -> Result<Tensor<f32>> {
    const OP: &str = "predict_full";
    let (c, h, w) = image.dims3(OP)?;
    if h < 20 || w < 20 {
        return Err(Error::precondition(OP, format!("image {h}x{w} is smaller than 20x20")));
    }
    if tile % 2 != 0 || params.config().output_size(tile).is_none() {
        return Err(Error::precondition(OP, format!("tile {tile} does not fit the network")));
    }
    let half = CONTEXT / 2;
    let (ph, pw) = (h + CONTEXT + h % 2, w + CONTEXT + w % 2);
    let mut padded = Vec::with_capacity(c * ph * pw);
    for ch in 0..c {
        for y in 0..ph {
            let sy = reflect(y as isize - half as isize, h);
            for x in 0..pw {
                padded.push(image.at3(ch, sy, reflect(x as isize - half as isize, w)));
            }
        }
    }
    let padded = Tensor::new(vec![c, ph, pw], padded)?;
    let (oh, ow) = (ph - CONTEXT, pw - CONTEXT);
    let step = tile - CONTEXT;
    let mut out = vec![0.0f32; 2 * oh * ow];
    for &ty in &tile_starts(ph, tile, step) {
        for &tx in &tile_starts(pw, tile, step) {
            let (th, tw) = (tile.min(ph), tile.min(pw));
            let field = params.forward(&padded.crop3(ty, tx, th, tw)?)?;
            let (fh, fw) = (th - CONTEXT, tw - CONTEXT);
            for ch in 0..2 {
                for y in 0..fh {
                    let src = &field.data()[(ch * fh + y) * fw..][..fw];
                    out[(ch * oh + ty + y) * ow + tx..][..fw].copy_from_slice(src);
                }
            }
        }
    }
    let full = Tensor::new(vec![2, oh, ow], out)?;
    if (oh, ow) == (h, w) {
        Ok(full)
    } else {
        full.crop3(0, 0, h, w)
    }
}

/// Sets `floor(p * H * W / 2)` random pixels to 0 and as many others to 1,
/// across all channels.
pub fn salt_pepper(image: &Tensor<f32>, p: f64, rng: &mut impl Rng) -> Result<Tensor<f32>> {
    let (c, h, w) = image.dims3("salt_pepper")?;
    let plane = h * w;
    let n = (p * plane as f64 / 2.0).floor() as usize;
    let mut out = image.clone();
    if n == 0 {
        return Ok(out);
    }
    let picked = sample(rng, plane, 2 * n);
    for (k, px) in picked.into_iter().enumerate() {
        let value = if k < n { 0.0 } else { 1.0 };
        for ch in 0..c {
            out.data_mut()[ch * plane + px] = value;
        }
    }
    Ok(out)
}

/// Per pixel, the unbiased variance over `rounds` noisy predictions, summed
/// over the two field channels. Row-major `H * W`.
pub fn embedding_variance(params: &ModelParams, image: &Tensor<f32>, rounds: usize, p: f64, seed: u64) -> Result<Vec<f64>> {
    if rounds < 2 {
        return Err(Error::precondition("embedding_variance", "at least two noise rounds are needed"));
    }
    let (_, h, w) = image.dims3("embedding_variance")?;
    let plane = h * w;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mean = vec![0.0f64; 2 * plane];
    let mut m2 = vec![0.0f64; 2 * plane];
    for k in 0..rounds {
        let field = predict_full(params, &salt_pepper(image, p, &mut rng)?)?;
        let n = (k + 1) as f64;
        for ((&v, mu), s) in field.data().iter().zip(mean.iter_mut()).zip(m2.iter_mut()) {
            let v = v as f64;
            let delta = v - *mu;
            *mu += delta / n;
            *s += delta * (v - *mu);
        }
    }
    let denom = (rounds - 1) as f64;
    Ok((0..plane).map(|i| (m2[i] + m2[plane + i]) / denom).collect())
}

/// Otsu's threshold over a 256-bin histogram spanning `[min, max]`. Values
/// `<= threshold` form the lower class; ties go to the lowest threshold.
pub fn otsu_threshold(values: &[f64]) -> Result<f64> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Degenerate(format!("Otsu needs at least two distinct finite values, got range {lo}..{hi}")));
    }
    let width = (hi - lo) / OTSU_BINS as f64;
    let bounds: Vec<f64> = (1..OTSU_BINS).map(|k| lo + k as f64 * width).collect();
    // Bin of v = number of boundaries strictly below v, so `v <= bounds[k-1]` iff bin < k.
    let mut count = [0usize; OTSU_BINS];
    let mut sum = [0.0f64; OTSU_BINS];
    for &v in values {
        let b = bounds.partition_point(|&t| t < v);
        count[b] += 1;
        sum[b] += v;
    }
    let n = values.len() as f64;
    let total: f64 = sum.iter().sum();
    let (mut c0, mut s0) = (0usize, 0.0f64);
    let (mut best, mut best_k) = (f64::NEG_INFINITY, 1);
    for k in 1..OTSU_BINS {
        c0 += count[k - 1];
        s0 += sum[k - 1];
        let c1 = values.len() - c0;
        if c0 == 0 || c1 == 0 {
            continue;
        }
        let (w0, w1) = (c0 as f64 / n, c1 as f64 / n);
        let d = s0 / c0 as f64 - (total - s0) / c1 as f64;
        let between = w0 * w1 * d * d;
        if between > best {
            best = between;
            best_k = k;
        }
    }
    Ok(bounds[best_k - 1])
}

/// Low-variance pixels are foreground.
pub fn detect_foreground(variance: &[f64]) -> Result<Vec<bool>> {
    let t = otsu_threshold(variance)?;
    Ok(variance.iter().map(|&v| v <= t).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeanShift {
    pub modes: Vec<[f64; 2]>,
    /// Points within one bandwidth of each mode at convergence.
    pub support: Vec<usize>,
    /// Index into `modes` for every input point.
    pub assignment: Vec<usize>,
}

struct Grid {
    cell: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
}

impl Grid {
    fn new(points: &[[f64; 2]], cell: f64) -> Self {
        let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(i);
        }
        Self { cell, cells }
    }

    fn key(p: &[f64; 2], cell: f64) -> (i64, i64) {
        ((p[0] / cell).floor() as i64, (p[1] / cell).floor() as i64)
    }

    /// Indices within distance `r` (inclusive) of `q`, ascending.
    fn within(&self, points: &[[f64; 2]], q: &[f64; 2], r: f64, out: &mut Vec<usize>) {
        out.clear();
        let (ky, kx) = Self::key(q, self.cell);
        for dy in -1..=1 {
            for dx in -1..=1 {
                if let Some(ids) = self.cells.get(&(ky + dy, kx + dx)) {
                    out.extend(ids.iter().copied().filter(|&i| dist2(&points[i], q) <= r * r));
                }
            }
        }
        out.sort_unstable();
    }
}

fn dist2(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    let (dy, dx) = (a[0] - b[0], a[1] - b[1]);
    dy * dy + dx * dx
}

/// Flat-kernel mean-shift seeded from occupied bandwidth-sized bins.
pub fn mean_shift(points: &[[f64; 2]], bandwidth: f64) -> Result<MeanShift> {
    if points.is_empty() {
        return Err(Error::precondition("mean_shift", "no points"));
    }
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::precondition("mean_shift", format!("bandwidth must be positive, got {bandwidth}")));
    }
    let seeds: BTreeSet<(i64, i64)> = points
        .iter()
        .map(|p| ((p[0] / bandwidth).round() as i64, (p[1] / bandwidth).round() as i64))
        .collect();
    let grid = Grid::new(points, bandwidth);
    let mut near = Vec::new();
    let mut found: Vec<([f64; 2], usize)> = Vec::with_capacity(seeds.len());
    for (sy, sx) in seeds {
        let mut mean = [sy as f64 * bandwidth, sx as f64 * bandwidth];
        let mut support = 0;
        for _ in 0..MEAN_SHIFT_MAX_ITER {
            grid.within(points, &mean, bandwidth, &mut near);
            if near.is_empty() {
                break;
            }
            let (mut y, mut x) = (0.0, 0.0);
            for &i in &near {
                y += points[i][0];
                x += points[i][1];
            }
            let next = [y / near.len() as f64, x / near.len() as f64];
            let shift = dist2(&next, &mean).sqrt();
            mean = next;
            support = near.len();
            if shift < 1e-3 * bandwidth {
                break;
            }
        }
        if support > 0 {
            found.push((mean, support));
        }
    }
    found.sort_by(|a, b| {
        b.1.cmp(&a.1)
            .then(a.0[0].total_cmp(&b.0[0]))
            .then(a.0[1].total_cmp(&b.0[1]))
    });
    let mut modes: Vec<[f64; 2]> = Vec::new();
    let mut support = Vec::new();
    for (m, s) in found {
        if modes.iter().all(|k| dist2(k, &m) >= bandwidth * bandwidth) {
            modes.push(m);
            support.push(s);
        }
    }
    let assignment = points
        .iter()
        .map(|p| {
            let mut best = (f64::INFINITY, 0);
            for (k, m) in modes.iter().enumerate() {
                let d = dist2(p, m);
                if d < best.0 {
                    best = (d, k);
                }
            }
            best.1
        })
        .collect();
    Ok(MeanShift {
        modes,
        support,
        assignment,
    })
}

/// Splits every instance into 4-connected components with fresh ids.
pub fn split_components(labels: &LabelMask) -> LabelMask {
    let (h, w) = labels.shape();
    let mut out = LabelMask::zeros(h, w);
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..h * w {
        let id = labels.data()[start];
        if id == 0 || out.data()[start] != 0 {
            continue;
        }
        next += 1;
        out.data_mut()[start] = next;
        stack.push(start);
        while let Some(p) = stack.pop() {
            let (y, x) = (p / w, p % w);
            let mut visit = |q: usize| {
                if labels.data()[q] == id && out.data()[q] == 0 {
                    out.data_mut()[q] = next;
                    stack.push(q);
                }
            };
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
        }
    }
    out
}

/// Clusters the center votes `i - r_i` of foreground pixels into instances
/// with consecutive ids in order of first appearance.
pub fn segment(field: &Tensor<f32>, foreground: &[bool], config: &SegmenterConfig) -> Result<LabelMask> {
    let (c, h, w) = field.dims3("segment")?;
    if c != 2 || foreground.len() != h * w {
        return Err(Error::shape(
            "segment",
            format!("[2, H, W] field with H*W = {} mask", foreground.len()),
            format!("{:?}", field.shape()),
        ));
    }
    let pixels: Vec<usize> = (0..h * w).filter(|&p| foreground[p]).collect();
    let mut labels = LabelMask::zeros(h, w);
    if pixels.is_empty() {
        return Ok(labels);
    }
    let plane = h * w;
    let votes: Vec<[f64; 2]> = pixels
        .iter()
        .map(|&p| {
            let (y, x) = ((p / w) as f64, (p % w) as f64);
            [y - field.data()[p] as f64, x - field.data()[plane + p] as f64]
        })
        .collect();
    let ms = mean_shift(&votes, config.bandwidth)?;
    for (&p, &k) in pixels.iter().zip(&ms.assignment) {
        labels.data_mut()[p] = k as u32 + 1;
    }
    if config.connectivity_relabel {
        labels = split_components(&labels);
    }
    Ok(remove_small(&labels, config.min_instance_size))
}

/// Drops instances below `min_size` pixels and renumbers the rest.
pub fn remove_small(labels: &LabelMask, min_size: usize) -> LabelMask {
    let sizes = labels.sizes();
    labels
        .map_ids(|id| if sizes[&id] < min_size { 0 } else { id })
        .relabel_sequential()
}

/// Removes, per instance, every pixel within Euclidean distance `s` of a
/// pixel outside it. Emptied instances disappear; ids are renumbered.
pub fn shrink_instances(labels: &LabelMask, s: f64) -> LabelMask {
    if s <= 0.0 {
        return labels.clone();
    }
    let (h, w) = labels.shape();
    let mut boxes: HashMap<u32, [usize; 4]> = HashMap::new();
    for (p, &id) in labels.data().iter().enumerate() {
        if id != 0 {
            let (y, x) = (p / w, p % w);
            let b = boxes.entry(id).or_insert([y, x, y, x]);
            *b = [b[0].min(y), b[1].min(x), b[2].max(y), b[3].max(x)];
        }
    }
    let mut out = labels.clone();
    let limit = s * s;
    for (id, [y0, x0, y1, x1]) in boxes {
        // One ring of margin holds the nearest outside pixel for everything inside the box.
        let (y0, x0) = (y0.saturating_sub(1), x0.saturating_sub(1));
        let (y1, x1) = ((y1 + 1).min(h - 1), (x1 + 1).min(w - 1));
        let (bh, bw) = (y1 - y0 + 1, x1 - x0 + 1);
        let at = |q: usize| (y0 + q / bw) * w + x0 + q % bw;
        let d2 = squared_edt(bh, bw, |q| labels.data()[at(q)] != id);
        for (q, &d) in d2.iter().enumerate() {
            if labels.data()[at(q)] == id && d <= limit {
                out.data_mut()[at(q)] = 0;
            }
        }
    }
    out.relabel_sequential()
}

/// Dense prediction and foreground mask of one image.
#[derive(Clone, Debug)]
pub struct Inference {
    pub field: Tensor<f32>,
    pub variance: Vec<f64>,
    pub foreground: Vec<bool>,
}

pub fn infer(params: &ModelParams, image: &Tensor<f32>, config: &SegmenterConfig, seed: u64) -> Result<Inference> {
    config.validate()?;
    let field = predict_full(params, image)?;
    let variance = embedding_variance(params, image, config.noise_rounds, config.noise_fraction, seed)?;
    let foreground = detect_foreground(&variance)?;
    Ok(Inference {
        field,
        variance,
        foreground,
    })
}

/// Segmentation with the configured bandwidth and shrinkage.
pub fn instances(inference: &Inference, config: &SegmenterConfig) -> Result<LabelMask> {
    let labels = segment(&inference.field, &inference.foreground, config)?;
    Ok(shrink_instances(&labels, config.shrink))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SearchMetric {
    F1 { threshold: f64 },
    Seg,
}

impl Default for SearchMetric {
    fn default() -> Self {
        SearchMetric::F1 { threshold: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchPoint {
    pub bandwidth: f64,
    pub shrink: usize,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub bandwidth: f64,
    pub shrink: usize,
    pub score: f64,
    /// Every evaluated combination, bandwidth-major.
    pub table: Vec<SearchPoint>,
}

#[derive(Default)]
struct Tally {
    counts: Counts,
    seg_sum: f64,
    seg_n: usize,
}

impl Tally {
    fn add(&mut self, gt: &LabelMask, pred: &LabelMask, metric: SearchMetric) -> Result<()> {
        match metric {
            SearchMetric::F1 { threshold } => self.counts += match_from_matrix(&iou_matrix(gt, pred)?, threshold).counts,
            SearchMetric::Seg => {
                let (s, n) = seg_parts(gt, pred)?;
                self.seg_sum += s;
                self.seg_n += n;
            }
        }
        Ok(())
    }

    fn score(&self, metric: SearchMetric) -> f64 {
        match metric {
            SearchMetric::F1 { .. } => crate::metrics::detection_scores(self.counts).f1,
            SearchMetric::Seg if self.seg_n > 0 => self.seg_sum / self.seg_n as f64,
            SearchMetric::Seg => 0.0,
        }
    }
}

/// Grid search over bandwidths and shrink distances `0..=6` on precomputed
/// inferences. Ties go to the smaller bandwidth, then the smaller shrink.
pub fn search_prepared(
    inferences: &[Inference],
    gts: &[LabelMask],
    candidates: &[f64],
    config: &SegmenterConfig,
    metric: SearchMetric,
) -> Result<SearchResult> {
    if inferences.is_empty() || inferences.len() != gts.len() {
        return Err(Error::precondition("bandwidth_search", "validation set is empty or unlabeled"));
    }
    let mut bandwidths: Vec<f64> = candidates.to_vec();
    bandwidths.sort_by(f64::total_cmp);
    bandwidths.dedup();
    if bandwidths.is_empty() {
        return Err(Error::precondition("bandwidth_search", "no bandwidth candidates"));
    }
    let mut table = Vec::new();
    for &bandwidth in &bandwidths {
        let cfg = SegmenterConfig { bandwidth, ..config.clone() };
        let mut tallies: Vec<Tally> = (0..=MAX_SHRINK).map(|_| Tally::default()).collect();
        for (inf, gt) in inferences.iter().zip(gts) {
            let labels = segment(&inf.field, &inf.foreground, &cfg)?;
            for (s, tally) in tallies.iter_mut().enumerate() {
                tally.add(gt, &shrink_instances(&labels, s as f64), metric)?;
            }
        }
        for (shrink, tally) in tallies.iter().enumerate() {
            table.push(SearchPoint {
                bandwidth,
                shrink,
                score: tally.score(metric),
            });
        }
    }
    let best = table
        .iter()
        .fold(&table[0], |best, p| if p.score > best.score { p } else { best })
        .clone();
    Ok(SearchResult {
        bandwidth: best.bandwidth,
        shrink: best.shrink,
        score: best.score,
        table,
    })
}

pub fn bandwidth_search(
    params: &ModelParams,
    images: &[Tensor<f32>],
    gts: &[LabelMask],
    candidates: &[f64],
    config: &SegmenterConfig,
    metric: SearchMetric,
    seed: u64,
) -> Result<SearchResult> {
    if images.is_empty() {
        return Err(Error::precondition("bandwidth_search", "empty validation set"));
    }
    let inferences = images
        .iter()
        .map(|img| infer(params, img, config, seed))
        .collect::<Result<Vec<_>>>()?;
    search_prepared(&inferences, gts, candidates, config, metric)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_matches_numpy_mode() {
        let idx: Vec<usize> = (-3..8).map(|i| reflect(i, 5)).collect();
        assert_eq!(idx, vec![3, 2, 1, 0, 1, 2, 3, 4, 3, 2, 1]);
    }

    #[test]
    fn tiles_cover_extent_at_even_offsets() {
        assert_eq!(tile_starts(100, 252, 236), vec![0]);
        assert_eq!(tile_starts(268, 252, 236), vec![0, 16]);
        assert_eq!(tile_starts(720, 252, 236), vec![0, 236, 468]);
    }

    #[test]
    fn salt_pepper_counts() {
        let img = Tensor::full(&[1, 100, 100], 0.5f32);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noisy = salt_pepper(&img, 0.01, &mut rng).unwrap();
        assert_eq!(noisy.data().iter().filter(|&&v| v == 0.0).count(), 50);
        assert_eq!(noisy.data().iter().filter(|&&v| v == 1.0).count(), 50);
        assert_eq!(salt_pepper(&img, 0.0, &mut rng).unwrap(), img);
        let again = salt_pepper(&img, 0.01, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(noisy, again);
    }

    #[test]
    fn otsu_separates_two_values() {
        let t = otsu_threshold(&[0.0, 0.0, 0.0, 10.0, 10.0]).unwrap();
        assert!(t > 0.0 && t < 10.0);
        assert_eq!(t, 10.0 / 256.0);
        assert!(otsu_threshold(&[2.0; 4]).is_err());
    }

    #[test]
    fn blob_is_foreground() {
        let v: Vec<f64> = (0..100).map(|p| if (p / 10) % 9 > 2 && p % 10 > 4 { 0.01 } else { 5.0 }).collect();
        let fg = detect_foreground(&v).unwrap();
        for (f, x) in fg.iter().zip(&v) {
            assert_eq!(*f, *x == 0.01);
        }
    }

    #[test]
    fn mean_shift_small_cases() {
        let ms = mean_shift(&[[0.0, 0.0]; 5], 1.0).unwrap();
        assert_eq!(ms.modes, vec![[0.0, 0.0]]);
        assert_eq!(ms.assignment, vec![0; 5]);
        assert!(mean_shift(&[], 1.0).is_err());
        assert!(mean_shift(&[[0.0, 0.0]], 0.0).is_err());
    }

    #[test]
    fn shrink_square() {
        let mut m = LabelMask::zeros(9, 9);
        for y in 2..7 {
            for x in 2..7 {
                m.set(y, x, 1);
            }
        }
        assert_eq!(shrink_instances(&m, 0.0), m);
        let one = shrink_instances(&m, 1.0);
        assert_eq!(one.sizes()[&1], 9);
        assert!((3..6).all(|y| (3..6).all(|x| one.get(y, x) == 1)));
        assert_eq!(shrink_instances(&m, 6.0).count(), 0);
    }

    #[test]
    fn components_split() {
        let m = LabelMask::new(1, 5, vec![3, 3, 0, 3, 1]).unwrap();
        assert_eq!(split_components(&m).data(), &[1, 1, 0, 2, 3]);
    }

    #[test]
    fn empty_foreground_gives_empty_labels() {
        let field = Tensor::zeros(&[2, 6, 6]);
        let out = segment(&field, &[false; 36], &SegmenterConfig::default()).unwrap();
        assert_eq!(out.count(), 0);
    }

    #[test]
    fn config_bounds() {
        assert!(SegmenterConfig::default().validate().is_ok());
        for bad in [
            SegmenterConfig { noise_rounds: 1, ..Default::default() },
            SegmenterConfig { noise_fraction: 0.5, ..Default::default() },
            SegmenterConfig { bandwidth: 0.0, ..Default::default() },
            SegmenterConfig { shrink: 7.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
