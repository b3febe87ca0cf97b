//! Instance segmentation scores.
//!
//! Detection scores count one-to-one IoU matches at a threshold. SEG follows
//! the Cell Tracking Challenge: a ground-truth object is matched by the
//! prediction covering more than half of it, and contributes that IoU.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::LabelMask;

/// Pairwise overlaps between non-zero ids of two label maps, ids sorted.
#[derive(Clone, Debug, PartialEq)]
pub struct IouMatrix {
    pub gt_ids: Vec<u32>,
    pub pred_ids: Vec<u32>,
    pub gt_sizes: Vec<usize>,
    pub pred_sizes: Vec<usize>,
    /// Row-major `|gt| x |pred|` intersection pixel counts.
    pub overlap: Vec<usize>,
}

impl IouMatrix {
    pub fn iou(&self, g: usize, p: usize) -> f64 {
        let inter = self.overlap[g * self.pred_ids.len() + p];
        if inter == 0 {
            return 0.0;
        }
        inter as f64 / (self.gt_sizes[g] + self.pred_sizes[p] - inter) as f64
    }

    /// Dense `|gt| x |pred|` IoU values.
    pub fn values(&self) -> Vec<f64> {
        let n = self.pred_ids.len();
        (0..self.gt_ids.len() * n).map(|k| self.iou(k / n, k % n)).collect()
    }
}

pub fn iou_matrix(gt: &LabelMask, pred: &LabelMask) -> Result<IouMatrix> {
    if gt.shape() != pred.shape() {
        return Err(Error::shape("iou_matrix", format!("{:?}", gt.shape()), format!("{:?}", pred.shape())));
    }
    let (gs, ps) = (gt.sizes(), pred.sizes());
    let gt_index: HashMap<u32, usize> = gs.keys().enumerate().map(|(i, &id)| (id, i)).collect();
    let pred_index: HashMap<u32, usize> = ps.keys().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut overlap = vec![0usize; gs.len() * ps.len()];
    for (&g, &p) in gt.data().iter().zip(pred.data()) {
        if g != 0 && p != 0 {
            overlap[gt_index[&g] * ps.len() + pred_index[&p]] += 1;
        }
    }
    Ok(IouMatrix {
        gt_ids: gs.keys().copied().collect(),
        pred_ids: ps.keys().copied().collect(),
        gt_sizes: gs.values().copied().collect(),
        pred_sizes: ps.values().copied().collect(),
        overlap,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl AddAssign for Counts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    /// `(gt id, pred id, IoU)`.
    pub pairs: Vec<(u32, u32, f64)>,
    pub counts: Counts,
}

/// Greedy one-to-one matching among pairs with IoU `>= threshold`, by
/// descending IoU and then ascending `(gt id, pred id)`.
pub fn match_from_matrix(m: &IouMatrix, threshold: f64) -> MatchResult {
    let mut candidates = Vec::new();
    for g in 0..m.gt_ids.len() {
        for p in 0..m.pred_ids.len() {
            if m.overlap[g * m.pred_ids.len() + p] > 0 {
                let iou = m.iou(g, p);
                if iou >= threshold {
                    candidates.push((g, p, iou));
                }
            }
        }
    }
    candidates.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    let mut gt_used = vec![false; m.gt_ids.len()];
    let mut pred_used = vec![false; m.pred_ids.len()];
    let mut pairs = Vec::new();
    for (g, p, iou) in candidates {
        if !gt_used[g] && !pred_used[p] {
            gt_used[g] = true;
            pred_used[p] = true;
            pairs.push((m.gt_ids[g], m.pred_ids[p], iou));
        }
    }
    let tp = pairs.len();
    MatchResult {
        pairs,
        counts: Counts {
            tp,
            fp: m.pred_ids.len() - tp,
            fn_: m.gt_ids.len() - tp,
        },
    }
}

pub fn match_at_threshold(gt: &LabelMask, pred: &LabelMask, threshold: f64) -> Result<MatchResult> {
    check_threshold(threshold)?;
    Ok(match_from_matrix(&iou_matrix(gt, pred)?, threshold))
}

fn check_threshold(t: f64) -> Result<()> {
    if t > 0.0 && t <= 1.0 {
        Ok(())
    } else {
        Err(Error::precondition("match_at_threshold", format!("threshold {t} outside (0, 1]")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub f1: f64,
    pub recall: f64,
    pub precision: f64,
    pub accuracy: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn detection_scores(c: Counts) -> Scores {
    let recall = ratio(c.tp, c.tp + c.fn_);
    let precision = ratio(c.tp, c.tp + c.fp);
    let f1 = if recall + precision > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Scores {
        f1,
        recall,
        precision,
        accuracy: ratio(c.tp, c.tp + c.fp + c.fn_),
    }
}

/// Sum of matched IoUs and number of ground-truth objects.
pub fn seg_parts(gt: &LabelMask, pred: &LabelMask) -> Result<(f64, usize)> {
    let m = iou_matrix(gt, pred)?;
    let mut total = 0.0;
    for g in 0..m.gt_ids.len() {
        // At most one prediction can cover more than half of g.
        if let Some(p) = (0..m.pred_ids.len()).find(|&p| 2 * m.overlap[g * m.pred_ids.len() + p] > m.gt_sizes[g]) {
            total += m.iou(g, p);
        }
    }
    Ok((total, m.gt_ids.len()))
}

pub fn seg_score(gt: &LabelMask, pred: &LabelMask) -> Result<f64> {
    seg_dataset(std::slice::from_ref(gt), std::slice::from_ref(pred))
}

/// SEG averaged over every ground-truth object of the set.
pub fn seg_dataset(gts: &[LabelMask], preds: &[LabelMask]) -> Result<f64> {
    check_pairs(gts, preds)?;
    let (mut total, mut n) = (0.0, 0);
    for (g, p) in gts.iter().zip(preds) {
        let (t, k) = seg_parts(g, p)?;
        total += t;
        n += k;
    }
    if n == 0 {
        return Err(Error::Degenerate("SEG needs at least one ground-truth object".into()));
    }
    Ok(total / n as f64)
}

fn check_pairs(gts: &[LabelMask], preds: &[LabelMask]) -> Result<()> {
    if gts.len() != preds.len() {
        return Err(Error::shape("metrics", format!("{} predictions", gts.len()), format!("{}", preds.len())));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Sum counts over images, then score.
    #[default]
    Dataset,
    /// Score each image, then average.
    PerImage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub counts: Counts,
    pub scores: Scores,
}

pub fn threshold_sweep(gts: &[LabelMask], preds: &[LabelMask], thresholds: &[f64], mode: Aggregation) -> Result<Vec<SweepRow>> {
    check_pairs(gts, preds)?;
    if thresholds.is_empty() {
        return Err(Error::precondition("threshold_sweep", "no thresholds"));
    }
    thresholds.iter().try_for_each(|&t| check_threshold(t))?;
    let matrices = gts.iter().zip(preds).map(|(g, p)| iou_matrix(g, p)).collect::<Result<Vec<_>>>()?;
    Ok(thresholds
        .iter()
        .map(|&t| {
            let per_image: Vec<Counts> = matrices.iter().map(|m| match_from_matrix(m, t).counts).collect();
            let mut counts = Counts::default();
            per_image.iter().for_each(|&c| counts += c);
            let scores = match mode {
                Aggregation::Dataset => detection_scores(counts),
                Aggregation::PerImage => {
                    let n = per_image.len().max(1) as f64;
                    let mut s = Scores::default();
                    for c in &per_image {
                        let x = detection_scores(*c);
                        s.f1 += x.f1 / n;
                        s.recall += x.recall / n;
                        s.precision += x.precision / n;
                        s.accuracy += x.accuracy / n;
                    }
                    s
                }
            };
            SweepRow { threshold: t, counts, scores }
        })
        .collect())
}

/// Tab-separated report with header `metric\tthreshold\tvalue`. SEG has no
/// threshold and is written with `-`.
pub fn format_report(rows: &[SweepRow], seg: Option<f64>) -> String {
    let mut out = String::from("metric\tthreshold\tvalue\n");
    for r in rows {
        let s = &r.scores;
        for (name, v) in [("f1", s.f1), ("recall", s.recall), ("precision", s.precision), ("accuracy", s.accuracy)] {
            let _ = writeln!(out, "{name}\t{}\t{v:.6}", r.threshold);
        }
        for (name, v) in [("tp", r.counts.tp), ("fp", r.counts.fp), ("fn", r.counts.fn_)] {
            let _ = writeln!(out, "{name}\t{}\t{v}", r.threshold);
        }
    }
    if let Some(seg) = seg {
        let _ = writeln!(out, "seg\t-\t{seg:.6}");
    }
    out
}
