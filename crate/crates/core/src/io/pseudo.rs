//! Pseudo labels: predictions overridden locally by sparse annotations.

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::io::LabelMask;
use crate::morph::squared_edt;

/// Pixels closer than this to an annotation count as known background.
pub const KNOWN_BACKGROUND_RADIUS: f64 = 30.0;

/// Pairwise-disjoint annotated instances, each a list of flat pixel indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SparseAnnotations {
    height: usize,
    width: usize,
    masks: Vec<Vec<usize>>,
}

impl SparseAnnotations {
    pub fn new(height: usize, width: usize, masks: Vec<Vec<usize>>) -> Result<Self> {
        let mut owner = vec![false; height * width];
        for (k, m) in masks.iter().enumerate() {
            for &p in m {
                if p >= owner.len() {
                    return Err(Error::precondition("SparseAnnotations", format!("pixel {p} outside {height}x{width}")));
                }
                if owner[p] {
                    return Err(Error::precondition("SparseAnnotations", format!("annotation {k} overlaps an earlier one")));
                }
                owner[p] = true;
            }
        }
        Ok(Self { height, width, masks })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self { height, width, masks: Vec::new() }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn masks(&self) -> &[Vec<usize>] {
        &self.masks
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }
}

/// Draws `round(fraction * N)` ground-truth instances uniformly without replacement.
pub fn sample_annotations(gt: &LabelMask, fraction: f64, rng: &mut impl Rng) -> Result<SparseAnnotations> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::precondition("sample_annotations", format!("fraction {fraction} outside [0, 1]")));
    }
    let ids = gt.ids();
    let n = (fraction * ids.len() as f64).round() as usize;
    let mut chosen: Vec<u32> = sample(rng, ids.len(), n).into_iter().map(|i| ids[i]).collect();
    chosen.sort_unstable();
    let masks = chosen
        .iter()
        .map(|&id| (0..gt.data().len()).filter(|&p| gt.data()[p] == id).collect())
        .collect();
    SparseAnnotations::new(gt.height(), gt.width(), masks)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PseudoDataset {
    pub labels: LabelMask,
    pub known_background: Vec<bool>,
}

/// Removes every predicted instance touching an annotation and pastes the
/// annotations in with fresh ids above the largest predicted id.
pub fn build_pseudo_dataset(pred: &LabelMask, annotations: &SparseAnnotations) -> Result<PseudoDataset> {
    let (h, w) = pred.shape();
    if annotations.shape() != (h, w) {
        return Err(Error::shape(
            "build_pseudo_dataset",
            format!("{h}x{w}"),
            format!("{}x{}", annotations.height, annotations.width),
        ));
    }
    let mut drop = std::collections::HashSet::new();
    let mut annotated = vec![false; h * w];
    for m in annotations.masks() {
        for &p in m {
            annotated[p] = true;
            if pred.data()[p] != 0 {
                drop.insert(pred.data()[p]);
            }
        }
    }
    let mut labels = pred.map_ids(|id| if drop.contains(&id) { 0 } else { id });
    let base = pred.data().iter().copied().max().unwrap_or(0);
    for (k, m) in annotations.masks().iter().enumerate() {
        for &p in m {
            labels.data_mut()[p] = base + k as u32 + 1;
        }
    }
    let known_background = if annotations.is_empty() {
        vec![false; h * w]
    } else {
        let d2 = squared_edt(h, w, |p| annotated[p]);
        let r2 = KNOWN_BACKGROUND_RADIUS * KNOWN_BACKGROUND_RADIUS;
        d2.iter().zip(labels.data()).map(|(&d, &l)| d < r2 && l == 0).collect()
    };
    Ok(PseudoDataset { labels, known_background })
}
