//! Dataset directories: `images/<stem>.ocet` and optional `labels/<stem>.ocet`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{read_labels, read_tensor, write_labels, write_tensor, LabelMask};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Dataset {
    pub stems: Vec<String>,
    pub images: Vec<Tensor<f32>>,
    pub labels: Option<Vec<LabelMask>>,
}

impl Dataset {
    pub fn new(stems: Vec<String>, images: Vec<Tensor<f32>>, labels: Option<Vec<LabelMask>>) -> Result<Self> {
        if stems.len() != images.len() {
            return Err(Error::Malformed(format!("{} stems for {} images", stems.len(), images.len())));
        }
        for img in &images {
            img.dims3("Dataset::new")?;
        }
        if let Some(labels) = &labels {
            if labels.len() != images.len() {
                return Err(Error::Malformed(format!("{} label maps for {} images", labels.len(), images.len())));
            }
            for ((stem, img), lab) in stems.iter().zip(&images).zip(labels) {
                if img.shape()[1..] != [lab.height(), lab.width()] {
                    return Err(Error::Malformed(format!(
                        "{stem}: image {:?} vs labels {:?}",
                        img.shape(),
                        lab.shape()
                    )));
                }
            }
        }
        Ok(Self { stems, images, labels })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Items `range`, keeping labels when present.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            stems: self.stems[range.clone()].to_vec(),
            images: self.images[range.clone()].to_vec(),
            labels: self.labels.as_ref().map(|l| l[range].to_vec()),
        }
    }
}

/// Sorted stems of `*.ocet` files in `dir`.
pub fn list_stems(dir: impl AsRef<Path>) -> Result<Vec<String>> {
    let dir = dir.as_ref();
    let mut stems = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::file(dir, e))? {
        let path = entry.map_err(|e| Error::file(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "ocet") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.push(stem.to_owned());
            }
        }
    }
    stems.sort();
    Ok(stems)
}

pub fn load_dataset(root: impl AsRef<Path>) -> Result<Dataset> {
    let root = root.as_ref();
    let stems = list_stems(root.join("images"))?;
    let images = stems
        .iter()
        .map(|s| read_tensor(root.join("images").join(format!("{s}.ocet"))))
        .collect::<Result<Vec<_>>>()?;
    let label_dir = root.join("labels");
    let labels = if label_dir.is_dir() {
        let label_stems = list_stems(&label_dir)?;
        if label_stems != stems {
            return Err(Error::Malformed(format!(
                "{}: label stems do not match image stems",
                label_dir.display()
            )));
        }
        Some(
            stems
                .iter()
                .map(|s| read_labels(label_dir.join(format!("{s}.ocet"))))
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    Dataset::new(stems, images, labels)
}

pub fn save_dataset(root: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let root = root.as_ref();
    let images = root.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::file(&images, e))?;
    for (stem, img) in data.stems.iter().zip(&data.images) {
        write_tensor(images.join(format!("{stem}.ocet")), img)?;
    }
    if let Some(labels) = &data.labels {
        let dir = root.join("labels");
        fs::create_dir_all(&dir).map_err(|e| Error::file(&dir, e))?;
        for (stem, lab) in data.stems.iter().zip(labels) {
            write_labels(dir.join(format!("{stem}.ocet")), lab)?;
        }
    }
    Ok(())
}
