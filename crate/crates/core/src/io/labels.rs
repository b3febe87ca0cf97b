use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Instance map: 0 is background, positive values are instance ids.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelMask {
    height: usize,
    width: usize,
    data: Vec<u32>,
}

impl LabelMask {
    pub fn new(height: usize, width: usize, data: Vec<u32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(
                "LabelMask::new",
                format!("{} pixels", height * width),
                format!("{}", data.len()),
            ));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u32] {
        &mut self.data
    }

    pub fn get(&self, y: usize, x: usize) -> u32 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, id: u32) {
        self.data[y * self.width + x] = id;
    }

    /// Sorted distinct non-zero ids.
    pub fn ids(&self) -> Vec<u32> {
        self.sizes().into_keys().collect()
    }

    pub fn count(&self) -> usize {
        self.sizes().len()
    }

    /// Pixel count per non-zero id.
    pub fn sizes(&self) -> BTreeMap<u32, usize> {
        let mut sizes = BTreeMap::new();
        for &v in &self.data {
            if v != 0 {
                *sizes.entry(v).or_insert(0) += 1;
            }
        }
        sizes
    }

    pub fn foreground(&self) -> Vec<bool> {
        self.data.iter().map(|&v| v != 0).collect()
    }

    /// Renumbers instances `1..=N` in order of first appearance (row-major).
    pub fn relabel_sequential(&self) -> Self {
        let mut map = std::collections::HashMap::new();
        let mut next = 0u32;
        let data = self
            .data
            .iter()
            .map(|&v| {
                if v == 0 {
                    0
                } else {
                    *map.entry(v).or_insert_with(|| {
                        next += 1;
                        next
                    })
                }
            })
            .collect();
        Self {
            height: self.height,
            width: self.width,
            data,
        }
    }

    /// Applies `f` to every id; a result of 0 clears the pixel.
    pub fn map_ids(&self, mut f: impl FnMut(u32) -> u32) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| if v == 0 { 0 } else { f(v) }).collect(),
        }
    }

    /// Ids are consecutive `1..=N`.
    pub fn is_sequential(&self) -> bool {
        self.ids().iter().enumerate().all(|(i, &id)| id as usize == i + 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relabel_orders_by_first_pixel() {
        let m = LabelMask::new(2, 3, vec![7, 0, 3, 3, 7, 9]).unwrap();
        let r = m.relabel_sequential();
        assert_eq!(r.data(), &[1, 0, 2, 2, 1, 3]);
        assert!(r.is_sequential());
        assert!(!m.is_sequential());
    }

    #[test]
    fn sizes_skip_background() {
        let m = LabelMask::new(1, 5, vec![0, 2, 2, 0, 5]).unwrap();
        assert_eq!(m.sizes().into_iter().collect::<Vec<_>>(), vec![(2, 2), (5, 1)]);
        assert_eq!(m.count(), 2);
    }
}
