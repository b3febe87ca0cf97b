//! Self-supervised pair loss on dense offset fields.
//!
//! For pixel pairs `(i, j)` at most `kappa` apart the loss compares the
//! spatial offset `i - j` with the embedding offset `r_i - r_j` through the
//! saturating distance `sigma(delta) = 1 / (1 + exp(-|delta|^2 / tau))`,
//! and adds `lambda_reg * |r_i|` at every anchor. Pairs drawn across two
//! objects carry no systematic direction, so the saturation keeps their
//! large residuals from dominating the gradient.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Maximum anchor-partner distance in pixels.
    pub kappa: f64,
    /// Sigmoid temperature.
    pub tau: f64,
    pub lambda_reg: f64,
    /// Fraction of field pixels used as anchors.
    pub density: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kappa: 10.0,
            tau: 10.0,
            lambda_reg: 1e-5,
            density: 0.10,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa >= 1.0) {
            return Err(Error::Config(format!("kappa must be >= 1 pixel, got {}", self.kappa)));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.lambda_reg >= 0.0) {
            return Err(Error::Config(format!("lambda_reg must be non-negative, got {}", self.lambda_reg)));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::Config(format!("density must be in (0, 1], got {}", self.density)));
        }
        Ok(())
    }
}

/// Anchor/partner coordinates `(row, col)` on an offset field grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairSet {
    pub height: usize,
    pub width: usize,
    pub anchors: Vec<(usize, usize)>,
    pub partners: Vec<(usize, usize)>,
}

impl PairSet {
    pub fn new(height: usize, width: usize, anchors: Vec<(usize, usize)>, partners: Vec<(usize, usize)>) -> Result<Self> {
        if anchors.len() != partners.len() {
            return Err(Error::shape("PairSet", format!("{} partners", anchors.len()), format!("{}", partners.len())));
        }
        for &(row, col) in anchors.iter().chain(&partners) {
            if row >= height || col >= width {
                return Err(Error::OutOfBounds { op: "PairSet", row, col, height, width });
            }
        }
        Ok(Self { height, width, anchors, partners })
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// Spatial offsets `anchor - partner`.
    pub fn offsets(&self) -> Vec<[f64; 2]> {
        self.anchors
            .iter()
            .zip(&self.partners)
            .map(|(a, p)| [a.0 as f64 - p.0 as f64, a.1 as f64 - p.1 as f64])
            .collect()
    }
}

/// Draws `floor(density * H * W)` distinct anchors and, for each, one partner
/// uniformly from the in-bounds pixels of the `kappa`-disc around it
/// (excluding the anchor itself).
pub fn sample_pairs<R: Rng + ?Sized>(height: usize, width: usize, config: &LossConfig, rng: &mut R) -> Result<PairSet> {
    config.validate()?;
    let span = 2.0 * config.kappa;
    if (height as f64) <= span || (width as f64) <= span {
        return Err(Error::precondition(
            "sample_pairs",
            format!("field {height}x{width} must exceed 2*kappa = {span} per side"),
        ));
    }
    let total = height * width;
    let count = (config.density * total as f64).floor() as usize;
    let reach = config.kappa.floor() as i64;
    let kappa2 = config.kappa * config.kappa;
    let mut anchors = Vec::with_capacity(count);
    let mut partners = Vec::with_capacity(count);
    for flat in index::sample(rng, total, count) {
        let (row, col) = (flat / width, flat % width);
        let partner = loop {
            let dy = rng.random_range(-reach..=reach);
            let dx = rng.random_range(-reach..=reach);
            if (dy == 0 && dx == 0) || ((dy * dy + dx * dx) as f64) > kappa2 {
                continue;
            }
            let (py, px) = (row as i64 + dy, col as i64 + dx);
            if py < 0 || px < 0 || py >= height as i64 || px >= width as i64 {
                continue;
            }
            break (py as usize, px as usize);
        };
        anchors.push((row, col));
        partners.push(partner);
    }
    Ok(PairSet { height, width, anchors, partners })
}

/// `1 / (1 + exp(-|delta|^2 / tau))`, in `[0.5, 1)`.
pub fn sigma(delta: [f64; 2], tau: f64) -> f64 {
    crate::tensor::sigmoid_distance(delta[0], delta[1], tau)
}

/// Records the loss for `field` (`[2, H, W]`) on a tape and returns the scalar.
pub fn loss_on_tape<T: Element>(tape: &mut Tape<T>, field: Var, pairs: &PairSet, config: &LossConfig) -> Result<Var> {
    let (c, h, w) = tape.value(field).dims3("oce_loss")?;
    if c != 2 {
        return Err(Error::shape("oce_loss", "2 channels", format!("{c}")));
    }
    if (h, w) != (pairs.height, pairs.width) {
        return Err(Error::shape(
            "oce_loss",
            format!("pairs for a {h}x{w} field"),
            format!("{}x{}", pairs.height, pairs.width),
        ));
    }
    let anchors = tape.gather_coords(field, &pairs.anchors)?;
    let partners = tape.gather_coords(field, &pairs.partners)?;
    tape.pair_loss(anchors, partners, &pairs.offsets(), config.tau, config.lambda_reg)
}

/// Loss value and its gradient with respect to the field.
pub fn oce_loss<T: Element>(field: &Tensor<T>, pairs: &PairSet, config: &LossConfig) -> Result<(f64, Tensor<T>)> {
    let mut tape = Tape::<T>::new();
    let f = tape.param(field.clone());
    let loss = loss_on_tape(&mut tape, f, pairs, config)?;
    tape.backward(loss)?;
    let value = tape.value(loss).data()[0].as_f64();
    let grad = tape.take_grad(f).unwrap_or_else(|| vec![T::zero(); field.numel()]);
    Ok((value, Tensor::new(field.shape().to_vec(), grad)?))
}

/// Pair term alone, evaluated in double precision.
pub fn pair_term(field: &Tensor<f64>, pairs: &PairSet, tau: f64) -> f64 {
    let (h, w) = (field.shape()[1], field.shape()[2]);
    let at = |c: usize, (row, col): (usize, usize)| field.data()[(c * h + row) * w + col];
    pairs
        .anchors
        .iter()
        .zip(&pairs.partners)
        .map(|(&a, &b)| {
            let d = [a.0 as f64 - b.0 as f64, a.1 as f64 - b.1 as f64];
            sigma([d[0] - (at(0, a) - at(0, b)), d[1] - (at(1, a) - at(1, b))], tau)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn anchor_count_on_full_crop() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pairs = sample_pairs(236, 236, &LossConfig::default(), &mut rng).unwrap();
        assert_eq!(pairs.len(), 5569);
        let mut uniq = pairs.anchors.clone();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), 5569);
    }

    #[test]
    fn partners_respect_radius_and_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = LossConfig { density: 1.0, ..Default::default() };
        let pairs = sample_pairs(25, 23, &cfg, &mut rng).unwrap();
        for (a, p) in pairs.anchors.iter().zip(&pairs.partners) {
            assert_ne!(a, p);
            let d2 = (a.0 as f64 - p.0 as f64).powi(2) + (a.1 as f64 - p.1 as f64).powi(2);
            assert!(d2 <= 100.0);
            assert!(p.0 < 25 && p.1 < 23);
        }
        // (0, 0) is an anchor at density 1; its partner lies in the quarter disc.
        let i = pairs.anchors.iter().position(|&a| a == (0, 0)).unwrap();
        let p = pairs.partners[i];
        assert!(p.0 <= 10 && p.1 <= 10);
    }

    #[test]
    fn admissible_pair_example() {
        let d2: f64 = 5.0f64.powi(2) * 2.0;
        assert!((d2.sqrt() - 7.0710678).abs() < 1e-6);
        assert!(PairSet::new(30, 30, vec![(20, 20)], vec![(25, 25)]).is_ok());
    }

    #[test]
    fn field_must_exceed_twice_kappa() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_pairs(20, 50, &LossConfig::default(), &mut rng).is_err());
        assert!(sample_pairs(21, 21, &LossConfig::default(), &mut rng).is_ok());
    }

    #[test]
    fn sigma_values() {
        assert_eq!(sigma([0.0, 0.0], 10.0), 0.5);
        // |delta|^2 = 10, tau = 10 -> 1 / (1 + e^-1)
        let v = sigma([1.0, 3.0], 10.0);
        assert!((v - 0.731_058_578_630_004_9).abs() < 1e-12);
        let mut prev = 0.5;
        for r in 1..50 {
            let s = sigma([r as f64 * 0.3, 0.0], 10.0);
            assert!(s > prev && s < 1.0);
            prev = s;
        }
    }

    #[test]
    fn zero_field_single_pair() {
        let field = Tensor::<f64>::zeros(&[2, 30, 30]);
        let pairs = PairSet::new(30, 30, vec![(5, 15)], vec![(5, 5)]).unwrap();
        let cfg = LossConfig { lambda_reg: 0.0, ..Default::default() };
        let (loss, _) = oce_loss(&field, &pairs, &cfg).unwrap();
        // sigma((0, 10)) = 1 / (1 + e^-10)
        assert!((loss - 0.999_954_602_131_297_6).abs() < 1e-12);
    }

    #[test]
    fn regularizer_acts_on_anchors_only() {
        let mut field = Tensor::<f64>::zeros(&[2, 30, 30]);
        // Nonzero only at the partner pixel.
        field.data_mut()[5 * 30 + 5] = 3.0;
        let pairs = PairSet::new(30, 30, vec![(5, 6)], vec![(5, 5)]).unwrap();
        let cfg = LossConfig { lambda_reg: 1.0, ..Default::default() };
        let (with_reg, _) = oce_loss(&field, &pairs, &cfg).unwrap();
        let (no_reg, _) = oce_loss(&field, &pairs, &LossConfig { lambda_reg: 0.0, ..cfg }).unwrap();
        assert_eq!(with_reg, no_reg);
        field.data_mut()[5 * 30 + 6] = 4.0;
        let (with_reg, _) = oce_loss(&field, &pairs, &cfg).unwrap();
        let (no_reg, _) = oce_loss(&field, &pairs, &LossConfig { lambda_reg: 0.0, ..cfg }).unwrap();
        assert!((with_reg - no_reg - 4.0).abs() < 1e-12);
    }
}
