//! Synthetic cell scenes: non-overlapping ellipses sharing one texture over a
//! noisy background.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{Dataset, LabelMask};
use crate::tensor::Tensor;

pub const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;
const BACKGROUND_MEAN: f64 = 0.1;
/// Orientation of the texture gradient, radians.
const GRADIENT_ANGLE: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub objects: usize,
    /// Semi-major axis range in pixels.
    pub radius_min: f64,
    pub radius_max: f64,
    pub eccentricity_min: f64,
    pub eccentricity_max: f64,
    pub noise_std: f64,
    /// Minimum empty margin between neighbouring objects.
    pub gap: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            height: 252,
            width: 252,
            objects: 28,
            radius_min: 8.0,
            radius_max: 14.0,
            eccentricity_min: 0.0,
            eccentricity_max: 0.6,
            noise_std: 0.05,
            gap: 2.0,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("scene: {msg}")));
        if self.height == 0 || self.width == 0 {
            return bad("canvas must be non-empty".into());
        }
        if !(self.radius_min > 0.0 && self.radius_min <= self.radius_max) {
            return bad(format!("radius range {}..{}", self.radius_min, self.radius_max));
        }
        if !(0.0 <= self.eccentricity_min && self.eccentricity_min <= self.eccentricity_max && self.eccentricity_max < 1.0) {
            return bad(format!("eccentricity range {}..{}", self.eccentricity_min, self.eccentricity_max));
        }
        if !(self.noise_std >= 0.0) || !(self.gap >= 0.0) {
            return bad("noise and gap must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacedObject {
    pub id: u32,
    pub center: (usize, usize),
    pub semi_major: f64,
    pub semi_minor: f64,
    pub angle: f64,
}

impl PlacedObject {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        let dy = y as f64 - self.center.0 as f64;
        let dx = x as f64 - self.center.1 as f64;
        let (s, c) = self.angle.sin_cos();
        let u = (dx * c + dy * s) / self.semi_major;
        let v = (-dx * s + dy * c) / self.semi_minor;
        u * u + v * v <= 1.0
    }
}

#[derive(Clone, Debug)]
pub struct SynthScene {
    pub image: Tensor<f32>,
    pub labels: LabelMask,
    pub objects: Vec<PlacedObject>,
}

/// Intensity at offset `(dy, dx)` from an object center. Radial ramp times a
/// fixed-orientation linear gradient, in `[0.43, 1]` inside `r_max`.
pub fn texture_value(dy: f64, dx: f64, r_max: f64) -> f64 {
    let rho = (dy * dy + dx * dx).sqrt() / r_max;
    let (s, c) = GRADIENT_ANGLE.sin_cos();
    let u = (dx * c + dy * s) / r_max;
    0.3 + 0.7 * (1.0 - 0.5 * rho) * (1.0 + 0.3 * u) / 1.3
}

fn place(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<Vec<PlacedObject>> {
    let mut placed: Vec<PlacedObject> = Vec::with_capacity(spec.objects);
    let mut attempts = 0;
    while placed.len() < spec.objects {
        if attempts == MAX_PLACEMENT_ATTEMPTS {
            return Err(Error::Placement {
                requested: spec.objects,
                placed: placed.len(),
                attempts,
            });
        }
        attempts += 1;
        let a = rng.random_range(spec.radius_min..=spec.radius_max);
        let e = rng.random_range(spec.eccentricity_min..=spec.eccentricity_max);
        let angle = rng.random_range(0.0..std::f64::consts::PI);
        let margin = a.ceil() as usize;
        if 2 * margin + 1 > spec.height || 2 * margin + 1 > spec.width {
            continue;
        }
        let cy = rng.random_range(margin..spec.height - margin);
        let cx = rng.random_range(margin..spec.width - margin);
        let clear = placed.iter().all(|o| {
            let dy = cy as f64 - o.center.0 as f64;
            let dx = cx as f64 - o.center.1 as f64;
            (dy * dy + dx * dx).sqrt() >= a + o.semi_major + spec.gap
        });
        if clear {
            placed.push(PlacedObject {
                id: placed.len() as u32 + 1,
                center: (cy, cx),
                semi_major: a,
                semi_minor: a * (1.0 - e * e).sqrt(),
                angle,
            });
        }
    }
    Ok(placed)
}

fn render(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<SynthScene> {
    spec.validate()?;
    let objects = place(spec, rng)?;
    let (h, w) = (spec.height, spec.width);
    let noise = Normal::new(BACKGROUND_MEAN, spec.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let mut image: Vec<f32> = (0..h * w).map(|_| noise.sample(rng) as f32).collect();
    let mut labels = LabelMask::zeros(h, w);
    for o in &objects {
        let r = o.semi_major.ceil() as usize;
        for y in o.center.0 - r..=o.center.0 + r {
            for x in o.center.1 - r..=o.center.1 + r {
                if o.contains(y, x) {
                    let dy = y as f64 - o.center.0 as f64;
                    let dx = x as f64 - o.center.1 as f64;
                    image[y * w + x] = texture_value(dy, dx, spec.radius_max) as f32;
                    labels.set(y, x, o.id);
                }
            }
        }
    }
    Ok(SynthScene {
        image: Tensor::new(vec![1, h, w], image)?,
        labels,
        objects,
    })
}

pub fn synth_generate(spec: &SceneSpec) -> Result<SynthScene> {
    render(spec, &mut ChaCha8Rng::seed_from_u64(spec.seed))
}

/// `count` scenes; scene `k` draws from stream `k + 1` of `spec.seed`.
pub fn generate_dataset(spec: &SceneSpec, count: usize) -> Result<Dataset> {
    let mut stems = Vec::with_capacity(count);
    let mut images = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for k in 0..count {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(k as u64 + 1);
        let scene = render(spec, &mut rng)?;
        stems.push(format!("img_{k:04}"));
        images.push(scene.image);
        labels.push(scene.labels);
    }
    Dataset::new(stems, images, Some(labels))
}
