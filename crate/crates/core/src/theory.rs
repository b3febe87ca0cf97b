//! Monte-Carlo check of the expected-offset argument.
//!
//! Scenes hold identical copies of one template whose pixel values are all
//! distinct, so a patch appearance identifies a position inside the object.
//! For two patches `a` and `b`, the offsets `j - i` between every occurrence
//! `i` of `a` and `j` of `b` split into same-object pairs, which all equal
//! the intra-object offset, and cross-object pairs, which average to zero
//! when objects are placed uniformly on a torus.
//!
//! On a torus of even side `L`, wrapping into `(-L/2, L/2]` maps both `+L/2`
//! and `-L/2` to `+L/2` and biases cross-object means by `+1/2` per
//! component; odd sides avoid the tie.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    #[default]
    Periodic,
    Bounded,
}

/// Square stamp; 0 marks pixels outside the object.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Template {
    size: usize,
    values: Vec<u32>,
}

impl Template {
    /// Disc of the given diameter; inside pixels numbered `1..` row-major.
    pub fn disc(diameter: usize) -> Self {
        let c = (diameter as f64 - 1.0) / 2.0;
        let r2 = (diameter as f64 / 2.0).powi(2);
        let mut next = 0;
        let values = (0..diameter * diameter)
            .map(|p| {
                let (y, x) = ((p / diameter) as f64 - c, (p % diameter) as f64 - c);
                if y * y + x * x <= r2 {
                    next += 1;
                    next
                } else {
                    0
                }
            })
            .collect();
        Self { size: diameter, values }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, y: usize, x: usize) -> u32 {
        self.values[y * self.size + x]
    }

    /// `patch x patch` window centered at `(y, x)`; outside reads as 0.
    pub fn window(&self, y: usize, x: usize, patch: usize) -> Vec<u32> {
        let r = (patch / 2) as isize;
        let n = self.size as isize;
        let mut out = Vec::with_capacity(patch * patch);
        for dy in -r..=r {
            for dx in -r..=r {
                let (yy, xx) = (y as isize + dy, x as isize + dx);
                out.push(if (0..n).contains(&yy) && (0..n).contains(&xx) { self.get(yy as usize, xx as usize) } else { 0 });
            }
        }
        out
    }
}

/// A canvas of template copies. `owner` holds object index + 1.
#[derive(Clone, Debug)]
pub struct TheoryScene {
    pub canvas: usize,
    pub boundary: Boundary,
    pub content: Vec<u32>,
    pub owner: Vec<u32>,
    /// Top-left corner of each copy.
    pub origins: Vec<(usize, usize)>,
    pub centers: Vec<[f64; 2]>,
}

/// Offset `d` folded into `(-L/2, L/2]`.
pub fn wrap(d: i64, canvas: usize) -> i64 {
    let l = canvas as i64;
    let m = d.rem_euclid(l);
    if 2 * m > l {
        m - l
    } else {
        m
    }
}

fn center_distance(a: [f64; 2], b: [f64; 2], canvas: usize, boundary: Boundary) -> f64 {
    let l = canvas as f64;
    let fold = |d: f64| match boundary {
        Boundary::Bounded => d,
        Boundary::Periodic => d - l * (d / l).round(),
    };
    let (dy, dx) = (fold(a[0] - b[0]), fold(a[1] - b[1]));
    (dy * dy + dx * dx).sqrt()
}

/// `n` copies at uniform positions with center distances above the
/// template size.
pub fn place_scene(template: &Template, n: usize, canvas: usize, rng: &mut impl Rng, boundary: Boundary) -> Result<TheoryScene> {
    let s = template.size;
    if canvas < s {
        return Err(Error::precondition("place_scene", format!("canvas {canvas} smaller than template {s}")));
    }
    let half = (s as f64 - 1.0) / 2.0;
    let mut origins = Vec::with_capacity(n);
    let mut centers: Vec<[f64; 2]> = Vec::with_capacity(n);
    let mut attempts = 0;
    while origins.len() < n {
        if attempts == MAX_PLACEMENT_ATTEMPTS {
            return Err(Error::Placement {
                requested: n,
                placed: origins.len(),
                attempts,
            });
        }
        attempts += 1;
        let range = match boundary {
            Boundary::Periodic => canvas,
            Boundary::Bounded => canvas - s + 1,
        };
        let o = (rng.random_range(0..range), rng.random_range(0..range));
        let c = [o.0 as f64 + half, o.1 as f64 + half];
        if centers.iter().all(|&q| center_distance(c, q, canvas, boundary) > s as f64) {
            origins.push(o);
            centers.push(c);
        }
    }
    let mut content = vec![0u32; canvas * canvas];
    let mut owner = vec![0u32; canvas * canvas];
    for (k, &(oy, ox)) in origins.iter().enumerate() {
        for ty in 0..s {
            for tx in 0..s {
                let v = template.get(ty, tx);
                if v != 0 {
                    let p = ((oy + ty) % canvas) * canvas + (ox + tx) % canvas;
                    content[p] = v;
                    owner[p] = k as u32 + 1;
                }
            }
        }
    }
    Ok(TheoryScene {
        canvas,
        boundary,
        content,
        owner,
        origins,
        centers,
    })
}

impl TheoryScene {
    /// Window centered at `(y, x)`; wraps on a torus, reads 0 past a bounded edge.
    pub fn window(&self, y: usize, x: usize, patch: usize) -> Vec<u32> {
        let r = (patch / 2) as i64;
        let l = self.canvas as i64;
        let mut out = Vec::with_capacity(patch * patch);
        for dy in -r..=r {
            for dx in -r..=r {
                let (yy, xx) = (y as i64 + dy, x as i64 + dx);
                let v = match self.boundary {
                    Boundary::Periodic => self.content[(yy.rem_euclid(l) * l + xx.rem_euclid(l)) as usize],
                    Boundary::Bounded if (0..l).contains(&yy) && (0..l).contains(&xx) => self.content[(yy * l + xx) as usize],
                    Boundary::Bounded => 0,
                };
                out.push(v);
            }
        }
        out
    }
}

/// Locations of every patch appearance centered on an object pixel.
#[derive(Clone, Debug)]
pub struct OccurrenceIndex {
    pub patch: usize,
    map: HashMap<Vec<u32>, Vec<(usize, usize)>>,
}

impl OccurrenceIndex {
    pub fn build(scene: &TheoryScene, patch: usize) -> Self {
        let mut map: HashMap<Vec<u32>, Vec<(usize, usize)>> = HashMap::new();
        let l = scene.canvas;
        for p in 0..l * l {
            if scene.owner[p] != 0 {
                let (y, x) = (p / l, p % l);
                map.entry(scene.window(y, x, patch)).or_default().push((y, x));
            }
        }
        Self { patch, map }
    }

    pub fn locations(&self, key: &[u32]) -> &[(usize, usize)] {
        self.map.get(key).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vec<u32>, &Vec<(usize, usize)>)> {
        self.map.iter()
    }
}

/// Exact per-scene sums of offsets between occurrences of two patches.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SceneTally {
    pub same_sum: [i64; 2],
    pub same_n: u64,
    pub cross_sum: [i64; 2],
    pub cross_n: u64,
    /// Sums of squared and cubed cross-object offsets, for the symmetry check.
    pub cross_square: [i128; 2],
    pub cross_cube: [i128; 2],
}

pub fn scene_tally(scene: &TheoryScene, index: &OccurrenceIndex, a: &[u32], b: &[u32]) -> Result<SceneTally> {
    let (la, lb) = (index.locations(a), index.locations(b));
    if la.is_empty() || lb.is_empty() {
        return Err(Error::precondition("expected_offset_mc", "patch does not occur in a scene"));
    }
    let l = scene.canvas;
    let mut t = SceneTally::default();
    for &(iy, ix) in la {
        for &(jy, jx) in lb {
            let mut d = [jy as i64 - iy as i64, jx as i64 - ix as i64];
            if scene.boundary == Boundary::Periodic {
                d = [wrap(d[0], l), wrap(d[1], l)];
            }
            if scene.owner[iy * l + ix] == scene.owner[jy * l + jx] {
                t.same_sum[0] += d[0];
                t.same_sum[1] += d[1];
                t.same_n += 1;
            } else {
                t.cross_sum[0] += d[0];
                t.cross_sum[1] += d[1];
                t.cross_square[0] += (d[0] as i128).pow(2);
                t.cross_square[1] += (d[1] as i128).pow(2);
                t.cross_cube[0] += (d[0] as i128).pow(3);
                t.cross_cube[1] += (d[1] as i128).pow(3);
                t.cross_n += 1;
            }
        }
    }
    Ok(t)
}

/// Component-wise ratio estimate `sum / count` over scenes, with a standard
/// error from the scatter of per-scene sums.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OffsetEstimate {
    pub mean: [f64; 2],
    pub se: [f64; 2],
    pub count: u64,
}

fn ratio_estimate(parts: &[([f64; 2], u64)]) -> OffsetEstimate {
    let count: u64 = parts.iter().map(|p| p.1).sum();
    let k = parts.len() as f64;
    let mut mean = [0.0; 2];
    let mut se = [f64::NAN; 2];
    for c in 0..2 {
        let total: f64 = parts.iter().map(|p| p.0[c]).sum();
        mean[c] = if count > 0 { total / count as f64 } else { 0.0 };
        if parts.len() > 1 && count > 0 {
            let ss: f64 = parts.iter().map(|p| (p.0[c] - mean[c] * p.1 as f64).powi(2)).sum();
            se[c] = (k / (k - 1.0) * ss).sqrt() / count as f64;
        }
    }
    OffsetEstimate { mean, se, count }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    /// Offset from `a` to `b` inside the template.
    pub intra: [i64; 2],
    pub overall: OffsetEstimate,
    pub same: OffsetEstimate,
    pub cross: OffsetEstimate,
    /// Exact integer sums, so `overall = same + cross` can be checked exactly.
    pub overall_sum: [i64; 2],
    pub same_sum: [i64; 2],
    pub cross_sum: [i64; 2],
    /// Mean cubed cross offset over the cubed root-mean-square offset.
    pub cross_skew: [f64; 2],
    pub cross_skew_se: [f64; 2],
}

/// Accumulates scene tallies in order.
#[derive(Clone, Debug, Default)]
pub struct OffsetAccumulator {
    tallies: Vec<SceneTally>,
}

impl OffsetAccumulator {
    pub fn push(&mut self, t: SceneTally) {
        self.tallies.push(t);
    }

    pub fn finish(&self, intra: [i64; 2]) -> Decomposition {
        let as_f = |s: [i64; 2]| [s[0] as f64, s[1] as f64];
        let same: Vec<_> = self.tallies.iter().map(|t| (as_f(t.same_sum), t.same_n)).collect();
        let cross: Vec<_> = self.tallies.iter().map(|t| (as_f(t.cross_sum), t.cross_n)).collect();
        let overall: Vec<_> = self
            .tallies
            .iter()
            .map(|t| (as_f([t.same_sum[0] + t.cross_sum[0], t.same_sum[1] + t.cross_sum[1]]), t.same_n + t.cross_n))
            .collect();
        let cubes: Vec<_> = self
            .tallies
            .iter()
            .map(|t| ([t.cross_cube[0] as f64, t.cross_cube[1] as f64], t.cross_n))
            .collect();
        let third = ratio_estimate(&cubes);
        let sum = |f: &dyn Fn(&SceneTally) -> [i64; 2]| {
            self.tallies.iter().fold([0i64; 2], |acc, t| {
                let v = f(t);
                [acc[0] + v[0], acc[1] + v[1]]
            })
        };
        let n_cross = third.count.max(1) as f64;
        let squares = self.tallies.iter().fold([0i128; 2], |acc, t| [acc[0] + t.cross_square[0], acc[1] + t.cross_square[1]]);
        let mut cross_skew = [0.0; 2];
        let mut cross_skew_se = [f64::NAN; 2];
        for c in 0..2 {
            let rms3 = (squares[c] as f64 / n_cross).powf(1.5);
            if rms3 > 0.0 {
                cross_skew[c] = third.mean[c] / rms3;
                cross_skew_se[c] = third.se[c] / rms3;
            }
        }
        let same_sum = sum(&|t| t.same_sum);
        let cross_sum = sum(&|t| t.cross_sum);
        Decomposition {
            intra,
            overall: ratio_estimate(&overall),
            same: ratio_estimate(&same),
            cross: ratio_estimate(&cross),
            overall_sum: [same_sum[0] + cross_sum[0], same_sum[1] + cross_sum[1]],
            same_sum,
            cross_sum,
            cross_skew,
            cross_skew_se,
        }
    }
}

/// Patch keys and intra-object offset for two template positions.
pub fn patch_keys(template: &Template, a: (usize, usize), b: (usize, usize), patch: usize) -> Result<(Vec<u32>, Vec<u32>, [i64; 2])> {
    if patch % 2 == 0 {
        return Err(Error::precondition("patch_keys", format!("patch size {patch} must be odd")));
    }
    for &(y, x) in &[a, b] {
        if y >= template.size || x >= template.size || template.get(y, x) == 0 {
            return Err(Error::precondition("patch_keys", format!("({y}, {x}) is not an object pixel")));
        }
    }
    let intra = [b.0 as i64 - a.0 as i64, b.1 as i64 - a.1 as i64];
    Ok((template.window(a.0, a.1, patch), template.window(b.0, b.1, patch), intra))
}

pub fn decompose_offsets(template: &Template, a: (usize, usize), b: (usize, usize), patch: usize, scenes: &[TheoryScene]) -> Result<Decomposition> {
    let (ka, kb, intra) = patch_keys(template, a, b, patch)?;
    let mut acc = OffsetAccumulator::default();
    for scene in scenes {
        let index = OccurrenceIndex::build(scene, patch);
        acc.push(scene_tally(scene, &index, &ka, &kb)?);
    }
    if scenes.is_empty() {
        return Err(Error::precondition("decompose_offsets", "no scenes"));
    }
    Ok(acc.finish(intra))
}

/// Mean offset `j - i` over all occurrence pairs of `a` and `b`.
pub fn expected_offset_mc(template: &Template, a: (usize, usize), b: (usize, usize), patch: usize, scenes: &[TheoryScene]) -> Result<OffsetEstimate> {
    Ok(decompose_offsets(template, a, b, patch, scenes)?.overall)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoryConfig {
    pub scenes: usize,
    pub objects: usize,
    /// Odd, so wrapped offsets have no `+-L/2` tie.
    pub canvas: usize,
    pub diameter: usize,
    pub patch: usize,
    pub boundary: Boundary,
    /// Template positions `[ay, ax, by, bx]`.
    pub pairs: Vec<[usize; 4]>,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            scenes: 500,
            objects: 30,
            canvas: 511,
            diameter: 16,
            patch: 3,
            boundary: Boundary::Periodic,
            pairs: vec![[8, 2, 8, 13], [3, 5, 12, 11], [7, 7, 7, 7]],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryRow {
    pub a: (usize, usize),
    pub b: (usize, usize),
    pub decomposition: Decomposition,
}

/// Runs every configured patch pair over the same scenes; scene `k` uses
/// stream `k + 1` of the seed.
pub fn run_theory(config: &TheoryConfig, seed: u64) -> Result<Vec<TheoryRow>> {
    if config.scenes == 0 || config.pairs.is_empty() {
        return Err(Error::Config("theory: need at least one scene and one patch pair".into()));
    }
    let template = Template::disc(config.diameter);
    let keys = config
        .pairs
        .iter()
        .map(|p| patch_keys(&template, (p[0], p[1]), (p[2], p[3]), config.patch))
        .collect::<Result<Vec<_>>>()?;
    let mut accs: Vec<OffsetAccumulator> = vec![OffsetAccumulator::default(); keys.len()];
    for k in 0..config.scenes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64 + 1);
        let scene = place_scene(&template, config.objects, config.canvas, &mut rng, config.boundary)?;
        let index = OccurrenceIndex::build(&scene, config.patch);
        for ((ka, kb, _), acc) in keys.iter().zip(accs.iter_mut()) {
            acc.push(scene_tally(&scene, &index, ka, kb)?);
        }
    }
    Ok(config
        .pairs
        .iter()
        .zip(keys.iter().zip(&accs))
        .map(|(p, ((_, _, intra), acc))| TheoryRow {
            a: (p[0], p[1]),
            b: (p[2], p[3]),
            decomposition: acc.finish(*intra),
        })
        .collect())
}

/// Tab-separated report, one row per patch pair.
pub fn format_theory_report(rows: &[TheoryRow]) -> String {
    let mut out = String::from(
        "a\tb\tintra_y\tintra_x\tsame_y\tsame_x\tcross_y\tcross_x\tcross_se_y\tcross_se_x\toverall_y\toverall_x\toverall_se_y\toverall_se_x\tn_same\tn_cross\n",
    );
    for r in rows {
        let d = &r.decomposition;
        let _ = writeln!(
            out,
            "{},{}\t{},{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}",
            r.a.0,
            r.a.1,
            r.b.0,
            r.b.1,
            d.intra[0],
            d.intra[1],
            d.same.mean[0],
            d.same.mean[1],
            d.cross.mean[0],
            d.cross.mean[1],
            d.cross.se[0],
            d.cross.se[1],
            d.overall.mean[0],
            d.overall.mean[1],
            d.overall.se[0],
            d.overall.se[1],
            d.same.count,
            d.cross.count
        );
    }
    out
}
