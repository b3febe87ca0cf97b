//! Shared test machinery: a finite-difference gradient checker, random
//! instance generators and brute-force oracles.
#![allow(dead_code)]

use std::collections::BTreeSet;

use oce::io::LabelMask;
use oce::loss::{loss_on_tape, LossConfig, PairSet};
use oce::net::{forward_on_tape, ModelConfig, ModelParams};
use oce::tensor::Element;
use oce::{Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Builds a graph from parameter leaves and returns its output.
pub type Build<T> = dyn Fn(&mut Tape<T>, &[Var]) -> Var;

fn projected<T: Element>(inputs: &[Tensor<T>], build: &Build<T>, weights: &[f64]) -> f64 {
    let mut tape = Tape::<T>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = build(&mut tape, &vars);
    tape.value(out).data().iter().zip(weights).map(|(v, w)| v.as_f64() * w).sum()
}

/// Relative error `|g_ad - g_fd| / max(|g_ad|, |g_fd|)` of the gradient of a
/// random projection of the output, over (up to 120 sampled) input elements.
pub fn gradient_error<T: Element>(inputs: &[Tensor<T>], build: &Build<T>, step: f64, rng: &mut impl Rng) -> f64 {
    let mut tape = Tape::<T>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &vars);
    let n_out = tape.value(out).numel();
    let weights: Vec<f64> = (0..n_out).map(|_| rng.random_range(0.5..1.5) * if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
    let seed: Vec<T> = weights.iter().map(|&w| T::from_f64_lossy(w)).collect();
    tape.backward_with(out, seed).expect("backward");
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| match tape.grad(v) {
            Some(g) => g.iter().map(|x| x.as_f64()).collect(),
            None => vec![0.0; t.numel()],
        })
        .collect();
    let mut slots: Vec<(usize, usize)> = inputs.iter().enumerate().flat_map(|(i, t)| (0..t.numel()).map(move |j| (i, j))).collect();
    slots.shuffle(rng);
    slots.truncate(120);
    let (mut diff, mut na, mut nf) = (0.0f64, 0.0f64, 0.0f64);
    for (i, j) in slots {
        let mut work = inputs.to_vec();
        let x = work[i].data()[j].as_f64();
        work[i].data_mut()[j] = T::from_f64_lossy(x + step);
        let up = projected(&work, build, &weights);
        work[i].data_mut()[j] = T::from_f64_lossy(x - step);
        let down = projected(&work, build, &weights);
        // Use the actually representable step at this precision.
        let h = work[i].data()[j].as_f64();
        work[i].data_mut()[j] = T::from_f64_lossy(x + step);
        let h = work[i].data()[j].as_f64() - h;
        let fd = (up - down) / h;
        let ad = analytic[i][j];
        diff += (ad - fd).powi(2);
        na += ad * ad;
        nf += fd * fd;
    }
    diff.sqrt() / na.sqrt().max(nf.sqrt()).max(1e-12)
}

pub fn uniform<T: Element>(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.random_range(lo..hi)))
}

/// Values with magnitude in `[margin, 1]` and random sign.
pub fn away_from_zero<T: Element>(shape: &[usize], margin: f64, rng: &mut impl Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(margin..1.0);
        T::from_f64_lossy(if rng.random_bool(0.5) { m } else { -m })
    })
}

/// A permutation of `0, spacing, 2 * spacing, ...`, so every max is unique by a margin.
pub fn distinct<T: Element>(shape: &[usize], spacing: f64, rng: &mut impl Rng) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(rng);
    Tensor::new(shape.to_vec(), v.into_iter().map(|k| T::from_f64_lossy(k as f64 * spacing - 0.5)).collect()).unwrap()
}

pub fn random_pairs(h: usize, w: usize, n: usize, kappa: f64, rng: &mut impl Rng) -> PairSet {
    let mut anchors = Vec::new();
    let mut partners = Vec::new();
    while anchors.len() < n {
        let a = (rng.random_range(0..h), rng.random_range(0..w));
        let p = (rng.random_range(0..h), rng.random_range(0..w));
        let d2 = (a.0 as f64 - p.0 as f64).powi(2) + (a.1 as f64 - p.1 as f64).powi(2);
        if a != p && d2 <= kappa * kappa {
            anchors.push(a);
            partners.push(p);
        }
    }
    PairSet::new(h, w, anchors, partners).unwrap()
}

/// Every differentiable op and the loss, as `(name, relative error)` for
/// `instances` random cases each. The network itself is included at 64-bit.
pub fn gradient_suite<T: Element>(instances: usize, step: f64, seed: u64) -> Vec<(String, f64)> {
    let mut r = rng(seed);
    let mut results = Vec::new();
    let mut record = |name: &str, errs: Vec<f64>| {
        assert!(errs.len() >= instances);
        results.push((name.to_owned(), errs.into_iter().fold(0.0, f64::max)));
    };

    for k in [3usize, 1] {
        let errs = (0..instances)
            .map(|_| {
                let (c, f) = (r.random_range(1..4), r.random_range(1..4));
                let (h, w) = (r.random_range(k..k + 5), r.random_range(k..k + 5));
                let inputs = vec![uniform::<T>(&[c, h, w], -1.0, 1.0, &mut r), uniform(&[f, c, k, k], -1.0, 1.0, &mut r), uniform(&[f], -1.0, 1.0, &mut r)];
                gradient_error(&inputs, &|t: &mut Tape<T>, v: &[Var]| t.conv2d_valid(v[0], v[1], v[2]).unwrap(), step, &mut r)
            })
            .collect();
        record(&format!("conv2d_valid k={k}"), errs);
    }

    let errs = (0..instances)
        .map(|_| {
            let shape = [r.random_range(1..3), r.random_range(1..6), r.random_range(1..6)];
            let inputs = vec![away_from_zero::<T>(&shape, 0.1, &mut r)];
            gradient_error(&inputs, &|t: &mut Tape<T>, v: &[Var]| t.relu(v[0]), step, &mut r)
        })
        .collect();
    record("relu", errs);

    let errs = (0..instances)
        .map(|_| {
            let shape = [r.random_range(1..3), 2 * r.random_range(1..4), 2 * r.random_range(1..4)];
            let inputs = vec![distinct::<T>(&shape, 0.05, &mut r)];
            gradient_error(&inputs, &|t: &mut Tape<T>, v: &[Var]| t.maxpool2(v[0]).unwrap(), step, &mut r)
        })
        .collect();
    record("maxpool2", errs);

    let errs = (0..instances)
        .map(|_| {
            let shape = [r.random_range(1..3), r.random_range(1..5), r.random_range(1..5)];
            let inputs = vec![uniform::<T>(&shape, -1.0, 1.0, &mut r)];
            gradient_error(&inputs, &|t: &mut Tape<T>, v: &[Var]| t.upsample_nearest2(v[0]).unwrap(), step, &mut r)
        })
        .collect();
    record("upsample_nearest2", errs);

    let errs = (0..instances)
        .map(|_| {
            let (h, w) = (r.random_range(1..5), r.random_range(1..5));
            let skip = [r.random_range(1..3), h + r.random_range(0..4), w + r.random_range(0..4)];
            let inputs = vec![uniform::<T>(&skip, -1.0, 1.0, &mut r), uniform(&[r.random_range(1..3), h, w], -1.0, 1.0, &mut r)];
            gradient_error(&inputs, &|t: &mut Tape<T>, v: &[Var]| t.crop_concat(v[0], v[1]).unwrap(), step, &mut r)
        })
        .collect();
    record("crop_concat", errs);

    let errs = (0..instances)
        .map(|_| {
            let (c, h, w) = (r.random_range(1..3), r.random_range(1..6), r.random_range(1..6));
            let coords: Vec<(usize, usize)> = (0..r.random_range(1..12)).map(|_| (r.random_range(0..h), r.random_range(0..w))).collect();
            let inputs = vec![uniform::<T>(&[c, h, w], -1.0, 1.0, &mut r)];
            gradient_error(&inputs, &move |t: &mut Tape<T>, v: &[Var]| t.gather_coords(v[0], &coords).unwrap(), step, &mut r)
        })
        .collect();
    record("gather_coords", errs);

    let errs = (0..instances)
        .map(|_| {
            let n = r.random_range(1..10);
            let offsets: Vec<[f64; 2]> = (0..n).map(|_| [r.random_range(-5.0..5.0), r.random_range(-5.0..5.0)]).collect();
            let (tau, lambda) = (r.random_range(1.0..20.0), r.random_range(0.0..0.5));
            let inputs = vec![away_from_zero::<T>(&[n, 2], 0.2, &mut r), uniform(&[n, 2], -3.0, 3.0, &mut r)];
            gradient_error(&inputs, &move |t: &mut Tape<T>, v: &[Var]| t.pair_loss(v[0], v[1], &offsets, tau, lambda).unwrap(), step, &mut r)
        })
        .collect();
    record("pair_loss", errs);

    let errs = (0..instances)
        .map(|_| {
            let pairs = random_pairs(30, 30, 20, 10.0, &mut r);
            let cfg = LossConfig { lambda_reg: r.random_range(0.0..0.1), ..Default::default() };
            let inputs = vec![uniform::<T>(&[2, 30, 30], -4.0, 4.0, &mut r)];
            gradient_error(&inputs, &move |t: &mut Tape<T>, v: &[Var]| loss_on_tape(t, v[0], &pairs, &cfg).unwrap(), step, &mut r)
        })
        .collect();
    record("oce_loss", errs);

    if std::mem::size_of::<T>() == 8 {
        let cfg = ModelConfig { base_fmaps: 2, fmap_factor: 2, ..Default::default() };
        let errs = (0..instances)
            .map(|_| {
                let params = ModelParams::init(&cfg, r.random()).unwrap();
                let mut inputs: Vec<Tensor<T>> = params.tensors().iter().map(|p| p.cast::<T>()).collect();
                for b in inputs.iter_mut().skip(1).step_by(2) {
                    *b = uniform(b.shape(), 0.0, 0.2, &mut r);
                }
                inputs.push(uniform(&[1, 24, 24], 0.0, 1.0, &mut r));
                let cfg = cfg.clone();
                gradient_error(
                    &inputs,
                    &move |t: &mut Tape<T>, v: &[Var]| {
                        let (image, params) = v.split_last().unwrap();
                        forward_on_tape(&cfg, t, params, *image).unwrap()
                    },
                    // Thousands of ReLUs: keep the chance of stepping across a kink small.
                    step * 1e-2,
                    &mut r,
                )
            })
            .collect();
        record("unet forward", errs);
    }
    results
}

/// Exhaustive Otsu: every one of the 255 inner bin boundaries, classes
/// `v <= t` and `v > t`, between-class variance from raw values. Lowest
/// boundary wins ties.
pub fn otsu_oracle(values: &[f64]) -> f64 {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut best = (f64::NEG_INFINITY, 0.0);
    for k in 1..256 {
        let t = lo + k as f64 * ((hi - lo) / 256.0);
        let low: Vec<f64> = values.iter().copied().filter(|&v| v <= t).collect();
        let high: Vec<f64> = values.iter().copied().filter(|&v| v > t).collect();
        if low.is_empty() || high.is_empty() {
            continue;
        }
        let n = values.len() as f64;
        let m0 = low.iter().sum::<f64>() / low.len() as f64;
        let m1 = high.iter().sum::<f64>() / high.len() as f64;
        let between = (low.len() as f64 / n) * (high.len() as f64 / n) * (m0 - m1).powi(2);
        if between > best.0 * (1.0 + 1e-12) {
            best = (between, t);
        }
    }
    best.1
}

pub struct BruteModes {
    pub modes: Vec<[f64; 2]>,
    pub assignment: Vec<usize>,
}

/// Flat-kernel mean-shift with linear scans everywhere.
pub fn mean_shift_oracle(points: &[[f64; 2]], bw: f64) -> BruteModes {
    let d2 = |a: &[f64; 2], b: &[f64; 2]| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
    let seeds: BTreeSet<(i64, i64)> = points.iter().map(|p| ((p[0] / bw).round() as i64, (p[1] / bw).round() as i64)).collect();
    let mut found = Vec::new();
    for (sy, sx) in seeds {
        let mut mean = [sy as f64 * bw, sx as f64 * bw];
        let mut support = 0;
        for _ in 0..300 {
            let near: Vec<&[f64; 2]> = points.iter().filter(|p| d2(p, &mean) <= bw * bw).collect();
            if near.is_empty() {
                break;
            }
            let mut next = [0.0, 0.0];
            for p in &near {
                next[0] += p[0];
                next[1] += p[1];
            }
            next = [next[0] / near.len() as f64, next[1] / near.len() as f64];
            let shift = d2(&next, &mean).sqrt();
            mean = next;
            support = near.len();
            if shift < 1e-3 * bw {
                break;
            }
        }
        if support > 0 {
            found.push((mean, support));
        }
    }
    found.sort_by(|a, b| b.1.cmp(&a.1).then(a.0[0].total_cmp(&b.0[0])).then(a.0[1].total_cmp(&b.0[1])));
    let mut modes: Vec<[f64; 2]> = Vec::new();
    for (m, _) in found {
        if modes.iter().all(|k| d2(k, &m) >= bw * bw) {
            modes.push(m);
        }
    }
    let assignment = points
        .iter()
        .map(|p| {
            let mut best = 0;
            for k in 1..modes.len() {
                if d2(p, &modes[k]) < d2(p, &modes[best]) {
                    best = k;
                }
            }
            best
        })
        .collect();
    BruteModes { modes, assignment }
}

/// Planted Gaussian-ish clusters, at most 200 points.
pub fn planted_clusters(rng: &mut impl Rng) -> (Vec<[f64; 2]>, f64) {
    let k = rng.random_range(1..6);
    let mut centers: Vec<[f64; 2]> = Vec::new();
    while centers.len() < k {
        let c = [rng.random_range(0.0..60.0), rng.random_range(0.0..60.0)];
        if centers.iter().all(|o| (o[0] - c[0]).hypot(o[1] - c[1]) > 12.0) {
            centers.push(c);
        }
    }
    let mut pts = Vec::new();
    for c in &centers {
        for _ in 0..rng.random_range(5..40) {
            pts.push([c[0] + rng.random_range(-2.0..2.0), c[1] + rng.random_range(-2.0..2.0)]);
        }
    }
    (pts, rng.random_range(2.0..5.0))
}

/// Maximum-cardinality one-to-one matching over pairs with IoU `>= t`,
/// largest IoU sum among those; returned sorted.
pub fn exhaustive_matching(iou: &[Vec<f64>], t: f64) -> Vec<(usize, usize)> {
    fn go(g: usize, iou: &[Vec<f64>], t: f64, used: &mut Vec<bool>, cur: &mut Vec<(usize, usize)>, best: &mut (usize, f64, Vec<(usize, usize)>)) {
        if g == iou.len() {
            let s: f64 = cur.iter().map(|&(a, b)| iou[a][b]).sum();
            if cur.len() > best.0 || (cur.len() == best.0 && s > best.1) {
                *best = (cur.len(), s, cur.clone());
            }
            return;
        }
        go(g + 1, iou, t, used, cur, best);
        for p in 0..used.len() {
            if !used[p] && iou[g][p] >= t && iou[g][p] > 0.0 {
                used[p] = true;
                cur.push((g, p));
                go(g + 1, iou, t, used, cur, best);
                cur.pop();
                used[p] = false;
            }
        }
    }
    let n_pred = iou.first().map_or(0, Vec::len);
    let mut best = (0, f64::NEG_INFINITY, Vec::new());
    go(0, iou, t, &mut vec![false; n_pred], &mut Vec::new(), &mut best);
    let mut pairs = best.2;
    pairs.sort();
    pairs
}

/// IoU by direct pixel counting, rows gt ids ascending, columns pred ids ascending.
pub fn iou_by_counting(gt: &LabelMask, pred: &LabelMask) -> Vec<Vec<f64>> {
    let (gi, pi) = (gt.ids(), pred.ids());
    gi.iter()
        .map(|&g| {
            pi.iter()
                .map(|&p| {
                    let inter = gt.data().iter().zip(pred.data()).filter(|(&a, &b)| a == g && b == p).count();
                    let union = gt.data().iter().zip(pred.data()).filter(|(&a, &b)| a == g || b == p).count();
                    inter as f64 / union as f64
                })
                .collect()
        })
        .collect()
}

/// Random rectangles painted in order; later ones overwrite earlier ones.
pub fn random_rects(h: usize, w: usize, n: usize, rng: &mut impl Rng) -> LabelMask {
    let mut m = LabelMask::zeros(h, w);
    for id in 1..=n as u32 {
        let (y0, x0) = (rng.random_range(0..h), rng.random_range(0..w));
        let (y1, x1) = ((y0 + rng.random_range(1..5)).min(h), (x0 + rng.random_range(1..5)).min(w));
        for y in y0..y1 {
            for x in x0..x1 {
                m.set(y, x, id);
            }
        }
    }
    m
}

/// A copy of `m` with some pixels flipped to random ids.
pub fn perturb(m: &LabelMask, flips: usize, max_id: u32, rng: &mut impl Rng) -> LabelMask {
    let mut out = m.clone();
    for _ in 0..flips {
        let (y, x) = (rng.random_range(0..m.height()), rng.random_range(0..m.width()));
        out.set(y, x, rng.random_range(0..=max_id));
    }
    out
}
