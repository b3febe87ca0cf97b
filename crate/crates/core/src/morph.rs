//! Exact Euclidean distance transform (separable lower-envelope method).

const FAR: f64 = 1e20;

/// 1D squared distance transform of `f` in place; `v` and `z` are scratch.
fn dt1d(f: &mut [f64], v: &mut Vec<usize>, z: &mut Vec<f64>, out: &mut Vec<f64>) {
    let n = f.len();
    if n == 0 {
        return;
    }
    v.clear();
    z.clear();
    out.clear();
    v.resize(n, 0);
    z.resize(n + 1, 0.0);
    out.resize(n, 0.0);
    let parabola = |f: &[f64], q: usize, p: usize| {
        ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64))
    };
    let mut k = 0usize;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let mut s = parabola(f, q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = parabola(f, q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let d = q as f64 - p as f64;
        *o = d * d + f[p];
    }
    f.copy_from_slice(out);
}

/// Squared Euclidean distance from every pixel of an `h x w` grid to the
/// nearest pixel where `feature` is true. Grids without features yield a
/// huge sentinel (> 1e19) everywhere.
pub fn squared_edt(height: usize, width: usize, feature: impl Fn(usize) -> bool) -> Vec<f64> {
    let mut d: Vec<f64> = (0..height * width).map(|i| if feature(i) { 0.0 } else { FAR }).collect();
    let (mut v, mut z, mut out) = (Vec::new(), Vec::new(), Vec::new());
    let mut col = vec![0.0; height];
    for x in 0..width {
        for y in 0..height {
            col[y] = d[y * width + x];
        }
        dt1d(&mut col, &mut v, &mut z, &mut out);
        for y in 0..height {
            d[y * width + x] = col[y];
        }
    }
    for y in 0..height {
        dt1d(&mut d[y * width..(y + 1) * width], &mut v, &mut z, &mut out);
    }
    d
}
