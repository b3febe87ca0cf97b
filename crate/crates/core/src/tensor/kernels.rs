//! Slice-level forward/backward kernels. Shapes are validated by the tape.

use super::Element;

/// Upper bound on the number of elements in one im2col buffer.
const COLS_BUDGET: usize = 1 << 23;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub f: usize,
    pub k: usize,
}

impl ConvDims {
    pub fn ho(&self) -> usize {
        self.h - self.k + 1
    }

    pub fn wo(&self) -> usize {
        self.w - self.k + 1
    }

    fn ckk(&self) -> usize {
        self.c * self.k * self.k
    }

    fn rows_per_chunk(&self) -> usize {
        (COLS_BUDGET / (self.ckk() * self.wo()).max(1)).clamp(1, self.ho())
    }
}

fn im2col<T: Element>(x: &[T], d: ConvDims, y0: usize, y1: usize, cols: &mut Vec<T>) {
    let (wo, k) = (d.wo(), d.k);
    let n = (y1 - y0) * wo;
    cols.clear();
    cols.reserve(d.ckk() * n);
    for c in 0..d.c {
        for ky in 0..k {
            for kx in 0..k {
                for oy in y0..y1 {
                    let start = (c * d.h + oy + ky) * d.w + kx;
                    cols.extend_from_slice(&x[start..start + wo]);
                }
            }
        }
    }
}

fn col2im_add<T: Element>(cols: &[T], d: ConvDims, y0: usize, y1: usize, dx: &mut [T]) {
    let (wo, k) = (d.wo(), d.k);
    let mut src = 0;
    for c in 0..d.c {
        for ky in 0..k {
            for kx in 0..k {
                for oy in y0..y1 {
                    let start = (c * d.h + oy + ky) * d.w + kx;
                    for (o, v) in dx[start..start + wo].iter_mut().zip(&cols[src..src + wo]) {
                        *o += *v;
                    }
                    src += wo;
                }
            }
        }
    }
}

/// Valid cross-correlation, `x: [C,H,W]`, `wt: [F,C,k,k]`, `bias: [F]`.
pub(crate) fn conv_forward<T: Element>(x: &[T], wt: &[T], bias: &[T], d: ConvDims) -> Vec<T> {
    let (ho, wo) = (d.ho(), d.wo());
    let plane = ho * wo;
    let mut out = vec![T::zero(); d.f * plane];
    if d.k == 1 {
        T::gemm(d.f, d.c, plane, wt, false, x, false, &mut out, false);
    } else {
        let step = d.rows_per_chunk();
        let mut cols = Vec::new();
        let mut tmp = Vec::new();
        let mut y0 = 0;
        while y0 < ho {
            let y1 = (y0 + step).min(ho);
            let n = (y1 - y0) * wo;
            im2col(x, d, y0, y1, &mut cols);
            tmp.clear();
            tmp.resize(d.f * n, T::zero());
            T::gemm(d.f, d.ckk(), n, wt, false, &cols, false, &mut tmp, false);
            for f in 0..d.f {
                out[f * plane + y0 * wo..f * plane + y1 * wo].copy_from_slice(&tmp[f * n..(f + 1) * n]);
            }
            y0 = y1;
        }
    }
    for (f, &b) in bias.iter().enumerate() {
        out[f * plane..(f + 1) * plane].iter_mut().for_each(|v| *v = *v + b);
    }
    out
}

/// Accumulates gradients of a valid convolution. `dx` is skipped when `None`.
pub(crate) fn conv_backward<T: Element>(
    x: &[T],
    wt: &[T],
    dy: &[T],
    d: ConvDims,
    dx: Option<&mut [T]>,
    dw: &mut [T],
    db: &mut [T],
) {
    let (ho, wo) = (d.ho(), d.wo());
    let plane = ho * wo;
    for (f, g) in db.iter_mut().enumerate() {
        let s: T = dy[f * plane..(f + 1) * plane].iter().copied().sum();
        *g += s;
    }
    if d.k == 1 {
        T::gemm(d.f, plane, d.c, dy, false, x, true, dw, true);
        if let Some(dx) = dx {
            T::gemm(d.c, d.f, plane, wt, true, dy, false, dx, true);
        }
        return;
    }
    let step = d.rows_per_chunk();
    let mut cols = Vec::new();
    let mut dy_chunk = Vec::new();
    let mut dx = dx;
    let mut y0 = 0;
    while y0 < ho {
        let y1 = (y0 + step).min(ho);
        let n = (y1 - y0) * wo;
        dy_chunk.clear();
        for f in 0..d.f {
            dy_chunk.extend_from_slice(&dy[f * plane + y0 * wo..f * plane + y1 * wo]);
        }
        im2col(x, d, y0, y1, &mut cols);
        T::gemm(d.f, n, d.ckk(), &dy_chunk, false, &cols, true, dw, true);
        if let Some(dx) = dx.as_deref_mut() {
            T::gemm(d.ckk(), d.f, n, wt, true, &dy_chunk, false, &mut cols, false);
            col2im_add(&cols, d, y0, y1, dx);
        }
        y0 = y1;
    }
}

/// 2x2 max pooling; returns values and the flat input index of each maximum.
/// Ties resolve to the first maximum in row-major order.
pub(crate) fn maxpool2_forward<T: Element>(x: &[T], c: usize, h: usize, w: usize) -> (Vec<T>, Vec<u32>) {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * ho * wo);
    let mut arg = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        for y in 0..ho {
            for xx in 0..wo {
                let base = (ch * h + 2 * y) * w + 2 * xx;
                let mut best = base;
                for idx in [base + 1, base + w, base + w + 1] {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

pub(crate) fn upsample2_forward<T: Element>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = Vec::with_capacity(c * ho * wo);
    let mut row = Vec::with_capacity(wo);
    for ch in 0..c {
        for y in 0..h {
            row.clear();
            for &v in &x[(ch * h + y) * w..(ch * h + y + 1) * w] {
                row.push(v);
                row.push(v);
            }
            out.extend_from_slice(&row);
            out.extend_from_slice(&row);
        }
    }
    out
}

pub(crate) fn upsample2_backward<T: Element>(dy: &[T], c: usize, h: usize, w: usize, dx: &mut [T]) {
    let wo = 2 * w;
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                let r0 = (ch * 2 * h + 2 * y) * wo + 2 * xx;
                let r1 = r0 + wo;
                dx[(ch * h + y) * w + xx] += dy[r0] + dy[r0 + 1] + dy[r1] + dy[r1 + 1];
            }
        }
    }
}

/// Sigmoid distance `1 / (1 + exp(-|delta|^2 / tau))` in double precision.
pub(crate) fn sigmoid_distance(dy: f64, dx: f64, tau: f64) -> f64 {
    1.0 / (1.0 + (-(dy * dy + dx * dx) / tau).exp())
}

/// Sum over pairs of `sigma(d - (a - b)) + lambda * |a|`.
pub(crate) fn pair_loss_forward<T: Element>(a: &[T], b: &[T], offsets: &[[f64; 2]], tau: f64, lambda: f64) -> f64 {
    let mut total = 0.0;
    for (n, d) in offsets.iter().enumerate() {
        let (ay, ax) = (a[2 * n].as_f64(), a[2 * n + 1].as_f64());
        let (by, bx) = (b[2 * n].as_f64(), b[2 * n + 1].as_f64());
        total += sigmoid_distance(d[0] - (ay - by), d[1] - (ax - bx), tau);
        if lambda != 0.0 {
            total += lambda * (ay * ay + ax * ax).sqrt();
        }
    }
    total
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn pair_loss_backward<T: Element>(
    a: &[T],
    b: &[T],
    offsets: &[[f64; 2]],
    tau: f64,
    lambda: f64,
    upstream: f64,
    da: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let mut da = da;
    let mut db = db;
    for (n, d) in offsets.iter().enumerate() {
        let (ay, ax) = (a[2 * n].as_f64(), a[2 * n + 1].as_f64());
        let (by, bx) = (b[2 * n].as_f64(), b[2 * n + 1].as_f64());
        let ry = d[0] - (ay - by);
        let rx = d[1] - (ax - bx);
        let s = sigmoid_distance(ry, rx, tau);
        // d sigma / d residual
        let scale = upstream * s * (1.0 - s) * 2.0 / tau;
        let (gy, gx) = (scale * ry, scale * rx);
        if let Some(da) = da.as_deref_mut() {
            let mut ga = [-gy, -gx];
            let norm = (ay * ay + ax * ax).sqrt();
            if lambda != 0.0 && norm > 0.0 {
                ga[0] += upstream * lambda * ay / norm;
                ga[1] += upstream * lambda * ax / norm;
            }
            da[2 * n] += T::from_f64_lossy(ga[0]);
            da[2 * n + 1] += T::from_f64_lossy(ga[1]);
        }
        if let Some(db) = db.as_deref_mut() {
            db[2 * n] += T::from_f64_lossy(gy);
            db[2 * n + 1] += T::from_f64_lossy(gx);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], wt: &[f64], bias: &[f64], d: ConvDims) -> Vec<f64> {
        let (ho, wo) = (d.ho(), d.wo());
        let mut out = vec![0.0; d.f * ho * wo];
        for f in 0..d.f {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut s = bias[f];
                    for c in 0..d.c {
                        for ky in 0..d.k {
                            for kx in 0..d.k {
                                s += x[(c * d.h + oy + ky) * d.w + ox + kx]
                                    * wt[((f * d.c + c) * d.k + ky) * d.k + kx];
                            }
                        }
                    }
                    out[(f * ho + oy) * wo + ox] = s;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_loops() {
        for k in [1, 3] {
            let d = ConvDims { c: 3, h: 7, w: 6, f: 4, k };
            let x: Vec<f64> = (0..d.c * d.h * d.w).map(|i| (i as f64 * 0.13).sin()).collect();
            let wt: Vec<f64> = (0..d.f * d.c * k * k).map(|i| (i as f64 * 0.29).cos()).collect();
            let bias = vec![0.1, -0.2, 0.3, 0.0];
            let got = conv_forward(&x, &wt, &bias, d);
            let want = naive_conv(&x, &wt, &bias, d);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn maxpool_tie_goes_to_first() {
        let x = [5.0f32, 5.0, 5.0, 5.0];
        let (v, arg) = maxpool2_forward(&x, 1, 2, 2);
        assert_eq!(v, vec![5.0]);
        assert_eq!(arg, vec![0]);
    }
}
