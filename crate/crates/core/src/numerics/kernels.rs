//! Batched forward/backward kernels. Activations are `[N, C, D, H, W]`
//! row-major with `D = 1` for 2D data.

use super::tensor::{gemm, Mat, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Dims {
    pub c: usize,
    pub d: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn from_sample_shape(shape: &[usize]) -> Dims {
        match *shape {
            [c] => Dims { c, d: 1, h: 1, w: 1 },
            [c, h, w] => Dims { c, d: 1, h, w },
            [c, d, h, w] => Dims { c, d, h, w },
            _ => panic!("unsupported sample shape {shape:?}"),
        }
    }

    pub fn spatial(&self) -> usize {
        self.d * self.h * self.w
    }

    pub fn len(&self) -> usize {
        self.c * self.spatial()
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl ConvGeom {
    pub fn k(&self) -> usize {
        self.cin * self.kernel.iter().product::<usize>()
    }

    pub fn out_dims(&self, inp: Dims) -> Dims {
        let ext = |n: usize, i: usize| (n + 2 * self.pad[i] - self.kernel[i]) / self.stride[i] + 1;
        Dims {
            c: self.cout,
            d: ext(inp.d, 0),
            h: ext(inp.h, 1),
            w: ext(inp.w, 2),
        }
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.stride == [1, 1, 1] && self.pad == [0, 0, 0]
    }
}

/// Output positions `o` in `[lo, hi)` for which `o * s + k - p` lies in `[0, n)`.
#[inline]
fn valid_range(n: usize, out: usize, k: usize, s: usize, p: usize) -> (usize, usize) {
    let lo = if p > k { (p - k).div_ceil(s) } else { 0 };
    let hi = if n + p > k {
        ((n - 1 + p - k) / s + 1).min(out)
    } else {
        0
    };
    (lo.min(out), hi.max(lo.min(out)))
}

fn im2col<T: Real>(g: &ConvGeom, inp: Dims, out: Dims, x: &[T], col: &mut [T]) {
    let p = out.spatial();
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.pad;
    let mut row = 0;
    for c in 0..inp.c {
        let xc = &x[c * inp.spatial()..(c + 1) * inp.spatial()];
        for a in 0..kd {
            let (d_lo, d_hi) = valid_range(inp.d, out.d, a, sd, pd);
            for b in 0..kh {
                let (h_lo, h_hi) = valid_range(inp.h, out.h, b, sh, ph);
                for e in 0..kw {
                    let (w_lo, w_hi) = valid_range(inp.w, out.w, e, sw, pw);
                    let dst_row = &mut col[row * p..(row + 1) * p];
                    for od in 0..out.d {
                        let plane = &mut dst_row[od * out.h * out.w..(od + 1) * out.h * out.w];
                        if od < d_lo || od >= d_hi {
                            plane.fill(T::zero());
                            continue;
                        }
                        let id = od * sd + a - pd;
                        for oh in 0..out.h {
                            let dst = &mut plane[oh * out.w..(oh + 1) * out.w];
                            if oh < h_lo || oh >= h_hi {
                                dst.fill(T::zero());
                                continue;
                            }
                            let ih = oh * sh + b - ph;
                            let src = &xc[(id * inp.h + ih) * inp.w..(id * inp.h + ih + 1) * inp.w];
                            dst[..w_lo].fill(T::zero());
                            dst[w_hi..].fill(T::zero());
                            if sw == 1 {
                                let start = w_lo + e - pw;
                                dst[w_lo..w_hi].copy_from_slice(&src[start..start + (w_hi - w_lo)]);
                            } else {
                                for ow in w_lo..w_hi {
                                    dst[ow] = src[ow * sw + e - pw];
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn col2im<T: Real>(g: &ConvGeom, inp: Dims, out: Dims, col: &[T], dx: &mut [T]) {
    let p = out.spatial();
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.pad;
    let mut row = 0;
    for c in 0..inp.c {
        let dxc = &mut dx[c * inp.spatial()..(c + 1) * inp.spatial()];
        for a in 0..kd {
            let (d_lo, d_hi) = valid_range(inp.d, out.d, a, sd, pd);
            for b in 0..kh {
                let (h_lo, h_hi) = valid_range(inp.h, out.h, b, sh, ph);
                for e in 0..kw {
                    let (w_lo, w_hi) = valid_range(inp.w, out.w, e, sw, pw);
                    let src_row = &col[row * p..(row + 1) * p];
                    for od in d_lo..d_hi {
                        let id = od * sd + a - pd;
                        for oh in h_lo..h_hi {
                            let ih = oh * sh + b - ph;
                            let src = &src_row[(od * out.h + oh) * out.w..(od * out.h + oh + 1) * out.w];
                            let dst = &mut dxc[(id * inp.h + ih) * inp.w..(id * inp.h + ih + 1) * inp.w];
                            if sw == 1 {
                                let start = w_lo + e - pw;
                                for (d, &v) in dst[start..start + (w_hi - w_lo)].iter_mut().zip(&src[w_lo..w_hi]) {
                                    *d += v;
                                }
                            } else {
                                for ow in w_lo..w_hi {
                                    dst[ow * sw + e - pw] += src[ow];
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

pub(crate) fn conv_forward<T: Real>(
    g: &ConvGeom,
    inp: Dims,
    n: usize,
    x: &[T],
    weight: &[T],
    bias: Option<&[T]>,
) -> Vec<T> {
    let out = g.out_dims(inp);
    let (k, p) = (g.k(), out.spatial());
    let mut y = vec![T::zero(); n * out.len()];
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); k * p] };
    for s in 0..n {
        let xs = &x[s * inp.len()..(s + 1) * inp.len()];
        let ys = &mut y[s * out.len()..(s + 1) * out.len()];
        let cols: &[T] = if g.is_pointwise() {
            xs
        } else {
            im2col(g, inp, out, xs, &mut col);
            &col
        };
        gemm(Mat::new(weight, g.cout, k), Mat::new(cols, k, p), T::zero(), ys);
        if let Some(b) = bias {
            for (o, row) in ys.chunks_exact_mut(p).enumerate() {
                row.iter_mut().for_each(|v| *v += b[o]);
            }
        }
    }
    y
}

/// Accumulates parameter gradients and returns the input gradient when
/// `want_dx` is set.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward<T: Real>(
    g: &ConvGeom,
    inp: Dims,
    n: usize,
    x: &[T],
    weight: &[T],
    dy: &[T],
    mut dweight: Option<&mut [T]>,
    mut dbias: Option<&mut [T]>,
    want_dx: bool,
) -> Option<Vec<T>> {
    let out = g.out_dims(inp);
    let (k, p) = (g.k(), out.spatial());
    let pointwise = g.is_pointwise();
    let mut col = if pointwise || dweight.is_none() {
        Vec::new()
    } else {
        vec![T::zero(); k * p]
    };
    let mut dcol = if want_dx && !pointwise {
        vec![T::zero(); k * p]
    } else {
        Vec::new()
    };
    let mut dx = if want_dx {
        vec![T::zero(); n * inp.len()]
    } else {
        Vec::new()
    };
    for s in 0..n {
        let xs = &x[s * inp.len()..(s + 1) * inp.len()];
        let dys = &dy[s * out.len()..(s + 1) * out.len()];
        if let Some(dw) = dweight.as_deref_mut() {
            let cols: &[T] = if pointwise {
                xs
            } else {
                im2col(g, inp, out, xs, &mut col);
                &col
            };
            gemm(Mat::new(dys, g.cout, p), Mat::new(cols, k, p).t(), T::one(), dw);
        }
        if let Some(db) = dbias.as_deref_mut() {
            for (o, row) in dys.chunks_exact(p).enumerate() {
                db[o] += row.iter().copied().sum::<T>();
            }
        }
        if want_dx {
            let dxs = &mut dx[s * inp.len()..(s + 1) * inp.len()];
            if pointwise {
                gemm(Mat::new(weight, g.cout, k).t(), Mat::new(dys, g.cout, p), T::zero(), dxs);
            } else {
                gemm(Mat::new(weight, g.cout, k).t(), Mat::new(dys, g.cout, p), T::zero(), &mut dcol);
                col2im(g, inp, out, &dcol, dxs);
            }
        }
    }
    want_dx.then_some(dx)
}

/// Per-channel statistics used to normalize one batch-norm invocation.
#[derive(Clone, Debug)]
pub(crate) struct BnStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub invstd: Vec<f64>,
    /// True when the statistics were computed from the batch.
    pub from_batch: bool,
}

/// Sum of `f(x)` at 64-bit precision with independent partial sums, so the
/// loop pipelines instead of serializing on one accumulator.
#[inline]
fn lane_sum<T: Real>(x: &[T], f: impl Fn(f64) -> f64) -> f64 {
    let mut acc = [0.0f64; 8];
    let chunks = x.chunks_exact(8);
    let tail = chunks.remainder();
    for ch in chunks {
        for (a, &v) in acc.iter_mut().zip(ch) {
            *a += f(v.as_f64());
        }
    }
    let mut total: f64 = acc.iter().sum();
    for &v in tail {
        total += f(v.as_f64());
    }
    total
}

#[inline]
fn lane_dot<T: Real>(x: &[T], y: &[T], f: impl Fn(f64, f64) -> f64) -> f64 {
    let mut acc = [0.0f64; 8];
    let cx = x.chunks_exact(8);
    let cy = y.chunks_exact(8);
    let (tx, ty) = (cx.remainder(), cy.remainder());
    for (a8, b8) in cx.zip(cy) {
        for ((a, &u), &v) in acc.iter_mut().zip(a8).zip(b8) {
            *a += f(u.as_f64(), v.as_f64());
        }
    }
    let mut total: f64 = acc.iter().sum();
    for (&u, &v) in tx.iter().zip(ty) {
        total += f(u.as_f64(), v.as_f64());
    }
    total
}

pub(crate) fn bn_batch_stats<T: Real>(x: &[T], n: usize, c: usize, s: usize, eps: f64) -> BnStats {
    let m = (n * s) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut acc = 0.0;
        for i in 0..n {
            let base = (i * c + ch) * s;
            acc += lane_sum(&x[base..base + s], |v| v);
        }
        let mu = acc / m;
        let mut sq = 0.0;
        for i in 0..n {
            let base = (i * c + ch) * s;
            sq += lane_sum(&x[base..base + s], |v| (v - mu) * (v - mu));
        }
        mean[ch] = mu;
        var[ch] = sq / m;
    }
    let invstd = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    BnStats {
        mean,
        var,
        invstd,
        from_batch: true,
    }
}

pub(crate) fn bn_running_stats<T: Real>(mean: &[T], var: &[T], eps: f64) -> BnStats {
    let mean: Vec<f64> = mean.iter().map(|v| v.as_f64()).collect();
    let var: Vec<f64> = var.iter().map(|v| v.as_f64()).collect();
    let invstd = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    BnStats {
        mean,
        var,
        invstd,
        from_batch: false,
    }
}

pub(crate) fn bn_apply<T: Real>(
    x: &[T],
    n: usize,
    c: usize,
    s: usize,
    stats: &BnStats,
    gamma: &[T],
    beta: &[T],
) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    for ch in 0..c {
        let scale = T::of_f64(gamma[ch].as_f64() * stats.invstd[ch]);
        let shift = T::of_f64(beta[ch].as_f64() - gamma[ch].as_f64() * stats.invstd[ch] * stats.mean[ch]);
        for i in 0..n {
            let base = (i * c + ch) * s;
            for (yo, &xi) in y[base..base + s].iter_mut().zip(&x[base..base + s]) {
                *yo = xi * scale + shift;
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn bn_backward<T: Real>(
    x: &[T],
    dy: &[T],
    n: usize,
    c: usize,
    s: usize,
    stats: &BnStats,
    gamma: &[T],
    dgamma: Option<&mut [T]>,
    dbeta: Option<&mut [T]>,
    want_dx: bool,
) -> Option<Vec<T>> {
    let m = (n * s) as f64;
    let mut sum_dy = vec![0.0f64; c];
    let mut sum_dy_xhat = vec![0.0f64; c];
    for ch in 0..c {
        let (mu, is) = (stats.mean[ch], stats.invstd[ch]);
        let (mut a, mut b) = (0.0, 0.0);
        for i in 0..n {
            let base = (i * c + ch) * s;
            a += lane_sum(&dy[base..base + s], |g| g);
            b += lane_dot(&dy[base..base + s], &x[base..base + s], |g, xi| g * (xi - mu)) * is;
        }
        sum_dy[ch] = a;
        sum_dy_xhat[ch] = b;
    }
    if let Some(dg) = dgamma {
        for ch in 0..c {
            dg[ch] += T::of_f64(sum_dy_xhat[ch]);
        }
    }
    if let Some(db) = dbeta {
        for ch in 0..c {
            db[ch] += T::of_f64(sum_dy[ch]);
        }
    }
    if !want_dx {
        return None;
    }
    let mut dx = vec![T::zero(); x.len()];
    for ch in 0..c {
        let (mu, is) = (stats.mean[ch], stats.invstd[ch]);
        let g = gamma[ch].as_f64();
        for i in 0..n {
            let base = (i * c + ch) * s;
            let out = &mut dx[base..base + s];
            if stats.from_batch {
                let k = g * is / m;
                let p = T::of_f64(k * m);
                let q = T::of_f64(-k * is * sum_dy_xhat[ch]);
                let r = T::of_f64(-k * sum_dy[ch]);
                let mu = T::of_f64(mu);
                for ((o, &d), &xi) in out.iter_mut().zip(&dy[base..base + s]).zip(&x[base..base + s]) {
                    *o = p * d + q * (xi - mu) + r;
                }
            } else {
                let k = T::of_f64(g * is);
                for (o, &d) in out.iter_mut().zip(&dy[base..base + s]) {
                    *o = d * k;
                }
            }
        }
    }
    Some(dx)
}

/// Max pooling over (H, W) for every (n, c, d) plane. Returns the output and
/// the flat input index of each selected element.
pub(crate) fn maxpool_forward<T: Real>(
    x: &[T],
    n: usize,
    inp: Dims,
    kernel: [usize; 2],
    stride: [usize; 2],
) -> (Vec<T>, Vec<usize>, Dims) {
    let oh = (inp.h - kernel[0]) / stride[0] + 1;
    let ow = (inp.w - kernel[1]) / stride[1] + 1;
    let out = Dims { h: oh, w: ow, ..inp };
    let planes = n * inp.c * inp.d;
    let mut y = Vec::with_capacity(planes * oh * ow);
    let mut idx = Vec::with_capacity(planes * oh * ow);
    for pl in 0..planes {
        let base = pl * inp.h * inp.w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + (i * stride[0]) * inp.w + j * stride[1];
                for a in 0..kernel[0] {
                    for b in 0..kernel[1] {
                        let at = base + (i * stride[0] + a) * inp.w + j * stride[1] + b;
                        if x[at] > x[best] {
                            best = at;
                        }
                    }
                }
                y.push(x[best]);
                idx.push(best);
            }
        }
    }
    (y, idx, out)
}

pub(crate) fn linear_forward<T: Real>(
    x: &[T],
    n: usize,
    inf: usize,
    outf: usize,
    weight: &[T],
    bias: &[T],
) -> Vec<T> {
    let mut y = vec![T::zero(); n * outf];
    for row in y.chunks_exact_mut(outf) {
        row.copy_from_slice(bias);
    }
    gemm(Mat::new(x, n, inf), Mat::new(weight, outf, inf).t(), T::one(), &mut y);
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(g: &ConvGeom, inp: Dims, x: &[f64], w: &[f64]) -> Vec<f64> {
        let out = g.out_dims(inp);
        let mut y = vec![0.0; out.len()];
        for o in 0..g.cout {
            for od in 0..out.d {
                for oh in 0..out.h {
                    for ow in 0..out.w {
                        let mut acc = 0.0;
                        for c in 0..g.cin {
                            for a in 0..g.kernel[0] {
                                for b in 0..g.kernel[1] {
                                    for e in 0..g.kernel[2] {
                                        let id = (od * g.stride[0] + a) as isize - g.pad[0] as isize;
                                        let ih = (oh * g.stride[1] + b) as isize - g.pad[1] as isize;
                                        let iw = (ow * g.stride[2] + e) as isize - g.pad[2] as isize;
                                        if id < 0 || ih < 0 || iw < 0 {
                                            continue;
                                        }
                                        let (id, ih, iw) = (id as usize, ih as usize, iw as usize);
                                        if id >= inp.d || ih >= inp.h || iw >= inp.w {
                                            continue;
                                        }
                                        let wi = (((o * g.cin + c) * g.kernel[0] + a) * g.kernel[1] + b) * g.kernel[2] + e;
                                        acc += w[wi] * x[((c * inp.d + id) * inp.h + ih) * inp.w + iw];
                                    }
                                }
                            }
                        }
                        y[((o * out.d + od) * out.h + oh) * out.w + ow] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn im2col_conv_matches_nested_loops_for_assorted_geometries() {
        let cases = [
            ([1, 3, 3], [1, 1, 1], [0, 1, 1], Dims { c: 2, d: 1, h: 5, w: 6 }),
            ([1, 3, 3], [1, 2, 2], [0, 1, 1], Dims { c: 2, d: 1, h: 7, w: 5 }),
            ([3, 3, 3], [2, 2, 1], [1, 1, 1], Dims { c: 2, d: 5, h: 4, w: 5 }),
            ([1, 1, 1], [1, 2, 2], [0, 0, 0], Dims { c: 3, d: 1, h: 5, w: 5 }),
            ([1, 5, 2], [1, 1, 3], [0, 2, 0], Dims { c: 1, d: 1, h: 6, w: 8 }),
        ];
        for (kernel, stride, pad, inp) in cases {
            let g = ConvGeom { cin: inp.c, cout: 3, kernel, stride, pad };
            let x: Vec<f64> = (0..inp.len()).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
            let w: Vec<f64> = (0..3 * g.k()).map(|i| ((i * 13 % 7) as f64) * 0.25 - 0.5).collect();
            let fast = conv_forward(&g, inp, 1, &x, &w, None);
            let slow = naive_conv(&g, inp, &x, &w);
            assert_eq!(fast.len(), slow.len());
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-9, "{kernel:?} {stride:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)> for any x, c
        let inp = Dims { c: 2, d: 3, h: 5, w: 4 };
        let g = ConvGeom { cin: 2, cout: 1, kernel: [3, 3, 2], stride: [2, 1, 2], pad: [1, 1, 0] };
        let out = g.out_dims(inp);
        let x: Vec<f64> = (0..inp.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let c: Vec<f64> = (0..g.k() * out.spatial()).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut col = vec![0.0; c.len()];
        im2col(&g, inp, out, &x, &mut col);
        let mut back = vec![0.0; x.len()];
        col2im(&g, inp, out, &c, &mut back);
        let lhs: f64 = col.iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }
}
