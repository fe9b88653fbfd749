use std::rc::Rc;

use super::index::{dims4, IndexMap};
use super::ops::{gemm, gemm_nt};
use super::{Backward, Tensor};

/// Unfolds one `[C, H, W]` plane stack into a `[C·k·k, H·W]` patch matrix with
/// zero padding `k/2` (stride 1, "same" output size).
fn im2col(x: &[f64], c: usize, h: usize, w: usize, k: usize, col: &mut [f64]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ch in 0..c {
        let plane = &x[ch * hw..(ch + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((ch * k + ky) * k + kx) * hw..][..hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                let (x0, x1) = tap_range(w, dx);
                for y in 0..h {
                    let sy = y as isize + dy;
                    let out = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    out[..x0].fill(0.0);
                    out[x1..].fill(0.0);
                    if x1 > x0 {
                        let s0 = (x0 as isize + dx) as usize;
                        out[x0..x1].copy_from_slice(&src[s0..s0 + (x1 - x0)]);
                    }
                }
            }
        }
    }
}

/// Valid output column range `[x0, x1)` for a horizontal tap offset `dx`.
fn tap_range(w: usize, dx: isize) -> (usize, usize) {
    let x0 = (-dx).max(0) as usize;
    let x1 = (w as isize - dx).min(w as isize).max(x0 as isize) as usize;
    (x0, x1)
}

/// Whether the shifted-row kernels beat im2col + gemm for this layer.
fn use_direct(o: usize, w: usize) -> bool {
    w >= 32 && o <= 8
}

#[inline(always)]
fn fmadd<const FMA: bool>(a: f64, b: f64, acc: f64) -> f64 {
    if FMA {
        a.mul_add(b, acc)
    } else {
        acc + a * b
    }
}

#[derive(Clone, Copy)]
struct Geom {
    c: usize,
    o: usize,
    h: usize,
    w: usize,
    k: usize,
}

impl Geom {
    fn pw(&self) -> usize {
        self.w + self.k - 1
    }

    fn ph(&self) -> usize {
        self.h + self.k - 1
    }
}

/// Copies `[C, H, W]` into a zero-bordered `[C, H+k-1, W+k-1]` buffer.
fn pad_planes(x: &[f64], g: &Geom, buf: &mut Vec<f64>) {
    let (pw, ph, p) = (g.pw(), g.ph(), g.k / 2);
    buf.clear();
    buf.resize(g.c * ph * pw, 0.0);
    for ci in 0..g.c {
        for y in 0..g.h {
            let dst = (ci * ph + y + p) * pw + p;
            buf[dst..dst + g.w].copy_from_slice(&x[(ci * g.h + y) * g.w..][..g.w]);
        }
    }
}

/// `out[o] += Σ_c w[o,c] ⋆ x[c]` for one sample, `xp` padded by [`pad_planes`].
#[inline(always)]
fn direct_conv_impl<const FMA: bool>(xp: &[f64], wt: &[f64], g: &Geom, out: &mut [f64]) {
    let Geom { c, o, h, w, k } = *g;
    let (pw, ph) = (g.pw(), g.ph());
    for oi in 0..o {
        for y in 0..h {
            let row = &mut out[(oi * h + y) * w..][..w];
            for ci in 0..c {
                for ky in 0..k {
                    let src = &xp[(ci * ph + y + ky) * pw..][..pw];
                    let taps = &wt[((oi * c + ci) * k + ky) * k..][..k];
                    if k == 3 {
                        let (t0, t1, t2) = (taps[0], taps[1], taps[2]);
                        for (x, r) in row.iter_mut().enumerate() {
                            let v = fmadd::<FMA>(t0, src[x], *r);
                            let v = fmadd::<FMA>(t1, src[x + 1], v);
                            *r = fmadd::<FMA>(t2, src[x + 2], v);
                        }
                    } else {
                        for (kx, &t) in taps.iter().enumerate() {
                            for (r, &v) in row.iter_mut().zip(&src[kx..kx + w]) {
                                *r = fmadd::<FMA>(t, v, *r);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `gw[o,c,ky,kx] += Σ_{y,x} gy[o,y,x]·x[c,y+ky-p,x+kx-p]` for one sample.
#[inline(always)]
fn direct_weight_grad_impl<const FMA: bool>(xp: &[f64], gy: &[f64], g: &Geom, gw: &mut [f64]) {
    let Geom { c, o, h, w, k } = *g;
    let (pw, ph) = (g.pw(), g.ph());
    for oi in 0..o {
        let gp = &gy[oi * h * w..][..h * w];
        for ci in 0..c {
            for ky in 0..k {
                if k == 3 {
                    let mut acc = [[0.0; 8]; 3];
                    let mut tail = [0.0; 3];
                    let body = w / 8 * 8;
                    for y in 0..h {
                        let gr = &gp[y * w..][..w];
                        let src = &xp[(ci * ph + y + ky) * pw..][..w + 2];
                        for x in (0..body).step_by(8) {
                            let a: &[f64; 8] = gr[x..x + 8].try_into().unwrap();
                            let s: &[f64; 10] = src[x..x + 10].try_into().unwrap();
                            for (kx, acc) in acc.iter_mut().enumerate() {
                                for i in 0..8 {
                                    acc[i] = fmadd::<FMA>(a[i], s[i + kx], acc[i]);
                                }
                            }
                        }
                        for x in body..w {
                            for (kx, t) in tail.iter_mut().enumerate() {
                                *t = fmadd::<FMA>(gr[x], src[x + kx], *t);
                            }
                        }
                    }
                    for kx in 0..3 {
                        let a = &acc[kx];
                        let sum = ((a[0] + a[4]) + (a[1] + a[5])) + ((a[2] + a[6]) + (a[3] + a[7]));
                        gw[((oi * c + ci) * k + ky) * k + kx] += sum + tail[kx];
                    }
                    continue;
                }
                for kx in 0..k {
                    let mut acc = [0.0; 8];
                    let mut tail = 0.0;
                    for y in 0..h {
                        let gr = gp[y * w..][..w].chunks_exact(8);
                        let src = xp[(ci * ph + y + ky) * pw + kx..][..w].chunks_exact(8);
                        for (a, b) in gr.remainder().iter().zip(src.remainder()) {
                            tail = fmadd::<FMA>(*a, *b, tail);
                        }
                        for (a, b) in gr.zip(src) {
                            for i in 0..8 {
                                acc[i] = fmadd::<FMA>(a[i], b[i], acc[i]);
                            }
                        }
                    }
                    let sum = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
                    gw[((oi * c + ci) * k + ky) * k + kx] += sum + tail;
                }
            }
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn direct_conv_fma(x: &[f64], wt: &[f64], g: &Geom, out: &mut [f64]) {
    direct_conv_impl::<true>(x, wt, g, out)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn direct_weight_grad_fma(x: &[f64], gy: &[f64], g: &Geom, gw: &mut [f64]) {
    direct_weight_grad_impl::<true>(x, gy, g, gw)
}

fn has_fma() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

fn direct_conv(x: &[f64], wt: &[f64], g: &Geom, out: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    if has_fma() {
        // SAFETY: the required CPU features were detected at runtime.
        return unsafe { direct_conv_fma(x, wt, g, out) };
    }
    direct_conv_impl::<false>(x, wt, g, out)
}

fn direct_weight_grad(x: &[f64], gy: &[f64], g: &Geom, gw: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    if has_fma() {
        // SAFETY: as above.
        return unsafe { direct_weight_grad_fma(x, gy, g, gw) };
    }
    direct_weight_grad_impl::<false>(x, gy, g, gw)
}

struct Conv2d;
impl Backward for Conv2d {
    fn backward(&self, inputs: &[Tensor], _: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        let (x, w) = (&inputs[0], &inputs[1]);
        let k = w.dim(2);
        vec![
            x.requires_grad().then(|| g.conv2d(&w.flip_swap())),
            w.requires_grad().then(|| x.conv2d_weight_grad(g, k)),
        ]
    }
}

struct Conv2dWeightGrad;
impl Backward for Conv2dWeightGrad {
    fn backward(&self, inputs: &[Tensor], _: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        // out[o,c,ky,kx] = Σ gy[n,o,y,x]·xpad[n,c,y+ky-p,x+kx-p]
        let (x, gy) = (&inputs[0], &inputs[1]);
        vec![
            x.requires_grad().then(|| gy.conv2d(&g.flip_swap())),
            gy.requires_grad().then(|| x.conv2d(g)),
        ]
    }
}

impl Tensor {
    /// Stride-1 convolution (cross-correlation) with zero "same" padding.
    /// `self: [N, C, H, W]`, `weight: [O, C, k, k]` with odd `k`.
    pub fn conv2d(&self, weight: &Tensor) -> Tensor {
        let [n, c, h, w] = dims4(self);
        let [o, wc, k, k2] = dims4(weight);
        assert_eq!(c, wc, "conv2d channel mismatch: input {c}, weight {wc}");
        assert!(k == k2 && k % 2 == 1, "conv2d needs square odd kernels");
        let hw = h * w;
        let ck = c * k * k;
        let xd = self.data();
        let mut out = vec![0.0; n * o * hw];
        if use_direct(o, w) {
            let g = Geom { c, o, h, w, k };
            let mut xp = Vec::new();
            for s in 0..n {
                pad_planes(&xd[s * c * hw..(s + 1) * c * hw], &g, &mut xp);
                direct_conv(&xp, weight.data(), &g, &mut out[s * o * hw..(s + 1) * o * hw]);
            }
            return Tensor::from_op(out, vec![n, o, h, w], vec![self.clone(), weight.clone()], Conv2d);
        }
        let mut col = vec![0.0; ck * hw];
        for s in 0..n {
            im2col(&xd[s * c * hw..(s + 1) * c * hw], c, h, w, k, &mut col);
            gemm(o, ck, hw, weight.data(), &col, &mut out[s * o * hw..(s + 1) * o * hw], false);
        }
        Tensor::from_op(out, vec![n, o, h, w], vec![self.clone(), weight.clone()], Conv2d)
    }

    /// Gradient of [`Tensor::conv2d`] with respect to its weight, given the
    /// output gradient `gy: [N, O, H, W]`. Result is `[O, C, k, k]`.
    pub fn conv2d_weight_grad(&self, gy: &Tensor, k: usize) -> Tensor {
        let [n, c, h, w] = dims4(self);
        let [n2, o, h2, w2] = dims4(gy);
        assert!(n == n2 && h == h2 && w == w2, "conv2d_weight_grad shape mismatch");
        let hw = h * w;
        let ck = c * k * k;
        let mut out = vec![0.0; o * ck];
        let xd = self.data();
        let gd = gy.data();
        if use_direct(o, w) {
            let g = Geom { c, o, h, w, k };
            let mut xp = Vec::new();
            for s in 0..n {
                pad_planes(&xd[s * c * hw..(s + 1) * c * hw], &g, &mut xp);
                direct_weight_grad(&xp, &gd[s * o * hw..(s + 1) * o * hw], &g, &mut out);
            }
            return Tensor::from_op(out, vec![o, c, k, k], vec![self.clone(), gy.clone()], Conv2dWeightGrad);
        }
        let mut col = vec![0.0; ck * hw];
        for s in 0..n {
            im2col(&xd[s * c * hw..(s + 1) * c * hw], c, h, w, k, &mut col);
            gemm_nt(o, hw, ck, &gd[s * o * hw..(s + 1) * o * hw], &col, &mut out, s > 0);
        }
        Tensor::from_op(
            out,
            vec![o, c, k, k],
            vec![self.clone(), gy.clone()],
            Conv2dWeightGrad,
        )
    }

    /// Swaps the two channel axes of a `[O, C, k, k]` kernel and flips it
    /// spatially; turns a convolution into its transpose.
    pub fn flip_swap(&self) -> Tensor {
        let [o, c, k, _] = dims4(self);
        let mut source = Vec::with_capacity(self.numel());
        for ci in 0..c {
            for oi in 0..o {
                for ky in 0..k {
                    for kx in 0..k {
                        source.push(((oi * c + ci) * k + (k - 1 - ky)) * k + (k - 1 - kx));
                    }
                }
            }
        }
        let map: Rc<IndexMap> = IndexMap::new(source, self.shape(), &[c, o, k, k]);
        self.gather(&map)
    }
}
