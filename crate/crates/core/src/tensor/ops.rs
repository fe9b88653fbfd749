use super::{numel, Backward, Tensor};

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Numpy-style broadcast of two shapes.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Output axes of a broadcast as `(length, input stride)` pairs, with
/// stride 0 on broadcast axes. Unit axes are dropped and axes that walk the
/// input contiguously are merged.
fn broadcast_plan(in_shape: &[usize], out_shape: &[usize]) -> Vec<(usize, usize)> {
    let n = out_shape.len();
    let pad = n - in_shape.len();
    let in_strides = strides(in_shape);
    let mut plan: Vec<(usize, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        if out_shape[i] == 1 {
            continue;
        }
        let st = if i < pad || in_shape[i - pad] == 1 { 0 } else { in_strides[i - pad] };
        match plan.last_mut() {
            Some(last) if last.1 == st * out_shape[i] => {
                last.0 *= out_shape[i];
                last.1 = st;
            }
            _ => plan.push((out_shape[i], st)),
        }
    }
    if plan.is_empty() {
        plan.push((1, 0));
    }
    plan
}

/// Calls `f(out_offset, in_offset, len, in_stride)` for every run of the
/// innermost planned axis, in output order.
fn for_each_run(plan: &[(usize, usize)], mut f: impl FnMut(usize, usize, usize, usize)) {
    let (inner_len, inner_stride) = *plan.last().expect("nonempty plan");
    let outer = &plan[..plan.len() - 1];
    let runs: usize = outer.iter().map(|a| a.0).product();
    let mut idx = vec![0usize; outer.len()];
    let mut in_off = 0usize;
    for r in 0..runs {
        f(r * inner_len, in_off, inner_len, inner_stride);
        for ax in (0..outer.len()).rev() {
            idx[ax] += 1;
            in_off += outer[ax].1;
            if idx[ax] < outer[ax].0 {
                break;
            }
            in_off -= outer[ax].1 * idx[ax];
            idx[ax] = 0;
        }
    }
}

struct BroadcastTo {
    in_shape: Vec<usize>,
}
impl Backward for BroadcastTo {
    fn backward(&self, _: &[Tensor], _: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        vec![Some(g.sum_to(&self.in_shape))]
    }
}

struct SumTo {
    in_shape: Vec<usize>,
}
impl Backward for SumTo {
    fn backward(&self, _: &[Tensor], _: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        vec![Some(g.broadcast_to(&self.in_shape))]
    }
}

#[derive(Clone, Copy)]
enum Bin {
    Add,
    Sub,
    Mul,
    Div,
}
struct Binary(Bin);
impl Backward for Binary {
    fn backward(&self, inputs: &[Tensor], _: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        let (a, b) = (&inputs[0], &inputs[1]);
        match self.0 {
            Bin::Add => vec![Some(g.clone()), Some(g.clone())],
            Bin::Sub => vec![Some(g.clone()), Some(g.neg())],
            Bin::Mul => vec![
                a.requires_grad().then(|| g.mul(b)),
                b.requires_grad().then(|| g.mul(a)),
            ],
            Bin::Div => {
                let ga = a.requires_grad().then(|| g.div(b));
                let gb = b.requires_grad().then(|| g.mul(a).div(&b.mul(b)).neg());
                vec![ga, gb]
            }
        }
    }
}

#[derive(Clone, Copy)]
enum Un {
    Neg,
    Exp,
    Ln,
    Sqrt,
    Tanh,
    Square,
}
struct Unary(Un);
impl Backward for Unary {
    fn backward(&self, inputs: &[Tensor], out: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        let x = &inputs[0];
        let gx = match self.0 {
            Un::Neg => g.neg(),
            Un::Exp => g.mul(out),
            Un::Ln => g.div(x),
            Un::Sqrt => g.div(&out.scale(2.0)),
            Un::Tanh => g.mul(&out.square().neg().add_scalar(1.0)),
            Un::Square => g.mul(&x.scale(2.0)),
        };
        vec![Some(gx)]
    }
}

struct Scale(f64);
impl Backward for Scale {
    fn backward(&self, _: &[Tensor], _: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        vec![Some(g.scale(self.0))]
    }
}

struct AddScalar;
impl Backward for AddScalar {
    fn backward(&self, _: &[Tensor], _: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        vec![Some(g.clone())]
    }
}

/// Multiplication by a fixed 0/1 (or arbitrary constant) mask computed in the
/// forward pass; covers ReLU and clamping.
struct MaskMul {
    mask: Tensor,
}
impl Backward for MaskMul {
    fn backward(&self, _: &[Tensor], _: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        vec![Some(g.mul(&self.mask))]
    }
}

/// Rectifier whose backward pass discards negative incoming gradients
/// (guided backpropagation).
struct GuidedMaskMul {
    mask: Tensor,
}
impl Backward for GuidedMaskMul {
    fn backward(&self, _: &[Tensor], _: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        vec![Some(g.relu().mul(&self.mask))]
    }
}

struct Prelu {
    pos: Tensor,
    neg: Tensor,
    guided: bool,
}
impl Backward for Prelu {
    fn backward(&self, inputs: &[Tensor], _: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        let (x, slope) = (&inputs[0], &inputs[1]);
        let slope_b = slope_broadcast(slope, x.shape());
        let gin = if self.guided { g.relu() } else { g.clone() };
        let gx = gin.mul(&self.pos).add(&gin.mul(&self.neg).mul(&slope_b));
        let gs = slope.requires_grad().then(|| {
            let full = g.mul(x).mul(&self.neg);
            let mut s = vec![1; x.ndim()];
            s[1] = x.dim(1);
            full.sum_to(&s).reshape(slope.shape())
        });
        vec![Some(gx), gs]
    }
}

fn slope_broadcast(slope: &Tensor, x_shape: &[usize]) -> Tensor {
    let mut s = vec![1; x_shape.len()];
    s[1] = x_shape[1];
    slope.reshape(&s).broadcast_to(x_shape)
}

struct Reshape {
    in_shape: Vec<usize>,
}
impl Backward for Reshape {
    fn backward(&self, _: &[Tensor], _: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        vec![Some(g.reshape(&self.in_shape))]
    }
}

struct MatMul;
impl Backward for MatMul {
    fn backward(&self, inputs: &[Tensor], _: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        let (a, b) = (&inputs[0], &inputs[1]);
        vec![
            a.requires_grad().then(|| g.matmul(&b.t())),
            b.requires_grad().then(|| a.t().matmul(g)),
        ]
    }
}

struct Transpose;
impl Backward for Transpose {
    fn backward(&self, _: &[Tensor], _: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        vec![Some(g.t())]
    }
}

struct Narrow {
    axis: usize,
    start: usize,
    full: usize,
}
impl Backward for Narrow {
    fn backward(&self, _: &[Tensor], _: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        vec![Some(g.pad_axis(self.axis, self.start, self.full))]
    }
}

struct PadAxis {
    axis: usize,
    start: usize,
    len: usize,
}
impl Backward for PadAxis {
    fn backward(&self, _: &[Tensor], _: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        vec![Some(g.narrow(self.axis, self.start, self.len))]
    }
}

struct Concat {
    axis: usize,
    sizes: Vec<usize>,
}
impl Backward for Concat {
    fn backward(&self, inputs: &[Tensor], _: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        let mut start = 0;
        self.sizes
            .iter()
            .zip(inputs)
            .map(|(&len, t)| {
                let r = t.requires_grad().then(|| g.narrow(self.axis, start, len));
                start += len;
                r
            })
            .collect()
    }
}

fn zip_same(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

impl Tensor {
    /// Broadcasts to `shape` following numpy rules.
    pub fn broadcast_to(&self, shape: &[usize]) -> Tensor {
        if self.shape() == shape {
            return self.clone();
        }
        let bs = broadcast_shape(self.shape(), shape);
        assert!(
            bs.as_deref() == Some(shape),
            "cannot broadcast {:?} to {:?}",
            self.shape(),
            shape
        );
        let src = self.data();
        let mut data = vec![0.0; numel(shape)];
        for_each_run(&broadcast_plan(self.shape(), shape), |o, i, len, st| {
            let out = &mut data[o..o + len];
            if st == 0 {
                out.fill(src[i]);
            } else {
                out.copy_from_slice(&src[i..i + len]);
            }
        });
        Tensor::from_op(
            data,
            shape.to_vec(),
            vec![self.clone()],
            BroadcastTo {
                in_shape: self.shape().to_vec(),
            },
        )
    }

    /// Sums broadcast axes away so the result has `shape`; the adjoint of
    /// [`Tensor::broadcast_to`].
    pub fn sum_to(&self, shape: &[usize]) -> Tensor {
        if self.shape() == shape {
            return self.clone();
        }
        let bs = broadcast_shape(shape, self.shape());
        assert!(
            bs.as_deref() == Some(self.shape()),
            "cannot sum {:?} to {:?}",
            self.shape(),
            shape
        );
        let mut data = vec![0.0; numel(shape)];
        let src = self.data();
        for_each_run(&broadcast_plan(shape, self.shape()), |o, i, len, st| {
            let x = &src[o..o + len];
            if st == 0 {
                data[i] += x.iter().sum::<f64>();
            } else {
                for (d, &v) in data[i..i + len].iter_mut().zip(x) {
                    *d += v;
                }
            }
        });
        Tensor::from_op(
            data,
            shape.to_vec(),
            vec![self.clone()],
            SumTo {
                in_shape: self.shape().to_vec(),
            },
        )
    }

    fn binary(&self, other: &Tensor, op: Bin) -> Tensor {
        let (a, b) = if self.shape() == other.shape() {
            (self.clone(), other.clone())
        } else {
            let s = broadcast_shape(self.shape(), other.shape()).unwrap_or_else(|| {
                panic!(
                    "shapes {:?} and {:?} do not broadcast",
                    self.shape(),
                    other.shape()
                )
            });
            (self.broadcast_to(&s), other.broadcast_to(&s))
        };
        let data = match op {
            Bin::Add => zip_same(a.data(), b.data(), |x, y| x + y),
            Bin::Sub => zip_same(a.data(), b.data(), |x, y| x - y),
            Bin::Mul => zip_same(a.data(), b.data(), |x, y| x * y),
            Bin::Div => zip_same(a.data(), b.data(), |x, y| x / y),
        };
        let shape = a.shape().to_vec();
        Tensor::from_op(data, shape, vec![a, b], Binary(op))
    }

    pub fn add(&self, other: &Tensor) -> Tensor {
        self.binary(other, Bin::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        self.binary(other, Bin::Sub)
    }

    pub fn mul(&self, other: &Tensor) -> Tensor {
        self.binary(other, Bin::Mul)
    }

    pub fn div(&self, other: &Tensor) -> Tensor {
        self.binary(other, Bin::Div)
    }

    fn unary(&self, op: Un) -> Tensor {
        let f: fn(f64) -> f64 = match op {
            Un::Neg => |x| -x,
            Un::Exp => f64::exp,
            Un::Ln => f64::ln,
            Un::Sqrt => f64::sqrt,
            Un::Tanh => f64::tanh,
            Un::Square => |x| x * x,
        };
        let data = self.data().iter().map(|&x| f(x)).collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], Unary(op))
    }

    pub fn neg(&self) -> Tensor {
        self.unary(Un::Neg)
    }

    pub fn exp(&self) -> Tensor {
        self.unary(Un::Exp)
    }

    pub fn ln(&self) -> Tensor {
        self.unary(Un::Ln)
    }

    pub fn sqrt(&self) -> Tensor {
        self.unary(Un::Sqrt)
    }

    pub fn tanh(&self) -> Tensor {
        self.unary(Un::Tanh)
    }

    pub fn square(&self) -> Tensor {
        self.unary(Un::Square)
    }

    pub fn scale(&self, k: f64) -> Tensor {
        let data = self.data().iter().map(|&x| x * k).collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], Scale(k))
    }

    pub fn add_scalar(&self, k: f64) -> Tensor {
        let data = self.data().iter().map(|&x| x + k).collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], AddScalar)
    }

    fn mask_mul(&self, mask: Vec<f64>, guided: bool) -> Tensor {
        let data = zip_same(self.data(), &mask, |x, m| x * m);
        let mask = Tensor::new(mask, self.shape());
        if guided {
            Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], GuidedMaskMul { mask })
        } else {
            Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], MaskMul { mask })
        }
    }

    pub fn relu(&self) -> Tensor {
        let mask = self.data().iter().map(|&x| if x > 0.0 { 1.0 } else { 0.0 }).collect();
        self.mask_mul(mask, false)
    }

    /// ReLU whose backward pass also zeroes negative incoming gradients.
    pub fn relu_guided(&self) -> Tensor {
        let mask = self.data().iter().map(|&x| if x > 0.0 { 1.0 } else { 0.0 }).collect();
        self.mask_mul(mask, true)
    }

    /// `max(x, c)` elementwise; the gradient passes where `x > c`.
    pub fn clamp_min(&self, c: f64) -> Tensor {
        let mask: Vec<f64> = self.data().iter().map(|&x| if x > c { 1.0 } else { 0.0 }).collect();
        let data: Vec<f64> = self.data().iter().map(|&x| x.max(c)).collect();
        Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            MaskMul {
                mask: Tensor::new(mask, self.shape()),
            },
        )
    }

    fn prelu_impl(&self, slope: &Tensor, guided: bool) -> Tensor {
        assert!(self.ndim() >= 2 && slope.numel() == self.dim(1), "prelu slope needs one value per channel");
        let sb = no_grad_slope(slope, self.shape());
        let pos: Vec<f64> = self.data().iter().map(|&x| if x > 0.0 { 1.0 } else { 0.0 }).collect();
        let neg: Vec<f64> = pos.iter().map(|p| 1.0 - p).collect();
        let data = self
            .data()
            .iter()
            .zip(&sb)
            .map(|(&x, &a)| if x > 0.0 { x } else { a * x })
            .collect();
        Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone(), slope.clone()],
            Prelu {
                pos: Tensor::new(pos, self.shape()),
                neg: Tensor::new(neg, self.shape()),
                guided,
            },
        )
    }

    /// Parametric ReLU with one learned negative slope per channel (axis 1).
    pub fn prelu(&self, slope: &Tensor) -> Tensor {
        self.prelu_impl(slope, false)
    }

    /// PReLU with guided (negative-gradient-clipping) backward pass.
    pub fn prelu_guided(&self, slope: &Tensor) -> Tensor {
        self.prelu_impl(slope, true)
    }

    pub fn sum(&self) -> Tensor {
        self.sum_to(&[])
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel() as f64;
        self.sum().scale(1.0 / n)
    }

    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        assert_eq!(numel(shape), self.numel(), "reshape {:?} -> {:?}", self.shape(), shape);
        if shape == self.shape() {
            return self.clone();
        }
        Tensor::from_op(
            self.data().to_vec(),
            shape.to_vec(),
            vec![self.clone()],
            Reshape {
                in_shape: self.shape().to_vec(),
            },
        )
    }

    /// 2-D matrix product.
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        assert!(self.ndim() == 2 && other.ndim() == 2, "matmul needs 2-D operands");
        let (m, k) = (self.dim(0), self.dim(1));
        let (k2, n) = (other.dim(0), other.dim(1));
        assert_eq!(k, k2, "matmul inner dimensions {k} vs {k2}");
        let mut c = vec![0.0; m * n];
        gemm(m, k, n, self.data(), other.data(), &mut c, false);
        Tensor::from_op(c, vec![m, n], vec![self.clone(), other.clone()], MatMul)
    }

    /// 2-D transpose.
    pub fn t(&self) -> Tensor {
        assert_eq!(self.ndim(), 2, "t() needs a 2-D tensor");
        let (r, c) = (self.dim(0), self.dim(1));
        let src = self.data();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        Tensor::from_op(data, vec![c, r], vec![self.clone()], Transpose)
    }

    /// The sub-range `start..start+len` of `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Tensor {
        let shape = self.shape();
        assert!(start + len <= shape[axis], "narrow out of range");
        if start == 0 && len == shape[axis] {
            return self.clone();
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * shape[axis] + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        Tensor::from_op(
            data,
            out_shape,
            vec![self.clone()],
            Narrow {
                axis,
                start,
                full: shape[axis],
            },
        )
    }

    /// Embeds this tensor at `start` along `axis` of a zero tensor whose
    /// `axis` has length `full`; the adjoint of [`Tensor::narrow`].
    pub fn pad_axis(&self, axis: usize, start: usize, full: usize) -> Tensor {
        let shape = self.shape();
        let len = shape[axis];
        assert!(start + len <= full, "pad_axis out of range");
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.data();
        let mut data = vec![0.0; outer * full * inner];
        for o in 0..outer {
            let dst = (o * full + start) * inner;
            data[dst..dst + len * inner].copy_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = full;
        Tensor::from_op(data, out_shape, vec![self.clone()], PadAxis { axis, start, len })
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(parts: &[Tensor], axis: usize) -> Tensor {
        assert!(!parts.is_empty(), "concat of nothing");
        let first = parts[0].shape();
        for p in parts {
            assert_eq!(p.ndim(), first.len(), "concat rank mismatch");
            for (d, (&a, &b)) in p.shape().iter().zip(first).enumerate() {
                assert!(d == axis || a == b, "concat shape mismatch on axis {d}");
            }
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let sizes: Vec<usize> = parts.iter().map(|p| p.dim(axis)).collect();
        let total: usize = sizes.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &len) in parts.iter().zip(&sizes) {
                let base = o * len * inner;
                data.extend_from_slice(&p.data()[base..base + len * inner]);
            }
        }
        let mut shape = first.to_vec();
        shape[axis] = total;
        Tensor::from_op(data, shape, parts.to_vec(), Concat { axis, sizes })
    }

    /// Row-wise log-softmax of a 2-D tensor.
    pub fn log_softmax(&self) -> Tensor {
        assert_eq!(self.ndim(), 2, "log_softmax needs [rows, classes]");
        let (r, c) = (self.dim(0), self.dim(1));
        let maxes: Vec<f64> = (0..r)
            .map(|i| {
                self.data()[i * c..(i + 1) * c]
                    .iter()
                    .cloned()
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let z = self.sub(&Tensor::new(maxes, &[r, 1]));
        let lse = z.exp().sum_to(&[r, 1]).ln();
        z.sub(&lse)
    }

    pub fn softmax(&self) -> Tensor {
        self.log_softmax().exp()
    }

    /// Per-row maximum index of a 2-D tensor.
    pub fn argmax_rows(&self) -> Vec<usize> {
        let (r, c) = (self.dim(0), self.dim(1));
        (0..r)
            .map(|i| {
                let row = &self.data()[i * c..(i + 1) * c];
                let mut best = 0;
                for j in 1..c {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}

fn no_grad_slope(slope: &Tensor, shape: &[usize]) -> Vec<f64> {
    let c = shape[1];
    let inner: usize = shape[2..].iter().product();
    let outer = shape[0];
    let mut out = Vec::with_capacity(numel(shape));
    for _ in 0..outer {
        for ch in 0..c {
            let a = slope.data()[ch];
            out.extend(std::iter::repeat_n(a, inner));
        }
    }
    out
}

/// `c = a·b` (or `c += a·b` with `accumulate`) for row-major matrices.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], accumulate: bool) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|x| *x = 0.0);
        }
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: slice lengths are checked by the callers' shape assertions and
    // the strides describe contiguous row-major storage.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c (+)= a·bᵀ` with `a: m×k`, `b: n×k`.
pub(crate) fn gemm_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], accumulate: bool) {
    if m == 0 || n == 0 || k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|x| *x = 0.0);
        }
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: as in `gemm`; `b` is read through transposed strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
