use std::rc::Rc;

use super::{numel, Backward, Tensor};

/// A fixed routing of elements: output element `j` reads input element
/// `source[j]`. Covers pooling, nearest upsampling and axis permutations.
#[derive(Debug)]
pub struct IndexMap {
    source: Vec<usize>,
    in_shape: Vec<usize>,
    out_shape: Vec<usize>,
}

impl IndexMap {
    pub fn new(source: Vec<usize>, in_shape: &[usize], out_shape: &[usize]) -> Rc<Self> {
        let n_in = numel(in_shape);
        assert_eq!(source.len(), numel(out_shape), "index map length mismatch");
        assert!(source.iter().all(|&s| s < n_in), "index map source out of range");
        Rc::new(Self {
            source,
            in_shape: in_shape.to_vec(),
            out_shape: out_shape.to_vec(),
        })
    }

    pub fn in_shape(&self) -> &[usize] {
        &self.in_shape
    }

    pub fn out_shape(&self) -> &[usize] {
        &self.out_shape
    }
}

struct Gather(Rc<IndexMap>);
impl Backward for Gather {
    fn backward(&self, _: &[Tensor], _: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        vec![Some(g.scatter_add(&self.0))]
    }
}

struct ScatterAdd(Rc<IndexMap>);
impl Backward for ScatterAdd {
    fn backward(&self, _: &[Tensor], _: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        vec![Some(g.gather(&self.0))]
    }
}

impl Tensor {
    /// Applies the routing: `out[j] = self[map.source[j]]`.
    pub fn gather(&self, map: &Rc<IndexMap>) -> Tensor {
        assert_eq!(self.shape(), map.in_shape.as_slice(), "gather input shape");
        let src = self.data();
        let data = map.source.iter().map(|&s| src[s]).collect();
        Tensor::from_op(data, map.out_shape.clone(), vec![self.clone()], Gather(map.clone()))
    }

    /// The adjoint of [`Tensor::gather`]: `out[map.source[j]] += self[j]`.
    pub fn scatter_add(&self, map: &Rc<IndexMap>) -> Tensor {
        assert_eq!(self.shape(), map.out_shape.as_slice(), "scatter input shape");
        let mut data = vec![0.0; numel(&map.in_shape)];
        for (&s, &v) in map.source.iter().zip(self.data()) {
            data[s] += v;
        }
        Tensor::from_op(data, map.in_shape.clone(), vec![self.clone()], ScatterAdd(map.clone()))
    }

    /// General axis permutation.
    pub fn permute(&self, axes: &[usize]) -> Tensor {
        let shape = self.shape();
        assert_eq!(axes.len(), shape.len(), "permute rank");
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let mut in_strides = vec![1; shape.len()];
        for i in (0..shape.len().saturating_sub(1)).rev() {
            in_strides[i] = in_strides[i + 1] * shape[i + 1];
        }
        let n = self.numel();
        let mut source = Vec::with_capacity(n);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..n {
            source.push(axes.iter().enumerate().map(|(o, &a)| idx[o] * in_strides[a]).sum());
            for ax in (0..idx.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < out_shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        self.gather(&IndexMap::new(source, shape, &out_shape))
    }

    /// 2×2 max pooling with stride 2 over `[N, C, H, W]` (H and W even).
    pub fn max_pool2(&self) -> Tensor {
        let [n, c, h, w] = dims4(self);
        assert!(h % 2 == 0 && w % 2 == 0, "max_pool2 needs even spatial size");
        let (oh, ow) = (h / 2, w / 2);
        let src = self.data();
        let mut source = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for y in 0..oh {
                for x in 0..ow {
                    let mut best = base + 2 * y * w + 2 * x;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let cand = base + (2 * y + dy) * w + 2 * x + dx;
                        if src[cand] > src[best] {
                            best = cand;
                        }
                    }
                    source.push(best);
                }
            }
        }
        self.gather(&IndexMap::new(source, self.shape(), &[n, c, oh, ow]))
    }

    /// Nearest-neighbour 2× upsampling of `[N, C, H, W]`.
    pub fn upsample2(&self) -> Tensor {
        let [n, c, h, w] = dims4(self);
        let (oh, ow) = (2 * h, 2 * w);
        let mut source = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            for y in 0..oh {
                for x in 0..ow {
                    source.push(plane * h * w + (y / 2) * w + x / 2);
                }
            }
        }
        self.gather(&IndexMap::new(source, self.shape(), &[n, c, oh, ow]))
    }
}

pub(crate) fn dims4(t: &Tensor) -> [usize; 4] {
    let s = t.shape();
    assert_eq!(s.len(), 4, "expected [N, C, H, W], got {s:?}");
    [s[0], s[1], s[2], s[3]]
}
