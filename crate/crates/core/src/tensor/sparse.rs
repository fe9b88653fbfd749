use std::cell::OnceCell;
use std::rc::Rc;

use super::{Backward, Tensor};

/// A fixed sparse linear map `R^cols -> R^rows` in compressed-row form.
///
/// Resampling, placement and rendering with frozen geometry are all linear in
/// the pixel values they move, so they are expressed as sparse maps and
/// differentiated by applying the transpose.
#[derive(Debug, Clone)]
pub struct SparseMap {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    weights: Vec<f64>,
    transpose: OnceCell<Rc<SparseMap>>,
}

/// Row-by-row builder for [`SparseMap`].
#[derive(Debug)]
pub struct SparseMapBuilder {
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    weights: Vec<f64>,
    scratch: Vec<(usize, f64)>,
}

impl SparseMapBuilder {
    pub fn new(cols: usize) -> Self {
        Self {
            cols,
            indptr: vec![0],
            indices: Vec::new(),
            weights: Vec::new(),
            scratch: Vec::new(),
        }
    }

    /// Adds a row given `(column, weight)` pairs. Duplicate columns are merged
    /// and zero weights dropped; columns end up sorted.
    pub fn push_row(&mut self, entries: impl IntoIterator<Item = (usize, f64)>) {
        self.scratch.clear();
        self.scratch.extend(entries);
        self.scratch.sort_by_key(|e| e.0);
        let mut last: Option<usize> = None;
        for &(c, w) in &self.scratch {
            assert!(c < self.cols, "sparse column {c} out of range {}", self.cols);
            if last == Some(c) {
                *self.weights.last_mut().expect("merged entry") += w;
            } else {
                self.indices.push(c);
                self.weights.push(w);
                last = Some(c);
            }
        }
        // Drop exact zeros left after merging.
        let start = *self.indptr.last().expect("indptr");
        let mut write = start;
        for read in start..self.indices.len() {
            if self.weights[read] != 0.0 {
                self.indices[write] = self.indices[read];
                self.weights[write] = self.weights[read];
                write += 1;
            }
        }
        self.indices.truncate(write);
        self.weights.truncate(write);
        self.indptr.push(write);
    }

    pub fn push_empty_row(&mut self) {
        self.indptr.push(self.indices.len());
    }

    pub fn finish(self) -> SparseMap {
        SparseMap {
            rows: self.indptr.len() - 1,
            cols: self.cols,
            indptr: self.indptr,
            indices: self.indices,
            weights: self.weights,
            transpose: OnceCell::new(),
        }
    }
}

impl SparseMap {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// `(column, weight)` entries of row `r`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.weights[span].iter().copied())
    }

    pub fn row_is_empty(&self, r: usize) -> bool {
        self.indptr[r] == self.indptr[r + 1]
    }

    /// Dense `y = A·x` for a single vector.
    pub fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "sparse apply length");
        (0..self.rows)
            .map(|r| self.row(r).map(|(c, w)| w * x[c]).sum())
            .collect()
    }

    /// Applies the map to each of `planes` consecutive blocks of `x`.
    pub fn apply_vec_rows(&self, x: &[f64], planes: usize) -> Vec<f64> {
        assert_eq!(x.len(), planes * self.cols, "sparse apply length");
        x.chunks(self.cols).flat_map(|p| self.apply_vec(p)).collect()
    }

    pub fn transpose(&self) -> Rc<SparseMap> {
        self.transpose
            .get_or_init(|| {
                let mut counts = vec![0usize; self.cols + 1];
                for &c in &self.indices {
                    counts[c + 1] += 1;
                }
                for i in 0..self.cols {
                    counts[i + 1] += counts[i];
                }
                let indptr = counts.clone();
                let mut fill = counts;
                let mut indices = vec![0; self.nnz()];
                let mut weights = vec![0.0; self.nnz()];
                for r in 0..self.rows {
                    for (c, w) in self.row(r) {
                        let slot = fill[c];
                        indices[slot] = r;
                        weights[slot] = w;
                        fill[c] += 1;
                    }
                }
                Rc::new(SparseMap {
                    rows: self.cols,
                    cols: self.rows,
                    indptr,
                    indices,
                    weights,
                    transpose: OnceCell::new(),
                })
            })
            .clone()
    }

    /// The product `self ∘ inner`, i.e. `x ↦ self·(inner·x)`.
    pub fn compose(&self, inner: &SparseMap) -> SparseMap {
        assert_eq!(self.cols, inner.rows, "compose dimension mismatch");
        let mut b = SparseMapBuilder::new(inner.cols);
        let mut acc: Vec<(usize, f64)> = Vec::new();
        for r in 0..self.rows {
            acc.clear();
            for (mid, w) in self.row(r) {
                acc.extend(inner.row(mid).map(|(c, v)| (c, w * v)));
            }
            b.push_row(acc.iter().copied());
        }
        b.finish()
    }

    /// Keeps only the listed rows, in order.
    pub fn select_rows(&self, rows: &[usize]) -> SparseMap {
        let mut b = SparseMapBuilder::new(self.cols);
        for &r in rows {
            b.push_row(self.row(r));
        }
        b.finish()
    }

    /// Rows that have at least one entry.
    pub fn nonempty_rows(&self) -> Vec<usize> {
        (0..self.rows).filter(|&r| !self.row_is_empty(r)).collect()
    }

    /// Row-wise weight scaling: `diag(s)·A`.
    pub fn scale_rows(&self, s: &[f64]) -> SparseMap {
        assert_eq!(s.len(), self.rows);
        let mut out = self.clone();
        out.transpose = OnceCell::new();
        for r in 0..self.rows {
            for i in self.indptr[r]..self.indptr[r + 1] {
                out.weights[i] *= s[r];
            }
        }
        out
    }
}

struct SparseApply(Rc<SparseMap>);
impl Backward for SparseApply {
    fn backward(&self, _: &[Tensor], _: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        vec![Some(g.sparse_apply(&self.0.transpose()))]
    }
}

impl Tensor {
    /// Applies `map` along the last axis: `[..., cols] -> [..., rows]`.
    pub fn sparse_apply(&self, map: &Rc<SparseMap>) -> Tensor {
        let shape = self.shape();
        let last = *shape.last().expect("sparse_apply on a scalar");
        assert_eq!(last, map.cols, "sparse_apply: last axis {last} vs map cols {}", map.cols);
        let lead = self.numel() / last.max(1);
        let src = self.data();
        let mut out = vec![0.0; lead * map.rows];
        for l in 0..lead {
            let x = &src[l * last..(l + 1) * last];
            let y = &mut out[l * map.rows..(l + 1) * map.rows];
            for (r, yr) in y.iter_mut().enumerate() {
                let mut s = 0.0;
                for i in map.indptr[r]..map.indptr[r + 1] {
                    s += map.weights[i] * x[map.indices[i]];
                }
                *yr = s;
            }
        }
        let mut out_shape = shape.to_vec();
        *out_shape.last_mut().expect("non-scalar") = map.rows;
        Tensor::from_op(out, out_shape, vec![self.clone()], SparseApply(map.clone()))
    }
}
