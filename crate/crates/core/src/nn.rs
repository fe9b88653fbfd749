//! Parameter storage, layers and the Adam optimizer.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::NamedArray;
use crate::error::{Error, Result};
use crate::tensor::{grad, Tensor};

/// Index of an entry in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone)]
struct Entry {
    name: String,
    tensor: Tensor,
    trainable: bool,
}

/// Ordered, named parameters and buffers of a model.
///
/// Trainable entries are leaf tensors that require a gradient; buffers (e.g.
/// batch-norm running statistics) and frozen parameters are constants.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_param(&mut self, name: impl Into<String>, data: Vec<f64>, shape: &[usize]) -> ParamId {
        self.push(name.into(), Tensor::param(data, shape), true)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, data: Vec<f64>, shape: &[usize]) -> ParamId {
        self.push(name.into(), Tensor::new(data, shape), false)
    }

    fn push(&mut self, name: String, tensor: Tensor, trainable: bool) -> ParamId {
        debug_assert!(self.entries.iter().all(|e| e.name != name), "duplicate parameter {name}");
        self.entries.push(Entry {
            name,
            tensor,
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    /// Replaces the values of an entry, keeping its kind.
    pub fn set_data(&mut self, id: ParamId, data: Vec<f64>) {
        let e = &mut self.entries[id.0];
        let shape = e.tensor.shape().to_vec();
        e.tensor = if e.trainable {
            Tensor::param(data, &shape)
        } else {
            Tensor::new(data, &shape)
        };
    }

    pub fn trainable(&self) -> Vec<ParamId> {
        (0..self.entries.len())
            .filter(|&i| self.entries[i].trainable)
            .map(ParamId)
            .collect()
    }

    /// Trainable ids whose name starts with `prefix`.
    pub fn trainable_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.trainable()
            .into_iter()
            .filter(|&id| self.name(id).starts_with(prefix))
            .collect()
    }

    /// Turns every parameter into a constant; gradients no longer flow into
    /// this store.
    pub fn freeze(&mut self) {
        for e in &mut self.entries {
            e.tensor = e.tensor.detach();
            e.trainable = false;
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn parameter_count(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.tensor.numel()).sum()
    }

    /// Every entry, prefixed with `prefix`.
    pub fn to_arrays(&self, prefix: &str) -> Vec<NamedArray> {
        self.entries
            .iter()
            .map(|e| NamedArray {
                name: format!("{prefix}{}", e.name),
                shape: e.tensor.shape().to_vec(),
                data: e.tensor.to_vec(),
            })
            .collect()
    }

    /// Loads values for every entry from `arrays` (names prefixed with
    /// `prefix`). Names and shapes must match exactly.
    pub fn load_arrays(&mut self, arrays: &[NamedArray], prefix: &str) -> Result<()> {
        let relevant: Vec<&NamedArray> = arrays.iter().filter(|a| a.name.starts_with(prefix)).collect();
        if relevant.len() != self.entries.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} arrays under '{prefix}', found {}",
                self.entries.len(),
                relevant.len()
            )));
        }
        for i in 0..self.entries.len() {
            let want = format!("{prefix}{}", self.entries[i].name);
            let a = relevant
                .iter()
                .find(|a| a.name == want)
                .ok_or_else(|| Error::Checkpoint(format!("missing array {want}")))?;
            if a.shape != self.entries[i].tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "array {want} has shape {:?}, model expects {:?}",
                    a.shape,
                    self.entries[i].tensor.shape()
                )));
            }
            self.set_data(ParamId(i), a.data.clone());
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

/// Fully connected layer `y = x·W + b` over `[N, in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    pub fn new(ps: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let w = ps.add_param(format!("{name}.weight"), uniform(rng, input * output, bound), &[input, output]);
        let b = ps.add_param(format!("{name}.bias"), uniform(rng, output, bound), &[output]);
        Self { w, b }
    }

    pub fn forward(&self, ps: &ParamStore, x: &Tensor) -> Tensor {
        x.matmul(ps.get(self.w)).add(ps.get(self.b))
    }

    pub fn output_dim(&self, ps: &ParamStore) -> usize {
        ps.get(self.w).dim(1)
    }
}

/// Stride-1 "same" convolution with bias.
#[derive(Debug, Clone)]
pub struct Conv {
    w: ParamId,
    b: ParamId,
}

impl Conv {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        kernel: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = input * kernel * kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = ps.add_param(
            format!("{name}.weight"),
            uniform(rng, output * fan_in, bound),
            &[output, input, kernel, kernel],
        );
        let b = ps.add_param(format!("{name}.bias"), uniform(rng, output, bound), &[output]);
        Self { w, b }
    }

    pub fn forward(&self, ps: &ParamStore, x: &Tensor) -> Tensor {
        let b = ps.get(self.b);
        x.conv2d(ps.get(self.w)).add(&b.reshape(&[1, b.numel(), 1, 1]))
    }
}

/// Running-statistics updates produced by batch normalization in training
/// mode. Applied to the store after the step.
#[derive(Debug, Default)]
pub struct NormState {
    pub train: bool,
    updates: Vec<(ParamId, Vec<f64>)>,
}

impl NormState {
    pub fn train() -> Self {
        Self {
            train: true,
            updates: Vec::new(),
        }
    }

    pub fn eval() -> Self {
        Self::default()
    }

    pub fn apply(self, ps: &mut ParamStore) {
        for (id, data) in self.updates {
            ps.set_data(id, data);
        }
    }
}

/// Batch normalization over axis 1 of `[N, F]` or `[N, C, H, W]`.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    gamma: ParamId,
    beta: ParamId,
    running_mean: ParamId,
    running_var: ParamId,
}

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

impl BatchNorm {
    pub fn new(ps: &mut ParamStore, name: &str, features: usize) -> Self {
        Self {
            gamma: ps.add_param(format!("{name}.gamma"), vec![1.0; features], &[features]),
            beta: ps.add_param(format!("{name}.beta"), vec![0.0; features], &[features]),
            running_mean: ps.add_buffer(format!("{name}.running_mean"), vec![0.0; features], &[features]),
            running_var: ps.add_buffer(format!("{name}.running_var"), vec![1.0; features], &[features]),
        }
    }

    pub fn forward(&self, ps: &ParamStore, x: &Tensor, state: &mut NormState) -> Tensor {
        let c = x.dim(1);
        let mut stat_shape = vec![1; x.ndim()];
        stat_shape[1] = c;
        let (mean, var) = if state.train {
            let count = (x.numel() / c) as f64;
            let mean = x.sum_to(&stat_shape).scale(1.0 / count);
            let centered = x.sub(&mean);
            let var = centered.square().sum_to(&stat_shape).scale(1.0 / count);
            let unbiased = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
            let rm = ps.get(self.running_mean).data();
            let rv = ps.get(self.running_var).data();
            let new_mean = rm
                .iter()
                .zip(mean.data())
                .map(|(&r, &m)| (1.0 - BN_MOMENTUM) * r + BN_MOMENTUM * m)
                .collect();
            let new_var = rv
                .iter()
                .zip(var.data())
                .map(|(&r, &v)| (1.0 - BN_MOMENTUM) * r + BN_MOMENTUM * v * unbiased)
                .collect();
            state.updates.push((self.running_mean, new_mean));
            state.updates.push((self.running_var, new_var));
            (mean, var)
        } else {
            (
                ps.get(self.running_mean).reshape(&stat_shape),
                ps.get(self.running_var).reshape(&stat_shape),
            )
        };
        let normed = x.sub(&mean).div(&var.add_scalar(BN_EPS).sqrt());
        normed
            .mul(&ps.get(self.gamma).reshape(&stat_shape))
            .add(&ps.get(self.beta).reshape(&stat_shape))
    }
}

/// Per-sample layer normalization over every non-batch axis, with an
/// elementwise affine transform.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: ParamId,
    beta: ParamId,
}

const LN_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new(ps: &mut ParamStore, name: &str, shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            gamma: ps.add_param(format!("{name}.gamma"), vec![1.0; n], shape),
            beta: ps.add_param(format!("{name}.beta"), vec![0.0; n], shape),
        }
    }

    pub fn forward(&self, ps: &ParamStore, x: &Tensor) -> Tensor {
        let n = x.dim(0);
        let per = (x.numel() / n) as f64;
        let mut stat_shape = vec![1; x.ndim()];
        stat_shape[0] = n;
        let mean = x.sum_to(&stat_shape).scale(1.0 / per);
        let centered = x.sub(&mean);
        let var = centered.square().sum_to(&stat_shape).scale(1.0 / per);
        let normed = centered.div(&var.add_scalar(LN_EPS).sqrt());
        let mut affine_shape = vec![1];
        affine_shape.extend_from_slice(&x.shape()[1..]);
        normed
            .mul(&ps.get(self.gamma).reshape(&affine_shape))
            .add(&ps.get(self.beta).reshape(&affine_shape))
    }
}

/// Parametric ReLU with one slope per channel.
#[derive(Debug, Clone)]
pub struct Prelu {
    slope: ParamId,
}

impl Prelu {
    pub fn new(ps: &mut ParamStore, name: &str, channels: usize) -> Self {
        Self {
            slope: ps.add_param(format!("{name}.slope"), vec![0.25; channels], &[channels]),
        }
    }

    pub fn forward(&self, ps: &ParamStore, x: &Tensor, guided: bool) -> Tensor {
        if guided {
            x.prelu_guided(ps.get(self.slope))
        } else {
            x.prelu(ps.get(self.slope))
        }
    }
}

/// Adam moment estimates for one parameter store.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(ps: &ParamStore, lr: f64, beta1: f64, beta2: f64) -> Self {
        let sizes: Vec<usize> = ps.trainable().iter().map(|&id| ps.get(id).numel()).collect();
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Differentiates `loss` with respect to every trainable entry and
    /// applies one update. Entries listed in `frozen` receive no update.
    pub fn minimize(&mut self, ps: &mut ParamStore, loss: &Tensor, frozen: &[ParamId]) {
        let ids = ps.trainable();
        let tensors: Vec<Tensor> = ids.iter().map(|&id| ps.get(id).clone()).collect();
        let refs: Vec<&Tensor> = tensors.iter().collect();
        let grads = grad(loss, &refs, false);
        self.apply(ps, &ids, &grads, frozen);
    }

    fn apply(&mut self, ps: &mut ParamStore, ids: &[ParamId], grads: &[Tensor], frozen: &[ParamId]) {
        assert_eq!(ids.len(), self.m.len(), "optimizer built for a different store");
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (k, (&id, g)) in ids.iter().zip(grads).enumerate() {
            if frozen.contains(&id) {
                continue;
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let p = ps.get(id).data();
            let mut next = Vec::with_capacity(p.len());
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                next.push(p[i] - self.lr * mh / (vh.sqrt() + self.eps));
            }
            ps.set_data(id, next);
        }
    }

    pub fn to_arrays(&self, prefix: &str) -> Vec<NamedArray> {
        let mut out = vec![NamedArray {
            name: format!("{prefix}step"),
            shape: vec![1],
            data: vec![self.step as f64],
        }];
        for (k, (m, v)) in self.m.iter().zip(&self.v).enumerate() {
            out.push(NamedArray {
                name: format!("{prefix}m.{k}"),
                shape: vec![m.len()],
                data: m.clone(),
            });
            out.push(NamedArray {
                name: format!("{prefix}v.{k}"),
                shape: vec![v.len()],
                data: v.clone(),
            });
        }
        out
    }

    pub fn load_arrays(&mut self, arrays: &[NamedArray], prefix: &str) -> Result<()> {
        let find = |name: String| {
            arrays
                .iter()
                .find(|a| a.name == name)
                .ok_or_else(|| Error::Checkpoint(format!("missing optimizer array {name}")))
        };
        self.step = find(format!("{prefix}step"))?.data[0] as u64;
        for k in 0..self.m.len() {
            let m = find(format!("{prefix}m.{k}"))?;
            let v = find(format!("{prefix}v.{k}"))?;
            if m.data.len() != self.m[k].len() || v.data.len() != self.v[k].len() {
                return Err(Error::Checkpoint(format!("optimizer slot {k} size mismatch")));
            }
            self.m[k] = m.data.clone();
            self.v[k] = v.data.clone();
        }
        Ok(())
    }
}
