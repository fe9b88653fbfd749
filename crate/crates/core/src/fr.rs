//! Small white-box face recognizers: a convolutional extractor producing a
//! 512-d embedding followed by an MLP classification head.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::imaging::{area_resize_map, bilinear_resize_map};
use crate::losses::Classifier;
use crate::nn::{Adam, Conv, Linear, ParamStore, Prelu};
use crate::render::asset::FaceAsset;
use crate::render::{make_synthetic_asset, sh_directional};
use crate::saliency::SaliencyModel;
use crate::seed::{derive_seed, rng_for};
use crate::tensor::{no_grad, Tensor};

pub const EMBEDDING_DIM: usize = 512;
pub const HEAD_HIDDEN: usize = 256;
pub const DEFAULT_INPUT: usize = 64;

/// Feature extractor family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Extractor {
    /// Three conv stages with PReLU.
    Prelu,
    /// Three narrower conv stages with ReLU.
    Relu,
    /// Five conv stages with ReLU, four of them pooled.
    Deep,
}

impl Extractor {
    pub const ALL: [Extractor; 3] = [Extractor::Prelu, Extractor::Relu, Extractor::Deep];

    pub fn name(self) -> &'static str {
        match self {
            Extractor::Prelu => "prelu",
            Extractor::Relu => "relu",
            Extractor::Deep => "deep",
        }
    }

    /// `(output channels, pooled afterwards)` per conv stage.
    fn stages(self) -> &'static [(usize, bool)] {
        match self {
            Extractor::Prelu => &[(8, true), (16, true), (32, true)],
            Extractor::Relu => &[(8, true), (16, true), (16, true)],
            Extractor::Deep => &[(8, true), (8, false), (16, true), (16, true), (32, true)],
        }
    }

    fn pools(self) -> usize {
        self.stages().iter().filter(|s| s.1).count()
    }

    fn uses_prelu(self) -> bool {
        self == Extractor::Prelu
    }
}

impl fmt::Display for Extractor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Extractor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Extractor::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::config(format!("unknown extractor '{s}' (prelu, relu, deep)")))
    }
}

/// Architecture record stored with every checkpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrDescriptor {
    pub extractor: Extractor,
    pub input_size: usize,
    pub class_names: Vec<String>,
}

impl FrDescriptor {
    pub fn validate(&self) -> Result<()> {
        let unit = 1 << self.extractor.pools();
        if self.input_size < unit || self.input_size % unit != 0 {
            return Err(Error::config(format!(
                "{} extractor needs an input size that is a positive multiple of {unit}, got {}",
                self.extractor, self.input_size
            )));
        }
        if self.class_names.len() < 2 {
            return Err(Error::config("a classifier needs at least two classes"));
        }
        Ok(())
    }

    fn feature_side(&self) -> usize {
        self.input_size >> self.extractor.pools()
    }
}

#[derive(Debug, Clone)]
struct Stage {
    conv: Conv,
    act: Option<Prelu>,
    pool: bool,
}

/// A trained recognizer. After [`train_fr`] or [`FrSystem::load`] every
/// parameter is a constant; nothing downstream can update it.
#[derive(Debug, Clone)]
pub struct FrSystem {
    desc: FrDescriptor,
    pub params: ParamStore,
    stages: Vec<Stage>,
    embed: Linear,
    fc1: Linear,
    fc2: Linear,
}

/// Intermediate results of one forward pass.
pub struct FrOutput {
    /// Last conv activation before its pooling, `[m, K, h, w]`.
    pub last_conv: Tensor,
    /// `[m, 512]`
    pub embedding: Tensor,
    /// `[m, N]`
    pub logits: Tensor,
}

impl FrSystem {
    /// Randomly initialized, trainable.
    pub fn new(desc: FrDescriptor, seed: u64) -> Result<Self> {
        desc.validate()?;
        let mut rng = rng_for(seed, &[0xf5]);
        let mut ps = ParamStore::new();
        let mut cin = 3;
        let mut stages = Vec::new();
        for (i, &(cout, pool)) in desc.extractor.stages().iter().enumerate() {
            let conv = Conv::new(&mut ps, &format!("conv{i}"), cin, cout, 3, &mut rng);
            let act = desc.extractor.uses_prelu().then(|| Prelu::new(&mut ps, &format!("act{i}"), cout));
            stages.push(Stage { conv, act, pool });
            cin = cout;
        }
        let side = desc.feature_side();
        let embed = Linear::new(&mut ps, "embed", cin * side * side, EMBEDDING_DIM, &mut rng);
        let fc1 = Linear::new(&mut ps, "head.fc1", EMBEDDING_DIM, HEAD_HIDDEN, &mut rng);
        let fc2 = Linear::new(&mut ps, "head.fc2", HEAD_HIDDEN, desc.class_names.len(), &mut rng);
        Ok(Self {
            desc,
            params: ps,
            stages,
            embed,
            fc1,
            fc2,
        })
    }

    pub fn descriptor(&self) -> &FrDescriptor {
        &self.desc
    }

    pub fn input_size(&self) -> usize {
        self.desc.input_size
    }

    pub fn class_names(&self) -> &[String] {
        &self.desc.class_names
    }

    pub fn is_frozen(&self) -> bool {
        self.params.trainable().is_empty()
    }

    pub fn freeze(&mut self) {
        self.params.freeze();
    }

    /// Resamples `[m, 3, H, W]` images in `[0, 1]` to the input size.
    pub fn prepare(&self, images: &Tensor) -> Result<Tensor> {
        if images.ndim() != 4 || images.dim(1) != 3 {
            return Err(Error::invalid(format!("images must be [m, 3, H, W], got {:?}", images.shape())));
        }
        let (m, h, w) = (images.dim(0), images.dim(2), images.dim(3));
        let s = self.desc.input_size;
        if (h, w) == (s, s) {
            return Ok(images.clone());
        }
        let map = if h >= s && w >= s {
            area_resize_map(h, w, s, s)
        } else {
            bilinear_resize_map(h, w, s, s)
        };
        Ok(images
            .reshape(&[m, 3, h * w])
            .sparse_apply(&std::rc::Rc::new(map))
            .reshape(&[m, 3, s, s]))
    }

    /// Full forward pass on images already at the input size.
    pub fn forward(&self, x: &Tensor, guided: bool) -> FrOutput {
        let ps = &self.params;
        let mut h = x.add_scalar(-0.5).scale(2.0);
        let mut last = None;
        for st in &self.stages {
            h = st.conv.forward(ps, &h);
            h = match &st.act {
                Some(p) => p.forward(ps, &h, guided),
                None if guided => h.relu_guided(),
                None => h.relu(),
            };
            last = Some(h.clone());
            if st.pool {
                h = h.max_pool2();
            }
        }
        let m = h.dim(0);
        let embedding = self.embed.forward(ps, &h.reshape(&[m, h.numel() / m]));
        let logits = self.fc2.forward(ps, &self.fc1.forward(ps, &embedding).tanh());
        FrOutput {
            last_conv: last.expect("at least one stage"),
            embedding,
            logits,
        }
    }

    pub fn embed(&self, images: &Tensor) -> Result<Tensor> {
        Ok(self.forward(&self.prepare(images)?, false).embedding)
    }

    pub fn probabilities(&self, images: &Tensor) -> Result<Tensor> {
        Ok(self.forward(&self.prepare(images)?, false).logits.softmax())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new("frs", &self.desc, self.params.to_arrays("f."))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let desc: FrDescriptor = ck.descriptor_as("frs")?;
        let mut frs = Self::new(desc, 0)?;
        frs.params.load_arrays(&ck.arrays, "f.")?;
        frs.freeze();
        Ok(frs)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    /// Loads a frozen system.
    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

impl Classifier for FrSystem {
    fn num_classes(&self) -> usize {
        self.desc.class_names.len()
    }

    fn log_probs(&self, images: &Tensor) -> Tensor {
        let x = self.prepare(images).expect("classifier input must be [m, 3, H, W]");
        self.forward(&x, false).logits.log_softmax()
    }
}

impl SaliencyModel for FrSystem {
    fn saliency_forward(&self, image: &Tensor, guided: bool) -> (Option<Tensor>, Tensor) {
        let x = self.prepare(image).expect("saliency input must be [1, 3, H, W]");
        let out = self.forward(&x, guided);
        (Some(out.last_conv), out.logits)
    }
}

/// Predicted label and class distribution for one `[3, H, W]` image.
pub fn classify(frs: &FrSystem, image: &Tensor) -> Result<(usize, Vec<f64>)> {
    if image.ndim() != 3 {
        return Err(Error::invalid(format!("image must be [3, H, W], got {:?}", image.shape())));
    }
    let s = image.shape();
    let p = no_grad(|| frs.probabilities(&image.reshape(&[1, s[0], s[1], s[2]])))?;
    let probs = p.to_vec();
    Ok((argmax(&probs), probs))
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Predicted labels for a batch `[m, 3, H, W]`.
pub fn predict(frs: &FrSystem, images: &Tensor) -> Result<Vec<usize>> {
    let logits = no_grad(|| frs.prepare(images).map(|x| frs.forward(&x, false).logits))?;
    let k = logits.dim(1);
    Ok(logits.data().chunks(k).map(argmax).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::invalid(format!("unknown split '{s}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FaceSample {
    pub asset: FaceAsset,
    pub label: usize,
}

/// Labeled face assets with a per-label 80/20 train/test split.
#[derive(Debug, Clone)]
pub struct FaceDataset {
    pub class_names: Vec<String>,
    pub samples: Vec<FaceSample>,
    split: Vec<Split>,
}

/// Knobs for [`FaceDataset::synthetic`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticFaces {
    pub identities: usize,
    pub per_identity: usize,
    pub max_yaw: f64,
    pub max_pitch: f64,
    pub seed: u64,
}

impl Default for SyntheticFaces {
    fn default() -> Self {
        Self {
            identities: 10,
            per_identity: 32,
            max_yaw: 20.0,
            max_pitch: 15.0,
            seed: 0,
        }
    }
}

/// Albedo seed of synthetic identity `i`.
pub fn identity_seed(seed: u64, i: usize) -> u64 {
    derive_seed(seed, &[0x1de, i as u64])
}

/// Random ambient-plus-directional lighting.
pub fn random_lighting(rng: &mut impl Rng) -> [f64; 27] {
    let base = rng.random_range(0.85..1.25);
    let tint = [0, 1, 2].map(|_| base * rng.random_range(0.95..1.05));
    let az: f64 = rng.random_range(-1.2..1.2);
    let el: f64 = rng.random_range(-0.6..0.6);
    let dir = [az.sin() * el.cos(), el.sin(), az.cos() * el.cos()];
    sh_directional(tint, dir, rng.random_range(0.0..0.35))
}

impl FaceDataset {
    /// Splits each label's samples in order: the first 80% (rounded) train,
    /// the rest test.
    pub fn new(class_names: Vec<String>, samples: Vec<FaceSample>) -> Result<Self> {
        let mut split = vec![Split::Test; samples.len()];
        for label in 0..class_names.len() {
            let idx: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].label == label).collect();
            let n_train = (idx.len() as f64 * 0.8).round() as usize;
            for &i in &idx[..n_train] {
                split[i] = Split::Train;
            }
        }
        Self::with_split(class_names, samples, split)
    }

    pub fn with_split(class_names: Vec<String>, samples: Vec<FaceSample>, split: Vec<Split>) -> Result<Self> {
        if split.len() != samples.len() {
            return Err(Error::invalid("one split tag per sample required"));
        }
        if let Some(s) = samples.iter().find(|s| s.label >= class_names.len()) {
            return Err(Error::invalid(format!("label {} outside {} classes", s.label, class_names.len())));
        }
        for (label, name) in class_names.iter().enumerate() {
            let n = (0..samples.len())
                .filter(|&i| samples[i].label == label && split[i] == Split::Train)
                .count();
            if n < 2 {
                return Err(Error::invalid(format!("class '{name}' has {n} training images, need at least 2")));
            }
        }
        Ok(Self {
            class_names,
            samples,
            split,
        })
    }

    /// Procedural identities under random pose and lighting.
    pub fn synthetic(cfg: &SyntheticFaces) -> Result<Self> {
        if cfg.identities < 2 || cfg.per_identity < 3 {
            return Err(Error::config("need at least 2 identities with 3 images each"));
        }
        let mut samples = Vec::with_capacity(cfg.identities * cfg.per_identity);
        for i in 0..cfg.identities {
            for j in 0..cfg.per_identity {
                let mut rng = rng_for(cfg.seed, &[0xda, i as u64, j as u64]);
                let yaw = rng.random_range(-cfg.max_yaw..=cfg.max_yaw);
                let pitch = rng.random_range(-cfg.max_pitch..=cfg.max_pitch);
                let sh = random_lighting(&mut rng);
                let mut asset = make_synthetic_asset(identity_seed(cfg.seed, i), yaw, pitch, &sh)?;
                asset.label = format!("id-{i:02}");
                samples.push(FaceSample { asset, label: i });
            }
        }
        let names = (0..cfg.identities).map(|i| format!("id-{i:02}")).collect();
        Self::new(names, samples)
    }

    pub fn split_of(&self, i: usize) -> Split {
        self.split[i]
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.samples.len()).filter(|&i| self.split[i] == split).collect()
    }

    /// Indices of `label`'s samples in `split`.
    pub fn of_label(&self, label: usize, split: Split) -> Vec<usize> {
        self.indices(split)
            .into_iter()
            .filter(|&i| self.samples[i].label == label)
            .collect()
    }

    pub fn label_of(&self, name: &str) -> Result<usize> {
        self.class_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::invalid(format!("unknown class '{name}'")))
    }

    /// Stacks the chosen samples' images at `side × side`, `[k, 3, side, side]`.
    pub fn images(&self, idx: &[usize], side: usize) -> Tensor {
        let mut data = Vec::with_capacity(idx.len() * 3 * side * side);
        let mut maps: Vec<(usize, crate::tensor::SparseMap)> = Vec::new();
        for &i in idx {
            let a = &self.samples[i].asset;
            let planar = a.image_planar();
            if a.size == side {
                data.extend_from_slice(&planar);
                continue;
            }
            if !maps.iter().any(|(s, _)| *s == a.size) {
                maps.push((a.size, area_resize_map(a.size, a.size, side, side)));
            }
            let map = &maps.iter().find(|(s, _)| *s == a.size).expect("cached").1;
            data.extend(map.apply_vec_rows(&planar, 3));
        }
        Tensor::new(data, &[idx.len(), 3, side, side])
    }

    /// Writes every asset under `dir` plus a `manifest.txt` with one
    /// `label<TAB>class<TAB>path<TAB>split` line per sample.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = String::new();
        for (i, s) in self.samples.iter().enumerate() {
            let rel = format!("{}/{i:05}", self.class_names[s.label]);
            s.asset.save(&dir.join(&rel))?;
            manifest.push_str(&format!("{}\t{}\t{rel}\t{}\n", s.label, self.class_names[s.label], self.split[i]));
        }
        let path = dir.join("manifest.txt");
        std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.txt");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut names: Vec<String> = Vec::new();
        let mut samples = Vec::new();
        let mut split = Vec::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = |why: &str| Error::load(&path, format!("line {}", n + 1), why.to_string());
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(bad("expected label, class, path, split"));
            }
            let label: usize = f[0].parse().map_err(|_| bad("label is not an integer"))?;
            if label >= names.len() {
                names.resize(label + 1, String::new());
            }
            if names[label].is_empty() {
                names[label] = f[1].to_string();
            } else if names[label] != f[1] {
                return Err(bad("label maps to two class names"));
            }
            let asset = FaceAsset::load(&dir.join(f[2]))?;
            samples.push(FaceSample { asset, label });
            split.push(f[3].parse().map_err(|_| bad("split must be train or test"))?);
        }
        if let Some(i) = names.iter().position(|n| n.is_empty()) {
            return Err(Error::load(&path, "labels", format!("label {i} has no samples")));
        }
        Self::with_split(names, samples, split)
    }
}

/// Optimizer and schedule for [`train_fr`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrTrainConfig {
    pub extractor: Extractor,
    pub input_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for FrTrainConfig {
    fn default() -> Self {
        Self {
            extractor: Extractor::Prelu,
            input_size: DEFAULT_INPUT,
            epochs: 20,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrTrainReport {
    pub epoch_loss: Vec<f64>,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

/// Trains extractor and head jointly with cross-entropy and returns the
/// frozen system.
pub fn train_fr(dataset: &FaceDataset, cfg: &FrTrainConfig) -> Result<(FrSystem, FrTrainReport)> {
    if dataset.class_names.len() < 2 {
        return Err(Error::invalid("training needs at least two classes"));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::config("epochs, batch size and learning rate must be positive"));
    }
    let desc = FrDescriptor {
        extractor: cfg.extractor,
        input_size: cfg.input_size,
        class_names: dataset.class_names.clone(),
    };
    let mut frs = FrSystem::new(desc, cfg.seed)?;
    let train = dataset.indices(Split::Train);
    let s = cfg.input_size;
    let images = dataset.images(&train, s);
    let labels: Vec<usize> = train.iter().map(|&i| dataset.samples[i].label).collect();
    let per = 3 * s * s;
    let mut opt = Adam::new(&frs.params, cfg.lr, 0.9, 0.999);
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng_for(cfg.seed, &[0xf7, epoch as u64]));
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let data: Vec<f64> = chunk
                .iter()
                .flat_map(|&k| images.data()[k * per..(k + 1) * per].iter().copied())
                .collect();
            let x = Tensor::new(data, &[chunk.len(), 3, s, s]);
            let lp = frs.forward(&x, false).logits.log_softmax();
            let k = lp.dim(1);
            let onehot: Vec<f64> = chunk
                .iter()
                .flat_map(|&j| {
                    let want = labels[j];
                    (0..k).map(move |c| if c == want { 1.0 } else { 0.0 })
                })
                .collect();
            let loss = lp.mul(&Tensor::new(onehot, &[chunk.len(), k])).sum().scale(-1.0 / chunk.len() as f64);
            let v = loss.item();
            if !v.is_finite() {
                return Err(Error::Divergence {
                    step: epoch,
                    detail: format!("recognizer loss is {v}"),
                });
            }
            total += v * chunk.len() as f64;
            opt.minimize(&mut frs.params, &loss, &[]);
        }
        epoch_loss.push(total / train.len() as f64);
    }
    frs.freeze();
    let train_accuracy = evaluate_accuracy(&frs, dataset, Split::Train)?;
    let test_accuracy = evaluate_accuracy(&frs, dataset, Split::Test)?;
    Ok((
        frs,
        FrTrainReport {
            epoch_loss,
            train_accuracy,
            test_accuracy,
        },
    ))
}

/// Fraction of `split` samples whose predicted label is correct.
pub fn evaluate_accuracy(frs: &FrSystem, dataset: &FaceDataset, split: Split) -> Result<f64> {
    let idx = dataset.indices(split);
    if idx.is_empty() {
        return Err(Error::invalid(format!("{split} split is empty")));
    }
    let labels: Vec<usize> = idx.iter().map(|&i| dataset.samples[i].label).collect();
    let mut correct = 0;
    for (chunk, want) in idx.chunks(64).zip(labels.chunks(64)) {
        let pred = predict(frs, &dataset.images(chunk, frs.input_size()))?;
        correct += pred.iter().zip(want).filter(|(p, w)| p == w).count();
    }
    Ok(correct as f64 / idx.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::cross_entropy;
    use crate::render::asset::make_synthetic_asset_sized;
    use crate::render::sh_constant;
    use crate::tensor::grad;

    fn toy(extractor: Extractor, input: usize, classes: usize) -> FrSystem {
        let desc = FrDescriptor {
            extractor,
            input_size: input,
            class_names: (0..classes).map(|i| format!("c{i}")).collect(),
        };
        FrSystem::new(desc, 3).unwrap()
    }

    #[test]
    fn shapes_and_probabilities() {
        for e in Extractor::ALL {
            let frs = toy(e, 32, 4);
            let x = Tensor::full(&[2, 3, 48, 48], 0.3);
            let out = frs.forward(&frs.prepare(&x).unwrap(), false);
            assert_eq!(out.embedding.shape(), &[2, EMBEDDING_DIM]);
            assert_eq!(out.logits.shape(), &[2, 4]);
            let p = frs.probabilities(&x).unwrap();
            for row in p.data().chunks(4) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
        let bad = FrDescriptor {
            extractor: Extractor::Deep,
            input_size: 24,
            class_names: vec!["a".into(), "b".into()],
        };
        assert!(FrSystem::new(bad, 0).is_err());
    }

    #[test]
    fn uniform_logits_give_uniform_probabilities() {
        let mut frs = toy(Extractor::Relu, 16, 5);
        for id in frs.params.trainable_with_prefix("head.fc2") {
            let n = frs.params.get(id).numel();
            frs.params.set_data(id, vec![0.0; n]);
        }
        let (_, p) = classify(&frs, &Tensor::full(&[3, 16, 16], 0.7)).unwrap();
        assert!(p.iter().all(|&v| (v - 0.2).abs() < 1e-12));
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let frs = toy(Extractor::Prelu, 8, 3);
        let mut rng = rng_for(5, &[]);
        let base: Vec<f64> = (0..3 * 64).map(|_| rng.random_range(0.0..1.0)).collect();
        let f = |v: &[f64]| {
            let x = Tensor::new(v.to_vec(), &[1, 3, 8, 8]);
            cross_entropy(&frs.log_probs(&x), 1).unwrap().item()
        };
        let x = Tensor::param(base.clone(), &[1, 3, 8, 8]);
        let g = grad(&cross_entropy(&frs.log_probs(&x), 1).unwrap(), &[&x], false).remove(0);
        let h = 1e-5;
        for i in (0..base.len()).step_by(7) {
            let mut p = base.clone();
            p[i] += h;
            let fp = f(&p);
            p[i] -= 2.0 * h;
            let num = (fp - f(&p)) / (2.0 * h);
            let a = g.data()[i];
            assert!((a - num).abs() <= 1e-3 * a.abs().max(num.abs()).max(1e-6), "{i}: {a} vs {num}");
        }
    }

    #[test]
    fn checkpoint_round_trip_is_frozen() {
        let frs = toy(Extractor::Deep, 16, 3);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("frs.ckpt");
        frs.save(&p).unwrap();
        let back = FrSystem::load(&p).unwrap();
        assert!(back.is_frozen());
        assert_eq!(back.to_checkpoint().arrays, frs.to_checkpoint().arrays);
        let x = Tensor::full(&[1, 3, 16, 16], 0.4);
        assert_eq!(back.log_probs(&x).data(), frs.log_probs(&x).data());
    }

    fn small_dataset(classes: usize, per: usize) -> FaceDataset {
        let mut samples = Vec::new();
        for label in 0..classes {
            for j in 0..per {
                let g = 0.9 + 0.05 * j as f64;
                let asset = make_synthetic_asset_sized(label as u64 * 7 + 1, 0.0, 0.0, &sh_constant([g; 3]), 32, 64).unwrap();
                samples.push(FaceSample { asset, label });
            }
        }
        FaceDataset::new((0..classes).map(|i| format!("c{i}")).collect(), samples).unwrap()
    }

    #[test]
    fn split_is_eighty_twenty_per_label() {
        let ds = small_dataset(2, 5);
        assert_eq!(ds.of_label(0, Split::Train).len(), 4);
        assert_eq!(ds.of_label(1, Split::Test).len(), 1);
        let one = vec![FaceSample {
            asset: ds.samples[0].asset.clone(),
            label: 0,
        }];
        assert!(FaceDataset::new(vec!["a".into()], one).is_err());
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        let back = FaceDataset::load(dir.path()).unwrap();
        assert_eq!(back.class_names, ds.class_names);
        assert_eq!(back.indices(Split::Test), ds.indices(Split::Test));
        assert_eq!(back.samples[3].asset.image, ds.samples[3].asset.image);
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let ds = small_dataset(2, 5);
        let cfg = FrTrainConfig {
            extractor: Extractor::Relu,
            input_size: 16,
            epochs: 15,
            batch_size: 4,
            lr: 3e-3,
            seed: 9,
        };
        let (a, ra) = train_fr(&ds, &cfg).unwrap();
        let (b, _) = train_fr(&ds, &cfg).unwrap();
        assert!(a.is_frozen());
        assert_eq!(a.to_checkpoint().to_bytes(), b.to_checkpoint().to_bytes());
        assert_eq!(ra.train_accuracy, 1.0);
        assert!(ra.epoch_loss.last().unwrap() < &ra.epoch_loss[0]);
        let single = FaceDataset {
            class_names: vec!["x".into()],
            samples: ds.samples[..4].iter().map(|s| FaceSample { asset: s.asset.clone(), label: 0 }).collect(),
            split: vec![Split::Train; 4],
        };
        assert!(train_fr(&single, &cfg).is_err());
    }

    #[test]
    fn accuracy_matches_hand_count() {
        let ds = small_dataset(2, 5);
        let frs = toy(Extractor::Relu, 16, 2);
        let test = ds.indices(Split::Test);
        let pred = predict(&frs, &ds.images(&test, 16)).unwrap();
        let hand = test.iter().zip(&pred).filter(|(&i, &p)| ds.samples[i].label == p).count();
        let acc = evaluate_accuracy(&frs, &ds, Split::Test).unwrap();
        assert_eq!(acc, hand as f64 / test.len() as f64);
    }
}
