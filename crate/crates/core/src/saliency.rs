//! Grad-CAM, guided backpropagation and sticker-region bookkeeping.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{bilinear_resize_map, save_gray};
use crate::render::asset::{region_footprints, FaceAsset, RegionAnchor, RegionName};
use crate::tensor::{grad, Tensor};

/// A model that exposes what Grad-CAM needs.
pub trait SaliencyModel {
    /// Runs a `[1, C, H, W]` image and returns the last convolutional
    /// activation `[1, K, h, w]` (if the model has one) and the logits
    /// `[1, N]`. With `guided`, rectifiers drop negative gradients on the
    /// way back.
    fn saliency_forward(&self, image: &Tensor, guided: bool) -> (Option<Tensor>, Tensor);
}

/// Nonnegative `H×W` map, max-normalized when nonzero.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl SaliencyMap {
    fn normalized(height: usize, width: usize, mut values: Vec<f64>) -> Self {
        for v in &mut values {
            *v = v.max(0.0);
        }
        let max = values.iter().copied().fold(0.0, f64::max);
        if max > 0.0 {
            for v in &mut values {
                *v /= max;
            }
        }
        Self { height, width, values }
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        save_gray(path, self.width, self.height, &self.values)
    }
}

fn prepare(image: &Tensor) -> Result<Tensor> {
    if image.ndim() != 3 {
        return Err(Error::invalid(format!("image must be [C, H, W], got {:?}", image.shape())));
    }
    let s = image.shape();
    Ok(image.detach().reshape(&[1, s[0], s[1], s[2]]).detach_param())
}

fn class_score(logits: &Tensor, class: usize) -> Result<Tensor> {
    if class >= logits.dim(1) {
        return Err(Error::invalid(format!("class {class} outside {} logits", logits.dim(1))));
    }
    Ok(logits.narrow(1, class, 1).sum())
}

/// Class-discriminative localization from the last convolutional layer.
pub fn grad_cam(model: &dyn SaliencyModel, image: &Tensor, class: usize) -> Result<SaliencyMap> {
    let x = prepare(image)?;
    let (act, logits) = model.saliency_forward(&x, false);
    let act = act.ok_or_else(|| Error::invalid("model has no convolutional layer"))?;
    if act.ndim() != 4 || act.dim(0) != 1 {
        return Err(Error::invalid(format!("activation must be [1, K, h, w], got {:?}", act.shape())));
    }
    let score = class_score(&logits, class)?;
    let g = grad(&score, &[&act], false).remove(0);
    let (k, h, w) = (act.dim(1), act.dim(2), act.dim(3));
    let a = act.data();
    let gd = g.data();
    let mut cam = vec![0.0; h * w];
    for c in 0..k {
        let plane = c * h * w..(c + 1) * h * w;
        let alpha = gd[plane.clone()].iter().sum::<f64>() / (h * w) as f64;
        for (o, &v) in cam.iter_mut().zip(&a[plane]) {
            *o += alpha * v;
        }
    }
    for v in &mut cam {
        *v = v.max(0.0);
    }
    let (hh, ww) = (image.dim(1), image.dim(2));
    let up = if (h, w) == (hh, ww) {
        cam
    } else {
        bilinear_resize_map(h, w, hh, ww).apply_vec(&cam)
    };
    Ok(SaliencyMap::normalized(hh, ww, up))
}

/// Input gradient of the class score with negative gradients discarded at
/// every rectifier. Returns `[C, H, W]`.
pub fn guided_backprop(model: &dyn SaliencyModel, image: &Tensor, class: usize) -> Result<Tensor> {
    let x = prepare(image)?;
    let (_, logits) = model.saliency_forward(&x, true);
    let score = class_score(&logits, class)?;
    let g = grad(&score, &[&x], false).remove(0);
    Ok(g.reshape(image.shape()))
}

/// Per-pixel channel magnitude of guided backpropagation times Grad-CAM.
pub fn guided_grad_cam(model: &dyn SaliencyModel, image: &Tensor, class: usize) -> Result<SaliencyMap> {
    let cam = grad_cam(model, image, class)?;
    let gb = guided_backprop(model, image, class)?;
    let n = cam.height * cam.width;
    let c = image.dim(0);
    let d = gb.data();
    let values = (0..n)
        .map(|p| {
            let mag = (0..c).map(|k| d[k * n + p] * d[k * n + p]).sum::<f64>().sqrt();
            mag * cam.values[p]
        })
        .collect();
    Ok(SaliencyMap::normalized(cam.height, cam.width, values))
}

/// Three of the five regions, numbered 1 to 10 in lexicographic order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RegionCombination {
    pub id: usize,
    pub regions: [RegionName; 3],
}

impl RegionCombination {
    pub fn by_id(id: usize) -> Result<Self> {
        enumerate_combinations()
            .into_iter()
            .find(|c| c.id == id)
            .ok_or_else(|| Error::invalid(format!("combination #{id} does not exist (1..=10)")))
    }

    /// The asset's anchors for this combination, in combination order.
    pub fn anchors(&self, asset: &FaceAsset) -> Result<Vec<RegionAnchor>> {
        self.regions.iter().map(|&r| asset.region(r).cloned()).collect()
    }
}

impl fmt::Display for RegionCombination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.regions.iter().map(|r| r.label()).collect();
        write!(f, "#{} ({})", self.id, names.join(", "))
    }
}

pub fn enumerate_combinations() -> Vec<RegionCombination> {
    let all = RegionName::ALL;
    let mut out = Vec::with_capacity(10);
    for a in 0..5 {
        for b in a + 1..5 {
            for c in b + 1..5 {
                out.push(RegionCombination {
                    id: out.len() + 1,
                    regions: [all[a], all[b], all[c]],
                });
            }
        }
    }
    out
}

/// Mean saliency inside each region's projected slot, averaged over maps.
pub fn score_regions(maps: &[SaliencyMap], asset: &FaceAsset) -> Result<Vec<(RegionName, f64)>> {
    if maps.is_empty() {
        return Err(Error::invalid("no saliency maps to score"));
    }
    if let Some(m) = maps.iter().find(|m| (m.height, m.width) != (asset.size, asset.size)) {
        return Err(Error::invalid(format!(
            "map is {}x{}, asset image is {}x{}",
            m.height, m.width, asset.size, asset.size
        )));
    }
    let feet = region_footprints(asset)?;
    Ok(feet
        .into_iter()
        .map(|(name, px)| {
            let score = if px.is_empty() {
                0.0
            } else {
                maps.iter()
                    .map(|m| px.iter().map(|&p| m.values[p]).sum::<f64>() / px.len() as f64)
                    .sum::<f64>()
                    / maps.len() as f64
            };
            (name, score)
        })
        .collect())
}

/// Tab-separated `region score` lines, highest score first.
pub fn region_report(scores: &[(RegionName, f64)]) -> String {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut out = String::from("region\tscore\n");
    for (name, s) in sorted {
        out.push_str(&format!("{name}\t{s:.6}\n"));
    }
    out
}

/// Analytic stand-in used by tests and docs: activations are the input
/// itself and logit `c` is `Σ_k w[c][k]·mean(A_k)`.
#[derive(Debug, Clone)]
pub struct MeanPoolModel {
    pub weights: Vec<Vec<f64>>,
}

impl SaliencyModel for MeanPoolModel {
    fn saliency_forward(&self, image: &Tensor, _guided: bool) -> (Option<Tensor>, Tensor) {
        let (k, h, w) = (image.dim(1), image.dim(2), image.dim(3));
        let n = self.weights.len();
        let wt: Vec<f64> = (0..k).flat_map(|c| self.weights.iter().map(move |row| row[c])).collect();
        let avg = Tensor::new(vec![1.0 / (h * w) as f64; h * w], &[h * w, 1]);
        let pooled = image.reshape(&[k, h * w]).matmul(&avg);
        let logits = pooled.reshape(&[1, k]).matmul(&Tensor::new(wt, &[k, n]));
        (Some(image.clone()), logits)
    }
}
