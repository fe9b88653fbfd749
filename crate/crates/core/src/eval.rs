//! Digital success measurement, experiment sweeps and sticker export.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attack::{
    craft_stickers, run_attack_to_dir, AttackMode, AttackSpec, AttackTrainer, RunFiles, ShapeGan, TrainConfig,
};
use crate::error::{Error, Result};
use crate::fr::{identity_seed, predict, random_lighting, FaceDataset, FrSystem, Split, SyntheticFaces};
use crate::gan::Generator;
use crate::imaging::{area_resize_map, bilinear_resize_map, load_png, save_rgba8};
use crate::render::{
    binarize_mask, composite, make_synthetic_asset, place_stickers, render_stickers_only, FaceAsset, RegionAnchor,
    RenderCache, StickerItem, StickerSet,
};
use crate::saliency::{enumerate_combinations, RegionCombination};
use crate::seed::{derive_seed, rng_for};
use crate::shapes::ShapeCorpus;
use crate::tensor::{no_grad, Tensor};

pub const MASK_THRESHOLD: f64 = 0.5;
pub const DEFAULT_SIZES: [usize; 3] = [80, 90, 100];
const EVAL_CHUNK: usize = 16;

/// Outcome of one sticker set over a list of frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessReport {
    pub mode: AttackMode,
    pub attacker: usize,
    pub target: Option<usize>,
    pub frames_evaluated: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub predictions: Vec<usize>,
}

impl SuccessReport {
    pub fn from_predictions(spec: &AttackSpec, predictions: Vec<usize>) -> Result<Self> {
        if predictions.is_empty() {
            return Err(Error::invalid("no frames to evaluate"));
        }
        let successes = predictions.iter().filter(|&&p| spec.is_success(p)).count();
        Ok(Self {
            mode: spec.mode,
            attacker: spec.attacker,
            target: spec.target,
            frames_evaluated: predictions.len(),
            successes,
            success_rate: successes as f64 / predictions.len() as f64,
            predictions,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let target = self.target.map_or("-".to_string(), |t| t.to_string());
        format!(
            "mode      {}\nattacker  {}\ntarget    {target}\nframes    {}\nsuccesses {}\nrate      {:.2}%\n",
            self.mode,
            self.attacker,
            self.frames_evaluated,
            self.successes,
            100.0 * self.success_rate
        )
    }
}

/// Frames with their render caches, built once and reused across sticker
/// sets.
pub struct FrameBank {
    frames: Vec<FaceAsset>,
    caches: Vec<RenderCache>,
}

impl FrameBank {
    pub fn new(frames: Vec<FaceAsset>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::invalid("no frames to evaluate"));
        }
        let caches = frames.iter().map(RenderCache::new).collect::<Result<_>>()?;
        Ok(Self { frames, caches })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[FaceAsset] {
        &self.frames
    }

    /// Frame `i` wearing `set`, `[3, H, W]`. Items are re-anchored on the
    /// frame's region of the same name, keeping their slot size. Masks are
    /// binarized at `threshold` when given.
    pub fn apply(&self, i: usize, set: &StickerSet, threshold: Option<f64>) -> Result<Tensor> {
        let frame = &self.frames[i];
        let cache = &self.caches[i];
        let items = set
            .items
            .iter()
            .map(|it| {
                let region = RegionAnchor {
                    slot_size: it.region.slot_size,
                    ..frame.region(it.region.name)?.clone()
                };
                let mask = match threshold {
                    Some(t) if t == MASK_THRESHOLD => binarize_mask(&it.mask),
                    Some(t) => Tensor::new(
                        it.mask.data().iter().map(|&v| f64::from(u8::from(v > t))).collect(),
                        it.mask.shape(),
                    ),
                    None => it.mask.clone(),
                };
                Ok(StickerItem {
                    sticker: it.sticker.clone(),
                    mask,
                    region,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        no_grad(|| {
            let (tex, loc) = place_stickers(&StickerSet::new(items)?, cache.template_size)?;
            let (rgb, cov) = render_stickers_only(cache, &tex, &loc)?;
            let s = cache.size;
            composite(&Tensor::new(cache.image.clone(), &[3, s, s]), &rgb, &cov)
        })
    }
}

/// Resamples `[3, H, W]` as if seen from `factor` times the distance: the
/// face shrinks to `round(H / factor)` pixels and is returned at that size.
pub fn at_distance(image: &Tensor, factor: f64) -> Result<Tensor> {
    if !(factor.is_finite() && factor > 0.0) {
        return Err(Error::invalid(format!("distance factor must be positive, got {factor}")));
    }
    let (h, w) = (image.dim(1), image.dim(2));
    let nh = ((h as f64 / factor).round() as usize).max(1);
    let nw = ((w as f64 / factor).round() as usize).max(1);
    if (nh, nw) == (h, w) {
        return Ok(image.clone());
    }
    let map = if nh <= h {
        area_resize_map(h, w, nh, nw)
    } else {
        bilinear_resize_map(h, w, nh, nw)
    };
    Ok(Tensor::new(map.apply_vec_rows(image.data(), 3), &[3, nh, nw]))
}

/// Predicted labels for `set` on every frame of `bank`.
pub fn predict_with_stickers(
    frs: &FrSystem,
    set: &StickerSet,
    bank: &FrameBank,
    distance: Option<f64>,
) -> Result<Vec<usize>> {
    let mut preds = Vec::with_capacity(bank.len());
    let idx: Vec<usize> = (0..bank.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let mut imgs = Vec::with_capacity(chunk.len());
        for &i in chunk {
            let mut img = bank.apply(i, set, Some(MASK_THRESHOLD))?;
            if let Some(d) = distance {
                img = at_distance(&img, d)?;
            }
            imgs.push(frs.prepare(&img.reshape(&[1, 3, img.dim(1), img.dim(2)]))?);
        }
        preds.extend(predict(frs, &Tensor::concat(&imgs, 0))?);
    }
    Ok(preds)
}

/// Stickers are worn with binarized masks on each frame, which is then
/// classified.
pub fn evaluate(frs: &FrSystem, set: &StickerSet, frames: &[FaceAsset], spec: &AttackSpec) -> Result<SuccessReport> {
    spec.validate(frs.class_names().len())?;
    let bank = FrameBank::new(frames.to_vec())?;
    SuccessReport::from_predictions(spec, predict_with_stickers(frs, set, &bank, None)?)
}

/// Crafted candidates scored on selection frames and the winner's report
/// on held-out frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CraftedEvaluation {
    pub chosen: usize,
    pub selection_rates: Vec<f64>,
    pub report: SuccessReport,
}

/// Crafts `count` sets, keeps the one with the best rate on `selection`
/// (first on ties) and reports it on `heldout`.
#[allow(clippy::too_many_arguments)]
pub fn craft_and_evaluate(
    frs: &FrSystem,
    g: &Generator,
    anchors: &[RegionAnchor],
    selection: &FrameBank,
    heldout: &FrameBank,
    spec: &AttackSpec,
    count: usize,
    seed: u64,
    distance: Option<f64>,
) -> Result<CraftedEvaluation> {
    if count == 0 {
        return Err(Error::invalid("need at least one crafted set"));
    }
    let sets = craft_stickers(g, count, seed, anchors)?;
    let mut rates = Vec::with_capacity(count);
    for s in &sets {
        rates.push(SuccessReport::from_predictions(spec, predict_with_stickers(frs, s, selection, distance)?)?.success_rate);
    }
    let chosen = (0..count).fold(0, |b, i| if rates[i] > rates[b] { i } else { b });
    let report = SuccessReport::from_predictions(spec, predict_with_stickers(frs, &sets[chosen], heldout, distance)?)?;
    Ok(CraftedEvaluation {
        chosen,
        selection_rates: rates,
        report,
    })
}

/// Digital stand-ins for capture conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    /// Resampling factor applied to the rendered frame.
    Distance,
    /// Scale of the lighting's constant band.
    Brightness,
    /// Head yaw in degrees.
    Pose,
}

impl std::str::FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "distance" => Ok(Condition::Distance),
            "brightness" => Ok(Condition::Brightness),
            "pose" => Ok(Condition::Pose),
            _ => Err(Error::config(format!("unknown condition '{s}' (distance, brightness, pose)"))),
        }
    }
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Condition::Distance => "distance",
            Condition::Brightness => "brightness",
            Condition::Pose => "pose",
        })
    }
}

/// `count` fresh frames of synthetic identity `identity`, drawn like the
/// dataset but from their own stream. The condition overrides yaw or scales
/// the lighting; distance leaves the frames alone.
pub fn condition_frames(
    faces: &SyntheticFaces,
    identity: usize,
    condition: Option<(Condition, f64)>,
    count: usize,
) -> Result<Vec<FaceAsset>> {
    (0..count)
        .map(|j| {
            let mut rng = rng_for(faces.seed, &[0xc0, identity as u64, j as u64]);
            let mut yaw = rng.random_range(-faces.max_yaw..=faces.max_yaw);
            let pitch = rng.random_range(-faces.max_pitch..=faces.max_pitch);
            let mut sh = random_lighting(&mut rng);
            match condition {
                Some((Condition::Pose, v)) => yaw = v,
                Some((Condition::Brightness, v)) => {
                    for c in 0..3 {
                        sh[c * 9] *= v;
                    }
                }
                _ => {}
            }
            let mut a = make_synthetic_asset(identity_seed(faces.seed, identity), yaw, pitch, &sh)?;
            a.label = format!("id-{identity:02}");
            Ok(a)
        })
        .collect()
}

/// One attacker (and target, when impersonating).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackPair {
    pub attacker: usize,
    pub target: Option<usize>,
}

impl AttackPair {
    pub fn spec(&self, combination: RegionCombination) -> AttackSpec {
        match self.target {
            None => AttackSpec::dodging(self.attacker),
            Some(t) => AttackSpec::impersonating(self.attacker, t),
        }
        .with_combination(combination)
    }
}

impl std::fmt::Display for AttackPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.target {
            None => write!(f, "{}", self.attacker),
            Some(t) => write!(f, "{}-{t}", self.attacker),
        }
    }
}

impl std::str::FromStr for AttackPair {
    type Err = Error;

    /// `A` dodges, `A-B` impersonates.
    fn from_str(s: &str) -> Result<Self> {
        let num = |t: &str| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::config(format!("bad attack pair '{s}' (A or A-B)")))
        };
        match s.split_once('-') {
            None => Ok(Self {
                attacker: num(s)?,
                target: None,
            }),
            Some((a, b)) => Ok(Self {
                attacker: num(a)?,
                target: Some(num(b)?),
            }),
        }
    }
}

/// What a sweep varies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "axis", content = "grid")]
pub enum SweepAxis {
    Combinations(Vec<usize>),
    Sizes(Vec<usize>),
    Conditions { condition: Condition, values: Vec<f64> },
}

impl SweepAxis {
    pub fn name(&self) -> String {
        match self {
            SweepAxis::Combinations(_) => "combinations".into(),
            SweepAxis::Sizes(_) => "sizes".into(),
            SweepAxis::Conditions { condition, .. } => format!("condition-{condition}"),
        }
    }

    fn len(&self) -> usize {
        match self {
            SweepAxis::Combinations(v) | SweepAxis::Sizes(v) => v.len(),
            SweepAxis::Conditions { values, .. } => values.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub axis: SweepAxis,
    pub pairs: Vec<AttackPair>,
    pub repetitions: usize,
    /// Candidates crafted per trained generator.
    pub craft_count: usize,
    /// Combination used when the axis is not combinations.
    pub combination: usize,
    /// Slot size used when the axis is not sizes.
    pub sticker_size: usize,
    /// Frames per condition value.
    pub condition_frames: usize,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn new(axis: SweepAxis, pairs: Vec<AttackPair>) -> Self {
        Self {
            axis,
            pairs,
            repetitions: 1,
            craft_count: 5,
            combination: crate::attack::DEFAULT_COMBINATION,
            sticker_size: crate::render::DEFAULT_SLOT,
            condition_frames: 20,
            train: TrainConfig::default(),
        }
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        if self.axis.len() == 0 {
            return Err(Error::config("sweep grid is empty"));
        }
        if self.pairs.is_empty() || self.repetitions == 0 || self.craft_count == 0 || self.condition_frames == 0 {
            return Err(Error::config("pairs, repetitions, craft count and frame count must be nonempty"));
        }
        match &self.axis {
            SweepAxis::Combinations(ids) => {
                for &id in ids {
                    RegionCombination::by_id(id)?;
                }
            }
            SweepAxis::Sizes(sizes) => {
                if sizes.contains(&0) {
                    return Err(Error::config("sticker sizes must be positive"));
                }
            }
            SweepAxis::Conditions { condition, values } => {
                for &v in values {
                    let ok = match condition {
                        Condition::Pose => v.abs() <= 30.0,
                        _ => v.is_finite() && v > 0.0,
                    };
                    if !ok {
                        return Err(Error::config(format!("{condition} value {v} out of range")));
                    }
                }
            }
        }
        RegionCombination::by_id(self.combination)?;
        let combo = RegionCombination::by_id(self.combination)?;
        for p in &self.pairs {
            p.spec(combo).validate(classes)?;
        }
        self.train.validate()
    }
}

/// Everything a sweep reads.
pub struct SweepInputs<'a> {
    pub frs: &'a FrSystem,
    pub dataset: &'a FaceDataset,
    pub corpus: &'a ShapeCorpus,
    pub pretrained: Option<&'a ShapeGan>,
    /// Needed for condition sweeps, which regenerate frames.
    pub faces: Option<&'a SyntheticFaces>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub pair: AttackPair,
    pub repetition: usize,
    pub chosen: usize,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub key: String,
    pub cells: Vec<SweepCell>,
    pub mean_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub axis: String,
    pub rows: Vec<SweepRow>,
    /// Full-scale numbers shown beside the desk-scale rows.
    pub reference: Vec<String>,
}

impl SweepTable {
    /// Row with the highest mean rate (first on ties).
    pub fn best(&self) -> Option<&SweepRow> {
        self.rows
            .iter()
            .fold(None, |b: Option<&SweepRow>, r| match b {
                Some(b) if b.mean_rate >= r.mean_rate => Some(b),
                _ => Some(r),
            })
    }

    pub fn is_non_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].mean_rate >= w[0].mean_rate)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("key\tmean_rate\tcells\n");
        for r in &self.rows {
            let cells: Vec<String> = r
                .cells
                .iter()
                .map(|c| format!("{}@{}:{:.4}", c.pair, c.repetition, c.success_rate))
                .collect();
            let _ = writeln!(out, "{}\t{:.6}\t{}", r.key, r.mean_rate, cells.join(","));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("sweep: {}\n\n{:<28} {:>10}\n", self.axis, "value", "success");
        for r in &self.rows {
            let _ = writeln!(out, "{:<28} {:>9.2}%", r.key, 100.0 * r.mean_rate);
        }
        if let Some(b) = self.best() {
            let _ = writeln!(out, "\nbest: {}", b.key);
        }
        if self.axis == "sizes" {
            let _ = writeln!(out, "non-decreasing in size: {}", if self.is_non_decreasing() { "yes" } else { "no" });
        }
        if !self.reference.is_empty() {
            out.push_str("\nfull-scale reference (physical setup, not reproduced at desk scale):\n");
            for l in &self.reference {
                let _ = writeln!(out, "  {l}");
            }
        }
        out
    }
}

fn reference_rows(axis: &SweepAxis) -> Vec<String> {
    match axis {
        SweepAxis::Combinations(_) => vec![
            "best combination on ArcFace: #8".into(),
            "best combination on CosFace: #3".into(),
            "best combination on FaceNet: #1".into(),
        ],
        SweepAxis::Sizes(_) => vec![
            "ArcFace  80px 16.89%  90px 35.78%  100px 56.67%".into(),
            "CosFace  80px 58.00%  90px 78.67%  100px 89.33%".into(),
            "FaceNet  80px 89.78%  90px 94.89%  100px 99.78%".into(),
        ],
        SweepAxis::Conditions { .. } => Vec::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CellConfig {
    spec: AttackSpec,
    sticker_size: usize,
    train: TrainConfig,
}

/// Trains the cell's attack, or reloads it when `dir` already holds a
/// generator trained with the same settings.
fn trained_generator(inputs: &SweepInputs<'_>, cell: &CellConfig, assets: &[FaceAsset], dir: &Path) -> Result<Generator> {
    let files = RunFiles::new(dir);
    let cfg_path = dir.join("cell.json");
    let resolved = serde_json::to_string_pretty(cell).expect("cell config serializes");
    if files.generator().exists() && std::fs::read_to_string(&cfg_path).ok().as_deref() == Some(resolved.as_str()) {
        return Generator::load(&files.generator());
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    std::fs::write(&cfg_path, &resolved).map_err(|e| Error::io(&cfg_path, e))?;
    let mut t = AttackTrainer::new(inputs.frs, assets, &cell.spec, inputs.corpus, &cell.train, inputs.pretrained)?;
    run_attack_to_dir(&mut t, dir, None, None)?;
    Ok(t.generator().clone())
}

fn sized(assets: &[FaceAsset], size: usize) -> Result<Vec<FaceAsset>> {
    assets.iter().map(|a| a.with_slot_size(size)).collect()
}

/// Runs every cell of the sweep under `out`, one directory per cell.
/// Cells already trained with identical settings are reused, so repeated
/// runs give identical tables.
pub fn run_sweep(inputs: &SweepInputs<'_>, config: &ExperimentConfig, out: &Path) -> Result<SweepTable> {
    config.validate(inputs.frs.class_names().len())?;
    let ds = inputs.dataset;
    let assets_of = |label: usize, split: Split| -> Vec<FaceAsset> {
        ds.of_label(label, split).iter().map(|&i| ds.samples[i].asset.clone()).collect()
    };
    struct Point {
        key: String,
        combination: RegionCombination,
        size: usize,
        condition: Option<(Condition, f64)>,
    }
    let base_combo = RegionCombination::by_id(config.combination)?;
    let points: Vec<Point> = match &config.axis {
        SweepAxis::Combinations(ids) => ids
            .iter()
            .map(|&id| {
                let c = RegionCombination::by_id(id)?;
                Ok(Point {
                    key: c.to_string(),
                    combination: c,
                    size: config.sticker_size,
                    condition: None,
                })
            })
            .collect::<Result<_>>()?,
        SweepAxis::Sizes(sizes) => sizes
            .iter()
            .map(|&s| Point {
                key: format!("{s}px"),
                combination: base_combo,
                size: s,
                condition: None,
            })
            .collect(),
        SweepAxis::Conditions { condition, values } => {
            if *condition != Condition::Distance && inputs.faces.is_none() {
                return Err(Error::config("condition sweeps need the synthetic face settings"));
            }
            values
                .iter()
                .map(|&v| Point {
                    key: format!("{condition}={v}"),
                    combination: base_combo,
                    size: config.sticker_size,
                    condition: Some((*condition, v)),
                })
                .collect()
        }
    };
    let mut rows = Vec::with_capacity(points.len());
    for p in &points {
        let mut cells = Vec::new();
        for pair in &config.pairs {
            let spec = pair.spec(p.combination);
            let train_assets = sized(&assets_of(pair.attacker, Split::Train), p.size)?;
            let selection = FrameBank::new(train_assets.clone())?;
            let heldout = match (p.condition, inputs.faces) {
                (Some((c, v)), Some(f)) if c != Condition::Distance => {
                    FrameBank::new(sized(&condition_frames(f, pair.attacker, Some((c, v)), config.condition_frames)?, p.size)?)?
                }
                _ => FrameBank::new(sized(&assets_of(pair.attacker, Split::Test), p.size)?)?,
            };
            let distance = match p.condition {
                Some((Condition::Distance, v)) => Some(v),
                _ => None,
            };
            for rep in 0..config.repetitions {
                let train = TrainConfig {
                    seed: derive_seed(config.train.seed, &[rep as u64]),
                    ..config.train.clone()
                };
                let cell = CellConfig {
                    spec: spec.clone(),
                    sticker_size: p.size,
                    train,
                };
                // Condition values share one trained attack per pair.
                let cell_key = match p.condition {
                    Some(_) => format!("attack-{pair}-r{rep}"),
                    None => format!("{}-{pair}-r{rep}", p.key.split_whitespace().next().unwrap_or(&p.key)),
                };
                let dir = out.join(config.axis.name()).join(cell_key.replace('#', "c"));
                let g = trained_generator(inputs, &cell, &train_assets, &dir)?;
                let anchors = spec.combination.anchors(&train_assets[0])?;
                let ev = craft_and_evaluate(
                    inputs.frs,
                    &g,
                    &anchors,
                    &selection,
                    &heldout,
                    &spec,
                    config.craft_count,
                    cell.train.seed,
                    distance,
                )?;
                cells.push(SweepCell {
                    pair: *pair,
                    repetition: rep,
                    chosen: ev.chosen,
                    success_rate: ev.report.success_rate,
                });
            }
        }
        let mean_rate = cells.iter().map(|c| c.success_rate).sum::<f64>() / cells.len() as f64;
        rows.push(SweepRow {
            key: p.key.clone(),
            cells,
            mean_rate,
        });
    }
    Ok(SweepTable {
        axis: config.axis.name(),
        rows,
        reference: reference_rows(&config.axis),
    })
}

/// Default grid for a combinations sweep: all ten.
pub fn all_combination_ids() -> Vec<usize> {
    enumerate_combinations().iter().map(|c| c.id).collect()
}

/// Writes one RGBA PNG per sticker (alpha is the mask binarized at
/// `threshold`) and `placement.txt` listing region, slot size and pose of
/// each slot. Returns the PNG paths.
pub fn export_stickers(set: &StickerSet, dir: &Path, threshold: f64) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut sheet = String::from("file\tregion\tslot_px\tcenter_u\tcenter_v\torientation_deg\n");
    let mut paths = Vec::with_capacity(set.items.len());
    for (i, it) in set.items.iter().enumerate() {
        let n = it.sticker.dim(1);
        let np = n * n;
        let (s, m) = (it.sticker.data(), it.mask.data());
        let rgba: Vec<u8> = (0..np)
            .flat_map(|p| {
                let a = if m[p] > threshold { 255 } else { 0 };
                [0, 1, 2]
                    .map(|c| (s[c * np + p].clamp(0.0, 1.0) * 255.0).round() as u8)
                    .into_iter()
                    .chain(std::iter::once(a))
            })
            .collect();
        let name = format!("sticker-{i}-{}.png", it.region.name.key());
        let path = dir.join(&name);
        save_rgba8(&path, n, n, &rgba)?;
        let r = &it.region;
        let _ = writeln!(
            sheet,
            "{name}\t{}\t{}\t{:.6}\t{:.6}\t{:.3}",
            r.name.label(),
            r.slot_size,
            r.center_uv[0],
            r.center_uv[1],
            r.orientation_deg
        );
        paths.push(path);
    }
    let sheet_path = dir.join("placement.txt");
    std::fs::write(&sheet_path, sheet).map_err(|e| Error::io(&sheet_path, e))?;
    Ok(paths)
}

/// Reads an exported sticker back: rgb `[3, n, n]` and the 0/1 mask
/// `[1, n, n]`.
pub fn import_sticker(path: &Path) -> Result<(Tensor, Tensor)> {
    let png = load_png(path)?;
    if png.channels != 4 || png.width != png.height {
        return Err(Error::Image {
            path: path.to_path_buf(),
            reason: "expected a square RGBA sticker".into(),
        });
    }
    let n = png.width;
    let np = n * n;
    let mut rgb = vec![0.0; 3 * np];
    let mut mask = vec![0.0; np];
    for p in 0..np {
        for c in 0..3 {
            rgb[c * np + p] = f64::from(png.data[4 * p + c]) / 255.0;
        }
        mask[p] = f64::from(u8::from(png.data[4 * p + 3] > 127));
    }
    Ok((Tensor::new(rgb, &[3, n, n]), Tensor::new(mask, &[1, n, n])))
}

#[cfg(test)]
mod tests;
