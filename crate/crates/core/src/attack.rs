//! Attack specification and the alternating critic/generator training loop.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::fr::FrSystem;
use crate::gan::{sample_noise, Discriminator, GanArch, Generator};
use crate::losses::{
    adversarial_loss, critic_loss, generator_shape_loss, total_generator_loss, tv_loss, Classifier, Critic,
    LossWeights,
};
use crate::nn::{Adam, NormState};
use crate::render::{to_unit, FaceAsset, RegionAnchor, AugmentParams, RenderCache, StickerItem, StickerScene, StickerSet};
use crate::saliency::RegionCombination;
use crate::seed::{derive_seed, rng_for};
use crate::shapes::{sample_batch_tensor, ShapeCorpus, MASK_SIZE};
use crate::tensor::{no_grad, Tensor};

pub const DEFAULT_COMBINATION: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMode {
    Dodging,
    Impersonating,
}

impl std::fmt::Display for AttackMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AttackMode::Dodging => "dodging",
            AttackMode::Impersonating => "impersonating",
        })
    }
}

impl std::str::FromStr for AttackMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dodging" | "dodge" => Ok(AttackMode::Dodging),
            "impersonating" | "impersonate" => Ok(AttackMode::Impersonating),
            _ => Err(Error::config(format!("unknown attack mode '{s}' (dodge, impersonate)"))),
        }
    }
}

/// Who attacks whom, and where the stickers go. `target` is only used when
/// impersonating.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub mode: AttackMode,
    pub attacker: usize,
    pub target: Option<usize>,
    pub combination: RegionCombination,
}

impl AttackSpec {
    pub fn dodging(attacker: usize) -> Self {
        Self {
            mode: AttackMode::Dodging,
            attacker,
            target: None,
            combination: RegionCombination::by_id(DEFAULT_COMBINATION).expect("default combination exists"),
        }
    }

    pub fn impersonating(attacker: usize, target: usize) -> Self {
        Self {
            mode: AttackMode::Impersonating,
            target: Some(target),
            ..Self::dodging(attacker)
        }
    }

    pub fn with_combination(mut self, combination: RegionCombination) -> Self {
        self.combination = combination;
        self
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        if self.attacker >= classes {
            return Err(Error::invalid(format!("attacker label {} outside {classes} classes", self.attacker)));
        }
        if self.mode == AttackMode::Impersonating {
            match self.target {
                None => return Err(Error::invalid("impersonation needs a target label")),
                Some(t) if t >= classes => {
                    return Err(Error::invalid(format!("target label {t} outside {classes} classes")))
                }
                Some(t) if t == self.attacker => {
                    return Err(Error::invalid("target must differ from the attacker"))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Whether predicting `label` counts as a successful attack.
    pub fn is_success(&self, label: usize) -> bool {
        match self.mode {
            AttackMode::Dodging => label != self.attacker,
            AttackMode::Impersonating => Some(label) == self.target,
        }
    }
}

/// Hyperparameters of the attack loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub critic_steps: usize,
    pub epochs: usize,
    pub seed: u64,
    pub adam_betas: (f64, f64),
    /// Architecture preset used when no pretrained networks are given.
    pub arch: String,
    pub checkpoint_every: usize,
    /// Random scale/rotation/shift of every sticker at every step.
    pub augment: bool,
    /// Keep the shape heads fixed and train sticker content only.
    pub freeze_shape_heads: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 100.0,
            beta: 1.0,
            lambda: 10.0,
            lr: 5e-4,
            batch_size: 16,
            critic_steps: 5,
            epochs: 500,
            seed: 0,
            adam_betas: (0.5, 0.9),
            arch: "desk".into(),
            checkpoint_every: 50,
            augment: true,
            freeze_shape_heads: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [("alpha", self.alpha), ("beta", self.beta), ("lambda", self.lambda), ("lr", self.lr)];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::config(format!("{name} must be finite and nonnegative, got {v}")));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        if self.batch_size == 0 || self.critic_steps == 0 || self.epochs == 0 || self.checkpoint_every == 0 {
            return Err(Error::config("batch size, critic steps, epochs and checkpoint cadence must be positive"));
        }
        let (b1, b2) = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::config("optimizer betas must lie in [0, 1)"));
        }
        GanArch::preset(&self.arch, 1).map(|_| ())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
        }
    }
}

/// Generator and critic trained on shapes only.
#[derive(Debug, Clone)]
pub struct ShapeGan {
    pub generator: Generator,
    pub discriminator: Discriminator,
}

impl ShapeGan {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut arrays = self.generator.params.to_arrays("g.");
        arrays.extend(self.discriminator.params.to_arrays("d."));
        Checkpoint::new("shape-gan", self.generator.arch(), arrays)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let arch: GanArch = ck.descriptor_as("shape-gan")?;
        let mut generator = Generator::new(&arch, 0)?;
        let mut discriminator = Discriminator::new(&arch, 0)?;
        generator.params.load_arrays(&ck.arrays, "g.")?;
        discriminator.params.load_arrays(&ck.arrays, "d.")?;
        Ok(Self {
            generator,
            discriminator,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepKind {
    Critic,
    Generator,
}

/// One optimizer update. Losses that a step does not compute are NaN and
/// print as `-`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub epoch: usize,
    pub kind: StepKind,
    pub critic: f64,
    pub shape: f64,
    pub adversarial: f64,
    pub tv: f64,
    pub generator: f64,
}

pub const LOG_HEADER: &str = "step\tepoch\tkind\tL_D\tL_Gs\tL_adv\tL_tv\tL_G";

fn fmt_loss(v: f64) -> String {
    if v.is_nan() {
        "-".into()
    } else {
        format!("{v:e}")
    }
}

fn parse_loss(s: &str) -> Option<f64> {
    if s == "-" {
        Some(f64::NAN)
    } else {
        s.parse().ok()
    }
}

impl LogRecord {
    pub fn to_line(&self) -> String {
        let kind = match self.kind {
            StepKind::Critic => "critic",
            StepKind::Generator => "generator",
        };
        format!(
            "{}\t{}\t{kind}\t{}\t{}\t{}\t{}\t{}",
            self.step,
            self.epoch,
            fmt_loss(self.critic),
            fmt_loss(self.shape),
            fmt_loss(self.adversarial),
            fmt_loss(self.tv),
            fmt_loss(self.generator)
        )
    }

    pub fn parse(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 8 {
            return None;
        }
        Some(Self {
            step: f[0].parse().ok()?,
            epoch: f[1].parse().ok()?,
            kind: match f[2] {
                "critic" => StepKind::Critic,
                "generator" => StepKind::Generator,
                _ => return None,
            },
            critic: parse_loss(f[3])?,
            shape: parse_loss(f[4])?,
            adversarial: parse_loss(f[5])?,
            tv: parse_loss(f[6])?,
            generator: parse_loss(f[7])?,
        })
    }
}

/// Renders a whole log, header included.
pub fn format_log(records: &[LogRecord]) -> String {
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(out, "{}", r.to_line());
    }
    out
}

pub fn parse_log(text: &str) -> Result<Vec<LogRecord>> {
    text.lines()
        .skip_while(|l| l.starts_with("step"))
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, l)| LogRecord::parse(l).ok_or_else(|| Error::invalid(format!("bad log record {}: '{l}'", i + 1))))
        .collect()
}

fn critic_refs(d: &Discriminator) -> Vec<impl Fn(&Tensor) -> Tensor + '_> {
    (0..d.branch_count()).map(|b| d.critic(b)).collect()
}

/// Per-branch critic update on fresh noise and fresh corpus draws.
/// `tags` keys every random draw of this step.
fn critic_step(
    g: &Generator,
    d: &mut Discriminator,
    opt: &mut Adam,
    corpus: &ShapeCorpus,
    m: usize,
    lambda: f64,
    seed: u64,
    tags: &[u64],
) -> Result<f64> {
    let k = g.branch_count();
    let noise = sample_noise(m, derive_seed(seed, &[tags, &[0x2a]].concat()));
    let fakes: Vec<Tensor> = no_grad(|| {
        let mut st = NormState::train();
        g.forward_shapes(&noise, &mut st).map(|v| v.iter().map(to_unit).collect())
    })?;
    let mut reals = Vec::with_capacity(k);
    let mut eps = Vec::with_capacity(k);
    for b in 0..k as u64 {
        reals.push(sample_batch_tensor(corpus, m, derive_seed(seed, &[tags, &[0x5a, b]].concat()))?);
        let mut rng = rng_for(seed, &[tags, &[0xe5, b]].concat());
        eps.push((0..m).map(|_| rng.random_range(0.0..=1.0)).collect());
    }
    let critics = critic_refs(d);
    let crefs: Vec<&dyn Critic> = critics.iter().map(|c| c as &dyn Critic).collect();
    let loss = critic_loss(&crefs, &fakes, &reals, &eps, lambda)?;
    let v = loss.total.item();
    drop(crefs);
    drop(critics);
    let total = loss.total;
    opt.minimize(&mut d.params, &total, &[]);
    Ok(v)
}

fn diverged(step: usize, what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence {
            step,
            detail: format!("{what} loss is {v}"),
        })
    }
}

/// Hyperparameters of shape-only pretraining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub arch: String,
    pub branches: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub critic_steps: usize,
    pub lambda: f64,
    pub lr: f64,
    pub adam_betas: (f64, f64),
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            arch: "desk".into(),
            branches: 3,
            epochs: 300,
            batch_size: 16,
            critic_steps: 5,
            lambda: 10.0,
            lr: 5e-4,
            adam_betas: (0.5, 0.9),
            seed: 0,
        }
    }
}

/// Trains generator shape heads and critics with the GAN objective only.
pub fn pretrain_shape_gan(corpus: &ShapeCorpus, cfg: &PretrainConfig) -> Result<(ShapeGan, Vec<LogRecord>)> {
    if corpus.is_empty() {
        return Err(Error::invalid("shape corpus is empty"));
    }
    if corpus.size() != MASK_SIZE {
        return Err(Error::invalid(format!("corpus masks must be {MASK_SIZE}x{MASK_SIZE}")));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 || cfg.critic_steps == 0 || !(cfg.lr > 0.0) {
        return Err(Error::config("epochs, batch size, critic steps and learning rate must be positive"));
    }
    let arch = GanArch::preset(&cfg.arch, cfg.branches)?;
    let mut g = Generator::new(&arch, cfg.seed)?;
    let mut d = Discriminator::new(&arch, cfg.seed)?;
    let (b1, b2) = cfg.adam_betas;
    let mut opt_g = Adam::new(&g.params, cfg.lr, b1, b2);
    let mut opt_d = Adam::new(&d.params, cfg.lr, b1, b2);
    let mut log = Vec::new();
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let e = epoch as u64;
        for t in 0..cfg.critic_steps as u64 {
            step += 1;
            let l = critic_step(&g, &mut d, &mut opt_d, corpus, cfg.batch_size, cfg.lambda, cfg.seed, &[0x9e, e, t])?;
            diverged(step, "critic", l)?;
            log.push(LogRecord {
                step,
                epoch,
                kind: StepKind::Critic,
                critic: l,
                shape: f64::NAN,
                adversarial: f64::NAN,
                tv: f64::NAN,
                generator: f64::NAN,
            });
        }
        step += 1;
        let noise = sample_noise(cfg.batch_size, derive_seed(cfg.seed, &[0x9e, e, 0x6e]));
        let mut st = NormState::train();
        let shapes: Vec<Tensor> = g.forward_shapes(&noise, &mut st)?.iter().map(to_unit).collect();
        let critics = critic_refs(&d);
        let crefs: Vec<&dyn Critic> = critics.iter().map(|c| c as &dyn Critic).collect();
        let loss = generator_shape_loss(&crefs, &shapes)?;
        let v = loss.item();
        diverged(step, "shape", v)?;
        opt_g.minimize(&mut g.params, &loss, &[]);
        st.apply(&mut g.params);
        log.push(LogRecord {
            step,
            epoch,
            kind: StepKind::Generator,
            critic: f64::NAN,
            shape: v,
            adversarial: f64::NAN,
            tv: f64::NAN,
            generator: v,
        });
    }
    Ok((
        ShapeGan {
            generator: g,
            discriminator: d,
        },
        log,
    ))
}

/// Result of an attack run.
#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub log: Vec<LogRecord>,
    pub epochs_run: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StateDescriptor {
    arch: GanArch,
    epoch: usize,
    step: usize,
    spec: AttackSpec,
    config: TrainConfig,
}

/// Stepwise driver for the attack loop; [`train_attack`] runs it to the end
/// in memory.
pub struct AttackTrainer<'a> {
    frs: &'a FrSystem,
    spec: AttackSpec,
    corpus: &'a ShapeCorpus,
    config: TrainConfig,
    scenes: Vec<StickerScene>,
    anchors: Vec<RegionAnchor>,
    g: Generator,
    d: Discriminator,
    opt_g: Adam,
    opt_d: Adam,
    epoch: usize,
    step: usize,
    log: Vec<LogRecord>,
}

impl<'a> AttackTrainer<'a> {
    pub fn new(
        frs: &'a FrSystem,
        assets: &[FaceAsset],
        spec: &AttackSpec,
        corpus: &'a ShapeCorpus,
        config: &TrainConfig,
        pretrained: Option<&ShapeGan>,
    ) -> Result<Self> {
        config.validate()?;
        spec.validate(frs.num_classes())?;
        if !frs.is_frozen() {
            return Err(Error::invalid("the recognizer must be frozen before attacking it"));
        }
        if assets.is_empty() {
            return Err(Error::invalid("no attacker assets"));
        }
        if corpus.is_empty() {
            return Err(Error::invalid("shape corpus is empty"));
        }
        let (g, d) = match pretrained {
            Some(p) => (p.generator.clone(), p.discriminator.clone()),
            None => {
                let arch = GanArch::preset(&config.arch, 3)?;
                (Generator::new(&arch, config.seed)?, Discriminator::new(&arch, config.seed)?)
            }
        };
        if g.branch_count() != 3 || d.branch_count() != 3 {
            return Err(Error::invalid("a region combination needs a three-branch generator"));
        }
        let anchors = spec.combination.anchors(&assets[0])?;
        let mut scenes = Vec::with_capacity(assets.len());
        for a in assets {
            let own = spec.combination.anchors(a)?;
            let cache = RenderCache::new(a)?;
            scenes.push(StickerScene::new(&cache, &own, MASK_SIZE, Some(frs.input_size()))?);
        }
        let (b1, b2) = config.adam_betas;
        Ok(Self {
            opt_g: Adam::new(&g.params, config.lr, b1, b2),
            opt_d: Adam::new(&d.params, config.lr, b1, b2),
            frs,
            spec: spec.clone(),
            corpus,
            config: config.clone(),
            scenes,
            anchors,
            g,
            d,
            epoch: 0,
            step: 0,
            log: Vec::new(),
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn generator(&self) -> &Generator {
        &self.g
    }

    pub fn discriminator(&self) -> &Discriminator {
        &self.d
    }

    pub fn log(&self) -> &[LogRecord] {
        &self.log
    }

    /// Template anchors of the attacked regions, for crafting.
    pub fn anchors(&self) -> &[RegionAnchor] {
        &self.anchors
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    /// One epoch: `n_D` critic updates, then one generator update.
    pub fn step_epoch(&mut self) -> Result<()> {
        let cfg = self.config.clone();
        let epoch = self.epoch + 1;
        let e = epoch as u64;
        let m = cfg.batch_size;
        for t in 0..cfg.critic_steps as u64 {
            self.step += 1;
            let l = critic_step(&self.g, &mut self.d, &mut self.opt_d, self.corpus, m, cfg.lambda, cfg.seed, &[0xc1, e, t])?;
            diverged(self.step, "critic", l)?;
            self.log.push(LogRecord {
                step: self.step,
                epoch,
                kind: StepKind::Critic,
                critic: l,
                shape: f64::NAN,
                adversarial: f64::NAN,
                tv: f64::NAN,
                generator: f64::NAN,
            });
        }
        self.step += 1;
        let noise = sample_noise(m, derive_seed(cfg.seed, &[0x6e, e]));
        let mut st = NormState::train();
        let outs = self.g.forward(&noise, &mut st)?;
        let shapes: Vec<Tensor> = outs.iter().map(|o| to_unit(&o.shape)).collect();
        let critics = critic_refs(&self.d);
        let crefs: Vec<&dyn Critic> = critics.iter().map(|c| c as &dyn Critic).collect();
        let shape_loss = generator_shape_loss(&crefs, &shapes)?;
        let stickers: Vec<Tensor> = outs.iter().map(|o| to_unit(&o.sticker)).collect();
        let tv = tv_loss(&stickers);
        let pairs: Vec<(Tensor, Tensor)> = outs.iter().map(|o| (o.sticker.clone(), o.shape.clone())).collect();
        let mut pick = rng_for(cfg.seed, &[0xa5, e]);
        let o = self.frs.input_size();
        let mut images = Vec::with_capacity(m);
        for i in 0..m {
            let scene = &self.scenes[pick.random_range(0..self.scenes.len())];
            let aug: Option<Vec<AugmentParams>> = cfg.augment.then(|| {
                (0..pairs.len() as u64)
                    .map(|b| AugmentParams::sample(&mut rng_for(cfg.seed, &[0xa6, e, i as u64, b])))
                    .collect()
            });
            images.push(scene.render_sample(&pairs, i, aug.as_deref(), false)?.reshape(&[1, 3, o, o]));
        }
        let batch = Tensor::concat(&images, 0);
        let adv = adversarial_loss(self.frs, &batch, &self.spec)?;
        let total = total_generator_loss(&shape_loss, &adv, &tv, &cfg.weights()).map_err(|e| match e {
            Error::Divergence { detail, .. } => Error::Divergence { step: self.step, detail },
            other => other,
        })?;
        let frozen = if cfg.freeze_shape_heads {
            self.g.shape_head_params()
        } else {
            Vec::new()
        };
        let record = LogRecord {
            step: self.step,
            epoch,
            kind: StepKind::Generator,
            critic: f64::NAN,
            shape: shape_loss.item(),
            adversarial: adv.item(),
            tv: tv.item(),
            generator: total.item(),
        };
        drop(crefs);
        drop(critics);
        self.opt_g.minimize(&mut self.g.params, &total, &frozen);
        st.apply(&mut self.g.params);
        self.log.push(record);
        self.epoch = epoch;
        Ok(())
    }

    /// Full training state: networks, optimizer moments and counters.
    pub fn state_checkpoint(&self) -> Checkpoint {
        let desc = StateDescriptor {
            arch: self.g.arch().clone(),
            epoch: self.epoch,
            step: self.step,
            spec: self.spec.clone(),
            config: self.config.clone(),
        };
        let mut arrays = self.g.params.to_arrays("g.");
        arrays.extend(self.d.params.to_arrays("d."));
        arrays.extend(self.opt_g.to_arrays("og."));
        arrays.extend(self.opt_d.to_arrays("od."));
        Checkpoint::new("attack-state", &desc, arrays)
    }

    /// Restores a state written by [`AttackTrainer::state_checkpoint`]. The
    /// spec and every setting except `epochs` must match. The log is cut
    /// back to the checkpoint's step.
    pub fn restore(&mut self, ck: &Checkpoint, log: Vec<LogRecord>) -> Result<()> {
        let desc: StateDescriptor = ck.descriptor_as("attack-state")?;
        let mut want = self.config.clone();
        want.epochs = desc.config.epochs;
        if desc.spec != self.spec || desc.config != want || &desc.arch != self.g.arch() {
            return Err(Error::invalid("checkpoint was written by a different attack configuration"));
        }
        self.g.params.load_arrays(&ck.arrays, "g.")?;
        self.d.params.load_arrays(&ck.arrays, "d.")?;
        self.opt_g.load_arrays(&ck.arrays, "og.")?;
        self.opt_d.load_arrays(&ck.arrays, "od.")?;
        self.epoch = desc.epoch;
        self.step = desc.step;
        self.log = log.into_iter().filter(|r| r.step <= desc.step).collect();
        if self.log.len() != desc.step {
            return Err(Error::invalid(format!(
                "log holds {} records up to step {}, expected {}",
                self.log.len(),
                desc.step,
                desc.step
            )));
        }
        Ok(())
    }

    pub fn into_outcome(self) -> AttackOutcome {
        AttackOutcome {
            generator: self.g,
            discriminator: self.d,
            log: self.log,
            epochs_run: self.epoch,
        }
    }
}

/// Runs every epoch of `config` and returns the trained networks and log.
pub fn train_attack(
    frs: &FrSystem,
    assets: &[FaceAsset],
    spec: &AttackSpec,
    corpus: &ShapeCorpus,
    config: &TrainConfig,
    pretrained: Option<&ShapeGan>,
) -> Result<AttackOutcome> {
    let mut t = AttackTrainer::new(frs, assets, spec, corpus, config, pretrained)?;
    while !t.is_done() {
        t.step_epoch()?;
    }
    Ok(t.into_outcome())
}

/// File names inside an attack run directory.
pub struct RunFiles {
    pub dir: PathBuf,
}

impl RunFiles {
    pub fn new(dir: &Path) -> Self {
        Self { dir: dir.to_path_buf() }
    }

    pub fn log(&self) -> PathBuf {
        self.dir.join("train.log")
    }

    pub fn state(&self, epoch: usize) -> PathBuf {
        self.dir.join(format!("state-{epoch:05}.ckpt"))
    }

    pub fn generator(&self) -> PathBuf {
        self.dir.join("generator.ckpt")
    }

    pub fn discriminator(&self) -> PathBuf {
        self.dir.join("discriminator.ckpt")
    }

    /// Newest state checkpoint, if any.
    pub fn latest_state(&self) -> Option<PathBuf> {
        let mut found: Vec<PathBuf> = std::fs::read_dir(&self.dir)
            .ok()?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("state-") && n.ends_with(".ckpt"))
            })
            .collect();
        found.sort();
        found.pop()
    }
}

/// Drives a trainer while writing the log, periodic state checkpoints and
/// final generator/critic checkpoints under `dir`. `monitor` is called
/// after every checkpoint with the epoch and generator; returning `true`
/// stops training early (the stop point is checkpointed like the end).
pub fn run_attack_to_dir(
    trainer: &mut AttackTrainer<'_>,
    dir: &Path,
    resume: Option<&Path>,
    mut monitor: Option<&mut dyn FnMut(usize, &Generator) -> Result<bool>>,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = RunFiles::new(dir);
    if let Some(state) = resume {
        let text = std::fs::read_to_string(files.log()).map_err(|e| Error::io(files.log(), e))?;
        trainer.restore(&Checkpoint::load(state)?, parse_log(&text)?)?;
    }
    let write_err = |e| Error::io(files.log(), e);
    std::fs::write(files.log(), format_log(trainer.log())).map_err(write_err)?;
    let mut log_file = std::fs::OpenOptions::new().append(true).open(files.log()).map_err(write_err)?;
    let every = trainer.config.checkpoint_every;
    while !trainer.is_done() {
        let before = trainer.log().len();
        trainer.step_epoch()?;
        let mut chunk = String::new();
        for r in &trainer.log()[before..] {
            chunk.push_str(&r.to_line());
            chunk.push('\n');
        }
        log_file.write_all(chunk.as_bytes()).map_err(write_err)?;
        let epoch = trainer.epoch();
        if epoch % every == 0 || trainer.is_done() {
            trainer.state_checkpoint().save(&files.state(epoch))?;
            if let Some(f) = monitor.as_mut() {
                if f(epoch, trainer.generator())? {
                    break;
                }
            }
        }
    }
    log_file.flush().map_err(write_err)?;
    let epoch = trainer.epoch();
    if !files.state(epoch).exists() {
        trainer.state_checkpoint().save(&files.state(epoch))?;
    }
    trainer.generator().save(&files.generator())?;
    trainer.discriminator().to_checkpoint().save(&files.discriminator())
}

/// `count` sticker sets from fresh noise. Batch norm uses its running
/// statistics; stickers and masks are mapped to `[0, 1]`.
pub fn craft_stickers(g: &Generator, count: usize, seed: u64, anchors: &[RegionAnchor]) -> Result<Vec<StickerSet>> {
    if anchors.len() != g.branch_count() {
        return Err(Error::invalid(format!(
            "{} anchors for a {}-branch generator",
            anchors.len(),
            g.branch_count()
        )));
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let noise = sample_noise(count, derive_seed(seed, &[0xc7]));
    let outs = no_grad(|| g.forward(&noise, &mut NormState::eval()))?;
    let n = MASK_SIZE;
    (0..count)
        .map(|i| {
            let items = outs
                .iter()
                .zip(anchors)
                .map(|(o, a)| StickerItem {
                    sticker: to_unit(&o.sticker.narrow(0, i, 1).reshape(&[3, n, n])),
                    mask: to_unit(&o.shape.narrow(0, i, 1).reshape(&[1, n, n])),
                    region: a.clone(),
                })
                .collect();
            StickerSet::new(items)
        })
        .collect()
}

#[cfg(test)]
mod tests;
