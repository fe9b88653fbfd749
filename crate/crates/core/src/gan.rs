//! Multi-branch sticker/shape generator and per-branch shape critics.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Conv, LayerNorm, Linear, NormState, ParamId, ParamStore};
use crate::seed::rng_for;
use crate::shapes::MASK_SIZE;
use crate::tensor::Tensor;

pub const NOISE_DIM: usize = 32;
const BASE: usize = 5;

/// Layer widths shared by the generator and the critic.
///
/// Spatial sizes are fixed: the generator goes 5 → 10 → 20 in the shared
/// layers and 20 → 40 → 80 in each head; the critic pools 80 → 5.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GanArch {
    pub branches: usize,
    pub fc_channels: usize,
    pub basic: [usize; 2],
    pub heads: [usize; 2],
    pub critic: [usize; 5],
}

impl GanArch {
    /// Full-width layers: FC to 5×5×640, basic 320/160, heads 80/40, critic
    /// 40/80/160/320/640.
    pub fn full(branches: usize) -> Self {
        Self {
            branches,
            fc_channels: 640,
            basic: [320, 160],
            heads: [80, 40],
            critic: [40, 80, 160, 320, 640],
        }
    }

    /// Every width divided by ten; the default on a single CPU core.
    pub fn desk(branches: usize) -> Self {
        Self {
            branches,
            fc_channels: 64,
            basic: [32, 16],
            heads: [8, 4],
            critic: [4, 8, 16, 32, 64],
        }
    }

    /// Minimal widths for unit tests.
    pub fn tiny(branches: usize) -> Self {
        Self {
            branches,
            fc_channels: 8,
            basic: [8, 4],
            heads: [4, 2],
            critic: [2, 2, 4, 4, 8],
        }
    }

    pub fn preset(name: &str, branches: usize) -> Result<Self> {
        match name {
            "full" => Ok(Self::full(branches)),
            "desk" => Ok(Self::desk(branches)),
            "tiny" => Ok(Self::tiny(branches)),
            _ => Err(Error::config(format!("unknown architecture preset '{name}'"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.branches == 0 {
            return Err(Error::config("branch count must be at least 1"));
        }
        let fc = [self.fc_channels];
        let mut widths = fc.iter().chain(&self.basic).chain(&self.heads).chain(&self.critic);
        if widths.any(|&w| w == 0) {
            return Err(Error::config("layer widths must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Block {
    conv: Conv,
    bn: BatchNorm,
}

impl Block {
    fn new(ps: &mut ParamStore, name: &str, cin: usize, cout: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Self {
        Self {
            conv: Conv::new(ps, &format!("{name}.conv"), cin, cout, 3, rng),
            bn: BatchNorm::new(ps, &format!("{name}.bn"), cout),
        }
    }

    /// Upsample, conv, batch norm, ReLU.
    fn forward(&self, ps: &ParamStore, x: &Tensor, st: &mut NormState) -> Tensor {
        self.bn.forward(ps, &self.conv.forward(ps, &x.upsample2()), st).relu()
    }
}

#[derive(Debug, Clone)]
struct Head {
    blocks: [Block; 2],
    out: Conv,
}

impl Head {
    fn forward(&self, ps: &ParamStore, x: &Tensor, st: &mut NormState) -> Tensor {
        let h = self.blocks[1].forward(ps, &self.blocks[0].forward(ps, x, st), st);
        self.out.forward(ps, &h).tanh()
    }
}

#[derive(Debug, Clone)]
struct GenBranch {
    fc: Linear,
    bn0: BatchNorm,
    basic: [Block; 2],
    sticker: Head,
    shape: Head,
}

/// Generator output for one branch. Values lie in `(-1, 1)`.
#[derive(Debug, Clone)]
pub struct BranchOutput {
    /// `[m, 3, 80, 80]`
    pub sticker: Tensor,
    /// `[m, 1, 80, 80]`
    pub shape: Tensor,
}

#[derive(Debug, Clone)]
pub struct Generator {
    arch: GanArch,
    pub params: ParamStore,
    branches: Vec<GenBranch>,
}

impl Generator {
    pub fn new(arch: &GanArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = rng_for(seed, &[0x6e]);
        let mut ps = ParamStore::new();
        let a = arch;
        let branches = (0..a.branches)
            .map(|b| {
                let p = format!("b{b}");
                let fc_out = a.fc_channels * BASE * BASE;
                let head = |ps: &mut ParamStore, rng: &mut _, name: &str, out: usize| Head {
                    blocks: [
                        Block::new(ps, &format!("{p}.{name}0"), a.basic[1], a.heads[0], rng),
                        Block::new(ps, &format!("{p}.{name}1"), a.heads[0], a.heads[1], rng),
                    ],
                    out: Conv::new(ps, &format!("{p}.{name}.out"), a.heads[1], out, 3, rng),
                };
                GenBranch {
                    fc: Linear::new(&mut ps, &format!("{p}.fc"), NOISE_DIM, fc_out, &mut rng),
                    bn0: BatchNorm::new(&mut ps, &format!("{p}.fc.bn"), fc_out),
                    basic: [
                        Block::new(&mut ps, &format!("{p}.basic0"), a.fc_channels, a.basic[0], &mut rng),
                        Block::new(&mut ps, &format!("{p}.basic1"), a.basic[0], a.basic[1], &mut rng),
                    ],
                    sticker: head(&mut ps, &mut rng, "sticker", 3),
                    shape: head(&mut ps, &mut rng, "shape", 1),
                }
            })
            .collect();
        Ok(Self {
            arch: arch.clone(),
            params: ps,
            branches,
        })
    }

    pub fn arch(&self) -> &GanArch {
        &self.arch
    }

    pub fn branch_count(&self) -> usize {
        self.branches.len()
    }

    fn basic(&self, b: usize, noise: &Tensor, st: &mut NormState) -> Tensor {
        let br = &self.branches[b];
        let ps = &self.params;
        let m = noise.dim(0);
        let h = br.bn0.forward(ps, &br.fc.forward(ps, noise), st).relu();
        let h = h.reshape(&[m, self.arch.fc_channels, BASE, BASE]);
        br.basic[1].forward(ps, &br.basic[0].forward(ps, &h, st), st)
    }

    /// Every branch's sticker and shape heads for noise `[m, 32]`.
    pub fn forward(&self, noise: &Tensor, st: &mut NormState) -> Result<Vec<BranchOutput>> {
        check_noise(noise)?;
        Ok((0..self.branches.len())
            .map(|b| {
                let h = self.basic(b, noise, st);
                let br = &self.branches[b];
                BranchOutput {
                    sticker: br.sticker.forward(&self.params, &h, st),
                    shape: br.shape.forward(&self.params, &h, st),
                }
            })
            .collect())
    }

    /// Shape heads only; the sticker heads are skipped entirely.
    pub fn forward_shapes(&self, noise: &Tensor, st: &mut NormState) -> Result<Vec<Tensor>> {
        check_noise(noise)?;
        Ok((0..self.branches.len())
            .map(|b| {
                let h = self.basic(b, noise, st);
                self.branches[b].shape.forward(&self.params, &h, st)
            })
            .collect())
    }

    /// Trainable ids of every shape head.
    pub fn shape_head_params(&self) -> Vec<ParamId> {
        (0..self.branches.len())
            .flat_map(|b| self.params.trainable_with_prefix(&format!("b{b}.shape")))
            .collect()
    }

    /// Trainable ids of every sticker head.
    pub fn sticker_head_params(&self) -> Vec<ParamId> {
        (0..self.branches.len())
            .flat_map(|b| self.params.trainable_with_prefix(&format!("b{b}.sticker")))
            .collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new("generator", &self.arch, self.params.to_arrays("g."))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let arch: GanArch = ck.descriptor_as("generator")?;
        let mut g = Self::new(&arch, 0)?;
        g.params.load_arrays(&ck.arrays, "g.")?;
        Ok(g)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

fn check_noise(noise: &Tensor) -> Result<()> {
    if noise.ndim() != 2 || noise.dim(1) != NOISE_DIM || noise.dim(0) == 0 {
        return Err(Error::invalid(format!(
            "noise must be [m, {NOISE_DIM}], got {:?}",
            noise.shape()
        )));
    }
    Ok(())
}

/// Standard-normal noise `[m, 32]`.
pub fn sample_noise(m: usize, seed: u64) -> Tensor {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rng_for(seed, &[]);
    let data = (0..m * NOISE_DIM).map(|_| StandardNormal.sample(&mut rng)).collect();
    Tensor::new(data, &[m, NOISE_DIM])
}

#[derive(Debug, Clone)]
struct CriticBranch {
    convs: [Conv; 4],
    norms: [LayerNorm; 4],
    conv_out: Conv,
    norm_out: LayerNorm,
    fc: Linear,
}

/// One critic per generator branch, each scoring `[m, 1, 80, 80]` masks.
/// Normalization is per sample, so scores never couple across the batch.
#[derive(Debug, Clone)]
pub struct Discriminator {
    arch: GanArch,
    pub params: ParamStore,
    branches: Vec<CriticBranch>,
}

impl Discriminator {
    pub fn new(arch: &GanArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = rng_for(seed, &[0x64]);
        let mut ps = ParamStore::new();
        let c = arch.critic;
        let branches = (0..arch.branches)
            .map(|b| {
                let p = format!("b{b}");
                let mut cin = 1;
                let mut side = MASK_SIZE;
                let mut convs = Vec::new();
                let mut norms = Vec::new();
                for (k, &cout) in c[..4].iter().enumerate() {
                    convs.push(Conv::new(&mut ps, &format!("{p}.conv{k}"), cin, cout, 3, &mut rng));
                    norms.push(LayerNorm::new(&mut ps, &format!("{p}.ln{k}"), &[cout, side, side]));
                    cin = cout;
                    side /= 2;
                }
                CriticBranch {
                    convs: convs.try_into().expect("four convs"),
                    norms: norms.try_into().expect("four norms"),
                    conv_out: Conv::new(&mut ps, &format!("{p}.conv4"), cin, c[4], 3, &mut rng),
                    norm_out: LayerNorm::new(&mut ps, &format!("{p}.ln4"), &[c[4], side, side]),
                    fc: Linear::new(&mut ps, &format!("{p}.fc"), c[4] * side * side, 1, &mut rng),
                }
            })
            .collect();
        Ok(Self {
            arch: arch.clone(),
            params: ps,
            branches,
        })
    }

    pub fn arch(&self) -> &GanArch {
        &self.arch
    }

    pub fn branch_count(&self) -> usize {
        self.branches.len()
    }

    /// Scores `[m, 1, 80, 80]` masks with branch `b`'s critic, giving `[m]`.
    pub fn forward(&self, b: usize, masks: &Tensor) -> Result<Tensor> {
        if masks.ndim() != 4 || masks.shape()[1..] != [1, MASK_SIZE, MASK_SIZE] {
            return Err(Error::invalid(format!(
                "critic input must be [m, 1, {MASK_SIZE}, {MASK_SIZE}], got {:?}",
                masks.shape()
            )));
        }
        let br = self
            .branches
            .get(b)
            .ok_or_else(|| Error::invalid(format!("no critic for branch {b}")))?;
        Ok(self.score(br, masks))
    }

    fn score(&self, br: &CriticBranch, masks: &Tensor) -> Tensor {
        let ps = &self.params;
        let mut h = masks.clone();
        for (conv, norm) in br.convs.iter().zip(&br.norms) {
            h = norm.forward(ps, &conv.forward(ps, &h)).relu().max_pool2();
        }
        let h = br.norm_out.forward(ps, &br.conv_out.forward(ps, &h)).relu();
        let m = h.dim(0);
        br.fc.forward(ps, &h.reshape(&[m, h.numel() / m])).reshape(&[m])
    }

    /// Branch `b`'s critic as a closure over masks, for the loss functions.
    pub fn critic(&self, b: usize) -> impl Fn(&Tensor) -> Tensor + '_ {
        let br = &self.branches[b];
        move |x| self.score(br, x)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new("discriminator", &self.arch, self.params.to_arrays("d."))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let arch: GanArch = ck.descriptor_as("discriminator")?;
        let mut d = Self::new(&arch, 0)?;
        d.params.load_arrays(&ck.arrays, "d.")?;
        Ok(d)
    }
}

/// Seeded generator and critic for `arch`.
pub fn init_params(seed: u64, arch: &GanArch) -> Result<(Generator, Discriminator)> {
    Ok((Generator::new(arch, seed)?, Discriminator::new(arch, seed)?))
}
