//! Sticker placement in template space and fabrication-error augmentation.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{bilinear_taps, Border};
use crate::render::asset::{check_no_overlap, RegionAnchor};
use crate::seed::rng_for;
use crate::tensor::{SparseMap, SparseMapBuilder, Tensor};

/// One shared affine perturbation of a sticker and its mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub scale: f64,
    /// Counterclockwise on screen, degrees.
    pub rotation_deg: f64,
    /// Translation in sticker pixels.
    pub tx: f64,
    pub ty: f64,
}

impl AugmentParams {
    pub const SCALE: (f64, f64) = (0.9, 1.1);
    pub const ROTATION: f64 = 10.0;
    pub const TRANSLATION: f64 = 10.0;

    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation_deg: 0.0,
            tx: 0.0,
            ty: 0.0,
        }
    }

    pub fn sample(rng: &mut impl Rng) -> Self {
        Self {
            scale: rng.random_range(Self::SCALE.0..=Self::SCALE.1),
            rotation_deg: rng.random_range(-Self::ROTATION..=Self::ROTATION),
            tx: rng.random_range(-Self::TRANSLATION..=Self::TRANSLATION),
            ty: rng.random_range(-Self::TRANSLATION..=Self::TRANSLATION),
        }
    }

    pub fn from_seed(seed: u64) -> Self {
        Self::sample(&mut rng_for(seed, &[0xa6]))
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity()
    }
}

/// Resampling map `[n², n²]` that applies `p` about the sticker center with
/// bilinear interpolation and zero padding.
pub fn augment_map(n: usize, p: &AugmentParams) -> SparseMap {
    let c = (n as f64 - 1.0) / 2.0;
    let (s, co) = p.rotation_deg.to_radians().sin_cos();
    let mut b = SparseMapBuilder::new(n * n);
    for i in 0..n {
        for j in 0..n {
            let dx = (j as f64 - c - p.tx) / p.scale;
            let dy = (i as f64 - c - p.ty) / p.scale;
            let sx = co * dx - s * dy + c;
            let sy = s * dx + co * dy + c;
            b.push_row(bilinear_taps(sx, sy, n, n, Border::Zero));
        }
    }
    b.finish()
}

fn check_square(t: &Tensor, what: &str) -> Result<usize> {
    let s = t.shape();
    if s.len() != 3 || s[1] != s[2] || s[1] == 0 {
        return Err(Error::invalid(format!("{what} must be [C, n, n], got {s:?}")));
    }
    Ok(s[1])
}

/// Applies `p` to a `[C, n, n]` sticker and its `[1, n, n]` mask.
pub fn augment_with(sticker: &Tensor, mask: &Tensor, p: &AugmentParams) -> Result<(Tensor, Tensor)> {
    let n = check_square(sticker, "sticker")?;
    if check_square(mask, "mask")? != n || mask.dim(0) != 1 {
        return Err(Error::invalid("mask must be [1, n, n] matching the sticker"));
    }
    let map = Rc::new(augment_map(n, p));
    let apply = |t: &Tensor| {
        let c = t.dim(0);
        t.reshape(&[c, n * n]).sparse_apply(&map).reshape(&[c, n, n])
    };
    Ok((apply(sticker), apply(mask)))
}

/// Random fabrication-error transform drawn from `seed`, shared by sticker
/// and mask.
pub fn augment_sticker(sticker: &Tensor, mask: &Tensor, seed: u64) -> Result<(Tensor, Tensor)> {
    augment_with(sticker, mask, &AugmentParams::from_seed(seed))
}

/// Template-to-sticker placement for several slots: `[T², k·n²]`, where
/// column block `s` holds slot `s`'s `n×n` sticker. The sticker is stretched
/// over the slot's `S×S` texels (bilinear, clamped at its edges); texels
/// outside every slot get empty rows.
pub fn placement_map(regions: &[&RegionAnchor], template_size: usize, n: usize) -> SparseMap {
    let t = template_size;
    let k = regions.len();
    let mut owner: Vec<Option<(usize, f64, f64)>> = vec![None; t * t];
    for (s, r) in regions.iter().enumerate() {
        let half = r.slot_size as f64 / 2.0;
        let corners = r.corners(t);
        let lo = |a: usize| corners.iter().map(|c| c[a]).fold(f64::INFINITY, f64::min);
        let hi = |a: usize| corners.iter().map(|c| c[a]).fold(f64::NEG_INFINITY, f64::max);
        let (x0, x1) = ((lo(0) - 1.0).floor().max(0.0) as usize, (hi(0) + 1.0).ceil().min(t as f64) as usize);
        let (y0, y1) = ((lo(1) - 1.0).floor().max(0.0) as usize, (hi(1) + 1.0).ceil().min(t as f64) as usize);
        let per = n as f64 / r.slot_size as f64;
        for i in y0..y1 {
            for j in x0..x1 {
                let [lx, ly] = r.to_local(t, j as f64 + 0.5, i as f64 + 0.5);
                if (-half..half).contains(&lx) && (-half..half).contains(&ly) {
                    owner[i * t + j] = Some((s, (lx + half) * per - 0.5, (ly + half) * per - 0.5));
                }
            }
        }
    }
    let mut b = SparseMapBuilder::new(k * n * n);
    for o in owner {
        match o {
            None => b.push_empty_row(),
            Some((s, sx, sy)) => {
                let off = s * n * n;
                b.push_row(bilinear_taps(sx, sy, n, n, Border::Clamp).into_iter().map(|(c, w)| (c + off, w)));
            }
        }
    }
    b.finish()
}

/// One sticker at generator resolution, with its soft mask and slot.
#[derive(Debug, Clone)]
pub struct StickerItem {
    /// `[3, n, n]` in `[0, 1]`.
    pub sticker: Tensor,
    /// `[1, n, n]` in `[0, 1]`.
    pub mask: Tensor,
    pub region: RegionAnchor,
}

#[derive(Debug, Clone, Default)]
pub struct StickerSet {
    pub items: Vec<StickerItem>,
}

impl StickerSet {
    pub fn new(items: Vec<StickerItem>) -> Result<Self> {
        let set = Self { items };
        set.validate(None)?;
        Ok(set)
    }

    pub fn regions(&self) -> Vec<&RegionAnchor> {
        self.items.iter().map(|i| &i.region).collect()
    }

    /// Sticker resolution shared by all items.
    pub fn resolution(&self) -> Option<usize> {
        self.items.first().map(|i| i.sticker.dim(1))
    }

    pub fn validate(&self, template_size: Option<usize>) -> Result<()> {
        let n = self.resolution().unwrap_or(0);
        for it in &self.items {
            if check_square(&it.sticker, "sticker")? != n || it.sticker.dim(0) != 3 {
                return Err(Error::invalid("stickers must all be [3, n, n]"));
            }
            if check_square(&it.mask, "mask")? != n || it.mask.dim(0) != 1 {
                return Err(Error::invalid("masks must all be [1, n, n]"));
            }
            if it.mask.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::invalid(format!("mask for {} leaves [0, 1]", it.region.name)));
            }
        }
        if let Some(t) = template_size {
            check_no_overlap(&self.regions(), t)?;
        } else {
            let names: std::collections::BTreeSet<_> = self.items.iter().map(|i| i.region.name).collect();
            if names.len() != self.items.len() {
                return Err(Error::config("sticker regions must be distinct"));
            }
        }
        Ok(())
    }
}

/// Lays the stickers into the `T×T` template: texture `[3, T, T]` and soft
/// location `[1, T, T]`, zero outside the slots.
pub fn place_stickers(set: &StickerSet, template_size: usize) -> Result<(Tensor, Tensor)> {
    set.validate(Some(template_size))?;
    let t = template_size;
    let Some(n) = set.resolution() else {
        return Ok((Tensor::zeros(&[3, t, t]), Tensor::zeros(&[1, t, t])));
    };
    let map = Rc::new(placement_map(&set.regions(), t, n));
    let cat = |f: fn(&StickerItem) -> &Tensor, c: usize| {
        let parts: Vec<Tensor> = set.items.iter().map(|i| f(i).reshape(&[c, n * n])).collect();
        Tensor::concat(&parts, 1).sparse_apply(&map).reshape(&[c, t, t])
    };
    Ok((cat(|i| &i.sticker, 3), cat(|i| &i.mask, 1)))
}
