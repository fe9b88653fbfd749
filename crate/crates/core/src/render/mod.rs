//! Differentiable sticker rendering onto face images.
//!
//! Geometry is frozen per asset, so every stage from sticker pixels to image
//! pixels is linear in the texture and location values and is expressed with
//! sparse maps. Only the stickers are rendered; the rest of the image is the
//! untouched original.

pub mod asset;
pub mod place;
pub mod raster;
pub mod sh;

use std::rc::Rc;

pub use asset::{
    default_regions, make_synthetic_asset, make_synthetic_asset_sized, slots_overlap, FaceAsset, RegionAnchor,
    RegionName, DEFAULT_SLOT, IMAGE_SIZE, TEMPLATE_SIZE,
};
pub use place::{augment_map, augment_sticker, augment_with, place_stickers, placement_map, AugmentParams, StickerItem, StickerSet};
pub use raster::{camera_center, project, rasterize, Fragment, RenderCache};
pub use sh::{sh_basis, sh_constant, sh_directional, sh_irradiance};

use crate::error::{Error, Result};
use crate::imaging::area_resize_map;
use crate::seed::rng_for;
use crate::tensor::{SparseMap, SparseMapBuilder, Tensor};

const COVERAGE_SLACK: f64 = 1e-9;

fn gain_tensor(cache: &RenderCache) -> Tensor {
    Tensor::new(cache.gain.clone(), &[3, cache.size * cache.size])
}

/// Renders the template texture `[3, T, T]` and location `[1, T, T]` through
/// the mesh: returns shaded rgb `[3, H, W]` and coverage `[1, H, W]`, both
/// zero where the mesh is absent.
pub fn render_stickers_only(cache: &RenderCache, texture: &Tensor, location: &Tensor) -> Result<(Tensor, Tensor)> {
    let t = cache.template_size;
    if texture.shape() != [3, t, t] || location.shape() != [1, t, t] {
        return Err(Error::invalid(format!(
            "texture {:?} / location {:?} must be [3|1, {t}, {t}]",
            texture.shape(),
            location.shape()
        )));
    }
    let s = cache.size;
    let rgb = texture.reshape(&[3, t * t]).sparse_apply(&cache.sample).mul(&gain_tensor(cache));
    let cov = location.reshape(&[1, t * t]).sparse_apply(&cache.sample);
    Ok((rgb.reshape(&[3, s, s]), cov.reshape(&[1, s, s])))
}

/// `coverage·rgb + (1 − coverage)·original`, with coverage `[1, H, W]`
/// broadcast over channels.
pub fn composite(original: &Tensor, rgb: &Tensor, coverage: &Tensor) -> Result<Tensor> {
    let s = original.shape();
    if s.len() != 3 || rgb.shape() != s || coverage.shape() != [1, s[1], s[2]] {
        return Err(Error::invalid(format!(
            "composite shapes {:?}, {:?}, {:?} disagree",
            s,
            rgb.shape(),
            coverage.shape()
        )));
    }
    if let Some(v) = coverage
        .data()
        .iter()
        .find(|&&v| !(-COVERAGE_SLACK..=1.0 + COVERAGE_SLACK).contains(&v))
    {
        return Err(Error::invalid(format!("coverage value {v} outside [0, 1]")));
    }
    Ok(coverage.mul(rgb).add(&coverage.neg().add_scalar(1.0).mul(original)))
}

/// Maps generator outputs from `[-1, 1]` to `[0, 1]`.
pub fn to_unit(t: &Tensor) -> Tensor {
    t.add_scalar(1.0).scale(0.5)
}

/// Staged transform for one face: unit-maps each `(sticker [3,n,n], shape
/// [1,n,n])` pair, augments it (when `seed` is given), places, renders and
/// composites. Returns `[3, H, W]`.
pub fn transform(
    cache: &RenderCache,
    outputs: &[(Tensor, Tensor)],
    regions: &[RegionAnchor],
    seed: Option<u64>,
) -> Result<Tensor> {
    if outputs.len() != regions.len() {
        return Err(Error::invalid(format!(
            "{} branch outputs for {} regions",
            outputs.len(),
            regions.len()
        )));
    }
    let mut items = Vec::with_capacity(outputs.len());
    for (b, ((sticker, shape), region)) in outputs.iter().zip(regions).enumerate() {
        let (s, m) = (to_unit(sticker), to_unit(shape));
        let (s, m) = match seed {
            Some(seed) => augment_with(&s, &m, &AugmentParams::sample(&mut rng_for(seed, &[b as u64])))?,
            None => (s, m),
        };
        items.push(StickerItem {
            sticker: s,
            mask: m,
            region: region.clone(),
        });
    }
    let (tex, loc) = place_stickers(&StickerSet::new(items)?, cache.template_size)?;
    let (rgb, cov) = render_stickers_only(cache, &tex, &loc)?;
    let s = cache.size;
    composite(&Tensor::new(cache.image.clone(), &[3, s, s]), &rgb, &cov)
}

/// Whole-image rendering, kept only as a comparison baseline: every covered
/// pixel is replaced by the shaded texture, so facial detail that the
/// texture lacks is lost.
pub fn render_whole_image(cache: &RenderCache, texture: &Tensor) -> Result<Tensor> {
    let t = cache.template_size;
    let s = cache.size;
    if texture.shape() != [3, t, t] {
        return Err(Error::invalid("texture must be [3, T, T]"));
    }
    let covered: Vec<f64> = cache.fragments.iter().map(|f| f64::from(u8::from(f.is_some()))).collect();
    let cov = Tensor::new(covered, &[1, s, s]);
    let rgb = texture.reshape(&[3, t * t]).sparse_apply(&cache.sample).mul(&gain_tensor(cache));
    composite(&Tensor::new(cache.image.clone(), &[3, s, s]), &rgb.reshape(&[3, s, s]), &cov)
}

/// Precomputed sticker-to-image path for a fixed asset and slot choice.
///
/// Only pixels whose texture lookup touches a slot are computed. The result
/// is either the full image or the image area-resampled to a smaller side,
/// which is what a classifier consumes.
#[derive(Debug, Clone)]
pub struct StickerScene {
    regions: Vec<RegionAnchor>,
    n: usize,
    out_side: usize,
    /// `[R, k·n²]` from concatenated stickers to the touched pixels.
    touched: Rc<SparseMap>,
    gain_rows: Tensor,
    orig_rows: Tensor,
    /// `[out², R]` from touched pixels to output pixels.
    scatter: Rc<SparseMap>,
    base: Tensor,
}

impl StickerScene {
    /// `out_side = None` keeps the asset resolution.
    pub fn new(cache: &RenderCache, regions: &[RegionAnchor], n: usize, out_side: Option<usize>) -> Result<Self> {
        let refs: Vec<&RegionAnchor> = regions.iter().collect();
        asset::check_no_overlap(&refs, cache.template_size)?;
        let place = placement_map(&refs, cache.template_size, n);
        let full = cache.sample.compose(&place);
        let rows = full.nonempty_rows();
        let touched = Rc::new(full.select_rows(&rows));
        let size = cache.size;
        let np = size * size;
        let pick = |v: &[f64]| -> Tensor {
            let d: Vec<f64> = (0..3).flat_map(|c| rows.iter().map(move |&p| v[c * np + p])).collect();
            Tensor::new(d, &[3, rows.len()])
        };
        let mut sel = SparseMapBuilder::new(rows.len());
        let mut at = vec![usize::MAX; np];
        for (r, &p) in rows.iter().enumerate() {
            at[p] = r;
        }
        for &r in &at {
            if r == usize::MAX {
                sel.push_empty_row();
            } else {
                sel.push_row([(r, 1.0)]);
            }
        }
        let sel = sel.finish();
        let orig = Tensor::new(cache.image.clone(), &[3, np]);
        let (o, scatter, base) = match out_side {
            None => (size, sel, orig),
            Some(o) => {
                let f = area_resize_map(size, size, o, o);
                let base = Tensor::new(f.apply_vec_rows(&cache.image, 3), &[3, o * o]);
                (o, f.compose(&sel), base)
            }
        };
        Ok(Self {
            regions: regions.to_vec(),
            n,
            out_side: o,
            gain_rows: pick(&cache.gain),
            orig_rows: pick(&cache.image),
            touched,
            scatter: Rc::new(scatter),
            base,
        })
    }

    pub fn regions(&self) -> &[RegionAnchor] {
        &self.regions
    }

    pub fn out_side(&self) -> usize {
        self.out_side
    }

    /// Number of image pixels the slots can reach.
    pub fn touched_pixels(&self) -> usize {
        self.touched.rows()
    }

    /// Renders one face. `stickers[b]` is `[3, n, n]` and `masks[b]` is
    /// `[1, n, n]`, both in `[0, 1]`, for slot `b`. Returns `[3, o, o]`.
    pub fn render(&self, stickers: &[Tensor], masks: &[Tensor], augment: Option<&[AugmentParams]>) -> Result<Tensor> {
        let k = self.regions.len();
        let n = self.n;
        if stickers.len() != k || masks.len() != k {
            return Err(Error::invalid(format!("expected {k} stickers and masks")));
        }
        for (s, m) in stickers.iter().zip(masks) {
            if s.shape() != [3, n, n] || m.shape() != [1, n, n] {
                return Err(Error::invalid(format!("sticker/mask must be [3|1, {n}, {n}]")));
            }
        }
        let map = match augment {
            None => self.touched.clone(),
            Some(aug) => {
                if aug.len() != k {
                    return Err(Error::invalid("one augmentation per slot required"));
                }
                let mut b = SparseMapBuilder::new(k * n * n);
                for (s, p) in aug.iter().enumerate() {
                    let a = augment_map(n, p);
                    for r in 0..n * n {
                        b.push_row(a.row(r).map(|(c, w)| (c + s * n * n, w)));
                    }
                }
                Rc::new(self.touched.compose(&b.finish()))
            }
        };
        let cat = |ts: &[Tensor], c: usize| {
            let parts: Vec<Tensor> = ts.iter().map(|t| t.reshape(&[c, n * n])).collect();
            Tensor::concat(&parts, 1)
        };
        let rgb = cat(stickers, 3).sparse_apply(&map).mul(&self.gain_rows);
        let cov = cat(masks, 1).sparse_apply(&map);
        let delta = cov.mul(&rgb.sub(&self.orig_rows));
        let o = self.out_side;
        Ok(self.base.add(&delta.sparse_apply(&self.scatter)).reshape(&[3, o, o]))
    }

    /// Renders a batch of generator outputs: `outputs[b] = (sticker
    /// [m,3,n,n], shape [m,1,n,n])` in `[-1, 1]`. Augmentation for sample `i`
    /// and slot `b` is drawn from `(seed, i, b)`. With `binarize`, masks are
    /// thresholded at one half and carry no gradient. Returns `[m, 3, o, o]`.
    pub fn render_batch(&self, outputs: &[(Tensor, Tensor)], augment_seed: Option<u64>, binarize: bool) -> Result<Tensor> {
        let k = self.regions.len();
        if outputs.len() != k {
            return Err(Error::invalid(format!("{} branch outputs for {k} slots", outputs.len())));
        }
        let m = outputs[0].0.dim(0);
        let o = self.out_side;
        let mut images = Vec::with_capacity(m);
        for i in 0..m {
            let aug: Option<Vec<AugmentParams>> = augment_seed
                .map(|seed| (0..k).map(|b| AugmentParams::sample(&mut rng_for(seed, &[i as u64, b as u64]))).collect());
            images.push(self.render_sample(outputs, i, aug.as_deref(), binarize)?.reshape(&[1, 3, o, o]));
        }
        Ok(Tensor::concat(&images, 0))
    }

    /// Renders sample `i` of a batch of generator outputs (as in
    /// [`StickerScene::render_batch`]) with explicit augmentation.
    pub fn render_sample(
        &self,
        outputs: &[(Tensor, Tensor)],
        i: usize,
        augment: Option<&[AugmentParams]>,
        binarize: bool,
    ) -> Result<Tensor> {
        let k = self.regions.len();
        if outputs.len() != k {
            return Err(Error::invalid(format!("{} branch outputs for {k} slots", outputs.len())));
        }
        let n = self.n;
        let mut stickers = Vec::with_capacity(k);
        let mut masks = Vec::with_capacity(k);
        for (s, sh) in outputs {
            if i >= s.dim(0) || i >= sh.dim(0) {
                return Err(Error::invalid(format!("sample {i} outside the batch")));
            }
            stickers.push(to_unit(&s.narrow(0, i, 1).reshape(&[3, n, n])));
            let mask = to_unit(&sh.narrow(0, i, 1).reshape(&[1, n, n]));
            masks.push(if binarize { binarize_mask(&mask) } else { mask });
        }
        self.render(&stickers, &masks, augment)
    }
}

/// Hard 0/1 mask, detached from the graph.
pub fn binarize_mask(mask: &Tensor) -> Tensor {
    let d = mask.data().iter().map(|&v| if v > 0.5 { 1.0 } else { 0.0 }).collect();
    Tensor::new(d, mask.shape())
}
