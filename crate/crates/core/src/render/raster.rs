//! Perspective rasterization with a z-buffer and back-face culling.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::imaging::{bilinear_taps, Border};
use crate::render::asset::FaceAsset;
use crate::render::sh::sh_gain_unchecked;
use crate::tensor::{SparseMap, SparseMapBuilder};

/// What the mesh contributes to one image pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fragment {
    pub triangle: usize,
    /// Perspective-correct barycentric weights.
    pub bary: [f64; 3],
    pub uv: [f64; 2],
    /// Interpolated, renormalized vertex normal.
    pub normal: [f64; 3],
    /// Interpolated `1/w`; larger is closer.
    pub inv_w: f64,
}

fn det3(m: [[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn left3(camera: &[f64; 12]) -> [[f64; 3]; 3] {
    [
        [camera[0], camera[1], camera[2]],
        [camera[4], camera[5], camera[6]],
        [camera[8], camera[9], camera[10]],
    ]
}

/// Camera center `C = −M⁻¹ p₄` for `P = [M | p₄]`.
pub fn camera_center(camera: &[f64; 12]) -> Result<[f64; 3]> {
    let m = left3(camera);
    let d = det3(m);
    let scale = m.iter().flatten().fold(0.0f64, |a, &v| a.max(v.abs()));
    if !(d.abs() > 1e-12 * scale.powi(3).max(1e-300)) {
        return Err(Error::invalid("camera has a singular 3x3 part"));
    }
    let p4 = [camera[3], camera[7], camera[11]];
    // Cramer's rule for M·c = −p₄.
    let mut c = [0.0; 3];
    for (k, ck) in c.iter_mut().enumerate() {
        let mut mk = m;
        for r in 0..3 {
            mk[r][k] = -p4[r];
        }
        *ck = det3(mk) / d;
    }
    Ok(c)
}

/// `(x, y, w)` with pixel coordinates `x/w`, `y/w`.
pub fn project_h(camera: &[f64; 12], p: [f64; 3]) -> [f64; 3] {
    let row = |r: usize| camera[4 * r] * p[0] + camera[4 * r + 1] * p[1] + camera[4 * r + 2] * p[2] + camera[4 * r + 3];
    [row(0), row(1), row(2)]
}

pub fn project(camera: &[f64; 12], p: [f64; 3]) -> [f64; 2] {
    let [x, y, w] = project_h(camera, p);
    [x / w, y / w]
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Rasterizes the asset's mesh onto its `size×size` pixel grid. Pixel
/// `(row, col)` is sampled at its center `(col + 0.5, row + 0.5)`.
pub fn rasterize(asset: &FaceAsset) -> Result<Vec<Option<Fragment>>> {
    let size = asset.size;
    let cam = &asset.camera;
    let center = camera_center(cam)?;
    let mut frags: Vec<Option<Fragment>> = vec![None; size * size];
    let proj: Vec<[f64; 3]> = asset.vertices.iter().map(|&v| project_h(cam, v)).collect();
    for (t, tri) in asset.triangles.iter().enumerate() {
        let [i0, i1, i2] = *tri;
        let (v0, v1, v2) = (asset.vertices[i0], asset.vertices[i1], asset.vertices[i2]);
        let n = cross(sub(v1, v0), sub(v2, v0));
        if dot(n, sub(center, v0)) <= 0.0 {
            continue;
        }
        let ws = [proj[i0][2], proj[i1][2], proj[i2][2]];
        if ws.iter().any(|&w| w <= 1e-9) {
            continue;
        }
        let s = [
            [proj[i0][0] / ws[0], proj[i0][1] / ws[0]],
            [proj[i1][0] / ws[1], proj[i1][1] / ws[1]],
            [proj[i2][0] / ws[2], proj[i2][1] / ws[2]],
        ];
        let edge = |a: [f64; 2], b: [f64; 2], p: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        let area = edge(s[0], s[1], s[2]);
        if area.abs() < 1e-12 {
            continue;
        }
        let xmin = s.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        let xmax = s.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
        let ymin = s.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
        let ymax = s.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
        let c0 = ((xmin - 0.5).floor().max(0.0)) as usize;
        let c1 = ((xmax - 0.5).ceil().min(size as f64 - 1.0)).max(-1.0);
        let r0 = ((ymin - 0.5).floor().max(0.0)) as usize;
        let r1 = ((ymax - 0.5).ceil().min(size as f64 - 1.0)).max(-1.0);
        if c1 < 0.0 || r1 < 0.0 {
            continue;
        }
        let uvs = [asset.uv[i0], asset.uv[i1], asset.uv[i2]];
        let ns = [asset.normals[i0], asset.normals[i1], asset.normals[i2]];
        for row in r0..=r1 as usize {
            for col in c0..=c1 as usize {
                let p = [col as f64 + 0.5, row as f64 + 0.5];
                let b0 = edge(s[1], s[2], p) / area;
                let b1 = edge(s[2], s[0], p) / area;
                let b2 = 1.0 - b0 - b1;
                if b0 < -1e-9 || b1 < -1e-9 || b2 < -1e-9 {
                    continue;
                }
                let q = [b0 / ws[0], b1 / ws[1], b2 / ws[2]];
                let inv_w = q[0] + q[1] + q[2];
                let slot = &mut frags[row * size + col];
                if slot.is_some_and(|f| f.inv_w >= inv_w) {
                    continue;
                }
                let bary = [q[0] / inv_w, q[1] / inv_w, q[2] / inv_w];
                let uv = [
                    bary[0] * uvs[0][0] + bary[1] * uvs[1][0] + bary[2] * uvs[2][0],
                    bary[0] * uvs[0][1] + bary[1] * uvs[1][1] + bary[2] * uvs[2][1],
                ];
                let mut nrm = [0.0; 3];
                for k in 0..3 {
                    nrm[k] = bary[0] * ns[0][k] + bary[1] * ns[1][k] + bary[2] * ns[2][k];
                }
                let len = dot(nrm, nrm).sqrt();
                let normal = if len > 1e-12 {
                    [nrm[0] / len, nrm[1] / len, nrm[2] / len]
                } else {
                    let fl = dot(n, n).sqrt();
                    [n[0] / fl, n[1] / fl, n[2] / fl]
                };
                *slot = Some(Fragment {
                    triangle: t,
                    bary,
                    uv,
                    normal,
                    inv_w,
                });
            }
        }
    }
    Ok(frags)
}

/// Frozen-geometry rendering data for one asset.
#[derive(Debug, Clone)]
pub struct RenderCache {
    pub size: usize,
    pub template_size: usize,
    pub fragments: Vec<Option<Fragment>>,
    /// Bilinear template lookup per pixel: `[size², T²]`, empty rows where
    /// the mesh does not cover the pixel.
    pub sample: Rc<SparseMap>,
    /// SH gain per pixel, planar `[3, size²]`, zero off the mesh.
    pub gain: Vec<f64>,
    /// Asset image, planar `[3, size²]` in `[0, 1]`.
    pub image: Vec<f64>,
}

impl RenderCache {
    pub fn new(asset: &FaceAsset) -> Result<Self> {
        let fragments = rasterize(asset)?;
        let t = asset.template_size;
        let n = asset.size * asset.size;
        let mut b = SparseMapBuilder::new(t * t);
        let mut gain = vec![0.0; 3 * n];
        for (p, f) in fragments.iter().enumerate() {
            match f {
                None => b.push_empty_row(),
                Some(f) => {
                    let x = f.uv[0] * t as f64 - 0.5;
                    let y = f.uv[1] * t as f64 - 0.5;
                    b.push_row(bilinear_taps(x, y, t, t, Border::Zero));
                    let g = sh_gain_unchecked(&asset.sh, f.normal);
                    for c in 0..3 {
                        gain[c * n + p] = g[c];
                    }
                }
            }
        }
        Ok(Self {
            size: asset.size,
            template_size: t,
            fragments,
            sample: Rc::new(b.finish()),
            gain,
            image: asset.image_planar(),
        })
    }

    pub fn covered_count(&self) -> usize {
        self.fragments.iter().filter(|f| f.is_some()).count()
    }
}
