//! Face assets: image, mesh, illumination, camera and sticker regions.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{load_png, save_rgb8};
use crate::render::raster::{camera_center, project, rasterize};
use crate::render::sh::sh_gain_unchecked;
use crate::seed::rng_for;

pub const IMAGE_SIZE: usize = 300;
pub const TEMPLATE_SIZE: usize = 600;
pub const DEFAULT_SLOT: usize = 90;

/// The five candidate sticker regions, in the order used to enumerate
/// combinations. "Right" is the subject's right, which appears on the image
/// left and at small `u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionName {
    RightSuperciliaryArch,
    LeftSuperciliaryArch,
    NasalBone,
    RightNasolabialSulcus,
    LeftNasolabialSulcus,
}

impl RegionName {
    pub const ALL: [RegionName; 5] = [
        RegionName::RightSuperciliaryArch,
        RegionName::LeftSuperciliaryArch,
        RegionName::NasalBone,
        RegionName::RightNasolabialSulcus,
        RegionName::LeftNasolabialSulcus,
    ];

    pub fn key(self) -> &'static str {
        match self {
            RegionName::RightSuperciliaryArch => "right-superciliary-arch",
            RegionName::LeftSuperciliaryArch => "left-superciliary-arch",
            RegionName::NasalBone => "nasal-bone",
            RegionName::RightNasolabialSulcus => "right-nasolabial-sulcus",
            RegionName::LeftNasolabialSulcus => "left-nasolabial-sulcus",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            RegionName::RightSuperciliaryArch => "right superciliary arch",
            RegionName::LeftSuperciliaryArch => "left superciliary arch",
            RegionName::NasalBone => "nasal bone",
            RegionName::RightNasolabialSulcus => "right nasolabial sulcus",
            RegionName::LeftNasolabialSulcus => "left nasolabial sulcus",
        }
    }

    pub fn index(self) -> usize {
        RegionName::ALL.iter().position(|&r| r == self).expect("listed")
    }
}

impl fmt::Display for RegionName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for RegionName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RegionName::ALL
            .into_iter()
            .find(|r| r.key() == s || r.label() == s)
            .ok_or_else(|| Error::invalid(format!("unknown region '{s}'")))
    }
}

/// A square sticker slot in template (UV) space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionAnchor {
    pub name: RegionName,
    pub center_uv: [f64; 2],
    /// Counterclockwise rotation of the slot, degrees.
    pub orientation_deg: f64,
    /// Slot side in template pixels.
    pub slot_size: usize,
}

impl RegionAnchor {
    /// Slot corners in template pixel coordinates.
    pub fn corners(&self, template_size: usize) -> [[f64; 2]; 4] {
        let t = template_size as f64;
        let (cx, cy) = (self.center_uv[0] * t, self.center_uv[1] * t);
        let h = self.slot_size as f64 / 2.0;
        let (s, c) = self.orientation_deg.to_radians().sin_cos();
        [[-h, -h], [h, -h], [h, h], [-h, h]].map(|[x, y]| [cx + c * x + s * y, cy - s * x + c * y])
    }

    /// Position of template point `(x, y)` in slot-local coordinates with
    /// the slot center at the origin.
    pub fn to_local(&self, template_size: usize, x: f64, y: f64) -> [f64; 2] {
        let t = template_size as f64;
        let (dx, dy) = (x - self.center_uv[0] * t, y - self.center_uv[1] * t);
        let (s, c) = self.orientation_deg.to_radians().sin_cos();
        [c * dx - s * dy, s * dx + c * dy]
    }

    /// Whether template point `(x, y)` falls in the slot (half-open square).
    pub fn contains(&self, template_size: usize, x: f64, y: f64) -> bool {
        let h = self.slot_size as f64 / 2.0;
        let [lx, ly] = self.to_local(template_size, x, y);
        (-h..h).contains(&lx) && (-h..h).contains(&ly)
    }
}

/// Separating-axis test for two slots' squares.
pub fn slots_overlap(a: &RegionAnchor, b: &RegionAnchor, template_size: usize) -> bool {
    let (ca, cb) = (a.corners(template_size), b.corners(template_size));
    for poly in [&ca, &cb] {
        for i in 0..4 {
            let (p, q) = (poly[i], poly[(i + 1) % 4]);
            let axis = [q[1] - p[1], p[0] - q[0]];
            let proj = |c: &[[f64; 2]; 4]| {
                c.iter().map(|v| v[0] * axis[0] + v[1] * axis[1]).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                    (lo.min(x), hi.max(x))
                })
            };
            let (alo, ahi) = proj(&ca);
            let (blo, bhi) = proj(&cb);
            // Touching edges do not overlap.
            if ahi <= blo + 1e-9 || bhi <= alo + 1e-9 {
                return false;
            }
        }
    }
    true
}

/// Rejects any pair of overlapping slots.
pub fn check_no_overlap(regions: &[&RegionAnchor], template_size: usize) -> Result<()> {
    for i in 0..regions.len() {
        for j in i + 1..regions.len() {
            if regions[i].name == regions[j].name {
                return Err(Error::config(format!("region {} used twice", regions[i].name)));
            }
            if slots_overlap(regions[i], regions[j], template_size) {
                return Err(Error::config(format!(
                    "slots {} and {} overlap",
                    regions[i].name, regions[j].name
                )));
            }
        }
    }
    Ok(())
}

/// Default anchors for the synthetic face's UV layout.
pub fn default_regions(slot_size: usize) -> Vec<RegionAnchor> {
    let at = |name, u, v| RegionAnchor {
        name,
        center_uv: [u, v],
        orientation_deg: 0.0,
        slot_size,
    };
    vec![
        at(RegionName::RightSuperciliaryArch, 0.33, 0.31),
        at(RegionName::LeftSuperciliaryArch, 0.67, 0.31),
        at(RegionName::NasalBone, 0.5, 0.45),
        at(RegionName::RightNasolabialSulcus, 0.36, 0.64),
        at(RegionName::LeftNasolabialSulcus, 0.64, 0.64),
    ]
}

/// A face image with everything needed to render stickers onto it.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceAsset {
    /// Image side in pixels.
    pub size: usize,
    /// Sticker template side in pixels.
    pub template_size: usize,
    /// Interleaved 8-bit RGB, `size × size × 3`.
    pub image: Vec<u8>,
    pub vertices: Vec<[f64; 3]>,
    pub uv: Vec<[f64; 2]>,
    pub normals: Vec<[f64; 3]>,
    pub triangles: Vec<[usize; 3]>,
    /// Channel-major SH radiance coefficients, `sh[c * 9 + k]`.
    pub sh: [f64; 27],
    /// Row-major 3×4 projection to pixel coordinates.
    pub camera: [f64; 12],
    pub label: String,
    pub regions: Vec<RegionAnchor>,
}

impl FaceAsset {
    /// Planar `[3, size²]` image in `[0, 1]`.
    pub fn image_planar(&self) -> Vec<f64> {
        let n = self.size * self.size;
        let mut out = vec![0.0; 3 * n];
        for p in 0..n {
            for c in 0..3 {
                out[c * n + p] = self.image[3 * p + c] as f64 / 255.0;
            }
        }
        out
    }

    pub fn region(&self, name: RegionName) -> Result<&RegionAnchor> {
        self.regions
            .iter()
            .find(|r| r.name == name)
            .ok_or_else(|| Error::invalid(format!("asset has no region {name}")))
    }

    /// Copy with every slot resized to `slot_size`.
    pub fn with_slot_size(&self, slot_size: usize) -> Result<FaceAsset> {
        let mut a = self.clone();
        for r in &mut a.regions {
            r.slot_size = slot_size;
        }
        let refs: Vec<&RegionAnchor> = a.regions.iter().collect();
        check_no_overlap(&refs, a.template_size)?;
        Ok(a)
    }

    /// Checks every structural invariant; `field` names the failing part.
    pub fn validate(&self) -> std::result::Result<(), (String, String)> {
        let fail = |f: &str, r: String| Err((f.to_string(), r));
        if self.image.len() != self.size * self.size * 3 {
            return fail("image", format!("expected {} bytes", self.size * self.size * 3));
        }
        let v = self.vertices.len();
        if self.uv.len() != v || self.normals.len() != v {
            return fail("mesh", "vertex, uv and normal counts differ".into());
        }
        for (t, tri) in self.triangles.iter().enumerate() {
            if let Some(&i) = tri.iter().find(|&&i| i >= v) {
                return fail("triangle index", format!("triangle {t} references vertex {i} of {v}"));
            }
        }
        if let Some(i) = self.uv.iter().position(|uv| uv.iter().any(|c| !(0.0..=1.0).contains(c))) {
            return fail("uv", format!("vertex {i} has uv outside [0, 1]"));
        }
        if self.normals.iter().any(|n| n.iter().all(|&c| c == 0.0)) {
            return fail("normals", "zero normal".into());
        }
        if camera_center(&self.camera).is_err() {
            return fail("camera", "singular 3x3 part".into());
        }
        let s = self.size as f64;
        for (i, &p) in self.vertices.iter().enumerate() {
            let [x, y] = project(&self.camera, p);
            if !(0.0..=s).contains(&x) || !(0.0..=s).contains(&y) {
                return fail("camera", format!("vertex {i} projects outside the image"));
            }
        }
        if self.regions.len() != 5 {
            return fail("regions", format!("expected 5 regions, found {}", self.regions.len()));
        }
        let refs: Vec<&RegionAnchor> = self.regions.iter().collect();
        if let Err(e) = check_no_overlap(&refs, self.template_size) {
            return fail("regions", e.to_string());
        }
        Ok(())
    }

    /// Writes the asset directory: `manifest.txt`, `image.png`, `mesh.txt`,
    /// `sh.txt`, `camera.txt`, `regions.txt`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, text: String| {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        write(
            "manifest.txt",
            format!(
                "image = image.png\nmesh = mesh.txt\nsh = sh.txt\ncamera = camera.txt\nregions = regions.txt\nlabel = {}\ntemplate_size = {}\n",
                self.label, self.template_size
            ),
        )?;
        save_rgb8(&dir.join("image.png"), self.size, self.size, &self.image)?;
        let mut mesh = String::new();
        for i in 0..self.vertices.len() {
            let (p, t, n) = (self.vertices[i], self.uv[i], self.normals[i]);
            mesh.push_str(&format!(
                "v {} {} {} {} {} {} {} {}\n",
                p[0], p[1], p[2], t[0], t[1], n[0], n[1], n[2]
            ));
        }
        for t in &self.triangles {
            mesh.push_str(&format!("f {} {} {}\n", t[0], t[1], t[2]));
        }
        write("mesh.txt", mesh)?;
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        let sh: Vec<String> = self.sh.chunks(9).map(join).collect();
        write("sh.txt", sh.join("\n") + "\n")?;
        let cam: Vec<String> = self.camera.chunks(4).map(join).collect();
        write("camera.txt", cam.join("\n") + "\n")?;
        let mut regions = String::new();
        for r in &self.regions {
            regions.push_str(&format!(
                "{} {} {} {} {}\n",
                r.name, r.center_uv[0], r.center_uv[1], r.orientation_deg, r.slot_size
            ));
        }
        write("regions.txt", regions)
    }

    pub fn load(dir: &Path) -> Result<FaceAsset> {
        let manifest_path = dir.join("manifest.txt");
        let manifest = read_text(&manifest_path)?;
        let mut keys = std::collections::BTreeMap::new();
        for line in manifest.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::load(&manifest_path, "manifest", format!("bad line '{line}'")))?;
            keys.insert(k.trim().to_string(), v.trim().to_string());
        }
        let file = |key: &str, default: &str| dir.join(keys.get(key).map(String::as_str).unwrap_or(default));
        let template_size = match keys.get("template_size") {
            None => TEMPLATE_SIZE,
            Some(v) => v
                .parse()
                .map_err(|_| Error::load(&manifest_path, "template_size", format!("'{v}' is not an integer")))?,
        };
        let label = keys.get("label").cloned().unwrap_or_default();

        let image_path = file("image", "image.png");
        let png = load_png(&image_path)?;
        if png.width != png.height {
            return Err(Error::load(&image_path, "image", "image must be square"));
        }
        let image: Vec<u8> = match png.channels {
            3 => png.data,
            4 => png.data.chunks(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
            1 => png.data.iter().flat_map(|&g| [g, g, g]).collect(),
            c => return Err(Error::load(&image_path, "image", format!("{c} channels unsupported"))),
        };

        let mesh_path = file("mesh", "mesh.txt");
        let (mut vertices, mut uv, mut normals, mut triangles) = (vec![], vec![], vec![], vec![]);
        for (ln, line) in read_text(&mesh_path)?.lines().enumerate() {
            let mut it = line.split_whitespace();
            match it.next() {
                Some("v") => {
                    let vals = parse_floats(it, &mesh_path, "vertex")?;
                    if vals.len() != 8 {
                        return Err(Error::load(&mesh_path, "vertex", format!("line {} needs 8 values", ln + 1)));
                    }
                    vertices.push([vals[0], vals[1], vals[2]]);
                    uv.push([vals[3], vals[4]]);
                    normals.push([vals[5], vals[6], vals[7]]);
                }
                Some("f") => {
                    let idx: Vec<usize> = it
                        .map(|s| s.parse())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| Error::load(&mesh_path, "triangle index", format!("line {} is not integral", ln + 1)))?;
                    if idx.len() != 3 {
                        return Err(Error::load(&mesh_path, "triangle", format!("line {} needs 3 indices", ln + 1)));
                    }
                    triangles.push([idx[0], idx[1], idx[2]]);
                }
                None => {}
                Some(tag) if tag.starts_with('#') => {}
                Some(tag) => return Err(Error::load(&mesh_path, "mesh", format!("unknown record '{tag}'"))),
            }
        }

        let sh_path = file("sh", "sh.txt");
        let sh_vals = parse_floats(read_text(&sh_path)?.split_whitespace(), &sh_path, "sh")?;
        let sh: [f64; 27] = sh_vals
            .as_slice()
            .try_into()
            .map_err(|_| Error::load(&sh_path, "sh length", format!("expected 27 values, found {}", sh_vals.len())))?;
        let cam_path = file("camera", "camera.txt");
        let cam_vals = parse_floats(read_text(&cam_path)?.split_whitespace(), &cam_path, "camera")?;
        let camera: [f64; 12] = cam_vals
            .as_slice()
            .try_into()
            .map_err(|_| Error::load(&cam_path, "camera length", format!("expected 12 values, found {}", cam_vals.len())))?;

        let reg_path = file("regions", "regions.txt");
        let mut regions = Vec::new();
        for line in read_text(&reg_path)?.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 && f.len() != 5 {
                return Err(Error::load(&reg_path, "regions", format!("bad line '{line}'")));
            }
            let name: RegionName = f[0].parse().map_err(|e: Error| Error::load(&reg_path, "regions", e.to_string()))?;
            let nums = parse_floats(f[1..4].iter().copied(), &reg_path, "regions")?;
            let slot_size = match f.get(4) {
                None => DEFAULT_SLOT,
                Some(s) => s
                    .parse()
                    .map_err(|_| Error::load(&reg_path, "regions", format!("bad slot size '{s}'")))?,
            };
            regions.push(RegionAnchor {
                name,
                center_uv: [nums[0], nums[1]],
                orientation_deg: nums[2],
                slot_size,
            });
        }

        let asset = FaceAsset {
            size: png.width,
            template_size,
            image,
            vertices,
            uv,
            normals,
            triangles,
            sh,
            camera,
            label,
            regions,
        };
        asset
            .validate()
            .map_err(|(field, reason)| Error::load(dir, field, reason))?;
        Ok(asset)
    }
}

/// Image pixels (row-major) whose visible surface point lies inside each
/// region's slot, in the asset's region order.
pub fn region_footprints(asset: &FaceAsset) -> Result<Vec<(RegionName, Vec<usize>)>> {
    let frags = rasterize(asset)?;
    let t = asset.template_size;
    Ok(asset
        .regions
        .iter()
        .map(|r| {
            let px = frags
                .iter()
                .enumerate()
                .filter_map(|(p, f)| {
                    f.filter(|f| r.contains(t, f.uv[0] * t as f64, f.uv[1] * t as f64))
                        .map(|_| p)
                })
                .collect();
            (r.name, px)
        })
        .collect())
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_floats<'a>(it: impl Iterator<Item = &'a str>, path: &Path, field: &str) -> Result<Vec<f64>> {
    it.map(|s| {
        s.parse::<f64>()
            .map_err(|_| Error::load(path, field, format!("'{s}' is not a number")))
    })
    .collect()
}

/// Appearance parameters of one synthetic identity.
#[derive(Debug, Clone)]
struct Identity {
    skin: [f64; 3],
    brow: [f64; 3],
    brow_v: f64,
    brow_half: [f64; 2],
    brow_tilt: f64,
    eye_du: f64,
    iris: [f64; 3],
    lips: [f64; 3],
    lip_half: [f64; 2],
    hair: [f64; 3],
    hairline: f64,
    nose_tint: [f64; 3],
    cheek: [f64; 3],
    spots: Vec<([f64; 2], f64, [f64; 3])>,
}

fn color(rng: &mut impl Rng, lo: [f64; 3], hi: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|c| rng.random_range(lo[c]..hi[c]))
}

impl Identity {
    fn new(seed: u64) -> Self {
        let mut rng = rng_for(seed, &[0x1d]);
        let tone = rng.random_range(0.0..1.0);
        let skin = [0.55 + 0.35 * tone, 0.38 + 0.32 * tone, 0.28 + 0.3 * tone];
        let n_spots = rng.random_range(2..7);
        let spots = (0..n_spots)
            .map(|_| {
                (
                    [rng.random_range(0.25..0.75), rng.random_range(0.3..0.8)],
                    rng.random_range(0.006..0.016),
                    color(&mut rng, [0.2, 0.1, 0.05], [0.6, 0.35, 0.3]),
                )
            })
            .collect();
        Self {
            skin,
            brow: color(&mut rng, [0.05, 0.03, 0.02], [0.45, 0.35, 0.3]),
            brow_v: rng.random_range(0.29..0.33),
            brow_half: [rng.random_range(0.06..0.1), rng.random_range(0.012..0.03)],
            brow_tilt: rng.random_range(-0.25..0.25),
            eye_du: rng.random_range(0.13..0.17),
            iris: color(&mut rng, [0.05, 0.05, 0.05], [0.5, 0.6, 0.7]),
            lips: color(&mut rng, [0.5, 0.15, 0.15], [0.9, 0.45, 0.45]),
            lip_half: [rng.random_range(0.07..0.12), rng.random_range(0.02..0.04)],
            hair: color(&mut rng, [0.02, 0.02, 0.02], [0.6, 0.45, 0.3]),
            hairline: rng.random_range(0.08..0.2),
            nose_tint: color(&mut rng, [-0.08, -0.08, -0.08], [0.08, 0.05, 0.05]),
            cheek: color(&mut rng, [0.0, -0.05, -0.05], [0.12, 0.04, 0.04]),
            spots,
        }
    }

    fn albedo(&self, u: f64, v: f64) -> [f64; 3] {
        let soft = |d: f64| (1.0 - d).clamp(0.0, 0.15) / 0.15;
        let ellipse = |cu: f64, cv: f64, hu: f64, hv: f64| ((u - cu) / hu).hypot((v - cv) / hv);
        let mut c = self.skin;
        let blend = |c: &mut [f64; 3], col: [f64; 3], a: f64| {
            for k in 0..3 {
                c[k] = c[k] * (1.0 - a) + col[k] * a;
            }
        };
        let cheek = (-((u - 0.5).abs() - 0.2).powi(2) / 0.004 - (v - 0.58).powi(2) / 0.006).exp();
        let nose = (-(u - 0.5).powi(2) / 0.002 - (v - 0.5).powi(2) / 0.02).exp();
        for k in 0..3 {
            c[k] += self.cheek[k] * cheek + self.nose_tint[k] * nose;
        }
        for side in [-1.0, 1.0] {
            let cu = 0.5 + side * 0.17;
            let tilt_v = self.brow_v + side * self.brow_tilt * (u - cu);
            blend(&mut c, self.brow, soft(ellipse(cu, tilt_v, self.brow_half[0], self.brow_half[1])));
            let eu = 0.5 + side * self.eye_du;
            blend(&mut c, [0.95, 0.95, 0.92], soft(ellipse(eu, 0.4, 0.055, 0.022)));
            blend(&mut c, self.iris, soft(ellipse(eu, 0.4, 0.018, 0.018)));
            blend(&mut c, [0.1, 0.06, 0.05], 0.8 * soft(ellipse(0.5 + side * 0.035, 0.6, 0.018, 0.01)));
            let fold_u = 0.5 + side * (0.12 + 0.4 * (v - 0.55));
            let fold = (-(u - fold_u).powi(2) / 0.0004).exp() * ((v - 0.55) * (0.72 - v) * 40.0).clamp(0.0, 1.0);
            let shade = [c[0] * 0.75, c[1] * 0.7, c[2] * 0.7];
            blend(&mut c, shade, fold);
        }
        blend(&mut c, self.lips, soft(ellipse(0.5, 0.74, self.lip_half[0], self.lip_half[1])));
        for &(p, r, col) in &self.spots {
            blend(&mut c, col, 0.85 * soft(ellipse(p[0], p[1], r, r)));
        }
        let hair = ((self.hairline - v) / 0.02 + 0.5).clamp(0.0, 1.0);
        blend(&mut c, self.hair, hair);
        c.map(|x| x.clamp(0.0, 1.0))
    }
}

/// Face mesh semi-axes (x, y, depth) and camera placement.
const AXES: [f64; 3] = [0.9, 1.15, 0.75];
const CAMERA_DISTANCE: f64 = 6.0;
const FOCAL: f64 = 577.0;
const RINGS: usize = 20;
const SECTORS: usize = 48;

fn nose_height(x: f64, y: f64) -> f64 {
    0.3 * (-(x * x) / (2.0 * 0.1 * 0.1) - (y - 0.05).powi(2) / (2.0 * 0.28 * 0.28)).exp()
}

/// Camera looking down −z from `(0, 0, d)` with image y pointing down.
pub fn synthetic_camera(size: usize) -> [f64; 12] {
    let f = FOCAL * size as f64 / IMAGE_SIZE as f64;
    let c = size as f64 / 2.0;
    [f, 0.0, -c, c * CAMERA_DISTANCE, 0.0, -f, -c, c * CAMERA_DISTANCE, 0.0, 0.0, -1.0, CAMERA_DISTANCE]
}

/// Area-weighted vertex normals of a triangle mesh.
pub fn vertex_normals(vertices: &[[f64; 3]], triangles: &[[usize; 3]]) -> Vec<[f64; 3]> {
    let mut acc = vec![[0.0; 3]; vertices.len()];
    for t in triangles {
        let (a, b, c) = (vertices[t[0]], vertices[t[1]], vertices[t[2]]);
        let e1 = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let e2 = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
        let n = [e1[1] * e2[2] - e1[2] * e2[1], e1[2] * e2[0] - e1[0] * e2[2], e1[0] * e2[1] - e1[1] * e2[0]];
        for &i in t {
            for k in 0..3 {
                acc[i][k] += n[k];
            }
        }
    }
    acc.into_iter()
        .map(|n| {
            let l = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            if l > 0.0 {
                [n[0] / l, n[1] / l, n[2] / l]
            } else {
                [0.0, 0.0, 1.0]
            }
        })
        .collect()
}

/// Half-ellipsoid face with a nose ridge, posed by yaw (about the vertical
/// axis) then pitch (about the horizontal axis), degrees.
fn synthetic_mesh(yaw: f64, pitch: f64) -> (Vec<[f64; 3]>, Vec<[f64; 2]>, Vec<[usize; 3]>) {
    let [a, b, c] = AXES;
    let mut vertices = vec![[0.0, 0.0, c + nose_height(0.0, 0.0)]];
    let mut uv = vec![[0.5, 0.5]];
    for r in 1..=RINGS {
        let rho = r as f64 / RINGS as f64;
        for s in 0..SECTORS {
            let phi = std::f64::consts::TAU * s as f64 / SECTORS as f64;
            let (x, y) = (a * rho * phi.cos(), b * rho * phi.sin());
            let z = c * (1.0 - rho * rho).max(0.0).sqrt() + nose_height(x, y) * (1.0 - rho * rho);
            vertices.push([x, y, z]);
            uv.push([0.5 + 0.5 * rho * phi.cos(), 0.5 - 0.5 * rho * phi.sin()]);
        }
    }
    let id = |r: usize, s: usize| 1 + (r - 1) * SECTORS + s % SECTORS;
    let mut triangles = Vec::new();
    for s in 0..SECTORS {
        triangles.push([0, id(1, s), id(1, s + 1)]);
    }
    for r in 1..RINGS {
        for s in 0..SECTORS {
            triangles.push([id(r, s), id(r + 1, s), id(r + 1, s + 1)]);
            triangles.push([id(r, s), id(r + 1, s + 1), id(r, s + 1)]);
        }
    }
    let (sy, cy) = yaw.to_radians().sin_cos();
    let (sp, cp) = pitch.to_radians().sin_cos();
    for v in &mut vertices {
        let [x, y, z] = *v;
        let (x, z) = (cy * x + sy * z, -sy * x + cy * z);
        let (y, z) = (cp * y - sp * z, sp * y + cp * z);
        *v = [x, y, z];
    }
    (vertices, uv, triangles)
}

/// Procedural face for identity `identity_seed` under the given pose and
/// lighting. Geometry is shared by all identities; only the albedo differs.
/// The background is a neutral gradient independent of identity.
pub fn make_synthetic_asset(identity_seed: u64, yaw: f64, pitch: f64, sh: &[f64; 27]) -> Result<FaceAsset> {
    make_synthetic_asset_sized(identity_seed, yaw, pitch, sh, IMAGE_SIZE, TEMPLATE_SIZE)
}

pub fn make_synthetic_asset_sized(
    identity_seed: u64,
    yaw: f64,
    pitch: f64,
    sh: &[f64; 27],
    size: usize,
    template_size: usize,
) -> Result<FaceAsset> {
    if yaw.abs() > 30.0 || pitch.abs() > 30.0 {
        return Err(Error::invalid(format!("pose ({yaw}, {pitch}) outside ±30°")));
    }
    let (vertices, uv, triangles) = synthetic_mesh(yaw, pitch);
    let normals = vertex_normals(&vertices, &triangles);
    let slot = DEFAULT_SLOT * template_size / TEMPLATE_SIZE;
    let mut asset = FaceAsset {
        size,
        template_size,
        image: vec![0; size * size * 3],
        vertices,
        uv,
        normals,
        triangles,
        sh: *sh,
        camera: synthetic_camera(size),
        label: format!("identity-{identity_seed}"),
        regions: default_regions(slot.max(1)),
    };
    let identity = Identity::new(identity_seed);
    let frags = rasterize(&asset)?;
    for (p, f) in frags.iter().enumerate() {
        let (row, col) = ((p / size) as f64 / size as f64, (p % size) as f64 / size as f64);
        let rgb = match f {
            Some(f) => {
                let g = sh_gain_unchecked(sh, f.normal);
                let alb = identity.albedo(f.uv[0], f.uv[1]);
                [0, 1, 2].map(|c| alb[c] * g[c])
            }
            None => {
                let shade = 0.55 + 0.15 * row - 0.05 * col;
                [shade, shade * 0.98, shade * 1.02]
            }
        };
        for c in 0..3 {
            asset.image[3 * p + c] = (rgb[c].clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    asset
        .validate()
        .map_err(|(f, r)| Error::invalid(format!("synthetic asset invalid: {f}: {r}")))?;
    Ok(asset)
}
