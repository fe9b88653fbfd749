//! The five-kind shape corpus used to constrain sticker outlines.

use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_for;
use crate::tensor::Tensor;

/// Side length of corpus templates and generator shape outputs.
pub const MASK_SIZE: usize = 80;
/// Valid foreground-area band for corpus templates.
pub const AREA_BAND: (f64, f64) = (0.55, 0.85);
const AREA_TOLERANCE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Circle,
    Square,
    Pentagon,
    Hexagon,
    Heptagon,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 5] = [
        ShapeKind::Circle,
        ShapeKind::Square,
        ShapeKind::Pentagon,
        ShapeKind::Hexagon,
        ShapeKind::Heptagon,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Circle => "circle",
            ShapeKind::Square => "square",
            ShapeKind::Pentagon => "pentagon",
            ShapeKind::Hexagon => "hexagon",
            ShapeKind::Heptagon => "heptagon",
        }
    }

    /// Number of polygon sides; `None` for the circle.
    pub fn sides(self) -> Option<usize> {
        match self {
            ShapeKind::Circle => None,
            ShapeKind::Square => Some(4),
            ShapeKind::Pentagon => Some(5),
            ShapeKind::Hexagon => Some(6),
            ShapeKind::Heptagon => Some(7),
        }
    }

    fn index(self) -> u64 {
        ShapeKind::ALL.iter().position(|&k| k == self).expect("listed") as u64
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown shape kind '{s}'")))
    }
}

/// Square single-channel mask with values in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeMask {
    size: usize,
    pixels: Vec<f64>,
}

impl ShapeMask {
    pub fn new(size: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != size * size {
            return Err(Error::invalid(format!(
                "mask of side {size} needs {} pixels, got {}",
                size * size,
                pixels.len()
            )));
        }
        if pixels.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::invalid("mask values must lie in [0, 1]"));
        }
        Ok(Self { size, pixels })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn is_binary(&self) -> bool {
        self.pixels.iter().all(|&p| p == 0.0 || p == 1.0)
    }

    /// Fraction of pixels above 0.5.
    pub fn foreground_fraction(&self) -> f64 {
        self.pixels.iter().filter(|&&p| p > 0.5).count() as f64 / self.pixels.len() as f64
    }

    pub fn binarize(&self, threshold: f64) -> Vec<bool> {
        self.pixels.iter().map(|&p| p > threshold).collect()
    }

    /// Whether the foreground (values above 0.5) is one 4-connected component.
    pub fn is_single_component(&self) -> bool {
        count_components(&self.binarize(0.5), self.size) == 1
    }
}

pub(crate) fn count_components(fg: &[bool], size: usize) -> usize {
    let mut seen = vec![false; fg.len()];
    let mut components = 0;
    let mut stack = Vec::new();
    for start in 0..fg.len() {
        if !fg[start] || seen[start] {
            continue;
        }
        components += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(p) = stack.pop() {
            let (y, x) = (p / size, p % size);
            let mut visit = |q: usize| {
                if fg[q] && !seen[q] {
                    seen[q] = true;
                    stack.push(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < size {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - size);
            }
            if y + 1 < size {
                visit(p + size);
            }
        }
    }
    components
}

/// Intersection over union of two binary masks. Two empty masks give 0.
pub fn iou(a: &[bool], b: &[bool]) -> f64 {
    assert_eq!(a.len(), b.len());
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Renders a centered circle or regular polygon as a binary mask.
///
/// Each pixel center gets the smallest apothem (radius for the circle) at
/// which it falls inside the shape; the threshold is then picked so the
/// foreground count is as close as possible to `area_fraction·size²`. Shapes
/// large enough to touch the frame are clipped and grow to compensate.
/// `rotation` is in degrees, counterclockwise on screen. At 0° the square is
/// axis-aligned.
pub fn generate_shape_mask(kind: ShapeKind, size: usize, area_fraction: f64, rotation: f64) -> Result<ShapeMask> {
    if size != MASK_SIZE {
        return Err(Error::invalid(format!("mask size must be {MASK_SIZE}, got {size}")));
    }
    if !(AREA_BAND.0..=AREA_BAND.1).contains(&area_fraction) {
        return Err(Error::invalid(format!(
            "area fraction {area_fraction} outside [{}, {}]",
            AREA_BAND.0, AREA_BAND.1
        )));
    }
    let c = size as f64 / 2.0;
    let normals: Vec<(f64, f64)> = match kind.sides() {
        None => Vec::new(),
        Some(n) => (0..n)
            .map(|k| {
                let a = rotation.to_radians() + std::f64::consts::TAU * k as f64 / n as f64;
                (a.cos(), a.sin())
            })
            .collect(),
    };
    let critical: Vec<f64> = (0..size * size)
        .map(|p| {
            let x = (p % size) as f64 + 0.5 - c;
            let y = c - ((p / size) as f64 + 0.5);
            if normals.is_empty() {
                x.hypot(y)
            } else {
                normals.iter().map(|&(nx, ny)| nx * x + ny * y).fold(f64::MIN, f64::max)
            }
        })
        .collect();
    let mut sorted = critical.clone();
    sorted.sort_by(f64::total_cmp);
    let target = (area_fraction * (size * size) as f64).round().max(1.0) as usize;
    let at = sorted[target - 1];
    let count_le = sorted.partition_point(|&v| v <= at);
    let count_lt = sorted.partition_point(|&v| v < at);
    let threshold = if count_lt > 0 && target - count_lt < count_le - target {
        sorted[count_lt - 1]
    } else {
        at
    };
    let pixels: Vec<f64> = critical.iter().map(|&v| if v <= threshold { 1.0 } else { 0.0 }).collect();
    let mask = ShapeMask { size, pixels };
    let got = mask.foreground_fraction();
    if (got - area_fraction).abs() > AREA_TOLERANCE * area_fraction {
        return Err(Error::invalid(format!(
            "cannot realize area {area_fraction} for {kind}: got {got}"
        )));
    }
    Ok(mask)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub per_kind: usize,
    pub area_band: (f64, f64),
    pub rotation_range: (f64, f64),
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            per_kind: 3000,
            area_band: (0.55, 0.65),
            rotation_range: (0.0, 360.0),
            seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.area_band;
        if !(AREA_BAND.0 <= lo && lo <= hi && hi <= AREA_BAND.1) {
            return Err(Error::config(format!("area band {lo}..{hi} outside {AREA_BAND:?}")));
        }
        if self.rotation_range.0 > self.rotation_range.1 {
            return Err(Error::config("rotation range is reversed"));
        }
        Ok(())
    }
}

/// Provenance of one corpus template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub index: usize,
    pub kind: ShapeKind,
    pub seed: u64,
    pub area_fraction: f64,
    pub rotation_deg: f64,
}

/// Binary templates stored as one byte (0 or 1) per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeCorpus {
    size: usize,
    data: Vec<u8>,
    records: Vec<CorpusRecord>,
}

const CORPUS_MAGIC: &[u8; 4] = b"STKC";
const CORPUS_VERSION: u32 = 1;

impl ShapeCorpus {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn records(&self) -> &[CorpusRecord] {
        &self.records
    }

    pub fn kind(&self, i: usize) -> ShapeKind {
        self.records[i].kind
    }

    pub fn raw(&self, i: usize) -> &[u8] {
        let n = self.size * self.size;
        &self.data[i * n..(i + 1) * n]
    }

    pub fn get(&self, i: usize) -> ShapeMask {
        ShapeMask {
            size: self.size,
            pixels: self.raw(i).iter().map(|&b| b as f64).collect(),
        }
    }

    /// Template kind with the highest IoU against a binary mask, and that IoU.
    pub fn best_match(&self, mask: &[bool]) -> Option<(ShapeKind, f64)> {
        if mask.len() != self.size * self.size {
            return None;
        }
        let mut best: Option<(ShapeKind, f64)> = None;
        for (i, r) in self.records.iter().enumerate() {
            let t: Vec<bool> = self.raw(i).iter().map(|&b| b != 0).collect();
            let v = iou(mask, &t);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((r.kind, v));
            }
        }
        best
    }

    pub fn count_kind(&self, kind: ShapeKind) -> usize {
        self.records.iter().filter(|r| r.kind == kind).count()
    }

    /// Packed file: magic, version, count, H, W (all `u32` little endian)
    /// then row-major masks, one byte per pixel with 0 or 255.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.data.len());
        out.extend_from_slice(CORPUS_MAGIC);
        for v in [CORPUS_VERSION, self.len() as u32, self.size as u32, self.size as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend(self.data.iter().map(|&b| b * 255));
        out
    }

    /// One JSON object per line, one line per mask.
    pub fn manifest(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("record serializes"));
            s.push('\n');
        }
        s
    }

    pub fn manifest_path(corpus_path: &Path) -> PathBuf {
        let mut p = corpus_path.as_os_str().to_owned();
        p.push(".manifest.jsonl");
        PathBuf::from(p)
    }

    /// Writes the corpus file and its sidecar manifest.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))?;
        let mp = Self::manifest_path(path);
        std::fs::write(&mp, self.manifest()).map_err(|e| Error::io(&mp, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |field: &str, reason: &str| Error::load(path, field, reason);
        if buf.len() < 20 || &buf[..4] != CORPUS_MAGIC {
            return Err(bad("header", "bad magic"));
        }
        let word = |i: usize| u32::from_le_bytes(buf[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize;
        if word(0) != CORPUS_VERSION as usize {
            return Err(bad("version", "unsupported"));
        }
        let (count, h, w) = (word(1), word(2), word(3));
        if h != w {
            return Err(bad("size", "masks must be square"));
        }
        if buf.len() != 20 + count * h * w {
            return Err(bad("data", "length does not match header"));
        }
        let mut data = Vec::with_capacity(count * h * w);
        for &b in &buf[20..] {
            match b {
                0 => data.push(0),
                255 => data.push(1),
                _ => return Err(bad("data", "mask bytes must be 0 or 255")),
            }
        }
        let mp = Self::manifest_path(path);
        let text = std::fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| Error::load(&mp, "record", e.to_string())))
            .collect::<Result<Vec<CorpusRecord>>>()?;
        if records.len() != count {
            return Err(Error::load(&mp, "records", format!("{} records for {count} masks", records.len())));
        }
        Ok(Self { size: h, data, records })
    }
}

/// Generates `per_kind` templates of each kind, kinds in [`ShapeKind::ALL`]
/// order. Each template's area and rotation come from its own seeded stream.
pub fn build_corpus(config: &CorpusConfig) -> Result<ShapeCorpus> {
    config.validate()?;
    let n = MASK_SIZE * MASK_SIZE;
    let mut data = Vec::with_capacity(config.per_kind * 5 * n);
    let mut records = Vec::with_capacity(config.per_kind * 5);
    for kind in ShapeKind::ALL {
        for j in 0..config.per_kind {
            let seed = crate::seed::derive_seed(config.seed, &[kind.index(), j as u64]);
            let mut rng = rng_for(seed, &[]);
            let (lo, hi) = config.area_band;
            let area = if hi > lo { rng.random_range(lo..hi) } else { lo };
            let (rlo, rhi) = config.rotation_range;
            let rotation = if rhi > rlo { rng.random_range(rlo..rhi) } else { rlo };
            let mask = generate_shape_mask(kind, MASK_SIZE, area, rotation)?;
            data.extend(mask.pixels.iter().map(|&p| p as u8));
            records.push(CorpusRecord {
                index: records.len(),
                kind,
                seed,
                area_fraction: area,
                rotation_deg: rotation,
            });
        }
    }
    Ok(ShapeCorpus {
        size: MASK_SIZE,
        data,
        records,
    })
}

/// Indices of `m` templates drawn uniformly with replacement.
pub fn sample_indices(corpus: &ShapeCorpus, m: usize, seed: u64) -> Result<Vec<usize>> {
    if corpus.is_empty() {
        return Err(Error::invalid("cannot sample from an empty corpus"));
    }
    if m == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    let mut rng = rng_for(seed, &[]);
    Ok((0..m).map(|_| rng.random_range(0..corpus.len())).collect())
}

pub fn sample_batch(corpus: &ShapeCorpus, m: usize, seed: u64) -> Result<Vec<ShapeMask>> {
    Ok(sample_indices(corpus, m, seed)?.into_iter().map(|i| corpus.get(i)).collect())
}

/// Same draw as [`sample_batch`], packed as a `[m, 1, H, W]` tensor.
pub fn sample_batch_tensor(corpus: &ShapeCorpus, m: usize, seed: u64) -> Result<Tensor> {
    let idx = sample_indices(corpus, m, seed)?;
    let s = corpus.size;
    let mut data = Vec::with_capacity(m * s * s);
    for i in idx {
        data.extend(corpus.raw(i).iter().map(|&b| b as f64));
    }
    Ok(Tensor::new(data, &[m, 1, s, s]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_zero_degrees_is_axis_aligned_64() {
        let m = generate_shape_mask(ShapeKind::Square, 80, 0.64, 0.0).unwrap();
        for y in 0..80 {
            for x in 0..80 {
                let inside = (8..72).contains(&x) && (8..72).contains(&y);
                assert_eq!(m.pixels()[y * 80 + x] == 1.0, inside, "pixel ({x}, {y})");
            }
        }
    }

    #[test]
    fn circle_radius_matches_area() {
        let m = generate_shape_mask(ShapeKind::Circle, 80, 0.64, 0.0).unwrap();
        let r = (0.64 * 6400.0 / std::f64::consts::PI).sqrt();
        assert!((r - 36.1).abs() < 0.05);
        let count = m.pixels().iter().filter(|&&p| p == 1.0).count() as f64;
        assert!((count - 0.64 * 6400.0).abs() <= 0.02 * 0.64 * 6400.0);
        // Every foreground pixel lies within one pixel of the ideal disk.
        for (p, &v) in m.pixels().iter().enumerate() {
            let d = ((p % 80) as f64 + 0.5 - 40.0).hypot((p / 80) as f64 + 0.5 - 40.0);
            if v == 1.0 {
                assert!(d <= r + 1.0);
            } else {
                assert!(d >= r - 1.0);
            }
        }
    }

    #[test]
    fn every_kind_meets_area_and_connectivity_across_band() {
        for kind in ShapeKind::ALL {
            for &a in &[0.55, 0.64, 0.75, 0.85] {
                for &rot in &[0.0, 17.0, 36.0, 200.0] {
                    let m = generate_shape_mask(kind, 80, a, rot).unwrap();
                    assert!(m.is_binary());
                    assert!(m.is_single_component());
                    assert!((m.foreground_fraction() - a).abs() <= 0.02 * a, "{kind} {a} {rot}");
                }
            }
        }
    }

    #[test]
    fn rejects_out_of_band_area_and_unknown_kind() {
        assert!(generate_shape_mask(ShapeKind::Circle, 80, 0.5, 0.0).is_err());
        assert!(generate_shape_mask(ShapeKind::Circle, 80, 0.9, 0.0).is_err());
        assert!(generate_shape_mask(ShapeKind::Circle, 64, 0.6, 0.0).is_err());
        assert!("star".parse::<ShapeKind>().is_err());
        assert_eq!("heptagon".parse::<ShapeKind>().unwrap(), ShapeKind::Heptagon);
    }

    #[test]
    fn rotation_by_a_symmetry_angle_is_identity() {
        let a = generate_shape_mask(ShapeKind::Pentagon, 80, 0.6, 10.0).unwrap();
        let b = generate_shape_mask(ShapeKind::Pentagon, 80, 0.6, 82.0).unwrap();
        let diff = a.pixels().iter().zip(b.pixels()).filter(|(x, y)| x != y).count();
        assert!(diff < 8, "{diff} pixels differ");
        let c = generate_shape_mask(ShapeKind::Pentagon, 80, 0.6, 46.0).unwrap();
        assert!(a.pixels().iter().zip(c.pixels()).filter(|(x, y)| x != y).count() > 50);
    }

    #[test]
    fn small_corpus_round_trips_through_files() {
        let cfg = CorpusConfig {
            per_kind: 2,
            seed: 5,
            ..Default::default()
        };
        let corpus = build_corpus(&cfg).unwrap();
        assert_eq!(corpus.len(), 10);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("shapes.bin");
        corpus.save(&path).unwrap();
        let back = ShapeCorpus::load(&path).unwrap();
        assert_eq!(back, corpus);
        assert_eq!(build_corpus(&cfg).unwrap().to_bytes(), corpus.to_bytes());
    }

    #[test]
    fn sampling_is_reproducible_and_rejects_empty() {
        let corpus = build_corpus(&CorpusConfig {
            per_kind: 2,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(sample_indices(&corpus, 3, 7).unwrap(), sample_indices(&corpus, 3, 7).unwrap());
        let t = sample_batch_tensor(&corpus, 4, 1).unwrap();
        assert_eq!(t.shape(), &[4, 1, 80, 80]);
        let empty = ShapeCorpus {
            size: 80,
            data: vec![],
            records: vec![],
        };
        assert!(sample_batch(&empty, 1, 0).is_err());
        assert!(sample_batch(&corpus, 0, 0).is_err());
    }
}
