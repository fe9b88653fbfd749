//! Resampling kernels and PNG helpers.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{SparseMap, SparseMapBuilder};

/// How bilinear sampling treats coordinates outside the source grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Border {
    /// Missing neighbors contribute zero.
    Zero,
    /// Coordinates are clamped to the nearest edge pixel.
    Clamp,
}

/// Bilinear taps `(row-major index, weight)` for sampling a `w×h` grid at
/// pixel coordinates `(x, y)`, where pixel `(i, j)` sits at `(j, i)`.
pub fn bilinear_taps(x: f64, y: f64, w: usize, h: usize, border: Border) -> Vec<(usize, f64)> {
    let (mut x, mut y) = (x, y);
    if border == Border::Clamp {
        x = x.clamp(0.0, (w - 1) as f64);
        y = y.clamp(0.0, (h - 1) as f64);
    }
    let x0 = x.floor();
    let y0 = y.floor();
    let (fx, fy) = (x - x0, y - y0);
    let (x0, y0) = (x0 as i64, y0 as i64);
    let mut taps = Vec::with_capacity(4);
    for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
        for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
            let wt = wx * wy;
            let (xi, yi) = (x0 + dx, y0 + dy);
            if wt == 0.0 || xi < 0 || yi < 0 || xi >= w as i64 || yi >= h as i64 {
                continue;
            }
            taps.push((yi as usize * w + xi as usize, wt));
        }
    }
    taps
}

/// Box-filter resize `in_h×in_w → out_h×out_w` as a sparse map over
/// row-major pixels. Each output pixel averages the input area it covers,
/// with fractional weights at the box edges.
pub fn area_resize_map(in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> SparseMap {
    let spans = |n_in: usize, n_out: usize| -> Vec<Vec<(usize, f64)>> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|o| {
                let (a, b) = (o as f64 * scale, (o + 1) as f64 * scale);
                let mut v = Vec::new();
                let mut i = a.floor() as usize;
                while (i as f64) < b && i < n_in {
                    let lo = a.max(i as f64);
                    let hi = b.min((i + 1) as f64);
                    if hi > lo {
                        v.push((i, (hi - lo) / scale));
                    }
                    i += 1;
                }
                v
            })
            .collect()
    };
    let ys = spans(in_h, out_h);
    let xs = spans(in_w, out_w);
    let mut b = SparseMapBuilder::new(in_h * in_w);
    for ry in &ys {
        for rx in &xs {
            b.push_row(
                ry.iter()
                    .flat_map(|&(y, wy)| rx.iter().map(move |&(x, wx)| (y * in_w + x, wy * wx))),
            );
        }
    }
    b.finish()
}

/// Bilinear resize (pixel-center aligned, clamped borders).
pub fn bilinear_resize_map(in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> SparseMap {
    let mut b = SparseMapBuilder::new(in_h * in_w);
    let (sy, sx) = (in_h as f64 / out_h as f64, in_w as f64 / out_w as f64);
    for i in 0..out_h {
        for j in 0..out_w {
            let y = (i as f64 + 0.5) * sy - 0.5;
            let x = (j as f64 + 0.5) * sx - 0.5;
            b.push_row(bilinear_taps(x, y, in_w, in_h, Border::Clamp));
        }
    }
    b.finish()
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode(path: &Path, w: usize, h: usize, color: png::ColorType, data: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let image_err = |e: png::EncodingError| Error::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let mut writer = enc.write_header().map_err(image_err)?;
    writer.write_image_data(data).map_err(image_err)?;
    writer.finish().map_err(image_err)
}

/// Writes interleaved 8-bit RGB.
pub fn save_rgb8(path: &Path, w: usize, h: usize, rgb: &[u8]) -> Result<()> {
    encode(path, w, h, png::ColorType::Rgb, rgb)
}

pub fn save_rgba8(path: &Path, w: usize, h: usize, rgba: &[u8]) -> Result<()> {
    encode(path, w, h, png::ColorType::Rgba, rgba)
}

/// Writes planar `[3, h, w]` values in `[0, 1]` as RGB.
pub fn save_planar_rgb(path: &Path, w: usize, h: usize, planar: &[f64]) -> Result<()> {
    let n = w * h;
    let bytes: Vec<u8> = (0..n).flat_map(|p| (0..3).map(move |c| to_byte(planar[c * n + p]))).collect();
    save_rgb8(path, w, h, &bytes)
}

/// Writes values in `[0, 1]` as 8-bit grayscale.
pub fn save_gray(path: &Path, w: usize, h: usize, values: &[f64]) -> Result<()> {
    let bytes: Vec<u8> = values.iter().map(|&v| to_byte(v)).collect();
    encode(path, w, h, png::ColorType::Grayscale, &bytes)
}

/// Decoded 8-bit image with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Png8 {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

pub fn load_png(path: &Path) -> Result<Png8> {
    let image_err = |reason: String| Error::Image {
        path: path.to_path_buf(),
        reason,
    };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(std::io::BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| image_err(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| image_err("image too large".into()))?];
    let info = reader.next_frame(&mut buf).map_err(|e| image_err(e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(image_err("only 8-bit images are supported".into()));
    }
    let channels = info.color_type.samples();
    buf.truncate(info.buffer_size());
    Ok(Png8 {
        width: info.width as usize,
        height: info.height as usize,
        channels,
        data: buf,
    })
}
