//! Second-order spherical-harmonics irradiance.

use crate::error::{Error, Result};

/// Nine real SH basis functions at unit direction `n`, ordered
/// `(0,0), (1,-1), (1,0), (1,1), (2,-2), (2,-1), (2,0), (2,1), (2,2)`.
pub fn sh_basis(n: [f64; 3]) -> [f64; 9] {
    let [x, y, z] = n;
    [
        0.282_094_791_773_878_1,
        0.488_602_511_902_919_9 * y,
        0.488_602_511_902_919_9 * z,
        0.488_602_511_902_919_9 * x,
        1.092_548_430_592_079_2 * x * y,
        1.092_548_430_592_079_2 * y * z,
        0.315_391_565_252_520_05 * (3.0 * z * z - 1.0),
        1.092_548_430_592_079_2 * x * z,
        0.546_274_215_296_039_6 * (x * x - y * y),
    ]
}

/// Clamped-cosine convolution weights per band.
const KERNEL: [f64; 3] = [
    std::f64::consts::PI,
    2.0 * std::f64::consts::PI / 3.0,
    std::f64::consts::PI / 4.0,
];
const BAND: [usize; 9] = [0, 1, 1, 1, 2, 2, 2, 2, 2];

/// Per-channel diffuse gain for surface normal `n`.
///
/// `sh` is channel-major (`sh[c * 9 + k]`) and describes incoming radiance.
/// The gain is the irradiance divided by π, i.e. the outgoing radiance of a
/// white Lambertian surface, clamped below at zero.
pub fn sh_irradiance(sh: &[f64; 27], n: [f64; 3]) -> Result<[f64; 3]> {
    let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
    if !(len > 1e-12) || !len.is_finite() {
        return Err(Error::invalid("normal must be nonzero and finite"));
    }
    Ok(sh_gain_unchecked(sh, [n[0] / len, n[1] / len, n[2] / len]))
}

pub(crate) fn sh_gain_unchecked(sh: &[f64; 27], n: [f64; 3]) -> [f64; 3] {
    let y = sh_basis(n);
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let e: f64 = (0..9).map(|k| KERNEL[BAND[k]] * sh[c * 9 + k] * y[k]).sum();
        *o = (e / std::f64::consts::PI).max(0.0);
    }
    out
}

/// Coefficients giving a constant gain `g` per channel.
pub fn sh_constant(g: [f64; 3]) -> [f64; 27] {
    let mut sh = [0.0; 27];
    for c in 0..3 {
        sh[c * 9] = g[c] / 0.282_094_791_773_878_1;
    }
    sh
}

/// Ambient gain `g` plus a directional term: a surface facing `dir` (unit
/// vector) gets `g·(1 + strength)`, one facing away `g·(1 − strength)`.
pub fn sh_directional(g: [f64; 3], dir: [f64; 3], strength: f64) -> [f64; 27] {
    let mut sh = sh_constant(g);
    // Linear band: basis 0.4886, kernel 2/3 after dividing by π.
    let k1 = 0.488_602_511_902_919_9 * 2.0 / 3.0;
    for c in 0..3 {
        let a = g[c] * strength / k1;
        sh[c * 9 + 1] = a * dir[1];
        sh[c * 9 + 2] = a * dir[2];
        sh[c * 9 + 3] = a * dir[0];
    }
    sh
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dc_only_gain_is_constant_and_scales() {
        let sh = sh_constant([0.5, 1.0, 2.0]);
        for n in [[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.3, -0.4, 0.866]] {
            let g = sh_irradiance(&sh, n).unwrap();
            assert!((g[0] - 0.5).abs() < 1e-12 && (g[1] - 1.0).abs() < 1e-12 && (g[2] - 2.0).abs() < 1e-12);
        }
        assert_eq!(sh_irradiance(&[0.0; 27], [0.0, 1.0, 0.0]).unwrap(), [0.0; 3]);
        assert!(sh_irradiance(&sh, [0.0; 3]).is_err());
    }

    #[test]
    fn directional_light_brightens_facing_side() {
        let d = [0.6, 0.0, 0.8];
        let sh = sh_directional([1.0; 3], d, 0.4);
        let front = sh_irradiance(&sh, d).unwrap();
        let back = sh_irradiance(&sh, [-0.6, 0.0, -0.8]).unwrap();
        let side = sh_irradiance(&sh, [0.0, 1.0, 0.0]).unwrap();
        assert!((front[0] - 1.4).abs() < 1e-12 && (back[1] - 0.6).abs() < 1e-12);
        assert!((side[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn basis_is_orthonormal_under_quadrature() {
        let (nt, np) = (200, 400);
        let mut gram = [[0.0; 9]; 9];
        for i in 0..nt {
            let t = (i as f64 + 0.5) * std::f64::consts::PI / nt as f64;
            for j in 0..np {
                let p = (j as f64 + 0.5) * std::f64::consts::TAU / np as f64;
                let y = sh_basis([t.sin() * p.cos(), t.sin() * p.sin(), t.cos()]);
                let dw = t.sin() * (std::f64::consts::PI / nt as f64) * (std::f64::consts::TAU / np as f64);
                for a in 0..9 {
                    for b in 0..9 {
                        gram[a][b] += y[a] * y[b] * dw;
                    }
                }
            }
        }
        for a in 0..9 {
            for b in 0..9 {
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((gram[a][b] - want).abs() < 1e-3, "{a} {b} {}", gram[a][b]);
            }
        }
    }
}
