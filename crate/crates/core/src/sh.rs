//! Real spherical harmonics up to degree 3 (Condon-Shortley phase, `m = -l..l`
//! ordering), as used for view-dependent Gaussian color.

use nalgebra::Vector3;

use crate::error::{LgsError, Result};
use crate::scene::{sh_basis_count, MAX_SH_DEGREE};

const C0: f64 = 0.282_094_791_773_878_1;
const C1: f64 = 0.488_602_511_902_919_9;
const C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Offset added to the SH projection so that all-zero coefficients give mid gray.
pub const COLOR_OFFSET: f64 = 0.5;

/// Degree encoded by a coefficient slice of `3 (d+1)²` values.
pub fn degree_from_len(len: usize) -> Option<u8> {
    (0..=MAX_SH_DEGREE).find(|&d| 3 * sh_basis_count(d) == len)
}

/// Basis values at `dir` (assumed unit length) for degrees `0..=degree`.
pub fn basis(degree: u8, dir: &Vector3<f64>, out: &mut [f64; 16]) {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    out[0] = C0;
    if degree == 0 {
        return;
    }
    out[1] = -C1 * y;
    out[2] = C1 * z;
    out[3] = -C1 * x;
    if degree == 1 {
        return;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    out[4] = C2[0] * x * y;
    out[5] = C2[1] * y * z;
    out[6] = C2[2] * (2.0 * zz - xx - yy);
    out[7] = C2[3] * x * z;
    out[8] = C2[4] * (xx - yy);
    if degree == 2 {
        return;
    }
    out[9] = C3[0] * y * (3.0 * xx - yy);
    out[10] = C3[1] * x * y * z;
    out[11] = C3[2] * y * (4.0 * zz - xx - yy);
    out[12] = C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    out[13] = C3[4] * x * (4.0 * zz - xx - yy);
    out[14] = C3[5] * z * (xx - yy);
    out[15] = C3[6] * x * (xx - 3.0 * yy);
}

/// Partial derivatives of each basis polynomial with respect to `(x, y, z)`.
pub fn basis_gradient(degree: u8, dir: &Vector3<f64>, out: &mut [[f64; 3]; 16]) {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    out[0] = [0.0; 3];
    if degree == 0 {
        return;
    }
    out[1] = [0.0, -C1, 0.0];
    out[2] = [0.0, 0.0, C1];
    out[3] = [-C1, 0.0, 0.0];
    if degree == 1 {
        return;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    out[4] = [C2[0] * y, C2[0] * x, 0.0];
    out[5] = [0.0, C2[1] * z, C2[1] * y];
    out[6] = [-2.0 * C2[2] * x, -2.0 * C2[2] * y, 4.0 * C2[2] * z];
    out[7] = [C2[3] * z, 0.0, C2[3] * x];
    out[8] = [2.0 * C2[4] * x, -2.0 * C2[4] * y, 0.0];
    if degree == 2 {
        return;
    }
    out[9] = [C3[0] * 6.0 * x * y, C3[0] * (3.0 * xx - 3.0 * yy), 0.0];
    out[10] = [C3[1] * y * z, C3[1] * x * z, C3[1] * x * y];
    out[11] = [
        C3[2] * -2.0 * x * y,
        C3[2] * (4.0 * zz - xx - 3.0 * yy),
        C3[2] * 8.0 * y * z,
    ];
    out[12] = [
        C3[3] * -6.0 * x * z,
        C3[3] * -6.0 * y * z,
        C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy),
    ];
    out[13] = [
        C3[4] * (4.0 * zz - 3.0 * xx - yy),
        C3[4] * -2.0 * x * y,
        C3[4] * 8.0 * x * z,
    ];
    out[14] = [C3[5] * 2.0 * x * z, C3[5] * -2.0 * y * z, C3[5] * (xx - yy)];
    out[15] = [C3[6] * (3.0 * xx - 3.0 * yy), C3[6] * -6.0 * x * y, 0.0];
}

/// Unclamped color `Σ_b c_b Y_b(dir) + 0.5` using the first `(degree+1)²` bases.
pub(crate) fn raw_color(sh: &[f64], degree: u8, dir: &Vector3<f64>) -> [f64; 3] {
    let mut y = [0.0; 16];
    basis(degree, dir, &mut y);
    let mut rgb = [COLOR_OFFSET; 3];
    for (b, yb) in y.iter().enumerate().take(sh_basis_count(degree)) {
        for (c, v) in rgb.iter_mut().enumerate() {
            *v += sh[3 * b + c] * yb;
        }
    }
    rgb
}

/// View-dependent RGB for a unit direction, clamped to `[0, 1]`.
pub fn sh_eval(sh: &[f64], degree: u8, dir: &Vector3<f64>) -> Result<[f64; 3]> {
    let stored = degree_from_len(sh.len()).ok_or_else(|| {
        LgsError::invalid_argument(format!("{} is not a valid SH coefficient count", sh.len()))
    })?;
    if degree > stored {
        return Err(LgsError::invalid_argument(format!(
            "requested SH degree {degree} exceeds stored degree {stored}"
        )));
    }
    Ok(raw_color(sh, degree, dir).map(|v| v.clamp(0.0, 1.0)))
}
