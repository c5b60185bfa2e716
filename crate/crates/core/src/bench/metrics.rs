//! Image quality metrics for images with channel values in `[0, 1]`.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{LgsError, Result};
use crate::image::Image;

/// PSNR in decibels; identical images give [`Psnr::Infinite`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    Finite(f64),
    Infinite,
}

impl Psnr {
    pub fn from_mse(mse: f64) -> Self {
        if mse == 0.0 {
            Psnr::Infinite
        } else {
            Psnr::Finite(10.0 * (1.0 / mse).log10())
        }
    }

    pub fn db(self) -> f64 {
        match self {
            Psnr::Finite(v) => v,
            Psnr::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Psnr::Infinite)
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Finite(v) => write!(f, "{v:.3}"),
            Psnr::Infinite => f.write_str("inf"),
        }
    }
}

/// Finite values as JSON numbers, the infinite flag as the string `"inf"`.
impl Serialize for Psnr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Psnr::Finite(v) => s.serialize_f64(*v),
            Psnr::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Psnr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Psnr::Finite(v)),
            Raw::Text(t) if t == "inf" => Ok(Psnr::Infinite),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("invalid psnr {t:?}"))),
        }
    }
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_shape(b)?;
    if a.data.is_empty() {
        return Err(LgsError::invalid_argument("empty image"));
    }
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64)
}

/// `10 log₁₀(1 / MSE)`.
pub fn psnr(a: &Image, b: &Image) -> Result<Psnr> {
    Ok(Psnr::from_mse(mse(a, b)?))
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let x = i as f64 - half;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable valid-mode filtering of one channel.
fn filter(src: &[f64], width: usize, height: usize, w: &[f64; SSIM_WINDOW]) -> (Vec<f64>, usize, usize) {
    let (ow, oh) = (width + 1 - SSIM_WINDOW, height + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; ow * height];
    for y in 0..height {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|k| w[k] * src[y * width + x + k]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|k| w[k] * rows[(y + k) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Single-scale SSIM: 11×11 Gaussian window (σ = 1.5), valid windows only,
/// dynamic range 1, mean over windows then over channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_shape(b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(LgsError::invalid_argument(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}"
        )));
    }
    let (c1, c2) = (K1 * K1, K2 * K2);
    let w = gaussian_window();
    let (width, height) = (a.width, a.height);
    let mut total = 0.0;
    for ch in 0..3 {
        let x: Vec<f64> = a.data.iter().skip(ch).step_by(3).copied().collect();
        let y: Vec<f64> = b.data.iter().skip(ch).step_by(3).copied().collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let (mx, ow, oh) = filter(&x, width, height, &w);
        let (my, ..) = filter(&y, width, height, &w);
        let (sxx, ..) = filter(&xx, width, height, &w);
        let (syy, ..) = filter(&yy, width, height, &w);
        let (sxy, ..) = filter(&xy, width, height, &w);
        let mut sum = 0.0;
        for k in 0..ow * oh {
            let (ux, uy) = (mx[k], my[k]);
            let vx = sxx[k] - ux * ux;
            let vy = syy[k] - uy * uy;
            let cov = sxy[k] - ux * uy;
            sum += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += sum / (ow * oh) as f64;
    }
    Ok(total / 3.0)
}
