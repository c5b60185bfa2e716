use crate::error::{LgsError, Result};

/// Row-major interleaved RGB image with channel values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut img = Self::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(LgsError::invalid_argument(format!(
                "image buffer has {} values, expected {}",
                data.len(),
                width * height * 3
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn ensure_same_shape(&self, other: &Image) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(LgsError::invalid_argument(format!(
                "image shape mismatch: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )))
        }
    }

    /// Round-trips every channel through 8-bit storage, `round(255 v) / 255`.
    pub fn quantized_8bit(&self) -> Image {
        let data = self
            .data
            .iter()
            .map(|&v| f64::from(quantize_channel(v)) / 255.0)
            .collect();
        Image {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

pub fn quantize_channel(v: f64) -> u8 {
    (255.0 * v.clamp(0.0, 1.0)).round() as u8
}
