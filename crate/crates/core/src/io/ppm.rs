//! Binary PPM (`P6`, maxval 255) images.

use std::path::Path;

use crate::error::{FormatKind, LgsError, Result};
use crate::image::{quantize_channel, Image};

pub fn encode_ppm(image: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend(image.data.iter().map(|&v| quantize_channel(v)));
    out
}

/// Reads the next whitespace-separated header token, skipping `#` comments.
fn token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(LgsError::format(FormatKind::Header, "truncated PPM header"));
    }
    Ok(&bytes[start..*pos])
}

fn number(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    let t = token(bytes, pos)?;
    std::str::from_utf8(t)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| LgsError::format(FormatKind::Header, "malformed PPM header number"))
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0;
    let magic = token(bytes, &mut pos).map_err(|_| LgsError::format(FormatKind::Magic, "empty PPM"))?;
    if magic != b"P6" {
        return Err(LgsError::format(
            FormatKind::Magic,
            format!("unsupported PPM variant {:?}", String::from_utf8_lossy(magic)),
        ));
    }
    let width = number(bytes, &mut pos)?;
    let height = number(bytes, &mut pos)?;
    let maxval = number(bytes, &mut pos)?;
    if maxval != 255 {
        return Err(LgsError::format(FormatKind::Header, format!("maxval {maxval}, expected 255")));
    }
    if width == 0 || height == 0 {
        return Err(LgsError::format(FormatKind::Header, "zero image dimension"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(LgsError::format(FormatKind::Header, "missing raster separator"));
    }
    pos += 1;
    let n = width
        .checked_mul(height)
        .and_then(|p| p.checked_mul(3))
        .ok_or_else(|| LgsError::format(FormatKind::Length, "image size overflows"))?;
    if bytes.len() - pos != n {
        return Err(LgsError::format(
            FormatKind::Length,
            format!("raster has {} bytes, expected {n}", bytes.len() - pos),
        ));
    }
    let data = bytes[pos..].iter().map(|&b| f64::from(b) / 255.0).collect();
    Image::from_data(width, height, data)
}

pub fn write_image(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_ppm(image))?;
    Ok(())
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    decode_ppm(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn black_round_trip_is_exact() {
        let img = Image::new(5, 3);
        assert_eq!(decode_ppm(&encode_ppm(&img)).unwrap(), img);
    }

    #[test]
    fn half_quantizes_to_128() {
        let img = Image::filled(1, 1, [0.5, 0.0, 1.0]);
        let bytes = encode_ppm(&img);
        assert_eq!(&bytes[bytes.len() - 3..], &[128, 0, 255]);
        let back = decode_ppm(&bytes).unwrap();
        assert!((back.data[0] - 128.0 / 255.0).abs() < 1e-15);
        assert!((back.data[0] - 0.50196).abs() < 1e-5);
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut bytes = b"P6 # comment\n2 1\n# another\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 0, 0, 255, 255, 255]);
        let img = decode_ppm(&bytes).unwrap();
        assert_eq!(img.pixel(1, 0), [1.0; 3]);
    }

    #[test]
    fn rejects_ascii_wrong_maxval_and_truncation() {
        assert!(matches!(
            decode_ppm(b"P3\n1 1\n255\n0 0 0\n"),
            Err(LgsError::Format { kind: FormatKind::Magic, .. })
        ));
        assert!(matches!(
            decode_ppm(b"P6\n1 1\n65535\n\0\0\0\0\0\0"),
            Err(LgsError::Format { kind: FormatKind::Header, .. })
        ));
        assert!(matches!(
            decode_ppm(b"P6\n2 1\n255\n\0\0\0"),
            Err(LgsError::Format { kind: FormatKind::Length, .. })
        ));
        assert!(decode_ppm(b"P6\nfoo 1\n255\n").is_err());
    }
}
