//! Self-contained little-endian binary scene file (`LGS1`): header, Gaussian
//! records, feature planes, MLP, bounds. All floats are binary32.

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::deformation::{Bounds, DeformationField, Dense, FeaturePlane, PlaneAxes, TinyMlp};
use crate::error::{FormatKind, LgsError, Result};
use crate::scene::{sh_coeff_count, Gaussian, GaussianCloud, Scene, MAX_SH_DEGREE};

pub const MAGIC: [u8; 4] = *b"LGS1";
pub const VERSION: u32 = 1;
/// Magic, version, Gaussian count, active SH degree.
pub const HEADER_BYTES: u64 = 4 + 4 + 8 + 1;
const PLANE_HEADER_BYTES: u64 = 1 + 4 + 4;
const BOUNDS_BYTES: u64 = 8 * 4;

/// Byte accounting of one encoded scene. `gs_bytes` covers the header and
/// Gaussian records; `deform_bytes` covers planes, MLP and bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeReport {
    pub overall_bytes: u64,
    pub gs_bytes: u64,
    pub deform_bytes: u64,
    pub gaussian_count: usize,
    /// Total `R₁·R₂` cells over the six planes.
    pub plane_cells: usize,
}

/// Floats stored per Gaussian: 11 geometric/opacity values plus SH.
pub fn floats_per_gaussian(sh_degree: u8) -> usize {
    11 + sh_coeff_count(sh_degree)
}

/// Encoded size computed from the scene's shape alone.
pub fn size_breakdown(scene: &Scene) -> SizeReport {
    let n = scene.cloud.len() as u64;
    let gs_bytes = HEADER_BYTES + n * 4 * floats_per_gaussian(scene.cloud.sh_degree) as u64;
    let planes: u64 = scene
        .field
        .planes
        .iter()
        .map(|p| PLANE_HEADER_BYTES + 4 * p.values.len() as u64)
        .sum();
    let mlp: u64 = 1 + scene
        .field
        .mlp
        .layers
        .iter()
        .map(|l| 8 + 4 * (l.weights.len() + l.bias.len()) as u64)
        .sum::<u64>();
    let deform_bytes = 2 + planes + mlp + BOUNDS_BYTES;
    SizeReport {
        overall_bytes: gs_bytes + deform_bytes,
        gs_bytes,
        deform_bytes,
        gaussian_count: scene.cloud.len(),
        plane_cells: scene.field.planes.iter().map(|p| p.res[0] * p.res[1]).sum(),
    }
}

fn put_f32s(out: &mut Vec<u8>, values: impl IntoIterator<Item = f64>) {
    for v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn u32_of(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| LgsError::invalid_argument(format!("{what} {v} does not fit in u32")))
}

pub fn encode_scene(scene: &Scene) -> Result<Vec<u8>> {
    scene.cloud.validate()?;
    scene.field.validate()?;
    let size = size_breakdown(scene);
    let mut out = Vec::with_capacity(size.overall_bytes as usize);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(scene.cloud.len() as u64).to_le_bytes());
    out.push(scene.cloud.sh_degree);
    for g in &scene.cloud.gaussians {
        put_f32s(&mut out, g.center.iter().copied());
        put_f32s(&mut out, g.rotation);
        put_f32s(&mut out, g.scale.iter().copied());
        put_f32s(&mut out, [g.opacity]);
        put_f32s(&mut out, g.sh.iter().copied());
    }

    let d = u16::try_from(scene.field.feature_dim())
        .map_err(|_| LgsError::invalid_argument("feature_dim does not fit in u16"))?;
    out.extend_from_slice(&d.to_le_bytes());
    for p in &scene.field.planes {
        out.push(p.axes.tag());
        out.extend_from_slice(&u32_of(p.res[0], "plane resolution")?.to_le_bytes());
        out.extend_from_slice(&u32_of(p.res[1], "plane resolution")?.to_le_bytes());
        put_f32s(&mut out, p.values.iter().copied());
    }
    let layers = u8::try_from(scene.field.mlp.layers.len())
        .map_err(|_| LgsError::invalid_argument("more than 255 mlp layers"))?;
    out.push(layers);
    for l in &scene.field.mlp.layers {
        out.extend_from_slice(&u32_of(l.rows, "mlp rows")?.to_le_bytes());
        out.extend_from_slice(&u32_of(l.cols, "mlp cols")?.to_le_bytes());
        put_f32s(&mut out, l.weights.iter().copied());
        put_f32s(&mut out, l.bias.iter().copied());
    }
    let b = &scene.field.bounds;
    put_f32s(&mut out, b.min.iter().chain(b.max.iter()).copied());
    put_f32s(&mut out, b.time);
    debug_assert_eq!(out.len() as u64, size.overall_bytes);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            LgsError::format(
                FormatKind::Length,
                format!("payload truncated at byte {} (need {n} more)", self.pos),
            )
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// Reads `n` floats after checking the remaining length, so corrupt counts
    /// never trigger huge allocations.
    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| {
            LgsError::format(FormatKind::Length, "declared count overflows")
        })?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect())
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

fn header_error(e: LgsError) -> LgsError {
    match e {
        LgsError::InvalidArgument(msg) | LgsError::InvalidState(msg) => LgsError::format(FormatKind::Header, msg),
        other => other,
    }
}

pub fn decode_scene(bytes: &[u8]) -> Result<Scene> {
    let mut r = Reader { bytes, pos: 0 };
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(LgsError::format(FormatKind::Magic, "missing LGS1 magic"));
    }
    r.take(4)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(LgsError::format(FormatKind::Version, format!("unsupported version {version}")));
    }
    let count = r.u64()?;
    let sh_degree = r.u8()?;
    if sh_degree > MAX_SH_DEGREE {
        return Err(LgsError::format(FormatKind::Header, format!("sh degree {sh_degree} out of range")));
    }
    let per = floats_per_gaussian(sh_degree);
    let count = usize::try_from(count)
        .ok()
        .filter(|&c| c.checked_mul(per * 4).is_some_and(|b| b <= r.remaining()))
        .ok_or_else(|| LgsError::format(FormatKind::Length, format!("{count} gaussians exceed payload")))?;
    let mut gaussians = Vec::with_capacity(count);
    for _ in 0..count {
        let v = r.f32s(per)?;
        gaussians.push(Gaussian {
            center: Vector3::new(v[0], v[1], v[2]),
            rotation: [v[3], v[4], v[5], v[6]],
            scale: Vector3::new(v[7], v[8], v[9]),
            opacity: v[10],
            sh: v[11..].to_vec(),
        });
    }

    let d = r.u16()? as usize;
    let mut planes = Vec::with_capacity(6);
    for want in PlaneAxes::ALL {
        let tag = r.u8()?;
        if PlaneAxes::from_tag(tag) != Some(want) {
            return Err(LgsError::format(FormatKind::Header, format!("unexpected plane tag {tag}")));
        }
        let res = [r.u32()? as usize, r.u32()? as usize];
        let n = res[0]
            .checked_mul(res[1])
            .and_then(|c| c.checked_mul(d))
            .ok_or_else(|| LgsError::format(FormatKind::Length, "plane size overflows"))?;
        planes.push(FeaturePlane {
            axes: want,
            res,
            feature_dim: d,
            values: r.f32s(n)?,
        });
    }
    let layer_count = r.u8()?;
    let mut layers = Vec::with_capacity(layer_count as usize);
    for _ in 0..layer_count {
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| LgsError::format(FormatKind::Length, "layer size overflows"))?;
        let weights = r.f32s(n)?;
        let bias = r.f32s(rows)?;
        layers.push(Dense {
            rows,
            cols,
            weights,
            bias,
        });
    }
    let b = r.f32s(8)?;
    if r.remaining() != 0 {
        return Err(LgsError::format(
            FormatKind::Length,
            format!("{} trailing bytes after payload", r.remaining()),
        ));
    }
    let scene = Scene {
        cloud: GaussianCloud { sh_degree, gaussians },
        field: DeformationField {
            planes,
            bounds: Bounds {
                min: Vector3::new(b[0], b[1], b[2]),
                max: Vector3::new(b[3], b[4], b[5]),
                time: [b[6], b[7]],
            },
            mlp: TinyMlp { layers },
        },
    };
    scene.cloud.validate().map_err(header_error)?;
    scene.field.validate().map_err(header_error)?;
    scene.field.bounds.validate().map_err(header_error)?;
    Ok(scene)
}

/// Returns the number of bytes written.
pub fn save_scene(scene: &Scene, path: impl AsRef<Path>) -> Result<u64> {
    let bytes = encode_scene(scene)?;
    std::fs::write(path, &bytes)?;
    Ok(bytes.len() as u64)
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene> {
    decode_scene(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_scene() -> Scene {
        Scene {
            cloud: GaussianCloud::new(0),
            field: DeformationField::identity([2, 2, 2, 2], 1, Bounds::cube(1.0)),
        }
    }

    #[test]
    fn minimal_scene_size_matches_arithmetic() {
        let scene = minimal_scene();
        let bytes = encode_scene(&scene).unwrap();
        // 17 header + 2 feature_dim + 6·(9 + 4·2·2·1) + 1 layer count
        // + (8 + 4·(10·1 + 10)) + 32 bounds.
        let want = 17 + 2 + 6 * (9 + 16) + 1 + (8 + 80) + 32;
        assert_eq!(bytes.len(), want);
        assert_eq!(size_breakdown(&scene).overall_bytes, want as u64);
        assert_eq!(decode_scene(&bytes).unwrap(), scene);
    }

    #[test]
    fn rejects_bad_magic_version_and_length() {
        let bytes = encode_scene(&minimal_scene()).unwrap();
        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_scene(&bad), Err(LgsError::Format { kind: FormatKind::Magic, .. })));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(decode_scene(&bad), Err(LgsError::Format { kind: FormatKind::Version, .. })));
        assert!(matches!(
            decode_scene(&bytes[..bytes.len() - 1]),
            Err(LgsError::Format { kind: FormatKind::Length, .. })
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_scene(&long), Err(LgsError::Format { kind: FormatKind::Length, .. })));
        let mut huge = bytes;
        huge[8..16].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(decode_scene(&huge), Err(LgsError::Format { kind: FormatKind::Length, .. })));
    }

    #[test]
    fn gaussian_record_layout() {
        let mut scene = minimal_scene();
        scene.cloud = GaussianCloud::new(3);
        let mut g = Gaussian::isotropic(Vector3::new(1.0, 2.0, 3.0), 0.5, 0.25, 3);
        g.sh[47] = -1.5;
        scene.cloud.gaussians.push(g);
        let bytes = encode_scene(&scene).unwrap();
        assert_eq!(size_breakdown(&scene).gs_bytes, 17 + 59 * 4);
        let f = |k: usize| f32::from_le_bytes(bytes[17 + 4 * k..21 + 4 * k].try_into().unwrap());
        assert_eq!([f(0), f(1), f(2)], [1.0, 2.0, 3.0]);
        assert_eq!(f(3), 1.0);
        assert_eq!(f(10), 0.25);
        assert_eq!(f(58), -1.5);
        assert_eq!(decode_scene(&bytes).unwrap(), scene);
    }
}
