//! Seeded synthetic dynamic scene: a textured, mostly opaque surface slab with
//! redundant hidden and faint Gaussians, and a crafted deformation field that
//! moves and breathes one side of the slab while the rest stays static.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deformation::{Bounds, DeformationField, Dense, FeaturePlane, PlaneAxes, TinyMlp, MLP_OUTPUTS};
use crate::error::{LgsError, Result};
use crate::render::render_dynamic;
use crate::scene::{normalize_quat, sh_basis_count, Camera, Frame, Gaussian, GaussianCloud, Scene, SceneDataset, MAX_SH_DEGREE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub gaussian_count: usize,
    /// Peak displacement of the moving region (world units).
    pub amplitude: f64,
    /// Field grid cells along `(x, y, z, t)`.
    pub field_resolution: [usize; 4],
    pub feature_dim: usize,
    pub hidden_width: usize,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            gaussian_count: 2000,
            amplitude: 0.05,
            field_resolution: [64, 64, 64, 100],
            feature_dim: 16,
            hidden_width: 64,
            frames: 25,
            width: 128,
            height: 128,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.gaussian_count == 0 || self.frames == 0 || self.width == 0 || self.height == 0 {
            return Err(LgsError::invalid_argument("counts and image size must be at least 1"));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(LgsError::invalid_argument("amplitude must be ≥ 0"));
        }
        if self.field_resolution.iter().any(|&r| r < 2) {
            return Err(LgsError::invalid_argument("field resolutions must be at least 2"));
        }
        if self.feature_dim < 2 || self.hidden_width < 4 {
            return Err(LgsError::invalid_argument("feature_dim must be ≥ 2 and hidden_width ≥ 4"));
        }
        Ok(())
    }
}

pub const SYNTH_HALF_EXTENT: f64 = 0.6;
/// Normalized x coordinate where motion starts; fully moving beyond `+ MASK_RAMP`.
pub const MASK_START: f64 = 0.65;
pub const MASK_RAMP: f64 = 0.1;

/// Motion weight of a normalized x coordinate; exactly zero below [`MASK_START`].
pub fn motion_mask(u: f64) -> f64 {
    ((u - MASK_START) / MASK_RAMP).clamp(0.0, 1.0)
}

/// The fixed viewpoint used for every synthetic frame.
pub fn synth_camera(width: usize, height: usize) -> Camera {
    Camera::look_at(
        Vector3::new(0.55, -0.45, -2.1),
        Vector3::new(0.0, 0.0, 0.05),
        Vector3::new(0.0, -1.0, 0.0),
        1.5 * width.max(height) as f64,
        width,
        height,
    )
}

fn random_quat_near_z(rng: &mut ChaCha8Rng, tilt: f64) -> [f64; 4] {
    let angle = rng.random_range(-PI..PI);
    let axis = Vector3::new(rng.random_range(-tilt..tilt), rng.random_range(-tilt..tilt), 1.0).normalize();
    let (s, c) = (0.5 * angle).sin_cos();
    normalize_quat(&[c, s * axis.x, s * axis.y, s * axis.z]).unwrap()
}

/// Smooth base color of the surface texture at `(x, y)`.
fn base_color(x: f64, y: f64) -> [f64; 3] {
    [
        0.5 + 0.3 * (3.0 * x + 1.0).sin() * (2.0 * y).cos(),
        0.45 + 0.25 * (2.5 * y - 0.5).cos(),
        0.5 + 0.3 * (2.0 * x + 2.0 * y + 2.0).sin(),
    ]
}

const SH_C0: f64 = 0.282_094_791_773_878_1;

/// DC term from `rgb`, higher degrees with decaying random amplitudes.
fn smooth_sh(rng: &mut ChaCha8Rng, rgb: [f64; 3]) -> Vec<f64> {
    let mut sh = vec![0.0; 3 * sh_basis_count(MAX_SH_DEGREE)];
    for c in 0..3 {
        sh[c] = (rgb[c] - 0.5) / SH_C0;
    }
    for b in 1..sh_basis_count(MAX_SH_DEGREE) {
        let amp = match b {
            1..=3 => 0.08,
            4..=8 => 0.03,
            _ => 0.012,
        };
        for c in 0..3 {
            sh[3 * b + c] = rng.random_range(-amp..amp);
        }
    }
    sh
}

fn synth_cloud(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> GaussianCloud {
    let n = spec.gaussian_count;
    let surface = (n / 4).max(1);
    let hidden = (n - surface) * 3 / 5;
    let faint = n - surface - hidden;
    let half = 0.5;
    let side = (surface as f64).sqrt().ceil() as usize;
    let spacing = 2.0 * half / side as f64;
    let mut gaussians = Vec::with_capacity(n);

    // Opaque flat discs on a jittered grid: the visible surface.
    for k in 0..surface {
        let (i, j) = (k % side, k / side);
        let x = -half + (i as f64 + 0.5 + rng.random_range(-0.2..0.2)) * spacing;
        let y = -half + (j as f64 + 0.5 + rng.random_range(-0.2..0.2)) * spacing;
        let z = 0.03 * (4.0 * x).sin() * (3.0 * y).cos() + rng.random_range(-0.004..0.004);
        let r = spacing * rng.random_range(0.75..0.95);
        gaussians.push(Gaussian {
            center: Vector3::new(x, y, z),
            rotation: random_quat_near_z(rng, 0.1),
            scale: Vector3::new(r * rng.random_range(0.9..1.2), r * rng.random_range(0.9..1.2), 0.2 * r),
            opacity: rng.random_range(0.92..1.0),
            sh: smooth_sh(rng, base_color(x, y)),
        });
    }
    // Redundant Gaussians behind the surface.
    for _ in 0..hidden {
        let x = rng.random_range(-half..half);
        let y = rng.random_range(-half..half);
        let z = rng.random_range(0.06..0.25);
        let r = spacing * rng.random_range(0.4..0.7);
        gaussians.push(Gaussian {
            center: Vector3::new(x, y, z),
            rotation: random_quat_near_z(rng, 0.5),
            scale: Vector3::new(r, r * rng.random_range(0.7..1.0), 0.5 * r),
            opacity: rng.random_range(0.3..0.6),
            sh: smooth_sh(rng, base_color(x, y)),
        });
    }
    // Faint small speckle just in front of the surface.
    for _ in 0..faint {
        let x = rng.random_range(-half..half);
        let y = rng.random_range(-half..half);
        let z = rng.random_range(-0.08..-0.03);
        let r = rng.random_range(0.012..0.02);
        let base = base_color(x, y);
        let tint: [f64; 3] = std::array::from_fn(|c| (base[c] + rng.random_range(-0.15..0.15)).clamp(0.05, 0.95));
        gaussians.push(Gaussian {
            center: Vector3::new(x, y, z),
            rotation: random_quat_near_z(rng, 1.0),
            scale: Vector3::new(r, r, r),
            opacity: rng.random_range(0.02..0.06),
            sh: smooth_sh(rng, tint),
        });
    }
    GaussianCloud {
        sh_degree: MAX_SH_DEGREE,
        gaussians,
    }
}

/// Field whose feature channel 0 is `m(x)·sin 2πt` and channel 1 is
/// `m(x)·cos 2πt` (all other channels zero), decoded into
/// `Δμ = A·f₀·(0, 1, ½)` and `Δs = ⅕A·f₁·(1, 1, 0)`.
pub fn synth_field(spec: &SynthSpec) -> DeformationField {
    let res = spec.field_resolution;
    let d = spec.feature_dim;
    let bounds = Bounds::cube(SYNTH_HALF_EXTENT);
    let planes = PlaneAxes::ALL
        .iter()
        .map(|&axes| {
            let (a, b) = axes.axes();
            let mut p = FeaturePlane::filled(axes, [res[a], res[b]], d, 1.0);
            for i in 0..p.res[0] {
                for j in 0..p.res[1] {
                    let cell = p.cell_mut(i, j);
                    match axes {
                        PlaneAxes::XY => {
                            let m = motion_mask(i as f64 / (res[0] - 1) as f64);
                            cell[0] = m;
                            cell[1] = m;
                            cell[2..].iter_mut().for_each(|v| *v = 0.0);
                        }
                        PlaneAxes::XT => {
                            let t = j as f64 / (res[3] - 1) as f64;
                            cell[0] = (2.0 * PI * t).sin();
                            cell[1] = (2.0 * PI * t).cos();
                        }
                        _ => {}
                    }
                }
            }
            p
        })
        .collect();

    // Hidden units: relu(±f₀), relu(±f₁); second layer passes them through.
    let h = spec.hidden_width;
    let mut l1 = Dense::zeros(h, d);
    l1.weights[0] = 1.0;
    l1.weights[d] = -1.0;
    l1.weights[2 * d + 1] = 1.0;
    l1.weights[3 * d + 1] = -1.0;
    let mut l2 = Dense::zeros(h, h);
    for k in 0..4 {
        l2.weights[k * h + k] = 1.0;
    }
    let a = spec.amplitude;
    let mut out = Dense::zeros(MLP_OUTPUTS, h);
    let mut set = |row: usize, col: usize, v: f64| out.weights[row * h + col] = v;
    set(1, 0, a);
    set(1, 1, -a);
    set(2, 0, 0.5 * a);
    set(2, 1, -0.5 * a);
    for row in [7, 8] {
        set(row, 2, 0.2 * a);
        set(row, 3, -0.2 * a);
    }
    DeformationField {
        planes,
        bounds,
        mlp: TinyMlp {
            layers: vec![l1, l2, out],
        },
    }
}

/// Teacher scene and its own renders at `t_k = k / (T − 1)` as ground truth.
pub fn synth_scene(spec: &SynthSpec) -> Result<(Scene, SceneDataset)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let scene = Scene {
        cloud: synth_cloud(spec, &mut rng),
        field: synth_field(spec),
    };
    let cam = synth_camera(spec.width, spec.height);
    let times: Vec<f64> = (0..spec.frames)
        .map(|k| if spec.frames == 1 { 0.0 } else { k as f64 / (spec.frames - 1) as f64 })
        .collect();
    let frames = times
        .par_iter()
        .map(|&t| {
            let (out, _) = render_dynamic(&scene, &cam, t)?;
            Ok(Frame {
                image: out.image,
                time: t,
                camera: cam.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((scene, SceneDataset::new(frames)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deformation::sample_field;

    fn small() -> SynthSpec {
        SynthSpec {
            gaussian_count: 120,
            field_resolution: [16, 16, 16, 25],
            frames: 5,
            width: 32,
            height: 32,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn field_features_follow_the_mask() {
        let field = synth_field(&small());
        for (x, t) in [(-0.5, 0.1), (0.0, 0.3), (0.5, 0.125), (0.59, 0.7)] {
            let f = sample_field(&field, &Vector3::new(x, 0.2, 0.0), t).unwrap();
            let u = (x + SYNTH_HALF_EXTENT) / (2.0 * SYNTH_HALF_EXTENT);
            if u < 0.6 {
                assert!(f.iter().all(|&v| v == 0.0));
            } else if u > 0.8 {
                assert!(f[0] != 0.0 || f[1] != 0.0);
            }
            assert!(f[2..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn composition_counts() {
        let (scene, ds) = synth_scene(&small()).unwrap();
        assert_eq!(scene.cloud.len(), 120);
        assert_eq!(ds.frames.len(), 5);
        assert_eq!(ds.frames[4].time, 1.0);
        scene.cloud.validate().unwrap();
        scene.field.validate().unwrap();
    }
}
