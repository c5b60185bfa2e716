//! Scene data model: Gaussian primitives, cameras, frames and the closed-form
//! geometry (covariance, density, volume) shared by every other module.

use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::deformation::DeformationField;
use crate::error::{LgsError, Result};
use crate::image::Image;

/// Highest SH degree a cloud may store. Degree 3 gives 16 basis functions per
/// channel, 48 coefficients per Gaussian.
pub const MAX_SH_DEGREE: u8 = 3;

pub const fn sh_basis_count(degree: u8) -> usize {
    (degree as usize + 1) * (degree as usize + 1)
}

pub const fn sh_coeff_count(degree: u8) -> usize {
    3 * sh_basis_count(degree)
}

/// Unit quaternion in `(w, x, y, z)` order.
pub type Quat = [f64; 4];

pub const IDENTITY_QUAT: Quat = [1.0, 0.0, 0.0, 0.0];

#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub center: Vector3<f64>,
    pub rotation: Quat,
    /// Linear (not log) axis lengths.
    pub scale: Vector3<f64>,
    pub opacity: f64,
    /// Basis-major, channel-minor: `sh[3 * b + c]`.
    pub sh: Vec<f64>,
}

impl Gaussian {
    /// A Gaussian with identity rotation and a flat color stored in the DC term.
    pub fn isotropic(center: Vector3<f64>, radius: f64, opacity: f64, degree: u8) -> Self {
        Self {
            center,
            rotation: IDENTITY_QUAT,
            scale: Vector3::repeat(radius),
            opacity,
            sh: vec![0.0; sh_coeff_count(degree)],
        }
    }

    pub fn covariance(&self) -> Result<Matrix3<f64>> {
        covariance_from(&self.rotation, &self.scale)
    }
}

/// Ordered Gaussians sharing one stored SH degree. Indices are identities
/// used by score tables and the pruning index map.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCloud {
    pub sh_degree: u8,
    pub gaussians: Vec<Gaussian>,
}

impl GaussianCloud {
    pub fn new(sh_degree: u8) -> Self {
        Self {
            sh_degree,
            gaussians: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sh_degree > MAX_SH_DEGREE {
            return Err(LgsError::invalid_argument(format!(
                "sh degree {} exceeds maximum {MAX_SH_DEGREE}",
                self.sh_degree
            )));
        }
        let want = sh_coeff_count(self.sh_degree);
        for (i, g) in self.gaussians.iter().enumerate() {
            if g.sh.len() != want {
                return Err(LgsError::invalid_argument(format!(
                    "gaussian {i} has {} sh coefficients, expected {want}",
                    g.sh.len()
                )));
            }
            if !(g.scale.iter().all(|&s| s > 0.0)) {
                return Err(LgsError::invalid_argument(format!(
                    "gaussian {i} has non-positive scale"
                )));
            }
            if !(0.0..=1.0).contains(&g.opacity) {
                return Err(LgsError::invalid_argument(format!(
                    "gaussian {i} opacity {} outside [0, 1]",
                    g.opacity
                )));
            }
        }
        Ok(())
    }
}

/// A renderable dynamic scene: explicit Gaussians plus the deformation module.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub cloud: GaussianCloud,
    pub field: DeformationField,
}

impl Scene {
    /// Rounds every parameter to binary32, the precision of the scene file.
    pub fn quantized_f32(&self) -> Scene {
        let q = |v: f64| v as f32 as f64;
        let mut out = self.clone();
        for g in &mut out.cloud.gaussians {
            g.center = g.center.map(q);
            g.rotation = g.rotation.map(q);
            g.scale = g.scale.map(q);
            g.opacity = q(g.opacity);
            g.sh.iter_mut().for_each(|v| *v = q(*v));
        }
        for plane in &mut out.field.planes {
            plane.values.iter_mut().for_each(|v| *v = q(*v));
        }
        for layer in &mut out.field.mlp.layers {
            layer.weights.iter_mut().for_each(|v| *v = q(*v));
            layer.bias.iter_mut().for_each(|v| *v = q(*v));
        }
        let b = &mut out.field.bounds;
        b.min = b.min.map(q);
        b.max = b.max.map(q);
        b.time = b.time.map(q);
        out
    }
}

/// Pinhole camera. `world_to_camera` maps world points into an OpenCV-style
/// camera frame (x right, y down, z forward).
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub world_to_camera: Matrix4<f64>,
}

impl Camera {
    pub fn rotation(&self) -> Matrix3<f64> {
        self.world_to_camera.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.world_to_camera.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Camera center in world coordinates.
    pub fn position(&self) -> Vector3<f64> {
        -(self.rotation().transpose() * self.translation())
    }

    /// Camera at `eye` looking at `target`, with `up` roughly opposite to the
    /// image y axis.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        focal: f64,
        width: usize,
        height: usize,
    ) -> Self {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rot = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let t = -(rot * eye);
        let mut w2c = Matrix4::identity();
        w2c.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot);
        w2c.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        Self {
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            world_to_camera: w2c,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(LgsError::invalid_argument("focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(LgsError::invalid_argument("image size must be non-zero"));
        }
        let r = self.rotation();
        let err = (r * r.transpose() - Matrix3::identity()).abs().max();
        if err > 1e-6 {
            return Err(LgsError::invalid_argument(format!(
                "camera rotation not orthonormal (error {err:e})"
            )));
        }
        let last = self.world_to_camera.row(3);
        if last[0] != 0.0 || last[1] != 0.0 || last[2] != 0.0 || last[3] != 1.0 {
            return Err(LgsError::invalid_argument("world_to_camera last row must be 0 0 0 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub image: Image,
    pub time: f64,
    pub camera: Camera,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneDataset {
    pub frames: Vec<Frame>,
}

impl SceneDataset {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        let ds = Self { frames };
        ds.validate()?;
        Ok(ds)
    }

    pub fn timestamps(&self) -> usize {
        self.frames.len()
    }

    pub fn validate(&self) -> Result<()> {
        let mut prev = f64::NEG_INFINITY;
        for (i, f) in self.frames.iter().enumerate() {
            if !(0.0..=1.0).contains(&f.time) {
                return Err(LgsError::invalid_argument(format!(
                    "frame {i} time {} outside [0, 1]",
                    f.time
                )));
            }
            if f.time < prev {
                return Err(LgsError::invalid_argument("frame timestamps must be nondecreasing"));
            }
            prev = f.time;
            if f.image.width != f.camera.width || f.image.height != f.camera.height {
                return Err(LgsError::invalid_argument(format!(
                    "frame {i} image size does not match its camera"
                )));
            }
        }
        Ok(())
    }

    /// Frames whose index is a multiple of 8 are held out for evaluation.
    pub fn is_test_index(i: usize) -> bool {
        i % 8 == 0
    }

    pub fn train_indices(&self) -> Vec<usize> {
        (0..self.frames.len()).filter(|&i| !Self::is_test_index(i)).collect()
    }

    pub fn test_indices(&self) -> Vec<usize> {
        (0..self.frames.len()).filter(|&i| Self::is_test_index(i)).collect()
    }
}

pub fn normalize_quat(q: &Quat) -> Result<Quat> {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(n > 0.0 && n.is_finite()) {
        return Err(LgsError::invalid_argument("quaternion has zero or non-finite norm"));
    }
    Ok(q.map(|v| v / n))
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn rotation_matrix(q: &Quat) -> Matrix3<f64> {
    let [w, x, y, z] = *q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Hamilton product `a * b`.
pub fn quat_mul(a: &Quat, b: &Quat) -> Quat {
    let [aw, ax, ay, az] = *a;
    let [bw, bx, by, bz] = *b;
    [
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ]
}

fn check_scale(s: &Vector3<f64>) -> Result<()> {
    if s.iter().all(|&v| v > 0.0) {
        Ok(())
    } else {
        Err(LgsError::invalid_argument(format!(
            "scale components must be positive, got ({}, {}, {})",
            s.x, s.y, s.z
        )))
    }
}

/// `Σ = R(q) diag(s)² R(q)ᵀ`; the quaternion is normalized first.
pub fn covariance_from(q: &Quat, s: &Vector3<f64>) -> Result<Matrix3<f64>> {
    check_scale(s)?;
    let m = rotation_matrix(&normalize_quat(q)?) * Matrix3::from_diagonal(s);
    let sigma = m * m.transpose();
    // Symmetrize so the result is exactly symmetric.
    Ok((sigma + sigma.transpose()) * 0.5)
}

/// Unnormalized density `exp(-½ (x-μ)ᵀ Σ⁻¹ (x-μ))`.
pub fn eval_gaussian(g: &Gaussian, x: &Vector3<f64>) -> Result<f64> {
    // Σ⁻¹ = R diag(1/s²) Rᵀ, so the Mahalanobis form is |diag(1/s) Rᵀ (x-μ)|².
    check_scale(&g.scale)?;
    let r = rotation_matrix(&normalize_quat(&g.rotation)?);
    let local = r.transpose() * (x - g.center);
    let m2 = local.component_div(&g.scale).norm_squared();
    Ok((-0.5 * m2).exp())
}

/// Ellipsoid volume `4π s₁s₂s₃ / 3`.
pub fn gaussian_volume(s: &Vector3<f64>) -> Result<f64> {
    check_scale(s)?;
    Ok(volume_unchecked(s))
}

pub(crate) fn volume_unchecked(s: &Vector3<f64>) -> f64 {
    4.0 * std::f64::consts::PI * s.x * s.y * s.z / 3.0
}
