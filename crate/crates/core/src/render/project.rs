use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use crate::scene::{normalize_quat, rotation_matrix, Camera, Gaussian};
use crate::sh;

/// Points at or nearer than this camera depth are culled.
pub const NEAR_PLANE: f64 = 0.01;
/// Screen-space low-pass added to every projected covariance (pixels²).
pub const LOW_PASS: f64 = 0.3;
/// Smallest compositing weight a Gaussian must reach to touch a pixel.
pub const MIN_ALPHA: f64 = 1.0 / 255.0;
pub const MAX_ALPHA: f64 = 0.99;
/// Compositing stops once transmittance falls below this.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;

/// A Gaussian projected to the image plane.
#[derive(Debug, Clone)]
pub struct ProjectedGaussian {
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    /// Inverse of `cov2d` as `(a, b, c)` for `[[a, b], [b, c]]`.
    pub conic: [f64; 3],
    pub depth: f64,
    pub color: [f64; 3],
    pub opacity: f64,
    pub source_index: usize,
    /// Inclusive pixel box outside of which the Gaussian's alpha is below
    /// [`MIN_ALPHA`]: `[x_min, y_min, x_max, y_max]`.
    pub bbox: [usize; 4],
}

/// Intermediates of the projection kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct ProjectionCache {
    pub p_cam: Vector3<f64>,
    pub jac_w: Matrix2x3<f64>,
    pub sigma3: Matrix3<f64>,
    pub rot: Matrix3<f64>,
    pub quat: [f64; 4],
    pub view: Vector3<f64>,
    pub raw_color: [f64; 3],
}

fn jacobian(cam: &Camera, p: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / p.z;
    Matrix2x3::new(
        cam.fx * iz,
        0.0,
        -cam.fx * p.x * iz * iz,
        0.0,
        cam.fy * iz,
        -cam.fy * p.y * iz * iz,
    )
}

/// Largest pixel distance from the center at which `opacity · exp(-½ m²)` can
/// still reach [`MIN_ALPHA`], padded by one pixel.
fn alpha_extent(opacity: f64, cov2d: &Matrix2<f64>) -> Option<f64> {
    let scaled = opacity * 255.0;
    if scaled < 1.0 {
        return None;
    }
    let (a, b, c) = (cov2d[(0, 0)], cov2d[(0, 1)], cov2d[(1, 1)]);
    let mid = 0.5 * (a + c);
    let lambda_max = mid + (0.25 * (a - c) * (a - c) + b * b).sqrt();
    Some((2.0 * scaled.ln() * lambda_max).sqrt() + 1.0)
}

pub(crate) fn project_cached(
    g: &Gaussian,
    index: usize,
    sh_degree: u8,
    cam: &Camera,
) -> Option<(ProjectedGaussian, ProjectionCache)> {
    let w = cam.rotation();
    let p = w * g.center + cam.translation();
    if p.z <= NEAR_PLANE || !p.iter().all(|v| v.is_finite()) {
        return None;
    }
    let mean2d = Vector2::new(cam.fx * p.x / p.z + cam.cx, cam.fy * p.y / p.z + cam.cy);

    let quat = normalize_quat(&g.rotation).ok()?;
    let rot = rotation_matrix(&quat);
    let m = rot * Matrix3::from_diagonal(&g.scale);
    let sigma3 = m * m.transpose();
    let jac_w = jacobian(cam, &p) * w;
    let cov = jac_w * sigma3 * jac_w.transpose();
    let cov2d = Matrix2::new(cov[(0, 0)] + LOW_PASS, cov[(0, 1)], cov[(0, 1)], cov[(1, 1)] + LOW_PASS);
    let det = cov2d[(0, 0)] * cov2d[(1, 1)] - cov2d[(0, 1)] * cov2d[(0, 1)];
    if !(det > 0.0) {
        return None;
    }
    let conic = [cov2d[(1, 1)] / det, -cov2d[(0, 1)] / det, cov2d[(0, 0)] / det];

    let r = alpha_extent(g.opacity, &cov2d)?;
    let (wf, hf) = (cam.width as f64, cam.height as f64);
    // Pixel (ix, iy) has its center at (ix + 0.5, iy + 0.5).
    let x0 = (mean2d.x - r - 0.5).floor();
    let x1 = (mean2d.x + r - 0.5).ceil();
    let y0 = (mean2d.y - r - 0.5).floor();
    let y1 = (mean2d.y + r - 0.5).ceil();
    if x1 < 0.0 || y1 < 0.0 || x0 > wf - 1.0 || y0 > hf - 1.0 {
        return None;
    }
    let bbox = [
        x0.max(0.0) as usize,
        y0.max(0.0) as usize,
        x1.min(wf - 1.0) as usize,
        y1.min(hf - 1.0) as usize,
    ];

    let view = g.center - cam.position();
    let raw_color = sh::raw_color(&g.sh, sh_degree, &view.normalize());
    let color = raw_color.map(|v| v.clamp(0.0, 1.0));

    Some((
        ProjectedGaussian {
            mean2d,
            cov2d,
            conic,
            depth: p.z,
            color,
            opacity: g.opacity,
            source_index: index,
            bbox,
        },
        ProjectionCache {
            p_cam: p,
            jac_w,
            sigma3,
            rot,
            quat,
            view,
            raw_color,
        },
    ))
}

/// Perspective projection with the first-order (EWA) covariance transform.
/// Returns `None` when the Gaussian is behind the near plane or cannot reach
/// any pixel with alpha ≥ 1/255.
pub fn project_gaussian(
    g: &Gaussian,
    index: usize,
    sh_degree: u8,
    cam: &Camera,
) -> Option<ProjectedGaussian> {
    project_cached(g, index, sh_degree, cam).map(|(p, _)| p)
}
