//! Straight-line reference implementations used as test oracles. They share
//! no code with the library beyond data types and the SH basis.

use lgs_core::deformation::{DeformationField, FeaturePlane};
use lgs_core::image::Image;
use lgs_core::scene::{Camera, Gaussian, GaussianCloud, Scene, SceneDataset};
use lgs_core::sh::sh_eval;
use nalgebra::{Matrix2, Matrix3, Vector3};

pub struct Splat {
    pub index: usize,
    pub depth: f64,
    pub mx: f64,
    pub my: f64,
    /// Inverse 2D covariance entries `(a, b, c)` of `[[a, b], [b, c]]`.
    pub inv: (f64, f64, f64),
    pub color: [f64; 3],
    pub opacity: f64,
}

fn quat_matrix(q: &[f64; 4]) -> Matrix3<f64> {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
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

/// Pinhole projection with the affine covariance approximation and a 0.3 px²
/// low-pass. Only the near plane culls.
pub fn splat(g: &Gaussian, index: usize, degree: u8, cam: &Camera) -> Option<Splat> {
    let w = cam.world_to_camera.fixed_view::<3, 3>(0, 0).into_owned();
    let t = cam.world_to_camera.fixed_view::<3, 1>(0, 3).into_owned();
    let p = w * g.center + t;
    if p.z <= 0.01 {
        return None;
    }
    let r = quat_matrix(&g.rotation);
    let s = Matrix3::from_diagonal(&g.scale);
    let cov3 = r * s * s * r.transpose();
    let j = nalgebra::Matrix2x3::new(
        cam.fx / p.z,
        0.0,
        -cam.fx * p.x / (p.z * p.z),
        0.0,
        cam.fy / p.z,
        -cam.fy * p.y / (p.z * p.z),
    );
    let cov2 = j * w * cov3 * w.transpose() * j.transpose() + Matrix2::identity() * 0.3;
    let det = cov2[(0, 0)] * cov2[(1, 1)] - cov2[(0, 1)] * cov2[(1, 0)];
    let cam_pos = -(w.transpose() * t);
    let dir: Vector3<f64> = (g.center - cam_pos).normalize();
    let color = sh_eval(&g.sh, degree, &dir).ok()?;
    Some(Splat {
        index,
        depth: p.z,
        mx: cam.fx * p.x / p.z + cam.cx,
        my: cam.fy * p.y / p.z + cam.cy,
        inv: (cov2[(1, 1)] / det, -cov2[(0, 1)] / det, cov2[(0, 0)] / det),
        color,
        opacity: g.opacity,
    })
}

pub struct BruteRender {
    pub image: Image,
    pub hit_counts: Vec<u32>,
    pub final_transmittance: Vec<f64>,
}

/// Every pixel against every Gaussian, front to back.
pub fn brute_force_render(cloud: &GaussianCloud, cam: &Camera) -> BruteRender {
    let mut splats: Vec<Splat> = cloud
        .gaussians
        .iter()
        .enumerate()
        .filter_map(|(i, g)| splat(g, i, cloud.sh_degree, cam))
        .collect();
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
    let mut image = Image::new(cam.width, cam.height);
    let mut hit_counts = vec![0u32; cloud.len()];
    let mut final_transmittance = vec![1.0; cam.width * cam.height];
    for y in 0..cam.height {
        for x in 0..cam.width {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut trans = 1.0;
            let mut rgb = [0.0; 3];
            for s in &splats {
                if trans < 1e-4 {
                    break;
                }
                let (dx, dy) = (px - s.mx, py - s.my);
                let (a, b, c) = s.inv;
                let alpha = (s.opacity * (-0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy).exp()).min(0.99);
                if alpha < 1.0 / 255.0 {
                    continue;
                }
                for ch in 0..3 {
                    rgb[ch] += s.color[ch] * alpha * trans;
                }
                hit_counts[s.index] += 1;
                trans *= 1.0 - alpha;
            }
            let k = y * cam.width + x;
            image.data[3 * k..3 * k + 3].copy_from_slice(&rgb);
            final_transmittance[k] = trans;
        }
    }
    BruteRender {
        image,
        hit_counts,
        final_transmittance,
    }
}

/// Brute-force block averages of one plane.
pub fn pool_plane(plane: &FeaturePlane, ra: usize, rb: usize) -> Vec<f64> {
    let (na, nb, d) = (plane.res[0] / ra, plane.res[1] / rb, plane.feature_dim);
    let mut out = Vec::with_capacity(na * nb * d);
    for i in 0..na {
        for j in 0..nb {
            for c in 0..d {
                let mut sum = 0.0;
                for u in 0..ra {
                    for v in 0..rb {
                        sum += plane.values[((i * ra + u) * plane.res[1] + (j * rb + v)) * d + c];
                    }
                }
                out.push(sum / (ra * rb) as f64);
            }
        }
    }
    out
}

fn lerp_coord(v: f64, lo: f64, hi: f64, res: usize) -> (usize, f64) {
    let u = ((v - lo) / (hi - lo) * (res - 1) as f64).clamp(0.0, (res - 1) as f64);
    let i = (u.floor() as usize).min(res - 2);
    (i, u - i as f64)
}

/// `(Δμ, Δs)` from the product of bilinear plane lookups fed through the MLP.
pub fn deformation_at(field: &DeformationField, mu: &Vector3<f64>, t: f64) -> ([f64; 3], [f64; 4], [f64; 3]) {
    let lo = [field.bounds.min.x, field.bounds.min.y, field.bounds.min.z, field.bounds.time[0]];
    let hi = [field.bounds.max.x, field.bounds.max.y, field.bounds.max.z, field.bounds.time[1]];
    let pos = [mu.x, mu.y, mu.z, t];
    let d = field.planes[0].feature_dim;
    let mut f = vec![1.0; d];
    for p in &field.planes {
        let (a, b) = p.axes.axes();
        let (i, wi) = lerp_coord(pos[a], lo[a], hi[a], p.res[0]);
        let (j, wj) = lerp_coord(pos[b], lo[b], hi[b], p.res[1]);
        let at = |ii: usize, jj: usize, c: usize| p.values[(ii * p.res[1] + jj) * d + c];
        for c in 0..d {
            let v = (1.0 - wi) * (1.0 - wj) * at(i, j, c)
                + (1.0 - wi) * wj * at(i, j + 1, c)
                + wi * (1.0 - wj) * at(i + 1, j, c)
                + wi * wj * at(i + 1, j + 1, c);
            f[c] *= v;
        }
    }
    let n = field.mlp.layers.len();
    for (k, l) in field.mlp.layers.iter().enumerate() {
        let mut y = l.bias.clone();
        for r in 0..l.rows {
            for c in 0..l.cols {
                y[r] += l.weights[r * l.cols + c] * f[c];
            }
            if k + 1 < n {
                y[r] = y[r].max(0.0);
            }
        }
        f = y;
    }
    ([f[0], f[1], f[2]], [f[3], f[4], f[5], f[6]], [f[7], f[8], f[9]])
}

pub fn deformed_cloud(scene: &Scene, t: f64) -> GaussianCloud {
    let gaussians = scene
        .cloud
        .gaussians
        .iter()
        .map(|g| {
            let (dm, dq, ds) = deformation_at(&scene.field, &g.center, t);
            let mut out = g.clone();
            out.center += Vector3::from(dm);
            if dq != [0.0; 4] {
                let q: Vec<f64> = (0..4).map(|k| g.rotation[k] + dq[k]).collect();
                let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
                out.rotation = [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
            }
            out.scale = (g.scale + Vector3::from(ds)).map(|v| v.max(1e-6));
            out
        })
        .collect();
    GaussianCloud {
        sh_degree: scene.cloud.sh_degree,
        gaussians,
    }
}

fn volume(s: &Vector3<f64>) -> f64 {
    4.0 / 3.0 * std::f64::consts::PI * s.x * s.y * s.z
}

pub struct ScoreOracle {
    pub hits: Vec<u64>,
    pub d: Vec<f64>,
    pub is: Vec<f64>,
    pub dg: Vec<bool>,
}

/// Hit counts from the brute-force renderer, `d = H·ΔV`, classes at `h`, and
/// class-wise importance with a nearest-rank 90th-percentile volume.
pub fn scores(scene: &Scene, dataset: &SceneDataset, h: f64, beta: f64) -> ScoreOracle {
    let n = scene.cloud.len();
    let mut hits = vec![0u64; n];
    let mut dv = vec![0.0; n];
    for frame in &dataset.frames {
        let deformed = deformed_cloud(scene, frame.time);
        let r = brute_force_render(&deformed, &frame.camera);
        for i in 0..n {
            hits[i] += r.hit_counts[i] as u64;
            dv[i] += (volume(&scene.cloud.gaussians[i].scale) - volume(&deformed.gaussians[i].scale)).abs();
        }
    }
    let d: Vec<f64> = (0..n).map(|i| hits[i] as f64 * dv[i]).collect();
    let max = d.iter().cloned().fold(0.0, f64::max);
    let dg: Vec<bool> = d.iter().map(|&v| max > 0.0 && v / max > h).collect();
    let mut vols: Vec<f64> = scene.cloud.gaussians.iter().map(|g| volume(&g.scale)).collect();
    let own = vols.clone();
    vols.sort_by(f64::total_cmp);
    let rank = ((0.9 * n as f64).ceil() as usize).max(1);
    let v90 = vols[rank - 1];
    let is = (0..n)
        .map(|i| {
            let base = if dg[i] { dv[i] } else { scene.cloud.gaussians[i].opacity };
            hits[i] as f64 * base * (own[i] / v90).powf(beta)
        })
        .collect();
    ScoreOracle { hits, d, is, dg }
}
