//! Reverse-mode gradients of a dynamic render with respect to every scene
//! parameter: compositing, EWA projection, SH color, quaternion/scale
//! covariance, deformation application, MLP and feature planes.
//!
//! The skip gates (`α < 1/255`, `T < 1e-4`), the `0.99` alpha cap, color
//! clamping and the scale floor are treated as fixed: gradients flow only
//! through the terms the forward pass actually used.

use nalgebra::{Matrix2, Matrix3, Vector3};
use rayon::prelude::*;

use crate::deformation::{
    apply_deformation, mlp_traced, sample_traced, Deformation, FieldSample, MlpTrace, SCALE_FLOOR,
};
use crate::error::{LgsError, Result};
use crate::image::Image;
use crate::optimizer::params::{fingerprint, GradientSet, ParamGroup};
use crate::render::{
    gaussian_alpha, in_bbox, rasterize, RasterState, RenderOptions, RenderOutput, MAX_ALPHA, MIN_ALPHA,
    MIN_TRANSMITTANCE,
};
use crate::scene::{sh_basis_count, Camera, Gaussian, GaussianCloud, Scene};
use crate::sh;

/// Intermediates of one dynamic render, tied to the exact scene parameters
/// that produced it.
#[derive(Debug, Clone)]
pub struct ForwardRecord {
    fingerprint: u64,
    camera: Camera,
    samples: Vec<FieldSample>,
    traces: Vec<MlpTrace>,
    deformations: Vec<Deformation>,
    raster: RasterState,
    pub output: RenderOutput,
}

/// Deforms and renders the scene at time `t`, keeping what [`backward`] needs.
/// The image equals `render_dynamic(scene, cam, t)` bit for bit.
pub fn forward(scene: &Scene, cam: &Camera, t: f64) -> Result<ForwardRecord> {
    if !(0.0..=1.0).contains(&t) {
        return Err(LgsError::invalid_argument(format!("time {t} outside [0, 1]")));
    }
    let field = &scene.field;
    field.bounds.validate()?;
    if field.mlp.input_dim() != field.feature_dim() {
        return Err(LgsError::invalid_argument("mlp input dim does not match feature_dim"));
    }
    type Traced = (Gaussian, Deformation, FieldSample, MlpTrace);
    let traced: Vec<Result<Traced>> = scene
        .cloud
        .gaussians
        .par_iter()
        .map(|g| {
            let sample = sample_traced(field, &g.center, t);
            let trace = mlp_traced(&field.mlp, &sample.feature);
            let d = Deformation::from_outputs(&trace.outputs);
            Ok((apply_deformation(g, &d)?, d, sample, trace))
        })
        .collect();
    let n = scene.cloud.len();
    let mut gaussians = Vec::with_capacity(n);
    let mut deformations = Vec::with_capacity(n);
    let mut samples = Vec::with_capacity(n);
    let mut traces = Vec::with_capacity(n);
    for r in traced {
        let (g, d, s, tr) = r?;
        gaussians.push(g);
        deformations.push(d);
        samples.push(s);
        traces.push(tr);
    }
    let deformed = GaussianCloud {
        sh_degree: scene.cloud.sh_degree,
        gaussians,
    };
    let (output, raster) = rasterize(&deformed, cam, &RenderOptions::default())?;
    Ok(ForwardRecord {
        fingerprint: fingerprint(scene),
        camera: cam.clone(),
        samples,
        traces,
        deformations,
        raster,
        output,
    })
}

/// Screen-space gradient of one projected Gaussian.
#[derive(Debug, Clone, Copy, Default)]
struct ScreenGrad {
    mean: [f64; 2],
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
}

impl ScreenGrad {
    fn add(&mut self, o: &ScreenGrad) {
        for k in 0..2 {
            self.mean[k] += o.mean[k];
        }
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.opacity += o.opacity;
    }
}

struct Contribution {
    slot: usize,
    alpha: f64,
    g: f64,
    capped: bool,
    dx: f64,
    dy: f64,
    t: f64,
}

/// Replays one tile front to back, then accumulates gradients back to front.
fn tile_backward(raster: &RasterState, tile: usize, upstream: &Image) -> Vec<ScreenGrad> {
    let list = &raster.tile_lists[tile];
    let mut grads = vec![ScreenGrad::default(); list.len()];
    if list.is_empty() {
        return grads;
    }
    let ts = raster.tile_size;
    let tiles_x = raster.tiles_x();
    let (tx, ty) = (tile % tiles_x, tile / tiles_x);
    let mut contribs: Vec<Contribution> = Vec::new();
    for y in ty * ts..((ty + 1) * ts).min(raster.height) {
        for x in tx * ts..((tx + 1) * ts).min(raster.width) {
            let k = y * raster.width + x;
            let up = [upstream.data[3 * k], upstream.data[3 * k + 1], upstream.data[3 * k + 2]];
            if up == [0.0; 3] {
                continue;
            }
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            contribs.clear();
            let mut t = 1.0;
            for (slot, &pos) in list.iter().enumerate().take(raster.visited[k] as usize) {
                if t < MIN_TRANSMITTANCE {
                    break;
                }
                let p = &raster.projected[pos as usize];
                if !in_bbox(p, x, y) {
                    continue;
                }
                let (alpha, g, dx, dy) = gaussian_alpha(p, px, py);
                if alpha < MIN_ALPHA {
                    continue;
                }
                contribs.push(Contribution {
                    slot,
                    alpha,
                    g,
                    capped: !(p.opacity * g < MAX_ALPHA),
                    dx,
                    dy,
                    t,
                });
                t *= 1.0 - alpha;
            }
            // Color accumulated behind the current entry: Σ_{j>i} c_j α_j T_j.
            let mut behind = [0.0; 3];
            for c in contribs.iter().rev() {
                let p = &raster.projected[list[c.slot] as usize];
                let w = c.alpha * c.t;
                let gr = &mut grads[c.slot];
                let mut d_alpha = 0.0;
                for ch in 0..3 {
                    gr.color[ch] += up[ch] * w;
                    d_alpha += up[ch] * (p.color[ch] * c.t - behind[ch] / (1.0 - c.alpha));
                    behind[ch] += p.color[ch] * w;
                }
                if c.capped {
                    continue;
                }
                // α = σ G, G = exp(power).
                gr.opacity += d_alpha * c.g;
                let d_power = d_alpha * c.alpha;
                let [a, b, cc] = p.conic;
                gr.conic[0] += -0.5 * d_power * c.dx * c.dx;
                gr.conic[1] += -d_power * c.dx * c.dy;
                gr.conic[2] += -0.5 * d_power * c.dy * c.dy;
                // δ = pixel − mean.
                gr.mean[0] += d_power * (a * c.dx + b * c.dy);
                gr.mean[1] += d_power * (cc * c.dy + b * c.dx);
            }
        }
    }
    grads
}

/// Gradient with respect to one deformed Gaussian.
#[derive(Debug, Clone)]
struct DeformedGrad {
    center: Vector3<f64>,
    /// With respect to the normalized quaternion used for the covariance.
    quat: [f64; 4],
    scale: Vector3<f64>,
    opacity: f64,
    sh: Vec<f64>,
}

/// `∂R/∂q_k` for the unit-quaternion rotation matrix.
fn rotation_partials(q: &[f64; 4]) -> [Matrix3<f64>; 4] {
    let [w, x, y, z] = *q;
    let t = 2.0;
    [
        Matrix3::new(0.0, -t * z, t * y, t * z, 0.0, -t * x, -t * y, t * x, 0.0),
        Matrix3::new(0.0, t * y, t * z, t * y, -2.0 * t * x, -t * w, t * z, t * w, -2.0 * t * x),
        Matrix3::new(-2.0 * t * y, t * x, t * w, t * x, 0.0, t * z, -t * w, t * z, -2.0 * t * y),
        Matrix3::new(-2.0 * t * z, -t * w, t * x, t * w, -2.0 * t * z, t * y, t * x, t * y, 0.0),
    ]
}

fn project_backward(raster: &RasterState, pos: usize, sg: &ScreenGrad, cam: &Camera, deformed: &Gaussian, sh_degree: u8) -> DeformedGrad {
    let p = &raster.projected[pos];
    let cache = &raster.caches[pos];

    // conic (A, B, C) = (s, −r, p) / det of cov2d [[p, r], [r, s]].
    let (cp, cr, cs) = (p.cov2d[(0, 0)], p.cov2d[(0, 1)], p.cov2d[(1, 1)]);
    let det = cp * cs - cr * cr;
    let det2 = det * det;
    let [ga, gb, gc] = sg.conic;
    let g_p = (-ga * cs * cs + gb * cr * cs - gc * cr * cr) / det2;
    let g_s = (-ga * cr * cr + gb * cr * cp - gc * cp * cp) / det2;
    let g_r = (2.0 * ga * cr * cs - gb * (cp * cs + cr * cr) + 2.0 * gc * cr * cp) / det2;
    let g2 = Matrix2::new(g_p, 0.5 * g_r, 0.5 * g_r, g_s);

    let a = cache.jac_w;
    let sigma = cache.sigma3;
    let g_sigma = a.transpose() * g2 * a;
    let g_a = 2.0 * g2 * a * sigma;
    let w = cam.rotation();
    let g_j = g_a * w.transpose();

    let pc = cache.p_cam;
    let (fx, fy) = (cam.fx, cam.fy);
    let iz = 1.0 / pc.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let mut g_pc = Vector3::zeros();
    g_pc.x += g_j[(0, 2)] * (-fx * iz2);
    g_pc.y += g_j[(1, 2)] * (-fy * iz2);
    g_pc.z += g_j[(0, 0)] * (-fx * iz2)
        + g_j[(1, 1)] * (-fy * iz2)
        + g_j[(0, 2)] * (2.0 * fx * pc.x * iz3)
        + g_j[(1, 2)] * (2.0 * fy * pc.y * iz3);
    g_pc.x += sg.mean[0] * fx * iz;
    g_pc.y += sg.mean[1] * fy * iz;
    g_pc.z += -sg.mean[0] * fx * pc.x * iz2 - sg.mean[1] * fy * pc.y * iz2;
    let mut g_center = w.transpose() * g_pc;

    // Color: clamped channels pass no gradient.
    let g_col: [f64; 3] = std::array::from_fn(|c| {
        if (0.0..=1.0).contains(&cache.raw_color[c]) {
            sg.color[c]
        } else {
            0.0
        }
    });
    let nb = sh_basis_count(sh_degree);
    let mut g_sh = vec![0.0; deformed.sh.len()];
    if g_col != [0.0; 3] {
        let vnorm = cache.view.norm();
        let dir = cache.view / vnorm;
        let mut y = [0.0; 16];
        let mut dy = [[0.0; 3]; 16];
        sh::basis(sh_degree, &dir, &mut y);
        sh::basis_gradient(sh_degree, &dir, &mut dy);
        let mut g_dir = Vector3::zeros();
        for b in 0..nb {
            let mut coeff = 0.0;
            for c in 0..3 {
                g_sh[3 * b + c] = g_col[c] * y[b];
                coeff += g_col[c] * deformed.sh[3 * b + c];
            }
            g_dir += coeff * Vector3::from(dy[b]);
        }
        g_center += (g_dir - dir * dir.dot(&g_dir)) / vnorm;
    }

    // Σ = M Mᵀ with M = R diag(s).
    let s = deformed.scale;
    let m = cache.rot * Matrix3::from_diagonal(&s);
    let g_m = 2.0 * g_sigma * m;
    let mut g_scale = Vector3::zeros();
    let mut g_rot = Matrix3::zeros();
    for i in 0..3 {
        for j in 0..3 {
            g_rot[(i, j)] = g_m[(i, j)] * s[j];
            g_scale[j] += g_m[(i, j)] * cache.rot[(i, j)];
        }
    }
    let partials = rotation_partials(&cache.quat);
    let quat = std::array::from_fn(|k| g_rot.component_mul(&partials[k]).sum());

    DeformedGrad {
        center: g_center,
        quat,
        scale: g_scale,
        opacity: sg.opacity,
        sh: g_sh,
    }
}

/// Per-Gaussian gradients that can be computed independently.
struct GaussianGrad {
    center: Vector3<f64>,
    rotation: [f64; 4],
    scale: Vector3<f64>,
    opacity: f64,
    sh: Vec<f64>,
    /// Gradient of the output of every MLP layer (pre-activation), first layer first.
    layer_grads: Vec<Vec<f64>>,
    /// Gradient of each plane's interpolated feature, `6 × d`.
    plane_feature_grads: Vec<f64>,
}

fn gaussian_backward(scene: &Scene, record: &ForwardRecord, i: usize, dg: &DeformedGrad) -> GaussianGrad {
    let g = &scene.cloud.gaussians[i];
    let d = &record.deformations[i];

    // q' = normalize(q + Δq); the projection normalizes again, which is the
    // identity on unit quaternions.
    let u: [f64; 4] = std::array::from_fn(|k| g.rotation[k] + d.d_rotation[k]);
    let un = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    let uh = u.map(|v| v / un);
    let dot: f64 = (0..4).map(|k| uh[k] * dg.quat[k]).sum();
    let g_u: [f64; 4] = std::array::from_fn(|k| (dg.quat[k] - uh[k] * dot) / un);

    let g_s: Vector3<f64> = Vector3::from_fn(|j, _| {
        if g.scale[j] + d.d_scale[j] > SCALE_FLOOR {
            dg.scale[j]
        } else {
            0.0
        }
    });

    let mut out = [0.0; 10];
    out[..3].copy_from_slice(dg.center.as_slice());
    out[3..7].copy_from_slice(&g_u);
    out[7..].copy_from_slice(g_s.as_slice());

    let mut center = dg.center;
    let field = &scene.field;
    let dim = field.feature_dim();
    let mut layer_grads = Vec::new();
    let mut plane_feature_grads = Vec::new();
    if out != [0.0; 10] {
        let trace = &record.traces[i];
        let layers = &field.mlp.layers;
        let mut gy = out.to_vec();
        layer_grads = vec![Vec::new(); layers.len()];
        for k in (0..layers.len()).rev() {
            let l = &layers[k];
            let mut gx = vec![0.0; l.cols];
            for (r, row) in l.weights.chunks_exact(l.cols).enumerate() {
                let gr = gy[r];
                if gr != 0.0 {
                    for (x, w) in gx.iter_mut().zip(row) {
                        *x += gr * w;
                    }
                }
            }
            if k > 0 {
                // inputs[k] is the ReLU output of layer k − 1.
                for (x, &a) in gx.iter_mut().zip(&trace.inputs[k]) {
                    if a <= 0.0 {
                        *x = 0.0;
                    }
                }
            }
            layer_grads[k] = std::mem::replace(&mut gy, gx);
        }
        let g_feature = gy;

        let sample = &record.samples[i];
        plane_feature_grads = vec![0.0; 6 * dim];
        for k in 0..6 {
            for c in 0..dim {
                let others: f64 = (0..6).filter(|&j| j != k).map(|j| sample.plane_features[j * dim + c]).product();
                plane_feature_grads[k * dim + c] = g_feature[c] * others;
            }
        }
        for (k, plane) in field.planes.iter().enumerate() {
            let (ax, bx) = plane.axes.axes();
            let [ca, cb] = sample.coords[k];
            let (wa, wb) = (ca.w, cb.w);
            let v00 = plane.cell(ca.i0, cb.i0);
            let v01 = plane.cell(ca.i0, cb.i0 + 1);
            let v10 = plane.cell(ca.i0 + 1, cb.i0);
            let v11 = plane.cell(ca.i0 + 1, cb.i0 + 1);
            let (mut g_wa, mut g_wb) = (0.0, 0.0);
            for c in 0..dim {
                let gf = plane_feature_grads[k * dim + c];
                g_wa += gf * ((1.0 - wb) * (v10[c] - v00[c]) + wb * (v11[c] - v01[c]));
                g_wb += gf * ((1.0 - wa) * (v01[c] - v00[c]) + wa * (v11[c] - v10[c]));
            }
            if ax < 3 {
                center[ax] += g_wa * ca.du_dx;
            }
            if bx < 3 {
                center[bx] += g_wb * cb.du_dx;
            }
        }
    }

    GaussianGrad {
        center,
        rotation: g_u,
        scale: g_s,
        opacity: dg.opacity,
        sh: dg.sh.clone(),
        layer_grads,
        plane_feature_grads,
    }
}

/// Gradient of `Σ_k ⟨upstream_k, C_k⟩` with respect to every scene parameter,
/// where `C` is the image recorded by `record`. Gaussians that were culled or
/// never composited get zero gradient.
pub fn backward(scene: &Scene, record: &ForwardRecord, upstream: &Image) -> Result<GradientSet> {
    if fingerprint(scene) != record.fingerprint {
        return Err(LgsError::invalid_state(
            "forward record is stale: scene parameters changed since it was recorded",
        ));
    }
    let raster = &record.raster;
    if upstream.width != raster.width || upstream.height != raster.height {
        return Err(LgsError::invalid_argument("upstream gradient does not match the rendered image"));
    }
    let mut grads = GradientSet::zeros_like(scene);
    if upstream.data.iter().all(|&v| v == 0.0) {
        return Ok(grads);
    }
    if !upstream.data.iter().all(|v| v.is_finite()) {
        return Err(LgsError::invalid_argument("upstream gradient is not finite"));
    }

    let tile_grads: Vec<Vec<ScreenGrad>> = (0..raster.tile_lists.len())
        .into_par_iter()
        .map(|tile| tile_backward(raster, tile, upstream))
        .collect();
    let mut screen = vec![ScreenGrad::default(); raster.projected.len()];
    for (list, tg) in raster.tile_lists.iter().zip(&tile_grads) {
        for (&pos, g) in list.iter().zip(tg) {
            screen[pos as usize].add(g);
        }
    }

    let n = scene.cloud.len();
    let mut deformed: Vec<Option<Gaussian>> = vec![None; n];
    let mut by_source = vec![None; n];
    for (pos, p) in raster.projected.iter().enumerate() {
        by_source[p.source_index] = Some(pos);
        deformed[p.source_index] = Some(apply_deformation(
            &scene.cloud.gaussians[p.source_index],
            &record.deformations[p.source_index],
        )?);
    }
    let cam = &record.camera;
    let sh_degree = scene.cloud.sh_degree;
    let per_gaussian: Vec<Option<GaussianGrad>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let pos = by_source[i]?;
            let dg = project_backward(raster, pos, &screen[pos], cam, deformed[i].as_ref()?, sh_degree);
            Some(gaussian_backward(scene, record, i, &dg))
        })
        .collect();

    let dim = scene.field.feature_dim();
    let mut plane_offsets = Vec::with_capacity(6);
    let mut acc = 0;
    for p in &scene.field.planes {
        plane_offsets.push(acc);
        acc += p.values.len();
    }
    let mut layer_offsets = Vec::with_capacity(scene.field.mlp.layers.len());
    let mut acc = 0;
    for l in &scene.field.mlp.layers {
        layer_offsets.push(acc);
        acc += l.weights.len() + l.bias.len();
    }
    let mut sh_offset = 0;
    for (i, gg) in per_gaussian.iter().enumerate() {
        let sh_len = scene.cloud.gaussians[i].sh.len();
        let Some(gg) = gg else {
            sh_offset += sh_len;
            continue;
        };
        grads.group_mut(ParamGroup::Centers)[3 * i..3 * i + 3].copy_from_slice(gg.center.as_slice());
        grads.group_mut(ParamGroup::Rotations)[4 * i..4 * i + 4].copy_from_slice(&gg.rotation);
        grads.group_mut(ParamGroup::Scales)[3 * i..3 * i + 3].copy_from_slice(gg.scale.as_slice());
        grads.group_mut(ParamGroup::Opacities)[i] = gg.opacity;
        grads.group_mut(ParamGroup::Sh)[sh_offset..sh_offset + sh_len].copy_from_slice(&gg.sh);
        sh_offset += sh_len;

        if !gg.layer_grads.is_empty() {
            let mlp = grads.group_mut(ParamGroup::Mlp);
            let trace = &record.traces[i];
            for (k, l) in scene.field.mlp.layers.iter().enumerate() {
                let base = layer_offsets[k];
                let input = &trace.inputs[k];
                for (r, &gy) in gg.layer_grads[k].iter().enumerate() {
                    if gy == 0.0 {
                        continue;
                    }
                    let row = &mut mlp[base + r * l.cols..base + (r + 1) * l.cols];
                    for (w, &x) in row.iter_mut().zip(input) {
                        *w += gy * x;
                    }
                    mlp[base + l.weights.len() + r] += gy;
                }
            }
        }
        if !gg.plane_feature_grads.is_empty() {
            let planes = grads.group_mut(ParamGroup::Planes);
            let sample = &record.samples[i];
            for (k, plane) in scene.field.planes.iter().enumerate() {
                let [ca, cb] = sample.coords[k];
                let corners = [
                    (ca.i0, cb.i0, (1.0 - ca.w) * (1.0 - cb.w)),
                    (ca.i0, cb.i0 + 1, (1.0 - ca.w) * cb.w),
                    (ca.i0 + 1, cb.i0, ca.w * (1.0 - cb.w)),
                    (ca.i0 + 1, cb.i0 + 1, ca.w * cb.w),
                ];
                let gf = &gg.plane_feature_grads[k * dim..(k + 1) * dim];
                for (ci, cj, w) in corners {
                    let off = plane_offsets[k] + plane.offset(ci, cj);
                    for (v, g) in planes[off..off + dim].iter_mut().zip(gf) {
                        *v += w * g;
                    }
                }
            }
        }
    }
    Ok(grads)
}
