#![allow(dead_code)]

pub mod oracles;

use lgs_core::deformation::{Bounds, Dense, DeformationField, FeaturePlane, PlaneAxes, TinyMlp};
use lgs_core::image::Image;
use lgs_core::optimizer::{backward, forward, get_params, set_params, ParamGroup};
use lgs_core::scene::{normalize_quat, sh_coeff_count, Camera, Gaussian, GaussianCloud, Scene};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn camera(width: usize, height: usize) -> Camera {
    Camera::look_at(
        Vector3::new(0.35, -0.25, -2.6),
        Vector3::zeros(),
        Vector3::new(0.0, -1.0, 0.0),
        1.3 * width as f64,
        width,
        height,
    )
}

/// Random Gaussian with opacity ≤ 0.8 (never reaches the 0.99 alpha cap) and
/// small SH so colors stay inside `[0, 1]`.
pub fn random_gaussian(rng: &mut ChaCha8Rng, degree: u8) -> Gaussian {
    let q = normalize_quat(&[
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    ])
    .unwrap();
    let mut sh = vec![0.0; sh_coeff_count(degree)];
    for (k, v) in sh.iter_mut().enumerate() {
        *v = if k < 3 {
            rng.random_range(-0.8..0.8)
        } else {
            rng.random_range(-0.04..0.04)
        };
    }
    Gaussian {
        center: Vector3::from_fn(|_, _| rng.random_range(-0.35..0.35)),
        rotation: q,
        scale: Vector3::from_fn(|_, _| rng.random_range(0.08..0.22)),
        opacity: rng.random_range(0.2..0.8),
        sh,
    }
}

/// Small field with planes near 1 and a one- or two-hidden-layer MLP whose
/// outputs are a few hundredths of a world unit.
pub fn random_field(rng: &mut ChaCha8Rng, res: [usize; 4], d: usize, hidden: usize) -> DeformationField {
    let planes = PlaneAxes::ALL
        .iter()
        .map(|&axes| {
            let (a, b) = axes.axes();
            let mut p = FeaturePlane::filled(axes, [res[a], res[b]], d, 0.0);
            p.values.iter_mut().for_each(|v| *v = 1.0 + rng.random_range(-0.3..0.3));
            p
        })
        .collect();
    let mut layers = Vec::new();
    let mut width = d;
    for _ in 0..rng.random_range(1..=2) {
        layers.push(random_dense(rng, hidden, width, 0.6));
        width = hidden;
    }
    layers.push(random_dense(rng, 10, width, 0.04));
    DeformationField {
        planes,
        bounds: Bounds::cube(0.6),
        mlp: TinyMlp { layers },
    }
}

pub fn random_dense(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Dense {
    Dense {
        rows,
        cols,
        weights: (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect(),
        bias: (0..rows).map(|_| rng.random_range(-scale..scale)).collect(),
    }
}

pub fn random_scene(rng: &mut ChaCha8Rng, gaussians: usize, degree: u8) -> Scene {
    Scene {
        cloud: GaussianCloud {
            sh_degree: degree,
            gaussians: (0..gaussians).map(|_| random_gaussian(rng, degree)).collect(),
        },
        field: random_field(rng, [4, 4, 4, 3], 3, 8),
    }
}

pub fn random_image(rng: &mut ChaCha8Rng, width: usize, height: usize, lo: f64, hi: f64) -> Image {
    Image::from_data(
        width,
        height,
        (0..width * height * 3).map(|_| rng.random_range(lo..hi)).collect(),
    )
    .unwrap()
}

#[derive(Debug, Default)]
pub struct FdReport {
    pub checked: usize,
    /// Coordinates whose perturbation flips a compositing gate at every step size.
    pub skipped: usize,
    pub failures: Vec<String>,
    pub nonzero: [usize; 7],
}

pub fn fd_close(a: f64, n: f64) -> bool {
    (a - n).abs() <= (1e-3 * a.abs().max(n.abs())).max(1e-5)
}

/// Compares the analytic gradient of `⟨w, render(scene, t)⟩` against central
/// differences for every coordinate with a nonzero analytic gradient plus up to
/// `zero_samples` zero-gradient coordinates per group.
pub fn finite_difference_check(scene: &Scene, cam: &Camera, t: f64, w: &Image, zero_samples: usize) -> FdReport {
    let loss = |s: &Scene| -> (f64, Vec<u32>) {
        let rec = forward(s, cam, t).unwrap();
        let v = rec.output.image.data.iter().zip(&w.data).map(|(a, b)| a * b).sum();
        (v, rec.output.hit_counts)
    };
    let record = forward(scene, cam, t).unwrap();
    let base_hits = record.output.hit_counts.clone();
    let grads = backward(scene, &record, w).unwrap();
    let mut report = FdReport::default();
    for (gi, group) in ParamGroup::ALL.into_iter().enumerate() {
        let base = get_params(scene, group);
        let analytic = grads.group(group);
        let mut zeros = 0;
        for i in 0..base.len() {
            if analytic[i] == 0.0 {
                if zeros >= zero_samples {
                    continue;
                }
                zeros += 1;
            } else {
                report.nonzero[gi] += 1;
            }
            let mut numeric = None;
            for h in [1e-4, 1e-6, 1e-7] {
                let eval = |delta: f64| {
                    let mut s = scene.clone();
                    let mut v = base.clone();
                    v[i] += delta;
                    set_params(&mut s, group, &v).unwrap();
                    loss(&s)
                };
                let (fp, hp) = eval(h);
                let (fm, hm) = eval(-h);
                if hp == base_hits && hm == base_hits {
                    numeric = Some((fp - fm) / (2.0 * h));
                    break;
                }
            }
            report.checked += 1;
            match numeric {
                None => report.skipped += 1,
                Some(n) if !fd_close(analytic[i], n) => report
                    .failures
                    .push(format!("{group}[{i}]: analytic {:.9e} numeric {:.9e}", analytic[i], n)),
                Some(_) => {}
            }
        }
    }
    report
}
