//! Teacher → student distillation by gradient descent on
//! `L = L_d + L_r` (see [`loss`]), with gradients from [`backward`].

pub mod backward;
pub mod loss;
pub mod params;

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use backward::{backward, forward, ForwardRecord};
pub use loss::{distill_loss, image_distance, render_loss, LossReport};
pub use params::{fingerprint, get_params, group_sizes, set_params, GradientSet, ParamGroup};

use crate::deformation::SCALE_FLOOR;
use crate::error::{LgsError, Result};
use crate::image::Image;
use crate::render::render_dynamic;
use crate::scene::{normalize_quat, Scene, SceneDataset};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    pub centers: f64,
    pub rotations: f64,
    pub scales: f64,
    pub opacities: f64,
    pub sh: f64,
    pub planes: f64,
    pub mlp: f64,
}

/// Step sizes for plain gradient descent on the unsquared image norm. That
/// loss has a unit-norm image gradient, so steps never shrink near the
/// optimum; the scale, opacity, plane and MLP rates are small enough that the
/// resulting oscillation stays below the compression error.
impl Default for LearningRates {
    fn default() -> Self {
        Self {
            centers: 1.6e-4,
            rotations: 1e-3,
            scales: 5e-5,
            opacities: 5e-3,
            sh: 2.5e-3,
            planes: 1.6e-3,
            mlp: 1.6e-7,
        }
    }
}

impl LearningRates {
    pub fn zero() -> Self {
        Self {
            centers: 0.0,
            rotations: 0.0,
            scales: 0.0,
            opacities: 0.0,
            sh: 0.0,
            planes: 0.0,
            mlp: 0.0,
        }
    }

    pub fn get(&self, g: ParamGroup) -> f64 {
        match g {
            ParamGroup::Centers => self.centers,
            ParamGroup::Rotations => self.rotations,
            ParamGroup::Scales => self.scales,
            ParamGroup::Opacities => self.opacities,
            ParamGroup::Sh => self.sh,
            ParamGroup::Planes => self.planes,
            ParamGroup::Mlp => self.mlp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub learning_rates: LearningRates,
    pub iterations: usize,
    /// Training frames sampled (with replacement) per step.
    pub batch_size: usize,
    pub seed: u64,
    /// Iterations between full training-set loss evaluations in the trace.
    pub eval_every: usize,
    /// Weights of `L_d` and `L_r` in the optimized loss.
    pub distill_weight: f64,
    pub render_weight: f64,
    /// Compare analytic and finite-difference gradients on a few parameters
    /// before the first step.
    pub gradient_check: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            learning_rates: LearningRates::default(),
            iterations: 2000,
            batch_size: 1,
            seed: 0,
            eval_every: 100,
            distill_weight: 1.0,
            render_weight: 1.0,
            gradient_check: false,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        for g in ParamGroup::ALL {
            let lr = self.learning_rates.get(g);
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(LgsError::invalid_argument(format!("learning rate for {g} must be ≥ 0")));
            }
        }
        if self.batch_size == 0 {
            return Err(LgsError::invalid_argument("batch_size must be positive"));
        }
        if self.eval_every == 0 {
            return Err(LgsError::invalid_argument("eval_every must be positive"));
        }
        for w in [self.distill_weight, self.render_weight] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(LgsError::invalid_argument("loss weights must be ≥ 0"));
            }
        }
        Ok(())
    }
}

/// Full training-set loss after `iteration` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub l_d: f64,
    pub l_r: f64,
    pub l: f64,
}

/// One analytic-vs-numeric comparison from the optional gradient check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckEntry {
    pub group: ParamGroup,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct DistillResult {
    pub student: Scene,
    pub trace: Vec<TraceRow>,
    pub initial: LossReport,
    pub final_report: LossReport,
    pub grad_check: Vec<GradCheckEntry>,
}

pub fn write_trace_csv(trace: &[TraceRow], mut w: impl Write) -> Result<()> {
    writeln!(w, "iteration,l_d,l_r,l")?;
    for r in trace {
        writeln!(w, "{},{},{},{}", r.iteration, r.l_d, r.l_r, r.l)?;
    }
    Ok(())
}

fn render_frames(scene: &Scene, dataset: &SceneDataset, indices: &[usize]) -> Result<Vec<Image>> {
    indices
        .par_iter()
        .map(|&i| {
            let f = &dataset.frames[i];
            render_dynamic(scene, &f.camera, f.time).map(|(out, _)| out.image)
        })
        .collect()
}

fn evaluate(
    student: &Scene,
    teacher_renders: &[Image],
    dataset: &SceneDataset,
    indices: &[usize],
) -> Result<LossReport> {
    let renders = render_frames(student, dataset, indices)?;
    let gt: Vec<Image> = indices.iter().map(|&i| dataset.frames[i].image.clone()).collect();
    LossReport::new(teacher_renders, &renders, &gt)
}

/// Loss and summed gradient over one batch of frame indices, reduced in batch order.
fn batch_gradient(
    student: &Scene,
    batch: &[(usize, usize)],
    teacher_renders: &[Image],
    dataset: &SceneDataset,
    config: &OptimConfig,
) -> Result<(f64, GradientSet)> {
    let k = 1.0 / batch.len() as f64;
    let mut total = GradientSet::zeros_like(student);
    let mut loss = 0.0;
    for &slot in batch {
        let (teacher, frame) = (&teacher_renders[slot.0], &dataset.frames[slot.1]);
        let record = forward(student, &frame.camera, frame.time)?;
        let stu = &record.output.image;
        let mut upstream = Image::new(stu.width, stu.height);
        let l_d = loss::add_distance_gradient(stu, teacher, k * config.distill_weight, &mut upstream.data)?;
        let l_r = loss::add_distance_gradient(stu, &frame.image, k * config.render_weight, &mut upstream.data)?;
        loss += k * (config.distill_weight * l_d + config.render_weight * l_r);
        let g = backward(student, &record, &upstream)?;
        total.add_scaled(&g, 1.0)?;
    }
    Ok((loss, total))
}

fn non_finite_param_group(scene: &Scene) -> Option<ParamGroup> {
    ParamGroup::ALL
        .into_iter()
        .find(|&g| !get_params(scene, g).iter().all(|v| v.is_finite()))
}

fn diverged(scene: &Scene, grads: Option<&GradientSet>) -> LgsError {
    let group = non_finite_param_group(scene)
        .or_else(|| grads.and_then(GradientSet::non_finite_group))
        .map_or_else(|| "loss".to_string(), |g| g.name().to_string());
    LgsError::Diverged { group }
}

/// One gradient-descent step followed by the parameter projections (unit
/// quaternions, floored scales, opacity in `[0, 1]`). A projection touches
/// only Gaussians whose parameters in that group moved, so a zero step is
/// bitwise the identity.
fn step(scene: &mut Scene, grads: &GradientSet, lr: &LearningRates) -> Result<()> {
    for g in ParamGroup::ALL {
        let rate = lr.get(g);
        if rate == 0.0 {
            continue;
        }
        let mut values = get_params(scene, g);
        for (v, d) in values.iter_mut().zip(grads.group(g)) {
            *v -= rate * d;
        }
        set_params(scene, g, &values)?;
    }
    let moved = |g: ParamGroup, i: usize, width: usize| {
        lr.get(g) != 0.0 && grads.group(g)[i * width..(i + 1) * width].iter().any(|&d| d != 0.0)
    };
    for (i, gauss) in scene.cloud.gaussians.iter_mut().enumerate() {
        if moved(ParamGroup::Rotations, i, 4) {
            gauss.rotation = normalize_quat(&gauss.rotation).map_err(|_| LgsError::Diverged {
                group: ParamGroup::Rotations.name().into(),
            })?;
        }
        if moved(ParamGroup::Scales, i, 3) {
            gauss.scale = gauss.scale.map(|s| s.max(SCALE_FLOOR));
        }
        if moved(ParamGroup::Opacities, i, 1) {
            gauss.opacity = gauss.opacity.clamp(0.0, 1.0);
        }
    }
    Ok(())
}

/// Central-difference check on up to three seeded coordinates per group with a
/// nonzero analytic gradient.
fn gradient_check(
    student: &Scene,
    batch: &[(usize, usize)],
    teacher_renders: &[Image],
    dataset: &SceneDataset,
    config: &OptimConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<GradCheckEntry>> {
    const H: f64 = 1e-4;
    let (_, grads) = batch_gradient(student, batch, teacher_renders, dataset, config)?;
    let mut entries = Vec::new();
    for g in ParamGroup::ALL {
        let candidates: Vec<usize> = (0..grads.group(g).len()).filter(|&i| grads.group(g)[i] != 0.0).collect();
        for _ in 0..candidates.len().min(3) {
            let index = candidates[rng.random_range(0..candidates.len())];
            let base = get_params(student, g);
            let eval = |delta: f64| -> Result<f64> {
                let mut s = student.clone();
                let mut v = base.clone();
                v[index] += delta;
                set_params(&mut s, g, &v)?;
                Ok(batch_gradient(&s, batch, teacher_renders, dataset, config)?.0)
            };
            let numeric = (eval(H)? - eval(-H)?) / (2.0 * H);
            entries.push(GradCheckEntry {
                group: g,
                index,
                analytic: grads.group(g)[index],
                numeric,
            });
        }
    }
    Ok(entries)
}

/// Optimizes the student against cached teacher renders and ground truth on
/// the training frames. Deterministic given `config.seed`.
pub fn distill(teacher: &Scene, student: &Scene, dataset: &SceneDataset, config: &OptimConfig) -> Result<DistillResult> {
    config.validate()?;
    dataset.validate()?;
    let train = dataset.train_indices();
    if train.is_empty() {
        return Err(LgsError::invalid_argument("dataset has no training frames"));
    }
    let teacher_renders = render_frames(teacher, dataset, &train)?;
    let mut student = student.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let initial = evaluate(&student, &teacher_renders, dataset, &train)?;
    if !initial.total.is_finite() {
        return Err(diverged(&student, None));
    }
    let row = |iteration: usize, r: &LossReport| TraceRow {
        iteration,
        l_d: r.l_d,
        l_r: r.l_r,
        l: r.total,
    };
    let mut trace = vec![row(0, &initial)];
    let mut final_report = initial.clone();
    let mut grad_check = Vec::new();

    for it in 0..config.iterations {
        // (position in the teacher cache, dataset frame index)
        let batch: Vec<(usize, usize)> = (0..config.batch_size)
            .map(|_| {
                let k = rng.random_range(0..train.len());
                (k, train[k])
            })
            .collect();
        if it == 0 && config.gradient_check {
            grad_check = gradient_check(&student, &batch, &teacher_renders, dataset, config, &mut rng)?;
        }
        let (loss, grads) = batch_gradient(&student, &batch, &teacher_renders, dataset, config)?;
        if !loss.is_finite() || grads.non_finite_group().is_some() {
            return Err(diverged(&student, Some(&grads)));
        }
        step(&mut student, &grads, &config.learning_rates)?;
        if let Some(g) = non_finite_param_group(&student) {
            return Err(LgsError::Diverged { group: g.name().into() });
        }
        let done = it + 1;
        if done % config.eval_every == 0 || done == config.iterations {
            final_report = evaluate(&student, &teacher_renders, dataset, &train)?;
            if !final_report.total.is_finite() {
                return Err(diverged(&student, Some(&grads)));
            }
            trace.push(row(done, &final_report));
        }
    }
    Ok(DistillResult {
        student,
        trace,
        initial,
        final_report,
        grad_check,
    })
}
