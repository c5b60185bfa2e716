//! Distillation and rendering losses: the unsquared Euclidean norm of the
//! image difference, averaged over timestamps.

use serde::{Deserialize, Serialize};

use crate::error::{LgsError, Result};
use crate::image::Image;

/// `‖a − b‖₂` over all pixels and channels.
pub fn image_distance(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_shape(b)?;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

/// Gradient of `‖stu − target‖₂` with respect to `stu`, added into `out`
/// scaled by `k`. Zero when the images are equal.
pub(crate) fn add_distance_gradient(stu: &Image, target: &Image, k: f64, out: &mut [f64]) -> Result<f64> {
    let norm = image_distance(stu, target)?;
    if norm > 0.0 {
        let s = k / norm;
        for ((o, x), y) in out.iter_mut().zip(&stu.data).zip(&target.data) {
            *o += s * (x - y);
        }
    }
    Ok(norm)
}

fn mean_distance(a: &[Image], b: &[Image]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(LgsError::invalid_argument(format!(
            "{} renders vs {} references",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(LgsError::invalid_argument("loss needs at least one timestamp"));
    }
    let mut total = 0.0;
    for (x, y) in a.iter().zip(b) {
        total += image_distance(x, y)?;
    }
    Ok(total / a.len() as f64)
}

/// `L_d = (1/T) Σ_t ‖Î_tch(t) − Î_stu(t)‖₂`.
pub fn distill_loss(teacher: &[Image], student: &[Image]) -> Result<f64> {
    mean_distance(teacher, student)
}

/// `L_r = (1/T) Σ_t ‖Î_stu(t) − I_gt(t)‖₂`.
pub fn render_loss(student: &[Image], ground_truth: &[Image]) -> Result<f64> {
    mean_distance(student, ground_truth)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_d: f64,
    pub l_r: f64,
    /// Always `l_d + l_r`.
    pub total: f64,
    /// `(‖tch − stu‖, ‖stu − gt‖)` per timestamp.
    pub per_frame: Vec<(f64, f64)>,
}

impl LossReport {
    pub fn new(teacher: &[Image], student: &[Image], ground_truth: &[Image]) -> Result<Self> {
        let l_d = distill_loss(teacher, student)?;
        let l_r = render_loss(student, ground_truth)?;
        let per_frame = teacher
            .iter()
            .zip(student)
            .zip(ground_truth)
            .map(|((t, s), g)| Ok((image_distance(t, s)?, image_distance(s, g)?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            l_d,
            l_r,
            total: l_d + l_r,
            per_frame,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let a = Image::filled(1, 1, [0.3, 0.2, 0.9]);
        let b = Image::filled(1, 1, [0.0, 0.2, 0.5]);
        assert_eq!(distill_loss(&[a.clone()], &[a.clone()]).unwrap(), 0.0);
        assert!((distill_loss(&[a.clone()], &[b.clone()]).unwrap() - 0.5).abs() < 1e-15);
        assert!((render_loss(&[b.clone()], &[a.clone()]).unwrap() - 0.5).abs() < 1e-15);
        assert!(distill_loss(&[a.clone()], &[Image::new(2, 1)]).is_err());
        assert!(distill_loss(&[a], &[]).is_err());
    }

    #[test]
    fn gradient_matches_difference_direction() {
        let a = Image::filled(1, 1, [0.3, 0.0, 0.4]);
        let b = Image::new(1, 1);
        let mut g = vec![0.0; 3];
        add_distance_gradient(&a, &b, 2.0, &mut g).unwrap();
        assert!((g[0] - 1.2).abs() < 1e-15 && g[1] == 0.0 && (g[2] - 1.6).abs() < 1e-15);
        let mut g = vec![0.0; 3];
        add_distance_gradient(&a, &a, 1.0, &mut g).unwrap();
        assert_eq!(g, vec![0.0; 3]);
    }

    #[test]
    fn report_total_is_exact_sum() {
        let t = vec![Image::filled(2, 2, [0.1, 0.7, 0.3])];
        let s = vec![Image::filled(2, 2, [0.2, 0.5, 0.3])];
        let g = vec![Image::filled(2, 2, [0.9, 0.1, 0.0])];
        let r = LossReport::new(&t, &s, &g).unwrap();
        assert_eq!(r.total, r.l_d + r.l_r);
        assert_eq!(r.per_frame.len(), 1);
    }
}
