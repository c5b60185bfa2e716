//! Quality and size evaluation of compressed students, plus the synthetic
//! benchmark scene.

pub mod metrics;
pub mod synth;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compress::{compress_with_table, score_table, CompressionConfig};
use crate::error::{LgsError, Result};
use crate::io::{size_breakdown, PipelineConfig, SizeReport};
use crate::optimizer::{distill, OptimConfig};
use crate::render::render_dynamic;
use crate::scene::{Scene, SceneDataset};

pub use metrics::{mse, psnr, ssim, Psnr};
pub use synth::{synth_scene, SynthSpec};

/// Quality of a scene on the held-out frames: PSNR and SSIM are means over
/// frames, and PSNR is infinite as soon as one frame is reproduced exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub psnr_db: Psnr,
    pub ssim: f64,
    pub renders_per_sec: f64,
    pub test_frames: usize,
}

pub fn evaluate(scene: &Scene, dataset: &SceneDataset) -> Result<Evaluation> {
    dataset.validate()?;
    let test = dataset.test_indices();
    if test.is_empty() {
        return Err(LgsError::invalid_argument("dataset has no held-out frames"));
    }
    let start = Instant::now();
    let renders = test
        .iter()
        .map(|&i| {
            let f = &dataset.frames[i];
            render_dynamic(scene, &f.camera, f.time).map(|(out, _)| out.image)
        })
        .collect::<Result<Vec<_>>>()?;
    let secs = start.elapsed().as_secs_f64();

    let per_frame = test
        .par_iter()
        .zip(&renders)
        .map(|(&i, img)| {
            let gt = &dataset.frames[i].image;
            Ok((mse(img, gt)?, ssim(img, gt)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let psnr_db = if per_frame.iter().any(|(m, _)| *m == 0.0) {
        Psnr::Infinite
    } else {
        Psnr::Finite(per_frame.iter().map(|(m, _)| Psnr::from_mse(*m).db()).sum::<f64>() / per_frame.len() as f64)
    };
    Ok(Evaluation {
        psnr_db,
        ssim: per_frame.iter().map(|(_, s)| s).sum::<f64>() / per_frame.len() as f64,
        renders_per_sec: if secs > 0.0 { test.len() as f64 / secs } else { f64::INFINITY },
        test_frames: test.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub name: String,
    pub overall_bytes: u64,
    pub gs_bytes: u64,
    pub deform_bytes: u64,
    pub gaussian_count: usize,
    pub compression_factor: f64,
    pub psnr_db: Psnr,
    pub ssim: f64,
    pub renders_per_sec: f64,
}

impl BenchRow {
    fn new(name: &str, size: &SizeReport, teacher: &SizeReport, eval: &Evaluation) -> Self {
        Self {
            name: name.to_string(),
            overall_bytes: size.overall_bytes,
            gs_bytes: size.gs_bytes,
            deform_bytes: size.deform_bytes,
            gaussian_count: size.gaussian_count,
            compression_factor: teacher.overall_bytes as f64 / size.overall_bytes as f64,
            psnr_db: eval.psnr_db,
            ssim: eval.ssim,
            renders_per_sec: eval.renders_per_sec,
        }
    }
}

/// Flat summary of the full pipeline plus the teacher and ablation rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub overall_bytes: u64,
    pub gs_bytes: u64,
    pub deform_bytes: u64,
    pub compression_factor: f64,
    pub psnr_db: Psnr,
    pub ssim: f64,
    pub renders_per_sec: f64,
    pub teacher: BenchRow,
    pub full: BenchRow,
    pub ablations: Vec<BenchRow>,
}

impl BenchReport {
    /// Copy with every timing field zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.renders_per_sec = 0.0;
        for row in std::iter::once(&mut r.teacher).chain(std::iter::once(&mut r.full)).chain(&mut r.ablations) {
            row.renders_per_sec = 0.0;
        }
        r
    }
}

/// What to run besides the teacher evaluation.
#[derive(Debug, Clone, Default)]
pub struct BenchOptions {
    /// Use this as the full-pipeline student instead of compressing and
    /// distilling the teacher with the pipeline config.
    pub student: Option<Scene>,
    /// Distill each ablation variant with this; `None` evaluates the
    /// compressed variants as they are.
    pub ablation_optim: Option<OptimConfig>,
}

fn variant(
    teacher: &Scene,
    dataset: &SceneDataset,
    table: &crate::compress::ScoreTable,
    config: &CompressionConfig,
    optim: Option<&OptimConfig>,
) -> Result<Scene> {
    let compressed = compress_with_table(teacher, table.clone(), config)?;
    match optim {
        Some(o) => Ok(distill(teacher, &compressed.student, dataset, o)?.student),
        None => Ok(compressed.student),
    }
}

/// Evaluates the teacher, the full pipeline and the three ablations (each
/// dropping one of DAP, GAP, FFC).
pub fn benchmark(teacher: &Scene, dataset: &SceneDataset, config: &PipelineConfig, options: &BenchOptions) -> Result<BenchReport> {
    config.validate()?;
    let teacher_size = size_breakdown(teacher);
    let teacher_row = BenchRow::new("teacher", &teacher_size, &teacher_size, &evaluate(teacher, dataset)?);
    let table = score_table(teacher, dataset, &config.compression)?;

    let full_student = match &options.student {
        Some(s) => s.clone(),
        None => variant(teacher, dataset, &table, &config.compression, Some(&config.optim))?,
    };
    let full = BenchRow::new("full", &size_breakdown(&full_student), &teacher_size, &evaluate(&full_student, dataset)?);

    let mut ablations = Vec::new();
    for (name, cfg) in [
        ("without_dap", config.compression.without_dap()),
        ("without_gap", config.compression.without_gap()),
        ("without_ffc", config.compression.without_ffc()),
    ] {
        let s = variant(teacher, dataset, &table, &cfg, options.ablation_optim.as_ref())?;
        ablations.push(BenchRow::new(name, &size_breakdown(&s), &teacher_size, &evaluate(&s, dataset)?));
    }

    Ok(BenchReport {
        overall_bytes: full.overall_bytes,
        gs_bytes: full.gs_bytes,
        deform_bytes: full.deform_bytes,
        compression_factor: full.compression_factor,
        psnr_db: full.psnr_db,
        ssim: full.ssim,
        renders_per_sec: full.renders_per_sec,
        teacher: teacher_row,
        full,
        ablations,
    })
}
