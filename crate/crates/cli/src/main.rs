use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use lgs_core::bench::{benchmark, synth_scene, BenchOptions, SynthSpec};
use lgs_core::compress::{compress, score_table, GaussianClass};
use lgs_core::io::{load_dataset, load_scene, read_camera_file, read_config, save_dataset, save_scene, write_image, PipelineConfig, SizeReport};
use lgs_core::optimizer::{distill, write_trace_csv};
use lgs_core::render::render_dynamic;
use lgs_core::{LgsError, Result};

#[derive(Parser)]
#[command(name = "lgs", version, about = "Compress and distill deformable Gaussian splatting scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic teacher scene and its ground-truth frames.
    Synth {
        /// JSON synth spec; defaults apply to missing keys.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out_scene: PathBuf,
        #[arg(long)]
        out_data: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Render one frame of a scene.
    Render {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long)]
        time: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-Gaussian deformation and importance scores as CSV.
    Score {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply DAP, GAP and FFC.
    Compress {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Fine-tune a compressed student against its teacher.
    Distill {
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        student: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the configured iteration count.
        #[arg(long)]
        iters: Option<usize>,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Size and quality report for the full pipeline and its ablations.
    Bench {
        /// Teacher scene.
        #[arg(long)]
        scene: PathBuf,
        /// Already distilled student; without it the teacher is compressed
        /// and distilled with the config.
        #[arg(long)]
        student: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also distill each ablation variant.
        #[arg(long)]
        distill_ablations: bool,
        #[arg(long)]
        report: PathBuf,
    },
}

fn config(path: &Option<PathBuf>) -> Result<PipelineConfig> {
    match path {
        Some(p) => read_config(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn write_json(value: &impl Serialize, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct CompressReport {
    before: SizeReport,
    after: SizeReport,
    compression_factor: f64,
    sg_count: usize,
    dg_count: usize,
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth {
            spec,
            out_scene,
            out_data,
            seed,
        } => {
            let mut spec: SynthSpec = match spec {
                Some(p) => serde_json::from_slice(&std::fs::read(p)?)?,
                None => SynthSpec::default(),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            spec.validate()?;
            let (scene, dataset) = synth_scene(&spec)?;
            let bytes = save_scene(&scene, &out_scene)?;
            save_dataset(&dataset, &out_data)?;
            println!("wrote {} ({bytes} bytes) and {} frames", out_scene.display(), dataset.frames.len());
        }
        Command::Render {
            scene,
            camera,
            time,
            out,
        } => {
            let cam = read_camera_file(camera)?.camera()?;
            let scene = load_scene(scene)?;
            let (output, _) = render_dynamic(&scene, &cam, time)?;
            write_image(&output.image, out)?;
        }
        Command::Score {
            scene,
            data,
            config: cfg,
            out,
        } => {
            let cfg = config(&cfg)?;
            let scene = load_scene(scene)?;
            let dataset = load_dataset(data)?;
            let table = score_table(&scene, &dataset, &cfg.compression)?;
            let mut w = BufWriter::new(File::create(out)?);
            writeln!(w, "index,d,d_hat,class,is")?;
            for i in 0..table.class.len() {
                let class = match table.class[i] {
                    GaussianClass::SG => "SG",
                    GaussianClass::DG => "DG",
                };
                writeln!(
                    w,
                    "{i},{},{},{class},{}",
                    table.deformation[i], table.normalized[i], table.importance[i]
                )?;
            }
            w.flush()?;
        }
        Command::Compress {
            scene,
            data,
            config: cfg,
            out,
            report,
        } => {
            let cfg = config(&cfg)?;
            let scene = load_scene(scene)?;
            let dataset = load_dataset(data)?;
            let c = compress(&scene, &dataset, &cfg.compression)?;
            save_scene(&c.student, &out)?;
            let dg_count = c.table.class.iter().filter(|&&k| k == GaussianClass::DG).count();
            let summary = CompressReport {
                compression_factor: c.before.overall_bytes as f64 / c.after.overall_bytes as f64,
                before: c.before,
                after: c.after,
                sg_count: c.table.class.len() - dg_count,
                dg_count,
            };
            println!(
                "{} -> {} bytes ({:.2}x)",
                summary.before.overall_bytes, summary.after.overall_bytes, summary.compression_factor
            );
            if let Some(path) = report {
                write_json(&summary, &path)?;
            }
        }
        Command::Distill {
            teacher,
            student,
            data,
            config: cfg,
            iters,
            seed,
            out,
            trace,
        } => {
            let mut cfg = config(&cfg)?;
            if let Some(n) = iters {
                cfg.optim.iterations = n;
            }
            if let Some(s) = seed {
                cfg.optim.seed = s;
            }
            cfg.optim.validate()?;
            let teacher = load_scene(teacher)?;
            let student = load_scene(student)?;
            let dataset = load_dataset(data)?;
            let result = distill(&teacher, &student, &dataset, &cfg.optim)?;
            save_scene(&result.student, &out)?;
            if let Some(path) = trace {
                write_trace_csv(&result.trace, BufWriter::new(File::create(path)?))?;
            }
            println!(
                "loss {:.6} -> {:.6}",
                result.initial.total, result.final_report.total
            );
        }
        Command::Bench {
            scene,
            student,
            data,
            config: cfg,
            distill_ablations,
            report,
        } => {
            let cfg = config(&cfg)?;
            let teacher = load_scene(scene)?;
            let dataset = load_dataset(data)?;
            let options = BenchOptions {
                student: student.map(load_scene).transpose()?,
                ablation_optim: distill_ablations.then(|| cfg.optim.clone()),
            };
            let r = benchmark(&teacher, &dataset, &cfg, &options)?;
            write_json(&r, &report)?;
            println!(
                "compression {:.2}x, PSNR {} dB, SSIM {:.4}",
                r.compression_factor, r.psnr_db, r.ssim
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &LgsError) -> u8 {
    if e.is_validation() {
        2
    } else {
        1
    }
}
