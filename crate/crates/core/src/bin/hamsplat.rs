use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hamsplat::gauss::load_ply;
use hamsplat::helmholtz::{curl, decompose, divergence, GridField};
use hamsplat::pipeline::{
    eval, metrics_csv, render_sequence, synth_scene, Checkpoint, FrameDataset, PipelineError,
    SceneKind, SynthConfig, TrainConfig, Trainer,
};
use hamsplat::render::{format_psnr, Camera, ImageBuffer, RasterConfig};
use hamsplat::stream::{
    rate_quality_sweep, sweep_csv, train_layered, LayeredScene, LayeredTrainConfig,
};

#[derive(Parser)]
#[command(
    name = "hamsplat",
    version,
    about = "Train, render and inspect time-varying Gaussian splat scenes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a deformation model on a dataset directory.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Initial primitives; defaults to `<data>/init.ply`.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Per-frame PSNR and SSIM of a checkpoint against a dataset, as CSV.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a checkpoint over time, with a trajectory CSV.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset whose cameras and timestamps are used.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Render this many evenly spaced times from the first camera instead.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Generate a synthetic dynamic scene.
    Synth {
        #[arg(long, default_value = "mixed")]
        kind: String,
        #[arg(long, default_value_t = 20)]
        frames: usize,
        #[arg(long, default_value_t = 300)]
        gaussians: usize,
        #[arg(long, default_value_t = 64)]
        resolution: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a layered level-of-detail scene to a dataset's views.
    StreamPack {
        /// Starting primitives.
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 3)]
        layers: usize,
        #[arg(long, default_value_t = 300)]
        iterations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Size and PSNR of every level of a layered scene.
    StreamSweep {
        #[arg(long)]
        layered: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decompose a random periodic field and report the error figures.
    HelmholtzCheck {
        #[arg(long, default_value_t = 16)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn write_or_print(out: Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(&p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn views(data: &FrameDataset) -> Vec<(Camera, ImageBuffer)> {
    data.frames()
        .iter()
        .map(|f| (f.camera.clone(), f.image.clone()))
        .collect()
}

fn load_data(dir: &PathBuf) -> Result<FrameDataset> {
    FrameDataset::load(dir).with_context(|| format!("loading dataset {}", dir.display()))
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train {
            config,
            data,
            out,
            init,
        } => {
            let cfg = match config {
                Some(p) => TrainConfig::parse(&fs::read_to_string(&p)?)
                    .with_context(|| format!("config {}", p.display()))?,
                None => TrainConfig::default(),
            };
            let dataset = load_data(&data)?;
            let init_path = init.unwrap_or_else(|| data.join("init.ply"));
            let scene = load_ply(&init_path)
                .with_context(|| format!("initial scene {}", init_path.display()))?;
            let mut trainer = Trainer::new(cfg, dataset, scene)?;
            let result = trainer.run(|l| {
                eprintln!(
                    "iter {:>6}  loss {:.6}  psnr {}",
                    l.iteration,
                    l.loss,
                    format_psnr(l.psnr)
                )
            });
            match result {
                Ok(()) => trainer.checkpoint().save(&out)?,
                Err(PipelineError::NonFiniteLoss {
                    iteration,
                    last_good,
                }) => {
                    last_good.save(&out)?;
                    bail!(
                        "loss became non-finite at iteration {iteration}; state before it saved to {}",
                        out.display()
                    );
                }
                Err(e) => return Err(e.into()),
            }
        }
        Command::Eval {
            checkpoint,
            data,
            out,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let rows = eval(&ck, &load_data(&data)?)?;
            write_or_print(out, &metrics_csv(&rows))?;
        }
        Command::Render {
            checkpoint,
            data,
            out,
            steps,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let dataset = load_data(&data)?;
            let (cams, times): (Vec<Camera>, Vec<f64>) = match steps {
                Some(n) => {
                    let cam = dataset
                        .frames()
                        .first()
                        .context("dataset has no frames")?
                        .camera
                        .clone();
                    let times = (0..n)
                        .map(|i| {
                            if n > 1 {
                                i as f64 / (n - 1) as f64
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    (vec![cam], times)
                }
                None => dataset
                    .frames()
                    .iter()
                    .map(|f| (f.camera.clone(), f.t))
                    .unzip(),
            };
            render_sequence(&ck, &cams, &times, &out)?;
            eprintln!("{} frames written to {}", times.len(), out.display());
        }
        Command::Synth {
            kind,
            frames,
            gaussians,
            resolution,
            seed,
            out,
        } => {
            let cfg = SynthConfig {
                kind: kind.parse::<SceneKind>()?,
                frames,
                gaussians,
                resolution,
                seed,
                ..Default::default()
            };
            synth_scene(&cfg)?.save(&out, 0.02)?;
            eprintln!("{} frames written to {}", frames, out.display());
        }
        Command::StreamPack {
            scene,
            data,
            layers,
            iterations,
            seed,
            out,
        } => {
            let init = load_ply(&scene)?;
            let cfg = LayeredTrainConfig {
                layers,
                iterations,
                seed,
                ..Default::default()
            };
            let layered = train_layered(&init, &views(&load_data(&data)?), &cfg)?;
            layered.save(&out)?;
            eprintln!("{} layers written to {}", layered.depth(), out.display());
        }
        Command::StreamSweep { layered, data, out } => {
            let layered = LayeredScene::load(&layered)?;
            let rows = rate_quality_sweep(
                &layered,
                &views(&load_data(&data)?),
                LayeredTrainConfig::default().background,
                &RasterConfig::default(),
            )?;
            write_or_print(out, &sweep_csv(&rows))?;
        }
        Command::HelmholtzCheck { n, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let values = (0..n * n * n)
                .map(|_| [0; 3].map(|_| rng.gen_range(-1.0..1.0)))
                .collect();
            let field = GridField::new([n; 3], values)?;
            let d = decompose(&field);
            let rebuilt = d.conservative.add(&d.solenoidal)?.offset(d.mean);
            let rel = |x: f64| x / field.l2_norm().max(f64::MIN_POSITIVE);
            let div_s = divergence(&d.solenoidal)
                .iter()
                .fold(0.0_f64, |m, v| m.max(v.abs()));
            println!("grid              {n}^3");
            println!(
                "reconstruction    {:.3e}",
                rel(field.sub(&rebuilt)?.l2_norm())
            );
            let cos = d.conservative.inner(&d.solenoidal)
                / (d.conservative.l2_norm() * d.solenoidal.l2_norm()).max(f64::MIN_POSITIVE);
            println!("orthogonality     {:.3e}", cos.abs());
            println!("max |div F_s|     {div_s:.3e}");
            println!("max |curl F_c|    {:.3e}", curl(&d.conservative).max_norm());
        }
    }
    Ok(())
}
