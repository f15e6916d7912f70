use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use ringmap::eval::{evaluate_trajectory, read_tum, DEFAULT_MATCH_TOLERANCE};
use ringmap::geometry::PinholeCamera;
use ringmap::mapper::{run_pipeline, PipelineConfig};
use ringmap::render::{render, RenderSettings, SplatMap};
use ringmap::sim::{generate_ground_truth_scene, read_manifest, simulate, write_simulation, SimConfig};
use ringmap::Result;

#[derive(Parser)]
#[command(name = "ringmap", version, about = "Landmark-anchored incremental splat mapping on rosette surveys")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic survey and write its sensor log.
    Simulate {
        /// Simulation TOML; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the mapping pipeline on a sensor log.
    Run {
        #[arg(long)]
        log: PathBuf,
        /// Pipeline TOML; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// ATE RMSE of an estimated TUM trajectory against a reference.
    Eval {
        #[arg(long)]
        est: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Align with a similarity transform instead of a rigid one.
        #[arg(long)]
        scale: bool,
        /// Timestamp matching tolerance in seconds.
        #[arg(long, default_value_t = DEFAULT_MATCH_TOLERANCE)]
        tolerance: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the ground-truth scene of a simulation config as PLY.
    ExportPly {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a PLY map from every pose of a TUM file into PNGs.
    Render {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        poses: PathBuf,
        /// Sensor log whose camera to use; the default camera otherwise.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn sim_config(path: Option<&Path>) -> Result<SimConfig> {
    path.map_or_else(|| Ok(SimConfig::default()), SimConfig::load)
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Simulate { config, out } => {
            let sim = simulate(&sim_config(config.as_deref())?)?;
            write_simulation(&out, &sim)?;
            println!("wrote {} frames to {}", sim.log.images.len(), out.display());
        }
        Command::Run { log, config, out } => {
            let cfg = config.map_or_else(|| Ok(PipelineConfig::default()), PipelineConfig::load)?;
            let output = run_pipeline(&log, &cfg)?;
            output.write(&out)?;
            if let Some(m) = output.final_metrics() {
                println!("ate_rmse {:.4} m  psnr {:.2} dB  ssim {:.4}  gaussians {}", m.ate_so_far, m.psnr, m.ssim, m.gaussian_count);
            }
        }
        Command::Eval { est, reference, scale, tolerance, out } => {
            let report = evaluate_trajectory(&read_tum(&est)?, &read_tum(&reference)?, tolerance, scale)?;
            report.write_csv(&out)?;
            println!("ate_rmse {:.6} m over {} poses, length {:.3} m", report.ate_rmse, report.matched, report.length);
        }
        Command::ExportPly { config, out } => {
            let map = generate_ground_truth_scene(&sim_config(config.as_deref())?.scene)?;
            map.write_ply(&out)?;
            println!("wrote {} gaussians to {}", map.len(), out.display());
        }
        Command::Render { map, poses, log, out } => {
            let map = SplatMap::read_ply(&map)?;
            let camera = match log {
                Some(dir) => read_manifest(dir)?.camera,
                None => PinholeCamera::default(),
            };
            std::fs::create_dir_all(&out)?;
            let poses = read_tum(&poses)?;
            for (i, (t, pose)) in poses.iter().enumerate() {
                let (image, _) = render(&map, &camera, pose, &RenderSettings::default());
                image.color.save_png(out.join(format!("{i:06}.png")))?;
                info!("rendered t = {t}");
            }
            println!("rendered {} views to {}", poses.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
