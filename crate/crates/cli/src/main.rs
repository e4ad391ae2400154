use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use splat4d::edit::CollisionPolicy;
use splat4d::render::RenderSettings;
use splat4d_cli::commands::{self, CliError};
use splat4d_cli::service::{self, AppState};
use splat4d_cli::settings::SettingsArgs;

#[derive(Parser)]
#[command(name = "splat4d", version, about = "Render, evaluate and edit 4D Gaussian scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Collision {
    Remap,
    Reject,
}

#[derive(Subcommand)]
enum Command {
    /// Render one time: rgb.png, depth.pfm, alpha.pfm and provenance.json.
    Render {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        time: f64,
        /// JSON camera pose overriding the interpolated one.
        #[arg(long)]
        pose_file: Option<PathBuf>,
        #[arg(long)]
        width: Option<u32>,
        #[arg(long)]
        height: Option<u32>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        settings: SettingsArgs,
    },
    /// Compare keyframe renders against frame_NNNN.png (and _depth.pfm, _mask.png) files.
    Eval {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        settings: SettingsArgs,
    },
    /// Scene-flow metrics between two JSON arrays of [x, y, z] vectors.
    EvalFlow {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Apply a JSON edit script and save the result as a new file.
    Edit {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        script: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "remap")]
        on_collision: Collision,
    },
    /// Write one dynamic instance as a JSON payload for an insert op.
    Extract {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        instance: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// List the scene's instances as JSON.
    Instances {
        #[arg(long)]
        scene: PathBuf,
    },
    /// Build a scene from a synthetic description file.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render every keyframe into frame_NNNN.png and frame_NNNN_depth.pfm.
    ExportFrames {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        settings: SettingsArgs,
    },
    /// Serve the HTTP API over a directory of scenes.
    Serve {
        #[arg(long, env = "SPLAT4D_LISTEN", default_value = "127.0.0.1:8080")]
        listen: String,
        #[arg(long, env = "SPLAT4D_SCENE_DIR")]
        scene_dir: PathBuf,
        #[command(flatten)]
        settings: SettingsArgs,
    },
}

/// Prints a line, ignoring a closed pipe (e.g. output piped into `head`).
fn emit(line: impl std::fmt::Display) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout().lock(), "{line}");
}

fn base_settings(args: &SettingsArgs) -> RenderSettings {
    args.overrides().apply(&RenderSettings::default())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Render {
            scene,
            time,
            pose_file,
            width,
            height,
            out,
            settings,
        } => commands::render_cmd(&scene, time, pose_file.as_deref(), (width, height), &out, &base_settings(&settings)),
        Command::Eval {
            scene,
            gt,
            out,
            settings,
        } => {
            let report = commands::eval_cmd(&scene, &gt, &base_settings(&settings))?;
            for row in &report.frames {
                emit(format!(
                    "frame={} time={} psnr={:.4} ssim={} d_rmse={}",
                    row.index,
                    row.timestamp,
                    row.psnr,
                    row.ssim.map_or("na".into(), |v| format!("{v:.6}")),
                    row.d_rmse.map_or("na".into(), |v| format!("{v:.6}")),
                ));
            }
            emit(format!("mean_psnr={:.4}", report.mean_psnr));
            let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Other(e.to_string()))?;
            std::fs::write(&out, text + "\n").map_err(|e| CliError::Other(format!("{}: {e}", out.display())))
        }
        Command::EvalFlow { pred, gt } => {
            let r = commands::eval_flow_cmd(&pred, &gt)?;
            emit(serde_json::to_string_pretty(&r).map_err(|e| CliError::Other(e.to_string()))?);
            Ok(())
        }
        Command::Edit {
            scene,
            script,
            out,
            on_collision,
        } => {
            let policy = match on_collision {
                Collision::Remap => CollisionPolicy::Remap,
                Collision::Reject => CollisionPolicy::Reject,
            };
            for note in commands::edit_cmd(&scene, &script, &out, policy)? {
                emit(serde_json::to_string(&note).map_err(|e| CliError::Other(e.to_string()))?);
            }
            Ok(())
        }
        Command::Extract { scene, instance, out } => commands::extract_cmd(&scene, instance, &out),
        Command::Instances { scene } => {
            emit(commands::instances_cmd(&scene)?);
            Ok(())
        }
        Command::Synth { spec, out } => {
            let seq = commands::synth_cmd(&spec, &out)?;
            emit(format!("frames={} out={}", seq.frames.len(), out.display()));
            Ok(())
        }
        Command::ExportFrames { scene, out, settings } => {
            for p in commands::export_gt(&scene, &out, &base_settings(&settings))? {
                emit(p.display());
            }
            Ok(())
        }
        Command::Serve {
            listen,
            scene_dir,
            settings,
        } => {
            let settings = base_settings(&settings);
            settings
                .validate()
                .map_err(|e| CliError::Other(format!("invalid render settings: {e}")))?;
            let state = AppState::new(&scene_dir, settings)
                .map_err(|e| CliError::Load(format!("cannot scan {}: {e}", scene_dir.display())))?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Other(e.to_string()))?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(&listen)
                    .await
                    .map_err(|e| CliError::Other(format!("cannot listen on {listen}: {e}")))?;
                let addr = listener.local_addr().map_err(|e| CliError::Other(e.to_string()))?;
                emit(format!("listening on http://{addr}"));
                service::serve(listener, state).await.map_err(|e| CliError::Other(e.to_string()))
            })
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
