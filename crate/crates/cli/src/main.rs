use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use poseinfill::autoencoder::pretrain_with;
use poseinfill::config::{load_model, save_model, streams, MaskMode, RunConfig};
use poseinfill::data_io::{gen_dataset, load_poses, save_poses};
use poseinfill::diffusion::train_diffusion_with;
use poseinfill::eval::{evaluate, DiffusionInpainter, InterpolationBaseline};
use poseinfill::masking::FillMode;
use poseinfill::Error;

mod svg;

#[derive(Parser, Debug)]
#[command(name = "poseinfill", version, about = "Skeleton-motion inpainting pipeline")]
struct Cli {
    /// Flat JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// JSON-lines run log, appended to on every successful run.
    #[arg(long, global = true, default_value = "poseinfill-runs.jsonl")]
    log: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Overrides {
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `default` or a skeleton JSON path.
    #[arg(long, global = true)]
    skeleton: Option<String>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    lr: Option<f64>,
    #[arg(long, global = true, value_parser = ["interval", "random"])]
    mask_mode: Option<String>,
    #[arg(long, global = true)]
    ratio: Option<f64>,
    #[arg(long, global = true)]
    remove: Option<usize>,
    #[arg(long, global = true)]
    every: Option<usize>,
    #[arg(long, global = true, value_parser = ["interpolate", "zero"])]
    fill: Option<String>,
    /// Re-noise with fresh noise between sampler steps.
    #[arg(long, global = true)]
    stochastic: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic forward-kinematics dataset.
    Gen {
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long = "t", default_value_t = 60)]
        frames: usize,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Pre-train the autoencoder.
    Pretrain {
        #[arg(long)]
        data: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Train the denoiser on top of a pre-trained checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Generate transition frames between two segments.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        pre: PathBuf,
        #[arg(long)]
        post: PathBuf,
        #[arg(long)]
        trans: usize,
        #[arg(short, long)]
        output: PathBuf,
        /// Write one SVG per frame (x/y projection) into this directory.
        #[arg(long)]
        dump_svg: Option<PathBuf>,
    },
    /// Compare the model with linear interpolation on a test set.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Report JSON path.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

/// Failure with its process exit code.
#[derive(Debug)]
struct Failure {
    kind: &'static str,
    code: u8,
    message: String,
}

const EXIT_OTHER: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_MISSING_FILE: u8 = 3;
const EXIT_JOINT_MISMATCH: u8 = 4;
const EXIT_NON_FINITE: u8 = 5;

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (kind, code) = match &e {
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => ("missing_file", EXIT_MISSING_FILE),
            Error::Graph(poseinfill::graph::GraphError::Io(source)) if source.kind() == std::io::ErrorKind::NotFound => {
                ("missing_file", EXIT_MISSING_FILE)
            }
            Error::JointMismatch { .. } => ("joint_mismatch", EXIT_JOINT_MISMATCH),
            Error::NonFiniteLoss(_) => ("non_finite", EXIT_NON_FINITE),
            _ => ("error", EXIT_OTHER),
        };
        Failure {
            kind,
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: String) -> Failure {
    Failure {
        kind: "usage",
        code: EXIT_USAGE,
        message,
    }
}

/// Layers the config file and the flags over `base`.
fn effective_config(base: RunConfig, file: Option<&Path>, o: &Overrides) -> Result<RunConfig, Failure> {
    let mut value = base.to_value();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::from(Error::Io {
            path: path.to_path_buf(),
            source: e,
        }))?;
        let overlay: Value = serde_json::from_str(&text).map_err(|e| Failure {
            kind: "config",
            code: EXIT_OTHER,
            message: format!("{}: {e}", path.display()),
        })?;
        let Value::Object(fields) = overlay else {
            return Err(usage(format!("{} must hold a flat JSON object", path.display())));
        };
        for (k, v) in fields {
            value[k] = v;
        }
    }
    let mut cfg: RunConfig = serde_json::from_value(value).map_err(|e| usage(format!("invalid config: {e}")))?;
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(s) = &o.skeleton {
        cfg.skeleton = s.clone();
    }
    if let Some(e) = o.epochs {
        cfg.pretrain_epochs = e;
        cfg.diffusion_epochs = e;
    }
    if let Some(b) = o.batch_size {
        cfg.batch_size = b;
    }
    if let Some(lr) = o.lr {
        cfg.lr = lr;
    }
    if let Some(m) = &o.mask_mode {
        cfg.mask_mode = if m == "random" { MaskMode::Random } else { MaskMode::Interval };
    }
    if let Some(r) = o.ratio {
        cfg.mask_ratio = r;
    }
    if let Some(r) = o.remove {
        cfg.remove = r;
    }
    if let Some(e) = o.every {
        cfg.every = e;
    }
    if let Some(f) = &o.fill {
        cfg.fill = if f == "zero" { FillMode::Zero } else { FillMode::Interpolate };
    }
    if o.stochastic {
        cfg.stochastic = true;
    }
    Ok(cfg)
}

fn echo(cfg: &RunConfig) {
    println!("{}", json!({ "effective_config": cfg.to_value() }));
}

fn progress(stage: &str, epoch: usize, loss: f64) {
    eprintln!("{}", json!({ "stage": stage, "epoch": epoch, "loss": loss }));
}

fn run(cli: &Cli) -> Result<(RunConfig, Value), Failure> {
    let file = cli.config.as_deref();
    let o = &cli.overrides;
    match &cli.command {
        Command::Gen { n, frames, output } => {
            let cfg = effective_config(RunConfig::default(), file, o)?;
            echo(&cfg);
            let graph = cfg.skeleton_graph()?;
            let seqs = gen_dataset(*n, *frames, &graph, &mut poseinfill::rng::Rng::new(cfg.seed))?;
            save_poses(output, graph.num_joints(), &seqs)?;
            Ok((cfg, json!({ "sequences": n, "frames": frames, "joints": graph.num_joints() })))
        }
        Command::Pretrain { data, output } => {
            let cfg = effective_config(RunConfig::default(), file, o)?;
            echo(&cfg);
            let graph = cfg.skeleton_graph()?;
            let seqs = load_poses(data, Some(&graph))?;
            let model = cfg.build_model(graph)?;
            let curve = pretrain_with(
                &model.autoencoder,
                &seqs,
                &cfg.pretrain(),
                &mut cfg.rng(streams::PRETRAIN),
                |e, l| progress("pretrain", e, l.rst),
            )?;
            save_model(output, &model, &cfg, "pretrained")?;
            let rst: Vec<f64> = curve.iter().map(|l| l.rst).collect();
            Ok((cfg, json!({ "final_loss": rst.last(), "loss_curve": rst })))
        }
        Command::Train { data, checkpoint, output } => {
            let (model, base) = load_model(checkpoint)?;
            let cfg = effective_config(base, file, o)?;
            echo(&cfg);
            let seqs = load_poses(data, Some(model.autoencoder.graph()))?;
            let curve = train_diffusion_with(
                &model,
                &seqs,
                &cfg.diffusion_training(),
                &mut cfg.rng(streams::DIFFUSION),
                |e, l| progress("train", e, l),
            )?;
            save_model(output, &model, &cfg, "trained")?;
            Ok((cfg, json!({ "final_loss": curve.last(), "loss_curve": curve })))
        }
        Command::Infer {
            checkpoint,
            pre,
            post,
            trans,
            output,
            dump_svg,
        } => {
            let (mut model, base) = load_model(checkpoint)?;
            let cfg = effective_config(base, file, o)?;
            echo(&cfg);
            model.sampler = cfg.sampler();
            let graph = model.autoencoder.graph().clone();
            let first = |path: &Path| -> Result<_, Failure> {
                load_poses(path, Some(&graph))?
                    .into_iter()
                    .next()
                    .ok_or_else(|| Failure::from(Error::EmptyDataset))
            };
            let (a, b) = (first(pre)?, first(post)?);
            let out = model.sample_transitions(&a, &b, *trans, &mut cfg.rng(streams::SAMPLE))?;
            save_poses(output, graph.num_joints(), std::slice::from_ref(&out))?;
            if let Some(dir) = dump_svg {
                let masked: Vec<usize> = (a.frames()..a.frames() + trans).collect();
                svg::dump_frames(dir, &out, &graph, &masked).map_err(|e| Failure::from(Error::Io {
                    path: dir.clone(),
                    source: e,
                }))?;
            }
            Ok((cfg, json!({ "frames": out.frames(), "pre": a.frames(), "trans": trans, "post": b.frames() })))
        }
        Command::Eval {
            checkpoint,
            data,
            output,
        } => {
            let (mut model, base) = load_model(checkpoint)?;
            let cfg = effective_config(base, file, o)?;
            echo(&cfg);
            model.sampler = cfg.sampler();
            let seqs = load_poses(data, Some(model.autoencoder.graph()))?;
            let inpainter = DiffusionInpainter {
                model: &model,
                seed: cfg.rng(streams::SAMPLE).next_u64(),
            };
            let mut report = evaluate(&seqs, &inpainter, &InterpolationBaseline, cfg.protocol())?;
            report.config = Some(cfg.to_value());
            print!("{}", report.to_table());
            if let Some(path) = output {
                std::fs::write(path, report.to_json()).map_err(|e| Failure::from(Error::Io {
                    path: path.clone(),
                    source: e,
                }))?;
            }
            let summary = json!({
                "mean_dtw": report.mean_dtw,
                "mean_mpjpe_masked": report.mean_mpjpe_masked,
                "baseline_mean_dtw": report.baseline_mean_dtw,
                "baseline_mean_mpjpe_masked": report.baseline_mean_mpjpe_masked,
                "dtw_win_rate": report.dtw_win_rate,
                "mpjpe_win_rate": report.mpjpe_win_rate,
            });
            Ok((cfg, summary))
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Gen { .. } => "gen",
        Command::Pretrain { .. } => "pretrain",
        Command::Train { .. } => "train",
        Command::Infer { .. } => "infer",
        Command::Eval { .. } => "eval",
    }
}

fn append_log(path: &Path, record: &Value) -> std::io::Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{record}")
}

fn fail(f: &Failure) -> ExitCode {
    eprintln!("{}", json!({ "error": f.kind, "exit_code": f.code, "message": f.message }));
    ExitCode::from(f.code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.to_string().lines().next().unwrap_or_default().to_string();
            return fail(&usage(message));
        }
    };
    match run(&cli) {
        Ok((cfg, metrics)) => {
            let record = json!({
                "command": command_name(&cli.command),
                "seed": cfg.seed,
                "config": cfg.to_value(),
                "metrics": metrics,
            });
            if let Err(e) = append_log(&cli.log, &record) {
                return fail(&Failure::from(Error::Io {
                    path: cli.log.clone(),
                    source: e,
                }));
            }
            println!("{}", json!({ "status": "ok", "metrics": record["metrics"] }));
            ExitCode::SUCCESS
        }
        Err(f) => fail(&f),
    }
}
