use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use atrous_seg::arch::spec::parse_list;
use atrous_seg::{SegError, Shape};
use seg_cli::ablate::{self, Axis};
use seg_cli::analyze::analyze;
use seg_cli::checkpoint::Checkpoint;
use seg_cli::config::RunConfig;
use seg_cli::evaluate::{evaluate, evaluate_prediction_dir, infer_image, EvalOptions};
use seg_cli::train::{train_until, CHECKPOINT_FILE};
use seg_cli::{exit_code, load_eval, load_train};

#[derive(Parser)]
#[command(name = "seg", version, about = "Atrous encoder-decoder segmentation on the CPU")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Run configuration (flat `key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (or file prefix for `infer`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Evaluation output stride.
    #[arg(long = "eval-os", global = true)]
    eval_os: Option<usize>,
    /// Comma-separated inference scales.
    #[arg(long, global = true)]
    ms: Option<String>,
    /// Also average over left-right flipped inputs.
    #[arg(long, global = true)]
    flip: bool,
    /// Comma-separated trimap band widths.
    #[arg(long, global = true)]
    trimap: Option<String>,
    /// Extra `key=value` config overrides, applied after the file.
    #[arg(long = "set", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train and write `checkpoint.bin` and `loss.csv` into --out.
    Train {
        /// Continue from the checkpoint in --out.
        #[arg(long)]
        resume: bool,
        /// Stop after this iteration, keeping the full schedule.
        #[arg(long)]
        until: Option<usize>,
    },
    /// Score a checkpoint (or a directory of saved predictions) on the eval set.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Directory of NNNNN.pgm predictions to score instead of a model.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Label one PPM image; writes PREFIX.pgm and PREFIX_overlay.ppm.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
    },
    /// Print the stride plan and per-layer Multiply-Adds.
    Analyze {
        /// Input height and width.
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
    /// Train and evaluate the rows of one ablation table.
    Ablate {
        /// reduce_channels, decoder_structure, os_matrix or sc
        #[arg(long)]
        axis: String,
    },
}

fn apply_common(cfg: &mut RunConfig, c: &Common) -> seg_cli::Result<()> {
    for kv in &c.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| SegError::Config(format!("--set expects key=value, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(os) = c.eval_os {
        cfg.eval.output_stride = os;
    }
    if let Some(ms) = &c.ms {
        cfg.eval.ms_scales = parse_list(ms)?;
    }
    if c.flip {
        cfg.eval.flip = true;
    }
    if let Some(t) = &c.trimap {
        cfg.eval.trimap_widths = parse_list(t)?;
    }
    cfg.validate()
}

fn load_config(c: &Common, fallback: Option<&Checkpoint>) -> Result<RunConfig> {
    let mut cfg = match (&c.config, fallback) {
        (Some(p), _) => RunConfig::load(p)?,
        (None, Some(ck)) => RunConfig::parse(&ck.config).context("config stored in checkpoint")?,
        (None, None) => return Err(SegError::Config("--config is required".into()).into()),
    };
    apply_common(&mut cfg, c)?;
    Ok(cfg)
}

fn out_dir(c: &Common) -> Result<&Path> {
    let dir = c.out.as_deref().ok_or_else(|| SegError::Config("--out is required".into()))?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn emit(c: &Common, file: &str, text: &str) -> Result<()> {
    match &c.out {
        Some(_) => {
            let path = out_dir(c)?.join(file);
            std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn eval_options(cfg: &RunConfig) -> EvalOptions {
    EvalOptions {
        output_stride: cfg.eval_os(),
        scales: cfg.eval.ms_scales.clone(),
        flip: cfg.eval.flip,
        trimap_widths: cfg.eval.trimap_widths.clone(),
        batch: cfg.eval.batch,
    }
}

fn checkpoint_arch_matches(cfg: &RunConfig, ck: &Checkpoint) -> Result<()> {
    let stored = RunConfig::parse(&ck.config).context("config stored in checkpoint")?;
    if stored.arch != cfg.arch {
        return Err(SegError::Config("checkpoint architecture differs from --config".into()).into());
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let c = &cli.common;
    match &cli.command {
        Command::Train { resume, until } => {
            let cfg = load_config(c, None)?;
            let dir = out_dir(c)?;
            let ck = if *resume { Some(Checkpoint::load(&dir.join(CHECKPOINT_FILE))?) } else { None };
            if let Some(ck) = &ck {
                checkpoint_arch_matches(&cfg, ck)?;
                info!("resuming at iteration {}", ck.iteration);
            }
            let samples = load_train(&cfg)?;
            let outcome = train_until(&cfg, &samples, ck.as_ref(), Some(dir), *until)?;
            if let Some(last) = outcome.log.last() {
                info!("finished at iteration {} with loss {:.5}", outcome.iteration, last.loss);
            }
        }
        Command::Eval { checkpoint, predictions } => {
            if let Some(pred) = predictions {
                let cfg = load_config(c, None)?;
                let samples = load_eval(&cfg)?;
                let (miou, per_class, trimap) =
                    evaluate_prediction_dir(cfg.arch.num_classes, &samples, pred, &cfg.eval.trimap_widths)?;
                let mut text = format!("metric,value\nimages,{}\nmiou,{miou:.6}\n", samples.len());
                for (k, v) in per_class.iter().enumerate() {
                    text.push_str(&format!("iou_class_{k},{}\n", v.map_or(String::new(), |v| format!("{v:.6}"))));
                }
                for t in &trimap {
                    text.push_str(&format!("trimap_miou_w{},{}\n", t.width, t.miou.map_or(String::new(), |v| format!("{v:.6}"))));
                }
                return emit(c, "metrics.csv", &text);
            }
            let path = match (checkpoint, &c.out) {
                (Some(p), _) => p.clone(),
                (None, Some(d)) => d.join(CHECKPOINT_FILE),
                (None, None) => return Err(SegError::Config("--checkpoint or --out is required".into()).into()),
            };
            let ck = Checkpoint::load(&path)?;
            let cfg = load_config(c, Some(&ck))?;
            checkpoint_arch_matches(&cfg, &ck)?;
            let samples = load_eval(&cfg)?;
            let report = evaluate(&cfg.arch, &ck.params, &samples, &eval_options(&cfg))?;
            info!("mIOU {:.4} at output stride {}", report.miou, report.output_stride);
            emit(c, "metrics.csv", &report.to_csv())?;
        }
        Command::Infer { checkpoint, image } => {
            let ck = Checkpoint::load(checkpoint)?;
            let cfg = load_config(c, Some(&ck))?;
            checkpoint_arch_matches(&cfg, &ck)?;
            let prefix = c.out.clone().ok_or_else(|| SegError::Config("--out PREFIX is required".into()))?;
            if let Some(parent) = prefix.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            infer_image(&cfg.arch, &ck.params, cfg.eval_os(), image, &prefix, &cfg.eval.ms_scales, cfg.eval.flip)?;
        }
        Command::Analyze { size } => {
            let cfg = load_config(c, None)?;
            let input = Shape::new(1, cfg.arch.in_channels, *size, *size);
            let a = analyze(&cfg.arch, cfg.eval_os(), input)?;
            match &c.out {
                Some(_) => {
                    emit(c, "plan.txt", &a.plan)?;
                    emit(c, "cost.csv", &a.cost.to_csv())?;
                }
                None => print!("{}\n{}", a.plan, a.cost.to_csv()),
            }
        }
        Command::Ablate { axis } => {
            let axis: Axis = axis.parse()?;
            let cfg = load_config(c, None)?;
            let train_set = load_train(&cfg)?;
            let eval_set = load_eval(&cfg)?;
            let table = ablate::run(&cfg, axis, &train_set, &eval_set)?;
            emit(c, &format!("ablate_{}.csv", axis.as_str()), &ablate::render(axis, &table))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<SegError>().map_or(1, exit_code);
            ExitCode::from(code as u8)
        }
    }
}
