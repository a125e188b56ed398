use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;

use refseg::dataset::{self, load_split};
use refseg::gradcheck::{self, GradcheckConfig};
use refseg::synth::{generate_dataset, GeneratorSpec};
use refseg::train::{ablation_csv, log_csv, run_ablation_grid, StopReason};
use refseg::model::DEFAULT_THRESHOLD;
use refseg::{evaluate, predict_mask, Element, ModelConfig, SegmentationNet, TrainConfig};

#[derive(Parser)]
#[command(name = "refseg", version, about = "Referring-expression segmentation with element overlays")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic screen dataset.
    GenData {
        /// Generator spec as JSON; defaults apply to omitted fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        count: usize,
    },
    /// Train a model and write the best checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model_config: Option<PathBuf>,
        #[arg(long)]
        train_config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Training log CSV; defaults to `<out>.log.csv`.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on one split and print the report as JSON.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Segment one image: writes a probability heatmap and a thresholded mask.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// JSON array of {"text", "bbox": [x0, y0, x1, y1]}.
        #[arg(long)]
        elements: PathBuf,
        #[arg(long)]
        expr: String,
        /// Heatmap PNG; the mask goes next to it as `<stem>_mask.png`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and test the five ablation settings and write a CSV table.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        model_config: Option<PathBuf>,
        #[arg(long)]
        train_config: Option<PathBuf>,
    },
    /// Finite-difference gradient checks; exits nonzero on any violation.
    Gradcheck {
        #[arg(long, default_value_t = 16)]
        size: usize,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
    },
}

fn read_json<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenData { spec, out, count } => {
            let spec: GeneratorSpec = read_json(spec.as_deref())?;
            let pairs = generate_dataset(&spec, count, &out)?;
            eprintln!(
                "wrote {count} screens to {}: {} train, {} val, {} test pairs",
                out.display(),
                pairs[0],
                pairs[1],
                pairs[2]
            );
        }
        Command::Train {
            data,
            model_config,
            train_config,
            out,
            log,
        } => {
            let model: ModelConfig = read_json(model_config.as_deref())?;
            let cfg: TrainConfig = read_json(train_config.as_deref())?;
            let train_set = load_split(&data, "train")?;
            let val_set = load_split(&data, "val")?;
            let outcome = refseg::train(&model, &cfg, &train_set, &val_set, |r| {
                eprintln!(
                    "step {:>6}  loss {:.4}  val miou {:.4}  val acc {:.4}",
                    r.step, r.train_loss, r.val_miou, r.val_accuracy
                );
            })?;
            outcome.net.save(&out)?;
            let log_path = log.unwrap_or_else(|| with_suffix(&out, ".log.csv"));
            fs::write(&log_path, log_csv(&outcome.log)).with_context(|| format!("writing {}", log_path.display()))?;
            if let StopReason::Diverged(step) = outcome.stop {
                eprintln!("loss diverged at step {step}; kept the last finite checkpoint");
                return Ok(false);
            }
            if let Some((step, best)) = &outcome.best {
                eprintln!("best val accuracy {:.4} at step {step}", best.accuracy);
            }
        }
        Command::Eval { data, ckpt, split } => {
            let net = SegmentationNet::load(&ckpt)?;
            let samples = load_split(&data, &split)?;
            let report = evaluate(&net, &split, &samples)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Infer {
            ckpt,
            image,
            elements,
            expr,
            out,
        } => {
            let net = SegmentationNet::load(&ckpt)?;
            let img = dataset::read_image(&image)?;
            let text = fs::read_to_string(&elements).with_context(|| format!("reading {}", elements.display()))?;
            let elements: Vec<Element> =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", elements.display()))?;
            let output = net.forward(&img, &elements, &expr)?;
            let heat: Vec<u8> = output
                .probs
                .data()
                .chunks_exact(2)
                .map(|c| (c[1] * 255.0).round().clamp(0.0, 255.0) as u8)
                .collect();
            dataset::write_gray_png(&out, output.width(), output.height(), &heat)?;
            let mask = predict_mask(&output, DEFAULT_THRESHOLD)?;
            let mask_path = mask_path(&out);
            dataset::write_mask_png(&mask_path, &mask)?;
            eprintln!("wrote {} and {}", out.display(), mask_path.display());
        }
        Command::Ablate {
            data,
            out,
            model_config,
            train_config,
        } => {
            let model: ModelConfig = read_json(model_config.as_deref())?;
            let cfg: TrainConfig = read_json(train_config.as_deref())?;
            let train_set = load_split(&data, "train")?;
            let val_set = load_split(&data, "val")?;
            let test_set = load_split(&data, "test")?;
            let rows = run_ablation_grid(&model, &cfg, &train_set, &val_set, &test_set, |flags, r| {
                eprintln!(
                    "{:<28} step {:>6}  loss {:.4}  val acc {:.4}",
                    refseg::train::ablation_name(flags),
                    r.step,
                    r.train_loss,
                    r.val_accuracy
                );
            });
            let csv = ablation_csv(&rows);
            fs::write(&out, &csv).with_context(|| format!("writing {}", out.display()))?;
            print!("{csv}");
            return Ok(rows.iter().all(|r| r.result.is_ok()));
        }
        Command::Gradcheck { size, seeds } => {
            let cfg = GradcheckConfig {
                size,
                seeds,
                ..GradcheckConfig::default()
            };
            let reports = gradcheck::run_all(&cfg, |r| {
                println!(
                    "{} {:<36} compared {:>6}  skipped {:>4}  max rel err {:.2e}",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.compared,
                    r.skipped,
                    r.max_rel_error
                );
            })?;
            return Ok(reports.iter().all(|r| r.passed));
        }
    }
    Ok(true)
}

fn mask_path(heatmap: &Path) -> PathBuf {
    let stem = heatmap.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    heatmap.with_file_name(format!("{stem}_mask.png"))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
