use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use steerdp::data::{generate_synthetic, load_dataset, normalize, Split};
use steerdp::dp::{calibrate_sigma, epsilon_for};
use steerdp::harness::{load_grid_configs, run_grid, run_training, SigmaSetting, TrainConfig};
use steerdp::layers::{load_checkpoint, GroupSpec, WidthMode};
use steerdp::metrics::{evaluate, fir_probe, grad_cam, guided_backprop};
use steerdp::{Error, Result};

#[derive(Parser)]
#[command(name = "steerdp", version, about = "DP-SGD training and analysis of rotation-equivariant CNNs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model; flags override values from --config.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "val")]
        split: String,
        /// Dataset directory (defaults to the one recorded in the checkpoint).
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Privacy spent by the sampled Gaussian mechanism.
    Accountant {
        #[arg(long)]
        q: f64,
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        steps: usize,
        #[arg(long, default_value_t = 1e-5)]
        delta: f64,
    },
    /// Smallest noise multiplier meeting a privacy budget.
    Calibrate {
        #[arg(long)]
        epsilon: f64,
        #[arg(long, default_value_t = 1e-5)]
        delta: f64,
        #[arg(long)]
        q: f64,
        #[arg(long)]
        steps: usize,
    },
    /// Saliency heatmap (PGM + JSON sidecar) for one image.
    Explain {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image_index: usize,
        #[arg(long, value_enum, default_value = "gradcam")]
        method: Method,
        #[arg(long, default_value = "val")]
        split: String,
        /// Target class (defaults to the predicted class).
        #[arg(long)]
        class: Option<usize>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Output path without extension.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Filter impulse response of every convolution.
    Fir {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run every config in a directory and write summary.csv.
    Grid {
        #[arg(long)]
        configs: PathBuf,
        #[arg(long, default_value = "runs/grid")]
        out: PathBuf,
    },
    /// Write the synthetic oriented-pattern dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Training samples per class.
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Gradcam,
    Guided,
}

#[derive(clap::Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    group: Option<GroupSpec>,
    #[arg(long, value_delimiter = ',')]
    widths: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    width_mode: Option<WidthModeArg>,
    #[arg(long)]
    restrict: Option<bool>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lot_size: Option<f64>,
    #[arg(long)]
    train_subset: Option<usize>,
    #[arg(long)]
    val_subset: Option<usize>,
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    /// A number or "calibrate".
    #[arg(long)]
    sigma: Option<SigmaSetting>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    /// Augmentation replicas per sample; 0 disables augmentation.
    #[arg(long)]
    augment: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    dp: Option<bool>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum WidthModeArg {
    EqualFields,
    ParamMatched,
}

impl TrainArgs {
    fn resolve(self) -> Result<TrainConfig> {
        let mut c = match &self.config {
            Some(p) => TrainConfig::from_file(p)?,
            None => TrainConfig::default(),
        };
        macro_rules! set {
            ($($field:ident => $target:ident),* $(,)?) => {
                $(if let Some(v) = self.$field { c.$target = v; })*
            };
        }
        set!(dataset => dataset, group => group, widths => widths, restrict => restrict, epochs => epochs,
             lot_size => lot_size, clip_norm => clip_norm, epsilon => target_epsilon, delta => delta,
             sigma => sigma, momentum => momentum, seed => seed, output => output, dp => dp);
        if let Some(m) = self.width_mode {
            c.width_mode = match m {
                WidthModeArg::EqualFields => WidthMode::EqualFields,
                WidthModeArg::ParamMatched => WidthMode::ParamMatched,
            };
        }
        c.classes = self.classes.or(c.classes);
        c.train_subset = self.train_subset.or(c.train_subset);
        c.val_subset = self.val_subset.or(c.val_subset);
        c.learning_rate = self.lr.or(c.learning_rate);
        c.threads = self.threads.or(c.threads);
        match self.augment {
            Some(0) => c.augmentation.enabled = false,
            Some(k) => {
                c.augmentation.enabled = true;
                c.augmentation.multiplicity = k;
            }
            None => {}
        }
        Ok(c)
    }
}

fn print(v: serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(&v).expect("json"));
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let m = run_training(&cfg)?;
            print(json!({
                "output": cfg.output,
                "steps": m.steps_completed,
                "sigma": m.sigma,
                "epsilon": m.final_epsilon,
                "val_accuracy": m.final_val_accuracy,
                "brier": m.final_brier,
                "params": m.param_count,
                "mean_grad_sparsity": m.mean_grad_sparsity,
            }));
        }
        Command::Eval { checkpoint, split, dataset } => {
            let split: Split = split.parse()?;
            let (model, manifest) = load_checkpoint::<f32>(&checkpoint)?;
            let dir = dataset.or(manifest.dataset).ok_or_else(|| Error::InvalidArgument("no dataset given".into()))?;
            let data = load_dataset(&dir, split, Some(model.classes()))?;
            let x = normalize::<f32>(&data.images, *model.input_type())?;
            let r = evaluate(&model, &x, &data.labels)?;
            print(json!({ "split": split, "accuracy": r.accuracy, "brier": r.brier, "loss": r.loss, "samples": r.samples }));
        }
        Command::Accountant { q, sigma, steps, delta } => {
            let (eps, order) = epsilon_for(q, sigma, steps, delta)?;
            print(json!({ "epsilon": eps, "order": order }));
        }
        Command::Calibrate { epsilon, delta, q, steps } => {
            let sigma = calibrate_sigma(epsilon, delta, q, steps)?;
            let (achieved, _) = epsilon_for(q, sigma, steps, delta)?;
            print(json!({ "sigma": sigma, "epsilon": achieved }));
        }
        Command::Explain { checkpoint, image_index, method, split, class, dataset, out } => {
            let split: Split = split.parse()?;
            let (model, manifest) = load_checkpoint::<f32>(&checkpoint)?;
            let dir = dataset.or(manifest.dataset).ok_or_else(|| Error::InvalidArgument("no dataset given".into()))?;
            let data = load_dataset(&dir, split, Some(model.classes()))?;
            if image_index >= data.len() {
                return Err(Error::InvalidArgument(format!("image index {image_index} of {}", data.len())));
            }
            let x = normalize::<f32>(data.image(image_index), *model.input_type())?;
            let logits = model.forward(&x)?;
            let predicted = argmax(logits.row(0));
            let class = class.unwrap_or(predicted);
            let (map, tag) = match method {
                Method::Gradcam => (grad_cam(&model, &x, class)?, "gradcam"),
                Method::Guided => (guided_backprop(&model, &x, class)?, "guided"),
            };
            let stem = out.unwrap_or_else(|| checkpoint.join(format!("{tag}_{split}_{image_index}")));
            let (pgm, sidecar) = map.write(&stem)?;
            print(json!({
                "pgm": pgm, "sidecar": sidecar, "class": class, "predicted": predicted,
                "label": data.labels[image_index], "raw_max": map.raw_max,
            }));
        }
        Command::Fir { checkpoint } => {
            let (model, _) = load_checkpoint::<f32>(&checkpoint)?;
            print(serde_json::to_value(fir_probe(&model, 28, 28)?)?);
        }
        Command::Grid { configs, out } => {
            let cfgs = load_grid_configs(&configs)?;
            let rows = run_grid(&cfgs, &out)?;
            print(serde_json::to_value(rows)?);
        }
        Command::Synth { out, n, seed } => {
            print(serde_json::to_value(generate_synthetic(&out, n, seed)?)?);
        }
    }
    Ok(())
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            match e {
                Error::BudgetExhausted { .. } => ExitCode::from(3),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
