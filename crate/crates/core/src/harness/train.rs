use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{SigmaSetting, TrainConfig};
use crate::data::{augment_batch, load_dataset, normalize, Dataset, Split};
use crate::dp::{calibrate_sigma, clip_per_sample, default_orders, noisy_update, poisson_sample, rdp_sgm, rdp_to_epsilon, RdpCurve};
use crate::error::{invalid, Error, Result};
use crate::layers::{build_resnet9, save_checkpoint, Model, PerSampleGrads};
use crate::metrics::{accuracy, evaluate, l0_sparsity, MetricsRecord, SPARSITY_THRESHOLD};
use crate::scalar::Scalar;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_DIR: &str = "checkpoint";

/// Independent random streams derived from one seed.
pub struct RngStreams {
    pub init: ChaCha8Rng,
    pub sampling: ChaCha8Rng,
    pub augment: ChaCha8Rng,
    pub noise: ChaCha8Rng,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        let stream = |s: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(s);
            r
        };
        Self { init: stream(1), sampling: stream(2), augment: stream(3), noise: stream(4) }
    }
}

/// Step schedule: `epochs * ceil(1/q)` steps with sampling rate `q = L / n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepPlan {
    pub train_size: usize,
    pub sampling_rate: f64,
    pub steps_per_epoch: usize,
    pub steps: usize,
}

impl StepPlan {
    pub fn new(train_size: usize, lot_size: f64, epochs: usize) -> Result<Self> {
        if train_size == 0 {
            return Err(invalid("training set is empty"));
        }
        let q = lot_size / train_size as f64;
        if !(q > 0.0 && q <= 1.0) {
            return Err(invalid(format!("lot size {lot_size} exceeds the {train_size} training samples")));
        }
        let steps_per_epoch = (1.0 / q).ceil() as usize;
        Ok(Self { train_size, sampling_rate: q, steps_per_epoch, steps: epochs * steps_per_epoch })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: TrainConfig,
    pub dataset_name: String,
    pub classes: usize,
    pub plan: StepPlan,
    /// Noise multiplier used (0 without DP).
    pub sigma: f64,
    pub learning_rate: f64,
    pub param_count: usize,
    /// Records of the last step of every completed epoch.
    pub epochs: Vec<MetricsRecord>,
    pub steps_completed: usize,
    pub truncated: bool,
    pub final_val_accuracy: Option<f64>,
    pub final_brier: Option<f64>,
    #[serde(default)]
    pub final_epsilon: Option<f64>,
    pub mean_grad_sparsity: f64,
    pub checkpoint: PathBuf,
    pub wall_clock_secs: f64,
}

/// ε after `steps` steps (infinite without noise).
fn epsilon_after(curve: Option<&RdpCurve>, steps: usize, delta: f64) -> Result<f64> {
    match curve {
        None => Ok(f64::INFINITY),
        Some(_) if steps == 0 => Ok(0.0),
        Some(c) => Ok(rdp_to_epsilon(&c.compose(steps), 1, delta)?.0),
    }
}

fn mean_clipped_sparsity<T: Scalar>(grads: &PerSampleGrads<T>, scales: &[f64]) -> f64 {
    if grads.batch == 0 {
        return 1.0;
    }
    let total: f64 = grads
        .rows()
        .zip(scales)
        .map(|(row, &s)| {
            let s = T::from_f64_lossy(s);
            let scaled: Vec<T> = row.iter().map(|&v| v * s).collect();
            l0_sparsity(&scaled, SPARSITY_THRESHOLD)
        })
        .sum();
    total / grads.batch as f64
}

struct Trainer<'a> {
    cfg: &'a TrainConfig,
    train: Dataset,
    val: Dataset,
    plan: StepPlan,
    sigma: f64,
    curve: Option<RdpCurve>,
    lr: f64,
}

impl Trainer<'_> {
    fn eval(&self, model: &Model<f32>) -> Result<(f64, f64)> {
        let all: Vec<usize> = (0..self.val.len()).collect();
        let mut hits = 0.0;
        let mut brier = 0.0;
        for chunk in all.chunks(256) {
            let (img, labels) = self.val.gather(chunk);
            let x = normalize::<f32>(&img, *model.input_type())?;
            let r = evaluate(model, &x, &labels)?;
            hits += r.accuracy * chunk.len() as f64;
            brier += r.brier * chunk.len() as f64;
        }
        let n = self.val.len().max(1) as f64;
        Ok((hits / n, brier / n))
    }

    fn run(&self, model: &mut Model<f32>, rng: &mut RngStreams, sink: &mut dyn Write) -> Result<RunOutcome> {
        let cfg = self.cfg;
        let mut params = model.parameters();
        let mut velocity = vec![0.0f32; params.len()];
        let (lr, mu) = (self.lr as f32, cfg.momentum as f32);
        let lot = cfg.lot_size;
        let mut out = RunOutcome::default();
        for step in 1..=self.plan.steps {
            let eps = epsilon_after(self.curve.as_ref(), step, cfg.delta)?;
            if cfg.dp && eps > cfg.target_epsilon {
                out.exhausted = Some(Error::BudgetExhausted { step, epsilon: eps, target: cfg.target_epsilon });
                break;
            }
            let idx = poisson_sample(self.plan.train_size, self.plan.sampling_rate, &mut rng.sampling)?;
            let (images, labels) = self.train.gather(&idx);
            let policy = cfg.augmentation;
            let replicas = augment_batch(&images, &policy, &mut rng.augment)?;
            let (loss, train_acc, summed, clip_fraction, sparsity) = if idx.is_empty() {
                (0.0, 0.0, vec![0.0f32; params.len()], 0.0, 1.0)
            } else {
                let xs = replicas
                    .iter()
                    .map(|r| normalize::<f32>(r, *model.input_type()))
                    .collect::<Result<Vec<_>>>()?;
                let batch = model.per_sample_gradients(&xs, &labels)?;
                // without DP the same path runs with an unreachable bound
                let clip = if cfg.dp { cfg.clip_norm } else { f64::MAX };
                let c = clip_per_sample(&batch.grads, clip)?;
                let sparsity = mean_clipped_sparsity(&batch.grads, &c.scales);
                (batch.loss as f64, accuracy(&batch.logits, &labels), c.sum, c.clip_fraction, sparsity)
            };
            let update = noisy_update(&summed, self.sigma, cfg.clip_norm, lot, &mut rng.noise)?;
            for ((p, v), g) in params.iter_mut().zip(&mut velocity).zip(&update) {
                *v = mu * *v + g;
                *p -= lr * *v;
            }
            model.set_parameters(&params)?;
            let epoch = (step - 1) / self.plan.steps_per_epoch;
            let epoch_end = step % self.plan.steps_per_epoch == 0;
            let (val_accuracy, brier) = if epoch_end {
                let (a, b) = self.eval(model)?;
                (Some(a), Some(b))
            } else {
                (None, None)
            };
            let rec = MetricsRecord {
                step,
                epoch,
                loss,
                train_accuracy: train_acc,
                val_accuracy,
                epsilon_spent: eps,
                grad_sparsity: sparsity,
                clip_fraction,
                brier,
            };
            writeln!(sink, "{}", serde_json::to_string(&rec)?)?;
            out.sparsity_sum += sparsity;
            out.steps = step;
            if epoch_end {
                out.epochs.push(rec);
            }
        }
        Ok(out)
    }
}

#[derive(Default)]
struct RunOutcome {
    steps: usize,
    epochs: Vec<MetricsRecord>,
    sparsity_sum: f64,
    exhausted: Option<Error>,
}

fn in_pool<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| invalid(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Train one model per `cfg`, writing `metrics.jsonl`, `manifest.json` and
/// `checkpoint/` under `cfg.output`.
///
/// When the privacy budget would be exceeded the run stops, the manifest is
/// written with `truncated: true`, and [`Error::BudgetExhausted`] is
/// returned.
pub fn run_training(cfg: &TrainConfig) -> Result<RunManifest> {
    in_pool(cfg.threads, || train_inner(cfg))?
}

fn train_inner(cfg: &TrainConfig) -> Result<RunManifest> {
    let start = Instant::now();
    cfg.validate()?;
    let mut train = load_dataset(&cfg.dataset, Split::Train, cfg.classes)?;
    if let Some(n) = cfg.train_subset {
        train = train.truncate(n);
    }
    let mut val = load_dataset(&cfg.dataset, Split::Val, Some(train.classes))?;
    if let Some(n) = cfg.val_subset {
        val = val.truncate(n);
    }
    let classes = train.classes;
    let plan = StepPlan::new(train.len(), cfg.lot_size, cfg.epochs)?;
    let sigma = match (cfg.dp, cfg.sigma) {
        (false, _) => 0.0,
        (true, SigmaSetting::Value(s)) => s,
        (true, SigmaSetting::Calibrate) => calibrate_sigma(cfg.target_epsilon, cfg.delta, plan.sampling_rate, plan.steps)?,
    };
    let curve = if cfg.dp { Some(rdp_sgm(plan.sampling_rate, sigma, &default_orders())?) } else { None };
    let mut rng = RngStreams::new(cfg.seed);
    let spec = cfg.model_spec(classes);
    let mut model = build_resnet9::<f32, _>(&spec, &mut rng.init)?;

    fs::create_dir_all(&cfg.output)?;
    let dataset_name = cfg.dataset_name.clone().unwrap_or_else(|| train.name.clone());
    let trainer = Trainer { cfg, lr: cfg.learning_rate(), train, val, plan, sigma, curve };
    let mut sink = BufWriter::new(File::create(cfg.output.join(METRICS_FILE))?);
    let outcome = trainer.run(&mut model, &mut rng, &mut sink)?;
    sink.flush()?;

    let ckpt = cfg.output.join(CHECKPOINT_DIR);
    save_checkpoint(&ckpt, &spec, &model, Some(&cfg.dataset))?;
    let last = outcome.epochs.last();
    let final_epsilon = epsilon_after(trainer.curve.as_ref(), outcome.steps, cfg.delta)?;
    let manifest = RunManifest {
        config: cfg.clone(),
        dataset_name,
        classes,
        plan,
        sigma,
        learning_rate: trainer.lr,
        param_count: model.param_count(),
        steps_completed: outcome.steps,
        truncated: outcome.exhausted.is_some(),
        final_val_accuracy: last.and_then(|r| r.val_accuracy),
        final_brier: last.and_then(|r| r.brier),
        final_epsilon: final_epsilon.is_finite().then_some(final_epsilon),
        mean_grad_sparsity: if outcome.steps == 0 { 0.0 } else { outcome.sparsity_sum / outcome.steps as f64 },
        epochs: outcome.epochs,
        checkpoint: ckpt,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    write_manifest(&cfg.output, &manifest)?;
    match outcome.exhausted {
        Some(e) => Err(e),
        None => Ok(manifest),
    }
}

fn write_manifest(dir: &Path, m: &RunManifest) -> Result<()> {
    let tmp = dir.join("manifest.json.tmp");
    fs::write(&tmp, serde_json::to_string_pretty(m)?)?;
    fs::rename(tmp, dir.join(MANIFEST_FILE))?;
    Ok(())
}
