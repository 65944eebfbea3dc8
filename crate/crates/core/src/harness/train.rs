use std::io::Write;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::Example;
use super::optim::{lr_schedule, AdamW};
use crate::dla::sample_train_latents;
use crate::error::{Error, Result};
use crate::model::{DlaMode, Model, ModelConfig};
use crate::nn::{ParamStore, Session};
use crate::tensor::Var;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub warmup: u64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub max_steps: Option<u64>,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub label_smoothing: f64,
    /// Latents sampled per example (`k`); the model's `n` means no
    /// subsampling.
    pub k: usize,
    pub seed: u64,
    /// Checkpoints retained, best validation accuracy first.
    pub keep_best: usize,
    /// Stop as soon as validation token accuracy reaches this value.
    pub target_accuracy: Option<f64>,
    /// Wall-clock cap, checked between epochs.
    pub time_limit: Option<Duration>,
    /// Latent selection used for validation.
    pub valid_mode: DlaMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-3,
            warmup: 500,
            batch_size: 16,
            max_epochs: 100,
            max_steps: None,
            patience: 15,
            label_smoothing: 0.1,
            k: 16,
            seed: 1,
            keep_best: 10,
            target_accuracy: None,
            time_limit: None,
            valid_mode: DlaMode::Full,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n_latents: Option<usize>) -> Result<()> {
        let bad = |key: &str, message: String| Err(Error::Config { key: key.into(), message });
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", "must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive".into());
        }
        if self.patience == 0 {
            return bad("patience", "must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad("label_smoothing", "must lie in [0, 1)".into());
        }
        if self.keep_best == 0 {
            return bad("keep_best", "must be at least 1".into());
        }
        if let Some(n) = n_latents {
            if self.k == 0 || self.k > n {
                return bad("k", format!("must lie in [1, n = {n}]"));
            }
        }
        Ok(())
    }
}

/// One line of the metric log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub train_loss: f64,
    pub valid_token_acc: f64,
    pub valid_exact_match: f64,
}

impl EpochMetrics {
    pub const HEADER: &'static str = "epoch\tstep\tlr\ttrain_loss\tvalid_token_acc\tvalid_exact_match";

    pub fn tsv(&self) -> String {
        format!(
            "{}\t{}\t{:.6e}\t{:.6}\t{:.6}\t{:.6}",
            self.epoch, self.step, self.lr, self.train_loss, self.valid_token_acc, self.valid_exact_match
        )
    }
}

#[derive(Clone, Debug)]
pub struct Snapshot {
    pub epoch: usize,
    pub step: u64,
    pub valid_token_acc: f64,
    pub params: ParamStore<f32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    MaxEpochs,
    MaxSteps,
    Patience,
    TargetReached,
    TimeLimit,
}

pub struct TrainOutcome {
    /// Parameters after the last step.
    pub model: Model<f32>,
    pub log: Vec<EpochMetrics>,
    /// Best snapshots by validation accuracy, best first.
    pub best: Vec<Snapshot>,
    pub steps: u64,
    pub stop: StopReason,
    pub elapsed: Duration,
}

const SHUFFLE_STREAM: u64 = 1;
const LATENT_STREAM: u64 = 2;
const DROPOUT_STREAM: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Trains a fresh model (initialized from `cfg.seed`) on `train`,
/// validating on `valid` after every epoch. Metric lines go to `log` when
/// given.
pub fn train(
    model_cfg: ModelConfig,
    cfg: &TrainConfig,
    train: &[Example],
    valid: &[Example],
    mut log: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    let mut model = Model::<f32>::new(model_cfg, cfg.seed)?;
    let n = model.n_latents();
    cfg.validate((n > 0).then_some(n))?;
    if train.is_empty() || valid.is_empty() {
        return Err(Error::contract("training and validation sets must be nonempty"));
    }
    let started = Instant::now();
    let mut opt = AdamW::new(&model.params);
    let mut shuffle_rng = stream(cfg.seed, SHUFFLE_STREAM);
    let mut latent_rng = stream(cfg.seed, LATENT_STREAM);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best: Vec<Snapshot> = Vec::new();
    let mut best_acc = f64::NEG_INFINITY;
    let mut since_best = 0;
    if let Some(w) = log.as_deref_mut() {
        writeln!(w, "{}", EpochMetrics::HEADER)?;
    }
    let mut stop = StopReason::MaxEpochs;
    'epochs: for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        let mut lr = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| opt.steps() >= m) {
                stop = StopReason::MaxSteps;
                break;
            }
            let step = opt.steps() + 1;
            let mut dropout = stream(cfg.seed, DROPOUT_STREAM);
            dropout.set_word_pos(u128::from(step) << 40);
            let mut s = Session::new(&model.params, Some(dropout));
            let mut total: Option<Var> = None;
            let scale = 1.0 / batch.len() as f32;
            for &i in batch {
                let ex = &train[i];
                let ids = if n > 0 { sample_train_latents(n, cfg.k, &mut latent_rng)? } else { Vec::new() };
                let l = model.loss(&mut s, &ex.spectrogram, &ex.target, &ids, cfg.label_smoothing)?;
                let l = s.graph.scale(l, scale);
                total = Some(match total {
                    Some(t) => s.graph.add(t, l)?,
                    None => l,
                });
            }
            let total = total.expect("nonempty batch");
            let value = f64::from(s.graph.value(total).item());
            if !value.is_finite() {
                return Err(Error::Divergence { step, loss: value });
            }
            let mut grads = s.graph.backward(total)?;
            let per_param: Vec<_> = model.params.ids().map(|id| grads.take(s.p(id))).collect();
            drop(s);
            lr = lr_schedule(step, cfg.lr, cfg.warmup);
            opt.step(&mut model.params, &per_param, lr);
            loss_sum += value;
            batches += 1;
        }
        let (acc, exact) = teacher_forced_accuracy(&model, valid, cfg.valid_mode, cfg.seed)?;
        let metrics = EpochMetrics {
            epoch,
            step: opt.steps(),
            lr,
            train_loss: if batches > 0 { loss_sum / batches as f64 } else { f64::NAN },
            valid_token_acc: acc,
            valid_exact_match: exact,
        };
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{}", metrics.tsv())?;
        }
        history.push(metrics);
        best.push(Snapshot {
            epoch,
            step: opt.steps(),
            valid_token_acc: acc,
            params: model.params.clone(),
        });
        best.sort_by(|a, b| b.valid_token_acc.total_cmp(&a.valid_token_acc).then(a.epoch.cmp(&b.epoch)));
        best.truncate(cfg.keep_best);
        if acc > best_acc {
            best_acc = acc;
            since_best = 0;
        } else {
            since_best += 1;
        }
        if stop == StopReason::MaxSteps {
            break;
        }
        if cfg.target_accuracy.is_some_and(|t| acc >= t) {
            stop = StopReason::TargetReached;
            break 'epochs;
        }
        if since_best >= cfg.patience {
            stop = StopReason::Patience;
            break;
        }
        if cfg.time_limit.is_some_and(|t| started.elapsed() >= t) {
            stop = StopReason::TimeLimit;
            break;
        }
    }
    Ok(TrainOutcome {
        steps: opt.steps(),
        model,
        log: history,
        best,
        stop,
        elapsed: started.elapsed(),
    })
}

/// Teacher-forced next-token accuracy and the share of sequences predicted
/// entirely correctly.
pub fn teacher_forced_accuracy(model: &Model<f32>, examples: &[Example], mode: DlaMode, seed: u64) -> Result<(f64, f64)> {
    let mut rng = stream(seed, super::eval::RANDOM_SELECTION_STREAM);
    let (mut correct, mut total, mut exact) = (0usize, 0usize, 0usize);
    for ex in examples {
        let mut s = Session::new(&model.params, None);
        let (z, _) = model.encode(&mut s, &ex.spectrogram, mode, &mut rng)?;
        let inputs = &ex.target[..ex.target.len() - 1];
        let logits = model.decoder.logits(&mut s, z, inputs)?;
        let lv = s.graph.value(logits);
        let mut all = true;
        for (r, &gold) in ex.target[1..].iter().enumerate() {
            let row = lv.row(r);
            let pred = (0..row.len()).fold(0, |b, i| if row[i] > row[b] { i } else { b });
            if pred == gold {
                correct += 1;
            } else {
                all = false;
            }
            total += 1;
        }
        exact += usize::from(all);
    }
    Ok((correct as f64 / total as f64, exact as f64 / examples.len() as f64))
}
