use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batches::{batch_indices, encode_pairs, shuffled_batches, Batch};
use super::optim::{adam_step, lr_at, OptimizerState};
use super::TrainConfig;
use crate::corpus::ParallelCorpus;
use crate::decoder::normalize_lines;
use crate::error::{Error, Result};
use crate::metrics::corpus_cer;
use crate::numerics::{Graph, Tensor};
use crate::parallel;
use crate::tokenizer::BpeModel;
use crate::transformer::{Checkpoint, Hyperparams, Mode, TokenizerRef, Transformer, TrainingMeta};

/// One JSON-lines record per epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: u64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_cer: Option<f64>,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "reason")]
pub enum StopReason {
    Patience,
    MaxEpochs,
    MaxUpdates,
    Diverged { step: u64, detail: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    NoImprovement,
    Stop,
}

/// Stops once `patience` consecutive evaluations fail to improve on the best.
#[derive(Clone, Debug)]
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    bad: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            bad: 0,
        }
    }

    pub fn observe(&mut self, val_loss: f64) -> Verdict {
        if val_loss < self.best {
            self.best = val_loss;
            self.bad = 0;
            Verdict::Improved
        } else {
            self.bad += 1;
            if self.bad >= self.patience {
                Verdict::Stop
            } else {
                Verdict::NoImprovement
            }
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochRecord>,
    pub stop: StopReason,
    pub best_epoch: Option<usize>,
}

fn validation_loss(model: &Transformer<f32>, batches: &[Batch]) -> Result<f64> {
    let losses = parallel::map(batches, |_, b| {
        model
            .eval_loss(&b.src, &b.tgt_in, &b.labels)
            .map(|l| (l, b.labels.tokens()))
    });
    let (mut sum, mut count) = (0.0, 0usize);
    for r in losses {
        let (l, n) = r?;
        sum += l * n as f64;
        count += n;
    }
    Ok(sum / count.max(1) as f64)
}

fn validation_cer(model: &Transformer<f32>, tokenizer: &BpeModel, val: &ParallelCorpus, cfg: &TrainConfig) -> Result<Option<f64>> {
    let n = cfg.val_cer_pairs.unwrap_or(val.len()).min(val.len());
    if n == 0 {
        return Ok(None);
    }
    let pairs = &val.pairs[..n];
    let sources: Vec<&str> = pairs.iter().map(|p| p.source.as_str()).collect();
    let refs: Vec<&str> = pairs.iter().map(|p| p.target.as_str()).collect();
    let hyps: Vec<String> = normalize_lines(model, tokenizer, &sources, &cfg.val_decode)?
        .into_iter()
        .map(|o| o.text)
        .collect();
    corpus_cer(&hyps, &refs).map(Some)
}

fn snapshot(model: &Transformer<f32>, opt: &OptimizerState, tok: &TokenizerRef, meta: TrainingMeta) -> Checkpoint {
    let mut c = Checkpoint::new(model, tok.clone(), meta);
    c.optimizer = Some(opt.clone());
    c
}

/// Train a model from scratch on `train`, selecting the epoch with the lowest
/// validation loss. When `sink` is given, each epoch record is written to it
/// as one JSON line.
pub fn train(
    hp: &Hyperparams,
    cfg: &TrainConfig,
    train: &ParallelCorpus,
    val: &ParallelCorpus,
    tokenizer: &BpeModel,
    tokenizer_ref: TokenizerRef,
    sink: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model = Transformer::<f32>::new(hp.clone().with_vocab(tokenizer.vocab_size()), cfg.seed)?;
    train_from(model, cfg, train, val, tokenizer, tokenizer_ref, sink)
}

/// Like [`train`], but continues from existing parameters.
pub fn train_from(
    mut model: Transformer<f32>,
    cfg: &TrainConfig,
    train: &ParallelCorpus,
    val: &ParallelCorpus,
    tokenizer: &BpeModel,
    tokenizer_ref: TokenizerRef,
    mut sink: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid("training and validation corpora must be non-empty"));
    }
    let hp = model.hyperparams().clone();
    if hp.vocab_size != tokenizer.vocab_size() {
        return Err(Error::invalid(format!(
            "model vocabulary has {} entries, tokenizer {}",
            hp.vocab_size,
            tokenizer.vocab_size()
        )));
    }
    let train_pairs = encode_pairs(train, tokenizer, hp.max_positions)?;
    let val_pairs = encode_pairs(val, tokenizer, hp.max_positions)?;
    let val_order: Vec<usize> = (0..val_pairs.len()).collect();
    let val_batches = batch_indices(&val_order, &val_pairs, cfg.batch_sentences)?;

    let mut opt = OptimizerState::new(model.params().tensors());
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(1);
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut log = Vec::new();
    let mut best: Option<(usize, Checkpoint)> = None;
    let meta = |epoch: usize, step: u64, best_val_loss: Option<f64>| TrainingMeta {
        step,
        epoch,
        best_val_loss,
        seed: cfg.seed,
        ..Default::default()
    };

    let mut stop = StopReason::MaxEpochs;
    'epochs: for epoch in 1..=cfg.max_epochs {
        let batches = shuffled_batches(&train_pairs, cfg.batch_sentences, cfg.seed, epoch)?;
        let (mut loss_sum, mut tokens) = (0.0, 0usize);
        let mut lr = 0.0;
        let mut capped = false;
        for b in &batches {
            let step = opt.step + 1;
            lr = lr_at(step, cfg)?;
            let mut g = Graph::new();
            let vars = model.bind(&mut g);
            let loss = model.loss(&mut g, &vars, &b.src, &b.tgt_in, &b.labels, Mode::Train, &mut dropout_rng)?;
            let value = g.value(loss).data()[0] as f64;
            let outcome = if value.is_finite() {
                let mut grads = g.backward(loss)?;
                let mut grads: Vec<Tensor<f32>> = vars
                    .iter()
                    .zip(model.params().tensors())
                    .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
                    .collect();
                adam_step(model.params_mut().tensors_mut(), &mut grads, &mut opt, lr, cfg).map(|_| ())
            } else {
                Err(Error::NonFinite(format!("training loss {value}")))
            };
            if let Err(e) = outcome {
                log::warn!("diverged at step {step}: {e}");
                stop = StopReason::Diverged {
                    step,
                    detail: e.to_string(),
                };
                break 'epochs;
            }
            let n = b.labels.tokens();
            loss_sum += value * n as f64;
            tokens += n;
            if cfg.max_updates.is_some_and(|m| opt.step >= m) {
                capped = true;
                break;
            }
        }

        let val_loss = validation_loss(&model, &val_batches)?;
        let val_cer = validation_cer(&model, tokenizer, val, cfg)?;
        let record = EpochRecord {
            epoch,
            step: opt.step,
            train_loss: loss_sum / tokens.max(1) as f64,
            val_loss,
            val_cer,
            lr,
        };
        log::info!(
            "epoch {epoch} step {} train {:.4} val {:.4} cer {}",
            record.step,
            record.train_loss,
            val_loss,
            val_cer.map_or("-".into(), |c| format!("{c:.2}"))
        );
        if let Some(w) = sink.as_deref_mut() {
            writeln!(w, "{}", serde_json::to_string(&record)?).map_err(|e| Error::io("training log", e))?;
        }
        log.push(record);
        if !val_loss.is_finite() {
            stop = StopReason::Diverged {
                step: opt.step,
                detail: format!("validation loss {val_loss}"),
            };
            break;
        }
        let verdict = stopper.observe(val_loss);
        if verdict == Verdict::Improved {
            best = Some((epoch, snapshot(&model, &opt, &tokenizer_ref, meta(epoch, opt.step, Some(val_loss)))));
        }
        if capped {
            stop = StopReason::MaxUpdates;
            break;
        }
        if verdict == Verdict::Stop {
            stop = StopReason::Patience;
            break;
        }
    }

    let (best_epoch, checkpoint) = match best {
        Some((e, c)) => (Some(e), c),
        None => (None, snapshot(&model, &opt, &tokenizer_ref, meta(0, opt.step, None))),
    };
    Ok(TrainOutcome {
        checkpoint,
        log,
        stop,
        best_epoch,
    })
}
