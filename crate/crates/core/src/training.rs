//! Plain SGD with global-norm clipping, learning-rate halving and per-epoch
//! checkpoints.

use std::path::PathBuf;
use std::time::Instant;

use crate::corpus::{make_batches, sequential_batches, ExamplePair, Vocab};
use crate::error::{Error, Result};
use crate::model::{dropout_rng, Checkpoint, Dropout, Model};
use crate::numerics::{ParamStore, Tape};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LrSchedule {
    /// Decay when dev perplexity improves by less than `min_improvement` (relative).
    Plateau { min_improvement: f64 },
    /// Decay after every epoch from `start_epoch` on (1-based).
    FixedEpoch { start_epoch: usize },
    Constant,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub lr_decay: f64,
    pub schedule: LrSchedule,
    pub max_norm: f64,
    pub batch_size: usize,
    /// Drop probability applied to embeddings and the attentional output.
    pub dropout: f64,
    pub epochs: usize,
    pub seed: u64,
    pub checkpoint_dir: Option<PathBuf>,
    /// Evaluate dev perplexity every this many epochs.
    pub eval_every: usize,
    /// Stop after this many evaluations without improvement; 0 disables.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1.0,
            lr_decay: 0.5,
            schedule: LrSchedule::Plateau { min_improvement: 0.001 },
            max_norm: 1.0,
            batch_size: 10,
            dropout: 0.8,
            epochs: 30,
            seed: 1,
            checkpoint_dir: None,
            eval_every: 1,
            patience: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0) {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if self.batch_size < 1 {
            return fail("batch_size must be at least 1".into());
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return fail(format!("lr_decay must be in (0, 1], got {}", self.lr_decay));
        }
        if !(self.max_norm > 0.0) {
            return fail(format!("max_norm must be positive, got {}", self.max_norm));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepStats {
    pub epoch: usize,
    pub step: usize,
    pub nll: f64,
    pub tokens: usize,
    pub pre_clip_norm: f64,
    pub post_clip_norm: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean per-token training NLL with dropout active.
    pub train_nll: f64,
    pub dev_ppl: Option<f64>,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub checkpoints: Vec<PathBuf>,
    pub steps: usize,
}

impl TrainReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("epoch\ttrain_nll\tdev_ppl\tlr\tseconds\n");
        for e in &self.epochs {
            let ppl = e.dev_ppl.map_or_else(|| "NA".to_string(), |p| format!("{p:.6}"));
            out.push_str(&format!(
                "{}\t{:.6}\t{}\t{}\t{:.3}\n",
                e.epoch, e.train_nll, ppl, e.lr, e.seconds
            ));
        }
        out
    }

    /// Everything except wall-clock time, bit-exact.
    pub fn fingerprint(&self) -> Vec<(usize, u64, Option<u64>, u64)> {
        self.epochs
            .iter()
            .map(|e| (e.epoch, e.train_nll.to_bits(), e.dev_ppl.map(f64::to_bits), e.lr.to_bits()))
            .collect()
    }
}

pub struct TrainData<'a> {
    pub train: &'a [ExamplePair],
    pub dev: &'a [ExamplePair],
    /// Needed only when checkpoints are written.
    pub vocabs: Option<(&'a Vocab, &'a Vocab)>,
}

/// `p ← p − lr·g` for every parameter.
pub fn sgd_step<S: Scalar>(params: &mut ParamStore<S>, lr: f64) -> Result<()> {
    let lr = S::of(lr);
    for p in params.iter_mut() {
        for (v, &g) in p.value.data_mut().iter_mut().zip(p.grad.data()) {
            *v -= lr * g;
        }
        if !p.value.is_finite() {
            return Err(Error::NonFinite {
                op: format!("sgd_step on parameter {}", p.name),
            });
        }
    }
    Ok(())
}

/// `exp(Σ NLL / Σ target tokens)` with dropout disabled.
pub fn perplexity<S: Scalar>(model: &Model<S>, pairs: &[ExamplePair], batch_size: usize) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Data("perplexity of an empty dataset".into()));
    }
    let mut nll = 0.0;
    let mut tokens = 0;
    for batch in sequential_batches(pairs, batch_size) {
        let (loss, n) = model.eval_loss(&batch)?;
        nll += loss.as_f64();
        tokens += n;
    }
    if tokens == 0 {
        return Err(Error::Data("dataset has no target tokens".into()));
    }
    Ok((nll / tokens as f64).exp())
}

/// Seed for the batch order of a given epoch.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Runs the training loop. `on_step` sees every update after clipping.
pub fn train<S: Scalar>(
    config: &TrainConfig,
    model: &mut Model<S>,
    data: &TrainData<'_>,
    on_step: &mut dyn FnMut(&StepStats),
) -> Result<TrainReport> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let mut report = TrainReport::default();
    let mut lr = config.lr;
    let mut best_ppl = f64::INFINITY;
    let mut stale = 0;
    let mut last_good: Option<PathBuf> = None;

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let batches = make_batches(data.train, config.batch_size, epoch_seed(config.seed, epoch));
        let mut rng = dropout_rng(config.seed, epoch as u64);
        let mut epoch_nll = 0.0;
        let mut epoch_tokens = 0;

        for batch in &batches {
            let diverged = |e: Error| match e {
                Error::NonFinite { op } => Error::NonFinite {
                    op: format!(
                        "{op} (epoch {epoch}, step {}); last good checkpoint: {}",
                        report.steps + 1,
                        last_good
                            .as_ref()
                            .map_or_else(|| "none".to_string(), |p| p.display().to_string())
                    ),
                },
                other => other,
            };
            model.params.zero_grad();
            let tape = Tape::new();
            let mut dropout = Dropout::new(config.dropout, Some(&mut rng));
            let (loss, tokens) = model.loss(&tape, batch, &mut dropout).map_err(diverged)?;
            let nll = tape.scalar(loss).as_f64();
            let normalized = tape.scale(loss, S::of(1.0 / batch.size() as f64)).map_err(diverged)?;
            tape.backward_into(normalized, &mut model.params)?;
            let pre = model.params.clip_grad_norm(S::of(config.max_norm)).map_err(diverged)?;
            let post = model.params.grad_norm();
            sgd_step(&mut model.params, lr).map_err(diverged)?;

            report.steps += 1;
            epoch_nll += nll;
            epoch_tokens += tokens;
            on_step(&StepStats {
                epoch,
                step: report.steps,
                nll,
                tokens,
                pre_clip_norm: pre.as_f64(),
                post_clip_norm: post.as_f64(),
                lr,
            });
        }

        let evaluate = !data.dev.is_empty() && config.eval_every > 0 && epoch % config.eval_every == 0;
        let dev_ppl = if evaluate {
            Some(perplexity(model, data.dev, config.batch_size)?)
        } else {
            None
        };
        report.epochs.push(EpochStats {
            epoch,
            train_nll: epoch_nll / epoch_tokens.max(1) as f64,
            dev_ppl,
            lr,
            seconds: started.elapsed().as_secs_f64(),
        });
        log::info!(
            "epoch {epoch}: train nll {:.4}, dev ppl {}, lr {lr}",
            epoch_nll / epoch_tokens.max(1) as f64,
            dev_ppl.map_or_else(|| "n/a".to_string(), |p| format!("{p:.4}"))
        );

        if let (Some(dir), Some((src, tgt))) = (&config.checkpoint_dir, data.vocabs) {
            let path = dir.join(format!("epoch_{epoch:03}.rnmt"));
            let mut ckpt = Checkpoint::new(model.clone(), src.clone(), tgt.clone());
            ckpt.meta.insert("epoch".into(), epoch.to_string());
            ckpt.meta.insert("lr".into(), lr.to_string());
            ckpt.save(&path)?;
            report.checkpoints.push(path.clone());
            last_good = Some(path);
        }

        let mut improved = false;
        if let Some(ppl) = dev_ppl {
            improved = ppl < best_ppl * (1.0 - plateau_threshold(config.schedule));
            if ppl < best_ppl {
                best_ppl = ppl;
            }
            stale = if improved { 0 } else { stale + 1 };
        }
        lr = match config.schedule {
            LrSchedule::Plateau { .. } if dev_ppl.is_some() && !improved => lr * config.lr_decay,
            LrSchedule::FixedEpoch { start_epoch } if epoch >= start_epoch => lr * config.lr_decay,
            _ => lr,
        };
        if config.patience > 0 && stale >= config.patience {
            log::info!("early stop after epoch {epoch}: no dev improvement in {stale} evaluations");
            break;
        }
    }
    Ok(report)
}

fn plateau_threshold(schedule: LrSchedule) -> f64 {
    match schedule {
        LrSchedule::Plateau { min_improvement } => min_improvement,
        _ => 0.0,
    }
}
