use rayon::prelude::*;
use serde::Serialize;

use super::config::{OptimConfig, SubsetConfig};
use super::eval::{evaluate, EvalReport, Variant};
use super::model::{rng_for, Model, Stream};
use super::optim::AdamW;
use crate::data::{Document, EncodedDocument};
use crate::error::{Error, Result};
use crate::heads::HeadGold;
use crate::numerics::{Gradients, Graph};
use crate::objectives::{build_masking_plan, MaskSource};
use rand::seq::SliceRandom;

/// Per-step record of a training run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainSummary {
    pub steps: Vec<StepLog>,
    /// Held-out evaluations at epoch ends, `(step, report)`.
    pub evals: Vec<(usize, EvalReport)>,
    /// Fraction of block tokens masked by each source during pre-training.
    pub area_mask_fraction: Option<f64>,
    pub token_mask_fraction: Option<f64>,
}

impl TrainSummary {
    pub fn final_loss(&self) -> Option<f64> {
        self.steps.last().map(|s| s.loss)
    }
}

/// Document indices of step `step`: consecutive slices of per-epoch
/// shuffles of `0..n`.
fn batch_indices(seed: u64, n: usize, batch: usize, step: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(batch);
    let mut cursor = step * batch;
    let mut cached: Option<(usize, Vec<usize>)> = None;
    while out.len() < batch.min(n.max(1)) && n > 0 {
        let epoch = cursor / n;
        let perm = match &cached {
            Some((e, p)) if *e == epoch => p,
            _ => {
                let mut p: Vec<usize> = (0..n).collect();
                p.shuffle(&mut rng_for(seed, Stream::Shuffle, epoch as u64));
                cached = Some((epoch, p));
                &cached.as_ref().expect("just set").1
            }
        };
        out.push(perm[cursor % n]);
        cursor += 1;
    }
    out
}

/// Sum per-document results in batch order so the result does not depend
/// on thread scheduling.
fn reduce(results: Vec<Result<(f64, Gradients<f32>)>>, batch: usize) -> Result<(f64, Gradients<f32>)> {
    let mut loss = 0.0;
    let mut grads = Gradients::new();
    for r in results {
        let (l, g) = r?;
        loss += l;
        grads.accumulate(&g)?;
    }
    let scale = 1.0 / batch as f64;
    grads.scale(scale as f32);
    Ok((loss * scale, grads))
}

fn apply_step(model: &mut Model, opt: &mut AdamW, step: usize, loss: f64, grads: &Gradients<f32>) -> Result<StepLog> {
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("loss became {loss} at step {step}")));
    }
    if !grads.is_finite() {
        return Err(Error::Numeric(format!("non-finite gradient at step {step}")));
    }
    let lr = opt.current_lr();
    let mut next = model.params.clone();
    let grad_norm = opt.update(&mut next, grads)?;
    if !next.is_finite() {
        return Err(Error::Numeric(format!("parameters became non-finite at step {step}")));
    }
    model.params = next;
    model.step += 1;
    Ok(StepLog {
        step,
        loss,
        lr,
        grad_norm,
    })
}

fn progress(kind: &str, log: &StepLog, total: usize) {
    if log.step % 100 == 0 || log.step + 1 == total {
        log::info!("{kind} step {}/{} loss {:.4} lr {:.2e}", log.step + 1, total, log.loss, log.lr);
    }
}

/// Masked-LM pre-training. On a numeric failure `model` keeps the last
/// finite parameters and the error is returned.
pub fn pretrain(model: &mut Model, docs: &[Document], steps: Option<usize>) -> Result<TrainSummary> {
    if docs.is_empty() {
        return Err(Error::Data("no pre-training documents".into()));
    }
    let cfg = model.config.clone();
    let optim = OptimConfig {
        steps: steps.unwrap_or(cfg.pretrain.steps),
        epochs: if steps.is_some() { 0 } else { cfg.pretrain.epochs },
        ..cfg.pretrain.clone()
    };
    optim.validate()?;
    let encoded: Vec<EncodedDocument> = docs
        .par_iter()
        .map(|d| model.prepare(d))
        .collect::<Result<_>>()?;
    let total = optim.total_steps(docs.len());
    let b = optim.batch_size;
    let mut opt = AdamW::new(optim, total);
    let vocab_size = model.vocab.len();
    let mut summary = TrainSummary::default();
    let (mut real, mut area, mut token) = (0usize, 0usize, 0usize);
    for step in 0..total {
        let idx = batch_indices(cfg.seed, docs.len(), b, step);
        let m: &Model = model;
        let results: Vec<Result<(f64, Gradients<f32>, [usize; 3])>> = idx
            .par_iter()
            .enumerate()
            .map(|(slot, &i)| {
                let stream = (step * b + slot) as u64;
                let enc = &encoded[i];
                let plan = build_masking_plan(enc, vocab_size, &mut rng_for(cfg.seed, Stream::Mask, stream), &cfg.masking)?;
                let counts = [
                    enc.token_blocks.iter().filter(|t| t.is_some()).count(),
                    plan.count(MaskSource::Amlm),
                    plan.count(MaskSource::Tmlm),
                ];
                let mut g = Graph::new();
                let mut drop = rng_for(cfg.seed, Stream::Dropout, stream);
                match m.mlm_loss(&mut g, enc, &plan, Some(&mut drop))? {
                    Some(loss) => {
                        let value = g.value(loss).item()? as f64;
                        Ok((value, g.backward(loss)?, counts))
                    }
                    None => Ok((0.0, Gradients::new(), counts)),
                }
            })
            .collect();
        let mut plain = Vec::with_capacity(results.len());
        for r in results {
            plain.push(r.map(|(l, g, c)| {
                real += c[0];
                area += c[1];
                token += c[2];
                (l, g)
            }));
        }
        let (loss, grads) = reduce(plain, idx.len())?;
        let log = apply_step(model, &mut opt, step, loss, &grads)?;
        progress("pretrain", &log, total);
        summary.steps.push(log);
    }
    if real > 0 {
        summary.area_mask_fraction = Some(area as f64 / real as f64);
        summary.token_mask_fraction = Some(token as f64 / real as f64);
    }
    Ok(summary)
}

/// Indices of the training subset: a seeded shuffle truncated to the
/// requested size, so smaller subsets are prefixes of larger ones.
pub fn select_subset(n: usize, subset: &SubsetConfig, seed: u64) -> Result<Vec<usize>> {
    subset.validate()?;
    let k = match (subset.train_count, subset.train_fraction) {
        (Some(c), _) => c,
        (None, Some(f)) => ((f * n as f64).ceil() as usize).max(1),
        (None, None) => n,
    };
    if k > n {
        return Err(Error::Config(format!("train_count {k} exceeds the {n} available documents")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_for(seed, Stream::Subset, 0));
    idx.truncate(k);
    Ok(idx)
}

/// Supervised fine-tuning of `model.task` on `train`. When `held_out` is
/// given and `eval.every_epoch` is set, the model is scored after every
/// epoch.
pub fn finetune(model: &mut Model, train: &[Document], held_out: Option<&[Document]>) -> Result<TrainSummary> {
    if train.is_empty() {
        return Err(Error::Data("no fine-tuning documents".into()));
    }
    let cfg = model.config.clone();
    let prepared: Vec<(EncodedDocument, HeadGold)> = train
        .par_iter()
        .map(|d| {
            let enc = model.prepare(d)?;
            let gold = model.gold(&enc, d)?;
            Ok((enc, gold))
        })
        .collect::<Result<_>>()?;
    let total = cfg.finetune.total_steps(train.len());
    let b = cfg.finetune.batch_size;
    let per_epoch = train.len().div_ceil(b).max(1);
    let mut opt = AdamW::new(cfg.finetune.clone(), total);
    let mut summary = TrainSummary::default();
    for step in 0..total {
        let idx = batch_indices(cfg.seed, train.len(), b, step);
        let m: &Model = model;
        let results: Vec<Result<(f64, Gradients<f32>)>> = idx
            .par_iter()
            .enumerate()
            .map(|(slot, &i)| {
                let (enc, gold) = &prepared[i];
                let mut g = Graph::new();
                let mut drop = rng_for(cfg.seed, Stream::Dropout, (step * b + slot) as u64);
                let loss = m.task_loss(&mut g, enc, gold, Some(&mut drop))?;
                Ok((g.value(loss).item()? as f64, g.backward(loss)?))
            })
            .collect();
        let (loss, grads) = reduce(results, idx.len())?;
        let log = apply_step(model, &mut opt, step, loss, &grads)?;
        progress(model.task.name(), &log, total);
        summary.steps.push(log);
        if let Some(test) = held_out {
            if cfg.eval.every_epoch && ((step + 1) % per_epoch == 0 || step + 1 == total) {
                let r = evaluate(model, test, Variant::Identity)?;
                log::info!("epoch {} held-out f1 {:.4}", (step + 1).div_ceil(per_epoch), r.micro.f1);
                summary.evals.push((step + 1, r));
            }
        }
    }
    Ok(summary)
}
