use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array1;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{adam_step, lazy_triplet_loss_grad, lr_at_epoch, mine_triplets, AdamState, TrainConfig, Triplet};
use crate::error::{Error, Result};
use crate::geometry::RigidTransform;
use crate::net::model::{backward, forward};
use crate::net::{NetParams, PreparedScene};
use crate::rng::seeded;

#[derive(Debug, Clone, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetParams,
    pub trace: Vec<LossRecord>,
    /// Mean step loss of every completed (possibly truncated) epoch.
    pub epoch_losses: Vec<f64>,
}

/// Mean lazy triplet loss of one batch and its gradient, one optimizer step.
fn step(
    params: &mut NetParams,
    scenes: &[PreparedScene],
    batch: &[Triplet],
    cfg: &TrainConfig,
    adam: &mut AdamState,
    lr: f64,
) -> Result<f64> {
    let mut ids: Vec<usize> = batch
        .iter()
        .flat_map(|t| std::iter::once(t.query).chain(t.positives.iter().copied()).chain(t.negatives.iter().copied()))
        .collect();
    ids.sort_unstable();
    ids.dedup();
    let slot = |i: usize| ids.binary_search(&i).expect("scene in batch");
    let p: &NetParams = params;
    let forwards: Vec<_> = ids
        .par_iter()
        .map(|&i| forward(p, &scenes[i]))
        .collect::<Result<Vec<_>>>()?;
    let desc: Vec<&[f64]> = forwards.iter().map(|(d, _)| d.as_slice().unwrap()).collect();

    let mut upstream = vec![Array1::<f64>::zeros(desc[0].len()); ids.len()];
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for t in batch {
        let pos: Vec<&[f64]> = t.positives.iter().map(|&i| desc[slot(i)]).collect();
        let neg: Vec<&[f64]> = t.negatives.iter().map(|&i| desc[slot(i)]).collect();
        let g = lazy_triplet_loss_grad(desc[slot(t.query)], &pos, &neg, cfg.beta, cfg.hard_mining)?;
        loss += scale * g.loss;
        if g.loss > 0.0 {
            upstream[slot(t.query)].scaled_add(scale, &Array1::from(g.query));
            if let Some((k, v)) = g.positive {
                upstream[slot(t.positives[k])].scaled_add(scale, &Array1::from(v));
            }
            if let Some((k, v)) = g.negative {
                upstream[slot(t.negatives[k])].scaled_add(scale, &Array1::from(v));
            }
        }
    }
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite training loss {loss}")));
    }
    let active: Vec<usize> = (0..ids.len()).filter(|&k| upstream[k].iter().any(|v| *v != 0.0)).collect();
    let grads: Vec<NetParams> = active
        .par_iter()
        .map(|&k| backward(p, &scenes[ids[k]], &forwards[k].1, &upstream[k]).0)
        .collect();
    let mut total = NetParams::zeros(&params.config);
    // fixed summation order keeps the step independent of scheduling
    for g in &grads {
        total.add_scaled(g, 1.0);
    }
    adam_step(params, &total, adam, lr, &cfg.adam)?;
    Ok(loss)
}

/// Trains from `init` on prepared scenes with ground-truth poses. The whole
/// run is a pure function of its inputs and `cfg.seed`.
pub fn train(scenes: &[PreparedScene], poses: &[RigidTransform], init: NetParams, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if scenes.len() != poses.len() {
        return Err(Error::Input(format!("{} scenes but {} poses", scenes.len(), poses.len())));
    }
    let mut params = init;
    let mut adam = AdamState::default();
    let mut trace = Vec::new();
    let mut epoch_losses = Vec::new();
    let mut steps = 0;
    let budget = cfg.max_steps.unwrap_or(usize::MAX);
    for epoch in 0..cfg.epochs {
        if steps >= budget {
            break;
        }
        let epoch_seed = cfg.seed.wrapping_add(epoch as u64);
        let mut triplets = mine_triplets(poses, cfg, epoch_seed);
        if triplets.is_empty() {
            return Err(Error::Input("no query has enough positives and negatives".into()));
        }
        triplets.shuffle(&mut seeded(epoch_seed, 0x5b0f));
        let lr = lr_at_epoch(epoch, cfg);
        let mut sum = 0.0;
        let mut count = 0;
        for (k, batch) in triplets.chunks(cfg.batch_triplets).enumerate() {
            if steps >= budget {
                break;
            }
            let loss = step(&mut params, scenes, batch, cfg, &mut adam, lr)?;
            trace.push(LossRecord { epoch, step: k, loss, lr });
            log::debug!("epoch {epoch} step {k}: loss {loss:.6}");
            sum += loss;
            count += 1;
            steps += 1;
        }
        let mean = sum / count as f64;
        log::info!("epoch {epoch}: mean loss {mean:.6} over {count} steps (lr {lr:e})");
        epoch_losses.push(mean);
    }
    Ok(TrainOutcome {
        params,
        trace,
        epoch_losses,
    })
}

pub fn loss_csv(trace: &[LossRecord]) -> String {
    let mut s = String::from("epoch,step,loss,lr\n");
    for r in trace {
        let _ = writeln!(s, "{},{},{:.9},{:e}", r.epoch, r.step, r.loss, r.lr);
    }
    s
}

pub fn write_loss_csv(trace: &[LossRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, loss_csv(trace)).map_err(|e| Error::io(path, e))
}
