use std::fmt::Write as _;

use rand::seq::SliceRandom;

use super::model::{infer, loss_and_gradients, DetectorParams, PreparedScene};
use super::rng::{sub_rng, Stream};
use super::DetectorConfig;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalConfig, Evaluation, GroundTruthBox};

/// State handed to the per-step observer after the update and projection.
pub struct TrainStep<'a> {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub params: &'a DetectorParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub val_ap: f64,
}

impl EpochLog {
    pub fn csv(rows: &[EpochLog]) -> String {
        let mut s = String::from("epoch,lr,train_loss,val_ap\n");
        for r in rows {
            let _ = writeln!(s, "{},{},{:.9},{:.9}", r.epoch, r.learning_rate, r.train_loss, r.val_ap);
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Final parameters, or the last finite ones if training diverged.
    pub params: DetectorParams,
    pub log: Vec<EpochLog>,
    /// `(epoch, step)` of the first non-finite loss, if any.
    pub diverged: Option<(usize, usize)>,
}

impl TrainOutcome {
    pub fn final_ap(&self) -> Option<f64> {
        self.log.last().map(|l| l.val_ap)
    }

    pub fn divergence_error(&self) -> Option<Error> {
        self.diverged.map(|(epoch, step)| Error::Diverged { epoch, step })
    }
}

/// Runs inference on every scene and scores it against the scene's hands.
pub fn evaluate_scenes(params: &DetectorParams, scenes: &[PreparedScene], cfg: &DetectorConfig) -> Result<Evaluation<f64>> {
    let mut dets = Vec::new();
    let mut gts = Vec::new();
    for s in scenes {
        for p in infer(params, &s.input, cfg)? {
            let id = dets.len();
            dets.push(p.into_result(id, &s.id));
        }
        for a in s.scene.annotations() {
            gts.push(GroundTruthBox::from_quad(a.image_id.clone(), &a.quad, a.wrist_side)?);
        }
    }
    evaluate(&dets, &gts, &EvalConfig::default())
}

/// Attention tensors stepped at `prior_lr_scale` times the base rate.
const PRIOR_TENSORS: [&str; 3] = ["attn.alpha", "attn.mu", "attn.sigma"];

fn global_norm(g: &DetectorParams) -> f64 {
    g.named()
        .iter()
        .flat_map(|(_, t)| t.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// SGD with momentum; projects the attention constraints after every step
/// and evaluates validation AP after every epoch.
pub fn train(
    cfg: &DetectorConfig,
    train_set: &[PreparedScene],
    val_set: &[PreparedScene],
    mut on_step: impl FnMut(&TrainStep),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Usage("training and validation sets must be non-empty".into()));
    }
    let mut params = DetectorParams::init(cfg, &mut sub_rng(cfg.seed, Stream::Init, 0));
    params.attention.project_in_place();
    let mut velocity = params.zeros_like();
    let mut log = Vec::new();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut sub_rng(cfg.seed, Stream::Shuffle, epoch as u64));
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&PreparedScene> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (loss, mut grads) = loss_and_gradients(&params, &batch, cfg)?;
            let norm = global_norm(&grads);
            if !loss.is_finite() || !norm.is_finite() {
                return Ok(TrainOutcome {
                    params,
                    log,
                    diverged: Some((epoch, step)),
                });
            }
            if cfg.grad_clip > 0.0 && norm > cfg.grad_clip {
                let scale = cfg.grad_clip / norm;
                for t in grads.tensors_mut() {
                    t.data_mut().iter_mut().for_each(|v| *v *= scale);
                }
            }
            let mut next = params.clone();
            for ((p, v), (name, g)) in next.tensors_mut().into_iter().zip(velocity.tensors_mut()).zip(grads.named()) {
                let lr = if PRIOR_TENSORS.contains(&name.as_str()) { lr * cfg.prior_lr_scale } else { lr };
                for ((pi, vi), gi) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                    *vi = cfg.momentum * *vi + gi;
                    *pi -= lr * *vi;
                }
            }
            next.attention.project_in_place();
            if !next.is_finite() {
                return Ok(TrainOutcome {
                    params,
                    log,
                    diverged: Some((epoch, step)),
                });
            }
            params = next;
            on_step(&TrainStep {
                epoch,
                step,
                loss,
                params: &params,
            });
            loss_sum += loss;
            batches += 1;
            step += 1;
        }
        let val = evaluate_scenes(&params, val_set, cfg)?;
        log.push(EpochLog {
            epoch,
            learning_rate: lr,
            train_loss: loss_sum / batches as f64,
            val_ap: val.curve.ap,
        });
    }
    Ok(TrainOutcome {
        params,
        log,
        diverged: None,
    })
}
