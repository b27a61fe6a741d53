use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{ensure_frozen, eval_steps, FrozenFeatures, ProbeReport};
use crate::data::Trajectory;
use crate::error::{Error, Result};
use crate::nn::{l1_loss, Adam, AdamConfig, DropoutMasks, Encoder, ProbeConfig, ProbeHead};
use crate::seed;
use crate::sim::STATE_DIM;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StateProbeConfig {
    pub probe: ProbeConfig,
    pub batch: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub eval_every: u64,
    pub seed: u64,
}

impl Default for StateProbeConfig {
    fn default() -> Self {
        Self {
            probe: ProbeConfig::default(),
            batch: 64,
            epochs: 1,
            adam: AdamConfig::default(),
            eval_every: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StateProbeResult {
    pub head: ProbeHead<f32>,
    pub train_losses: Vec<f64>,
    /// `(step, validation L1)`; the last step is always evaluated.
    pub val_evals: Vec<(u64, f64)>,
    /// Validation loss of the finished probe.
    pub final_val: f64,
    /// Validation loss of predicting the per-dimension training median.
    pub baseline_val: f64,
    pub report: ProbeReport,
    pub encoder_digest: String,
}

const EVAL_CHUNK: usize = 256;

fn all_frames(trajs: &[&Trajectory]) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    for (k, t) in trajs.iter().enumerate() {
        if t.states.len() != t.len() {
            return Err(Error::Input(format!("trajectory {} lacks proprioceptive states", t.id)));
        }
        out.extend((0..t.len()).map(|i| (k, i)));
    }
    if out.is_empty() {
        return Err(Error::Input("no frames to probe".into()));
    }
    Ok(out)
}

fn state_targets(trajs: &[&Trajectory], frames: &[(usize, usize)]) -> Array2<f32> {
    Array2::from_shape_fn((frames.len(), STATE_DIM), |(i, d)| {
        let (k, t) = frames[i];
        trajs[k].states[t][d]
    })
}

/// L1 of predicting the per-dimension median of the training targets.
pub fn constant_median_baseline(train: &[&Trajectory], val: &[&Trajectory]) -> Result<f64> {
    let (tf, vf) = (all_frames(train)?, all_frames(val)?);
    let tt = state_targets(train, &tf);
    let medians: Vec<f32> = (0..STATE_DIM)
        .map(|d| {
            let mut col: Vec<f32> = tt.column(d).to_vec();
            col.sort_by(f32::total_cmp);
            let m = col.len() / 2;
            if col.len() % 2 == 1 {
                col[m]
            } else {
                (col[m - 1] + col[m]) / 2.0
            }
        })
        .collect();
    let vt = state_targets(val, &vf);
    let pred = Array2::from_shape_fn(vt.dim(), |(_, d)| medians[d]);
    Ok(l1_loss(&pred, &vt)?.0)
}

/// Regresses the 8-dim proprioceptive state from frozen static-view
/// features with an L1 objective.
pub fn train_state_probe(
    encoder: &Encoder<f32>,
    train: &[&Trajectory],
    val: &[&Trajectory],
    cfg: &StateProbeConfig,
) -> Result<StateProbeResult> {
    if cfg.batch == 0 || cfg.epochs == 0 {
        return Err(Error::Config("probe batch and epochs must be positive".into()));
    }
    let train_frames = all_frames(train)?;
    let val_frames = all_frames(val)?;
    let digest = encoder.params.digest();
    let train_feats = FrozenFeatures::extract(encoder, train)?;
    let val_feats = FrozenFeatures::extract(encoder, val)?;
    let probe_cfg = ProbeConfig {
        seed: cfg.seed,
        ..cfg.probe.clone()
    };
    let mut head = ProbeHead::<f32>::new(probe_cfg.clone(), train_feats.tokens, train_feats.channels, STATE_DIM)?;
    let mut opt = Adam::new(cfg.adam.clone(), &head.params)?;
    let mut order_rng = seed::rng(seed::named(cfg.seed, "probe/state/order"));
    let mut drop_rng = seed::rng(seed::named(cfg.seed, "probe/state/dropout"));

    let per_epoch = train_frames.len().div_ceil(cfg.batch);
    let total = (per_epoch * cfg.epochs) as u64;
    let mut evals = eval_steps(total, cfg.eval_every);
    if evals.last() != Some(&total) {
        evals.push(total);
    }
    let mut train_losses = Vec::with_capacity(total as usize);
    let mut val_evals = Vec::with_capacity(evals.len());
    let mut step = 0u64;
    for _ in 0..cfg.epochs {
        let mut order = train_frames.clone();
        order.shuffle(&mut order_rng);
        for picks in order.chunks(cfg.batch) {
            step += 1;
            let z = train_feats.gather(picks);
            let masks = DropoutMasks::sample(picks.len(), &probe_cfg, &mut drop_rng);
            let (out, cache) = head.forward_train(&z, Some(masks))?;
            let (loss, grad) = l1_loss(&out, &state_targets(train, picks))?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    step,
                    detail: "state probe loss is not finite".into(),
                });
            }
            let mut grads = head.params.zeros_like();
            head.backward(&cache, &grad, &mut grads);
            opt.step(&mut head.params, &grads);
            train_losses.push(loss);
            if evals.contains(&step) {
                let mut sum = 0.0;
                for part in val_frames.chunks(EVAL_CHUNK) {
                    let out = head.forward(&val_feats.gather(part))?;
                    sum += l1_loss(&out, &state_targets(val, part))?.0 * part.len() as f64;
                }
                val_evals.push((step, sum / val_frames.len() as f64));
            }
        }
    }
    ensure_frozen(encoder, &digest)?;
    let vals: Vec<f64> = val_evals.iter().map(|v| v.1).collect();
    let report = ProbeReport::from_logs(&train_losses, &vals)?;
    Ok(StateProbeResult {
        head,
        train_losses,
        final_val: *vals.last().expect("final step is evaluated"),
        val_evals,
        baseline_val: constant_median_baseline(train, val)?,
        report,
        encoder_digest: digest,
    })
}
