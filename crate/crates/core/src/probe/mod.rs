//! Frozen-encoder probes: per-task behaviour-cloning probes evaluated by
//! rollouts, and proprioceptive-state regression probes.
//!
//! Probes never see the encoder mutably: features are extracted once, and
//! the encoder digest is compared before and after training.

mod bc;
mod rollout;
mod state;

use std::io::Write;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::data::Trajectory;
use crate::error::{Error, Result};
use crate::nn::{Encoder, VisualTokens};
use crate::par;
use crate::sim::{Image, View};

pub use bc::{demos_of, train_bc_probe, BcProbeConfig, BcProbeResult, ProbePolicy};
pub use rollout::{
    episode_seed, episode_trace, rollout_eval, run_episode, ExpertPolicy, RandomPolicy, RolloutPolicy, RolloutReport, StepContext,
    TaskSuccess,
};
pub use state::{constant_median_baseline, train_state_probe, StateProbeConfig, StateProbeResult};

/// Static-view token features of a set of trajectories from a frozen encoder.
#[derive(Debug, Clone)]
pub struct FrozenFeatures {
    /// Digest of the encoder parameters the features came from.
    pub encoder_digest: String,
    pub tokens: usize,
    pub channels: usize,
    /// Per trajectory, `(T * tokens) x channels`.
    pub per_traj: Vec<Array2<f32>>,
}

const ENCODE_CHUNK: usize = 64;

impl FrozenFeatures {
    pub fn extract(encoder: &Encoder<f32>, trajs: &[&Trajectory]) -> Result<Self> {
        let per_traj = par::try_map_range(trajs.len(), |k| {
            let images: Vec<&Image> = trajs[k].observations.iter().map(|o| o.view(View::Static)).collect();
            let parts = images
                .chunks(ENCODE_CHUNK)
                .map(|c| encoder.forward(c).map(|z| z.data))
                .collect::<Result<Vec<_>>>()?;
            let views: Vec<_> = parts.iter().map(|a| a.view()).collect();
            Ok(ndarray::concatenate(ndarray::Axis(0), &views).expect("same width"))
        })?;
        Ok(Self {
            encoder_digest: encoder.params.digest(),
            tokens: encoder.cfg.tokens(),
            channels: encoder.cfg.channels,
            per_traj,
        })
    }

    /// Token batch for the listed `(trajectory, t)` frames.
    pub fn gather(&self, frames: &[(usize, usize)]) -> VisualTokens<f32> {
        let p = self.tokens;
        let mut data = Array2::zeros((frames.len() * p, self.channels));
        for (i, &(k, t)) in frames.iter().enumerate() {
            data.slice_mut(s![i * p..(i + 1) * p, ..])
                .assign(&self.per_traj[k].slice(s![t * p..(t + 1) * p, ..]));
        }
        VisualTokens {
            batch: frames.len(),
            tokens: p,
            data,
        }
    }
}

/// Fails unless the encoder still has the digest recorded before probing.
pub fn ensure_frozen(encoder: &Encoder<f32>, digest: &str) -> Result<()> {
    let now = encoder.params.digest();
    if now == digest {
        Ok(())
    } else {
        Err(Error::Precondition(format!("encoder parameters changed during probing ({digest} -> {now})")))
    }
}

/// Headline numbers of one probe run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    /// Mean of every per-step training loss.
    pub train_loss: f64,
    /// Mean of the periodic validation evaluations.
    pub val_loss: f64,
}

impl ProbeReport {
    pub fn from_logs(train_losses: &[f64], val_losses: &[f64]) -> Result<Self> {
        if train_losses.is_empty() || val_losses.is_empty() {
            return Err(Error::Input("cannot summarise an empty loss log".into()));
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        Ok(Self {
            train_loss: mean(train_losses),
            val_loss: mean(val_losses),
        })
    }
}

/// Steps at which validation runs: every `every` steps, never step 0.
pub fn eval_steps(total: u64, every: u64) -> Vec<u64> {
    if every == 0 {
        return Vec::new();
    }
    (1..=total / every).map(|k| k * every).collect()
}

/// One row of the probe results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub encoder_id: String,
    pub task: String,
    pub success_rate: Option<f64>,
    pub bc_train_loss: Option<f64>,
    pub bc_val_loss: Option<f64>,
    pub state_train_loss: Option<f64>,
    pub state_val_loss: Option<f64>,
}

impl ResultRow {
    pub fn new(encoder_id: &str, task: &str) -> Self {
        Self {
            encoder_id: encoder_id.to_string(),
            task: task.to_string(),
            success_rate: None,
            bc_train_loss: None,
            bc_val_loss: None,
            state_train_loss: None,
            state_val_loss: None,
        }
    }
}

pub fn write_results<W: Write>(out: W, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Input(format!("csv: {e}")))?;
    }
    w.flush().map_err(|e| Error::Input(format!("csv: {e}")))?;
    Ok(())
}

pub fn read_results<R: std::io::Read>(input: R) -> Result<Vec<ResultRow>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(|e| Error::Input(format!("csv: {e}"))))
        .collect()
}
