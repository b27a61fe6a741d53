use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ensure_frozen, eval_steps, FrozenFeatures, ProbeReport, RolloutPolicy, StepContext};
use crate::data::{ActionStats, Trajectory};
use crate::error::{Error, Result};
use crate::nn::{chunk_loss, Adam, AdamConfig, DropoutMasks, Encoder, ProbeConfig, ProbeHead};
use crate::seed;
use crate::sim::{Action, Instruction, View, ACTION_DIM};
use crate::train::{chunk_target, decode_chunk};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BcProbeConfig {
    pub probe: ProbeConfig,
    /// Chunk length of the probe's prediction.
    pub horizon: usize,
    pub steps: u64,
    pub batch: usize,
    pub adam: AdamConfig,
    pub eval_every: u64,
    /// Fraction of each task's demonstrations held out.
    pub val_fraction: f64,
    pub lambda_g: f64,
    pub seed: u64,
    pub n_rollouts: usize,
    pub episode_cap: usize,
    /// Report the train loss as the mean of the last `w` steps instead of
    /// the whole run.
    pub train_loss_window: Option<u64>,
}

impl Default for BcProbeConfig {
    fn default() -> Self {
        Self {
            probe: ProbeConfig::default(),
            horizon: 4,
            steps: 1000,
            batch: 64,
            adam: AdamConfig::default(),
            eval_every: 100,
            val_fraction: 0.1,
            lambda_g: 0.01,
            seed: 0,
            n_rollouts: 20,
            episode_cap: 200,
            train_loss_window: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BcProbeResult {
    pub head: ProbeHead<f32>,
    pub train_losses: Vec<f64>,
    /// `(step, mean validation loss)`.
    pub val_evals: Vec<(u64, f64)>,
    pub report: ProbeReport,
    pub encoder_digest: String,
}

const EVAL_CHUNK: usize = 256;

/// Chunk targets for the listed frames.
fn targets(trajs: &[&Trajectory], frames: &[(usize, usize)], h: usize, stats: &ActionStats) -> ndarray::Array2<f32> {
    let chunks: Vec<_> = frames.iter().map(|&(k, t)| trajs[k].actions[t..t + h].to_vec()).collect();
    chunk_target(&chunks, stats)
}

/// Trains one behaviour-cloning probe on a single task's demonstrations,
/// holding out the last `val_fraction` of them.
pub fn train_bc_probe(
    encoder: &Encoder<f32>,
    demos: &[&Trajectory],
    stats: &ActionStats,
    cfg: &BcProbeConfig,
) -> Result<BcProbeResult> {
    let n = demos.len();
    let n_val = ((n as f64 * cfg.val_fraction).round() as usize).max(1);
    if n_val >= n {
        return Err(Error::Input(format!("{n} demonstrations are too few for a train/validation split")));
    }
    if cfg.batch == 0 || cfg.horizon == 0 {
        return Err(Error::Config("probe batch and horizon must be positive".into()));
    }
    let h = cfg.horizon;
    let frames_of = |range: std::ops::Range<usize>| -> Vec<(usize, usize)> {
        range
            .flat_map(|k| (0..(demos[k].len() + 1).saturating_sub(h)).map(move |t| (k, t)))
            .collect()
    };
    let train_frames = frames_of(0..n - n_val);
    let val_frames = frames_of(n - n_val..n);
    if train_frames.is_empty() || val_frames.is_empty() {
        return Err(Error::Input(format!("demonstrations shorter than the probe horizon {h}")));
    }
    let digest = encoder.params.digest();
    let feats = FrozenFeatures::extract(encoder, demos)?;
    let probe_cfg = ProbeConfig {
        seed: cfg.seed,
        ..cfg.probe.clone()
    };
    let mut head = ProbeHead::<f32>::new(probe_cfg.clone(), feats.tokens, feats.channels, h * ACTION_DIM)?;
    let mut opt = Adam::new(cfg.adam.clone(), &head.params)?;
    let mut batch_rng = seed::rng(seed::named(cfg.seed, "probe/bc/batches"));
    let mut drop_rng = seed::rng(seed::named(cfg.seed, "probe/bc/dropout"));
    let evals = eval_steps(cfg.steps, cfg.eval_every);

    let mut train_losses = Vec::with_capacity(cfg.steps as usize);
    let mut val_evals = Vec::with_capacity(evals.len());
    for step in 1..=cfg.steps {
        let picks: Vec<(usize, usize)> = (0..cfg.batch)
            .map(|_| train_frames[batch_rng.gen_range(0..train_frames.len())])
            .collect();
        let z = feats.gather(&picks);
        let masks = DropoutMasks::sample(picks.len(), &probe_cfg, &mut drop_rng);
        let (out, cache) = head.forward_train(&z, Some(masks))?;
        let l = chunk_loss(&out, &targets(demos, &picks, h, stats), cfg.lambda_g)?;
        if !l.total.is_finite() {
            return Err(Error::Diverged {
                step,
                detail: "behaviour-cloning probe loss is not finite".into(),
            });
        }
        let mut grads = head.params.zeros_like();
        head.backward(&cache, &l.grad, &mut grads);
        opt.step(&mut head.params, &grads);
        train_losses.push(l.total);
        if evals.contains(&step) {
            val_evals.push((step, eval_loss(&head, &feats, demos, &val_frames, h, stats, cfg.lambda_g)?));
        }
    }
    ensure_frozen(encoder, &digest)?;
    let vals: Vec<f64> = val_evals.iter().map(|v| v.1).collect();
    let window = cfg.train_loss_window.map_or(train_losses.len(), |w| (w as usize).min(train_losses.len()));
    let report = ProbeReport::from_logs(&train_losses[train_losses.len() - window..], &vals)?;
    Ok(BcProbeResult {
        head,
        train_losses,
        val_evals,
        report,
        encoder_digest: digest,
    })
}

fn eval_loss(
    head: &ProbeHead<f32>,
    feats: &FrozenFeatures,
    demos: &[&Trajectory],
    frames: &[(usize, usize)],
    h: usize,
    stats: &ActionStats,
    lambda_g: f64,
) -> Result<f64> {
    let mut sum = 0.0;
    for part in frames.chunks(EVAL_CHUNK) {
        let out = head.forward(&feats.gather(part))?;
        sum += chunk_loss(&out, &targets(demos, part, h, stats), lambda_g)?.total * part.len() as f64;
    }
    Ok(sum / frames.len() as f64)
}

/// A trained probe acting on the static view through its frozen encoder.
pub struct ProbePolicy<'a> {
    pub encoder: &'a Encoder<f32>,
    pub head: &'a ProbeHead<f32>,
    pub stats: &'a ActionStats,
}

impl ProbePolicy<'_> {
    pub fn predict_chunk(&self, image: &crate::sim::Image) -> Result<Vec<Action>> {
        let z = self.encoder.forward(&[image])?;
        let out = self.head.forward(&z)?;
        Ok(decode_chunk(out.row(0).iter().map(|v| *v as f64), self.stats))
    }
}

impl RolloutPolicy for ProbePolicy<'_> {
    fn act(&self, ctx: &StepContext<'_>) -> Result<Action> {
        Ok(self.predict_chunk(ctx.observation().view(View::Static))?[0])
    }
}

/// Demonstrations of one task.
pub fn demos_of<'a>(trajs: &'a [Trajectory], task: &Instruction) -> Vec<&'a Trajectory> {
    trajs.iter().filter(|t| t.instruction == *task).collect()
}
