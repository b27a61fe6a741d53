//! Combined-objective training: `L = L_vla + lambda_inv * L_inv`, with the
//! inverse-dynamics term optionally fed pseudo-time-reversed samples.

mod checkpoint;
mod gradcheck;
mod objective;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{make_invdyn_sample, maybe_ptr, ptr_reverse, ActionStats, Dataset, Trajectory};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Encoder, EncoderConfig, InvDynConfig, InvDynHead, PolicyConfig, PolicyHead};
use crate::seed;
use crate::sim::Instruction;

pub use checkpoint::{Checkpoint, LearnedPolicy, OptimState};
pub(crate) use checkpoint::decode_chunk;
pub use gradcheck::{grad_check, BlockError, Component, GradCheckReport};
pub use objective::{chunk_target, objective, Losses, StepBatch};

/// Ablation variants: plain behaviour cloning, +inverse dynamics, +PTR.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Bc,
    Aux,
    AuxPtr,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Bc, Variant::Aux, Variant::AuxPtr];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Bc => "bc",
            Variant::Aux => "aux",
            Variant::AuxPtr => "aux-ptr",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Input(format!("unknown variant `{s}` (expected bc, aux or aux-ptr)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda_inv: f64,
    pub lambda_g: f64,
    pub p_rev: f64,
    /// Action chunk length shared by the policy and the inverse-dynamics pair gap.
    pub horizon: usize,
    pub steps: u64,
    pub batch: usize,
    pub seed: u64,
    pub aux: bool,
    pub ptr: bool,
    /// Redraw the reversal coin on every visit of a sample (otherwise the
    /// decision is a fixed function of the sample and seed).
    pub ptr_per_visit: bool,
    pub adam: AdamConfig,
    pub encoder: EncoderConfig,
    pub policy: PolicyConfig,
    pub invdyn: InvDynConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_inv: 0.2,
            lambda_g: 0.01,
            p_rev: 0.5,
            horizon: 8,
            steps: 2000,
            batch: 32,
            seed: 0,
            aux: false,
            ptr: false,
            ptr_per_visit: true,
            adam: AdamConfig::default(),
            encoder: EncoderConfig::default(),
            policy: PolicyConfig::default(),
            invdyn: InvDynConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.aux = variant != Variant::Bc;
        self.ptr = variant == Variant::AuxPtr;
        self
    }

    pub fn variant(&self) -> Variant {
        match (self.aux, self.ptr) {
            (false, _) => Variant::Bc,
            (true, false) => Variant::Aux,
            (true, true) => Variant::AuxPtr,
        }
    }

    /// Propagates the shared seed and horizon into the sub-configurations
    /// and checks ranges.
    pub fn resolved(mut self) -> Result<Self> {
        if self.horizon == 0 || self.batch == 0 {
            return Err(Error::Config("horizon and batch must be positive".into()));
        }
        for (name, v) in [("lambda_inv", self.lambda_inv), ("lambda_g", self.lambda_g)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        crate::data::check_probability(self.p_rev)?;
        self.adam.validate()?;
        self.encoder.seed = self.seed;
        self.policy.seed = self.seed;
        self.invdyn.seed = self.seed;
        self.policy.horizon = self.horizon;
        self.invdyn.horizon = self.horizon;
        Ok(self)
    }

    /// Effective reversal probability (PTR off or AUX off means never).
    pub fn effective_p_rev(&self) -> f64 {
        if self.aux && self.ptr {
            self.p_rev
        } else {
            0.0
        }
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    #[serde(rename = "L_vla")]
    pub l_vla: f64,
    #[serde(rename = "L_inv")]
    pub l_inv: f64,
    pub total: f64,
    pub reversed_fraction: f64,
}

/// Mutable training state: models, optimisers, and the two RNG streams.
pub struct Trainer<'d> {
    cfg: TrainConfig,
    data: Vec<&'d Trajectory>,
    stats: ActionStats,
    pub encoder: Encoder<f32>,
    pub policy: PolicyHead<f32>,
    pub invdyn: Option<InvDynHead<f32>>,
    opt: OptimState,
    batch_rng: ChaCha8Rng,
    ptr_rng: ChaCha8Rng,
    step: u64,
}

impl<'d> Trainer<'d> {
    pub fn new(cfg: TrainConfig, dataset: &'d Dataset) -> Result<Self> {
        let cfg = cfg.resolved()?;
        let encoder = Encoder::new(cfg.encoder.clone())?;
        let (p, c) = (cfg.encoder.tokens(), cfg.encoder.channels);
        let policy = PolicyHead::new(cfg.policy.clone(), p, c)?;
        let invdyn = if cfg.aux {
            Some(InvDynHead::new(cfg.invdyn.clone(), p, c)?)
        } else {
            None
        };
        let opt = OptimState {
            encoder: Adam::new(cfg.adam.clone(), &encoder.params)?,
            policy: Adam::new(cfg.adam.clone(), &policy.params)?,
            invdyn: invdyn.as_ref().map(|h| Adam::new(cfg.adam.clone(), &h.params)).transpose()?,
        };
        let batch_rng = seed::rng(seed::named(cfg.seed, "train/batches"));
        let ptr_rng = seed::rng(seed::named(cfg.seed, "train/ptr"));
        Self::assemble(cfg, dataset, encoder, policy, invdyn, opt, batch_rng, ptr_rng, 0)
    }

    /// Continues training from a checkpoint that still carries optimiser
    /// and RNG state.
    pub fn resume(ckpt: &Checkpoint, dataset: &'d Dataset) -> Result<Self> {
        let cfg = ckpt.config.clone();
        let (p, c) = (cfg.encoder.tokens(), cfg.encoder.channels);
        let encoder = Encoder::from_params(cfg.encoder.clone(), &ckpt.encoder)?;
        let policy = PolicyHead::from_params(cfg.policy.clone(), p, c, &ckpt.policy)?;
        let invdyn = match (&ckpt.invdyn, cfg.aux) {
            (Some(ps), true) => Some(InvDynHead::from_params(cfg.invdyn.clone(), p, c, ps)?),
            (None, false) => None,
            _ => return Err(Error::Precondition("checkpoint was stripped of its inverse-dynamics head".into())),
        };
        let opt = ckpt
            .optim
            .clone()
            .ok_or_else(|| Error::Precondition("checkpoint has no optimiser state".into()))?;
        let (mut batch_rng, mut ptr_rng) = (
            seed::rng(seed::named(cfg.seed, "train/batches")),
            seed::rng(seed::named(cfg.seed, "train/ptr")),
        );
        let [b, r] = ckpt.rng_words.ok_or_else(|| Error::Precondition("checkpoint has no RNG state".into()))?;
        batch_rng.set_word_pos(b);
        ptr_rng.set_word_pos(r);
        let mut t = Self::assemble(cfg, dataset, encoder, policy, invdyn, opt, batch_rng, ptr_rng, ckpt.step)?;
        t.stats = ckpt.stats.clone();
        Ok(t)
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        cfg: TrainConfig,
        dataset: &'d Dataset,
        encoder: Encoder<f32>,
        policy: PolicyHead<f32>,
        invdyn: Option<InvDynHead<f32>>,
        opt: OptimState,
        batch_rng: ChaCha8Rng,
        ptr_rng: ChaCha8Rng,
        step: u64,
    ) -> Result<Self> {
        if dataset.manifest.image_size != cfg.encoder.image_size {
            return Err(Error::Precondition(format!(
                "dataset images are {}px but the encoder expects {}px",
                dataset.manifest.image_size, cfg.encoder.image_size
            )));
        }
        let data: Vec<&Trajectory> = dataset.train().iter().filter(|t| t.len() > cfg.horizon).collect();
        if data.is_empty() {
            return Err(Error::Precondition(format!(
                "no training trajectory is longer than the horizon {}",
                cfg.horizon
            )));
        }
        Ok(Self {
            stats: dataset.manifest.action_stats.clone(),
            cfg,
            data,
            encoder,
            policy,
            invdyn,
            opt,
            batch_rng,
            ptr_rng,
            step,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Per-sample reversal coin used when `ptr_per_visit` is off.
    fn fixed_ptr_coin(&self, traj: &Trajectory, t: usize) -> bool {
        let key = ((traj.id as u64) << 32) | t as u64;
        let bits = seed::derive(seed::named(self.cfg.seed, "train/ptr-fixed"), key) >> 11;
        (bits as f64 / (1u64 << 53) as f64) < self.cfg.effective_p_rev()
    }

    fn sample_batch(&mut self) -> Result<StepBatch<'d, f32>> {
        let (h, b) = (self.cfg.horizon, self.cfg.batch);
        let mut picks = Vec::with_capacity(b);
        for _ in 0..b {
            let k = self.batch_rng.gen_range(0..self.data.len());
            let t = self.batch_rng.gen_range(0..self.data[k].len() - h);
            picks.push((k, t));
        }
        let mut cur = Vec::with_capacity(b);
        let mut fut = Vec::with_capacity(b);
        let mut reversed = Vec::with_capacity(b);
        let mut instr = Vec::with_capacity(b);
        let mut vla_chunks = Vec::with_capacity(b);
        let mut inv_chunks = Vec::with_capacity(b);
        for (k, t) in picks {
            let traj: &'d Trajectory = self.data[k];
            let fwd = make_invdyn_sample(traj, t, h)?;
            vla_chunks.push(fwd.chunk.clone());
            instr.push(instruction_id(&traj.instruction)?);
            cur.push(&traj.observations[t]);
            fut.push(&traj.observations[t + h]);
            if self.cfg.aux {
                let s = if self.cfg.ptr_per_visit {
                    maybe_ptr(fwd, self.cfg.effective_p_rev(), &mut self.ptr_rng)?
                } else if self.fixed_ptr_coin(traj, t) {
                    ptr_reverse(&fwd)
                } else {
                    fwd
                };
                reversed.push(s.reversed);
                inv_chunks.push(s.chunk);
            }
        }
        Ok(StepBatch {
            cur,
            fut,
            reversed,
            instr,
            vla_target: chunk_target(&vla_chunks, &self.stats),
            inv_target: self.cfg.aux.then(|| chunk_target(&inv_chunks, &self.stats)),
        })
    }

    /// Runs one optimisation step and returns its log row.
    pub fn step(&mut self) -> Result<LogRow> {
        let batch = self.sample_batch()?;
        let step = self.step + 1;
        let (losses, grads) = objective(
            &self.encoder,
            &self.policy,
            self.invdyn.as_ref(),
            &batch,
            self.cfg.lambda_inv,
            self.cfg.lambda_g,
        )?;
        if !losses.total.is_finite() {
            return Err(Error::Diverged {
                step,
                detail: format!("L_vla = {}, L_inv = {}", losses.vla, losses.inv),
            });
        }
        self.opt.encoder.step(&mut self.encoder.params, &grads.encoder);
        self.opt.policy.step(&mut self.policy.params, &grads.policy);
        if let (Some(head), Some(opt), Some(g)) = (self.invdyn.as_mut(), self.opt.invdyn.as_mut(), grads.invdyn.as_ref()) {
            opt.step(&mut head.params, g);
        }
        if !(self.encoder.params.is_finite() && self.policy.params.is_finite()) {
            return Err(Error::Diverged {
                step,
                detail: "parameters became non-finite".into(),
            });
        }
        self.step = step;
        let reversed = batch.reversed.iter().filter(|r| **r).count();
        Ok(LogRow {
            step,
            l_vla: losses.vla,
            l_inv: losses.inv,
            total: losses.total,
            reversed_fraction: reversed as f64 / batch.cur.len() as f64,
        })
    }

    /// Runs until `cfg.steps`, handing every log row to `sink`.
    pub fn run<F: FnMut(&LogRow) -> Result<()>>(&mut self, mut sink: F) -> Result<()> {
        while self.step < self.cfg.steps {
            let row = self.step()?;
            if row.step % 100 == 0 {
                log::debug!("step {} L_vla {:.5} L_inv {:.5}", row.step, row.l_vla, row.l_inv);
            }
            sink(&row)?;
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.cfg.clone(),
            step: self.step,
            stats: self.stats.clone(),
            encoder: self.encoder.params.clone(),
            policy: self.policy.params.clone(),
            invdyn: self.invdyn.as_ref().map(|h| h.params.clone()),
            optim: Some(self.opt.clone()),
            rng_words: Some([self.batch_rng.get_word_pos(), self.ptr_rng.get_word_pos()]),
        }
    }
}

pub(crate) fn instruction_id(instr: &Instruction) -> Result<usize> {
    instr
        .vocab_index()
        .ok_or_else(|| Error::Input(format!("instruction `{}` is outside the vocabulary", instr.slug())))
}

/// Trains a policy from scratch; returns the final checkpoint and the log.
pub fn train_policy(cfg: TrainConfig, dataset: &Dataset) -> Result<(Checkpoint, Vec<LogRow>)> {
    let mut trainer = Trainer::new(cfg, dataset)?;
    let mut rows = Vec::new();
    trainer.run(|r| {
        rows.push(*r);
        Ok(())
    })?;
    Ok((trainer.checkpoint(), rows))
}
