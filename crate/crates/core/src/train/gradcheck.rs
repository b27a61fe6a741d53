//! Central finite-difference verification of the analytic gradients, in
//! double precision, on small random instances.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::objective::{objective, StepBatch};
use crate::error::{Error, Result};
use crate::nn::{
    chunk_loss, DropoutMasks, Encoder, EncoderConfig, InvDynConfig, InvDynHead, ParamSet, PolicyConfig, PolicyHead,
    ProbeConfig, ProbeHead,
};
use crate::seed;
use crate::sim::{Image, Instruction, Observation, View, ACTION_DIM, MOTION_DIM};

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Denominator floor of the relative error, so entries whose true
/// gradient is ~0 are judged on absolute error instead.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Encoder,
    Policy,
    Invdyn,
    Probe,
}

impl Component {
    pub const ALL: [Component; 4] = [Component::Encoder, Component::Policy, Component::Invdyn, Component::Probe];

    pub fn name(self) -> &'static str {
        match self {
            Component::Encoder => "encoder",
            Component::Policy => "policy",
            Component::Invdyn => "invdyn",
            Component::Probe => "probe",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Component::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Input(format!("unknown component `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockError {
    pub block: String,
    pub max_rel_err: f64,
    pub checked: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub component: Component,
    pub trials: usize,
    /// Worst error per parameter block, merged over trials.
    pub blocks: Vec<BlockError>,
    pub max_rel_err: f64,
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

struct Instance {
    encoder: Encoder<f64>,
    policy: PolicyHead<f64>,
    invdyn: InvDynHead<f64>,
    probe: ProbeHead<f64>,
    masks: DropoutMasks<f64>,
    cur: Vec<Observation>,
    fut: Vec<Observation>,
    reversed: Vec<bool>,
    instr: Vec<usize>,
    vla_target: Array2<f64>,
    inv_target: Array2<f64>,
    probe_target: Array2<f64>,
    lambda_inv: f64,
    lambda_g: f64,
}

fn random_image(size: usize, rng: &mut ChaCha8Rng) -> Image {
    Image {
        size,
        data: (0..size * size * 3).map(|_| rng.gen()).collect(),
    }
}

fn random_target(batch: usize, horizon: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((batch, horizon * ACTION_DIM), |(_, k)| {
        if k % ACTION_DIM == MOTION_DIM {
            rng.gen_range(0..2) as f64
        } else {
            rng.gen_range(-1.0..1.0)
        }
    })
}

impl Instance {
    fn random(rng: &mut ChaCha8Rng) -> Result<Self> {
        let patch = [2, 4][rng.gen_range(0..2)];
        let grid = rng.gen_range(2..=3);
        let enc_cfg = EncoderConfig {
            image_size: patch * grid,
            patch,
            channels: rng.gen_range(3..=5),
            depth: rng.gen_range(1..=2),
            seed: rng.gen(),
        };
        let (p, c) = (enc_cfg.tokens(), enc_cfg.channels);
        let horizon = rng.gen_range(1..=3);
        let batch = rng.gen_range(2..=3);
        let policy = PolicyHead::new(
            PolicyConfig {
                horizon,
                token_dim: 3,
                hidden: 6,
                instr_dim: 4,
                seed: rng.gen(),
            },
            p,
            c,
        )?;
        let invdyn = InvDynHead::new(
            InvDynConfig {
                horizon,
                dec_dim: 5,
                hidden: 6,
                seed: rng.gen(),
            },
            p,
            c,
        )?;
        let probe_cfg = ProbeConfig {
            d_proj: 3,
            d_hidden: 4,
            dropout: 0.25,
            seed: rng.gen(),
        };
        let probe = ProbeHead::new(probe_cfg.clone(), p, c, horizon * ACTION_DIM)?;
        let size = enc_cfg.image_size;
        let mut obs = || Observation {
            static_view: random_image(size, rng),
            wrist: random_image(size, rng),
        };
        let cur: Vec<Observation> = (0..batch).map(|_| obs()).collect();
        let fut: Vec<Observation> = (0..batch).map(|_| obs()).collect();
        let n_instr = Instruction::vocabulary().len();
        Ok(Self {
            encoder: Encoder::new(enc_cfg)?,
            policy,
            invdyn,
            masks: DropoutMasks::sample(batch, &probe_cfg, rng),
            probe,
            cur,
            fut,
            reversed: (0..batch).map(|_| rng.gen()).collect(),
            instr: (0..batch).map(|_| rng.gen_range(0..n_instr)).collect(),
            vla_target: random_target(batch, horizon, rng),
            inv_target: random_target(batch, horizon, rng),
            probe_target: random_target(batch, horizon, rng),
            lambda_inv: rng.gen_range(0.1..0.5),
            lambda_g: rng.gen_range(0.1..1.0),
        })
    }

    fn batch(&self) -> StepBatch<'_, f64> {
        StepBatch {
            cur: self.cur.iter().collect(),
            fut: self.fut.iter().collect(),
            reversed: self.reversed.clone(),
            instr: self.instr.clone(),
            vla_target: self.vla_target.clone(),
            inv_target: Some(self.inv_target.clone()),
        }
    }

    fn probe_loss(&self) -> Result<(f64, ParamSet<f64>)> {
        let images: Vec<&Image> = self.cur.iter().map(|o| o.view(View::Static)).collect();
        let z = self.encoder.forward(&images)?;
        let (out, cache) = self.probe.forward_train(&z, Some(self.masks.clone()))?;
        let l = chunk_loss(&out, &self.probe_target, self.lambda_g)?;
        let mut grads = self.probe.params.zeros_like();
        self.probe.backward(&cache, &l.grad, &mut grads);
        Ok((l.total, grads))
    }

    /// Loss and the analytic gradient of `component`'s parameters.
    fn eval(&self, component: Component) -> Result<(f64, ParamSet<f64>)> {
        if component == Component::Probe {
            return self.probe_loss();
        }
        let (l, g) = objective(
            &self.encoder,
            &self.policy,
            Some(&self.invdyn),
            &self.batch(),
            self.lambda_inv,
            self.lambda_g,
        )?;
        let grads = match component {
            Component::Encoder => g.encoder,
            Component::Policy => g.policy,
            _ => g.invdyn.expect("auxiliary head present"),
        };
        Ok((l.total, grads))
    }

    fn params_mut(&mut self, component: Component) -> &mut ParamSet<f64> {
        match component {
            Component::Encoder => &mut self.encoder.params,
            Component::Policy => &mut self.policy.params,
            Component::Invdyn => &mut self.invdyn.params,
            Component::Probe => &mut self.probe.params,
        }
    }
}

/// Compares analytic gradients with central differences on `trials`
/// random instances; every scalar parameter is checked.
pub fn grad_check(component: Component, trials: usize, seed_value: u64) -> Result<GradCheckReport> {
    let mut rng = seed::rng(seed::named(seed_value, "gradcheck"));
    let mut blocks: Vec<BlockError> = Vec::new();
    for _ in 0..trials {
        let mut inst = Instance::random(&mut rng)?;
        let (_, analytic) = inst.eval(component)?;
        let shape: Vec<(String, usize)> = analytic.tensors().iter().map(|t| (t.name.clone(), t.data.len())).collect();
        for (ti, (name, len)) in shape.into_iter().enumerate() {
            let mut worst = 0.0f64;
            for j in 0..len {
                let orig = inst.params_mut(component).tensors()[ti].data[j];
                inst.params_mut(component).tensors_mut()[ti].data[j] = orig + FD_STEP;
                let up = inst.eval(component)?.0;
                inst.params_mut(component).tensors_mut()[ti].data[j] = orig - FD_STEP;
                let down = inst.eval(component)?.0;
                inst.params_mut(component).tensors_mut()[ti].data[j] = orig;
                let numeric = (up - down) / (2.0 * FD_STEP);
                worst = worst.max(rel_err(analytic.tensors()[ti].data[j], numeric));
            }
            match blocks.iter_mut().find(|b| b.block == name) {
                Some(b) => {
                    b.max_rel_err = b.max_rel_err.max(worst);
                    b.checked += len;
                }
                None => blocks.push(BlockError {
                    block: name,
                    max_rel_err: worst,
                    checked: len,
                }),
            }
        }
    }
    let max_rel_err = blocks.iter().map(|b| b.max_rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport {
        component,
        trials,
        blocks,
        max_rel_err,
    })
}
