use std::path::Path;

use serde_json::json;

use super::{instruction_id, TrainConfig};
use crate::archive::Archive;
use crate::data::ActionStats;
use crate::error::{Error, Result};
use crate::nn::{Adam, Encoder, ParamSet, PolicyHead};
use crate::sim::{Action, Instruction, Observation, ACTION_DIM, MOTION_DIM};
use crate::TOOL_VERSION;

const KIND: &str = "checkpoint";

#[derive(Debug, Clone)]
pub struct OptimState {
    pub encoder: Adam<f32>,
    pub policy: Adam<f32>,
    pub invdyn: Option<Adam<f32>>,
}

/// Trained parameters plus everything needed to resume bit-identically.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub step: u64,
    /// Action normalisation used during training (needed at inference).
    pub stats: ActionStats,
    pub encoder: ParamSet<f32>,
    pub policy: ParamSet<f32>,
    /// Training-only inverse-dynamics head.
    pub invdyn: Option<ParamSet<f32>>,
    pub optim: Option<OptimState>,
    /// Word positions of the batch and reversal streams.
    pub rng_words: Option<[u128; 2]>,
}

impl Checkpoint {
    /// Drops the inverse-dynamics head and its optimiser moments.
    pub fn stripped(&self) -> Self {
        let mut out = self.clone();
        out.invdyn = None;
        if let Some(o) = out.optim.as_mut() {
            o.invdyn = None;
        }
        out
    }

    pub fn to_archive(&self) -> Archive {
        let adam_t = self.optim.as_ref().map(|o| {
            json!({
                "encoder": o.encoder.t,
                "policy": o.policy.t,
                "invdyn": o.invdyn.as_ref().map(|a| a.t),
            })
        });
        let meta = json!({
            "tool_version": TOOL_VERSION,
            "config": self.config,
            "step": self.step,
            "stats": self.stats,
            "has_invdyn": self.invdyn.is_some(),
            "adam_t": adam_t,
            "rng_words": self.rng_words.map(|w| w.map(|x| x.to_string())),
        });
        let mut ar = Archive::new(KIND, meta);
        self.encoder.write_fields("encoder", &mut ar);
        self.policy.write_fields("policy", &mut ar);
        if let Some(ps) = &self.invdyn {
            ps.write_fields("invdyn", &mut ar);
        }
        if let Some(o) = &self.optim {
            let mut parts = vec![("encoder", &o.encoder), ("policy", &o.policy)];
            if let Some(a) = &o.invdyn {
                parts.push(("invdyn", a));
            }
            for (name, a) in parts {
                a.m.write_fields(&format!("optim/{name}/m"), &mut ar);
                a.v.write_fields(&format!("optim/{name}/v"), &mut ar);
            }
        }
        ar
    }

    pub fn from_archive(ar: &Archive, path: &Path) -> Result<Self> {
        let bad = |detail: String| Error::format(path, detail);
        if ar.kind != KIND {
            return Err(bad(format!("expected a {KIND} archive, found `{}`", ar.kind)));
        }
        let meta = &ar.meta;
        let get = |key: &str| meta.get(key).cloned().ok_or_else(|| bad(format!("missing `{key}`")));
        let config: TrainConfig = serde_json::from_value(get("config")?).map_err(|e| bad(e.to_string()))?;
        let stats: ActionStats = serde_json::from_value(get("stats")?).map_err(|e| bad(e.to_string()))?;
        let step = get("step")?.as_u64().ok_or_else(|| bad("bad `step`".into()))?;
        let has_invdyn = get("has_invdyn")?.as_bool().unwrap_or(false);
        let encoder = ParamSet::read_fields("encoder", ar)?;
        let policy = ParamSet::read_fields("policy", ar)?;
        let invdyn = if has_invdyn {
            Some(ParamSet::read_fields("invdyn", ar)?)
        } else {
            None
        };
        let optim = match meta.get("adam_t").filter(|v| !v.is_null()) {
            None => None,
            Some(t) => {
                let restore = |name: &str, params: &ParamSet<f32>| -> Result<Adam<f32>> {
                    let mut a = Adam::new(config.adam.clone(), params)?;
                    a.m.assign(&ParamSet::read_fields(&format!("optim/{name}/m"), ar)?)?;
                    a.v.assign(&ParamSet::read_fields(&format!("optim/{name}/v"), ar)?)?;
                    a.t = t.get(name).and_then(|v| v.as_u64()).unwrap_or(0);
                    Ok(a)
                };
                let inv = match (&invdyn, t.get("invdyn").and_then(|v| v.as_u64())) {
                    (Some(ps), Some(_)) => Some(restore("invdyn", ps)?),
                    _ => None,
                };
                Some(OptimState {
                    encoder: restore("encoder", &encoder)?,
                    policy: restore("policy", &policy)?,
                    invdyn: inv,
                })
            }
        };
        let rng_words = match meta.get("rng_words").and_then(|v| v.as_array()) {
            Some(words) if words.len() == 2 => {
                let parse = |v: &serde_json::Value| -> Result<u128> {
                    v.as_str()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| bad("bad `rng_words`".into()))
                };
                Some([parse(&words[0])?, parse(&words[1])?])
            }
            _ => None,
        };
        Ok(Self {
            config,
            step,
            stats,
            encoder,
            policy,
            invdyn,
            optim,
            rng_words,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_archive().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_archive(&Archive::load(path)?, path)
    }

    pub fn load_encoder(&self) -> Result<Encoder<f32>> {
        Encoder::from_params(self.config.encoder.clone(), &self.encoder)
    }

    pub fn policy(&self) -> Result<LearnedPolicy> {
        let encoder = self.load_encoder()?;
        let head = PolicyHead::from_params(
            self.config.policy.clone(),
            self.config.encoder.tokens(),
            self.config.encoder.channels,
            &self.policy,
        )?;
        Ok(LearnedPolicy {
            encoder,
            head,
            stats: self.stats.clone(),
        })
    }
}

/// Inference-time policy: encoder plus chunk head. The inverse-dynamics
/// head plays no part here.
#[derive(Debug, Clone)]
pub struct LearnedPolicy {
    pub encoder: Encoder<f32>,
    pub head: PolicyHead<f32>,
    pub stats: ActionStats,
}

impl LearnedPolicy {
    /// Denormalised chunk; gripper closes where the logit is non-negative.
    pub fn predict_chunk(&self, obs: &Observation, instr: &Instruction) -> Result<Vec<Action>> {
        let z = self.encoder.encode_views(&[obs])?;
        let out = self.head.forward([&z[0], &z[1]], &[instruction_id(instr)?])?;
        Ok(decode_chunk(out.row(0).iter().map(|v| *v as f64), &self.stats))
    }

    pub fn act(&self, obs: &Observation, instr: &Instruction) -> Result<Action> {
        Ok(self.predict_chunk(obs, instr)?[0])
    }
}

/// Flat `H * 7` network output to actions.
pub(crate) fn decode_chunk(values: impl Iterator<Item = f64>, stats: &ActionStats) -> Vec<Action> {
    let v: Vec<f64> = values.collect();
    v.chunks(ACTION_DIM)
        .map(|row| {
            let mut a = [0.0; ACTION_DIM];
            for d in 0..MOTION_DIM {
                a[d] = stats.denormalize(d, row[d]);
            }
            a[MOTION_DIM] = if row[MOTION_DIM] >= 0.0 { 1.0 } else { 0.0 };
            Action::from_array(&a)
        })
        .collect()
}
