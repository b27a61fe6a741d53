//! Demonstration datasets: generation from the scripted expert, on-disk
//! layout, action statistics, and inverse-dynamics sampling with PTR.
//!
//! A dataset directory holds `manifest.toml` plus one binary record per
//! trajectory (`traj_00000.bin`, ...). Stored actions and states are raw;
//! normalization happens inside training.

mod record;
mod sample;
mod stats;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::archive::write_atomic;
use crate::error::{Error, Result};
use crate::sim::{
    hold_action, proprio, Action, Instruction, Observation, Sim, SimConfig, TaskChoice,
    WorldState, ACTION_DIM, STATE_DIM,
};
use crate::{par, seed, FORMAT_VERSION, TOOL_VERSION};

pub use record::{load_trajectory, save_trajectory};
pub use sample::{check_probability, dagger, make_invdyn_sample, maybe_ptr, ptr_reverse, InvDynSample};
pub use stats::{compute_action_stats, ActionStats, STD_FLOOR};

/// Stored action: six motion offsets then the gripper command.
pub type ActionRow = [f32; ACTION_DIM];
/// Stored proprioceptive state.
pub type StateRow = [f32; STATE_DIM];

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: usize,
    pub instruction: Instruction,
    pub episode_seed: u64,
    pub observations: Vec<Observation>,
    pub actions: Vec<ActionRow>,
    pub states: Vec<StateRow>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let t = self.actions.len();
        if t == 0 {
            return Err(Error::Input("trajectory has no timesteps".into()));
        }
        if self.observations.len() != t || self.states.len() != t {
            return Err(Error::Input(format!(
                "stream lengths differ: {} observations, {t} actions, {} states",
                self.observations.len(),
                self.states.len()
            )));
        }
        Ok(())
    }
}

/// One expert rollout with the full simulator states it visited.
#[derive(Debug, Clone)]
pub struct ExpertEpisode {
    pub instruction: Instruction,
    pub seed: u64,
    /// `states[t]` is the state the action `actions[t]` is applied in.
    pub states: Vec<WorldState>,
    pub actions: Vec<Action>,
    pub success: bool,
}

/// Rolls out the scripted expert from `reset(seed, task)` until success or
/// `max_steps`. On success a final zero-motion hold action is appended so
/// that states and actions have equal length and the last state succeeds.
pub fn run_expert_episode(sim: &Sim, seed: u64, task: TaskChoice, max_steps: usize) -> Result<ExpertEpisode> {
    let (mut state, instruction) = sim.reset(seed, task);
    let mut states = vec![state.clone()];
    let mut actions = Vec::new();
    let mut success = false;
    loop {
        if sim.is_success(&state, &instruction) {
            actions.push(hold_action(&state));
            success = true;
            break;
        }
        if actions.len() >= max_steps {
            states.pop();
            break;
        }
        let a = sim.expert_action(&state, &instruction)?;
        state = sim.step(&state, &a)?;
        actions.push(a);
        states.push(state.clone());
    }
    Ok(ExpertEpisode {
        instruction,
        seed,
        states,
        actions,
        success,
    })
}

impl ExpertEpisode {
    pub fn to_trajectory(&self, sim: &Sim, id: usize) -> Trajectory {
        Trajectory {
            id,
            instruction: self.instruction,
            episode_seed: self.seed,
            observations: self.states.iter().map(|s| sim.observe(s)).collect(),
            actions: self.actions.iter().map(|a| a.to_array().map(|v| v as f32)).collect(),
            states: self.states.iter().map(|s| proprio(s).map(|v| v as f32)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub n_traj: usize,
    pub seed: u64,
    /// Task slugs (e.g. `pick-red`); empty means the whole vocabulary.
    pub tasks: Vec<String>,
    /// Episode step cap for the expert.
    pub horizon_max: usize,
    /// Shortest trajectory kept.
    pub min_len: usize,
    pub val_fraction: f64,
    pub sim: SimConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_traj: 100,
            seed: 0,
            tasks: Vec::new(),
            horizon_max: 200,
            min_len: 9,
            val_fraction: 0.1,
            sim: SimConfig::default(),
        }
    }
}

impl DataConfig {
    pub fn task_list(&self) -> Result<Vec<Instruction>> {
        if self.tasks.is_empty() {
            return Ok(Instruction::vocabulary());
        }
        self.tasks.iter().map(|s| s.parse()).collect()
    }

    fn n_val(&self) -> usize {
        ((self.n_traj as f64 * self.val_fraction).round() as usize).min(self.n_traj.saturating_sub(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordEntry {
    pub file: String,
    pub id: usize,
    pub task: String,
    pub len: usize,
    /// Decimal text: TOML integers cannot hold the full `u64` range.
    #[serde(with = "u64_text")]
    pub episode_seed: u64,
    pub sha256: String,
}

mod u64_text {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        String::deserialize(d)?.parse().map_err(D::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub tool_version: String,
    pub seed: u64,
    pub n_traj: usize,
    /// The first `n_train` trajectories form the training split.
    pub n_train: usize,
    pub n_val: usize,
    pub tasks: Vec<String>,
    pub image_size: usize,
    pub horizon_max: usize,
    pub min_len: usize,
    pub val_fraction: f64,
    /// Motion statistics over the training split.
    pub action_stats: ActionStats,
    pub sim: SimConfig,
    #[serde(default)]
    pub records: Vec<RecordEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn train(&self) -> &[Trajectory] {
        &self.trajectories[..self.manifest.n_train]
    }

    pub fn val(&self) -> &[Trajectory] {
        &self.trajectories[self.manifest.n_train..]
    }

    pub fn sim(&self) -> Sim {
        Sim::new(self.manifest.sim.clone())
    }

    /// Loads and verifies every record listed in the manifest.
    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: DatasetManifest =
            toml::from_str(&text).map_err(|e| Error::format(&mpath, e.to_string()))?;
        if manifest.format != FORMAT_VERSION {
            return Err(Error::format(
                &mpath,
                format!("version mismatch: `{}`", manifest.format),
            ));
        }
        let trajectories = par::try_map_range(manifest.records.len(), |i| {
            let rec = &manifest.records[i];
            let path = dir.join(&rec.file);
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            if hex::encode(Sha256::digest(&bytes)) != rec.sha256 {
                return Err(Error::format(&path, "checksum does not match manifest"));
            }
            record::trajectory_from_bytes(&bytes, &path)
        })?;
        Ok(Self {
            manifest,
            trajectories,
        })
    }

    /// Writes records then the manifest (with per-record digests).
    pub fn save(&mut self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let entries = par::try_map_range(self.trajectories.len(), |i| {
            let traj = &self.trajectories[i];
            let file = format!("traj_{:05}.bin", traj.id);
            let bytes = record::trajectory_to_bytes(traj)?;
            write_atomic(&dir.join(&file), &bytes)?;
            Ok(RecordEntry {
                file,
                id: traj.id,
                task: traj.instruction.slug(),
                len: traj.len(),
                episode_seed: traj.episode_seed,
                sha256: hex::encode(Sha256::digest(&bytes)),
            })
        })?;
        self.manifest.records = entries;
        let text = toml::to_string(&self.manifest).expect("manifest serializes");
        write_atomic(&dir.join(MANIFEST_FILE), text.as_bytes())
    }
}

/// Generates `n_traj` successful expert trajectories in memory.
///
/// Attempt `k` uses episode seed `derive(seed, k)`; attempts are consumed in
/// order, so the result is independent of thread count.
pub fn generate(cfg: &DataConfig) -> Result<Dataset> {
    if cfg.n_traj == 0 {
        return Err(Error::Config("n_traj must be at least 1".into()));
    }
    let tasks = cfg.task_list()?;
    if tasks.is_empty() {
        return Err(Error::Config("empty task mix".into()));
    }
    let sim = Sim::new(cfg.sim.clone());
    let max_attempts = 20 * cfg.n_traj + 100;
    let mut kept: Vec<ExpertEpisode> = Vec::with_capacity(cfg.n_traj);
    let mut next = 0usize;
    while kept.len() < cfg.n_traj {
        if next >= max_attempts {
            return Err(Error::TaskInfeasible(format!(
                "only {} of {} trajectories succeeded after {max_attempts} attempts",
                kept.len(),
                cfg.n_traj
            )));
        }
        let round = (cfg.n_traj - kept.len()).max(16);
        let base = next;
        let episodes = par::try_map_range(round, |i| {
            let ep_seed = seed::derive(cfg.seed, (base + i) as u64);
            let task = tasks[(seed::derive(ep_seed, 1) % tasks.len() as u64) as usize];
            run_expert_episode(&sim, ep_seed, TaskChoice::Fixed(task), cfg.horizon_max)
        })?;
        next += round;
        for ep in episodes {
            if kept.len() < cfg.n_traj && ep.success && ep.actions.len() >= cfg.min_len {
                kept.push(ep);
            }
        }
    }
    let trajectories: Vec<Trajectory> = par::map_range(kept.len(), |i| kept[i].to_trajectory(&sim, i));
    let n_val = cfg.n_val();
    let n_train = cfg.n_traj - n_val;
    let action_stats = compute_action_stats(&trajectories[..n_train])?;
    let manifest = DatasetManifest {
        format: FORMAT_VERSION.to_string(),
        tool_version: TOOL_VERSION.to_string(),
        seed: cfg.seed,
        n_traj: cfg.n_traj,
        n_train,
        n_val,
        tasks: tasks.iter().map(|t| t.slug()).collect(),
        image_size: cfg.sim.image_size,
        horizon_max: cfg.horizon_max,
        min_len: cfg.min_len,
        val_fraction: cfg.val_fraction,
        action_stats,
        sim: cfg.sim.clone(),
        records: Vec::new(),
    };
    Ok(Dataset {
        manifest,
        trajectories,
    })
}

/// Generates a dataset and writes it to `dir`.
pub fn generate_dataset(cfg: &DataConfig, dir: &Path) -> Result<DatasetManifest> {
    let mut ds = generate(cfg)?;
    ds.save(dir)?;
    Ok(ds.manifest)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::sim::Image;

    /// Small synthetic trajectory with distinct per-step images and actions.
    pub(crate) fn toy_trajectory(len: usize) -> Trajectory {
        let img = |v: u8| Image {
            size: 2,
            data: vec![v; 12],
        };
        Trajectory {
            id: 3,
            instruction: Instruction::vocabulary()[0],
            episode_seed: 9,
            observations: (0..len)
                .map(|t| Observation {
                    static_view: img(t as u8),
                    wrist: img(100 + t as u8),
                })
                .collect(),
            actions: (0..len)
                .map(|t| {
                    let v = t as f32 * 0.01;
                    [v, -v, 0.5 * v, 0.0, 0.0, v, (t % 2) as f32]
                })
                .collect(),
            states: (0..len).map(|t| [t as f32; STATE_DIM]).collect(),
        }
    }

    fn small_cfg(n: usize) -> DataConfig {
        DataConfig {
            n_traj: n,
            sim: SimConfig {
                image_size: 16,
                ..SimConfig::default()
            },
            ..DataConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic_and_successful() {
        let cfg = small_cfg(10);
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a, b);
        let sim = a.sim();
        for t in &a.trajectories {
            assert!(t.len() >= cfg.min_len);
            let ep = run_expert_episode(&sim, t.episode_seed, TaskChoice::Fixed(t.instruction), cfg.horizon_max).unwrap();
            assert!(sim.is_success(ep.states.last().unwrap(), &t.instruction));
            assert_eq!(ep.to_trajectory(&sim, t.id), *t);
        }
        assert_eq!(a.manifest.n_train + a.manifest.n_val, 10);
        assert_eq!(a.manifest.n_val, 1);
    }

    #[test]
    fn directories_are_byte_identical() {
        let cfg = small_cfg(4);
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        generate_dataset(&cfg, d1.path()).unwrap();
        generate_dataset(&cfg, d2.path()).unwrap();
        let mut names: Vec<_> = fs::read_dir(d1.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        assert_eq!(names.len(), 5);
        for n in names {
            assert_eq!(
                fs::read(d1.path().join(&n)).unwrap(),
                fs::read(d2.path().join(&n)).unwrap()
            );
        }
        let loaded = Dataset::load(d1.path()).unwrap();
        assert_eq!(loaded.trajectories, generate(&cfg).unwrap().trajectories);
    }

    #[test]
    fn tampered_record_fails_manifest_digest() {
        let cfg = small_cfg(2);
        let d = tempfile::tempdir().unwrap();
        generate_dataset(&cfg, d.path()).unwrap();
        let p = d.path().join("traj_00000.bin");
        let mut bytes = fs::read(&p).unwrap();
        let n = bytes.len();
        bytes[n / 2] ^= 1;
        fs::write(&p, bytes).unwrap();
        assert!(matches!(Dataset::load(d.path()), Err(Error::Format { .. })));
    }

    #[test]
    fn config_errors() {
        assert!(matches!(generate(&small_cfg(0)), Err(Error::Config(_))));
        let mut cfg = small_cfg(2);
        cfg.tasks = vec!["juggle-red".into()];
        assert!(matches!(generate(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn motion_std_positive_on_exercised_dims() {
        let ds = generate(&small_cfg(100)).unwrap();
        let st = &ds.manifest.action_stats;
        for d in [0, 1, 2, 5] {
            assert!(st.std[d] > 1e-3, "dim {d}: {:?}", st.std);
        }
        // roll and pitch are never commanded by the expert
        assert!(st.floored[3] && st.floored[4]);
    }
}
