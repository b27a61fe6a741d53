//! Desk-scale comparison of training variants: the configuration and the
//! per-seed measurements (state probe, alignment, behavior-cloning probe)
//! that the acceptance run aggregates.

use serde::{Deserialize, Serialize};

use crate::align::{alignment_report, AlignConfig};
use crate::data::{generate, DataConfig, Dataset, Trajectory};
use crate::error::Result;
use crate::nn::{AdamConfig, Encoder, EncoderConfig, InvDynConfig, PolicyConfig, ProbeConfig};
use crate::probe::{demos_of, rollout_eval, train_bc_probe, train_state_probe, BcProbeConfig, ProbePolicy, StateProbeConfig};
use crate::seed;
use crate::sim::SimConfig;
use crate::train::{train_policy, Checkpoint, LogRow, TrainConfig, Variant};

pub const DESK_TASKS: [&str; 4] = ["pick-red", "stack-red-blue", "place-blue-left", "place-red-right"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeskConfig {
    pub tasks: Vec<String>,
    pub image_size: usize,
    pub n_demos: usize,
    pub low_data_demos: usize,
    pub data_seed: u64,
    /// Held-out trajectories used only for the alignment analysis.
    pub analysis_trajs: usize,
    pub analysis_seed: u64,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    pub state_probe: StateProbeConfig,
    pub bc_probe: BcProbeConfig,
    pub align: AlignConfig,
}

impl Default for DeskConfig {
    fn default() -> Self {
        let image_size = 32;
        Self {
            tasks: DESK_TASKS.iter().map(|s| s.to_string()).collect(),
            image_size,
            n_demos: 500,
            low_data_demos: 100,
            data_seed: 0,
            analysis_trajs: 200,
            analysis_seed: 77,
            seeds: (0..5).collect(),
            train: TrainConfig {
                steps: 2000,
                batch: 32,
                lambda_inv: 0.2,
                adam: AdamConfig {
                    lr: 1e-3,
                    ..AdamConfig::default()
                },
                encoder: EncoderConfig {
                    image_size,
                    patch: 8,
                    channels: 32,
                    depth: 2,
                    seed: 0,
                },
                policy: PolicyConfig {
                    hidden: 128,
                    ..PolicyConfig::default()
                },
                invdyn: InvDynConfig {
                    dec_dim: 64,
                    hidden: 128,
                    ..InvDynConfig::default()
                },
                ..TrainConfig::default()
            },
            state_probe: StateProbeConfig {
                probe: ProbeConfig {
                    d_proj: 16,
                    d_hidden: 64,
                    ..ProbeConfig::default()
                },
                batch: 32,
                epochs: 5,
                adam: AdamConfig {
                    lr: 1e-3,
                    ..AdamConfig::default()
                },
                ..StateProbeConfig::default()
            },
            bc_probe: BcProbeConfig {
                probe: ProbeConfig {
                    d_proj: 32,
                    d_hidden: 128,
                    ..ProbeConfig::default()
                },
                adam: AdamConfig {
                    lr: 1e-3,
                    ..AdamConfig::default()
                },
                ..BcProbeConfig::default()
            },
            align: AlignConfig::default(),
        }
    }
}

impl DeskConfig {
    fn data_config(&self, n_traj: usize, seed: u64, val_fraction: f64) -> DataConfig {
        DataConfig {
            n_traj,
            seed,
            tasks: self.tasks.clone(),
            val_fraction,
            sim: SimConfig {
                image_size: self.image_size,
                ..SimConfig::default()
            },
            ..DataConfig::default()
        }
    }

    /// Demonstration dataset with `n_demos` trajectories.
    pub fn dataset(&self, n_demos: usize) -> Result<Dataset> {
        generate(&self.data_config(n_demos, self.data_seed, DataConfig::default().val_fraction))
    }

    /// Trajectories reserved for alignment analysis (disjoint seed stream).
    pub fn analysis_set(&self) -> Result<Dataset> {
        generate(&self.data_config(self.analysis_trajs, self.analysis_seed, 0.0))
    }

    pub fn train_config(&self, variant: Variant, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.train.clone()
        }
        .with_variant(variant)
    }

    /// Untrained encoder with the same architecture, seeded per run.
    pub fn random_encoder(&self, seed: u64) -> Result<Encoder<f32>> {
        Encoder::new(EncoderConfig {
            seed: seed::named(seed, "desk/random-encoder"),
            ..self.train.encoder.clone()
        })
    }
}

/// Trained checkpoint plus its loss log.
pub struct TrainedRun {
    pub variant: Variant,
    pub seed: u64,
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRow>,
}

pub fn train_run(cfg: &DeskConfig, data: &Dataset, variant: Variant, seed: u64) -> Result<TrainedRun> {
    let (checkpoint, log) = train_policy(cfg.train_config(variant, seed), data)?;
    Ok(TrainedRun {
        variant,
        seed,
        checkpoint,
        log,
    })
}

/// Final validation L1 of a state probe on the frozen encoder.
pub fn state_probe_loss(cfg: &DeskConfig, encoder: &Encoder<f32>, data: &Dataset, seed: u64) -> Result<f64> {
    let train: Vec<&Trajectory> = data.train().iter().collect();
    let val: Vec<&Trajectory> = data.val().iter().collect();
    let pc = StateProbeConfig {
        seed,
        ..cfg.state_probe.clone()
    };
    Ok(train_state_probe(encoder, &train, &val, &pc)?.final_val)
}

/// Per-task rollout success of behavior-cloning probes on the frozen encoder,
/// one probe per task trained on that task's demonstrations.
pub fn bc_probe_success(cfg: &DeskConfig, encoder: &Encoder<f32>, data: &Dataset, seed: u64) -> Result<Vec<f64>> {
    let sim = data.sim();
    let stats = &data.manifest.action_stats;
    let pc = BcProbeConfig {
        seed,
        ..cfg.bc_probe.clone()
    };
    let mut rates = Vec::new();
    for task in cfg.data_config(0, 0, 0.0).task_list()? {
        let demos = demos_of(&data.trajectories, &task);
        let res = train_bc_probe(encoder, &demos, stats, &pc)?;
        let policy = ProbePolicy {
            encoder,
            head: &res.head,
            stats,
        };
        let report = rollout_eval(&sim, &policy, &[task], pc.n_rollouts, pc.episode_cap, seed)?;
        rates.push(report.aggregate);
    }
    Ok(rates)
}

/// Cosine-metric ρ_partial per named encoder, all on one shared pair set.
pub fn cosine_alignment(cfg: &DeskConfig, analysis: &Dataset, encoders: &[(String, &Encoder<f32>)], seed: u64) -> Result<Vec<Option<f64>>> {
    let trajs: Vec<&Trajectory> = analysis.trajectories.iter().collect();
    let ac = AlignConfig {
        seed,
        ..cfg.align.clone()
    };
    let report = alignment_report(&trajs, encoders, &ac)?;
    Ok(encoders.iter().map(|(name, _)| report.rho(name, "cosine")).collect())
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}
