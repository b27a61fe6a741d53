//! Property suite: PTR algebra, gradient checks, the partial Spearman
//! oracle, simulator pose additivity and inference parity.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::align::partial_spearman;
use crate::data::{generate, ptr_reverse, ActionRow, DataConfig, InvDynSample};
use crate::error::Result;
use crate::nn::{EncoderConfig, InvDynConfig, PolicyConfig};
use crate::probe::{episode_seed, episode_trace};
use crate::seed;
use crate::sim::{Action, Instruction, Sim, SimConfig, TaskChoice, ACTION_DIM, MOTION_DIM};
use crate::train::{grad_check, train_policy, Component, TrainConfig, Variant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyConfig {
    pub ptr_samples: usize,
    pub grad_trials: usize,
    pub grad_tolerance: f64,
    pub oracle_instances: usize,
    pub oracle_n: usize,
    pub oracle_tolerance: f64,
    pub pose_rollouts: usize,
    pub pose_tolerance: f64,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            ptr_samples: 10_000,
            grad_trials: 5,
            grad_tolerance: 1e-3,
            oracle_instances: 100,
            oracle_n: 200,
            oracle_tolerance: 1e-10,
            pose_rollouts: 1000,
            pose_tolerance: 1e-9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            passed,
            detail,
        }
    }
}

fn random_chunk<R: Rng>(rng: &mut R, horizon: usize, cap: f32) -> Vec<ActionRow> {
    (0..horizon)
        .map(|_| {
            let mut a = [0.0; ACTION_DIM];
            for v in &mut a[..MOTION_DIM] {
                *v = rng.gen_range(-cap..=cap);
            }
            a[MOTION_DIM] = if rng.gen::<bool>() { 1.0 } else { 0.0 };
            a
        })
        .collect()
}

/// Involution, gripper-order reversal and motion-sum negation, all exact.
pub fn check_ptr(cfg: &VerifyConfig) -> CheckOutcome {
    let sim = Sim::new(SimConfig {
        image_size: 8,
        ..SimConfig::default()
    });
    let obs: Vec<_> = (0..4).map(|s| sim.observe(&sim.reset(s, TaskChoice::Random).0)).collect();
    let mut rng = seed::rng(seed::named(cfg.seed, "verify/ptr"));
    let mut failures = 0;
    for i in 0..cfg.ptr_samples {
        let h = rng.gen_range(1..=16);
        let s = InvDynSample {
            obs_first: &obs[i % 4],
            obs_second: &obs[(i + 1) % 4],
            chunk: random_chunk(&mut rng, h, 1.0),
            reversed: rng.gen(),
            source: (i, 0),
        };
        let r = ptr_reverse(&s);
        let involution = ptr_reverse(&r) == s;
        let gripper = (0..h).all(|k| r.chunk[k][MOTION_DIM] == s.chunk[h - 1 - k][MOTION_DIM]);
        // Summing r back to front visits the negated entries of s in order,
        // so the two sums round identically.
        let sums = (0..MOTION_DIM).all(|d| {
            let fwd: f32 = s.chunk.iter().map(|a| a[d]).sum();
            let rev: f32 = r.chunk.iter().rev().map(|a| a[d]).sum();
            rev == -fwd
        });
        let swapped = r.obs_first == s.obs_second && r.obs_second == s.obs_first;
        if !(involution && gripper && sums && swapped) {
            failures += 1;
        }
    }
    CheckOutcome::new(
        "ptr",
        failures == 0,
        format!("{} samples, {failures} violations", cfg.ptr_samples),
    )
}

pub fn check_gradients(cfg: &VerifyConfig) -> Result<Vec<CheckOutcome>> {
    Component::ALL
        .into_iter()
        .map(|c| {
            let rep = grad_check(c, cfg.grad_trials, cfg.seed)?;
            Ok(CheckOutcome::new(
                &format!("grad/{c}"),
                rep.max_rel_err <= cfg.grad_tolerance,
                format!("{} trials, max relative error {:.3e}", rep.trials, rep.max_rel_err),
            ))
        })
        .collect()
}

/// Definitional partial Spearman: quadratic-time average ranks, explicit
/// normal equations, textbook Pearson.
pub fn oracle_partial_spearman(feat: &[f64], pose: &[f64], pix: &[f64]) -> f64 {
    fn rank(x: &[f64]) -> Vec<f64> {
        x.iter()
            .map(|&v| {
                let less = x.iter().filter(|&&u| u < v).count() as f64;
                let equal = x.iter().filter(|&&u| u == v).count() as f64;
                less + (equal + 1.0) / 2.0
            })
            .collect()
    }
    fn resid(y: &[f64], x: &[f64]) -> Vec<f64> {
        let n = y.len() as f64;
        let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
        let sxx: f64 = x.iter().map(|v| v * v).sum();
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        let det = n * sxx - sx * sx;
        let (a, b) = if det.abs() < 1e-12 {
            (sy / n, 0.0)
        } else {
            ((sxx * sy - sx * sxy) / det, (n * sxy - sx * sy) / det)
        };
        y.iter().zip(x).map(|(yi, xi)| yi - a - b * xi).collect()
    }
    let rx = rank(pix);
    let a = resid(&rank(feat), &rx);
    let b = resid(&rank(pose), &rx);
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Oracle agreement plus exact invariance under strictly increasing maps.
pub fn check_partial_spearman(cfg: &VerifyConfig) -> Result<Vec<CheckOutcome>> {
    let mut rng = seed::rng(seed::named(cfg.seed, "verify/spearman"));
    let mut worst = 0.0f64;
    let mut invariant = true;
    let increasing: [fn(f64) -> f64; 3] = [|x| x.exp(), |x| x * x * x + 2.0 * x, |x| 3.0 * x - 1.0];
    for _ in 0..cfg.oracle_instances {
        let n = cfg.oracle_n;
        let pose: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let feat: Vec<f64> = pose.iter().map(|p| p + rng.gen_range(-0.5..0.5)).collect();
        // coarse pixel control so ties are exercised
        let pix: Vec<f64> = pose.iter().map(|p| ((p + rng.gen_range(0.0..0.5)) * 20.0).round() / 20.0).collect();
        let rho = partial_spearman(&feat, &pose, &pix)?;
        worst = worst.max((rho - oracle_partial_spearman(&feat, &pose, &pix)).abs());
        for f in increasing {
            let m = |v: &[f64]| v.iter().map(|x| f(*x)).collect::<Vec<_>>();
            invariant &= partial_spearman(&m(&feat), &pose, &pix)? == rho;
            invariant &= partial_spearman(&feat, &m(&pose), &pix)? == rho;
            invariant &= partial_spearman(&feat, &pose, &m(&pix))? == rho;
        }
    }
    Ok(vec![
        CheckOutcome::new(
            "spearman/oracle",
            worst <= cfg.oracle_tolerance,
            format!("{} instances of n={}, max |Δ| {worst:.3e}", cfg.oracle_instances, cfg.oracle_n),
        ),
        CheckOutcome::new(
            "spearman/monotone",
            invariant,
            "exp, cubic and affine maps on each input".into(),
        ),
    ])
}

/// Pose change equals the summed motion offsets on rollouts that stay clear
/// of every clamp and angle wrap.
pub fn check_pose_additivity(cfg: &VerifyConfig) -> Result<CheckOutcome> {
    let sim = Sim::new(SimConfig {
        image_size: 8,
        ..SimConfig::default()
    });
    let mut rng = seed::rng(seed::named(cfg.seed, "verify/pose"));
    let step_cap = sim.cfg.motion_cap / 4.0;
    let mut worst = 0.0f64;
    for r in 0..cfg.pose_rollouts {
        let (mut state, _) = sim.reset(r as u64, TaskChoice::Random);
        state.ee.x = 0.5;
        state.ee.y = 0.5;
        state.ee.z = sim.cfg.z_max / 2.0;
        state.ee.phi = 0.0;
        state.ee.theta = 0.0;
        state.ee.psi = 0.0;
        // 8 steps of at most cap/4 keep x, y within (0.4, 0.6), z within the
        // workspace and angles far from ±π.
        let start = state.ee.to_array();
        let mut sum = [0.0; MOTION_DIM];
        for _ in 0..8 {
            let mut m = [0.0; MOTION_DIM];
            m.iter_mut().for_each(|v| *v = rng.gen_range(-step_cap..=step_cap));
            let a = Action::new([m[0], m[1], m[2]], [m[3], m[4], m[5]], rng.gen());
            state = sim.step(&state, &a)?;
            for d in 0..MOTION_DIM {
                sum[d] += m[d];
            }
        }
        let end = state.ee.to_array();
        for d in 0..MOTION_DIM {
            worst = worst.max((end[d] - start[d] - sum[d]).abs());
        }
    }
    Ok(CheckOutcome::new(
        "sim/pose-additivity",
        worst <= cfg.pose_tolerance,
        format!("{} rollouts, max abs error {worst:.3e}", cfg.pose_rollouts),
    ))
}

/// Rollouts of a briefly trained aux-ptr policy are bit-identical with and
/// without the inverse-dynamics head in the checkpoint.
pub fn check_inference_parity(cfg: &VerifyConfig) -> Result<CheckOutcome> {
    let data = generate(&DataConfig {
        n_traj: 6,
        seed: cfg.seed,
        tasks: vec!["pick-red".into(), "place-blue-left".into()],
        sim: SimConfig {
            image_size: 16,
            ..SimConfig::default()
        },
        ..DataConfig::default()
    })?;
    let tc = TrainConfig {
        horizon: 4,
        steps: 10,
        batch: 4,
        seed: cfg.seed,
        encoder: EncoderConfig {
            image_size: 16,
            patch: 4,
            channels: 8,
            depth: 1,
            seed: 0,
        },
        policy: PolicyConfig {
            hidden: 16,
            instr_dim: 4,
            ..PolicyConfig::default()
        },
        invdyn: InvDynConfig {
            dec_dim: 8,
            hidden: 16,
            ..InvDynConfig::default()
        },
        ..TrainConfig::default()
    }
    .with_variant(Variant::AuxPtr);
    let (ckpt, _) = train_policy(tc, &data)?;
    let stripped = ckpt.stripped();
    let (full, lean) = (ckpt.policy()?, stripped.policy()?);
    let sim = data.sim();
    let mut identical = ckpt.invdyn.is_some() && stripped.invdyn.is_none();
    let mut steps = 0;
    for task in ["pick-red", "place-blue-left"] {
        let task: Instruction = task.parse()?;
        for i in 0..3 {
            let s = episode_seed(cfg.seed, &task, i);
            let a = episode_trace(&sim, &full, &task, s, 30)?;
            let b = episode_trace(&sim, &lean, &task, s, 30)?;
            steps += a.1.len();
            identical &= a == b;
        }
    }
    Ok(CheckOutcome::new(
        "inference-parity",
        identical,
        format!("6 episodes, {steps} actions compared"),
    ))
}

/// Runs every check in a fixed order.
pub fn run_all(cfg: &VerifyConfig) -> Result<Vec<CheckOutcome>> {
    let mut out = vec![check_ptr(cfg)];
    out.extend(check_gradients(cfg)?);
    out.extend(check_partial_spearman(cfg)?);
    out.push(check_pose_additivity(cfg)?);
    out.push(check_inference_parity(cfg)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_matches_hand_value() {
        // feat = pose, constant control: residuals are the centred ranks.
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert!((oracle_partial_spearman(&x, &x, &[0.0; 5]) - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((oracle_partial_spearman(&neg, &x, &[0.0; 5]) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn reduced_suite_passes() {
        let cfg = VerifyConfig {
            ptr_samples: 500,
            grad_trials: 1,
            oracle_instances: 5,
            oracle_n: 40,
            pose_rollouts: 50,
            ..VerifyConfig::default()
        };
        for c in run_all(&cfg).unwrap() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
