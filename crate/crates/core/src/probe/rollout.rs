//! Closed-loop evaluation: execute the first action of each predicted
//! chunk, re-plan every step, and count successes.

use std::cell::OnceCell;

use rand::Rng;
use serde::Serialize;

use crate::error::Result;
use crate::par;
use crate::seed;
use crate::sim::{Action, Instruction, Observation, Sim, TaskChoice, WorldState};
use crate::train::LearnedPolicy;

/// Everything a policy may look at for one decision. The observation is
/// rendered on first access only.
pub struct StepContext<'a> {
    pub sim: &'a Sim,
    pub state: &'a WorldState,
    pub instruction: &'a Instruction,
    pub episode_seed: u64,
    pub t: usize,
    obs: OnceCell<Observation>,
}

impl StepContext<'_> {
    pub fn observation(&self) -> &Observation {
        self.obs.get_or_init(|| self.sim.observe(self.state))
    }
}

pub trait RolloutPolicy: Sync {
    fn act(&self, ctx: &StepContext<'_>) -> Result<Action>;
}

/// Privileged scripted expert.
pub struct ExpertPolicy;

impl RolloutPolicy for ExpertPolicy {
    fn act(&self, ctx: &StepContext<'_>) -> Result<Action> {
        ctx.sim.expert_action(ctx.state, ctx.instruction)
    }
}

/// Uniform random motion within the cap and a fair-coin gripper.
pub struct RandomPolicy {
    pub seed: u64,
}

impl RolloutPolicy for RandomPolicy {
    fn act(&self, ctx: &StepContext<'_>) -> Result<Action> {
        let mut rng = seed::rng(seed::derive(seed::derive(self.seed, ctx.episode_seed), ctx.t as u64));
        let cap = ctx.sim.cfg.motion_cap;
        let mut m = [0.0; 6];
        m.iter_mut().for_each(|v| *v = rng.gen_range(-cap..=cap));
        Ok(Action::new([m[0], m[1], m[2]], [m[3], m[4], m[5]], rng.gen()))
    }
}

impl RolloutPolicy for LearnedPolicy {
    fn act(&self, ctx: &StepContext<'_>) -> Result<Action> {
        LearnedPolicy::act(self, ctx.observation(), ctx.instruction)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskSuccess {
    pub task: String,
    pub successes: usize,
    pub rollouts: usize,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RolloutReport {
    pub tasks: Vec<TaskSuccess>,
    /// Success fraction over all rollouts of all tasks.
    pub aggregate: f64,
}

/// Seed of rollout `i` of `task`; shared by every policy under comparison.
pub fn episode_seed(seed_value: u64, task: &Instruction, i: usize) -> u64 {
    seed::derive(seed::named(seed_value, &format!("rollout/{}", task.slug())), i as u64)
}

/// Runs one episode and reports whether the task was solved within `cap` steps.
pub fn run_episode(sim: &Sim, policy: &dyn RolloutPolicy, task: &Instruction, ep_seed: u64, cap: usize) -> Result<bool> {
    Ok(episode_trace(sim, policy, task, ep_seed, cap)?.0)
}

/// Like [`run_episode`], also returning the executed actions.
pub fn episode_trace(
    sim: &Sim,
    policy: &dyn RolloutPolicy,
    task: &Instruction,
    ep_seed: u64,
    cap: usize,
) -> Result<(bool, Vec<Action>)> {
    let (mut state, instr) = sim.reset(ep_seed, TaskChoice::Fixed(*task));
    let mut actions = Vec::new();
    for t in 0..cap {
        if sim.is_success(&state, &instr) {
            return Ok((true, actions));
        }
        let ctx = StepContext {
            sim,
            state: &state,
            instruction: &instr,
            episode_seed: ep_seed,
            t,
            obs: OnceCell::new(),
        };
        let action = policy.act(&ctx)?;
        state = sim.step(&state, &action)?;
        actions.push(action);
    }
    Ok((sim.is_success(&state, &instr), actions))
}

/// `n_rollouts` seeded episodes per task, run in parallel.
pub fn rollout_eval(
    sim: &Sim,
    policy: &dyn RolloutPolicy,
    tasks: &[Instruction],
    n_rollouts: usize,
    cap: usize,
    seed_value: u64,
) -> Result<RolloutReport> {
    let jobs: Vec<(usize, u64)> = tasks
        .iter()
        .enumerate()
        .flat_map(|(k, task)| (0..n_rollouts).map(move |i| (k, episode_seed(seed_value, task, i))))
        .collect();
    let outcomes = par::try_map_range(jobs.len(), |j| {
        let (k, s) = jobs[j];
        run_episode(sim, policy, &tasks[k], s, cap)
    })?;
    let mut report = Vec::with_capacity(tasks.len());
    for (k, task) in tasks.iter().enumerate() {
        let successes = jobs.iter().zip(&outcomes).filter(|((kk, _), ok)| *kk == k && **ok).count();
        report.push(TaskSuccess {
            task: task.slug(),
            successes,
            rollouts: n_rollouts,
            success_rate: if n_rollouts == 0 { 0.0 } else { successes as f64 / n_rollouts as f64 },
        });
    }
    let total = outcomes.len();
    let aggregate = if total == 0 {
        0.0
    } else {
        outcomes.iter().filter(|o| **o).count() as f64 / total as f64
    };
    Ok(RolloutReport { tasks: report, aggregate })
}
