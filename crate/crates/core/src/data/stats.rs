use serde::{Deserialize, Serialize};

use super::Trajectory;
use crate::error::{Error, Result};
use crate::sim::MOTION_DIM;

/// Floor applied to per-dimension standard deviations.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-dimension motion statistics (gripper excluded).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionStats {
    pub mean: [f64; MOTION_DIM],
    /// Population standard deviation, floored at [`STD_FLOOR`].
    pub std: [f64; MOTION_DIM],
    /// Dimensions whose raw deviation fell below the floor.
    pub floored: [bool; MOTION_DIM],
}

impl ActionStats {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; MOTION_DIM],
            std: [1.0; MOTION_DIM],
            floored: [false; MOTION_DIM],
        }
    }

    pub fn normalize(&self, d: usize, v: f64) -> f64 {
        (v - self.mean[d]) / self.std[d]
    }

    pub fn denormalize(&self, d: usize, v: f64) -> f64 {
        v * self.std[d] + self.mean[d]
    }
}

pub fn compute_action_stats(trajs: &[Trajectory]) -> Result<ActionStats> {
    let n: usize = trajs.iter().map(|t| t.len()).sum();
    if n == 0 {
        return Err(Error::Input("cannot compute statistics of an empty dataset".into()));
    }
    let mut mean = [0.0; MOTION_DIM];
    for a in trajs.iter().flat_map(|t| &t.actions) {
        for d in 0..MOTION_DIM {
            mean[d] += a[d] as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = [0.0; MOTION_DIM];
    for a in trajs.iter().flat_map(|t| &t.actions) {
        for d in 0..MOTION_DIM {
            let e = a[d] as f64 - mean[d];
            var[d] += e * e;
        }
    }
    let raw = var.map(|v| (v / n as f64).sqrt());
    Ok(ActionStats {
        mean,
        std: raw.map(|s| s.max(STD_FLOOR)),
        floored: raw.map(|s| s < STD_FLOOR),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tests::toy_trajectory;

    #[test]
    fn identical_actions_hit_the_floor() {
        let mut t = toy_trajectory(4);
        t.actions = vec![[0.02, 0.0, -0.01, 0.0, 0.0, 0.03, 1.0]; 4];
        let s = compute_action_stats(&[t]).unwrap();
        assert_eq!(s.std, [STD_FLOOR; 6]);
        assert_eq!(s.floored, [true; 6]);
    }

    #[test]
    fn two_action_closed_form() {
        let mut t = toy_trajectory(2);
        t.actions = vec![
            [0.5, 1.0, 0.0, 0.0, 0.0, -2.0, 1.0],
            [-0.25, 3.0, 0.0, 0.0, 0.0, 2.0, 0.0],
        ];
        let s = compute_action_stats(&[t.clone()]).unwrap();
        // mean = (a + b) / 2, population std = |a - b| / 2
        assert_eq!(s.mean[0], 0.125);
        assert_eq!(s.std[0], 0.375);
        assert_eq!(s.mean[1], 2.0);
        assert_eq!(s.std[1], 1.0);
        assert_eq!(s.mean[5], 0.0);
        assert_eq!(s.std[5], 2.0);
        assert!(s.floored[2]);
        assert_eq!(s, compute_action_stats(&[t]).unwrap());
    }

    #[test]
    fn empty_is_an_error() {
        assert!(compute_action_stats(&[]).is_err());
    }
}
