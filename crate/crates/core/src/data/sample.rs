//! Inverse-dynamics samples and pseudo time reversal.

use rand::Rng;

use super::{ActionRow, Trajectory};
use crate::error::{Error, Result};
use crate::sim::{Observation, MOTION_DIM};

/// Observation pair with the action chunk that connects them.
#[derive(Debug, Clone, PartialEq)]
pub struct InvDynSample<'a> {
    pub obs_first: &'a Observation,
    pub obs_second: &'a Observation,
    pub chunk: Vec<ActionRow>,
    pub reversed: bool,
    /// `(trajectory id, t)` of the forward sample.
    pub source: (usize, usize),
}

/// Forward sample `(o_t, o_{t+h}, a_t .. a_{t+h-1})`.
pub fn make_invdyn_sample(traj: &Trajectory, t: usize, horizon: usize) -> Result<InvDynSample<'_>> {
    let len = traj.len();
    if horizon == 0 || t + horizon + 1 > len {
        return Err(Error::Index {
            index: t,
            detail: format!("need t + {horizon} <= {} for a trajectory of length {len}", len.saturating_sub(1)),
        });
    }
    Ok(InvDynSample {
        obs_first: &traj.observations[t],
        obs_second: &traj.observations[t + horizon],
        chunk: traj.actions[t..t + horizon].to_vec(),
        reversed: false,
        source: (traj.id, t),
    })
}

/// Negates the motion offsets of one action, keeping its gripper value.
pub fn dagger(a: &ActionRow) -> ActionRow {
    let mut out = *a;
    for v in &mut out[..MOTION_DIM] {
        *v = -*v;
    }
    out
}

/// Swaps the observations and replaces the chunk by its reversed sequence
/// of motion-negated actions.
pub fn ptr_reverse<'a>(s: &InvDynSample<'a>) -> InvDynSample<'a> {
    InvDynSample {
        obs_first: s.obs_second,
        obs_second: s.obs_first,
        chunk: s.chunk.iter().rev().map(dagger).collect(),
        reversed: !s.reversed,
        source: s.source,
    }
}

pub fn check_probability(p_rev: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p_rev) {
        Ok(())
    } else {
        Err(Error::Config(format!("p_rev must lie in [0, 1], got {p_rev}")))
    }
}

/// Reverses `s` with probability `p_rev`. Exactly one uniform draw is taken
/// from `rng` per call.
pub fn maybe_ptr<'a, R: Rng>(s: InvDynSample<'a>, p_rev: f64, rng: &mut R) -> Result<InvDynSample<'a>> {
    check_probability(p_rev)?;
    let u: f64 = rng.gen();
    Ok(if u < p_rev { ptr_reverse(&s) } else { s })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tests::toy_trajectory;
    use crate::seed;

    #[test]
    fn chunk_indexing_and_bounds() {
        let traj = toy_trajectory(5);
        let s = make_invdyn_sample(&traj, 0, 2).unwrap();
        assert_eq!(s.chunk, traj.actions[0..2].to_vec());
        assert_eq!(s.obs_first, &traj.observations[0]);
        assert_eq!(s.obs_second, &traj.observations[2]);
        assert!(!s.reversed);
        // t = T - 1 - H is the last valid start.
        assert!(make_invdyn_sample(&traj, 5 - 1 - 2, 2).is_ok());
        assert!(matches!(
            make_invdyn_sample(&traj, 5 - 2, 2),
            Err(Error::Index { .. })
        ));
    }

    #[test]
    fn reversal_matches_hand_example() {
        let mut traj = toy_trajectory(3);
        traj.actions[0] = [0.10, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        traj.actions[1] = [0.0, 0.20, 0.0, 0.0, 0.0, 0.0, 0.0];
        let s = make_invdyn_sample(&traj, 0, 2).unwrap();
        let r = ptr_reverse(&s);
        assert_eq!(
            r.chunk,
            vec![
                [0.0, -0.20, 0.0, 0.0, 0.0, 0.0, 0.0],
                [-0.10, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]
            ]
        );
        assert_eq!(r.obs_first, s.obs_second);
        assert_eq!(r.obs_second, s.obs_first);
        assert!(r.reversed);
        assert_eq!(ptr_reverse(&r), s);
    }

    #[test]
    fn gripper_only_sequence_reverses() {
        let mut traj = toy_trajectory(3);
        traj.actions[0] = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        traj.actions[1] = [0.0; 7];
        let r = ptr_reverse(&make_invdyn_sample(&traj, 0, 2).unwrap());
        assert_eq!(r.chunk.iter().map(|a| a[6]).collect::<Vec<_>>(), vec![0.0, 1.0]);
        assert!(r.chunk.iter().all(|a| a[..6].iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn probability_extremes_and_rate() {
        let traj = toy_trajectory(4);
        let s = make_invdyn_sample(&traj, 0, 2).unwrap();
        let mut rng = seed::rng(7);
        for _ in 0..100 {
            assert!(!maybe_ptr(s.clone(), 0.0, &mut rng).unwrap().reversed);
            assert!(maybe_ptr(s.clone(), 1.0, &mut rng).unwrap().reversed);
        }
        let n = 10_000;
        let hits = (0..n)
            .filter(|_| maybe_ptr(s.clone(), 0.5, &mut rng).unwrap().reversed)
            .count();
        let frac = hits as f64 / n as f64;
        assert!((frac - 0.5).abs() <= 0.02, "{frac}");
        assert!(matches!(maybe_ptr(s.clone(), 1.5, &mut rng), Err(Error::Config(_))));
        assert!(matches!(maybe_ptr(s, -0.1, &mut rng), Err(Error::Config(_))));
    }
}
