//! Scripted phase controller: approach above the target, descend, close,
//! lift, transport, open.

use super::{wrap_angle, Action, Color, Instruction, Side, SimConfig, WorldState};
use crate::error::{Error, Result};

const HOVER_Z: f64 = 0.12;
const CARRY_Z: f64 = 0.15;
const XY_TOL: f64 = 0.005;
const Z_TOL: f64 = 0.005;
const YAW_TOL: f64 = 0.02;
const PLACE_X: [f64; 2] = [0.15, 0.85];

fn toward(cfg: &SimConfig, state: &WorldState, target: [f64; 3], close: bool) -> Action {
    let cap = cfg.motion_cap;
    let ee = state.ee;
    let lim = |v: f64| v.clamp(-cap, cap);
    Action::new(
        [
            lim(target[0] - ee.x),
            lim(target[1] - ee.y),
            lim(target[2] - ee.z),
        ],
        [lim(-ee.phi), lim(-ee.theta), lim(wrap_angle(-ee.psi))],
        close,
    )
    .quantized()
}

fn still(close: bool) -> Action {
    Action::new([0.0; 3], [0.0; 3], close)
}

fn lateral(state: &WorldState, xy: [f64; 2]) -> f64 {
    (state.ee.x - xy[0]).hypot(state.ee.y - xy[1])
}

fn covered(state: &WorldState, idx: usize) -> bool {
    let b = &state.blocks[idx];
    state.blocks.iter().enumerate().any(|(j, o)| {
        j != idx
            && state.held != Some(j)
            && o.pos[2] > b.pos[2]
            && (o.pos[0] - b.pos[0]).abs() < (o.edge + b.edge) / 2.0
            && (o.pos[1] - b.pos[1]).abs() < (o.edge + b.edge) / 2.0
    })
}

fn find(state: &WorldState, color: Color) -> Result<usize> {
    state
        .block_index(color)
        .ok_or_else(|| Error::TaskInfeasible(format!("no {} block in scene", color.name())))
}

pub(super) fn expert_action(
    cfg: &SimConfig,
    state: &WorldState,
    instr: &Instruction,
) -> Result<Action> {
    let target = find(state, instr.color())?;
    if let Instruction::Stack { color, onto } = instr {
        if color == onto {
            return Err(Error::TaskInfeasible("cannot stack a block on itself".into()));
        }
        find(state, *onto)?;
    }

    if state.held != Some(target) {
        if state.held.is_some() {
            // Holding the wrong block: let go first.
            return Ok(still(false));
        }
        if covered(state, target) {
            return Err(Error::TaskInfeasible(format!(
                "the {} block is covered",
                instr.color().name()
            )));
        }
        let b = state.blocks[target].pos;
        let aligned = lateral(state, [b[0], b[1]]) <= XY_TOL && state.ee.psi.abs() <= YAW_TOL;
        if !aligned {
            return Ok(toward(cfg, state, [b[0], b[1], HOVER_Z.max(b[2] + 0.05)], false));
        }
        if state.ee.z - b[2] > Z_TOL {
            return Ok(toward(cfg, state, [b[0], b[1], b[2]], false));
        }
        return Ok(still(true));
    }

    let edge = state.blocks[target].edge;
    let (goal, drop_z) = match instr {
        Instruction::Pick { .. } => {
            return Ok(toward(cfg, state, [state.ee.x, state.ee.y, CARRY_Z], true));
        }
        Instruction::Stack { onto, .. } => {
            let base = &state.blocks[find(state, *onto)?];
            (
                [base.pos[0], base.pos[1]],
                base.pos[2] + (base.edge + edge) / 2.0,
            )
        }
        Instruction::Place { side, .. } => {
            let x = match side {
                Side::Left => PLACE_X[0],
                Side::Right => PLACE_X[1],
            };
            ([x, state.ee.y], edge / 2.0)
        }
    };
    if lateral(state, goal) > XY_TOL {
        return Ok(toward(cfg, state, [goal[0], goal[1], CARRY_Z], true));
    }
    if state.ee.z - drop_z > Z_TOL {
        return Ok(toward(cfg, state, [goal[0], goal[1], drop_z], true));
    }
    Ok(still(false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{Sim, TaskChoice};

    #[test]
    fn far_target_gives_capped_motion_toward_it() {
        let sim = Sim::default();
        let (mut st, _) = sim.reset(1, TaskChoice::Random);
        let instr = Instruction::Pick { color: Color::Red };
        let b = st.blocks[0].pos;
        st.ee.x = (b[0] - 0.3).max(0.0);
        let a = sim.expert_action(&st, &instr).unwrap();
        assert!(a.d_pos[0] > 0.0);
        assert!((a.d_pos[0] - 0.05).abs() < 1e-9);
        assert!(!a.close);
    }

    #[test]
    fn aligned_above_target_descends() {
        let sim = Sim::default();
        let (mut st, _) = sim.reset(1, TaskChoice::Random);
        let instr = Instruction::Pick { color: Color::Blue };
        let b = st.blocks[1].pos;
        st.ee.x = b[0];
        st.ee.y = b[1];
        st.ee.z = 0.15;
        st.ee.psi = 0.0;
        let a = sim.expert_action(&st, &instr).unwrap();
        assert!(a.d_pos[2] < 0.0);
        assert_eq!(a.d_pos[0], 0.0);
    }

    #[test]
    fn picking_covered_block_is_infeasible() {
        let sim = Sim::default();
        let (mut st, _) = sim.reset(1, TaskChoice::Random);
        let base = st.blocks[1].pos;
        st.blocks[0].pos = [base[0], base[1], base[2] + st.blocks[0].edge];
        let instr = Instruction::Pick { color: Color::Blue };
        assert!(matches!(
            sim.expert_action(&st, &instr),
            Err(Error::TaskInfeasible(_))
        ));
    }

    #[test]
    fn expert_solves_nearly_all_episodes() {
        let sim = Sim::default();
        let episodes = 200;
        let mut ok = 0;
        for seed in 0..episodes {
            let (mut st, instr) = sim.reset(seed, TaskChoice::Random);
            for _ in 0..200 {
                if sim.is_success(&st, &instr) {
                    break;
                }
                let a = sim.expert_action(&st, &instr).unwrap();
                assert!(a.motion().iter().all(|v| v.abs() <= 0.05 * (1.0 + 1e-6)));
                st = sim.step(&st, &a).unwrap();
            }
            ok += sim.is_success(&st, &instr) as usize;
        }
        assert!(ok as f64 >= 0.95 * episodes as f64, "{ok}/{episodes}");
    }
}
