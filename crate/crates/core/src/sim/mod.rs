//! Deterministic kinematic tabletop: an end-effector with a parallel gripper
//! above two blocks, observed through a top-down camera and a wrist camera.
//!
//! Actions integrate directly into the pose, so the pose change over any
//! clamp-free, wrap-free segment is exactly the sum of the applied motion
//! offsets.

mod expert;
mod geometry;
mod render;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use geometry::{axis_angle, wrap_angle};
pub use render::{Image, Observation, View};

/// Action dimensionality: six motion offsets and a gripper command.
pub const ACTION_DIM: usize = 7;
/// Motion dimensions of an action.
pub const MOTION_DIM: usize = 6;
/// Proprioceptive state dimensionality.
pub const STATE_DIM: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Side length of rendered square images, in pixels.
    pub image_size: usize,
    /// Per-component cap on motion offsets per step.
    pub motion_cap: f64,
    pub attach_radius: f64,
    pub gripper_max: f64,
    pub block_edge: f64,
    pub z_max: f64,
    /// Block height above which a pick counts as lifted.
    pub lift_height: f64,
    pub stack_tolerance: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            motion_cap: 0.05,
            attach_radius: 0.04,
            gripper_max: 0.08,
            block_edge: 0.05,
            z_max: 0.2,
            lift_height: 0.1,
            stack_tolerance: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EEPose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub phi: f64,
    pub theta: f64,
    pub psi: f64,
}

impl EEPose {
    pub fn to_array(&self) -> [f64; 6] {
        [self.x, self.y, self.z, self.phi, self.theta, self.psi]
    }

    pub fn position(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

/// Relative end-effector command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub d_pos: [f64; 3],
    pub d_rot: [f64; 3],
    /// `true` closes the gripper (g = 1), `false` opens it (g = 0).
    pub close: bool,
}

impl Action {
    pub fn new(d_pos: [f64; 3], d_rot: [f64; 3], close: bool) -> Self {
        Self { d_pos, d_rot, close }
    }

    pub fn motion(&self) -> [f64; 6] {
        let [a, b, c] = self.d_pos;
        let [d, e, f] = self.d_rot;
        [a, b, c, d, e, f]
    }

    pub fn gripper(&self) -> f64 {
        if self.close {
            1.0
        } else {
            0.0
        }
    }

    pub fn to_array(&self) -> [f64; ACTION_DIM] {
        let m = self.motion();
        [m[0], m[1], m[2], m[3], m[4], m[5], self.gripper()]
    }

    /// Builds an action from a 7-vector; the gripper entry is thresholded at 0.5.
    pub fn from_array(a: &[f64; ACTION_DIM]) -> Self {
        Self {
            d_pos: [a[0], a[1], a[2]],
            d_rot: [a[3], a[4], a[5]],
            close: a[6] >= 0.5,
        }
    }

    /// Rounds every motion component to the nearest `f32`, so the action
    /// survives storage as 32-bit floats unchanged.
    pub fn quantized(&self) -> Self {
        let q = |v: f64| v as f32 as f64;
        Self {
            d_pos: self.d_pos.map(q),
            d_rot: self.d_rot.map(q),
            close: self.close,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.motion().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Blue,
}

impl Color {
    pub const ALL: [Color; 2] = [Color::Red, Color::Blue];

    pub fn name(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Blue => "blue",
        }
    }

    fn other(self) -> Color {
        match self {
            Color::Red => Color::Blue,
            Color::Blue => Color::Red,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub color: Color,
    pub pos: [f64; 3],
    pub edge: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub ee: EEPose,
    pub gripper_width: f64,
    /// Index into `blocks` of the held block.
    pub held: Option<usize>,
    pub blocks: Vec<Block>,
    /// Seed the state was reset from.
    pub rng_tag: u64,
}

impl WorldState {
    pub fn block_index(&self, color: Color) -> Option<usize> {
        self.blocks.iter().position(|b| b.color == color)
    }

    fn block(&self, color: Color) -> Result<&Block> {
        self.block_index(color)
            .map(|i| &self.blocks[i])
            .ok_or_else(|| Error::TaskInfeasible(format!("no {} block in scene", color.name())))
    }
}

/// Templated language instruction over the closed toy vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "template", rename_all = "lowercase")]
pub enum Instruction {
    Pick { color: Color },
    Stack { color: Color, onto: Color },
    Place { color: Color, side: Side },
}

impl Instruction {
    pub const TEMPLATE_COUNT: u8 = 3;

    /// Builds an instruction from a template id and its slots.
    /// Template 0 is pick, 1 is stack (`onto` = the other color), 2 is place.
    pub fn from_parts(template: u8, color: Color, side: Side) -> Result<Self> {
        match template {
            0 => Ok(Instruction::Pick { color }),
            1 => Ok(Instruction::Stack {
                color,
                onto: color.other(),
            }),
            2 => Ok(Instruction::Place { color, side }),
            t => Err(Error::Config(format!(
                "unknown template id {t} (expected 0..{})",
                Self::TEMPLATE_COUNT
            ))),
        }
    }

    /// Color of the block the instruction manipulates.
    pub fn color(&self) -> Color {
        match self {
            Instruction::Pick { color }
            | Instruction::Stack { color, .. }
            | Instruction::Place { color, .. } => *color,
        }
    }

    pub fn template_id(&self) -> u8 {
        match self {
            Instruction::Pick { .. } => 0,
            Instruction::Stack { .. } => 1,
            Instruction::Place { .. } => 2,
        }
    }

    pub fn text(&self) -> String {
        match self {
            Instruction::Pick { color } => format!("pick up the {} block", color.name()),
            Instruction::Stack { color, onto } => {
                format!("stack the {} block on the {} block", color.name(), onto.name())
            }
            Instruction::Place { color, side } => {
                format!("move the {} block to the {}", color.name(), side.name())
            }
        }
    }

    /// Every instruction the toy world can express, in a fixed order.
    pub fn vocabulary() -> Vec<Instruction> {
        let mut out = Vec::new();
        for c in Color::ALL {
            out.push(Instruction::Pick { color: c });
        }
        for c in Color::ALL {
            out.push(Instruction::Stack {
                color: c,
                onto: c.other(),
            });
        }
        for c in Color::ALL {
            for side in [Side::Left, Side::Right] {
                out.push(Instruction::Place { color: c, side });
            }
        }
        out
    }

    pub fn vocab_index(&self) -> Option<usize> {
        Self::vocabulary().iter().position(|i| i == self)
    }

    /// Short stable identifier, e.g. `pick-red` or `place-blue-left`.
    pub fn slug(&self) -> String {
        match self {
            Instruction::Pick { color } => format!("pick-{}", color.name()),
            Instruction::Stack { color, onto } => {
                format!("stack-{}-{}", color.name(), onto.name())
            }
            Instruction::Place { color, side } => {
                format!("place-{}-{}", color.name(), side.name())
            }
        }
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text())
    }
}

impl FromStr for Instruction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::vocabulary()
            .into_iter()
            .find(|i| i.slug() == s)
            .ok_or_else(|| Error::Config(format!("unknown task `{s}`")))
    }
}

/// How `reset` chooses the task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TaskChoice {
    Fixed(Instruction),
    /// Uniform over the instruction vocabulary.
    Random,
}

/// End-effector position, axis-angle orientation and symmetric finger
/// openings.
pub type StateVec8 = [f64; STATE_DIM];

#[derive(Debug, Clone, Default)]
pub struct Sim {
    pub cfg: SimConfig,
}

const PLACE_LEFT_MAX: f64 = 0.25;
const PLACE_RIGHT_MIN: f64 = 0.75;
const REST_TOLERANCE: f64 = 1e-3;

impl Sim {
    pub fn new(cfg: SimConfig) -> Self {
        Self { cfg }
    }

    /// Seeded initial state: random end-effector pose, two non-overlapping
    /// resting blocks, open gripper.
    pub fn reset(&self, seed: u64, task: TaskChoice) -> (WorldState, Instruction) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ee = EEPose {
            x: rng.gen_range(0.1..0.9),
            y: rng.gen_range(0.1..0.9),
            z: rng.gen_range(0.08..self.cfg.z_max),
            phi: 0.0,
            theta: 0.0,
            psi: rng.gen_range(-PI / 4.0..PI / 4.0),
        };
        let edge = self.cfg.block_edge;
        let min_sep = (2.4 * edge).max(edge + 2.0 * self.cfg.attach_radius);
        let first: [f64; 2] = [rng.gen_range(0.35..0.65), rng.gen_range(0.2..0.8)];
        let second = loop {
            let c: [f64; 2] = [rng.gen_range(0.35..0.65), rng.gen_range(0.2..0.8)];
            if (c[0] - first[0]).hypot(c[1] - first[1]) >= min_sep {
                break c;
            }
        };
        let blocks = [first, second]
            .iter()
            .zip(Color::ALL)
            .map(|(c, color)| Block {
                color,
                pos: [c[0], c[1], edge / 2.0],
                edge,
            })
            .collect();
        let instr = match task {
            TaskChoice::Fixed(i) => i,
            TaskChoice::Random => {
                let vocab = Instruction::vocabulary();
                vocab[rng.gen_range(0..vocab.len())]
            }
        };
        let state = WorldState {
            ee,
            gripper_width: self.cfg.gripper_max,
            held: None,
            blocks,
            rng_tag: seed,
        };
        (state, instr)
    }

    /// Applies one action. Motion offsets are saturated at the per-step cap,
    /// positions clamped to the workspace and angles wrapped.
    pub fn step(&self, state: &WorldState, action: &Action) -> Result<WorldState> {
        if !action.is_finite() {
            return Err(Error::Input(format!("non-finite action {action:?}")));
        }
        let cap = self.cfg.motion_cap;
        let m = action.motion().map(|v| v.clamp(-cap, cap));
        let mut next = state.clone();
        let ee = &mut next.ee;
        ee.x = (ee.x + m[0]).clamp(0.0, 1.0);
        ee.y = (ee.y + m[1]).clamp(0.0, 1.0);
        ee.z = (ee.z + m[2]).clamp(0.0, self.cfg.z_max);
        ee.phi = wrap_angle(ee.phi + m[3]);
        ee.theta = wrap_angle(ee.theta + m[4]);
        ee.psi = wrap_angle(ee.psi + m[5]);

        if action.close {
            if next.held.is_none() {
                next.held = self.attach_candidate(&next);
            }
            next.gripper_width = match next.held {
                Some(i) => next.blocks[i].edge.min(self.cfg.gripper_max),
                None => 0.0,
            };
        } else {
            if let Some(i) = next.held.take() {
                let z = self.rest_height(&next, i);
                next.blocks[i].pos[2] = z;
            }
            next.gripper_width = self.cfg.gripper_max;
        }
        if let Some(i) = next.held {
            next.blocks[i].pos = next.ee.position();
        }
        Ok(next)
    }

    fn attach_candidate(&self, state: &WorldState) -> Option<usize> {
        let r = self.cfg.attach_radius;
        let ee = state.ee;
        state
            .blocks
            .iter()
            .enumerate()
            .filter_map(|(i, b)| {
                let lateral = (b.pos[0] - ee.x).hypot(b.pos[1] - ee.y);
                let vertical = (b.pos[2] - ee.z).abs();
                (lateral <= r && vertical <= r).then_some((i, lateral.hypot(vertical)))
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
    }

    /// Height a released block settles at: on the table, or on top of any
    /// block whose footprint it overlaps.
    fn rest_height(&self, state: &WorldState, idx: usize) -> f64 {
        let b = &state.blocks[idx];
        let mut z = b.edge / 2.0;
        for (j, other) in state.blocks.iter().enumerate() {
            if j == idx {
                continue;
            }
            let reach = (b.edge + other.edge) / 2.0;
            let overlaps =
                (b.pos[0] - other.pos[0]).abs() < reach && (b.pos[1] - other.pos[1]).abs() < reach;
            if overlaps && other.pos[2] < b.pos[2] {
                z = z.max(other.pos[2] + reach);
            }
        }
        z
    }

    pub fn render(&self, state: &WorldState, view: View) -> Image {
        render::render(&self.cfg, state, view)
    }

    /// Renders a view given by name (`static` or `wrist`).
    pub fn render_named(&self, state: &WorldState, view: &str) -> Result<Image> {
        Ok(self.render(state, view.parse()?))
    }

    pub fn observe(&self, state: &WorldState) -> Observation {
        Observation {
            static_view: self.render(state, View::Static),
            wrist: self.render(state, View::Wrist),
        }
    }

    pub fn expert_action(&self, state: &WorldState, instr: &Instruction) -> Result<Action> {
        expert::expert_action(&self.cfg, state, instr)
    }

    pub fn is_success(&self, state: &WorldState, instr: &Instruction) -> bool {
        let Some(idx) = state.block_index(instr.color()) else {
            return false;
        };
        let b = &state.blocks[idx];
        match instr {
            Instruction::Pick { .. } => state.held == Some(idx) && b.pos[2] > self.cfg.lift_height,
            Instruction::Stack { onto, .. } => {
                let Ok(base) = state.block(*onto) else {
                    return false;
                };
                let lateral = (b.pos[0] - base.pos[0]).hypot(b.pos[1] - base.pos[1]);
                let target_z = base.pos[2] + (b.edge + base.edge) / 2.0;
                state.held.is_none()
                    && lateral <= self.cfg.stack_tolerance
                    && (b.pos[2] - target_z).abs() <= REST_TOLERANCE
            }
            Instruction::Place { side, .. } => {
                let on_table = (b.pos[2] - b.edge / 2.0).abs() <= REST_TOLERANCE;
                let in_zone = match side {
                    Side::Left => b.pos[0] < PLACE_LEFT_MAX,
                    Side::Right => b.pos[0] > PLACE_RIGHT_MIN,
                };
                state.held.is_none() && on_table && in_zone
            }
        }
    }
}

/// Proprioceptive vector: position, axis-angle orientation, and the two
/// finger positions (each half the gripper width).
pub fn proprio(state: &WorldState) -> StateVec8 {
    let ee = state.ee;
    let aa = axis_angle(ee.phi, ee.theta, ee.psi);
    let q = state.gripper_width / 2.0;
    [ee.x, ee.y, ee.z, aa[0], aa[1], aa[2], q, q]
}

/// Zero-motion action that keeps the gripper in its current state.
pub fn hold_action(state: &WorldState) -> Action {
    Action::new([0.0; 3], [0.0; 3], state.held.is_some())
}
