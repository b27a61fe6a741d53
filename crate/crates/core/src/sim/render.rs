use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Color, SimConfig, WorldState};
use crate::error::{Error, Result};

/// Supersampling factor per pixel axis.
const SUBSAMPLES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Static,
    Wrist,
}

impl View {
    pub const ALL: [View; 2] = [View::Static, View::Wrist];

    pub fn name(self) -> &'static str {
        match self {
            View::Static => "static",
            View::Wrist => "wrist",
        }
    }
}

impl FromStr for View {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(View::Static),
            "wrist" => Ok(View::Wrist),
            other => Err(Error::Input(format!("unknown view `{other}`"))),
        }
    }
}

/// Square 8-bit RGB image stored row-major as `size x size x 3`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Image {
    pub size: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.size + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub static_view: Image,
    pub wrist: Image,
}

impl Observation {
    pub fn view(&self, view: View) -> &Image {
        match view {
            View::Static => &self.static_view,
            View::Wrist => &self.wrist,
        }
    }
}

enum Shape {
    Rect { center: [f64; 2], half: f64 },
    Triangle([[f64; 2]; 3]),
    Disk { center: [f64; 2], radius: f64 },
}

impl Shape {
    fn contains(&self, p: [f64; 2]) -> bool {
        match self {
            Shape::Rect { center, half } => {
                (p[0] - center[0]).abs() <= *half && (p[1] - center[1]).abs() <= *half
            }
            Shape::Disk { center, radius } => {
                (p[0] - center[0]).hypot(p[1] - center[1]) <= *radius
            }
            Shape::Triangle([a, b, c]) => {
                let cross = |o: [f64; 2], u: [f64; 2], v: [f64; 2]| {
                    (u[0] - o[0]) * (v[1] - o[1]) - (u[1] - o[1]) * (v[0] - o[0])
                };
                let d1 = cross(*a, *b, p);
                let d2 = cross(*b, *c, p);
                let d3 = cross(*c, *a, p);
                let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
                let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
                !(neg && pos)
            }
        }
    }

    fn bounds(&self) -> [f64; 4] {
        match self {
            Shape::Rect { center, half } => [
                center[0] - half,
                center[1] - half,
                center[0] + half,
                center[1] + half,
            ],
            Shape::Disk { center, radius } => [
                center[0] - radius,
                center[1] - radius,
                center[0] + radius,
                center[1] + radius,
            ],
            Shape::Triangle(v) => {
                let xs = v.map(|p| p[0]);
                let ys = v.map(|p| p[1]);
                [
                    xs.iter().cloned().fold(f64::INFINITY, f64::min),
                    ys.iter().cloned().fold(f64::INFINITY, f64::min),
                    xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                    ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                ]
            }
        }
    }
}

fn block_rgb(color: Color, z: f64) -> [f64; 3] {
    let base = match color {
        Color::Red => [210.0, 45.0, 40.0],
        Color::Blue => [40.0, 75.0, 210.0],
    };
    let shade = (0.7 + 1.5 * z).min(1.2);
    base.map(|c: f64| (c * shade).min(255.0))
}

/// Scene layers in draw order (later layers on top).
fn scene(state: &WorldState) -> Vec<(Shape, [f64; 3])> {
    let mut layers = Vec::new();
    let mut order: Vec<usize> = (0..state.blocks.len()).collect();
    order.sort_by(|&a, &b| state.blocks[a].pos[2].total_cmp(&state.blocks[b].pos[2]));
    for i in order {
        let b = &state.blocks[i];
        // Apparent size grows with height, as seen from above.
        let half = b.edge / 2.0 * (1.0 + 2.0 * b.pos[2]);
        layers.push((
            Shape::Rect {
                center: [b.pos[0], b.pos[1]],
                half,
            },
            block_rgb(b.color, b.pos[2]),
        ));
    }

    let ee = state.ee;
    let c = [ee.x, ee.y];
    // Marker size encodes height; heading encodes yaw; tint encodes roll/pitch.
    let r = 0.045 * (1.0 + 4.0 * ee.z);
    let at = |ang: f64, rad: f64| [c[0] + rad * ang.cos(), c[1] + rad * ang.sin()];
    let wedge = [at(ee.psi, r), at(ee.psi + 2.5, r * 0.8), at(ee.psi - 2.5, r * 0.8)];
    layers.push((
        Shape::Triangle(wedge),
        [
            240.0,
            210.0 + 40.0 * ee.phi.tanh(),
            70.0 + 60.0 * ee.theta.tanh(),
        ],
    ));
    let (s, co) = ee.psi.sin_cos();
    let normal = [-s, co];
    let offset = state.gripper_width / 2.0 + 0.012;
    for sign in [-1.0, 1.0] {
        layers.push((
            Shape::Disk {
                center: [c[0] + sign * offset * normal[0], c[1] + sign * offset * normal[1]],
                radius: 0.013,
            },
            [250.0, 250.0, 250.0],
        ));
    }
    layers
}

fn background(p: [f64; 2]) -> [f64; 3] {
    if !(0.0..=1.0).contains(&p[0]) || !(0.0..=1.0).contains(&p[1]) {
        [20.0, 20.0, 20.0]
    } else if p[0] < 0.25 || p[0] > 0.75 {
        [62.0, 62.0, 84.0]
    } else {
        [70.0, 70.0, 70.0]
    }
}

pub(super) fn render(cfg: &SimConfig, state: &WorldState, view: View) -> Image {
    let size = cfg.image_size;
    // Camera: world window [x0, x0 + span] x [y0, y0 + span], y pointing up.
    let (x0, y0, span) = match view {
        View::Static => (0.0, 0.0, 1.0),
        View::Wrist => {
            let half = 0.1 + state.ee.z;
            (state.ee.x - half, state.ee.y - half, 2.0 * half)
        }
    };
    let layers = scene(state);
    let bounds: Vec<[f64; 4]> = layers.iter().map(|(s, _)| s.bounds()).collect();
    let px = span / size as f64;
    let sub = px / SUBSAMPLES as f64;
    let norm = (SUBSAMPLES * SUBSAMPLES) as f64;
    let mut data = vec![0u8; size * size * 3];
    for row in 0..size {
        let y_top = y0 + span - row as f64 * px;
        for col in 0..size {
            let x_left = x0 + col as f64 * px;
            // Layers touching this pixel, topmost first.
            let live: Vec<usize> = (0..layers.len())
                .rev()
                .filter(|&k| {
                    let b = bounds[k];
                    b[0] <= x_left + px && b[2] >= x_left && b[1] <= y_top && b[3] >= y_top - px
                })
                .collect();
            let mut acc = [0.0f64; 3];
            for sy in 0..SUBSAMPLES {
                for sx in 0..SUBSAMPLES {
                    let p = [
                        x_left + (sx as f64 + 0.5) * sub,
                        y_top - (sy as f64 + 0.5) * sub,
                    ];
                    let rgb = live
                        .iter()
                        .find(|&&k| layers[k].0.contains(p))
                        .map(|&k| layers[k].1)
                        .unwrap_or_else(|| background(p));
                    for ch in 0..3 {
                        acc[ch] += rgb[ch];
                    }
                }
            }
            let i = (row * size + col) * 3;
            for ch in 0..3 {
                data[i + ch] = (acc[ch] / norm).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Image { size, data }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_2;

    use super::*;
    use crate::sim::{Sim, TaskChoice};

    #[test]
    fn render_is_deterministic_with_expected_shape() {
        let sim = Sim::default();
        let (st, _) = sim.reset(11, TaskChoice::Random);
        for view in View::ALL {
            let a = sim.render(&st, view);
            let b = sim.render(&st, view);
            assert_eq!(a, b);
            assert_eq!(a.size, 64);
            assert_eq!(a.data.len(), 64 * 64 * 3);
        }
    }

    #[test]
    fn yaw_change_is_visible() {
        let sim = Sim::default();
        let (st, _) = sim.reset(2, TaskChoice::Random);
        let mut turned = st.clone();
        turned.ee.psi = crate::sim::wrap_angle(st.ee.psi + FRAC_PI_2);
        for view in View::ALL {
            let a = sim.render(&st, view);
            let b = sim.render(&turned, view);
            let diff: u64 = a
                .data
                .iter()
                .zip(&b.data)
                .map(|(x, y)| (*x as i64 - *y as i64).unsigned_abs())
                .sum();
            assert!(diff > 0, "{view:?}");
        }
    }

    #[test]
    fn height_and_gripper_are_visible() {
        let sim = Sim::default();
        let (st, _) = sim.reset(4, TaskChoice::Random);
        let mut higher = st.clone();
        higher.ee.z = (st.ee.z + 0.05).min(0.2) - 0.06;
        assert_ne!(sim.render(&st, View::Static), sim.render(&higher, View::Static));
        let mut closed = st.clone();
        closed.gripper_width = 0.0;
        assert_ne!(sim.render(&st, View::Static), sim.render(&closed, View::Static));
    }

    #[test]
    fn unknown_view_is_input_error() {
        let sim = Sim::default();
        let (st, _) = sim.reset(0, TaskChoice::Random);
        assert!(matches!(sim.render_named(&st, "top"), Err(Error::Input(_))));
        assert!(sim.render_named(&st, "wrist").is_ok());
    }
}
