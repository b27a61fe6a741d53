use std::f64::consts::PI;

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

/// Rotation matrix for roll `phi`, pitch `theta`, yaw `psi`,
/// composed as Rz(psi) * Ry(theta) * Rx(phi).
fn rotation(phi: f64, theta: f64, psi: f64) -> [[f64; 3]; 3] {
    let (sr, cr) = phi.sin_cos();
    let (sp, cp) = theta.sin_cos();
    let (sy, cy) = psi.sin_cos();
    [
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ]
}

/// Axis-angle vector (axis scaled by angle) of the roll/pitch/yaw orientation.
pub fn axis_angle(phi: f64, theta: f64, psi: f64) -> [f64; 3] {
    let r = rotation(phi, theta, psi);
    let trace = r[0][0] + r[1][1] + r[2][2];
    let cos = ((trace - 1.0) / 2.0).clamp(-1.0, 1.0);
    let angle = cos.acos();
    let skew = [r[2][1] - r[1][2], r[0][2] - r[2][0], r[1][0] - r[0][1]];
    if angle < 1e-12 {
        return skew.map(|v| v / 2.0);
    }
    if PI - angle > 1e-6 {
        let k = angle / (2.0 * angle.sin());
        return skew.map(|v| v * k);
    }
    // Near pi the skew part vanishes; recover the axis from the diagonal.
    let diag = [r[0][0], r[1][1], r[2][2]];
    let i = (0..3).max_by(|&a, &b| diag[a].total_cmp(&diag[b])).unwrap();
    let mut axis = [0.0; 3];
    axis[i] = ((diag[i] - cos) / (1.0 - cos)).max(0.0).sqrt();
    for j in 0..3 {
        if j != i {
            axis[j] = (r[i][j] + r[j][i]) / (2.0 * axis[i] * (1.0 - cos));
        }
    }
    // Resolve the sign ambiguity with the (small) skew component.
    let dot: f64 = axis.iter().zip(skew).map(|(a, s)| a * s).sum();
    let sign = if dot < 0.0 { -1.0 } else { 1.0 };
    axis.map(|a| a * angle * sign)
}
