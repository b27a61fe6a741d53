//! Action-chunk objective: L1 on the motion entries plus weighted
//! binary cross-entropy on gripper logits.

use ndarray::Array2;

use super::Real;
use crate::error::{Error, Result};
use crate::sim::{ACTION_DIM, MOTION_DIM};

/// Loss value, its parts, and the gradient with respect to the prediction.
#[derive(Debug, Clone)]
pub struct ChunkLoss<T> {
    pub total: f64,
    /// Mean absolute error over all motion entries.
    pub motion: f64,
    /// Mean gripper cross-entropy.
    pub gripper: f64,
    pub grad: Array2<T>,
}

/// Numerically stable `softplus(x) = log(1 + e^x)`.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `pred` and `target` are `batch x (H * 7)`, rows laid out step-major.
/// Gripper targets must be exactly 0 or 1.
pub fn chunk_loss<T: Real>(pred: &Array2<T>, target: &Array2<T>, lambda_g: f64) -> Result<ChunkLoss<T>> {
    if pred.dim() != target.dim() {
        return Err(Error::shape(format!("{:?}", pred.dim()), format!("{:?}", target.dim())));
    }
    let (batch, width) = pred.dim();
    if batch == 0 || width == 0 || width % ACTION_DIM != 0 {
        return Err(Error::shape("non-empty batch x (H * 7)", format!("{batch}x{width}")));
    }
    let steps = batch * width / ACTION_DIM;
    let n_motion = (steps * MOTION_DIM) as f64;
    let n_grip = steps as f64;
    let mut grad = Array2::zeros((batch, width));
    let (mut motion, mut gripper) = (0.0, 0.0);
    for ((idx, &p), &y) in pred.indexed_iter().zip(target.iter()) {
        let (p, y) = (p.as_f64(), y.as_f64());
        if idx.1 % ACTION_DIM == MOTION_DIM {
            if y != 0.0 && y != 1.0 {
                return Err(Error::Input(format!("gripper target must be 0 or 1, got {y}")));
            }
            gripper += softplus(p) - y * p;
            grad[idx] = T::of(lambda_g * (sigmoid(p) - y) / n_grip);
        } else {
            let e = p - y;
            motion += e.abs();
            let s = if e > 0.0 {
                1.0
            } else if e < 0.0 {
                -1.0
            } else {
                0.0
            };
            grad[idx] = T::of(s / n_motion);
        }
    }
    motion /= n_motion;
    gripper /= n_grip;
    Ok(ChunkLoss {
        total: motion + lambda_g * gripper,
        motion,
        gripper,
        grad,
    })
}

/// Mean absolute error and its (sub)gradient; used by the state probe.
pub fn l1_loss<T: Real>(pred: &Array2<T>, target: &Array2<T>) -> Result<(f64, Array2<T>)> {
    if pred.dim() != target.dim() || pred.is_empty() {
        return Err(Error::shape(format!("{:?}", pred.dim()), format!("{:?}", target.dim())));
    }
    let n = pred.len() as f64;
    let mut sum = 0.0;
    let mut grad = Array2::zeros(pred.dim());
    for ((idx, &p), &y) in pred.indexed_iter().zip(target.iter()) {
        let e = p.as_f64() - y.as_f64();
        sum += e.abs();
        grad[idx] = T::of(if e > 0.0 { 1.0 / n } else if e < 0.0 { -1.0 / n } else { 0.0 });
    }
    Ok((sum / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn hand_computed_single_step() {
        let pred = array![[0.5, -0.5, 0.0, 0.0, 0.0, 0.0, 0.0]];
        let target = array![[0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0]];
        let l = chunk_loss::<f64>(&pred, &target, 0.01).unwrap();
        assert!((l.motion - 2.0 / 6.0).abs() < 1e-12);
        assert!((l.gripper - 2f64.ln()).abs() < 1e-12);
        assert!((l.total - (2.0 / 6.0 + 0.01 * 2f64.ln())).abs() < 1e-12);
        assert_eq!(l.grad[[0, 2]], 0.0);
        assert!((l.grad[[0, 5]] + 1.0 / 6.0).abs() < 1e-12);
        assert!((l.grad[[0, 6]] + 0.005).abs() < 1e-12);
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let pred = array![[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 800.0], [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -800.0]];
        let target = array![[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]];
        let l = chunk_loss::<f32>(&pred.mapv(|v| v as f32), &target.mapv(|v| v as f32), 1.0).unwrap();
        assert!((l.gripper - 800.0).abs() < 1e-6);
        assert!(l.grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn rejects_soft_gripper_targets_and_bad_shapes() {
        let pred = Array2::<f64>::zeros((1, 7));
        let mut t = Array2::<f64>::zeros((1, 7));
        t[[0, 6]] = 0.5;
        assert!(matches!(chunk_loss(&pred, &t, 0.01), Err(Error::Input(_))));
        assert!(chunk_loss(&pred, &Array2::zeros((1, 14)), 0.01).is_err());
        assert!(chunk_loss(&Array2::<f64>::zeros((1, 6)), &Array2::zeros((1, 6)), 0.01).is_err());
    }

    #[test]
    fn l1_hand_value() {
        let (v, g) = l1_loss(&array![[1.0, -1.0], [0.0, 3.0]], &array![[0.0, 0.0], [0.0, 1.0]]).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        assert_eq!(g, array![[0.25, -0.25], [0.0, 0.25]]);
    }
}
