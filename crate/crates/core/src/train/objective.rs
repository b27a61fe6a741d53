//! Precision-generic loss and gradient of one training batch. The trainer
//! runs it in `f32`; the gradient checker runs the very same code in `f64`.

use ndarray::{s, Array2};

use crate::data::{ActionRow, ActionStats};
use crate::error::{Error, Result};
use crate::nn::{chunk_loss, Encoder, InvDynHead, ParamSet, PolicyHead, Real, VisualTokens};
use crate::sim::{Image, Observation, View, ACTION_DIM, MOTION_DIM};

/// A sampled batch. `cur[b]`/`fut[b]` are `o_t`/`o_{t+H}` in time order;
/// `reversed[b]` says the inverse-dynamics pair is presented swapped.
#[derive(Debug, Clone)]
pub struct StepBatch<'a, T> {
    pub cur: Vec<&'a Observation>,
    pub fut: Vec<&'a Observation>,
    pub reversed: Vec<bool>,
    pub instr: Vec<usize>,
    pub vla_target: Array2<T>,
    /// Present iff the auxiliary objective is on.
    pub inv_target: Option<Array2<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Losses {
    pub vla: f64,
    /// Mean over views; 0 without the auxiliary head.
    pub inv: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct Grads<T> {
    pub encoder: ParamSet<T>,
    pub policy: ParamSet<T>,
    pub invdyn: Option<ParamSet<T>>,
}

/// Chunks to a `batch x (H * 7)` target: motion z-scored, gripper raw.
pub fn chunk_target<T: Real>(chunks: &[Vec<ActionRow>], stats: &ActionStats) -> Array2<T> {
    let h = chunks.first().map_or(0, Vec::len);
    Array2::from_shape_fn((chunks.len(), h * ACTION_DIM), |(b, k)| {
        let (i, d) = (k / ACTION_DIM, k % ACTION_DIM);
        let v = chunks[b][i][d] as f64;
        T::of(if d < MOTION_DIM { stats.normalize(d, v) } else { v })
    })
}

fn add_items<T: Real>(dst: &mut Array2<T>, src: &Array2<T>, items: &[usize], tokens: usize) {
    for (k, &b) in items.iter().enumerate() {
        let mut rows = dst.slice_mut(s![b * tokens..(b + 1) * tokens, ..]);
        rows += &src.slice(s![k * tokens..(k + 1) * tokens, ..]);
    }
}

/// `L = L_vla + lambda_inv * L_inv` and its gradients. The current-frame
/// encodings are shared by the policy and the inverse-dynamics head.
pub fn objective<T: Real>(
    encoder: &Encoder<T>,
    policy: &PolicyHead<T>,
    invdyn: Option<&InvDynHead<T>>,
    batch: &StepBatch<'_, T>,
    lambda_inv: f64,
    lambda_g: f64,
) -> Result<(Losses, Grads<T>)> {
    let b = batch.cur.len();
    let aux = match (invdyn, &batch.inv_target) {
        (Some(head), Some(target)) => Some((head, target)),
        (None, _) => None,
        (Some(_), None) => return Err(Error::Precondition("auxiliary head without inverse-dynamics targets".into())),
    };
    let p = encoder.cfg.tokens();
    let mut enc_grads = encoder.params.zeros_like();
    let mut pol_grads = policy.params.zeros_like();
    let mut inv_grads = aux.map(|(h, _)| h.params.zeros_like());

    let mut encoded = Vec::with_capacity(2);
    for v in View::ALL {
        let mut images: Vec<&Image> = batch.cur.iter().map(|o| o.view(v)).collect();
        if aux.is_some() {
            images.extend(batch.fut.iter().map(|o| o.view(v)));
        }
        encoded.push(encoder.forward_train(&images)?);
    }
    let cur_items: Vec<usize> = (0..b).collect();
    let z_cur: Vec<VisualTokens<T>> = encoded.iter().map(|(z, _)| z.select(&cur_items)).collect();

    let (pred, pcache) = policy.forward_train([&z_cur[0], &z_cur[1]], &batch.instr)?;
    let vla = chunk_loss(&pred, &batch.vla_target, lambda_g)?;
    let d_cur = policy.backward(&pcache, &vla.grad, &mut pol_grads);
    let mut d_tokens: Vec<Array2<T>> = encoded.iter().map(|(z, _)| Array2::zeros(z.data.raw_dim())).collect();
    for v in 0..2 {
        add_items(&mut d_tokens[v], &d_cur[v], &cur_items, p);
    }

    let mut inv = 0.0;
    if let (Some((head, target)), Some(grads)) = (aux, inv_grads.as_mut()) {
        let first: Vec<usize> = (0..b).map(|i| if batch.reversed[i] { b + i } else { i }).collect();
        let second: Vec<usize> = (0..b).map(|i| if batch.reversed[i] { i } else { b + i }).collect();
        let scale = T::of(lambda_inv / View::ALL.len() as f64);
        for (v, (z, _)) in encoded.iter().enumerate() {
            let (zf, zs) = (z.select(&first), z.select(&second));
            let (pred, cache) = head.forward_train(&zf, &zs)?;
            let l = chunk_loss(&pred, target, lambda_g)?;
            inv += l.total;
            let (d1, d2) = head.backward(&cache, &l.grad.mapv(|g| g * scale), grads);
            add_items(&mut d_tokens[v], &d1, &first, p);
            add_items(&mut d_tokens[v], &d2, &second, p);
        }
        inv /= View::ALL.len() as f64;
    }
    for ((_, cache), d) in encoded.iter().zip(&d_tokens) {
        encoder.backward(cache, d, &mut enc_grads);
    }
    let losses = Losses {
        vla: vla.total,
        inv,
        total: vla.total + lambda_inv * inv,
    };
    Ok((
        losses,
        Grads {
            encoder: enc_grads,
            policy: pol_grads,
            invdyn: inv_grads,
        },
    ))
}
