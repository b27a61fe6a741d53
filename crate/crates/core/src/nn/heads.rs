//! Heads on top of the visual tokens: the action-chunk policy, the
//! training-only inverse-dynamics head, and the frozen-encoder probe.

use ndarray::{concatenate, s, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{flatten_items, gelu_array, gelu_backward, unflatten_items, Linear, ParamId, ParamSet, Real, VisualTokens};
use crate::error::{Error, Result};
use crate::seed;
use crate::sim::{Instruction, ACTION_DIM};

fn check_tokens<T: Real>(z: &VisualTokens<T>, tokens: usize, channels: usize, batch: usize) -> Result<()> {
    if z.tokens != tokens || z.channels() != channels || z.batch != batch {
        return Err(Error::shape(
            format!("{batch}x{tokens}x{channels} tokens"),
            format!("{}x{}x{}", z.batch, z.tokens, z.channels()),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    /// Action chunk length H.
    pub horizon: usize,
    /// Per-token projection width.
    pub token_dim: usize,
    pub hidden: usize,
    pub instr_dim: usize,
    pub seed: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            horizon: 8,
            token_dim: 8,
            hidden: 256,
            instr_dim: 32,
            seed: 0,
        }
    }
}

/// Chunk policy over both camera views and an instruction embedding.
#[derive(Debug, Clone)]
pub struct PolicyHead<T> {
    pub cfg: PolicyConfig,
    pub params: ParamSet<T>,
    tokens: usize,
    channels: usize,
    n_instr: usize,
    token_proj: [Linear; 2],
    instr: ParamId,
    fc1: Linear,
    fc2: Linear,
}

#[derive(Debug, Clone)]
pub struct PolicyCache<T> {
    batch: usize,
    views: [Array2<T>; 2],
    proj_pre: [Array2<T>; 2],
    instr: Vec<usize>,
    input: Array2<T>,
    h_pre: Array2<T>,
    h: Array2<T>,
}

impl<T: Real> PolicyHead<T> {
    pub fn new(cfg: PolicyConfig, tokens: usize, channels: usize) -> Result<Self> {
        if cfg.horizon == 0 {
            return Err(Error::Config("policy horizon must be positive".into()));
        }
        let mut rng = seed::rng(seed::named(cfg.seed, "init/policy"));
        let mut params = ParamSet::new();
        let n_instr = Instruction::vocabulary().len();
        let token_proj = [
            Linear::new(&mut params, "static.proj", channels, cfg.token_dim, &mut rng),
            Linear::new(&mut params, "wrist.proj", channels, cfg.token_dim, &mut rng),
        ];
        let instr = params.uniform("instr.embed", vec![n_instr, cfg.instr_dim], 1.0, &mut rng);
        let fc1 = Linear::new(
            &mut params,
            "fc1",
            2 * tokens * cfg.token_dim + cfg.instr_dim,
            cfg.hidden,
            &mut rng,
        );
        let fc2 = Linear::new(&mut params, "fc2", cfg.hidden, cfg.horizon * ACTION_DIM, &mut rng);
        Ok(Self {
            cfg,
            params,
            tokens,
            channels,
            n_instr,
            token_proj,
            instr,
            fc1,
            fc2,
        })
    }

    pub fn from_params(cfg: PolicyConfig, tokens: usize, channels: usize, params: &ParamSet<T>) -> Result<Self> {
        let mut head = Self::new(cfg, tokens, channels)?;
        head.params.assign(params)?;
        Ok(head)
    }

    /// Predicted chunk, `batch x (horizon * 7)`, gripper entries as logits.
    pub fn forward(&self, views: [&VisualTokens<T>; 2], instr: &[usize]) -> Result<Array2<T>> {
        Ok(self.forward_train(views, instr)?.0)
    }

    pub fn forward_train(&self, views: [&VisualTokens<T>; 2], instr: &[usize]) -> Result<(Array2<T>, PolicyCache<T>)> {
        let batch = instr.len();
        for v in views {
            check_tokens(v, self.tokens, self.channels, batch)?;
        }
        if let Some(&bad) = instr.iter().find(|&&i| i >= self.n_instr) {
            return Err(Error::Input(format!("unknown instruction id {bad}")));
        }
        let ps = &self.params;
        let proj_pre = [0, 1].map(|v| self.token_proj[v].forward(ps, views[v].data.view()));
        let flat = proj_pre
            .each_ref()
            .map(|pre| flatten_items(gelu_array(pre), batch));
        let table = ps.mat(self.instr);
        let emb = Array2::from_shape_fn((batch, self.cfg.instr_dim), |(b, k)| table[[instr[b], k]]);
        let input = concatenate(Axis(1), &[flat[0].view(), flat[1].view(), emb.view()]).expect("same batch");
        let h_pre = self.fc1.forward(ps, input.view());
        let h = gelu_array(&h_pre);
        let out = self.fc2.forward(ps, h.view());
        let cache = PolicyCache {
            batch,
            views: [views[0].data.clone(), views[1].data.clone()],
            proj_pre,
            instr: instr.to_vec(),
            input,
            h_pre,
            h,
        };
        Ok((out, cache))
    }

    /// Accumulates parameter gradients; returns token gradients per view.
    pub fn backward(&self, cache: &PolicyCache<T>, d_out: &Array2<T>, grads: &mut ParamSet<T>) -> [Array2<T>; 2] {
        let ps = &self.params;
        let dh = self.fc2.backward(ps, cache.h.view(), d_out.view(), grads);
        let dh_pre = gelu_backward(&cache.h_pre, &dh);
        let d_input = self.fc1.backward(ps, cache.input.view(), dh_pre.view(), grads);
        let width = self.tokens * self.cfg.token_dim;
        {
            let d_emb = d_input.slice(s![.., 2 * width..]);
            let mut table = grads.mat_mut(self.instr);
            for (b, &i) in cache.instr.iter().enumerate() {
                let mut row = table.row_mut(i);
                row += &d_emb.row(b);
            }
        }
        [0, 1].map(|v| {
            let d_flat = d_input.slice(s![.., v * width..(v + 1) * width]).to_owned();
            let d_proj = unflatten_items(d_flat, cache.batch, self.tokens);
            let d_pre = gelu_backward(&cache.proj_pre[v], &d_proj);
            self.token_proj[v].backward(ps, cache.views[v].view(), d_pre.view(), grads)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InvDynConfig {
    pub horizon: usize,
    /// Width of the patch-wise fusion map.
    pub dec_dim: usize,
    /// Hidden width of the action MLP.
    pub hidden: usize,
    pub seed: u64,
}

impl Default for InvDynConfig {
    fn default() -> Self {
        Self {
            horizon: 8,
            dec_dim: 128,
            hidden: 256,
            seed: 0,
        }
    }
}

/// Two-view inverse-dynamics decoder: per-token fusion of
/// `[z_cur, z_fut, z_fut - z_cur]`, flatten, action MLP.
#[derive(Debug, Clone)]
pub struct InvDynHead<T> {
    pub cfg: InvDynConfig,
    pub params: ParamSet<T>,
    tokens: usize,
    channels: usize,
    fuse: Linear,
    fc1: Linear,
    fc2: Linear,
}

#[derive(Debug, Clone)]
pub struct InvDynCache<T> {
    batch: usize,
    cat: Array2<T>,
    fused_pre: Array2<T>,
    flat: Array2<T>,
    h_pre: Array2<T>,
    h: Array2<T>,
}

impl<T: Real> InvDynHead<T> {
    pub fn new(cfg: InvDynConfig, tokens: usize, channels: usize) -> Result<Self> {
        if cfg.horizon == 0 {
            return Err(Error::Config("inverse-dynamics horizon must be positive".into()));
        }
        let mut rng = seed::rng(seed::named(cfg.seed, "init/invdyn"));
        let mut params = ParamSet::new();
        let fuse = Linear::new(&mut params, "fuse", 3 * channels, cfg.dec_dim, &mut rng);
        let fc1 = Linear::new(&mut params, "fc1", tokens * cfg.dec_dim, cfg.hidden, &mut rng);
        let fc2 = Linear::new(&mut params, "fc2", cfg.hidden, cfg.horizon * ACTION_DIM, &mut rng);
        Ok(Self {
            cfg,
            params,
            tokens,
            channels,
            fuse,
            fc1,
            fc2,
        })
    }

    pub fn from_params(cfg: InvDynConfig, tokens: usize, channels: usize, params: &ParamSet<T>) -> Result<Self> {
        let mut head = Self::new(cfg, tokens, channels)?;
        head.params.assign(params)?;
        Ok(head)
    }

    pub fn forward(&self, z_cur: &VisualTokens<T>, z_fut: &VisualTokens<T>) -> Result<Array2<T>> {
        Ok(self.forward_train(z_cur, z_fut)?.0)
    }

    pub fn forward_train(&self, z_cur: &VisualTokens<T>, z_fut: &VisualTokens<T>) -> Result<(Array2<T>, InvDynCache<T>)> {
        let batch = z_cur.batch;
        check_tokens(z_cur, self.tokens, self.channels, batch)?;
        check_tokens(z_fut, self.tokens, self.channels, batch)?;
        let diff = &z_fut.data - &z_cur.data;
        let cat = concatenate(Axis(1), &[z_cur.data.view(), z_fut.data.view(), diff.view()]).expect("same rows");
        let ps = &self.params;
        let fused_pre = self.fuse.forward(ps, cat.view());
        let flat = flatten_items(gelu_array(&fused_pre), batch);
        let h_pre = self.fc1.forward(ps, flat.view());
        let h = gelu_array(&h_pre);
        let out = self.fc2.forward(ps, h.view());
        Ok((
            out,
            InvDynCache {
                batch,
                cat,
                fused_pre,
                flat,
                h_pre,
                h,
            },
        ))
    }

    /// Returns gradients with respect to `(z_cur, z_fut)`.
    pub fn backward(&self, cache: &InvDynCache<T>, d_out: &Array2<T>, grads: &mut ParamSet<T>) -> (Array2<T>, Array2<T>) {
        let ps = &self.params;
        let dh = self.fc2.backward(ps, cache.h.view(), d_out.view(), grads);
        let dh_pre = gelu_backward(&cache.h_pre, &dh);
        let d_flat = self.fc1.backward(ps, cache.flat.view(), dh_pre.view(), grads);
        let d_fused = unflatten_items(d_flat, cache.batch, self.tokens);
        let d_pre = gelu_backward(&cache.fused_pre, &d_fused);
        let d_cat = self.fuse.backward(ps, cache.cat.view(), d_pre.view(), grads);
        let c = self.channels;
        let d_diff = d_cat.slice(s![.., 2 * c..]);
        let d_cur = &d_cat.slice(s![.., ..c]) - &d_diff;
        let d_fut = &d_cat.slice(s![.., c..2 * c]) + &d_diff;
        (d_cur, d_fut)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub d_proj: usize,
    pub d_hidden: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            d_proj: 256,
            d_hidden: 512,
            dropout: 0.1,
            seed: 0,
        }
    }
}

/// Inverted-dropout masks for the two hidden layers of a probe.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks<T> {
    pub first: Array2<T>,
    pub second: Array2<T>,
}

impl<T: Real> DropoutMasks<T> {
    pub fn sample<R: Rng>(batch: usize, cfg: &ProbeConfig, rng: &mut R) -> Self {
        let keep = 1.0 - cfg.dropout;
        let scale = T::of(1.0 / keep);
        let mut draw = |cols: usize| {
            Array2::from_shape_fn((batch, cols), |_| {
                if rng.gen::<f64>() < keep {
                    scale
                } else {
                    T::zero()
                }
            })
        };
        let first = draw(2 * cfg.d_hidden);
        let second = draw(cfg.d_hidden);
        Self { first, second }
    }
}

/// Token projection, flatten, then `2*D_hidden -> D_hidden -> d_out` MLP.
#[derive(Debug, Clone)]
pub struct ProbeHead<T> {
    pub cfg: ProbeConfig,
    pub params: ParamSet<T>,
    pub d_out: usize,
    tokens: usize,
    channels: usize,
    proj: Linear,
    fc1: Linear,
    fc2: Linear,
    out: Linear,
}

#[derive(Debug, Clone)]
pub struct ProbeCache<T> {
    batch: usize,
    tokens: Array2<T>,
    proj_pre: Array2<T>,
    flat: Array2<T>,
    a1: Array2<T>,
    h1: Array2<T>,
    a2: Array2<T>,
    h2: Array2<T>,
    masks: Option<DropoutMasks<T>>,
}

impl<T: Real> ProbeHead<T> {
    pub fn new(cfg: ProbeConfig, tokens: usize, channels: usize, d_out: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&cfg.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", cfg.dropout)));
        }
        let mut rng = seed::rng(seed::named(cfg.seed, "init/probe"));
        let mut params = ParamSet::new();
        let proj = Linear::new(&mut params, "proj", channels, cfg.d_proj, &mut rng);
        let fc1 = Linear::new(&mut params, "fc1", tokens * cfg.d_proj, 2 * cfg.d_hidden, &mut rng);
        let fc2 = Linear::new(&mut params, "fc2", 2 * cfg.d_hidden, cfg.d_hidden, &mut rng);
        let out = Linear::new(&mut params, "out", cfg.d_hidden, d_out, &mut rng);
        Ok(Self {
            cfg,
            params,
            d_out,
            tokens,
            channels,
            proj,
            fc1,
            fc2,
            out,
        })
    }

    /// Evaluation-mode forward (no dropout).
    pub fn forward(&self, z: &VisualTokens<T>) -> Result<Array2<T>> {
        Ok(self.forward_train(z, None)?.0)
    }

    /// Forward with optional dropout masks (training mode when given).
    pub fn forward_train(&self, z: &VisualTokens<T>, masks: Option<DropoutMasks<T>>) -> Result<(Array2<T>, ProbeCache<T>)> {
        let batch = z.batch;
        check_tokens(z, self.tokens, self.channels, batch)?;
        if let Some(m) = &masks {
            if m.first.dim() != (batch, 2 * self.cfg.d_hidden) || m.second.dim() != (batch, self.cfg.d_hidden) {
                return Err(Error::shape("dropout masks matching the batch", format!("{:?}", m.first.dim())));
            }
        }
        let ps = &self.params;
        let proj_pre = self.proj.forward(ps, z.data.view());
        let flat = flatten_items(gelu_array(&proj_pre), batch);
        let a1 = self.fc1.forward(ps, flat.view());
        let mut h1 = gelu_array(&a1);
        if let Some(m) = &masks {
            h1 *= &m.first;
        }
        let a2 = self.fc2.forward(ps, h1.view());
        let mut h2 = gelu_array(&a2);
        if let Some(m) = &masks {
            h2 *= &m.second;
        }
        let out = self.out.forward(ps, h2.view());
        Ok((
            out,
            ProbeCache {
                batch,
                tokens: z.data.clone(),
                proj_pre,
                flat,
                a1,
                h1,
                a2,
                h2,
                masks,
            },
        ))
    }

    /// Accumulates probe parameter gradients. The encoder is never touched.
    pub fn backward(&self, cache: &ProbeCache<T>, d_out: &Array2<T>, grads: &mut ParamSet<T>) {
        let ps = &self.params;
        let mut dh2 = self.out.backward(ps, cache.h2.view(), d_out.view(), grads);
        if let Some(m) = &cache.masks {
            dh2 *= &m.second;
        }
        let da2 = gelu_backward(&cache.a2, &dh2);
        let mut dh1 = self.fc2.backward(ps, cache.h1.view(), da2.view(), grads);
        if let Some(m) = &cache.masks {
            dh1 *= &m.first;
        }
        let da1 = gelu_backward(&cache.a1, &dh1);
        let d_flat = self.fc1.backward(ps, cache.flat.view(), da1.view(), grads);
        let d_proj = unflatten_items(d_flat, cache.batch, self.tokens);
        let d_pre = gelu_backward(&cache.proj_pre, &d_proj);
        self.proj.backward_params(cache.tokens.view(), d_pre.view(), grads);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tokens(batch: usize, p: usize, c: usize, salt: f64) -> VisualTokens<f64> {
        VisualTokens {
            batch,
            tokens: p,
            data: Array2::from_shape_fn((batch * p, c), |(i, j)| ((i * 7 + j * 3) as f64 * 0.37 + salt).sin()),
        }
    }

    #[test]
    fn invdyn_shape_and_zero_difference() {
        let head = InvDynHead::<f64>::new(
            InvDynConfig {
                horizon: 4,
                ..InvDynConfig::default()
            },
            16,
            8,
        )
        .unwrap();
        let zc = tokens(2, 16, 8, 0.0);
        let out = head.forward(&zc, &tokens(2, 16, 8, 1.0)).unwrap();
        assert_eq!(out.dim(), (2, 4 * 7));
        let (_, cache) = head.forward_train(&zc, &zc).unwrap();
        assert!(cache.cat.slice(s![.., 16..]).iter().all(|v| *v == 0.0));
        assert_eq!(head.forward(&zc, &zc).unwrap(), head.forward(&zc, &zc).unwrap());
        assert!(head.forward(&zc, &tokens(3, 16, 8, 1.0)).is_err());
    }

    #[test]
    fn policy_shape_and_instruction_checks() {
        let head = PolicyHead::<f64>::new(PolicyConfig::default(), 16, 8).unwrap();
        let z = tokens(3, 16, 8, 0.5);
        let out = head.forward([&z, &z], &[0, 1, 7]).unwrap();
        assert_eq!(out.dim(), (3, 8 * 7));
        assert_eq!(out, head.forward([&z, &z], &[0, 1, 7]).unwrap());
        assert!(matches!(head.forward([&z, &z], &[0, 1, 8]), Err(Error::Input(_))));
        let other = head.forward([&z, &z], &[2, 1, 7]).unwrap();
        assert_ne!(out.row(0), other.row(0));
    }

    #[test]
    fn probe_shapes_and_eval_determinism() {
        let cfg = ProbeConfig::default();
        let z = tokens(2, 16, 8, 0.1);
        let bc = ProbeHead::<f64>::new(cfg.clone(), 16, 8, 4 * 7).unwrap();
        assert_eq!(bc.forward(&z).unwrap().dim(), (2, 28));
        let st = ProbeHead::<f64>::new(cfg.clone(), 16, 8, 8).unwrap();
        let a = st.forward(&z).unwrap();
        assert_eq!(a.dim(), (2, 8));
        assert_eq!(a, st.forward(&z).unwrap());
        let mut rng = seed::rng(1);
        let masks = DropoutMasks::sample(2, &cfg, &mut rng);
        let (b, _) = st.forward_train(&z, Some(masks)).unwrap();
        assert_ne!(a, b);
    }
}
