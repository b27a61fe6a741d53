//! Patch-token vision encoder: linear patch embedding with learned
//! positional embeddings, followed by residual token-mixing and
//! channel-mixing blocks.

use ndarray::{s, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::{gelu_array, gelu_backward, Linear, ParamId, ParamSet, Real, VisualTokens};
use crate::error::{Error, Result};
use crate::seed;
use crate::sim::{Image, Observation, View};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub image_size: usize,
    pub patch: usize,
    pub channels: usize,
    /// Number of mixing blocks.
    pub depth: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            patch: 8,
            channels: 64,
            depth: 2,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn grid(&self) -> usize {
        self.image_size / self.patch
    }

    pub fn tokens(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * 3
    }

    fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.image_size == 0 || !self.image_size.is_multiple_of(self.patch) {
            return Err(Error::Config(format!(
                "image size {} is not a positive multiple of patch {}",
                self.image_size, self.patch
            )));
        }
        if self.channels == 0 {
            return Err(Error::Config("encoder channels must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct MixBlock {
    token_w: ParamId,
    token_b: ParamId,
    ch1: Linear,
    ch2: Linear,
}

#[derive(Debug, Clone)]
pub struct Encoder<T> {
    pub cfg: EncoderConfig,
    pub params: ParamSet<T>,
    embed: Linear,
    pos: ParamId,
    blocks: Vec<MixBlock>,
}

#[derive(Debug, Clone)]
struct BlockCache<T> {
    z_in: Array2<T>,
    u: Array2<T>,
    z_mid: Array2<T>,
    h_pre: Array2<T>,
    h: Array2<T>,
}

/// Activations kept from a training forward pass.
#[derive(Debug, Clone)]
pub struct EncoderCache<T> {
    batch: usize,
    x: Array2<T>,
    blocks: Vec<BlockCache<T>>,
}

impl<T: Real> Encoder<T> {
    pub fn new(cfg: EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seed::rng(seed::named(cfg.seed, "init/encoder"));
        let mut params = ParamSet::new();
        let (p, c) = (cfg.tokens(), cfg.channels);
        let embed = Linear::new(&mut params, "embed", cfg.patch_dim(), c, &mut rng);
        let pos = params.uniform("pos", vec![p, c], 0.1, &mut rng);
        let blocks = (0..cfg.depth)
            .map(|i| {
                let bound = 1.0 / (p as f64).sqrt();
                MixBlock {
                    token_w: params.uniform(format!("block{i}.token.w"), vec![p, p], bound, &mut rng),
                    token_b: params.uniform(format!("block{i}.token.b"), vec![p], bound, &mut rng),
                    ch1: Linear::new(&mut params, &format!("block{i}.ch1"), c, 2 * c, &mut rng),
                    ch2: Linear::new(&mut params, &format!("block{i}.ch2"), 2 * c, c, &mut rng),
                }
            })
            .collect();
        Ok(Self {
            cfg,
            params,
            embed,
            pos,
            blocks,
        })
    }

    /// Rebuilds an encoder around existing parameters.
    pub fn from_params(cfg: EncoderConfig, params: &ParamSet<T>) -> Result<Self> {
        let mut enc = Self::new(cfg)?;
        enc.params.assign(params)?;
        Ok(enc)
    }

    /// Image batch to `(batch * tokens) x patch_dim`, pixels scaled to [-0.5, 0.5].
    fn patchify(&self, images: &[&Image]) -> Result<Array2<T>> {
        let (size, ps, g) = (self.cfg.image_size, self.cfg.patch, self.cfg.grid());
        let p = self.cfg.tokens();
        let mut x = Array2::zeros((images.len() * p, self.cfg.patch_dim()));
        let scale = T::of(1.0 / 255.0);
        let half = T::of(0.5);
        for (b, img) in images.iter().enumerate() {
            if img.size != size || img.data.len() != size * size * 3 {
                return Err(Error::shape(
                    format!("{size}x{size}x3 image"),
                    format!("{}x{}x3", img.size, img.size),
                ));
            }
            for gr in 0..g {
                for gc in 0..g {
                    let mut row = x.row_mut(b * p + gr * g + gc);
                    let mut k = 0;
                    for dy in 0..ps {
                        let base = ((gr * ps + dy) * size + gc * ps) * 3;
                        for v in &img.data[base..base + ps * 3] {
                            row[k] = T::of(*v as f64) * scale - half;
                            k += 1;
                        }
                    }
                }
            }
        }
        Ok(x)
    }

    fn run(&self, images: &[&Image], keep: bool) -> Result<(VisualTokens<T>, Option<EncoderCache<T>>)> {
        let ps = &self.params;
        let (batch, p) = (images.len(), self.cfg.tokens());
        let x = self.patchify(images)?;
        let mut z = self.embed.forward(ps, x.view());
        let pos = ps.mat(self.pos);
        for b in 0..batch {
            z.slice_mut(s![b * p..(b + 1) * p, ..]).scaled_add(T::one(), &pos);
        }
        let mut caches = Vec::new();
        for blk in &self.blocks {
            let tw = ps.mat(blk.token_w);
            let tb = ps.vector(blk.token_b).insert_axis(Axis(1));
            let mut u = Array2::zeros(z.raw_dim());
            for b in 0..batch {
                let zb = z.slice(s![b * p..(b + 1) * p, ..]);
                let mut ub = u.slice_mut(s![b * p..(b + 1) * p, ..]);
                ub.assign(&tw.dot(&zb));
                ub += &tb;
            }
            let z_mid = &z + &gelu_array(&u);
            let h_pre = blk.ch1.forward(ps, z_mid.view());
            let h = gelu_array(&h_pre);
            let z_out = &z_mid + &blk.ch2.forward(ps, h.view());
            if keep {
                caches.push(BlockCache {
                    z_in: z,
                    u,
                    z_mid,
                    h_pre,
                    h,
                });
            }
            z = z_out;
        }
        let tokens = VisualTokens {
            batch,
            tokens: p,
            data: z,
        };
        let cache = keep.then(|| EncoderCache {
            batch,
            x,
            blocks: caches,
        });
        Ok((tokens, cache))
    }

    /// Encodes a batch of images into visual tokens.
    pub fn forward(&self, images: &[&Image]) -> Result<VisualTokens<T>> {
        Ok(self.run(images, false)?.0)
    }

    pub fn forward_train(&self, images: &[&Image]) -> Result<(VisualTokens<T>, EncoderCache<T>)> {
        let (t, c) = self.run(images, true)?;
        Ok((t, c.expect("cache requested")))
    }

    /// Encodes each view of a batch of observations independently.
    pub fn encode_views(&self, obs: &[&Observation]) -> Result<[VisualTokens<T>; 2]> {
        let enc = |v: View| {
            let imgs: Vec<&Image> = obs.iter().map(|o| o.view(v)).collect();
            self.forward(&imgs)
        };
        Ok([enc(View::Static)?, enc(View::Wrist)?])
    }

    /// Accumulates parameter gradients for `d_tokens` (same layout as the
    /// forward output).
    pub fn backward(&self, cache: &EncoderCache<T>, d_tokens: &Array2<T>, grads: &mut ParamSet<T>) {
        let ps = &self.params;
        let (batch, p) = (cache.batch, self.cfg.tokens());
        let mut dz = d_tokens.clone();
        for (blk, bc) in self.blocks.iter().zip(&cache.blocks).rev() {
            // channel mixing: z_out = z_mid + ch2(gelu(ch1(z_mid)))
            let dh = blk.ch2.backward(ps, bc.h.view(), dz.view(), grads);
            let dh_pre = gelu_backward(&bc.h_pre, &dh);
            let dz_mid = dz + blk.ch1.backward(ps, bc.z_mid.view(), dh_pre.view(), grads);
            // token mixing: z_mid = z_in + gelu(W z_in + b) per item
            let du = gelu_backward(&bc.u, &dz_mid);
            let tw = ps.mat(blk.token_w);
            let mut dz_in = dz_mid;
            let mut dtw = Array2::<T>::zeros((p, p));
            let mut dtb = ndarray::Array1::<T>::zeros(p);
            for b in 0..batch {
                let rows = s![b * p..(b + 1) * p, ..];
                let dub = du.slice(rows);
                dtw += &dub.dot(&bc.z_in.slice(rows).t());
                dtb += &dub.sum_axis(Axis(1));
                dz_in.slice_mut(rows).scaled_add(T::one(), &tw.t().dot(&dub));
            }
            grads.mat_mut(blk.token_w).scaled_add(T::one(), &dtw);
            grads.vector_mut(blk.token_b).scaled_add(T::one(), &dtb);
            dz = dz_in;
        }
        let mut dpos = Array2::<T>::zeros((p, self.cfg.channels));
        for b in 0..batch {
            dpos += &dz.slice(s![b * p..(b + 1) * p, ..]);
        }
        grads.mat_mut(self.pos).scaled_add(T::one(), &dpos);
        self.embed.backward_params(cache.x.view(), dz.view(), grads);
    }
}
