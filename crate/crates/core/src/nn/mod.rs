//! Minimal dense-network toolkit with hand-written backward passes.
//!
//! Everything is generic over [`Real`] so the same code trains in `f32`
//! and is gradient-checked in `f64`. Parameters live in a flat, named
//! [`ParamSet`]; layers hold [`ParamId`]s into it, and gradients are a
//! `ParamSet` of identical layout.

mod adam;
mod encoder;
mod heads;
mod loss;

use std::fmt;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis, LinalgScalar, ScalarOperand, Zip};
use num_traits::{Float, FromPrimitive};
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::archive::{Archive, Field, FieldData};
use crate::error::{Error, Result};

pub use adam::{Adam, AdamConfig};
pub use encoder::{Encoder, EncoderCache, EncoderConfig};
pub use heads::{
    DropoutMasks, InvDynCache, InvDynConfig, InvDynHead, PolicyCache, PolicyConfig, PolicyHead,
    ProbeCache, ProbeConfig, ProbeHead,
};
pub use loss::{chunk_loss, l1_loss, ChunkLoss};

/// Floating-point element type of the networks.
pub trait Real:
    LinalgScalar
    + Float
    + FromPrimitive
    + ScalarOperand
    + Send
    + Sync
    + fmt::Debug
    + fmt::Display
    + Default
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    tensors: Vec<Tensor<T>>,
}

impl<T> Default for ParamSet<T> {
    fn default() -> Self {
        Self { tensors: Vec::new() }
    }
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<T>) -> ParamId {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.tensors.push(Tensor {
            name: name.into(),
            shape,
            data,
        });
        ParamId(self.tensors.len() - 1)
    }

    /// Adds a tensor drawn uniformly from `[-bound, bound]`.
    pub fn uniform<R: Rng>(&mut self, name: impl Into<String>, shape: Vec<usize>, bound: f64, rng: &mut R) -> ParamId {
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::of(rng.gen_range(-bound..=bound))).collect();
        self.add(name, shape, data)
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn find(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn mat(&self, id: ParamId) -> ArrayView2<'_, T> {
        let t = &self.tensors[id.0];
        ArrayView2::from_shape((t.shape[0], t.shape[1]), &t.data).expect("matrix parameter")
    }

    pub fn vector(&self, id: ParamId) -> ArrayView1<'_, T> {
        ArrayView1::from(&self.tensors[id.0].data[..])
    }

    pub fn mat_mut(&mut self, id: ParamId) -> ArrayViewMut2<'_, T> {
        let t = &mut self.tensors[id.0];
        ArrayViewMut2::from_shape((t.shape[0], t.shape[1]), &mut t.data).expect("matrix parameter")
    }

    pub fn vector_mut(&mut self, id: ParamId) -> ArrayViewMut1<'_, T> {
        ArrayViewMut1::from(&mut self.tensors[id.0].data[..])
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: vec![T::zero(); t.data.len()],
                })
                .collect(),
        }
    }

    /// `self += k * other`, tensor by tensor in layout order.
    pub fn add_scaled(&mut self, other: &Self, k: T) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += k * *y;
            }
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// SHA-256 over names, shapes and little-endian `f64` values.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tensors {
            h.update(t.name.as_bytes());
            for d in &t.shape {
                h.update((*d as u64).to_le_bytes());
            }
            for v in &t.data {
                h.update(v.as_f64().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|v| U::of(v.as_f64())).collect(),
                })
                .collect(),
        }
    }

    /// Replaces values with those of `other`, which must have the same layout.
    pub fn assign(&mut self, other: &Self) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::shape(
                format!("{} tensors", self.tensors.len()),
                other.tensors.len().to_string(),
            ));
        }
        for (a, b) in self.tensors.iter().zip(&other.tensors) {
            if a.name != b.name || a.shape != b.shape {
                return Err(Error::shape(
                    format!("{} {:?}", a.name, a.shape),
                    format!("{} {:?}", b.name, b.shape),
                ));
            }
        }
        self.tensors.clone_from(&other.tensors);
        Ok(())
    }
}

impl ParamSet<f32> {
    /// Appends every tensor to `archive` as `{prefix}/{name}`.
    pub fn write_fields(&self, prefix: &str, archive: &mut Archive) {
        for t in &self.tensors {
            archive.push(Field::f32(format!("{prefix}/{}", t.name), t.shape.clone(), t.data.clone()));
        }
    }

    /// Reads back the tensors written by [`ParamSet::write_fields`].
    pub fn read_fields(prefix: &str, archive: &Archive) -> Result<Self> {
        let start = format!("{prefix}/");
        let mut out = Self::new();
        for f in &archive.fields {
            if let Some(name) = f.name.strip_prefix(&start) {
                match &f.data {
                    FieldData::F32(v) => {
                        out.add(name, f.shape.clone(), v.clone());
                    }
                    FieldData::U8(_) => {
                        return Err(Error::Input(format!("parameter `{}` is not f32", f.name)));
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Fully connected layer `y = x W + b` with `W` stored `fan_in x fan_out`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Fan-in scaled uniform initialisation.
    pub fn new<T: Real, R: Rng>(ps: &mut ParamSet<T>, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = ps.uniform(format!("{name}.w"), vec![fan_in, fan_out], bound, rng);
        let b = ps.uniform(format!("{name}.b"), vec![fan_out], bound, rng);
        Self { w, b, fan_in, fan_out }
    }

    pub fn forward<T: Real>(&self, ps: &ParamSet<T>, x: ArrayView2<'_, T>) -> Array2<T> {
        let mut y = x.dot(&ps.mat(self.w));
        y += &ps.vector(self.b);
        y
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward<T: Real>(&self, ps: &ParamSet<T>, x: ArrayView2<'_, T>, dy: ArrayView2<'_, T>, grads: &mut ParamSet<T>) -> Array2<T> {
        self.backward_params(x, dy, grads);
        dy.dot(&ps.mat(self.w).t())
    }

    /// Parameter gradients only.
    pub fn backward_params<T: Real>(&self, x: ArrayView2<'_, T>, dy: ArrayView2<'_, T>, grads: &mut ParamSet<T>) {
        grads.mat_mut(self.w).scaled_add(T::one(), &x.t().dot(&dy));
        grads.vector_mut(self.b).scaled_add(T::one(), &dy.sum_axis(Axis(0)));
    }
}

const GELU_A: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_B: f64 = 0.044_715;

/// GELU, tanh approximation.
pub fn gelu<T: Real>(x: T) -> T {
    let (a, b, half) = (T::of(GELU_A), T::of(GELU_B), T::of(0.5));
    half * x * (T::one() + (a * (x + b * x * x * x)).tanh())
}

pub fn gelu_grad<T: Real>(x: T) -> T {
    let (a, b, half) = (T::of(GELU_A), T::of(GELU_B), T::of(0.5));
    let t = (a * (x + b * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * a * (T::one() + T::of(3.0) * b * x * x)
}

pub fn gelu_array<T: Real>(x: &Array2<T>) -> Array2<T> {
    x.mapv(gelu)
}

/// `dy * gelu'(pre)`.
pub fn gelu_backward<T: Real>(pre: &Array2<T>, dy: &Array2<T>) -> Array2<T> {
    let mut out = dy.clone();
    Zip::from(&mut out).and(pre).for_each(|d, &p| *d *= gelu_grad(p));
    out
}

/// Batch of visual token features, stored `(batch * tokens) x channels`
/// with each item's tokens contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualTokens<T> {
    pub batch: usize,
    pub tokens: usize,
    pub data: Array2<T>,
}

impl<T: Real> VisualTokens<T> {
    pub fn channels(&self) -> usize {
        self.data.ncols()
    }

    pub fn item(&self, b: usize) -> ArrayView2<'_, T> {
        self.data.slice(ndarray::s![b * self.tokens..(b + 1) * self.tokens, ..])
    }

    /// Mean over tokens of item `b`.
    pub fn pooled(&self, b: usize) -> Array1<T> {
        self.item(b).mean_axis(Axis(0)).expect("non-empty token set")
    }

    /// New batch made of the listed items, in order.
    pub fn select(&self, items: &[usize]) -> Self {
        let p = self.tokens;
        let mut data = Array2::zeros((items.len() * p, self.channels()));
        for (k, &b) in items.iter().enumerate() {
            data.slice_mut(ndarray::s![k * p..(k + 1) * p, ..]).assign(&self.item(b));
        }
        Self {
            batch: items.len(),
            tokens: p,
            data,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `(rows x cols)` row-major flatten of per-item token blocks:
/// `(batch * tokens) x d -> batch x (tokens * d)`.
pub(crate) fn flatten_items<T: Real>(x: Array2<T>, batch: usize) -> Array2<T> {
    let n = x.len();
    let x = x.as_standard_layout().into_owned();
    x.into_shape_with_order((batch, n / batch.max(1))).expect("contiguous")
}

pub(crate) fn unflatten_items<T: Real>(x: Array2<T>, batch: usize, tokens: usize) -> Array2<T> {
    let d = x.ncols() / tokens;
    let x = x.as_standard_layout().into_owned();
    x.into_shape_with_order((batch * tokens, d)).expect("contiguous")
}
