//! Dense vectors, the clipping operator, per-trial random streams and
//! moment estimation.

use std::fmt;
use std::ops::Index;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense real vector of fixed dimension. Used for iterates, momentum
/// buffers and gradients.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVec(Vec<f64>);

impl ParamVec {
    /// Builds a vector, rejecting empty or non-finite input.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("vector dimension must be positive"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("entry {i} is not finite")));
        }
        Ok(ParamVec(values))
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "vector dimension must be positive");
        ParamVec(vec![0.0; dim])
    }

    /// Wraps values without the finiteness check. Iterates produced by a
    /// diverging run go through here and are caught by [`ParamVec::is_finite`].
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        ParamVec(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    fn check_dim(&self, other: &ParamVec) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::invalid(format!(
                "dimension mismatch: {} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(())
    }

    pub fn dot(&self, other: &ParamVec) -> Result<f64> {
        self.check_dim(other)?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    pub fn add(&self, other: &ParamVec) -> Result<ParamVec> {
        self.check_dim(other)?;
        Ok(ParamVec(
            self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect(),
        ))
    }

    pub fn sub(&self, other: &ParamVec) -> Result<ParamVec> {
        self.check_dim(other)?;
        Ok(ParamVec(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    pub fn scale(&self, c: f64) -> ParamVec {
        ParamVec(self.0.iter().map(|v| c * v).collect())
    }

    /// `self += a * x`. Dimensions must agree.
    pub(crate) fn axpy(&mut self, a: f64, x: &ParamVec) {
        debug_assert_eq!(self.dim(), x.dim());
        for (s, v) in self.0.iter_mut().zip(&x.0) {
            *s += a * v;
        }
    }

    /// `a * x + b * y`, used for interpolating iterates.
    pub(crate) fn lincomb(a: f64, x: &ParamVec, b: f64, y: &ParamVec) -> ParamVec {
        debug_assert_eq!(x.dim(), y.dim());
        ParamVec(x.0.iter().zip(&y.0).map(|(u, v)| a * u + b * v).collect())
    }
}

impl Index<usize> for ParamVec {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl fmt::Debug for ParamVec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(&self.0).finish()
    }
}

/// Rescales `v` to norm `min(tau, ‖v‖)`, keeping its direction.
///
/// Vectors already inside the ball are returned unchanged (bit-for-bit),
/// which makes an inactive clip indistinguishable from no clip. The zero
/// vector maps to itself.
pub fn clip(v: &ParamVec, tau: f64) -> Result<ParamVec> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("clip threshold must be > 0, got {tau}")));
    }
    if !v.is_finite() {
        return Err(Error::invalid("clip of a non-finite vector"));
    }
    Ok(clip_unchecked(v, tau).0)
}

/// Relative band above `tau` treated as already clipped. A rescaled vector
/// can overshoot `tau` by rounding; without the band a second clip would
/// perturb it again.
const CLIP_BAND: f64 = 4.0 * f64::EPSILON;

/// Clip without validation; also reports whether the threshold was active.
pub(crate) fn clip_unchecked(v: &ParamVec, tau: f64) -> (ParamVec, bool) {
    let norm = v.norm();
    if norm <= tau * (1.0 + CLIP_BAND) {
        (v.clone(), false)
    } else {
        (v.scale(tau / norm), true)
    }
}

/// Tail index and constant of a bounded α-th moment, `E‖g‖^α ≤ G^α`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentBound {
    pub alpha: f64,
    pub g_value: f64,
}

impl MomentBound {
    pub fn new(alpha: f64, g_value: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if !(g_value >= 0.0 && g_value.is_finite()) {
            return Err(Error::invalid(format!(
                "moment constant G must be finite and >= 0, got {g_value}"
            )));
        }
        Ok(MomentBound { alpha, g_value })
    }

    /// `G^α`.
    pub fn moment(&self) -> f64 {
        self.g_value.powf(self.alpha)
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 1.0 && alpha <= 2.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("alpha must lie in (1,2], got {alpha}")))
    }
}

/// Monte-Carlo estimate of `E‖g‖^α`: the sample mean of `‖g_i‖^α`.
pub fn estimate_alpha_moment(samples: &[ParamVec], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if samples.is_empty() {
        return Err(Error::invalid("moment estimate needs at least one sample"));
    }
    let total: f64 = samples.iter().map(|g| g.norm().powf(alpha)).sum();
    Ok(total / samples.len() as f64)
}

/// Deterministic random stream identified by `(seed, stream_id)`.
///
/// Backed by ChaCha8, a counter-based generator whose 64-bit stream
/// parameter gives each trial an independent sequence, regardless of the
/// order in which trials are scheduled on worker threads.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

/// Identifier embedded in summaries so outputs name the generator used.
pub const RNG_ALGORITHM: &str = "chacha8(seed_from_u64, stream=stream_id)";

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        RngStream {
            seed,
            stream_id,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform on `(0, 1]`; safe to raise to negative powers.
    pub fn uniform_open0(&mut self) -> f64 {
        1.0 - self.inner.random::<f64>()
    }

    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn std_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn sign(&mut self) -> f64 {
        if self.inner.random::<bool>() {
            1.0
        } else {
            -1.0
        }
    }

    /// Pareto(shape, scale) by inverse CDF: `scale · U^(-1/shape)`.
    pub fn pareto(&mut self, shape: f64, scale: f64) -> f64 {
        scale * self.uniform_open0().powf(-1.0 / shape)
    }

    /// Uniform direction on the unit sphere in `R^dim`.
    pub fn unit_sphere(&mut self, dim: usize) -> ParamVec {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| self.std_normal()).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                return ParamVec(v.into_iter().map(|x| x / n).collect());
            }
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Closed-form `E[r^order]` for `r ~ Pareto(shape, scale)`; infinite when
/// `order >= shape`.
pub fn pareto_moment(shape: f64, scale: f64, order: f64) -> f64 {
    if order >= shape {
        f64::INFINITY
    } else {
        shape * scale.powf(order) / (shape - order)
    }
}
