//! Synthetic smooth objectives with exact gradients and controllable
//! heavy-tailed gradient noise.
//!
//! The non-convex workhorse is robust regression with the bounded loss
//! `φ(u) = u²/(1+u²)`, `u = ⟨w,x⟩ − y`. Features live on the unit sphere,
//! so per-sample smoothness is `sup|φ''| = 2` and every per-sample gradient
//! is bounded by `sup|φ'| = 9/(8√3)`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fmt_float;
use crate::math::{check_alpha, pareto_moment, MomentBound, ParamVec, RngStream};

/// Stream id reserved for drawing training sets and ground truth.
const DATA_STREAM: u64 = u64::MAX;

/// `sup_u |φ'(u)|`, attained at `u = 1/√3`.
pub const ROBUST_GRAD_SUP: f64 = 0.649_519_052_838_329; // 9 / (8√3)

/// Safety factor applied to `G^α` when the constant is derived rather than declared.
const G_SAFETY: f64 = 1.1;

#[inline]
fn phi(u: f64) -> f64 {
    let u2 = u * u;
    u2 / (1.0 + u2)
}

#[inline]
fn phi_prime(u: f64) -> f64 {
    let s = 1.0 + u * u;
    2.0 * u / (s * s)
}

/// `φ''(u) = 2(1 − 3u²)/(1 + u²)³`.
pub fn robust_loss_curvature(u: f64) -> f64 {
    let s = 1.0 + u * u;
    2.0 * (1.0 - 3.0 * u * u) / (s * s * s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: ParamVec,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    /// Uniform index into the training set: single-sample SGD noise.
    Sampling,
    /// Full-batch gradient plus `r·u`, `r ~ Pareto(a, x_m)`, `u` uniform on the sphere.
    ParetoAdditive,
    /// Full-batch gradient plus `x_m · N(0, I)`.
    GaussianAdditive,
    None,
}

/// Gradient-noise specification. `g` pins the moment constant `G`; when
/// absent it is derived at problem construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub tail_shape: f64,
    pub scale: f64,
    pub alpha: f64,
    pub g: Option<f64>,
}

impl NoiseModel {
    pub fn new(kind: NoiseKind, tail_shape: f64, scale: f64, alpha: f64) -> Result<Self> {
        let m = NoiseModel {
            kind,
            tail_shape,
            scale,
            alpha,
            g: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn none(alpha: f64) -> Self {
        NoiseModel {
            kind: NoiseKind::None,
            tail_shape: 3.0,
            scale: 1.0,
            alpha,
            g: None,
        }
    }

    pub fn with_g(mut self, g: f64) -> Self {
        self.g = Some(g);
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::invalid("noise scale must be positive and finite"));
        }
        if !(self.tail_shape > 0.0 && self.tail_shape.is_finite()) {
            return Err(Error::invalid("noise tail shape must be positive"));
        }
        if self.kind == NoiseKind::ParetoAdditive && self.tail_shape <= self.alpha {
            return Err(Error::invalid(format!(
                "pareto tail shape {} must exceed alpha {} for a finite alpha-th moment",
                self.tail_shape, self.alpha
            )));
        }
        if let Some(g) = self.g {
            MomentBound::new(self.alpha, g)?;
        }
        Ok(())
    }

    /// `E‖noise‖^α` in closed form, or an upper bound for the Gaussian case.
    pub fn noise_alpha_moment(&self, dim: usize) -> f64 {
        match self.kind {
            NoiseKind::ParetoAdditive => pareto_moment(self.tail_shape, self.scale, self.alpha),
            // Jensen: E‖σN‖^α ≤ (E‖σN‖²)^(α/2) = (σ²d)^(α/2)
            NoiseKind::GaussianAdditive => (self.scale * self.scale * dim as f64).powf(self.alpha / 2.0),
            NoiseKind::Sampling | NoiseKind::None => 0.0,
        }
    }

    /// Draws one additive perturbation. Sampling/None kinds return zero.
    pub fn draw(&self, dim: usize, rng: &mut RngStream) -> ParamVec {
        match self.kind {
            NoiseKind::ParetoAdditive => {
                let r = rng.pareto(self.tail_shape, self.scale);
                rng.unit_sphere(dim).scale(r)
            }
            NoiseKind::GaussianAdditive => {
                ParamVec::from_raw((0..dim).map(|_| self.scale * rng.std_normal()).collect())
            }
            NoiseKind::Sampling | NoiseKind::None => ParamVec::zeros(dim),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Family {
    RobustRegression { w_star: ParamVec, label_scale: f64 },
    Quadratic { lambdas: Vec<f64>, start: ParamVec },
}

/// Empirical risk `F_S`, its per-sample terms, a population sampler and
/// a stochastic-gradient oracle. Immutable after construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Problem {
    pub family: Family,
    pub dim: usize,
    pub smoothness_l: f64,
    pub bound_m: Option<f64>,
    pub dataset: Vec<Sample>,
    pub noise: NoiseModel,
    pub moment: MomentBound,
}

/// Knobs for [`make_robust_regression_with`].
#[derive(Debug, Clone)]
pub struct RegressionOptions {
    pub dim: usize,
    pub n: usize,
    pub seed: u64,
    pub noise: NoiseModel,
    /// Pareto scale of the symmetrized label noise; 0 gives noiseless labels.
    pub label_scale: f64,
    pub w_star_norm: f64,
    /// Draw the training set from this seed instead of `seed`; `w*` still
    /// comes from `seed`, so problems sharing `seed` share a population.
    pub data_seed: Option<u64>,
}

impl RegressionOptions {
    pub fn new(dim: usize, n: usize, seed: u64, noise: NoiseModel) -> Self {
        RegressionOptions {
            dim,
            n,
            seed,
            noise,
            label_scale: 0.1,
            w_star_norm: 0.5,
            data_seed: None,
        }
    }
}

pub fn make_robust_regression(dim: usize, n: usize, seed: u64, noise: NoiseModel) -> Result<Problem> {
    make_robust_regression_with(&RegressionOptions::new(dim, n, seed, noise))
}

pub fn make_robust_regression_with(opts: &RegressionOptions) -> Result<Problem> {
    if opts.dim == 0 || opts.n == 0 {
        return Err(Error::invalid("robust regression needs d >= 1 and n >= 1"));
    }
    if !(opts.label_scale >= 0.0 && opts.w_star_norm >= 0.0) {
        return Err(Error::invalid("label scale and |w*| must be non-negative"));
    }
    opts.noise.validate()?;
    let mut rng = RngStream::new(opts.seed, DATA_STREAM);
    let w_star = rng.unit_sphere(opts.dim).scale(opts.w_star_norm);
    let family = Family::RobustRegression {
        w_star,
        label_scale: opts.label_scale,
    };
    let mut problem = Problem {
        family,
        dim: opts.dim,
        smoothness_l: 2.0,
        bound_m: Some(1.0),
        dataset: Vec::new(),
        noise: opts.noise.clone(),
        moment: MomentBound::new(opts.noise.alpha, 0.0)?,
    };
    if let Some(data_seed) = opts.data_seed {
        rng = RngStream::new(data_seed, DATA_STREAM - 1);
    }
    problem.dataset = (0..opts.n).map(|_| problem.population_sample(&mut rng)).collect();
    problem.moment = problem.resolve_moment()?;
    Ok(problem)
}

/// Diagonal quadratic `½ Σ λ_i w_i²` with `λ` spaced geometrically over
/// `[1, condition]`. Runs start from `start` (all ones) since the minimizer
/// is the origin.
pub fn make_quadratic(dim: usize, condition: f64, noise: NoiseModel) -> Result<Problem> {
    if dim == 0 {
        return Err(Error::invalid("quadratic needs d >= 1"));
    }
    if !(condition >= 1.0 && condition.is_finite()) {
        return Err(Error::invalid(format!("condition must be >= 1, got {condition}")));
    }
    noise.validate()?;
    let lambdas: Vec<f64> = (0..dim)
        .map(|i| {
            if dim == 1 {
                1.0
            } else {
                condition.powf(i as f64 / (dim - 1) as f64)
            }
        })
        .collect();
    let dummy = Sample {
        x: ParamVec::zeros(dim),
        y: 0.0,
    };
    let mut problem = Problem {
        family: Family::Quadratic {
            lambdas,
            start: ParamVec::from_raw(vec![1.0; dim]),
        },
        dim,
        smoothness_l: condition,
        bound_m: None,
        dataset: vec![dummy],
        noise: noise.clone(),
        moment: MomentBound::new(noise.alpha, 0.0)?,
    };
    problem.moment = problem.resolve_moment()?;
    Ok(problem)
}

impl Problem {
    pub fn n(&self) -> usize {
        self.dataset.len()
    }

    /// `w_1`: the origin, except for the quadratic baseline whose minimizer is the origin.
    pub fn initial_point(&self) -> ParamVec {
        match &self.family {
            Family::RobustRegression { .. } => ParamVec::zeros(self.dim),
            Family::Quadratic { start, .. } => start.clone(),
        }
    }

    pub fn w_star(&self) -> Option<&ParamVec> {
        match &self.family {
            Family::RobustRegression { w_star, .. } => Some(w_star),
            Family::Quadratic { .. } => None,
        }
    }

    /// Copy with a different noise model; `G` is re-derived unless declared.
    pub fn with_noise(&self, noise: NoiseModel) -> Result<Problem> {
        noise.validate()?;
        let mut p = self.clone();
        p.noise = noise;
        p.moment = p.resolve_moment()?;
        Ok(p)
    }

    /// Resolves `G`: the declared value, or an upper bound
    /// `G = 1.1^(1/α) (sup‖∇F_S‖ + (E‖noise‖^α)^(1/α))` by Minkowski's inequality.
    fn resolve_moment(&self) -> Result<MomentBound> {
        let alpha = self.noise.alpha;
        if let Some(g) = self.noise.g {
            return MomentBound::new(alpha, g);
        }
        let grad_sup = match &self.family {
            Family::RobustRegression { .. } => ROBUST_GRAD_SUP,
            // probes within radius 2|start| of the minimizer
            Family::Quadratic { start, .. } => self.smoothness_l * 2.0 * start.norm(),
        };
        let noise_part = self.noise.noise_alpha_moment(self.dim).powf(1.0 / alpha);
        let g = G_SAFETY.powf(1.0 / alpha) * (grad_sup + noise_part);
        MomentBound::new(alpha, g)
    }

    fn sample_residual(&self, w: &ParamVec, z: &Sample) -> f64 {
        let dot: f64 = w.as_slice().iter().zip(z.x.as_slice()).map(|(a, b)| a * b).sum();
        dot - z.y
    }

    pub fn sample_loss(&self, w: &ParamVec, z: &Sample) -> f64 {
        match &self.family {
            Family::RobustRegression { .. } => phi(self.sample_residual(w, z)),
            Family::Quadratic { lambdas, .. } => quad_loss(lambdas, w),
        }
    }

    /// `∇f(w; z)`.
    pub fn sample_grad(&self, w: &ParamVec, z: &Sample) -> ParamVec {
        match &self.family {
            Family::RobustRegression { .. } => {
                let c = phi_prime(self.sample_residual(w, z));
                z.x.scale(c)
            }
            Family::Quadratic { lambdas, .. } => quad_grad(lambdas, w),
        }
    }

    /// `F_S(w)`.
    pub fn loss(&self, w: &ParamVec) -> f64 {
        self.loss_and_grad(w).0
    }

    /// `∇F_S(w)`, the exact full-batch gradient.
    pub fn full_grad(&self, w: &ParamVec) -> ParamVec {
        self.loss_and_grad(w).1
    }

    /// `(F_S(w), ∇F_S(w))` in one pass over the training set.
    pub fn loss_and_grad(&self, w: &ParamVec) -> (f64, ParamVec) {
        match &self.family {
            Family::RobustRegression { .. } => mean_loss_grad(w, &self.dataset),
            Family::Quadratic { lambdas, .. } => (quad_loss(lambdas, w), quad_grad(lambdas, w)),
        }
    }

    /// Mean gradient over an arbitrary sample set, e.g. a fresh population draw.
    pub fn mean_grad_over(&self, w: &ParamVec, samples: &[Sample]) -> ParamVec {
        match &self.family {
            Family::RobustRegression { .. } => mean_loss_grad(w, samples).1,
            Family::Quadratic { lambdas, .. } => quad_grad(lambdas, w),
        }
    }

    /// One stochastic gradient at `w`.
    pub fn stochastic_grad(&self, w: &ParamVec, rng: &mut RngStream) -> ParamVec {
        match self.noise.kind {
            NoiseKind::Sampling => self.sampled_grad(w, rng),
            _ => {
                let full = self.full_grad(w);
                self.perturb(&full, rng)
            }
        }
    }

    /// Stochastic gradient when `∇F_S(w)` is already known. Consumes the
    /// same random draws as [`Problem::stochastic_grad`].
    pub(crate) fn stochastic_grad_given(
        &self,
        w: &ParamVec,
        full: &ParamVec,
        rng: &mut RngStream,
    ) -> ParamVec {
        match self.noise.kind {
            NoiseKind::Sampling => self.sampled_grad(w, rng),
            _ => self.perturb(full, rng),
        }
    }

    fn sampled_grad(&self, w: &ParamVec, rng: &mut RngStream) -> ParamVec {
        let j = rng.index(self.dataset.len());
        self.sample_grad(w, &self.dataset[j])
    }

    fn perturb(&self, full: &ParamVec, rng: &mut RngStream) -> ParamVec {
        match self.noise.kind {
            NoiseKind::None | NoiseKind::Sampling => full.clone(),
            _ => {
                let mut g = self.noise.draw(self.dim, rng);
                g.axpy(1.0, full);
                g
            }
        }
    }

    /// Fresh draw from the data distribution: `x` uniform on the unit
    /// sphere, `y = ⟨w*, x⟩ + ε` with symmetrized Pareto label noise.
    pub fn population_sample(&self, rng: &mut RngStream) -> Sample {
        match &self.family {
            Family::RobustRegression { w_star, label_scale } => {
                let x = rng.unit_sphere(self.dim);
                let mut y: f64 = w_star.as_slice().iter().zip(x.as_slice()).map(|(a, b)| a * b).sum();
                if *label_scale > 0.0 {
                    y += rng.sign() * rng.pareto(self.noise.tail_shape, *label_scale);
                }
                Sample { x, y }
            }
            Family::Quadratic { .. } => self.dataset[0].clone(),
        }
    }

    /// Monte-Carlo estimate of `∇F(w)` from `n_fresh` population draws.
    pub fn population_grad_estimate(
        &self,
        w: &ParamVec,
        n_fresh: usize,
        rng: &mut RngStream,
    ) -> Result<PopulationGrad> {
        if n_fresh == 0 {
            return Err(Error::invalid("population estimate needs n_fresh >= 1"));
        }
        let d = self.dim;
        let mut mean = vec![0.0; d];
        let mut m2 = vec![0.0; d];
        // Welford per coordinate
        for k in 0..n_fresh {
            let z = self.population_sample(rng);
            let g = self.sample_grad(w, &z);
            let kf = (k + 1) as f64;
            for i in 0..d {
                let delta = g[i] - mean[i];
                mean[i] += delta / kf;
                m2[i] += delta * (g[i] - mean[i]);
            }
        }
        let se = if n_fresh > 1 {
            let nf = n_fresh as f64;
            m2.iter().map(|s| (s / (nf - 1.0) / nf).sqrt()).collect()
        } else {
            vec![f64::INFINITY; d]
        };
        Ok(PopulationGrad {
            mean: ParamVec::from_raw(mean),
            se,
            n_fresh,
        })
    }

    /// `max_j ‖∇f(0; z_j)‖` over the training set.
    pub fn grad_norm_at_zero_sup(&self) -> f64 {
        let zero = ParamVec::zeros(self.dim);
        self.dataset
            .iter()
            .map(|z| self.sample_grad(&zero, z).norm())
            .fold(0.0, f64::max)
    }

    /// `b = sup_z ‖∇f(0; z)‖` over the whole sample space.
    pub fn b_constant(&self) -> f64 {
        match &self.family {
            Family::RobustRegression { .. } => ROBUST_GRAD_SUP,
            Family::Quadratic { .. } => 0.0,
        }
    }

    /// Writes the training set as CSV with columns `x_1..x_d,y`.
    pub fn write_dataset_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        let mut header: Vec<String> = (1..=self.dim).map(|i| format!("x_{i}")).collect();
        header.push("y".into());
        let write = |out: &mut std::io::BufWriter<std::fs::File>, line: String| {
            writeln!(out, "{line}").map_err(|e| Error::io(path, e))
        };
        write(&mut out, header.join(","))?;
        for z in &self.dataset {
            let mut cells: Vec<String> = z.x.as_slice().iter().map(|v| fmt_float(*v)).collect();
            cells.push(fmt_float(z.y));
            write(&mut out, cells.join(","))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

/// Output of [`Problem::population_grad_estimate`]: mean and per-coordinate
/// standard error.
#[derive(Debug, Clone)]
pub struct PopulationGrad {
    pub mean: ParamVec,
    pub se: Vec<f64>,
    pub n_fresh: usize,
}

fn quad_loss(lambdas: &[f64], w: &ParamVec) -> f64 {
    0.5 * lambdas.iter().zip(w.as_slice()).map(|(l, v)| l * v * v).sum::<f64>()
}

fn quad_grad(lambdas: &[f64], w: &ParamVec) -> ParamVec {
    ParamVec::from_raw(lambdas.iter().zip(w.as_slice()).map(|(l, v)| l * v).collect())
}

fn mean_loss_grad(w: &ParamVec, samples: &[Sample]) -> (f64, ParamVec) {
    let d = w.dim();
    let mut grad = vec![0.0; d];
    let mut loss = 0.0;
    let ws = w.as_slice();
    for z in samples {
        let xs = z.x.as_slice();
        let u: f64 = ws.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>() - z.y;
        loss += phi(u);
        let c = phi_prime(u);
        for (g, x) in grad.iter_mut().zip(xs) {
            *g += c * x;
        }
    }
    let inv = 1.0 / samples.len() as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    (loss * inv, ParamVec::from_raw(grad))
}
