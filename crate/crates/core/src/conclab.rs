//! Monte-Carlo checks of the probabilistic ingredients behind the rates:
//! clipping bias and clipped second moment, Bernstein-type and
//! Pinelis–Bernstein martingale bounds, the uniform gradient-convergence
//! bound, and the AdaGrad summation inequalities.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{check_alpha, clip_unchecked, ParamVec, RngStream};
use crate::problems::{NoiseKind, NoiseModel, Problem};

/// Relative tolerance when comparing deterministic inequalities in floating point.
const REL_TOL: f64 = 1e-12;

/// Random vector `mean + noise`, `noise` drawn from an additive model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShiftedNoise {
    pub mean: ParamVec,
    pub noise: NoiseModel,
}

impl ShiftedNoise {
    pub fn new(mean: ParamVec, noise: NoiseModel) -> Result<Self> {
        noise.validate()?;
        Ok(ShiftedNoise { mean, noise })
    }

    /// Point mass at `mean`.
    pub fn point_mass(mean: ParamVec, alpha: f64) -> Self {
        ShiftedNoise {
            mean,
            noise: NoiseModel::none(alpha),
        }
    }

    pub fn draw(&self, rng: &mut RngStream) -> ParamVec {
        let mut g = self.noise.draw(self.mean.dim(), rng);
        g.axpy(1.0, &self.mean);
        g
    }

    /// `G = ‖mean‖ + (E‖noise‖^α)^(1/α)`, a valid moment constant by Minkowski.
    pub fn moment_constant(&self, alpha: f64) -> f64 {
        let noise = NoiseModel {
            alpha,
            ..self.noise.clone()
        };
        self.mean.norm() + noise.noise_alpha_moment(self.mean.dim()).powf(1.0 / alpha)
    }

    /// Largest possible norm, `+∞` for unbounded noise.
    pub fn norm_sup(&self) -> f64 {
        match self.noise.kind {
            NoiseKind::None | NoiseKind::Sampling => self.mean.norm(),
            _ => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipCheckRow {
    pub tau: f64,
    pub estimate: f64,
    pub se: f64,
    pub bound: f64,
    /// `estimate / bound`; exposes the slack rather than only pass/fail.
    pub ratio: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipCheckReport {
    pub name: String,
    pub alpha: f64,
    pub g: f64,
    pub n_mc: usize,
    pub rows: Vec<ClipCheckRow>,
    pub pass: bool,
}

struct ClipMoments {
    tau: f64,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    sum_norm_sq: f64,
    sum_norm_4: f64,
}

fn clip_moments(dist: &ShiftedNoise, tau_grid: &[f64], n_mc: usize, rng: &mut RngStream) -> Vec<ClipMoments> {
    let d = dist.mean.dim();
    let mut acc: Vec<ClipMoments> = tau_grid
        .iter()
        .map(|&tau| ClipMoments {
            tau,
            sum: vec![0.0; d],
            sum_sq: vec![0.0; d],
            sum_norm_sq: 0.0,
            sum_norm_4: 0.0,
        })
        .collect();
    for _ in 0..n_mc {
        let g = dist.draw(rng);
        for a in acc.iter_mut() {
            let (c, _) = clip_unchecked(&g, a.tau);
            for (i, v) in c.as_slice().iter().enumerate() {
                a.sum[i] += v;
                a.sum_sq[i] += v * v;
            }
            let n2 = c.norm_sq();
            a.sum_norm_sq += n2;
            a.sum_norm_4 += n2 * n2;
        }
    }
    acc
}

fn check_grid(tau_grid: &[f64], alpha: f64, g: f64, n_mc: usize) -> Result<()> {
    check_alpha(alpha)?;
    if tau_grid.is_empty() || tau_grid.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::invalid("tau grid must be non-empty and positive"));
    }
    if !(g >= 0.0 && g.is_finite()) {
        return Err(Error::invalid("G must be finite and >= 0"));
    }
    if n_mc < 2 {
        return Err(Error::invalid("n_mc must be >= 2"));
    }
    Ok(())
}

/// Estimates `‖E clip(g,τ) − E g‖` per `τ` and compares it with
/// `G^α τ^(1−α)` (plus three standard errors).
pub fn check_clip_bias(
    dist: &ShiftedNoise,
    tau_grid: &[f64],
    alpha: f64,
    g: f64,
    n_mc: usize,
    rng: &mut RngStream,
) -> Result<ClipCheckReport> {
    check_grid(tau_grid, alpha, g, n_mc)?;
    let nf = n_mc as f64;
    let rows: Vec<ClipCheckRow> = clip_moments(dist, tau_grid, n_mc, rng)
        .into_iter()
        .map(|m| {
            let mut bias_sq = 0.0;
            let mut var_of_mean = 0.0;
            for i in 0..m.sum.len() {
                let mean = m.sum[i] / nf;
                bias_sq += (mean - dist.mean[i]).powi(2);
                let var = (m.sum_sq[i] / nf - mean * mean).max(0.0) * nf / (nf - 1.0);
                var_of_mean += var / nf;
            }
            let estimate = bias_sq.sqrt();
            let se = var_of_mean.sqrt();
            let bound = g.powf(alpha) * m.tau.powf(1.0 - alpha);
            ClipCheckRow {
                tau: m.tau,
                estimate,
                se,
                bound,
                ratio: estimate / bound,
                pass: estimate <= bound + 3.0 * se,
            }
        })
        .collect();
    Ok(ClipCheckReport {
        name: "clip-bias".into(),
        alpha,
        g,
        n_mc,
        pass: rows.iter().all(|r| r.pass),
        rows,
    })
}

/// Estimates `E‖clip(g,τ) − E clip(g,τ)‖²` per `τ` and compares it with
/// `G^α τ^(2−α)` (plus three standard errors).
pub fn check_clip_second_moment(
    dist: &ShiftedNoise,
    tau_grid: &[f64],
    alpha: f64,
    g: f64,
    n_mc: usize,
    rng: &mut RngStream,
) -> Result<ClipCheckReport> {
    check_grid(tau_grid, alpha, g, n_mc)?;
    let nf = n_mc as f64;
    let rows: Vec<ClipCheckRow> = clip_moments(dist, tau_grid, n_mc, rng)
        .into_iter()
        .map(|m| {
            let mean_sq: f64 = m.sum.iter().map(|s| (s / nf).powi(2)).sum();
            let second = m.sum_norm_sq / nf;
            let estimate = ((second - mean_sq) * nf / (nf - 1.0)).max(0.0);
            let var = (m.sum_norm_4 / nf - second * second).max(0.0);
            let se = (var / nf).sqrt();
            let bound = g.powf(alpha) * m.tau.powf(2.0 - alpha);
            ClipCheckRow {
                tau: m.tau,
                estimate,
                se,
                bound,
                ratio: if bound > 0.0 { estimate / bound } else { f64::INFINITY },
                pass: estimate <= bound + 3.0 * se,
            }
        })
        .collect();
    Ok(ClipCheckReport {
        name: "clip-second-moment".into(),
        alpha,
        g,
        n_mc,
        pass: rows.iter().all(|r| r.pass),
        rows,
    })
}

/// Outcome of a coverage experiment for a bound meant to hold with
/// probability at least `1 − δ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub name: String,
    pub bound: String,
    pub n_trials: usize,
    pub n_violations: usize,
    pub delta: f64,
    pub violation_rate: f64,
    /// Binomial standard error at the nominal rate, `√(δ(1−δ)/n_trials)`.
    pub se: f64,
    /// `δ + 3·se`
    pub threshold: f64,
    pub mean_lhs: f64,
    pub mean_rhs: f64,
    pub pass: bool,
}

fn coverage(name: &str, bound: String, delta: f64, outcomes: &[(f64, f64)]) -> CoverageReport {
    let n_trials = outcomes.len();
    let nf = n_trials as f64;
    let n_violations = outcomes.iter().filter(|(lhs, rhs)| lhs > rhs).count();
    let violation_rate = n_violations as f64 / nf;
    let se = (delta * (1.0 - delta) / nf).sqrt();
    let threshold = delta + 3.0 * se;
    CoverageReport {
        name: name.into(),
        bound,
        n_trials,
        n_violations,
        delta,
        violation_rate,
        se,
        threshold,
        mean_lhs: outcomes.iter().map(|o| o.0).sum::<f64>() / nf,
        mean_rhs: outcomes.iter().map(|o| o.1).sum::<f64>() / nf,
        pass: violation_rate <= threshold,
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("delta must lie in (0,1), got {delta}")))
    }
}

/// `E[min(r, cap)]` and `E[min(r, cap)²]` for `r ~ Pareto(shape, scale)`, `cap ≥ scale`.
pub fn clipped_pareto_moments(shape: f64, scale: f64, cap: f64) -> (f64, f64) {
    // E min(r,c)^k = ∫_0^c k s^(k-1) P(r > s) ds
    let tail_int = |k: f64| -> f64 {
        // ∫_scale^cap k s^(k-1) (scale/s)^shape ds
        let e = k - shape;
        if e.abs() < 1e-12 {
            k * scale.powf(shape) * (cap / scale).ln()
        } else {
            k * scale.powf(shape) * (cap.powf(e) - scale.powf(e)) / e
        }
    };
    let m1 = scale + tail_int(1.0);
    let m2 = scale * scale + tail_int(2.0);
    (m1, m2)
}

/// Scalar increment sequences with known conditional mean and variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScalarMds {
    Deterministic { value: f64 },
    /// `ξ = scale · Bernoulli(p)`.
    Bernoulli { p: f64, scale: f64 },
    /// Success probability depends on the previous outcome, so the
    /// conditional variance is path dependent.
    MarkovBernoulli { p_after_zero: f64, p_after_one: f64, scale: f64 },
    /// `ξ = min(r, cap)`, `r ~ Pareto(shape, scale)`.
    ClippedPareto { shape: f64, scale: f64, cap: f64 },
}

impl ScalarMds {
    /// `sup |ξ_k − E_k ξ_k|`.
    pub fn deviation_sup(&self) -> f64 {
        match *self {
            ScalarMds::Deterministic { .. } => 0.0,
            ScalarMds::Bernoulli { p, scale } => scale * p.max(1.0 - p),
            ScalarMds::MarkovBernoulli {
                p_after_zero,
                p_after_one,
                scale,
            } => scale * p_after_zero.max(1.0 - p_after_zero).max(p_after_one.max(1.0 - p_after_one)),
            ScalarMds::ClippedPareto { shape, scale, cap } => {
                let (m1, _) = clipped_pareto_moments(shape, scale, cap);
                (cap - m1).max(m1 - scale)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        let ok = match *self {
            ScalarMds::Deterministic { value } => value.is_finite(),
            ScalarMds::Bernoulli { p, scale } => prob(p) && scale > 0.0,
            ScalarMds::MarkovBernoulli {
                p_after_zero,
                p_after_one,
                scale,
            } => prob(p_after_zero) && prob(p_after_one) && scale > 0.0,
            ScalarMds::ClippedPareto { shape, scale, cap } => shape > 0.0 && scale > 0.0 && cap >= scale,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("malformed increment spec {self:?}")))
        }
    }

    /// One path of length `n`: returns `(Σ(ξ_k − E_kξ_k), σ_n²)`.
    fn simulate(&self, n: usize, rng: &mut RngStream) -> (f64, f64) {
        let mut dev = 0.0;
        let mut var = 0.0;
        match *self {
            ScalarMds::Deterministic { .. } => {}
            ScalarMds::Bernoulli { p, scale } => {
                for _ in 0..n {
                    let x = if rng.uniform() < p { scale } else { 0.0 };
                    dev += x - scale * p;
                    var += scale * scale * p * (1.0 - p);
                }
            }
            ScalarMds::MarkovBernoulli {
                p_after_zero,
                p_after_one,
                scale,
            } => {
                let mut prev_one = false;
                for _ in 0..n {
                    let p = if prev_one { p_after_one } else { p_after_zero };
                    prev_one = rng.uniform() < p;
                    let x = if prev_one { scale } else { 0.0 };
                    dev += x - scale * p;
                    var += scale * scale * p * (1.0 - p);
                }
            }
            ScalarMds::ClippedPareto { shape, scale, cap } => {
                let (m1, m2) = clipped_pareto_moments(shape, scale, cap);
                let v = m2 - m1 * m1;
                for _ in 0..n {
                    dev += rng.pareto(shape, scale).min(cap) - m1;
                    var += v;
                }
            }
        }
        (dev, var)
    }
}

/// Bernstein-type martingale bound:
/// `Σ(ξ_k − E_kξ_k) ≤ ρσ_n²/b + b log(1/δ)/ρ` with probability ≥ 1 − δ.
pub fn bernstein_rhs(rho: f64, sigma_sq: f64, b: f64, delta: f64) -> f64 {
    rho * sigma_sq / b + b * (1.0 / delta).ln() / rho
}

/// Coverage of the Bernstein-type bound over `n_trials` independent paths.
/// `b` must bound `|ξ_k − E_kξ_k|` almost surely.
#[allow(clippy::too_many_arguments)]
pub fn check_bernstein_coverage(
    mds: &ScalarMds,
    b: f64,
    rho: f64,
    delta: f64,
    n: usize,
    n_trials: usize,
    seed: u64,
) -> Result<CoverageReport> {
    mds.validate()?;
    check_delta(delta)?;
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::invalid(format!("rho must lie in (0,1], got {rho}")));
    }
    if !(b > 0.0) || mds.deviation_sup() > b * (1.0 + REL_TOL) {
        return Err(Error::invalid(format!(
            "increments deviate by up to {} which exceeds b = {b}",
            mds.deviation_sup()
        )));
    }
    if n == 0 || n_trials == 0 {
        return Err(Error::invalid("n and n_trials must be positive"));
    }
    let outcomes: Vec<(f64, f64)> = (0..n_trials)
        .into_par_iter()
        .map(|k| {
            let mut rng = RngStream::new(seed, k as u64);
            let (dev, var) = mds.simulate(n, &mut rng);
            (dev, bernstein_rhs(rho, var, b, delta))
        })
        .collect();
    Ok(coverage(
        "bernstein-martingale",
        format!("sum dev <= rho*sigma^2/b + b*ln(1/delta)/rho (rho={rho}, b={b}, n={n})"),
        delta,
        &outcomes,
    ))
}

/// Vector martingale-difference sequences with bounded increments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum VectorMds {
    Zero { dim: usize },
    /// Independent `±scale` coordinates.
    Rademacher { dim: usize, scale: f64 },
    /// `min(r, cap) · u`, `r ~ Pareto(shape, scale)`, `u` uniform on the sphere.
    ClippedParetoRadial { dim: usize, shape: f64, scale: f64, cap: f64 },
}

impl VectorMds {
    fn dim(&self) -> usize {
        match *self {
            VectorMds::Zero { dim } | VectorMds::Rademacher { dim, .. } | VectorMds::ClippedParetoRadial { dim, .. } => dim,
        }
    }

    /// `sup ‖ξ_k‖`.
    pub fn norm_sup(&self) -> f64 {
        match *self {
            VectorMds::Zero { .. } => 0.0,
            VectorMds::Rademacher { dim, scale } => scale * (dim as f64).sqrt(),
            VectorMds::ClippedParetoRadial { cap, .. } => cap,
        }
    }

    /// `E‖ξ_k‖²`.
    pub fn second_moment(&self) -> f64 {
        match *self {
            VectorMds::Zero { .. } => 0.0,
            VectorMds::Rademacher { dim, scale } => scale * scale * dim as f64,
            VectorMds::ClippedParetoRadial { shape, scale, cap, .. } => clipped_pareto_moments(shape, scale, cap).1,
        }
    }

    fn draw(&self, rng: &mut RngStream, out: &mut [f64]) {
        match *self {
            VectorMds::Zero { .. } => out.iter_mut().for_each(|v| *v = 0.0),
            VectorMds::Rademacher { scale, .. } => out.iter_mut().for_each(|v| *v = scale * rng.sign()),
            VectorMds::ClippedParetoRadial { dim, shape, scale, cap } => {
                let r = rng.pareto(shape, scale).min(cap);
                let u = rng.unit_sphere(dim);
                for (o, x) in out.iter_mut().zip(u.as_slice()) {
                    *o = r * x;
                }
            }
        }
    }
}

/// Pinelis–Bernstein bound: `max_j ‖Σ_{k≤j} ξ_k‖ ≤ 2(D/3 + σ_t) log(2/δ)`.
pub fn pinelis_rhs(d_bound: f64, sigma_t: f64, delta: f64) -> f64 {
    2.0 * (d_bound / 3.0 + sigma_t) * (2.0 / delta).ln()
}

/// Coverage of the Pinelis–Bernstein bound over `n_trials` independent paths of length `t`.
pub fn check_pinelis_coverage(
    mds: &VectorMds,
    d_bound: f64,
    delta: f64,
    t: usize,
    n_trials: usize,
    seed: u64,
) -> Result<CoverageReport> {
    check_delta(delta)?;
    if mds.dim() == 0 || t == 0 || n_trials == 0 {
        return Err(Error::invalid("dim, t and n_trials must be positive"));
    }
    if mds.norm_sup() > d_bound * (1.0 + REL_TOL) {
        return Err(Error::invalid(format!(
            "increments reach norm {} which exceeds D = {d_bound}",
            mds.norm_sup()
        )));
    }
    let sigma_t = (t as f64 * mds.second_moment()).sqrt();
    let rhs = pinelis_rhs(d_bound, sigma_t, delta);
    let dim = mds.dim();
    let outcomes: Vec<(f64, f64)> = (0..n_trials)
        .into_par_iter()
        .map(|k| {
            let mut rng = RngStream::new(seed, k as u64);
            let mut partial = vec![0.0; dim];
            let mut xi = vec![0.0; dim];
            let mut running_max: f64 = 0.0;
            for _ in 0..t {
                mds.draw(&mut rng, &mut xi);
                for (p, x) in partial.iter_mut().zip(&xi) {
                    *p += x;
                }
                running_max = running_max.max(partial.iter().map(|v| v * v).sum::<f64>().sqrt());
            }
            (running_max, rhs)
        })
        .collect();
    Ok(coverage(
        "pinelis-bernstein",
        format!("max_j |partial sum| <= 2(D/3 + sigma_t) ln(2/delta) (D={d_bound}, t={t})"),
        delta,
        &outcomes,
    ))
}

/// Parameters of the uniform convergence bound for gradients over a ball of radius `R`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformConvBound {
    pub l: f64,
    pub r: f64,
    pub b: f64,
    pub n: usize,
    pub d: usize,
    pub delta: f64,
}

impl UniformConvBound {
    /// `((LR + b)/√n) (2 + 2√(48e√2 (log 2 + d log(3e))) + √(2 log(1/δ)))`.
    pub fn value(&self) -> Result<f64> {
        if !(self.l > 0.0 && self.r > 0.0 && self.b > 0.0 && self.n > 0 && self.d > 0) {
            return Err(Error::invalid("L, R, b, n and d must be positive"));
        }
        check_delta(self.delta)?;
        let e = std::f64::consts::E;
        let dim_term = 48.0 * e * std::f64::consts::SQRT_2 * (2f64.ln() + self.d as f64 * (3.0 * e).ln());
        let factor = 2.0 + 2.0 * dim_term.sqrt() + (2.0 * (1.0 / self.delta).ln()).sqrt();
        Ok((self.l * self.r + self.b) / (self.n as f64).sqrt() * factor)
    }
}

pub fn eval_uniform_conv_bound(params: &UniformConvBound) -> Result<f64> {
    params.value()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformConvReport {
    pub params: UniformConvBound,
    pub bound: f64,
    pub n_probe: usize,
    pub n_fresh: usize,
    /// Largest sampled `‖∇F(w) − ∇F_S(w)‖`.
    pub max_gap: f64,
    pub mean_gap: f64,
    pub pass: bool,
}

/// Samples `n_probe` points uniformly in the ball `B_R` and compares the
/// gradient gap (population side by Monte Carlo) with the bound. This is a
/// sampled check, not the supremum.
pub fn check_uniform_conv_sampled(
    problem: &Problem,
    radius: f64,
    delta: f64,
    n_probe: usize,
    n_fresh: usize,
    seed: u64,
) -> Result<UniformConvReport> {
    let params = UniformConvBound {
        l: problem.smoothness_l,
        r: radius,
        b: problem.b_constant(),
        n: problem.n(),
        d: problem.dim,
        delta,
    };
    let bound = params.value()?;
    if n_probe == 0 || n_fresh == 0 {
        return Err(Error::invalid("n_probe and n_fresh must be positive"));
    }
    let mut rng = RngStream::new(seed, 0);
    let population: Vec<_> = (0..n_fresh).map(|_| problem.population_sample(&mut rng)).collect();
    let d = problem.dim;
    let gaps: Vec<f64> = (0..n_probe)
        .map(|_| {
            let radial = radius * rng.uniform().powf(1.0 / d as f64);
            let w = rng.unit_sphere(d).scale(radial);
            let pop = problem.mean_grad_over(&w, &population);
            let emp = problem.full_grad(&w);
            pop.sub(&emp).map(|v| v.norm()).unwrap_or(f64::INFINITY)
        })
        .collect();
    let max_gap = gaps.iter().cloned().fold(0.0, f64::max);
    Ok(UniformConvReport {
        params,
        bound,
        n_probe,
        n_fresh,
        max_gap,
        mean_gap: gaps.iter().sum::<f64>() / n_probe as f64,
        pass: max_gap <= bound,
    })
}

/// Both summation inequalities evaluated on one sequence, with slacks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdagradSumReport {
    pub len: usize,
    pub total: f64,
    /// `Σ a_i / √(Σ_{k≤i} a_k)`
    pub sqrt_sum: f64,
    /// `Σ a_i / Σ_{k≤i} a_k`
    pub ratio_sum: f64,
    /// `sqrt_sum − √total`
    pub lower_slack: f64,
    /// `2√total − sqrt_sum`
    pub upper_slack: f64,
    /// `1 + log(1 + total) − ratio_sum`
    pub log_slack: f64,
    pub sqrt_chain_holds: bool,
    pub log_bound_holds: bool,
    pub pass: bool,
}

/// Checks `√Σa ≤ Σ a_i/√S_i ≤ 2√Σa` and `Σ a_i/S_i ≤ 1 + log(1 + Σa)` with
/// `S_i = Σ_{k≤i} a_k`. Terms with `S_i = 0` (a leading run of zeros)
/// contribute 0.
pub fn check_adagrad_sums(seq: &[f64]) -> Result<AdagradSumReport> {
    if let Some(i) = seq.iter().position(|a| !(*a >= 0.0 && a.is_finite())) {
        return Err(Error::invalid(format!("entry {i} = {} is not a finite non-negative number", seq[i])));
    }
    let mut prefix = 0.0;
    let mut sqrt_sum = 0.0;
    let mut ratio_sum = 0.0;
    for &a in seq {
        prefix += a;
        if prefix > 0.0 {
            sqrt_sum += a / prefix.sqrt();
            ratio_sum += a / prefix;
        }
    }
    let total = prefix;
    let root = total.sqrt();
    let lower_slack = sqrt_sum - root;
    let upper_slack = 2.0 * root - sqrt_sum;
    let log_slack = 1.0 + total.ln_1p() - ratio_sum;
    let tol = |scale: f64| REL_TOL * scale.max(f64::MIN_POSITIVE);
    let sqrt_chain_holds = lower_slack >= -tol(root) && upper_slack >= -tol(root);
    let log_bound_holds = log_slack >= -tol(ratio_sum.max(1.0));
    Ok(AdagradSumReport {
        len: seq.len(),
        total,
        sqrt_sum,
        ratio_sum,
        lower_slack,
        upper_slack,
        log_slack,
        sqrt_chain_holds,
        log_bound_holds,
        pass: sqrt_chain_holds && log_bound_holds,
    })
}

/// Random non-negative sequences with lengths in `1..=max_len` and entries
/// log-uniform over `[1e-6, 1e6]`.
pub fn random_sequences(count: usize, max_len: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = RngStream::new(seed, 0);
    (0..count)
        .map(|_| {
            let len = 1 + rng.index(max_len.max(1));
            (0..len).map(|_| 10f64.powf(12.0 * rng.uniform() - 6.0)).collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adagrad_sums_examples() {
        let r = check_adagrad_sums(&[1.0, 1.0, 1.0, 1.0]).unwrap();
        let middle = 1.0 + 1.0 / 2f64.sqrt() + 1.0 / 3f64.sqrt() + 0.5;
        assert!((r.sqrt_sum - middle).abs() < 1e-14);
        assert!((r.sqrt_sum - 2.784_457).abs() < 1e-6);
        assert!((r.ratio_sum - 25.0 / 12.0).abs() < 1e-14);
        assert!((1.0 + 5f64.ln() - 2.609).abs() < 1e-3);
        assert!(r.pass);

        for c in [1e-3, 1.0, 7.0, 1e6] {
            let r = check_adagrad_sums(&[c]).unwrap();
            assert!(r.lower_slack.abs() <= 1e-12 * c.sqrt());
            assert!(r.sqrt_chain_holds);
        }
        assert!(check_adagrad_sums(&[1.0, -1.0]).is_err());
    }

    #[test]
    fn adagrad_sums_leading_zeros_and_all_zero() {
        let r = check_adagrad_sums(&[0.0, 0.0, 4.0]).unwrap();
        assert_eq!(r.sqrt_sum, 2.0);
        assert!(r.pass);
        assert!(check_adagrad_sums(&[0.0, 0.0]).unwrap().pass);
    }

    #[test]
    fn adagrad_sums_log_bound_fails_at_small_scale() {
        // [ε, ε]: ratio sum 1.5 while 1 + log(1 + 2ε) ≈ 1
        let r = check_adagrad_sums(&[1e-3, 1e-3]).unwrap();
        assert!(r.sqrt_chain_holds);
        assert!(!r.log_bound_holds);
    }

    #[test]
    fn bernstein_rhs_example() {
        let rhs = bernstein_rhs(1.0, 0.0, 1.0, (-1f64).exp());
        assert!((rhs - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bernstein_deterministic_has_full_coverage() {
        let r = check_bernstein_coverage(&ScalarMds::Deterministic { value: 3.0 }, 1.0, 0.5, 0.1, 100, 200, 0).unwrap();
        assert_eq!(r.n_violations, 0);
        assert!(r.pass);
    }

    #[test]
    fn bernstein_rejects_undersized_b() {
        let spec = ScalarMds::Bernoulli { p: 0.5, scale: 2.0 };
        assert!(check_bernstein_coverage(&spec, 0.5, 1.0, 0.1, 10, 10, 0).is_err());
    }

    #[test]
    fn clipped_pareto_moments_match_monte_carlo() {
        let (shape, scale, cap) = (1.8, 1.0, 5.0);
        let (m1, m2) = clipped_pareto_moments(shape, scale, cap);
        let mut rng = RngStream::new(3, 3);
        let n = 400_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let x = rng.pareto(shape, scale).min(cap);
            s1 += x;
            s2 += x * x;
        }
        assert!((s1 / n as f64 - m1).abs() < 0.01 * m1);
        assert!((s2 / n as f64 - m2).abs() < 0.01 * m2);
        // shape = 2 uses the logarithmic branch
        let (_, m2_log) = clipped_pareto_moments(2.0, 1.0, cap);
        assert!((m2_log - (1.0 + 2.0 * cap.ln())).abs() < 1e-12);
    }

    #[test]
    fn pinelis_zero_and_single_step() {
        let r = check_pinelis_coverage(&VectorMds::Zero { dim: 3 }, 1.0, 0.05, 50, 100, 0).unwrap();
        assert_eq!(r.n_violations, 0);
        assert_eq!(r.mean_lhs, 0.0);
        let spec = VectorMds::Rademacher { dim: 2, scale: 1.0 };
        let r = check_pinelis_coverage(&spec, 2f64.sqrt(), 0.05, 1, 100, 0).unwrap();
        assert!((r.mean_lhs - 2f64.sqrt()).abs() < 1e-12);
        assert!(check_pinelis_coverage(&spec, 1.0, 0.05, 1, 10, 0).is_err());
    }

    #[test]
    fn uniform_conv_bound_structure() {
        let base = UniformConvBound { l: 1.0, r: 1.0, b: 1.0, n: 100, d: 2, delta: 0.05 };
        let v100 = base.value().unwrap();
        let v400 = UniformConvBound { n: 400, ..base }.value().unwrap();
        assert!((v400 / v100 - 0.5).abs() < 1e-15);
        let at = |r: f64| UniformConvBound { r, ..base }.value().unwrap();
        let slope = at(2.0) - at(1.0);
        assert!(((at(3.0) - at(2.0)) - slope).abs() < 1e-12);
        assert!(UniformConvBound { b: 0.0, ..base }.value().is_err());
    }

    #[test]
    fn point_mass_clip_checks() {
        let dist = ShiftedNoise::point_mass(ParamVec::new(vec![1.0, 2.0]).unwrap(), 2.0);
        let g = dist.moment_constant(2.0);
        let mut rng = RngStream::new(0, 0);
        let r = check_clip_second_moment(&dist, &[0.5, 1.0, 4.0], 2.0, g, 1000, &mut rng).unwrap();
        assert!(r.rows.iter().all(|row| row.estimate < 1e-12));
        // α = 2: bound is G² for every τ
        assert!(r.rows.iter().all(|row| (row.bound - g * g).abs() < 1e-12));
        let b = check_clip_bias(&dist, &[10.0], 2.0, g, 1000, &mut rng).unwrap();
        assert_eq!(b.rows[0].estimate, 0.0);
    }
}
