//! Multi-seed experiments: horizon sweeps with high-probability quantiles,
//! log-log rate fits, the clipped/unclipped contrast and the sample-size
//! sweep for the population metric.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{check_alpha, RngStream};
use crate::optim::{run, RunOptions, TrialRecord};
use crate::problems::{make_robust_regression_with, NoiseModel, Problem, RegressionOptions};
use crate::schedules::{build_schedule, couple_t_to_n, rate_exponent, Algorithm, Constants, Measure, Schedule};

/// Stream for the shared population reference sample.
const POPULATION_STREAM: u64 = u64::MAX - 2;

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("delta must lie in (0,1), got {delta}")))
    }
}

/// 1-based index `⌈(1−δ)N⌉` clamped to `[1, N]`.
pub fn quantile_index(n: usize, delta: f64) -> Result<usize> {
    check_delta(delta)?;
    if n == 0 {
        return Err(Error::invalid("quantile of an empty set"));
    }
    // the small offset keeps exact products such as 0.8·10 from rounding up
    let k = ((1.0 - delta) * n as f64 - 1e-9).ceil() as usize;
    Ok(k.clamp(1, n))
}

/// Empirical `(1−δ)`-quantile: the order statistic at [`quantile_index`].
/// `+∞` sorts above every finite value; NaN is rejected.
pub fn quantile(values: &[f64], delta: f64) -> Result<f64> {
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid("quantile input contains NaN"));
    }
    let k = quantile_index(values.len(), delta)?;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[k - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub t: f64,
    #[serde(with = "crate::io::ext_float")]
    pub metric: f64,
}

/// Ordinary least squares of `log metric` on `log T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub points: Vec<RatePoint>,
    /// False when some metric is non-finite or non-positive; the fit fields are then absent.
    pub valid: bool,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub residual_rms: Option<f64>,
    /// The fitted slope is compared with `−target_exponent`.
    pub target_exponent: f64,
    pub tolerance: f64,
    pub pass: bool,
}

pub fn fit_rate(points: &[(f64, f64)], target_exponent: f64, tolerance: f64) -> Result<RateFit> {
    if points.len() < 2 {
        return Err(Error::invalid("a rate fit needs at least 2 points"));
    }
    if points.iter().any(|(t, _)| !(*t > 0.0 && t.is_finite())) {
        return Err(Error::invalid("horizons must be positive and finite"));
    }
    if !(tolerance >= 0.0) {
        return Err(Error::invalid("tolerance must be >= 0"));
    }
    let rate_points = points.iter().map(|&(t, metric)| RatePoint { t, metric }).collect();
    let invalid = RateFit {
        points: rate_points,
        valid: false,
        slope: None,
        intercept: None,
        residual_rms: None,
        target_exponent,
        tolerance,
        pass: false,
    };
    if points.iter().any(|(_, m)| !(*m > 0.0 && m.is_finite())) {
        return Ok(invalid);
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("a rate fit needs at least two distinct horizons"));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    Ok(RateFit {
        valid: true,
        slope: Some(slope),
        intercept: Some(intercept),
        residual_rms: Some((rss / n).sqrt()),
        pass: (slope + target_exponent).abs() <= tolerance,
        ..invalid
    })
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut r = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid("spearman needs two equal-length samples of size >= 2"));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::invalid("spearman input contains NaN"));
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::invalid("spearman undefined for a constant sample"));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

fn check_geometric(grid: &[usize], name: &str) -> Result<()> {
    if grid.len() < 2 || grid[0] == 0 {
        return Err(Error::invalid(format!("{name} needs at least 2 positive nodes")));
    }
    let ratio = grid[1] as f64 / grid[0] as f64;
    let geometric = ratio > 1.0
        && grid.windows(2).all(|w| {
            let r = w[1] as f64 / w[0] as f64;
            (r - ratio).abs() <= 1e-9 * ratio
        });
    if geometric {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be an increasing geometric grid, got {grid:?}")))
    }
}

/// Stream id of trial `seed_idx` at grid node `node`.
pub fn trial_stream(node: usize, seed_idx: usize) -> u64 {
    ((node as u64) << 32) | seed_idx as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub algorithm: Algorithm,
    pub alpha: f64,
    pub t_grid: Vec<usize>,
    pub n_seeds: usize,
    pub delta: f64,
    pub constants: Constants,
    /// Schedule constant `p`; `None` picks the family default.
    pub p: Option<f64>,
    pub base_seed: u64,
    pub record_every: usize,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepNode {
    pub horizon: usize,
    pub schedule: Schedule,
    /// Per-seed metric in seed order; `+∞` for diverged trials.
    #[serde(with = "crate::io::ext_float::vec")]
    pub metrics: Vec<f64>,
    #[serde(with = "crate::io::ext_float")]
    pub quantile: f64,
    pub n_diverged: usize,
    pub mean_clip_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub measure: Measure,
    pub target_exponent: f64,
    pub nodes: Vec<SweepNode>,
    /// Fit of the raw quantiles; this is the one that gates.
    pub fit: RateFit,
    /// Fit of `quantile / log(T/δ)`.
    pub fit_log_corrected: RateFit,
    /// All trials ordered by (horizon, seed).
    pub records: Vec<TrialRecord>,
}

fn schedule_for(problem: &Problem, algorithm: Algorithm, alpha: f64, t: usize, constants: &Constants, p: Option<f64>, t_ref: usize) -> Result<Schedule> {
    build_schedule(algorithm, t, alpha, constants, p, t_ref, problem.smoothness_l, problem.moment.g_value).map_err(|e| match e {
        Error::Constraint { constraint, detail } if !detail.contains("T =") => Error::Constraint {
            constraint,
            detail: format!("at T = {t}: {detail}"),
        },
        other => other,
    })
}

/// Runs `n_seeds` trials per horizon and extracts the `(1−δ)`-quantile of
/// the algorithm's stationarity measure at each node.
pub fn sweep(problem: &Problem, spec: &SweepSpec) -> Result<SweepOutcome> {
    check_alpha(spec.alpha)?;
    check_delta(spec.delta)?;
    if spec.t_grid.len() < 4 {
        return Err(Error::invalid("a sweep needs at least 4 horizons"));
    }
    check_geometric(&spec.t_grid, "T grid")?;
    if spec.n_seeds < 16 {
        return Err(Error::invalid(format!("a sweep needs at least 16 seeds, got {}", spec.n_seeds)));
    }
    let t_ref = spec.t_grid[0];
    let schedules = spec
        .t_grid
        .iter()
        .map(|&t| schedule_for(problem, spec.algorithm, spec.alpha, t, &spec.constants, spec.p, t_ref))
        .collect::<Result<Vec<_>>>()?;

    let jobs: Vec<(usize, usize)> = (0..schedules.len())
        .flat_map(|node| (0..spec.n_seeds).map(move |s| (node, s)))
        .collect();
    let records = jobs
        .par_iter()
        .map(|&(node, s)| {
            let mut opts = RunOptions::new(spec.base_seed, trial_stream(node, s));
            opts.record_every = spec.record_every;
            run(problem, &schedules[node], &opts)
        })
        .collect::<Result<Vec<_>>>()?;

    let measure = spec.algorithm.measure();
    let target_exponent = rate_exponent(spec.alpha, measure)?;
    let mut nodes = Vec::with_capacity(schedules.len());
    for (node, chunk) in records.chunks(spec.n_seeds).enumerate() {
        let horizon = spec.t_grid[node];
        let n_diverged = chunk.iter().filter(|r| r.diverged).count();
        if n_diverged == chunk.len() {
            return Err(Error::AllDiverged { horizon });
        }
        let metrics: Vec<f64> = chunk.iter().map(|r| r.metric(measure)).collect();
        nodes.push(SweepNode {
            horizon,
            schedule: schedules[node].clone(),
            quantile: quantile(&metrics, spec.delta)?,
            metrics,
            n_diverged,
            mean_clip_fraction: chunk.iter().map(|r| r.clip_fraction).sum::<f64>() / chunk.len() as f64,
        });
    }
    let raw: Vec<(f64, f64)> = nodes.iter().map(|n| (n.horizon as f64, n.quantile)).collect();
    let corrected: Vec<(f64, f64)> = raw.iter().map(|&(t, q)| (t, q / (t / spec.delta).ln())).collect();
    Ok(SweepOutcome {
        measure,
        target_exponent,
        fit: fit_rate(&raw, target_exponent, spec.tolerance)?,
        fit_log_corrected: fit_rate(&corrected, target_exponent, spec.tolerance)?,
        nodes,
        records,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastSpec {
    pub alpha: f64,
    pub horizon: usize,
    pub n_seeds: usize,
    pub delta: f64,
    pub constants: Constants,
    pub p: Option<f64>,
    pub base_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub algorithm: Algorithm,
    #[serde(with = "crate::io::ext_float::vec")]
    pub metrics: Vec<f64>,
    #[serde(with = "crate::io::ext_float")]
    pub quantile: f64,
    pub diverged_fraction: f64,
    /// Diverged, or `avg_sq` above the report's flag threshold.
    pub flagged_fraction: f64,
    pub mean_clip_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastReport {
    /// Shared by both arms; the unclipped arm ignores `tau`.
    pub schedule: Schedule,
    pub infinite_variance: bool,
    /// Ten times the median `avg_sq` of the clipped arm.
    #[serde(with = "crate::io::ext_float")]
    pub flag_threshold: f64,
    pub clipped: ArmReport,
    pub unclipped: ArmReport,
    pub clipped_below: bool,
}

/// Clipped SGD against plain SGD with the same step size and the same
/// noise draws per seed.
pub fn contrast_clipped_vs_unclipped(problem: &Problem, spec: &ContrastSpec) -> Result<ContrastReport> {
    check_delta(spec.delta)?;
    if spec.n_seeds == 0 {
        return Err(Error::invalid("n_seeds must be >= 1"));
    }
    let clipped_schedule = schedule_for(problem, Algorithm::SgdClipped, spec.alpha, spec.horizon, &spec.constants, spec.p, spec.horizon)?;
    let mut plain_schedule = clipped_schedule.clone();
    plain_schedule.algorithm = Algorithm::Sgd;
    let arm = |schedule: &Schedule| -> Result<Vec<TrialRecord>> {
        (0..spec.n_seeds)
            .into_par_iter()
            .map(|s| {
                let mut opts = RunOptions::new(spec.base_seed, s as u64);
                opts.record_every = spec.horizon;
                run(problem, schedule, &opts)
            })
            .collect()
    };
    let clipped = arm(&clipped_schedule)?;
    let plain = arm(&plain_schedule)?;
    let clipped_metrics: Vec<f64> = clipped.iter().map(|r| r.avg_sq).collect();
    let flag_threshold = 10.0 * quantile(&clipped_metrics, 0.5)?;
    let summarize = |algorithm: Algorithm, recs: &[TrialRecord]| -> Result<ArmReport> {
        let n = recs.len() as f64;
        let metrics: Vec<f64> = recs.iter().map(|r| r.avg_sq).collect();
        Ok(ArmReport {
            algorithm,
            quantile: quantile(&metrics, spec.delta)?,
            diverged_fraction: recs.iter().filter(|r| r.diverged).count() as f64 / n,
            flagged_fraction: recs.iter().filter(|r| r.diverged || r.avg_sq > flag_threshold).count() as f64 / n,
            mean_clip_fraction: recs.iter().map(|r| r.clip_fraction).sum::<f64>() / n,
            metrics,
        })
    };
    let clipped = summarize(Algorithm::SgdClipped, &clipped)?;
    let unclipped = summarize(Algorithm::Sgd, &plain)?;
    Ok(ContrastReport {
        schedule: clipped_schedule,
        infinite_variance: problem.noise.kind == crate::problems::NoiseKind::ParetoAdditive && problem.noise.tail_shape <= 2.0,
        flag_threshold,
        clipped_below: clipped.quantile < unclipped.quantile,
        clipped,
        unclipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenGapSpec {
    pub algorithm: Algorithm,
    pub alpha: f64,
    pub dim: usize,
    pub n_grid: Vec<usize>,
    pub n_seeds: usize,
    /// Size of the shared population reference sample.
    pub n_fresh: usize,
    pub delta: f64,
    pub noise: NoiseModel,
    pub label_scale: f64,
    pub w_star_norm: f64,
    pub constants: Constants,
    pub p: Option<f64>,
    pub base_seed: u64,
    /// Iterates per trial at which the population gradient is evaluated.
    pub records_per_trial: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenGapTrial {
    /// Mean of `‖∇F‖²` over the recorded iterates.
    #[serde(with = "crate::io::ext_float")]
    pub population: f64,
    /// Mean of `‖∇F_S‖²` over the same iterates.
    #[serde(with = "crate::io::ext_float")]
    pub empirical: f64,
    /// Largest `‖∇F − ∇F_S‖²` over the same iterates.
    #[serde(with = "crate::io::ext_float")]
    pub max_gap: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenGapNode {
    pub n: usize,
    pub horizon: usize,
    pub trials: Vec<GenGapTrial>,
    #[serde(with = "crate::io::ext_float")]
    pub population_quantile: f64,
    #[serde(with = "crate::io::ext_float")]
    pub empirical_quantile: f64,
    /// `population ≤ 2·empirical + 2·max_gap` in every trial.
    pub decomposition_holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenGapReport {
    pub nodes: Vec<GenGapNode>,
    /// Rank correlation between `n` and the population quantile.
    pub spearman: f64,
}

/// Sample-size sweep on robust regression: a fresh training set per
/// (n, seed), `T` coupled to `n`, and `∇F` estimated from one shared
/// population sample of size `n_fresh`.
pub fn gen_gap_experiment(spec: &GenGapSpec) -> Result<GenGapReport> {
    check_delta(spec.delta)?;
    check_geometric(&spec.n_grid, "n grid")?;
    if let Some(&n) = spec.n_grid.iter().find(|&&n| n <= spec.dim) {
        return Err(Error::invalid(format!("sample size n = {n} must exceed d = {}", spec.dim)));
    }
    if spec.n_seeds == 0 || spec.n_fresh == 0 || spec.records_per_trial == 0 {
        return Err(Error::invalid("n_seeds, n_fresh and records_per_trial must be positive"));
    }
    let options = |n: usize, data_seed: Option<u64>| RegressionOptions {
        dim: spec.dim,
        n,
        seed: spec.base_seed,
        noise: spec.noise.clone(),
        label_scale: spec.label_scale,
        w_star_norm: spec.w_star_norm,
        data_seed,
    };
    let truth = make_robust_regression_with(&options(1, None))?;
    let mut pop_rng = RngStream::new(spec.base_seed, POPULATION_STREAM);
    let population: Vec<_> = (0..spec.n_fresh).map(|_| truth.population_sample(&mut pop_rng)).collect();

    let coupling = spec.algorithm.coupling();
    let horizons = spec
        .n_grid
        .iter()
        .map(|&n| couple_t_to_n(n, spec.dim, spec.alpha, coupling))
        .collect::<Result<Vec<_>>>()?;
    let t_ref = horizons.iter().copied().min().unwrap_or(1);
    let schedules = horizons
        .iter()
        .map(|&t| schedule_for(&truth, spec.algorithm, spec.alpha, t, &spec.constants, spec.p, t_ref))
        .collect::<Result<Vec<_>>>()?;

    let jobs: Vec<(usize, usize)> = (0..spec.n_grid.len())
        .flat_map(|node| (0..spec.n_seeds).map(move |s| (node, s)))
        .collect();
    let trials = jobs
        .par_iter()
        .map(|&(node, s)| -> Result<GenGapTrial> {
            let data_seed = spec.base_seed.wrapping_add(1).wrapping_add(trial_stream(node, s));
            let problem = make_robust_regression_with(&options(spec.n_grid[node], Some(data_seed)))?;
            let horizon = horizons[node];
            let mut opts = RunOptions::new(data_seed, 0);
            opts.record_every = (horizon / spec.records_per_trial).max(1);
            opts.keep_iterates = true;
            let rec = run(&problem, &schedules[node], &opts)?;
            if rec.diverged {
                return Ok(GenGapTrial {
                    population: f64::INFINITY,
                    empirical: f64::INFINITY,
                    max_gap: f64::INFINITY,
                    diverged: true,
                });
            }
            let mut pop_sum = 0.0;
            let mut emp_sum = 0.0;
            let mut max_gap: f64 = 0.0;
            for (w, row) in rec.iterates.iter().zip(&rec.samples) {
                let pop = problem.mean_grad_over(w, &population);
                let emp = problem.full_grad(w);
                pop_sum += pop.norm_sq();
                emp_sum += row.grad_norm_sq;
                max_gap = max_gap.max(pop.sub(&emp)?.norm_sq());
            }
            let k = rec.iterates.len() as f64;
            Ok(GenGapTrial {
                population: pop_sum / k,
                empirical: emp_sum / k,
                max_gap,
                diverged: false,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut nodes = Vec::with_capacity(spec.n_grid.len());
    for (node, chunk) in trials.chunks(spec.n_seeds).enumerate() {
        let pop: Vec<f64> = chunk.iter().map(|t| t.population).collect();
        let emp: Vec<f64> = chunk.iter().map(|t| t.empirical).collect();
        nodes.push(GenGapNode {
            n: spec.n_grid[node],
            horizon: horizons[node],
            population_quantile: quantile(&pop, spec.delta)?,
            empirical_quantile: quantile(&emp, spec.delta)?,
            decomposition_holds: chunk
                .iter()
                .all(|t| t.diverged || t.population <= (2.0 * t.empirical + 2.0 * t.max_gap) * (1.0 + 1e-12)),
            trials: chunk.to_vec(),
        });
    }
    let ns: Vec<f64> = nodes.iter().map(|n| n.n as f64).collect();
    let qs: Vec<f64> = nodes.iter().map(|n| n.population_quantile).collect();
    Ok(GenGapReport {
        spearman: spearman(&ns, &qs)?,
        nodes,
    })
}

/// Runs `f` on a dedicated pool with `threads` workers (`None`: rayon's default).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(k) = threads {
        if k == 0 {
            return Err(Error::invalid("thread count must be >= 1"));
        }
        builder = builder.num_threads(k);
    }
    let pool = builder.build().map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}
