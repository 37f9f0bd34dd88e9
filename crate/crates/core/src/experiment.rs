//! Runs a resolved [`RunConfig`] end to end and writes its output files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::conclab::{
    check_clip_bias, check_clip_second_moment, check_bernstein_coverage, check_pinelis_coverage, check_uniform_conv_sampled, check_adagrad_sums,
    random_sequences, ScalarMds, ShiftedNoise, UniformConvBound, VectorMds,
};
use crate::config::{ExperimentKind, RunConfig};
use crate::error::{Error, Result};
use crate::harness::{
    contrast_clipped_vs_unclipped, gen_gap_experiment, sweep, ContrastReport, ContrastSpec, GenGapReport, GenGapSpec,
    RateFit, SweepNode, SweepSpec,
};
use crate::io::{write_json, write_trajectory_csv};
use crate::math::{ParamVec, RngStream, RNG_ALGORITHM};
use crate::optim::{run, RunOptions};
use crate::problems::{NoiseKind, NoiseModel};
use crate::schedules::{build_schedule, Algorithm, Measure, Schedule};
use crate::svg::write_loglog_svg;

/// Provenance block written into every output document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stamp {
    pub tool: String,
    pub version: String,
    pub rng: String,
    /// How per-trial stream ids are derived.
    pub streams: String,
    pub platform: String,
}

impl Stamp {
    pub fn current() -> Stamp {
        Stamp {
            tool: "heavytail-opt".into(),
            version: crate::VERSION.into(),
            rng: RNG_ALGORITHM.into(),
            streams: "sweep: (node << 32) | seed_index; run/contrast: seed_index".into(),
            platform: format!("{}-{}", std::env::consts::OS, std::env::consts::ARCH),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub stamp: Stamp,
    pub config: RunConfig,
    pub g: f64,
    pub schedule: Schedule,
    pub horizon: usize,
    #[serde(with = "crate::io::ext_float")]
    pub avg_sq: f64,
    #[serde(with = "crate::io::ext_float")]
    pub avg_norm: f64,
    #[serde(with = "crate::io::ext_float")]
    pub final_grad_norm_sq: f64,
    pub clip_fraction: f64,
    pub diverged: bool,
    pub trajectory: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub stamp: Stamp,
    pub config: RunConfig,
    pub algorithm: Algorithm,
    pub measure: Measure,
    pub g: f64,
    pub target_exponent: f64,
    /// Names the exponent formula the slope is compared with.
    pub target_label: String,
    pub nodes: Vec<SweepNode>,
    /// Gating fit of the raw quantiles.
    pub fit: RateFit,
    /// Fit of `quantile / log(T/δ)`.
    pub fit_log_corrected: RateFit,
    /// Trajectory file names relative to the output directory, by node then seed.
    pub trajectories: Vec<Vec<String>>,
}

impl SweepSummary {
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.nodes.iter().map(|n| (n.horizon as f64, n.quantile)).collect()
    }

    pub fn load(path: &Path) -> Result<SweepSummary> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let summary: SweepSummary = serde_json::from_str(&text)?;
        for node in &summary.nodes {
            node.schedule.validate()?;
        }
        Ok(summary)
    }
}

/// One line of the conclab report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckItem {
    pub name: String,
    pub parameters: serde_json::Value,
    #[serde(with = "crate::io::ext_float")]
    pub estimate: f64,
    #[serde(with = "crate::io::ext_float")]
    pub bound: f64,
    #[serde(with = "crate::io::ext_float")]
    pub se: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConclabSummary {
    pub stamp: Stamp,
    pub config: RunConfig,
    pub checks: Vec<CheckItem>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastSummary {
    pub stamp: Stamp,
    pub config: RunConfig,
    pub report: ContrastReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenGapSummary {
    pub stamp: Stamp,
    pub config: RunConfig,
    pub report: GenGapReport,
}

/// What a finished experiment produced.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    /// One-line human summary.
    pub headline: String,
}

pub fn target_label(measure: Measure) -> &'static str {
    match measure {
        Measure::SqNorm => "avg squared gradient norm ~ T^-((2a-2)/(3a-2))",
        Measure::Norm => "avg gradient norm ~ T^-((a-1)/(3a-2))",
    }
}

/// Runs `cfg` and writes its outputs under `out_dir`.
pub fn execute(cfg: &RunConfig, out_dir: &Path) -> Result<Outcome> {
    match cfg.kind {
        ExperimentKind::Run => run_single(cfg, out_dir),
        ExperimentKind::Sweep => run_sweep(cfg, out_dir),
        ExperimentKind::Contrast => run_contrast(cfg, out_dir),
        ExperimentKind::Gengap => run_gengap(cfg, out_dir),
        ExperimentKind::Conclab => run_conclab(cfg, out_dir),
    }
}

fn run_single(cfg: &RunConfig, out_dir: &Path) -> Result<Outcome> {
    let problem = cfg.build_problem()?;
    let t = cfg.horizon();
    let schedule = build_schedule(
        cfg.algorithm,
        t,
        cfg.alpha,
        &cfg.schedule.constants(),
        cfg.schedule.p,
        t,
        problem.smoothness_l,
        problem.moment.g_value,
    )?;
    let mut opts = RunOptions::new(cfg.seed, 0);
    opts.record_every = cfg.record_every();
    let rec = run(&problem, &schedule, &opts)?;
    let csv = out_dir.join("trajectory.csv");
    write_trajectory_csv(&csv, &rec.samples)?;
    let summary = RunSummary {
        stamp: Stamp::current(),
        config: cfg.clone(),
        g: problem.moment.g_value,
        schedule,
        horizon: t,
        avg_sq: rec.avg_sq,
        avg_norm: rec.avg_norm,
        final_grad_norm_sq: rec.final_grad_norm_sq,
        clip_fraction: rec.clip_fraction,
        diverged: rec.diverged,
        trajectory: "trajectory.csv".into(),
    };
    let json_path = out_dir.join("summary.json");
    write_json(&json_path, &summary)?;
    Ok(Outcome {
        files: vec![csv, json_path],
        headline: format!(
            "{} T={} avg_sq={} avg_norm={}{}",
            cfg.algorithm,
            t,
            rec.avg_sq,
            rec.avg_norm,
            if rec.diverged { " (diverged)" } else { "" }
        ),
    })
}

pub fn sweep_spec(cfg: &RunConfig) -> SweepSpec {
    SweepSpec {
        algorithm: cfg.algorithm,
        alpha: cfg.alpha,
        t_grid: cfg.t_grid.clone(),
        n_seeds: cfg.n_seeds(),
        delta: cfg.delta,
        constants: cfg.schedule.constants(),
        p: cfg.schedule.p,
        base_seed: cfg.seed,
        record_every: cfg.record_every(),
        tolerance: cfg.tolerance,
    }
}

fn run_sweep(cfg: &RunConfig, out_dir: &Path) -> Result<Outcome> {
    let problem = cfg.build_problem()?;
    let out = sweep(&problem, &sweep_spec(cfg))?;
    let mut files = Vec::new();
    let mut trajectories = Vec::new();
    for (node, chunk) in out.records.chunks(cfg.n_seeds()).enumerate() {
        let mut names = Vec::new();
        for (k, rec) in chunk.iter().enumerate() {
            let name = format!("trajectories/T{}_seed{k:03}.csv", out.nodes[node].horizon);
            let path = out_dir.join(&name);
            write_trajectory_csv(&path, &rec.samples)?;
            files.push(path);
            names.push(name);
        }
        trajectories.push(names);
    }
    let summary = SweepSummary {
        stamp: Stamp::current(),
        config: cfg.clone(),
        algorithm: cfg.algorithm,
        measure: out.measure,
        g: problem.moment.g_value,
        target_exponent: out.target_exponent,
        target_label: target_label(out.measure).into(),
        nodes: out.nodes,
        fit: out.fit,
        fit_log_corrected: out.fit_log_corrected,
        trajectories,
    };
    let json_path = out_dir.join("summary.json");
    write_json(&json_path, &summary)?;
    let svg_path = out_dir.join("loglog.svg");
    write_loglog_svg(&svg_path, &plot_title(&summary), &summary.points(), Some(&summary.fit))?;
    files.push(json_path);
    files.push(svg_path);
    let slope = summary.fit.slope.map_or("invalid".to_string(), |s| format!("{s:.4}"));
    Ok(Outcome {
        files,
        headline: format!(
            "{} slope {slope} vs target {:.4} (tolerance {}): {}",
            cfg.algorithm,
            -summary.target_exponent,
            cfg.tolerance,
            if summary.fit.pass { "PASS" } else { "FAIL" }
        ),
    })
}

pub fn plot_title(summary: &SweepSummary) -> String {
    format!(
        "{} alpha={} delta={} ({}-quantile over {} seeds)",
        summary.algorithm,
        summary.config.alpha,
        summary.config.delta,
        1.0 - summary.config.delta,
        summary.config.n_seeds()
    )
}

/// Re-renders the plot of a saved sweep summary.
pub fn plot_summary(summary_path: &Path, svg_path: &Path) -> Result<()> {
    let summary = SweepSummary::load(summary_path)?;
    write_loglog_svg(svg_path, &plot_title(&summary), &summary.points(), Some(&summary.fit))
}

fn run_contrast(cfg: &RunConfig, out_dir: &Path) -> Result<Outcome> {
    let problem = cfg.build_problem()?;
    let spec = ContrastSpec {
        alpha: cfg.alpha,
        horizon: cfg.horizon(),
        n_seeds: cfg.n_seeds(),
        delta: cfg.delta,
        constants: cfg.schedule.constants(),
        p: cfg.schedule.p,
        base_seed: cfg.seed,
    };
    let report = contrast_clipped_vs_unclipped(&problem, &spec)?;
    let headline = format!(
        "clipped q={} unclipped q={} unclipped diverged {:.3} flagged {:.3}",
        report.clipped.quantile, report.unclipped.quantile, report.unclipped.diverged_fraction, report.unclipped.flagged_fraction
    );
    let path = out_dir.join("contrast.json");
    write_json(
        &path,
        &ContrastSummary {
            stamp: Stamp::current(),
            config: cfg.clone(),
            report,
        },
    )?;
    Ok(Outcome { files: vec![path], headline })
}

pub fn gengap_spec(cfg: &RunConfig) -> Result<GenGapSpec> {
    Ok(GenGapSpec {
        algorithm: cfg.algorithm,
        alpha: cfg.alpha,
        dim: cfg.problem.d,
        n_grid: cfg.gengap.n_grid.clone(),
        n_seeds: cfg.n_seeds(),
        n_fresh: cfg.gengap.n_fresh,
        delta: cfg.delta,
        noise: cfg.noise_model()?,
        label_scale: cfg.problem.label_scale,
        w_star_norm: cfg.problem.w_star_norm,
        constants: cfg.schedule.constants(),
        p: cfg.schedule.p,
        base_seed: cfg.seed,
        records_per_trial: cfg.gengap.records_per_trial,
    })
}

fn run_gengap(cfg: &RunConfig, out_dir: &Path) -> Result<Outcome> {
    let report = gen_gap_experiment(&gengap_spec(cfg)?)?;
    let headline = format!("spearman(n, population quantile) = {:.4}", report.spearman);
    let path = out_dir.join("gengap.json");
    write_json(
        &path,
        &GenGapSummary {
            stamp: Stamp::current(),
            config: cfg.clone(),
            report,
        },
    )?;
    Ok(Outcome { files: vec![path], headline })
}

/// The full battery of concentration and clipping checks.
pub fn conclab_checks(cfg: &RunConfig) -> Result<Vec<CheckItem>> {
    let c = &cfg.conclab;
    let mut items = Vec::new();
    let mut mean = vec![0.0; c.dim];
    mean[0] = 1.0;
    let mean = ParamVec::new(mean)?;
    for (shape, alpha) in [(3.0, 2.0), (1.8, 1.5)] {
        let dist = ShiftedNoise::new(mean.clone(), NoiseModel::new(NoiseKind::ParetoAdditive, shape, 1.0, alpha)?)?;
        let g = dist.moment_constant(alpha);
        let mut rng = RngStream::new(cfg.seed, 1);
        let bias = check_clip_bias(&dist, &c.tau_grid, alpha, g, c.n_mc, &mut rng)?;
        let mut rng = RngStream::new(cfg.seed, 2);
        let second = check_clip_second_moment(&dist, &c.tau_grid, alpha, g, c.n_mc, &mut rng)?;
        for report in [bias, second] {
            for row in report.rows {
                items.push(CheckItem {
                    name: report.name.clone(),
                    parameters: json!({"pareto_shape": shape, "alpha": alpha, "G": g, "tau": row.tau, "n_mc": c.n_mc, "ratio": row.ratio}),
                    estimate: row.estimate,
                    bound: row.bound,
                    se: row.se,
                    pass: row.pass,
                });
            }
        }
    }
    let scalar = [
        (ScalarMds::Bernoulli { p: 0.3, scale: 1.0 }, 1.0),
        (ScalarMds::MarkovBernoulli { p_after_zero: 0.2, p_after_one: 0.7, scale: 1.0 }, 1.0),
        (
            ScalarMds::ClippedPareto { shape: 1.8, scale: 1.0, cap: 10.0 },
            ScalarMds::ClippedPareto { shape: 1.8, scale: 1.0, cap: 10.0 }.deviation_sup(),
        ),
    ];
    let vector = [
        (VectorMds::Rademacher { dim: 2, scale: 1.0 }, 2f64.sqrt()),
        (VectorMds::ClippedParetoRadial { dim: 2, shape: 1.8, scale: 1.0, cap: 10.0 }, 10.0),
    ];
    for (i, &delta) in c.deltas.iter().enumerate() {
        for (j, (mds, b)) in scalar.iter().enumerate() {
            let r = check_bernstein_coverage(mds, *b, 0.5, delta, c.martingale_len, c.n_trials, cfg.seed.wrapping_add((10 * i + j) as u64))?;
            items.push(coverage_item(r, json!({"increments": mds, "b": b, "rho": 0.5, "n": c.martingale_len})));
        }
        for (j, (mds, d)) in vector.iter().enumerate() {
            let r = check_pinelis_coverage(mds, *d, delta, c.martingale_len, c.n_trials, cfg.seed.wrapping_add((10 * i + j + 5) as u64))?;
            items.push(coverage_item(r, json!({"increments": mds, "D": d, "t": c.martingale_len})));
        }
    }
    let reference = UniformConvBound { l: 1.0, r: 1.0, b: 1.0, n: 100, d: 2, delta: 0.05 };
    items.push(CheckItem {
        name: "uniform-convergence-bound".into(),
        parameters: serde_json::to_value(reference)?,
        estimate: reference.value()?,
        bound: f64::INFINITY,
        se: 0.0,
        pass: true,
    });
    if cfg.problem.family == crate::config::FamilyKind::RobustRegression {
        let problem = cfg.build_problem()?;
        let radius = 2.0 * cfg.problem.w_star_norm.max(0.5);
        let r = check_uniform_conv_sampled(&problem, radius, cfg.delta, c.n_probe, c.n_fresh, cfg.seed)?;
        items.push(CheckItem {
            name: "uniform-convergence-sampled".into(),
            parameters: json!({"params": r.params, "n_probe": r.n_probe, "n_fresh": r.n_fresh, "mean_gap": r.mean_gap}),
            estimate: r.max_gap,
            bound: r.bound,
            se: 0.0,
            pass: r.pass,
        });
    }
    let seqs = random_sequences(c.n_sequences, 100, cfg.seed);
    let reports = seqs.iter().map(|s| check_adagrad_sums(s)).collect::<Result<Vec<_>>>()?;
    let sqrt_failures = reports.iter().filter(|r| !r.sqrt_chain_holds).count();
    let log_failures = reports.iter().filter(|r| !r.log_bound_holds).count();
    let worst = |f: fn(&crate::conclab::AdagradSumReport) -> f64| reports.iter().map(f).fold(f64::INFINITY, f64::min);
    items.push(CheckItem {
        name: "adagrad-sum-sqrt-chain".into(),
        parameters: json!({"sequences": c.n_sequences, "min_lower_slack": worst(|r| r.lower_slack), "min_upper_slack": worst(|r| r.upper_slack)}),
        estimate: sqrt_failures as f64,
        bound: 0.0,
        se: 0.0,
        pass: sqrt_failures == 0,
    });
    items.push(CheckItem {
        name: "adagrad-sum-log-bound".into(),
        parameters: json!({"sequences": c.n_sequences, "min_log_slack": worst(|r| r.log_slack)}),
        estimate: log_failures as f64,
        bound: 0.0,
        se: 0.0,
        pass: log_failures == 0,
    });
    Ok(items)
}

fn coverage_item(r: crate::conclab::CoverageReport, mut parameters: serde_json::Value) -> CheckItem {
    parameters["delta"] = json!(r.delta);
    parameters["n_trials"] = json!(r.n_trials);
    parameters["n_violations"] = json!(r.n_violations);
    parameters["bound"] = json!(r.bound);
    CheckItem {
        name: r.name,
        parameters,
        estimate: r.violation_rate,
        bound: r.threshold,
        se: r.se,
        pass: r.pass,
    }
}

fn run_conclab(cfg: &RunConfig, out_dir: &Path) -> Result<Outcome> {
    let checks = conclab_checks(cfg)?;
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    let headline = format!("{} checks, {} failed {:?}", checks.len(), failed.len(), failed);
    let path = out_dir.join("conclab.json");
    write_json(
        &path,
        &ConclabSummary {
            stamp: Stamp::current(),
            config: cfg.clone(),
            pass: failed.is_empty(),
            checks,
        },
    )?;
    Ok(Outcome { files: vec![path], headline })
}
