//! Clipped SGD, clipped SGD with momentum clipping, clipped AdaGrad-Norm
//! and the clipped accelerated template, plus unclipped baselines.
//!
//! Each step is a pure function from state to state. The stochastic
//! gradient is drawn through [`Problem::stochastic_grad`] so that the same
//! `(seed, stream_id)` yields the same gradient sequence for every
//! algorithm that queries the same points.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{clip_unchecked, ParamVec, RngStream};
use crate::problems::Problem;
use crate::schedules::{Algorithm, Hyper, Schedule};

#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    pub w: ParamVec,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgdmState {
    pub w: ParamVec,
    pub m: ParamVec,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdagradState {
    pub w: ParamVec,
    /// `G₀² + Σ_k ‖ḡ_k‖²`
    pub accum: f64,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccelState {
    pub w: ParamVec,
    pub w_tilde: ParamVec,
    pub accum: f64,
    pub t: usize,
}

impl SgdState {
    pub fn new(w: ParamVec) -> Self {
        SgdState { w, t: 1 }
    }
}

impl SgdmState {
    pub fn new(w: ParamVec) -> Self {
        let m = ParamVec::zeros(w.dim());
        SgdmState { w, m, t: 1 }
    }
}

impl AdagradState {
    pub fn new(w: ParamVec, g0: f64) -> Self {
        AdagradState {
            w,
            accum: g0 * g0,
            t: 1,
        }
    }
}

impl AccelState {
    pub fn new(w: ParamVec, g0: f64) -> Self {
        AccelState {
            w_tilde: w.clone(),
            w,
            accum: g0 * g0,
            t: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AccelMode {
    /// `α_t = 1`, `η_t = β_t = λ_t`.
    Adagrad,
    /// `α_t = 2/(t+1)`, `η_t = λ_t`, `β_t = (1+α_t)λ_t`.
    Rsag,
}

impl AccelMode {
    pub fn weight(self, t: usize) -> f64 {
        match self {
            AccelMode::Adagrad => 1.0,
            AccelMode::Rsag => 2.0 / (t as f64 + 1.0),
        }
    }
}

/// Result of one step: the new state plus what the recorder needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Step<S> {
    pub state: S,
    pub stepsize: f64,
    pub clip_active: bool,
    /// The vector actually subtracted from the iterate, before scaling by the step size.
    pub direction: ParamVec,
    pub diverged: bool,
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be > 0, got {v}")))
    }
}

/// `w' = w − η clip(g, τ)`. `τ = ∞` gives plain SGD.
pub fn sgd_apply(state: &SgdState, g: &ParamVec, eta: f64, tau: f64) -> Step<SgdState> {
    let (gbar, active) = clip_unchecked(g, tau);
    let mut w = state.w.clone();
    w.axpy(-eta, &gbar);
    let diverged = !w.is_finite();
    Step {
        state: SgdState { w, t: state.t + 1 },
        stepsize: eta,
        clip_active: active,
        direction: gbar,
        diverged,
    }
}

pub fn sgd_clipped_step(
    state: &SgdState,
    problem: &Problem,
    eta: f64,
    tau: f64,
    rng: &mut RngStream,
) -> Result<Step<SgdState>> {
    check_positive("eta", eta)?;
    check_positive("tau", tau)?;
    let g = problem.stochastic_grad(&state.w, rng);
    Ok(sgd_apply(state, &g, eta, tau))
}

/// `ḡ = clip(g, τ₁)`, `m' = γm + (1−γ)ḡ`, `w' = w − η clip(m', τ₂)`.
pub fn sgdm_apply(state: &SgdmState, g: &ParamVec, eta: f64, tau1: f64, tau2: f64, gamma: f64) -> Step<SgdmState> {
    let (gbar, active1) = clip_unchecked(g, tau1);
    let m = ParamVec::lincomb(gamma, &state.m, 1.0 - gamma, &gbar);
    let (mbar, active2) = clip_unchecked(&m, tau2);
    let mut w = state.w.clone();
    w.axpy(-eta, &mbar);
    let diverged = !(w.is_finite() && m.is_finite());
    Step {
        state: SgdmState { w, m, t: state.t + 1 },
        stepsize: eta,
        clip_active: active1 || active2,
        direction: mbar,
        diverged,
    }
}

pub fn sgdm_clipped_step(
    state: &SgdmState,
    problem: &Problem,
    eta: f64,
    tau1: f64,
    tau2: f64,
    gamma: f64,
    rng: &mut RngStream,
) -> Result<Step<SgdmState>> {
    check_positive("eta", eta)?;
    check_positive("tau1", tau1)?;
    check_positive("tau2", tau2)?;
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::invalid(format!("gamma must lie in [0,1), got {gamma}")));
    }
    let g = problem.stochastic_grad(&state.w, rng);
    Ok(sgdm_apply(state, &g, eta, tau1, tau2, gamma))
}

/// AdaGrad-Norm on clipped gradients: the accumulator adds `‖ḡ_t‖²`
/// before the step size `1/√accum` is taken.
pub fn adagrad_apply(state: &AdagradState, g: &ParamVec, tau: f64) -> Step<AdagradState> {
    let (gbar, active) = clip_unchecked(g, tau);
    let accum = state.accum + gbar.norm_sq();
    let eta = 1.0 / accum.sqrt();
    let mut w = state.w.clone();
    w.axpy(-eta, &gbar);
    let diverged = !(w.is_finite() && accum.is_finite());
    Step {
        state: AdagradState {
            w,
            accum,
            t: state.t + 1,
        },
        stepsize: eta,
        clip_active: active,
        direction: gbar,
        diverged,
    }
}

pub fn adagrad_clipped_step(
    state: &AdagradState,
    problem: &Problem,
    tau: f64,
    rng: &mut RngStream,
) -> Result<Step<AdagradState>> {
    check_positive("tau", tau)?;
    if !(state.accum > 0.0) {
        return Err(Error::invalid("accumulator must start at G0^2 > 0"));
    }
    let g = problem.stochastic_grad(&state.w, rng);
    Ok(adagrad_apply(state, &g, tau))
}

/// `w̄_t = α_t w_t + (1−α_t) w̃_t`.
pub fn accel_query_point(state: &AccelState, mode: AccelMode) -> ParamVec {
    match mode {
        AccelMode::Adagrad => state.w.clone(),
        AccelMode::Rsag => {
            let a = mode.weight(state.t);
            ParamVec::lincomb(a, &state.w, 1.0 - a, &state.w_tilde)
        }
    }
}

/// Applies a gradient drawn at `w_bar = accel_query_point(state, mode)`.
pub fn accel_apply(state: &AccelState, w_bar: &ParamVec, g: &ParamVec, tau: f64, mode: AccelMode) -> Step<AccelState> {
    let (gbar, active) = clip_unchecked(g, tau);
    let accum = state.accum + gbar.norm_sq();
    let lambda = 1.0 / accum.sqrt();
    let beta = match mode {
        AccelMode::Adagrad => lambda,
        AccelMode::Rsag => (1.0 + mode.weight(state.t)) * lambda,
    };
    let mut w = state.w.clone();
    w.axpy(-lambda, &gbar);
    let mut w_tilde = w_bar.clone();
    w_tilde.axpy(-beta, &gbar);
    let diverged = !(w.is_finite() && w_tilde.is_finite());
    Step {
        state: AccelState {
            w,
            w_tilde,
            accum,
            t: state.t + 1,
        },
        stepsize: lambda,
        clip_active: active,
        direction: gbar,
        diverged,
    }
}

pub fn accel_clipped_step(
    state: &AccelState,
    problem: &Problem,
    tau: f64,
    mode: AccelMode,
    rng: &mut RngStream,
) -> Result<Step<AccelState>> {
    check_positive("tau", tau)?;
    let w_bar = accel_query_point(state, mode);
    let g = problem.stochastic_grad(&w_bar, rng);
    Ok(accel_apply(state, &w_bar, &g, tau, mode))
}

/// One recorded row of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: usize,
    /// `‖∇F_S‖²` at the evaluation point of step `t` (`w_t`, or `w̄_t` for the accelerated template).
    #[serde(with = "crate::io::ext_float")]
    pub grad_norm_sq: f64,
    #[serde(with = "crate::io::ext_float")]
    pub loss: f64,
    pub stepsize: f64,
    pub clip_active: bool,
}

/// Everything measured in one trial.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialRecord {
    pub algorithm: Algorithm,
    pub schedule: Schedule,
    pub seed: u64,
    pub stream_id: u64,
    pub horizon: usize,
    pub samples: Vec<TrajectoryPoint>,
    /// `(1/T) Σ_t ‖∇F_S‖²`
    #[serde(with = "crate::io::ext_float")]
    pub avg_sq: f64,
    /// `(1/T) Σ_t ‖∇F_S‖`
    #[serde(with = "crate::io::ext_float")]
    pub avg_norm: f64,
    /// `‖∇F_S(w_{T+1})‖²`
    #[serde(with = "crate::io::ext_float")]
    pub final_grad_norm_sq: f64,
    pub clip_fraction: f64,
    pub diverged: bool,
    /// Evaluation points at recorded steps, when requested.
    #[serde(skip)]
    pub iterates: Vec<ParamVec>,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl TrialRecord {
    pub fn metric(&self, measure: crate::schedules::Measure) -> f64 {
        match measure {
            crate::schedules::Measure::SqNorm => self.avg_sq,
            crate::schedules::Measure::Norm => self.avg_norm,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub seed: u64,
    pub stream_id: u64,
    /// Record every k-th step; the first and last steps are always recorded.
    pub record_every: usize,
    /// Overrides [`Problem::initial_point`].
    pub init: Option<ParamVec>,
    /// Keep the evaluation point of each recorded step.
    pub keep_iterates: bool,
}

impl RunOptions {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        RunOptions {
            seed,
            stream_id,
            record_every: 1,
            init: None,
            keep_iterates: false,
        }
    }
}

enum Driver {
    Sgd(SgdState, f64, f64),
    Sgdm(SgdmState, f64, f64, f64, f64),
    Adagrad(AdagradState, f64),
    Accel(AccelState, f64, AccelMode),
}

struct Applied {
    stepsize: f64,
    clip_active: bool,
    diverged: bool,
}

impl Driver {
    fn new(schedule: &Schedule, w1: ParamVec) -> Result<Driver> {
        let unclipped = !schedule.algorithm.is_clipped();
        let tau_or_inf = |tau: f64| if unclipped { f64::INFINITY } else { tau };
        Ok(match (schedule.algorithm, schedule.hyper) {
            (Algorithm::Sgd | Algorithm::SgdClipped, Hyper::Sgd { eta, tau }) => {
                Driver::Sgd(SgdState::new(w1), eta, tau_or_inf(tau))
            }
            (Algorithm::SgdmClipped, Hyper::Sgdm { eta, tau1, tau2, gamma }) => {
                Driver::Sgdm(SgdmState::new(w1), eta, tau1, tau2, gamma)
            }
            (Algorithm::Adagrad | Algorithm::AdagradClipped, Hyper::Adaptive { tau, g0 }) => {
                Driver::Adagrad(AdagradState::new(w1, g0), tau_or_inf(tau))
            }
            (Algorithm::AccelAdagrad, Hyper::Adaptive { tau, g0 }) => {
                Driver::Accel(AccelState::new(w1, g0), tau, AccelMode::Adagrad)
            }
            (Algorithm::AccelRsag, Hyper::Adaptive { tau, g0 }) => {
                Driver::Accel(AccelState::new(w1, g0), tau, AccelMode::Rsag)
            }
            (alg, hyper) => {
                return Err(Error::invalid(format!("schedule {hyper:?} does not fit {alg}")));
            }
        })
    }

    fn query_point(&self) -> ParamVec {
        match self {
            Driver::Sgd(s, ..) => s.w.clone(),
            Driver::Sgdm(s, ..) => s.w.clone(),
            Driver::Adagrad(s, _) => s.w.clone(),
            Driver::Accel(s, _, mode) => accel_query_point(s, *mode),
        }
    }

    fn apply(&mut self, w_query: &ParamVec, g: &ParamVec) -> Applied {
        macro_rules! take {
            ($slot:expr, $step:expr) => {{
                let step = $step;
                *$slot = step.state;
                Applied {
                    stepsize: step.stepsize,
                    clip_active: step.clip_active,
                    diverged: step.diverged,
                }
            }};
        }
        match self {
            Driver::Sgd(s, eta, tau) => take!(s, sgd_apply(s, g, *eta, *tau)),
            Driver::Sgdm(s, eta, tau1, tau2, gamma) => take!(s, sgdm_apply(s, g, *eta, *tau1, *tau2, *gamma)),
            Driver::Adagrad(s, tau) => take!(s, adagrad_apply(s, g, *tau)),
            Driver::Accel(s, tau, mode) => take!(s, accel_apply(s, w_query, g, *tau, *mode)),
        }
    }
}

/// Runs `schedule.algorithm` for `schedule.horizon` steps from the
/// problem's initial point, tracking the exact full-batch stationarity
/// measure at every step.
///
/// A non-finite iterate halts the trial: it is flagged diverged and both
/// running averages become `+∞`.
pub fn run(problem: &Problem, schedule: &Schedule, opts: &RunOptions) -> Result<TrialRecord> {
    let horizon = schedule.horizon;
    if horizon == 0 {
        return Err(Error::invalid("horizon T must be >= 1"));
    }
    if opts.record_every == 0 {
        return Err(Error::invalid("record_every must be >= 1"));
    }
    let started = Instant::now();
    let w1 = opts.init.clone().unwrap_or_else(|| problem.initial_point());
    if w1.dim() != problem.dim {
        return Err(Error::invalid("initial point has the wrong dimension"));
    }
    let mut driver = Driver::new(schedule, w1)?;
    let mut rng = RngStream::new(opts.seed, opts.stream_id);

    let mut samples = Vec::new();
    let mut iterates = Vec::new();
    let mut sum_sq = 0.0;
    let mut sum_norm = 0.0;
    let mut clipped = 0usize;
    let mut diverged = false;

    for t in 1..=horizon {
        let w_query = driver.query_point();
        let (loss, full) = problem.loss_and_grad(&w_query);
        let gsq = full.norm_sq();
        sum_sq += gsq;
        sum_norm += gsq.sqrt();
        let g = problem.stochastic_grad_given(&w_query, &full, &mut rng);
        let applied = driver.apply(&w_query, &g);
        clipped += applied.clip_active as usize;

        if (t - 1) % opts.record_every == 0 || t == horizon || applied.diverged {
            samples.push(TrajectoryPoint {
                t,
                grad_norm_sq: gsq,
                loss,
                stepsize: applied.stepsize,
                clip_active: applied.clip_active,
            });
            if opts.keep_iterates {
                iterates.push(w_query);
            }
        }
        if applied.diverged {
            diverged = true;
            samples.push(TrajectoryPoint {
                t: t + 1,
                grad_norm_sq: f64::INFINITY,
                loss: f64::INFINITY,
                stepsize: applied.stepsize,
                clip_active: false,
            });
            break;
        }
    }

    let (avg_sq, avg_norm, final_grad_norm_sq) = if diverged {
        (f64::INFINITY, f64::INFINITY, f64::INFINITY)
    } else {
        let tf = horizon as f64;
        let last = driver.query_point();
        (sum_sq / tf, sum_norm / tf, problem.full_grad(&last).norm_sq())
    };

    Ok(TrialRecord {
        algorithm: schedule.algorithm,
        schedule: schedule.clone(),
        seed: opts.seed,
        stream_id: opts.stream_id,
        horizon,
        samples,
        avg_sq,
        avg_norm,
        final_grad_norm_sq,
        clip_fraction: clipped as f64 / horizon as f64,
        diverged,
        iterates,
        wall_time: started.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_quadratic, make_robust_regression, NoiseKind, NoiseModel};
    use crate::schedules::{schedule_adaptive, schedule_sgd, schedule_sgdm};

    fn pv(v: &[f64]) -> ParamVec {
        ParamVec::new(v.to_vec()).unwrap()
    }

    fn noisy_problem() -> Problem {
        let noise = NoiseModel::new(NoiseKind::ParetoAdditive, 1.8, 1.0, 1.5).unwrap();
        make_robust_regression(3, 32, 5, noise).unwrap()
    }

    #[test]
    fn sgd_hand_arithmetic() {
        let s = SgdState::new(pv(&[1.0]));
        let step = sgd_apply(&s, &pv(&[1.0]), 0.1, 0.5);
        assert!((step.state.w[0] - 0.95).abs() < 1e-15);
        assert!(step.clip_active);
        assert_eq!(step.state.t, 2);
    }

    #[test]
    fn sgd_zero_gradient_keeps_point() {
        let s = SgdState::new(pv(&[0.3, -0.2]));
        let step = sgd_apply(&s, &pv(&[0.0, 0.0]), 0.1, 1.0);
        assert_eq!(step.state.w, s.w);
    }

    #[test]
    fn sgdm_hand_arithmetic() {
        let s = SgdmState {
            w: pv(&[0.0, 0.0]),
            m: pv(&[1.0, 0.0]),
            t: 3,
        };
        let step = sgdm_apply(&s, &pv(&[0.0, 1.0]), 0.2, 10.0, 10.0, 0.5);
        assert_eq!(step.state.m, pv(&[0.5, 0.5]));
        assert_eq!(step.state.w, pv(&[-0.1, -0.1]));

        let first = sgdm_apply(&SgdmState::new(pv(&[0.0])), &pv(&[2.0]), 0.1, 10.0, 10.0, 0.75);
        assert_eq!(first.state.m, pv(&[0.5]));
    }

    #[test]
    fn adagrad_stepsizes() {
        let s = AdagradState::new(pv(&[0.0, 0.0]), 1.0);
        let s1 = adagrad_apply(&s, &pv(&[1.0, 0.0]), 10.0);
        assert!((s1.stepsize - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        let s2 = adagrad_apply(&s1.state, &pv(&[3f64.sqrt(), 0.0]), 10.0);
        assert!((s2.stepsize - 1.0 / 5f64.sqrt()).abs() < 1e-15);
        assert!(s2.stepsize < s1.stepsize);

        let mut st = AdagradState::new(pv(&[1.0]), 2.0);
        for _ in 0..5 {
            let step = adagrad_apply(&st, &pv(&[0.0]), 1.0);
            assert_eq!(step.stepsize, 0.5);
            st = step.state;
        }
        assert_eq!(st.w, pv(&[1.0]));
    }

    #[test]
    fn rsag_weights() {
        let s = AccelState {
            w: pv(&[3.0]),
            w_tilde: pv(&[0.0]),
            accum: 1.0,
            t: 1,
        };
        assert_eq!(accel_query_point(&s, AccelMode::Rsag), pv(&[3.0]));
        let s2 = AccelState { t: 2, ..s };
        let wbar = accel_query_point(&s2, AccelMode::Rsag);
        assert!((wbar[0] - 2.0).abs() < 1e-15); // (2·3 + 0)/3
    }

    #[test]
    fn step_errors() {
        let p = noisy_problem();
        let mut rng = RngStream::new(0, 0);
        let s = SgdState::new(ParamVec::zeros(3));
        assert!(sgd_clipped_step(&s, &p, 0.0, 1.0, &mut rng).is_err());
        let m = SgdmState::new(ParamVec::zeros(3));
        assert!(sgdm_clipped_step(&m, &p, 0.1, 1.0, 1.0, 1.0, &mut rng).is_err());
        let a = AdagradState { w: ParamVec::zeros(3), accum: 0.0, t: 1 };
        assert!(adagrad_clipped_step(&a, &p, 1.0, &mut rng).is_err());
    }

    #[test]
    fn step_functions_match_run() {
        let p = noisy_problem();
        let sched = schedule_sgdm(50, 1.5, 1.0, 1.0, 1.0, 1.0, p.moment.g_value).unwrap();
        let Hyper::Sgdm { eta, tau1, tau2, gamma } = sched.hyper else { panic!() };
        let mut rng = RngStream::new(4, 9);
        let mut s = SgdmState::new(p.initial_point());
        let mut expected = Vec::new();
        for _ in 0..50 {
            expected.push(p.full_grad(&s.w).norm_sq());
            s = sgdm_clipped_step(&s, &p, eta, tau1, tau2, gamma, &mut rng).unwrap().state;
        }
        let rec = run(&p, &sched, &RunOptions::new(4, 9)).unwrap();
        let got: Vec<f64> = rec.samples.iter().map(|x| x.grad_norm_sq).collect();
        assert_eq!(got, expected);
        assert_eq!(rec.final_grad_norm_sq, p.full_grad(&s.w).norm_sq());
    }

    #[test]
    fn single_step_record() {
        let p = noisy_problem();
        let sched = schedule_adaptive(1, 1.5, 1.0, 1.0).unwrap();
        let rec = run(&p, &sched, &RunOptions::new(1, 1)).unwrap();
        assert_eq!(rec.samples.len(), 1);
        assert_eq!(rec.samples[0].t, 1);
        assert_eq!(rec.avg_sq, rec.samples[0].grad_norm_sq);
    }

    #[test]
    fn deterministic_gd_on_quadratic_descends() {
        let p = make_quadratic(4, 5.0, NoiseModel::none(2.0)).unwrap();
        let mut sched = schedule_sgd(200, 2.0, 0.1, 1.0, 5.0).unwrap();
        sched.algorithm = Algorithm::Sgd;
        let rec = run(&p, &sched, &RunOptions::new(0, 0)).unwrap();
        for w in rec.samples.windows(2) {
            assert!(w[1].grad_norm_sq < w[0].grad_norm_sq);
        }
    }

    #[test]
    fn runs_are_reproducible() {
        let p = noisy_problem();
        let sched = schedule_sgd(300, 1.5, 1.0, 1.0, 2.0).unwrap();
        let a = run(&p, &sched, &RunOptions::new(11, 3)).unwrap();
        let b = run(&p, &sched, &RunOptions::new(11, 3)).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.avg_sq.to_bits(), b.avg_sq.to_bits());
        let c = run(&p, &sched, &RunOptions::new(11, 4)).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn divergence_is_flagged_not_panicked() {
        let p = make_quadratic(2, 4.0, NoiseModel::none(2.0)).unwrap();
        // η far above 2/L blows up geometrically
        let sched = Schedule {
            algorithm: Algorithm::Sgd,
            horizon: 5000,
            alpha: 2.0,
            constants: Default::default(),
            hyper: Hyper::Sgd { eta: 3.0, tau: 1.0 },
            smoothness_l: Some(4.0),
            g: None,
        };
        let rec = run(&p, &sched, &RunOptions::new(0, 0)).unwrap();
        assert!(rec.diverged);
        assert!(rec.avg_sq.is_infinite() && rec.avg_norm.is_infinite());
        assert!(rec.samples.last().unwrap().grad_norm_sq.is_infinite());
    }

    #[test]
    fn jensen_per_trial() {
        let p = noisy_problem();
        let sched = schedule_adaptive(400, 1.5, 1.0, 1.0).unwrap();
        let rec = run(&p, &sched, &RunOptions::new(2, 2)).unwrap();
        assert!(rec.avg_norm * rec.avg_norm <= rec.avg_sq * (1.0 + 1e-12));
    }
}
