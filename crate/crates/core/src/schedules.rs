//! Closed-form hyperparameters as functions of the horizon `T` and tail
//! index `α`, with every precondition enforced. Violations are errors,
//! never clamps.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::check_alpha;

/// Relative slack for floating-point comparisons against a constraint
/// boundary that the defaults hit exactly.
const BOUNDARY_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// Plain SGD, no clipping.
    Sgd,
    SgdClipped,
    /// SGD with gradient clipping and momentum clipping.
    SgdmClipped,
    /// AdaGrad-Norm without clipping.
    Adagrad,
    AdagradClipped,
    /// Accelerated template with `η_t = β_t = λ_t`; coincides with clipped AdaGrad.
    AccelAdagrad,
    /// Accelerated template with `α_t = 2/(t+1)`, `β_t = (1+α_t)λ_t`.
    AccelRsag,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [
        Algorithm::Sgd,
        Algorithm::SgdClipped,
        Algorithm::SgdmClipped,
        Algorithm::Adagrad,
        Algorithm::AdagradClipped,
        Algorithm::AccelAdagrad,
        Algorithm::AccelRsag,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Sgd => "sgd",
            Algorithm::SgdClipped => "sgd-clipped",
            Algorithm::SgdmClipped => "sgdm-clipped",
            Algorithm::Adagrad => "adagrad",
            Algorithm::AdagradClipped => "adagrad-clipped",
            Algorithm::AccelAdagrad => "accel-adagrad",
            Algorithm::AccelRsag => "accel-rsag",
        }
    }

    pub fn is_clipped(self) -> bool {
        !matches!(self, Algorithm::Sgd | Algorithm::Adagrad)
    }

    /// The stationarity measure whose rate the corresponding guarantee states.
    pub fn measure(self) -> Measure {
        match self {
            Algorithm::SgdmClipped => Measure::Norm,
            _ => Measure::SqNorm,
        }
    }

    pub fn coupling(self) -> Coupling {
        match self {
            Algorithm::Adagrad | Algorithm::AdagradClipped | Algorithm::AccelAdagrad | Algorithm::AccelRsag => {
                Coupling::Adaptive
            }
            _ => Coupling::Sgd,
        }
    }

    fn family(self) -> ScheduleFamily {
        match self {
            Algorithm::Sgd | Algorithm::SgdClipped => ScheduleFamily::Sgd,
            Algorithm::SgdmClipped => ScheduleFamily::Sgdm,
            _ => ScheduleFamily::Adaptive,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown algorithm {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScheduleFamily {
    Sgd,
    Sgdm,
    Adaptive,
}

/// Which averaged stationarity quantity a rate refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Measure {
    /// `(1/T) Σ ‖∇F_S(w_t)‖²`
    SqNorm,
    /// `(1/T) Σ ‖∇F_S(w_t)‖`
    Norm,
}

/// How the horizon is tied to the sample size in generalization runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Coupling {
    /// `T = (n/d)^((3α−2)/(4α−4))`
    Sgd,
    /// `T = (n/d)^((3α−2)/(5α−4))`
    Adaptive,
}

/// Free positive constants of the schedules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub p: f64,
    pub q: f64,
    pub s: f64,
    pub r: f64,
    pub g0: f64,
}

impl Default for Constants {
    fn default() -> Self {
        Constants {
            p: 1.0,
            q: 1.0,
            s: 1.0,
            r: 1.0,
            g0: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Hyper {
    Sgd { eta: f64, tau: f64 },
    Sgdm { eta: f64, tau1: f64, tau2: f64, gamma: f64 },
    Adaptive { tau: f64, g0: f64 },
}

/// Resolved hyperparameters for one algorithm at one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub algorithm: Algorithm,
    pub horizon: usize,
    pub alpha: f64,
    pub constants: Constants,
    pub hyper: Hyper,
    /// Smoothness constant the SGD step-size cap was checked against.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub smoothness_l: Option<f64>,
    /// Moment constant `G` used for the first SGDM clip.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub g: Option<f64>,
}

fn exp_eta(alpha: f64) -> f64 {
    alpha / (3.0 * alpha - 2.0)
}

fn exp_tau(alpha: f64) -> f64 {
    1.0 / (3.0 * alpha - 2.0)
}

fn exp_const_cap(alpha: f64) -> f64 {
    (2.0 * alpha - 2.0) / (alpha * (3.0 * alpha - 2.0))
}

fn exceeds(value: f64, cap: f64) -> bool {
    value > cap * (1.0 + BOUNDARY_SLACK)
}

fn check_common(t: usize, alpha: f64, positives: &[(&str, f64)]) -> Result<()> {
    if t == 0 {
        return Err(Error::invalid("horizon T must be >= 1"));
    }
    check_alpha(alpha)?;
    for (name, v) in positives {
        if !(*v > 0.0 && v.is_finite()) {
            return Err(Error::invalid(format!("constant {name} must be positive, got {v}")));
        }
    }
    Ok(())
}

/// Step size `η = p T^(−α/(3α−2))`, threshold `τ = q T^(1/(3α−2))`,
/// subject to `q ≤ T^((2α−2)/(α(3α−2)))` and `η ≤ 1/(12L)`.
pub fn schedule_sgd(t: usize, alpha: f64, p: f64, q: f64, l: f64) -> Result<Schedule> {
    check_common(t, alpha, &[("p", p), ("q", q), ("L", l)])?;
    let tf = t as f64;
    let eta = p * tf.powf(-exp_eta(alpha));
    let tau = q * tf.powf(exp_tau(alpha));
    let schedule = Schedule {
        algorithm: Algorithm::SgdClipped,
        horizon: t,
        alpha,
        constants: Constants {
            p,
            q,
            ..Constants::default()
        },
        hyper: Hyper::Sgd { eta, tau },
        smoothness_l: Some(l),
        g: None,
    };
    schedule.validate()?;
    Ok(schedule)
}

/// Default `p` for SGD: `min(1, T^(α/(3α−2)) / (12L))`, the largest value
/// that keeps `η ≤ 1/(12L)` at horizon `t_ref` (and hence at every `T ≥ t_ref`).
pub fn default_sgd_p(t_ref: usize, alpha: f64, l: f64) -> f64 {
    (1.0f64).min((t_ref as f64).powf(exp_eta(alpha)) / (12.0 * l))
}

/// `τ₁ = pG/(1−γ)^(1/α)`, `1−γ = s/T^(α/(3α−2))`, `η = q/T^(α/(3α−2))`,
/// `τ₂ = r/T^((α−1)/(3α−2))`, subject to `1−γ ≤ 1`.
pub fn schedule_sgdm(t: usize, alpha: f64, p: f64, s: f64, q: f64, r: f64, g: f64) -> Result<Schedule> {
    check_common(t, alpha, &[("p", p), ("s", s), ("q", q), ("r", r), ("G", g)])?;
    let tf = t as f64;
    let one_minus_gamma = s * tf.powf(-exp_eta(alpha));
    let gamma = 1.0 - one_minus_gamma;
    let tau1 = p * g / one_minus_gamma.powf(1.0 / alpha);
    let eta = q * tf.powf(-exp_eta(alpha));
    let tau2 = r * tf.powf(-(alpha - 1.0) / (3.0 * alpha - 2.0));
    let schedule = Schedule {
        algorithm: Algorithm::SgdmClipped,
        horizon: t,
        alpha,
        constants: Constants {
            p,
            q,
            s,
            r,
            ..Constants::default()
        },
        hyper: Hyper::Sgdm {
            eta,
            tau1,
            tau2,
            gamma,
        },
        smoothness_l: None,
        g: Some(g),
    };
    schedule.validate()?;
    Ok(schedule)
}

/// `τ = p T^(1/(3α−2))` with `p ≤ T^((2α−2)/(α(3α−2)))`; `G₀ = g0`.
pub fn schedule_adaptive(t: usize, alpha: f64, p: f64, g0: f64) -> Result<Schedule> {
    check_common(t, alpha, &[("p", p), ("G0", g0)])?;
    let tau = p * (t as f64).powf(exp_tau(alpha));
    let schedule = Schedule {
        algorithm: Algorithm::AdagradClipped,
        horizon: t,
        alpha,
        constants: Constants {
            p,
            g0,
            ..Constants::default()
        },
        hyper: Hyper::Adaptive { tau, g0 },
        smoothness_l: None,
        g: None,
    };
    schedule.validate()?;
    Ok(schedule)
}

/// Builds the schedule for any algorithm. `p = None` resolves the SGD
/// default against horizon `t_ref` (the smallest horizon of a sweep), and
/// 1 for the other families.
pub fn build_schedule(
    algorithm: Algorithm,
    t: usize,
    alpha: f64,
    constants: &Constants,
    p: Option<f64>,
    t_ref: usize,
    l: f64,
    g: f64,
) -> Result<Schedule> {
    let mut schedule = match algorithm.family() {
        ScheduleFamily::Sgd => {
            let p = p.unwrap_or_else(|| default_sgd_p(t_ref, alpha, l));
            schedule_sgd(t, alpha, p, constants.q, l)?
        }
        ScheduleFamily::Sgdm => schedule_sgdm(
            t,
            alpha,
            p.unwrap_or(1.0),
            constants.s,
            constants.q,
            constants.r,
            g,
        )?,
        ScheduleFamily::Adaptive => schedule_adaptive(t, alpha, p.unwrap_or(1.0), constants.g0)?,
    };
    schedule.algorithm = algorithm;
    Ok(schedule)
}

impl Schedule {
    /// Re-checks every precondition; used after construction and on load.
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if self.horizon == 0 {
            return Err(Error::invalid("horizon T must be >= 1"));
        }
        let tf = self.horizon as f64;
        let cap = tf.powf(exp_const_cap(self.alpha));
        let family = self.algorithm.family();
        match (family, self.hyper) {
            (ScheduleFamily::Sgd, Hyper::Sgd { eta, tau }) => {
                if !(eta > 0.0 && tau > 0.0) {
                    return Err(Error::invalid("eta and tau must be positive"));
                }
                if exceeds(self.constants.q, cap) {
                    return Err(Error::Constraint {
                        constraint: "q <= T^((2a-2)/(a(3a-2)))",
                        detail: format!("q = {} exceeds {cap} at T = {}", self.constants.q, self.horizon),
                    });
                }
                let l = self.smoothness_l.ok_or_else(|| Error::invalid("SGD schedule needs L"))?;
                if exceeds(eta, 1.0 / (12.0 * l)) {
                    return Err(Error::Constraint {
                        constraint: "eta <= 1/(12L)",
                        detail: format!("eta = {eta} exceeds {} (L = {l}) at T = {}", 1.0 / (12.0 * l), self.horizon),
                    });
                }
            }
            (ScheduleFamily::Sgdm, Hyper::Sgdm { eta, tau1, tau2, gamma }) => {
                if !(eta > 0.0 && tau1 > 0.0 && tau2 > 0.0) {
                    return Err(Error::invalid("eta, tau1 and tau2 must be positive"));
                }
                let one_minus_gamma = 1.0 - gamma;
                if exceeds(one_minus_gamma, 1.0) || gamma >= 1.0 {
                    return Err(Error::Constraint {
                        constraint: "0 < 1-gamma <= 1",
                        detail: format!("1 - gamma = {one_minus_gamma} at T = {}", self.horizon),
                    });
                }
            }
            (ScheduleFamily::Adaptive, Hyper::Adaptive { tau, g0 }) => {
                if !(tau > 0.0 && g0 > 0.0) {
                    return Err(Error::invalid("tau and G0 must be positive"));
                }
                if exceeds(self.constants.p, cap) {
                    return Err(Error::Constraint {
                        constraint: "p <= T^((2a-2)/(a(3a-2)))",
                        detail: format!("p = {} exceeds {cap} at T = {}", self.constants.p, self.horizon),
                    });
                }
            }
            _ => {
                return Err(Error::invalid(format!(
                    "hyperparameters {:?} do not match algorithm {}",
                    self.hyper, self.algorithm
                )))
            }
        }
        Ok(())
    }
}

/// Rate exponent of the stated bound: `(2α−2)/(3α−2)` for the squared
/// measure, `(α−1)/(3α−2)` for the norm.
pub fn rate_exponent(alpha: f64, measure: Measure) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(match measure {
        Measure::SqNorm => (2.0 * alpha - 2.0) / (3.0 * alpha - 2.0),
        Measure::Norm => (alpha - 1.0) / (3.0 * alpha - 2.0),
    })
}

/// `T = round((n/d)^e)`, at least 1, with `e` picked by `coupling`.
pub fn couple_t_to_n(n: usize, d: usize, alpha: f64, coupling: Coupling) -> Result<usize> {
    check_alpha(alpha)?;
    if d == 0 || n <= d {
        return Err(Error::invalid(format!("coupling needs n > d >= 1, got n = {n}, d = {d}")));
    }
    let e = match coupling {
        Coupling::Sgd => (3.0 * alpha - 2.0) / (4.0 * alpha - 4.0),
        Coupling::Adaptive => (3.0 * alpha - 2.0) / (5.0 * alpha - 4.0),
    };
    let t = (n as f64 / d as f64).powf(e).round();
    Ok((t as usize).max(1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * b.abs().max(1.0)
    }

    #[test]
    fn sgd_examples() {
        let s = schedule_sgd(16, 2.0, 0.25, 1.0, 1.0).unwrap();
        let Hyper::Sgd { eta, tau } = s.hyper else { panic!() };
        assert!(close(eta, 0.0625));
        assert!(close(tau, 2.0));
        let err = schedule_sgd(16, 2.0, 1.0, 1.0, 1.0).unwrap_err();
        assert!(matches!(err, Error::Constraint { constraint: "eta <= 1/(12L)", .. }));
        let err = schedule_sgd(16, 2.0, 0.25, 2.5, 1.0).unwrap_err();
        assert!(matches!(err, Error::Constraint { .. }));

        let s = schedule_sgd(10_000, 1.5, 1e-3, 1.0, 1.0).unwrap();
        let Hyper::Sgd { eta, tau } = s.hyper else { panic!() };
        assert!(close(eta, 1e-3 * 10f64.powf(-2.4)));
        assert!(close(tau, 10f64.powf(1.6)));
    }

    #[test]
    fn sgdm_examples() {
        let s = schedule_sgdm(81, 2.0, 1.0, 1.0, 1.0, 1.0, 2.0).unwrap();
        let Hyper::Sgdm { tau1, tau2, gamma, eta } = s.hyper else { panic!() };
        assert!(close(1.0 - gamma, 1.0 / 9.0));
        assert!(close(gamma, 8.0 / 9.0));
        assert!(close(tau2, 1.0 / 3.0));
        assert!(close(tau1, 6.0));
        assert!(close(eta, 1.0 / 9.0));
        assert!(matches!(
            schedule_sgdm(81, 2.0, 1.0, 10.0, 1.0, 1.0, 2.0),
            Err(Error::Constraint { .. })
        ));
        // s exactly at the cap gives gamma = 0
        let s = schedule_sgdm(81, 2.0, 1.0, 9.0, 1.0, 1.0, 2.0).unwrap();
        let Hyper::Sgdm { gamma, .. } = s.hyper else { panic!() };
        assert!(gamma.abs() < 1e-12);
    }

    #[test]
    fn adaptive_examples() {
        let s = schedule_adaptive(16, 2.0, 1.0, 1.0).unwrap();
        let Hyper::Adaptive { tau, .. } = s.hyper else { panic!() };
        assert!(close(tau, 2.0));
        assert!(schedule_adaptive(16, 2.0, 2.0, 1.0).is_ok());
        assert!(matches!(schedule_adaptive(16, 2.0, 3.0, 1.0), Err(Error::Constraint { .. })));
        let s = schedule_adaptive(1_000_000, 1.25, 1.0, 1.0).unwrap();
        let Hyper::Adaptive { tau, .. } = s.hyper else { panic!() };
        assert!(close(tau, 10f64.powf(6.0 / 1.75)));
    }

    #[test]
    fn exponents() {
        assert!(close(rate_exponent(2.0, Measure::SqNorm).unwrap(), 0.5));
        assert!(close(rate_exponent(1.5, Measure::SqNorm).unwrap(), 0.4));
        assert!(close(rate_exponent(2.0, Measure::Norm).unwrap(), 0.25));
        assert!(rate_exponent(1.0, Measure::Norm).is_err());
        assert!(rate_exponent(2.1, Measure::Norm).is_err());
        // α = 2: (η, τ) exponents (−1/2, 1/4)
        assert!(close(-exp_eta(2.0), -0.5));
        assert!(close(exp_tau(2.0), 0.25));
    }

    #[test]
    fn coupling_examples() {
        assert_eq!(couple_t_to_n(1600, 1, 2.0, Coupling::Sgd).unwrap(), 1600);
        assert_eq!(couple_t_to_n(64, 1, 2.0, Coupling::Adaptive).unwrap(), 16);
        assert!(couple_t_to_n(5, 4, 2.0, Coupling::Sgd).unwrap() >= 1);
        assert!(couple_t_to_n(4, 4, 2.0, Coupling::Sgd).is_err());
    }

    #[test]
    fn monotone_in_horizon() {
        let horizons = [64usize, 128, 256, 512, 1024];
        for alpha in [1.2, 1.5, 2.0] {
            let sgd: Vec<_> = horizons.iter().map(|&t| schedule_sgd(t, alpha, 0.01, 1.0, 1.0).unwrap()).collect();
            for w in sgd.windows(2) {
                let (Hyper::Sgd { eta: e0, tau: t0 }, Hyper::Sgd { eta: e1, tau: t1 }) = (w[0].hyper, w[1].hyper) else { panic!() };
                assert!(e1 < e0 && t1 > t0);
            }
            let sgdm: Vec<_> = horizons.iter().map(|&t| schedule_sgdm(t, alpha, 1.0, 1.0, 1.0, 1.0, 1.0).unwrap()).collect();
            for w in sgdm.windows(2) {
                let (Hyper::Sgdm { eta: e0, tau2: a0, .. }, Hyper::Sgdm { eta: e1, tau2: a1, .. }) = (w[0].hyper, w[1].hyper) else { panic!() };
                assert!(e1 < e0 && a1 < a0);
            }
            let ada: Vec<_> = horizons.iter().map(|&t| schedule_adaptive(t, alpha, 1.0, 1.0).unwrap()).collect();
            for w in ada.windows(2) {
                let (Hyper::Adaptive { tau: t0, .. }, Hyper::Adaptive { tau: t1, .. }) = (w[0].hyper, w[1].hyper) else { panic!() };
                assert!(t1 > t0);
            }
        }
    }

    #[test]
    fn default_p_binds_step_cap() {
        for t_ref in [16usize, 256, 4096] {
            let p = default_sgd_p(t_ref, 2.0, 2.0);
            for t in [t_ref, 2 * t_ref, 8 * t_ref] {
                assert!(schedule_sgd(t, 2.0, p, 1.0, 2.0).is_ok());
            }
        }
    }

    #[test]
    fn build_tags_algorithm_and_rejects_mismatch() {
        let c = Constants::default();
        let s = build_schedule(Algorithm::AccelRsag, 64, 2.0, &c, None, 64, 2.0, 1.0).unwrap();
        assert_eq!(s.algorithm, Algorithm::AccelRsag);
        let mut bad = s.clone();
        bad.algorithm = Algorithm::SgdClipped;
        assert!(bad.validate().is_err());
        assert_eq!("sgdm-clipped".parse::<Algorithm>().unwrap(), Algorithm::SgdmClipped);
    }
}
