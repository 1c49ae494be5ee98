//! Ornstein–Uhlenbeck kernel algebra and the exponential-integrator reverse step.
//!
//! The forward process is `dx = -x dt + sqrt(2) dB` with stationary law `N(0, I)`;
//! its transition from time 0 to `t` is `N(e^{-t} x0, (1 - e^{-2t}) I)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::NoiseSource;

/// Times below this are treated as zero: no diffusion, variance clamped to 0.
pub const TIME_EPS: f64 = 1e-12;

/// Mean scale and variance of the forward transition kernel after `time`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransitionParams {
    /// `e^{-t}`
    pub mean_scale: f64,
    /// `1 - e^{-2t}`
    pub variance: f64,
    pub time: f64,
}

pub fn transition_params(t: f64) -> Result<TransitionParams> {
    if !t.is_finite() || t < 0.0 {
        return Err(Error::domain(format!(
            "transition time must be finite and non-negative, got {t}"
        )));
    }
    let variance = if t < TIME_EPS { 0.0 } else { -(-2.0 * t).exp_m1() };
    Ok(TransitionParams {
        mean_scale: (-t).exp(),
        variance,
        time: t,
    })
}

/// Draws `x_t` given `x_0 = x0` exactly from the transition kernel.
pub fn forward_sample<R: NoiseSource + ?Sized>(x0: &[f64], t: f64, rng: &mut R) -> Result<Vec<f64>> {
    let p = transition_params(t)?;
    if p.variance == 0.0 {
        return Ok(x0.to_vec());
    }
    let sd = p.variance.sqrt();
    Ok(x0.iter().map(|&x| p.mean_scale * x + sd * rng.normal()).collect())
}

/// Reverse-time discretization grid: terminal time `T`, outer step `eta`, `N = floor(T/eta)` steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleSpec", into = "ScheduleSpec")]
pub struct Schedule {
    terminal_time: f64,
    outer_step: f64,
    num_steps: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleSpec {
    #[serde(alias = "T")]
    terminal_time: f64,
    #[serde(alias = "eta")]
    outer_step: f64,
}

impl TryFrom<ScheduleSpec> for Schedule {
    type Error = Error;

    fn try_from(s: ScheduleSpec) -> Result<Self> {
        Schedule::new(s.terminal_time, s.outer_step)
    }
}

impl From<Schedule> for ScheduleSpec {
    fn from(s: Schedule) -> Self {
        ScheduleSpec {
            terminal_time: s.terminal_time,
            outer_step: s.outer_step,
        }
    }
}

impl Schedule {
    /// The quotient `T/eta` is floored after a relative nudge of 1e-12 so that
    /// e.g. `T = 0.3, eta = 0.1` gives 3 steps rather than 2.
    pub fn new(terminal_time: f64, outer_step: f64) -> Result<Self> {
        if !(terminal_time.is_finite() && terminal_time > 0.0) {
            return Err(Error::domain(format!(
                "terminal time must be positive, got {terminal_time}"
            )));
        }
        if !(outer_step.is_finite() && outer_step > 0.0) {
            return Err(Error::domain(format!(
                "outer step must be positive, got {outer_step}"
            )));
        }
        if outer_step > terminal_time * (1.0 + 1e-12) {
            return Err(Error::domain(format!(
                "outer step {outer_step} exceeds terminal time {terminal_time}"
            )));
        }
        let num_steps = ((terminal_time / outer_step) * (1.0 + 1e-12)).floor() as usize;
        Ok(Self {
            terminal_time,
            outer_step,
            num_steps: num_steps.max(1),
        })
    }

    pub fn terminal_time(&self) -> f64 {
        self.terminal_time
    }

    pub fn outer_step(&self) -> f64 {
        self.outer_step
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    /// `T - k*eta`, the forward time whose score drives reverse step `k`.
    pub fn remaining_time(&self, k: usize) -> f64 {
        self.terminal_time - k as f64 * self.outer_step
    }
}

/// One exponential-integrator step of `dx = (x + v) dt + sqrt(2) dB` over a
/// substep `s` with the drift `v` frozen:
/// `e^s x + (e^s - 1) v + N(0, (e^{2s} - 1) I)`.
pub fn reverse_update<R: NoiseSource + ?Sized>(
    x: &[f64],
    v: &[f64],
    s: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut out = x.to_vec();
    reverse_update_in_place(&mut out, v, s, rng)?;
    Ok(out)
}

pub(crate) fn reverse_update_in_place<R: NoiseSource + ?Sized>(
    x: &mut [f64],
    v: &[f64],
    s: f64,
    rng: &mut R,
) -> Result<()> {
    if !(s.is_finite() && s > 0.0) {
        return Err(Error::domain(format!("substep must be positive, got {s}")));
    }
    if x.len() != v.len() {
        return Err(Error::domain("point and drift dimensions differ"));
    }
    if x.iter().chain(v).any(|c| !c.is_finite()) {
        return Err(Error::domain("reverse update received a non-finite input"));
    }
    let growth = s.exp();
    let drift_gain = s.exp_m1();
    let sd = (2.0 * s).exp_m1().sqrt();
    for (xi, vi) in x.iter_mut().zip(v) {
        *xi = growth * *xi + drift_gain * vi + sd * rng.normal();
    }
    Ok(())
}

/// Upper bound `C0 e^{-t/2}` on `KL(p_t || N(0, I))` given `C0 = KL(p_0 || N(0, I))`.
pub fn forward_kl_bound(kl0: f64, t: f64) -> Result<f64> {
    if !(kl0.is_finite() && kl0 >= 0.0) {
        return Err(Error::domain(format!("initial divergence must be >= 0, got {kl0}")));
    }
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::domain(format!("time must be >= 0, got {t}")));
    }
    Ok(kl0 * (-t / 2.0).exp())
}

/// Smallest `T` with `forward_kl_bound(kl0, T) <= 2 eps^2`, i.e. `2 ln(kl0 / (2 eps^2))`.
pub fn choose_terminal_time(kl0: f64, eps: f64) -> Result<f64> {
    if !(kl0.is_finite() && kl0 > 0.0 && eps.is_finite() && eps > 0.0) {
        return Err(Error::domain("initial divergence and accuracy must be positive"));
    }
    let ratio = kl0 / (2.0 * eps * eps);
    if ratio <= 1.0 {
        return Err(Error::AlreadySatisfied);
    }
    Ok(2.0 * ratio.ln())
}
