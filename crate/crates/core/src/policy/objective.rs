//! Scalar pieces of the integrated detailed-balance objective.

use crate::error::{Error, Result};
use crate::request::Request;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hyper {
    pub alpha: f64,
    pub beta_f: f64,
    pub beta_b: f64,
    pub beta_r: f64,
    pub lr_flow: f64,
    pub lr_forward: f64,
    pub lr_backward: f64,
    pub batch_size: usize,
    pub sigma_min: f64,
    pub d_action: usize,
    pub slate_size: usize,
    /// Drop immediate rewards entirely (effective `α = 0`).
    pub no_immediate: bool,
    /// Move immediate rewards from every step into the terminal target.
    pub terminal_only_immediate: bool,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            alpha: 1.0,
            beta_f: 1.0,
            beta_b: 1.0,
            beta_r: 0.5,
            lr_flow: 2e-5,
            lr_forward: 1e-4,
            lr_backward: 1e-4,
            batch_size: 128,
            sigma_min: 0.05,
            d_action: 8,
            slate_size: 6,
            no_immediate: false,
            terminal_only_immediate: false,
        }
    }
}

impl Hyper {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("beta_F", self.beta_f),
            ("beta_B", self.beta_b),
            ("beta_r", self.beta_r),
            ("sigma_min", self.sigma_min),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Argument(format!("{name} must be positive")));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Argument("alpha must be non-negative".into()));
        }
        let lrs = [self.lr_flow, self.lr_forward, self.lr_backward];
        if lrs.iter().any(|lr| !(*lr >= 0.0 && lr.is_finite())) {
            return Err(Error::Argument("learning rates must be non-negative".into()));
        }
        if self.batch_size == 0 || self.d_action == 0 || self.slate_size == 0 {
            return Err(Error::Argument("batch_size, d_action and K must be positive".into()));
        }
        Ok(())
    }

    /// The reward weight actually used by the loss.
    pub fn effective_alpha(&self) -> f64 {
        if self.no_immediate {
            0.0
        } else {
            self.alpha
        }
    }
}

/// One step of a session as stored for training.
///
/// Non-terminal transitions carry `next`; the terminal one carries
/// `retention` and its state is the session's last state.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Request,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next: Option<Request>,
    pub retention: Option<f64>,
    /// `Σ_{j<t} r_j` for this step `t`.
    pub reward_prefix: f64,
}

impl Transition {
    pub fn is_terminal(&self) -> bool {
        self.retention.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.next, self.retention) {
            (Some(_), None) => {}
            (None, Some(r)) if r > 0.0 && r <= 1.0 => {}
            (None, Some(r)) => {
                return Err(Error::Argument(format!("retention {r} outside (0, 1]")));
            }
            _ => {
                return Err(Error::Argument(
                    "a transition has either a next state or a retention reward".into(),
                ));
            }
        }
        if !(self.reward >= 0.0) || !(self.reward_prefix >= 0.0) {
            return Err(Error::Argument("immediate rewards must be non-negative".into()));
        }
        Ok(())
    }
}

/// `ln(e^a + e^b)` without overflow.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `ln R + α Σ r`.
pub fn ln_reward_integrate(retention: f64, immediate: &[f64], alpha: f64) -> f64 {
    retention.ln() + alpha * immediate.iter().sum::<f64>()
}

/// `R · exp(α Σ r)`; the product is formed in log space once the exponent
/// exceeds 500.
pub fn reward_integrate(retention: f64, immediate: &[f64], alpha: f64) -> f64 {
    let x = alpha * immediate.iter().sum::<f64>();
    if x == 0.0 {
        retention
    } else if x > 500.0 {
        ln_reward_integrate(retention, immediate, alpha).exp()
    } else {
        retention * x.exp()
    }
}

/// `F_I(s_t) = exp(Σ_{j<t} r_j)`.
pub fn immediate_flow(prefix: &[f64]) -> f64 {
    prefix.iter().sum::<f64>().exp()
}

/// `ln(P_F + β_F)` from the log-density of `P_F`.
pub fn smoothed_log_forward(log_density: f64, beta_f: f64) -> f64 {
    log_add_exp(log_density, beta_f.ln())
}

/// Residual of a non-terminal step:
/// `ln F_R(s) + ln(P_F + β_F) − ln F_R(s') − ln(P_B + β_B) − α r`.
pub fn step_residual(
    ln_flow: f64,
    log_density: f64,
    ln_flow_next: f64,
    backward: f64,
    reward: f64,
    h: &Hyper,
) -> f64 {
    let reward_term = if h.terminal_only_immediate {
        0.0
    } else {
        h.effective_alpha() * reward
    };
    ln_flow + smoothed_log_forward(log_density, h.beta_f) - ln_flow_next - (backward + h.beta_b).ln() - reward_term
}

/// `ln` of the terminal flow target: `ln(R + β_r)`, or with terminal-only
/// immediate rewards `ln(R e^{α Σr} + β_r)`.
pub fn terminal_target(retention: f64, reward_prefix: f64, h: &Hyper) -> f64 {
    if h.terminal_only_immediate {
        let ln_integrated = retention.ln() + h.effective_alpha() * reward_prefix;
        log_add_exp(ln_integrated, h.beta_r.ln())
    } else {
        (retention + h.beta_r).ln()
    }
}

pub fn terminal_residual(ln_flow: f64, retention: f64, reward_prefix: f64, h: &Hyper) -> f64 {
    ln_flow - terminal_target(retention, reward_prefix, h)
}

/// The step residual written with the full flow `F = F_R · F_I^α`:
/// `ln F(s) + ln(P_F + β_F) − ln F(s') − ln(P_B + β_B)`, where `s` has
/// reward prefix `prefix` and `s'` has `prefix ++ [r]`.
pub fn decomposed_step_residual(
    ln_flow: f64,
    log_density: f64,
    ln_flow_next: f64,
    backward: f64,
    prefix: &[f64],
    reward: f64,
    alpha: f64,
    h: &Hyper,
) -> f64 {
    let mut next_prefix = prefix.to_vec();
    next_prefix.push(reward);
    let ln_total = ln_flow + alpha * immediate_flow(prefix).ln();
    let ln_total_next = ln_flow_next + alpha * immediate_flow(&next_prefix).ln();
    ln_total + smoothed_log_forward(log_density, h.beta_f) - ln_total_next - (backward + h.beta_b).ln()
}
