//! Piecewise-linear penalty that pushes raw parameters away from zero.
//!
//! `reg(w) = max(min(−w, w) + t, 0) / t`: 1 at `w = 0`, falling linearly to 0
//! at `|w| = t` and flat beyond. Summed over every entry of `Ŵ`, `M̂` and `G`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::cells::Network;
use crate::error::{config, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegConfig {
    /// Discretization threshold `t`.
    pub threshold: f64,
    /// Multiplier on the summed penalty.
    pub scale: f64,
    /// Penalty is only considered after this many epochs.
    pub activation_epoch: usize,
    /// ... and only while the data loss is below this value.
    pub activation_loss: f64,
}

impl Default for RegConfig {
    fn default() -> Self {
        Self { threshold: 20.0, scale: 1.0, activation_epoch: 10, activation_loss: 1.0 }
    }
}

impl RegConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0) {
            return config(format!("regularization threshold must be positive, got {}", self.threshold));
        }
        if !(self.scale >= 0.0) {
            return config(format!("regularization scale must be non-negative, got {}", self.scale));
        }
        Ok(())
    }
}

pub fn reg_term(w: f64, t: f64) -> f64 {
    ((-w).min(w) + t).max(0.0) / t
}

/// Slope of [`reg_term`]; 0 at `w = 0` and for `|w| ≥ t`.
pub fn reg_term_grad(w: f64, t: f64) -> f64 {
    if w == 0.0 || w.abs() >= t {
        0.0
    } else {
        -w.signum() / t
    }
}

/// `scale · Σ reg(w)` over all parameter entries of `net`.
pub fn total_reg(net: &Network, cfg: &RegConfig) -> f64 {
    let sum: f64 = net
        .tensors()
        .iter()
        .flat_map(|t| t.data().iter())
        .map(|&w| reg_term(w, cfg.threshold))
        .sum();
    cfg.scale * sum
}

/// Records the penalty for the given parameter leaves on `tape` as a `1 × 1` node.
pub fn record_total_reg(tape: &mut Tape, params: &[Var], cfg: &RegConfig) -> Result<Var> {
    let t = tape.scalar(cfg.threshold);
    let mut total: Option<Var> = None;
    for &p in params {
        let abs = tape.abs(p);
        let neg = tape.negate(abs);
        let shifted = tape.add(neg, t)?;
        let hinge = tape.max_const(shifted, 0.0);
        let s = tape.sum(hinge);
        total = Some(match total {
            Some(acc) => tape.add(acc, s)?,
            None => s,
        });
    }
    let total = match total {
        Some(v) => v,
        None => tape.scalar(0.0),
    };
    Ok(tape.scale(total, cfg.scale / cfg.threshold))
}

/// Whether the penalty applies at `epoch` (1-based) given the latest data loss.
pub fn reg_active(epoch: usize, current_loss: f64, cfg: &RegConfig) -> bool {
    epoch > cfg.activation_epoch && current_loss < cfg.activation_loss
}
