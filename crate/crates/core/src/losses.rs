//! Scalar objectives of the tri-regularized training step and their gradients
//! with respect to the probability vectors that enter them.
//!
//! Every `*_grad` function returns `dL/dp` for each probability argument; the
//! network chains that through its softmax head.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, AsmError, Result};

/// Lower clamp applied to probabilities before any logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

fn check_label(y: usize, k: usize) -> Result<()> {
    if y < k {
        Ok(())
    } else {
        Err(AsmError::Label {
            label: y,
            classes: k,
        })
    }
}

fn clamped_ln(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

/// `d/dp ln(max(p, floor))`
fn clamped_ln_slope(p: f64) -> f64 {
    if p > PROB_FLOOR {
        1.0 / p
    } else {
        0.0
    }
}

pub fn cross_entropy(p: &[f64], y: usize) -> Result<f64> {
    check_label(y, p.len())?;
    Ok(-clamped_ln(p[y]))
}

pub fn cross_entropy_grad(p: &[f64], y: usize) -> Result<Vec<f64>> {
    check_label(y, p.len())?;
    let mut g = vec![0.0; p.len()];
    g[y] = -clamped_ln_slope(p[y]);
    Ok(g)
}

/// Cross-entropy of both networks against the same label.
pub fn supervised_loss(p1: &[f64], p2: &[f64], y: usize) -> Result<f64> {
    check_len("second probability vector", p1.len(), p2.len())?;
    Ok(cross_entropy(p1, y)? + cross_entropy(p2, y)?)
}

pub fn supervised_loss_grad(p1: &[f64], p2: &[f64], y: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len("second probability vector", p1.len(), p2.len())?;
    Ok((cross_entropy_grad(p1, y)?, cross_entropy_grad(p2, y)?))
}

/// `KL(p1 || p2) + KL(p2 || p1)`, logs clamped at [`PROB_FLOOR`].
pub fn symmetric_kl(p1: &[f64], p2: &[f64]) -> Result<f64> {
    check_len("second probability vector", p1.len(), p2.len())?;
    let forward: f64 = p1
        .iter()
        .zip(p2)
        .map(|(&a, &b)| a * (clamped_ln(a) - clamped_ln(b)))
        .sum();
    let reverse: f64 = p2
        .iter()
        .zip(p1)
        .map(|(&a, &b)| a * (clamped_ln(a) - clamped_ln(b)))
        .sum();
    Ok(forward + reverse)
}

pub fn symmetric_kl_grad(p1: &[f64], p2: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len("second probability vector", p1.len(), p2.len())?;
    // d/da [a ln a - a ln b + b ln b - b ln a] = ln a - ln b + (a - b) * dln(a)
    let side = |a: &[f64], b: &[f64]| -> Vec<f64> {
        a.iter()
            .zip(b)
            .map(|(&a, &b)| clamped_ln(a) - clamped_ln(b) + (a - b) * clamped_ln_slope(a))
            .collect()
    };
    Ok((side(p1, p2), side(p2, p1)))
}

/// Peer-agreement ramp: `lambda_max * exp(-beta * (1 - e/e_r)^2)`, held at
/// `lambda_max` from `e_r` on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RampSchedule {
    pub lambda_max: f64,
    pub beta: f64,
    pub e_r: u32,
}

impl Default for RampSchedule {
    fn default() -> Self {
        Self {
            lambda_max: 0.9,
            beta: 0.65,
            e_r: 90,
        }
    }
}

impl RampSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_max) {
            return Err(AsmError::config(format!(
                "ramp.lambda_max must lie in [0, 1], got {}",
                self.lambda_max
            )));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(AsmError::config(format!(
                "ramp.beta must be positive, got {}",
                self.beta
            )));
        }
        if self.e_r == 0 {
            return Err(AsmError::config("ramp.e_r must be positive"));
        }
        Ok(())
    }

    pub fn lambda(&self, epoch: u32) -> f64 {
        ramp_lambda(epoch, self)
    }
}

pub fn ramp_lambda(epoch: u32, sched: &RampSchedule) -> f64 {
    if epoch >= sched.e_r {
        return sched.lambda_max;
    }
    let gap = 1.0 - epoch as f64 / sched.e_r as f64;
    sched.lambda_max * (-sched.beta * gap * gap).exp()
}

/// `(1 - lambda) * supervised + lambda * symmetric_kl`.
pub fn mutual_loss(p1: &[f64], p2: &[f64], y: usize, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok((1.0 - lambda) * supervised_loss(p1, p2, y)? + lambda * symmetric_kl(p1, p2)?)
}

pub fn mutual_loss_grad(
    p1: &[f64],
    p2: &[f64],
    y: usize,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_lambda(lambda)?;
    let (s1, s2) = supervised_loss_grad(p1, p2, y)?;
    let (k1, k2) = symmetric_kl_grad(p1, p2)?;
    let mix = |s: Vec<f64>, k: Vec<f64>| -> Vec<f64> {
        s.iter()
            .zip(&k)
            .map(|(s, k)| (1.0 - lambda) * s + lambda * k)
            .collect()
    };
    Ok((mix(s1, k1), mix(s2, k2)))
}

fn check_lambda(lambda: f64) -> Result<()> {
    if (0.0..=1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(AsmError::config(format!(
            "lambda must lie in [0, 1], got {lambda}"
        )))
    }
}

/// Mean of squared componentwise differences.
pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len("mse operand", a.len(), b.len())?;
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.len() as f64)
}

/// Weak/strong augmentation agreement for both networks; labels are not used.
pub fn consistency_loss(pw1: &[f64], ps1: &[f64], pw2: &[f64], ps2: &[f64]) -> Result<f64> {
    Ok(mse(pw1, ps1)? + mse(pw2, ps2)?)
}

/// Gradients of [`consistency_loss`] for `(pw1, ps1, pw2, ps2)`. With
/// `stop_weak` the weak branches are treated as constant targets.
pub fn consistency_loss_grad(
    pw1: &[f64],
    ps1: &[f64],
    pw2: &[f64],
    ps2: &[f64],
    stop_weak: bool,
) -> Result<[Vec<f64>; 4]> {
    check_len("mse operand", pw1.len(), ps1.len())?;
    check_len("mse operand", pw2.len(), ps2.len())?;
    let pair = |w: &[f64], s: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let scale = 2.0 / w.len() as f64;
        let gw: Vec<f64> = w.iter().zip(s).map(|(w, s)| scale * (w - s)).collect();
        let gs: Vec<f64> = gw.iter().map(|g| -g).collect();
        if stop_weak {
            (vec![0.0; w.len()], gs)
        } else {
            (gw, gs)
        }
    };
    let (gw1, gs1) = pair(pw1, ps1);
    let (gw2, gs2) = pair(pw2, ps2);
    Ok([gw1, gs1, gw2, gs2])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub omega: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            omega: 1.0,
            gamma: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("weights.omega", self.omega), ("weights.gamma", self.gamma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(AsmError::config(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// `sup + omega * mut + gamma * usc`.
pub fn total_loss(sup: f64, mutual: f64, usc: f64, w: &LossWeights) -> Result<f64> {
    if ![sup, mutual, usc, w.omega, w.gamma]
        .iter()
        .all(|v| v.is_finite())
    {
        return Err(AsmError::NumericFault(format!(
            "non-finite loss component (sup={sup}, mut={mutual}, usc={usc})"
        )));
    }
    Ok(sup + w.omega * mutual + w.gamma * usc)
}
