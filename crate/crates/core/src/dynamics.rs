//! Velocity fields of the particle update rules and the entropy-weight schedules.
//!
//! Every velocity returned here is `dx/dt`, the ascent direction; the engine
//! applies `x <- x + η v`. Each output row is reduced over `j` in ascending
//! order, so results do not depend on how rows are scheduled across threads.
//!
//! * `svgd`: `v_i = (1/n) Σ_j [k(x_j, x_i) s_j + ∇_{x_j} k(x_j, x_i)]`
//! * `kde_wgd`: `v_i = s_i - β_i Σ_j ∇_{x_i} k(x_i, x_j)`, `β_i = 1 / Σ_j k(x_i, x_j)`
//! * `ergd`: `v_i = (1/n) Σ_j [k(x_i, x_j) s_j - β ∇_{x_i} k(x_i, x_j)]`
//! * `s_ergd`: `v_i = s_i - (β/n) Σ_j ∇_{x_i} k(x_i, x_j)`
//!
//! The svgd and kde_wgd forms are the standard ones from their original
//! methods rather than one shared expression.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::PairwiseKernel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rule {
    #[serde(rename = "svgd")]
    Svgd,
    #[serde(rename = "kde-wgd")]
    KdeWgd,
    #[serde(rename = "ergd")]
    Ergd,
    #[serde(rename = "s-ergd")]
    SErgd,
}

impl Rule {
    pub const ALL: [Rule; 4] = [Rule::Svgd, Rule::KdeWgd, Rule::Ergd, Rule::SErgd];

    pub fn as_str(self) -> &'static str {
        match self {
            Rule::Svgd => "svgd",
            Rule::KdeWgd => "kde-wgd",
            Rule::Ergd => "ergd",
            Rule::SErgd => "s-ergd",
        }
    }

    /// Whether the rule reads β from a schedule.
    pub fn uses_schedule(self) -> bool {
        matches!(self, Rule::Ergd | Rule::SErgd)
    }

    /// Linear 1.6 → 1 for ERGD, constant 1.1 for s-ERGD.
    pub fn default_schedule(self) -> Option<BetaSchedule> {
        match self {
            Rule::Ergd => Some(BetaSchedule::Linear { start: 1.6 }),
            Rule::SErgd => Some(BetaSchedule::Constant { beta: 1.1 }),
            Rule::Svgd | Rule::KdeWgd => None,
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Rule::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| {
                Error::usage(format!(
                    "unknown rule {s:?}; expected svgd, kde-wgd, ergd or s-ergd"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BetaSchedule {
    Constant {
        beta: f64,
    },
    /// From `start` down to 1 over the phase length, then held at 1.
    Linear {
        start: f64,
    },
    /// `1 + (max - 1)(1 + tanh(sharpness (1/2 - frac)))/2`, `frac = (t mod period)/period`.
    CyclicTanh {
        max: f64,
        period: usize,
        sharpness: f64,
    },
}

impl BetaSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BetaSchedule::Constant { beta } if !(beta > 0.0 && beta.is_finite()) => Err(
                Error::usage(format!("constant beta must be positive, got {beta}")),
            ),
            BetaSchedule::Linear { start } if !(start >= 1.0 && start.is_finite()) => {
                Err(Error::usage(format!(
                    "linear schedule must start at beta >= 1, got {start}"
                )))
            }
            BetaSchedule::CyclicTanh {
                max,
                period,
                sharpness,
            } => {
                if !(max >= 1.0 && max.is_finite()) {
                    Err(Error::usage(format!(
                        "cyclic_tanh max must be >= 1, got {max}"
                    )))
                } else if period == 0 {
                    Err(Error::usage("cyclic_tanh period must be positive"))
                } else if !(sharpness > 0.0 && sharpness.is_finite()) {
                    Err(Error::usage("cyclic_tanh sharpness must be positive"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Replaces the schedule's headline value (constant β, linear start, cyclic max).
    pub fn with_beta(self, beta: f64) -> Self {
        match self {
            BetaSchedule::Constant { .. } => BetaSchedule::Constant { beta },
            BetaSchedule::Linear { .. } => BetaSchedule::Linear { start: beta },
            BetaSchedule::CyclicTanh {
                period, sharpness, ..
            } => BetaSchedule::CyclicTanh {
                max: beta,
                period,
                sharpness,
            },
        }
    }
}

/// β at step `t` of a phase lasting `total` steps.
pub fn beta_at(schedule: &BetaSchedule, t: usize, total: usize) -> Result<f64> {
    schedule.validate()?;
    Ok(match *schedule {
        BetaSchedule::Constant { beta } => beta,
        BetaSchedule::Linear { start } => {
            if total == 0 {
                return Err(Error::usage("linear schedule needs a positive step count"));
            }
            let frac = (t as f64 / total as f64).min(1.0);
            start + (1.0 - start) * frac
        }
        BetaSchedule::CyclicTanh {
            max,
            period,
            sharpness,
        } => {
            let frac = (t % period) as f64 / period as f64;
            1.0 + (max - 1.0) * (1.0 + (sharpness * (0.5 - frac)).tanh()) / 2.0
        }
    })
}

/// A rule together with its β source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateRule {
    pub rule: Rule,
    pub schedule: Option<BetaSchedule>,
}

impl UpdateRule {
    pub fn new(rule: Rule, schedule: Option<BetaSchedule>) -> Result<Self> {
        let schedule = if rule.uses_schedule() {
            let s = schedule.or_else(|| rule.default_schedule());
            if let Some(s) = &s {
                s.validate()?;
            }
            s
        } else {
            None
        };
        Ok(Self { rule, schedule })
    }

    pub fn with_defaults(rule: Rule) -> Self {
        Self {
            rule,
            schedule: rule.default_schedule(),
        }
    }

    /// β driving step `t`; `None` for rules without a scalar β.
    pub fn beta(&self, t: usize, total: usize) -> Result<Option<f64>> {
        match (self.rule, &self.schedule) {
            (Rule::Ergd | Rule::SErgd, Some(s)) => beta_at(s, t, total).map(Some),
            (Rule::Ergd | Rule::SErgd, None) => {
                Err(Error::usage(format!("{} needs a beta schedule", self.rule)))
            }
            _ => Ok(None),
        }
    }
}

fn check_shapes(scores: &ArrayView2<f64>, kernel: &PairwiseKernel) {
    assert_eq!(scores.nrows(), kernel.len(), "one score row per particle");
    assert_eq!(
        scores.ncols(),
        kernel.dim(),
        "score and particle dimensions agree"
    );
}

fn rows_parallel<F>(n: usize, d: usize, row: F) -> Array2<f64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let mut out = vec![0.0; n * d];
    if d > 0 {
        out.par_chunks_mut(d)
            .enumerate()
            .for_each(|(i, v)| row(i, v));
    }
    Array2::from_shape_vec((n, d), out).expect("n*d")
}

pub fn velocity_svgd(scores: ArrayView2<f64>, kernel: &PairwiseKernel) -> Array2<f64> {
    check_shapes(&scores, kernel);
    let (n, d) = scores.dim();
    let inv_n = 1.0 / n as f64;
    rows_parallel(n, d, |i, v| {
        for j in 0..n {
            let k = kernel.values[[j, i]];
            for (c, vc) in v.iter_mut().enumerate() {
                *vc += k * scores[[j, c]] + kernel.grads[[j, i, c]];
            }
        }
        v.iter_mut().for_each(|x| *x *= inv_n);
    })
}

pub fn velocity_kde_wgd(scores: ArrayView2<f64>, kernel: &PairwiseKernel) -> Array2<f64> {
    check_shapes(&scores, kernel);
    let (n, d) = scores.dim();
    rows_parallel(n, d, |i, v| {
        let mut mass = 0.0;
        for j in 0..n {
            mass += kernel.values[[i, j]];
            for (c, vc) in v.iter_mut().enumerate() {
                *vc += kernel.grads[[i, j, c]];
            }
        }
        let beta_i = 1.0 / mass;
        for (c, vc) in v.iter_mut().enumerate() {
            *vc = scores[[i, c]] - beta_i * *vc;
        }
    })
}

pub fn velocity_ergd(scores: ArrayView2<f64>, kernel: &PairwiseKernel, beta: f64) -> Array2<f64> {
    check_shapes(&scores, kernel);
    let (n, d) = scores.dim();
    let inv_n = 1.0 / n as f64;
    rows_parallel(n, d, |i, v| {
        for j in 0..n {
            let k = kernel.values[[i, j]];
            for (c, vc) in v.iter_mut().enumerate() {
                *vc += k * scores[[j, c]] - beta * kernel.grads[[i, j, c]];
            }
        }
        v.iter_mut().for_each(|x| *x *= inv_n);
    })
}

pub fn velocity_sergd(scores: ArrayView2<f64>, kernel: &PairwiseKernel, beta: f64) -> Array2<f64> {
    check_shapes(&scores, kernel);
    let (n, d) = scores.dim();
    let scale = beta / n as f64;
    rows_parallel(n, d, |i, v| {
        for j in 0..n {
            for (c, vc) in v.iter_mut().enumerate() {
                *vc += kernel.grads[[i, j, c]];
            }
        }
        for (c, vc) in v.iter_mut().enumerate() {
            *vc = scores[[i, c]] - scale * *vc;
        }
    })
}

/// Dispatches on `rule`; `beta` is required for ERGD and s-ERGD and ignored otherwise.
pub fn velocity(
    rule: Rule,
    scores: ArrayView2<f64>,
    kernel: &PairwiseKernel,
    beta: Option<f64>,
) -> Result<Array2<f64>> {
    let need_beta = || {
        beta.filter(|b| *b > 0.0)
            .ok_or_else(|| Error::usage(format!("{rule} needs a positive beta")))
    };
    Ok(match rule {
        Rule::Svgd => velocity_svgd(scores, kernel),
        Rule::KdeWgd => velocity_kde_wgd(scores, kernel),
        Rule::Ergd => velocity_ergd(scores, kernel, need_beta()?),
        Rule::SErgd => velocity_sergd(scores, kernel, need_beta()?),
    })
}
