//! Vulnerability scores and per-example perturbation budgets.
//!
//! Two scores summarize how safely the model currently classifies an example
//! from its softmax vector `p` and true label `y`:
//!
//! - **margin**: `p_y - max_{k != y} p_k`, in [-1, 1]; positive iff the
//!   prediction is correct with room to spare.
//! - **modified std**: `sqrt(sum_k (p_k - p_y)^2 / C)`, in
//!   [0, sqrt((C-1)/C)]; zero at uniform output and maximal when all mass
//!   sits on a single wrong class.
//!
//! A score `d` maps to a per-example l-infinity budget by exponential
//! reweighting of a shared base radius: `eps_i = exp(alpha * d) * eps`.
//! Attack step sizes are always a quarter of the budget. [`assign_batch`]
//! bundles score -> budget -> step for a whole batch.

use crate::error::{invalid, Result};
use crate::models::{forward_logits, Parameters};
use crate::tensor::{softmax_rows, Tensor};

/// Which score drives the budget reweighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreMethod {
    /// Softmax margin of the true class over the best other class.
    Margin,
    /// Modified standard deviation of the softmax vector around `p_y`.
    ModifiedStd,
}

impl ScoreMethod {
    pub fn name(&self) -> &'static str {
        match self {
            ScoreMethod::Margin => "margin",
            ScoreMethod::ModifiedStd => "modified-std",
        }
    }
}

/// A computed vulnerability score, tagged with the rule that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VulnerabilityScore {
    pub method: ScoreMethod,
    pub value: f64,
}

fn check_probs(probs: &Tensor, y: usize, what: &str) -> Result<()> {
    if probs.rank() != 1 {
        return Err(invalid!(
            "{what} wants a probability vector, got shape {:?}",
            probs.shape()
        ));
    }
    if probs.len() < 2 {
        return Err(invalid!(
            "{what} over {} class(es); at least 2 required",
            probs.len()
        ));
    }
    if y >= probs.len() {
        return Err(invalid!(
            "label {y} out of range for {} classes",
            probs.len()
        ));
    }
    Ok(())
}

/// Softmax margin `p_y - max_{k != y} p_k`.
///
/// Bounded by [-1, 1] for any probability vector; exactly 0 at uniform
/// output (the max over other classes equals `p_y`).
pub fn margin(probs: &Tensor, y: usize) -> Result<f64> {
    check_probs(probs, y, "margin")?;
    let p = probs.data();
    let best_other = p
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != y)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(p[y] - best_other)
}

/// Modified standard deviation `sqrt(sum_k (p_k - p_y)^2 / C)`.
///
/// Zero exactly at uniform output; maximal, `sqrt((C-1)/C)`, when the whole
/// mass sits on one class other than `y`.
pub fn modified_std(probs: &Tensor, y: usize) -> Result<f64> {
    check_probs(probs, y, "modified_std")?;
    let p = probs.data();
    let py = p[y];
    let sum: f64 = p.iter().map(|&v| (v - py) * (v - py)).sum();
    Ok((sum / p.len() as f64).sqrt())
}

/// Margin-weighted budget: `eps_i = exp(alpha * d_m) * eps`.
///
/// Monotone increasing in the margin, so confidently correct examples get
/// larger budgets. `d_m = 0` returns `eps` exactly.
pub fn mwpb_radius(d_m: f64, alpha: f64, eps: f64) -> f64 {
    (alpha * d_m).exp() * eps
}

/// Modified-std-weighted budget: `eps_i = exp(alpha * d_std) * eps`.
///
/// Rejects negative scores (the modified std is nonnegative by definition).
pub fn sdwpb_radius(d_std: f64, alpha: f64, eps: f64) -> Result<f64> {
    if d_std < 0.0 {
        return Err(invalid!(
            "modified-std score must be nonnegative, got {d_std}"
        ));
    }
    Ok((alpha * d_std).exp() * eps)
}

/// Attack step size for a budget: exactly a quarter of it.
pub fn step_size(eps_i: f64) -> f64 {
    eps_i / 4.0
}

/// Score, budget and step size for one example.
#[derive(Debug, Clone, PartialEq)]
pub struct RadiusRow {
    /// Position of the example in the batch this assignment was made for.
    pub example_id: usize,
    pub score: VulnerabilityScore,
    pub epsilon: f64,
    pub kappa: f64,
}

/// Per-example budgets for one batch, plus the settings that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct RadiusAssignment {
    pub method: ScoreMethod,
    pub alpha: f64,
    pub base_eps: f64,
    /// Training epoch the assignment was made in, when applicable.
    pub epoch: Option<u32>,
    pub rows: Vec<RadiusRow>,
}

impl RadiusAssignment {
    pub fn epsilons(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.epsilon).collect()
    }

    pub fn kappas(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.kappa).collect()
    }

    /// (min, mean, max) of the assigned budgets.
    pub fn epsilon_summary(&self) -> (f64, f64, f64) {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for row in &self.rows {
            min = min.min(row.epsilon);
            max = max.max(row.epsilon);
            sum += row.epsilon;
        }
        (min, sum / self.rows.len() as f64, max)
    }
}

/// Scores a batch under the current model and assigns budgets.
///
/// `x` is `[batch, features]`, `y` the per-row labels. `alpha` must be
/// nonnegative (zero collapses to the fixed budget `eps`), `eps` positive.
pub fn assign_batch(
    params: &Parameters,
    x: &Tensor,
    y: &[usize],
    method: ScoreMethod,
    alpha: f64,
    eps: f64,
) -> Result<RadiusAssignment> {
    if eps <= 0.0 {
        return Err(invalid!("base budget must be positive, got {eps}"));
    }
    if alpha < 0.0 {
        return Err(invalid!("alpha must be nonnegative, got {alpha}"));
    }
    if x.rank() != 2 || x.rows() != y.len() {
        return Err(invalid!(
            "batch shape {:?} inconsistent with {} labels",
            x.shape(),
            y.len()
        ));
    }
    let logits = forward_logits(params, x)?;
    let probs = softmax_rows(&logits)?;
    let mut rows = Vec::with_capacity(y.len());
    for (i, &label) in y.iter().enumerate() {
        let prow = Tensor::vector(probs.row(i).to_vec());
        let (value, epsilon) = match method {
            ScoreMethod::Margin => {
                let d = margin(&prow, label)?;
                (d, mwpb_radius(d, alpha, eps))
            }
            ScoreMethod::ModifiedStd => {
                let d = modified_std(&prow, label)?;
                (d, sdwpb_radius(d, alpha, eps)?)
            }
        };
        rows.push(RadiusRow {
            example_id: i,
            score: VulnerabilityScore { method, value },
            epsilon,
            kappa: step_size(epsilon),
        });
    }
    Ok(RadiusAssignment {
        method,
        alpha,
        base_eps: eps,
        epoch: None,
        rows,
    })
}
