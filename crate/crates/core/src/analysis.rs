//! Robustness evaluation and executable checks of the first-order claims.
//!
//! Three claims about first-order adversaries are checked empirically, each
//! returning a [`TheoremReport`] with a satisfaction fraction:
//!
//! 1. Under a shared budget, the example with the higher natural loss keeps
//!    the higher adversarial loss, and also gains the larger loss increment
//!    (checked over example pairs with a minimum natural-loss gap).
//! 2. The inner-maximization loss is nondecreasing in the budget (checked
//!    with deterministic-start PGD over an increasing budget list).
//! 3. A single signed-gradient step raises the loss by `eps` times the l1
//!    gradient norm, to first order (checked as a ratio distribution).
//!
//! On an exactly linear loss all three hold with equality, which the tests
//! pin down to tight tolerances through the same attack code paths used for
//! models. The module also evaluates robust accuracy across attack configs,
//! builds budget histograms, and sweeps the reweighting strength.

use crate::attacks::{
    fgsm_on, pgd_on, run_attack, AttackConfig, AttackLoss, LossSurface, MlpSurface,
};
use crate::error::{invalid, Result};
use crate::harness::Dataset;
use crate::models::{argmax, forward_logits, MlpSpec, Parameters};
use crate::prng::{derive_u64, stream};
use crate::tensor::Tensor;
use crate::training::{run_training, TrainConfig};
use crate::vulnerability::RadiusAssignment;
use serde::Serialize;
use std::collections::BTreeMap;

/// Tolerance under which orderings count as preserved (exact ties included).
const ORDER_TOL: f64 = 1e-9;
/// Tolerance for the nondecreasing-loss check.
const MONOTONE_TOL: f64 = 1e-6;
/// Gradient norms below this exclude an example from ratio statistics.
const ZERO_GRAD_TOL: f64 = 1e-12;
/// Pair cap for the ordering check.
const DEFAULT_MAX_PAIRS: usize = 200;
/// The natural image value range.
const UNIT_RANGE: (f64, f64) = (0.0, 1.0);
/// No clipping: used where the first-order claim is about the ball alone.
const UNCLIPPED: (f64, f64) = (f64::NEG_INFINITY, f64::INFINITY);

/// Robust accuracy and mean attack loss for one attack config.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackOutcome {
    /// Human-readable echo of the attack configuration.
    pub attack: String,
    pub robust_accuracy: f64,
    pub mean_adversarial_loss: f64,
}

/// Natural accuracy plus one outcome per evaluated attack.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessReport {
    pub examples: usize,
    pub natural_accuracy: f64,
    pub attacks: Vec<AttackOutcome>,
}

/// Result of one empirical claim check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoremReport {
    /// Which claim was checked: "theorem1", "theorem2", or "lemma1".
    pub theorem: String,
    /// Number of samples (pairs or examples) entering the fraction.
    pub n: usize,
    /// Fraction of samples satisfying the claim.
    pub fraction: f64,
    /// Auxiliary statistics, keyed deterministically.
    pub stats: BTreeMap<String, f64>,
}

/// Budget distribution summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RadiiHistogram {
    /// `bins + 1` uniform edges spanning `[min, max]`.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

/// One row of a reweighting-strength sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub natural_accuracy: f64,
    pub robust_accuracy: f64,
}

fn accuracy(params: &Parameters, x: &Tensor, y: &[usize]) -> Result<f64> {
    let logits = forward_logits(params, x)?;
    let correct = y
        .iter()
        .enumerate()
        .filter(|(i, &label)| argmax(logits.row(*i)) == label)
        .count();
    Ok(correct as f64 / y.len() as f64)
}

/// Runs every attack config against the dataset and reports robust accuracy
/// per config alongside the (attack-free) natural accuracy.
pub fn evaluate(
    params: &Parameters,
    dataset: &Dataset,
    configs: &[AttackConfig],
) -> Result<RobustnessReport> {
    if configs.is_empty() {
        return Err(invalid!("evaluate needs at least one attack config"));
    }
    let x = dataset.features();
    let y = dataset.labels();
    let natural_accuracy = accuracy(params, x, y)?;
    let mut attacks = Vec::with_capacity(configs.len());
    for cfg in configs {
        let out = run_attack(params, x, y, cfg)?;
        let robust_accuracy = accuracy(params, &out.x_adv, y)?;
        let mean_adversarial_loss =
            out.achieved_loss.iter().sum::<f64>() / out.achieved_loss.len() as f64;
        attacks.push(AttackOutcome {
            attack: cfg.describe(),
            robust_accuracy,
            mean_adversarial_loss,
        });
    }
    Ok(RobustnessReport {
        examples: dataset.len(),
        natural_accuracy,
        attacks,
    })
}

/// Pair-ordering check on an arbitrary surface; see [`verify_theorem1`].
pub fn verify_theorem1_on<S: LossSurface>(
    surface: &S,
    x: &Tensor,
    y: &[usize],
    eps: f64,
    min_gap: f64,
    max_pairs: usize,
    clip: (f64, f64),
) -> Result<TheoremReport> {
    if !eps.is_finite() || eps <= 0.0 {
        return Err(invalid!("budget must be positive, got {eps}"));
    }
    if !min_gap.is_finite() || min_gap < 0.0 {
        return Err(invalid!("loss gap must be >= 0, got {min_gap}"));
    }
    if max_pairs == 0 {
        return Err(invalid!("need a positive pair budget"));
    }
    let n = x.rows();
    let natural = surface.losses(x, y)?;
    let x_adv = fgsm_on(surface, x, y, &vec![eps; n], clip)?;
    let adversarial = surface.losses(&x_adv, y)?;

    // Qualifying pairs in lexicographic order, capped: deterministic and
    // independent of loss value ties.
    let mut ordering_ok = 0usize;
    let mut increment_ok = 0usize;
    let mut both_ok = 0usize;
    let mut pairs = 0usize;
    let mut gap_sum = 0.0;
    'outer: for i in 0..n {
        for j in (i + 1)..n {
            if (natural[i] - natural[j]).abs() < min_gap {
                continue;
            }
            // hi = the more vulnerable example (higher natural loss).
            let (hi, lo) = if natural[i] >= natural[j] { (i, j) } else { (j, i) };
            pairs += 1;
            gap_sum += natural[hi] - natural[lo];
            let claim1 = adversarial[hi] >= adversarial[lo] - ORDER_TOL;
            let inc_hi = adversarial[hi] - natural[hi];
            let inc_lo = adversarial[lo] - natural[lo];
            let claim2 = inc_hi >= inc_lo - ORDER_TOL;
            ordering_ok += claim1 as usize;
            increment_ok += claim2 as usize;
            both_ok += (claim1 && claim2) as usize;
            if pairs == max_pairs {
                break 'outer;
            }
        }
    }
    if pairs < 10 {
        return Err(invalid!(
            "only {pairs} example pairs have a natural-loss gap of at least {min_gap}; \
             need 10 or more (lower the gap or enlarge the dataset)"
        ));
    }

    let p = pairs as f64;
    let mut stats = BTreeMap::new();
    stats.insert("eps".to_string(), eps);
    stats.insert("min_gap".to_string(), min_gap);
    stats.insert("mean_gap".to_string(), gap_sum / p);
    stats.insert("fraction_ordering".to_string(), ordering_ok as f64 / p);
    stats.insert("fraction_increment".to_string(), increment_ok as f64 / p);
    Ok(TheoremReport {
        theorem: "theorem1".to_string(),
        n: pairs,
        fraction: both_ok as f64 / p,
        stats,
    })
}

/// Checks that under one shared budget, higher natural loss implies both a
/// higher adversarial loss and a larger loss increment, over up to 200
/// example pairs whose natural losses differ by at least `min_gap`.
/// Ties within 1e-9 count as satisfying. Fails if fewer than 10 pairs
/// qualify.
pub fn verify_theorem1(
    params: &Parameters,
    dataset: &Dataset,
    eps: f64,
    min_gap: f64,
) -> Result<TheoremReport> {
    let surface = MlpSurface::new(params, AttackLoss::CrossEntropy);
    verify_theorem1_on(
        &surface,
        dataset.features(),
        dataset.labels(),
        eps,
        min_gap,
        DEFAULT_MAX_PAIRS,
        UNIT_RANGE,
    )
}

/// Budget-monotonicity check on an arbitrary surface; see
/// [`verify_theorem2`].
pub fn verify_theorem2_on<S: LossSurface>(
    surface: &S,
    x: &Tensor,
    y: &[usize],
    eps_list: &[f64],
    clip: (f64, f64),
) -> Result<TheoremReport> {
    if eps_list.len() < 2 {
        return Err(invalid!(
            "budget list needs at least 2 entries, got {}",
            eps_list.len()
        ));
    }
    for pair in eps_list.windows(2) {
        if !(pair[0] < pair[1]) {
            return Err(invalid!("budget list must be strictly increasing"));
        }
    }
    if !(eps_list[0].is_finite() && eps_list[0] > 0.0) {
        return Err(invalid!("budgets must be positive, got {}", eps_list[0]));
    }

    let n = x.rows();
    // Deterministic start (no noise): the claim is a first-order statement
    // about the maximization itself, so start noise would only blur it.
    let mut losses_by_eps = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let cfg = AttackConfig {
            init_noise_std: 0.0,
            clip_range: clip,
            ..AttackConfig::pgd(eps, 20)
        };
        let out = pgd_on(surface, x, y, &cfg)?;
        losses_by_eps.push(out.achieved_loss);
    }

    let mut satisfied = 0usize;
    for i in 0..n {
        let monotone = losses_by_eps
            .windows(2)
            .all(|w| w[1][i] >= w[0][i] - MONOTONE_TOL);
        satisfied += monotone as usize;
    }

    let mut stats = BTreeMap::new();
    stats.insert("eps_lo".to_string(), eps_list[0]);
    stats.insert("eps_hi".to_string(), eps_list[eps_list.len() - 1]);
    stats.insert(
        "mean_loss_at_eps_lo".to_string(),
        losses_by_eps[0].iter().sum::<f64>() / n as f64,
    );
    stats.insert(
        "mean_loss_at_eps_hi".to_string(),
        losses_by_eps[eps_list.len() - 1].iter().sum::<f64>() / n as f64,
    );
    stats.insert("violations".to_string(), (n - satisfied) as f64);
    Ok(TheoremReport {
        theorem: "theorem2".to_string(),
        n,
        fraction: satisfied as f64 / n as f64,
        stats,
    })
}

/// Checks that the attacked loss is nondecreasing in the budget: 20-step
/// deterministic-start PGD at each budget in the strictly increasing
/// `eps_list`, per-example nondecreasing within 1e-6.
pub fn verify_theorem2(
    params: &Parameters,
    dataset: &Dataset,
    eps_list: &[f64],
) -> Result<TheoremReport> {
    let surface = MlpSurface::new(params, AttackLoss::CrossEntropy);
    verify_theorem2_on(
        &surface,
        dataset.features(),
        dataset.labels(),
        eps_list,
        UNIT_RANGE,
    )
}

/// First-order ratio check on an arbitrary surface; see [`verify_lemma1`].
pub fn verify_lemma1_on<S: LossSurface>(
    surface: &S,
    x: &Tensor,
    y: &[usize],
    small_eps: f64,
    clip: (f64, f64),
) -> Result<TheoremReport> {
    if !small_eps.is_finite() || small_eps <= 0.0 {
        return Err(invalid!("budget must be positive, got {small_eps}"));
    }
    let n = x.rows();
    let cols = x.len() / n;
    let (natural, grad) = surface.losses_and_grad(x, y)?;
    let x_adv = fgsm_on(surface, x, y, &vec![small_eps; n], clip)?;
    let attacked = surface.losses(&x_adv, y)?;

    let mut ratios = Vec::with_capacity(n);
    let mut excluded = 0usize;
    for i in 0..n {
        let norm: f64 = grad.data()[i * cols..(i + 1) * cols]
            .iter()
            .map(|g| g.abs())
            .sum();
        if norm < ZERO_GRAD_TOL {
            excluded += 1;
            continue;
        }
        ratios.push((attacked[i] - natural[i]) / (small_eps * norm));
    }
    if ratios.is_empty() {
        return Err(invalid!(
            "all {n} examples have (near-)zero input gradients; no ratios to report"
        ));
    }

    let m = ratios.len() as f64;
    let in_band = ratios.iter().filter(|r| (0.99..=1.01).contains(*r)).count();
    let mut stats = BTreeMap::new();
    stats.insert("eps".to_string(), small_eps);
    stats.insert("excluded_zero_grad".to_string(), excluded as f64);
    stats.insert(
        "ratio_min".to_string(),
        ratios.iter().cloned().fold(f64::INFINITY, f64::min),
    );
    stats.insert(
        "ratio_max".to_string(),
        ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    stats.insert("ratio_mean".to_string(), ratios.iter().sum::<f64>() / m);
    Ok(TheoremReport {
        theorem: "lemma1".to_string(),
        n: ratios.len(),
        fraction: in_band as f64 / m,
        stats,
    })
}

/// Reports how closely one signed-gradient step tracks its first-order
/// prediction: the fraction of examples whose ratio
/// `(attacked loss - natural loss) / (eps * l1 gradient norm)` lies in
/// `[0.99, 1.01]`. Perturbations are not clipped to the value range here —
/// the prediction concerns the ball alone. Zero-gradient examples are
/// excluded and counted in the stats.
pub fn verify_lemma1(
    params: &Parameters,
    dataset: &Dataset,
    small_eps: f64,
) -> Result<TheoremReport> {
    let surface = MlpSurface::new(params, AttackLoss::CrossEntropy);
    verify_lemma1_on(
        &surface,
        dataset.features(),
        dataset.labels(),
        small_eps,
        UNCLIPPED,
    )
}

/// Histogram of all per-example budgets across the given assignments, with
/// `bins` uniform bins spanning `[min, max]`.
pub fn radii_histogram(assignments: &[RadiusAssignment], bins: usize) -> Result<RadiiHistogram> {
    if bins == 0 {
        return Err(invalid!("histogram needs at least one bin"));
    }
    let values: Vec<f64> = assignments
        .iter()
        .flat_map(|a| a.rows.iter().map(|r| r.epsilon))
        .collect();
    if values.is_empty() {
        return Err(invalid!("no budgets to histogram"));
    }
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let width = (max - min) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|k| min + width * k as f64).collect();
    let mut counts = vec![0usize; bins];
    for v in &values {
        let bin = if width > 0.0 {
            (((v - min) / width) as usize).min(bins - 1)
        } else {
            0
        };
        counts[bin] += 1;
    }
    Ok(RadiiHistogram {
        edges,
        counts,
        min,
        max,
        mean,
    })
}

/// Trains one model per reweighting strength (same seed and schedule) and
/// reports natural plus 20-step-PGD robust accuracy on the given dataset.
pub fn sweep_alpha(
    spec: &MlpSpec,
    template: &TrainConfig,
    alphas: &[f64],
    dataset: &Dataset,
) -> Result<Vec<SweepRow>> {
    if alphas.is_empty() {
        return Err(invalid!("sweep needs at least one alpha"));
    }
    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let cfg = TrainConfig {
            alpha,
            ..template.clone()
        };
        let outcome = run_training(spec, &cfg, dataset)?;
        let params = &outcome.final_checkpoint.params;
        let natural_accuracy = accuracy(params, dataset.features(), dataset.labels())?;
        let attack = AttackConfig::pgd20(cfg.base_eps)
            .with_seed(derive_u64(cfg.seed, &[stream::EVAL_ATTACK, 0]));
        let report = evaluate(params, dataset, &[attack])?;
        rows.push(SweepRow {
            alpha,
            natural_accuracy,
            robust_accuracy: report.attacks[0].robust_accuracy,
        });
    }
    Ok(rows)
}
