//! l-infinity attacks with per-example budgets.
//!
//! All attacks operate on a [`LossSurface`]: something that can report
//! per-example losses for a batch and (except SPSA, which only probes) the
//! gradient of their sum with respect to the inputs. The standard surface is
//! [`MlpSurface`] (cross-entropy or margin loss on an MLP); [`LinearSurface`]
//! exposes an exactly linear loss for which the first-order behaviour of the
//! attacks is known in closed form, which the analysis checks and tests lean
//! on heavily.
//!
//! Every attack clips iterates to the configured value range and projects to
//! the per-example l-infinity ball each step, so outputs always satisfy both
//! constraints by construction. Randomness (PGD start noise, SPSA probes) is
//! drawn from per-example counter-derived streams, so results do not depend
//! on batch composition order and are bit-reproducible from the config seed.

use crate::error::{invalid, Result};
use crate::graph::Graph;
use crate::models::{forward_graph, Parameters};
use crate::prng::{stream, Prng};
use crate::tensor::{cross_entropy_value, cw_margin_value, sign, Tensor};

/// Attack families supported by [`run_attack`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackFamily {
    /// Single signed-gradient step.
    Fgsm,
    /// Iterated projected signed-gradient ascent on the attack loss.
    Pgd,
    /// PGD ascending the margin objective max_{k != y} z_k - z_y.
    CwPgd,
    /// Gradient-free simultaneous-perturbation ascent (forward passes only).
    Spsa,
}

impl AttackFamily {
    pub fn name(&self) -> &'static str {
        match self {
            AttackFamily::Fgsm => "fgsm",
            AttackFamily::Pgd => "pgd",
            AttackFamily::CwPgd => "cw-pgd",
            AttackFamily::Spsa => "spsa",
        }
    }
}

/// Loss the attack ascends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackLoss {
    CrossEntropy,
    /// Margin objective on logits: positive once the example is misclassified.
    CwMargin,
}

/// Budgets (or step sizes): one shared value or one value per example.
#[derive(Debug, Clone, PartialEq)]
pub enum Epsilons {
    Shared(f64),
    PerExample(Vec<f64>),
}

impl Epsilons {
    /// Expands to one value per example, validating length and sign.
    pub fn resolve(&self, n: usize, what: &str) -> Result<Vec<f64>> {
        let values = match self {
            Epsilons::Shared(v) => vec![*v; n],
            Epsilons::PerExample(vs) => {
                if vs.len() != n {
                    return Err(invalid!(
                        "{what}: {} per-example values for a batch of {n}",
                        vs.len()
                    ));
                }
                vs.clone()
            }
        };
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(invalid!("{what}: values must be finite and >= 0, got {bad}"));
        }
        Ok(values)
    }
}

/// SPSA estimator settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpsaParams {
    /// Ascent iterations.
    pub iterations: usize,
    /// Probe half-width c in the two-sided difference (L(x+c d) - L(x-c d)) / 2c.
    pub est_perturbation: f64,
    /// Step size multiplying the estimated gradient sign.
    pub learning_rate: f64,
    /// Total forward probes per gradient estimate; must be even (antithetic
    /// pairs).
    pub est_samples: usize,
}

impl Default for SpsaParams {
    fn default() -> SpsaParams {
        SpsaParams {
            iterations: 100,
            est_perturbation: 0.001,
            learning_rate: 0.01,
            est_samples: 256,
        }
    }
}

/// Full description of one attack run.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub family: AttackFamily,
    /// Per-example l-infinity budgets.
    pub epsilons: Epsilons,
    /// Iteration count for the PGD families.
    pub steps: usize,
    /// Per-step sizes; defaults to a quarter of each example's budget.
    pub step_sizes: Option<Epsilons>,
    /// Gaussian start-noise scale for the PGD families (0 = deterministic).
    pub init_noise_std: f64,
    pub loss: AttackLoss,
    pub spsa: SpsaParams,
    /// Valid value range of the input domain.
    pub clip_range: (f64, f64),
    pub seed: u64,
}

impl AttackConfig {
    fn base(family: AttackFamily, eps: f64) -> AttackConfig {
        AttackConfig {
            family,
            epsilons: Epsilons::Shared(eps),
            steps: 1,
            step_sizes: None,
            init_noise_std: 0.001,
            loss: AttackLoss::CrossEntropy,
            spsa: SpsaParams::default(),
            clip_range: (0.0, 1.0),
            seed: 0,
        }
    }

    /// Single-step FGSM at the shared budget.
    pub fn fgsm(eps: f64) -> AttackConfig {
        AttackConfig::base(AttackFamily::Fgsm, eps)
    }

    /// PGD with `steps` iterations; step size defaults to budget/4.
    pub fn pgd(eps: f64, steps: usize) -> AttackConfig {
        AttackConfig {
            steps,
            ..AttackConfig::base(AttackFamily::Pgd, eps)
        }
    }

    /// The standard evaluation attack: 20-step PGD with step size 1/255.
    pub fn pgd20(eps: f64) -> AttackConfig {
        AttackConfig {
            steps: 20,
            step_sizes: Some(Epsilons::Shared(1.0 / 255.0)),
            ..AttackConfig::base(AttackFamily::Pgd, eps)
        }
    }

    /// 20-step PGD on the margin objective, step size 1/255.
    pub fn cw20(eps: f64) -> AttackConfig {
        AttackConfig {
            steps: 20,
            step_sizes: Some(Epsilons::Shared(1.0 / 255.0)),
            loss: AttackLoss::CwMargin,
            ..AttackConfig::base(AttackFamily::CwPgd, eps)
        }
    }

    /// SPSA with the default estimator settings.
    pub fn spsa(eps: f64) -> AttackConfig {
        AttackConfig::base(AttackFamily::Spsa, eps)
    }

    pub fn with_seed(mut self, seed: u64) -> AttackConfig {
        self.seed = seed;
        self
    }

    /// Short human-readable label for reports.
    pub fn describe(&self) -> String {
        let eps = match &self.epsilons {
            Epsilons::Shared(e) => format!("{e:.6}"),
            Epsilons::PerExample(_) => "per-example".to_string(),
        };
        match self.family {
            AttackFamily::Fgsm => format!("fgsm(eps={eps})"),
            AttackFamily::Pgd => format!("pgd(eps={eps},steps={})", self.steps),
            AttackFamily::CwPgd => format!("cw-pgd(eps={eps},steps={})", self.steps),
            AttackFamily::Spsa => format!(
                "spsa(eps={eps},iters={},samples={})",
                self.spsa.iterations, self.spsa.est_samples
            ),
        }
    }

    pub(crate) fn validate(&self, n: usize) -> Result<()> {
        let (lo, hi) = self.clip_range;
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(invalid!("clip range [{lo}, {hi}] is not a valid interval"));
        }
        if self.init_noise_std < 0.0 {
            return Err(invalid!(
                "init noise scale must be >= 0, got {}",
                self.init_noise_std
            ));
        }
        self.epsilons.resolve(n, "budgets")?;
        if let Some(steps) = &self.step_sizes {
            steps.resolve(n, "step sizes")?;
        }
        match self.family {
            AttackFamily::Pgd | AttackFamily::CwPgd => {
                if self.steps == 0 {
                    return Err(invalid!("pgd needs at least one step"));
                }
            }
            AttackFamily::Spsa => {
                if self.spsa.iterations == 0 {
                    return Err(invalid!("spsa needs at least one iteration"));
                }
                if self.spsa.est_samples < 2 || self.spsa.est_samples % 2 != 0 {
                    return Err(invalid!(
                        "spsa est_samples must be even and >= 2, got {}",
                        self.spsa.est_samples
                    ));
                }
                if self.spsa.est_perturbation <= 0.0 {
                    return Err(invalid!(
                        "spsa probe width must be positive, got {}",
                        self.spsa.est_perturbation
                    ));
                }
                if self.spsa.learning_rate <= 0.0 {
                    return Err(invalid!(
                        "spsa learning rate must be positive, got {}",
                        self.spsa.learning_rate
                    ));
                }
            }
            AttackFamily::Fgsm => {}
        }
        if self.family == AttackFamily::CwPgd && self.loss != AttackLoss::CwMargin {
            return Err(invalid!("cw-pgd must ascend the margin loss"));
        }
        Ok(())
    }

    fn resolved_steps(&self, eps: &[f64]) -> Result<Vec<f64>> {
        match &self.step_sizes {
            Some(s) => s.resolve(eps.len(), "step sizes"),
            None => Ok(eps.iter().map(|e| e / 4.0).collect()),
        }
    }
}

/// Result of attacking one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialBatch {
    pub x_adv: Tensor,
    /// Attack-loss value per example at the returned point.
    pub achieved_loss: Vec<f64>,
    /// l-infinity distance to the clean example, per example.
    pub linf_distance: Vec<f64>,
}

/// A batch loss with (for gradient-based attacks) input gradients.
pub trait LossSurface {
    /// Per-example losses for `[batch, features]` inputs.
    fn losses(&self, x: &Tensor, y: &[usize]) -> Result<Vec<f64>>;

    /// Per-example losses plus the gradient of their **sum** with respect to
    /// `x`. Rows of the gradient are the per-example input gradients because
    /// examples do not interact through the loss.
    fn losses_and_grad(&self, x: &Tensor, y: &[usize]) -> Result<(Vec<f64>, Tensor)>;
}

/// Cross-entropy or margin loss on an MLP.
#[derive(Debug, Clone, Copy)]
pub struct MlpSurface<'a> {
    pub params: &'a Parameters,
    pub loss: AttackLoss,
}

impl<'a> MlpSurface<'a> {
    pub fn new(params: &'a Parameters, loss: AttackLoss) -> MlpSurface<'a> {
        MlpSurface { params, loss }
    }

    fn row_losses(&self, logits: &Tensor, y: &[usize]) -> Result<Vec<f64>> {
        (0..logits.rows())
            .map(|i| match self.loss {
                AttackLoss::CrossEntropy => cross_entropy_value(logits.row(i), y[i]),
                AttackLoss::CwMargin => Ok(cw_margin_value(logits.row(i), y[i])?.0),
            })
            .collect()
    }
}

impl LossSurface for MlpSurface<'_> {
    fn losses(&self, x: &Tensor, y: &[usize]) -> Result<Vec<f64>> {
        check_batch(x, y)?;
        let logits = crate::models::forward_logits(self.params, x)?;
        self.row_losses(&logits, y)
    }

    fn losses_and_grad(&self, x: &Tensor, y: &[usize]) -> Result<(Vec<f64>, Tensor)> {
        check_batch(x, y)?;
        let mut graph = Graph::new();
        let param_ids = self.params.register(&mut graph);
        let xid = graph.leaf(x.clone());
        let logits = forward_graph(&mut graph, &param_ids, xid)?;
        let losses = self.row_losses(graph.value(logits), y)?;
        let root = match self.loss {
            AttackLoss::CrossEntropy => graph.cross_entropy_sum(logits, y)?,
            AttackLoss::CwMargin => {
                // The margin's gradient is the gradient of the linear
                // functional that selects the current best-other class.
                let values = graph.value(logits).clone();
                let classes = values.shape()[1];
                let mut select = vec![0.0; values.len()];
                for (i, &label) in y.iter().enumerate() {
                    let (_, k) = cw_margin_value(values.row(i), label)?;
                    select[i * classes + k] = 1.0;
                    select[i * classes + label] = -1.0;
                }
                let sel = graph.leaf(Tensor::from_parts(values.shape().to_vec(), select));
                let prod = graph.mul(logits, sel)?;
                graph.sum(prod)?
            }
        };
        let grads = graph.backward(root, &[xid])?;
        let gx = grads.get(xid).expect("input gradient requested").clone();
        Ok((losses, gx))
    }
}

/// An exactly linear loss `L_i = w . x_i + b` (labels are ignored).
///
/// For this surface the first-order attack laws hold with equality: one FGSM
/// step raises each loss by exactly eps * ||w||_1, and PGD at any budget
/// lands on the signed corner of the ball.
#[derive(Debug, Clone)]
pub struct LinearSurface {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearSurface {
    pub fn new(weights: Vec<f64>, bias: f64) -> LinearSurface {
        LinearSurface { weights, bias }
    }

    pub fn l1_norm(&self) -> f64 {
        self.weights.iter().map(|w| w.abs()).sum()
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.rank() != 2 || x.shape()[1] != self.weights.len() {
            return Err(invalid!(
                "linear surface over {} features, got input shape {:?}",
                self.weights.len(),
                x.shape()
            ));
        }
        Ok(())
    }
}

impl LossSurface for LinearSurface {
    fn losses(&self, x: &Tensor, _y: &[usize]) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok((0..x.rows())
            .map(|i| {
                x.row(i)
                    .iter()
                    .zip(&self.weights)
                    .map(|(xi, wi)| xi * wi)
                    .sum::<f64>()
                    + self.bias
            })
            .collect())
    }

    fn losses_and_grad(&self, x: &Tensor, y: &[usize]) -> Result<(Vec<f64>, Tensor)> {
        let losses = self.losses(x, y)?;
        let mut grad = Vec::with_capacity(x.len());
        for _ in 0..x.rows() {
            grad.extend_from_slice(&self.weights);
        }
        Ok((losses, Tensor::from_parts(x.shape().to_vec(), grad)))
    }
}

fn check_batch(x: &Tensor, y: &[usize]) -> Result<()> {
    if x.rank() != 2 {
        return Err(invalid!(
            "attacks want [batch, features] inputs, got shape {:?}",
            x.shape()
        ));
    }
    if x.rows() != y.len() {
        return Err(invalid!(
            "batch of {} rows with {} labels",
            x.rows(),
            y.len()
        ));
    }
    Ok(())
}

fn check_in_range(x: &Tensor, clip: (f64, f64)) -> Result<()> {
    if let Some(bad) = x.data().iter().find(|v| **v < clip.0 || **v > clip.1) {
        return Err(invalid!(
            "input value {bad} outside the value range [{}, {}]",
            clip.0,
            clip.1
        ));
    }
    Ok(())
}

/// Projects `candidate` onto the l-infinity ball of radius `eps` around
/// `center`, coordinate by coordinate.
///
/// Points already inside come back unchanged (bitwise); `eps = 0` returns
/// exactly the center.
pub fn project_linf(candidate: &Tensor, center: &Tensor, eps: f64) -> Result<Tensor> {
    candidate.same_shape(center, "project_linf")?;
    if !eps.is_finite() || eps < 0.0 {
        return Err(invalid!("projection radius must be >= 0, got {eps}"));
    }
    Ok(clamp_to_balls(candidate, center, &[eps], true))
}

/// Per-row projection: row `i` of `candidate` is projected onto the ball of
/// radius `eps[i]` around row `i` of `center`.
pub fn project_linf_rows(candidate: &Tensor, center: &Tensor, eps: &[f64]) -> Result<Tensor> {
    candidate.same_shape(center, "project_linf_rows")?;
    if eps.len() != center.rows() {
        return Err(invalid!(
            "{} radii for {} rows",
            eps.len(),
            center.rows()
        ));
    }
    if let Some(bad) = eps.iter().find(|e| !e.is_finite() || **e < 0.0) {
        return Err(invalid!("projection radius must be >= 0, got {bad}"));
    }
    Ok(clamp_to_balls(candidate, center, eps, false))
}

fn clamp_to_balls(candidate: &Tensor, center: &Tensor, eps: &[f64], shared: bool) -> Tensor {
    let rows = center.rows();
    let cols = center.len() / rows.max(1);
    let mut out = candidate.data().to_vec();
    for i in 0..rows {
        let e = if shared { eps[0] } else { eps[i] };
        for j in 0..cols {
            let idx = i * cols + j;
            let c = center.data()[idx];
            out[idx] = out[idx].clamp(c - e, c + e);
        }
    }
    Tensor::from_parts(candidate.shape().to_vec(), out)
}

fn clip_in_place(x: &mut Tensor, clip: (f64, f64)) {
    for v in x.data_mut() {
        *v = v.clamp(clip.0, clip.1);
    }
}

/// One signed-gradient step per example on an arbitrary surface.
pub fn fgsm_on<S: LossSurface>(
    surface: &S,
    x: &Tensor,
    y: &[usize],
    eps: &[f64],
    clip: (f64, f64),
) -> Result<Tensor> {
    check_batch(x, y)?;
    check_in_range(x, clip)?;
    if eps.len() != x.rows() {
        return Err(invalid!("{} budgets for {} rows", eps.len(), x.rows()));
    }
    let (_, grad) = surface.losses_and_grad(x, y)?;
    let cols = x.len() / x.rows();
    let mut out = x.data().to_vec();
    for i in 0..x.rows() {
        for j in 0..cols {
            let idx = i * cols + j;
            out[idx] = (out[idx] + eps[i] * sign(grad.data()[idx])).clamp(clip.0, clip.1);
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// FGSM on the model's cross-entropy loss at a shared budget.
///
/// Coordinates with zero gradient stay untouched (sign(0) = 0), and a zero
/// budget returns the input unchanged.
pub fn fgsm(
    params: &Parameters,
    x: &Tensor,
    y: &[usize],
    eps: f64,
    clip: (f64, f64),
) -> Result<Tensor> {
    if !eps.is_finite() || eps < 0.0 {
        return Err(invalid!("fgsm budget must be >= 0, got {eps}"));
    }
    let surface = MlpSurface::new(params, AttackLoss::CrossEntropy);
    fgsm_on(&surface, x, y, &vec![eps; x.rows()], clip)
}

/// Iterated projected signed-gradient ascent on an arbitrary surface.
///
/// Starts at `x` plus optional Gaussian noise (projected and clipped), then
/// runs `cfg.steps` iterations of step / project-to-ball / clip. Start noise
/// is drawn from a per-example stream keyed by (seed, example index), so the
/// result for an example does not depend on its batch neighbours.
pub fn pgd_on<S: LossSurface>(
    surface: &S,
    x: &Tensor,
    y: &[usize],
    cfg: &AttackConfig,
) -> Result<AdversarialBatch> {
    check_batch(x, y)?;
    cfg.validate(x.rows())?;
    check_in_range(x, cfg.clip_range)?;
    let eps = cfg.epsilons.resolve(x.rows(), "budgets")?;
    let kappa = cfg.resolved_steps(&eps)?;
    let rows = x.rows();
    let cols = x.len() / rows;

    let mut current = x.clone();
    if cfg.init_noise_std > 0.0 {
        for i in 0..rows {
            let mut rng = Prng::new(cfg.seed, &[stream::ATTACK_INIT, i as u64]);
            for j in 0..cols {
                current.data_mut()[i * cols + j] += cfg.init_noise_std * rng.normal();
            }
        }
        current = project_linf_rows(&current, x, &eps)?;
        clip_in_place(&mut current, cfg.clip_range);
    }

    for _ in 0..cfg.steps {
        let (_, grad) = surface.losses_and_grad(&current, y)?;
        for i in 0..rows {
            for j in 0..cols {
                let idx = i * cols + j;
                current.data_mut()[idx] += kappa[i] * sign(grad.data()[idx]);
            }
        }
        current = project_linf_rows(&current, x, &eps)?;
        clip_in_place(&mut current, cfg.clip_range);
    }

    let achieved_loss = surface.losses(&current, y)?;
    let linf_distance = current.linf_rows(x)?;
    Ok(AdversarialBatch {
        x_adv: current,
        achieved_loss,
        linf_distance,
    })
}

/// PGD on the configured model loss. `cfg.family` must be `Pgd`.
pub fn pgd_linf(
    params: &Parameters,
    x: &Tensor,
    y: &[usize],
    cfg: &AttackConfig,
) -> Result<AdversarialBatch> {
    if cfg.family != AttackFamily::Pgd {
        return Err(invalid!(
            "pgd_linf called with family {}",
            cfg.family.name()
        ));
    }
    pgd_on(&MlpSurface::new(params, cfg.loss), x, y, cfg)
}

/// PGD ascending the margin objective. `cfg.family` must be `CwPgd` and the
/// loss `CwMargin`.
pub fn cw_pgd(
    params: &Parameters,
    x: &Tensor,
    y: &[usize],
    cfg: &AttackConfig,
) -> Result<AdversarialBatch> {
    if cfg.family != AttackFamily::CwPgd {
        return Err(invalid!("cw_pgd called with family {}", cfg.family.name()));
    }
    pgd_on(&MlpSurface::new(params, cfg.loss), x, y, cfg)
}

/// Gradient-free SPSA ascent on an arbitrary surface.
pub fn spsa_on<S: LossSurface>(
    surface: &S,
    x: &Tensor,
    y: &[usize],
    cfg: &AttackConfig,
) -> Result<AdversarialBatch> {
    check_batch(x, y)?;
    cfg.validate(x.rows())?;
    check_in_range(x, cfg.clip_range)?;
    let eps = cfg.epsilons.resolve(x.rows(), "budgets")?;
    let rows = x.rows();
    let cols = x.len() / rows;
    let pairs = cfg.spsa.est_samples / 2;
    let c = cfg.spsa.est_perturbation;
    let lr = cfg.spsa.learning_rate;

    // One probe stream per example: parallel evaluation over examples would
    // reproduce exactly this serial result.
    let mut probe_rngs: Vec<Prng> = (0..rows)
        .map(|i| Prng::new(cfg.seed, &[stream::SPSA, i as u64]))
        .collect();

    let mut current = x.clone();
    let mut delta = vec![0.0; rows * cols];
    let mut estimate = vec![0.0; rows * cols];
    for _ in 0..cfg.spsa.iterations {
        estimate.iter_mut().for_each(|g| *g = 0.0);
        for _ in 0..pairs {
            for (i, rng) in probe_rngs.iter_mut().enumerate() {
                for j in 0..cols {
                    delta[i * cols + j] = rng.rademacher();
                }
            }
            let mut plus = current.clone();
            let mut minus = current.clone();
            for idx in 0..rows * cols {
                plus.data_mut()[idx] += c * delta[idx];
                minus.data_mut()[idx] -= c * delta[idx];
            }
            let lp = surface.losses(&plus, y)?;
            let lm = surface.losses(&minus, y)?;
            for i in 0..rows {
                let scale = (lp[i] - lm[i]) / (2.0 * c);
                for j in 0..cols {
                    estimate[i * cols + j] += scale * delta[i * cols + j];
                }
            }
        }
        for (g, e) in estimate.iter_mut().zip(std::iter::repeat(pairs as f64)) {
            *g /= e;
        }
        for idx in 0..rows * cols {
            current.data_mut()[idx] += lr * sign(estimate[idx]);
        }
        current = project_linf_rows(&current, x, &eps)?;
        clip_in_place(&mut current, cfg.clip_range);
    }

    let achieved_loss = surface.losses(&current, y)?;
    let linf_distance = current.linf_rows(x)?;
    Ok(AdversarialBatch {
        x_adv: current,
        achieved_loss,
        linf_distance,
    })
}

/// SPSA on the configured model loss. `cfg.family` must be `Spsa`.
pub fn spsa(
    params: &Parameters,
    x: &Tensor,
    y: &[usize],
    cfg: &AttackConfig,
) -> Result<AdversarialBatch> {
    if cfg.family != AttackFamily::Spsa {
        return Err(invalid!("spsa called with family {}", cfg.family.name()));
    }
    spsa_on(&MlpSurface::new(params, cfg.loss), x, y, cfg)
}

/// Dispatches on `cfg.family`, returning a uniform result shape.
pub fn run_attack(
    params: &Parameters,
    x: &Tensor,
    y: &[usize],
    cfg: &AttackConfig,
) -> Result<AdversarialBatch> {
    match cfg.family {
        AttackFamily::Fgsm => {
            check_batch(x, y)?;
            cfg.validate(x.rows())?;
            let eps = cfg.epsilons.resolve(x.rows(), "budgets")?;
            let surface = MlpSurface::new(params, cfg.loss);
            let x_adv = fgsm_on(&surface, x, y, &eps, cfg.clip_range)?;
            let achieved_loss = surface.losses(&x_adv, y)?;
            let linf_distance = x_adv.linf_rows(x)?;
            Ok(AdversarialBatch {
                x_adv,
                achieved_loss,
                linf_distance,
            })
        }
        AttackFamily::Pgd => pgd_linf(params, x, y, cfg),
        AttackFamily::CwPgd => cw_pgd(params, x, y, cfg),
        AttackFamily::Spsa => spsa(params, x, y, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{init_parameters, MlpSpec};

    const BASE: f64 = 8.0 / 255.0;
    const WIDE: (f64, f64) = (-1e9, 1e9);

    fn toy_params() -> Parameters {
        init_parameters(&MlpSpec::new(2, vec![8], 2).unwrap(), 21).unwrap()
    }

    fn toy_batch(n: usize, seed: u64) -> (Tensor, Vec<usize>) {
        let mut rng = Prng::new(seed, &[0xBA7C4]);
        let data: Vec<f64> = (0..n * 2).map(|_| rng.uniform_in(0.2, 0.8)).collect();
        let y = (0..n).map(|i| i % 2).collect();
        (Tensor::matrix(n, 2, data).unwrap(), y)
    }

    #[test]
    fn project_clamps_per_coordinate() {
        let center = Tensor::vector(vec![0.5, 0.5]);
        let candidate = Tensor::vector(vec![0.9, 0.45]);
        let p = project_linf(&candidate, &center, 0.2).unwrap();
        assert_eq!(p.data(), &[0.7, 0.45], "outside coord clamps, inside stays");
    }

    #[test]
    fn project_zero_radius_returns_center_exactly() {
        let center = Tensor::vector(vec![0.3, 0.8]);
        let candidate = Tensor::vector(vec![0.1, 0.95]);
        let p = project_linf(&candidate, &center, 0.0).unwrap();
        assert_eq!(p.data(), center.data());
    }

    #[test]
    fn project_inside_is_identity_bitwise() {
        let center = Tensor::vector(vec![0.4, 0.6, 0.1]);
        let candidate = Tensor::vector(vec![0.41, 0.58, 0.12]);
        let p = project_linf(&candidate, &center, 0.05).unwrap();
        for (a, b) in p.data().iter().zip(candidate.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn project_rejects_bad_arguments() {
        let center = Tensor::vector(vec![0.0, 0.0]);
        let candidate = Tensor::vector(vec![0.0, 0.0, 0.0]);
        assert!(project_linf(&candidate, &center, 0.1).is_err());
        let candidate = Tensor::vector(vec![0.0, 0.0]);
        assert!(project_linf(&candidate, &center, -0.1).is_err());
    }

    #[test]
    fn fgsm_on_linear_meets_first_order_law_exactly() {
        let surface = LinearSurface::new(vec![1.0, -2.0, 3.0], 0.25);
        let x = Tensor::matrix(1, 3, vec![0.4, 0.5, 0.6]).unwrap();
        let before = surface.losses(&x, &[0]).unwrap()[0];
        let x_adv = fgsm_on(&surface, &x, &[0], &[0.1], WIDE).unwrap();
        let after = surface.losses(&x_adv, &[0]).unwrap()[0];
        // Increase is exactly eps * ||w||_1 = 0.1 * 6.
        assert!(
            ((after - before) - 0.6).abs() < 1e-9,
            "increase = {}",
            after - before
        );
    }

    #[test]
    fn fgsm_zero_budget_is_identity() {
        let params = toy_params();
        let (x, y) = toy_batch(5, 1);
        let x_adv = fgsm(&params, &x, &y, 0.0, (0.0, 1.0)).unwrap();
        assert_eq!(x_adv.data(), x.data());
    }

    #[test]
    fn fgsm_leaves_zero_gradient_coordinates_alone() {
        // The second weight is zero, so its coordinate never moves.
        let surface = LinearSurface::new(vec![2.0, 0.0], 0.0);
        let x = Tensor::matrix(1, 2, vec![0.5, 0.5]).unwrap();
        let x_adv = fgsm_on(&surface, &x, &[0], &[0.1], WIDE).unwrap();
        assert_eq!(x_adv.data()[1], 0.5);
        assert!((x_adv.data()[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn fgsm_respects_clip_range() {
        let surface = LinearSurface::new(vec![1.0, 1.0], 0.0);
        let x = Tensor::matrix(1, 2, vec![0.95, 0.2]).unwrap();
        let x_adv = fgsm_on(&surface, &x, &[0], &[0.1], (0.0, 1.0)).unwrap();
        assert_eq!(x_adv.data()[0], 1.0, "clipped at the upper range bound");
        assert!((x_adv.data()[1] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn pgd_single_step_no_noise_equals_fgsm_with_min_step() {
        let params = toy_params();
        let (x, y) = toy_batch(6, 2);
        for (kappa, eps) in [(0.002, 0.01), (0.02, 0.01)] {
            let cfg = AttackConfig {
                steps: 1,
                init_noise_std: 0.0,
                step_sizes: Some(Epsilons::Shared(kappa)),
                ..AttackConfig::pgd(eps, 1)
            };
            let got = pgd_linf(&params, &x, &y, &cfg).unwrap();
            let expect = fgsm(&params, &x, &y, kappa.min(eps), (0.0, 1.0)).unwrap();
            for (a, b) in got.x_adv.data().iter().zip(expect.data()) {
                assert_eq!(a.to_bits(), b.to_bits(), "kappa={kappa} eps={eps}");
            }
        }
    }

    #[test]
    fn pgd_zero_budget_returns_input() {
        let params = toy_params();
        let (x, y) = toy_batch(4, 3);
        let cfg = AttackConfig::pgd(0.0, 5);
        let out = pgd_linf(&params, &x, &y, &cfg).unwrap();
        assert_eq!(out.x_adv.data(), x.data());
        assert!(out.linf_distance.iter().all(|&d| d == 0.0));
        let natural = MlpSurface::new(&params, AttackLoss::CrossEntropy)
            .losses(&x, &y)
            .unwrap();
        assert_eq!(out.achieved_loss, natural);
    }

    #[test]
    fn pgd_honors_per_example_budgets_and_range() {
        let params = toy_params();
        let (x, y) = toy_batch(24, 4);
        let eps: Vec<f64> = (0..24).map(|i| BASE * (0.25 + 0.1 * i as f64)).collect();
        let cfg = AttackConfig {
            epsilons: Epsilons::PerExample(eps.clone()),
            ..AttackConfig::pgd(BASE, 10)
        };
        let out = pgd_linf(&params, &x, &y, &cfg).unwrap();
        for (i, d) in out.linf_distance.iter().enumerate() {
            assert!(*d <= eps[i] + 1e-9, "example {i}: {d} > {}", eps[i]);
        }
        assert!(out
            .x_adv
            .data()
            .iter()
            .all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn pgd_ascends_the_loss_without_noise() {
        let params = toy_params();
        let (x, y) = toy_batch(16, 5);
        let cfg = AttackConfig {
            init_noise_std: 0.0,
            ..AttackConfig::pgd(BASE, 10)
        };
        let natural = MlpSurface::new(&params, AttackLoss::CrossEntropy)
            .losses(&x, &y)
            .unwrap();
        let out = pgd_linf(&params, &x, &y, &cfg).unwrap();
        for (i, (adv, nat)) in out.achieved_loss.iter().zip(&natural).enumerate() {
            assert!(adv >= &(nat - 1e-9), "example {i} lost loss: {adv} < {nat}");
        }
    }

    #[test]
    fn pgd_is_deterministic_given_seed() {
        let params = toy_params();
        let (x, y) = toy_batch(8, 6);
        let cfg = AttackConfig::pgd(BASE, 7).with_seed(123);
        let a = pgd_linf(&params, &x, &y, &cfg).unwrap();
        let b = pgd_linf(&params, &x, &y, &cfg).unwrap();
        assert_eq!(a, b);
        // With a step too small to reach the ball boundary, the start noise
        // decides the endpoint, so the seed must show through.
        let gentle = AttackConfig {
            init_noise_std: 0.01,
            step_sizes: Some(Epsilons::Shared(1e-6)),
            ..AttackConfig::pgd(BASE, 1)
        };
        let c = pgd_linf(&params, &x, &y, &gentle.clone().with_seed(123)).unwrap();
        let d = pgd_linf(&params, &x, &y, &gentle.with_seed(124)).unwrap();
        assert_ne!(c.x_adv.data(), d.x_adv.data(), "seed must matter");
    }

    #[test]
    fn pgd_start_noise_is_per_example() {
        // The same example in different batch positions sees different
        // streams, but the same position reproduces exactly.
        let params = toy_params();
        let (x, y) = toy_batch(3, 7);
        let cfg = AttackConfig::pgd(BASE, 3).with_seed(55);
        let full = pgd_linf(&params, &x, &y, &cfg).unwrap();
        let first = pgd_linf(
            &params,
            &Tensor::matrix(1, 2, x.row(0).to_vec()).unwrap(),
            &y[..1],
            &cfg,
        )
        .unwrap();
        for (a, b) in full.x_adv.row(0).iter().zip(first.x_adv.data()) {
            assert_eq!(a.to_bits(), b.to_bits(), "row 0 independent of batch");
        }
    }

    #[test]
    fn cw_pgd_requires_margin_loss_and_raises_margin() {
        let params = toy_params();
        let (x, y) = toy_batch(12, 8);
        let mut cfg = AttackConfig::cw20(BASE);
        cfg.steps = 10;
        let out = cw_pgd(&params, &x, &y, &cfg).unwrap();
        let natural = MlpSurface::new(&params, AttackLoss::CwMargin)
            .losses(&x, &y)
            .unwrap();
        let improved = out
            .achieved_loss
            .iter()
            .zip(&natural)
            .filter(|(a, n)| *a >= *n)
            .count();
        assert!(
            improved >= 10,
            "margin objective should rise for most examples ({improved}/12)"
        );

        cfg.loss = AttackLoss::CrossEntropy;
        assert!(cw_pgd(&params, &x, &y, &cfg).is_err());
    }

    /// Quadratic bowl used to validate the SPSA estimator against the
    /// analytic gradient.
    struct Quadratic {
        scale: Vec<f64>,
        center: Vec<f64>,
    }

    impl LossSurface for Quadratic {
        fn losses(&self, x: &Tensor, _y: &[usize]) -> Result<Vec<f64>> {
            Ok((0..x.rows())
                .map(|i| {
                    x.row(i)
                        .iter()
                        .zip(&self.scale)
                        .zip(&self.center)
                        .map(|((xi, a), c)| a * (xi - c) * (xi - c))
                        .sum()
                })
                .collect())
        }

        fn losses_and_grad(&self, x: &Tensor, y: &[usize]) -> Result<(Vec<f64>, Tensor)> {
            let losses = self.losses(x, y)?;
            let mut grad = Vec::with_capacity(x.len());
            for i in 0..x.rows() {
                for ((xi, a), c) in x.row(i).iter().zip(&self.scale).zip(&self.center) {
                    grad.push(2.0 * a * (xi - c));
                }
            }
            Ok((losses, Tensor::from_parts(x.shape().to_vec(), grad)))
        }
    }

    #[test]
    fn spsa_estimate_matches_analytic_sign_on_quadratic() {
        let d = 8;
        let surface = Quadratic {
            scale: (0..d).map(|j| 0.5 + j as f64 * 0.3).collect(),
            center: (0..d).map(|j| 0.1 * j as f64).collect(),
        };
        let n = 10;
        let mut rng = Prng::new(77, &[0x5EED]);
        let x = Tensor::matrix(n, d, (0..n * d).map(|_| rng.uniform_in(-1.0, 2.0)).collect())
            .unwrap();
        let y = vec![0; n];

        // One iteration with a large sample count and a big step: compare the
        // direction actually taken with the analytic gradient sign.
        let cfg = AttackConfig {
            spsa: SpsaParams {
                iterations: 1,
                est_samples: 512,
                est_perturbation: 1e-4,
                learning_rate: 0.05,
            },
            clip_range: WIDE,
            init_noise_std: 0.0,
            ..AttackConfig::spsa(1.0)
        }
        .with_seed(9);
        let out = spsa_on(&surface, &x, &y, &cfg).unwrap();
        let (_, grad) = surface.losses_and_grad(&x, &y).unwrap();
        let mut agree = 0;
        let mut total = 0;
        for idx in 0..n * d {
            let moved = out.x_adv.data()[idx] - x.data()[idx];
            if grad.data()[idx].abs() < 1e-9 || moved == 0.0 {
                continue;
            }
            total += 1;
            if sign(moved) == sign(grad.data()[idx]) {
                agree += 1;
            }
        }
        assert!(
            agree as f64 >= 0.9 * total as f64,
            "sign agreement {agree}/{total}"
        );
    }

    #[test]
    fn spsa_is_deterministic_and_respects_ball() {
        let params = toy_params();
        let (x, y) = toy_batch(6, 9);
        let cfg = AttackConfig {
            spsa: SpsaParams {
                iterations: 5,
                est_samples: 16,
                ..SpsaParams::default()
            },
            ..AttackConfig::spsa(BASE)
        }
        .with_seed(31);
        let a = super::spsa(&params, &x, &y, &cfg).unwrap();
        let b = super::spsa(&params, &x, &y, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.linf_distance.iter().all(|&d| d <= BASE + 1e-9));
        assert!(a.x_adv.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn spsa_zero_budget_returns_input() {
        let params = toy_params();
        let (x, y) = toy_batch(3, 10);
        let cfg = AttackConfig {
            spsa: SpsaParams {
                iterations: 3,
                est_samples: 8,
                ..SpsaParams::default()
            },
            ..AttackConfig::spsa(0.0)
        };
        let out = super::spsa(&params, &x, &y, &cfg).unwrap();
        assert_eq!(out.x_adv.data(), x.data());
    }

    #[test]
    fn config_validation_rejects_bad_settings() {
        let params = toy_params();
        let (x, y) = toy_batch(2, 11);
        let mut cfg = AttackConfig::pgd(BASE, 0);
        assert!(pgd_linf(&params, &x, &y, &cfg).is_err(), "zero steps");

        cfg = AttackConfig::pgd(BASE, 5);
        cfg.epsilons = Epsilons::PerExample(vec![0.1]);
        assert!(pgd_linf(&params, &x, &y, &cfg).is_err(), "wrong eps length");

        cfg = AttackConfig::spsa(BASE);
        cfg.spsa.est_samples = 3;
        assert!(super::spsa(&params, &x, &y, &cfg).is_err(), "odd samples");

        cfg = AttackConfig::pgd(BASE, 5);
        cfg.clip_range = (1.0, 0.0);
        assert!(pgd_linf(&params, &x, &y, &cfg).is_err(), "inverted range");

        assert!(
            fgsm(&params, &x, &y, f64::NAN, (0.0, 1.0)).is_err(),
            "nan budget"
        );
    }

    #[test]
    fn run_attack_dispatches_all_families() {
        let params = toy_params();
        let (x, y) = toy_batch(4, 12);
        for cfg in [
            AttackConfig::fgsm(BASE),
            AttackConfig::pgd(BASE, 3),
            AttackConfig {
                steps: 3,
                ..AttackConfig::cw20(BASE)
            },
            AttackConfig {
                spsa: SpsaParams {
                    iterations: 2,
                    est_samples: 8,
                    ..SpsaParams::default()
                },
                ..AttackConfig::spsa(BASE)
            },
        ] {
            let out = run_attack(&params, &x, &y, &cfg).unwrap();
            assert_eq!(out.x_adv.shape(), x.shape(), "{}", cfg.describe());
            assert_eq!(out.achieved_loss.len(), 4);
            assert!(out.linf_distance.iter().all(|&d| d <= BASE + 1e-9));
        }
    }
}
