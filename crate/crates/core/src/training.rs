//! The two-phase adversarial training loop.
//!
//! Phase one (warm-up) trains every batch against a shared budget of half
//! the base `eps` with step size `eps/8`. Phase two recomputes per-example
//! budgets from the live model before every batch — margin-weighted,
//! modified-standard-deviation-weighted, or fixed — and attacks each example
//! inside its own ball with step size a quarter of its budget.
//!
//! The optimizer is SGD with momentum and weight decay under a milestone
//! learning-rate schedule. Every random choice (shuffling, attack start
//! noise, held-out split) comes from a counter-derived stream keyed by the
//! config seed, so a run is a pure function of `(config, dataset)`.

use crate::attacks::{pgd_linf, AttackConfig, Epsilons};
use crate::error::{invalid, Result};
use crate::graph::{Graph, NodeId};
use crate::harness::{shuffle_batches, Dataset};
use crate::models::{argmax, forward_graph, forward_logits, Checkpoint, MlpSpec, Parameters};
use crate::prng::{derive_u64, stream, Prng};
use crate::tensor::{cross_entropy_value, Tensor};
use crate::vulnerability::{assign_batch, step_size, ScoreMethod};

/// How per-example budgets are chosen after warm-up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BudgetMethod {
    /// Every example keeps the base budget (standard adversarial training).
    Fixed,
    /// Margin-weighted budgets.
    Mwpb,
    /// Modified-standard-deviation-weighted budgets.
    Sdwpb,
}

impl BudgetMethod {
    pub fn name(&self) -> &'static str {
        match self {
            BudgetMethod::Fixed => "fixed",
            BudgetMethod::Mwpb => "mwpb",
            BudgetMethod::Sdwpb => "sdwpb",
        }
    }

    fn score_method(&self) -> Option<ScoreMethod> {
        match self {
            BudgetMethod::Fixed => None,
            BudgetMethod::Mwpb => Some(ScoreMethod::Margin),
            BudgetMethod::Sdwpb => Some(ScoreMethod::ModifiedStd),
        }
    }
}

/// The outer-minimization objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// Mean cross-entropy on the adversarial examples.
    At,
    /// Mean natural cross-entropy plus `beta` times the mean KL divergence
    /// from the natural to the adversarial prediction.
    TradesStyle { beta: f64 },
}

impl Objective {
    pub fn name(&self) -> &'static str {
        match self {
            Objective::At => "at",
            Objective::TradesStyle { .. } => "trades-style",
        }
    }
}

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Leading epochs trained at the shared half budget.
    pub warmup_epochs: usize,
    /// Base l-infinity budget `eps`.
    pub base_eps: f64,
    pub method: BudgetMethod,
    /// Reweighting strength; ignored by `Fixed`.
    pub alpha: f64,
    pub objective: Objective,
    /// PGD iterations when crafting training examples.
    pub pgd_steps: usize,
    /// Initial learning rate.
    pub lr0: f64,
    /// `(epoch, divisor)` pairs; from each milestone epoch onward the rate
    /// is divided by the divisor.
    pub lr_milestones: Vec<(usize, f64)>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            epochs: 30,
            warmup_epochs: 10,
            base_eps: 8.0 / 255.0,
            method: BudgetMethod::Mwpb,
            alpha: 0.58,
            objective: Objective::At,
            pgd_steps: 10,
            lr0: 0.1,
            lr_milestones: vec![(15, 10.0), (25, 10.0)],
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 128,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(invalid!("training needs at least one epoch"));
        }
        if self.warmup_epochs > self.epochs {
            return Err(invalid!(
                "warm-up of {} epochs exceeds the {} total",
                self.warmup_epochs,
                self.epochs
            ));
        }
        if !self.base_eps.is_finite() || self.base_eps <= 0.0 {
            return Err(invalid!("base budget must be positive, got {}", self.base_eps));
        }
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(invalid!("alpha must be >= 0, got {}", self.alpha));
        }
        if let Objective::TradesStyle { beta } = self.objective {
            if !beta.is_finite() || beta < 0.0 {
                return Err(invalid!("beta must be >= 0, got {beta}"));
            }
        }
        if self.pgd_steps == 0 {
            return Err(invalid!("training attack needs at least one step"));
        }
        if !self.lr0.is_finite() || self.lr0 <= 0.0 {
            return Err(invalid!("initial learning rate must be positive, got {}", self.lr0));
        }
        for &(epoch, divisor) in &self.lr_milestones {
            if epoch == 0 {
                return Err(invalid!("milestone epochs are 1-based"));
            }
            if !divisor.is_finite() || divisor <= 1.0 {
                return Err(invalid!("milestone divisors must exceed 1, got {divisor}"));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(invalid!("weight decay must be >= 0, got {}", self.weight_decay));
        }
        if self.batch_size == 0 {
            return Err(invalid!("batch size must be >= 1"));
        }
        Ok(())
    }
}

/// Mutable state threaded through the epochs.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: Parameters,
    /// Momentum buffers, one per parameter tensor, same shapes.
    pub velocity: Vec<Tensor>,
    /// Completed epochs; the next `train_epoch` call runs epoch `epoch + 1`.
    pub epoch: usize,
    /// Root seed all stream keys derive from.
    pub seed: u64,
}

impl TrainState {
    pub fn new(params: Parameters, seed: u64) -> TrainState {
        let velocity = params
            .tensors()
            .map(|t| Tensor::from_parts(t.shape().to_vec(), vec![0.0; t.len()]))
            .collect();
        TrainState {
            params,
            velocity,
            epoch: 0,
            seed,
        }
    }
}

/// Per-batch budget summary recorded in the epoch metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchBudget {
    pub eps_min: f64,
    pub eps_mean: f64,
    pub eps_max: f64,
    pub kappa_min: f64,
    pub kappa_max: f64,
    pub examples: usize,
}

/// What one epoch did: losses, accuracies, and the budget distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    /// Mean cross-entropy on clean batch inputs (live parameters).
    pub nat_loss: f64,
    /// Mean value of the training objective on the crafted batches.
    pub adv_loss: f64,
    pub nat_acc: f64,
    /// Accuracy on the crafted adversarial examples during training.
    pub rob_acc: f64,
    pub eps_min: f64,
    pub eps_mean: f64,
    pub eps_max: f64,
    pub batches: Vec<BatchBudget>,
}

/// The milestone schedule: `lr0` divided by the product of the divisors of
/// every milestone whose epoch is at or before `epoch` (1-based).
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> f64 {
    let mut lr = cfg.lr0;
    for &(milestone, divisor) in &cfg.lr_milestones {
        if milestone <= epoch {
            lr /= divisor;
        }
    }
    lr
}

/// One SGD step with momentum and weight decay:
/// `v <- momentum*v + (g + weight_decay*theta)`, `theta <- theta - lr*v`.
pub fn sgd_step(
    state: &mut TrainState,
    gradients: &[Tensor],
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    if gradients.len() != state.velocity.len() {
        return Err(invalid!(
            "{} gradient tensors for {} parameters",
            gradients.len(),
            state.velocity.len()
        ));
    }
    for ((theta, v), g) in state
        .params
        .tensors_mut()
        .zip(&mut state.velocity)
        .zip(gradients)
    {
        theta.same_shape(g, "sgd_step")?;
        for ((t, vi), gi) in theta.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *vi = cfg.momentum * *vi + (gi + cfg.weight_decay * *t);
            *t -= lr * *vi;
        }
    }
    Ok(())
}

/// A built objective graph, ready for one backward pass.
pub struct ObjectiveEval {
    pub graph: Graph,
    pub root: NodeId,
    pub param_nodes: Vec<NodeId>,
}

impl ObjectiveEval {
    /// Objective value at the current parameters.
    pub fn value(&self) -> f64 {
        self.graph.value(self.root).item().expect("scalar root")
    }

    /// Gradient of the objective for each parameter tensor, in order.
    pub fn parameter_gradients(&self) -> Result<Vec<Tensor>> {
        let grads = self.graph.backward(self.root, &self.param_nodes)?;
        Ok(self
            .param_nodes
            .iter()
            .map(|id| grads.get(*id).expect("requested gradient").clone())
            .collect())
    }
}

/// Builds the outer objective as a differentiable graph over the
/// parameters: mean adversarial cross-entropy, or the trades-style
/// combination of natural cross-entropy and a KL consistency term.
pub fn adversarial_objective(
    params: &Parameters,
    x: &Tensor,
    x_adv: &Tensor,
    y: &[usize],
    objective: Objective,
) -> Result<ObjectiveEval> {
    x.same_shape(x_adv, "adversarial_objective")?;
    let mut graph = Graph::new();
    let param_nodes = params.register(&mut graph);
    let x_adv_node = graph.leaf(x_adv.clone());
    let root = match objective {
        Objective::At => {
            let logits_adv = forward_graph(&mut graph, &param_nodes, x_adv_node)?;
            graph.cross_entropy_mean(logits_adv, y)?
        }
        Objective::TradesStyle { beta } => {
            if !beta.is_finite() || beta < 0.0 {
                return Err(invalid!("beta must be >= 0, got {beta}"));
            }
            let x_node = graph.leaf(x.clone());
            let logits_nat = forward_graph(&mut graph, &param_nodes, x_node)?;
            let logits_adv = forward_graph(&mut graph, &param_nodes, x_adv_node)?;
            let ce = graph.cross_entropy_mean(logits_nat, y)?;
            let kl = graph.kl_divergence_mean(logits_nat, logits_adv)?;
            let weighted = graph.scale(kl, beta)?;
            graph.add(ce, weighted)?
        }
    };
    Ok(ObjectiveEval {
        graph,
        root,
        param_nodes,
    })
}

/// Budgets and step sizes for one batch under the current phase.
fn batch_budgets(
    state: &TrainState,
    cfg: &TrainConfig,
    epoch: usize,
    x: &Tensor,
    y: &[usize],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = x.rows();
    if epoch <= cfg.warmup_epochs {
        // Warm-up: shared half budget, half the usual quarter-of-eps step.
        let eps = cfg.base_eps / 2.0;
        let kappa = step_size(cfg.base_eps) / 2.0;
        return Ok((vec![eps; m], vec![kappa; m]));
    }
    match cfg.method.score_method() {
        None => Ok((
            vec![cfg.base_eps; m],
            vec![step_size(cfg.base_eps); m],
        )),
        Some(method) => {
            let assignment = assign_batch(&state.params, x, y, method, cfg.alpha, cfg.base_eps)?;
            Ok((assignment.epsilons(), assignment.kappas()))
        }
    }
}

/// Runs one full epoch: shuffle, attack each batch under the phase's
/// budgets, take one SGD step per batch, and report metrics.
pub fn train_epoch(
    state: &mut TrainState,
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<EpochMetrics> {
    cfg.validate()?;
    let epoch = state.epoch + 1;
    let lr = lr_at_epoch(cfg, epoch);
    let n = dataset.len() as f64;

    let mut nat_loss_sum = 0.0;
    let mut adv_loss_sum = 0.0;
    let mut nat_correct = 0usize;
    let mut rob_correct = 0usize;
    let mut eps_sum = 0.0;
    let mut eps_min = f64::INFINITY;
    let mut eps_max = f64::NEG_INFINITY;
    let mut batch_summaries = Vec::new();

    for (batch_idx, batch) in shuffle_batches(dataset, cfg.batch_size, cfg.seed, epoch as u64)?
        .iter()
        .enumerate()
    {
        let (eps, kappa) = batch_budgets(state, cfg, epoch, &batch.x, &batch.y)?;
        let attack_seed = derive_u64(
            cfg.seed,
            &[stream::TRAIN_ATTACK, epoch as u64, batch_idx as u64],
        );
        let attack = AttackConfig {
            epsilons: Epsilons::PerExample(eps.clone()),
            step_sizes: Some(Epsilons::PerExample(kappa.clone())),
            ..AttackConfig::pgd(cfg.base_eps, cfg.pgd_steps)
        }
        .with_seed(attack_seed);
        let crafted = pgd_linf(&state.params, &batch.x, &batch.y, &attack)?;

        let logits_nat = forward_logits(&state.params, &batch.x)?;
        let logits_adv = forward_logits(&state.params, &crafted.x_adv)?;
        for (i, &label) in batch.y.iter().enumerate() {
            nat_loss_sum += cross_entropy_value(logits_nat.row(i), label)?;
            if argmax(logits_nat.row(i)) == label {
                nat_correct += 1;
            }
            if argmax(logits_adv.row(i)) == label {
                rob_correct += 1;
            }
        }

        let objective =
            adversarial_objective(&state.params, &batch.x, &crafted.x_adv, &batch.y, cfg.objective)?;
        let value = objective.value();
        if !value.is_finite() {
            return Err(invalid!(
                "objective diverged to {value} at epoch {epoch}, batch {batch_idx}"
            ));
        }
        adv_loss_sum += value * batch.y.len() as f64;
        let grads = objective.parameter_gradients()?;
        sgd_step(state, &grads, lr, cfg)?;

        let m = eps.len() as f64;
        let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        for &e in &eps {
            lo = lo.min(e);
            hi = hi.max(e);
            sum += e;
        }
        let (mut klo, mut khi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &k in &kappa {
            klo = klo.min(k);
            khi = khi.max(k);
        }
        eps_sum += sum;
        eps_min = eps_min.min(lo);
        eps_max = eps_max.max(hi);
        batch_summaries.push(BatchBudget {
            eps_min: lo,
            eps_mean: sum / m,
            eps_max: hi,
            kappa_min: klo,
            kappa_max: khi,
            examples: eps.len(),
        });
    }

    state.epoch = epoch;
    Ok(EpochMetrics {
        epoch,
        lr,
        nat_loss: nat_loss_sum / n,
        adv_loss: adv_loss_sum / n,
        nat_acc: nat_correct as f64 / n,
        rob_acc: rob_correct as f64 / n,
        eps_min,
        eps_mean: eps_sum / n,
        eps_max,
        batches: batch_summaries,
    })
}

/// Deterministic split of `0..n` into (training, held-out) index sets; the
/// held-out set takes every fifth example. Both sides come back sorted.
pub fn holdout_split(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    Prng::new(seed, &[stream::HOLDOUT]).shuffle(&mut order);
    let cut = n / 5;
    let mut holdout: Vec<usize> = order[..cut].to_vec();
    let mut train: Vec<usize> = order[cut..].to_vec();
    holdout.sort_unstable();
    train.sort_unstable();
    (train, holdout)
}

/// Everything a finished run produces.
#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    /// Parameters after the last epoch.
    pub final_checkpoint: Checkpoint,
    /// Parameters at the epoch with the best held-out robust accuracy.
    pub best_checkpoint: Checkpoint,
    pub best_epoch: usize,
    /// Held-out 20-step PGD robust accuracy at the best epoch.
    pub best_rob_acc: f64,
    pub metrics: Vec<EpochMetrics>,
}

fn robust_accuracy_pgd20(
    params: &Parameters,
    dataset: &Dataset,
    eps: f64,
    seed: u64,
) -> Result<f64> {
    let attack = AttackConfig::pgd20(eps).with_seed(seed);
    let out = pgd_linf(params, dataset.features(), dataset.labels(), &attack)?;
    let logits = forward_logits(params, &out.x_adv)?;
    let correct = dataset
        .labels()
        .iter()
        .enumerate()
        .filter(|(i, &label)| argmax(logits.row(*i)) == label)
        .count();
    Ok(correct as f64 / dataset.len() as f64)
}

/// Full training run: holds out a fifth of the data for best-epoch
/// selection, trains on the rest, and checkpoints both the final epoch and
/// the epoch with the best held-out robust accuracy (20-step PGD at the
/// base budget). Deterministic given the seed.
pub fn run_training(
    spec: &MlpSpec,
    cfg: &TrainConfig,
    dataset: &Dataset,
) -> Result<TrainingOutcome> {
    cfg.validate()?;
    if spec.input_dim != dataset.dim() || spec.num_classes != dataset.num_classes() {
        return Err(invalid!(
            "model of shape {}->{} cannot train on {}-dimensional data with {} classes",
            spec.input_dim,
            spec.num_classes,
            dataset.dim(),
            dataset.num_classes()
        ));
    }

    let (train_idx, holdout_idx) = holdout_split(dataset.len(), cfg.seed);
    let train_set = dataset.subset(&train_idx)?;
    // Datasets too small to split are evaluated on themselves.
    let holdout_set = if holdout_idx.is_empty() {
        dataset.clone()
    } else {
        dataset.subset(&holdout_idx)?
    };

    let params = crate::models::init_parameters(spec, cfg.seed)?;
    let mut state = TrainState::new(params, cfg.seed);
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut best_epoch = 0usize;
    let mut best_rob_acc = f64::NEG_INFINITY;
    let mut best_params = state.params.clone();

    for _ in 0..cfg.epochs {
        let epoch_metrics = train_epoch(&mut state, &train_set, cfg)?;
        let eval_seed = derive_u64(cfg.seed, &[stream::EVAL_ATTACK, state.epoch as u64]);
        let rob_acc = robust_accuracy_pgd20(&state.params, &holdout_set, cfg.base_eps, eval_seed)?;
        if rob_acc > best_rob_acc {
            best_rob_acc = rob_acc;
            best_epoch = state.epoch;
            best_params = state.params.clone();
        }
        metrics.push(epoch_metrics);
    }

    Ok(TrainingOutcome {
        final_checkpoint: Checkpoint {
            spec: spec.clone(),
            params: state.params,
            epoch: cfg.epochs as u32,
            rng_seed: cfg.seed,
        },
        best_checkpoint: Checkpoint {
            spec: spec.clone(),
            params: best_params,
            epoch: best_epoch as u32,
            rng_seed: cfg.seed,
        },
        best_epoch,
        best_rob_acc,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::generate_two_moons;
    use crate::models::init_parameters;

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            warmup_epochs: 1,
            pgd_steps: 2,
            batch_size: 16,
            lr_milestones: vec![],
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn lr_schedule_divides_at_milestones() {
        let cfg = TrainConfig {
            lr0: 0.1,
            lr_milestones: vec![(80, 10.0), (90, 10.0)],
            ..TrainConfig::default()
        };
        assert_eq!(lr_at_epoch(&cfg, 1), 0.1);
        assert_eq!(lr_at_epoch(&cfg, 79), 0.1);
        assert!((lr_at_epoch(&cfg, 80) - 0.01).abs() < 1e-15);
        assert!((lr_at_epoch(&cfg, 89) - 0.01).abs() < 1e-15);
        assert!((lr_at_epoch(&cfg, 90) - 0.001).abs() < 1e-15);
        let flat = TrainConfig {
            lr_milestones: vec![],
            ..TrainConfig::default()
        };
        assert_eq!(lr_at_epoch(&flat, 1000), flat.lr0);
    }

    #[test]
    fn config_validation_catches_bad_fields() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        for cfg in [
            TrainConfig { epochs: 0, ..ok.clone() },
            TrainConfig { warmup_epochs: 31, ..ok.clone() },
            TrainConfig { base_eps: 0.0, ..ok.clone() },
            TrainConfig { alpha: -0.1, ..ok.clone() },
            TrainConfig { pgd_steps: 0, ..ok.clone() },
            TrainConfig { lr0: 0.0, ..ok.clone() },
            TrainConfig { lr_milestones: vec![(10, 1.0)], ..ok.clone() },
            TrainConfig { lr_milestones: vec![(0, 10.0)], ..ok.clone() },
            TrainConfig { momentum: 1.0, ..ok.clone() },
            TrainConfig { weight_decay: -1.0, ..ok.clone() },
            TrainConfig { batch_size: 0, ..ok.clone() },
            TrainConfig {
                objective: Objective::TradesStyle { beta: -1.0 },
                ..ok.clone()
            },
        ] {
            assert!(cfg.validate().is_err(), "{cfg:?} should be rejected");
        }
        // The degenerate all-warm-up schedule is allowed.
        let degenerate = TrainConfig { warmup_epochs: 30, ..ok };
        assert!(degenerate.validate().is_ok());
    }

    #[test]
    fn sgd_step_matches_hand_arithmetic() {
        // theta=1, g=1, wd=0.1, momentum=0.9, v=0, lr=0.1 -> v=1.1, theta=0.89.
        let spec = MlpSpec::new(1, vec![], 2).unwrap();
        let mut params = Parameters::zeros(&spec);
        // Overwrite the single weight tensor with a known scalar layout.
        let theta = params.tensors_mut().next().unwrap();
        theta.data_mut()[0] = 1.0;
        let mut state = TrainState::new(params, 0);
        let cfg = TrainConfig {
            momentum: 0.9,
            weight_decay: 0.1,
            ..TrainConfig::default()
        };
        let grads: Vec<Tensor> = state
            .params
            .tensors()
            .map(|t| Tensor::from_parts(t.shape().to_vec(), vec![1.0; t.len()]))
            .collect();
        sgd_step(&mut state, &grads, 0.1, &cfg).unwrap();
        let theta = state.params.tensors().next().unwrap().data()[0];
        let v = state.velocity[0].data()[0];
        assert!((v - 1.1).abs() < 1e-15, "v = {v}");
        assert!((theta - 0.89).abs() < 1e-15, "theta = {theta}");
    }

    #[test]
    fn sgd_step_reductions() {
        let spec = MlpSpec::new(2, vec![3], 2).unwrap();
        let params = init_parameters(&spec, 1).unwrap();
        let before: Vec<f64> = params.tensors().flat_map(|t| t.data().to_vec()).collect();

        // Zero gradients, zero decay, zero momentum: nothing moves.
        let mut state = TrainState::new(params.clone(), 0);
        let zeros: Vec<Tensor> = state
            .params
            .tensors()
            .map(|t| Tensor::from_parts(t.shape().to_vec(), vec![0.0; t.len()]))
            .collect();
        let cfg = TrainConfig {
            momentum: 0.0,
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        sgd_step(&mut state, &zeros, 0.1, &cfg).unwrap();
        let after: Vec<f64> = state.params.tensors().flat_map(|t| t.data().to_vec()).collect();
        assert_eq!(before, after);

        // Plain gradient descent when momentum and decay are off.
        let mut state = TrainState::new(params.clone(), 0);
        let ones: Vec<Tensor> = state
            .params
            .tensors()
            .map(|t| Tensor::from_parts(t.shape().to_vec(), vec![1.0; t.len()]))
            .collect();
        sgd_step(&mut state, &ones, 0.05, &cfg).unwrap();
        for (b, a) in before.iter().zip(
            state
                .params
                .tensors()
                .flat_map(|t| t.data().to_vec())
                .collect::<Vec<_>>(),
        ) {
            assert!((a - (b - 0.05)).abs() < 1e-15);
        }

        // Weight-decay-only step shrinks every parameter toward zero.
        let mut state = TrainState::new(params, 0);
        let wd_cfg = TrainConfig {
            momentum: 0.9,
            weight_decay: 0.1,
            ..TrainConfig::default()
        };
        sgd_step(&mut state, &zeros, 0.1, &wd_cfg).unwrap();
        for (b, a) in before.iter().zip(
            state
                .params
                .tensors()
                .flat_map(|t| t.data().to_vec())
                .collect::<Vec<_>>(),
        ) {
            assert!((a - b * (1.0 - 0.1 * 0.1)).abs() < 1e-15, "{b} -> {a}");
        }
    }

    #[test]
    fn sgd_step_rejects_mismatched_gradients() {
        let spec = MlpSpec::new(2, vec![3], 2).unwrap();
        let mut state = TrainState::new(Parameters::zeros(&spec), 0);
        let cfg = TrainConfig::default();
        assert!(sgd_step(&mut state, &[], 0.1, &cfg).is_err());
        let wrong: Vec<Tensor> = state
            .params
            .tensors()
            .map(|_| Tensor::vector(vec![0.0]))
            .collect();
        assert!(sgd_step(&mut state, &wrong, 0.1, &cfg).is_err());
    }

    #[test]
    fn objective_reduces_to_natural_loss_when_unperturbed() {
        let spec = MlpSpec::new(2, vec![4], 2).unwrap();
        let params = init_parameters(&spec, 3).unwrap();
        let x = Tensor::matrix(3, 2, vec![0.1, 0.9, 0.4, 0.3, 0.7, 0.2]).unwrap();
        let y = vec![0, 1, 0];

        // trades-style with x_adv == x: the KL term is exactly zero.
        let trades =
            adversarial_objective(&params, &x, &x, &y, Objective::TradesStyle { beta: 6.0 })
                .unwrap();
        let at = adversarial_objective(&params, &x, &x, &y, Objective::At).unwrap();
        assert_eq!(trades.value(), at.value());

        // beta = 0 ignores the adversarial inputs entirely.
        let x_adv = x.map(|v| (v + 0.01).min(1.0));
        let beta0 =
            adversarial_objective(&params, &x, &x_adv, &y, Objective::TradesStyle { beta: 0.0 })
                .unwrap();
        assert_eq!(beta0.value(), at.value());
    }

    #[test]
    fn objective_at_uniform_logits_is_ln_c() {
        let spec = MlpSpec::new(2, vec![], 3).unwrap();
        let params = Parameters::zeros(&spec);
        let x = Tensor::matrix(2, 2, vec![0.2, 0.8, 0.5, 0.5]).unwrap();
        let eval = adversarial_objective(&params, &x, &x, &[0, 2], Objective::At).unwrap();
        assert!((eval.value() - 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn objective_gradients_flow_to_all_parameters() {
        let spec = MlpSpec::new(2, vec![8], 2).unwrap();
        let params = init_parameters(&spec, 3).unwrap();
        let x = Tensor::matrix(4, 2, vec![0.1, 0.2, 0.8, 0.9, 0.3, 0.6, 0.5, 0.5]).unwrap();
        // Guard against a dead hidden layer (all ReLUs off would make zero
        // gradients correct rather than a bug).
        let logits = forward_logits(&params, &x).unwrap();
        assert!(logits.data().iter().any(|v| *v != 0.0));
        let x_adv = x.map(|v| (v + 0.02).min(1.0));
        let y = vec![0, 1, 1, 0];
        for objective in [Objective::At, Objective::TradesStyle { beta: 1.0 }] {
            let eval = adversarial_objective(&params, &x, &x_adv, &y, objective).unwrap();
            let grads = eval.parameter_gradients().unwrap();
            assert_eq!(grads.len(), params.len());
            for (i, g) in grads.iter().enumerate() {
                let norm: f64 = g.data().iter().map(|v| v.abs()).sum();
                assert!(norm > 0.0, "{objective:?}: zero gradient for tensor {i}");
            }
        }
    }

    #[test]
    fn warmup_epoch_uses_exact_half_budgets() {
        let dataset = generate_two_moons(64, 0.1, 2).unwrap();
        let spec = MlpSpec::new(2, vec![8], 2).unwrap();
        let cfg = tiny_cfg();
        let mut state = TrainState::new(init_parameters(&spec, cfg.seed).unwrap(), cfg.seed);
        let metrics = train_epoch(&mut state, &dataset, &cfg).unwrap();
        assert_eq!(metrics.epoch, 1);
        let half = cfg.base_eps / 2.0;
        let eighth = cfg.base_eps / 8.0;
        for b in &metrics.batches {
            assert_eq!(b.eps_min, half);
            assert_eq!(b.eps_max, half);
            assert_eq!(b.kappa_min, eighth);
            assert_eq!(b.kappa_max, eighth);
        }
        assert_eq!(metrics.eps_min, half);
        assert_eq!(metrics.eps_max, half);
        assert_eq!(metrics.eps_mean, half);
    }

    #[test]
    fn post_warmup_budgets_follow_the_method() {
        let dataset = generate_two_moons(64, 0.1, 2).unwrap();
        let spec = MlpSpec::new(2, vec![8], 2).unwrap();

        // Fixed: every budget is the base budget.
        let cfg = TrainConfig {
            method: BudgetMethod::Fixed,
            warmup_epochs: 0,
            ..tiny_cfg()
        };
        let mut state = TrainState::new(init_parameters(&spec, cfg.seed).unwrap(), cfg.seed);
        let metrics = train_epoch(&mut state, &dataset, &cfg).unwrap();
        assert_eq!(metrics.eps_min, cfg.base_eps);
        assert_eq!(metrics.eps_max, cfg.base_eps);

        // Margin-weighted at alpha 0.58: inside the analytic band.
        let cfg = TrainConfig {
            method: BudgetMethod::Mwpb,
            alpha: 0.58,
            warmup_epochs: 0,
            ..tiny_cfg()
        };
        let mut state = TrainState::new(init_parameters(&spec, cfg.seed).unwrap(), cfg.seed);
        let metrics = train_epoch(&mut state, &dataset, &cfg).unwrap();
        assert!(metrics.eps_min >= 0.0175645, "min {}", metrics.eps_min);
        assert!(metrics.eps_max <= 0.0560339, "max {}", metrics.eps_max);
        assert!(metrics.eps_min <= metrics.eps_mean && metrics.eps_mean <= metrics.eps_max);
    }

    #[test]
    fn training_is_deterministic() {
        let dataset = generate_two_moons(80, 0.1, 6).unwrap();
        let spec = MlpSpec::new(2, vec![8], 2).unwrap();
        let cfg = tiny_cfg();
        let a = run_training(&spec, &cfg, &dataset).unwrap();
        let b = run_training(&spec, &cfg, &dataset).unwrap();
        assert_eq!(a.metrics, b.metrics);
        let bits = |p: &Parameters| {
            p.tensors()
                .flat_map(|t| t.data().iter().map(|v| v.to_bits()))
                .collect::<Vec<_>>()
        };
        assert_eq!(
            bits(&a.final_checkpoint.params),
            bits(&b.final_checkpoint.params)
        );
        assert_eq!(a.best_epoch, b.best_epoch);
    }

    #[test]
    fn all_warmup_schedule_keeps_half_budgets_throughout() {
        let dataset = generate_two_moons(60, 0.1, 4).unwrap();
        let spec = MlpSpec::new(2, vec![8], 2).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            warmup_epochs: 2,
            ..tiny_cfg()
        };
        let outcome = run_training(&spec, &cfg, &dataset).unwrap();
        for m in &outcome.metrics {
            assert_eq!(m.eps_min, cfg.base_eps / 2.0);
            assert_eq!(m.eps_max, cfg.base_eps / 2.0);
        }
    }

    #[test]
    fn losses_stay_finite_and_metrics_consistent() {
        let dataset = generate_two_moons(100, 0.1, 8).unwrap();
        let spec = MlpSpec::new(2, vec![16], 2).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            warmup_epochs: 1,
            ..tiny_cfg()
        };
        let outcome = run_training(&spec, &cfg, &dataset).unwrap();
        assert_eq!(outcome.metrics.len(), 3);
        for m in &outcome.metrics {
            assert!(m.nat_loss.is_finite() && m.adv_loss.is_finite());
            assert!((0.0..=1.0).contains(&m.nat_acc));
            assert!((0.0..=1.0).contains(&m.rob_acc));
            assert!(m.eps_min <= m.eps_mean && m.eps_mean <= m.eps_max);
            let total: usize = m.batches.iter().map(|b| b.examples).sum();
            assert_eq!(total, 80, "batches cover the 4/5 training split");
        }
    }

    #[test]
    fn holdout_split_is_a_partition() {
        let (train, hold) = holdout_split(25, 3);
        assert_eq!(hold.len(), 5);
        assert_eq!(train.len(), 20);
        let mut all: Vec<usize> = train.iter().chain(&hold).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..25).collect::<Vec<_>>());
        let (t2, h2) = holdout_split(25, 3);
        assert_eq!((train.clone(), hold.clone()), (t2, h2));
        let (_, h3) = holdout_split(25, 4);
        assert_ne!(hold, h3, "split depends on the seed");
        let (t4, h4) = holdout_split(4, 1);
        assert_eq!(t4.len(), 4);
        assert!(h4.is_empty(), "tiny datasets keep everything for training");
    }

    #[test]
    fn run_training_rejects_mismatched_model() {
        let dataset = generate_two_moons(40, 0.1, 1).unwrap();
        let spec = MlpSpec::new(3, vec![4], 2).unwrap();
        assert!(run_training(&spec, &tiny_cfg(), &dataset).is_err());
    }
}
