//! Run configuration files and the CSV/JSON writers behind the CLI.
//!
//! A run config is a single JSON document. Budgets may be written either as
//! decimals or as exact fractions like `"8/255"`; fractions are divided in
//! one rounding step, so the stored value is the closest double to the true
//! ratio rather than something that drifted through a decimal literal.
//! Unknown keys anywhere in the document are rejected, and every section is
//! validated before any output is produced, so an invalid config never
//! leaves a partial run directory behind.
//!
//! All numeric output goes through the shortest-roundtrip float formatter,
//! which makes repeated runs byte-identical and lets readers recover the
//! exact doubles.

use crate::attacks::{AttackConfig, AttackLoss, Epsilons, SpsaParams};
use crate::error::{config_err, Error, Result};
use crate::harness::dataset::{generate_blobs, generate_two_moons, load_idx, Dataset};
use crate::models::MlpSpec;
use crate::prng::{derive_u64, stream};
use crate::training::{BudgetMethod, Objective, TrainConfig};
use crate::vulnerability::RadiusAssignment;
use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

/// Parses a budget given either as a decimal (`"0.0313"`) or as an exact
/// fraction (`"8/255"`). Returns the closest double to the written value.
pub fn parse_eps(text: &str) -> Result<f64> {
    let text = text.trim();
    let value = match text.split_once('/') {
        Some((num, den)) => {
            let num: f64 = num
                .trim()
                .parse()
                .map_err(|_| config_err!("bad fraction numerator in {text:?}"))?;
            let den: f64 = den
                .trim()
                .parse()
                .map_err(|_| config_err!("bad fraction denominator in {text:?}"))?;
            if den == 0.0 {
                return Err(config_err!("zero denominator in {text:?}"));
            }
            num / den
        }
        None => text
            .parse()
            .map_err(|_| config_err!("cannot parse budget {text:?}"))?,
    };
    if !value.is_finite() || value < 0.0 {
        return Err(config_err!("budget {text:?} must be finite and >= 0"));
    }
    Ok(value)
}

/// A nonnegative budget read from config, accepting numbers or fraction
/// strings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsValue(pub f64);

impl EpsValue {
    pub fn value(self) -> f64 {
        self.0
    }
}

impl<'de> Deserialize<'de> for EpsValue {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct EpsVisitor;
        impl Visitor<'_> for EpsVisitor {
            type Value = EpsValue;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a nonnegative number or a fraction string like \"8/255\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<EpsValue, E> {
                if !v.is_finite() || v < 0.0 {
                    return Err(E::custom(format!("budget {v} must be finite and >= 0")));
                }
                Ok(EpsValue(v))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<EpsValue, E> {
                Ok(EpsValue(v as f64))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<EpsValue, E> {
                self.visit_f64(v as f64)
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<EpsValue, E> {
                parse_eps(v).map(EpsValue).map_err(E::custom)
            }
        }
        deserializer.deserialize_any(EpsVisitor)
    }
}

/// Which dataset a run operates on.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetConfig {
    TwoMoons { n: usize, noise_std: f64 },
    Blobs { n: usize, classes: usize, spread: f64 },
    Idx { images: PathBuf, labels: PathBuf },
}

impl DatasetConfig {
    /// Materializes the dataset; synthetic kinds draw from streams keyed by
    /// the run seed.
    pub fn load(&self, seed: u64) -> Result<Dataset> {
        match self {
            DatasetConfig::TwoMoons { n, noise_std } => generate_two_moons(*n, *noise_std, seed),
            DatasetConfig::Blobs { n, classes, spread } => {
                generate_blobs(*n, *classes, *spread, seed)
            }
            DatasetConfig::Idx { images, labels } => load_idx(images, labels),
        }
    }
}

/// Model shape; input and output widths come from the dataset.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden layer widths; defaults to two layers of 64.
    pub hidden: Option<Vec<usize>>,
}

impl ModelConfig {
    pub fn spec_for(&self, dataset: &Dataset) -> Result<MlpSpec> {
        let hidden = self.hidden.clone().unwrap_or_else(|| vec![64, 64]);
        MlpSpec::new(dataset.dim(), hidden, dataset.num_classes())
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum MethodName {
    Fixed,
    Mwpb,
    Sdwpb,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
enum ObjectiveSection {
    At,
    TradesStyle { beta: f64 },
}

/// Training options; every field falls back to the library default.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    epochs: Option<usize>,
    warmup_epochs: Option<usize>,
    base_eps: Option<EpsValue>,
    method: Option<MethodName>,
    alpha: Option<f64>,
    objective: Option<ObjectiveSection>,
    pgd_steps: Option<usize>,
    lr0: Option<f64>,
    lr_milestones: Option<Vec<(usize, f64)>>,
    momentum: Option<f64>,
    weight_decay: Option<f64>,
    batch_size: Option<usize>,
}

impl TrainSection {
    /// Folds the section over the defaults into a validated [`TrainConfig`].
    pub fn to_train_config(&self, seed: u64) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            epochs: self.epochs.unwrap_or(d.epochs),
            warmup_epochs: self.warmup_epochs.unwrap_or(d.warmup_epochs),
            base_eps: self.base_eps.map_or(d.base_eps, EpsValue::value),
            method: match self.method {
                Some(MethodName::Fixed) => BudgetMethod::Fixed,
                Some(MethodName::Mwpb) => BudgetMethod::Mwpb,
                Some(MethodName::Sdwpb) => BudgetMethod::Sdwpb,
                None => d.method,
            },
            alpha: self.alpha.unwrap_or(d.alpha),
            objective: match self.objective {
                Some(ObjectiveSection::At) => Objective::At,
                Some(ObjectiveSection::TradesStyle { beta }) => Objective::TradesStyle { beta },
                None => d.objective,
            },
            pgd_steps: self.pgd_steps.unwrap_or(d.pgd_steps),
            lr0: self.lr0.unwrap_or(d.lr0),
            lr_milestones: self.lr_milestones.clone().unwrap_or(d.lr_milestones),
            momentum: self.momentum.unwrap_or(d.momentum),
            weight_decay: self.weight_decay.unwrap_or(d.weight_decay),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            seed,
        };
        cfg.validate().map_err(|e| config_err!("{e}"))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum FamilyName {
    Fgsm,
    Pgd,
    CwPgd,
    Spsa,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum LossName {
    CrossEntropy,
    CwMargin,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpsaSection {
    iterations: Option<usize>,
    est_perturbation: Option<f64>,
    learning_rate: Option<f64>,
    est_samples: Option<usize>,
}

/// One attack to evaluate against.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    family: FamilyName,
    eps: EpsValue,
    steps: Option<usize>,
    step_size: Option<EpsValue>,
    init_noise_std: Option<f64>,
    loss: Option<LossName>,
    spsa: Option<SpsaSection>,
}

impl AttackSection {
    /// Builds the attack config; single-step and gradient-free families
    /// reject options that would silently do nothing.
    pub fn to_attack_config(&self, seed: u64) -> Result<AttackConfig> {
        let eps = self.eps.value();
        let mut cfg = match self.family {
            FamilyName::Fgsm => {
                if self.steps.is_some() || self.step_size.is_some() || self.spsa.is_some() {
                    return Err(config_err!(
                        "fgsm is single-step: steps, step_size and spsa do not apply"
                    ));
                }
                AttackConfig::fgsm(eps)
            }
            FamilyName::Pgd => {
                if self.spsa.is_some() {
                    return Err(config_err!("spsa options only apply to the spsa family"));
                }
                AttackConfig::pgd(eps, self.steps.unwrap_or(20))
            }
            FamilyName::CwPgd => {
                if self.spsa.is_some() {
                    return Err(config_err!("spsa options only apply to the spsa family"));
                }
                if matches!(self.loss, Some(LossName::CrossEntropy)) {
                    return Err(config_err!("cw-pgd always uses the cw-margin loss"));
                }
                let mut cfg = AttackConfig::cw20(eps);
                cfg.steps = self.steps.unwrap_or(20);
                cfg.step_sizes = None;
                cfg
            }
            FamilyName::Spsa => {
                if self.steps.is_some() || self.step_size.is_some() {
                    return Err(config_err!(
                        "spsa takes iterations/learning_rate in its own section"
                    ));
                }
                let mut cfg = AttackConfig::spsa(eps);
                if let Some(s) = &self.spsa {
                    let d = SpsaParams::default();
                    cfg.spsa = SpsaParams {
                        iterations: s.iterations.unwrap_or(d.iterations),
                        est_perturbation: s.est_perturbation.unwrap_or(d.est_perturbation),
                        learning_rate: s.learning_rate.unwrap_or(d.learning_rate),
                        est_samples: s.est_samples.unwrap_or(d.est_samples),
                    };
                }
                cfg
            }
        };
        if let Some(step) = self.step_size {
            cfg.step_sizes = Some(Epsilons::Shared(step.value()));
        }
        if let Some(noise) = self.init_noise_std {
            cfg.init_noise_std = noise;
        }
        if let Some(loss) = self.loss {
            cfg.loss = match loss {
                LossName::CrossEntropy => AttackLoss::CrossEntropy,
                LossName::CwMargin => AttackLoss::CwMargin,
            };
        }
        Ok(cfg.with_seed(seed))
    }
}

/// The top-level run configuration document.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: Option<TrainSection>,
    #[serde(default)]
    pub attacks: Vec<AttackSection>,
}

/// A run config parsed, loaded and validated end to end, ready to execute.
#[derive(Debug)]
pub struct PreparedRun {
    pub dataset: Dataset,
    pub spec: MlpSpec,
    pub train: Option<TrainConfig>,
    pub attacks: Vec<AttackConfig>,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl RunConfig {
    /// Reads and parses a config file; unknown keys or malformed budgets are
    /// configuration errors.
    pub fn from_path(path: &Path) -> Result<RunConfig> {
        let bytes = fs::read(path)
            .map_err(|e| config_err!("cannot read config {}: {e}", path.display()))?;
        serde_json::from_slice(&bytes).map_err(|e| config_err!("{}: {e}", path.display()))
    }

    /// Loads the dataset and validates every section against it. Nothing is
    /// written anywhere: callers create the output directory only after this
    /// succeeds.
    pub fn prepare(&self) -> Result<PreparedRun> {
        let dataset = self.dataset.load(self.seed)?;
        let spec = self
            .model
            .spec_for(&dataset)
            .map_err(|e| config_err!("{e}"))?;
        let train = self
            .train
            .as_ref()
            .map(|t| t.to_train_config(self.seed))
            .transpose()?;
        let mut attacks = Vec::with_capacity(self.attacks.len());
        for (i, section) in self.attacks.iter().enumerate() {
            let cfg =
                section.to_attack_config(derive_u64(self.seed, &[stream::CLI_ATTACK, i as u64]))?;
            cfg.validate(dataset.len()).map_err(|e| config_err!("{e}"))?;
            attacks.push(cfg);
        }
        Ok(PreparedRun {
            dataset,
            spec,
            train,
            attacks,
            output_dir: self.output_dir.clone(),
            seed: self.seed,
        })
    }
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    Ok(())
}

/// Writes any serializable report as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    create_parent(path)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Writes per-epoch training metrics.
///
/// Columns: epoch, lr, nat_loss, adv_loss, nat_acc, rob_acc, eps_min,
/// eps_mean, eps_max.
pub fn write_metrics_csv(path: &Path, metrics: &[crate::training::EpochMetrics]) -> Result<()> {
    create_parent(path)?;
    let mut out = Vec::new();
    writeln!(
        out,
        "epoch,lr,nat_loss,adv_loss,nat_acc,rob_acc,eps_min,eps_mean,eps_max"
    )?;
    for m in metrics {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            m.epoch,
            m.lr,
            m.nat_loss,
            m.adv_loss,
            m.nat_acc,
            m.rob_acc,
            m.eps_min,
            m.eps_mean,
            m.eps_max
        )?;
    }
    fs::write(path, out)?;
    Ok(())
}

const RADII_HEADER: &str = "example_id,score,epsilon_i,kappa_i";

/// Renders a budget assignment as CSV text.
///
/// Columns: example_id, score, epsilon_i, kappa_i.
pub fn radii_csv(assignment: &RadiusAssignment) -> String {
    let mut out = String::from(RADII_HEADER);
    out.push('\n');
    for row in &assignment.rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.example_id, row.score.value, row.epsilon, row.kappa
        ));
    }
    out
}

/// CSV for a run that used one fixed budget everywhere (no scores).
pub fn fixed_radii_csv(n: usize, eps: f64) -> String {
    let mut out = String::from(RADII_HEADER);
    out.push('\n');
    for i in 0..n {
        out.push_str(&format!("{i},0,{eps},{}\n", eps / 4.0));
    }
    out
}

/// Renders a budget histogram as CSV text.
///
/// Columns: bin_lo, bin_hi, count.
pub fn histogram_csv(hist: &crate::analysis::RadiiHistogram) -> String {
    let mut out = String::from("bin_lo,bin_hi,count\n");
    for (i, count) in hist.counts.iter().enumerate() {
        out.push_str(&format!("{},{},{count}\n", hist.edges[i], hist.edges[i + 1]));
    }
    out
}

/// Renders reweighting-sweep rows as CSV text.
///
/// Columns: alpha, nat_acc, rob_acc.
pub fn sweep_csv(rows: &[crate::analysis::SweepRow]) -> String {
    let mut out = String::from("alpha,nat_acc,rob_acc\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{}\n",
            row.alpha, row.natural_accuracy, row.robust_accuracy
        ));
    }
    out
}

/// Writes text to a file, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    create_parent(path)?;
    fs::write(path, text)?;
    Ok(())
}

/// True when the error should exit with the configuration/usage code.
pub fn is_config_error(err: &Error) -> bool {
    err.exit_code() == 1
}
