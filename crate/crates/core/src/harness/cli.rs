//! Command-line interface.
//!
//! Six subcommands: `train` and `eval` (and `sweep`) are driven by a JSON
//! run config and write their artifacts into the run's output directory;
//! `assign`, `verify` and `hist` are flag-driven probes that print to stdout
//! unless given `--out`. Exit codes: 0 on success, 1 for configuration or
//! usage problems, 2 for failures while doing the work.
//!
//! A run directory always contains an echo of the config it was produced
//! from (`config.json`) next to the artifacts (`metrics.csv`, `radii.csv`,
//! `reports/*.json`, `checkpoints/*.ckpt`), so results stay attributable to
//! their exact settings. Repeating a command with the same config and seed
//! reproduces every artifact byte for byte.

use crate::analysis::{
    evaluate, radii_histogram, sweep_alpha, verify_lemma1, verify_theorem1, verify_theorem2,
};
use crate::error::{config_err, Result};
use crate::harness::config::{
    fixed_radii_csv, histogram_csv, parse_eps, radii_csv, sweep_csv, write_json,
    write_metrics_csv, write_text, RunConfig,
};
use crate::harness::dataset::{generate_blobs, generate_two_moons, load_idx, Dataset};
use crate::models::{load_checkpoint, save_checkpoint, MlpSpec, Parameters};
use crate::training::{BudgetMethod, TrainConfig};
use crate::vulnerability::{assign_batch, RadiusAssignment, ScoreMethod};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "wpb",
    version,
    about = "Adversarial training with vulnerability-weighted perturbation budgets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model as described by a JSON run config.
    Train {
        /// Path to the run config.
        #[arg(long)]
        config: PathBuf,
        /// Write artifacts here instead of the config's output_dir.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Evaluate a checkpoint against the attacks in a run config.
    Eval {
        /// Path to the run config (dataset + attacks).
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint to evaluate.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Write artifacts here instead of the config's output_dir.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compute per-example budgets for a dataset and emit them as CSV.
    Assign {
        #[command(flatten)]
        data: DataOpts,
        /// Checkpoint to score with; omitted = untrained (all-zero) model.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Budget rule: margin-based or spread-based.
        #[arg(long, value_enum, default_value_t = MethodArg::Mwpb)]
        method: MethodArg,
        /// Reweighting strength.
        #[arg(long, default_value_t = 0.58)]
        alpha: f64,
        /// Base budget; decimals and fractions like 8/255 both work.
        #[arg(long, default_value = "8/255")]
        base_eps: String,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check one of the first-order claims empirically; emits a JSON report.
    Verify {
        #[command(flatten)]
        data: DataOpts,
        /// Checkpoint to check; omitted = untrained (all-zero) model.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Which claim: the pair-ordering (1), budget-monotonicity (2) or
        /// first-order-step (lemma1) property.
        #[arg(long, value_enum)]
        theorem: TheoremArg,
        /// Comma-separated budgets; claim-specific defaults apply.
        #[arg(long)]
        eps: Option<String>,
        /// Minimum natural-loss gap for claim 1 pairs.
        #[arg(long, default_value_t = 0.5)]
        min_gap: f64,
        /// Write the JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train once per reweighting strength and compare robust accuracy.
    Sweep {
        /// Path to the run config (dataset + train template).
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated reweighting strengths, e.g. 0,0.29,0.58.
        #[arg(long)]
        alphas: String,
        /// Write artifacts here instead of the config's output_dir.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Histogram the per-example budgets a model assigns to a dataset.
    Hist {
        #[command(flatten)]
        data: DataOpts,
        /// Checkpoint to score with; omitted = untrained (all-zero) model.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Budget rule: margin-based or spread-based.
        #[arg(long, value_enum, default_value_t = MethodArg::Mwpb)]
        method: MethodArg,
        /// Reweighting strength.
        #[arg(long, default_value_t = 0.58)]
        alpha: f64,
        /// Base budget; decimals and fractions like 8/255 both work.
        #[arg(long, default_value = "8/255")]
        base_eps: String,
        /// Number of uniform bins.
        #[arg(long, default_value_t = 10)]
        bins: usize,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    /// Margin-weighted budgets.
    Mwpb,
    /// Modified-standard-deviation-weighted budgets.
    Sdwpb,
}

impl MethodArg {
    fn score_method(self) -> ScoreMethod {
        match self {
            MethodArg::Mwpb => ScoreMethod::Margin,
            MethodArg::Sdwpb => ScoreMethod::ModifiedStd,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TheoremArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    #[value(name = "lemma1")]
    Lemma1,
}

#[derive(Clone, Copy, ValueEnum)]
enum DataKind {
    TwoMoons,
    Blobs,
    Idx,
}

/// Dataset flags shared by the flag-driven subcommands.
#[derive(Args)]
struct DataOpts {
    /// Dataset kind.
    #[arg(long, value_enum, default_value_t = DataKind::TwoMoons)]
    data: DataKind,
    /// Example count for synthetic datasets.
    #[arg(long, default_value_t = 500)]
    n: usize,
    /// Gaussian noise scale for two-moons.
    #[arg(long, default_value_t = 0.1)]
    noise_std: f64,
    /// Class count for blobs.
    #[arg(long, default_value_t = 3)]
    classes: usize,
    /// Cluster spread for blobs.
    #[arg(long, default_value_t = 0.15)]
    spread: f64,
    /// IDX image file (with --data idx).
    #[arg(long)]
    images: Option<PathBuf>,
    /// IDX label file (with --data idx).
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Seed for synthetic dataset generation.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl DataOpts {
    fn load(&self) -> Result<Dataset> {
        match self.data {
            DataKind::TwoMoons => generate_two_moons(self.n, self.noise_std, self.seed),
            DataKind::Blobs => generate_blobs(self.n, self.classes, self.spread, self.seed),
            DataKind::Idx => {
                let (images, labels) = match (&self.images, &self.labels) {
                    (Some(i), Some(l)) => (i, l),
                    _ => {
                        return Err(config_err!(
                            "--data idx needs both --images and --labels"
                        ))
                    }
                };
                load_idx(images, labels)
            }
        }
    }
}

/// Parses argv and runs one subcommand, translating errors to exit codes.
pub fn cli_main(args: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            // --help and --version arrive here too; clap routes them to
            // stdout and they exit cleanly.
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train { config, output } => cmd_train(&config, output),
        Command::Eval {
            config,
            checkpoint,
            output,
        } => cmd_eval(&config, &checkpoint, output),
        Command::Assign {
            data,
            checkpoint,
            method,
            alpha,
            base_eps,
            out,
        } => cmd_assign(&data, checkpoint.as_deref(), method, alpha, &base_eps, out),
        Command::Verify {
            data,
            checkpoint,
            theorem,
            eps,
            min_gap,
            out,
        } => cmd_verify(&data, checkpoint.as_deref(), theorem, eps.as_deref(), min_gap, out),
        Command::Sweep {
            config,
            alphas,
            output,
        } => cmd_sweep(&config, &alphas, output),
        Command::Hist {
            data,
            checkpoint,
            method,
            alpha,
            base_eps,
            bins,
            out,
        } => cmd_hist(&data, checkpoint.as_deref(), method, alpha, &base_eps, bins, out),
    }
}

/// Loads the model for the flag-driven subcommands: a checkpoint when given
/// (its shape must fit the dataset), otherwise an untrained model of the
/// default shape.
fn resolve_model(checkpoint: Option<&Path>, dataset: &Dataset) -> Result<Parameters> {
    match checkpoint {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            if ck.spec.input_dim != dataset.dim() || ck.spec.num_classes != dataset.num_classes()
            {
                return Err(config_err!(
                    "checkpoint expects {}-dim inputs over {} classes but the dataset \
                     has {} and {}",
                    ck.spec.input_dim,
                    ck.spec.num_classes,
                    dataset.dim(),
                    dataset.num_classes()
                ));
            }
            Ok(ck.params)
        }
        None => {
            let spec = MlpSpec::new(dataset.dim(), vec![64, 64], dataset.num_classes())
                .map_err(|e| config_err!("{e}"))?;
            Ok(Parameters::zeros(&spec))
        }
    }
}

fn parse_positive_eps(text: &str) -> Result<f64> {
    let eps = parse_eps(text)?;
    if eps <= 0.0 {
        return Err(config_err!("budget must be positive, got {text:?}"));
    }
    Ok(eps)
}

fn parse_eps_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|part| parse_positive_eps(part.trim()))
        .collect()
}

/// Echoes the config file into the run directory so the artifacts stay
/// attributable to their exact settings.
fn echo_config(config_path: &Path, out_dir: &Path) -> Result<()> {
    let raw = fs::read(config_path)?;
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("config.json"), raw)?;
    Ok(())
}

fn final_assignment_csv(
    params: &Parameters,
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<String> {
    let method = match cfg.method {
        BudgetMethod::Fixed => return Ok(fixed_radii_csv(dataset.len(), cfg.base_eps)),
        BudgetMethod::Mwpb => ScoreMethod::Margin,
        BudgetMethod::Sdwpb => ScoreMethod::ModifiedStd,
    };
    let assignment = assign_batch(
        params,
        dataset.features(),
        dataset.labels(),
        method,
        cfg.alpha,
        cfg.base_eps,
    )?;
    Ok(radii_csv(&assignment))
}

fn cmd_train(config_path: &Path, output: Option<PathBuf>) -> Result<()> {
    let cfg = RunConfig::from_path(config_path)?;
    let run = cfg.prepare()?;
    let train_cfg = run
        .train
        .ok_or_else(|| config_err!("train needs a \"train\" section in the config"))?;
    let outcome = crate::training::run_training(&run.spec, &train_cfg, &run.dataset)?;

    let out_dir = output.unwrap_or(run.output_dir);
    echo_config(config_path, &out_dir)?;
    write_metrics_csv(&out_dir.join("metrics.csv"), &outcome.metrics)?;
    let radii = final_assignment_csv(&outcome.final_checkpoint.params, &run.dataset, &train_cfg)?;
    write_text(&out_dir.join("radii.csv"), &radii)?;
    let ckpt_dir = out_dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir)?;
    save_checkpoint(&outcome.final_checkpoint, &ckpt_dir.join("final.ckpt"))?;
    save_checkpoint(&outcome.best_checkpoint, &ckpt_dir.join("best.ckpt"))?;

    let last = outcome.metrics.last().expect("validated: at least one epoch");
    println!(
        "trained {} epochs ({} warm-up) on {} with method {}",
        train_cfg.epochs,
        train_cfg.warmup_epochs,
        run.dataset.name(),
        train_cfg.method.name()
    );
    println!(
        "final epoch: natural accuracy {:.4}, training-attack accuracy {:.4}",
        last.nat_acc, last.rob_acc
    );
    println!(
        "best held-out robust accuracy {:.4} at epoch {}",
        outcome.best_rob_acc, outcome.best_epoch
    );
    println!("wrote {}", out_dir.display());
    Ok(())
}

fn cmd_eval(config_path: &Path, checkpoint: &Path, output: Option<PathBuf>) -> Result<()> {
    let cfg = RunConfig::from_path(config_path)?;
    let run = cfg.prepare()?;
    if run.attacks.is_empty() {
        return Err(config_err!("eval needs a non-empty \"attacks\" list"));
    }
    let params = resolve_model(Some(checkpoint), &run.dataset)?;
    let report = evaluate(&params, &run.dataset, &run.attacks)?;

    let out_dir = output.unwrap_or(run.output_dir);
    echo_config(config_path, &out_dir)?;
    write_json(&out_dir.join("reports").join("eval.json"), &report)?;

    println!(
        "natural accuracy {:.4} on {} examples",
        report.natural_accuracy, report.examples
    );
    for attack in &report.attacks {
        println!(
            "{}: robust accuracy {:.4}, mean attack loss {:.4}",
            attack.attack, attack.robust_accuracy, attack.mean_adversarial_loss
        );
    }
    println!("wrote {}", out_dir.display());
    Ok(())
}

fn flag_assignment(
    data: &DataOpts,
    checkpoint: Option<&Path>,
    method: MethodArg,
    alpha: f64,
    base_eps: &str,
) -> Result<RadiusAssignment> {
    let dataset = data.load()?;
    let params = resolve_model(checkpoint, &dataset)?;
    let base = parse_positive_eps(base_eps)?;
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(config_err!("--alpha must be finite and >= 0, got {alpha}"));
    }
    assign_batch(
        &params,
        dataset.features(),
        dataset.labels(),
        method.score_method(),
        alpha,
        base,
    )
}

fn emit(out: Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            write_text(&path, text)?;
            println!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_assign(
    data: &DataOpts,
    checkpoint: Option<&Path>,
    method: MethodArg,
    alpha: f64,
    base_eps: &str,
    out: Option<PathBuf>,
) -> Result<()> {
    let assignment = flag_assignment(data, checkpoint, method, alpha, base_eps)?;
    emit(out, &radii_csv(&assignment))
}

fn cmd_verify(
    data: &DataOpts,
    checkpoint: Option<&Path>,
    theorem: TheoremArg,
    eps: Option<&str>,
    min_gap: f64,
    out: Option<PathBuf>,
) -> Result<()> {
    let dataset = data.load()?;
    let params = resolve_model(checkpoint, &dataset)?;
    let report = match theorem {
        TheoremArg::One => {
            let eps = parse_positive_eps(eps.unwrap_or("8/255"))?;
            verify_theorem1(&params, &dataset, eps, min_gap)?
        }
        TheoremArg::Two => {
            let list = parse_eps_list(eps.unwrap_or("2/255,4/255,8/255,12/255"))?;
            verify_theorem2(&params, &dataset, &list)?
        }
        TheoremArg::Lemma1 => {
            let eps = parse_positive_eps(eps.unwrap_or("1e-4"))?;
            verify_lemma1(&params, &dataset, eps)?
        }
    };
    match out {
        Some(path) => {
            write_json(&path, &report)?;
            println!("wrote {}", path.display());
        }
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}

fn cmd_sweep(config_path: &Path, alphas: &str, output: Option<PathBuf>) -> Result<()> {
    let cfg = RunConfig::from_path(config_path)?;
    let run = cfg.prepare()?;
    let train_cfg = run
        .train
        .ok_or_else(|| config_err!("sweep needs a \"train\" section in the config"))?;
    let alphas: Vec<f64> = alphas
        .split(',')
        .map(|part| {
            part.trim()
                .parse::<f64>()
                .map_err(|_| config_err!("bad alpha {part:?}"))
        })
        .collect::<Result<_>>()?;
    let rows = sweep_alpha(&run.spec, &train_cfg, &alphas, &run.dataset)?;

    let out_dir = output.unwrap_or(run.output_dir);
    echo_config(config_path, &out_dir)?;
    write_text(&out_dir.join("sweep.csv"), &sweep_csv(&rows))?;
    for row in &rows {
        println!(
            "alpha {}: natural accuracy {:.4}, robust accuracy {:.4}",
            row.alpha, row.natural_accuracy, row.robust_accuracy
        );
    }
    println!("wrote {}", out_dir.display());
    Ok(())
}

fn cmd_hist(
    data: &DataOpts,
    checkpoint: Option<&Path>,
    method: MethodArg,
    alpha: f64,
    base_eps: &str,
    bins: usize,
    out: Option<PathBuf>,
) -> Result<()> {
    let assignment = flag_assignment(data, checkpoint, method, alpha, base_eps)?;
    let hist = radii_histogram(std::slice::from_ref(&assignment), bins)
        .map_err(|e| config_err!("{e}"))?;
    emit(out, &histogram_csv(&hist))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn run_cli(args: &[&str]) -> i32 {
        let argv: Vec<String> = std::iter::once("wpb")
            .chain(args.iter().copied())
            .map(String::from)
            .collect();
        cli_main(&argv)
    }

    #[test]
    fn usage_errors_exit_with_one() {
        assert_eq!(run_cli(&[]), 1, "missing subcommand");
        assert_eq!(run_cli(&["explode"]), 1, "unknown subcommand");
        assert_eq!(run_cli(&["train"]), 1, "missing required flag");
        assert_eq!(run_cli(&["assign", "--method", "fixed"]), 1, "bad method");
        assert_eq!(run_cli(&["hist", "--frobnicate"]), 1, "unknown flag");
        assert_eq!(run_cli(&["--help"]), 0, "help is a success");
        assert_eq!(run_cli(&["--version"]), 0);
    }

    #[test]
    fn assign_on_untrained_model_gives_the_base_budget_exactly() {
        let dir = tempdir().unwrap();
        let out = dir.path().join("radii.csv");
        let code = run_cli(&[
            "assign",
            "--method",
            "sdwpb",
            "--alpha",
            "0.62",
            "--n",
            "30",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        let text = fs::read_to_string(&out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "example_id,score,epsilon_i,kappa_i");
        let mut rows = 0;
        for line in lines {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields.len(), 4);
            // Uniform probabilities give score 0, hence exactly the base.
            assert_eq!(fields[1].parse::<f64>().unwrap(), 0.0);
            assert_eq!(fields[2].parse::<f64>().unwrap(), 8.0 / 255.0);
            assert_eq!(fields[3].parse::<f64>().unwrap(), 8.0 / 255.0 / 4.0);
            rows += 1;
        }
        assert_eq!(rows, 30);
    }

    #[test]
    fn verify_theorem2_emits_a_json_report() {
        let dir = tempdir().unwrap();
        let out = dir.path().join("theorem2.json");
        let code = run_cli(&[
            "verify",
            "--theorem",
            "2",
            "--eps",
            "2/255,4/255,8/255,12/255",
            "--n",
            "40",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        let report: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
        assert_eq!(report["theorem"], "theorem2");
        assert!(report["fraction"].as_f64().unwrap() >= 0.0);
        assert!(report["stats"].is_object());

        assert_eq!(
            run_cli(&["verify", "--theorem", "3"]),
            1,
            "unknown theorem is a usage error"
        );
        assert_eq!(
            run_cli(&["verify", "--theorem", "2", "--eps", "8/255,4/255", "--n", "20"]),
            2,
            "non-increasing budget list fails at run time"
        );
    }

    #[test]
    fn hist_reports_one_spike_for_an_untrained_model() {
        let dir = tempdir().unwrap();
        let out = dir.path().join("hist.csv");
        let code = run_cli(&[
            "hist", "--n", "25", "--bins", "4", "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        let text = fs::read_to_string(&out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "bin_lo,bin_hi,count");
        let counts: Vec<usize> = lines
            .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
            .collect();
        assert_eq!(counts.len(), 4);
        assert_eq!(counts.iter().sum::<usize>(), 25);
        assert_eq!(counts[0], 25, "every budget equals the base");
    }

    fn tiny_run_config(out_dir: &Path) -> String {
        format!(
            r#"{{
  "seed": 11,
  "output_dir": {:?},
  "dataset": {{"kind": "two-moons", "n": 60, "noise_std": 0.1}},
  "model": {{"hidden": [8]}},
  "train": {{
    "epochs": 2, "warmup_epochs": 1, "base_eps": "8/255",
    "method": "mwpb", "alpha": 0.58, "pgd_steps": 2,
    "batch_size": 32, "lr_milestones": []
  }},
  "attacks": [
    {{"family": "fgsm", "eps": "8/255"}},
    {{"family": "pgd", "eps": "8/255", "steps": 3}}
  ]
}}
"#,
            out_dir.to_str().unwrap()
        )
    }

    #[test]
    fn train_and_eval_write_reproducible_artifacts() {
        let dir = tempdir().unwrap();
        let out_a = dir.path().join("run-a");
        let config_path = dir.path().join("run.json");
        fs::write(&config_path, tiny_run_config(&out_a)).unwrap();

        let code = run_cli(&["train", "--config", config_path.to_str().unwrap()]);
        assert_eq!(code, 0);
        for artifact in [
            "config.json",
            "metrics.csv",
            "radii.csv",
            "checkpoints/final.ckpt",
            "checkpoints/best.ckpt",
        ] {
            assert!(out_a.join(artifact).exists(), "missing {artifact}");
        }
        let echoed = fs::read(out_a.join("config.json")).unwrap();
        assert_eq!(echoed, fs::read(&config_path).unwrap(), "config echo is verbatim");
        let metrics = fs::read_to_string(out_a.join("metrics.csv")).unwrap();
        let mut lines = metrics.lines();
        assert_eq!(
            lines.next().unwrap(),
            "epoch,lr,nat_loss,adv_loss,nat_acc,rob_acc,eps_min,eps_mean,eps_max"
        );
        assert_eq!(lines.count(), 2, "one row per epoch");

        // Same config into a second directory: byte-identical artifacts.
        let out_b = dir.path().join("run-b");
        let code = run_cli(&[
            "train",
            "--config",
            config_path.to_str().unwrap(),
            "--output",
            out_b.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        for artifact in ["metrics.csv", "radii.csv", "checkpoints/final.ckpt"] {
            assert_eq!(
                fs::read(out_a.join(artifact)).unwrap(),
                fs::read(out_b.join(artifact)).unwrap(),
                "{artifact} must be reproducible"
            );
        }

        // Evaluate the trained checkpoint twice; reports must match bytewise.
        let ckpt = out_a.join("checkpoints/final.ckpt");
        let eval_a = dir.path().join("eval-a");
        let eval_b = dir.path().join("eval-b");
        for out in [&eval_a, &eval_b] {
            let code = run_cli(&[
                "eval",
                "--config",
                config_path.to_str().unwrap(),
                "--checkpoint",
                ckpt.to_str().unwrap(),
                "--output",
                out.to_str().unwrap(),
            ]);
            assert_eq!(code, 0);
        }
        let report_a = fs::read(eval_a.join("reports/eval.json")).unwrap();
        let report_b = fs::read(eval_b.join("reports/eval.json")).unwrap();
        assert!(!report_a.is_empty());
        assert_eq!(report_a, report_b, "eval reports must be reproducible");
    }

    #[test]
    fn invalid_configs_fail_before_any_output_appears() {
        let dir = tempdir().unwrap();
        let out = dir.path().join("never");
        let config_path = dir.path().join("bad.json");

        // Unknown key.
        let bad = tiny_run_config(&out).replace("\"seed\": 11", "\"seed\": 11, \"spice\": 1");
        fs::write(&config_path, bad).unwrap();
        assert_eq!(run_cli(&["train", "--config", config_path.to_str().unwrap()]), 1);
        assert!(!out.exists(), "no partial outputs on a bad config");

        // Value the training module rejects.
        let bad = tiny_run_config(&out).replace("\"epochs\": 2", "\"epochs\": 0");
        fs::write(&config_path, bad).unwrap();
        assert_eq!(run_cli(&["train", "--config", config_path.to_str().unwrap()]), 1);
        assert!(!out.exists());

        // Config without a train section cannot train.
        let bad = r#"{"seed": 1, "output_dir": "never2",
                      "dataset": {"kind": "two-moons", "n": 20, "noise_std": 0.1}}"#;
        fs::write(&config_path, bad).unwrap();
        assert_eq!(run_cli(&["train", "--config", config_path.to_str().unwrap()]), 1);

        // Missing config file.
        assert_eq!(run_cli(&["train", "--config", "/no/such/file.json"]), 1);
    }

    #[test]
    fn sweep_writes_one_row_per_alpha() {
        let dir = tempdir().unwrap();
        let out = dir.path().join("sweep-out");
        let config_path = dir.path().join("run.json");
        fs::write(&config_path, tiny_run_config(&out)).unwrap();
        let code = run_cli(&[
            "sweep",
            "--config",
            config_path.to_str().unwrap(),
            "--alphas",
            "0,0.58",
        ]);
        assert_eq!(code, 0);
        let text = fs::read_to_string(out.join("sweep.csv")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "alpha,nat_acc,rob_acc");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0,"));
        assert!(lines[2].starts_with("0.58,"));

        assert_eq!(
            run_cli(&[
                "sweep",
                "--config",
                config_path.to_str().unwrap(),
                "--alphas",
                "0,banana"
            ]),
            1,
            "unparseable alpha is a usage error"
        );
    }
}
