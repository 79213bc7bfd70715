//! `cowboy` CLI: train networks, mount attacks, detect and clean
//! adversarial inputs, and reproduce the experiment tables.
//!
//! Exit codes: 0 success, 2 config error, 3 numeric failure, 4 I/O error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cowboy::attacks::{run_attack, AttackKind};
use cowboy::checkpoint::Checkpoint;
use cowboy::defense::{clean_batch, cleaned_tensor};
use cowboy::nets::{Head, Network};
use cowboy_harness::config::{DataSource, ExperimentConfig};
use cowboy_harness::error::{Context, HarnessError};
use cowboy_harness::experiments::{
    build_stack, load_sweep_checkpoints, run_detection, run_gan_quality_sweep_with,
    run_table1_with, run_table2_with, run_violin_with, save_classifier, save_gan,
    write_attack_records, write_provenance, Stack,
};

#[derive(Parser)]
#[command(
    name = "cowboy",
    about = "GAN-based detection and cleaning of adversarial examples",
    version
)]
struct Cli {
    /// Flat key = value config file; CLI flags override it.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Master seed; every component seed derives from it.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Output directory for checkpoints, CSVs, and provenance.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Builtin dataset name (`two-gaussians`) or a path to an IDX image
    /// file whose filename contains `images` (labels are found by
    /// substituting `labels`).
    #[arg(long, global = true, value_name = "NAME|PATH")]
    dataset: Option<String>,

    /// Checkpoint file, or a directory of checkpoints from a training run.
    #[arg(long, global = true, value_name = "PATH")]
    checkpoint: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the classifier and save its checkpoint.
    TrainClassifier,
    /// Train the GAN and save its checkpoints at the configured cadence.
    TrainGan,
    /// Generate adversarial samples for one attack and export the records.
    Attack {
        /// fgsm, bim, mim, pgdm, or vam.
        #[arg(long, default_value = "fgsm")]
        attack: String,
    },
    /// Calibrate a detection threshold and flag test samples.
    Detect,
    /// Attack the test split, clean it, and report the accuracy trio.
    Clean {
        #[arg(long, default_value = "fgsm")]
        attack: String,
    },
    /// Accuracy table: original / adversarial / cleaned per attack.
    Table1,
    /// Two-term ablation: generator-only vs generator+discriminator.
    Table2,
    /// Per-sample discriminator score export for violin plots.
    Violin,
    /// Detection and cleaning quality across saved GAN checkpoints.
    GanSweep,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(dataset) = &cli.dataset {
        if dataset == "two-gaussians" {
            if !matches!(cfg.data, DataSource::TwoGaussians { .. }) {
                cfg.data = DataSource::TwoGaussians { n_per_class: 500 };
            }
        } else {
            let images = PathBuf::from(dataset);
            let name = images
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            if !name.contains("images") {
                return Err(HarnessError::Config(format!(
                    "--dataset {dataset}: expected `two-gaussians` or an IDX image path \
                     containing `images` (set data.images_path/data.labels_path in the \
                     config for other layouts)"
                )));
            }
            let labels = images.with_file_name(name.replace("images", "labels"));
            let (limit, downsample_to) = match cfg.data {
                DataSource::Idx {
                    limit,
                    downsample_to,
                    ..
                } => (limit, downsample_to),
                _ => (1000, 8),
            };
            cfg.data = DataSource::Idx {
                images,
                labels,
                limit,
                downsample_to,
            };
        }
    }
    Ok(cfg)
}

/// Loads a network by role from `--checkpoint` (a file or a directory
/// holding `classifier.ckpt` / `gan-final.ckpt`).
fn load_network(checkpoint: &Path, role: &str) -> Result<Network, HarnessError> {
    let file = if checkpoint.is_dir() {
        match role {
            "classifier" => checkpoint.join("classifier.ckpt"),
            _ => checkpoint.join("gan-final.ckpt"),
        }
    } else {
        checkpoint.to_path_buf()
    };
    let ck = Checkpoint::load(&file).run_context("loading checkpoint")?;
    let params = ck.params_with_prefix(role);
    if params.is_empty() {
        return Err(HarnessError::Config(format!(
            "{} holds no {role}.* parameters",
            file.display()
        )));
    }
    let head = match role {
        "classifier" => Head::Softmax,
        "generator" => Head::Tanh,
        "discriminator" => Head::Sigmoid,
        other => return Err(HarnessError::Config(format!("unknown role {other}"))),
    };
    Network::from_named_params(&params, head).run_context("rebuilding network")
}

/// Builds the stack, reusing checkpointed networks when `--checkpoint`
/// points at a training directory with the right files.
fn stack_for(cli: &Cli, cfg: &ExperimentConfig) -> Result<Stack, HarnessError> {
    let mut stack = build_stack(cfg)?;
    if let Some(dir) = &cli.checkpoint {
        if let Ok(classifier) = load_network(dir, "classifier") {
            stack.classifier = classifier;
        }
        if let Ok(generator) = load_network(dir, "generator") {
            stack.gan.generator = generator;
            stack.gan.discriminator = load_network(dir, "discriminator")?;
        }
    }
    Ok(stack)
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let cfg = resolve_config(&cli)?;
    match &cli.command {
        Command::TrainClassifier => {
            let stack = build_stack_without_gan(&cfg)?;
            write_provenance(&cfg)?;
            let path = save_classifier(&cfg, &stack)?;
            let labels = stack.test.labels().to_vec();
            let acc = stack
                .classifier
                .accuracy(&stack.test.x, &labels)
                .run_context("test accuracy")?;
            println!("saved {} (test accuracy {acc:.4})", path.display());
        }
        Command::TrainGan => {
            let stack = build_stack(&cfg)?;
            write_provenance(&cfg)?;
            let paths = save_gan(&cfg, &stack)?;
            println!("saved {} checkpoint files", paths.len());
        }
        Command::Attack { attack } => {
            let kind = AttackKind::parse(attack).map_err(|e| HarnessError::Config(e.to_string()))?;
            let attack_cfg = cfg
                .attack_config(kind)
                .ok_or_else(|| HarnessError::Config(format!("attack {kind} is not enabled")))?;
            let stack = stack_for(&cli, &cfg)?;
            write_provenance(&cfg)?;
            let labels = stack.test.labels().to_vec();
            let batch = run_attack(kind, &stack.classifier, &stack.test.x, &labels, &attack_cfg)
                .run_context("attack")?;
            for w in &batch.warnings {
                eprintln!("warning: {w}");
            }
            let path = cfg.out_dir.join(format!("attack_{}.csv", kind.name()));
            write_attack_records(&cfg, &stack, kind, &batch, &path)?;
            let acc_orig = stack
                .classifier
                .accuracy(&stack.test.x, &labels)
                .run_context("accuracy")?;
            let acc_adv = stack
                .classifier
                .accuracy(&batch.x_adv, &labels)
                .run_context("accuracy")?;
            println!(
                "{}: accuracy {acc_orig:.4} -> {acc_adv:.4}, records in {}",
                kind.name(),
                path.display()
            );
        }
        Command::Detect => {
            let stack = stack_for(&cli, &cfg)?;
            let (threshold, records) = run_detection(&cfg, &stack)?;
            let fpr = rate(&records, "real");
            println!(
                "tau = {:.4} (p = {}, calibrated on {} with drop {:.3})",
                threshold.tau, threshold.p, threshold.attack, threshold.accuracy_drop
            );
            println!("FPR on reals: {fpr:.3}");
            for (kind, _) in &cfg.attacks {
                println!("TPR on {}: {:.3}", kind.name(), rate(&records, kind.name()));
            }
        }
        Command::Clean { attack } => {
            let kind = AttackKind::parse(attack).map_err(|e| HarnessError::Config(e.to_string()))?;
            let attack_cfg = cfg
                .attack_config(kind)
                .ok_or_else(|| HarnessError::Config(format!("attack {kind} is not enabled")))?;
            let stack = stack_for(&cli, &cfg)?;
            write_provenance(&cfg)?;
            let labels = stack.test.labels().to_vec();
            let batch = run_attack(kind, &stack.classifier, &stack.test.x, &labels, &attack_cfg)
                .run_context("attack")?;
            let mut clean_cfg = cfg.clean.clone();
            clean_cfg.seed = cfg.seed_for("clean");
            let results = clean_batch(
                &stack.gan.generator,
                &stack.gan.discriminator,
                &batch.x_adv,
                &clean_cfg,
            )
            .run_context("cleaning")?;
            let cleaned = cleaned_tensor(&results).run_context("cleaning")?;
            let acc_orig = stack
                .classifier
                .accuracy(&stack.test.x, &labels)
                .run_context("accuracy")?;
            let acc_adv = stack
                .classifier
                .accuracy(&batch.x_adv, &labels)
                .run_context("accuracy")?;
            let acc_clean = stack
                .classifier
                .accuracy(&cleaned, &labels)
                .run_context("accuracy")?;
            println!(
                "{}: original {acc_orig:.4}, adversarial {acc_adv:.4}, cleaned {acc_clean:.4}",
                kind.name()
            );
        }
        Command::Table1 => {
            let stack = stack_for(&cli, &cfg)?;
            let rows = run_table1_with(&cfg, &stack)?;
            for r in &rows {
                println!(
                    "{:>5}: original {:.4}, adversarial {:.4}, cleaned {:.4}",
                    r.attack, r.acc_original, r.acc_adversarial, r.acc_cleaned
                );
            }
            println!("wrote {}", cfg.out_dir.join("table1.csv").display());
        }
        Command::Table2 => {
            let stack = stack_for(&cli, &cfg)?;
            let rows = run_table2_with(&cfg, &stack)?;
            for r in &rows {
                println!(
                    "{:>5}: defense-gan {:.4}, cowboy {:.4}",
                    r.attack, r.acc_defense_gan, r.acc_cowboy
                );
            }
            println!("wrote {}", cfg.out_dir.join("table2.csv").display());
        }
        Command::Violin => {
            let stack = stack_for(&cli, &cfg)?;
            let records = run_violin_with(&cfg, &stack)?;
            println!(
                "wrote {} ({} rows)",
                cfg.out_dir.join("violin.csv").display(),
                records.len()
            );
        }
        Command::GanSweep => {
            let stack = stack_for(&cli, &cfg)?;
            let checkpoints = match &cli.checkpoint {
                Some(dir) if dir.is_dir() => load_sweep_checkpoints(dir)?,
                Some(file) => {
                    vec![Checkpoint::load(file).run_context("loading checkpoint")?]
                }
                None => stack.gan.checkpoints.clone(),
            };
            let rows = run_gan_quality_sweep_with(&cfg, &stack, &checkpoints)?;
            for r in &rows {
                println!(
                    "step {:>6}: cleaned {:.4}, D(real) {:.4}, D(adv) {:.4}",
                    r.checkpoint_step, r.acc_cleaned, r.mean_score_real, r.mean_score_adv
                );
            }
            println!("wrote {}", cfg.out_dir.join("gan_sweep.csv").display());
        }
    }
    Ok(())
}

fn rate(records: &[cowboy_harness::report::DetectionRecord], source: &str) -> f64 {
    let (mut flagged, mut total) = (0usize, 0usize);
    for r in records.iter().filter(|r| r.source == source) {
        total += 1;
        if r.flagged {
            flagged += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        flagged as f64 / total as f64
    }
}

/// Classifier-only stack for `train-classifier` (skips GAN training).
fn build_stack_without_gan(cfg: &ExperimentConfig) -> Result<Stack, HarnessError> {
    let mut quick = cfg.clone();
    quick.gan.steps = 1;
    quick.gan.checkpoint_every = None;
    build_stack(&quick)
}
