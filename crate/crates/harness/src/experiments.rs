//! Experiment orchestration: trains the stack, runs the attack suite, and
//! produces the report tables.
//!
//! Everything is deterministic in the master seed: component seeds are
//! pre-split by name, per-sample randomness by index, and all CSV output is
//! written with stable formatting, so identical configs give byte-identical
//! files.

use std::fs;
use std::path::{Path, PathBuf};

use cowboy::attacks::{run_attack, AdversarialBatch, AttackKind};
use cowboy::checkpoint::Checkpoint;
use cowboy::data::{load_idx_images, make_two_gaussians, Dataset};
use cowboy::defense::{
    clean_batch, cleaned_tensor, detect, estimate_threshold, mean_score, score, CleanResult,
    DetectionThreshold,
};
use cowboy::nets::{train_classifier, train_gan, GanTraining, Head, Network};
use cowboy::rng::sha256_hex;
use cowboy::Tensor;

use crate::config::{DataSource, ExperimentConfig};
use crate::error::{Context, HarnessError, Result};
use crate::report::{
    build_id, write_csv, DetectionRecord, ScoreRecord, SweepRow, Table1Row, Table2Row,
    ATTACK_RECORD_HEADER, DETECTION_HEADER, SWEEP_HEADER, TABLE1_HEADER, TABLE2_HEADER,
    VIOLIN_HEADER,
};
use crate::report::AttackRecord;

/// A trained classifier + GAN over one dataset's splits.
pub struct Stack {
    pub dataset_name: String,
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
    pub classifier: Network,
    pub gan: GanTraining,
    pub classifier_loss_trace: Vec<f64>,
}

/// Builds the dataset named by the config.
pub fn build_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.data {
        DataSource::TwoGaussians { n_per_class } => {
            make_two_gaussians(*n_per_class, cfg.seed_for("data")).run_context("building dataset")
        }
        DataSource::Idx {
            images,
            labels,
            limit,
            downsample_to,
        } => {
            if images.as_os_str().is_empty() || labels.as_os_str().is_empty() {
                return Err(HarnessError::Config(
                    "idx dataset needs data.images_path and data.labels_path".into(),
                ));
            }
            load_idx_images(images, labels, *limit, *downsample_to).run_context("loading idx data")
        }
    }
}

/// Trains classifier and GAN on the dataset's train split.
pub fn build_stack(cfg: &ExperimentConfig) -> Result<Stack> {
    let data = build_dataset(cfg)?;
    let (train, valid, test) =
        data.split3(cfg.train_fraction, cfg.valid_fraction, cfg.seed_for("split"));

    let mut classifier_cfg = cfg.classifier.clone();
    classifier_cfg.seed = cfg.seed_for("classifier");
    let trained =
        train_classifier(&train, &classifier_cfg).run_context("training classifier")?;

    let mut gan_cfg = cfg.gan.clone();
    gan_cfg.seed = cfg.seed_for("gan");
    let gan = train_gan(&train, &gan_cfg).run_context("training gan")?;

    Ok(Stack {
        dataset_name: data.name.clone(),
        train,
        valid,
        test,
        classifier: trained.network,
        gan,
        classifier_loss_trace: trained.loss_trace,
    })
}

/// Writes the resolved config into the output directory for provenance.
pub fn write_provenance(cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(
        cfg.out_dir.join("config.resolved.txt"),
        cfg.resolved_text(),
    )?;
    Ok(())
}

fn run_suite(
    cfg: &ExperimentConfig,
    classifier: &Network,
    test: &Dataset,
) -> Result<Vec<(AttackKind, AdversarialBatch)>> {
    let labels = test.labels().to_vec();
    cfg.attacks
        .iter()
        .map(|(kind, _)| {
            let attack_cfg = cfg.attack_config(*kind).expect("configured attack");
            let batch = run_attack(*kind, classifier, &test.x, &labels, &attack_cfg)
                .run_context(&format!("attack {kind}"))?;
            Ok((*kind, batch))
        })
        .collect()
}

fn clean_to_tensor(
    cfg: &ExperimentConfig,
    stack: &Stack,
    x: &Tensor,
    lambda_d: f64,
) -> Result<(Tensor, Vec<CleanResult>)> {
    let mut clean_cfg = cfg.clean.clone();
    clean_cfg.lambda_d = lambda_d;
    clean_cfg.seed = cfg.seed_for("clean");
    let results = clean_batch(&stack.gan.generator, &stack.gan.discriminator, x, &clean_cfg)
        .run_context("cleaning")?;
    let tensor = cleaned_tensor(&results).run_context("cleaning")?;
    Ok((tensor, results))
}

fn combined_z0_hash(results: &[CleanResult]) -> String {
    let mut bytes = Vec::with_capacity(results.len() * 64);
    for r in results {
        bytes.extend_from_slice(r.z0_hash.as_bytes());
    }
    sha256_hex(&bytes)[..16].to_string()
}

/// Accuracy table over the attack suite: original / adversarial / cleaned
/// (with both loss terms). Writes `table1.csv`.
pub fn run_table1(cfg: &ExperimentConfig) -> Result<Vec<Table1Row>> {
    let stack = build_stack(cfg)?;
    run_table1_with(cfg, &stack)
}

/// Table-1 body against a prebuilt stack (shared by tests and the sweep).
pub fn run_table1_with(cfg: &ExperimentConfig, stack: &Stack) -> Result<Vec<Table1Row>> {
    write_provenance(cfg)?;
    let labels = stack.test.labels().to_vec();
    let acc_original = stack
        .classifier
        .accuracy(&stack.test.x, &labels)
        .run_context("test accuracy")?;

    let mut rows = Vec::new();
    for (kind, batch) in run_suite(cfg, &stack.classifier, &stack.test)? {
        let acc_adversarial = stack
            .classifier
            .accuracy(&batch.x_adv, &labels)
            .run_context("adversarial accuracy")?;
        let (cleaned, _) = clean_to_tensor(cfg, stack, &batch.x_adv, 1.0)?;
        let acc_cleaned = stack
            .classifier
            .accuracy(&cleaned, &labels)
            .run_context("cleaned accuracy")?;
        rows.push(Table1Row {
            dataset: stack.dataset_name.clone(),
            attack: kind.name().to_string(),
            config_hash: cfg.config_hash(),
            build_id: build_id(),
            acc_original,
            acc_adversarial,
            acc_cleaned,
        });
    }
    let lines: Vec<String> = rows.iter().map(|r| r.to_csv()).collect::<Result<_>>()?;
    write_csv(&cfg.out_dir.join("table1.csv"), TABLE1_HEADER, &lines)?;
    Ok(rows)
}


/// Two-term ablation: generator-only cleaning against both terms, sharing
/// restart seeds across the two columns. Writes `table2.csv`.
pub fn run_table2(cfg: &ExperimentConfig) -> Result<Vec<Table2Row>> {
    let stack = build_stack(cfg)?;
    run_table2_with(cfg, &stack)
}

pub fn run_table2_with(cfg: &ExperimentConfig, stack: &Stack) -> Result<Vec<Table2Row>> {
    write_provenance(cfg)?;
    let labels = stack.test.labels().to_vec();
    let mut rows = Vec::new();
    for (kind, batch) in run_suite(cfg, &stack.classifier, &stack.test)? {
        let (cleaned_dg, results_dg) = clean_to_tensor(cfg, stack, &batch.x_adv, 0.0)?;
        let (cleaned_cb, results_cb) = clean_to_tensor(cfg, stack, &batch.x_adv, 1.0)?;
        let acc_defense_gan = stack
            .classifier
            .accuracy(&cleaned_dg, &labels)
            .run_context("defense-gan accuracy")?;
        let acc_cowboy = stack
            .classifier
            .accuracy(&cleaned_cb, &labels)
            .run_context("cowboy accuracy")?;
        rows.push(Table2Row {
            dataset: stack.dataset_name.clone(),
            attack: kind.name().to_string(),
            config_hash: cfg.config_hash(),
            build_id: build_id(),
            acc_defense_gan,
            acc_cowboy,
            z0_hash_defense_gan: combined_z0_hash(&results_dg),
            z0_hash_cowboy: combined_z0_hash(&results_cb),
        });
    }
    let lines: Vec<String> = rows.iter().map(|r| r.to_csv()).collect::<Result<_>>()?;
    write_csv(&cfg.out_dir.join("table2.csv"), TABLE2_HEADER, &lines)?;
    Ok(rows)
}

/// Per-sample discriminator scores for the real test split and every
/// attack's perturbed copy (successful or not). Writes `violin.csv` with
/// the pinned `dataset,source,index,score` schema.
pub fn run_violin_export(cfg: &ExperimentConfig) -> Result<Vec<ScoreRecord>> {
    let stack = build_stack(cfg)?;
    run_violin_with(cfg, &stack)
}

pub fn run_violin_with(cfg: &ExperimentConfig, stack: &Stack) -> Result<Vec<ScoreRecord>> {
    write_provenance(cfg)?;
    let hash = cfg.config_hash();
    let id = build_id();
    let mut records = Vec::new();
    let mut push_scores = |source: &str, x: &Tensor, records: &mut Vec<ScoreRecord>| -> Result<()> {
        let s = score(&stack.gan.discriminator, x).run_context("scoring")?;
        for (index, &value) in s.data().iter().enumerate() {
            records.push(ScoreRecord {
                dataset: stack.dataset_name.clone(),
                source: source.to_string(),
                index,
                score: value,
                config_hash: hash.clone(),
                build_id: id.clone(),
            });
        }
        Ok(())
    };
    push_scores("real", &stack.test.x, &mut records)?;
    for (kind, batch) in run_suite(cfg, &stack.classifier, &stack.test)? {
        push_scores(kind.name(), &batch.x_adv, &mut records)?;
    }
    let lines: Vec<String> = records.iter().map(|r| r.to_csv()).collect::<Result<_>>()?;
    write_csv(&cfg.out_dir.join("violin.csv"), VIOLIN_HEADER, &lines)?;
    Ok(records)
}

/// Re-evaluates detection and cleaning under every saved GAN checkpoint.
/// Writes `gan_sweep.csv`, one row per checkpoint.
pub fn run_gan_quality_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    let stack = build_stack(cfg)?;
    run_gan_quality_sweep_with(cfg, &stack, &stack.gan.checkpoints)
}

pub fn run_gan_quality_sweep_with(
    cfg: &ExperimentConfig,
    stack: &Stack,
    checkpoints: &[Checkpoint],
) -> Result<Vec<SweepRow>> {
    write_provenance(cfg)?;
    if checkpoints.is_empty() {
        return Err(HarnessError::Config(
            "gan sweep needs at least one checkpoint; set gan.checkpoint_every".into(),
        ));
    }
    let labels = stack.test.labels().to_vec();
    let kind = cfg.detection_attack;
    let attack_cfg = cfg
        .attack_config(kind)
        .ok_or_else(|| HarnessError::Config(format!("attack {kind} is not enabled")))?;
    let batch = run_attack(kind, &stack.classifier, &stack.test.x, &labels, &attack_cfg)
        .run_context("sweep attack")?;
    let acc_adversarial = stack
        .classifier
        .accuracy(&batch.x_adv, &labels)
        .run_context("sweep adversarial accuracy")?;

    let mut rows = Vec::new();
    for ck in checkpoints {
        let generator =
            Network::from_named_params(&ck.params_with_prefix("generator"), Head::Tanh)
                .run_context("rebuilding generator")?;
        let discriminator =
            Network::from_named_params(&ck.params_with_prefix("discriminator"), Head::Sigmoid)
                .run_context("rebuilding discriminator")?;

        let mut clean_cfg = cfg.clean.clone();
        clean_cfg.lambda_d = 1.0;
        clean_cfg.seed = cfg.seed_for("clean");
        let results = clean_batch(&generator, &discriminator, &batch.x_adv, &clean_cfg)
            .run_context("sweep cleaning")?;
        let cleaned = cleaned_tensor(&results).run_context("sweep cleaning")?;
        let acc_cleaned = stack
            .classifier
            .accuracy(&cleaned, &labels)
            .run_context("sweep cleaned accuracy")?;
        rows.push(SweepRow {
            dataset: stack.dataset_name.clone(),
            checkpoint_step: ck.step,
            config_hash: cfg.config_hash(),
            build_id: build_id(),
            acc_adversarial,
            acc_cleaned,
            mean_score_real: mean_score(&discriminator, &stack.test.x)
                .run_context("sweep real scores")?,
            mean_score_adv: mean_score(&discriminator, &batch.x_adv)
                .run_context("sweep adversarial scores")?,
        });
    }
    let lines: Vec<String> = rows.iter().map(|r| r.to_csv()).collect::<Result<_>>()?;
    write_csv(&cfg.out_dir.join("gan_sweep.csv"), SWEEP_HEADER, &lines)?;
    Ok(rows)
}

/// Calibrates a detection threshold on the valid split and applies it to
/// the test reals plus every enabled attack's adversarials. Writes
/// `detection.csv` and returns `(threshold, records)`.
pub fn run_detection(
    cfg: &ExperimentConfig,
    stack: &Stack,
) -> Result<(DetectionThreshold, Vec<DetectionRecord>)> {
    write_provenance(cfg)?;
    let mut det_cfg = cfg.detection.clone();
    det_cfg.seed = cfg.seed_for("detection.attack");
    let kind = cfg.detection_attack;
    let threshold = estimate_threshold(
        &stack.gan.discriminator,
        &stack.classifier,
        &stack.valid,
        |c, x, y| run_attack(kind, c, x, y, &det_cfg),
        cfg.detection_p,
    )
    .run_context("threshold calibration")?;

    let mut records = Vec::new();
    let mut push = |source: &str, x: &Tensor, records: &mut Vec<DetectionRecord>| -> Result<()> {
        let scores = score(&stack.gan.discriminator, x).run_context("scoring")?;
        let flags = detect(&stack.gan.discriminator, x, &threshold).run_context("detecting")?;
        for (index, (&s, &f)) in scores.data().iter().zip(&flags).enumerate() {
            records.push(DetectionRecord {
                index,
                source: source.to_string(),
                score: s,
                flagged: f,
            });
        }
        Ok(())
    };
    push("real", &stack.test.x, &mut records)?;
    for (kind, batch) in run_suite(cfg, &stack.classifier, &stack.test)? {
        push(kind.name(), &batch.x_adv, &mut records)?;
    }
    let lines: Vec<String> = records.iter().map(|r| r.to_csv()).collect::<Result<_>>()?;
    write_csv(&cfg.out_dir.join("detection.csv"), DETECTION_HEADER, &lines)?;
    Ok((threshold, records))
}

/// Long-form export of one attack's adversarial batch.
pub fn write_attack_records(
    cfg: &ExperimentConfig,
    stack: &Stack,
    kind: AttackKind,
    batch: &AdversarialBatch,
    path: &Path,
) -> Result<Vec<AttackRecord>> {
    let labels = stack.test.labels();
    let hash = cfg.config_hash();
    let dims = batch.x_orig.cols();
    let mut records = Vec::with_capacity(batch.x_orig.rows() * dims);
    for i in 0..batch.x_orig.rows() {
        for c in 0..dims {
            records.push(AttackRecord {
                index: i,
                label: labels.get(i).copied().unwrap_or(0),
                attack: kind.name().to_string(),
                config_hash: hash.clone(),
                component: c,
                original: batch.x_orig.row(i)[c],
                adversarial: batch.x_adv.row(i)[c],
                success: batch.success[i],
            });
        }
    }
    let lines: Vec<String> = records.iter().map(|r| r.to_csv()).collect::<Result<_>>()?;
    write_csv(path, ATTACK_RECORD_HEADER, &lines)?;
    Ok(records)
}

/// Saves the final classifier checkpoint plus its loss trace.
pub fn save_classifier(cfg: &ExperimentConfig, stack: &Stack) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.out_dir)?;
    let params = stack
        .classifier
        .named_params()
        .into_iter()
        .map(|(name, t)| (format!("classifier.{name}"), t))
        .collect();
    let ck = Checkpoint::new(
        cfg.classifier.steps as u64,
        Vec::new(),
        params,
    );
    let path = cfg.out_dir.join("classifier.ckpt");
    ck.save(&path).run_context("saving classifier checkpoint")?;
    let lines: Vec<String> = stack
        .classifier_loss_trace
        .iter()
        .enumerate()
        .map(|(i, l)| format!("{i},{l}"))
        .collect();
    write_csv(&cfg.out_dir.join("classifier_loss.csv"), "step,loss", &lines)?;
    Ok(path)
}

/// Saves every GAN checkpoint (`gan-step-NNNNNN.ckpt`) plus a copy of the
/// final one as `gan-final.ckpt`, and the loss traces.
pub fn save_gan(cfg: &ExperimentConfig, stack: &Stack) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(&cfg.out_dir)?;
    let mut paths = Vec::new();
    for ck in &stack.gan.checkpoints {
        let path = cfg.out_dir.join(format!("gan-step-{:06}.ckpt", ck.step));
        ck.save(&path).run_context("saving gan checkpoint")?;
        paths.push(path);
    }
    if let Some(last) = stack.gan.checkpoints.last() {
        let path = cfg.out_dir.join("gan-final.ckpt");
        last.save(&path).run_context("saving gan checkpoint")?;
        paths.push(path);
    }
    let lines: Vec<String> = stack
        .gan
        .d_loss_trace
        .iter()
        .zip(&stack.gan.g_loss_trace)
        .enumerate()
        .map(|(i, (d, g))| format!("{i},{d},{g}"))
        .collect();
    write_csv(
        &cfg.out_dir.join("gan_losses.csv"),
        "step,d_loss,g_loss",
        &lines,
    )?;
    for w in &stack.gan.warnings {
        eprintln!("warning: {w}");
    }
    Ok(paths)
}

/// Loads GAN step checkpoints from a training output directory; errors by
/// listing the steps that are available.
pub fn load_sweep_checkpoints(dir: &Path) -> Result<Vec<Checkpoint>> {
    let mut found = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        if name.starts_with("gan-step-") && name.ends_with(".ckpt") {
            found.push(Checkpoint::load(&path).run_context("loading checkpoint")?);
        }
    }
    if found.is_empty() {
        return Err(HarnessError::Config(format!(
            "no gan-step-*.ckpt checkpoints under {}; found only final or none",
            dir.display()
        )));
    }
    found.sort_by_key(|c| c.step);
    Ok(found)
}
