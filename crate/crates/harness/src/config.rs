//! Experiment configuration.
//!
//! Configs live in flat `key = value` text with dotted sections:
//!
//! ```text
//! # two-Gaussian run
//! run.master_seed = 7
//! gan.steps = 2000
//! attack.fgsm.epsilon = 0.5
//! attacks.enabled = fgsm,bim,pgdm
//! ```
//!
//! Every knob has a default; the fully resolved set is written into each
//! run's output directory for provenance. The master seed derives all
//! component seeds via `derive_seed(master, label)` so that every stage
//! sees an independent, reproducible stream.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cowboy::attacks::{AttackConfig, AttackKind};
use cowboy::defense::CleaningConfig;
use cowboy::nets::{OptimizerKind, TrainConfig};
use cowboy::rng::{derive_seed, sha256_hex};

use crate::error::{HarnessError, Result};

/// Which dataset a run draws from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// The builtin synthetic mixture.
    TwoGaussians { n_per_class: usize },
    /// IDX image/label files.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        limit: usize,
        downsample_to: usize,
    },
}

/// Fully resolved experiment configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub out_dir: PathBuf,
    pub data: DataSource,
    pub train_fraction: f64,
    pub valid_fraction: f64,
    pub classifier: TrainConfig,
    pub gan: TrainConfig,
    /// Attacks to run, in order, each with its settings.
    pub attacks: Vec<(AttackKind, AttackConfig)>,
    /// Calibration attack settings for detection.
    pub detection_attack: AttackKind,
    pub detection: AttackConfig,
    pub detection_p: f64,
    pub clean: CleaningConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut classifier = TrainConfig::classifier_default(0);
        classifier.steps = 400;
        let mut gan = TrainConfig::gan_default(0);
        gan.learning_rate = 7e-4;
        gan.batch_size = 16;
        gan.checkpoint_every = Some(500);

        // Desk-scale attack suite on [-1,1] data: the sign attacks get a
        // budget of 0.5; vam takes a longer L2 step and a wide probe so the
        // power iteration resolves the boundary-facing direction.
        let sign_attack = AttackConfig {
            epsilon: 0.5,
            alpha: 0.125,
            steps: 8,
            mu: 1.0,
            ..AttackConfig::default()
        };
        let vam_attack = AttackConfig {
            epsilon: 0.8,
            alpha: 0.8,
            steps: 1,
            vam_xi: 0.3,
            vam_power_iters: 2,
            ..AttackConfig::default()
        };
        let attacks = AttackKind::ALL
            .into_iter()
            .map(|kind| {
                let cfg = if kind == AttackKind::Vam {
                    vam_attack.clone()
                } else {
                    sign_attack.clone()
                };
                (kind, cfg)
            })
            .collect();

        ExperimentConfig {
            master_seed: 7,
            out_dir: PathBuf::from("runs/out"),
            data: DataSource::TwoGaussians { n_per_class: 500 },
            train_fraction: 0.6,
            valid_fraction: 0.2,
            classifier,
            gan,
            attacks,
            detection_attack: AttackKind::Fgsm,
            detection: AttackConfig {
                epsilon: 1.0,
                alpha: 0.25,
                steps: 8,
                ..AttackConfig::default()
            },
            detection_p: 1.0,
            clean: CleaningConfig {
                sigma: 0.5,
                ..CleaningConfig::default()
            },
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| {
        HarnessError::Config(format!("bad value {value:?} for key {key}"))
    })
}

fn parse_usize_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|v| parse::<usize>(key, v))
        .collect()
}

impl ExperimentConfig {
    /// Parses flat `key = value` text over the defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                HarnessError::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text)
    }

    /// Applies one dotted `key = value` pair.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "run.master_seed" => self.master_seed = parse(key, value)?,
            "run.out" => self.out_dir = PathBuf::from(value),
            "data.name" => match value {
                "two-gaussians" => {
                    if !matches!(self.data, DataSource::TwoGaussians { .. }) {
                        self.data = DataSource::TwoGaussians { n_per_class: 500 };
                    }
                }
                "idx" => {
                    if !matches!(self.data, DataSource::Idx { .. }) {
                        self.data = DataSource::Idx {
                            images: PathBuf::new(),
                            labels: PathBuf::new(),
                            limit: 1000,
                            downsample_to: 8,
                        };
                    }
                }
                other => {
                    return Err(HarnessError::Config(format!(
                        "data.name must be two-gaussians or idx, got {other:?}"
                    )))
                }
            },
            "data.n_per_class" => {
                let n = parse(key, value)?;
                self.data = DataSource::TwoGaussians { n_per_class: n };
            }
            "data.images_path" | "data.labels_path" | "data.limit" | "data.downsample_to" => {
                let (mut images, mut labels, mut limit, mut downsample_to) = match &self.data {
                    DataSource::Idx {
                        images,
                        labels,
                        limit,
                        downsample_to,
                    } => (images.clone(), labels.clone(), *limit, *downsample_to),
                    _ => (PathBuf::new(), PathBuf::new(), 1000, 8),
                };
                match key {
                    "data.images_path" => images = PathBuf::from(value),
                    "data.labels_path" => labels = PathBuf::from(value),
                    "data.limit" => limit = parse(key, value)?,
                    _ => downsample_to = parse(key, value)?,
                }
                self.data = DataSource::Idx {
                    images,
                    labels,
                    limit,
                    downsample_to,
                };
            }
            "data.train_fraction" => self.train_fraction = parse(key, value)?,
            "data.valid_fraction" => self.valid_fraction = parse(key, value)?,
            _ if key.starts_with("classifier.") || key.starts_with("gan.") => {
                let (train, field) = if let Some(f) = key.strip_prefix("classifier.") {
                    (&mut self.classifier, f)
                } else {
                    (&mut self.gan, key.strip_prefix("gan.").unwrap())
                };
                match field {
                    "optimizer" => {
                        train.optimizer = match value {
                            "sgd" => OptimizerKind::Sgd,
                            "adam" => OptimizerKind::Adam,
                            other => {
                                return Err(HarnessError::Config(format!(
                                    "optimizer must be sgd or adam, got {other:?}"
                                )))
                            }
                        }
                    }
                    "learning_rate" => train.learning_rate = parse(key, value)?,
                    "beta1" => train.beta1 = parse(key, value)?,
                    "beta2" => train.beta2 = parse(key, value)?,
                    "adam_eps" => train.adam_eps = parse(key, value)?,
                    "batch_size" => train.batch_size = parse(key, value)?,
                    "steps" => train.steps = parse(key, value)?,
                    "latent_dim" => train.latent_dim = parse(key, value)?,
                    "checkpoint_every" => {
                        let v: usize = parse(key, value)?;
                        train.checkpoint_every = (v > 0).then_some(v);
                    }
                    "hidden" => train.hidden = parse_usize_list(key, value)?,
                    other => {
                        return Err(HarnessError::Config(format!("unknown key {key} ({other})")))
                    }
                }
            }
            "attacks.enabled" => {
                let mut list = Vec::new();
                for name in value.split(',') {
                    let kind = AttackKind::parse(name.trim())
                        .map_err(|e| HarnessError::Config(e.to_string()))?;
                    let cfg = self
                        .attacks
                        .iter()
                        .find(|(k, _)| *k == kind)
                        .map(|(_, c)| c.clone())
                        .unwrap_or_default();
                    list.push((kind, cfg));
                }
                self.attacks = list;
            }
            _ if key.starts_with("attack.") => {
                let rest = key.strip_prefix("attack.").unwrap();
                let (name, field) = rest.split_once('.').ok_or_else(|| {
                    HarnessError::Config(format!("expected attack.<name>.<field>, got {key}"))
                })?;
                let kind = AttackKind::parse(name)
                    .map_err(|e| HarnessError::Config(e.to_string()))?;
                let cfg = self
                    .attacks
                    .iter_mut()
                    .find(|(k, _)| *k == kind)
                    .map(|(_, c)| c)
                    .ok_or_else(|| {
                        HarnessError::Config(format!("attack {name} is not enabled"))
                    })?;
                set_attack_field(cfg, key, field, value)?;
            }
            "detection.attack" => {
                self.detection_attack = AttackKind::parse(value)
                    .map_err(|e| HarnessError::Config(e.to_string()))?;
            }
            "detection.p" => {
                self.detection_p = if value == "inf" {
                    f64::INFINITY
                } else {
                    parse(key, value)?
                }
            }
            _ if key.starts_with("detection.") => {
                let field = key.strip_prefix("detection.").unwrap();
                set_attack_field(&mut self.detection, key, field, value)?;
            }
            "clean.sigma" => self.clean.sigma = parse(key, value)?,
            "clean.eta" => self.clean.eta = parse(key, value)?,
            "clean.steps" => self.clean.steps = parse(key, value)?,
            "clean.restarts" => self.clean.restarts = parse(key, value)?,
            "clean.lambda_d" => self.clean.lambda_d = parse(key, value)?,
            other => return Err(HarnessError::Config(format!("unknown key {other}"))),
        }
        Ok(())
    }

    /// All keys and resolved values, sorted; written out for provenance.
    pub fn resolved_text(&self) -> String {
        let mut kv = BTreeMap::new();
        kv.insert("run.master_seed".to_string(), self.master_seed.to_string());
        match &self.data {
            DataSource::TwoGaussians { n_per_class } => {
                kv.insert("data.name".into(), "two-gaussians".into());
                kv.insert("data.n_per_class".into(), n_per_class.to_string());
            }
            DataSource::Idx {
                images,
                labels,
                limit,
                downsample_to,
            } => {
                kv.insert("data.name".into(), "idx".into());
                kv.insert("data.images_path".into(), images.display().to_string());
                kv.insert("data.labels_path".into(), labels.display().to_string());
                kv.insert("data.limit".into(), limit.to_string());
                kv.insert("data.downsample_to".into(), downsample_to.to_string());
            }
        }
        kv.insert("data.train_fraction".into(), self.train_fraction.to_string());
        kv.insert("data.valid_fraction".into(), self.valid_fraction.to_string());
        for (prefix, t) in [("classifier", &self.classifier), ("gan", &self.gan)] {
            kv.insert(
                format!("{prefix}.optimizer"),
                match t.optimizer {
                    OptimizerKind::Sgd => "sgd".into(),
                    OptimizerKind::Adam => "adam".into(),
                },
            );
            kv.insert(format!("{prefix}.learning_rate"), t.learning_rate.to_string());
            kv.insert(format!("{prefix}.beta1"), t.beta1.to_string());
            kv.insert(format!("{prefix}.beta2"), t.beta2.to_string());
            kv.insert(format!("{prefix}.adam_eps"), t.adam_eps.to_string());
            kv.insert(format!("{prefix}.batch_size"), t.batch_size.to_string());
            kv.insert(format!("{prefix}.steps"), t.steps.to_string());
            kv.insert(format!("{prefix}.latent_dim"), t.latent_dim.to_string());
            kv.insert(
                format!("{prefix}.checkpoint_every"),
                t.checkpoint_every.unwrap_or(0).to_string(),
            );
            kv.insert(
                format!("{prefix}.hidden"),
                t.hidden
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            );
        }
        kv.insert(
            "attacks.enabled".into(),
            self.attacks
                .iter()
                .map(|(k, _)| k.name())
                .collect::<Vec<_>>()
                .join(","),
        );
        for (kind, a) in &self.attacks {
            let p = format!("attack.{}", kind.name());
            insert_attack(&mut kv, &p, a);
        }
        kv.insert("detection.attack".into(), self.detection_attack.name().into());
        kv.insert(
            "detection.p".into(),
            if self.detection_p.is_infinite() {
                "inf".into()
            } else {
                self.detection_p.to_string()
            },
        );
        insert_attack(&mut kv, "detection", &self.detection);
        kv.insert("clean.sigma".into(), self.clean.sigma.to_string());
        kv.insert("clean.eta".into(), self.clean.eta.to_string());
        kv.insert("clean.steps".into(), self.clean.steps.to_string());
        kv.insert("clean.restarts".into(), self.clean.restarts.to_string());
        kv.insert("clean.lambda_d".into(), self.clean.lambda_d.to_string());

        let mut out = String::new();
        for (k, v) in kv {
            writeln!(out, "{k} = {v}").unwrap();
        }
        out
    }

    /// Hash identifying the experiment; excludes the output directory.
    pub fn config_hash(&self) -> String {
        sha256_hex(self.resolved_text().as_bytes())[..16].to_string()
    }

    /// Seed for a named component, split off the master seed.
    pub fn seed_for(&self, label: &str) -> u64 {
        derive_seed(self.master_seed, label)
    }

    /// Attack config with its per-run seed filled in.
    pub fn attack_config(&self, kind: AttackKind) -> Option<AttackConfig> {
        self.attacks.iter().find(|(k, _)| *k == kind).map(|(_, c)| {
            let mut c = c.clone();
            c.seed = self.seed_for(&format!("attack.{}", kind.name()));
            c
        })
    }
}

fn set_attack_field(cfg: &mut AttackConfig, key: &str, field: &str, value: &str) -> Result<()> {
    match field {
        "epsilon" => cfg.epsilon = parse(key, value)?,
        "alpha" => cfg.alpha = parse(key, value)?,
        "steps" => cfg.steps = parse(key, value)?,
        "mu" => cfg.mu = parse(key, value)?,
        "xi" => cfg.vam_xi = parse(key, value)?,
        "power_iters" => cfg.vam_power_iters = parse(key, value)?,
        "clip_min" => cfg.clip_min = parse(key, value)?,
        "clip_max" => cfg.clip_max = parse(key, value)?,
        other => {
            return Err(HarnessError::Config(format!(
                "unknown attack field {other} in {key}"
            )))
        }
    }
    Ok(())
}

fn insert_attack(kv: &mut BTreeMap<String, String>, prefix: &str, a: &AttackConfig) {
    kv.insert(format!("{prefix}.epsilon"), a.epsilon.to_string());
    kv.insert(format!("{prefix}.alpha"), a.alpha.to_string());
    kv.insert(format!("{prefix}.steps"), a.steps.to_string());
    kv.insert(format!("{prefix}.mu"), a.mu.to_string());
    kv.insert(format!("{prefix}.xi"), a.vam_xi.to_string());
    kv.insert(format!("{prefix}.power_iters"), a.vam_power_iters.to_string());
    kv.insert(format!("{prefix}.clip_min"), a.clip_min.to_string());
    kv.insert(format!("{prefix}.clip_max"), a.clip_max.to_string());
}
