//! Adversarial attack generators.
//!
//! Five white-box attacks against a softmax classifier, all pure functions
//! of `(classifier, batch, labels, config, seed)`:
//!
//! * `fgsm` — single signed-gradient step of size epsilon,
//! * `bim` — iterated signed steps projected onto the epsilon-ball,
//! * `mim` — BIM with an L1-normalized momentum accumulator,
//! * `pgdm` — BIM from a random start inside the epsilon-ball,
//! * `vam` — label-free KL-sensitivity direction found by power iteration,
//!   applied with an L2-normalized step.
//!
//! The iterative updates evaluate the gradient at the current iterate. Each
//! step first projects onto the epsilon-ball around the original input and
//! then clips to the data range; for in-range inputs the two constraints are
//! elementwise interval intersections, so one pass settles both.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{backward, forward, NodeId};
use crate::error::{Error, Result};
use crate::nets::{Head, Network, ParamMode};
use crate::par::try_map_range;
use crate::rng::{derive_seed_indexed, seeded_rng};
use crate::tensor::{sign, Tensor};

/// Per-attack hyperparameters. Budgets are in data units with the data
/// normalized to `[clip_min, clip_max]` (default `[-1, 1]`).
#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    /// L-infinity budget for fgsm/bim/mim/pgdm; L2 step length for vam.
    pub epsilon: f64,
    /// Per-iteration step size for the iterative attacks.
    pub alpha: f64,
    /// Iteration count.
    pub steps: usize,
    /// Momentum decay for mim.
    pub mu: f64,
    /// Finite-difference probe scale for vam's power iteration.
    pub vam_xi: f64,
    pub vam_power_iters: usize,
    pub clip_min: f64,
    pub clip_max: f64,
    /// Seed for pgdm's random start and vam's random direction.
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            epsilon: 0.3,
            alpha: 0.1,
            steps: 8,
            mu: 1.0,
            vam_xi: 1e-2,
            vam_power_iters: 1,
            clip_min: -1.0,
            clip_max: 1.0,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.epsilon,
            self.alpha,
            self.mu,
            self.vam_xi,
            self.clip_min,
            self.clip_max,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("attack config has non-finite fields".into()));
        }
        if self.epsilon < 0.0 {
            return Err(Error::Config("epsilon must be >= 0".into()));
        }
        if self.alpha <= 0.0 {
            return Err(Error::Config("alpha must be > 0".into()));
        }
        if self.steps < 1 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        if self.steps > 1 && self.alpha > self.epsilon {
            return Err(Error::Config(
                "alpha must not exceed epsilon when steps > 1".into(),
            ));
        }
        if self.mu < 0.0 {
            return Err(Error::Config("mu must be >= 0".into()));
        }
        if self.vam_xi <= 0.0 {
            return Err(Error::Config("vam_xi must be > 0".into()));
        }
        if self.vam_power_iters < 1 {
            return Err(Error::Config("vam_power_iters must be >= 1".into()));
        }
        if self.clip_min >= self.clip_max {
            return Err(Error::Config("clip_min must be < clip_max".into()));
        }
        Ok(())
    }
}

/// Attack selector, e.g. for CLI flags and report rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    Fgsm,
    Bim,
    Mim,
    Pgdm,
    Vam,
}

impl AttackKind {
    pub const ALL: [AttackKind; 5] = [
        AttackKind::Fgsm,
        AttackKind::Bim,
        AttackKind::Mim,
        AttackKind::Pgdm,
        AttackKind::Vam,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Bim => "bim",
            AttackKind::Mim => "mim",
            AttackKind::Pgdm => "pgdm",
            AttackKind::Vam => "vam",
        }
    }

    pub fn parse(s: &str) -> Result<AttackKind> {
        AttackKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown attack {s:?}")))
    }
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Original and perturbed batch plus bookkeeping.
#[derive(Debug, Clone)]
pub struct AdversarialBatch {
    pub x_orig: Tensor,
    pub x_adv: Tensor,
    pub attack: AttackKind,
    pub config: AttackConfig,
    /// Per sample: did the prediction change away from the reference label
    /// (`y_true` where available, the clean prediction for vam)?
    pub success: Vec<bool>,
    pub warnings: Vec<String>,
}

/// Dispatches an attack by kind. `vam` ignores the labels.
pub fn run_attack(
    kind: AttackKind,
    classifier: &Network,
    x: &Tensor,
    y_true: &[usize],
    cfg: &AttackConfig,
) -> Result<AdversarialBatch> {
    match kind {
        AttackKind::Fgsm => fgsm(classifier, x, y_true, cfg),
        AttackKind::Bim => bim(classifier, x, y_true, cfg),
        AttackKind::Mim => mim(classifier, x, y_true, cfg),
        AttackKind::Pgdm => pgdm(classifier, x, y_true, cfg),
        AttackKind::Vam => vam(classifier, x, cfg),
    }
}

fn check_classifier(classifier: &Network, x: &Tensor, y_true: &[usize]) -> Result<()> {
    if classifier.head() != Head::Softmax {
        return Err(Error::Config("attacks need a softmax-head classifier".into()));
    }
    if x.shape().len() != 2 || x.shape()[1] != classifier.input_dim() {
        return Err(Error::ShapeMismatch {
            primitive: "attack",
            lhs: x.shape().to_vec(),
            rhs: vec![classifier.input_dim()],
        });
    }
    if y_true.len() != x.rows() {
        return Err(Error::ShapeMismatch {
            primitive: "attack",
            lhs: x.shape().to_vec(),
            rhs: vec![y_true.len()],
        });
    }
    Ok(())
}

/// Gradient of the mean cross-entropy with respect to the input batch.
fn input_gradient(classifier: &Network, x: &Tensor, y_true: &[usize]) -> Result<Tensor> {
    let (_, tape) = forward(std::slice::from_ref(x), |tape, ids| {
        let params = classifier.register_params(tape, ParamMode::Constant);
        let logits = classifier.build_logits(tape, ids[0], &params)?;
        tape.softmax_cross_entropy(logits, y_true)
    })?;
    let leaf = tape.leaves()[0];
    let grads = backward(&tape, &[leaf])?;
    Ok(grads.gradient(leaf).unwrap().clone())
}

fn success_flags(classifier: &Network, x_adv: &Tensor, reference: &[usize]) -> Result<Vec<bool>> {
    let pred = classifier.predict_labels(x_adv)?;
    Ok(pred.iter().zip(reference).map(|(p, r)| p != r).collect())
}

/// One projected signed step from `current`, constrained to the
/// epsilon-ball around `origin` and to the data range.
fn signed_step(
    current: &[f64],
    direction: &[f64],
    origin: &[f64],
    step: f64,
    cfg: &AttackConfig,
) -> Vec<f64> {
    current
        .iter()
        .zip(direction)
        .zip(origin)
        .map(|((&c, &d), &o)| {
            let moved = c + step * sign(d);
            let balled = moved.max(o - cfg.epsilon).min(o + cfg.epsilon);
            balled.clamp(cfg.clip_min, cfg.clip_max)
        })
        .collect()
}

fn assert_in_range(x: &Tensor, cfg: &AttackConfig) -> Result<()> {
    if x.data()
        .iter()
        .any(|&v| v < cfg.clip_min || v > cfg.clip_max)
    {
        return Err(Error::Config(
            "attack input must lie within [clip_min, clip_max]".into(),
        ));
    }
    Ok(())
}

/// Single signed-gradient step: `clip(x + eps * sign(grad J))`.
pub fn fgsm(
    classifier: &Network,
    x: &Tensor,
    y_true: &[usize],
    cfg: &AttackConfig,
) -> Result<AdversarialBatch> {
    cfg.validate()?;
    check_classifier(classifier, x, y_true)?;
    assert_in_range(x, cfg)?;
    let grad = input_gradient(classifier, x, y_true)?;
    let data: Vec<f64> = x
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&v, &g)| (v + cfg.epsilon * sign(g)).clamp(cfg.clip_min, cfg.clip_max))
        .collect();
    let x_adv = Tensor::new(x.shape().to_vec(), data)?;
    let success = success_flags(classifier, &x_adv, y_true)?;
    Ok(AdversarialBatch {
        x_orig: x.clone(),
        x_adv,
        attack: AttackKind::Fgsm,
        config: cfg.clone(),
        success,
        warnings: Vec::new(),
    })
}

/// Iterated signed steps, gradient at the current iterate, projected onto
/// the epsilon-ball each step.
pub fn bim(
    classifier: &Network,
    x: &Tensor,
    y_true: &[usize],
    cfg: &AttackConfig,
) -> Result<AdversarialBatch> {
    cfg.validate()?;
    check_classifier(classifier, x, y_true)?;
    assert_in_range(x, cfg)?;
    let mut current = x.clone();
    for _ in 0..cfg.steps {
        let grad = input_gradient(classifier, &current, y_true)?;
        let data = signed_step(current.data(), grad.data(), x.data(), cfg.alpha, cfg);
        current = Tensor::new(x.shape().to_vec(), data)?;
    }
    let success = success_flags(classifier, &current, y_true)?;
    Ok(AdversarialBatch {
        x_orig: x.clone(),
        x_adv: current,
        attack: AttackKind::Bim,
        config: cfg.clone(),
        success,
        warnings: Vec::new(),
    })
}

/// Momentum variant of bim: the signed step follows an accumulator of
/// per-sample L1-normalized gradients.
pub fn mim(
    classifier: &Network,
    x: &Tensor,
    y_true: &[usize],
    cfg: &AttackConfig,
) -> Result<AdversarialBatch> {
    cfg.validate()?;
    check_classifier(classifier, x, y_true)?;
    assert_in_range(x, cfg)?;
    let (rows, cols) = (x.rows(), x.cols());
    let mut current = x.clone();
    let mut momentum = vec![0.0; rows * cols];
    let mut warned = vec![false; rows];
    let mut warnings = Vec::new();
    for _ in 0..cfg.steps {
        let grad = input_gradient(classifier, &current, y_true)?;
        for r in 0..rows {
            let row = grad.row(r);
            let l1: f64 = row.iter().map(|g| g.abs()).sum();
            for c in 0..cols {
                let normalized = if l1 == 0.0 { 0.0 } else { row[c] / l1 };
                momentum[r * cols + c] = cfg.mu * momentum[r * cols + c] + normalized;
            }
            if l1 == 0.0 && !warned[r] {
                warnings.push(format!("sample {r}: zero gradient, momentum term skipped"));
                warned[r] = true;
            }
        }
        let data = signed_step(current.data(), &momentum, x.data(), cfg.alpha, cfg);
        current = Tensor::new(x.shape().to_vec(), data)?;
    }
    let success = success_flags(classifier, &current, y_true)?;
    Ok(AdversarialBatch {
        x_orig: x.clone(),
        x_adv: current,
        attack: AttackKind::Mim,
        config: cfg.clone(),
        success,
        warnings,
    })
}

/// bim from a uniformly random start inside the epsilon-ball. The start is
/// drawn per sample from a seed split off `cfg.seed`, so results do not
/// depend on batch composition or thread schedule.
pub fn pgdm(
    classifier: &Network,
    x: &Tensor,
    y_true: &[usize],
    cfg: &AttackConfig,
) -> Result<AdversarialBatch> {
    cfg.validate()?;
    check_classifier(classifier, x, y_true)?;
    assert_in_range(x, cfg)?;
    let (rows, cols) = (x.rows(), x.cols());
    let mut start = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let mut rng = seeded_rng(derive_seed_indexed(cfg.seed, "pgdm.start", r));
        for c in 0..cols {
            let u = rng.gen_range(-cfg.epsilon..=cfg.epsilon);
            start.push((x.row(r)[c] + u).clamp(cfg.clip_min, cfg.clip_max));
        }
    }
    let mut current = Tensor::new(x.shape().to_vec(), start)?;
    for _ in 0..cfg.steps {
        let grad = input_gradient(classifier, &current, y_true)?;
        let data = signed_step(current.data(), grad.data(), x.data(), cfg.alpha, cfg);
        current = Tensor::new(x.shape().to_vec(), data)?;
    }
    let success = success_flags(classifier, &current, y_true)?;
    Ok(AdversarialBatch {
        x_orig: x.clone(),
        x_adv: current,
        attack: AttackKind::Pgdm,
        config: cfg.clone(),
        success,
        warnings: Vec::new(),
    })
}

/// Label-free attack along the direction of largest KL sensitivity of the
/// predictive distribution, found by power iteration, then applied with an
/// L2-normalized step of length epsilon. Success is measured against the
/// clean prediction since no labels are given.
pub fn vam(classifier: &Network, x: &Tensor, cfg: &AttackConfig) -> Result<AdversarialBatch> {
    cfg.validate()?;
    if classifier.head() != Head::Softmax {
        return Err(Error::Config("attacks need a softmax-head classifier".into()));
    }
    if x.shape().len() != 2 || x.shape()[1] != classifier.input_dim() {
        return Err(Error::ShapeMismatch {
            primitive: "attack",
            lhs: x.shape().to_vec(),
            rhs: vec![classifier.input_dim()],
        });
    }
    assert_in_range(x, cfg)?;
    let rows = x.rows();
    let clean_probs = classifier.predict(x)?;

    let per_sample = try_map_range(rows, |r| -> Result<(Vec<f64>, Option<String>)> {
        let x_row = x.row_tensor(r);
        let p_row = clean_probs.row(r).to_vec();
        vam_sample(classifier, &x_row, &p_row, cfg, r)
    })?;

    let cols = x.cols();
    let mut data = Vec::with_capacity(rows * cols);
    let mut warnings = Vec::new();
    for (r, (direction, warning)) in per_sample.into_iter().enumerate() {
        for c in 0..cols {
            let v = x.row(r)[c] + cfg.epsilon * direction[c];
            data.push(v.clamp(cfg.clip_min, cfg.clip_max));
        }
        if let Some(w) = warning {
            warnings.push(w);
        }
    }
    let x_adv = Tensor::new(x.shape().to_vec(), data)?;
    let clean_labels = classifier.predict_labels(x)?;
    let success = success_flags(classifier, &x_adv, &clean_labels)?;
    Ok(AdversarialBatch {
        x_orig: x.clone(),
        x_adv,
        attack: AttackKind::Vam,
        config: cfg.clone(),
        success,
        warnings,
    })
}

/// Power iteration for one sample: returns the unit direction and an
/// optional warning when the KL gradient vanished and a random fallback
/// direction was used.
fn vam_sample(
    classifier: &Network,
    x_row: &Tensor,
    p_clean: &[f64],
    cfg: &AttackConfig,
    sample_index: usize,
) -> Result<(Vec<f64>, Option<String>)> {
    let dim = x_row.cols();
    let mut rng = seeded_rng(derive_seed_indexed(cfg.seed, "vam.direction", sample_index));
    let mut direction = random_unit(&mut rng, dim);
    let mut fell_back = false;

    for _ in 0..cfg.vam_power_iters {
        let probe: Vec<f64> = direction.iter().map(|d| d * cfg.vam_xi).collect();
        let grad = kl_gradient(classifier, x_row, p_clean, &probe)?;
        match normalize_l2(grad.data()) {
            Some(unit) => direction = unit,
            None => {
                direction = random_unit(&mut rng, dim);
                fell_back = true;
            }
        }
    }
    let warning = fell_back.then(|| {
        format!("sample {sample_index}: zero KL gradient, random direction used")
    });
    Ok((direction, warning))
}

/// Gradient with respect to `r` of `KL(p(.|x) || p(.|x + r))` at the given
/// probe point. With `p` held fixed this equals the gradient of the soft
/// cross-entropy `sum_i p_i * CE(logits(x + r), i)`, which is expressible
/// with the tape's cross-entropy primitive, one class at a time.
fn kl_gradient(
    classifier: &Network,
    x_row: &Tensor,
    p_clean: &[f64],
    probe: &[f64],
) -> Result<Tensor> {
    let r0 = Tensor::new(vec![1, probe.len()], probe.to_vec())?;
    let (_, tape) = forward(&[r0], |tape, ids| {
        let x_const = tape.constant(x_row.clone());
        let shifted = tape.add(x_const, ids[0])?;
        let params = classifier.register_params(tape, ParamMode::Constant);
        let logits = classifier.build_logits(tape, shifted, &params)?;
        let mut total: Option<NodeId> = None;
        for (class, &weight) in p_clean.iter().enumerate() {
            let ce = tape.softmax_cross_entropy(logits, &[class])?;
            let weighted = tape.scale(ce, weight)?;
            total = Some(match total {
                Some(acc) => tape.add(acc, weighted)?,
                None => weighted,
            });
        }
        Ok(total.expect("at least one class"))
    })?;
    let leaf = tape.leaves()[0];
    let grads = backward(&tape, &[leaf])?;
    Ok(grads.gradient(leaf).unwrap().clone())
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    use rand_distr::StandardNormal;
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if let Some(unit) = normalize_l2(&v) {
            return unit;
        }
    }
}

fn normalize_l2(v: &[f64]) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return None;
    }
    Some(v.iter().map(|x| x / norm).collect())
}
