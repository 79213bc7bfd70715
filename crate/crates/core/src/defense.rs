//! Discriminator-based detection and latent-space cleaning.
//!
//! Detection thresholds come from an Lp average of discriminator scores on
//! calibration adversarials; an input is flagged when its score falls
//! strictly below the threshold. Cleaning projects an input onto the
//! generator's manifold by gradient descent over the latent `z` on
//!
//! `L(z) = 1/(2 sigma^2) * |G(z) - x|^2 - lambda_d * log D(G(z))`
//!
//! with `lambda_d = 0` reducing to plain L2 reconstruction (generator-only
//! cleaning) and `lambda_d = 1` adding the realness pull of the
//! discriminator.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::attacks::AdversarialBatch;
use crate::autodiff::{backward, forward};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nets::{Head, Network, ParamMode, PROB_CLAMP};
use crate::par::try_map_range;
use crate::rng::{derive_seed_indexed, seeded_rng, sha256_hex};
use crate::tensor::Tensor;

/// Minimum accuracy drop (in fraction points) the calibration attack must
/// cause before its scores are trusted for threshold estimation.
pub const CALIBRATION_MIN_DROP: f64 = 0.20;

/// Per-sample discriminator scores, clamped strictly inside (0, 1).
pub fn score(disc: &Network, x: &Tensor) -> Result<Tensor> {
    if disc.head() != Head::Sigmoid {
        return Err(Error::Config("score needs a sigmoid-head network".into()));
    }
    let raw = disc.predict(x)?;
    raw.map("score", |v| v.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP))
}

/// Mean discriminator score over a batch.
pub fn mean_score(disc: &Network, x: &Tensor) -> Result<f64> {
    let s = score(disc, x)?;
    Ok(s.data().iter().sum::<f64>() / s.len() as f64)
}

/// `((1/N) sum s_i^p)^(1/p)`; `p = inf` gives the maximum, `p = 1` the mean.
pub fn lp_average(scores: &[f64], p: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Config("lp_average of an empty slice".into()));
    }
    if p.is_nan() || p < 1.0 {
        return Err(Error::Config(format!("lp order must be >= 1, got {p}")));
    }
    if p.is_infinite() {
        return Ok(scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    }
    let mean_pow = scores.iter().map(|s| s.powf(p)).sum::<f64>() / scores.len() as f64;
    Ok(mean_pow.powf(1.0 / p))
}

/// Calibrated detection threshold plus provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionThreshold {
    /// Score below which an input is flagged; strictly inside (0, 1).
    pub tau: f64,
    /// Lp order used for the average.
    pub p: f64,
    /// Attack used for calibration.
    pub attack: String,
    /// Number of calibration samples.
    pub samples: usize,
    /// Accuracy drop the calibration attack caused.
    pub accuracy_drop: f64,
}

/// Calibrates a threshold from the discriminator scores of adversarial
/// samples generated by `attack_fn` on the dataset. Errors unless the
/// attack drops classifier accuracy by at least 20 percentage points.
pub fn estimate_threshold<F>(
    disc: &Network,
    classifier: &Network,
    data: &Dataset,
    attack_fn: F,
    p: f64,
) -> Result<DetectionThreshold>
where
    F: FnOnce(&Network, &Tensor, &[usize]) -> Result<AdversarialBatch>,
{
    let labels = data
        .y
        .as_ref()
        .ok_or_else(|| Error::Config("threshold calibration needs labels".into()))?;
    let acc_clean = classifier.accuracy(&data.x, labels)?;
    let batch = attack_fn(classifier, &data.x, labels)?;
    let acc_adv = classifier.accuracy(&batch.x_adv, labels)?;
    let drop = acc_clean - acc_adv;
    if drop < CALIBRATION_MIN_DROP {
        return Err(Error::Calibration {
            measured: drop,
            required: CALIBRATION_MIN_DROP,
        });
    }
    let scores = score(disc, &batch.x_adv)?;
    let tau = lp_average(scores.data(), p)?;
    Ok(DetectionThreshold {
        tau,
        p,
        attack: batch.attack.name().to_string(),
        samples: data.len(),
        accuracy_drop: drop,
    })
}

/// Flags samples whose score is strictly below `tau`; a score exactly at
/// the threshold counts as not adversarial.
pub fn detect(disc: &Network, x: &Tensor, threshold: &DetectionThreshold) -> Result<Vec<bool>> {
    let s = score(disc, x)?;
    Ok(s.data().iter().map(|&v| v < threshold.tau).collect())
}

/// Cleaning hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CleaningConfig {
    /// Reconstruction trade-off; the quadratic term is weighted 1/(2 sigma^2).
    pub sigma: f64,
    /// Latent descent learning rate.
    pub eta: f64,
    /// Descent steps per restart.
    pub steps: usize,
    /// Independent restarts; the best final loss wins.
    pub restarts: usize,
    /// 1 includes the -log D(G(z)) term, 0 is generator-only cleaning.
    pub lambda_d: f64,
    pub seed: u64,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        CleaningConfig {
            sigma: 1.0,
            eta: 0.05,
            steps: 200,
            restarts: 8,
            lambda_d: 1.0,
            seed: 0,
        }
    }
}

impl CleaningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config("sigma must be positive".into()));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Config("eta must be positive".into()));
        }
        if self.steps < 1 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        if self.restarts < 1 {
            return Err(Error::Config("restarts must be >= 1".into()));
        }
        if self.lambda_d != 0.0 && self.lambda_d != 1.0 {
            return Err(Error::Config("lambda_d must be 0 or 1".into()));
        }
        Ok(())
    }
}

/// Outcome of cleaning one sample.
#[derive(Debug, Clone)]
pub struct CleanResult {
    /// `G(z_final)`, recomputed from the winning latent.
    pub x_clean: Tensor,
    pub z_final: Tensor,
    pub final_loss: f64,
    /// Loss traces per restart (`L(z_0) ... L(z_m)`); empty for restarts
    /// that failed even after the learning-rate halving retry.
    pub restart_traces: Vec<Vec<f64>>,
    pub chosen_restart: usize,
    /// SHA-256 over the restart starting points, for seed-sharing audits.
    pub z0_hash: String,
}

struct RestartOutcome {
    z: Tensor,
    final_loss: f64,
    trace: Vec<f64>,
}

fn loss_and_grad(
    gen: &Network,
    disc: &Network,
    x: &Tensor,
    z: &Tensor,
    cfg: &CleaningConfig,
) -> Result<(f64, Tensor)> {
    let (loss, tape) = forward(std::slice::from_ref(z), |tape, ids| {
        let g_params = gen.register_params(tape, ParamMode::Constant);
        let g_out = gen.build_output(tape, ids[0], &g_params)?;
        let x_const = tape.constant(x.clone());
        let diff = tape.sub(g_out, x_const)?;
        let sq = tape.l2_norm_sq(diff)?;
        let rec = tape.scale(sq, 1.0 / (2.0 * cfg.sigma * cfg.sigma))?;
        if cfg.lambda_d == 0.0 {
            return Ok(rec);
        }
        let d_params = disc.register_params(tape, ParamMode::Constant);
        let d_out = disc.build_output(tape, g_out, &d_params)?;
        let clamped = tape.clip(d_out, PROB_CLAMP, 1.0 - PROB_CLAMP)?;
        let log_d = tape.log(clamped)?;
        let log_d = tape.sum(log_d)?;
        let neg = tape.scale(log_d, -cfg.lambda_d)?;
        tape.add(rec, neg)
    })?;
    let leaf = tape.leaves()[0];
    let grads = backward(&tape, &[leaf])?;
    Ok((loss, grads.gradient(leaf).unwrap().clone()))
}

fn run_restart(
    gen: &Network,
    disc: &Network,
    x: &Tensor,
    z0: &Tensor,
    eta: f64,
    cfg: &CleaningConfig,
) -> Result<RestartOutcome> {
    let mut z = z0.clone();
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    for _ in 0..cfg.steps {
        let (loss, grad) = loss_and_grad(gen, disc, x, &z, cfg)?;
        trace.push(loss);
        let data: Vec<f64> = z
            .data()
            .iter()
            .zip(grad.data())
            .map(|(&zv, &gv)| zv - eta * gv)
            .collect();
        z = Tensor::new(z.shape().to_vec(), data)
            .map_err(|_| Error::NonFinite { primitive: "clean" })?;
    }
    let (final_loss, _) = loss_and_grad(gen, disc, x, &z, cfg)?;
    trace.push(final_loss);
    Ok(RestartOutcome {
        z,
        final_loss,
        trace,
    })
}

/// Cleans one sample: for each seeded restart, draw `z_0` from the standard
/// normal prior and run `steps` plain gradient-descent updates on `L(z)`;
/// return `G(z)` of the restart with the smallest final loss (ties break
/// toward the lower restart index). A restart whose loss turns non-finite
/// is retried once from the same `z_0` with the learning rate halved.
pub fn clean(
    gen: &Network,
    disc: &Network,
    x: &Tensor,
    cfg: &CleaningConfig,
) -> Result<CleanResult> {
    cfg.validate()?;
    if x.shape().len() != 2 || x.shape()[0] != 1 || x.shape()[1] != gen.output_dim() {
        return Err(Error::ShapeMismatch {
            primitive: "clean",
            lhs: x.shape().to_vec(),
            rhs: vec![1, gen.output_dim()],
        });
    }
    if cfg.lambda_d != 0.0 && disc.head() != Head::Sigmoid {
        return Err(Error::Config("cleaning with lambda_d=1 needs a sigmoid-head discriminator".into()));
    }
    let latent = gen.input_dim();

    let mut z0s = Vec::with_capacity(cfg.restarts);
    let mut z0_bytes = Vec::new();
    for r in 0..cfg.restarts {
        let mut rng = seeded_rng(derive_seed_indexed(cfg.seed, "clean.z0", r));
        let data: Vec<f64> = (0..latent)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let z0 = Tensor::new(vec![1, latent], data)?;
        z0_bytes.extend_from_slice(&z0.to_le_bytes());
        z0s.push(z0);
    }
    let z0_hash = sha256_hex(&z0_bytes);

    let mut outcomes: Vec<Option<RestartOutcome>> = Vec::with_capacity(cfg.restarts);
    let mut traces = Vec::with_capacity(cfg.restarts);
    for z0 in &z0s {
        let attempt = run_restart(gen, disc, x, z0, cfg.eta, cfg)
            .or_else(|_| run_restart(gen, disc, x, z0, cfg.eta / 2.0, cfg));
        match attempt {
            Ok(out) => {
                traces.push(out.trace.clone());
                outcomes.push(Some(out));
            }
            Err(_) => {
                traces.push(Vec::new());
                outcomes.push(None);
            }
        }
    }

    let chosen = outcomes
        .iter()
        .enumerate()
        .filter_map(|(i, o)| o.as_ref().map(|o| (i, o.final_loss)))
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::Cleaning("every restart diverged".into()))?;

    let best = outcomes[chosen].take().expect("chosen restart succeeded");
    let x_clean = gen.predict(&best.z)?;
    Ok(CleanResult {
        x_clean,
        z_final: best.z,
        final_loss: best.final_loss,
        restart_traces: traces,
        chosen_restart: chosen,
        z0_hash,
    })
}

/// Cleans every row of a batch. Samples are independent; with the
/// `parallel` feature they run across the rayon pool. Each sample gets a
/// seed split off `cfg.seed` by row index, so parallel and sequential
/// execution agree bitwise.
pub fn clean_batch(
    gen: &Network,
    disc: &Network,
    x: &Tensor,
    cfg: &CleaningConfig,
) -> Result<Vec<CleanResult>> {
    cfg.validate()?;
    try_map_range(x.rows(), |r| {
        let mut sample_cfg = cfg.clone();
        sample_cfg.seed = derive_seed_indexed(cfg.seed, "clean.sample", r);
        clean(gen, disc, &x.row_tensor(r), &sample_cfg)
    })
}

/// Always-sequential batch variant, kept for fallback verification and the
/// parallel-versus-sequential bench.
pub fn clean_batch_seq(
    gen: &Network,
    disc: &Network,
    x: &Tensor,
    cfg: &CleaningConfig,
) -> Result<Vec<CleanResult>> {
    cfg.validate()?;
    crate::par::try_map_range_seq(x.rows(), |r| {
        let mut sample_cfg = cfg.clone();
        sample_cfg.seed = derive_seed_indexed(cfg.seed, "clean.sample", r);
        clean(gen, disc, &x.row_tensor(r), &sample_cfg)
    })
}

/// Stacks the cleaned rows of [`clean_batch`] output into one tensor.
pub fn cleaned_tensor(results: &[CleanResult]) -> Result<Tensor> {
    let rows: Vec<Tensor> = results.iter().map(|r| r.x_clean.clone()).collect();
    Tensor::stack_rows(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{Activation, Layer};

    fn identity_generator(dim: usize) -> Network {
        let mut w = Tensor::zeros(vec![dim, dim]).data().to_vec();
        for i in 0..dim {
            w[i * dim + i] = 1.0;
        }
        let layer = Layer {
            w: Tensor::new(vec![dim, dim], w).unwrap(),
            b: Tensor::zeros(vec![dim]),
            act: Activation::None,
        };
        Network::from_layers(vec![layer], Head::None).unwrap()
    }

    /// Zero-weight discriminator with a large bias: sigmoid saturates at 1
    /// and the clamp pins the score to a constant with zero gradient.
    fn constant_discriminator(dim: usize) -> Network {
        let layer = Layer {
            w: Tensor::zeros(vec![dim, 1]),
            b: Tensor::new(vec![1], vec![40.0]).unwrap(),
            act: Activation::None,
        };
        Network::from_layers(vec![layer], Head::Sigmoid).unwrap()
    }

    #[test]
    fn lp_average_matches_hand_values() {
        assert!((lp_average(&[0.2, 0.4], 1.0).unwrap() - 0.3).abs() < 1e-12);
        assert!((lp_average(&[0.2, 0.4], f64::INFINITY).unwrap() - 0.4).abs() < 1e-12);
        assert!((lp_average(&[0.2, 0.4], 2.0).unwrap() - 0.1f64.sqrt()).abs() < 1e-12);
        assert!(lp_average(&[0.2], 0.5).is_err());
    }

    #[test]
    fn detect_uses_strict_inequality() {
        let disc = constant_discriminator(2);
        let x = Tensor::from_rows(&[vec![0.1, 0.2]]).unwrap();
        // Constant discriminator scores 1 - 1e-6 everywhere.
        let tau_exact = DetectionThreshold {
            tau: 1.0 - PROB_CLAMP,
            p: 1.0,
            attack: "fgsm".into(),
            samples: 1,
            accuracy_drop: 0.5,
        };
        assert_eq!(detect(&disc, &x, &tau_exact).unwrap(), vec![false]);
        let tau_above = DetectionThreshold {
            tau: 0.9999995,
            p: 1.0,
            ..tau_exact
        };
        assert_eq!(detect(&disc, &x, &tau_above).unwrap(), vec![true]);
    }

    #[test]
    fn scores_stay_inside_open_unit_interval() {
        let disc = constant_discriminator(3);
        let x = Tensor::from_rows(&[vec![0.0; 3], vec![0.5; 3], vec![-0.9; 3]]).unwrap();
        let s = score(&disc, &x).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn analytic_cleaning_contracts_to_the_input() {
        // G(z) = z, constant D, sigma = 1, eta = 0.5: each step halves the
        // distance, so 50 steps close any O(1) gap to well under 1e-6.
        let gen = identity_generator(2);
        let disc = constant_discriminator(2);
        let x = Tensor::from_rows(&[vec![0.3, -0.7]]).unwrap();
        let cfg = CleaningConfig {
            sigma: 1.0,
            eta: 0.5,
            steps: 50,
            restarts: 1,
            lambda_d: 1.0,
            seed: 7,
        };
        let out = clean(&gen, &disc, &x, &cfg).unwrap();
        assert!(out.x_clean.l2_distance(&x) <= 1e-6);
        assert_eq!(out.x_clean, gen.predict(&out.z_final).unwrap());
    }

    #[test]
    fn lambda_zero_matches_constant_d_trajectory() {
        let gen = identity_generator(2);
        let disc = constant_discriminator(2);
        let x = Tensor::from_rows(&[vec![0.3, -0.7]]).unwrap();
        let base = CleaningConfig {
            sigma: 1.0,
            eta: 0.5,
            steps: 30,
            restarts: 2,
            lambda_d: 0.0,
            seed: 9,
        };
        let without = clean(&gen, &disc, &x, &base).unwrap();
        let with = clean(
            &gen,
            &disc,
            &x,
            &CleaningConfig {
                lambda_d: 1.0,
                ..base
            },
        )
        .unwrap();
        // The constant-D term shifts the loss but not the gradient, so the
        // latents and outputs coincide.
        assert_eq!(without.z_final, with.z_final);
        assert_eq!(without.z0_hash, with.z0_hash);
    }

    #[test]
    fn diverging_restarts_are_all_reported() {
        // eta/sigma^2 >> 2 even after halving: the quadratic explodes and
        // every restart fails.
        let gen = identity_generator(2);
        let disc = constant_discriminator(2);
        let x = Tensor::from_rows(&[vec![0.3, -0.7]]).unwrap();
        let cfg = CleaningConfig {
            sigma: 1.0,
            eta: 1e4,
            steps: 3000,
            restarts: 2,
            lambda_d: 0.0,
            seed: 4,
        };
        assert!(matches!(clean(&gen, &disc, &x, &cfg), Err(Error::Cleaning(_))));
    }

    #[test]
    fn halved_eta_rescues_a_diverging_restart() {
        // eta = 3 diverges (factor 2 per step overflows within ~600 steps);
        // the retry at eta = 1.5 contracts with factor 0.5.
        let gen = identity_generator(2);
        let disc = constant_discriminator(2);
        let x = Tensor::from_rows(&[vec![0.3, -0.7]]).unwrap();
        let cfg = CleaningConfig {
            sigma: 1.0,
            eta: 3.0,
            steps: 800,
            restarts: 1,
            lambda_d: 0.0,
            seed: 4,
        };
        let out = clean(&gen, &disc, &x, &cfg).unwrap();
        assert!(out.x_clean.l2_distance(&x) <= 1e-6);
    }

    #[test]
    fn batch_and_sequential_batch_agree() {
        let gen = identity_generator(2);
        let disc = constant_discriminator(2);
        let x = Tensor::from_rows(&[vec![0.3, -0.7], vec![-0.2, 0.4], vec![0.9, 0.9]]).unwrap();
        let cfg = CleaningConfig {
            steps: 20,
            restarts: 2,
            ..CleaningConfig::default()
        };
        let par = clean_batch(&gen, &disc, &x, &cfg).unwrap();
        let seq = clean_batch_seq(&gen, &disc, &x, &cfg).unwrap();
        assert_eq!(par.len(), seq.len());
        for (a, b) in par.iter().zip(&seq) {
            assert_eq!(a.x_clean, b.x_clean);
            assert_eq!(a.chosen_restart, b.chosen_restart);
        }
    }
}
