//! Dense networks and their trainers.
//!
//! Three roles share one `Network` type: a softmax-head classifier, a
//! tanh-head generator, and a sigmoid-head discriminator. All are plain
//! affine stacks with ReLU hidden activations, Xavier-uniform initialized.
//!
//! The GAN trainer alternates single steps of the two-player value
//!
//! `V(D, G) = E[log D(x)] + E[log(1 - D(G(z)))]`
//!
//! ascending in D and, for the generator, ascending `E[log D(G(z))]`
//! (the non-saturating surrogate with the same equilibrium). Discriminator
//! outputs are clamped to `[1e-6, 1 - 1e-6]` before any logarithm so every
//! loss stays finite.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{backward, forward, sigmoid, NodeId, Tape};
use crate::checkpoint::Checkpoint;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{rng_state, seeded_rng, sha256_hex};
use crate::tensor::Tensor;

/// Clamp band applied to discriminator probabilities before `log`.
pub const PROB_CLAMP: f64 = 1e-6;

/// Activation applied inside the stack (final layer uses `None`; the
/// output nonlinearity is the network's head).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    None,
}

/// Output nonlinearity tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Softmax,
    Sigmoid,
    Tanh,
    None,
}

#[derive(Debug, Clone)]
pub struct Layer {
    pub w: Tensor,
    pub b: Tensor,
    pub act: Activation,
}

/// Parameterized differentiable function as an affine + activation stack.
#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<Layer>,
    head: Head,
    input_dim: usize,
    output_dim: usize,
}

/// How network parameters enter a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamMode {
    /// Differentiable: training the network.
    Leaf,
    /// Frozen: differentiating with respect to something else.
    Constant,
}

impl Network {
    /// Xavier-uniform initialized MLP over `dims = [in, hidden.., out]`.
    pub fn mlp(dims: &[usize], head: Head, rng: &mut ChaCha8Rng) -> Result<Network> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!("bad layer dims {dims:?}")));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for i in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[i], dims[i + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut w = Vec::with_capacity(fan_in * fan_out);
            for _ in 0..fan_in * fan_out {
                w.push(rng.gen_range(-limit..=limit));
            }
            layers.push(Layer {
                w: Tensor::new(vec![fan_in, fan_out], w)?,
                b: Tensor::zeros(vec![fan_out]),
                act: if i + 2 == dims.len() {
                    Activation::None
                } else {
                    Activation::Relu
                },
            });
        }
        Ok(Network {
            layers,
            head,
            input_dim: dims[0],
            output_dim: *dims.last().unwrap(),
        })
    }

    /// Network from explicit layers (used by analytic testbeds).
    pub fn from_layers(layers: Vec<Layer>, head: Head) -> Result<Network> {
        if layers.is_empty() {
            return Err(Error::Config("a network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].w.shape()[1] != pair[1].w.shape()[0] {
                return Err(Error::Config(format!(
                    "layer dims do not chain: {:?} then {:?}",
                    pair[0].w.shape(),
                    pair[1].w.shape()
                )));
            }
        }
        let input_dim = layers[0].w.shape()[0];
        let output_dim = layers.last().unwrap().w.shape()[1];
        Ok(Network {
            layers,
            head,
            input_dim,
            output_dim,
        })
    }

    /// Rebuilds a network from `layer{i}.w` / `layer{i}.b` records, e.g.
    /// the output of [`Checkpoint::params_with_prefix`]. Hidden activations
    /// are ReLU, matching [`Network::mlp`].
    pub fn from_named_params(params: &[(String, Tensor)], head: Head) -> Result<Network> {
        let n = params.len();
        if n == 0 || n % 2 != 0 {
            return Err(Error::Checkpoint(format!(
                "expected layer{{i}}.w/.b pairs, got {n} records"
            )));
        }
        let n_layers = n / 2;
        let mut layers = Vec::with_capacity(n_layers);
        for i in 0..n_layers {
            let find = |suffix: &str| {
                let want = format!("layer{i}.{suffix}");
                params
                    .iter()
                    .find(|(name, _)| *name == want)
                    .map(|(_, t)| t.clone())
                    .ok_or_else(|| Error::Checkpoint(format!("missing parameter {want}")))
            };
            let w = find("w")?;
            let b = find("b")?;
            if w.shape().len() != 2 || b.shape() != [w.shape()[1]] {
                return Err(Error::Checkpoint(format!(
                    "layer{i}: incompatible shapes {:?} / {:?}",
                    w.shape(),
                    b.shape()
                )));
            }
            layers.push(Layer {
                w,
                b,
                act: if i + 1 == n_layers {
                    Activation::None
                } else {
                    Activation::Relu
                },
            });
        }
        Network::from_layers(layers, head)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Named parameter tensors, `layer{i}.w` / `layer{i}.b`.
    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for (i, layer) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.w"), layer.w.clone()));
            out.push((format!("layer{i}.b"), layer.b.clone()));
        }
        out
    }

    /// Content hash of all parameters; used to assert purity.
    pub fn param_hash(&self) -> String {
        let mut bytes = Vec::new();
        for (name, t) in self.named_params() {
            bytes.extend_from_slice(name.as_bytes());
            bytes.extend_from_slice(&t.to_le_bytes());
        }
        sha256_hex(&bytes)
    }

    /// Overwrites parameters from `layer{i}.*` records with matching shapes.
    pub fn load_named_params(&mut self, params: &[(String, Tensor)]) -> Result<()> {
        let rebuilt = Network::from_named_params(params, self.head)?;
        if rebuilt.input_dim != self.input_dim || rebuilt.output_dim != self.output_dim {
            return Err(Error::Checkpoint(format!(
                "architecture mismatch: {}->{} vs {}->{}",
                rebuilt.input_dim, rebuilt.output_dim, self.input_dim, self.output_dim
            )));
        }
        self.layers = rebuilt.layers;
        Ok(())
    }

    /// Registers this network's parameters on a tape.
    pub fn register_params(&self, tape: &mut Tape, mode: ParamMode) -> Vec<NodeId> {
        let mut ids = Vec::with_capacity(self.layers.len() * 2);
        for layer in &self.layers {
            for t in [&layer.w, &layer.b] {
                ids.push(match mode {
                    ParamMode::Leaf => tape.leaf(t.clone()),
                    ParamMode::Constant => tape.constant(t.clone()),
                });
            }
        }
        ids
    }

    /// Builds the pre-head output (logits) for `input` on the tape, using
    /// parameter nodes from [`Network::register_params`].
    pub fn build_logits(
        &self,
        tape: &mut Tape,
        input: NodeId,
        param_ids: &[NodeId],
    ) -> Result<NodeId> {
        debug_assert_eq!(param_ids.len(), self.layers.len() * 2);
        let mut h = input;
        for (i, layer) in self.layers.iter().enumerate() {
            h = tape.affine(h, param_ids[2 * i], param_ids[2 * i + 1])?;
            if layer.act == Activation::Relu {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Logits plus the head nonlinearity in-graph. `Softmax` is not a tape
    /// primitive; compose `softmax_cross_entropy` on the logits instead.
    pub fn build_output(
        &self,
        tape: &mut Tape,
        input: NodeId,
        param_ids: &[NodeId],
    ) -> Result<NodeId> {
        let logits = self.build_logits(tape, input, param_ids)?;
        match self.head {
            Head::None => Ok(logits),
            Head::Tanh => tape.tanh(logits),
            Head::Sigmoid => tape.sigmoid(logits),
            Head::Softmax => Err(Error::Config(
                "softmax head has no in-graph form; use softmax_cross_entropy".into(),
            )),
        }
    }

    /// Pre-head output for a batch. Pure.
    pub fn logits(&self, batch: &Tensor) -> Result<Tensor> {
        if batch.shape().len() != 2 || batch.shape()[1] != self.input_dim {
            return Err(Error::ShapeMismatch {
                primitive: "predict",
                lhs: batch.shape().to_vec(),
                rhs: vec![self.input_dim],
            });
        }
        let mut tape = Tape::new();
        let input = tape.constant(batch.clone());
        let param_ids = self.register_params(&mut tape, ParamMode::Constant);
        let out = self.build_logits(&mut tape, input, &param_ids)?;
        Ok(tape.value(out).clone())
    }

    /// Head output for a batch: softmax rows, sigmoid/tanh elementwise, or
    /// raw logits for `Head::None`. Pure; callers may share `&self` freely
    /// across threads.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        let logits = self.logits(batch)?;
        match self.head {
            Head::None => Ok(logits),
            Head::Tanh => logits.map("tanh", f64::tanh),
            Head::Sigmoid => logits.map("sigmoid", sigmoid),
            Head::Softmax => {
                let (m, k) = (logits.rows(), logits.cols());
                let mut data = Vec::with_capacity(m * k);
                for r in 0..m {
                    let row = logits.row(r);
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let denom: f64 = row.iter().map(|&l| (l - max).exp()).sum();
                    data.extend(row.iter().map(|&l| (l - max).exp() / denom));
                }
                Tensor::new(vec![m, k], data)
            }
        }
    }

    /// Per-row argmax of the head output.
    pub fn predict_labels(&self, batch: &Tensor) -> Result<Vec<usize>> {
        let out = self.predict(batch)?;
        Ok((0..out.rows()).map(|r| argmax(out.row(r))).collect())
    }

    /// Fraction of rows whose argmax matches the label.
    pub fn accuracy(&self, batch: &Tensor, labels: &[usize]) -> Result<f64> {
        let pred = self.predict_labels(batch)?;
        let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
        Ok(hits as f64 / labels.len() as f64)
    }
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Optimizer selection for [`TrainConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Training hyperparameters shared by the classifier and GAN trainers.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    /// Dimension of the noise prior `z`.
    pub latent_dim: usize,
    /// Emit a checkpoint at step 0 and every `k` steps (plus the final step).
    /// `None` emits only the final checkpoint.
    pub checkpoint_every: Option<usize>,
    /// Hidden layer widths for the networks being trained.
    pub hidden: Vec<usize>,
}

impl TrainConfig {
    /// Classifier defaults: Adam with the usual beta1 = 0.9.
    pub fn classifier_default(seed: u64) -> Self {
        TrainConfig {
            optimizer: OptimizerKind::Adam,
            learning_rate: 5e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 32,
            steps: 400,
            seed,
            latent_dim: 1,
            checkpoint_every: None,
            hidden: vec![64, 64],
        }
    }

    /// GAN defaults: Adam with beta1 = 0.5, DCGAN-family style.
    pub fn gan_default(seed: u64) -> Self {
        TrainConfig {
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            beta1: 0.5,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 64,
            steps: 2000,
            seed,
            latent_dim: 16,
            checkpoint_every: Some(500),
            hidden: vec![64, 64],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.latent_dim < 1 {
            return Err(Error::Config("latent_dim must be >= 1".into()));
        }
        if self.steps < 1 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        Ok(())
    }
}

struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    fn new(cfg: &TrainConfig, param_sizes: &[usize]) -> Self {
        Optimizer {
            kind: cfg.optimizer,
            lr: cfg.learning_rate,
            b1: cfg.beta1,
            b2: cfg.beta2,
            eps: cfg.adam_eps,
            t: 0,
            m: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// In-place descent step over aligned parameter/gradient slices.
    fn step(&mut self, params: &mut [Tensor], grads: &[&Tensor]) -> Result<()> {
        self.t += 1;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let mut data = p.data().to_vec();
            match self.kind {
                OptimizerKind::Sgd => {
                    for (x, gv) in data.iter_mut().zip(g.data()) {
                        *x -= self.lr * gv;
                    }
                }
                OptimizerKind::Adam => {
                    let bias1 = 1.0 - self.b1.powi(self.t);
                    let bias2 = 1.0 - self.b2.powi(self.t);
                    for (j, (x, gv)) in data.iter_mut().zip(g.data()).enumerate() {
                        let m = &mut self.m[i][j];
                        let v = &mut self.v[i][j];
                        *m = self.b1 * *m + (1.0 - self.b1) * gv;
                        *v = self.b2 * *v + (1.0 - self.b2) * gv * gv;
                        let m_hat = *m / bias1;
                        let v_hat = *v / bias2;
                        *x -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                    }
                }
            }
            *p = Tensor::new(p.shape().to_vec(), data)
                .map_err(|_| Error::NonFinite { primitive: "optimizer" })?;
        }
        Ok(())
    }
}

fn write_back(net: &mut Network, params: Vec<Tensor>) {
    for (i, chunk) in params.chunks_exact(2).enumerate() {
        net.layers[i].w = chunk[0].clone();
        net.layers[i].b = chunk[1].clone();
    }
}

fn flat_params(net: &Network) -> Vec<Tensor> {
    net.layers
        .iter()
        .flat_map(|l| [l.w.clone(), l.b.clone()])
        .collect()
}

fn sample_batch(rng: &mut ChaCha8Rng, n: usize, batch: usize) -> Vec<usize> {
    (0..batch).map(|_| rng.gen_range(0..n)).collect()
}

fn sample_latent(rng: &mut ChaCha8Rng, batch: usize, dim: usize) -> Result<Tensor> {
    let data: Vec<f64> = (0..batch * dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor::new(vec![batch, dim], data)
}

/// A trained classifier plus its loss trace.
#[derive(Debug)]
pub struct ClassifierTraining {
    pub network: Network,
    pub loss_trace: Vec<f64>,
}

/// Trains a softmax classifier by minibatch cross-entropy.
pub fn train_classifier(data: &Dataset, cfg: &TrainConfig) -> Result<ClassifierTraining> {
    cfg.validate()?;
    let labels = data
        .y
        .as_ref()
        .ok_or_else(|| Error::Config("classifier training needs labels".into()))?;
    let num_classes = data.num_classes();
    let mut dims = vec![data.dim()];
    dims.extend_from_slice(&cfg.hidden);
    dims.push(num_classes);

    let mut rng = seeded_rng(cfg.seed);
    let mut net = Network::mlp(&dims, Head::Softmax, &mut rng)?;
    let mut opt = Optimizer::new(cfg, &param_sizes(&net));
    let mut trace = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let idx = sample_batch(&mut rng, data.len(), cfg.batch_size);
        let xb = data.x.gather_rows(&idx);
        let yb: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();

        let mut params = flat_params(&net);
        let step_result = (|| -> Result<(f64, Vec<Tensor>)> {
            let net_ref = &net;
            let (loss, tape) = forward(&params, |tape, ids| {
                let input = tape.constant(xb.clone());
                let logits = net_ref.build_logits(tape, input, ids)?;
                tape.softmax_cross_entropy(logits, &yb)
            })?;
            let ids = tape.leaves();
            let grads = backward(&tape, &ids)?;
            let gs: Vec<Tensor> = ids
                .iter()
                .map(|id| grads.gradient(*id).unwrap().clone())
                .collect();
            Ok((loss, gs))
        })();
        let (loss, grads) = step_result.map_err(|e| Error::Training {
            step,
            reason: e.to_string(),
        })?;
        let grad_refs: Vec<&Tensor> = grads.iter().collect();
        opt.step(&mut params, &grad_refs).map_err(|e| Error::Training {
            step,
            reason: e.to_string(),
        })?;
        write_back(&mut net, params);
        trace.push(loss);
    }
    Ok(ClassifierTraining {
        network: net,
        loss_trace: trace,
    })
}

fn param_sizes(net: &Network) -> Vec<usize> {
    net.layers
        .iter()
        .flat_map(|l| [l.w.len(), l.b.len()])
        .collect()
}

/// GAN training output: the two networks, emitted checkpoints, loss traces,
/// and any warnings (e.g. suspected discriminator collapse).
#[derive(Debug)]
pub struct GanTraining {
    pub generator: Network,
    pub discriminator: Network,
    pub checkpoints: Vec<Checkpoint>,
    pub d_loss_trace: Vec<f64>,
    pub g_loss_trace: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Alternating GAN training on unlabeled data in `[-1, 1]^n`.
pub fn train_gan(data: &Dataset, cfg: &TrainConfig) -> Result<GanTraining> {
    cfg.validate()?;
    if data.x.data().iter().any(|v| v.abs() > 1.0) {
        return Err(Error::Config(
            "GAN training data must be normalized to [-1, 1]".into(),
        ));
    }
    let dim = data.dim();
    let mut g_dims = vec![cfg.latent_dim];
    g_dims.extend_from_slice(&cfg.hidden);
    g_dims.push(dim);
    let mut d_dims = vec![dim];
    d_dims.extend_from_slice(&cfg.hidden);
    d_dims.push(1);

    let mut rng = seeded_rng(cfg.seed);
    let mut gen = Network::mlp(&g_dims, Head::Tanh, &mut rng)?;
    let mut disc = Network::mlp(&d_dims, Head::Sigmoid, &mut rng)?;
    let mut g_opt = Optimizer::new(cfg, &param_sizes(&gen));
    let mut d_opt = Optimizer::new(cfg, &param_sizes(&disc));

    let mut checkpoints = Vec::new();
    let mut d_trace = Vec::with_capacity(cfg.steps);
    let mut g_trace = Vec::with_capacity(cfg.steps);
    let mut warnings = Vec::new();
    let mut collapse_run = 0usize;
    let mut collapse_reported = false;

    let snapshot = |step: u64, gen: &Network, disc: &Network, rng: &ChaCha8Rng| {
        let mut params = Vec::new();
        for (name, t) in gen.named_params() {
            params.push((format!("generator.{name}"), t));
        }
        for (name, t) in disc.named_params() {
            params.push((format!("discriminator.{name}"), t));
        }
        Checkpoint::new(step, rng_state(rng), params)
    };

    for step in 0..cfg.steps {
        if let Some(every) = cfg.checkpoint_every {
            if every > 0 && step % every == 0 {
                checkpoints.push(snapshot(step as u64, &gen, &disc, &rng));
            }
        }

        let idx = sample_batch(&mut rng, data.len(), cfg.batch_size);
        let x_real = data.x.gather_rows(&idx);
        let z_d = sample_latent(&mut rng, cfg.batch_size, cfg.latent_dim)?;
        let x_fake = gen.predict(&z_d)?;

        // Discriminator ascends E[log D(x)] + E[log(1 - D(G(z)))].
        let mut d_params = flat_params(&disc);
        let d_step = (|| -> Result<(f64, Vec<Tensor>)> {
            let disc_ref = &disc;
            let (loss, tape) = forward(&d_params, |tape, ids| {
                let xr = tape.constant(x_real.clone());
                let xf = tape.constant(x_fake.clone());
                let p_real = disc_ref.build_output(tape, xr, ids)?;
                let p_fake = disc_ref.build_output(tape, xf, ids)?;
                let p_real = tape.clip(p_real, PROB_CLAMP, 1.0 - PROB_CLAMP)?;
                let p_fake = tape.clip(p_fake, PROB_CLAMP, 1.0 - PROB_CLAMP)?;
                let log_real = tape.log(p_real)?;
                let ones = tape.constant(Tensor::full(
                    tape.value(p_fake).shape().to_vec(),
                    1.0,
                )?);
                let one_minus = tape.sub(ones, p_fake)?;
                let log_fake = tape.log(one_minus)?;
                let m_real = tape.mean(log_real)?;
                let m_fake = tape.mean(log_fake)?;
                let v = tape.add(m_real, m_fake)?;
                tape.scale(v, -1.0)
            })?;
            let ids = tape.leaves();
            let grads = backward(&tape, &ids)?;
            Ok((
                loss,
                ids.iter()
                    .map(|id| grads.gradient(*id).unwrap().clone())
                    .collect(),
            ))
        })()
        .map_err(|e| Error::Training {
            step,
            reason: format!("discriminator: {e}"),
        })?;
        let grad_refs: Vec<&Tensor> = d_step.1.iter().collect();
        d_opt.step(&mut d_params, &grad_refs).map_err(|e| Error::Training {
            step,
            reason: e.to_string(),
        })?;
        write_back(&mut disc, d_params);
        d_trace.push(d_step.0);

        // Generator ascends E[log D(G(z))] (non-saturating surrogate).
        let z_g = sample_latent(&mut rng, cfg.batch_size, cfg.latent_dim)?;
        let mut g_params = flat_params(&gen);
        let g_step = (|| -> Result<(f64, Vec<Tensor>)> {
            let gen_ref = &gen;
            let disc_ref = &disc;
            let (loss, tape) = forward(&g_params, |tape, ids| {
                let z = tape.constant(z_g.clone());
                let x_g = gen_ref.build_output(tape, z, ids)?;
                let d_ids = disc_ref.register_params(tape, ParamMode::Constant);
                let p = disc_ref.build_output(tape, x_g, &d_ids)?;
                let p = tape.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)?;
                let lp = tape.log(p)?;
                let m = tape.mean(lp)?;
                tape.scale(m, -1.0)
            })?;
            let ids = tape.leaves();
            let grads = backward(&tape, &ids)?;
            Ok((
                loss,
                ids.iter()
                    .map(|id| grads.gradient(*id).unwrap().clone())
                    .collect(),
            ))
        })()
        .map_err(|e| Error::Training {
            step,
            reason: format!("generator: {e}"),
        })?;
        let grad_refs: Vec<&Tensor> = g_step.1.iter().collect();
        g_opt.step(&mut g_params, &grad_refs).map_err(|e| Error::Training {
            step,
            reason: e.to_string(),
        })?;
        write_back(&mut gen, g_params);
        g_trace.push(g_step.0);

        // A discriminator loss pinned at zero for a long stretch means D
        // separates real from generated perfectly: possible mode collapse.
        if d_step.0.abs() < 1e-3 {
            collapse_run += 1;
            if collapse_run >= 500 && !collapse_reported {
                warnings.push(format!(
                    "discriminator loss stuck at 0 for 500 steps ending at step {step}; \
                     possible mode collapse"
                ));
                collapse_reported = true;
            }
        } else {
            collapse_run = 0;
        }
    }
    checkpoints.push(snapshot(cfg.steps as u64, &gen, &disc, &rng));

    Ok(GanTraining {
        generator: gen,
        discriminator: disc,
        checkpoints,
        d_loss_trace: d_trace,
        g_loss_trace: g_trace,
        warnings,
    })
}

/// Empirical two-player value `mean(log D(x_real)) + mean(log(1 - D(x_fake)))`
/// with the probability clamp applied; used by trainers' diagnostics and the
/// ascent-direction checks.
pub fn gan_value(disc: &Network, x_real: &Tensor, x_fake: &Tensor) -> Result<f64> {
    let p_real = disc.predict(x_real)?;
    let p_fake = disc.predict(x_fake)?;
    let clamp = |v: f64| v.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let a: f64 = p_real.data().iter().map(|&p| clamp(p).ln()).sum::<f64>()
        / p_real.len() as f64;
    let b: f64 = p_fake
        .data()
        .iter()
        .map(|&p| (1.0 - clamp(p)).ln())
        .sum::<f64>()
        / p_fake.len() as f64;
    Ok(a + b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_affine_layer_is_identity() {
        let layer = Layer {
            w: Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            b: Tensor::zeros(vec![2]),
            act: Activation::None,
        };
        let net = Network::from_layers(vec![layer], Head::None).unwrap();
        let x = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let y = net.predict(&x).unwrap();
        assert_eq!(y.data(), &[1.0, 0.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = seeded_rng(3);
        let net = Network::mlp(&[4, 8, 3], Head::Softmax, &mut rng).unwrap();
        let x = Tensor::from_rows(&[vec![0.1, -0.2, 0.5, 0.9], vec![1.0, 1.0, -1.0, 0.0]])
            .unwrap();
        let p = net.predict(&x).unwrap();
        for r in 0..p.rows() {
            let s: f64 = p.row(r).iter().sum();
            assert!((s - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn predict_rejects_wrong_width() {
        let mut rng = seeded_rng(3);
        let net = Network::mlp(&[4, 8, 3], Head::Softmax, &mut rng).unwrap();
        let x = Tensor::from_rows(&[vec![0.1, -0.2]]).unwrap();
        assert!(net.predict(&x).is_err());
    }

    #[test]
    fn mlp_dims_chain_and_names_unique() {
        let mut rng = seeded_rng(0);
        let net = Network::mlp(&[2, 5, 7, 3], Head::Softmax, &mut rng).unwrap();
        let names: Vec<String> = net.named_params().into_iter().map(|(n, _)| n).collect();
        let mut unique = names.clone();
        unique.sort();
        unique.dedup();
        assert_eq!(names.len(), unique.len());
        assert_eq!(net.input_dim(), 2);
        assert_eq!(net.output_dim(), 3);
    }

    #[test]
    fn from_named_params_round_trip() {
        let mut rng = seeded_rng(11);
        let net = Network::mlp(&[3, 6, 2], Head::Softmax, &mut rng).unwrap();
        let rebuilt = Network::from_named_params(&net.named_params(), Head::Softmax).unwrap();
        let x = Tensor::from_rows(&[vec![0.3, -0.4, 0.2]]).unwrap();
        assert_eq!(net.predict(&x).unwrap(), rebuilt.predict(&x).unwrap());
    }

    #[test]
    fn single_class_training_predicts_that_class() {
        let x = Tensor::from_rows(&[vec![0.5, 0.1], vec![-0.3, 0.2], vec![0.1, 0.9]]).unwrap();
        let data = Dataset {
            name: "degenerate".into(),
            x,
            y: Some(vec![0, 0, 0]),
            norm: crate::data::Normalization::FixedScale { scale: 1.0 },
            split: crate::data::SplitTag::Full,
        };
        let mut cfg = TrainConfig::classifier_default(5);
        cfg.steps = 20;
        let trained = train_classifier(&data, &cfg).unwrap();
        let held_out = Tensor::from_rows(&[vec![0.9, -0.9], vec![-0.8, 0.8]]).unwrap();
        assert_eq!(trained.network.predict_labels(&held_out).unwrap(), vec![0, 0]);
    }

    #[test]
    fn gan_rejects_out_of_range_data() {
        let x = Tensor::from_rows(&[vec![1.5, 0.0]]).unwrap();
        let data = Dataset {
            name: "bad".into(),
            x,
            y: None,
            norm: crate::data::Normalization::FixedScale { scale: 1.0 },
            split: crate::data::SplitTag::Full,
        };
        assert!(train_gan(&data, &TrainConfig::gan_default(1)).is_err());
    }
}
