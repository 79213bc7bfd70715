//! Gradient and forward-value oracles for the tape engine.
//!
//! Every primitive and a batch of randomized composites are checked against
//! central finite differences at h = 1e-4 with the elementwise criterion
//! |analytic - fd| <= 1e-4 * (1 + |fd|). Kinked primitives (relu, clip,
//! sign) are probed away from their kinks, and random composites are
//! rejected if any relu input comes too close to zero for the probe width.

use cowboy::autodiff::{backward, forward, NodeId, Tape};
use cowboy::nets::{Head, Network, ParamMode};
use cowboy::rng::seeded_rng;
use cowboy::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-4;
const TOL: f64 = 1e-4;

type BuildFn<'a> = &'a dyn Fn(&mut Tape, &[NodeId]) -> cowboy::Result<NodeId>;

fn loss_of(leaves: &[Tensor], builder: BuildFn) -> f64 {
    forward(leaves, |t, ids| builder(t, ids)).unwrap().0
}

fn bumped(t: &Tensor, flat: usize, by: f64) -> Tensor {
    let mut data = t.data().to_vec();
    data[flat] += by;
    Tensor::new(t.shape().to_vec(), data).unwrap()
}

/// Central-difference check of every leaf gradient.
fn check_gradients(name: &str, leaves: &[Tensor], builder: BuildFn) {
    let (_, tape) = forward(leaves, |t, ids| builder(t, ids)).unwrap();
    let ids = tape.leaves();
    let grads = backward(&tape, &ids).unwrap();
    for (li, id) in ids.iter().enumerate() {
        let analytic = grads.gradient(*id).unwrap();
        for e in 0..analytic.len() {
            let mut plus = leaves.to_vec();
            plus[li] = bumped(&plus[li], e, H);
            let mut minus = leaves.to_vec();
            minus[li] = bumped(&minus[li], e, -H);
            let fd = (loss_of(&plus, builder) - loss_of(&minus, builder)) / (2.0 * H);
            let a = analytic.data()[e];
            assert!(
                (a - fd).abs() <= TOL * (1.0 + fd.abs()),
                "{name}: leaf {li} element {e}: analytic {a} vs fd {fd}"
            );
        }
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(shape, data).unwrap()
}

/// Keeps kinked inputs at least `margin` away from the kink.
fn rand_tensor_away_from(
    rng: &mut ChaCha8Rng,
    shape: Vec<usize>,
    kinks: &[f64],
    margin: f64,
) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| loop {
            let v: f64 = rng.gen_range(-2.0..2.0);
            if kinks.iter().all(|k| (v - k).abs() > margin) {
                break v;
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

#[test]
fn every_primitive_matches_finite_differences() {
    let mut rng = seeded_rng(0x9d1f);

    let a = rand_tensor(&mut rng, vec![3, 2], -1.5, 1.5);
    let b = rand_tensor(&mut rng, vec![3, 2], -1.5, 1.5);
    check_gradients("add", &[a.clone(), b.clone()], &|t, ids| {
        let s = t.add(ids[0], ids[1])?;
        t.sum(s)
    });
    check_gradients("sub", &[a.clone(), b.clone()], &|t, ids| {
        let s = t.sub(ids[0], ids[1])?;
        t.l2_norm_sq(s)
    });
    check_gradients("mul", &[a.clone(), b.clone()], &|t, ids| {
        let s = t.mul(ids[0], ids[1])?;
        t.mean(s)
    });
    check_gradients("scale", &[a.clone()], &|t, ids| {
        let s = t.scale(ids[0], -2.75)?;
        t.sum(s)
    });

    let x = rand_tensor(&mut rng, vec![2, 3], -1.0, 1.0);
    let w = rand_tensor(&mut rng, vec![3, 4], -1.0, 1.0);
    let bias = rand_tensor(&mut rng, vec![4], -0.5, 0.5);
    check_gradients("matmul", &[x.clone(), w.clone()], &|t, ids| {
        let m = t.matmul(ids[0], ids[1])?;
        t.l2_norm_sq(m)
    });
    check_gradients("affine", &[x.clone(), w.clone(), bias.clone()], &|t, ids| {
        let m = t.affine(ids[0], ids[1], ids[2])?;
        t.l2_norm_sq(m)
    });

    let kinky = rand_tensor_away_from(&mut rng, vec![4, 2], &[0.0], 0.05);
    check_gradients("relu", &[kinky.clone()], &|t, ids| {
        let r = t.relu(ids[0])?;
        t.sum(r)
    });
    check_gradients("tanh", &[a.clone()], &|t, ids| {
        let r = t.tanh(ids[0])?;
        t.mean(r)
    });
    check_gradients("sigmoid", &[a.clone()], &|t, ids| {
        let r = t.sigmoid(ids[0])?;
        t.l2_norm_sq(r)
    });

    let positive = rand_tensor(&mut rng, vec![3, 3], 0.2, 3.0);
    check_gradients("log", &[positive], &|t, ids| {
        let r = t.log(ids[0])?;
        t.sum(r)
    });

    let clip_in = rand_tensor_away_from(&mut rng, vec![4, 2], &[-0.8, 0.8], 0.05);
    check_gradients("clip", &[clip_in], &|t, ids| {
        let r = t.clip(ids[0], -0.8, 0.8)?;
        t.sum(r)
    });

    let sign_in = rand_tensor_away_from(&mut rng, vec![4, 2], &[0.0], 0.05);
    check_gradients("sign", &[sign_in], &|t, ids| {
        let r = t.sign(ids[0])?;
        t.sum(r)
    });

    let logits = rand_tensor(&mut rng, vec![4, 3], -2.0, 2.0);
    check_gradients("softmax_cross_entropy", &[logits], &|t, ids| {
        t.softmax_cross_entropy(ids[0], &[0, 2, 1, 1])
    });

    check_gradients("mean", &[a.clone()], &|t, ids| t.mean(ids[0]));
    check_gradients("sum", &[a.clone()], &|t, ids| t.sum(ids[0]));
    check_gradients("l2_norm_sq", &[a], &|t, ids| t.l2_norm_sq(ids[0]));
}

/// Randomized three-layer composite: affine stacks with random smooth
/// activations, a random elementwise mix, and a random scalar reduction.
struct CompositePlan {
    acts: [u8; 3],
    mix: u8,
    reduction: u8,
    labels: Vec<usize>,
}

impl CompositePlan {
    fn draw(rng: &mut ChaCha8Rng) -> CompositePlan {
        CompositePlan {
            acts: [rng.gen_range(0..3), rng.gen_range(0..3), rng.gen_range(0..3)],
            mix: rng.gen_range(0..3),
            reduction: rng.gen_range(0..3),
            labels: (0..4).map(|_| rng.gen_range(0..2)).collect(),
        }
    }

    fn leaves(rng: &mut ChaCha8Rng) -> Vec<Tensor> {
        vec![
            rand_tensor(rng, vec![4, 3], -1.0, 1.0),  // x
            rand_tensor(rng, vec![3, 5], -0.8, 0.8),  // W1
            rand_tensor(rng, vec![5], -0.3, 0.3),     // b1
            rand_tensor(rng, vec![5, 4], -0.8, 0.8),  // W2
            rand_tensor(rng, vec![4], -0.3, 0.3),     // b2
            rand_tensor(rng, vec![4, 2], -0.8, 0.8),  // W3
            rand_tensor(rng, vec![2], -0.3, 0.3),     // b3
        ]
    }

    /// Builds the composite; also reports the smallest |relu input| met, so
    /// kink-adjacent draws can be rejected.
    fn build(
        &self,
        t: &mut Tape,
        ids: &[NodeId],
        relu_margin: &mut f64,
    ) -> cowboy::Result<NodeId> {
        let mut h = ids[0];
        for layer in 0..3 {
            let (w, b) = (ids[1 + 2 * layer], ids[2 + 2 * layer]);
            let pre = t.affine(h, w, b)?;
            h = match self.acts[layer] {
                0 => t.tanh(pre)?,
                1 => t.sigmoid(pre)?,
                _ => {
                    let margin = t
                        .value(pre)
                        .data()
                        .iter()
                        .map(|v| v.abs())
                        .fold(f64::INFINITY, f64::min);
                    *relu_margin = relu_margin.min(margin);
                    t.relu(pre)?
                }
            };
        }
        let mixed = match self.mix {
            0 => h,
            1 => t.mul(h, h)?,
            _ => {
                let s = t.scale(h, 1.5)?;
                t.add(h, s)?
            }
        };
        match self.reduction {
            0 => t.mean(mixed),
            1 => t.l2_norm_sq(mixed),
            _ => t.softmax_cross_entropy(mixed, &self.labels),
        }
    }
}

#[test]
fn twenty_random_composites_match_finite_differences() {
    let mut accepted = 0;
    let mut seed = 1u64;
    while accepted < 20 {
        let mut rng = seeded_rng(seed);
        seed += 1;
        let plan = CompositePlan::draw(&mut rng);
        let leaves = CompositePlan::leaves(&mut rng);

        // Reject draws whose relu inputs sit within 100h of the kink.
        let mut margin = f64::INFINITY;
        let ok = forward(&leaves, |t, ids| plan.build(t, ids, &mut margin)).is_ok();
        if !ok || margin < 1e-2 {
            continue;
        }
        check_gradients(
            &format!("composite seed {}", seed - 1),
            &leaves,
            &|t, ids| {
                let mut unused = f64::INFINITY;
                plan.build(t, ids, &mut unused)
            },
        );
        accepted += 1;
    }
}

/// Independent scalar-recursion oracle: evaluates a fixed 3-layer network
/// with plain nested loops over `Vec<f64>`, no tensor or tape code.
#[test]
fn forward_value_matches_scalar_recursion_oracle() {
    let mut rng = seeded_rng(0xabcd);
    let x = rand_tensor(&mut rng, vec![4, 3], -1.0, 1.0);
    let w1 = rand_tensor(&mut rng, vec![3, 5], -0.8, 0.8);
    let b1 = rand_tensor(&mut rng, vec![5], -0.3, 0.3);
    let w2 = rand_tensor(&mut rng, vec![5, 4], -0.8, 0.8);
    let b2 = rand_tensor(&mut rng, vec![4], -0.3, 0.3);
    let w3 = rand_tensor(&mut rng, vec![4, 2], -0.8, 0.8);
    let b3 = rand_tensor(&mut rng, vec![2], -0.3, 0.3);
    let labels = vec![0usize, 1, 1, 0];

    let leaves = vec![x, w1, b1, w2, b2, w3, b3];
    let (tape_loss, _) = forward(&leaves, |t, ids| {
        let h1 = t.affine(ids[0], ids[1], ids[2])?;
        let h1 = t.tanh(h1)?;
        let h2 = t.affine(h1, ids[3], ids[4])?;
        let h2 = t.sigmoid(h2)?;
        let logits = t.affine(h2, ids[5], ids[6])?;
        t.softmax_cross_entropy(logits, &labels)
    })
    .unwrap();

    // Same formula, scalar recursion only.
    let dense = |input: &[Vec<f64>], w: &Tensor, b: &Tensor| -> Vec<Vec<f64>> {
        let (wi, wo) = (w.shape()[0], w.shape()[1]);
        input
            .iter()
            .map(|row| {
                (0..wo)
                    .map(|o| {
                        let mut acc = b.data()[o];
                        for i in 0..wi {
                            acc += row[i] * w.data()[i * wo + o];
                        }
                        acc
                    })
                    .collect()
            })
            .collect()
    };
    let rows: Vec<Vec<f64>> = (0..4).map(|r| leaves[0].row(r).to_vec()).collect();
    let h1: Vec<Vec<f64>> = dense(&rows, &leaves[1], &leaves[2])
        .iter()
        .map(|r| r.iter().map(|v| v.tanh()).collect())
        .collect();
    let h2: Vec<Vec<f64>> = dense(&h1, &leaves[3], &leaves[4])
        .iter()
        .map(|r| r.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect())
        .collect();
    let logits = dense(&h2, &leaves[5], &leaves[6]);
    let mut oracle_loss = 0.0;
    for (row, &label) in logits.iter().zip(&labels) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        oracle_loss += lse - row[label];
    }
    oracle_loss /= labels.len() as f64;

    assert!(
        (tape_loss - oracle_loss).abs() <= 1e-12 * (1.0 + oracle_loss.abs()),
        "tape {tape_loss} vs oracle {oracle_loss}"
    );
}

/// Full-classifier gradient against finite differences, both with respect
/// to the input batch and to every parameter.
#[test]
fn classifier_cross_entropy_gradient_matches_finite_differences() {
    let mut rng = seeded_rng(41);
    let net = Network::mlp(&[2, 8, 2], Head::Softmax, &mut rng).unwrap();
    let x = rand_tensor(&mut rng, vec![4, 2], -1.0, 1.0);
    let labels = vec![0usize, 1, 0, 1];

    // Input gradient: parameters constant, batch is the leaf.
    check_gradients("classifier wrt input", &[x.clone()], &|t, ids| {
        let params = net.register_params(t, ParamMode::Constant);
        let logits = net.build_logits(t, ids[0], &params)?;
        t.softmax_cross_entropy(logits, &labels)
    });

    // Parameter gradients: batch constant, parameters are the leaves.
    let params: Vec<Tensor> = net
        .named_params()
        .into_iter()
        .map(|(_, tensor)| tensor)
        .collect();
    check_gradients("classifier wrt params", &params, &|t, ids| {
        let input = t.constant(x.clone());
        let logits = net.build_logits(t, input, ids)?;
        t.softmax_cross_entropy(logits, &labels)
    });
}

/// Backward is linear: the adjoint of a*f + b*g equals a*adj(f) + b*adj(g)
/// on shared leaves.
#[test]
fn backward_is_linear_in_the_output() {
    let mut rng = seeded_rng(77);
    let x = rand_tensor(&mut rng, vec![3, 2], -1.0, 1.0);
    let y = rand_tensor(&mut rng, vec![3, 2], -1.0, 1.0);
    let leaves = vec![x, y];
    let (alpha, beta) = (1.75, -0.4);

    let f = |t: &mut Tape, ids: &[NodeId]| -> cowboy::Result<NodeId> {
        let m = t.mul(ids[0], ids[1])?;
        t.sum(m)
    };
    let g = |t: &mut Tape, ids: &[NodeId]| -> cowboy::Result<NodeId> {
        let s = t.tanh(ids[0])?;
        let d = t.sub(s, ids[1])?;
        t.l2_norm_sq(d)
    };

    let grad_of = |builder: &dyn Fn(&mut Tape, &[NodeId]) -> cowboy::Result<NodeId>| {
        let (_, tape) = forward(&leaves, |t, ids| builder(t, ids)).unwrap();
        let ids = tape.leaves();
        let grads = backward(&tape, &ids).unwrap();
        ids.iter()
            .map(|id| grads.gradient(*id).unwrap().clone())
            .collect::<Vec<_>>()
    };

    let gf = grad_of(&f);
    let gg = grad_of(&g);
    let gc = grad_of(&|t: &mut Tape, ids: &[NodeId]| {
        let fa = f(t, ids)?;
        let ga = g(t, ids)?;
        let fa = t.scale(fa, alpha)?;
        let ga = t.scale(ga, beta)?;
        t.add(fa, ga)
    });

    for leaf in 0..leaves.len() {
        for e in 0..leaves[leaf].len() {
            let expect = alpha * gf[leaf].data()[e] + beta * gg[leaf].data()[e];
            let got = gc[leaf].data()[e];
            assert!(
                (expect - got).abs() <= 1e-10 * (1.0 + expect.abs()),
                "leaf {leaf} element {e}: {got} vs {expect}"
            );
        }
    }
}

/// Identical seeds and inputs produce bitwise-identical losses and gradients.
#[test]
fn losses_and_gradients_are_bitwise_deterministic() {
    let run = || {
        let mut rng = seeded_rng(2024);
        let net = Network::mlp(&[3, 16, 4], Head::Softmax, &mut rng).unwrap();
        let x = rand_tensor(&mut rng, vec![5, 3], -1.0, 1.0);
        let labels = vec![0usize, 3, 2, 1, 0];
        let (loss, tape) = forward(&[x], |t, ids| {
            let params = net.register_params(t, ParamMode::Constant);
            let logits = net.build_logits(t, ids[0], &params)?;
            t.softmax_cross_entropy(logits, &labels)
        })
        .unwrap();
        let leaf = tape.leaves()[0];
        let grads = backward(&tape, &[leaf]).unwrap();
        let bits: Vec<u64> = grads
            .gradient(leaf)
            .unwrap()
            .data()
            .iter()
            .map(|v| v.to_bits())
            .collect();
        (loss.to_bits(), bits)
    };
    assert_eq!(run(), run());
}
