//! Scratch experiment: trains the 2D toy stack and prints the detection and
//! cleaning numbers the acceptance thresholds care about.

use cowboy::attacks::{run_attack, AttackConfig, AttackKind};
use cowboy::data::make_two_gaussians;
use cowboy::defense::{clean_batch, cleaned_tensor, mean_score, CleaningConfig};
use cowboy::nets::{train_classifier, train_gan, TrainConfig};
use cowboy::rng::derive_seed;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let master: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let clf_steps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(400);
    let gan_lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let sigma: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let mode: String = args.get(5).cloned().unwrap_or_else(|| "all".into());
    let gan_batch: usize = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(64);
    let eps_list: Vec<f64> = args
        .get(7)
        .map(|s| s.split(',').map(|v| v.parse().unwrap()).collect())
        .unwrap_or_else(|| vec![0.3, 0.4]);
    println!(
        "master={master} clf_steps={clf_steps} gan_lr={gan_lr} sigma={sigma} mode={mode} batch={gan_batch}"
    );
    let t0 = Instant::now();

    let data = make_two_gaussians(500, derive_seed(master, "data")).unwrap();
    let (train, _valid, test) = data.split3(0.6, 0.2, derive_seed(master, "split"));

    let mut ccfg = TrainConfig::classifier_default(derive_seed(master, "classifier"));
    ccfg.steps = clf_steps;
    let clf = train_classifier(&train, &ccfg).unwrap();
    let acc = clf.network.accuracy(&test.x, test.labels()).unwrap();
    // Per-class accuracy exposes boundary offset.
    let (mut acc0, mut n0, mut acc1, mut n1) = (0.0, 0, 0.0, 0);
    let preds = clf.network.predict_labels(&test.x).unwrap();
    for (i, &l) in test.labels().iter().enumerate() {
        if l == 0 { n0 += 1; if preds[i] == 0 { acc0 += 1.0; } }
        else { n1 += 1; if preds[i] == 1 { acc1 += 1.0; } }
    }
    println!("classifier acc {acc:.4} (class0 {:.3}, class1 {:.3})", acc0 / n0 as f64, acc1 / n1 as f64);

    if mode == "clf" {
        // Boundary offset along the cluster diagonal: binary-search the
        // argmax flip between the two mapped centers.
        let pred_at = |t: f64| -> usize {
            let p = cowboy::Tensor::new(vec![1, 2], vec![t, t]).unwrap();
            clf.network.predict_labels(&p).unwrap()[0]
        };
        let (mut lo, mut hi) = (-0.375f64, 0.375f64);
        if pred_at(lo) == 1 && pred_at(hi) == 0 {
            for _ in 0..40 {
                let mid = 0.5 * (lo + hi);
                if pred_at(mid) == 1 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            // c is in coordinate-sum units: s = x1 + x2 = 2t at the flip.
            println!("boundary offset c = {:+.4}", lo + hi);
        } else {
            println!("boundary offset: not bracketed");
        }
        // Sign-pattern histogram of the fgsm move at eps=1.0.
        let det_cfg = AttackConfig {
            epsilon: 1.0,
            alpha: 0.25,
            steps: 8,
            seed: derive_seed(master, "det"),
            ..AttackConfig::default()
        };
        let fgsm_det =
            run_attack(AttackKind::Fgsm, &clf.network, &test.x, test.labels(), &det_cfg).unwrap();
        let mut counts = std::collections::BTreeMap::new();
        for i in 0..test.len() {
            let d: Vec<i8> = fgsm_det
                .x_adv
                .row(i)
                .iter()
                .zip(test.x.row(i))
                .map(|(a, b)| {
                    let diff = a - b;
                    if diff > 1e-9 {
                        1
                    } else if diff < -1e-9 {
                        -1
                    } else {
                        0
                    }
                })
                .collect();
            *counts.entry(format!("{d:?}")).or_insert(0usize) += 1;
        }
        println!("move patterns: {counts:?}");
        return;
    }

    let mut gcfg = TrainConfig::gan_default(derive_seed(master, "gan"));
    gcfg.steps = 2000;
    gcfg.learning_rate = gan_lr;
    gcfg.batch_size = gan_batch;
    gcfg.checkpoint_every = Some(250);
    let t1 = Instant::now();
    let gan = train_gan(&train, &gcfg).unwrap();
    println!("gan trained in {:?} warnings={:?}", t1.elapsed(), gan.warnings);

    let d_real = mean_score(&gan.discriminator, &test.x).unwrap();
    println!("mean D(real) = {d_real:.4}");

    // Detection-grade FGSM at epsilon 1.0
    let det_cfg = AttackConfig {
        epsilon: 1.0,
        alpha: 0.25,
        steps: 8,
        seed: derive_seed(master, "det"),
        ..AttackConfig::default()
    };
    let fgsm_det = run_attack(AttackKind::Fgsm, &clf.network, &test.x, test.labels(), &det_cfg).unwrap();
    let d_adv = mean_score(&gan.discriminator, &fgsm_det.x_adv).unwrap();
    println!("mean D(fgsm eps=1.0) = {d_adv:.4}  separation = {:.4}", d_real - d_adv);

    // Off-manifold uniform scores
    {
        use rand::Rng;
        let mut rng = cowboy::rng::seeded_rng(derive_seed(master, "uniform"));
        let mut pts = Vec::new();
        while pts.len() < 400 * 2 {
            let x = rng.gen_range(-8.0f64..8.0);
            let y = rng.gen_range(-8.0f64..8.0);
            let near0 = ((x - 3.0).powi(2) + (y - 3.0).powi(2)).sqrt() <= 3.0;
            let near1 = ((x + 3.0).powi(2) + (y + 3.0).powi(2)).sqrt() <= 3.0;
            if !near0 && !near1 {
                pts.push(x / 8.0);
                pts.push(y / 8.0);
            }
        }
        let u = cowboy::Tensor::new(vec![400, 2], pts).unwrap();
        let d_u = mean_score(&gan.discriminator, &u).unwrap();
        println!("mean D(uniform off-manifold) = {d_u:.4}");
    }

    // Voronoi ceiling: accuracy of nearest-center classification.
    let voronoi_acc = |x: &cowboy::Tensor, labels: &[usize]| -> f64 {
        let mut hits = 0;
        for (i, &l) in labels.iter().enumerate() {
            let r = x.row(i);
            let d0 = (r[0] - 0.375).powi(2) + (r[1] - 0.375).powi(2);
            let d1 = (r[0] + 0.375).powi(2) + (r[1] + 0.375).powi(2);
            let nearest = if d0 <= d1 { 0 } else { 1 };
            if nearest == l {
                hits += 1;
            }
        }
        hits as f64 / labels.len() as f64
    };

    if mode == "sweep" {
        for ck in &gan.checkpoints {
            let disc = cowboy::nets::Network::from_named_params(
                &ck.params_with_prefix("discriminator"),
                cowboy::nets::Head::Sigmoid,
            )
            .unwrap();
            let d_real = mean_score(&disc, &test.x).unwrap();
            let d_adv = mean_score(&disc, &fgsm_det.x_adv).unwrap();
            println!(
                "step {:>5}: D(real)={:.3} D(adv)={:.3} sep={:+.3}",
                ck.step,
                d_real,
                d_adv,
                d_real - d_adv
            );
        }
        println!("total {:?}", t0.elapsed());
        return;
    }

    if mode == "detect" || mode == "grid" {
        if mode == "grid" {
            // D landscape over [-1,1]^2
            println!("D grid (rows y=+1 down to -1):");
            for gy in (0..9).rev() {
                let mut row = String::new();
                for gx in 0..9 {
                    let x = -1.0 + 0.25 * gx as f64;
                    let y = -1.0 + 0.25 * gy as f64;
                    let t = cowboy::Tensor::new(vec![1, 2], vec![x, y]).unwrap();
                    let s = mean_score(&gan.discriminator, &t).unwrap();
                    row.push_str(&format!("{s:5.2} "));
                }
                println!("  {row}");
            }
            // Sign-pattern histogram of the FGSM direction over the test set.
            let mut counts = std::collections::BTreeMap::new();
            let delta = &fgsm_det;
            for i in 0..test.len() {
                let d: Vec<i8> = delta.x_adv.row(i)
                    .iter()
                    .zip(test.x.row(i))
                    .map(|(a, b)| {
                        let diff = a - b;
                        if diff > 1e-9 { 1 } else if diff < -1e-9 { -1 } else { 0 }
                    })
                    .collect();
                *counts.entry(format!("{d:?}")).or_insert(0usize) += 1;
            }
            println!("fgsm eps=1.0 move patterns: {counts:?}");
            let mean_adv_pos: Vec<f64> = (0..2)
                .map(|c| {
                    (0..test.len()).map(|i| delta.x_adv.row(i)[c]).sum::<f64>() / test.len() as f64
                })
                .collect();
            println!("mean adv position {mean_adv_pos:?}");
        }
        println!("total {:?}", t0.elapsed());
        return;
    }

    // Cleaning real samples should approximately preserve them.
    {
        let ccfg = CleaningConfig {
            sigma,
            lambda_d: 1.0,
            seed: derive_seed(master, "clean"),
            ..CleaningConfig::default()
        };
        let cleaned = clean_batch(&gan.generator, &gan.discriminator, &test.x, &ccfg).unwrap();
        let xc = cleaned_tensor(&cleaned).unwrap();
        let acc_clean_real = clf.network.accuracy(&xc, test.labels()).unwrap();
        println!("clean(real) acc = {acc_clean_real:.3} (orig {acc:.3})");
    }

    // Cleaning sweep: epsilon for the sign attacks from eps_list[0], VAM
    // uses eps_list[1] (L2) with a wide probe. "crit" mode trims to
    // fgsm+vam (the sign attacks share landing geometry).
    {
        let eps = eps_list[0];
        let vam_eps = eps_list.get(1).copied().unwrap_or(0.8);
        println!("--- table eps = {eps} vam_eps = {vam_eps}");
        let kinds: &[AttackKind] = if mode == "crit" {
            &[AttackKind::Fgsm, AttackKind::Vam]
        } else {
            &AttackKind::ALL
        };
        for &kind in kinds {
            let acfg = if kind == AttackKind::Vam {
                AttackConfig {
                    epsilon: vam_eps,
                    alpha: vam_eps,
                    steps: 1,
                    vam_xi: 0.3,
                    vam_power_iters: 2,
                    seed: derive_seed(master, kind.name()),
                    ..AttackConfig::default()
                }
            } else {
                AttackConfig {
                    epsilon: eps,
                    alpha: (eps / 4.0).min(eps),
                    steps: 8,
                    mu: 1.0,
                    seed: derive_seed(master, kind.name()),
                    ..AttackConfig::default()
                }
            };
            let batch = run_attack(kind, &clf.network, &test.x, test.labels(), &acfg).unwrap();
            let acc_adv = clf.network.accuracy(&batch.x_adv, test.labels()).unwrap();
            let ceiling = voronoi_acc(&batch.x_adv, test.labels());

            for lambda in [1.0, 0.0] {
                let ccfg = CleaningConfig {
                    sigma,
                    lambda_d: lambda,
                    seed: derive_seed(master, "clean"),
                    ..CleaningConfig::default()
                };
                let cleaned = clean_batch(&gan.generator, &gan.discriminator, &batch.x_adv, &ccfg).unwrap();
                let xc = cleaned_tensor(&cleaned).unwrap();
                let acc_clean = clf.network.accuracy(&xc, test.labels()).unwrap();
                let d_clean = mean_score(&gan.discriminator, &xc).unwrap();
                let d_advs = mean_score(&gan.discriminator, &batch.x_adv).unwrap();
                println!(
                    "{:>5} λ={} advAcc={:.3} cleanAcc={:.3} voronoiCeil={:.3} D(adv)={:.3} D(clean)={:.3}",
                    kind.name(), lambda, acc_adv, acc_clean, ceiling, d_advs, d_clean
                );
            }
        }
    }
    println!("total {:?}", t0.elapsed());
}
