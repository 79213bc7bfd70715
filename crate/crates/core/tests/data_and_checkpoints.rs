//! IDX parsing, dataset construction, and checkpoint round-trips.

use std::fs;

use cowboy::checkpoint::Checkpoint;
use cowboy::data::{
    idx_image_bytes, idx_label_bytes, load_idx_images, make_two_gaussians, split_indices,
};
use cowboy::nets::{train_gan, Head, Network, TrainConfig};
use cowboy::rng::seeded_rng;
use cowboy::tensor::Tensor;
use cowboy::Error;
use proptest::prelude::*;
use tempfile::TempDir;

fn write_fixture(dir: &TempDir, images: &[Vec<u8>], rows: usize, cols: usize, labels: &[u8]) -> (std::path::PathBuf, std::path::PathBuf) {
    let ip = dir.path().join("images.idx");
    let lp = dir.path().join("labels.idx");
    fs::write(&ip, idx_image_bytes(images, rows, cols)).unwrap();
    fs::write(&lp, idx_label_bytes(labels)).unwrap();
    (ip, lp)
}

#[test]
fn pixel_endpoints_map_to_plus_minus_one() {
    let dir = TempDir::new().unwrap();
    let (ip, lp) = write_fixture(
        &dir,
        &[vec![0u8; 16], vec![255u8; 16]],
        4,
        4,
        &[0, 1],
    );
    let d = load_idx_images(&ip, &lp, 2, 4).unwrap();
    assert!(d.x.row(0).iter().all(|&v| v == -1.0));
    assert!(d.x.row(1).iter().all(|&v| v == 1.0));
    assert_eq!(d.labels(), &[0, 1]);
}

#[test]
fn limit_beyond_count_names_both_numbers() {
    let dir = TempDir::new().unwrap();
    let (ip, lp) = write_fixture(&dir, &[vec![0u8; 16]], 4, 4, &[0]);
    let err = load_idx_images(&ip, &lp, 5, 4).unwrap_err();
    match err {
        Error::IdxLimit { limit, available } => {
            assert_eq!((limit, available), (5, 1));
        }
        other => panic!("wrong error {other:?}"),
    }
}

#[test]
fn downsampling_averages_each_block() {
    // 28x28 image whose pixel value encodes its 2x2 block, so every pooled
    // output equals its hand-computed block mean.
    let mut img = vec![0u8; 28 * 28];
    for y in 0..28 {
        for x in 0..28 {
            img[y * 28 + x] = ((y / 2) * 14 + (x / 2)) as u8;
        }
    }
    // Perturb one block to a non-uniform pattern: mean of {10, 20, 30, 40}.
    img[0] = 10;
    img[1] = 20;
    img[28] = 30;
    img[29] = 40;
    let dir = TempDir::new().unwrap();
    let (ip, lp) = write_fixture(&dir, &[img.clone()], 28, 28, &[3]);
    let d = load_idx_images(&ip, &lp, 1, 14).unwrap();
    assert_eq!(d.dim(), 196);
    let norm = |raw: f64| raw / 127.5 - 1.0;
    assert!((d.x.row(0)[0] - norm(25.0)).abs() < 1e-12);
    for oy in 0..14 {
        for ox in 0..14 {
            if oy == 0 && ox == 0 {
                continue;
            }
            let expected = norm(((oy * 14 + ox) as u8) as f64);
            assert!(
                (d.x.row(0)[oy * 14 + ox] - expected).abs() < 1e-12,
                "block ({oy},{ox})"
            );
        }
    }
}

#[test]
fn idx_structural_errors() {
    let dir = TempDir::new().unwrap();
    // Wrong magic on the image file.
    let ip = dir.path().join("bad.idx");
    let mut bytes = idx_image_bytes(&[vec![0u8; 4]], 2, 2);
    bytes[3] = 0x01;
    fs::write(&ip, &bytes).unwrap();
    let lp = dir.path().join("labels.idx");
    fs::write(&lp, idx_label_bytes(&[0])).unwrap();
    assert!(matches!(
        load_idx_images(&ip, &lp, 1, 2),
        Err(Error::IdxMagic { .. })
    ));

    // Truncated payload.
    let (ip, lp) = write_fixture(&dir, &[vec![7u8; 4]], 2, 2, &[0]);
    let full = fs::read(&ip).unwrap();
    fs::write(&ip, &full[..full.len() - 2]).unwrap();
    assert!(matches!(
        load_idx_images(&ip, &lp, 1, 2),
        Err(Error::IdxTruncated { .. })
    ));

    // Image/label count mismatch.
    let (ip, lp) = write_fixture(&dir, &[vec![7u8; 4], vec![9u8; 4]], 2, 2, &[0]);
    assert!(matches!(
        load_idx_images(&ip, &lp, 1, 2),
        Err(Error::IdxCountMismatch { images: 2, labels: 1 })
    ));
}

#[test]
fn two_gaussian_class_means_near_mapped_centers() {
    let d = make_two_gaussians(500, 31).unwrap();
    let mut sums = [[0.0f64; 2]; 2];
    let mut counts = [0usize; 2];
    for (i, &label) in d.labels().iter().enumerate() {
        sums[label][0] += d.x.row(i)[0];
        sums[label][1] += d.x.row(i)[1];
        counts[label] += 1;
    }
    let centers = [[0.375, 0.375], [-0.375, -0.375]];
    for class in 0..2 {
        for dim in 0..2 {
            let mean = sums[class][dim] / counts[class] as f64;
            assert!(
                (mean - centers[class][dim]).abs() <= 0.15,
                "class {class} dim {dim}: {mean}"
            );
        }
    }
}

#[test]
fn gan_checkpoint_file_round_trip_is_bit_exact() {
    let data = make_two_gaussians(60, 5).unwrap();
    let mut cfg = TrainConfig::gan_default(17);
    cfg.steps = 30;
    cfg.checkpoint_every = Some(10);
    let trained = train_gan(&data, &cfg).unwrap();
    // steps 0, 10, 20 plus the final step 30
    assert_eq!(trained.checkpoints.len(), 4);

    let dir = TempDir::new().unwrap();
    let path = dir.path().join("gan.ckpt");
    let last = trained.checkpoints.last().unwrap();
    last.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(*last, loaded);
    assert_eq!(fs::read(&path).unwrap(), loaded.to_bytes());

    // Parameters rebuild networks that predict identically.
    let gen = Network::from_named_params(&loaded.params_with_prefix("generator"), Head::Tanh)
        .unwrap();
    let z = {
        let mut rng = seeded_rng(2);
        let data: Vec<f64> = (0..cfg.latent_dim * 3)
            .map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0))
            .collect();
        Tensor::new(vec![3, cfg.latent_dim], data).unwrap()
    };
    assert_eq!(
        trained.generator.predict(&z).unwrap(),
        gen.predict(&z).unwrap()
    );
    // RNG state snapshot restores to a usable stream.
    assert!(cowboy::rng::restore_rng(&loaded.rng_state).is_some());
}

#[test]
fn generator_samples_stay_in_range() {
    let data = make_two_gaussians(60, 5).unwrap();
    let mut cfg = TrainConfig::gan_default(3);
    cfg.steps = 15;
    cfg.checkpoint_every = None;
    let trained = train_gan(&data, &cfg).unwrap();
    let mut rng = seeded_rng(8);
    let z: Vec<f64> = (0..cfg.latent_dim * 16)
        .map(|_| rand::Rng::sample::<f64, _>(&mut rng, rand_distr::StandardNormal))
        .collect();
    let z = Tensor::new(vec![16, cfg.latent_dim], z).unwrap();
    let samples = trained.generator.predict(&z).unwrap();
    assert!(samples.data().iter().all(|v| (-1.0..=1.0).contains(v)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_indices_partition_everything(n in 1usize..400, ft in 0.0f64..1.0, fv in 0.0f64..0.5, seed in any::<u64>()) {
        let ft = ft.min(1.0 - fv);
        let (tr, va, te) = split_indices(n, ft, fv, seed);
        let mut all: Vec<usize> = tr.iter().chain(&va).chain(&te).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn normalization_round_trips(v in -1.0f64..1.0) {
        let fixed = cowboy::data::Normalization::FixedScale { scale: 8.0 };
        let raw = v * 8.0;
        prop_assert!((fixed.denormalize(fixed.normalize(raw)) - raw).abs() < 1e-12);
        let pixel = cowboy::data::Normalization::PixelRange;
        let raw = (v + 1.0) * 127.5;
        prop_assert!((pixel.denormalize(pixel.normalize(raw)) - raw).abs() < 1e-12);
    }
}
