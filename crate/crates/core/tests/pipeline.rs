//! End-to-end paths through datasets, training and analysis at small scale.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rdvae::analysis::{analyze, AnalysisOptions};
use rdvae::datasets::{encode_idx_images, encode_idx_labels, generate_toy, load_idx, FactorDatasetSpec, ToyDataset, ToyKind};
use rdvae::losses::LossTag;
use rdvae::vae::{train, Checkpoint, ModelConfig, VaeConfig, VaeModel};

/// 8×8 images of one bright horizontal bar whose row and brightness vary.
fn bar_images(count: usize, seed: u64) -> (Vec<u8>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = Vec::with_capacity(count * 64);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let row = rng.random_range(0..8usize);
        let level = rng.random_range(120..=255u32) as u8;
        for r in 0..8 {
            for _ in 0..8 {
                pixels.push(if r == row { level } else { 10 });
            }
        }
        labels.push(row as u8);
    }
    (pixels, labels)
}

#[test]
fn idx_images_train_with_bce_and_leave_idle_dims_at_prior() {
    let dir = tempfile::tempdir().unwrap();
    let (pixels, labels) = bar_images(512, 4);
    let img_path = dir.path().join("images.idx");
    let lbl_path = dir.path().join("labels.idx");
    std::fs::write(&img_path, encode_idx_images(512, 8, 8, &pixels).unwrap()).unwrap();
    std::fs::write(&lbl_path, encode_idx_labels(&labels)).unwrap();
    let images = load_idx(&img_path, Some(&lbl_path)).unwrap();
    assert_eq!((images.count, images.rows, images.cols), (512, 8, 8));
    assert_eq!(images.labels.as_deref(), Some(&labels[..]));

    let mut cfg = VaeConfig::toy(64, 4, LossTag::Bce);
    cfg.model = ModelConfig::images(64, 4, 64);
    cfg.loss = rdvae::losses::CodingLoss::new(LossTag::Bce);
    cfg.train.epochs = 60;
    cfg.train.batch_size = 32;
    cfg.train.lambda = 1000.0;
    cfg.train.seed = 5;
    let out = train(cfg, &images.pixels).unwrap();
    let first = out.history.first().unwrap().loss;
    let last = out.history.last().unwrap().loss;
    assert!(last.is_finite() && last < first, "{first} -> {last}");

    let (report, _) = analyze(&out.model, &images.pixels, None, &AnalysisOptions::default()).unwrap();
    assert!(report.informative_count >= 1);
    assert!(report.correlations.is_none());
    for d in report.dims.iter().filter(|d| !d.informative) {
        assert!((0.9..=1.5).contains(&d.mean_inv_sigma2), "dim {}: {}", d.dim, d.mean_inv_sigma2);
        assert!(d.norm_stat.mean <= 0.2, "dim {}: {}", d.dim, d.norm_stat.mean);
    }
}

#[test]
fn lambda_sweep_trains_without_divergence() {
    let data = generate_toy(&FactorDatasetSpec::preset(ToyKind::Ramp, 1024, 2)).unwrap();
    for lambda in [1.0, 10.0, 100.0, 1000.0] {
        let mut cfg = VaeConfig::toy(16, 3, LossTag::UpwardConvex);
        cfg.train.lambda = lambda;
        cfg.train.epochs = 3;
        let out = train(cfg, &data.x).unwrap();
        assert!(out.history.iter().all(|r| r.loss.is_finite()), "lambda {lambda}");
    }
}

#[test]
fn saved_dataset_and_checkpoint_reproduce_analysis() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_toy(&FactorDatasetSpec::preset(ToyKind::Mix, 800, 9)).unwrap();
    data.save(dir.path()).unwrap();
    let loaded = ToyDataset::load(dir.path()).unwrap();
    assert_eq!(loaded.x, data.x);

    let mut cfg = VaeConfig::toy(16, 3, LossTag::DownwardConvex);
    cfg.train.epochs = 2;
    cfg.train.batch_size = 100;
    let a = train(cfg.clone(), &data.x).unwrap();
    let b = train(cfg, &loaded.x).unwrap();
    assert_eq!(a.history, b.history);

    let trainer = {
        let mut t = rdvae::vae::Trainer::new(a.model.config().clone()).unwrap();
        t.run(&data.x, |_| Ok(())).unwrap();
        t
    };
    let path = dir.path().join("checkpoint.json");
    Checkpoint::from_trainer(&trainer).unwrap().save(&path).unwrap();
    let restored: VaeModel = Checkpoint::load(&path).unwrap().model().unwrap();
    assert_eq!(&restored, trainer.model());

    let opts = AnalysisOptions::default();
    let (r1, t1) = analyze(trainer.model(), &data.x, Some(&data.density), &opts).unwrap();
    let (r2, t2) = analyze(&restored, &loaded.x, Some(&loaded.density), &opts).unwrap();
    assert_eq!(serde_json::to_string(&r1).unwrap(), serde_json::to_string(&r2).unwrap());
    assert_eq!(t1.len(), t2.len());
}
