use chrono::NaiveDate;
use plume2rate::dataset::{fit_norm_stats, Sample, SampleSource};
use plume2rate::eval::compute_metrics;
use plume2rate::models::ModelConfig;
use plume2rate::training::{predict_samples, train_member, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_samples(n: usize, prefix: &str, target: impl Fn(usize) -> f64, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| Sample {
            id: format!("{prefix}{i:03}"),
            features: (0..4 * 64 * 64).map(|_| rng.random::<f32>()).collect(),
            size: 64,
            target_mt_per_yr: target(i),
            plant_id: "SIM".into(),
            date: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            source: SampleSource::Simulated,
            cell_size_km: 1.0,
        })
        .collect()
}

#[test]
fn constant_target_training_lowers_valid_mae() {
    let train = random_samples(24, "t", |_| 12.0, 1);
    let valid = random_samples(8, "v", |_| 12.0, 2);
    let stats = fit_norm_stats(&train).unwrap();
    let model = ModelConfig {
        base_channels: 2,
        depth: 2,
        ..ModelConfig::cnn()
    };
    let tc = TrainConfig {
        losses: vec!["MAE".into()],
        epochs: 10,
        batch_size: 8,
        learning_rate: 1e-3,
        seed: 4,
        calibration_samples: 8,
        threads: 1,
        ..TrainConfig::default()
    };
    let m = train_member(&model, &train, &valid, "MAE", &tc, &stats).unwrap();
    assert_eq!(m.history[0].epoch, 0);
    assert!(m.best_valid_mae() < m.history[0].valid_mae, "{:?}", m.history);
}

#[test]
fn train_mean_stub_has_nonpositive_r2() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let train: Vec<f64> = (0..40).map(|_| rng.random_range(1.0..40.0)).collect();
        let test: Vec<f64> = (0..12).map(|_| rng.random_range(1.0..40.0)).collect();
        let mean = train.iter().sum::<f64>() / train.len() as f64;
        let r = compute_metrics(&vec![mean; test.len()], &test).unwrap();
        assert!(r.r2 <= 1e-12, "{}", r.r2);
    }
}

#[test]
fn predictions_are_finite_and_batch_independent() {
    let train = random_samples(10, "t", |i| 2.0 + i as f64, 3);
    let stats = fit_norm_stats(&train).unwrap();
    let mut m = plume2rate::models::build_model::<f32>(
        &ModelConfig {
            base_channels: 2,
            depth: 2,
            ..ModelConfig::unet()
        },
        0,
    )
    .unwrap();
    let all = predict_samples(&mut m, &train, &stats).unwrap();
    let one = predict_samples(&mut m, &train[3..4], &stats).unwrap();
    assert!(all.iter().all(|p| p.is_finite()));
    assert!((all[3] - one[0]).abs() < 1e-5);
}
