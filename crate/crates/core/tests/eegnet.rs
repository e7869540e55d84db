use drowsinet::eegnet::{load_model, save_model, DenseSamples, EegNetConfig, EegNetModel, Mode, Optimizer};
use drowsinet::eval::pearson;
use drowsinet::TrainConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// PSD-like samples whose label is a logistic function of the mean level of
/// one frequency band across channels.
fn band_power_fixture(n: usize, c: usize, t: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(n * c * t);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.sample(StandardNormal);
        for _ in 0..c {
            for k in 0..t {
                let noise: f64 = rng.sample(StandardNormal);
                let band = if (20..36).contains(&k) { 1.5 * u } else { 0.0 };
                x.push(0.5 * noise + band);
            }
        }
        y.push(1.0 / (1.0 + (-1.5 * u).exp()));
    }
    (x, y)
}

#[test]
fn learns_a_linear_band_power_map() {
    let (c, t, n) = (4, 67, 64);
    let (x, y) = band_power_fixture(n, c, t, 5);
    let n_train = n * 4 / 5;
    let len = c * t;
    let train_cfg = TrainConfig {
        batch_size: 16,
        seed: 9,
        ..TrainConfig::default()
    };
    let mut model = EegNetModel::build(EegNetConfig::new(c, t).with_train(train_cfg.clone())).unwrap();
    let source = DenseSamples::new(&x[..n_train * len], len).unwrap();
    let report = model.fit(&source, &y[..n_train], &train_cfg).unwrap();
    assert_eq!(report.epoch_losses.len(), train_cfg.epochs);
    let pred = model.predict(&x[n_train * len..]).unwrap();
    let cc = pearson(&pred, &y[n_train..]).unwrap().unwrap();
    assert!(cc >= 0.8, "held-out CC {cc}");
}

#[test]
fn duplicated_samples_predict_identically() {
    let model = EegNetModel::build(EegNetConfig::new(3, 32)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let one: Vec<f64> = (0..96).map(|_| rng.random_range(-1.0..1.0)).collect();
    let other: Vec<f64> = (0..96).map(|_| rng.random_range(-1.0..1.0)).collect();
    let batch: Vec<f64> = one.iter().chain(&other).chain(&one).copied().collect();
    let out = model.forward(&batch, Mode::Eval).unwrap();
    assert_eq!(out[0], out[2]);
    assert_eq!(model.forward(&one, Mode::Eval).unwrap()[0], out[0]);
}

fn random_trained_model(rng: &mut ChaCha8Rng) -> (EegNetModel, Vec<f64>) {
    let c = rng.random_range(1..6);
    let t = rng.random_range(16..80);
    let mut cfg = EegNetConfig::new(c, t);
    cfg.dropout_p = rng.random_range(0.0..0.5);
    cfg.train.seed = rng.random();
    cfg.train.learning_rate = rng.random_range(1e-4..1e-2);
    let mut model = EegNetModel::build(cfg.clone()).unwrap();
    let batch = 4;
    let x: Vec<f64> = (0..batch * c * t).map(|_| rng.random_range(-2.0..2.0)).collect();
    let y: Vec<f64> = (0..batch).map(|_| rng.random_range(0.0..1.0)).collect();
    let mut opt = Optimizer::new(&cfg.train, model.n_params());
    for _ in 0..rng.random_range(1..4) {
        model.train_step(&x, &y, &mut opt).unwrap();
    }
    (model, x)
}

#[test]
fn persistence_is_bit_exact_on_random_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let dir = tempfile::tempdir().unwrap();
    for i in 0..100 {
        let (model, x) = random_trained_model(&mut rng);
        let path = dir.path().join(format!("m{i}.bin"));
        save_model(&model, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back.config(), model.config());
        assert_eq!(back.steps_taken(), model.steps_taken());
        let bits = |v: &[f64]| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(back.params()), bits(model.params()));
        assert_eq!(bits(back.running_stats()), bits(model.running_stats()));
        assert_eq!(bits(&back.predict(&x).unwrap()), bits(&model.predict(&x).unwrap()));
    }
}

#[test]
fn saved_state_changes_after_a_step_and_truncation_is_detected() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut model, x) = random_trained_model(&mut rng);
    let before = model.to_bytes();
    let n = model.config().in_channels * model.config().in_time;
    let batch = x.len() / n;
    let mut opt = Optimizer::new(&model.config().train, model.n_params());
    model.train_step(&x, &vec![0.5; batch], &mut opt).unwrap();
    let after = model.to_bytes();
    assert_ne!(before, after);
    for cut in [0, 8, after.len() / 2, after.len() - 1] {
        assert!(EegNetModel::from_bytes(&after[..cut]).is_err());
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    std::fs::write(&path, &after[..after.len() - 3]).unwrap();
    assert!(load_model(&path).is_err());
}

#[test]
fn fit_is_deterministic_for_a_seed() {
    let (x, y) = band_power_fixture(24, 2, 32, 3);
    let cfg = TrainConfig {
        batch_size: 8,
        epochs: 3,
        seed: 77,
        ..TrainConfig::default()
    };
    let train = |seed: u64| {
        let cfg = TrainConfig { seed, ..cfg.clone() };
        let mut m = EegNetModel::build(EegNetConfig::new(2, 32).with_train(cfg.clone())).unwrap();
        m.fit(&DenseSamples::new(&x, 64).unwrap(), &y, &cfg).unwrap();
        m.params().to_vec()
    };
    assert_eq!(train(77), train(77));
    assert_ne!(train(77), train(78));
}
