use std::sync::OnceLock;

use drowsinet::eval::pearson;
use drowsinet::numerics::pca_fit;
use drowsinet::pipelines::{
    channel_mask_below, extract_rr_features, fit_rr_transform, preprocess, psd_ensemble, run_algorithm, zscore_columns,
    AlgorithmId, SubjectFeatures, SubjectInputs,
};
use drowsinet::smlr::SmlrPath;
use drowsinet::synth::{generate_subject, subject_profiles, SynthProfile};
use drowsinet::{FeatureSet, PipelineConfig, SampleGrid, TrainConfig};

fn small_cfg() -> PipelineConfig {
    let net = TrainConfig {
        epochs: 2,
        batch_size: 8,
        learning_rate: 5e-3,
        sample_stride: 2,
        ..TrainConfig::default()
    };
    PipelineConfig {
        n_bootstrap: 3,
        raw_time_decimation: 10,
        eegnet_psd: net.clone(),
        eegnet_raw: net,
        ..PipelineConfig::default()
    }
}

fn subjects(n: usize, duration_s: f64, seed: u64) -> Vec<SubjectFeatures> {
    let base = SynthProfile {
        n_channels: 6,
        duration_s,
        ..SynthProfile::default()
    };
    let cfg = small_cfg();
    subject_profiles(n, &base, seed)
        .unwrap()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let rec = preprocess(&generate_subject(p, &format!("S{i}")).unwrap(), &cfg).unwrap();
            SubjectFeatures::from_preprocessed(&rec, &cfg, true).unwrap()
        })
        .collect()
}

fn fixture() -> &'static [SubjectFeatures] {
    static F: OnceLock<Vec<SubjectFeatures>> = OnceLock::new();
    F.get_or_init(|| subjects(4, 120.0, 31))
}

fn split(all: &[SubjectFeatures], target: usize) -> (Vec<&SubjectFeatures>, &SubjectInputs) {
    let train = all
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != target)
        .map(|(_, s)| s)
        .collect();
    (train, &all[target].inputs)
}

#[test]
fn every_algorithm_gives_finite_bounded_predictions() {
    let all = fixture();
    let (train, target) = split(all, 0);
    let cfg = small_cfg();
    for a in AlgorithmId::ALL {
        let p = run_algorithm(a, &train, target, &cfg, 5).unwrap();
        assert_eq!(p.len(), target.n_samples());
        assert!(
            p.iter().all(|v| v.is_finite() && (-0.5..=1.5).contains(v)),
            "{a}: {p:?}"
        );
        assert_eq!(
            p,
            run_algorithm(a, &train, target, &cfg, 5).unwrap(),
            "{a} not deterministic"
        );
    }
}

#[test]
fn ridge_memorizes_an_identical_training_subject() {
    let mut cfg = small_cfg();
    cfg.ridge_lambda = 0.0;
    cfg.pca_var_frac = 1.0;
    // 42 s gives five 30 s epochs: four PCA scores plus an intercept fit them exactly.
    let one = subjects(2, 42.0, 3).remove(0);
    assert_eq!(one.inputs.n_samples(), 5);
    let p = run_algorithm(AlgorithmId::Rr, &[&one], &one.inputs, &cfg, 0).unwrap();
    let cc = pearson(&p, &one.labels.values).unwrap().expect("labels vary");
    assert!((cc - 1.0).abs() < 1e-6, "cc {cc}");
}

#[test]
fn identical_bootstrap_seeds_collapse_the_ensemble() {
    let all = fixture();
    let (train, target) = split(all, 1);
    let (ens, result) = psd_ensemble(&train, target, &small_cfg(), &[11, 11, 11]).unwrap();
    assert_eq!(result.path, SmlrPath::IdenticalMembers);
    let first: Vec<f64> = (0..ens.n_samples()).map(|j| ens.matrix()[(0, j)]).collect();
    assert_eq!(result.combined, first);
}

#[test]
fn ridge_transform_ignores_the_target() {
    let all = fixture();
    let cfg = small_cfg();
    let train: Vec<&SubjectInputs> = all[1..].iter().map(|s| &s.inputs).collect();
    let a = extract_rr_features(&train, &all[0].inputs, &cfg).unwrap();
    let b = extract_rr_features(&train, &all[1].inputs, &cfg).unwrap();
    assert_eq!(a.transform, b.transform);
    assert_eq!(a.train, b.train);
    assert_eq!(a.transform, fit_rr_transform(&train, &cfg).unwrap());
    // Identical recordings project identically.
    let c = extract_rr_features(&train, &all[1].inputs, &cfg).unwrap();
    assert_eq!(c.target, a.train[0]);
    assert!(a.transform.pca.explained_ratio >= cfg.pca_var_frac);
}

#[test]
fn target_psd_columns_are_standardized() {
    for s in fixture() {
        let fs = &s.inputs.psd;
        let width = fs.n_channels() * fs.n_bins();
        let n = fs.n_samples as f64;
        for col in 0..width {
            let v: Vec<f64> = (0..fs.n_samples).map(|j| fs.tensor[j * width + col]).collect();
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-9 && (var.sqrt() - 1.0).abs() < 1e-9);
        }
    }
}

fn feature_set(values: Vec<f64>, n_samples: usize, n_channels: usize) -> FeatureSet {
    let n_bins = values.len() / (n_samples * n_channels);
    FeatureSet {
        tensor: values,
        n_samples,
        freq_bins_hz: (0..n_bins).map(|k| 4.0 + k as f64).collect(),
        channel_mask: vec![true; n_channels],
        grid: SampleGrid {
            start_s: 30.0,
            step_s: 3.0,
            count: n_samples,
        },
    }
}

#[test]
fn rejection_threshold_and_zscore() {
    // 3 samples × 2 channels × 2 bins; channel 1 hits 25 dB once.
    let mut v = vec![5.0, 6.0, 7.0, 8.0, 5.5, 6.5, 7.5, 25.0, 4.0, 6.0, 7.0, 9.0];
    let fs = feature_set(v.clone(), 3, 2);
    assert_eq!(channel_mask_below(&[&fs], 20.0).unwrap(), vec![true, false]);
    v[7] = 20.0;
    assert_eq!(
        channel_mask_below(&[&feature_set(v, 3, 2)], 20.0).unwrap(),
        vec![true, true]
    );

    let mut z = fs.clone();
    zscore_columns(&mut z);
    for col in 0..4 {
        let c: Vec<f64> = (0..3).map(|j| z.tensor[j * 4 + col]).collect();
        let mean = c.iter().sum::<f64>() / 3.0;
        let sd = (c.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
        assert!(mean.abs() < 1e-12 && (sd - 1.0).abs() < 1e-12);
    }
}

#[test]
fn rank_one_features_keep_one_component() {
    let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64, -(i as f64)]).collect();
    let pca = pca_fit(&drowsinet::numerics::Matrix::from_rows(&rows).unwrap(), 0.95).unwrap();
    assert_eq!(pca.n_components(), 1);
}
