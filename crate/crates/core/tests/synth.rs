use drowsinet::container::Dataset;
use drowsinet::pipelines::{preprocess, SubjectFeatures};
use drowsinet::synth::{generate_dataset, generate_subject_with_latent, SynthProfile};
use drowsinet::PipelineConfig;

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Mean dB over the 8-12 Hz bins of every channel, per sample.
fn alpha_log_power(features: &SubjectFeatures) -> Vec<f64> {
    let fs = &features.inputs.psd_db;
    let nb = fs.n_bins();
    let alpha: Vec<usize> = (0..nb).filter(|&k| fs.freq_bins_hz[k] >= 8.0).collect();
    (0..fs.n_samples)
        .map(|j| {
            let s = fs.sample(j);
            let mut acc = 0.0;
            for c in 0..fs.n_channels() {
                acc += alpha.iter().map(|&k| s[c * nb + k]).sum::<f64>() / alpha.len() as f64;
            }
            acc / fs.n_channels() as f64
        })
        .collect()
}

#[test]
fn default_subject_survives_preprocessing_below_rejection_threshold() {
    let cfg = PipelineConfig::default();
    let profile = SynthProfile {
        seed: 11,
        ..SynthProfile::default()
    };
    let s = generate_subject_with_latent(&profile, "S01").unwrap();
    let rec = preprocess(&s.recording, &cfg).unwrap();
    assert_eq!(rec.n_channels(), 30);
    assert_eq!(rec.fs_hz(), 250.0);
    let f = SubjectFeatures::from_preprocessed(&rec, &cfg, false).unwrap();
    assert_eq!(f.inputs.psd.n_channels(), 30);
    assert_eq!(f.inputs.psd.n_bins(), 67);
    assert_eq!(f.inputs.n_samples(), 191);
    let max_db = f.inputs.psd_db.tensor.iter().cloned().fold(f64::MIN, f64::max);
    assert!(max_db < 20.0, "max dB {max_db}");
    assert!(f.labels.values.iter().all(|y| y.is_finite() && (0.0..1.0).contains(y)));
}

#[test]
fn hot_channel_is_rejected() {
    let cfg = PipelineConfig::default();
    let profile = SynthProfile {
        n_channels: 8,
        duration_s: 120.0,
        hot_channel_prob: 1.0,
        seed: 5,
        ..SynthProfile::default()
    };
    let s = generate_subject_with_latent(&profile, "S").unwrap();
    assert!(s.hot_channel.is_some());
    let rec = preprocess(&s.recording, &cfg).unwrap();
    let f = SubjectFeatures::from_preprocessed(&rec, &cfg, false).unwrap();
    assert_eq!(f.inputs.psd.n_channels(), 5);
}

#[test]
fn alpha_power_is_higher_when_drowsy() {
    let cfg = PipelineConfig::default();
    let profile = SynthProfile {
        n_channels: 6,
        alpha_coupling: 3.0,
        latent_noise: 0.4,
        seed: 21,
        ..SynthProfile::default()
    };
    let s = generate_subject_with_latent(&profile, "S").unwrap();
    let rec = preprocess(&s.recording, &cfg).unwrap();
    let f = SubjectFeatures::from_preprocessed(&rec, &cfg, false).unwrap();
    let power = alpha_log_power(&f);
    let grid = f.inputs.grid();
    let fs = profile.fs_hz;
    let mut high = Vec::new();
    let mut low = Vec::new();
    for (j, t) in grid.times().enumerate() {
        let end = (t * fs) as usize;
        let start = end - (cfg.epoch_s * fs) as usize;
        let d = s.latent[start..end].iter().sum::<f64>() / (end - start) as f64;
        if d > 0.6 {
            high.push(power[j]);
        } else if d < 0.3 {
            low.push(power[j]);
        }
    }
    assert!(
        !high.is_empty() && !low.is_empty(),
        "latent never reached both extremes"
    );
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&high) > mean(&low) + 1.0, "{} vs {}", mean(&high), mean(&low));
}

#[test]
fn smoothed_labels_track_alpha_power_over_seeds() {
    let cfg = PipelineConfig::default();
    let mut total = 0.0;
    for seed in 0..10 {
        let profile = SynthProfile {
            n_channels: 6,
            seed,
            ..SynthProfile::default()
        };
        let s = generate_subject_with_latent(&profile, "S").unwrap();
        let rec = preprocess(&s.recording, &cfg).unwrap();
        let f = SubjectFeatures::from_preprocessed(&rec, &cfg, false).unwrap();
        total += pearson(&alpha_log_power(&f), &f.labels.values);
    }
    let mean = total / 10.0;
    assert!(mean > 0.3, "mean correlation {mean}");
}

#[test]
fn dataset_layout_and_distinct_subjects() {
    let dir = tempfile::tempdir().unwrap();
    let base = SynthProfile {
        n_channels: 4,
        duration_s: 20.0,
        ..SynthProfile::default()
    };
    generate_dataset(15, &base, 7, dir.path()).unwrap();
    let ds = Dataset::open(dir.path()).unwrap();
    assert_eq!(ds.subjects().len(), 15);
    assert!(ds.index.profile.is_some());
    let recs: Vec<_> = ds.subjects().iter().map(|s| ds.load(s).unwrap()).collect();
    for i in 0..recs.len() {
        assert!(dir.path().join(&ds.subjects()[i]).is_dir());
        for j in i + 1..recs.len() {
            assert_ne!(recs[i].data(), recs[j].data());
        }
    }
    let again = tempfile::tempdir().unwrap();
    generate_dataset(15, &base, 7, again.path()).unwrap();
    let ds2 = Dataset::open(again.path()).unwrap();
    assert_eq!(ds2.index, ds.index);
    assert_eq!(ds2.load("S03").unwrap(), recs[2]);
}
