use std::sync::OnceLock;

use drowsinet::eval::{cell_seed, emit_report, loso_evaluate, loso_with, AnovaModel, EvalReport, Metric, REPORT_FILES};
use drowsinet::pipelines::{preprocess, AlgorithmId, SubjectFeatures};
use drowsinet::synth::{generate_subject, subject_profiles, SynthProfile};
use drowsinet::PipelineConfig;

fn fixture() -> &'static [SubjectFeatures] {
    static F: OnceLock<Vec<SubjectFeatures>> = OnceLock::new();
    F.get_or_init(|| {
        let base = SynthProfile {
            n_channels: 6,
            duration_s: 120.0,
            ..SynthProfile::default()
        };
        let cfg = PipelineConfig::default();
        subject_profiles(3, &base, 12)
            .unwrap()
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let rec = preprocess(&generate_subject(p, &format!("S{:02}", i + 1)).unwrap(), &cfg).unwrap();
                SubjectFeatures::from_preprocessed(&rec, &cfg, false).unwrap()
            })
            .collect()
    })
}

const TWO: [AlgorithmId; 2] = [AlgorithmId::RrSmlr, AlgorithmId::Rr];

fn labels_of<'a>(all: &'a [SubjectFeatures], id: &str) -> &'a [f64] {
    &all.iter().find(|s| s.inputs.subject_id == id).unwrap().labels.values
}

#[test]
fn oracle_and_constant_predictors() {
    let all = fixture();
    let out = loso_with(all, &TWO, 2, 1, None, AnovaModel::RepeatMeans, |a, _, target, _| {
        let truth = labels_of(all, &target.subject_id);
        Ok(match a {
            AlgorithmId::Rr => truth.to_vec(),
            _ => vec![0.5; truth.len()],
        })
    })
    .unwrap();
    let report = &out.report;
    assert_eq!(report.cells.len(), 3 * 2 * 2);
    assert_eq!(report.algorithms, vec![AlgorithmId::Rr, AlgorithmId::RrSmlr]);
    for c in &report.cells {
        match c.algorithm {
            AlgorithmId::Rr => assert!(c.rmse == 0.0 && (c.cc - 1.0).abs() < 1e-12 && !c.cc_undefined),
            _ => assert!(c.cc == 0.0 && c.cc_undefined && c.rmse > 0.0),
        }
    }
    assert_eq!(report.undefined_cc_count(), 6);
    assert_eq!(
        out.predictions.len(),
        2 * 2 * all.iter().map(|s| s.labels.values.len()).sum::<usize>()
    );
    let cc = report.repeat_means(Metric::Cc);
    assert_eq!(cc, vec![vec![1.0; 3], vec![0.0; 3]]);
}

#[test]
fn cells_receive_their_own_seeds() {
    let all = fixture();
    let out = loso_with(all, &TWO, 3, 99, None, AnovaModel::RepeatMeans, |_, _, target, seed| {
        let n = labels_of(all, &target.subject_id).len();
        Ok((0..n).map(|k| ((seed >> (k % 60)) & 1) as f64).collect())
    })
    .unwrap();
    for (t, s) in all.iter().enumerate() {
        for a in TWO {
            for r in 0..3 {
                let cell = out.report.cell(a, &s.inputs.subject_id, r).unwrap();
                assert_eq!(cell.seed, cell_seed(99, t, a, r));
            }
        }
    }
    let mut seeds: Vec<u64> = out.report.cells.iter().map(|c| c.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    assert_eq!(seeds.len(), 18);
}

#[test]
fn worker_count_does_not_change_results() {
    let all = fixture();
    let mut cfg = PipelineConfig {
        algorithms: TWO.to_vec(),
        n_repeats: 2,
        n_bootstrap: 4,
        seed: Some(5),
        ..PipelineConfig::default()
    };
    let serial = loso_evaluate(
        all,
        &PipelineConfig {
            jobs: Some(1),
            ..cfg.clone()
        },
    )
    .unwrap();
    cfg.jobs = None;
    let parallel = loso_evaluate(all, &cfg).unwrap();
    assert_eq!(serial.report.to_json(), parallel.report.to_json());
    assert_eq!(serial.predictions, parallel.predictions);

    let dir = tempfile::tempdir().unwrap();
    emit_report(&serial.report, dir.path()).unwrap();
    for name in REPORT_FILES {
        assert!(dir.path().join(name).is_file());
    }
    let back = EvalReport::from_json_file(&dir.path().join("report.json")).unwrap();
    assert_eq!(back.to_json(), serial.report.to_json());
}

#[test]
fn evaluation_requires_a_seed_and_two_subjects() {
    let all = fixture();
    assert!(loso_evaluate(all, &PipelineConfig::default()).is_err());
    let cfg = PipelineConfig {
        seed: Some(1),
        ..PipelineConfig::default()
    };
    assert!(loso_evaluate(&all[..1], &cfg).is_err());
}
