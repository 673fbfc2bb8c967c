use super::*;
use crate::features::tertile_split;
use crate::synth::{generate, NoiseConfig, SynthConfig, SynthDataset};
use crate::trf::{fit, FitOptions, Solver};

fn dataset(seed: u64, snr_db: Option<f64>, sigma: f64) -> SynthDataset {
    generate(&SynthConfig {
        seed,
        n_subjects: 3,
        n_sensors: 2,
        fs: 32.0,
        duration_s: 90.0,
        noise: NoiseConfig {
            sigma,
            snr_db,
            ar1: 0.0,
        },
        ..SynthConfig::default()
    })
    .unwrap()
}

fn study(d: &SynthDataset) -> StudyData {
    StudyData::new(&d.stimulus, &d.recordings, &ModelOptions::default()).unwrap()
}

fn space(budget: usize, seed: u64) -> SearchSpace {
    SearchSpace {
        budget,
        seed,
        startup_trials: 3,
        ridge_grid: vec![1e-3, 1e-1, 10.0],
        ..SearchSpace::default()
    }
}

#[test]
fn budget_one_is_a_manual_fit() {
    let d = dataset(1, Some(0.0), 0.0);
    let data = study(&d);
    let p = Pipeline::new(&data, LinkingVariant::Variable, &ModelOptions::default()).unwrap();
    let out = search(&p, &space(1, 4)).unwrap();
    let point = out.report.trials[0].params;
    assert_eq!(out.report.best, point);
    let manual = Pipeline::new(&data, LinkingVariant::Variable, &ModelOptions::default()).unwrap();
    let folds = manual.cross_validate(&point).unwrap();
    assert_eq!(out.report.validation_scores, folds);
    let refit = manual.refit(&point).unwrap();
    for (a, b) in refit.models.iter().zip(&out.fit.models) {
        assert_eq!(a.weights, b.weights);
    }
}

#[test]
fn refit_matches_a_direct_fit_of_the_stacked_design() {
    let d = dataset(2, Some(5.0), 0.0);
    let data = study(&d);
    let p = Pipeline::new(&data, LinkingVariant::Variable, &ModelOptions::default()).unwrap();
    let params = TrialParams::with_cognitive(&d.truth.config.cognitive, 0.1);
    let out = p.refit(&params).unwrap();

    let (spec, _) = p.word_spec(out.recognition.as_deref(), None).unwrap();
    let words = assemble_word_design(&spec, data.words(), data.fs, data.n_samples()).unwrap();
    let all = FeatureSeries::stack(&[data.xt(), &words]).unwrap();
    let design = LaggedDesign::new(&all, p.layout()).unwrap();
    let options = FitOptions {
        ridge: RidgePenalty::Global(out.penalty),
        center: true,
        solver: Solver::Cholesky,
    };
    for (i, rec) in d.recordings.iter().enumerate() {
        let direct = fit(&design, rec, &[p.split().training_span()], &options).unwrap();
        let diff = (&direct.weights - &out.models[i].weights)
            .mapv(f64::abs)
            .fold(0.0f64, |a, &b| a.max(b));
        let scale = direct.weights.mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(diff <= 1e-8 * scale.max(1.0), "subject {i}: {diff:e}");
        let pred = direct
            .predict_range(&design, p.split().scored_test().start, data.n_samples())
            .unwrap();
        let r = sensor_correlations(rec.data.slice(s![.., p.split().scored_test()]), pred.view())
            .unwrap();
        for (a, b) in r.iter().zip(&out.test_scores[i].r) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn tertile_edges_come_from_training_words_only() {
    let d = dataset(3, Some(0.0), 0.0);
    let data = study(&d);
    let p = Pipeline::new(&data, LinkingVariant::Variable, &ModelOptions::default()).unwrap();
    let params = TrialParams::with_cognitive(&d.truth.config.cognitive, 1.0);
    let out = p.refit(&params).unwrap();
    let tau: Vec<f64> = out
        .recognition
        .as_ref()
        .unwrap()
        .iter()
        .map(|r| r.tau_s)
        .collect();
    let mask = p
        .split()
        .training_mask(&data.words().onset_s, data.fs, None);
    assert!(
        mask.iter().any(|m| !m),
        "some words must fall in the test block"
    );
    let train_only: Vec<f64> = tau
        .iter()
        .zip(&mask)
        .filter(|(_, m)| **m)
        .map(|(t, _)| *t)
        .collect();
    let expected = tertile_split(&train_only, &vec![true; train_only.len()]).unwrap();
    assert_eq!(out.grouping.unwrap().edges, expected.edges);
}

#[test]
fn test_block_never_informs_training() {
    let d = dataset(4, Some(0.0), 0.0);
    let mut altered = d.recordings.clone();
    let split = Pipeline::new(
        &study(&d),
        LinkingVariant::Variable,
        &ModelOptions::default(),
    )
    .unwrap()
    .split()
    .clone();
    for r in &mut altered {
        for (k, v) in r
            .data
            .slice_mut(s![.., split.test.clone()])
            .iter_mut()
            .enumerate()
        {
            *v = ((k * 7919) % 101) as f64 - 50.0;
        }
    }
    let a = study(&d);
    let b = StudyData::new(&d.stimulus, &altered, &ModelOptions::default()).unwrap();
    let pa = Pipeline::new(&a, LinkingVariant::Variable, &ModelOptions::default()).unwrap();
    let pb = Pipeline::new(&b, LinkingVariant::Variable, &ModelOptions::default()).unwrap();
    let sp = space(6, 9);
    let oa = search(&pa, &sp).unwrap();
    let ob = search(&pb, &sp).unwrap();
    assert_eq!(oa.report.trials, ob.report.trials);
    for (ma, mb) in oa.fit.models.iter().zip(&ob.fit.models) {
        let bits = |m: &TrfModel| m.weights.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(ma), bits(mb));
    }
    assert_ne!(oa.report.test_scores, ob.report.test_scores);
}

#[test]
fn seeded_search_is_reproducible_to_the_byte() {
    let d = dataset(5, Some(0.0), 0.0);
    let data = study(&d);
    let run = || {
        let p = Pipeline::new(&data, LinkingVariant::Variable, &ModelOptions::default()).unwrap();
        let out = search(&p, &space(6, 21)).unwrap();
        let mut json = Vec::new();
        out.report.write_json(&mut json).unwrap();
        let mut csv = Vec::new();
        out.report.write_trials_csv(&mut csv).unwrap();
        (json, csv)
    };
    assert_eq!(run(), run());
}

#[test]
fn baseline_flags_the_cognitive_parameters_as_insensitive() {
    let d = dataset(6, Some(0.0), 0.0);
    let data = study(&d);
    let p = Pipeline::new(&data, LinkingVariant::Baseline, &ModelOptions::default()).unwrap();
    let out = search(&p, &space(5, 2)).unwrap();
    let flagged = &out.report.insensitive_parameters;
    for name in ["threshold", "temperature", "scatter", "prior_scatter"] {
        assert!(flagged.contains(&name.to_string()), "{flagged:?}");
    }
    assert!(!flagged.contains(&"ridge".to_string()), "{flagged:?}");

    let p = Pipeline::new(&data, LinkingVariant::Variable, &ModelOptions::default()).unwrap();
    let out = search(&p, &space(5, 2)).unwrap();
    assert!(!out
        .report
        .insensitive_parameters
        .contains(&"threshold".to_string()));
}

#[test]
fn validation_spread_shrinks_with_noise() {
    let spread = |snr: Option<f64>| {
        let d = dataset(7, snr, 0.0);
        let data = study(&d);
        let p = Pipeline::new(&data, LinkingVariant::Baseline, &ModelOptions::default()).unwrap();
        let params = TrialParams::with_cognitive(&d.truth.config.cognitive, 1e-3);
        let folds = p.cross_validate(&params).unwrap();
        let m = mean(&folds);
        folds.iter().map(|f| (f - m).powi(2)).sum::<f64>() / folds.len() as f64
    };
    let noisy = spread(Some(-10.0));
    let mild = spread(Some(10.0));
    let clean = spread(None);
    assert!(noisy > mild && mild > clean, "{noisy:e} {mild:e} {clean:e}");
}

#[test]
fn mismatched_recordings_are_rejected() {
    let d = dataset(8, None, 0.0);
    let mut recs = d.recordings.clone();
    recs[1].data = recs[1].data.slice(s![.., ..100]).to_owned();
    assert!(StudyData::new(&d.stimulus, &recs, &ModelOptions::default()).is_err());
    let dup = vec![d.recordings[0].clone(), d.recordings[0].clone()];
    assert!(StudyData::new(&d.stimulus, &dup, &ModelOptions::default()).is_err());
}

#[test]
fn trial_csv_has_one_row_per_trial() {
    let d = dataset(9, Some(0.0), 0.0);
    let data = study(&d);
    let p = Pipeline::new(&data, LinkingVariant::Shift, &ModelOptions::default()).unwrap();
    let out = search(&p, &space(4, 1)).unwrap();
    let mut buf = Vec::new();
    out.report.write_trials_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5);
    assert_eq!(
        lines[0],
        "trial,threshold,temperature,scatter,prior_scatter,ridge,fold_0,fold_1,fold_2,fold_3,score"
    );
}

#[test]
fn timeline_prediction_agrees_with_the_test_block() {
    let d = dataset(10, Some(0.0), 0.0);
    let data = study(&d);
    let p = Pipeline::new(&data, LinkingVariant::Variable, &ModelOptions::default()).unwrap();
    let params = TrialParams::with_cognitive(&d.truth.config.cognitive, 0.1);
    let out = p.refit(&params).unwrap();
    let full = p.predict_timeline(&out).unwrap();
    for (f, t) in full.iter().zip(&out.test_predictions) {
        assert_eq!(f.ncols(), data.n_samples());
        let tail = f.slice(s![.., p.split().scored_test()]);
        let diff = (&tail - t).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(diff < 1e-9, "{diff:e}");
    }
}
