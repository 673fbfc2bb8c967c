use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use recogtrf::cognitive::{posterior, CandidateSet, RecognitionProblem};
use recogtrf::cohort::transcript_features;
use recogtrf::features::{build_xt, XtOptions};
use recogtrf::lexicon::build_confusion;
use recogtrf::linking::LinkingVariant;
use recogtrf::pipeline::{ModelOptions, Pipeline, StudyData, TrialParams};
use recogtrf::trf::{fit, FeatureLayout, FitOptions, LaggedDesign, RidgePenalty, Solver};
use recogtrf_bench::study;

fn recognition(c: &mut Criterion) {
    let d = study(120.0);
    let s = &d.stimulus;
    let cm = build_confusion(&s.confusion_counts, &s.inventory, 1.0).unwrap();
    let word = &s.transcript.words()[0];
    let cands = CandidateSet::new(
        word.token_index,
        s.priors.get(word.token_index).unwrap().to_vec(),
        &word.form,
    )
    .unwrap();
    let symbols: Vec<&str> = word.phonemes.iter().map(|p| p.symbol.as_str()).collect();
    let observed = s.inventory.encode(&symbols).unwrap();
    c.bench_function("posterior/one_token", |b| {
        b.iter(|| posterior(&cands, &observed, &cm, &s.lexicon).unwrap())
    });
    let problem =
        RecognitionProblem::new(&s.transcript, &s.priors, &s.lexicon, &s.inventory, None).unwrap();
    let params = d.truth.config.cognitive;
    c.bench_function(
        &format!("posterior/transcript_{}_tokens", problem.len()),
        |b| b.iter(|| problem.run(&params, &cm).unwrap()),
    );
}

fn lagged(c: &mut Criterion) {
    let mut group = c.benchmark_group("lagged_gram");
    group.sample_size(10);
    for duration in [60.0, 240.0] {
        let d = study(duration);
        let s = &d.stimulus;
        let cohort =
            transcript_features(&s.transcript, &s.priors, &s.lexicon, &s.inventory).unwrap();
        let n = d.n_samples();
        let xt = build_xt(&s.transcript, &cohort, 128.0, n, XtOptions::default()).unwrap();
        let layout =
            FeatureLayout::from_windows(xt.names.clone(), &vec![0.6; xt.names.len()], 128.0)
                .unwrap();
        let design = LaggedDesign::new(&xt, layout).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &design, |b, design| {
            b.iter(|| design.gram(&[0..n]))
        });
        let options = FitOptions {
            ridge: RidgePenalty::Global(1.0),
            center: true,
            solver: Solver::Cholesky,
        };
        group.bench_with_input(BenchmarkId::new("fit", n), &design, |b, design| {
            b.iter(|| fit(design, &d.recordings[0], &[0..n], &options).unwrap())
        });
    }
    group.finish();
}

fn pipeline(c: &mut Criterion) {
    let d = study(120.0);
    let options = ModelOptions::default();
    let data = StudyData::new(&d.stimulus, &d.recordings, &options).unwrap();
    let params = TrialParams::with_cognitive(&d.truth.config.cognitive, 1.0);
    let mut group = c.benchmark_group("pipeline");
    group.sample_size(10);
    group.bench_function("cross_validate_variable", |b| {
        b.iter(|| {
            // A fresh pipeline each time so the score cache does not short-circuit the work.
            let p = Pipeline::new(&data, LinkingVariant::Variable, &options).unwrap();
            p.cross_validate(&params).unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, recognition, lagged, pipeline);
criterion_main!(benches);
