//! One function per subcommand. Each writes its outputs and a manifest into `--out-dir`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ndarray::s;
use serde::Serialize;

use recogtrf::cognitive::{
    posterior_trajectory, write_results_csv, CandidateSet, RecognitionProblem, RecognitionResult,
};
use recogtrf::config::RunConfig;
use recogtrf::dataset::{Stimulus, StimulusPaths};
use recogtrf::lexicon::build_confusion;
use recogtrf::linking::{compare_scores, LinkingVariant};
use recogtrf::pipeline::{search, FitReport, ModelOptions, Pipeline, StudyData};
use recogtrf::synth::{self, SynthConfig};
use recogtrf::trf::{sensor_correlations, NeuralRecording};

use crate::manifest::Recorder;
use crate::{Cli, Command, CompareArgs, EvalArgs, FitArgs, RecognizeArgs, UsageError};

pub const RESOLVED_CONFIG: &str = "config.toml";

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Recognize(args) => recognize(cli, args),
        Command::Fit(args) => fit(cli, args),
        Command::Eval(args) => eval(cli, args),
        Command::Compare(args) => compare(cli, args),
        Command::Simulate => simulate(cli),
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn run_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| usage("this command needs --config naming a run configuration"))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

/// Writes the resolved configuration and records it in the manifest.
fn record_config(rec: &mut Recorder, cfg: &RunConfig) -> Result<()> {
    let path = rec.output(RESOLVED_CONFIG)?;
    std::fs::write(&path, cfg.to_toml()?).with_context(|| format!("writing {}", path.display()))?;
    rec.config_file = Some(RESOLVED_CONFIG.into());
    rec.config = serde_json::to_value(cfg)?;
    rec.seed = Some(cfg.seed);
    Ok(())
}

fn write_recognition(rec: &mut Recorder, results: &[RecognitionResult]) -> Result<()> {
    let path = rec.output("recognition.csv")?;
    let mut w = create(&path)?;
    write_results_csv(results, &mut w)?;
    w.flush()?;
    Ok(())
}

fn recognize(cli: &Cli, args: &RecognizeArgs) -> Result<()> {
    let mut cfg = run_config(cli)?;
    let c = &mut cfg.cognitive;
    c.threshold = args.gamma.unwrap_or(c.threshold);
    c.temperature = args.lambda.unwrap_or(c.temperature);
    c.scatter = args.alpha.unwrap_or(c.scatter);
    c.prior_scatter = args.alpha_prior.unwrap_or(c.prior_scatter);
    cfg.cognitive.validate()?;
    let mut rec = Recorder::new("recognize", &cli.out_dir)?;
    rec.inputs = cfg
        .stimulus
        .all()
        .into_iter()
        .map(Path::to_path_buf)
        .collect();
    record_config(&mut rec, &cfg)?;

    let stim = Stimulus::load(&cfg.stimulus)?;
    let cm = build_confusion(
        &stim.confusion_counts,
        &stim.inventory,
        cfg.cognitive.temperature,
    )?;
    let problem = RecognitionProblem::new(
        &stim.transcript,
        &stim.priors,
        &stim.lexicon,
        &stim.inventory,
        cfg.model.top_k,
    )?;
    let results = problem.run(&cfg.cognitive, &cm)?;
    write_recognition(&mut rec, &results)?;
    log::info!("recognised {} tokens", results.len());

    if args.trajectories {
        let path = rec.output("trajectories.jsonl")?;
        let mut w = create(&path)?;
        for word in stim.transcript.words() {
            let entry = stim
                .priors
                .get(word.token_index)
                .with_context(|| format!("token {}: no prior entry", word.token_index))?;
            let mut cands = CandidateSet::new(word.token_index, entry.to_vec(), &word.form)?;
            if let Some(k) = cfg.model.top_k {
                cands = cands.truncated(k);
            }
            let symbols: Vec<&str> = word.phonemes.iter().map(|p| p.symbol.as_str()).collect();
            let observed = stim.inventory.encode(&symbols)?;
            let record = TrajectoryRecord {
                token_index: word.token_index,
                form: &word.form,
                candidates: cands.candidates().iter().map(|c| c.form.as_str()).collect(),
                posterior: posterior_trajectory(&cands, &observed, &cm, &stim.lexicon)?,
            };
            serde_json::to_writer(&mut w, &record)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    rec.finish()?;
    Ok(())
}

/// Posterior over the candidate set after each prefix length `k = 0..=|w|`.
#[derive(Serialize)]
struct TrajectoryRecord<'a> {
    token_index: usize,
    form: &'a str,
    candidates: Vec<&'a str>,
    posterior: Vec<Vec<f64>>,
}

fn fit(cli: &Cli, args: &FitArgs) -> Result<()> {
    let mut cfg = run_config(cli)?;
    if let Some(v) = args.variant {
        cfg.variant = v;
    }
    if let Some(b) = args.budget {
        cfg.search.budget = b;
    }
    cfg.validate()?;
    let mut rec = Recorder::new("fit", &cli.out_dir)?;
    let recording_files = cfg.recording_files()?;
    rec.inputs = cfg
        .stimulus
        .all()
        .into_iter()
        .map(Path::to_path_buf)
        .collect();
    rec.inputs.extend(recording_files.iter().cloned());
    record_config(&mut rec, &cfg)?;

    let stim = Stimulus::load(&cfg.stimulus)?;
    let recordings = recording_files
        .iter()
        .map(|p| NeuralRecording::load(p))
        .collect::<recogtrf::Result<Vec<_>>>()?;
    let data = StudyData::new(&stim, &recordings, &cfg.model)?;
    let pipeline = Pipeline::new(&data, cfg.variant, &cfg.model)?;
    let outcome = search(&pipeline, &cfg.search_space())?;
    let report = &outcome.report;
    log::info!(
        "{}: best trial {} with validation score {:.6}",
        cfg.variant.as_str(),
        report.best_trial,
        report.validation_score
    );

    let path = rec.output("report.json")?;
    let mut w = create(&path)?;
    report.write_json(&mut w)?;
    w.write_all(b"\n")?;
    w.flush()?;

    let path = rec.output("trials.csv")?;
    let mut w = create(&path)?;
    report.write_trials_csv(&mut w)?;
    w.flush()?;

    let path = rec.output("test_scores.csv")?;
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["subject", "sensor", "r"])?;
    for s in &report.test_scores {
        for (sensor, r) in s.sensors.iter().zip(&s.r) {
            w.write_record([s.subject.as_str(), sensor.as_str(), &format!("{r:e}")])?;
        }
    }
    w.flush()?;

    for (model, subject) in outcome.fit.models.iter().zip(&data.subjects) {
        let path = rec.output(&format!("coefficients/{subject}.csv"))?;
        let mut w = create(&path)?;
        model.write_coefficients_csv(&mut w)?;
        w.flush()?;
    }
    if let Some(results) = &outcome.fit.recognition {
        write_recognition(&mut rec, results)?;
    }
    let predictions = pipeline.predict_timeline(&outcome.fit)?;
    for (i, y) in predictions.into_iter().enumerate() {
        let p = NeuralRecording::with_sensors(
            data.subjects[i].clone(),
            data.sensors[i].clone(),
            y,
            data.fs,
        )?;
        p.save(&rec.output(&format!("predictions/{}.nrc", data.subjects[i]))?)?;
    }
    rec.finish()?;
    Ok(())
}

/// Recording files under `path` (or `path` itself) in name order.
fn recordings_at(path: &Path) -> Result<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .with_context(|| format!("listing {}", path.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("nrc" | "csv")))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!(usage(format!(
            "{} holds no .nrc or .csv recordings",
            path.display()
        )));
    }
    Ok(files)
}

fn stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn eval(cli: &Cli, args: &EvalArgs) -> Result<()> {
    let observed = recordings_at(&args.observed)?;
    let pairs: Vec<(PathBuf, PathBuf)> = if args.predicted.is_dir() {
        let predicted = recordings_at(&args.predicted)?;
        observed
            .iter()
            .map(|o| {
                predicted
                    .iter()
                    .find(|p| stem(p) == stem(o))
                    .map(|p| (o.clone(), p.clone()))
                    .ok_or_else(|| usage(format!("no prediction for {}", o.display())))
            })
            .collect::<Result<_>>()?
    } else if observed.len() == 1 {
        vec![(observed[0].clone(), args.predicted.clone())]
    } else {
        bail!(usage(
            "a directory of observed recordings needs a directory of predictions"
        ));
    };

    let mut rec = Recorder::new("eval", &cli.out_dir)?;
    rec.config = serde_json::json!({
        "observed": args.observed,
        "predicted": args.predicted,
        "start_s": args.start_s,
        "end_s": args.end_s,
    });
    let path = rec.output("eval.csv")?;
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["subject", "sensor", "r"])?;
    for (o, p) in &pairs {
        rec.inputs.extend([o.clone(), p.clone()]);
        let obs = NeuralRecording::load(o)?;
        let pred = NeuralRecording::load(p)?;
        if obs.n_sensors() != pred.n_sensors() || obs.n_samples() != pred.n_samples() {
            bail!(usage(format!(
                "{} is {}x{} but {} is {}x{}",
                o.display(),
                obs.n_sensors(),
                obs.n_samples(),
                p.display(),
                pred.n_sensors(),
                pred.n_samples()
            )));
        }
        let n = obs.n_samples();
        let to_sample = |t: f64| (t * obs.fs).round().clamp(0.0, n as f64) as usize;
        let lo = args.start_s.map_or(0, to_sample);
        let hi = args.end_s.map_or(n, to_sample);
        if hi < lo + 2 {
            bail!(usage(format!(
                "scored window [{lo}, {hi}) holds fewer than two samples"
            )));
        }
        let r = sensor_correlations(
            obs.data.slice(s![.., lo..hi]),
            pred.data.slice(s![.., lo..hi]),
        )?;
        for (sensor, r) in obs.sensors.iter().zip(&r) {
            w.write_record([obs.subject.as_str(), sensor.as_str(), &format!("{r:e}")])?;
        }
    }
    w.flush()?;
    rec.finish()?;
    Ok(())
}

fn read_report(dir: &Path) -> Result<FitReport> {
    let path = dir.join("report.json");
    let text =
        std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn compare(cli: &Cli, args: &CompareArgs) -> Result<()> {
    let a = read_report(&args.a)?;
    let b = read_report(&args.b)?;
    if a.split != b.split {
        bail!(usage(
            "the two fits were evaluated on different test partitions"
        ));
    }
    let scores = |r: &FitReport| -> Vec<(String, f64)> {
        r.test_scores
            .iter()
            .map(|s| (s.subject.clone(), s.mean_r))
            .collect()
    };
    let report = compare_scores(
        a.variant.as_str(),
        b.variant.as_str(),
        &scores(&a),
        &scores(&b),
    )?;
    log::info!(
        "t = {:.4}, p = {:.4e} over {} subjects",
        report.t,
        report.p,
        report.n
    );

    let mut rec = Recorder::new("compare", &cli.out_dir)?;
    rec.inputs = vec![args.a.join("report.json"), args.b.join("report.json")];
    rec.config = serde_json::json!({ "a": args.a, "b": args.b });
    let path = rec.output("comparison.json")?;
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    rec.finish()?;
    Ok(())
}

fn load_synth_config(path: &Path) -> Result<SynthConfig> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let is_toml = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    let parsed = if is_toml {
        toml::from_str(&text).map_err(|e| e.to_string())
    } else {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// Run configuration pointing at a freshly written synthetic study.
fn synthetic_run_config(cfg: &SynthConfig) -> RunConfig {
    RunConfig {
        stimulus: StimulusPaths {
            lexicon: synth::files::LEXICON.into(),
            confusion: vec![synth::files::CONFUSION.into()],
            transcript: synth::files::TRANSCRIPT.into(),
            priors: synth::files::PRIORS.into(),
            unigram: Some(synth::files::UNIGRAM.into()),
        },
        recordings: vec![synth::files::RECORDINGS.into()],
        variant: LinkingVariant::Baseline,
        cognitive: cfg.cognitive,
        search: Default::default(),
        model: ModelOptions {
            word_lag_s: cfg.word_lag_s,
            sublexical_lag_s: cfg.sublexical_lag_s,
            ..ModelOptions::default()
        },
        seed: cfg.seed,
    }
}

fn simulate(cli: &Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => load_synth_config(p)?,
        None => SynthConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let mut rec = Recorder::new("simulate", &cli.out_dir)?;
    rec.inputs = cli.config.iter().cloned().collect();
    rec.seed = Some(cfg.seed);
    rec.config = serde_json::to_value(&cfg)?;

    let dataset = synth::generate(&cfg)?;
    rec.outputs = dataset.write(&cli.out_dir)?;
    let synth_path = rec.output("synth.toml")?;
    let text = toml::to_string(&cfg)
        .map_err(|e| anyhow::anyhow!("serialising the synthesis config: {e}"))?;
    std::fs::write(&synth_path, text)
        .with_context(|| format!("writing {}", synth_path.display()))?;
    rec.config_file = Some("synth.toml".into());
    let run_path = rec.output("run.toml")?;
    std::fs::write(&run_path, synthetic_run_config(&cfg).to_toml()?)
        .with_context(|| format!("writing {}", run_path.display()))?;
    log::info!(
        "{} subjects, {} samples, {} tokens",
        cfg.n_subjects,
        dataset.n_samples(),
        dataset.truth.tokens.len()
    );
    rec.finish()?;
    Ok(())
}
