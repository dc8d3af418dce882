use std::fs;
use std::path::{Path, PathBuf};

use clap::{value_parser, Arg, ArgAction, ArgMatches};
use fallsense::corpus::Corpus;
use fallsense::error::{invalid, Error, Result};
use fallsense::evaluation::{
    confusion, metric_tables, render_report, rmse_by_group, svg, trajectory, ReportBundle, SegmentPrediction,
    TrajectoryTrace, TrialOutcome,
};
use fallsense::features::{split_sequences, FallSegment, Signal, StandardizationStats, FDNN_WIDTH};
use fallsense::fdnn::{self, forward_infer, FdnnCheckpoint, LabeledSequence};
use fallsense::kan::{self, cross_validate, fit_segments, test_segments};
use fallsense::selection::{FeatureMatrix, SelectionReport};
use fallsense::sisfall::{load_subjects, verify_corpus, SubjectId, TrialId, SAMPLE_PERIOD_MS};
use fallsense::streaming::{events_to_csv, stream_trial, PacingMode};
use fallsense::synthetic::generate_corpus;

use crate::config::RunConfig;

/// Resolved configuration and output directory shared by every subcommand.
pub struct Context {
    pub config: RunConfig,
    pub out: PathBuf,
}

impl Context {
    fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.out.join(name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    fn write_json<T: serde::Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        self.write(name, serde_json::to_string_pretty(value)? + "\n")
    }

    fn corpus(&self) -> Result<Corpus> {
        Corpus::open(&self.config.corpus_options()?)
    }
}

pub trait Subcommand: Send + Sync {
    fn name(&self) -> &'static str;
    fn about(&self) -> &'static str;
    /// Whether the command reads a dataset given as an optional positional root.
    fn uses_dataset(&self) -> bool {
        true
    }
    fn args(&self) -> Vec<Arg> {
        Vec::new()
    }
    fn run(&self, ctx: &Context, m: &ArgMatches) -> Result<()>;
}

/// Subcommands keyed by name, in registration order.
pub struct Registry {
    commands: Vec<Box<dyn Subcommand>>,
}

impl Registry {
    pub fn builtin() -> Self {
        let mut r = Self { commands: Vec::new() };
        r.register(Box::new(Verify));
        r.register(Box::new(Features));
        r.register(Box::new(Select));
        r.register(Box::new(TrainFdnn));
        r.register(Box::new(EvalFdnn));
        r.register(Box::new(TrainKan));
        r.register(Box::new(CvKan));
        r.register(Box::new(EvalKan));
        r.register(Box::new(Trace));
        r.register(Box::new(Stream));
        r.register(Box::new(Synth));
        r.register(Box::new(Report));
        r
    }

    pub fn register(&mut self, c: Box<dyn Subcommand>) {
        self.commands.retain(|x| x.name() != c.name());
        self.commands.push(c);
    }

    pub fn iter(&self) -> impl Iterator<Item = &dyn Subcommand> {
        self.commands.iter().map(|c| c.as_ref())
    }

    pub fn get(&self, name: &str) -> Option<&dyn Subcommand> {
        self.iter().find(|c| c.name() == name)
    }
}

fn path_arg(name: &'static str, help: &'static str) -> Arg {
    Arg::new(name)
        .long(name)
        .value_name("PATH")
        .value_parser(value_parser!(PathBuf))
        .required(true)
        .help(help)
}

fn trial_arg() -> Arg {
    Arg::new("trial")
        .long("trial")
        .value_name("ID")
        .required(true)
        .help("Trial name such as F05_SA03_R02")
}

fn trial_id(m: &ArgMatches) -> Result<TrialId> {
    m.get_one::<String>("trial").expect("required").parse()
}

fn detector_names() -> Vec<String> {
    Signal::ALL[..FDNN_WIDTH].iter().map(|s| s.name().to_string()).collect()
}

struct Verify;

impl Subcommand for Verify {
    fn name(&self) -> &'static str {
        "verify"
    }
    fn about(&self) -> &'static str {
        "Check the corpus layout and count ADL and fall trials"
    }
    fn run(&self, ctx: &Context, _: &ArgMatches) -> Result<()> {
        let s = verify_corpus(ctx.config.root()?, &ctx.config.calibration)?;
        println!("ADL trials: {}", s.adl_trials);
        println!("Fall trials: {}", s.fall_trials);
        println!("Subjects: {}", s.by_subject.len());
        for w in &s.warnings {
            eprintln!("warning: {w}");
        }
        for (p, why) in &s.unreadable {
            eprintln!("unreadable: {}: {why}", p.display());
        }
        ctx.write_json("verify.json", &s)?;
        Ok(())
    }
}

struct Features;

impl Subcommand for Features {
    fn name(&self) -> &'static str {
        "features"
    }
    fn about(&self) -> &'static str {
        "Extract and cache the fall segments of every annotated fall trial"
    }
    fn run(&self, ctx: &Context, _: &ArgMatches) -> Result<()> {
        let corpus = ctx.corpus()?;
        let (segments, skipped) = corpus.segments()?;
        let mut index = String::from("trial_id,start_index,end_index,samples,duration_ms,stillness_not_found\n");
        let dir = ctx.out.join("segments");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for s in &segments {
            s.save(&dir.join(format!("{}.json", s.trial_id)))?;
            index.push_str(&format!(
                "{},{},{},{},{},{}\n",
                s.trial_id,
                s.start_index,
                s.end_index,
                s.len(),
                s.len().saturating_sub(1) as f64 * SAMPLE_PERIOD_MS,
                s.stillness_not_found
            ));
        }
        ctx.write("segments.csv", index)?;
        let fallback = segments.iter().filter(|s| s.stillness_not_found).count();
        println!("{} segments written, {fallback} without detected stillness, {} unannotated", segments.len(), skipped.len());
        Ok(())
    }
}

/// Segments whose repetition is not the held-out test repetition.
fn tuning_segments(ctx: &Context, segments: Vec<FallSegment>) -> Vec<FallSegment> {
    segments
        .into_iter()
        .filter(|s| s.trial_id.repetition != ctx.config.cv_plan.test)
        .collect()
}

struct Select;

impl Subcommand for Select {
    fn name(&self) -> &'static str {
        "select"
    }
    fn about(&self) -> &'static str {
        "Rank the signals by correlation and mRMR against the time of impact"
    }
    fn run(&self, ctx: &Context, _: &ArgMatches) -> Result<()> {
        let corpus = ctx.corpus()?;
        let segments = tuning_segments(ctx, corpus.segments()?.0);
        let mut rows = Vec::new();
        let mut target = Vec::new();
        for s in &segments {
            rows.extend_from_slice(s.segment_rows());
            target.extend_from_slice(&s.tti_targets);
        }
        let matrix = FeatureMatrix::from_rows(Signal::ALL.to_vec(), &rows)?;
        let report = SelectionReport::build(&matrix, &target, &ctx.config.selection, &ctx.config.kan.features)?;
        ctx.write("selection.csv", report.to_csv())?;
        ctx.write_json("selection.json", &report)?;
        let names = |v: &[Signal]| v.iter().map(|s| s.name()).collect::<Vec<_>>().join(" ");
        println!("correlation: {}", names(&report.correlation_ranked));
        println!("mrmr: {}", names(&report.mrmr_ranked));
        Ok(())
    }
}

/// Unstandardized detector inputs and labels for each listed trial.
fn detector_rows(corpus: &Corpus, ids: &[TrialId]) -> Result<Vec<(String, Vec<Vec<f64>>, Vec<bool>)>> {
    corpus.map_trials(ids, |t, frames| {
        let rows = frames.iter().map(|f| f.fdnn_view().to_vec()).collect();
        Ok((t.id.to_string(), rows, t.fall_mask()))
    })
}

fn labelled(raw: Vec<(String, Vec<Vec<f64>>, Vec<bool>)>, stats: &StandardizationStats) -> Result<Vec<LabeledSequence>> {
    raw.into_iter()
        .map(|(id, rows, labels)| {
            Ok(LabeledSequence {
                id,
                inputs: stats.apply(&rows)?,
                labels,
            })
        })
        .collect()
}

struct TrainFdnn;

impl Subcommand for TrainFdnn {
    fn name(&self) -> &'static str {
        "train-fdnn"
    }
    fn about(&self) -> &'static str {
        "Train the fall detector on the training share of the fall trials"
    }
    fn run(&self, ctx: &Context, _: &ArgMatches) -> Result<()> {
        let corpus = ctx.corpus()?;
        let split = split_sequences(&corpus.annotated_falls(), ctx.config.split, ctx.config.seed)?;
        ctx.write_json("split.json", &split)?;
        let train_raw = detector_rows(&corpus, &split.train)?;
        let val_raw = detector_rows(&corpus, &split.validation)?;
        let all_rows: Vec<&Vec<f64>> = train_raw.iter().flat_map(|t| &t.1).collect();
        let standardizer = StandardizationStats::fit(&all_rows)?;
        let train = labelled(train_raw, &standardizer)?;
        let val = labelled(val_raw, &standardizer)?;
        let cfg = &ctx.config.fdnn;
        let (params, log) = fdnn::train(cfg, &train, &val)?;
        ctx.write("training_log.csv", log.to_csv())?;
        let ckpt = FdnnCheckpoint {
            config: cfg.clone(),
            params,
            standardizer,
            features: detector_names(),
        };
        fdnn::save_checkpoint(&ctx.out.join("fdnn.ckpt"), &ckpt)?;
        println!(
            "best epoch {} validation accuracy {:.4} ({} train / {} validation sequences)",
            log.best_epoch,
            log.best_val_accuracy(),
            train.len(),
            val.len()
        );
        Ok(())
    }
}

fn load_detector(m: &ArgMatches) -> Result<FdnnCheckpoint> {
    let ckpt = fdnn::load_checkpoint(m.get_one::<PathBuf>("fdnn").expect("required"))?;
    if ckpt.features != detector_names() {
        return Err(invalid("detector checkpoint was trained on a different feature list"));
    }
    Ok(ckpt)
}

struct EvalFdnn;

impl Subcommand for EvalFdnn {
    fn name(&self) -> &'static str {
        "eval-fdnn"
    }
    fn about(&self) -> &'static str {
        "Score the detector on the test fall trials and every ADL trial"
    }
    fn args(&self) -> Vec<Arg> {
        vec![path_arg("fdnn", "Detector checkpoint")]
    }
    fn run(&self, ctx: &Context, m: &ArgMatches) -> Result<()> {
        let ckpt = load_detector(m)?;
        let corpus = ctx.corpus()?;
        let split = split_sequences(&corpus.annotated_falls(), ctx.config.split, ctx.config.seed)?;
        let mut ids = split.test;
        ids.extend(corpus.ids(false));
        let outcomes = corpus.map_trials(&ids, |t, frames| {
            let x: Vec<Vec<f64>> = frames.iter().map(|f| ckpt.standardizer.apply_row(&f.fdnn_view())).collect();
            let trace = forward_infer(&ckpt.params, &ckpt.config, &x)?;
            Ok(TrialOutcome {
                id: t.id.clone(),
                counts: confusion(&trace.decisions, &t.fall_mask(), None)?,
            })
        })?;
        ctx.write_json("detection_outcomes.json", &outcomes)?;
        let tables = metric_tables(&corpus.subjects(), &outcomes);
        for t in [&tables.fall_tpr, &tables.fall_tnr, &tables.adl_tnr] {
            ctx.write(&format!("{}.csv", t.metric), t.to_csv())?;
            println!(
                "{}: cell average {} pooled {}",
                t.metric,
                fmt(t.cell_average()),
                fmt(t.pooled_rate())
            );
        }
        Ok(())
    }
}

fn fmt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into())
}

struct TrainKan;

impl Subcommand for TrainKan {
    fn name(&self) -> &'static str {
        "train-kan"
    }
    fn about(&self) -> &'static str {
        "Fit the time-of-impact regressor on the first cross-validation fold"
    }
    fn run(&self, ctx: &Context, _: &ArgMatches) -> Result<()> {
        let corpus = ctx.corpus()?;
        let segments = corpus.segments()?.0;
        let fold = ctx
            .config
            .cv_plan
            .folds
            .first()
            .ok_or_else(|| invalid("cross-validation plan has no folds"))?;
        let (train, val): (Vec<FallSegment>, Vec<FallSegment>) = segments
            .into_iter()
            .filter(|s| s.trial_id.repetition != ctx.config.cv_plan.test)
            .partition(|s| fold.train.contains(&s.trial_id.repetition));
        let val: Vec<FallSegment> = val
            .into_iter()
            .filter(|s| s.trial_id.repetition == fold.validation)
            .collect();
        let (model, log) = fit_segments(&ctx.config.kan, &train, &val)?;
        ctx.write("fit_log.csv", log.to_csv())?;
        kan::save_checkpoint(&ctx.out.join("kan.ckpt"), &model, &ctx.config.kan)?;
        let best = &log.epochs[log.best_epoch - 1];
        println!(
            "{}: best epoch {} train RMSE {:.1} ms validation RMSE {:.1} ms",
            ctx.config.kan.label(),
            log.best_epoch,
            best.train_rmse,
            best.val_rmse
        );
        Ok(())
    }
}

struct CvKan;

impl Subcommand for CvKan {
    fn name(&self) -> &'static str {
        "cv-kan"
    }
    fn about(&self) -> &'static str {
        "Cross-validate the regressor over the hyperparameter grid"
    }
    fn run(&self, ctx: &Context, _: &ArgMatches) -> Result<()> {
        let corpus = ctx.corpus()?;
        let segments = corpus.segments()?.0;
        let candidates = ctx.config.cv_grid.expand(&ctx.config.kan);
        let outcome = cross_validate(&candidates, &ctx.config.cv_plan, &segments)?;
        ctx.write("cv.csv", outcome.to_csv())?;
        ctx.write_json("cv.json", &outcome)?;
        for p in &outcome.incomplete {
            eprintln!("warning: incomplete repetitions for {p}");
        }
        println!("best {}", outcome.best.label());
        Ok(())
    }
}

fn load_impact(m: &ArgMatches) -> Result<kan::KanModel> {
    Ok(kan::load_checkpoint(m.get_one::<PathBuf>("kan").expect("required"))?.0)
}

struct EvalKan;

impl Subcommand for EvalKan {
    fn name(&self) -> &'static str {
        "eval-kan"
    }
    fn about(&self) -> &'static str {
        "Predict the time of impact over the held-out test segments"
    }
    fn args(&self) -> Vec<Arg> {
        vec![path_arg("kan", "Regressor checkpoint")]
    }
    fn run(&self, ctx: &Context, m: &ArgMatches) -> Result<()> {
        let model = load_impact(m)?;
        let corpus = ctx.corpus()?;
        let segments = corpus.segments()?.0;
        let preds = test_segments(&ctx.config.cv_plan, &segments)
            .into_iter()
            .map(|s| {
                let tr = trajectory(&model, s)?;
                Ok(SegmentPrediction {
                    id: tr.id,
                    predicted: tr.predicted_ms,
                    targets: tr.truth_ms,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        ctx.write_json("impact_predictions.json", &preds)?;
        let heat = rmse_by_group(&corpus.subjects(), &preds)?;
        ctx.write("rmse_heatmap.csv", heat.to_csv())?;
        println!("{} test segments, global RMSE {} ms", preds.len(), fmt(heat.global_rmse));
        Ok(())
    }
}

struct Trace;

impl Subcommand for Trace {
    fn name(&self) -> &'static str {
        "trace"
    }
    fn about(&self) -> &'static str {
        "Predicted and true time of impact along one fall segment"
    }
    fn args(&self) -> Vec<Arg> {
        vec![path_arg("kan", "Regressor checkpoint"), trial_arg()]
    }
    fn run(&self, ctx: &Context, m: &ArgMatches) -> Result<()> {
        let model = load_impact(m)?;
        let id = trial_id(m)?;
        let corpus = ctx.corpus()?;
        let tr = trajectory(&model, &corpus.segment(&id)?)?;
        ctx.write(&format!("trajectory_{id}.csv"), tr.to_csv())?;
        ctx.write(&format!("trajectory_{id}.svg"), svg::trajectory(&tr))?;
        ctx.write_json(&format!("trajectory_{id}.json"), &tr)?;
        println!("{id}: {} samples ({} ms)", tr.t_ms.len(), tr.truth_ms.first().copied().unwrap_or(0.0));
        Ok(())
    }
}

struct Stream;

impl Subcommand for Stream {
    fn name(&self) -> &'static str {
        "stream"
    }
    fn about(&self) -> &'static str {
        "Replay one trial sample by sample through both models"
    }
    fn args(&self) -> Vec<Arg> {
        vec![
            path_arg("fdnn", "Detector checkpoint"),
            path_arg("kan", "Regressor checkpoint"),
            trial_arg(),
            Arg::new("mode")
                .long("mode")
                .value_parser(["realtime", "fast"])
                .help("Pace at 200 Hz or run unpaced (default from config)"),
        ]
    }
    fn run(&self, ctx: &Context, m: &ArgMatches) -> Result<()> {
        let detector = load_detector(m)?;
        let model = load_impact(m)?;
        let id = trial_id(m)?;
        let corpus = ctx.corpus()?;
        let trial = corpus.load(&id)?;
        let mut cfg = ctx.config.stream;
        if let Some(mode) = m.get_one::<String>("mode") {
            cfg.mode = mode.parse::<PacingMode>()?;
        }
        let (events, report) = stream_trial(&detector, Some(&model), corpus.profile(&id), &trial.samples, &cfg)?;
        ctx.write("events.csv", events_to_csv(&events))?;
        ctx.write_json("latency.json", &report)?;
        println!(
            "{} samples, {} flagged; latency mean {:.1} µs p99 {:.1} µs max {:.1} µs, {} over budget",
            report.samples,
            events.iter().filter(|e| e.decision).count(),
            report.mean_us,
            report.p99_us,
            report.max_us,
            report.misses
        );
        Ok(())
    }
}

struct Synth;

impl Subcommand for Synth {
    fn name(&self) -> &'static str {
        "synth"
    }
    fn about(&self) -> &'static str {
        "Generate an annotated synthetic corpus under <out>/corpus"
    }
    fn uses_dataset(&self) -> bool {
        false
    }
    fn run(&self, ctx: &Context, _: &ArgMatches) -> Result<()> {
        let corpus = generate_corpus(&ctx.config.synth)?;
        let root = ctx.out.join("corpus");
        corpus.write(&root, &ctx.config.calibration)?;
        let falls = corpus.trials.iter().filter(|t| t.truth.is_some()).count();
        println!(
            "{} subjects, {} trials ({falls} falls) in {}",
            corpus.profiles.len(),
            corpus.trials.len(),
            root.display()
        );
        Ok(())
    }
}

struct Report;

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

impl Subcommand for Report {
    fn name(&self) -> &'static str {
        "report"
    }
    fn about(&self) -> &'static str {
        "Render tables, heatmaps and traces from evaluation outputs"
    }
    fn uses_dataset(&self) -> bool {
        false
    }
    fn args(&self) -> Vec<Arg> {
        vec![
            Arg::new("inputs")
                .long("inputs")
                .value_name("DIR")
                .value_parser(value_parser!(PathBuf))
                .action(ArgAction::Append)
                .required(true)
                .help("Directories written by eval-fdnn, eval-kan or trace"),
            Arg::new("subjects")
                .long("subjects")
                .value_name("CSV")
                .value_parser(value_parser!(PathBuf))
                .help("Subject table listing every row to show"),
        ]
    }
    fn run(&self, ctx: &Context, m: &ArgMatches) -> Result<()> {
        let mut bundle = ReportBundle::default();
        for dir in m.get_many::<PathBuf>("inputs").expect("required") {
            let outcomes = dir.join("detection_outcomes.json");
            if outcomes.exists() {
                bundle.outcomes.extend(read_json::<Vec<TrialOutcome>>(&outcomes)?);
            }
            let impact = dir.join("impact_predictions.json");
            if impact.exists() {
                bundle.impact.extend(read_json::<Vec<SegmentPrediction>>(&impact)?);
            }
            let mut traces: Vec<PathBuf> = fs::read_dir(dir)
                .map_err(|e| Error::io(dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    let n = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
                    n.starts_with("trajectory_") && n.ends_with(".json")
                })
                .collect();
            traces.sort();
            for p in traces {
                bundle.trajectories.push(read_json::<TrajectoryTrace>(&p)?);
            }
        }
        if let Some(p) = m.get_one::<PathBuf>("subjects") {
            bundle.subjects = load_subjects(p)?.into_keys().collect::<Vec<SubjectId>>();
        }
        let written = render_report(&bundle, &ctx.out)?;
        println!("{} files written to {}", written.len(), ctx.out.display());
        Ok(())
    }
}
