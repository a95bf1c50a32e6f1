//! Subcommands. Each is a thin wrapper over one engine operation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use evscen_core::duration::DurationModel;
use evscen_core::gmm::{select_components, EmOptions, MixtureModel, Point};
use evscen_core::groundtruth::{generate_sessions, GroundTruthSpec};
use evscen_core::profile::write_profiles_csv;
use evscen_core::rates::RateSchedule;
use evscen_core::registry::ModelRegistry;
use evscen_core::scenario::{
    rate_design_workflow, run_scenario, ModelSet, RateDesignOptions, ScenarioConfig,
};
use evscen_core::session::{read_sessions_csv, write_sessions_csv, Segment};
use evscen_core::surrogate::{
    build_training_set, fit, model_selection_report, HyperGrid, ModelSource, SessionPool,
    SessionSource, SurrogateKind, SurrogateModel, TrainingSet,
};
use evscen_core::{Error, Result};
use serde_json::{json, Value};

#[derive(Debug, Parser)]
#[command(name = "evscen", version, about = "EV charging scenario engine")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw sessions from a ground-truth generator spec.
    GenerateData(GenerateData),
    /// Fit a start/energy mixture (BIC over a G range) plus a duration model.
    FitGmm(FitGmm),
    /// Build LP training pairs under a rate and fit a control surrogate.
    TrainSurrogate(TrainSurrogate),
    /// Simulate a scenario and write profiles, metrics and timings.
    RunScenario(RunScenario),
    /// Evaluate a proposed rate end to end.
    RateDesign(RateDesign),
    /// Summarize a model, surrogate, rate or scenario result.
    Report(Report),
    /// Serve the HTTP API.
    Serve(Serve),
}

#[derive(Debug, Args)]
pub struct GenerateData {
    /// Generator spec; the bundled one when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub segment: String,
    #[arg(short = 'n', long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitGmm {
    #[arg(long)]
    pub sessions: PathBuf,
    /// Keep only sessions of this segment; required when the file mixes segments.
    #[arg(long)]
    pub segment: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub g_min: usize,
    #[arg(long, default_value_t = 8)]
    pub g_max: usize,
    #[arg(long, default_value_t = 5)]
    pub restarts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also store the model in this registry under the segment key.
    #[arg(long)]
    pub models_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainSurrogate {
    /// Sessions CSV (resampled with replacement) or mixture model JSON.
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Reuse a saved training set instead of solving LPs.
    #[arg(long)]
    pub training_set: Option<PathBuf>,
    #[arg(long)]
    pub rate: PathBuf,
    /// ridge, linear, random_forest, mlp, or all (selection report).
    #[arg(long, default_value = "ridge")]
    pub kind: String,
    #[arg(long, default_value_t = 1000)]
    pub n_instances: usize,
    #[arg(long, default_value_t = 250)]
    pub n_vehicles: usize,
    #[arg(long, default_value_t = 15)]
    pub dt: u32,
    #[arg(long, default_value_t = 5)]
    pub cv_folds: usize,
    /// Hyperparameter grid JSON; shipped defaults when omitted.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub save_training_set: Option<PathBuf>,
    /// Also store the surrogate (and its rate) in this registry.
    #[arg(long)]
    pub models_dir: Option<PathBuf>,
    /// Registry id; the output file stem when omitted.
    #[arg(long)]
    pub id: Option<String>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub models_dir: Option<PathBuf>,
    /// Use mixtures built from the bundled ground-truth spec.
    #[arg(long)]
    pub synthetic: bool,
}

#[derive(Debug, Args)]
pub struct RunScenario {
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub models: ModelArgs,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config output resolution.
    #[arg(long)]
    pub dt: Option<u32>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RateDesign {
    #[arg(long)]
    pub rate: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub models: ModelArgs,
    #[arg(long, default_value_t = 1000)]
    pub n_instances: usize,
    #[arg(long, default_value_t = 250)]
    pub n_vehicles: usize,
    #[arg(long, default_value_t = 15)]
    pub dt: u32,
    #[arg(long, default_value = "ridge")]
    pub kind: String,
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct Report {
    /// Model, surrogate, rate or training-set JSON, or a scenario output directory.
    pub path: PathBuf,
}

#[derive(Debug, Args)]
pub struct Serve {
    #[command(flatten)]
    pub models: ModelArgs,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: String,
    /// Scenario runs predicted to take longer than this return a poll token.
    #[arg(long, default_value_t = 5.0)]
    pub async_threshold: f64,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateData(a) => generate_data(a),
        Command::FitGmm(a) => fit_gmm(a),
        Command::TrainSurrogate(a) => train_surrogate(a),
        Command::RunScenario(a) => run_scenario_cmd(a),
        Command::RateDesign(a) => rate_design(a),
        Command::Report(a) => report(a),
        Command::Serve(a) => serve(a),
    }
}

fn emit(v: Value) {
    println!("{}", serde_json::to_string(&v).expect("serializable"));
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.into(),
        source,
    })
}

fn write_json(path: &Path, v: &impl serde::Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(v).expect("serializable");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_kind(s: &str) -> Result<SurrogateKind> {
    s.parse()
}

fn grid(path: &Option<PathBuf>) -> Result<HyperGrid> {
    path.as_deref().map_or(Ok(HyperGrid::default()), read_json)
}

/// Mixtures from a registry, the bundled spec, or both (registry wins).
pub fn load_models(args: &ModelArgs) -> Result<(ModelSet, Option<ModelRegistry>)> {
    let mut set = if args.synthetic {
        ModelSet::from_ground_truth(&GroundTruthSpec::shipped())?
    } else {
        ModelSet::new()
    };
    let reg = match &args.models_dir {
        Some(dir) => {
            let reg = ModelRegistry::open(dir)?;
            let stored = reg.model_set()?;
            for seg in stored.segments() {
                set.insert(stored.get(*seg).unwrap().clone())?;
            }
            Some(reg)
        }
        None => None,
    };
    if set.is_empty() {
        return Err(Error::MissingModel(
            "no mixture models (pass --models-dir with fitted mixtures or --synthetic)".into(),
        ));
    }
    Ok((set, reg))
}

fn generate_data(a: GenerateData) -> Result<()> {
    let spec = match &a.spec {
        Some(p) => GroundTruthSpec::load(p)?,
        None => GroundTruthSpec::shipped(),
    };
    let segment: Segment = a.segment.parse()?;
    let sessions = generate_sessions(&spec, segment, a.n, a.seed)?;
    write_sessions_csv(&sessions, &a.out)?;
    emit(json!({ "sessions": sessions.len(), "segment": segment.key(), "out": a.out }));
    Ok(())
}

fn fit_gmm(a: FitGmm) -> Result<()> {
    let mut sessions = read_sessions_csv(&a.sessions)?;
    let segment = match &a.segment {
        Some(s) => {
            let seg: Segment = s.parse()?;
            sessions.retain(|x| x.segment == seg);
            seg
        }
        None => {
            let first = sessions
                .first()
                .ok_or_else(|| Error::invalid("sessions", "file has no sessions"))?
                .segment;
            if sessions.iter().any(|s| s.segment != first) {
                return Err(Error::invalid(
                    "segment",
                    "sessions mix segments; pass --segment",
                ));
            }
            first
        }
    };
    if a.g_min == 0 || a.g_min > a.g_max {
        return Err(Error::invalid("G_range", "need 1 ≤ g-min ≤ g-max"));
    }
    let data: Vec<Point> = sessions.iter().map(|s| [s.start, s.energy]).collect();
    let g_range: Vec<usize> = (a.g_min..=a.g_max).collect();
    let opts = EmOptions {
        restarts: a.restarts,
        ..EmOptions::default()
    };
    let selection = select_components(&data, &g_range, &opts, a.seed)?;
    let bic = selection.bic.clone();
    let mut model = selection.into_chosen().with_segment(segment);
    model.duration = Some(DurationModel::fit(&sessions)?);
    model.validate()?;
    if let Some(out) = &a.out {
        model.save(out)?;
    }
    if let Some(dir) = &a.models_dir {
        ModelRegistry::open(dir)?.put_mixture(&segment.key(), model.clone())?;
    }
    emit(json!({
        "segment": segment.key(),
        "n": data.len(),
        "chosen_g": model.g(),
        "bic": bic,
        "weights": model.weights,
    }));
    Ok(())
}

fn source_from(path: &Path) -> Result<Box<dyn SessionSource>> {
    let is_csv = path.extension().is_some_and(|x| x == "csv");
    if is_csv {
        return Ok(Box::new(SessionPool::new(read_sessions_csv(path)?)?));
    }
    let m = MixtureModel::load(path)?;
    let segment = m
        .segment
        .ok_or_else(|| Error::invalid("segment", "mixture model has no segment"))?;
    let duration = m
        .duration
        .clone()
        .ok_or_else(|| Error::MissingModel(format!("duration model in {}", path.display())))?;
    Ok(Box::new(ModelSource::new(m, duration, segment)?))
}

fn train_surrogate(a: TrainSurrogate) -> Result<()> {
    let rate = RateSchedule::load(&a.rate)?;
    let ts = match (&a.training_set, &a.source) {
        (Some(p), _) => {
            let ts = TrainingSet::load(p)?;
            if ts.rate_sha256 != rate.content_hash() {
                return Err(Error::HashMismatch {
                    what: format!("rate of training set {}", p.display()),
                    recorded: ts.rate_sha256,
                    found: rate.content_hash(),
                });
            }
            ts
        }
        (None, Some(src)) => {
            let source = source_from(src)?;
            build_training_set(
                source.as_ref(),
                &rate,
                a.n_instances,
                a.n_vehicles,
                a.dt,
                a.seed,
            )?
        }
        (None, None) => {
            return Err(Error::invalid("source", "pass --source or --training-set"));
        }
    };
    if let Some(p) = &a.save_training_set {
        ts.save(p)?;
    }
    let grid = grid(&a.grid)?;
    let model: SurrogateModel = if a.kind == "all" {
        let report = model_selection_report(&ts, &SurrogateKind::ALL, &grid, a.cv_folds, a.seed)?;
        print!("{}", report.to_table());
        write_json(&a.out.with_extension("report.json"), &report)?;
        report.selected_model().clone()
    } else {
        let kind = parse_kind(&a.kind)?;
        fit(kind, &ts, a.cv_folds, &grid.for_kind(kind), a.seed)?
    };
    model.save(&a.out)?;
    if let Some(dir) = &a.models_dir {
        let id =
            a.id.clone()
                .unwrap_or_else(|| a.out.file_stem().unwrap().to_string_lossy().into_owned());
        let mut reg = ModelRegistry::open(dir)?;
        if reg.rate(&rate.name).is_none() {
            reg.put_rate(rate.clone())?;
        }
        reg.put_surrogate(&id, model.clone())?;
    }
    emit(json!({
        "kind": model.kind,
        "hyper": model.hyper,
        "rate": rate.name,
        "n_instances": ts.len(),
        "cv_rmse": model.scores.cv_rmse,
        "test_rmse": model.scores.test_rmse,
        "mean_lp_seconds": ts.mean_lp_seconds(),
        "out": a.out,
    }));
    Ok(())
}

fn run_scenario_cmd(a: RunScenario) -> Result<()> {
    let mut config = ScenarioConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(dt) = a.dt {
        config.dt_output = dt;
    }
    config.validate()?;
    let (models, reg) = load_models(&a.models)?;
    let surrogates = reg.map(|r| r.surrogates().clone()).unwrap_or_default();
    let result = run_scenario(&config, &models, &surrogates)?;
    result.write_bundle(&a.out)?;
    emit(json!({
        "out": a.out,
        "peak_kw": result.metrics.peak_kw,
        "peak_time": result.metrics.peak_time,
        "total_energy_kwh": result.metrics.total_energy_kwh,
        "seconds": result.timings.get("total"),
    }));
    Ok(())
}

fn rate_design(a: RateDesign) -> Result<()> {
    let rate = RateSchedule::load(&a.rate)?;
    let config = ScenarioConfig::load(&a.config)?;
    let (models, _) = load_models(&a.models)?;
    let options = RateDesignOptions {
        n_instances: a.n_instances,
        n_vehicles: a.n_vehicles,
        dt: a.dt,
        kind: parse_kind(&a.kind)?,
        grid: grid(&a.grid)?,
        ..RateDesignOptions::default()
    };
    let out = rate_design_workflow(&rate, &models, &config, &options, a.seed)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let r = &out.report;
    write_json(&a.out.join("report.json"), r)?;
    out.surrogate.save(a.out.join("surrogate.json"))?;
    write_profiles_csv(
        &[
            ("segment_before", &r.segment_before),
            ("segment_after", &r.segment_after),
        ],
        a.out.join("segment_profiles.csv"),
    )?;
    write_profiles_csv(
        &[
            ("total_before", &r.total_before),
            ("total_after", &r.total_after),
        ],
        a.out.join("total_profiles.csv"),
    )?;
    emit(json!({
        "rate": r.rate_name,
        "rmse": r.rmse,
        "segment_peak_before_kw": r.segment_peak_before_kw,
        "segment_peak_after_kw": r.segment_peak_after_kw,
        "total_peak_before_kw": r.total_peak_before_kw,
        "total_peak_after_kw": r.total_peak_after_kw,
        "timings": r.timings,
        "speedup": r.speedup,
        "out": a.out,
    }));
    Ok(())
}

fn report(a: Report) -> Result<()> {
    print!("{}", report_text(&a.path)?);
    Ok(())
}

/// Human-readable summary of any artifact the CLI writes.
pub fn report_text(path: &Path) -> Result<String> {
    use std::fmt::Write;
    let mut s = String::new();
    if path.is_dir() {
        let metrics: Value = read_json(&path.join("metrics.json"))?;
        let timings: BTreeMap<String, f64> = read_json(&path.join("timings.json"))?;
        writeln!(s, "scenario result {}", path.display()).unwrap();
        writeln!(
            s,
            "peak: {:.1} kW at {}",
            metrics["peak_kw"].as_f64().unwrap_or(0.0),
            metrics["peak_time"].as_str().unwrap_or("?")
        )
        .unwrap();
        writeln!(
            s,
            "total energy: {:.1} kWh",
            metrics["total_energy_kwh"].as_f64().unwrap_or(0.0)
        )
        .unwrap();
        if let Some(c) = metrics["session_counts"].as_object() {
            for (k, v) in c {
                writeln!(s, "  {k}: {v} sessions").unwrap();
            }
        }
        for (k, v) in timings {
            writeln!(s, "time {k}: {v:.3}s").unwrap();
        }
        return Ok(s);
    }
    let v: Value = read_json(path)?;
    if v.get("n_components").is_some() {
        let m = MixtureModel::from_json(&v.to_string())?;
        writeln!(s, "mixture model {}", path.display()).unwrap();
        if let Some(seg) = m.segment {
            writeln!(s, "segment: {seg}").unwrap();
        }
        writeln!(s, "G: {}", m.g()).unwrap();
        if let Some(f) = &m.fit {
            writeln!(
                s,
                "log-likelihood: {:.3} (n={}), BIC {:.3}",
                f.log_likelihood, f.n, f.bic
            )
            .unwrap();
            if !f.bic_curve.is_empty() {
                writeln!(s, "BIC curve:").unwrap();
                for (g, b) in &f.bic_curve {
                    writeln!(
                        s,
                        "  G={g}: {b:.3}{}",
                        if *g == m.g() { "  <- chosen" } else { "" }
                    )
                    .unwrap();
                }
            }
        }
        writeln!(s, "weights:").unwrap();
        for (i, w) in m.weights.iter().enumerate() {
            writeln!(
                s,
                "  [{i}] {w:.4}  start {:.1} min  energy {:.2} kWh",
                m.means[i][0], m.means[i][1]
            )
            .unwrap();
        }
        if let Some(d) = &m.duration {
            writeln!(
                s,
                "duration: lognormal(mu={:.3}, sigma={:.3})",
                d.log_mean, d.log_std
            )
            .unwrap();
        }
    } else if v.get("regressor").is_some() {
        let m = SurrogateModel::from_json(&v.to_string())?;
        writeln!(
            s,
            "surrogate {} ({}), dt={} min",
            path.display(),
            m.kind,
            m.dt
        )
        .unwrap();
        writeln!(
            s,
            "hyperparameters: {}",
            serde_json::to_string(&m.hyper).unwrap()
        )
        .unwrap();
        writeln!(
            s,
            "rate: {} (sha256 {})",
            m.provenance.rate_name, m.provenance.rate_sha256
        )
        .unwrap();
        writeln!(
            s,
            "trained on {} instances of {} vehicles",
            m.provenance.n_instances, m.provenance.n_vehicles
        )
        .unwrap();
        let opt = |x: Option<f64>| x.map_or("-".into(), |x| format!("{x:.5}"));
        writeln!(
            s,
            "cv RMSE {:.5}, dev RMSE {}, test RMSE {}",
            m.scores.cv_rmse,
            opt(m.scores.dev_rmse),
            opt(m.scores.test_rmse)
        )
        .unwrap();
        writeln!(
            s,
            "median energy drift (test): {}",
            opt(m.scores.test_energy_drift_median)
        )
        .unwrap();
        for w in &m.warnings {
            writeln!(s, "warning: {w}").unwrap();
        }
    } else if v.get("energy_prices").is_some() {
        let r = RateSchedule::from_json(&v.to_string())?;
        writeln!(s, "rate {} ({:?})", r.name, r.objective).unwrap();
        for p in &r.energy_prices {
            writeln!(
                s,
                "  energy {}: {} $/kWh",
                serde_json::to_string(&p.window).unwrap(),
                p.price
            )
            .unwrap();
        }
        for d in &r.demand_charges {
            writeln!(
                s,
                "  demand {}: {} $/kW",
                serde_json::to_string(&d.window).unwrap(),
                d.price
            )
            .unwrap();
        }
        if let Some(c) = r.cap_kw {
            writeln!(s, "  cap: {c} kW").unwrap();
        }
    } else if v.get("speedup").is_some() {
        writeln!(s, "rate design report {}", path.display()).unwrap();
        for k in [
            "rate_name",
            "rmse",
            "segment_peak_before_kw",
            "segment_peak_after_kw",
            "total_peak_before_kw",
            "total_peak_after_kw",
            "mean_lp_seconds",
            "mean_apply_seconds",
            "speedup",
            "timings",
        ] {
            writeln!(s, "  {k}: {}", v[k]).unwrap();
        }
    } else if v.get("split").is_some() && v.get("x").is_some() {
        let ts: TrainingSet = serde_json::from_value(v).map_err(|source| Error::Json {
            path: path.into(),
            source,
        })?;
        ts.validate()?;
        writeln!(
            s,
            "training set: {} instances, {} steps, rate {}",
            ts.len(),
            ts.steps(),
            ts.rate_name
        )
        .unwrap();
        writeln!(s, "mean LP seconds: {:.3}", ts.mean_lp_seconds()).unwrap();
    } else {
        return Err(Error::invalid(
            "path",
            format!("{} is not a recognised artifact", path.display()),
        ));
    }
    Ok(s)
}

fn serve(a: Serve) -> Result<()> {
    let (models, reg) = load_models(&a.models)?;
    let state = crate::server::AppState::new(reg.unwrap_or_default(), models, a.async_threshold);
    let rt = tokio::runtime::Runtime::new().map_err(|e| Error::io("tokio runtime", e))?;
    rt.block_on(crate::server::serve(state, &a.bind))
}
