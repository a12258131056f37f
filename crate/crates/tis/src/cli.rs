//! Command-line driver. Every command writes a self-describing output and
//! returns a JSON summary that `main` prints.
//!
//! Output locations are not inputs: they stay out of manifests, so a rerun
//! into another directory produces identical files.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;
use tis_core::dynamics::{generate_dataset, Split, SplitCounts, SystemSpec};
use tis_core::koopman::{prediction_errors, train, DikuModel, Direction, TrainConfig};
use tis_core::planner::{plan, plan_sst_baseline, PlanProblem, PlanResult, PlannerConfig};
use tis_core::reachability::{
    adversarial_inflate, build_tis, propagate, sample_tuples, ControlSampling, Flowpipe, InflateConfig, InitialSet,
    Propagator, ReachConfig, TrueDynamics,
};
use tis_core::{seeded_rng, Clock};

use crate::config::{SystemEntry, SystemsFile};
use crate::error::{io_err, Error, Result};
use crate::formats::{file_hash, json_hash, read_dataset, read_json, read_model, write_dataset, write_json, write_model, TrainingMeta};
use crate::report::{write_bench_csv, write_summary_csv, BenchRow, Manifest, MethodSummary, RunReport};
use crate::WallClock;

/// Relative output paths are resolved under this directory when it is set.
pub const OUTPUT_ROOT_ENV: &str = "TIS_OUTPUT_ROOT";

#[derive(Debug, Parser)]
#[command(name = "tis", version, about = "Koopman reachability and time-informed kinodynamic planning")]
pub struct Cli {
    /// Alternative systems file (defaults to the embedded config/systems.json).
    #[arg(long, global = true)]
    pub systems: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a trajectory dataset.
    GenData(GenDataArgs),
    /// Train an invertible Koopman model on a dataset.
    Train(TrainArgs),
    /// Long-horizon prediction errors of a model on a dataset split.
    EvalPredict(EvalArgs),
    /// Forward/backward reachable tubes and, given both ends, the time-informed set.
    Reach(ReachArgs),
    /// Solve one planning problem.
    Plan(PlanArgs),
    /// Repeat the informed planner and the SST baseline over seeds.
    Bench(BenchArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct GenDataArgs {
    #[arg(long)]
    pub system: String,
    #[arg(long, default_value_t = 1000)]
    pub count_train: usize,
    #[arg(long, default_value_t = 100)]
    pub count_val: usize,
    #[arg(long, default_value_t = 100)]
    pub count_test: usize,
    #[arg(long, default_value_t = 100)]
    pub horizon: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub system: String,
    #[arg(long)]
    pub data: PathBuf,
    /// Defaults for the optimizer fields come from the systems file.
    #[arg(long)]
    pub k_steps: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub windows: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
pub enum DirectionArg {
    Fwd,
    Bwd,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
pub enum SplitArg {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub horizon: usize,
    #[arg(long, value_enum, default_value = "fwd")]
    pub direction: DirectionArg,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Per-step error CSV.
    #[arg(long)]
    #[serde(skip)]
    pub report: PathBuf,
}

/// Where propagation comes from: a trained model or the true dynamics.
#[derive(Debug, Args, Serialize)]
pub struct DynamicsArgs {
    #[arg(long, conflicts_with = "true_dynamics")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub true_dynamics: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct ReachArgs {
    #[arg(long)]
    pub system: String,
    #[command(flatten)]
    pub dynamics: DynamicsArgs,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub start: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub goal: Option<Vec<f64>>,
    /// Goal ellipsoid radii, one value or one per state; a point goal if absent.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub goal_radius: Option<Vec<f64>>,
    #[arg(long = "M", default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0.015)]
    pub eta_fwd: f64,
    #[arg(long, default_value_t = 0.04)]
    pub eta_bwd: f64,
    /// Inflation rounds; 0 keeps the basic tubes.
    #[arg(long, default_value_t = 1)]
    pub rounds: usize,
    #[arg(long)]
    pub normalize_grad: bool,
    /// One constant control per sampled trajectory.
    #[arg(long)]
    pub hold_control: bool,
    /// Integration step; must match the model's when a model is used.
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long, default_value_t = 5.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PlannerArgs {
    #[arg(long)]
    pub mu: Option<f64>,
    /// Extensions per growth round.
    #[arg(long = "N")]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub delta2: Option<f64>,
    /// Samples per flowpipe.
    #[arg(long = "M")]
    pub samples: Option<usize>,
    #[arg(long)]
    pub max_rounds: Option<usize>,
    /// Wall-clock budget in seconds.
    #[arg(long)]
    pub time_budget: Option<f64>,
    /// Full planner configuration as JSON; flags override its fields.
    #[arg(long)]
    pub planner_config: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct PlanArgs {
    #[arg(long)]
    pub system: String,
    #[command(flatten)]
    pub dynamics: DynamicsArgs,
    /// Problem JSON; the shipped benchmark problem of the system if absent.
    #[arg(long)]
    pub problem: Option<PathBuf>,
    /// Run the SST baseline instead of the informed planner.
    #[arg(long)]
    pub baseline: bool,
    #[command(flatten)]
    pub planner: PlannerArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchArgs {
    #[arg(long)]
    pub system: String,
    #[command(flatten)]
    pub dynamics: DynamicsArgs,
    #[arg(long)]
    pub problem: Option<PathBuf>,
    #[command(flatten)]
    pub planner: PlannerArgs,
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
    #[arg(long, default_value_t = 0)]
    pub first_seed: u64,
    /// Seeds run concurrently; timings are only comparable at 1.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

/// Applies the output-root override to relative paths.
pub fn output_path(path: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if path.is_relative() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

pub fn run(cli: Cli) -> Result<serde_json::Value> {
    let systems = SystemsFile::load(cli.systems.as_deref())?;
    match cli.command {
        Command::GenData(a) => cmd_gen_data(&systems, &a),
        Command::Train(a) => cmd_train(&systems, &a),
        Command::EvalPredict(a) => cmd_eval_predict(&a),
        Command::Reach(a) => cmd_reach(&systems, &a),
        Command::Plan(a) => cmd_plan(&systems, &a),
        Command::Bench(a) => cmd_bench(&systems, &a),
    }
}

pub fn cmd_gen_data(systems: &SystemsFile, a: &GenDataArgs) -> Result<serde_json::Value> {
    let entry = systems.get(&a.system)?;
    let counts = SplitCounts { train: a.count_train, validation: a.count_val, test: a.count_test };
    let data = generate_dataset(&entry.spec, counts, a.horizon, a.seed)?;
    let out = output_path(&a.out);
    write_dataset(&out, &data)?;
    let truncated: usize = Split::ALL.iter().map(|s| data.split(*s).iter().filter(|t| t.truncated).count()).sum();
    let manifest = Manifest::new("gen-data", a.seed, &(a, &entry.spec), vec![]);
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(json!({ "out": out, "counts": counts, "truncated": truncated }))
}

fn train_config(entry: &SystemEntry, a: &TrainArgs) -> TrainConfig {
    let d = &entry.train;
    TrainConfig {
        k_steps: a.k_steps.unwrap_or(d.k_steps),
        gamma: a.gamma.unwrap_or(d.gamma),
        lr: a.lr.unwrap_or(d.lr),
        batch: a.batch.unwrap_or(d.batch),
        epochs: a.epochs.unwrap_or(d.epochs),
        seed: a.seed,
        patience: a.patience.unwrap_or(d.patience),
        windows_per_trajectory: a.windows.unwrap_or(d.windows_per_trajectory),
    }
}

pub fn cmd_train(systems: &SystemsFile, a: &TrainArgs) -> Result<serde_json::Value> {
    let entry = systems.get(&a.system)?;
    let data = read_dataset(&a.data)?;
    if data.system != entry.spec.name {
        return Err(Error::Usage(format!("dataset is for `{}`, not `{}`", data.system, a.system)));
    }
    let config = train_config(entry, a);
    let mut rng = seeded_rng(a.seed);
    let model = DikuModel::new(entry.model.clone(), &mut rng)?;
    let clock = WallClock::start();
    let report = train(&model, &data, &config)?;
    let seconds = clock.seconds();

    let out = output_path(&a.out);
    create_dir(&out)?;
    let dataset_hash = file_hash(&a.data.join("train.bin"))?;
    let meta = TrainingMeta {
        config: config.clone(),
        config_hash: json_hash(&(&config, &entry.model)),
        dataset_hash: Some(dataset_hash.clone()),
        best_epoch: report.best_epoch,
        best_val_loss: report.val_loss[report.best_epoch],
        epochs_run: report.train_loss.len(),
        stopped_early: report.stopped_early,
    };
    write_model(&out.join("model.tism"), &a.system, &report.model, a.seed, Some(meta.clone()))?;
    let mut w = csv::Writer::from_path(out.join("loss.csv"))?;
    w.write_record(["epoch", "train_loss", "val_loss"])?;
    w.write_record(["0", "", &report.val_loss[0].to_string()])?;
    for (e, (t, v)) in report.train_loss.iter().zip(&report.val_loss[1..]).enumerate() {
        w.write_record([(e + 1).to_string(), t.to_string(), v.to_string()])?;
    }
    w.flush().map_err(io_err(out.join("loss.csv")))?;
    let manifest = Manifest::new("train", a.seed, &(a, &config), vec![("train.bin".into(), dataset_hash)]);
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(json!({ "out": out, "training": meta, "seconds": seconds }))
}

pub fn cmd_eval_predict(a: &EvalArgs) -> Result<serde_json::Value> {
    let (_, model) = read_model(&a.model)?;
    let data = read_dataset(&a.data)?;
    let split = match a.split {
        SplitArg::Train => Split::Train,
        SplitArg::Validation => Split::Validation,
        SplitArg::Test => Split::Test,
    };
    let direction = match a.direction {
        DirectionArg::Fwd => Direction::Forward,
        DirectionArg::Bwd => Direction::Backward,
    };
    let rep = prediction_errors(&model, data.split(split), a.horizon, direction)?;
    let path = output_path(&a.report);
    create_parent(&path)?;
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["step", "t", "mean_error"])?;
    for (k, e) in rep.per_step_mean.iter().enumerate() {
        w.write_record([(k + 1).to_string(), ((k + 1) as f64 * data.dt).to_string(), e.to_string()])?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(json!({
        "report": path,
        "trajectories": rep.per_trajectory_max.len(),
        "max_error": rep.max_error(),
        "median_max_error": rep.median_max_error(),
        "mean_log10_max": rep.mean_log10_max,
    }))
}

enum Dynamics {
    Model(Box<DikuModel>),
    True,
}

fn load_dynamics(a: &DynamicsArgs, entry: &SystemEntry) -> Result<(Dynamics, Vec<(String, String)>)> {
    match (&a.model, a.true_dynamics) {
        (Some(path), _) => {
            let (header, model) = read_model(path)?;
            if header.system != entry.spec.name {
                return Err(Error::Usage(format!("model is for `{}`, not `{}`", header.system, entry.spec.name)));
            }
            Ok((Dynamics::Model(Box::new(model)), vec![("model".into(), file_hash(path)?)]))
        }
        (None, true) => Ok((Dynamics::True, vec![])),
        (None, false) => Err(Error::Usage("pass --model FILE or --true-dynamics".into())),
    }
}

fn with_propagator<T>(d: &Dynamics, spec: &SystemSpec, f: impl FnOnce(&dyn Propagator) -> T) -> T {
    match d {
        Dynamics::Model(m) => f(m.as_ref()),
        Dynamics::True => f(&TrueDynamics { spec }),
    }
}

fn write_flowpipe_csv(dir: &Path, fp: &Flowpipe) -> Result<()> {
    create_dir(dir)?;
    let n = fp.tuples.n;
    let mut header = vec!["t".to_string(), "point_index".to_string()];
    header.extend((1..=n).map(|k| format!("x_{k}")));
    for (k, slice) in fp.slices.iter().enumerate() {
        let path = dir.join(format!("slice_{k:04}.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(&header)?;
        let t = k as f64 * fp.dt;
        for (p, row) in slice.points().chunks_exact(n).enumerate() {
            let mut rec = vec![t.to_string(), p.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(io_err(&path))?;
    }
    Ok(())
}

fn goal_set(center: &[f64], radius: Option<&[f64]>) -> Result<InitialSet> {
    match radius {
        None => Ok(InitialSet::point(center.to_vec())),
        Some([r]) => Ok(InitialSet::axis_ellipsoid(center.to_vec(), &vec![*r; center.len()])),
        Some(r) if r.len() == center.len() => Ok(InitialSet::axis_ellipsoid(center.to_vec(), r)),
        Some(_) => Err(Error::Usage("--goal-radius needs one value or one per state".into())),
    }
}

#[derive(Serialize)]
struct TubeTiming {
    basic: f64,
    inflated: f64,
    samples: usize,
    steps: usize,
}

fn timed_tube(
    prop: &dyn Propagator,
    spec: &SystemSpec,
    set: &InitialSet,
    direction: Direction,
    cfg: &ReachConfig,
    rng: &mut tis_core::Rng,
) -> Result<(Flowpipe, TubeTiming)> {
    let steps = (cfg.horizon / spec.dt).ceil() as usize;
    let clock = WallClock::start();
    let tuples = sample_tuples(set, spec, cfg.samples, steps, cfg.sampling, rng)?;
    let basic = propagate(prop, &tuples, direction, spec.dt)?;
    let t_basic = clock.seconds();
    let eta = match direction {
        Direction::Forward => cfg.eta_forward,
        Direction::Backward => cfg.eta_backward,
    };
    let inflate = InflateConfig { eta, rounds: cfg.rounds, normalize_grad: cfg.normalize_grad };
    let fp = if cfg.rounds > 0 { adversarial_inflate(prop, &basic, set, spec, &inflate)? } else { basic };
    let timing = TubeTiming { basic: t_basic, inflated: clock.seconds(), samples: fp.samples(), steps };
    Ok((fp, timing))
}

pub fn cmd_reach(systems: &SystemsFile, a: &ReachArgs) -> Result<serde_json::Value> {
    let entry = systems.get(&a.system)?;
    let (dynamics, files) = load_dynamics(&a.dynamics, entry)?;
    let mut spec = entry.spec.clone();
    if let Some(dt) = a.dt {
        if matches!(dynamics, Dynamics::Model(_)) && (dt - spec.dt).abs() > 1e-12 {
            return Err(Error::Usage(format!("the model was trained at dt = {}", spec.dt)));
        }
        spec.dt = dt;
        spec.validate()?;
    }
    if a.start.is_none() && a.goal.is_none() {
        return Err(Error::Usage("pass --start, --goal or both".into()));
    }
    let cfg = ReachConfig {
        samples: a.samples,
        eta_forward: a.eta_fwd,
        eta_backward: a.eta_bwd,
        rounds: a.rounds,
        normalize_grad: a.normalize_grad,
        sampling: if a.hold_control { ControlSampling::Hold } else { ControlSampling::default() },
        horizon: a.horizon,
        ..ReachConfig::default()
    };
    cfg.validate()?;
    let start = a.start.as_ref().map(|s| InitialSet::point(s.clone()));
    let goal = a.goal.as_ref().map(|g| goal_set(g, a.goal_radius.as_deref())).transpose()?;
    for set in start.iter().chain(&goal) {
        set.validate(&spec)?;
    }
    let out = output_path(&a.out);
    create_dir(&out)?;
    let mut rng = seeded_rng(a.seed);
    let mut summary = json!({ "out": out });
    with_propagator(&dynamics, &spec, |prop| -> Result<()> {
        if let Some(s) = &start {
            let (fp, t) = timed_tube(prop, &spec, s, Direction::Forward, &cfg, &mut rng)?;
            write_flowpipe_csv(&out.join("forward"), &fp)?;
            summary["frt"] = json!(t);
        }
        if let Some(g) = &goal {
            let (fp, t) = timed_tube(prop, &spec, g, Direction::Backward, &cfg, &mut rng)?;
            write_flowpipe_csv(&out.join("backward"), &fp)?;
            summary["brt"] = json!(t);
        }
        if let (Some(x0), Some(g)) = (&a.start, &goal) {
            let clock = WallClock::start();
            let tis = match build_tis(prop, &spec, x0, g, &cfg, &clock, &mut rng) {
                Ok(tis) => tis,
                Err(tis_core::Error::NoFeasibleEstimate { horizon }) => {
                    summary["tis"] = json!({ "cost": null, "reason": format!("start not reached within {horizon} s") });
                    return Ok(());
                }
                Err(e) => return Err(e.into()),
            };
            let doc = json!({
                "cost": tis.cost(),
                "cost_steps": tis.cost_steps(),
                "dt": tis.dt(),
                "pairing": tis.pairing(),
                "anchors": { "forward": tis.forward.anchors, "backward": tis.backward.anchors },
                "timings": tis.timings,
                "seconds": clock.seconds(),
            });
            write_json(&out.join("tis.json"), &doc)?;
            summary["tis"] = json!({ "cost": tis.cost(), "seconds": doc["seconds"] });
        }
        Ok(())
    })?;
    let manifest = Manifest::new("reach", a.seed, &(a, &cfg), files);
    write_json(&out.join("manifest.json"), &json!({ "manifest": manifest, "results": summary }))?;
    Ok(summary)
}

fn planner_config(entry: &SystemEntry, a: &PlannerArgs, seed: u64) -> Result<PlannerConfig> {
    let mut c = match &a.planner_config {
        Some(p) => read_json(p)?,
        None => entry.planner_config(),
    };
    c.seed = seed;
    c.mu = a.mu.unwrap_or(c.mu);
    c.iterations = a.iterations.unwrap_or(c.iterations);
    c.eps = a.eps.unwrap_or(c.eps);
    c.delta2 = a.delta2.unwrap_or(c.delta2);
    c.reach.samples = a.samples.unwrap_or(c.reach.samples);
    c.max_rounds = a.max_rounds.unwrap_or(c.max_rounds);
    c.time_budget = a.time_budget.or(c.time_budget);
    c.validate()?;
    Ok(c)
}

fn load_problem(path: Option<&Path>, entry: &SystemEntry) -> Result<(PlanProblem, Vec<(String, String)>)> {
    let (problem, files) = match path {
        Some(p) => (read_json(p)?, vec![("problem".into(), file_hash(p)?)]),
        None => (crate::config::benchmark_problem(&entry.spec.name)?, vec![]),
    };
    problem.validate(&entry.spec)?;
    Ok((problem, files))
}

/// Runs one method on one problem: `"ours"` (informed) or `"sst"`.
pub fn run_method(
    method: &str,
    problem: &PlanProblem,
    spec: &SystemSpec,
    prop: &dyn Propagator,
    config: &PlannerConfig,
) -> Result<PlanResult> {
    let clock = WallClock::start();
    Ok(match method {
        "ours" => plan(problem, spec, prop, config, &clock)?,
        "sst" => plan_sst_baseline(problem, spec, config, &clock)?,
        other => return Err(Error::Usage(format!("unknown method `{other}`"))),
    })
}

pub fn cmd_plan(systems: &SystemsFile, a: &PlanArgs) -> Result<serde_json::Value> {
    let entry = systems.get(&a.system)?;
    let (problem, mut files) = load_problem(a.problem.as_deref(), entry)?;
    let config = planner_config(entry, &a.planner, a.seed)?;
    let method = if a.baseline { "sst" } else { "ours" };
    let (dynamics, model_files) = if a.baseline { (Dynamics::True, vec![]) } else { load_dynamics(&a.dynamics, entry)? };
    files.extend(model_files);
    let result = with_propagator(&dynamics, &entry.spec, |prop| run_method(method, &problem, &entry.spec, prop, &config))?;
    let manifest = Manifest::new("plan", a.seed, &(a, &config, &problem), files);
    let report = RunReport::new(manifest, method, &a.system, &result);
    let out = output_path(&a.out);
    create_parent(&out)?;
    write_json(&out, &report)?;
    Ok(json!({ "out": out, "method": method, "metrics": result.metrics, "best_effort": result.best_effort }))
}

pub fn cmd_bench(systems: &SystemsFile, a: &BenchArgs) -> Result<serde_json::Value> {
    let entry = systems.get(&a.system)?;
    let (problem, mut files) = load_problem(a.problem.as_deref(), entry)?;
    let (dynamics, model_files) = load_dynamics(&a.dynamics, entry)?;
    files.extend(model_files);
    let out = output_path(&a.out);
    create_dir(&out.join("runs"))?;
    let jobs: Vec<(&str, u64)> = (a.first_seed..a.first_seed + a.seeds)
        .flat_map(|s| [("ours", s), ("sst", s)])
        .collect();
    let next = AtomicUsize::new(0);
    let rows = Mutex::new(Vec::new());
    let failure = Mutex::new(None);
    let worker = || {
        while let Some(&(method, seed)) = jobs.get(next.fetch_add(1, Ordering::SeqCst)) {
            let job = || -> Result<BenchRow> {
                let config = planner_config(entry, &a.planner, seed)?;
                let result =
                    with_propagator(&dynamics, &entry.spec, |p| run_method(method, &problem, &entry.spec, p, &config))?;
                let manifest = Manifest::new("bench", seed, &(method, &config, &problem), files.clone());
                let report = RunReport::new(manifest, method, &a.system, &result);
                write_json(&out.join("runs").join(format!("{method}-seed{seed:03}.json")), &report)?;
                Ok(BenchRow::new(method, seed, &result.metrics))
            };
            match job() {
                Ok(row) => rows.lock().expect("no poisoned lock").push(row),
                Err(e) => {
                    failure.lock().expect("no poisoned lock").get_or_insert(e);
                    return;
                }
            }
        }
    };
    std::thread::scope(|s| {
        for _ in 1..a.threads.clamp(1, jobs.len().max(1)) {
            s.spawn(worker);
        }
        worker();
    });
    if let Some(e) = failure.into_inner().expect("no poisoned lock") {
        return Err(e);
    }
    let mut rows = rows.into_inner().expect("no poisoned lock");
    rows.sort_by(|x, y| (x.seed, &x.method).cmp(&(y.seed, &y.method)));
    write_bench_csv(&out.join("bench.csv"), &rows)?;
    let summaries = [MethodSummary::of("ours", &rows), MethodSummary::of("sst", &rows)];
    write_summary_csv(&out.join("summary.csv"), &summaries)?;
    let manifest = Manifest::new("bench", a.first_seed, &a, files);
    write_json(&out.join("manifest.json"), &json!({ "manifest": manifest, "summary": summaries }))?;
    Ok(json!({ "out": out, "summary": summaries }))
}
