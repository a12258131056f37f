//! Self-describing outputs: manifests, planning runs and benchmark tables.

use std::path::Path;

use serde::{Deserialize, Serialize};
use tis_core::planner::{PlanEvent, PlanMetrics, PlanResult, Solution};

use crate::error::Result;
use crate::formats::json_hash;

/// Written next to (or into) every artifact: enough to rerun the command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    /// Hash of `inputs` together with the hashes of all input files.
    pub inputs_hash: String,
    pub inputs: serde_json::Value,
    pub input_files: Vec<(String, String)>,
}

impl Manifest {
    pub fn new<T: Serialize>(command: &str, seed: u64, inputs: &T, input_files: Vec<(String, String)>) -> Self {
        let inputs = serde_json::to_value(inputs).expect("serializable inputs");
        let inputs_hash = json_hash(&(&inputs, &input_files));
        Self { command: command.into(), version: env!("CARGO_PKG_VERSION").into(), seed, inputs_hash, inputs, input_files }
    }
}

/// Contents of `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub manifest: Manifest,
    pub method: String,
    pub system: String,
    pub metrics: PlanMetrics,
    pub best_effort: bool,
    pub solution: Option<Solution>,
    pub events: Vec<PlanEvent>,
}

impl RunReport {
    pub fn new(manifest: Manifest, method: &str, system: &str, result: &PlanResult) -> Self {
        Self {
            manifest,
            method: method.into(),
            system: system.into(),
            metrics: result.metrics.clone(),
            best_effort: result.best_effort,
            solution: result.solution.clone(),
            events: result.events.clone(),
        }
    }
}

/// One benchmark run in the column set of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub seed: u64,
    #[serde(rename = "T_IN")]
    pub t_in: Option<f64>,
    #[serde(rename = "C_IN")]
    pub c_in: Option<f64>,
    #[serde(rename = "T_OP")]
    pub t_op: Option<f64>,
    #[serde(rename = "C_OP")]
    pub c_op: Option<f64>,
    #[serde(rename = "N_node")]
    pub n_node: usize,
}

impl BenchRow {
    pub fn new(method: &str, seed: u64, m: &PlanMetrics) -> Self {
        Self { method: method.into(), seed, t_in: m.t_in, c_in: m.c_in, t_op: m.t_op, c_op: m.c_op, n_node: m.n_node }
    }
}

/// Mean, sample standard deviation and median of the finite values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub count: usize,
}

impl Stats {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let mut v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
        v.sort_by(f64::total_cmp);
        let count = v.len();
        if count == 0 {
            return Self { mean: f64::NAN, std: f64::NAN, median: f64::NAN, count };
        }
        let mean = v.iter().sum::<f64>() / count as f64;
        let std = if count > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
        } else {
            0.0
        };
        let median = if count % 2 == 1 { v[count / 2] } else { 0.5 * (v[count / 2 - 1] + v[count / 2]) };
        Self { mean, std, median, count }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub runs: usize,
    pub solved: usize,
    #[serde(rename = "T_IN")]
    pub t_in: Stats,
    #[serde(rename = "C_IN")]
    pub c_in: Stats,
    #[serde(rename = "T_OP")]
    pub t_op: Stats,
    #[serde(rename = "C_OP")]
    pub c_op: Stats,
    #[serde(rename = "N_node")]
    pub n_node: Stats,
}

impl MethodSummary {
    /// Time and cost columns over solved runs; node counts over all runs.
    pub fn of(method: &str, rows: &[BenchRow]) -> Self {
        let rows: Vec<&BenchRow> = rows.iter().filter(|r| r.method == method).collect();
        let col = |f: fn(&BenchRow) -> Option<f64>| Stats::of(rows.iter().filter_map(|r| f(r)));
        Self {
            method: method.into(),
            runs: rows.len(),
            solved: rows.iter().filter(|r| r.c_op.is_some()).count(),
            t_in: col(|r| r.t_in),
            c_in: col(|r| r.c_in),
            t_op: col(|r| r.t_op),
            c_op: col(|r| r.c_op),
            n_node: Stats::of(rows.iter().map(|r| r.n_node as f64)),
        }
    }
}

pub fn write_bench_csv(path: &Path, rows: &[BenchRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(crate::error::io_err(path))?;
    Ok(())
}

pub fn read_bench_csv(path: &Path) -> Result<Vec<BenchRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}

/// One row per method with `mean±std` cells, then the same statistics as
/// plain numbers for machine use.
pub fn write_summary_csv(path: &Path, summaries: &[MethodSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "statistic", "T_IN", "C_IN", "T_OP", "C_OP", "N_node", "solved", "runs"])?;
    for s in summaries {
        let cols = [s.t_in, s.c_in, s.t_op, s.c_op, s.n_node];
        let mut rec = vec![s.method.clone(), "mean±std".into()];
        rec.extend(cols.iter().map(|c| format!("{:.3}±{:.3}", c.mean, c.std)));
        rec.extend([s.solved.to_string(), s.runs.to_string()]);
        w.write_record(&rec)?;
        let stats: [(&str, fn(&Stats) -> f64); 3] =
            [("mean", |c| c.mean), ("std", |c| c.std), ("median", |c| c.median)];
        for (name, get) in stats {
            let mut rec = vec![s.method.clone(), name.to_string()];
            rec.extend(cols.iter().map(|c| get(c).to_string()));
            rec.extend([s.solved.to_string(), s.runs.to_string()]);
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(crate::error::io_err(path))?;
    Ok(())
}
