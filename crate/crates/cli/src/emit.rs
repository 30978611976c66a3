//! Run artifacts: convergence CSV and JSON lines, summaries, circuit JSON,
//! variance tables.
//!
//! Every text artifact starts with a provenance marker. CSV files carry it as
//! a `#` comment line, so plotting tools need their comment option set
//! (`pandas.read_csv(..., comment="#")`). Wall-clock time goes only to the
//! JSON-lines file, which keeps the CSV output byte-for-byte reproducible.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use aqc_core::optimizer::RunRecord;
use aqc_core::variance::VariancePoint;
use serde::Serialize;
use serde_json::json;

use crate::error::{HarnessError, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Code version and config hash, embedded in every artifact.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub aqc_version: String,
    pub config_hash: String,
}

impl Provenance {
    pub fn new(config_hash: impl Into<String>) -> Self {
        Self {
            aqc_version: VERSION.to_string(),
            config_hash: config_hash.into(),
        }
    }

    pub fn csv_comment(&self) -> String {
        format!("# aqc {} config={}\n", self.aqc_version, self.config_hash)
    }
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| HarnessError::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    fs::write(path, contents).map_err(|e| HarnessError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Convergence table. The fidelity column appears only when the record has one.
pub fn convergence_csv(record: &RunRecord, prov: &Provenance) -> String {
    let fid = record.has_fidelity();
    let mut out = prov.csv_comment();
    out.push_str("iteration,restart,stage,cost,global_cost,weight,grad_norm");
    out.push_str(if fid { ",fidelity\n" } else { "\n" });
    for r in &record.rows {
        write!(
            out,
            "{},{},{},{},{},{},{}",
            r.iteration,
            r.restart,
            r.stage.as_str(),
            r.cost,
            r.global_cost,
            r.weight,
            r.grad_norm
        )
        .unwrap();
        if fid {
            write!(out, ",{}", opt(r.fidelity)).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Rows as JSON lines, preceded by a provenance line. Includes `wall_ms`.
pub fn convergence_jsonl(record: &RunRecord, prov: &Provenance) -> String {
    let mut out = serde_json::to_string(&json!({ "provenance": prov })).unwrap();
    out.push('\n');
    out.push_str(&record.to_jsonl());
    out
}

/// Final figures of one optimizer run.
#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub label: String,
    pub iterations: usize,
    pub best_cost: f64,
    pub best_iteration: Option<u64>,
    pub final_fidelity: Option<f64>,
    pub trotter_baseline_fidelity: Option<f64>,
    pub converged: bool,
    pub stalled: bool,
    pub handoff_iteration: Option<u64>,
    pub restarts_used: u32,
    pub weight_rule: String,
    pub wall_ms: f64,
    pub warnings: Vec<String>,
}

impl RunSummary {
    pub fn from_record(label: &str, record: &RunRecord, baseline: Option<f64>) -> Self {
        Self {
            label: label.to_string(),
            iterations: record.rows.len(),
            best_cost: record.best_cost,
            best_iteration: record.best_iteration,
            final_fidelity: record.final_fidelity,
            trotter_baseline_fidelity: baseline,
            converged: record.converged,
            stalled: record.stalled,
            handoff_iteration: record.handoff_iteration,
            restarts_used: record.restarts_used,
            weight_rule: record.weight_rule.clone(),
            wall_ms: record.rows.iter().map(|r| r.wall_ms).sum(),
            warnings: record.warnings.clone(),
        }
    }
}

/// Writes `<stem>.csv`, `<stem>.jsonl` and `<stem>.summary.json`.
pub fn emit_convergence(
    record: &RunRecord,
    dir: &Path,
    stem: &str,
    prov: &Provenance,
    baseline: Option<f64>,
) -> Result<RunSummary> {
    if record.rows.is_empty() {
        return Err(HarnessError::Validation(format!("run `{stem}` has no rows to emit")));
    }
    write_file(&dir.join(format!("{stem}.csv")), convergence_csv(record, prov))?;
    write_file(&dir.join(format!("{stem}.jsonl")), convergence_jsonl(record, prov))?;
    let summary = RunSummary::from_record(stem, record, baseline);
    write_json(&dir.join(format!("{stem}.summary.json")), &summary, prov)?;
    Ok(summary)
}

/// Pretty JSON of `value` wrapped with provenance.
pub fn write_json<T: Serialize>(path: &Path, value: &T, prov: &Provenance) -> Result<()> {
    let doc = json!({ "provenance": prov, "data": value });
    write_file(path, serde_json::to_string_pretty(&doc).unwrap() + "\n")
}

/// Two records side by side, one line per iteration present in either.
pub fn comparison_csv(
    (name_a, a): (&str, &RunRecord),
    (name_b, b): (&str, &RunRecord),
    prov: &Provenance,
) -> String {
    let fid = a.has_fidelity() || b.has_fidelity();
    let mut out = prov.csv_comment();
    out.push_str("iteration");
    for name in [name_a, name_b] {
        write!(out, ",{name}_cost,{name}_global_cost").unwrap();
        if fid {
            write!(out, ",{name}_fidelity").unwrap();
        }
    }
    out.push('\n');
    let (mut i, mut j) = (0, 0);
    while i < a.rows.len() || j < b.rows.len() {
        let ia = a.rows.get(i).map(|r| r.iteration);
        let ib = b.rows.get(j).map(|r| r.iteration);
        let it = match (ia, ib) {
            (Some(x), Some(y)) => x.min(y),
            (Some(x), None) | (None, Some(x)) => x,
            (None, None) => unreachable!(),
        };
        write!(out, "{it}").unwrap();
        for (rows, k) in [(&a.rows, &mut i), (&b.rows, &mut j)] {
            match rows.get(*k).filter(|r| r.iteration == it) {
                Some(r) => {
                    write!(out, ",{},{}", r.cost, r.global_cost).unwrap();
                    if fid {
                        write!(out, ",{}", opt(r.fidelity)).unwrap();
                    }
                    *k += 1;
                }
                None => out.push_str(if fid { ",,," } else { ",," }),
            }
        }
        out.push('\n');
    }
    out
}

pub fn variance_csv(points: &[VariancePoint], prov: &Provenance) -> String {
    let mut out = prov.csv_comment();
    out.push_str("n,cost_kind,k,samples,variance,stderr,seed\n");
    for p in points {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            p.n, p.cost_kind, p.k, p.samples, p.variance, p.stderr, p.seed
        )
        .unwrap();
    }
    out
}
