//! File formats: line-delimited JSON record files and CSV tables.
//!
//! Record files are append-only, one JSON object per line, so progress
//! survives a crash and a truncated file loses at most its final line.
//! Floats are written in shortest round-trip form, which makes outputs
//! byte-stable and re-loadable without precision loss.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use mibo::bench::{BenchRecord, StrategyCurve, SyntheticObjective};
use mibo::driver::TrialRecord;
use mibo::kernel::KernelFamily;
use mibo::space::Variable;

use crate::config::{kernel_name, ResolvedObjective};
use crate::CliError;

/// One line of a single-run record file: the trial plus the sampler state to
/// resume from (absent during the initial design).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordLine {
    #[serde(flatten)]
    pub record: TrialRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain: Option<Vec<f64>>,
}

/// Loads a record file for resumption: completed records in order plus the sampler
/// state saved with the last one. A partial final line (crash artifact) is
/// dropped from the file with a warning; corruption anywhere else is fatal.
pub fn load_records(path: &Path) -> Result<(Vec<TrialRecord>, Option<Vec<f64>>), CliError> {
    if !path.exists() {
        return Ok((Vec::new(), None));
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::runtime(format!("records {}: {e}", path.display())))?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let mut parsed: Vec<RecordLine> = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        match serde_json::from_str::<RecordLine>(line) {
            Ok(r) => parsed.push(r),
            Err(e) if i + 1 == lines.len() => {
                eprintln!(
                    "warning: dropping partial final line of {} ({e})",
                    path.display()
                );
                let kept = lines[..i].join("\n") + if i > 0 { "\n" } else { "" };
                std::fs::write(path, kept)
                    .map_err(|e| CliError::runtime(format!("records {}: {e}", path.display())))?;
            }
            Err(e) => {
                return Err(CliError::runtime(format!(
                    "records {} line {}: {e}",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    let chain = parsed.last().and_then(|r| r.chain.clone());
    Ok((parsed.into_iter().map(|r| r.record).collect(), chain))
}

/// Opens a record file for appending.
pub fn open_record_sink(path: &Path) -> Result<File, CliError> {
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| CliError::runtime(format!("records {}: {e}", path.display())))
}

pub fn append_record(
    sink: &mut File,
    record: &TrialRecord,
    chain: Option<&[f64]>,
) -> Result<(), String> {
    let line = RecordLine {
        record: record.clone(),
        chain: chain.map(|c| c.to_vec()),
    };
    let json = serde_json::to_string(&line).map_err(|e| e.to_string())?;
    sink.write_all(json.as_bytes())
        .and_then(|()| sink.write_all(b"\n"))
        .and_then(|()| sink.flush())
        .map_err(|e| e.to_string())
}

/// Benchmark records: one JSON object per (strategy, repetition, iteration).
pub fn write_bench_records(path: &Path, records: &[BenchRecord]) -> Result<(), CliError> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).map_err(|e| CliError::runtime(e.to_string()))?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

fn join_floats(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn describe_variables(objective: &ResolvedObjective) -> String {
    objective
        .spec
        .space
        .variables()
        .iter()
        .map(|v| match *v {
            Variable::Continuous { lower, upper } => format!("cont[{lower},{upper}]"),
            Variable::Integer { lower, upper } => format!("int[{lower},{upper}]"),
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn objective_metadata(objective: &ResolvedObjective) -> String {
    format!(
        "# objective: {} variables=[{}] resolution={} lengthscales=[{}] amplitude={} noise_variance={}",
        objective.label,
        describe_variables(objective),
        objective.spec.resolution,
        join_floats(&objective.spec.lengthscales),
        objective.spec.amplitude,
        objective.spec.noise_variance,
    )
}

pub struct CurveMetadata<'a> {
    pub objective: &'a ResolvedObjective,
    pub kernel: KernelFamily,
    pub seed: u64,
    pub repetitions: usize,
    pub iterations: usize,
    pub n_initial: usize,
}

/// Aggregated curves as CSV with `#` metadata lines before the header.
pub fn write_curves_csv(
    path: &Path,
    meta: &CurveMetadata,
    curves: &[StrategyCurve],
) -> Result<(), CliError> {
    let mut out = String::new();
    out.push_str("# mibo bench curves\n");
    out.push_str(&format!(
        "# seed={} repetitions={} iterations={} n_initial={} kernel={}\n",
        meta.seed,
        meta.repetitions,
        meta.iterations,
        meta.n_initial,
        kernel_name(meta.kernel),
    ));
    out.push_str(&objective_metadata(meta.objective));
    out.push('\n');
    out.push_str("# regret: log10(best_noise_free_value - true_min + 1e-12)\n");
    out.push_str("strategy,iteration,mean_log_regret,stderr_log_regret,n_runs,n_failures\n");
    for curve in curves {
        for (i, (m, s)) in curve
            .mean_log_regret
            .iter()
            .zip(&curve.stderr_log_regret)
            .enumerate()
        {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                curve.strategy, i, m, s, curve.n_runs, curve.n_failures
            ));
        }
    }
    std::fs::write(path, out).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

/// Grid dump of a drawn objective: metadata, a coordinate column per
/// variable, and the sampled value.
pub fn write_objective_csv(
    path: &Path,
    objective: &ResolvedObjective,
    seed: u64,
    drawn: &SyntheticObjective,
) -> Result<(), CliError> {
    let mut out = String::new();
    out.push_str("# mibo objective sample\n");
    out.push_str(&format!("# seed={seed}\n"));
    out.push_str(&objective_metadata(objective));
    out.push('\n');
    out.push_str(&format!("# true_min={}\n", drawn.true_min()));
    out.push_str(&objective.names.join(","));
    out.push_str(",value\n");
    for (point, value) in drawn.grid().iter().zip(drawn.values()) {
        out.push_str(&join_floats(point.coords()));
        out.push_str(&format!(",{value}\n"));
    }
    std::fs::write(path, out).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}
