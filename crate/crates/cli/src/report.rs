//! CSV output: one row per measured run plus a summary row of means.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::bench::{mean, stage_seconds, BenchReport};

/// Column order is the field order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    /// `run` or `summary`.
    pub row: String,
    pub mode: String,
    pub policy: String,
    pub workload: String,
    /// Run number; the count of included runs on the summary row.
    pub run: u64,
    pub files: u64,
    pub bytes: u64,
    pub seconds: f64,
    pub throughput_bps: f64,
    pub block_bytes_sent: f64,
    pub metadata_bytes: f64,
    pub frame_bytes: f64,
    pub similarity: f64,
    pub allocations_total: f64,
    pub pool_hits: f64,
    pub tasks_completed: f64,
    pub pre_s: f64,
    pub copy_in_s: f64,
    pub compute_s: f64,
    pub copy_out_s: f64,
    pub post_s: f64,
    /// 1 for an aborted run; on the summary row, the number of aborted runs.
    pub aborted: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WriteRow {
    pub run: u64,
    pub index: u64,
    pub bytes: u64,
    pub seconds: f64,
    pub throughput_bps: f64,
    pub block_bytes_sent: u64,
    pub metadata_bytes: u64,
    pub uploaded_bytes: u64,
    pub matched_bytes: u64,
    pub similarity: f64,
}

pub fn run_rows(report: &BenchReport) -> Vec<RunRow> {
    let mut rows: Vec<RunRow> = report
        .runs
        .iter()
        .map(|r| {
            let (alloc, hits, done, stages) = match &r.stats {
                Some(s) => (s.allocations_total as f64, s.pool_hits as f64, s.completed as f64, stage_seconds(&s.stage_time)),
                None => (0.0, 0.0, 0.0, [0.0; 5]),
            };
            RunRow {
                row: "run".into(),
                mode: report.mode.to_string(),
                policy: report.policy.into(),
                workload: report.workload.kind.to_string(),
                run: r.run as u64,
                files: r.files as u64,
                bytes: r.bytes,
                seconds: r.seconds,
                throughput_bps: r.throughput(),
                block_bytes_sent: r.wire.block_data_sent as f64,
                metadata_bytes: r.wire.metadata_bytes as f64,
                frame_bytes: (r.wire.bytes_sent + r.wire.bytes_received) as f64,
                similarity: r.similarity,
                allocations_total: alloc,
                pool_hits: hits,
                tasks_completed: done,
                pre_s: stages[0],
                copy_in_s: stages[1],
                compute_s: stages[2],
                copy_out_s: stages[3],
                post_s: stages[4],
                aborted: r.aborted.is_some() as u64,
            }
        })
        .collect();
    rows.push(summary(&rows));
    rows
}

/// Means over the rows of completed runs.
pub fn summary(rows: &[RunRow]) -> RunRow {
    let ok: Vec<&RunRow> = rows.iter().filter(|r| r.row == "run" && r.aborted == 0).collect();
    let m = |f: fn(&RunRow) -> f64| mean(ok.iter().map(|r| f(r)));
    let first = rows.first();
    RunRow {
        row: "summary".into(),
        mode: first.map(|r| r.mode.clone()).unwrap_or_default(),
        policy: first.map(|r| r.policy.clone()).unwrap_or_default(),
        workload: first.map(|r| r.workload.clone()).unwrap_or_default(),
        run: ok.len() as u64,
        files: m(|r| r.files as f64).round() as u64,
        bytes: m(|r| r.bytes as f64).round() as u64,
        seconds: m(|r| r.seconds),
        throughput_bps: m(|r| r.throughput_bps),
        block_bytes_sent: m(|r| r.block_bytes_sent),
        metadata_bytes: m(|r| r.metadata_bytes),
        frame_bytes: m(|r| r.frame_bytes),
        similarity: m(|r| r.similarity),
        allocations_total: m(|r| r.allocations_total),
        pool_hits: m(|r| r.pool_hits),
        tasks_completed: m(|r| r.tasks_completed),
        pre_s: m(|r| r.pre_s),
        copy_in_s: m(|r| r.copy_in_s),
        compute_s: m(|r| r.compute_s),
        copy_out_s: m(|r| r.copy_out_s),
        post_s: m(|r| r.post_s),
        aborted: rows.iter().filter(|r| r.row == "run" && r.aborted != 0).count() as u64,
    }
}

pub fn write_rows(report: &BenchReport) -> Vec<WriteRow> {
    report
        .writes
        .iter()
        .map(|w| WriteRow {
            run: w.run as u64,
            index: w.index as u64,
            bytes: w.bytes,
            seconds: w.seconds,
            throughput_bps: w.throughput(),
            block_bytes_sent: w.block_bytes_sent,
            metadata_bytes: w.metadata_bytes,
            uploaded_bytes: w.uploaded_bytes,
            matched_bytes: w.matched_bytes,
            similarity: w.similarity,
        })
        .collect()
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

/// `runs.csv` goes to `path`; the per-write rows go next to it as
/// `<stem>.writes.csv`. Returns both paths.
pub fn write_report(path: &Path, report: &BenchReport) -> Result<(PathBuf, PathBuf)> {
    write_csv(path, &run_rows(report))?;
    let stem = path.file_stem().map_or("report".into(), |s| s.to_string_lossy().into_owned());
    let writes = path.with_file_name(format!("{stem}.writes.csv"));
    write_csv(&writes, &write_rows(report))?;
    Ok((path.to_path_buf(), writes))
}
