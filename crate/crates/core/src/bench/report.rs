//! CSV emission for run records and per-m summaries.

use std::fmt::Write as _;
use std::path::Path;

use crate::bench::experiment::RunRecord;
use crate::error::{KkmError, Result};
use crate::metrics::summarize_runs;

pub const RECORD_HEADER: &str =
    "m,m_effective,repeat,seed,W_train,W_test,residual_mean,nmi,d_eff,iterations,t_embed_ms,t_lloyd_ms";

pub const SUMMARY_HEADER: &str = "m,runs,m_effective_mean,W_train_mean,W_train_hw,W_test_mean,W_test_hw,residual_mean_mean,residual_mean_hw,nmi_mean,nmi_hw";

/// Confidence level of the summary half-widths.
pub const SUMMARY_CONFIDENCE: f64 = 0.95;

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn records_to_csv(records: &[RunRecord]) -> Result<String> {
    if records.is_empty() {
        return Err(KkmError::invalid("no records to write"));
    }
    let mut out = String::from(RECORD_HEADER);
    out.push('\n');
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.m,
            r.m_effective,
            r.repeat,
            r.seed,
            r.w_train,
            r.w_test,
            r.residual_mean,
            opt(r.nmi),
            opt(r.d_eff),
            r.iterations,
            opt(r.t_embed_ms),
            opt(r.t_lloyd_ms),
        )
        .expect("write to string");
    }
    Ok(out)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| KkmError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| KkmError::io(path, e))
}

pub fn emit_csv(records: &[RunRecord], path: &Path) -> Result<()> {
    write_file(path, &records_to_csv(records)?)
}

/// Parses text produced by [`records_to_csv`].
pub fn parse_records(text: &str, origin: &Path) -> Result<Vec<RunRecord>> {
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| KkmError::format(origin, "line 1", e.to_string()))?;
    if header.iter().collect::<Vec<_>>().join(",") != RECORD_HEADER {
        return Err(KkmError::format(origin, "line 1", "unexpected header"));
    }
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec =
            rec.map_err(|e| KkmError::format(origin, format!("line {line}"), e.to_string()))?;
        let cell = |j: usize| -> Result<&str> {
            rec.get(j)
                .ok_or_else(|| KkmError::format(origin, format!("line {line}"), "missing field"))
        };
        let err = |j: usize| {
            let name = RECORD_HEADER.split(',').nth(j).unwrap_or("?");
            KkmError::format(
                origin,
                format!("line {line}, column {name}"),
                "unparsable value",
            )
        };
        let int = |j: usize| -> Result<u64> { cell(j)?.parse().map_err(|_| err(j)) };
        let float = |j: usize| -> Result<f64> { cell(j)?.parse().map_err(|_| err(j)) };
        let maybe = |j: usize| -> Result<Option<f64>> {
            let c = cell(j)?;
            if c.is_empty() {
                Ok(None)
            } else {
                c.parse().map(Some).map_err(|_| err(j))
            }
        };
        out.push(RunRecord {
            m: int(0)? as usize,
            m_effective: int(1)? as usize,
            repeat: int(2)? as usize,
            seed: int(3)?,
            w_train: float(4)?,
            w_test: float(5)?,
            residual_mean: float(6)?,
            nmi: maybe(7)?,
            d_eff: maybe(8)?,
            iterations: int(9)? as usize,
            t_embed_ms: maybe(10)?,
            t_lloyd_ms: maybe(11)?,
        });
    }
    Ok(out)
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| KkmError::io(path, e))?;
    parse_records(&text, path)
}

/// Mean and half-width for one column; the half-width is empty for a single
/// run, and both are empty when the column has no values.
fn mean_hw(values: &[f64]) -> Result<(String, String)> {
    match values.len() {
        0 => Ok((String::new(), String::new())),
        1 => Ok((values[0].to_string(), String::new())),
        _ => {
            let s = summarize_runs(values, SUMMARY_CONFIDENCE)?;
            Ok((s.mean.to_string(), s.half_width.to_string()))
        }
    }
}

/// One row per distinct `m`, in first-appearance order.
pub fn summary_to_csv(records: &[RunRecord]) -> Result<String> {
    if records.is_empty() {
        return Err(KkmError::invalid("no records to summarise"));
    }
    let mut groups: Vec<(usize, Vec<&RunRecord>)> = Vec::new();
    for r in records {
        match groups.iter_mut().find(|(m, _)| *m == r.m) {
            Some((_, g)) => g.push(r),
            None => groups.push((r.m, vec![r])),
        }
    }
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for (m, g) in &groups {
        let col = |f: fn(&RunRecord) -> Option<f64>| -> Vec<f64> {
            g.iter().filter_map(|r| f(r)).collect()
        };
        let m_eff = g.iter().map(|r| r.m_effective as f64).sum::<f64>() / g.len() as f64;
        let (wtr, wtr_hw) = mean_hw(&col(|r| Some(r.w_train)))?;
        let (wte, wte_hw) = mean_hw(&col(|r| Some(r.w_test)))?;
        let (res, res_hw) = mean_hw(&col(|r| Some(r.residual_mean)))?;
        let (nmi, nmi_hw) = mean_hw(&col(|r| r.nmi))?;
        writeln!(
            out,
            "{m},{},{m_eff},{wtr},{wtr_hw},{wte},{wte_hw},{res},{res_hw},{nmi},{nmi_hw}",
            g.len()
        )
        .expect("write to string");
    }
    Ok(out)
}

pub fn emit_summary(records: &[RunRecord], path: &Path) -> Result<()> {
    write_file(path, &summary_to_csv(records)?)
}
