//! Dataset readers: numeric CSV, libsvm sparse lines and MNIST idx files.

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{KkmError, Result};
use crate::kernel::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Csv,
    Libsvm,
    Idx,
}

impl std::str::FromStr for DataFormat {
    type Err = KkmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "libsvm" | "svmlight" => Ok(Self::Libsvm),
            "idx" | "mnist" => Ok(Self::Idx),
            other => Err(KkmError::Config(format!("unknown data format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestOptions {
    pub scale_255: bool,
    /// CSV column holding integer labels. Negative values count from the end.
    pub label_column: Option<i64>,
    /// idx label file (magic `0x00000801`) paired with an image file.
    pub labels_path: Option<std::path::PathBuf>,
}

pub fn ingest(path: &Path, format: DataFormat, opts: &IngestOptions) -> Result<Dataset> {
    let mut data = match format {
        DataFormat::Csv => read_csv(path, opts.label_column)?,
        DataFormat::Libsvm => read_libsvm(path)?,
        DataFormat::Idx => {
            let data = read_idx(path)?;
            match &opts.labels_path {
                Some(lp) => {
                    let labels = read_idx_labels(lp)?;
                    if labels.len() != data.n() {
                        return Err(KkmError::format(
                            lp,
                            "header",
                            format!("{} labels for {} images", labels.len(), data.n()),
                        ));
                    }
                    data.with_labels(labels)?
                }
                None => data,
            }
        }
    };
    if opts.scale_255 {
        data = data.scaled_255();
    }
    Ok(data)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| KkmError::io(path, e))
}

fn parse_label(path: &Path, loc: &str, cell: &str) -> Result<i64> {
    let v: f64 = cell
        .parse()
        .map_err(|_| KkmError::format(path, loc, format!("non-numeric label {cell:?}")))?;
    if v.fract() != 0.0 || !v.is_finite() || v.abs() > 2f64.powi(53) {
        return Err(KkmError::format(
            path,
            loc,
            format!("label {cell:?} is not an integer"),
        ));
    }
    Ok(v as i64)
}

/// Numeric CSV. A first line with any non-numeric cell is taken as a header.
pub fn read_csv(path: &Path, label_column: Option<i64>) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(open(path)?);
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut width: Option<usize> = None;
    let mut label_idx: Option<usize> = None;
    let mut n = 0usize;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(i + 1, |p| p.line() as usize);
            KkmError::format(path, format!("line {line}"), e.to_string())
        })?;
        let line = rec.position().map_or(i + 1, |p| p.line() as usize);
        let loc = |col: usize| format!("line {line}, column {}", col + 1);
        if rec.iter().all(str::is_empty) {
            continue;
        }
        if n == 0 && width.is_none() && rec.iter().any(|c| c.parse::<f64>().is_err()) {
            width = Some(rec.len());
            continue;
        }
        match width {
            Some(w) if w != rec.len() => {
                return Err(KkmError::format(
                    path,
                    format!("line {line}"),
                    format!("expected {w} fields, found {}", rec.len()),
                ))
            }
            _ => width = Some(rec.len()),
        }
        if label_idx.is_none() {
            if let Some(c) = label_column {
                let w = rec.len() as i64;
                let idx = if c < 0 { w + c } else { c };
                if idx < 0 || idx >= w {
                    return Err(KkmError::Config(format!(
                        "label_column {c} out of range for {w} columns"
                    )));
                }
                label_idx = Some(idx as usize);
            }
        }
        for (j, cell) in rec.iter().enumerate() {
            if Some(j) == label_idx {
                labels.push(parse_label(path, &loc(j), cell)?);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| {
                KkmError::format(path, loc(j), format!("non-numeric cell {cell:?}"))
            })?;
            if !v.is_finite() {
                return Err(KkmError::format(
                    path,
                    loc(j),
                    format!("non-finite cell {cell:?}"),
                ));
            }
            values.push(v);
        }
        n += 1;
    }
    let d = width
        .unwrap_or(0)
        .saturating_sub(usize::from(label_idx.is_some()));
    if n == 0 || d == 0 {
        return Err(KkmError::format(path, "end of file", "no numeric rows"));
    }
    let labels = label_idx.map(|_| labels);
    Dataset::new(n, d, values, labels)
}

/// `label idx:val idx:val ...` with 1-based feature indices; the dimension is
/// the largest index seen.
pub fn read_libsvm(path: &Path) -> Result<Dataset> {
    let reader = open(path)?;
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut labels = Vec::new();
    let mut d = 0usize;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| KkmError::io(path, e))?;
        let lineno = i + 1;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut tokens = body.split_whitespace();
        let label_tok = tokens.next().unwrap_or_default();
        labels.push(parse_label(
            path,
            &format!("line {lineno}, label"),
            label_tok,
        )?);
        let mut row = Vec::new();
        let mut last = 0usize;
        for tok in tokens {
            let loc = || format!("line {lineno}, token {tok:?}");
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| KkmError::format(path, loc(), "expected index:value"))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| KkmError::format(path, loc(), "bad feature index"))?;
            if idx == 0 {
                return Err(KkmError::format(path, loc(), "feature indices are 1-based"));
            }
            if idx <= last {
                return Err(KkmError::format(
                    path,
                    loc(),
                    "feature indices must increase",
                ));
            }
            let val: f64 = val
                .parse()
                .map_err(|_| KkmError::format(path, loc(), "non-numeric value"))?;
            if !val.is_finite() {
                return Err(KkmError::format(path, loc(), "non-finite value"));
            }
            last = idx;
            d = d.max(idx);
            row.push((idx - 1, val));
        }
        rows.push(row);
    }
    if rows.is_empty() || d == 0 {
        return Err(KkmError::format(path, "end of file", "no feature rows"));
    }
    let mut values = vec![0.0; rows.len() * d];
    for (i, row) in rows.iter().enumerate() {
        for &(j, v) in row {
            values[i * d + j] = v;
        }
    }
    Dataset::new(rows.len(), d, values, Some(labels))
}

struct IdxHeader {
    dtype: u8,
    dims: Vec<usize>,
}

fn read_idx_header<R: Read>(path: &Path, r: &mut R) -> Result<IdxHeader> {
    let eof =
        |e: std::io::Error| KkmError::format(path, "offset 0", format!("truncated header: {e}"));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(eof)?;
    if magic[0] != 0 || magic[1] != 0 {
        return Err(KkmError::format(
            path,
            "offset 0",
            format!("bad magic {:#010x}", u32::from_be_bytes(magic)),
        ));
    }
    let (dtype, ndim) = (magic[2], magic[3] as usize);
    if ndim == 0 {
        return Err(KkmError::format(path, "offset 3", "zero dimensions"));
    }
    let mut dims = Vec::with_capacity(ndim);
    for i in 0..ndim {
        let v = r.read_u32::<BigEndian>().map_err(|e| {
            KkmError::format(
                path,
                format!("offset {}", 4 + 4 * i),
                format!("truncated header: {e}"),
            )
        })?;
        dims.push(v as usize);
    }
    Ok(IdxHeader { dtype, dims })
}

fn idx_width(path: &Path, dtype: u8) -> Result<usize> {
    match dtype {
        0x08 | 0x09 => Ok(1),
        0x0B => Ok(2),
        0x0C | 0x0D => Ok(4),
        0x0E => Ok(8),
        other => Err(KkmError::format(
            path,
            "offset 2",
            format!("unknown idx type {other:#04x}"),
        )),
    }
}

fn idx_values<R: Read>(path: &Path, r: &mut R, h: &IdxHeader, count: usize) -> Result<Vec<f64>> {
    let width = idx_width(path, h.dtype)?;
    let start = 4 + 4 * h.dims.len();
    let mut buf = vec![0u8; count * width];
    r.read_exact(&mut buf).map_err(|_| {
        KkmError::format(
            path,
            format!("offset {start}"),
            format!("expected {} payload bytes", count * width),
        )
    })?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra).map_err(|e| KkmError::io(path, e))? != 0 {
        return Err(KkmError::format(
            path,
            format!("offset {}", start + buf.len()),
            "trailing bytes after payload",
        ));
    }
    let vals = buf.chunks_exact(width).map(|c| match h.dtype {
        0x08 => c[0] as f64,
        0x09 => c[0] as i8 as f64,
        0x0B => i16::from_be_bytes([c[0], c[1]]) as f64,
        0x0C => i32::from_be_bytes([c[0], c[1], c[2], c[3]]) as f64,
        0x0D => f32::from_be_bytes([c[0], c[1], c[2], c[3]]) as f64,
        _ => f64::from_be_bytes(c.try_into().expect("8-byte chunk")),
    });
    Ok(vals.collect())
}

/// idx tensor with the first dimension as the sample axis and the rest
/// flattened into features.
pub fn read_idx(path: &Path) -> Result<Dataset> {
    let mut r = open(path)?;
    let h = read_idx_header(path, &mut r)?;
    let n = h.dims[0];
    let d: usize = h.dims[1..].iter().product();
    let values = idx_values(path, &mut r, &h, n * d)?;
    if n == 0 || d == 0 {
        return Err(KkmError::format(path, "offset 4", "empty tensor"));
    }
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        let off = 4 + 4 * h.dims.len() + pos * idx_width(path, h.dtype)?;
        return Err(KkmError::format(
            path,
            format!("offset {off}"),
            "non-finite value",
        ));
    }
    Dataset::new(n, d, values, None)
}

/// One-dimensional integer idx file.
pub fn read_idx_labels(path: &Path) -> Result<Vec<i64>> {
    let mut r = open(path)?;
    let h = read_idx_header(path, &mut r)?;
    if h.dims.len() != 1 {
        return Err(KkmError::format(
            path,
            "offset 3",
            format!("label file must be 1-dimensional, has {}", h.dims.len()),
        ));
    }
    if matches!(h.dtype, 0x0D | 0x0E) {
        return Err(KkmError::format(
            path,
            "offset 2",
            "label file must hold integers",
        ));
    }
    Ok(idx_values(path, &mut r, &h, h.dims[0])?
        .into_iter()
        .map(|v| v as i64)
        .collect())
}
