//! On-disk formats: program images, datasets and the CSV exports.
//!
//! Binary formats are little-endian throughout. CSV files use `,` and `\n`;
//! addresses are written as `0x`-prefixed lowercase hex, and absent optional
//! fields are empty.

use std::collections::BTreeSet;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use cgt_core::cfg::{BasicBlock, Edge, Terminator};
use cgt_core::dataset::{Dataset, DatasetMeta, TimingRecord};
use cgt_core::engine::Components;
use cgt_core::fuzzer::{TracingMode, DEFAULT_HYBRID_WINDOW};
use cgt_core::oracle::VerdictKind;
use cgt_core::report::OverheadReport;
use cgt_core::vm::{ProgramImage, VmError};
use thiserror::Error;

pub const IMAGE_MAGIC: &[u8; 4] = b"OFZ1";
pub const DATASET_MAGIC: &[u8; 4] = b"OFDS";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}: bad magic")]
    BadMagic { path: String },
    #[error("{path}: truncated")]
    Truncated { path: String },
    #[error("{path}: {detail}")]
    Invalid { path: String, detail: String },
    #[error("{path}: {source}")]
    Image { path: String, source: VmError },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> FormatError + '_ {
    move |source| FormatError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> FormatError + '_ {
    move |source| FormatError::Csv {
        path: path.display().to_string(),
        source,
    }
}

fn invalid(path: &Path, detail: impl Into<String>) -> FormatError {
    FormatError::Invalid {
        path: path.display().to_string(),
        detail: detail.into(),
    }
}

pub fn hex(addr: u32) -> String {
    format!("{addr:#x}")
}

pub fn parse_hex(s: &str) -> Option<u32> {
    let digits = s.strip_prefix("0x")?;
    u32::from_str_radix(digits, 16).ok()
}

/// Reads the next little-endian `u32` from `buf` at `*at`.
fn take_u32(buf: &[u8], at: &mut usize) -> Option<u32> {
    let bytes = buf.get(*at..*at + 4)?;
    *at += 4;
    Some(u32::from_le_bytes(bytes.try_into().ok()?))
}

pub fn encode_image(image: &ProgramImage) -> Vec<u8> {
    let code = image.bytes();
    let mut out = Vec::with_capacity(12 + code.len());
    out.extend_from_slice(IMAGE_MAGIC);
    out.extend_from_slice(&image.entry().to_le_bytes());
    out.extend_from_slice(&(code.len() as u32).to_le_bytes());
    out.extend_from_slice(code);
    out
}

pub fn decode_image(buf: &[u8], path: &Path) -> Result<ProgramImage, FormatError> {
    if buf.get(..4) != Some(IMAGE_MAGIC) {
        return Err(FormatError::BadMagic {
            path: path.display().to_string(),
        });
    }
    let truncated = || FormatError::Truncated {
        path: path.display().to_string(),
    };
    let mut at = 4;
    let entry = take_u32(buf, &mut at).ok_or_else(truncated)?;
    let len = take_u32(buf, &mut at).ok_or_else(truncated)? as usize;
    let code = buf.get(at..at + len).ok_or_else(truncated)?;
    if at + len != buf.len() {
        return Err(invalid(path, "trailing bytes after code"));
    }
    ProgramImage::load(code.to_vec(), entry).map_err(|source| FormatError::Image {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_image(path: &Path, image: &ProgramImage) -> Result<(), FormatError> {
    fs::write(path, encode_image(image)).map_err(io_err(path))
}

pub fn read_image(path: &Path) -> Result<ProgramImage, FormatError> {
    let buf = fs::read(path).map_err(io_err(path))?;
    decode_image(&buf, path)
}

pub fn encode_records(records: &[Vec<u8>]) -> Vec<u8> {
    let total: usize = records.iter().map(|r| 4 + r.len()).sum();
    let mut out = Vec::with_capacity(8 + total);
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        out.extend_from_slice(&(r.len() as u32).to_le_bytes());
        out.extend_from_slice(r);
    }
    out
}

pub fn decode_records(buf: &[u8], path: &Path) -> Result<Vec<Vec<u8>>, FormatError> {
    if buf.get(..4) != Some(DATASET_MAGIC) {
        return Err(FormatError::BadMagic {
            path: path.display().to_string(),
        });
    }
    let truncated = || FormatError::Truncated {
        path: path.display().to_string(),
    };
    let mut at = 4;
    let count = take_u32(buf, &mut at).ok_or_else(truncated)?;
    let mut records = Vec::new();
    for _ in 0..count {
        let len = take_u32(buf, &mut at).ok_or_else(truncated)? as usize;
        records.push(buf.get(at..at + len).ok_or_else(truncated)?.to_vec());
        at += len;
    }
    if at != buf.len() {
        return Err(invalid(path, "trailing bytes after last record"));
    }
    Ok(records)
}

/// Path of the metadata file that accompanies a dataset.
pub fn dataset_meta_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta");
    name.into()
}

/// Writes the records to `path` and the source metadata next to it.
pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<(), FormatError> {
    fs::write(path, encode_records(&dataset.records)).map_err(io_err(path))?;
    let m = &dataset.meta;
    let meta = format!(
        "image_checksum={:016x}\nrng_seed={}\nmode={}\nbudget={}\n",
        m.image_checksum, m.rng_seed, m.mode, m.budget
    );
    let meta_path = dataset_meta_path(path);
    fs::write(&meta_path, meta).map_err(io_err(&meta_path))
}

pub fn read_dataset(path: &Path) -> Result<Dataset, FormatError> {
    let buf = fs::read(path).map_err(io_err(path))?;
    let records = decode_records(&buf, path)?;
    let meta_path = dataset_meta_path(path);
    let text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
    let kv = crate::meta::parse_kv(&text).map_err(|e| invalid(&meta_path, e))?;
    let get = |k: &str| {
        kv.get(k)
            .map(String::as_str)
            .ok_or_else(|| invalid(&meta_path, format!("missing {k}")))
    };
    let image_checksum = u64::from_str_radix(get("image_checksum")?, 16)
        .map_err(|_| invalid(&meta_path, "bad image_checksum"))?;
    let rng_seed = get("rng_seed")?
        .parse()
        .map_err(|_| invalid(&meta_path, "bad rng_seed"))?;
    let budget = get("budget")?
        .parse()
        .map_err(|_| invalid(&meta_path, "bad budget"))?;
    let mode = match get("mode")? {
        "trace-all" => TracingMode::TraceAll.as_str(),
        other => return Err(invalid(&meta_path, format!("unsupported mode {other}"))),
    };
    Ok(Dataset {
        records,
        meta: DatasetMeta {
            image_checksum,
            rng_seed,
            mode,
            budget,
        },
    })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, FormatError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>, FormatError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new().from_reader(file))
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Block table: `start,len,terminator,succ1,succ2`.
pub fn write_blocks(path: &Path, blocks: &[BasicBlock]) -> Result<(), FormatError> {
    let mut w = csv_writer(path)?;
    let err = csv_err(path);
    let mut go = || -> csv::Result<()> {
        w.write_record(["start", "len", "terminator", "succ1", "succ2"])?;
        for b in blocks {
            w.write_record([
                hex(b.start),
                b.len.to_string(),
                b.terminator.as_str().to_string(),
                opt(b.successors.first().map(|&s| hex(s))),
                opt(b.successors.get(1).map(|&s| hex(s))),
            ])?;
        }
        w.flush()?;
        Ok(())
    };
    go().map_err(err)
}

pub fn read_blocks(path: &Path) -> Result<Vec<BasicBlock>, FormatError> {
    let mut r = csv_reader(path)?;
    let mut out = Vec::new();
    for row in r.records() {
        let row = row.map_err(csv_err(path))?;
        let field = |i: usize| row.get(i).unwrap_or("");
        let addr =
            |s: &str| parse_hex(s).ok_or_else(|| invalid(path, format!("bad address {s:?}")));
        let terminator: Terminator = field(2)
            .parse()
            .map_err(|_| invalid(path, format!("bad terminator {:?}", field(2))))?;
        let mut successors = Vec::new();
        for s in [field(3), field(4)] {
            if !s.is_empty() {
                successors.push(addr(s)?);
            }
        }
        out.push(BasicBlock {
            start: addr(field(0))?,
            len: field(1).parse().map_err(|_| invalid(path, "bad len"))?,
            terminator,
            successors,
        });
    }
    Ok(out)
}

/// One hex address per line, no header.
pub fn write_addresses(
    path: &Path,
    addrs: impl IntoIterator<Item = u32>,
) -> Result<(), FormatError> {
    let mut text = String::new();
    for a in addrs {
        text.push_str(&hex(a));
        text.push('\n');
    }
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_addresses(path: &Path) -> Result<Vec<u32>, FormatError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .map(|l| parse_hex(l).ok_or_else(|| invalid(path, format!("bad address {l:?}"))))
        .collect()
}

/// Covered block starts, sorted ascending.
pub fn write_coverage(path: &Path, covered: &BTreeSet<u32>) -> Result<(), FormatError> {
    write_addresses(path, covered.iter().copied())
}

/// Trace log in first-visit order.
pub fn write_trace(path: &Path, blocks: &[u32]) -> Result<(), FormatError> {
    write_addresses(path, blocks.iter().copied())
}

/// Edge list: `src,dest`, with an optional leading `dummy` column.
pub fn write_edges(
    path: &Path,
    edges: impl IntoIterator<Item = (Option<u32>, Edge)>,
) -> Result<(), FormatError> {
    let mut w = csv_writer(path)?;
    let go = || -> csv::Result<()> {
        w.write_record(["dummy", "src", "dest"])?;
        for (dummy, e) in edges {
            w.write_record([opt(dummy.map(hex)), hex(e.src), hex(e.dest)])?;
        }
        w.flush()?;
        Ok(())
    };
    go().map_err(csv_err(path))
}

/// Writes a header and rows of already formatted fields.
pub fn write_rows<const N: usize>(
    path: &Path,
    header: [&str; N],
    rows: impl IntoIterator<Item = [String; N]>,
) -> Result<(), FormatError> {
    let mut w = csv_writer(path)?;
    let go = || -> csv::Result<()> {
        w.write_record(header)?;
        for row in rows {
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    };
    go().map_err(csv_err(path))
}

pub const TIMING_HEADER: [&str; 9] = [
    "trial",
    "testcase_id",
    "mode",
    "verdict",
    "total_ns",
    "trace_ns",
    "stop_ns",
    "unmodify_ns",
    "start_ns",
];

fn timing_row(r: &TimingRecord) -> [String; 9] {
    let c = r.components;
    [
        r.trial.to_string(),
        r.testcase_id.to_string(),
        r.mode.as_str().to_string(),
        opt(r.verdict.map(VerdictKind::as_str)),
        r.total_ns.to_string(),
        opt(c.map(|c| c.trace_ns)),
        opt(c.map(|c| c.stop_ns)),
        opt(c.map(|c| c.unmodify_ns)),
        opt(c.map(|c| c.start_ns)),
    ]
}

pub fn write_timing(path: &Path, records: &[TimingRecord]) -> Result<(), FormatError> {
    write_rows(path, TIMING_HEADER, records.iter().map(timing_row))
}

/// Parses a mode name as written in timing CSVs. The file does not carry
/// hybrid parameters, so `hybrid` reads back with placeholder ones; only the
/// name matters for aggregation.
pub fn mode_from_name(name: &str) -> Option<TracingMode> {
    Some(match name {
        "baseline" => TracingMode::Baseline,
        "trace-all" => TracingMode::TraceAll,
        "oracle" => TracingMode::OracleFirst,
        "hybrid" => TracingMode::Hybrid {
            threshold: 0.0,
            window: DEFAULT_HYBRID_WINDOW,
        },
        _ => return None,
    })
}

pub fn read_timing(path: &Path) -> Result<Vec<TimingRecord>, FormatError> {
    let mut r = csv_reader(path)?;
    let header = r.headers().map_err(csv_err(path))?.clone();
    if !header.iter().eq(TIMING_HEADER) {
        return Err(invalid(path, "unexpected timing header"));
    }
    let mut out = Vec::new();
    for row in r.records() {
        let row = row.map_err(csv_err(path))?;
        let field = |i: usize| row.get(i).unwrap_or("");
        let num = |i: usize| -> Result<u64, FormatError> {
            field(i)
                .parse()
                .map_err(|_| invalid(path, format!("bad {} {:?}", TIMING_HEADER[i], field(i))))
        };
        let mode = mode_from_name(field(2))
            .ok_or_else(|| invalid(path, format!("bad mode {:?}", field(2))))?;
        let verdict = match field(3) {
            "" => None,
            v => Some(
                VerdictKind::parse(v).ok_or_else(|| invalid(path, format!("bad verdict {v:?}")))?,
            ),
        };
        let components = if field(5).is_empty() {
            None
        } else {
            Some(Components {
                trace_ns: num(5)?,
                stop_ns: num(6)?,
                unmodify_ns: num(7)?,
                start_ns: num(8)?,
            })
        };
        out.push(TimingRecord {
            trial: num(0)? as u32,
            testcase_id: num(1)?,
            mode,
            verdict,
            total_ns: num(4)?,
            components,
        });
    }
    Ok(out)
}

/// `mode,relative_time,rate,trace_frac,stop_frac,unmodify_frac,start_frac`.
pub fn write_report(path: &Path, report: &OverheadReport) -> Result<(), FormatError> {
    let rows = report.rows.iter().map(|r| {
        let b = r.breakdown;
        [
            r.mode.as_str().to_string(),
            r.relative_time.to_string(),
            opt(r.rate),
            opt(b.map(|b| b.trace)),
            opt(b.map(|b| b.stop)),
            opt(b.map(|b| b.unmodify)),
            opt(b.map(|b| b.start)),
        ]
    });
    write_rows(
        path,
        [
            "mode",
            "relative_time",
            "rate",
            "trace_frac",
            "stop_frac",
            "unmodify_frac",
            "start_frac",
        ],
        rows,
    )
}

/// Writes `data` to `path`, creating parent directories.
pub fn write_bytes(path: &Path, data: &[u8]) -> Result<(), FormatError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(data).map_err(io_err(path))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, FormatError> {
    fs::read(path).map_err(io_err(path))
}

pub fn create_dir(path: &Path) -> Result<(), FormatError> {
    fs::create_dir_all(path).map_err(io_err(path))
}

/// Removes `path` if it is a directory; missing is fine.
pub fn clear_dir(path: &Path) -> Result<(), FormatError> {
    match fs::remove_dir_all(path) {
        Err(e) if e.kind() != io::ErrorKind::NotFound => Err(io_err(path)(e)),
        _ => Ok(()),
    }
}

/// Files directly inside `dir`, sorted by name.
pub fn list_files(dir: &Path) -> Result<Vec<std::path::PathBuf>, FormatError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}
