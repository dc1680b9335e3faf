//! On-disk artifacts. JSON-lines files open with a header record; JSON files
//! wrap their body with the same provenance fields; CSV files open with a
//! `#` comment line carrying the config hash and tool version, followed by
//! the column header.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use qpburst::waveform::BinnedWaveform;

use crate::config::{SCHEMA_VERSION, TOOL_VERSION};
use crate::error::{CliError, CliResult};

pub const EVENTS: &str = "events.jsonl";
pub const TRUTH: &str = "truth.jsonl";
pub const FEATURES: &str = "features.jsonl";
pub const CUT_REPORT: &str = "cut_report.json";
pub const CALIBRATION: &str = "calibration.json";
pub const CALIBRATION_CSV: &str = "calibration.csv";
pub const FITS: &str = "fits.jsonl";
pub const FIT_SCATTER: &str = "fit_scatter.csv";
pub const VERTICES: &str = "vertices.jsonl";
pub const SPECTRUM: &str = "spectrum.csv";
pub const RESOLVED_CONFIG: &str = "resolved_config.toml";
pub const CHAINS_DIR: &str = "chains";

/// First line of every JSON-lines artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub schema_version: u32,
    pub kind: String,
    pub tool_version: String,
    pub config_hash: String,
    pub records: usize,
    /// Time spanned by the triggers [s].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub live_time: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub qubits: Vec<String>,
}

impl Header {
    pub fn new(kind: &str, config_hash: &str, records: usize) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            kind: kind.to_string(),
            tool_version: TOOL_VERSION.to_string(),
            config_hash: config_hash.to_string(),
            records,
            live_time: None,
            qubits: Vec::new(),
        }
    }
}

/// A JSON artifact with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub schema_version: u32,
    pub kind: String,
    pub tool_version: String,
    pub config_hash: String,
    pub body: T,
}

/// One trigger: every qubit's waveform on a common time axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventRecord {
    pub event_id: u64,
    /// [s]
    pub trigger_time: f64,
    pub waveforms: Vec<BinnedWaveform>,
}

/// Simulation truth of one event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthRecord {
    pub event_id: u64,
    pub arrival_time: f64,
    /// Impact point [mm]; absent when deposits are drawn per qubit.
    pub position: Option<(f64, f64)>,
    /// [eV]
    pub e_tot: Option<f64>,
    /// Island deposits [eV].
    pub e_dep: BTreeMap<String, f64>,
    pub r: f64,
    pub tau_ss: f64,
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn json_line<T: Serialize>(w: &mut impl Write, value: &T, path: &Path) -> CliResult<()> {
    serde_json::to_writer(&mut *w, value).map_err(|e| CliError::io(path, e.into()))?;
    w.write_all(b"\n").map_err(|e| CliError::io(path, e))
}

pub fn write_jsonl<T: Serialize>(path: &Path, header: &Header, records: &[T]) -> CliResult<()> {
    let mut w = create(path)?;
    json_line(&mut w, header, path)?;
    for r in records {
        json_line(&mut w, r, path)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn open_input(path: &Path, needs: &'static str) -> CliResult<File> {
    File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::Dependency {
            path: path.to_path_buf(),
            needs,
        },
        _ => CliError::io(path, e),
    })
}

fn check_header(path: &Path, kind: &str, schema: u32, found: &str) -> CliResult<()> {
    if found != kind {
        return Err(CliError::Format {
            path: path.to_path_buf(),
            line: 1,
            message: format!("expected a {kind} artifact, found {found}"),
        });
    }
    if schema != SCHEMA_VERSION {
        return Err(CliError::Format {
            path: path.to_path_buf(),
            line: 1,
            message: format!("schema version {schema} is not supported (expected {SCHEMA_VERSION})"),
        });
    }
    Ok(())
}

/// Reads a JSON-lines artifact; a missing file is a dependency error naming
/// the command that produces it.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path, kind: &str, needs: &'static str) -> CliResult<(Header, Vec<T>)> {
    let reader = BufReader::new(open_input(path, needs)?);
    let mut lines = reader.lines().enumerate();
    let parse_err = |line: usize, message: String| CliError::Format {
        path: path.to_path_buf(),
        line,
        message,
    };
    let header: Header = match lines.next() {
        Some((_, line)) => {
            let line = line.map_err(|e| CliError::io(path, e))?;
            serde_json::from_str(&line).map_err(|e| parse_err(1, e.to_string()))?
        }
        None => return Err(parse_err(1, "missing header".into())),
    };
    check_header(path, kind, header.schema_version, &header.kind)?;
    let mut records = Vec::with_capacity(header.records);
    for (i, line) in lines {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|e| parse_err(i + 1, e.to_string()))?);
    }
    if records.len() != header.records {
        return Err(parse_err(
            1,
            format!("header announces {} records, file holds {}", header.records, records.len()),
        ));
    }
    Ok((header, records))
}

pub fn write_json<T: Serialize>(path: &Path, kind: &str, config_hash: &str, body: &T) -> CliResult<()> {
    let artifact = Artifact {
        schema_version: SCHEMA_VERSION,
        kind: kind.to_string(),
        tool_version: TOOL_VERSION.to_string(),
        config_hash: config_hash.to_string(),
        body,
    };
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, &artifact).map_err(|e| CliError::io(path, e.into()))?;
    w.write_all(b"\n").map_err(|e| CliError::io(path, e))?;
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path, kind: &str, needs: &'static str) -> CliResult<Artifact<T>> {
    let reader = BufReader::new(open_input(path, needs)?);
    let a: Artifact<T> = serde_json::from_reader(reader).map_err(|e| CliError::Format {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    check_header(path, kind, a.schema_version, &a.kind)?;
    Ok(a)
}

/// Writes a CSV whose first line is the provenance comment and whose second
/// line is `columns`.
pub fn write_csv(path: &Path, config_hash: &str, columns: &str, rows: &[String]) -> CliResult<()> {
    let mut w = create(path)?;
    let mut put = |s: &str| writeln!(w, "{s}").map_err(|e| CliError::io(path, e));
    put(&format!("# config_hash={config_hash} tool_version={TOOL_VERSION}"))?;
    put(columns)?;
    for r in rows {
        put(r)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes()).map_err(|e| CliError::io(path, e))?;
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Resolves an artifact name inside the run directory.
pub fn in_dir(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}
