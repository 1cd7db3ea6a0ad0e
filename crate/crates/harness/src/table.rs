//! Result records and their CSV form.
//!
//! `results.csv` columns, in order:
//!
//! | column | meaning |
//! |---|---|
//! | `scheme` | scheme name |
//! | `sweep` | swept quantity: `M`, `P` or `G` |
//! | `sweep_value` | swept value (`P` in dBm) |
//! | `realization` | realization index within the cell |
//! | `seed` | seed of the realization, shared by every scheme |
//! | `status` | `ok` or `failed: <reason>` |
//! | `wsr` | weighted sum rate in bits/s |
//! | `iterations` | outer iterations (CCCP) or SSCA iterations over all rounds |
//! | `unit:<users>` | message-unit rate `R_S` in bits/s, one column per group |
//! | `layer:<users>` | transmission-unit rate `R̃_G` in bits/s, one column per layer of the general split |
//! | `wall_time_s` | wall-clock seconds; the only column that varies between identical runs |
//!
//! User sets are written as `1+2+3`. Floats carry 9 significant digits.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use gmrs_core::model::UserSet;

use crate::config::Scheme;

/// A harness error tied to the file it concerns.
#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

/// Outcome of one (scheme, sweep cell, realization) run.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRecord {
    pub scheme: Scheme,
    pub sweep_value: f64,
    pub realization: u32,
    pub seed: u64,
    /// `None` on success, the failure reason otherwise.
    pub failure: Option<String>,
    pub wsr: f64,
    pub iterations: usize,
    /// `R_S` per unit column.
    pub unit_rates: Vec<f64>,
    /// `R̃_G` per layer column.
    pub layer_rates: Vec<f64>,
    pub wall_time_s: f64,
}

impl ResultRecord {
    pub fn ok(&self) -> bool {
        self.failure.is_none()
    }
}

/// Records plus the column sets they are laid out on.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultTable {
    pub sweep: String,
    pub units: Vec<UserSet>,
    pub layers: Vec<UserSet>,
    pub records: Vec<ResultRecord>,
}

/// One optimizer iteration for `trace.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub scheme: Scheme,
    pub sweep_value: f64,
    pub realization: u32,
    /// Penalty round (SSCA); 0 for CCCP.
    pub round: usize,
    /// 0 is the initial point for CCCP.
    pub iteration: usize,
    /// Objective in bits/s.
    pub objective: f64,
    pub slack_norm: Option<f64>,
    pub rho: Option<f64>,
    pub omega: Option<f64>,
    pub gamma: Option<f64>,
}

/// One channel coefficient for `channels.csv`; `user` is 1-based, the rest 0-based.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelRow {
    pub sweep_value: f64,
    pub realization: u32,
    pub user: usize,
    pub subcarrier: usize,
    pub antenna: usize,
    pub re: f64,
    pub im: f64,
}

/// Nine significant digits.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.8e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

pub fn fmt_set(s: UserSet) -> String {
    s.users().map(|k| k.to_string()).collect::<Vec<_>>().join("+")
}

fn parse_set(text: &str) -> Option<UserSet> {
    let users = text.split('+').map(|k| k.parse::<usize>().ok()).collect::<Option<Vec<_>>>()?;
    UserSet::from_users(users).ok()
}

const FIXED: [&str; 8] = ["scheme", "sweep", "sweep_value", "realization", "seed", "status", "wsr", "iterations"];

fn header(table: &ResultTable) -> Vec<String> {
    let mut h: Vec<String> = FIXED.iter().map(|s| s.to_string()).collect();
    h.extend(table.units.iter().map(|u| format!("unit:{}", fmt_set(*u))));
    h.extend(table.layers.iter().map(|l| format!("layer:{}", fmt_set(*l))));
    h.push("wall_time_s".into());
    h
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> TableError + '_ {
    move |source| TableError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `table` as CSV to `out`; `path` labels errors.
pub fn write_results<W: Write>(table: &ResultTable, out: W, path: &Path) -> Result<(), TableError> {
    let mut w = csv::Writer::from_writer(out);
    let e = csv_err(path);
    w.write_record(header(table)).map_err(&e)?;
    for r in &table.records {
        let mut row = vec![
            r.scheme.name().to_string(),
            table.sweep.clone(),
            fmt_float(r.sweep_value),
            r.realization.to_string(),
            r.seed.to_string(),
            match &r.failure {
                None => "ok".to_string(),
                Some(m) => format!("failed: {m}"),
            },
            fmt_float(r.wsr),
            r.iterations.to_string(),
        ];
        row.extend(r.unit_rates.iter().map(|v| fmt_float(*v)));
        row.extend(r.layer_rates.iter().map(|v| fmt_float(*v)));
        row.push(fmt_float(r.wall_time_s));
        w.write_record(&row).map_err(&e)?;
    }
    w.flush().map_err(|source| TableError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn emit_csv(table: &ResultTable, path: &Path) -> Result<(), TableError> {
    let file = File::create(path).map_err(|source| TableError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_results(table, file, path)
}

/// Parses CSV produced by [`write_results`]; `path` labels errors.
pub fn read_results<R: Read>(input: R, path: &Path) -> Result<ResultTable, TableError> {
    let bad = |message: String| TableError::Format {
        path: path.to_path_buf(),
        message,
    };
    let e = csv_err(path);
    let mut rd = csv::Reader::from_reader(input);
    let head: Vec<String> = rd.headers().map_err(&e)?.iter().map(String::from).collect();
    if head.len() < FIXED.len() + 1 || head[..FIXED.len()] != FIXED || head.last().map(String::as_str) != Some("wall_time_s") {
        return Err(bad("not a results table header".into()));
    }
    let mut units = Vec::new();
    let mut layers = Vec::new();
    for col in &head[FIXED.len()..head.len() - 1] {
        let (kind, set) = col.split_once(':').ok_or_else(|| bad(format!("unexpected column {col:?}")))?;
        let set = parse_set(set).ok_or_else(|| bad(format!("bad user set in column {col:?}")))?;
        match kind {
            "unit" if layers.is_empty() => units.push(set),
            "layer" => layers.push(set),
            _ => return Err(bad(format!("unexpected column {col:?}"))),
        }
    }
    let mut sweep = String::new();
    let mut records = Vec::new();
    for (i, row) in rd.records().enumerate() {
        let row = row.map_err(&e)?;
        let line = i + 2;
        let field = |j: usize| row.get(j).unwrap_or("");
        let num = |j: usize| -> Result<f64, TableError> {
            field(j).parse().map_err(|_| bad(format!("line {line}: bad number {:?}", field(j))))
        };
        let int = |j: usize| -> Result<u64, TableError> {
            field(j).parse().map_err(|_| bad(format!("line {line}: bad integer {:?}", field(j))))
        };
        let scheme = Scheme::parse(field(0)).ok_or_else(|| bad(format!("line {line}: unknown scheme {:?}", field(0))))?;
        sweep = field(1).to_string();
        let failure = match field(5) {
            "ok" => None,
            s => Some(
                s.strip_prefix("failed: ")
                    .ok_or_else(|| bad(format!("line {line}: bad status {s:?}")))?
                    .to_string(),
            ),
        };
        let nu = units.len();
        let nl = layers.len();
        records.push(ResultRecord {
            scheme,
            sweep_value: num(2)?,
            realization: int(3)? as u32,
            seed: int(4)?,
            failure,
            wsr: num(6)?,
            iterations: int(7)? as usize,
            unit_rates: (0..nu).map(|j| num(FIXED.len() + j)).collect::<Result<_, _>>()?,
            layer_rates: (0..nl).map(|j| num(FIXED.len() + nu + j)).collect::<Result<_, _>>()?,
            wall_time_s: num(FIXED.len() + nu + nl)?,
        });
    }
    Ok(ResultTable {
        sweep,
        units,
        layers,
        records,
    })
}

pub fn parse_csv(path: &Path) -> Result<ResultTable, TableError> {
    let file = File::open(path).map_err(|source| TableError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_results(file, path)
}

pub fn emit_trace(rows: &[TraceRow], path: &Path) -> Result<(), TableError> {
    let e = csv_err(path);
    let mut w = csv::Writer::from_path(path).map_err(&e)?;
    w.write_record([
        "scheme",
        "sweep_value",
        "realization",
        "round",
        "iteration",
        "objective",
        "slack_norm",
        "rho",
        "omega",
        "gamma",
    ])
    .map_err(&e)?;
    for r in rows {
        w.write_record([
            r.scheme.name().to_string(),
            fmt_float(r.sweep_value),
            r.realization.to_string(),
            r.round.to_string(),
            r.iteration.to_string(),
            fmt_float(r.objective),
            fmt_opt(r.slack_norm),
            fmt_opt(r.rho),
            fmt_opt(r.omega),
            fmt_opt(r.gamma),
        ])
        .map_err(&e)?;
    }
    w.flush().map_err(|source| TableError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn emit_channels(rows: &[ChannelRow], path: &Path) -> Result<(), TableError> {
    let e = csv_err(path);
    let mut w = csv::Writer::from_path(path).map_err(&e)?;
    w.write_record(["sweep_value", "realization", "k", "n", "antenna", "re", "im"]).map_err(&e)?;
    for r in rows {
        w.write_record([
            fmt_float(r.sweep_value),
            r.realization.to_string(),
            r.user.to_string(),
            r.subcarrier.to_string(),
            r.antenna.to_string(),
            fmt_float(r.re),
            fmt_float(r.im),
        ])
        .map_err(&e)?;
    }
    w.flush().map_err(|source| TableError::Io {
        path: path.to_path_buf(),
        source,
    })
}
