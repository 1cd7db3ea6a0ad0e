//! Per-cell statistics and seed-paired scheme comparisons.
//!
//! `summary.csv`: `scheme, sweep_value, n, failed, mean_wsr, se_wsr, degenerate`.
//! `comparisons.csv`: `sweep_value, scheme_a, scheme_b, pairs, mean_diff, se_diff, wins, losses, ties`,
//! where differences are `a - b` over realizations sharing a seed.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::config::Scheme;
use crate::table::{fmt_float, ResultRecord, TableError};

/// Cells with fewer successful realizations than this get a warning.
pub const MIN_REALIZATIONS: usize = 5;
/// Relative slack allowed by the ordering check.
pub const ORDERING_TOLERANCE: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct CellSummary {
    pub scheme: Scheme,
    pub sweep_value: f64,
    /// Successful realizations.
    pub n: usize,
    pub failed: usize,
    pub mean: f64,
    /// Standard error of the mean; 0 when `n < 2`.
    pub se: f64,
    /// Set when `n < 2`, so the standard error carries no information.
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub sweep_value: f64,
    pub a: Scheme,
    pub b: Scheme,
    pub pairs: usize,
    pub mean_diff: f64,
    pub se_diff: f64,
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Summary {
    pub cells: Vec<CellSummary>,
    pub comparisons: Vec<Comparison>,
    pub warnings: Vec<String>,
}

/// Sample mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Sweep values are written with 9 significant digits, so their bit
/// patterns identify cells exactly.
type CellKey = (u64, Scheme);

pub fn summarize(records: &[ResultRecord]) -> Summary {
    let mut cells: BTreeMap<CellKey, (f64, Vec<&ResultRecord>)> = BTreeMap::new();
    for r in records {
        cells.entry((r.sweep_value.to_bits(), r.scheme)).or_insert((r.sweep_value, Vec::new())).1.push(r);
    }
    let mut out = Summary::default();
    let mut by_value: BTreeMap<u64, Vec<Scheme>> = BTreeMap::new();
    let mut ordered: Vec<_> = cells.iter().collect();
    ordered.sort_by(|a, b| a.0 .1.cmp(&b.0 .1).then(a.1 .0.total_cmp(&b.1 .0)));
    for ((bits, scheme), (value, rs)) in ordered {
        let ok: Vec<f64> = rs.iter().filter(|r| r.ok()).map(|r| r.wsr).collect();
        let (mean, se) = mean_se(&ok);
        if ok.len() < MIN_REALIZATIONS {
            out.warnings.push(format!(
                "cell ({scheme}, {value}) has {} successful realizations; fewer than {MIN_REALIZATIONS}",
                ok.len()
            ));
        }
        out.cells.push(CellSummary {
            scheme: *scheme,
            sweep_value: *value,
            n: ok.len(),
            failed: rs.len() - ok.len(),
            mean,
            se,
            degenerate: ok.len() < 2,
        });
        by_value.entry(*bits).or_default().push(*scheme);
    }
    let mut values: Vec<(f64, Vec<Scheme>)> = by_value.into_iter().map(|(b, s)| (f64::from_bits(b), s)).collect();
    values.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (value, mut schemes) in values {
        schemes.sort();
        for (i, &a) in schemes.iter().enumerate() {
            for &b in &schemes[i + 1..] {
                out.comparisons.push(compare(&cells, value, a, b));
            }
        }
    }
    out
}

fn compare(cells: &BTreeMap<CellKey, (f64, Vec<&ResultRecord>)>, value: f64, a: Scheme, b: Scheme) -> Comparison {
    let by_seed = |s: Scheme| -> BTreeMap<(u64, u32), f64> {
        cells[&(value.to_bits(), s)].1.iter().filter(|r| r.ok()).map(|r| ((r.seed, r.realization), r.wsr)).collect()
    };
    let (ra, rb) = (by_seed(a), by_seed(b));
    let diffs: Vec<f64> = ra.iter().filter_map(|(k, va)| rb.get(k).map(|vb| va - vb)).collect();
    let (mean_diff, se_diff) = mean_se(&diffs);
    Comparison {
        sweep_value: value,
        a,
        b,
        pairs: diffs.len(),
        mean_diff: if diffs.is_empty() { 0.0 } else { mean_diff },
        se_diff,
        wins: diffs.iter().filter(|d| **d > 0.0).count(),
        losses: diffs.iter().filter(|d| **d < 0.0).count(),
        ties: diffs.iter().filter(|d| **d == 0.0).count(),
    }
}

/// Pairs `(proposed, baseline)` whose mean WSR must satisfy
/// `proposed ≥ (1 - tol)·baseline` under `--assert-ordering`.
pub const ORDERING_PAIRS: [(Scheme, Scheme); 4] = [
    (Scheme::PropRs, Scheme::OneLayerRs),
    (Scheme::PropRs, Scheme::Noma),
    (Scheme::PropRs, Scheme::Ofdma),
    (Scheme::FastProp, Scheme::FastOneLayer),
];

/// Human-readable ordering violations; empty when the ordering holds.
pub fn ordering_violations(summary: &Summary) -> Vec<String> {
    let mean = |s: Scheme, v: f64| {
        summary
            .cells
            .iter()
            .find(|c| c.scheme == s && c.sweep_value == v && c.n > 0)
            .map(|c| c.mean)
    };
    let mut values: Vec<f64> = summary.cells.iter().map(|c| c.sweep_value).collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let mut out = Vec::new();
    for v in values {
        for (p, b) in ORDERING_PAIRS {
            if let (Some(mp), Some(mb)) = (mean(p, v), mean(b, v)) {
                if mp < mb - ORDERING_TOLERANCE * mb.abs() {
                    out.push(format!("at sweep value {v}: mean WSR of {p} ({mp:.6e}) is below {b} ({mb:.6e}) by more than 1%"));
                }
            }
        }
    }
    out
}

pub fn write_summary<W: Write>(summary: &Summary, out: W, path: &Path) -> Result<(), TableError> {
    let e = |source| TableError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["scheme", "sweep_value", "n", "failed", "mean_wsr", "se_wsr", "degenerate"]).map_err(e)?;
    for c in &summary.cells {
        w.write_record([
            c.scheme.name().to_string(),
            fmt_float(c.sweep_value),
            c.n.to_string(),
            c.failed.to_string(),
            fmt_float(c.mean),
            fmt_float(c.se),
            c.degenerate.to_string(),
        ])
        .map_err(e)?;
    }
    w.flush().map_err(|source| TableError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_comparisons<W: Write>(summary: &Summary, out: W, path: &Path) -> Result<(), TableError> {
    let e = |source| TableError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sweep_value", "scheme_a", "scheme_b", "pairs", "mean_diff", "se_diff", "wins", "losses", "ties"])
        .map_err(e)?;
    for c in &summary.comparisons {
        w.write_record([
            fmt_float(c.sweep_value),
            c.a.name().to_string(),
            c.b.name().to_string(),
            c.pairs.to_string(),
            fmt_float(c.mean_diff),
            fmt_float(c.se_diff),
            c.wins.to_string(),
            c.losses.to_string(),
            c.ties.to_string(),
        ])
        .map_err(e)?;
    }
    w.flush().map_err(|source| TableError::Io {
        path: path.to_path_buf(),
        source,
    })
}
