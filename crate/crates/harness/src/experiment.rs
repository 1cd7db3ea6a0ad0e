//! Sweep execution: one job per (scheme, sweep cell, realization).

use std::path::Path;
use std::time::Instant;

use gmrs_core::channel::{
    derive_seed, group_azimuths, sample_realization, ChannelRealization, ChannelStatistics, RngStream,
};
use gmrs_core::fast::{cccp_correlated, cccp_iid, rate_lp, recover_w, run_ssca, MonteCarlo, SscaParams};
use gmrs_core::model::{build_layers, partition_messages, RateAllocation, SplitStructure, UserSet};
use gmrs_core::slow::{ofdma_baseline, optimize_slow, SlowParams};
use rayon::prelude::*;

use crate::config::{ChannelKind, ExperimentConfig, Scheme, SweepCell};
use crate::summary::{summarize, write_comparisons, write_summary, Summary};
use crate::table::{emit_channels, emit_csv, emit_trace, ChannelRow, ResultRecord, ResultTable, TableError, TraceRow};

/// Sub-stream tags below a realization seed.
const SSCA_STREAM: u64 = 1;
const EVAL_STREAM: u64 = 2;

/// Everything one run produces.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub table: ResultTable,
    pub summary: Summary,
    pub traces: Vec<TraceRow>,
    pub channels: Vec<ChannelRow>,
}

impl RunOutput {
    pub fn failures(&self) -> usize {
        self.table.records.iter().filter(|r| !r.ok()).count()
    }
}

/// Seed of realization `r` in sweep cell `cell`. Schemes do not enter the
/// derivation, so every scheme sees the same channel draws.
pub fn realization_seed(master: u64, cell: usize, realization: u32) -> u64 {
    derive_seed(master, &[cell as u64, realization as u64])
}

pub fn statistics(config: &ExperimentConfig, cell: &SweepCell) -> gmrs_core::Result<ChannelStatistics> {
    let users = config.profile.users();
    match cell.channel {
        ChannelKind::Iid { lambda } => ChannelStatistics::iid(users, config.subcarriers, cell.antennas, lambda),
        ChannelKind::OneRing { groups, spread, spacing } => {
            let az = group_azimuths(groups, users)?;
            ChannelStatistics::one_ring(config.subcarriers, cell.antennas, &az, spread, spacing)
        }
    }
}

/// The slow-fading channel of realization `realization` in `cell`.
pub fn realization_channel(
    stats: &ChannelStatistics,
    master: u64,
    cell: usize,
    realization: u32,
) -> ChannelRealization {
    sample_realization(stats, RngStream::for_realization(realization_seed(master, cell, realization), 0))
}

struct Job {
    scheme: Scheme,
    cell: SweepCell,
    realization: u32,
}

struct Outcome {
    wsr: f64,
    iterations: usize,
    units: Vec<f64>,
    layers: Vec<f64>,
    trace: Vec<TraceRow>,
}

/// Shared, immutable inputs for every job.
struct Context<'a> {
    config: &'a ExperimentConfig,
    weights: Vec<f64>,
    /// Column layout: groups and general-split layers.
    full: SplitStructure,
}

impl Context<'_> {
    fn columns(&self, structure: &SplitStructure, rates: &RateAllocation) -> (Vec<f64>, Vec<f64>) {
        let mut units = vec![0.0; self.full.groups().len()];
        for (g, r) in structure.groups().iter().zip(rates.message_rates(structure)) {
            units[self.full.group_index(*g).expect("every policy keeps the partition groups")] = r;
        }
        let mut layers = vec![0.0; self.full.layers().len()];
        for (l, r) in structure.layers().iter().zip(rates.transmission_rates(structure)) {
            layers[self.full.layer_index(*l).expect("general split contains every layer")] = r;
        }
        (units, layers)
    }

    fn system(&self, cell: &SweepCell) -> SlowParams {
        SlowParams::new(cell.power_watts, self.config.bandwidth, self.config.noise, self.weights.clone())
    }

    fn cccp_trace(&self, job: &Job, trace: &[f64]) -> Vec<TraceRow> {
        if !self.config.trace {
            return Vec::new();
        }
        trace
            .iter()
            .enumerate()
            .map(|(i, v)| TraceRow {
                scheme: job.scheme,
                sweep_value: job.cell.value,
                realization: job.realization,
                round: 0,
                iteration: i,
                objective: v * self.config.bandwidth,
                slack_norm: None,
                rho: None,
                omega: None,
                gamma: None,
            })
            .collect()
    }

    fn run(&self, job: &Job) -> gmrs_core::Result<Outcome> {
        let config = self.config;
        let partition = partition_messages(&config.profile)?;
        let structure = build_layers(&partition, job.scheme.policy())?;
        let stats = statistics(config, &job.cell)?;
        let system = self.system(&job.cell);
        let seed = realization_seed(config.seed, job.cell.index, job.realization);
        let eval = RngStream::for_realization(derive_seed(seed, &[EVAL_STREAM]), 0);
        let mc = MonteCarlo::antithetic(config.mc_samples);
        match job.scheme {
            Scheme::PropRs | Scheme::OneLayerRs | Scheme::Noma => {
                let h = realization_channel(&stats, config.seed, job.cell.index, job.realization);
                let sol = optimize_slow(&h, &structure, &system)?;
                let (units, layers) = self.columns(&structure, &sol.iterate.rates);
                Ok(Outcome {
                    wsr: sol.wsr,
                    iterations: sol.iterations,
                    units,
                    layers,
                    trace: self.cccp_trace(job, &sol.objective_trace),
                })
            }
            Scheme::Ofdma => {
                let h = realization_channel(&stats, config.seed, job.cell.index, job.realization);
                let sol = ofdma_baseline(&h, &structure, &system)?;
                let (units, layers) = self.columns(&sol.structure, &sol.rates);
                Ok(Outcome {
                    wsr: sol.wsr,
                    iterations: 1,
                    units,
                    layers,
                    trace: Vec::new(),
                })
            }
            Scheme::FastProp | Scheme::FastOneLayer => {
                let mut params = SscaParams::new(&system.weights);
                params.iterations = config.ssca_iterations;
                let sol = run_ssca(&structure, &stats, &system, &params, derive_seed(seed, &[SSCA_STREAM]))?;
                let lp = rate_lp(&sol.iterate.w, &structure, &stats, &system, mc, eval)?;
                let (units, layers) = self.columns(&structure, &lp.rates);
                let trace = if config.trace {
                    sol.trace
                        .iter()
                        .map(|row| TraceRow {
                            scheme: job.scheme,
                            sweep_value: job.cell.value,
                            realization: job.realization,
                            round: row.round,
                            iteration: row.iteration,
                            objective: row.objective,
                            slack_norm: Some(row.slack_norm),
                            rho: Some(row.rho),
                            omega: Some(row.omega),
                            gamma: Some(row.gamma),
                        })
                        .collect()
                } else {
                    Vec::new()
                };
                Ok(Outcome {
                    wsr: lp.wsr,
                    iterations: sol.trace.len(),
                    units,
                    layers,
                    trace,
                })
            }
            Scheme::FastCor => {
                let sol = cccp_correlated(&stats, &structure, &system, None)?;
                let lp = rate_lp(&sol.iterate.w, &structure, &stats, &system, mc, eval)?;
                let (units, layers) = self.columns(&structure, &lp.rates);
                Ok(Outcome {
                    wsr: lp.wsr,
                    iterations: sol.iterations,
                    units,
                    layers,
                    trace: self.cccp_trace(job, &sol.objective_trace),
                })
            }
            Scheme::FastIid => {
                let lambda = match job.cell.channel {
                    ChannelKind::Iid { lambda } => lambda,
                    ChannelKind::OneRing { .. } => {
                        return Err(gmrs_core::Error::InvalidParameter("fast-iid needs an i.i.d. channel".into()))
                    }
                };
                let sol = cccp_iid(&structure, lambda, config.subcarriers, &system)?;
                let w = recover_w(&sol, job.cell.antennas)?;
                let lp = rate_lp(&w, &structure, &stats, &system, mc, eval)?;
                let (units, layers) = self.columns(&structure, &lp.rates);
                Ok(Outcome {
                    wsr: lp.wsr,
                    iterations: sol.iterations,
                    units,
                    layers,
                    trace: self.cccp_trace(job, &sol.objective_trace),
                })
            }
        }
    }
}

/// Runs every (scheme, cell, realization) job on a pool of `jobs` workers
/// (`None`: one per core). Output order is canonical, independent of scheduling.
pub fn run(config: &ExperimentConfig, jobs: Option<usize>) -> Result<RunOutput, gmrs_core::Error> {
    let partition = partition_messages(&config.profile)?;
    let full = build_layers(&partition, gmrs_core::model::LayerPolicy::FullGeneral)?;
    let ctx = Context {
        config,
        weights: config.weight_vector(),
        full,
    };
    let cells = config.cells();
    let mut schemes = config.schemes.clone();
    schemes.sort();
    let work: Vec<Job> = schemes
        .iter()
        .flat_map(|&scheme| {
            cells.iter().flat_map(move |&cell| {
                (0..config.realizations).map(move |realization| Job {
                    scheme,
                    cell,
                    realization,
                })
            })
        })
        .collect();

    let execute = || -> Vec<(usize, ResultRecord, Vec<TraceRow>)> {
        work.par_iter()
            .map(|job| {
                let start = Instant::now();
                let result = ctx.run(job);
                let wall = start.elapsed().as_secs_f64();
                let seed = realization_seed(config.seed, job.cell.index, job.realization);
                let mut record = ResultRecord {
                    scheme: job.scheme,
                    sweep_value: job.cell.value,
                    realization: job.realization,
                    seed,
                    failure: None,
                    wsr: 0.0,
                    iterations: 0,
                    unit_rates: vec![0.0; ctx.full.groups().len()],
                    layer_rates: vec![0.0; ctx.full.layers().len()],
                    wall_time_s: wall,
                };
                match result {
                    Ok(o) => {
                        record.wsr = o.wsr;
                        record.iterations = o.iterations;
                        record.unit_rates = o.units;
                        record.layer_rates = o.layers;
                        (job.cell.index, record, o.trace)
                    }
                    Err(e) => {
                        record.failure = Some(e.to_string());
                        (job.cell.index, record, Vec::new())
                    }
                }
            })
            .collect()
    };
    let results = match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| gmrs_core::Error::InvalidParameter(format!("cannot start {n} workers: {e}")))?
            .install(execute),
        None => execute(),
    };

    let mut results = results;
    results.sort_by_key(|(cell, r, _)| (r.scheme, *cell, r.realization));
    let mut records = Vec::with_capacity(results.len());
    let mut traces = Vec::new();
    for (_, r, t) in results {
        records.push(r);
        traces.extend(t);
    }

    let channels = if config.dump_channels && config.scenario == crate::config::Scenario::Slow {
        let mut rows = Vec::new();
        for cell in &cells {
            let stats = statistics(config, cell)?;
            for r in 0..config.realizations {
                let h = realization_channel(&stats, config.seed, cell.index, r);
                for k in 0..h.users() {
                    for n in 0..h.subcarriers() {
                        for (a, z) in h.h(k, n).iter().enumerate() {
                            rows.push(ChannelRow {
                                sweep_value: cell.value,
                                realization: r,
                                user: k + 1,
                                subcarrier: n,
                                antenna: a,
                                re: z.re,
                                im: z.im,
                            });
                        }
                    }
                }
            }
        }
        rows
    } else {
        Vec::new()
    };

    let summary = summarize(&records);
    Ok(RunOutput {
        table: ResultTable {
            sweep: config.sweep_axis.name().to_string(),
            units: ctx.full.groups().to_vec(),
            layers: ctx.full.layers().to_vec(),
            records,
        },
        summary,
        traces,
        channels,
    })
}

/// Writes `results.csv`, `summary.csv`, `comparisons.csv` and, when
/// enabled, `trace.csv` and `channels.csv` into `dir`.
pub fn write_outputs(output: &RunOutput, config: &ExperimentConfig, dir: &Path) -> Result<(), TableError> {
    std::fs::create_dir_all(dir).map_err(|source| TableError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    emit_csv(&output.table, &dir.join("results.csv"))?;
    let open = |name: &str| {
        let path = dir.join(name);
        std::fs::File::create(&path).map(|f| (f, path.clone())).map_err(|source| TableError::Io { path, source })
    };
    let (f, p) = open("summary.csv")?;
    write_summary(&output.summary, f, &p)?;
    let (f, p) = open("comparisons.csv")?;
    write_comparisons(&output.summary, f, &p)?;
    if config.trace {
        emit_trace(&output.traces, &dir.join("trace.csv"))?;
    }
    if config.dump_channels {
        emit_channels(&output.channels, &dir.join("channels.csv"))?;
    }
    Ok(())
}

/// `Σ α_S R_S` recomputed from the unit columns.
pub fn recompute_wsr(record: &ResultRecord, weights: &[f64]) -> f64 {
    record.unit_rates.iter().zip(weights).map(|(r, a)| a * r).sum()
}

/// Layer columns summed against unit columns; both total the carried rate.
pub fn resummation_gap(record: &ResultRecord) -> f64 {
    let units: f64 = record.unit_rates.iter().sum();
    let layers: f64 = record.layer_rates.iter().sum();
    (units - layers).abs()
}

/// Index of `set` among the unit columns.
pub fn unit_column(table: &ResultTable, set: UserSet) -> Option<usize> {
    table.units.iter().position(|u| *u == set)
}
