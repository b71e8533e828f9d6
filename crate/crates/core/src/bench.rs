//! Strong-scaling harness. Strict-mode output equality across shard counts
//! gates every timing; timings are fast-mode medians.

use crate::demand::Trip;
use crate::engine::{partition_for, prepare, EngineError, Mode, RunMetrics, SimConfig, Simulation, TripRecord};
use crate::partitioning::{PartitionAssignment, PartitionMethod};
use crate::scenario::Scenario;
use std::collections::HashMap;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

pub const PLOT_HEADER: &str = "k,method,demand,wall_ms,compute_ms,transfer_ms,sync_ms,speedup";
pub const SORTING_HEADER: &str = "order,k,method,demand,wall_ms,compute_ms,transfer_ms,sync_ms";
/// Transfer plus sync time above this fraction of compute time is flagged.
pub const TRANSFER_FLAG_RATIO: f64 = 0.10;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("strict-mode records differ between k={reference} and k={k} ({method}) at trip {trip}")]
    Mismatch { k: usize, reference: usize, method: PartitionMethod, trip: u64 },
    #[error("benchmark needs at least one shard count, method and repetition")]
    Empty,
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub ks: Vec<usize>,
    pub methods: Vec<PartitionMethod>,
    pub repetitions: usize,
    /// Horizon, dynamics and seed shared by every run; shard count,
    /// method and mode are overridden per run.
    pub base: SimConfig,
    /// Strict-mode cross-K equality check before timing.
    pub gate: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            ks: vec![1, 2, 4],
            methods: vec![PartitionMethod::Balanced],
            repetitions: 3,
            base: SimConfig::default(),
            gate: true,
        }
    }
}

/// One timed repetition.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRun {
    pub k: usize,
    pub method: PartitionMethod,
    pub demand: usize,
    pub repetition: usize,
    pub wall_ms: f64,
    pub compute_ms: f64,
    pub transfer_ms: f64,
    pub sync_ms: f64,
    /// Median K=1 wall time over the median wall time of this
    /// `(k, method)`, so every K=1 row reads exactly 1.
    pub speedup: f64,
}

/// Medians over the repetitions of one `(k, method)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchSummary {
    pub k: usize,
    pub method: PartitionMethod,
    pub wall_ms: f64,
    pub compute_ms: f64,
    pub transfer_ms: f64,
    pub sync_ms: f64,
    pub speedup: f64,
    /// (transfer + sync) / compute.
    pub transfer_ratio: f64,
    pub ghost_edges: usize,
}

#[derive(Debug, Clone, Default)]
pub struct BenchReport {
    pub runs: Vec<BenchRun>,
    pub summary: Vec<BenchSummary>,
    /// Hardware threads seen by the process; runs are not limited by it.
    pub available_workers: usize,
    pub gated: bool,
    /// Human-readable notes: wall-time regressions with growing K and
    /// transfer ratios above [`TRANSFER_FLAG_RATIO`].
    pub flags: Vec<String>,
}

impl BenchReport {
    pub fn summary_for(&self, k: usize, method: PartitionMethod) -> Option<&BenchSummary> {
        self.summary.iter().find(|s| s.k == k && s.method == method)
    }
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

struct Prepared {
    trips: Vec<Trip>,
    routes: Vec<crate::demand::Route>,
    unreachable: usize,
}

fn run_once(
    scenario: &Scenario,
    p: &Prepared,
    cfg: &SimConfig,
    assignment: &PartitionAssignment,
) -> Result<(Vec<TripRecord>, RunMetrics), EngineError> {
    let mut sim =
        Simulation::new(cfg.clone(), &scenario.net, p.trips.clone(), p.routes.clone(), assignment.clone(), p.unreachable)?;
    sim.run_to_end()
}

fn ms(ns: u64) -> f64 {
    ns as f64 / 1e6
}

fn first_difference(a: &[TripRecord], b: &[TripRecord]) -> Option<u64> {
    for (x, y) in a.iter().zip(b) {
        if x != y {
            return Some(x.trip.min(y.trip));
        }
    }
    (a.len() != b.len()).then(|| a.len().min(b.len()) as u64)
}

/// Runs the scenario at every `(k, method)`: one strict gate run each,
/// then `repetitions` fast-mode timed runs. Partitions are computed once
/// per `(k, method)` outside the timed region.
pub fn bench_strong_scaling(scenario: &Scenario, opts: &BenchOptions) -> Result<BenchReport, BenchError> {
    if opts.ks.is_empty() || opts.methods.is_empty() || opts.repetitions == 0 {
        return Err(BenchError::Empty);
    }
    let (trips, routes, unreachable) = prepare(&scenario.net, &scenario.trips);
    let p = Prepared { trips, routes, unreachable };
    let demand = p.trips.len();
    let mut report = BenchReport {
        available_workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
        gated: opts.gate,
        ..Default::default()
    };
    let mut ks = opts.ks.clone();
    ks.sort_unstable();
    ks.dedup();

    for &method in &opts.methods {
        let mut reference: Option<(usize, Vec<TripRecord>)> = None;
        let mut medians: Vec<BenchSummary> = Vec::new();
        let mut runs: Vec<BenchRun> = Vec::new();
        for &k in &ks {
            let cfg = SimConfig { shards: k, method, ..opts.base.clone() };
            let assignment = partition_for(&cfg, &scenario.net, &p.trips, &p.routes)?;
            if opts.gate {
                let strict = SimConfig { mode: Mode::Strict, ..cfg.clone() };
                let (records, _) = run_once(scenario, &p, &strict, &assignment)?;
                match &reference {
                    None => reference = Some((k, records)),
                    Some((rk, want)) => {
                        if let Some(trip) = first_difference(want, &records) {
                            return Err(BenchError::Mismatch { k, reference: *rk, method, trip });
                        }
                    }
                }
            }
            let fast = SimConfig { mode: Mode::Fast, ..cfg };
            let mut reps: Vec<(f64, RunMetrics)> = Vec::new();
            for r in 0..opts.repetitions {
                let (_, m) = run_once(scenario, &p, &fast, &assignment)?;
                let wall = ms(m.wall_ns);
                runs.push(BenchRun {
                    k,
                    method,
                    demand,
                    repetition: r,
                    wall_ms: wall,
                    compute_ms: ms(m.compute_ns),
                    transfer_ms: ms(m.transfer_ns),
                    sync_ms: ms(m.sync_ns),
                    speedup: f64::NAN,
                });
                reps.push((wall, m));
            }
            let col = |f: fn(&RunMetrics) -> u64| median(&reps.iter().map(|(_, m)| ms(f(m))).collect::<Vec<_>>());
            let compute_ms = col(|m| m.compute_ns);
            let transfer_ms = col(|m| m.transfer_ns);
            let sync_ms = col(|m| m.sync_ns);
            medians.push(BenchSummary {
                k,
                method,
                wall_ms: median(&reps.iter().map(|r| r.0).collect::<Vec<_>>()),
                compute_ms,
                transfer_ms,
                sync_ms,
                speedup: f64::NAN,
                transfer_ratio: if compute_ms > 0.0 { (transfer_ms + sync_ms) / compute_ms } else { 0.0 },
                ghost_edges: reps[0].1.ghost_edges,
            });
        }
        // speedup is relative to K=1, or to the smallest K benchmarked
        let base = medians[0].wall_ms;
        let speedups: HashMap<usize, f64> = medians.iter().map(|s| (s.k, base / s.wall_ms)).collect();
        for s in &mut medians {
            s.speedup = if s.k == ks[0] { 1.0 } else { speedups[&s.k] };
        }
        for r in &mut runs {
            r.speedup = if r.k == ks[0] { 1.0 } else { speedups[&r.k] };
        }
        for w in medians.windows(2) {
            if w[1].wall_ms > w[0].wall_ms {
                report.flags.push(format!(
                    "{method}: wall time rises from k={} ({:.1} ms) to k={} ({:.1} ms)",
                    w[0].k, w[0].wall_ms, w[1].k, w[1].wall_ms
                ));
            }
        }
        for s in &medians {
            if s.transfer_ratio > TRANSFER_FLAG_RATIO {
                report.flags.push(format!(
                    "{method}: k={} transfer+sync is {:.1}% of compute",
                    s.k,
                    100.0 * s.transfer_ratio
                ));
            }
        }
        report.runs.extend(runs);
        report.summary.extend(medians);
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DemandOrder {
    Sorted,
    Unsorted,
}

impl DemandOrder {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Sorted => "sorted",
            Self::Unsorted => "unsorted",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SortingRun {
    pub order: DemandOrder,
    pub k: usize,
    pub method: PartitionMethod,
    pub demand: usize,
    pub wall_ms: f64,
    pub compute_ms: f64,
    pub transfer_ms: f64,
    pub sync_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SortingReport {
    pub runs: Vec<SortingRun>,
    pub sorted_ms: f64,
    pub unsorted_ms: f64,
}

impl SortingReport {
    /// Sorted over unsorted median wall time.
    pub fn ratio(&self) -> f64 {
        self.sorted_ms / self.unsorted_ms
    }
}

/// Times the same trips in departure order and in a seeded shuffled
/// order, fast mode, interleaving the two orders across repetitions.
pub fn bench_sorting(
    scenario: &Scenario,
    base: &SimConfig,
    repetitions: usize,
    shuffle_seed: u64,
) -> Result<SortingReport, BenchError> {
    if repetitions == 0 {
        return Err(BenchError::Empty);
    }
    let mut sorted = scenario.trips.clone();
    crate::demand::sort_by_departure(&mut sorted);
    let unsorted = scenario.shuffled_trips(shuffle_seed);
    let cfg = SimConfig { mode: Mode::Fast, ..base.clone() };
    let mut prepared = Vec::new();
    for (order, trips) in [(DemandOrder::Sorted, sorted), (DemandOrder::Unsorted, unsorted)] {
        let (trips, routes, unreachable) = prepare(&scenario.net, &trips);
        let assignment = partition_for(&cfg, &scenario.net, &trips, &routes)?;
        prepared.push((order, Prepared { trips, routes, unreachable }, assignment));
    }
    let mut runs = Vec::new();
    for _ in 0..repetitions {
        for (order, p, assignment) in &prepared {
            let (_, m) = run_once(scenario, p, &cfg, assignment)?;
            runs.push(SortingRun {
                order: *order,
                k: cfg.shards,
                method: cfg.method,
                demand: p.trips.len(),
                wall_ms: ms(m.wall_ns),
                compute_ms: ms(m.compute_ns),
                transfer_ms: ms(m.transfer_ns),
                sync_ms: ms(m.sync_ns),
            });
        }
    }
    let med = |o: DemandOrder| median(&runs.iter().filter(|r| r.order == o).map(|r| r.wall_ms).collect::<Vec<_>>());
    Ok(SortingReport { sorted_ms: med(DemandOrder::Sorted), unsorted_ms: med(DemandOrder::Unsorted), runs })
}

/// One row per timed repetition, header [`PLOT_HEADER`].
pub fn write_plot_csv(mut w: impl Write, report: &BenchReport) -> io::Result<()> {
    writeln!(w, "{PLOT_HEADER}")?;
    for r in &report.runs {
        writeln!(
            w,
            "{},{},{},{:.3},{:.3},{:.3},{:.3},{:.4}",
            r.k, r.method, r.demand, r.wall_ms, r.compute_ms, r.transfer_ms, r.sync_ms, r.speedup
        )?;
    }
    Ok(())
}

pub fn write_sorting_csv(mut w: impl Write, report: &SortingReport) -> io::Result<()> {
    writeln!(w, "{SORTING_HEADER}")?;
    for r in &report.runs {
        writeln!(
            w,
            "{},{},{},{},{:.3},{:.3},{:.3},{:.3}",
            r.order.as_str(),
            r.k,
            r.method,
            r.demand,
            r.wall_ms,
            r.compute_ms,
            r.transfer_ms,
            r.sync_ms
        )?;
    }
    Ok(())
}

/// Writes `scaling.csv` (and `sorting.csv` when given) under `dir`.
pub fn emit_plot_data(
    report: &BenchReport,
    sorting: Option<&SortingReport>,
    dir: impl AsRef<Path>,
) -> io::Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut out = vec![dir.join("scaling.csv")];
    write_plot_csv(io::BufWriter::new(std::fs::File::create(&out[0])?), report)?;
    if let Some(s) = sorting {
        let p = dir.join("sorting.csv");
        write_sorting_csv(io::BufWriter::new(std::fs::File::create(&p)?), s)?;
        out.push(p);
    }
    Ok(out)
}
