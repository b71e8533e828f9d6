use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use lanesim::bench::{bench_sorting, bench_strong_scaling, emit_plot_data, BenchError, BenchOptions};
use lanesim::demand::{load_demand, Trip};
use lanesim::engine::{
    partition_for, prepare, write_metrics, write_result_row, write_results, EngineError, SimConfig, Simulation, WORKERS_ENV,
};
use lanesim::network::{load_network, RoadNetwork};
use lanesim::partitioning::{load_partition, write_partition, PartitionMethod};
use lanesim::scenario::{self, GridSpec, Scenario};
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser)]
#[command(name = "lanesim", version, about = "Sharded lane-level traffic simulation")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic grid network and seeded demand.
    Generate(GenerateArgs),
    /// Partition a network for K shards and write the assignment.
    Partition(PartitionArgs),
    /// Simulate a scenario and write per-trip results.
    Run(RunArgs),
    /// Strong-scaling benchmark with CSV output.
    Bench(BenchArgs),
}

#[derive(Args, Clone)]
struct GridArgs {
    #[arg(long, default_value_t = 5)]
    rows: usize,
    #[arg(long, default_value_t = 5)]
    cols: usize,
    #[arg(long, default_value_t = 1000)]
    trips: usize,
    #[arg(long = "demand-seed", default_value_t = 42)]
    demand_seed: u64,
    /// Departure window, s.
    #[arg(long, default_value_t = 3600.0)]
    window: f64,
    #[arg(long)]
    signalized: bool,
}

impl GridArgs {
    fn spec(&self) -> GridSpec {
        GridSpec {
            rows: self.rows,
            cols: self.cols,
            trips: self.trips,
            seed: self.demand_seed,
            window_s: self.window,
            signalized: self.signalized,
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    grid: GridArgs,
    /// Output directory for network.csv and trips.csv.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct InputArgs {
    #[arg(long)]
    network: PathBuf,
    #[arg(long)]
    demand: PathBuf,
}

/// Every simulation setting; unset flags keep the config-file value or the default.
#[derive(Args, Default)]
struct SimArgs {
    /// key = value file applied before the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    start: Option<f64>,
    #[arg(long)]
    end: Option<f64>,
    #[arg(long)]
    shards: Option<usize>,
    /// exact | balanced | unbalanced | random
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// strict | fast
    #[arg(long)]
    mode: Option<String>,
    #[arg(long = "signal-cycle")]
    signal_cycle: Option<f64>,
    /// Departure window weighting the partition graph, `from:to` or `all`.
    #[arg(long = "partition-window")]
    partition_window: Option<String>,
    #[arg(long = "check-invariants")]
    check_invariants: bool,
    /// Worker threads; the environment variable takes precedence.
    #[arg(long, env = WORKERS_ENV)]
    workers: Option<usize>,
    /// Any config key, e.g. `car.a=1.2` or `gap.sigma_a=0.3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl SimArgs {
    fn config(&self) -> Result<SimConfig> {
        let mut cfg = match &self.config {
            Some(p) => SimConfig::parse(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
            None => SimConfig::default(),
        };
        let num = |v: Option<f64>| v.map(|x| x.to_string());
        let pairs: [(&str, Option<String>); 12] = [
            ("dt", num(self.dt)),
            ("start", num(self.start)),
            ("end", num(self.end)),
            ("shards", self.shards.map(|x| x.to_string())),
            ("method", self.method.clone()),
            ("epsilon", num(self.epsilon)),
            ("seed", self.seed.map(|x| x.to_string())),
            ("mode", self.mode.clone()),
            ("signal_cycle", num(self.signal_cycle)),
            ("partition_window", self.partition_window.clone()),
            ("check_invariants", self.check_invariants.then(|| "true".to_string())),
            ("workers", self.workers.map(|x| x.to_string())),
        ];
        for (k, v) in pairs {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
        }
        for kv in &self.set {
            let (k, v) = kv.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct PartitionArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    sim: SimArgs,
    #[arg(long, default_value = "partition.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    sim: SimArgs,
    /// Precomputed assignment; otherwise partitioned by --method.
    #[arg(long)]
    partition: Option<PathBuf>,
    #[arg(long, default_value = "results.csv")]
    out: PathBuf,
    /// Per-superstep metrics CSV.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Write a checkpoint to --checkpoint every N supersteps.
    #[arg(long = "checkpoint-every", requires = "checkpoint")]
    checkpoint_every: Option<u64>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Continue from a checkpoint; the config stored in it is used.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Print crc32 of every ghost edge on both shards after each barrier.
    #[arg(long = "dump-ghost-checksums")]
    dump_ghost_checksums: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    grid: GridArgs,
    /// Use files instead of a generated grid.
    #[arg(long, requires = "demand")]
    network: Option<PathBuf>,
    #[arg(long, requires = "network")]
    demand: Option<PathBuf>,
    #[command(flatten)]
    sim: SimArgs,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    ks: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "balanced")]
    methods: Vec<String>,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    /// Skip the strict-mode equality gate.
    #[arg(long = "no-gate")]
    no_gate: bool,
    /// Also time departure-sorted against shuffled demand at the largest K.
    #[arg(long)]
    sorting: bool,
    #[arg(long, default_value = "bench")]
    out: PathBuf,
}

fn load_inputs(input: &InputArgs) -> Result<(RoadNetwork, Vec<Trip>)> {
    let net = load_network(&input.network).with_context(|| format!("loading {}", input.network.display()))?;
    let trips = load_demand(&input.demand, &net).with_context(|| format!("loading {}", input.demand.display()))?;
    Ok((net, trips))
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let s = scenario::generate(&a.grid.spec())?;
    let (n, d) = s.write_files(&a.out)?;
    println!(
        "wrote {} ({} nodes, {} edges) and {} ({} trips)",
        n.display(),
        s.net.node_count(),
        s.net.edge_count(),
        d.display(),
        s.trips.len()
    );
    Ok(())
}

fn cmd_partition(a: PartitionArgs) -> Result<()> {
    let cfg = a.sim.config()?;
    let (net, trips) = load_inputs(&a.input)?;
    let (trips, routes, _) = prepare(&net, &trips);
    let p = partition_for(&cfg, &net, &trips, &routes)?;
    std::fs::write(&a.out, write_partition(&p, &net))?;
    let g = lanesim::partitioning::build_traffic_graph(&net, &trips, &routes, cfg.partition_window);
    println!("k={} method={} sizes={:?} cut={}", p.k, cfg.method, p.sizes(), p.cut_weight(&g));
    Ok(())
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let (net, raw) = load_inputs(&a.input)?;
    let (trips, routes, unreachable) = prepare(&net, &raw);
    if unreachable > 0 {
        eprintln!("warning: {unreachable} trips have no route and are skipped");
    }
    let mut sim = match &a.resume {
        Some(path) => Simulation::restore(path, &net, trips, routes)?,
        None => {
            let cfg = a.sim.config()?;
            let assignment = match &a.partition {
                Some(p) => load_partition(p, &net)?,
                None => partition_for(&cfg, &net, &trips, &routes)?,
            };
            Simulation::new(cfg, &net, trips, routes, assignment, unreachable)?
        }
    };
    eprintln!(
        "{} shards, {} ghost edges, {} workers, {} supersteps",
        sim.config().shards,
        sim.ghost_zone().len(),
        sim.workers(),
        sim.config().steps()
    );
    let mut out = BufWriter::new(std::fs::File::create(&a.out)?);
    write_results(&mut out, std::iter::empty())?;
    let mut io_err: Option<std::io::Error> = None;
    let started = Instant::now();
    let every = a.checkpoint_every.unwrap_or(0);
    let metrics = sim.run_observed(
        |r| {
            if io_err.is_none() {
                io_err = write_result_row(&mut out, r).err();
            }
        },
        |s| {
            if a.dump_ghost_checksums {
                for (e, x, y) in s.ghost_checksums() {
                    eprintln!("step {} ghost {} owner {x:08x} mirror {y:08x}", s.step_index(), e.0);
                }
            }
            if every > 0 && s.step_index() % every == 0 {
                s.checkpoint(a.checkpoint.as_ref().expect("required by clap"))?;
            }
            Ok(())
        },
    )?;
    if let Some(e) = io_err {
        return Err(e).context("writing results");
    }
    out.flush()?;
    if let Some(p) = &a.metrics {
        write_metrics(BufWriter::new(std::fs::File::create(p)?), &metrics.per_step)?;
    }
    println!(
        "{} finished, {} incomplete, {} unroutable in {:.2} s ({} steps)",
        metrics.finished,
        metrics.incomplete,
        unreachable,
        started.elapsed().as_secs_f64(),
        metrics.steps
    );
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let base = a.sim.config()?;
    let scenario = match (&a.network, &a.demand) {
        (Some(n), Some(d)) => {
            let (net, trips) = load_inputs(&InputArgs { network: n.clone(), demand: d.clone() })?;
            Scenario { spec: a.grid.spec(), net, trips }
        }
        _ => scenario::generate(&a.grid.spec())?,
    };
    let methods = a
        .methods
        .iter()
        .map(|m| m.parse::<PartitionMethod>().map_err(anyhow::Error::msg))
        .collect::<Result<Vec<_>>>()?;
    if a.ks.is_empty() {
        bail!("--ks must list at least one shard count");
    }
    let opts = BenchOptions { ks: a.ks.clone(), methods, repetitions: a.reps, base: base.clone(), gate: !a.no_gate };
    let report = bench_strong_scaling(&scenario, &opts)?;
    let sorting = if a.sorting {
        let k = *a.ks.iter().max().expect("nonempty");
        let cfg = SimConfig { shards: k, method: opts.methods[0], ..base };
        Some(bench_sorting(&scenario, &cfg, a.reps, cfg.seed ^ 0x5eed)?)
    } else {
        None
    };
    let files = emit_plot_data(&report, sorting.as_ref(), &a.out)?;
    println!("available workers: {}", report.available_workers);
    println!("k,method,wall_ms,compute_ms,transfer_ms,sync_ms,speedup,transfer_ratio");
    for s in &report.summary {
        println!(
            "{},{},{:.1},{:.1},{:.1},{:.1},{:.3},{:.4}",
            s.k, s.method, s.wall_ms, s.compute_ms, s.transfer_ms, s.sync_ms, s.speedup, s.transfer_ratio
        );
    }
    if let Some(s) = &sorting {
        println!("sorted {:.1} ms, unsorted {:.1} ms, ratio {:.3}", s.sorted_ms, s.unsorted_ms, s.ratio());
    }
    for f in &report.flags {
        println!("flag: {f}");
    }
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

/// 2 for broken protocol invariants, 1 for everything else.
fn exit_code(e: &anyhow::Error) -> u8 {
    let invariant = e.chain().any(|c| {
        c.downcast_ref::<EngineError>().is_some_and(EngineError::is_invariant)
            || matches!(c.downcast_ref::<BenchError>(), Some(BenchError::Mismatch { .. }))
            || matches!(c.downcast_ref::<BenchError>(), Some(BenchError::Engine(e)) if e.is_invariant())
    });
    if invariant {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Command::Generate(a) => cmd_generate(a),
        Command::Partition(a) => cmd_partition(a),
        Command::Run(a) => cmd_run(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
