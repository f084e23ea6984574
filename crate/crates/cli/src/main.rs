use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use rowbuf::config::{ExperimentConfig, ReorderSpec};
use rowbuf::dramsim::{self, Arrival, DramConfig, DramStatsRow, MappingScheme};
use rowbuf::error::StageExt;
use rowbuf::matrix::{self, FeatureMatrix};
use rowbuf::memsys::{
    self, CacheConfig, HwPrefetch, Level, LevelConfig, MemsysRow, PrefetchConfig, StrideConfig, SwPrefetch,
};
use rowbuf::pipeline::{self, Reordering, Workload};
use rowbuf::reorder;
use rowbuf::report;
use rowbuf::trace::AccessTrace;

/// Row-buffer locality experiments: generate kernel traces, reorder data or
/// computation, filter through caches and simulate DRAM.
#[derive(Parser)]
#[command(name = "rowbuf", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the dataset and baseline access trace described by a config.
    Gen {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (dataset.bin, dataset.bin.json, dataset.bin.labels, trace.mltr).
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute a data-layout or computation reordering.
    Reorder(ReorderArgs),
    /// Filter a trace through the cache hierarchy, keeping DRAM demand misses.
    Filter(FilterArgs),
    /// Insert software prefetch records `distance` positions ahead.
    Prefetch {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        distance: usize,
        /// Trace whose addresses form the look-ahead stream (default: the input).
        #[arg(long)]
        stream: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate DRAM row buffers; prints one CSV row per trace.
    Dramsim(DramArgs),
    /// Run experiment configs end to end; prints or writes result CSV.
    Pipeline {
        configs: Vec<PathBuf>,
        /// Worker threads for independent configs (0 = all cores).
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Combined results CSV (default: stdout, or each config's own output).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize result CSVs as a table.
    Report {
        csvs: Vec<PathBuf>,
        /// Append the published KNN and Adaboost reference rows.
        #[arg(long)]
        reference: bool,
    },
}

#[derive(Args)]
struct ReorderArgs {
    /// first-touch, rcb, hilbert, zorder, block or zorder-comp.
    #[arg(long)]
    method: String,
    /// Dataset file; enough for rcb, hilbert and zorder.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Experiment config providing the kernel (required for first-touch,
    /// block and zorder-comp).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Bits per dimension for curve methods.
    #[arg(long)]
    bits: Option<u32>,
    #[arg(long)]
    leaf_size: Option<usize>,
    /// Blocking window in accesses.
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long)]
    trace: PathBuf,
    /// DRAM-reaching trace.
    #[arg(long)]
    out: PathBuf,
    /// L1 geometry as BYTES:WAYS.
    #[arg(long, value_parser = parse_level, default_value = "32768:8")]
    l1: LevelConfig,
    #[arg(long, value_parser = parse_level, default_value = "262144:8")]
    l2: LevelConfig,
    #[arg(long, value_parser = parse_level, default_value = "8388608:16")]
    l3: LevelConfig,
    /// Enable the hardware stride prefetcher.
    #[arg(long)]
    hw_stride: bool,
    #[arg(long, default_value_t = 2)]
    hw_degree: u32,
    #[arg(long, default_value_t = 1)]
    hw_distance: u32,
    /// Level filled by prefetch records in the trace.
    #[arg(long, default_value = "l2")]
    sw_target: String,
}

#[derive(Args)]
struct DramArgs {
    traces: Vec<PathBuf>,
    #[arg(long, default_value = "RoBaRaCoCh")]
    scheme: String,
    /// Bypass cap, or `inf` for plain FR-FCFS.
    #[arg(long, default_value = "4")]
    cap: String,
    /// `trace` (record cycles) or `gap:N`.
    #[arg(long, default_value = "trace")]
    arrival: String,
    #[arg(long, default_value_t = dramsim::DEFAULT_QUEUE_DEPTH)]
    queue_depth: usize,
    /// Charge every access at row-hit latency.
    #[arg(long)]
    ideal: bool,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn parse_level(s: &str) -> std::result::Result<LevelConfig, String> {
    let (bytes, ways) = s.split_once(':').ok_or("expected BYTES:WAYS")?;
    let bytes = bytes.parse().map_err(|e| format!("capacity: {e}"))?;
    let ways = ways.parse().map_err(|e| format!("ways: {e}"))?;
    Ok(LevelConfig::new(bytes, ways))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Gen { config, out } => cmd_gen(&config, &out),
        Cmd::Reorder(a) => cmd_reorder(a),
        Cmd::Filter(a) => cmd_filter(a),
        Cmd::Prefetch {
            trace,
            distance,
            stream,
            out,
        } => cmd_prefetch(&trace, distance, stream.as_deref(), &out),
        Cmd::Dramsim(a) => cmd_dramsim(a),
        Cmd::Pipeline { configs, jobs, out } => cmd_pipeline(&configs, jobs, out.as_deref()),
        Cmd::Report { csvs, reference } => cmd_report(&csvs, reference),
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::from_file(path)
        .stage("config")
        .with_context(|| format!("reading {}", path.display()))
}

fn create_dir(dir: &Path, stage: &'static str) -> Result<()> {
    fs::create_dir_all(dir)
        .stage(stage)
        .with_context(|| format!("creating {}", dir.display()))
}

fn write_dataset(path: &Path, ds: &FeatureMatrix, labels: Option<&[u32]>, stage: &'static str) -> Result<()> {
    ds.write(path).stage(stage)?;
    if let Some(labels) = labels {
        matrix::write_labels(&matrix::labels_path(path), labels).stage(stage)?;
    }
    Ok(())
}

fn cmd_gen(config: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let g = pipeline::generate(&cfg)?;
    create_dir(out, "gen")?;
    if let Some(ds) = &g.dataset {
        write_dataset(&out.join("dataset.bin"), ds, g.labels.as_deref(), "gen")?;
    }
    g.trace.write_file(&out.join("trace.mltr")).stage("gen")?;
    println!("records: {}", g.trace.len());
    Ok(())
}

fn cmd_reorder(a: ReorderArgs) -> Result<()> {
    let mut spec = ReorderSpec::from_method(&a.method).stage("reorder")?;
    match &mut spec {
        ReorderSpec::Rcb { leaf_size } => *leaf_size = a.leaf_size.unwrap_or(*leaf_size),
        ReorderSpec::Hilbert { bits } | ReorderSpec::Zorder { bits } | ReorderSpec::ZorderComp { bits } => {
            *bits = a.bits.unwrap_or(*bits)
        }
        ReorderSpec::Block { window } => *window = a.window.unwrap_or(*window),
        ReorderSpec::FirstTouch => {}
    }
    spec.validate().stage("reorder")?;
    create_dir(&a.out, "reorder")?;

    let start = Instant::now();
    let (reordering, dataset, labels) = match (&a.config, &a.dataset) {
        (Some(config), _) => {
            let mut cfg = load_config(config)?;
            if let Some(ds) = &a.dataset {
                cfg.dataset = rowbuf::config::DatasetSpec::File { path: ds.clone() };
                cfg.validate().stage("config")?;
            }
            let base = Workload::prepare(&cfg).stage("dataset")?;
            let run = base.run().stage("gen")?;
            let start = Instant::now();
            let r = pipeline::plan_reorder(&base, &run, spec).stage("reorder")?;
            let elapsed = start.elapsed();
            return finish_reorder(&a.out, spec, r, base.dataset.as_ref(), base.labels.as_deref(), elapsed);
        }
        (None, Some(path)) => {
            if !(spec.is_layout() && spec.needs_features()) {
                bail!("[reorder] method `{}` needs a kernel: pass --config", spec.method());
            }
            let ds = FeatureMatrix::read(path).stage("reorder")?;
            let lp = matrix::labels_path(path);
            let labels = if lp.exists() {
                Some(matrix::read_labels(&lp).stage("reorder")?)
            } else {
                None
            };
            let perm = pipeline::feature_permutation(&ds, spec)
                .stage("reorder")?
                .expect("feature method");
            (Reordering::Layout(perm), ds, labels)
        }
        (None, None) => bail!("[reorder] pass --dataset or --config"),
    };
    let elapsed = start.elapsed();
    finish_reorder(&a.out, spec, reordering, Some(&dataset), labels.as_deref(), elapsed)
}

/// Write the reordering outputs; overhead covers permutation construction
/// plus the dataset rewrite.
fn finish_reorder(
    out: &Path,
    spec: ReorderSpec,
    r: Reordering,
    dataset: Option<&FeatureMatrix>,
    labels: Option<&[u32]>,
    mut elapsed: std::time::Duration,
) -> Result<()> {
    match &r {
        Reordering::Layout(perm) => {
            perm.write_csv(&out.join("permutation.csv")).stage("reorder")?;
            if let Some(ds) = dataset {
                let start = Instant::now();
                let new = reorder::apply_permutation(ds, perm).stage("reorder")?;
                let new_labels = labels.map(|l| perm.apply(l)).transpose().stage("reorder")?;
                elapsed += start.elapsed();
                write_dataset(&out.join("dataset.bin"), &new, new_labels.as_deref(), "reorder")?;
            }
        }
        Reordering::Order(perm) => perm.write_csv(&out.join("permutation.csv")).stage("reorder")?,
        Reordering::Blocked(seq) => {
            let mut w = BufWriter::new(File::create(out.join("order.csv")).stage("reorder")?);
            for (pos, row) in seq.indices().iter().enumerate() {
                writeln!(w, "{pos},{row}").stage("reorder")?;
            }
            w.flush().stage("reorder")?;
        }
    }
    // never report a zero overhead on coarse clocks
    let secs = elapsed.as_secs_f64().max(1e-9);
    fs::write(out.join("overhead.csv"), format!("method,seconds\n{},{secs:e}\n", spec.method())).stage("reorder")?;
    println!("{}: overhead {secs:.6} s", spec.method());
    Ok(())
}

fn cmd_filter(a: FilterArgs) -> Result<()> {
    let trace = AccessTrace::read_file(&a.trace).stage("filter")?;
    let cache = CacheConfig {
        l1: a.l1,
        l2: a.l2,
        l3: a.l3,
    };
    let target: Level = a.sw_target.parse().stage("filter")?;
    let pf = PrefetchConfig {
        hw: if a.hw_stride {
            HwPrefetch::Stride(StrideConfig {
                degree: a.hw_degree,
                distance: a.hw_distance,
                table_entries: 0,
            })
        } else {
            HwPrefetch::Off
        },
        sw: SwPrefetch::Inject { distance: 1, target },
    };
    let (dram, stats) = memsys::filter_to_dram(&trace, &cache, &pf).stage("filter")?;
    dram.write_file(&a.out).stage("filter")?;
    let row = MemsysRow::new(a.trace.display().to_string(), &stats);
    pipeline::write_csv(&[row], io::stdout().lock()).stage("filter")?;
    Ok(())
}

fn cmd_prefetch(trace: &Path, distance: usize, stream: Option<&Path>, out: &Path) -> Result<()> {
    let t = AccessTrace::read_file(trace).stage("prefetch")?;
    let injected = match stream {
        Some(s) => {
            let s = AccessTrace::read_file(s).stage("prefetch")?;
            let addrs: Vec<u64> = s.addresses().collect();
            memsys::inject_sw_prefetch(&t, &addrs, distance)
        }
        None => memsys::inject_self(&t, distance),
    }
    .stage("prefetch")?;
    injected.write_file(out).stage("prefetch")?;
    println!("records: {} ({} prefetches)", injected.len(), injected.len() - t.len());
    Ok(())
}

fn dram_config(a: &DramArgs) -> Result<DramConfig> {
    let scheme: MappingScheme = a.scheme.parse().stage("dramsim")?;
    let cap = match a.cap.as_str() {
        "inf" | "none" => None,
        c => Some(c.parse::<u32>().map_err(|e| anyhow!("[dramsim] cap `{c}`: {e}"))?),
    };
    let arrival = match a.arrival.as_str() {
        "trace" => Arrival::FromTrace,
        g => match g.strip_prefix("gap:").map(str::parse::<u64>) {
            Some(Ok(gap)) => Arrival::FixedGap { gap },
            _ => bail!("[dramsim] arrival must be `trace` or `gap:N`, got `{g}`"),
        },
    };
    let cfg = DramConfig {
        scheme,
        cap,
        arrival,
        queue_depth: a.queue_depth,
        ..Default::default()
    };
    cfg.validate().stage("dramsim")?;
    Ok(cfg)
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .context("building worker pool")
}

fn cmd_dramsim(a: DramArgs) -> Result<()> {
    if a.traces.is_empty() {
        bail!("[dramsim] no trace files given");
    }
    let cfg = dram_config(&a)?;
    let rows = pool(a.jobs)?.install(|| {
        a.traces
            .par_iter()
            .map(|path| -> Result<DramStatsRow> {
                let t = AccessTrace::read_file(path)
                    .stage("dramsim")
                    .with_context(|| format!("reading {}", path.display()))?;
                let stats = if a.ideal {
                    dramsim::simulate_ideal(&t, &cfg)
                } else {
                    dramsim::simulate(&t, &cfg)
                }
                .stage("dramsim")
                .with_context(|| path.display().to_string())?;
                Ok(DramStatsRow::new(path.display().to_string(), &cfg, &stats))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    pipeline::write_csv(&rows, io::stdout().lock()).stage("dramsim")?;
    Ok(())
}

fn cmd_pipeline(configs: &[PathBuf], jobs: usize, out: Option<&Path>) -> Result<()> {
    if configs.is_empty() {
        bail!("[pipeline] no config files given");
    }
    let cfgs = configs.iter().map(|c| load_config(c)).collect::<Result<Vec<_>>>()?;
    let results = pool(jobs)?.install(|| {
        cfgs.par_iter()
            .map(|cfg| pipeline::run_experiment(cfg).with_context(|| format!("experiment `{}`", cfg.name)))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut combined = Vec::new();
    for (cfg, res) in cfgs.iter().zip(&results) {
        if let Some(path) = &cfg.outputs.csv {
            let f = File::create(path).stage("pipeline").with_context(|| path.display().to_string())?;
            pipeline::write_csv(&res.rows, BufWriter::new(f)).stage("pipeline")?;
        }
        if let Some(path) = &cfg.outputs.overhead_csv {
            let f = File::create(path).stage("pipeline").with_context(|| path.display().to_string())?;
            pipeline::write_csv(&res.overheads, BufWriter::new(f)).stage("pipeline")?;
        }
        for o in &res.overheads {
            eprintln!("{}/{}: {} overhead {:.6} s", o.experiment, o.variant, o.method, o.seconds);
        }
        combined.extend(res.rows.iter().cloned());
    }
    match out {
        Some(path) => {
            let f = File::create(path).stage("pipeline").with_context(|| path.display().to_string())?;
            pipeline::write_csv(&combined, BufWriter::new(f)).stage("pipeline")?;
        }
        None if cfgs.iter().all(|c| c.outputs.csv.is_some()) => {}
        None => pipeline::write_csv(&combined, io::stdout().lock()).stage("pipeline")?,
    }
    Ok(())
}

fn cmd_report(csvs: &[PathBuf], reference: bool) -> Result<()> {
    let mut rows = Vec::new();
    for path in csvs {
        let f = File::open(path).stage("report").with_context(|| path.display().to_string())?;
        rows.extend(
            pipeline::read_rows(f)
                .stage("report")
                .with_context(|| path.display().to_string())?,
        );
    }
    print!("{}", report::render(&rows, reference));
    Ok(())
}
