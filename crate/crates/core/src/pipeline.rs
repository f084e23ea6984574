//! End-to-end experiment: dataset → kernel trace → cache filter → DRAM
//! model, for the baseline and every configured variant.

use std::io::{Read, Write};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::config::{DatasetSpec, ExperimentConfig, KernelSpec, ReorderSpec, Variant};
use crate::dramsim::{self, improvement};
use crate::error::{Error, Result, StageExt};
use crate::kernels::{self, AddressModel, Emitter, KernelRun, PAGE_SIZE};
use crate::matrix::FeatureMatrix;
use crate::memsys::{self, PrefetchConfig, SwPrefetch};
use crate::reorder::{self, AccessSequence, Permutation};
use crate::sfc::Curve;
use crate::trace::AccessTrace;

pub const BASELINE: &str = "baseline";

/// One result row. Every row carries the hash of the config that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRow {
    pub config_hash: String,
    pub experiment: String,
    pub kernel: String,
    pub variant: String,
    pub trace_records: u64,
    pub dram_requests: u64,
    pub hit_ratio: f64,
    pub avg_latency: f64,
    pub ideal_latency: f64,
    pub improvement_pct: f64,
    pub l2_miss_ratio: f64,
    pub useless_prefetch_fraction: f64,
}

/// Wall time spent building a variant's permutation and rewriting data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overhead {
    pub config_hash: String,
    pub experiment: String,
    pub variant: String,
    pub method: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentResult {
    pub rows: Vec<SimRow>,
    pub overheads: Vec<Overhead>,
}

/// Everything a kernel needs to produce its row sequence.
#[derive(Debug, Clone)]
pub struct Workload {
    pub kernel: KernelSpec,
    pub n: usize,
    pub row_stride_bytes: u64,
    pub dataset: Option<FeatureMatrix>,
    pub labels: Option<Vec<u32>>,
    pub queries: Option<FeatureMatrix>,
    /// DBSCAN point visit order; dataset order when `None`.
    pub visit_order: Option<Vec<usize>>,
    /// Gather index array `B`.
    pub gather: Option<AccessSequence>,
}

impl Workload {
    pub fn prepare(cfg: &ExperimentConfig) -> Result<Self> {
        let kernel = cfg.kernel.clone();
        let needs_features = kernel.needs_features()
            || cfg
                .variants
                .iter()
                .any(|v| v.reorder.is_some_and(|r| r.needs_features()));
        let (n, m) = cfg.dataset.shape()?;
        let (dataset, labels) = if needs_features || matches!(cfg.dataset, DatasetSpec::File { .. }) {
            let (ds, labels) = cfg.dataset.load(cfg.seeds.data)?;
            (Some(ds), labels)
        } else {
            (None, None)
        };
        let queries = match kernel {
            // an empty query set still builds the tree but examines nothing
            KernelSpec::Knn { queries: 0, .. } => None,
            KernelSpec::Knn { queries, .. } => {
                let ds = dataset.as_ref().expect("knn loads features");
                Some(cfg.dataset.queries(ds, queries, cfg.seeds.data, cfg.seeds.kernel)?)
            }
            _ => None,
        };
        let gather = match kernel {
            KernelSpec::Gather { count } => Some(kernels::gather_rows(n, count, cfg.seeds.kernel)?.rows),
            _ => None,
        };
        if matches!(kernel, KernelSpec::Dtree { .. }) && labels.is_none() {
            return Err(Error::input("dtree needs labels (missing .labels file)"));
        }
        Ok(Self {
            kernel,
            n,
            row_stride_bytes: m as u64 * 8,
            dataset,
            labels,
            queries,
            visit_order: None,
            gather,
        })
    }

    pub fn features(&self) -> Result<&FeatureMatrix> {
        self.dataset
            .as_ref()
            .ok_or_else(|| Error::input(format!("{} kernel has no feature matrix", self.kernel.name())))
    }

    /// Rows examined by the kernel, in execution order.
    pub fn run(&self) -> Result<KernelRun> {
        match self.kernel {
            KernelSpec::Knn { k, leaf_size, .. } => {
                kernels::knn_rows(self.features()?, self.queries.as_ref(), k, leaf_size)
            }
            KernelSpec::Dbscan { radius, leaf_size } => {
                kernels::dbscan_rows(self.features()?, radius, leaf_size, self.visit_order.as_deref())
            }
            KernelSpec::Dtree { max_depth } => {
                let labels = self.labels.as_deref().expect("checked in prepare");
                kernels::dtree_rows(self.features()?, labels, max_depth)
            }
            KernelSpec::Gather { .. } => Ok(KernelRun {
                rows: self.gather.clone().expect("prepared with gather"),
                query_starts: Vec::new(),
            }),
        }
    }

    /// Move every row to its new position: dataset, labels and the gather
    /// index array follow the permutation; DBSCAN visits in the new order.
    pub fn permuted(&self, perm: &Permutation) -> Result<Self> {
        let mut out = self.clone();
        if let Some(ds) = &self.dataset {
            out.dataset = Some(reorder::apply_permutation(ds, perm)?);
        }
        if let Some(labels) = &self.labels {
            out.labels = Some(perm.apply(labels)?);
        }
        if let Some(g) = &self.gather {
            out.gather = Some(g.relabel(perm)?);
        }
        out.visit_order = None;
        Ok(out)
    }
}

/// Outcome of a reordering method.
#[derive(Debug, Clone, PartialEq)]
pub enum Reordering {
    /// New dataset layout: `map[new] = old`.
    Layout(Permutation),
    /// New order of queries (kNN) or visited points (DBSCAN).
    Order(Permutation),
    /// Reordered access sequence.
    Blocked(AccessSequence),
}

/// Layout permutation computed from features alone (RCB and curves).
pub fn feature_permutation(ds: &FeatureMatrix, spec: ReorderSpec) -> Result<Option<Permutation>> {
    Ok(match spec {
        ReorderSpec::Rcb { leaf_size } => Some(reorder::reorder_rcb(ds, leaf_size)?),
        ReorderSpec::Hilbert { bits } => Some(reorder::reorder_sfc(ds, Curve::Hilbert, bits)?),
        ReorderSpec::Zorder { bits } => Some(reorder::reorder_sfc(ds, Curve::Zorder, bits)?),
        _ => None,
    })
}

/// Compute a reordering. First-touch inspects, and blocking rewrites, the
/// baseline row sequence `base_run`.
pub fn plan_reorder(base: &Workload, base_run: &KernelRun, spec: ReorderSpec) -> Result<Reordering> {
    spec.check_kernel(&base.kernel)?;
    if spec.is_layout() && spec.needs_features() {
        let perm = feature_permutation(base.features()?, spec)?.expect("feature method");
        return Ok(Reordering::Layout(perm));
    }
    Ok(match spec {
        ReorderSpec::FirstTouch => Reordering::Layout(reorder::reorder_first_touch(&base_run.rows, base.n)?),
        ReorderSpec::Block { window } => Reordering::Blocked(reorder::block_by_page(
            &base_run.rows,
            base.row_stride_bytes,
            PAGE_SIZE,
            window,
        )?),
        ReorderSpec::ZorderComp { bits } => {
            let points = match base.kernel {
                KernelSpec::Knn { .. } => base.queries.as_ref(),
                _ => Some(base.features()?),
            };
            match points {
                Some(p) => Reordering::Order(reorder::reorder_queries_zorder(p, bits)?),
                None => Reordering::Order(Permutation::identity(0)),
            }
        }
        _ => unreachable!("feature methods handled above"),
    })
}

/// Row sequence of one variant plus its reordering overhead (permutation
/// construction and data rewrite, not the kernel rerun).
fn variant_rows(
    base: &Workload,
    base_run: &KernelRun,
    reorder: Option<ReorderSpec>,
) -> Result<(KernelRun, Option<Duration>)> {
    let Some(spec) = reorder else {
        return Ok((base_run.clone(), None));
    };
    let start = Instant::now();
    let workload = match plan_reorder(base, base_run, spec)? {
        Reordering::Layout(perm) => base.permuted(&perm)?,
        Reordering::Order(perm) => {
            let mut w = base.clone();
            match base.kernel {
                KernelSpec::Knn { .. } => {
                    if let Some(q) = &base.queries {
                        w.queries = Some(reorder::apply_permutation(q, &perm)?);
                    }
                }
                _ => w.visit_order = Some(perm.map().to_vec()),
            }
            w
        }
        Reordering::Blocked(rows) => {
            let t = start.elapsed();
            let run = KernelRun {
                rows,
                query_starts: Vec::new(),
            };
            return Ok((run, Some(t)));
        }
    };
    let overhead = start.elapsed();
    Ok((workload.run()?, Some(overhead)))
}

fn emitter(cfg: &ExperimentConfig, stride: u64) -> Result<Emitter> {
    let addr = AddressModel {
        base: cfg.address.base,
        row_stride_bytes: stride,
        page_mapping: cfg.address.page_mapping,
    };
    addr.validate()?;
    Ok(Emitter {
        addr,
        issue_gap: cfg.address.issue_gap,
    })
}

/// Virtual trace of a row sequence, after the configured page mapping.
pub fn trace_for(cfg: &ExperimentConfig, stride: u64, run: &KernelRun) -> Result<AccessTrace> {
    let em = emitter(cfg, stride)?;
    kernels::translate(&em.emit(&run.rows), &em.addr)
}

/// Dataset, labels and baseline trace, as written by `gen`.
pub struct Generated {
    pub dataset: Option<FeatureMatrix>,
    pub labels: Option<Vec<u32>>,
    pub trace: AccessTrace,
}

pub fn generate(cfg: &ExperimentConfig) -> Result<Generated> {
    let w = Workload::prepare(cfg).stage("dataset")?;
    let run = w.run().stage("gen")?;
    let trace = trace_for(cfg, w.row_stride_bytes, &run).stage("gen")?;
    Ok(Generated {
        dataset: w.dataset,
        labels: w.labels,
        trace,
    })
}

/// Cache-filter and DRAM-simulate one trace into a result row.
pub fn evaluate(
    cfg: &ExperimentConfig,
    variant: &str,
    trace: &AccessTrace,
    prefetch: &PrefetchConfig,
) -> Result<SimRow> {
    let trace = match prefetch.sw {
        SwPrefetch::Inject { distance, .. } => memsys::inject_self(trace, distance).stage("prefetch")?,
        SwPrefetch::Off => trace.clone(),
    };
    let (dram, stats) = memsys::filter_to_dram(&trace, &cfg.cache, prefetch).stage("filter")?;
    let (actual, ideal) = if dram.is_empty() {
        (None, None)
    } else {
        (
            Some(dramsim::simulate(&dram, &cfg.dram).stage("dramsim")?),
            Some(dramsim::simulate_ideal(&dram, &cfg.dram).stage("dramsim")?),
        )
    };
    let pf = stats.prefetch_total();
    Ok(SimRow {
        config_hash: cfg.hash(),
        experiment: cfg.name.clone(),
        kernel: cfg.kernel.name().to_string(),
        variant: variant.to_string(),
        trace_records: trace.len() as u64,
        dram_requests: dram.len() as u64,
        hit_ratio: actual.as_ref().map_or(0.0, |s| s.hit_ratio()),
        avg_latency: actual.as_ref().map_or(0.0, |s| s.avg_latency()),
        ideal_latency: ideal.as_ref().map_or(0.0, |s| s.avg_latency()),
        improvement_pct: match (&actual, &ideal) {
            (Some(a), Some(i)) => improvement(a, i),
            _ => 0.0,
        },
        l2_miss_ratio: stats.l2_miss_ratio(),
        useless_prefetch_fraction: pf.useless_fraction(),
    })
}

/// Baseline first, then each variant, all from the same seeds.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate().stage("config")?;
    let base = Workload::prepare(cfg).stage("dataset")?;
    let base_run = base.run().stage("gen")?;
    let stride = base.row_stride_bytes;
    let mut result = ExperimentResult::default();
    let baseline = Variant {
        name: BASELINE.to_string(),
        reorder: None,
        prefetch: None,
    };
    for v in std::iter::once(&baseline).chain(&cfg.variants) {
        let (run, overhead) = variant_rows(&base, &base_run, v.reorder).stage("reorder")?;
        let trace = trace_for(cfg, stride, &run).stage("gen")?;
        let pf = v.prefetch.unwrap_or(cfg.prefetch);
        result.rows.push(evaluate(cfg, &v.name, &trace, &pf)?);
        if let (Some(t), Some(r)) = (overhead, v.reorder) {
            result.overheads.push(Overhead {
                config_hash: cfg.hash(),
                experiment: cfg.name.clone(),
                variant: v.name.clone(),
                method: r.method().to_string(),
                seconds: t.as_secs_f64(),
            });
        }
    }
    Ok(result)
}

pub fn write_csv<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Result rows written by [`write_csv`]. Rejects files whose header does
/// not match the row schema.
pub fn read_rows<R: Read>(input: R) -> Result<Vec<SimRow>> {
    let mut r = csv::Reader::from_reader(input);
    let expected = csv::StringRecord::from(SIM_ROW_HEADER.to_vec());
    let header = r.headers()?.clone();
    if header.is_empty() {
        return Ok(Vec::new());
    }
    if header != expected {
        return Err(Error::format(
            "results csv",
            format!("header {:?} does not match {:?}", header.iter().collect::<Vec<_>>(), SIM_ROW_HEADER),
        ));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub const SIM_ROW_HEADER: [&str; 12] = [
    "config_hash",
    "experiment",
    "kernel",
    "variant",
    "trace_records",
    "dram_requests",
    "hit_ratio",
    "avg_latency",
    "ideal_latency",
    "improvement_pct",
    "l2_miss_ratio",
    "useless_prefetch_fraction",
];
