//! Cycle-approximate DRAM model with per-bank row buffers and an
//! FR-FCFS-Cap scheduler.
//!
//! Requests enter a bounded controller queue in trace order. On each cycle
//! the controller may issue one request whose bank is idle: the oldest
//! queued request if it has already been bypassed `cap - 1` times, else the
//! oldest ready row hit, else the oldest ready request. Issuing anything
//! else while the oldest request is ready counts as one bypass of it.
//! Service latency (issue to data) is:
//!
//! * hit: `tCL + tBURST`
//! * closed bank: `tRCD + tCL + tBURST`
//! * conflict: `tRP + tRCD + tCL + tBURST`
//!
//! The CAS latency is pipelined: a bank accepts its next command `tCL`
//! cycles before the previous request's data returns, so consecutive row
//! hits stream at one burst each. Activation and precharge are not
//! overlapped. Rows are left open after every access. Latency runs from
//! admission into the queue to data return. Refresh, tFAW/tRRD, bus turnaround and write
//! recovery are not modelled.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::AccessTrace;

pub const LINE_BITS: u32 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DramGeometry {
    pub channels: u32,
    pub ranks: u32,
    pub banks: u32,
    pub rows_per_bank: u32,
    pub row_size_bytes: u32,
}

impl Default for DramGeometry {
    fn default() -> Self {
        Self {
            channels: 1,
            ranks: 1,
            banks: 16,
            rows_per_bank: 32768,
            row_size_bytes: 8192,
        }
    }
}

impl DramGeometry {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("channels", self.channels),
            ("ranks", self.ranks),
            ("banks", self.banks),
            ("rows_per_bank", self.rows_per_bank),
            ("row_size_bytes", self.row_size_bytes),
        ];
        for (name, v) in fields {
            if v == 0 || !v.is_power_of_two() {
                return Err(Error::input(format!("{name}={v} must be a power of two")));
            }
        }
        if self.row_size_bytes < 64 {
            return Err(Error::input("row size must hold at least one 64-byte line"));
        }
        Ok(())
    }

    pub fn columns_per_row(&self) -> u32 {
        self.row_size_bytes / 64
    }

    /// Flat bank count across channels and ranks.
    pub fn total_banks(&self) -> usize {
        (self.channels * self.ranks * self.banks) as usize
    }

    pub fn capacity_bytes(&self) -> u64 {
        self.total_banks() as u64 * self.rows_per_bank as u64 * self.row_size_bytes as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DramTiming {
    pub t_cl: u64,
    pub t_rcd: u64,
    pub t_rp: u64,
    pub t_burst: u64,
}

impl Default for DramTiming {
    fn default() -> Self {
        Self {
            t_cl: 16,
            t_rcd: 16,
            t_rp: 16,
            t_burst: 4,
        }
    }
}

impl DramTiming {
    pub fn validate(&self) -> Result<()> {
        if [self.t_cl, self.t_rcd, self.t_rp, self.t_burst].contains(&0) {
            return Err(Error::input("DRAM timings must be positive"));
        }
        Ok(())
    }

    pub fn service(&self, outcome: RowOutcome) -> u64 {
        let hit = self.t_cl + self.t_burst;
        match outcome {
            RowOutcome::Hit => hit,
            RowOutcome::Miss => self.t_rcd + hit,
            RowOutcome::Conflict => self.t_rp + self.t_rcd + hit,
        }
    }
}

/// Address bit-field order, most significant field first. Fields are
/// assigned from the least significant bit upward (right to left) after the
/// 6 line-offset bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum MappingScheme {
    #[default]
    RoBaRaCoCh,
    ChRaBaRoCo,
}

impl std::fmt::Display for MappingScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MappingScheme::RoBaRaCoCh => "RoBaRaCoCh",
            MappingScheme::ChRaBaRoCo => "ChRaBaRoCo",
        })
    }
}

impl std::str::FromStr for MappingScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "robaracoch" => Ok(MappingScheme::RoBaRaCoCh),
            "chrabaroco" => Ok(MappingScheme::ChRaBaRoCo),
            other => Err(Error::input(format!("unknown mapping scheme `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Field {
    Channel,
    Rank,
    Bank,
    Row,
    Column,
}

impl MappingScheme {
    /// Fields from least significant upward.
    fn fields_lsb_first(self) -> [Field; 5] {
        use Field::*;
        match self {
            MappingScheme::RoBaRaCoCh => [Channel, Column, Rank, Bank, Row],
            MappingScheme::ChRaBaRoCo => [Column, Row, Bank, Rank, Channel],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct DramAddress {
    pub channel: u32,
    pub rank: u32,
    pub bank: u32,
    pub row: u32,
    pub column: u32,
}

impl DramAddress {
    pub fn flat_bank(&self, geom: &DramGeometry) -> usize {
        ((self.channel * geom.ranks + self.rank) * geom.banks + self.bank) as usize
    }
}

/// Physical address to DRAM coordinates. Bits above the geometry's capacity
/// are discarded, so addresses wrap modulo the total capacity.
pub fn map_address(paddr: u64, scheme: MappingScheme, geom: &DramGeometry) -> DramAddress {
    let mut bits = paddr >> LINE_BITS;
    let mut out = DramAddress::default();
    for field in scheme.fields_lsb_first() {
        let (width, slot) = match field {
            Field::Channel => (geom.channels, &mut out.channel),
            Field::Rank => (geom.ranks, &mut out.rank),
            Field::Bank => (geom.banks, &mut out.bank),
            Field::Row => (geom.rows_per_bank, &mut out.row),
            Field::Column => (geom.columns_per_row(), &mut out.column),
        };
        let nbits = width.trailing_zeros();
        *slot = (bits & ((1u64 << nbits) - 1)) as u32;
        bits >>= nbits;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Arrival {
    /// Use each record's cycle as its arrival time.
    #[default]
    FromTrace,
    /// Record `i` arrives at `i * gap`.
    FixedGap { gap: u64 },
}

pub const DEFAULT_CAP: u32 = 4;
pub const DEFAULT_QUEUE_DEPTH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DramConfig {
    pub geometry: DramGeometry,
    pub timing: DramTiming,
    pub scheme: MappingScheme,
    /// `None` disables the cap (plain FR-FCFS).
    pub cap: Option<u32>,
    pub arrival: Arrival,
    pub queue_depth: usize,
}

impl Default for DramConfig {
    fn default() -> Self {
        Self {
            geometry: DramGeometry::default(),
            timing: DramTiming::default(),
            scheme: MappingScheme::default(),
            cap: Some(DEFAULT_CAP),
            arrival: Arrival::FromTrace,
            queue_depth: DEFAULT_QUEUE_DEPTH,
        }
    }
}

impl DramConfig {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.timing.validate()?;
        if self.cap == Some(0) {
            return Err(Error::input("scheduler cap must be >= 1"));
        }
        if self.queue_depth == 0 {
            return Err(Error::input("queue depth must be >= 1"));
        }
        Ok(())
    }

    pub fn cap_label(&self) -> String {
        self.cap.map_or_else(|| "inf".to_string(), |c| c.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RowOutcome {
    Hit,
    Miss,
    Conflict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BankStats {
    pub hits: u64,
    pub misses: u64,
    pub conflicts: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DramStats {
    pub hits: u64,
    pub misses: u64,
    pub conflicts: u64,
    pub total_latency: u64,
    pub per_bank: Vec<BankStats>,
}

impl DramStats {
    pub fn total(&self) -> u64 {
        self.hits + self.misses + self.conflicts
    }

    pub fn hit_ratio(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.hits as f64 / t as f64,
        }
    }

    pub fn avg_latency(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.total_latency as f64 / t as f64,
        }
    }
}

/// Flat CSV form of a simulation result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DramStatsRow {
    pub trace: String,
    pub scheme: String,
    pub cap: String,
    pub hits: u64,
    pub misses: u64,
    pub conflicts: u64,
    pub hit_ratio: f64,
    pub avg_latency: f64,
}

impl DramStatsRow {
    pub fn new(trace: impl Into<String>, cfg: &DramConfig, stats: &DramStats) -> Self {
        Self {
            trace: trace.into(),
            scheme: cfg.scheme.to_string(),
            cap: cfg.cap_label(),
            hits: stats.hits,
            misses: stats.misses,
            conflicts: stats.conflicts,
            hit_ratio: stats.hit_ratio(),
            avg_latency: stats.avg_latency(),
        }
    }
}

/// One serviced request, in service order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ServedRequest {
    /// Position in the input trace.
    pub index: usize,
    pub bank: usize,
    pub row: u32,
    pub outcome: RowOutcome,
    pub admitted: u64,
    pub issued: u64,
    pub completed: u64,
    /// Times this request was passed over while it was the oldest ready one.
    pub bypassed: u32,
}

impl ServedRequest {
    pub fn latency(&self) -> u64 {
        self.completed - self.admitted
    }
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    index: usize,
    bank: usize,
    row: u32,
    admitted: u64,
    bypassed: u32,
}

/// Timing applied to each serviced request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ServiceModel {
    RowBuffer,
    /// Every access charged row-hit latency.
    IdealHit,
}

pub fn simulate(trace: &AccessTrace, cfg: &DramConfig) -> Result<DramStats> {
    run(trace, cfg, ServiceModel::RowBuffer).map(|(s, _)| s)
}

/// Same queueing and scheduling, but every access is serviced at row-hit
/// latency. Reports a hit ratio of 1.
pub fn simulate_ideal(trace: &AccessTrace, cfg: &DramConfig) -> Result<DramStats> {
    run(trace, cfg, ServiceModel::IdealHit).map(|(s, _)| s)
}

/// Full per-request log alongside the stats.
pub fn simulate_detailed(trace: &AccessTrace, cfg: &DramConfig) -> Result<(DramStats, Vec<ServedRequest>)> {
    run(trace, cfg, ServiceModel::RowBuffer)
}

pub fn simulate_ideal_detailed(
    trace: &AccessTrace,
    cfg: &DramConfig,
) -> Result<(DramStats, Vec<ServedRequest>)> {
    run(trace, cfg, ServiceModel::IdealHit)
}

/// Percentage of average latency removed by an ideal row buffer.
pub fn improvement(actual: &DramStats, ideal: &DramStats) -> f64 {
    improvement_pct(actual.avg_latency(), ideal.avg_latency())
}

pub fn improvement_pct(actual_avg: f64, ideal_avg: f64) -> f64 {
    if actual_avg == 0.0 {
        0.0
    } else {
        100.0 * (actual_avg - ideal_avg) / actual_avg
    }
}

fn run(
    trace: &AccessTrace,
    cfg: &DramConfig,
    model: ServiceModel,
) -> Result<(DramStats, Vec<ServedRequest>)> {
    cfg.validate()?;
    if trace.is_empty() {
        return Err(Error::input("DRAM simulation needs a non-empty trace"));
    }
    let geom = &cfg.geometry;
    let records = trace.records();
    let arrival = |i: usize| -> u64 {
        match cfg.arrival {
            Arrival::FromTrace => records[i].cycle as u64,
            Arrival::FixedGap { gap } => i as u64 * gap,
        }
    };

    let banks = geom.total_banks();
    let mut bank_free = vec![0u64; banks];
    let mut open_row: Vec<Option<u32>> = vec![None; banks];
    let mut stats = DramStats {
        hits: 0,
        misses: 0,
        conflicts: 0,
        total_latency: 0,
        per_bank: vec![BankStats::default(); banks],
    };
    let mut served = Vec::with_capacity(records.len());
    let mut queue: Vec<Pending> = Vec::with_capacity(cfg.queue_depth);
    let mut next = 0usize;
    let mut t = 0u64;
    let bypass_limit = cfg.cap.map(|c| c - 1);

    while next < records.len() || !queue.is_empty() {
        while next < records.len() && queue.len() < cfg.queue_depth && arrival(next) <= t {
            let a = map_address(records[next].vaddr, cfg.scheme, geom);
            queue.push(Pending {
                index: next,
                bank: a.flat_bank(geom),
                row: a.row,
                admitted: t.max(arrival(next)),
                bypassed: 0,
            });
            next += 1;
        }

        let ready = |p: &Pending| bank_free[p.bank] <= t;
        let pick = match queue.first() {
            None => None,
            Some(oldest) if ready(oldest) && bypass_limit.is_some_and(|l| oldest.bypassed >= l) => Some(0),
            Some(_) => queue
                .iter()
                .position(|p| ready(p) && open_row[p.bank] == Some(p.row))
                .or_else(|| queue.iter().position(ready)),
        };

        let Some(pos) = pick else {
            // Nothing issuable: jump to the next bank release or arrival.
            let mut wake = u64::MAX;
            for p in &queue {
                wake = wake.min(bank_free[p.bank]);
            }
            if next < records.len() && queue.len() < cfg.queue_depth {
                wake = wake.min(arrival(next));
            }
            debug_assert!(wake > t && wake != u64::MAX);
            t = wake;
            continue;
        };

        if pos != 0 && ready(&queue[0]) {
            queue[0].bypassed += 1;
        }
        let req = queue.remove(pos);
        let outcome = match open_row[req.bank] {
            Some(r) if r == req.row => RowOutcome::Hit,
            Some(_) => RowOutcome::Conflict,
            None => RowOutcome::Miss,
        };
        let charged = match model {
            ServiceModel::RowBuffer => outcome,
            ServiceModel::IdealHit => RowOutcome::Hit,
        };
        let done = t + cfg.timing.service(charged);
        bank_free[req.bank] = done - cfg.timing.t_cl;
        open_row[req.bank] = Some(req.row);
        let bank_stats = &mut stats.per_bank[req.bank];
        match charged {
            RowOutcome::Hit => {
                stats.hits += 1;
                bank_stats.hits += 1;
            }
            RowOutcome::Miss => {
                stats.misses += 1;
                bank_stats.misses += 1;
            }
            RowOutcome::Conflict => {
                stats.conflicts += 1;
                bank_stats.conflicts += 1;
            }
        }
        stats.total_latency += done - req.admitted;
        served.push(ServedRequest {
            index: req.index,
            bank: req.bank,
            row: req.row,
            outcome,
            admitted: req.admitted,
            issued: t,
            completed: done,
            bypassed: req.bypassed,
        });
        t += 1;
    }
    Ok((stats, served))
}
