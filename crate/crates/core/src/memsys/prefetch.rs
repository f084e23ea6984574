use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{AccessKind, AccessRecord, AccessTrace};

/// Lines per 4 KiB page.
const PAGE_LINES: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    L1,
    L2,
    L3,
}

impl Level {
    pub fn index(self) -> usize {
        match self {
            Level::L1 => 0,
            Level::L2 => 1,
            Level::L3 => 2,
        }
    }
}

impl std::str::FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Level::L1),
            "l2" => Ok(Level::L2),
            "l3" => Ok(Level::L3),
            other => Err(Error::input(format!("unknown cache level `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrideConfig {
    pub degree: u32,
    pub distance: u32,
    /// Stream-table entries; 0 tracks every page.
    #[serde(default)]
    pub table_entries: usize,
}

impl Default for StrideConfig {
    fn default() -> Self {
        Self {
            degree: 2,
            distance: 1,
            table_entries: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Stream {
    last_line: u64,
    stride: i64,
    stamp: u64,
}

/// Per-page stride detector. A page's stream fires once two consecutive
/// accesses to that page repeat the previous non-zero line stride; it then
/// requests `degree` lines at `distance..distance+degree` strides ahead,
/// never leaving the page.
#[derive(Debug, Clone)]
pub struct StridePrefetcher {
    cfg: StrideConfig,
    table: HashMap<u64, Stream>,
    clock: u64,
}

impl StridePrefetcher {
    pub fn new(cfg: StrideConfig) -> Result<Self> {
        if cfg.degree == 0 || cfg.distance == 0 {
            return Err(Error::input("stride prefetcher degree and distance must be >= 1"));
        }
        Ok(Self {
            cfg,
            table: HashMap::new(),
            clock: 0,
        })
    }

    /// Train on a line access and return the lines to prefetch.
    pub fn observe(&mut self, line: u64, out: &mut Vec<u64>) {
        self.clock += 1;
        let page = line / PAGE_LINES;
        let stamp = self.clock;
        if let Some(s) = self.table.get_mut(&page) {
            let stride = line as i64 - s.last_line as i64;
            s.last_line = line;
            s.stamp = stamp;
            if stride == 0 {
                return;
            }
            if stride == s.stride {
                for j in 0..self.cfg.degree as i64 {
                    let target = line as i64 + stride * (self.cfg.distance as i64 + j);
                    if target < 0 || target as u64 / PAGE_LINES != page {
                        break;
                    }
                    out.push(target as u64);
                }
            }
            s.stride = stride;
            return;
        }
        if self.cfg.table_entries > 0 && self.table.len() >= self.cfg.table_entries {
            let victim = self
                .table
                .iter()
                .min_by_key(|(_, s)| s.stamp)
                .map(|(&p, _)| p)
                .unwrap();
            self.table.remove(&victim);
        }
        self.table.insert(
            page,
            Stream {
                last_line: line,
                stride: 0,
                stamp,
            },
        );
    }
}

/// Software prefetch injection: before the record at position `i`, insert a
/// prefetch for `stream[i + distance]`. Positions whose look-ahead runs past
/// the stream get no prefetch. The prefetch carries the cycle of the record
/// it precedes.
pub fn inject_sw_prefetch(trace: &AccessTrace, stream: &[u64], distance: usize) -> Result<AccessTrace> {
    if distance == 0 {
        return Err(Error::input("prefetch distance must be >= 1"));
    }
    let mut out = Vec::with_capacity(trace.len() * 2);
    for (i, r) in trace.records().iter().enumerate() {
        if let Some(&ahead) = stream.get(i + distance) {
            out.push(AccessRecord {
                vaddr: ahead,
                cycle: r.cycle,
                kind: AccessKind::Prefetch,
            });
        }
        out.push(*r);
    }
    Ok(AccessTrace::from_ordered(out))
}

/// Inject using the trace's own demand addresses as the look-ahead stream.
pub fn inject_self(trace: &AccessTrace, distance: usize) -> Result<AccessTrace> {
    let stream: Vec<u64> = trace.addresses().collect();
    inject_sw_prefetch(trace, &stream, distance)
}
