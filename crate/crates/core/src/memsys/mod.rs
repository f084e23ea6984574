//! Three-level cache hierarchy used to reduce a trace to the requests that
//! reach DRAM, with hardware stride and software prefetch models.
//!
//! The hierarchy is non-inclusive: a demand access walks L1, L2, L3 in order
//! and every level that misses is filled. No MSHR or bandwidth modelling;
//! only access order matters here.

mod cache;
mod prefetch;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{AccessKind, AccessRecord, AccessTrace};

pub use cache::{FillSource, LevelConfig, LINE_BYTES};
pub use prefetch::{inject_self, inject_sw_prefetch, Level, StrideConfig, StridePrefetcher};

use cache::{CacheLevel, Lookup};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheConfig {
    pub l1: LevelConfig,
    pub l2: LevelConfig,
    pub l3: LevelConfig,
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self {
            l1: LevelConfig::new(32 << 10, 8),
            l2: LevelConfig::new(256 << 10, 8),
            l3: LevelConfig::new(8 << 20, 16),
        }
    }
}

impl CacheConfig {
    pub fn validate(&self) -> Result<()> {
        self.l1.validate("L1")?;
        self.l2.validate("L2")?;
        self.l3.validate("L3")
    }

    fn levels(&self) -> [LevelConfig; 3] {
        [self.l1, self.l2, self.l3]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum HwPrefetch {
    #[default]
    Off,
    Stride(StrideConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum SwPrefetch {
    #[default]
    Off,
    Inject { distance: usize, target: Level },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PrefetchConfig {
    #[serde(default)]
    pub hw: HwPrefetch,
    #[serde(default)]
    pub sw: SwPrefetch,
}

impl PrefetchConfig {
    pub fn validate(&self) -> Result<()> {
        if let HwPrefetch::Stride(s) = self.hw {
            StridePrefetcher::new(s)?;
        }
        if let SwPrefetch::Inject { distance: 0, .. } = self.sw {
            return Err(Error::input("software prefetch distance must be >= 1"));
        }
        Ok(())
    }

    fn sw_target(&self) -> Level {
        match self.sw {
            SwPrefetch::Inject { target, .. } => target,
            SwPrefetch::Off => Level::L2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LevelStats {
    pub accesses: u64,
    pub misses: u64,
}

impl LevelStats {
    pub fn miss_ratio(&self) -> f64 {
        if self.accesses == 0 {
            0.0
        } else {
            self.misses as f64 / self.accesses as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PrefetchStats {
    pub issued: u64,
    pub useful: u64,
    pub useless: u64,
    /// Prefetches that found their line in no cache level.
    pub from_dram: u64,
}

impl PrefetchStats {
    pub fn useless_fraction(&self) -> f64 {
        if self.issued == 0 {
            0.0
        } else {
            1.0 - self.useful as f64 / self.issued as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MemsysStats {
    /// Demand accesses and misses for L1, L2, L3.
    pub levels: [LevelStats; 3],
    pub hw: PrefetchStats,
    pub sw: PrefetchStats,
    pub dram_demand: u64,
}

impl MemsysStats {
    pub fn l2_miss_ratio(&self) -> f64 {
        self.levels[1].miss_ratio()
    }

    fn prefetch_mut(&mut self, src: FillSource) -> &mut PrefetchStats {
        match src {
            FillSource::SwPrefetch => &mut self.sw,
            _ => &mut self.hw,
        }
    }

    /// Combined hardware + software accounting.
    pub fn prefetch_total(&self) -> PrefetchStats {
        PrefetchStats {
            issued: self.hw.issued + self.sw.issued,
            useful: self.hw.useful + self.sw.useful,
            useless: self.hw.useless + self.sw.useless,
            from_dram: self.hw.from_dram + self.sw.from_dram,
        }
    }
}

/// Flat CSV form of [`MemsysStats`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemsysRow {
    pub trace: String,
    pub l1_accesses: u64,
    pub l1_misses: u64,
    pub l2_accesses: u64,
    pub l2_misses: u64,
    pub l3_accesses: u64,
    pub l3_misses: u64,
    pub dram_demand: u64,
    pub hw_issued: u64,
    pub hw_useful: u64,
    pub hw_useless_fraction: f64,
    pub sw_issued: u64,
    pub sw_useful: u64,
    pub sw_useless_fraction: f64,
}

impl MemsysRow {
    pub fn new(trace: impl Into<String>, s: &MemsysStats) -> Self {
        let [l1, l2, l3] = s.levels;
        Self {
            trace: trace.into(),
            l1_accesses: l1.accesses,
            l1_misses: l1.misses,
            l2_accesses: l2.accesses,
            l2_misses: l2.misses,
            l3_accesses: l3.accesses,
            l3_misses: l3.misses,
            dram_demand: s.dram_demand,
            hw_issued: s.hw.issued,
            hw_useful: s.hw.useful,
            hw_useless_fraction: s.hw.useless_fraction(),
            sw_issued: s.sw.issued,
            sw_useful: s.sw.useful,
            sw_useless_fraction: s.sw.useless_fraction(),
        }
    }
}

/// Stateful hierarchy; feed records with [`MemorySystem::access`].
#[derive(Debug, Clone)]
pub struct MemorySystem {
    levels: [CacheLevel; 3],
    hw: Option<StridePrefetcher>,
    sw_target: Level,
    stats: MemsysStats,
    scratch: Vec<u64>,
}

impl MemorySystem {
    pub fn new(cache: &CacheConfig, pf: &PrefetchConfig) -> Result<Self> {
        cache.validate()?;
        pf.validate()?;
        let [l1, l2, l3] = cache.levels();
        Ok(Self {
            levels: [CacheLevel::new(&l1), CacheLevel::new(&l2), CacheLevel::new(&l3)],
            hw: match pf.hw {
                HwPrefetch::Stride(s) => Some(StridePrefetcher::new(s)?),
                HwPrefetch::Off => None,
            },
            sw_target: pf.sw_target(),
            stats: MemsysStats::default(),
            scratch: Vec::new(),
        })
    }

    /// Process one record. Returns `true` when a demand access missed every
    /// level and must be served by DRAM.
    pub fn access(&mut self, rec: &AccessRecord) -> bool {
        let line = rec.vaddr / LINE_BYTES;
        if rec.kind == AccessKind::Prefetch {
            self.prefetch(line, self.sw_target, FillSource::SwPrefetch);
            return false;
        }
        for lvl in 0..3 {
            self.stats.levels[lvl].accesses += 1;
            let hit = match self.levels[lvl].access(line) {
                Lookup::Hit(first_use) => {
                    if let Some(src) = first_use {
                        self.stats.prefetch_mut(src).useful += 1;
                    }
                    true
                }
                Lookup::Miss => {
                    self.stats.levels[lvl].misses += 1;
                    self.fill(lvl, line, FillSource::Demand);
                    false
                }
            };
            // The stride prefetcher watches the L2 access stream.
            if lvl == 1 {
                self.train_hw(line);
            }
            if hit {
                return false;
            }
        }
        self.stats.dram_demand += 1;
        true
    }

    fn train_hw(&mut self, line: u64) {
        let Some(hw) = self.hw.as_mut() else {
            return;
        };
        let mut targets = std::mem::take(&mut self.scratch);
        targets.clear();
        hw.observe(line, &mut targets);
        for &t in &targets {
            self.prefetch(t, Level::L2, FillSource::HwPrefetch);
        }
        self.scratch = targets;
    }

    /// Fill only the target level; lower levels are probed, not updated.
    fn prefetch(&mut self, line: u64, target: Level, src: FillSource) {
        let t = target.index();
        if self.levels[t].contains(line) {
            return;
        }
        let stats = self.stats.prefetch_mut(src);
        stats.issued += 1;
        if !self.levels[t + 1..].iter().any(|l| l.contains(line)) {
            stats.from_dram += 1;
        }
        self.fill(t, line, src);
    }

    fn fill(&mut self, lvl: usize, line: u64, src: FillSource) {
        if let Some(evicted) = self.levels[lvl].fill(line, src) {
            self.stats.prefetch_mut(evicted).useless += 1;
        }
    }

    /// Settle outstanding prefetches as useless and return the totals.
    pub fn finish(mut self) -> MemsysStats {
        for lvl in &self.levels {
            for src in lvl.pending_prefetches() {
                self.stats.prefetch_mut(src).useless += 1;
            }
        }
        self.stats
    }
}

/// Demand records that miss L1, L2 and L3, in their original order and with
/// their original cycles, plus hierarchy statistics.
pub fn filter_to_dram(
    trace: &AccessTrace,
    cache: &CacheConfig,
    pf: &PrefetchConfig,
) -> Result<(AccessTrace, MemsysStats)> {
    let mut sys = MemorySystem::new(cache, pf)?;
    let mut out = Vec::new();
    for r in trace.records() {
        if sys.access(r) {
            out.push(*r);
        }
    }
    Ok((AccessTrace::from_ordered(out), sys.finish()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{gen_gather_trace, AddressModel, Emitter};
    use proptest::prelude::*;

    fn no_pf() -> PrefetchConfig {
        PrefetchConfig::default()
    }

    #[test]
    fn repeated_address_reaches_dram_once() {
        let t = AccessTrace::from_addresses(std::iter::repeat_n(4096, 100), 1);
        let (dram, stats) = filter_to_dram(&t, &CacheConfig::default(), &no_pf()).unwrap();
        assert_eq!(dram.len(), 1);
        assert_eq!(stats.levels[0], LevelStats { accesses: 100, misses: 1 });
        assert_eq!(stats.levels[1], LevelStats { accesses: 1, misses: 1 });
    }

    #[test]
    fn l1_resident_working_set_second_pass_is_free() {
        let lines: Vec<u64> = (0..512).map(|i| i * 64).collect(); // 32 KiB
        let t = AccessTrace::from_addresses(lines.iter().chain(&lines).copied(), 1);
        let (dram, stats) = filter_to_dram(&t, &CacheConfig::default(), &no_pf()).unwrap();
        assert_eq!(dram.len(), 512);
        assert!(dram.records().iter().all(|r| r.cycle < 512));
        assert_eq!(stats.levels[0].misses, 512);
    }

    #[test]
    fn rejects_bad_geometry() {
        let t = AccessTrace::from_addresses([0, 64], 1);
        let bad = CacheConfig { l2: LevelConfig::new(3 << 10, 8), ..Default::default() };
        assert!(matches!(filter_to_dram(&t, &bad, &no_pf()), Err(Error::Input(_))));
    }

    #[test]
    fn sequential_stream_prefetches_are_useful() {
        let e = Emitter::new(AddressModel::new(0, 64).unwrap());
        let t = e.emit(&crate::kernels::stream_rows(1 << 16, 1).rows);
        let pf = PrefetchConfig { hw: HwPrefetch::Stride(StrideConfig::default()), sw: SwPrefetch::Off };
        let (_, stats) = filter_to_dram(&t, &CacheConfig::default(), &pf).unwrap();
        assert!(stats.hw.issued > 50_000);
        assert_eq!(stats.hw.issued, stats.hw.useful + stats.hw.useless);
        assert!(stats.hw.useless_fraction() <= 0.05, "{:?}", stats.hw);
        let (_, base) = filter_to_dram(&t, &CacheConfig::default(), &no_pf()).unwrap();
        assert!(stats.l2_miss_ratio() < base.l2_miss_ratio());
    }

    #[test]
    fn single_access_issues_no_prefetch() {
        let t = AccessTrace::from_addresses([640], 1);
        let pf = PrefetchConfig { hw: HwPrefetch::Stride(StrideConfig::default()), sw: SwPrefetch::Off };
        let (_, stats) = filter_to_dram(&t, &CacheConfig::default(), &pf).unwrap();
        assert_eq!(stats.hw.issued, 0);
        assert_eq!(stats.hw.useless_fraction(), 0.0);
    }

    #[test]
    fn sw_prefetch_never_counts_as_demand() {
        let e = Emitter::new(AddressModel::new(0, 64).unwrap());
        let t = gen_gather_trace(1 << 18, 20_000, 3, &e).unwrap();
        let injected = inject_self(&t, 16).unwrap();
        let pf = PrefetchConfig {
            hw: HwPrefetch::Off,
            sw: SwPrefetch::Inject { distance: 16, target: Level::L2 },
        };
        let (dram, stats) = filter_to_dram(&injected, &CacheConfig::default(), &pf).unwrap();
        assert_eq!(stats.levels[0].accesses, t.len() as u64);
        assert!(dram.records().iter().all(|r| r.kind.is_demand()));
        assert_eq!(stats.dram_demand, dram.len() as u64);
        assert_eq!(stats.sw.issued, stats.sw.useful + stats.sw.useless);
        assert!(stats.sw.issued > 0);
    }

    /// Fully-associative LRU hit/miss sequence via explicit recency stacks.
    fn stack_oracle(lines: &[u64], capacity: usize) -> Vec<bool> {
        let mut stack: Vec<u64> = Vec::new();
        lines
            .iter()
            .map(|&l| {
                let hit = match stack.iter().position(|&x| x == l) {
                    Some(depth) => {
                        stack.remove(depth);
                        depth < capacity
                    }
                    None => false,
                };
                stack.insert(0, l);
                hit
            })
            .collect()
    }

    proptest! {
        #[test]
        fn single_set_matches_stack_distance(seq in proptest::collection::vec(0u64..24, 1..300)) {
            // one 4-way set: every line maps to set 0
            let cfg = LevelConfig::new(4 * 64, 4);
            let mut level = CacheLevel::new(&cfg);
            let got: Vec<bool> = seq
                .iter()
                .map(|&l| match level.access(l) {
                    Lookup::Hit(_) => true,
                    Lookup::Miss => {
                        level.fill(l, FillSource::Demand);
                        false
                    }
                })
                .collect();
            prop_assert_eq!(got, stack_oracle(&seq, 4));
        }

        #[test]
        fn filter_output_is_an_ordered_subsequence(seq in proptest::collection::vec(0u64..4096, 1..500)) {
            let small = CacheConfig {
                l1: LevelConfig::new(1024, 2),
                l2: LevelConfig::new(4096, 4),
                l3: LevelConfig::new(16384, 4),
            };
            let t = AccessTrace::from_addresses(seq.iter().map(|l| l * 64), 2);
            let (dram, _) = filter_to_dram(&t, &small, &no_pf()).unwrap();
            let mut it = t.records().iter();
            for r in dram.records() {
                prop_assert!(it.any(|x| x == r));
            }
        }

        #[test]
        fn larger_l3_never_adds_dram_traffic(
            seq in proptest::collection::vec(0u64..2048, 1..800),
            grow in 1u32..4,
        ) {
            let base = CacheConfig {
                l1: LevelConfig::new(512, 2),
                l2: LevelConfig::new(2048, 4),
                l3: LevelConfig::new(8192, 4),
            };
            let bigger = CacheConfig { l3: LevelConfig::new(8192 << grow, 4), ..base };
            let t = AccessTrace::from_addresses(seq.iter().map(|l| l * 64), 2);
            let (a, _) = filter_to_dram(&t, &base, &no_pf()).unwrap();
            let (b, _) = filter_to_dram(&t, &bigger, &no_pf()).unwrap();
            prop_assert!(b.len() <= a.len());
        }
    }
}
