use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LINE_BYTES: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelConfig {
    pub capacity_bytes: u64,
    pub associativity: u32,
}

impl LevelConfig {
    pub const fn new(capacity_bytes: u64, associativity: u32) -> Self {
        Self {
            capacity_bytes,
            associativity,
        }
    }

    pub fn sets(&self) -> u64 {
        self.capacity_bytes / (self.associativity as u64 * LINE_BYTES)
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        let way_bytes = self.associativity as u64 * LINE_BYTES;
        if self.associativity == 0 || self.capacity_bytes == 0 || !self.capacity_bytes.is_multiple_of(way_bytes) {
            return Err(Error::input(format!(
                "{name}: capacity {} is not a multiple of {} ways x {LINE_BYTES} B",
                self.capacity_bytes, self.associativity
            )));
        }
        if !self.sets().is_power_of_two() {
            return Err(Error::input(format!(
                "{name}: set count {} is not a power of two",
                self.sets()
            )));
        }
        Ok(())
    }
}

/// Who brought a line into a level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FillSource {
    Demand,
    HwPrefetch,
    SwPrefetch,
}

#[derive(Debug, Clone, Copy)]
struct Way {
    line: u64,
    stamp: u64,
    source: FillSource,
}

pub(crate) enum Lookup {
    Miss,
    /// Hit; carries the fill source if the line was an untouched prefetch.
    Hit(Option<FillSource>),
}

/// One set-associative LRU level, tagged by full line number.
#[derive(Debug, Clone)]
pub(crate) struct CacheLevel {
    set_mask: u64,
    ways: usize,
    slots: Vec<Option<Way>>,
    clock: u64,
}

impl CacheLevel {
    pub fn new(cfg: &LevelConfig) -> Self {
        let sets = cfg.sets() as usize;
        Self {
            set_mask: sets as u64 - 1,
            ways: cfg.associativity as usize,
            slots: vec![None; sets * cfg.associativity as usize],
            clock: 0,
        }
    }

    fn set(&mut self, line: u64) -> &mut [Option<Way>] {
        let s = (line & self.set_mask) as usize;
        &mut self.slots[s * self.ways..(s + 1) * self.ways]
    }

    pub fn contains(&self, line: u64) -> bool {
        let s = (line & self.set_mask) as usize;
        self.slots[s * self.ways..(s + 1) * self.ways]
            .iter()
            .any(|w| w.is_some_and(|w| w.line == line))
    }

    /// Demand lookup; refreshes recency on a hit and clears the prefetch mark.
    pub fn access(&mut self, line: u64) -> Lookup {
        self.clock += 1;
        let now = self.clock;
        for w in self.set(line).iter_mut().flatten() {
            if w.line == line {
                w.stamp = now;
                let first_use = (w.source != FillSource::Demand).then_some(w.source);
                w.source = FillSource::Demand;
                return Lookup::Hit(first_use);
            }
        }
        Lookup::Miss
    }

    /// Install `line` as most recently used. Returns the fill source of an
    /// evicted, never-demanded prefetch, if any.
    pub fn fill(&mut self, line: u64, source: FillSource) -> Option<FillSource> {
        self.clock += 1;
        let now = self.clock;
        let set = self.set(line);
        let victim = match set.iter().position(|w| w.is_none()) {
            Some(free) => free,
            None => set
                .iter()
                .enumerate()
                .min_by_key(|(_, w)| w.map_or(0, |w| w.stamp))
                .map(|(i, _)| i)
                .unwrap(),
        };
        let evicted = set[victim].and_then(|w| (w.source != FillSource::Demand).then_some(w.source));
        set[victim] = Some(Way {
            line,
            stamp: now,
            source,
        });
        evicted
    }

    /// Prefetched lines still waiting for their first demand use.
    pub fn pending_prefetches(&self) -> impl Iterator<Item = FillSource> + '_ {
        self.slots
            .iter()
            .flatten()
            .filter(|w| w.source != FillSource::Demand)
            .map(|w| w.source)
    }
}
