//! Memory access traces and the `MLTR` binary trace format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//!      0     4  magic "MLTR"
//!      4     1  format version (1)
//!      5     8  record count
//!     13     4  reserved, zero
//!     17  16*N  records: vaddr u64 | cycle u32 | kind u8 | 3 zero bytes
//! ```
//!
//! `kind` is 0 for reads, 1 for writes and 2 for prefetches.

use std::fs;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"MLTR";
pub const VERSION: u8 = 1;
pub const HEADER_BYTES: usize = 17;
pub const RECORD_BYTES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum AccessKind {
    Read = 0,
    Write = 1,
    Prefetch = 2,
}

impl AccessKind {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(AccessKind::Read),
            1 => Some(AccessKind::Write),
            2 => Some(AccessKind::Prefetch),
            _ => None,
        }
    }

    pub fn is_demand(self) -> bool {
        self != AccessKind::Prefetch
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AccessRecord {
    pub vaddr: u64,
    pub cycle: u32,
    pub kind: AccessKind,
}

impl AccessRecord {
    pub fn read(vaddr: u64, cycle: u32) -> Self {
        Self {
            vaddr,
            cycle,
            kind: AccessKind::Read,
        }
    }

    fn encode(&self) -> [u8; RECORD_BYTES] {
        let mut b = [0u8; RECORD_BYTES];
        b[0..8].copy_from_slice(&self.vaddr.to_le_bytes());
        b[8..12].copy_from_slice(&self.cycle.to_le_bytes());
        b[12] = self.kind as u8;
        b
    }

    fn decode(b: &[u8; RECORD_BYTES], index: u64) -> Result<Self> {
        let kind = AccessKind::from_byte(b[12]).ok_or_else(|| {
            Error::format("trace", format!("record {index}: unknown kind byte {}", b[12]))
        })?;
        if b[13..16] != [0, 0, 0] {
            return Err(Error::format(
                "trace",
                format!("record {index}: non-zero padding"),
            ));
        }
        Ok(Self {
            vaddr: u64::from_le_bytes(b[0..8].try_into().unwrap()),
            cycle: u32::from_le_bytes(b[8..12].try_into().unwrap()),
            kind,
        })
    }
}

/// Ordered access records; cycles are non-decreasing.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AccessTrace {
    records: Vec<AccessRecord>,
}

impl AccessTrace {
    pub fn new(records: Vec<AccessRecord>) -> Result<Self> {
        check_cycles(&records)?;
        Ok(Self { records })
    }

    /// Caller guarantees cycle order.
    pub(crate) fn from_ordered(records: Vec<AccessRecord>) -> Self {
        debug_assert!(check_cycles(&records).is_ok());
        Self { records }
    }

    /// Reads at consecutive addresses spaced `gap` cycles apart.
    pub fn from_addresses(addrs: impl IntoIterator<Item = u64>, gap: u32) -> Self {
        let records = addrs
            .into_iter()
            .enumerate()
            .map(|(i, a)| AccessRecord::read(a, (i as u32).wrapping_mul(gap)))
            .collect();
        Self::from_ordered(records)
    }

    pub fn records(&self) -> &[AccessRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<AccessRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn addresses(&self) -> impl Iterator<Item = u64> + '_ {
        self.records.iter().map(|r| r.vaddr)
    }

    /// Number of consecutive record pairs that land on different pages.
    pub fn page_transitions(&self, page_size: u64) -> usize {
        self.records
            .windows(2)
            .filter(|w| w[0].vaddr / page_size != w[1].vaddr / page_size)
            .count()
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        let mut header = [0u8; HEADER_BYTES];
        header[0..4].copy_from_slice(&MAGIC);
        header[4] = VERSION;
        header[5..13].copy_from_slice(&(self.records.len() as u64).to_le_bytes());
        w.write_all(&header)?;
        for r in &self.records {
            w.write_all(&r.encode())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut header = [0u8; HEADER_BYTES];
        r.read_exact(&mut header)
            .map_err(|e| Error::format("trace", format!("short header: {e}")))?;
        if header[0..4] != MAGIC {
            return Err(Error::format("trace", "bad magic"));
        }
        if header[4] != VERSION {
            return Err(Error::format(
                "trace",
                format!("unsupported version {}", header[4]),
            ));
        }
        if header[13..17] != [0; 4] {
            return Err(Error::format("trace", "non-zero reserved header bytes"));
        }
        let count = u64::from_le_bytes(header[5..13].try_into().unwrap());
        let mut records = Vec::with_capacity(count.min(1 << 24) as usize);
        let mut buf = [0u8; RECORD_BYTES];
        for i in 0..count {
            r.read_exact(&mut buf).map_err(|e| {
                Error::format("trace", format!("truncated at record {i} of {count}: {e}"))
            })?;
            records.push(AccessRecord::decode(&buf, i)?);
        }
        let mut extra = [0u8; 1];
        if r.read(&mut extra)? != 0 {
            return Err(Error::format("trace", "trailing bytes after last record"));
        }
        Self::new(records).map_err(|e| Error::format("trace", e.to_string()))
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(fs::File::open(path)?);
        Self::read_from(&mut r)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::with_capacity(HEADER_BYTES + RECORD_BYTES * self.records.len());
        self.write_to(&mut v).expect("writing to a Vec cannot fail");
        v
    }
}

fn check_cycles(records: &[AccessRecord]) -> Result<()> {
    if let Some(i) = records.windows(2).position(|w| w[1].cycle < w[0].cycle) {
        return Err(Error::input(format!(
            "cycles decrease at record {}: {} -> {}",
            i + 1,
            records[i].cycle,
            records[i + 1].cycle
        )));
    }
    Ok(())
}
