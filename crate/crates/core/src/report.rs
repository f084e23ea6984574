//! Human-readable summary of result CSVs, laid out as
//! benchmark, original hit ratio, original latency, ideal latency, improvement.

use std::fmt::Write as _;

use crate::pipeline::SimRow;

pub const HEADER: &str = "benchmark, original hit-ratio, original latency, ideal latency, improvement";

/// Published measurements rendered alongside local results for comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceRow {
    pub benchmark: &'static str,
    pub hit_ratio: f64,
    pub avg_latency: f64,
    pub ideal_latency: f64,
    /// As printed in the source table (not recomputed).
    pub improvement_pct: f64,
}

pub const REFERENCE_ROWS: [ReferenceRow; 2] = [
    ReferenceRow {
        benchmark: "KNN",
        hit_ratio: 0.13,
        avg_latency: 92.13,
        ideal_latency: 68.67,
        improvement_pct: 25.46,
    },
    ReferenceRow {
        benchmark: "Adaboost",
        hit_ratio: 0.64,
        avg_latency: 82.37,
        ideal_latency: 72.61,
        improvement_pct: 11.84,
    },
];

fn line(out: &mut String, name: &str, hit: f64, lat: f64, ideal: f64, imp: f64) {
    let _ = writeln!(out, "{name}, {hit:.2}, {lat:.2}, {ideal:.2}, {imp:.2}");
}

/// One line per result row (benchmark = `experiment/variant`), optionally
/// followed by the reference rows.
pub fn render(rows: &[SimRow], with_reference: bool) -> String {
    let mut out = String::new();
    out.push_str(HEADER);
    out.push('\n');
    for r in rows {
        let name = format!("{}/{}", r.experiment, r.variant);
        line(&mut out, &name, r.hit_ratio, r.avg_latency, r.ideal_latency, r.improvement_pct);
    }
    if with_reference {
        for r in REFERENCE_ROWS {
            line(&mut out, r.benchmark, r.hit_ratio, r.avg_latency, r.ideal_latency, r.improvement_pct);
        }
    }
    out
}
