//! Acceptance checks. Each test prints one `[PASS]`/`[FAIL]` line with the
//! measured values, then asserts. Run with `--nocapture` to see the lines.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rowbuf::config::ExperimentConfig;
use rowbuf::dramsim::{self, Arrival, DramConfig, RowOutcome};
use rowbuf::kernels::{self, AddressModel, Emitter, DEFAULT_BASE};
use rowbuf::memsys::{self, CacheConfig, HwPrefetch, Level, LevelConfig, PrefetchConfig, StrideConfig, SwPrefetch};
use rowbuf::pipeline::{self, SimRow, BASELINE};
use rowbuf::report;
use rowbuf::sfc::{self, Curve, GridPoint, QuantizerConfig};
use rowbuf::trace::{AccessKind, AccessRecord, AccessTrace};

fn verdict(name: &str, pass: bool, detail: String) {
    println!("[{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name}: {detail}");
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

/// 2^20 rows of 64 bytes (a 64 MiB footprint), 10^6 uniform row reads.
fn gather_trace() -> AccessTrace {
    let em = Emitter::new(AddressModel::new(DEFAULT_BASE, 64).unwrap());
    kernels::gen_gather_trace(1 << 20, 1_000_000, 2024, &em).unwrap()
}

// ---------------------------------------------------------------------------

#[test]
fn sfc_bijection_and_hilbert_adjacency() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut checked = 0usize;
    for d in [1usize, 2, 4, 8] {
        for b in [1u32, 4, 8, 12] {
            let cfg = QuantizerConfig::unit(d, b).unwrap();
            for _ in 0..10_000 {
                let p = GridPoint((0..d).map(|_| rng.random_range(0..1u64 << b)).collect());
                for curve in [Curve::Hilbert, Curve::Zorder] {
                    let code = sfc::encode(curve, &p, &cfg).unwrap();
                    assert_eq!(sfc::decode(curve, code, &cfg).unwrap(), p, "{curve:?} d={d} b={b}");
                }
                checked += 1;
            }
        }
    }
    let mut walked = 0u64;
    for d in 1..=16usize {
        for b in 1..=(16 / d) as u32 {
            let cfg = QuantizerConfig::unit(d, b).unwrap();
            let total = 1u128 << (d as u32 * b);
            let mut prev = sfc::hilbert_decode(sfc::SfcCode(0), &cfg).unwrap();
            for c in 1..total {
                let cur = sfc::hilbert_decode(sfc::SfcCode(c), &cfg).unwrap();
                let l1: u64 = prev.0.iter().zip(&cur.0).map(|(a, b)| a.abs_diff(*b)).sum();
                assert_eq!(l1, 1, "d={d} b={b} code={c}");
                prev = cur;
                walked += 1;
            }
        }
    }
    let t = start.elapsed();
    verdict(
        "sfc round trip + exhaustive hilbert adjacency",
        t < Duration::from_secs(10),
        format!("{checked} random points x 2 curves, {walked} adjacent pairs, {:.2}s (limit 10s)", secs(t)),
    );
}

// ---------------------------------------------------------------------------

/// Cycle-by-cycle single-bank FR-FCFS-Cap reference. Written from the rule
/// statement: every cycle, admit arrived requests while the queue has room;
/// if the bank is free, serve the oldest request once it has been passed over
/// `cap - 1` times, else the oldest row hit, else the oldest request.
fn reference_schedule(
    rows: &[u32],
    arrivals: &[u64],
    cap: Option<u32>,
    depth: usize,
    cfg: &DramConfig,
) -> Vec<(usize, RowOutcome)> {
    let tm = cfg.timing;
    let mut queue: Vec<(usize, u32)> = Vec::new(); // (index, times bypassed)
    let mut next = 0;
    let mut open: Option<u32> = None;
    let mut free_at = 0u64;
    let mut out = Vec::new();
    let mut t = 0u64;
    while out.len() < rows.len() {
        while next < rows.len() && queue.len() < depth && arrivals[next] <= t {
            queue.push((next, 0));
            next += 1;
        }
        if t >= free_at && !queue.is_empty() {
            let forced = cap.is_some_and(|c| queue[0].1 + 1 >= c);
            let pos = if forced {
                0
            } else {
                queue
                    .iter()
                    .position(|&(i, _)| open == Some(rows[i]))
                    .unwrap_or(0)
            };
            if pos != 0 {
                queue[0].1 += 1;
            }
            let (i, _) = queue.remove(pos);
            let outcome = match open {
                Some(r) if r == rows[i] => RowOutcome::Hit,
                Some(_) => RowOutcome::Conflict,
                None => RowOutcome::Miss,
            };
            let service = match outcome {
                RowOutcome::Hit => tm.t_cl + tm.t_burst,
                RowOutcome::Miss => tm.t_rcd + tm.t_cl + tm.t_burst,
                RowOutcome::Conflict => tm.t_rp + tm.t_rcd + tm.t_cl + tm.t_burst,
            };
            // the next command may start once the CAS latency is under way
            free_at = t + service - tm.t_cl;
            open = Some(rows[i]);
            out.push((i, outcome));
        }
        t += 1;
    }
    out
}

/// Address of (row, column) in bank 0 under the default RoBaRaCoCh layout.
fn bank0(row: u32, col: u64) -> u64 {
    ((row as u64) << 11 | col) << 6
}

#[test]
fn scheduler_matches_brute_force_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut compared = 0;
    let mut fcfs_checked = 0;
    for case in 0..200 {
        let len = rng.random_range(1..=1000usize);
        let distinct = rng.random_range(1..=8u32);
        let max_gap = [0u32, 2, 8, 40][case % 4];
        let rows: Vec<u32> = (0..len).map(|_| rng.random_range(0..distinct)).collect();
        let mut cycle = 0u32;
        let records: Vec<AccessRecord> = rows
            .iter()
            .map(|&r| {
                cycle += rng.random_range(0..=max_gap);
                AccessRecord::read(bank0(r, rng.random_range(0..128)), cycle)
            })
            .collect();
        let arrivals: Vec<u64> = records.iter().map(|r| r.cycle as u64).collect();
        let trace = AccessTrace::new(records).unwrap();
        for cap in [None, Some(4), Some(1)] {
            let cfg = DramConfig { cap, ..Default::default() };
            let (_, log) = dramsim::simulate_detailed(&trace, &cfg).unwrap();
            let got: Vec<(usize, RowOutcome)> = log.iter().map(|r| (r.index, r.outcome)).collect();
            let want = reference_schedule(&rows, &arrivals, cap, cfg.queue_depth, &cfg);
            assert_eq!(got, want, "case {case} cap {cap:?}");
            compared += 1;
            if cap == Some(1) {
                // strict FCFS: trace order, outcome from the previous row
                let fcfs: Vec<(usize, RowOutcome)> = rows
                    .iter()
                    .enumerate()
                    .map(|(i, &r)| {
                        let o = match i.checked_sub(1).map(|p| rows[p]) {
                            None => RowOutcome::Miss,
                            Some(p) if p == r => RowOutcome::Hit,
                            Some(_) => RowOutcome::Conflict,
                        };
                        (i, o)
                    })
                    .collect();
                assert_eq!(got, fcfs, "case {case}: cap=1 is not FCFS");
                fcfs_checked += 1;
            }
        }
    }
    verdict(
        "FR-FCFS-Cap vs brute-force reference",
        true,
        format!("{compared} schedules identical (cap inf/4/1); {fcfs_checked} cap=1 runs equal FCFS"),
    );
}

// ---------------------------------------------------------------------------

#[test]
fn ideal_row_buffer_improves_gather_latency() {
    let start = Instant::now();
    let trace = gather_trace();
    let (dram, _) = memsys::filter_to_dram(&trace, &CacheConfig::default(), &PrefetchConfig::default()).unwrap();
    let cfg = DramConfig::default();
    let actual = dramsim::simulate(&dram, &cfg).unwrap();
    let ideal = dramsim::simulate_ideal(&dram, &cfg).unwrap();
    let gain = dramsim::improvement(&actual, &ideal);
    let t = start.elapsed();
    let pass = actual.hit_ratio() < 0.3 && gain >= 10.0 && t < Duration::from_secs(60);
    verdict(
        "ideal row-buffer bound on random gather",
        pass,
        format!(
            "hit ratio {:.4} (< 0.3), latency {:.2} -> ideal {:.2}, improvement {gain:.2}% (>= 10%), {} DRAM requests, {:.1}s (limit 60s)",
            actual.hit_ratio(),
            actual.avg_latency(),
            ideal.avg_latency(),
            dram.len(),
            secs(t)
        ),
    );
}

// ---------------------------------------------------------------------------

fn row<'a>(rows: &'a [SimRow], variant: &str) -> &'a SimRow {
    rows.iter().find(|r| r.variant == variant).unwrap()
}

#[test]
fn knn_reordering_raises_row_buffer_hits() {
    let start = Instant::now();
    let cfg = ExperimentConfig::from_json(
        r#"{
            "name": "knn-clustered",
            "dataset": {"source": "clusters", "n": 100000, "m": 2, "clusters": 32, "layout": "grouped"},
            "kernel": {"kind": "knn", "k": 5, "queries": 10000, "leaf_size": 4},
            "variants": [
                {"name": "zorder-comp", "reorder": {"method": "zorder-comp"}},
                {"name": "hilbert", "reorder": {"method": "hilbert"}}
            ],
            "seeds": {"data": 11, "kernel": 12}
        }"#,
    )
    .unwrap();
    let res = pipeline::run_experiment(&cfg).unwrap();
    let base = row(&res.rows, BASELINE).hit_ratio;
    let z = row(&res.rows, "zorder-comp").hit_ratio / base;
    let h = row(&res.rows, "hilbert").hit_ratio / base;
    let t = start.elapsed();
    verdict(
        "kNN reordering effect",
        z >= 1.5 && h >= 1.3 && t < Duration::from_secs(300),
        format!(
            "baseline hit ratio {base:.3}; zorder-comp {z:.2}x (>= 1.5x); hilbert layout {h:.2}x (>= 1.3x); {:.1}s (limit 300s)",
            secs(t)
        ),
    );
}

// ---------------------------------------------------------------------------

#[test]
fn first_touch_helps_dbscan() {
    let cfg = ExperimentConfig::from_json(
        r#"{
            "name": "dbscan",
            "dataset": {"source": "clusters", "n": 50000, "m": 2, "clusters": 32, "layout": "shuffled"},
            "kernel": {"kind": "dbscan", "radius": 3.0},
            "variants": [{"name": "first-touch", "reorder": {"method": "first-touch"}}],
            "seeds": {"data": 21, "kernel": 22}
        }"#,
    )
    .unwrap();
    let res = pipeline::run_experiment(&cfg).unwrap();
    let base = row(&res.rows, BASELINE);
    let ft = row(&res.rows, "first-touch");
    let drop = 100.0 * (base.avg_latency - ft.avg_latency) / base.avg_latency;
    verdict(
        "first-touch on DBSCAN",
        ft.hit_ratio > base.hit_ratio && drop >= 2.0,
        format!(
            "hit ratio {:.3} -> {:.3}; latency {:.2} -> {:.2} ({drop:.1}% lower, >= 2%)",
            base.hit_ratio, ft.hit_ratio, base.avg_latency, ft.avg_latency
        ),
    );
}

// ---------------------------------------------------------------------------

#[test]
fn prefetch_models() {
    let gather = gather_trace();
    let hw = PrefetchConfig {
        hw: HwPrefetch::Stride(StrideConfig::default()),
        sw: SwPrefetch::Off,
    };
    let (_, g) = memsys::filter_to_dram(&gather, &CacheConfig::default(), &hw).unwrap();
    let em = Emitter::new(AddressModel::new(DEFAULT_BASE, 64).unwrap());
    let seq = em.emit(&kernels::stream_rows(1 << 17, 1).rows);
    let (_, s) = memsys::filter_to_dram(&seq, &CacheConfig::default(), &hw).unwrap();
    verdict(
        "hardware stride prefetch usefulness",
        g.hw.useless_fraction() >= 0.40 && s.hw.useless_fraction() <= 0.05,
        format!(
            "gather useless {:.3} of {} issued (>= 0.40); sequential useless {:.3} of {} issued (<= 0.05)",
            g.hw.useless_fraction(),
            g.hw.issued,
            s.hw.useless_fraction(),
            s.hw.issued
        ),
    );

    let none = PrefetchConfig::default();
    let (_, plain) = memsys::filter_to_dram(&gather, &CacheConfig::default(), &none).unwrap();
    let sw = PrefetchConfig {
        hw: HwPrefetch::Off,
        sw: SwPrefetch::Inject { distance: 16, target: Level::L2 },
    };
    let injected = memsys::inject_self(&gather, 16).unwrap();
    let (_, with) = memsys::filter_to_dram(&injected, &CacheConfig::default(), &sw).unwrap();
    let pp = 100.0 * (plain.l2_miss_ratio() - with.l2_miss_ratio());
    verdict(
        "software prefetch D=16 into L2",
        pp >= 10.0,
        format!(
            "L2 demand miss ratio {:.3} -> {:.3} ({pp:.1} points lower, >= 10)",
            plain.l2_miss_ratio(),
            with.l2_miss_ratio()
        ),
    );
}

// ---------------------------------------------------------------------------

/// Fully associative LRU miss count by stack distance: a Fenwick tree marks
/// each line's most recent access time; the number of marks after a line's
/// previous access is its reuse distance.
fn stack_distance_misses(lines: &[u64], capacity: usize) -> usize {
    let n = lines.len();
    let mut tree = vec![0i64; n + 1];
    let add = |tree: &mut Vec<i64>, mut i: usize, v: i64| {
        i += 1;
        while i <= n {
            tree[i] += v;
            i += i & i.wrapping_neg();
        }
    };
    let prefix = |tree: &Vec<i64>, mut i: usize| {
        let mut s = 0;
        while i > 0 {
            s += tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    };
    let mut last: HashMap<u64, usize> = HashMap::new();
    let mut misses = 0;
    for (t, &line) in lines.iter().enumerate() {
        match last.get(&line) {
            Some(&p) => {
                let distance = (prefix(&tree, t) - prefix(&tree, p + 1)) as usize;
                if distance >= capacity {
                    misses += 1;
                }
                add(&mut tree, p, -1);
            }
            None => misses += 1,
        }
        add(&mut tree, t, 1);
        last.insert(line, t);
    }
    misses
}

/// Accesses that miss a single LRU set of `ways` lines (move-to-front list).
fn lru_set_misses(lines: &[u64], ways: usize) -> Vec<u64> {
    let mut stack: Vec<u64> = Vec::new();
    let mut out = Vec::new();
    for &l in lines {
        match stack.iter().position(|&x| x == l) {
            Some(p) => {
                stack.remove(p);
            }
            None => {
                out.push(l);
                if stack.len() == ways {
                    stack.pop();
                }
            }
        }
        stack.insert(0, l);
    }
    out
}

#[test]
fn cache_filter_matches_lru_oracles() {
    let trace = gather_trace();
    let (dram, _) = memsys::filter_to_dram(&trace, &CacheConfig::default(), &PrefetchConfig::default()).unwrap();
    let lines: Vec<u64> = trace.addresses().map(|a| a / 64).collect();
    let oracle = stack_distance_misses(&lines, (8 << 20) / 64);
    let err = (dram.len() as f64 - oracle as f64).abs() / oracle as f64;
    verdict(
        "cache filter vs 8 MiB LRU stack-distance oracle (random gather)",
        err <= 0.05,
        format!("DRAM trace {} vs oracle {oracle} ({:.2}% apart, <= 5%)", dram.len(), 100.0 * err),
    );

    // Micro-traces whose lines all share set 0 at every level: each level is
    // one LRU set fed by the misses of the level above.
    let cache = CacheConfig::default();
    let stride = cache.l3.sets();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut exact = 0;
    for case in 0..300 {
        let len = rng.random_range(1..400);
        let distinct = rng.random_range(1..40u64);
        let lines: Vec<u64> = (0..len).map(|_| rng.random_range(0..distinct) * stride).collect();
        let t = AccessTrace::from_addresses(lines.iter().map(|l| l * 64), 1);
        let (got, _) = memsys::filter_to_dram(&t, &cache, &PrefetchConfig::default()).unwrap();
        let after_l1 = lru_set_misses(&lines, cache.l1.associativity as usize);
        let after_l2 = lru_set_misses(&after_l1, cache.l2.associativity as usize);
        let after_l3 = lru_set_misses(&after_l2, cache.l3.associativity as usize);
        let got: Vec<u64> = got.addresses().map(|a| a / 64).collect();
        assert_eq!(got, after_l3, "micro-trace {case}");
        exact += 1;
    }
    verdict(
        "cache filter vs per-level LRU oracle (single-set micro-traces)",
        true,
        format!("{exact} micro-traces, DRAM sequences identical"),
    );
    // also exercise a hierarchy where L1 and L2 are tiny
    let small = CacheConfig {
        l1: LevelConfig::new(128, 2),
        l2: LevelConfig::new(256, 4),
        l3: LevelConfig::new(512, 8),
    };
    let lines: Vec<u64> = (0..500).map(|_| rng.random_range(0..20u64)).collect();
    let t = AccessTrace::from_addresses(lines.iter().map(|l| l * 64), 1);
    let (got, _) = memsys::filter_to_dram(&t, &small, &PrefetchConfig::default()).unwrap();
    let want = lru_set_misses(&lru_set_misses(&lru_set_misses(&lines, 2), 4), 8);
    assert_eq!(got.addresses().map(|a| a / 64).collect::<Vec<_>>(), want);
}

// ---------------------------------------------------------------------------

#[test]
fn determinism_and_formats() {
    let cfg = ExperimentConfig::from_json(
        r#"{
            "name": "det",
            "dataset": {"source": "clusters", "n": 20000, "m": 3, "clusters": 8, "layout": "shuffled"},
            "kernel": {"kind": "knn", "k": 4, "queries": 500},
            "variants": [
                {"name": "rcb", "reorder": {"method": "rcb"}},
                {"name": "block", "reorder": {"method": "block"}},
                {"name": "hw", "prefetch": {"hw": {"mode": "stride", "degree": 2, "distance": 1}}}
            ],
            "address": {"page_mapping": {"kind": "shuffle", "seed": 9}},
            "seeds": {"data": 31, "kernel": 32}
        }"#,
    )
    .unwrap();
    let csv = |c: &ExperimentConfig| {
        let mut out = Vec::new();
        pipeline::write_csv(&pipeline::run_experiment(c).unwrap().rows, &mut out).unwrap();
        out
    };
    let first = csv(&cfg);
    let reruns_equal = (0..2).all(|_| csv(&cfg) == first);
    let hash_echoed = String::from_utf8(first.clone())
        .unwrap()
        .lines()
        .skip(1)
        .all(|l| l.starts_with(&cfg.hash()));

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut cycle = 0u32;
    let records: Vec<AccessRecord> = (0..5000)
        .map(|i| {
            cycle += rng.random_range(0..10);
            AccessRecord {
                vaddr: rng.random(),
                cycle,
                kind: [AccessKind::Read, AccessKind::Write, AccessKind::Prefetch][i % 3],
            }
        })
        .collect();
    let trace = AccessTrace::new(records).unwrap();
    let bytes = trace.to_bytes();
    let back = AccessTrace::read_from(&mut &bytes[..]).unwrap();
    let round_trip = back == trace && back.to_bytes() == bytes && bytes.len() == 17 + 16 * 5000;

    let table = report::render(&[], true);
    let lines: Vec<&str> = table.lines().collect();
    let knn_row = lines[1].strip_prefix("KNN, ") == Some("0.13, 92.13, 68.67, 25.46");
    let ada_row = lines[2].strip_prefix("Adaboost, ") == Some("0.64, 82.37, 72.61, 11.84");

    verdict(
        "determinism and formats",
        reruns_equal && hash_echoed && round_trip && knn_row && ada_row,
        format!(
            "pipeline reruns identical: {reruns_equal}; rows echo config hash: {hash_echoed}; \
             trace byte round trip: {round_trip}; reference rows verbatim: {}",
            knn_row && ada_row
        ),
    );
}

#[test]
fn dram_request_arrival_from_fixed_gap() {
    // arrivals ignore record cycles when a fixed gap is configured
    let t = AccessTrace::from_addresses([bank0(0, 0), bank0(0, 1)], 1_000_000);
    let cfg = DramConfig {
        arrival: Arrival::FixedGap { gap: 4 },
        ..Default::default()
    };
    let (_, log) = dramsim::simulate_detailed(&t, &cfg).unwrap();
    assert_eq!(log[1].admitted, 4);
}
