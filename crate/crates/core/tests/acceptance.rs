//! Acceptance criteria, one line each. Run with `cargo test --test acceptance`.

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use qnet_autoconf::harness::{run_scenario, sweep, Protocol, ScenarioConfig, SweepGrid, TopologySource};
use qnet_autoconf::netmodel::{
    generate_topology, random_topology, tdc_bank, validate_channel, ChannelClass, Direction, Family, NodeKind,
    PortRef, Topology, TypedPort,
};
use qnet_autoconf::pattern::{run_pattern, PatternConfig, PatternSim};
use qnet_autoconf::pubsub::{run_pubsub, PubsubConfig};
use qnet_autoconf::simkernel::{SensorMode, Trace};
use qnet_autoconf::tdc::{
    decode_stream, encode_identifier, run_tdc, IdErrorType, IdMessage, IdMode, TdcRunConfig, TdcSim, TDC_ADDR,
};

enum Verdict {
    Pass(String),
    Fail(String),
    /// Fails for a reason recorded in the decisions ledger.
    Unattainable(String),
}

use Verdict::*;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn verdict(r: Result<String, String>) -> Verdict {
    match r {
        Ok(s) => Pass(s),
        Err(s) => Fail(s),
    }
}

// 1 ---------------------------------------------------------------------

/// Table I as printed, rows are sources and columns sinks.
const TABLE_I: [[Option<&str>; 5]; 5] = {
    const TT: Option<&str> = Some("T->T");
    const TD: Option<&str> = Some("T->D");
    const ST: Option<&str> = Some("S->T");
    const SD: Option<&str> = Some("S->D");
    [
        [TT, TD, TD, None, TD],
        [None; 5],
        [None; 5],
        [ST, SD, SD, None, SD],
        [ST, SD, SD, None, SD],
    ]
};
const TABLE_ORDER: [NodeKind; 5] = [NodeKind::Osw, NodeKind::Bsa, NodeKind::Meas, NodeKind::Epps, NodeKind::Comp];

fn class_label(c: ChannelClass) -> &'static str {
    match c {
        ChannelClass::SourceTransit => "S->T",
        ChannelClass::SourceDetector => "S->D",
        ChannelClass::TransitTransit => "T->T",
        ChannelClass::TransitDetector => "T->D",
    }
}

fn c1() -> Result<String, String> {
    let (mut na, mut legal) = (0, 0);
    for (r, &src) in TABLE_ORDER.iter().enumerate() {
        for (c, &dst) in TABLE_ORDER.iter().enumerate() {
            let got = validate_channel(TypedPort::new(src, Direction::Output), TypedPort::new(dst, Direction::Input))
                .ok()
                .map(class_label);
            check(got == TABLE_I[r][c], || format!("cell {src}->{dst}: got {got:?}, table {:?}", TABLE_I[r][c]))?;
            if got.is_some() {
                legal += 1;
            } else {
                na += 1;
            }
            for (sd, dd) in [(Direction::Input, Direction::Input), (Direction::Output, Direction::Output)] {
                check(validate_channel(TypedPort::new(src, sd), TypedPort::new(dst, dd)).is_err(), || {
                    format!("{src}->{dst} accepted with wrong directions")
                })?;
            }
        }
    }
    Ok(format!("25 cells match the printed table ({na} N/A, {legal} legal)"))
}

// 2 ---------------------------------------------------------------------

fn bank(d: usize, seed: u64) -> Arc<Topology> {
    Arc::new(tdc_bank(d, seed).expect("bank"))
}

fn c2() -> Result<String, String> {
    for d in [1usize, 2, 4, 16, 64, 256] {
        let o = run_tdc(bank(d, d as u64), TdcRunConfig { trace: false, ..TdcRunConfig::new(IdMode::Serial) });
        check(o.success, || format!("d={d} did not configure"))?;
        check(o.completion_ticks == Some(d as u64), || format!("d={d}: {:?}", o.completion_ticks))?;
    }
    Ok("completion = d for d in {1,2,4,16,64,256}".into())
}

// 3 ---------------------------------------------------------------------

/// Smallest L with 2^L >= d + 1, by counting.
fn ceil_log2_plus(d: u64) -> u64 {
    let mut l = 0;
    while (1u64 << l) < d + 1 {
        l += 1;
    }
    l
}

fn c3() -> Result<String, String> {
    let mut seen = Vec::new();
    for d in [1u64, 3, 7, 100, 254] {
        let o = run_tdc(bank(d as usize, d), TdcRunConfig { trace: false, ..TdcRunConfig::new(IdMode::Parallel) });
        let want = 2 * ceil_log2_plus(d) + 2;
        check(o.success, || format!("d={d} did not configure"))?;
        check(o.completion_ticks == Some(want), || format!("d={d}: {:?} != {want}", o.completion_ticks))?;
        check(o.repeats.iter().all(|&r| r == 1), || format!("d={d}: r != 1"))?;
        seen.push(format!("{d}->{want}"));
    }
    Ok(seen.join(" "))
}

// 4 ---------------------------------------------------------------------

fn bits(s: &str) -> Vec<bool> {
    s.chars().map(|c| c == '1').collect()
}

fn c4() -> Result<String, String> {
    let f = encode_identifier(254, 8).map_err(|e| e.to_string())?;
    check(f == bits("011111111011111110"), || "encode(254, 8) mismatch".into())?;
    let mut n = 0;
    for l in 1..=8u32 {
        for v in 0..(1u64 << l) - 1 {
            let f = encode_identifier(v, l).map_err(|e| e.to_string())?;
            let mut want = vec![false];
            want.extend(std::iter::repeat_n(true, l as usize));
            want.push(false);
            want.extend((0..l).rev().map(|i| v >> i & 1 == 1));
            check(f == want, || format!("encode({v}, {l}) layout"))?;
            let got: Vec<u64> = decode_stream(&f, l).into_iter().map(|(_, x)| x).collect();
            check(got == vec![v], || format!("decode(encode({v}, {l})) = {got:?}"))?;
            n += 1;
        }
        check(encode_identifier((1 << l) - 1, l).is_err(), || format!("all-ones accepted at L={l}"))?;
    }
    Ok(format!("header 0111111110 for 254; {n} values round-trip"))
}

// 5 ---------------------------------------------------------------------

fn c5() -> Verdict {
    let run = || -> Result<(String, Vec<u64>), String> {
        let mut base = ScenarioConfig::new(TopologySource::TdcBank { d: 256, seed: None }, Protocol::TdcParallel);
        // Clamped runs count as the budget, so the mean stays a lower bound.
        base.budget = 10_000;
        let ps = [0.0, 0.02, 0.05, 0.1, 0.2];
        let grid = SweepGrid { protocols: vec![Protocol::TdcSerial, Protocol::TdcParallel], d: vec![256], p: ps.to_vec(), reps: 100 };
        let rows = sweep(&base, &grid).map_err(|e| e.to_string())?;
        let mean = |proto, p| {
            rows.iter()
                .find(|r| r.protocol == proto && r.p == p)
                .map(|r| r.mean_runtime_tact)
                .expect("cell")
        };
        let p_star = ps
            .iter()
            .copied()
            .find(|&p| ps.iter().filter(|&&q| q >= p).all(|&q| mean(Protocol::TdcParallel, q) > mean(Protocol::TdcSerial, q)));
        let p_star = p_star.filter(|&p| p <= 0.2).ok_or("no crossover p* <= 0.2")?;

        let grid = SweepGrid { protocols: vec![Protocol::TdcParallel], d: vec![254], p: vec![0.02, 0.05], reps: 1000 };
        let mut base = base.clone();
        base.budget = 100_000;
        let mut rep_notes = Vec::new();
        for row in sweep(&base, &grid).map_err(|e| e.to_string())? {
            let want = (1.0 - row.p).powi(-18);
            let got = row.mean_repeats.ok_or("no repeats")?;
            check((got - want).abs() <= 0.1 * want, || format!("p={} mean r {got:.3} vs {want:.3}", row.p))?;
            rep_notes.push(format!("r(p={})={got:.3}~{want:.3}", row.p));
        }

        // p = 0, d >= 8: compare exact runs against serial.
        let mut bad = Vec::new();
        for d in 8..=256u64 {
            let serial = d;
            let o = run_tdc(bank(d as usize, d), TdcRunConfig { trace: false, ..TdcRunConfig::new(IdMode::Parallel) });
            let par = o.completion_ticks.ok_or(format!("d={d} parallel failed"))?;
            if par >= serial {
                bad.push(d);
            }
        }
        Ok((format!("p*={p_star}, {}", rep_notes.join(" ")), bad))
    };
    match run() {
        Err(e) => Fail(e),
        Ok((note, bad)) if bad.is_empty() => Pass(note),
        Ok((note, bad)) => Unattainable(format!(
            "{note}; parallel >= serial at p=0 for d={bad:?} (2L+2 = 10 for 8 <= d <= 15)"
        )),
    }
}

// 6 ---------------------------------------------------------------------

fn to_of(r: &qnet_autoconf::simkernel::TraceRecord) -> &str {
    r.payload["to"].as_str().unwrap_or("")
}

/// Serial trace properties: one ID_START outstanding at a time, every
/// request answered, and an ID_RETRY after validation only while another
/// detector holds the TDC. Returns the number of contention retries.
fn serial_trace_ok(trace: &Trace, accepting: u64) -> Result<usize, String> {
    let mut holder: Option<String> = None;
    let mut pending = BTreeSet::new();
    let mut retries = 0;
    for r in trace.records() {
        match (r.kind.as_str(), r.actor == TDC_ADDR) {
            ("ID_REQ", false) => {
                pending.insert(r.actor.clone());
            }
            ("ID_START", true) => {
                check(holder.is_none(), || format!("ID_START to {} while {holder:?} holds", to_of(r)))?;
                check(pending.remove(to_of(r)), || format!("ID_START to {} without request", to_of(r)))?;
                holder = Some(to_of(r).to_string());
            }
            ("ID_COMPLETE", true) => {
                check(holder.as_deref() == Some(to_of(r)), || format!("ID_COMPLETE to non-holder {}", to_of(r)))?;
                holder = None;
            }
            ("ID_RETRY", true) => {
                check(pending.remove(to_of(r)), || format!("ID_RETRY to {} without request", to_of(r)))?;
                if r.t.ticks() >= accepting {
                    check(holder.as_deref().is_some_and(|h| h != to_of(r)), || {
                        format!("ID_RETRY to {} at t={} without contention", to_of(r), r.t.ticks())
                    })?;
                    retries += 1;
                }
            }
            _ => {}
        }
    }
    check(pending.is_empty(), || format!("unanswered requests {pending:?}"))?;
    Ok(retries)
}

fn lookup_probe(mode: IdMode) -> Result<(), String> {
    let topo = bank(6, 11);
    let w = topo.tdc().wires[2].clone();
    let (node, det) = (w.node.to_string(), w.detector.clone());
    let mut sim = TdcSim::new(topo, TdcRunConfig::new(mode));
    let lookup = IdMessage::IdLookupReq { node_id: node.clone(), detector_id: det.clone() };
    sim.tick();
    sim.inject("probe", lookup.clone());
    sim.tick();
    let inbox = sim.take_inbox();
    check(
        matches!(inbox.as_slice(), [(_, IdMessage::IdLookupUnconf { .. })]),
        || format!("before binding: {inbox:?}"),
    )?;
    while !sim.tick() {
        check(sim.now().ticks() < 10_000, || "never configured".into())?;
    }
    sim.inject("probe", lookup);
    sim.inject("late", IdMessage::IdReq { node_id: node, detector_id: det });
    sim.tick();
    let inbox = sim.take_inbox();
    let conf = inbox.iter().any(|(_, m)| matches!(m, IdMessage::IdLookupConf { chan_id, .. } if *chan_id == w.chan));
    let err = inbox
        .iter()
        .any(|(to, m)| to == "late" && matches!(m, IdMessage::IdError { error: IdErrorType::AlreadyConfigured }));
    check(conf && err, || format!("after configured: {inbox:?}"))
}

fn c6() -> Result<String, String> {
    let mut retries = 0;
    for d in [2usize, 5, 16] {
        let o = run_tdc(bank(d, 1), TdcRunConfig::new(IdMode::Serial));
        retries += serial_trace_ok(&o.trace, o.accepting_at.map_or(0, |t| t.ticks()))?;
    }
    check(retries > 0, || "no ID_RETRY observed".into())?;
    for mode in [IdMode::Serial, IdMode::Parallel] {
        lookup_probe(mode)?;
    }
    let mut runs = 0;
    for wiring in 0..50u64 {
        let d = 1 + (wiring as usize * 7) % 24;
        let topo = bank(d, wiring);
        let truth: BTreeSet<(u32, String, String)> =
            topo.tdc().wires.iter().map(|w| (w.chan, w.node.to_string(), w.detector.clone())).collect();
        for seed in 0..10 {
            for mode in [IdMode::Serial, IdMode::Parallel] {
                for p in [0.0, 0.05] {
                    let cfg = TdcRunConfig {
                        p_bit: p,
                        seed,
                        decode_margin: if p > 0.0 { 5 } else { 1 },
                        trace: mode == IdMode::Serial,
                        ..TdcRunConfig::new(mode)
                    };
                    let o = run_tdc(topo.clone(), cfg);
                    let got: BTreeSet<_> = o.bindings.iter().map(|(c, (n, dt))| (*c, n.clone(), dt.clone())).collect();
                    check(got == truth, || format!("wiring {wiring} seed {seed} {mode:?} p={p}: wrong bindings"))?;
                    if mode == IdMode::Serial {
                        serial_trace_ok(&o.trace, o.accepting_at.map_or(0, |t| t.ticks()))?;
                    }
                    runs += 1;
                }
            }
        }
    }
    Ok(format!("{runs} runs bound to ground truth, {retries} ID_RETRY checked"))
}

// 7 ---------------------------------------------------------------------

fn truth_of(t: &Topology) -> BTreeSet<(PortRef, PortRef)> {
    t.channels().iter().map(|c| (c.src.clone(), c.dst.clone())).collect()
}

fn c7() -> Result<String, String> {
    let (mut total, mut done) = (0, 0);
    for ts in 0..100u64 {
        let topo = Arc::new(random_topology(ts));
        check(topo.nodes().len() <= 8 && topo.channels().len() <= 16, || format!("topology {ts} too large"))?;
        let truth = truth_of(&topo);
        for seed in 0..5 {
            let cfg = PubsubConfig { seed, trace: false, ..PubsubConfig::default() };
            let o = run_pubsub(topo.clone(), cfg).map_err(|e| e.to_string())?;
            check(o.configured.is_subset(&truth), || format!("topology {ts} seed {seed}: false positive"))?;
            total += 1;
            if o.completion_ticks.is_some() {
                check(o.configured == truth, || format!("topology {ts} seed {seed}: finished incomplete"))?;
                done += 1;
            }
        }
    }
    check(done * 100 >= total * 95, || format!("{done}/{total} within budget"))?;
    Ok(format!("{done}/{total} complete, 0 false positives"))
}

// 8 ---------------------------------------------------------------------

/// In aux mode each switch senses one input and sources one output per step,
/// and every discovery at a switch matches the port it was pointed at.
fn aux_serialized(trace: &Trace) -> Result<(), String> {
    use std::collections::BTreeMap;
    let mut sense: BTreeMap<String, String> = BTreeMap::new();
    let mut source: BTreeMap<String, String> = BTreeMap::new();
    for r in trace.records() {
        match r.kind.as_str() {
            "STEP" => {
                sense.clear();
                source.clear();
            }
            "AUX_SENSE" => {
                let port = r.payload["input"].as_str().unwrap_or_default().to_string();
                check(sense.insert(r.actor.clone(), port).is_none(), || format!("{} senses twice", r.actor))?;
            }
            "AUX_SOURCE" => {
                let port = r.payload["output"].as_str().unwrap_or_default().to_string();
                check(source.insert(r.actor.clone(), port).is_none(), || format!("{} sources twice", r.actor))?;
            }
            "NEIGHBOR" => {
                let port = |k: &str| serde_json::from_value::<PortRef>(r.payload[k].clone()).map_err(|e| e.to_string());
                let (src, dst) = (port("src")?, port("dst")?);
                if let Some(p) = source.get(src.node.as_str()) {
                    check(*p == src.port.as_str(), || format!("{src} found while aux source on {p}"))?;
                }
                if let Some(p) = sense.get(dst.node.as_str()) {
                    check(*p == dst.port.as_str(), || format!("{dst} found while aux sensor on {p}"))?;
                }
            }
            _ => {}
        }
    }
    Ok(())
}

type Table = BTreeSet<(String, String, String)>;

fn table_of(sim: &PatternSim) -> Table {
    sim.entries().into_iter().map(|e| (e.local.to_string(), e.remote.to_string(), e.pattern)).collect()
}

fn c8() -> Result<String, String> {
    let mut runs = 0;
    for ts in 0..100u64 {
        let topo = Arc::new(random_topology(ts));
        let truth = truth_of(&topo);
        let mut tables = Vec::new();
        for mode in [SensorMode::FullyMonitored, SensorMode::Aux] {
            let (o, sim) = run_pattern(topo.clone(), PatternConfig { mode, ..PatternConfig::default() })
                .map_err(|e| e.to_string())?;
            check(o.success && sim.discovered() == truth, || format!("topology {ts} {mode:?}: not equal to truth"))?;
            check(o.false_positives.is_empty(), || format!("topology {ts} {mode:?}: false positive"))?;
            if mode == SensorMode::Aux {
                aux_serialized(sim.trace()).map_err(|e| format!("topology {ts}: {e}"))?;
            }
            tables.push(table_of(&sim));
            runs += 1;
        }
        check(tables[0] == tables[1], || format!("topology {ts}: mode tables differ"))?;
    }
    for fam in [Family::SwitchBsaPool, Family::QflyDphd] {
        let topo = Arc::new(generate_topology(fam, 4, 0).map_err(|e| e.to_string())?);
        let (_, sim) = run_pattern(topo, PatternConfig { mode: SensorMode::Aux, ..PatternConfig::default() })
            .map_err(|e| e.to_string())?;
        aux_serialized(sim.trace()).map_err(|e| format!("{fam}: {e}"))?;
    }

    let topo = Arc::new(generate_topology(Family::QflyDphd, 4, 1).map_err(|e| e.to_string())?);
    for mode in [SensorMode::FullyMonitored, SensorMode::Aux] {
        let mut sim = PatternSim::new(topo.clone(), PatternConfig { mode, ttl: 500, ..PatternConfig::default() })
            .map_err(|e| e.to_string())?;
        check(sim.run().success, || "ttl run".into())?;
        let before = table_of(&sim);
        let last = sim.entries().iter().map(|e| e.expires_at).max().unwrap_or_default();
        sim.advance_to(last + 1);
        check(sim.entries().is_empty(), || format!("{mode:?}: entries survive expiry"))?;
        check(sim.run().success, || format!("{mode:?}: rerun failed"))?;
        let after: Table = table_of(&sim);
        check(after == before, || format!("{mode:?}: rerun table differs"))?;
    }
    Ok(format!("{runs} runs equal truth, modes agree, aux serialized, ttl expiry and rerun ok"))
}

// 9 ---------------------------------------------------------------------

fn c9() -> Result<String, String> {
    let mut notes = Vec::new();
    for fam in [Family::SwitchBsaPool, Family::QflyDphd] {
        for n in [4, 8] {
            let topo = Arc::new(generate_topology(fam, n, 0).map_err(|e| e.to_string())?);
            let total = topo.channels().len() as u64;
            let mut steps = Vec::new();
            for mode in [SensorMode::FullyMonitored, SensorMode::Aux] {
                let (o, _) = run_pattern(topo.clone(), PatternConfig { mode, trace: false, ..PatternConfig::default() })
                    .map_err(|e| e.to_string())?;
                let cum: Vec<u64> = o
                    .channels_per_step
                    .iter()
                    .scan(0u64, |acc, &c| {
                        *acc += c as u64;
                        Some(*acc)
                    })
                    .collect();
                check(cum.windows(2).all(|w| w[0] <= w[1]), || format!("{fam} n={n}: not monotone"))?;
                check(cum.last() == Some(&total), || format!("{fam} n={n} {mode:?}: {:?} of {total}", cum.last()))?;
                steps.push(cum.len());
            }
            check(steps[0] < steps[1], || format!("{fam} n={n}: fm {} vs aux {} steps", steps[0], steps[1]))?;
            notes.push(format!("{fam}/{n}: {}<{}", steps[0], steps[1]));
        }
    }
    Ok(notes.join(" "))
}

// 10 --------------------------------------------------------------------

fn c10() -> Result<String, String> {
    let scenarios = [
        (TopologySource::TdcBank { d: 40, seed: None }, Protocol::TdcSerial, 0.0, SensorMode::FullyMonitored),
        (TopologySource::TdcBank { d: 40, seed: None }, Protocol::TdcParallel, 0.05, SensorMode::FullyMonitored),
        (TopologySource::Random { seed: None }, Protocol::Pubsub, 0.0, SensorMode::FullyMonitored),
        (TopologySource::Generator { family: Family::QflyDphd, n: 4, seed: None }, Protocol::Pattern, 0.0, SensorMode::Aux),
    ];
    for (src, protocol, p, mode) in scenarios {
        for seed in [0, 7] {
            let mut cfg = ScenarioConfig::new(src.clone(), protocol);
            cfg.p_bit = p;
            cfg.mode = mode;
            cfg.seed = seed;
            let bytes = || -> Result<Vec<u8>, String> {
                let run = run_scenario(&cfg).map_err(|e| e.to_string())?;
                let mut out = Vec::new();
                run.trace.write_jsonl(&mut out).map_err(|e| e.to_string())?;
                Ok(out)
            };
            let (a, b) = (bytes()?, bytes()?);
            check(!a.is_empty() && a == b, || format!("{protocol} seed {seed}: traces differ"))?;
        }
    }
    Ok("4 protocols x 2 seeds byte-identical".into())
}

fn main() -> ExitCode {
    type Criterion = (u8, &'static str, f64, fn() -> Verdict);
    let criteria: [Criterion; 10] = [
        (1, "Table I conformance", 1.0, || verdict(c1())),
        (2, "serial timing", 5.0, || verdict(c2())),
        (3, "parallel timing", 5.0, || verdict(c3())),
        (4, "codec", f64::INFINITY, || verdict(c4())),
        (5, "noise sweep", 60.0, c5),
        (6, "TDC protocol conformance", f64::INFINITY, || verdict(c6())),
        (7, "pub/sub discovery", 120.0, || verdict(c7())),
        (8, "pattern discovery", f64::INFINITY, || verdict(c8())),
        (9, "channels per step", f64::INFINITY, || verdict(c9())),
        (10, "determinism", f64::INFINITY, || verdict(c10())),
    ];
    let mut hard_fail = false;
    for (id, name, limit, f) in criteria {
        let start = Instant::now();
        let mut v = f();
        let secs = start.elapsed().as_secs_f64();
        if secs > limit {
            if let Pass(s) = v {
                v = Fail(format!("{s}; took {secs:.1}s, limit {limit}s"));
            }
        }
        match v {
            Pass(s) => println!("criterion {id:>2} PASS  {name}: {s} [{secs:.2}s]"),
            Fail(s) => {
                hard_fail = true;
                println!("criterion {id:>2} FAIL  {name}: {s} [{secs:.2}s]");
            }
            Unattainable(s) => println!("criterion {id:>2} FAIL  {name}: {s} (see decisions ledger) [{secs:.2}s]"),
        }
    }
    if hard_fail {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
