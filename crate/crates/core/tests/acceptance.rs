//! Acceptance criteria 1-11. Each test prints one PASS/FAIL line straight to
//! stdout, so the verdicts show up even when libtest captures output.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mmint::cli::{run_experiment, write_artifacts, Experiment, Outcome};
use mmint::gf2poly::{crt_combine, enumerate_irreducibles, Poly};
use mmint::mpolka::{
    assign_node_ids, compute_t_state, encode_tree, forward_states, NodeId, RouteId, TState,
};
use mmint::netmodel::{load_topology, load_topology_file, random_tree, to_tree, TopologySpec, Tree};
use mmint::simcore::{Action, PacketKind, SimConfig, SimulationTrace};
use mmint::strategies::{
    account_memory, plan_s1, run_strategy, Schedule, Strategy, StrategyMetrics, StrategyRun,
};
use mmint::telemetry::parse_probe;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn verdict(n: u32, title: &str, ok: bool, detail: &str) {
    let word = if ok { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "criterion {n:>2} {word}: {title} ({detail})").unwrap();
    assert!(ok, "criterion {n} failed: {detail}");
}

/// Per-queue conservation recomputed from the end-of-run queue reports, on
/// top of the simulator's own per-event checks.
fn conserved(trace: &SimulationTrace) -> Result<(), String> {
    if trace.invariant_checks == 0 {
        return Err("no invariant checks ran".into());
    }
    if let Some(v) = trace.violations.first() {
        return Err(format!("{} violations, first: {v}", trace.violations.len()));
    }
    for q in &trace.queues {
        if q.enqueued != q.dequeued + q.dropped + q.resident {
            return Err(format!("{} port {} q{} does not balance", q.switch, q.port, q.queue));
        }
    }
    Ok(())
}

fn bundled() -> (TopologySpec, BTreeMap<String, NodeId>) {
    let spec = load_topology_file(data("paper-topology.toml")).unwrap();
    let ids = assign_node_ids(&spec).unwrap();
    (spec, ids)
}

fn once(spec: &TopologySpec, tree: &Tree, ids: &BTreeMap<String, NodeId>, s: Strategy) -> StrategyRun {
    let run = run_strategy(spec, tree, s, ids, &Schedule::once(0), &[], &SimConfig::default()).unwrap();
    conserved(&run.trace).unwrap();
    run
}

fn table2() -> Outcome {
    let exp = Experiment::load(&data("paper-table2.toml")).unwrap();
    run_experiment(&exp, exp.config.seed, 0).unwrap()
}

fn row(outcome: &Outcome, s: Strategy) -> &StrategyMetrics {
    outcome.report.row(s).unwrap()
}

fn random_nq(rng: &mut ChaCha8Rng) -> u8 {
    [1u8, 2, 4, 8][rng.random_range(0..4)]
}

#[test]
fn c01_probe_counts() {
    let start = Instant::now();
    let outcome = table2();
    let elapsed = start.elapsed().as_secs_f64();
    for r in &outcome.runs {
        conserved(&r.trace).unwrap();
    }
    let got: Vec<u64> = Strategy::ALL
        .iter()
        .map(|&s| row(&outcome, s).per_generation(row(&outcome, s).probes_received) as u64)
        .collect();
    let ok = got == [12, 12, 3] && elapsed < 5.0;
    verdict(
        1,
        "probe counts per generation",
        ok,
        &format!("S1/S2/S3 = {}/{}/{}, expected 12/12/3, runtime {elapsed:.2}s", got[0], got[1], got[2]),
    );
}

#[test]
fn c02_probe_reduction() {
    let outcome = table2();
    let s1 = row(&outcome, Strategy::S1).probes_received;
    let s3 = row(&outcome, Strategy::S3).probes_received;
    let ok = s3 > 0 && s1 == 4 * s3;
    verdict(2, "receipts S1/S3 = 4", ok, &format!("{s1}/{s3}"));
}

#[test]
fn c03_s1_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xc03);
    let mut bad = Vec::new();
    for i in 0..100 {
        let n = rng.random_range(2..=20);
        let nq = random_nq(&mut rng);
        let spec = random_tree(&mut rng, n, nq);
        let tree = to_tree(&spec, "S00").unwrap();
        // leaves counted from the link list, independent of the tree builder
        let mut degree = BTreeMap::<&str, usize>::new();
        for l in &spec.links {
            *degree.entry(l.a.switch.as_str()).or_default() += 1;
            *degree.entry(l.b.switch.as_str()).or_default() += 1;
        }
        let lf = spec
            .switches
            .iter()
            .filter(|s| s.name != "S00" && degree.get(s.name.as_str()) == Some(&1))
            .count();
        let expected = lf * nq as usize * 2;
        let got = plan_s1(&tree, nq).launches.len();
        if got != expected {
            bad.push(format!("tree {i}: {got} != {expected}"));
        }
    }
    verdict(3, "S1 launches = lf*nq*2 on 100 random trees", bad.is_empty(), &format!("{} mismatches {bad:?}", bad.len()));
}

/// Slots on an S3 probe leaving `sw` through `port`: the register dumps of
/// every switch along the chain of lowest-numbered child ports that ends
/// here, or nothing when `port` is not the lowest child port.
fn s3_slots_oracle(spec: &TopologySpec, tree: &Tree, sw: &str, port: u8) -> usize {
    let lowest = |s: &str| tree.ports[s].child_ports.iter().map(|(p, _)| *p).min();
    if lowest(sw) != Some(port) {
        return 0;
    }
    let mut total = 0;
    let mut cur = sw.to_string();
    loop {
        let s = spec.switch(&cur).unwrap();
        total += s.ports as usize * s.nq as usize;
        let Some(parent) = tree.parent[&cur].clone() else { break };
        let via = tree.ports[&parent]
            .child_ports
            .iter()
            .find(|(_, c)| *c == cur)
            .unwrap()
            .0;
        if lowest(&parent) != Some(via) {
            break;
        }
        cur = parent;
    }
    total
}

fn check_size_law(spec: &TopologySpec, tree: &Tree, trace: &SimulationTrace, errors: &mut Vec<String>) -> usize {
    let mut checked = 0;
    for r in trace.records.iter().filter(|r| r.kind == PacketKind::ProbeS3) {
        let Some(slots) = r.slots else { continue };
        if r.size != 58 + 16 * slots {
            errors.push(format!("size {} with {slots} slots", r.size));
        }
        if r.action == Action::Transmit {
            let sw = trace.switch_name(r.switch);
            let want = s3_slots_oracle(spec, tree, sw, r.port);
            if slots != want {
                errors.push(format!("{sw} port {}: {slots} slots, oracle {want}", r.port));
            }
        }
        checked += 1;
    }
    for d in &trace.deliveries {
        let p = parse_probe(&d.bytes).unwrap();
        if d.bytes.len() != 58 + 16 * p.slots().len() {
            errors.push(format!("delivered {} bytes with {} slots", d.bytes.len(), p.slots().len()));
        }
        checked += 1;
    }
    checked
}

#[test]
fn c04_probe_sizing() {
    let (spec, ids) = bundled();
    let mut errors = Vec::new();
    let mut checked = 0;
    let mut leaving_root = BTreeMap::new();
    for root in ["SW1", "SW6"] {
        let tree = to_tree(&spec, root).unwrap();
        let run = once(&spec, &tree, &ids, Strategy::S3);
        checked += check_size_law(&spec, &tree, &run.trace, &mut errors);
        let sw = run.trace.switch_names.iter().position(|n| n == root).unwrap() as u16;
        let sizes: BTreeSet<usize> = run
            .trace
            .records
            .iter()
            .filter(|r| r.action == Action::Transmit && r.switch == sw && r.slots.unwrap_or(0) > 0)
            .map(|r| r.size)
            .collect();
        leaving_root.insert(root, sizes);
    }
    // loaded run: queues and data traffic must not disturb the law
    let exp = Experiment::load(&data("paper-fig7.toml")).unwrap();
    let mut short = exp.clone();
    short.config.duration_us = 200_000;
    let outcome = run_experiment(&short, 7, 0).unwrap();
    checked += check_size_law(&exp.spec, &exp.tree, &outcome.runs[0].trace, &mut errors);

    let mut rng = ChaCha8Rng::seed_from_u64(0xc04);
    for _ in 0..20 {
        let n = rng.random_range(2..=20);
        let nq = random_nq(&mut rng);
        let spec = random_tree(&mut rng, n, nq);
        let tree = to_tree(&spec, "S00").unwrap();
        let ids = assign_node_ids(&spec).unwrap();
        let run = once(&spec, &tree, &ids, Strategy::S3);
        checked += check_size_law(&spec, &tree, &run.trace, &mut errors);
    }
    let two = leaving_root["SW1"].clone();
    let three = leaving_root["SW6"].clone();
    let ok = errors.is_empty()
        && two == BTreeSet::from([122])
        && three == BTreeSet::from([154]);
    verdict(
        4,
        "S3 probe size = 58 + 16*slots",
        ok,
        &format!("2-port root {two:?}, 3-port root {three:?}, {checked} events checked, {} errors {:?}", errors.len(), errors.iter().take(3).collect::<Vec<_>>()),
    );
}

#[test]
fn c05_register_memory() {
    let (mut spec, _) = bundled();
    let mem = account_memory(&spec, Strategy::S3);
    let (sw1, sw6) = (mem["SW1"], mem["SW6"]);
    spec.switches[0].ports = 32;
    spec.switches[0].nq = 128;
    let big = account_memory(&spec, Strategy::S3)["SW1"];
    let ok = (sw1, sw6, big) == (64, 96, 65536);
    verdict(5, "register memory 16*ports*nq", ok, &format!("2 ports {sw1}, 3 ports {sw6}, 32x128 {big}"));
}

/// Extra traversals of the same directed link on the same queue within a
/// generation, computed from the raw trace.
fn raw_duplicates(trace: &SimulationTrace, spec: &TopologySpec) -> BTreeMap<(String, String, u8), u64> {
    let mut peer = BTreeMap::new();
    for l in &spec.links {
        peer.insert((l.a.switch.clone(), l.a.port), l.b.switch.clone());
        peer.insert((l.b.switch.clone(), l.b.port), l.a.switch.clone());
    }
    let mut seen = BTreeMap::<(u32, String, String, u8), u64>::new();
    for r in trace.records.iter().filter(|r| r.action == Action::Transmit && r.kind.is_probe()) {
        let from = trace.switch_name(r.switch).to_string();
        let Some(to) = peer.get(&(from.clone(), r.port)) else { continue };
        *seen
            .entry((r.generation.unwrap(), from, to.clone(), r.queue.unwrap()))
            .or_default() += 1;
    }
    let mut out = BTreeMap::new();
    for ((_, a, b, q), n) in seen {
        if n > 1 {
            *out.entry((a, b, q)).or_default() += n - 1;
        }
    }
    out
}

#[test]
fn c06_no_duplicates_for_s3() {
    let (spec, ids) = bundled();
    let tree = to_tree(&spec, "SW1").unwrap();
    let run = once(&spec, &tree, &ids, Strategy::S3);
    let mut totals = vec![(run.metrics.duplicates, raw_duplicates(&run.trace, &spec).len())];
    let mut rng = ChaCha8Rng::seed_from_u64(0xc06);
    for _ in 0..50 {
        let n = rng.random_range(2..=20);
        let nq = random_nq(&mut rng);
        let spec = random_tree(&mut rng, n, nq);
        let tree = to_tree(&spec, "S00").unwrap();
        let ids = assign_node_ids(&spec).unwrap();
        let run = once(&spec, &tree, &ids, Strategy::S3);
        totals.push((run.metrics.duplicates, raw_duplicates(&run.trace, &spec).len()));
    }
    let nonzero = totals.iter().filter(|t| **t != (0, 0)).count();
    verdict(6, "S3 duplicates = 0 on the bundled tree + 50 random trees", nonzero == 0, &format!("{nonzero} of {} runs with duplicates", totals.len()));
}

#[test]
fn c07_duplicate_ordering() {
    let (spec, ids) = bundled();
    let tree = to_tree(&spec, "SW1").unwrap();
    let runs: Vec<StrategyRun> = Strategy::ALL.iter().map(|&s| once(&spec, &tree, &ids, s)).collect();
    let d: Vec<u64> = runs.iter().map(|r| r.metrics.duplicates).collect();
    let raw: Vec<u64> = runs.iter().map(|r| raw_duplicates(&r.trace, &spec).values().sum()).collect();
    let forward: BTreeMap<(String, String, u8), u64> = raw_duplicates(&runs[0].trace, &spec)
        .into_iter()
        .filter(|((a, b, _), _)| tree.parent[b].as_deref() == Some(a.as_str()))
        .collect();
    let fwd_total: u64 = forward.values().sum();
    let fwd_links: BTreeSet<(String, String)> = forward.keys().map(|(a, b, _)| (a.clone(), b.clone())).collect();
    let want_links = BTreeSet::from([
        ("SW1".to_string(), "SW2".to_string()),
        ("SW2".to_string(), "SW6".to_string()),
    ]);
    let ok = d == raw
        && d[0] >= d[1]
        && d[1] > d[2]
        && d[2] == 0
        && runs[0].metrics.duplicates_forward == 4
        && fwd_total == 4
        && fwd_links == want_links;
    let mut detail = format!("S1/S2/S3 = {}/{}/{} (reference 12/8/0), S1 forward {fwd_total} on", d[0], d[1], d[2]);
    for (a, b) in &fwd_links {
        write!(detail, " {a}-{b}").unwrap();
    }
    detail += "; counted per (generation, link, direction, queue), each extra path over a link adds nq";
    verdict(7, "duplicate ordering S1 >= S2 > S3 = 0", ok, &detail);
}

#[test]
fn c08_byte_totals() {
    let outcome = table2();
    let b: Vec<f64> = Strategy::ALL
        .iter()
        .map(|&s| row(&outcome, s).per_generation(row(&outcome, s).total_bytes))
        .collect();
    let (s1, s2, s3) = (b[0], b[1], b[2]);
    let ok = s3 < s2 && s2 <= s1 && (s3 - 814.0).abs() <= 0.05 * 814.0 && s1 / s3 >= 2.0;
    verdict(
        8,
        "byte totals",
        ok,
        &format!("S1/S2/S3 = {s1}/{s2}/{s3} (reference 2300/2174/814), S3 off by {:+.2}%, S1/S3 = {:.3}", 100.0 * (s3 - 814.0) / 814.0, s1 / s3),
    );
}

/// Connected random graph: a random tree plus up to n/2 extra links, which
/// may close cycles or duplicate an existing adjacency.
fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> TopologySpec {
    let mut doc = String::from("root = \"G00\"\n");
    for i in 0..n {
        doc += &format!("[[switches]]\nname = \"G{i:02}\"\nnq = 1\n");
    }
    let mut links: Vec<(usize, usize)> = (1..n).map(|i| (rng.random_range(0..i), i)).collect();
    for _ in 0..rng.random_range(0..=n / 2) {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b {
            links.push((a, b));
        }
    }
    links.shuffle(rng);
    for (a, b) in links {
        doc += &format!("[[links]]\na = \"G{a:02}\"\nb = \"G{b:02}\"\n");
    }
    load_topology(&doc).unwrap()
}

fn poly_rem_naive(a: u64, m: u64) -> u64 {
    let dm = 63 - m.leading_zeros();
    let mut a = a;
    while a != 0 && 63 - a.leading_zeros() >= dm {
        a ^= m << (63 - a.leading_zeros() - dm);
    }
    a
}

#[test]
fn c09_routing_correctness() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xc09);
    let mut failures = Vec::new();
    let mut decoded = 0;
    for i in 0..200 {
        let n = rng.random_range(1..=20);
        let spec = if i % 2 == 0 {
            random_graph(&mut rng, n)
        } else {
            random_tree(&mut rng, n, 1)
        };
        let root = spec.switches[rng.random_range(0..n)].name.clone();
        let tree = to_tree(&spec, &root).unwrap();
        let ids = assign_node_ids(&spec).unwrap();
        let mut cases = vec![forward_states(&tree, &ids).unwrap()];
        let random: BTreeMap<String, TState> = tree
            .order
            .iter()
            .map(|sw| {
                let ports = spec.switch(sw).unwrap().ports;
                let pick: Vec<u8> = (0..=ports).filter(|_| rng.random_bool(0.5)).collect();
                (sw.clone(), TState::from_ports(ids[sw].degree(), pick).unwrap())
            })
            .collect();
        cases.push(random);
        for states in cases {
            let route = encode_tree(&tree, &ids, &states).unwrap();
            let route = RouteId::from_bytes(&route.to_bytes());
            for sw in &tree.order {
                decoded += 1;
                if compute_t_state(&route, &ids[sw]) != states[sw] {
                    failures.push(format!("instance {i} {sw}"));
                }
            }
        }
    }

    // exhaustive CRT check over every candidate below the modulus product
    let mut crt_systems = 0;
    let mut crt_failures = Vec::new();
    // pool of irreducibles up to degree 6 by trial division
    let irreducibles: Vec<u64> = (2u64..128)
        .filter(|&m| (2..m).filter(|&d| 2 * (63 - d.leading_zeros()) <= 63 - m.leading_zeros()).all(|d| poly_rem_naive(m, d) != 0))
        .collect();
    let library: Vec<u64> = (1..=6)
        .flat_map(|d| enumerate_irreducibles(d, 1).unwrap())
        .map(|p| p.to_u64().unwrap())
        .collect();
    assert!(library.iter().all(|m| irreducibles.contains(m)));
    let deg = |m: u64| 63 - m.leading_zeros() as usize;
    for _ in 0..300 {
        let mut pool = irreducibles.clone();
        pool.shuffle(&mut rng);
        let mut moduli = Vec::new();
        let mut total = 0;
        for m in pool {
            if total + deg(m) <= 12 && rng.random_bool(0.6) {
                total += deg(m);
                moduli.push(m);
            }
        }
        if moduli.is_empty() {
            continue;
        }
        let residues: Vec<u64> = moduli.iter().map(|&m| rng.random_range(0..1u64 << deg(m))).collect();
        let system: Vec<(Poly, Poly)> = moduli
            .iter()
            .zip(&residues)
            .map(|(&m, &r)| (Poly::from_u64(m), Poly::from_u64(r)))
            .collect();
        let got = crt_combine(&system).unwrap().to_u64().unwrap();
        let solutions: Vec<u64> = (0..1u64 << total)
            .filter(|&x| moduli.iter().zip(&residues).all(|(&m, &r)| poly_rem_naive(x, m) == r))
            .collect();
        crt_systems += 1;
        if solutions != [got] {
            crt_failures.push(format!("{moduli:?} {residues:?}: got {got}, brute force {solutions:?}"));
        }
    }
    let ok = failures.is_empty() && crt_failures.is_empty() && crt_systems > 100;
    verdict(
        9,
        "routeID decodes to the intended t_state",
        ok,
        &format!("{decoded} decodes over 200 instances, {} wrong; {crt_systems} CRT systems brute-forced, {} wrong", failures.len(), crt_failures.len()),
    );
}

#[test]
fn c10_functional_run() {
    let exp = Experiment::load(&data("paper-fig7.toml")).unwrap();
    let outcome = run_experiment(&exp, exp.config.seed, 0).unwrap();
    let run = &outcome.runs[0];
    conserved(&run.trace).unwrap();
    let sw1 = exp.spec.switches.iter().position(|s| s.name == "SW1").unwrap() as u16;
    let s = exp.spec.switch("SW1").unwrap();
    let mut ok = true;
    let mut detail = String::new();
    for port in 1..=s.ports {
        for q in 0..s.nq {
            let samples = run.series.samples((sw1, port, q));
            let busy = samples.iter().filter(|x| x.enq_qdepth > 0).count();
            ok &= samples.len() >= 50 && busy > 0;
            write!(detail, "p{port}q{q} {}/{busy} ", samples.len()).unwrap();
        }
    }
    detail += "samples/with enq_qdepth > 0";
    verdict(10, "SW1 occupancy series under load", ok, &detail);
}

fn artifacts(outcome: &Outcome) -> BTreeMap<PathBuf, Vec<u8>> {
    let tmp = tempfile::tempdir().unwrap();
    let files = write_artifacts(outcome, tmp.path()).unwrap();
    files
        .into_iter()
        .map(|f| (f.strip_prefix(tmp.path()).unwrap().to_path_buf(), fs::read(&f).unwrap()))
        .collect()
}

#[test]
fn c11_determinism_and_conservation() {
    let mut problems = Vec::new();
    let mut traces = 0;
    let mut files = 0;
    for cfg in ["paper-table2.toml", "paper-fig7.toml"] {
        let exp = Experiment::load(&data(cfg)).unwrap();
        let a = run_experiment(&exp, exp.config.seed, 0).unwrap();
        let b = run_experiment(&exp, exp.config.seed, 0).unwrap();
        let (fa, fb) = (artifacts(&a), artifacts(&b));
        files += fa.len();
        if fa != fb {
            problems.push(format!("{cfg}: artifacts differ"));
        }
        for r in a.runs.iter().chain(&b.runs) {
            traces += 1;
            if let Err(e) = conserved(&r.trace) {
                problems.push(format!("{cfg} {}: {e}", r.strategy));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0xc11);
    for _ in 0..20 {
        let n = rng.random_range(2..=20);
        let nq = random_nq(&mut rng);
        let spec = random_tree(&mut rng, n, nq);
        let tree = to_tree(&spec, "S00").unwrap();
        let ids = assign_node_ids(&spec).unwrap();
        for s in Strategy::ALL {
            let run = run_strategy(&spec, &tree, s, &ids, &Schedule::once(0), &[], &SimConfig::default()).unwrap();
            traces += 1;
            if let Err(e) = conserved(&run.trace) {
                problems.push(format!("random {s}: {e}"));
            }
        }
    }
    verdict(
        11,
        "determinism and per-queue conservation",
        problems.is_empty(),
        &format!("{files} artifacts compared, {traces} traces checked, problems {problems:?}"),
    );
}
