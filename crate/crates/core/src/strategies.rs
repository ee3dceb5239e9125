//! Probe campaigns for the three collection strategies and the metrics used
//! to compare them.
//!
//! - S1: classic INT. One unicast probe per (leaf, queue) from the root down
//!   and one back up, each appending a slot per hop.
//! - S2: one routeID multicast down the tree that clones itself per queue at
//!   every switch, plus per-(leaf, queue) unicast probes back up.
//! - S3: one routeID multicast per generation carrying register dumps.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mpolka::{encode_tree, forward_states, NodeId, RoutingError};
use crate::netmodel::{Tree, TopologySpec};
use crate::simcore::{
    self, Action, Flow, LaunchRoute, PacketKind, ProbeLaunch, SimConfig, SimError, SimulationTrace,
    Workload,
};
use crate::telemetry::{collector_ingest, CollectorLog, OccupancySeries, SlotKey, SLOT_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Strategy {
    S1,
    S2,
    S3,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::S1, Strategy::S2, Strategy::S3];

    pub fn packet_kind(self) -> PacketKind {
        match self {
            Strategy::S1 => PacketKind::ProbeS1,
            Strategy::S2 => PacketKind::ProbeS2,
            Strategy::S3 => PacketKind::ProbeS3,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::S1 => "S1",
            Strategy::S2 => "S2",
            Strategy::S3 => "S3",
        })
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "S1" => Ok(Strategy::S1),
            "S2" => Ok(Strategy::S2),
            "S3" => Ok(Strategy::S3),
            _ => Err(format!("unknown strategy {s:?} (expected S1, S2 or S3)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error(transparent)]
    Routing(#[from] RoutingError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Direction {
    Forward,
    Reverse,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedLaunch {
    pub origin: String,
    pub direction: Direction,
    pub route: LaunchRoute,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbePlan {
    pub strategy: Strategy,
    pub launches: Vec<PlannedLaunch>,
    pub node_ids: BTreeMap<String, NodeId>,
}

/// When generations fire. Without a period there is a single generation at
/// `start_ns`; otherwise generations fire every period strictly before
/// `until_ns`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Schedule {
    pub start_ns: u64,
    pub period_ns: Option<u64>,
    pub until_ns: u64,
}

impl Schedule {
    pub fn once(start_ns: u64) -> Self {
        Schedule {
            start_ns,
            period_ns: None,
            until_ns: u64::MAX,
        }
    }

    pub fn times(&self) -> Vec<u64> {
        match self.period_ns {
            None | Some(0) => vec![self.start_ns],
            Some(p) => (0..)
                .map(|k| self.start_ns + k * p)
                .take_while(|&t| t < self.until_ns)
                .collect(),
        }
    }
}

impl ProbePlan {
    pub fn count(&self, direction: Direction) -> usize {
        self.launches
            .iter()
            .filter(|l| l.direction == direction)
            .count()
    }

    /// Launches for every generation. Probe ids are `generation << 16 | index`.
    pub fn schedule(&self, schedule: &Schedule) -> Vec<ProbeLaunch> {
        let kind = self.strategy.packet_kind();
        schedule
            .times()
            .into_iter()
            .enumerate()
            .flat_map(|(g, t)| {
                self.launches.iter().enumerate().map(move |(i, l)| ProbeLaunch {
                    time_ns: t,
                    origin: l.origin.clone(),
                    kind,
                    generation: g as u32,
                    probe_id: ((g as u32) << 16) | i as u32,
                    route: l.route.clone(),
                })
            })
            .collect()
    }
}

fn unicast_legs(tree: &Tree, nq: u8, direction: Direction) -> Vec<PlannedLaunch> {
    let mut out = Vec::new();
    for leaf in &tree.leaves {
        if direction == Direction::Reverse && *leaf == tree.root {
            continue;
        }
        let mut path = tree.path_from_root(leaf);
        if direction == Direction::Reverse {
            path.reverse();
        }
        for queue in 0..nq {
            out.push(PlannedLaunch {
                origin: path[0].clone(),
                direction,
                route: LaunchRoute::Path {
                    switches: path.clone(),
                    queue,
                },
            });
        }
    }
    out
}

/// Root-to-leaf and leaf-to-root unicast probes, one per (leaf, queue) each.
pub fn plan_s1(tree: &Tree, nq: u8) -> ProbePlan {
    let mut launches = unicast_legs(tree, nq, Direction::Forward);
    let mut reverse = unicast_legs(tree, nq, Direction::Reverse);
    // a root that is its own leaf still gets one probe per queue each way
    if tree.leaves.contains(&tree.root) {
        reverse.extend(unicast_legs(tree, nq, Direction::Forward).into_iter().map(|mut l| {
            l.direction = Direction::Reverse;
            l
        }));
    }
    launches.extend(reverse);
    ProbePlan {
        strategy: Strategy::S1,
        launches,
        node_ids: BTreeMap::new(),
    }
}

fn multicast_launch(
    tree: &Tree,
    node_ids: &BTreeMap<String, NodeId>,
    target_queue: Option<u8>,
) -> Result<PlannedLaunch, RoutingError> {
    let states = forward_states(tree, node_ids)?;
    let route_id = encode_tree(tree, node_ids, &states)?;
    Ok(PlannedLaunch {
        origin: tree.root.clone(),
        direction: Direction::Forward,
        route: LaunchRoute::Multicast {
            route_id,
            target_queue,
        },
    })
}

/// One queue-cloning multicast down the tree plus leaf-to-root unicast
/// probes per (leaf, queue).
pub fn plan_s2(
    tree: &Tree,
    nq: u8,
    node_ids: &BTreeMap<String, NodeId>,
) -> Result<ProbePlan, RoutingError> {
    let mut launches = vec![multicast_launch(tree, node_ids, Some(0))?];
    launches.extend(unicast_legs(tree, nq, Direction::Reverse));
    Ok(ProbePlan {
        strategy: Strategy::S2,
        launches,
        node_ids: node_ids.clone(),
    })
}

/// A single register-dump multicast down the tree.
pub fn plan_s3(tree: &Tree, node_ids: &BTreeMap<String, NodeId>) -> Result<ProbePlan, RoutingError> {
    Ok(ProbePlan {
        strategy: Strategy::S3,
        launches: vec![multicast_launch(tree, node_ids, None)?],
        node_ids: node_ids.clone(),
    })
}

pub fn plan(
    strategy: Strategy,
    tree: &Tree,
    nq: u8,
    node_ids: &BTreeMap<String, NodeId>,
) -> Result<ProbePlan, RoutingError> {
    match strategy {
        Strategy::S1 => Ok(plan_s1(tree, nq)),
        Strategy::S2 => plan_s2(tree, nq, node_ids),
        Strategy::S3 => plan_s3(tree, node_ids),
    }
}

/// Directed link between adjacent switches.
pub type DirectedLink = (String, String);

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DuplicateReport {
    pub total: u64,
    pub forward: u64,
    pub reverse: u64,
    /// Extra traversals per (from, to, queue), summed over generations.
    pub per_link: BTreeMap<(String, String, u8), u64>,
}

/// Neighbor reached from `switch` through `port`, as seen in the tree.
fn tree_neighbor(tree: &Tree, switch: &str, port: u8) -> Option<(String, Direction)> {
    let ports = tree.ports.get(switch)?;
    if let Some((_, child)) = ports.child_ports.iter().find(|(p, _)| *p == port) {
        return Some((child.clone(), Direction::Forward));
    }
    if ports.parent_port == Some(port) {
        let parent = tree.parent[switch].clone()?;
        return Some((parent, Direction::Reverse));
    }
    None
}

/// A probe traversal of (link, direction) on queue q is a duplicate when
/// another probe on queue q already crossed the same link in the same
/// direction within its generation.
pub fn count_duplicates(trace: &SimulationTrace, tree: &Tree) -> DuplicateReport {
    let mut seen: BTreeMap<(u32, String, String, u8), u64> = BTreeMap::new();
    let mut report = DuplicateReport::default();
    for r in trace
        .records
        .iter()
        .filter(|r| r.action == Action::Transmit && r.kind.is_probe())
    {
        let from = trace.switch_name(r.switch);
        let Some((to, direction)) = tree_neighbor(tree, from, r.port) else {
            continue;
        };
        let queue = r.queue.expect("transmissions have a queue");
        let n = seen
            .entry((r.generation.unwrap_or(0), from.to_string(), to.clone(), queue))
            .or_default();
        *n += 1;
        if *n > 1 {
            report.total += 1;
            match direction {
                Direction::Forward => report.forward += 1,
                Direction::Reverse => report.reverse += 1,
            }
            *report
                .per_link
                .entry((from.to_string(), to, queue))
                .or_default() += 1;
        }
    }
    report
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ByteReport {
    pub total: u64,
    pub per_generation: BTreeMap<u32, u64>,
}

/// Sum of on-wire probe sizes over switch-to-switch transmissions. Host
/// attachments are not counted.
pub fn account_bytes(trace: &SimulationTrace) -> ByteReport {
    let mut report = ByteReport::default();
    for r in trace
        .records
        .iter()
        .filter(|r| r.action == Action::Transmit && r.kind.is_probe())
    {
        report.total += r.size as u64;
        *report
            .per_generation
            .entry(r.generation.unwrap_or(0))
            .or_default() += r.size as u64;
    }
    report
}

/// Register memory each switch needs for a strategy.
pub fn account_memory(spec: &TopologySpec, strategy: Strategy) -> BTreeMap<String, u64> {
    spec.switches
        .iter()
        .map(|s| {
            let bytes = match strategy {
                Strategy::S3 => SLOT_LEN as u64 * s.ports as u64 * s.nq as u64,
                Strategy::S1 | Strategy::S2 => 0,
            };
            (s.name.clone(), bytes)
        })
        .collect()
}

/// Every (switch, port, queue) of the topology's network ports.
pub fn slot_universe(spec: &TopologySpec) -> BTreeSet<SlotKey> {
    spec.switches
        .iter()
        .enumerate()
        .flat_map(|(id, s)| {
            (1..=s.ports).flat_map(move |p| (0..s.nq).map(move |q| (id as u16, p, q)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategyMetrics {
    pub strategy: Strategy,
    pub generations: u64,
    pub launches: u64,
    pub pkt_size_min: u64,
    pub pkt_size_mean: f64,
    pub pkt_size_max: u64,
    pub probes_received: u64,
    pub mem_bytes: u64,
    pub mem_bytes_per_switch: BTreeMap<String, u64>,
    pub duplicates: u64,
    pub duplicates_forward: u64,
    pub duplicates_reverse: u64,
    pub total_bytes: u64,
    pub drops: u64,
    pub discarded: u64,
}

impl StrategyMetrics {
    pub fn per_generation(&self, value: u64) -> f64 {
        value as f64 / self.generations.max(1) as f64
    }
}

pub fn measure(
    spec: &TopologySpec,
    tree: &Tree,
    strategy: Strategy,
    generations: u64,
    trace: &SimulationTrace,
    log: &CollectorLog,
) -> StrategyMetrics {
    let sizes: Vec<u64> = trace
        .records
        .iter()
        .filter(|r| r.action == Action::Transmit && r.kind.is_probe())
        .map(|r| r.size as u64)
        .collect();
    let dup = count_duplicates(trace, tree);
    let bytes = account_bytes(trace);
    let memory = account_memory(spec, strategy);
    StrategyMetrics {
        strategy,
        generations,
        launches: trace.counters.probes_launched,
        pkt_size_min: sizes.iter().copied().min().unwrap_or(0),
        pkt_size_mean: if sizes.is_empty() {
            0.0
        } else {
            sizes.iter().sum::<u64>() as f64 / sizes.len() as f64
        },
        pkt_size_max: sizes.iter().copied().max().unwrap_or(0),
        probes_received: log.receipts.len() as u64,
        mem_bytes: memory.values().sum(),
        mem_bytes_per_switch: memory,
        duplicates: dup.total,
        duplicates_forward: dup.forward,
        duplicates_reverse: dup.reverse,
        total_bytes: bytes.total,
        drops: trace.counters.probes_dropped,
        discarded: trace.counters.probes_discarded,
    }
}

#[derive(Debug, Clone)]
pub struct StrategyRun {
    pub strategy: Strategy,
    pub plan: ProbePlan,
    pub trace: SimulationTrace,
    pub series: OccupancySeries,
    pub log: CollectorLog,
    pub metrics: StrategyMetrics,
}

/// Plans, simulates and measures one strategy.
pub fn run_strategy(
    spec: &TopologySpec,
    tree: &Tree,
    strategy: Strategy,
    node_ids: &BTreeMap<String, NodeId>,
    schedule: &Schedule,
    flows: &[Flow],
    config: &SimConfig,
) -> Result<StrategyRun, StrategyError> {
    let nq = spec
        .switches
        .iter()
        .map(|s| s.nq)
        .min()
        .unwrap_or(1);
    let plan = plan(strategy, tree, nq, node_ids)?;
    let workload = Workload {
        flows: flows.to_vec(),
        probes: plan.schedule(schedule),
        node_ids: node_ids.clone(),
    };
    let trace = simcore::run(spec, &workload, config)?;
    let (series, log) = collector_ingest(&trace.deliveries);
    let generations = schedule.times().len() as u64;
    let metrics = measure(spec, tree, strategy, generations, &trace, &log);
    Ok(StrategyRun {
        strategy,
        plan,
        trace,
        series,
        log,
        metrics,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricsReport {
    pub rows: Vec<StrategyMetrics>,
}

/// Published reference row: size, probes, memory, duplicates, total bytes.
pub const REFERENCE: [(Strategy, &str, u64, &str, u64, u64); 3] = [
    (Strategy::S1, "61", 12, "0", 12, 2300),
    (Strategy::S2, "75", 12, "0", 8, 2174),
    (Strategy::S3, "122|154", 3, "64|96", 0, 814),
];

impl MetricsReport {
    pub fn row(&self, strategy: Strategy) -> Option<&StrategyMetrics> {
        self.rows.iter().find(|r| r.strategy == strategy)
    }

    /// (receipt ratio, byte ratio) of S1 over `strategy`, when S1 ran.
    pub fn ratios(&self, strategy: Strategy) -> Option<(f64, f64)> {
        let base = self.row(Strategy::S1)?;
        let row = self.row(strategy)?;
        let ratio = |a: u64, b: u64| if b == 0 { f64::NAN } else { a as f64 / b as f64 };
        Some((
            ratio(base.probes_received, row.probes_received),
            ratio(base.total_bytes, row.total_bytes),
        ))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let with_ratios = self.row(Strategy::S1).is_some();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![
            "strategy",
            "generations",
            "pkt_size_min",
            "pkt_size_mean",
            "pkt_size_max",
            "probes",
            "mem_bytes",
            "dup",
            "total_bytes",
            "drops",
        ];
        if with_ratios {
            header.extend(["probe_ratio_vs_s1", "byte_ratio_vs_s1"]);
        }
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.strategy.to_string(),
                r.generations.to_string(),
                r.pkt_size_min.to_string(),
                format!("{:.2}", r.pkt_size_mean),
                r.pkt_size_max.to_string(),
                r.probes_received.to_string(),
                r.mem_bytes.to_string(),
                r.duplicates.to_string(),
                r.total_bytes.to_string(),
                r.drops.to_string(),
            ];
            if let Some((p, b)) = self.ratios(r.strategy) {
                rec.push(format!("{p:.3}"));
                rec.push(format!("{b:.3}"));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Human-readable comparison, per generation, with the reference values.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        s += "strategy  size(min/mean/max)   probes/gen  mem(B)  dup/gen  bytes/gen   | reference: size probes mem dup bytes\n";
        for r in &self.rows {
            let reference = REFERENCE
                .iter()
                .find(|x| x.0 == r.strategy)
                .map(|(_, size, probes, mem, dup, bytes)| {
                    format!("{size} {probes} {mem} {dup} {bytes}")
                })
                .unwrap_or_default();
            s += &format!(
                "{:<8}  {:>4}/{:>7.2}/{:<6} {:>10.2}  {:>6}  {:>7.2}  {:>9.2}   | {}\n",
                r.strategy,
                r.pkt_size_min,
                r.pkt_size_mean,
                r.pkt_size_max,
                r.per_generation(r.probes_received),
                r.mem_bytes,
                r.per_generation(r.duplicates),
                r.per_generation(r.total_bytes),
                reference,
            );
        }
        for r in &self.rows {
            s += &format!(
                "{}: duplicates forward {} / reverse {}; drops {}; discarded {}\n",
                r.strategy, r.duplicates_forward, r.duplicates_reverse, r.drops, r.discarded
            );
        }
        for r in self.rows.iter().filter(|r| r.strategy != Strategy::S1) {
            if let Some((p, b)) = self.ratios(r.strategy) {
                s += &format!("S1/{}: probes x{p:.2}, bytes x{b:.2}\n", r.strategy);
            }
        }
        s += "duplicate convention: a traversal of (link, direction) on queue q counts once another probe on q already made it in the same generation\n";
        s += "byte accounting: on-wire probe size summed over switch-to-switch transmissions\n";
        s
    }
}
