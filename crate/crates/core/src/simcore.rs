//! Deterministic discrete-event simulation of switches with multi-queue
//! egress ports, per-queue telemetry registers and the probe pipeline.
//!
//! Port 0 of every switch is the host port. It has no queues: packets from
//! hosts enter the ingress pipeline directly and deliveries to hosts are
//! immediate. Network ports 1..=ports each own `nq` drop-tail queues served
//! by weighted round robin.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::io::{self, Write};
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::Serialize;
use thiserror::Error;

use crate::mpolka::{active_ports, compute_t_state, NodeId, RouteId, RoutingError};
use crate::netmodel::TopologySpec;
use crate::telemetry::{
    dump_registers, serialize_probe, switch_mac, Delivery, IntProbe, Probe, RegisterFile, SrProbe,
    TelemetrySlot, BROADCAST_MAC, INT_INSTRUCTIONS, INT_VERSION, PROBE_TOS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum PacketKind {
    Data,
    ProbeS1,
    ProbeS2,
    ProbeS3,
}

impl PacketKind {
    pub fn is_probe(self) -> bool {
        self != PacketKind::Data
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Action {
    Inject,
    Enqueue,
    Drop,
    Transmit,
    Arrive,
    Deliver,
    Discard,
    RegisterRead,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unknown switch {0:?}")]
    UnknownSwitch(String),
    #[error("unknown host {0:?}")]
    UnknownHost(String),
    #[error("no path from {from} to {to}")]
    NoPath { from: String, to: String },
    #[error("{0} and {1} are not adjacent")]
    NotAdjacent(String, String),
    #[error("no nodeID for switch {0}")]
    MissingNodeId(String),
    #[error("data flow {0} uses the probe TOS value")]
    ProbeTosOnData(usize),
    #[error("invalid flow {index}: {reason}")]
    InvalidFlow { index: usize, reason: String },
    #[error("invalid probe launch {index}: {reason}")]
    InvalidLaunch { index: usize, reason: String },
    #[error(transparent)]
    Routing(#[from] RoutingError),
}

/// A Poisson stream of data packets between two hosts.
#[derive(Debug, Clone, PartialEq)]
pub struct Flow {
    pub source: String,
    pub sink: String,
    pub rate_pps: f64,
    pub packet_size: usize,
    pub tos: u8,
    pub start_ns: u64,
    pub stop_ns: Option<u64>,
    pub max_packets: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LaunchRoute {
    /// Unicast along consecutive adjacent switches, pinned to one queue.
    Path { switches: Vec<String>, queue: u8 },
    /// Forwarded by routeID. `target_queue` is set for queue-cloning probes.
    Multicast {
        route_id: RouteId,
        target_queue: Option<u8>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeLaunch {
    pub time_ns: u64,
    pub origin: String,
    pub kind: PacketKind,
    pub generation: u32,
    pub probe_id: u32,
    pub route: LaunchRoute,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Workload {
    pub flows: Vec<Flow>,
    pub probes: Vec<ProbeLaunch>,
    pub node_ids: BTreeMap<String, NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimConfig {
    pub seed: u64,
    pub until_ns: u64,
    pub verify_invariants: bool,
    /// Delay between successive clones of one probe.
    pub recirculation_ns: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 1,
            until_ns: 1_000_000_000,
            verify_invariants: true,
            recirculation_ns: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub time_ns: u64,
    pub switch: u16,
    pub port: u8,
    pub queue: Option<u8>,
    pub kind: PacketKind,
    pub size: usize,
    pub action: Action,
    pub packet: u64,
    pub probe_id: Option<u32>,
    pub generation: Option<u32>,
    pub slots: Option<usize>,
    /// Age of the oldest register slot at a register read.
    pub staleness_ns: Option<u64>,
}

#[derive(Serialize)]
struct TraceLine<'a> {
    time_us: f64,
    switch: &'a str,
    port: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    queue: Option<u8>,
    kind: PacketKind,
    size: usize,
    action: Action,
    packet: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    probe_id: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    generation: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    slots: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    staleness_us: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct QueueReport {
    pub switch: String,
    pub port: u8,
    pub queue: u8,
    pub enqueued: u64,
    pub dequeued: u64,
    pub dropped: u64,
    pub resident: u64,
    pub max_depth: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PacketCounters {
    pub created: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub discarded: u64,
    /// Probes replaced by their clones.
    pub consumed: u64,
    pub data_injected: u64,
    pub data_delivered: u64,
    pub data_dropped: u64,
    pub probes_launched: u64,
    pub probes_delivered: u64,
    pub probes_dropped: u64,
    pub probes_discarded: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimulationTrace {
    pub switch_names: Vec<String>,
    pub records: Vec<TraceRecord>,
    pub deliveries: Vec<Delivery>,
    pub queues: Vec<QueueReport>,
    pub counters: PacketCounters,
    pub end_ns: u64,
    pub invariant_checks: u64,
    pub violations: Vec<String>,
}

impl SimulationTrace {
    pub fn switch_name(&self, id: u16) -> &str {
        &self.switch_names[id as usize]
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for r in &self.records {
            let line = TraceLine {
                time_us: r.time_ns as f64 / 1000.0,
                switch: self.switch_name(r.switch),
                port: r.port,
                queue: r.queue,
                kind: r.kind,
                size: r.size,
                action: r.action,
                packet: r.packet,
                probe_id: r.probe_id,
                generation: r.generation,
                slots: r.slots,
                staleness_us: r.staleness_ns.map(|s| s as f64 / 1000.0),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = Vec::new();
        self.write_jsonl(&mut out).expect("writing to memory");
        String::from_utf8(out).expect("json is utf-8")
    }
}

#[derive(Debug, Clone)]
enum Route {
    /// Switch indices and the position of the current switch.
    Path { hops: Rc<[usize]>, at: usize },
    Multicast,
}

#[derive(Debug, Clone)]
pub struct Packet {
    pub id: u64,
    pub kind: PacketKind,
    pub size: usize,
    pub flow: Option<usize>,
    pub tos: u8,
    pub created_ns: u64,
    pub header: Option<Probe>,
    pub generation: u32,
    route: Route,
    pin: Option<u8>,
    dump_on_egress: bool,
    enq_ns: u64,
    enq_depth: u32,
}

impl Packet {
    fn probe_id(&self) -> Option<u32> {
        self.header.as_ref().map(Probe::probe_id)
    }

    fn slot_count(&self) -> Option<usize> {
        self.header.as_ref().map(|h| h.slots().len())
    }

    fn resize(&mut self) {
        if let Some(h) = &self.header {
            self.size = h.wire_len();
        }
    }
}

/// Queue chosen by the traffic manager. Data maps its TOS onto the queues;
/// probes go to their pinned queue or to queue 0.
pub fn classify_queue(tos: u8, pinned: Option<u8>, nq: u8) -> u8 {
    if tos == PROBE_TOS {
        pinned.unwrap_or(0)
    } else {
        tos % nq
    }
}

/// Drop-tail FIFO with conservation counters. `enqueued` counts every packet
/// offered, including those dropped.
#[derive(Debug, Clone)]
pub struct QueueState {
    fifo: VecDeque<Packet>,
    pub capacity: u32,
    pub weight: u32,
    pub enqueued: u64,
    pub dequeued: u64,
    pub dropped: u64,
    pub max_depth: u32,
}

impl QueueState {
    pub fn new(capacity: u32, weight: u32) -> Self {
        QueueState {
            fifo: VecDeque::new(),
            capacity,
            weight,
            enqueued: 0,
            dequeued: 0,
            dropped: 0,
            max_depth: 0,
        }
    }

    pub fn depth(&self) -> u32 {
        self.fifo.len() as u32
    }

    pub fn is_empty(&self) -> bool {
        self.fifo.is_empty()
    }

    pub fn offer(&mut self, packet: Packet) -> Result<(), Packet> {
        self.enqueued += 1;
        if self.depth() >= self.capacity {
            self.dropped += 1;
            return Err(packet);
        }
        self.fifo.push_back(packet);
        self.max_depth = self.max_depth.max(self.depth());
        Ok(())
    }

    pub fn pop(&mut self) -> Option<Packet> {
        let p = self.fifo.pop_front()?;
        self.dequeued += 1;
        Some(p)
    }

    pub fn conserved(&self) -> bool {
        self.enqueued == self.dequeued + self.dropped + self.fifo.len() as u64
            && self.depth() <= self.capacity
    }
}

/// Weighted round robin over a port's queues. The current queue keeps the
/// turn until it has used its weight or runs empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Wrr {
    weights: Vec<u32>,
    cursor: usize,
    credit: u32,
}

impl Wrr {
    pub fn new(weights: Vec<u32>) -> Self {
        let credit = weights.first().copied().unwrap_or(0);
        Wrr {
            weights,
            cursor: 0,
            credit,
        }
    }

    pub fn select(&mut self, nonempty: impl Fn(usize) -> bool) -> Option<usize> {
        let n = self.weights.len();
        for _ in 0..=2 * n {
            if self.credit > 0 && nonempty(self.cursor) {
                self.credit -= 1;
                return Some(self.cursor);
            }
            self.cursor = (self.cursor + 1) % n;
            self.credit = self.weights[self.cursor];
        }
        None
    }
}

/// One clone produced by the probe pipeline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Emission {
    pub port: u8,
    pub queue: u8,
    pub header: SrProbe,
    pub dump_on_egress: bool,
}

/// Ingress decision for a routeID-forwarded probe at a switch. An empty
/// result means the probe terminates here.
///
/// Register-dump probes (no target queue) go out on every active port via
/// queue 0; the first port's clone keeps the stack and gets this switch's
/// dump at egress. Queue-cloning probes fan out only while they ride queue 0:
/// each active port gets one clone per queue, and only the (first port,
/// queue 0) clone keeps the stack.
pub fn probe_pipeline(probe: &SrProbe, node: &NodeId, nq: u8) -> Vec<Emission> {
    let state = compute_t_state(&probe.route_id, node);
    let ports = active_ports(&state);
    let fresh = |target_queue: Option<u8>| SrProbe {
        target_queue,
        slots: Vec::new(),
        ..probe.clone()
    };
    let mut out = Vec::new();
    match probe.target_queue {
        None => {
            for (i, &port) in ports.iter().enumerate() {
                let header = if i == 0 { probe.clone() } else { fresh(None) };
                out.push(Emission {
                    port,
                    queue: 0,
                    header,
                    dump_on_egress: i == 0,
                });
            }
        }
        Some(0) => {
            for (i, &port) in ports.iter().enumerate() {
                for q in 0..nq {
                    let header = if i == 0 && q == 0 {
                        probe.clone()
                    } else {
                        fresh(Some(q))
                    };
                    out.push(Emission {
                        port,
                        queue: q,
                        header,
                        dump_on_egress: false,
                    });
                }
            }
        }
        Some(_) => {}
    }
    out
}

#[derive(Debug)]
enum Event {
    FlowPacket { flow: usize },
    Launch { index: usize },
    Arrive { switch: usize, port: u8, packet: Packet },
    TxComplete { switch: usize, port: u8 },
    Resubmit { switch: usize, port: u8, queue: u8, packet: Packet },
}

#[derive(Debug)]
struct Scheduled {
    time: u64,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

/// Pending events ordered by (time, insertion sequence).
#[derive(Debug, Default)]
struct EventQueue {
    heap: BinaryHeap<Reverse<Scheduled>>,
    seq: u64,
}

impl EventQueue {
    fn push(&mut self, time: u64, event: Event) {
        self.seq += 1;
        self.heap.push(Reverse(Scheduled {
            time,
            seq: self.seq,
            event,
        }));
    }

    fn pop(&mut self) -> Option<Scheduled> {
        self.heap.pop().map(|Reverse(s)| s)
    }

    fn peek_time(&self) -> Option<u64> {
        self.heap.peek().map(|Reverse(s)| s.time)
    }
}

#[derive(Debug)]
struct LinkRt {
    neighbor: usize,
    neighbor_port: u8,
    bandwidth_bps: u64,
    delay_ns: u64,
}

#[derive(Debug)]
struct PortRt {
    link: Option<LinkRt>,
    queues: Vec<QueueState>,
    wrr: Wrr,
    busy: bool,
}

#[derive(Debug)]
struct SwitchRt {
    name: String,
    nq: u8,
    /// Index 0 is the host port and has no queues.
    ports: Vec<PortRt>,
    registers: RegisterFile,
    collector: Option<String>,
    node_id: Option<NodeId>,
}

struct FlowRt {
    hops: Rc<[usize]>,
    rng: ChaCha8Rng,
    gap: Exp<f64>,
    sent: u64,
}

/// Serialization time in nanoseconds, rounded up.
pub fn serialization_ns(size_bytes: usize, bandwidth_bps: u64) -> u64 {
    (size_bytes as u64 * 8 * 1_000_000_000).div_ceil(bandwidth_bps.max(1))
}

struct Sim<'a> {
    workload: &'a Workload,
    config: &'a SimConfig,
    switches: Vec<SwitchRt>,
    port_to: BTreeMap<(usize, usize), u8>,
    flows: Vec<FlowRt>,
    launch_paths: Vec<Option<Rc<[usize]>>>,
    events: EventQueue,
    now: u64,
    next_packet: u64,
    in_transit: u64,
    resubmits: u64,
    records: Vec<TraceRecord>,
    deliveries: Vec<Delivery>,
    counters: PacketCounters,
    invariant_checks: u64,
    violations: Vec<String>,
}

/// Runs the workload until `config.until_ns` or until no events remain.
pub fn run(
    spec: &TopologySpec,
    workload: &Workload,
    config: &SimConfig,
) -> Result<SimulationTrace, SimError> {
    let mut sim = Sim::new(spec, workload, config)?;
    sim.run();
    Ok(sim.finish())
}

impl<'a> Sim<'a> {
    fn new(
        spec: &TopologySpec,
        workload: &'a Workload,
        config: &'a SimConfig,
    ) -> Result<Self, SimError> {
        let index = |name: &str| {
            spec.switch_index(name)
                .ok_or_else(|| SimError::UnknownSwitch(name.to_string()))
        };
        let mut switches = Vec::with_capacity(spec.switches.len());
        let mut port_to = BTreeMap::new();
        for (id, s) in spec.switches.iter().enumerate() {
            let mut ports: Vec<PortRt> = (0..=s.ports)
                .map(|p| PortRt {
                    link: None,
                    queues: if p == 0 {
                        Vec::new()
                    } else {
                        s.queue_weights
                            .iter()
                            .map(|&w| QueueState::new(s.queue_capacity, w))
                            .collect()
                    },
                    wrr: Wrr::new(s.queue_weights.clone()),
                    busy: false,
                })
                .collect();
            for adj in spec.adjacencies(&s.name) {
                let link = &spec.links[adj.link];
                let neighbor = index(&adj.neighbor)?;
                port_to.insert((id, neighbor), adj.port);
                ports[adj.port as usize].link = Some(LinkRt {
                    neighbor,
                    neighbor_port: adj.neighbor_port,
                    bandwidth_bps: link.bandwidth_bps,
                    delay_ns: link.delay_us * 1000,
                });
            }
            let collector = spec
                .hosts
                .iter()
                .filter(|h| h.switch == s.name && h.role == crate::netmodel::HostRole::Collector)
                .map(|h| h.name.clone())
                .min();
            switches.push(SwitchRt {
                name: s.name.clone(),
                nq: s.nq,
                ports,
                registers: RegisterFile::new(id as u16, s.ports, s.nq),
                collector,
                node_id: workload.node_ids.get(&s.name).cloned(),
            });
        }

        let adjacency: Vec<Vec<usize>> = (0..switches.len())
            .map(|a| {
                port_to
                    .keys()
                    .filter(|(x, _)| *x == a)
                    .map(|&(_, b)| b)
                    .collect()
            })
            .collect();

        let mut flows = Vec::with_capacity(workload.flows.len());
        for (i, f) in workload.flows.iter().enumerate() {
            if f.tos == PROBE_TOS {
                return Err(SimError::ProbeTosOnData(i));
            }
            let host = |name: &str| {
                spec.host(name)
                    .ok_or_else(|| SimError::UnknownHost(name.to_string()))
            };
            let src = index(&host(&f.source)?.switch)?;
            let dst = index(&host(&f.sink)?.switch)?;
            if !(f.rate_pps > 0.0 && f.rate_pps.is_finite()) || f.packet_size == 0 {
                return Err(SimError::InvalidFlow {
                    index: i,
                    reason: "rate and packet size must be positive".into(),
                });
            }
            let gap = Exp::new(f.rate_pps).expect("positive finite rate");
            let hops = shortest_path(&adjacency, src, dst).ok_or_else(|| SimError::NoPath {
                from: spec.switches[src].name.clone(),
                to: spec.switches[dst].name.clone(),
            })?;
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(i as u64);
            flows.push(FlowRt {
                hops: hops.into(),
                rng,
                gap,
                sent: 0,
            });
        }

        let mut launch_paths = Vec::with_capacity(workload.probes.len());
        for (i, l) in workload.probes.iter().enumerate() {
            let bad = |reason: String| SimError::InvalidLaunch { index: i, reason };
            let origin = index(&l.origin)?;
            match &l.route {
                LaunchRoute::Path { switches: names, queue } => {
                    if names.first() != Some(&l.origin) {
                        return Err(bad("path must start at the origin".into()));
                    }
                    let hops = names.iter().map(|n| index(n)).collect::<Result<Vec<_>, _>>()?;
                    for w in hops.windows(2) {
                        if !port_to.contains_key(&(w[0], w[1])) {
                            return Err(SimError::NotAdjacent(
                                spec.switches[w[0]].name.clone(),
                                spec.switches[w[1]].name.clone(),
                            ));
                        }
                    }
                    if hops.iter().any(|&h| *queue >= switches[h].nq) {
                        return Err(bad(format!("queue {queue} does not exist on every hop")));
                    }
                    if l.kind == PacketKind::Data || l.kind == PacketKind::ProbeS3 {
                        return Err(bad("unicast launches carry INT probes".into()));
                    }
                    launch_paths.push(Some(hops.into()));
                }
                LaunchRoute::Multicast { .. } => {
                    if !matches!(l.kind, PacketKind::ProbeS2 | PacketKind::ProbeS3) {
                        return Err(bad("multicast launches carry SR probes".into()));
                    }
                    if switches[origin].node_id.is_none() {
                        return Err(SimError::MissingNodeId(l.origin.clone()));
                    }
                    launch_paths.push(None);
                }
            }
        }

        let mut events = EventQueue::default();
        for (i, f) in workload.flows.iter().enumerate() {
            if f.max_packets != Some(0) {
                events.push(f.start_ns, Event::FlowPacket { flow: i });
            }
        }
        for (i, l) in workload.probes.iter().enumerate() {
            events.push(l.time_ns, Event::Launch { index: i });
        }

        Ok(Sim {
            workload,
            config,
            switches,
            port_to,
            flows,
            launch_paths,
            events,
            now: 0,
            next_packet: 0,
            in_transit: 0,
            resubmits: 0,
            records: Vec::new(),
            deliveries: Vec::new(),
            counters: PacketCounters::default(),
            invariant_checks: 0,
            violations: Vec::new(),
        })
    }

    fn run(&mut self) {
        while self
            .events
            .peek_time()
            .is_some_and(|t| t <= self.config.until_ns)
        {
            let Scheduled { time, event, .. } = self.events.pop().expect("peeked");
            debug_assert!(time >= self.now);
            self.now = time;
            match event {
                Event::FlowPacket { flow } => self.inject_flow_packet(flow),
                Event::Launch { index } => self.launch(index),
                Event::Arrive {
                    switch,
                    port,
                    packet,
                } => self.arrive(switch, port, packet),
                Event::TxComplete { switch, port } => {
                    self.switches[switch].ports[port as usize].busy = false;
                    self.start_service(switch, port);
                }
                Event::Resubmit {
                    switch,
                    port,
                    queue,
                    packet,
                } => {
                    self.resubmits -= 1;
                    self.enqueue(switch, port, queue, packet);
                }
            }
            if self.config.verify_invariants {
                self.check_invariants();
            }
        }
    }

    fn finish(self) -> SimulationTrace {
        let mut queues = Vec::new();
        for s in &self.switches {
            for (p, port) in s.ports.iter().enumerate() {
                for (q, qs) in port.queues.iter().enumerate() {
                    queues.push(QueueReport {
                        switch: s.name.clone(),
                        port: p as u8,
                        queue: q as u8,
                        enqueued: qs.enqueued,
                        dequeued: qs.dequeued,
                        dropped: qs.dropped,
                        resident: qs.depth() as u64,
                        max_depth: qs.max_depth,
                    });
                }
            }
        }
        SimulationTrace {
            switch_names: self.switches.iter().map(|s| s.name.clone()).collect(),
            records: self.records,
            deliveries: self.deliveries,
            queues,
            counters: self.counters,
            end_ns: self.now,
            invariant_checks: self.invariant_checks,
            violations: self.violations,
        }
    }

    fn record(
        &mut self,
        switch: usize,
        port: u8,
        queue: Option<u8>,
        packet: &Packet,
        action: Action,
    ) {
        self.records.push(TraceRecord {
            time_ns: self.now,
            switch: switch as u16,
            port,
            queue,
            kind: packet.kind,
            size: packet.size,
            action,
            packet: packet.id,
            probe_id: packet.probe_id(),
            generation: packet.kind.is_probe().then_some(packet.generation),
            slots: packet.slot_count(),
            staleness_ns: None,
        });
    }

    fn new_packet(&mut self, kind: PacketKind, size: usize, route: Route) -> Packet {
        self.next_packet += 1;
        self.counters.created += 1;
        Packet {
            id: self.next_packet,
            kind,
            size,
            flow: None,
            tos: PROBE_TOS,
            created_ns: self.now,
            header: None,
            generation: 0,
            route,
            pin: None,
            dump_on_egress: false,
            enq_ns: 0,
            enq_depth: 0,
        }
    }

    fn inject_flow_packet(&mut self, flow: usize) {
        let spec = &self.workload.flows[flow];
        let hops = self.flows[flow].hops.clone();
        let mut packet = self.new_packet(
            PacketKind::Data,
            spec.packet_size,
            Route::Path { hops, at: 0 },
        );
        packet.flow = Some(flow);
        packet.tos = spec.tos;
        self.counters.data_injected += 1;

        let rt = &mut self.flows[flow];
        rt.sent += 1;
        let gap_ns = (rt.gap.sample(&mut rt.rng) * 1e9).round() as u64;
        let next = self.now + gap_ns;
        let more = spec.max_packets.is_none_or(|m| rt.sent < m)
            && spec.stop_ns.is_none_or(|s| next < s);
        if more {
            self.events.push(next, Event::FlowPacket { flow });
        }

        let switch = match &packet.route {
            Route::Path { hops, .. } => hops[0],
            Route::Multicast => unreachable!(),
        };
        self.record(switch, 0, None, &packet, Action::Inject);
        self.ingress(switch, packet);
    }

    fn launch(&mut self, index: usize) {
        let l = &self.workload.probes[index];
        let origin = self.switches.iter().position(|s| s.name == l.origin).expect("validated");
        let src_mac = switch_mac(origin as u16);
        let gen_timestamp = (self.now / 1000) as u32;
        let (header, route, pin) = match (&l.route, &self.launch_paths[index]) {
            (LaunchRoute::Path { switches, queue }, Some(hops)) => (
                Probe::Int(IntProbe {
                    dst_mac: BROADCAST_MAC,
                    src_mac,
                    version: INT_VERSION,
                    flags: 0,
                    max_hops: switches.len().min(255) as u8,
                    probe_id: l.probe_id,
                    gen_timestamp,
                    instruction_bitmap: INT_INSTRUCTIONS,
                    reserved: 0,
                    slots: Vec::new(),
                }),
                Route::Path {
                    hops: hops.clone(),
                    at: 0,
                },
                Some(*queue),
            ),
            (
                LaunchRoute::Multicast {
                    route_id,
                    target_queue,
                },
                None,
            ) => (
                Probe::Sr(SrProbe {
                    dst_mac: BROADCAST_MAC,
                    src_mac,
                    route_id: route_id.clone(),
                    probe_id: l.probe_id,
                    gen_timestamp,
                    origin_switch: origin as u16,
                    target_queue: *target_queue,
                    slots: Vec::new(),
                }),
                Route::Multicast,
                *target_queue,
            ),
            _ => unreachable!("validated launch"),
        };
        let (kind, generation) = (l.kind, l.generation);
        let mut packet = self.new_packet(kind, header.wire_len(), route);
        packet.header = Some(header);
        packet.generation = generation;
        packet.pin = pin;
        self.counters.probes_launched += 1;
        self.record(origin, 0, None, &packet, Action::Inject);
        self.ingress(origin, packet);
    }

    fn arrive(&mut self, switch: usize, port: u8, mut packet: Packet) {
        self.in_transit -= 1;
        if let Route::Path { at, .. } = &mut packet.route {
            *at += 1;
        }
        self.record(switch, port, None, &packet, Action::Arrive);
        self.ingress(switch, packet);
    }

    fn ingress(&mut self, switch: usize, mut packet: Packet) {
        let next = match &packet.route {
            Route::Path { hops, at } => {
                debug_assert_eq!(hops[*at], switch);
                hops.get(at + 1).copied()
            }
            Route::Multicast => return self.multicast_ingress(switch, packet),
        };
        match next {
            Some(n) => {
                let port = self.port_to[&(switch, n)];
                let queue = classify_queue(packet.tos, packet.pin, self.switches[switch].nq);
                self.enqueue(switch, port, queue, packet);
            }
            None if packet.kind == PacketKind::Data => {
                self.counters.delivered += 1;
                self.counters.data_delivered += 1;
                self.record(switch, 0, None, &packet, Action::Deliver);
            }
            None => {
                packet.resize();
                self.terminate_probe(switch, packet);
            }
        }
    }

    fn multicast_ingress(&mut self, switch: usize, mut packet: Packet) {
        let nq = self.switches[switch].nq;
        let node = self.switches[switch]
            .node_id
            .as_ref()
            .expect("every switch has a nodeID when multicast probes run");
        let Some(Probe::Sr(header)) = &packet.header else {
            unreachable!("multicast packets carry SR headers")
        };
        let emissions = probe_pipeline(header, node, nq);
        let emissions: Vec<Emission> = emissions
            .into_iter()
            .filter(|e| {
                self.switches[switch]
                    .ports
                    .get(e.port as usize)
                    .is_some_and(|p| p.link.is_some())
            })
            .collect();
        if emissions.is_empty() {
            if packet.kind == PacketKind::ProbeS3 {
                self.append_dump(switch, 0, None, &mut packet);
            }
            return self.terminate_probe(switch, packet);
        }
        self.counters.consumed += 1;
        for (i, e) in emissions.into_iter().enumerate() {
            let mut clone = self.new_packet(packet.kind, 0, Route::Multicast);
            clone.generation = packet.generation;
            clone.created_ns = packet.created_ns;
            clone.pin = e.header.target_queue;
            clone.dump_on_egress = e.dump_on_egress;
            clone.header = Some(Probe::Sr(e.header));
            clone.resize();
            let delay = i as u64 * self.config.recirculation_ns;
            if delay == 0 {
                self.enqueue(switch, e.port, e.queue, clone);
            } else {
                self.resubmits += 1;
                self.events.push(
                    self.now + delay,
                    Event::Resubmit {
                        switch,
                        port: e.port,
                        queue: e.queue,
                        packet: clone,
                    },
                );
            }
        }
    }

    fn terminate_probe(&mut self, switch: usize, packet: Packet) {
        match self.switches[switch].collector.clone() {
            Some(collector) => {
                let bytes = serialize_probe(packet.header.as_ref().expect("probe header"))
                    .expect("probe within header limits");
                self.counters.delivered += 1;
                self.counters.probes_delivered += 1;
                self.record(switch, 0, None, &packet, Action::Deliver);
                self.deliveries.push(Delivery {
                    time_ns: self.now,
                    collector,
                    bytes,
                });
            }
            None => {
                self.counters.discarded += 1;
                self.counters.probes_discarded += 1;
                self.record(switch, 0, None, &packet, Action::Discard);
            }
        }
    }

    fn append_dump(&mut self, switch: usize, port: u8, queue: Option<u8>, packet: &mut Packet) {
        let regs = &self.switches[switch].registers;
        let slots = dump_registers(regs);
        let staleness = regs.oldest_update_ns().map(|t| self.now - t);
        packet
            .header
            .as_mut()
            .expect("probe header")
            .slots_mut()
            .extend(slots);
        packet.resize();
        self.record(switch, port, queue, packet, Action::RegisterRead);
        self.records.last_mut().expect("just recorded").staleness_ns = staleness;
    }

    fn enqueue(&mut self, switch: usize, port: u8, queue: u8, mut packet: Packet) {
        packet.enq_ns = self.now;
        packet.enq_depth = self.switches[switch].ports[port as usize].queues[queue as usize].depth();
        self.record(switch, port, Some(queue), &packet, Action::Enqueue);
        let p = &mut self.switches[switch].ports[port as usize];
        match p.queues[queue as usize].offer(packet) {
            Ok(()) => {
                if !p.busy {
                    self.start_service(switch, port);
                }
            }
            Err(packet) => {
                self.records.last_mut().expect("just recorded").action = Action::Drop;
                self.counters.dropped += 1;
                if packet.kind.is_probe() {
                    self.counters.probes_dropped += 1;
                } else {
                    self.counters.data_dropped += 1;
                }
            }
        }
    }

    fn start_service(&mut self, switch: usize, port: u8) {
        let now = self.now;
        let sw = &mut self.switches[switch];
        let p = &mut sw.ports[port as usize];
        let queues = &p.queues;
        let Some(queue) = p.wrr.select(|i| !queues[i].is_empty()) else {
            return;
        };
        let mut packet = p.queues[queue].pop().expect("selected queue is nonempty");
        let queue = queue as u8;
        let slot = TelemetrySlot {
            switch_id: switch as u16,
            port,
            queue,
            enq_qdepth: packet.enq_depth.min(u16::MAX as u32) as u16,
            deq_qdepth: p.queues[queue as usize].depth().min(u16::MAX as u32) as u16,
            deq_timedelta: ((now - packet.enq_ns) / 1000) as u32,
            enq_timestamp: (packet.enq_ns / 1000) as u32,
        };
        let link = p.link.as_ref().expect("queued ports are linked");
        let (neighbor, neighbor_port, bw, delay) = (
            link.neighbor,
            link.neighbor_port,
            link.bandwidth_bps,
            link.delay_ns,
        );
        p.busy = true;

        match packet.kind {
            PacketKind::Data => {
                sw.registers.write(port, queue, slot, now);
            }
            PacketKind::ProbeS1 | PacketKind::ProbeS2 => {
                packet
                    .header
                    .as_mut()
                    .expect("probe header")
                    .slots_mut()
                    .push(slot);
                packet.resize();
            }
            PacketKind::ProbeS3 => {
                if packet.dump_on_egress {
                    packet.dump_on_egress = false;
                    self.append_dump(switch, port, Some(queue), &mut packet);
                }
            }
        }

        self.record(switch, port, Some(queue), &packet, Action::Transmit);
        let tx = serialization_ns(packet.size, bw);
        self.events.push(now + tx, Event::TxComplete { switch, port });
        self.in_transit += 1;
        self.events.push(
            now + tx + delay,
            Event::Arrive {
                switch: neighbor,
                port: neighbor_port,
                packet,
            },
        );
    }

    fn check_invariants(&mut self) {
        self.invariant_checks += 1;
        let mut resident = 0u64;
        for s in &self.switches {
            for (p, port) in s.ports.iter().enumerate() {
                for (q, qs) in port.queues.iter().enumerate() {
                    resident += qs.depth() as u64;
                    if !qs.conserved() {
                        self.violations.push(format!(
                            "t={} {}.{} q{}: enqueued {} != dequeued {} + dropped {} + resident {}",
                            self.now,
                            s.name,
                            p,
                            q,
                            qs.enqueued,
                            qs.dequeued,
                            qs.dropped,
                            qs.depth()
                        ));
                    }
                }
            }
        }
        let c = &self.counters;
        let accounted =
            c.delivered + c.dropped + c.discarded + c.consumed + resident + self.in_transit + self.resubmits;
        if c.created != accounted {
            self.violations.push(format!(
                "t={}: created {} packets but {} are accounted for",
                self.now, c.created, accounted
            ));
        }
    }
}

fn shortest_path(adjacency: &[Vec<usize>], from: usize, to: usize) -> Option<Vec<usize>> {
    let mut prev = vec![usize::MAX; adjacency.len()];
    let mut queue = VecDeque::from([from]);
    prev[from] = from;
    while let Some(u) = queue.pop_front() {
        if u == to {
            break;
        }
        for &v in &adjacency[u] {
            if prev[v] == usize::MAX {
                prev[v] = u;
                queue.push_back(v);
            }
        }
    }
    if prev[to] == usize::MAX {
        return None;
    }
    let mut path = vec![to];
    while *path.last().expect("nonempty") != from {
        path.push(prev[*path.last().expect("nonempty")]);
    }
    path.reverse();
    Some(path)
}
