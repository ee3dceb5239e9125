//! Probe wire formats, per-queue register files, and the collector that turns
//! delivered probes into occupancy time series.
//!
//! All multi-byte fields are big-endian.
//!
//! ```text
//! SR probe (multicast, routeID-forwarded)
//!   0  dst mac (6) | 6 src mac (6) | 12 etherType 0x1234 (2)
//!  14  routeID (32)
//!  46  slot_count (2) | 48 probe_id (4) | 52 gen_timestamp (4) | 56 origin_switch (2)
//!  58  [queue-cloning probes only] target_queue (1)
//!      slot_count x 16-byte telemetry slots
//!
//! INT probe (unicast, one slot per hop)
//!   0  dst mac (6) | 6 src mac (6) | 12 etherType 0x1235 (2)
//!  14  ver | flags | hop_count | max_hops | 18 probe_id (4) | 22 gen_timestamp (4)
//!  26  instruction_bitmap (2) | 28 reserved (1)
//!      hop_count x 16-byte telemetry slots
//!
//! Telemetry slot
//!   0 switch_id (2) | 2 port | 3 queue | 4 enq_qdepth (2) | 6 deq_qdepth (2)
//!   8 deq_timedelta_us (4) | 12 enq_timestamp_us (4)
//! ```
//!
//! Register-dump probes and queue-cloning probes share an etherType; the
//! total length tells them apart because their base sizes differ by one byte
//! and slots are 16 bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use thiserror::Error;

use crate::mpolka::{RouteId, ROUTE_ID_BYTES};

pub const ETHERTYPE_IPV4: u16 = 0x0800;
pub const ETHERTYPE_SR: u16 = 0x1234;
pub const ETHERTYPE_INT: u16 = 0x1235;
/// TOS value that marks a packet as a telemetry probe.
pub const PROBE_TOS: u8 = 55;

pub const SLOT_LEN: usize = 16;
pub const ETH_LEN: usize = 14;
pub const SR_BASE_LEN: usize = 58;
pub const SR_QUEUE_BASE_LEN: usize = 59;
pub const INT_BASE_LEN: usize = 29;
pub const INT_VERSION: u8 = 2;
/// Instruction bits requested by INT probes: switch id, port ids, queue
/// occupancy, hop latency and enqueue timestamp.
pub const INT_INSTRUCTIONS: u16 = 0b1111_1000_0000_0000;

pub const BROADCAST_MAC: [u8; 6] = [0xff; 6];

/// Locally administered MAC derived from a switch identifier.
pub fn switch_mac(switch_id: u16) -> [u8; 6] {
    let [hi, lo] = switch_id.to_be_bytes();
    [0x02, 0x00, 0x00, 0x00, hi, lo]
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("buffer too short: need at least {needed} bytes, got {found}")]
    Short { needed: usize, found: usize },
    #[error("unknown etherType {value:#06x} at offset 12")]
    UnknownEtherType { value: u16 },
    #[error("count field at offset {offset} says {declared} slots but {found} bytes follow the header")]
    SlotCountMismatch {
        offset: usize,
        declared: usize,
        found: usize,
    },
    #[error("{count} slots exceed the header's limit of {limit}")]
    TooManySlots { count: usize, limit: usize },
}

/// One (switch, port, queue) telemetry record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct TelemetrySlot {
    pub switch_id: u16,
    pub port: u8,
    pub queue: u8,
    pub enq_qdepth: u16,
    pub deq_qdepth: u16,
    pub deq_timedelta: u32,
    pub enq_timestamp: u32,
}

impl TelemetrySlot {
    pub fn empty(switch_id: u16, port: u8, queue: u8) -> Self {
        TelemetrySlot {
            switch_id,
            port,
            queue,
            ..Default::default()
        }
    }

    pub fn to_bytes(&self) -> [u8; SLOT_LEN] {
        let mut b = [0u8; SLOT_LEN];
        b[0..2].copy_from_slice(&self.switch_id.to_be_bytes());
        b[2] = self.port;
        b[3] = self.queue;
        b[4..6].copy_from_slice(&self.enq_qdepth.to_be_bytes());
        b[6..8].copy_from_slice(&self.deq_qdepth.to_be_bytes());
        b[8..12].copy_from_slice(&self.deq_timedelta.to_be_bytes());
        b[12..16].copy_from_slice(&self.enq_timestamp.to_be_bytes());
        b
    }

    pub fn from_bytes(b: &[u8; SLOT_LEN]) -> Self {
        TelemetrySlot {
            switch_id: u16::from_be_bytes([b[0], b[1]]),
            port: b[2],
            queue: b[3],
            enq_qdepth: u16::from_be_bytes([b[4], b[5]]),
            deq_qdepth: u16::from_be_bytes([b[6], b[7]]),
            deq_timedelta: u32::from_be_bytes([b[8], b[9], b[10], b[11]]),
            enq_timestamp: u32::from_be_bytes([b[12], b[13], b[14], b[15]]),
        }
    }
}

/// A routeID-forwarded probe. `target_queue` is present on queue-cloning
/// probes and absent on register-dump probes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SrProbe {
    pub dst_mac: [u8; 6],
    pub src_mac: [u8; 6],
    pub route_id: RouteId,
    pub probe_id: u32,
    pub gen_timestamp: u32,
    pub origin_switch: u16,
    pub target_queue: Option<u8>,
    pub slots: Vec<TelemetrySlot>,
}

/// A classic hop-by-hop INT probe.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntProbe {
    pub dst_mac: [u8; 6],
    pub src_mac: [u8; 6],
    pub version: u8,
    pub flags: u8,
    pub max_hops: u8,
    pub probe_id: u32,
    pub gen_timestamp: u32,
    pub instruction_bitmap: u16,
    pub reserved: u8,
    pub slots: Vec<TelemetrySlot>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Probe {
    Sr(SrProbe),
    Int(IntProbe),
}

impl Probe {
    pub fn slots(&self) -> &[TelemetrySlot] {
        match self {
            Probe::Sr(p) => &p.slots,
            Probe::Int(p) => &p.slots,
        }
    }

    pub fn slots_mut(&mut self) -> &mut Vec<TelemetrySlot> {
        match self {
            Probe::Sr(p) => &mut p.slots,
            Probe::Int(p) => &mut p.slots,
        }
    }

    pub fn probe_id(&self) -> u32 {
        match self {
            Probe::Sr(p) => p.probe_id,
            Probe::Int(p) => p.probe_id,
        }
    }

    /// Queue a probe is pinned to, if any.
    pub fn target_queue(&self) -> Option<u8> {
        match self {
            Probe::Sr(p) => p.target_queue,
            Probe::Int(_) => None,
        }
    }

    pub fn base_len(&self) -> usize {
        match self {
            Probe::Sr(SrProbe {
                target_queue: Some(_),
                ..
            }) => SR_QUEUE_BASE_LEN,
            Probe::Sr(_) => SR_BASE_LEN,
            Probe::Int(_) => INT_BASE_LEN,
        }
    }

    pub fn slot_limit(&self) -> usize {
        match self {
            Probe::Sr(_) => u16::MAX as usize,
            Probe::Int(_) => u8::MAX as usize,
        }
    }

    /// On-wire length in bytes.
    pub fn wire_len(&self) -> usize {
        self.base_len() + SLOT_LEN * self.slots().len()
    }
}

pub fn serialize_probe(probe: &Probe) -> Result<Vec<u8>, WireError> {
    let count = probe.slots().len();
    if count > probe.slot_limit() {
        return Err(WireError::TooManySlots {
            count,
            limit: probe.slot_limit(),
        });
    }
    let mut out = Vec::with_capacity(probe.wire_len());
    match probe {
        Probe::Sr(p) => {
            out.extend_from_slice(&p.dst_mac);
            out.extend_from_slice(&p.src_mac);
            out.extend_from_slice(&ETHERTYPE_SR.to_be_bytes());
            out.extend_from_slice(&p.route_id.to_bytes());
            out.extend_from_slice(&(count as u16).to_be_bytes());
            out.extend_from_slice(&p.probe_id.to_be_bytes());
            out.extend_from_slice(&p.gen_timestamp.to_be_bytes());
            out.extend_from_slice(&p.origin_switch.to_be_bytes());
            if let Some(q) = p.target_queue {
                out.push(q);
            }
        }
        Probe::Int(p) => {
            out.extend_from_slice(&p.dst_mac);
            out.extend_from_slice(&p.src_mac);
            out.extend_from_slice(&ETHERTYPE_INT.to_be_bytes());
            out.extend_from_slice(&[p.version, p.flags, count as u8, p.max_hops]);
            out.extend_from_slice(&p.probe_id.to_be_bytes());
            out.extend_from_slice(&p.gen_timestamp.to_be_bytes());
            out.extend_from_slice(&p.instruction_bitmap.to_be_bytes());
            out.push(p.reserved);
        }
    }
    for s in probe.slots() {
        out.extend_from_slice(&s.to_bytes());
    }
    debug_assert_eq!(out.len(), probe.wire_len());
    Ok(out)
}

fn be16(b: &[u8], at: usize) -> u16 {
    u16::from_be_bytes([b[at], b[at + 1]])
}

fn be32(b: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn mac(b: &[u8], at: usize) -> [u8; 6] {
    b[at..at + 6].try_into().expect("6-byte slice")
}

fn parse_slots(b: &[u8], count: usize) -> Vec<TelemetrySlot> {
    b.chunks_exact(SLOT_LEN)
        .take(count)
        .map(|c| TelemetrySlot::from_bytes(c.try_into().expect("16-byte chunk")))
        .collect()
}

pub fn parse_probe(bytes: &[u8]) -> Result<Probe, WireError> {
    if bytes.len() < ETH_LEN {
        return Err(WireError::Short {
            needed: ETH_LEN,
            found: bytes.len(),
        });
    }
    match be16(bytes, 12) {
        ETHERTYPE_SR => {
            if bytes.len() < SR_BASE_LEN {
                return Err(WireError::Short {
                    needed: SR_BASE_LEN,
                    found: bytes.len(),
                });
            }
            let count = be16(bytes, 46) as usize;
            let target_queue = if bytes.len() == SR_BASE_LEN + SLOT_LEN * count {
                None
            } else if bytes.len() == SR_QUEUE_BASE_LEN + SLOT_LEN * count {
                Some(bytes[SR_BASE_LEN])
            } else {
                return Err(WireError::SlotCountMismatch {
                    offset: 46,
                    declared: count,
                    found: bytes.len() - SR_BASE_LEN,
                });
            };
            let route: &[u8; ROUTE_ID_BYTES] = bytes[14..46].try_into().expect("32-byte slice");
            let base = if target_queue.is_some() {
                SR_QUEUE_BASE_LEN
            } else {
                SR_BASE_LEN
            };
            Ok(Probe::Sr(SrProbe {
                dst_mac: mac(bytes, 0),
                src_mac: mac(bytes, 6),
                route_id: RouteId::from_bytes(route),
                probe_id: be32(bytes, 48),
                gen_timestamp: be32(bytes, 52),
                origin_switch: be16(bytes, 56),
                target_queue,
                slots: parse_slots(&bytes[base..], count),
            }))
        }
        ETHERTYPE_INT => {
            if bytes.len() < INT_BASE_LEN {
                return Err(WireError::Short {
                    needed: INT_BASE_LEN,
                    found: bytes.len(),
                });
            }
            let count = bytes[16] as usize;
            if bytes.len() != INT_BASE_LEN + SLOT_LEN * count {
                return Err(WireError::SlotCountMismatch {
                    offset: 16,
                    declared: count,
                    found: bytes.len() - INT_BASE_LEN,
                });
            }
            Ok(Probe::Int(IntProbe {
                dst_mac: mac(bytes, 0),
                src_mac: mac(bytes, 6),
                version: bytes[14],
                flags: bytes[15],
                max_hops: bytes[17],
                probe_id: be32(bytes, 18),
                gen_timestamp: be32(bytes, 22),
                instruction_bitmap: be16(bytes, 26),
                reserved: bytes[28],
                slots: parse_slots(&bytes[INT_BASE_LEN..], count),
            }))
        }
        value => Err(WireError::UnknownEtherType { value }),
    }
}

/// Per-switch telemetry registers, one slot per (network port, queue).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegisterFile {
    switch_id: u16,
    ports: u8,
    nq: u8,
    slots: Vec<TelemetrySlot>,
    last_update_ns: Vec<Option<u64>>,
}

impl RegisterFile {
    pub fn new(switch_id: u16, ports: u8, nq: u8) -> Self {
        let mut slots = Vec::with_capacity(ports as usize * nq as usize);
        for port in 1..=ports {
            for queue in 0..nq {
                slots.push(TelemetrySlot::empty(switch_id, port, queue));
            }
        }
        let n = slots.len();
        RegisterFile {
            switch_id,
            ports,
            nq,
            slots,
            last_update_ns: vec![None; n],
        }
    }

    fn index(&self, port: u8, queue: u8) -> Option<usize> {
        (port >= 1 && port <= self.ports && queue < self.nq)
            .then(|| (port as usize - 1) * self.nq as usize + queue as usize)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn memory_bytes(&self) -> usize {
        self.slots.len() * SLOT_LEN
    }

    pub fn slot(&self, port: u8, queue: u8) -> Option<&TelemetrySlot> {
        self.index(port, queue).map(|i| &self.slots[i])
    }

    pub fn last_update_ns(&self, port: u8, queue: u8) -> Option<u64> {
        self.index(port, queue).and_then(|i| self.last_update_ns[i])
    }

    /// Overwrites the slot of (`port`, `queue`). Returns false for an index
    /// outside the register file.
    pub fn write(&mut self, port: u8, queue: u8, mut slot: TelemetrySlot, now_ns: u64) -> bool {
        let Some(i) = self.index(port, queue) else {
            return false;
        };
        slot.switch_id = self.switch_id;
        slot.port = port;
        slot.queue = queue;
        self.slots[i] = slot;
        self.last_update_ns[i] = Some(now_ns);
        true
    }

    /// Oldest update among written slots, for staleness reporting.
    pub fn oldest_update_ns(&self) -> Option<u64> {
        self.last_update_ns.iter().flatten().min().copied()
    }
}

/// Every slot of the register file in ascending (port, queue) order.
pub fn dump_registers(registers: &RegisterFile) -> Vec<TelemetrySlot> {
    registers.slots.clone()
}

/// A probe handed to a collector host.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub time_ns: u64,
    pub collector: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ProbeFormat {
    Int,
    SrQueue,
    SrDump,
}

impl ProbeFormat {
    pub fn of(probe: &Probe) -> Self {
        match probe {
            Probe::Int(_) => ProbeFormat::Int,
            Probe::Sr(SrProbe {
                target_queue: Some(_),
                ..
            }) => ProbeFormat::SrQueue,
            Probe::Sr(_) => ProbeFormat::SrDump,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Receipt {
    pub collector: String,
    pub time_ns: u64,
    pub probe_id: u32,
    pub format: ProbeFormat,
    pub target_queue: Option<u8>,
    pub size: usize,
    pub slots: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OccupancySample {
    pub time_ns: u64,
    pub enq_qdepth: u16,
    pub deq_qdepth: u16,
    pub deq_timedelta: u32,
}

/// (switch id, port, queue)
pub type SlotKey = (u16, u8, u8);

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OccupancySeries {
    pub series: BTreeMap<SlotKey, Vec<OccupancySample>>,
}

impl OccupancySeries {
    pub fn samples(&self, key: SlotKey) -> &[OccupancySample] {
        self.series.get(&key).map_or(&[], Vec::as_slice)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CollectorLog {
    pub receipts: Vec<Receipt>,
    /// (collector, probe_id, target_queue) seen more than once.
    pub duplicates: Vec<(String, u32, Option<u8>)>,
    pub parse_errors: Vec<(u64, String, WireError)>,
    /// Samples not newer than the last one already recorded for their key.
    pub redundant_samples: usize,
}

/// Parses delivered probes in arrival order and appends one sample per slot.
/// A sample is kept only when it is strictly newer than the key's last one.
pub fn collector_ingest(deliveries: &[Delivery]) -> (OccupancySeries, CollectorLog) {
    let mut ordered: Vec<&Delivery> = deliveries.iter().collect();
    ordered.sort_by_key(|d| d.time_ns);
    let mut series = OccupancySeries::default();
    let mut log = CollectorLog::default();
    let mut seen = BTreeSet::new();
    for d in ordered {
        let probe = match parse_probe(&d.bytes) {
            Ok(p) => p,
            Err(e) => {
                log.parse_errors.push((d.time_ns, d.collector.clone(), e));
                continue;
            }
        };
        let key = (d.collector.clone(), probe.probe_id(), probe.target_queue());
        if !seen.insert(key.clone()) {
            log.duplicates.push(key);
        }
        log.receipts.push(Receipt {
            collector: d.collector.clone(),
            time_ns: d.time_ns,
            probe_id: probe.probe_id(),
            format: ProbeFormat::of(&probe),
            target_queue: probe.target_queue(),
            size: d.bytes.len(),
            slots: probe.slots().len(),
        });
        for s in probe.slots() {
            let samples = series
                .series
                .entry((s.switch_id, s.port, s.queue))
                .or_default();
            if samples.last().is_some_and(|last| last.time_ns >= d.time_ns) {
                log.redundant_samples += 1;
                continue;
            }
            samples.push(OccupancySample {
                time_ns: d.time_ns,
                enq_qdepth: s.enq_qdepth,
                deq_qdepth: s.deq_qdepth,
                deq_timedelta: s.deq_timedelta,
            });
        }
    }
    (series, log)
}

/// Writes the series of one switch (or all switches when `only` is `None`)
/// as CSV. `names` maps switch ids to names.
pub fn write_series_csv<W: Write>(
    series: &OccupancySeries,
    names: &[String],
    only: Option<u16>,
    out: W,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "time_us",
        "switch",
        "port",
        "queue",
        "enq_qdepth",
        "deq_qdepth",
        "deq_timedelta_us",
    ])?;
    let mut rows: Vec<(u64, SlotKey, &OccupancySample)> = series
        .series
        .iter()
        .filter(|(k, _)| only.is_none_or(|id| k.0 == id))
        .flat_map(|(k, v)| v.iter().map(move |s| (s.time_ns, *k, s)))
        .collect();
    rows.sort_by_key(|(t, k, _)| (*t, *k));
    for (t, (sw, port, queue), s) in rows {
        let name = names
            .get(sw as usize)
            .cloned()
            .unwrap_or_else(|| format!("#{sw}"));
        w.write_record([
            format_us(t),
            name,
            port.to_string(),
            queue.to_string(),
            s.enq_qdepth.to_string(),
            s.deq_qdepth.to_string(),
            s.deq_timedelta.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Nanoseconds rendered as microseconds with three decimals.
pub fn format_us(ns: u64) -> String {
    format!("{}.{:03}", ns / 1000, ns % 1000)
}
