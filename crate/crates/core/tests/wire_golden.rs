use mmint::gf2poly::Poly;
use mmint::mpolka::RouteId;
use mmint::telemetry::{
    parse_probe, serialize_probe, switch_mac, IntProbe, Probe, SrProbe, TelemetrySlot,
    BROADCAST_MAC, INT_INSTRUCTIONS,
};

fn golden(name: &str) -> Vec<u8> {
    let path = format!("{}/tests/golden/{name}", env!("CARGO_MANIFEST_DIR"));
    let text = std::fs::read_to_string(&path).unwrap();
    text.lines()
        .map(|l| l.split('#').next().unwrap())
        .flat_map(str::split_whitespace)
        .map(|b| u8::from_str_radix(b, 16).unwrap())
        .collect()
}

fn route() -> RouteId {
    RouteId::new(Poly::parse_binary("1011011").unwrap()).unwrap()
}

fn slot(switch_id: u16, port: u8, queue: u8, e: u16, d: u16, dt: u32, ts: u32) -> TelemetrySlot {
    TelemetrySlot {
        switch_id,
        port,
        queue,
        enq_qdepth: e,
        deq_qdepth: d,
        deq_timedelta: dt,
        enq_timestamp: ts,
    }
}

fn check(name: &str, probe: Probe, len: usize) {
    let bytes = golden(name);
    assert_eq!(bytes.len(), len, "{name}");
    assert_eq!(serialize_probe(&probe).unwrap(), bytes, "{name}");
    assert_eq!(parse_probe(&bytes).unwrap(), probe, "{name}");
}

#[test]
fn queue_cloning_probe() {
    let probe = Probe::Sr(SrProbe {
        dst_mac: BROADCAST_MAC,
        src_mac: switch_mac(0),
        route_id: route(),
        probe_id: 1 << 16 | 2,
        gen_timestamp: 1000,
        origin_switch: 0,
        target_queue: Some(1),
        slots: vec![slot(0, 2, 1, 3, 1, 800, 1000)],
    });
    check("sr_queue_one_slot.hex", probe, 75);
}

#[test]
fn hop_by_hop_probe() {
    let probe = Probe::Int(IntProbe {
        dst_mac: BROADCAST_MAC,
        src_mac: switch_mac(3),
        version: 2,
        flags: 0,
        max_hops: 3,
        probe_id: 7,
        gen_timestamp: 0,
        instruction_bitmap: INT_INSTRUCTIONS,
        reserved: 0,
        slots: vec![slot(3, 1, 0, 0, 0, 80, 0), slot(4, 1, 0, 2, 1, 400, 130)],
    });
    check("int_two_hops.hex", probe, 61);
}

#[test]
fn register_dump_probe() {
    let probe = Probe::Sr(SrProbe {
        dst_mac: BROADCAST_MAC,
        src_mac: switch_mac(0),
        route_id: route(),
        probe_id: 0,
        gen_timestamp: 5000,
        origin_switch: 0,
        target_queue: None,
        slots: vec![
            slot(0, 1, 0, 4, 3, 2400, 4100),
            TelemetrySlot::empty(0, 1, 1),
            slot(0, 2, 0, 0, 0, 0, 4990),
            slot(0, 2, 1, u16::MAX, 258, 65536, u32::MAX),
        ],
    });
    check("sr_dump_two_ports.hex", probe, 122);
}

#[test]
fn truncated_golden_fails_with_offsets() {
    let bytes = golden("sr_dump_two_ports.hex");
    let err = parse_probe(&bytes[..121]).unwrap_err().to_string();
    assert!(err.contains("offset 46"), "{err}");
    let err = parse_probe(&bytes[..30]).unwrap_err().to_string();
    assert!(err.contains("58"), "{err}");
}
