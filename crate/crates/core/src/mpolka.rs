//! Polynomial source routing for multicast trees.
//!
//! Every switch owns an irreducible `nodeID`. The transmission state of a
//! switch is a bit vector over its ports (bit `p` set means "send a copy out
//! of port `p`"), and a single `routeID` carries every switch's state at once
//! as the CRT combination of the per-switch residues. A switch recovers its
//! state with one polynomial remainder.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::gf2poly::{crt_combine, is_irreducible, Poly, PolyError};
use crate::netmodel::{TopologySpec, Tree};

/// Width of the routeID field in probe headers.
pub const ROUTE_ID_BITS: usize = 256;
pub const ROUTE_ID_BYTES: usize = ROUTE_ID_BITS / 8;

#[derive(Debug, Error)]
pub enum RoutingError {
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error("no nodeID assigned to switch {0}")]
    MissingNodeId(String),
    #[error("switch {switch}: t_state has {found} bits, nodeID degree is {expected}")]
    WidthMismatch {
        switch: String,
        expected: usize,
        found: usize,
    },
    #[error("port {port} does not fit a {width}-bit t_state")]
    PortOutOfRange { port: u8, width: usize },
    #[error("switch {0} is not part of the tree")]
    NotInTree(String),
    #[error(
        "routeID needs {bits} bits but the header field holds {ROUTE_ID_BITS}; \
         encode fewer switches or use lower-degree nodeIDs"
    )]
    Overflow { bits: usize },
}

/// The irreducible modulus bound to one switch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeId {
    pub switch: String,
    pub poly: Poly,
}

impl NodeId {
    pub fn degree(&self) -> usize {
        self.poly.degree().unwrap_or(0)
    }
}

/// Per-switch transmission state: bit `p` set means port `p` transmits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TState {
    bits: Poly,
    width: usize,
}

impl TState {
    pub fn empty(width: usize) -> Self {
        TState {
            bits: Poly::zero(),
            width,
        }
    }

    pub fn from_ports(width: usize, ports: impl IntoIterator<Item = u8>) -> Result<Self, RoutingError> {
        let mut bits = Poly::zero();
        for port in ports {
            if port as usize >= width {
                return Err(RoutingError::PortOutOfRange { port, width });
            }
            bits.set_bit(port as usize, true);
        }
        Ok(TState { bits, width })
    }

    pub fn from_poly(bits: Poly, width: usize) -> Result<Self, RoutingError> {
        if bits.bit_len() > width {
            return Err(RoutingError::PortOutOfRange {
                port: bits.degree().unwrap_or(0).min(255) as u8,
                width,
            });
        }
        Ok(TState { bits, width })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn as_poly(&self) -> &Poly {
        &self.bits
    }

    pub fn is_set(&self, port: u8) -> bool {
        self.bits.bit(port as usize)
    }
}

impl fmt::Display for TState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.bits.to_padded_binary(self.width))
    }
}

/// A multicast route label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct RouteId(Poly);

impl RouteId {
    pub fn new(poly: Poly) -> Result<Self, RoutingError> {
        if poly.bit_len() > ROUTE_ID_BITS {
            return Err(RoutingError::Overflow {
                bits: poly.bit_len(),
            });
        }
        Ok(RouteId(poly))
    }

    pub fn as_poly(&self) -> &Poly {
        &self.0
    }

    pub fn to_bytes(&self) -> [u8; ROUTE_ID_BYTES] {
        let mut out = [0u8; ROUTE_ID_BYTES];
        out.copy_from_slice(&self.0.to_be_bytes(ROUTE_ID_BYTES).expect("width checked on construction"));
        out
    }

    pub fn from_bytes(bytes: &[u8; ROUTE_ID_BYTES]) -> Self {
        RouteId(Poly::from_be_bytes(bytes))
    }
}

impl fmt::Display for RouteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Hands out irreducibles of a given degree in ascending order, remembering
/// where each degree's scan stopped.
#[derive(Debug, Default)]
struct IrreduciblePool {
    cursors: BTreeMap<usize, Poly>,
}

impl IrreduciblePool {
    fn take(&mut self, degree: usize) -> Result<Option<Poly>, PolyError> {
        let cursor = self
            .cursors
            .entry(degree)
            .or_insert_with(|| Poly::monomial(degree));
        while cursor.degree() == Some(degree) {
            let candidate = cursor.clone();
            *cursor = successor(&candidate);
            if is_irreducible(&candidate)? {
                return Ok(Some(candidate));
            }
        }
        Ok(None)
    }
}

/// Binary increment of the coefficient vector.
fn successor(p: &Poly) -> Poly {
    let mut out = p.clone();
    let mut i = 0;
    while out.bit(i) {
        out.set_bit(i, false);
        i += 1;
    }
    out.set_bit(i, true);
    out
}

/// Assigns every switch the smallest unused irreducible whose degree exceeds
/// its highest port index, visiting switches in ascending name order. When a
/// degree is exhausted the next degree up is used.
pub fn assign_node_ids(spec: &TopologySpec) -> Result<BTreeMap<String, NodeId>, RoutingError> {
    let mut pool = IrreduciblePool::default();
    let mut out = BTreeMap::new();
    for sw in &spec.switches {
        let mut degree = sw.ports as usize + 1;
        let poly = loop {
            if let Some(p) = pool.take(degree)? {
                break p;
            }
            degree += 1;
        };
        out.insert(
            sw.name.clone(),
            NodeId {
                switch: sw.name.clone(),
                poly,
            },
        );
    }
    Ok(out)
}

/// Transmission states that push a packet from the root towards every leaf:
/// each switch transmits on its child ports. Leaves get an all-zero state.
pub fn forward_states(
    tree: &Tree,
    node_ids: &BTreeMap<String, NodeId>,
) -> Result<BTreeMap<String, TState>, RoutingError> {
    tree.order
        .iter()
        .map(|sw| {
            let node = node_ids
                .get(sw)
                .ok_or_else(|| RoutingError::MissingNodeId(sw.clone()))?;
            let ports = tree.ports[sw].child_ports.iter().map(|(p, _)| *p);
            Ok((sw.clone(), TState::from_ports(node.degree(), ports)?))
        })
        .collect()
}

/// Builds the routeID whose remainder at every tree switch is that switch's
/// state. Tree switches without an entry in `states` are encoded as
/// all-zero (drop) states.
pub fn encode_tree(
    tree: &Tree,
    node_ids: &BTreeMap<String, NodeId>,
    states: &BTreeMap<String, TState>,
) -> Result<RouteId, RoutingError> {
    if let Some(stray) = states.keys().find(|s| !tree.parent.contains_key(*s)) {
        return Err(RoutingError::NotInTree(stray.clone()));
    }
    let mut system = Vec::with_capacity(tree.order.len());
    for sw in &tree.order {
        let node = node_ids
            .get(sw)
            .ok_or_else(|| RoutingError::MissingNodeId(sw.clone()))?;
        let residue = match states.get(sw) {
            Some(state) => {
                if state.width() != node.degree() {
                    return Err(RoutingError::WidthMismatch {
                        switch: sw.clone(),
                        expected: node.degree(),
                        found: state.width(),
                    });
                }
                state.as_poly().clone()
            }
            None => Poly::zero(),
        };
        system.push((node.poly.clone(), residue));
    }
    RouteId::new(crt_combine(&system)?)
}

/// The transmission state a switch reads out of a routeID.
pub fn compute_t_state(route: &RouteId, node: &NodeId) -> TState {
    let rem = route
        .as_poly()
        .rem(&node.poly)
        .expect("nodeIDs are nonzero");
    TState {
        bits: rem,
        width: node.degree(),
    }
}

/// Transmitting network ports in ascending order. Port 0 is never listed.
pub fn active_ports(state: &TState) -> Vec<u8> {
    state
        .as_poly()
        .ones()
        .filter(|&p| p != 0)
        .map(|p| p as u8)
        .collect()
}
