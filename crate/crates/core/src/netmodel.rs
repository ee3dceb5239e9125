//! Topology documents, validation, and the rooted spanning tree that every
//! probing strategy walks.
//!
//! Port 0 of every switch is the host/CPU attachment point. Network ports are
//! numbered `1..=ports`; when a link endpoint omits its port, ports are handed
//! out in ascending order of the neighbor's name.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::Deserialize;
use thiserror::Error;

pub const DEFAULT_NQ: u8 = 2;
pub const DEFAULT_QUEUE_CAPACITY: u32 = 64;
pub const DEFAULT_BANDWIDTH_BPS: u64 = 10_000_000;
pub const DEFAULT_DELAY_US: u64 = 50;
/// Logical queues per port supported by the reference software switch.
pub const SOFT_QUEUE_LIMIT: u8 = 8;
/// Bytes of register memory per (port, queue) slot.
pub const SLOT_BYTES: u64 = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Issue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed topology document: {0}")]
    Syntax(String),
    #[error("invalid topology:\n{}", format_issues(.0))]
    Invalid(Vec<Issue>),
    #[error("unknown root switch {0:?}")]
    UnknownRoot(String),
    #[error("topology is disconnected; unreachable from the root: {}", .0.join(", "))]
    Disconnected(Vec<String>),
}

fn format_issues(issues: &[Issue]) -> String {
    issues
        .iter()
        .map(|i| format!("  {i}"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum HostRole {
    Generator,
    Collector,
    Traffic,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwitchSpec {
    pub name: String,
    /// Number of network ports (1..=ports). Port 0 is not counted.
    pub ports: u8,
    pub nq: u8,
    pub queue_capacity: u32,
    pub queue_weights: Vec<u32>,
}

impl SwitchSpec {
    pub fn register_memory_bytes(&self) -> u64 {
        SLOT_BYTES * self.ports as u64 * self.nq as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Endpoint {
    pub switch: String,
    pub port: u8,
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.switch, self.port)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkSpec {
    pub a: Endpoint,
    pub b: Endpoint,
    pub bandwidth_bps: u64,
    pub delay_us: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HostSpec {
    pub name: String,
    pub switch: String,
    pub role: HostRole,
}

/// A validated network description. Switches are kept sorted by name, so a
/// switch's index doubles as its stable numeric identifier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopologySpec {
    pub name: String,
    pub root: String,
    pub switches: Vec<SwitchSpec>,
    pub links: Vec<LinkSpec>,
    pub hosts: Vec<HostSpec>,
    pub warnings: Vec<String>,
}

/// One network-facing port of a switch and what sits on the other end.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    pub port: u8,
    pub neighbor: String,
    pub neighbor_port: u8,
    pub link: usize,
}

impl TopologySpec {
    pub fn switch_index(&self, name: &str) -> Option<usize> {
        self.switches
            .binary_search_by(|s| s.name.as_str().cmp(name))
            .ok()
    }

    pub fn switch(&self, name: &str) -> Option<&SwitchSpec> {
        self.switch_index(name).map(|i| &self.switches[i])
    }

    pub fn host(&self, name: &str) -> Option<&HostSpec> {
        self.hosts.iter().find(|h| h.name == name)
    }

    /// Linked ports of `switch`, ascending by port.
    pub fn adjacencies(&self, switch: &str) -> Vec<Adjacency> {
        let mut out: Vec<Adjacency> = self
            .links
            .iter()
            .enumerate()
            .filter_map(|(i, l)| {
                if l.a.switch == switch {
                    Some(Adjacency {
                        port: l.a.port,
                        neighbor: l.b.switch.clone(),
                        neighbor_port: l.b.port,
                        link: i,
                    })
                } else if l.b.switch == switch {
                    Some(Adjacency {
                        port: l.b.port,
                        neighbor: l.a.switch.clone(),
                        neighbor_port: l.a.port,
                        link: i,
                    })
                } else {
                    None
                }
            })
            .collect();
        out.sort_by_key(|a| a.port);
        out
    }

    pub fn has_collector(&self, switch: &str) -> bool {
        self.hosts
            .iter()
            .any(|h| h.switch == switch && h.role == HostRole::Collector)
    }

    pub fn register_memory_bytes(&self) -> u64 {
        self.switches.iter().map(|s| s.register_memory_bytes()).sum()
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTopology {
    #[serde(default)]
    name: Option<String>,
    root: String,
    switches: Vec<RawSwitch>,
    #[serde(default)]
    links: Vec<RawLink>,
    #[serde(default)]
    hosts: Vec<RawHost>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSwitch {
    name: String,
    ports: Option<i64>,
    nq: Option<i64>,
    queue_capacity: Option<i64>,
    queue_weights: Option<Vec<i64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLink {
    a: String,
    b: String,
    bandwidth_bps: Option<i64>,
    delay_us: Option<i64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHost {
    name: String,
    switch: String,
    role: String,
}

pub fn load_topology_file(path: impl AsRef<Path>) -> Result<TopologySpec, TopologyError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| TopologyError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_topology(&text)
}

/// Parses and validates a TOML topology document. Semantic problems are
/// collected and reported together.
pub fn load_topology(document: &str) -> Result<TopologySpec, TopologyError> {
    let raw: RawTopology =
        toml::from_str(document).map_err(|e| TopologyError::Syntax(e.to_string()))?;
    let mut issues = Vec::new();
    let mut warnings = Vec::new();

    let mut seen = BTreeSet::new();
    for (i, s) in raw.switches.iter().enumerate() {
        if s.name.is_empty() || s.name.contains('.') {
            issues.push(issue(
                format!("switches[{i}].name"),
                "switch names must be non-empty and must not contain '.'",
            ));
        }
        if !seen.insert(s.name.clone()) {
            issues.push(issue(
                format!("switches[{i}].name"),
                format!("duplicate switch {:?}", s.name),
            ));
        }
    }

    // endpoints, with the auto-assigned ones left as None for now
    let mut endpoints: Vec<[(String, Option<u8>); 2]> = Vec::new();
    for (i, l) in raw.links.iter().enumerate() {
        let a = parse_endpoint(&l.a, &format!("links[{i}].a"), &seen, &mut issues);
        let b = parse_endpoint(&l.b, &format!("links[{i}].b"), &seen, &mut issues);
        if let (Some(a), Some(b)) = (a, b) {
            if a.0 == b.0 {
                issues.push(issue(format!("links[{i}]"), format!("self-loop on {}", a.0)));
            }
            endpoints.push([a, b]);
        } else {
            endpoints.push([(String::new(), None), (String::new(), None)]);
        }
    }

    // explicit ports first, then fill the gaps by neighbor name
    let mut used: BTreeMap<String, BTreeMap<u8, String>> = BTreeMap::new();
    for (i, pair) in endpoints.iter().enumerate() {
        for (side, (sw, port)) in pair.iter().enumerate() {
            if let Some(p) = port {
                let slot = used.entry(sw.clone()).or_default();
                let label = format!("links[{i}].{}", ["a", "b"][side]);
                if let Some(prev) = slot.insert(*p, label.clone()) {
                    issues.push(issue(
                        label,
                        format!("port {sw}.{p} already used by {prev}"),
                    ));
                }
            }
        }
    }
    let mut pending: BTreeMap<String, Vec<(String, usize, usize)>> = BTreeMap::new();
    for (i, pair) in endpoints.iter().enumerate() {
        for side in 0..2 {
            let (sw, port) = &pair[side];
            if port.is_none() && !sw.is_empty() {
                let neighbor = pair[1 - side].0.clone();
                pending
                    .entry(sw.clone())
                    .or_default()
                    .push((neighbor, i, side));
            }
        }
    }
    for (sw, mut list) in pending {
        list.sort();
        let slot = used.entry(sw.clone()).or_default();
        let mut next = 1u16;
        for (_, i, side) in list {
            while slot.contains_key(&(next as u8)) && next <= 255 {
                next += 1;
            }
            if next > 255 {
                issues.push(issue(
                    format!("links[{i}]"),
                    format!("switch {sw} has no free port left"),
                ));
                break;
            }
            slot.insert(next as u8, format!("links[{i}]"));
            endpoints[i][side].1 = Some(next as u8);
        }
    }

    let mut switches = Vec::new();
    for (i, s) in raw.switches.iter().enumerate() {
        let max_used = used
            .get(&s.name)
            .and_then(|m| m.keys().next_back().copied())
            .unwrap_or(0);
        let ports = match s.ports {
            None => max_used,
            Some(p) if !(0..=255).contains(&p) => {
                issues.push(issue(format!("switches[{i}].ports"), "must be in 0..=255"));
                max_used
            }
            Some(p) => {
                if (p as u8) < max_used {
                    issues.push(issue(
                        format!("switches[{i}].ports"),
                        format!("declares {p} ports but a link uses port {max_used}"),
                    ));
                }
                p as u8
            }
        };
        let nq = match s.nq {
            None => DEFAULT_NQ,
            Some(q) if !(1..=255).contains(&q) => {
                issues.push(issue(format!("switches[{i}].nq"), "must be in 1..=255"));
                1
            }
            Some(q) => q as u8,
        };
        if nq > SOFT_QUEUE_LIMIT {
            warnings.push(format!(
                "switches[{i}].nq: {nq} queues per port exceeds the {SOFT_QUEUE_LIMIT} supported by software switches"
            ));
        }
        let queue_capacity = match s.queue_capacity {
            None => DEFAULT_QUEUE_CAPACITY,
            Some(c) if c < 1 || c > u32::MAX as i64 => {
                issues.push(issue(
                    format!("switches[{i}].queue_capacity"),
                    "must be a positive packet count",
                ));
                1
            }
            Some(c) => c as u32,
        };
        let queue_weights = match &s.queue_weights {
            None => vec![1; nq as usize],
            Some(w) => {
                if w.len() != nq as usize {
                    issues.push(issue(
                        format!("switches[{i}].queue_weights"),
                        format!("expected {nq} weights, found {}", w.len()),
                    ));
                }
                for (k, &x) in w.iter().enumerate() {
                    if x < 1 || x > u32::MAX as i64 {
                        issues.push(issue(
                            format!("switches[{i}].queue_weights[{k}]"),
                            "weights must be positive",
                        ));
                    }
                }
                w.iter().map(|&x| x.clamp(1, u32::MAX as i64) as u32).collect()
            }
        };
        switches.push(SwitchSpec {
            name: s.name.clone(),
            ports,
            nq,
            queue_capacity,
            queue_weights,
        });
    }
    switches.sort_by(|a, b| a.name.cmp(&b.name));

    let mut links = Vec::new();
    for (i, (l, pair)) in raw.links.iter().zip(&endpoints).enumerate() {
        let bandwidth_bps = match l.bandwidth_bps {
            None => DEFAULT_BANDWIDTH_BPS,
            Some(b) if b <= 0 => {
                issues.push(issue(format!("links[{i}].bandwidth_bps"), "must be positive"));
                DEFAULT_BANDWIDTH_BPS
            }
            Some(b) => b as u64,
        };
        let delay_us = match l.delay_us {
            None => DEFAULT_DELAY_US,
            Some(d) if d < 0 => {
                issues.push(issue(format!("links[{i}].delay_us"), "must be non-negative"));
                0
            }
            Some(d) => d as u64,
        };
        if let [(a, Some(pa)), (b, Some(pb))] = pair {
            links.push(LinkSpec {
                a: Endpoint {
                    switch: a.clone(),
                    port: *pa,
                },
                b: Endpoint {
                    switch: b.clone(),
                    port: *pb,
                },
                bandwidth_bps,
                delay_us,
            });
        }
    }

    let mut hosts = Vec::new();
    let mut host_names = BTreeSet::new();
    for (i, h) in raw.hosts.iter().enumerate() {
        if !host_names.insert(h.name.clone()) {
            issues.push(issue(
                format!("hosts[{i}].name"),
                format!("duplicate host {:?}", h.name),
            ));
        }
        if !seen.contains(&h.switch) {
            issues.push(issue(
                format!("hosts[{i}].switch"),
                format!("unknown switch {:?}", h.switch),
            ));
        }
        let role = match h.role.as_str() {
            "generator" => HostRole::Generator,
            "collector" => HostRole::Collector,
            "traffic" => HostRole::Traffic,
            other => {
                issues.push(issue(
                    format!("hosts[{i}].role"),
                    format!("unknown role {other:?} (expected generator, collector or traffic)"),
                ));
                HostRole::Traffic
            }
        };
        hosts.push(HostSpec {
            name: h.name.clone(),
            switch: h.switch.clone(),
            role,
        });
    }

    if !seen.contains(&raw.root) {
        issues.push(issue("root", format!("unknown switch {:?}", raw.root)));
    }
    if raw.switches.is_empty() {
        issues.push(issue("switches", "at least one switch is required"));
    }

    if !issues.is_empty() {
        return Err(TopologyError::Invalid(issues));
    }
    Ok(TopologySpec {
        name: raw.name.unwrap_or_else(|| "topology".to_string()),
        root: raw.root,
        switches,
        links,
        hosts,
        warnings,
    })
}

fn issue(path: impl Into<String>, message: impl Into<String>) -> Issue {
    Issue {
        path: path.into(),
        message: message.into(),
    }
}

fn parse_endpoint(
    text: &str,
    path: &str,
    switches: &BTreeSet<String>,
    issues: &mut Vec<Issue>,
) -> Option<(String, Option<u8>)> {
    let (sw, port) = match text.split_once('.') {
        None => (text, None),
        Some((sw, p)) => match p.parse::<u8>() {
            Ok(0) => {
                issues.push(issue(path, "port 0 is reserved for the host attachment"));
                return None;
            }
            Ok(p) => (sw, Some(p)),
            Err(_) => {
                issues.push(issue(path, format!("invalid port in endpoint {text:?}")));
                return None;
            }
        },
    };
    if !switches.contains(sw) {
        issues.push(issue(path, format!("unknown switch {sw:?}")));
        return None;
    }
    Some((sw.to_string(), port))
}

/// Tree ports of one switch.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TreePorts {
    pub parent_port: Option<u8>,
    /// (port, child) pairs ascending by port.
    pub child_ports: Vec<(u8, String)>,
}

/// A rooted spanning tree over the topology.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tree {
    pub root: String,
    /// Switches in breadth-first order from the root.
    pub order: Vec<String>,
    pub parent: BTreeMap<String, Option<String>>,
    pub children: BTreeMap<String, Vec<String>>,
    pub leaves: Vec<String>,
    pub ports: BTreeMap<String, TreePorts>,
}

impl Tree {
    pub fn is_leaf(&self, switch: &str) -> bool {
        self.children.get(switch).is_some_and(|c| c.is_empty())
    }

    /// Directed (parent, child) edges in breadth-first order.
    pub fn edges(&self) -> Vec<(String, String)> {
        self.order
            .iter()
            .flat_map(|p| {
                self.children[p]
                    .iter()
                    .map(move |c| (p.clone(), c.clone()))
            })
            .collect()
    }

    /// Switches from the root down to `switch`, inclusive.
    pub fn path_from_root(&self, switch: &str) -> Vec<String> {
        let mut path = vec![switch.to_string()];
        let mut cur = switch;
        while let Some(Some(p)) = self.parent.get(cur) {
            path.push(p.clone());
            cur = p;
        }
        path.reverse();
        path
    }

    /// Unique tree path between two switches, endpoints included.
    pub fn path_between(&self, from: &str, to: &str) -> Vec<String> {
        let up = self.path_from_root(from);
        let down = self.path_from_root(to);
        let common = up.iter().zip(&down).take_while(|(a, b)| a == b).count();
        let mut path: Vec<String> = up[common - 1..].iter().rev().cloned().collect();
        path.extend(down[common..].iter().cloned());
        path
    }

    /// Port on `from` leading to the adjacent tree switch `to`.
    pub fn port_towards(&self, from: &str, to: &str) -> Option<u8> {
        let ports = self.ports.get(from)?;
        if self.parent.get(from).and_then(|p| p.as_deref()) == Some(to) {
            return ports.parent_port;
        }
        ports
            .child_ports
            .iter()
            .find(|(_, c)| c == to)
            .map(|(p, _)| *p)
    }
}

/// Breadth-first spanning tree from `root`, visiting neighbors in ascending
/// name order. Where parallel links exist the lowest local port wins.
pub fn to_tree(spec: &TopologySpec, root: &str) -> Result<Tree, TopologyError> {
    if spec.switch(root).is_none() {
        return Err(TopologyError::UnknownRoot(root.to_string()));
    }
    let mut parent: BTreeMap<String, Option<String>> = BTreeMap::new();
    let mut children: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut ports: BTreeMap<String, TreePorts> = BTreeMap::new();
    let mut order = Vec::new();
    let mut queue = VecDeque::new();

    parent.insert(root.to_string(), None);
    queue.push_back(root.to_string());
    while let Some(u) = queue.pop_front() {
        order.push(u.clone());
        let mut adj = spec.adjacencies(&u);
        adj.sort_by(|a, b| (&a.neighbor, a.port).cmp(&(&b.neighbor, b.port)));
        let mut kids = Vec::new();
        for a in adj {
            if parent.contains_key(&a.neighbor) {
                continue;
            }
            parent.insert(a.neighbor.clone(), Some(u.clone()));
            ports.entry(u.clone()).or_default().child_ports.push((a.port, a.neighbor.clone()));
            ports.entry(a.neighbor.clone()).or_default().parent_port = Some(a.neighbor_port);
            kids.push(a.neighbor.clone());
            queue.push_back(a.neighbor);
        }
        children.insert(u, kids);
    }

    let unreachable: Vec<String> = spec
        .switches
        .iter()
        .filter(|s| !parent.contains_key(&s.name))
        .map(|s| s.name.clone())
        .collect();
    if !unreachable.is_empty() {
        return Err(TopologyError::Disconnected(unreachable));
    }
    for s in &order {
        ports.entry(s.clone()).or_default().child_ports.sort();
    }
    let leaves = spec
        .switches
        .iter()
        .filter(|s| children[&s.name].is_empty())
        .map(|s| s.name.clone())
        .collect();
    Ok(Tree {
        root: root.to_string(),
        order,
        parent,
        children,
        leaves,
        ports,
    })
}

/// Random tree of `switches` switches named S00, S01, ... and rooted at S00.
/// Each switch after the first hangs off a uniformly chosen earlier one. The
/// root and every leaf get a collector host.
pub fn random_tree<R: Rng + ?Sized>(rng: &mut R, switches: usize, nq: u8) -> TopologySpec {
    assert!(switches >= 1);
    let name = |i: usize| format!("S{i:02}");
    let mut doc = String::from("root = \"S00\"\n");
    let mut parent_of = vec![None; switches];
    for (i, p) in parent_of.iter_mut().enumerate().skip(1) {
        *p = Some(rng.random_range(0..i));
    }
    for i in 0..switches {
        doc += &format!("[[switches]]\nname = \"{}\"\nnq = {nq}\n", name(i));
    }
    for (i, p) in parent_of.iter().enumerate() {
        if let Some(p) = p {
            doc += &format!("[[links]]\na = \"{}\"\nb = \"{}\"\n", name(*p), name(i));
        }
    }
    for i in 0..switches {
        let leaf = !parent_of.contains(&Some(i));
        if i == 0 || leaf {
            doc += &format!(
                "[[hosts]]\nname = \"c{i:02}\"\nswitch = \"{}\"\nrole = \"collector\"\n",
                name(i)
            );
        }
    }
    load_topology(&doc).expect("generated trees are valid")
}
