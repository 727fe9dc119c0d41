//! Shuffle execution over a topology with per-link bit accounting.
//!
//! Switches only store, cut, reassemble and forward what they received.
//! Every emission is audited against the emitting switch's buffer before it
//! is charged to a link.

use std::collections::BTreeMap;

use num_traits::Zero;
use serde::Serialize;

use crate::bounds::l_star;
use crate::error::{Error, Result};
use crate::exact::{int, Rational};
use crate::frame::header_bits;
use crate::job::JobSpec;
use crate::shuffle::{useful_set, InfoBits, MessageKey, Piece, SubMessage, UsefulSet};
use crate::subset::ServerSet;
use crate::topology::{Layer, LinkId, NodeId, ServerMap, Shape, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
}

/// Per-link bit counters in both directions.
///
/// `*_bits` count every transmitted payload bit including zero padding;
/// `*_info` count the information content only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkLedger {
    up_bits: Vec<u64>,
    down_bits: Vec<u64>,
    up_info: Vec<InfoBits>,
    down_info: Vec<InfoBits>,
    frames: Vec<u64>,
}

impl LinkLedger {
    pub fn new(links: usize) -> Self {
        LinkLedger {
            up_bits: vec![0; links],
            down_bits: vec![0; links],
            up_info: vec![InfoBits::zero(); links],
            down_info: vec![InfoBits::zero(); links],
            frames: vec![0; links],
        }
    }

    pub fn links(&self) -> usize {
        self.up_bits.len()
    }

    pub fn charge(&mut self, link: LinkId, direction: Direction, msg: &SubMessage) {
        let bits = msg.len() as u64;
        match direction {
            Direction::Up => {
                self.up_bits[link] += bits;
                self.up_info[link] += msg.info;
            }
            Direction::Down => {
                self.down_bits[link] += bits;
                self.down_info[link] += msg.info;
            }
        }
        self.frames[link] += 1;
    }

    pub fn up_bits(&self, link: LinkId) -> u64 {
        self.up_bits[link]
    }

    pub fn down_bits(&self, link: LinkId) -> u64 {
        self.down_bits[link]
    }

    /// R_v = R_v^up + R_v^down.
    pub fn total_bits(&self, link: LinkId) -> u64 {
        self.up_bits[link] + self.down_bits[link]
    }

    pub fn info(&self, link: LinkId, direction: Direction) -> InfoBits {
        match direction {
            Direction::Up => self.up_info[link],
            Direction::Down => self.down_info[link],
        }
    }

    pub fn bits(&self, link: LinkId, direction: Direction) -> u64 {
        match direction {
            Direction::Up => self.up_bits[link],
            Direction::Down => self.down_bits[link],
        }
    }

    pub fn total_info(&self, link: LinkId) -> InfoBits {
        self.up_info[link] + self.down_info[link]
    }

    /// Zero-fill bits charged to `link`.
    pub fn padding(&self, link: LinkId) -> InfoBits {
        InfoBits::from_integer(self.total_bits(link)) - self.total_info(link)
    }

    pub fn frames(&self, link: LinkId) -> u64 {
        self.frames[link]
    }

    /// D = max_v R_v / (QNT), padding included.
    pub fn max_link_load(&self, job: &JobSpec) -> Rational {
        let max = (0..self.links()).map(|l| self.total_bits(l)).max().unwrap_or(0);
        int(max) / int(job.total_bits())
    }

    /// Max-link load with padding excluded.
    pub fn max_link_info(&self, job: &JobSpec) -> Rational {
        let max = (0..self.links()).map(|l| to_rational(self.total_info(l))).max().unwrap_or_else(Rational::zero);
        max / int(job.total_bits())
    }
}

pub fn to_rational(value: InfoBits) -> Rational {
    crate::exact::ratio(*value.numer(), *value.denom())
}

/// What one switch has received so far.
#[derive(Debug, Clone, Default)]
pub struct SwitchBuffer {
    received: BTreeMap<MessageKey, SubMessage>,
}

impl SwitchBuffer {
    pub fn receive(&mut self, msg: SubMessage) {
        self.received.insert(msg.key(), msg);
    }

    pub fn get(&self, key: &MessageKey) -> Option<&SubMessage> {
        self.received.get(key)
    }

    pub fn len(&self) -> usize {
        self.received.len()
    }

    pub fn is_empty(&self) -> bool {
        self.received.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &SubMessage> {
        self.received.values()
    }

    /// Distinct (sender, useful set) pairs held in any piece form.
    fn origins(&self) -> Vec<(usize, ServerSet)> {
        let mut out: Vec<(usize, ServerSet)> = self.received.keys().map(|k| (k.sender, k.useful)).collect();
        out.dedup();
        out
    }

    /// The payload for `key`, either held as is or reassembled from all
    /// `fanout` of its pieces.
    fn assemble(&self, key: MessageKey, fanout: usize) -> Option<SubMessage> {
        if let Some(msg) = self.received.get(&key) {
            return Some(msg.clone());
        }
        let pieces: Option<Vec<&SubMessage>> = (0..fanout)
            .map(|i| self.received.get(&MessageKey { piece: key.piece.child(i)?, ..key }))
            .collect();
        SubMessage::join(&pieces?)
    }

    /// Check that `msg` is bit-identical to a held payload, to a contiguous
    /// piece of one, or to the concatenation of held pieces.
    pub fn audit(&self, msg: &SubMessage, fanout: usize) -> std::result::Result<(), String> {
        let key = msg.key();
        if let Some(held) = self.received.get(&key) {
            return if held.payload == msg.payload {
                Ok(())
            } else {
                Err(format!("{key:?} differs from the held copy"))
            };
        }
        if let (Some(parent), Some(index)) = (key.piece.parent(), key.piece.sibling_index()) {
            if let Some(held) = self.received.get(&MessageKey { piece: parent, ..key }) {
                let len = msg.len();
                let start = index * len;
                return match held.payload.get(start..start + len) {
                    Some(slice) if slice == msg.payload.as_bitslice() && held.len() == len * fanout => Ok(()),
                    _ => Err(format!("{key:?} is not piece {index} of the held {parent:?}")),
                };
            }
        }
        if key.piece.child(0).is_none() {
            return Err(format!("{key:?} was never received"));
        }
        let mut offset = 0;
        for i in 0..fanout {
            let child = key.piece.child(i).expect("piece has children");
            let Some(held) = self.received.get(&MessageKey { piece: child, ..key }) else {
                return Err(format!("{key:?} needs {child:?}, never received"));
            };
            match msg.payload.get(offset..offset + held.len()) {
                Some(slice) if slice == held.payload.as_bitslice() => offset += held.len(),
                _ => return Err(format!("{key:?} does not match received {child:?}")),
            }
        }
        if offset == msg.len() {
            Ok(())
        } else {
            Err(format!("{key:?} is longer than its received pieces"))
        }
    }
}

/// Result of a complete shuffle.
#[derive(Debug, Clone)]
pub struct ShuffleOutcome {
    pub ledger: LinkLedger,
    /// Reassembled U_j per server, in arrival order.
    pub delivered: Vec<UsefulSet>,
    pub buffers: BTreeMap<NodeId, SwitchBuffer>,
    /// Number of switch emissions that passed the audit.
    pub audited: u64,
}

/// Moves sub-messages over links, charging the ledger and auditing every
/// switch emission.
struct Fabric<'a> {
    topology: &'a Topology,
    fanout: usize,
    ledger: LinkLedger,
    buffers: BTreeMap<NodeId, SwitchBuffer>,
    inbox: BTreeMap<NodeId, Vec<SubMessage>>,
    audited: u64,
}

impl<'a> Fabric<'a> {
    fn new(topology: &'a Topology, fanout: usize) -> Self {
        Fabric {
            topology,
            fanout,
            ledger: LinkLedger::new(topology.links().len()),
            buffers: topology.switches().map(|s| (s, SwitchBuffer::default())).collect(),
            inbox: BTreeMap::new(),
            audited: 0,
        }
    }

    fn send(&mut self, link: LinkId, direction: Direction, msg: SubMessage) -> Result<()> {
        let l = *self.topology.link(link);
        let (from, to) = match direction {
            Direction::Up => (l.lower, l.upper),
            Direction::Down => (l.upper, l.lower),
        };
        if let Some(buffer) = self.buffers.get(&from) {
            buffer.audit(&msg, self.fanout).map_err(|reason| Error::FlowViolation {
                switch: self.topology.label(from),
                reason,
            })?;
            self.audited += 1;
        }
        self.ledger.charge(link, direction, &msg);
        match self.buffers.get_mut(&to) {
            Some(buffer) => buffer.receive(msg),
            None => self.inbox.entry(to).or_default().push(msg),
        }
        Ok(())
    }

    fn buffer(&self, node: NodeId) -> &SwitchBuffer {
        &self.buffers[&node]
    }

    fn finish(mut self, servers: usize, slot_of: impl Fn(usize) -> NodeId) -> ShuffleOutcome {
        let delivered = (0..servers)
            .map(|k| UsefulSet { server: k, messages: self.inbox.remove(&slot_of(k)).unwrap_or_default() })
            .collect();
        ShuffleOutcome { ledger: self.ledger, delivered, buffers: self.buffers, audited: self.audited }
    }
}

fn check_senders(messages: &[SubMessage], servers: usize) -> Result<()> {
    match messages.iter().find(|m| m.sender >= servers || m.piece != Piece::Whole) {
        Some(m) => Err(Error::Delivery {
            server: m.sender,
            reason: format!("cannot inject {:?} into a {servers}-server shuffle", m.key()),
        }),
        None => Ok(()),
    }
}

/// Compare what each server received with the U_j computed from the sent
/// messages.
pub fn verify_delivery(messages: &[SubMessage], outcome: &ShuffleOutcome) -> Result<()> {
    for got in &outcome.delivered {
        let expected = useful_set(messages, got.server).canonical();
        let got = got.clone().canonical();
        if got != expected {
            return Err(Error::Delivery {
                server: got.server,
                reason: format!(
                    "received {} sub-messages ({} bits), expected {} ({} bits)",
                    got.messages.len(),
                    got.total_bits(),
                    expected.messages.len(),
                    expected.total_bits()
                ),
            });
        }
    }
    Ok(())
}

/// Every server sends T_k up to the switch; the switch sends U_j down to
/// every server j.
pub fn shuffle_star(messages: &[SubMessage], topology: &Topology) -> Result<ShuffleOutcome> {
    let Shape::Star { servers } = topology.shape() else {
        return Err(Error::Delivery { server: 0, reason: "shuffle_star needs a star topology".into() });
    };
    check_senders(messages, servers)?;
    let switch = servers;
    let mut fabric = Fabric::new(topology, 1);
    for msg in messages {
        fabric.send(msg.sender, Direction::Up, msg.clone())?;
    }
    for j in 0..servers {
        let outgoing: Vec<SubMessage> = fabric
            .buffer(switch)
            .iter()
            .filter(|m| m.sender != j && m.useful.contains(j))
            .cloned()
            .collect();
        for msg in outgoing {
            fabric.send(j, Direction::Down, msg)?;
        }
    }
    let outcome = fabric.finish(servers, |k| k);
    verify_delivery(messages, &outcome)?;
    Ok(outcome)
}

/// Switch state after the three uplink hops of a fat-tree shuffle.
pub struct UplinkState<'a> {
    fabric: Fabric<'a>,
    messages: Vec<SubMessage>,
}

impl UplinkState<'_> {
    pub fn ledger(&self) -> &LinkLedger {
        &self.fabric.ledger
    }

    pub fn buffer(&self, node: NodeId) -> Option<&SwitchBuffer> {
        self.fabric.buffers.get(&node)
    }
}

/// Servers send T_k to their edge; each edge cuts every sub-message into t/2
/// pieces, piece j to aggregation j; each aggregation cuts piece j into t/2
/// pieces, piece (j, d) to core (j, d).
pub fn uplink_fat_tree<'a>(
    messages: &[SubMessage],
    topology: &'a Topology,
    server_map: &ServerMap,
) -> Result<UplinkState<'a>> {
    let ix = topology
        .fat_tree_index()
        .ok_or_else(|| Error::Delivery { server: 0, reason: "uplink_fat_tree needs a fat-tree".into() })?;
    check_senders(messages, server_map.servers())?;
    let (t, h) = (ix.arity, ix.half());
    let mut fabric = Fabric::new(topology, h);

    let mut by_sender: Vec<Vec<&SubMessage>> = vec![Vec::new(); server_map.servers()];
    for msg in messages {
        by_sender[msg.sender].push(msg);
    }
    for slot in 0..ix.slots() {
        if let Some(k) = server_map.server_at(slot) {
            for msg in &by_sender[k] {
                fabric.send(ix.server_link(slot), Direction::Up, (*msg).clone())?;
            }
        }
    }

    for pod in 0..t {
        for p in 0..h {
            let whole: Vec<SubMessage> = fabric.buffer(ix.edge(pod, p)).iter().cloned().collect();
            for msg in whole {
                for (j, piece) in msg.split(h)?.into_iter().enumerate() {
                    fabric.send(ix.edge_aggregation_link(pod, p, j), Direction::Up, piece)?;
                }
            }
        }
    }

    for pod in 0..t {
        for j in 0..h {
            let halves: Vec<SubMessage> = fabric.buffer(ix.aggregation(pod, j)).iter().cloned().collect();
            for msg in halves {
                for (d, piece) in msg.split(h)?.into_iter().enumerate() {
                    fabric.send(ix.aggregation_core_link(pod, j, d), Direction::Up, piece)?;
                }
            }
        }
    }
    Ok(UplinkState { fabric, messages: messages.to_vec() })
}

/// Core (j, d) sends to aggregation (i, j) every piece (j, d) whose sender is
/// outside pod i and whose useful set meets pod i. Aggregation (i, j) sends
/// to edge (i, p) every piece j whose sender is not below that edge and whose
/// useful set meets it. Edge (i, p) sends U_w to each of its servers w.
pub fn downlink_fat_tree(state: UplinkState<'_>, server_map: &ServerMap) -> Result<ShuffleOutcome> {
    let UplinkState { mut fabric, messages } = state;
    let ix = fabric.topology.fat_tree_index().expect("uplink ran on a fat-tree");
    let (t, h) = (ix.arity, ix.half());

    let servers_in = |slots: std::ops::Range<usize>| -> ServerSet {
        slots.filter_map(|s| server_map.server_at(s)).collect()
    };
    let pod_servers: Vec<ServerSet> =
        (0..t).map(|i| servers_in(ix.slot(i, 0, 0)..ix.slot(i, 0, 0) + ix.slots_per_pod())).collect();
    let edge_servers = |i: usize, p: usize| servers_in(ix.slot(i, p, 0)..ix.slot(i, p, 0) + h);

    for j in 0..h {
        for d in 0..h {
            let core = ix.core(j, d);
            for (i, &pod) in pod_servers.iter().enumerate() {
                let outgoing: Vec<SubMessage> = fabric
                    .buffer(core)
                    .iter()
                    .filter(|m| !pod.contains(m.sender) && m.useful.intersects(pod))
                    .cloned()
                    .collect();
                for msg in outgoing {
                    fabric.send(ix.aggregation_core_link(i, j, d), Direction::Down, msg)?;
                }
            }
        }
    }

    for i in 0..t {
        for j in 0..h {
            let agg = ix.aggregation(i, j);
            for p in 0..h {
                let below = edge_servers(i, p);
                let mut outgoing = Vec::new();
                for (sender, useful) in fabric.buffer(agg).origins() {
                    if below.contains(sender) || !useful.intersects(below) {
                        continue;
                    }
                    let key = MessageKey { sender, useful, piece: Piece::Split(j) };
                    let msg = fabric.buffer(agg).assemble(key, h).ok_or_else(|| Error::FlowViolation {
                        switch: fabric.topology.label(agg),
                        reason: format!("cannot assemble {key:?}"),
                    })?;
                    outgoing.push(msg);
                }
                for msg in outgoing {
                    fabric.send(ix.edge_aggregation_link(i, p, j), Direction::Down, msg)?;
                }
            }
        }
    }

    for i in 0..t {
        for p in 0..h {
            let edge = ix.edge(i, p);
            for position in 0..h {
                let slot = ix.slot(i, p, position);
                let Some(w) = server_map.server_at(slot) else { continue };
                let mut outgoing = Vec::new();
                for (sender, useful) in fabric.buffer(edge).origins() {
                    if sender == w || !useful.contains(w) {
                        continue;
                    }
                    let key = MessageKey { sender, useful, piece: Piece::Whole };
                    let msg = fabric.buffer(edge).assemble(key, h).ok_or_else(|| Error::FlowViolation {
                        switch: fabric.topology.label(edge),
                        reason: format!("cannot assemble {key:?}"),
                    })?;
                    outgoing.push(msg);
                }
                for msg in outgoing {
                    fabric.send(ix.server_link(slot), Direction::Down, msg)?;
                }
            }
        }
    }

    let outcome = fabric.finish(server_map.servers(), |k| server_map.slot_of(k));
    verify_delivery(&messages, &outcome)?;
    Ok(outcome)
}

pub fn shuffle_fat_tree(messages: &[SubMessage], topology: &Topology, server_map: &ServerMap) -> Result<ShuffleOutcome> {
    downlink_fat_tree(uplink_fat_tree(messages, topology, server_map)?, server_map)
}

/// Heaviest link of one layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerLoad {
    pub layer: Layer,
    pub links: usize,
    /// max R_v / QNT over the layer, padding included.
    #[serde(serialize_with = "crate::exact::serialize_ratio")]
    pub max_load: Rational,
    /// Same with padding excluded.
    #[serde(serialize_with = "crate::exact::serialize_ratio")]
    pub max_info: Rational,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LoadSummary {
    /// D with padding.
    #[serde(serialize_with = "crate::exact::serialize_ratio")]
    pub max_link: Rational,
    /// D without padding.
    #[serde(serialize_with = "crate::exact::serialize_ratio")]
    pub max_link_info: Rational,
    /// Largest per-link padding share, normalized by QNT.
    #[serde(serialize_with = "crate::exact::serialize_ratio")]
    pub max_link_padding: Rational,
    pub layers: Vec<LayerLoad>,
    /// Σ over server links of R^up / QNT, padding excluded.
    #[serde(serialize_with = "crate::exact::serialize_ratio")]
    pub server_uplink: Rational,
    /// Σ over server links of R^down / QNT, padding excluded.
    #[serde(serialize_with = "crate::exact::serialize_ratio")]
    pub server_downlink: Rational,
    pub transmitted_bits: u64,
    /// Zero-fill bits summed over all links.
    #[serde(serialize_with = "crate::exact::serialize_ratio")]
    pub padding_bits: Rational,
    /// Frame header bits, reported but not part of any load.
    pub header_bits: u64,
}

fn is_server_layer(layer: Layer) -> bool {
    matches!(layer, Layer::ServerEdge | Layer::ServerSwitch)
}

pub fn ledger_summary(ledger: &LinkLedger, topology: &Topology, job: &JobSpec) -> LoadSummary {
    let qnt = int(job.total_bits());
    let mut layers: BTreeMap<Layer, LayerLoad> = BTreeMap::new();
    let mut server_uplink = Rational::zero();
    let mut server_downlink = Rational::zero();
    let mut padding_bits = Rational::zero();
    let mut max_padding = Rational::zero();
    let mut transmitted_bits = 0;
    let mut frames = 0;
    for link in topology.links() {
        let total = int(ledger.total_bits(link.id)) / &qnt;
        let info = to_rational(ledger.total_info(link.id)) / &qnt;
        let entry = layers.entry(link.layer).or_insert_with(|| LayerLoad {
            layer: link.layer,
            links: 0,
            max_load: Rational::zero(),
            max_info: Rational::zero(),
        });
        entry.links += 1;
        entry.max_load = entry.max_load.clone().max(total);
        entry.max_info = entry.max_info.clone().max(info);
        if is_server_layer(link.layer) {
            server_uplink += to_rational(ledger.info(link.id, Direction::Up));
            server_downlink += to_rational(ledger.info(link.id, Direction::Down));
        }
        let pad = to_rational(ledger.padding(link.id));
        max_padding = max_padding.max(&pad / &qnt);
        padding_bits += pad;
        transmitted_bits += ledger.total_bits(link.id);
        frames += ledger.frames(link.id);
    }
    LoadSummary {
        max_link: ledger.max_link_load(job),
        max_link_info: ledger.max_link_info(job),
        max_link_padding: max_padding,
        layers: layers.into_values().collect(),
        server_uplink: server_uplink / &qnt,
        server_downlink: server_downlink / &qnt,
        transmitted_bits,
        padding_bits,
        header_bits: frames * header_bits(job.servers()) as u64,
    }
}

/// One quantified per-link bound: every link of `layer` in `direction`
/// carries at most `bound_bits` information bits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BoundCheck {
    pub name: String,
    pub layer: Layer,
    pub direction: Direction,
    pub links: usize,
    #[serde(serialize_with = "crate::exact::serialize_ratio")]
    pub bound_bits: Rational,
    #[serde(serialize_with = "crate::exact::serialize_ratio")]
    pub worst_bits: Rational,
    pub violations: usize,
    pub pass: bool,
}

/// Per-link uplink bound L*(r)·QNT/K.
pub fn uplink_bound_bits(job: &JobSpec) -> Result<Rational> {
    Ok(l_star(job.servers(), job.load(), job.reducers())? * int(job.total_bits()) / int(job.servers() as u64))
}

/// Per-link downlink bound (N − rN/K)·QsT/K = |U_j|.
pub fn downlink_bound_bits(job: &JobSpec) -> Rational {
    let (k, r, s) = (int(job.servers() as u64), int(job.load() as u64), int(job.reducers() as u64));
    let n = int(job.files() as u64);
    let missing = &n - &r * &n / &k;
    missing * int(job.functions() as u64) * s * int(job.value_bits() as u64) / k
}

/// Quantify every per-link bound over every link of the topology.
pub fn check_link_bounds(ledger: &LinkLedger, topology: &Topology, job: &JobSpec) -> Result<Vec<BoundCheck>> {
    let up = uplink_bound_bits(job)?;
    let down = downlink_bound_bits(job);
    let classes: &[(Layer, Direction, &str)] = match topology.shape() {
        Shape::Star { .. } => &[
            (Layer::ServerSwitch, Direction::Up, "uplink server->switch"),
            (Layer::ServerSwitch, Direction::Down, "downlink switch->server"),
        ],
        Shape::FatTree { .. } => &[
            (Layer::ServerEdge, Direction::Up, "uplink server->edge"),
            (Layer::EdgeAggregation, Direction::Up, "uplink edge->aggregation"),
            (Layer::AggregationCore, Direction::Up, "uplink aggregation->core"),
            (Layer::AggregationCore, Direction::Down, "downlink core->aggregation"),
            (Layer::EdgeAggregation, Direction::Down, "downlink aggregation->edge"),
            (Layer::ServerEdge, Direction::Down, "downlink edge->server"),
        ],
    };
    Ok(classes
        .iter()
        .map(|&(layer, direction, name)| {
            let bound = match direction {
                Direction::Up => up.clone(),
                Direction::Down => down.clone(),
            };
            let loads: Vec<Rational> = topology
                .links()
                .iter()
                .filter(|l| l.layer == layer)
                .map(|l| to_rational(ledger.info(l.id, direction)))
                .collect();
            let violations = loads.iter().filter(|v| **v > bound).count();
            BoundCheck {
                name: name.to_string(),
                layer,
                direction,
                links: loads.len(),
                worst_bits: loads.into_iter().max().unwrap_or_else(Rational::zero),
                bound_bits: bound,
                violations,
                pass: violations == 0,
            }
        })
        .collect())
}
