//! Star and t-ary fat-tree topologies.
//!
//! Node and link ids are dense 0-based indices. Fat-tree coordinates (pod,
//! edge, aggregation, core and slot positions) are 0-based internally and
//! 1-based in labels and exports.
//!
//! Fat-tree node order: server slots (pod, edge, position), then edges
//! (pod, p), then aggregations (pod, j), then cores. Link order: server-edge
//! by slot, then edge-aggregation by (pod, p, j), then aggregation-core by
//! (pod, j, d).

use std::collections::VecDeque;

use serde::Serialize;

use crate::error::{Error, Result};

pub type NodeId = usize;
pub type LinkId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeKind {
    /// Server position w_{pod, edge, position}; star servers use pod 0, edge 0.
    Server { pod: usize, edge: usize, position: usize },
    Edge { pod: usize, index: usize },
    Aggregation { pod: usize, index: usize },
    Core { index: usize },
    Switch,
}

impl NodeKind {
    pub fn is_switch(self) -> bool {
        !matches!(self, NodeKind::Server { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layer {
    ServerSwitch,
    ServerEdge,
    EdgeAggregation,
    AggregationCore,
}

impl Layer {
    pub fn name(self) -> &'static str {
        match self {
            Layer::ServerSwitch => "server-switch",
            Layer::ServerEdge => "server-edge",
            Layer::EdgeAggregation => "edge-aggregation",
            Layer::AggregationCore => "aggregation-core",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Link {
    pub id: LinkId,
    pub lower: NodeId,
    pub upper: NodeId,
    pub layer: Layer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Star { servers: usize },
    FatTree { arity: usize },
}

#[derive(Debug, Clone)]
pub struct Topology {
    shape: Shape,
    nodes: Vec<NodeKind>,
    links: Vec<Link>,
    incident: Vec<Vec<LinkId>>,
}

/// Smallest even t ≥ 2 with t³/4 ≥ K.
pub fn choose_arity(servers: usize) -> usize {
    let mut t = 2;
    while t * t * t / 4 < servers {
        t += 2;
    }
    t
}

/// One server per link to a single K-port switch.
pub fn build_star(servers: usize) -> Topology {
    let mut nodes: Vec<NodeKind> =
        (0..servers).map(|k| NodeKind::Server { pod: 0, edge: 0, position: k }).collect();
    nodes.push(NodeKind::Switch);
    let links = (0..servers)
        .map(|k| Link { id: k, lower: k, upper: servers, layer: Layer::ServerSwitch })
        .collect();
    Topology::assemble(Shape::Star { servers }, nodes, links)
}

pub fn build_fat_tree(arity: usize) -> Result<Topology> {
    if arity < 2 || !arity.is_multiple_of(2) {
        return Err(Error::Arity(arity));
    }
    let half = arity / 2;
    let mut nodes = Vec::with_capacity(arity * arity * arity / 4 + 5 * arity * arity / 4);
    for pod in 0..arity {
        for edge in 0..half {
            for position in 0..half {
                nodes.push(NodeKind::Server { pod, edge, position });
            }
        }
    }
    for pod in 0..arity {
        for index in 0..half {
            nodes.push(NodeKind::Edge { pod, index });
        }
    }
    for pod in 0..arity {
        for index in 0..half {
            nodes.push(NodeKind::Aggregation { pod, index });
        }
    }
    for index in 0..half * half {
        nodes.push(NodeKind::Core { index });
    }

    let index = FatTreeIndex { arity };
    let mut links = Vec::with_capacity(3 * arity * arity * arity / 4);
    let mut push = |lower, upper, layer| {
        let id = links.len();
        links.push(Link { id, lower, upper, layer });
    };
    for pod in 0..arity {
        for edge in 0..half {
            for position in 0..half {
                push(index.slot(pod, edge, position), index.edge(pod, edge), Layer::ServerEdge);
            }
        }
    }
    for pod in 0..arity {
        for edge in 0..half {
            for agg in 0..half {
                push(index.edge(pod, edge), index.aggregation(pod, agg), Layer::EdgeAggregation);
            }
        }
    }
    for pod in 0..arity {
        for agg in 0..half {
            for d in 0..half {
                push(index.aggregation(pod, agg), index.core(agg, d), Layer::AggregationCore);
            }
        }
    }
    Ok(Topology::assemble(Shape::FatTree { arity }, nodes, links))
}

/// Index arithmetic for the canonical fat-tree numbering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FatTreeIndex {
    pub arity: usize,
}

impl FatTreeIndex {
    pub fn half(&self) -> usize {
        self.arity / 2
    }

    pub fn slots(&self) -> usize {
        self.arity * self.half() * self.half()
    }

    pub fn slots_per_pod(&self) -> usize {
        self.half() * self.half()
    }

    pub fn slot(&self, pod: usize, edge: usize, position: usize) -> NodeId {
        (pod * self.half() + edge) * self.half() + position
    }

    /// (pod, edge, position) of a slot node.
    pub fn slot_coords(&self, slot: NodeId) -> (usize, usize, usize) {
        let h = self.half();
        (slot / (h * h), slot / h % h, slot % h)
    }

    pub fn edge(&self, pod: usize, p: usize) -> NodeId {
        self.slots() + pod * self.half() + p
    }

    pub fn aggregation(&self, pod: usize, j: usize) -> NodeId {
        self.slots() + self.arity * self.half() + pod * self.half() + j
    }

    /// Core c_{j·t/2 + d}: the d-th core above aggregation column j.
    pub fn core(&self, j: usize, d: usize) -> NodeId {
        self.slots() + 2 * self.arity * self.half() + j * self.half() + d
    }

    pub fn server_link(&self, slot: NodeId) -> LinkId {
        slot
    }

    pub fn edge_aggregation_link(&self, pod: usize, p: usize, j: usize) -> LinkId {
        self.slots() + (pod * self.half() + p) * self.half() + j
    }

    pub fn aggregation_core_link(&self, pod: usize, j: usize, d: usize) -> LinkId {
        2 * self.slots() + (pod * self.half() + j) * self.half() + d
    }
}

impl Topology {
    fn assemble(shape: Shape, nodes: Vec<NodeKind>, links: Vec<Link>) -> Self {
        let mut incident = vec![Vec::new(); nodes.len()];
        for link in &links {
            incident[link.lower].push(link.id);
            incident[link.upper].push(link.id);
        }
        Topology { shape, nodes, links, incident }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn arity(&self) -> Option<usize> {
        match self.shape {
            Shape::FatTree { arity } => Some(arity),
            Shape::Star { .. } => None,
        }
    }

    pub fn fat_tree_index(&self) -> Option<FatTreeIndex> {
        self.arity().map(|arity| FatTreeIndex { arity })
    }

    pub fn nodes(&self) -> &[NodeKind] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> NodeKind {
        self.nodes[id]
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id]
    }

    pub fn degree(&self, id: NodeId) -> usize {
        self.incident[id].len()
    }

    pub fn server_slots(&self) -> usize {
        self.nodes.iter().filter(|n| !n.is_switch()).count()
    }

    pub fn switches(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len()).filter(|&id| self.nodes[id].is_switch())
    }

    pub fn count(&self, pred: impl Fn(&NodeKind) -> bool) -> usize {
        self.nodes.iter().filter(|n| pred(n)).count()
    }

    fn neighbours(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.incident[id].iter().map(move |&l| {
            let link = &self.links[l];
            if link.lower == id {
                link.upper
            } else {
                link.lower
            }
        })
    }

    /// Hop count and number of distinct shortest paths from `from` to `to`.
    pub fn shortest_paths(&self, from: NodeId, to: NodeId) -> Option<(usize, u64)> {
        let mut dist = vec![usize::MAX; self.nodes.len()];
        let mut ways = vec![0u64; self.nodes.len()];
        dist[from] = 0;
        ways[from] = 1;
        let mut queue = VecDeque::from([from]);
        while let Some(u) = queue.pop_front() {
            for v in self.neighbours(u) {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
                if dist[v] == dist[u] + 1 {
                    ways[v] += ways[u];
                }
            }
        }
        (dist[to] != usize::MAX).then(|| (dist[to], ways[to]))
    }

    pub fn is_connected(&self) -> bool {
        (0..self.nodes.len()).all(|id| self.shortest_paths(0, id).is_some())
    }

    pub fn label(&self, id: NodeId) -> String {
        match self.nodes[id] {
            NodeKind::Server { pod, edge, position } => match self.shape {
                Shape::Star { .. } => format!("server{}", position + 1),
                Shape::FatTree { .. } => format!("w{}.{}.{}", pod + 1, edge + 1, position + 1),
            },
            NodeKind::Edge { pod, index } => format!("e{}.{}", pod + 1, index + 1),
            NodeKind::Aggregation { pod, index } => format!("a{}.{}", pod + 1, index + 1),
            NodeKind::Core { index } => format!("c{}", index + 1),
            NodeKind::Switch => "switch".to_string(),
        }
    }

    pub fn export(&self) -> TopologyExport {
        let nodes = self
            .nodes
            .iter()
            .enumerate()
            .map(|(id, kind)| {
                let (kind_name, pod, index) = match *kind {
                    NodeKind::Server { pod, edge, position } => match self.shape {
                        Shape::Star { .. } => ("server", None, position + 1),
                        Shape::FatTree { arity } => ("server", Some(pod + 1), edge * (arity / 2) + position + 1),
                    },
                    NodeKind::Edge { pod, index } => ("edge", Some(pod + 1), index + 1),
                    NodeKind::Aggregation { pod, index } => ("aggregation", Some(pod + 1), index + 1),
                    NodeKind::Core { index } => ("core", None, index + 1),
                    NodeKind::Switch => ("switch", None, 1),
                };
                NodeExport { id, kind: kind_name, pod, index, label: self.label(id) }
            })
            .collect();
        let links = self
            .links
            .iter()
            .map(|l| LinkExport { id: l.id, lower: l.lower, upper: l.upper, layer: l.layer.name() })
            .collect();
        TopologyExport { arity: self.arity(), nodes, links }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.export())?)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TopologyExport {
    pub arity: Option<usize>,
    pub nodes: Vec<NodeExport>,
    pub links: Vec<LinkExport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct NodeExport {
    pub id: NodeId,
    #[serde(rename = "type")]
    pub kind: &'static str,
    /// 1-based pod, absent for cores and the star switch.
    pub pod: Option<usize>,
    /// 1-based index within the pod (servers: slot within the pod).
    pub index: usize,
    pub label: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct LinkExport {
    pub id: LinkId,
    pub lower: NodeId,
    pub upper: NodeId,
    pub layer: &'static str,
}

/// Server slot occupancy: slot i holds server `slots[i]` or nothing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerMap {
    slots: Vec<Option<usize>>,
    placed: Vec<NodeId>,
}

impl ServerMap {
    pub fn slots(&self) -> &[Option<usize>] {
        &self.slots
    }

    pub fn server_at(&self, slot: NodeId) -> Option<usize> {
        self.slots.get(slot).copied().flatten()
    }

    pub fn slot_of(&self, server: usize) -> NodeId {
        self.placed[server]
    }

    pub fn servers(&self) -> usize {
        self.placed.len()
    }

    pub fn is_full(&self) -> bool {
        self.slots.iter().all(Option::is_some)
    }
}

/// Fill the first K slots from the left with servers 0..K.
pub fn place_servers(topology: &Topology, servers: usize) -> Result<ServerMap> {
    let capacity = topology.server_slots();
    if servers > capacity {
        return Err(Error::Capacity { servers, slots: capacity });
    }
    let slots = (0..capacity).map(|i| (i < servers).then_some(i)).collect();
    Ok(ServerMap { slots, placed: (0..servers).collect() })
}
