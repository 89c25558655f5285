//! Attributed scene graphs: frame graphs, temporal concatenation and mirroring.
//!
//! A graph is the triple `(u, V, E)`. Node attributes are one-hot object
//! classes (optionally followed by extra features), edge attributes are
//! multi-hot over the 15 spatial relations plus one temporal slot, and the
//! global attribute is either absent (all zeros) or a one-hot action label.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::relations::RelationSet;
use crate::tracking::TrackedBox;
use crate::vocab::{ActionLabel, ObjectClass, RelationKind, EDGE_WIDTH, TEMPORAL_SLOT};

/// Edge attribute: either a set of spatial relations or a temporal link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeAttr {
    Spatial(RelationSet),
    Temporal,
}

impl EdgeAttr {
    pub fn new(relations: RelationSet, temporal: bool) -> Result<Self> {
        match (temporal, relations.is_empty()) {
            (false, _) => Ok(EdgeAttr::Spatial(relations)),
            (true, true) => Ok(EdgeAttr::Temporal),
            (true, false) => Err(Error::InvalidArgument(format!(
                "temporal edge cannot carry spatial relations {relations}"
            ))),
        }
    }

    pub fn is_temporal(self) -> bool {
        matches!(self, EdgeAttr::Temporal)
    }

    /// Bit mask over the 16 edge slots.
    pub fn slot_bits(self) -> u16 {
        match self {
            EdgeAttr::Spatial(rs) => rs.bits(),
            EdgeAttr::Temporal => 1 << TEMPORAL_SLOT,
        }
    }

    pub fn slots(self) -> Vec<usize> {
        let bits = self.slot_bits();
        (0..EDGE_WIDTH).filter(|i| bits & (1 << i) != 0).collect()
    }

    pub fn from_slots(slots: &[usize]) -> Result<Self> {
        let mut bits = 0u16;
        for &s in slots {
            if s >= EDGE_WIDTH {
                return Err(Error::Schema(format!("edge slot {s} out of range")));
            }
            bits |= 1 << s;
        }
        let temporal = bits & (1 << TEMPORAL_SLOT) != 0;
        let spatial = RelationSet::from_bits(bits & !(1 << TEMPORAL_SLOT)).expect("masked to 15 bits");
        EdgeAttr::new(spatial, temporal).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn encode(self) -> [f64; EDGE_WIDTH] {
        let bits = self.slot_bits();
        std::array::from_fn(|i| if bits & (1 << i) != 0 { 1.0 } else { 0.0 })
    }
}

pub fn encode_action(a: ActionLabel) -> [f64; ActionLabel::COUNT] {
    std::array::from_fn(|i| if i == a.index() { 1.0 } else { 0.0 })
}

pub fn encode_object(c: ObjectClass) -> [f64; ObjectClass::COUNT] {
    std::array::from_fn(|i| if i == c.index() { 1.0 } else { 0.0 })
}

/// Multi-hot edge encoding; errors when a temporal edge is given spatial relations.
pub fn encode_relations(rs: RelationSet, temporal: bool) -> Result<[f64; EDGE_WIDTH]> {
    Ok(EdgeAttr::new(rs, temporal)?.encode())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Node {
    pub class: ObjectClass,
    #[serde(rename = "instance")]
    pub instance_id: u32,
    pub frame: usize,
    /// Smoothed box centroid (mm). Metadata, not part of the node attribute.
    pub position: Vec3,
    /// Extra node features appended after the one-hot class.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra: Vec<f64>,
}

impl Node {
    pub fn attribute(&self) -> Vec<f64> {
        let mut v = encode_object(self.class).to_vec();
        v.extend_from_slice(&self.extra);
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub attr: EdgeAttr,
    pub sender: usize,
    pub receiver: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneGraph {
    /// `None` encodes the all-zero global attribute.
    pub u: Option<ActionLabel>,
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
}

impl SceneGraph {
    pub fn global_attribute(&self) -> [f64; ActionLabel::COUNT] {
        match self.u {
            Some(a) => encode_action(a),
            None => [0.0; ActionLabel::COUNT],
        }
    }

    pub fn spatial_edge_count(&self) -> usize {
        self.edges.iter().filter(|e| !e.attr.is_temporal()).count()
    }

    pub fn temporal_edge_count(&self) -> usize {
        self.edges.iter().filter(|e| e.attr.is_temporal()).count()
    }

    /// Width of every node attribute (14 plus extra features).
    pub fn node_width(&self) -> usize {
        ObjectClass::COUNT + self.nodes.first().map_or(0, |n| n.extra.len())
    }

    /// Check the structural invariants of the graph.
    pub fn validate(&self) -> Result<()> {
        let extra = self.nodes.first().map_or(0, |n| n.extra.len());
        for (i, n) in self.nodes.iter().enumerate() {
            if n.extra.len() != extra {
                return Err(Error::Schema(format!("node {i} has {} extra features, expected {extra}", n.extra.len())));
            }
            if n.extra.iter().any(|v| !v.is_finite()) {
                return Err(Error::Schema(format!("node {i} has non-finite features")));
            }
        }
        for (k, e) in self.edges.iter().enumerate() {
            if e.sender >= self.nodes.len() || e.receiver >= self.nodes.len() {
                return Err(Error::Schema(format!("edge {k} references a missing node")));
            }
            if e.sender == e.receiver {
                return Err(Error::Schema(format!("edge {k} is a self loop")));
            }
            if e.attr.is_temporal() {
                let (s, r) = (&self.nodes[e.sender], &self.nodes[e.receiver]);
                if s.instance_id != r.instance_id || s.frame >= r.frame {
                    return Err(Error::Schema(format!("temporal edge {k} does not link one instance forward in time")));
                }
            } else if self.nodes[e.sender].frame != self.nodes[e.receiver].frame {
                return Err(Error::Schema(format!("spatial edge {k} crosses frames")));
            }
        }
        Ok(())
    }
}

/// One node per tracked object and one directed edge `i -> j` for every
/// ordered pair whose relation set (i relative to j) is non-empty.
pub fn build_frame_graph<F>(tracked: &[TrackedBox], frame: usize, mut relate: F) -> Result<SceneGraph>
where
    F: FnMut(&TrackedBox, &TrackedBox) -> RelationSet,
{
    let mut seen = std::collections::HashSet::new();
    for t in tracked {
        if !seen.insert(t.instance_id) {
            return Err(Error::InvalidArgument(format!("duplicate instance id {}", t.instance_id)));
        }
    }
    let nodes = tracked
        .iter()
        .map(|t| Node {
            class: t.class,
            instance_id: t.instance_id,
            frame,
            position: t.bbox.centroid(),
            extra: Vec::new(),
        })
        .collect();
    let mut edges = Vec::new();
    for (i, a) in tracked.iter().enumerate() {
        for (j, b) in tracked.iter().enumerate() {
            if i == j {
                continue;
            }
            let rs = relate(a, b);
            if !rs.is_empty() {
                edges.push(Edge { attr: EdgeAttr::Spatial(rs), sender: i, receiver: j });
            }
        }
    }
    Ok(SceneGraph { u: None, nodes, edges })
}

/// Merge consecutive frame graphs (oldest first) into one graph.
///
/// All nodes and spatial edges are kept; each instance present in two
/// consecutive graphs gets a temporal edge from its older to its newer node.
/// The global attribute is taken from the newest graph.
pub fn temporal_concat(graphs: &[SceneGraph], window: usize) -> Result<SceneGraph> {
    if graphs.is_empty() {
        return Err(Error::InvalidArgument("temporal concatenation of an empty sequence".into()));
    }
    if graphs.len() > window {
        return Err(Error::InvalidArgument(format!(
            "{} graphs exceed the concatenation window {window}",
            graphs.len()
        )));
    }
    let mut out = SceneGraph { u: graphs[graphs.len() - 1].u, ..Default::default() };
    let mut prev: HashMap<u32, usize> = HashMap::new();
    for g in graphs {
        let offset = out.nodes.len();
        out.nodes.extend(g.nodes.iter().cloned());
        out.edges.extend(g.edges.iter().map(|e| Edge {
            attr: e.attr,
            sender: e.sender + offset,
            receiver: e.receiver + offset,
        }));
        let mut current = HashMap::with_capacity(g.nodes.len());
        for (i, n) in g.nodes.iter().enumerate() {
            current.insert(n.instance_id, offset + i);
            if let Some(&p) = prev.get(&n.instance_id) {
                out.edges.push(Edge { attr: EdgeAttr::Temporal, sender: p, receiver: offset + i });
            }
        }
        prev = current;
    }
    Ok(out)
}

/// Swap the hand classes and the left/right relation slots.
pub fn mirror(g: &SceneGraph) -> SceneGraph {
    SceneGraph {
        u: g.u,
        nodes: g
            .nodes
            .iter()
            .map(|n| Node { class: n.class.mirrored(), ..n.clone() })
            .collect(),
        edges: g
            .edges
            .iter()
            .map(|e| Edge {
                attr: match e.attr {
                    EdgeAttr::Spatial(rs) => EdgeAttr::Spatial(rs.mirrored()),
                    EdgeAttr::Temporal => EdgeAttr::Temporal,
                },
                ..*e
            })
            .collect(),
    }
}

// ---------------------------------------------------------------------------
// Line-delimited serialization
// ---------------------------------------------------------------------------

pub const GRAPH_FORMAT: &str = "bimanual-scene-graphs";
pub const GRAPH_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphFileHeader {
    pub format: String,
    pub version: u32,
    pub recording: String,
    pub fps: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeRecord {
    s: usize,
    r: usize,
    slots: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphRecord {
    u: Option<ActionLabel>,
    nodes: Vec<Node>,
    edges: Vec<EdgeRecord>,
}

impl From<&SceneGraph> for GraphRecord {
    fn from(g: &SceneGraph) -> Self {
        GraphRecord {
            u: g.u,
            nodes: g.nodes.clone(),
            edges: g
                .edges
                .iter()
                .map(|e| EdgeRecord { s: e.sender, r: e.receiver, slots: e.attr.slots() })
                .collect(),
        }
    }
}

impl TryFrom<GraphRecord> for SceneGraph {
    type Error = Error;

    fn try_from(rec: GraphRecord) -> Result<Self> {
        let edges = rec
            .edges
            .into_iter()
            .map(|e| Ok(Edge { attr: EdgeAttr::from_slots(&e.slots)?, sender: e.s, receiver: e.r }))
            .collect::<Result<Vec<_>>>()?;
        let g = SceneGraph { u: rec.u, nodes: rec.nodes, edges };
        g.validate()?;
        Ok(g)
    }
}

/// Serialize one graph as a single JSON line (no trailing newline).
pub fn graph_to_line(g: &SceneGraph) -> String {
    serde_json::to_string(&GraphRecord::from(g)).expect("graph records always serialize")
}

pub fn graph_from_line(line: &str) -> Result<SceneGraph> {
    let rec: GraphRecord = serde_json::from_str(line).map_err(|e| Error::Malformed { line: 0, message: e.to_string() })?;
    SceneGraph::try_from(rec)
}

pub fn write_graphs<W: Write>(mut w: W, header: &GraphFileHeader, graphs: &[SceneGraph]) -> std::io::Result<()> {
    writeln!(w, "{}", serde_json::to_string(header).expect("header serializes"))?;
    for g in graphs {
        writeln!(w, "{}", graph_to_line(g))?;
    }
    w.flush()
}

pub fn read_graphs<R: BufRead>(r: R) -> Result<(GraphFileHeader, Vec<SceneGraph>)> {
    let mut lines = r.lines().enumerate();
    let header = match lines.next() {
        Some((_, line)) => {
            let line = line.map_err(|e| Error::Malformed { line: 1, message: e.to_string() })?;
            let h: GraphFileHeader = serde_json::from_str(&line)
                .map_err(|e| Error::Malformed { line: 1, message: e.to_string() })?;
            if h.format != GRAPH_FORMAT || h.version != GRAPH_FORMAT_VERSION {
                return Err(Error::Schema(format!("unsupported graph file {} v{}", h.format, h.version)));
            }
            h
        }
        None => return Err(Error::Malformed { line: 1, message: "missing header".into() }),
    };
    let mut graphs = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| Error::Malformed { line: i + 1, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let g = graph_from_line(&line).map_err(|e| match e {
            Error::Malformed { message, .. } => Error::Malformed { line: i + 1, message },
            other => other,
        })?;
        graphs.push(g);
    }
    Ok((header, graphs))
}

/// Count of `(class, relation set, class)` triples, used for isomorphism checks.
pub fn edge_signature(g: &SceneGraph) -> Vec<(ObjectClass, u16, ObjectClass)> {
    let mut sig: Vec<_> = g
        .edges
        .iter()
        .map(|e| (g.nodes[e.sender].class, e.attr.slot_bits(), g.nodes[e.receiver].class))
        .collect();
    sig.sort();
    sig
}

/// Relation slots of a spatial edge masked to `keep`; temporal edges untouched.
pub fn mask_relations(g: &SceneGraph, keep: RelationSet) -> SceneGraph {
    SceneGraph {
        edges: g
            .edges
            .iter()
            .map(|e| Edge {
                attr: match e.attr {
                    EdgeAttr::Spatial(rs) => EdgeAttr::Spatial(rs.intersection(keep)),
                    EdgeAttr::Temporal => EdgeAttr::Temporal,
                },
                ..*e
            })
            .collect(),
        ..g.clone()
    }
}

pub fn single(kind: RelationKind) -> RelationSet {
    RelationSet::EMPTY.with(kind)
}
