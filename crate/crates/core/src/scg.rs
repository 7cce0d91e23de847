//! Semantic causal graphs.
//!
//! A graph partitions its nodes into context, trigger and type classes and
//! keeps one edge set per edge class (context→trigger, trigger→trigger,
//! trigger→type). Every trigger has exactly one outgoing trigger→type edge and
//! the trigger→trigger edges form a DAG.
//!
//! The causal subgraph drops the context class and its edges; it is what the
//! instruction generator serializes.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use petgraph::algo::tarjan_scc;
use petgraph::graphmap::DiGraphMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{AnnotatedDocument, CharSpan, EventMention};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

pub type Edge = (NodeId, NodeId);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeClass {
    Context,
    Trigger,
    Type,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeClass {
    ContextTrigger,
    TriggerTrigger,
    TriggerType,
}

impl EdgeClass {
    pub fn endpoints(self) -> (NodeClass, NodeClass) {
        match self {
            EdgeClass::ContextTrigger => (NodeClass::Context, NodeClass::Trigger),
            EdgeClass::TriggerTrigger => (NodeClass::Trigger, NodeClass::Trigger),
            EdgeClass::TriggerType => (NodeClass::Trigger, NodeClass::Type),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextNode {
    pub span: CharSpan,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerNode {
    pub text: String,
    pub span: CharSpan,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeNode {
    pub label: String,
}

/// A structural rule broken by a graph. Violations are data, not failures.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Violation {
    /// The same id appears in more than one node class.
    NodeClassOverlap { node: NodeId, classes: Vec<NodeClass> },
    /// An edge whose endpoints do not belong to the classes its edge set requires.
    EndpointClassMismatch { class: EdgeClass, edge: Edge },
    MissingTypeEdge { trigger: NodeId },
    MultipleTypeEdges { trigger: NodeId, targets: Vec<NodeId> },
    /// Trigger→trigger edges forming a directed cycle (self-loops included).
    CausalCycle { nodes: Vec<NodeId> },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NodeClassOverlap { node, classes } => {
                write!(f, "node {node} belongs to several classes {classes:?}")
            }
            Violation::EndpointClassMismatch { class, edge } => {
                let (from, to) = class.endpoints();
                write!(f, "{class:?} edge {}→{} must go {from:?}→{to:?}", edge.0, edge.1)
            }
            Violation::MissingTypeEdge { trigger } => write!(f, "trigger {trigger} has no type edge"),
            Violation::MultipleTypeEdges { trigger, targets } => {
                write!(f, "trigger {trigger} has {} type edges", targets.len())
            }
            Violation::CausalCycle { nodes } => {
                let ids: Vec<_> = nodes.iter().map(ToString::to_string).collect();
                write!(f, "trigger cycle through {}", ids.join(", "))
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GraphRecord", into = "GraphRecord")]
pub struct SemanticCausalGraph {
    pub source_doc_id: String,
    pub context_nodes: BTreeMap<NodeId, ContextNode>,
    pub trigger_nodes: BTreeMap<NodeId, TriggerNode>,
    pub type_nodes: BTreeMap<NodeId, TypeNode>,
    pub edges_co_et: BTreeSet<Edge>,
    pub edges_et_et: BTreeSet<Edge>,
    pub edges_et_ey: BTreeSet<Edge>,
}

/// Builds the graph of one annotated document.
///
/// One context node spans the whole text, one trigger node is created per
/// gold mention and one type node per distinct event type. No trigger→trigger
/// edges are produced because the corpora carry no chain annotations.
pub fn build_scg(doc: &AnnotatedDocument) -> Result<SemanticCausalGraph> {
    doc.validate()?;
    let mut g = SemanticCausalGraph {
        source_doc_id: doc.doc_id.clone(),
        ..Default::default()
    };
    let context = NodeId(0);
    g.context_nodes.insert(
        context,
        ContextNode {
            span: CharSpan::new(0, doc.text.chars().count()),
        },
    );

    let mut next = 1u32;
    let mut trigger_ids = Vec::with_capacity(doc.events.len());
    for m in &doc.events {
        let id = NodeId(next);
        next += 1;
        g.trigger_nodes.insert(
            id,
            TriggerNode {
                text: m.trigger_text.clone(),
                span: m.trigger_span,
            },
        );
        g.edges_co_et.insert((context, id));
        trigger_ids.push(id);
    }

    let mut type_ids: HashMap<&str, NodeId> = HashMap::new();
    for (m, &trigger) in doc.events.iter().zip(&trigger_ids) {
        let ty = *type_ids.entry(m.event_type.as_str()).or_insert_with(|| {
            let id = NodeId(next);
            next += 1;
            g.type_nodes.insert(
                id,
                TypeNode {
                    label: m.event_type.clone(),
                },
            );
            id
        });
        g.edges_et_ey.insert((trigger, ty));
    }
    Ok(g)
}

impl SemanticCausalGraph {
    pub fn class_of(&self, id: NodeId) -> Vec<NodeClass> {
        let mut out = Vec::new();
        if self.context_nodes.contains_key(&id) {
            out.push(NodeClass::Context);
        }
        if self.trigger_nodes.contains_key(&id) {
            out.push(NodeClass::Trigger);
        }
        if self.type_nodes.contains_key(&id) {
            out.push(NodeClass::Type);
        }
        out
    }

    fn has_class(&self, id: NodeId, class: NodeClass) -> bool {
        match class {
            NodeClass::Context => self.context_nodes.contains_key(&id),
            NodeClass::Trigger => self.trigger_nodes.contains_key(&id),
            NodeClass::Type => self.type_nodes.contains_key(&id),
        }
    }

    fn well_typed(&self, class: EdgeClass, (from, to): Edge) -> bool {
        let (a, b) = class.endpoints();
        self.has_class(from, a) && self.has_class(to, b)
    }

    pub fn edges(&self, class: EdgeClass) -> &BTreeSet<Edge> {
        match class {
            EdgeClass::ContextTrigger => &self.edges_co_et,
            EdgeClass::TriggerTrigger => &self.edges_et_et,
            EdgeClass::TriggerType => &self.edges_et_ey,
        }
    }

    pub fn node_count(&self) -> usize {
        self.context_nodes.len() + self.trigger_nodes.len() + self.type_nodes.len()
    }

    /// Lists every broken structural rule; empty iff the graph is valid.
    ///
    /// Ill-typed edges are reported once as `EndpointClassMismatch` and are
    /// otherwise ignored, so one injected defect yields one violation.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();

        let ids: BTreeSet<NodeId> = self
            .context_nodes
            .keys()
            .chain(self.trigger_nodes.keys())
            .chain(self.type_nodes.keys())
            .copied()
            .collect();
        for id in ids {
            let classes = self.class_of(id);
            if classes.len() > 1 {
                out.push(Violation::NodeClassOverlap { node: id, classes });
            }
        }

        for class in [EdgeClass::ContextTrigger, EdgeClass::TriggerTrigger, EdgeClass::TriggerType] {
            for &edge in self.edges(class) {
                if !self.well_typed(class, edge) {
                    out.push(Violation::EndpointClassMismatch { class, edge });
                }
            }
        }

        let mut targets: BTreeMap<NodeId, Vec<NodeId>> = self.trigger_nodes.keys().map(|&t| (t, Vec::new())).collect();
        for &edge in &self.edges_et_ey {
            if self.well_typed(EdgeClass::TriggerType, edge) {
                targets.entry(edge.0).or_default().push(edge.1);
            }
        }
        for (trigger, targets) in targets {
            match targets.len() {
                0 => out.push(Violation::MissingTypeEdge { trigger }),
                1 => {}
                _ => out.push(Violation::MultipleTypeEdges { trigger, targets }),
            }
        }

        let mut chain: DiGraphMap<NodeId, ()> = DiGraphMap::new();
        for &(a, b) in &self.edges_et_et {
            if self.well_typed(EdgeClass::TriggerTrigger, (a, b)) {
                chain.add_edge(a, b, ());
            }
        }
        for mut component in tarjan_scc(&chain) {
            let cyclic = component.len() > 1 || chain.contains_edge(component[0], component[0]);
            if cyclic {
                component.sort();
                out.push(Violation::CausalCycle { nodes: component });
            }
        }
        out
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_empty()
    }

    /// Restricts a valid graph to its trigger and type nodes and the edges among them.
    pub fn causal_subgraph(&self) -> Result<CausalSubgraph> {
        let violations = self.validate();
        if !violations.is_empty() {
            return Err(Error::InvalidGraph(violations));
        }
        Ok(CausalSubgraph {
            source_doc_id: self.source_doc_id.clone(),
            trigger_nodes: self.trigger_nodes.clone(),
            type_nodes: self.type_nodes.clone(),
            edges_et_et: self.edges_et_et.clone(),
            edges_et_ey: self.edges_et_ey.clone(),
        })
    }

    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        Ok(serde_json::from_str(line)?)
    }
}

/// Trigger and type nodes of a graph, with the chain and typing edges.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CausalSubgraph {
    pub source_doc_id: String,
    pub trigger_nodes: BTreeMap<NodeId, TriggerNode>,
    pub type_nodes: BTreeMap<NodeId, TypeNode>,
    pub edges_et_et: BTreeSet<Edge>,
    pub edges_et_ey: BTreeSet<Edge>,
}

impl CausalSubgraph {
    pub fn type_of(&self, trigger: NodeId) -> Option<&TypeNode> {
        self.edges_et_ey
            .iter()
            .find(|(t, _)| *t == trigger)
            .and_then(|(_, ty)| self.type_nodes.get(ty))
    }

    /// Reads the (trigger, type) pairs back out as mentions.
    pub fn mentions(&self) -> Vec<EventMention> {
        self.edges_et_ey
            .iter()
            .filter_map(|(t, ty)| {
                let trigger = self.trigger_nodes.get(t)?;
                let ty = self.type_nodes.get(ty)?;
                Some(EventMention {
                    trigger_text: trigger.text.clone(),
                    trigger_span: trigger.span,
                    event_type: ty.label.clone(),
                })
            })
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.trigger_nodes.is_empty() && self.type_nodes.is_empty()
    }
}

impl From<CausalSubgraph> for SemanticCausalGraph {
    fn from(s: CausalSubgraph) -> Self {
        SemanticCausalGraph {
            source_doc_id: s.source_doc_id,
            context_nodes: BTreeMap::new(),
            trigger_nodes: s.trigger_nodes,
            type_nodes: s.type_nodes,
            edges_co_et: BTreeSet::new(),
            edges_et_et: s.edges_et_et,
            edges_et_ey: s.edges_et_ey,
        }
    }
}

// Line format: explicit node arrays per class and edge arrays keyed by edge class.

#[derive(Serialize, Deserialize)]
struct GraphRecord {
    source_doc_id: String,
    nodes: NodeArrays,
    edges: EdgeArrays,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeArrays {
    context: Vec<IdContext>,
    trigger: Vec<IdTrigger>,
    #[serde(rename = "type")]
    type_: Vec<IdType>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeArrays {
    co_et: Vec<Edge>,
    et_et: Vec<Edge>,
    et_ey: Vec<Edge>,
}

#[derive(Serialize, Deserialize)]
struct IdContext {
    id: NodeId,
    span: CharSpan,
}

#[derive(Serialize, Deserialize)]
struct IdTrigger {
    id: NodeId,
    text: String,
    span: CharSpan,
}

#[derive(Serialize, Deserialize)]
struct IdType {
    id: NodeId,
    label: String,
}

fn insert_unique<T>(map: &mut BTreeMap<NodeId, T>, id: NodeId, v: T) -> std::result::Result<(), String> {
    if map.insert(id, v).is_some() {
        return Err(format!("duplicate node id {id} within one class"));
    }
    Ok(())
}

impl TryFrom<GraphRecord> for SemanticCausalGraph {
    type Error = String;

    fn try_from(r: GraphRecord) -> std::result::Result<Self, String> {
        let mut g = SemanticCausalGraph {
            source_doc_id: r.source_doc_id,
            ..Default::default()
        };
        for n in r.nodes.context {
            insert_unique(&mut g.context_nodes, n.id, ContextNode { span: n.span })?;
        }
        for n in r.nodes.trigger {
            insert_unique(&mut g.trigger_nodes, n.id, TriggerNode { text: n.text, span: n.span })?;
        }
        for n in r.nodes.type_ {
            insert_unique(&mut g.type_nodes, n.id, TypeNode { label: n.label })?;
        }
        g.edges_co_et = r.edges.co_et.into_iter().collect();
        g.edges_et_et = r.edges.et_et.into_iter().collect();
        g.edges_et_ey = r.edges.et_ey.into_iter().collect();
        Ok(g)
    }
}

impl From<SemanticCausalGraph> for GraphRecord {
    fn from(g: SemanticCausalGraph) -> Self {
        GraphRecord {
            source_doc_id: g.source_doc_id,
            nodes: NodeArrays {
                context: g.context_nodes.into_iter().map(|(id, n)| IdContext { id, span: n.span }).collect(),
                trigger: g
                    .trigger_nodes
                    .into_iter()
                    .map(|(id, n)| IdTrigger {
                        id,
                        text: n.text,
                        span: n.span,
                    })
                    .collect(),
                type_: g.type_nodes.into_iter().map(|(id, n)| IdType { id, label: n.label }).collect(),
            },
            edges: EdgeArrays {
                co_et: g.edges_co_et.into_iter().collect(),
                et_et: g.edges_et_et.into_iter().collect(),
                et_ey: g.edges_et_ey.into_iter().collect(),
            },
        }
    }
}

pub fn write_graphs<'a>(path: impl AsRef<Path>, graphs: impl IntoIterator<Item = &'a SemanticCausalGraph>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for g in graphs {
        serde_json::to_writer(&mut w, g)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_graphs(path: impl AsRef<Path>) -> Result<Vec<SemanticCausalGraph>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
