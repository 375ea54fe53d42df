//! Knowledge-graph data model, relation ontology, validation and JSON persistence.

mod space;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub use space::{combine_kg_distance, node_text, rate, struct_distance, KgSpace, NodeMeasure, DEFAULT_GAMMA};

/// Relations accepted without extra configuration.
pub const ALLOWED_RELATIONS: [&str; 13] = [
    "isA",
    "partOf",
    "prerequisiteOf",
    "dependsOn",
    "uses",
    "exampleOf",
    "contrastsWith",
    "implies",
    "provedBy",
    "produces",
    "consumes",
    "assessedBy",
    "relatedTo",
];

/// Low-confidence fallback relation.
pub const RELATED_TO: &str = "relatedTo";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(default)]
    pub path: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line_span: Option<[usize; 2]>,
    #[serde(default)]
    pub excerpt: String,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptNode {
    pub id: String,
    pub label: String,
    #[serde(default)]
    pub definition: String,
    #[serde(default)]
    pub aliases: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl ConceptNode {
    pub fn new(id: impl Into<String>, label: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            label: label.into(),
            definition: String::new(),
            aliases: Vec::new(),
            provenance: None,
            confidence: 1.0,
            rationale: None,
            extra: Map::new(),
        }
    }

    pub fn with_definition(mut self, d: impl Into<String>) -> Self {
        self.definition = d.into();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationEdge {
    pub src: String,
    pub dst: String,
    pub relation: String,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl RelationEdge {
    pub fn new(src: impl Into<String>, dst: impl Into<String>, relation: impl Into<String>, confidence: f64) -> Self {
        Self {
            src: src.into(),
            dst: dst.into(),
            relation: relation.into(),
            confidence,
            provenance: None,
            rationale: None,
            extra: Map::new(),
        }
    }

    pub fn with_rationale(mut self, r: impl Into<String>) -> Self {
        self.rationale = Some(r.into());
        self
    }

    /// Dedup key: unordered endpoint pair plus relation name.
    pub fn key(&self) -> (String, String, String) {
        let (a, b) = if self.src <= self.dst {
            (&self.src, &self.dst)
        } else {
            (&self.dst, &self.src)
        };
        (a.clone(), b.clone(), self.relation.clone())
    }

    /// Stable identifier used in edit records.
    pub fn label(&self) -> String {
        format!("{}-[{}]-{}", self.src, self.relation, self.dst)
    }

    pub fn touches(&self, id: &str) -> bool {
        self.src == id || self.dst == id
    }
}

/// Lowercase kebab-case id stem for a label; `concept` when nothing survives.
pub fn slugify(label: &str) -> String {
    let mut out = String::new();
    for c in label.chars().flat_map(char::to_lowercase) {
        if c.is_alphanumeric() || c == '_' {
            out.push(c);
        } else if !out.is_empty() && !out.ends_with('-') {
            out.push('-');
        }
    }
    let out = out.trim_end_matches('-');
    if out.is_empty() {
        "concept".to_string()
    } else {
        out.chars().take(48).collect::<String>().trim_end_matches('-').to_string()
    }
}

/// Undirected concept graph; edge direction is kept only as metadata.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeGraph {
    pub nodes: Vec<ConceptNode>,
    pub edges: Vec<RelationEdge>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

/// The set of relation names a graph may use.
#[derive(Debug, Clone)]
pub struct Ontology {
    relations: BTreeSet<String>,
}

impl Default for Ontology {
    fn default() -> Self {
        Self {
            relations: ALLOWED_RELATIONS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl Ontology {
    pub fn with_extra<I: IntoIterator<Item = S>, S: Into<String>>(extra: I) -> Self {
        let mut o = Self::default();
        o.relations.extend(extra.into_iter().map(Into::into));
        o
    }

    pub fn allows(&self, relation: &str) -> bool {
        self.relations.contains(relation)
    }

    pub fn relations(&self) -> impl Iterator<Item = &str> {
        self.relations.iter().map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    DanglingEndpoint { edge: String, node: String },
    UnknownRelation { edge: String, relation: String },
    DuplicateId { node: String },
    SelfLoop { edge: String },
    DuplicateEdge { edge: String },
    EmptyLabel { node: String },
    ConfidenceOutOfRange { item: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DanglingEndpoint { edge, node } => {
                write!(f, "dangling endpoint: edge {edge} references missing node {node}")
            }
            Violation::UnknownRelation { edge, relation } => {
                write!(f, "unknown relation: edge {edge} uses {relation:?}")
            }
            Violation::DuplicateId { node } => write!(f, "duplicate id: {node}"),
            Violation::SelfLoop { edge } => write!(f, "self-loop: {edge}"),
            Violation::DuplicateEdge { edge } => write!(f, "duplicate edge: {edge}"),
            Violation::EmptyLabel { node } => write!(f, "empty label on node {node}"),
            Violation::ConfidenceOutOfRange { item } => write!(f, "confidence outside [0,1] on {item}"),
        }
    }
}

fn confidence_ok(c: f64) -> bool {
    (0.0..=1.0).contains(&c)
}

/// Lists every structural problem in the graph; empty means valid.
pub fn validate_graph(kg: &KnowledgeGraph) -> Vec<Violation> {
    validate_graph_with(kg, &Ontology::default())
}

pub fn validate_graph_with(kg: &KnowledgeGraph, ontology: &Ontology) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for n in &kg.nodes {
        if !ids.insert(n.id.as_str()) {
            out.push(Violation::DuplicateId { node: n.id.clone() });
        }
        if n.label.trim().is_empty() {
            out.push(Violation::EmptyLabel { node: n.id.clone() });
        }
        if !confidence_ok(n.confidence) {
            out.push(Violation::ConfidenceOutOfRange { item: n.id.clone() });
        }
    }
    let mut keys = HashSet::new();
    for e in &kg.edges {
        let label = e.label();
        for end in [&e.src, &e.dst] {
            if !ids.contains(end.as_str()) {
                out.push(Violation::DanglingEndpoint {
                    edge: label.clone(),
                    node: end.clone(),
                });
            }
        }
        if e.src == e.dst {
            out.push(Violation::SelfLoop { edge: label.clone() });
        }
        if !ontology.allows(&e.relation) {
            out.push(Violation::UnknownRelation {
                edge: label.clone(),
                relation: e.relation.clone(),
            });
        }
        if !confidence_ok(e.confidence) {
            out.push(Violation::ConfidenceOutOfRange { item: label.clone() });
        }
        if !keys.insert(e.key()) {
            out.push(Violation::DuplicateEdge { edge: label });
        }
    }
    out
}

impl KnowledgeGraph {
    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn node(&self, id: &str) -> Option<&ConceptNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn index_map(&self) -> HashMap<&str, usize> {
        self.nodes.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect()
    }

    pub fn has_any_edge(&self, a: &str, b: &str) -> bool {
        self.edges
            .iter()
            .any(|e| (e.src == a && e.dst == b) || (e.src == b && e.dst == a))
    }

    /// Adds an edge unless it is a self-loop or duplicates an existing (pair, relation).
    pub fn add_edge(&mut self, edge: RelationEdge) -> bool {
        if edge.src == edge.dst {
            return false;
        }
        let key = edge.key();
        if self.edges.iter().any(|e| e.key() == key) {
            return false;
        }
        self.edges.push(edge);
        true
    }

    /// Removes a node and every incident edge.
    pub fn remove_node(&mut self, id: &str) -> Option<ConceptNode> {
        let i = self.node_index(id)?;
        self.edges.retain(|e| !e.touches(id));
        Some(self.nodes.remove(i))
    }

    /// Drops self-loops and repeated (pair, relation) edges, keeping first occurrences.
    pub fn dedup_edges(&mut self) {
        let mut seen = HashSet::new();
        self.edges.retain(|e| e.src != e.dst && seen.insert(e.key()));
    }

    /// Returns `base` if unused, otherwise `base-2`, `base-3`, ...
    pub fn fresh_id(&self, base: &str) -> String {
        if self.node(base).is_none() {
            return base.to_string();
        }
        (2..)
            .map(|k| format!("{base}-{k}"))
            .find(|c| self.node(c).is_none())
            .expect("unbounded search")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&crate::embeddings::read_file(path)?)
    }

    /// Loads and rejects graphs with any validation violation.
    pub fn load_valid(path: &Path, ontology: &Ontology) -> Result<Self> {
        let kg = Self::load(path)?;
        let v = validate_graph_with(&kg, ontology);
        if v.is_empty() {
            Ok(kg)
        } else {
            Err(Error::InvalidGraph(v))
        }
    }
}
