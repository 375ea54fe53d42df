use std::collections::{HashMap, HashSet};

use serde_json::{Map, Value};

use super::{ask, relations_list, render, reply_json, ChatClient, BOOTSTRAP_PROMPT};
use crate::error::{Error, Result};
use crate::kg::{slugify, validate_graph_with, ConceptNode, KnowledgeGraph, Ontology, Provenance, RelationEdge};
use crate::markdown::{normalize_ws, parse_markdown, SectionTree};

/// Provenance `source` marker of heading-derived elements.
pub const FALLBACK_SOURCE: &str = "fallback";

const FALLBACK_CONFIDENCE: f64 = 0.5;
const EXCERPT_CHARS: usize = 200;

fn excerpt(text: &str) -> String {
    normalize_ws(text).chars().take(EXCERPT_CHARS).collect()
}

fn fallback_provenance(path: Vec<String>, span: [usize; 2], text: &str) -> Provenance {
    let mut extra = Map::new();
    extra.insert("source".into(), Value::String(FALLBACK_SOURCE.into()));
    Provenance {
        path,
        line_span: Some(span),
        excerpt: excerpt(text),
        extra,
    }
}

/// Heading graph: one node per heading, `partOf` from each sub-heading to its parent.
pub fn fallback_kg(tree: &SectionTree) -> KnowledgeGraph {
    let mut kg = KnowledgeGraph::default();
    let mut node_of: HashMap<&str, String> = HashMap::new();
    let mut pending = Vec::new();
    tree.walk(|s, path, parent| {
        let label = if s.title.trim().is_empty() {
            format!("Section {}", s.id.trim_start_matches('s'))
        } else {
            s.title.trim().to_string()
        };
        let id = kg.fresh_id(&slugify(&label));
        let definition = s.content.first().map(|b| normalize_ws(&b.text)).unwrap_or_default();
        let end = s.content.last().map_or(s.line, |b| b.lines.1);
        let mut node = ConceptNode::new(&id, &label).with_definition(definition);
        node.confidence = FALLBACK_CONFIDENCE;
        node.rationale = Some("section heading in the lecture notes".into());
        node.provenance = Some(fallback_provenance(
            path.iter().map(|p| p.to_string()).collect(),
            [s.line, end],
            &s.title,
        ));
        kg.nodes.push(node);
        node_of.insert(&s.id, id.clone());
        if let Some(p) = parent {
            pending.push((id, p.id.as_str(), s.line, path.iter().map(|p| p.to_string()).collect::<Vec<_>>()));
        }
    });
    for (child, parent, line, path) in pending {
        let mut e = RelationEdge::new(&child, &node_of[parent], "partOf", FALLBACK_CONFIDENCE)
            .with_rationale("sub-heading nested under its parent heading");
        e.provenance = Some(fallback_provenance(path, [line, line], ""));
        kg.add_edge(e);
    }
    kg
}

fn nonempty_str<'a>(v: &'a Value, key: &str) -> Option<&'a str> {
    v.get(key).and_then(Value::as_str).map(str::trim).filter(|s| !s.is_empty())
}

fn confidence_ok(v: &Value) -> bool {
    v.get("confidence").and_then(Value::as_f64).is_some_and(|c| (0.0..=1.0).contains(&c))
}

fn grounded(v: &Value) -> Result<(), &'static str> {
    if !confidence_ok(v) {
        return Err("confidence missing or outside [0,1]");
    }
    if nonempty_str(v, "rationale").is_none() {
        return Err("missing rationale");
    }
    if !v.get("provenance").is_some_and(Value::is_object) {
        return Err("missing provenance");
    }
    Ok(())
}

/// Keeps the valid part of a model-produced graph.
fn graph_from_reply(reply: &Value, ontology: &Ontology) -> KnowledgeGraph {
    let mut kg = KnowledgeGraph::default();
    let mut ids = HashSet::new();
    for item in reply.get("nodes").and_then(Value::as_array).into_iter().flatten() {
        let check = grounded(item).and_then(|_| {
            let id = nonempty_str(item, "id").ok_or("missing id")?;
            nonempty_str(item, "label").ok_or("missing label")?;
            if ids.contains(id) {
                return Err("duplicate id");
            }
            serde_json::from_value::<ConceptNode>(item.clone()).map_err(|_| "malformed node")
        });
        match check {
            Ok(node) => {
                ids.insert(node.id.clone());
                kg.nodes.push(node);
            }
            Err(why) => log::warn!("dropping bootstrap node {item}: {why}"),
        }
    }
    for item in reply.get("edges").and_then(Value::as_array).into_iter().flatten() {
        let check = grounded(item).and_then(|_| {
            let e = serde_json::from_value::<RelationEdge>(item.clone()).map_err(|_| "malformed edge")?;
            if !ids.contains(&e.src) || !ids.contains(&e.dst) {
                return Err("unknown endpoint");
            }
            if !ontology.allows(&e.relation) {
                return Err("relation not in ontology");
            }
            Ok(e)
        });
        match check {
            Ok(e) => {
                if !kg.add_edge(e) {
                    log::warn!("dropping bootstrap edge {item}: self-loop or duplicate");
                }
            }
            Err(why) => log::warn!("dropping bootstrap edge {item}: {why}"),
        }
    }
    kg
}

/// Builds the initial graph from Markdown notes, via the client when present.
///
/// Model output is validated element by element; if nothing valid remains the
/// heading fallback is used.
pub fn bootstrap_kg(markdown: &str, client: Option<&dyn ChatClient>, ontology: &Ontology) -> Result<KnowledgeGraph> {
    if markdown.trim().is_empty() {
        return Err(Error::EmptyInput);
    }
    let tree = parse_markdown(markdown)?;
    if let Some(c) = client {
        let prompt = render(
            BOOTSTRAP_PROMPT,
            &[("relations", &relations_list(ontology)), ("markdown", markdown)],
        );
        match ask(c, &prompt) {
            Ok(reply) => match reply_json(&reply) {
                Some(v) => {
                    let kg = graph_from_reply(&v, ontology);
                    if !kg.nodes.is_empty() && validate_graph_with(&kg, ontology).is_empty() {
                        return Ok(kg);
                    }
                    log::warn!("bootstrap reply held no valid graph; using heading fallback");
                }
                None => log::warn!("bootstrap reply is not a JSON object; using heading fallback"),
            },
            Err(e) => log::warn!("bootstrap client failed ({e}); using heading fallback"),
        }
    }
    Ok(fallback_kg(&tree))
}
