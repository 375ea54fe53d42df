use std::collections::HashSet;

use serde_json::{json, Value};

use super::{ask, relations_list, render, reply_json, ChatClient, LABEL_EDGES_PROMPT, PROPOSE_EDGES_PROMPT};
use crate::embeddings::{cosine_similarity, EmbeddingMatrix};
use crate::kg::{KnowledgeGraph, Ontology, RelationEdge, RELATED_TO};
use crate::refine::{EditOp, EditRecord};

/// Confidence of the nearest-concept fallback edge.
pub const NEAREST_CONFIDENCE: f64 = 0.3;

fn reject(item: &Value, why: &str) {
    log::warn!("dropping proposed edge {item}: {why}");
}

/// Validates the `edges` array of a reply against `kg`; invalid items are logged and dropped.
///
/// With `must_touch`, every kept edge has that node as an endpoint.
pub fn parse_edge_proposals(
    kg: &KnowledgeGraph,
    reply: &Value,
    ontology: &Ontology,
    must_touch: Option<&str>,
) -> Vec<RelationEdge> {
    let Some(items) = reply.get("edges").and_then(Value::as_array) else {
        log::warn!("edge proposal reply has no edges array");
        return Vec::new();
    };
    let mut seen: HashSet<(String, String, String)> = kg.edges.iter().map(RelationEdge::key).collect();
    let mut out = Vec::new();
    for item in items {
        let field = |k: &str| item.get(k).and_then(Value::as_str).map(str::trim);
        let (Some(src), Some(dst), Some(rel)) = (field("src"), field("dst"), field("relation")) else {
            reject(item, "missing src, dst or relation");
            continue;
        };
        if kg.node(src).is_none() || kg.node(dst).is_none() {
            reject(item, "unknown endpoint");
            continue;
        }
        if src == dst {
            reject(item, "self-loop");
            continue;
        }
        if !ontology.allows(rel) {
            reject(item, "relation not in ontology");
            continue;
        }
        let Some(conf) = item.get("confidence").and_then(Value::as_f64).filter(|c| (0.0..=1.0).contains(c)) else {
            reject(item, "confidence missing or outside [0,1]");
            continue;
        };
        let Some(rationale) = field("rationale").filter(|r| !r.is_empty()) else {
            reject(item, "empty rationale");
            continue;
        };
        if must_touch.is_some_and(|id| src != id && dst != id) {
            reject(item, "does not involve the new concept");
            continue;
        }
        let edge = RelationEdge::new(src, dst, rel, conf).with_rationale(rationale);
        if !seen.insert(edge.key()) {
            reject(item, "duplicate edge");
            continue;
        }
        out.push(edge);
    }
    out
}

fn node_listing(kg: &KnowledgeGraph, skip: Option<&str>) -> String {
    kg.nodes
        .iter()
        .filter(|n| Some(n.id.as_str()) != skip)
        .map(|n| format!("{}\n", json!({"id": n.id, "label": n.label, "definition": n.definition})))
        .collect()
}

/// Candidate edges for a freshly added node.
///
/// Client proposals are validated; when none survive, or without a client, the node is linked
/// to its cosine-nearest neighbour by a low-confidence `relatedTo`. `node_emb` rows follow `kg.nodes`.
pub fn propose_label_edges(
    new_id: &str,
    kg: &KnowledgeGraph,
    node_emb: &EmbeddingMatrix,
    client: Option<&dyn ChatClient>,
    ontology: &Ontology,
) -> Vec<RelationEdge> {
    let Some(me) = kg.node_index(new_id) else {
        return Vec::new();
    };
    if let Some(c) = client {
        let prompt = render(
            LABEL_EDGES_PROMPT,
            &[
                ("relations", &relations_list(ontology)),
                ("node", &json!({"id": new_id, "label": kg.nodes[me].label, "definition": kg.nodes[me].definition}).to_string()),
                ("nodes", &node_listing(kg, Some(new_id))),
            ],
        );
        match ask(c, &prompt) {
            Ok(reply) => {
                let edges = reply_json(&reply)
                    .map(|v| parse_edge_proposals(kg, &v, ontology, Some(new_id)))
                    .unwrap_or_default();
                if !edges.is_empty() {
                    return edges;
                }
            }
            Err(e) => log::warn!("edge proposal for {new_id} failed: {e}"),
        }
    }
    let mut best: Option<(usize, f64)> = None;
    for j in 0..kg.nodes.len() {
        if j == me {
            continue;
        }
        let s = cosine_similarity(node_emb.row(me), node_emb.row(j));
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((j, s));
        }
    }
    best.map(|(j, s)| {
        vec![RelationEdge::new(new_id, &kg.nodes[j].id, RELATED_TO, NEAREST_CONFIDENCE)
            .with_rationale(format!("nearest existing concept by embedding similarity (cos {s:.3})"))]
    })
    .unwrap_or_default()
}

/// Adds client-proposed edges grounded only in the graph's own labels, definitions and relations.
pub fn llm_propose_edges(
    kg: &mut KnowledgeGraph,
    client: Option<&dyn ChatClient>,
    ontology: &Ontology,
    iteration: usize,
) -> Vec<EditRecord> {
    let Some(c) = client else {
        return Vec::new();
    };
    let edges_listing: String = kg
        .edges
        .iter()
        .map(|e| format!("{}\n", json!({"src": e.src, "relation": e.relation, "dst": e.dst})))
        .collect();
    let prompt = render(
        PROPOSE_EDGES_PROMPT,
        &[
            ("relations", &relations_list(ontology)),
            ("nodes", &node_listing(kg, None)),
            ("edges", &edges_listing),
        ],
    );
    let reply = match ask(c, &prompt) {
        Ok(r) => r,
        Err(e) => {
            log::warn!("edge refinement skipped: {e}");
            return Vec::new();
        }
    };
    let Some(v) = reply_json(&reply) else {
        log::warn!("edge refinement reply is not a JSON object");
        return Vec::new();
    };
    let mut records = Vec::new();
    for e in parse_edge_proposals(kg, &v, ontology, None) {
        let rationale = e.rationale.clone().unwrap_or_default();
        let label = e.label();
        if kg.add_edge(e) {
            records.push(EditRecord::new(EditOp::LlmEdge, vec![label], rationale, iteration));
        }
    }
    records
}
