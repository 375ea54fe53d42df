//! The edit operators. Each reads the coupling of the graph it edits.

use std::collections::HashSet;

use super::kmeans::two_means;
use super::stats::{column_entropy, column_entropy_raw, column_mass, covered_row_mass, edge_support, symmetric_kl, top_rows};
use super::{AddMode, Alignment, EditOp, EditRecord, EntropyMode, RefinementConfig};
use crate::analysis::coverage_tolerance;
use crate::embeddings::{cosine_similarity, Embedder, EmbeddingMatrix};
use crate::error::Result;
use crate::kg::{node_text, slugify, ConceptNode, KnowledgeGraph, Ontology, Provenance, RelationEdge, RELATED_TO};
use crate::lecture::{LectureElement, LectureSpace};
use crate::llm::{propose_label_edges, ChatClient, ConceptNamer};
use crate::markdown::normalize_ws;
use crate::matrix::Matrix;
use crate::ot::Coupling;

pub const MAX_DEFINITION_CHARS: usize = 1000;
const TOP_K: usize = 5;
const MIN_SPLIT_SUBSET: usize = 4;
const ADD_CONFIDENCE: f64 = 0.5;
const RELATE_CONFIDENCE: f64 = 0.5;
const EXCERPT_CHARS: usize = 200;

pub fn truncate_chars(s: &str, max: usize) -> String {
    s.chars().take(max).collect()
}

fn group_definition(units: &[&LectureElement]) -> String {
    let joined = units.iter().map(|u| normalize_ws(&u.content)).collect::<Vec<_>>().join(" ");
    truncate_chars(&joined, MAX_DEFINITION_CHARS)
}

fn group_provenance(units: &[&LectureElement]) -> Provenance {
    let first = units[0];
    let span = match (first.line_span, units[units.len() - 1].line_span) {
        (Some(a), Some(b)) => Some([a.0, b.1]),
        _ => None,
    };
    Provenance {
        path: first.section_path.clone(),
        line_span: span,
        excerpt: truncate_chars(&normalize_ws(&first.content), EXCERPT_CHARS),
        ..Default::default()
    }
}

fn unit_range(units: &[&LectureElement]) -> String {
    let (a, b) = (&units[0].id, &units[units.len() - 1].id);
    if a == b {
        a.clone()
    } else {
        format!("{a}..{b}")
    }
}

/// Op-A: synthesizes concepts for runs of under-covered lecture units.
#[allow(clippy::too_many_arguments)]
pub fn op_add(
    kg: &mut KnowledgeGraph,
    lecture: &LectureSpace,
    al: &Alignment,
    embedder: &dyn Embedder,
    namer: &ConceptNamer<'_>,
    client: Option<&dyn ChatClient>,
    ontology: &Ontology,
    cfg: &RefinementConfig,
    t: usize,
) -> Result<Vec<EditRecord>> {
    let tol = coverage_tolerance(&al.m_feat, cfg.coverage_percentile)?;
    let rho = covered_row_mass(al.coupling(), &al.m_feat, tol)?;
    let score: Vec<f64> = match cfg.add_mode {
        AddMode::Absolute => rho,
        AddMode::Fractional => rho.iter().zip(&lecture.mu).map(|(r, m)| r / m).collect(),
    };

    // contiguous flagged units within one section form a group
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, &s) in score.iter().enumerate() {
        if s >= cfg.theta_add {
            continue;
        }
        match groups.last_mut() {
            Some(g)
                if *g.last().expect("nonempty") + 1 == i
                    && lecture.elements[i - 1].section_path == lecture.elements[i].section_path =>
            {
                g.push(i)
            }
            _ => groups.push(vec![i]),
        }
    }
    let min_score = |g: &[usize]| g.iter().map(|&i| score[i]).fold(f64::INFINITY, f64::min);
    groups.sort_by(|a, b| min_score(a).total_cmp(&min_score(b)).then(a[0].cmp(&b[0])));
    groups.truncate(cfg.max_adds);

    let mut rows: Vec<Vec<f64>> = (0..al.kg_emb.rows()).map(|j| al.kg_emb.row(j).to_vec()).collect();
    let mut records = Vec::new();
    for g in groups {
        let units: Vec<&LectureElement> = g.iter().map(|&i| &lecture.elements[i]).collect();
        let texts: Vec<String> = units.iter().map(|u| u.content.clone()).collect();
        let label = namer.name(&texts);
        let id = kg.fresh_id(&slugify(&label));
        let mut node = ConceptNode::new(&id, &label).with_definition(group_definition(&units));
        node.confidence = ADD_CONFIDENCE;
        node.provenance = Some(group_provenance(&units));
        let why = format!(
            "lecture units {} have covered row mass {:.3e} below {}",
            unit_range(&units),
            min_score(&g),
            cfg.theta_add
        );
        node.rationale = Some(why.clone());
        rows.push(embedder.embed(&[node_text(&node)])?.row(0).to_vec());
        kg.nodes.push(node);

        let emb = EmbeddingMatrix::from_rows(&rows)?;
        let mut affected = vec![id.clone()];
        for e in propose_label_edges(&id, kg, &emb, client, ontology) {
            let label = e.label();
            if kg.add_edge(e) {
                affected.push(label);
            }
        }
        records.push(EditRecord::new(EditOp::Add, affected, why, t));
    }
    Ok(records)
}

/// Op-B: replaces high-entropy nodes by two children built from a 2-means split of their coupled units.
pub fn op_split(
    kg: &mut KnowledgeGraph,
    lecture: &LectureSpace,
    lecture_emb: &EmbeddingMatrix,
    al: &Alignment,
    namer: &ConceptNamer<'_>,
    cfg: &RefinementConfig,
    t: usize,
) -> Result<Vec<EditRecord>> {
    let pi = al.coupling();
    let h = match cfg.entropy_mode {
        EntropyMode::Normalized => column_entropy(pi),
        EntropyMode::Raw => column_entropy_raw(pi),
    };
    let mut cands: Vec<usize> = (0..h.len()).filter(|&j| h[j] > cfg.theta_split).collect();
    cands.sort_by(|&a, &b| h[b].total_cmp(&h[a]).then(a.cmp(&b)));

    let n = pi.shape().0;
    let mut records = Vec::new();
    for j in cands {
        if records.len() >= cfg.max_splits {
            break;
        }
        let col = pi.matrix.column(j);
        let mean = col.sum() / n as f64;
        let subset: Vec<usize> = (0..n).filter(|&i| col[i] > mean).collect();
        let parent_id = &al.col_ids[j];
        if subset.len() < MIN_SPLIT_SUBSET {
            log::debug!("split of {parent_id} skipped: only {} coupled units", subset.len());
            continue;
        }
        let Some(labels) = two_means(&lecture_emb.select(&subset)) else {
            log::debug!("split of {parent_id} skipped: coupled units are indistinguishable");
            continue;
        };
        let Some(pos) = kg.node_index(parent_id) else { continue };
        let parent = kg.nodes[pos].clone();

        let mut children = Vec::new();
        for k in 0..2 {
            let units: Vec<&LectureElement> = subset
                .iter()
                .zip(&labels)
                .filter(|(_, &l)| l == k)
                .map(|(&i, _)| &lecture.elements[i])
                .collect();
            let texts: Vec<String> = units.iter().map(|u| u.content.clone()).collect();
            let mut child = parent.clone();
            child.label = namer.name(&texts);
            child.id = {
                let taken: Vec<&str> = children.iter().map(|c: &ConceptNode| c.id.as_str()).collect();
                let mut id = kg.fresh_id(&slugify(&child.label));
                let mut k = 2;
                while taken.contains(&id.as_str()) {
                    id = kg.fresh_id(&format!("{}-{k}", slugify(&child.label)));
                    k += 1;
                }
                id
            };
            child.definition = group_definition(&units);
            children.push(child);
        }

        let incident: Vec<RelationEdge> = kg.edges.iter().filter(|e| e.touches(parent_id)).cloned().collect();
        kg.remove_node(parent_id);
        for (k, c) in children.iter().enumerate() {
            kg.nodes.insert(pos + k, c.clone());
        }
        let mut affected: Vec<String> = vec![parent_id.clone(), children[0].id.clone(), children[1].id.clone()];
        for c in &children {
            for e in &incident {
                let mut dup = e.clone();
                if dup.src == *parent_id {
                    dup.src = c.id.clone();
                }
                if dup.dst == *parent_id {
                    dup.dst = c.id.clone();
                }
                let label = dup.label();
                if kg.add_edge(dup) {
                    affected.push(label);
                }
            }
        }
        records.push(EditRecord::new(
            EditOp::Split,
            affected,
            format!(
                "column entropy {:.3} above {}; {} coupled units split {}/{}",
                h[j],
                cfg.theta_split,
                subset.len(),
                labels.iter().filter(|&&l| l == 0).count(),
                labels.iter().filter(|&&l| l == 1).count()
            ),
            t,
        ));
    }
    Ok(records)
}

fn normalized_columns(pi: &Coupling) -> Vec<Option<Vec<f64>>> {
    pi.matrix
        .columns()
        .into_iter()
        .map(|c| {
            let s = c.sum();
            (s > 0.0).then(|| c.iter().map(|x| x / s).collect())
        })
        .collect()
}

/// Op-C: greedily merges similar nodes with near-identical coupling profiles.
pub fn op_merge(
    kg: &mut KnowledgeGraph,
    pi: &Coupling,
    col_ids: &[String],
    node_emb: &EmbeddingMatrix,
    cfg: &RefinementConfig,
    t: usize,
) -> Result<Vec<EditRecord>> {
    let cols = normalized_columns(pi);
    let m = cols.len();
    let mut used = vec![false; m];
    let mut accepted = Vec::new();
    'scan: for i in 0..m {
        for j in i + 1..m {
            if accepted.len() >= cfg.max_merges {
                break 'scan;
            }
            if used[i] {
                continue 'scan;
            }
            if used[j] {
                continue;
            }
            let (Some(p), Some(q)) = (&cols[i], &cols[j]) else { continue };
            let cos = cosine_similarity(node_emb.row(i), node_emb.row(j));
            if cos < cfg.theta_cos {
                continue;
            }
            let kl = symmetric_kl(p, q, cfg.kl_smoothing)?;
            if kl > cfg.theta_merge {
                continue;
            }
            used[i] = true;
            used[j] = true;
            accepted.push((i, j, cos, kl));
        }
    }

    let mut records = Vec::new();
    for (i, j, cos, kl) in accepted {
        let (keep, gone) = (&col_ids[i], &col_ids[j]);
        let Some(absorbed) = kg.node(gone).cloned() else { continue };
        let Some(k) = kg.node_index(keep) else { continue };
        let node = &mut kg.nodes[k];
        for a in std::iter::once(&absorbed.label).chain(&absorbed.aliases) {
            if *a != node.label && !node.aliases.contains(a) {
                node.aliases.push(a.clone());
            }
        }
        for e in kg.edges.iter_mut() {
            if e.src == *gone {
                e.src = keep.clone();
            }
            if e.dst == *gone {
                e.dst = keep.clone();
            }
        }
        kg.dedup_edges();
        kg.nodes.retain(|n| n.id != *gone);
        records.push(EditRecord::new(
            EditOp::Merge,
            vec![keep.clone(), gone.clone()],
            format!("cosine {cos:.3} >= {}, symmetric KL {kl:.3e} <= {}", cfg.theta_cos, cfg.theta_merge),
            t,
        ));
    }
    Ok(records)
}

/// Op-D add: links unconnected nodes whose top-coupled lecture neighbourhoods are close in `d_Z`.
pub fn op_relate(
    kg: &mut KnowledgeGraph,
    d_z: &Matrix,
    pi: &Coupling,
    col_ids: &[String],
    cfg: &RefinementConfig,
    t: usize,
) -> Result<Vec<EditRecord>> {
    let m = col_ids.len();
    let tops: Vec<Vec<usize>> = (0..m).map(|j| top_rows(pi, j, TOP_K)).collect();
    let mut records = Vec::new();
    for a in 0..m {
        for b in a + 1..m {
            if kg.has_any_edge(&col_ids[a], &col_ids[b]) {
                continue;
            }
            let (mut sum, mut cnt) = (0.0, 0usize);
            for &i1 in &tops[a] {
                for &i2 in &tops[b] {
                    if i1 != i2 {
                        sum += d_z[[i1, i2]];
                        cnt += 1;
                    }
                }
            }
            if cnt == 0 {
                continue;
            }
            let mean = sum / cnt as f64;
            if mean < cfg.theta_relate {
                let why = format!("mean lecture-neighbourhood distance {mean:.3} below {}", cfg.theta_relate);
                let e = RelationEdge::new(&col_ids[a], &col_ids[b], RELATED_TO, RELATE_CONFIDENCE).with_rationale(&why);
                let label = e.label();
                if kg.add_edge(e) {
                    records.push(EditRecord::new(EditOp::RelateAdd, vec![label], why, t));
                }
            }
        }
    }
    Ok(records)
}

/// Op-D remove: drops edges whose coupling support falls below `tau`.
pub fn prune(
    kg: &mut KnowledgeGraph,
    pi: &Coupling,
    col_ids: &[String],
    cfg: &RefinementConfig,
    t: usize,
) -> Result<Vec<EditRecord>> {
    let mass = column_mass(pi);
    let mut drop = HashSet::new();
    let mut records = Vec::new();
    for (k, e) in kg.edges.iter().enumerate() {
        let s = edge_support(&mass, col_ids, e)?;
        if s < cfg.tau {
            drop.insert(k);
            records.push(EditRecord::new(
                EditOp::Prune,
                vec![e.label()],
                format!("support {s:.3e} below {}", cfg.tau),
                t,
            ));
        }
    }
    let mut k = 0;
    kg.edges.retain(|_| {
        k += 1;
        !drop.contains(&(k - 1))
    });
    Ok(records)
}
