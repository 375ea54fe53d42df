use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{ConceptNode, KnowledgeGraph};
use crate::embeddings::{self, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::lecture::uniform_measure;
use crate::matrix::{self, Matrix};

/// Default fusion weights (structural, semantic).
pub const DEFAULT_GAMMA: [f64; 2] = [0.4, 0.6];

/// Hop-count distance on the undirected, unweighted graph, divided by its maximum.
///
/// Unreachable pairs get one more than the largest finite hop count.
pub fn struct_distance(kg: &KnowledgeGraph) -> Matrix {
    let hops = hop_counts(kg);
    let m = kg.nodes.len();
    let finite_max = hops.iter().flatten().flatten().copied().max().unwrap_or(0);
    let unreachable = finite_max + 1;
    let mut d = Matrix::zeros((m, m));
    for i in 0..m {
        for j in 0..m {
            d[[i, j]] = hops[i][j].unwrap_or(unreachable) as f64;
        }
    }
    let max = d.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        d.mapv_inplace(|x| x / max);
    }
    d
}

/// All-pairs BFS hop counts; `None` for unreachable pairs.
pub(crate) fn hop_counts(kg: &KnowledgeGraph) -> Vec<Vec<Option<usize>>> {
    let m = kg.nodes.len();
    let index = kg.index_map();
    let mut adj = vec![Vec::new(); m];
    for e in &kg.edges {
        if let (Some(&a), Some(&b)) = (index.get(e.src.as_str()), index.get(e.dst.as_str())) {
            if a != b {
                adj[a].push(b);
                adj[b].push(a);
            }
        }
    }
    let mut out = vec![vec![None; m]; m];
    let mut queue = VecDeque::new();
    for (s, row) in out.iter_mut().enumerate() {
        row[s] = Some(0);
        queue.push_back(s);
        while let Some(u) = queue.pop_front() {
            let du = row[u].expect("visited");
            for &v in &adj[u] {
                if row[v].is_none() {
                    row[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
    }
    out
}

/// Text fed to the embedder for a node: `label. definition. alias1; alias2; alias3`.
pub fn node_text(node: &ConceptNode) -> String {
    let aliases: Vec<&str> = node
        .aliases
        .iter()
        .map(|a| a.trim())
        .filter(|a| !a.is_empty())
        .take(3)
        .collect();
    let aliases = aliases.join("; ");
    [node.label.trim(), node.definition.trim(), aliases.as_str()]
        .into_iter()
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join(". ")
}

pub fn combine_kg_distance(d_struct: &Matrix, d_sem: &Matrix, gamma: [f64; 2]) -> Result<Matrix> {
    matrix::check_convex_weights(&gamma)?;
    if d_struct.dim() != d_sem.dim() || d_struct.nrows() != d_struct.ncols() {
        return Err(Error::ShapeMismatch("component matrices differ in shape".into()));
    }
    let fused = matrix::weighted_sum(&[(d_struct, gamma[0]), (d_sem, gamma[1])]);
    Ok(matrix::minmax_offdiag(&fused))
}

/// Description-length rate `|V| + 0.5·|E|`.
pub fn rate(kg: &KnowledgeGraph) -> f64 {
    kg.nodes.len() as f64 + 0.5 * kg.edges.len() as f64
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeMeasure {
    #[default]
    Uniform,
    /// Proportional to `degree + 1`.
    Degree,
}

/// Reproduction space `O = (V, d_V, μ_V)`.
#[derive(Debug, Clone)]
pub struct KgSpace {
    pub d: Matrix,
    pub mu: Vec<f64>,
    pub gamma: [f64; 2],
    pub d_struct: Matrix,
    pub d_sem: Matrix,
}

impl KgSpace {
    pub fn build(kg: &KnowledgeGraph, node_emb: &EmbeddingMatrix, gamma: [f64; 2], measure: NodeMeasure) -> Result<Self> {
        let m = kg.nodes.len();
        if m == 0 {
            return Err(Error::InvalidConfig("knowledge graph has no nodes".into()));
        }
        if node_emb.rows() != m {
            return Err(Error::CountMismatch(format!("{} embeddings for {m} nodes", node_emb.rows())));
        }
        let d_struct = struct_distance(kg);
        let d_sem = matrix::minmax_offdiag(&embeddings::self_distance(node_emb));
        let d = combine_kg_distance(&d_struct, &d_sem, gamma)?;
        let mu = match measure {
            NodeMeasure::Uniform => uniform_measure(m)?,
            NodeMeasure::Degree => {
                let index = kg.index_map();
                let mut w = vec![1.0; m];
                for e in &kg.edges {
                    w[index[e.src.as_str()]] += 1.0;
                    w[index[e.dst.as_str()]] += 1.0;
                }
                let total: f64 = w.iter().sum();
                w.into_iter().map(|x| x / total).collect()
            }
        };
        Ok(Self {
            d,
            mu,
            gamma,
            d_struct,
            d_sem,
        })
    }
}
