#![allow(dead_code)]

use std::path::PathBuf;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rdkg_core::embeddings::{Embedder, EmbeddingMatrix, HashEmbedder};
use rdkg_core::kg::{ConceptNode, KnowledgeGraph, Ontology, RelationEdge};
use rdkg_core::lecture::{flatten, LectureSpace, DEFAULT_ALPHA};
use rdkg_core::llm::bootstrap_kg;
use rdkg_core::markdown::parse_markdown;
use rdkg_core::matrix::Matrix;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn read_fixture(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).expect("fixture readable")
}

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

/// Symmetric matrix with zero diagonal and off-diagonal entries in `[0, 1)`.
pub fn random_metric(rng: &mut StdRng, n: usize) -> Matrix {
    let mut m = Matrix::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let x: f64 = rng.random();
            m[[i, j]] = x;
            m[[j, i]] = x;
        }
    }
    m
}

pub fn random_matrix(rng: &mut StdRng, n: usize, m: usize, scale: f64) -> Matrix {
    Matrix::from_shape_fn((n, m), |_| rng.random::<f64>() * scale)
}

/// Nonnegative matrix with unit total mass.
pub fn random_plan(rng: &mut StdRng, n: usize, m: usize) -> Matrix {
    let p = Matrix::from_shape_fn((n, m), |_| rng.random::<f64>() + 1e-3);
    let s = p.sum();
    p / s
}

pub fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// Explicit `Σ_{i,j,k,l} (C1(i,k) − C2(j,l))² π(i,j) π(k,l)`.
pub fn four_index(c1: &Matrix, c2: &Matrix, pi: &Matrix) -> f64 {
    let (n, m) = pi.dim();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..m {
            for k in 0..n {
                for l in 0..m {
                    s += (c1[[i, k]] - c2[[j, l]]).powi(2) * pi[[i, j]] * pi[[k, l]];
                }
            }
        }
    }
    s
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn go(cur: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for k in 0..used.len() {
            if !used[k] {
                used[k] = true;
                cur.push(k);
                go(cur, used, out);
                cur.pop();
                used[k] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

pub fn permutation_plan(perm: &[usize]) -> Matrix {
    let n = perm.len();
    let mut p = Matrix::zeros((n, n));
    for (i, &j) in perm.iter().enumerate() {
        p[[i, j]] = 1.0 / n as f64;
    }
    p
}

pub fn hash() -> HashEmbedder {
    HashEmbedder::default()
}

/// Lecture space and unit embeddings of a Markdown fixture under the hash embedder.
pub fn lecture_from(name: &str) -> (LectureSpace, EmbeddingMatrix) {
    let tree = parse_markdown(&read_fixture(name)).unwrap();
    let elements = flatten(&tree).unwrap();
    let texts: Vec<String> = elements.iter().map(|e| e.content.clone()).collect();
    let emb = hash().embed(&texts).unwrap();
    (LectureSpace::build(elements, &emb, DEFAULT_ALPHA).unwrap(), emb)
}

pub fn fallback_kg(name: &str) -> KnowledgeGraph {
    bootstrap_kg(&read_fixture(name), None, &Ontology::default()).unwrap()
}

/// Lecture whose heading graph has one concept per unit.
pub const DUPLICATE_LECTURE: &str = "glossary.md";

/// Heading graph of the glossary lecture with one node duplicated under a new id.
pub fn duplicate_node_kg() -> KnowledgeGraph {
    let mut kg = fallback_kg(DUPLICATE_LECTURE);
    let mut copy = kg.node("histogram").expect("histogram node").clone();
    copy.id = "histogram-copy".into();
    kg.nodes.push(copy);
    kg
}

/// Two-node graph whose first node fuses the two lecture topics.
pub fn overloaded_kg() -> KnowledgeGraph {
    let mixed = ConceptNode::new("arrays-and-series", "Arrays and Time Series").with_definition(
        "Broadcasting stretches array dimensions so shapes become compatible. \
         A rolling window computes statistics over a moving span of consecutive observations.",
    );
    let logistics = ConceptNode::new("course-logistics", "Course Logistics")
        .with_definition("Office hours, grading policy and homework submission deadlines.");
    KnowledgeGraph {
        nodes: vec![mixed, logistics],
        edges: vec![RelationEdge::new("arrays-and-series", "course-logistics", "relatedTo", 0.3).with_rationale("fixture")],
        ..Default::default()
    }
}
