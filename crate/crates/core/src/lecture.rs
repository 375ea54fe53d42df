//! The lecture-side metric-measure space: ordered atomic units, fused distance, uniform measure.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embeddings::{self, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::markdown::{normalize_ws, Block, Section, SectionTree, ROOT_TITLE};
use crate::matrix::{self, Matrix};

/// Default fusion weights (chronological, logical, semantic).
pub const DEFAULT_ALPHA: [f64; 3] = [0.2, 0.3, 0.5];

/// Units whose whitespace-normalized text is shorter than this are dropped.
const MIN_UNIT_CHARS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LectureElement {
    pub id: String,
    pub idx: usize,
    #[serde(rename = "path")]
    pub section_path: Vec<String>,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line_span: Option<(usize, usize)>,
}

/// Flattens the section tree depth-first into indexed atomic units.
pub fn flatten(tree: &SectionTree) -> Result<Vec<LectureElement>> {
    let mut out = Vec::new();
    let mut emit = |b: &Block, path: &[String]| {
        if normalize_ws(&b.text).chars().count() < MIN_UNIT_CHARS {
            return;
        }
        let idx = out.len();
        out.push(LectureElement {
            id: format!("z{idx}"),
            idx,
            section_path: path.to_vec(),
            content: b.text.clone(),
            line_span: Some(b.lines),
        });
    };
    let root = vec![ROOT_TITLE.to_string()];
    for b in &tree.preamble {
        emit(b, &root);
    }
    fn go(s: &Section, path: &mut Vec<String>, emit: &mut dyn FnMut(&Block, &[String])) {
        path.push(s.title.clone());
        for b in &s.content {
            emit(b, path);
        }
        for c in &s.children {
            go(c, path, emit);
        }
        path.pop();
    }
    let mut path = Vec::new();
    for s in &tree.sections {
        go(s, &mut path, &mut emit);
    }
    if out.is_empty() {
        return Err(Error::NoAtomicUnits);
    }
    Ok(out)
}

/// `|idx_i − idx_j| / max(idx)`.
pub fn chron_distance(elements: &[LectureElement]) -> Matrix {
    let n = elements.len();
    let max_idx = elements.iter().map(|e| e.idx).max().unwrap_or(0);
    let mut d = Matrix::zeros((n, n));
    if max_idx == 0 {
        return d;
    }
    for i in 0..n {
        for j in 0..n {
            d[[i, j]] = elements[i].idx.abs_diff(elements[j].idx) as f64 / max_idx as f64;
        }
    }
    d
}

fn lcp(a: &[String], b: &[String]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

/// `1 − LCP(path_i, path_j) / max_depth`. The diagonal is not forced to zero.
pub fn logic_distance(elements: &[LectureElement]) -> Matrix {
    let n = elements.len();
    let max_depth = elements.iter().map(|e| e.section_path.len()).max().unwrap_or(0);
    let mut d = Matrix::zeros((n, n));
    if max_depth == 0 {
        return d;
    }
    for i in 0..n {
        for j in 0..n {
            let common = lcp(&elements[i].section_path, &elements[j].section_path);
            d[[i, j]] = 1.0 - common as f64 / max_depth as f64;
        }
    }
    d
}

/// Raw `clip(1 − cos(E_i, E_j), 0, 2)` matrix, before any normalization.
pub fn semantic_distance(e: &EmbeddingMatrix) -> Matrix {
    embeddings::self_distance(e)
}

/// Fuses the normalized components and min-max normalizes the result off the diagonal.
pub fn combine_lecture_distance(
    chron: &Matrix,
    logic: &Matrix,
    sem: &Matrix,
    alpha: [f64; 3],
) -> Result<Matrix> {
    matrix::check_convex_weights(&alpha)?;
    if chron.dim() != logic.dim() || chron.dim() != sem.dim() || chron.nrows() != chron.ncols() {
        return Err(Error::ShapeMismatch("component matrices differ in shape".into()));
    }
    let fused = matrix::weighted_sum(&[(chron, alpha[0]), (logic, alpha[1]), (sem, alpha[2])]);
    Ok(matrix::minmax_offdiag(&fused))
}

/// Uniform probability vector of length `n`.
pub fn uniform_measure(n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(vec![1.0 / n as f64; n])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentDistances {
    pub chron: Matrix,
    pub logic: Matrix,
    pub sem: Matrix,
}

/// Source space `S = (Z, d_Z, μ_Z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LectureSpace {
    pub elements: Vec<LectureElement>,
    pub d: Matrix,
    pub mu: Vec<f64>,
    pub components: ComponentDistances,
    pub alpha: [f64; 3],
}

impl LectureSpace {
    /// Builds the space from flattened units and their embeddings.
    pub fn build(elements: Vec<LectureElement>, emb: &EmbeddingMatrix, alpha: [f64; 3]) -> Result<Self> {
        if elements.is_empty() {
            return Err(Error::NoAtomicUnits);
        }
        if emb.rows() != elements.len() {
            return Err(Error::CountMismatch(format!(
                "{} embeddings for {} lecture units",
                emb.rows(),
                elements.len()
            )));
        }
        let chron = chron_distance(&elements);
        let logic = logic_distance(&elements);
        let sem = matrix::minmax_offdiag(&semantic_distance(emb));
        let d = combine_lecture_distance(&chron, &logic, &sem, alpha)?;
        let mu = uniform_measure(elements.len())?;
        Ok(Self {
            elements,
            d,
            mu,
            components: ComponentDistances { chron, logic, sem },
            alpha,
        })
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn texts(&self) -> Vec<String> {
        self.elements.iter().map(|e| e.content.clone()).collect()
    }

    pub fn to_artifact(&self) -> LectureArtifact {
        LectureArtifact {
            elements: self.elements.clone(),
            mu: self.mu.clone(),
            d: matrix::to_rows(&self.d),
            components: ComponentRows {
                chron: matrix::to_rows(&self.components.chron),
                logic: matrix::to_rows(&self.components.logic),
                sem: matrix::to_rows(&self.components.sem),
            },
            alpha: self.alpha,
        }
    }

    pub fn from_artifact(a: LectureArtifact) -> Result<Self> {
        let n = a.elements.len();
        if n == 0 {
            return Err(Error::NoAtomicUnits);
        }
        if a.elements.iter().enumerate().any(|(i, e)| e.idx != i) {
            return Err(Error::ShapeMismatch("element idx values must be 0..N-1 in order".into()));
        }
        let to = |rows: &[Vec<f64>]| -> Result<Matrix> {
            let m = matrix::from_rows(rows)?;
            if m.dim() != (n, n) {
                return Err(Error::ShapeMismatch(format!(
                    "expected {n}x{n} matrix, found {}x{}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            Ok(m)
        };
        let space = Self {
            d: to(&a.d)?,
            components: ComponentDistances {
                chron: to(&a.components.chron)?,
                logic: to(&a.components.logic)?,
                sem: to(&a.components.sem)?,
            },
            elements: a.elements,
            mu: a.mu,
            alpha: a.alpha,
        };
        if space.mu.len() != n || ((space.mu.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(Error::ShapeMismatch("mu must be a length-N probability vector".into()));
        }
        matrix::check_convex_weights(&space.alpha)?;
        Ok(space)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(&self.to_artifact())?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = embeddings::read_file(path)?;
        Self::from_artifact(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentRows {
    pub chron: Vec<Vec<f64>>,
    pub logic: Vec<Vec<f64>>,
    pub sem: Vec<Vec<f64>>,
}

/// JSON layout of a persisted lecture space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LectureArtifact {
    pub elements: Vec<LectureElement>,
    pub mu: Vec<f64>,
    pub d: Vec<Vec<f64>>,
    pub components: ComponentRows,
    pub alpha: [f64; 3],
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::{Embedder, HashEmbedder};
    use crate::markdown::parse_markdown;

    fn el(idx: usize, path: &[&str]) -> LectureElement {
        LectureElement {
            id: format!("z{idx}"),
            idx,
            section_path: path.iter().map(|s| s.to_string()).collect(),
            content: "x".repeat(5),
            line_span: None,
        }
    }

    #[test]
    fn flatten_examples() {
        let t = parse_markdown("# A\ntext\n## B\nmore").unwrap();
        let z = flatten(&t).unwrap();
        assert_eq!(z.len(), 2);
        assert_eq!((z[0].idx, z[0].section_path.clone(), z[0].content.as_str()), (0, vec!["A".to_string()], "text"));
        assert_eq!(z[1].section_path, ["A", "B"]);
        assert_eq!(z[1].content, "more");

        let t = parse_markdown("just one paragraph").unwrap();
        let z = flatten(&t).unwrap();
        assert_eq!(z[0].section_path, [ROOT_TITLE]);

        let t = parse_markdown("# A\nalpha\n\nbeta\n\n- gamma").unwrap();
        let idx: Vec<_> = flatten(&t).unwrap().iter().map(|e| e.idx).collect();
        assert_eq!(idx, [0, 1, 2]);
    }

    #[test]
    fn flatten_requires_units() {
        let t = parse_markdown("# A\n## B\n").unwrap();
        assert!(matches!(flatten(&t), Err(Error::NoAtomicUnits)));
        // units below three characters are dropped
        let t = parse_markdown("# A\nok\n\n- x\n").unwrap();
        assert!(matches!(flatten(&t), Err(Error::NoAtomicUnits)));
    }

    #[test]
    fn chron_examples() {
        let z = vec![el(0, &["A"]), el(1, &["A"]), el(2, &["A"])];
        let d = chron_distance(&z);
        assert_eq!(d[[0, 2]], 1.0);
        assert_eq!(d[[1, 1]], 0.0);
        assert_eq!(d[[0, 1]], 0.5);

        let mut z = vec![el(0, &["A"]), el(4, &["A"])];
        z[1].idx = 4;
        assert_eq!(chron_distance(&z)[[0, 1]], 1.0);
        assert_eq!(chron_distance(&[el(0, &["A"])]), Matrix::zeros((1, 1)));
    }

    #[test]
    fn logic_examples() {
        let z = vec![el(0, &["A", "B"]), el(1, &["A", "B"]), el(2, &["A", "C"]), el(3, &["D"])];
        let d = logic_distance(&z);
        assert_eq!(d[[0, 1]], 0.0);
        assert_eq!(d[[0, 2]], 0.5);
        assert_eq!(d[[0, 3]], 1.0);
        // shallow element keeps a nonzero self-distance
        assert_eq!(d[[3, 3]], 0.5);
    }

    #[test]
    fn semantic_examples() {
        let e = EmbeddingMatrix::from_rows(&[vec![1.0, 0.0], vec![2.0, 0.0], vec![-1.0, 0.0], vec![0.0, 3.0]])
            .unwrap();
        let d = semantic_distance(&e);
        assert_eq!(d[[0, 1]], 0.0);
        assert_eq!(d[[0, 2]], 2.0);
        assert_eq!(d[[0, 3]], 1.0);
        assert!(matrix::is_symmetric(&d));
    }

    #[test]
    fn combine_examples() {
        let ones = Matrix::from_elem((2, 2), 1.0);
        let pre = matrix::weighted_sum(&[(&ones, 0.2), (&ones, 0.3), (&ones, 0.5)]);
        assert!((pre[[0, 1]] - 1.0).abs() < 1e-15);

        let z = Matrix::zeros((3, 3));
        assert_eq!(combine_lecture_distance(&z, &z, &z, DEFAULT_ALPHA).unwrap(), z);

        let els = vec![el(0, &["A"]), el(1, &["A"]), el(2, &["B"]), el(3, &["B"])];
        let chron = chron_distance(&els);
        let logic = logic_distance(&els);
        let d = combine_lecture_distance(&chron, &logic, &logic, [1.0, 0.0, 0.0]).unwrap();
        assert_eq!(d, matrix::minmax_offdiag(&chron));

        assert!(matches!(
            combine_lecture_distance(&z, &z, &z, [0.5, 0.5, 0.5]),
            Err(Error::InvalidWeights(_))
        ));
    }

    #[test]
    fn uniform_examples() {
        assert_eq!(uniform_measure(4).unwrap(), vec![0.25; 4]);
        assert_eq!(uniform_measure(1).unwrap(), vec![1.0]);
        assert!((uniform_measure(3).unwrap().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(uniform_measure(0).is_err());
    }

    #[test]
    fn build_and_artifact_round_trip() {
        let md = "# Arrays\nnumpy arrays have a shape\n\nbroadcasting aligns shapes\n## Dtypes\nevery array has a dtype\n# Series\na series is a labelled array";
        let z = flatten(&parse_markdown(md).unwrap()).unwrap();
        let texts: Vec<String> = z.iter().map(|e| e.content.clone()).collect();
        let emb = HashEmbedder::default().embed(&texts).unwrap();
        let s = LectureSpace::build(z, &emb, DEFAULT_ALPHA).unwrap();
        assert!(matrix::is_symmetric(&s.d));
        assert!((0..s.len()).all(|i| s.d[[i, i]] == 0.0));
        assert!(s.d.iter().all(|&x| (0.0..=1.0).contains(&x)));

        let json = serde_json::to_string(&s.to_artifact()).unwrap();
        let back = LectureSpace::from_artifact(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, s);
    }
}
