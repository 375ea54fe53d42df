//! Coupling-driven graph edits inside a bounded search minimizing `L = R + β·D`.

mod kmeans;
mod ops;
mod stats;

use serde::{Deserialize, Serialize};

use crate::analysis::{PercentileMode, RdPoint, RdTrace};
use crate::embeddings::{feature_cost, Embedder, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::kg::{node_text, rate, validate_graph_with, KgSpace, KnowledgeGraph, NodeMeasure, Ontology, DEFAULT_GAMMA};
use crate::lecture::LectureSpace;
use crate::llm::{llm_propose_edges, ChatClient, ConceptNamer};
use crate::matrix::Matrix;
use crate::ot::{fgw, Coupling, FgwResult, SolverConfig};

pub use kmeans::two_means;
pub use ops::{op_add, op_merge, op_relate, op_split, prune, truncate_chars, MAX_DEFINITION_CHARS};
pub use stats::{column_entropy, column_entropy_raw, column_mass, covered_row_mass, edge_support, symmetric_kl, top_rows};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyMode {
    /// Entropy divided by `ln N`.
    #[default]
    Normalized,
    Raw,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AddMode {
    /// Compare covered mass `ρ'_i` itself.
    #[default]
    Absolute,
    /// Compare `ρ'_i / μ_Z(i)`.
    Fractional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefinementConfig {
    pub beta: f64,
    pub theta_add: f64,
    pub theta_split: f64,
    pub theta_merge: f64,
    pub theta_cos: f64,
    pub theta_relate: f64,
    pub tau: f64,
    pub max_adds: usize,
    pub max_splits: usize,
    pub max_merges: usize,
    pub max_iterations: usize,
    pub conv_threshold: f64,
    pub patience: usize,
    pub kl_smoothing: f64,
    pub entropy_mode: EntropyMode,
    pub add_mode: AddMode,
    pub coverage_percentile: PercentileMode,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self {
            beta: 100.0,
            theta_add: 0.02,
            theta_split: 0.35,
            theta_merge: 0.12,
            theta_cos: 0.90,
            theta_relate: 0.25,
            tau: 1e-4,
            max_adds: 5,
            max_splits: 3,
            max_merges: 3,
            max_iterations: 12,
            conv_threshold: 0.25,
            patience: 2,
            kl_smoothing: 1e-9,
            entropy_mode: EntropyMode::Normalized,
            add_mode: AddMode::Absolute,
            coverage_percentile: PercentileMode::AllEntries,
        }
    }
}

impl RefinementConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("beta", self.beta),
            ("theta_add", self.theta_add),
            ("theta_split", self.theta_split),
            ("theta_merge", self.theta_merge),
            ("theta_cos", self.theta_cos),
            ("theta_relate", self.theta_relate),
            ("tau", self.tau),
            ("conv_threshold", self.conv_threshold),
            ("kl_smoothing", self.kl_smoothing),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EditOp {
    #[serde(rename = "add")]
    Add,
    #[serde(rename = "split")]
    Split,
    #[serde(rename = "merge")]
    Merge,
    #[serde(rename = "relate-add")]
    RelateAdd,
    #[serde(rename = "prune")]
    Prune,
    #[serde(rename = "llm-edge")]
    LlmEdge,
}

/// Audit entry for one applied edit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditRecord {
    pub op: EditOp,
    /// Node ids, then edge labels `src-[relation]-dst`.
    pub affected: Vec<String>,
    pub rationale: String,
    pub iteration: usize,
}

impl EditRecord {
    pub fn new(op: EditOp, affected: Vec<String>, rationale: impl Into<String>, iteration: usize) -> Self {
        Self {
            op,
            affected,
            rationale: rationale.into(),
            iteration,
        }
    }
}

/// Geometry and solver settings for aligning a graph to the lecture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignOptions {
    pub gamma: [f64; 2],
    pub measure: NodeMeasure,
    pub solver: SolverConfig,
}

impl Default for AlignOptions {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            measure: NodeMeasure::Uniform,
            solver: SolverConfig::default(),
        }
    }
}

/// One solved alignment between the lecture space and a graph.
#[derive(Debug, Clone)]
pub struct Alignment {
    /// Node id of each coupling column.
    pub col_ids: Vec<String>,
    pub kg_emb: EmbeddingMatrix,
    pub kg_space: KgSpace,
    pub m_feat: Matrix,
    pub fgw: FgwResult,
    pub rate: f64,
}

impl Alignment {
    pub fn coupling(&self) -> &Coupling {
        &self.fgw.coupling
    }

    pub fn distortion(&self) -> f64 {
        self.fgw.distortion
    }

    pub fn objective(&self, beta: f64) -> f64 {
        self.rate + beta * self.distortion()
    }

    pub fn point(&self, t: usize, beta: f64) -> RdPoint {
        RdPoint {
            t,
            rate: self.rate,
            distortion: self.distortion(),
            objective: self.objective(beta),
            structure: self.fgw.structure_term,
            feature: self.fgw.feature_term,
        }
    }
}

/// Embeds the graph's nodes and solves the fused transport problem against the lecture.
pub fn align(
    lecture: &LectureSpace,
    lecture_emb: &EmbeddingMatrix,
    kg: &KnowledgeGraph,
    embedder: &dyn Embedder,
    opts: &AlignOptions,
) -> Result<Alignment> {
    if kg.nodes.is_empty() {
        return Err(Error::EmptyInput);
    }
    let texts: Vec<String> = kg.nodes.iter().map(node_text).collect();
    let kg_emb = embedder.embed(&texts)?;
    let kg_space = KgSpace::build(kg, &kg_emb, opts.gamma, opts.measure)?;
    let m_feat = feature_cost(lecture_emb, &kg_emb)?;
    let fgw = fgw(&lecture.d, &kg_space.d, &m_feat, &lecture.mu, &kg_space.mu, &opts.solver)?;
    Ok(Alignment {
        col_ids: kg.nodes.iter().map(|n| n.id.clone()).collect(),
        kg_emb,
        kg_space,
        m_feat,
        fgw,
        rate: rate(kg),
    })
}

/// Everything the refinement loop reads.
pub struct Refiner<'a> {
    pub lecture: &'a LectureSpace,
    pub lecture_emb: &'a EmbeddingMatrix,
    pub embedder: &'a dyn Embedder,
    pub align: AlignOptions,
    pub config: RefinementConfig,
    pub ontology: Ontology,
    pub client: Option<&'a dyn ChatClient>,
}

#[derive(Debug, Clone)]
pub struct RefineOutcome {
    /// Lowest-objective graph seen.
    pub kg: KnowledgeGraph,
    pub trace: RdTrace,
    pub incumbent_t: usize,
    pub initial: Alignment,
    pub best: Alignment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Add,
    Split,
    Merge,
    Relate,
    Prune,
    Llm,
}

const STAGES: [Stage; 6] = [Stage::Add, Stage::Split, Stage::Merge, Stage::Relate, Stage::Prune, Stage::Llm];

impl<'a> Refiner<'a> {
    pub fn new(lecture: &'a LectureSpace, lecture_emb: &'a EmbeddingMatrix, embedder: &'a dyn Embedder) -> Self {
        Self {
            lecture,
            lecture_emb,
            embedder,
            align: AlignOptions::default(),
            config: RefinementConfig::default(),
            ontology: Ontology::default(),
            client: None,
        }
    }

    pub fn align(&self, kg: &KnowledgeGraph) -> Result<Alignment> {
        align(self.lecture, self.lecture_emb, kg, self.embedder, &self.align)
    }

    fn apply(
        &self,
        stage: Stage,
        kg: &mut KnowledgeGraph,
        al: &Alignment,
        namer: &ConceptNamer<'_>,
        t: usize,
    ) -> Result<Vec<EditRecord>> {
        let cfg = &self.config;
        match stage {
            Stage::Add => op_add(kg, self.lecture, al, self.embedder, namer, self.client, &self.ontology, cfg, t),
            Stage::Split => op_split(kg, self.lecture, self.lecture_emb, al, namer, cfg, t),
            Stage::Merge => op_merge(kg, al.coupling(), &al.col_ids, &al.kg_emb, cfg, t),
            Stage::Relate => op_relate(kg, &self.lecture.d, al.coupling(), &al.col_ids, cfg, t),
            Stage::Prune => prune(kg, al.coupling(), &al.col_ids, cfg, t),
            Stage::Llm => Ok(llm_propose_edges(kg, self.client, &self.ontology, t)),
        }
    }

    /// Runs one iteration's operators in order, re-aligning after every operator that edited.
    fn step(
        &self,
        kg: &mut KnowledgeGraph,
        al: &mut Alignment,
        namer: &ConceptNamer<'_>,
        t: usize,
    ) -> Result<Vec<EditRecord>> {
        let mut edits = Vec::new();
        for stage in STAGES {
            let recs = self.apply(stage, kg, al, namer, t)?;
            if recs.is_empty() {
                continue;
            }
            let violations = validate_graph_with(kg, &self.ontology);
            if !violations.is_empty() {
                return Err(Error::InvalidGraph(violations));
            }
            log::debug!("t={t} {stage:?}: {} edits", recs.len());
            edits.extend(recs);
            *al = self.align(kg)?;
        }
        Ok(edits)
    }

    /// Refines `initial`, returning the incumbent graph and the full trace.
    ///
    /// A failure after the initial alignment ends the search early; the trace is
    /// then marked incomplete and the incumbent so far is returned.
    pub fn run(&self, initial: &KnowledgeGraph) -> Result<RefineOutcome> {
        self.config.validate()?;
        self.align.solver.validate()?;
        let beta = self.config.beta;
        let namer = ConceptNamer::new(&self.lecture.texts(), self.client);

        let mut kg = initial.clone();
        let mut al = self.align(&kg)?;
        let mut trace = RdTrace::new(beta);
        trace.points.push(al.point(0, beta));
        trace.edits.push(Vec::new());

        let initial_al = al.clone();
        let mut best = (kg.clone(), al.clone(), 0usize);
        let mut calm = 0;
        for t in 1..=self.config.max_iterations {
            let edits = match self.step(&mut kg, &mut al, &namer, t) {
                Ok(e) => e,
                Err(e) => {
                    log::warn!("refinement stopped at iteration {t}: {e}");
                    trace.complete = false;
                    break;
                }
            };
            let p = al.point(t, beta);
            let prev = trace.points.last().expect("t0 recorded").objective;
            trace.points.push(p);
            trace.edits.push(edits);
            if p.objective < best.1.objective(beta) {
                best = (kg.clone(), al.clone(), t);
            }
            calm = if (p.objective - prev).abs() < self.config.conv_threshold { calm + 1 } else { 0 };
            if calm >= self.config.patience {
                break;
            }
        }
        Ok(RefineOutcome {
            kg: best.0,
            trace,
            incumbent_t: best.2,
            initial: initial_al,
            best: best.1,
        })
    }
}
