//! Stage commands of the end-to-end run. Every stage reads and writes files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::analysis::{self, coverage_with, knee_point, write_json, RdTrace};
use crate::embeddings::{Embedder, EmbeddingProvider, HttpEmbedderConfig};
use crate::error::{Error, Result};
use crate::kg::{rate, validate_graph_with, KnowledgeGraph, NodeMeasure, Ontology, DEFAULT_GAMMA};
use crate::lecture::{flatten, LectureSpace, DEFAULT_ALPHA};
use crate::llm::{bootstrap_kg, ChatClient, HttpChatClient, LlmClientConfig, FALLBACK_SOURCE};
use crate::markdown::parse_markdown;
use crate::matrix::{check_convex_weights, Matrix};
use crate::ot::SolverConfig;
use crate::refine::{AlignOptions, Alignment, RefinementConfig, Refiner};

pub const LECTURE_FILE: &str = "lecture.json";
pub const KG_FILE: &str = "kg.json";
pub const REFINED_KG_FILE: &str = "kg_refined.json";
pub const TRACE_FILE: &str = "trace.jsonl";
pub const COUPLING_FILE: &str = "coupling.json";
pub const PROMPT_LOG_DIR: &str = "prompts";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    Hash,
    Precomputed,
    Http,
}

/// Flat run configuration; refinement and solver fields sit at the top level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub lecture_artifact: Option<PathBuf>,
    pub kg_in: Option<PathBuf>,
    pub kg_out: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
    pub alpha: [f64; 3],
    pub gamma: [f64; 2],
    pub node_measure: NodeMeasure,
    #[serde(flatten)]
    pub solver: SolverConfig,
    #[serde(flatten)]
    pub refinement: RefinementConfig,
    pub embedding_provider: ProviderKind,
    pub embeddings_file: Option<PathBuf>,
    pub embedding_dim: usize,
    pub embedding_seed: u64,
    pub embedding_url: Option<String>,
    pub embedding_model: String,
    pub embedding_timeout_secs: f64,
    pub llm_url: Option<String>,
    pub llm_model: String,
    pub llm_timeout_secs: f64,
    pub llm_retries: u32,
    pub llm_temperature: f64,
    pub debug: bool,
    pub dump_coupling: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let http = HttpEmbedderConfig::default();
        let llm = LlmClientConfig::default();
        Self {
            input: None,
            lecture_artifact: None,
            kg_in: None,
            kg_out: None,
            report_dir: None,
            alpha: DEFAULT_ALPHA,
            gamma: DEFAULT_GAMMA,
            node_measure: NodeMeasure::Uniform,
            solver: SolverConfig::default(),
            refinement: RefinementConfig::default(),
            embedding_provider: ProviderKind::Hash,
            embeddings_file: None,
            embedding_dim: 256,
            embedding_seed: 0x5eed,
            embedding_url: None,
            embedding_model: http.model,
            embedding_timeout_secs: http.timeout_secs,
            llm_url: None,
            llm_model: llm.model,
            llm_timeout_secs: llm.timeout_secs,
            llm_retries: llm.retries,
            llm_temperature: llm.temperature,
            debug: false,
            dump_coupling: false,
        }
    }
}

fn known_keys() -> Vec<String> {
    match serde_json::to_value(RunConfig::default()) {
        Ok(Value::Object(m)) => m.keys().cloned().collect(),
        _ => Vec::new(),
    }
}

fn override_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl RunConfig {
    /// Layers `overrides` (`key`, raw TOML value) over an optional config file over defaults.
    pub fn layered(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut table = match file {
            Some(p) => {
                let text = crate::embeddings::read_file(p)?;
                toml::from_str::<toml::Table>(&text)
                    .map_err(|e| Error::InvalidConfig(format!("{}: {}", p.display(), e.message())))?
            }
            None => toml::Table::new(),
        };
        for (k, v) in overrides {
            table.insert(k.clone(), override_value(v));
        }
        let known = known_keys();
        if let Some(k) = table.keys().find(|k| !known.contains(k)) {
            return Err(Error::InvalidConfig(format!("unknown config key `{k}`")));
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check_convex_weights(&self.alpha).map_err(|e| Error::InvalidConfig(format!("alpha: {e}")))?;
        check_convex_weights(&self.gamma).map_err(|e| Error::InvalidConfig(format!("gamma: {e}")))?;
        self.solver.validate()?;
        self.refinement.validate()?;
        if self.embedding_dim == 0 {
            return Err(Error::InvalidConfig("embedding_dim must be positive".into()));
        }
        match self.embedding_provider {
            ProviderKind::Precomputed if self.embeddings_file.is_none() => {
                Err(Error::InvalidConfig("precomputed embeddings need `embeddings_file`".into()))
            }
            ProviderKind::Http if self.embedding_url.is_none() => {
                Err(Error::InvalidConfig("http embeddings need `embedding_url`".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn provider(&self) -> EmbeddingProvider {
        match self.embedding_provider {
            ProviderKind::Hash => EmbeddingProvider::DeterministicHash {
                dim: self.embedding_dim,
                seed: self.embedding_seed,
            },
            ProviderKind::Precomputed => EmbeddingProvider::PrecomputedFile {
                path: self.embeddings_file.clone().unwrap_or_default(),
            },
            ProviderKind::Http => EmbeddingProvider::HttpEndpoint(HttpEmbedderConfig {
                base_url: self.embedding_url.clone().unwrap_or_default(),
                model: self.embedding_model.clone(),
                timeout_secs: self.embedding_timeout_secs,
                ..Default::default()
            }),
        }
    }

    pub fn embedder(&self) -> Result<Box<dyn Embedder>> {
        self.provider().build()
    }

    /// The chat client, present only when `llm_url` is set.
    pub fn llm_client(&self, out: &Path) -> Result<Option<HttpChatClient>> {
        let Some(url) = &self.llm_url else { return Ok(None) };
        let client = HttpChatClient::new(LlmClientConfig {
            base_url: url.clone(),
            model: self.llm_model.clone(),
            timeout_secs: self.llm_timeout_secs,
            retries: self.llm_retries,
            temperature: self.llm_temperature,
            ..Default::default()
        })?;
        Ok(Some(if self.debug {
            client.with_debug_dir(out.join(PROMPT_LOG_DIR))
        } else {
            client
        }))
    }

    pub fn align_options(&self) -> AlignOptions {
        AlignOptions {
            gamma: self.gamma,
            measure: self.node_measure,
            solver: self.solver,
        }
    }

    pub fn echo(&self) -> Value {
        serde_json::to_value(self).unwrap_or(Value::Null)
    }
}

fn require_file(p: &Path) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(Error::FileNotFound(p.to_path_buf()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatrixStats {
    pub min_offdiag: f64,
    pub max: f64,
    pub mean_offdiag: f64,
}

impl MatrixStats {
    pub fn of(d: &Matrix) -> Self {
        let n = d.nrows();
        let mut min = f64::INFINITY;
        let mut sum = 0.0;
        for ((i, j), &x) in d.indexed_iter() {
            if i != j {
                min = min.min(x);
                sum += x;
            }
        }
        let pairs = (n * n.saturating_sub(1)).max(1) as f64;
        Self {
            min_offdiag: if min.is_finite() { min } else { 0.0 },
            max: d.iter().copied().fold(0.0, f64::max),
            mean_offdiag: sum / pairs,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IngestSummary {
    pub units: usize,
    pub artifact: PathBuf,
    pub distance: MatrixStats,
}

/// Parses notes into the lecture space and writes its artifact.
pub fn cmd_ingest(cfg: &RunConfig, markdown: &Path, out: &Path) -> Result<IngestSummary> {
    require_file(markdown)?;
    let text = crate::embeddings::read_file(markdown)?;
    let tree = parse_markdown(&text).map_err(|e| match e {
        Error::Parse { line, message, .. } => Error::Parse {
            path: markdown.display().to_string(),
            line,
            message,
        },
        other => other,
    })?;
    let elements = flatten(&tree)?;
    let texts: Vec<String> = elements.iter().map(|e| e.content.clone()).collect();
    let emb = cfg.embedder()?.embed(&texts)?;
    let space = LectureSpace::build(elements, &emb, cfg.alpha)?;
    std::fs::create_dir_all(out)?;
    let artifact = out.join(LECTURE_FILE);
    space.save(&artifact)?;
    Ok(IngestSummary {
        units: space.len(),
        artifact,
        distance: MatrixStats::of(&space.d),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BootstrapSummary {
    pub nodes: usize,
    pub edges: usize,
    pub rate: f64,
    pub fallback: bool,
    pub path: PathBuf,
}

fn is_fallback(kg: &KnowledgeGraph) -> bool {
    kg.nodes.iter().all(|n| {
        n.provenance
            .as_ref()
            .and_then(|p| p.extra.get("source"))
            .is_some_and(|s| s == FALLBACK_SOURCE)
    })
}

/// Builds the initial graph from notes and writes it as JSON.
pub fn cmd_bootstrap(cfg: &RunConfig, markdown: &Path, out: &Path) -> Result<BootstrapSummary> {
    require_file(markdown)?;
    let text = crate::embeddings::read_file(markdown)?;
    let client = cfg.llm_client(out)?;
    let kg = bootstrap_kg(&text, client.as_ref().map(|c| c as &dyn ChatClient), &Ontology::default())?;
    std::fs::create_dir_all(out)?;
    let path = cfg.kg_out.clone().unwrap_or_else(|| out.join(KG_FILE));
    kg.save(&path)?;
    Ok(BootstrapSummary {
        nodes: kg.nodes.len(),
        edges: kg.edges.len(),
        rate: rate(&kg),
        fallback: client.is_none() || is_fallback(&kg),
        path,
    })
}

struct Loaded {
    lecture: LectureSpace,
    lecture_emb: crate::embeddings::EmbeddingMatrix,
    kg: KnowledgeGraph,
    embedder: Box<dyn Embedder>,
}

fn load_inputs(cfg: &RunConfig, lecture: &Path, kg: &Path) -> Result<Loaded> {
    require_file(lecture)?;
    require_file(kg)?;
    let lecture = LectureSpace::load(lecture)?;
    let kg = KnowledgeGraph::load(kg)?;
    let violations = validate_graph_with(&kg, &Ontology::default());
    if !violations.is_empty() {
        return Err(Error::InvalidGraph(violations));
    }
    if kg.nodes.is_empty() {
        return Err(Error::EmptyInput);
    }
    let embedder = cfg.embedder()?;
    let lecture_emb = embedder.embed(&lecture.texts())?;
    Ok(Loaded {
        lecture,
        lecture_emb,
        kg,
        embedder,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AlignSummary {
    pub units: usize,
    pub nodes: usize,
    pub distortion: f64,
    pub structure: f64,
    pub feature: f64,
    pub rate: f64,
    pub objective: f64,
    pub coverage: f64,
    pub converged: bool,
    pub coupling_dump: Option<PathBuf>,
}

fn coverage_of(al: &Alignment, cfg: &RunConfig) -> Result<f64> {
    coverage_with(&al.m_feat, al.coupling(), cfg.refinement.coverage_percentile)
}

/// Aligns a graph to the lecture and reports distortion, rate and coverage.
pub fn cmd_align(cfg: &RunConfig, lecture: &Path, kg: &Path, out: &Path) -> Result<AlignSummary> {
    let inp = load_inputs(cfg, lecture, kg)?;
    let al = crate::refine::align(&inp.lecture, &inp.lecture_emb, &inp.kg, inp.embedder.as_ref(), &cfg.align_options())?;
    let coupling_dump = if cfg.dump_coupling {
        std::fs::create_dir_all(out)?;
        let p = out.join(COUPLING_FILE);
        write_json(&p, &serde_json::to_value(al.coupling().dump())?)?;
        Some(p)
    } else {
        None
    };
    Ok(AlignSummary {
        units: inp.lecture.len(),
        nodes: inp.kg.nodes.len(),
        distortion: al.distortion(),
        structure: al.fgw.structure_term,
        feature: al.fgw.feature_term,
        rate: al.rate,
        objective: al.objective(cfg.refinement.beta),
        coverage: coverage_of(&al, cfg)?,
        converged: al.fgw.converged,
        coupling_dump,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RefineSummary {
    pub points: usize,
    pub incumbent_t: usize,
    pub knee: usize,
    pub nodes_before: usize,
    pub nodes_after: usize,
    pub objective_before: f64,
    pub objective_after: f64,
    pub coverage_before: f64,
    pub coverage_after: f64,
    pub complete: bool,
    pub kg_path: PathBuf,
    pub trace_path: PathBuf,
}

fn report_files(cfg: &RunConfig, trace: &RdTrace, before: Option<f64>, after: Option<f64>, out: &Path) -> Result<usize> {
    let knee = if trace.points.len() >= 2 { knee_point(&trace.points)? } else { 0 };
    analysis::emit_report(trace, before, after, knee, &cfg.echo(), out)?;
    Ok(knee)
}

/// Refines a graph against the lecture and writes the refined graph, trace and report.
pub fn cmd_refine(cfg: &RunConfig, lecture: &Path, kg: &Path, out: &Path) -> Result<RefineSummary> {
    let inp = load_inputs(cfg, lecture, kg)?;
    let client = cfg.llm_client(out)?;
    let refiner = Refiner {
        lecture: &inp.lecture,
        lecture_emb: &inp.lecture_emb,
        embedder: inp.embedder.as_ref(),
        align: cfg.align_options(),
        config: cfg.refinement.clone(),
        ontology: Ontology::default(),
        client: client.as_ref().map(|c| c as &dyn ChatClient),
    };
    let outcome = refiner.run(&inp.kg)?;
    std::fs::create_dir_all(out)?;
    let kg_path = cfg.kg_out.clone().unwrap_or_else(|| out.join(REFINED_KG_FILE));
    outcome.kg.save(&kg_path)?;
    let trace_path = out.join(TRACE_FILE);
    outcome.trace.write_jsonl(&trace_path)?;
    let before = coverage_of(&outcome.initial, cfg)?;
    let after = coverage_of(&outcome.best, cfg)?;
    let knee = report_files(cfg, &outcome.trace, Some(before), Some(after), out)?;
    let beta = cfg.refinement.beta;
    Ok(RefineSummary {
        points: outcome.trace.points.len(),
        incumbent_t: outcome.incumbent_t,
        knee,
        nodes_before: inp.kg.nodes.len(),
        nodes_after: outcome.kg.nodes.len(),
        objective_before: outcome.initial.objective(beta),
        objective_after: outcome.best.objective(beta),
        coverage_before: before,
        coverage_after: after,
        complete: outcome.trace.complete,
        kg_path,
        trace_path,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportSummary {
    pub points: usize,
    pub knee: usize,
    pub out: PathBuf,
}

/// Re-emits report files from a saved trace.
pub fn cmd_report(cfg: &RunConfig, trace: &Path, out: &Path) -> Result<ReportSummary> {
    require_file(trace)?;
    let trace = RdTrace::read_jsonl(trace, cfg.refinement.beta)?;
    if trace.points.len() < 2 {
        return Err(Error::TraceTooShort);
    }
    let knee = report_files(cfg, &trace, None, None, out)?;
    Ok(ReportSummary {
        points: trace.points.len(),
        knee,
        out: out.to_path_buf(),
    })
}

/// Compact JSON line for terminal output.
pub fn summary_line<T: Serialize>(stage: &str, s: &T) -> String {
    json!({ "stage": stage, "summary": s }).to_string()
}
