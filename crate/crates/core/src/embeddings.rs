//! Text embedding providers and the shared cosine kernel.
//!
//! Three interchangeable providers are available behind [`Embedder`]:
//! a precomputed JSON table keyed by SHA-256 of the text, an offline
//! signed feature-hashing bag-of-words, and an HTTP endpoint.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Environment variable holding the bearer token for the HTTP embedder.
pub const EMBEDDING_API_KEY_ENV: &str = "RDKG_EMBEDDING_API_KEY";

const HTTP_BATCH: usize = 64;

/// Row-major `rows × dim` matrix of finite vectors, none with zero norm.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix(Array2<f64>);

impl EmbeddingMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("embedding matrix"));
        }
        for (row, r) in data.rows().into_iter().enumerate() {
            if norm(r) == 0.0 {
                return Err(Error::DegenerateEmbedding { row });
            }
        }
        Ok(Self(data))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::CountMismatch("rows of differing dimension".into()));
        }
        let flat = rows.iter().flatten().copied().collect();
        Self::new(Array2::from_shape_vec((rows.len(), dim), flat).expect("checked shape"))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.0.row(i)
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.0
    }

    /// Selects a subset of rows, in the order given.
    pub fn select(&self, idx: &[usize]) -> EmbeddingMatrix {
        EmbeddingMatrix(self.0.select(ndarray::Axis(0), idx))
    }
}

fn norm(v: ArrayView1<'_, f64>) -> f64 {
    v.dot(&v).sqrt()
}

fn clip_cos_distance(dot: f64, nu: f64, nv: f64) -> f64 {
    (1.0 - dot / (nu * nv)).clamp(0.0, 2.0)
}

/// `clip(1 − cos(u, v), 0, 2)`; errors on zero-norm input.
pub fn cosine_distance(u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::ShapeMismatch(format!(
            "vectors of length {} and {}",
            u.len(),
            v.len()
        )));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 {
        return Err(Error::DegenerateEmbedding { row: 0 });
    }
    if nv == 0.0 {
        return Err(Error::DegenerateEmbedding { row: 1 });
    }
    Ok(clip_cos_distance(u.dot(&v), nu, nv))
}

/// Unclipped cosine similarity of two nonzero vectors.
pub fn cosine_similarity(u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) -> f64 {
    u.dot(&v) / (norm(u) * norm(v))
}

/// Cosine-distance cost between every row of `a` and every row of `b`.
///
/// Entries are absolute costs in [0, 2]; no normalization is applied.
pub fn feature_cost(a: &EmbeddingMatrix, b: &EmbeddingMatrix) -> Result<Matrix> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch(format!(
            "embedding dimensions {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    let na: Vec<f64> = a.0.rows().into_iter().map(norm).collect();
    let nb: Vec<f64> = b.0.rows().into_iter().map(norm).collect();
    let dots = a.0.dot(&b.0.t());
    let mut out = Matrix::zeros((a.rows(), b.rows()));
    for ((i, j), o) in out.indexed_iter_mut() {
        *o = clip_cos_distance(dots[[i, j]], na[i], nb[j]);
    }
    for i in 0..a.rows().min(b.rows()) {
        if a.row(i) == b.row(i) {
            out[[i, i]] = 0.0;
        }
    }
    Ok(out)
}

/// Pairwise cosine distance within one embedding set, in [0, 2], exact-zero diagonal.
pub fn self_distance(e: &EmbeddingMatrix) -> Matrix {
    let mut d = feature_cost(e, e).expect("same dimension");
    let n = e.rows();
    for i in 0..n {
        d[[i, i]] = 0.0;
        for j in 0..i {
            // force exact symmetry
            d[[i, j]] = d[[j, i]];
        }
    }
    d
}

/// Lowercase-hex SHA-256 of the exact text.
pub fn content_hash(text: &str) -> String {
    hex(&Sha256::digest(text.as_bytes()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Anything that turns texts into an embedding matrix, one row per text.
pub trait Embedder: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<EmbeddingMatrix>;
}

fn check_texts(texts: &[String]) -> Result<()> {
    if texts.is_empty() {
        return Err(Error::EmptyInput);
    }
    if texts.iter().any(|t| t.is_empty()) {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

/// Weight of the per-text signature added to every hashed bag.
const SIGNATURE_SCALE: f64 = 1e-6;

/// Offline provider: signed feature hashing of lowercase word tokens.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self { dim: 256, seed: 0x5eed }
    }
}

/// Lowercase alphanumeric/underscore word tokens.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

impl HashEmbedder {
    fn bucket(&self, token: &str) -> (usize, f64) {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(token.as_bytes());
        let d = h.finalize();
        let idx = u64::from_le_bytes(d[..8].try_into().expect("8 bytes"));
        let sign = if d[8] & 1 == 0 { 1.0 } else { -1.0 };
        ((idx % self.dim as u64) as usize, sign)
    }

    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        let mut any = false;
        for tok in tokenize(text) {
            let (i, s) = self.bucket(&tok);
            v[i] += s;
            any = true;
        }
        if !any || v.iter().all(|&x| x == 0.0) {
            // punctuation-only text or a perfectly cancelling bag
            let (i, s) = self.bucket(&format!("\u{0}{}", text.trim()));
            v[i] += s;
        }
        for (x, n) in v.iter_mut().zip(self.signature(text)) {
            *x += SIGNATURE_SCALE * n;
        }
        v
    }

    /// Dense values in `[-1, 1)` keyed by the exact text, so distinct texts with equal bags differ.
    fn signature(&self, text: &str) -> Vec<f64> {
        let key = Sha256::new().chain_update(self.seed.to_le_bytes()).chain_update(text.as_bytes()).finalize();
        let mut out = Vec::with_capacity(self.dim);
        let mut block = 0u64;
        while out.len() < self.dim {
            let d = Sha256::new().chain_update(key).chain_update(block.to_le_bytes()).finalize();
            for chunk in d.chunks_exact(8) {
                let u = u64::from_le_bytes(chunk.try_into().expect("8 bytes")) >> 11;
                out.push(u as f64 / (1u64 << 52) as f64 - 1.0);
            }
            block += 1;
        }
        out.truncate(self.dim);
        out
    }
}

impl Embedder for HashEmbedder {
    fn embed(&self, texts: &[String]) -> Result<EmbeddingMatrix> {
        check_texts(texts)?;
        if self.dim == 0 {
            return Err(Error::InvalidConfig("hash embedder dim must be positive".into()));
        }
        let rows: Vec<Vec<f64>> = texts.iter().map(|t| self.embed_one(t)).collect();
        EmbeddingMatrix::from_rows(&rows)
    }
}

/// On-disk format of a precomputed embeddings table.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EmbeddingsFile {
    pub dim: usize,
    pub keys: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
}

impl EmbeddingsFile {
    /// Builds a table from texts and their vectors, keyed by content hash.
    pub fn from_texts(texts: &[String], vectors: Vec<Vec<f64>>) -> Self {
        Self {
            dim: vectors.first().map_or(0, Vec::len),
            keys: texts.iter().map(|t| content_hash(t)).collect(),
            vectors,
        }
    }
}

/// Provider backed by a precomputed embeddings file.
#[derive(Debug, Clone)]
pub struct PrecomputedEmbedder {
    dim: usize,
    table: HashMap<String, Vec<f64>>,
}

impl PrecomputedEmbedder {
    pub fn from_file(file: EmbeddingsFile) -> Result<Self> {
        if file.keys.len() != file.vectors.len() {
            return Err(Error::CountMismatch(format!(
                "{} keys but {} vectors",
                file.keys.len(),
                file.vectors.len()
            )));
        }
        if let Some(v) = file.vectors.iter().find(|v| v.len() != file.dim) {
            return Err(Error::CountMismatch(format!(
                "vector of length {} in a dim-{} file",
                v.len(),
                file.dim
            )));
        }
        let table = file.keys.into_iter().zip(file.vectors).collect();
        Ok(Self {
            dim: file.dim,
            table,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_file(path)?;
        Self::from_file(serde_json::from_str(&text)?)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

impl Embedder for PrecomputedEmbedder {
    fn embed(&self, texts: &[String]) -> Result<EmbeddingMatrix> {
        check_texts(texts)?;
        let mut rows = Vec::with_capacity(texts.len());
        for (i, t) in texts.iter().enumerate() {
            let v = self.table.get(&content_hash(t)).ok_or_else(|| {
                Error::CountMismatch(format!(
                    "no precomputed vector for text #{i} ({} rows for {} texts)",
                    self.table.len(),
                    texts.len()
                ))
            })?;
            rows.push(v.clone());
        }
        EmbeddingMatrix::from_rows(&rows)
    }
}

/// Connection settings for an HTTP embedding service.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct HttpEmbedderConfig {
    pub base_url: String,
    pub model: String,
    pub timeout_secs: f64,
    pub retries: u32,
    /// First backoff delay; doubled after each failed attempt.
    pub backoff_ms: u64,
}

impl Default for HttpEmbedderConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8080/embed".into(),
            model: "default".into(),
            timeout_secs: 30.0,
            retries: 2,
            backoff_ms: 250,
        }
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    inputs: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f64>>,
}

/// Provider calling a remote endpoint; responses are cached by content hash.
pub struct HttpEmbedder {
    config: HttpEmbedderConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
    cache: Mutex<HashMap<String, Vec<f64>>>,
}

impl HttpEmbedder {
    pub fn new(config: HttpEmbedderConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs.max(0.001))))
            .http_status_as_error(true)
            .build()
            .into();
        Self {
            config,
            agent,
            api_key: std::env::var(EMBEDDING_API_KEY_ENV).ok(),
            cache: Mutex::new(HashMap::new()),
        }
    }

    fn request(&self, batch: &[String]) -> Result<Vec<Vec<f64>>, String> {
        let body = EmbedRequest {
            model: &self.config.model,
            inputs: batch,
        };
        let mut req = self.agent.post(&self.config.base_url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| e.to_string())?;
        let parsed: EmbedResponse = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        if parsed.embeddings.len() != batch.len() {
            return Err(format!(
                "endpoint returned {} vectors for {} inputs",
                parsed.embeddings.len(),
                batch.len()
            ));
        }
        Ok(parsed.embeddings)
    }

    fn request_with_retry(&self, batch: &[String]) -> Result<Vec<Vec<f64>>> {
        let mut delay = self.config.backoff_ms;
        let mut last = String::new();
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(delay));
                delay *= 2;
            }
            match self.request(batch) {
                Ok(v) => return Ok(v),
                Err(e) => {
                    log::warn!("embedding request attempt {} failed: {e}", attempt + 1);
                    last = e;
                }
            }
        }
        Err(Error::ProviderUnavailable(last))
    }
}

impl Embedder for HttpEmbedder {
    fn embed(&self, texts: &[String]) -> Result<EmbeddingMatrix> {
        check_texts(texts)?;
        let keys: Vec<String> = texts.iter().map(|t| content_hash(t)).collect();
        let mut missing: Vec<(String, String)> = Vec::new();
        {
            let cache = self.cache.lock().expect("embedding cache poisoned");
            for (k, t) in keys.iter().zip(texts) {
                if !cache.contains_key(k) && !missing.iter().any(|(mk, _)| mk == k) {
                    missing.push((k.clone(), t.clone()));
                }
            }
        }
        for chunk in missing.chunks(HTTP_BATCH) {
            let batch: Vec<String> = chunk.iter().map(|(_, t)| t.clone()).collect();
            let vectors = self.request_with_retry(&batch)?;
            let mut cache = self.cache.lock().expect("embedding cache poisoned");
            for ((k, _), v) in chunk.iter().zip(vectors) {
                cache.insert(k.clone(), v);
            }
        }
        let cache = self.cache.lock().expect("embedding cache poisoned");
        let rows: Vec<Vec<f64>> = keys.iter().map(|k| cache[k].clone()).collect();
        EmbeddingMatrix::from_rows(&rows)
    }
}

/// Serializable provider selection.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EmbeddingProvider {
    PrecomputedFile { path: PathBuf },
    DeterministicHash { dim: usize, seed: u64 },
    HttpEndpoint(HttpEmbedderConfig),
}

impl Default for EmbeddingProvider {
    fn default() -> Self {
        let h = HashEmbedder::default();
        EmbeddingProvider::DeterministicHash {
            dim: h.dim,
            seed: h.seed,
        }
    }
}

impl EmbeddingProvider {
    pub fn build(&self) -> Result<Box<dyn Embedder>> {
        Ok(match self {
            EmbeddingProvider::PrecomputedFile { path } => Box::new(PrecomputedEmbedder::load(path)?),
            EmbeddingProvider::DeterministicHash { dim, seed } => Box::new(HashEmbedder {
                dim: *dim,
                seed: *seed,
            }),
            EmbeddingProvider::HttpEndpoint(cfg) => Box::new(HttpEmbedder::new(cfg.clone())),
        })
    }
}

pub(crate) fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::FileNotFound(path.to_path_buf())
        } else {
            Error::Io(e)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cosine_examples() {
        let a = array![1.0, 0.0];
        let b = array![-1.0, 0.0];
        let c = array![0.0, 1.0];
        assert_eq!(cosine_distance(a.view(), a.view()).unwrap(), 0.0);
        assert_eq!(cosine_distance(a.view(), b.view()).unwrap(), 2.0);
        assert_eq!(cosine_distance(a.view(), c.view()).unwrap(), 1.0);
        let z = array![0.0, 0.0];
        assert!(matches!(
            cosine_distance(a.view(), z.view()),
            Err(Error::DegenerateEmbedding { .. })
        ));
    }

    #[test]
    fn zero_row_rejected() {
        let r = EmbeddingMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]);
        assert!(matches!(r, Err(Error::DegenerateEmbedding { row: 1 })));
    }

    #[test]
    fn feature_cost_examples() {
        let e = EmbeddingMatrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]])
            .unwrap();
        let p = e.select(&[2, 0, 1]);
        let c = feature_cost(&e, &p).unwrap();
        let expected = array![[1.0, 0.0, 1.0], [1.0, 1.0, 0.0], [0.0, 1.0, 1.0]];
        assert_eq!(c, expected);
        let self_c = feature_cost(&e, &e).unwrap();
        assert!((0..3).all(|i| self_c[[i, i]] == 0.0));

        let u = EmbeddingMatrix::from_rows(&[vec![0.3, -2.0]]).unwrap();
        let v = EmbeddingMatrix::from_rows(&[vec![-0.3, 2.0]]).unwrap();
        assert_eq!(feature_cost(&u, &v).unwrap(), array![[2.0]]);

        let w = EmbeddingMatrix::from_rows(&[vec![1.0]]).unwrap();
        assert!(feature_cost(&u, &w).is_err());
    }

    #[test]
    fn hash_embedder_is_deterministic() {
        let h = HashEmbedder::default();
        let texts = vec!["The same text".to_string(), "The same text".to_string()];
        let m = h.embed(&texts).unwrap();
        assert_eq!(m.row(0), m.row(1));
        let again = h.embed(&texts).unwrap();
        assert_eq!(m, again);
        // punctuation-only text still gets a nonzero vector
        assert!(h.embed(&["--- ***".to_string()]).is_ok());
        assert!(h.embed(&[]).is_err());
    }

    #[test]
    fn hash_embedder_preserves_lexical_overlap() {
        let h = HashEmbedder::default();
        let m = h
            .embed(&[
                "numpy arrays broadcasting shape".into(),
                "numpy arrays shape dtype".into(),
                "resample rolling window timestamp".into(),
            ])
            .unwrap();
        let near = cosine_distance(m.row(0), m.row(1)).unwrap();
        let far = cosine_distance(m.row(0), m.row(2)).unwrap();
        assert!(near < far);
    }

    #[test]
    fn precomputed_lookup() {
        let texts: Vec<String> = vec!["a b".into(), "c d".into(), "e f".into()];
        let file = EmbeddingsFile::from_texts(
            &texts,
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]],
        );
        let p = PrecomputedEmbedder::from_file(file.clone()).unwrap();
        let m = p.embed(&texts).unwrap();
        assert_eq!(m.data(), &array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);

        let short = EmbeddingsFile {
            dim: 2,
            keys: file.keys[..2].to_vec(),
            vectors: file.vectors[..2].to_vec(),
        };
        let p = PrecomputedEmbedder::from_file(short).unwrap();
        assert!(matches!(p.embed(&texts), Err(Error::CountMismatch(_))));

        let bad_dim = EmbeddingsFile {
            dim: 3,
            ..file
        };
        assert!(PrecomputedEmbedder::from_file(bad_dim).is_err());
    }

    #[test]
    fn content_hash_is_sha256_hex() {
        assert_eq!(
            content_hash("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
