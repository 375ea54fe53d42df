use std::collections::{BTreeMap, BTreeSet};

use serde_json::Value;

use super::{ask, render, reply_json, ChatClient, NAME_PROMPT};
use crate::embeddings::{content_hash, tokenize};
use crate::error::{Error, Result};

/// Fixed English stopword list excluded from TF-IDF labels.
pub const STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "also", "am", "an", "and", "any", "are", "as", "at",
    "be", "because", "been", "before", "being", "below", "between", "both", "but", "by", "can", "could", "did", "do",
    "does", "doing", "down", "during", "each", "either", "etc", "few", "for", "from", "further", "get", "gets", "had",
    "has", "have", "having", "he", "her", "here", "hers", "him", "his", "how", "i", "if", "in", "into", "is", "it",
    "its", "itself", "just", "like", "may", "me", "might", "more", "most", "much", "must", "my", "no", "nor", "not",
    "now", "of", "off", "on", "once", "one", "only", "or", "other", "our", "out", "over", "own", "same", "she",
    "should", "so", "some", "such", "than", "that", "the", "their", "them", "then", "there", "these", "they", "this",
    "those", "through", "to", "too", "under", "until", "up", "use", "used", "uses", "using", "very", "was", "we",
    "were", "what", "when", "where", "which", "while", "who", "whom", "why", "will", "with", "would", "you", "your",
];

const LABEL_TERMS: usize = 3;
const MAX_LABEL_WORDS: usize = 6;

fn is_stopword(t: &str) -> bool {
    STOPWORDS.binary_search(&t).is_ok()
}

fn terms(text: &str) -> impl Iterator<Item = String> + '_ {
    tokenize(text).filter(|t| t.chars().count() > 1 && !t.chars().all(|c| c.is_ascii_digit()) && !is_stopword(t))
}

fn title_case(t: &str) -> String {
    let mut c = t.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// TF-IDF keyword labeler over a fixed unit corpus.
#[derive(Debug, Clone)]
pub struct TfIdfNamer {
    df: BTreeMap<String, usize>,
    units: usize,
}

impl TfIdfNamer {
    pub fn new(corpus: &[String]) -> Self {
        let mut df = BTreeMap::new();
        for unit in corpus {
            let uniq: BTreeSet<String> = terms(unit).collect();
            for t in uniq {
                *df.entry(t).or_insert(0) += 1;
            }
        }
        Self { df, units: corpus.len() }
    }

    /// Scores `tf(term, group) · ln(1 + N / df(term))`, sorted by score then term.
    pub fn scores(&self, texts: &[String]) -> Vec<(String, f64)> {
        let mut tf: BTreeMap<String, usize> = BTreeMap::new();
        for t in texts.iter().flat_map(|x| terms(x)) {
            *tf.entry(t).or_insert(0) += 1;
        }
        let n = self.units.max(1) as f64;
        let mut scored: Vec<(String, f64)> = tf
            .into_iter()
            .map(|(t, c)| {
                let df = self.df.get(&t).copied().unwrap_or(0).max(1) as f64;
                let s = c as f64 * (1.0 + n / df).ln();
                (t, s)
            })
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        scored
    }

    pub fn label(&self, texts: &[String]) -> String {
        let top: Vec<String> = self
            .scores(texts)
            .into_iter()
            .take(LABEL_TERMS)
            .map(|(t, _)| title_case(&t))
            .collect();
        if top.is_empty() {
            format!("Concept {}", &content_hash(&texts.join("\n"))[..8])
        } else {
            top.join(" ")
        }
    }
}

fn clean_label(raw: &str) -> Option<String> {
    let words: Vec<&str> = raw.split_whitespace().collect();
    if words.is_empty() {
        return None;
    }
    Some(words[..words.len().min(MAX_LABEL_WORDS)].join(" "))
}

/// Names the concept shared by `texts`, asking the client first when one is given.
pub fn name_concept(texts: &[String], client: Option<&dyn ChatClient>, fallback: &TfIdfNamer) -> Result<String> {
    if texts.is_empty() || texts.iter().all(|t| t.trim().is_empty()) {
        return Err(Error::EmptyInput);
    }
    if let Some(c) = client {
        let listing: String = texts.iter().map(|t| format!("- {}\n", t.trim())).collect();
        let prompt = render(NAME_PROMPT, &[("texts", &listing)]);
        match ask(c, &prompt) {
            Ok(reply) => {
                let label = reply_json(&reply)
                    .and_then(|v| v.get("label").and_then(Value::as_str).map(str::to_string))
                    .and_then(|s| clean_label(&s));
                if let Some(l) = label {
                    return Ok(l);
                }
                log::warn!("namer returned no usable label; using TF-IDF fallback");
            }
            Err(e) => log::warn!("namer unavailable ({e}); using TF-IDF fallback"),
        }
    }
    Ok(fallback.label(texts))
}

/// Namer bound to a lecture corpus and an optional client.
pub struct ConceptNamer<'a> {
    pub tfidf: TfIdfNamer,
    pub client: Option<&'a dyn ChatClient>,
}

impl<'a> ConceptNamer<'a> {
    pub fn new(corpus: &[String], client: Option<&'a dyn ChatClient>) -> Self {
        Self {
            tfidf: TfIdfNamer::new(corpus),
            client,
        }
    }

    pub fn name(&self, texts: &[String]) -> String {
        name_concept(texts, self.client, &self.tfidf).unwrap_or_else(|_| self.tfidf.label(texts))
    }
}
