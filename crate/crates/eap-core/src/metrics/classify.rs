//! Pluggable sentiment classification.
//!
//! Sentence sentiment comes from an optional external model behind an HTTP
//! endpoint (`EAP_CLASSIFIER_URL`), with a shipped-lexicon word-count
//! classifier as the no-network default. Endpoint responses are cached in
//! an append-only JSONL file keyed by the text's SHA-256, so a failed run
//! keeps every label it already paid for.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Lexicon;
use crate::corpus::word_split;
use crate::error::{Error, Result};

pub const CLASSIFIER_URL_ENV: &str = "EAP_CLASSIFIER_URL";
const CACHE_FILE: &str = "classifier_cache.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentimentLabel {
    pub label: Polarity,
    pub score: f64,
}

#[derive(Serialize)]
struct ClassifyRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct ClassifyResponse {
    labels: Vec<SentimentLabel>,
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    hash: String,
    label: Polarity,
    score: f64,
}

/// Sentiment classifier with an optional HTTP backend.
pub struct Classifier {
    endpoint: Option<String>,
    cache_path: PathBuf,
    cache: HashMap<String, SentimentLabel>,
    lexicon: Lexicon,
}

impl Classifier {
    /// Explicit endpoint (or `None` for the lexicon fallback) plus a cache
    /// directory. Loads any existing cache file.
    pub fn new(endpoint: Option<String>, cache_dir: &Path, lexicon: Lexicon) -> Result<Classifier> {
        std::fs::create_dir_all(cache_dir)?;
        let cache_path = cache_dir.join(CACHE_FILE);
        let mut cache = HashMap::new();
        if cache_path.exists() {
            for line in std::fs::read_to_string(&cache_path)?.lines() {
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CacheLine = serde_json::from_str(line)?;
                cache.insert(entry.hash, SentimentLabel { label: entry.label, score: entry.score });
            }
        }
        Ok(Classifier { endpoint, cache_path, cache, lexicon })
    }

    /// Endpoint from `EAP_CLASSIFIER_URL` when set.
    pub fn from_env(cache_dir: &Path, lexicon: Lexicon) -> Result<Classifier> {
        let endpoint = std::env::var(CLASSIFIER_URL_ENV).ok().filter(|s| !s.is_empty());
        Self::new(endpoint, cache_dir, lexicon)
    }

    pub fn endpoint(&self) -> Option<&str> {
        self.endpoint.as_deref()
    }

    /// Label a batch of texts. With an endpoint configured, uncached texts
    /// go out in one POST (`{"texts": [...]}` in, `{"labels": [{label,
    /// score}, ...]}` back) and the results are appended to the cache;
    /// without one, the lexicon counts class words, no network involved.
    pub fn classify(&mut self, texts: &[String]) -> Result<Vec<SentimentLabel>> {
        let hashes: Vec<String> = texts.iter().map(|t| text_hash(t)).collect();

        if self.endpoint.is_some() {
            let uncached: Vec<usize> = (0..texts.len())
                .filter(|&i| !self.cache.contains_key(&hashes[i]))
                .collect();
            if !uncached.is_empty() {
                let batch: Vec<String> = uncached.iter().map(|&i| texts[i].clone()).collect();
                let labels = self.post(&batch)?;
                if labels.len() != batch.len() {
                    return Err(Error::Classifier(format!(
                        "endpoint returned {} labels for {} texts",
                        labels.len(),
                        batch.len()
                    )));
                }
                self.append_to_cache(&uncached, &hashes, &labels)?;
            }
            return Ok(hashes.iter().map(|h| self.cache[h]).collect());
        }

        Ok(texts.iter().map(|t| self.lexicon_label(t)).collect())
    }

    fn post(&self, texts: &[String]) -> Result<Vec<SentimentLabel>> {
        let endpoint = self.endpoint.as_deref().expect("checked by caller");
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(60))
            .build()
            .map_err(|e| Error::Classifier(e.to_string()))?;
        let response = client
            .post(endpoint)
            .json(&ClassifyRequest { texts })
            .send()
            .and_then(reqwest::blocking::Response::error_for_status)
            .map_err(|e| Error::Classifier(e.to_string()))?;
        let parsed: ClassifyResponse =
            response.json().map_err(|e| Error::Classifier(format!("malformed response: {e}")))?;
        Ok(parsed.labels)
    }

    fn append_to_cache(
        &mut self,
        indices: &[usize],
        hashes: &[String],
        labels: &[SentimentLabel],
    ) -> Result<()> {
        let mut file = OpenOptions::new().create(true).append(true).open(&self.cache_path)?;
        for (&i, label) in indices.iter().zip(labels) {
            let line = CacheLine {
                hash: hashes[i].clone(),
                label: label.label,
                score: label.score,
            };
            writeln!(file, "{}", serde_json::to_string(&line)?)?;
            self.cache.insert(hashes[i].clone(), *label);
        }
        file.flush()?;
        Ok(())
    }

    /// Word-count classification: positive iff at least as many
    /// positive-class words as negative-class words appear.
    fn lexicon_label(&self, text: &str) -> SentimentLabel {
        let mut pos = 0usize;
        let mut neg = 0usize;
        for word in word_split(text) {
            if self.lexicon.positive_word(&word) {
                pos += 1;
            } else if self.lexicon.negative_word(&word) {
                neg += 1;
            }
        }
        let total = pos + neg;
        if total == 0 {
            return SentimentLabel { label: Polarity::Positive, score: 0.5 };
        }
        let (label, hits) =
            if pos >= neg { (Polarity::Positive, pos) } else { (Polarity::Negative, neg) };
        SentimentLabel { label, score: hits as f64 / total as f64 }
    }
}

fn text_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}
