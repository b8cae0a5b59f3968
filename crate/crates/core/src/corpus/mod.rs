//! Stream documents, tracked topics, tokenization and collection statistics.

pub mod porter;

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One stream item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub epoch_ms: i64,
    pub raw_text: String,
    pub tokens: Vec<String>,
    pub followers: u64,
    pub retweets: u64,
}

impl Document {
    pub fn new(
        doc_id: impl Into<String>,
        epoch_ms: i64,
        raw_text: impl Into<String>,
        followers: u64,
        retweets: u64,
    ) -> Self {
        let raw_text = raw_text.into();
        let tokens = tokenize(&raw_text);
        Self {
            doc_id: doc_id.into(),
            epoch_ms,
            raw_text,
            tokens,
            followers,
            retweets,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn term_frequency(&self, term: &str) -> usize {
        self.tokens.iter().filter(|t| t.as_str() == term).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subtopic {
    pub id: String,
    pub p: f64,
}

/// A tracked query.
#[derive(Debug, Clone, PartialEq)]
pub struct Topic {
    pub topic_id: String,
    pub query_tokens: Vec<String>,
    /// The "current time" of topic tracking.
    pub tracking_epoch_ms: i64,
    pub subtopics: Vec<Subtopic>,
}

impl Topic {
    pub fn new(
        topic_id: impl Into<String>,
        query: &str,
        tracking_epoch_ms: i64,
        subtopics: Vec<Subtopic>,
    ) -> Result<Self> {
        let topic = Self {
            topic_id: topic_id.into(),
            query_tokens: tokenize(query),
            tracking_epoch_ms,
            subtopics,
        };
        topic.validate()?;
        Ok(topic)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |message: &str| Error::InvalidTopic {
            topic: self.topic_id.clone(),
            message: message.to_string(),
        };
        if self.query_tokens.is_empty() {
            return Err(fail("query has no tokens"));
        }
        if self.subtopics.is_empty() {
            return Err(fail("no subtopics"));
        }
        if self.subtopics.iter().any(|s| s.p < 0.0 || !s.p.is_finite()) {
            return Err(fail("subtopic probability must be a finite non-negative number"));
        }
        let total: f64 = self.subtopics.iter().map(|s| s.p).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(fail(&format!("subtopic probabilities sum to {total}")));
        }
        Ok(())
    }

    /// The same topic observed at a different tracking time.
    pub fn at(&self, tracking_epoch_ms: i64) -> Topic {
        Topic {
            tracking_epoch_ms,
            ..self.clone()
        }
    }

    pub fn subtopic_probability(&self, subtopic_id: &str) -> Option<f64> {
        self.subtopics
            .iter()
            .find(|s| s.id == subtopic_id)
            .map(|s| s.p)
    }
}

/// Lowercase, strip URLs, split on anything that is not a letter, digit,
/// `#` or `@`, then Porter-stem. Stopwords are kept.
pub fn tokenize(raw_text: &str) -> Vec<String> {
    let lower = raw_text.to_lowercase();
    let mut tokens = Vec::new();
    for chunk in lower.split_whitespace() {
        let chunk = strip_urls(chunk);
        for piece in chunk.split(|c: char| !(c.is_alphanumeric() || c == '#' || c == '@')) {
            if piece.chars().any(char::is_alphanumeric) {
                tokens.push(porter::stem(piece));
            }
        }
    }
    tokens
}

// A URL runs to the next whitespace, so within a whitespace-free chunk
// everything from the first scheme marker onward is dropped.
fn strip_urls(chunk: &str) -> &str {
    let cut = [chunk.find("http://"), chunk.find("https://")]
        .into_iter()
        .flatten()
        .min();
    match cut {
        Some(i) => &chunk[..i],
        None => chunk,
    }
}

/// Collection statistics used by the weighting models.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorpusStats {
    pub doc_count: u64,
    pub total_tokens: u64,
    pub doc_frequency: HashMap<String, u64>,
    pub collection_frequency: HashMap<String, u64>,
}

impl CorpusStats {
    pub fn build<'a>(documents: impl IntoIterator<Item = &'a Document>) -> Self {
        let mut stats = Self::default();
        stats.update(documents);
        stats
    }

    /// Extend the statistics with more documents.
    pub fn update<'a>(&mut self, documents: impl IntoIterator<Item = &'a Document>) {
        for doc in documents {
            self.doc_count += 1;
            self.total_tokens += doc.tokens.len() as u64;
            let mut seen = HashSet::new();
            for token in &doc.tokens {
                *self.collection_frequency.entry(token.clone()).or_default() += 1;
                if seen.insert(token.as_str()) {
                    *self.doc_frequency.entry(token.clone()).or_default() += 1;
                }
            }
        }
    }

    pub fn avg_doc_len(&self) -> f64 {
        if self.doc_count == 0 {
            0.0
        } else {
            self.total_tokens as f64 / self.doc_count as f64
        }
    }

    pub fn df(&self, term: &str) -> u64 {
        self.doc_frequency.get(term).copied().unwrap_or(0)
    }

    pub fn cf(&self, term: &str) -> u64 {
        self.collection_frequency.get(term).copied().unwrap_or(0)
    }

    /// Smoothed inverse document frequency `ln((N + 1) / (df + 1))`.
    pub fn idf(&self, term: &str) -> f64 {
        ((self.doc_count as f64 + 1.0) / (self.df(term) as f64 + 1.0)).ln()
    }
}

/// One line of the stream JSONL format.
#[derive(Debug, Serialize, Deserialize)]
struct StreamRecord {
    id: String,
    epoch_ms: i64,
    text: String,
    followers: u64,
    retweets: u64,
}

const STREAM_FIELDS: [&str; 5] = ["id", "epoch_ms", "text", "followers", "retweets"];

/// Parse a stream from any reader, one JSON object per line.
pub fn read_jsonl(reader: impl BufRead) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::parse(lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| Error::parse(lineno, format!("malformed json: {e}")))?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::parse(lineno, "expected a json object"))?;
        if let Some(missing) = STREAM_FIELDS.iter().find(|f| !obj.contains_key(**f)) {
            return Err(Error::parse(lineno, format!("missing field {missing}")));
        }
        let record: StreamRecord = serde_json::from_value(value)
            .map_err(|e| Error::parse(lineno, format!("invalid record: {e}")))?;
        if record.epoch_ms < 0 {
            return Err(Error::parse(lineno, "epoch_ms must be non-negative"));
        }
        if !seen.insert(record.id.clone()) {
            return Err(Error::DuplicateDoc(record.id));
        }
        docs.push(Document::new(
            record.id,
            record.epoch_ms,
            record.text,
            record.followers,
            record.retweets,
        ));
    }
    Ok(docs)
}

pub fn ingest_jsonl(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_jsonl(BufReader::new(file)).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

pub fn write_jsonl(writer: impl Write, documents: &[Document]) -> std::io::Result<()> {
    let mut w = BufWriter::new(writer);
    for doc in documents {
        let record = StreamRecord {
            id: doc.doc_id.clone(),
            epoch_ms: doc.epoch_ms,
            text: doc.raw_text.clone(),
            followers: doc.followers,
            retweets: doc.retweets,
        };
        serde_json::to_writer(&mut w, &record)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

#[derive(Debug, Serialize, Deserialize)]
struct TopicRecord {
    topic_id: String,
    query: String,
    tracking_epoch_ms: i64,
    subtopics: Vec<SubtopicRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SubtopicRecord {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    p: Option<f64>,
}

/// Parse a JSON array of topics. Subtopics without `p` get a uniform share;
/// mixing explicit and omitted probabilities is rejected.
pub fn parse_topics(json: &str) -> Result<Vec<Topic>> {
    let records: Vec<TopicRecord> = serde_json::from_str(json)?;
    let mut seen = HashSet::new();
    records
        .into_iter()
        .map(|r| {
            if !seen.insert(r.topic_id.clone()) {
                return Err(Error::InvalidTopic {
                    topic: r.topic_id.clone(),
                    message: "duplicate topic_id".into(),
                });
            }
            let explicit = r.subtopics.iter().filter(|s| s.p.is_some()).count();
            let n = r.subtopics.len();
            if explicit != 0 && explicit != n {
                return Err(Error::InvalidTopic {
                    topic: r.topic_id,
                    message: "either all or none of the subtopics may carry p".into(),
                });
            }
            let subtopics = r
                .subtopics
                .into_iter()
                .map(|s| Subtopic {
                    p: s.p.unwrap_or(1.0 / n as f64),
                    id: s.id,
                })
                .collect();
            Topic::new(r.topic_id, &r.query, r.tracking_epoch_ms, subtopics)
        })
        .collect()
}

pub fn load_topics(path: impl AsRef<Path>) -> Result<Vec<Topic>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_topics(&text)
}

/// Serialize topics. `query` strings are written as given in `queries`
/// because stemmed tokens cannot be turned back into raw text.
pub fn topics_to_json(topics: &[(Topic, String)]) -> Result<String> {
    let records: Vec<TopicRecord> = topics
        .iter()
        .map(|(t, query)| TopicRecord {
            topic_id: t.topic_id.clone(),
            query: query.clone(),
            tracking_epoch_ms: t.tracking_epoch_ms,
            subtopics: t
                .subtopics
                .iter()
                .map(|s| SubtopicRecord {
                    id: s.id.clone(),
                    p: Some(s.p),
                })
                .collect(),
        })
        .collect();
    Ok(serde_json::to_string_pretty(&records)?)
}
