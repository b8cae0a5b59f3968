//! Relevance features of a (topic, document) pair.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::corpus::{CorpusStats, Document, Topic};
use crate::error::{Error, Result};

/// Version of the relevance/diversity feature layout. Weights trained
/// against one layout are refused by another.
pub const SCHEMA_VERSION: u32 = 1;

pub const RELEVANCE_FEATURES: [&str; 8] = [
    "tf_idf",
    "bm25",
    "lm_dirichlet",
    "mrf_ordered",
    "mrf_unordered",
    "recency",
    "user_rank",
    "retweet",
];

pub const NUM_RELEVANCE: usize = RELEVANCE_FEATURES.len();

const MS_PER_HOUR: f64 = 3.6e6;

/// Relevance feature vector of one candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelevanceVector {
    pub values: [f64; NUM_RELEVANCE],
    pub schema_version: u32,
}

impl RelevanceVector {
    pub fn new(values: [f64; NUM_RELEVANCE]) -> Self {
        Self {
            values,
            schema_version: SCHEMA_VERSION,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureParams {
    pub k1: f64,
    pub b: f64,
    pub mu: f64,
    /// Recency decay per hour.
    pub lambda_r: f64,
    pub ordered_window: usize,
    pub unordered_window: usize,
}

impl Default for FeatureParams {
    fn default() -> Self {
        Self {
            k1: 1.2,
            b: 0.75,
            mu: 2500.0,
            lambda_r: 0.02,
            ordered_window: 1,
            unordered_window: 8,
        }
    }
}

impl FeatureParams {
    /// Apply recognised keys from a flat key/value map; unknown keys are ignored
    /// so one config file can carry settings for several components.
    pub fn apply(&mut self, values: &HashMap<String, String>) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::param(format!("{key}: cannot parse {v:?}")))
        }
        for (key, v) in values {
            match key.as_str() {
                "k1" => self.k1 = num(key, v)?,
                "b" => self.b = num(key, v)?,
                "mu" => self.mu = num(key, v)?,
                "lambda_r" => self.lambda_r = num(key, v)?,
                "ordered_window" => self.ordered_window = num(key, v)?,
                "unordered_window" => self.unordered_window = num(key, v)?,
                _ => {}
            }
        }
        if self.mu < 0.0 || self.k1 < 0.0 || !(0.0..=1.0).contains(&self.b) || self.lambda_r < 0.0 {
            return Err(Error::param(format!("feature parameters out of range: {self:?}")));
        }
        Ok(())
    }
}

/// Parse `key = value` lines. `#` starts a comment; blank lines are skipped.
pub fn parse_key_values(text: &str) -> Result<HashMap<String, String>> {
    let mut map = HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(idx + 1, format!("expected key=value, got {line:?}")))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

pub fn load_key_values(path: impl AsRef<Path>) -> Result<HashMap<String, String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_key_values(&text)
}

fn term_counts(doc: &Document) -> HashMap<&str, usize> {
    let mut tf = HashMap::new();
    for t in &doc.tokens {
        *tf.entry(t.as_str()).or_insert(0) += 1;
    }
    tf
}

pub fn tf_idf_score(topic: &Topic, doc: &Document, stats: &CorpusStats) -> f64 {
    let tf = term_counts(doc);
    topic
        .query_tokens
        .iter()
        .map(|q| {
            let n = tf.get(q.as_str()).copied().unwrap_or(0);
            n as f64 * stats.idf(q)
        })
        .sum()
}

pub fn bm25_score(topic: &Topic, doc: &Document, stats: &CorpusStats, k1: f64, b: f64) -> f64 {
    let tf = term_counts(doc);
    let n = stats.doc_count as f64;
    let avgdl = stats.avg_doc_len();
    let len_norm = if avgdl > 0.0 {
        1.0 - b + b * doc.len() as f64 / avgdl
    } else {
        1.0
    };
    topic
        .query_tokens
        .iter()
        .map(|q| {
            let f = tf.get(q.as_str()).copied().unwrap_or(0) as f64;
            if f == 0.0 {
                return 0.0;
            }
            let df = stats.df(q) as f64;
            let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
            idf * f * (k1 + 1.0) / (f + k1 * len_norm)
        })
        .sum()
}

/// Query likelihood with Dirichlet smoothing. Terms absent from the
/// collection get a background probability of `1 / (2 * total_tokens)`.
pub fn lm_dirichlet_score(topic: &Topic, doc: &Document, stats: &CorpusStats, mu: f64) -> Result<f64> {
    if stats.total_tokens == 0 {
        return Err(Error::EmptyCollection);
    }
    let total = stats.total_tokens as f64;
    let tf = term_counts(doc);
    let dlen = doc.len() as f64;
    Ok(topic
        .query_tokens
        .iter()
        .map(|q| {
            let cf = stats.cf(q);
            let p_c = if cf == 0 { 0.5 / total } else { cf as f64 / total };
            let f = tf.get(q.as_str()).copied().unwrap_or(0) as f64;
            ((f + mu * p_c) / (dlen + mu)).ln()
        })
        .sum())
}

fn query_bigrams(topic: &Topic) -> impl Iterator<Item = (&str, &str)> {
    topic
        .query_tokens
        .windows(2)
        .map(|w| (w[0].as_str(), w[1].as_str()))
}

/// `ln(1 + count)` of ordered occurrences: `a` followed by `b` at most
/// `window` positions later, summed over consecutive query bigrams.
pub fn mrf_ordered(topic: &Topic, doc: &Document, window: usize) -> f64 {
    let toks = &doc.tokens;
    let mut count = 0usize;
    for (a, b) in query_bigrams(topic) {
        for (i, t) in toks.iter().enumerate() {
            if t != a {
                continue;
            }
            let end = (i + window).min(toks.len().saturating_sub(1));
            count += (i + 1..=end).filter(|&j| toks[j] == b).count();
        }
    }
    (count as f64).ln_1p()
}

/// `ln(1 + count)` of unordered co-occurrences: both bigram terms inside a
/// span of at most `window` tokens, in either order.
pub fn mrf_unordered(topic: &Topic, doc: &Document, window: usize) -> f64 {
    let toks = &doc.tokens;
    let mut count = 0usize;
    for (a, b) in query_bigrams(topic) {
        for i in 0..toks.len() {
            let end = (i + window.saturating_sub(1)).min(toks.len().saturating_sub(1));
            for j in i + 1..=end {
                let (x, y) = (toks[i].as_str(), toks[j].as_str());
                if (x == a && y == b) || (x == b && y == a) {
                    count += 1;
                }
            }
        }
    }
    (count as f64).ln_1p()
}

/// Exponential recency decay. Documents newer than the tracking time are
/// clamped to age zero.
pub fn recency_feature(topic: &Topic, doc: &Document, lambda_r: f64) -> f64 {
    let lag_ms = topic.tracking_epoch_ms - doc.epoch_ms;
    if lag_ms < 0 {
        log::warn!(
            "document {} is newer than topic {} tracking time; recency clamped",
            doc.doc_id,
            topic.topic_id
        );
    }
    let hours = lag_ms.max(0) as f64 / MS_PER_HOUR;
    (-lambda_r * hours).exp()
}

pub fn user_rank_feature(doc: &Document) -> f64 {
    (doc.followers as f64).ln_1p()
}

pub fn retweet_feature(doc: &Document) -> f64 {
    (doc.retweets as f64).ln_1p()
}

/// The eight raw features in schema order, before normalization.
pub fn raw_relevance_features(
    topic: &Topic,
    doc: &Document,
    stats: &CorpusStats,
    params: &FeatureParams,
) -> Result<[f64; NUM_RELEVANCE]> {
    Ok([
        tf_idf_score(topic, doc, stats),
        bm25_score(topic, doc, stats, params.k1, params.b),
        lm_dirichlet_score(topic, doc, stats, params.mu)?,
        mrf_ordered(topic, doc, params.ordered_window),
        mrf_unordered(topic, doc, params.unordered_window),
        recency_feature(topic, doc, params.lambda_r),
        user_rank_feature(doc),
        retweet_feature(doc),
    ])
}

/// Min-max normalize each column into [0, 1]; constant columns map to 0.5.
pub fn min_max_normalize(rows: &mut [[f64; NUM_RELEVANCE]]) {
    for f in 0..NUM_RELEVANCE {
        let (lo, hi) = rows
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                (lo.min(r[f]), hi.max(r[f]))
            });
        for r in rows.iter_mut() {
            r[f] = if hi > lo { (r[f] - lo) / (hi - lo) } else { 0.5 };
        }
    }
}

/// Relevance vectors for a candidate window, normalized within that window.
pub fn assemble_relevance_vectors<'a>(
    topic: &Topic,
    docs: impl IntoIterator<Item = &'a Document>,
    stats: &CorpusStats,
    params: &FeatureParams,
) -> Result<Vec<RelevanceVector>> {
    let mut rows = docs
        .into_iter()
        .map(|d| raw_relevance_features(topic, d, stats, params))
        .collect::<Result<Vec<_>>>()?;
    min_max_normalize(&mut rows);
    Ok(rows.into_iter().map(RelevanceVector::new).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Subtopic;

    fn topic(query: &[&str], tracking: i64) -> Topic {
        Topic {
            topic_id: "T".into(),
            query_tokens: query.iter().map(|s| s.to_string()).collect(),
            tracking_epoch_ms: tracking,
            subtopics: vec![Subtopic { id: "s".into(), p: 1.0 }],
        }
    }

    fn doc(id: &str, tokens: &[&str]) -> Document {
        Document {
            doc_id: id.into(),
            epoch_ms: 0,
            raw_text: tokens.join(" "),
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            followers: 0,
            retweets: 0,
        }
    }

    fn two_doc_fixture() -> (Vec<Document>, CorpusStats) {
        let docs = vec![doc("d1", &["a", "b", "a", "c"]), doc("d2", &["b", "d"])];
        let stats = CorpusStats::build(&docs);
        (docs, stats)
    }

    #[test]
    fn tf_idf_examples() {
        let (docs, stats) = two_doc_fixture();
        assert_eq!(tf_idf_score(&topic(&["zzz"], 0), &docs[0], &stats), 0.0);

        let single = doc("x", &["q", "r"]);
        let st = CorpusStats::build([&single]);
        assert_eq!(tf_idf_score(&topic(&["q", "r"], 0), &single, &st), 0.0);

        // tf(a)=2, N=10, df(a)=4 -> 2 ln(11/5)
        let mut st = CorpusStats {
            doc_count: 10,
            ..CorpusStats::default()
        };
        st.doc_frequency.insert("a".into(), 4);
        let d = doc("y", &["a", "a", "b"]);
        let got = tf_idf_score(&topic(&["a"], 0), &d, &st);
        assert!((got - 1.5769147207285406).abs() < 1e-12);
    }

    #[test]
    fn bm25_hand_fixture() {
        // Values computed independently of this crate.
        let (docs, stats) = two_doc_fixture();
        let t = topic(&["a", "b"], 0);
        assert!((bm25_score(&t, &docs[0], &stats, 1.2, 0.75) - 1.0318279969683255).abs() < 1e-12);
        assert!((bm25_score(&t, &docs[1], &stats, 1.2, 0.75) - 0.21110917102457905).abs() < 1e-12);
        assert_eq!(bm25_score(&topic(&["zzz"], 0), &docs[0], &stats, 1.2, 0.75), 0.0);
    }

    #[test]
    fn bm25_saturates() {
        let mut tokens = vec!["a".to_string(); 1_000_000];
        tokens.push("b".into());
        let big = Document {
            tokens,
            ..doc("big", &[])
        };
        let other = doc("o", &["b"; 4]);
        let mut stats = CorpusStats::build([&other]);
        stats.doc_count = 10;
        stats.total_tokens = 10 * 1_000_001;
        stats.doc_frequency.insert("a".into(), 1);
        let (k1, b) = (1.2, 0.75);
        let idf = ((10.0 - 1.0 + 0.5) / 1.5 + 1.0f64).ln();
        let got = bm25_score(&topic(&["a"], 0), &big, &stats, k1, b);
        let bound = idf * (k1 + 1.0);
        assert!(got <= bound);
        assert!((bound - got) / bound < 0.01);
    }

    #[test]
    fn lm_dirichlet_examples() {
        let (docs, stats) = two_doc_fixture();
        let t = topic(&["a", "e"], 0);
        let v = lm_dirichlet_score(&t, &docs[0], &stats, 2500.0).unwrap();
        assert!((v - -3.5843192565837825).abs() < 1e-12);
        let v = lm_dirichlet_score(&t, &docs[0], &stats, 10.0).unwrap();
        assert!((v - -3.7864597824528006).abs() < 1e-12);

        // MLE limit
        let t = topic(&["a", "c"], 0);
        let v = lm_dirichlet_score(&t, &docs[0], &stats, 1e-9).unwrap();
        let mle = (2.0f64 / 4.0).ln() + (1.0f64 / 4.0).ln();
        assert!((v - mle).abs() < 1e-6);

        // background only
        let t = topic(&["d"], 0);
        let mu = 50.0;
        let v = lm_dirichlet_score(&t, &docs[0], &stats, mu).unwrap();
        let expect = (mu * (1.0 / 6.0) / (4.0 + mu)).ln();
        assert!((v - expect).abs() < 1e-12);

        let empty = CorpusStats::default();
        assert!(matches!(
            lm_dirichlet_score(&t, &docs[0], &empty, mu),
            Err(Error::EmptyCollection)
        ));
    }

    #[test]
    fn mrf_examples() {
        let t = topic(&["a"], 0);
        let d = doc("d", &["a", "a", "a"]);
        assert_eq!(mrf_ordered(&t, &d, 1), 0.0);
        assert_eq!(mrf_unordered(&t, &d, 8), 0.0);

        let t = topic(&["a", "b"], 0);
        let d = doc("d", &["a", "b", "c"]);
        assert!((mrf_ordered(&t, &d, 1) - 2f64.ln()).abs() < 1e-15);
        assert!((mrf_unordered(&t, &d, 8) - 2f64.ln()).abs() < 1e-15);

        let d = doc("d", &["b", "x", "a"]);
        assert_eq!(mrf_ordered(&t, &d, 1), 0.0);
        assert!((mrf_unordered(&t, &d, 8) - 2f64.ln()).abs() < 1e-15);
        // span of 3 tokens does not fit a window of 2
        assert_eq!(mrf_unordered(&t, &d, 2), 0.0);
    }

    #[test]
    fn recency_examples() {
        let lambda = 0.02;
        let mut d = doc("d", &["a"]);
        d.epoch_ms = 1_000;
        assert_eq!(recency_feature(&topic(&["a"], 1_000), &d, lambda), 1.0);
        let lag_ms = (2.0 / lambda * MS_PER_HOUR) as i64;
        let v = recency_feature(&topic(&["a"], 1_000 + lag_ms), &d, lambda);
        assert!((v - (-2.0f64).exp()).abs() < 1e-12);
        // future document is clamped
        assert_eq!(recency_feature(&topic(&["a"], 0), &d, lambda), 1.0);
        let older = recency_feature(&topic(&["a"], 10_000_000), &d, lambda);
        let newer = recency_feature(&topic(&["a"], 5_000_000), &d, lambda);
        assert!(newer > older);
    }

    #[test]
    fn social_features() {
        let mut d = doc("d", &[]);
        assert_eq!(user_rank_feature(&d), 0.0);
        d.followers = 2; // e - 1 rounded
        assert!((user_rank_feature(&d) - 1.0).abs() < 0.1);
        d.retweets = 99;
        assert!((retweet_feature(&d) - 100f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn identical_window_normalizes_to_half() {
        let docs = vec![doc("1", &["a", "b"]), doc("2", &["a", "b"]), doc("3", &["a", "b"])];
        let stats = CorpusStats::build(&docs);
        let v = assemble_relevance_vectors(&topic(&["a", "b"], 0), &docs, &stats, &FeatureParams::default())
            .unwrap();
        for rv in v {
            assert!(rv.values.iter().all(|&x| x == 0.5));
            assert_eq!(rv.schema_version, SCHEMA_VERSION);
        }
    }

    #[test]
    fn three_doc_window_matches_component_oracles() {
        let mut docs = vec![
            doc("1", &["a", "b", "c"]),
            doc("2", &["b", "a", "a", "d"]),
            doc("3", &["e", "f"]),
        ];
        docs[0].epoch_ms = 0;
        docs[1].epoch_ms = 3_600_000;
        docs[2].epoch_ms = 7_200_000;
        docs[0].followers = 10;
        docs[2].retweets = 5;
        let stats = CorpusStats::build(&docs);
        let t = topic(&["a", "b"], 7_200_000);
        let p = FeatureParams::default();
        let got = assemble_relevance_vectors(&t, &docs, &stats, &p).unwrap();

        let raw: Vec<[f64; 8]> = docs
            .iter()
            .map(|d| raw_relevance_features(&t, d, &stats, &p).unwrap())
            .collect();
        // tf-idf column by hand: idf(a)=idf(b)=ln(4/3)
        let idf = (4.0f64 / 3.0).ln();
        assert!((raw[0][0] - 2.0 * idf).abs() < 1e-12);
        assert!((raw[1][0] - 3.0 * idf).abs() < 1e-12);
        assert_eq!(raw[2][0], 0.0);
        for f in 0..8 {
            let lo = raw.iter().map(|r| r[f]).fold(f64::INFINITY, f64::min);
            let hi = raw.iter().map(|r| r[f]).fold(f64::NEG_INFINITY, f64::max);
            for (i, r) in raw.iter().enumerate() {
                let expect = if hi > lo { (r[f] - lo) / (hi - lo) } else { 0.5 };
                assert!((got[i].values[f] - expect).abs() < 1e-15);
                assert!((0.0..=1.0).contains(&got[i].values[f]));
            }
        }
        // tf-idf normalized: doc 2 max, doc 3 min
        assert_eq!(got[1].values[0], 1.0);
        assert_eq!(got[2].values[0], 0.0);
        assert!((got[0].values[0] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn key_value_config() {
        let kv = parse_key_values("# features\nk1 = 0.9\nmu=1000 # smaller\n\nunknown=1\n").unwrap();
        let mut p = FeatureParams::default();
        p.apply(&kv).unwrap();
        assert_eq!(p.k1, 0.9);
        assert_eq!(p.mu, 1000.0);
        assert!(parse_key_values("novalue").is_err());
        let mut bad = HashMap::new();
        bad.insert("b".to_string(), "2".to_string());
        assert!(FeatureParams::default().apply(&bad).is_err());
    }
}
