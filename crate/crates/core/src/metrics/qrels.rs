use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const DAY_MS: i64 = 24 * 3_600_000;

/// Recency lag of a judged document: the rescaled grade, plus the raw lag
/// when it is known.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Recency {
    pub grade: u8,
    pub lag_ms: Option<i64>,
}

/// Timestamp and author weight of a stream document.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DocMeta {
    pub epoch_ms: i64,
    pub followers: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GradeThresholds {
    /// Lag at or below which a document is "latest" (grade 0).
    pub latest_ms: i64,
    /// Lag at or below which a document is "recent" (grade 1).
    pub recent_ms: i64,
    /// Followers needed for an "important" account (grade 2).
    pub important_followers: u64,
    /// Followers needed for a "significant" account (grade 3).
    pub significant_followers: u64,
}

impl Default for GradeThresholds {
    fn default() -> Self {
        Self {
            latest_ms: 2 * DAY_MS,
            recent_ms: 7 * DAY_MS,
            important_followers: 1_000,
            significant_followers: 100_000,
        }
    }
}

/// Map a recency lag onto {0 latest, 1 recent, 2 history}. Negative lags
/// (documents newer than the tracking time) are clamped to zero.
pub fn rescale_recency(lag_ms: i64, latest_ms: i64, recent_ms: i64) -> Result<u8> {
    if latest_ms >= recent_ms {
        return Err(Error::param(format!(
            "recency thresholds must increase ({latest_ms} >= {recent_ms})"
        )));
    }
    let lag = lag_ms.max(0);
    Ok(if lag <= latest_ms {
        0
    } else if lag <= recent_ms {
        1
    } else {
        2
    })
}

/// Map a follower count onto {1 normal, 2 important, 3 significant}.
pub fn rescale_confidence(followers: u64, important: u64, significant: u64) -> u8 {
    if followers >= significant {
        3
    } else if followers >= important {
        2
    } else {
        1
    }
}

/// Subtopic-level judgments plus per-document recency and confidence grades.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Qrels {
    /// topic -> doc -> [(subtopic, grade)]
    judgments: BTreeMap<String, BTreeMap<String, Vec<(String, u8)>>>,
    recency: HashMap<(String, String), Recency>,
    confidence: HashMap<String, u8>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, topic: &str, subtopic: &str, doc: &str, grade: u8) -> Result<()> {
        if grade > 2 {
            return Err(Error::param(format!("grade {grade} outside 0..=2")));
        }
        let entry = self
            .judgments
            .entry(topic.to_string())
            .or_default()
            .entry(doc.to_string())
            .or_default();
        match entry.iter_mut().find(|(s, _)| s == subtopic) {
            Some(existing) => existing.1 = grade,
            None => entry.push((subtopic.to_string(), grade)),
        }
        Ok(())
    }

    pub fn set_recency(&mut self, topic: &str, doc: &str, recency: Recency) -> Result<()> {
        if recency.grade > 2 {
            return Err(Error::param(format!("t_rcy {} outside 0..=2", recency.grade)));
        }
        self.recency.insert((topic.to_string(), doc.to_string()), recency);
        Ok(())
    }

    pub fn set_confidence(&mut self, doc: &str, u_r: u8) -> Result<()> {
        if !(1..=3).contains(&u_r) {
            return Err(Error::param(format!("u_r {u_r} outside 1..=3")));
        }
        self.confidence.insert(doc.to_string(), u_r);
        Ok(())
    }

    pub fn has_topic(&self, topic: &str) -> bool {
        self.judgments.contains_key(topic)
    }

    pub fn topics(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    /// Judgments of one document for a topic, as (subtopic, grade).
    pub fn doc_judgments(&self, topic: &str, doc: &str) -> &[(String, u8)] {
        self.judgments
            .get(topic)
            .and_then(|d| d.get(doc))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn grade(&self, topic: &str, subtopic: &str, doc: &str) -> u8 {
        self.doc_judgments(topic, doc)
            .iter()
            .find(|(s, _)| s == subtopic)
            .map(|(_, g)| *g)
            .unwrap_or(0)
    }

    /// Every judged document of a topic, in doc_id order.
    pub fn judged_docs(&self, topic: &str) -> impl Iterator<Item = &str> {
        self.judgments
            .get(topic)
            .into_iter()
            .flat_map(|d| d.keys().map(String::as_str))
    }

    /// Recency grade; 0 (latest) when nothing is known.
    pub fn recency(&self, topic: &str, doc: &str) -> Recency {
        self.recency
            .get(&(topic.to_string(), doc.to_string()))
            .copied()
            .unwrap_or(Recency { grade: 0, lag_ms: None })
    }

    /// Confidence grade; 1 (normal account) when nothing is known.
    pub fn confidence(&self, doc: &str) -> u8 {
        self.confidence.get(doc).copied().unwrap_or(1)
    }

    /// Judgments of one topic as seen at `as_of_ms`: the judged pool is
    /// limited to documents published by then, and recency/confidence grades
    /// not given explicitly are derived from the stream metadata.
    pub fn snapshot(
        &self,
        topic: &str,
        as_of_ms: i64,
        meta: &HashMap<String, DocMeta>,
        thresholds: &GradeThresholds,
    ) -> Result<Qrels> {
        let docs = self
            .judgments
            .get(topic)
            .ok_or_else(|| Error::TopicNotJudged(topic.to_string()))?;
        let mut out = Qrels::new();
        let mut kept = BTreeMap::new();
        for (doc, judged) in docs {
            let m = meta.get(doc);
            if let Some(m) = m {
                if m.epoch_ms > as_of_ms {
                    continue;
                }
            }
            kept.insert(doc.clone(), judged.clone());
            let key = (topic.to_string(), doc.clone());
            let recency = match (self.recency.get(&key), m) {
                (Some(r), _) => *r,
                (None, Some(m)) => {
                    let lag = as_of_ms - m.epoch_ms;
                    Recency {
                        grade: rescale_recency(lag, thresholds.latest_ms, thresholds.recent_ms)?,
                        lag_ms: Some(lag),
                    }
                }
                (None, None) => Recency { grade: 0, lag_ms: None },
            };
            out.recency.insert(key, recency);
            let conf = match (self.confidence.get(doc), m) {
                (Some(&u), _) => u,
                (None, Some(m)) => rescale_confidence(
                    m.followers,
                    thresholds.important_followers,
                    thresholds.significant_followers,
                ),
                (None, None) => 1,
            };
            out.confidence.insert(doc.clone(), conf);
        }
        out.judgments.insert(topic.to_string(), kept);
        Ok(out)
    }

    /// Parse qrels TSV: `topic_id subtopic_id doc_id grade` (tab or space separated).
    pub fn read(reader: impl BufRead) -> Result<Self> {
        let mut q = Qrels::new();
        q.extend_from(reader)?;
        Ok(q)
    }

    pub fn extend_from(&mut self, reader: impl BufRead) -> Result<()> {
        for (idx, line) in reader.lines().enumerate() {
            let lineno = idx + 1;
            let line = line.map_err(|e| Error::parse(lineno, e.to_string()))?;
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.is_empty() {
                continue;
            }
            if cols.len() != 4 {
                return Err(Error::parse(lineno, format!("expected 4 columns, found {}", cols.len())));
            }
            let grade: u8 = cols[3]
                .parse()
                .map_err(|_| Error::parse(lineno, format!("bad grade {:?}", cols[3])))?;
            self.insert(cols[0], cols[1], cols[2], grade)
                .map_err(|e| Error::parse(lineno, e.to_string()))?;
        }
        Ok(())
    }

    /// Parse the recency/confidence sidecar: `topic_id doc_id t_rcy u_r`.
    pub fn read_sidecar(&mut self, reader: impl BufRead) -> Result<()> {
        for (idx, line) in reader.lines().enumerate() {
            let lineno = idx + 1;
            let line = line.map_err(|e| Error::parse(lineno, e.to_string()))?;
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.is_empty() {
                continue;
            }
            if cols.len() != 4 {
                return Err(Error::parse(lineno, format!("expected 4 columns, found {}", cols.len())));
            }
            let parse = |s: &str, what: &str| {
                s.parse::<u8>()
                    .map_err(|_| Error::parse(lineno, format!("bad {what} {s:?}")))
            };
            let t = parse(cols[2], "t_rcy")?;
            let u = parse(cols[3], "u_r")?;
            self.set_recency(cols[0], cols[1], Recency { grade: t, lag_ms: None })
                .and_then(|_| self.set_confidence(cols[1], u))
                .map_err(|e| Error::parse(lineno, e.to_string()))?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(f))
    }

    pub fn load_sidecar(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        self.read_sidecar(BufReader::new(f))
    }

    pub fn write(&self, mut w: impl Write) -> std::io::Result<()> {
        for (topic, docs) in &self.judgments {
            let mut lines = BTreeSet::new();
            for (doc, judged) in docs {
                for (sub, grade) in judged {
                    lines.insert((sub.as_str(), doc.as_str(), *grade));
                }
            }
            for (sub, doc, grade) in lines {
                writeln!(w, "{topic}\t{sub}\t{doc}\t{grade}")?;
            }
        }
        w.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recency_rescaling() {
        let (a, b) = (2 * DAY_MS, 7 * DAY_MS);
        assert_eq!(rescale_recency(0, a, b).unwrap(), 0);
        assert_eq!(rescale_recency(3 * DAY_MS, a, b).unwrap(), 1);
        assert_eq!(rescale_recency(30 * DAY_MS, a, b).unwrap(), 2);
        assert_eq!(rescale_recency(2 * DAY_MS, a, b).unwrap(), 0);
        assert_eq!(rescale_recency(7 * DAY_MS, a, b).unwrap(), 1);
        assert_eq!(rescale_recency(-5, a, b).unwrap(), 0);
        assert!(rescale_recency(0, b, a).is_err());
        assert!(rescale_recency(0, a, a).is_err());
    }

    #[test]
    fn confidence_rescaling() {
        assert_eq!(rescale_confidence(0, 1_000, 100_000), 1);
        assert_eq!(rescale_confidence(5_000, 1_000, 100_000), 2);
        assert_eq!(rescale_confidence(200_000, 1_000, 100_000), 3);
    }

    #[test]
    fn parse_and_write() {
        let text = "T1\ts1\td1\t2\nT1 s2 d1 1\n\nT1\ts1\td2\t0\n";
        let q = Qrels::read(text.as_bytes()).unwrap();
        assert_eq!(q.grade("T1", "s1", "d1"), 2);
        assert_eq!(q.grade("T1", "s2", "d1"), 1);
        assert_eq!(q.grade("T1", "s3", "d1"), 0);
        assert_eq!(q.judged_docs("T1").collect::<Vec<_>>(), ["d1", "d2"]);
        let mut buf = Vec::new();
        q.write(&mut buf).unwrap();
        assert_eq!(Qrels::read(buf.as_slice()).unwrap(), q);

        assert!(Qrels::read("T1 s1 d1 3\n".as_bytes()).is_err());
        assert!(Qrels::read("T1 s1 d1\n".as_bytes()).is_err());
    }

    #[test]
    fn sidecar_and_defaults() {
        let mut q = Qrels::read("T1 s1 d1 1\nT1 s1 d2 1\n".as_bytes()).unwrap();
        q.read_sidecar("T1 d1 2 3\n".as_bytes()).unwrap();
        assert_eq!(q.recency("T1", "d1").grade, 2);
        assert_eq!(q.confidence("d1"), 3);
        assert_eq!(q.recency("T1", "d2").grade, 0);
        assert_eq!(q.confidence("d2"), 1);
        assert!(q.read_sidecar("T1 d1 3 1\n".as_bytes()).is_err());
        assert!(q.read_sidecar("T1 d1 0 4\n".as_bytes()).is_err());
    }

    #[test]
    fn snapshot_limits_pool_and_derives_grades() {
        let q = Qrels::read("T1 s1 old 1\nT1 s1 new 1\nT1 s1 future 1\nT1 s1 nometa 1\n".as_bytes()).unwrap();
        let meta: HashMap<String, DocMeta> = [
            ("old", 0, 50),
            ("new", 9 * DAY_MS, 5_000),
            ("future", 20 * DAY_MS, 0),
        ]
        .into_iter()
        .map(|(d, t, f)| (d.to_string(), DocMeta { epoch_ms: t, followers: f }))
        .collect();
        let snap = q.snapshot("T1", 10 * DAY_MS, &meta, &GradeThresholds::default()).unwrap();
        assert_eq!(snap.judged_docs("T1").collect::<Vec<_>>(), ["new", "nometa", "old"]);
        assert_eq!(snap.recency("T1", "old").grade, 2);
        assert_eq!(snap.recency("T1", "old").lag_ms, Some(10 * DAY_MS));
        assert_eq!(snap.recency("T1", "new").grade, 0);
        assert_eq!(snap.confidence("new"), 2);
        assert_eq!(snap.confidence("old"), 1);
        assert!(q.snapshot("T9", 0, &meta, &GradeThresholds::default()).is_err());
    }
}
