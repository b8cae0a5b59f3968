//! Pairwise diversity features and their aggregation against a selected set.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::corpus::{CorpusStats, Document};
use crate::error::Error;
use crate::plsa::PlsaModel;

pub const DIVERSITY_FEATURES: [&str; 3] = ["cosine", "jaccard", "subtopic_kl"];
pub const NUM_DIVERSITY: usize = DIVERSITY_FEATURES.len();

pub const DEFAULT_KL_EPS: f64 = 1e-6;

/// (cosine, jaccard, subtopic KL) diversity between two documents.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DiversityVector {
    pub values: [f64; NUM_DIVERSITY],
}

impl DiversityVector {
    pub fn new(values: [f64; NUM_DIVERSITY]) -> Self {
        Self { values }
    }
}

/// Diversity of one candidate against each selected document, in selection order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RelationMatrix {
    pub entries: Vec<(String, DiversityVector)>,
}

/// tf·idf weighted term vector, sorted by term.
#[derive(Debug, Clone, PartialEq)]
pub struct TermVector {
    entries: Vec<(String, f64)>,
    sq_norm: f64,
}

impl TermVector {
    pub fn tf_idf(doc: &Document, stats: &CorpusStats) -> Self {
        let mut tf: BTreeMap<&str, f64> = BTreeMap::new();
        for t in &doc.tokens {
            *tf.entry(t.as_str()).or_insert(0.0) += 1.0;
        }
        let entries: Vec<(String, f64)> = tf
            .into_iter()
            .map(|(t, f)| (t.to_string(), f * stats.idf(t)))
            .filter(|(_, w)| *w != 0.0)
            .collect();
        let sq_norm = entries.iter().map(|(_, w)| w * w).sum();
        Self { entries, sq_norm }
    }

    fn dot(&self, other: &TermVector) -> f64 {
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        let (a, b) = (&self.entries, &other.entries);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += a[i].1 * b[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }
}

/// `1 - cos(s_i, s_j)`; 1 when either vector is all-zero.
pub fn cosine_between(a: &TermVector, b: &TermVector) -> f64 {
    if a.sq_norm == 0.0 || b.sq_norm == 0.0 {
        return 1.0;
    }
    let cos = a.dot(b) / (a.sq_norm * b.sq_norm).sqrt();
    (1.0 - cos).clamp(0.0, 1.0)
}

pub fn cosine_diversity(doc_i: &Document, doc_j: &Document, stats: &CorpusStats) -> f64 {
    cosine_between(&TermVector::tf_idf(doc_i, stats), &TermVector::tf_idf(doc_j, stats))
}

/// Sorted, de-duplicated term set of a document.
pub fn term_set(doc: &Document) -> Vec<String> {
    let mut terms = doc.tokens.clone();
    terms.sort();
    terms.dedup();
    terms
}

pub fn jaccard_between(a: &[String], b: &[String]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    1.0 - inter as f64 / union as f64
}

pub fn jaccard_diversity(doc_i: &Document, doc_j: &Document) -> f64 {
    jaccard_between(&term_set(doc_i), &term_set(doc_j))
}

/// KL(P || Q) in nats after adding `eps` to every entry and renormalizing.
pub fn smoothed_kl(p: &[f64], q: &[f64], eps: f64) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    let z = p.len() as f64;
    let denom = 1.0 + z * eps;
    let kl: f64 = p
        .iter()
        .zip(q)
        .map(|(&pi, &qi)| {
            let ps = (pi + eps) / denom;
            let qs = (qi + eps) / denom;
            ps * (ps / qs).ln()
        })
        .sum();
    kl.max(0.0)
}

/// Upper bound of [`smoothed_kl`] over `z`-point distributions:
/// `ln(1 / q_min)` with `q_min = eps / (1 + z * eps)`.
pub fn kl_upper_bound(z: usize, eps: f64) -> f64 {
    ((1.0 + z as f64 * eps) / eps).ln()
}

/// Subtopic diversity of `doc_i` relative to `doc_j` (candidate as P,
/// selected as Q). Documents outside the fitted pool are folded in.
pub fn subtopic_kl_diversity(model: &PlsaModel, doc_i: &Document, doc_j: &Document, eps: f64) -> f64 {
    let post = |d: &Document| match model.posterior(&d.doc_id) {
        Some(p) => p.to_vec(),
        None => model.fold_in(d, 50),
    };
    smoothed_kl(&post(doc_i), &post(doc_j), eps)
}

/// Relational function over the selected set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AggregationMode {
    #[default]
    Min,
    Avg,
    Max,
}

impl FromStr for AggregationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "min" => Ok(Self::Min),
            "avg" => Ok(Self::Avg),
            "max" => Ok(Self::Max),
            other => Err(Error::param(format!("unknown aggregation mode {other:?}"))),
        }
    }
}

impl fmt::Display for AggregationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Min => "min",
            Self::Avg => "avg",
            Self::Max => "max",
        })
    }
}

/// Running component-wise aggregate, updated one selected document at a time.
/// Produces bit-identical results to [`relational_aggregate`] for the same
/// insertion order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    mode: AggregationMode,
    acc: [f64; NUM_DIVERSITY],
    count: usize,
}

impl Aggregate {
    pub fn new(mode: AggregationMode) -> Self {
        Self {
            mode,
            acc: [0.0; NUM_DIVERSITY],
            count: 0,
        }
    }

    pub fn push(&mut self, v: &DiversityVector) {
        for (a, &x) in self.acc.iter_mut().zip(&v.values) {
            *a = match (self.count, self.mode) {
                (0, _) => x,
                (_, AggregationMode::Min) => a.min(x),
                (_, AggregationMode::Max) => a.max(x),
                (_, AggregationMode::Avg) => *a + x,
            };
        }
        self.count += 1;
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Current value; all zeros for an empty set so the diversity term vanishes.
    pub fn value(&self) -> DiversityVector {
        if self.count == 0 {
            return DiversityVector::default();
        }
        let mut values = self.acc;
        if self.mode == AggregationMode::Avg {
            values.iter_mut().for_each(|v| *v /= self.count as f64);
        }
        DiversityVector { values }
    }
}

pub fn relational_aggregate(relations: &RelationMatrix, mode: AggregationMode) -> DiversityVector {
    let mut agg = Aggregate::new(mode);
    for (_, v) in &relations.entries {
        agg.push(v);
    }
    agg.value()
}

#[cfg(test)]
mod tests {
    use super::*;

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

    #[test]
    fn cosine_examples() {
        let docs = [
            doc("1", &["a", "b", "b"]),
            doc("2", &["a", "b", "b"]),
            doc("3", &["c", "d"]),
            doc("4", &["b", "c", "e"]),
        ];
        let stats = CorpusStats::build(&docs);
        assert_eq!(cosine_diversity(&docs[0], &docs[1], &stats), 0.0);
        assert_eq!(cosine_diversity(&docs[0], &docs[2], &stats), 1.0);

        // fixture pair 1 vs 4 by hand: N=4, df a=2 b=3 c=2 d=1 e=1
        let idf = |df: f64| (5.0 / (df + 1.0)).ln();
        let s1 = [("a", idf(2.0)), ("b", 2.0 * idf(3.0))];
        let s4 = [("b", idf(3.0)), ("c", idf(2.0)), ("e", idf(1.0))];
        let dot = s1[1].1 * s4[0].1;
        let n1: f64 = s1.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        let n4: f64 = s4.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        let expect = 1.0 - dot / (n1 * n4);
        assert!((cosine_diversity(&docs[0], &docs[3], &stats) - expect).abs() < 1e-12);

        // a term present everywhere has zero idf; a doc made only of it is a zero vector
        let everywhere = [doc("1", &["x"]), doc("2", &["x", "y"])];
        let st = CorpusStats::build(&everywhere);
        assert_eq!(cosine_diversity(&everywhere[0], &everywhere[1], &st), 1.0);
    }

    #[test]
    fn jaccard_examples() {
        assert_eq!(jaccard_diversity(&doc("1", &["a", "b"]), &doc("2", &["b", "a", "a"])), 0.0);
        let v = jaccard_diversity(&doc("1", &["a", "b"]), &doc("2", &["b", "c"]));
        assert!((v - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(jaccard_diversity(&doc("1", &["a"]), &doc("2", &["b"])), 1.0);
        assert_eq!(jaccard_diversity(&doc("1", &[]), &doc("2", &[])), 0.0);
    }

    #[test]
    fn kl_examples() {
        assert_eq!(smoothed_kl(&[0.3, 0.7], &[0.3, 0.7], DEFAULT_KL_EPS), 0.0);
        let v = smoothed_kl(&[0.9, 0.1], &[0.1, 0.9], DEFAULT_KL_EPS);
        // exact smoothed value, and the unsmoothed 0.8 ln 9 within the smoothing error
        assert!((v - 1.7577690352592996).abs() < 1e-12);
        assert!((v - 1.7577796618689758).abs() < 1e-4);
        let back = smoothed_kl(&[0.1, 0.9], &[0.9, 0.1], DEFAULT_KL_EPS);
        assert!(back >= 0.0);
        let p = [0.7, 0.2, 0.1];
        let q = [0.1, 0.3, 0.6];
        assert_ne!(smoothed_kl(&p, &q, DEFAULT_KL_EPS), smoothed_kl(&q, &p, DEFAULT_KL_EPS));
        // zeros stay finite and inside the bound
        let v = smoothed_kl(&[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0], DEFAULT_KL_EPS);
        assert!(v.is_finite() && v <= kl_upper_bound(3, DEFAULT_KL_EPS));
    }

    #[test]
    fn aggregation_examples() {
        let m = RelationMatrix {
            entries: vec![
                ("x".into(), DiversityVector::new([0.2, 0.5, 1.0])),
                ("y".into(), DiversityVector::new([0.4, 0.1, 2.0])),
            ],
        };
        assert_eq!(relational_aggregate(&m, AggregationMode::Min).values, [0.2, 0.1, 1.0]);
        assert_eq!(relational_aggregate(&m, AggregationMode::Max).values, [0.4, 0.5, 2.0]);

        let single = RelationMatrix {
            entries: vec![("x".into(), DiversityVector::new([0.3, 0.6, 0.9]))],
        };
        for mode in [AggregationMode::Min, AggregationMode::Avg, AggregationMode::Max] {
            assert_eq!(relational_aggregate(&single, mode).values, [0.3, 0.6, 0.9]);
            assert_eq!(relational_aggregate(&RelationMatrix::default(), mode).values, [0.0; 3]);
        }

        let avg = RelationMatrix {
            entries: vec![
                ("x".into(), DiversityVector::new([0.0, 0.0, 0.0])),
                ("y".into(), DiversityVector::new([1.0, 1.0, 2.0])),
            ],
        };
        assert_eq!(relational_aggregate(&avg, AggregationMode::Avg).values, [0.5, 0.5, 1.0]);
    }

    #[test]
    fn min_aggregate_non_increasing() {
        let vs = [[0.9, 0.8, 0.7], [0.5, 0.9, 0.9], [0.7, 0.2, 0.8], [0.1, 0.3, 0.05]];
        let mut agg = Aggregate::new(AggregationMode::Min);
        let mut prev: Option<DiversityVector> = None;
        for v in vs {
            agg.push(&DiversityVector::new(v));
            let cur = agg.value();
            if let Some(p) = prev {
                for k in 0..3 {
                    assert!(cur.values[k] <= p.values[k]);
                }
            }
            prev = Some(cur);
        }
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("avg".parse::<AggregationMode>().unwrap(), AggregationMode::Avg);
        assert!("median".parse::<AggregationMode>().is_err());
        assert_eq!(AggregationMode::default().to_string(), "min");
    }
}
