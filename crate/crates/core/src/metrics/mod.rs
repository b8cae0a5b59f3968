//! Intent-aware diversity measures (alpha-NDCG, ERR-IA, NRBP) and their
//! dynamic variants weighted by recency and account confidence.

mod eval;
mod qrels;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use crate::corpus::Topic;
use crate::error::{Error, Result};

pub use eval::{evaluate_run, write_scores_csv, Evaluation, Judging, ScoreRow};
pub use qrels::{rescale_confidence, rescale_recency, DocMeta, GradeThresholds, Qrels, Recency, DAY_MS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Discount {
    /// log2(k + 1)
    Ndcg,
    /// k
    Err,
    /// (1/β)^(k−1)
    Nrbp,
}

/// How the recency lag enters γ^t in dynamic mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RecencyMode {
    /// t is the rescaled grade {0, 1, 2}.
    #[default]
    Grade,
    /// t is the raw lag in seconds; falls back to the grade when the lag is unknown.
    Seconds,
}

pub const MEASURES: [&str; 6] = ["alpha-ndcg", "err-ia", "nrbp", "d-ndcg", "d-err", "d-nrbp"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricParams {
    pub alpha: f64,
    pub gamma: f64,
    pub beta: f64,
    pub cutoff: usize,
    pub discount: Discount,
    pub dynamic: bool,
    pub recency: RecencyMode,
}

impl Default for MetricParams {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            gamma: 0.5,
            beta: 0.8,
            cutoff: 20,
            discount: Discount::Ndcg,
            dynamic: false,
            recency: RecencyMode::Grade,
        }
    }
}

impl MetricParams {
    /// Default parameters for a named measure.
    pub fn measure(name: &str) -> Result<Self> {
        let (discount, dynamic) = match name {
            "alpha-ndcg" => (Discount::Ndcg, false),
            "err-ia" => (Discount::Err, false),
            "nrbp" => (Discount::Nrbp, false),
            "d-ndcg" => (Discount::Ndcg, true),
            "d-err" => (Discount::Err, true),
            "d-nrbp" => (Discount::Nrbp, true),
            other => return Err(Error::param(format!("unknown metric {other:?}"))),
        };
        Ok(Self {
            discount,
            dynamic,
            ..Self::default()
        })
    }

    pub fn name(&self) -> &'static str {
        match (self.discount, self.dynamic) {
            (Discount::Ndcg, false) => "alpha-ndcg",
            (Discount::Err, false) => "err-ia",
            (Discount::Nrbp, false) => "nrbp",
            (Discount::Ndcg, true) => "d-ndcg",
            (Discount::Err, true) => "d-err",
            (Discount::Nrbp, true) => "d-nrbp",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::param(format!("alpha {} outside (0,1]", self.alpha)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::param(format!("gamma {} outside (0,1]", self.gamma)));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::param(format!("beta {} outside (0,1)", self.beta)));
        }
        if self.cutoff == 0 {
            return Err(Error::param("cutoff must be positive"));
        }
        Ok(())
    }

    /// D_k for a 1-based rank.
    pub fn discount_at(&self, k: usize) -> f64 {
        match self.discount {
            Discount::Ndcg => ((k + 1) as f64).log2(),
            Discount::Err => k as f64,
            Discount::Nrbp => (1.0 / self.beta).powi(k as i32 - 1),
        }
    }
}

impl FromStr for RecencyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grade" => Ok(Self::Grade),
            "seconds" => Ok(Self::Seconds),
            other => Err(Error::param(format!("unknown recency mode {other:?}"))),
        }
    }
}

impl fmt::Display for RecencyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Grade => "grade",
            Self::Seconds => "seconds",
        })
    }
}

/// One step of the greedy ideal ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct IdealStep {
    pub pick: String,
    /// Every candidate with the same marginal gain, the pick included, in candidate order.
    pub ties: Vec<String>,
}

#[derive(Debug, Clone)]
struct JudgedDoc {
    /// Indices into the topic's subtopics with binarized gain 1.
    relevant: Vec<usize>,
    /// γ^t · u_r in dynamic mode, 1 otherwise.
    factor: f64,
}

/// One topic's judgments resolved against its subtopic list and a metric's
/// parameters, ready for scoring rankings.
#[derive(Debug, Clone)]
pub struct TopicJudgments {
    probs: Vec<f64>,
    docs: HashMap<String, JudgedDoc>,
    pool: Vec<String>,
    params: MetricParams,
}

impl TopicJudgments {
    pub fn new(topic: &Topic, qrels: &Qrels, params: &MetricParams) -> Result<Self> {
        params.validate()?;
        if !qrels.has_topic(&topic.topic_id) {
            return Err(Error::TopicNotJudged(topic.topic_id.clone()));
        }
        let index: HashMap<&str, usize> = topic
            .subtopics
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.as_str(), i))
            .collect();
        let mut docs = HashMap::new();
        let mut pool = Vec::new();
        for doc in qrels.judged_docs(&topic.topic_id) {
            pool.push(doc.to_string());
            let mut relevant: Vec<usize> = qrels
                .doc_judgments(&topic.topic_id, doc)
                .iter()
                .filter(|(_, g)| *g >= 1)
                .filter_map(|(s, _)| index.get(s.as_str()).copied())
                .collect();
            relevant.sort_unstable();
            relevant.dedup();
            if relevant.is_empty() {
                continue;
            }
            let factor = if params.dynamic {
                let r = qrels.recency(&topic.topic_id, doc);
                let t = match (params.recency, r.lag_ms) {
                    (RecencyMode::Seconds, Some(lag)) => lag.max(0) as f64 / 1000.0,
                    _ => f64::from(r.grade),
                };
                params.gamma.powf(t) * f64::from(qrels.confidence(doc))
            } else {
                1.0
            };
            docs.insert(doc.to_string(), JudgedDoc { relevant, factor });
        }
        Ok(Self {
            probs: topic.subtopics.iter().map(|s| s.p).collect(),
            docs,
            pool,
            params: *params,
        })
    }

    pub fn params(&self) -> &MetricParams {
        &self.params
    }

    /// Every judged document, relevant or not, in doc_id order.
    pub fn judged_pool(&self) -> &[String] {
        &self.pool
    }

    pub fn is_relevant(&self, doc: &str) -> bool {
        self.docs.contains_key(doc)
    }

    /// Undiscounted gain of `doc` given how many earlier documents were
    /// relevant to each subtopic.
    fn marginal(&self, doc: &str, counts: &[u32]) -> f64 {
        let Some(j) = self.docs.get(doc) else {
            return 0.0;
        };
        let keep = 1.0 - self.params.alpha;
        let sum: f64 = j
            .relevant
            .iter()
            .map(|&i| self.probs[i] * keep.powi(counts[i] as i32))
            .sum();
        sum * j.factor
    }

    fn record(&self, doc: &str, counts: &mut [u32]) {
        if let Some(j) = self.docs.get(doc) {
            for &i in &j.relevant {
                counts[i] += 1;
            }
        }
    }

    /// Σ_k Σ_i p_i · gain / D_k over the first `cutoff` ranks.
    pub fn raw_score<S: AsRef<str>>(&self, ranking: &[S]) -> f64 {
        let mut counts = vec![0u32; self.probs.len()];
        let mut total = 0.0;
        for (k, doc) in ranking.iter().take(self.params.cutoff).enumerate() {
            let doc = doc.as_ref();
            total += self.marginal(doc, &counts) / self.params.discount_at(k + 1);
            self.record(doc, &mut counts);
        }
        total
    }

    /// Greedy gain-maximizing ordering of `candidates`, stopping at `limit`
    /// items or once no remaining document adds gain. Ties go to the smaller doc_id.
    pub fn greedy_ideal<'s>(&self, candidates: impl IntoIterator<Item = &'s str>, limit: usize) -> Vec<String> {
        self.greedy_ideal_steps(candidates, limit)
            .into_iter()
            .map(|s| s.pick)
            .collect()
    }

    /// [`Self::greedy_ideal`], also reporting at each step every remaining
    /// candidate whose marginal gain equals the pick's.
    pub fn greedy_ideal_steps<'s>(&self, candidates: impl IntoIterator<Item = &'s str>, limit: usize) -> Vec<IdealStep> {
        let mut ordered: Vec<&str> = candidates.into_iter().collect();
        ordered.sort_unstable();
        ordered.dedup();
        self.greedy_ideal_steps_in_order(&ordered, limit)
    }

    /// Like `greedy_ideal_steps`, but equal-gain picks go to the candidate
    /// listed first. Duplicates after the first occurrence are ignored.
    pub fn greedy_ideal_steps_in_order(&self, candidates: &[&str], limit: usize) -> Vec<IdealStep> {
        let mut seen = HashSet::new();
        let mut remaining: Vec<&str> = candidates
            .iter()
            .copied()
            .filter(|d| self.is_relevant(d) && seen.insert(*d))
            .collect();
        let mut counts = vec![0u32; self.probs.len()];
        let mut out = Vec::new();
        while out.len() < limit && !remaining.is_empty() {
            let gains: Vec<f64> = remaining.iter().map(|d| self.marginal(d, &counts)).collect();
            let mut best = 0;
            for (idx, &g) in gains.iter().enumerate() {
                if g > gains[best] {
                    best = idx;
                }
            }
            let best_gain = gains[best];
            if best_gain <= 0.0 {
                break;
            }
            let ties = remaining
                .iter()
                .zip(&gains)
                .filter(|(_, &g)| (g - best_gain).abs() <= 1e-12 * best_gain)
                .map(|(d, _)| d.to_string())
                .collect();
            let doc = remaining.remove(best);
            self.record(doc, &mut counts);
            out.push(IdealStep {
                pick: doc.to_string(),
                ties,
            });
        }
        out
    }

    /// The greedy ideal ranking over the judged pool, truncated at the cutoff.
    pub fn ideal_ranking(&self) -> Vec<String> {
        self.greedy_ideal(self.pool.iter().map(String::as_str), self.params.cutoff)
    }

    /// Normalized score in [0, 1]; 0 when nothing relevant is judged.
    pub fn score<S: AsRef<str>>(&self, ranking: &[S]) -> f64 {
        let norm = self.raw_score(&self.ideal_ranking());
        if norm <= 0.0 {
            return 0.0;
        }
        // The ideal is greedy, so a ranking can in rare cases edge past it.
        (self.raw_score(ranking) / norm).min(1.0)
    }
}

/// Gain of the document at 1-based rank `k` for one subtopic, before
/// discounting and subtopic weighting.
pub fn gain_at_rank<S: AsRef<str>>(
    ranking: &[S],
    k: usize,
    subtopic: &str,
    topic: &Topic,
    qrels: &Qrels,
    params: &MetricParams,
) -> Result<f64> {
    if k == 0 || k > ranking.len() {
        return Err(Error::param(format!("rank {k} outside 1..={}", ranking.len())));
    }
    let tj = TopicJudgments::new(topic, qrels, params)?;
    let i = topic
        .subtopics
        .iter()
        .position(|s| s.id == subtopic)
        .ok_or_else(|| Error::param(format!("unknown subtopic {subtopic:?}")))?;
    let hits = |doc: &str| tj.docs.get(doc).is_some_and(|j| j.relevant.contains(&i));
    let doc = ranking[k - 1].as_ref();
    if !hits(doc) {
        return Ok(0.0);
    }
    let c = ranking[..k - 1].iter().filter(|d| hits(d.as_ref())).count();
    Ok((1.0 - params.alpha).powi(c as i32) * tj.docs[doc].factor)
}

/// Score a ranking for one topic against the greedy ideal over the judged pool.
pub fn diversity_measure<S: AsRef<str>>(
    ranking: &[S],
    topic: &Topic,
    qrels: &Qrels,
    params: &MetricParams,
) -> Result<f64> {
    Ok(TopicJudgments::new(topic, qrels, params)?.score(ranking))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Subtopic;

    fn topic(subs: &[&str]) -> Topic {
        let p = 1.0 / subs.len() as f64;
        Topic::new(
            "T",
            "q",
            0,
            subs.iter().map(|s| Subtopic { id: s.to_string(), p }).collect(),
        )
        .unwrap()
    }

    fn qrels(lines: &str) -> Qrels {
        Qrels::read(lines.as_bytes()).unwrap()
    }

    #[test]
    fn measure_names_round_trip() {
        for name in MEASURES {
            assert_eq!(MetricParams::measure(name).unwrap().name(), name);
        }
        assert!(MetricParams::measure("ndcg").is_err());
    }

    #[test]
    fn parameter_ranges() {
        let bad = [
            MetricParams { alpha: 0.0, ..Default::default() },
            MetricParams { gamma: 1.5, ..Default::default() },
            MetricParams { beta: 1.0, ..Default::default() },
            MetricParams { cutoff: 0, ..Default::default() },
        ];
        for p in bad {
            assert!(p.validate().is_err());
        }
        assert!(MetricParams::default().validate().is_ok());
    }

    #[test]
    fn discounts() {
        let mut p = MetricParams::default();
        assert_eq!(p.discount_at(1), 1.0);
        assert_eq!(p.discount_at(3), 2.0);
        p.discount = Discount::Err;
        assert_eq!(p.discount_at(4), 4.0);
        p.discount = Discount::Nrbp;
        assert!((p.discount_at(3) - 1.5625).abs() < 1e-15);
    }

    #[test]
    fn gains() {
        let t = topic(&["s"]);
        let q = qrels("T s a 1\nT s b 2\nT s c 1\nT s x 0\n");
        let r = ["a", "b", "c", "x"];
        let p = MetricParams::default();
        assert_eq!(gain_at_rank(&r, 1, "s", &t, &q, &p).unwrap(), 1.0);
        assert_eq!(gain_at_rank(&r, 3, "s", &t, &q, &p).unwrap(), 0.25);
        assert_eq!(gain_at_rank(&r, 4, "s", &t, &q, &p).unwrap(), 0.0);
        assert!(gain_at_rank(&r, 5, "s", &t, &q, &p).is_err());

        let mut q = q;
        q.set_recency("T", "a", Recency { grade: 2, lag_ms: None }).unwrap();
        let d = MetricParams::measure("d-ndcg").unwrap();
        assert_eq!(gain_at_rank(&r, 1, "s", &t, &q, &d).unwrap(), 0.25);
    }

    #[test]
    fn irrelevant_first_pair() {
        let t = topic(&["s"]);
        let q = qrels("T s d1 1\nT s d2 1\nT s x 0\n");
        let p = MetricParams::default();
        let score = diversity_measure(&["x", "d1"], &t, &q, &p).unwrap();
        let third = 1.0 / 3f64.log2();
        let expected = third / (1.0 + 0.5 * third);
        assert!((score - expected).abs() < 1e-15);
        assert!((score - 0.4796249331362629).abs() < 1e-12);
    }

    #[test]
    fn ideal_scores_one_and_empty_scores_zero() {
        let t = topic(&["s1", "s2"]);
        let q = qrels("T s1 a 1\nT s2 a 1\nT s1 b 2\nT s2 c 1\nT s1 z 0\n");
        for name in MEASURES {
            let p = MetricParams::measure(name).unwrap();
            let tj = TopicJudgments::new(&t, &q, &p).unwrap();
            let ideal = tj.ideal_ranking();
            assert_eq!(tj.score(&ideal), 1.0, "{name}");
            assert_eq!(tj.score::<&str>(&[]), 0.0);
        }
    }

    #[test]
    fn ideal_ties_follow_candidate_order() {
        let t = topic(&["s"]);
        let q = qrels("T s a 1\nT s b 1\nT s c 1\n");
        let tj = TopicJudgments::new(&t, &q, &MetricParams::default()).unwrap();
        assert_eq!(tj.greedy_ideal(["c", "a", "b"], 3), ["a", "b", "c"]);
        let steps = tj.greedy_ideal_steps_in_order(&["c", "a", "c", "b"], 3);
        let picks: Vec<&str> = steps.iter().map(|s| s.pick.as_str()).collect();
        assert_eq!(picks, ["c", "a", "b"]);
        assert_eq!(steps[0].ties, ["c", "a", "b"]);
    }

    #[test]
    fn nothing_relevant_scores_zero() {
        let t = topic(&["s"]);
        let q = qrels("T s a 0\n");
        assert_eq!(diversity_measure(&["a"], &t, &q, &MetricParams::default()).unwrap(), 0.0);
    }

    #[test]
    fn unjudged_topic_is_an_error() {
        let t = topic(&["s"]);
        let q = qrels("U s a 1\n");
        assert!(matches!(
            diversity_measure(&["a"], &t, &q, &MetricParams::default()),
            Err(Error::TopicNotJudged(_))
        ));
    }

    #[test]
    fn dynamic_reduces_to_classic() {
        let t = topic(&["s1", "s2"]);
        let mut q = qrels("T s1 a 1\nT s2 b 1\nT s1 c 1\nT s2 c 2\n");
        q.set_recency("T", "a", Recency { grade: 2, lag_ms: None }).unwrap();
        q.set_recency("T", "b", Recency { grade: 1, lag_ms: None }).unwrap();
        let r = ["b", "x", "a", "c"];
        for (classic, dynamic) in [("alpha-ndcg", "d-ndcg"), ("err-ia", "d-err"), ("nrbp", "d-nrbp")] {
            let c = diversity_measure(&r, &t, &q, &MetricParams::measure(classic).unwrap()).unwrap();
            let mut dp = MetricParams::measure(dynamic).unwrap();
            dp.gamma = 1.0;
            let d = diversity_measure(&r, &t, &q, &dp).unwrap();
            assert!((c - d).abs() <= 1e-12);
        }
    }

    #[test]
    fn dynamic_prefers_fresh_documents() {
        let t = topic(&["s"]);
        let mut q = qrels("T s old 1\nT s new 1\n");
        q.set_recency("T", "old", Recency { grade: 2, lag_ms: None }).unwrap();
        let p = MetricParams::measure("d-ndcg").unwrap();
        let tj = TopicJudgments::new(&t, &q, &p).unwrap();
        assert_eq!(tj.ideal_ranking(), ["new", "old"]);
        assert!(tj.score(&["new"]) > tj.score(&["old"]));
    }

    #[test]
    fn cutoff_truncates() {
        let t = topic(&["s"]);
        let q = qrels("T s a 1\nT s b 1\n");
        let p = MetricParams { cutoff: 1, ..Default::default() };
        assert_eq!(diversity_measure(&["x", "a"], &t, &q, &p).unwrap(), 0.0);
        assert_eq!(diversity_measure(&["a", "x"], &t, &q, &p).unwrap(), 1.0);
    }
}
