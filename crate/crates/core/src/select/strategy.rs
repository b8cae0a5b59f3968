//! Per-window strategies: dynamic preservation (DP), the relevance-only
//! TopRel baseline, and batch re-ranking of everything seen so far.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use crate::corpus::{CorpusStats, Document, Topic};
use crate::divfeat::AggregationMode;
use crate::error::{Error, Result};

use super::{greedy_select, prefer, FeatureConfig, FeaturePool, ResultSet, ScoredItem, SelectionFeatures, WeightVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Dp,
    TopRel,
    AllBatch,
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dp" => Ok(Self::Dp),
            "toprel" => Ok(Self::TopRel),
            "allbatch" => Ok(Self::AllBatch),
            other => Err(Error::param(format!("unknown strategy {other:?}"))),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Dp => "dp",
            Self::TopRel => "toprel",
            Self::AllBatch => "allbatch",
        })
    }
}

/// Documents arriving in one half-open period `[start_ms, end_ms)`.
#[derive(Debug, Clone)]
pub struct CandidateWindow<'a> {
    pub window_index: usize,
    pub start_ms: i64,
    pub end_ms: i64,
    pub documents: Vec<&'a Document>,
}

/// Split a stream into consecutive disjoint windows of `window_length_ms`,
/// anchored at `anchor_ms` (default: the earliest timestamp). Windows with no
/// documents between the first and last non-empty one are kept.
pub fn partition_windows(
    stream: &[Document],
    window_length_ms: i64,
    anchor_ms: Option<i64>,
) -> Result<Vec<CandidateWindow<'_>>> {
    if window_length_ms <= 0 {
        return Err(Error::param("window_length must be positive"));
    }
    let mut sorted: Vec<&Document> = stream.iter().collect();
    sorted.sort_by_key(|d| d.epoch_ms);
    let Some(first) = sorted.first() else {
        return Ok(Vec::new());
    };
    let anchor = anchor_ms.unwrap_or(first.epoch_ms);
    if first.epoch_ms < anchor {
        return Err(Error::param(format!(
            "document {} precedes the window anchor",
            first.doc_id
        )));
    }
    let last = sorted.last().expect("non-empty").epoch_ms;
    let count = ((last - anchor) / window_length_ms + 1) as usize;
    let mut windows: Vec<CandidateWindow> = (0..count)
        .map(|i| {
            let start_ms = anchor + i as i64 * window_length_ms;
            CandidateWindow {
                window_index: i,
                start_ms,
                end_ms: start_ms + window_length_ms,
                documents: Vec::new(),
            }
        })
        .collect();
    for d in sorted {
        let idx = ((d.epoch_ms - anchor) / window_length_ms) as usize;
        windows[idx].documents.push(d);
    }
    Ok(windows)
}

/// Shared inputs of a strategy step.
pub struct StepContext<'c, 'a> {
    /// The topic as tracked at the end of the current window.
    pub topic: &'c Topic,
    pub stats: &'c CorpusStats,
    /// Every document seen so far, used to resolve retained items.
    pub lookup: &'c HashMap<&'a str, &'a Document>,
    pub features: &'c FeatureConfig,
    pub aggregation: AggregationMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub result: ResultSet,
    pub utility_evals: u64,
    /// Documents whose features were built for this step.
    pub pool_size: usize,
}

fn items_from<F: SelectionFeatures>(features: &F, picks: &[super::Pick], window_index: usize) -> Vec<ScoredItem> {
    picks
        .iter()
        .map(|p| ScoredItem {
            doc_id: features.doc_id(p.index).to_string(),
            epoch_ms: features.epoch_ms(p.index),
            utility_at_selection: p.utility,
            window_index,
        })
        .collect()
}

/// Keep the top-(K−m) previous items by utility at selection, greedily add
/// `m` new items from the window relative to them, display chronologically.
pub fn dp_window_step(
    previous: &ResultSet,
    window: &CandidateWindow<'_>,
    weights: &WeightVector,
    k: usize,
    m: usize,
    ctx: &StepContext<'_, '_>,
) -> Result<StepOutput> {
    if m == 0 || m > k {
        return Err(Error::param(format!("dp requires 0 < m <= K (m={m}, K={k})")));
    }
    let retained = previous.top_by_utility(k - m);
    let retained_ids: HashSet<&str> = retained.iter().map(|i| i.doc_id.as_str()).collect();
    let retained_docs = retained
        .iter()
        .map(|i| {
            ctx.lookup
                .get(i.doc_id.as_str())
                .copied()
                .ok_or_else(|| Error::UnknownDocument(i.doc_id.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let candidates: Vec<&Document> = window
        .documents
        .iter()
        .copied()
        .filter(|d| !retained_ids.contains(d.doc_id.as_str()))
        .collect();
    if candidates.is_empty() {
        return Ok(StepOutput {
            result: ResultSet::chronological(retained),
            utility_evals: 0,
            pool_size: 0,
        });
    }

    let pool = FeaturePool::build(
        ctx.topic,
        &candidates,
        &retained_docs,
        ctx.stats,
        ctx.features,
        weights.uses_diversity(),
    )?;
    let selection = greedy_select(
        &pool,
        &pool.candidate_indices(),
        &pool.context_indices(),
        weights,
        m,
        ctx.aggregation,
    )?;
    let mut items = retained;
    items.extend(items_from(&pool, &selection.picks, window.window_index));
    Ok(StepOutput {
        result: ResultSet::chronological(items),
        utility_evals: selection.utility_evals,
        pool_size: pool.len(),
    })
}

/// The K window documents with the highest relevance score, no carry-over.
pub fn toprel_window_step(
    window: &CandidateWindow<'_>,
    weights: &WeightVector,
    k: usize,
    ctx: &StepContext<'_, '_>,
) -> Result<StepOutput> {
    let relevance_only = weights.relevance_only();
    let pool = FeaturePool::build(ctx.topic, &window.documents, &[], ctx.stats, ctx.features, false)?;
    let mut scored: Vec<(usize, f64)> = (0..pool.num_candidates())
        .map(|i| (i, relevance_only.relevance_score(pool.relevance(i))))
        .collect();
    scored.sort_by(|a, b| prefer(&pool, *b, *a));
    scored.truncate(k);
    let picks: Vec<super::Pick> = scored
        .into_iter()
        .map(|(index, utility)| super::Pick { index, utility })
        .collect();
    Ok(StepOutput {
        result: ResultSet::chronological(items_from(&pool, &picks, window.window_index)),
        utility_evals: pool.num_candidates() as u64,
        pool_size: pool.len(),
    })
}

/// Re-rank everything seen so far from scratch.
pub fn allbatch_step(
    all_docs_so_far: &[&Document],
    window_index: usize,
    weights: &WeightVector,
    k: usize,
    ctx: &StepContext<'_, '_>,
) -> Result<StepOutput> {
    if all_docs_so_far.is_empty() {
        return Ok(StepOutput {
            result: ResultSet::default(),
            utility_evals: 0,
            pool_size: 0,
        });
    }
    let pool = FeaturePool::build(
        ctx.topic,
        all_docs_so_far,
        &[],
        ctx.stats,
        ctx.features,
        weights.uses_diversity(),
    )?;
    let selection = greedy_select(&pool, &pool.candidate_indices(), &[], weights, k, ctx.aggregation)?;
    Ok(StepOutput {
        result: ResultSet::chronological(items_from(&pool, &selection.picks, window_index)),
        utility_evals: selection.utility_evals,
        pool_size: pool.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamConfig {
    pub strategy: Strategy,
    pub k: usize,
    pub m: usize,
    pub window_length_ms: i64,
    pub anchor_ms: Option<i64>,
    pub features: FeatureConfig,
    pub aggregation: AggregationMode,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Dp,
            k: 20,
            m: 10,
            window_length_ms: 48 * 3_600_000,
            anchor_ms: None,
            features: FeatureConfig::default(),
            aggregation: AggregationMode::Min,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_length_ms <= 0 {
            return Err(Error::param("window_length must be positive"));
        }
        if self.strategy == Strategy::Dp && (self.m == 0 || self.m > self.k) {
            return Err(Error::param(format!(
                "dp requires 0 < m <= K (m={}, K={})",
                self.m, self.k
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowReport {
    pub window_index: usize,
    pub start_ms: i64,
    pub end_ms: i64,
    pub candidates: usize,
    pub pool_size: usize,
    pub result: ResultSet,
    pub utility_evals: u64,
    pub elapsed: Duration,
}

/// Run one strategy over a stream for one topic, emitting the result set
/// after every window. The topic is tracked at each window's end.
pub fn run_stream(
    topic: &Topic,
    stream: &[Document],
    weights: &WeightVector,
    config: &StreamConfig,
) -> Result<Vec<WindowReport>> {
    config.validate()?;
    let windows = partition_windows(stream, config.window_length_ms, config.anchor_ms)?;
    let mut stats = CorpusStats::default();
    let mut lookup: HashMap<&str, &Document> = HashMap::new();
    let mut seen: Vec<&Document> = Vec::new();
    let mut previous = ResultSet::default();
    let mut reports = Vec::with_capacity(windows.len());

    for window in &windows {
        let started = Instant::now();
        stats.update(window.documents.iter().copied());
        for d in &window.documents {
            lookup.insert(d.doc_id.as_str(), d);
        }
        seen.extend(window.documents.iter().copied());
        let as_of = topic.at(window.end_ms);
        let ctx = StepContext {
            topic: &as_of,
            stats: &stats,
            lookup: &lookup,
            features: &config.features,
            aggregation: config.aggregation,
        };
        let out = match config.strategy {
            Strategy::Dp => dp_window_step(&previous, window, weights, config.k, config.m, &ctx)?,
            Strategy::TopRel => toprel_window_step(window, weights, config.k, &ctx)?,
            Strategy::AllBatch => allbatch_step(&seen, window.window_index, weights, config.k, &ctx)?,
        };
        reports.push(WindowReport {
            window_index: window.window_index,
            start_ms: window.start_ms,
            end_ms: window.end_ms,
            candidates: window.documents.len(),
            pool_size: out.pool_size,
            result: out.result.clone(),
            utility_evals: out.utility_evals,
            elapsed: started.elapsed(),
        });
        previous = out.result;
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Subtopic;

    const HOUR: i64 = 3_600_000;

    fn doc(id: &str, t: i64, text: &str) -> Document {
        Document::new(id, t, text, 10, 0)
    }

    fn topic() -> Topic {
        Topic::new("T", "alpha beta", 0, vec![Subtopic { id: "s".into(), p: 1.0 }]).unwrap()
    }

    fn weights() -> WeightVector {
        WeightVector::new([0.2, 1.0, 0.3, 0.5, 0.5, 0.0, 0.1, 0.1], [0.8, 0.4, 0.2])
    }

    fn stream() -> Vec<Document> {
        vec![
            doc("a1", 0, "alpha beta gamma"),
            doc("a2", HOUR, "alpha beta gamma"),
            doc("a3", 2 * HOUR, "alpha delta"),
            doc("b1", 50 * HOUR, "beta epsilon zeta"),
            doc("b2", 51 * HOUR, "alpha beta alpha beta"),
            doc("b3", 60 * HOUR, "unrelated words here"),
            doc("c1", 100 * HOUR, "alpha omega"),
            doc("c2", 101 * HOUR, "beta omega alpha"),
        ]
    }

    #[test]
    fn windows_are_disjoint_half_open() {
        let s = stream();
        let w = partition_windows(&s, 48 * HOUR, None).unwrap();
        assert_eq!(w.len(), 3);
        assert_eq!(w[0].documents.len(), 3);
        assert_eq!(w[1].documents.len(), 3);
        assert_eq!(w[2].documents.len(), 2);
        for win in &w {
            assert!(win.documents.iter().all(|d| d.epoch_ms >= win.start_ms && d.epoch_ms < win.end_ms));
        }
        // a doc exactly on a boundary belongs to the later window
        let edge = vec![doc("x", 0, "a"), doc("y", 48 * HOUR, "a")];
        let w = partition_windows(&edge, 48 * HOUR, None).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w[1].documents[0].doc_id, "y");
        assert!(partition_windows(&edge, 0, None).is_err());
        assert!(partition_windows(&edge, HOUR, Some(1)).is_err());
    }

    #[test]
    fn unsorted_input_is_sorted() {
        let mut s = stream();
        s.reverse();
        let w = partition_windows(&s, 48 * HOUR, None).unwrap();
        let ids: Vec<&str> = w[0].documents.iter().map(|d| d.doc_id.as_str()).collect();
        assert_eq!(ids, ["a1", "a2", "a3"]);
    }

    #[test]
    fn dp_rejects_bad_m() {
        let cfg = StreamConfig {
            m: 0,
            ..Default::default()
        };
        assert!(run_stream(&topic(), &stream(), &weights(), &cfg).is_err());
        let cfg = StreamConfig {
            k: 2,
            m: 3,
            ..Default::default()
        };
        assert!(run_stream(&topic(), &stream(), &weights(), &cfg).is_err());
    }

    #[test]
    fn dp_with_empty_window_keeps_top_k_minus_m() {
        let item = |id: &str, t: i64, u: f64| ScoredItem {
            doc_id: id.into(),
            epoch_ms: t,
            utility_at_selection: u,
            window_index: 0,
        };
        let prev = ResultSet::chronological(vec![item("a1", 0, 0.2), item("a2", 5, 0.9), item("a3", 9, 0.5)]);
        let s = stream();
        let lookup: HashMap<&str, &Document> = s.iter().map(|d| (d.doc_id.as_str(), d)).collect();
        let stats = CorpusStats::build(&s);
        let t = topic();
        let fc = FeatureConfig::default();
        let ctx = StepContext {
            topic: &t,
            stats: &stats,
            lookup: &lookup,
            features: &fc,
            aggregation: AggregationMode::Min,
        };
        let empty = CandidateWindow {
            window_index: 1,
            start_ms: 0,
            end_ms: 1,
            documents: vec![],
        };
        let out = dp_window_step(&prev, &empty, &weights(), 3, 1, &ctx).unwrap();
        assert_eq!(out.result.doc_ids(), ["a2", "a3"]);
        assert_eq!(out.utility_evals, 0);
    }

    #[test]
    fn dp_drops_candidate_copy_of_retained_doc() {
        let s = stream();
        let lookup: HashMap<&str, &Document> = s.iter().map(|d| (d.doc_id.as_str(), d)).collect();
        let stats = CorpusStats::build(&s);
        let t = topic();
        let fc = FeatureConfig::default();
        let ctx = StepContext {
            topic: &t,
            stats: &stats,
            lookup: &lookup,
            features: &fc,
            aggregation: AggregationMode::Min,
        };
        let prev = ResultSet::chronological(vec![ScoredItem {
            doc_id: "b1".into(),
            epoch_ms: 50 * HOUR,
            utility_at_selection: 1.0,
            window_index: 0,
        }]);
        let window = CandidateWindow {
            window_index: 1,
            start_ms: 48 * HOUR,
            end_ms: 96 * HOUR,
            documents: vec![&s[3], &s[4], &s[5]],
        };
        let out = dp_window_step(&prev, &window, &weights(), 3, 2, &ctx).unwrap();
        assert_eq!(out.result.len(), 3);
        assert!(!out.result.has_duplicates());
        assert_eq!(out.utility_evals, 2 + 1);
    }

    #[test]
    fn every_strategy_emits_sorted_unique_sets() {
        for strategy in [Strategy::Dp, Strategy::TopRel, Strategy::AllBatch] {
            let cfg = StreamConfig {
                strategy,
                k: 3,
                m: 2,
                ..Default::default()
            };
            let reports = run_stream(&topic(), &stream(), &weights(), &cfg).unwrap();
            assert_eq!(reports.len(), 3);
            for r in &reports {
                assert!(r.result.is_chronological());
                assert!(!r.result.has_duplicates());
                assert!(r.result.len() <= 3);
            }
        }
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in [Strategy::Dp, Strategy::TopRel, Strategy::AllBatch] {
            assert_eq!(s.to_string().parse::<Strategy>().unwrap(), s);
        }
        assert!("batch".parse::<Strategy>().is_err());
    }
}
