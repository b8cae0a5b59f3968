use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use crate::corpus::Topic;
use crate::error::{Error, Result};
use crate::select::RunRow;

use super::{DocMeta, GradeThresholds, MetricParams, Qrels, TopicJudgments};

/// Where per-window judgments come from.
pub enum Judging<'q> {
    /// The same judgments (and any sidecar grades) for every window.
    Static(&'q Qrels),
    /// Judgments as of each window's end: only documents published by then
    /// are in the pool, and recency is measured from the window end.
    Windowed {
        qrels: &'q Qrels,
        meta: &'q HashMap<String, DocMeta>,
        anchor_ms: i64,
        window_length_ms: i64,
        thresholds: GradeThresholds,
    },
}

impl Judging<'_> {
    fn qrels_for(&self, topic: &str, window: usize) -> Result<Cow<'_, Qrels>> {
        match self {
            Judging::Static(q) => Ok(Cow::Borrowed(*q)),
            Judging::Windowed {
                qrels,
                meta,
                anchor_ms,
                window_length_ms,
                thresholds,
            } => {
                let end = anchor_ms + (window as i64 + 1) * window_length_ms;
                // The window is half-open, so its last admissible millisecond is end - 1.
                Ok(Cow::Owned(qrels.snapshot(topic, end - 1, meta, thresholds)?))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub topic_id: String,
    pub window_index: usize,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Evaluation {
    /// One row per (topic, window, metric), topics in input order.
    pub scores: Vec<ScoreRow>,
    /// Arithmetic mean over topics per (window, metric); topic_id is "all".
    pub means: Vec<ScoreRow>,
}

impl Evaluation {
    pub fn mean(&self, window: usize, metric: &str) -> Option<f64> {
        self.means
            .iter()
            .find(|r| r.window_index == window && r.metric == metric)
            .map(|r| r.value)
    }
}

/// Score every (topic, window) block of a run. Windows absent from the run
/// score 0; `windows` is a lower bound on the number of windows evaluated.
pub fn evaluate_run(
    rows: &[RunRow],
    topics: &[Topic],
    judging: &Judging<'_>,
    measures: &[MetricParams],
    windows: usize,
) -> Result<Evaluation> {
    let known: BTreeSet<&str> = topics.iter().map(|t| t.topic_id.as_str()).collect();
    let unknown: BTreeSet<&str> = rows
        .iter()
        .map(|r| r.topic_id.as_str())
        .filter(|t| !known.contains(t))
        .collect();
    if !unknown.is_empty() {
        return Err(Error::UnknownTopics(unknown.into_iter().map(String::from).collect()));
    }
    let windows = rows
        .iter()
        .map(|r| r.window_index + 1)
        .max()
        .unwrap_or(0)
        .max(windows);

    let mut blocks: HashMap<(&str, usize), Vec<&RunRow>> = HashMap::new();
    for r in rows {
        blocks.entry((r.topic_id.as_str(), r.window_index)).or_default().push(r);
    }
    for block in blocks.values_mut() {
        block.sort_by_key(|r| r.rank);
    }

    let mut scores = Vec::new();
    let mut sums: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for topic in topics {
        for w in 0..windows {
            let qrels = judging.qrels_for(&topic.topic_id, w)?;
            let ranking: Vec<&str> = blocks
                .get(&(topic.topic_id.as_str(), w))
                .map(|b| b.iter().map(|r| r.doc_id.as_str()).collect())
                .unwrap_or_default();
            for (mi, params) in measures.iter().enumerate() {
                let value = TopicJudgments::new(topic, &qrels, params)?.score(&ranking);
                *sums.entry((w, mi)).or_default() += value;
                scores.push(ScoreRow {
                    topic_id: topic.topic_id.clone(),
                    window_index: w,
                    metric: params.name().to_string(),
                    value,
                });
            }
        }
    }
    let n = topics.len().max(1) as f64;
    let means = sums
        .into_iter()
        .map(|((w, mi), sum)| ScoreRow {
            topic_id: "all".to_string(),
            window_index: w,
            metric: measures[mi].name().to_string(),
            value: sum / n,
        })
        .collect();
    Ok(Evaluation { scores, means })
}

pub fn write_scores_csv(mut w: impl Write, eval: &Evaluation) -> std::io::Result<()> {
    writeln!(w, "topic_id,window_index,metric,value")?;
    for r in eval.scores.iter().chain(&eval.means) {
        writeln!(w, "{},{},{},{}", r.topic_id, r.window_index, r.metric, r.value)?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Subtopic;
    use crate::metrics::DAY_MS;

    fn topics() -> Vec<Topic> {
        ["T1", "T2"]
            .iter()
            .map(|id| {
                Topic::new(
                    *id,
                    "q",
                    0,
                    vec![
                        Subtopic { id: "a".into(), p: 0.5 },
                        Subtopic { id: "b".into(), p: 0.5 },
                    ],
                )
                .unwrap()
            })
            .collect()
    }

    fn qrels() -> Qrels {
        Qrels::read("T1 a d1 1\nT1 b d2 1\nT1 a d3 1\nT2 a e1 2\nT2 b e1 1\n".as_bytes()).unwrap()
    }

    fn row(topic: &str, w: usize, rank: usize, doc: &str) -> RunRow {
        RunRow {
            topic_id: topic.into(),
            window_index: w,
            rank,
            doc_id: doc.into(),
            epoch_ms: 0,
            utility: 0.0,
        }
    }

    #[test]
    fn ideal_run_scores_one_and_empty_run_zero() {
        let q = qrels();
        let measures: Vec<MetricParams> = super::super::MEASURES
            .iter()
            .map(|m| MetricParams::measure(m).unwrap())
            .collect();
        let mut rows = Vec::new();
        for t in &topics() {
            let ideal = TopicJudgments::new(t, &q, &measures[0]).unwrap().ideal_ranking();
            rows.extend(ideal.iter().enumerate().map(|(i, d)| row(&t.topic_id, 0, i + 1, d)));
        }
        let eval = evaluate_run(&rows, &topics(), &Judging::Static(&q), &measures, 1).unwrap();
        assert_eq!(eval.scores.len(), 2 * 6);
        assert!(eval.scores.iter().all(|r| r.value == 1.0));
        assert_eq!(eval.mean(0, "d-ndcg"), Some(1.0));

        let eval = evaluate_run(&[], &topics(), &Judging::Static(&q), &measures, 3).unwrap();
        assert_eq!(eval.scores.len(), 2 * 3 * 6);
        assert!(eval.scores.iter().all(|r| r.value == 0.0));
    }

    #[test]
    fn ranks_order_the_block() {
        let q = qrels();
        let m = [MetricParams::default()];
        let shuffled = vec![row("T1", 0, 2, "d2"), row("T1", 0, 1, "d1")];
        let ordered = vec![row("T1", 0, 1, "d1"), row("T1", 0, 2, "d2")];
        let a = evaluate_run(&shuffled, &topics(), &Judging::Static(&q), &m, 1).unwrap();
        let b = evaluate_run(&ordered, &topics(), &Judging::Static(&q), &m, 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unknown_topics_are_listed() {
        let q = qrels();
        let rows = vec![row("X9", 0, 1, "d1"), row("X2", 0, 1, "d1"), row("T1", 0, 1, "d1")];
        let err = evaluate_run(&rows, &topics(), &Judging::Static(&q), &[MetricParams::default()], 1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("X2") && msg.contains("X9"), "{msg}");
    }

    #[test]
    fn windowed_pool_grows_over_time() {
        let q = qrels();
        let meta: HashMap<String, DocMeta> = [("d1", 0), ("d2", 3 * DAY_MS), ("d3", 3 * DAY_MS), ("e1", 0)]
            .into_iter()
            .map(|(d, t)| (d.to_string(), DocMeta { epoch_ms: t, followers: 0 }))
            .collect();
        let judging = Judging::Windowed {
            qrels: &q,
            meta: &meta,
            anchor_ms: 0,
            window_length_ms: 2 * DAY_MS,
            thresholds: GradeThresholds::default(),
        };
        let rows = vec![row("T1", 0, 1, "d1"), row("T1", 1, 1, "d1")];
        let eval = evaluate_run(&rows, &topics()[..1], &judging, &[MetricParams::default()], 2).unwrap();
        // window 0 only has d1 judged so far; window 1 adds d2 and d3
        assert_eq!(eval.scores[0].value, 1.0);
        assert!(eval.scores[1].value < 1.0);
    }

    #[test]
    fn csv_layout() {
        let q = qrels();
        let eval = evaluate_run(&[], &topics(), &Judging::Static(&q), &[MetricParams::default()], 1).unwrap();
        let mut buf = Vec::new();
        write_scores_csv(&mut buf, &eval).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "topic_id,window_index,metric,value");
        assert_eq!(lines[1], "T1,0,alpha-ndcg,0");
        assert_eq!(lines[3], "all,0,alpha-ndcg,0");
    }
}
