//! Seeded synthetic stream, topics and judgments.
//!
//! Per topic, subtopics come in cohorts that start every two days and stay
//! active for four, and each has its own vocabulary. Every day mixes relevant posts about the
//! active subtopics, one burst of identical high-retweet posts about a single
//! subtopic, and chatter. A share of the chatter is judged non-relevant and
//! borrows a query term and subtopic words. Posts with the whole query in
//! order get grade 2, other relevant posts grade 1. All generated words
//! end in a digit so stemming leaves them unchanged.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Pareto};

use crate::corpus::{topics_to_json, write_jsonl, Document, Subtopic, Topic};
use crate::error::{Error, Result};
use crate::metrics::{Qrels, DAY_MS};

const QUERY_TERMS: usize = 3;
const SUBTOPIC_VOCAB: usize = 30;
const GENERIC_VOCAB: usize = 400;
const STAGGER_DAYS: usize = 2;
const LIFETIME_DAYS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub topics: usize,
    pub days: usize,
    /// Documents per topic per day.
    pub docs_per_day: usize,
    pub subtopics: usize,
    pub seed: u64,
    pub start_ms: i64,
    /// Share of each day's documents about the topic's subtopics.
    pub relevant_share: f64,
    /// Share of each day's documents in the day's duplicate burst.
    pub burst_share: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            topics: 5,
            days: 16,
            docs_per_day: 200,
            subtopics: 40,
            seed: 0,
            // 2011-01-23T00:00:00Z
            start_ms: 1_295_740_800_000,
            relevant_share: 0.45,
            burst_share: 0.1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.topics == 0 || self.days == 0 || self.docs_per_day == 0 || self.subtopics == 0 {
            return Err(Error::param("topics, days, docs_per_day and subtopics must be positive"));
        }
        if self.start_ms < 0 {
            return Err(Error::param("start_ms must be non-negative"));
        }
        let shares = [self.relevant_share, self.burst_share];
        if shares.iter().any(|s| !(0.0..=1.0).contains(s)) || shares.iter().sum::<f64>() > 1.0 {
            return Err(Error::param("document shares must lie in [0,1] and sum to at most 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    /// Chronological, ids `d0000000`, `d0000001`, ...
    pub documents: Vec<Document>,
    /// Topics with their raw query strings.
    pub topics: Vec<(Topic, String)>,
    pub qrels: Qrels,
}

struct Draft {
    epoch_ms: i64,
    text: String,
    followers: u64,
    retweets: u64,
    /// (topic, subtopic, grade)
    judgment: Option<(usize, usize, u8)>,
}

fn query_word(t: usize, j: usize) -> String {
    format!("t{t}q{j}")
}

fn subtopic_word(t: usize, s: usize, k: usize) -> String {
    format!("t{t}s{s}w{k}")
}

fn generic_word(k: usize) -> String {
    format!("g{k}")
}

/// Skewed index in 0..n: low indices are much more frequent.
fn skewed(rng: &mut ChaCha8Rng, n: usize) -> usize {
    let u: f64 = rng.random();
    ((u * u) * n as f64) as usize
}

/// Active period of subtopic `s` in days: `LIFETIME_DAYS` long, starting on
/// a multiple of `STAGGER_DAYS`, with the first cohort already running when
/// the stream opens. Cohort sizes differ by at most one.
fn active_span(s: usize, subtopics: usize, days: usize) -> (f64, f64) {
    let cohorts = days.div_ceil(STAGGER_DAYS) + 1;
    let cohort = (s * cohorts / subtopics) as f64;
    let start = (cohort - 1.0) * STAGGER_DAYS as f64;
    (start, start + LIFETIME_DAYS as f64)
}

fn active_at(day_offset: f64, config: &SynthConfig) -> Vec<usize> {
    let active: Vec<usize> = (0..config.subtopics)
        .filter(|&s| {
            let (a, b) = active_span(s, config.subtopics, config.days);
            day_offset >= a && day_offset < b
        })
        .collect();
    if active.is_empty() {
        // too few subtopics to cover every cohort
        (0..config.subtopics).collect()
    } else {
        active
    }
}

pub fn generate(config: &SynthConfig) -> Result<SynthData> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let followers = Pareto::<f64>::new(50.0, 1.1).expect("valid pareto");
    let spread = Exp::new(1.0 / 3_600_000.0).expect("valid rate");
    let n_burst = (config.docs_per_day as f64 * config.burst_share).round() as usize;
    let n_relevant = (config.docs_per_day as f64 * config.relevant_share).round() as usize;
    let n_relevant = n_relevant.min(config.docs_per_day - n_burst);

    let mut drafts: Vec<Draft> = Vec::with_capacity(config.topics * config.days * config.docs_per_day);
    for t in 0..config.topics {
        for day in 0..config.days {
            let day_start = config.start_ms + day as i64 * DAY_MS;
            let followers_draw = |rng: &mut ChaCha8Rng| followers.sample(rng).min(5e7) as u64;

            // one burst of identical posts about a subtopic active at its onset
            let onset = rng.random_range(0..DAY_MS);
            let active = active_at(day as f64 + onset as f64 / DAY_MS as f64, config);
            let burst_sub = active[rng.random_range(0..active.len())];
            let mut words: Vec<String> = (0..QUERY_TERMS).map(|j| query_word(t, j)).collect();
            for _ in 0..3 {
                words.push(subtopic_word(t, burst_sub, skewed(&mut rng, SUBTOPIC_VOCAB)));
            }
            let burst_text = format!("RT {} #t{t}s{burst_sub}", words.join(" "));
            for _ in 0..n_burst {
                let offset = (onset + spread.sample(&mut rng) as i64).min(DAY_MS - 1);
                drafts.push(Draft {
                    epoch_ms: day_start + offset,
                    text: burst_text.clone(),
                    followers: followers_draw(&mut rng),
                    retweets: rng.random_range(200..2000),
                    judgment: Some((t, burst_sub, 2)),
                });
            }

            for i in 0..config.docs_per_day - n_burst {
                let offset = rng.random_range(0..DAY_MS);
                let active = active_at(day as f64 + offset as f64 / DAY_MS as f64, config);
                let mut words = Vec::new();
                let judgment = if i < n_relevant {
                    let s = active[rng.random_range(0..active.len())];
                    let mut query: Vec<String> = (0..QUERY_TERMS).map(|j| query_word(t, j)).collect();
                    let full = rng.random_bool(0.6);
                    if !full {
                        query.remove(rng.random_range(0..QUERY_TERMS));
                    }
                    let in_order = rng.random_bool(0.5);
                    let n_sub = rng.random_range(4..=7);
                    for _ in 0..n_sub {
                        words.push(subtopic_word(t, s, skewed(&mut rng, SUBTOPIC_VOCAB)));
                    }
                    for _ in 0..rng.random_range(2..=4) {
                        words.push(generic_word(skewed(&mut rng, GENERIC_VOCAB)));
                    }
                    if in_order {
                        query.append(&mut words);
                        words = query;
                    } else {
                        for q in query {
                            let at = rng.random_range(0..=words.len());
                            words.insert(at, q);
                        }
                    }
                    // the full query in order marks the highly relevant posts
                    let grade = if full && in_order { 2 } else { 1 };
                    Some((t, s, grade))
                } else {
                    // chatter; a fifth are judged hard negatives sharing one
                    // query term and a few subtopic words
                    if rng.random_bool(0.2) {
                        let s = rng.random_range(0..config.subtopics);
                        for _ in 0..rng.random_range(2..=4) {
                            words.push(subtopic_word(t, s, skewed(&mut rng, SUBTOPIC_VOCAB)));
                        }
                        for _ in 0..rng.random_range(3..=6) {
                            words.push(generic_word(skewed(&mut rng, GENERIC_VOCAB)));
                        }
                        let at = rng.random_range(0..=words.len());
                        words.insert(at, query_word(t, rng.random_range(0..QUERY_TERMS)));
                        Some((t, usize::MAX, 0))
                    } else {
                        for _ in 0..rng.random_range(6..=10) {
                            words.push(generic_word(skewed(&mut rng, GENERIC_VOCAB)));
                        }
                        None
                    }
                };
                drafts.push(Draft {
                    epoch_ms: day_start + offset,
                    text: words.join(" "),
                    followers: followers_draw(&mut rng),
                    retweets: rng.random_range(0..20),
                    judgment,
                });
            }
        }
    }

    // stable sort keeps generation order among equal timestamps
    drafts.sort_by_key(|d| d.epoch_ms);

    let mut qrels = Qrels::new();
    let mut documents = Vec::with_capacity(drafts.len());
    let topic_id = |t: usize| format!("T{}", t + 1);
    let sub_id = |s: usize| format!("s{}", s + 1);
    for (seq, d) in drafts.into_iter().enumerate() {
        let id = format!("d{seq:07}");
        if let Some((t, s, grade)) = d.judgment {
            if grade == 0 {
                // judged non-relevant against the first subtopic
                qrels.insert(&topic_id(t), &sub_id(0), &id, 0)?;
            } else {
                qrels.insert(&topic_id(t), &sub_id(s), &id, grade)?;
            }
        }
        documents.push(Document::new(id, d.epoch_ms, &d.text, d.followers, d.retweets));
    }

    let end_ms = config.start_ms + config.days as i64 * DAY_MS;
    let p = 1.0 / config.subtopics as f64;
    let topics = (0..config.topics)
        .map(|t| {
            let query: Vec<String> = (0..QUERY_TERMS).map(|j| query_word(t, j)).collect();
            let query = query.join(" ");
            let subtopics = (0..config.subtopics).map(|s| Subtopic { id: sub_id(s), p }).collect();
            Topic::new(topic_id(t), &query, end_ms, subtopics).map(|topic| (topic, query))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SynthData {
        documents,
        topics,
        qrels,
    })
}

impl SynthData {
    /// Write `stream.jsonl`, `topics.json` and `qrels.tsv` into `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("stream.jsonl");
        let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_jsonl(BufWriter::new(f), &self.documents).map_err(|e| Error::io(&path, e))?;

        let path = dir.join("topics.json");
        fs::write(&path, topics_to_json(&self.topics)? + "\n").map_err(|e| Error::io(&path, e))?;

        let path = dir.join("qrels.tsv");
        let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(f);
        self.qrels.write(&mut w).map_err(|e| Error::io(&path, e))?;
        w.flush().map_err(|e| Error::io(&path, e))
    }
}
