//! Weight learning: a sequential softmax likelihood over ideal selection
//! sequences for the full utility, and ListMLE for relevance-only weights.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusStats, Document, Topic};
use crate::divfeat::{Aggregate, AggregationMode, NUM_DIVERSITY};
use crate::error::{Error, Result};
use crate::metrics::{DocMeta, GradeThresholds, MetricParams, Qrels, TopicJudgments};
use crate::relfeat::{NUM_RELEVANCE, SCHEMA_VERSION};
use crate::select::{partition_windows, FeatureConfig, FeaturePool, SelectionFeatures, WeightVector};

pub const NUM_PARAMS: usize = NUM_RELEVANCE + NUM_DIVERSITY;

/// Consecutive decreases of the objective that count as divergence.
pub const DIVERGENCE_PATIENCE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Sequential,
    Listwise,
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sequential" => Ok(Self::Sequential),
            "listwise" => Ok(Self::Listwise),
            other => Err(Error::param(format!("unknown objective {other:?}"))),
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sequential => "sequential",
            Self::Listwise => "listwise",
        })
    }
}

/// One selection step: feature rows `[x; h]` of every remaining candidate and
/// the rows counted as a correct choice (the ideal pick and anything with an
/// equal marginal gain).
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub rows: Vec<[f64; NUM_PARAMS]>,
    pub targets: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingInstance {
    pub topic_id: String,
    /// Ideal sequence as doc ids, in selection order.
    pub ideal: Vec<String>,
    pub steps: Vec<Step>,
}

fn row(x: &[f64; NUM_RELEVANCE], h: &[f64; NUM_DIVERSITY]) -> [f64; NUM_PARAMS] {
    let mut r = [0.0; NUM_PARAMS];
    r[..NUM_RELEVANCE].copy_from_slice(x);
    r[NUM_RELEVANCE..].copy_from_slice(h);
    r
}

impl TrainingInstance {
    /// Steps for reproducing `ideal` (indices into `features`) out of `pool`,
    /// with the diversity part conditioned on the ideal prefix.
    pub fn sequential<F: SelectionFeatures + ?Sized>(
        topic_id: &str,
        features: &F,
        pool: &[usize],
        ideal: &[usize],
        mode: AggregationMode,
    ) -> Result<Self> {
        let ties: Vec<Vec<usize>> = ideal.iter().map(|&i| vec![i]).collect();
        Self::sequential_with_ties(topic_id, features, pool, ideal, &ties, mode)
    }

    /// Like [`Self::sequential`], with `ties[s]` the candidates accepted at
    /// step `s`. Members already picked or outside the pool are ignored.
    pub fn sequential_with_ties<F: SelectionFeatures + ?Sized>(
        topic_id: &str,
        features: &F,
        pool: &[usize],
        ideal: &[usize],
        ties: &[Vec<usize>],
        mode: AggregationMode,
    ) -> Result<Self> {
        Self::check(pool, ideal)?;
        if ties.len() != ideal.len() {
            return Err(Error::param("one tie set per ideal step is required"));
        }
        let mut remaining: Vec<(usize, Aggregate)> = pool.iter().map(|&i| (i, Aggregate::new(mode))).collect();
        let mut steps = Vec::with_capacity(ideal.len());
        for (&pick, tied) in ideal.iter().zip(ties) {
            let rows = remaining
                .iter()
                .map(|(i, agg)| row(features.relevance(*i), &agg.value().values))
                .collect();
            let target = remaining.iter().position(|(i, _)| *i == pick).expect("checked");
            let mut targets: Vec<usize> = remaining
                .iter()
                .enumerate()
                .filter(|(k, (i, _))| *k == target || tied.contains(i))
                .map(|(k, _)| k)
                .collect();
            targets.dedup();
            steps.push(Step { rows, targets });
            remaining.remove(target);
            for (i, agg) in remaining.iter_mut() {
                agg.push(&features.diversity(*i, pick));
            }
        }
        Ok(Self {
            topic_id: topic_id.to_string(),
            ideal: ideal.iter().map(|&i| features.doc_id(i).to_string()).collect(),
            steps,
        })
    }

    /// Plackett–Luce steps for `order` over `pool` using relevance features
    /// only; the diversity part of every row is zero.
    pub fn listwise<F: SelectionFeatures + ?Sized>(
        topic_id: &str,
        features: &F,
        pool: &[usize],
        order: &[usize],
    ) -> Result<Self> {
        Self::check(pool, order)?;
        let mut remaining: Vec<usize> = pool.to_vec();
        let mut steps = Vec::with_capacity(order.len());
        for &pick in order {
            let rows = remaining
                .iter()
                .map(|&i| row(features.relevance(i), &[0.0; NUM_DIVERSITY]))
                .collect();
            let target = remaining.iter().position(|&i| i == pick).expect("checked");
            steps.push(Step {
                rows,
                targets: vec![target],
            });
            remaining.remove(target);
        }
        Ok(Self {
            topic_id: topic_id.to_string(),
            ideal: order.iter().map(|&i| features.doc_id(i).to_string()).collect(),
            steps,
        })
    }

    fn check(pool: &[usize], seq: &[usize]) -> Result<()> {
        let members: HashSet<usize> = pool.iter().copied().collect();
        let mut seen = HashSet::new();
        for i in seq {
            if !members.contains(i) {
                return Err(Error::param(format!("ideal item {i} is not in the pool")));
            }
            if !seen.insert(*i) {
                return Err(Error::param(format!("ideal item {i} repeats")));
            }
        }
        Ok(())
    }
}

fn params_of(w: &WeightVector) -> [f64; NUM_PARAMS] {
    row(&w.omega_r, &w.omega_d)
}

fn weights_of(theta: &[f64; NUM_PARAMS]) -> WeightVector {
    let mut r = [0.0; NUM_RELEVANCE];
    let mut d = [0.0; NUM_DIVERSITY];
    r.copy_from_slice(&theta[..NUM_RELEVANCE]);
    d.copy_from_slice(&theta[NUM_RELEVANCE..]);
    WeightVector::new(r, d)
}

fn dot(a: &[f64; NUM_PARAMS], b: &[f64; NUM_PARAMS]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Log-likelihood of one step and optionally its gradient, with the max
/// subtracted before exponentiating:
/// `ln Σ_{t∈targets} e^{f(t)} − ln Σ_{x∈rows} e^{f(x)}`.
fn step_terms(theta: &[f64; NUM_PARAMS], step: &Step, grad: Option<&mut [f64; NUM_PARAMS]>) -> f64 {
    let scores: Vec<f64> = step.rows.iter().map(|r| dot(theta, r)).collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = weights.iter().sum();
    let z_t: f64 = step.targets.iter().map(|&t| weights[t]).sum();
    if let Some(g) = grad {
        for (k, gk) in g.iter_mut().enumerate() {
            let expected: f64 = step.rows.iter().zip(&weights).map(|(r, w)| r[k] * w).sum::<f64>() / z;
            let expected_t: f64 = step.targets.iter().map(|&t| step.rows[t][k] * weights[t]).sum::<f64>() / z_t;
            *gk += expected_t - expected;
        }
    }
    z_t.ln() - z.ln()
}

/// Σ over steps of ln P(step picks one of its targets) under a softmax of utilities.
pub fn sequential_log_likelihood(weights: &WeightVector, instance: &TrainingInstance) -> f64 {
    let theta = params_of(weights);
    instance.steps.iter().map(|s| step_terms(&theta, s, None)).sum()
}

/// Exact gradient of [`sequential_log_likelihood`] with respect to
/// `(omega_r, omega_d)`.
pub fn sequential_gradient(weights: &WeightVector, instance: &TrainingInstance) -> [f64; NUM_PARAMS] {
    let theta = params_of(weights);
    let mut g = [0.0; NUM_PARAMS];
    for s in &instance.steps {
        step_terms(&theta, s, Some(&mut g));
    }
    g
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub objective: Objective,
    pub learning_rate: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Sequential,
            learning_rate: 0.05,
            iterations: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub weights: WeightVector,
    /// Objective before each update, then after the last one.
    pub trace: Vec<f64>,
}

/// Mean over instances of the per-step log-likelihood, with its gradient.
/// Instances are reduced in `order`.
fn objective(theta: &[f64; NUM_PARAMS], instances: &[&TrainingInstance], order: &[usize]) -> (f64, [f64; NUM_PARAMS]) {
    let mut value = 0.0;
    let mut grad = [0.0; NUM_PARAMS];
    for &i in order {
        let inst = instances[i];
        let n = inst.steps.len() as f64;
        let mut g = [0.0; NUM_PARAMS];
        let mut ll = 0.0;
        for s in &inst.steps {
            ll += step_terms(theta, s, Some(&mut g));
        }
        value += ll / n;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b / n;
        }
    }
    let m = order.len() as f64;
    grad.iter_mut().for_each(|g| *g /= m);
    (value / m, grad)
}

/// Fails once the objective has decreased [`DIVERGENCE_PATIENCE`] times in a row.
#[derive(Debug, Default)]
struct DivergenceGuard {
    last: Option<f64>,
    decreases: usize,
}

impl DivergenceGuard {
    fn observe(&mut self, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::Diverged(self.decreases));
        }
        if let Some(prev) = self.last {
            self.decreases = if value < prev { self.decreases + 1 } else { 0 };
            if self.decreases >= DIVERGENCE_PATIENCE {
                return Err(Error::Diverged(self.decreases));
            }
        }
        self.last = Some(value);
        Ok(())
    }
}

/// Gradient ascent from zero weights. Instances without steps are skipped.
/// For the listwise objective the diversity weights stay at zero.
pub fn fit_weights(instances: &[TrainingInstance], config: &FitConfig) -> Result<FitResult> {
    let usable: Vec<&TrainingInstance> = instances.iter().filter(|i| !i.steps.is_empty()).collect();
    if usable.is_empty() {
        return Err(Error::param("no training instance has a non-empty ideal sequence"));
    }
    if !(config.learning_rate > 0.0 && config.learning_rate.is_finite()) {
        return Err(Error::param("learning rate must be positive"));
    }
    let mut order: Vec<usize> = (0..usable.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));

    let mut theta = [0.0; NUM_PARAMS];
    let mut trace = Vec::with_capacity(config.iterations + 1);
    let mut guard = DivergenceGuard::default();
    for _ in 0..config.iterations {
        let (value, mut grad) = objective(&theta, &usable, &order);
        guard.observe(value)?;
        trace.push(value);
        if config.objective == Objective::Listwise {
            grad[NUM_RELEVANCE..].iter_mut().for_each(|g| *g = 0.0);
        }
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t += config.learning_rate * g;
        }
        if !theta.iter().all(|t| t.is_finite()) {
            return Err(Error::Diverged(guard.decreases));
        }
    }
    trace.push(objective(&theta, &usable, &order).0);
    Ok(FitResult {
        weights: weights_of(&theta),
        trace,
    })
}

/// Greedy evaluation-gain ordering of the judged-relevant members of `pool`.
pub fn build_ideal_sequence<'s>(
    judgments: &TopicJudgments,
    pool: impl IntoIterator<Item = &'s str>,
    length: usize,
) -> Vec<String> {
    judgments.greedy_ideal(pool, length)
}

/// Relevant members of `pool` ordered by probability-weighted grade, then doc_id.
pub fn grade_order<'s>(topic: &Topic, qrels: &Qrels, pool: impl IntoIterator<Item = &'s str>) -> Vec<String> {
    let mut graded: Vec<(f64, &str)> = pool
        .into_iter()
        .map(|d| {
            let g: f64 = qrels
                .doc_judgments(&topic.topic_id, d)
                .iter()
                .map(|(s, g)| topic.subtopic_probability(s).unwrap_or(0.0) * f64::from(*g))
                .sum();
            (g, d)
        })
        .filter(|(g, _)| *g > 0.0)
        .collect();
    graded.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    graded.dedup_by(|a, b| a.1 == b.1);
    graded.into_iter().map(|(_, d)| d.to_string()).collect()
}

/// How training instances are drawn from a stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceConfig {
    pub objective: Objective,
    /// Gain the ideal sequence maximizes; its cutoff is the sequence length.
    pub target: MetricParams,
    pub features: FeatureConfig,
    pub aggregation: AggregationMode,
    pub window_length_ms: i64,
    /// Leading windows used for training.
    pub windows: usize,
    pub thresholds: GradeThresholds,
    /// Seeds the candidate shuffle that decides which of several equal-gain
    /// documents the ideal sequence picks.
    pub seed: u64,
}

impl Default for InstanceConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Sequential,
            target: MetricParams::default(),
            features: FeatureConfig::default(),
            aggregation: AggregationMode::Min,
            window_length_ms: 48 * 3_600_000,
            windows: 1,
            thresholds: GradeThresholds::default(),
            seed: 0,
        }
    }
}

/// One instance per (topic, leading window). Features are built over the whole
/// window, the choice set at each step is the topic's judged documents in the
/// window, and judgments are taken as of the window end.
pub fn instances_from_stream(
    topics: &[Topic],
    stream: &[Document],
    qrels: &Qrels,
    config: &InstanceConfig,
) -> Result<Vec<TrainingInstance>> {
    let windows = partition_windows(stream, config.window_length_ms, None)?;
    let meta: HashMap<String, DocMeta> = stream
        .iter()
        .map(|d| {
            (
                d.doc_id.clone(),
                DocMeta {
                    epoch_ms: d.epoch_ms,
                    followers: d.followers,
                },
            )
        })
        .collect();
    let mut stats = CorpusStats::default();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = Vec::new();
    for window in windows.iter().take(config.windows) {
        stats.update(window.documents.iter().copied());
        if window.documents.is_empty() {
            continue;
        }
        for topic in topics {
            let tracked = topic.at(window.end_ms);
            let snapshot = qrels.snapshot(&topic.topic_id, window.end_ms - 1, &meta, &config.thresholds)?;
            let ids = window.documents.iter().map(|d| d.doc_id.as_str());
            let (sequence, ties) = match config.objective {
                Objective::Sequential => {
                    let judgments = TopicJudgments::new(&tracked, &snapshot, &config.target)?;
                    // ids are chronological, so an id tie-break would favour old documents
                    let mut shuffled: Vec<&str> = ids.collect();
                    shuffled.shuffle(&mut rng);
                    let steps = judgments.greedy_ideal_steps_in_order(&shuffled, config.target.cutoff);
                    steps.into_iter().map(|s| (s.pick, s.ties)).unzip()
                }
                Objective::Listwise => (grade_order(&tracked, &snapshot, ids), Vec::new()),
            };
            if sequence.is_empty() {
                log::warn!(
                    "topic {} window {}: no relevant documents, instance skipped",
                    topic.topic_id,
                    window.window_index
                );
                continue;
            }
            let diversity = config.objective == Objective::Sequential;
            let pool = FeaturePool::build(&tracked, &window.documents, &[], &stats, &config.features, diversity)?;
            let position: HashMap<&str, usize> = (0..pool.len()).map(|i| (pool.doc_id(i), i)).collect();
            let seq: Vec<usize> = sequence.iter().map(|d| position[d.as_str()]).collect();
            // the softmax runs over the topic's judged documents only
            let all: Vec<usize> = snapshot
                .judged_docs(&topic.topic_id)
                .filter_map(|d| position.get(d).copied())
                .collect();
            out.push(match config.objective {
                Objective::Sequential => {
                    let ties: Vec<Vec<usize>> = ties
                        .iter()
                        .map(|t: &Vec<String>| t.iter().map(|d| position[d.as_str()]).collect())
                        .collect();
                    TrainingInstance::sequential_with_ties(&topic.topic_id, &pool, &all, &seq, &ties, config.aggregation)?
                }
                Objective::Listwise => TrainingInstance::listwise(&topic.topic_id, &pool, &all, &seq)?,
            });
        }
    }
    Ok(out)
}

/// Weights file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsFile {
    pub schema_version: u32,
    pub omega_r: [f64; NUM_RELEVANCE],
    pub omega_d: [f64; NUM_DIVERSITY],
    pub objective: Objective,
    pub trained_on: String,
}

impl WeightsFile {
    pub fn new(weights: &WeightVector, objective: Objective, trained_on: impl Into<String>) -> Self {
        Self {
            schema_version: weights.schema_version,
            omega_r: weights.omega_r,
            omega_d: weights.omega_d,
            objective,
            trained_on: trained_on.into(),
        }
    }

    pub fn weights(&self) -> Result<WeightVector> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::SchemaMismatch {
                weights: self.schema_version,
                features: SCHEMA_VERSION,
            });
        }
        let w = WeightVector {
            omega_r: self.omega_r,
            omega_d: self.omega_d,
            schema_version: self.schema_version,
        };
        if !w.is_finite() {
            return Err(Error::param("weights must be finite"));
        }
        Ok(w)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
