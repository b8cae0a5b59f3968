//! Utility scoring and greedy sequential selection.
//!
//! The utility of candidate `x_i` given a selected set `S` is
//! `omega_r · x_i + omega_d · h_S(R_i)`, where `h_S` aggregates the pairwise
//! diversity vectors between `x_i` and every member of `S`.

mod features;
mod runfile;
mod strategy;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::divfeat::{Aggregate, AggregationMode, DiversityVector, RelationMatrix, NUM_DIVERSITY};
use crate::error::{Error, Result};
use crate::relfeat::{NUM_RELEVANCE, SCHEMA_VERSION};

pub use features::{FeatureConfig, FeaturePool};
pub use runfile::{read_run, write_run, RunRow};
pub use strategy::{
    allbatch_step, dp_window_step, partition_windows, run_stream, toprel_window_step, CandidateWindow,
    StepContext, StepOutput, Strategy, StreamConfig, WindowReport,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub omega_r: [f64; NUM_RELEVANCE],
    pub omega_d: [f64; NUM_DIVERSITY],
    pub schema_version: u32,
}

impl Default for WeightVector {
    fn default() -> Self {
        Self::zeros()
    }
}

impl WeightVector {
    pub fn zeros() -> Self {
        Self {
            omega_r: [0.0; NUM_RELEVANCE],
            omega_d: [0.0; NUM_DIVERSITY],
            schema_version: SCHEMA_VERSION,
        }
    }

    pub fn new(omega_r: [f64; NUM_RELEVANCE], omega_d: [f64; NUM_DIVERSITY]) -> Self {
        Self {
            omega_r,
            omega_d,
            schema_version: SCHEMA_VERSION,
        }
    }

    /// Same relevance weights with the diversity weights zeroed.
    pub fn relevance_only(&self) -> Self {
        Self {
            omega_d: [0.0; NUM_DIVERSITY],
            ..*self
        }
    }

    pub fn uses_diversity(&self) -> bool {
        self.omega_d.iter().any(|&w| w != 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.omega_r.iter().chain(&self.omega_d).all(|w| w.is_finite())
    }

    pub fn relevance_score(&self, x: &[f64; NUM_RELEVANCE]) -> f64 {
        self.omega_r.iter().zip(x).map(|(w, v)| w * v).sum()
    }

    /// `omega_r · x + omega_d · h`.
    pub fn utility(&self, x: &[f64; NUM_RELEVANCE], h: &DiversityVector) -> f64 {
        let div: f64 = self.omega_d.iter().zip(&h.values).map(|(w, v)| w * v).sum();
        self.relevance_score(x) + div
    }

    fn check(&self, features_schema: u32) -> Result<()> {
        if self.schema_version != features_schema {
            return Err(Error::SchemaMismatch {
                weights: self.schema_version,
                features: features_schema,
            });
        }
        if !self.is_finite() {
            return Err(Error::param("weights must be finite"));
        }
        Ok(())
    }
}

/// Features of a candidate pool as seen by the selector. Indices address
/// documents in the pool; any index may act as a selected document, but only
/// candidate indices are scored.
pub trait SelectionFeatures {
    fn schema_version(&self) -> u32 {
        SCHEMA_VERSION
    }
    fn doc_id(&self, i: usize) -> &str;
    fn epoch_ms(&self, i: usize) -> i64;
    fn relevance(&self, i: usize) -> &[f64; NUM_RELEVANCE];
    /// Diversity of candidate `i` relative to selected document `j`.
    fn diversity(&self, i: usize, j: usize) -> DiversityVector;
}

/// Relation matrix of candidate `i` against `selected`, in order.
pub fn relation_matrix<F: SelectionFeatures + ?Sized>(features: &F, i: usize, selected: &[usize]) -> RelationMatrix {
    RelationMatrix {
        entries: selected
            .iter()
            .map(|&j| (features.doc_id(j).to_string(), features.diversity(i, j)))
            .collect(),
    }
}

/// Utility of `candidate` given `selected`.
pub fn utility_score<F: SelectionFeatures + ?Sized>(
    features: &F,
    candidate: usize,
    selected: &[usize],
    weights: &WeightVector,
    mode: AggregationMode,
) -> Result<f64> {
    weights.check(features.schema_version())?;
    let h = crate::divfeat::relational_aggregate(&relation_matrix(features, candidate, selected), mode);
    Ok(weights.utility(features.relevance(candidate), &h))
}

/// Deterministic preference order: higher utility, then newer, then smaller doc_id.
pub fn prefer<F: SelectionFeatures + ?Sized>(features: &F, a: (usize, f64), b: (usize, f64)) -> Ordering {
    a.1.partial_cmp(&b.1)
        .unwrap_or(Ordering::Equal)
        .then_with(|| features.epoch_ms(a.0).cmp(&features.epoch_ms(b.0)))
        .then_with(|| features.doc_id(b.0).cmp(features.doc_id(a.0)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pick {
    pub index: usize,
    pub utility: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Selection {
    pub picks: Vec<Pick>,
    /// Number of utility evaluations performed.
    pub utility_evals: u64,
}

/// Greedily pick up to `m` documents from `pool`, each the argmax of the
/// utility given `already_selected` plus earlier picks.
pub fn greedy_select<F: SelectionFeatures + ?Sized>(
    features: &F,
    pool: &[usize],
    already_selected: &[usize],
    weights: &WeightVector,
    m: usize,
    mode: AggregationMode,
) -> Result<Selection> {
    weights.check(features.schema_version())?;
    let diverse = weights.uses_diversity();
    let mut remaining: Vec<(usize, Aggregate)> = pool
        .iter()
        .map(|&i| {
            let mut agg = Aggregate::new(mode);
            if diverse {
                for &j in already_selected {
                    agg.push(&features.diversity(i, j));
                }
            }
            (i, agg)
        })
        .collect();

    let mut out = Selection::default();
    while out.picks.len() < m && !remaining.is_empty() {
        let mut best: Option<(usize, usize, f64)> = None; // (slot, index, utility)
        for (slot, (i, agg)) in remaining.iter().enumerate() {
            let u = weights.utility(features.relevance(*i), &agg.value());
            out.utility_evals += 1;
            let better = match best {
                None => true,
                Some((_, bi, bu)) => prefer(features, (*i, u), (bi, bu)) == Ordering::Greater,
            };
            if better {
                best = Some((slot, *i, u));
            }
        }
        let (slot, index, utility) = best.expect("remaining is non-empty");
        remaining.swap_remove(slot);
        if diverse {
            for (i, agg) in remaining.iter_mut() {
                agg.push(&features.diversity(*i, index));
            }
        }
        out.picks.push(Pick { index, utility });
    }
    Ok(out)
}

/// A selected document with the utility it had when it entered the set.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredItem {
    pub doc_id: String,
    pub epoch_ms: i64,
    pub utility_at_selection: f64,
    pub window_index: usize,
}

/// The maintained top-K set, displayed in chronological order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultSet {
    pub items: Vec<ScoredItem>,
}

impl ResultSet {
    /// Build a result set and sort it for display (time, then doc_id).
    pub fn chronological(mut items: Vec<ScoredItem>) -> Self {
        items.sort_by(|a, b| a.epoch_ms.cmp(&b.epoch_ms).then_with(|| a.doc_id.cmp(&b.doc_id)));
        Self { items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn doc_ids(&self) -> Vec<&str> {
        self.items.iter().map(|i| i.doc_id.as_str()).collect()
    }

    /// The `n` items with the highest utility at selection (newer, then
    /// smaller doc_id, on ties).
    pub fn top_by_utility(&self, n: usize) -> Vec<ScoredItem> {
        let mut items = self.items.clone();
        items.sort_by(|a, b| {
            b.utility_at_selection
                .partial_cmp(&a.utility_at_selection)
                .unwrap_or(Ordering::Equal)
                .then_with(|| b.epoch_ms.cmp(&a.epoch_ms))
                .then_with(|| a.doc_id.cmp(&b.doc_id))
        });
        items.truncate(n);
        items
    }

    pub fn is_chronological(&self) -> bool {
        self.items.windows(2).all(|w| w[0].epoch_ms <= w[1].epoch_ms)
    }

    pub fn has_duplicates(&self) -> bool {
        let mut ids = self.doc_ids();
        ids.sort_unstable();
        ids.windows(2).any(|w| w[0] == w[1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Matrix-backed features for hand-built fixtures.
    struct Dense {
        ids: Vec<String>,
        epochs: Vec<i64>,
        rel: Vec<[f64; NUM_RELEVANCE]>,
        div: Vec<Vec<[f64; NUM_DIVERSITY]>>,
    }

    impl SelectionFeatures for Dense {
        fn doc_id(&self, i: usize) -> &str {
            &self.ids[i]
        }
        fn epoch_ms(&self, i: usize) -> i64 {
            self.epochs[i]
        }
        fn relevance(&self, i: usize) -> &[f64; NUM_RELEVANCE] {
            &self.rel[i]
        }
        fn diversity(&self, i: usize, j: usize) -> DiversityVector {
            DiversityVector::new(self.div[i][j])
        }
    }

    fn rel(v: f64) -> [f64; NUM_RELEVANCE] {
        let mut r = [0.0; NUM_RELEVANCE];
        r[0] = v;
        r
    }

    fn fixture() -> Dense {
        // docs 0,1 selected; 2 candidate
        Dense {
            ids: vec!["s0".into(), "s1".into(), "c".into()],
            epochs: vec![1, 2, 3],
            rel: vec![rel(0.1), rel(0.2), [0.5, 0.1, 0.0, 0.2, 0.0, 1.0, 0.3, 0.4]],
            div: vec![
                vec![[0.0; 3]; 3],
                vec![[0.0; 3]; 3],
                vec![[0.6, 0.5, 0.9], [0.3, 0.8, 0.2], [0.0; 3]],
            ],
        }
    }

    #[test]
    fn utility_examples() {
        let f = fixture();
        let w = WeightVector::new([1.0, 2.0, 0.0, -1.0, 0.0, 0.5, 1.0, 0.25], [0.0; 3]);
        let pure = 0.5 + 0.2 - 0.2 + 0.5 + 0.3 + 0.1;
        let u = utility_score(&f, 2, &[0, 1], &w, AggregationMode::Min).unwrap();
        assert!((u - pure).abs() < 1e-12);

        let w = WeightVector::new([1.0, 2.0, 0.0, -1.0, 0.0, 0.5, 1.0, 0.25], [1.0, -2.0, 0.5]);
        let empty = utility_score(&f, 2, &[], &w, AggregationMode::Min).unwrap();
        assert!((empty - pure).abs() < 1e-12);

        // h = min((0.6,0.5,0.9),(0.3,0.8,0.2)) = (0.3,0.5,0.2)
        let u = utility_score(&f, 2, &[0, 1], &w, AggregationMode::Min).unwrap();
        let expect = pure + 0.3 * 1.0 - 2.0 * 0.5 + 0.5 * 0.2;
        assert!((u - expect).abs() < 1e-12);
    }

    #[test]
    fn schema_mismatch_is_an_error() {
        let f = fixture();
        let mut w = WeightVector::zeros();
        w.schema_version = SCHEMA_VERSION + 1;
        assert!(matches!(
            utility_score(&f, 2, &[], &w, AggregationMode::Min),
            Err(Error::SchemaMismatch { .. })
        ));
        assert!(greedy_select(&f, &[2], &[], &w, 1, AggregationMode::Min).is_err());
    }

    #[test]
    fn greedy_zero_and_relevance_only() {
        let n = 6;
        let f = Dense {
            ids: (0..n).map(|i| format!("d{i}")).collect(),
            epochs: (0..n as i64).collect(),
            rel: [0.3, 0.9, 0.1, 0.7, 0.5, 0.8].iter().map(|&v| rel(v)).collect(),
            div: vec![vec![[1.0; 3]; n]; n],
        };
        let pool: Vec<usize> = (0..n).collect();
        let w = WeightVector::new(rel(1.0), [0.0; 3]);
        let s = greedy_select(&f, &pool, &[], &w, 0, AggregationMode::Min).unwrap();
        assert!(s.picks.is_empty());
        let s = greedy_select(&f, &pool, &[], &w, 3, AggregationMode::Min).unwrap();
        let idx: Vec<usize> = s.picks.iter().map(|p| p.index).collect();
        assert_eq!(idx, [1, 5, 3]);
        assert_eq!(s.utility_evals, 6 + 5 + 4);
        // exhausting the pool
        let s = greedy_select(&f, &pool[..2], &[], &w, 5, AggregationMode::Min).unwrap();
        assert_eq!(s.picks.len(), 2);
    }

    #[test]
    fn ties_prefer_newer_then_smaller_id() {
        let f = Dense {
            ids: vec!["b".into(), "a".into(), "c".into()],
            epochs: vec![5, 5, 4],
            rel: vec![rel(1.0); 3],
            div: vec![vec![[0.0; 3]; 3]; 3],
        };
        let w = WeightVector::new(rel(1.0), [0.0; 3]);
        let s = greedy_select(&f, &[0, 1, 2], &[], &w, 3, AggregationMode::Min).unwrap();
        let idx: Vec<usize> = s.picks.iter().map(|p| p.index).collect();
        assert_eq!(idx, [1, 0, 2]);
    }

    #[test]
    fn diversity_breaks_duplicate_cluster() {
        // 0,1,2 near-duplicates with top relevance, 3 distinct and slightly weaker
        let n = 4;
        let mut div = vec![vec![[1.0; 3]; n]; n];
        for row in div.iter_mut().take(3) {
            row[..3].fill([0.0; 3]);
        }
        let f = Dense {
            ids: (0..n).map(|i| format!("d{i}")).collect(),
            epochs: vec![0; n],
            rel: vec![rel(1.0), rel(0.99), rel(0.98), rel(0.6)],
            div,
        };
        let w = WeightVector::new(rel(1.0), [0.5, 0.5, 0.0]);
        let s = greedy_select(&f, &[0, 1, 2, 3], &[], &w, 2, AggregationMode::Min).unwrap();
        assert_eq!(s.picks[1].index, 3);
        let plain = greedy_select(&f, &[0, 1, 2, 3], &[], &w.relevance_only(), 2, AggregationMode::Min).unwrap();
        assert_eq!(plain.picks[1].index, 1);
    }

    #[test]
    fn result_set_ordering() {
        let item = |id: &str, t: i64, u: f64| ScoredItem {
            doc_id: id.into(),
            epoch_ms: t,
            utility_at_selection: u,
            window_index: 0,
        };
        let rs = ResultSet::chronological(vec![item("c", 3, 0.1), item("a", 1, 0.9), item("b", 1, 0.5)]);
        assert_eq!(rs.doc_ids(), ["a", "b", "c"]);
        assert!(rs.is_chronological());
        assert!(!rs.has_duplicates());
        let top: Vec<String> = rs.top_by_utility(2).into_iter().map(|i| i.doc_id).collect();
        assert_eq!(top, ["a", "b"]);
    }
}
