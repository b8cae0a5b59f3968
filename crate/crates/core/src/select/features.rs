use crate::corpus::{CorpusStats, Document, Topic};
use crate::divfeat::{
    cosine_between, jaccard_between, kl_upper_bound, smoothed_kl, term_set, DiversityVector, TermVector,
    DEFAULT_KL_EPS,
};
use crate::error::Result;
use crate::plsa::{plsa_fit, PlsaConfig, PlsaModel};
use crate::relfeat::{assemble_relevance_vectors, FeatureParams, NUM_RELEVANCE};

use super::SelectionFeatures;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureConfig {
    pub params: FeatureParams,
    pub plsa: PlsaConfig,
    pub kl_eps: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            params: FeatureParams::default(),
            plsa: PlsaConfig::default(),
            kl_eps: DEFAULT_KL_EPS,
        }
    }
}

struct Profile {
    tf_idf: TermVector,
    terms: Vec<String>,
    posterior: Vec<f64>,
}

/// Features for one candidate window: normalized relevance vectors for the
/// candidates, plus per-document profiles for pairwise diversity. Context
/// documents (previously selected items) follow the candidates and are only
/// ever used as the selected side of a pair.
pub struct FeaturePool<'a> {
    docs: Vec<&'a Document>,
    n_candidates: usize,
    relevance: Vec<[f64; NUM_RELEVANCE]>,
    profiles: Option<Vec<Profile>>,
    kl_eps: f64,
    kl_scale: f64,
    plsa: Option<PlsaModel>,
}

impl<'a> FeaturePool<'a> {
    /// Build features for `candidates` (scored) and `context` (selected only).
    /// With `diversity` off no pairwise profiles or PLSA model are built and
    /// every diversity vector is zero.
    pub fn build(
        topic: &Topic,
        candidates: &[&'a Document],
        context: &[&'a Document],
        stats: &CorpusStats,
        config: &FeatureConfig,
        diversity: bool,
    ) -> Result<Self> {
        let mut relevance: Vec<[f64; NUM_RELEVANCE]> =
            assemble_relevance_vectors(topic, candidates.iter().copied(), stats, &config.params)?
                .into_iter()
                .map(|r| r.values)
                .collect();
        relevance.resize(candidates.len() + context.len(), [0.0; NUM_RELEVANCE]);

        let docs: Vec<&'a Document> = candidates.iter().chain(context).copied().collect();
        let mut plsa = None;
        let profiles = if diversity {
            let fit_pool: Vec<&Document> = candidates.iter().copied().filter(|d| !d.is_empty()).collect();
            let model = if fit_pool.is_empty() {
                None
            } else {
                Some(plsa_fit(&fit_pool, &config.plsa)?)
            };
            let z = config.plsa.num_topics;
            let profiles = docs
                .iter()
                .map(|d| {
                    let posterior = match &model {
                        Some(m) => m
                            .posterior(&d.doc_id)
                            .map(<[f64]>::to_vec)
                            .unwrap_or_else(|| m.fold_in(d, config.plsa.fold_in_iters)),
                        None => vec![1.0 / z as f64; z],
                    };
                    Profile {
                        tf_idf: TermVector::tf_idf(d, stats),
                        terms: term_set(d),
                        posterior,
                    }
                })
                .collect();
            plsa = model;
            Some(profiles)
        } else {
            None
        };

        Ok(Self {
            n_candidates: candidates.len(),
            docs,
            relevance,
            profiles,
            kl_eps: config.kl_eps,
            kl_scale: kl_upper_bound(config.plsa.num_topics, config.kl_eps),
            plsa,
        })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn num_candidates(&self) -> usize {
        self.n_candidates
    }

    pub fn candidate_indices(&self) -> Vec<usize> {
        (0..self.n_candidates).collect()
    }

    pub fn context_indices(&self) -> Vec<usize> {
        (self.n_candidates..self.docs.len()).collect()
    }

    pub fn document(&self, i: usize) -> &'a Document {
        self.docs[i]
    }

    pub fn plsa_model(&self) -> Option<&PlsaModel> {
        self.plsa.as_ref()
    }

    /// Raw (unscaled) subtopic KL between two pool documents.
    pub fn raw_subtopic_kl(&self, i: usize, j: usize) -> f64 {
        match &self.profiles {
            Some(p) => smoothed_kl(&p[i].posterior, &p[j].posterior, self.kl_eps),
            None => 0.0,
        }
    }
}

impl SelectionFeatures for FeaturePool<'_> {
    fn doc_id(&self, i: usize) -> &str {
        &self.docs[i].doc_id
    }

    fn epoch_ms(&self, i: usize) -> i64 {
        self.docs[i].epoch_ms
    }

    fn relevance(&self, i: usize) -> &[f64; NUM_RELEVANCE] {
        &self.relevance[i]
    }

    fn diversity(&self, i: usize, j: usize) -> DiversityVector {
        let Some(p) = &self.profiles else {
            return DiversityVector::default();
        };
        let (a, b) = (&p[i], &p[j]);
        DiversityVector::new([
            cosine_between(&a.tf_idf, &b.tf_idf),
            jaccard_between(&a.terms, &b.terms),
            smoothed_kl(&a.posterior, &b.posterior, self.kl_eps) / self.kl_scale,
        ])
    }
}
