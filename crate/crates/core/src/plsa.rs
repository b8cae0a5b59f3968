//! Probabilistic latent semantic analysis fitted by EM over a candidate
//! pool. Supplies the per-document subtopic posteriors used by the KL
//! diversity feature.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlsaConfig {
    pub num_topics: usize,
    pub max_iters: usize,
    /// Stop once the log-likelihood gain of an iteration drops below this.
    pub tol: f64,
    pub seed: u64,
    /// Relative amplitude of the initialization noise.
    pub init_noise: f64,
    /// E-step iterations used when folding in an unseen document.
    pub fold_in_iters: usize,
}

impl Default for PlsaConfig {
    fn default() -> Self {
        Self {
            num_topics: 5,
            max_iters: 100,
            tol: 1e-4,
            seed: 0,
            init_noise: 1e-2,
            fold_in_iters: 50,
        }
    }
}

/// A fitted model. `p_w_given_z[z][w]` is indexed by position in `vocabulary`;
/// `p_z_given_d[d][z]` by position in `doc_ids`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlsaModel {
    pub num_topics: usize,
    pub vocabulary: Vec<String>,
    pub p_w_given_z: Vec<Vec<f64>>,
    pub doc_ids: Vec<String>,
    pub p_z_given_d: Vec<Vec<f64>>,
    /// Word-averaged E-step posteriors of the fitted documents.
    pub posteriors: Vec<Vec<f64>>,
    pub log_likelihood_trace: Vec<f64>,
    #[serde(skip)]
    term_index: HashMap<String, usize>,
    #[serde(skip)]
    doc_index: HashMap<String, usize>,
}

/// Sparse bag of words: (term index, count), sorted by term index.
type Bag = Vec<(usize, f64)>;

fn bag_of_words(doc: &Document, term_index: &HashMap<String, usize>) -> Bag {
    let mut counts: HashMap<usize, f64> = HashMap::new();
    for t in &doc.tokens {
        if let Some(&w) = term_index.get(t) {
            *counts.entry(w).or_insert(0.0) += 1.0;
        }
    }
    let mut bag: Bag = counts.into_iter().collect();
    bag.sort_by_key(|&(w, _)| w);
    bag
}

fn normalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    } else {
        let u = 1.0 / v.len() as f64;
        v.iter_mut().for_each(|x| *x = u);
    }
}

/// P(z | d, w) for every z, written into `out`.
fn word_posterior(p_w_given_z: &[Vec<f64>], theta: &[f64], w: usize, out: &mut [f64]) -> f64 {
    let mut denom = 0.0;
    for (z, o) in out.iter_mut().enumerate() {
        *o = p_w_given_z[z][w] * theta[z];
        denom += *o;
    }
    if denom > 0.0 {
        out.iter_mut().for_each(|o| *o /= denom);
    } else {
        let u = 1.0 / out.len() as f64;
        out.iter_mut().for_each(|o| *o = u);
    }
    denom
}

/// Word-averaged posterior: mean of P(z | d, w) over the document's tokens.
fn averaged_posterior(p_w_given_z: &[Vec<f64>], theta: &[f64], bag: &Bag) -> Vec<f64> {
    let z_count = theta.len();
    let mut acc = vec![0.0; z_count];
    let mut post = vec![0.0; z_count];
    let mut n = 0.0;
    for &(w, c) in bag {
        word_posterior(p_w_given_z, theta, w, &mut post);
        for z in 0..z_count {
            acc[z] += c * post[z];
        }
        n += c;
    }
    if n == 0.0 {
        return vec![1.0 / z_count as f64; z_count];
    }
    acc.iter_mut().for_each(|a| *a /= n);
    normalize(&mut acc);
    acc
}

fn log_likelihood(p_w_given_z: &[Vec<f64>], theta: &[Vec<f64>], bags: &[Bag]) -> f64 {
    let mut ll = 0.0;
    for (d, bag) in bags.iter().enumerate() {
        for &(w, c) in bag {
            let p: f64 = (0..theta[d].len()).map(|z| p_w_given_z[z][w] * theta[d][z]).sum();
            ll += c * p.ln();
        }
    }
    ll
}

/// Fit PLSA by EM. Deterministic for a given seed.
pub fn plsa_fit(documents: &[&Document], config: &PlsaConfig) -> Result<PlsaModel> {
    if documents.is_empty() {
        return Err(Error::param("plsa needs at least one document"));
    }
    if config.num_topics == 0 {
        return Err(Error::param("plsa needs at least one topic"));
    }
    if let Some(d) = documents.iter().find(|d| d.tokens.is_empty()) {
        return Err(Error::EmptyDocument(d.doc_id.clone()));
    }
    let z_count = config.num_topics;
    let vocabulary: Vec<String> = documents
        .iter()
        .flat_map(|d| d.tokens.iter().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let term_index: HashMap<String, usize> = vocabulary
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i))
        .collect();
    let bags: Vec<Bag> = documents.iter().map(|d| bag_of_words(d, &term_index)).collect();
    let v = vocabulary.len();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut noisy = |n: usize| -> Vec<f64> {
        let mut row: Vec<f64> = (0..n)
            .map(|_| 1.0 + config.init_noise * rng.random::<f64>())
            .collect();
        normalize(&mut row);
        row
    };
    let mut p_w_given_z: Vec<Vec<f64>> = (0..z_count).map(|_| noisy(v)).collect();
    let mut theta: Vec<Vec<f64>> = (0..documents.len()).map(|_| noisy(z_count)).collect();

    let mut trace = Vec::new();
    let mut post = vec![0.0; z_count];
    let mut prev_ll = log_likelihood(&p_w_given_z, &theta, &bags);
    trace.push(prev_ll);
    for _ in 0..config.max_iters {
        let mut word_acc = vec![vec![0.0; v]; z_count];
        let mut new_theta = vec![vec![0.0; z_count]; documents.len()];
        for (d, bag) in bags.iter().enumerate() {
            for &(w, c) in bag {
                word_posterior(&p_w_given_z, &theta[d], w, &mut post);
                for z in 0..z_count {
                    let r = c * post[z];
                    word_acc[z][w] += r;
                    new_theta[d][z] += r;
                }
            }
        }
        for row in word_acc.iter_mut().chain(new_theta.iter_mut()) {
            normalize(row);
        }
        p_w_given_z = word_acc;
        theta = new_theta;

        let ll = log_likelihood(&p_w_given_z, &theta, &bags);
        trace.push(ll);
        let gain = ll - prev_ll;
        prev_ll = ll;
        if gain < config.tol {
            break;
        }
    }

    let posteriors = bags
        .iter()
        .zip(&theta)
        .map(|(bag, th)| averaged_posterior(&p_w_given_z, th, bag))
        .collect();
    let doc_ids: Vec<String> = documents.iter().map(|d| d.doc_id.clone()).collect();
    let doc_index = doc_ids.iter().enumerate().map(|(i, d)| (d.clone(), i)).collect();
    Ok(PlsaModel {
        num_topics: z_count,
        vocabulary,
        p_w_given_z,
        doc_ids,
        p_z_given_d: theta,
        posteriors,
        log_likelihood_trace: trace,
        term_index,
        doc_index,
    })
}

impl PlsaModel {
    fn rebuild_indexes(&mut self) {
        self.term_index = self
            .vocabulary
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        self.doc_index = self
            .doc_ids
            .iter()
            .enumerate()
            .map(|(i, d)| (d.clone(), i))
            .collect();
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.doc_index.contains_key(doc_id)
    }

    /// Word-averaged posterior P(z | S_i) of a fitted document.
    pub fn posterior(&self, doc_id: &str) -> Option<&[f64]> {
        self.doc_index.get(doc_id).map(|&i| self.posteriors[i].as_slice())
    }

    /// Fold an unseen document in: E-step iterations with P(w|z) frozen,
    /// then the word-averaged posterior. Terms outside the vocabulary are
    /// ignored; a document with no known terms gets the uniform posterior.
    pub fn fold_in(&self, doc: &Document, iters: usize) -> Vec<f64> {
        let z_count = self.num_topics;
        let bag = bag_of_words(doc, &self.term_index);
        let mut theta = vec![1.0 / z_count as f64; z_count];
        let mut post = vec![0.0; z_count];
        for _ in 0..iters {
            let mut next = vec![0.0; z_count];
            for &(w, c) in &bag {
                word_posterior(&self.p_w_given_z, &theta, w, &mut post);
                for z in 0..z_count {
                    next[z] += c * post[z];
                }
            }
            normalize(&mut next);
            theta = next;
        }
        averaged_posterior(&self.p_w_given_z, &theta, &bag)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut model: PlsaModel = serde_json::from_str(&text)?;
        model.rebuild_indexes();
        Ok(model)
    }
}

/// Posterior of `doc` under `model`, folding it in when it was not part of
/// the fitted pool and `fold_in_iters` is given.
pub fn doc_topic_posterior(
    model: &PlsaModel,
    doc: &Document,
    fold_in_iters: Option<usize>,
) -> Result<Vec<f64>> {
    match (model.posterior(&doc.doc_id), fold_in_iters) {
        (Some(p), _) => Ok(p.to_vec()),
        (None, Some(iters)) => Ok(model.fold_in(doc, iters)),
        (None, None) => Err(Error::UnknownDocument(doc.doc_id.clone())),
    }
}
