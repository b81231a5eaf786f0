//! One multiplex thinking step: distribution shaping, K independent draws,
//! one-hot averaging, the two aggregation weightings, the continuous token
//! and the step's log-probability and entropy.

use ndarray::Array1;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::embedding::{CoefficientMap, EmbeddingTable};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Probabilities below this are dropped from the sampling support.
pub const MIN_PROB: f64 = 1e-12;

const PROB_TOL: f64 = 1e-9;

/// A categorical distribution over the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector {
    probs: Vec<f64>,
}

impl ProbVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Invariant("empty distribution".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Invariant("probabilities must be finite and nonnegative".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_TOL {
            return Err(Error::Invariant(format!("probabilities sum to {sum}")));
        }
        Ok(Self { probs })
    }

    pub fn one_hot(len: usize, id: usize) -> Result<Self> {
        if id >= len {
            return Err(Error::TokenRange { id, vocab: len });
        }
        let mut probs = vec![0.0; len];
        probs[id] = 1.0;
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn prob(&self, id: usize) -> f64 {
        self.probs.get(id).copied().unwrap_or(0.0)
    }

    /// Most probable token; ties go to the lowest id.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    /// The distribution conditioned on `id` not being drawn.
    pub fn without(&self, id: usize) -> Result<Self> {
        let rest = 1.0 - self.prob(id);
        let mass: f64 = self
            .probs
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != id)
            .map(|(_, p)| p)
            .sum();
        if mass <= 0.0 || rest <= 0.0 {
            return Err(Error::Degenerate(format!("no probability mass outside token {id}")));
        }
        let probs = self
            .probs
            .iter()
            .enumerate()
            .map(|(i, &p)| if i == id { 0.0 } else { p / mass })
            .collect();
        Ok(Self { probs })
    }

    /// Shannon entropy in nats, with `0 ln 0 = 0`.
    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.ln())
            .sum::<f64>()
    }

    fn draw(&self, rng: &mut Rng) -> usize {
        let u: f64 = rng.gen();
        let mut cum = 0.0;
        let mut last = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            cum += p;
            last = i;
            if u < cum {
                return i;
            }
        }
        last
    }
}

/// Softmax at `temperature` followed by nucleus truncation at `top_p`.
///
/// The nucleus is the smallest prefix of tokens, ordered by decreasing
/// probability with ties broken by ascending id, whose mass reaches `top_p`.
/// Tokens below [`MIN_PROB`] are removed from the support afterwards.
pub fn shape_distribution(logits: &[f64], temperature: f64, top_p: f64) -> Result<ProbVector> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Parameter(format!("temperature must be positive, got {temperature}")));
    }
    if !(top_p > 0.0 && top_p <= 1.0) {
        return Err(Error::Parameter(format!("top_p must lie in (0, 1], got {top_p}")));
    }
    if logits.is_empty() {
        return Err(Error::Degenerate("empty logits".into()));
    }
    if logits.iter().any(|z| z.is_nan() || *z == f64::INFINITY) {
        return Err(Error::Degenerate("logits contain NaN or +inf".into()));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::Degenerate("all logits are -inf".into()));
    }
    let mut probs: Vec<f64> = logits.iter().map(|&z| ((z - max) / temperature).exp()).collect();
    normalize(&mut probs);

    if top_p < 1.0 {
        let mut order: Vec<usize> = (0..probs.len()).collect();
        order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
        let mut keep = vec![false; probs.len()];
        let mut cum = 0.0;
        for &i in &order {
            keep[i] = true;
            cum += probs[i];
            if cum + 1e-12 >= top_p {
                break;
            }
        }
        for (p, k) in probs.iter_mut().zip(&keep) {
            if !k {
                *p = 0.0;
            }
        }
        normalize(&mut probs);
    }

    if probs.iter().any(|&p| p > 0.0 && p < MIN_PROB) {
        for p in probs.iter_mut() {
            if *p < MIN_PROB {
                *p = 0.0;
            }
        }
        normalize(&mut probs);
    }
    Ok(ProbVector { probs })
}

fn normalize(probs: &mut [f64]) {
    let s: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= s);
}

/// K ordered draws `k_1..k_K` and their log-probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplexSample {
    pub token_ids: Vec<usize>,
    pub logprobs: Vec<f64>,
}

impl MultiplexSample {
    pub fn k(&self) -> usize {
        self.token_ids.len()
    }
}

/// Draws `k` tokens independently, with replacement, from `dist`.
pub fn sample_multiplex(dist: &ProbVector, k: usize, rng: &mut Rng) -> Result<MultiplexSample> {
    if k == 0 {
        return Err(Error::Parameter("multiplex width K must be at least 1".into()));
    }
    let token_ids: Vec<usize> = (0..k).map(|_| dist.draw(rng)).collect();
    let logprobs = token_ids.iter().map(|&t| dist.prob(t).ln()).collect();
    Ok(MultiplexSample { token_ids, logprobs })
}

/// Multiplicities of the sampled tokens; `s[v] = m_v / K`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    counts: Vec<(usize, usize)>,
    k: usize,
}

impl Selection {
    pub fn counts(&self) -> &[(usize, usize)] {
        &self.counts
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    pub fn multiplicity(&self, id: usize) -> usize {
        self.counts
            .iter()
            .find(|&&(t, _)| t == id)
            .map_or(0, |&(_, m)| m)
    }

    /// Averaged one-hot value `s[v]`.
    pub fn share(&self, id: usize) -> f64 {
        self.multiplicity(id) as f64 / self.k as f64
    }

    /// Multiplicities sorted in decreasing order, e.g. `[2, 1]`.
    pub fn signature(&self) -> Vec<usize> {
        let mut sig: Vec<usize> = self.counts.iter().map(|&(_, m)| m).collect();
        sig.sort_unstable_by(|a, b| b.cmp(a));
        sig
    }
}

pub fn build_selection(sample: &MultiplexSample) -> Selection {
    let mut ids = sample.token_ids.clone();
    ids.sort_unstable();
    let mut counts: Vec<(usize, usize)> = Vec::new();
    for id in ids {
        match counts.last_mut() {
            Some((t, m)) if *t == id => *m += 1,
            _ => counts.push((id, 1)),
        }
    }
    Selection { counts, k: sample.k() }
}

/// How the averaged one-hot vector is weighted before embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AggregationScheme {
    /// `w[v] = 1`: the mean of the K sampled embeddings.
    Uniform,
    /// Sampled tokens scaled by their LM-head probabilities.
    #[default]
    Reweighted,
}

impl std::fmt::Display for AggregationScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AggregationScheme::Uniform => "uniform",
            AggregationScheme::Reweighted => "reweighted",
        })
    }
}

impl std::str::FromStr for AggregationScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "reweighted" => Ok(Self::Reweighted),
            other => Err(Error::Config(format!("unknown aggregation scheme `{other}`"))),
        }
    }
}

fn support_mass(sel: &Selection, dist: &ProbVector) -> Result<f64> {
    let mut mass = 0.0;
    for &(id, _) in sel.counts() {
        let p = dist.prob(id);
        if p <= 0.0 {
            return Err(Error::Inconsistent(format!(
                "sampled token {id} has zero probability under the step distribution"
            )));
        }
        mass += p;
    }
    Ok(mass)
}

/// The literal `s ⊙ w` for the reweighted scheme, without renormalization.
///
/// With repeated samples these entries do not sum to one (a consensus step
/// yields `K`); [`compute_coefficients`] normalizes them. Exposed for audits.
pub fn literal_reweighted(sel: &Selection, dist: &ProbVector) -> Result<Vec<(usize, f64)>> {
    let mass = support_mass(sel, dist)?;
    let k = sel.k() as f64;
    Ok(sel
        .counts()
        .iter()
        .map(|&(id, m)| {
            let w = k * dist.prob(id) / mass;
            (id, (m as f64 / k) * w)
        })
        .collect())
}

/// Aggregation coefficients on the simplex for one step.
pub fn compute_coefficients(
    sel: &Selection,
    dist: &ProbVector,
    scheme: AggregationScheme,
) -> Result<CoefficientMap> {
    let k = sel.k() as f64;
    let raw: Vec<(usize, f64)> = match scheme {
        AggregationScheme::Uniform => {
            support_mass(sel, dist)?;
            sel.counts().iter().map(|&(id, m)| (id, m as f64 / k)).collect()
        }
        AggregationScheme::Reweighted => literal_reweighted(sel, dist)?,
    };
    let total: f64 = raw.iter().map(|(_, a)| a).sum();
    let entries = if sel.distinct() == 1 {
        vec![(raw[0].0, 1.0)]
    } else {
        raw.into_iter().map(|(id, a)| (id, a / total)).collect()
    };
    let map = CoefficientMap::from_sorted_unchecked(entries);
    map.validate()?;
    Ok(map)
}

/// The continuous multiplex token `E^T (s ⊙ w)`.
pub fn make_multiplex_token(coeffs: &CoefficientMap, table: &EmbeddingTable) -> Result<Array1<f64>> {
    table.aggregate(coeffs)
}

/// Sum of the K constituent log-probabilities.
pub fn step_logprob(sample: &MultiplexSample) -> f64 {
    sample.logprobs.iter().sum()
}

/// `(H, K·H)`: the per-draw Shannon entropy and the joint entropy of K
/// independent draws, in nats.
pub fn step_entropy(dist: &ProbVector, k: usize) -> (f64, f64) {
    let h = dist.entropy();
    (h, k as f64 * h)
}
