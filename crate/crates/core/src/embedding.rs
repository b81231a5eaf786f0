//! Vocabulary embedding matrix and the maps between tokens, sparse
//! coefficient vectors and continuous embeddings.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Tolerance on the coefficient simplex constraint.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Minimum vocabulary: PAD, BOS, EOT, EOS.
pub const MIN_VOCAB: usize = 4;

/// `V x d` embedding matrix; row `v` is the embedding of token `v`.
///
/// The same matrix serves as the tied output head of the policy model.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    weights: Array2<f64>,
}

impl EmbeddingTable {
    pub fn from_weights(weights: Array2<f64>) -> Result<Self> {
        let (v, d) = weights.dim();
        if v < MIN_VOCAB {
            return Err(Error::Invariant(format!(
                "vocabulary size {v} below minimum {MIN_VOCAB}"
            )));
        }
        if d == 0 {
            return Err(Error::Invariant("embedding dimension must be positive".into()));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Invariant("embedding table contains non-finite values".into()));
        }
        Ok(Self { weights })
    }

    /// Uniform initialization in `[-1/sqrt(d), 1/sqrt(d)]`.
    pub fn random(vocab_size: usize, dim: usize, rng: &mut Rng) -> Result<Self> {
        let bound = 1.0 / (dim as f64).sqrt();
        let weights = Array2::from_shape_simple_fn((vocab_size, dim), || rng.gen_range(-bound..bound));
        Self::from_weights(weights)
    }

    pub fn vocab_size(&self) -> usize {
        self.weights.nrows()
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut Array2<f64> {
        &mut self.weights
    }

    fn check_id(&self, id: usize) -> Result<()> {
        if id >= self.vocab_size() {
            return Err(Error::TokenRange { id, vocab: self.vocab_size() });
        }
        Ok(())
    }

    pub fn row(&self, id: usize) -> Result<ArrayView1<'_, f64>> {
        self.check_id(id)?;
        Ok(self.weights.row(id))
    }

    /// `e(v)`: row `v`, unmodified.
    pub fn embed_token(&self, id: usize) -> Result<Array1<f64>> {
        Ok(self.row(id)?.to_owned())
    }

    /// `sum_v a_v e(v)` over the sparse support of `coeffs`. Costs O(K d).
    pub fn aggregate(&self, coeffs: &CoefficientMap) -> Result<Array1<f64>> {
        coeffs.validate()?;
        let mut entries = coeffs.iter();
        // validate() guarantees at least one entry
        let (first, a0) = entries.next().expect("non-empty coefficient map");
        let mut out = &self.row(first)? * a0;
        for (id, a) in entries {
            out.scaled_add(a, &self.row(id)?);
        }
        Ok(out)
    }

    /// Dense mixture `sum_v p(v) e(v)` over the whole vocabulary.
    ///
    /// Only the Soft Thinking baseline uses this path.
    pub fn mixture_dense(&self, probs: &[f64]) -> Result<Array1<f64>> {
        if probs.len() != self.vocab_size() {
            return Err(Error::LengthMismatch(format!(
                "dense mixture over {} probabilities, vocabulary {}",
                probs.len(),
                self.vocab_size()
            )));
        }
        Ok(ArrayView1::from(probs).dot(&self.weights))
    }
}

/// Sparse coefficient vector over token ids, sorted by id.
///
/// A valid map lies on the probability simplex: strictly positive entries
/// summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CoefficientMap {
    entries: Vec<(usize, f64)>,
}

impl CoefficientMap {
    /// Builds a map from `(token, coefficient)` pairs; duplicate ids are rejected.
    pub fn new(mut entries: Vec<(usize, f64)>) -> Result<Self> {
        entries.sort_by_key(|&(id, _)| id);
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Invariant("duplicate token id in coefficient map".into()));
        }
        let map = Self { entries };
        map.validate()?;
        Ok(map)
    }

    pub fn singleton(id: usize) -> Self {
        Self { entries: vec![(id, 1.0)] }
    }

    pub(crate) fn from_sorted_unchecked(entries: Vec<(usize, f64)>) -> Self {
        Self { entries }
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Invariant("empty coefficient map".into()));
        }
        if let Some(&(id, a)) = self.entries.iter().find(|(_, a)| !(a.is_finite() && *a > 0.0)) {
            return Err(Error::Invariant(format!(
                "coefficient for token {id} is {a}, must be finite and positive"
            )));
        }
        let sum = self.sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Invariant(format!("coefficients sum to {sum}, expected 1")));
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.entries.iter().map(|(_, a)| a).sum()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<f64> {
        self.entries
            .binary_search_by_key(&id, |&(t, _)| t)
            .ok()
            .map(|i| self.entries[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.entries.iter().copied()
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn identity(n: usize) -> EmbeddingTable {
        EmbeddingTable::from_weights(Array2::eye(n)).unwrap()
    }

    fn random_table(v: usize, d: usize, seed: u64) -> EmbeddingTable {
        EmbeddingTable::random(v, d, &mut crate::rng::seeded(seed)).unwrap()
    }

    #[test]
    fn embed_token_is_row_lookup() {
        let t = identity(4);
        assert_eq!(t.embed_token(1).unwrap(), array![0.0, 1.0, 0.0, 0.0]);

        let mut w = Array2::zeros((4, 2));
        w.row_mut(2).assign(&array![0.5, -0.5]);
        let t = EmbeddingTable::from_weights(w).unwrap();
        assert_eq!(t.embed_token(2).unwrap(), array![0.5, -0.5]);
        assert!(matches!(t.embed_token(4), Err(Error::TokenRange { id: 4, vocab: 4 })));
    }

    #[test]
    fn rejects_small_or_non_finite_tables() {
        assert!(EmbeddingTable::from_weights(Array2::eye(3)).is_err());
        let mut w = Array2::<f64>::zeros((4, 2));
        w[[1, 1]] = f64::NAN;
        assert!(EmbeddingTable::from_weights(w).is_err());
    }

    #[test]
    fn random_init_is_bounded() {
        let t = random_table(16, 64, 3);
        let bound = 1.0 / 8.0;
        assert!(t.weights().iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn aggregate_singleton_and_symmetric_pair() {
        let t = identity(4);
        let c = CoefficientMap::singleton(3);
        assert_eq!(t.aggregate(&c).unwrap(), t.embed_token(3).unwrap());
        let c = CoefficientMap::new(vec![(3, 0.5), (0, 0.5)]).unwrap();
        assert_eq!(t.aggregate(&c).unwrap(), array![0.5, 0.0, 0.0, 0.5]);
    }

    #[test]
    fn aggregate_matches_dense_matrix_vector_product() {
        let t = random_table(8, 4, 11);
        let c = CoefficientMap::new(vec![(1, 0.2), (5, 0.8)]).unwrap();
        // dense oracle: E^T a with a full-length coefficient vector
        let mut a = [0.0; 8];
        a[1] = 0.2;
        a[5] = 0.8;
        let w = t.weights();
        let oracle: Vec<f64> = (0..4)
            .map(|j| (0..8).map(|v| w[[v, j]] * a[v]).sum())
            .collect();
        let got = t.aggregate(&c).unwrap();
        for j in 0..4 {
            assert!((got[j] - oracle[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn non_simplex_coefficients_are_rejected() {
        assert!(CoefficientMap::new(vec![(0, 0.5), (1, 0.4)]).is_err());
        assert!(CoefficientMap::new(vec![(0, 1.5), (1, -0.5)]).is_err());
        assert!(CoefficientMap::new(vec![(0, 0.5), (0, 0.5)]).is_err());
        assert!(CoefficientMap::new(vec![]).is_err());
        let t = identity(4);
        let bad = CoefficientMap::from_sorted_unchecked(vec![(0, 0.7)]);
        assert!(matches!(t.aggregate(&bad), Err(Error::Invariant(_))));
    }

    fn simplex_pair() -> impl Strategy<Value = (Vec<usize>, Vec<f64>, Vec<f64>, f64)> {
        (1usize..5).prop_flat_map(|k| {
            (
                proptest::sample::subsequence((0..12).collect::<Vec<_>>(), k),
                proptest::collection::vec(0.05f64..1.0, k),
                proptest::collection::vec(0.05f64..1.0, k),
                0.0f64..1.0,
            )
        })
    }

    fn normalized(ids: &[usize], raw: &[f64]) -> CoefficientMap {
        let s: f64 = raw.iter().sum();
        CoefficientMap::new(ids.iter().copied().zip(raw.iter().map(|r| r / s)).collect()).unwrap()
    }

    proptest! {
        #[test]
        fn aggregate_is_convex_and_linear((ids, ra, rb, alpha) in simplex_pair(), seed in 0u64..1000) {
            let t = random_table(12, 6, seed);
            let a = normalized(&ids, &ra);
            let b = normalized(&ids, &rb);
            let ya = t.aggregate(&a).unwrap();
            let yb = t.aggregate(&b).unwrap();
            for j in 0..6 {
                let col: Vec<f64> = ids.iter().map(|&v| t.weights()[[v, j]]).collect();
                let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(ya[j] >= lo - 1e-12 && ya[j] <= hi + 1e-12);
            }
            let mix = CoefficientMap::new(
                a.iter().zip(b.iter()).map(|((v, x), (_, y))| (v, alpha * x + (1.0 - alpha) * y)).collect()
            ).unwrap();
            let ym = t.aggregate(&mix).unwrap();
            for j in 0..6 {
                prop_assert!((ym[j] - (alpha * ya[j] + (1.0 - alpha) * yb[j])).abs() < 1e-9);
            }
        }

        #[test]
        fn singleton_aggregate_is_bit_exact(v in 0usize..12, seed in 0u64..1000) {
            let t = random_table(12, 6, seed);
            prop_assert_eq!(t.aggregate(&CoefficientMap::singleton(v)).unwrap(), t.embed_token(v).unwrap());
        }
    }
}
