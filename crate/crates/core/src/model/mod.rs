//! Decoder-only transformer policy over continuous input vectors.
//!
//! Inputs are arbitrary `d`-vectors (token embeddings or multiplex tokens);
//! outputs are next-token logits through the tied embedding head.

mod checkpoint;
mod optim;
mod transformer;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use optim::{clip_grad_norm, Adam, AdamConfig};
pub use transformer::ForwardCache;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub max_context: usize,
    pub vocab_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { n_layers: 2, n_heads: 4, d_model: 64, d_ff: 256, max_context: 256, vocab_size: 32 }
    }
}

impl ModelConfig {
    /// One layer, one head, `d = 8`, `V = 8`; used by the gradient checks.
    pub fn micro(vocab_size: usize) -> Self {
        Self { n_layers: 1, n_heads: 1, d_model: 8, d_ff: 16, max_context: 8, vocab_size }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.n_heads == 0 || self.d_model == 0 || self.d_ff == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.max_context == 0 {
            return Err(Error::Config("max_context must be positive".into()));
        }
        if self.vocab_size < crate::embedding::MIN_VOCAB {
            return Err(Error::Config("vocab_size must be at least 4".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_g: Array1<f64>,
    pub ln1_b: Array1<f64>,
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub ln2_g: Array1<f64>,
    pub ln2_b: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// All trainable tensors. Gradients and optimizer moments reuse this type.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub embedding: EmbeddingTable,
    pub pos: Array2<f64>,
    pub layers: Vec<LayerParams>,
    pub lnf_g: Array1<f64>,
    pub lnf_b: Array1<f64>,
}

fn uniform2(rows: usize, cols: usize, bound: f64, rng: &mut Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-bound..bound))
}

impl Params {
    pub fn init(cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let f = cfg.d_ff;
        let embedding = EmbeddingTable::random(cfg.vocab_size, d, rng)?;
        let pos = uniform2(cfg.max_context, d, 1.0 / (d as f64).sqrt(), rng);
        let bd = 1.0 / (d as f64).sqrt();
        let bf = 1.0 / (f as f64).sqrt();
        let layers = (0..cfg.n_layers)
            .map(|_| LayerParams {
                ln1_g: Array1::ones(d),
                ln1_b: Array1::zeros(d),
                wq: uniform2(d, d, bd, rng),
                wk: uniform2(d, d, bd, rng),
                wv: uniform2(d, d, bd, rng),
                wo: uniform2(d, d, bd, rng),
                ln2_g: Array1::ones(d),
                ln2_b: Array1::zeros(d),
                w1: uniform2(d, f, bd, rng),
                b1: Array1::zeros(f),
                w2: uniform2(f, d, bf, rng),
                b2: Array1::zeros(d),
            })
            .collect();
        Ok(Self { embedding, pos, layers, lnf_g: Array1::ones(d), lnf_b: Array1::zeros(d) })
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// Named tensors with shapes, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        fn a2(name: String, a: &Array2<f64>) -> (String, Vec<usize>, &[f64]) {
            (name, a.shape().to_vec(), a.as_slice().expect("standard layout"))
        }
        fn a1(name: String, a: &Array1<f64>) -> (String, Vec<usize>, &[f64]) {
            (name, a.shape().to_vec(), a.as_slice().expect("standard layout"))
        }
        let mut out = vec![a2("embedding".into(), self.embedding.weights()), a2("pos".into(), &self.pos)];
        for (i, l) in self.layers.iter().enumerate() {
            out.push(a1(format!("layers.{i}.ln1_g"), &l.ln1_g));
            out.push(a1(format!("layers.{i}.ln1_b"), &l.ln1_b));
            out.push(a2(format!("layers.{i}.wq"), &l.wq));
            out.push(a2(format!("layers.{i}.wk"), &l.wk));
            out.push(a2(format!("layers.{i}.wv"), &l.wv));
            out.push(a2(format!("layers.{i}.wo"), &l.wo));
            out.push(a1(format!("layers.{i}.ln2_g"), &l.ln2_g));
            out.push(a1(format!("layers.{i}.ln2_b"), &l.ln2_b));
            out.push(a2(format!("layers.{i}.w1"), &l.w1));
            out.push(a1(format!("layers.{i}.b1"), &l.b1));
            out.push(a2(format!("layers.{i}.w2"), &l.w2));
            out.push(a1(format!("layers.{i}.b2"), &l.b2));
        }
        out.push(a1("lnf_g".into(), &self.lnf_g));
        out.push(a1("lnf_b".into(), &self.lnf_b));
        out
    }

    /// Mutable tensor slices in the same order as [`Params::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            self.embedding.weights_mut().as_slice_mut().expect("standard layout"),
            self.pos.as_slice_mut().expect("standard layout"),
        ];
        for l in self.layers.iter_mut() {
            for t in [&mut l.ln1_g, &mut l.ln1_b] {
                out.push(t.as_slice_mut().expect("standard layout"));
            }
            for t in [&mut l.wq, &mut l.wk, &mut l.wv, &mut l.wo] {
                out.push(t.as_slice_mut().expect("standard layout"));
            }
            for t in [&mut l.ln2_g, &mut l.ln2_b] {
                out.push(t.as_slice_mut().expect("standard layout"));
            }
            out.push(l.w1.as_slice_mut().expect("standard layout"));
            out.push(l.b1.as_slice_mut().expect("standard layout"));
            out.push(l.w2.as_slice_mut().expect("standard layout"));
            out.push(l.b2.as_slice_mut().expect("standard layout"));
        }
        out.push(self.lnf_g.as_slice_mut().expect("standard layout"));
        out.push(self.lnf_b.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, _, t)| t.len()).sum()
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Params, scale: f64) {
        let src = other.tensors();
        for (dst, (_, _, s)) in self.tensors_mut().into_iter().zip(src) {
            for (d, x) in dst.iter_mut().zip(s) {
                *d += scale * x;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn sq_norm(&self) -> f64 {
        self.tensors().iter().flat_map(|(_, _, t)| t.iter()).map(|x| x * x).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, _, t)| t.iter().all(|x| x.is_finite()))
    }

    /// Flattened copy of every parameter.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|(_, _, t)| t.iter().copied()).collect()
    }
}

/// Ordered input vectors conditioning the next-token distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextSequence {
    vectors: Array2<f64>,
}

impl ContextSequence {
    pub fn new(dim: usize) -> Self {
        Self { vectors: Array2::zeros((0, dim)) }
    }

    pub fn from_rows(vectors: Array2<f64>) -> Self {
        Self { vectors }
    }

    pub fn push(&mut self, v: ArrayView1<'_, f64>) -> Result<()> {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Invariant("context vector is not finite".into()));
        }
        self.vectors
            .push_row(v)
            .map_err(|e| Error::LengthMismatch(format!("context vector dimension: {e}")))
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }
}

/// The policy `pi_theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel {
    config: ModelConfig,
    params: Params,
}

impl PolicyModel {
    pub fn new(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        let params = Params::init(&config, rng)?;
        Ok(Self { config, params })
    }

    pub fn from_params(config: ModelConfig, params: Params) -> Result<Self> {
        config.validate()?;
        let probe = Params::init(&config, &mut crate::rng::seeded(0))?;
        let want: Vec<Vec<usize>> = probe.tensors().into_iter().map(|(_, s, _)| s).collect();
        let got: Vec<Vec<usize>> = params.tensors().into_iter().map(|(_, s, _)| s).collect();
        if want != got {
            return Err(Error::Checkpoint("parameter shapes do not match config".into()));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn embedding(&self) -> &EmbeddingTable {
        &self.params.embedding
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_parameters()
    }

    /// Stacks token embeddings into an input matrix.
    pub fn embed_tokens(&self, tokens: &[usize]) -> Result<Array2<f64>> {
        let d = self.config.d_model;
        let mut x = Array2::zeros((tokens.len(), d));
        for (mut row, &t) in x.rows_mut().into_iter().zip(tokens) {
            row.assign(&self.params.embedding.row(t)?);
        }
        Ok(x)
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len == 0 {
            return Err(Error::LengthMismatch("empty context".into()));
        }
        if len > self.config.max_context {
            return Err(Error::ContextOverflow { len, max: self.config.max_context });
        }
        Ok(())
    }

    /// Logits for the token following the last context vector.
    pub fn next_token_logits(&self, ctx: &ContextSequence) -> Result<Array1<f64>> {
        self.check_len(ctx.len())?;
        let hidden = transformer::hidden_states(&self.config, &self.params, ctx.vectors().view());
        let last = hidden.row(hidden.nrows() - 1);
        Ok(transformer::head(&self.params, last))
    }

    /// Logits at every position, `T x V`.
    pub fn logits(&self, inputs: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_len(inputs.nrows())?;
        let hidden = transformer::hidden_states(&self.config, &self.params, inputs.view());
        Ok(transformer::head_all(&self.params, &hidden))
    }

    /// Forward pass keeping the activations needed by [`PolicyModel::backward`].
    pub fn forward(&self, inputs: &Array2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_len(inputs.nrows())?;
        Ok(transformer::forward(&self.config, &self.params, inputs))
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the input vectors.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &Array2<f64>, grads: &mut Params) -> Array2<f64> {
        transformer::backward(&self.config, &self.params, cache, dlogits, grads)
    }

    /// Mean next-token cross-entropy under teacher forcing. Targets equal to
    /// `ignore` are skipped.
    pub fn supervised_loss(&self, input: &[usize], targets: &[usize], ignore: Option<usize>) -> Result<f64> {
        let (sum, count) = self.supervised_terms(input, targets, ignore, None)?;
        if count == 0 {
            return Err(Error::LengthMismatch("no supervised targets".into()));
        }
        Ok(sum / count as f64)
    }

    /// Summed cross-entropy and the number of counted targets.
    pub fn supervised_loss_sum(&self, input: &[usize], targets: &[usize], ignore: Option<usize>) -> Result<(f64, usize)> {
        self.supervised_terms(input, targets, ignore, None)
    }

    /// Loss and gradient for one sequence, with the gradient of the summed
    /// loss scaled by `grad_scale` accumulated into `grads`.
    /// Returns `(summed loss, counted targets)`.
    pub fn supervised_loss_grad(
        &self,
        input: &[usize],
        targets: &[usize],
        ignore: Option<usize>,
        grad_scale: f64,
        grads: &mut Params,
    ) -> Result<(f64, usize)> {
        self.supervised_terms(input, targets, ignore, Some((grad_scale, grads)))
    }

    fn supervised_terms(
        &self,
        input: &[usize],
        targets: &[usize],
        ignore: Option<usize>,
        grad: Option<(f64, &mut Params)>,
    ) -> Result<(f64, usize)> {
        if input.len() != targets.len() {
            return Err(Error::LengthMismatch(format!(
                "input length {} vs target length {}",
                input.len(),
                targets.len()
            )));
        }
        let v = self.config.vocab_size;
        if let Some(&t) = targets.iter().find(|&&t| t >= v) {
            return Err(Error::TokenRange { id: t, vocab: v });
        }
        let x = self.embed_tokens(input)?;
        let (logits, cache) = self.forward(&x)?;
        let mut dlogits = Array2::zeros(logits.dim());
        let mut sum = 0.0;
        let mut count = 0;
        for (t, &target) in targets.iter().enumerate() {
            if Some(target) == ignore {
                continue;
            }
            let row = logits.row(t);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
            sum += lse - row[target];
            count += 1;
            for (j, z) in row.iter().enumerate() {
                dlogits[[t, j]] = (z - lse).exp();
            }
            dlogits[[t, target]] -= 1.0;
        }
        if let Some((scale, grads)) = grad {
            dlogits *= scale;
            let dx = self.backward(&cache, &dlogits, grads);
            scatter_token_grads(grads, input, &dx);
        }
        Ok((sum, count))
    }
}

/// Routes input-vector gradients of discrete tokens back into embedding rows.
pub(crate) fn scatter_token_grads(grads: &mut Params, tokens: &[usize], dx: &Array2<f64>) {
    let e = grads.embedding.weights_mut();
    for (&t, row) in tokens.iter().zip(dx.rows()) {
        e.row_mut(t).scaled_add(1.0, &row);
    }
}
