//! Pre-norm transformer forward and backward passes.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::{LayerParams, ModelConfig, Params};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

struct Norm {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

fn layer_norm(x: ArrayView2<'_, f64>, g: &Array1<f64>, b: &Array1<f64>) -> (Array2<f64>, Norm) {
    let d = x.ncols() as f64;
    let mut xhat = x.to_owned();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *r = 1.0 / (var + LN_EPS).sqrt();
        row *= *r;
    }
    let y = &xhat * g + b;
    (y, Norm { xhat, rstd })
}

fn layer_norm_backward(
    dy: &Array2<f64>,
    norm: &Norm,
    g: &Array1<f64>,
    dg: &mut Array1<f64>,
    db: &mut Array1<f64>,
) -> Array2<f64> {
    *dg += &(dy * &norm.xhat).sum_axis(Axis(0));
    *db += &dy.sum_axis(Axis(0));
    let d = dy.ncols() as f64;
    let mut dx = dy * g;
    for ((mut row, xh), &r) in dx.rows_mut().into_iter().zip(norm.xhat.rows()).zip(norm.rstd.iter()) {
        let mean_dxhat = row.sum() / d;
        let mean_dxhat_xhat = row.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>() / d;
        for (v, &x) in row.iter_mut().zip(xh.iter()) {
            *v = r * (*v - mean_dxhat - x * mean_dxhat_xhat);
        }
    }
    dx
}

fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + 0.044715 * u * u * u)).tanh())
}

fn gelu_grad(u: f64) -> f64 {
    let t = (GELU_C * (u + 0.044715 * u * u * u)).tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * u * u)
}

/// Row-wise causal softmax of `scores` in place.
fn causal_softmax(scores: &mut Array2<f64>) {
    let t = scores.nrows();
    for i in 0..t {
        let mut row = scores.row_mut(i);
        let max = row.slice(s![..=i]).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for j in 0..=i {
            let e = (row[j] - max).exp();
            row[j] = e;
            sum += e;
        }
        for j in 0..=i {
            row[j] /= sum;
        }
        for j in i + 1..t {
            row[j] = 0.0;
        }
    }
}

struct LayerCache {
    ln1: Norm,
    a: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    attn: Array2<f64>,
    ln2: Norm,
    b: Array2<f64>,
    u: Array2<f64>,
    act: Array2<f64>,
}

/// Activations saved by the forward pass.
pub struct ForwardCache {
    layers: Vec<LayerCache>,
    lnf: Norm,
    y: Array2<f64>,
    len: usize,
}

impl ForwardCache {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

fn attention(cfg: &ModelConfig, q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>, keep: bool) -> (Array2<f64>, Vec<Array2<f64>>) {
    let hd = cfg.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();
    let mut out = Array2::zeros(q.dim());
    let mut probs = Vec::new();
    for h in 0..cfg.n_heads {
        let cols = s![.., h * hd..(h + 1) * hd];
        let mut p = q.slice(cols).dot(&k.slice(cols).t());
        p *= scale;
        causal_softmax(&mut p);
        out.slice_mut(cols).assign(&p.dot(&v.slice(cols)));
        if keep {
            probs.push(p);
        }
    }
    (out, probs)
}

fn layer_forward(cfg: &ModelConfig, l: &LayerParams, x: &Array2<f64>, keep: bool) -> (Array2<f64>, Option<LayerCache>) {
    let (a, ln1) = layer_norm(x.view(), &l.ln1_g, &l.ln1_b);
    let q = a.dot(&l.wq);
    let k = a.dot(&l.wk);
    let v = a.dot(&l.wv);
    let (attn, probs) = attention(cfg, &q, &k, &v, keep);
    let h1 = x + &attn.dot(&l.wo);
    let (b, ln2) = layer_norm(h1.view(), &l.ln2_g, &l.ln2_b);
    let u = b.dot(&l.w1) + &l.b1;
    let act = u.mapv(gelu);
    let out = &h1 + &act.dot(&l.w2) + &l.b2;
    let cache = keep.then(|| LayerCache { ln1, a, q, k, v, probs, attn, ln2, b, u, act });
    (out, cache)
}

fn embed_positions(params: &Params, inputs: ArrayView2<'_, f64>) -> Array2<f64> {
    let t = inputs.nrows();
    &inputs + &params.pos.slice(s![..t, ..])
}

/// Final-layer-normed hidden states, `T x d`, without caching.
pub(super) fn hidden_states(cfg: &ModelConfig, params: &Params, inputs: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut h = embed_positions(params, inputs);
    for l in &params.layers {
        h = layer_forward(cfg, l, &h, false).0;
    }
    layer_norm(h.view(), &params.lnf_g, &params.lnf_b).0
}

pub(super) fn head(params: &Params, y: ArrayView1<'_, f64>) -> Array1<f64> {
    params.embedding.weights().dot(&y)
}

pub(super) fn head_all(params: &Params, y: &Array2<f64>) -> Array2<f64> {
    y.dot(&params.embedding.weights().t())
}

pub(super) fn forward(cfg: &ModelConfig, params: &Params, inputs: &Array2<f64>) -> (Array2<f64>, ForwardCache) {
    let mut h = embed_positions(params, inputs.view());
    let mut layers = Vec::with_capacity(params.layers.len());
    for l in &params.layers {
        let (out, cache) = layer_forward(cfg, l, &h, true);
        layers.push(cache.expect("cache requested"));
        h = out;
    }
    let (y, lnf) = layer_norm(h.view(), &params.lnf_g, &params.lnf_b);
    let logits = head_all(params, &y);
    (logits, ForwardCache { layers, lnf, y, len: inputs.nrows() })
}

fn layer_backward(
    cfg: &ModelConfig,
    l: &LayerParams,
    c: &LayerCache,
    dout: Array2<f64>,
    g: &mut LayerParams,
) -> Array2<f64> {
    // MLP branch
    g.b2 += &dout.sum_axis(Axis(0));
    g.w2 += &c.act.t().dot(&dout);
    let mut du = dout.dot(&l.w2.t());
    du.zip_mut_with(&c.u, |d, &u| *d *= gelu_grad(u));
    g.b1 += &du.sum_axis(Axis(0));
    g.w1 += &c.b.t().dot(&du);
    let db = du.dot(&l.w1.t());
    let dh1 = dout + layer_norm_backward(&db, &c.ln2, &l.ln2_g, &mut g.ln2_g, &mut g.ln2_b);

    // attention branch
    g.wo += &c.attn.t().dot(&dh1);
    let dattn = dh1.dot(&l.wo.t());
    let hd = cfg.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();
    let mut dq = Array2::zeros(c.q.dim());
    let mut dk = Array2::zeros(c.k.dim());
    let mut dv = Array2::zeros(c.v.dim());
    for (h, p) in c.probs.iter().enumerate() {
        let cols = s![.., h * hd..(h + 1) * hd];
        let dout_h = dattn.slice(cols);
        let dp = dout_h.dot(&c.v.slice(cols).t());
        dv.slice_mut(cols).assign(&p.t().dot(&dout_h));
        let mut ds = dp;
        for (mut drow, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
            let dot: f64 = drow.iter().zip(prow.iter()).map(|(a, b)| a * b).sum();
            drow.zip_mut_with(&prow, |d, &pv| *d = pv * (*d - dot) * scale);
        }
        dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
        dk.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
    }
    g.wq += &c.a.t().dot(&dq);
    g.wk += &c.a.t().dot(&dk);
    g.wv += &c.a.t().dot(&dv);
    let da = dq.dot(&l.wq.t()) + dk.dot(&l.wk.t()) + dv.dot(&l.wv.t());
    dh1 + layer_norm_backward(&da, &c.ln1, &l.ln1_g, &mut g.ln1_g, &mut g.ln1_b)
}

pub(super) fn backward(
    cfg: &ModelConfig,
    params: &Params,
    cache: &ForwardCache,
    dlogits: &Array2<f64>,
    grads: &mut Params,
) -> Array2<f64> {
    assert_eq!(dlogits.nrows(), cache.len, "dlogits rows must match the forward length");
    grads.embedding.weights_mut().scaled_add(1.0, &dlogits.t().dot(&cache.y));
    let dy = dlogits.dot(params.embedding.weights());
    let mut dh = layer_norm_backward(&dy, &cache.lnf, &params.lnf_g, &mut grads.lnf_g, &mut grads.lnf_b);
    for ((l, c), g) in params.layers.iter().zip(&cache.layers).zip(grads.layers.iter_mut()).rev() {
        dh = layer_backward(cfg, l, c, dh, g);
    }
    let t = cache.len;
    grads.pos.slice_mut(s![..t, ..]).scaled_add(1.0, &dh);
    dh
}
