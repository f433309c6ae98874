//! Encoder stack forward and backward for one sequence.

use ndarray::{s, Array2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ops::{
    gelu, gelu_grad, layer_norm, layer_norm_backward, linear, linear_backward, softmax_rows,
    softmax_rows_backward, NormCache,
};
use super::params::{LayerParams, ModelParams};

/// Forward-pass mode. Training mode applies dropout drawn from a seeded
/// stream, so repeated calls with the same seed are identical.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { seed: u64 },
}

/// Per-sequence dropout stream derived from the batch seed and the
/// sequence's index, independent of how sequences are scheduled.
pub(crate) fn sequence_rng(mode: Mode, index: usize) -> Option<ChaCha8Rng> {
    match mode {
        Mode::Eval => None,
        Mode::Train { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(index as u64);
            Some(rng)
        }
    }
}

fn dropout_mask(rng: &mut Option<ChaCha8Rng>, rate: f64, shape: (usize, usize)) -> Option<Array2<f64>> {
    let rng = rng.as_mut()?;
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - rate);
    Some(Array2::from_shape_fn(shape, |_| {
        if rng.random::<f64>() < rate {
            0.0
        } else {
            keep
        }
    }))
}

fn apply_mask(x: Array2<f64>, mask: &Option<Array2<f64>>) -> Array2<f64> {
    match mask {
        Some(m) => x * m,
        None => x,
    }
}

pub(crate) struct LayerCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    prob_masks: Vec<Option<Array2<f64>>>,
    ctx: Array2<f64>,
    attn_mask: Option<Array2<f64>>,
    ln_attn: NormCache,
    y1: Array2<f64>,
    u: Array2<f64>,
    g: Array2<f64>,
    ffn_mask: Option<Array2<f64>>,
    ln_ffn: NormCache,
}

pub(crate) struct SequenceCache {
    ids: Vec<u32>,
    ln_emb: NormCache,
    emb_mask: Option<Array2<f64>>,
    proj_in: Array2<f64>,
    ln_proj: NormCache,
    layers: Vec<LayerCache>,
    /// Final hidden states, `n × H`.
    pub output: Array2<f64>,
}

/// Runs the encoder over one sequence. `key_mask[j]` is false for positions
/// that must not be attended to (padding).
pub(crate) fn encode_sequence(
    p: &ModelParams,
    ids: &[u32],
    key_mask: &[bool],
    rng: &mut Option<ChaCha8Rng>,
) -> SequenceCache {
    let cfg = &p.config;
    let n = ids.len();
    let rate = cfg.dropout();
    let e = cfg.embedding_size;

    let mut x0 = Array2::zeros((n, e));
    for (t, &id) in ids.iter().enumerate() {
        let mut row = x0.row_mut(t);
        row.assign(&p.tok_emb.row(id as usize));
        row += &p.pos_emb.row(t);
    }
    let (xe, ln_emb) = layer_norm(&x0, &p.ln_emb_g, &p.ln_emb_b);
    let emb_mask = dropout_mask(rng, rate, (n, e));
    let proj_in = apply_mask(xe, &emb_mask);
    let proj = linear(&proj_in.view(), &p.proj_w, &p.proj_b);
    let (mut h, ln_proj) = layer_norm(&proj, &p.ln_proj_g, &p.ln_proj_b);

    let mut layers = Vec::with_capacity(p.layers.len());
    for lp in &p.layers {
        let (out, cache) = layer_forward(lp, h, key_mask, cfg.num_heads, rate, rng);
        layers.push(cache);
        h = out;
    }
    SequenceCache {
        ids: ids.to_vec(),
        ln_emb,
        emb_mask,
        proj_in,
        ln_proj,
        layers,
        output: h,
    }
}

fn layer_forward(
    lp: &LayerParams,
    x: Array2<f64>,
    key_mask: &[bool],
    heads: usize,
    rate: f64,
    rng: &mut Option<ChaCha8Rng>,
) -> (Array2<f64>, LayerCache) {
    let n = x.nrows();
    let hdim = x.ncols();
    let k_size = hdim / heads;
    let scale = 1.0 / (k_size as f64).sqrt();
    let q = linear(&x.view(), &lp.wq, &lp.bq);
    let k = linear(&x.view(), &lp.wk, &lp.bk);
    let v = linear(&x.view(), &lp.wv, &lp.bv);

    let mut ctx = Array2::zeros((n, hdim));
    let mut probs = Vec::with_capacity(heads);
    let mut prob_masks = Vec::with_capacity(heads);
    for a in 0..heads {
        let cols = s![.., a * k_size..(a + 1) * k_size];
        let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        for (j, &keep) in key_mask.iter().enumerate() {
            if !keep {
                scores.column_mut(j).fill(f64::NEG_INFINITY);
            }
        }
        softmax_rows(&mut scores);
        let pm = dropout_mask(rng, rate, (n, n));
        let dropped = match &pm {
            Some(m) => &scores * m,
            None => scores.clone(),
        };
        ctx.slice_mut(cols).assign(&dropped.dot(&v.slice(cols)));
        probs.push(scores);
        prob_masks.push(pm);
    }
    let o = linear(&ctx.view(), &lp.wo, &lp.bo);
    let attn_mask = dropout_mask(rng, rate, (n, hdim));
    let r1 = &x + &apply_mask(o, &attn_mask);
    let (y1, ln_attn) = layer_norm(&r1, &lp.ln_attn_g, &lp.ln_attn_b);

    let u = linear(&y1.view(), &lp.w_in, &lp.b_in);
    let g = u.mapv(gelu);
    let f = linear(&g.view(), &lp.w_out, &lp.b_out);
    let ffn_mask = dropout_mask(rng, rate, (n, hdim));
    let r2 = &y1 + &apply_mask(f, &ffn_mask);
    let (y2, ln_ffn) = layer_norm(&r2, &lp.ln_ffn_g, &lp.ln_ffn_b);

    let cache = LayerCache {
        x,
        q,
        k,
        v,
        probs,
        prob_masks,
        ctx,
        attn_mask,
        ln_attn,
        y1,
        u,
        g,
        ffn_mask,
        ln_ffn,
    };
    (y2, cache)
}

/// Accumulates parameter gradients given dL/d(output).
pub(crate) fn backward_sequence(
    p: &ModelParams,
    cache: &SequenceCache,
    d_out: Array2<f64>,
    grads: &mut ModelParams,
) {
    let heads = p.config.num_heads;
    let mut dh = d_out;
    for (li, lc) in cache.layers.iter().enumerate().rev() {
        dh = layer_backward(&p.layers[li], lc, dh, heads, &mut grads.layers[li]);
    }
    let dproj = layer_norm_backward(
        &dh,
        &cache.ln_proj,
        &p.ln_proj_g,
        &mut grads.ln_proj_g,
        &mut grads.ln_proj_b,
    );
    let dxe = linear_backward(
        &dproj,
        &cache.proj_in.view(),
        &p.proj_w,
        &mut grads.proj_w,
        &mut grads.proj_b,
    );
    let dxe = apply_mask(dxe, &cache.emb_mask);
    let dx0 = layer_norm_backward(
        &dxe,
        &cache.ln_emb,
        &p.ln_emb_g,
        &mut grads.ln_emb_g,
        &mut grads.ln_emb_b,
    );
    for (t, (&id, row)) in cache.ids.iter().zip(dx0.axis_iter(Axis(0))).enumerate() {
        let mut tok = grads.tok_emb.row_mut(id as usize);
        tok += &row;
        let mut pos = grads.pos_emb.row_mut(t);
        pos += &row;
    }
}

fn layer_backward(
    lp: &LayerParams,
    c: &LayerCache,
    dy2: Array2<f64>,
    heads: usize,
    g: &mut LayerParams,
) -> Array2<f64> {
    let hdim = c.x.ncols();
    let k_size = hdim / heads;
    let scale = 1.0 / (k_size as f64).sqrt();

    let dr2 = layer_norm_backward(&dy2, &c.ln_ffn, &lp.ln_ffn_g, &mut g.ln_ffn_g, &mut g.ln_ffn_b);
    let df = apply_mask(dr2.clone(), &c.ffn_mask);
    let dg = linear_backward(&df, &c.g.view(), &lp.w_out, &mut g.w_out, &mut g.b_out);
    let mut du = dg;
    ndarray::Zip::from(&mut du)
        .and(&c.u)
        .for_each(|d, &u| *d *= gelu_grad(u));
    let mut dy1 = linear_backward(&du, &c.y1.view(), &lp.w_in, &mut g.w_in, &mut g.b_in);
    dy1 += &dr2;

    let dr1 = layer_norm_backward(&dy1, &c.ln_attn, &lp.ln_attn_g, &mut g.ln_attn_g, &mut g.ln_attn_b);
    let do_ = apply_mask(dr1.clone(), &c.attn_mask);
    let dctx = linear_backward(&do_, &c.ctx.view(), &lp.wo, &mut g.wo, &mut g.bo);

    let n = c.x.nrows();
    let mut dq = Array2::zeros((n, hdim));
    let mut dk = Array2::zeros((n, hdim));
    let mut dv = Array2::zeros((n, hdim));
    for a in 0..heads {
        let cols = s![.., a * k_size..(a + 1) * k_size];
        let dctx_a = dctx.slice(cols);
        let probs = &c.probs[a];
        let dropped = match &c.prob_masks[a] {
            Some(m) => probs * m,
            None => probs.clone(),
        };
        dv.slice_mut(cols).assign(&dropped.t().dot(&dctx_a));
        let mut dp = dctx_a.dot(&c.v.slice(cols).t());
        if let Some(m) = &c.prob_masks[a] {
            dp *= m;
        }
        let dscores = softmax_rows_backward(&dp, probs) * scale;
        dq.slice_mut(cols).assign(&dscores.dot(&c.k.slice(cols)));
        dk.slice_mut(cols).assign(&dscores.t().dot(&c.q.slice(cols)));
    }
    let xv = c.x.view();
    let mut dx = linear_backward(&dq, &xv, &lp.wq, &mut g.wq, &mut g.bq);
    dx += &linear_backward(&dk, &xv, &lp.wk, &mut g.wk, &mut g.bk);
    dx += &linear_backward(&dv, &xv, &lp.wv, &mut g.wv, &mut g.bv);
    dx += &dr1;
    dx
}
