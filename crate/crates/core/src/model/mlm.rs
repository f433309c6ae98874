//! MLM objective: loss is the mean cross-entropy over masked positions.

use ndarray::{Array2, Array3, Axis};
use rayon::prelude::*;

use super::encoder::{backward_sequence, encode_sequence, sequence_rng, Mode};
use super::masking::{MaskedBatch, MaskedSequence, IGNORE_INDEX};
use super::ops::{
    cross_entropy_row, gelu, gelu_grad, layer_norm, layer_norm_backward, linear, linear_backward,
    NormCache,
};
use super::params::ModelParams;
use crate::error::{LabError, Result};

/// Sequences per gradient chunk. Chunks are summed in order, so results do
/// not depend on the number of worker threads.
pub(crate) const CHUNK: usize = 8;

#[derive(Debug, Clone)]
pub struct MlmOutput {
    /// `B × S × V` logits at every position.
    pub logits: Array3<f64>,
    pub loss: f64,
}

struct HeadCache {
    x: Array2<f64>,
    z: Array2<f64>,
    g: Array2<f64>,
    ln: NormCache,
    t: Array2<f64>,
}

fn head_forward(p: &ModelParams, x: Array2<f64>) -> (Array2<f64>, HeadCache) {
    let z = linear(&x.view(), &p.head_w, &p.head_b);
    let g = z.mapv(gelu);
    let (t, ln) = layer_norm(&g, &p.ln_head_g, &p.ln_head_b);
    let logits = linear(&t.view(), &p.dec_w, &p.dec_b);
    (logits, HeadCache { x, z, g, ln, t })
}

fn head_backward(
    p: &ModelParams,
    c: &HeadCache,
    dlogits: &Array2<f64>,
    grads: &mut ModelParams,
) -> Array2<f64> {
    let dt = linear_backward(dlogits, &c.t.view(), &p.dec_w, &mut grads.dec_w, &mut grads.dec_b);
    let mut dz = layer_norm_backward(&dt, &c.ln, &p.ln_head_g, &mut grads.ln_head_g, &mut grads.ln_head_b);
    ndarray::Zip::from(&mut dz)
        .and(&c.z)
        .for_each(|d, &z| *d *= gelu_grad(z));
    let _ = &c.g;
    linear_backward(&dz, &c.x.view(), &p.head_w, &mut grads.head_w, &mut grads.head_b)
}

fn validate(p: &ModelParams, batch: &MaskedBatch) -> Result<usize> {
    let v = p.config.vocab_size;
    for s in &batch.sequences {
        if s.input_ids.len() != s.labels.len() || s.input_ids.len() != s.attention_mask.len() {
            return Err(LabError::invalid("ids, labels and attention mask lengths differ"));
        }
        if s.input_ids.len() > p.config.max_seq_len {
            return Err(LabError::invalid(format!(
                "sequence length {} exceeds max_seq_len {}",
                s.input_ids.len(),
                p.config.max_seq_len
            )));
        }
        if let Some(&id) = s.input_ids.iter().find(|&&id| id as usize >= v) {
            return Err(LabError::invalid(format!("token id {id} >= vocab size {v}")));
        }
        if s.labels.iter().any(|&l| l != IGNORE_INDEX && (l < 0 || l as usize >= v)) {
            return Err(LabError::invalid("label outside the vocabulary"));
        }
        if s.labels.iter().zip(&s.attention_mask).any(|(&l, &m)| l != IGNORE_INDEX && !m) {
            return Err(LabError::invalid("label at a padding position"));
        }
        if !s.attention_mask.iter().any(|&m| m) {
            return Err(LabError::invalid("sequence has no attended positions"));
        }
    }
    let n = batch.num_labels();
    if n == 0 {
        return Err(LabError::Undefined(
            "MLM loss needs at least one masked position".into(),
        ));
    }
    Ok(n)
}

/// Full forward pass returning logits at every position.
pub fn forward_mlm(p: &ModelParams, batch: &MaskedBatch, mode: Mode) -> Result<MlmOutput> {
    let n_labels = validate(p, batch)?;
    let s_max = batch.sequences.iter().map(|s| s.input_ids.len()).max().unwrap_or(0);
    let v = p.config.vocab_size;
    let mut logits = Array3::zeros((batch.len(), s_max, v));
    let mut loss = 0.0;
    for (i, seq) in batch.sequences.iter().enumerate() {
        let mut rng = sequence_rng(mode, i);
        let cache = encode_sequence(p, &seq.input_ids, &seq.attention_mask, &mut rng);
        let (lg, _) = head_forward(p, cache.output);
        for (t, &label) in seq.labels.iter().enumerate() {
            if label != IGNORE_INDEX {
                loss += cross_entropy_row(lg.row(t), label as usize).0;
            }
        }
        logits
            .index_axis_mut(Axis(0), i)
            .slice_mut(ndarray::s![..lg.nrows(), ..])
            .assign(&lg);
    }
    Ok(MlmOutput {
        logits,
        loss: loss / n_labels as f64,
    })
}

fn sequence_loss_grad(
    p: &ModelParams,
    seq: &MaskedSequence,
    index: usize,
    mode: Mode,
    norm: f64,
    grads: Option<&mut ModelParams>,
) -> f64 {
    // Trailing padding cannot influence attended positions; drop it.
    let n = seq.effective_len();
    let mut rng = sequence_rng(mode, index);
    let cache = encode_sequence(p, &seq.input_ids[..n], &seq.attention_mask[..n], &mut rng);
    let rows: Vec<usize> = (0..n).filter(|&t| seq.labels[t] != IGNORE_INDEX).collect();
    if rows.is_empty() {
        return 0.0;
    }
    let selected = cache.output.select(Axis(0), &rows);
    let (logits, hc) = head_forward(p, selected);
    let mut loss = 0.0;
    let mut dlogits = Array2::zeros(logits.raw_dim());
    for (r, &t) in rows.iter().enumerate() {
        let target = seq.labels[t] as usize;
        let (l, prob) = cross_entropy_row(logits.row(r), target);
        loss += l;
        let mut d = dlogits.row_mut(r);
        d.assign(&prob);
        d[target] -= 1.0;
    }
    if let Some(grads) = grads {
        dlogits /= norm;
        let dsel = head_backward(p, &hc, &dlogits, grads);
        let mut d_out = Array2::zeros(cache.output.raw_dim());
        for (r, &t) in rows.iter().enumerate() {
            d_out.row_mut(t).assign(&dsel.row(r));
        }
        backward_sequence(p, &cache, d_out, grads);
    }
    loss
}

fn run_chunks<T, F>(batch: &MaskedBatch, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &[MaskedSequence]) -> T + Sync + Send,
{
    if rayon::current_num_threads() <= 1 {
        batch
            .sequences
            .chunks(CHUNK)
            .enumerate()
            .map(|(c, s)| f(c * CHUNK, s))
            .collect()
    } else {
        batch
            .sequences
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(c, s)| f(c * CHUNK, s))
            .collect()
    }
}

/// Mean masked-token loss and its gradient with respect to every parameter.
pub fn mlm_loss_and_grad(
    p: &ModelParams,
    batch: &MaskedBatch,
    mode: Mode,
) -> Result<(f64, ModelParams)> {
    let n_labels = validate(p, batch)? as f64;
    let parts = run_chunks(batch, |start, seqs| {
        let mut g = ModelParams::zeros(&p.config);
        let loss: f64 = seqs
            .iter()
            .enumerate()
            .map(|(j, s)| sequence_loss_grad(p, s, start + j, mode, n_labels, Some(&mut g)))
            .sum();
        (loss, g)
    });
    let mut total = ModelParams::zeros(&p.config);
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l;
        total.add_scaled(&g, 1.0);
    }
    Ok((loss / n_labels, total))
}

/// Mean masked-token loss; the head is evaluated only at masked positions.
pub fn mlm_loss(p: &ModelParams, batch: &MaskedBatch, mode: Mode) -> Result<f64> {
    let n_labels = validate(p, batch)? as f64;
    let parts = run_chunks(batch, |start, seqs| {
        seqs.iter()
            .enumerate()
            .map(|(j, s)| sequence_loss_grad(p, s, start + j, mode, n_labels, None))
            .sum::<f64>()
    });
    Ok(parts.into_iter().sum::<f64>() / n_labels)
}

/// Exact gradients with dropout disabled.
pub fn grad_mlm(p: &ModelParams, batch: &MaskedBatch) -> Result<ModelParams> {
    Ok(mlm_loss_and_grad(p, batch, Mode::Eval)?.1)
}

pub fn perplexity(loss: f64) -> f64 {
    loss.exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{apply_masking, build_sequence, init_model, ModelConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn batch(cfg: &ModelConfig, seed: u64) -> MaskedBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seqs = [vec![7u32, 8, 9, 10], vec![11, 12], vec![5, 6, 7, 8, 9, 10]];
        MaskedBatch {
            sequences: seqs
                .iter()
                .map(|s| apply_masking(&build_sequence(s, cfg.max_seq_len), 0.3, &mut rng).unwrap())
                .collect(),
        }
    }

    #[test]
    fn perplexity_values() {
        assert_eq!(perplexity(0.0), 1.0);
        assert!((perplexity(19_000f64.ln()) - 19_000.0).abs() < 1e-8);
        assert!((perplexity(1.5686) - 4.80).abs() < 0.005);
    }

    #[test]
    fn zeroed_decoder_gives_uniform_loss() {
        let cfg = ModelConfig::new(8, 8, 16, 1, 2, 19_000, 8);
        let mut p = init_model(&cfg, 0).unwrap();
        p.dec_w.fill(0.0);
        let b = batch(&cfg, 0);
        let loss = mlm_loss(&p, &b, Mode::Eval).unwrap();
        assert!((loss - 19_000f64.ln()).abs() < 1e-9);
        assert!((19_000f64.ln() - 9.8522).abs() < 1e-4);
    }

    #[test]
    fn dominant_decoder_row_drives_loss_to_zero() {
        let cfg = ModelConfig::new(4, 4, 8, 1, 1, 20, 6);
        let mut p = init_model(&cfg, 0).unwrap();
        let seq = build_sequence(&[9], 6);
        let b = MaskedBatch {
            sequences: vec![apply_masking(&seq, 0.15, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()],
        };
        p.dec_w.fill(0.0);
        p.dec_b.fill(0.0);
        p.dec_b[9] = 1e4;
        assert!(mlm_loss(&p, &b, Mode::Eval).unwrap() < 1e-12);
    }

    #[test]
    fn full_and_masked_only_paths_agree() {
        let cfg = ModelConfig::new(6, 8, 12, 2, 2, 30, 10);
        let p = init_model(&cfg, 4).unwrap();
        let b = batch(&cfg, 2);
        let full = forward_mlm(&p, &b, Mode::Eval).unwrap();
        let fast = mlm_loss(&p, &b, Mode::Eval).unwrap();
        let (with_grad, _) = mlm_loss_and_grad(&p, &b, Mode::Eval).unwrap();
        assert!((full.loss - fast).abs() < 1e-12);
        assert!((full.loss - with_grad).abs() < 1e-12);
        assert_eq!(full.logits.shape(), &[3, 10, 30]);
    }

    #[test]
    fn no_labels_is_an_error() {
        let cfg = ModelConfig::new(4, 4, 8, 1, 1, 20, 6);
        let p = init_model(&cfg, 0).unwrap();
        let b = MaskedBatch {
            sequences: vec![MaskedSequence {
                input_ids: build_sequence(&[9], 6),
                labels: vec![IGNORE_INDEX; 6],
                attention_mask: vec![true; 6],
            }],
        };
        assert!(matches!(mlm_loss(&p, &b, Mode::Eval), Err(LabError::Undefined(_))));
    }

    #[test]
    fn train_mode_is_seeded() {
        let cfg = ModelConfig::new(6, 8, 12, 1, 2, 30, 10);
        let p = init_model(&cfg, 1).unwrap();
        let b = batch(&cfg, 3);
        let a = mlm_loss(&p, &b, Mode::Train { seed: 5 }).unwrap();
        let a2 = mlm_loss(&p, &b, Mode::Train { seed: 5 }).unwrap();
        let c = mlm_loss(&p, &b, Mode::Train { seed: 6 }).unwrap();
        let e = mlm_loss(&p, &b, Mode::Eval).unwrap();
        assert_eq!(a, a2);
        assert_ne!(a, c);
        assert_ne!(a, e);
    }
}
