//! Manual backpropagation of the transducer loss through the joiner, both
//! recurrent cells and the embedding tables.

use rayon::prelude::*;

use super::params::{Matrix, ModelParams};
use super::task::Utterance;
use super::ModelError;
use crate::lattice::{logits_gradient, LogProbLattice, TargetSequence};

/// Global gradient-norm ceiling used by [`train_step`].
pub const GRAD_CLIP_NORM: f64 = 5.0;

/// Backpropagation through time for one `tanh` cell. `dstates[t]` holds the
/// gradient flowing into state `t` from outside the recurrence; the returned
/// vectors are the gradients with respect to each step's input.
fn backprop_cell(
    wx: &Matrix,
    wh: &Matrix,
    inputs: &[&[f64]],
    states: &[Vec<f64>],
    mut dstates: Vec<Vec<f64>>,
    dwx: &mut Matrix,
    dwh: &mut Matrix,
    db: &mut [f64],
) -> Vec<Vec<f64>> {
    let d = wx.rows;
    let mut dinputs = vec![vec![0.0; wx.cols]; inputs.len()];
    for t in (0..states.len()).rev() {
        let dpre: Vec<f64> = dstates[t]
            .iter()
            .zip(&states[t])
            .map(|(g, h)| g * (1.0 - h * h))
            .collect();
        dwx.add_outer(&dpre, inputs[t]);
        for (b, g) in db.iter_mut().zip(&dpre) {
            *b += g;
        }
        wx.matvec_t_add(&dpre, &mut dinputs[t]);
        if t > 0 {
            dwh.add_outer(&dpre, &states[t - 1]);
            let mut carry = vec![0.0; d];
            wh.matvec_t_add(&dpre, &mut carry);
            for (a, c) in dstates[t - 1].iter_mut().zip(carry) {
                *a += c;
            }
        }
    }
    dinputs
}

/// Transducer loss of one utterance and its gradient for every parameter.
pub fn loss_and_gradient(
    params: &ModelParams,
    utterance: &Utterance,
) -> Result<(f64, ModelParams), ModelError> {
    let dims = params.dims;
    let d = dims.hidden;
    let vocab = dims.output_size();
    let target = &utterance.target_tokens;

    let enc = params.encode_trace(&utterance.source_frames)?;
    let pred = params.predictor_states(target)?;
    let frames = enc.states.len();
    let cols = pred.len();

    let enc_proj: Vec<Vec<f64>> = enc.states.iter().map(|h| params.project_encoder(h)).collect();
    let pred_proj: Vec<Vec<f64>> = pred.iter().map(|g| params.project_predictor(g)).collect();
    let mut hidden = Vec::with_capacity(frames * cols);
    let mut logits = Vec::with_capacity(frames * cols * vocab);
    for ep in &enc_proj {
        for pp in &pred_proj {
            let (z, l) = params.joint_hidden_logits(ep, pp);
            hidden.push(z);
            logits.extend(l);
        }
    }
    let lattice = LogProbLattice::from_logits(frames, target.len(), vocab, logits)?;
    let (loss, dlogits) = logits_gradient(&lattice, &TargetSequence::new(target.clone()))?;
    if !loss.is_finite() {
        return Err(ModelError::NonFiniteLoss(loss));
    }

    let mut grad = ModelParams::zeros(dims);
    let mut d_enc_proj = vec![vec![0.0; d]; frames];
    let mut d_pred_proj = vec![vec![0.0; d]; cols];
    for t in 0..frames {
        for u in 0..cols {
            let cell = t * cols + u;
            let dl = &dlogits[cell * vocab..(cell + 1) * vocab];
            let z = &hidden[cell];
            grad.out_w.add_outer(dl, z);
            for (b, g) in grad.out_b.iter_mut().zip(dl) {
                *b += g;
            }
            let mut dz = vec![0.0; d];
            params.out_w.matvec_t_add(dl, &mut dz);
            for k in 0..d {
                let da = dz[k] * (1.0 - z[k] * z[k]);
                d_enc_proj[t][k] += da;
                d_pred_proj[u][k] += da;
            }
        }
    }

    // joiner input projections
    let mut d_enc_states = vec![vec![0.0; d]; frames];
    for t in 0..frames {
        grad.join_we.add_outer(&d_enc_proj[t], &enc.states[t]);
        for (b, g) in grad.join_b.iter_mut().zip(&d_enc_proj[t]) {
            *b += g;
        }
        params.join_we.matvec_t_add(&d_enc_proj[t], &mut d_enc_states[t]);
    }
    let mut d_pred_states = vec![vec![0.0; d]; cols];
    for u in 0..cols {
        grad.join_wp.add_outer(&d_pred_proj[u], &pred[u]);
        params.join_wp.matvec_t_add(&d_pred_proj[u], &mut d_pred_states[u]);
    }

    // encoder recurrence and pooled embeddings
    let enc_inputs: Vec<&[f64]> = enc.inputs.iter().map(Vec::as_slice).collect();
    let d_pooled = backprop_cell(
        &params.enc_wx,
        &params.enc_wh,
        &enc_inputs,
        &enc.states,
        d_enc_states,
        &mut grad.enc_wx,
        &mut grad.enc_wh,
        &mut grad.enc_b,
    );
    let r = dims.time_reduction;
    for (group, dx) in utterance.source_frames.chunks_exact(r).zip(&d_pooled) {
        for &s in group {
            for (e, g) in grad.src_embed.row_mut(s).iter_mut().zip(dx) {
                *e += g / r as f64;
            }
        }
    }

    // predictor recurrence: input rows are [start, y_1, ..., y_U]
    let rows: Vec<usize> = std::iter::once(dims.blank_id())
        .chain(target.iter().copied())
        .collect();
    let pred_inputs: Vec<&[f64]> = rows.iter().map(|&row| params.tgt_embed.row(row)).collect();
    let d_embeds = backprop_cell(
        &params.pred_wx,
        &params.pred_wh,
        &pred_inputs,
        &pred,
        d_pred_states,
        &mut grad.pred_wx,
        &mut grad.pred_wh,
        &mut grad.pred_b,
    );
    for (&row, dx) in rows.iter().zip(&d_embeds) {
        for (e, g) in grad.tgt_embed.row_mut(row).iter_mut().zip(dx) {
            *e += g;
        }
    }

    Ok((loss, grad))
}

/// Mean loss and mean gradient over a batch. Per-utterance work runs in
/// parallel; the reduction is sequential in batch order.
pub fn batch_loss_and_gradient(
    params: &ModelParams,
    batch: &[Utterance],
) -> Result<(f64, ModelParams), ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let results: Vec<Result<(f64, ModelParams), ModelError>> = batch
        .par_iter()
        .map(|utt| loss_and_gradient(params, utt))
        .collect();
    let mut total_loss = 0.0;
    let mut grad = ModelParams::zeros(params.dims);
    for result in results {
        let (loss, g) = result?;
        total_loss += loss;
        grad.add_scaled(&g, 1.0);
    }
    let scale = 1.0 / batch.len() as f64;
    grad.scale(scale);
    Ok((total_loss * scale, grad))
}

/// One step of clipped gradient descent. Returns the batch mean loss
/// evaluated before the update.
pub fn train_step(
    params: &mut ModelParams,
    batch: &[Utterance],
    learning_rate: f64,
) -> Result<f64, ModelError> {
    train_step_clipped(params, batch, learning_rate, GRAD_CLIP_NORM)
}

pub fn train_step_clipped(
    params: &mut ModelParams,
    batch: &[Utterance],
    learning_rate: f64,
    clip_norm: f64,
) -> Result<f64, ModelError> {
    let (loss, mut grad) = batch_loss_and_gradient(params, batch)?;
    if !grad.all_finite() {
        return Err(ModelError::NonFiniteLoss(f64::NAN));
    }
    let norm = grad.l2_norm();
    if norm > clip_norm {
        grad.scale(clip_norm / norm);
    }
    if learning_rate != 0.0 {
        params.add_scaled(&grad, -learning_rate);
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::super::params::ModelDims;
    use super::*;
    use crate::lattice::loss;

    fn small_dims() -> ModelDims {
        ModelDims {
            src_vocab: 5,
            tgt_vocab: 4,
            hidden: 6,
            time_reduction: 2,
        }
    }

    fn utterance() -> Utterance {
        Utterance {
            source_frames: vec![0, 0, 3, 3, 1, 1, 4, 4, 2, 2],
            target_tokens: vec![2, 0, 3],
        }
    }

    fn model_loss(params: &ModelParams, utt: &Utterance) -> f64 {
        let lattice = params.lattice(&utt.source_frames, &utt.target_tokens).unwrap();
        loss(&lattice, &TargetSequence::new(utt.target_tokens.clone())).unwrap()
    }

    #[test]
    fn loss_matches_lattice_loss() {
        let p = ModelParams::init_scaled(small_dims(), 1, 0.5);
        let utt = utterance();
        let (l, _) = loss_and_gradient(&p, &utt).unwrap();
        assert!((l - model_loss(&p, &utt)).abs() < 1e-12);
    }

    #[test]
    fn every_tensor_matches_finite_differences() {
        let p = ModelParams::init_scaled(small_dims(), 2, 0.5);
        let utt = utterance();
        let (_, grad) = loss_and_gradient(&p, &utt).unwrap();
        let h = 1e-5;
        let mut offset = 0;
        for ((name, g), (_, t)) in grad.tensors().iter().zip(p.tensors().iter()) {
            // probe a few entries of every tensor
            for k in [0, t.len() / 2, t.len() - 1] {
                let idx = offset + k;
                let mut plus = p.clone();
                plus.set_flat(idx, p.get_flat(idx) + h);
                let mut minus = p.clone();
                minus.set_flat(idx, p.get_flat(idx) - h);
                let fd = (model_loss(&plus, &utt) - model_loss(&minus, &utt)) / (2.0 * h);
                let analytic = g[k];
                let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-6);
                assert!(rel < 1e-4, "{name}[{k}]: fd {fd} vs analytic {analytic}");
            }
            offset += t.len();
        }
    }

    #[test]
    fn zero_learning_rate_leaves_params_unchanged() {
        let mut p = ModelParams::init(small_dims(), 3);
        let before = p.clone();
        let utt = utterance();
        let l = train_step(&mut p, std::slice::from_ref(&utt), 0.0).unwrap();
        assert_eq!(p, before);
        assert!((l - model_loss(&before, &utt)).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let mut p = ModelParams::init(small_dims(), 3);
        assert!(matches!(train_step(&mut p, &[], 0.1), Err(ModelError::EmptyBatch)));
    }

    #[test]
    fn clipping_bounds_the_update() {
        let mut p = ModelParams::init_scaled(small_dims(), 4, 2.0);
        let before = p.clone();
        train_step_clipped(&mut p, &[utterance()], 1.0, 0.01).unwrap();
        let mut delta = p.clone();
        delta.add_scaled(&before, -1.0);
        assert!(delta.l2_norm() <= 0.01 + 1e-12);
    }
}
