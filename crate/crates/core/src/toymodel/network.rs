//! Forward pass of the toy transducer.
//!
//! * encoder: source symbol embeddings, mean-pooled over groups of
//!   `time_reduction` frames, then `h_t = tanh(Wx x_t + Wh h_{t-1} + b)`
//! * predictor: the same cell over target embeddings, primed with the
//!   start-of-sequence row so the empty history has its own state
//! * joiner: `log_softmax(Wo tanh(We e + Wp p + b_j) + b_o)`

use super::params::{Matrix, ModelParams};
use super::ModelError;
use crate::decoder::TransducerModel;
use crate::lattice::LogProbLattice;
use crate::logmath::log_softmax_in_place;

/// One step of `tanh(Wx x + Wh h + b)`.
pub(crate) fn cell_step(wx: &Matrix, wh: &Matrix, b: &[f64], x: &[f64], h: &[f64]) -> Vec<f64> {
    let mut pre = b.to_vec();
    wx.matvec_add(x, &mut pre);
    wh.matvec_add(h, &mut pre);
    for p in pre.iter_mut() {
        *p = p.tanh();
    }
    pre
}

/// Encoder intermediates kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct EncoderTrace {
    /// Pooled inputs, one per reduced step.
    pub inputs: Vec<Vec<f64>>,
    pub states: Vec<Vec<f64>>,
}

impl ModelParams {
    pub(crate) fn encode_trace(&self, source_frames: &[usize]) -> Result<EncoderTrace, ModelError> {
        let r = self.dims.time_reduction;
        if source_frames.len() < r {
            return Err(ModelError::SourceTooShort {
                frames: source_frames.len(),
                time_reduction: r,
            });
        }
        if let Some(&symbol) = source_frames.iter().find(|&&s| s >= self.dims.src_vocab) {
            return Err(ModelError::SourceSymbolOutOfRange(symbol));
        }
        let d = self.dims.hidden;
        let steps = source_frames.len() / r;
        let mut inputs = Vec::with_capacity(steps);
        let mut states: Vec<Vec<f64>> = Vec::with_capacity(steps);
        let zero = vec![0.0; d];
        for group in source_frames.chunks_exact(r) {
            let mut x = vec![0.0; d];
            for &s in group {
                for (xi, e) in x.iter_mut().zip(self.src_embed.row(s)) {
                    *xi += e;
                }
            }
            for xi in x.iter_mut() {
                *xi /= r as f64;
            }
            let prev = states.last().unwrap_or(&zero);
            let h = cell_step(&self.enc_wx, &self.enc_wh, &self.enc_b, &x, prev);
            inputs.push(x);
            states.push(h);
        }
        Ok(EncoderTrace { inputs, states })
    }

    /// Encoder states, one per `time_reduction` source frames (remainder
    /// frames are dropped).
    pub fn encode(&self, source_frames: &[usize]) -> Result<Vec<Vec<f64>>, ModelError> {
        Ok(self.encode_trace(source_frames)?.states)
    }

    /// Predictor state after the start symbol.
    pub fn start_state(&self) -> Vec<f64> {
        let zero = vec![0.0; self.dims.hidden];
        self.predictor_step(&zero, self.dims.blank_id())
    }

    pub(crate) fn predictor_step(&self, state: &[f64], input_row: usize) -> Vec<f64> {
        cell_step(
            &self.pred_wx,
            &self.pred_wh,
            &self.pred_b,
            self.tgt_embed.row(input_row),
            state,
        )
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<(), ModelError> {
        match tokens.iter().find(|&&t| t >= self.dims.tgt_vocab) {
            Some(&t) => Err(ModelError::TokenOutOfRange(t)),
            None => Ok(()),
        }
    }

    /// Predictor states after each prefix of `tokens`: `U + 1` vectors.
    pub fn predictor_states(&self, tokens: &[usize]) -> Result<Vec<Vec<f64>>, ModelError> {
        self.check_tokens(tokens)?;
        let mut states = Vec::with_capacity(tokens.len() + 1);
        states.push(self.start_state());
        for &t in tokens {
            let next = self.predictor_step(states.last().expect("non-empty"), t);
            states.push(next);
        }
        Ok(states)
    }

    /// Predictor state after the whole history.
    pub fn predict(&self, previous_tokens: &[usize]) -> Result<Vec<f64>, ModelError> {
        Ok(self
            .predictor_states(previous_tokens)?
            .pop()
            .expect("at least the start state"))
    }

    /// Raw logits and the joiner hidden layer.
    pub(crate) fn joint_hidden_logits(
        &self,
        enc_proj: &[f64],
        pred_proj: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let z: Vec<f64> = enc_proj
            .iter()
            .zip(pred_proj)
            .map(|(a, b)| (a + b).tanh())
            .collect();
        let mut logits = self.out_b.clone();
        self.out_w.matvec_add(&z, &mut logits);
        (z, logits)
    }

    /// `We e + b_j`
    pub(crate) fn project_encoder(&self, encoder_state: &[f64]) -> Vec<f64> {
        let mut p = self.join_b.clone();
        self.join_we.matvec_add(encoder_state, &mut p);
        p
    }

    /// `Wp p`
    pub(crate) fn project_predictor(&self, predictor_state: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.dims.hidden];
        self.join_wp.matvec_add(predictor_state, &mut p);
        p
    }

    /// Log-probabilities over the target vocabulary plus blank.
    pub fn joint(&self, encoder_state: &[f64], predictor_state: &[f64]) -> Vec<f64> {
        let (_, mut logits) = self.joint_hidden_logits(
            &self.project_encoder(encoder_state),
            &self.project_predictor(predictor_state),
        );
        log_softmax_in_place(&mut logits);
        logits
    }

    /// Full `T' x (U+1) x V` lattice for one utterance.
    pub fn lattice(&self, source_frames: &[usize], target: &[usize]) -> Result<LogProbLattice, ModelError> {
        let enc = self.encode(source_frames)?;
        let pred = self.predictor_states(target)?;
        let pred_proj: Vec<Vec<f64>> = pred.iter().map(|g| self.project_predictor(g)).collect();
        let mut logits = Vec::with_capacity(enc.len() * pred.len() * self.dims.output_size());
        for h in &enc {
            let enc_proj = self.project_encoder(h);
            for pp in &pred_proj {
                logits.extend(self.joint_hidden_logits(&enc_proj, pp).1);
            }
        }
        Ok(LogProbLattice::from_logits(
            enc.len(),
            target.len(),
            self.dims.output_size(),
            logits,
        )?)
    }
}

impl TransducerModel for ModelParams {
    type Frame = Vec<f64>;
    type State = Vec<f64>;

    fn vocab_size(&self) -> usize {
        self.dims.output_size()
    }

    fn initial_state(&self) -> Vec<f64> {
        self.start_state()
    }

    fn advance(&self, state: &Vec<f64>, token: usize) -> Vec<f64> {
        self.predictor_step(state, token)
    }

    fn joint(&self, frame: &Vec<f64>, state: &Vec<f64>) -> Vec<f64> {
        ModelParams::joint(self, frame, state)
    }
}

#[cfg(test)]
mod tests {
    use super::super::params::ModelDims;
    use super::*;
    use crate::logmath::log_sum_exp;

    fn dims() -> ModelDims {
        ModelDims {
            src_vocab: 6,
            tgt_vocab: 5,
            hidden: 8,
            time_reduction: 4,
        }
    }

    #[test]
    fn zero_weights_give_zero_states() {
        let p = ModelParams::zeros(dims());
        let enc = p.encode(&[1, 2, 3, 4, 5, 0, 1, 2]).unwrap();
        assert_eq!(enc.len(), 2);
        assert!(enc.iter().flatten().all(|&x| x == 0.0));
        assert!(p.predict(&[1, 2]).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn reduction_floors_the_length() {
        let p = ModelParams::init(dims(), 1);
        assert_eq!(p.encode(&vec![0; 40]).unwrap().len(), 10);
        assert_eq!(p.encode(&vec![0; 43]).unwrap().len(), 10);
        assert!(matches!(
            p.encode(&[0, 1, 2]),
            Err(ModelError::SourceTooShort { frames: 3, .. })
        ));
        assert!(matches!(
            p.encode(&[0, 1, 2, 6]),
            Err(ModelError::SourceSymbolOutOfRange(6))
        ));
    }

    #[test]
    fn encoder_is_causal() {
        let p = ModelParams::init_scaled(dims(), 2, 0.5);
        let a: Vec<usize> = (0..24).map(|i| i % 6).collect();
        let mut b = a.clone();
        // perturb the group feeding reduced step 3
        b[12] = 5;
        b[15] = 0;
        let ea = p.encode(&a).unwrap();
        let eb = p.encode(&b).unwrap();
        for t in 0..3 {
            assert_eq!(ea[t], eb[t]);
        }
        assert_ne!(ea[3], eb[3]);
    }

    #[test]
    fn predictor_history_matters() {
        let p = ModelParams::init(dims(), 3);
        assert_ne!(p.predict(&[0]).unwrap(), p.predict(&[1]).unwrap());
        assert_eq!(p.predict(&[]).unwrap(), p.predict(&[]).unwrap());
        assert_eq!(p.predict(&[]).unwrap(), p.start_state());
        assert!(matches!(p.predict(&[5]), Err(ModelError::TokenOutOfRange(5))));
    }

    #[test]
    fn joint_is_normalized() {
        let p = ModelParams::init_scaled(dims(), 4, 1.0);
        let e = p.encode(&[1, 1, 1, 1]).unwrap();
        let g = p.predict(&[2, 3]).unwrap();
        let lp = p.joint(&e[0], &g);
        assert_eq!(lp.len(), 6);
        assert!(log_sum_exp(&lp).abs() < 1e-6);
    }

    #[test]
    fn symmetric_output_layer_gives_uniform_distribution() {
        let mut p = ModelParams::init(dims(), 5);
        for x in p.out_w.data.iter_mut() {
            *x = 0.3;
        }
        p.out_b.iter_mut().for_each(|b| *b = -0.2);
        let e = p.encode(&[0, 1, 2, 3]).unwrap();
        let lp = p.joint(&e[0], &p.start_state());
        let uniform = -(6f64).ln();
        assert!(lp.iter().all(|&x| (x - uniform).abs() < 1e-12));
    }

    #[test]
    fn lattice_satisfies_invariants() {
        let p = ModelParams::init_scaled(dims(), 6, 0.7);
        let lattice = p.lattice(&[0, 0, 0, 0, 3, 3, 3, 3, 5, 5, 5, 5], &[1, 4]).unwrap();
        assert_eq!(lattice.num_frames(), 3);
        assert_eq!(lattice.target_len(), 2);
        assert_eq!(lattice.blank_id(), 5);
        // strict validation of normalization
        let rebuilt = LogProbLattice::new(3, 2, 6, lattice.values().to_vec());
        assert!(rebuilt.is_ok());
    }
}
