//! Greedy and beam-search decoding for transducer models.
//!
//! Both decoders walk the encoder frames left to right. At each frame the
//! joiner is queried with the current predictor state: a blank moves on to
//! the next frame, any other symbol is emitted and fed back into the
//! predictor. At most `max_labels_per_frame` labels are emitted per frame;
//! when the cap is reached the hypothesis is forced onto the next frame and
//! the frame index is recorded in `capped_frames`.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::logmath::{argmax, log_add_exp};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecodeError {
    #[error("encoder produced no frames")]
    NoFrames,
    #[error("invalid beam configuration: {0}")]
    InvalidConfig(&'static str),
}

/// A transducer as seen by the decoders: an encoder frame type, a predictor
/// state, and a joiner producing `V` log-probabilities with blank at `V - 1`.
pub trait TransducerModel {
    type Frame;
    type State: Clone;

    /// Output vocabulary size including blank.
    fn vocab_size(&self) -> usize;

    fn blank_id(&self) -> usize {
        self.vocab_size() - 1
    }

    /// Predictor state for the empty history.
    fn initial_state(&self) -> Self::State;

    fn advance(&self, state: &Self::State, token: usize) -> Self::State;

    /// Normalized log-probabilities over the `V` output symbols.
    fn joint(&self, frame: &Self::Frame, state: &Self::State) -> Vec<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamConfig {
    pub beam_size: usize,
    /// Exponent of the length normalization applied at final ranking.
    pub length_penalty_alpha: f64,
    pub max_labels_per_frame: usize,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            beam_size: 10,
            length_penalty_alpha: 0.5,
            max_labels_per_frame: 8,
        }
    }
}

impl BeamConfig {
    pub fn validate(&self) -> Result<(), DecodeError> {
        if self.beam_size == 0 {
            return Err(DecodeError::InvalidConfig("beam_size must be at least 1"));
        }
        if self.max_labels_per_frame == 0 {
            return Err(DecodeError::InvalidConfig(
                "max_labels_per_frame must be at least 1",
            ));
        }
        if !(self.length_penalty_alpha >= 0.0 && self.length_penalty_alpha.is_finite()) {
            return Err(DecodeError::InvalidConfig(
                "length_penalty_alpha must be finite and non-negative",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis<S> {
    pub tokens: Vec<usize>,
    /// Frame on which each token was emitted (dominant branch after merges).
    pub token_frames: Vec<usize>,
    pub log_prob: f64,
    pub predictor_state: S,
    /// Next frame to consume; equals `T` for finished hypotheses.
    pub frame_index: usize,
    pub capped_frames: Vec<usize>,
}

impl<S> Hypothesis<S> {
    /// `log_prob / max(1, len)^alpha`.
    pub fn normalized_score(&self, alpha: f64) -> f64 {
        let len = self.tokens.len().max(1) as f64;
        self.log_prob / len.powf(alpha)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreedyOutput {
    pub tokens: Vec<usize>,
    pub token_frames: Vec<usize>,
    pub log_prob: f64,
    pub capped_frames: Vec<usize>,
}

/// Argmax decoding. Ties go to the lower symbol index.
pub fn greedy_decode<M: TransducerModel>(
    model: &M,
    frames: &[M::Frame],
    max_labels_per_frame: usize,
) -> Result<GreedyOutput, DecodeError> {
    if frames.is_empty() {
        return Err(DecodeError::NoFrames);
    }
    if max_labels_per_frame == 0 {
        return Err(DecodeError::InvalidConfig(
            "max_labels_per_frame must be at least 1",
        ));
    }
    let blank = model.blank_id();
    let mut state = model.initial_state();
    let mut out = GreedyOutput {
        tokens: Vec::new(),
        token_frames: Vec::new(),
        log_prob: 0.0,
        capped_frames: Vec::new(),
    };
    for (t, frame) in frames.iter().enumerate() {
        let mut emitted = 0;
        loop {
            let logp = model.joint(frame, &state);
            if emitted == max_labels_per_frame {
                out.capped_frames.push(t);
                out.log_prob += logp[blank];
                break;
            }
            let symbol = argmax(&logp);
            out.log_prob += logp[symbol];
            if symbol == blank {
                break;
            }
            out.tokens.push(symbol);
            out.token_frames.push(t);
            state = model.advance(&state, symbol);
            emitted += 1;
        }
    }
    Ok(out)
}

/// Where a pool entry comes from during one expansion step.
#[derive(Debug, Clone, Copy)]
enum Origin {
    /// Already moved to the next frame (index into `finished`).
    Finished(usize),
    /// Extension of an active hypothesis by `symbol`.
    Extend { parent: usize, symbol: usize },
}

#[derive(Debug, Clone)]
struct Candidate {
    origin: Origin,
    symbol: usize,
    score: f64,
    /// Best-scoring branch that was merged into a finished entry.
    merged_branch: Option<(usize, f64)>,
}

/// Frame-synchronous transducer beam search.
///
/// Within a frame, hypotheses that already emitted their blank compete with
/// label extensions for the `beam_size` slots; expansion stops when no
/// surviving hypothesis is still on the frame. Blank extensions whose token
/// sequence matches a hypothesis already past the frame are merged with
/// `logaddexp`. Pruning uses raw log-probabilities; the length penalty only
/// enters the final ranking.
pub fn beam_decode<M: TransducerModel>(
    model: &M,
    frames: &[M::Frame],
    config: &BeamConfig,
) -> Result<Vec<Hypothesis<M::State>>, DecodeError> {
    config.validate()?;
    if frames.is_empty() {
        return Err(DecodeError::NoFrames);
    }
    let blank = model.blank_id();
    let vocab = model.vocab_size();
    let cap = config.max_labels_per_frame;

    let mut hyps = vec![Hypothesis {
        tokens: Vec::new(),
        token_frames: Vec::new(),
        log_prob: 0.0,
        predictor_state: model.initial_state(),
        frame_index: 0,
        capped_frames: Vec::new(),
    }];

    for (t, frame) in frames.iter().enumerate() {
        let mut active = std::mem::take(&mut hyps);
        let mut finished: Vec<Hypothesis<M::State>> = Vec::new();

        for step in 0..=cap {
            if active.is_empty() {
                break;
            }
            let mut pool: Vec<Candidate> = finished
                .iter()
                .enumerate()
                .map(|(i, h)| Candidate {
                    origin: Origin::Finished(i),
                    symbol: blank,
                    score: h.log_prob,
                    merged_branch: None,
                })
                .collect();
            let mut by_tokens: HashMap<&[usize], usize> = finished
                .iter()
                .enumerate()
                .map(|(i, h)| (h.tokens.as_slice(), i))
                .collect();

            for (parent, hyp) in active.iter().enumerate() {
                let logp = model.joint(frame, &hyp.predictor_state);
                let blank_score = hyp.log_prob + logp[blank];
                match by_tokens.get(hyp.tokens.as_slice()) {
                    Some(&slot) => {
                        let entry = &mut pool[slot];
                        entry.score = log_add_exp(entry.score, blank_score);
                        let best_merged = entry.merged_branch.map_or(f64::NEG_INFINITY, |b| b.1);
                        if blank_score > best_merged {
                            entry.merged_branch = Some((parent, blank_score));
                        }
                    }
                    None => {
                        by_tokens.insert(hyp.tokens.as_slice(), pool.len());
                        pool.push(Candidate {
                            origin: Origin::Extend {
                                parent,
                                symbol: blank,
                            },
                            symbol: blank,
                            score: blank_score,
                            merged_branch: None,
                        });
                    }
                }
                if step < cap {
                    for symbol in (0..vocab).filter(|&s| s != blank) {
                        pool.push(Candidate {
                            origin: Origin::Extend { parent, symbol },
                            symbol,
                            score: hyp.log_prob + logp[symbol],
                            merged_branch: None,
                        });
                    }
                }
            }

            let tokens_of = |c: &Candidate| -> Vec<usize> {
                match c.origin {
                    Origin::Finished(i) => finished[i].tokens.clone(),
                    Origin::Extend { parent, symbol } => {
                        let mut v = active[parent].tokens.clone();
                        if symbol != blank {
                            v.push(symbol);
                        }
                        v
                    }
                }
            };
            pool.sort_by(|a, b| {
                b.score
                    .partial_cmp(&a.score)
                    .unwrap_or(Ordering::Equal)
                    .then(a.symbol.cmp(&b.symbol))
                    .then_with(|| tokens_of(a).cmp(&tokens_of(b)))
            });
            pool.truncate(config.beam_size);

            let mut next_finished = Vec::new();
            let mut next_active = Vec::new();
            for cand in pool {
                match cand.origin {
                    Origin::Finished(i) => {
                        let mut h = finished[i].clone();
                        if let Some((parent, branch_score)) = cand.merged_branch {
                            if branch_score > h.log_prob {
                                h.token_frames = active[parent].token_frames.clone();
                                h.capped_frames = active[parent].capped_frames.clone();
                                if step == cap {
                                    h.capped_frames.push(t);
                                }
                            }
                        }
                        h.log_prob = cand.score;
                        next_finished.push(h);
                    }
                    Origin::Extend { parent, symbol } if symbol == blank => {
                        let src = &active[parent];
                        let mut capped_frames = src.capped_frames.clone();
                        if step == cap {
                            capped_frames.push(t);
                        }
                        next_finished.push(Hypothesis {
                            tokens: src.tokens.clone(),
                            token_frames: src.token_frames.clone(),
                            log_prob: cand.score,
                            predictor_state: src.predictor_state.clone(),
                            frame_index: t + 1,
                            capped_frames,
                        });
                    }
                    Origin::Extend { parent, symbol } => {
                        let src = &active[parent];
                        let mut tokens = src.tokens.clone();
                        tokens.push(symbol);
                        let mut token_frames = src.token_frames.clone();
                        token_frames.push(t);
                        next_active.push(Hypothesis {
                            tokens,
                            token_frames,
                            log_prob: cand.score,
                            predictor_state: model.advance(&src.predictor_state, symbol),
                            frame_index: t,
                            capped_frames: src.capped_frames.clone(),
                        });
                    }
                }
            }
            finished = next_finished;
            active = next_active;
        }
        hyps = finished;
    }

    rank_hypotheses(&mut hyps, config.length_penalty_alpha);
    hyps.truncate(config.beam_size);
    Ok(hyps)
}

/// Sorts by normalized score, best first. Equal scores fall back to the
/// lexicographically smaller token sequence, then the shorter one.
pub fn rank_hypotheses<S>(hyps: &mut [Hypothesis<S>], alpha: f64) {
    hyps.sort_by(|a, b| {
        b.normalized_score(alpha)
            .partial_cmp(&a.normalized_score(alpha))
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.tokens.cmp(&b.tokens))
            .then(a.tokens.len().cmp(&b.tokens.len()))
    });
}
