//! Exact RNN-Transducer loss over a dense `T x (U+1) x V` log-probability lattice.
//!
//! Path convention: a blank at `(t, u)` advances to `(t+1, u)`, the label
//! `target[u]` at `(t, u)` advances to `(t, u+1)`, and every complete
//! alignment ends with the blank emitted at `(T-1, U)`. The blank symbol is
//! always the last vocabulary entry, `V - 1`.
//!
//! Everything is computed in the natural-log domain in `f64`. The
//! enumeration routines at the bottom of the file are a brute-force reference
//! used to check [`forward`] on small instances.

use thiserror::Error;

use crate::logmath::{log_add_exp, log_softmax_in_place, log_sum_exp};

/// Tolerance applied by [`LogProbLattice::new`] to `logsumexp` of every slice.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;

/// Largest `T + U` accepted by [`enumerate_alignments`].
pub const MAX_ENUMERATION_MOVES: usize = 14;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LatticeError {
    #[error("lattice must have at least one frame")]
    NoFrames,
    #[error("vocabulary must contain at least the blank symbol")]
    EmptyVocabulary,
    #[error("expected {expected} lattice values, got {actual}")]
    Shape { expected: usize, actual: usize },
    #[error("non-finite lattice value at (t={t}, u={u}, v={v})")]
    NonFinite { t: usize, u: usize, v: usize },
    #[error("slice (t={t}, u={u}) is not normalized: logsumexp = {log_norm}")]
    NotNormalized { t: usize, u: usize, log_norm: f64 },
    #[error("target has {target} tokens but the lattice was built for {lattice}")]
    TargetLength { target: usize, lattice: usize },
    #[error("target token {token} at position {position} is blank or outside the vocabulary")]
    InvalidToken { position: usize, token: usize },
    #[error("enumeration needs T >= 1 and T + U <= {MAX_ENUMERATION_MOVES}, got T={frames}, U={labels}")]
    EnumerationGuard { frames: usize, labels: usize },
}

/// Joint log-probabilities `values[t][u][v]`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LogProbLattice {
    num_frames: usize,
    target_len: usize,
    vocab_size: usize,
    values: Vec<f64>,
}

impl LogProbLattice {
    /// Builds a lattice of normalized log-probabilities.
    pub fn new(
        num_frames: usize,
        target_len: usize,
        vocab_size: usize,
        values: Vec<f64>,
    ) -> Result<Self, LatticeError> {
        let lattice = Self::from_scores(num_frames, target_len, vocab_size, values)?;
        for t in 0..num_frames {
            for u in 0..=target_len {
                let log_norm = log_sum_exp(lattice.slice(t, u));
                if log_norm.abs() > NORMALIZATION_TOLERANCE {
                    return Err(LatticeError::NotNormalized { t, u, log_norm });
                }
            }
        }
        Ok(lattice)
    }

    /// Builds a lattice of arbitrary finite log-scores without checking that
    /// each slice is normalized. The loss is then `-ln` of the summed path
    /// weights, which is what finite-difference checks perturb.
    pub fn from_scores(
        num_frames: usize,
        target_len: usize,
        vocab_size: usize,
        values: Vec<f64>,
    ) -> Result<Self, LatticeError> {
        if num_frames == 0 {
            return Err(LatticeError::NoFrames);
        }
        if vocab_size == 0 {
            return Err(LatticeError::EmptyVocabulary);
        }
        let expected = num_frames * (target_len + 1) * vocab_size;
        if values.len() != expected {
            return Err(LatticeError::Shape {
                expected,
                actual: values.len(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let v = pos % vocab_size;
            let cell = pos / vocab_size;
            return Err(LatticeError::NonFinite {
                t: cell / (target_len + 1),
                u: cell % (target_len + 1),
                v,
            });
        }
        Ok(Self {
            num_frames,
            target_len,
            vocab_size,
            values,
        })
    }

    /// Applies log-softmax to every `(t, u)` slice of raw joiner logits.
    pub fn from_logits(
        num_frames: usize,
        target_len: usize,
        vocab_size: usize,
        mut logits: Vec<f64>,
    ) -> Result<Self, LatticeError> {
        if vocab_size > 0 {
            for slice in logits.chunks_mut(vocab_size) {
                log_softmax_in_place(slice);
            }
        }
        Self::from_scores(num_frames, target_len, vocab_size, logits)
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn target_len(&self) -> usize {
        self.target_len
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn blank_id(&self) -> usize {
        self.vocab_size - 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn index(&self, t: usize, u: usize, v: usize) -> usize {
        (t * (self.target_len + 1) + u) * self.vocab_size + v
    }

    #[inline]
    pub fn get(&self, t: usize, u: usize, v: usize) -> f64 {
        self.values[self.index(t, u, v)]
    }

    #[inline]
    pub fn blank(&self, t: usize, u: usize) -> f64 {
        self.get(t, u, self.vocab_size - 1)
    }

    /// The `V` scores at `(t, u)`.
    pub fn slice(&self, t: usize, u: usize) -> &[f64] {
        let start = self.index(t, u, 0);
        &self.values[start..start + self.vocab_size]
    }

    /// Copy with one entry replaced; used by perturbation tests.
    pub fn with_value(&self, t: usize, u: usize, v: usize, value: f64) -> Self {
        let mut out = self.clone();
        let idx = out.index(t, u, v);
        out.values[idx] = value;
        out
    }
}

/// Non-blank target tokens `s_1..s_U`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TargetSequence(Vec<usize>);

impl TargetSequence {
    pub fn new(tokens: Vec<usize>) -> Self {
        Self(tokens)
    }

    pub fn tokens(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn check_against(&self, lattice: &LogProbLattice) -> Result<(), LatticeError> {
        if self.0.len() != lattice.target_len {
            return Err(LatticeError::TargetLength {
                target: self.0.len(),
                lattice: lattice.target_len,
            });
        }
        let blank = lattice.blank_id();
        for (position, &token) in self.0.iter().enumerate() {
            if token >= blank {
                return Err(LatticeError::InvalidToken { position, token });
            }
        }
        Ok(())
    }
}

impl From<Vec<usize>> for TargetSequence {
    fn from(tokens: Vec<usize>) -> Self {
        Self(tokens)
    }
}

/// A `T x (U+1)` table of log-domain path sums.
#[derive(Debug, Clone, PartialEq)]
pub struct PathTable {
    num_frames: usize,
    columns: usize,
    data: Vec<f64>,
}

impl PathTable {
    fn new(num_frames: usize, columns: usize) -> Self {
        Self {
            num_frames,
            columns,
            data: vec![f64::NEG_INFINITY; num_frames * columns],
        }
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    /// `U + 1`.
    pub fn columns(&self) -> usize {
        self.columns
    }

    #[inline]
    pub fn get(&self, t: usize, u: usize) -> f64 {
        self.data[t * self.columns + u]
    }

    #[inline]
    fn set(&mut self, t: usize, u: usize, value: f64) {
        self.data[t * self.columns + u] = value;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub log_prob: f64,
    pub alpha: PathTable,
}

/// Forward variables `alpha(t, u)` and the total log-likelihood of `target`.
pub fn forward(
    lattice: &LogProbLattice,
    target: &TargetSequence,
) -> Result<ForwardOutput, LatticeError> {
    target.check_against(lattice)?;
    let frames = lattice.num_frames;
    let labels = lattice.target_len;
    let tokens = target.tokens();
    let mut alpha = PathTable::new(frames, labels + 1);
    alpha.set(0, 0, 0.0);
    for t in 0..frames {
        for u in 0..=labels {
            if t == 0 && u == 0 {
                continue;
            }
            let mut acc = f64::NEG_INFINITY;
            if t > 0 {
                acc = alpha.get(t - 1, u) + lattice.blank(t - 1, u);
            }
            if u > 0 {
                let via_label = alpha.get(t, u - 1) + lattice.get(t, u - 1, tokens[u - 1]);
                acc = log_add_exp(acc, via_label);
            }
            alpha.set(t, u, acc);
        }
    }
    let log_prob = alpha.get(frames - 1, labels) + lattice.blank(frames - 1, labels);
    Ok(ForwardOutput { log_prob, alpha })
}

/// Backward variables `beta(t, u)`: log-mass of all completions from `(t, u)`,
/// including the terminal blank. `beta(0, 0)` equals the forward log-prob.
pub fn backward(
    lattice: &LogProbLattice,
    target: &TargetSequence,
) -> Result<PathTable, LatticeError> {
    target.check_against(lattice)?;
    let frames = lattice.num_frames;
    let labels = lattice.target_len;
    let tokens = target.tokens();
    let mut beta = PathTable::new(frames, labels + 1);
    beta.set(frames - 1, labels, lattice.blank(frames - 1, labels));
    for t in (0..frames).rev() {
        for u in (0..=labels).rev() {
            if t == frames - 1 && u == labels {
                continue;
            }
            let mut acc = f64::NEG_INFINITY;
            if t + 1 < frames {
                acc = lattice.blank(t, u) + beta.get(t + 1, u);
            }
            if u < labels {
                let via_label = lattice.get(t, u, tokens[u]) + beta.get(t, u + 1);
                acc = log_add_exp(acc, via_label);
            }
            beta.set(t, u, acc);
        }
    }
    Ok(beta)
}

/// `-ln P(target | lattice)`.
pub fn loss(lattice: &LogProbLattice, target: &TargetSequence) -> Result<f64, LatticeError> {
    Ok(-forward(lattice, target)?.log_prob)
}

/// Loss together with `dL/dvalues`, treating every lattice entry as an
/// independent variable.
///
/// Only the blank and the next target label at each cell can carry a
/// nonzero entry; it is minus the posterior probability that an alignment
/// uses that transition.
pub fn loss_and_gradient(
    lattice: &LogProbLattice,
    target: &TargetSequence,
) -> Result<(f64, Vec<f64>), LatticeError> {
    let fwd = forward(lattice, target)?;
    let beta = backward(lattice, target)?;
    let log_prob = fwd.log_prob;
    let alpha = &fwd.alpha;
    let frames = lattice.num_frames;
    let labels = lattice.target_len;
    let blank = lattice.blank_id();
    let tokens = target.tokens();
    let mut grad = vec![0.0; lattice.values.len()];
    for t in 0..frames {
        for u in 0..=labels {
            let a = alpha.get(t, u);
            if t + 1 < frames {
                let flow = a + lattice.blank(t, u) + beta.get(t + 1, u) - log_prob;
                grad[lattice.index(t, u, blank)] = -flow.exp();
            } else if u == labels {
                let flow = a + lattice.blank(t, u) - log_prob;
                grad[lattice.index(t, u, blank)] = -flow.exp();
            }
            if u < labels {
                let v = tokens[u];
                let flow = a + lattice.get(t, u, v) + beta.get(t, u + 1) - log_prob;
                grad[lattice.index(t, u, v)] = -flow.exp();
            }
        }
    }
    Ok((-log_prob, grad))
}

/// `dL/dvalues`; see [`loss_and_gradient`].
pub fn gradient(
    lattice: &LogProbLattice,
    target: &TargetSequence,
) -> Result<Vec<f64>, LatticeError> {
    Ok(loss_and_gradient(lattice, target)?.1)
}

/// Loss and `dL/dlogits` for a lattice produced by
/// [`LogProbLattice::from_logits`]: `grad_values + occupancy(t,u) * p(t,u,v)`.
///
/// `lattice` must hold the log-softmax of the logits; the returned gradient is
/// with respect to the pre-softmax logits.
pub fn logits_gradient(
    lattice: &LogProbLattice,
    target: &TargetSequence,
) -> Result<(f64, Vec<f64>), LatticeError> {
    let (loss, mut grad) = loss_and_gradient(lattice, target)?;
    let vocab = lattice.vocab_size;
    for (cell, slice) in grad.chunks_mut(vocab).enumerate() {
        // every alignment entering a cell leaves it through one of its edges,
        // so the occupancy is minus the summed edge gradients
        let occupancy: f64 = -slice.iter().sum::<f64>();
        if occupancy == 0.0 {
            continue;
        }
        let logp = &lattice.values[cell * vocab..(cell + 1) * vocab];
        for (g, &lp) in slice.iter_mut().zip(logp) {
            *g += occupancy * lp.exp();
        }
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Move {
    Blank,
    Label,
}

/// One monotone path through the lattice.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Alignment {
    moves: Vec<Move>,
}

impl Alignment {
    pub fn moves(&self) -> &[Move] {
        &self.moves
    }

    pub fn num_blanks(&self) -> usize {
        self.moves.iter().filter(|m| **m == Move::Blank).count()
    }

    pub fn num_labels(&self) -> usize {
        self.moves.len() - self.num_blanks()
    }

    /// The `(t, u)` state at which each move is taken, starting from `(0, 0)`.
    pub fn states(&self) -> Vec<(usize, usize)> {
        let (mut t, mut u) = (0, 0);
        self.moves
            .iter()
            .map(|m| {
                let here = (t, u);
                match m {
                    Move::Blank => t += 1,
                    Move::Label => u += 1,
                }
                here
            })
            .collect()
    }

    /// Sum of the lattice scores along the path.
    pub fn log_prob(&self, lattice: &LogProbLattice, target: &TargetSequence) -> f64 {
        let blank = lattice.blank_id();
        self.states()
            .into_iter()
            .zip(&self.moves)
            .map(|((t, u), m)| match m {
                Move::Blank => lattice.get(t, u, blank),
                Move::Label => lattice.get(t, u, target.tokens()[u]),
            })
            .sum()
    }
}

/// All move sequences with `frames` blanks and `labels` labels that end in a
/// blank. There are `C(frames + labels - 1, labels)` of them.
pub fn enumerate_alignments(frames: usize, labels: usize) -> Result<Vec<Alignment>, LatticeError> {
    if frames == 0 || frames + labels > MAX_ENUMERATION_MOVES {
        return Err(LatticeError::EnumerationGuard { frames, labels });
    }
    let mut out = Vec::new();
    let mut prefix = Vec::with_capacity(frames + labels);
    extend_alignments(frames - 1, labels, &mut prefix, &mut out);
    Ok(out)
}

fn extend_alignments(
    blanks_left: usize,
    labels_left: usize,
    prefix: &mut Vec<Move>,
    out: &mut Vec<Alignment>,
) {
    if blanks_left == 0 && labels_left == 0 {
        let mut moves = prefix.clone();
        moves.push(Move::Blank);
        out.push(Alignment { moves });
        return;
    }
    if labels_left > 0 {
        prefix.push(Move::Label);
        extend_alignments(blanks_left, labels_left - 1, prefix, out);
        prefix.pop();
    }
    if blanks_left > 0 {
        prefix.push(Move::Blank);
        extend_alignments(blanks_left - 1, labels_left, prefix, out);
        prefix.pop();
    }
}

/// Reference marginal: `logsumexp` over every enumerated alignment.
pub fn brute_force_logprob(
    lattice: &LogProbLattice,
    target: &TargetSequence,
) -> Result<f64, LatticeError> {
    target.check_against(lattice)?;
    let alignments = enumerate_alignments(lattice.num_frames, lattice.target_len)?;
    let scores: Vec<f64> = alignments
        .iter()
        .map(|a| a.log_prob(lattice, target))
        .collect();
    Ok(log_sum_exp(&scores))
}
