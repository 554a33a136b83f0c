//! Corpus BLEU over token sequences and Average Lagging over emission
//! timelines.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::streaming::EmissionTimeline;

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("source duration must be positive, got {0}")]
    BadSourceDuration(f64),
    #[error("timeline has {times} emissions but target length is {target_len}")]
    LengthMismatch { times: usize, target_len: usize },
    #[error("emission times must be finite, non-negative and non-decreasing (token {0})")]
    BadTimeline(usize),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("{hypotheses} hypotheses but {references} references")]
    CorpusMismatch {
        hypotheses: usize,
        references: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub average_lagging_ms: f64,
    /// `d_i - (i-1)/lambda` for every token, including those past the cutoff.
    pub per_token_lags_ms: Vec<f64>,
    /// Number of tokens averaged (1-based index of the cutoff token).
    pub cutoff_index: usize,
}

/// Average Lagging in milliseconds.
///
/// With `n` tokens and source duration `D`, the ideal emission time of token
/// `i` (1-based) is `(i-1) * D / n`. The average runs over the tokens up to
/// and including the first one emitted at or after `D` (all tokens if none
/// is). Returns `Ok(None)` when there are no tokens.
pub fn average_lagging(
    timeline: &EmissionTimeline,
    target_len: usize,
) -> Result<Option<LatencyReport>, MetricsError> {
    let duration = timeline.source_duration_ms;
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(MetricsError::BadSourceDuration(duration));
    }
    let times = &timeline.emission_times_ms;
    if times.len() != target_len {
        return Err(MetricsError::LengthMismatch {
            times: times.len(),
            target_len,
        });
    }
    let mut prev = 0.0;
    for (i, &d) in times.iter().enumerate() {
        if !(d.is_finite() && d >= prev) {
            return Err(MetricsError::BadTimeline(i));
        }
        prev = d;
    }
    if target_len == 0 {
        return Ok(None);
    }
    let step = duration / target_len as f64;
    let lags: Vec<f64> = times
        .iter()
        .enumerate()
        .map(|(i, &d)| d - i as f64 * step)
        .collect();
    let cutoff = times
        .iter()
        .position(|&d| d >= duration)
        .map_or(target_len, |i| i + 1);
    let average = lags[..cutoff].iter().sum::<f64>() / cutoff as f64;
    Ok(Some(LatencyReport {
        average_lagging_ms: average,
        per_token_lags_ms: lags,
        cutoff_index: cutoff,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    /// Score in `[0, 100]`.
    pub bleu: f64,
    /// Clipped precisions for orders 1 to 4, as fractions.
    pub n_gram_precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
}

/// Sufficient statistics for corpus BLEU; they add across sentences.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BleuStats {
    pub matches: [u64; MAX_ORDER],
    pub totals: [u64; MAX_ORDER],
    pub hyp_len: u64,
    pub ref_len: u64,
}

impl BleuStats {
    pub fn for_sentence<T: Eq + Hash>(hypothesis: &[T], reference: &[T]) -> Self {
        let mut stats = Self {
            hyp_len: hypothesis.len() as u64,
            ref_len: reference.len() as u64,
            ..Self::default()
        };
        for n in 1..=MAX_ORDER {
            let ref_counts = ngram_counts(reference, n);
            let hyp_counts = ngram_counts(hypothesis, n);
            stats.totals[n - 1] = hypothesis.len().saturating_sub(n - 1) as u64;
            stats.matches[n - 1] = hyp_counts
                .iter()
                .map(|(gram, &c)| c.min(ref_counts.get(gram).copied().unwrap_or(0)))
                .sum();
        }
        stats
    }

    pub fn add(&mut self, other: &Self) {
        for n in 0..MAX_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    /// Unsmoothed BLEU-4 from pooled counts.
    pub fn report(&self) -> BleuReport {
        let mut precisions = [0.0; MAX_ORDER];
        for n in 0..MAX_ORDER {
            if self.totals[n] > 0 {
                precisions[n] = self.matches[n] as f64 / self.totals[n] as f64;
            }
        }
        let brevity_penalty = if self.hyp_len == 0 {
            0.0
        } else if self.hyp_len >= self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        };
        let bleu = if precisions.contains(&0.0) {
            0.0
        } else {
            let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
            (100.0 * brevity_penalty * log_mean.exp()).min(100.0)
        };
        BleuReport {
            bleu,
            n_gram_precisions: precisions,
            brevity_penalty,
        }
    }
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU-4 with one reference per hypothesis.
pub fn corpus_bleu<T: Eq + Hash>(
    hypotheses: &[Vec<T>],
    references: &[Vec<T>],
) -> Result<BleuReport, MetricsError> {
    if hypotheses.len() != references.len() {
        return Err(MetricsError::CorpusMismatch {
            hypotheses: hypotheses.len(),
            references: references.len(),
        });
    }
    if hypotheses.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let mut stats = BleuStats::default();
    for (h, r) in hypotheses.iter().zip(references) {
        stats.add(&BleuStats::for_sentence(h, r));
    }
    Ok(stats.report())
}
