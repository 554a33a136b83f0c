//! End-to-end streaming simulation: decode, schedule emissions, relay the
//! semantic tokens to acoustic frames, and score latency and quality.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{relay_stream, CodecError, RelayConfig, SemanticStream};
use crate::decoder::{beam_decode, greedy_decode, BeamConfig, DecodeError};
use crate::metrics::{average_lagging, BleuReport, BleuStats, LatencyReport, MetricsError};
use crate::streaming::{emission_timeline, EmissionTimeline, StreamConfig, StreamError};
use crate::toymodel::{ModelError, ModelParams, Utterance};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("model time reduction {model} differs from stream time reduction {stream}")]
    ReductionMismatch { model: usize, stream: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub stream: StreamConfig,
    pub relay: RelayConfig,
    pub beam: BeamConfig,
    /// Decode greedily instead of with the beam.
    #[serde(default)]
    pub greedy: bool,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.stream.validate()?;
        self.relay.validate()?;
        self.beam.validate()?;
        Ok(())
    }
}

/// Latency of one decoded utterance at both granularities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyPair {
    pub semantic: Option<LatencyReport>,
    pub acoustic: Option<LatencyReport>,
}

/// Semantic-token AL from the emission schedule, and acoustic AL from the
/// relay output, both against the same source duration.
///
/// Acoustic availability is scored on the semantic token grid: token `i` is
/// delivered once the last of its `ratio` acoustic frames is out. Scoring the
/// frames on their own three-times-finer grid would credit the relay with
/// earlier ideal times than the tokens it waits for.
pub fn measure_latency(
    tokens: &[usize],
    token_frames: &[usize],
    num_encoder_frames: usize,
    stream: &StreamConfig,
    relay: &RelayConfig,
) -> Result<LatencyPair, PipelineError> {
    let timeline = emission_timeline(token_frames, stream, num_encoder_frames)?;
    let semantic = average_lagging(&timeline, tokens.len())?;
    let ids = tokens
        .iter()
        .map(|&t| u32::try_from(t).unwrap_or(u32::MAX))
        .collect();
    let stream_tokens = SemanticStream::new(ids, stream.encoder_frame_ms())?;
    let relayed = relay_stream(&stream_tokens, relay, &timeline.emission_times_ms)?;
    let delivered = EmissionTimeline {
        emission_times_ms: relayed
            .available_ms
            .chunks(relay.ratio)
            .map(|frames| frames[frames.len() - 1])
            .collect(),
        source_duration_ms: timeline.source_duration_ms,
    };
    let acoustic = average_lagging(&delivered, tokens.len())?;
    Ok(LatencyPair { semantic, acoustic })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceReport {
    pub index: usize,
    pub hypothesis: Vec<usize>,
    pub semantic_al_ms: Option<f64>,
    pub acoustic_al_ms: Option<f64>,
    /// This utterance's share of the corpus BLEU statistics. A failed
    /// utterance counts as an empty hypothesis.
    pub bleu_stats: BleuStats,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub utterances: usize,
    pub failures: usize,
    /// Mean over utterances with at least one emitted token; 0 if none.
    pub mean_semantic_al_ms: f64,
    pub mean_acoustic_al_ms: f64,
    pub bleu: BleuReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub utterances: Vec<UtteranceReport>,
    pub aggregate: Aggregates,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

impl Aggregates {
    /// Aggregates recomputed from per-utterance entries, in order.
    pub fn from_utterances(utterances: &[UtteranceReport]) -> Self {
        let mut stats = BleuStats::default();
        for u in utterances {
            stats.add(&u.bleu_stats);
        }
        Self {
            utterances: utterances.len(),
            failures: utterances.iter().filter(|u| u.error.is_some()).count(),
            mean_semantic_al_ms: mean(utterances.iter().filter_map(|u| u.semantic_al_ms)),
            mean_acoustic_al_ms: mean(utterances.iter().filter_map(|u| u.acoustic_al_ms)),
            bleu: stats.report(),
        }
    }
}

impl RunReport {
    pub fn from_utterances(utterances: Vec<UtteranceReport>) -> Self {
        let aggregate = Aggregates::from_utterances(&utterances);
        Self {
            utterances,
            aggregate,
        }
    }

    /// True when the stored aggregates equal a fresh recomputation.
    pub fn is_consistent(&self) -> bool {
        self.aggregate == Aggregates::from_utterances(&self.utterances)
    }
}

/// Decoded tokens with their emission frames and the encoder length.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedUtterance {
    pub tokens: Vec<usize>,
    pub token_frames: Vec<usize>,
    pub log_prob: f64,
    pub num_encoder_frames: usize,
}

pub fn decode_utterance(
    model: &ModelParams,
    source_frames: &[usize],
    config: &PipelineConfig,
) -> Result<DecodedUtterance, PipelineError> {
    let frames = model.encode(source_frames)?;
    let num_encoder_frames = frames.len();
    if config.greedy {
        let out = greedy_decode(model, &frames, config.beam.max_labels_per_frame)?;
        return Ok(DecodedUtterance {
            tokens: out.tokens,
            token_frames: out.token_frames,
            log_prob: out.log_prob,
            num_encoder_frames,
        });
    }
    let best = beam_decode(model, &frames, &config.beam)?
        .into_iter()
        .next()
        .ok_or(DecodeError::NoFrames)?;
    Ok(DecodedUtterance {
        tokens: best.tokens,
        token_frames: best.token_frames,
        log_prob: best.log_prob,
        num_encoder_frames,
    })
}

fn run_one(
    model: &ModelParams,
    index: usize,
    utterance: &Utterance,
    config: &PipelineConfig,
) -> UtteranceReport {
    let outcome = decode_utterance(model, &utterance.source_frames, config).and_then(|d| {
        let latency = measure_latency(
            &d.tokens,
            &d.token_frames,
            d.num_encoder_frames,
            &config.stream,
            &config.relay,
        )?;
        Ok((d.tokens, latency))
    });
    match outcome {
        Ok((hypothesis, latency)) => UtteranceReport {
            index,
            bleu_stats: BleuStats::for_sentence(&hypothesis, &utterance.target_tokens),
            hypothesis,
            semantic_al_ms: latency.semantic.map(|r| r.average_lagging_ms),
            acoustic_al_ms: latency.acoustic.map(|r| r.average_lagging_ms),
            error: None,
        },
        Err(e) => UtteranceReport {
            index,
            hypothesis: Vec::new(),
            semantic_al_ms: None,
            acoustic_al_ms: None,
            bleu_stats: BleuStats::for_sentence(&[], &utterance.target_tokens),
            error: Some(e.to_string()),
        },
    }
}

/// Runs every utterance through the streaming pipeline. Per-utterance
/// failures are recorded in the report; only an invalid configuration is an
/// error.
pub fn run_pipeline(
    model: &ModelParams,
    corpus: &[Utterance],
    config: &PipelineConfig,
) -> Result<RunReport, PipelineError> {
    config.validate()?;
    if model.dims.time_reduction != config.stream.time_reduction {
        return Err(PipelineError::ReductionMismatch {
            model: model.dims.time_reduction,
            stream: config.stream.time_reduction,
        });
    }
    let utterances = corpus
        .par_iter()
        .enumerate()
        .map(|(i, utt)| run_one(model, i, utt, config))
        .collect();
    Ok(RunReport::from_utterances(utterances))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toymodel::ModelDims;

    fn model() -> ModelParams {
        ModelParams::init_scaled(ModelDims::default(), 3, 0.5)
    }

    fn corpus() -> Vec<Utterance> {
        (0..6)
            .map(|k| Utterance {
                source_frames: (0..4 * (k + 2)).map(|i| (i / 4 + k) % 16).collect(),
                target_tokens: (0..k + 2).map(|i| (i * 3 + k) % 16).collect(),
            })
            .collect()
    }

    #[test]
    fn empty_corpus_gives_zero_aggregates() {
        let report = run_pipeline(&model(), &[], &PipelineConfig::default()).unwrap();
        assert!(report.utterances.is_empty());
        assert_eq!(report.aggregate.utterances, 0);
        assert_eq!(report.aggregate.failures, 0);
        assert_eq!(report.aggregate.mean_semantic_al_ms, 0.0);
        assert_eq!(report.aggregate.mean_acoustic_al_ms, 0.0);
        assert_eq!(report.aggregate.bleu.bleu, 0.0);
    }

    #[test]
    fn failures_are_recorded_not_fatal() {
        let mut data = corpus();
        data[2].source_frames = vec![1, 2];
        let report = run_pipeline(&model(), &data, &PipelineConfig::default()).unwrap();
        assert_eq!(report.aggregate.failures, 1);
        assert!(report.utterances[2].error.as_deref().unwrap().contains("fewer than"));
        assert!(report.is_consistent());
    }

    #[test]
    fn reduction_mismatch_is_rejected() {
        let config = PipelineConfig {
            stream: StreamConfig {
                time_reduction: 2,
                ..StreamConfig::default()
            },
            ..PipelineConfig::default()
        };
        assert!(matches!(
            run_pipeline(&model(), &corpus(), &config),
            Err(PipelineError::ReductionMismatch { .. })
        ));
    }

    #[test]
    fn report_is_reproducible_and_consistent() {
        let a = run_pipeline(&model(), &corpus(), &PipelineConfig::default()).unwrap();
        let b = run_pipeline(&model(), &corpus(), &PipelineConfig::default()).unwrap();
        assert_eq!(a, b);
        assert!(a.is_consistent());
        let mut tampered = a.clone();
        tampered.aggregate.mean_acoustic_al_ms += 1.0;
        assert!(!tampered.is_consistent());
    }

    #[test]
    fn relay_delay_shows_up_in_acoustic_latency() {
        // 30 tokens, one per frame over 30 frames: segment 1 at 960 ms,
        // segment 2 (frames 20..29) at 1760 ms
        let tokens: Vec<usize> = (0..30).map(|i| i % 16).collect();
        let frames: Vec<usize> = (0..30).collect();
        let stream = StreamConfig::default();
        let small = RelayConfig {
            inference_buffer: 10,
            ..RelayConfig::default()
        };
        let large = RelayConfig {
            inference_buffer: 30,
            ..RelayConfig::default()
        };
        let a = measure_latency(&tokens, &frames, 30, &stream, &small).unwrap();
        let b = measure_latency(&tokens, &frames, 30, &stream, &large).unwrap();
        // buffer 10 splits at segment boundaries, so it adds nothing
        assert_eq!(a.semantic, a.acoustic);
        let sem = a.semantic.unwrap();
        // source is 1200 ms, so the first late token is the first one at 1760 ms
        assert_eq!(sem.cutoff_index, 21);
        let ac = b.acoustic.unwrap();
        // every token waits for the last: the first token is already late
        assert_eq!(ac.cutoff_index, 1);
        assert_eq!(ac.average_lagging_ms, 1760.0);
        assert!(ac.average_lagging_ms > sem.average_lagging_ms);
    }

    #[test]
    fn latency_of_a_single_offline_token() {
        // one token on the last of 5 frames; everything is ready at 960 ms
        let lat = measure_latency(&[7], &[4], 5, &StreamConfig::default(), &RelayConfig::default())
            .unwrap();
        assert_eq!(lat.semantic.unwrap().average_lagging_ms, 960.0);
        assert_eq!(lat.acoustic.unwrap().average_lagging_ms, 960.0);
        let none = measure_latency(&[], &[], 5, &StreamConfig::default(), &RelayConfig::default())
            .unwrap();
        assert!(none.semantic.is_none() && none.acoustic.is_none());
    }
}
