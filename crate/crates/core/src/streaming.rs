//! Block-processing availability schedule for a chunked streaming encoder.
//!
//! Encoder frames are grouped into segments of `segment_frames`. A segment's
//! outputs become available once the audio covering the whole segment plus
//! `right_context_frames` of lookahead has arrived. Audio that does not fill
//! a segment plus its context yields nothing until then.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StreamError {
    #[error("invalid stream configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("token {token} was emitted on frame {frame}, but the utterance has {num_frames} encoder frames")]
    FrameOutOfRange {
        token: usize,
        frame: usize,
        num_frames: usize,
    },
    #[error("emission frames must be non-decreasing (token {token})")]
    Unordered { token: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamConfig {
    /// Feature hop in milliseconds.
    pub hop_ms: f64,
    /// Feature frames per encoder frame.
    pub time_reduction: usize,
    /// Encoder frames per segment.
    pub segment_frames: usize,
    /// Lookahead encoder frames required before a segment is released.
    pub right_context_frames: usize,
    /// Constant compute delay added to every emission.
    #[serde(default)]
    pub compute_delay_ms: f64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            hop_ms: 10.0,
            time_reduction: 4,
            segment_frames: 20,
            right_context_frames: 4,
            compute_delay_ms: 0.0,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<(), StreamError> {
        if !(self.hop_ms > 0.0 && self.hop_ms.is_finite()) {
            return Err(StreamError::InvalidConfig("hop_ms must be positive"));
        }
        if self.time_reduction == 0 {
            return Err(StreamError::InvalidConfig("time_reduction must be positive"));
        }
        if self.segment_frames == 0 {
            return Err(StreamError::InvalidConfig("segment_frames must be positive"));
        }
        if self.right_context_frames == 0 {
            return Err(StreamError::InvalidConfig(
                "right_context_frames must be positive",
            ));
        }
        if !(self.compute_delay_ms >= 0.0 && self.compute_delay_ms.is_finite()) {
            return Err(StreamError::InvalidConfig(
                "compute_delay_ms must be finite and non-negative",
            ));
        }
        Ok(())
    }

    /// Duration of one encoder frame.
    pub fn encoder_frame_ms(&self) -> f64 {
        self.hop_ms * self.time_reduction as f64
    }

    pub fn segment_span_ms(&self) -> f64 {
        self.segment_frames as f64 * self.encoder_frame_ms()
    }

    pub fn right_context_span_ms(&self) -> f64 {
        self.right_context_frames as f64 * self.encoder_frame_ms()
    }
}

/// One past the last encoder frame of the segment containing `frame`.
pub fn segment_end(config: &StreamConfig, frame: usize) -> usize {
    (frame / config.segment_frames + 1) * config.segment_frames
}

/// Wall-clock time (ms from stream start) at which encoder frame `frame`
/// becomes available.
pub fn encoder_frame_ready_time(config: &StreamConfig, frame: usize) -> f64 {
    (segment_end(config, frame) + config.right_context_frames) as f64 * config.encoder_frame_ms()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionTimeline {
    pub emission_times_ms: Vec<f64>,
    pub source_duration_ms: f64,
}

/// Maps the frame on which each token was emitted to its wall-clock emission
/// time.
pub fn emission_timeline(
    token_frames: &[usize],
    config: &StreamConfig,
    num_encoder_frames: usize,
) -> Result<EmissionTimeline, StreamError> {
    config.validate()?;
    let mut times = Vec::with_capacity(token_frames.len());
    let mut prev = 0;
    for (token, &frame) in token_frames.iter().enumerate() {
        if frame >= num_encoder_frames {
            return Err(StreamError::FrameOutOfRange {
                token,
                frame,
                num_frames: num_encoder_frames,
            });
        }
        if frame < prev {
            return Err(StreamError::Unordered { token });
        }
        prev = frame;
        times.push(encoder_frame_ready_time(config, frame) + config.compute_delay_ms);
    }
    Ok(EmissionTimeline {
        emission_times_ms: times,
        source_duration_ms: num_encoder_frames as f64 * config.encoder_frame_ms(),
    })
}
