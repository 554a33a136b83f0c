//! Token-level acoustic relay: semantic tokens in, multi-layer acoustic codes
//! out.
//!
//! The acoustic model itself is replaced by a deterministic seeded mapping;
//! what is modelled faithfully is the scheduling contract around it. Each
//! semantic token yields `ratio` acoustic frames of `layers` codebook layers.
//! Chunks of `inference_buffer` semantic tokens are zero-padded up to the
//! fixed `training_buffer` length, and the frames that originate from padding
//! are dropped. Codes can be laid out in the delayed pattern where layer `k`
//! is shifted `k` steps later.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Size of the single semantic codebook.
pub const SEMANTIC_CODEBOOK_SIZE: u32 = 4096;

/// Marker for empty slots of a [`DelayedSequence`]. Never a valid code.
pub const PAD: u32 = u32::MAX;

/// Semantic token id used to fill short chunks.
pub const PAD_SEMANTIC_TOKEN: u32 = 0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodecError {
    #[error("semantic token {token} at position {position} is outside the codebook")]
    SemanticOutOfRange { position: usize, token: u32 },
    #[error("frame period must be positive, got {0}")]
    BadFramePeriod(f64),
    #[error("acoustic code {code} at layer {layer}, frame {frame} exceeds codebook size {codebook_size}")]
    CodeOutOfRange {
        layer: usize,
        frame: usize,
        code: u32,
        codebook_size: u32,
    },
    #[error("acoustic matrix shape mismatch: expected {expected} codes, got {actual}")]
    Shape { expected: usize, actual: usize },
    #[error("delayed sequence has {actual} steps, expected {expected}")]
    StepCount { expected: usize, actual: usize },
    #[error("delayed sequence slot (step {step}, layer {layer}) violates the delay pattern")]
    MalformedPad { step: usize, layer: usize },
    #[error("chunk of {len} tokens exceeds the training buffer of {training_buffer}")]
    ChunkTooLong { len: usize, training_buffer: usize },
    #[error("invalid relay configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("{tokens} semantic tokens but {times} ready times")]
    ReadyTimesLength { tokens: usize, times: usize },
    #[error("ready times must be non-decreasing (token {0})")]
    UnorderedReadyTimes(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticStream {
    tokens: Vec<u32>,
    frame_period_ms: f64,
}

impl SemanticStream {
    pub fn new(tokens: Vec<u32>, frame_period_ms: f64) -> Result<Self, CodecError> {
        if !(frame_period_ms > 0.0 && frame_period_ms.is_finite()) {
            return Err(CodecError::BadFramePeriod(frame_period_ms));
        }
        if let Some((position, &token)) = tokens
            .iter()
            .enumerate()
            .find(|(_, &t)| t >= SEMANTIC_CODEBOOK_SIZE)
        {
            return Err(CodecError::SemanticOutOfRange { position, token });
        }
        Ok(Self {
            tokens,
            frame_period_ms,
        })
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn frame_period_ms(&self) -> f64 {
        self.frame_period_ms
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// `layers x frames` acoustic codes, stored layer-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AcousticFrameMatrix {
    layers: usize,
    frames: usize,
    codebook_size: u32,
    codes: Vec<u32>,
}

impl AcousticFrameMatrix {
    pub fn new(
        layers: usize,
        frames: usize,
        codebook_size: u32,
        codes: Vec<u32>,
    ) -> Result<Self, CodecError> {
        let expected = layers * frames;
        if codes.len() != expected {
            return Err(CodecError::Shape {
                expected,
                actual: codes.len(),
            });
        }
        if let Some(i) = codes.iter().position(|&c| c >= codebook_size) {
            return Err(CodecError::CodeOutOfRange {
                layer: i / frames.max(1),
                frame: i % frames.max(1),
                code: codes[i],
                codebook_size,
            });
        }
        Ok(Self {
            layers,
            frames,
            codebook_size,
            codes,
        })
    }

    pub fn empty(layers: usize, codebook_size: u32) -> Self {
        Self {
            layers,
            frames: 0,
            codebook_size,
            codes: Vec::new(),
        }
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn codebook_size(&self) -> u32 {
        self.codebook_size
    }

    #[inline]
    pub fn get(&self, layer: usize, frame: usize) -> u32 {
        self.codes[layer * self.frames + frame]
    }

    /// Codes of one layer across all frames.
    pub fn layer(&self, layer: usize) -> &[u32] {
        &self.codes[layer * self.frames..(layer + 1) * self.frames]
    }

    /// Keeps the frames whose mask entry is true.
    pub fn select_frames(&self, keep: &[bool]) -> Self {
        let frames = keep.iter().filter(|k| **k).count();
        let mut codes = Vec::with_capacity(self.layers * frames);
        for layer in 0..self.layers {
            codes.extend(
                self.layer(layer)
                    .iter()
                    .zip(keep)
                    .filter(|(_, k)| **k)
                    .map(|(c, _)| *c),
            );
        }
        Self {
            layers: self.layers,
            frames,
            codebook_size: self.codebook_size,
            codes,
        }
    }

    /// Appends the frames of `other` after the frames of `self`.
    pub fn concat(&self, other: &Self) -> Self {
        debug_assert_eq!(self.layers, other.layers);
        let frames = self.frames + other.frames;
        let mut codes = Vec::with_capacity(self.layers * frames);
        for layer in 0..self.layers {
            codes.extend_from_slice(self.layer(layer));
            codes.extend_from_slice(other.layer(layer));
        }
        Self {
            layers: self.layers,
            frames,
            codebook_size: self.codebook_size,
            codes,
        }
    }
}

/// Delayed-pattern layout: `frames + layers - 1` steps of `layers` slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DelayedSequence {
    layers: usize,
    codebook_size: u32,
    slots: Vec<u32>,
}

impl DelayedSequence {
    pub fn from_steps(steps: Vec<Vec<u32>>, codebook_size: u32) -> Self {
        let layers = steps.first().map_or(0, Vec::len);
        Self {
            layers,
            codebook_size,
            slots: steps.into_iter().flatten().collect(),
        }
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn num_steps(&self) -> usize {
        self.slots.len().checked_div(self.layers).unwrap_or(0)
    }

    pub fn step(&self, s: usize) -> &[u32] {
        &self.slots[s * self.layers..(s + 1) * self.layers]
    }

    pub fn steps(&self) -> impl Iterator<Item = &[u32]> {
        self.slots.chunks(self.layers.max(1))
    }

    pub fn pad_count(&self) -> usize {
        self.slots.iter().filter(|&&c| c == PAD).count()
    }
}

/// Step `s` carries the code of layer `k` for frame `s - k`.
pub fn interleave_delayed(matrix: &AcousticFrameMatrix) -> DelayedSequence {
    let layers = matrix.layers;
    let frames = matrix.frames;
    let steps = if frames == 0 { 0 } else { frames + layers - 1 };
    let mut slots = vec![PAD; steps * layers];
    for layer in 0..layers {
        for frame in 0..frames {
            slots[(frame + layer) * layers + layer] = matrix.get(layer, frame);
        }
    }
    DelayedSequence {
        layers,
        codebook_size: matrix.codebook_size,
        slots,
    }
}

/// Inverse of [`interleave_delayed`]; rejects any slot that breaks the
/// pattern.
pub fn deinterleave_delayed(
    seq: &DelayedSequence,
    layers: usize,
    frames: usize,
) -> Result<AcousticFrameMatrix, CodecError> {
    let expected_steps = if frames == 0 { 0 } else { frames + layers - 1 };
    if seq.layers != layers && !(frames == 0 && seq.slots.is_empty()) {
        return Err(CodecError::Shape {
            expected: expected_steps * layers,
            actual: seq.slots.len(),
        });
    }
    if seq.num_steps() != expected_steps {
        return Err(CodecError::StepCount {
            expected: expected_steps,
            actual: seq.num_steps(),
        });
    }
    let mut codes = vec![0; layers * frames];
    for step in 0..expected_steps {
        for layer in 0..layers {
            let value = seq.slots[step * layers + layer];
            let in_pattern = step >= layer && step - layer < frames;
            match (in_pattern, value == PAD) {
                (true, false) => codes[layer * frames + step - layer] = value,
                (false, true) => {}
                _ => return Err(CodecError::MalformedPad { step, layer }),
            }
        }
    }
    AcousticFrameMatrix::new(layers, frames, seq.codebook_size, codes)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelayConfig {
    /// Semantic tokens per relay chunk.
    pub inference_buffer: usize,
    /// Fixed chunk length the acoustic mapping expects; shorter chunks are
    /// padded up to it.
    pub training_buffer: usize,
    pub per_chunk_compute_ms: f64,
    /// Acoustic codebook layers.
    pub layers: usize,
    /// Acoustic frames per semantic token.
    pub ratio: usize,
    pub codebook_size: u32,
    pub seed: u64,
}

impl Default for RelayConfig {
    fn default() -> Self {
        Self {
            inference_buffer: 50,
            training_buffer: 100,
            per_chunk_compute_ms: 0.0,
            layers: 16,
            ratio: 3,
            codebook_size: 1024,
            seed: 0,
        }
    }
}

impl RelayConfig {
    pub fn validate(&self) -> Result<(), CodecError> {
        if self.inference_buffer == 0 || self.inference_buffer > self.training_buffer {
            return Err(CodecError::InvalidConfig(
                "inference_buffer must lie in [1, training_buffer]",
            ));
        }
        if self.layers == 0 || self.ratio == 0 {
            return Err(CodecError::InvalidConfig("layers and ratio must be positive"));
        }
        if self.codebook_size == 0 || self.codebook_size == PAD {
            return Err(CodecError::InvalidConfig(
                "codebook_size must be positive and leave room for PAD",
            ));
        }
        if !(self.per_chunk_compute_ms >= 0.0 && self.per_chunk_compute_ms.is_finite()) {
            return Err(CodecError::InvalidConfig(
                "per_chunk_compute_ms must be finite and non-negative",
            ));
        }
        Ok(())
    }
}

/// Acoustic frames for one padded chunk, with the mask of frames to keep.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkMapping {
    pub frames: AcousticFrameMatrix,
    pub keep: Vec<bool>,
}

impl ChunkMapping {
    pub fn retained(&self) -> AcousticFrameMatrix {
        self.frames.select_frames(&self.keep)
    }

    pub fn retained_count(&self) -> usize {
        self.keep.iter().filter(|k| **k).count()
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn acoustic_code(seed: u64, token: u32, layer: usize, position: usize, codebook_size: u32) -> u32 {
    let mut h = splitmix64(seed);
    h = splitmix64(h ^ u64::from(token));
    h = splitmix64(h ^ layer as u64);
    h = splitmix64(h ^ position as u64);
    (h % u64::from(codebook_size)) as u32
}

/// Deterministic stand-in for the acoustic model on one chunk.
pub fn map_semantic_chunk(chunk: &[u32], config: &RelayConfig) -> Result<ChunkMapping, CodecError> {
    config.validate()?;
    if chunk.len() > config.training_buffer {
        return Err(CodecError::ChunkTooLong {
            len: chunk.len(),
            training_buffer: config.training_buffer,
        });
    }
    let frames = config.training_buffer * config.ratio;
    let mut codes = Vec::with_capacity(config.layers * frames);
    for layer in 0..config.layers {
        for position in 0..frames {
            let token = chunk
                .get(position / config.ratio)
                .copied()
                .unwrap_or(PAD_SEMANTIC_TOKEN);
            codes.push(acoustic_code(
                config.seed,
                token,
                layer,
                position,
                config.codebook_size,
            ));
        }
    }
    let real = chunk.len() * config.ratio;
    let keep = (0..frames).map(|f| f < real).collect();
    Ok(ChunkMapping {
        frames: AcousticFrameMatrix {
            layers: config.layers,
            frames,
            codebook_size: config.codebook_size,
            codes,
        },
        keep,
    })
}

/// Acoustic frames with the wall-clock time each one becomes available.
#[derive(Debug, Clone, PartialEq)]
pub struct RelayOutput {
    pub frames: AcousticFrameMatrix,
    pub available_ms: Vec<f64>,
}

/// Streams semantic tokens through the chunked acoustic mapping.
///
/// Chunks are processed strictly in order. A chunk is released when its last
/// token is ready, or when the previous chunk finished if that is later, plus
/// `per_chunk_compute_ms`.
pub fn relay_stream(
    semantic: &SemanticStream,
    config: &RelayConfig,
    ready_times_ms: &[f64],
) -> Result<RelayOutput, CodecError> {
    config.validate()?;
    if ready_times_ms.len() != semantic.len() {
        return Err(CodecError::ReadyTimesLength {
            tokens: semantic.len(),
            times: ready_times_ms.len(),
        });
    }
    if let Some(i) = ready_times_ms.windows(2).position(|w| w[1] < w[0]) {
        return Err(CodecError::UnorderedReadyTimes(i + 1));
    }
    let mut frames = AcousticFrameMatrix::empty(config.layers, config.codebook_size);
    let mut available_ms = Vec::with_capacity(semantic.len() * config.ratio);
    let mut previous_done = f64::NEG_INFINITY;
    for (chunk, times) in semantic
        .tokens()
        .chunks(config.inference_buffer)
        .zip(ready_times_ms.chunks(config.inference_buffer))
    {
        let mapped = map_semantic_chunk(chunk, config)?;
        let start = times[times.len() - 1].max(previous_done);
        let done = start + config.per_chunk_compute_ms;
        let retained = mapped.retained();
        available_ms.extend(std::iter::repeat_n(done, retained.frames()));
        frames = frames.concat(&retained);
        previous_done = done;
    }
    Ok(RelayOutput {
        frames,
        available_ms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(layers: usize, frames: usize) -> AcousticFrameMatrix {
        let codes = (0..layers * frames).map(|i| (i * 7 % 100) as u32).collect();
        AcousticFrameMatrix::new(layers, frames, 100, codes).unwrap()
    }

    #[test]
    fn single_frame_puts_one_layer_per_step() {
        let m = matrix(3, 1);
        let seq = interleave_delayed(&m);
        assert_eq!(seq.num_steps(), 3);
        for s in 0..3 {
            for k in 0..3 {
                let expected = if k == s { m.get(k, 0) } else { PAD };
                assert_eq!(seq.step(s)[k], expected);
            }
        }
    }

    #[test]
    fn two_layers_four_frames() {
        let m = matrix(2, 4);
        let seq = interleave_delayed(&m);
        assert_eq!(seq.num_steps(), 5);
        assert_eq!(seq.step(0), &[m.get(0, 0), PAD]);
        assert_eq!(seq.step(4), &[PAD, m.get(1, 3)]);
        assert_eq!(seq.pad_count(), 2);
    }

    #[test]
    fn sixteen_layers_thirty_frames() {
        let seq = interleave_delayed(&matrix(16, 30));
        assert_eq!(seq.num_steps(), 45);
        assert_eq!(seq.pad_count(), 16 * 15);
    }

    #[test]
    fn single_layer_is_identity() {
        let m = matrix(1, 6);
        let seq = interleave_delayed(&m);
        let flat: Vec<u32> = seq.steps().flatten().copied().collect();
        assert_eq!(flat, m.layer(0));
        assert_eq!(deinterleave_delayed(&seq, 1, 6).unwrap(), m);
    }

    #[test]
    fn misplaced_pad_is_rejected() {
        let m = matrix(2, 4);
        let mut steps: Vec<Vec<u32>> = interleave_delayed(&m).steps().map(<[u32]>::to_vec).collect();
        steps[2][1] = PAD;
        let broken = DelayedSequence::from_steps(steps.clone(), 100);
        assert_eq!(
            deinterleave_delayed(&broken, 2, 4).unwrap_err(),
            CodecError::MalformedPad { step: 2, layer: 1 }
        );
        steps[2][1] = 5;
        steps[0][1] = 5;
        let broken = DelayedSequence::from_steps(steps, 100);
        assert_eq!(
            deinterleave_delayed(&broken, 2, 4).unwrap_err(),
            CodecError::MalformedPad { step: 0, layer: 1 }
        );
        assert!(matches!(
            deinterleave_delayed(&interleave_delayed(&m), 2, 5),
            Err(CodecError::StepCount { .. })
        ));
    }

    #[test]
    fn short_chunk_is_padded_and_trimmed() {
        let cfg = RelayConfig::default();
        let chunk: Vec<u32> = (1..=10).collect();
        let mapped = map_semantic_chunk(&chunk, &cfg).unwrap();
        assert_eq!(mapped.frames.frames(), 300);
        assert_eq!(mapped.frames.layers(), 16);
        assert_eq!(mapped.retained_count(), 30);
        assert_eq!(mapped.retained().frames(), 30);
        assert_eq!(map_semantic_chunk(&chunk, &cfg).unwrap(), mapped);
    }

    #[test]
    fn full_chunk_keeps_everything() {
        let cfg = RelayConfig::default();
        let chunk: Vec<u32> = (0..100).collect();
        let mapped = map_semantic_chunk(&chunk, &cfg).unwrap();
        assert_eq!(mapped.retained_count(), 300);
        let too_long: Vec<u32> = (0..101).collect();
        assert_eq!(
            map_semantic_chunk(&too_long, &cfg).unwrap_err(),
            CodecError::ChunkTooLong {
                len: 101,
                training_buffer: 100
            }
        );
    }

    #[test]
    fn codes_depend_on_seed_and_stay_in_range() {
        let chunk = [5u32, 9, 4095];
        let a = map_semantic_chunk(&chunk, &RelayConfig::default()).unwrap();
        let b = map_semantic_chunk(
            &chunk,
            &RelayConfig {
                seed: 1,
                ..RelayConfig::default()
            },
        )
        .unwrap();
        assert_ne!(a.frames, b.frames);
        assert!(a.frames.codes.iter().all(|&c| c < 1024));
    }

    #[test]
    fn relay_all_ready_at_once() {
        let cfg = RelayConfig {
            inference_buffer: 10,
            ..RelayConfig::default()
        };
        let stream = SemanticStream::new((0..30).collect(), 40.0).unwrap();
        let out = relay_stream(&stream, &cfg, &[0.0; 30]).unwrap();
        assert_eq!(out.frames.frames(), 90);
        assert!(out.available_ms.iter().all(|&t| t == 0.0));
    }

    #[test]
    fn relay_waits_for_chunk_completion() {
        let cfg = RelayConfig {
            inference_buffer: 10,
            per_chunk_compute_ms: 5.0,
            ..RelayConfig::default()
        };
        let stream = SemanticStream::new(vec![7; 25], 40.0).unwrap();
        let ready: Vec<f64> = (0..25).map(|i| 40.0 * i as f64).collect();
        let out = relay_stream(&stream, &cfg, &ready).unwrap();
        assert_eq!(out.available_ms.len(), 75);
        assert_eq!(out.available_ms[0], 365.0);
        assert!(out.available_ms[0] - ready[0] >= 360.0);
        assert_eq!(out.available_ms[30], 765.0);
        assert_eq!(out.available_ms[74], 965.0);
        assert!(out.available_ms.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn first_output_waits_longer_for_bigger_buffers() {
        let stream = SemanticStream::new(vec![3; 120], 40.0).unwrap();
        let ready: Vec<f64> = (0..120).map(|i| 40.0 * i as f64).collect();
        let first = |buffer| {
            let cfg = RelayConfig {
                inference_buffer: buffer,
                ..RelayConfig::default()
            };
            relay_stream(&stream, &cfg, &ready).unwrap().available_ms[0]
        };
        assert!(first(10) < first(30));
        assert!(first(30) < first(50));
    }

    #[test]
    fn relay_rejects_bad_input() {
        let cfg = RelayConfig::default();
        let stream = SemanticStream::new(vec![1, 2], 40.0).unwrap();
        assert!(matches!(
            relay_stream(&stream, &cfg, &[0.0]),
            Err(CodecError::ReadyTimesLength { .. })
        ));
        assert_eq!(
            relay_stream(&stream, &cfg, &[5.0, 1.0]).unwrap_err(),
            CodecError::UnorderedReadyTimes(1)
        );
        let empty = SemanticStream::new(vec![], 40.0).unwrap();
        let out = relay_stream(&empty, &cfg, &[]).unwrap();
        assert_eq!(out.frames.frames(), 0);
        assert!(out.available_ms.is_empty());
        assert!(SemanticStream::new(vec![4096], 40.0).is_err());
        assert!(RelayConfig {
            inference_buffer: 101,
            ..cfg
        }
        .validate()
        .is_err());
    }
}
