use proptest::prelude::*;

use s2st::codec::{
    deinterleave_delayed, interleave_delayed, relay_stream, AcousticFrameMatrix, RelayConfig,
    SemanticStream, PAD,
};
use s2st::decoder::{beam_decode, greedy_decode, BeamConfig};
use s2st::lattice::{
    backward, brute_force_logprob, forward, logits_gradient, LogProbLattice, TargetSequence,
};
use s2st::metrics::{average_lagging, corpus_bleu};
use s2st::streaming::{emission_timeline, EmissionTimeline, StreamConfig};
use s2st::toymodel::{ModelDims, ModelParams};

/// `(frames, labels, vocab, logits, target)` with `frames + labels <= 10`.
fn lattice_case() -> impl Strategy<Value = (usize, usize, usize, Vec<f64>, Vec<usize>)> {
    (1usize..7, 0usize..5, 2usize..6)
        .prop_filter("enumeration size", |(t, u, _)| t + u <= 10)
        .prop_flat_map(|(t, u, v)| {
            (
                Just(t),
                Just(u),
                Just(v),
                prop::collection::vec(-4.0f64..4.0, t * (u + 1) * v),
                prop::collection::vec(0..v - 1, u),
            )
        })
}

fn build(t: usize, u: usize, v: usize, logits: Vec<f64>) -> LogProbLattice {
    LogProbLattice::from_logits(t, u, v, logits).unwrap()
}

proptest! {
    #[test]
    fn forward_matches_enumeration((t, u, v, logits, target) in lattice_case()) {
        let lattice = build(t, u, v, logits);
        let target = TargetSequence::new(target);
        let dp = forward(&lattice, &target).unwrap().log_prob;
        let brute = brute_force_logprob(&lattice, &target).unwrap();
        prop_assert!((dp - brute).abs() < 1e-9, "{dp} vs {brute}");
    }

    #[test]
    fn backward_agrees_with_forward((t, u, v, logits, target) in lattice_case()) {
        let lattice = build(t, u, v, logits);
        let target = TargetSequence::new(target);
        let fwd = forward(&lattice, &target).unwrap().log_prob;
        let beta = backward(&lattice, &target).unwrap();
        prop_assert!((beta.get(0, 0) - fwd).abs() < 1e-9);
    }

    #[test]
    fn logit_gradients_sum_to_zero_per_cell((t, u, v, logits, target) in lattice_case()) {
        let lattice = build(t, u, v, logits);
        let (_, grad) = logits_gradient(&lattice, &TargetSequence::new(target)).unwrap();
        for cell in grad.chunks(v) {
            prop_assert!(cell.iter().sum::<f64>().abs() < 1e-9);
        }
    }

    #[test]
    fn delayed_pattern_roundtrips(
        (layers, frames, codes) in (1usize..10, 1usize..48).prop_flat_map(|(k, f)| {
            (Just(k), Just(f), prop::collection::vec(0u32..64, k * f))
        })
    ) {
        let m = AcousticFrameMatrix::new(layers, frames, 64, codes).unwrap();
        let seq = interleave_delayed(&m);
        prop_assert_eq!(seq.num_steps(), frames + layers - 1);
        prop_assert_eq!(seq.pad_count(), layers * (layers - 1));
        let pads = seq.steps().flatten().filter(|&&c| c == PAD).count();
        prop_assert_eq!(pads, layers * (layers - 1));
        prop_assert_eq!(deinterleave_delayed(&seq, layers, frames).unwrap(), m);
    }

    #[test]
    fn relay_never_delivers_early(
        gaps in prop::collection::vec(0.0f64..300.0, 1..120),
        buffer in 1usize..60,
        compute in 0.0f64..50.0,
    ) {
        let ready: Vec<f64> = gaps
            .iter()
            .scan(0.0, |acc, g| {
                *acc += g;
                Some(*acc)
            })
            .collect();
        let n = ready.len();
        let config = RelayConfig {
            inference_buffer: buffer,
            per_chunk_compute_ms: compute,
            ..RelayConfig::default()
        };
        let tokens = SemanticStream::new((0..n as u32).collect(), 40.0).unwrap();
        let out = relay_stream(&tokens, &config, &ready).unwrap();
        prop_assert_eq!(out.frames.frames(), n * config.ratio);
        for (j, &at) in out.available_ms.iter().enumerate() {
            prop_assert!(at >= ready[j / config.ratio] + compute);
        }
        prop_assert!(out.available_ms.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn emissions_wait_for_their_audio(
        mut frames in prop::collection::vec(0usize..100, 0..50),
        segment in 1usize..40,
        right in 1usize..10,
    ) {
        frames.sort_unstable();
        let config = StreamConfig {
            segment_frames: segment,
            right_context_frames: right,
            ..StreamConfig::default()
        };
        let timeline = emission_timeline(&frames, &config, 100).unwrap();
        for (&f, &t) in frames.iter().zip(&timeline.emission_times_ms) {
            prop_assert!(t >= (f + 1 + right) as f64 * config.encoder_frame_ms());
        }
        prop_assert!(timeline.emission_times_ms.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn uniform_delay_shifts_average_lagging(
        mut times in prop::collection::vec(0.0f64..900.0, 1..30),
        delta in 0.0f64..99.0,
    ) {
        // every time stays below the 1000 ms duration, so the cutoff is fixed
        times.sort_by(f64::total_cmp);
        let n = times.len();
        let base = EmissionTimeline { emission_times_ms: times.clone(), source_duration_ms: 1000.0 };
        let moved = EmissionTimeline {
            emission_times_ms: times.iter().map(|t| t + delta).collect(),
            source_duration_ms: 1000.0,
        };
        let a = average_lagging(&base, n).unwrap().unwrap();
        let b = average_lagging(&moved, n).unwrap().unwrap();
        prop_assert_eq!(a.cutoff_index, b.cutoff_index);
        prop_assert!((b.average_lagging_ms - a.average_lagging_ms - delta).abs() < 1e-9);
    }

    #[test]
    fn corpus_bleu_ignores_sentence_order(
        pairs in prop::collection::vec(
            (prop::collection::vec(0u8..5, 0..12), prop::collection::vec(0u8..5, 1..12)),
            1..8,
        ),
        rotation in 0usize..8,
    ) {
        let (hyps, refs): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
        let mut rotated = pairs.clone();
        rotated.rotate_left(rotation % pairs.len());
        let (rh, rr): (Vec<_>, Vec<_>) = rotated.into_iter().unzip();
        let a = corpus_bleu(&hyps, &refs).unwrap();
        let b = corpus_bleu(&rh, &rr).unwrap();
        prop_assert!((0.0..=100.0).contains(&a.bleu));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn beam_of_one_is_greedy(seed in 0u64..1000, symbols in 2usize..10) {
        let dims = ModelDims { src_vocab: 6, tgt_vocab: 5, hidden: 8, time_reduction: 2 };
        let model = ModelParams::init_scaled(dims, seed, 1.5);
        let source: Vec<usize> = (0..2 * symbols).map(|i| (i * 7 + seed as usize) % 6).collect();
        let frames = model.encode(&source).unwrap();
        let greedy = greedy_decode(&model, &frames, 4).unwrap();
        let config = BeamConfig { beam_size: 1, length_penalty_alpha: 0.0, max_labels_per_frame: 4 };
        let beam = beam_decode(&model, &frames, &config).unwrap();
        prop_assert_eq!(&beam[0].tokens, &greedy.tokens);
        prop_assert_eq!(&beam[0].token_frames, &greedy.token_frames);
        prop_assert!((beam[0].log_prob - greedy.log_prob).abs() < 1e-12);
    }
}
