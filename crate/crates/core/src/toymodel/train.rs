use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grad::train_step_clipped;
use super::params::ModelParams;
use super::task::Utterance;
use super::ModelError;
use crate::decoder::greedy_decode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Seed of the batch shuffler.
    pub seed: u64,
    /// Log the running loss every this many steps (0 disables logging).
    pub log_every: usize,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            batch_size: 16,
            learning_rate: 0.1,
            seed: 11,
            log_every: 250,
            clip_norm: super::grad::GRAD_CLIP_NORM,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    /// `(step, mean loss over the logging window)`.
    pub loss_history: Vec<(usize, f64)>,
    pub final_loss: f64,
}

/// Epoch-shuffled minibatch gradient descent over `corpus`.
pub fn train(
    params: &mut ModelParams,
    corpus: &[Utterance],
    config: &TrainConfig,
) -> Result<TrainSummary, ModelError> {
    if corpus.is_empty() || config.batch_size == 0 {
        return Err(ModelError::EmptyBatch);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut cursor = order.len();
    let mut history = Vec::new();
    let mut window = (0.0, 0usize);
    let mut last = f64::NAN;
    let mut batch = Vec::with_capacity(config.batch_size);
    for step in 1..=config.steps {
        batch.clear();
        while batch.len() < config.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(corpus[order[cursor]].clone());
            cursor += 1;
        }
        last = train_step_clipped(params, &batch, config.learning_rate, config.clip_norm)?;
        window.0 += last;
        window.1 += 1;
        if config.log_every > 0 && step % config.log_every == 0 {
            let mean = window.0 / window.1 as f64;
            info!("step {step}: loss {mean:.4}");
            history.push((step, mean));
            window = (0.0, 0);
        }
    }
    Ok(TrainSummary {
        loss_history: history,
        final_loss: last,
    })
}

/// Fraction of utterances whose greedy decode equals the reference exactly.
pub fn exact_sequence_accuracy(
    params: &ModelParams,
    corpus: &[Utterance],
    max_labels_per_frame: usize,
) -> Result<f64, ModelError> {
    if corpus.is_empty() {
        return Ok(0.0);
    }
    let hits: Vec<bool> = corpus
        .par_iter()
        .map(|utt| -> Result<bool, ModelError> {
            let frames = params.encode(&utt.source_frames)?;
            let out = greedy_decode(params, &frames, max_labels_per_frame)?;
            Ok(out.tokens == utt.target_tokens)
        })
        .collect::<Result<_, _>>()?;
    Ok(hits.iter().filter(|h| **h).count() as f64 / corpus.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::super::params::ModelDims;
    use super::super::task::{generate_corpus, SynthTaskConfig};
    use super::*;
    use crate::lattice::{loss, TargetSequence};

    #[test]
    fn single_utterance_overfits() {
        let dims = ModelDims {
            src_vocab: 8,
            tgt_vocab: 8,
            hidden: 16,
            time_reduction: 4,
        };
        let utt = Utterance {
            source_frames: [3, 1, 4, 1, 5].iter().flat_map(|&s| [s; 4]).collect(),
            target_tokens: vec![6, 2, 0, 2, 7],
        };
        let mut params = ModelParams::init(dims, 7);
        let cfg = TrainConfig {
            steps: 500,
            batch_size: 1,
            learning_rate: 0.5,
            seed: 0,
            log_every: 0,
            clip_norm: 5.0,
        };
        train(&mut params, std::slice::from_ref(&utt), &cfg).unwrap();
        let lattice = params.lattice(&utt.source_frames, &utt.target_tokens).unwrap();
        let final_loss = loss(&lattice, &TargetSequence::new(utt.target_tokens.clone())).unwrap();
        assert!(final_loss < 0.1, "loss {final_loss}");
    }

    #[test]
    fn training_is_deterministic() {
        let task = SynthTaskConfig {
            src_vocab: 6,
            tgt_vocab: 6,
            ..SynthTaskConfig::default()
        };
        let corpus = generate_corpus(&task, 20).unwrap();
        let dims = ModelDims {
            src_vocab: 6,
            tgt_vocab: 6,
            hidden: 8,
            time_reduction: 4,
        };
        let cfg = TrainConfig {
            steps: 20,
            batch_size: 4,
            log_every: 5,
            ..TrainConfig::default()
        };
        let mut a = ModelParams::init(dims, 1);
        let mut b = ModelParams::init(dims, 1);
        let sa = train(&mut a, &corpus, &cfg).unwrap();
        let sb = train(&mut b, &corpus, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
        assert_eq!(sa.loss_history.len(), 4);
    }
}
