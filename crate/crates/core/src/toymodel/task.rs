//! Synthetic "translation" corpus: a symbol substitution with local
//! reordering and optional duplication, observed through upsampled and
//! noisy source frames.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthTaskConfig {
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    /// Block length for reordering: the first two symbols of every block are
    /// swapped. `None` disables reordering.
    pub swap_period: Option<usize>,
    /// Probability that a symbol yields its target token twice.
    pub dup_prob: f64,
    /// Source frames per symbol.
    pub upsample: usize,
    /// Per-frame probability of substituting a different source symbol.
    pub noise_prob: f64,
    pub min_symbols: usize,
    pub max_symbols: usize,
    /// Sample lengths as whole reordering blocks. A causal model cannot tell
    /// a trailing partial block from the start of a full one.
    #[serde(default = "default_whole_blocks")]
    pub whole_blocks: bool,
    /// Seed of the source-to-target symbol map.
    pub mapping_seed: u64,
    /// Seed of the utterance sampler.
    pub seed: u64,
}

impl Default for SynthTaskConfig {
    fn default() -> Self {
        Self {
            src_vocab: 16,
            tgt_vocab: 16,
            swap_period: Some(2),
            dup_prob: 0.0,
            upsample: 4,
            noise_prob: 0.0,
            min_symbols: 4,
            max_symbols: 24,
            whole_blocks: true,
            mapping_seed: 0,
            seed: 1,
        }
    }
}

fn default_whole_blocks() -> bool {
    true
}

impl SynthTaskConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &'static str| Err(ModelError::InvalidTask(msg));
        if self.src_vocab < 4 || self.tgt_vocab < 4 {
            return bad("vocabulary sizes must be at least 4");
        }
        if self.tgt_vocab < self.src_vocab {
            return bad("tgt_vocab must be at least src_vocab for an injective symbol map");
        }
        if !(0.0..=1.0).contains(&self.dup_prob) || !(0.0..=1.0).contains(&self.noise_prob) {
            return bad("probabilities must lie in [0, 1]");
        }
        if self.upsample == 0 {
            return bad("upsample must be at least 1");
        }
        if self.min_symbols == 0 || self.min_symbols > self.max_symbols {
            return bad("need 1 <= min_symbols <= max_symbols");
        }
        if matches!(self.swap_period, Some(p) if p < 2) {
            return bad("swap_period must be at least 2");
        }
        if self.length_range().is_empty() {
            return bad("no whole block fits between min_symbols and max_symbols");
        }
        Ok(())
    }

    /// Symbol counts the sampler draws from.
    fn length_range(&self) -> Vec<usize> {
        let step = match self.swap_period {
            Some(p) if self.whole_blocks => p,
            _ => 1,
        };
        (self.min_symbols..=self.max_symbols)
            .filter(|n| n % step == 0)
            .collect()
    }

    /// The fixed injective map from source symbols to target tokens.
    pub fn symbol_map(&self) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.mapping_seed);
        let mut perm: Vec<usize> = (0..self.tgt_vocab).collect();
        perm.shuffle(&mut rng);
        perm.truncate(self.src_vocab);
        perm
    }

    /// Reorders the source symbols by the swap rule.
    pub fn reorder(&self, symbols: &[usize]) -> Vec<usize> {
        let mut out = symbols.to_vec();
        if let Some(period) = self.swap_period {
            for block in out.chunks_mut(period) {
                if block.len() >= 2 {
                    block.swap(0, 1);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    #[serde(rename = "source")]
    pub source_frames: Vec<usize>,
    #[serde(rename = "target")]
    pub target_tokens: Vec<usize>,
}

/// `n` utterances, deterministic in the config.
pub fn generate_corpus(config: &SynthTaskConfig, n: usize) -> Result<Vec<Utterance>, ModelError> {
    config.validate()?;
    let map = config.symbol_map();
    let lengths = config.length_range();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut corpus = Vec::with_capacity(n);
    for _ in 0..n {
        let len = *lengths.choose(&mut rng).expect("validated non-empty");
        let symbols: Vec<usize> = (0..len).map(|_| rng.gen_range(0..config.src_vocab)).collect();

        let mut target = Vec::with_capacity(len);
        for s in config.reorder(&symbols) {
            target.push(map[s]);
            if config.dup_prob > 0.0 && rng.gen_bool(config.dup_prob) {
                target.push(map[s]);
            }
        }

        let mut source = Vec::with_capacity(len * config.upsample);
        for &s in &symbols {
            for _ in 0..config.upsample {
                let mut frame = s;
                if config.noise_prob > 0.0 && rng.gen_bool(config.noise_prob) {
                    // uniform over the other symbols
                    let other = rng.gen_range(0..config.src_vocab - 1);
                    frame = if other >= s { other + 1 } else { other };
                }
                source.push(frame);
            }
        }
        corpus.push(Utterance {
            source_frames: source,
            target_tokens: target,
        });
    }
    Ok(corpus)
}
