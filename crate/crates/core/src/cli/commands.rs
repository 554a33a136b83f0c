use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context};
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::pipeline::{decode_utterance, measure_latency, run_pipeline, RunReport};
use crate::toymodel::{
    generate_corpus, read_checkpoint, train, write_checkpoint, ModelParams, Utterance,
};

/// One line of the hypotheses file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisRecord {
    pub index: usize,
    pub tokens: Vec<usize>,
    pub token_frames: Vec<usize>,
    pub log_prob: f64,
    pub num_encoder_frames: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceLatency {
    pub index: usize,
    pub semantic_al_ms: Option<f64>,
    pub acoustic_al_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyFile {
    pub config: serde_json::Value,
    pub utterances: Vec<UtteranceLatency>,
    pub mean_semantic_al_ms: f64,
    pub mean_acoustic_al_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalFile {
    pub config: serde_json::Value,
    pub report: RunReport,
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let file = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> anyhow::Result<()> {
    let mut out = create(path)?;
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
        .with_context(|| format!("cannot write {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()
        .with_context(|| format!("cannot write {}", path.display()))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<Vec<T>> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut records = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("cannot read {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .with_context(|| format!("{}:{}: malformed record", path.display(), n + 1))?;
        records.push(record);
    }
    Ok(records)
}

pub fn read_corpus(path: &Path) -> anyhow::Result<Vec<Utterance>> {
    read_jsonl(path)
}

/// Loads a checkpoint and checks it against the configured dimensions.
pub fn load_model(config: &ExperimentConfig, path: &Path) -> anyhow::Result<ModelParams> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let (params, _) = read_checkpoint(BufReader::new(file))
        .with_context(|| format!("cannot load checkpoint {}", path.display()))?;
    if params.dims != config.model.dims() {
        bail!(
            "checkpoint {} has dimensions {:?}, config expects {:?}",
            path.display(),
            params.dims,
            config.model.dims()
        );
    }
    Ok(params)
}

pub fn cmd_gen_data(config: &ExperimentConfig, out: &Path) -> anyhow::Result<()> {
    let corpus = generate_corpus(&config.task, config.num_utterances)?;
    write_jsonl(out, &corpus)?;
    info!("wrote {} utterances to {}", corpus.len(), out.display());
    Ok(())
}

pub fn cmd_train(config: &ExperimentConfig, data: &Path, out: &Path) -> anyhow::Result<()> {
    let corpus = read_corpus(data)?;
    if corpus.is_empty() {
        bail!("training corpus {} is empty", data.display());
    }
    let mut params = ModelParams::init(config.model.dims(), config.model.init_seed);
    let summary = train(&mut params, &corpus, &config.training)?;
    info!("final batch loss {:.4}", summary.final_loss);
    let echo = serde_json::to_string(&config.echo())?;
    let mut writer = create(out)?;
    write_checkpoint(&mut writer, &params, &echo)?;
    info!("wrote checkpoint {}", out.display());
    Ok(())
}

pub fn cmd_decode(
    config: &ExperimentConfig,
    checkpoint: &Path,
    data: &Path,
    out: &Path,
) -> anyhow::Result<()> {
    let model = load_model(config, checkpoint)?;
    let corpus = read_corpus(data)?;
    let records: Vec<HypothesisRecord> = corpus
        .par_iter()
        .enumerate()
        .map(|(index, utt)| match decode_utterance(&model, &utt.source_frames, &config.pipeline) {
            Ok(d) => HypothesisRecord {
                index,
                tokens: d.tokens,
                token_frames: d.token_frames,
                log_prob: d.log_prob,
                num_encoder_frames: d.num_encoder_frames,
                error: None,
            },
            Err(e) => HypothesisRecord {
                index,
                tokens: Vec::new(),
                token_frames: Vec::new(),
                log_prob: 0.0,
                num_encoder_frames: 0,
                error: Some(e.to_string()),
            },
        })
        .collect();
    write_jsonl(out, &records)?;
    info!("wrote {} hypotheses to {}", records.len(), out.display());
    Ok(())
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn cmd_simulate_latency(
    config: &ExperimentConfig,
    hypotheses: &Path,
    out: &Path,
) -> anyhow::Result<()> {
    let records: Vec<HypothesisRecord> = read_jsonl(hypotheses)?;
    let mut utterances = Vec::with_capacity(records.len());
    for r in records.iter().filter(|r| r.error.is_none()) {
        let lat = measure_latency(
            &r.tokens,
            &r.token_frames,
            r.num_encoder_frames,
            &config.pipeline.stream,
            &config.pipeline.relay,
        )
        .with_context(|| format!("{}: hypothesis {}", hypotheses.display(), r.index))?;
        utterances.push(UtteranceLatency {
            index: r.index,
            semantic_al_ms: lat.semantic.map(|l| l.average_lagging_ms),
            acoustic_al_ms: lat.acoustic.map(|l| l.average_lagging_ms),
        });
    }
    let file = LatencyFile {
        config: config.echo(),
        mean_semantic_al_ms: mean(utterances.iter().filter_map(|u| u.semantic_al_ms)),
        mean_acoustic_al_ms: mean(utterances.iter().filter_map(|u| u.acoustic_al_ms)),
        utterances,
    };
    write_json(out, &file)?;
    info!(
        "semantic AL {:.1} ms, acoustic AL {:.1} ms",
        file.mean_semantic_al_ms, file.mean_acoustic_al_ms
    );
    Ok(())
}

pub fn cmd_eval(
    config: &ExperimentConfig,
    checkpoint: &Path,
    data: &Path,
    out: &Path,
) -> anyhow::Result<()> {
    let model = load_model(config, checkpoint)?;
    let corpus = read_corpus(data)?;
    let report = run_pipeline(&model, &corpus, &config.pipeline)?;
    let agg = &report.aggregate;
    info!(
        "BLEU {:.2}, semantic AL {:.1} ms, acoustic AL {:.1} ms, {} failures",
        agg.bleu.bleu, agg.mean_semantic_al_ms, agg.mean_acoustic_al_ms, agg.failures
    );
    write_json(
        out,
        &EvalFile {
            config: config.echo(),
            report,
        },
    )
}
