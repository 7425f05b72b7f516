//! Embedding materialization: chunk → transcript → encoder for every
//! sample under every requested input setting, with all three layers of
//! on-disk caching (chunk artifacts, transcript cache, embedding cache)
//! consulted before any work is done.

use super::{EmbeddingTable, ExperimentError, InputSetting};
use crate::corpus::{Corpus, Sample};
use crate::encoders::cache::{EmbeddingCache, EmbeddingMeta};
use crate::encoders::{encode_audio, encode_text, EmbeddingPair, EncoderProvider, Modality};
use crate::preprocess::asr::AsrClient;
use crate::preprocess::{make_chunk, TranscriptCache, TranscriptResolver};
use crate::util::sha256_hex;
use rayon::prelude::*;
use std::path::Path;

pub struct PipelineConfig<'a> {
    /// Directory the manifest's relative media paths resolve against.
    pub manifest_dir: &'a Path,
    /// Root for derived artifacts: `chunks/<tag>/`, `transcripts/`,
    /// `embeddings/`.
    pub work_dir: &'a Path,
    /// Window length for the fixed chunk mode, seconds.
    pub window: f64,
    pub asr: &'a dyn AsrClient,
    pub audio_encoder: &'a dyn EncoderProvider,
    pub text_encoder: &'a dyn EncoderProvider,
    pub settings: &'a [InputSetting],
}

/// Compute (or load from cache) audio and text embeddings for every sample
/// under every requested setting. Samples are processed in parallel; all
/// caches use atomic temp-file renames, so concurrent writers are safe.
pub fn materialize_embeddings(
    corpus: &Corpus,
    config: &PipelineConfig<'_>,
) -> Result<EmbeddingTable, ExperimentError> {
    let transcript_cache = TranscriptCache::new(&config.work_dir.join("transcripts"))?;
    let embedding_cache = EmbeddingCache::new(&config.work_dir.join("embeddings"))?;
    let mut table = EmbeddingTable::new();

    for &setting in config.settings {
        let spec = setting.chunk_spec(config.window);
        let chunk_dir = config.work_dir.join("chunks").join(spec.tag());
        std::fs::create_dir_all(&chunk_dir)?;
        let resolver = TranscriptResolver {
            manifest_dir: config.manifest_dir,
            chunk_dir: &chunk_dir,
            window: config.window,
            client: config.asr,
            cache: &transcript_cache,
        };
        let pairs: Result<Vec<EmbeddingPair>, ExperimentError> = corpus
            .samples
            .par_iter()
            .map(|sample| {
                embed_sample(sample, setting, config, &chunk_dir, &resolver, &embedding_cache)
            })
            .collect();
        for pair in pairs? {
            table.insert(setting, pair);
        }
    }
    Ok(table)
}

fn embed_sample(
    sample: &Sample,
    setting: InputSetting,
    config: &PipelineConfig<'_>,
    chunk_dir: &Path,
    resolver: &TranscriptResolver<'_>,
    embedding_cache: &EmbeddingCache,
) -> Result<EmbeddingPair, ExperimentError> {
    let spec = setting.chunk_spec(config.window);
    let chunk = make_chunk(sample, &spec, config.manifest_dir, chunk_dir)?;

    let artifact_bytes = std::fs::read(&chunk.waveform_ref)?;
    let audio_hash = sha256_hex(&[&artifact_bytes]);
    let audio_meta = EmbeddingMeta {
        key: EmbeddingCache::key(&config.audio_encoder.name(), &audio_hash),
        provider: config.audio_encoder.name(),
        modality: Modality::Audio,
        sample_id: sample.sample_id.clone(),
        input_hash: audio_hash,
    };
    let audio = embedding_cache
        .get_or_compute(&audio_meta, || encode_audio(&chunk, config.audio_encoder))?;

    let transcript = resolver.resolve_transcript(sample, setting)?;
    let text_hash = sha256_hex(&[transcript.text.as_bytes()]);
    let text_meta = EmbeddingMeta {
        key: EmbeddingCache::key(&config.text_encoder.name(), &text_hash),
        provider: config.text_encoder.name(),
        modality: Modality::Text,
        sample_id: sample.sample_id.clone(),
        input_hash: text_hash,
    };
    let text = embedding_cache
        .get_or_compute(&text_meta, || encode_text(&transcript, config.text_encoder))?;

    Ok(EmbeddingPair {
        sample_id: sample.sample_id.clone(),
        audio_vec: Some(audio),
        text_vec: Some(text),
    })
}
