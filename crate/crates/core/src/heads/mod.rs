//! The five classifier heads mapping 768-dim embeddings to 2-way logits
//! (index 0 = Terminal, index 1 = NonTerminal):
//!
//! * **TO** — text-only: linear stack 768→h1→h2→2.
//! * **AO** — audio-only: same stack over the audio embedding.
//! * **EF** — early fusion: one linear layer per modality (768→m each),
//!   concatenation (2m), then the three-layer stack 2m→h1→h2→2.
//! * **LF** — late fusion: a single linear layer 4→2 over the concatenated
//!   logits of a trained TO and a trained AO model; the bases stay frozen.
//! * **AF** — average fusion: elementwise mean of TO and AO logits, no
//!   parameters of its own.
//!
//! Rectifier nonlinearities sit between linear layers, with dropout applied
//! at every inter-layer boundary during training and disabled at inference.

pub mod nn;

pub use nn::{softmax_cross_entropy, Adam, DropoutMasks, Linear, LinearGrad, Net, NetInput};

use crate::corpus::Label;
use crate::encoders::{Embedding, EmbeddingPair, Modality, EMBED_DIM};
use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Read;
use std::path::Path;

/// Number of output classes (Terminal, NonTerminal).
pub const N_CLASSES: usize = 2;

#[derive(Debug, thiserror::Error)]
pub enum HeadError {
    #[error("{architecture} requires trained TO and AO base models")]
    MissingBaseModels { architecture: Architecture },
    #[error("bad head dimensions: {detail}")]
    BadDims { detail: String },
    #[error("{architecture} requires the {modality} embedding")]
    MissingModality {
        architecture: Architecture,
        modality: Modality,
    },
    #[error("checkpoint {path}: {detail}")]
    CheckpointFormat { path: String, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Architecture {
    /// Text-only.
    TO,
    /// Audio-only.
    AO,
    /// Early fusion (embedding-level).
    EF,
    /// Late fusion (learned layer over base logits).
    LF,
    /// Average fusion (mean of base logits).
    AF,
}

impl Architecture {
    pub const ALL: [Architecture; 5] = [
        Architecture::TO,
        Architecture::AO,
        Architecture::EF,
        Architecture::LF,
        Architecture::AF,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::TO => "TO",
            Architecture::AO => "AO",
            Architecture::EF => "EF",
            Architecture::LF => "LF",
            Architecture::AF => "AF",
        }
    }

    pub fn requires_audio(self) -> bool {
        !matches!(self, Architecture::TO)
    }

    pub fn requires_text(self) -> bool {
        !matches!(self, Architecture::AO)
    }

    /// LF and AF are built on trained TO and AO models.
    pub fn needs_bases(self) -> bool {
        matches!(self, Architecture::LF | Architecture::AF)
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Architecture {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "TO" => Ok(Architecture::TO),
            "AO" => Ok(Architecture::AO),
            "EF" => Ok(Architecture::EF),
            "LF" => Ok(Architecture::LF),
            "AF" => Ok(Architecture::AF),
            other => Err(format!(
                "unknown architecture `{other}` (expected TO, AO, EF, LF, or AF)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub architecture: Architecture,
    /// Hidden sizes of the linear stack; the stack always ends in 2.
    pub hidden_dims: Vec<usize>,
    /// Per-modality projection width for early fusion.
    pub ef_modality_dim: usize,
    /// Dropout probability between linear layers during training.
    pub dropout: f64,
    pub seed: u64,
}

impl HeadConfig {
    pub const DEFAULT_HIDDEN_DIMS: [usize; 2] = [256, 64];
    pub const DEFAULT_EF_MODALITY_DIM: usize = 256;
    pub const DEFAULT_DROPOUT: f64 = 0.30;

    pub fn new(architecture: Architecture) -> HeadConfig {
        HeadConfig {
            architecture,
            hidden_dims: Self::DEFAULT_HIDDEN_DIMS.to_vec(),
            ef_modality_dim: Self::DEFAULT_EF_MODALITY_DIM,
            dropout: Self::DEFAULT_DROPOUT,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> HeadConfig {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), HeadError> {
        let bad = |detail: String| Err(HeadError::BadDims { detail });
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        match self.architecture {
            Architecture::TO | Architecture::AO | Architecture::EF => {
                if self.hidden_dims.is_empty() {
                    return bad(format!("{} needs non-empty hidden_dims", self.architecture));
                }
                if self.hidden_dims.iter().any(|&d| d == 0) {
                    return bad("hidden_dims must be positive".to_string());
                }
                if self.architecture == Architecture::EF && self.ef_modality_dim == 0 {
                    return bad("ef_modality_dim must be positive".to_string());
                }
            }
            Architecture::LF | Architecture::AF => {}
        }
        Ok(())
    }

    /// Dimensions of the trainable linear stack, input to output.
    fn trunk_dims(&self) -> Vec<usize> {
        let mut dims = Vec::new();
        match self.architecture {
            Architecture::TO | Architecture::AO => {
                dims.push(EMBED_DIM);
                dims.extend(&self.hidden_dims);
                dims.push(N_CLASSES);
            }
            Architecture::EF => {
                dims.push(2 * self.ef_modality_dim);
                dims.extend(&self.hidden_dims);
                dims.push(N_CLASSES);
            }
            Architecture::LF => {
                dims.push(2 * N_CLASSES);
                dims.push(N_CLASSES);
            }
            Architecture::AF => {}
        }
        dims
    }
}

/// Parameters of one head. LF and AF own their trained TO and AO bases.
#[derive(Debug, Clone)]
pub enum HeadParams {
    Single { net: Net },
    Early { net: Net },
    Late {
        to: Box<HeadModel>,
        ao: Box<HeadModel>,
        combiner: Net,
    },
    Average {
        to: Box<HeadModel>,
        ao: Box<HeadModel>,
    },
}

#[derive(Debug, Clone)]
pub struct HeadModel {
    pub config: HeadConfig,
    pub params: HeadParams,
}

/// Build an initialized (untrained) head.
///
/// Hidden layers start at fan-in-scaled uniform values drawn from
/// `config.seed`; every output layer starts at zero, so an untrained head
/// emits zero logits and predicts the tie-break class until training moves
/// it. LF and AF consume already-trained TO and AO models, which they never
/// modify.
pub fn init_head(
    config: &HeadConfig,
    bases: Option<(HeadModel, HeadModel)>,
) -> Result<HeadModel, HeadError> {
    config.validate()?;
    let check_bases = |bases: Option<(HeadModel, HeadModel)>| -> Result<(HeadModel, HeadModel), HeadError> {
        let (to, ao) = bases.ok_or(HeadError::MissingBaseModels {
            architecture: config.architecture,
        })?;
        if to.architecture() != Architecture::TO || ao.architecture() != Architecture::AO {
            return Err(HeadError::BadDims {
                detail: format!(
                    "base models must be (TO, AO), got ({}, {})",
                    to.architecture(),
                    ao.architecture()
                ),
            });
        }
        Ok((to, ao))
    };

    let params = match config.architecture {
        Architecture::TO | Architecture::AO | Architecture::EF => {
            if bases.is_some() {
                return Err(HeadError::BadDims {
                    detail: format!("{} does not take base models", config.architecture),
                });
            }
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let projections = if config.architecture == Architecture::EF {
                let proj_a = Linear::seeded(EMBED_DIM, config.ef_modality_dim, &mut rng);
                let proj_t = Linear::seeded(EMBED_DIM, config.ef_modality_dim, &mut rng);
                Some((proj_a, proj_t))
            } else {
                None
            };
            let dims = config.trunk_dims();
            let n_layers = dims.len() - 1;
            let trunk: Vec<Linear> = dims
                .windows(2)
                .enumerate()
                .map(|(i, w)| {
                    if i + 1 == n_layers {
                        Linear::zeros(w[0], w[1])
                    } else {
                        Linear::seeded(w[0], w[1], &mut rng)
                    }
                })
                .collect();
            let net = Net {
                projections,
                trunk,
                dropout: config.dropout,
            };
            if config.architecture == Architecture::EF {
                HeadParams::Early { net }
            } else {
                HeadParams::Single { net }
            }
        }
        Architecture::LF => {
            let (to, ao) = check_bases(bases)?;
            let combiner = Net {
                projections: None,
                trunk: vec![Linear::zeros(2 * N_CLASSES, N_CLASSES)],
                dropout: config.dropout,
            };
            HeadParams::Late {
                to: Box::new(to),
                ao: Box::new(ao),
                combiner,
            }
        }
        Architecture::AF => {
            let (to, ao) = check_bases(bases)?;
            HeadParams::Average {
                to: Box::new(to),
                ao: Box::new(ao),
            }
        }
    };
    Ok(HeadModel {
        config: config.clone(),
        params,
    })
}

impl HeadModel {
    pub fn architecture(&self) -> Architecture {
        self.config.architecture
    }

    /// The net whose parameters training updates, if any (AF has none).
    /// For LF this is the combiner only; the bases stay frozen.
    pub fn trainable_net(&self) -> Option<&Net> {
        match &self.params {
            HeadParams::Single { net } | HeadParams::Early { net } => Some(net),
            HeadParams::Late { combiner, .. } => Some(combiner),
            HeadParams::Average { .. } => None,
        }
    }

    pub fn trainable_net_mut(&mut self) -> Option<&mut Net> {
        match &mut self.params {
            HeadParams::Single { net } | HeadParams::Early { net } => Some(net),
            HeadParams::Late { combiner, .. } => Some(combiner),
            HeadParams::Average { .. } => None,
        }
    }

    pub fn base_models(&self) -> Option<(&HeadModel, &HeadModel)> {
        match &self.params {
            HeadParams::Late { to, ao, .. } | HeadParams::Average { to, ao } => Some((to, ao)),
            _ => None,
        }
    }

    /// Batched logits. `masks` applies dropout to the trainable net only
    /// (training mode); base models always run in inference mode because
    /// they are frozen.
    pub fn logits_batch(
        &self,
        audio: Option<&Array2<f64>>,
        text: Option<&Array2<f64>>,
        masks: Option<&DropoutMasks>,
    ) -> Result<Array2<f64>, HeadError> {
        let arch = self.architecture();
        let need_audio = || {
            audio.ok_or(HeadError::MissingModality {
                architecture: arch,
                modality: Modality::Audio,
            })
        };
        let need_text = || {
            text.ok_or(HeadError::MissingModality {
                architecture: arch,
                modality: Modality::Text,
            })
        };
        match &self.params {
            HeadParams::Single { net } => {
                let x = if arch == Architecture::TO {
                    need_text()?
                } else {
                    need_audio()?
                };
                Ok(net.forward(NetInput::Single(x), masks))
            }
            HeadParams::Early { net } => {
                let (a, t) = (need_audio()?, need_text()?);
                Ok(net.forward(NetInput::Dual { audio: a, text: t }, masks))
            }
            HeadParams::Late { to, ao, combiner } => {
                let features = base_logit_features(to, ao, need_audio()?, need_text()?)?;
                Ok(combiner.forward(NetInput::Single(&features), masks))
            }
            HeadParams::Average { to, ao } => {
                let lt = to.logits_batch(None, Some(need_text()?), None)?;
                let la = ao.logits_batch(Some(need_audio()?), None, None)?;
                Ok((lt + la) / 2.0)
            }
        }
    }

    /// Logits for one embedding pair. `training` enables dropout, sampled
    /// from `rng` (required in training mode).
    pub fn forward(
        &self,
        emb: &EmbeddingPair,
        training: bool,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<[f64; N_CLASSES], HeadError> {
        let audio = emb.audio_vec.as_ref().map(row_matrix);
        let text = emb.text_vec.as_ref().map(row_matrix);
        let masks = if training {
            let rng = rng.expect("training-mode forward needs an rng for dropout");
            self.trainable_net().map(|net| net.sample_masks(1, rng))
        } else {
            None
        };
        let logits = self.logits_batch(audio.as_ref(), text.as_ref(), masks.as_ref())?;
        Ok([logits[[0, 0]], logits[[0, 1]]])
    }

    /// Argmax prediction; ties go to NonTerminal, the majority class.
    pub fn predict(&self, emb: &EmbeddingPair) -> Result<Label, HeadError> {
        let logits = self.forward(emb, false, None)?;
        Ok(label_from_logits(logits))
    }

    /// Trainable parameter count of this head itself (bases excluded).
    pub fn own_param_count(&self) -> usize {
        self.trainable_net().map_or(0, Net::param_count)
    }

    /// Stable digest over every tensor, bases included. Two models with the
    /// same hash compute identical functions.
    pub fn param_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        self.visit_tensors("", &mut |name, tensor| {
            hasher.update((name.len() as u64).to_le_bytes());
            hasher.update(name.as_bytes());
            match tensor {
                TensorRef::Matrix(m) => {
                    hasher.update((m.nrows() as u64).to_le_bytes());
                    hasher.update((m.ncols() as u64).to_le_bytes());
                    for &v in m.iter() {
                        hasher.update(v.to_le_bytes());
                    }
                }
                TensorRef::Vector(v) => {
                    hasher.update((v.len() as u64).to_le_bytes());
                    hasher.update(0u64.to_le_bytes());
                    for &x in v.iter() {
                        hasher.update(x.to_le_bytes());
                    }
                }
            }
        });
        crate::util::hex(&hasher.finalize())
    }

    fn own_net(&self) -> Option<&Net> {
        self.trainable_net()
    }

    fn visit_tensors<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, TensorRef<'a>)) {
        if let Some(net) = self.own_net() {
            let names = own_tensor_names(&self.config);
            let layers = net.layers();
            assert_eq!(names.len(), layers.len(), "layout must match net shape");
            for (name, layer) in names.iter().zip(layers) {
                f(format!("{prefix}{name}.w"), TensorRef::Matrix(&layer.w));
                f(format!("{prefix}{name}.b"), TensorRef::Vector(&layer.b));
            }
        }
        if let Some((to, ao)) = self.base_models() {
            to.visit_tensors(&format!("{prefix}base_to."), f);
            ao.visit_tensors(&format!("{prefix}base_ao."), f);
        }
    }
}

enum TensorRef<'a> {
    Matrix(&'a Array2<f64>),
    Vector(&'a ndarray::Array1<f64>),
}

/// Layer names in `Net::layers()` order for a head's own trainable net.
fn own_tensor_names(config: &HeadConfig) -> Vec<String> {
    let mut names = Vec::new();
    match config.architecture {
        Architecture::TO | Architecture::AO | Architecture::EF => {
            if config.architecture == Architecture::EF {
                names.push("proj_audio".to_string());
                names.push("proj_text".to_string());
            }
            let n_layers = config.trunk_dims().len() - 1;
            for i in 0..n_layers {
                names.push(format!("trunk.{i}"));
            }
        }
        Architecture::LF => names.push("combiner".to_string()),
        Architecture::AF => {}
    }
    names
}

fn row_matrix(e: &Embedding) -> Array2<f64> {
    Array2::from_shape_vec((1, EMBED_DIM), e.as_slice().to_vec()).expect("validated length")
}

/// Concatenated frozen-base logits `[to | ao]`, the late-fusion features.
pub fn base_logit_features(
    to: &HeadModel,
    ao: &HeadModel,
    audio: &Array2<f64>,
    text: &Array2<f64>,
) -> Result<Array2<f64>, HeadError> {
    let lt = to.logits_batch(None, Some(text), None)?;
    let la = ao.logits_batch(Some(audio), None, None)?;
    Ok(ndarray::concatenate(Axis(1), &[lt.view(), la.view()]).expect("same batch"))
}

/// Argmax with the documented tie-break toward NonTerminal.
pub fn label_from_logits(logits: [f64; N_CLASSES]) -> Label {
    if logits[0] > logits[1] {
        Label::Terminal
    } else {
        Label::NonTerminal
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 8] = b"TRPHEAD1";

#[derive(Debug, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    rows: usize,
    /// 0 marks a bias vector of length `rows`.
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    format_version: u32,
    config: HeadConfig,
    tensors: Vec<TensorInfo>,
    base_to: Option<Box<CheckpointMeta>>,
    base_ao: Option<Box<CheckpointMeta>>,
}

fn meta_for(model: &HeadModel) -> CheckpointMeta {
    let mut tensors = Vec::new();
    if let Some(net) = model.own_net() {
        for (name, layer) in own_tensor_names(&model.config).iter().zip(net.layers()) {
            tensors.push(TensorInfo {
                name: format!("{name}.w"),
                rows: layer.in_dim(),
                cols: layer.out_dim(),
            });
            tensors.push(TensorInfo {
                name: format!("{name}.b"),
                rows: layer.out_dim(),
                cols: 0,
            });
        }
    }
    let bases = model.base_models();
    CheckpointMeta {
        format_version: 1,
        config: model.config.clone(),
        tensors,
        base_to: bases.map(|(to, _)| Box::new(meta_for(to))),
        base_ao: bases.map(|(_, ao)| Box::new(meta_for(ao))),
    }
}

fn write_tensor_data(model: &HeadModel, out: &mut Vec<u8>) {
    if let Some(net) = model.own_net() {
        for layer in net.layers() {
            for &v in layer.w.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for &v in layer.b.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    if let Some((to, ao)) = model.base_models() {
        write_tensor_data(to, out);
        write_tensor_data(ao, out);
    }
}

impl HeadModel {
    /// Serialize to a self-describing container: magic, JSON metadata
    /// (config and tensor table, recursively for bases), then raw little-
    /// endian `f64` tensor data. Byte-identical for identical parameters.
    pub fn save_checkpoint(&self, path: &Path) -> Result<(), HeadError> {
        let meta = meta_for(self);
        let meta_json = serde_json::to_vec(&meta).expect("meta serialization cannot fail");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(CHECKPOINT_MAGIC);
        bytes.extend_from_slice(&(meta_json.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&meta_json);
        write_tensor_data(self, &mut bytes);
        crate::util::atomic_write(path, &bytes)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<HeadModel, HeadError> {
        let bad = |detail: String| HeadError::CheckpointFormat {
            path: path.display().to_string(),
            detail,
        };
        let bytes = std::fs::read(path)?;
        let mut reader = &bytes[..];
        let mut magic = [0u8; 8];
        reader
            .read_exact(&mut magic)
            .map_err(|_| bad("truncated header".into()))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("not a head checkpoint (bad magic)".into()));
        }
        let mut len_bytes = [0u8; 8];
        reader
            .read_exact(&mut len_bytes)
            .map_err(|_| bad("truncated header".into()))?;
        let meta_len = u64::from_le_bytes(len_bytes) as usize;
        if reader.len() < meta_len {
            return Err(bad("truncated metadata".into()));
        }
        let meta: CheckpointMeta = serde_json::from_slice(&reader[..meta_len])
            .map_err(|e| bad(format!("bad metadata: {e}")))?;
        reader = &reader[meta_len..];
        let model = read_model(&meta, &mut reader, &bad)?;
        if !reader.is_empty() {
            return Err(bad(format!("{} trailing bytes", reader.len())));
        }
        Ok(model)
    }
}

fn read_model(
    meta: &CheckpointMeta,
    reader: &mut &[u8],
    bad: &impl Fn(String) -> HeadError,
) -> Result<HeadModel, HeadError> {
    if meta.format_version != 1 {
        return Err(bad(format!(
            "unsupported format version {}",
            meta.format_version
        )));
    }
    // Validate the stored tensor table against what the config dictates.
    let expected = expected_tensor_table(&meta.config);
    if meta.tensors.len() != expected.len()
        || meta
            .tensors
            .iter()
            .zip(&expected)
            .any(|(got, want)| got.name != want.name || got.rows != want.rows || got.cols != want.cols)
    {
        return Err(bad(
            "tensor table does not match the stored configuration".into(),
        ));
    }
    let mut own_tensors: Vec<Vec<f64>> = Vec::with_capacity(meta.tensors.len());
    for info in &meta.tensors {
        let count = if info.cols == 0 {
            info.rows
        } else {
            info.rows * info.cols
        };
        let n_bytes = count * 8;
        if reader.len() < n_bytes {
            return Err(bad(format!("truncated tensor `{}`", info.name)));
        }
        let values = reader[..n_bytes]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        *reader = &reader[n_bytes..];
        own_tensors.push(values);
    }
    let bases = match (&meta.base_to, &meta.base_ao) {
        (Some(to_meta), Some(ao_meta)) => {
            let to = read_model(to_meta, reader, bad)?;
            let ao = read_model(ao_meta, reader, bad)?;
            Some((to, ao))
        }
        (None, None) => None,
        _ => return Err(bad("checkpoint stores only one base model".into())),
    };
    let mut model =
        init_head(&meta.config, bases).map_err(|e| bad(format!("cannot rebuild model: {e}")))?;
    if let Some(net) = model.trainable_net_mut() {
        let mut it = own_tensors.into_iter();
        for layer in net.layers_mut() {
            let w = it.next().expect("validated tensor count");
            let b = it.next().expect("validated tensor count");
            layer.w = Array2::from_shape_vec((layer.in_dim(), layer.out_dim()), w)
                .expect("validated shape");
            layer.b = ndarray::Array1::from_vec(b);
        }
    }
    Ok(model)
}

fn expected_tensor_table(config: &HeadConfig) -> Vec<TensorInfo> {
    let mut out = Vec::new();
    let names = own_tensor_names(config);
    let mut dims: Vec<(usize, usize)> = Vec::new();
    if config.architecture == Architecture::EF {
        dims.push((EMBED_DIM, config.ef_modality_dim));
        dims.push((EMBED_DIM, config.ef_modality_dim));
    }
    dims.extend(config.trunk_dims().windows(2).map(|w| (w[0], w[1])));
    for (name, (rows, cols)) in names.iter().zip(dims) {
        out.push(TensorInfo {
            name: format!("{name}.w"),
            rows,
            cols,
        });
        out.push(TensorInfo {
            name: format!("{name}.b"),
            rows: cols,
            cols: 0,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_pair(rng: &mut ChaCha8Rng) -> EmbeddingPair {
        let vec = |r: &mut ChaCha8Rng| {
            Embedding::from_vec((0..EMBED_DIM).map(|_| r.random_range(-1.0..1.0)).collect())
                .unwrap()
        };
        EmbeddingPair {
            sample_id: "x".into(),
            audio_vec: Some(vec(rng)),
            text_vec: Some(vec(rng)),
        }
    }

    fn trained_like_bases(seed: u64) -> (HeadModel, HeadModel) {
        // Initialized (not trained) bases with seeded hidden layers; output
        // layers are nudged so logits are non-trivial.
        let mut to = init_head(&HeadConfig::new(Architecture::TO).with_seed(seed), None).unwrap();
        let mut ao =
            init_head(&HeadConfig::new(Architecture::AO).with_seed(seed + 1), None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
        for model in [&mut to, &mut ao] {
            let net = model.trainable_net_mut().unwrap();
            let last = net.trunk.last_mut().unwrap();
            *last = Linear::seeded(last.in_dim(), last.out_dim(), &mut rng);
        }
        (to, ao)
    }

    fn af_head(seed: u64) -> HeadModel {
        let (to, ao) = trained_like_bases(seed);
        init_head(&HeadConfig::new(Architecture::AF), Some((to, ao))).unwrap()
    }

    #[test]
    fn layer_shapes_follow_the_configured_dims() {
        let to = init_head(&HeadConfig::new(Architecture::TO), None).unwrap();
        let shapes: Vec<(usize, usize)> = to
            .trainable_net()
            .unwrap()
            .layers()
            .iter()
            .map(|l| (l.in_dim(), l.out_dim()))
            .collect();
        assert_eq!(shapes, vec![(768, 256), (256, 64), (64, 2)]);

        let ef = init_head(&HeadConfig::new(Architecture::EF), None).unwrap();
        let shapes: Vec<(usize, usize)> = ef
            .trainable_net()
            .unwrap()
            .layers()
            .iter()
            .map(|l| (l.in_dim(), l.out_dim()))
            .collect();
        assert_eq!(
            shapes,
            vec![(768, 256), (768, 256), (512, 256), (256, 64), (64, 2)]
        );
    }

    #[test]
    fn parameter_counts_match_the_closed_form() {
        let count = |dims: &[usize]| -> usize {
            dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
        };
        let to = init_head(&HeadConfig::new(Architecture::TO), None).unwrap();
        assert_eq!(to.own_param_count(), count(&[768, 256, 64, 2]));
        assert_eq!(to.own_param_count(), 213_442);

        let ef = init_head(&HeadConfig::new(Architecture::EF), None).unwrap();
        let expected = 2 * count(&[768, 256]) + count(&[512, 256, 64, 2]);
        assert_eq!(ef.own_param_count(), expected);
        assert_eq!(ef.own_param_count(), 541_634);

        let (to, ao) = trained_like_bases(1);
        let lf = init_head(&HeadConfig::new(Architecture::LF), Some((to, ao))).unwrap();
        assert_eq!(lf.own_param_count(), 10);

        assert_eq!(af_head(1).own_param_count(), 0);
    }

    #[test]
    fn untrained_heads_emit_zero_logits_and_the_tie_break_class() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pair = random_pair(&mut rng);
        for arch in [Architecture::TO, Architecture::AO, Architecture::EF] {
            let model = init_head(&HeadConfig::new(arch), None).unwrap();
            let logits = model.forward(&pair, false, None).unwrap();
            assert_eq!(logits, [0.0, 0.0]);
            assert_eq!(model.predict(&pair).unwrap(), Label::NonTerminal);
        }
    }

    #[test]
    fn init_is_deterministic_under_seed() {
        let a = init_head(&HeadConfig::new(Architecture::EF).with_seed(3), None).unwrap();
        let b = init_head(&HeadConfig::new(Architecture::EF).with_seed(3), None).unwrap();
        let c = init_head(&HeadConfig::new(Architecture::EF).with_seed(4), None).unwrap();
        assert_eq!(a.param_hash(), b.param_hash());
        assert_ne!(a.param_hash(), c.param_hash());
    }

    #[test]
    fn average_fusion_is_the_exact_logit_mean() {
        let af = af_head(11);
        let (to, ao) = af.base_models().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let pair = random_pair(&mut rng);
            let lt = to.forward(&pair, false, None).unwrap();
            let la = ao.forward(&pair, false, None).unwrap();
            let laf = af.forward(&pair, false, None).unwrap();
            for k in 0..2 {
                assert!(((lt[k] + la[k]) / 2.0 - laf[k]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn prediction_rules_and_tie_break() {
        assert_eq!(label_from_logits([0.3, -0.3]), Label::Terminal);
        assert_eq!(label_from_logits([0.5, 0.5]), Label::NonTerminal);
        assert_eq!(label_from_logits([-1.0, 1.0]), Label::NonTerminal);
    }

    #[test]
    fn missing_modalities_are_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut pair = random_pair(&mut rng);
        pair.text_vec = None;
        let to = init_head(&HeadConfig::new(Architecture::TO), None).unwrap();
        assert!(matches!(
            to.forward(&pair, false, None),
            Err(HeadError::MissingModality {
                modality: Modality::Text,
                ..
            })
        ));
        let ao = init_head(&HeadConfig::new(Architecture::AO), None).unwrap();
        assert!(ao.forward(&pair, false, None).is_ok());
        let af = af_head(14);
        assert!(matches!(
            af.forward(&pair, false, None),
            Err(HeadError::MissingModality { .. })
        ));
    }

    #[test]
    fn bases_are_required_and_validated() {
        assert!(matches!(
            init_head(&HeadConfig::new(Architecture::LF), None),
            Err(HeadError::MissingBaseModels { .. })
        ));
        let (to, _) = trained_like_bases(15);
        let (to2, _) = trained_like_bases(16);
        assert!(matches!(
            init_head(&HeadConfig::new(Architecture::AF), Some((to, to2))),
            Err(HeadError::BadDims { .. })
        ));
    }

    #[test]
    fn training_mode_applies_dropout_and_inference_does_not() {
        let model = init_head(&HeadConfig::new(Architecture::TO).with_seed(7), None).unwrap();
        // Give the output layer weight so dropout upstream is visible.
        let mut model = model;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let net = model.trainable_net_mut().unwrap();
        let last = net.trunk.last_mut().unwrap();
        *last = Linear::seeded(last.in_dim(), last.out_dim(), &mut rng);

        let pair = random_pair(&mut rng);
        let e1 = model.forward(&pair, false, None).unwrap();
        let e2 = model.forward(&pair, false, None).unwrap();
        assert_eq!(e1, e2);
        let mut rng_a = ChaCha8Rng::seed_from_u64(100);
        let mut rng_b = ChaCha8Rng::seed_from_u64(100);
        let t1 = model.forward(&pair, true, Some(&mut rng_a)).unwrap();
        let t2 = model.forward(&pair, true, Some(&mut rng_b)).unwrap();
        assert_eq!(t1, t2, "same rng state, same masks");
        let t3 = model.forward(&pair, true, Some(&mut rng_a)).unwrap();
        assert_ne!(t1, t3, "fresh masks change training-mode output");
    }

    #[test]
    fn checkpoints_round_trip_byte_identically() {
        let dir = tempfile::tempdir().unwrap();
        let (to, ao) = trained_like_bases(21);
        let lf = init_head(&HeadConfig::new(Architecture::LF).with_seed(2), Some((to, ao)))
            .unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        lf.save_checkpoint(&p1).unwrap();
        lf.save_checkpoint(&p2).unwrap();
        let b1 = std::fs::read(&p1).unwrap();
        let b2 = std::fs::read(&p2).unwrap();
        assert_eq!(b1, b2, "same model saves byte-identically");

        let loaded = HeadModel::load_checkpoint(&p1).unwrap();
        assert_eq!(loaded.param_hash(), lf.param_hash());
        let p3 = dir.path().join("c.ckpt");
        loaded.save_checkpoint(&p3).unwrap();
        assert_eq!(std::fs::read(&p3).unwrap(), b1, "load∘save is the identity");

        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let pair = random_pair(&mut rng);
        assert_eq!(
            lf.forward(&pair, false, None).unwrap(),
            loaded.forward(&pair, false, None).unwrap()
        );
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(matches!(
            HeadModel::load_checkpoint(&path),
            Err(HeadError::CheckpointFormat { .. })
        ));
        // Truncated tensor data.
        let to = init_head(&HeadConfig::new(Architecture::TO), None).unwrap();
        let good = dir.path().join("good.ckpt");
        to.save_checkpoint(&good).unwrap();
        let bytes = std::fs::read(&good).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 100]).unwrap();
        assert!(matches!(
            HeadModel::load_checkpoint(&path),
            Err(HeadError::CheckpointFormat { .. })
        ));
    }

    #[test]
    fn logit_shift_leaves_decisions_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        for _ in 0..100 {
            let l0 = rng.random_range(-2.0..2.0);
            let l1 = rng.random_range(-2.0..2.0);
            let k = rng.random_range(-5.0..5.0);
            assert_eq!(
                label_from_logits([l0, l1]),
                label_from_logits([l0 + k, l1 + k])
            );
        }
    }
}
