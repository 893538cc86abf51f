//! Model bundle for the workbench: dimension configuration, initialization,
//! checkpoint IO, embedding-store ingestion, and the shared evaluation-space
//! helpers (decoded-feature extractor and text co-embedder).

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use mrwb_core::codec::{Codec, CodecConfig, MotionFeatureSequence, MotionTokenSequence};
use mrwb_core::embedstore::{Channel, EmbeddingRecord, Store};
use mrwb_core::encoders::{
    ActionEncoder, ActionEncoderConfig, ObjectEncoder, ObjectEncoderConfig, TextChannel,
    TextEncoder, TextEncoderConfig,
};
use mrwb_core::fusion::{GateMode, Retrievers, Router};
use mrwb_core::mcdpo::{MotionFeatureExtractor, TextEmbedder};
use mrwb_core::policy::{ContextAssembler, ContextConfig, PolicyConfig, TokenPolicy};
use mrwb_core::tensors::ParamSet;
use mrwb_core::{Error, Result};

use crate::config::Config;
use crate::data::{Corpus, CONTEXT_CAP};

/// All cross-module dimensions, resolved once from configuration.
#[derive(Debug, Clone)]
pub struct Dims {
    pub vocab: usize,
    pub joints: usize,
    pub keypoint_frames: usize,
    pub d_frame: usize,
    pub d_motion: usize,
    pub d_emb: usize,
    pub enc_width: usize,
    pub enc_heads: usize,
    pub enc_layers: usize,
    pub num_codes: usize,
    pub code_dim: usize,
    pub window: usize,
    pub segments: usize,
    pub d_context: usize,
    pub policy_embed: usize,
    pub policy_hidden: usize,
    pub policy_window: usize,
    pub max_len: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Self {
            vocab: 32,
            joints: 4,
            keypoint_frames: 8,
            d_frame: 12,
            d_motion: 8,
            d_emb: 16,
            enc_width: 16,
            enc_heads: 2,
            enc_layers: 1,
            num_codes: 16,
            code_dim: 8,
            window: 3,
            segments: 4,
            d_context: 16,
            policy_embed: 8,
            policy_hidden: 16,
            policy_window: 4,
            max_len: 16,
        }
    }
}

impl Dims {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let d = Self::default();
        Ok(Self {
            vocab: cfg.get_usize("vocab", d.vocab)?,
            joints: cfg.get_usize("joints", d.joints)?,
            keypoint_frames: cfg.get_usize("keypoint_frames", d.keypoint_frames)?,
            d_frame: cfg.get_usize("d_frame", d.d_frame)?,
            d_motion: cfg.get_usize("d_motion", d.d_motion)?,
            d_emb: cfg.get_usize("d_emb", d.d_emb)?,
            enc_width: cfg.get_usize("enc_width", d.enc_width)?,
            enc_heads: cfg.get_usize("enc_heads", d.enc_heads)?,
            enc_layers: cfg.get_usize("enc_layers", d.enc_layers)?,
            num_codes: cfg.get_usize("num_codes", d.num_codes)?,
            code_dim: cfg.get_usize("code_dim", d.code_dim)?,
            window: cfg.get_usize("vq_window", d.window)?,
            segments: cfg.get_usize("segments", d.segments)?,
            d_context: cfg.get_usize("d_context", d.d_context)?,
            policy_embed: cfg.get_usize("policy_embed", d.policy_embed)?,
            policy_hidden: cfg.get_usize("policy_hidden", d.policy_hidden)?,
            policy_window: cfg.get_usize("policy_window", d.policy_window)?,
            max_len: cfg.get_usize("max_len", d.max_len)?,
        })
    }

    pub fn action_config(&self) -> ActionEncoderConfig {
        ActionEncoderConfig {
            joints: self.joints,
            max_frames: self.keypoint_frames,
            width: self.enc_width,
            heads: self.enc_heads,
            layers: self.enc_layers,
            d_emb: self.d_emb,
            ff_mult: 2,
            whole_skip: false,
        }
    }

    pub fn text_config(&self) -> TextEncoderConfig {
        TextEncoderConfig {
            vocab: self.vocab,
            d_model: self.enc_width,
            d_emb: self.d_emb,
            context_cap: CONTEXT_CAP,
        }
    }

    pub fn object_config(&self) -> ObjectEncoderConfig {
        ObjectEncoderConfig { d_frame: self.d_frame, d_emb: self.d_emb }
    }

    pub fn codec_config(&self) -> CodecConfig {
        CodecConfig {
            num_codes: self.num_codes,
            code_dim: self.code_dim,
            d_motion: self.d_motion,
            window: self.window,
            ..CodecConfig::default()
        }
    }

    pub fn context_config(&self) -> ContextConfig {
        ContextConfig {
            d_text: self.d_emb,
            d_segment: self.d_frame,
            segments: self.segments,
            d_context: self.d_context,
        }
    }

    pub fn policy_config(&self) -> PolicyConfig {
        PolicyConfig {
            num_codes: self.num_codes,
            d_embed: self.policy_embed,
            d_context: self.d_context,
            hidden: self.policy_hidden,
            window: self.policy_window,
            max_len: self.max_len,
        }
    }
}

/// Checkpoint and store paths under one artifact directory.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub dir: PathBuf,
}

impl Artifacts {
    pub fn new(dir: &Path) -> Self {
        Self { dir: dir.to_path_buf() }
    }

    pub fn action_ckpt(&self) -> PathBuf {
        self.dir.join("action.ckpt")
    }
    pub fn predicate_ckpt(&self) -> PathBuf {
        self.dir.join("predicate.ckpt")
    }
    pub fn object_ckpt(&self) -> PathBuf {
        self.dir.join("object.ckpt")
    }
    pub fn argument_ckpt(&self) -> PathBuf {
        self.dir.join("argument.ckpt")
    }
    pub fn router_ckpt(&self) -> PathBuf {
        self.dir.join("router.ckpt")
    }
    pub fn codec_ckpt(&self) -> PathBuf {
        self.dir.join("codec.ckpt")
    }
    pub fn policy_sft_ckpt(&self) -> PathBuf {
        self.dir.join("policy_sft.ckpt")
    }
    pub fn policy_dpo_ckpt(&self) -> PathBuf {
        self.dir.join("policy_dpo.ckpt")
    }
    pub fn action_store(&self) -> PathBuf {
        self.dir.join("store.action")
    }
    pub fn object_store(&self) -> PathBuf {
        self.dir.join("store.object")
    }
}

/// Fixed seed for the (untrained) context assembler so every command builds
/// identical contexts.
const ASSEMBLER_SEED: u64 = 0xC0;

pub fn init_retrievers(dims: &Dims, seed: u64) -> Result<Retrievers> {
    Ok(Retrievers {
        action: ActionEncoder::init(dims.action_config(), seed)?,
        predicate: TextEncoder::init(dims.text_config(), TextChannel::Predicate, seed + 1)?,
        object: ObjectEncoder::init(dims.object_config(), seed + 2)?,
        argument: TextEncoder::init(dims.text_config(), TextChannel::Argument, seed + 3)?,
    })
}

pub fn make_assembler(dims: &Dims) -> Result<ContextAssembler> {
    ContextAssembler::init(dims.context_config(), ASSEMBLER_SEED)
}

/// Load a checkpoint into a parameter set, demanding an identical layout.
pub fn load_params_into(params: &mut ParamSet, path: &Path, stage: &str) -> Result<()> {
    let loaded = ParamSet::load(path).map_err(|e| {
        Error::InvalidInput(format!("missing or unreadable checkpoint for stage '{stage}' at {}: {e}", path.display()))
    })?;
    if !loaded.same_layout(params) {
        return Err(Error::Format(format!(
            "checkpoint {} does not match the configured model layout",
            path.display()
        )));
    }
    params.flat_mut().copy_from_slice(loaded.flat());
    Ok(())
}

pub fn save_retrievers(r: &Retrievers, art: &Artifacts) -> Result<()> {
    r.action.params.save(&art.action_ckpt())?;
    r.predicate.params.save(&art.predicate_ckpt())?;
    r.object.params.save(&art.object_ckpt())?;
    r.argument.params.save(&art.argument_ckpt())?;
    Ok(())
}

pub fn load_retrievers(dims: &Dims, art: &Artifacts) -> Result<Retrievers> {
    let mut r = init_retrievers(dims, 0)?;
    load_params_into(&mut r.action.params, &art.action_ckpt(), "train-retriever")?;
    load_params_into(&mut r.predicate.params, &art.predicate_ckpt(), "train-retriever")?;
    load_params_into(&mut r.object.params, &art.object_ckpt(), "train-retriever")?;
    load_params_into(&mut r.argument.params, &art.argument_ckpt(), "train-retriever")?;
    Ok(r)
}

pub fn load_router(dims: &Dims, art: &Artifacts) -> Result<Router> {
    let mut router = Router::init(dims.d_emb, GateMode::Softmax, 0)?;
    load_params_into(&mut router.params, &art.router_ckpt(), "train-integrator")?;
    Ok(router)
}

pub fn load_codec(dims: &Dims, art: &Artifacts) -> Result<Codec> {
    let mut codec = Codec::init(dims.codec_config(), 0)?;
    load_params_into(&mut codec.params, &art.codec_ckpt(), "train-vq")?;
    Ok(codec)
}

pub fn load_policy(dims: &Dims, path: &Path, stage: &str) -> Result<TokenPolicy> {
    let mut policy = TokenPolicy::init(dims.policy_config(), 0)?;
    load_params_into(&mut policy.params, path, stage)?;
    Ok(policy)
}

/// Encode every corpus video through both channels into paired stores with
/// matching ids.
pub fn build_stores(r: &Retrievers, corpus: &Corpus, art: &Artifacts) -> Result<(Store, Store)> {
    for path in [art.action_store(), art.object_store()] {
        let _ = std::fs::remove_file(&path);
        let _ = std::fs::remove_file(path.with_extension(
            path.extension().map(|e| format!("{}.ids", e.to_string_lossy())).unwrap_or_default(),
        ));
        let ids = PathBuf::from(format!("{}.ids", path.display()));
        let _ = std::fs::remove_file(ids);
    }
    let d_emb = r.action.config.d_emb;
    let mut action = Store::create(&art.action_store(), d_emb)?;
    let mut object = Store::create(&art.object_store(), d_emb)?;
    for s in &corpus.samples {
        action.append(EmbeddingRecord {
            id: s.id.clone(),
            channel: Channel::Action,
            vector: r.action.encode(&s.keypoints)?,
        })?;
        object.append(EmbeddingRecord {
            id: s.id.clone(),
            channel: Channel::Object,
            vector: r.object.encode(&s.frames)?,
        })?;
    }
    Ok((action, object))
}

pub fn open_stores(art: &Artifacts) -> Result<(Store, Store)> {
    let action = Store::open(&art.action_store())
        .map_err(|e| Error::InvalidInput(format!("missing store for stage 'ingest': {e}")))?;
    let object = Store::open(&art.object_store())
        .map_err(|e| Error::InvalidInput(format!("missing store for stage 'ingest': {e}")))?;
    Ok((action, object))
}

/// Mean frame of a motion feature sequence: the per-sample vector all
/// evaluation metrics operate on.
pub fn pooled(seq: &MotionFeatureSequence) -> Vec<f64> {
    let d = seq.d;
    let mut out = vec![0.0; d];
    for t in 0..seq.frames() {
        for (o, &x) in out.iter_mut().zip(seq.frame(t)) {
            *o += x;
        }
    }
    for o in &mut out {
        *o /= seq.frames() as f64;
    }
    out
}

/// Decoded-feature extractor: token sequences are mapped into the
/// evaluation space by the trained codec's decoder.
pub struct CodecExtractor<'a>(pub &'a Codec);

impl MotionFeatureExtractor for CodecExtractor<'_> {
    fn extract(&self, tokens: &MotionTokenSequence) -> Result<MotionFeatureSequence> {
        self.0.decode(tokens)
    }
}

/// Text co-embedder into the motion feature space: ridge regression from a
/// bag-of-tokens representation onto each sample's pooled motion feature.
/// Fitting is deterministic and uses only the shared sample ids, never the
/// retrieval pairing file.
#[derive(Debug, Clone)]
pub struct TextEvaluator {
    vocab: usize,
    d: usize,
    /// vocab x d, row-major
    w: Vec<f64>,
}

impl TextEvaluator {
    pub fn fit(corpus: &Corpus) -> Result<Self> {
        if corpus.samples.is_empty() {
            return Err(Error::InvalidInput("cannot fit a text evaluator on an empty corpus".into()));
        }
        let vocab = corpus.vocab;
        let d = corpus.samples[0].motion.d;
        let n = corpus.samples.len();
        let mut x = DMatrix::zeros(n, vocab);
        let mut y = DMatrix::zeros(n, d);
        for (i, s) in corpus.samples.iter().enumerate() {
            for &t in s.text.ids() {
                x[(i, t)] += 1.0 / s.text.ids().len() as f64;
            }
            for (j, v) in pooled(&s.motion).into_iter().enumerate() {
                y[(i, j)] = v;
            }
        }
        let xtx = x.transpose() * &x + DMatrix::identity(vocab, vocab) * 1e-3;
        let xty = x.transpose() * y;
        let w = xtx
            .lu()
            .solve(&xty)
            .ok_or_else(|| Error::Numeric("text evaluator normal equations are singular".into()))?;
        let mut flat = vec![0.0; vocab * d];
        for i in 0..vocab {
            for j in 0..d {
                flat[i * d + j] = w[(i, j)];
            }
        }
        Ok(Self { vocab, d, w: flat })
    }

    pub fn embed_tokens(&self, ids: &[usize]) -> Result<Vec<f64>> {
        if ids.is_empty() {
            return Err(Error::InvalidInput("cannot embed an empty token list".into()));
        }
        let mut out = vec![0.0; self.d];
        for &t in ids {
            if t >= self.vocab {
                return Err(Error::InvalidInput(format!("token {t} outside vocabulary {}", self.vocab)));
            }
            for j in 0..self.d {
                out[j] += self.w[t * self.d + j] / ids.len() as f64;
            }
        }
        Ok(out)
    }
}

/// Token-id text keys ("3 9 17") let the reward model embed captions
/// without any lookup table.
impl TextEmbedder for TextEvaluator {
    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let ids: Vec<usize> = text
            .split(' ')
            .filter(|t| !t.is_empty())
            .map(|t| t.parse().map_err(|_| Error::Format(format!("bad token '{t}' in text key"))))
            .collect::<Result<_>>()?;
        self.embed_tokens(&ids)
    }
}

/// Token-id key for a sample's caption, as consumed by [`TextEvaluator`].
pub fn text_key(ids: &[usize]) -> String {
    ids.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}
