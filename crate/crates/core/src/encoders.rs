//! Desk-scale differentiable encoders producing unit-norm embeddings with
//! exact analytic gradients.
//!
//! The action encoder is a pre-normalization transformer over per-frame
//! keypoint projections with learnable position embeddings, per-block
//! residuals (plus an optional whole-encoder skip), mean pooling and a final
//! projection. Text encoders are embedding-bag + projection; the object
//! encoder is mean pooling + projection. Every forward returns a cache that
//! the matching backward consumes, so a backward without a forward cannot be
//! expressed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mat::{
    l2_normalize, l2_normalize_backward, matmul, matmul_a_bt_acc, matmul_acc, matmul_at_b_acc,
    softmax_rows, softmax_rows_backward,
};
use crate::opt::init_uniform;
use crate::tensors::ParamSet;

const LN_EPS: f64 = 1e-5;

/// Per-frame 2D human keypoints, coordinates in [-1, 1].
#[derive(Debug, Clone)]
pub struct KeypointSequence {
    joints: usize,
    /// frames x joints x 2, row-major
    coords: Vec<f64>,
    confidence: Option<Vec<f64>>,
}

impl KeypointSequence {
    pub fn new(joints: usize, coords: Vec<f64>, confidence: Option<Vec<f64>>) -> Result<Self> {
        if joints == 0 {
            return Err(Error::InvalidInput("joint count must be >= 1".into()));
        }
        let per_frame = joints * 2;
        if coords.is_empty() || coords.len() % per_frame != 0 {
            return Err(Error::InvalidInput(format!(
                "coordinate length {} is not a positive multiple of joints*2 = {per_frame}",
                coords.len()
            )));
        }
        if !coords.iter().all(|c| c.is_finite() && (-1.0..=1.0).contains(c)) {
            return Err(Error::InvalidInput("keypoint coordinates must be finite and in [-1, 1]".into()));
        }
        let frames = coords.len() / per_frame;
        if let Some(conf) = &confidence {
            if conf.len() != frames * joints {
                return Err(Error::InvalidInput("confidence length must be frames*joints".into()));
            }
            if !conf.iter().all(|c| (0.0..=1.0).contains(c)) {
                return Err(Error::InvalidInput("confidence values must be in [0, 1]".into()));
            }
        }
        Ok(Self { joints, coords, confidence })
    }

    pub fn frames(&self) -> usize {
        self.coords.len() / (self.joints * 2)
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        let per = self.joints * 2;
        &self.coords[i * per..(i + 1) * per]
    }

    pub fn confidence(&self) -> Option<&[f64]> {
        self.confidence.as_deref()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }
}

/// Token ids bounded by a vocabulary and context cap.
#[derive(Debug, Clone)]
pub struct TokenizedText {
    ids: Vec<usize>,
}

impl TokenizedText {
    pub fn new(ids: Vec<usize>, vocab: usize, context_cap: usize) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::InvalidInput("text must hold at least one token".into()));
        }
        if ids.len() > context_cap {
            return Err(Error::InvalidInput(format!(
                "text length {} exceeds context cap {context_cap}",
                ids.len()
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&t| t >= vocab) {
            return Err(Error::InvalidInput(format!("token id {bad} outside vocabulary {vocab}")));
        }
        Ok(Self { ids })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }
}

/// Precomputed per-frame visual features, m x d_frame.
#[derive(Debug, Clone)]
pub struct FrameFeatureSequence {
    d_frame: usize,
    data: Vec<f64>,
}

impl FrameFeatureSequence {
    pub fn new(d_frame: usize, data: Vec<f64>) -> Result<Self> {
        if d_frame == 0 || data.is_empty() || data.len() % d_frame != 0 {
            return Err(Error::InvalidInput("frame features must be a positive m x d_frame block".into()));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("frame features must be finite".into()));
        }
        Ok(Self { d_frame, data })
    }

    pub fn frames(&self) -> usize {
        self.data.len() / self.d_frame
    }

    pub fn d_frame(&self) -> usize {
        self.d_frame
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        &self.data[i * self.d_frame..(i + 1) * self.d_frame]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Action (temporal transformer) encoder configuration.
#[derive(Debug, Clone)]
pub struct ActionEncoderConfig {
    pub joints: usize,
    pub max_frames: usize,
    pub width: usize,
    pub heads: usize,
    pub layers: usize,
    pub d_emb: usize,
    pub ff_mult: usize,
    /// Additionally add the embedded input back onto the final block output.
    pub whole_skip: bool,
}

impl Default for ActionEncoderConfig {
    fn default() -> Self {
        // Desk scale; see `full_scale` for the full-size constants.
        Self {
            joints: 17,
            max_frames: 16,
            width: 64,
            heads: 4,
            layers: 2,
            d_emb: 32,
            ff_mult: 2,
            whole_skip: false,
        }
    }
}

impl ActionEncoderConfig {
    /// Full-size configuration: 4 layers, 12 heads, width 768.
    pub fn full_scale() -> Self {
        Self {
            joints: 17,
            max_frames: 16,
            width: 768,
            heads: 12,
            layers: 4,
            d_emb: 768,
            ff_mult: 4,
            whole_skip: false,
        }
    }
}

pub struct ActionEncoder {
    pub config: ActionEncoderConfig,
    pub params: ParamSet,
}

struct LnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

struct BlockCache {
    ln1: LnCache,
    ln1_out: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// per-head attention probabilities, each m x m
    probs: Vec<Vec<f64>>,
    head_cat: Vec<f64>,
    ln2: LnCache,
    ln2_out: Vec<f64>,
    h1: Vec<f64>,
}

pub struct ActionCache {
    frames: usize,
    blocks: Vec<BlockCache>,
    pooled: Vec<f64>,
    out: Vec<f64>,
    norm: f64,
}

impl ActionEncoder {
    pub fn init(config: ActionEncoderConfig, seed: u64) -> Result<Self> {
        if config.width % config.heads != 0 {
            return Err(Error::InvalidInput(format!(
                "head count {} must divide width {}",
                config.heads, config.width
            )));
        }
        let in_dim = config.joints * 2;
        let w = config.width;
        let ff = w * config.ff_mult;
        let mut params = ParamSet::new();
        params.add("frame_proj.w", &[in_dim, w])?;
        params.add("frame_proj.b", &[w])?;
        params.add("pos_embed", &[config.max_frames, w])?;
        for l in 0..config.layers {
            params.add(&format!("block{l}.ln1.g"), &[w])?;
            params.add(&format!("block{l}.ln1.b"), &[w])?;
            for name in ["wq", "wk", "wv", "wo"] {
                params.add(&format!("block{l}.attn.{name}"), &[w, w])?;
            }
            // No key bias: a constant shift of every key leaves the row
            // softmax unchanged, so it would be an untrainable parameter.
            for name in ["bq", "bv", "bo"] {
                params.add(&format!("block{l}.attn.{name}"), &[w])?;
            }
            params.add(&format!("block{l}.ln2.g"), &[w])?;
            params.add(&format!("block{l}.ln2.b"), &[w])?;
            params.add(&format!("block{l}.ffn.w1"), &[w, ff])?;
            params.add(&format!("block{l}.ffn.b1"), &[ff])?;
            params.add(&format!("block{l}.ffn.w2"), &[ff, w])?;
            params.add(&format!("block{l}.ffn.b2"), &[w])?;
        }
        params.add("out_proj.w", &[w, config.d_emb])?;
        params.add("out_proj.b", &[config.d_emb])?;

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        init_uniform(&mut rng, params.get_mut("frame_proj.w")?, in_dim);
        init_uniform(&mut rng, params.get_mut("pos_embed")?, w);
        for l in 0..config.layers {
            params.get_mut(&format!("block{l}.ln1.g"))?.fill(1.0);
            params.get_mut(&format!("block{l}.ln2.g"))?.fill(1.0);
            for name in ["wq", "wk", "wv", "wo"] {
                init_uniform(&mut rng, params.get_mut(&format!("block{l}.attn.{name}"))?, w);
            }
            init_uniform(&mut rng, params.get_mut(&format!("block{l}.ffn.w1"))?, w);
            init_uniform(&mut rng, params.get_mut(&format!("block{l}.ffn.w2"))?, ff);
        }
        init_uniform(&mut rng, params.get_mut("out_proj.w")?, w);
        Ok(Self { config, params })
    }

    pub fn encode(&self, seq: &KeypointSequence) -> Result<Vec<f64>> {
        Ok(self.forward(seq)?.0)
    }

    pub fn forward(&self, seq: &KeypointSequence) -> Result<(Vec<f64>, ActionCache)> {
        if seq.joints() != self.config.joints {
            return Err(Error::InvalidInput(format!(
                "sequence has {} joints, encoder expects {}",
                seq.joints(),
                self.config.joints
            )));
        }
        let m = seq.frames();
        if m > self.config.max_frames {
            return Err(Error::InvalidInput(format!(
                "frame count {m} exceeds position-embedding table of {}",
                self.config.max_frames
            )));
        }
        let w = self.config.width;
        let in_dim = self.config.joints * 2;
        let pos = self.params.get("pos_embed")?;
        let wp = self.params.get("frame_proj.w")?;
        let bp = self.params.get("frame_proj.b")?;

        let mut x = vec![0.0; m * w];
        for i in 0..m {
            let row = &mut x[i * w..(i + 1) * w];
            row.copy_from_slice(&pos[i * w..(i + 1) * w]);
            for j in 0..w {
                row[j] += bp[j];
            }
            let frame = seq.frame(i);
            for p in 0..in_dim {
                let fv = frame[p];
                if fv == 0.0 {
                    continue;
                }
                for j in 0..w {
                    row[j] += fv * wp[p * w + j];
                }
            }
        }
        let frame_inputs = x.clone();

        let mut blocks = Vec::with_capacity(self.config.layers);
        for l in 0..self.config.layers {
            let (next, cache) = self.block_forward(l, &x, m)?;
            blocks.push(cache);
            x = next;
        }
        if self.config.whole_skip {
            for (xv, fv) in x.iter_mut().zip(&frame_inputs) {
                *xv += fv;
            }
        }

        let mut pooled = vec![0.0; w];
        for i in 0..m {
            for j in 0..w {
                pooled[j] += x[i * w + j];
            }
        }
        pooled.iter_mut().for_each(|v| *v /= m as f64);

        let wo = self.params.get("out_proj.w")?;
        let bo = self.params.get("out_proj.b")?;
        let mut proj = bo.to_vec();
        matmul_acc(&mut proj, &pooled, wo, 1, w, self.config.d_emb);
        let (out, norm) = l2_normalize(&proj);
        let cache = ActionCache { frames: m, blocks, pooled, out: out.clone(), norm };
        Ok((out, cache))
    }

    fn block_forward(&self, l: usize, x_in: &[f64], m: usize) -> Result<(Vec<f64>, BlockCache)> {
        let w = self.config.width;
        let heads = self.config.heads;
        let dh = w / heads;
        let ff = w * self.config.ff_mult;
        let p = &self.params;
        let g1 = p.get(&format!("block{l}.ln1.g"))?;
        let b1 = p.get(&format!("block{l}.ln1.b"))?;
        let (ln1_out, ln1) = layer_norm(x_in, g1, b1, m, w);

        let mut q = p.get(&format!("block{l}.attn.bq"))?.repeat(m);
        let mut k = vec![0.0; m * w];
        let mut v = p.get(&format!("block{l}.attn.bv"))?.repeat(m);
        matmul_acc(&mut q, &ln1_out, p.get(&format!("block{l}.attn.wq"))?, m, w, w);
        matmul_acc(&mut k, &ln1_out, p.get(&format!("block{l}.attn.wk"))?, m, w, w);
        matmul_acc(&mut v, &ln1_out, p.get(&format!("block{l}.attn.wv"))?, m, w, w);

        let scale = 1.0 / (dh as f64).sqrt();
        let mut probs = Vec::with_capacity(heads);
        let mut head_cat = vec![0.0; m * w];
        for h in 0..heads {
            let qh = head_slice(&q, m, w, h, dh);
            let kh = head_slice(&k, m, w, h, dh);
            let vh = head_slice(&v, m, w, h, dh);
            let mut scores = vec![0.0; m * m];
            matmul_a_bt_acc(&mut scores, &qh, &kh, m, dh, m);
            scores.iter_mut().for_each(|s| *s *= scale);
            softmax_rows(&mut scores, m, m);
            let head_out = matmul(&scores, &vh, m, m, dh);
            for i in 0..m {
                head_cat[i * w + h * dh..i * w + (h + 1) * dh]
                    .copy_from_slice(&head_out[i * dh..(i + 1) * dh]);
            }
            probs.push(scores);
        }
        let mut attn_out = p.get(&format!("block{l}.attn.bo"))?.repeat(m);
        matmul_acc(&mut attn_out, &head_cat, p.get(&format!("block{l}.attn.wo"))?, m, w, w);

        let mut x_mid = x_in.to_vec();
        for (xv, av) in x_mid.iter_mut().zip(&attn_out) {
            *xv += av;
        }

        let g2 = p.get(&format!("block{l}.ln2.g"))?;
        let b2 = p.get(&format!("block{l}.ln2.b"))?;
        let (ln2_out, ln2) = layer_norm(&x_mid, g2, b2, m, w);

        let mut h1 = p.get(&format!("block{l}.ffn.b1"))?.repeat(m);
        matmul_acc(&mut h1, &ln2_out, p.get(&format!("block{l}.ffn.w1"))?, m, w, ff);
        h1.iter_mut().for_each(|v| *v = v.tanh());
        let mut ffn_out = p.get(&format!("block{l}.ffn.b2"))?.repeat(m);
        matmul_acc(&mut ffn_out, &h1, p.get(&format!("block{l}.ffn.w2"))?, m, ff, w);

        let mut x_out = x_mid.clone();
        for (xv, fv) in x_out.iter_mut().zip(&ffn_out) {
            *xv += fv;
        }
        let cache = BlockCache {
            ln1,
            ln1_out,
            q,
            k,
            v,
            probs,
            head_cat,
            ln2,
            ln2_out,
            h1,
        };
        Ok((x_out, cache))
    }

    /// Exact parameter gradients for the recorded forward pass.
    pub fn backward(&self, seq: &KeypointSequence, cache: &ActionCache, d_out: &[f64]) -> Result<ParamSet> {
        let w = self.config.width;
        let m = cache.frames;
        let mut grads = self.params.zeros_like();

        let d_proj = l2_normalize_backward(&cache.out, d_out, cache.norm);
        {
            let gw = grads.get_mut("out_proj.w")?;
            for i in 0..w {
                for j in 0..self.config.d_emb {
                    gw[i * self.config.d_emb + j] += cache.pooled[i] * d_proj[j];
                }
            }
        }
        for (gb, dp) in grads.get_mut("out_proj.b")?.iter_mut().zip(&d_proj) {
            *gb += dp;
        }
        let wo = self.params.get("out_proj.w")?;
        let mut d_pooled = vec![0.0; w];
        matmul_a_bt_acc(&mut d_pooled, &d_proj, wo, 1, self.config.d_emb, w);

        let mut dx = vec![0.0; m * w];
        for i in 0..m {
            for j in 0..w {
                dx[i * w + j] = d_pooled[j] / m as f64;
            }
        }
        let mut d_frame_inputs = vec![0.0; m * w];
        if self.config.whole_skip {
            d_frame_inputs.copy_from_slice(&dx);
        }

        for l in (0..self.config.layers).rev() {
            dx = self.block_backward(l, &cache.blocks[l], &dx, m, &mut grads)?;
        }
        for (dv, dxv) in d_frame_inputs.iter_mut().zip(&dx) {
            *dv += dxv;
        }

        let in_dim = self.config.joints * 2;
        {
            let gp = grads.get_mut("pos_embed")?;
            for i in 0..m {
                for j in 0..w {
                    gp[i * w + j] += d_frame_inputs[i * w + j];
                }
            }
        }
        {
            let gb = grads.get_mut("frame_proj.b")?;
            for i in 0..m {
                for j in 0..w {
                    gb[j] += d_frame_inputs[i * w + j];
                }
            }
        }
        {
            let gw = grads.get_mut("frame_proj.w")?;
            for i in 0..m {
                let frame = seq.frame(i);
                for p in 0..in_dim {
                    let fv = frame[p];
                    if fv == 0.0 {
                        continue;
                    }
                    for j in 0..w {
                        gw[p * w + j] += fv * d_frame_inputs[i * w + j];
                    }
                }
            }
        }
        Ok(grads)
    }

    fn block_backward(
        &self,
        l: usize,
        cache: &BlockCache,
        dx_out: &[f64],
        m: usize,
        grads: &mut ParamSet,
    ) -> Result<Vec<f64>> {
        let w = self.config.width;
        let heads = self.config.heads;
        let dh = w / heads;
        let ff = w * self.config.ff_mult;
        let p = &self.params;

        // FFN branch
        let d_ffn_out = dx_out;
        matmul_at_b_acc(grads.get_mut(&format!("block{l}.ffn.w2"))?, &cache.h1, d_ffn_out, m, ff, w);
        col_sum_acc(grads.get_mut(&format!("block{l}.ffn.b2"))?, d_ffn_out, m, w);
        let mut dh1 = vec![0.0; m * ff];
        matmul_a_bt_acc(&mut dh1, d_ffn_out, p.get(&format!("block{l}.ffn.w2"))?, m, w, ff);
        for (d, h) in dh1.iter_mut().zip(&cache.h1) {
            *d *= 1.0 - h * h;
        }
        matmul_at_b_acc(grads.get_mut(&format!("block{l}.ffn.w1"))?, &cache.ln2_out, &dh1, m, w, ff);
        col_sum_acc(grads.get_mut(&format!("block{l}.ffn.b1"))?, &dh1, m, ff);
        let mut d_ln2_out = vec![0.0; m * w];
        matmul_a_bt_acc(&mut d_ln2_out, &dh1, p.get(&format!("block{l}.ffn.w1"))?, m, ff, w);

        let g2 = p.get(&format!("block{l}.ln2.g"))?;
        let (d_xmid_ln, dg2, db2) = layer_norm_backward(&d_ln2_out, g2, &cache.ln2, m, w);
        acc(grads.get_mut(&format!("block{l}.ln2.g"))?, &dg2);
        acc(grads.get_mut(&format!("block{l}.ln2.b"))?, &db2);
        let mut d_xmid = dx_out.to_vec();
        acc(&mut d_xmid, &d_xmid_ln);

        // Attention branch
        let d_attn_out = &d_xmid;
        matmul_at_b_acc(grads.get_mut(&format!("block{l}.attn.wo"))?, &cache.head_cat, d_attn_out, m, w, w);
        col_sum_acc(grads.get_mut(&format!("block{l}.attn.bo"))?, d_attn_out, m, w);
        let mut d_headcat = vec![0.0; m * w];
        matmul_a_bt_acc(&mut d_headcat, d_attn_out, p.get(&format!("block{l}.attn.wo"))?, m, w, w);

        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = vec![0.0; m * w];
        let mut dk = vec![0.0; m * w];
        let mut dv = vec![0.0; m * w];
        for h in 0..heads {
            let qh = head_slice(&cache.q, m, w, h, dh);
            let kh = head_slice(&cache.k, m, w, h, dh);
            let vh = head_slice(&cache.v, m, w, h, dh);
            let d_headout = head_slice(&d_headcat, m, w, h, dh);
            let probs = &cache.probs[h];
            let mut d_probs = vec![0.0; m * m];
            matmul_a_bt_acc(&mut d_probs, &d_headout, &vh, m, dh, m);
            let mut dvh = vec![0.0; m * dh];
            matmul_at_b_acc(&mut dvh, probs, &d_headout, m, m, dh);
            let mut d_scores = softmax_rows_backward(probs, &d_probs, m, m);
            d_scores.iter_mut().for_each(|s| *s *= scale);
            let mut dqh = vec![0.0; m * dh];
            matmul_acc(&mut dqh, &d_scores, &kh, m, m, dh);
            let mut dkh = vec![0.0; m * dh];
            matmul_at_b_acc(&mut dkh, &d_scores, &qh, m, m, dh);
            for i in 0..m {
                dq[i * w + h * dh..i * w + (h + 1) * dh].copy_from_slice(&dqh[i * dh..(i + 1) * dh]);
                dk[i * w + h * dh..i * w + (h + 1) * dh].copy_from_slice(&dkh[i * dh..(i + 1) * dh]);
                dv[i * w + h * dh..i * w + (h + 1) * dh].copy_from_slice(&dvh[i * dh..(i + 1) * dh]);
            }
        }
        matmul_at_b_acc(grads.get_mut(&format!("block{l}.attn.wq"))?, &cache.ln1_out, &dq, m, w, w);
        matmul_at_b_acc(grads.get_mut(&format!("block{l}.attn.wk"))?, &cache.ln1_out, &dk, m, w, w);
        matmul_at_b_acc(grads.get_mut(&format!("block{l}.attn.wv"))?, &cache.ln1_out, &dv, m, w, w);
        col_sum_acc(grads.get_mut(&format!("block{l}.attn.bq"))?, &dq, m, w);
        col_sum_acc(grads.get_mut(&format!("block{l}.attn.bv"))?, &dv, m, w);
        let mut d_ln1_out = vec![0.0; m * w];
        matmul_a_bt_acc(&mut d_ln1_out, &dq, p.get(&format!("block{l}.attn.wq"))?, m, w, w);
        matmul_a_bt_acc(&mut d_ln1_out, &dk, p.get(&format!("block{l}.attn.wk"))?, m, w, w);
        matmul_a_bt_acc(&mut d_ln1_out, &dv, p.get(&format!("block{l}.attn.wv"))?, m, w, w);

        let g1 = p.get(&format!("block{l}.ln1.g"))?;
        let (d_xin_ln, dg1, db1) = layer_norm_backward(&d_ln1_out, g1, &cache.ln1, m, w);
        acc(grads.get_mut(&format!("block{l}.ln1.g"))?, &dg1);
        acc(grads.get_mut(&format!("block{l}.ln1.b"))?, &db1);
        let mut d_xin = d_xmid;
        acc(&mut d_xin, &d_xin_ln);
        Ok(d_xin)
    }
}

/// Which text channel an encoder serves; the two channels hold independent
/// parameter sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TextChannel {
    Predicate,
    Argument,
}

#[derive(Debug, Clone)]
pub struct TextEncoderConfig {
    pub vocab: usize,
    pub d_model: usize,
    pub d_emb: usize,
    pub context_cap: usize,
}

impl Default for TextEncoderConfig {
    fn default() -> Self {
        Self { vocab: 64, d_model: 32, d_emb: 32, context_cap: 77 }
    }
}

/// Embedding-bag text encoder: token lookup, mean over positions, linear
/// projection, L2 normalization.
pub struct TextEncoder {
    pub config: TextEncoderConfig,
    pub channel: TextChannel,
    pub params: ParamSet,
}

pub struct TextCache {
    mean_embed: Vec<f64>,
    out: Vec<f64>,
    norm: f64,
}

impl TextEncoder {
    pub fn init(config: TextEncoderConfig, channel: TextChannel, seed: u64) -> Result<Self> {
        let mut params = ParamSet::new();
        params.add("embed", &[config.vocab, config.d_model])?;
        params.add("proj.w", &[config.d_model, config.d_emb])?;
        params.add("proj.b", &[config.d_emb])?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        init_uniform(&mut rng, params.get_mut("embed")?, config.d_model);
        init_uniform(&mut rng, params.get_mut("proj.w")?, config.d_model);
        Ok(Self { config, channel, params })
    }

    pub fn encode(&self, text: &TokenizedText) -> Result<Vec<f64>> {
        Ok(self.forward(text)?.0)
    }

    pub fn forward(&self, text: &TokenizedText) -> Result<(Vec<f64>, TextCache)> {
        let dm = self.config.d_model;
        let embed = self.params.get("embed")?;
        let mut mean = vec![0.0; dm];
        for &t in text.ids() {
            if t >= self.config.vocab {
                return Err(Error::InvalidInput(format!("token id {t} outside vocabulary")));
            }
            for j in 0..dm {
                mean[j] += embed[t * dm + j];
            }
        }
        mean.iter_mut().for_each(|v| *v /= text.ids().len() as f64);
        let mut proj = self.params.get("proj.b")?.to_vec();
        matmul_acc(&mut proj, &mean, self.params.get("proj.w")?, 1, dm, self.config.d_emb);
        let (out, norm) = l2_normalize(&proj);
        Ok((out.clone(), TextCache { mean_embed: mean, out, norm }))
    }

    pub fn backward(&self, text: &TokenizedText, cache: &TextCache, d_out: &[f64]) -> Result<ParamSet> {
        let dm = self.config.d_model;
        let de = self.config.d_emb;
        let mut grads = self.params.zeros_like();
        let d_proj = l2_normalize_backward(&cache.out, d_out, cache.norm);
        {
            let gw = grads.get_mut("proj.w")?;
            for i in 0..dm {
                for j in 0..de {
                    gw[i * de + j] += cache.mean_embed[i] * d_proj[j];
                }
            }
        }
        acc(grads.get_mut("proj.b")?, &d_proj);
        let mut d_mean = vec![0.0; dm];
        matmul_a_bt_acc(&mut d_mean, &d_proj, self.params.get("proj.w")?, 1, de, dm);
        let inv_len = 1.0 / text.ids().len() as f64;
        let ge = grads.get_mut("embed")?;
        for &t in text.ids() {
            for j in 0..dm {
                ge[t * dm + j] += d_mean[j] * inv_len;
            }
        }
        Ok(grads)
    }
}

#[derive(Debug, Clone)]
pub struct ObjectEncoderConfig {
    pub d_frame: usize,
    pub d_emb: usize,
}

impl Default for ObjectEncoderConfig {
    fn default() -> Self {
        Self { d_frame: 32, d_emb: 32 }
    }
}

/// Object encoder: mean over frame features, projection, L2 normalization.
pub struct ObjectEncoder {
    pub config: ObjectEncoderConfig,
    pub params: ParamSet,
}

pub struct ObjectCache {
    mean_frame: Vec<f64>,
    out: Vec<f64>,
    norm: f64,
}

impl ObjectEncoder {
    pub fn init(config: ObjectEncoderConfig, seed: u64) -> Result<Self> {
        let mut params = ParamSet::new();
        params.add("proj.w", &[config.d_frame, config.d_emb])?;
        params.add("proj.b", &[config.d_emb])?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        init_uniform(&mut rng, params.get_mut("proj.w")?, config.d_frame);
        Ok(Self { config, params })
    }

    pub fn encode(&self, frames: &FrameFeatureSequence) -> Result<Vec<f64>> {
        Ok(self.forward(frames)?.0)
    }

    pub fn forward(&self, frames: &FrameFeatureSequence) -> Result<(Vec<f64>, ObjectCache)> {
        if frames.d_frame() != self.config.d_frame {
            return Err(Error::InvalidInput(format!(
                "frame feature dimension {} does not match encoder {}",
                frames.d_frame(),
                self.config.d_frame
            )));
        }
        let df = self.config.d_frame;
        let m = frames.frames();
        let mut mean = vec![0.0; df];
        for i in 0..m {
            for (j, v) in frames.frame(i).iter().enumerate() {
                mean[j] += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= m as f64);
        let mut proj = self.params.get("proj.b")?.to_vec();
        matmul_acc(&mut proj, &mean, self.params.get("proj.w")?, 1, df, self.config.d_emb);
        let (out, norm) = l2_normalize(&proj);
        Ok((out.clone(), ObjectCache { mean_frame: mean, out, norm }))
    }

    pub fn backward(&self, cache: &ObjectCache, d_out: &[f64]) -> Result<ParamSet> {
        let df = self.config.d_frame;
        let de = self.config.d_emb;
        let mut grads = self.params.zeros_like();
        let d_proj = l2_normalize_backward(&cache.out, d_out, cache.norm);
        {
            let gw = grads.get_mut("proj.w")?;
            for i in 0..df {
                for j in 0..de {
                    gw[i * de + j] += cache.mean_frame[i] * d_proj[j];
                }
            }
        }
        acc(grads.get_mut("proj.b")?, &d_proj);
        Ok(grads)
    }
}

fn layer_norm(x: &[f64], gamma: &[f64], beta: &[f64], m: usize, w: usize) -> (Vec<f64>, LnCache) {
    let mut out = vec![0.0; m * w];
    let mut xhat = vec![0.0; m * w];
    let mut inv_std = vec![0.0; m];
    for i in 0..m {
        let row = &x[i * w..(i + 1) * w];
        let mean: f64 = row.iter().sum::<f64>() / w as f64;
        let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w as f64;
        let istd = 1.0 / (var + LN_EPS).sqrt();
        inv_std[i] = istd;
        for j in 0..w {
            let xh = (row[j] - mean) * istd;
            xhat[i * w + j] = xh;
            out[i * w + j] = gamma[j] * xh + beta[j];
        }
    }
    (out, LnCache { xhat, inv_std })
}

fn layer_norm_backward(
    dy: &[f64],
    gamma: &[f64],
    cache: &LnCache,
    m: usize,
    w: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; m * w];
    let mut dgamma = vec![0.0; w];
    let mut dbeta = vec![0.0; w];
    for i in 0..m {
        let xhat = &cache.xhat[i * w..(i + 1) * w];
        let dyr = &dy[i * w..(i + 1) * w];
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for j in 0..w {
            dgamma[j] += dyr[j] * xhat[j];
            dbeta[j] += dyr[j];
            let dxh = dyr[j] * gamma[j];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xhat[j];
        }
        let inv_w = 1.0 / w as f64;
        for j in 0..w {
            let dxh = dyr[j] * gamma[j];
            dx[i * w + j] =
                cache.inv_std[i] * (dxh - sum_dxhat * inv_w - xhat[j] * sum_dxhat_xhat * inv_w);
        }
    }
    (dx, dgamma, dbeta)
}

fn head_slice(x: &[f64], m: usize, w: usize, h: usize, dh: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * dh];
    for i in 0..m {
        out[i * dh..(i + 1) * dh].copy_from_slice(&x[i * w + h * dh..i * w + (h + 1) * dh]);
    }
    out
}

fn col_sum_acc(acc: &mut [f64], x: &[f64], m: usize, n: usize) {
    for i in 0..m {
        for j in 0..n {
            acc[j] += x[i * n + j];
        }
    }
}

fn acc(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
