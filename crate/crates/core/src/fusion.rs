//! Dual-channel retriever training and inference: symmetric contrastive
//! losses, the action-aware similarity integrator, two-stage training, and
//! fused ranking over an embedding store.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embedstore::Store;
use crate::encoders::{
    ActionEncoder, FrameFeatureSequence, KeypointSequence, ObjectEncoder, TextEncoder,
    TokenizedText,
};
use crate::error::{Error, Result};
use crate::opt::{init_uniform, Adam};
use crate::tensors::ParamSet;

/// Which side of the similarity matrix carries the positives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossDirection {
    /// Row-wise softmax over videos for each text (p2a / t2v).
    TextToVideo,
    /// Column-wise softmax over texts for each video (a2p / v2t).
    VideoToText,
}

/// Softmax cross-entropy on the diagonal of a B x B similarity matrix.
///
/// Returns the loss and its gradient with respect to every matrix entry.
pub fn contrastive_loss(sim: &[f64], b: usize, direction: LossDirection) -> Result<(f64, Vec<f64>)> {
    if b < 2 {
        return Err(Error::InvalidInput(format!("contrastive loss needs batch >= 2, got {b}")));
    }
    if sim.len() != b * b {
        return Err(Error::InvalidInput("similarity matrix must be square B x B".into()));
    }
    let at = |i: usize, j: usize| match direction {
        LossDirection::TextToVideo => sim[i * b + j],
        LossDirection::VideoToText => sim[j * b + i],
    };
    let mut loss = 0.0;
    let mut grad = vec![0.0; b * b];
    for i in 0..b {
        let max = (0..b).map(|j| at(i, j)).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for j in 0..b {
            sum += (at(i, j) - max).exp();
        }
        loss += -(at(i, i) - max - sum.ln());
        for j in 0..b {
            let p = (at(i, j) - max).exp() / sum;
            let g = (p - if i == j { 1.0 } else { 0.0 }) / b as f64;
            match direction {
                LossDirection::TextToVideo => grad[i * b + j] += g,
                LossDirection::VideoToText => grad[j * b + i] += g,
            }
        }
    }
    Ok((loss / b as f64, grad))
}

/// Sum of both directions (the full retriever loss for one channel).
pub fn contrastive_loss_symmetric(sim: &[f64], b: usize) -> Result<(f64, Vec<f64>)> {
    let (l1, g1) = contrastive_loss(sim, b, LossDirection::TextToVideo)?;
    let (l2, g2) = contrastive_loss(sim, b, LossDirection::VideoToText)?;
    let grad = g1.iter().zip(&g2).map(|(a, b)| a + b).collect();
    Ok((l1 + l2, grad))
}

/// How the router's two output channels are normalized into weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateMode {
    /// Two-way softmax over the logits; weights are strictly positive and sum to 1.
    Softmax,
    /// The raw ratio I_k / (I_0 + I_1); fails when the sum is near zero.
    LiteralRatio,
}

/// Lightweight integrator mapping an action embedding to two channel weights.
pub struct Router {
    pub d_emb: usize,
    pub mode: GateMode,
    pub params: ParamSet,
}

impl Router {
    /// Bias starts at zero and weights at small uniform noise, so initial
    /// channel weights are near-equal.
    pub fn init(d_emb: usize, mode: GateMode, seed: u64) -> Result<Self> {
        let mut params = ParamSet::new();
        params.add("w", &[d_emb, 2])?;
        params.add("b", &[2])?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        init_uniform(&mut rng, params.get_mut("w")?, d_emb * 100);
        Ok(Self { d_emb, mode, params })
    }

    /// Raw linear outputs (I_0, I_1).
    pub fn logits(&self, action_embed: &[f64]) -> Result<[f64; 2]> {
        if action_embed.len() != self.d_emb {
            return Err(Error::InvalidInput(format!(
                "action embedding has dimension {}, router expects {}",
                action_embed.len(),
                self.d_emb
            )));
        }
        let w = self.params.get("w")?;
        let b = self.params.get("b")?;
        let mut z = [b[0], b[1]];
        for (i, &a) in action_embed.iter().enumerate() {
            z[0] += a * w[i * 2];
            z[1] += a * w[i * 2 + 1];
        }
        Ok(z)
    }

    /// Normalized channel weights (w_0, w_1).
    pub fn weights(&self, action_embed: &[f64]) -> Result<[f64; 2]> {
        let z = self.logits(action_embed)?;
        match self.mode {
            GateMode::Softmax => {
                let m = z[0].max(z[1]);
                let e0 = (z[0] - m).exp();
                let e1 = (z[1] - m).exp();
                Ok([e0 / (e0 + e1), e1 / (e0 + e1)])
            }
            GateMode::LiteralRatio => {
                let s = z[0] + z[1];
                if s.abs() < 1e-9 {
                    return Err(Error::Numeric(
                        "literal-ratio gate is degenerate: |I0 + I1| < 1e-9".into(),
                    ));
                }
                Ok([z[0] / s, z[1] / s])
            }
        }
    }

    /// Accumulate parameter gradients given d(loss)/d(weights) at one input.
    pub fn backward_weights(
        &self,
        action_embed: &[f64],
        weights: &[f64; 2],
        d_weights: &[f64; 2],
        grads: &mut ParamSet,
    ) -> Result<()> {
        let dz = match self.mode {
            GateMode::Softmax => {
                let dot = weights[0] * d_weights[0] + weights[1] * d_weights[1];
                [weights[0] * (d_weights[0] - dot), weights[1] * (d_weights[1] - dot)]
            }
            GateMode::LiteralRatio => {
                let z = self.logits(action_embed)?;
                let s = z[0] + z[1];
                // w0 = z0/s: dw0/dz0 = z1/s^2, dw0/dz1 = -z0/s^2 (w1 mirrors).
                let dz0 = d_weights[0] * z[1] / (s * s) + d_weights[1] * (-z[1] / (s * s));
                let dz1 = d_weights[0] * (-z[0] / (s * s)) + d_weights[1] * z[0] / (s * s);
                [dz0, dz1]
            }
        };
        let gw = grads.get_mut("w")?;
        for (i, &a) in action_embed.iter().enumerate() {
            gw[i * 2] += a * dz[0];
            gw[i * 2 + 1] += a * dz[1];
        }
        let gb = grads.get_mut("b")?;
        gb[0] += dz[0];
        gb[1] += dz[1];
        Ok(())
    }
}

/// The inputs of one fused-similarity evaluation.
#[derive(Debug, Clone)]
pub struct SimilarityQuadruple {
    pub s_pa: f64,
    pub s_go: f64,
    pub action_embed: Vec<f64>,
    pub text_id: String,
    pub video_id: String,
}

/// Fused similarity s(t, v) = w_0 * s(p, a) + w_1 * s(g, o).
pub fn fused_similarity(q: &SimilarityQuadruple, router: &Router) -> Result<f64> {
    if !(-1.0..=1.0).contains(&q.s_pa) || !(-1.0..=1.0).contains(&q.s_go) {
        return Err(Error::InvalidInput("channel similarities must lie in [-1, 1]".into()));
    }
    let w = router.weights(&q.action_embed)?;
    Ok(w[0] * q.s_pa + w[1] * q.s_go)
}

/// One training example: a caption paired with its video's keypoints and
/// frame features.
#[derive(Debug, Clone)]
pub struct CorpusTriple {
    pub id: String,
    pub text: TokenizedText,
    pub keypoints: KeypointSequence,
    pub frames: FrameFeatureSequence,
}

/// Both retrieval channels.
pub struct Retrievers {
    pub action: ActionEncoder,
    pub predicate: TextEncoder,
    pub object: ObjectEncoder,
    pub argument: TextEncoder,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Extra action-channel-only epochs before joint stage-1 training.
    pub warm_start_epochs: usize,
    /// Divides similarities before the softmax; 1.0 uses raw cosine.
    pub temperature: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 10, batch_size: 16, lr: 1e-2, seed: 0, warm_start_epochs: 0, temperature: 1.0 }
    }
}

/// Per-epoch mean losses for both channels.
#[derive(Debug, Clone, Default)]
pub struct Stage1Trace {
    pub action: Vec<f64>,
    pub object: Vec<f64>,
}

/// Stage 1: optimize both retrievers independently with their symmetric
/// contrastive losses.
pub fn train_stage1(
    retrievers: &mut Retrievers,
    corpus: &[CorpusTriple],
    cfg: &TrainConfig,
) -> Result<Stage1Trace> {
    if corpus.len() < cfg.batch_size {
        return Err(Error::InvalidInput(format!(
            "corpus of {} is smaller than batch size {}",
            corpus.len(),
            cfg.batch_size
        )));
    }
    if cfg.batch_size < 2 {
        return Err(Error::InvalidInput("batch size must be >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = Stage1Trace::default();

    let mut opt_action = Adam::new(cfg.lr, retrievers.action.params.len());
    let mut opt_pred = Adam::new(cfg.lr, retrievers.predicate.params.len());
    let mut opt_object = Adam::new(cfg.lr, retrievers.object.params.len());
    let mut opt_arg = Adam::new(cfg.lr, retrievers.argument.params.len());

    for _ in 0..cfg.warm_start_epochs {
        run_epoch_action(retrievers, corpus, cfg, &mut rng, &mut opt_action, &mut opt_pred)?;
    }
    for _ in 0..cfg.epochs {
        let la = run_epoch_action(retrievers, corpus, cfg, &mut rng, &mut opt_action, &mut opt_pred)?;
        let lo = run_epoch_object(retrievers, corpus, cfg, &mut rng, &mut opt_object, &mut opt_arg)?;
        trace.action.push(la);
        trace.object.push(lo);
    }
    Ok(trace)
}

fn batches(n: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch).filter(|c| c.len() == batch).map(|c| c.to_vec()).collect()
}

fn run_epoch_action(
    retrievers: &mut Retrievers,
    corpus: &[CorpusTriple],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    opt_enc: &mut Adam,
    opt_text: &mut Adam,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0;
    for batch in batches(corpus.len(), cfg.batch_size, rng) {
        let b = batch.len();
        let mut text_out = Vec::with_capacity(b);
        let mut enc_out = Vec::with_capacity(b);
        for &i in &batch {
            text_out.push(retrievers.predicate.forward(&corpus[i].text)?);
            enc_out.push(retrievers.action.forward(&corpus[i].keypoints)?);
        }
        let mut sim = vec![0.0; b * b];
        for i in 0..b {
            for j in 0..b {
                let dot: f64 =
                    text_out[i].0.iter().zip(&enc_out[j].0).map(|(x, y)| x * y).sum();
                sim[i * b + j] = dot / cfg.temperature;
            }
        }
        let (loss, dsim) = contrastive_loss_symmetric(&sim, b)?;
        total += loss;
        count += 1;

        let mut g_text = retrievers.predicate.params.zeros_like();
        let mut g_enc = retrievers.action.params.zeros_like();
        for i in 0..b {
            let d_emb = retrievers.predicate.config.d_emb;
            let mut dp = vec![0.0; d_emb];
            for j in 0..b {
                let g = dsim[i * b + j] / cfg.temperature;
                for k in 0..d_emb {
                    dp[k] += g * enc_out[j].0[k];
                }
            }
            let g = retrievers.predicate.backward(&corpus[batch[i]].text, &text_out[i].1, &dp)?;
            add_assign(&mut g_text, &g);
        }
        for j in 0..b {
            let d_emb = retrievers.action.config.d_emb;
            let mut da = vec![0.0; d_emb];
            for i in 0..b {
                let g = dsim[i * b + j] / cfg.temperature;
                for k in 0..d_emb {
                    da[k] += g * text_out[i].0[k];
                }
            }
            let g = retrievers.action.backward(&corpus[batch[j]].keypoints, &enc_out[j].1, &da)?;
            add_assign(&mut g_enc, &g);
        }
        opt_text.step(retrievers.predicate.params.flat_mut(), g_text.flat());
        opt_enc.step(retrievers.action.params.flat_mut(), g_enc.flat());
    }
    Ok(total / count.max(1) as f64)
}

fn run_epoch_object(
    retrievers: &mut Retrievers,
    corpus: &[CorpusTriple],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    opt_enc: &mut Adam,
    opt_text: &mut Adam,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0;
    for batch in batches(corpus.len(), cfg.batch_size, rng) {
        let b = batch.len();
        let mut text_out = Vec::with_capacity(b);
        let mut enc_out = Vec::with_capacity(b);
        for &i in &batch {
            text_out.push(retrievers.argument.forward(&corpus[i].text)?);
            enc_out.push(retrievers.object.forward(&corpus[i].frames)?);
        }
        let mut sim = vec![0.0; b * b];
        for i in 0..b {
            for j in 0..b {
                let dot: f64 =
                    text_out[i].0.iter().zip(&enc_out[j].0).map(|(x, y)| x * y).sum();
                sim[i * b + j] = dot / cfg.temperature;
            }
        }
        let (loss, dsim) = contrastive_loss_symmetric(&sim, b)?;
        total += loss;
        count += 1;

        let mut g_text = retrievers.argument.params.zeros_like();
        let mut g_enc = retrievers.object.params.zeros_like();
        for i in 0..b {
            let d_emb = retrievers.argument.config.d_emb;
            let mut dg = vec![0.0; d_emb];
            for j in 0..b {
                let g = dsim[i * b + j] / cfg.temperature;
                for k in 0..d_emb {
                    dg[k] += g * enc_out[j].0[k];
                }
            }
            let g = retrievers.argument.backward(&corpus[batch[i]].text, &text_out[i].1, &dg)?;
            add_assign(&mut g_text, &g);
        }
        for j in 0..b {
            let d_emb = retrievers.object.config.d_emb;
            let mut dob = vec![0.0; d_emb];
            for i in 0..b {
                let g = dsim[i * b + j] / cfg.temperature;
                for k in 0..d_emb {
                    dob[k] += g * text_out[i].0[k];
                }
            }
            let g = retrievers.object.backward(&enc_out[j].1, &dob)?;
            add_assign(&mut g_enc, &g);
        }
        opt_text.step(retrievers.argument.params.flat_mut(), g_text.flat());
        opt_enc.step(retrievers.object.params.flat_mut(), g_enc.flat());
    }
    Ok(total / count.max(1) as f64)
}

fn add_assign(dst: &mut ParamSet, src: &ParamSet) {
    for (d, s) in dst.flat_mut().iter_mut().zip(src.flat()) {
        *d += s;
    }
}

/// Stage 2: freeze both retrievers and optimize only the router on the
/// contrastive loss over fused similarities.
pub fn train_stage2(
    retrievers: &Retrievers,
    router: &mut Router,
    corpus: &[CorpusTriple],
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    if corpus.len() < cfg.batch_size {
        return Err(Error::InvalidInput(format!(
            "corpus of {} is smaller than batch size {}",
            corpus.len(),
            cfg.batch_size
        )));
    }
    let checksums = [
        retrievers.action.params.checksum(),
        retrievers.predicate.params.checksum(),
        retrievers.object.params.checksum(),
        retrievers.argument.params.checksum(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut opt = Adam::new(cfg.lr, router.params.len());
    let mut trace = Vec::with_capacity(cfg.epochs);

    // Embeddings never change during stage 2; encode once.
    let mut p_emb = Vec::with_capacity(corpus.len());
    let mut g_emb = Vec::with_capacity(corpus.len());
    let mut a_emb = Vec::with_capacity(corpus.len());
    let mut o_emb = Vec::with_capacity(corpus.len());
    for t in corpus {
        p_emb.push(retrievers.predicate.encode(&t.text)?);
        g_emb.push(retrievers.argument.encode(&t.text)?);
        a_emb.push(retrievers.action.encode(&t.keypoints)?);
        o_emb.push(retrievers.object.encode(&t.frames)?);
    }

    for _ in 0..cfg.epochs {
        let mut total = 0.0;
        let mut count = 0;
        for batch in batches(corpus.len(), cfg.batch_size, &mut rng) {
            let b = batch.len();
            let mut weights = Vec::with_capacity(b);
            for &j in &batch {
                weights.push(router.weights(&a_emb[j])?);
            }
            let mut s_pa = vec![0.0; b * b];
            let mut s_go = vec![0.0; b * b];
            let mut sim = vec![0.0; b * b];
            for i in 0..b {
                for j in 0..b {
                    let pa: f64 =
                        p_emb[batch[i]].iter().zip(&a_emb[batch[j]]).map(|(x, y)| x * y).sum();
                    let go: f64 =
                        g_emb[batch[i]].iter().zip(&o_emb[batch[j]]).map(|(x, y)| x * y).sum();
                    s_pa[i * b + j] = pa;
                    s_go[i * b + j] = go;
                    sim[i * b + j] =
                        (weights[j][0] * pa + weights[j][1] * go) / cfg.temperature;
                }
            }
            let (loss, dsim) = contrastive_loss_symmetric(&sim, b)?;
            total += loss;
            count += 1;
            let mut grads = router.params.zeros_like();
            for j in 0..b {
                let mut dw = [0.0, 0.0];
                for i in 0..b {
                    let g = dsim[i * b + j] / cfg.temperature;
                    dw[0] += g * s_pa[i * b + j];
                    dw[1] += g * s_go[i * b + j];
                }
                router.backward_weights(&a_emb[batch[j]], &weights[j], &dw, &mut grads)?;
            }
            opt.step(router.params.flat_mut(), grads.flat());
        }
        trace.push(total / count.max(1) as f64);
    }

    let after = [
        retrievers.action.params.checksum(),
        retrievers.predicate.params.checksum(),
        retrievers.object.params.checksum(),
        retrievers.argument.params.checksum(),
    ];
    assert_eq!(checksums, after, "stage 2 must not mutate frozen encoder parameters");
    Ok(trace)
}

/// One ranked retrieval hit.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub rank: usize,
    pub video_id: String,
    pub score: f64,
}

/// Fused ranking of a text query against paired action/object stores that
/// hold the per-video channel embeddings under matching ids.
pub fn rank(
    text: &TokenizedText,
    action_store: &Store,
    object_store: &Store,
    retrievers: &Retrievers,
    router: &Router,
    k: usize,
) -> Result<Vec<RetrievalResult>> {
    let p = retrievers.predicate.encode(text)?;
    let g = retrievers.argument.encode(text)?;
    let mut scored: Vec<(String, f64)> = Vec::with_capacity(action_store.count());
    for rec in action_store.records() {
        let obj = rec_or_missing(object_store, &rec.id, "object")?;
        let q = SimilarityQuadruple {
            s_pa: dot(&p, &rec.vector),
            s_go: dot(&g, &obj.vector),
            action_embed: rec.vector.clone(),
            text_id: String::new(),
            video_id: rec.id.clone(),
        };
        scored.push((rec.id.clone(), fused_similarity(&q, router)?));
    }
    for rec in object_store.records() {
        rec_or_missing(action_store, &rec.id, "action")?;
    }
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then_with(|| a.0.cmp(&b.0))
    });
    scored.truncate(k);
    Ok(scored
        .into_iter()
        .enumerate()
        .map(|(i, (video_id, score))| RetrievalResult { rank: i + 1, video_id, score })
        .collect())
}

fn rec_or_missing<'a>(
    store: &'a Store,
    id: &str,
    channel: &str,
) -> Result<&'a crate::embedstore::EmbeddingRecord> {
    store.get(id).ok_or_else(|| Error::MissingChannel { id: id.to_string(), channel: channel.into() })
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Recall@k, median rank, and mean rank over per-query rankings.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalMetrics {
    pub r_at_1: f64,
    pub r_at_5: f64,
    pub r_at_10: f64,
    pub median_rank: f64,
    pub mean_rank: f64,
}

/// Each ranking is the full ordered id list for one query; `relevant[i]` is
/// the single relevant id of query i.
pub fn retrieval_metrics(rankings: &[Vec<String>], relevant: &[String]) -> Result<RetrievalMetrics> {
    if rankings.is_empty() || rankings.len() != relevant.len() {
        return Err(Error::InvalidInput("rankings and relevance lists must align and be non-empty".into()));
    }
    let mut ranks = Vec::with_capacity(rankings.len());
    for (ranking, rel) in rankings.iter().zip(relevant) {
        let pos = ranking.iter().position(|id| id == rel).ok_or_else(|| {
            Error::InvalidInput(format!("relevant id '{rel}' absent from ranking"))
        })?;
        ranks.push(pos + 1);
    }
    let n = ranks.len() as f64;
    let recall = |k: usize| 100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
    let mut sorted = ranks.clone();
    sorted.sort_unstable();
    let median = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2] as f64
    } else {
        (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2]) as f64 / 2.0
    };
    Ok(RetrievalMetrics {
        r_at_1: recall(1),
        r_at_5: recall(5),
        r_at_10: recall(10),
        median_rank: median,
        mean_rank: ranks.iter().sum::<usize>() as f64 / n,
    })
}
