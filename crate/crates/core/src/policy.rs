//! Autoregressive motion-token policy: prompt-context assembly, exact
//! sequence log-probabilities, temperature sampling, and the supervised
//! fine-tuning objective.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::MotionTokenSequence;
use crate::error::{Error, Result};
use crate::opt::{init_uniform, Adam};
use crate::tensors::ParamSet;

/// Fixed system prompt used for every generation request.
pub const SYSTEM_PROMPT: &str = "You are a helpful AI assistant.";

/// Fixed instruction template; `{video}` and `{text}` are substituted when a
/// context is assembled.
pub const INSTRUCTION_TEMPLATE: &str = "Generate a sequence of motion tokens matching the \
    following human motion description. You can use the video as a reference. \
    Video information: {video} Motion description: {text}";

#[derive(Debug, Clone)]
pub struct ContextConfig {
    pub d_text: usize,
    pub d_segment: usize,
    /// Number of video segment embeddings k; 0 models the no-video baseline.
    pub segments: usize,
    pub d_context: usize,
}

impl Default for ContextConfig {
    fn default() -> Self {
        Self { d_text: 16, d_segment: 16, segments: 4, d_context: 16 }
    }
}

/// Assembled conditioning input for one generation request.
#[derive(Debug, Clone)]
pub struct PromptContext {
    pub vector: Vec<f64>,
    /// The literal filled-in instruction, kept for logging fidelity.
    pub rendered_prompt: String,
}

/// Deterministic projection from (system, template, text, ordered segments)
/// onto the policy's context space. Its parameters are seeded constants, not
/// trained.
pub struct ContextAssembler {
    pub config: ContextConfig,
    pub params: ParamSet,
}

impl ContextAssembler {
    const D_MARKER: usize = 8;

    pub fn init(config: ContextConfig, seed: u64) -> Result<Self> {
        if config.d_text == 0 || config.d_context == 0 {
            return Err(Error::InvalidInput("context dimensions must be >= 1".into()));
        }
        let d_in = Self::input_dim(&config);
        let mut params = ParamSet::new();
        params.add("system", &[Self::D_MARKER])?;
        params.add("template", &[Self::D_MARKER])?;
        params.add("proj.w", &[d_in, config.d_context])?;
        params.add("proj.b", &[config.d_context])?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for name in ["system", "template"] {
            for v in params.get_mut(name)? {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        init_uniform(&mut rng, params.get_mut("proj.w")?, d_in);
        Ok(Self { config, params })
    }

    fn input_dim(config: &ContextConfig) -> usize {
        2 * Self::D_MARKER + config.d_text + config.segments * config.d_segment
    }

    /// Concatenate system, template, text, and segment embeddings in order,
    /// then project. Segment order matters because each segment occupies its
    /// own slot of the concatenation.
    pub fn build_context(
        &self,
        text_embed: &[f64],
        segments: &[Vec<f64>],
        text: &str,
        video_label: &str,
    ) -> Result<PromptContext> {
        if text.is_empty() {
            return Err(Error::InvalidInput("prompt text must be non-empty".into()));
        }
        if text_embed.len() != self.config.d_text {
            return Err(Error::InvalidInput(format!(
                "text embedding has dimension {}, expected {}",
                text_embed.len(),
                self.config.d_text
            )));
        }
        if segments.len() != self.config.segments {
            return Err(Error::InvalidInput(format!(
                "got {} video segments, context expects {}",
                segments.len(),
                self.config.segments
            )));
        }
        for s in segments {
            if s.len() != self.config.d_segment {
                return Err(Error::InvalidInput(format!(
                    "segment embedding has dimension {}, expected {}",
                    s.len(),
                    self.config.d_segment
                )));
            }
        }
        let mut input = Vec::with_capacity(Self::input_dim(&self.config));
        input.extend_from_slice(self.params.get("system")?);
        input.extend_from_slice(self.params.get("template")?);
        input.extend_from_slice(text_embed);
        for s in segments {
            input.extend_from_slice(s);
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("context inputs must be finite".into()));
        }
        let w = self.params.get("proj.w")?;
        let b = self.params.get("proj.b")?;
        let dc = self.config.d_context;
        let mut vector = b.to_vec();
        for (i, &x) in input.iter().enumerate() {
            for j in 0..dc {
                vector[j] += x * w[i * dc + j];
            }
        }
        let video_part =
            if self.config.segments == 0 { "(none)".to_string() } else { video_label.to_string() };
        let rendered_prompt = format!(
            "{SYSTEM_PROMPT}\n{}",
            INSTRUCTION_TEMPLATE.replace("{video}", &video_part).replace("{text}", text)
        );
        Ok(PromptContext { vector, rendered_prompt })
    }
}

#[derive(Debug, Clone)]
pub struct PolicyConfig {
    /// Codebook size C; output alphabet is C + 1 (tokens plus end marker).
    pub num_codes: usize,
    pub d_embed: usize,
    pub d_context: usize,
    pub hidden: usize,
    /// Bounded history window averaged into each step.
    pub window: usize,
    pub max_len: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self { num_codes: 32, d_embed: 12, d_context: 16, hidden: 16, window: 4, max_len: 64 }
    }
}

/// Bounded-window MLP policy over codebook tokens plus begin/end markers.
pub struct TokenPolicy {
    pub config: PolicyConfig,
    pub params: ParamSet,
}

impl Clone for TokenPolicy {
    fn clone(&self) -> Self {
        Self { config: self.config.clone(), params: self.params.clone() }
    }
}

struct StepCache {
    input: usize,
    window_tokens: Vec<usize>,
    e: Vec<f64>,
    win: Vec<f64>,
    h: Vec<f64>,
    probs: Vec<f64>,
    target: usize,
}

impl TokenPolicy {
    fn bos(&self) -> usize {
        self.config.num_codes
    }

    /// Index of the end marker in the output alphabet.
    pub fn eos(&self) -> usize {
        self.config.num_codes
    }

    pub fn init(config: PolicyConfig, seed: u64) -> Result<Self> {
        if config.num_codes == 0 || config.window == 0 || config.max_len == 0 {
            return Err(Error::InvalidInput("policy sizes must be >= 1".into()));
        }
        let c = config.num_codes;
        let mut params = ParamSet::new();
        params.add("embed", &[c + 2, config.d_embed])?;
        params.add("w_e", &[config.d_embed, config.hidden])?;
        params.add("w_c", &[config.d_context, config.hidden])?;
        params.add("w_w", &[config.d_embed, config.hidden])?;
        params.add("b_h", &[config.hidden])?;
        params.add("w_o", &[config.hidden, c + 1])?;
        params.add("b_o", &[c + 1])?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        init_uniform(&mut rng, params.get_mut("embed")?, config.d_embed);
        init_uniform(&mut rng, params.get_mut("w_e")?, config.d_embed);
        init_uniform(&mut rng, params.get_mut("w_c")?, config.d_context);
        init_uniform(&mut rng, params.get_mut("w_w")?, config.d_embed);
        init_uniform(&mut rng, params.get_mut("w_o")?, config.hidden);
        Ok(Self { config, params })
    }

    fn embed(&self, token: usize) -> Result<&[f64]> {
        let d = self.config.d_embed;
        Ok(&self.params.get("embed")?[token * d..(token + 1) * d])
    }

    /// Next-token probabilities for the input token at one step, given the
    /// bounded window of recent input tokens (newest last, includes `input`).
    fn step(&self, context: &[f64], input: usize, window_tokens: &[usize]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
        let cfg = &self.config;
        if context.len() != cfg.d_context {
            return Err(Error::InvalidInput(format!(
                "context has dimension {}, policy expects {}",
                context.len(),
                cfg.d_context
            )));
        }
        let e = self.embed(input)?.to_vec();
        let mut win = vec![0.0; cfg.d_embed];
        for &t in window_tokens {
            for (w, &v) in win.iter_mut().zip(self.embed(t)?) {
                *w += v;
            }
        }
        for w in &mut win {
            *w /= window_tokens.len() as f64;
        }
        let w_e = self.params.get("w_e")?;
        let w_c = self.params.get("w_c")?;
        let w_w = self.params.get("w_w")?;
        let b_h = self.params.get("b_h")?;
        let mut pre = b_h.to_vec();
        for (i, &x) in e.iter().enumerate() {
            for j in 0..cfg.hidden {
                pre[j] += x * w_e[i * cfg.hidden + j];
            }
        }
        for (i, &x) in context.iter().enumerate() {
            for j in 0..cfg.hidden {
                pre[j] += x * w_c[i * cfg.hidden + j];
            }
        }
        for (i, &x) in win.iter().enumerate() {
            for j in 0..cfg.hidden {
                pre[j] += x * w_w[i * cfg.hidden + j];
            }
        }
        let h: Vec<f64> = pre.iter().map(|v| v.tanh()).collect();
        let w_o = self.params.get("w_o")?;
        let b_o = self.params.get("b_o")?;
        let out = cfg.num_codes + 1;
        let mut logits = b_o.to_vec();
        for (i, &x) in h.iter().enumerate() {
            for j in 0..out {
                logits[j] += x * w_o[i * out + j];
            }
        }
        Ok((e, win, h, logits))
    }

    fn validate_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.len() > self.config.max_len {
            return Err(Error::InvalidInput(format!(
                "sequence of {} exceeds the cap of {}",
                tokens.len(),
                self.config.max_len
            )));
        }
        for &t in tokens {
            if t >= self.config.num_codes {
                return Err(Error::InvalidInput(format!(
                    "token {t} is out of range for codebook size {}",
                    self.config.num_codes
                )));
            }
        }
        Ok(())
    }

    fn forward_steps(
        &self,
        context: &PromptContext,
        tokens: &[usize],
        score_from: usize,
        include_eos: bool,
    ) -> Result<(f64, Vec<StepCache>)> {
        self.validate_tokens(tokens)?;
        let inputs: Vec<usize> =
            std::iter::once(self.bos()).chain(tokens.iter().copied()).collect();
        let steps = if include_eos { tokens.len() + 1 } else { tokens.len() };
        let mut logprob = 0.0;
        let mut caches = Vec::new();
        for t in score_from..steps {
            let start = (t + 1).saturating_sub(self.config.window);
            let window_tokens = inputs[start..=t].to_vec();
            let (e, win, h, mut logits) = self.step(&context.vector, inputs[t], &window_tokens)?;
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for l in logits.iter() {
                sum += (*l - max).exp();
            }
            let target = if t < tokens.len() { tokens[t] } else { self.eos() };
            logprob += logits[target] - max - sum.ln();
            for l in &mut logits {
                *l = (*l - max).exp() / sum;
            }
            caches.push(StepCache { input: inputs[t], window_tokens, e, win, h, probs: logits, target });
        }
        Ok((logprob, caches))
    }

    /// Log-probability of the full sequence including its end marker.
    pub fn sequence_logprob(&self, context: &PromptContext, tokens: &[usize]) -> Result<f64> {
        Ok(self.forward_steps(context, tokens, 0, true)?.0)
    }

    /// Log-probability of the tokens themselves, without the end marker.
    pub fn prefix_logprob(&self, context: &PromptContext, tokens: &[usize]) -> Result<f64> {
        Ok(self.forward_steps(context, tokens, 0, false)?.0)
    }

    /// Log-probability of `suffix` plus the end marker, given `prefix`.
    pub fn conditional_logprob(
        &self,
        context: &PromptContext,
        prefix: &[usize],
        suffix: &[usize],
    ) -> Result<f64> {
        let full: Vec<usize> = prefix.iter().chain(suffix).copied().collect();
        Ok(self.forward_steps(context, &full, prefix.len(), true)?.0)
    }

    /// Gradient of sequence_logprob with respect to all policy parameters.
    pub fn sequence_logprob_grad(
        &self,
        context: &PromptContext,
        tokens: &[usize],
    ) -> Result<(f64, ParamSet)> {
        let (logprob, caches) = self.forward_steps(context, tokens, 0, true)?;
        let mut grads = self.params.zeros_like();
        let cfg = &self.config;
        let out = cfg.num_codes + 1;
        let w_o = self.params.get("w_o")?;
        let w_e = self.params.get("w_e")?;
        let w_w = self.params.get("w_w")?;
        for cache in &caches {
            // d logprob / d logits = onehot(target) - probs
            let mut dlog: Vec<f64> = cache.probs.iter().map(|p| -p).collect();
            dlog[cache.target] += 1.0;
            {
                let g = grads.get_mut("w_o")?;
                for i in 0..cfg.hidden {
                    for j in 0..out {
                        g[i * out + j] += cache.h[i] * dlog[j];
                    }
                }
            }
            for (g, &v) in grads.get_mut("b_o")?.iter_mut().zip(&dlog) {
                *g += v;
            }
            let mut dpre = vec![0.0; cfg.hidden];
            for i in 0..cfg.hidden {
                let mut acc = 0.0;
                for j in 0..out {
                    acc += w_o[i * out + j] * dlog[j];
                }
                dpre[i] = acc * (1.0 - cache.h[i] * cache.h[i]);
            }
            {
                let g = grads.get_mut("w_e")?;
                for i in 0..cfg.d_embed {
                    for j in 0..cfg.hidden {
                        g[i * cfg.hidden + j] += cache.e[i] * dpre[j];
                    }
                }
            }
            {
                let g = grads.get_mut("w_c")?;
                for i in 0..cfg.d_context {
                    for j in 0..cfg.hidden {
                        g[i * cfg.hidden + j] += context.vector[i] * dpre[j];
                    }
                }
            }
            {
                let g = grads.get_mut("w_w")?;
                for i in 0..cfg.d_embed {
                    for j in 0..cfg.hidden {
                        g[i * cfg.hidden + j] += cache.win[i] * dpre[j];
                    }
                }
            }
            for (g, &v) in grads.get_mut("b_h")?.iter_mut().zip(&dpre) {
                *g += v;
            }
            // token embeddings: direct path and the averaged window path
            let mut de = vec![0.0; cfg.d_embed];
            let mut dwin = vec![0.0; cfg.d_embed];
            for i in 0..cfg.d_embed {
                for j in 0..cfg.hidden {
                    de[i] += w_e[i * cfg.hidden + j] * dpre[j];
                    dwin[i] += w_w[i * cfg.hidden + j] * dpre[j];
                }
            }
            let g_embed = grads.get_mut("embed")?;
            for (gi, &v) in
                g_embed[cache.input * cfg.d_embed..(cache.input + 1) * cfg.d_embed]
                    .iter_mut()
                    .zip(&de)
            {
                *gi += v;
            }
            let m = cache.window_tokens.len() as f64;
            for &wt in &cache.window_tokens {
                for (gi, &v) in
                    g_embed[wt * cfg.d_embed..(wt + 1) * cfg.d_embed].iter_mut().zip(&dwin)
                {
                    *gi += v / m;
                }
            }
        }
        Ok((logprob, grads))
    }

    /// Ancestral sampling at the given temperature until the end marker or
    /// the length cap. Reproducible from the seed.
    pub fn sample(
        &self,
        context: &PromptContext,
        temperature: f64,
        seed: u64,
    ) -> Result<MotionTokenSequence> {
        if temperature <= 0.0 {
            return Err(Error::InvalidInput("sampling temperature must be > 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tokens: Vec<usize> = Vec::new();
        loop {
            let inputs: Vec<usize> =
                std::iter::once(self.bos()).chain(tokens.iter().copied()).collect();
            let t = inputs.len() - 1;
            let start = (t + 1).saturating_sub(self.config.window);
            let (_, _, _, logits) = self.step(&context.vector, inputs[t], &inputs[start..=t])?;
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| ((l - max) / temperature).exp()).collect();
            let sum: f64 = exps.iter().sum();
            let draw: f64 = rng.gen_range(0.0..1.0);
            let mut acc = 0.0;
            let mut pick = exps.len() - 1;
            for (i, &e) in exps.iter().enumerate() {
                acc += e / sum;
                if draw < acc {
                    pick = i;
                    break;
                }
            }
            if pick == self.eos() || tokens.len() == self.config.max_len {
                break;
            }
            tokens.push(pick);
            if tokens.len() == self.config.max_len {
                break;
            }
        }
        Ok(MotionTokenSequence { tokens })
    }
}

/// Mean negative sequence log-probability and its parameter gradient.
pub fn sft_loss(
    policy: &TokenPolicy,
    batch: &[(PromptContext, Vec<usize>)],
) -> Result<(f64, ParamSet)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("SFT batch must be non-empty".into()));
    }
    let mut loss = 0.0;
    let mut grads = policy.params.zeros_like();
    for (ctx, tokens) in batch {
        let (lp, g) = policy.sequence_logprob_grad(ctx, tokens)?;
        loss -= lp;
        for (d, s) in grads.flat_mut().iter_mut().zip(g.flat()) {
            *d -= s;
        }
    }
    let scale = 1.0 / batch.len() as f64;
    loss *= scale;
    for g in grads.flat_mut() {
        *g *= scale;
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone)]
pub struct SftTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for SftTrainConfig {
    fn default() -> Self {
        Self { steps: 200, batch_size: 8, lr: 1e-2, seed: 0 }
    }
}

/// Minibatch Adam on the SFT objective; returns the per-step loss trace.
pub fn train_sft(
    policy: &mut TokenPolicy,
    dataset: &[(PromptContext, Vec<usize>)],
    cfg: &SftTrainConfig,
) -> Result<Vec<f64>> {
    if dataset.is_empty() {
        return Err(Error::InvalidInput("SFT dataset must be non-empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.lr, policy.params.len());
    let mut trace = Vec::with_capacity(cfg.steps);
    let mut idx: Vec<usize> = (0..dataset.len()).collect();
    for _ in 0..cfg.steps {
        idx.shuffle(&mut rng);
        let take = cfg.batch_size.min(dataset.len());
        let batch: Vec<(PromptContext, Vec<usize>)> =
            idx[..take].iter().map(|&i| dataset[i].clone()).collect();
        let (loss, grads) = sft_loss(policy, &batch)?;
        opt.step(policy.params.flat_mut(), grads.flat());
        trace.push(loss);
    }
    Ok(trace)
}
