//! Motion-centric dual-alignment preference optimization: candidate
//! sampling, the dual-alignment reward, preference-pair construction, and
//! the DPO objective over the token policy.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::{MotionFeatureSequence, MotionTokenSequence};
use crate::error::{Error, Result};
use crate::numerics::{euclidean, frechet_distance_sq, gaussian_fit};
use crate::opt::Adam;
use crate::policy::{PromptContext, TokenPolicy};
use crate::tensors::ParamSet;

/// Maps a token sequence to frame features in the shared evaluation space.
pub trait MotionFeatureExtractor {
    fn extract(&self, tokens: &MotionTokenSequence) -> Result<MotionFeatureSequence>;
}

/// Maps a caption to the same evaluation space.
pub trait TextEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
}

/// Reward weighting and handles into the shared evaluation space.
pub struct RewardConfig<'a> {
    /// Candidates sampled per example.
    pub kappa: usize,
    /// Weight of the motion-distribution alignment term.
    pub w_l: f64,
    /// Weight of the text alignment term.
    pub w_d: f64,
    pub extractor: &'a dyn MotionFeatureExtractor,
    pub text_embedder: &'a dyn TextEmbedder,
}

impl RewardConfig<'_> {
    fn validate(&self) -> Result<()> {
        if self.kappa < 2 {
            return Err(Error::InvalidInput(format!("kappa must be >= 2, got {}", self.kappa)));
        }
        if self.w_l < 0.0 || self.w_d < 0.0 || self.w_l + self.w_d <= 0.0 {
            return Err(Error::InvalidInput(
                "reward weights must be non-negative with a positive sum".into(),
            ));
        }
        Ok(())
    }
}

/// One example's sampled candidates against its reference sequence.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    pub example_id: String,
    pub text: String,
    pub context: PromptContext,
    pub candidates: Vec<MotionTokenSequence>,
    pub reference: MotionTokenSequence,
}

/// A chosen/rejected pair with the rewards that ordered it.
#[derive(Debug, Clone)]
pub struct PreferencePair {
    pub example_id: String,
    pub context: PromptContext,
    pub chosen: Vec<usize>,
    pub rejected: Vec<usize>,
    pub reward_chosen: f64,
    pub reward_rejected: f64,
}

/// Reward arithmetic on precomputed distances: each distance list is
/// normalized to sum to one, so the rewards always sum to -(w_l + w_d).
/// A zero denominator collapses that term to the uniform share 1/kappa.
pub fn rewards_from_distances(l: &[f64], d: &[f64], w_l: f64, w_d: f64) -> Result<Vec<f64>> {
    let kappa = l.len();
    if kappa < 2 || d.len() != kappa {
        return Err(Error::InvalidInput("need >= 2 candidates with aligned distance lists".into()));
    }
    if l.iter().chain(d).any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Numeric("distances must be finite and non-negative".into()));
    }
    let norm = |xs: &[f64]| -> Vec<f64> {
        let sum: f64 = xs.iter().sum();
        if sum <= 0.0 {
            vec![1.0 / kappa as f64; kappa]
        } else {
            xs.iter().map(|x| x / sum).collect()
        }
    };
    let ln = norm(l);
    let dn = norm(d);
    Ok((0..kappa).map(|i| -(w_l * ln[i] + w_d * dn[i])).collect())
}

/// Evaluate the dual-alignment reward for every candidate: the distribution
/// term is the Fréchet distance between Gaussian fits of decoded frame
/// features, the text term the Euclidean distance between the candidate's
/// pooled feature and the caption embedding.
pub fn dual_alignment_reward(set: &CandidateSet, cfg: &RewardConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if set.candidates.len() != cfg.kappa {
        return Err(Error::InvalidInput(format!(
            "candidate set has {} entries, expected kappa = {}",
            set.candidates.len(),
            cfg.kappa
        )));
    }
    let ref_frames = frames_of(cfg.extractor, &set.reference)?;
    let ref_fit = gaussian_fit(&ref_frames)?;
    let text_embed = cfg.text_embedder.embed(&set.text)?;

    let mut l = Vec::with_capacity(cfg.kappa);
    let mut d = Vec::with_capacity(cfg.kappa);
    for cand in &set.candidates {
        let frames = frames_of(cfg.extractor, cand)?;
        let fit = gaussian_fit(&frames)?;
        l.push(frechet_distance_sq(&fit, &ref_fit)?.sqrt());
        let pooled = mean_rows(&frames);
        if pooled.len() != text_embed.len() {
            return Err(Error::InvalidInput(
                "extractor and text embedder disagree on the feature dimension".into(),
            ));
        }
        d.push(euclidean(&pooled, &text_embed));
    }
    rewards_from_distances(&l, &d, cfg.w_l, cfg.w_d)
}

fn frames_of(
    extractor: &dyn MotionFeatureExtractor,
    tokens: &MotionTokenSequence,
) -> Result<Vec<Vec<f64>>> {
    if tokens.tokens.is_empty() {
        return Err(Error::InvalidInput("cannot score an empty token sequence".into()));
    }
    let seq = extractor.extract(tokens)?;
    Ok((0..seq.frames()).map(|t| seq.frame(t).to_vec()).collect())
}

fn mean_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let d = rows[0].len();
    let mut out = vec![0.0; d];
    for r in rows {
        for (o, &x) in out.iter_mut().zip(r) {
            *o += x;
        }
    }
    for o in &mut out {
        *o /= rows.len() as f64;
    }
    out
}

/// One supervised example a preference pair can be built from.
#[derive(Debug, Clone)]
pub struct DpoExample {
    pub id: String,
    pub text: String,
    pub context: PromptContext,
    pub reference: MotionTokenSequence,
}

#[derive(Debug, Clone)]
pub struct BuildConfig {
    pub temperature: f64,
    /// Random fraction of the dataset turned into pairs.
    pub subset_fraction: f64,
    pub seed: u64,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self { temperature: 0.9, subset_fraction: 0.25, seed: 0 }
    }
}

/// Outcome of preference-set construction.
#[derive(Debug)]
pub struct PreferenceSet {
    pub pairs: Vec<PreferencePair>,
    /// Examples dropped because every candidate tied or sampling failed.
    pub skipped: usize,
}

fn example_seed(global: u64, id: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325 ^ global;
    for b in id.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Sample kappa candidates per selected example from the reference policy,
/// score them, and keep the (best, worst) pair.
pub fn build_preference_set(
    pi_ref: &TokenPolicy,
    dataset: &[DpoExample],
    reward_cfg: &RewardConfig,
    build_cfg: &BuildConfig,
) -> Result<PreferenceSet> {
    reward_cfg.validate()?;
    if !(0.0..=1.0).contains(&build_cfg.subset_fraction) || build_cfg.subset_fraction <= 0.0 {
        return Err(Error::InvalidInput("subset fraction must be in (0, 1]".into()));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(build_cfg.seed);
    order.shuffle(&mut rng);
    let take = ((dataset.len() as f64 * build_cfg.subset_fraction).ceil() as usize)
        .clamp(1.min(dataset.len()), dataset.len());
    order.truncate(take);
    order.sort_unstable();

    let mut pairs = Vec::new();
    let mut skipped = 0;
    for &ei in &order {
        let ex = &dataset[ei];
        let base = example_seed(build_cfg.seed, &ex.id);
        let mut candidates = Vec::with_capacity(reward_cfg.kappa);
        let mut sub = 0u64;
        while candidates.len() < reward_cfg.kappa && sub < reward_cfg.kappa as u64 + 16 {
            let s = pi_ref.sample(&ex.context, build_cfg.temperature, base.wrapping_add(sub))?;
            sub += 1;
            if !s.tokens.is_empty() {
                candidates.push(s);
            }
        }
        if candidates.len() < reward_cfg.kappa {
            skipped += 1;
            continue;
        }
        let set = CandidateSet {
            example_id: ex.id.clone(),
            text: ex.text.clone(),
            context: ex.context.clone(),
            candidates,
            reference: ex.reference.clone(),
        };
        let rewards = dual_alignment_reward(&set, reward_cfg)?;
        let (mut best, mut worst) = (0, 0);
        for i in 1..rewards.len() {
            if rewards[i] > rewards[best] {
                best = i;
            }
            if rewards[i] < rewards[worst] {
                worst = i;
            }
        }
        if (rewards[best] - rewards[worst]).abs() <= 1e-12
            || set.candidates[best] == set.candidates[worst]
        {
            skipped += 1;
            continue;
        }
        pairs.push(PreferencePair {
            example_id: ex.id.clone(),
            context: ex.context.clone(),
            chosen: set.candidates[best].tokens.clone(),
            rejected: set.candidates[worst].tokens.clone(),
            reward_chosen: rewards[best],
            reward_rejected: rewards[worst],
        });
    }
    Ok(PreferenceSet { pairs, skipped })
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-pair margin gamma * [Delta(chosen) - Delta(rejected)] where
/// Delta(y) = log pi_theta(y) - log pi_ref(y).
pub fn dpo_margin(
    pi_theta: &TokenPolicy,
    pi_ref: &TokenPolicy,
    pair: &PreferencePair,
    gamma: f64,
) -> Result<f64> {
    let lw_t = pi_theta.sequence_logprob(&pair.context, &pair.chosen)?;
    let ll_t = pi_theta.sequence_logprob(&pair.context, &pair.rejected)?;
    let lw_r = pi_ref.sequence_logprob(&pair.context, &pair.chosen)?;
    let ll_r = pi_ref.sequence_logprob(&pair.context, &pair.rejected)?;
    if !lw_r.is_finite() || !ll_r.is_finite() {
        return Err(Error::Numeric(
            "reference policy assigns zero probability to a preference sequence".into(),
        ));
    }
    Ok(gamma * ((lw_t - lw_r) - (ll_t - ll_r)))
}

/// Mean over pairs of -log sigmoid(margin), with gradients for pi_theta
/// only; the reference policy is a constant.
pub fn dpo_loss(
    pi_theta: &TokenPolicy,
    pi_ref: &TokenPolicy,
    pairs: &[PreferencePair],
    gamma: f64,
) -> Result<(f64, ParamSet)> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("DPO loss needs at least one pair".into()));
    }
    if gamma <= 0.0 {
        return Err(Error::InvalidInput("gamma must be > 0".into()));
    }
    let mut loss = 0.0;
    let mut grads = pi_theta.params.zeros_like();
    for pair in pairs {
        let (lw_t, gw) = pi_theta.sequence_logprob_grad(&pair.context, &pair.chosen)?;
        let (ll_t, gl) = pi_theta.sequence_logprob_grad(&pair.context, &pair.rejected)?;
        let lw_r = pi_ref.sequence_logprob(&pair.context, &pair.chosen)?;
        let ll_r = pi_ref.sequence_logprob(&pair.context, &pair.rejected)?;
        if !lw_r.is_finite() || !ll_r.is_finite() {
            return Err(Error::Numeric(
                "reference policy assigns zero probability to a preference sequence".into(),
            ));
        }
        let margin = gamma * ((lw_t - lw_r) - (ll_t - ll_r));
        loss += softplus(-margin);
        // d/d margin of -ln sigmoid(margin) is sigmoid(margin) - 1.
        let coeff = (sigmoid(margin) - 1.0) * gamma;
        for ((g, &w), &l) in grads.flat_mut().iter_mut().zip(gw.flat()).zip(gl.flat()) {
            *g += coeff * (w - l);
        }
    }
    let scale = 1.0 / pairs.len() as f64;
    loss *= scale;
    for g in grads.flat_mut() {
        *g *= scale;
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone)]
pub struct DpoTrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub gamma: f64,
}

impl Default for DpoTrainConfig {
    fn default() -> Self {
        Self { steps: 150, lr: 5e-3, gamma: 0.1 }
    }
}

/// Full-batch Adam on the DPO objective starting from a clone of the
/// reference policy. Aborts if the loss stays above 10x its initial value
/// for 50 consecutive steps.
pub fn train_mcdpo(
    pi_ref: &TokenPolicy,
    pairs: &[PreferencePair],
    cfg: &DpoTrainConfig,
) -> Result<(TokenPolicy, Vec<f64>)> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("DPO training needs a non-empty pair set".into()));
    }
    let mut pi_theta = pi_ref.clone();
    let mut opt = Adam::new(cfg.lr, pi_theta.params.len());
    let mut trace = Vec::with_capacity(cfg.steps);
    let mut initial = None;
    let mut bad_streak = 0usize;
    for step in 0..cfg.steps {
        let (loss, grads) = dpo_loss(&pi_theta, pi_ref, pairs, cfg.gamma)?;
        let init = *initial.get_or_insert(loss);
        if loss > 10.0 * init {
            bad_streak += 1;
            if bad_streak >= 50 {
                return Err(Error::Diverged(format!(
                    "DPO loss {loss} stayed above 10x the initial {init} for 50 steps (step {step})"
                )));
            }
        } else {
            bad_streak = 0;
        }
        opt.step(pi_theta.params.flat_mut(), grads.flat());
        trace.push(loss);
    }
    Ok((pi_theta, trace))
}
