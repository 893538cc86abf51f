//! End-to-end pipeline: retrieval strategies, prompt-context assembly,
//! dataset construction for the two policy training stages, the full
//! retrieve/generate/evaluate loop, and the TSV file formats every command
//! reads and writes.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mrwb_core::codec::{Codec, MotionTokenSequence};
use mrwb_core::embedstore::{CosineScorer, Store};
use mrwb_core::encoders::TokenizedText;
use mrwb_core::fusion::{self, RetrievalResult, Retrievers, Router};
use mrwb_core::mcdpo::{DpoExample, PreferencePair};
use mrwb_core::metrics::{evaluate_run, report, EvalRun, MetricReport, MetricValues};
use mrwb_core::policy::{ContextAssembler, PromptContext, TokenPolicy};
use mrwb_core::{Error, Result};

use crate::data::{Corpus, Sample};
use crate::models::{pooled, text_key, TextEvaluator};

/// Everything a retrieval strategy may consult.
pub struct RetrievalEnv {
    pub retrievers: Retrievers,
    pub router: Router,
    pub action: Store,
    pub object: Store,
    pub seed: u64,
}

/// A ranking algorithm selectable by name.
pub trait RetrieverStrategy {
    fn name(&self) -> &'static str;
    fn rank(&self, query: &TokenizedText, query_id: &str, k: usize) -> Result<Vec<RetrievalResult>>;
}

pub const RETRIEVER_NAMES: [&str; 4] = ["fused", "action", "object", "random"];

/// Name-keyed registry over the available strategies.
pub fn make_retriever<'a>(
    name: &str,
    env: &'a RetrievalEnv,
) -> Result<Box<dyn RetrieverStrategy + 'a>> {
    match name {
        "fused" => Ok(Box::new(FusedRetriever { env })),
        "action" => Ok(Box::new(ChannelRetriever { env, channel: QueryChannel::Action })),
        "object" => Ok(Box::new(ChannelRetriever { env, channel: QueryChannel::Object })),
        "random" => Ok(Box::new(RandomRetriever { env })),
        other => Err(Error::InvalidInput(format!(
            "unknown retriever '{other}' (expected one of {})",
            RETRIEVER_NAMES.join(", ")
        ))),
    }
}

/// Dual-channel similarity routed through the trained integrator.
struct FusedRetriever<'a> {
    env: &'a RetrievalEnv,
}

impl RetrieverStrategy for FusedRetriever<'_> {
    fn name(&self) -> &'static str {
        "fused"
    }

    fn rank(&self, query: &TokenizedText, _query_id: &str, k: usize) -> Result<Vec<RetrievalResult>> {
        fusion::rank(query, &self.env.action, &self.env.object, &self.env.retrievers, &self.env.router, k)
    }
}

enum QueryChannel {
    Action,
    Object,
}

/// Single-channel cosine ranking (action-only or object-only ablation).
struct ChannelRetriever<'a> {
    env: &'a RetrievalEnv,
    channel: QueryChannel,
}

impl RetrieverStrategy for ChannelRetriever<'_> {
    fn name(&self) -> &'static str {
        match self.channel {
            QueryChannel::Action => "action",
            QueryChannel::Object => "object",
        }
    }

    fn rank(&self, query: &TokenizedText, _query_id: &str, k: usize) -> Result<Vec<RetrievalResult>> {
        let (embed, store) = match self.channel {
            QueryChannel::Action => (self.env.retrievers.predicate.encode(query)?, &self.env.action),
            QueryChannel::Object => (self.env.retrievers.argument.encode(query)?, &self.env.object),
        };
        let hits = store.top_k(k, &CosineScorer { query: &embed })?;
        Ok(hits
            .into_iter()
            .enumerate()
            .map(|(i, (video_id, score))| RetrievalResult { rank: i + 1, video_id, score })
            .collect())
    }
}

/// Seeded uniform shuffle of the corpus ids: the retrieval-free baseline.
struct RandomRetriever<'a> {
    env: &'a RetrievalEnv,
}

impl RetrieverStrategy for RandomRetriever<'_> {
    fn name(&self) -> &'static str {
        "random"
    }

    fn rank(&self, _query: &TokenizedText, query_id: &str, k: usize) -> Result<Vec<RetrievalResult>> {
        let mut ids: Vec<String> =
            self.env.action.records().iter().map(|r| r.id.clone()).collect();
        ids.sort();
        let mut rng = ChaCha8Rng::seed_from_u64(query_seed(self.env.seed, "random", query_id));
        ids.shuffle(&mut rng);
        ids.truncate(k);
        Ok(ids
            .into_iter()
            .enumerate()
            .map(|(i, video_id)| RetrievalResult { rank: i + 1, video_id, score: 0.0 })
            .collect())
    }
}

/// FNV-1a substream seed for one named per-query decision.
pub fn query_seed(root: u64, label: &str, id: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325 ^ root;
    for b in label.as_bytes().iter().chain(id.as_bytes()) {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Mean feature vector of each of `k` contiguous frame chunks of the
/// retrieved video.
pub fn segment_means(sample: &Sample, k: usize) -> Result<Vec<Vec<f64>>> {
    let frames = &sample.frames;
    let n = frames.frames();
    if n < k {
        return Err(Error::InvalidInput(format!("{n} frames cannot form {k} segments")));
    }
    let d = frames.d_frame();
    let mut out = Vec::with_capacity(k);
    for s in 0..k {
        let lo = s * n / k;
        let hi = (s + 1) * n / k;
        let mut mean = vec![0.0; d];
        for t in lo..hi {
            for (m, &x) in mean.iter_mut().zip(frames.frame(t)) {
                *m += x;
            }
        }
        for m in &mut mean {
            *m /= (hi - lo) as f64;
        }
        out.push(mean);
    }
    Ok(out)
}

/// Build the prompt context for one query given its retrieved video.
pub fn build_context(
    assembler: &ContextAssembler,
    retrievers: &Retrievers,
    query: &Sample,
    retrieved: &Sample,
    segments: usize,
) -> Result<PromptContext> {
    let text_embed = retrievers.predicate.encode(&query.text)?;
    let segs = segment_means(retrieved, segments)?;
    assembler.build_context(&text_embed, &segs, &query.caption, &retrieved.id)
}

fn sample_by_id<'a>(corpus: &'a Corpus, id: &str) -> Result<&'a Sample> {
    corpus
        .samples
        .iter()
        .find(|s| s.id == id)
        .ok_or_else(|| Error::InvalidInput(format!("retrieved id '{id}' not in corpus")))
}

/// Rank-1 retrieval for every corpus sample under one strategy, plus the
/// assembled context for each.
pub fn retrieve_contexts(
    corpus: &Corpus,
    env: &RetrievalEnv,
    strategy: &dyn RetrieverStrategy,
    assembler: &ContextAssembler,
    segments: usize,
) -> Result<Vec<(String, RetrievalResult, PromptContext)>> {
    let mut out = Vec::with_capacity(corpus.samples.len());
    for s in &corpus.samples {
        let hits = strategy.rank(&s.text, &s.id, 1)?;
        let top = hits
            .into_iter()
            .next()
            .ok_or_else(|| Error::InvalidInput(format!("empty ranking for query '{}'", s.id)))?;
        let retrieved = sample_by_id(corpus, &top.video_id)?;
        let ctx = build_context(assembler, &env.retrievers, s, retrieved, segments)?;
        out.push((s.id.clone(), top, ctx));
    }
    Ok(out)
}

/// Supervised dataset: fused-retrieval contexts paired with the codec
/// tokenization of each sample's own motion.
pub fn sft_dataset(
    corpus: &Corpus,
    env: &RetrievalEnv,
    codec: &Codec,
    assembler: &ContextAssembler,
    segments: usize,
) -> Result<Vec<(PromptContext, Vec<usize>)>> {
    let strategy = make_retriever("fused", env)?;
    let contexts = retrieve_contexts(corpus, env, strategy.as_ref(), assembler, segments)?;
    corpus
        .samples
        .iter()
        .zip(contexts)
        .map(|(s, (_, _, ctx))| Ok((ctx, codec.encode(&s.motion)?.tokens)))
        .collect()
}

/// The same examples in preference-building form; the text key carries the
/// caption's token ids for the shared-space embedder.
pub fn dpo_examples(
    corpus: &Corpus,
    env: &RetrievalEnv,
    codec: &Codec,
    assembler: &ContextAssembler,
    segments: usize,
) -> Result<Vec<DpoExample>> {
    let strategy = make_retriever("fused", env)?;
    let contexts = retrieve_contexts(corpus, env, strategy.as_ref(), assembler, segments)?;
    corpus
        .samples
        .iter()
        .zip(contexts)
        .map(|(s, (_, _, ctx))| {
            Ok(DpoExample {
                id: s.id.clone(),
                text: text_key(s.text.ids()),
                context: ctx,
                reference: codec.encode(&s.motion)?,
            })
        })
        .collect()
}

/// Sample one token sequence per query; empty draws retry on fresh
/// sub-seeds before falling back to the first code.
pub fn generate_tokens(
    contexts: &[(String, RetrievalResult, PromptContext)],
    policy: &TokenPolicy,
    temperature: f64,
    seed: u64,
) -> Result<Vec<(String, MotionTokenSequence)>> {
    let mut out = Vec::with_capacity(contexts.len());
    for (id, _, ctx) in contexts {
        let base = query_seed(seed, "generate", id);
        let mut tokens = MotionTokenSequence { tokens: Vec::new() };
        for sub in 0..8u64 {
            tokens = policy.sample(ctx, temperature, base.wrapping_add(sub))?;
            if !tokens.tokens.is_empty() {
                break;
            }
        }
        if tokens.tokens.is_empty() {
            tokens.tokens.push(0);
        }
        out.push((id.clone(), tokens));
    }
    Ok(out)
}

/// Per-sample evaluation-space features for a set of generated sequences.
pub fn eval_features(
    corpus: &Corpus,
    tokens: &[(String, MotionTokenSequence)],
    codec: &Codec,
    evaluator: &TextEvaluator,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let mut generated = Vec::with_capacity(tokens.len());
    let mut reference = Vec::with_capacity(tokens.len());
    let mut text = Vec::with_capacity(tokens.len());
    for (id, seq) in tokens {
        let sample = sample_by_id(corpus, id)?;
        generated.push(pooled(&codec.decode(seq)?));
        reference.push(pooled(&sample.motion));
        text.push(evaluator.embed_tokens(sample.text.ids())?);
    }
    Ok((generated, reference, text))
}

/// Evaluation protocol knobs.
#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub pool: usize,
    pub diversity_pairs: usize,
    pub runs: usize,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { pool: 32, diversity_pairs: 16, runs: 10, temperature: 0.9, seed: 0 }
    }
}

/// Full pipeline output for one strategy/policy combination.
pub struct PipelineOutcome {
    pub rankings: Vec<(String, Vec<RetrievalResult>)>,
    pub tokens: Vec<(String, MotionTokenSequence)>,
    pub values: Vec<MetricValues>,
    pub report: MetricReport,
}

/// Retrieve, generate, and evaluate over repeated runs. Each run re-samples
/// generation and re-draws the metric pools from its own substream, so the
/// aggregate intervals reflect genuine run-to-run variation.
pub fn run_pipeline(
    corpus: &Corpus,
    env: &RetrievalEnv,
    strategy: &dyn RetrieverStrategy,
    codec: &Codec,
    policy: &TokenPolicy,
    assembler: &ContextAssembler,
    evaluator: &TextEvaluator,
    segments: usize,
    cfg: &EvalConfig,
) -> Result<PipelineOutcome> {
    if cfg.runs == 0 {
        return Err(Error::InvalidInput("evaluation needs at least one run".into()));
    }
    let contexts = retrieve_contexts(corpus, env, strategy, assembler, segments)?;
    let rankings = corpus
        .samples
        .iter()
        .map(|s| {
            let hits = strategy.rank(&s.text, &s.id, 10.min(corpus.samples.len()))?;
            Ok((s.id.clone(), hits))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut values = Vec::with_capacity(cfg.runs);
    let mut first_tokens = None;
    for run in 0..cfg.runs as u64 {
        let tokens =
            generate_tokens(&contexts, policy, cfg.temperature, cfg.seed.wrapping_add(run))?;
        let (generated, reference, text) = eval_features(corpus, &tokens, codec, evaluator)?;
        let run_eval = EvalRun { generated, reference, text, seed: cfg.seed.wrapping_add(run) };
        values.push(evaluate_run(&run_eval, cfg.pool, cfg.diversity_pairs)?);
        if first_tokens.is_none() {
            first_tokens = Some(tokens);
        }
    }
    let rep = report(&values)?;
    Ok(PipelineOutcome { rankings, tokens: first_tokens.unwrap(), values, report: rep })
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

/// `query_id\trank\tvideo_id\tscore`, one line per hit.
pub fn write_rankings(path: &Path, rankings: &[(String, Vec<RetrievalResult>)]) -> Result<()> {
    let mut out = String::new();
    for (qid, hits) in rankings {
        for h in hits {
            out.push_str(&format!("{qid}\t{}\t{}\t{:?}\n", h.rank, h.video_id, h.score));
        }
    }
    write_atomic(path, &out)
}

/// `id\tspace-separated-ints`, one line per sequence.
pub fn write_tokens(path: &Path, tokens: &[(String, MotionTokenSequence)]) -> Result<()> {
    let mut out = String::new();
    for (id, seq) in tokens {
        out.push_str(&format!("{id}\t{}\n", join_tokens(&seq.tokens)));
    }
    write_atomic(path, &out)
}

pub fn read_tokens(path: &Path) -> Result<Vec<(String, MotionTokenSequence)>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (id, rest) = line
            .split_once('\t')
            .ok_or_else(|| Error::Format(format!("token line {}: missing tab", lineno + 1)))?;
        out.push((id.to_string(), MotionTokenSequence { tokens: parse_tokens(rest, lineno)? }));
    }
    if out.is_empty() {
        return Err(Error::InvalidInput(format!("no token lines in {}", path.display())));
    }
    Ok(out)
}

/// `example_id\tchosen-tokens\trejected-tokens\treward_w\treward_l`.
pub fn write_preferences(path: &Path, pairs: &[PreferencePair]) -> Result<()> {
    let mut out = String::new();
    for p in pairs {
        out.push_str(&format!(
            "{}\t{}\t{}\t{:?}\t{:?}\n",
            p.example_id,
            join_tokens(&p.chosen),
            join_tokens(&p.rejected),
            p.reward_chosen,
            p.reward_rejected
        ));
    }
    write_atomic(path, &out)
}

/// Raw preference rows; contexts are reattached from the corpus by id.
pub struct PreferenceRow {
    pub example_id: String,
    pub chosen: Vec<usize>,
    pub rejected: Vec<usize>,
    pub reward_chosen: f64,
    pub reward_rejected: f64,
}

pub fn read_preferences(path: &Path) -> Result<Vec<PreferenceRow>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(Error::Format(format!(
                "preference line {}: expected 5 tab-separated fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        let reward = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Format(format!("preference line {}: bad reward '{s}'", lineno + 1)))
        };
        out.push(PreferenceRow {
            example_id: fields[0].to_string(),
            chosen: parse_tokens(fields[1], lineno)?,
            rejected: parse_tokens(fields[2], lineno)?,
            reward_chosen: reward(fields[3])?,
            reward_rejected: reward(fields[4])?,
        });
    }
    if out.is_empty() {
        return Err(Error::InvalidInput(format!("no preference pairs in {}", path.display())));
    }
    Ok(out)
}

/// Flat `metric.field\tvalue` report, stable key order.
pub fn write_report(path: &Path, rep: &MetricReport) -> Result<()> {
    let mut out = String::new();
    for (name, iv) in [
        ("fid", rep.fid),
        ("r_precision_top1", rep.r1),
        ("r_precision_top2", rep.r2),
        ("r_precision_top3", rep.r3),
        ("mm_dist", rep.mm_dist),
        ("diversity", rep.diversity),
    ] {
        out.push_str(&format!("{name}.mean\t{:?}\n", iv.mean));
        out.push_str(&format!("{name}.ci95_half_width\t{:?}\n", iv.half_width));
    }
    write_atomic(path, &out)
}

fn join_tokens(tokens: &[usize]) -> String {
    tokens.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

fn parse_tokens(s: &str, lineno: usize) -> Result<Vec<usize>> {
    s.split(' ')
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse().map_err(|_| Error::Format(format!("line {}: bad token '{t}'", lineno + 1)))
        })
        .collect()
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(contents.as_bytes())?;
    Ok(())
}
