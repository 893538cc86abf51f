//! `mrwb`: command-line driver for the retrieval-augmented motion pipeline.
//!
//! Every subcommand takes `--config` (flat key-value file), `--seed`
//! (root seed, default 0), and `--out`. Exit codes: 0 success, 2 invalid
//! input or malformed files, 1 other runtime failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mrwb_core::codec::{train_codebook, Codec, CodecTrainConfig, MotionFeatureSequence};
use mrwb_core::fusion::{self, GateMode, Router};
use mrwb_core::mcdpo::{
    build_preference_set, train_mcdpo, BuildConfig, DpoTrainConfig, PreferencePair, RewardConfig,
};
use mrwb_core::policy::{train_sft, SftTrainConfig, TokenPolicy};
use mrwb_core::{Error, Result};

use mrwb_workbench::config::Config;
use mrwb_workbench::data::{self, Corpus, SyntheticCorpusConfig};
use mrwb_workbench::models::{
    build_stores, init_retrievers, load_codec, load_policy, load_retrievers, load_router,
    make_assembler, open_stores, save_retrievers, Artifacts, CodecExtractor, Dims, TextEvaluator,
};
use mrwb_workbench::pipeline::{
    dpo_examples, eval_features, generate_tokens, make_retriever, read_preferences, read_tokens,
    retrieve_contexts, run_pipeline, sft_dataset, write_preferences, write_rankings, write_report,
    write_tokens, EvalConfig, RetrievalEnv,
};

#[derive(Parser)]
#[command(name = "mrwb", version, about = "Video-retrieval-augmented motion generation workbench")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root random seed; all stage randomness derives from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path (directory for artifact stages, file for reports).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DataIn {
    /// Corpus directory produced by `gen-data`.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct ArtifactsIn {
    /// Directory holding trained checkpoints and stores.
    #[arg(long)]
    artifacts: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic paired text/video/motion corpus.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Encode every corpus video into the action and object stores.
    Ingest {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataIn,
    },
    /// Stage 1: train the four channel encoders contrastively.
    TrainRetriever {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataIn,
    },
    /// Stage 2: freeze the encoders and train the fusion router.
    TrainIntegrator {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataIn,
    },
    /// Train the motion tokenizer (windowed vector-quantized codec).
    TrainVq {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataIn,
    },
    /// Supervised policy training on retrieval-augmented contexts.
    TrainSft {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataIn,
    },
    /// Sample candidates and build the reward-ordered preference set.
    BuildDpo {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataIn,
    },
    /// Preference optimization from the saved pair file.
    TrainDpo {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataIn,
    },
    /// Rank corpus videos for every query text.
    Retrieve {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataIn,
        #[command(flatten)]
        artifacts: ArtifactsIn,
        /// Ranking strategy: fused, action, object, or random.
        #[arg(long, default_value = "fused")]
        retriever: String,
        /// Hits to keep per query.
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// Sample motion token sequences for every query.
    Generate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataIn,
        #[command(flatten)]
        artifacts: ArtifactsIn,
        #[arg(long, default_value = "fused")]
        retriever: String,
        /// Which trained policy to sample from: sft or dpo.
        #[arg(long, default_value = "sft")]
        policy: String,
    },
    /// Score a generated token file against the corpus references.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataIn,
        #[command(flatten)]
        artifacts: ArtifactsIn,
        /// Token file produced by `generate`.
        #[arg(long)]
        tokens: PathBuf,
    },
    /// Retrieve, generate, and evaluate end to end with repeated runs.
    Pipeline {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataIn,
        #[command(flatten)]
        artifacts: ArtifactsIn,
        #[arg(long, default_value = "fused")]
        retriever: String,
        #[arg(long, default_value = "sft")]
        policy: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidInput(_)
                | Error::Format(_)
                | Error::MissingChannel { .. }
                | Error::DuplicateId(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn load_config(common: &Common) -> Result<Config> {
    match &common.config {
        Some(path) => Config::load(path),
        None => Ok(Config::empty()),
    }
}

fn corpus_config(cfg: &Config, seed: u64) -> Result<SyntheticCorpusConfig> {
    let d = SyntheticCorpusConfig::default();
    Ok(SyntheticCorpusConfig {
        classes: cfg.get_usize("classes", d.classes)?,
        per_class: cfg.get_usize("per_class", d.per_class)?,
        vocab: cfg.get_usize("vocab", d.vocab)?,
        joints: cfg.get_usize("joints", d.joints)?,
        keypoint_frames: cfg.get_usize("keypoint_frames", d.keypoint_frames)?,
        d_frame: cfg.get_usize("d_frame", d.d_frame)?,
        frame_count: cfg.get_usize("frame_count", d.frame_count)?,
        d_motion: cfg.get_usize("d_motion", d.d_motion)?,
        motion_frames_min: cfg.get_usize("motion_frames_min", d.motion_frames_min)?,
        motion_frames_max: cfg.get_usize("motion_frames_max", d.motion_frames_max)?,
        noise: cfg.get_f64("noise", d.noise)?,
        action_only_fraction: cfg.get_f64("action_only_fraction", d.action_only_fraction)?,
        seed,
    })
}

fn stage_train_config(cfg: &Config, seed: u64) -> Result<fusion::TrainConfig> {
    let d = fusion::TrainConfig::default();
    Ok(fusion::TrainConfig {
        epochs: cfg.get_usize("retriever_epochs", d.epochs)?,
        batch_size: cfg.get_usize("retriever_batch", d.batch_size)?,
        lr: cfg.get_f64("retriever_lr", d.lr)?,
        seed,
        warm_start_epochs: cfg.get_usize("warm_start_epochs", d.warm_start_epochs)?,
        temperature: cfg.get_f64("contrastive_temperature", d.temperature)?,
    })
}

fn load_env(dims: &Dims, art: &Artifacts, seed: u64) -> Result<RetrievalEnv> {
    let retrievers = load_retrievers(dims, art)?;
    let router = load_router(dims, art)?;
    let (action, object) = open_stores(art)?;
    Ok(RetrievalEnv { retrievers, router, action, object, seed })
}

fn pick_policy(dims: &Dims, art: &Artifacts, which: &str) -> Result<TokenPolicy> {
    match which {
        "sft" => load_policy(dims, &art.policy_sft_ckpt(), "train-sft"),
        "dpo" => load_policy(dims, &art.policy_dpo_ckpt(), "train-dpo"),
        other => Err(Error::InvalidInput(format!("unknown policy '{other}' (expected sft or dpo)"))),
    }
}

fn motions(corpus: &Corpus) -> Vec<MotionFeatureSequence> {
    corpus.samples.iter().map(|s| s.motion.clone()).collect()
}

fn eval_config(cfg: &Config, seed: u64) -> Result<EvalConfig> {
    let d = EvalConfig::default();
    Ok(EvalConfig {
        pool: cfg.get_usize("pool", d.pool)?,
        diversity_pairs: cfg.get_usize("diversity_pairs", d.diversity_pairs)?,
        runs: cfg.get_usize("runs", d.runs)?,
        temperature: cfg.get_f64("gen_temperature", d.temperature)?,
        seed,
    })
}

fn dpo_pairs_path(art: &Artifacts) -> PathBuf {
    art.dir.join("dpo_pairs.tsv")
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path)?;
    Ok(())
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenData { common } => {
            let cfg = load_config(&common)?;
            let corpus = data::generate(&corpus_config(&cfg, common.seed)?)?;
            ensure_dir(&common.out)?;
            data::write(&corpus, &common.out)?;
            println!("wrote {} samples to {}", corpus.samples.len(), common.out.display());
            Ok(())
        }
        Cmd::Ingest { common, data } => {
            let cfg = load_config(&common)?;
            let dims = Dims::from_config(&cfg)?;
            let corpus = data::load(&data.data)?;
            ensure_dir(&common.out)?;
            let art = Artifacts::new(&common.out);
            let retrievers = load_retrievers(&dims, &art)?;
            let (action, object) = build_stores(&retrievers, &corpus, &art)?;
            println!("ingested {} videos into both stores", action.count().min(object.count()));
            Ok(())
        }
        Cmd::TrainRetriever { common, data } => {
            let cfg = load_config(&common)?;
            let dims = Dims::from_config(&cfg)?;
            let corpus = data::load(&data.data)?;
            let mut retrievers = init_retrievers(&dims, common.seed)?;
            let triples = corpus.triples();
            let trace =
                fusion::train_stage1(&mut retrievers, &triples, &stage_train_config(&cfg, common.seed)?)?;
            ensure_dir(&common.out)?;
            save_retrievers(&retrievers, &Artifacts::new(&common.out))?;
            println!(
                "stage 1 done: action loss {:.4} -> {:.4}, object loss {:.4} -> {:.4}",
                trace.action.first().unwrap_or(&f64::NAN),
                trace.action.last().unwrap_or(&f64::NAN),
                trace.object.first().unwrap_or(&f64::NAN),
                trace.object.last().unwrap_or(&f64::NAN)
            );
            Ok(())
        }
        Cmd::TrainIntegrator { common, data } => {
            let cfg = load_config(&common)?;
            let dims = Dims::from_config(&cfg)?;
            let corpus = data::load(&data.data)?;
            let art = Artifacts::new(&common.out);
            let retrievers = load_retrievers(&dims, &art)?;
            let mut router = Router::init(dims.d_emb, GateMode::Softmax, common.seed)?;
            let triples = corpus.triples();
            let trace =
                fusion::train_stage2(&retrievers, &mut router, &triples, &stage_train_config(&cfg, common.seed)?)?;
            router.params.save(&art.router_ckpt())?;
            println!(
                "stage 2 done: router loss {:.4} -> {:.4}",
                trace.first().unwrap_or(&f64::NAN),
                trace.last().unwrap_or(&f64::NAN)
            );
            Ok(())
        }
        Cmd::TrainVq { common, data } => {
            let cfg = load_config(&common)?;
            let dims = Dims::from_config(&cfg)?;
            let corpus = data::load(&data.data)?;
            let mut codec = Codec::init(dims.codec_config(), common.seed)?;
            let train_cfg = CodecTrainConfig {
                epochs: cfg.get_usize("vq_epochs", CodecTrainConfig::default().epochs)?,
                lr: cfg.get_f64("vq_lr", CodecTrainConfig::default().lr)?,
                seed: common.seed,
            };
            let dataset = motions(&corpus);
            let report = train_codebook(&mut codec, &dataset, &train_cfg)?;
            ensure_dir(&common.out)?;
            codec.params.save(&Artifacts::new(&common.out).codec_ckpt())?;
            println!(
                "codec trained: loss {:.4} -> {:.4}, code usage {:.2}",
                report.loss_trace.first().unwrap_or(&f64::NAN),
                report.loss_trace.last().unwrap_or(&f64::NAN),
                codec.code_usage(&dataset)?
            );
            Ok(())
        }
        Cmd::TrainSft { common, data } => {
            let cfg = load_config(&common)?;
            let dims = Dims::from_config(&cfg)?;
            let corpus = data::load(&data.data)?;
            let art = Artifacts::new(&common.out);
            let env = load_env(&dims, &art, common.seed)?;
            let codec = load_codec(&dims, &art)?;
            let assembler = make_assembler(&dims)?;
            let dataset = sft_dataset(&corpus, &env, &codec, &assembler, dims.segments)?;
            let mut policy = TokenPolicy::init(dims.policy_config(), common.seed)?;
            let d = SftTrainConfig::default();
            let train_cfg = SftTrainConfig {
                steps: cfg.get_usize("sft_steps", d.steps)?,
                batch_size: cfg.get_usize("sft_batch", d.batch_size)?,
                lr: cfg.get_f64("sft_lr", d.lr)?,
                seed: common.seed,
            };
            let trace = train_sft(&mut policy, &dataset, &train_cfg)?;
            policy.params.save(&art.policy_sft_ckpt())?;
            println!(
                "SFT done: loss {:.4} -> {:.4}",
                trace.first().unwrap_or(&f64::NAN),
                trace.last().unwrap_or(&f64::NAN)
            );
            Ok(())
        }
        Cmd::BuildDpo { common, data } => {
            let cfg = load_config(&common)?;
            let dims = Dims::from_config(&cfg)?;
            let corpus = data::load(&data.data)?;
            let art = Artifacts::new(&common.out);
            let env = load_env(&dims, &art, common.seed)?;
            let codec = load_codec(&dims, &art)?;
            let assembler = make_assembler(&dims)?;
            let policy = load_policy(&dims, &art.policy_sft_ckpt(), "train-sft")?;
            let examples = dpo_examples(&corpus, &env, &codec, &assembler, dims.segments)?;
            let evaluator = TextEvaluator::fit(&corpus)?;
            let extractor = CodecExtractor(&codec);
            let reward_cfg = RewardConfig {
                kappa: cfg.get_usize("kappa", 3)?,
                w_l: cfg.get_f64("w_l", 0.9)?,
                w_d: cfg.get_f64("w_d", 0.1)?,
                extractor: &extractor,
                text_embedder: &evaluator,
            };
            let d = BuildConfig::default();
            let build_cfg = BuildConfig {
                temperature: cfg.get_f64("dpo_temperature", d.temperature)?,
                subset_fraction: cfg.get_f64("subset_fraction", d.subset_fraction)?,
                seed: common.seed,
            };
            let set = build_preference_set(&policy, &examples, &reward_cfg, &build_cfg)?;
            write_preferences(&dpo_pairs_path(&art), &set.pairs)?;
            println!("built {} preference pairs ({} skipped)", set.pairs.len(), set.skipped);
            Ok(())
        }
        Cmd::TrainDpo { common, data } => {
            let cfg = load_config(&common)?;
            let dims = Dims::from_config(&cfg)?;
            let corpus = data::load(&data.data)?;
            let art = Artifacts::new(&common.out);
            let env = load_env(&dims, &art, common.seed)?;
            let codec = load_codec(&dims, &art)?;
            let assembler = make_assembler(&dims)?;
            let policy = load_policy(&dims, &art.policy_sft_ckpt(), "train-sft")?;
            let rows = read_preferences(&dpo_pairs_path(&art))?;
            let examples = dpo_examples(&corpus, &env, &codec, &assembler, dims.segments)?;
            let pairs: Vec<PreferencePair> = rows
                .into_iter()
                .map(|r| {
                    let ex = examples
                        .iter()
                        .find(|e| e.id == r.example_id)
                        .ok_or_else(|| {
                            Error::InvalidInput(format!(
                                "preference example '{}' not in corpus",
                                r.example_id
                            ))
                        })?;
                    Ok(PreferencePair {
                        example_id: r.example_id,
                        context: ex.context.clone(),
                        chosen: r.chosen,
                        rejected: r.rejected,
                        reward_chosen: r.reward_chosen,
                        reward_rejected: r.reward_rejected,
                    })
                })
                .collect::<Result<_>>()?;
            let train_cfg = DpoTrainConfig {
                steps: cfg.get_usize("dpo_steps", 60)?,
                lr: cfg.get_f64("dpo_lr", 1e-3)?,
                gamma: cfg.get_f64("gamma", 0.1)?,
            };
            let (tuned, trace) = train_mcdpo(&policy, &pairs, &train_cfg)?;
            tuned.params.save(&art.policy_dpo_ckpt())?;
            println!(
                "DPO done: loss {:.4} -> {:.4}",
                trace.first().unwrap_or(&f64::NAN),
                trace.last().unwrap_or(&f64::NAN)
            );
            Ok(())
        }
        Cmd::Retrieve { common, data, artifacts, retriever, k } => {
            let cfg = load_config(&common)?;
            let dims = Dims::from_config(&cfg)?;
            let corpus = data::load(&data.data)?;
            let art = Artifacts::new(&artifacts.artifacts);
            let env = load_env(&dims, &art, common.seed)?;
            let strategy = make_retriever(&retriever, &env)?;
            let rankings = corpus
                .samples
                .iter()
                .map(|s| Ok((s.id.clone(), strategy.rank(&s.text, &s.id, k)?)))
                .collect::<Result<Vec<_>>>()?;
            write_rankings(&common.out, &rankings)?;
            println!("ranked {} queries with '{}'", rankings.len(), strategy.name());
            Ok(())
        }
        Cmd::Generate { common, data, artifacts, retriever, policy } => {
            let cfg = load_config(&common)?;
            let dims = Dims::from_config(&cfg)?;
            let corpus = data::load(&data.data)?;
            let art = Artifacts::new(&artifacts.artifacts);
            let env = load_env(&dims, &art, common.seed)?;
            let policy = pick_policy(&dims, &art, &policy)?;
            let assembler = make_assembler(&dims)?;
            let strategy = make_retriever(&retriever, &env)?;
            let contexts = retrieve_contexts(&corpus, &env, strategy.as_ref(), &assembler, dims.segments)?;
            let temperature = cfg.get_f64("gen_temperature", 0.9)?;
            let tokens = generate_tokens(&contexts, &policy, temperature, common.seed)?;
            write_tokens(&common.out, &tokens)?;
            println!("generated {} sequences", tokens.len());
            Ok(())
        }
        Cmd::Evaluate { common, data, artifacts, tokens } => {
            let cfg = load_config(&common)?;
            let dims = Dims::from_config(&cfg)?;
            let corpus = data::load(&data.data)?;
            let art = Artifacts::new(&artifacts.artifacts);
            let codec = load_codec(&dims, &art)?;
            let evaluator = TextEvaluator::fit(&corpus)?;
            let token_seqs = read_tokens(&tokens)?;
            let ecfg = eval_config(&cfg, common.seed)?;
            let (generated, reference, text) = eval_features(&corpus, &token_seqs, &codec, &evaluator)?;
            let mut values = Vec::with_capacity(ecfg.runs);
            for run in 0..ecfg.runs as u64 {
                let run_eval = mrwb_core::metrics::EvalRun {
                    generated: generated.clone(),
                    reference: reference.clone(),
                    text: text.clone(),
                    seed: common.seed.wrapping_add(run),
                };
                values.push(mrwb_core::metrics::evaluate_run(&run_eval, ecfg.pool, ecfg.diversity_pairs)?);
            }
            let rep = mrwb_core::metrics::report(&values)?;
            write_report(&common.out, &rep)?;
            println!("evaluated {} sequences over {} runs", token_seqs.len(), ecfg.runs);
            Ok(())
        }
        Cmd::Pipeline { common, data, artifacts, retriever, policy } => {
            let cfg = load_config(&common)?;
            let dims = Dims::from_config(&cfg)?;
            let corpus = data::load(&data.data)?;
            let art = Artifacts::new(&artifacts.artifacts);
            let env = load_env(&dims, &art, common.seed)?;
            let codec = load_codec(&dims, &art)?;
            let policy = pick_policy(&dims, &art, &policy)?;
            let assembler = make_assembler(&dims)?;
            let evaluator = TextEvaluator::fit(&corpus)?;
            let strategy = make_retriever(&retriever, &env)?;
            let ecfg = eval_config(&cfg, common.seed)?;
            let outcome = run_pipeline(
                &corpus,
                &env,
                strategy.as_ref(),
                &codec,
                &policy,
                &assembler,
                &evaluator,
                dims.segments,
                &ecfg,
            )?;
            ensure_dir(&common.out)?;
            write_rankings(&common.out.join("rankings.tsv"), &outcome.rankings)?;
            write_tokens(&common.out.join("tokens.tsv"), &outcome.tokens)?;
            write_report(&common.out.join("report.tsv"), &outcome.report)?;
            println!(
                "pipeline done ({} queries, {} runs): FID {:.4} +/- {:.4}",
                corpus.samples.len(),
                ecfg.runs,
                outcome.report.fid.mean,
                outcome.report.fid.half_width
            );
            Ok(())
        }
    }
}
