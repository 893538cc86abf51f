//! Acceptance gate: eleven end-to-end properties with explicit tolerances.
//! Each test prints one PASS line on success.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mrwb_core::codec::{train_codebook, Codec, CodecConfig, CodecTrainConfig, MotionFeatureSequence};
use mrwb_core::embedstore::{Channel, CosineScorer, EmbeddingRecord, Scorer, Store};
use mrwb_core::encoders::{
    ActionEncoder, ActionEncoderConfig, FrameFeatureSequence, KeypointSequence, ObjectEncoder,
    ObjectEncoderConfig, TextChannel, TextEncoder, TextEncoderConfig, TokenizedText,
};
use mrwb_core::fusion::{
    self, contrastive_loss, contrastive_loss_symmetric, fused_similarity, GateMode,
    LossDirection, Router, SimilarityQuadruple,
};
use mrwb_core::mcdpo::{
    build_preference_set, dpo_loss, rewards_from_distances, train_mcdpo, BuildConfig,
    DpoTrainConfig, PreferencePair, RewardConfig,
};
use mrwb_core::metrics::{confidence_interval, fid, fid_gaussian};
use mrwb_core::numerics::{finite_diff_grad_check, sq_dist, GaussianStats};
use mrwb_core::policy::{sft_loss, train_sft, PolicyConfig, PromptContext, SftTrainConfig, TokenPolicy};
use mrwb_core::Result;

use mrwb_workbench::data::{generate, SyntheticCorpusConfig};
use mrwb_workbench::models::{
    build_stores, init_retrievers, make_assembler, Artifacts, CodecExtractor, Dims, TextEvaluator,
};
use mrwb_workbench::pipeline::{
    dpo_examples, make_retriever, run_pipeline, sft_dataset, EvalConfig, RetrievalEnv,
};

fn tiny_policy(seed: u64) -> TokenPolicy {
    TokenPolicy::init(
        PolicyConfig { num_codes: 8, d_embed: 4, d_context: 4, hidden: 6, window: 2, max_len: 8 },
        seed,
    )
    .unwrap()
}

fn ctx(v: f64) -> PromptContext {
    PromptContext { vector: vec![v, -v, 0.5 * v, 0.1], rendered_prompt: "p".into() }
}

fn sample_pairs() -> Vec<PreferencePair> {
    vec![
        PreferencePair {
            example_id: "a".into(),
            context: ctx(0.3),
            chosen: vec![1, 4, 2],
            rejected: vec![7],
            reward_chosen: -0.1,
            reward_rejected: -0.9,
        },
        PreferencePair {
            example_id: "b".into(),
            context: ctx(-0.6),
            chosen: vec![0, 5],
            rejected: vec![5, 0, 3],
            reward_chosen: -0.4,
            reward_rejected: -0.6,
        },
    ]
}

#[test]
fn criterion_01_dpo_identity_at_zero_margin() {
    let start = Instant::now();
    for seed in [0u64, 11, 97] {
        let policy = tiny_policy(seed);
        let (loss, _) = dpo_loss(&policy, &policy, &sample_pairs(), 0.1).unwrap();
        let err = (loss - std::f64::consts::LN_2).abs();
        assert!(err < 1e-12, "dpo identity error {err} at seed {seed}");
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "criterion 1 took {elapsed:?}");
    println!("PASS criterion 1: dpo_loss(pi, pi) = ln 2 within 1e-12 in {elapsed:?}");
}

#[test]
fn criterion_02_gradient_suite() {
    let start = Instant::now();
    let tol = 1e-4;
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        // action encoder
        let acfg = ActionEncoderConfig {
            joints: 2,
            max_frames: 4,
            width: 8,
            heads: 2,
            layers: 1,
            d_emb: 4,
            ff_mult: 2,
            whole_skip: seed % 2 == 0,
        };
        let enc = ActionEncoder::init(acfg.clone(), seed).unwrap();
        let coords: Vec<f64> = (0..3 * 2 * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let seq = KeypointSequence::new(2, coords, None).unwrap();
        let c: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, cache) = enc.forward(&seq).unwrap();
        let grads = enc.backward(&seq, &cache, &c).unwrap();
        let err = finite_diff_grad_check(
            |w| {
                let mut e2 = ActionEncoder::init(acfg.clone(), seed).unwrap();
                e2.params.flat_mut().copy_from_slice(w);
                e2.encode(&seq).unwrap().iter().zip(&c).map(|(a, b)| a * b).sum()
            },
            enc.params.flat(),
            grads.flat(),
            1e-5,
        )
        .unwrap();
        worst = worst.max(err);
        assert!(err < tol, "action encoder gradient error {err} at seed {seed}");

        // text encoder
        let tcfg = TextEncoderConfig { vocab: 12, d_model: 6, d_emb: 4, context_cap: 10 };
        let text = TokenizedText::new(vec![1, 7, 3], 12, 10).unwrap();
        let tenc = TextEncoder::init(tcfg.clone(), TextChannel::Predicate, seed).unwrap();
        let (_, tcache) = tenc.forward(&text).unwrap();
        let tgrads = tenc.backward(&text, &tcache, &c).unwrap();
        let err = finite_diff_grad_check(
            |w| {
                let mut e2 = TextEncoder::init(tcfg.clone(), TextChannel::Predicate, seed).unwrap();
                e2.params.flat_mut().copy_from_slice(w);
                e2.encode(&text).unwrap().iter().zip(&c).map(|(a, b)| a * b).sum()
            },
            tenc.params.flat(),
            tgrads.flat(),
            1e-5,
        )
        .unwrap();
        worst = worst.max(err);
        assert!(err < tol, "text encoder gradient error {err} at seed {seed}");

        // object encoder
        let ocfg = ObjectEncoderConfig { d_frame: 5, d_emb: 4 };
        let ocfg2 = ocfg.clone();
        let fdata: Vec<f64> = (0..3 * 5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let frames = FrameFeatureSequence::new(5, fdata).unwrap();
        let oenc = ObjectEncoder::init(ocfg, seed).unwrap();
        let (_, ocache) = oenc.forward(&frames).unwrap();
        let ograds = oenc.backward(&ocache, &c).unwrap();
        let err = finite_diff_grad_check(
            |w| {
                let mut e2 = ObjectEncoder::init(ocfg2.clone(), seed).unwrap();
                e2.params.flat_mut().copy_from_slice(w);
                e2.encode(&frames).unwrap().iter().zip(&c).map(|(a, b)| a * b).sum()
            },
            oenc.params.flat(),
            ograds.flat(),
            1e-5,
        )
        .unwrap();
        worst = worst.max(err);
        assert!(err < tol, "object encoder gradient error {err} at seed {seed}");

        // symmetric contrastive loss wrt similarities
        let b = 4;
        let sim: Vec<f64> = (0..b * b).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, sgrad) = contrastive_loss_symmetric(&sim, b).unwrap();
        let err = finite_diff_grad_check(
            |s| contrastive_loss_symmetric(s, b).unwrap().0,
            &sim,
            &sgrad,
            1e-6,
        )
        .unwrap();
        worst = worst.max(err);
        assert!(err < tol, "contrastive gradient error {err} at seed {seed}");

        // fused similarity through the router
        let router = Router::init(3, GateMode::Softmax, seed).unwrap();
        let a: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (s_pa, s_go) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let w = router.weights(&a).unwrap();
        let mut rgrads = router.params.zeros_like();
        router.backward_weights(&a, &w, &[s_pa, s_go], &mut rgrads).unwrap();
        let quad = SimilarityQuadruple {
            s_pa,
            s_go,
            action_embed: a.clone(),
            text_id: "t".into(),
            video_id: "v".into(),
        };
        let err = finite_diff_grad_check(
            |p| {
                let mut r2 = Router::init(3, GateMode::Softmax, seed).unwrap();
                r2.params.flat_mut().copy_from_slice(p);
                fused_similarity(&quad, &r2).unwrap()
            },
            router.params.flat(),
            rgrads.flat(),
            1e-6,
        )
        .unwrap();
        worst = worst.max(err);
        assert!(err < tol, "router gradient error {err} at seed {seed}");

        // SFT loss
        let policy = tiny_policy(seed);
        let batch = vec![(ctx(0.4), vec![1, 4, 2]), (ctx(-0.2), vec![0, 0, 5])];
        let (_, pgrads) = sft_loss(&policy, &batch).unwrap();
        let err = finite_diff_grad_check(
            |p| {
                let mut p2 = tiny_policy(seed);
                p2.params.flat_mut().copy_from_slice(p);
                sft_loss(&p2, &batch).unwrap().0
            },
            policy.params.flat(),
            pgrads.flat(),
            1e-5,
        )
        .unwrap();
        worst = worst.max(err);
        assert!(err < tol, "sft gradient error {err} at seed {seed}");

        // DPO loss
        let pi_ref = tiny_policy(seed + 1000);
        let pairs = sample_pairs();
        let (_, dgrads) = dpo_loss(&policy, &pi_ref, &pairs, 0.1).unwrap();
        let err = finite_diff_grad_check(
            |p| {
                let mut p2 = tiny_policy(seed);
                p2.params.flat_mut().copy_from_slice(p);
                dpo_loss(&p2, &pi_ref, &pairs, 0.1).unwrap().0
            },
            policy.params.flat(),
            dgrads.flat(),
            1e-5,
        )
        .unwrap();
        worst = worst.max(err);
        assert!(err < tol, "dpo gradient error {err} at seed {seed}");
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 120.0, "criterion 2 took {elapsed:?}");
    println!("PASS criterion 2: gradient suite worst relative error {worst:.2e} < 1e-4 over 20 seeds in {elapsed:?}");
}

#[test]
fn criterion_03_contrastive_identities() {
    for b in [2usize, 3, 5, 8] {
        let sim = vec![0.37; b * b];
        for dir in [LossDirection::TextToVideo, LossDirection::VideoToText] {
            let (l, _) = contrastive_loss(&sim, b, dir).unwrap();
            assert_eq!(l, (b as f64).ln(), "uniform matrix at B={b}");
        }
    }
    let identity = vec![1.0, 0.0, 0.0, 1.0];
    let expect = (1.0 + std::f64::consts::E).ln() - 1.0;
    for dir in [LossDirection::TextToVideo, LossDirection::VideoToText] {
        let (l, _) = contrastive_loss(&identity, 2, dir).unwrap();
        assert!((l - expect).abs() < 1e-9, "identity matrix loss {l} vs {expect}");
    }
    println!("PASS criterion 3: uniform matrix gives exactly ln B; identity B=2 gives ln(1+e)-1 within 1e-9");
}

#[test]
fn criterion_04_fusion_convexity_and_gate_degeneracy() -> Result<()> {
    // 1e5 random draws stay inside the channel interval
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut violations = 0usize;
    for _ in 0..100_000 {
        let mut router = Router::init(4, GateMode::Softmax, rng.gen())?;
        for v in router.params.flat_mut() {
            *v = rng.gen_range(-3.0..3.0);
        }
        let a: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s_pa = rng.gen_range(-1.0..1.0);
        let s_go = rng.gen_range(-1.0..1.0);
        let quad = SimilarityQuadruple {
            s_pa,
            s_go,
            action_embed: a,
            text_id: String::new(),
            video_id: String::new(),
        };
        let s = fused_similarity(&quad, &router)?;
        if s < s_pa.min(s_go) - 1e-12 || s > s_pa.max(s_go) + 1e-12 {
            violations += 1;
        }
    }
    assert_eq!(violations, 0, "convexity violations in 1e5 draws");

    // gate pinned to the action channel reproduces the single-channel argsort
    let dims = Dims::default();
    let retrievers = init_retrievers(&dims, 17)?;
    let dir = tempfile::tempdir().unwrap();
    let mut action = Store::create(&dir.path().join("a.bin"), dims.d_emb)?;
    let mut object = Store::create(&dir.path().join("o.bin"), dims.d_emb)?;
    for i in 0..500 {
        let v: Vec<f64> = (0..dims.d_emb).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..dims.d_emb).map(|_| rng.gen_range(-1.0..1.0)).collect();
        action.append(EmbeddingRecord { id: format!("r{i:04}"), channel: Channel::Action, vector: v })?;
        object.append(EmbeddingRecord { id: format!("r{i:04}"), channel: Channel::Object, vector: w })?;
    }
    let mut router = Router::init(dims.d_emb, GateMode::Softmax, 0)?;
    router.params.get_mut("w")?.fill(0.0);
    router.params.get_mut("b")?.copy_from_slice(&[1000.0, -1000.0]);
    for q in 0..20 {
        let text = TokenizedText::new(vec![q % 32, (q + 5) % 32, (2 * q + 1) % 32], 32, 77)?;
        let fused = fusion::rank(&text, &action, &object, &retrievers, &router, 500)?;
        let p = retrievers.predicate.encode(&text)?;
        let single = action.top_k(500, &CosineScorer { query: &p })?;
        let fused_ids: Vec<&str> = fused.iter().map(|h| h.video_id.as_str()).collect();
        let single_ids: Vec<&str> = single.iter().map(|(id, _)| id.as_str()).collect();
        assert_eq!(fused_ids, single_ids, "argsort mismatch for query {q}");
    }
    println!("PASS criterion 4: 100000 convexity draws with zero violations; gate-degenerate argsort equals action-only on 500 items");
    Ok(())
}

#[test]
fn criterion_05_top_k_matches_exhaustive_oracle() -> Result<()> {
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dir = tempfile::tempdir().unwrap();
        let mut store = Store::create(&dir.path().join("s.bin"), 64)?;
        for i in 0..1000 {
            let v: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
            store.append(EmbeddingRecord {
                id: format!("r{i:04}"),
                channel: Channel::Action,
                vector: v,
            })?;
        }
        let query: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let scorer = CosineScorer { query: &query };
        // exhaustive oracle: score every record, full sort, same tie rule
        let mut oracle: Vec<(String, f64)> = store
            .records()
            .iter()
            .map(|r| Ok((r.id.clone(), scorer.score(r)?)))
            .collect::<Result<_>>()?;
        oracle.sort_by(|a, b| {
            b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then_with(|| a.0.cmp(&b.0))
        });
        for k in [1usize, 5, 10] {
            let got = store.top_k(k, &scorer)?;
            assert_eq!(got, oracle[..k].to_vec(), "top_k({k}) mismatch at seed {seed}");
        }
    }
    println!("PASS criterion 5: top_k equals exhaustive sort for k in {{1,5,10}} over 10 seeds");
    Ok(())
}

#[test]
fn criterion_06_fused_beats_object_only_on_held_out() -> Result<()> {
    let start = Instant::now();
    let dims = Dims::default();
    for seed in 0..3u64 {
        let corpus = generate(&SyntheticCorpusConfig {
            classes: 6,
            per_class: 10,
            action_only_fraction: 0.6,
            seed: 100 + seed,
            ..Default::default()
        })?;
        let split = 48;
        let train: Vec<_> = corpus.samples[..split].to_vec();
        let held: Vec<_> = corpus.samples[split..].to_vec();
        let action_only = held.iter().filter(|s| s.action_only).count();
        assert!(
            action_only * 10 >= held.len() * 4,
            "held-out action-only fraction below 40% at seed {seed}"
        );

        let mut retrievers = init_retrievers(&dims, seed)?;
        let train_corpus = mrwb_workbench::data::Corpus { vocab: corpus.vocab, samples: train };
        let triples = train_corpus.triples();
        let cfg = fusion::TrainConfig { epochs: 10, batch_size: 16, lr: 1e-2, seed, ..Default::default() };
        fusion::train_stage1(&mut retrievers, &triples, &cfg)?;
        let mut router = Router::init(dims.d_emb, GateMode::Softmax, seed)?;
        fusion::train_stage2(&retrievers, &mut router, &triples, &cfg)?;

        let held_corpus = mrwb_workbench::data::Corpus { vocab: corpus.vocab, samples: held };
        let dir = tempfile::tempdir().unwrap();
        let art = Artifacts::new(dir.path());
        let (action, object) = build_stores(&retrievers, &held_corpus, &art)?;
        let env = RetrievalEnv { retrievers, router, action, object, seed };

        let mut r1 = std::collections::BTreeMap::new();
        for name in ["fused", "object"] {
            let strategy = make_retriever(name, &env)?;
            let n = held_corpus.samples.len();
            let mut rankings = Vec::with_capacity(n);
            let mut relevant = Vec::with_capacity(n);
            for s in &held_corpus.samples {
                let hits = strategy.rank(&s.text, &s.id, n)?;
                rankings.push(hits.into_iter().map(|h| h.video_id).collect::<Vec<_>>());
                relevant.push(s.id.clone());
            }
            let m = fusion::retrieval_metrics(&rankings, &relevant)?;
            r1.insert(name, m.r_at_1);
        }
        assert!(
            r1["fused"] > r1["object"],
            "seed {seed}: fused R@1 {:.1} not above object-only R@1 {:.1}",
            r1["fused"],
            r1["object"]
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 300.0, "criterion 6 took {elapsed:?}");
    println!("PASS criterion 6: fused R@1 strictly exceeds object-only R@1 on held-out queries for 3/3 seeds in {elapsed:?}");
    Ok(())
}

#[test]
fn criterion_07_reward_bookkeeping() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let kappa = rng.gen_range(2..=6);
        let l: Vec<f64> = (0..kappa).map(|_| rng.gen_range(0.0..5.0)).collect();
        let d: Vec<f64> = (0..kappa).map(|_| rng.gen_range(0.0..5.0)).collect();
        let w_l = rng.gen_range(0.0..1.0);
        let w_d = 1.0 - w_l;
        let r = rewards_from_distances(&l, &d, w_l, w_d)?;
        let sum: f64 = r.iter().sum();
        assert!(
            (sum + w_l + w_d).abs() < 1e-10,
            "reward sum {sum} not -(w_l + w_d) = {}",
            -(w_l + w_d)
        );
    }
    // hand-computed: l shares (1/4, 3/4), d shares (1/2, 1/2)
    let r = rewards_from_distances(&[1.0, 3.0], &[2.0, 2.0], 0.9, 0.1)?;
    let expect = [-(0.9 * 0.25 + 0.1 * 0.5), -(0.9 * 0.75 + 0.1 * 0.5)];
    assert_eq!(r, expect, "hand-computed reward example");
    assert!((r[0] + 0.275).abs() < 1e-12 && (r[1] + 0.725).abs() < 1e-12);
    println!("PASS criterion 7: sum of rewards = -(w_l + w_d) within 1e-10; hand example (-0.275, -0.725) exact");
    Ok(())
}

#[test]
fn criterion_08_dpo_and_fused_retrieval_lower_fid() -> Result<()> {
    let start = Instant::now();
    let dims = Dims::default();
    let mut dpo_wins = 0usize;
    let mut fused_wins = 0usize;
    let mut dpo_gain = 0.0;
    let mut fused_gain = 0.0;
    let seeds = [0u64, 1, 2];
    for &seed in &seeds {
        let corpus = generate(&SyntheticCorpusConfig { seed: 200 + seed, ..Default::default() })?;
        let triples = corpus.triples();
        let mut retrievers = init_retrievers(&dims, seed)?;
        let cfg = fusion::TrainConfig { epochs: 8, batch_size: 16, lr: 1e-2, seed, ..Default::default() };
        fusion::train_stage1(&mut retrievers, &triples, &cfg)?;
        let mut router = Router::init(dims.d_emb, GateMode::Softmax, seed)?;
        fusion::train_stage2(&retrievers, &mut router, &triples, &cfg)?;
        let dir = tempfile::tempdir().unwrap();
        let art = Artifacts::new(dir.path());
        let (action, object) = build_stores(&retrievers, &corpus, &art)?;
        let env = RetrievalEnv { retrievers, router, action, object, seed };

        let mut codec = Codec::init(dims.codec_config(), seed)?;
        let motions: Vec<MotionFeatureSequence> =
            corpus.samples.iter().map(|s| s.motion.clone()).collect();
        train_codebook(&mut codec, &motions, &CodecTrainConfig { epochs: 30, lr: 1e-2, seed })?;

        let assembler = make_assembler(&dims)?;
        let dataset = sft_dataset(&corpus, &env, &codec, &assembler, dims.segments)?;
        let mut sft = TokenPolicy::init(dims.policy_config(), seed)?;
        train_sft(&mut sft, &dataset, &SftTrainConfig { steps: 80, batch_size: 8, lr: 1e-2, seed })?;

        let examples = dpo_examples(&corpus, &env, &codec, &assembler, dims.segments)?;
        let evaluator = TextEvaluator::fit(&corpus)?;
        let extractor = CodecExtractor(&codec);
        let reward_cfg = RewardConfig {
            kappa: 3,
            w_l: 0.9,
            w_d: 0.1,
            extractor: &extractor,
            text_embedder: &evaluator,
        };
        let build_cfg = BuildConfig { temperature: 0.9, subset_fraction: 1.0, seed };
        let set = build_preference_set(&sft, &examples, &reward_cfg, &build_cfg)?;
        let (dpo, _) =
            train_mcdpo(&sft, &set.pairs, &DpoTrainConfig { steps: 30, lr: 5e-4, gamma: 0.1 })?;

        // fixed generation seed shared across every arm
        let ecfg = EvalConfig { runs: 5, pool: 32, diversity_pairs: 16, temperature: 0.3, seed: 900 };
        let fid_of = |strategy_name: &str, policy: &TokenPolicy| -> Result<f64> {
            let strategy = make_retriever(strategy_name, &env)?;
            let outcome = run_pipeline(
                &corpus,
                &env,
                strategy.as_ref(),
                &codec,
                policy,
                &assembler,
                &evaluator,
                dims.segments,
                &ecfg,
            )?;
            Ok(outcome.report.fid.mean)
        };
        let fid_sft = fid_of("fused", &sft)?;
        let fid_dpo = fid_of("fused", &dpo)?;
        let fid_random = fid_of("random", &sft)?;
        println!(
            "  seed {seed}: FID fused+sft {fid_sft:.4}, fused+dpo {fid_dpo:.4}, random+sft {fid_random:.4}"
        );
        if fid_dpo < fid_sft {
            dpo_wins += 1;
        }
        if fid_sft < fid_random {
            fused_wins += 1;
        }
        dpo_gain += fid_sft - fid_dpo;
        fused_gain += fid_random - fid_sft;
    }
    assert!(dpo_wins >= 2, "DPO lowered FID in only {dpo_wins}/3 seeds");
    assert!(fused_wins >= 2, "fused retrieval lowered FID in only {fused_wins}/3 seeds");
    assert!(dpo_gain > 0.0, "mean DPO FID improvement {:.4} not positive", dpo_gain / 3.0);
    assert!(fused_gain > 0.0, "mean fused FID improvement {:.4} not positive", fused_gain / 3.0);
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 900.0, "criterion 8 took {elapsed:?}");
    println!(
        "PASS criterion 8: DPO < SFT FID in {dpo_wins}/3 seeds (mean gain {:.4}), fused < random FID in {fused_wins}/3 seeds (mean gain {:.4}) in {elapsed:?}",
        dpo_gain / 3.0,
        fused_gain / 3.0
    );
    Ok(())
}

#[test]
fn criterion_09_fid_closed_forms() -> Result<()> {
    // fid(X, X) = 0
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x: Vec<Vec<f64>> =
        (0..40).map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
    let self_fid = fid(&x, &x)?;
    assert!(self_fid.abs() < 1e-8, "fid(X, X) = {self_fid}");

    // exact parameters: N(0, I) vs N((3,4), I) -> 25 exactly
    let a = GaussianStats {
        mean: nalgebra::DVector::from_vec(vec![0.0, 0.0]),
        covariance: nalgebra::DMatrix::identity(2, 2),
    };
    let b = GaussianStats {
        mean: nalgebra::DVector::from_vec(vec![3.0, 4.0]),
        covariance: nalgebra::DMatrix::identity(2, 2),
    };
    assert_eq!(fid_gaussian(&a, &b)?, 25.0, "exact Gaussian case");

    // 10k-sample empirical version within 5%
    let normal = |rng: &mut ChaCha8Rng| {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    let xs: Vec<Vec<f64>> = (0..10_000).map(|_| vec![normal(&mut rng), normal(&mut rng)]).collect();
    let ys: Vec<Vec<f64>> =
        (0..10_000).map(|_| vec![3.0 + normal(&mut rng), 4.0 + normal(&mut rng)]).collect();
    let empirical = fid(&xs, &ys)?;
    assert!(
        (empirical - 25.0).abs() < 0.05 * 25.0,
        "empirical FID {empirical} outside 5% of 25"
    );
    println!("PASS criterion 9: fid(X,X) < 1e-8, exact Gaussian case = 25 exactly, 10k empirical {empirical:.3} within 5%");
    Ok(())
}

#[test]
fn criterion_10_codec_contract() -> Result<()> {
    // trained codebook on clustered data reaches >= 90% usage
    let d = 8;
    let clusters = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let centers: Vec<Vec<f64>> =
        (0..clusters).map(|_| (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
    let mut dataset = Vec::new();
    for c in 0..clusters {
        for _ in 0..8 {
            let frames = rng.gen_range(6..=12);
            let data: Vec<f64> = (0..frames * d)
                .map(|j| centers[c][j % d] + rng.gen_range(-0.05..0.05))
                .collect();
            dataset.push(MotionFeatureSequence::new(d, data)?);
        }
    }
    let cfg = CodecConfig { num_codes: 16, code_dim: 8, d_motion: d, ..Default::default() };
    let mut codec = Codec::init(cfg, 10)?;
    train_codebook(&mut codec, &dataset, &CodecTrainConfig { epochs: 60, lr: 5e-3, seed: 10 })?;
    let usage = codec.code_usage(&dataset)?;
    assert!(usage >= 0.9, "code usage {usage} below 90%");

    // token length = ceil(T / 3) at rate r = 3
    for t in 1..=13usize {
        let data: Vec<f64> = (0..t * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let seq = MotionFeatureSequence::new(d, data)?;
        let tokens = codec.encode(&seq)?;
        assert_eq!(tokens.tokens.len(), t.div_ceil(3), "token length at T={t}");
    }

    // encode matches a brute-force nearest-neighbor oracle on 1000 windows
    let enc_w = codec.params.get("enc.w")?.to_vec();
    let enc_b = codec.params.get("enc.b")?.to_vec();
    let book = codec.codebook()?;
    let mut checked = 0usize;
    'outer: for i in 0..600 {
        let t = 3 * (1 + i % 3);
        let data: Vec<f64> = (0..t * d).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let seq = MotionFeatureSequence::new(d, data)?;
        let tokens = codec.encode(&seq)?;
        for (w, &token) in codec.window_means(&seq)?.iter().zip(&tokens.tokens) {
            // independent linear map and exhaustive scan
            let mut z = enc_b.clone();
            let cd = z.len();
            for (row, &x) in w.iter().enumerate() {
                for (j, zj) in z.iter_mut().enumerate() {
                    *zj += x * enc_w[row * cd + j];
                }
            }
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for c in 0..book.len() {
                let dist = sq_dist(&z, book.code(c));
                if dist < best_d {
                    best_d = dist;
                    best = c;
                }
            }
            assert_eq!(token, best, "NN oracle mismatch on window {checked}");
            checked += 1;
            if checked >= 1000 {
                break 'outer;
            }
        }
    }
    assert!(checked >= 1000, "only {checked} windows checked");
    println!("PASS criterion 10: encode matches NN oracle on 1000 windows, token length = ceil(T/3), code usage {usage:.2} >= 0.9");
    Ok(())
}

#[test]
fn criterion_11_ci_matches_independent_oracle() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    // t quantile for df = 9 at 97.5%, from published tables
    let t975_df9 = 2.262157162740992;
    for _ in 0..50 {
        let values: Vec<f64> = (0..10).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let iv = confidence_interval(&values)?;
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let half = t975_df9 * (var / n).sqrt();
        assert!((iv.mean - mean).abs() < 1e-9, "mean {} vs oracle {}", iv.mean, mean);
        assert!((iv.half_width - half).abs() < 1e-9, "half-width {} vs oracle {}", iv.half_width, half);
    }
    // the FID pathway also respects the protocol end to end
    let x: Vec<Vec<f64>> = (0..30).map(|_| vec![rng.gen_range(-1.0..1.0)]).collect();
    let runs: Vec<f64> = (0..10)
        .map(|i| {
            let shifted: Vec<Vec<f64>> = x.iter().map(|v| vec![v[0] + 0.1 * i as f64]).collect();
            fid(&x, &shifted)
        })
        .collect::<Result<_>>()?;
    let iv = confidence_interval(&runs)?;
    let mean = runs.iter().sum::<f64>() / 10.0;
    let var = runs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 9.0;
    let half = t975_df9 * (var / 10.0).sqrt();
    assert!((iv.mean - mean).abs() < 1e-9 && (iv.half_width - half).abs() < 1e-9);
    println!("PASS criterion 11: 10-run mean and 95% t-interval match the independent oracle within 1e-9");
    Ok(())
}
