//! Synthetic corpus generation: per-class latent prototypes drive correlated
//! text tokens, keypoint dynamics, frame features, and motion features, with
//! a configurable fraction of samples whose object channel is pure noise.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mrwb_core::codec::MotionFeatureSequence;
use mrwb_core::encoders::{FrameFeatureSequence, KeypointSequence, TokenizedText};
use mrwb_core::fusion::CorpusTriple;
use mrwb_core::{Error, Result};

pub const CONTEXT_CAP: usize = 77;

#[derive(Debug, Clone)]
pub struct SyntheticCorpusConfig {
    pub classes: usize,
    pub per_class: usize,
    pub vocab: usize,
    pub joints: usize,
    pub keypoint_frames: usize,
    pub d_frame: usize,
    pub frame_count: usize,
    pub d_motion: usize,
    pub motion_frames_min: usize,
    pub motion_frames_max: usize,
    pub noise: f64,
    /// Fraction of samples carrying class signal only in the action channel.
    pub action_only_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticCorpusConfig {
    fn default() -> Self {
        Self {
            classes: 6,
            per_class: 8,
            vocab: 32,
            joints: 4,
            keypoint_frames: 8,
            d_frame: 12,
            frame_count: 8,
            d_motion: 8,
            motion_frames_min: 6,
            motion_frames_max: 12,
            noise: 0.08,
            action_only_fraction: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticCorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.classes,
            self.per_class,
            self.vocab,
            self.joints,
            self.keypoint_frames,
            self.d_frame,
            self.frame_count,
            self.d_motion,
            self.motion_frames_min,
        ];
        if counts.iter().any(|&c| c == 0) {
            return Err(Error::InvalidInput("all corpus counts must be >= 1".into()));
        }
        if self.motion_frames_max < self.motion_frames_min {
            return Err(Error::InvalidInput("motion frame range is inverted".into()));
        }
        if !(0.0..=1.0).contains(&self.action_only_fraction) {
            return Err(Error::InvalidInput("action-only fraction must be in [0, 1]".into()));
        }
        if self.noise < 0.0 {
            return Err(Error::InvalidInput("noise must be >= 0".into()));
        }
        if self.vocab < 2 * self.classes + 1 {
            return Err(Error::InvalidInput(format!(
                "vocab {} too small for {} classes (needs >= {})",
                self.vocab,
                self.classes,
                2 * self.classes + 1
            )));
        }
        Ok(())
    }
}

/// One synthetic example; the text, keypoints, frames, and motion all belong
/// to the same id.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub class: usize,
    pub text: TokenizedText,
    pub caption: String,
    pub keypoints: KeypointSequence,
    pub frames: FrameFeatureSequence,
    pub motion: MotionFeatureSequence,
    pub action_only: bool,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub vocab: usize,
    pub samples: Vec<Sample>,
}

impl Corpus {
    /// Retrieval-training view: one (text, keypoints, frames) triple per
    /// sample under its shared id.
    pub fn triples(&self) -> Vec<CorpusTriple> {
        self.samples
            .iter()
            .map(|s| CorpusTriple {
                id: s.id.clone(),
                text: s.text.clone(),
                keypoints: s.keypoints.clone(),
                frames: s.frames.clone(),
            })
            .collect()
    }
}

fn substream(root: u64, label: &str, index: u64) -> ChaCha8Rng {
    let mut h: u64 = 0xcbf29ce484222325 ^ root;
    for b in label.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h ^= index;
    h = h.wrapping_mul(0x100000001b3);
    ChaCha8Rng::seed_from_u64(h)
}

/// Generate the corpus in memory; deterministic given the config.
pub fn generate(cfg: &SyntheticCorpusConfig) -> Result<Corpus> {
    cfg.validate()?;
    let mut proto_rng = substream(cfg.seed, "prototypes", 0);
    // per-class latent prototypes
    let proto_pose: Vec<Vec<f64>> = (0..cfg.classes)
        .map(|_| (0..cfg.joints * 2).map(|_| proto_rng.gen_range(-0.6..0.6)).collect())
        .collect();
    let proto_freq: Vec<f64> = (0..cfg.classes).map(|c| 0.5 + c as f64 * 0.45).collect();
    let proto_frame: Vec<Vec<f64>> = (0..cfg.classes)
        .map(|_| (0..cfg.d_frame).map(|_| proto_rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let proto_motion: Vec<Vec<f64>> = (0..cfg.classes)
        .map(|_| (0..cfg.d_motion).map(|_| proto_rng.gen_range(-1.5..1.5)).collect())
        .collect();

    let n = cfg.classes * cfg.per_class;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % cfg.classes;
        let mut rng = substream(cfg.seed, "sample", i as u64);
        let action_only = rng.gen_range(0.0..1.0) < cfg.action_only_fraction;

        let variant = 2 * cfg.classes + rng.gen_range(0..cfg.vocab - 2 * cfg.classes);
        let text = TokenizedText::new(vec![c, cfg.classes + c, variant], cfg.vocab, CONTEXT_CAP)?;
        let caption = format!("class {c} motion variant {variant}");

        let mut coords = Vec::with_capacity(cfg.keypoint_frames * cfg.joints * 2);
        for t in 0..cfg.keypoint_frames {
            for j in 0..cfg.joints * 2 {
                let phase = t as f64 * proto_freq[c] + j as f64 * 0.9;
                let v = proto_pose[c][j] + 0.3 * phase.sin() + cfg.noise * rng.gen_range(-1.0..1.0);
                coords.push(v.clamp(-1.0, 1.0));
            }
        }
        let keypoints = KeypointSequence::new(cfg.joints, coords, None)?;

        let mut frame_data = Vec::with_capacity(cfg.frame_count * cfg.d_frame);
        for _ in 0..cfg.frame_count {
            for j in 0..cfg.d_frame {
                let v = if action_only {
                    rng.gen_range(-1.0..1.0)
                } else {
                    proto_frame[c][j] + cfg.noise * rng.gen_range(-1.0..1.0)
                };
                frame_data.push(v);
            }
        }
        let frames = FrameFeatureSequence::new(cfg.d_frame, frame_data)?;

        let m_frames = rng.gen_range(cfg.motion_frames_min..=cfg.motion_frames_max);
        let drift: Vec<f64> = (0..cfg.d_motion).map(|_| rng.gen_range(-0.05..0.05)).collect();
        let mut motion_data = Vec::with_capacity(m_frames * cfg.d_motion);
        for t in 0..m_frames {
            for j in 0..cfg.d_motion {
                motion_data.push(
                    proto_motion[c][j]
                        + drift[j] * t as f64
                        + cfg.noise * rng.gen_range(-1.0..1.0),
                );
            }
        }
        let motion = MotionFeatureSequence::new(cfg.d_motion, motion_data)?;

        samples.push(Sample {
            id: format!("v{i:04}"),
            class: c,
            text,
            caption,
            keypoints,
            frames,
            motion,
            action_only,
        });
    }
    Ok(Corpus { vocab: cfg.vocab, samples })
}

fn fmt_floats(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        // full round-trip precision so reload is bit-exact
        write!(out, "{v:?}").unwrap();
    }
}

/// Write the corpus as line-delimited modality files plus the ground-truth
/// text-to-video pairing.
pub fn write(corpus: &Corpus, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut texts = String::new();
    let mut keypoints = String::new();
    let mut frames = String::new();
    let mut motions = String::new();
    let mut pairs = String::new();
    writeln!(texts, "# vocab={}", corpus.vocab).unwrap();
    for s in &corpus.samples {
        let toks: Vec<String> = s.text.ids().iter().map(usize::to_string).collect();
        writeln!(texts, "{}\t{}\t{}", s.id, toks.join(" "), s.caption).unwrap();

        let mut buf = String::new();
        fmt_floats(&mut buf, s.keypoints.coords());
        writeln!(keypoints, "{}\t{}\t{}", s.id, s.keypoints.joints(), buf).unwrap();

        let mut buf = String::new();
        fmt_floats(&mut buf, s.frames.data());
        writeln!(frames, "{}\t{}\t{}", s.id, s.frames.d_frame(), buf).unwrap();

        let mut buf = String::new();
        fmt_floats(&mut buf, &s.motion.data);
        writeln!(motions, "{}\t{}\t{}", s.id, s.motion.d, buf).unwrap();

        writeln!(pairs, "{}\t{}", s.id, s.id).unwrap();
    }
    fs::write(dir.join("texts.tsv"), texts)?;
    fs::write(dir.join("keypoints.tsv"), keypoints)?;
    fs::write(dir.join("frames.tsv"), frames)?;
    fs::write(dir.join("motions.tsv"), motions)?;
    fs::write(dir.join("pairs.tsv"), pairs)?;
    Ok(())
}

fn parse_floats(field: &str, what: &str) -> Result<Vec<f64>> {
    field
        .split(' ')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| Error::Format(format!("bad float '{t}' in {what}"))))
        .collect()
}

fn read_rows(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Format(format!("cannot read {}: {e}", path.display())))?;
    Ok(text
        .lines()
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.split('\t').map(str::to_string).collect())
        .collect())
}

/// Load a corpus previously produced by [`write`]. Does not touch the
/// pairing file: sample alignment is carried by the shared ids.
pub fn load(dir: &Path) -> Result<Corpus> {
    let texts = read_rows(&dir.join("texts.tsv"))?;
    let keypoints = read_rows(&dir.join("keypoints.tsv"))?;
    let frames = read_rows(&dir.join("frames.tsv"))?;
    let motions = read_rows(&dir.join("motions.tsv"))?;
    if texts.len() != keypoints.len() || texts.len() != frames.len() || texts.len() != motions.len()
    {
        return Err(Error::Format("corpus modality files disagree on sample count".into()));
    }
    let header = fs::read_to_string(dir.join("texts.tsv"))?;
    let vocab: usize = header
        .lines()
        .next()
        .and_then(|l| l.strip_prefix("# vocab="))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Format("texts.tsv is missing its vocab header".into()))?;

    let mut samples = Vec::with_capacity(texts.len());
    for (((t, k), f), m) in texts.iter().zip(&keypoints).zip(&frames).zip(&motions) {
        if t.len() != 3 || k.len() != 3 || f.len() != 3 || m.len() != 3 {
            return Err(Error::Format("corpus rows must have exactly 3 tab-separated fields".into()));
        }
        let id = t[0].clone();
        for row in [&k[0], &f[0], &m[0]] {
            if *row != id {
                return Err(Error::Format(format!("sample id mismatch across files: {id} vs {row}")));
            }
        }
        let ids: Vec<usize> = t[1]
            .split(' ')
            .map(|x| x.parse().map_err(|_| Error::Format(format!("bad token '{x}'"))))
            .collect::<Result<_>>()?;
        let class = *ids.first().ok_or_else(|| Error::Format("empty token list".into()))?;
        let joints: usize =
            k[1].parse().map_err(|_| Error::Format("bad joint count".into()))?;
        let d_frame: usize =
            f[1].parse().map_err(|_| Error::Format("bad frame dimension".into()))?;
        let d_motion: usize =
            m[1].parse().map_err(|_| Error::Format("bad motion dimension".into()))?;
        samples.push(Sample {
            id,
            class,
            text: TokenizedText::new(ids, vocab, CONTEXT_CAP)?,
            caption: t[2].clone(),
            keypoints: KeypointSequence::new(joints, parse_floats(&k[2], "keypoints")?, None)?,
            frames: FrameFeatureSequence::new(d_frame, parse_floats(&f[2], "frames")?)?,
            motion: MotionFeatureSequence::new(d_motion, parse_floats(&m[2], "motions")?)?,
            action_only: false,
        });
    }
    Ok(Corpus { vocab, samples })
}
