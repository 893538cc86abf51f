//! Motion VQ codec: windowed temporal downsampling, a linear encoder into
//! the code space, nearest-code quantization against an EMA-trained
//! codebook, and a linear decoder back to motion features.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::opt::{init_uniform, Adam};
use crate::tensors::ParamSet;

/// A motion clip as T frames of D-dimensional features, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionFeatureSequence {
    pub d: usize,
    pub data: Vec<f64>,
}

impl MotionFeatureSequence {
    pub fn new(d: usize, data: Vec<f64>) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidInput("motion feature dimension must be >= 1".into()));
        }
        if data.is_empty() || data.len() % d != 0 {
            return Err(Error::InvalidInput(format!(
                "motion data length {} is not a non-zero multiple of dimension {d}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("motion features must be finite".into()));
        }
        Ok(Self { d, data })
    }

    pub fn frames(&self) -> usize {
        self.data.len() / self.d
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.d..(t + 1) * self.d]
    }
}

/// A discretized motion clip.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MotionTokenSequence {
    pub tokens: Vec<usize>,
}

/// A set of C code vectors in the quantization space.
#[derive(Debug, Clone)]
pub struct Codebook {
    pub code_dim: usize,
    codes: Vec<f64>,
}

impl Codebook {
    /// Rejects empty books and near-duplicate codes, which would make the
    /// nearest-code assignment ambiguous.
    pub fn new(code_dim: usize, codes: Vec<f64>) -> Result<Self> {
        if code_dim == 0 || codes.is_empty() || codes.len() % code_dim != 0 {
            return Err(Error::InvalidInput("codebook shape must be C x code_dim with C >= 1".into()));
        }
        let c = codes.len() / code_dim;
        for i in 0..c {
            for j in (i + 1)..c {
                let max_diff = (0..code_dim)
                    .map(|k| (codes[i * code_dim + k] - codes[j * code_dim + k]).abs())
                    .fold(0.0, f64::max);
                if max_diff < 1e-9 {
                    return Err(Error::InvalidInput(format!(
                        "codes {i} and {j} are duplicates within 1e-9"
                    )));
                }
            }
        }
        Ok(Self { code_dim, codes })
    }

    pub fn len(&self) -> usize {
        self.codes.len() / self.code_dim
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn code(&self, i: usize) -> &[f64] {
        &self.codes[i * self.code_dim..(i + 1) * self.code_dim]
    }

    /// Nearest code by squared Euclidean distance; ties break to the lowest
    /// index.
    pub fn nearest(&self, z: &[f64]) -> Result<(usize, f64)> {
        if z.len() != self.code_dim {
            return Err(Error::InvalidInput(format!(
                "query has dimension {}, codebook expects {}",
                z.len(),
                self.code_dim
            )));
        }
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for i in 0..self.len() {
            let d: f64 = self.code(i).iter().zip(z).map(|(c, x)| (c - x) * (c - x)).sum();
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        Ok((best, best_d))
    }
}

#[derive(Debug, Clone)]
pub struct CodecConfig {
    pub num_codes: usize,
    pub code_dim: usize,
    /// Motion feature dimension D.
    pub d_motion: usize,
    /// Temporal window r; each token summarizes r frames.
    pub window: usize,
    pub commitment: f64,
    pub ema_decay: f64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self { num_codes: 32, code_dim: 8, d_motion: 8, window: 3, commitment: 0.25, ema_decay: 0.99 }
    }
}

impl CodecConfig {
    /// Full-scale configuration: 512 codes of dimension 512.
    pub fn full_scale() -> Self {
        Self { num_codes: 512, code_dim: 512, d_motion: 512, ..Self::default() }
    }
}

/// Linear encoder/decoder pair around a learned codebook.
pub struct Codec {
    pub config: CodecConfig,
    pub params: ParamSet,
    ema_count: Vec<f64>,
    ema_sum: Vec<f64>,
}

impl Codec {
    fn param_layout(config: &CodecConfig) -> Result<ParamSet> {
        let mut p = ParamSet::new();
        p.add("enc.w", &[config.d_motion, config.code_dim])?;
        p.add("enc.b", &[config.code_dim])?;
        p.add("dec.w", &[config.code_dim, config.d_motion])?;
        p.add("dec.b", &[config.d_motion])?;
        p.add("codebook", &[config.num_codes, config.code_dim])?;
        Ok(p)
    }

    pub fn init(config: CodecConfig, seed: u64) -> Result<Self> {
        if config.window == 0 || config.num_codes == 0 || config.code_dim == 0 {
            return Err(Error::InvalidInput("codec sizes must be >= 1".into()));
        }
        let mut params = Self::param_layout(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        init_uniform(&mut rng, params.get_mut("enc.w")?, config.d_motion);
        init_uniform(&mut rng, params.get_mut("dec.w")?, config.code_dim);
        for v in params.get_mut("codebook")?.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let n = config.num_codes;
        let cd = config.code_dim;
        Ok(Self { config, params, ema_count: vec![1.0; n], ema_sum: vec![0.0; n * cd] })
    }

    /// A codec whose encoder and decoder are fixed identity maps, available
    /// when D equals the code dimension. Useful when the quantization itself
    /// is under test.
    pub fn identity(config: CodecConfig, codebook: Codebook) -> Result<Self> {
        if config.d_motion != config.code_dim {
            return Err(Error::InvalidInput(
                "identity codec requires d_motion == code_dim".into(),
            ));
        }
        if codebook.code_dim != config.code_dim || codebook.len() != config.num_codes {
            return Err(Error::InvalidInput("codebook shape disagrees with codec config".into()));
        }
        let mut params = Self::param_layout(&config)?;
        for i in 0..config.code_dim {
            params.get_mut("enc.w")?[i * config.code_dim + i] = 1.0;
            params.get_mut("dec.w")?[i * config.d_motion + i] = 1.0;
        }
        params.get_mut("codebook")?.copy_from_slice(&codebook.codes);
        let n = config.num_codes;
        let cd = config.code_dim;
        Ok(Self { config, params, ema_count: vec![1.0; n], ema_sum: vec![0.0; n * cd] })
    }

    pub fn codebook(&self) -> Result<Codebook> {
        Ok(Codebook {
            code_dim: self.config.code_dim,
            codes: self.params.get("codebook")?.to_vec(),
        })
    }

    /// Mean of each r-frame window; the trailing window may be shorter.
    pub fn window_means(&self, seq: &MotionFeatureSequence) -> Result<Vec<Vec<f64>>> {
        if seq.d != self.config.d_motion {
            return Err(Error::InvalidInput(format!(
                "sequence dimension {} does not match codec dimension {}",
                seq.d, self.config.d_motion
            )));
        }
        let r = self.config.window;
        let t = seq.frames();
        let mut out = Vec::with_capacity(t.div_ceil(r));
        let mut start = 0;
        while start < t {
            let end = (start + r).min(t);
            let mut mean = vec![0.0; seq.d];
            for f in start..end {
                for (m, &x) in mean.iter_mut().zip(seq.frame(f)) {
                    *m += x;
                }
            }
            for m in &mut mean {
                *m /= (end - start) as f64;
            }
            out.push(mean);
            start = end;
        }
        Ok(out)
    }

    fn encode_window(&self, mean: &[f64]) -> Result<Vec<f64>> {
        let w = self.params.get("enc.w")?;
        let b = self.params.get("enc.b")?;
        let cd = self.config.code_dim;
        let mut z = b.to_vec();
        for (i, &x) in mean.iter().enumerate() {
            for j in 0..cd {
                z[j] += x * w[i * cd + j];
            }
        }
        Ok(z)
    }

    fn decode_code(&self, code: &[f64]) -> Result<Vec<f64>> {
        let w = self.params.get("dec.w")?;
        let b = self.params.get("dec.b")?;
        let d = self.config.d_motion;
        let mut y = b.to_vec();
        for (i, &q) in code.iter().enumerate() {
            for j in 0..d {
                y[j] += q * w[i * d + j];
            }
        }
        Ok(y)
    }

    /// Tokenize a clip: ceil(T / r) tokens, one nearest code per window.
    pub fn encode(&self, seq: &MotionFeatureSequence) -> Result<MotionTokenSequence> {
        let book = self.codebook()?;
        let mut tokens = Vec::new();
        for mean in self.window_means(seq)? {
            let z = self.encode_window(&mean)?;
            tokens.push(book.nearest(&z)?.0);
        }
        Ok(MotionTokenSequence { tokens })
    }

    /// Reconstruct motion features: each token becomes r identical frames.
    pub fn decode(&self, tokens: &MotionTokenSequence) -> Result<MotionFeatureSequence> {
        if tokens.tokens.is_empty() {
            return Err(Error::InvalidInput("cannot decode an empty token sequence".into()));
        }
        let book = self.codebook()?;
        let mut data = Vec::with_capacity(tokens.tokens.len() * self.config.window * self.config.d_motion);
        for &t in &tokens.tokens {
            if t >= book.len() {
                return Err(Error::InvalidInput(format!(
                    "token {t} is out of range for a codebook of {}",
                    book.len()
                )));
            }
            let y = self.decode_code(book.code(t))?;
            for _ in 0..self.config.window {
                data.extend_from_slice(&y);
            }
        }
        MotionFeatureSequence::new(self.config.d_motion, data)
    }

    /// Fraction of codes assigned at least once over a dataset.
    pub fn code_usage(&self, dataset: &[MotionFeatureSequence]) -> Result<f64> {
        let mut used = vec![false; self.config.num_codes];
        for seq in dataset {
            for t in self.encode(seq)?.tokens {
                used[t] = true;
            }
        }
        Ok(used.iter().filter(|&&u| u).count() as f64 / self.config.num_codes as f64)
    }
}

#[derive(Debug, Clone)]
pub struct CodecTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for CodecTrainConfig {
    fn default() -> Self {
        Self { epochs: 30, lr: 1e-2, seed: 0 }
    }
}

/// Result of codec training: per-epoch reconstruction + commitment loss and
/// whether the dataset offered fewer windows than codebook entries.
#[derive(Debug, Clone)]
pub struct CodecTrainReport {
    pub loss_trace: Vec<f64>,
    pub dataset_smaller_than_codebook: bool,
    pub reseeded_codes: usize,
}

/// Train encoder/decoder by straight-through reconstruction plus a
/// commitment term, while the codebook follows assigned encodings by EMA.
/// Codes that stop receiving assignments are reseeded from the data.
pub fn train_codebook(
    codec: &mut Codec,
    dataset: &[MotionFeatureSequence],
    cfg: &CodecTrainConfig,
) -> Result<CodecTrainReport> {
    if dataset.is_empty() {
        return Err(Error::InvalidInput("codec training needs a non-empty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = codec.config.d_motion;
    let cd = codec.config.code_dim;
    let n_codes = codec.config.num_codes;
    let decay = codec.config.ema_decay;
    let beta = codec.config.commitment;

    // All window means up front; they do not depend on trained parameters.
    let mut windows: Vec<Vec<f64>> = Vec::new();
    for seq in dataset {
        windows.extend(codec.window_means(seq)?);
    }
    let small = windows.len() < n_codes;

    // Data-dependent codebook init: distinct sampled windows pushed through
    // the current encoder, so every code starts inside the data support.
    {
        let mut order: Vec<usize> = (0..windows.len()).collect();
        order.shuffle(&mut rng);
        let mut seeds = Vec::with_capacity(n_codes);
        for k in 0..n_codes {
            let wi = order[k % order.len()];
            let z = codec.encode_window(&windows[wi])?;
            let jittered: Vec<f64> = z.iter().map(|v| v + rng.gen_range(-1e-4..1e-4)).collect();
            seeds.push(jittered);
        }
        let book = codec.params.get_mut("codebook")?;
        for (k, z) in seeds.iter().enumerate() {
            book[k * cd..(k + 1) * cd].copy_from_slice(z);
            codec.ema_count[k] = 1.0;
            codec.ema_sum[k * cd..(k + 1) * cd].copy_from_slice(z);
        }
    }

    let grad_dim = codec.params.len();
    let mut opt = Adam::new(cfg.lr, grad_dim);
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut reseeded = 0;
    let mut zero_epochs = vec![0usize; n_codes];

    for _ in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..windows.len()).collect();
        order.shuffle(&mut rng);

        let mut grads = codec.params.zeros_like();
        let mut counts = vec![0.0; n_codes];
        let mut sums = vec![0.0; n_codes * cd];
        let mut epoch_loss = 0.0;

        for &wi in &order {
            let x = &windows[wi];
            let z = codec.encode_window(x)?;
            let book = codec.codebook()?;
            let (k, _) = book.nearest(&z)?;
            let q = book.code(k).to_vec();
            let y = codec.decode_code(&q)?;

            let recon: f64 = y.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            let commit: f64 = z.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum();
            epoch_loss += recon + beta * commit;

            counts[k] += 1.0;
            for (s, &zv) in sums[k * cd..(k + 1) * cd].iter_mut().zip(&z) {
                *s += zv;
            }

            // dL/dy through the decoder; the quantizer passes the decoder
            // gradient straight through to z.
            let dy: Vec<f64> = y.iter().zip(x).map(|(a, b)| 2.0 * (a - b)).collect();
            {
                let gw = grads.get_mut("dec.w")?;
                for i in 0..cd {
                    for j in 0..d {
                        gw[i * d + j] += q[i] * dy[j];
                    }
                }
            }
            for (g, &v) in grads.get_mut("dec.b")?.iter_mut().zip(&dy) {
                *g += v;
            }
            let dec_w = codec.params.get("dec.w")?;
            let mut dz = vec![0.0; cd];
            for i in 0..cd {
                for j in 0..d {
                    dz[i] += dec_w[i * d + j] * dy[j];
                }
            }
            for (dzi, (&zv, &qv)) in dz.iter_mut().zip(z.iter().zip(&q)) {
                *dzi += 2.0 * beta * (zv - qv);
            }
            {
                let gw = grads.get_mut("enc.w")?;
                for i in 0..d {
                    for j in 0..cd {
                        gw[i * cd + j] += x[i] * dz[j];
                    }
                }
            }
            for (g, &v) in grads.get_mut("enc.b")?.iter_mut().zip(&dz) {
                *g += v;
            }
        }

        let scale = 1.0 / windows.len() as f64;
        for g in grads.flat_mut() {
            *g *= scale;
        }
        opt.step(codec.params.flat_mut(), grads.flat());

        // EMA codebook update with dead-code reseeding.
        for k in 0..n_codes {
            codec.ema_count[k] = decay * codec.ema_count[k] + (1.0 - decay) * counts[k];
            for j in 0..cd {
                codec.ema_sum[k * cd + j] =
                    decay * codec.ema_sum[k * cd + j] + (1.0 - decay) * sums[k * cd + j];
            }
        }
        {
            let book = codec.params.get_mut("codebook")?;
            for k in 0..n_codes {
                if codec.ema_count[k] > 1e-3 {
                    for j in 0..cd {
                        book[k * cd + j] = codec.ema_sum[k * cd + j] / codec.ema_count[k];
                    }
                }
            }
        }
        for k in 0..n_codes {
            if counts[k] == 0.0 {
                zero_epochs[k] += 1;
            } else {
                zero_epochs[k] = 0;
            }
        }
        let mut dead: Vec<usize> = (0..n_codes)
            .filter(|&k| codec.ema_count[k] <= 1e-3 || zero_epochs[k] >= 3)
            .collect();
        if !dead.is_empty() {
            let picks: Vec<usize> =
                (0..dead.len()).map(|_| rng.gen_range(0..windows.len())).collect();
            for (k, wi) in dead.drain(..).zip(picks) {
                let z = codec.encode_window(&windows[wi])?;
                let jitter: Vec<f64> =
                    z.iter().map(|v| v + rng.gen_range(-1e-4..1e-4)).collect();
                codec.params.get_mut("codebook")?[k * cd..(k + 1) * cd]
                    .copy_from_slice(&jitter);
                codec.ema_count[k] = 1.0;
                codec.ema_sum[k * cd..(k + 1) * cd].copy_from_slice(&jitter);
                zero_epochs[k] = 0;
                reseeded += 1;
            }
        }
        trace.push(epoch_loss / windows.len() as f64);
    }

    Ok(CodecTrainReport { loss_trace: trace, dataset_smaller_than_codebook: small, reseeded_codes: reseeded })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_codebook(n: usize, dim: usize) -> Codebook {
        // distinct deterministic codes
        let codes: Vec<f64> = (0..n * dim)
            .map(|i| ((i * 37 + 11) % 101) as f64 / 101.0 + (i / dim) as f64)
            .collect();
        Codebook::new(dim, codes).unwrap()
    }

    #[test]
    fn codebook_rejects_duplicates() {
        let codes = vec![1.0, 2.0, 1.0, 2.0 + 5e-10];
        assert!(Codebook::new(2, codes).is_err());
        let ok = vec![1.0, 2.0, 1.0, 2.1];
        assert!(Codebook::new(2, ok).is_ok());
    }

    #[test]
    fn nearest_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let book = grid_codebook(40, 6);
        for _ in 0..500 {
            let z: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..45.0)).collect();
            let (k, _) = book.nearest(&z).unwrap();
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for i in 0..book.len() {
                let d: f64 = book.code(i).iter().zip(&z).map(|(c, x)| (c - x) * (c - x)).sum();
                if d < best_d {
                    best = i;
                    best_d = d;
                }
            }
            assert_eq!(k, best);
        }
    }

    #[test]
    fn nearest_tie_breaks_to_lowest_index() {
        let codes = vec![1.0, 0.0, -1.0, 0.0, 0.0, 1.0];
        let book = Codebook::new(2, codes).unwrap();
        // origin is equidistant from all three codes
        let (k, _) = book.nearest(&[0.0, 0.0]).unwrap();
        assert_eq!(k, 0);
    }

    #[test]
    fn token_length_is_ceil_t_over_r() {
        let cfg = CodecConfig { num_codes: 4, code_dim: 2, d_motion: 2, ..Default::default() };
        let book = grid_codebook(4, 2);
        let codec = Codec::identity(cfg, book).unwrap();
        for t in 1..=10usize {
            let seq = MotionFeatureSequence::new(2, vec![0.5; t * 2]).unwrap();
            let toks = codec.encode(&seq).unwrap();
            assert_eq!(toks.tokens.len(), t.div_ceil(3), "T = {t}");
        }
    }

    #[test]
    fn identity_codec_encodes_codes_to_themselves() {
        let cfg =
            CodecConfig { num_codes: 8, code_dim: 3, d_motion: 3, window: 1, ..Default::default() };
        let book = grid_codebook(8, 3);
        let codec = Codec::identity(cfg, book.clone()).unwrap();
        for i in 0..book.len() {
            let seq = MotionFeatureSequence::new(3, book.code(i).to_vec()).unwrap();
            assert_eq!(codec.encode(&seq).unwrap().tokens, vec![i]);
            // and decode is the code itself, repeated once
            let dec = codec.decode(&MotionTokenSequence { tokens: vec![i] }).unwrap();
            for (a, b) in dec.data.iter().zip(book.code(i)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn window_average_uses_partial_tail() {
        let cfg = CodecConfig { num_codes: 4, code_dim: 1, d_motion: 1, ..Default::default() };
        let book = Codebook::new(1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let codec = Codec::identity(cfg, book).unwrap();
        // 4 frames, r = 3: first window mean = (0+1+2)/3 = 1, tail mean = 3.
        let seq = MotionFeatureSequence::new(1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let means = codec.window_means(&seq).unwrap();
        assert_eq!(means, vec![vec![1.0], vec![3.0]]);
        assert_eq!(codec.encode(&seq).unwrap().tokens, vec![1, 3]);
    }

    #[test]
    fn decode_rejects_out_of_range_token() {
        let cfg = CodecConfig { num_codes: 4, code_dim: 2, d_motion: 2, ..Default::default() };
        let codec = Codec::identity(cfg, grid_codebook(4, 2)).unwrap();
        assert!(codec.decode(&MotionTokenSequence { tokens: vec![4] }).is_err());
        assert!(codec.decode(&MotionTokenSequence { tokens: vec![] }).is_err());
    }

    #[test]
    fn decode_repeats_each_token_r_times() {
        let cfg = CodecConfig { num_codes: 4, code_dim: 2, d_motion: 2, ..Default::default() };
        let codec = Codec::identity(cfg, grid_codebook(4, 2)).unwrap();
        let out = codec.decode(&MotionTokenSequence { tokens: vec![1, 2] }).unwrap();
        assert_eq!(out.frames(), 6);
        for t in 0..3 {
            assert_eq!(out.frame(t), out.frame(0));
            assert_eq!(out.frame(3 + t), out.frame(3));
        }
    }

    fn cluster_dataset(seed: u64, clusters: usize, per: usize, d: usize) -> Vec<MotionFeatureSequence> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers: Vec<Vec<f64>> =
            (0..clusters).map(|_| (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
        let mut out = Vec::new();
        for c in 0..clusters {
            for _ in 0..per {
                let frames = rng.gen_range(3..=9);
                let data: Vec<f64> = (0..frames * d)
                    .map(|j| centers[c][j % d] + rng.gen_range(-0.05..0.05))
                    .collect();
                out.push(MotionFeatureSequence::new(d, data).unwrap());
            }
        }
        out
    }

    #[test]
    fn training_reduces_loss_and_uses_codebook() {
        let d = 4;
        let clusters = 12;
        let cfg = CodecConfig { num_codes: 12, code_dim: 4, d_motion: d, ..Default::default() };
        let mut codec = Codec::init(cfg, 3).unwrap();
        let data = cluster_dataset(3, clusters, 8, d);
        let report = train_codebook(
            &mut codec,
            &data,
            &CodecTrainConfig { epochs: 60, lr: 5e-3, seed: 3 },
        )
        .unwrap();
        assert!(!report.dataset_smaller_than_codebook);
        assert!(report.loss_trace.last().unwrap() < report.loss_trace.first().unwrap());
        let usage = codec.code_usage(&data).unwrap();
        assert!(usage >= 0.9, "code usage {usage}");
    }

    #[test]
    fn training_reconstruction_is_close_on_clusters() {
        let d = 3;
        let cfg = CodecConfig { num_codes: 6, code_dim: 3, d_motion: d, ..Default::default() };
        let mut codec = Codec::init(cfg, 7).unwrap();
        let data = cluster_dataset(7, 6, 10, d);
        train_codebook(&mut codec, &data, &CodecTrainConfig { epochs: 120, lr: 1e-2, seed: 7 })
            .unwrap();
        let mut err = 0.0;
        let mut count = 0;
        for seq in &data {
            let toks = codec.encode(seq).unwrap();
            let rec = codec.decode(&toks).unwrap();
            for (t, mean) in codec.window_means(seq).unwrap().iter().enumerate() {
                let frame = rec.frame(t * codec.config.window);
                err += mean.iter().zip(frame).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                count += 1;
            }
        }
        let mse = err / count as f64;
        assert!(mse < 0.3, "reconstruction mse {mse}");
    }

    #[test]
    fn training_flags_small_dataset() {
        let cfg = CodecConfig { num_codes: 64, code_dim: 2, d_motion: 2, ..Default::default() };
        let mut codec = Codec::init(cfg, 1).unwrap();
        let data = vec![MotionFeatureSequence::new(2, vec![0.1, 0.2, 0.3, 0.4]).unwrap()];
        let report =
            train_codebook(&mut codec, &data, &CodecTrainConfig { epochs: 2, lr: 1e-3, seed: 1 })
                .unwrap();
        assert!(report.dataset_smaller_than_codebook);
    }

    #[test]
    fn encode_rejects_dimension_mismatch() {
        let cfg = CodecConfig { num_codes: 4, code_dim: 2, d_motion: 2, ..Default::default() };
        let codec = Codec::identity(cfg, grid_codebook(4, 2)).unwrap();
        let seq = MotionFeatureSequence::new(3, vec![0.0; 6]).unwrap();
        assert!(codec.encode(&seq).is_err());
    }
}
