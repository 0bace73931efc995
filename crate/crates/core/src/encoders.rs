//! Compact trainable image and text encoders and their fusion.
//!
//! Both encoders map into the same `d`-dimensional space. The fused
//! representation is the element-wise sum of the (optionally L2-normalized)
//! image and text embeddings.

use std::fs;
use std::path::Path;

use image::RgbImage;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::nn::{relu_backward_inplace, relu_inplace, Conv2d, Grads, Init, Linear, ParamId, ParamStore};
use crate::synthgen::{template_words, MIN_IMAGE_SIZE};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
const PAD_TOKEN: &str = "<pad>";
const UNK_TOKEN: &str = "<unk>";

/// Side of the square patches used by the patch-MLP backbone.
pub const PATCH_SIZE: usize = 8;
const CONV1_CHANNELS: usize = 16;
const CONV2_CHANNELS: usize = 32;
const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VisionArch {
    CompactConv,
    PatchMlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub d: usize,
    /// Rows of the token embedding table; must hold the whole vocabulary.
    pub vocab_size: usize,
    pub max_tokens: usize,
    pub vision_arch: VisionArch,
    pub normalize_embeddings: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d: 512,
            vocab_size: 128,
            max_tokens: 16,
            vision_arch: VisionArch::PatchMlp,
            normalize_embeddings: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d < 8 {
            return Err(Error::Config(format!("encoder.d must be at least 8, got {}", self.d)));
        }
        if self.max_tokens < 4 {
            return Err(Error::Config(format!(
                "encoder.max_tokens must be at least 4, got {}",
                self.max_tokens
            )));
        }
        if self.vocab_size < 2 {
            return Err(Error::Config("encoder.vocab_size must be at least 2".into()));
        }
        Ok(())
    }
}

/// A `d`-dimensional embedding vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Closed-world vocabulary: id = position, with `<pad>` = 0 and `<unk>` = 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
}

impl Vocabulary {
    /// Vocabulary covering every word the dataset generator can emit.
    pub fn from_templates() -> Self {
        let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        tokens.extend(template_words().into_iter().map(|w| normalize_word(&w)));
        Self { tokens }
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[0] != PAD_TOKEN || tokens[1] != UNK_TOKEN {
            return Err(Error::Input("vocabulary must start with <pad> and <unk>".into()));
        }
        Ok(Self { tokens })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, word: &str) -> u32 {
        self.tokens
            .iter()
            .position(|t| t == word)
            .map(|i| i as u32)
            .unwrap_or(UNK_ID)
    }

    /// Token-per-line text; line number (from 0) is the id.
    pub fn to_lines(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_lines().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }
}

fn normalize_word(w: &str) -> String {
    w.chars()
        .filter(|c| !c.is_ascii_punctuation())
        .flat_map(char::to_lowercase)
        .collect()
}

/// Lowercase, strip punctuation, split on whitespace, map to ids, then
/// truncate or pad to exactly `max_tokens`.
pub fn tokenize(text: &str, vocab: &Vocabulary, cfg: &EncoderConfig) -> Result<Vec<u32>> {
    if text.trim().is_empty() {
        return Err(Error::Input("cannot tokenize empty text".into()));
    }
    let mut ids: Vec<u32> = text
        .split_whitespace()
        .map(normalize_word)
        .filter(|w| !w.is_empty())
        .map(|w| vocab.id(&w))
        .take(cfg.max_tokens)
        .collect();
    ids.resize(cfg.max_tokens, PAD_ID);
    Ok(ids)
}

/// Image in HWC layout with values in `[0, 1]`, 1 meaning dark ("ink").
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl ImageTensor {
    pub fn from_rgb(img: &RgbImage) -> Self {
        let data = img.as_raw().iter().map(|&v| 1.0 - v as f64 / 255.0).collect();
        Self {
            height: img.height() as usize,
            width: img.width() as usize,
            channels: 3,
            data,
        }
    }

    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "image buffer has {} values, expected {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    fn check(&self) -> Result<()> {
        if self.channels != 3 {
            return Err(Error::Shape(format!("expected 3 channels, got {}", self.channels)));
        }
        if self.height < MIN_IMAGE_SIZE as usize || self.width < MIN_IMAGE_SIZE as usize {
            return Err(Error::Shape(format!(
                "image side must be at least {MIN_IMAGE_SIZE}, got {}x{}",
                self.height, self.width
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum VisionEncoder {
    /// Non-overlapping patches → shared 2-layer MLP → mean pool → projection.
    PatchMlp {
        patch: Conv2d,
        mix: Linear,
        proj: Linear,
    },
    /// Two strided convolutions → global average pool → projection.
    CompactConv {
        conv1: Conv2d,
        conv2: Conv2d,
        proj: Linear,
    },
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct VisionCache {
    first: Vec<f64>,
    first_hw: (usize, usize),
    second: Vec<f64>,
    positions: usize,
    pooled: Vec<f64>,
}

impl VisionEncoder {
    pub fn new(store: &mut ParamStore, cfg: &EncoderConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.d;
        match cfg.vision_arch {
            VisionArch::PatchMlp => VisionEncoder::PatchMlp {
                patch: Conv2d::new(store, "vision.patch", 3, d, PATCH_SIZE, PATCH_SIZE, 0, rng),
                mix: Linear::new(store, "vision.mix", d, d, rng),
                proj: Linear::new(store, "vision.proj", d, d, rng),
            },
            VisionArch::CompactConv => VisionEncoder::CompactConv {
                conv1: Conv2d::new(store, "vision.conv1", 3, CONV1_CHANNELS, 4, 4, 0, rng),
                conv2: Conv2d::new(store, "vision.conv2", CONV1_CHANNELS, CONV2_CHANNELS, 3, 2, 1, rng),
                proj: Linear::new(store, "vision.proj", CONV2_CHANNELS, d, rng),
            },
        }
    }

    pub fn forward(&self, p: &ParamStore, img: &ImageTensor) -> Result<(Embedding, VisionCache)> {
        img.check()?;
        let (h, w) = (img.height, img.width);
        let (first_layer, second_layer, proj): (&Conv2d, Option<&Conv2d>, &Linear) = match self {
            VisionEncoder::PatchMlp { patch, proj, .. } => (patch, None, proj),
            VisionEncoder::CompactConv { conv1, conv2, proj } => (conv1, Some(conv2), proj),
        };
        let (mut first, fh, fw) = first_layer.forward(p, &img.data, h, w);
        relu_inplace(&mut first);

        let (second, positions, width) = match (self, second_layer) {
            (VisionEncoder::PatchMlp { mix, .. }, _) => {
                let n = fh * fw;
                let mut out = vec![0.0; n * mix.out_dim];
                for (src, dst) in first.chunks_exact(mix.in_dim).zip(out.chunks_exact_mut(mix.out_dim)) {
                    mix.forward(p, src, dst);
                }
                relu_inplace(&mut out);
                (out, n, mix.out_dim)
            }
            (_, Some(conv2)) => {
                let (mut out, sh, sw) = conv2.forward(p, &first, fh, fw);
                relu_inplace(&mut out);
                (out, sh * sw, conv2.out_channels)
            }
            _ => unreachable!(),
        };
        let mut pooled = vec![0.0; width];
        for row in second.chunks_exact(width) {
            for (acc, v) in pooled.iter_mut().zip(row) {
                *acc += v;
            }
        }
        let inv = 1.0 / positions as f64;
        pooled.iter_mut().for_each(|v| *v *= inv);
        let out = proj.forward_vec(p, &pooled);
        Ok((
            Embedding(out),
            VisionCache {
                first,
                first_hw: (fh, fw),
                second,
                positions,
                pooled,
            },
        ))
    }

    pub fn backward(&self, p: &ParamStore, g: &mut Grads, img: &ImageTensor, cache: &VisionCache, dout: &[f64]) {
        let proj = match self {
            VisionEncoder::PatchMlp { proj, .. } | VisionEncoder::CompactConv { proj, .. } => proj,
        };
        let mut dpooled = vec![0.0; proj.in_dim];
        proj.backward(p, g, &cache.pooled, dout, Some(&mut dpooled));
        let inv = 1.0 / cache.positions as f64;
        dpooled.iter_mut().for_each(|v| *v *= inv);
        let width = dpooled.len();
        let mut dsecond: Vec<f64> = dpooled.repeat(cache.positions);
        for (drow, row) in dsecond.chunks_exact_mut(width).zip(cache.second.chunks_exact(width)) {
            relu_backward_inplace(row, drow);
        }
        let (fh, fw) = cache.first_hw;
        match self {
            VisionEncoder::PatchMlp { patch, mix, .. } => {
                let mut dfirst = vec![0.0; cache.first.len()];
                for ((src, drow), dsrc) in cache
                    .first
                    .chunks_exact(mix.in_dim)
                    .zip(dsecond.chunks_exact(mix.out_dim))
                    .zip(dfirst.chunks_exact_mut(mix.in_dim))
                {
                    mix.backward(p, g, src, drow, Some(dsrc));
                    relu_backward_inplace(src, dsrc);
                }
                patch.backward(p, g, &img.data, img.height, img.width, &dfirst, false);
            }
            VisionEncoder::CompactConv { conv1, conv2, .. } => {
                let mut dfirst = conv2
                    .backward(p, g, &cache.first, fh, fw, &dsecond, true)
                    .expect("input gradient requested");
                relu_backward_inplace(&cache.first, &mut dfirst);
                conv1.backward(p, g, &img.data, img.height, img.width, &dfirst, false);
            }
        }
    }
}

/// Token embeddings → mean pool over non-padding tokens → 2-layer MLP.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    pub table: ParamId,
    pub fc1: Linear,
    pub fc2: Linear,
    pub vocab_size: usize,
    pub d: usize,
}

#[derive(Debug, Clone)]
pub struct TextCache {
    tokens: Vec<u32>,
    count: usize,
    mean: Vec<f64>,
    hidden: Vec<f64>,
}

impl TextEncoder {
    pub fn new(store: &mut ParamStore, cfg: &EncoderConfig, rng: &mut ChaCha8Rng) -> Self {
        let table = store.alloc("text.embed", &[cfg.vocab_size, cfg.d], Init::Uniform(0.5), rng);
        let fc1 = Linear::new(store, "text.fc1", cfg.d, cfg.d, rng);
        let fc2 = Linear::new(store, "text.fc2", cfg.d, cfg.d, rng);
        Self {
            table,
            fc1,
            fc2,
            vocab_size: cfg.vocab_size,
            d: cfg.d,
        }
    }

    pub fn forward(&self, p: &ParamStore, tokens: &[u32]) -> Result<(Embedding, TextCache)> {
        if let Some(bad) = tokens.iter().find(|&&t| t as usize >= self.vocab_size) {
            return Err(Error::Input(format!(
                "token id {bad} outside vocabulary of size {}",
                self.vocab_size
            )));
        }
        let table = p.get(self.table);
        let mut mean = vec![0.0; self.d];
        let mut count = 0;
        for &t in tokens.iter().filter(|&&t| t != PAD_ID) {
            let row = &table[t as usize * self.d..(t as usize + 1) * self.d];
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
            count += 1;
        }
        if count > 0 {
            let inv = 1.0 / count as f64;
            mean.iter_mut().for_each(|v| *v *= inv);
        }
        let mut hidden = self.fc1.forward_vec(p, &mean);
        relu_inplace(&mut hidden);
        let out = self.fc2.forward_vec(p, &hidden);
        Ok((
            Embedding(out),
            TextCache {
                tokens: tokens.to_vec(),
                count,
                mean,
                hidden,
            },
        ))
    }

    pub fn backward(&self, p: &ParamStore, g: &mut Grads, cache: &TextCache, dout: &[f64]) {
        let mut dhidden = vec![0.0; self.d];
        self.fc2.backward(p, g, &cache.hidden, dout, Some(&mut dhidden));
        relu_backward_inplace(&cache.hidden, &mut dhidden);
        let mut dmean = vec![0.0; self.d];
        self.fc1.backward(p, g, &cache.mean, &dhidden, Some(&mut dmean));
        if cache.count == 0 {
            return;
        }
        let inv = 1.0 / cache.count as f64;
        let d = self.d;
        let gt = g.get_mut(self.table);
        for &t in cache.tokens.iter().filter(|&&t| t != PAD_ID) {
            for (gv, dm) in gt[t as usize * d..(t as usize + 1) * d].iter_mut().zip(&dmean) {
                *gv += dm * inv;
            }
        }
    }
}

fn l2_normalize(x: &[f64]) -> (Vec<f64>, f64) {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_EPS);
    (x.iter().map(|v| v / norm).collect(), norm)
}

/// Element-wise sum of the two embeddings, each L2-normalized first when
/// `normalize` is set.
pub fn fuse(img: &Embedding, txt: &Embedding, normalize: bool) -> Result<Embedding> {
    if img.dim() != txt.dim() {
        return Err(Error::Shape(format!(
            "cannot fuse embeddings of dimension {} and {}",
            img.dim(),
            txt.dim()
        )));
    }
    if !normalize {
        return Ok(Embedding(img.0.iter().zip(&txt.0).map(|(a, b)| a + b).collect()));
    }
    let (a, _) = l2_normalize(&img.0);
    let (b, _) = l2_normalize(&txt.0);
    Ok(Embedding(a.iter().zip(&b).map(|(x, y)| x + y).collect()))
}

/// Gradients of [`fuse`] with respect to both inputs.
pub fn fuse_backward(img: &Embedding, txt: &Embedding, normalize: bool, dout: &[f64]) -> (Vec<f64>, Vec<f64>) {
    if !normalize {
        return (dout.to_vec(), dout.to_vec());
    }
    let through = |x: &[f64]| {
        let (u, norm) = l2_normalize(x);
        if norm <= NORM_EPS {
            return dout.iter().map(|d| d / norm).collect::<Vec<_>>();
        }
        let proj = crate::nn::dot(&u, dout);
        dout.iter().zip(&u).map(|(d, ui)| (d - ui * proj) / norm).collect()
    };
    (through(&img.0), through(&txt.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn small_cfg(arch: VisionArch) -> EncoderConfig {
        EncoderConfig {
            d: 8,
            vocab_size: 96,
            max_tokens: 8,
            vision_arch: arch,
            normalize_embeddings: true,
        }
    }

    fn random_image(rng: &mut ChaCha8Rng, side: usize) -> ImageTensor {
        let data = (0..side * side * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
        ImageTensor::new(side, side, 3, data).unwrap()
    }

    #[test]
    fn tokenizer_folds_case_and_strips_punctuation() {
        let cfg = small_cfg(VisionArch::PatchMlp);
        let vocab = Vocabulary::from_templates();
        assert_eq!(tokenize("Spore", &vocab, &cfg).unwrap(), tokenize("spore", &vocab, &cfg).unwrap());
        assert_eq!(
            tokenize("spore, hyphae!", &vocab, &cfg).unwrap(),
            tokenize("spore hyphae", &vocab, &cfg).unwrap()
        );
    }

    #[test]
    fn tokenizer_truncates_pads_and_maps_unknowns() {
        let cfg = small_cfg(VisionArch::PatchMlp);
        let vocab = Vocabulary::from_templates();
        let long = "spore ".repeat(20);
        assert_eq!(tokenize(&long, &vocab, &cfg).unwrap().len(), cfg.max_tokens);
        let short = tokenize("spore", &vocab, &cfg).unwrap();
        assert_eq!(short.len(), cfg.max_tokens);
        assert_eq!(&short[1..], &vec![PAD_ID; cfg.max_tokens - 1][..]);
        assert!(tokenize("xylophone spore", &vocab, &cfg).unwrap().contains(&UNK_ID));
        assert!(matches!(tokenize("   ", &vocab, &cfg), Err(Error::Input(_))));
    }

    #[test]
    fn vocabulary_round_trips_through_lines() {
        let vocab = Vocabulary::from_templates();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        vocab.write(&p).unwrap();
        let back = Vocabulary::read(&p).unwrap();
        assert_eq!(back, vocab);
        assert_eq!(back.id("<pad>"), PAD_ID);
        assert_eq!(back.id("<unk>"), UNK_ID);
        assert!(vocab.len() < EncoderConfig::default().vocab_size);
    }

    #[test]
    fn image_embedding_shape_and_determinism() {
        for arch in [VisionArch::PatchMlp, VisionArch::CompactConv] {
            let cfg = small_cfg(arch);
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let mut store = ParamStore::new();
            let enc = VisionEncoder::new(&mut store, &cfg, &mut rng);
            let img = random_image(&mut rng, 32);
            let (a, _) = enc.forward(&store, &img).unwrap();
            let (b, _) = enc.forward(&store, &img).unwrap();
            assert_eq!(a.dim(), 8);
            assert_eq!(a, b);
            assert!(a.is_finite());
        }
    }

    #[test]
    fn wrong_channel_count_is_a_shape_error() {
        let cfg = small_cfg(VisionArch::PatchMlp);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let enc = VisionEncoder::new(&mut store, &cfg, &mut rng);
        let gray = ImageTensor::new(32, 32, 1, vec![0.5; 32 * 32]).unwrap();
        assert!(matches!(enc.forward(&store, &gray), Err(Error::Shape(_))));
        assert!(ImageTensor::new(32, 32, 3, vec![0.0; 10]).is_err());
    }

    #[test]
    fn one_pixel_changes_the_image_embedding() {
        for arch in [VisionArch::PatchMlp, VisionArch::CompactConv] {
            let cfg = small_cfg(arch);
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            let mut store = ParamStore::new();
            let enc = VisionEncoder::new(&mut store, &cfg, &mut rng);
            for _ in 0..10 {
                let a = random_image(&mut rng, 32);
                let mut b = a.clone();
                let i = rng.gen_range(0..32 * 32) * 3;
                for c in 0..3 {
                    b.data[i + c] = 1.0 - b.data[i + c];
                }
                let (ea, _) = enc.forward(&store, &a).unwrap();
                let (eb, _) = enc.forward(&store, &b).unwrap();
                assert_ne!(ea, eb, "{arch:?}");
            }
        }
    }

    #[test]
    fn text_encoder_is_order_invariant_and_handles_all_padding() {
        let cfg = small_cfg(VisionArch::PatchMlp);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let enc = TextEncoder::new(&mut store, &cfg, &mut rng);
        let (a, _) = enc.forward(&store, &[5, 9, 3, 0]).unwrap();
        let (b, _) = enc.forward(&store, &[3, 5, 0, 9]).unwrap();
        for (x, y) in a.0.iter().zip(&b.0) {
            assert!((x - y).abs() < 1e-12);
        }
        let (pad, _) = enc.forward(&store, &[0, 0, 0, 0]).unwrap();
        assert_eq!(pad.dim(), 8);
        assert!(pad.is_finite());
        assert!(matches!(enc.forward(&store, &[96]), Err(Error::Input(_))));
    }

    #[test]
    fn fuse_is_componentwise_sum() {
        let a = Embedding(vec![1.0, 2.0]);
        let b = Embedding(vec![3.0, 4.0]);
        assert_eq!(fuse(&a, &b, false).unwrap().0, vec![4.0, 6.0]);
        assert_eq!(fuse(&a, &Embedding(vec![0.0, 0.0]), false).unwrap(), a);
        assert_eq!(fuse(&a, &b, true).unwrap(), fuse(&b, &a, true).unwrap());
        assert!(matches!(fuse(&a, &Embedding(vec![1.0]), false), Err(Error::Shape(_))));
        let n = fuse(&Embedding(vec![3.0, 0.0]), &Embedding(vec![0.0, 0.5]), true).unwrap();
        assert_eq!(n.0, vec![1.0, 1.0]);
    }

    #[test]
    fn fuse_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = |a: &[f64], b: &[f64]| {
            crate::nn::dot(&fuse(&Embedding(a.to_vec()), &Embedding(b.to_vec()), true).unwrap().0, &c)
        };
        let (da, db) = fuse_backward(&Embedding(a.clone()), &Embedding(b.clone()), true, &c);
        let h = 1e-6;
        for i in 0..6 {
            let mut ap = a.clone();
            ap[i] += h;
            let mut am = a.clone();
            am[i] -= h;
            assert!(((f(&ap, &b) - f(&am, &b)) / (2.0 * h) - da[i]).abs() < 1e-7);
            let mut bp = b.clone();
            bp[i] += h;
            let mut bm = b.clone();
            bm[i] -= h;
            assert!(((f(&a, &bp) - f(&a, &bm)) / (2.0 * h) - db[i]).abs() < 1e-7);
        }
    }
}
