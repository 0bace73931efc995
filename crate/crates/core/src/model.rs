//! The full multitask model: image and text encoders, fusion, and both heads.

use ndarray::{Array1, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoders::{
    fuse, fuse_backward, tokenize, Embedding, EncoderConfig, ImageTensor, TextCache, TextEncoder, VisionCache,
    VisionEncoder, Vocabulary,
};
use crate::error::{Error, Result};
use crate::heads::{Classifier, HeadOutputs, Mode, ModelConfig, TimeCache, TimeTransformer};
use crate::nn::{Grads, ParamStore};

#[derive(Debug, Clone)]
pub struct Model {
    pub encoder_cfg: EncoderConfig,
    pub model_cfg: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ParamStore,
    vision: VisionEncoder,
    text: TextEncoder,
    classifier: Classifier,
    time_head: TimeTransformer,
}

/// Everything the backward pass needs from one sample's forward pass.
#[derive(Debug, Clone)]
pub struct SampleCache {
    image: VisionCache,
    text: TextCache,
    img_emb: Embedding,
    txt_emb: Embedding,
    fused: Embedding,
    time: TimeCache,
}

impl Model {
    /// Freshly initialized model. Parameter layout depends only on the configs;
    /// values depend on `seed`.
    pub fn new(encoder_cfg: EncoderConfig, model_cfg: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        encoder_cfg.validate()?;
        model_cfg.validate()?;
        if encoder_cfg.d != model_cfg.d {
            return Err(Error::Config(format!(
                "encoder.d ({}) must equal model.d ({})",
                encoder_cfg.d, model_cfg.d
            )));
        }
        if vocab.len() > encoder_cfg.vocab_size {
            return Err(Error::Config(format!(
                "vocabulary has {} tokens but encoder.vocab_size is {}",
                vocab.len(),
                encoder_cfg.vocab_size
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let vision = VisionEncoder::new(&mut params, &encoder_cfg, &mut rng);
        let text = TextEncoder::new(&mut params, &encoder_cfg, &mut rng);
        let classifier = Classifier::new(&mut params, &model_cfg, &mut rng);
        let time_head = TimeTransformer::new(&mut params, &model_cfg, &mut rng);
        Ok(Self {
            encoder_cfg,
            model_cfg,
            vocab,
            params,
            vision,
            text,
            classifier,
            time_head,
        })
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<u32>> {
        tokenize(text, &self.vocab, &self.encoder_cfg)
    }

    pub fn encode_image(&self, img: &ImageTensor) -> Result<Embedding> {
        Ok(self.vision.forward(&self.params, img)?.0)
    }

    pub fn encode_text(&self, tokens: &[u32]) -> Result<Embedding> {
        Ok(self.text.forward(&self.params, tokens)?.0)
    }

    pub fn fuse(&self, img: &Embedding, txt: &Embedding) -> Result<Embedding> {
        fuse(img, txt, self.encoder_cfg.normalize_embeddings)
    }

    pub fn classify(&self, fused: &Embedding) -> Result<Vec<f64>> {
        self.classifier.classify(&self.params, fused.as_slice())
    }

    /// Batched time regression on `B x d` fused embeddings.
    pub fn time_transformer_forward(&self, batch: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.time_head.forward_batch(&self.params, batch)
    }

    pub fn classifier(&self) -> &Classifier {
        &self.classifier
    }

    pub fn time_head(&self) -> &TimeTransformer {
        &self.time_head
    }

    pub fn text_encoder(&self) -> &TextEncoder {
        &self.text
    }

    /// Names of the parameters owned by the two heads.
    pub fn head_param_names(&self) -> Vec<String> {
        self.params
            .specs()
            .iter()
            .filter(|s| s.name.starts_with("head.") || s.name.starts_with("time."))
            .map(|s| s.name.clone())
            .collect()
    }

    pub fn forward(&self, img: &ImageTensor, tokens: &[u32], mode: Mode) -> Result<(HeadOutputs, SampleCache)> {
        let (img_emb, image) = self.vision.forward(&self.params, img)?;
        let (txt_emb, text) = self.text.forward(&self.params, tokens)?;
        let fused = self.fuse(&img_emb, &txt_emb)?;
        let logits = self.classifier.classify(&self.params, fused.as_slice())?;
        let (t_hat, time) = self.time_head.forward_token(&self.params, fused.as_slice(), mode)?;
        Ok((
            HeadOutputs { logits, t_hat },
            SampleCache {
                image,
                text,
                img_emb,
                txt_emb,
                fused,
                time,
            },
        ))
    }

    /// Backpropagate `dlogits` and `dt_hat` through one sample, accumulating into `g`.
    pub fn backward(&self, img: &ImageTensor, cache: &SampleCache, dlogits: &[f64], dt_hat: f64, g: &mut Grads) {
        let mut dfused = self
            .classifier
            .backward(&self.params, g, cache.fused.as_slice(), dlogits);
        let dtime = self.time_head.backward(&self.params, g, &cache.time, dt_hat);
        dfused.iter_mut().zip(&dtime).for_each(|(a, b)| *a += b);
        let (dimg, dtxt) = fuse_backward(
            &cache.img_emb,
            &cache.txt_emb,
            self.encoder_cfg.normalize_embeddings,
            &dfused,
        );
        self.vision.backward(&self.params, g, img, &cache.image, &dimg);
        self.text.backward(&self.params, g, &cache.text, &dtxt);
    }

    /// Evaluation-mode prediction for one image and prompt.
    pub fn predict(&self, img: &ImageTensor, prompt: &str) -> Result<HeadOutputs> {
        let tokens = self.tokenize(prompt)?;
        Ok(self.forward(img, &tokens, Mode::Eval)?.0)
    }
}
