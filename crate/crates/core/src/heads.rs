//! Classification head and the transformer-based time regression head.
//!
//! The time head treats each fused embedding as a sequence of one token, runs
//! it through post-norm transformer encoder layers, pools the sequence,
//! and maps the pooled vector to a scalar through an affine map and a sigmoid.
//! With a single token, each attention head's softmax runs over one key and
//! its weight is exactly 1.

use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    relu_backward_inplace, relu_inplace, sigmoid, softmax, Grads, LayerNorm, LayerNormCache, Linear, ParamStore,
};
use crate::synthgen::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d: usize,
    pub n_encoder_layers: usize,
    pub ffn_hidden: usize,
    pub n_attention_heads: usize,
    pub n_classes: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 512,
            n_encoder_layers: 2,
            ffn_hidden: 2048,
            n_attention_heads: 8,
            n_classes: 3,
            dropout: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n_encoder_layers == 0 || self.ffn_hidden == 0 || self.n_attention_heads == 0 {
            return Err(Error::Config(
                "model.d, n_encoder_layers, ffn_hidden and n_attention_heads must be positive".into(),
            ));
        }
        if !self.d.is_multiple_of(self.n_attention_heads) {
            return Err(Error::Config(format!(
                "model.n_attention_heads ({}) must divide d ({})",
                self.n_attention_heads, self.d
            )));
        }
        if self.n_classes != 3 {
            return Err(Error::Config(format!(
                "model.n_classes must be 3 for the growth-stage task, got {}",
                self.n_classes
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("model.dropout must be in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }
}

/// Raw class logits and the normalized time prediction for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    pub logits: Vec<f64>,
    pub t_hat: f64,
}

/// Forward-pass mode; dropout only applies in `Train`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { dropout_seed: u64 },
}

/// Single affine map from the fused embedding to class logits.
#[derive(Debug, Clone, Copy)]
pub struct Classifier {
    pub fc: Linear,
}

impl Classifier {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        Self {
            fc: Linear::new(store, "head.classifier", cfg.d, cfg.n_classes, rng),
        }
    }

    pub fn classify(&self, p: &ParamStore, fused: &[f64]) -> Result<Vec<f64>> {
        if fused.len() != self.fc.in_dim {
            return Err(Error::Shape(format!(
                "classifier expects dimension {}, got {}",
                self.fc.in_dim,
                fused.len()
            )));
        }
        Ok(self.fc.forward_vec(p, fused))
    }

    pub fn backward(&self, p: &ParamStore, g: &mut Grads, fused: &[f64], dlogits: &[f64]) -> Vec<f64> {
        let mut dx = vec![0.0; self.fc.in_dim];
        self.fc.backward(p, g, fused, dlogits, Some(&mut dx));
        dx
    }
}

/// View a `B x d` batch as `B` sequences of length one. No positional encoding.
pub fn reshape_to_sequence(batch: Array2<f64>) -> Array3<f64> {
    batch.insert_axis(Axis(1))
}

/// Pool a `B x 1 x d` sequence batch over its length axis. With one token the
/// average is the token itself, so this is a direct selection of position 0.
pub fn pool_sequence(seq: &Array3<f64>) -> Result<Array2<f64>> {
    if seq.shape()[1] != 1 {
        return Err(Error::Shape(format!(
            "time head only handles sequences of length 1, got {}",
            seq.shape()[1]
        )));
    }
    Ok(seq.index_axis(Axis(1), 0).to_owned())
}

/// Post-norm transformer encoder layer:
/// `Z1 = LN(X + MHSA(X))`, `out = LN(Z1 + FFN(Z1))`.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub attn_out: Linear,
    pub norm1: LayerNorm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub norm2: LayerNorm,
    pub n_heads: usize,
    pub d: usize,
    pub dropout: f64,
}

#[derive(Debug, Clone)]
pub struct EncoderLayerCache {
    x: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// One softmax weight per head (one key each).
    pub attn_weights: Vec<f64>,
    attended: Vec<f64>,
    attn_mask: Option<Vec<f64>>,
    norm1: LayerNormCache,
    z1: Vec<f64>,
    hidden: Vec<f64>,
    ffn_mask: Option<Vec<f64>>,
    norm2: LayerNormCache,
}

fn dropout_mask(rate: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = 1.0 - rate;
    (0..n)
        .map(|_| if rng.gen_bool(keep) { 1.0 / keep } else { 0.0 })
        .collect()
}

impl EncoderLayer {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.d;
        Self {
            query: Linear::new(store, &format!("{name}.attn.query"), d, d, rng),
            key: Linear::new(store, &format!("{name}.attn.key"), d, d, rng),
            value: Linear::new(store, &format!("{name}.attn.value"), d, d, rng),
            attn_out: Linear::new(store, &format!("{name}.attn.out"), d, d, rng),
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), d, rng),
            ffn_in: Linear::new(store, &format!("{name}.ffn.in"), d, cfg.ffn_hidden, rng),
            ffn_out: Linear::new(store, &format!("{name}.ffn.out"), cfg.ffn_hidden, d, rng),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), d, rng),
            n_heads: cfg.n_attention_heads,
            d,
            dropout: cfg.dropout,
        }
    }

    /// Forward one token (sequence of length 1).
    pub fn forward_token(&self, p: &ParamStore, x: &[f64], mode: Mode) -> Result<(Vec<f64>, EncoderLayerCache)> {
        if x.len() != self.d {
            return Err(Error::Shape(format!("encoder layer expects dimension {}, got {}", self.d, x.len())));
        }
        let dh = self.d / self.n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let q = self.query.forward_vec(p, x);
        let k = self.key.forward_vec(p, x);
        let v = self.value.forward_vec(p, x);
        let mut attn_weights = Vec::with_capacity(self.n_heads);
        let mut attended = vec![0.0; self.d];
        for h in 0..self.n_heads {
            let r = h * dh..(h + 1) * dh;
            let score = crate::nn::dot(&q[r.clone()], &k[r.clone()]) * scale;
            // softmax over the single key of this sequence
            let w = softmax(&[score])[0];
            attn_weights.push(w);
            for (a, vv) in attended[r.clone()].iter_mut().zip(&v[r]) {
                *a = w * vv;
            }
        }
        let (attn_mask, ffn_mask) = match mode {
            Mode::Train { dropout_seed } if self.dropout > 0.0 => (
                Some(dropout_mask(self.dropout, self.d, derive_seed(dropout_seed, 11, 0))),
                Some(dropout_mask(self.dropout, self.d, derive_seed(dropout_seed, 12, 0))),
            ),
            _ => (None, None),
        };
        let mut mh = self.attn_out.forward_vec(p, &attended);
        if let Some(m) = &attn_mask {
            mh.iter_mut().zip(m).for_each(|(a, b)| *a *= b);
        }
        let r1: Vec<f64> = x.iter().zip(&mh).map(|(a, b)| a + b).collect();
        let (z1, norm1) = self.norm1.forward(p, &r1);

        let mut hidden = self.ffn_in.forward_vec(p, &z1);
        relu_inplace(&mut hidden);
        let mut f = self.ffn_out.forward_vec(p, &hidden);
        if let Some(m) = &ffn_mask {
            f.iter_mut().zip(m).for_each(|(a, b)| *a *= b);
        }
        let r2: Vec<f64> = z1.iter().zip(&f).map(|(a, b)| a + b).collect();
        let (out, norm2) = self.norm2.forward(p, &r2);
        Ok((
            out,
            EncoderLayerCache {
                x: x.to_vec(),
                q,
                k,
                v,
                attn_weights,
                attended,
                attn_mask,
                norm1,
                z1,
                hidden,
                ffn_mask,
                norm2,
            },
        ))
    }

    /// Accumulate parameter gradients; returns the input gradient.
    pub fn backward(&self, p: &ParamStore, g: &mut Grads, c: &EncoderLayerCache, dout: &[f64]) -> Vec<f64> {
        let d = self.d;
        let dr2 = self.norm2.backward(p, g, &c.norm2, dout);
        let mut dz1 = dr2.clone();
        let mut df = dr2;
        if let Some(m) = &c.ffn_mask {
            df.iter_mut().zip(m).for_each(|(a, b)| *a *= b);
        }
        let mut dhidden = vec![0.0; self.ffn_out.in_dim];
        self.ffn_out.backward(p, g, &c.hidden, &df, Some(&mut dhidden));
        relu_backward_inplace(&c.hidden, &mut dhidden);
        let mut dz1_ffn = vec![0.0; d];
        self.ffn_in.backward(p, g, &c.z1, &dhidden, Some(&mut dz1_ffn));
        dz1.iter_mut().zip(&dz1_ffn).for_each(|(a, b)| *a += b);

        let dr1 = self.norm1.backward(p, g, &c.norm1, &dz1);
        let mut dx = dr1.clone();
        let mut dmh = dr1;
        if let Some(m) = &c.attn_mask {
            dmh.iter_mut().zip(m).for_each(|(a, b)| *a *= b);
        }
        let mut dattended = vec![0.0; d];
        self.attn_out.backward(p, g, &c.attended, &dmh, Some(&mut dattended));

        let dh = d / self.n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = vec![0.0; d];
        let mut dk = vec![0.0; d];
        let mut dv = vec![0.0; d];
        for h in 0..self.n_heads {
            let r = h * dh..(h + 1) * dh;
            let w = c.attn_weights[h];
            let dw = crate::nn::dot(&dattended[r.clone()], &c.v[r.clone()]);
            for (dvi, da) in dv[r.clone()].iter_mut().zip(&dattended[r.clone()]) {
                *dvi = w * da;
            }
            // softmax Jacobian over one key: w * (dw - w * dw)
            let dscore = w * (dw - w * dw);
            for i in r {
                dq[i] = dscore * c.k[i] * scale;
                dk[i] = dscore * c.q[i] * scale;
            }
        }
        let mut tmp = vec![0.0; d];
        for (lin, dy) in [(&self.query, &dq), (&self.key, &dk), (&self.value, &dv)] {
            lin.backward(p, g, &c.x, dy, Some(&mut tmp));
            dx.iter_mut().zip(&tmp).for_each(|(a, b)| *a += b);
        }
        dx
    }
}

/// Stacked encoder layers → pooling → affine scalar → sigmoid.
#[derive(Debug, Clone)]
pub struct TimeTransformer {
    pub layers: Vec<EncoderLayer>,
    pub out: Linear,
    pub d: usize,
}

#[derive(Debug, Clone)]
pub struct TimeCache {
    pub layers: Vec<EncoderLayerCache>,
    pooled: Vec<f64>,
    pub t_hat: f64,
}

impl TimeTransformer {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let layers = (0..cfg.n_encoder_layers)
            .map(|i| EncoderLayer::new(store, &format!("time.layer{i}"), cfg, rng))
            .collect();
        let out = Linear::new(store, "time.out", cfg.d, 1, rng);
        Self { layers, out, d: cfg.d }
    }

    /// Per-sample forward of one fused embedding.
    pub fn forward_token(&self, p: &ParamStore, fused: &[f64], mode: Mode) -> Result<(f64, TimeCache)> {
        let mut x = fused.to_vec();
        let mut caches = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let layer_mode = match mode {
                Mode::Train { dropout_seed } => Mode::Train {
                    dropout_seed: derive_seed(dropout_seed, 10, i as u64),
                },
                Mode::Eval => Mode::Eval,
            };
            let (y, c) = layer.forward_token(p, &x, layer_mode)?;
            caches.push(c);
            x = y;
        }
        // length-1 sequence: the pooled vector is the final token
        let pooled = x;
        let logit = self.out.forward_vec(p, &pooled)[0];
        let t_hat = sigmoid(logit);
        Ok((
            t_hat,
            TimeCache {
                layers: caches,
                pooled,
                t_hat,
            },
        ))
    }

    /// Gradient of the scalar output `t_hat` scaled by `dt_hat`; returns the
    /// gradient with respect to the fused embedding.
    pub fn backward(&self, p: &ParamStore, g: &mut Grads, cache: &TimeCache, dt_hat: f64) -> Vec<f64> {
        let dlogit = dt_hat * cache.t_hat * (1.0 - cache.t_hat);
        let mut dx = vec![0.0; self.d];
        self.out.backward(p, g, &cache.pooled, &[dlogit], Some(&mut dx));
        for (layer, c) in self.layers.iter().zip(&cache.layers).rev() {
            dx = layer.backward(p, g, c, &dx);
        }
        dx
    }

    /// Batched evaluation-mode forward: `B x d` → `B` values in `(0, 1)`.
    pub fn forward_batch(&self, p: &ParamStore, batch: ArrayView2<f64>) -> Result<Array1<f64>> {
        if batch.ncols() != self.d {
            return Err(Error::Shape(format!(
                "time head expects dimension {}, got {}",
                self.d,
                batch.ncols()
            )));
        }
        let mut seq = reshape_to_sequence(batch.to_owned());
        for layer in &self.layers {
            for mut row in seq.axis_iter_mut(Axis(0)) {
                let token: Vec<f64> = row.index_axis(Axis(0), 0).to_vec();
                let (y, _) = layer.forward_token(p, &token, Mode::Eval)?;
                row.index_axis_mut(Axis(0), 0).assign(&Array1::from(y));
            }
        }
        let pooled = pool_sequence(&seq)?;
        Ok(pooled
            .axis_iter(Axis(0))
            .map(|row| sigmoid(self.out.forward_vec(p, row.as_slice().expect("contiguous row"))[0]))
            .collect())
    }
}
