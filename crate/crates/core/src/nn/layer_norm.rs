use rand_chacha::ChaCha8Rng;

use super::{Grads, Init, ParamId, ParamStore};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Per-token layer normalization with learned gain and bias.
#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub dim: usize,
}

/// Values saved by the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub normalized: Vec<f64>,
    pub inv_std: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let gain = store.alloc(&format!("{name}.gain"), &[dim], Init::Ones, rng);
        let bias = store.alloc(&format!("{name}.bias"), &[dim], Init::Zeros, rng);
        Self { gain, bias, dim }
    }

    pub fn forward(&self, p: &ParamStore, x: &[f64]) -> (Vec<f64>, LayerNormCache) {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        let normalized: Vec<f64> = x.iter().map(|v| (v - mean) * inv_std).collect();
        let gain = p.get(self.gain);
        let bias = p.get(self.bias);
        let y = normalized
            .iter()
            .zip(gain.iter().zip(bias))
            .map(|(xh, (g, b))| xh * g + b)
            .collect();
        (y, LayerNormCache { normalized, inv_std })
    }

    /// Returns the gradient with respect to the input.
    pub fn backward(&self, p: &ParamStore, g: &mut Grads, cache: &LayerNormCache, dy: &[f64]) -> Vec<f64> {
        let n = dy.len() as f64;
        let gain = p.get(self.gain);
        let dxhat: Vec<f64> = dy.iter().zip(gain).map(|(d, g)| d * g).collect();
        {
            let gg = g.get_mut(self.gain);
            for ((gi, d), xh) in gg.iter_mut().zip(dy).zip(&cache.normalized) {
                *gi += d * xh;
            }
        }
        for (gb, d) in g.get_mut(self.bias).iter_mut().zip(dy) {
            *gb += d;
        }
        let mean_d = dxhat.iter().sum::<f64>() / n;
        let mean_dx = dxhat
            .iter()
            .zip(&cache.normalized)
            .map(|(d, xh)| d * xh)
            .sum::<f64>()
            / n;
        dxhat
            .iter()
            .zip(&cache.normalized)
            .map(|(d, xh)| cache.inv_std * (d - mean_d - xh * mean_dx))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn identity_affine_gives_zero_mean_unit_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let ln = LayerNorm::new(&mut store, "ln", 6, &mut rng);
        let (y, _) = ln.forward(&store, &[1.0, 2.0, -3.0, 4.5, 0.0, 10.0]);
        let mean = y.iter().sum::<f64>() / 6.0;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
        assert!(mean.abs() < 1e-12);
        // eps keeps the variance marginally below one
        assert!((var - 1.0).abs() < 1e-5);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let ln = LayerNorm::new(&mut store, "ln", 5, &mut rng);
        store.get_mut(ln.gain).copy_from_slice(&[1.0, 0.5, -1.5, 2.0, 0.7]);
        store.get_mut(ln.bias).copy_from_slice(&[0.1, 0.0, -0.3, 0.2, 0.4]);
        let x = [0.3, -1.2, 2.2, 0.05, 1.0];
        let c = [0.7, -0.4, 1.1, 0.3, -2.0];
        let loss = |s: &ParamStore, x: &[f64]| super::super::dot(&ln.forward(s, x).0, &c);

        let (_, cache) = ln.forward(&store, &x);
        let mut g = store.zero_grads();
        let dx = ln.backward(&store, &mut g, &cache, &c);
        let h = 1e-6;
        for i in 0..5 {
            let mut xp = x;
            xp[i] += h;
            let mut xm = x;
            xm[i] -= h;
            let fd = (loss(&store, &xp) - loss(&store, &xm)) / (2.0 * h);
            assert!((fd - dx[i]).abs() < 1e-7, "dx[{i}]: {fd} vs {}", dx[i]);
        }
        for i in 0..store.len() {
            let mut sp = store.clone();
            sp.data_mut()[i] += h;
            let mut sm = store.clone();
            sm.data_mut()[i] -= h;
            let fd = (loss(&sp, &x) - loss(&sm, &x)) / (2.0 * h);
            assert!((fd - g.data()[i]).abs() < 1e-7);
        }
    }
}
