use rand_chacha::ChaCha8Rng;

use super::{Grads, Init, ParamId, ParamStore};

/// Affine map `y = W x + b` with `W` stored row-major as `(out, in)`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let weight = store.alloc(
            &format!("{name}.weight"),
            &[out_dim, in_dim],
            Init::XavierUniform {
                fan_in: in_dim,
                fan_out: out_dim,
            },
            rng,
        );
        let bias = store.alloc(&format!("{name}.bias"), &[out_dim], Init::Zeros, rng);
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, p: &ParamStore, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(y.len(), self.out_dim);
        let w = p.get(self.weight);
        let b = p.get(self.bias);
        for (o, (yo, row)) in y.iter_mut().zip(w.chunks_exact(self.in_dim)).enumerate() {
            *yo = b[o] + super::dot(row, x);
        }
    }

    pub fn forward_vec(&self, p: &ParamStore, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.out_dim];
        self.forward(p, x, &mut y);
        y
    }

    /// Accumulate parameter gradients for one input row and, if requested,
    /// write (overwrite) the input gradient into `dx`.
    pub fn backward(&self, p: &ParamStore, g: &mut Grads, x: &[f64], dy: &[f64], dx: Option<&mut [f64]>) {
        {
            let gw = g.get_mut(self.weight);
            for (row, &d) in gw.chunks_exact_mut(self.in_dim).zip(dy) {
                if d != 0.0 {
                    for (gi, &xi) in row.iter_mut().zip(x) {
                        *gi += d * xi;
                    }
                }
            }
        }
        for (gb, &d) in g.get_mut(self.bias).iter_mut().zip(dy) {
            *gb += d;
        }
        if let Some(dx) = dx {
            dx.fill(0.0);
            let w = p.get(self.weight);
            for (row, &d) in w.chunks_exact(self.in_dim).zip(dy) {
                if d != 0.0 {
                    for (dxi, &wi) in dx.iter_mut().zip(row) {
                        *dxi += d * wi;
                    }
                }
            }
        }
    }
}
