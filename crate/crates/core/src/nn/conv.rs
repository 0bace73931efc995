use rand_chacha::ChaCha8Rng;

use super::{Grads, Linear, ParamStore};

/// 2-D convolution over HWC feature maps, implemented as a shared [`Linear`]
/// applied to each im2col patch. Patch layout is `(ky, kx, channel)`.
#[derive(Debug, Clone, Copy)]
pub struct Conv2d {
    pub proj: Linear,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let proj = Linear::new(store, name, kernel * kernel * in_channels, out_channels, rng);
        Self {
            proj,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    /// Output spatial size for an `h x w` input.
    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let oh = (h + 2 * self.padding).saturating_sub(self.kernel) / self.stride + 1;
        let ow = (w + 2 * self.padding).saturating_sub(self.kernel) / self.stride + 1;
        (oh, ow)
    }

    fn gather(&self, x: &[f64], h: usize, w: usize, oy: usize, ox: usize, col: &mut [f64]) {
        let c = self.in_channels;
        let k = self.kernel;
        for ky in 0..k {
            let iy = (oy * self.stride + ky) as isize - self.padding as isize;
            for kx in 0..k {
                let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                let dst = &mut col[(ky * k + kx) * c..(ky * k + kx + 1) * c];
                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                    dst.fill(0.0);
                } else {
                    let src = (iy as usize * w + ix as usize) * c;
                    dst.copy_from_slice(&x[src..src + c]);
                }
            }
        }
    }

    /// Returns the output map and its `(height, width)`.
    pub fn forward(&self, p: &ParamStore, x: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
        debug_assert_eq!(x.len(), h * w * self.in_channels);
        let (oh, ow) = self.output_size(h, w);
        let mut out = vec![0.0; oh * ow * self.out_channels];
        let mut col = vec![0.0; self.proj.in_dim];
        for oy in 0..oh {
            for ox in 0..ow {
                self.gather(x, h, w, oy, ox, &mut col);
                let o = (oy * ow + ox) * self.out_channels;
                self.proj.forward(p, &col, &mut out[o..o + self.out_channels]);
            }
        }
        (out, oh, ow)
    }

    /// Accumulate parameter gradients; returns the input gradient when `need_dx`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        p: &ParamStore,
        g: &mut Grads,
        x: &[f64],
        h: usize,
        w: usize,
        dy: &[f64],
        need_dx: bool,
    ) -> Option<Vec<f64>> {
        let (oh, ow) = self.output_size(h, w);
        let c = self.in_channels;
        let k = self.kernel;
        let mut col = vec![0.0; self.proj.in_dim];
        let mut dcol = vec![0.0; self.proj.in_dim];
        let mut dx = need_dx.then(|| vec![0.0; x.len()]);
        for oy in 0..oh {
            for ox in 0..ow {
                let o = (oy * ow + ox) * self.out_channels;
                let d = &dy[o..o + self.out_channels];
                if d.iter().all(|v| *v == 0.0) {
                    continue;
                }
                self.gather(x, h, w, oy, ox, &mut col);
                match dx.as_mut() {
                    None => self.proj.backward(p, g, &col, d, None),
                    Some(dx) => {
                        self.proj.backward(p, g, &col, d, Some(&mut dcol));
                        for ky in 0..k {
                            let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                            for kx in 0..k {
                                let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let dst = (iy as usize * w + ix as usize) * c;
                                let src = (ky * k + kx) * c;
                                for ch in 0..c {
                                    dx[dst + ch] += dcol[src + ch];
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}
