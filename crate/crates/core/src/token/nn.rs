//! Reference fully connected network with hand-written reverse-mode gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Elu,
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative at pre-activation `x`.
    fn grad(self, x: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    x.exp()
                }
            }
            Activation::Tanh => 1.0 - x.tanh().powi(2),
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Fully connected network. Parameters live in one flat buffer, layer by
/// layer: row-major weight `[out, in]` followed by bias `[out]`. The output
/// layer is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub activation: Activation,
    pub params: Vec<f64>,
}

/// Values kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input of every layer (layer 0 input is the network input).
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Vec<f64>>,
}

pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// `input -> hidden... -> output`, weights uniform in ±sqrt(6/(in+out)),
    /// zero biases. `out_scale` shrinks the last layer.
    pub fn new<R: Rng + ?Sized>(
        input: usize,
        hidden: &[usize],
        output: usize,
        activation: Activation,
        out_scale: f64,
        rng: &mut R,
    ) -> Self {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        let mut params = Vec::with_capacity(param_count(&sizes));
        let layers = sizes.len() - 1;
        for (k, w) in sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let mut a = (6.0 / (n_in + n_out) as f64).sqrt();
            if k + 1 == layers {
                a *= out_scale;
            }
            params.extend((0..n_in * n_out).map(|_| rng.gen_range(-a..=a)));
            params.extend(std::iter::repeat(0.0).take(n_out));
        }
        Self { sizes, activation, params }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("mlp has layers")
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn layer_offsets(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut off = 0;
        self.sizes.windows(2).map(move |w| {
            let o = off;
            off += w[0] * w[1] + w[1];
            (o, w[0], w[1])
        })
    }

    /// Named per-layer views `(name, shape, offset, len)` used by checkpoints.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, usize, usize)> {
        let mut v = Vec::new();
        for (k, (off, n_in, n_out)) in self.layer_offsets().enumerate() {
            v.push((format!("l{k}.weight"), vec![n_out, n_in], off, n_in * n_out));
            v.push((format!("l{k}.bias"), vec![n_out], off + n_in * n_out, n_out));
        }
        v
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: &[f64]) -> (Vec<f64>, MlpCache) {
        assert_eq!(x.len(), self.input_dim(), "mlp input width");
        let layers = self.sizes.len() - 1;
        let mut inputs = Vec::with_capacity(layers);
        let mut pre = Vec::with_capacity(layers - 1);
        let mut h = x.to_vec();
        for (k, (off, n_in, n_out)) in self.layer_offsets().enumerate() {
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let z: Vec<f64> = (0..n_out)
                .map(|o| b[o] + w[o * n_in..(o + 1) * n_in].iter().zip(&h).map(|(a, x)| a * x).sum::<f64>())
                .collect();
            inputs.push(std::mem::take(&mut h));
            if k + 1 == layers {
                h = z;
            } else {
                h = z.iter().map(|v| self.activation.apply(*v)).collect();
                pre.push(z);
            }
        }
        (h, MlpCache { inputs, pre })
    }

    /// Accumulate `d loss / d params` into `grads` and return `d loss / d input`.
    pub fn backward(&self, cache: &MlpCache, dout: &[f64], grads: &mut [f64]) -> Vec<f64> {
        assert_eq!(grads.len(), self.params.len());
        let offsets: Vec<_> = self.layer_offsets().collect();
        let layers = offsets.len();
        let mut d = dout.to_vec();
        for k in (0..layers).rev() {
            let (off, n_in, n_out) = offsets[k];
            if k + 1 < layers {
                for (g, z) in d.iter_mut().zip(&cache.pre[k]) {
                    *g *= self.activation.grad(*z);
                }
            }
            let x = &cache.inputs[k];
            let w = &self.params[off..off + n_in * n_out];
            let (gw, gb) = grads[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            let mut dx = vec![0.0; n_in];
            for o in 0..n_out {
                let g = d[o];
                if g == 0.0 {
                    continue;
                }
                gb[o] += g;
                let row = o * n_in;
                for i in 0..n_in {
                    gw[row + i] += g * x[i];
                    dx[i] += g * w[row + i];
                }
            }
            d = dx;
        }
        d
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(params: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; params], v: vec![0.0; params], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

/// Scale `grads` so their global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn loss(m: &Mlp, x: &[f64], t: &[f64]) -> f64 {
        m.forward(x).iter().zip(t).map(|(y, t)| (y - t).powi(2)).sum()
    }

    #[test]
    fn backward_matches_finite_differences() {
        for act in [Activation::Elu, Activation::Tanh] {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let mut m = Mlp::new(5, &[7, 6], 3, act, 1.0, &mut rng);
            m.params.iter_mut().for_each(|p| *p += rng.gen_range(-0.1..0.1));
            let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let t = [0.3, -0.2, 0.5];
            let (y, cache) = m.forward_cached(&x);
            let dout: Vec<f64> = y.iter().zip(&t).map(|(y, t)| 2.0 * (y - t)).collect();
            let mut g = vec![0.0; m.param_count()];
            let dx = m.backward(&cache, &dout, &mut g);
            let h = 1e-6;
            for i in 0..m.param_count() {
                let mut p = m.clone();
                p.params[i] += h;
                let up = loss(&p, &x, &t);
                p.params[i] -= 2.0 * h;
                let fd = (up - loss(&p, &x, &t)) / (2.0 * h);
                assert!((fd - g[i]).abs() < 1e-7, "{act:?} param {i}: {fd} vs {}", g[i]);
            }
            for i in 0..5 {
                let mut xp = x.clone();
                xp[i] += h;
                let up = loss(&m, &xp, &t);
                xp[i] -= 2.0 * h;
                let fd = (up - loss(&m, &xp, &t)) / (2.0 * h);
                assert!((fd - dx[i]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn param_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = Mlp::new(4, &[3], 2, Activation::Relu, 1.0, &mut rng);
        assert_eq!(m.param_count(), 4 * 3 + 3 + 3 * 2 + 2);
        assert_eq!(param_count(&m.sizes), m.param_count());
        let t = m.tensors();
        assert_eq!(t[0].1, vec![3, 4]);
        assert_eq!(t[3], ("l1.bias".to_string(), vec![2], 4 * 3 + 3 + 6, 2));
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = vec![3.0, -2.0];
        let mut opt = Adam::new(2, 0.05);
        for _ in 0..2000 {
            let g: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
            opt.step(&mut p, &g);
        }
        assert!(p.iter().all(|x| x.abs() < 1e-3), "{p:?}");
    }

    #[test]
    fn grad_clip_scales_to_max() {
        let mut g = vec![3.0, 4.0];
        assert_eq!(clip_grad_norm(&mut g, 0.1), 5.0);
        assert!((g[0] - 0.06).abs() < 1e-15 && (g[1] - 0.08).abs() < 1e-15);
        let mut small = vec![0.01];
        clip_grad_norm(&mut small, 0.1);
        assert_eq!(small, vec![0.01]);
    }
}
