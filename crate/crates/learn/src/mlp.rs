//! Fully connected network with tanh hidden layers and a linear output,
//! flat parameter storage and hand-written backpropagation.

use hexnav::Real;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp<T> {
    sizes: Vec<usize>,
    params: Vec<T>,
}

/// Layer outputs of one forward pass; `layers[0]` is the input.
#[derive(Debug, Clone, PartialEq)]
pub struct Activations<T> {
    pub layers: Vec<Vec<T>>,
}

impl<T: Real> Activations<T> {
    pub fn output(&self) -> &[T] {
        self.layers.last().expect("at least the input layer")
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl<T: Real> Mlp<T> {
    /// Weights drawn with standard deviation `gain / sqrt(fan_in)` (uniform
    /// with matching variance); biases zero. `gains` has one entry per layer.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], gains: &[f64], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need input and output sizes");
        assert_eq!(gains.len(), sizes.len() - 1);
        let mut params = Vec::with_capacity(param_count(sizes));
        for (w, gain) in sizes.windows(2).zip(gains) {
            let bound = gain * (3.0 / w[0] as f64).sqrt();
            for _ in 0..w[0] * w[1] {
                params.push(T::lit(if bound > 0.0 {
                    rng.gen_range(-bound..bound)
                } else {
                    0.0
                }));
            }
            params.extend(std::iter::repeat_n(T::zero(), w[1]));
        }
        Self {
            sizes: sizes.to_vec(),
            params,
        }
    }

    pub fn from_params(sizes: &[usize], params: Vec<T>) -> Option<Self> {
        (sizes.len() >= 2 && params.len() == param_count(sizes)).then(|| Self {
            sizes: sizes.to_vec(),
            params,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        self.sizes[self.sizes.len() - 1]
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Offset of layer `l`'s weight matrix and bias vector.
    fn offsets(&self, l: usize) -> (usize, usize) {
        let w: usize = self.sizes[..l + 1]
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum();
        (w, w + self.sizes[l] * self.sizes[l + 1])
    }

    /// Mutable rows `[row_lo, row_hi)` of the last layer's weights and biases.
    pub fn scale_output_rows(&mut self, rows: std::ops::Range<usize>, factor: T) {
        let l = self.sizes.len() - 2;
        let (w, b) = self.offsets(l);
        let n_in = self.sizes[l];
        for row in rows {
            for k in 0..n_in {
                self.params[w + row * n_in + k] *= factor;
            }
            self.params[b + row] *= factor;
        }
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        self.forward_cached(x).layers.pop().expect("output layer")
    }

    pub fn forward_cached(&self, x: &[T]) -> Activations<T> {
        assert_eq!(x.len(), self.sizes[0], "input dimension");
        let n_layers = self.sizes.len() - 1;
        let mut layers = Vec::with_capacity(n_layers + 1);
        layers.push(x.to_vec());
        let mut off = 0;
        for l in 0..n_layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let input = &layers[l];
            let mut out = Vec::with_capacity(n_out);
            for j in 0..n_out {
                let row = &w[j * n_in..(j + 1) * n_in];
                let mut s = b[j];
                for (wk, xk) in row.iter().zip(input) {
                    s += *wk * *xk;
                }
                out.push(if l + 1 < n_layers { s.tanh() } else { s });
            }
            off += n_in * n_out + n_out;
            layers.push(out);
        }
        Activations { layers }
    }

    /// Accumulates `d loss / d params` into `grad` given `d loss / d output`.
    pub fn backward(&self, acts: &Activations<T>, grad_out: &[T], grad: &mut [T]) {
        assert_eq!(grad.len(), self.params.len());
        let n_layers = self.sizes.len() - 1;
        let mut delta = grad_out.to_vec();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let (w_off, b_off) = self.offsets(l);
            let input = &acts.layers[l];
            for j in 0..n_out {
                let d = delta[j];
                if d == T::zero() {
                    continue;
                }
                let g = &mut grad[w_off + j * n_in..w_off + (j + 1) * n_in];
                for (gk, xk) in g.iter_mut().zip(input) {
                    *gk += d * *xk;
                }
                grad[b_off + j] += d;
            }
            if l == 0 {
                break;
            }
            let w = &self.params[w_off..w_off + n_in * n_out];
            let mut prev = vec![T::zero(); n_in];
            for j in 0..n_out {
                let d = delta[j];
                if d == T::zero() {
                    continue;
                }
                for (pk, wk) in prev.iter_mut().zip(&w[j * n_in..(j + 1) * n_in]) {
                    *pk += d * *wk;
                }
            }
            // previous layer is a tanh layer
            for (pk, a) in prev.iter_mut().zip(&acts.layers[l]) {
                *pk *= T::one() - *a * *a;
            }
            delta = prev;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net: Mlp<f64> = Mlp::new(&[3, 4, 2], &[1.0, 1.0], &mut rng);
        let x = [0.3, -0.7, 0.2];
        // loss = sum(c_k * out_k)
        let c = [0.8, -1.3];
        let acts = net.forward_cached(&x);
        let mut grad = vec![0.0; net.n_params()];
        net.backward(&acts, &c, &mut grad);
        let loss = |m: &Mlp<f64>| {
            m.forward(&x)
                .iter()
                .zip(&c)
                .map(|(o, k)| o * k)
                .sum::<f64>()
        };
        for i in 0..net.n_params() {
            let mut p = net.clone();
            p.params_mut()[i] += 1e-6;
            let mut m = net.clone();
            m.params_mut()[i] -= 1e-6;
            let fd = (loss(&p) - loss(&m)) / 2e-6;
            assert!((fd - grad[i]).abs() < 1e-7, "{i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn zero_gain_gives_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net: Mlp<f32> = Mlp::new(&[5, 8, 3], &[1.0, 0.0], &mut rng);
        assert_eq!(net.forward(&[1.0; 5]), vec![0.0; 3]);
        assert_eq!(net.n_params(), 5 * 8 + 8 + 8 * 3 + 3);
        assert!(Mlp::<f32>::from_params(&[5, 8, 3], vec![0.0; 10]).is_none());
    }
}
