use rand::Rng;

/// A dense network stored as a window `[offset, offset + param_count)` of a
/// flat parameter vector. Each layer is a row-major `out × in` weight block
/// followed by `out` biases. Hidden layers use tanh; the last layer is
/// identity unless `tanh_out` is set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlpLayout {
    sizes: Vec<usize>,
    offset: usize,
    tanh_out: bool,
}

/// Layer activations from a forward pass; `acts[0]` is the input.
#[derive(Clone, Debug, Default)]
pub struct MlpCache {
    pub acts: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("non-empty cache")
    }
}

impl MlpLayout {
    pub fn new(sizes: &[usize], offset: usize, tanh_out: bool) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|&s| s > 0), "bad layer sizes {sizes:?}");
        MlpLayout { sizes: sizes.to_vec(), offset, tanh_out }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn end(&self) -> usize {
        self.offset + self.param_count()
    }

    fn layer_is_tanh(&self, l: usize) -> bool {
        l + 2 < self.sizes.len() || self.tanh_out
    }

    /// Scaled uniform init: weights `U(±gain·√(3/fan_in))` (unit gain on
    /// hidden layers, `out_gain` on the last), zero biases.
    pub fn init<R: Rng + ?Sized>(&self, params: &mut [f64], out_gain: f64, rng: &mut R) {
        let mut o = self.offset;
        let n_layers = self.sizes.len() - 1;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let gain = if l + 1 == n_layers { out_gain } else { 1.0 };
            let a = gain * (3.0 / fan_in as f64).sqrt();
            for p in &mut params[o..o + fan_in * fan_out] {
                *p = rng.gen_range(-a..=a);
            }
            o += fan_in * fan_out;
            params[o..o + fan_out].fill(0.0);
            o += fan_out;
        }
    }

    pub fn forward(&self, params: &[f64], x: &[f64]) -> MlpCache {
        debug_assert_eq!(x.len(), self.input_dim());
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(x.to_vec());
        let mut o = self.offset;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &params[o..o + n_in * n_out];
            let bias = &params[o + n_in * n_out..o + n_in * n_out + n_out];
            let input = &acts[l];
            let tanh = self.layer_is_tanh(l);
            let out: Vec<f64> = (0..n_out)
                .map(|j| {
                    let row = &weights[j * n_in..(j + 1) * n_in];
                    let z = bias[j] + dot(row, input);
                    if tanh {
                        z.tanh()
                    } else {
                        z
                    }
                })
                .collect();
            acts.push(out);
            o += n_in * n_out + n_out;
        }
        MlpCache { acts }
    }

    /// Accumulates `∂L/∂θ` into `grad` (same indexing as `params`) and
    /// returns `∂L/∂x`, given `dy = ∂L/∂output`.
    pub fn backward(&self, params: &[f64], cache: &MlpCache, dy: &[f64], grad: &mut [f64]) -> Vec<f64> {
        debug_assert_eq!(dy.len(), self.output_dim());
        let n_layers = self.sizes.len() - 1;
        let mut starts = Vec::with_capacity(n_layers);
        let mut o = self.offset;
        for w in self.sizes.windows(2) {
            starts.push(o);
            o += w[0] * w[1] + w[1];
        }
        let mut delta = dy.to_vec();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            if self.layer_is_tanh(l) {
                for (d, y) in delta.iter_mut().zip(&cache.acts[l + 1]) {
                    *d *= 1.0 - y * y;
                }
            }
            let o = starts[l];
            let input = &cache.acts[l];
            let mut dx = vec![0.0; n_in];
            for j in 0..n_out {
                let dj = delta[j];
                if dj == 0.0 {
                    continue;
                }
                let row = o + j * n_in;
                for i in 0..n_in {
                    grad[row + i] += dj * input[i];
                    dx[i] += dj * params[row + i];
                }
                grad[o + n_in * n_out + j] += dj;
            }
            delta = dx;
        }
        delta
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
