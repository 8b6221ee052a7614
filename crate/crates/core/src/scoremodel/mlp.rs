use alloc::vec::Vec;

/// Tanh feed-forward stack with a linear scalar output, stored as a slice
/// of a larger flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Mlp {
    pub offset: usize,
    /// `[input, hidden..., 1]`
    pub sizes: Vec<usize>,
}

pub(crate) struct Trace {
    /// `acts[0]` is the input, `acts[l]` the post-tanh activations of hidden
    /// layer `l`; the output is stored separately.
    acts: Vec<Vec<f64>>,
    pub output: f64,
}

impl Mlp {
    pub fn new(offset: usize, sizes: Vec<usize>) -> Self {
        Self { offset, sizes }
    }

    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// `(weight_offset, bias_offset, fan_in, fan_out)` per layer.
    pub fn layers(&self) -> impl Iterator<Item = (usize, usize, usize, usize)> + '_ {
        let mut off = self.offset;
        self.sizes.windows(2).map(move |w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let wo = off;
            let bo = off + fan_in * fan_out;
            off = bo + fan_out;
            (wo, bo, fan_in, fan_out)
        })
    }

    pub fn forward(&self, params: &[f64], input: &[f64]) -> Trace {
        let n_layers = self.sizes.len() - 1;
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
        acts.push(input.to_vec());
        let mut output = 0.0;
        for (l, (wo, bo, fan_in, fan_out)) in self.layers().enumerate() {
            let prev = &acts[l];
            let mut next = Vec::with_capacity(fan_out);
            for j in 0..fan_out {
                let row = &params[wo + j * fan_in..wo + (j + 1) * fan_in];
                let z: f64 = params[bo + j] + row.iter().zip(prev).map(|(w, a)| w * a).sum::<f64>();
                next.push(z);
            }
            if l + 1 == n_layers {
                output = next[0];
            } else {
                for z in &mut next {
                    *z = libm::tanh(*z);
                }
                acts.push(next);
            }
        }
        Trace { acts, output }
    }

    /// Accumulates `d_output * d(output)/d(params)` into `grad`.
    pub fn backward(&self, params: &[f64], trace: &Trace, d_output: f64, grad: &mut [f64]) {
        if d_output == 0.0 {
            return;
        }
        let layers: Vec<_> = self.layers().collect();
        let mut delta: Vec<f64> = alloc::vec![d_output];
        for (l, &(wo, bo, fan_in, fan_out)) in layers.iter().enumerate().rev() {
            let prev = &trace.acts[l];
            for j in 0..fan_out {
                let dj = delta[j];
                grad[bo + j] += dj;
                let row = &mut grad[wo + j * fan_in..wo + (j + 1) * fan_in];
                for (g, a) in row.iter_mut().zip(prev) {
                    *g += dj * a;
                }
            }
            if l == 0 {
                break;
            }
            let mut back = alloc::vec![0.0; fan_in];
            for j in 0..fan_out {
                let dj = delta[j];
                let row = &params[wo + j * fan_in..wo + (j + 1) * fan_in];
                for (b, w) in back.iter_mut().zip(row) {
                    *b += dj * w;
                }
            }
            for (b, a) in back.iter_mut().zip(prev) {
                *b *= 1.0 - a * a;
            }
            delta = back;
        }
    }
}
