//! Fully connected networks with LeakyReLU hidden layers and a linear output,
//! with a hand-written backward pass.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// Shape (out, in).
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            w: Array2::zeros((outputs, inputs)),
            b: Array1::zeros(outputs),
        }
    }

    /// Orthogonal weights scaled by `gain`, zero bias.
    pub fn orthogonal(inputs: usize, outputs: usize, gain: f64, rng: &mut ChaCha8Rng) -> Self {
        let (rows, cols) = (outputs.max(inputs), outputs.min(inputs));
        let g = DMatrix::<f64>::from_fn(rows, cols, |_, _| rng.sample(StandardNormal));
        let qr = g.qr();
        let mut q = qr.q();
        // Sign fix so the distribution is uniform over orthogonal matrices.
        let r = qr.r();
        for j in 0..cols {
            if r[(j, j)] < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        let w = Array2::from_shape_fn((outputs, inputs), |(o, i)| {
            gain * if outputs >= inputs { q[(o, i)] } else { q[(i, o)] }
        });
        Self {
            w,
            b: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.w.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub slope: f64,
}

/// Per-layer inputs and pre-activations from a batched forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrad {
    pub layers: Vec<Linear>,
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

impl Mlp {
    pub fn zeros(sizes: &[usize], slope: f64) -> Self {
        Self {
            layers: sizes.windows(2).map(|p| Linear::zeros(p[0], p[1])).collect(),
            slope,
        }
    }

    /// Orthogonal init with gain √2 on hidden layers and `output_gain` on the last.
    pub fn new(sizes: &[usize], slope: f64, output_gain: f64, rng: &mut ChaCha8Rng) -> Self {
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let gain = if i + 1 == n { output_gain } else { 2f64.sqrt() };
                Linear::orthogonal(sizes[i], sizes[i + 1], gain, rng)
            })
            .collect();
        Self { layers, slope }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs()];
        s.extend(self.layers.iter().map(Linear::outputs));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Linear::outputs)
    }

    /// Single-sample forward pass.
    pub fn forward_one(&self, x: &[f64]) -> Vec<f64> {
        let mut h = Array1::from(x.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.w.dot(&h) + &layer.b;
            if i < last {
                h.mapv_inplace(|v| leaky(v, self.slope));
            }
        }
        h.to_vec()
    }

    /// Batched forward pass; rows are samples.
    pub fn forward(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: &ArrayView2<f64>) -> (Array2<f64>, MlpCache) {
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = h.dot(&layer.w.t()) + &layer.b;
            cache.inputs.push(h);
            h = if i < last { z.mapv(|v| leaky(v, self.slope)) } else { z.clone() };
            cache.pre.push(z);
        }
        (h, cache)
    }

    /// Gradients of a scalar loss given ∂loss/∂output for every sample.
    pub fn backward(&self, cache: &MlpCache, d_out: &Array2<f64>) -> MlpGrad {
        let mut grads: Vec<Linear> = Vec::with_capacity(self.layers.len());
        let mut delta = d_out.clone();
        let last = self.layers.len() - 1;
        for i in (0..self.layers.len()).rev() {
            if i < last {
                let slope = self.slope;
                delta.zip_mut_with(&cache.pre[i], |d, z| {
                    if *z <= 0.0 {
                        *d *= slope;
                    }
                });
            }
            let w = delta.t().dot(&cache.inputs[i]);
            let b = delta.sum_axis(Axis(0));
            if i > 0 {
                delta = delta.dot(&self.layers[i].w);
            }
            grads.push(Linear { w, b });
        }
        grads.reverse();
        MlpGrad { layers: grads }
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn append_params(&self, out: &mut Vec<f64>) {
        append_layers(&self.layers, out);
    }

    /// Reads parameters in [`append_params`](Self::append_params) order; returns the count used.
    pub fn load_params(&mut self, src: &[f64]) -> usize {
        let mut k = 0;
        for l in &mut self.layers {
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                *v = src[k];
                k += 1;
            }
        }
        k
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }
}

impl MlpGrad {
    pub fn append_params(&self, out: &mut Vec<f64>) {
        append_layers(&self.layers, out);
    }
}

fn append_layers(layers: &[Linear], out: &mut Vec<f64>) {
    for l in layers {
        out.extend(l.w.iter());
        out.extend(l.b.iter());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;

    #[test]
    fn zero_network_outputs_zero() {
        let m = Mlp::zeros(&[5, 4, 4, 2], 0.01);
        assert_eq!(m.forward_one(&[1.0, -2.0, 3.0, 0.5, 9.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn hand_evaluated_probe() {
        // 1 → 1 → 1 → 1 chain: w = (2, -3, 0.5), b = (0.1, 0.2, -0.4).
        let mut m = Mlp::zeros(&[1, 1, 1, 1], 0.01);
        for (l, (w, b)) in m.layers.iter_mut().zip([(2.0, 0.1), (-3.0, 0.2), (0.5, -0.4)]) {
            l.w[(0, 0)] = w;
            l.b[0] = b;
        }
        let x: f64 = 0.7;
        let h1 = 2.0 * x + 0.1; // 1.5, positive
        let z2: f64 = -3.0 * h1 + 0.2; // -4.3, negative branch
        let h2 = 0.01 * z2;
        let y = 0.5 * h2 - 0.4;
        assert!((m.forward_one(&[x])[0] - y).abs() < 1e-15);
    }

    #[test]
    fn batched_matches_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = Mlp::new(&[3, 8, 8, 2], 0.01, 1.0, &mut rng);
        let x = array![[0.1, -0.4, 2.0], [1.0, 0.0, -1.0]];
        let y = m.forward(&x.view());
        for r in 0..2 {
            let single = m.forward_one(&x.row(r).to_vec());
            for c in 0..2 {
                assert!((y[(r, c)] - single[c]).abs() < 1e-12);
            }
        }
        assert_eq!(m.forward(&x.view()), y);
    }

    #[test]
    fn orthogonal_rows_or_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (i, o) in [(6, 4), (4, 6), (5, 5)] {
            let l = Linear::orthogonal(i, o, 1.0, &mut rng);
            let g = if o <= i { l.w.dot(&l.w.t()) } else { l.w.t().dot(&l.w) };
            let n = g.nrows();
            for a in 0..n {
                for b in 0..n {
                    let want = if a == b { 1.0 } else { 0.0 };
                    assert!((g[(a, b)] - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut m = Mlp::new(&[4, 6, 5, 3], 0.1, 1.0, &mut rng);
        for l in &mut m.layers {
            l.b.mapv_inplace(|_| rng.random_range(-0.3..0.3));
        }
        let x = Array2::from_shape_fn((7, 4), |_| rng.random_range(-1.0..1.0));
        let c = Array2::from_shape_fn((7, 3), |_| rng.random_range(-1.0..1.0));
        // loss = Σ c ⊙ y
        let loss = |m: &Mlp| (m.forward(&x.view()) * &c).sum();
        let (_, cache) = m.forward_cached(&x.view());
        let grad = m.backward(&cache, &c);
        let mut analytic = Vec::new();
        grad.append_params(&mut analytic);
        let mut params = Vec::new();
        m.append_params(&mut params);
        for k in 0..params.len() {
            let h = 1e-6;
            let mut p = params.clone();
            p[k] += h;
            m.load_params(&p);
            let up = loss(&m);
            p[k] -= 2.0 * h;
            m.load_params(&p);
            let down = loss(&m);
            let fd = (up - down) / (2.0 * h);
            assert!((fd - analytic[k]).abs() < 1e-7, "param {k}: {fd} vs {}", analytic[k]);
        }
    }
}
