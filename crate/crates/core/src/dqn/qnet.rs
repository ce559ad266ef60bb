//! Dueling Q-network with explicit forward and backward passes.
//!
//! All parameters live in one flat vector. Layer `i` stores its weight
//! matrix row-major as `in × out` followed by its `out` biases, so the
//! forward pass is `y = x·W + b` on a batch of row vectors.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Layer widths of a dueling network.
///
/// `value` and `advantage` list the hidden widths of each stream; the value
/// stream ends in one output and the advantage stream in `actions` outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QNetShape {
    pub input: usize,
    pub trunk: Vec<usize>,
    pub value: Vec<usize>,
    pub advantage: Vec<usize>,
    pub actions: usize,
}

impl QNetShape {
    /// Input `5·e_nei`, trunk 3×300, each stream 300 → 150 → output.
    pub fn standard(e_nei: usize) -> Self {
        Self {
            input: 5 * e_nei,
            trunk: vec![300, 300, 300],
            value: vec![300, 150],
            advantage: vec![300, 150],
            actions: e_nei,
        }
    }

    /// `(in, out)` of every dense layer: trunk, then value stream, then advantage stream.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::new();
        let mut width = self.input;
        for &w in &self.trunk {
            dims.push((width, w));
            width = w;
        }
        let trunk_out = width;
        for (hidden, out) in [(&self.value, 1), (&self.advantage, self.actions)] {
            let mut width = trunk_out;
            for &w in hidden.iter() {
                dims.push((width, w));
                width = w;
            }
            dims.push((width, out));
        }
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|&(i, o)| i * o + o).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layer {
    inp: usize,
    out: usize,
    offset: usize,
}

impl Layer {
    fn weights(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.inp * self.out
    }

    fn bias(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.inp * self.out;
        start..start + self.out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QNet {
    shape: QNetShape,
    layers: Vec<Layer>,
    params: Vec<f64>,
}

/// Intermediate results of a forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct Forward {
    pub q: Array2<f64>,
    pub value: Array1<f64>,
    pub advantage: Array2<f64>,
    /// Input matrix of every layer, in layer order.
    inputs: Vec<Array2<f64>>,
}

impl QNet {
    /// Weights and biases drawn from `U(−1/√in, 1/√in)`.
    pub fn new<R: Rng>(shape: QNetShape, rng: &mut R) -> Self {
        let mut net = Self::zeros(shape);
        for layer in net.layers.clone() {
            let bound = 1.0 / (layer.inp as f64).sqrt();
            for p in &mut net.params[layer.offset..layer.bias().end] {
                *p = rng.random_range(-bound..bound);
            }
        }
        net
    }

    pub fn zeros(shape: QNetShape) -> Self {
        let mut layers = Vec::new();
        let mut offset = 0;
        for (inp, out) in shape.layer_dims() {
            layers.push(Layer { inp, out, offset });
            offset += inp * out + out;
        }
        Self { shape, layers, params: vec![0.0; offset] }
    }

    pub fn from_params(shape: QNetShape, params: Vec<f64>) -> Option<Self> {
        let mut net = Self::zeros(shape);
        if params.len() != net.params.len() {
            return None;
        }
        net.params = params;
        Some(net)
    }

    pub fn shape(&self) -> &QNetShape {
        &self.shape
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Range of the flat parameter vector holding layer `i`'s weights and biases.
    pub fn layer_range(&self, i: usize) -> std::ops::Range<usize> {
        self.layers[i].offset..self.layers[i].bias().end
    }

    fn n_trunk(&self) -> usize {
        self.shape.trunk.len()
    }

    fn n_value(&self) -> usize {
        self.shape.value.len() + 1
    }

    /// Index of the first advantage-stream layer.
    pub fn advantage_start(&self) -> usize {
        self.n_trunk() + self.n_value()
    }

    fn weight_view(&self, i: usize) -> ArrayView2<'_, f64> {
        let l = self.layers[i];
        ArrayView2::from_shape((l.inp, l.out), &self.params[l.weights()]).expect("layer layout")
    }

    fn dense(&self, i: usize, x: &Array2<f64>, relu: bool) -> Array2<f64> {
        let l = self.layers[i];
        let mut y = Array2::zeros((x.nrows(), l.out));
        general_mat_mul(1.0, x, &self.weight_view(i), 0.0, &mut y);
        let b = &self.params[l.bias()];
        for mut row in y.rows_mut() {
            for (v, &bi) in row.iter_mut().zip(b) {
                *v += bi;
                if relu && *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        y
    }

    /// Q-values for a batch of feature rows.
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Forward {
        assert_eq!(x.ncols(), self.shape.input, "input width");
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for i in 0..self.n_trunk() {
            let next = self.dense(i, &h, true);
            inputs.push(std::mem::replace(&mut h, next));
        }
        let stream = |first: usize, count: usize, inputs: &mut Vec<Array2<f64>>| {
            let mut s = h.clone();
            for k in 0..count {
                let next = self.dense(first + k, &s, k + 1 < count);
                inputs.push(std::mem::replace(&mut s, next));
            }
            s
        };
        let value = stream(self.n_trunk(), self.n_value(), &mut inputs).column(0).to_owned();
        let advantage = stream(self.advantage_start(), self.shape.advantage.len() + 1, &mut inputs);
        let mean = advantage.mean_axis(Axis(1)).expect("at least one action");
        let mut q = advantage.clone();
        for ((mut row, &v), &m) in q.rows_mut().into_iter().zip(&value).zip(&mean) {
            row.mapv_inplace(|a| v + a - m);
        }
        Forward { q, value, advantage, inputs }
    }

    pub fn q_values(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        self.forward(x).q
    }

    /// Backpropagates `dq = ∂L/∂Q` and returns `∂L/∂θ` in parameter layout.
    pub fn backward(&self, fwd: &Forward, dq: ArrayView2<'_, f64>) -> Vec<f64> {
        let mut grad = vec![0.0; self.params.len()];
        let actions = self.shape.actions as f64;
        let dv = dq.sum_axis(Axis(1)).insert_axis(Axis(1));
        let mut da = dq.to_owned();
        for (mut row, s) in da.rows_mut().into_iter().zip(dv.iter()) {
            let mean = s / actions;
            row.mapv_inplace(|g| g - mean);
        }
        let has_trunk = self.n_trunk() > 0;
        let d_trunk_v = self.backward_stream(fwd, self.n_trunk(), self.n_value(), dv, has_trunk, &mut grad);
        let d_trunk_a =
            self.backward_stream(fwd, self.advantage_start(), self.shape.advantage.len() + 1, da, has_trunk, &mut grad);
        if has_trunk {
            let d = d_trunk_v.expect("trunk gradient") + d_trunk_a.expect("trunk gradient");
            self.backward_stream(fwd, 0, self.n_trunk(), d, false, &mut grad);
        }
        grad
    }

    /// Runs layers `first..first+count` backwards. Returns the gradient with
    /// respect to the stream's input if `need_input` is set.
    fn backward_stream(
        &self,
        fwd: &Forward,
        first: usize,
        count: usize,
        mut d_out: Array2<f64>,
        need_input: bool,
        grad: &mut [f64],
    ) -> Option<Array2<f64>> {
        for i in (first..first + count).rev() {
            let l = self.layers[i];
            let x = &fwd.inputs[i];
            {
                let mut gw = ArrayViewMut2::from_shape((l.inp, l.out), &mut grad[l.weights()]).expect("layer layout");
                general_mat_mul(1.0, &x.t(), &d_out, 1.0, &mut gw);
            }
            for (g, s) in grad[l.bias()].iter_mut().zip(d_out.sum_axis(Axis(0))) {
                *g += s;
            }
            if i == first && !need_input {
                return None;
            }
            let mut dx = Array2::zeros((x.nrows(), l.inp));
            general_mat_mul(1.0, &d_out, &self.weight_view(i).t(), 0.0, &mut dx);
            // every layer input except the raw features is a rectifier output
            if i > 0 {
                ndarray::Zip::from(&mut dx).and(x).for_each(|d, &xv| {
                    if xv <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            d_out = dx;
        }
        Some(d_out)
    }

    /// Mean squared error of `Q(s_b)[a_b]` against `targets`, and its gradient.
    /// Only the taken action of each row contributes.
    pub fn loss_and_grad(&self, x: ArrayView2<'_, f64>, actions: &[usize], targets: &[f64]) -> (f64, Vec<f64>) {
        let fwd = self.forward(x);
        let n = actions.len() as f64;
        let mut dq = Array2::zeros(fwd.q.dim());
        let mut loss = 0.0;
        for (b, (&a, &y)) in actions.iter().zip(targets).enumerate() {
            let err = fwd.q[[b, a]] - y;
            loss += err * err;
            dq[[b, a]] = 2.0 * err / n;
        }
        let grad = self.backward(&fwd, dq.view());
        (loss / n, grad)
    }

    pub fn loss(&self, x: ArrayView2<'_, f64>, actions: &[usize], targets: &[f64]) -> f64 {
        let q = self.q_values(x);
        let n = actions.len() as f64;
        actions.iter().zip(targets).enumerate().map(|(b, (&a, &y))| (q[[b, a]] - y).powi(2)).sum::<f64>() / n
    }
}

/// Adam optimizer state over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), grad.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, &g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}
