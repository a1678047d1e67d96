//! Fully-connected network with hand-written reverse-mode gradients.
//!
//! Weights are stored row-major (`out_dim x in_dim`) per layer. Hidden layers
//! apply the configured activation; the output layer is always linear.
//! `forward` caches pre- and post-activations so `backward` can accumulate
//! exact parameter gradients; `infer` is the read-only path used during
//! rollouts and deployment. A dedicated double-backward pass provides the
//! parameter gradient of an input-gradient norm, which the discriminator's
//! gradient penalty needs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ParamSet;
use crate::error::{Error, Result};
use crate::rng::normal;

/// Hidden-layer activation. The output layer is always linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Elu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Elu => {
                if z > 0.0 {
                    z
                } else {
                    z.exp() - 1.0
                }
            }
            Activation::Tanh => z.tanh(),
        }
    }

    /// First derivative with respect to the pre-activation.
    #[inline]
    fn grad(self, z: f64) -> f64 {
        match self {
            Activation::Elu => {
                if z > 0.0 {
                    1.0
                } else {
                    z.exp()
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }

    /// Second derivative; the double-backward pass needs it.
    #[inline]
    fn curvature(self, z: f64) -> f64 {
        match self {
            Activation::Elu => {
                if z > 0.0 {
                    0.0
                } else {
                    z.exp()
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                -2.0 * t * (1.0 - t * t)
            }
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Elu => 0,
            Activation::Tanh => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Activation::Elu),
            1 => Ok(Activation::Tanh),
            other => Err(Error::Checkpoint(format!("unknown activation tag {other}"))),
        }
    }
}

/// Cached intermediates from the most recent `forward` call.
struct ForwardCache {
    input: Vec<f64>,
    /// Pre-activations per layer.
    zs: Vec<Vec<f64>>,
    /// Post-activations per layer (last entry equals the network output).
    acts: Vec<Vec<f64>>,
}

/// Multi-layer perceptron with gradient accumulators.
pub struct MlpNet {
    layer_sizes: Vec<usize>,
    activation: Activation,
    /// Row-major `out x in` weight matrix per layer.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    grad_weights: Vec<Vec<f64>>,
    grad_biases: Vec<Vec<f64>>,
    cache: Option<ForwardCache>,
}

impl MlpNet {
    /// Builds a zero-initialized network. `layer_sizes` lists the input width
    /// followed by every layer's output width, so it needs at least two
    /// entries, all nonzero.
    pub fn new(layer_sizes: &[usize], activation: Activation) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "network needs an input and at least one layer, got sizes {layer_sizes:?}"
            )));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidArgument(format!(
                "zero-width layer in {layer_sizes:?}"
            )));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in layer_sizes.windows(2) {
            weights.push(vec![0.0; pair[0] * pair[1]]);
            biases.push(vec![0.0; pair[1]]);
        }
        let grad_weights = weights.iter().map(|w| vec![0.0; w.len()]).collect();
        let grad_biases = biases.iter().map(|b| vec![0.0; b.len()]).collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            activation,
            weights,
            biases,
            grad_weights,
            grad_biases,
            cache: None,
        })
    }

    /// Orthogonal initialization: every hidden layer is scaled by
    /// `hidden_gain`, the final layer by `final_gain`. Biases stay zero.
    pub fn init_orthogonal(&mut self, rng: &mut impl Rng, hidden_gain: f64, final_gain: f64) {
        let last = self.num_layers() - 1;
        for l in 0..self.num_layers() {
            let gain = if l == last { final_gain } else { hidden_gain };
            let rows = self.layer_sizes[l + 1];
            let cols = self.layer_sizes[l];
            let w = orthogonal_matrix(rows, cols, gain, rng);
            self.weights[l] = w;
        }
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Number of weight layers.
    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn weight(&self, layer: usize, row: usize, col: usize) -> f64 {
        self.weights[layer][row * self.layer_sizes[layer] + col]
    }

    pub fn set_weight(&mut self, layer: usize, row: usize, col: usize, value: f64) {
        self.weights[layer][row * self.layer_sizes[layer] + col] = value;
    }

    pub fn bias(&self, layer: usize, row: usize) -> f64 {
        self.biases[layer][row]
    }

    pub fn set_bias(&mut self, layer: usize, row: usize, value: f64) {
        self.biases[layer][row] = value;
    }

    /// All parameters flattened in checkpoint order: per layer, the row-major
    /// weight matrix followed by the bias vector.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in 0..self.num_layers() {
            out.extend_from_slice(&self.weights[l]);
            out.extend_from_slice(&self.biases[l]);
        }
        out
    }

    /// Restores parameters from `flat_params` order.
    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let expected: usize = self
            .weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.len() + b.len())
            .sum();
        if flat.len() != expected {
            return Err(Error::DimensionMismatch {
                context: "set_flat_params",
                expected,
                actual: flat.len(),
            });
        }
        let mut offset = 0;
        for l in 0..self.num_layers() {
            let wl = self.weights[l].len();
            self.weights[l].copy_from_slice(&flat[offset..offset + wl]);
            offset += wl;
            let bl = self.biases[l].len();
            self.biases[l].copy_from_slice(&flat[offset..offset + bl]);
            offset += bl;
        }
        Ok(())
    }

    fn check_input(&self, input: &[f64], context: &'static str) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.input_dim(),
                actual: input.len(),
            });
        }
        Ok(())
    }

    /// Forward pass that caches intermediates for a later `backward`.
    pub fn forward(&mut self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input, "MlpNet::forward")?;
        let num_layers = self.num_layers();
        let mut zs = Vec::with_capacity(num_layers);
        let mut acts = Vec::with_capacity(num_layers);
        let mut current = input;
        for l in 0..num_layers {
            let z = self.affine(l, current);
            let a = if l + 1 == num_layers {
                z.clone()
            } else {
                z.iter().map(|&v| self.activation.apply(v)).collect()
            };
            zs.push(z);
            acts.push(a);
            current = acts.last().unwrap();
        }
        let output = acts.last().unwrap().clone();
        self.cache = Some(ForwardCache {
            input: input.to_vec(),
            zs,
            acts,
        });
        Ok(output)
    }

    /// Read-only forward pass; leaves the training cache untouched.
    pub fn infer(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input, "MlpNet::infer")?;
        let num_layers = self.num_layers();
        let mut current = input.to_vec();
        for l in 0..num_layers {
            let mut z = self.affine(l, &current);
            if l + 1 != num_layers {
                for v in z.iter_mut() {
                    *v = self.activation.apply(*v);
                }
            }
            current = z;
        }
        Ok(current)
    }

    /// `W_l x + b_l`.
    fn affine(&self, layer: usize, x: &[f64]) -> Vec<f64> {
        let in_dim = self.layer_sizes[layer];
        let out_dim = self.layer_sizes[layer + 1];
        let w = &self.weights[layer];
        let b = &self.biases[layer];
        let mut z = Vec::with_capacity(out_dim);
        for (row, &bias) in w.chunks_exact(in_dim).zip(b.iter()) {
            let mut acc = bias;
            for (wi, xi) in row.iter().zip(x.iter()) {
                acc += wi * xi;
            }
            z.push(acc);
        }
        z
    }

    /// Post-activation output of hidden layer `layer` (1-based: layer 1 is
    /// the first hidden layer) from the cached forward pass.
    pub fn hidden_activation(&self, layer: usize) -> Result<&[f64]> {
        let cache = self.cache.as_ref().ok_or(Error::BackwardBeforeForward)?;
        if layer == 0 || layer >= self.num_layers() {
            return Err(Error::InvalidArgument(format!(
                "hidden layer index {layer} outside 1..={}",
                self.num_layers() - 1
            )));
        }
        Ok(&cache.acts[layer - 1])
    }

    /// Accumulates parameter gradients for the cached forward pass given the
    /// loss gradient with respect to the network output, and returns the loss
    /// gradient with respect to the input. Accumulators are not cleared, so
    /// successive calls sum their contributions.
    pub fn backward(&mut self, out_grad: &[f64]) -> Result<Vec<f64>> {
        if out_grad.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                context: "MlpNet::backward",
                expected: self.output_dim(),
                actual: out_grad.len(),
            });
        }
        self.backward_through(self.num_layers(), out_grad, true)
    }

    /// Like `backward`, but starts from the gradient with respect to the
    /// post-activation output of hidden layer `layer` (1-based). Lets a
    /// second head that consumes an intermediate activation push its loss
    /// back through the shared trunk.
    pub fn backward_from_hidden(&mut self, layer: usize, grad: &[f64]) -> Result<Vec<f64>> {
        if layer == 0 || layer >= self.num_layers() {
            return Err(Error::InvalidArgument(format!(
                "hidden layer index {layer} outside 1..={}",
                self.num_layers() - 1
            )));
        }
        if grad.len() != self.layer_sizes[layer] {
            return Err(Error::DimensionMismatch {
                context: "MlpNet::backward_from_hidden",
                expected: self.layer_sizes[layer],
                actual: grad.len(),
            });
        }
        self.backward_through(layer, grad, false)
    }

    /// Shared reverse sweep over layers `top..1`. When `top_is_output` the
    /// seed gradient applies to the linear output, otherwise to the
    /// activated output of hidden layer `top`.
    fn backward_through(
        &mut self,
        top: usize,
        seed: &[f64],
        top_is_output: bool,
    ) -> Result<Vec<f64>> {
        let cache = self.cache.as_ref().ok_or(Error::BackwardBeforeForward)?;
        let mut d_act = seed.to_vec();
        for l in (0..top).rev() {
            let apply_activation = !(top_is_output && l + 1 == self.num_layers());
            // Gradient w.r.t. this layer's pre-activation.
            let dz: Vec<f64> = if apply_activation {
                cache.zs[l]
                    .iter()
                    .zip(d_act.iter())
                    .map(|(&z, &da)| da * self.activation.grad(z))
                    .collect()
            } else {
                d_act.clone()
            };
            let prev: &[f64] = if l == 0 {
                &cache.input
            } else {
                &cache.acts[l - 1]
            };
            let in_dim = self.layer_sizes[l];
            let gw = &mut self.grad_weights[l];
            for (o, row) in gw.chunks_exact_mut(in_dim).enumerate() {
                let d = dz[o];
                for (g, &p) in row.iter_mut().zip(prev.iter()) {
                    *g += d * p;
                }
            }
            for (g, &d) in self.grad_biases[l].iter_mut().zip(dz.iter()) {
                *g += d;
            }
            let mut d_prev = vec![0.0; in_dim];
            let w = &self.weights[l];
            for (o, row) in w.chunks_exact(in_dim).enumerate() {
                let d = dz[o];
                for (dp, &wi) in d_prev.iter_mut().zip(row.iter()) {
                    *dp += d * wi;
                }
            }
            d_act = d_prev;
        }
        Ok(d_act)
    }

    /// Output value and gradient of a scalar-output network with respect to
    /// the input, without touching the training cache or accumulators.
    pub fn input_gradient(&self, input: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_input(input, "MlpNet::input_gradient")?;
        if self.output_dim() != 1 {
            return Err(Error::DimensionMismatch {
                context: "MlpNet::input_gradient output",
                expected: 1,
                actual: self.output_dim(),
            });
        }
        let (zs, acts) = self.raw_forward(input);
        let num_layers = self.num_layers();
        let mut d_act = vec![1.0];
        for l in (0..num_layers).rev() {
            let dz: Vec<f64> = if l + 1 == num_layers {
                d_act.clone()
            } else {
                zs[l]
                    .iter()
                    .zip(d_act.iter())
                    .map(|(&z, &da)| da * self.activation.grad(z))
                    .collect()
            };
            let in_dim = self.layer_sizes[l];
            let mut d_prev = vec![0.0; in_dim];
            for (o, row) in self.weights[l].chunks_exact(in_dim).enumerate() {
                for (dp, &wi) in d_prev.iter_mut().zip(row.iter()) {
                    *dp += dz[o] * wi;
                }
            }
            d_act = d_prev;
        }
        Ok((acts[num_layers - 1][0], d_act))
    }

    /// Squared L2 norm of the input gradient of a scalar-output network, with
    /// `scale` times its parameter gradient added to the accumulators.
    ///
    /// Writing `g = dD/dx`, the penalty is `P = |g|^2` and its parameter
    /// gradient is obtained by differentiating `psi = c . g` with `c = 2g`
    /// held constant. `psi` equals the directional derivative of the output
    /// along `c`, so one forward tangent pass computes it and one reverse
    /// sweep over the combined primal/tangent graph yields `dP/dtheta`
    /// exactly — no finite differences involved.
    pub fn grad_penalty_accumulate(&mut self, input: &[f64], scale: f64) -> Result<f64> {
        self.check_input(input, "MlpNet::grad_penalty_accumulate")?;
        if self.output_dim() != 1 {
            return Err(Error::DimensionMismatch {
                context: "MlpNet::grad_penalty_accumulate output",
                expected: 1,
                actual: self.output_dim(),
            });
        }
        let num_layers = self.num_layers();
        let (zs, acts) = self.raw_forward(input);

        // First reverse pass: g = dD/dx.
        let mut d_act = vec![1.0];
        for l in (0..num_layers).rev() {
            let dz: Vec<f64> = if l + 1 == num_layers {
                d_act.clone()
            } else {
                zs[l]
                    .iter()
                    .zip(d_act.iter())
                    .map(|(&z, &da)| da * self.activation.grad(z))
                    .collect()
            };
            let in_dim = self.layer_sizes[l];
            let mut d_prev = vec![0.0; in_dim];
            for (o, row) in self.weights[l].chunks_exact(in_dim).enumerate() {
                for (dp, &wi) in d_prev.iter_mut().zip(row.iter()) {
                    *dp += dz[o] * wi;
                }
            }
            d_act = d_prev;
        }
        let g = d_act;
        let penalty: f64 = g.iter().map(|v| v * v).sum();

        // Tangent pass along c = 2g: adot_0 = c, zdot_l = W_l adot_{l-1},
        // adot_l = act'(z_l) * zdot_l (output layer linear).
        let c: Vec<f64> = g.iter().map(|v| 2.0 * v).collect();
        let mut zdots: Vec<Vec<f64>> = Vec::with_capacity(num_layers);
        let mut adots: Vec<Vec<f64>> = Vec::with_capacity(num_layers);
        for l in 0..num_layers {
            let in_dim = self.layer_sizes[l];
            let out_dim = self.layer_sizes[l + 1];
            let adot_prev: &[f64] = if l == 0 { &c } else { &adots[l - 1] };
            let mut zdot = vec![0.0; out_dim];
            for (o, row) in self.weights[l].chunks_exact(in_dim).enumerate() {
                let mut acc = 0.0;
                for (&wi, &ad) in row.iter().zip(adot_prev.iter()) {
                    acc += wi * ad;
                }
                zdot[o] = acc;
            }
            let adot: Vec<f64> = if l + 1 == num_layers {
                zdot.clone()
            } else {
                zs[l]
                    .iter()
                    .zip(zdot.iter())
                    .map(|(&z, &zd)| self.activation.grad(z) * zd)
                    .collect()
            };
            zdots.push(zdot);
            adots.push(adot);
        }

        // Reverse sweep over the combined graph with two adjoint streams:
        // p = dpsi/dadot, q = dpsi/da. Seeds: p_L = 1, q_L = 0.
        let mut p = vec![1.0];
        let mut q = vec![0.0];
        for l in (0..num_layers).rev() {
            let in_dim = self.layer_sizes[l];
            let last = l + 1 == num_layers;
            // r = dpsi/dzdot, t = dpsi/dz.
            let (r, t): (Vec<f64>, Vec<f64>) = if last {
                (p.clone(), vec![0.0; p.len()])
            } else {
                let mut r = vec![0.0; p.len()];
                let mut t = vec![0.0; p.len()];
                for o in 0..p.len() {
                    let z = zs[l][o];
                    let d1 = self.activation.grad(z);
                    let d2 = self.activation.curvature(z);
                    r[o] = p[o] * d1;
                    t[o] = q[o] * d1 + p[o] * zdots[l][o] * d2;
                }
                (r, t)
            };
            let prev_act: &[f64] = if l == 0 { input } else { &acts[l - 1] };
            let prev_adot: &[f64] = if l == 0 { &c } else { &adots[l - 1] };
            let gw = &mut self.grad_weights[l];
            for (o, row) in gw.chunks_exact_mut(in_dim).enumerate() {
                let (ro, to) = (r[o], t[o]);
                for (i, gv) in row.iter_mut().enumerate() {
                    *gv += scale * (ro * prev_adot[i] + to * prev_act[i]);
                }
            }
            for (gb, &tv) in self.grad_biases[l].iter_mut().zip(t.iter()) {
                *gb += scale * tv;
            }
            if l > 0 {
                let mut p_prev = vec![0.0; in_dim];
                let mut q_prev = vec![0.0; in_dim];
                for (o, row) in self.weights[l].chunks_exact(in_dim).enumerate() {
                    let (ro, to) = (r[o], t[o]);
                    for i in 0..in_dim {
                        p_prev[i] += ro * row[i];
                        q_prev[i] += to * row[i];
                    }
                }
                p = p_prev;
                q = q_prev;
            }
        }
        Ok(penalty)
    }

    /// Squared L2 norm over weight matrices only (biases exempt), with
    /// `scale` times its gradient (`2 W`) added to the accumulators.
    pub fn weight_decay_accumulate(&mut self, scale: f64) -> f64 {
        let mut sum_sq = 0.0;
        for (w, gw) in self.weights.iter().zip(self.grad_weights.iter_mut()) {
            for (wv, gv) in w.iter().zip(gw.iter_mut()) {
                sum_sq += wv * wv;
                *gv += scale * 2.0 * wv;
            }
        }
        sum_sq
    }

    /// Plain forward returning all intermediates without storing them.
    fn raw_forward(&self, input: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let num_layers = self.num_layers();
        let mut zs = Vec::with_capacity(num_layers);
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(num_layers);
        for l in 0..num_layers {
            let prev: &[f64] = if l == 0 { input } else { &acts[l - 1] };
            let z = self.affine(l, prev);
            let a = if l + 1 == num_layers {
                z.clone()
            } else {
                z.iter().map(|&v| self.activation.apply(v)).collect()
            };
            zs.push(z);
            acts.push(a);
        }
        (zs, acts)
    }
}

impl ParamSet for MlpNet {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &mut [f64])) {
        for l in 0..self.weights.len() {
            f(&mut self.weights[l], &mut self.grad_weights[l]);
            f(&mut self.biases[l], &mut self.grad_biases[l]);
        }
    }
}

/// Random `rows x cols` matrix with orthonormal rows (or columns when
/// `rows > cols`), scaled by `gain`. Built from a Gaussian draw followed by
/// modified Gram-Schmidt.
fn orthogonal_matrix(rows: usize, cols: usize, gain: f64, rng: &mut impl Rng) -> Vec<f64> {
    // Orthonormalize along the shorter side: vectors of length `long`.
    let (short, long) = if rows <= cols { (rows, cols) } else { (cols, rows) };
    let mut vectors: Vec<Vec<f64>> = (0..short)
        .map(|_| (0..long).map(|_| normal(rng)).collect())
        .collect();
    for i in 0..short {
        for j in 0..i {
            // Earlier vectors are already unit norm, so the projection
            // coefficient is just the dot product.
            let dot: f64 = vectors[i]
                .iter()
                .zip(vectors[j].iter())
                .map(|(a, b)| a * b)
                .sum();
            let vj = vectors[j].clone();
            for (vi, &vjv) in vectors[i].iter_mut().zip(vj.iter()) {
                *vi -= dot * vjv;
            }
        }
        let norm: f64 = vectors[i].iter().map(|v| v * v).sum::<f64>().sqrt();
        // A Gaussian draw is almost surely full rank; the guard keeps a
        // degenerate draw finite rather than propagating a division by zero.
        let inv = if norm > 1e-12 { 1.0 / norm } else { 0.0 };
        for v in vectors[i].iter_mut() {
            *v *= inv;
        }
    }
    let mut w = vec![0.0; rows * cols];
    if rows <= cols {
        for (r, vec_r) in vectors.iter().enumerate() {
            for (out, &v) in w[r * cols..(r + 1) * cols].iter_mut().zip(vec_r.iter()) {
                *out = gain * v;
            }
        }
    } else {
        for (c, vec_c) in vectors.iter().enumerate() {
            for r in 0..rows {
                w[r * cols + c] = gain * vec_c[r];
            }
        }
    }
    w
}
