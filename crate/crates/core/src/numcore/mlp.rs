//! Fully-connected ReLU networks with hand-written reverse mode.
//!
//! Hidden layers apply ReLU; the output layer is linear. The ReLU derivative
//! at exactly zero is taken to be 0.
//!
//! Parameters can be viewed as one flat vector, laid out layer by layer as
//! the row-major weight matrix followed by the bias vector. Gradients use the
//! same layout, so optimizers and gradient checkers work on plain slices.

use super::rng::{fill_standard_normal, seeded};
use super::tensor::Tensor2;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layer_sizes: Vec<usize>,
    /// `weights[k]` is `layer_sizes[k + 1] x layer_sizes[k]`.
    weights: Vec<Tensor2>,
    biases: Vec<Vec<f64>>,
    activation: Activation,
}

/// Activations retained by [`MlpParams::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to every layer: `inputs[0]` is the batch itself.
    inputs: Vec<Tensor2>,
    /// Pre-activation output of every layer.
    pre: Vec<Tensor2>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.inputs[0].rows()
    }

    pub fn pre_activations(&self) -> &[Tensor2] {
        &self.pre
    }
}

/// Gradient with the same flat layout as [`MlpParams::to_flat`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    layer_sizes: Vec<usize>,
    flat: Vec<f64>,
}

fn layer_offsets(sizes: &[usize]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(sizes.len());
    let mut acc = 0;
    offsets.push(0);
    for w in sizes.windows(2) {
        acc += w[1] * w[0] + w[1];
        offsets.push(acc);
    }
    offsets
}

impl MlpGrads {
    pub fn zeros(layer_sizes: &[usize]) -> Self {
        let n = *layer_offsets(layer_sizes).last().unwrap_or(&0);
        Self {
            layer_sizes: layer_sizes.to_vec(),
            flat: vec![0.0; n],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.flat
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.flat
    }

    pub fn weight(&self, layer: usize) -> &[f64] {
        let off = layer_offsets(&self.layer_sizes)[layer];
        let n = self.layer_sizes[layer + 1] * self.layer_sizes[layer];
        &self.flat[off..off + n]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        let off = layer_offsets(&self.layer_sizes)[layer];
        let n = self.layer_sizes[layer + 1] * self.layer_sizes[layer];
        &self.flat[off + n..off + n + self.layer_sizes[layer + 1]]
    }

    pub fn scale(&mut self, s: f64) {
        self.flat.iter_mut().for_each(|g| *g *= s);
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.flat.iter_mut().zip(&other.flat) {
            *a += b;
        }
    }
}

fn validate_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "an MLP needs at least two layer sizes, got {layer_sizes:?}"
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "layer sizes must be positive, got {layer_sizes:?}"
        )));
    }
    Ok(())
}

impl MlpParams {
    /// He-initialized weights (std `sqrt(2 / fan_in)`) and zero biases.
    pub fn init(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let mut rng = seeded(seed);
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let std = (2.0 / fan_in as f64).sqrt();
            let mut data = vec![0.0; fan_in * fan_out];
            fill_standard_normal(&mut rng, &mut data);
            data.iter_mut().for_each(|v| *v *= std);
            weights.push(Tensor2::new(fan_out, fan_in, data)?);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            activation: Activation::Relu,
        })
    }

    /// Network with every weight and bias set to zero.
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let weights = layer_sizes.windows(2).map(|w| Tensor2::zeros(w[1], w[0])).collect();
        let biases = layer_sizes[1..].iter().map(|&n| vec![0.0; n]).collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            activation: Activation::Relu,
        })
    }

    pub fn from_parts(weights: Vec<Tensor2>, biases: Vec<Vec<f64>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::InvalidArgument(format!(
                "{} weight matrices but {} bias vectors",
                weights.len(),
                biases.len()
            )));
        }
        let mut sizes = vec![weights[0].cols()];
        for (k, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.cols() != *sizes.last().unwrap() {
                return Err(Error::shape(
                    format!("layer {k} input width {}", sizes.last().unwrap()),
                    w.cols(),
                ));
            }
            if b.len() != w.rows() {
                return Err(Error::shape(format!("bias {k} length {}", w.rows()), b.len()));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("bias {k}")));
            }
            sizes.push(w.rows());
        }
        validate_sizes(&sizes)?;
        Ok(Self {
            layer_sizes: sizes,
            weights,
            biases,
            activation: Activation::Relu,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[Tensor2] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut Tensor2 {
        &mut self.weights[layer]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.biases[layer]
    }

    pub fn param_count(&self) -> usize {
        *layer_offsets(&self.layer_sizes).last().unwrap()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::shape(format!("{} parameters", self.param_count()), flat.len()));
        }
        let mut off = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let n = w.data().len();
            w.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
            let nb = b.len();
            b.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    pub fn forward(&self, batch: &Tensor2) -> Result<(Tensor2, ForwardCache)> {
        if batch.cols() != self.input_dim() {
            return Err(Error::shape(
                format!("batch with {} columns", self.input_dim()),
                batch.cols(),
            ));
        }
        let last = self.weights.len() - 1;
        let mut inputs = Vec::with_capacity(self.weights.len());
        let mut pre = Vec::with_capacity(self.weights.len());
        let mut act = batch.clone();
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z = affine(&act, w, b);
            let next = if k == last { z.clone() } else { relu(&z) };
            inputs.push(act);
            pre.push(z);
            act = next;
        }
        if !act.all_finite() {
            return Err(Error::NonFinite("network output".into()));
        }
        Ok((act, ForwardCache { inputs, pre }))
    }

    /// Output only; skips the cache.
    pub fn predict(&self, batch: &Tensor2) -> Result<Tensor2> {
        if batch.cols() != self.input_dim() {
            return Err(Error::shape(
                format!("batch with {} columns", self.input_dim()),
                batch.cols(),
            ));
        }
        let last = self.weights.len() - 1;
        let mut act = batch.clone();
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z = affine(&act, w, b);
            act = if k == last { z } else { relu(&z) };
        }
        if !act.all_finite() {
            return Err(Error::NonFinite("network output".into()));
        }
        Ok(act)
    }

    /// Reverse-mode gradients of `sum(grad_output ⊙ output)`.
    ///
    /// Returns parameter gradients and the gradient with respect to the
    /// network input.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &Tensor2) -> Result<(MlpGrads, Tensor2)> {
        let mut grads = MlpGrads::zeros(&self.layer_sizes);
        let grad_input = self.backward_accumulate(cache, grad_output, &mut grads)?;
        Ok((grads, grad_input))
    }

    /// Like [`MlpParams::backward`] but adds into an existing gradient.
    pub fn backward_accumulate(
        &self,
        cache: &ForwardCache,
        grad_output: &Tensor2,
        grads: &mut MlpGrads,
    ) -> Result<Tensor2> {
        if cache.pre.len() != self.weights.len() {
            return Err(Error::shape(
                format!("cache for {} layers", self.weights.len()),
                cache.pre.len(),
            ));
        }
        for (k, (z, w)) in cache.pre.iter().zip(&self.weights).enumerate() {
            if z.cols() != w.rows() || cache.inputs[k].cols() != w.cols() {
                return Err(Error::shape(
                    format!("layer {k} of width {}x{}", w.rows(), w.cols()),
                    format!("cache {}x{}", z.cols(), cache.inputs[k].cols()),
                ));
            }
        }
        let out_shape = cache.pre.last().unwrap().shape();
        if grad_output.shape() != out_shape {
            return Err(Error::shape(
                format!("grad_output {}x{}", out_shape.0, out_shape.1),
                format!("{}x{}", grad_output.rows(), grad_output.cols()),
            ));
        }
        if grads.flat.len() != self.param_count() {
            return Err(Error::shape(
                format!("{} gradient slots", self.param_count()),
                grads.flat.len(),
            ));
        }
        let offsets = layer_offsets(&self.layer_sizes);
        let last = self.weights.len() - 1;
        let batch = grad_output.rows();
        let mut g = grad_output.clone();
        for k in (0..=last).rev() {
            let w = &self.weights[k];
            let (fan_out, fan_in) = w.shape();
            if k != last {
                let z = &cache.pre[k];
                for (gv, zv) in g.data_mut().iter_mut().zip(z.data()) {
                    if *zv <= 0.0 {
                        *gv = 0.0;
                    }
                }
            }
            let a = &cache.inputs[k];
            let base = offsets[k];
            let (wg, rest) = grads.flat[base..].split_at_mut(fan_out * fan_in);
            let bg = &mut rest[..fan_out];
            for r in 0..batch {
                let grow = g.row(r);
                let arow = a.row(r);
                for (o, &go) in grow.iter().enumerate() {
                    if go == 0.0 {
                        continue;
                    }
                    bg[o] += go;
                    let wrow = &mut wg[o * fan_in..(o + 1) * fan_in];
                    for (wv, av) in wrow.iter_mut().zip(arow) {
                        *wv += go * av;
                    }
                }
            }
            let mut prev = Tensor2::zeros(batch, fan_in);
            for r in 0..batch {
                let grow = g.row(r);
                let prow = prev.row_mut(r);
                for (o, &go) in grow.iter().enumerate() {
                    if go == 0.0 {
                        continue;
                    }
                    for (pv, wv) in prow.iter_mut().zip(w.row(o)) {
                        *pv += go * wv;
                    }
                }
            }
            g = prev;
        }
        if grads.flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter gradient".into()));
        }
        Ok(g)
    }
}

fn affine(a: &Tensor2, w: &Tensor2, b: &[f64]) -> Tensor2 {
    let (fan_out, _) = w.shape();
    let mut out = Tensor2::zeros(a.rows(), fan_out);
    for r in 0..a.rows() {
        let arow = a.row(r);
        let orow = out.row_mut(r);
        for (o, ov) in orow.iter_mut().enumerate() {
            *ov = b[o] + dot(w.row(o), arow);
        }
    }
    out
}

fn relu(z: &Tensor2) -> Tensor2 {
    let mut out = z.clone();
    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// Dot product with four independent accumulators.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::rng::standard_normal_vec;

    #[allow(clippy::needless_range_loop)]
    fn naive_forward(p: &MlpParams, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        let n = p.weights().len();
        for k in 0..n {
            let w = &p.weights()[k];
            let mut z = vec![0.0; w.rows()];
            for o in 0..w.rows() {
                let mut s = p.biases()[k][o];
                for i in 0..w.cols() {
                    s += w.get(o, i) * a[i];
                }
                z[o] = if k + 1 < n { s.max(0.0) } else { s };
            }
            a = z;
        }
        a
    }

    #[test]
    fn init_shapes() {
        let p = MlpParams::init(&[2, 4, 2], 7).unwrap();
        assert_eq!(p.weights()[0].shape(), (4, 2));
        assert_eq!(p.weights()[1].shape(), (2, 4));
        assert_eq!(p.biases()[0].len(), 4);
        assert_eq!(p.biases()[1].len(), 2);
        let q = MlpParams::init(&[1, 1], 99).unwrap();
        assert_eq!(q.weights().len(), 1);
        assert_eq!(q.biases()[0], vec![0.0]);
    }

    #[test]
    fn init_is_deterministic() {
        let a = MlpParams::init(&[3, 16, 5], 42).unwrap();
        let b = MlpParams::init(&[3, 16, 5], 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, MlpParams::init(&[3, 16, 5], 43).unwrap());
    }

    #[test]
    fn init_rejects_bad_sizes() {
        assert!(MlpParams::init(&[], 0).is_err());
        assert!(MlpParams::init(&[3], 0).is_err());
        assert!(MlpParams::init(&[3, 0, 2], 0).is_err());
    }

    #[test]
    fn zero_net_outputs_zero() {
        let p = MlpParams::zeros(&[3, 5, 2]).unwrap();
        let x = Tensor2::new(4, 3, standard_normal_vec(&mut seeded(1), 12)).unwrap();
        let (y, _) = p.forward(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_identity_net() {
        let w = Tensor2::new(1, 1, vec![1.0]).unwrap();
        let p = MlpParams::from_parts(vec![w], vec![vec![0.0]]).unwrap();
        let x = Tensor2::new(1, 1, vec![-3.0]).unwrap();
        let (y, _) = p.forward(&x).unwrap();
        assert_eq!(y.data(), &[-3.0]);
    }

    #[test]
    fn forward_matches_naive_loops() {
        let p = MlpParams::init(&[2, 8, 2], 5).unwrap();
        let x = Tensor2::new(16, 2, standard_normal_vec(&mut seeded(6), 32)).unwrap();
        let (y, _) = p.forward(&x).unwrap();
        for r in 0..16 {
            let want = naive_forward(&p, x.row(r));
            for (a, b) in y.row(r).iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let p = MlpParams::init(&[2, 3], 0).unwrap();
        assert!(p.forward(&Tensor2::zeros(1, 3)).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let p = MlpParams::init(&[3, 5, 2], 1).unwrap();
        let x = Tensor2::new(4, 3, standard_normal_vec(&mut seeded(2), 12)).unwrap();
        let (_, cache) = p.forward(&x).unwrap();
        let (g, gi) = p.backward(&cache, &Tensor2::zeros(4, 2)).unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
        assert!(gi.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_linear_chain_rule() {
        let w = Tensor2::new(1, 1, vec![0.7]).unwrap();
        let p = MlpParams::from_parts(vec![w], vec![vec![0.2]]).unwrap();
        let x = Tensor2::new(1, 1, vec![1.5]).unwrap();
        let (_, cache) = p.forward(&x).unwrap();
        let g = Tensor2::new(1, 1, vec![-2.0]).unwrap();
        let (grads, gi) = p.backward(&cache, &g).unwrap();
        assert_eq!(grads.weight(0), &[-3.0]);
        assert_eq!(grads.bias(0), &[-2.0]);
        assert!((gi.get(0, 0) - (-1.4)).abs() < 1e-15);
    }

    #[test]
    fn backward_rejects_mismatched_grad() {
        let p = MlpParams::init(&[2, 3, 2], 0).unwrap();
        let (_, cache) = p.forward(&Tensor2::zeros(2, 2)).unwrap();
        assert!(p.backward(&cache, &Tensor2::zeros(2, 3)).is_err());
        let other = MlpParams::init(&[2, 4, 4, 2], 0).unwrap();
        assert!(other.backward(&cache, &Tensor2::zeros(2, 2)).is_err());
    }

    #[test]
    fn flat_round_trip() {
        let mut p = MlpParams::init(&[3, 4, 2], 9).unwrap();
        let flat = p.to_flat();
        assert_eq!(flat.len(), p.param_count());
        let mut q = MlpParams::zeros(&[3, 4, 2]).unwrap();
        q.set_flat(&flat).unwrap();
        assert_eq!(p, q);
        let bumped: Vec<f64> = flat.iter().map(|v| v + 1.0).collect();
        p.set_flat(&bumped).unwrap();
        assert_eq!(p.biases()[1], vec![1.0, 1.0]);
    }
}
