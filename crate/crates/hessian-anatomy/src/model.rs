//! A deterministic feedforward classifier with explicit derivatives.
//!
//! The model is a plain MLP over a flat parameter vector with a fixed block
//! layout (per layer: row-major weights, then biases). Besides the forward
//! pass it exposes per-example loss gradients and the full `C×P` Jacobian of
//! the logits — one reverse-mode pass per logit coordinate, reusing a single
//! forward trace. A finite-difference full Hessian is provided as a test
//! oracle for small parameter counts.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg::{dot, DenseMatrix};
use crate::logistic::{ce_gradient, ce_loss, softmax, OneHotLabel, ProbVector};

/// Activation applied to hidden layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            // subgradient at 0 is defined as 0
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Tanh => x.tanh(),
        }
    }

    #[inline]
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }

    pub fn id(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Tanh),
            other => Err(Error::Format(format!("unknown activation id {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation {other:?}"))),
        }
    }
}

/// Which parameter block a layout entry describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Weight,
    Bias,
}

/// One block of the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockLayout {
    pub layer: usize,
    pub kind: BlockKind,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl BlockLayout {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flattened model parameters with their block layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    values: Vec<f64>,
    layout: Vec<BlockLayout>,
}

impl ParameterVector {
    fn new(values: Vec<f64>, layout: Vec<BlockLayout>) -> Result<Self> {
        let mut expected = 0usize;
        for block in &layout {
            if block.offset != expected {
                return Err(Error::Contract(format!(
                    "layout block at offset {} does not continue from {expected}",
                    block.offset
                )));
            }
            expected += block.len();
        }
        if expected != values.len() {
            return Err(Error::Contract(format!(
                "layout covers {expected} values, vector has {}",
                values.len()
            )));
        }
        Ok(Self { values, layout })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layout(&self) -> &[BlockLayout] {
        &self.layout
    }
}

fn layout_for(layer_sizes: &[usize]) -> (Vec<BlockLayout>, usize) {
    let mut layout = Vec::new();
    let mut offset = 0;
    for l in 0..layer_sizes.len() - 1 {
        let (fan_in, fan_out) = (layer_sizes[l], layer_sizes[l + 1]);
        layout.push(BlockLayout {
            layer: l,
            kind: BlockKind::Weight,
            rows: fan_out,
            cols: fan_in,
            offset,
        });
        offset += fan_out * fan_in;
        layout.push(BlockLayout { layer: l, kind: BlockKind::Bias, rows: fan_out, cols: 1, offset });
        offset += fan_out;
    }
    (layout, offset)
}

/// Per-example Jacobian of the logits: row `c'` is `∂f_{c'}/∂θ`.
#[derive(Debug, Clone)]
pub struct LogitJacobian {
    pub matrix: DenseMatrix,
}

/// A feedforward classifier: `layer_sizes = [d_in, h_1, .., h_L, C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layer_sizes: Vec<usize>,
    activation: Activation,
    params: ParameterVector,
}

impl MlpModel {
    /// Assemble a model from explicit parameter values. Unlike [`init_mlp`]
    /// this accepts layouts without hidden layers (a purely affine model),
    /// which is useful as an exactly quadratic test surrogate.
    pub fn from_parts(
        layer_sizes: Vec<usize>,
        activation: Activation,
        values: Vec<f64>,
    ) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.iter().any(|&w| w == 0) {
            return Err(Error::Config(format!(
                "layer sizes {layer_sizes:?} must list input and output widths >= 1"
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite parameter values".into()));
        }
        let (layout, count) = layout_for(&layer_sizes);
        if values.len() != count {
            return Err(Error::Config(format!(
                "expected {count} parameters for {layer_sizes:?}, got {}",
                values.len()
            )));
        }
        Ok(Self { layer_sizes, activation, params: ParameterVector::new(values, layout)? })
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

    pub fn class_count(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &ParameterVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterVector {
        &mut self.params
    }

    fn weight_block(&self, layer: usize) -> &BlockLayout {
        &self.params.layout()[2 * layer]
    }

    fn bias_block(&self, layer: usize) -> &BlockLayout {
        &self.params.layout()[2 * layer + 1]
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Data(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite input features".into()));
        }
        Ok(())
    }

    /// Forward pass keeping pre-activations and activations for reuse by the
    /// backward passes. `acts[0]` is the input; `pre[l]` is the affine output
    /// of layer `l`.
    fn forward_trace(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let values = self.params.values();
        let layers = self.layer_sizes.len() - 1;
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(layers + 1);
        let mut pres: Vec<Vec<f64>> = Vec::with_capacity(layers);
        acts.push(x.to_vec());
        for l in 0..layers {
            let w = self.weight_block(l);
            let b = self.bias_block(l);
            let input = &acts[l];
            let mut z = Vec::with_capacity(w.rows);
            for r in 0..w.rows {
                let row = &values[w.offset + r * w.cols..w.offset + (r + 1) * w.cols];
                z.push(dot(row, input) + values[b.offset + r]);
            }
            let a = if l + 1 == layers {
                z.clone()
            } else {
                z.iter().map(|&v| self.activation.apply(v)).collect()
            };
            pres.push(z);
            acts.push(a);
        }
        (pres, acts)
    }

    /// Logits for one input.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let (_, acts) = self.forward_trace(x);
        Ok(acts.last().unwrap().clone())
    }

    /// Backward pass from a seed gradient on the logits; returns `seedᵀ ·
    /// ∂f/∂θ` laid out like the parameter vector.
    fn backward(
        &self,
        pres: &[Vec<f64>],
        acts: &[Vec<f64>],
        seed: &[f64],
        out: &mut [f64],
    ) {
        let values = self.params.values();
        let layers = self.layer_sizes.len() - 1;
        let mut g = seed.to_vec();
        for l in (0..layers).rev() {
            let w = self.weight_block(l);
            let b = self.bias_block(l);
            let input = &acts[l];
            for r in 0..w.rows {
                let gr = g[r];
                out[b.offset + r] += gr;
                if gr != 0.0 {
                    let row = &mut out[w.offset + r * w.cols..w.offset + (r + 1) * w.cols];
                    for (o, x) in row.iter_mut().zip(input) {
                        *o += gr * x;
                    }
                }
            }
            if l > 0 {
                let mut prev = vec![0.0; w.cols];
                for r in 0..w.rows {
                    let gr = g[r];
                    if gr != 0.0 {
                        let row = &values[w.offset + r * w.cols..w.offset + (r + 1) * w.cols];
                        for (p, wv) in prev.iter_mut().zip(row) {
                            *p += gr * wv;
                        }
                    }
                }
                for (p, z) in prev.iter_mut().zip(&pres[l - 1]) {
                    *p *= self.activation.derivative(*z);
                }
                g = prev;
            }
        }
    }

    /// Full `C×P` Jacobian of the logits: one reverse pass per coordinate.
    pub fn logit_jacobian(&self, x: &[f64]) -> Result<LogitJacobian> {
        self.check_input(x)?;
        let (pres, acts) = self.forward_trace(x);
        let c = self.class_count();
        let p = self.param_count();
        let mut matrix = DenseMatrix::zeros(c, p);
        let mut seed = vec![0.0; c];
        for cp in 0..c {
            seed[cp] = 1.0;
            self.backward(&pres, &acts, &seed, matrix.row_mut(cp));
            seed[cp] = 0.0;
        }
        Ok(LogitJacobian { matrix })
    }

    /// Probabilities for one input.
    pub fn predict_probs(&self, x: &[f64]) -> Result<ProbVector> {
        softmax(&self.forward(x)?)
    }

    /// Gradient of the cross-entropy loss with respect to the parameters.
    pub fn loss_grad(&self, x: &[f64], y: OneHotLabel) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let (pres, acts) = self.forward_trace(x);
        let seed = ce_gradient(acts.last().unwrap(), y)?;
        let mut out = vec![0.0; self.param_count()];
        self.backward(&pres, &acts, &seed, &mut out);
        Ok(out)
    }

    /// Loss for one example.
    pub fn loss(&self, x: &[f64], y: OneHotLabel) -> Result<f64> {
        ce_loss(&self.forward(x)?, y)
    }
}

/// Initialize an MLP with at least one hidden layer: weights drawn from
/// `N(0, 2/fan_in)`, biases zero, deterministic for a given seed.
pub fn init_mlp(layer_sizes: &[usize], activation: Activation, seed: u64) -> Result<MlpModel> {
    if layer_sizes.len() < 3 {
        return Err(Error::Config(format!(
            "need at least one hidden layer, got sizes {layer_sizes:?}"
        )));
    }
    if layer_sizes.iter().any(|&w| w == 0) {
        return Err(Error::Config("all layer widths must be >= 1".into()));
    }
    let (layout, count) = layout_for(layer_sizes);
    let mut values = vec![0.0; count];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for block in &layout {
        if block.kind == BlockKind::Weight {
            let std = (2.0 / block.cols as f64).sqrt();
            for v in &mut values[block.offset..block.offset + block.len()] {
                let g: f64 = StandardNormal.sample(&mut rng);
                *v = std * g;
            }
        }
    }
    Ok(MlpModel {
        layer_sizes: layer_sizes.to_vec(),
        activation,
        params: ParameterVector::new(values, layout)?,
    })
}

/// Mean loss gradient over a dataset, summed in example order.
pub fn dataset_loss_grad(model: &MlpModel, dataset: &LabeledDataset) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; model.param_count()];
    for i in 0..dataset.len() {
        let y = OneHotLabel::new(dataset.label(i), model.class_count())?;
        let g = model.loss_grad(dataset.example(i), y)?;
        for (a, v) in acc.iter_mut().zip(&g) {
            *a += v;
        }
    }
    let n = dataset.len() as f64;
    for a in &mut acc {
        *a /= n;
    }
    Ok(acc)
}

/// Mean loss and accuracy over a dataset.
pub fn dataset_loss_accuracy(model: &MlpModel, dataset: &LabeledDataset) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for i in 0..dataset.len() {
        let z = model.forward(dataset.example(i))?;
        let y = OneHotLabel::new(dataset.label(i), model.class_count())?;
        loss += ce_loss(&z, y)?;
        let argmax = z
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        if argmax == dataset.label(i) {
            correct += 1;
        }
    }
    let n = dataset.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

const MAX_FD_HESSIAN_DIM: usize = 3000;

/// Full Hessian of the dataset loss by central differences of the gradient.
///
/// A test oracle: refuses parameter counts above 3000. The returned matrix is
/// the raw finite-difference result; its asymmetry measures the scheme's
/// error and is asserted by callers rather than hidden by symmetrization.
pub fn full_hessian_fd(
    model: &MlpModel,
    dataset: &LabeledDataset,
    step: f64,
) -> Result<DenseMatrix> {
    let p = model.param_count();
    if p > MAX_FD_HESSIAN_DIM {
        return Err(Error::Contract(format!(
            "finite-difference Hessian refused for P = {p} > {MAX_FD_HESSIAN_DIM}"
        )));
    }
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::Contract("step must be positive".into()));
    }
    let columns: Vec<Vec<f64>> = (0..p)
        .into_par_iter()
        .map(|j| -> Result<Vec<f64>> {
            let mut m = model.clone();
            m.params_mut().values_mut()[j] += step;
            let gp = dataset_loss_grad(&m, dataset)?;
            m.params_mut().values_mut()[j] -= 2.0 * step;
            let gm = dataset_loss_grad(&m, dataset)?;
            Ok(gp
                .iter()
                .zip(&gm)
                .map(|(a, b)| (a - b) / (2.0 * step))
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DenseMatrix::from_fn(p, p, |i, j| columns[j][i]))
}

const CHECKPOINT_MAGIC: &[u8; 9] = b"HANATOMY1";

/// Write a model checkpoint: magic, activation id, layer sizes, then raw
/// little-endian 64-bit parameter values in layout order.
pub fn save_checkpoint(model: &MlpModel, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(CHECKPOINT_MAGIC)?;
    f.write_all(&[model.activation().id()])?;
    f.write_all(&(model.layer_sizes().len() as u32).to_le_bytes())?;
    for &s in model.layer_sizes() {
        f.write_all(&(s as u32).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(model.param_count() * 8);
    for v in model.params().values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    f.write_all(&buf)?;
    Ok(())
}

/// Read a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<MlpModel> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let need = |n: usize, pos: usize| -> Result<()> {
        if pos + n > bytes.len() {
            Err(Error::Format(format!("{}: truncated checkpoint", path.display())))
        } else {
            Ok(())
        }
    };
    need(CHECKPOINT_MAGIC.len() + 1 + 4, 0)?;
    if &bytes[..9] != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad checkpoint magic, expected {:?}",
            path.display(),
            std::str::from_utf8(CHECKPOINT_MAGIC).unwrap()
        )));
    }
    let activation = Activation::from_id(bytes[9])?;
    let n_sizes = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    let mut pos = 14;
    need(4 * n_sizes, pos)?;
    let mut layer_sizes = Vec::with_capacity(n_sizes);
    for _ in 0..n_sizes {
        layer_sizes.push(u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize);
        pos += 4;
    }
    let (_, count) = layout_for(&layer_sizes);
    need(8 * count, pos)?;
    if bytes.len() != pos + 8 * count {
        return Err(Error::Format(format!(
            "{}: {} parameter bytes, expected {}",
            path.display(),
            bytes.len() - pos,
            8 * count
        )));
    }
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        values.push(f64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap()));
        pos += 8;
    }
    MlpModel::from_parts(layer_sizes, activation, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_gaussian_mixture;
    use crate::logistic::ce_hessian;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn label(c: usize, n: usize) -> OneHotLabel {
        OneHotLabel::new(c, n).unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_mlp(&[4, 8, 3], Activation::Relu, 123).unwrap();
        let b = init_mlp(&[4, 8, 3], Activation::Relu, 123).unwrap();
        assert_eq!(a.params().values(), b.params().values());
        let c = init_mlp(&[4, 8, 3], Activation::Relu, 124).unwrap();
        assert_ne!(a.params().values(), c.params().values());
    }

    #[test]
    fn parameter_count() {
        let m = init_mlp(&[4, 8, 3], Activation::Relu, 0).unwrap();
        assert_eq!(m.param_count(), 4 * 8 + 8 + 8 * 3 + 3);
        assert_eq!(m.param_count(), 67);
    }

    #[test]
    fn weight_variance_tracks_fan_in() {
        let m = init_mlp(&[100, 100, 2], Activation::Relu, 7).unwrap();
        let block = m.weight_block(0);
        assert_eq!(block.len(), 10_000);
        let w = &m.params().values()[block.offset..block.offset + block.len()];
        let var: f64 = w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
        let target = 2.0 / 100.0;
        assert!((var - target).abs() < 0.2 * target, "variance {var}, target {target}");
        // biases zero
        let b = m.bias_block(0);
        assert!(m.params().values()[b.offset..b.offset + b.len()].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let (_, count) = layout_for(&[3, 4, 2]);
        let m = MlpModel::from_parts(vec![3, 4, 2], Activation::Relu, vec![0.0; count]).unwrap();
        let z = m.forward(&[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(z, vec![0.0, 0.0]);
    }

    #[test]
    fn hand_computed_affine_map() {
        // one hidden relu layer kept in its positive region
        // W1 = [[1, 2], [0.5, -0.25]], b1 = (3, 4); W2 = [[1, -1]], b2 = (0.5)
        let values = vec![1.0, 2.0, 0.5, -0.25, 3.0, 4.0, 1.0, -1.0, 0.5];
        let m = MlpModel::from_parts(vec![2, 2, 1], Activation::Relu, values).unwrap();
        let x = [1.0, 1.0];
        // h = relu(W1 x + b1) = (6, 4.25); z = h0 - h1 + 0.5 = 2.25
        let z = m.forward(&x).unwrap();
        assert!((z[0] - 2.25).abs() < 1e-15);
    }

    #[test]
    fn final_layer_is_linear_in_its_weights() {
        let m = init_mlp(&[3, 5, 4], Activation::Tanh, 11).unwrap();
        let x = [0.3, -0.8, 0.2];
        let z1 = m.forward(&x).unwrap();
        let mut doubled = m.clone();
        let w = *doubled.weight_block(1);
        let b = *doubled.bias_block(1);
        for v in &mut doubled.params_mut().values_mut()[w.offset..w.offset + w.len()] {
            *v *= 2.0;
        }
        for v in &mut doubled.params_mut().values_mut()[b.offset..b.offset + b.len()] {
            *v *= 2.0;
        }
        let z2 = doubled.forward(&x).unwrap();
        for (a, b) in z1.iter().zip(&z2) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dead_relu_network_jacobian_hits_only_final_bias() {
        let m = init_mlp(&[3, 4, 2], Activation::Relu, 5).unwrap();
        // zero input, zero biases: every hidden pre-activation is 0 and the
        // relu subgradient at 0 is 0, so only the final bias block survives
        let jac = m.logit_jacobian(&[0.0, 0.0, 0.0]).unwrap();
        let bias = m.bias_block(1);
        for c in 0..2 {
            for j in 0..m.param_count() {
                let expect = if j == bias.offset + c { 1.0 } else { 0.0 };
                assert_eq!(jac.matrix.get(c, j), expect);
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &act in &[Activation::Tanh, Activation::Relu] {
            let m = init_mlp(&[4, 6, 5, 3], act, 21).unwrap();
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let jac = m.logit_jacobian(&x).unwrap();
            let h = 1e-6;
            let scale = jac.matrix.max_abs().max(1.0);
            for j in 0..m.param_count() {
                let mut mp = m.clone();
                mp.params_mut().values_mut()[j] += h;
                let zp = mp.forward(&x).unwrap();
                let mut mm = m.clone();
                mm.params_mut().values_mut()[j] -= h;
                let zm = mm.forward(&x).unwrap();
                for c in 0..3 {
                    let fd = (zp[c] - zm[c]) / (2.0 * h);
                    assert!(
                        (jac.matrix.get(c, j) - fd).abs() <= 1e-5 * scale,
                        "activation {act:?}, entry ({c},{j})"
                    );
                }
            }
        }
    }

    #[test]
    fn tanh_jacobian_continuous_under_small_perturbation() {
        let m = init_mlp(&[4, 6, 3], Activation::Tanh, 31).unwrap();
        let x = [0.1, -0.2, 0.7, 0.4];
        let mut x2 = x;
        x2[0] += 1e-6;
        let j1 = m.logit_jacobian(&x).unwrap();
        let j2 = m.logit_jacobian(&x2).unwrap();
        let mut worst = 0.0_f64;
        for c in 0..3 {
            for j in 0..m.param_count() {
                worst = worst.max((j1.matrix.get(c, j) - j2.matrix.get(c, j)).abs());
            }
        }
        assert!(worst < 1e-4, "jacobian jumped by {worst}");
    }

    #[test]
    fn loss_grad_is_chain_rule_assembly() {
        let m = init_mlp(&[4, 5, 3], Activation::Tanh, 41).unwrap();
        let x = [0.2, -0.4, 0.9, -0.1];
        let y = label(1, 3);
        let g = m.loss_grad(&x, y).unwrap();
        let z = m.forward(&x).unwrap();
        let seed = ce_gradient(&z, y).unwrap();
        let jac = m.logit_jacobian(&x).unwrap();
        for j in 0..m.param_count() {
            let assembled: f64 = (0..3).map(|c| seed[c] * jac.matrix.get(c, j)).sum();
            assert!((g[j] - assembled).abs() <= 1e-12 * assembled.abs().max(1.0));
        }
    }

    #[test]
    fn loss_grad_matches_finite_differences() {
        let m = init_mlp(&[3, 6, 4], Activation::Tanh, 51).unwrap();
        let x = [0.5, -0.3, 0.8];
        let y = label(2, 4);
        let g = m.loss_grad(&x, y).unwrap();
        let h = 1e-6;
        let scale = g.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1.0);
        for j in 0..m.param_count() {
            let mut mp = m.clone();
            mp.params_mut().values_mut()[j] += h;
            let mut mm = m.clone();
            mm.params_mut().values_mut()[j] -= h;
            let fd = (mp.loss(&x, y).unwrap() - mm.loss(&x, y).unwrap()) / (2.0 * h);
            assert!((g[j] - fd).abs() <= 1e-5 * scale);
        }
    }

    #[test]
    fn loss_grad_zero_at_saturated_correct_prediction() {
        // scale the final layer so p is numerically one-hot at the label
        let mut m = init_mlp(&[2, 3, 2], Activation::Relu, 61).unwrap();
        let w = *m.weight_block(1);
        let b = *m.bias_block(1);
        for v in &mut m.params_mut().values_mut()[w.offset..w.offset + w.len()] {
            *v = 0.0;
        }
        m.params_mut().values_mut()[b.offset] = 900.0;
        m.params_mut().values_mut()[b.offset + 1] = 0.0;
        let g = m.loss_grad(&[0.4, 0.6], label(0, 2)).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }

    /// Analytic Gauss-Newton term for a model, `Ave_i Jᵀ (diag p − ppᵀ) J`.
    fn gauss_newton_dense(m: &MlpModel, ds: &LabeledDataset) -> DenseMatrix {
        let p = m.param_count();
        let mut acc = DenseMatrix::zeros(p, p);
        for i in 0..ds.len() {
            let jac = m.logit_jacobian(ds.example(i)).unwrap().matrix;
            let probs = m.predict_probs(ds.example(i)).unwrap();
            let h = ce_hessian(&probs);
            let hj = h.matmul(&jac);
            let jthj = jac.transpose().matmul(&hj);
            for r in 0..p {
                for c in 0..p {
                    acc.set(r, c, acc.get(r, c) + jthj.get(r, c));
                }
            }
        }
        let n = ds.len() as f64;
        DenseMatrix::from_fn(p, p, |r, c| acc.get(r, c) / n)
    }

    #[test]
    fn fd_hessian_matches_analytic_on_affine_model() {
        // no hidden layer: the logits are linear in θ, so the Hessian is
        // exactly the Gauss-Newton term
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let values: Vec<f64> = (0..3 * 2 + 2).map(|_| rng.random_range(-0.5..0.5)).collect();
        let m = MlpModel::from_parts(vec![3, 2], Activation::Tanh, values).unwrap();
        let ds = gen_gaussian_mixture(2, 3, 8, 1.0, 1.0, 81).unwrap();
        let hess = full_hessian_fd(&m, &ds, 1e-4).unwrap();
        let gn = gauss_newton_dense(&m, &ds);
        let mut worst = 0.0_f64;
        for r in 0..m.param_count() {
            for c in 0..m.param_count() {
                worst = worst.max((hess.get(r, c) - gn.get(r, c)).abs());
            }
        }
        assert!(worst <= 1e-6, "max |Hess − JᵀHJ| = {worst}");
    }

    #[test]
    fn fd_hessian_is_symmetric_and_residual_is_symmetric() {
        let m = init_mlp(&[3, 5, 2], Activation::Tanh, 91).unwrap();
        let ds = gen_gaussian_mixture(2, 3, 10, 2.0, 1.0, 92).unwrap();
        let hess = full_hessian_fd(&m, &ds, 1e-4).unwrap();
        let scale = hess.max_abs().max(1.0);
        assert!(hess.max_asymmetry() <= 1e-6 * scale);
        // the Gauss-Newton residual (the curvature of f itself) stays symmetric
        let gn = gauss_newton_dense(&m, &ds);
        let resid = DenseMatrix::from_fn(m.param_count(), m.param_count(), |r, c| {
            hess.get(r, c) - gn.get(r, c)
        });
        assert!(resid.max_asymmetry() <= 1e-6 * scale);
        assert!(resid.max_abs() > 0.0);
    }

    #[test]
    fn fd_hessian_refuses_large_models() {
        let m = init_mlp(&[100, 100, 10], Activation::Tanh, 1).unwrap();
        let ds = gen_gaussian_mixture(10, 100, 1, 1.0, 1.0, 2).unwrap();
        assert!(matches!(full_hessian_fd(&m, &ds, 1e-4), Err(Error::Contract(_))));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let m = init_mlp(&[4, 7, 3], Activation::Tanh, 13).unwrap();
        save_checkpoint(&m, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.layer_sizes(), m.layer_sizes());
        assert_eq!(back.activation(), m.activation());
        assert_eq!(back.params().values(), m.params().values());
    }

    #[test]
    fn checkpoint_rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bogus.bin");
        fs::write(&path, b"NOTAMODEL____________").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format(_))));
    }

    #[test]
    fn forward_rejects_dimension_mismatch() {
        let m = init_mlp(&[4, 5, 2], Activation::Relu, 17).unwrap();
        assert!(matches!(m.forward(&[1.0, 2.0]), Err(Error::Data(_))));
    }
}
