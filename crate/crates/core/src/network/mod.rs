//! Masked feed-forward models.
//!
//! Every prunable layer owns a weight tensor, an unmasked bias and a binary
//! keep-mask congruent to the weights. Wherever the mask is 0 the stored
//! weight is exactly 0; all mutating entry points re-apply the mask.

mod adam;
pub mod checkpoint;
pub(crate) mod train;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use train::{train, train_on, TrainConfig, TrainLog};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ConvGeometry, Graph, Tensor, Var};

/// One convolution stage of a [`Architecture::Conv`] network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvStage {
    pub out_channels: usize,
    pub kernel: usize,
}

/// Network shape descriptor. ReLU follows every layer except the last.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Mlp {
        input: usize,
        hidden: Vec<usize>,
        classes: usize,
    },
    Conv {
        channels: usize,
        height: usize,
        width: usize,
        stages: Vec<ConvStage>,
        classes: usize,
    },
}

impl Architecture {
    /// Default experiment MLP: input → 64 → 32 → classes.
    pub fn default_mlp(input: usize, classes: usize) -> Self {
        Architecture::Mlp {
            input,
            hidden: vec![64, 32],
            classes,
        }
    }

    /// Two 3×3 conv stages followed by a dense classifier.
    pub fn small_conv(channels: usize, height: usize, width: usize, classes: usize) -> Self {
        Architecture::Conv {
            channels,
            height,
            width,
            stages: vec![
                ConvStage {
                    out_channels: 4,
                    kernel: 3,
                },
                ConvStage {
                    out_channels: 8,
                    kernel: 3,
                },
            ],
            classes,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Architecture::Mlp { input, .. } => *input,
            Architecture::Conv {
                channels,
                height,
                width,
                ..
            } => channels * height * width,
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            Architecture::Mlp { classes, .. } | Architecture::Conv { classes, .. } => *classes,
        }
    }

    fn layer_kinds(&self) -> Result<Vec<(LayerKind, Vec<usize>)>> {
        let mut out = Vec::new();
        match self {
            Architecture::Mlp {
                input,
                hidden,
                classes,
            } => {
                let mut widths = vec![*input];
                widths.extend(hidden);
                widths.push(*classes);
                if widths.contains(&0) {
                    return Err(Error::Config(format!("zero-width layer in {self:?}")));
                }
                for pair in widths.windows(2) {
                    out.push((LayerKind::Dense, vec![pair[0], pair[1]]));
                }
            }
            Architecture::Conv {
                channels,
                height,
                width,
                stages,
                classes,
            } => {
                let (mut c, mut h, mut w) = (*channels, *height, *width);
                for stage in stages {
                    let geom = ConvGeometry {
                        in_channels: c,
                        in_height: h,
                        in_width: w,
                        out_channels: stage.out_channels,
                        kernel_height: stage.kernel,
                        kernel_width: stage.kernel,
                    };
                    geom.validate()
                        .map_err(|_| Error::Config(format!("conv stage does not fit: {geom:?}")))?;
                    out.push((LayerKind::Conv2d(geom), geom.kernel_shape()));
                    c = geom.out_channels;
                    h = geom.out_height();
                    w = geom.out_width();
                }
                if *classes == 0 {
                    return Err(Error::Config("zero output classes".into()));
                }
                out.push((LayerKind::Dense, vec![c * h * w, *classes]));
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Dense,
    Conv2d(ConvGeometry),
}

impl LayerKind {
    pub fn tag(&self) -> u8 {
        match self {
            LayerKind::Dense => 0,
            LayerKind::Conv2d(_) => 1,
        }
    }
}

/// Weight matrix (or kernel) paired with a binary keep-mask.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedLayer {
    kind: LayerKind,
    weights: Tensor,
    bias: Tensor,
    mask: Vec<u8>,
    layer_id: usize,
}

impl MaskedLayer {
    pub fn new(layer_id: usize, kind: LayerKind, weights: Tensor, bias: Tensor) -> Result<Self> {
        let outputs = match kind {
            LayerKind::Dense if weights.shape().len() == 2 => weights.shape()[1],
            LayerKind::Conv2d(g) if weights.shape() == g.kernel_shape().as_slice() => {
                g.out_channels
            }
            _ => return Err(Error::dim("layer weights", weights.shape(), &[])),
        };
        if bias.len() != outputs {
            return Err(Error::dim("layer bias", weights.shape(), bias.shape()));
        }
        let mask = vec![1; weights.len()];
        Ok(MaskedLayer {
            kind,
            weights,
            bias,
            mask,
            layer_id,
        })
    }

    pub fn kind(&self) -> LayerKind {
        self.kind
    }

    pub fn layer_id(&self) -> usize {
        self.layer_id
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn mask(&self) -> &[u8] {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn kept(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }

    pub fn nonzero(&self) -> usize {
        self.weights.data().iter().filter(|&&w| w != 0.0).count()
    }

    /// Replaces the mask and zeroes every newly pruned weight.
    pub fn set_mask(&mut self, mask: Vec<u8>) -> Result<()> {
        if mask.len() != self.weights.len() {
            return Err(Error::dim("set_mask", self.weights.shape(), &[mask.len()]));
        }
        if mask.iter().any(|&m| m > 1) {
            return Err(Error::Contract("mask entries must be 0 or 1".into()));
        }
        self.mask = mask;
        self.apply_mask();
        Ok(())
    }

    pub fn set_weights(&mut self, data: &[f64]) -> Result<()> {
        if data.len() != self.weights.len() {
            return Err(Error::dim(
                "set_weights",
                self.weights.shape(),
                &[data.len()],
            ));
        }
        self.weights.data_mut().copy_from_slice(data);
        self.apply_mask();
        Ok(())
    }

    pub fn set_bias(&mut self, data: &[f64]) -> Result<()> {
        if data.len() != self.bias.len() {
            return Err(Error::dim("set_bias", self.bias.shape(), &[data.len()]));
        }
        self.bias.data_mut().copy_from_slice(data);
        Ok(())
    }

    pub fn apply_mask(&mut self) {
        for (w, &m) in self.weights.data_mut().iter_mut().zip(&self.mask) {
            if m == 0 {
                *w = 0.0;
            }
        }
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [f64] {
        self.weights.data_mut()
    }

    pub(crate) fn bias_mut(&mut self) -> &mut [f64] {
        self.bias.data_mut()
    }
}

/// Parameter handles and activations recorded by [`Model::forward_graph`].
#[derive(Clone, Debug)]
pub struct ForwardVars {
    pub logits: Var,
    /// Output of the last hidden layer (after its activation).
    pub penultimate: Var,
    pub weights: Vec<Var>,
    pub biases: Vec<Var>,
}

/// Per-layer gradient buffers, congruent to weights and biases.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        Gradients {
            weights: model.layers.iter().map(|l| vec![0.0; l.len()]).collect(),
            biases: model
                .layers
                .iter()
                .map(|l| vec![0.0; l.bias.len()])
                .collect(),
        }
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self
            .weights
            .iter_mut()
            .chain(self.biases.iter_mut())
            .zip(other.weights.iter().chain(other.biases.iter()))
        {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }
}

/// Ordered stack of masked layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    arch: Architecture,
    layers: Vec<MaskedLayer>,
    initial_snapshot: Option<Vec<(Tensor, Tensor)>>,
}

impl Model {
    /// Kaiming-uniform weights (bound √(6/fan_in)), biases uniform in ±1/√fan_in.
    pub fn new(arch: &Architecture, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        for (id, (kind, shape)) in arch.layer_kinds()?.into_iter().enumerate() {
            let (fan_in, outputs) = match kind {
                LayerKind::Dense => (shape[0], shape[1]),
                LayerKind::Conv2d(g) => (
                    g.in_channels * g.kernel_height * g.kernel_width,
                    g.out_channels,
                ),
            };
            let bound = (6.0 / fan_in as f64).sqrt();
            let numel: usize = shape.iter().product();
            let w = (0..numel)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            let bb = 1.0 / (fan_in as f64).sqrt();
            let b = (0..outputs).map(|_| rng.random_range(-bb..bb)).collect();
            layers.push(MaskedLayer::new(
                id,
                kind,
                Tensor::new(shape, w)?,
                Tensor::vector(b)?,
            )?);
        }
        Ok(Model {
            arch: arch.clone(),
            layers,
            initial_snapshot: None,
        })
    }

    /// Assembles a model from explicit layers; shapes must agree with `arch`.
    pub fn from_layers(arch: &Architecture, layers: Vec<MaskedLayer>) -> Result<Self> {
        let kinds = arch.layer_kinds()?;
        if kinds.len() != layers.len() {
            return Err(Error::Contract(format!(
                "architecture has {} layers, got {}",
                kinds.len(),
                layers.len()
            )));
        }
        for ((kind, shape), layer) in kinds.iter().zip(&layers) {
            if *kind != layer.kind || shape.as_slice() != layer.weights.shape() {
                return Err(Error::dim("from_layers", shape, layer.weights.shape()));
            }
        }
        let mut model = Model {
            arch: arch.clone(),
            layers,
            initial_snapshot: None,
        };
        model.apply_masks();
        Ok(model)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim()
    }

    pub fn output_classes(&self) -> usize {
        self.arch.classes()
    }

    pub fn layers(&self) -> &[MaskedLayer] {
        &self.layers
    }

    pub fn layer_mut(&mut self, i: usize) -> &mut MaskedLayer {
        &mut self.layers[i]
    }

    /// Total prunable parameter count `m` (biases excluded).
    pub fn num_weights(&self) -> usize {
        self.layers.iter().map(MaskedLayer::len).sum()
    }

    /// Sum of mask popcounts.
    pub fn kept_weights(&self) -> usize {
        self.layers.iter().map(MaskedLayer::kept).sum()
    }

    pub fn nonzero_weights(&self) -> usize {
        self.layers.iter().map(MaskedLayer::nonzero).sum()
    }

    pub fn apply_masks(&mut self) {
        for layer in &mut self.layers {
            layer.apply_mask();
        }
    }

    pub fn has_snapshot(&self) -> bool {
        self.initial_snapshot.is_some()
    }

    /// Stores a deep copy of all weights and biases.
    pub fn snapshot_init(&mut self) {
        self.initial_snapshot = Some(
            self.layers
                .iter()
                .map(|l| (l.weights.clone(), l.bias.clone()))
                .collect(),
        );
    }

    pub fn set_snapshot_from(&mut self, other: &Model) -> Result<()> {
        if other.layers.len() != self.layers.len() {
            return Err(Error::Contract(
                "snapshot source has a different layer count".into(),
            ));
        }
        for (a, b) in self.layers.iter().zip(&other.layers) {
            if a.weights.shape() != b.weights.shape() {
                return Err(Error::dim("snapshot", a.weights.shape(), b.weights.shape()));
            }
        }
        self.initial_snapshot = Some(
            other
                .layers
                .iter()
                .map(|l| (l.weights.clone(), l.bias.clone()))
                .collect(),
        );
        Ok(())
    }

    /// Restores snapshot values; masks are kept, so pruned weights stay zero.
    pub fn reset_to_snapshot(&mut self) -> Result<()> {
        let snapshot = self
            .initial_snapshot
            .as_ref()
            .ok_or_else(|| Error::Contract("model has no initial snapshot".into()))?;
        for (layer, (w, b)) in self.layers.iter_mut().zip(snapshot) {
            layer.weights.data_mut().copy_from_slice(w.data());
            layer.bias.data_mut().copy_from_slice(b.data());
            layer.apply_mask();
        }
        Ok(())
    }

    pub fn snapshot(&self) -> Option<&[(Tensor, Tensor)]> {
        self.initial_snapshot.as_deref()
    }

    /// Records the forward pass on `g`. Weights enter as params when `with_grad`.
    pub fn forward_graph(&self, g: &mut Graph, x: Var, with_grad: bool) -> Result<ForwardVars> {
        let width = g.value(x).cols();
        if g.value(x).shape().len() != 2 || width != self.input_dim() {
            return Err(Error::dim(
                "forward",
                g.value(x).shape(),
                &[self.input_dim()],
            ));
        }
        let mut h = x;
        let mut penultimate = x;
        let mut weights = Vec::with_capacity(self.layers.len());
        let mut biases = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let w = g.leaf(layer.weights.clone(), with_grad);
            let b = g.leaf(layer.bias.clone(), with_grad);
            let pre = match layer.kind {
                LayerKind::Dense => {
                    let z = g.matmul(h, w)?;
                    g.add_row_bias(z, b)?
                }
                LayerKind::Conv2d(geom) => {
                    let z = g.conv2d(h, w, geom)?;
                    g.add_channel_bias(z, b, geom.out_channels)?
                }
            };
            weights.push(w);
            biases.push(b);
            if i == last {
                h = pre;
            } else {
                h = g.relu(pre)?;
                penultimate = h;
            }
        }
        Ok(ForwardVars {
            logits: h,
            penultimate,
            weights,
            biases,
        })
    }

    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.constant(batch.clone());
        let vars = self.forward_graph(&mut g, x, false)?;
        Ok(g.value(vars.logits).clone())
    }

    /// Activations of the last hidden layer (the input itself for a single-layer model).
    pub fn embeddings(&self, batch: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.constant(batch.clone());
        let vars = self.forward_graph(&mut g, x, false)?;
        Ok(g.value(vars.penultimate).clone())
    }

    pub fn loss(&self, batch: &Tensor, labels: &[usize]) -> Result<f64> {
        let logits = self.forward(batch)?;
        cross_entropy(&logits, labels)?.item()
    }

    /// Mean cross-entropy and its gradients with respect to every parameter.
    pub fn loss_and_gradients(&self, batch: &Tensor, labels: &[usize]) -> Result<(f64, Gradients)> {
        let mut g = Graph::new();
        let x = g.constant(batch.clone());
        let vars = self.forward_graph(&mut g, x, true)?;
        let loss = g.softmax_cross_entropy(vars.logits, labels)?;
        g.backward(loss)?;
        let value = g.value(loss).item()?;
        let mut grads = Gradients {
            weights: Vec::with_capacity(self.layers.len()),
            biases: Vec::with_capacity(self.layers.len()),
        };
        for (w, b) in vars.weights.iter().zip(&vars.biases) {
            grads.weights.push(
                g.take_grad(*w)
                    .map(Tensor::into_data)
                    .unwrap_or_else(|| vec![0.0; g.value(*w).len()]),
            );
            grads.biases.push(
                g.take_grad(*b)
                    .map(Tensor::into_data)
                    .unwrap_or_else(|| vec![0.0; g.value(*b).len()]),
            );
        }
        Ok((value, grads))
    }

    pub fn predict(&self, batch: &Tensor) -> Result<Vec<usize>> {
        let logits = self.forward(batch)?;
        Ok((0..logits.rows()).map(|i| argmax(logits.row(i))).collect())
    }

    /// All weights concatenated layer by layer.
    pub fn flat_weights(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.data().iter().copied())
            .collect()
    }

    pub fn flat_masks(&self) -> Vec<u8> {
        self.layers
            .iter()
            .flat_map(|l| l.mask.iter().copied())
            .collect()
    }

    /// Overwrites weights from a flat buffer; masks are re-applied.
    pub fn set_flat_weights(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_weights() {
            return Err(Error::dim(
                "set_flat_weights",
                &[self.num_weights()],
                &[flat.len()],
            ));
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            let n = layer.len();
            layer.set_weights(&flat[offset..offset + n])?;
            offset += n;
        }
        Ok(())
    }

    pub fn set_flat_masks(&mut self, flat: &[u8]) -> Result<()> {
        if flat.len() != self.num_weights() {
            return Err(Error::dim(
                "set_flat_masks",
                &[self.num_weights()],
                &[flat.len()],
            ));
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            let n = layer.len();
            layer.set_mask(flat[offset..offset + n].to_vec())?;
            offset += n;
        }
        Ok(())
    }
}

/// Ties resolve to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Mean over rows of −log softmax(logits)[label].
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let mut g = Graph::new();
    let l = g.constant(logits.clone());
    let loss = g.softmax_cross_entropy(l, labels)?;
    Ok(g.value(loss).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn tiny() -> Model {
        Model::new(
            &Architecture::Mlp {
                input: 3,
                hidden: vec![4],
                classes: 2,
            },
            1,
        )
        .unwrap()
    }

    #[test]
    fn logits_have_class_width() {
        let m = tiny();
        let x = Tensor::matrix(5, 3, vec![0.1; 15]).unwrap();
        let y = m.forward(&x).unwrap();
        assert_eq!(y.shape(), &[5, 2]);
        assert_eq!(m.num_weights(), 3 * 4 + 4 * 2);
        let bad = Tensor::matrix(1, 4, vec![0.0; 4]).unwrap();
        assert!(matches!(m.forward(&bad), Err(Error::Dimension { .. })));
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let arch = Architecture::Mlp {
            input: 2,
            hidden: vec![3],
            classes: 2,
        };
        let mut m = Model::new(&arch, 0).unwrap();
        for i in 0..2 {
            let l = m.layer_mut(i);
            let n = l.len();
            l.set_weights(&vec![0.0; n]).unwrap();
            let nb = l.bias().len();
            l.set_bias(&vec![0.0; nb]).unwrap();
        }
        let x = Tensor::matrix(2, 2, vec![1.0, -2.0, 3.0, 4.0]).unwrap();
        assert!(m.forward(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_dense_layer_is_identity() {
        let arch = Architecture::Mlp {
            input: 3,
            hidden: vec![],
            classes: 3,
        };
        let mut m = Model::new(&arch, 0).unwrap();
        let l = m.layer_mut(0);
        l.set_weights(&[1., 0., 0., 0., 1., 0., 0., 0., 1.])
            .unwrap();
        l.set_bias(&[0.0; 3]).unwrap();
        let x = Tensor::matrix(1, 3, vec![0.5, -1.5, 2.0]).unwrap();
        assert_eq!(m.forward(&x).unwrap().data(), x.data());
    }

    #[test]
    fn zero_mask_matches_explicit_zero_weights() {
        let mut masked = tiny();
        let mut explicit = masked.clone();
        masked.layer_mut(0).set_mask(vec![0; 12]).unwrap();
        explicit.layer_mut(0).set_weights(&[0.0; 12]).unwrap();
        let x = Tensor::matrix(2, 3, vec![0.3, -0.2, 1.0, 2.0, 0.0, -1.0]).unwrap();
        assert_eq!(masked.forward(&x).unwrap(), explicit.forward(&x).unwrap());
    }

    #[test]
    fn apply_masks_examples() {
        let mut m = tiny();
        let before = m.flat_weights();
        m.set_flat_masks(&[1; 20]).unwrap();
        assert_eq!(m.flat_weights(), before);
        m.set_flat_masks(&[0; 20]).unwrap();
        assert_eq!(m.nonzero_weights(), 0);

        let mut m = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mask: Vec<u8> = (0..20).map(|_| rng.random_range(0..2)).collect();
        m.set_flat_masks(&mask).unwrap();
        assert_eq!(
            m.nonzero_weights(),
            mask.iter().filter(|&&b| b == 1).count()
        );
        assert_eq!(m.kept_weights(), m.nonzero_weights());
        assert!(m.layer_mut(0).set_mask(vec![2; 12]).is_err());
    }

    #[test]
    fn snapshot_and_reset() {
        let mut m = tiny();
        assert!(m.reset_to_snapshot().is_err());
        m.snapshot_init();
        let init = m.flat_weights();
        m.set_flat_weights(&[0.5; 20]).unwrap();
        let mut mask = vec![1u8; 20];
        mask[3] = 0;
        m.set_flat_masks(&mask).unwrap();
        m.reset_to_snapshot().unwrap();
        let after = m.flat_weights();
        assert_eq!(after[3], 0.0);
        for i in (0..20).filter(|&i| i != 3) {
            assert_eq!(after[i], init[i]);
        }
        assert_eq!(m.flat_masks(), mask);
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let logits = Tensor::matrix(2, 4, vec![0.7; 8]).unwrap();
        let l = cross_entropy(&logits, &[0, 3]).unwrap().item().unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
        assert!(cross_entropy(&logits, &[0, 4]).is_err());
    }

    #[test]
    fn cross_entropy_decreases_with_margin() {
        let mut prev = f64::INFINITY;
        for margin in [0.0, 1.0, 5.0, 20.0, 40.0] {
            let logits = Tensor::matrix(1, 2, vec![margin, 0.0]).unwrap();
            let l = cross_entropy(&logits, &[0]).unwrap().item().unwrap();
            assert!(l < prev);
            prev = l;
        }
        assert!(prev < 1e-15);
    }

    #[test]
    fn cross_entropy_matches_log_sum_exp() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let data: Vec<f64> = (0..30).map(|_| rng.random_range(-5.0..5.0)).collect();
        let labels: Vec<usize> = (0..10).map(|_| rng.random_range(0..3)).collect();
        let logits = Tensor::matrix(10, 3, data.clone()).unwrap();
        let mut oracle = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row = &data[i * 3..i * 3 + 3];
            let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
            oracle += lse - row[y];
        }
        oracle /= 10.0;
        let got = cross_entropy(&logits, &labels).unwrap().item().unwrap();
        assert!((got - oracle).abs() < 1e-10);
    }

    #[test]
    fn conv_model_forward_and_embeddings() {
        let arch = Architecture::small_conv(1, 6, 6, 3);
        let m = Model::new(&arch, 4).unwrap();
        assert_eq!(m.layers().len(), 3);
        assert_eq!(m.layers()[0].weights().shape(), &[4, 1, 3, 3]);
        assert_eq!(m.layers()[2].weights().shape(), &[8 * 2 * 2, 3]);
        let x = Tensor::matrix(2, 36, vec![0.25; 72]).unwrap();
        assert_eq!(m.forward(&x).unwrap().shape(), &[2, 3]);
        assert_eq!(m.embeddings(&x).unwrap().shape(), &[2, 32]);
    }

    #[test]
    fn embeddings_have_penultimate_width() {
        let m = Model::new(&Architecture::default_mlp(5, 2), 0).unwrap();
        let x = Tensor::matrix(3, 5, vec![1.0; 15]).unwrap();
        let e = m.embeddings(&x).unwrap();
        assert_eq!(e.shape(), &[3, 32]);
        // duplicated rows give duplicated embeddings
        assert_eq!(e.row(0), e.row(1));
    }
}
