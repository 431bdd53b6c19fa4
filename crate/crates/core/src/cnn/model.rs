use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layers::{
    conv2d_backward_impl, conv2d_forward, cross_entropy, dense_backward, dense_forward, dropout,
    dropout_backward, maxpool_backward, maxpool_forward, relu_backward, relu_forward, softmax,
    softmax_cross_entropy_grad, Mode, ParamGrads,
};
use super::tensor::{Scalar, Tensor};
use super::CnnError;
use crate::scene::mix_seed;

/// Height, width, channels of one input image.
pub type Dims = [usize; 3];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    /// `kernel x kernel`, stride 1, valid padding.
    Conv2D { filters: usize, kernel: usize },
    ReLU,
    /// 2x2, stride 2.
    MaxPool,
    Flatten,
    Dense { units: usize },
    Dropout { rate: f64 },
    Softmax,
}

impl LayerSpec {
    pub fn output_dims(&self, [h, w, c]: Dims) -> Result<Dims, CnnError> {
        match *self {
            LayerSpec::Conv2D { filters, kernel } => {
                if filters == 0 || kernel == 0 {
                    return Err(CnnError::Config("conv layer needs filters and kernel >= 1".into()));
                }
                if kernel > h || kernel > w {
                    return Err(CnnError::Shape(format!("kernel {kernel}x{kernel} larger than input {h}x{w}")));
                }
                Ok([h - kernel + 1, w - kernel + 1, filters])
            }
            LayerSpec::MaxPool => {
                if h < 2 || w < 2 {
                    return Err(CnnError::Shape(format!("pooling needs at least 2x2 input, got {h}x{w}")));
                }
                Ok([h / 2, w / 2, c])
            }
            LayerSpec::Flatten => {
                let n = h.checked_mul(w).and_then(|v| v.checked_mul(c)).ok_or(CnnError::DimOverflow)?;
                Ok([1, 1, n])
            }
            LayerSpec::Dense { units } => {
                if h != 1 || w != 1 {
                    return Err(CnnError::Shape(format!("dense layer needs flattened input, got {h}x{w}x{c}")));
                }
                if units == 0 {
                    return Err(CnnError::Config("dense layer needs at least one unit".into()));
                }
                Ok([1, 1, units])
            }
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(CnnError::Config(format!("dropout rate {rate} outside [0, 1)")));
                }
                Ok([h, w, c])
            }
            LayerSpec::ReLU | LayerSpec::Softmax => Ok([h, w, c]),
        }
    }

    /// Weight shape and bias length for layers that carry parameters.
    pub fn param_shape(&self, [_, _, c]: Dims) -> Option<([usize; 4], usize)> {
        match *self {
            LayerSpec::Conv2D { filters, kernel } => Some(([kernel, kernel, c, filters], filters)),
            LayerSpec::Dense { units } => Some(([1, 1, c, units], units)),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2D { .. } => "conv2d",
            LayerSpec::ReLU => "relu",
            LayerSpec::MaxPool => "maxpool",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Softmax => "softmax",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params<F> {
    pub weights: Tensor<F>,
    pub bias: Vec<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<F> {
    pub spec: LayerSpec,
    pub params: Option<Params<F>>,
    pub frozen: bool,
}

/// Gradients per layer; `None` for parameterless or frozen layers.
pub type Gradients<F> = Vec<Option<ParamGrads<F>>>;

#[derive(Debug, Clone)]
pub struct Backprop<F> {
    pub loss: F,
    pub probabilities: Tensor<F>,
    pub gradients: Gradients<F>,
}

enum Saved<F> {
    Input(Tensor<F>),
    Pool(Vec<usize>, [usize; 4]),
    Mask(Option<Vec<F>>),
    Shape([usize; 4]),
    Nothing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<F> {
    input_dims: Dims,
    layers: Vec<Layer<F>>,
    seed: u64,
}

/// The default three-block network: conv 3x3 with 8/16/32 filters, each
/// followed by ReLU and 2x2 max pooling, then flatten, optional dropout,
/// dense(2) and softmax.
pub fn standard_architecture(dropout_rate: f64) -> Vec<LayerSpec> {
    custom_architecture(&[8, 16, 32], 3, dropout_rate)
}

pub fn custom_architecture(filters: &[usize], kernel: usize, dropout_rate: f64) -> Vec<LayerSpec> {
    let mut specs = Vec::new();
    for &f in filters {
        specs.extend([LayerSpec::Conv2D { filters: f, kernel }, LayerSpec::ReLU, LayerSpec::MaxPool]);
    }
    specs.push(LayerSpec::Flatten);
    if dropout_rate > 0.0 {
        specs.push(LayerSpec::Dropout { rate: dropout_rate });
    }
    specs.extend([LayerSpec::Dense { units: 2 }, LayerSpec::Softmax]);
    specs
}

fn check_architecture(input_dims: Dims, specs: &[LayerSpec]) -> Result<Vec<Dims>, CnnError> {
    if input_dims.contains(&0) {
        return Err(CnnError::Shape(format!("input dims {input_dims:?} must be positive")));
    }
    let n = specs.len();
    if n < 2 || specs[n - 1] != LayerSpec::Softmax || specs[n - 2] != (LayerSpec::Dense { units: 2 }) {
        return Err(CnnError::Config("network must end with dense(2) followed by softmax".into()));
    }
    if specs[..n - 1].contains(&LayerSpec::Softmax) {
        return Err(CnnError::Config("softmax is only allowed as the final layer".into()));
    }
    let mut dims = vec![input_dims];
    for (i, spec) in specs.iter().enumerate() {
        let next = spec
            .output_dims(dims[i])
            .map_err(|e| CnnError::Config(format!("layer {i} ({}): {e}", spec.name())))?;
        dims.push(next);
    }
    Ok(dims)
}

impl<F: Scalar> Model<F> {
    /// Builds and initializes a network. Weights are He-normal, biases zero.
    pub fn new(input_dims: Dims, specs: &[LayerSpec], seed: u64) -> Result<Self, CnnError> {
        check_architecture(input_dims, specs)?;
        let layers = specs.iter().map(|&spec| Layer { spec, params: None, frozen: false }).collect();
        let mut model = Self { input_dims, layers, seed };
        model.reinitialize_from(0, seed);
        Ok(model)
    }

    pub fn standard(input_size: usize, dropout_rate: f64, seed: u64) -> Result<Self, CnnError> {
        Self::new([input_size, input_size, 1], &standard_architecture(dropout_rate), seed)
    }

    /// Assembles a model from stored layers, checking every parameter shape.
    pub fn from_parts(input_dims: Dims, layers: Vec<Layer<F>>, seed: u64) -> Result<Self, CnnError> {
        let specs: Vec<LayerSpec> = layers.iter().map(|l| l.spec).collect();
        let dims = check_architecture(input_dims, &specs)?;
        for (i, layer) in layers.iter().enumerate() {
            let expected = layer.spec.param_shape(dims[i]);
            let actual = layer.params.as_ref().map(|p| (p.weights.shape(), p.bias.len()));
            if expected != actual {
                return Err(CnnError::Shape(format!(
                    "layer {i}: parameters {actual:?}, expected {expected:?}"
                )));
            }
        }
        Ok(Self { input_dims, layers, seed })
    }

    pub fn input_dims(&self) -> Dims {
        self.input_dims
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[Layer<F>] {
        &self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    /// Output dims of every layer, starting with the input.
    pub fn layer_dims(&self) -> Vec<Dims> {
        check_architecture(self.input_dims, &self.specs()).expect("validated at construction")
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(|l| l.params.as_ref())
            .map(|p| p.weights.len() + p.bias.len())
            .sum()
    }

    pub fn trainable_param_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| !l.frozen)
            .filter_map(|l| l.params.as_ref())
            .map(|p| p.weights.len() + p.bias.len())
            .sum()
    }

    pub(crate) fn params_mut(&mut self, i: usize) -> Option<&mut Params<F>> {
        self.layers[i].params.as_mut()
    }

    /// Mutable weights and biases of one layer, if it has parameters.
    pub fn param_values_mut(&mut self, layer: usize) -> Option<(&mut [F], &mut [F])> {
        let p = self.layers.get_mut(layer)?.params.as_mut()?;
        Some((p.weights.data_mut(), p.bias.as_mut_slice()))
    }

    /// Marks the first `count` layers frozen and the rest trainable.
    pub fn freeze_first(&mut self, count: usize) -> Result<(), CnnError> {
        if count >= self.layers.len() {
            return Err(CnnError::Config(format!(
                "cannot freeze {count} of {} layers",
                self.layers.len()
            )));
        }
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.frozen = i < count;
        }
        Ok(())
    }

    pub fn set_frozen(&mut self, layer: usize, frozen: bool) {
        self.layers[layer].frozen = frozen;
    }

    /// Redraws the parameters of every layer at index `>= start`. Each
    /// layer uses its own stream derived from `(seed, layer index)`.
    pub fn reinitialize_from(&mut self, start: usize, seed: u64) {
        let dims = self.layer_dims();
        for (i, layer) in self.layers.iter_mut().enumerate().skip(start) {
            layer.params = layer.spec.param_shape(dims[i]).map(|(wshape, blen)| {
                let fan_in = wshape[0] * wshape[1] * wshape[2];
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, i as u64]));
                Params {
                    weights: Tensor::from_fn(wshape, |_| F::from_f64_lossy(normal.sample(&mut rng))),
                    bias: vec![F::zero(); blen],
                }
            });
        }
    }

    fn check_batch(&self, batch: &Tensor<F>) -> Result<(), CnnError> {
        let [_, h, w, c] = batch.shape();
        if [h, w, c] != self.input_dims {
            return Err(CnnError::Shape(format!(
                "batch items are {h}x{w}x{c}, model expects {:?}",
                self.input_dims
            )));
        }
        Ok(())
    }

    /// Class probabilities, shape `(n, 1, 1, 2)`. In `Train` mode dropout
    /// uses step 0; the trainer supplies the real step via [`Model::backward`].
    pub fn forward(&self, batch: &Tensor<F>, mode: Mode) -> Result<Tensor<F>, CnnError> {
        self.run_forward(batch, mode, 0, false).map(|(p, _)| p)
    }

    fn run_forward(
        &self,
        batch: &Tensor<F>,
        mode: Mode,
        step: u64,
        keep: bool,
    ) -> Result<(Tensor<F>, Vec<Saved<F>>), CnnError> {
        self.check_batch(batch)?;
        if !batch.all_finite() {
            return Err(CnnError::NonFinite { layer: None, context: "input batch".into() });
        }
        let mut saved = Vec::with_capacity(if keep { self.layers.len() } else { 0 });
        let mut x = batch.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let (y, s) = match layer.spec {
                LayerSpec::Conv2D { .. } => {
                    let p = layer.params.as_ref().expect("conv params");
                    (conv2d_forward(&x, &p.weights, &p.bias)?, Saved::Input(x))
                }
                LayerSpec::Dense { .. } => {
                    let p = layer.params.as_ref().expect("dense params");
                    (dense_forward(&x, &p.weights, &p.bias)?, Saved::Input(x))
                }
                LayerSpec::ReLU => (relu_forward(&x), Saved::Input(x)),
                LayerSpec::MaxPool => {
                    let shape = x.shape();
                    let (y, arg) = maxpool_forward(&x)?;
                    (y, Saved::Pool(arg, shape))
                }
                LayerSpec::Flatten => {
                    let shape = x.shape();
                    let n = x.batch();
                    let len = x.item_len();
                    (x.reshaped([n, 1, 1, len])?, Saved::Shape(shape))
                }
                LayerSpec::Dropout { rate } => {
                    let seed = mix_seed(&[self.seed, step, i as u64]);
                    let (y, mask) = dropout(&x, rate, mode, seed)?;
                    (y, Saved::Mask(mask))
                }
                LayerSpec::Softmax => (softmax(&x)?, Saved::Nothing),
            };
            if !y.all_finite() {
                return Err(CnnError::NonFinite {
                    layer: Some(i),
                    context: format!("{} output", layer.spec.name()),
                });
            }
            if keep {
                saved.push(s);
            }
            x = y;
        }
        Ok((x, saved))
    }

    /// Training-mode forward pass plus gradients of the mean cross-entropy.
    /// Dropout masks are drawn from `(model seed, step, layer)`.
    pub fn backward(&self, batch: &Tensor<F>, labels: &Tensor<F>, step: u64) -> Result<Backprop<F>, CnnError> {
        let (probs, mut saved) = self.run_forward(batch, Mode::Train, step, true)?;
        let loss = cross_entropy(&probs, labels)?;
        let mut grad = softmax_cross_entropy_grad(&probs, labels)?;
        let mut grads: Gradients<F> = vec![None; self.layers.len()];
        let first_trainable = self
            .layers
            .iter()
            .position(|l| !l.frozen && l.params.is_some());
        let Some(first) = first_trainable else {
            return Ok(Backprop { loss, probabilities: probs, gradients: grads });
        };

        // the softmax is folded into the loss gradient above
        for i in (first..self.layers.len() - 1).rev() {
            let layer = &self.layers[i];
            let need_input = i > first;
            let s = std::mem::replace(&mut saved[i], Saved::Nothing);
            grad = match (layer.spec, s) {
                (LayerSpec::Conv2D { .. }, Saved::Input(x)) => {
                    let p = layer.params.as_ref().expect("conv params");
                    let (pg, ig) = conv2d_backward_impl(&x, &p.weights, &grad, need_input)?;
                    if !layer.frozen {
                        grads[i] = Some(pg);
                    }
                    match ig {
                        Some(ig) => ig,
                        None => break,
                    }
                }
                (LayerSpec::Dense { .. }, Saved::Input(x)) => {
                    let p = layer.params.as_ref().expect("dense params");
                    let (ig, pg) = dense_backward(&x, &p.weights, &grad)?;
                    if !layer.frozen {
                        grads[i] = Some(pg);
                    }
                    ig
                }
                (LayerSpec::ReLU, Saved::Input(x)) => relu_backward(&x, &grad)?,
                (LayerSpec::MaxPool, Saved::Pool(arg, shape)) => maxpool_backward(&arg, &grad, shape)?,
                (LayerSpec::Flatten, Saved::Shape(shape)) => grad.reshaped(shape)?,
                (LayerSpec::Dropout { .. }, Saved::Mask(mask)) => dropout_backward(mask.as_deref(), &grad),
                (spec, _) => unreachable!("no saved state for layer {i} ({})", spec.name()),
            };
            if !grad.all_finite() {
                return Err(CnnError::NonFinite {
                    layer: Some(i),
                    context: format!("{} gradient", layer.spec.name()),
                });
            }
        }
        Ok(Backprop { loss, probabilities: probs, gradients: grads })
    }
}
