//! Model parameters, initialization, optimizer state and batches.

use rand::RngExt;

use crate::error::{Error, Result};
use crate::nn::arch::{ArchDescriptor, InputShape, LayerSpec};
use crate::seed;

/// Flat parameter vector plus its architecture.
///
/// The layout is a pure function of the architecture: layers in order, each
/// layer's weights followed by its biases. Two models with the same
/// architecture are element-wise comparable and averageable.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: ArchDescriptor,
    values: Vec<f64>,
}

impl ModelParams {
    /// Wraps an existing flat vector; length must match the architecture.
    pub fn from_values(arch: ArchDescriptor, values: Vec<f64>) -> Result<ModelParams> {
        if values.len() != arch.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "parameter vector has {} values, architecture needs {}",
                values.len(),
                arch.param_count()
            )));
        }
        Ok(ModelParams { arch, values })
    }

    pub fn arch(&self) -> &ArchDescriptor {
        &self.arch
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Parameter block of layer `i`: `(weights, biases)`.
    pub(crate) fn layer_params(&self, i: usize) -> (&[f64], &[f64]) {
        let spec = self.arch.layers()[i];
        let off = self.arch.param_offset(i);
        split_layer(&self.values[off..off + spec.param_count()], spec)
    }
}

fn split_layer(block: &[f64], spec: LayerSpec) -> (&[f64], &[f64]) {
    let bias_len = match spec {
        LayerSpec::Dense { out_dim, .. } => out_dim,
        LayerSpec::Conv2d { out_ch, .. } => out_ch,
        _ => 0,
    };
    block.split_at(block.len() - bias_len)
}

/// Initializes a model: weights uniform on `(-1/sqrt(fan_in), 1/sqrt(fan_in))`
/// per layer, biases zero. Identical `(arch, seed)` pairs produce
/// bit-identical parameters.
pub fn init_model(arch: &ArchDescriptor, seed: u64) -> ModelParams {
    let mut rng = seed::stream(seed, "model-init", 0);
    let mut values = Vec::with_capacity(arch.param_count());
    for layer in arch.layers() {
        let (weight_len, bias_len, fan_in) = match *layer {
            LayerSpec::Dense { in_dim, out_dim } => (in_dim * out_dim, out_dim, in_dim),
            LayerSpec::Conv2d {
                in_ch,
                out_ch,
                kernel,
                ..
            } => (
                out_ch * in_ch * kernel * kernel,
                out_ch,
                in_ch * kernel * kernel,
            ),
            _ => continue,
        };
        let limit = 1.0 / (fan_in as f64).sqrt();
        values.extend((0..weight_len).map(|_| rng.random_range(-limit..limit)));
        values.extend(std::iter::repeat_n(0.0, bias_len));
    }
    ModelParams {
        arch: arch.clone(),
        values,
    }
}

/// SGD state: classical momentum with L2 weight decay folded into the
/// gradient before the buffer update.
#[derive(Debug, Clone)]
pub struct OptState {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    buffer: Vec<f64>,
}

impl OptState {
    /// Zero-initialized momentum buffer sized for `param_count` parameters.
    pub fn new(lr: f64, momentum: f64, weight_decay: f64, param_count: usize) -> OptState {
        OptState {
            lr,
            momentum,
            weight_decay,
            buffer: vec![0.0; param_count],
        }
    }

    pub fn buffer(&self) -> &[f64] {
        &self.buffer
    }
}

/// One SGD step:
/// `buffer <- momentum * buffer + (grad + weight_decay * params)`,
/// `params <- params - lr * buffer`.
pub fn sgd_step(params: &mut ModelParams, grad: &[f64], opt: &mut OptState) -> Result<()> {
    if grad.len() != params.values.len() || opt.buffer.len() != params.values.len() {
        return Err(Error::ShapeMismatch(format!(
            "sgd_step: params {}, grad {}, buffer {}",
            params.values.len(),
            grad.len(),
            opt.buffer.len()
        )));
    }
    if let Some(pos) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient(format!(
            "component {pos} is {}",
            grad[pos]
        )));
    }
    let (lr, momentum, wd) = (opt.lr, opt.momentum, opt.weight_decay);
    for ((p, b), g) in params
        .values
        .iter_mut()
        .zip(opt.buffer.iter_mut())
        .zip(grad)
    {
        *b = momentum * *b + (g + wd * *p);
        *p -= lr * *b;
    }
    Ok(())
}

/// A mini-batch: dense inputs of `len` samples plus integer class labels.
#[derive(Debug, Clone)]
pub struct Batch {
    inputs: Vec<f64>,
    shape: InputShape,
    labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Vec<f64>, shape: InputShape, labels: Vec<usize>) -> Result<Batch> {
        if labels.is_empty() {
            return Err(Error::InvalidArgument("batch must be non-empty".into()));
        }
        if inputs.len() != labels.len() * shape.size() {
            return Err(Error::ShapeMismatch(format!(
                "batch inputs have {} values, expected {} samples x {}",
                inputs.len(),
                labels.len(),
                shape.size()
            )));
        }
        Ok(Batch {
            inputs,
            shape,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn shape(&self) -> InputShape {
        self.shape
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::arch::count_macs;

    fn dense_arch(inp: usize, out: usize) -> ArchDescriptor {
        ArchDescriptor::new(
            vec![LayerSpec::dense(inp, out)],
            InputShape::Flat { features: inp },
            out,
        )
        .unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let arch = dense_arch(4, 2);
        let a = init_model(&arch, 7);
        let b = init_model(&arch, 7);
        assert_eq!(a.values(), b.values());
        let c = init_model(&arch, 8);
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn biases_start_at_zero() {
        let arch = ArchDescriptor::new(
            vec![
                LayerSpec::conv2d(1, 3, 3),
                LayerSpec::Flatten,
                LayerSpec::dense(3 * 4 * 4, 2),
            ],
            InputShape::Image {
                channels: 1,
                height: 4,
                width: 4,
            },
            2,
        )
        .unwrap();
        let model = init_model(&arch, 11);
        for i in 0..arch.layers().len() {
            if arch.layers()[i].param_count() > 0 {
                let (_, biases) = model.layer_params(i);
                assert!(biases.iter().all(|&b| b == 0.0));
            }
        }
    }

    #[test]
    fn init_weight_mean_within_three_standard_errors() {
        // Uniform(-L, L) with L = 1/sqrt(100) has sd L/sqrt(3); the mean of
        // the 1000 dense weights must fall within 3 standard errors of 0.
        let arch = dense_arch(100, 10);
        let model = init_model(&arch, 3);
        let (weights, _) = model.layer_params(0);
        assert_eq!(weights.len(), 1000);
        let limit = 1.0 / 10.0;
        let sd = limit / 3.0_f64.sqrt();
        let se = sd / (weights.len() as f64).sqrt();
        let mean = weights.iter().sum::<f64>() / weights.len() as f64;
        assert!(
            mean.abs() < 3.0 * se,
            "mean {mean} outside 3 standard errors {}",
            3.0 * se
        );
        assert!(weights.iter().all(|w| w.abs() < limit));
    }

    #[test]
    fn sgd_plain_step() {
        let arch = dense_arch(1, 1); // 1 weight + 1 bias
        let mut params = ModelParams::from_values(arch.clone(), vec![1.0, 0.0]).unwrap();
        let mut opt = OptState::new(0.1, 0.0, 0.0, 2);
        sgd_step(&mut params, &[0.5, 0.0], &mut opt).unwrap();
        assert_eq!(params.values()[0], 0.95);
    }

    #[test]
    fn sgd_zero_grad_is_fixed_point() {
        let arch = dense_arch(1, 1);
        let mut params = ModelParams::from_values(arch, vec![2.0, -1.0]).unwrap();
        let mut opt = OptState::new(0.5, 0.9, 0.0, 2);
        sgd_step(&mut params, &[0.0, 0.0], &mut opt).unwrap();
        assert_eq!(params.values(), &[2.0, -1.0]);
    }

    #[test]
    fn sgd_momentum_recurrence() {
        let arch = dense_arch(1, 1);
        let mut params = ModelParams::from_values(arch, vec![0.0, 0.0]).unwrap();
        let mut opt = OptState::new(0.1, 0.9, 0.0, 2);
        sgd_step(&mut params, &[1.0, 0.0], &mut opt).unwrap();
        assert!((params.values()[0] - (-0.1)).abs() < 1e-15);
        sgd_step(&mut params, &[1.0, 0.0], &mut opt).unwrap();
        assert!((params.values()[0] - (-0.29)).abs() < 1e-15);
    }

    #[test]
    fn sgd_rejects_non_finite_gradient() {
        let arch = dense_arch(1, 1);
        let mut params = ModelParams::from_values(arch, vec![0.0, 0.0]).unwrap();
        let mut opt = OptState::new(0.1, 0.0, 0.0, 2);
        let err = sgd_step(&mut params, &[f64::NAN, 0.0], &mut opt).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(_)));
    }

    #[test]
    fn layer_param_spans_reassemble_the_flat_vector() {
        let arch = ArchDescriptor::new(
            vec![
                LayerSpec::conv2d(1, 2, 3),
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::dense(2 * 4 * 4, 3),
            ],
            InputShape::Image {
                channels: 1,
                height: 4,
                width: 4,
            },
            3,
        )
        .unwrap();
        let model = init_model(&arch, 4);
        let mut rebuilt = Vec::new();
        for i in 0..arch.layers().len() {
            if arch.layers()[i].param_count() > 0 {
                let (w, b) = model.layer_params(i);
                rebuilt.extend_from_slice(w);
                rebuilt.extend_from_slice(b);
            }
        }
        assert_eq!(rebuilt, model.values());
    }

    #[test]
    fn macs_additive_over_ensemble() {
        let phi = dense_arch(100, 10);
        let psi = dense_arch(20, 10);
        assert_eq!(count_macs(&phi) + count_macs(&psi), 1000 + 200);
    }
}
