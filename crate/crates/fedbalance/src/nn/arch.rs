//! Architecture descriptors: a fixed menu of layers, validated shapes, a
//! deterministic flat parameter layout, and MAC counting.

use crate::error::{Error, Result};

/// Shape of the tensor entering the first layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputShape {
    /// `(channels, height, width)` image input.
    Image {
        channels: usize,
        height: usize,
        width: usize,
    },
    /// Flat feature vector.
    Flat { features: usize },
}

impl InputShape {
    /// Number of scalars per sample.
    pub fn size(&self) -> usize {
        match *self {
            InputShape::Image {
                channels,
                height,
                width,
            } => channels * height * width,
            InputShape::Flat { features } => features,
        }
    }
}

/// Shape of an activation tensor between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Image {
        channels: usize,
        height: usize,
        width: usize,
    },
    Flat {
        features: usize,
    },
}

impl Shape {
    pub fn size(&self) -> usize {
        match *self {
            Shape::Image {
                channels,
                height,
                width,
            } => channels * height * width,
            Shape::Flat { features } => features,
        }
    }
}

impl From<InputShape> for Shape {
    fn from(s: InputShape) -> Shape {
        match s {
            InputShape::Image {
                channels,
                height,
                width,
            } => Shape::Image {
                channels,
                height,
                width,
            },
            InputShape::Flat { features } => Shape::Flat { features },
        }
    }
}

/// One layer of the fixed menu.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Dense { in_dim: usize, out_dim: usize },
    Relu,
    /// 3x3-style convolution with same padding.
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
    },
    MaxPool2x2,
    Flatten,
}

impl LayerSpec {
    /// Convenience constructor for a stride-1 same-padded convolution.
    pub fn conv2d(in_ch: usize, out_ch: usize, kernel: usize) -> LayerSpec {
        LayerSpec::Conv2d {
            in_ch,
            out_ch,
            kernel,
            stride: 1,
        }
    }

    pub fn dense(in_dim: usize, out_dim: usize) -> LayerSpec {
        LayerSpec::Dense { in_dim, out_dim }
    }

    fn name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Relu => "relu",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::MaxPool2x2 => "maxpool2x2",
            LayerSpec::Flatten => "flatten",
        }
    }

    /// Output shape for a given input shape, or an error when incompatible.
    fn out_shape(&self, input: Shape, layer_idx: usize) -> Result<Shape> {
        let fail = |msg: String| {
            Err(Error::InvalidArch(format!(
                "layer {layer_idx} ({}): {msg}",
                self.name()
            )))
        };
        match *self {
            LayerSpec::Dense { in_dim, out_dim } => {
                if in_dim == 0 || out_dim == 0 {
                    return fail("dims must be positive".into());
                }
                match input {
                    Shape::Flat { features } if features == in_dim => {
                        Ok(Shape::Flat { features: out_dim })
                    }
                    other => fail(format!(
                        "expects flat input of {in_dim} features, got {other:?}"
                    )),
                }
            }
            LayerSpec::Relu => Ok(input),
            LayerSpec::Conv2d {
                in_ch,
                out_ch,
                kernel,
                stride,
            } => {
                if in_ch == 0 || out_ch == 0 || kernel == 0 || stride == 0 {
                    return fail("channels, kernel and stride must be positive".into());
                }
                match input {
                    Shape::Image {
                        channels,
                        height,
                        width,
                    } if channels == in_ch => Ok(Shape::Image {
                        channels: out_ch,
                        height: height.div_ceil(stride),
                        width: width.div_ceil(stride),
                    }),
                    other => fail(format!("expects {in_ch}-channel image, got {other:?}")),
                }
            }
            LayerSpec::MaxPool2x2 => match input {
                Shape::Image {
                    channels,
                    height,
                    width,
                } if height >= 2 && width >= 2 => Ok(Shape::Image {
                    channels,
                    height: height / 2,
                    width: width / 2,
                }),
                other => fail(format!("expects image of at least 2x2, got {other:?}")),
            },
            LayerSpec::Flatten => Ok(Shape::Flat {
                features: input.size(),
            }),
        }
    }

    /// Number of parameters (weights + biases) this layer owns.
    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Dense { in_dim, out_dim } => in_dim * out_dim + out_dim,
            LayerSpec::Conv2d {
                in_ch,
                out_ch,
                kernel,
                ..
            } => out_ch * in_ch * kernel * kernel + out_ch,
            _ => 0,
        }
    }
}

/// Immutable description of a model: layers, input shape, class count.
///
/// Validated once at construction; the boundary shapes between layers are
/// precomputed so forward/backward never re-derive them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchDescriptor {
    layers: Vec<LayerSpec>,
    input_shape: InputShape,
    num_classes: usize,
    /// `boundaries[i]` is the shape entering layer `i`; the last entry is the
    /// output shape.
    boundaries: Vec<Shape>,
    param_count: usize,
}

impl ArchDescriptor {
    pub fn new(
        layers: Vec<LayerSpec>,
        input_shape: InputShape,
        num_classes: usize,
    ) -> Result<ArchDescriptor> {
        if num_classes == 0 {
            return Err(Error::InvalidArch("num_classes must be positive".into()));
        }
        if input_shape.size() == 0 {
            return Err(Error::InvalidArch("input shape has zero size".into()));
        }
        let mut boundaries = Vec::with_capacity(layers.len() + 1);
        let mut shape: Shape = input_shape.into();
        boundaries.push(shape);
        for (i, layer) in layers.iter().enumerate() {
            shape = layer.out_shape(shape, i)?;
            boundaries.push(shape);
        }
        match shape {
            Shape::Flat { features } if features == num_classes => {}
            other => {
                return Err(Error::InvalidArch(format!(
                    "final output is {other:?}, expected flat vector of {num_classes} classes"
                )));
            }
        }
        let param_count = layers.iter().map(LayerSpec::param_count).sum();
        Ok(ArchDescriptor {
            layers,
            input_shape,
            num_classes,
            boundaries,
            param_count,
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_shape(&self) -> InputShape {
        self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Shape entering layer `i`; index `layers().len()` is the output shape.
    pub fn boundary(&self, i: usize) -> Shape {
        self.boundaries[i]
    }

    /// Total number of parameters across all layers.
    pub fn param_count(&self) -> usize {
        self.param_count
    }

    /// Offset of layer `i`'s parameter block in the flat vector.
    pub(crate) fn param_offset(&self, i: usize) -> usize {
        self.layers[..i].iter().map(LayerSpec::param_count).sum()
    }
}

/// Multiply-accumulate count for a single-sample forward pass.
///
/// Dense contributes `in * out`; conv2d contributes
/// `out_positions * kernel_area * in_ch * out_ch`; relu, pooling and flatten
/// are free. Invariant to parameter values, additive over layers.
pub fn count_macs(arch: &ArchDescriptor) -> u64 {
    let mut total = 0u64;
    for (i, layer) in arch.layers().iter().enumerate() {
        total += match *layer {
            LayerSpec::Dense { in_dim, out_dim } => (in_dim * out_dim) as u64,
            LayerSpec::Conv2d {
                in_ch,
                out_ch,
                kernel,
                ..
            } => {
                let out = arch.boundary(i + 1);
                let (oh, ow) = match out {
                    Shape::Image { height, width, .. } => (height, width),
                    Shape::Flat { .. } => unreachable!("conv output is an image"),
                };
                (oh * ow * kernel * kernel * in_ch * out_ch) as u64
            }
            _ => 0,
        };
    }
    total
}
