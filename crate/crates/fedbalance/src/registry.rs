//! Built-in architecture registry. Names are stable for config reference.

use crate::error::{Error, Result};
use crate::nn::{ArchDescriptor, InputShape, LayerSpec};

/// Registry names, in display order.
pub const ARCH_NAMES: &[&str] = &["cnn-small", "mlp-weak", "linear"];

/// Input shape used when a command needs a concrete arch without a dataset.
pub const DEFAULT_INPUT: InputShape = InputShape::Image {
    channels: 1,
    height: 28,
    width: 28,
};

pub const DEFAULT_CLASSES: usize = 10;

/// Instantiates a registered architecture for the given input shape and
/// class count.
///
/// - `cnn-small`: two 3x3 conv + pool stages, then a dense head; the shared
///   strong learner.
/// - `mlp-weak`: a 32-unit single hidden layer; the private weak learner.
/// - `linear`: a bare dense layer.
pub fn build(name: &str, input: InputShape, num_classes: usize) -> Result<ArchDescriptor> {
    match name {
        "cnn-small" => {
            let InputShape::Image {
                channels,
                height,
                width,
            } = input
            else {
                return Err(Error::InvalidArch(
                    "cnn-small needs an image input shape; flat data can be viewed as an \
                     image via the data config"
                        .into(),
                ));
            };
            let (h1, w1) = (height / 2, width / 2);
            let (h2, w2) = (h1 / 2, w1 / 2);
            ArchDescriptor::new(
                vec![
                    LayerSpec::conv2d(channels, 8, 3),
                    LayerSpec::Relu,
                    LayerSpec::MaxPool2x2,
                    LayerSpec::conv2d(8, 16, 3),
                    LayerSpec::Relu,
                    LayerSpec::MaxPool2x2,
                    LayerSpec::Flatten,
                    LayerSpec::dense(16 * h2 * w2, num_classes),
                ],
                input,
                num_classes,
            )
        }
        "mlp-weak" => ArchDescriptor::new(
            vec![
                LayerSpec::Flatten,
                LayerSpec::dense(input.size(), 32),
                LayerSpec::Relu,
                LayerSpec::dense(32, num_classes),
            ],
            input,
            num_classes,
        ),
        "linear" => ArchDescriptor::new(
            vec![
                LayerSpec::Flatten,
                LayerSpec::dense(input.size(), num_classes),
            ],
            input,
            num_classes,
        ),
        other => Err(Error::UnknownArch(other.to_string())),
    }
}
