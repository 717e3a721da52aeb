//! Verify the hand-written backward pass against central finite differences
//! on a small conv network.
//!
//! ```bash
//! cargo run --example gradient_check
//! ```

use fedbalance::nn::{
    backward, forward, init_model, softmax_cross_entropy, ArchDescriptor, Batch, InputShape,
    LayerSpec, ModelParams,
};
use fedbalance::Result;

fn loss(params: &ModelParams, batch: &Batch) -> Result<f64> {
    let fwd = forward(params, batch)?;
    Ok(softmax_cross_entropy(&fwd.logits, batch.labels())?.0)
}

fn main() -> Result<()> {
    let arch = ArchDescriptor::new(
        vec![
            LayerSpec::conv2d(1, 4, 3),
            LayerSpec::Relu,
            LayerSpec::MaxPool2x2,
            LayerSpec::Flatten,
            LayerSpec::dense(4 * 4 * 4, 3),
        ],
        InputShape::Image {
            channels: 1,
            height: 8,
            width: 8,
        },
        3,
    )?;
    let mut params = init_model(&arch, 17);

    let inputs: Vec<f64> = (0..2 * 64).map(|i| (i % 17) as f64 / 17.0).collect();
    let batch = Batch::new(
        inputs,
        InputShape::Image {
            channels: 1,
            height: 8,
            width: 8,
        },
        vec![0, 2],
    )?;

    let fwd = forward(&params, &batch)?;
    let (_, dlogits) = softmax_cross_entropy(&fwd.logits, batch.labels())?;
    let grad = backward(&params, &fwd.tape, &dlogits)?;

    let eps = 1e-4;
    let mut worst = 0.0_f64;
    #[allow(clippy::needless_range_loop)]
    for p in 0..arch.param_count() {
        let orig = params.values()[p];
        params.values_mut()[p] = orig + eps;
        let plus = loss(&params, &batch)?;
        params.values_mut()[p] = orig - eps;
        let minus = loss(&params, &batch)?;
        params.values_mut()[p] = orig;
        let fd = (plus - minus) / (2.0 * eps);
        let rel = (grad[p] - fd).abs() / grad[p].abs().max(fd.abs()).max(1e-8);
        worst = worst.max(rel);
    }

    println!(
        "checked {} parameters, worst relative error vs finite differences: {worst:.2e}",
        arch.param_count()
    );
    assert!(worst < 1e-3);
    println!("backward pass agrees with the numerical gradient");
    Ok(())
}
