//! The fused-logits mechanics on a constructed client: a majority class the
//! weak learner classifies confidently, and a minority class it starves.
//!
//! ```bash
//! cargo run --example logits_fusion
//! ```

use fedbalance::data::AlphaWeights;
use fedbalance::methods::{fedbalance_loss, fused_logits};
use fedbalance::nn::{softmax_cross_entropy, Mat};
use fedbalance::Result;

fn main() -> Result<()> {
    // A client holding 90% class 0, 10% class 1, nothing of class 2.
    let alpha = AlphaWeights::from_values(vec![0.9, 0.1, 0.0])?;

    // The shared model is mildly confident; the private weak learner has
    // overfit the local majority class.
    let phi = Mat::from_vec(2, 3, vec![2.0, 0.5, 0.3, 0.8, 1.0, 0.6])?;
    let psi = Mat::from_vec(2, 3, vec![4.0, -1.0, -2.0, 3.5, -0.5, -1.5])?;

    let fused = fused_logits(&phi, &psi, &alpha)?;
    println!("alpha = {:?}", alpha.values());
    for (row, label) in [(0usize, 0usize), (1, 1)] {
        println!(
            "sample {row} (true class {label}): phi {:?} -> fused {:?}",
            phi.row(row),
            fused.row(row)
        );
    }

    // Majority-class sample: the fused logit for class 0 is boosted, so the
    // loss (and hence the shared model's attention) shrinks.
    let (plain_majority, _) = softmax_cross_entropy(&phi, &[0, 1])?;
    let result = fedbalance_loss(&phi, &psi, &alpha, &[0, 1])?;
    println!("\nplain cross-entropy  : {plain_majority:.4}");
    println!("fused cross-entropy  : {:.4}", result.loss);

    // Minority-class sample (row 1, class 1): the weak learner boosts the
    // majority logit instead, so the gradient on the true class grows.
    let (_, plain_grad) = softmax_cross_entropy(&phi, &[0, 1])?;
    println!(
        "\ntrue-class gradient on the minority sample: plain {:.4}, fused {:.4}",
        plain_grad.row(1)[1].abs(),
        result.dlogits_phi.row(1)[1].abs()
    );
    println!("the weak learner's own gradient is alpha-scaled: {:?}", {
        let dpsi = result.dlogits_psi.unwrap();
        dpsi.row(1).to_vec()
    });
    Ok(())
}
