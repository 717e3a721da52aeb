//! Train on real MNIST IDX files.
//!
//! Expects the four uncompressed IDX files:
//!
//! ```bash
//! cargo run --example mnist_idx -- \
//!     train-images-idx3-ubyte train-labels-idx1-ubyte \
//!     t10k-images-idx3-ubyte t10k-labels-idx1-ubyte
//! ```

use std::path::PathBuf;

use fedbalance::config::{DataConfig, DataSource, MethodKind, RunConfig};
use fedbalance::engine::run_experiment;
use fedbalance::Result;

fn main() -> Result<()> {
    let args: Vec<PathBuf> = std::env::args().skip(1).map(PathBuf::from).collect();
    let [train_images, train_labels, test_images, test_labels] = args.as_slice() else {
        eprintln!(
            "usage: mnist_idx <train-images> <train-labels> <test-images> <test-labels>\n\
             (uncompressed IDX files; gunzip the standard MNIST downloads first)"
        );
        std::process::exit(2);
    };

    let config = RunConfig {
        method: MethodKind::FedBalance,
        rounds: 10,
        local_epochs: 2,
        num_clients: 20,
        gamma: 0.2,
        beta: 0.1,
        batch_size: 32,
        lr: 0.05,
        momentum: 0.0,
        data: DataConfig {
            source: DataSource::Idx,
            image: None, // IDX files are already image-shaped
            train_images: Some(train_images.clone()),
            train_labels: Some(train_labels.clone()),
            test_images: Some(test_images.clone()),
            test_labels: Some(test_labels.clone()),
            ..DataConfig::default()
        },
        ..RunConfig::default()
    };

    let (train, test) = config.data.load()?;
    println!(
        "loaded {} train / {} test images of {:?}",
        train.len(),
        test.len(),
        train.shape()
    );

    let experiment = config.resolve(train.shape(), train.num_classes())?;
    let outcome = run_experiment(&experiment, &train, &test)?;
    for r in &outcome.records {
        println!(
            "round {:>3}: accuracy {:.4} ({:.1}s)",
            r.round, r.global_accuracy, r.elapsed_seconds
        );
    }
    Ok(())
}
