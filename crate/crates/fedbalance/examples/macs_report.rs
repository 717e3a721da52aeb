//! MAC accounting for the registry architectures: per-model counts and the
//! ensemble overhead of carrying a private weak learner.
//!
//! ```bash
//! cargo run --example macs_report
//! ```

use fedbalance::nn::count_macs;
use fedbalance::registry::{build, ARCH_NAMES, DEFAULT_CLASSES, DEFAULT_INPUT};
use fedbalance::runner::macs_table;
use fedbalance::Result;

fn main() -> Result<()> {
    println!("single-sample MACs at 1x28x28, 10 classes\n");
    for name in ARCH_NAMES {
        let arch = build(name, DEFAULT_INPUT, DEFAULT_CLASSES)?;
        println!("{name:<12} {:>10} MACs", count_macs(&arch));
    }

    println!("\nfedbalance ensemble (shared model + weak learner):\n");
    print!(
        "{}",
        macs_table(&["cnn-small".to_string(), "mlp-weak".to_string()])?
    );
    Ok(())
}
