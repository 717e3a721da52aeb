//! Show how the Dirichlet concentration parameter controls label skew:
//! the same dataset partitioned at beta 0.1 (heavy skew) and beta 1000
//! (near-uniform).
//!
//! ```bash
//! cargo run --example partition_skew
//! ```

use fedbalance::data::{alpha_weights, class_counts, dirichlet_partition, generate_synthetic};
use fedbalance::Result;

fn main() -> Result<()> {
    let dataset = generate_synthetic(5, 200, 8, 2.0, 7)?;

    for beta in [0.1, 1000.0] {
        println!("beta = {beta}");
        let shards = dirichlet_partition(&dataset, 6, beta, 42)?;
        println!("{:>7} | {:>6} {:>6} {:>6} {:>6} {:>6} | alpha", "client", 0, 1, 2, 3, 4);
        for shard in &shards {
            let counts = class_counts(shard, &dataset);
            let alpha = alpha_weights(&counts)?;
            print!("{:>7} |", shard.owner);
            for &n in counts.counts() {
                print!(" {n:>6}");
            }
            print!(" |");
            for a in alpha.values() {
                print!(" {a:.2}");
            }
            println!();
        }
        println!();
    }
    Ok(())
}
