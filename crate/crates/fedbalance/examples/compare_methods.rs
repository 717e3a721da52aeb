//! Run fedavg, fedprox and fedbalance on the same skewed partition and
//! compare final accuracy and rounds-to-target.
//!
//! ```bash
//! cargo run --example compare_methods
//! ```

use fedbalance::config::{DataConfig, MethodKind, RunConfig};
use fedbalance::engine::run_experiment;
use fedbalance::metrics::rounds_to_target;
use fedbalance::Result;

fn main() -> Result<()> {
    let base = RunConfig {
        rounds: 25,
        local_epochs: 5,
        num_clients: 20,
        gamma: 0.2,
        beta: 0.1,
        batch_size: 8,
        lr: 0.12,
        momentum: 0.0,
        data: DataConfig {
            classes: 10,
            per_class: 300,
            test_per_class: 30,
            dim: 196,
            image: Some((1, 14, 14)),
            separation: 4.0,
            ..DataConfig::default()
        },
        ..RunConfig::default()
    };

    let (train, test) = base.data.load()?;

    let mut fedavg_final = None;
    let mut histories = Vec::new();
    for method in [MethodKind::FedAvg, MethodKind::FedProx, MethodKind::FedBalance] {
        let mut config = base.clone();
        config.method = method;
        let experiment = config.resolve(train.shape(), train.num_classes())?;
        let outcome = run_experiment(&experiment, &train, &test)?;
        let final_acc = outcome.records.last().map_or(0.0, |r| r.global_accuracy);
        if method == MethodKind::FedAvg {
            fedavg_final = Some(final_acc);
        }
        histories.push((method, final_acc, outcome.records));
    }

    let target = fedavg_final.expect("fedavg ran first");
    println!("target: fedavg final accuracy {target:.4}\n");
    println!("{:<12} {:>10} {:>18}", "method", "final acc", "rounds to target");
    for (method, final_acc, records) in &histories {
        let reached = rounds_to_target(records, target)
            .map(|r| r.to_string())
            .unwrap_or_else(|| "never".into());
        println!("{:<12} {:>10.4} {:>18}", method.name(), final_acc, reached);
    }
    Ok(())
}
