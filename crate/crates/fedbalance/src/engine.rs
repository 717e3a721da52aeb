//! Round-based orchestration: client sampling, local training of the shared
//! model (and the private weak learner under fedbalance), sample-count
//! weighted aggregation of the shared model only, and broadcast.

use std::time::Instant;

use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::data::{alpha_weights, class_counts, dirichlet_partition, AlphaWeights, ClassCounts, Dataset, Shard};
use crate::error::{Error, Result};
use crate::methods::{local_loss_step, MethodSpec};
use crate::metrics::{accuracy, kl_divergence, mean_per_class_accuracy, RoundRecord};
use crate::nn::{init_model, sgd_step, ArchDescriptor, ModelParams, OptState};
use crate::seed;

/// Every knob of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub num_clients: usize,
    /// Fraction of clients sampled per round, in `(0, 1]`.
    pub sample_fraction: f64,
    /// Dirichlet concentration for the label-skew partition.
    pub beta: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub method: MethodSpec,
    pub arch: ArchDescriptor,
    pub seed: u64,
    pub eval_every: usize,
    pub target_accuracy: Option<f64>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, msg: String| {
            Err(Error::InvalidArgument(format!("{key}: {msg}")))
        };
        if self.num_clients == 0 {
            return fail("num_clients", "must be at least 1".into());
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return fail(
                "gamma",
                format!("{} is outside (0, 1]", self.sample_fraction),
            );
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return fail("beta", format!("{} must be positive", self.beta));
        }
        if self.batch_size == 0 {
            return fail("batch_size", "must be at least 1".into());
        }
        if self.local_epochs == 0 {
            return fail("local_epochs", "must be at least 1".into());
        }
        if self.eval_every == 0 {
            return fail("eval_every", "must be at least 1".into());
        }
        for (key, v) in [
            ("lr", self.lr),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return fail(key, format!("{v} must be finite and non-negative"));
            }
        }
        if let Some(t) = self.target_accuracy {
            if !t.is_finite() {
                return fail("target_accuracy", format!("{t} must be finite"));
            }
        }
        Ok(())
    }

    /// Number of clients sampled per round: `round(gamma * M)`, at least 1.
    pub fn clients_per_round(&self) -> usize {
        ((self.sample_fraction * self.num_clients as f64).round() as usize)
            .clamp(1, self.num_clients)
    }
}

/// One client: its shard, class statistics, fusion weights, private weak
/// learner (fedbalance only) and its own shuffle stream. The weak learner and
/// its optimizer state persist across rounds and never leave the client.
#[derive(Debug, Clone)]
pub struct ClientState {
    id: usize,
    shard: Shard,
    counts: ClassCounts,
    alpha: AlphaWeights,
    psi: Option<ModelParams>,
    psi_opt: Option<OptState>,
    rng: ChaCha12Rng,
}

impl ClientState {
    /// Derives a client from its shard: exact class counts, fusion weights,
    /// a freshly initialized weak learner when the method calls for one, and
    /// the client's own seeded stream.
    pub fn new(
        id: usize,
        shard: Shard,
        dataset: &Dataset,
        config: &ExperimentConfig,
    ) -> Result<ClientState> {
        let counts = class_counts(&shard, dataset);
        let alpha = alpha_weights(&counts)?;
        let (psi, psi_opt) = match &config.method {
            MethodSpec::FedBalance { weak_arch } => {
                let psi = init_model(weak_arch, seed::derive(config.seed, "psi-init", id as u64));
                let opt = OptState::new(
                    config.lr,
                    config.momentum,
                    config.weight_decay,
                    weak_arch.param_count(),
                );
                (Some(psi), Some(opt))
            }
            _ => (None, None),
        };
        Ok(ClientState {
            id,
            shard,
            counts,
            alpha,
            psi,
            psi_opt,
            rng: seed::stream(config.seed, "client", id as u64),
        })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shard(&self) -> &Shard {
        &self.shard
    }

    pub fn counts(&self) -> &ClassCounts {
        &self.counts
    }

    pub fn alpha(&self) -> &AlphaWeights {
        &self.alpha
    }

    pub fn psi(&self) -> Option<&ModelParams> {
        self.psi.as_ref()
    }
}

/// Server-side state: the shared model and the round counter.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub global_model: ModelParams,
    pub round: usize,
}

/// Uniform sample without replacement of `round(gamma * m)` client ids,
/// ascending, deterministic under the round's stream.
pub fn sample_clients(m: usize, gamma: f64, rng: &mut ChaCha12Rng) -> Vec<usize> {
    use rand::RngExt;
    let k = ((gamma * m as f64).round() as usize).clamp(1, m);
    let mut ids: Vec<usize> = (0..m).collect();
    for i in 0..k {
        let j = rng.random_range(i..m);
        ids.swap(i, j);
    }
    let mut chosen = ids[..k].to_vec();
    chosen.sort_unstable();
    chosen
}

/// Result of one client's local training pass.
#[derive(Debug, Clone)]
pub struct LocalTrainOutcome {
    /// The trained copy of the broadcast shared model.
    pub phi: ModelParams,
    /// Mean training loss of each local epoch.
    pub epoch_losses: Vec<f64>,
    /// Optimizer steps taken (`local_epochs * ceil(shard / batch_size)`).
    pub steps: usize,
    /// Mean KL(local softmax || fused softmax) over the pass's batches;
    /// present under fedbalance.
    pub mean_kl: Option<f64>,
}

/// Trains a copy of the broadcast model on the client's shard for
/// `local_epochs` epochs of mini-batch SGD (shuffled per epoch from the
/// client's stream). Under fedbalance the persistent weak learner trains
/// alongside from the same fused loss. Server state is never touched.
pub fn local_train(
    client: &mut ClientState,
    global_phi: &ModelParams,
    dataset: &Dataset,
    config: &ExperimentConfig,
) -> Result<LocalTrainOutcome> {
    if client.shard.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "client {} has an empty shard",
            client.id
        )));
    }
    let mut phi = global_phi.clone();
    let mut phi_opt = OptState::new(
        config.lr,
        config.momentum,
        config.weight_decay,
        phi.arch().param_count(),
    );
    let mut epoch_losses = Vec::with_capacity(config.local_epochs);
    let mut steps = 0usize;
    let mut kl_sum = 0.0;
    let mut kl_batches = 0usize;

    for _ in 0..config.local_epochs {
        let mut order = client.shard.indices.clone();
        crate::data::shuffle(&mut order, &mut client.rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch = dataset.batch(chunk)?;
            let step = local_loss_step(
                &config.method,
                &phi,
                client.psi.as_ref(),
                &client.alpha,
                global_phi,
                &batch,
            )?;
            if !step.loss.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "client {}: training diverged (loss {})",
                    client.id, step.loss
                )));
            }
            if let Some((phi_probs, fused_probs)) = &step.probs {
                kl_sum += kl_divergence(phi_probs, fused_probs)?;
                kl_batches += 1;
            }
            sgd_step(&mut phi, &step.phi_grad, &mut phi_opt)?;
            if let (Some(psi), Some(psi_grad), Some(psi_opt)) = (
                client.psi.as_mut(),
                step.psi_grad.as_ref(),
                client.psi_opt.as_mut(),
            ) {
                sgd_step(psi, psi_grad, psi_opt)?;
            }
            epoch_loss += step.loss;
            batches += 1;
            steps += 1;
        }
        epoch_losses.push(epoch_loss / batches as f64);
    }

    Ok(LocalTrainOutcome {
        phi,
        epoch_losses,
        steps,
        mean_kl: (kl_batches > 0).then(|| kl_sum / kl_batches as f64),
    })
}

/// Element-wise average of the updates weighted by sample counts
/// `n_i / sum(n_j)`.
///
/// Computed as the first update plus weighted deviations from it, which is
/// algebraically the same (the weights sum to 1) and keeps the average
/// bit-exact when every update is identical.
pub fn aggregate(updates: &[(ModelParams, u64)]) -> Result<ModelParams> {
    let Some((first, _)) = updates.first() else {
        return Err(Error::InvalidArgument(
            "cannot aggregate an empty update list".into(),
        ));
    };
    if updates.iter().any(|(_, n)| *n == 0) {
        return Err(Error::InvalidArgument(
            "aggregation weights require positive sample counts".into(),
        ));
    }
    if updates.iter().any(|(m, _)| m.arch() != first.arch()) {
        return Err(Error::ShapeMismatch(
            "aggregation inputs have mismatched architectures".into(),
        ));
    }
    let total: u64 = updates.iter().map(|(_, n)| n).sum();
    let mut values = first.values().to_vec();
    for (model, n) in &updates[1..] {
        let w = *n as f64 / total as f64;
        for (acc, (v, base)) in values.iter_mut().zip(model.values().iter().zip(first.values())) {
            *acc += w * (v - base);
        }
    }
    ModelParams::from_values(first.arch().clone(), values)
}

/// What the engine exposes to a round observer: the round's sampled ids, the
/// broadcast model, the aggregation inputs, and the aggregated result.
pub struct RoundAudit<'a> {
    pub round: usize,
    pub sampled: &'a [usize],
    pub broadcast: &'a ModelParams,
    pub updates: &'a [(ModelParams, u64)],
    pub aggregated: &'a ModelParams,
}

/// Full history plus the final shared model.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub records: Vec<RoundRecord>,
    pub final_model: ModelParams,
}

/// The experiment's client shards: a Dirichlet label-skew partition from the
/// config's derived partition stream, or everything on client 0 when there
/// is a single client.
pub fn build_shards(config: &ExperimentConfig, train: &Dataset) -> Result<Vec<Shard>> {
    if config.num_clients == 1 {
        return Ok(vec![Shard {
            owner: 0,
            indices: (0..train.len()).collect(),
        }]);
    }
    dirichlet_partition(
        train,
        config.num_clients,
        config.beta,
        seed::derive(config.seed, "partition", 0),
    )
}

/// Runs `rounds` federated rounds: sample, broadcast, locally train each
/// sampled client (in parallel), aggregate, and evaluate on the held-out test
/// set every `eval_every` rounds (and on the final round). Weak learners and
/// their optimizer states persist per client across rounds.
pub fn run_experiment(
    config: &ExperimentConfig,
    train: &Dataset,
    test: &Dataset,
) -> Result<ExperimentOutcome> {
    run_experiment_observed(config, train, test, None)
}

/// [`run_experiment`] with an audit hook invoked after each aggregation.
pub fn run_experiment_observed(
    config: &ExperimentConfig,
    train: &Dataset,
    test: &Dataset,
    mut observer: Option<&mut dyn FnMut(&RoundAudit<'_>)>,
) -> Result<ExperimentOutcome> {
    config.validate()?;
    if train.num_classes() != config.arch.num_classes() {
        return Err(Error::InvalidArgument(format!(
            "dataset has {} classes, architecture expects {}",
            train.num_classes(),
            config.arch.num_classes()
        )));
    }

    let global = init_model(&config.arch, seed::derive(config.seed, "phi-init", 0));
    let shards = build_shards(config, train)?;
    let mut clients: Vec<ClientState> = shards
        .into_iter()
        .map(|shard| ClientState::new(shard.owner, shard, train, config))
        .collect::<Result<_>>()?;

    let mut server = ServerState {
        global_model: global,
        round: 0,
    };
    let mut records = Vec::new();

    for round in 1..=config.rounds {
        let started = Instant::now();
        let mut round_rng = seed::stream(config.seed, "sample", round as u64);
        let sampled = sample_clients(config.num_clients, config.sample_fraction, &mut round_rng);
        let snapshot = server.global_model.clone();

        let mut selected: Vec<&mut ClientState> = clients
            .iter_mut()
            .filter(|c| sampled.binary_search(&c.id).is_ok())
            .collect();
        let results: Vec<Result<LocalTrainOutcome>> = selected
            .par_iter_mut()
            .map(|client| {
                let id = client.id();
                local_train(client, &snapshot, train, config).map_err(|e| Error::ClientFailed {
                    round,
                    client: id,
                    source: Box::new(e),
                })
            })
            .collect();

        let mut updates: Vec<(ModelParams, u64)> = Vec::with_capacity(sampled.len());
        let mut designated_kl = None;
        for (client_id, result) in sampled.iter().zip(results) {
            let outcome = result?;
            if *client_id == sampled[0] {
                designated_kl = outcome.mean_kl;
            }
            let n = clients[*client_id].shard.len() as u64;
            updates.push((outcome.phi, n));
        }

        let aggregated = aggregate(&updates)?;
        if let Some(hook) = observer.as_deref_mut() {
            hook(&RoundAudit {
                round,
                sampled: &sampled,
                broadcast: &snapshot,
                updates: &updates,
                aggregated: &aggregated,
            });
        }
        server.global_model = aggregated;
        server.round = round;

        if round % config.eval_every == 0 || round == config.rounds {
            let global_accuracy = accuracy(&server.global_model, test)?;
            let client_models: Vec<ModelParams> =
                updates.iter().map(|(m, _)| m.clone()).collect();
            let (mean_pc, ci95) = mean_per_class_accuracy(&client_models, test)?;
            records.push(RoundRecord {
                round,
                global_accuracy,
                mean_per_class_acc: mean_pc,
                per_class_acc_ci95: ci95,
                kl_local_vs_ensemble: designated_kl,
                elapsed_seconds: started.elapsed().as_secs_f64(),
            });
        }
    }

    Ok(ExperimentOutcome {
        records,
        final_model: server.global_model,
    })
}
