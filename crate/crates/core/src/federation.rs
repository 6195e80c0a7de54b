//! Federated orchestration: sample-weighted FedAvg aggregation, the global
//! FL baseline, and the per-class centralized "oracle" reference.
//!
//! Every client's local training seed is a pure function of
//! `(run seed, round, client id)`, so trajectories are bit-identical no
//! matter how clients are scheduled across threads, and the clustered
//! regimes reproduce the FedAvg trajectory exactly when k = 1.

use rayon::prelude::*;

use crate::data::SampleSet;
use crate::error::{Error, Result};
use crate::heterogeneity::{shared_test_union, ClientDataset};
use crate::model::{evaluate, train_epochs, ModelParams, TrainConfig, TrainRun};
use crate::seed::mix;

const TAG_LOCAL: u64 = 0xF001;
const TAG_INIT: u64 = 0xF002;
const TAG_ORACLE: u64 = 0xF003;

/// Seed of one client's local training pass in one round.
pub fn local_seed(seed: u64, round: usize, client_id: usize) -> u64 {
    mix(&[seed, TAG_LOCAL, round as u64, client_id as u64])
}

/// Seed of the `idx`-th server-initialized model. Index 0 is the global
/// FedAvg model; the client-side regime uses indices `0..k`.
pub fn init_seed(seed: u64, idx: usize) -> u64 {
    mix(&[seed, TAG_INIT, idx as u64])
}

/// Coordinate-wise weighted mean with weights `n_i / sum(n_j)`, accumulated
/// in input order. Callers pass models in ascending client-id order so runs
/// are bitwise reproducible.
pub fn aggregate_weighted(models: &[(ModelParams, f64)]) -> Result<ModelParams> {
    if models.is_empty() {
        return Err(Error::EmptyInput);
    }
    let total: f64 = models.iter().map(|(_, n)| n).sum();
    if total <= 0.0 {
        return Err(Error::ZeroTotalWeight);
    }
    let mut acc = ModelParams::zeros();
    for (params, n) in models {
        acc.scaled_add(n / total, params);
    }
    Ok(acc)
}

/// Trains every listed client for one round, each from its own start model.
/// Returns `(client_id, run)` pairs in ascending client-id order.
pub(crate) fn run_local_round<'a, F>(
    clients: &[&'a ClientDataset],
    model_of: F,
    cfg: &TrainConfig,
    seed: u64,
    round: usize,
) -> Result<Vec<(usize, TrainRun)>>
where
    F: Fn(&ClientDataset) -> &'a ModelParams + Sync,
{
    let mut runs: Vec<(usize, TrainRun)> = clients
        .par_iter()
        .map(|client| {
            let local_cfg = TrainConfig {
                seed: local_seed(seed, round, client.client_id),
                ..*cfg
            };
            train_epochs(model_of(client), &client.train, &local_cfg)
                .map(|run| (client.client_id, run))
        })
        .collect::<Result<_>>()?;
    runs.sort_by_key(|(id, _)| *id);
    Ok(runs)
}

/// One row of the round-by-round training log.
#[derive(Debug, Clone, Copy)]
pub struct RoundStat {
    pub round: usize,
    pub mean_train_loss: f64,
    /// Accuracy on the pooled test union (FL) or the unweighted mean of
    /// per-cluster accuracies (clustered regimes).
    pub eval_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct FedAvgRun {
    pub global: ModelParams,
    /// Final global model's accuracy on each client's test pool, by client id.
    pub client_accuracies: Vec<f64>,
    pub rounds: Vec<RoundStat>,
}

/// Global FedAvg: every client participates in every round; the server takes
/// the sample-weighted mean of the locally trained models.
pub fn run_fedavg(
    clients: &[ClientDataset],
    rounds: usize,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<FedAvgRun> {
    if rounds == 0 {
        return Err(Error::config("rounds", "must be >= 1"));
    }
    if clients.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut refs: Vec<&ClientDataset> = clients.iter().collect();
    refs.sort_by_key(|c| c.client_id);
    let union = shared_test_union(&refs);

    let mut global = ModelParams::init(init_seed(seed, 0));
    let mut stats = Vec::with_capacity(rounds);
    for round in 0..rounds {
        let runs = run_local_round(&refs, |_| &global, cfg, seed, round)?;
        let mean_train_loss =
            runs.iter().map(|(_, r)| r.mean_loss).sum::<f64>() / runs.len() as f64;
        let weighted: Vec<(ModelParams, f64)> = refs
            .iter()
            .zip(runs)
            .map(|(client, (_, run))| (run.params, client.train.len() as f64))
            .collect();
        global = aggregate_weighted(&weighted)?;
        stats.push(RoundStat {
            round,
            mean_train_loss,
            eval_accuracy: evaluate(&global, &union),
        });
    }
    let mut client_accuracies = vec![0f64; clients.len()];
    for client in &refs {
        client_accuracies[client.client_id] = evaluate(&global, &client.test);
    }
    Ok(FedAvgRun {
        global,
        client_accuracies,
        rounds: stats,
    })
}

#[derive(Debug, Clone)]
pub struct OracleRun {
    pub class_models: Vec<ModelParams>,
    pub class_accuracies: Vec<f64>,
}

/// Centralized training on the pooled data of each heterogeneity class,
/// evaluated on the pooled member test data. `cfg.epochs` carries the oracle
/// epoch budget.
pub fn run_oracle(clients: &[ClientDataset], cfg: &TrainConfig) -> Result<OracleRun> {
    if clients.is_empty() {
        return Err(Error::EmptyInput);
    }
    let k = clients.iter().map(|c| c.het_class).max().expect("non-empty") + 1;
    let mut members: Vec<Vec<&ClientDataset>> = vec![Vec::new(); k];
    for c in clients {
        members[c.het_class].push(c);
    }
    for (class, m) in members.iter().enumerate() {
        if m.is_empty() {
            return Err(Error::EmptyClass { class });
        }
    }
    let outcomes: Vec<(ModelParams, f64)> = members
        .par_iter()
        .enumerate()
        .map(|(class, m)| {
            let mut sorted = m.clone();
            sorted.sort_by_key(|c| c.client_id);
            let mut pool = SampleSet::default();
            for c in &sorted {
                pool.extend_from(&c.train);
            }
            let local_cfg = TrainConfig {
                seed: mix(&[cfg.seed, TAG_ORACLE, class as u64]),
                ..*cfg
            };
            let init = ModelParams::init(init_seed(cfg.seed, class));
            let run = train_epochs(&init, &pool, &local_cfg)?;
            let union = shared_test_union(&sorted);
            let acc = evaluate(&run.params, &union);
            Ok((run.params, acc))
        })
        .collect::<Result<_>>()?;
    let (class_models, class_accuracies) = outcomes.into_iter().unzip();
    Ok(OracleRun {
        class_models,
        class_accuracies,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_dataset;
    use crate::heterogeneity::{partition_clients, HeterogeneityScenario, ScenarioKind};
    use approx::assert_abs_diff_eq;

    fn iid_clients(n: usize, per_label: usize, seed: u64) -> Vec<ClientDataset> {
        let data = synth_dataset(seed, n * per_label);
        partition_clients(&data, &HeterogeneityScenario::Iid, n, per_label, 2, seed).unwrap()
    }

    #[test]
    fn aggregate_identity_and_symmetry() {
        let m = ModelParams::init(1);
        let single = aggregate_weighted(&[(m.clone(), 5.0)]).unwrap();
        assert_eq!(single, m);

        let mut neg = ModelParams::zeros();
        neg.scaled_add(-1.0, &m);
        let zero = aggregate_weighted(&[(m.clone(), 3.0), (neg, 3.0)]).unwrap();
        assert!(zero.to_flat().iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn aggregate_weighted_mean_value() {
        // Scalar view: params 0 and 4 with weights (1, 3) -> 3.0.
        let zero = ModelParams::zeros();
        let mut four = ModelParams::zeros();
        four.w1[[0, 0]] = 4.0;
        let out = aggregate_weighted(&[(zero, 1.0), (four, 3.0)]).unwrap();
        assert_abs_diff_eq!(out.w1[[0, 0]], 3.0, epsilon = 1e-15);
    }

    #[test]
    fn aggregate_error_paths() {
        assert!(matches!(aggregate_weighted(&[]), Err(Error::EmptyInput)));
        let m = ModelParams::zeros();
        assert!(matches!(
            aggregate_weighted(&[(m, 0.0)]),
            Err(Error::ZeroTotalWeight)
        ));
    }

    #[test]
    fn aggregate_of_identical_models_is_identity() {
        let m = ModelParams::init(2);
        let out =
            aggregate_weighted(&[(m.clone(), 1.0), (m.clone(), 2.0), (m.clone(), 7.0)]).unwrap();
        for (a, b) in out.to_flat().iter().zip(m.to_flat()) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn fedavg_rejects_zero_rounds() {
        let clients = iid_clients(2, 3, 1);
        let cfg = TrainConfig::default();
        assert!(matches!(
            run_fedavg(&clients, 0, &cfg, 1),
            Err(Error::InvalidConfig { .. })
        ));
    }

    #[test]
    fn fedavg_zero_lr_keeps_global_fixed() {
        let clients = iid_clients(3, 2, 2);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 1,
            batch_size: 8,
            seed: 0,
        };
        let run = run_fedavg(&clients, 2, &cfg, 7).unwrap();
        let init = ModelParams::init(init_seed(7, 0));
        for (a, b) in run.global.to_flat().iter().zip(init.to_flat()) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn fedavg_single_client_matches_sequential_training() {
        let clients = iid_clients(1, 10, 3);
        let cfg = TrainConfig {
            learning_rate: 0.01,
            epochs: 2,
            batch_size: 16,
            seed: 0,
        };
        let seed = 5;
        let rounds = 3;
        let run = run_fedavg(&clients, rounds, &cfg, seed).unwrap();

        // Same trajectory by chaining train_epochs with the per-round seeds.
        let mut params = ModelParams::init(init_seed(seed, 0));
        for round in 0..rounds {
            let local = TrainConfig {
                seed: local_seed(seed, round, 0),
                ..cfg
            };
            params = train_epochs(&params, &clients[0].train, &local).unwrap().params;
        }
        assert_eq!(run.global, params);
    }

    #[test]
    fn fedavg_is_deterministic() {
        let clients = iid_clients(4, 3, 4);
        let cfg = TrainConfig {
            learning_rate: 0.01,
            epochs: 1,
            batch_size: 16,
            seed: 0,
        };
        let a = run_fedavg(&clients, 2, &cfg, 9).unwrap();
        let b = run_fedavg(&clients, 2, &cfg, 9).unwrap();
        assert_eq!(a.global, b.global);
        assert_eq!(a.client_accuracies, b.client_accuracies);
    }

    #[test]
    fn oracle_pools_cover_all_train_data() {
        let data = synth_dataset(11, 16);
        let scenario = HeterogeneityScenario::standard(ScenarioKind::ConceptShiftFeatures);
        let clients = partition_clients(&data, &scenario, 4, 4, 2, 3).unwrap();
        let total: usize = clients.iter().map(|c| c.train.len()).sum();
        assert_eq!(total, 4 * 4 * 10);
        let cfg = TrainConfig {
            learning_rate: 0.01,
            epochs: 1,
            batch_size: 32,
            seed: 13,
        };
        let run = run_oracle(&clients, &cfg).unwrap();
        assert_eq!(run.class_models.len(), 4);
        assert_eq!(run.class_accuracies.len(), 4);
    }

    #[test]
    fn oracle_rejects_gap_in_classes() {
        let mut clients = iid_clients(2, 3, 6);
        clients[1].het_class = 2; // classes 0 and 2 present, 1 missing
        let cfg = TrainConfig::default();
        assert!(matches!(
            run_oracle(&clients, &cfg),
            Err(Error::EmptyClass { class: 1 })
        ));
    }
}
