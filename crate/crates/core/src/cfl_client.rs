//! Client-side clustered federated learning (iterative cluster assignment):
//! the server keeps K cluster models; every round each client adopts the
//! cluster whose model minimizes its mean training loss, trains it locally,
//! and the server aggregates per cluster.
//!
//! Round 1 under random init assigns clients uniformly at random instead of
//! by loss argmin; warm-start init replaces that first assignment with a
//! provided one (e.g. the ground-truth heterogeneity classes, simulating an
//! expert opinion). Memberless clusters carry their parameters forward
//! unchanged.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::federation::{aggregate_weighted, init_seed, run_local_round, RoundStat};
use crate::heterogeneity::{shared_test_union, ClientDataset};
use crate::model::{evaluate, mean_loss, ModelParams, TrainConfig};
use crate::seed::mix;

const TAG_IFCA_ASSIGN: u64 = 0xA001;

/// First-round assignment policy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IfcaInit {
    Random,
    WarmStart(Vec<usize>),
}

/// Mean training-set cross-entropy under each candidate model; returns the
/// argmin index, ties broken toward the lowest index.
pub fn select_cluster(client: &ClientDataset, cluster_models: &[ModelParams]) -> Result<usize> {
    assert!(!cluster_models.is_empty(), "need at least one cluster model");
    let mut best = 0usize;
    let mut best_loss = mean_loss(&cluster_models[0], &client.train)?;
    for (j, model) in cluster_models.iter().enumerate().skip(1) {
        let loss = mean_loss(model, &client.train)?;
        if loss < best_loss {
            best = j;
            best_loss = loss;
        }
    }
    Ok(best)
}

/// One `(round, client, cluster)` row of the assignment trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AssignmentRecord {
    pub round: usize,
    pub client_id: usize,
    pub cluster: usize,
}

#[derive(Debug, Clone)]
pub struct IfcaRun {
    pub cluster_models: Vec<ModelParams>,
    /// Final-round cluster id per client, indexed by client id.
    pub assignment: Vec<usize>,
    /// `(cluster id, accuracy on the members' test union)` for non-empty
    /// clusters, ascending by cluster id.
    pub cluster_accuracies: Vec<(usize, f64)>,
    pub trace: Vec<AssignmentRecord>,
    pub rounds: Vec<RoundStat>,
}

/// Runs the client-side regime with K server-initialized cluster models,
/// each seeded distinctly.
pub fn run_ifca(
    clients: &[ClientDataset],
    k: usize,
    rounds: usize,
    cfg: &TrainConfig,
    seed: u64,
    init: IfcaInit,
) -> Result<IfcaRun> {
    if k == 0 {
        return Err(Error::config("k", "must be >= 1"));
    }
    let models = (0..k).map(|j| ModelParams::init(init_seed(seed, j))).collect();
    run_ifca_with_models(clients, models, rounds, cfg, seed, init)
}

/// Same as [`run_ifca`] but with caller-provided initial cluster models.
pub fn run_ifca_with_models(
    clients: &[ClientDataset],
    mut models: Vec<ModelParams>,
    rounds: usize,
    cfg: &TrainConfig,
    seed: u64,
    init: IfcaInit,
) -> Result<IfcaRun> {
    let k = models.len();
    if k == 0 {
        return Err(Error::config("k", "must be >= 1"));
    }
    if rounds == 0 {
        return Err(Error::config("rounds", "must be >= 1"));
    }
    if clients.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let IfcaInit::WarmStart(a) = &init {
        if a.len() != clients.len() {
            return Err(Error::config(
                "init_mode",
                format!(
                    "warm-start assignment covers {} clients, expected {}",
                    a.len(),
                    clients.len()
                ),
            ));
        }
        if let Some(bad) = a.iter().find(|&&c| c >= k) {
            return Err(Error::config(
                "init_mode",
                format!("warm-start cluster id {bad} out of range for k = {k}"),
            ));
        }
    }
    let mut refs: Vec<&ClientDataset> = clients.iter().collect();
    refs.sort_by_key(|c| c.client_id);

    let mut assignment = vec![0usize; clients.len()];
    let mut trace = Vec::with_capacity(rounds * clients.len());
    let mut stats = Vec::with_capacity(rounds);

    for round in 0..rounds {
        if round == 0 {
            match &init {
                IfcaInit::Random => {
                    for c in &refs {
                        let draw = mix(&[seed, TAG_IFCA_ASSIGN, c.client_id as u64]);
                        assignment[c.client_id] = (draw % k as u64) as usize;
                    }
                }
                IfcaInit::WarmStart(a) => {
                    for c in &refs {
                        assignment[c.client_id] = a[c.client_id];
                    }
                }
            }
        } else {
            let selected: Vec<(usize, usize)> = refs
                .par_iter()
                .map(|c| select_cluster(c, &models).map(|j| (c.client_id, j)))
                .collect::<Result<_>>()?;
            for (id, j) in selected {
                assignment[id] = j;
            }
        }
        for c in &refs {
            trace.push(AssignmentRecord {
                round,
                client_id: c.client_id,
                cluster: assignment[c.client_id],
            });
        }

        let runs = run_local_round(&refs, |c| &models[assignment[c.client_id]], cfg, seed, round)?;
        let mean_train_loss =
            runs.iter().map(|(_, r)| r.mean_loss).sum::<f64>() / runs.len() as f64;
        for (j, model) in models.iter_mut().enumerate() {
            let members: Vec<(ModelParams, f64)> = refs
                .iter()
                .zip(&runs)
                .filter(|(_, (id, _))| assignment[*id] == j)
                .map(|(c, (_, run))| (run.params.clone(), c.train.len() as f64))
                .collect();
            if !members.is_empty() {
                *model = aggregate_weighted(&members)?;
            }
        }

        let mut accs = Vec::new();
        for j in 0..k {
            let members: Vec<&ClientDataset> = refs
                .iter()
                .filter(|c| assignment[c.client_id] == j)
                .copied()
                .collect();
            if !members.is_empty() {
                accs.push(evaluate(&models[j], &shared_test_union(&members)));
            }
        }
        stats.push(RoundStat {
            round,
            mean_train_loss,
            eval_accuracy: accs.iter().sum::<f64>() / accs.len() as f64,
        });
    }

    let mut cluster_accuracies = Vec::new();
    for j in 0..k {
        let members: Vec<&ClientDataset> = refs
            .iter()
            .filter(|c| assignment[c.client_id] == j)
            .copied()
            .collect();
        if !members.is_empty() {
            cluster_accuracies.push((j, evaluate(&models[j], &shared_test_union(&members))));
        }
    }
    Ok(IfcaRun {
        cluster_models: models,
        assignment,
        cluster_accuracies,
        trace,
        rounds: stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_dataset;
    use crate::heterogeneity::{partition_clients, HeterogeneityScenario};

    fn iid_clients(n: usize, per_label: usize, seed: u64) -> Vec<ClientDataset> {
        let data = synth_dataset(seed, (n * per_label).max(10));
        partition_clients(&data, &HeterogeneityScenario::Iid, n, per_label, 2, seed).unwrap()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            learning_rate: 0.01,
            epochs: 1,
            batch_size: 16,
            seed: 0,
        }
    }

    #[test]
    fn select_cluster_single_model_is_zero() {
        let clients = iid_clients(1, 2, 1);
        let models = vec![ModelParams::init(1)];
        assert_eq!(select_cluster(&clients[0], &models).unwrap(), 0);
    }

    #[test]
    fn select_cluster_prefers_lower_loss_and_breaks_ties_low() {
        let clients = iid_clients(1, 5, 2);
        // Train one model on the client's own data so it clearly wins.
        let trained = crate::model::train_epochs(
            &ModelParams::init(3),
            &clients[0].train,
            &TrainConfig {
                epochs: 10,
                ..small_cfg()
            },
        )
        .unwrap()
        .params;
        let random = ModelParams::init(4);
        assert_eq!(
            select_cluster(&clients[0], &[random.clone(), trained.clone()]).unwrap(),
            1
        );
        // Identical models tie; the lowest index wins.
        assert_eq!(
            select_cluster(&clients[0], &[random.clone(), random.clone(), random]).unwrap(),
            0
        );
    }

    #[test]
    fn identical_models_collapse_to_cluster_zero() {
        let clients = iid_clients(4, 2, 3);
        let init = ModelParams::init(9);
        let models = vec![init.clone(), init.clone()];
        let run = run_ifca_with_models(
            &clients,
            models,
            3,
            &small_cfg(),
            5,
            IfcaInit::WarmStart(vec![0; 4]),
        )
        .unwrap();
        assert!(run.assignment.iter().all(|&a| a == 0));
        assert!(run
            .trace
            .iter()
            .all(|rec| rec.cluster == 0));
        // Cluster 1 never trained; still the initial parameters.
        assert_eq!(run.cluster_models[1], init);
        assert_eq!(run.cluster_accuracies.len(), 1);
    }

    #[test]
    fn member_counts_sum_to_client_count_each_round() {
        let clients = iid_clients(6, 2, 4);
        let run = run_ifca(&clients, 3, 4, &small_cfg(), 8, IfcaInit::Random).unwrap();
        for round in 0..4 {
            let count = run.trace.iter().filter(|r| r.round == round).count();
            assert_eq!(count, 6);
        }
    }

    #[test]
    fn warm_start_validation() {
        let clients = iid_clients(3, 2, 5);
        let cfg = small_cfg();
        assert!(matches!(
            run_ifca(&clients, 2, 2, &cfg, 1, IfcaInit::WarmStart(vec![0, 1])),
            Err(Error::InvalidConfig { .. })
        ));
        assert!(matches!(
            run_ifca(&clients, 2, 2, &cfg, 1, IfcaInit::WarmStart(vec![0, 1, 5])),
            Err(Error::InvalidConfig { .. })
        ));
    }

    #[test]
    fn ifca_is_deterministic_including_round_one() {
        let clients = iid_clients(5, 2, 6);
        let cfg = small_cfg();
        let a = run_ifca(&clients, 2, 2, &cfg, 31, IfcaInit::Random).unwrap();
        let b = run_ifca(&clients, 2, 2, &cfg, 31, IfcaInit::Random).unwrap();
        assert_eq!(a.assignment, b.assignment);
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.cluster_models[0], b.cluster_models[0]);
    }
}
