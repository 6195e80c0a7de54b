//! Server-side clustered federated learning: a warm-up phase of global
//! FedAvg, one-shot k-means over the clients' flattened model weights, then
//! independent per-cluster FedAvg for the remaining round budget.
//!
//! The clustering input is each client's locally trained model starting from
//! the shared global weights, so weight differences reflect data differences
//! rather than initialization noise. That local pass doubles as the local
//! half of the first post-warm-up round: its per-cluster weighted mean both
//! initializes the cluster models and completes the round, keeping the total
//! number of consumed rounds equal to `rounds` and making k = 1 reproduce the
//! plain FedAvg trajectory bit for bit.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::federation::{aggregate_weighted, init_seed, run_local_round, RoundStat};
use crate::heterogeneity::{shared_test_union, ClientDataset};
use crate::model::{evaluate, ModelParams, TrainConfig};
use crate::seed::mix;

const TAG_KMEANS_RESTART: u64 = 0xC001;
const TAG_SERVER_KMEANS: u64 = 0xC002;

const N_INIT: usize = 10;
const MAX_ITERS: usize = 300;

/// Output of [`kmeans`]: centroids, the per-point cluster assignment, and the
/// total within-cluster squared Euclidean distance.
#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub inertia: f64,
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn assign_points(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut assignment = Vec::with_capacity(points.len());
    let mut inertia = 0.0;
    for p in points {
        let mut best = 0usize;
        let mut best_d = dist_sq(p, &centroids[0]);
        for (j, c) in centroids.iter().enumerate().skip(1) {
            let d = dist_sq(p, c);
            if d < best_d {
                best = j;
                best_d = d;
            }
        }
        assignment.push(best);
        inertia += best_d;
    }
    (assignment, inertia)
}

fn kmeanspp_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..points.len())].clone());
    let mut d2: Vec<f64> = points.iter().map(|p| dist_sq(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            // All remaining mass at distance zero; fall back to uniform.
            rng.random_range(0..points.len())
        } else {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        };
        centroids.push(points[next].clone());
        let last = centroids.last().expect("just pushed");
        for (d, p) in d2.iter_mut().zip(points) {
            let nd = dist_sq(p, last);
            if nd < *d {
                *d = nd;
            }
        }
    }
    centroids
}

/// Reseeds every empty cluster at the point currently farthest from its
/// assigned centroid, then recomputes the assignment.
fn repair_empty_clusters(
    points: &[Vec<f64>],
    centroids: &mut [Vec<f64>],
    assignment: &mut Vec<usize>,
    inertia: &mut f64,
    k: usize,
) {
    for _ in 0..k {
        let mut counts = vec![0usize; k];
        for &a in assignment.iter() {
            counts[a] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let farthest = points
            .iter()
            .enumerate()
            .map(|(i, p)| (i, dist_sq(p, &centroids[assignment[i]])))
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .expect("non-empty points");
        centroids[empty] = points[farthest].clone();
        let (new_assignment, new_inertia) = assign_points(points, centroids);
        *assignment = new_assignment;
        *inertia = new_inertia;
    }
}

/// Lloyd's algorithm with k-means++ seeding, `N_INIT` restarts keeping the
/// lowest inertia, and at most `MAX_ITERS` iterations per restart.
/// Deterministic given `seed`.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansResult> {
    assert!(k >= 1, "k must be >= 1");
    if points.len() < k {
        return Err(Error::TooFewPoints {
            points: points.len(),
            k,
        });
    }
    let dim = points[0].len();
    assert!(points.iter().all(|p| p.len() == dim), "ragged points");

    let mut best: Option<KMeansResult> = None;
    for restart in 0..N_INIT {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, TAG_KMEANS_RESTART, restart as u64]));
        let mut centroids = kmeanspp_init(points, k, &mut rng);
        let (mut assignment, mut inertia) = assign_points(points, &centroids);
        repair_empty_clusters(points, &mut centroids, &mut assignment, &mut inertia, k);

        for _ in 0..MAX_ITERS {
            // Update step: means over members.
            for (j, centroid) in centroids.iter_mut().enumerate() {
                let members: Vec<&Vec<f64>> = points
                    .iter()
                    .zip(&assignment)
                    .filter(|(_, &a)| a == j)
                    .map(|(p, _)| p)
                    .collect();
                if members.is_empty() {
                    continue;
                }
                for (d, slot) in centroid.iter_mut().enumerate() {
                    *slot = members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64;
                }
            }
            let (mut new_assignment, mut new_inertia) = assign_points(points, &centroids);
            repair_empty_clusters(
                points,
                &mut centroids,
                &mut new_assignment,
                &mut new_inertia,
                k,
            );
            let converged = new_assignment == assignment;
            assignment = new_assignment;
            inertia = new_inertia;
            if converged {
                break;
            }
        }
        if best.as_ref().is_none_or(|b| inertia < b.inertia) {
            best = Some(KMeansResult {
                centroids: centroids.clone(),
                assignment,
                inertia,
            });
        }
    }
    Ok(best.expect("at least one restart"))
}

#[derive(Debug, Clone)]
pub struct ServerCflRun {
    /// One model per cluster; `None` marks a cluster left memberless.
    pub cluster_models: Vec<Option<ModelParams>>,
    /// Cluster id per client, indexed by client id.
    pub assignment: Vec<usize>,
    /// `(cluster id, accuracy on the members' test union)` for non-empty
    /// clusters, ascending by cluster id.
    pub cluster_accuracies: Vec<(usize, f64)>,
    pub rounds: Vec<RoundStat>,
}

/// Runs the server-side clustered regime over a total budget of `rounds`:
/// `warmup_rounds` of global FedAvg, the one-shot clustering round, then
/// per-cluster FedAvg for the remainder.
pub fn run_server_cfl(
    clients: &[ClientDataset],
    k: usize,
    rounds: usize,
    warmup_rounds: usize,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<ServerCflRun> {
    if clients.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(1..rounds).contains(&warmup_rounds) {
        return Err(Error::config(
            "warmup_rounds",
            format!("need 1 <= warmup_rounds < rounds, got {warmup_rounds} of {rounds}"),
        ));
    }
    if k == 0 || k > clients.len() {
        return Err(Error::config(
            "k",
            format!("need 1 <= k <= {} clients, got {k}", clients.len()),
        ));
    }
    let mut refs: Vec<&ClientDataset> = clients.iter().collect();
    refs.sort_by_key(|c| c.client_id);
    let union = shared_test_union(&refs);
    let mut stats = Vec::with_capacity(rounds);

    // Phase 1: global warm-up.
    let mut global = ModelParams::init(init_seed(seed, 0));
    for round in 0..warmup_rounds {
        let runs = run_local_round(&refs, |_| &global, cfg, seed, round)?;
        let mean_train_loss =
            runs.iter().map(|(_, r)| r.mean_loss).sum::<f64>() / runs.len() as f64;
        let weighted: Vec<(ModelParams, f64)> = refs
            .iter()
            .zip(runs)
            .map(|(c, (_, run))| (run.params, c.train.len() as f64))
            .collect();
        global = aggregate_weighted(&weighted)?;
        stats.push(RoundStat {
            round,
            mean_train_loss,
            eval_accuracy: evaluate(&global, &union),
        });
    }

    // Phase 2: one local pass from the shared global model; cluster the
    // resulting weight vectors.
    let runs = run_local_round(&refs, |_| &global, cfg, seed, warmup_rounds)?;
    let phase2_loss = runs.iter().map(|(_, r)| r.mean_loss).sum::<f64>() / runs.len() as f64;
    let points: Vec<Vec<f64>> = runs.iter().map(|(_, r)| r.params.to_flat()).collect();
    let km = kmeans(&points, k, mix(&[seed, TAG_SERVER_KMEANS]))?;

    let mut assignment = vec![0usize; clients.len()];
    for (pos, client) in refs.iter().enumerate() {
        assignment[client.client_id] = km.assignment[pos];
    }

    // Cluster init: weighted mean of member phase-2 models.
    let mut cluster_models: Vec<Option<ModelParams>> = Vec::with_capacity(k);
    for j in 0..k {
        let members: Vec<(ModelParams, f64)> = refs
            .iter()
            .zip(&runs)
            .filter(|(_, (id, _))| assignment[*id] == j)
            .map(|(c, (_, run))| (run.params.clone(), c.train.len() as f64))
            .collect();
        if members.is_empty() {
            cluster_models.push(None);
        } else {
            cluster_models.push(Some(aggregate_weighted(&members)?));
        }
    }
    let member_refs = |j: usize| -> Vec<&ClientDataset> {
        refs.iter()
            .filter(|c| assignment[c.client_id] == j)
            .copied()
            .collect()
    };
    let mean_cluster_accuracy = |models: &[Option<ModelParams>]| -> f64 {
        let mut accs = Vec::new();
        for (j, model) in models.iter().enumerate() {
            if let Some(m) = model {
                let members = member_refs(j);
                accs.push(evaluate(m, &shared_test_union(&members)));
            }
        }
        accs.iter().sum::<f64>() / accs.len() as f64
    };
    stats.push(RoundStat {
        round: warmup_rounds,
        mean_train_loss: phase2_loss,
        eval_accuracy: mean_cluster_accuracy(&cluster_models),
    });

    // Phase 3: independent per-cluster FedAvg for the remaining budget.
    for round in warmup_rounds + 1..rounds {
        let runs = run_local_round(
            &refs,
            |c| {
                cluster_models[assignment[c.client_id]]
                    .as_ref()
                    .expect("assigned cluster has a model")
            },
            cfg,
            seed,
            round,
        )?;
        let mean_train_loss =
            runs.iter().map(|(_, r)| r.mean_loss).sum::<f64>() / runs.len() as f64;
        for j in 0..k {
            let members: Vec<(ModelParams, f64)> = refs
                .iter()
                .zip(&runs)
                .filter(|(_, (id, _))| assignment[*id] == j)
                .map(|(c, (_, run))| (run.params.clone(), c.train.len() as f64))
                .collect();
            if !members.is_empty() {
                cluster_models[j] = Some(aggregate_weighted(&members)?);
            }
        }
        stats.push(RoundStat {
            round,
            mean_train_loss,
            eval_accuracy: mean_cluster_accuracy(&cluster_models),
        });
    }

    let mut cluster_accuracies = Vec::new();
    for (j, model) in cluster_models.iter().enumerate() {
        if let Some(m) = model {
            let members = member_refs(j);
            cluster_accuracies.push((j, evaluate(m, &shared_test_union(&members))));
        }
    }
    Ok(ServerCflRun {
        cluster_models,
        assignment,
        cluster_accuracies,
        rounds: stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn kmeans_separates_two_obvious_groups() {
        let points = vec![vec![0.0], vec![0.0], vec![10.0], vec![10.0]];
        let result = kmeans(&points, 2, 1).unwrap();
        assert_abs_diff_eq!(result.inertia, 0.0, epsilon = 1e-12);
        assert_eq!(result.assignment[0], result.assignment[1]);
        assert_eq!(result.assignment[2], result.assignment[3]);
        assert_ne!(result.assignment[0], result.assignment[2]);
    }

    #[test]
    fn kmeans_k1_centroid_is_mean() {
        let points = vec![vec![1.0, 0.0], vec![3.0, 2.0], vec![5.0, 4.0]];
        let result = kmeans(&points, 1, 2).unwrap();
        assert_eq!(result.assignment, vec![0, 0, 0]);
        assert_abs_diff_eq!(result.centroids[0][0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(result.centroids[0][1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn kmeans_k_equals_n_is_exact() {
        let points = vec![vec![0.0], vec![5.0], vec![9.0]];
        let result = kmeans(&points, 3, 3).unwrap();
        assert_abs_diff_eq!(result.inertia, 0.0, epsilon = 1e-12);
        let mut sorted = result.assignment.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2]);
    }

    #[test]
    fn kmeans_too_few_points() {
        let points = vec![vec![0.0]];
        assert!(matches!(
            kmeans(&points, 2, 1),
            Err(Error::TooFewPoints { points: 1, k: 2 })
        ));
    }

    #[test]
    fn kmeans_recovers_repeated_vectors_exactly() {
        let mut points = Vec::new();
        for _ in 0..6 {
            points.push(vec![1.0, 1.0]);
        }
        for _ in 0..6 {
            points.push(vec![-1.0, 4.0]);
        }
        for _ in 0..6 {
            points.push(vec![7.0, -2.0]);
        }
        let result = kmeans(&points, 3, 5).unwrap();
        assert_abs_diff_eq!(result.inertia, 0.0, epsilon = 1e-12);
        for chunk in result.assignment.chunks(6) {
            assert!(chunk.iter().all(|&a| a == chunk[0]));
        }
    }

    #[test]
    fn kmeans_assignment_is_argmin_of_centroids() {
        use rand::{RngExt, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let points: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..3).map(|_| rng.random_range(-5.0..5.0)).collect())
            .collect();
        let result = kmeans(&points, 4, 11).unwrap();
        for (i, p) in points.iter().enumerate() {
            let assigned = dist_sq(p, &result.centroids[result.assignment[i]]);
            for c in &result.centroids {
                assert!(assigned <= dist_sq(p, c) + 1e-12);
            }
        }
    }

    #[test]
    fn kmeans_is_deterministic() {
        use rand::{RngExt, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let points: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..2).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let a = kmeans(&points, 3, 7).unwrap();
        let b = kmeans(&points, 3, 7).unwrap();
        assert_eq!(a.assignment, b.assignment);
        assert_eq!(a.centroids, b.centroids);
    }

    #[test]
    fn server_cfl_validates_round_budget() {
        use crate::data::synth_dataset;
        use crate::heterogeneity::{partition_clients, HeterogeneityScenario};
        let data = synth_dataset(1, 8);
        let clients =
            partition_clients(&data, &HeterogeneityScenario::Iid, 2, 4, 2, 1).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 16,
            ..TrainConfig::default()
        };
        assert!(matches!(
            run_server_cfl(&clients, 1, 2, 2, &cfg, 1),
            Err(Error::InvalidConfig { .. })
        ));
        assert!(matches!(
            run_server_cfl(&clients, 3, 4, 1, &cfg, 1),
            Err(Error::InvalidConfig { .. })
        ));
    }
}
