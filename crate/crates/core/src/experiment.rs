//! Experiment orchestration: bind a dataset, a heterogeneity scenario, and a
//! training regime into one seeded run and aggregate accuracies into report
//! rows.
//!
//! Accuracy is aggregated across clusters (classes for the oracle): the
//! unweighted mean and population standard deviation of the per-cluster
//! accuracies on the members' test unions, in percent. The FL baseline is a
//! single pooled evaluation, so its std is 0.00 and, like the oracle, it
//! carries no clustering metrics.

use std::path::PathBuf;

use crate::cfl_client::{run_ifca, AssignmentRecord, IfcaInit};
use crate::cfl_server::run_server_cfl;
use crate::data::{load_dataset, synth_dataset, DatasetName, RawDataset};
use crate::error::{Error, Result};
use crate::federation::{run_fedavg, run_oracle, RoundStat};
use crate::heterogeneity::{
    ground_truth, partition_clients, partition_manifest, shared_test_union, ClientDataset,
    HeterogeneityScenario, ScenarioKind,
};
use crate::metrics::{evaluate_assignment, MetricsReport};
use crate::model::{evaluate, TrainConfig};
use crate::seed::mix;

const TAG_REPEAT: u64 = 0xE001;
const TAG_DATA: u64 = 0xE002;

/// Training regime selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    Fl,
    Oracle,
    Client,
    Server,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Fl => "fl",
            Regime::Oracle => "oracle",
            Regime::Client => "client",
            Regime::Server => "server",
        }
    }

    pub const ALL: [Regime; 4] = [Regime::Fl, Regime::Oracle, Regime::Client, Regime::Server];
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .iter()
            .find(|r| r.as_str() == s)
            .copied()
            .ok_or_else(|| Error::config("regime", format!("unknown regime `{s}`")))
    }
}

/// First-round assignment mode for the client-side regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitMode {
    #[default]
    Random,
    /// Seed the first round with the ground-truth heterogeneity classes.
    WarmStart,
}

impl InitMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            InitMode::Random => "random",
            InitMode::WarmStart => "warm-start",
        }
    }
}

impl std::str::FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(InitMode::Random),
            "warm-start" => Ok(InitMode::WarmStart),
            other => Err(Error::config(
                "init_mode",
                format!("unknown init mode `{other}`, expected random | warm-start"),
            )),
        }
    }
}

/// One experiment specification. Defaults follow the reference setup:
/// 48 clients, 100 train samples per label per client, 20 rounds of 10 local
/// epochs at learning rate 0.01, 50 oracle epochs, k equal to the scenario's
/// class count.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetName,
    pub scenario: ScenarioKind,
    pub regime: Regime,
    pub n_clients: usize,
    pub per_label: usize,
    pub test_per_label: usize,
    /// Cluster count; `None` uses the scenario's class count.
    pub k: Option<usize>,
    pub rounds: usize,
    pub epochs: usize,
    pub oracle_epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub warmup_rounds: usize,
    pub seed: u64,
    pub repeats: usize,
    /// Uniformly shrinks n_clients / per_label / rounds for desk-scale runs.
    pub scale: f64,
    pub init_mode: InitMode,
    /// Retain fraction for the label-skew scenario's non-dominant labels.
    pub skew_retain: f64,
    pub data_root: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetName::Synthetic,
            scenario: ScenarioKind::Iid,
            regime: Regime::Fl,
            n_clients: 48,
            per_label: 100,
            test_per_label: 20,
            k: None,
            rounds: 20,
            epochs: 10,
            oracle_epochs: 50,
            lr: 0.01,
            batch_size: 64,
            warmup_rounds: 5,
            seed: 42,
            repeats: 1,
            scale: 1.0,
            init_mode: InitMode::Random,
            skew_retain: 0.001,
            data_root: None,
        }
    }
}

/// Scale-resolved run parameters.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub scenario: HeterogeneityScenario,
    pub n_clients: usize,
    pub per_label: usize,
    pub test_per_label: usize,
    pub k: usize,
    pub rounds: usize,
    pub warmup_rounds: usize,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_clients == 0 {
            return Err(Error::config("n_clients", "must be >= 1"));
        }
        if self.per_label == 0 {
            return Err(Error::config("per_label", "must be >= 1"));
        }
        if self.test_per_label == 0 {
            return Err(Error::config("test_per_label", "must be >= 1"));
        }
        if self.rounds == 0 {
            return Err(Error::config("rounds", "must be >= 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be >= 1"));
        }
        if self.oracle_epochs == 0 {
            return Err(Error::config("oracle_epochs", "must be >= 1"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config("lr", "must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        if self.warmup_rounds == 0 {
            return Err(Error::config("warmup_rounds", "must be >= 1"));
        }
        if self.repeats == 0 {
            return Err(Error::config("repeats", "must be >= 1"));
        }
        if !(self.scale > 0.0 && self.scale <= 1.0) {
            return Err(Error::config("scale", "must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.skew_retain) {
            return Err(Error::config("skew_retain", "must lie in [0, 1]"));
        }
        if self.k == Some(0) {
            return Err(Error::config("k", "must be >= 1"));
        }
        Ok(())
    }

    /// Applies the scale factor. Client count is rounded to the nearest
    /// multiple of the scenario's class count; warm-up rounds are clamped to
    /// stay below the round budget.
    pub fn resolve(&self) -> Result<ResolvedConfig> {
        self.validate()?;
        let scenario = HeterogeneityScenario::standard_with_retain(self.scenario, self.skew_retain);
        scenario.validate()?;
        let classes = scenario.class_count();
        let (n_clients, per_label, rounds, warmup_rounds) = if self.scale == 1.0 {
            (self.n_clients, self.per_label, self.rounds, self.warmup_rounds)
        } else {
            let blocks = (self.n_clients as f64 * self.scale / classes as f64).round().max(1.0);
            let n_clients = blocks as usize * classes;
            let per_label = ((self.per_label as f64 * self.scale).round() as usize).max(1);
            let rounds = ((self.rounds as f64 * self.scale).round() as usize).max(1);
            let warmup = ((self.warmup_rounds as f64 * self.scale).round() as usize)
                .clamp(1, rounds.saturating_sub(1).max(1));
            (n_clients, per_label, rounds, warmup)
        };
        if n_clients % classes != 0 {
            return Err(Error::NotDivisible {
                n_clients,
                classes,
            });
        }
        Ok(ResolvedConfig {
            scenario,
            n_clients,
            per_label,
            test_per_label: self.test_per_label,
            k: self.k.unwrap_or(classes),
            rounds,
            warmup_rounds,
        })
    }

    fn data_root(&self) -> PathBuf {
        self.data_root.clone().unwrap_or_else(|| PathBuf::from("data"))
    }
}

/// One report row.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub regime: Regime,
    pub dataset: DatasetName,
    pub scenario: ScenarioKind,
    /// Seed that produced the row, or `pooled` for the repeat summary.
    pub seed_label: String,
    /// Percent, unrounded; report writers round to 2 decimals.
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    /// Clustering scores; `None` for the fl and oracle regimes.
    pub metrics: Option<MetricsReport>,
}

/// Side artifacts of one repeat, for audit dumps.
#[derive(Debug, Clone, Default)]
pub struct RepeatArtifacts {
    pub seed: u64,
    /// `(client_id, het_class, cluster_id)` rows for clustered regimes.
    pub assignment: Option<Vec<(usize, usize, usize)>>,
    /// Per-round assignment trace for the client-side regime.
    pub trace: Option<Vec<AssignmentRecord>>,
    pub rounds: Vec<RoundStat>,
    /// Text audit table of the partition.
    pub manifest: String,
}

/// Full output of [`run_experiment`]: report rows (one per repeat, plus a
/// pooled summary when `repeats > 1`) and per-repeat artifacts.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub rows: Vec<ExperimentResult>,
    pub artifacts: Vec<RepeatArtifacts>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Builds the client partition for one repeat of this config.
pub fn build_clients(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<ClientDataset>> {
    let resolved = cfg.resolve()?;
    let data: RawDataset = match cfg.dataset {
        DatasetName::Synthetic => {
            let per_label_src = (resolved.n_clients * resolved.per_label)
                .max(5 * resolved.test_per_label);
            synth_dataset(mix(&[seed, TAG_DATA]), per_label_src)
        }
        name => load_dataset(name, &cfg.data_root())?,
    };
    partition_clients(
        &data,
        &resolved.scenario,
        resolved.n_clients,
        resolved.per_label,
        resolved.test_per_label,
        seed,
    )
}

fn run_once(
    cfg: &ExperimentConfig,
    resolved: &ResolvedConfig,
    seed: u64,
) -> Result<(ExperimentResult, RepeatArtifacts)> {
    let clients = build_clients(cfg, seed)?;
    let truth = ground_truth(&clients);
    let train_cfg = TrainConfig {
        learning_rate: cfg.lr,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        seed,
    };
    let mut artifacts = RepeatArtifacts {
        seed,
        manifest: partition_manifest(&clients),
        ..RepeatArtifacts::default()
    };

    let (accuracies, metrics) = match cfg.regime {
        Regime::Fl => {
            let run = run_fedavg(&clients, resolved.rounds, &train_cfg, seed)?;
            let refs: Vec<&ClientDataset> = clients.iter().collect();
            let pooled = evaluate(&run.global, &shared_test_union(&refs));
            artifacts.rounds = run.rounds;
            (vec![pooled], None)
        }
        Regime::Oracle => {
            let oracle_cfg = TrainConfig {
                epochs: cfg.oracle_epochs,
                ..train_cfg
            };
            let run = run_oracle(&clients, &oracle_cfg)?;
            (run.class_accuracies, None)
        }
        Regime::Server => {
            let run = run_server_cfl(
                &clients,
                resolved.k,
                resolved.rounds,
                resolved.warmup_rounds,
                &train_cfg,
                seed,
            )?;
            let report = evaluate_assignment(&truth, &run.assignment)?;
            artifacts.assignment = Some(
                clients
                    .iter()
                    .map(|c| (c.client_id, c.het_class, run.assignment[c.client_id]))
                    .collect(),
            );
            artifacts.rounds = run.rounds;
            (
                run.cluster_accuracies.iter().map(|(_, a)| *a).collect(),
                Some(report),
            )
        }
        Regime::Client => {
            let init = match cfg.init_mode {
                InitMode::Random => IfcaInit::Random,
                InitMode::WarmStart => IfcaInit::WarmStart(truth.clone()),
            };
            let run = run_ifca(&clients, resolved.k, resolved.rounds, &train_cfg, seed, init)?;
            let report = evaluate_assignment(&truth, &run.assignment)?;
            artifacts.assignment = Some(
                clients
                    .iter()
                    .map(|c| (c.client_id, c.het_class, run.assignment[c.client_id]))
                    .collect(),
            );
            artifacts.trace = Some(run.trace);
            artifacts.rounds = run.rounds;
            (
                run.cluster_accuracies.iter().map(|(_, a)| *a).collect(),
                Some(report),
            )
        }
    };
    let (mean, std) = mean_std(&accuracies);
    Ok((
        ExperimentResult {
            regime: cfg.regime,
            dataset: cfg.dataset,
            scenario: cfg.scenario,
            seed_label: seed.to_string(),
            accuracy_mean: mean * 100.0,
            accuracy_std: std * 100.0,
            metrics,
        },
        artifacts,
    ))
}

/// Runs one experiment. With `repeats > 1`, each repeat uses a derived seed
/// and a pooled summary row (mean over repeats, std across repeat means) is
/// appended.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let resolved = cfg.resolve()?;
    let mut rows = Vec::new();
    let mut artifacts = Vec::new();
    for repeat in 0..cfg.repeats {
        let seed = if cfg.repeats == 1 {
            cfg.seed
        } else {
            mix(&[cfg.seed, TAG_REPEAT, repeat as u64])
        };
        let (row, art) = run_once(cfg, &resolved, seed)?;
        rows.push(row);
        artifacts.push(art);
    }
    if cfg.repeats > 1 {
        let means: Vec<f64> = rows.iter().map(|r| r.accuracy_mean).collect();
        let (mean, std) = mean_std(&means);
        let pooled_metrics = rows[0].metrics.map(|_| {
            let get = |f: fn(&MetricsReport) -> f64| {
                rows.iter().map(|r| f(r.metrics.as_ref().expect("metrics"))).sum::<f64>()
                    / rows.len() as f64
            };
            MetricsReport {
                ari: get(|m| m.ari),
                ami: get(|m| m.ami),
                homogeneity: get(|m| m.homogeneity),
                completeness: get(|m| m.completeness),
                v_measure: get(|m| m.v_measure),
            }
        });
        rows.push(ExperimentResult {
            regime: cfg.regime,
            dataset: cfg.dataset,
            scenario: cfg.scenario,
            seed_label: "pooled".to_string(),
            accuracy_mean: mean,
            accuracy_std: std,
            metrics: pooled_metrics,
        });
    }
    Ok(ExperimentOutput { rows, artifacts })
}

/// Runs the server-side regime once per cluster count, with a shared seed,
/// and returns the `(k, accuracy_mean)` curve.
pub fn cluster_sweep(cfg: &ExperimentConfig, k_values: &[usize]) -> Result<Vec<(usize, f64)>> {
    if cfg.regime != Regime::Server {
        return Err(Error::config(
            "regime",
            "cluster sweeps run the server regime",
        ));
    }
    if k_values.is_empty() {
        return Err(Error::config("k_values", "must be non-empty"));
    }
    let mut curve = Vec::with_capacity(k_values.len());
    for &k in k_values {
        let point_cfg = ExperimentConfig {
            k: Some(k),
            repeats: 1,
            ..cfg.clone()
        };
        let output = run_experiment(&point_cfg)?;
        curve.push((k, output.rows[0].accuracy_mean));
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk_cfg(regime: Regime, scenario: ScenarioKind) -> ExperimentConfig {
        ExperimentConfig {
            regime,
            scenario,
            n_clients: 4,
            per_label: 4,
            test_per_label: 2,
            rounds: 2,
            epochs: 1,
            oracle_epochs: 2,
            batch_size: 16,
            warmup_rounds: 1,
            seed: 3,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn defaults_match_reference_setup() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.n_clients, 48);
        assert_eq!(cfg.per_label, 100);
        assert_eq!(cfg.rounds, 20);
        assert_eq!(cfg.epochs, 10);
        assert_eq!(cfg.oracle_epochs, 50);
        assert_eq!(cfg.lr, 0.01);
        // k defaults to the scenario class count; clients divide evenly.
        for kind in ScenarioKind::ALL {
            let resolved = ExperimentConfig {
                scenario: kind,
                ..ExperimentConfig::default()
            }
            .resolve()
            .unwrap();
            assert_eq!(resolved.k, resolved.scenario.class_count());
            assert_eq!(resolved.n_clients % resolved.scenario.class_count(), 0);
        }
    }

    #[test]
    fn scale_preserves_divisibility() {
        for kind in ScenarioKind::ALL {
            for scale in [0.1, 0.25, 0.5] {
                let cfg = ExperimentConfig {
                    scenario: kind,
                    scale,
                    ..ExperimentConfig::default()
                };
                let resolved = cfg.resolve().unwrap();
                assert_eq!(resolved.n_clients % resolved.scenario.class_count(), 0);
                assert!(resolved.warmup_rounds < resolved.rounds.max(2));
            }
        }
    }

    #[test]
    fn validate_names_failing_field() {
        let cfg = ExperimentConfig {
            lr: 0.0,
            ..ExperimentConfig::default()
        };
        match cfg.validate() {
            Err(Error::InvalidConfig { field, .. }) => assert_eq!(field, "lr"),
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn fl_row_has_zero_std_and_no_metrics() {
        let out = run_experiment(&desk_cfg(Regime::Fl, ScenarioKind::Iid)).unwrap();
        assert_eq!(out.rows.len(), 1);
        let row = &out.rows[0];
        assert_eq!(row.accuracy_std, 0.0);
        assert!(row.metrics.is_none());
        assert!(!out.artifacts[0].rounds.is_empty());
    }

    #[test]
    fn oracle_iid_single_class_zero_std() {
        let out = run_experiment(&desk_cfg(Regime::Oracle, ScenarioKind::Iid)).unwrap();
        let row = &out.rows[0];
        assert_eq!(row.accuracy_std, 0.0);
        assert!(row.metrics.is_none());
    }

    #[test]
    fn clustered_rows_carry_metrics_and_assignment() {
        let mut cfg = desk_cfg(Regime::Server, ScenarioKind::ConceptShiftFeatures);
        cfg.n_clients = 8;
        cfg.rounds = 3;
        let out = run_experiment(&cfg).unwrap();
        let row = &out.rows[0];
        assert!(row.metrics.is_some());
        let assignment = out.artifacts[0].assignment.as_ref().unwrap();
        assert_eq!(assignment.len(), 8);
    }

    #[test]
    fn repeats_add_pooled_row() {
        let mut cfg = desk_cfg(Regime::Fl, ScenarioKind::Iid);
        cfg.repeats = 2;
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.rows.len(), 3);
        assert_eq!(out.rows[2].seed_label, "pooled");
        assert_ne!(out.rows[0].seed_label, out.rows[1].seed_label);
    }

    #[test]
    fn sweep_requires_server_regime() {
        let cfg = desk_cfg(Regime::Fl, ScenarioKind::Iid);
        assert!(matches!(
            cluster_sweep(&cfg, &[1, 2]),
            Err(Error::InvalidConfig { .. })
        ));
    }

    #[test]
    fn experiment_is_deterministic() {
        let cfg = desk_cfg(Regime::Client, ScenarioKind::ConceptShiftLabels);
        let mut cfg = cfg;
        cfg.n_clients = 6;
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.rows[0].accuracy_mean, b.rows[0].accuracy_mean);
        assert_eq!(a.artifacts[0].assignment, b.artifacts[0].assignment);
    }
}
