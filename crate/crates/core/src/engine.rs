//! Experiment orchestration: data, graph, partition, node states, the round
//! loop and the run directory.
//!
//! Layout: `<output>/<fingerprint>/<replicate>/` holding `summary.csv`,
//! `per_node.csv`, `confusion.csv`, `graph.edges`, `partition.json`,
//! `manifest.json` and, for community partitions, `community.csv`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::json;

use crate::config::{DatasetConfig, ExperimentConfig, InitMode, PartitionConfig};
use crate::dataset::{gen_synthetic, load_idx, Dataset};
use crate::error::{Error, Result};
use crate::graph::{intercommunity_edge_counts, select_by_degree, DegreeMode, Graph, TopologyConfig};
use crate::learner::{init_mlp, OptimizerState};
use crate::metrics::{
    community_confusion, community_table_csv, confusion_csv, mean_std, parse_per_node_csv,
    parse_summary_csv, per_node_csv, summary_csv,
};
use crate::partition::{partition_community, partition_focus, PartitionPlan, Scheme};
use crate::protocol::{node_sizes, LocalTraining, NodeState, SimulationState};
use crate::rng::{seed_stream, seeded, Purpose};

/// Environment variable naming the directory that holds the MNIST IDX files.
pub const DATA_DIR_ENV: &str = "DECAVG_DATA_DIR";

pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Data,
    Graph,
    Partition,
    Init,
    Training,
    Output,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Data => "data",
            Stage::Graph => "graph",
            Stage::Partition => "partition",
            Stage::Init => "init",
            Stage::Training => "training",
            Stage::Output => "output",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("stage {stage} failed: {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

/// Train and test sets shared read-only by every replicate.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub train: Arc<Dataset>,
    pub test: Arc<Dataset>,
}

pub fn load_data(cfg: &DatasetConfig) -> Result<ExperimentData> {
    let (train, test) = match cfg {
        DatasetConfig::Synthetic(s) => {
            let all = gen_synthetic(
                s.classes,
                s.dims,
                s.per_class + s.test_per_class,
                s.spread,
                &mut seeded(s.seed),
            )?;
            all.split_per_class(s.test_per_class)?
        }
        DatasetConfig::Mnist(m) => {
            let root = std::env::var_os(DATA_DIR_ENV).ok_or_else(|| Error::Load {
                field: DATA_DIR_ENV.into(),
                reason: "not set; point it at the directory holding the MNIST IDX files".into(),
            })?;
            let root = PathBuf::from(root);
            let train = load_idx(&root.join(MNIST_FILES[0]), &root.join(MNIST_FILES[1]))?;
            let test = load_idx(&root.join(MNIST_FILES[2]), &root.join(MNIST_FILES[3]))?;
            let train = match m.train_per_class {
                Some(k) => train.take_per_class(k),
                None => train,
            };
            let test = match m.test_per_class {
                Some(k) => test.take_per_class(k),
                None => test,
            };
            (train, test)
        }
    };
    if train.class_count() != cfg.class_count() {
        return Err(Error::Load {
            field: "dataset.classes".into(),
            reason: format!(
                "expected {} classes, data has {}",
                cfg.class_count(),
                train.class_count()
            ),
        });
    }
    Ok(ExperimentData {
        train: Arc::new(train),
        test: Arc::new(test),
    })
}

pub fn replicate_seed(cfg: &ExperimentConfig, replicate: usize) -> u64 {
    cfg.seed.wrapping_add(replicate as u64)
}

/// A replicate ready to run: round 0 has not happened yet.
pub struct Replicate {
    pub seed: u64,
    pub plan: PartitionPlan,
    pub sim: SimulationState,
}

pub fn build_graph(cfg: &ExperimentConfig, seed: u64) -> Result<Graph> {
    TopologyConfig {
        topology: cfg.topology.clone(),
        seed,
    }
    .build()
}

pub fn build_partition(cfg: &ExperimentConfig, data: &ExperimentData, g: &Graph, seed: u64) -> Result<PartitionPlan> {
    let mut rng = seed_stream(seed, 0, Purpose::Partition);
    match &cfg.partition {
        PartitionConfig::HubFocused(f) | PartitionConfig::EdgeFocused(f) => {
            let (mode, scheme) = match cfg.partition {
                PartitionConfig::HubFocused(_) => (DegreeMode::Highest, Scheme::HubFocused),
                _ => (DegreeMode::Lowest, Scheme::EdgeFocused),
            };
            let focus = select_by_degree(g, f.fraction, mode, &mut seed_stream(seed, 0, Purpose::Tiebreak))?;
            partition_focus(
                &data.train,
                g,
                &focus,
                &f.g1_classes,
                &f.g2_classes,
                f.per_node_per_class,
                scheme,
                &mut rng,
            )
        }
        PartitionConfig::Community(c) => {
            partition_community(&data.train, g, &c.classes_per_block, c.per_node_per_class, &mut rng)
        }
    }
}

/// Graph, partition and node states for one replicate. Evaluation uses the
/// test samples of classes that some node actually holds.
pub fn build_replicate(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    replicate: usize,
) -> std::result::Result<Replicate, StageError> {
    let seed = replicate_seed(cfg, replicate);
    let graph = build_graph(cfg, seed).at(Stage::Graph)?;
    let plan = build_partition(cfg, data, &graph, seed).at(Stage::Partition)?;

    let sizes = cfg.layer_sizes(data.train.dims());
    let nodes = (0..graph.n())
        .map(|id| {
            let stream = match cfg.learner.init {
                InitMode::Shared => 0,
                InitMode::PerNode => id as u64,
            };
            let params = init_mlp(&sizes, &mut seed_stream(seed, stream, Purpose::Init))?;
            let opt = OptimizerState::new(&params, cfg.learner.lr, cfg.learner.momentum)?;
            Ok(NodeState {
                id,
                params,
                opt,
                shard: plan.shards[id].clone(),
                rng: seed_stream(seed, id as u64, Purpose::Shuffle),
            })
        })
        .collect::<Result<Vec<_>>>()
        .at(Stage::Init)?;
    let test = Arc::new(data.test.restrict_classes(&plan.assigned_classes()));
    if test.is_empty() {
        return Err(StageError {
            stage: Stage::Init,
            source: Error::Usage("no test samples for the assigned classes".into()),
        });
    }
    let alpha = node_sizes(&plan, cfg.aggregation.alpha_source);
    let mut sim = SimulationState::new(
        graph,
        Arc::clone(&data.train),
        test,
        nodes,
        alpha,
        cfg.aggregation,
        LocalTraining {
            epochs: cfg.learner.epochs,
            batch_size: cfg.learner.batch_size,
        },
    )
    .at(Stage::Init)?;
    sim.fingerprint = cfg.fingerprint();
    Ok(Replicate { seed, plan, sim })
}

impl Replicate {
    /// Round-0 pretraining followed by `rounds` communication rounds.
    pub fn run(&mut self, rounds: usize) -> std::result::Result<(), StageError> {
        self.sim.pretrain().at(Stage::Training)?;
        for _ in 0..rounds {
            self.sim.run_round().at(Stage::Training)?;
        }
        Ok(())
    }
}

/// Builds and runs one replicate in memory.
pub fn simulate(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    replicate: usize,
) -> std::result::Result<Replicate, StageError> {
    let mut rep = build_replicate(cfg, data, replicate)?;
    rep.run(cfg.rounds)?;
    Ok(rep)
}

#[derive(Debug)]
pub struct ReplicateOutcome {
    pub index: usize,
    pub dir: PathBuf,
    pub result: std::result::Result<(), StageError>,
}

#[derive(Debug)]
pub struct ExperimentReport {
    pub fingerprint: String,
    pub root: PathBuf,
    pub replicates: Vec<ReplicateOutcome>,
}

impl ExperimentReport {
    pub fn failures(&self) -> impl Iterator<Item = &ReplicateOutcome> {
        self.replicates.iter().filter(|r| r.result.is_err())
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_history(dir: &Path, cfg: &ExperimentConfig, rep: &Replicate) -> Result<()> {
    let history = &rep.sim.history;
    write(&dir.join("summary.csv"), &summary_csv(history))?;
    write(&dir.join("per_node.csv"), &per_node_csv(history))?;
    write(&dir.join("confusion.csv"), &confusion_csv(history, cfg.confusion_every))?;
    if rep.plan.scheme == Scheme::Community {
        if let (Some(blocks), Some(last)) = (rep.sim.graph.blocks(), history.last()) {
            let confusions = last
                .confusion
                .as_ref()
                .ok_or_else(|| Error::Report("final round has no confusion matrices".into()))?;
            let table = community_confusion(confusions, blocks)?;
            let edges = intercommunity_edge_counts(&rep.sim.graph)?;
            let csv = community_table_csv(&table, &rep.plan.assigned_classes(), &edges);
            write(&dir.join("community.csv"), &csv)?;
        }
    }
    Ok(())
}

fn write_manifest(dir: &Path, cfg: &ExperimentConfig, index: usize, rounds_completed: Option<usize>, failure: Option<&StageError>) -> Result<()> {
    let created = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut m = json!({
        "fingerprint": cfg.fingerprint(),
        "software": env!("CARGO_PKG_NAME"),
        "software_version": env!("CARGO_PKG_VERSION"),
        "replicate": index,
        "seed": replicate_seed(cfg, index),
        "status": if failure.is_some() { "failed" } else { "ok" },
        "rounds_completed": rounds_completed,
        "std_convention": "population",
        "created_unix": created,
        "config": serde_json::from_str::<serde_json::Value>(&cfg.canonical_json())?,
    });
    if let Some(f) = failure {
        m["stage"] = json!(f.stage.name());
        m["error"] = json!(f.source.to_string());
    }
    write(&dir.join("manifest.json"), &serde_json::to_string_pretty(&m)?)
}

fn run_and_write(cfg: &ExperimentConfig, data: &ExperimentData, index: usize, dir: &Path, slot: &mut Option<Replicate>) -> std::result::Result<(), StageError> {
    let rep = slot.insert(build_replicate(cfg, data, index)?);
    rep.sim.graph.write_edge_list(&dir.join("graph.edges")).at(Stage::Output)?;
    rep.plan.write_json(&dir.join("partition.json")).at(Stage::Output)?;
    rep.run(cfg.rounds)?;
    write_history(dir, cfg, rep).at(Stage::Output)
}

/// Runs one replicate and writes its directory. Failures are recorded in
/// the manifest along with whatever rounds completed.
pub fn run_replicate(cfg: &ExperimentConfig, data: &ExperimentData, index: usize, dir: &Path) -> std::result::Result<(), StageError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::io(dir, e))
        .at(Stage::Output)?;
    let mut slot = None;
    let result = run_and_write(cfg, data, index, dir, &mut slot);
    let completed = slot.as_ref().and_then(|r| r.sim.history.last()).map(|r| r.round);
    if let (Err(_), Some(rep)) = (&result, &slot) {
        if !rep.sim.history.is_empty() {
            let _ = write_history(dir, cfg, rep);
        }
    }
    write_manifest(dir, cfg, index, completed, result.as_ref().err()).at(Stage::Output)?;
    result
}

/// Runs every replicate under `<output>/<fingerprint>/`. Only a data load
/// failure aborts the whole experiment.
pub fn run_experiment(cfg: &ExperimentConfig) -> std::result::Result<ExperimentReport, StageError> {
    cfg.validate().at(Stage::Data)?;
    let data = load_data(&cfg.dataset).at(Stage::Data)?;
    let fingerprint = cfg.fingerprint();
    let root = cfg.output.join(&fingerprint);
    let replicates = (0..cfg.replicates)
        .map(|index| {
            let dir = root.join(index.to_string());
            let result = run_replicate(cfg, &data, index, &dir);
            ReplicateOutcome { index, dir, result }
        })
        .collect();
    Ok(ExperimentReport {
        fingerprint,
        root,
        replicates,
    })
}

fn replicate_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    if dir.join("manifest.json").is_file() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("manifest.json").is_file())
        .collect();
    dirs.sort_by_key(|p| {
        let name = p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        (name.parse::<usize>().unwrap_or(usize::MAX), name)
    });
    if dirs.is_empty() {
        return Err(Error::Report(format!("{} holds no replicate manifests", dir.display())));
    }
    Ok(dirs)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Summary statistics for a replicate directory or an experiment directory.
pub fn inspect(dir: &Path) -> Result<String> {
    use std::fmt::Write as _;
    let mut out = String::new();
    let mut finals = Vec::new();
    for rep in replicate_dirs(dir)? {
        let manifest: serde_json::Value = serde_json::from_str(&read(&rep.join("manifest.json"))?)?;
        let name = rep.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let status = manifest["status"].as_str().unwrap_or("unknown");
        let _ = writeln!(out, "replicate {name}: status {status}, seed {}", manifest["seed"]);
        if status != "ok" {
            let _ = writeln!(
                out,
                "  failed at stage {}: {}",
                manifest["stage"].as_str().unwrap_or("?"),
                manifest["error"].as_str().unwrap_or("?")
            );
        }
        let summary_path = rep.join("summary.csv");
        if !summary_path.is_file() {
            continue;
        }
        let summary = parse_summary_csv(&read(&summary_path)?)?;
        let Some(&(last_round, mean, std)) = summary.last() else {
            continue;
        };
        let (r0, m0, s0) = summary[0];
        let best = summary.iter().cloned().fold(summary[0], |a, b| if b.1 > a.1 { b } else { a });
        let _ = writeln!(out, "  round {r0}: mean {m0:.4} std {s0:.4}");
        let _ = writeln!(out, "  round {last_round}: mean {mean:.4} std {std:.4}");
        let _ = writeln!(out, "  best mean {:.4} at round {}", best.1, best.0);
        let per_node = parse_per_node_csv(&read(&rep.join("per_node.csv"))?)?;
        if let Some(last) = per_node.last() {
            let lo = last.accuracy.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = last.accuracy.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let _ = writeln!(out, "  final node accuracy range [{lo:.4}, {hi:.4}] over {} nodes", last.accuracy.len());
        }
        finals.push(mean);
    }
    if finals.len() > 1 {
        let (m, s) = mean_std(&finals);
        let _ = writeln!(out, "final mean accuracy across {} replicates: {m:.4} (std {s:.4})", finals.len());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_keys_are_rejected() {
        let text = r#"{"topology": {"kind": "ba", "n": 12, "m": 2},
            "partition": {"scheme": "hub_focused"}, "partition": {"scheme": "edge_focused"}}"#;
        assert!(ExperimentConfig::from_json(text).is_err());
    }

    #[test]
    fn replicate_runs_pretraining_then_rounds() {
        let text = r#"{
            "topology": {"kind": "ba", "n": 12, "m": 2},
            "dataset": {"source": "synthetic", "classes": 4, "dims": 5, "per_class": 60, "test_per_class": 10},
            "learner": {"hidden_layers": [6], "lr": 0.05, "batch_size": 8},
            "partition": {"scheme": "hub_focused", "fraction": 0.25, "g1_classes": [0, 1], "g2_classes": [2, 3]},
            "rounds": 3
        }"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        let data = load_data(&cfg.dataset).unwrap();
        let rep = simulate(&cfg, &data, 0).unwrap();
        let rounds: Vec<usize> = rep.sim.history.iter().map(|r| r.round).collect();
        assert_eq!(rounds, vec![0, 1, 2, 3]);
        assert_eq!(rep.plan.focus_nodes.len(), 3);
        assert_eq!(rep.sim.test.len(), 40);
    }

    #[test]
    fn replicate_seeds_are_offsets() {
        let text = r#"{"topology": {"kind": "ba", "n": 12, "m": 2}, "partition": {"scheme": "hub_focused"}, "seed": 40}"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        assert_eq!(replicate_seed(&cfg, 0), 40);
        assert_eq!(replicate_seed(&cfg, 2), 42);
    }

}
