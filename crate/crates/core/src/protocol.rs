//! DecAvg: synchronous neighborhood averaging followed by local retraining.
//!
//! A round reads only the previous round's snapshot. Phase one computes
//! every node's aggregate from that snapshot, phase two retrains each node
//! on its own shard, phase three evaluates every node on the shared test
//! set. Per-node work inside a phase runs in parallel and touches only that
//! node's state, so results do not depend on scheduling.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::learner::{evaluate, train_epochs, ModelParams, OptimizerState};
use crate::metrics::RoundRecord;
use crate::partition::{PartitionPlan, Shard};
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Divide by `sum_j w_ij * alpha_ij`; coefficients sum to one.
    #[default]
    CoefficientSum,
    /// Divide by `sum_j w_ij`, exactly as the averaging rule is printed.
    PaperLiteral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaSource {
    #[default]
    ShardSize,
    HistogramMass,
}

/// How neighborhoods are averaged. The neighborhood of a node always
/// includes the node itself, weighted by its self-trust.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AggregationSpec {
    pub normalization: Normalization,
    pub alpha_source: AlphaSource,
}

/// Per-node dataset sizes used for the alpha weights.
pub fn node_sizes(plan: &PartitionPlan, source: AlphaSource) -> Vec<f64> {
    plan.shards
        .iter()
        .map(|s| match source {
            AlphaSource::ShardSize => s.len() as f64,
            AlphaSource::HistogramMass => s.label_histogram().iter().sum::<usize>() as f64,
        })
        .collect()
}

/// Averaging coefficients of node `i` over its closed neighborhood, as
/// `(j, c_ij)` sorted by `j`.
pub fn aggregation_coeffs(i: usize, g: &Graph, sizes: &[f64], spec: &AggregationSpec) -> Result<Vec<(usize, f64)>> {
    let mut members: Vec<(usize, f64)> = g.neighbors(i).to_vec();
    let pos = members.partition_point(|&(j, _)| j < i);
    members.insert(pos, (i, g.self_weight(i)));

    let size_total: f64 = members.iter().map(|&(j, _)| sizes[j]).sum();
    if !(size_total > 0.0) {
        return Err(Error::Degenerate {
            node: i,
            reason: "no data anywhere in its neighborhood".into(),
        });
    }
    let raw: Vec<(usize, f64)> = members
        .iter()
        .map(|&(j, w)| (j, w * sizes[j] / size_total))
        .collect();
    let divisor = match spec.normalization {
        Normalization::CoefficientSum => raw.iter().map(|&(_, c)| c).sum::<f64>(),
        Normalization::PaperLiteral => members.iter().map(|&(_, w)| w).sum::<f64>(),
    };
    if !(divisor > 0.0) {
        return Err(Error::Degenerate {
            node: i,
            reason: "aggregation weights sum to zero".into(),
        });
    }
    Ok(raw.into_iter().map(|(j, c)| (j, c / divisor)).collect())
}

fn check_architectures(params: &[ModelParams]) -> Result<()> {
    if let Some(first) = params.first() {
        if let Some(b) = params.iter().position(|p| !p.same_architecture(first)) {
            return Err(Error::ArchitectureMismatch { a: 0, b });
        }
    }
    Ok(())
}

/// Aggregate for one node. With coefficients summing to one it is computed
/// as `w_i + sum_{j != i} c_ij (w_j - w_i)`, which keeps identical inputs
/// and lone nodes bit-exact.
fn aggregate_node(i: usize, coeffs: &[(usize, f64)], params: &[ModelParams], spec: &AggregationSpec) -> ModelParams {
    let mut out = params[i].clone();
    match spec.normalization {
        Normalization::CoefficientSum => {
            let own = params[i].as_slice();
            let dst = out.as_mut_slice();
            for &(j, c) in coeffs {
                if j == i || c == 0.0 {
                    continue;
                }
                for ((d, &w), &o) in dst.iter_mut().zip(params[j].as_slice()).zip(own) {
                    *d += c * (w - o);
                }
            }
        }
        Normalization::PaperLiteral => {
            let dst = out.as_mut_slice();
            dst.fill(0.0);
            for &(j, c) in coeffs {
                for (d, &w) in dst.iter_mut().zip(params[j].as_slice()) {
                    *d += c * w;
                }
            }
        }
    }
    out
}

/// One synchronous averaging step over all nodes.
pub fn decavg_aggregate(
    params: &[ModelParams],
    g: &Graph,
    sizes: &[f64],
    spec: &AggregationSpec,
) -> Result<Vec<ModelParams>> {
    check_architectures(params)?;
    (0..params.len())
        .into_par_iter()
        .map(|i| {
            let coeffs = aggregation_coeffs(i, g, sizes, spec)?;
            Ok(aggregate_node(i, &coeffs, params, spec))
        })
        .collect()
}

/// Same as [`decavg_aggregate`] but visits nodes sequentially in `order`.
pub fn decavg_aggregate_ordered(
    params: &[ModelParams],
    g: &Graph,
    sizes: &[f64],
    spec: &AggregationSpec,
    order: &[usize],
) -> Result<Vec<ModelParams>> {
    check_architectures(params)?;
    let mut out: Vec<Option<ModelParams>> = vec![None; params.len()];
    for &i in order {
        let coeffs = aggregation_coeffs(i, g, sizes, spec)?;
        out[i] = Some(aggregate_node(i, &coeffs, params, spec));
    }
    out.into_iter()
        .enumerate()
        .map(|(i, p)| p.ok_or_else(|| Error::Usage(format!("node {i} missing from order"))))
        .collect()
}

/// Everything one node owns during a run.
#[derive(Debug, Clone)]
pub struct NodeState {
    pub id: usize,
    pub params: ModelParams,
    pub opt: OptimizerState,
    pub shard: Shard,
    pub rng: SimRng,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalTraining {
    pub epochs: usize,
    pub batch_size: usize,
}

/// Synchronous DecAvg simulation state.
pub struct SimulationState {
    pub graph: Graph,
    pub train: Arc<Dataset>,
    pub test: Arc<Dataset>,
    pub nodes: Vec<NodeState>,
    pub sizes: Vec<f64>,
    pub aggregation: AggregationSpec,
    pub local: LocalTraining,
    /// Rounds completed; 0 after pretraining.
    pub round: usize,
    pub history: Vec<RoundRecord>,
    pub fingerprint: String,
}

impl SimulationState {
    pub fn new(
        graph: Graph,
        train: Arc<Dataset>,
        test: Arc<Dataset>,
        nodes: Vec<NodeState>,
        sizes: Vec<f64>,
        aggregation: AggregationSpec,
        local: LocalTraining,
    ) -> Result<Self> {
        if nodes.len() != graph.n() || sizes.len() != graph.n() {
            return Err(Error::Usage(format!(
                "{} node states and {} sizes for a graph of {} nodes",
                nodes.len(),
                sizes.len(),
                graph.n()
            )));
        }
        let params: Vec<ModelParams> = nodes.iter().map(|n| n.params.clone()).collect();
        check_architectures(&params)?;
        Ok(SimulationState {
            graph,
            train,
            test,
            nodes,
            sizes,
            aggregation,
            local,
            round: 0,
            history: Vec::new(),
            fingerprint: String::new(),
        })
    }

    fn train_all(&mut self, round: usize) -> Result<()> {
        let train = &self.train;
        let local = self.local;
        self.nodes.par_iter_mut().try_for_each(|node| {
            train_epochs(
                &mut node.params,
                &mut node.opt,
                train,
                node.shard.sample_indices(),
                &mut node.rng,
                local.epochs,
                local.batch_size,
            )
            .map_err(|e| Error::InRound {
                round,
                node: node.id,
                source: Box::new(e),
            })
        })
    }

    fn evaluate_all(&mut self, round: usize) -> Result<()> {
        let test = &self.test;
        let evals = self
            .nodes
            .par_iter()
            .map(|node| {
                evaluate(&node.params, test).map_err(|e| Error::InRound {
                    round,
                    node: node.id,
                    source: Box::new(e),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut rec = RoundRecord {
            round,
            accuracy: Vec::with_capacity(evals.len()),
            loss: Vec::with_capacity(evals.len()),
            confusion: Some(Vec::with_capacity(evals.len())),
        };
        for e in evals {
            rec.accuracy.push(e.accuracy);
            rec.loss.push(e.loss);
            rec.confusion.as_mut().unwrap().push(e.confusion);
        }
        self.history.push(rec);
        Ok(())
    }

    /// Round 0: local training from the initial models, then evaluation.
    pub fn pretrain(&mut self) -> Result<&RoundRecord> {
        if !self.history.is_empty() {
            return Err(Error::Usage("pretraining already ran".into()));
        }
        self.train_all(0)?;
        self.evaluate_all(0)?;
        Ok(self.history.last().unwrap())
    }

    /// Aggregate, retrain, evaluate.
    pub fn run_round(&mut self) -> Result<&RoundRecord> {
        if self.history.is_empty() {
            self.pretrain()?;
        }
        let round = self.round + 1;
        let snapshot: Vec<ModelParams> = self.nodes.iter().map(|n| n.params.clone()).collect();
        let aggregated = decavg_aggregate(&snapshot, &self.graph, &self.sizes, &self.aggregation)
            .map_err(|e| match e {
                Error::Degenerate { node, .. } => Error::InRound {
                    round,
                    node,
                    source: Box::new(e),
                },
                other => other,
            })?;
        for (node, params) in self.nodes.iter_mut().zip(aggregated) {
            node.params = params;
        }
        self.train_all(round)?;
        self.evaluate_all(round)?;
        self.round = round;
        Ok(self.history.last().unwrap())
    }

    pub fn params(&self) -> Vec<ModelParams> {
        self.nodes.iter().map(|n| n.params.clone()).collect()
    }
}
