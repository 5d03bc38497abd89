//! Non-IID placement of samples onto nodes.
//!
//! Every scheme samples without replacement across the whole network, so a
//! sample index belongs to at most one shard, and every node assigned a
//! class holds the same number of samples of it.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{config_err, Error, Result};
use crate::graph::Graph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    HubFocused,
    EdgeFocused,
    Community,
}

/// A node's local dataset, as sorted indices into the shared [`Dataset`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shard {
    owner: usize,
    sample_indices: Vec<usize>,
    label_histogram: Vec<usize>,
}

impl Shard {
    pub fn new(owner: usize, mut sample_indices: Vec<usize>, ds: &Dataset) -> Result<Self> {
        sample_indices.sort_unstable();
        let mut label_histogram = vec![0; ds.class_count()];
        for &i in &sample_indices {
            if i >= ds.len() {
                return Err(config_err!("shard {owner}: sample index {i} out of range"));
            }
            label_histogram[ds.label(i)] += 1;
        }
        Ok(Shard {
            owner,
            sample_indices,
            label_histogram,
        })
    }

    pub fn owner(&self) -> usize {
        self.owner
    }

    pub fn sample_indices(&self) -> &[usize] {
        &self.sample_indices
    }

    pub fn label_histogram(&self) -> &[usize] {
        &self.label_histogram
    }

    pub fn len(&self) -> usize {
        self.sample_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_indices.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    pub shards: Vec<Shard>,
    pub scheme: Scheme,
    pub focus_nodes: Vec<usize>,
    pub per_node_per_class: usize,
    pub class_count: usize,
}

impl PartitionPlan {
    /// Classes held by at least one node, ascending.
    pub fn assigned_classes(&self) -> Vec<usize> {
        let global = label_distribution(self).global;
        (0..self.class_count).filter(|&c| global[c] > 0).collect()
    }

    pub fn shard_sizes(&self) -> Vec<usize> {
        self.shards.iter().map(Shard::len).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let file = PartitionFile {
            scheme: self.scheme,
            focus_nodes: self.focus_nodes.clone(),
            per_node_per_class: self.per_node_per_class,
            class_count: self.class_count,
            shards: self
                .shards
                .iter()
                .map(|s| (s.owner, s.sample_indices.clone()))
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = self.to_json()?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Rebuilds a plan from its JSON export against the dataset it indexes.
    pub fn from_json(text: &str, ds: &Dataset) -> Result<Self> {
        let file: PartitionFile = serde_json::from_str(text)?;
        let shards = file
            .shards
            .into_iter()
            .map(|(owner, idx)| Shard::new(owner, idx, ds))
            .collect::<Result<Vec<_>>>()?;
        Ok(PartitionPlan {
            shards,
            scheme: file.scheme,
            focus_nodes: file.focus_nodes,
            per_node_per_class: file.per_node_per_class,
            class_count: file.class_count,
        })
    }
}

/// On-disk layout of a partition plan.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartitionFile {
    scheme: Scheme,
    focus_nodes: Vec<usize>,
    per_node_per_class: usize,
    class_count: usize,
    shards: BTreeMap<usize, Vec<usize>>,
}

/// Deals `k` samples of each class to its recipients. `recipients[c]` lists
/// the nodes that receive class `c` (empty when unassigned).
fn deal<R: Rng>(
    ds: &Dataset,
    n: usize,
    recipients: &[Vec<usize>],
    k: Option<usize>,
    rng: &mut R,
) -> Result<(Vec<Vec<usize>>, usize)> {
    let pools = ds.indices_by_class();
    let k = match k {
        Some(k) => k,
        None => {
            // Largest equal share every assigned class can afford.
            let share = recipients
                .iter()
                .enumerate()
                .filter(|(_, r)| !r.is_empty())
                .map(|(c, r)| pools[c].len() / r.len())
                .min()
                .unwrap_or(0);
            if share == 0 {
                let (class, r) = recipients
                    .iter()
                    .enumerate()
                    .find(|(c, r)| !r.is_empty() && pools[*c].len() < r.len())
                    .expect("zero share implies a short class");
                return Err(Error::InsufficientSamples {
                    class,
                    needed: r.len(),
                    available: pools[class].len(),
                });
            }
            share
        }
    };
    let mut assigned = vec![Vec::new(); n];
    for (class, nodes) in recipients.iter().enumerate() {
        if nodes.is_empty() {
            continue;
        }
        let needed = k * nodes.len();
        let mut pool = pools[class].clone();
        if pool.len() < needed {
            return Err(Error::InsufficientSamples {
                class,
                needed,
                available: pool.len(),
            });
        }
        pool.shuffle(rng);
        for (slot, &node) in nodes.iter().enumerate() {
            assigned[node].extend_from_slice(&pool[slot * k..(slot + 1) * k]);
        }
    }
    Ok((assigned, k))
}

fn check_classes(classes: &[usize], class_count: usize, what: &str) -> Result<()> {
    if let Some(&c) = classes.iter().find(|&&c| c >= class_count) {
        return Err(config_err!("{what} class {c} outside [0, {class_count})"));
    }
    Ok(())
}

/// Every node gets `k` samples of each `g1` class; only `focus` nodes also
/// get `k` samples of each `g2` class. `k = None` picks the largest share
/// that all assigned classes can supply.
#[allow(clippy::too_many_arguments)]
pub fn partition_focus<R: Rng>(
    ds: &Dataset,
    g: &Graph,
    focus: &[usize],
    g1_classes: &[usize],
    g2_classes: &[usize],
    per_node_per_class: Option<usize>,
    scheme: Scheme,
    rng: &mut R,
) -> Result<PartitionPlan> {
    let c = ds.class_count();
    check_classes(g1_classes, c, "g1")?;
    check_classes(g2_classes, c, "g2")?;
    if let Some(x) = g1_classes.iter().find(|x| g2_classes.contains(x)) {
        return Err(config_err!("class {x} appears in both g1 and g2"));
    }
    if let Some(&v) = focus.iter().find(|&&v| v >= g.n()) {
        return Err(config_err!("focus node {v} outside graph of {} nodes", g.n()));
    }
    let mut focus = focus.to_vec();
    focus.sort_unstable();
    focus.dedup();

    let everyone: Vec<usize> = (0..g.n()).collect();
    let mut recipients = vec![Vec::new(); c];
    for &class in g1_classes {
        recipients[class] = everyone.clone();
    }
    for &class in g2_classes {
        recipients[class] = focus.clone();
    }
    let (assigned, k) = deal(ds, g.n(), &recipients, per_node_per_class, rng)?;
    let shards = assigned
        .into_iter()
        .enumerate()
        .map(|(node, idx)| Shard::new(node, idx, ds))
        .collect::<Result<Vec<_>>>()?;
    Ok(PartitionPlan {
        shards,
        scheme,
        focus_nodes: focus,
        per_node_per_class: k,
        class_count: c,
    })
}

/// Nodes in block `b` get `k` samples of each class in
/// `classes_per_block[b]`; class sets must be pairwise disjoint.
pub fn partition_community<R: Rng>(
    ds: &Dataset,
    g: &Graph,
    classes_per_block: &[Vec<usize>],
    per_node_per_class: Option<usize>,
    rng: &mut R,
) -> Result<PartitionPlan> {
    let blocks = g
        .blocks()
        .ok_or_else(|| config_err!("community partition needs a graph with blocks"))?;
    if classes_per_block.len() != g.block_count() {
        return Err(config_err!(
            "classes_per_block has {} entries for {} blocks",
            classes_per_block.len(),
            g.block_count()
        ));
    }
    let c = ds.class_count();
    let mut owner_block = vec![None; c];
    for (b, classes) in classes_per_block.iter().enumerate() {
        check_classes(classes, c, "community")?;
        for &class in classes {
            if let Some(prev) = owner_block[class].replace(b) {
                return Err(config_err!(
                    "class {class} assigned to both block {prev} and block {b}"
                ));
            }
        }
    }
    let mut recipients = vec![Vec::new(); c];
    for (class, owner) in owner_block.iter().enumerate() {
        if let Some(b) = owner {
            recipients[class] = (0..g.n()).filter(|&v| blocks[v] == *b).collect();
        }
    }
    let (assigned, k) = deal(ds, g.n(), &recipients, per_node_per_class, rng)?;
    let shards = assigned
        .into_iter()
        .enumerate()
        .map(|(node, idx)| Shard::new(node, idx, ds))
        .collect::<Result<Vec<_>>>()?;
    Ok(PartitionPlan {
        shards,
        scheme: Scheme::Community,
        focus_nodes: Vec::new(),
        per_node_per_class: k,
        class_count: c,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelTable {
    pub per_node: Vec<Vec<usize>>,
    pub global: Vec<usize>,
}

pub fn label_distribution(plan: &PartitionPlan) -> LabelTable {
    let per_node: Vec<Vec<usize>> = plan
        .shards
        .iter()
        .map(|s| s.label_histogram.clone())
        .collect();
    let mut global = vec![0; plan.class_count];
    for h in &per_node {
        for (g, x) in global.iter_mut().zip(h) {
            *g += x;
        }
    }
    LabelTable { per_node, global }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::gen_synthetic;
    use crate::graph::{gen_erdos_renyi, select_by_degree, DegreeMode, Topology};
    use crate::rng::seeded;

    fn blobs(per_class: usize) -> Dataset {
        gen_synthetic(10, 4, per_class, 0.1, &mut seeded(0)).unwrap()
    }

    fn recount(ds: &Dataset, plan: &PartitionPlan) -> Vec<usize> {
        let mut h = vec![0; ds.class_count()];
        for s in &plan.shards {
            for &i in s.sample_indices() {
                h[ds.label(i)] += 1;
            }
        }
        h
    }

    fn disjoint(plan: &PartitionPlan) -> bool {
        let mut all: Vec<usize> = plan
            .shards
            .iter()
            .flat_map(|s| s.sample_indices().iter().copied())
            .collect();
        all.sort_unstable();
        all.windows(2).all(|w| w[0] != w[1])
    }

    #[test]
    fn empty_focus_gives_identical_g1_histograms() {
        let ds = blobs(200);
        let g = gen_erdos_renyi(20, 0.2, &mut seeded(1)).unwrap();
        let plan = partition_focus(&ds, &g, &[], &[0, 1, 2, 3, 4], &[5, 6, 7, 8, 9], Some(5), Scheme::HubFocused, &mut seeded(2)).unwrap();
        let table = label_distribution(&plan);
        for h in &table.per_node {
            assert_eq!(h, &vec![5, 5, 5, 5, 5, 0, 0, 0, 0, 0]);
        }
        assert!(disjoint(&plan));
    }

    #[test]
    fn hub_focus_on_hundred_nodes() {
        let ds = blobs(1000);
        let g = gen_erdos_renyi(100, 0.05, &mut seeded(3)).unwrap();
        let focus = select_by_degree(&g, 0.1, DegreeMode::Highest, &mut seeded(4)).unwrap();
        let plan = partition_focus(&ds, &g, &focus, &[0, 1, 2, 3, 4], &[5, 6, 7, 8, 9], Some(8), Scheme::HubFocused, &mut seeded(5)).unwrap();
        let with_g2 = plan
            .shards
            .iter()
            .filter(|s| s.label_histogram()[5..].iter().all(|&x| x > 0))
            .count();
        assert_eq!(with_g2, 10);
        for s in &plan.shards {
            let expect_g2 = if focus.contains(&s.owner()) { 8 } else { 0 };
            assert!(s.label_histogram()[..5].iter().all(|&x| x == 8));
            assert!(s.label_histogram()[5..].iter().all(|&x| x == expect_g2));
        }
        assert!(disjoint(&plan));
        assert_eq!(label_distribution(&plan).global, recount(&ds, &plan));
    }

    #[test]
    fn default_share_is_equal_and_maximal() {
        let ds = blobs(100);
        let g = gen_erdos_renyi(10, 0.3, &mut seeded(1)).unwrap();
        let plan = partition_focus(&ds, &g, &[0, 1], &[0, 1], &[2], None, Scheme::EdgeFocused, &mut seeded(2)).unwrap();
        assert_eq!(plan.per_node_per_class, 10);
    }

    #[test]
    fn insufficient_samples_reports_deficit() {
        let ds = blobs(30);
        let g = gen_erdos_renyi(10, 0.3, &mut seeded(1)).unwrap();
        let err = partition_focus(&ds, &g, &[], &[0], &[], Some(4), Scheme::HubFocused, &mut seeded(2)).unwrap_err();
        assert!(err.to_string().contains("deficit 10"), "{err}");
        match err {
            Error::InsufficientSamples { class, needed, available } => {
                assert_eq!((class, needed, available), (0, 40, 30));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn community_paper_mapping() {
        let ds = blobs(300);
        let g = Topology::planted_partition(vec![25; 4], 0.5, 0.01)
            .generate(&mut seeded(6))
            .unwrap();
        let mapping = vec![vec![0, 1], vec![2, 3], vec![4, 5], vec![6, 7]];
        let plan = partition_community(&ds, &g, &mapping, Some(6), &mut seeded(7)).unwrap();
        let blocks = g.blocks().unwrap();
        let table = label_distribution(&plan);
        for (v, h) in table.per_node.iter().enumerate() {
            let allowed = &mapping[blocks[v]];
            for (c, &count) in h.iter().enumerate() {
                assert_eq!(count, if allowed.contains(&c) { 6 } else { 0 });
            }
        }
        for c in 0..8 {
            assert_eq!(table.global[c], 6 * 25);
        }
        assert_eq!(table.global[8] + table.global[9], 0);
        assert_eq!(table.global, recount(&ds, &plan));
        assert_eq!(plan.assigned_classes(), (0..8).collect::<Vec<_>>());
        assert!(disjoint(&plan));
    }

    #[test]
    fn community_rejects_overlap_and_missing_blocks() {
        let ds = blobs(100);
        let g = Topology::planted_partition(vec![5, 5], 0.5, 0.1)
            .generate(&mut seeded(1))
            .unwrap();
        assert!(partition_community(&ds, &g, &[vec![0, 1], vec![1, 2]], Some(1), &mut seeded(0)).is_err());
        let plain = gen_erdos_renyi(10, 0.3, &mut seeded(1)).unwrap();
        assert!(partition_community(&ds, &plain, &[vec![0]], Some(1), &mut seeded(0)).is_err());
    }

    #[test]
    fn single_block_is_iid_split() {
        let ds = blobs(100);
        let g = Topology::planted_partition(vec![10], 0.5, 0.5)
            .generate(&mut seeded(1))
            .unwrap();
        let plan = partition_community(&ds, &g, &[(0..10).collect()], None, &mut seeded(0)).unwrap();
        for s in &plan.shards {
            assert_eq!(s.label_histogram(), &[10; 10]);
        }
    }

    #[test]
    fn empty_shard_histogram_is_zero() {
        let ds = blobs(10);
        let s = Shard::new(0, vec![], &ds).unwrap();
        assert_eq!(s.label_histogram(), &[0; 10]);
        assert!(Shard::new(0, vec![1000], &ds).is_err());
    }

    #[test]
    fn json_round_trip() {
        let ds = blobs(100);
        let g = gen_erdos_renyi(12, 0.3, &mut seeded(1)).unwrap();
        let plan = partition_focus(&ds, &g, &[3], &[0, 1], &[2], Some(3), Scheme::EdgeFocused, &mut seeded(2)).unwrap();
        let text = plan.to_json().unwrap();
        assert_eq!(PartitionPlan::from_json(&text, &ds).unwrap(), plan);
    }

    #[test]
    fn deterministic_for_seed() {
        let ds = blobs(200);
        let g = gen_erdos_renyi(30, 0.2, &mut seeded(1)).unwrap();
        let a = partition_focus(&ds, &g, &[1, 2], &[0, 1], &[5], Some(4), Scheme::HubFocused, &mut seeded(9)).unwrap();
        let b = partition_focus(&ds, &g, &[1, 2], &[0, 1], &[5], Some(4), Scheme::HubFocused, &mut seeded(9)).unwrap();
        assert_eq!(a, b);
    }
}
