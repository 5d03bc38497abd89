//! Reductions over per-node results and the CSV files that persist them.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::learner::Confusion;

/// Evaluation of every node at the end of one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub accuracy: Vec<f64>,
    pub loss: Vec<f64>,
    pub confusion: Option<Vec<Confusion>>,
}

/// Arithmetic mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn mean_std_over_nodes(rec: &RoundRecord) -> (f64, f64) {
    mean_std(&rec.accuracy)
}

/// Row-normalized confusion averaged over one block's members.
#[derive(Debug, Clone, PartialEq)]
pub struct CommunityConfusion {
    pub block: usize,
    /// `matrix[true][predicted]`; rows without test support are all zero.
    pub matrix: Vec<Vec<f64>>,
}

impl CommunityConfusion {
    /// Fraction of class `c` test samples this community classifies correctly.
    pub fn class_accuracy(&self, c: usize) -> f64 {
        self.matrix[c][c]
    }
}

/// Sums member confusion counts per block, then normalizes each row by its
/// true-class total.
pub fn community_confusion(confusions: &[Confusion], blocks: &[usize]) -> Result<Vec<CommunityConfusion>> {
    if confusions.len() != blocks.len() {
        return Err(Error::Report(format!(
            "{} confusion matrices for {} block labels",
            confusions.len(),
            blocks.len()
        )));
    }
    let b = blocks.iter().max().map_or(0, |m| m + 1);
    let c = confusions.first().map_or(0, Vec::len);
    let mut sums = vec![vec![vec![0u64; c]; c]; b];
    let mut members = vec![0usize; b];
    for (m, &block) in confusions.iter().zip(blocks) {
        members[block] += 1;
        for (acc_row, row) in sums[block].iter_mut().zip(m) {
            for (a, x) in acc_row.iter_mut().zip(row) {
                *a += x;
            }
        }
    }
    if let Some(empty) = members.iter().position(|&k| k == 0) {
        return Err(Error::Report(format!("block {empty} has no nodes")));
    }
    Ok(sums
        .into_iter()
        .enumerate()
        .map(|(block, counts)| CommunityConfusion {
            block,
            matrix: counts
                .into_iter()
                .map(|row| {
                    let total: u64 = row.iter().sum();
                    row.into_iter()
                        .map(|x| if total == 0 { 0.0 } else { x as f64 / total as f64 })
                        .collect()
                })
                .collect(),
        })
        .collect())
}

/// Mean accuracy of `group_a` minus that of `group_b`.
pub fn accuracy_gap(rec: &RoundRecord, group_a: &[usize], group_b: &[usize]) -> Result<f64> {
    if group_a.is_empty() || group_b.is_empty() {
        return Err(Error::Usage("accuracy_gap needs non-empty groups".into()));
    }
    if let Some(v) = group_a.iter().find(|v| group_b.contains(v)) {
        return Err(Error::Usage(format!("node {v} is in both groups")));
    }
    let mean = |g: &[usize]| g.iter().map(|&v| rec.accuracy[v]).sum::<f64>() / g.len() as f64;
    Ok(mean(group_a) - mean(group_b))
}

/// First round at which each node's accuracy reaches `threshold`; `None`
/// marks nodes that never do.
pub fn straggler_report(history: &[RoundRecord], threshold: f64) -> Vec<Option<usize>> {
    let n = history.first().map_or(0, |r| r.accuracy.len());
    (0..n)
        .map(|v| {
            history
                .iter()
                .find(|r| r.accuracy[v] >= threshold)
                .map(|r| r.round)
        })
        .collect()
}

pub const PER_NODE_HEADER: &str = "round,node,accuracy,loss";
pub const SUMMARY_HEADER: &str = "round,mean_accuracy,std_accuracy";
pub const CONFUSION_HEADER: &str = "round,node,true_class,pred_class,count";

pub fn per_node_csv(history: &[RoundRecord]) -> String {
    let mut out = format!("{PER_NODE_HEADER}\n");
    for rec in history {
        for (v, (a, l)) in rec.accuracy.iter().zip(&rec.loss).enumerate() {
            let _ = writeln!(out, "{},{v},{a},{l}", rec.round);
        }
    }
    out
}

pub fn summary_csv(history: &[RoundRecord]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for rec in history {
        let (m, s) = mean_std_over_nodes(rec);
        let _ = writeln!(out, "{},{m},{s}", rec.round);
    }
    out
}

/// Confusion counts for rounds that are multiples of `every`, plus the
/// last round. Zero cells are omitted.
pub fn confusion_csv(history: &[RoundRecord], every: usize) -> String {
    let mut out = format!("{CONFUSION_HEADER}\n");
    let last = history.last().map(|r| r.round);
    for rec in history {
        let due = (every > 0 && rec.round % every == 0) || Some(rec.round) == last;
        let Some(confusions) = rec.confusion.as_ref().filter(|_| due) else {
            continue;
        };
        for (v, m) in confusions.iter().enumerate() {
            for (t, row) in m.iter().enumerate() {
                for (p, &count) in row.iter().enumerate() {
                    if count > 0 {
                        let _ = writeln!(out, "{},{v},{t},{p},{count}", rec.round);
                    }
                }
            }
        }
    }
    out
}

/// Per-class accuracy per community (columns) followed by one row per
/// community giving its external edge counts, `-` on the diagonal.
pub fn community_table_csv(table: &[CommunityConfusion], classes: &[usize], edge_counts: &[Vec<usize>]) -> String {
    let b = table.len();
    let mut out = String::from("class");
    for k in 0..b {
        let _ = write!(out, ",community_{}", k + 1);
    }
    out.push('\n');
    for &c in classes {
        let _ = write!(out, "{c}");
        for t in table {
            let _ = write!(out, ",{}", t.matrix[c][c]);
        }
        out.push('\n');
    }
    for to in 0..b {
        let _ = write!(out, "edges_to_community_{}", to + 1);
        for from in 0..b {
            if from == to {
                out.push_str(",-");
            } else {
                let _ = write!(out, ",{}", edge_counts[from][to]);
            }
        }
        out.push('\n');
    }
    out
}

/// Parses `summary.csv` into `(round, mean, std)` rows.
pub fn parse_summary_csv(text: &str) -> Result<Vec<(usize, f64, f64)>> {
    let mut lines = text.lines();
    if lines.next() != Some(SUMMARY_HEADER) {
        return Err(Error::Report("summary.csv has an unexpected header".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let bad = || Error::Report(format!("malformed summary row '{l}'"));
            let mut it = l.split(',');
            let round = it.next().and_then(|x| x.parse().ok()).ok_or_else(bad)?;
            let mean = it.next().and_then(|x| x.parse().ok()).ok_or_else(bad)?;
            let std = it.next().and_then(|x| x.parse().ok()).ok_or_else(bad)?;
            Ok((round, mean, std))
        })
        .collect()
}

/// Parses `per_node.csv` back into per-round accuracy/loss records.
pub fn parse_per_node_csv(text: &str) -> Result<Vec<RoundRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(PER_NODE_HEADER) {
        return Err(Error::Report("per_node.csv has an unexpected header".into()));
    }
    let mut out: Vec<RoundRecord> = Vec::new();
    for l in lines.filter(|l| !l.is_empty()) {
        let bad = || Error::Report(format!("malformed per-node row '{l}'"));
        let f: Vec<&str> = l.split(',').collect();
        if f.len() != 4 {
            return Err(bad());
        }
        let round: usize = f[0].parse().map_err(|_| bad())?;
        let acc: f64 = f[2].parse().map_err(|_| bad())?;
        let loss: f64 = f[3].parse().map_err(|_| bad())?;
        if out.last().map(|r| r.round) != Some(round) {
            out.push(RoundRecord {
                round,
                accuracy: Vec::new(),
                loss: Vec::new(),
                confusion: None,
            });
        }
        let rec = out.last_mut().unwrap();
        rec.accuracy.push(acc);
        rec.loss.push(loss);
    }
    Ok(out)
}
