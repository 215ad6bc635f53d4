//! Rank Centrality: scores are the stationary distribution of a random walk
//! that moves from each item towards the items that beat it.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scores::ScoreTable;
use crate::types::{Comparison, Outcome};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RcConfig {
    /// Pseudo-count added to both directions of every compared pair.
    pub epsilon: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for RcConfig {
    fn default() -> Self {
        Self {
            epsilon: 1.0,
            tolerance: 1e-10,
            max_iterations: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankCentralityFit {
    pub table: ScoreTable,
    /// Connected components of the comparison graph.
    pub components: usize,
    /// Set when the graph has more than one component; the stationary masses
    /// are then per component, each keeping its uniform starting share.
    pub disconnected: bool,
    pub iterations: usize,
    pub residual: f64,
}

/// Sparse row-stochastic chain: off-diagonal moves plus self-loop mass.
struct Chain {
    ids: Vec<String>,
    moves: Vec<Vec<(usize, f64)>>,
    stay: Vec<f64>,
}

impl Chain {
    fn build(comparisons: &[Comparison], epsilon: f64) -> Self {
        let ids: Vec<String> = comparisons
            .iter()
            .flat_map(|c| [c.left_id.clone(), c.right_id.clone()])
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let index: HashMap<&str, usize> =
            ids.iter().enumerate().map(|(k, id)| (id.as_str(), k)).collect();

        // wins[(i, j)] = times i beat j; ties give half a win to each side.
        let mut wins: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        let mut neighbours: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); ids.len()];
        for c in comparisons {
            let l = index[c.left_id.as_str()];
            let r = index[c.right_id.as_str()];
            neighbours[l].insert(r);
            neighbours[r].insert(l);
            let (to_left, to_right) = match c.outcome {
                Outcome::Left => (1.0, 0.0),
                Outcome::Tie => (0.5, 0.5),
                Outcome::Right => (0.0, 1.0),
            };
            *wins.entry((l, r)).or_default() += to_left;
            *wins.entry((r, l)).or_default() += to_right;
        }
        let d_max = neighbours.iter().map(BTreeSet::len).max().unwrap_or(1).max(1) as f64;

        let mut moves = vec![Vec::new(); ids.len()];
        let mut stay = vec![1.0; ids.len()];
        for (i, adjacent) in neighbours.iter().enumerate() {
            for &j in adjacent {
                let w_ij = wins.get(&(i, j)).copied().unwrap_or(0.0);
                let w_ji = wins.get(&(j, i)).copied().unwrap_or(0.0);
                let p = (w_ji + epsilon) / (w_ij + w_ji + 2.0 * epsilon) / d_max;
                moves[i].push((j, p));
                stay[i] -= p;
            }
        }
        Self { ids, moves, stay }
    }

    fn step(&self, v: &[f64]) -> Vec<f64> {
        let mut next: Vec<f64> = v.iter().zip(&self.stay).map(|(x, s)| x * s).collect();
        for (i, row) in self.moves.iter().enumerate() {
            for &(j, p) in row {
                next[j] += v[i] * p;
            }
        }
        next
    }

    fn components(&self) -> usize {
        let n = self.ids.len();
        let mut seen = vec![false; n];
        let mut count = 0;
        for start in 0..n {
            if seen[start] {
                continue;
            }
            count += 1;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(i) = stack.pop() {
                for &(j, _) in &self.moves[i] {
                    if !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        count
    }
}

pub fn rank_centrality(comparisons: &[Comparison], config: &RcConfig) -> Result<RankCentralityFit> {
    if !(config.epsilon > 0.0 && config.tolerance > 0.0) {
        return Err(Error::InvalidConfig(format!("bad Rank Centrality config {config:?}")));
    }
    let chain = Chain::build(comparisons, config.epsilon);
    let n = chain.ids.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "Rank Centrality needs at least 2 items, got {n}"
        )));
    }
    let mut v = vec![1.0 / n as f64; n];
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < config.max_iterations {
        let next = chain.step(&v);
        residual = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
        v = next;
        iterations += 1;
        if residual < config.tolerance {
            break;
        }
    }
    if residual >= config.tolerance {
        return Err(Error::NonConvergence {
            method: "rank centrality",
            iterations,
            residual,
        });
    }
    let total: f64 = v.iter().sum();
    let scores = chain
        .ids
        .iter()
        .cloned()
        .zip(v.iter().map(|x| x / total))
        .collect();
    let components = chain.components();
    Ok(RankCentralityFit {
        table: ScoreTable::new("rank_centrality", scores)?,
        components,
        disconnected: components > 1,
        iterations,
        residual,
    })
}
