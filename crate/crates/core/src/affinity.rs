//! Bipartite drug–target affinity graph, split by an affinity threshold into
//! a positive and a negative subgraph, each with its own symmetric
//! normalized adjacency `D̃^{-1/2}(A + I)D̃^{-1/2}` over the joint node set
//! (drugs first, then targets).

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::SparseMatrix;

/// Symmetric normalization of a binary adjacency with self-loops. Edge
/// direction and multiplicity are ignored; self-edges in `edges` are folded
/// into the mandatory self-loop.
pub fn normalize_adjacency(edges: &[(usize, usize)], n_nodes: usize) -> Result<SparseMatrix> {
    let mut set = BTreeSet::new();
    for &(i, j) in edges {
        if i >= n_nodes || j >= n_nodes {
            return Err(Error::Structural(format!(
                "edge ({i}, {j}) outside a graph of {n_nodes} nodes"
            )));
        }
        if i != j {
            set.insert((i, j));
            set.insert((j, i));
        }
    }
    let mut degree = vec![1.0f64; n_nodes];
    for &(i, _) in &set {
        degree[i] += 1.0;
    }
    let weight = |i: usize, j: usize| 1.0 / (degree[i] * degree[j]).sqrt();
    let mut entries: Vec<(usize, usize, f64)> = set.into_iter().map(|(i, j)| (i, j, weight(i, j))).collect();
    entries.extend((0..n_nodes).map(|i| (i, i, 1.0 / degree[i])));
    SparseMatrix::new(n_nodes, n_nodes, entries)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffinityEdge {
    pub drug: usize,
    pub target: usize,
    /// Measured affinity, kept as metadata; it is not placed in the adjacency.
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct AffinityGraph {
    drug_ids: Vec<String>,
    target_ids: Vec<String>,
    drug_index: HashMap<String, usize>,
    target_index: HashMap<String, usize>,
    pub pos_edges: Vec<AffinityEdge>,
    pub neg_edges: Vec<AffinityEdge>,
    pub adj_pos: Arc<SparseMatrix>,
    pub adj_neg: Arc<SparseMatrix>,
    pub threshold: f64,
}

/// Which subgraph an encoding belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    Positive,
    Negative,
}

impl AffinityGraph {
    /// Registers every listed drug and target (so test-only entities get
    /// rows without edges) and adds one edge per training triple: positive
    /// when `affinity >= threshold`, negative otherwise.
    pub fn build<'a>(
        drugs: impl IntoIterator<Item = &'a str>,
        targets: impl IntoIterator<Item = &'a str>,
        train: &[(&str, &str, f64)],
        threshold: f64,
    ) -> Result<Self> {
        if !threshold.is_finite() {
            return Err(Error::Data(format!("affinity threshold {threshold} is not finite")));
        }
        let drug_ids: Vec<String> = dedup(drugs);
        let target_ids: Vec<String> = dedup(targets);
        let drug_index: HashMap<_, _> = drug_ids.iter().enumerate().map(|(i, d)| (d.clone(), i)).collect();
        let target_index: HashMap<_, _> =
            target_ids.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();

        let mut seen: HashMap<(usize, usize), f64> = HashMap::new();
        let mut pos_edges = Vec::new();
        let mut neg_edges = Vec::new();
        for &(d, t, y) in train {
            let di = *drug_index
                .get(d)
                .ok_or_else(|| Error::Data(format!("training pair references unknown drug {d}")))?;
            let ti = *target_index
                .get(t)
                .ok_or_else(|| Error::Data(format!("training pair references unknown target {t}")))?;
            if !y.is_finite() {
                continue;
            }
            if let Some(&prev) = seen.get(&(di, ti)) {
                if prev != y {
                    return Err(Error::Data(format!(
                        "conflicting affinities for pair ({d}, {t}): {prev} vs {y}"
                    )));
                }
                continue;
            }
            seen.insert((di, ti), y);
            let e = AffinityEdge {
                drug: di,
                target: ti,
                weight: y,
            };
            if y >= threshold {
                pos_edges.push(e);
            } else {
                neg_edges.push(e);
            }
        }
        let n = drug_ids.len() + target_ids.len();
        let offset = drug_ids.len();
        let as_nodes = |edges: &[AffinityEdge]| -> Vec<(usize, usize)> {
            edges.iter().map(|e| (e.drug, offset + e.target)).collect()
        };
        let adj_pos = Arc::new(normalize_adjacency(&as_nodes(&pos_edges), n)?);
        let adj_neg = Arc::new(normalize_adjacency(&as_nodes(&neg_edges), n)?);
        Ok(AffinityGraph {
            drug_ids,
            target_ids,
            drug_index,
            target_index,
            pos_edges,
            neg_edges,
            adj_pos,
            adj_neg,
            threshold,
        })
    }

    pub fn n_drugs(&self) -> usize {
        self.drug_ids.len()
    }

    pub fn n_targets(&self) -> usize {
        self.target_ids.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.drug_ids.len() + self.target_ids.len()
    }

    pub fn drug_ids(&self) -> &[String] {
        &self.drug_ids
    }

    pub fn target_ids(&self) -> &[String] {
        &self.target_ids
    }

    /// Joint node index of a drug.
    pub fn drug_node(&self, id: &str) -> Option<usize> {
        self.drug_index.get(id).copied()
    }

    /// Joint node index of a target (offset past all drugs).
    pub fn target_node(&self, id: &str) -> Option<usize> {
        self.target_index.get(id).map(|&i| i + self.drug_ids.len())
    }

    pub fn adjacency(&self, polarity: Polarity) -> &Arc<SparseMatrix> {
        match polarity {
            Polarity::Positive => &self.adj_pos,
            Polarity::Negative => &self.adj_neg,
        }
    }

    /// Drug/target pairs carrying an edge in either subgraph.
    pub fn edge_pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.pos_edges.iter().chain(&self.neg_edges).map(|e| {
            (
                self.drug_ids[e.drug].as_str(),
                self.target_ids[e.target].as_str(),
            )
        })
    }
}

fn dedup<'a>(ids: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for id in ids {
        if seen.insert(id) {
            out.push(id.to_string());
        }
    }
    out
}

/// Two-layer graph convolution `ReLU(Â · ReLU(Â X W₀) · W₁)`.
pub fn encode_affinity(
    tape: &mut Tape,
    adj: &Arc<SparseMatrix>,
    node_embed: Var,
    w0: Var,
    w1: Var,
) -> Result<Var> {
    let shape_x = tape.shape(node_embed).to_vec();
    let (s0, s1) = (tape.shape(w0).to_vec(), tape.shape(w1).to_vec());
    if shape_x[0] != adj.n_rows() || shape_x[1] != s0[0] || s0[1] != s1[0] {
        return Err(Error::ModelConfig(format!(
            "affinity encoder: adjacency {}x{}, embeddings {:?}, W0 {:?}, W1 {:?}",
            adj.n_rows(),
            adj.n_cols(),
            shape_x,
            s0,
            s1
        )));
    }
    let ax = tape.spmm(adj, node_embed)?;
    let h = tape.matmul(ax, w0)?;
    let h = tape.relu(h);
    let ah = tape.spmm(adj, h)?;
    let out = tape.matmul(ah, w1)?;
    Ok(tape.relu(out))
}

/// Gathers `(h_pos, h_neg)` rows for a list of node indices; unknown
/// entities get zero rows.
pub fn lookup_rows(tape: &mut Tape, h_pos: Var, h_neg: Var, nodes: &[Option<usize>]) -> Result<(Var, Var)> {
    Ok((tape.gather_rows(h_pos, nodes)?, tape.gather_rows(h_neg, nodes)?))
}
