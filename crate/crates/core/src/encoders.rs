//! Graph encoders for molecules and residue graphs, the affinity fusion
//! applied inside the protein encoder, and max-pool readout.

use std::sync::Arc;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, Init, ParamId, ParamStore};
use crate::tensor::SparseMatrix;

/// Stack of bias-free graph convolutions, each `H ← ReLU(Â H W)`.
#[derive(Debug, Clone)]
pub struct GcnStack {
    layers: Vec<ParamId>,
    dims: Vec<(usize, usize)>,
}

impl GcnStack {
    /// `dims` lists `(in, out)` per layer. Consecutive layers need not chain
    /// when the caller transforms activations in between (the protein path
    /// doubles its width after layer one).
    pub fn new(store: &mut ParamStore, init: &Init, prefix: &str, dims: &[(usize, usize)]) -> Self {
        let layers = dims
            .iter()
            .enumerate()
            .map(|(l, &(i, o))| {
                let name = format!("{prefix}.w{l}");
                let w = init.glorot(&name, i, o);
                store.add(&name, w)
            })
            .collect();
        GcnStack {
            layers,
            dims: dims.to_vec(),
        }
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn dims(&self) -> &[(usize, usize)] {
        &self.dims
    }

    pub fn params(&self) -> &[ParamId] {
        &self.layers
    }

    /// Applies layer `l`.
    pub fn layer(&self, tape: &mut Tape, bound: &Bound, adj: &Arc<SparseMatrix>, h: Var, l: usize) -> Result<Var> {
        let (i, o) = self.dims[l];
        let shape = tape.shape(h).to_vec();
        if shape[1] != i || shape[0] != adj.n_rows() {
            return Err(Error::ModelConfig(format!(
                "gcn layer {l} expects {} x {i} input (adjacency {0}x{0}), got {shape:?}",
                adj.n_rows()
            )));
        }
        let ah = tape.spmm(adj, h)?;
        let z = tape.matmul(ah, bound.var(self.layers[l]))?;
        debug_assert_eq!(tape.shape(z)[1], o);
        Ok(tape.relu(z))
    }

    /// Runs layers `range` in order.
    pub fn forward_range(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        adj: &Arc<SparseMatrix>,
        mut h: Var,
        range: std::ops::Range<usize>,
    ) -> Result<Var> {
        for l in range {
            h = self.layer(tape, bound, adj, h, l)?;
        }
        Ok(h)
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, adj: &Arc<SparseMatrix>, x: Var) -> Result<Var> {
        self.forward_range(tape, bound, adj, x, 0..self.layers.len())
    }
}

/// Linear, bias-free map applied to a target's positive affinity embedding
/// before it is merged into every residue.
#[derive(Debug, Clone, Copy)]
pub struct FusionMap {
    pub weight: ParamId,
}

impl FusionMap {
    pub fn new(store: &mut ParamStore, init: &Init, name: &str, dim: usize) -> Self {
        let w = init.glorot(name, dim, dim);
        FusionMap {
            weight: store.add(name, w),
        }
    }

    pub fn apply(&self, tape: &mut Tape, bound: &Bound, a: Var) -> Result<Var> {
        tape.matmul(a, bound.var(self.weight))
    }
}

/// Per residue: `[h + f(a) ∥ h − f(a)]`, with `f(a)` a `1 × d` row shared by
/// all residues.
pub fn fuse_affinity_into_protein(tape: &mut Tape, h_nodes: Var, fa: Var) -> Result<Var> {
    let plus = tape.add_row_bias(h_nodes, fa)?;
    let neg = tape.scale(fa, -1.0);
    let minus = tape.add_row_bias(h_nodes, neg)?;
    tape.concat_cols(&[plus, minus])
}

/// Global max pooling over nodes.
pub fn gmp_readout(tape: &mut Tape, node_embeds: Var) -> Result<Var> {
    if tape.shape(node_embeds)[0] == 0 {
        return Err(Error::Domain("max pooling over an empty graph".into()));
    }
    tape.max_over_rows(node_embeds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affinity::normalize_adjacency;
    use crate::gradcheck::random_tensor;
    use crate::tensor::Tensor;

    fn stack(dims: &[(usize, usize)]) -> (ParamStore, GcnStack) {
        let mut store = ParamStore::new();
        let s = GcnStack::new(&mut store, &Init::new(3), "g", dims);
        (store, s)
    }

    #[test]
    fn single_node_is_plain_mlp() {
        let (store, s) = stack(&[(3, 4), (4, 4), (4, 2)]);
        let adj = Arc::new(normalize_adjacency(&[], 1).unwrap());
        let x = random_tensor(1, 1, 3);
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let out = s.forward(&mut tape, &b, &adj, xv).unwrap();
        let relu = |t: Tensor| t.map(|v| v.max(0.0));
        let mut h = x;
        for &p in s.params() {
            h = relu(h.matmul(store.get(p)).unwrap());
        }
        assert_eq!(tape.value(out), &h);
    }

    #[test]
    fn zero_features_give_zero_output() {
        let (store, s) = stack(&[(3, 4), (4, 4)]);
        let adj = Arc::new(normalize_adjacency(&[(0, 1), (1, 2)], 3).unwrap());
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let x = tape.constant(Tensor::zeros(&[3, 3]));
        let out = s.forward(&mut tape, &b, &adj, x).unwrap();
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let (store, s) = stack(&[(3, 4)]);
        let adj = Arc::new(normalize_adjacency(&[], 2).unwrap());
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let x = tape.constant(Tensor::zeros(&[2, 5]));
        assert!(matches!(s.forward(&mut tape, &b, &adj, x), Err(Error::ModelConfig(_))));
    }

    #[test]
    fn fusion_examples() {
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let zero = tape.constant(Tensor::zeros(&[1, 2]));
        let out = fuse_affinity_into_protein(&mut tape, h, zero).unwrap();
        assert_eq!(tape.value(out).data(), &[1.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 4.0]);

        let hz = tape.constant(Tensor::zeros(&[2, 2]));
        let fa = tape.constant(Tensor::row_vector(&[0.5, -1.5]));
        let out = fuse_affinity_into_protein(&mut tape, hz, fa).unwrap();
        assert_eq!(tape.value(out).row(1), &[0.5, -1.5, -0.5, 1.5]);
    }

    #[test]
    fn fusion_halves_reconstruct_input() {
        let mut tape = Tape::new();
        let hv = random_tensor(4, 5, 3).map(|v| v.round() * 0.25);
        let h = tape.constant(hv.clone());
        let fa = tape.constant(Tensor::row_vector(&[0.5, 0.25, -0.75]));
        let out = fuse_affinity_into_protein(&mut tape, h, fa).unwrap();
        let o = tape.value(out);
        for r in 0..5 {
            for c in 0..3 {
                assert_eq!((o.get(r, c) + o.get(r, c + 3)) / 2.0, hv.get(r, c));
            }
        }
    }

    #[test]
    fn gmp_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[&[1.0, 5.0], &[3.0, 2.0]]));
        let m = gmp_readout(&mut tape, x).unwrap();
        assert_eq!(tape.value(m).data(), &[3.0, 5.0]);
        let one = tape.constant(Tensor::row_vector(&[7.0, -1.0]));
        let m = gmp_readout(&mut tape, one).unwrap();
        assert_eq!(tape.value(m).data(), &[7.0, -1.0]);
        let empty = tape.constant(Tensor::zeros(&[0, 2]));
        assert!(matches!(gmp_readout(&mut tape, empty), Err(Error::Domain(_))));
    }
}
