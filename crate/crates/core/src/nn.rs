//! Dense building blocks shared by the model heads.

use std::sync::Arc;

use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::params::{Bound, Init, ParamId, ParamStore};
use crate::rng;
use crate::tensor::Tensor;

/// Affine map `x W + b` with Glorot weights and zero bias.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, init: &Init, name: &str, fan_in: usize, fan_out: usize) -> Self {
        let wname = format!("{name}.w");
        let w = store.add(&wname, init.glorot(&wname, fan_in, fan_out));
        let b = store.add(&format!("{name}.b"), Tensor::zeros(&[1, fan_out]));
        Linear { w, b }
    }

    pub fn apply(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let y = tape.matmul(x, bound.var(self.w))?;
        tape.add_row_bias(y, bound.var(self.b))
    }
}

/// Two affine layers with a ReLU between them.
#[derive(Debug, Clone, Copy)]
pub struct Mlp2 {
    pub first: Linear,
    pub second: Linear,
}

impl Mlp2 {
    pub fn new(store: &mut ParamStore, init: &Init, name: &str, dims: [usize; 3]) -> Self {
        Mlp2 {
            first: Linear::new(store, init, &format!("{name}.l0"), dims[0], dims[1]),
            second: Linear::new(store, init, &format!("{name}.l1"), dims[1], dims[2]),
        }
    }

    pub fn apply(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let h = self.first.apply(tape, bound, x)?;
        let h = tape.relu(h);
        self.second.apply(tape, bound, h)
    }

    pub fn params(&self) -> [ParamId; 4] {
        [self.first.w, self.first.b, self.second.w, self.second.b]
    }
}

/// Inverted dropout whose mask is a pure function of `key` and the element
/// index.
pub fn dropout(tape: &mut Tape, x: Var, rate: f64, key: &[u64]) -> Result<Var> {
    if rate <= 0.0 {
        return Ok(x);
    }
    let shape = tape.shape(x).to_vec();
    let n: usize = shape.iter().product();
    let keep = 1.0 / (1.0 - rate);
    let mut parts = key.to_vec();
    parts.push(0);
    let last = parts.len() - 1;
    let mask = (0..n)
        .map(|i| {
            parts[last] = i as u64;
            if rng::uniform_at(&parts) < rate {
                0.0
            } else {
                keep
            }
        })
        .collect();
    tape.mul_const(x, Arc::new(Tensor::new(shape, mask)?))
}
