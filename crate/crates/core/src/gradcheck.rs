//! Central finite-difference checks for the autodiff engine.

use std::sync::Arc;

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::rng;
use crate::tensor::{SparseMatrix, Tensor};

pub const DEFAULT_STEP: f64 = 1e-5;

/// `|a − n| / max(1, |a|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

/// Central difference of `f` with respect to entry `idx` of `x`.
pub fn central_difference(f: &mut impl FnMut(&Tensor) -> Result<f64>, x: &Tensor, idx: usize, h: f64) -> Result<f64> {
    let mut plus = x.clone();
    plus.data_mut()[idx] += h;
    let mut minus = x.clone();
    minus.data_mut()[idx] -= h;
    Ok((f(&plus)? - f(&minus)?) / (2.0 * h))
}

/// Max relative error between the tape gradient of `f` at `x` and central
/// differences with step `h`, over every entry of `x`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let loss = f(&mut tape, xv)?;
    tape.backward(loss)?;
    let analytic = tape.grad(xv);
    let mut eval = |t: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.param(t.clone());
        let l = f(&mut tape, v)?;
        Ok(tape.value(l).item())
    };
    let mut worst: f64 = 0.0;
    for i in 0..x.numel() {
        let numeric = central_difference(&mut eval, x, i, h)?;
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}

pub fn random_tensor(seed: u64, rows: usize, cols: usize) -> Tensor {
    let mut r = rng::stream(&[seed, rows as u64, cols as u64]);
    let data = (0..rows * cols).map(|_| r.gen_range(-1.0..1.0)).collect();
    Tensor::new(vec![rows, cols], data).expect("shape")
}

/// Random sparse matrix with roughly `density` of its entries set.
pub fn random_sparse(seed: u64, rows: usize, cols: usize, density: f64) -> SparseMatrix {
    let mut r = rng::stream(&[seed, 0x5a5a]);
    let mut entries = Vec::new();
    for i in 0..rows {
        for j in 0..cols {
            if r.gen::<f64>() < density {
                entries.push((i, j, r.gen_range(-1.0..1.0)));
            }
        }
    }
    SparseMatrix::new(rows, cols, entries).expect("valid sparse")
}

/// Weighted sum `Σ wᵢ·tᵢ` with fixed pseudo-random weights, so that checks
/// exercise non-uniform upstream gradients.
fn weighted_sum(tape: &mut Tape, t: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(t).to_vec();
    let w = random_tensor(seed ^ 0xfeed, shape[0], shape[1]);
    let wv = tape.constant(w);
    let p = tape.mul(t, wv)?;
    tape.sum(p)
}

#[derive(Debug, Clone)]
pub struct OpCheck {
    pub op: &'static str,
    pub max_rel_err: f64,
}

/// Runs the finite-difference check on every differentiable op using seeded
/// inputs no larger than 4×4.
pub fn op_suite(h: f64) -> Result<Vec<OpCheck>> {
    let mut out = Vec::new();
    let mut push = |op: &'static str, e: f64| out.push(OpCheck { op, max_rel_err: e });

    let b = random_tensor(43, 3, 3);
    push(
        "matmul",
        grad_check(
            |t, x| {
                let bv = t.constant(b.clone());
                let y = t.matmul(x, bv)?;
                weighted_sum(t, y, 1)
            },
            &random_tensor(42, 3, 3),
            h,
        )?,
    );
    push(
        "transpose",
        grad_check(
            |t, x| {
                let y = t.transpose(x);
                weighted_sum(t, y, 2)
            },
            &random_tensor(5, 2, 4),
            h,
        )?,
    );
    let s = Arc::new(random_sparse(7, 4, 4, 0.4));
    push(
        "spmm",
        grad_check(
            |t, x| {
                let y = t.spmm(&s, x)?;
                weighted_sum(t, y, 3)
            },
            &random_tensor(8, 4, 3),
            h,
        )?,
    );
    let other = random_tensor(9, 3, 4);
    for (name, kind) in [
        ("add", crate::autograd::Elementwise::Add),
        ("sub", crate::autograd::Elementwise::Sub),
        ("mul", crate::autograd::Elementwise::Mul),
    ] {
        push(
            name,
            grad_check(
                |t, x| {
                    let o = t.constant(other.clone());
                    let y = t.elementwise(kind, x, o)?;
                    let z = t.elementwise(kind, o, y)?;
                    weighted_sum(t, z, 4)
                },
                &random_tensor(10, 3, 4),
                h,
            )?,
        );
    }
    push(
        "relu",
        grad_check(
            |t, x| {
                let y = t.relu(x);
                weighted_sum(t, y, 5)
            },
            &random_tensor(12, 4, 4),
            h,
        )?,
    );
    push(
        "sigmoid",
        grad_check(
            |t, x| {
                let y = t.sigmoid(x);
                weighted_sum(t, y, 6)
            },
            &random_tensor(13, 4, 4),
            h,
        )?,
    );
    let base = random_tensor(14, 3, 4);
    push(
        "add_row_bias",
        grad_check(
            |t, x| {
                let a = t.param(base.clone());
                let y = t.add_row_bias(a, x)?;
                let y = t.mul(y, y)?;
                weighted_sum(t, y, 7)
            },
            &random_tensor(15, 1, 4),
            h,
        )?,
    );
    push(
        "scale",
        grad_check(
            |t, x| {
                let y = t.scale(x, -2.5);
                weighted_sum(t, y, 8)
            },
            &random_tensor(16, 2, 2),
            h,
        )?,
    );
    push(
        "softmax_rows",
        grad_check(
            |t, x| {
                let y = t.softmax_rows(x);
                weighted_sum(t, y, 9)
            },
            &random_tensor(11, 2, 3),
            h,
        )?,
    );
    push(
        "masked_softmax_rows",
        grad_check(
            |t, x| {
                let y = t.masked_softmax_rows(x, Arc::new(vec![true, false, true, true]))?;
                weighted_sum(t, y, 10)
            },
            &random_tensor(17, 3, 4),
            h,
        )?,
    );
    push("sum", grad_check(|t, x| t.sum(x), &random_tensor(18, 3, 3), h)?);
    push(
        "mean",
        grad_check(
            |t, x| {
                let y = t.mul(x, x)?;
                t.mean(y)
            },
            &random_tensor(19, 3, 3),
            h,
        )?,
    );
    push(
        "max_over_rows",
        grad_check(
            |t, x| {
                let y = t.max_over_rows(x)?;
                weighted_sum(t, y, 11)
            },
            &random_tensor(20, 4, 3),
            h,
        )?,
    );
    push(
        "masked_mean_rows",
        grad_check(
            |t, x| {
                let y = t.masked_mean_rows(x, Arc::new(vec![true, true, false, true]))?;
                weighted_sum(t, y, 12)
            },
            &random_tensor(21, 4, 3),
            h,
        )?,
    );
    let right = random_tensor(22, 3, 2);
    push(
        "concat_cols",
        grad_check(
            |t, x| {
                let r = t.constant(right.clone());
                let y = t.concat_cols(&[x, r, x])?;
                weighted_sum(t, y, 13)
            },
            &random_tensor(23, 3, 2),
            h,
        )?,
    );
    push(
        "concat_rows",
        grad_check(
            |t, x| {
                let y = t.concat_rows(&[x, x])?;
                weighted_sum(t, y, 14)
            },
            &random_tensor(24, 2, 3),
            h,
        )?,
    );
    push(
        "slice_cols",
        grad_check(
            |t, x| {
                let y = t.slice_cols(x, 1, 2)?;
                weighted_sum(t, y, 15)
            },
            &random_tensor(25, 3, 4),
            h,
        )?,
    );
    push(
        "gather_rows",
        grad_check(
            |t, x| {
                let y = t.gather_rows(x, &[Some(2), None, Some(0), Some(2)])?;
                weighted_sum(t, y, 16)
            },
            &random_tensor(26, 3, 3),
            h,
        )?,
    );
    let mask = Arc::new(random_tensor(27, 3, 3).map(|v| if v > 0.0 { 2.0 } else { 0.0 }));
    push(
        "mul_const",
        grad_check(
            |t, x| {
                let y = t.mul_const(x, Arc::clone(&mask))?;
                weighted_sum(t, y, 17)
            },
            &random_tensor(28, 3, 3),
            h,
        )?,
    );
    let gain = random_tensor(29, 1, 4);
    let bias = random_tensor(30, 1, 4);
    push(
        "layer_norm(x)",
        grad_check(
            |t, x| {
                let g = t.param(gain.clone());
                let b = t.param(bias.clone());
                let y = t.layer_norm(x, g, b, 1e-5)?;
                weighted_sum(t, y, 18)
            },
            &random_tensor(31, 3, 4),
            h,
        )?,
    );
    let xs = random_tensor(32, 3, 4);
    push(
        "layer_norm(gain)",
        grad_check(
            |t, g| {
                let x = t.param(xs.clone());
                let b = t.param(bias.clone());
                let y = t.layer_norm(x, g, b, 1e-5)?;
                weighted_sum(t, y, 19)
            },
            &gain,
            h,
        )?,
    );
    push(
        "layer_norm(bias)",
        grad_check(
            |t, b| {
                let x = t.param(xs.clone());
                let g = t.param(gain.clone());
                let y = t.layer_norm(x, g, b, 1e-5)?;
                weighted_sum(t, y, 20)
            },
            &bias,
            h,
        )?,
    );
    Ok(out)
}

/// Per-parameter result of a whole-model check.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
}

/// Which parameter entries a whole-model check perturbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coverage {
    All,
    /// Up to this many seeded entries per tensor.
    Sampled(usize),
}

/// Compares tape gradients of the full training loss (fixed dropout mask)
/// on the training split of `prepared` against central differences.
pub fn model_grad_check(
    cfg: &crate::config::TrainConfig,
    prepared: &crate::train::Prepared,
    coverage: Coverage,
    h: f64,
) -> Result<Vec<ParamCheck>> {
    use crate::metrics::{mse_loss, prompt_loss, total_loss};
    use crate::model::{ForwardOptions, Model, PairRef};
    use crate::params::ParamStore;
    use crate::prompt::DropoutKey;
    use rand::seq::index::sample;

    let state = crate::train::TrainState::new(cfg, prepared)?;
    let model = state.model;
    let pairs: Vec<PairRef> = prepared.train.iter().map(|(p, _)| *p).collect();
    let labels: Vec<f64> = prepared.train.iter().map(|(_, y)| *y).collect();
    let key = DropoutKey {
        seed: cfg.seed,
        epoch: 0,
        batch: 0,
    };
    let g = &prepared.graph;
    let loss = |model: &Model, params: &ParamStore, tape: &mut Tape| -> Result<(Var, crate::params::Bound)> {
        let bound = params.bind(tape);
        let out = model.forward(tape, &bound, &g.adj_pos, &g.adj_neg, &prepared.cache, &pairs, ForwardOptions::train(key))?;
        let m = mse_loss(tape, out.preds, &labels)?;
        let p = prompt_loss(tape, &out.prompts)?;
        Ok((total_loss(tape, m, p, cfg.alpha)?, bound))
    };
    let mut tape = Tape::new();
    let (l, bound) = loss(&model, &model.params, &mut tape)?;
    tape.backward(l)?;
    let grads = bound.grads(&tape);

    let mut params = model.params.clone();
    let mut report = Vec::new();
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        let name = model.params.name(id).to_string();
        let n = model.params.get(id).numel();
        let entries: Vec<usize> = match coverage {
            Coverage::All => (0..n).collect(),
            Coverage::Sampled(k) if k >= n => (0..n).collect(),
            Coverage::Sampled(k) => {
                let mut idx = sample(&mut rng::stream(&[cfg.seed, id.index() as u64, 0x6C]), n, k).into_vec();
                idx.sort_unstable();
                idx
            }
        };
        let mut worst: f64 = 0.0;
        for &e in &entries {
            let orig = params.get(id).data()[e];
            let mut at = |v: f64| -> Result<f64> {
                params.get_mut(id).data_mut()[e] = v;
                let mut t = Tape::new();
                let (l, _) = loss(&model, &params, &mut t)?;
                Ok(t.value(l).item())
            };
            let numeric = (at(orig + h)? - at(orig - h)?) / (2.0 * h);
            params.get_mut(id).data_mut()[e] = orig;
            worst = worst.max(relative_error(grads[id.index()].data()[e], numeric));
        }
        report.push(ParamCheck {
            name,
            checked: entries.len(),
            max_rel_err: worst,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_zero_error() {
        // At zeros every perturbed sum is exactly ±h, so the difference is exact.
        let e = grad_check(|t, x| t.sum(x), &Tensor::zeros(&[3, 3]), DEFAULT_STEP).unwrap();
        assert_eq!(e, 0.0);
        // Elsewhere only rounding in the difference quotient remains.
        let e = grad_check(|t, x| t.sum(x), &random_tensor(1, 3, 3), DEFAULT_STEP).unwrap();
        assert!(e < 1e-9, "{e}");
    }

    #[test]
    fn relu_away_from_kink() {
        let x = random_tensor(2, 4, 4).map(|v| if v.abs() < 0.1 { v + 0.3 } else { v });
        let e = grad_check(
            |t, x| {
                let y = t.relu(x);
                t.sum(y)
            },
            &x,
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(e < 1e-7, "{e}");
    }

    #[test]
    fn matmul_gradient_seed_42() {
        let b = random_tensor(99, 3, 3);
        let e = grad_check(
            |t, x| {
                let bv = t.constant(b.clone());
                let y = t.matmul(x, bv)?;
                t.sum(y)
            },
            &random_tensor(42, 3, 3),
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(e < 1e-6, "{e}");
    }

    #[test]
    fn every_op_passes() {
        for c in op_suite(DEFAULT_STEP).unwrap() {
            assert!(c.max_rel_err < 1e-4, "{}: {}", c.op, c.max_rel_err);
        }
    }
}
