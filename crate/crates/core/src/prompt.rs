//! Projection of the multi-view embeddings into a shared space, dynamic
//! prompt generation and integration, and the regression head.

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{dropout, Linear, Mlp2};
use crate::params::{Bound, Init, ParamId, ParamStore};
use crate::tensor::Tensor;

pub const HEAD_DROPOUT: f64 = 0.1;
pub const HEAD_HIDDEN: [usize; 2] = [512, 128];

/// How prompts enter the integration step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptMode {
    /// Generator outputs are added to the projections.
    Generated,
    /// The generator is skipped and exact zero prompts are used.
    Disabled,
    /// The generator runs, then its outputs are replaced by exact zeros.
    HardZero,
}

#[derive(Debug, Clone, Copy)]
pub struct ProjectionHeads {
    pub drug: Linear,
    pub target: Linear,
    pub drug_in: usize,
    pub target_in: usize,
}

impl ProjectionHeads {
    /// The drug side sees `[molecule ∥ aff+ ∥ aff−]`; the target side adds
    /// the sequence embedding when `with_sequence` is set.
    pub fn new(store: &mut ParamStore, init: &Init, dim: usize, with_sequence: bool) -> Self {
        let drug_in = 3 * dim;
        let target_in = if with_sequence { 4 * dim } else { 3 * dim };
        ProjectionHeads {
            drug: Linear::new(store, init, "proj.drug", drug_in, dim),
            target: Linear::new(store, init, "proj.target", target_in, dim),
            drug_in,
            target_in,
        }
    }

    pub fn project(&self, tape: &mut Tape, bound: &Bound, drug_views: Var, target_views: Var) -> Result<(Var, Var)> {
        let (dw, tw) = (tape.shape(drug_views)[1], tape.shape(target_views)[1]);
        if dw != self.drug_in || tw != self.target_in {
            return Err(Error::ModelConfig(format!(
                "projection expects widths {}/{}, got {dw}/{tw}",
                self.drug_in, self.target_in
            )));
        }
        Ok((
            self.drug.apply(tape, bound, drug_views)?,
            self.target.apply(tape, bound, target_views)?,
        ))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PromptGenerator {
    pub drug: Mlp2,
    pub target: Mlp2,
    pub pair: Mlp2,
}

#[derive(Debug, Clone, Copy)]
pub struct Prompts {
    pub drug: Var,
    pub target: Var,
    pub pair: Var,
}

impl PromptGenerator {
    pub fn new(store: &mut ParamStore, init: &Init, dim: usize) -> Self {
        PromptGenerator {
            drug: Mlp2::new(store, init, "prompt.drug", [dim, dim, dim]),
            target: Mlp2::new(store, init, "prompt.target", [dim, dim, dim]),
            pair: Mlp2::new(store, init, "prompt.pair", [2 * dim, dim, dim]),
        }
    }

    pub fn generate(&self, tape: &mut Tape, bound: &Bound, z_drug: Var, z_target: Var) -> Result<Prompts> {
        let both = tape.concat_cols(&[z_drug, z_target])?;
        Ok(Prompts {
            drug: self.drug.apply(tape, bound, z_drug)?,
            target: self.target.apply(tape, bound, z_target)?,
            pair: self.pair.apply(tape, bound, both)?,
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        [self.drug, self.target, self.pair]
            .iter()
            .flat_map(|m| m.params())
            .collect()
    }
}

/// Zero prompts shaped like a `batch × dim` projection.
pub fn zero_prompts(tape: &mut Tape, batch: usize, dim: usize) -> Prompts {
    Prompts {
        drug: tape.constant(Tensor::zeros(&[batch, dim])),
        target: tape.constant(Tensor::zeros(&[batch, dim])),
        pair: tape.constant(Tensor::zeros(&[batch, dim])),
    }
}

/// Resolves the prompts for `mode`.
pub fn prompts_for(
    mode: PromptMode,
    generator: &PromptGenerator,
    tape: &mut Tape,
    bound: &Bound,
    z_drug: Var,
    z_target: Var,
) -> Result<Prompts> {
    let [batch, dim] = [tape.shape(z_drug)[0], tape.shape(z_drug)[1]];
    match mode {
        PromptMode::Generated => generator.generate(tape, bound, z_drug, z_target),
        PromptMode::Disabled => Ok(zero_prompts(tape, batch, dim)),
        PromptMode::HardZero => {
            generator.generate(tape, bound, z_drug, z_target)?;
            Ok(zero_prompts(tape, batch, dim))
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Integrated {
    pub drug: Var,
    pub target: Var,
    pub pair: Var,
}

/// `drug + p_d`, `target + p_t`, and `drug + target + p_pair`.
pub fn integrate(tape: &mut Tape, z_drug: Var, z_target: Var, prompts: &Prompts) -> Result<Integrated> {
    let drug = tape.add(z_drug, prompts.drug)?;
    let target = tape.add(z_target, prompts.target)?;
    let sum = tape.add(z_drug, z_target)?;
    let pair = tape.add(sum, prompts.pair)?;
    Ok(Integrated { drug, target, pair })
}

/// Dropout keying for one training step; `None` means evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DropoutKey {
    pub seed: u64,
    pub epoch: u64,
    pub batch: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct AffinityHead {
    pub layers: [Linear; 3],
    pub dropout: f64,
}

impl AffinityHead {
    /// `hidden` gives the two hidden widths (512 and 128 by default).
    pub fn new(store: &mut ParamStore, init: &Init, dim: usize, hidden: [usize; 2]) -> Self {
        AffinityHead {
            layers: [
                Linear::new(store, init, "head.l0", 3 * dim, hidden[0]),
                Linear::new(store, init, "head.l1", hidden[0], hidden[1]),
                Linear::new(store, init, "head.l2", hidden[1], 1),
            ],
            dropout: HEAD_DROPOUT,
        }
    }

    pub fn fuse(tape: &mut Tape, z: &Integrated) -> Result<Var> {
        tape.concat_cols(&[z.drug, z.target, z.pair])
    }

    /// Maps fused rows to one prediction per row (`batch × 1`).
    pub fn predict(&self, tape: &mut Tape, bound: &Bound, fused: Var, train: Option<DropoutKey>) -> Result<Var> {
        let mut h = fused;
        for (l, layer) in self.layers.iter().enumerate() {
            h = layer.apply(tape, bound, h)?;
            if l < 2 {
                h = tape.relu(h);
                if let Some(k) = train {
                    h = dropout(tape, h, self.dropout, &[k.seed, k.epoch, k.batch, l as u64])?;
                }
            }
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::random_tensor;

    fn setup(with_sequence: bool) -> (ParamStore, ProjectionHeads, PromptGenerator, AffinityHead) {
        let mut store = ParamStore::new();
        let init = Init::new(11);
        let proj = ProjectionHeads::new(&mut store, &init, 8, with_sequence);
        let gen = PromptGenerator::new(&mut store, &init, 8);
        let head = AffinityHead::new(&mut store, &init, 8, [512, 128]);
        (store, proj, gen, head)
    }

    #[test]
    fn projection_widths_follow_sequence_flag() {
        let (_, with, _, _) = setup(true);
        let (_, without, _, _) = setup(false);
        assert_eq!((with.drug_in, with.target_in), (24, 32));
        assert_eq!(without.target_in, 24);
        assert_eq!(ProjectionHeads::new(&mut ParamStore::new(), &Init::new(0), 128, true).target_in, 512);
    }

    #[test]
    fn zero_views_project_to_bias() {
        let (mut store, proj, _, _) = setup(false);
        let bias = random_tensor(2, 1, 8);
        store.set("proj.drug.b", bias.clone()).unwrap();
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let d = tape.constant(Tensor::zeros(&[1, 24]));
        let t = tape.constant(Tensor::zeros(&[1, 24]));
        let (zd, zt) = proj.project(&mut tape, &b, d, t).unwrap();
        assert_eq!(tape.value(zd), &bias);
        assert!(tape.value(zt).is_finite());
        let bad = tape.constant(Tensor::zeros(&[1, 32]));
        assert!(matches!(proj.project(&mut tape, &b, d, bad), Err(Error::ModelConfig(_))));
    }

    #[test]
    fn disabled_prompts_leave_projections_unchanged() {
        let (store, _, gen, _) = setup(false);
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let zd = tape.constant(random_tensor(3, 2, 8));
        let zt = tape.constant(random_tensor(4, 2, 8));
        let p = prompts_for(PromptMode::Disabled, &gen, &mut tape, &b, zd, zt).unwrap();
        let z = integrate(&mut tape, zd, zt, &p).unwrap();
        assert_eq!(tape.value(z.drug), tape.value(zd));
        assert_eq!(tape.value(z.target), tape.value(zt));
    }

    #[test]
    fn pair_integration_at_zero_is_pair_prompt() {
        let (store, _, gen, _) = setup(false);
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let zero = tape.constant(Tensor::zeros(&[1, 8]));
        let p = gen.generate(&mut tape, &b, zero, zero).unwrap();
        let z = integrate(&mut tape, zero, zero, &p).unwrap();
        assert_eq!(tape.value(z.pair), tape.value(p.pair));
    }

    #[test]
    fn integration_is_additive_in_projection() {
        let (store, _, gen, _) = setup(false);
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let a = random_tensor(5, 1, 8).map(|v| (v * 8.0).round() / 8.0);
        let delta = random_tensor(6, 1, 8).map(|v| (v * 8.0).round() / 8.0);
        let zt = tape.constant(Tensor::zeros(&[1, 8]));
        let av = tape.constant(a.clone());
        let p = gen.generate(&mut tape, &b, av, zt).unwrap();
        let fixed = Prompts {
            drug: tape.constant(tape.value(p.drug).map(|v| (v * 8.0).round() / 8.0)),
            ..p
        };
        let za = integrate(&mut tape, av, zt, &fixed).unwrap();
        let sum: Vec<f64> = a.data().iter().zip(delta.data()).map(|(x, y)| x + y).collect();
        let abv = tape.constant(Tensor::row_vector(&sum));
        let zab = integrate(&mut tape, abv, zt, &fixed).unwrap();
        let diff: Vec<f64> = tape
            .value(zab.drug)
            .data()
            .iter()
            .zip(tape.value(za.drug).data())
            .map(|(x, y)| x - y)
            .collect();
        assert_eq!(diff, delta.data());
    }

    #[test]
    fn prompts_are_deterministic() {
        let (store, _, gen, _) = setup(false);
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let zd = tape.constant(random_tensor(7, 3, 8));
        let zt = tape.constant(random_tensor(8, 3, 8));
        let p1 = gen.generate(&mut tape, &b, zd, zt).unwrap();
        let p2 = gen.generate(&mut tape, &b, zd, zt).unwrap();
        assert_eq!(tape.value(p1.pair), tape.value(p2.pair));
        assert_eq!(tape.shape(p1.pair), &[3, 8]);
    }

    #[test]
    fn head_eval_is_deterministic_and_train_uses_dropout() {
        let (store, _, _, head) = setup(false);
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let x = tape.constant(random_tensor(9, 4, 24));
        let e1 = head.predict(&mut tape, &b, x, None).unwrap();
        let e2 = head.predict(&mut tape, &b, x, None).unwrap();
        assert_eq!(tape.value(e1), tape.value(e2));
        assert_eq!(tape.shape(e1), &[4, 1]);
        let key = DropoutKey { seed: 1, epoch: 0, batch: 0 };
        let t = head.predict(&mut tape, &b, x, Some(key)).unwrap();
        assert_ne!(tape.value(t), tape.value(e1));
    }

    #[test]
    fn head_at_zero_is_bias_pathway() {
        let (store, _, _, head) = setup(false);
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let x = tape.constant(Tensor::zeros(&[1, 24]));
        let y = head.predict(&mut tape, &b, x, None).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0]);
    }
}
