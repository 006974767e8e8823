//! Mini-batch training, evaluation and single-pair prediction.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use sha2::{Digest, Sha256};

use crate::affinity::AffinityGraph;
use crate::autograd::Tape;
use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::data::{DtaDataset, Split};
use crate::error::{Error, Result};
use crate::metrics::{mse_loss, prompt_loss, total_loss, EvalReport};
use crate::model::{EntityCache, ForwardOptions, Model, PairRef};
use crate::optim::{adam_step, clip_global_norm, AdamConfig, AdamState};
use crate::prompt::{DropoutKey, PromptMode};
use crate::protein::ContactMap;
use crate::rng;
use crate::tensor::Tensor;

/// The regression output bias starts at the mean training label.
pub const OUTPUT_BIAS: &str = "head.l2.b";

/// Per-epoch shuffled partition of `0..n` into batches; the last batch may
/// be short.
pub fn batch_iter(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(&[seed, epoch, 0xBA7C]));
    order.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
}

/// Everything derived from a dataset before the first epoch.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dataset: DtaDataset,
    pub graph: AffinityGraph,
    pub cache: EntityCache,
    pub train: Vec<(PairRef, f64)>,
    pub test: Vec<(PairRef, f64)>,
    pub dataset_fingerprint: [u8; 32],
}

impl Prepared {
    pub fn split(&self, split: Split) -> &[(PairRef, f64)] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }
}

pub fn dataset_fingerprint(ds: &DtaDataset) -> [u8; 32] {
    Sha256::digest(ds.to_tsv().as_bytes()).into()
}

/// Subsamples, builds the affinity graph from training pairs only, and
/// parses/featurizes every referenced molecule and protein once.
pub fn prepare(dataset: &DtaDataset, cfg: &TrainConfig) -> Result<Prepared> {
    dataset.validate()?;
    let ds = dataset.subsample_train(cfg.subsample, cfg.seed)?;
    if ds.count(Split::Train) == 0 {
        return Err(Error::Data("the training split is empty".into()));
    }
    let train_triples: Vec<(&str, &str, f64)> = ds
        .split(Split::Train)
        .map(|s| (s.drug.as_str(), s.target.as_str(), s.affinity))
        .collect();
    let graph = AffinityGraph::build(
        ds.drugs.keys().map(String::as_str),
        ds.targets.keys().map(String::as_str),
        &train_triples,
        cfg.threshold_p,
    )?;
    let mut cache = EntityCache::new();
    let pairs = |split: Split, cache: &mut EntityCache| -> Result<Vec<(PairRef, f64)>> {
        ds.split(split)
            .map(|s| {
                let drug = cache.add_drug(&s.drug, &ds.drugs[&s.drug], Some(&graph))?;
                let entry = &ds.targets[&s.target];
                let map = entry.contact_map.as_deref().map(ContactMap::load).transpose()?;
                let target = cache.add_target(
                    &s.target,
                    &entry.sequence,
                    map.as_ref(),
                    &cfg.contact,
                    cfg.max_seq_len,
                    Some(&graph),
                )?;
                Ok((PairRef { drug, target }, s.affinity))
            })
            .collect()
    };
    let train = pairs(Split::Train, &mut cache)?;
    let test = pairs(Split::Test, &mut cache)?;
    Ok(Prepared {
        dataset_fingerprint: dataset_fingerprint(&ds),
        dataset: ds,
        graph,
        cache,
        train,
        test,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mse: f64,
    pub prompt: f64,
    pub total: f64,
    /// Batches whose gradient norm was clipped.
    pub clipped: usize,
    pub eval: Option<EvalReport>,
}

impl EpochLog {
    pub const HEADER: &'static str = "epoch\tl_mse\tl_prompt\ttotal\ttest_mse\ttest_ci\ttest_r2m\ttest_pearson\tclipped";

    /// Tab-separated; metric columns are empty when no evaluation ran.
    pub fn to_line(&self) -> String {
        let mut s = format!("{}\t{:.8}\t{:.8}\t{:.8}", self.epoch, self.mse, self.prompt, self.total);
        match &self.eval {
            Some(r) => {
                let _ = write!(s, "\t{:.6}\t{:.6}\t{:.6}\t{:.6}", r.mse, r.ci, r.r2m, r.pearson);
            }
            None => s.push_str("\t\t\t\t"),
        }
        let _ = write!(s, "\t{}", self.clipped);
        s
    }
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: Model,
    pub adam: AdamState,
    /// Epochs completed so far.
    pub epoch: usize,
    /// Per parameter: received a nonzero gradient at least once.
    pub touched: Vec<bool>,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig, prepared: &Prepared) -> Result<Self> {
        let mut model = Model::new(cfg.model_config(), prepared.graph.n_nodes(), cfg.seed)?;
        let mean = prepared.train.iter().map(|(_, y)| y).sum::<f64>() / prepared.train.len() as f64;
        model.params.set(OUTPUT_BIAS, Tensor::scalar(mean))?;
        let adam = AdamState::for_params(&model.params);
        let touched = vec![false; model.params.len()];
        Ok(TrainState {
            model,
            adam,
            epoch: 0,
            touched,
        })
    }

    pub fn checkpoint(&self, cfg: &TrainConfig, prepared: &Prepared) -> Checkpoint {
        Checkpoint::from_state(
            &self.model.params,
            &self.adam,
            self.epoch as u64,
            cfg.to_text(),
            cfg.fingerprint(),
            prepared.dataset_fingerprint,
        )
    }

    /// Rebuilds a state from a checkpoint after checking both fingerprints.
    pub fn resume(cfg: &TrainConfig, prepared: &Prepared, ck: &Checkpoint) -> Result<Self> {
        ck.check_compatible(&cfg.fingerprint(), &prepared.dataset_fingerprint)?;
        let mut state = Self::new(cfg, prepared)?;
        state.adam = ck.restore(&mut state.model.params)?;
        state.epoch = ck.epoch as usize;
        Ok(state)
    }
}

/// Extra knobs used by diagnostics and tests.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrainOptions {
    pub prompt_mode: Option<PromptMode>,
}

/// One optimizer step on `batch`; returns `(mse, prompt, total, clipped)`.
pub fn train_step(
    state: &mut TrainState,
    prepared: &Prepared,
    cfg: &TrainConfig,
    batch: &[(PairRef, f64)],
    key: DropoutKey,
    opts: TrainOptions,
) -> Result<(f64, f64, f64, bool)> {
    let model = &state.model;
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let pairs: Vec<PairRef> = batch.iter().map(|(p, _)| *p).collect();
    let labels: Vec<f64> = batch.iter().map(|(_, y)| *y).collect();
    let fwd = ForwardOptions {
        dropout: Some(key),
        prompt_mode: opts.prompt_mode,
    };
    let g = &prepared.graph;
    let out = model.forward(&mut tape, &bound, &g.adj_pos, &g.adj_neg, &prepared.cache, &pairs, fwd)?;
    let l_mse = mse_loss(&mut tape, out.preds, &labels)?;
    let l_prompt = prompt_loss(&mut tape, &out.prompts)?;
    let total = total_loss(&mut tape, l_mse, l_prompt, cfg.alpha)?;
    let values = (
        tape.value(l_mse).item(),
        tape.value(l_prompt).item(),
        tape.value(total).item(),
    );
    if !values.2.is_finite() {
        return Err(Error::Training(format!(
            "non-finite loss {} at epoch {}, batch {}",
            values.2, key.epoch, key.batch
        )));
    }
    tape.backward(total)?;
    let mut grads = bound.grads(&tape);
    for (t, g) in state.touched.iter_mut().zip(&grads) {
        *t |= g.data().iter().any(|&x| x != 0.0);
    }
    let (_, clipped) = clip_global_norm(&mut grads, cfg.clip_norm);
    adam_step(&mut state.model.params, &grads, &mut state.adam, &AdamConfig::with_lr(cfg.lr))?;
    Ok((values.0, values.1, values.2, clipped))
}

/// Runs epochs `state.epoch .. cfg.epochs`, calling `on_epoch` after each.
pub fn train_epochs(
    state: &mut TrainState,
    prepared: &Prepared,
    cfg: &TrainConfig,
    opts: TrainOptions,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    let mut logs = Vec::new();
    while state.epoch < cfg.epochs {
        let epoch = state.epoch;
        let batches = batch_iter(prepared.train.len(), cfg.batch_size, cfg.seed, epoch as u64);
        let (mut sums, mut clipped) = ([0.0; 3], 0);
        for (b, idx) in batches.iter().enumerate() {
            let batch: Vec<(PairRef, f64)> = idx.iter().map(|&i| prepared.train[i]).collect();
            let key = DropoutKey {
                seed: cfg.seed,
                epoch: epoch as u64,
                batch: b as u64,
            };
            let (m, p, t, c) = train_step(state, prepared, cfg, &batch, key, opts)?;
            let w = batch.len() as f64;
            sums[0] += m * w;
            sums[1] += p * w;
            sums[2] += t * w;
            clipped += c as usize;
        }
        state.epoch += 1;
        let n = prepared.train.len() as f64;
        let eval = if cfg.eval_every > 0 && state.epoch.is_multiple_of(cfg.eval_every) && !prepared.test.is_empty() {
            Some(evaluate(&state.model, prepared, Split::Test, cfg.batch_size)?)
        } else {
            None
        };
        let log = EpochLog {
            epoch: state.epoch,
            mse: sums[0] / n,
            prompt: sums[1] / n,
            total: sums[2] / n,
            clipped,
            eval,
        };
        on_epoch(&log);
        logs.push(log);
    }
    Ok(logs)
}

/// Eval-mode predictions for `pairs`, in order.
pub fn predict_pairs(model: &Model, prepared: &Prepared, pairs: &[PairRef], batch_size: usize) -> Result<Vec<f64>> {
    predict_with(model, &prepared.graph, &prepared.cache, pairs, batch_size, None)
}

pub fn predict_with(
    model: &Model,
    graph: &AffinityGraph,
    cache: &EntityCache,
    pairs: &[PairRef],
    batch_size: usize,
    prompt_mode: Option<PromptMode>,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(batch_size.max(1)) {
        let mut tape = Tape::new();
        let bound = model.params.bind(&mut tape);
        let opts = ForwardOptions {
            dropout: None,
            prompt_mode,
        };
        let o = model.forward(&mut tape, &bound, &graph.adj_pos, &graph.adj_neg, cache, chunk, opts)?;
        out.extend_from_slice(tape.value(o.preds).data());
    }
    Ok(out)
}

/// Pre-head fused rows (`3·dim` columns) for `pairs`.
pub fn embed_pairs(model: &Model, prepared: &Prepared, pairs: &[PairRef], batch_size: usize) -> Result<Vec<Tensor>> {
    let g = &prepared.graph;
    let mut out = Vec::new();
    for chunk in pairs.chunks(batch_size.max(1)) {
        let mut tape = Tape::new();
        let bound = model.params.bind(&mut tape);
        let o = model.forward(&mut tape, &bound, &g.adj_pos, &g.adj_neg, &prepared.cache, chunk, ForwardOptions::eval())?;
        out.push(tape.value(o.fused).clone());
    }
    Ok(out)
}

pub fn evaluate(model: &Model, prepared: &Prepared, split: Split, batch_size: usize) -> Result<EvalReport> {
    let samples = prepared.split(split);
    if samples.is_empty() {
        return Err(Error::Data(format!("the {} split is empty", split.as_str())));
    }
    let pairs: Vec<PairRef> = samples.iter().map(|(p, _)| *p).collect();
    let labels: Vec<f64> = samples.iter().map(|(_, y)| *y).collect();
    let preds = predict_pairs(model, prepared, &pairs, batch_size)?;
    EvalReport::compute(&labels, &preds, model.config.ablation)
}

/// Result of scoring one external pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub value: f64,
    pub drug_cold_start: bool,
    pub target_cold_start: bool,
}

/// Scores a SMILES/sequence pair. Ids already present in the dataset reuse
/// their affinity-graph rows; anything else is a cold start.
pub fn predict_one(
    model: &Model,
    prepared: &Prepared,
    cfg: &TrainConfig,
    drug: (&str, &str),
    target: (&str, &str),
    contact_map: Option<&ContactMap>,
) -> Result<Prediction> {
    let mut cache = prepared.cache.clone();
    let known_drug = prepared.dataset.drugs.get(drug.0).is_some_and(|s| s == drug.1);
    let known_target = prepared
        .dataset
        .targets
        .get(target.0)
        .is_some_and(|t| t.sequence == target.1 && contact_map.is_none());
    let drug_key = if known_drug { drug.0.to_string() } else { format!("\u{0}query-drug:{}", drug.1) };
    let target_key = if known_target {
        target.0.to_string()
    } else {
        format!("\u{0}query-target:{}", target.1)
    };
    let graph = &prepared.graph;
    let d = cache.add_drug(&drug_key, drug.1, Some(graph))?;
    let t = cache.add_target(&target_key, target.1, contact_map, &cfg.contact, cfg.max_seq_len, Some(graph))?;
    let pair = PairRef { drug: d, target: t };
    let value = predict_with(model, graph, &cache, &[pair], 1, None)?[0];
    Ok(Prediction {
        value,
        drug_cold_start: cache.drugs[d].node.is_none(),
        target_cold_start: cache.targets[t].node.is_none(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_partition_the_data() {
        let b = batch_iter(5, 2, 1, 0);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![2, 2, 1]);
        let mut all: Vec<usize> = b.concat();
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn batch_order_depends_on_seed_and_epoch() {
        assert_eq!(batch_iter(40, 8, 3, 5), batch_iter(40, 8, 3, 5));
        assert_ne!(batch_iter(40, 8, 3, 5), batch_iter(40, 8, 3, 6));
        assert_ne!(batch_iter(40, 8, 3, 5), batch_iter(40, 8, 4, 5));
    }

    #[test]
    fn log_line_shape() {
        let log = EpochLog {
            epoch: 3,
            mse: 0.5,
            prompt: 0.25,
            total: 0.55,
            clipped: 0,
            eval: None,
        };
        let line = log.to_line();
        assert_eq!(line.split('\t').count(), EpochLog::HEADER.split('\t').count());
        assert!(line.starts_with("3\t0.50000000\t"));
    }
}
