//! Full model: molecule and residue graph encoders, the affinity-graph
//! encoder, the optional sequence transformer, projections, prompts and the
//! regression head.

use std::collections::HashMap;
use std::sync::Arc;

use crate::affinity::{encode_affinity, normalize_adjacency, AffinityGraph};
use crate::autograd::{Tape, Var};
use crate::encoders::{fuse_affinity_into_protein, gmp_readout, FusionMap, GcnStack};
use crate::error::{Error, Result};
use crate::metrics::Ablation;
use crate::params::{Bound, Init, ParamId, ParamStore};
use crate::prompt::{
    integrate, prompts_for, AffinityHead, DropoutKey, PromptGenerator, PromptMode, Prompts, ProjectionHeads,
    HEAD_DROPOUT, HEAD_HIDDEN,
};
use crate::protein::{build_protein_graph, ContactMap, ContactOptions, RESIDUE_FEATURES};
use crate::smiles::{parse_smiles, ATOM_FEATURES};
use crate::tensor::{SparseMatrix, Tensor};
use crate::transformer::{TransformerConfig, TransformerEncoder};

pub const AFFINITY_EMBED_LIMIT: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub ablation: Ablation,
    pub n_heads: usize,
    pub d_ff: usize,
    pub n_blocks: usize,
    pub max_seq_len: usize,
    pub head_hidden: [usize; 2],
    pub head_dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let t = TransformerConfig::default();
        ModelConfig {
            embed_dim: 128,
            ablation: Ablation::default(),
            n_heads: t.n_heads,
            d_ff: t.d_ff,
            n_blocks: t.n_blocks,
            max_seq_len: t.max_len,
            head_hidden: HEAD_HIDDEN,
            head_dropout: HEAD_DROPOUT,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.ablation.gcn {
            return Err(Error::ModelConfig("the graph encoders cannot be disabled (gcn must be true)".into()));
        }
        if !(0.0..1.0).contains(&self.head_dropout) {
            return Err(Error::ModelConfig(format!("dropout {} outside [0, 1)", self.head_dropout)));
        }
        if self.embed_dim == 0 || self.max_seq_len == 0 || self.head_hidden.contains(&0) {
            return Err(Error::ModelConfig("model widths and max_seq_len must be positive".into()));
        }
        if self.ablation.trans && (self.n_heads == 0 || !self.embed_dim.is_multiple_of(self.n_heads)) {
            return Err(Error::ModelConfig(format!(
                "embed_dim {} is not divisible by {} heads",
                self.embed_dim, self.n_heads
            )));
        }
        Ok(())
    }
}

/// A molecule ready for encoding.
#[derive(Debug, Clone)]
pub struct PreparedDrug {
    pub id: String,
    pub adjacency: Arc<SparseMatrix>,
    pub features: Tensor,
    /// Row in the affinity graph, `None` for cold-start drugs.
    pub node: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct PreparedTarget {
    pub id: String,
    pub adjacency: Arc<SparseMatrix>,
    pub features: Tensor,
    pub tokens: Vec<u32>,
    pub node: Option<usize>,
}

/// Parsed, featurized and normalized entities, built once before training.
#[derive(Debug, Clone, Default)]
pub struct EntityCache {
    pub drugs: Vec<PreparedDrug>,
    pub targets: Vec<PreparedTarget>,
    drug_index: HashMap<String, usize>,
    target_index: HashMap<String, usize>,
}

impl EntityCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn drug(&self, id: &str) -> Option<usize> {
        self.drug_index.get(id).copied()
    }

    pub fn target(&self, id: &str) -> Option<usize> {
        self.target_index.get(id).copied()
    }

    /// Adds a drug unless it is already cached; returns its cache index.
    pub fn add_drug(&mut self, id: &str, smiles: &str, graph: Option<&AffinityGraph>) -> Result<usize> {
        if let Some(i) = self.drug(id) {
            return Ok(i);
        }
        let mol = parse_smiles(smiles).map_err(|e| match e {
            Error::Parse { offset, message } => Error::Parse {
                offset,
                message: format!("drug {id}: {message}"),
            },
            other => other,
        })?;
        let adjacency = Arc::new(normalize_adjacency(&mol.edges(), mol.n_atoms())?);
        self.drugs.push(PreparedDrug {
            id: id.to_string(),
            adjacency,
            features: mol.features,
            node: graph.and_then(|g| g.drug_node(id)),
        });
        self.drug_index.insert(id.to_string(), self.drugs.len() - 1);
        Ok(self.drugs.len() - 1)
    }

    pub fn add_target(
        &mut self,
        id: &str,
        sequence: &str,
        contact_map: Option<&ContactMap>,
        opts: &ContactOptions,
        max_seq_len: usize,
        graph: Option<&AffinityGraph>,
    ) -> Result<usize> {
        if let Some(i) = self.target(id) {
            return Ok(i);
        }
        let pg = build_protein_graph(sequence, contact_map, opts, max_seq_len)
            .map_err(|e| Error::Input(format!("target {id}: {e}")))?;
        let adjacency = Arc::new(normalize_adjacency(&pg.edges, pg.len())?);
        self.targets.push(PreparedTarget {
            id: id.to_string(),
            adjacency,
            features: pg.features,
            tokens: pg.tokens,
            node: graph.and_then(|g| g.target_node(id)),
        });
        self.target_index.insert(id.to_string(), self.targets.len() - 1);
        Ok(self.targets.len() - 1)
    }
}

/// One drug/target pair as indices into an [`EntityCache`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PairRef {
    pub drug: usize,
    pub target: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardOptions {
    pub dropout: Option<DropoutKey>,
    /// Overrides the prompt handling implied by the ablation flags.
    pub prompt_mode: Option<PromptMode>,
}

impl ForwardOptions {
    pub fn eval() -> Self {
        ForwardOptions {
            dropout: None,
            prompt_mode: None,
        }
    }

    pub fn train(key: DropoutKey) -> Self {
        ForwardOptions {
            dropout: Some(key),
            prompt_mode: None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BatchOutput {
    /// `batch × 1`.
    pub preds: Var,
    pub prompts: Prompts,
    /// Pre-head fused representation, `batch × 3·dim`.
    pub fused: Var,
}

#[derive(Debug, Clone)]
struct Architecture {
    drug_gcn: GcnStack,
    protein_gcn: GcnStack,
    fusion: FusionMap,
    affinity_embed: ParamId,
    affinity_pos: [ParamId; 2],
    affinity_neg: [ParamId; 2],
    transformer: Option<TransformerEncoder>,
    projection: ProjectionHeads,
    prompt: PromptGenerator,
    head: AffinityHead,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    n_affinity_nodes: usize,
    arch: Architecture,
}

impl Model {
    pub fn new(config: ModelConfig, n_affinity_nodes: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let init = Init::new(seed);
        let mut store = ParamStore::new();
        let drug_gcn = GcnStack::new(&mut store, &init, "drug_gcn", &[(ATOM_FEATURES, d), (d, d), (d, d)]);
        let protein_gcn = GcnStack::new(
            &mut store,
            &init,
            "protein_gcn",
            &[(RESIDUE_FEATURES, d), (2 * d, d), (d, d)],
        );
        let fusion = FusionMap::new(&mut store, &init, "fusion.w", d);
        let affinity_embed = store.add(
            "affinity.embed",
            init.uniform("affinity.embed", &[n_affinity_nodes, d], AFFINITY_EMBED_LIMIT),
        );
        let mut pair = |name: &str| -> [ParamId; 2] {
            [0, 1].map(|l| {
                let n = format!("affinity.{name}.w{l}");
                let w = init.glorot(&n, d, d);
                store.add(&n, w)
            })
        };
        let affinity_pos = pair("pos");
        let affinity_neg = pair("neg");
        let transformer = if config.ablation.trans {
            let tc = TransformerConfig {
                d_model: d,
                n_heads: config.n_heads,
                d_ff: config.d_ff,
                n_blocks: config.n_blocks,
                max_len: config.max_seq_len,
            };
            Some(TransformerEncoder::new(&mut store, &init, "seq", tc)?)
        } else {
            None
        };
        let projection = ProjectionHeads::new(&mut store, &init, d, config.ablation.trans);
        let prompt = PromptGenerator::new(&mut store, &init, d);
        let mut head = AffinityHead::new(&mut store, &init, d, config.head_hidden);
        head.dropout = config.head_dropout;
        Ok(Model {
            config,
            params: store,
            n_affinity_nodes,
            arch: Architecture {
                drug_gcn,
                protein_gcn,
                fusion,
                affinity_embed,
                affinity_pos,
                affinity_neg,
                transformer,
                projection,
                prompt,
                head,
            },
        })
    }

    pub fn n_affinity_nodes(&self) -> usize {
        self.n_affinity_nodes
    }

    /// Parameter ids of the three prompt generators.
    pub fn prompt_params(&self) -> Vec<ParamId> {
        self.arch.prompt.params()
    }

    pub fn prompt_mode(&self) -> PromptMode {
        if self.config.ablation.dp {
            PromptMode::Generated
        } else {
            PromptMode::Disabled
        }
    }

    fn expect_shape(tape: &Tape, v: Var, rows: usize, cols: usize, what: &str) -> Result<()> {
        if tape.shape(v) != [rows, cols] {
            return Err(Error::ModelConfig(format!(
                "{what}: expected {rows}x{cols}, got {:?}",
                tape.shape(v)
            )));
        }
        Ok(())
    }

    fn encode_drug(&self, tape: &mut Tape, bound: &Bound, drug: &PreparedDrug) -> Result<Var> {
        let x = tape.constant(drug.features.clone());
        let h = self.arch.drug_gcn.forward(tape, bound, &drug.adjacency, x)?;
        let out = gmp_readout(tape, h)?;
        Self::expect_shape(tape, out, 1, self.config.embed_dim, "drug readout")?;
        Ok(out)
    }

    fn encode_protein(&self, tape: &mut Tape, bound: &Bound, target: &PreparedTarget, h_pos: Var) -> Result<Var> {
        let d = self.config.embed_dim;
        let n = target.features.rows();
        let x = tape.constant(target.features.clone());
        let gcn = &self.arch.protein_gcn;
        let h = gcn.layer(tape, bound, &target.adjacency, x, 0)?;
        let a = tape.gather_rows(h_pos, &[target.node])?;
        let fa = self.arch.fusion.apply(tape, bound, a)?;
        let fused = fuse_affinity_into_protein(tape, h, fa)?;
        Self::expect_shape(tape, fused, n, 2 * d, "fused residue features")?;
        let h = gcn.forward_range(tape, bound, &target.adjacency, fused, 1..gcn.n_layers())?;
        let out = gmp_readout(tape, h)?;
        Self::expect_shape(tape, out, 1, d, "protein readout")?;
        Ok(out)
    }

    fn encode_sequence(&self, tape: &mut Tape, bound: &Bound, target: &PreparedTarget) -> Result<Option<Var>> {
        match &self.arch.transformer {
            None => Ok(None),
            Some(tr) => {
                let mask = vec![true; target.tokens.len()];
                tr.forward(tape, bound, &target.tokens, &mask).map(Some)
            }
        }
    }

    /// Both affinity-subgraph encodings over all nodes.
    pub fn encode_affinity_graph(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        adj_pos: &Arc<SparseMatrix>,
        adj_neg: &Arc<SparseMatrix>,
    ) -> Result<(Var, Var)> {
        if adj_pos.n_rows() != self.n_affinity_nodes || adj_neg.n_rows() != self.n_affinity_nodes {
            return Err(Error::ModelConfig(format!(
                "affinity graph has {} nodes but the model was built for {}",
                adj_pos.n_rows(),
                self.n_affinity_nodes
            )));
        }
        let x = bound.var(self.arch.affinity_embed);
        let [p0, p1] = self.arch.affinity_pos.map(|id| bound.var(id));
        let [n0, n1] = self.arch.affinity_neg.map(|id| bound.var(id));
        Ok((
            encode_affinity(tape, adj_pos, x, p0, p1)?,
            encode_affinity(tape, adj_neg, x, n0, n1)?,
        ))
    }

    /// Forward pass over a batch. Each distinct drug and target in `pairs`
    /// is encoded once and its rows are shared.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        adj_pos: &Arc<SparseMatrix>,
        adj_neg: &Arc<SparseMatrix>,
        cache: &EntityCache,
        pairs: &[PairRef],
        opts: ForwardOptions,
    ) -> Result<BatchOutput> {
        if pairs.is_empty() {
            return Err(Error::Contract("forward over an empty batch".into()));
        }
        let d = self.config.embed_dim;
        let batch = pairs.len();
        let (h_pos, h_neg) = self.encode_affinity_graph(tape, bound, adj_pos, adj_neg)?;

        let mut drug_slot: HashMap<usize, usize> = HashMap::new();
        let mut drug_rows = Vec::new();
        let mut target_slot: HashMap<usize, usize> = HashMap::new();
        let mut target_rows = Vec::new();
        let mut seq_rows = Vec::new();
        for p in pairs {
            if let std::collections::hash_map::Entry::Vacant(e) = drug_slot.entry(p.drug) {
                let drug = cache
                    .drugs
                    .get(p.drug)
                    .ok_or_else(|| Error::Contract(format!("drug index {} not cached", p.drug)))?;
                drug_rows.push(self.encode_drug(tape, bound, drug)?);
                e.insert(drug_rows.len() - 1);
            }
            if let std::collections::hash_map::Entry::Vacant(e) = target_slot.entry(p.target) {
                let target = cache
                    .targets
                    .get(p.target)
                    .ok_or_else(|| Error::Contract(format!("target index {} not cached", p.target)))?;
                target_rows.push(self.encode_protein(tape, bound, target, h_pos)?);
                if let Some(s) = self.encode_sequence(tape, bound, target)? {
                    seq_rows.push(s);
                }
                e.insert(target_rows.len() - 1);
            }
        }
        let drug_mat = tape.concat_rows(&drug_rows)?;
        let target_mat = tape.concat_rows(&target_rows)?;
        let d_idx: Vec<Option<usize>> = pairs.iter().map(|p| Some(drug_slot[&p.drug])).collect();
        let t_idx: Vec<Option<usize>> = pairs.iter().map(|p| Some(target_slot[&p.target])).collect();
        let d_nodes: Vec<Option<usize>> = pairs.iter().map(|p| cache.drugs[p.drug].node).collect();
        let t_nodes: Vec<Option<usize>> = pairs.iter().map(|p| cache.targets[p.target].node).collect();

        let mol = tape.gather_rows(drug_mat, &d_idx)?;
        let d_pos = tape.gather_rows(h_pos, &d_nodes)?;
        let d_neg = tape.gather_rows(h_neg, &d_nodes)?;
        let drug_views = tape.concat_cols(&[mol, d_pos, d_neg])?;
        Self::expect_shape(tape, drug_views, batch, 3 * d, "drug views")?;

        let prot = tape.gather_rows(target_mat, &t_idx)?;
        let t_pos = tape.gather_rows(h_pos, &t_nodes)?;
        let t_neg = tape.gather_rows(h_neg, &t_nodes)?;
        let mut parts = vec![prot, t_pos, t_neg];
        if !seq_rows.is_empty() {
            let seq_mat = tape.concat_rows(&seq_rows)?;
            parts.push(tape.gather_rows(seq_mat, &t_idx)?);
        }
        let target_views = tape.concat_cols(&parts)?;
        Self::expect_shape(tape, target_views, batch, self.arch.projection.target_in, "target views")?;

        let (z_drug, z_target) = self.arch.projection.project(tape, bound, drug_views, target_views)?;
        let mode = opts.prompt_mode.unwrap_or_else(|| self.prompt_mode());
        let prompts = prompts_for(mode, &self.arch.prompt, tape, bound, z_drug, z_target)?;
        let z = integrate(tape, z_drug, z_target, &prompts)?;
        let fused = AffinityHead::fuse(tape, &z)?;
        Self::expect_shape(tape, fused, batch, 3 * d, "fused pair representation")?;
        let preds = self.arch.head.predict(tape, bound, fused, opts.dropout)?;
        Self::expect_shape(tape, preds, batch, 1, "predictions")?;
        Ok(BatchOutput { preds, prompts, fused })
    }
}
