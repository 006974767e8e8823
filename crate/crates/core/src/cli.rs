//! Command-line surface.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::checkpoint::Checkpoint;
use crate::config::{load_config, parse_config, RunConfig, TrainConfig};
use crate::data::{
    convert_matrix_format, load_canonical_tsv, parse_entity_list, parse_index_list, parse_matrix, DtaDataset, Split,
    SplitSpec, Transform,
};
use crate::error::{Error, Result};
use crate::fixtures;
use crate::gradcheck::{model_grad_check, op_suite, Coverage, DEFAULT_STEP};
use crate::protein::ContactMap;
use crate::train::{embed_pairs, evaluate, predict_one, prepare, train_epochs, EpochLog, TrainOptions, TrainState};

const EXIT_CODES: &str = "Exit codes: 0 ok, 2 usage, 10 dimension, 11 structural, 12 domain, 13 contract, \
14 training, 15 parse, 16 input, 17 data, 18 model-config, 19 config, 20 undefined, 21 checkpoint, 22 io, \
1 gradient check failed.";

#[derive(Debug, Parser)]
#[command(name = "hgtdp", version, about = "Drug-target binding affinity prediction", after_help = EXIT_CODES)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a list-plus-matrix dataset into canonical TSV.
    Convert(ConvertArgs),
    /// Train a model and write a checkpoint and epoch log.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Predict the affinity of drug/target pairs.
    Predict(PredictArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Write fused pair embeddings as TSV.
    Embed(EmbedArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TransformArg {
    KdToPkd,
    None,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FixtureArg {
    /// 8 drugs x 4 targets, all training pairs.
    Overfit,
    /// 2 drugs x 2 targets, one test pair.
    Four,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// Drug listing: JSON object id->SMILES, or id<TAB>SMILES lines.
    #[arg(long)]
    pub drugs: PathBuf,
    /// Target listing: JSON object id->sequence, or id<TAB>sequence lines.
    #[arg(long)]
    pub targets: PathBuf,
    /// Whitespace-separated affinity matrix, one row per drug; `nan` marks gaps.
    #[arg(long)]
    pub matrix: PathBuf,
    #[arg(long, value_enum, default_value = "none")]
    pub transform: TransformArg,
    /// JSON list (or list of folds) of training cell indices.
    #[arg(long, requires = "test_index")]
    pub train_index: Option<PathBuf>,
    /// JSON list of test cell indices.
    #[arg(long, requires = "train_index")]
    pub test_index: Option<PathBuf>,
    /// Train fraction for a seeded random split when no index files are given.
    #[arg(long, default_value_t = 0.837)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Canonical TSV dataset.
    #[arg(long, conflicts_with = "fixture")]
    pub data: Option<PathBuf>,
    /// Use a built-in synthetic dataset instead of a file.
    #[arg(long, value_enum)]
    pub fixture: Option<FixtureArg>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Overrides the configured seed.
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Comma-separated seeds; trains once per seed and summarizes.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Output directory for checkpoints, logs and reports.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Continue from a checkpoint written with the same config and data.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Suppress per-epoch output on stdout.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Writes the key=value report here and a one-line record next to it.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, requires = "sequence", conflicts_with = "pairs")]
    pub smiles: Option<String>,
    #[arg(long, requires = "smiles")]
    pub sequence: Option<String>,
    #[arg(long, default_value = "query-drug")]
    pub drug_id: String,
    #[arg(long, default_value = "query-target")]
    pub target_id: String,
    #[arg(long)]
    pub contact_map: Option<PathBuf>,
    /// TSV with columns drug_id, smiles, target_id, sequence (header optional).
    #[arg(long)]
    pub pairs: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = DEFAULT_STEP)]
    pub step: f64,
    /// Pass threshold on the max relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Entries sampled per parameter tensor in the full-width model check.
    #[arg(long, default_value_t = 6)]
    pub samples: usize,
    /// Skip the whole-model checks.
    #[arg(long)]
    pub ops_only: bool,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Affinities at or above this are labelled strong (7 for pKd, 12.1 for KIBA).
    #[arg(long, default_value_t = 7.0)]
    pub strong_threshold: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io(format!("cannot write {}: {e}", path.display())))
}

fn load_dataset(args: &DataArgs, config_data: Option<&Path>) -> Result<DtaDataset> {
    match (&args.fixture, &args.data, config_data) {
        (Some(FixtureArg::Overfit), _, _) => Ok(fixtures::overfit_fixture()),
        (Some(FixtureArg::Four), _, _) => Ok(fixtures::four_pair_fixture()),
        (None, Some(p), _) => load_canonical_tsv(p),
        (None, None, Some(p)) => load_canonical_tsv(p),
        (None, None, None) => Err(Error::Input("no dataset given (use --data or --fixture)".into())),
    }
}

/// Runs a command, writing regular output to `out`.
pub fn run(cli: Cli, out: &mut dyn std::io::Write) -> Result<i32> {
    match cli.command {
        Command::Convert(a) => convert(a, out),
        Command::Train(a) => train(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Predict(a) => predict(a, out),
        Command::Gradcheck(a) => gradcheck(a, out),
        Command::Embed(a) => embed(a, out),
    }
}

fn emit(out: &mut dyn std::io::Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::Io(format!("cannot write output: {e}")))
}

fn convert(a: ConvertArgs, out: &mut dyn std::io::Write) -> Result<i32> {
    let drugs = parse_entity_list(&read(&a.drugs)?)?;
    let targets = parse_entity_list(&read(&a.targets)?)?;
    let matrix = parse_matrix(&read(&a.matrix)?)?;
    let split = match (&a.train_index, &a.test_index) {
        (Some(tr), Some(te)) => SplitSpec::Explicit {
            train: parse_index_list(&read(tr)?)?,
            test: parse_index_list(&read(te)?)?,
        },
        _ => SplitSpec::Random {
            train_fraction: a.train_fraction,
            seed: a.seed,
        },
    };
    let transform = match a.transform {
        TransformArg::KdToPkd => Transform::KdToPkd,
        TransformArg::None => Transform::Identity,
    };
    let ds = convert_matrix_format(&drugs, &targets, &matrix, transform, &split)?;
    write(&a.out, &ds.to_tsv())?;
    emit(
        out,
        &format!(
            "samples={}\ttrain={}\ttest={}\tskipped_missing={}\n",
            ds.samples.len(),
            ds.count(Split::Train),
            ds.count(Split::Test),
            ds.skipped_missing
        ),
    )?;
    Ok(0)
}

fn run_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => load_config(p),
        None => Ok(RunConfig::default()),
    }
}

/// Config stored in a checkpoint.
fn checkpoint_config(ck: &Checkpoint) -> Result<TrainConfig> {
    Ok(parse_config(&ck.config_text, None)
        .map_err(|e| Error::Checkpoint(format!("stored config: {e}")))?
        .train)
}

fn train(a: TrainArgs, out: &mut dyn std::io::Write) -> Result<i32> {
    let rc = run_config(a.config.as_deref())?;
    for n in &rc.notices {
        eprintln!("note: {n}");
    }
    let dataset = load_dataset(&a.data, rc.data.as_deref())?;
    let out_dir = a
        .out_dir
        .clone()
        .or(rc.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| Error::Io(format!("cannot create {}: {e}", out_dir.display())))?;
    let mut base = rc.train.clone();
    if let Some(e) = a.epochs {
        base.epochs = e;
    }
    let seeds = match (&a.seeds, a.seed) {
        (Some(list), _) => list.clone(),
        (None, Some(s)) => vec![s],
        (None, None) => vec![base.seed],
    };
    let multi = seeds.len() > 1;
    let mut reports = Vec::new();
    for seed in seeds {
        let mut cfg = base.clone();
        cfg.seed = seed;
        cfg.validate()?;
        let dir = if multi { out_dir.join(format!("seed{seed}")) } else { out_dir.clone() };
        std::fs::create_dir_all(&dir).map_err(|e| Error::Io(format!("cannot create {}: {e}", dir.display())))?;
        let prepared = prepare(&dataset, &cfg)?;
        let mut state = match &a.resume {
            Some(p) => TrainState::resume(&cfg, &prepared, &Checkpoint::load(p)?)?,
            None => TrainState::new(&cfg, &prepared)?,
        };
        let mut log = String::from(EpochLog::HEADER);
        log.push('\n');
        let quiet = a.quiet;
        if !quiet {
            emit(out, &format!("{}\n", EpochLog::HEADER))?;
        }
        let mut lines = Vec::new();
        train_epochs(&mut state, &prepared, &cfg, TrainOptions::default(), &mut |l| {
            lines.push(l.to_line());
        })?;
        for line in &lines {
            log.push_str(line);
            log.push('\n');
            if !quiet {
                emit(out, &format!("{line}\n"))?;
            }
        }
        let ck_path = cfg.checkpoint_path.clone().unwrap_or_else(|| dir.join("model.hgtd"));
        state.checkpoint(&cfg, &prepared).save(&ck_path)?;
        write(&dir.join("train.log"), &log)?;
        if !prepared.test.is_empty() {
            let report = match evaluate(&state.model, &prepared, Split::Test, cfg.batch_size) {
                Ok(r) => r,
                Err(Error::Undefined(msg)) => {
                    eprintln!("note: seed {seed}: no test report ({msg})");
                    continue;
                }
                Err(e) => return Err(e),
            };
            let report_path = rc.report.clone().unwrap_or_else(|| dir.join("report.txt"));
            write(&report_path, &report.to_block())?;
            emit(out, &format!("seed={seed}\t{}\n", report.to_record()))?;
            reports.push(report);
        }
    }
    if multi && !reports.is_empty() {
        let mut s = String::new();
        for (name, pick) in [
            ("mse", (|r: &crate::metrics::EvalReport| r.mse) as fn(&crate::metrics::EvalReport) -> f64),
            ("ci", |r| r.ci),
            ("r2m", |r| r.r2m),
            ("pearson", |r| r.pearson),
        ] {
            let v: Vec<f64> = reports.iter().map(pick).collect();
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
            let _ = writeln!(s, "{name} = {mean:.6} ± {sd:.6}");
        }
        write(&out_dir.join("summary.txt"), &s)?;
        emit(out, &s)?;
    }
    Ok(0)
}

/// Loads a checkpoint plus the dataset it was trained on.
fn restore(ck_path: &Path, data: &DataArgs) -> Result<(TrainConfig, crate::train::Prepared, TrainState)> {
    let ck = Checkpoint::load(ck_path)?;
    let cfg = checkpoint_config(&ck)?;
    let dataset = load_dataset(data, None)?;
    let prepared = prepare(&dataset, &cfg)?;
    let state = TrainState::resume(&cfg, &prepared, &ck)?;
    Ok((cfg, prepared, state))
}

fn eval(a: EvalArgs, out: &mut dyn std::io::Write) -> Result<i32> {
    let (cfg, prepared, state) = restore(&a.checkpoint, &a.data)?;
    let report = evaluate(&state.model, &prepared, a.split.into(), cfg.batch_size)?;
    if let Some(p) = &a.report {
        write(p, &report.to_block())?;
        write(&p.with_extension("record"), &format!("{}\n", report.to_record()))?;
    }
    emit(out, &report.to_block())?;
    Ok(0)
}

fn predict(a: PredictArgs, out: &mut dyn std::io::Write) -> Result<i32> {
    let (cfg, prepared, state) = restore(&a.checkpoint, &a.data)?;
    let map = a.contact_map.as_deref().map(ContactMap::load).transpose()?;
    let mut queries: Vec<(String, String, String, String)> = Vec::new();
    if let (Some(smi), Some(seq)) = (&a.smiles, &a.sequence) {
        queries.push((a.drug_id.clone(), smi.clone(), a.target_id.clone(), seq.clone()));
    }
    if let Some(p) = &a.pairs {
        for (i, line) in read(p)?.lines().enumerate() {
            let f: Vec<&str> = line.split('\t').map(str::trim).collect();
            if line.trim().is_empty() || (i == 0 && f.first() == Some(&"drug_id")) {
                continue;
            }
            if f.len() < 4 {
                return Err(Error::Input(format!("pairs line {}: expected 4 columns", i + 1)));
            }
            queries.push((f[0].into(), f[1].into(), f[2].into(), f[3].into()));
        }
    }
    if queries.is_empty() {
        return Err(Error::Input("nothing to predict (use --smiles/--sequence or --pairs)".into()));
    }
    for (d, smi, t, seq) in &queries {
        let p = predict_one(&state.model, &prepared, &cfg, (d, smi), (t, seq), map.as_ref())?;
        let mut flags = Vec::new();
        if p.drug_cold_start {
            flags.push("cold_drug");
        }
        if p.target_cold_start {
            flags.push("cold_target");
        }
        let flag = if flags.is_empty() { "-".to_string() } else { flags.join(",") };
        emit(out, &format!("{}\t{}\t{:.6}\t{flag}\n", d, t, p.value))?;
    }
    Ok(0)
}

fn gradcheck(a: GradcheckArgs, out: &mut dyn std::io::Write) -> Result<i32> {
    let mut table = format!("{:<40}{:>10}{:>16}  status\n", "check", "entries", "max_rel_err");
    let mut ok = true;
    let mut row = |name: &str, n: usize, err: f64, table: &mut String| {
        let pass = err < a.tolerance;
        ok &= pass;
        let _ = writeln!(table, "{name:<40}{n:>10}{err:>16.3e}  {}", if pass { "pass" } else { "FAIL" });
    };
    for c in op_suite(a.step)? {
        row(&format!("op:{}", c.op), 0, c.max_rel_err, &mut table);
    }
    if !a.ops_only {
        let mut cfg = TrainConfig {
            seed: 42,
            ..TrainConfig::default()
        };
        let ds = fixtures::four_pair_fixture();
        let prepared = prepare(&ds, &cfg)?;
        for c in model_grad_check(&cfg, &prepared, Coverage::Sampled(a.samples), a.step)? {
            row(&format!("model:{}", c.name), c.checked, c.max_rel_err, &mut table);
        }
        cfg.embed_dim = 4;
        cfg.n_heads = 2;
        cfg.d_ff = 8;
        cfg.head_hidden = [8, 4];
        let prepared = prepare(&ds, &cfg)?;
        let all = model_grad_check(&cfg, &prepared, Coverage::All, a.step)?;
        let n = all.iter().map(|c| c.checked).sum();
        let worst = all.iter().map(|c| c.max_rel_err).fold(0.0, f64::max);
        row("small-model:all-entries", n, worst, &mut table);
    }
    emit(out, &table)?;
    Ok(if ok { 0 } else { 1 })
}

fn embed(a: EmbedArgs, out: &mut dyn std::io::Write) -> Result<i32> {
    let (cfg, prepared, state) = restore(&a.checkpoint, &a.data)?;
    let split: Split = a.split.into();
    let samples = prepared.split(split);
    if samples.is_empty() {
        return Err(Error::Data(format!("the {} split is empty", split.as_str())));
    }
    let pairs: Vec<_> = samples.iter().map(|(p, _)| *p).collect();
    let blocks = embed_pairs(&state.model, &prepared, &pairs, cfg.batch_size)?;
    let width = blocks[0].cols();
    let mut s: String = (0..width).map(|i| format!("f{i}\t")).collect();
    s.push_str("label\n");
    let mut k = 0;
    for b in &blocks {
        for r in 0..b.rows() {
            for v in b.row(r) {
                let _ = write!(s, "{v}\t");
            }
            s.push_str(if samples[k].1 >= a.strong_threshold { "strong\n" } else { "weak\n" });
            k += 1;
        }
    }
    match &a.out {
        Some(p) => write(p, &s)?,
        None => emit(out, &s)?,
    }
    Ok(0)
}
