//! Datasets: the canonical TSV interchange format, matrix-layout conversion
//! with optional pKd transform, and split handling.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

pub const CANONICAL_COLUMNS: [&str; 6] = ["drug_id", "smiles", "target_id", "sequence", "affinity", "split"];
/// Optional seventh column naming a contact-map file per target.
pub const CONTACT_MAP_COLUMN: &str = "contact_map";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!("unknown split '{other}' (expected train or test)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub drug: String,
    pub target: String,
    pub affinity: f64,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetEntry {
    pub sequence: String,
    pub contact_map: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Provenance {
    pub source: String,
    pub params: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DtaDataset {
    pub drugs: BTreeMap<String, String>,
    pub targets: BTreeMap<String, TargetEntry>,
    pub samples: Vec<Sample>,
    pub provenance: Provenance,
    /// Rows dropped because their affinity was missing.
    pub skipped_missing: usize,
}

impl DtaDataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    /// Registers a drug, rejecting a second, different SMILES for the id.
    pub fn add_drug(&mut self, id: &str, smiles: &str) -> Result<()> {
        match self.drugs.get(id) {
            Some(prev) if prev != smiles => Err(Error::Data(format!(
                "drug {id} has conflicting SMILES '{prev}' and '{smiles}'"
            ))),
            Some(_) => Ok(()),
            None => {
                self.drugs.insert(id.to_string(), smiles.to_string());
                Ok(())
            }
        }
    }

    pub fn add_target(&mut self, id: &str, sequence: &str, contact_map: Option<PathBuf>) -> Result<()> {
        let entry = TargetEntry {
            sequence: sequence.to_string(),
            contact_map,
        };
        match self.targets.get(id) {
            Some(prev) if prev != &entry => Err(Error::Data(format!(
                "target {id} is listed with conflicting sequences or contact maps"
            ))),
            Some(_) => Ok(()),
            None => {
                self.targets.insert(id.to_string(), entry);
                Ok(())
            }
        }
    }

    /// Checks id references, finiteness and uniqueness of (drug, target, split).
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for s in &self.samples {
            if !self.drugs.contains_key(&s.drug) {
                return Err(Error::Data(format!("sample references unknown drug {}", s.drug)));
            }
            if !self.targets.contains_key(&s.target) {
                return Err(Error::Data(format!("sample references unknown target {}", s.target)));
            }
            if !s.affinity.is_finite() {
                return Err(Error::Data(format!("non-finite affinity for ({}, {})", s.drug, s.target)));
            }
            if !seen.insert((s.drug.as_str(), s.target.as_str(), s.split)) {
                return Err(Error::Data(format!(
                    "duplicate sample ({}, {}, {})",
                    s.drug,
                    s.target,
                    s.split.as_str()
                )));
            }
        }
        Ok(())
    }

    /// Canonical TSV text; targets with a contact map add the optional
    /// column.
    pub fn to_tsv(&self) -> String {
        let with_maps = self.targets.values().any(|t| t.contact_map.is_some());
        let mut out = CANONICAL_COLUMNS.join("\t");
        if with_maps {
            out.push('\t');
            out.push_str(CONTACT_MAP_COLUMN);
        }
        out.push('\n');
        for s in &self.samples {
            let t = &self.targets[&s.target];
            let _ = write!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                s.drug,
                self.drugs[&s.drug],
                s.target,
                t.sequence,
                s.affinity,
                s.split.as_str()
            );
            if with_maps {
                out.push('\t');
                if let Some(p) = &t.contact_map {
                    out.push_str(&p.display().to_string());
                }
            }
            out.push('\n');
        }
        out
    }

    /// Keeps a seeded fraction of the training samples; test samples stay.
    pub fn subsample_train(&self, fraction: f64, seed: u64) -> Result<DtaDataset> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Config(format!("subsample fraction {fraction} outside (0, 1]")));
        }
        if fraction == 1.0 {
            return Ok(self.clone());
        }
        let mut out = self.clone();
        out.samples = self
            .samples
            .iter()
            .enumerate()
            .filter(|(i, s)| {
                s.split == Split::Test || rng::uniform_at(&[seed, 0x5AB5, *i as u64]) < fraction
            })
            .map(|(_, s)| s.clone())
            .collect();
        out.provenance
            .params
            .push(("train_subsample".into(), format!("{fraction} seed {seed}")));
        Ok(out)
    }

    /// Seeded subsample of every split alike.
    pub fn subsample_all(&self, fraction: f64, seed: u64) -> Result<DtaDataset> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Config(format!("subsample fraction {fraction} outside (0, 1]")));
        }
        let mut out = self.clone();
        out.samples = self
            .samples
            .iter()
            .enumerate()
            .filter(|(i, _)| rng::uniform_at(&[seed, 0x5AB6, *i as u64]) < fraction)
            .map(|(_, s)| s.clone())
            .collect();
        out.provenance
            .params
            .push(("subsample".into(), format!("{fraction} seed {seed}")));
        Ok(out)
    }
}

fn column_index(header: &[&str], name: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| *h == name)
        .ok_or_else(|| Error::Data(format!("missing column '{name}' in header")))
}

/// Parses canonical TSV text. `base` resolves relative contact-map paths.
pub fn parse_canonical_tsv(text: &str, base: Option<&Path>) -> Result<DtaDataset> {
    let mut lines = text.lines().enumerate();
    let header: Vec<&str> = match lines.next() {
        Some((_, h)) => h.trim_end_matches('\r').split('\t').collect(),
        None => return Err(Error::Data("empty dataset file".into())),
    };
    let cols: Vec<usize> = CANONICAL_COLUMNS
        .iter()
        .map(|c| column_index(&header, c))
        .collect::<Result<_>>()?;
    let map_col = header.iter().position(|h| *h == CONTACT_MAP_COLUMN);
    let mut ds = DtaDataset {
        provenance: Provenance {
            source: "canonical-tsv".into(),
            params: Vec::new(),
        },
        ..Default::default()
    };
    let mut seen = HashSet::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < header.len() {
            return Err(Error::Data(format!(
                "line {line_no}: expected {} fields, found {}",
                header.len(),
                fields.len()
            )));
        }
        let f = |k: usize| fields[cols[k]].trim();
        let (drug, smiles, target, sequence, affinity, split) = (f(0), f(1), f(2), f(3), f(4), f(5));
        if drug.is_empty() || target.is_empty() || smiles.is_empty() || sequence.is_empty() {
            return Err(Error::Data(format!("line {line_no}: empty identifier, SMILES or sequence")));
        }
        let split = Split::parse(split).map_err(|e| Error::Data(format!("line {line_no}: {e}")))?;
        let y: f64 = affinity
            .parse()
            .map_err(|_| Error::Data(format!("line {line_no}: affinity '{affinity}' is not a number")))?;
        let contact = map_col
            .map(|c| fields[c].trim())
            .filter(|p| !p.is_empty())
            .map(|p| match base {
                Some(b) => b.join(p),
                None => PathBuf::from(p),
            });
        ds.add_drug(drug, smiles).map_err(|e| Error::Data(format!("line {line_no}: {e}")))?;
        ds.add_target(target, sequence, contact)
            .map_err(|e| Error::Data(format!("line {line_no}: {e}")))?;
        if y.is_nan() {
            ds.skipped_missing += 1;
            continue;
        }
        if !y.is_finite() {
            return Err(Error::Data(format!("line {line_no}: affinity {y} is not finite")));
        }
        if !seen.insert((drug.to_string(), target.to_string(), split)) {
            return Err(Error::Data(format!(
                "line {line_no}: duplicate sample ({drug}, {target}, {})",
                split.as_str()
            )));
        }
        ds.samples.push(Sample {
            drug: drug.to_string(),
            target: target.to_string(),
            affinity: y,
            split,
        });
    }
    ds.validate()?;
    Ok(ds)
}

pub fn load_canonical_tsv(path: &Path) -> Result<DtaDataset> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("cannot read {}: {e}", path.display())))?;
    parse_canonical_tsv(&text, path.parent())
}

/// `pKd = −log10(Kd / 1e9)` for `Kd` in nanomolar, written as
/// `9 − log10(Kd)` so exact powers of ten map to exact results.
pub fn kd_to_pkd(kd_nm: f64) -> Result<f64> {
    if !kd_nm.is_finite() || kd_nm <= 0.0 {
        return Err(Error::Data(format!("Kd must be positive and finite, got {kd_nm}")));
    }
    Ok(9.0 - kd_nm.log10())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    KdToPkd,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SplitSpec {
    /// Indices into the row-major list of finite matrix cells.
    Explicit { train: Vec<usize>, test: Vec<usize> },
    /// Each cell lands in train with probability `train_fraction`.
    Random { train_fraction: f64, seed: u64 },
}

/// Converts list-plus-matrix layouts (one row per drug, one column per
/// target) into a dataset. Ids are `D{i}` and `T{j}` unless given.
pub fn convert_matrix_format(
    drugs: &[(String, String)],
    targets: &[(String, String)],
    matrix: &[Vec<f64>],
    transform: Transform,
    split: &SplitSpec,
) -> Result<DtaDataset> {
    if matrix.len() != drugs.len() {
        return Err(Error::Data(format!(
            "affinity matrix has {} rows for {} drugs",
            matrix.len(),
            drugs.len()
        )));
    }
    if let Some((i, row)) = matrix.iter().enumerate().find(|(_, r)| r.len() != targets.len()) {
        return Err(Error::Data(format!(
            "affinity matrix row {i} has {} columns for {} targets",
            row.len(),
            targets.len()
        )));
    }
    let mut ds = DtaDataset::default();
    for (id, smi) in drugs {
        ds.add_drug(id, smi)?;
    }
    for (id, seq) in targets {
        ds.add_target(id, seq, None)?;
    }
    let mut cells = Vec::new();
    for (i, row) in matrix.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if v.is_finite() {
                let y = match transform {
                    Transform::KdToPkd => kd_to_pkd(v)
                        .map_err(|e| Error::Data(format!("cell ({i}, {j}): {e}")))?,
                    Transform::Identity => v,
                };
                cells.push((i, j, y));
            } else {
                ds.skipped_missing += 1;
            }
        }
    }
    let assignment: Vec<Option<Split>> = match split {
        SplitSpec::Explicit { train, test } => {
            let mut a = vec![None; cells.len()];
            for (list, s) in [(train, Split::Train), (test, Split::Test)] {
                for &k in list {
                    let slot = a.get_mut(k).ok_or_else(|| {
                        Error::Data(format!("split index {k} outside {} finite cells", cells.len()))
                    })?;
                    if slot.is_some() {
                        return Err(Error::Data(format!("split index {k} assigned twice")));
                    }
                    *slot = Some(s);
                }
            }
            a
        }
        SplitSpec::Random { train_fraction, seed } => {
            if !(0.0..=1.0).contains(train_fraction) {
                return Err(Error::Data(format!("train fraction {train_fraction} outside [0, 1]")));
            }
            let mut order: Vec<usize> = (0..cells.len()).collect();
            order.shuffle(&mut rng::stream(&[*seed, 0x5B17]));
            let n_train = (train_fraction * cells.len() as f64).round() as usize;
            let mut a = vec![Some(Split::Test); cells.len()];
            for &k in &order[..n_train] {
                a[k] = Some(Split::Train);
            }
            a
        }
    };
    for ((i, j, y), s) in cells.into_iter().zip(assignment) {
        if let Some(split) = s {
            ds.samples.push(Sample {
                drug: drugs[i].0.clone(),
                target: targets[j].0.clone(),
                affinity: y,
                split,
            });
        }
    }
    ds.provenance = Provenance {
        source: "matrix".into(),
        params: vec![
            (
                "transform".into(),
                match transform {
                    Transform::KdToPkd => "kd_to_pkd".into(),
                    Transform::Identity => "none".into(),
                },
            ),
            (
                "split".into(),
                match split {
                    SplitSpec::Explicit { .. } => "explicit".into(),
                    SplitSpec::Random { train_fraction, seed } => {
                        format!("random train_fraction={train_fraction} seed={seed}")
                    }
                },
            ),
        ],
    };
    ds.validate()?;
    Ok(ds)
}

/// Reads an ordered id→value listing: either a JSON object (key order kept)
/// or lines of `id<TAB>value`.
pub fn parse_entity_list(text: &str) -> Result<Vec<(String, String)>> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('{') {
        let v: serde_json::Value =
            serde_json::from_str(trimmed).map_err(|e| Error::Data(format!("invalid JSON listing: {e}")))?;
        let obj = v
            .as_object()
            .ok_or_else(|| Error::Data("JSON listing must be an object".into()))?;
        return obj
            .iter()
            .map(|(k, v)| {
                v.as_str()
                    .map(|s| (k.clone(), s.to_string()))
                    .ok_or_else(|| Error::Data(format!("listing value for {k} is not a string")))
            })
            .collect();
    }
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let mut it = l.trim_end_matches('\r').splitn(2, '\t');
            match (it.next(), it.next()) {
                (Some(id), Some(v)) if !id.is_empty() && !v.is_empty() => Ok((id.to_string(), v.trim().to_string())),
                _ => Err(Error::Data(format!("listing line {}: expected id<TAB>value", i + 1))),
            }
        })
        .collect()
}

/// Whitespace-separated matrix; `nan` marks missing cells.
pub fn parse_matrix(text: &str) -> Result<Vec<Vec<f64>>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.split_whitespace()
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| Error::Data(format!("matrix line {}: '{v}' is not a number", i + 1)))
                })
                .collect()
        })
        .collect()
}

/// Explicit split indices from JSON: either a flat list or a list of folds
/// (which are concatenated).
pub fn parse_index_list(text: &str) -> Result<Vec<usize>> {
    let v: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Data(format!("invalid split index JSON: {e}")))?;
    let mut out = Vec::new();
    fn collect(v: &serde_json::Value, out: &mut Vec<usize>) -> Result<()> {
        match v {
            serde_json::Value::Array(items) => items.iter().try_for_each(|x| collect(x, out)),
            serde_json::Value::Number(n) => {
                let k = n
                    .as_u64()
                    .ok_or_else(|| Error::Data(format!("split index {n} is not a non-negative integer")))?;
                out.push(k as usize);
                Ok(())
            }
            other => Err(Error::Data(format!("unexpected value in split indices: {other}"))),
        }
    }
    collect(&v, &mut out)?;
    Ok(out)
}

/// Sample-level summary used by the split-integrity checks.
pub fn split_overlap(ds: &DtaDataset) -> usize {
    let train: BTreeSet<(&str, &str)> = ds
        .split(Split::Train)
        .map(|s| (s.drug.as_str(), s.target.as_str()))
        .collect();
    ds.split(Split::Test)
        .filter(|s| train.contains(&(s.drug.as_str(), s.target.as_str())))
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;

    const FOUR: &str = "drug_id\tsmiles\ttarget_id\tsequence\taffinity\tsplit\n\
        d0\tCCO\tt0\tMKV\t5.5\ttrain\n\
        d0\tCCO\tt1\tMSTN\t7.0\ttrain\n\
        d1\tc1ccccc1\tt0\tMKV\t6.1\ttrain\n\
        d1\tc1ccccc1\tt1\tMSTN\t8.2\ttest\n";

    #[test]
    fn four_row_fixture() {
        let ds = parse_canonical_tsv(FOUR, None).unwrap();
        assert_eq!((ds.drugs.len(), ds.targets.len(), ds.samples.len()), (2, 2, 4));
        assert_eq!(ds.count(Split::Test), 1);
    }

    #[test]
    fn nan_rows_are_skipped_and_counted() {
        let text = format!("{FOUR}d1\tc1ccccc1\tt1\tMSTN\tNaN\ttrain\n");
        let ds = parse_canonical_tsv(&text, None).unwrap();
        assert_eq!(ds.samples.len(), 4);
        assert_eq!(ds.skipped_missing, 1);
    }

    #[test]
    fn missing_column_is_named() {
        let text = "drug_id\tsmiles\ttarget_id\tsequence\tsplit\nd\tC\tt\tM\ttrain\n";
        match parse_canonical_tsv(text, None) {
            Err(Error::Data(m)) => assert!(m.contains("'affinity'"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let text = format!("{FOUR}d2\tCC\tt0\n");
        let err = parse_canonical_tsv(&text, None).unwrap_err().to_string();
        assert!(err.contains("line 6"), "{err}");
        let text = format!("{FOUR}d2\tCC\tt0\tMKV\tabc\ttrain\n");
        assert!(parse_canonical_tsv(&text, None).unwrap_err().to_string().contains("line 6"));
    }

    #[test]
    fn conflicting_smiles_and_duplicates_are_rejected() {
        let text = format!("{FOUR}d0\tCCN\tt0\tMKV\t5.0\ttest\n");
        assert!(parse_canonical_tsv(&text, None).unwrap_err().to_string().contains("conflicting"));
        let text = format!("{FOUR}d0\tCCO\tt0\tMKV\t5.0\ttrain\n");
        assert!(parse_canonical_tsv(&text, None).unwrap_err().to_string().contains("duplicate"));
    }

    #[test]
    fn pkd_conversion_is_exact() {
        assert_eq!(kd_to_pkd(10_000.0).unwrap(), 5.0);
        assert_eq!(kd_to_pkd(1.0).unwrap(), 9.0);
        assert!(kd_to_pkd(0.0).is_err());
        assert!(kd_to_pkd(-3.0).is_err());
        assert!(kd_to_pkd(10.0).unwrap() > kd_to_pkd(11.0).unwrap());
    }

    fn ids(prefix: &str, n: usize, value: &str) -> Vec<(String, String)> {
        (0..n).map(|i| (format!("{prefix}{i}"), value.to_string())).collect()
    }

    #[test]
    fn matrix_conversion_and_round_trip() {
        let drugs = ids("D", 2, "CC");
        let targets = ids("T", 3, "MKV");
        let m = vec![vec![10_000.0, f64::NAN, 1.0], vec![100.0, 10.0, 1000.0]];
        let ds = convert_matrix_format(
            &drugs,
            &targets,
            &m,
            Transform::KdToPkd,
            &SplitSpec::Explicit {
                train: vec![0, 2, 3],
                test: vec![1, 4],
            },
        )
        .unwrap();
        assert_eq!(ds.samples.len(), 5);
        assert_eq!(ds.skipped_missing, 1);
        assert_eq!(ds.samples[0].affinity, 5.0);
        assert_eq!(ds.samples[1].affinity, 9.0);
        assert_eq!(ds.count(Split::Test), 2);
        let back = parse_canonical_tsv(&ds.to_tsv(), None).unwrap();
        assert_eq!(back.samples, ds.samples);
    }

    #[test]
    fn matrix_conversion_errors() {
        let drugs = ids("D", 2, "CC");
        let targets = ids("T", 2, "MKV");
        let split = SplitSpec::Random {
            train_fraction: 0.5,
            seed: 1,
        };
        assert!(convert_matrix_format(&drugs, &targets, &[vec![1.0, 2.0]], Transform::Identity, &split).is_err());
        let m = vec![vec![1.0, 2.0], vec![0.0, 3.0]];
        assert!(convert_matrix_format(&drugs, &targets, &m, Transform::KdToPkd, &split).is_err());
        let ok = convert_matrix_format(&drugs, &targets, &m, Transform::Identity, &split).unwrap();
        assert_eq!(ok.count(Split::Train), 2);
        assert_eq!(split_overlap(&ok), 0);
    }

    #[test]
    fn listings_and_indices() {
        let json = r#"{"b": "CC", "a": "CCO"}"#;
        assert_eq!(parse_entity_list(json).unwrap()[0].0, "b");
        assert_eq!(parse_entity_list("x\tMKV\ny\tMST\n").unwrap().len(), 2);
        assert_eq!(parse_index_list("[[3, 1], [2]]").unwrap(), vec![3, 1, 2]);
        assert!(parse_matrix("1 nan\n2 3\n").unwrap()[0][1].is_nan());
    }
}
