//! Protein sequences as residue graphs and token streams.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const RESIDUE_FEATURES: usize = 28;
pub const DEFAULT_MAX_SEQ_LEN: usize = 1000;
pub const DEFAULT_CONTACT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_CHAIN_WINDOW: usize = 2;

/// Canonical residues in token order; `A` is token 1, `Y` token 20.
pub const ALPHABET: [char; 20] = [
    'A', 'C', 'D', 'E', 'F', 'G', 'H', 'I', 'K', 'L', 'M', 'N', 'P', 'Q', 'R', 'S', 'T', 'V', 'W', 'Y',
];
pub const PAD_TOKEN: u32 = 0;
pub const UNKNOWN_TOKEN: u32 = 21;
pub const VOCAB_SIZE: usize = 22;

const HYDROPHOBIC: &str = "AVLIMFWC";
const POLAR: &str = "STNQYHKRDE";
const POSITIVE: &str = "KRH";
const NEGATIVE: &str = "DE";
const AROMATIC: &str = "FWYH";
const SMALL: &str = "AGSC";
const PROLINE: &str = "P";

/// How contact-map values are compared against the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ContactDirection {
    /// Values are contact probabilities: keep `value >= threshold`.
    #[default]
    AtLeast,
    /// Values are distances: keep `value <= threshold`.
    AtMost,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactOptions {
    pub threshold: f64,
    pub direction: ContactDirection,
    /// Sequence-neighbour window used when no map is supplied.
    pub window: usize,
}

impl Default for ContactOptions {
    fn default() -> Self {
        ContactOptions {
            threshold: DEFAULT_CONTACT_THRESHOLD,
            direction: ContactDirection::AtLeast,
            window: DEFAULT_CHAIN_WINDOW,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactMap {
    n: usize,
    values: Vec<f64>,
}

impl ContactMap {
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::Input(format!(
                "contact map of size {n} needs {} values, got {}",
                n * n,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "contact map entry ({}, {}) is not finite",
                i / n,
                i % n
            )));
        }
        Ok(ContactMap { n, values })
    }

    /// Map that is zero everywhere except the listed entries.
    pub fn from_entries(n: usize, entries: &[(usize, usize, f64)]) -> Result<Self> {
        let mut values = vec![0.0; n * n];
        for &(i, j, v) in entries {
            if i >= n || j >= n {
                return Err(Error::Input(format!("contact ({i}, {j}) outside {n}x{n} map")));
            }
            values[i * n + j] = v;
        }
        ContactMap::new(n, values)
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// Text form: first line `n`, then `n` rows of `n` whitespace-separated floats.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Input("empty contact map file".into()))?;
        let n: usize = header
            .trim()
            .parse()
            .map_err(|_| Error::Input(format!("contact map header '{}' is not a size", header.trim())))?;
        let mut values = Vec::with_capacity(n * n);
        for (r, line) in lines.enumerate() {
            if r >= n {
                return Err(Error::Input(format!("contact map has more than {n} rows")));
            }
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Input(format!("contact map row {}: {e}", r + 1)))?;
            if row.len() != n {
                return Err(Error::Input(format!(
                    "contact map row {} has {} values, expected {n}",
                    r + 1,
                    row.len()
                )));
            }
            values.extend(row);
        }
        if values.len() != n * n {
            return Err(Error::Input(format!(
                "contact map has {} rows, expected {n}",
                values.len() / n.max(1)
            )));
        }
        ContactMap::new(n, values)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        ContactMap::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{}\n", self.n);
        for r in 0..self.n {
            let row: Vec<String> = self.values[r * self.n..(r + 1) * self.n]
                .iter()
                .map(|v| v.to_string())
                .collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProteinGraph {
    /// One-letter codes after normalization (unknown letters become `X`).
    pub residues: Vec<char>,
    pub edges: Vec<(usize, usize)>,
    pub features: Tensor,
    pub tokens: Vec<u32>,
    /// Letters outside the 20 canonical residues that were mapped to `X`.
    pub unknown_residues: usize,
}

impl ProteinGraph {
    pub fn len(&self) -> usize {
        self.residues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residues.is_empty()
    }
}

fn normalize(seq: &str) -> Result<(Vec<char>, usize)> {
    let seq = seq.trim();
    if seq.is_empty() {
        return Err(Error::Input("empty protein sequence".into()));
    }
    let mut unknown = 0;
    let mut out = Vec::with_capacity(seq.len());
    for (i, c) in seq.chars().enumerate() {
        if !c.is_ascii_alphabetic() {
            return Err(Error::Input(format!(
                "invalid character '{c}' at position {i} in protein sequence"
            )));
        }
        let c = c.to_ascii_uppercase();
        if ALPHABET.contains(&c) || c == 'X' {
            out.push(c);
        } else {
            unknown += 1;
            out.push('X');
        }
    }
    Ok((out, unknown))
}

fn token_of(c: char) -> u32 {
    ALPHABET
        .iter()
        .position(|&a| a == c)
        .map_or(UNKNOWN_TOKEN, |p| p as u32 + 1)
}

/// Integer codes (A=1 … Y=20, anything else 21), truncated to `max_len`.
pub fn tokenize(seq: &str, max_len: usize) -> Vec<u32> {
    seq.chars()
        .filter(|c| !c.is_whitespace())
        .take(max_len)
        .map(|c| token_of(c.to_ascii_uppercase()))
        .collect()
}

/// Residue graph. With a contact map, pair `(i, j)` with `|i − j| > 1` is an
/// edge when its upper-triangle value passes the threshold; without one,
/// residues within `window` positions are joined. Backbone edges `(i, i+1)`
/// are always present.
pub fn build_protein_graph(
    seq: &str,
    contact_map: Option<&ContactMap>,
    opts: &ContactOptions,
    max_seq_len: usize,
) -> Result<ProteinGraph> {
    let (residues, unknown) = normalize(seq)?;
    let n = residues.len();
    let mut edges = Vec::new();
    match contact_map {
        Some(map) => {
            if map.size() != n {
                return Err(Error::Input(format!(
                    "contact map is {0}x{0} but the sequence has {n} residues",
                    map.size()
                )));
            }
            for i in 0..n {
                for j in i + 1..n {
                    let keep = j == i + 1
                        || match opts.direction {
                            ContactDirection::AtLeast => map.get(i, j) >= opts.threshold,
                            ContactDirection::AtMost => map.get(i, j) <= opts.threshold,
                        };
                    if keep {
                        edges.push((i, j));
                    }
                }
            }
        }
        None => {
            let window = opts.window.max(1);
            for i in 0..n {
                for j in i + 1..n.min(i + window + 1) {
                    edges.push((i, j));
                }
            }
        }
    }
    let features = featurize_residues(&residues);
    let tokens = residues.iter().take(max_seq_len).map(|&c| token_of(c)).collect();
    Ok(ProteinGraph {
        residues,
        edges,
        features,
        tokens,
        unknown_residues: unknown,
    })
}

/// One-hot over the 20 residues plus `X` (21) ∥ physicochemical flags (7).
pub fn featurize_residues(residues: &[char]) -> Tensor {
    let mut data = vec![0.0; residues.len() * RESIDUE_FEATURES];
    for (r, &c) in residues.iter().enumerate() {
        let row = &mut data[r * RESIDUE_FEATURES..(r + 1) * RESIDUE_FEATURES];
        row[token_of(c) as usize - 1] = 1.0;
        if c == 'X' {
            continue;
        }
        for (k, set) in [HYDROPHOBIC, POLAR, POSITIVE, NEGATIVE, AROMATIC, SMALL, PROLINE]
            .iter()
            .enumerate()
        {
            if set.contains(c) {
                row[21 + k] = 1.0;
            }
        }
    }
    Tensor::new(vec![residues.len(), RESIDUE_FEATURES], data).expect("feature shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(seq: &str, window: usize) -> ProteinGraph {
        let opts = ContactOptions {
            window,
            ..Default::default()
        };
        build_protein_graph(seq, None, &opts, DEFAULT_MAX_SEQ_LEN).unwrap()
    }

    #[test]
    fn chain_window_two() {
        let g = chain("ACD", 2);
        let mut e = g.edges.clone();
        e.sort();
        assert_eq!(e, vec![(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn contact_map_adds_long_range_edge() {
        let map = ContactMap::from_entries(4, &[(0, 3, 0.9)]).unwrap();
        let g = build_protein_graph("ACDE", Some(&map), &ContactOptions::default(), 1000).unwrap();
        let mut e = g.edges.clone();
        e.sort();
        assert_eq!(e, vec![(0, 1), (0, 3), (1, 2), (2, 3)]);
    }

    #[test]
    fn impossible_threshold_leaves_backbone() {
        let map = ContactMap::new(4, vec![1.0; 16]).unwrap();
        let opts = ContactOptions {
            threshold: 1.1,
            ..Default::default()
        };
        let g = build_protein_graph("ACDE", Some(&map), &opts, 1000).unwrap();
        assert_eq!(g.edges, vec![(0, 1), (1, 2), (2, 3)]);
    }

    #[test]
    fn distance_direction() {
        let map = ContactMap::from_entries(4, &[(0, 2, 9.0), (0, 3, 4.0), (1, 3, 12.0)]).unwrap();
        let opts = ContactOptions {
            threshold: 8.0,
            direction: ContactDirection::AtMost,
            window: 2,
        };
        let g = build_protein_graph("ACDE", Some(&map), &opts, 1000).unwrap();
        assert_eq!(g.edges, vec![(0, 1), (0, 3), (1, 2), (2, 3)]);
    }

    #[test]
    fn map_size_must_match() {
        let map = ContactMap::new(3, vec![0.0; 9]).unwrap();
        let err = build_protein_graph("ACDE", Some(&map), &ContactOptions::default(), 1000);
        assert!(matches!(err, Err(Error::Input(_))));
    }

    #[test]
    fn unknown_letters_counted() {
        let g = chain("ABZC", 1);
        assert_eq!(g.residues, vec!['A', 'X', 'X', 'C']);
        assert_eq!(g.unknown_residues, 2);
        assert_eq!(g.tokens, vec![1, 21, 21, 2]);
        assert!(build_protein_graph("AC1", None, &ContactOptions::default(), 10).is_err());
        assert!(build_protein_graph("", None, &ContactOptions::default(), 10).is_err());
    }

    #[test]
    fn lysine_flags() {
        let f = featurize_residues(&['K']);
        let flags = &f.row(0)[21..];
        assert_eq!(flags, &[0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(f.row(0)[8], 1.0);
    }

    #[test]
    fn unknown_residue_has_no_flags() {
        let f = featurize_residues(&['X']);
        assert_eq!(f.row(0)[20], 1.0);
        assert_eq!(f.row(0).iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn row_sums_in_range() {
        let res: Vec<char> = ALPHABET.iter().copied().chain(['X']).collect();
        let f = featurize_residues(&res);
        for r in 0..res.len() {
            let row = f.row(r);
            let s: f64 = row.iter().sum();
            assert!((1.0..=8.0).contains(&s));
            assert_eq!(row[..21].iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("ACD", 1000), vec![1, 2, 3]);
        assert_eq!(tokenize("Y", 10), vec![20]);
        let long: String = std::iter::repeat_n('A', 1200).collect();
        assert_eq!(tokenize(&long, 1000).len(), 1000);
        let g = chain(&long, 2);
        assert_eq!(g.tokens.len(), 1000);
        assert_eq!(g.len(), 1200);
    }

    #[test]
    fn contact_map_text_round_trip() {
        let map = ContactMap::from_entries(3, &[(0, 2, 0.75), (2, 0, 0.75)]).unwrap();
        assert_eq!(ContactMap::parse(&map.to_text()).unwrap(), map);
        assert!(ContactMap::parse("2\n1 2\n3").is_err());
        assert!(ContactMap::parse("2\n1 2\n3 x").is_err());
    }
}
