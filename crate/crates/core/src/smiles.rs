//! SMILES parsing into molecular graphs.
//!
//! Supported grammar: organic-subset atoms (`B C N O P S F Cl Br I`), their
//! aromatic lowercase forms, bracket atoms with isotope, chirality, hydrogen
//! count, charge and atom class, bond symbols `- = # : / \`, branches, ring
//! closures (`1`..`9` and `%nn`) and the `.` fragment separator.
//! Stereo marks are accepted and dropped. Hydrogens never become nodes.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const ATOM_FEATURES: usize = 31;

const ELEMENT_VOCAB: [&str; 12] = ["C", "N", "O", "S", "F", "P", "Cl", "Br", "I", "B", "Si", "Se"];
const ELEMENT_SLOTS: usize = ELEMENT_VOCAB.len() + 1;
const DEGREE_SLOTS: usize = 7;
const HCOUNT_SLOTS: usize = 5;
const CHARGE_SLOTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Contribution to an atom's valence; aromatic bonds count 1.5.
    pub fn valence(self) -> f64 {
        match self {
            BondOrder::Single => 1.0,
            BondOrder::Double => 2.0,
            BondOrder::Triple => 3.0,
            BondOrder::Aromatic => 1.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bond {
    pub i: usize,
    pub j: usize,
    pub order: BondOrder,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtomRecord {
    pub element: String,
    pub aromatic: bool,
    pub charge: i32,
    /// Attached hydrogens: the bracket count for bracket atoms, otherwise
    /// derived from the standard valence.
    pub h_count: u32,
    pub bracket: bool,
    pub isotope: Option<u32>,
    pub in_ring: bool,
    pub degree: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MolGraph {
    pub atoms: Vec<AtomRecord>,
    pub bonds: Vec<Bond>,
    pub features: Tensor,
}

impl MolGraph {
    pub fn n_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.bonds.iter().map(|b| (b.i, b.j)).collect()
    }

    pub fn total_h(&self) -> u32 {
        self.atoms.iter().map(|a| a.h_count).sum()
    }
}

fn standard_valence(element: &str) -> Option<u32> {
    Some(match element {
        "C" => 4,
        "N" => 3,
        "O" => 2,
        "S" => 2,
        "F" | "Cl" | "Br" | "I" => 1,
        "B" => 3,
        "P" => 3,
        _ => return None,
    })
}

#[derive(Debug, Clone, Copy)]
enum BondSym {
    Order(BondOrder),
    /// `/` or `\`: a single bond with stereo meaning we do not keep.
    Directional,
}

impl BondSym {
    fn order(self) -> BondOrder {
        match self {
            BondSym::Order(o) => o,
            BondSym::Directional => BondOrder::Single,
        }
    }
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
    atoms: Vec<AtomRecord>,
    bonds: Vec<Bond>,
}

struct OpenRing {
    atom: usize,
    bond: Option<BondSym>,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<u8> {
        self.s.get(self.pos).copied()
    }

    fn peek_at(&self, k: usize) -> Option<u8> {
        self.s.get(self.pos + k).copied()
    }

    fn add_bond(&mut self, a: usize, b: usize, sym: Option<BondSym>, offset: usize) -> Result<()> {
        if a == b {
            return Err(Error::parse(offset, "ring closure bonds an atom to itself"));
        }
        let (i, j) = if a < b { (a, b) } else { (b, a) };
        if self.bonds.iter().any(|x| x.i == i && x.j == j) {
            return Err(Error::parse(offset, format!("duplicate bond between atoms {i} and {j}")));
        }
        let order = match sym {
            Some(s) => s.order(),
            None if self.atoms[i].aromatic && self.atoms[j].aromatic => BondOrder::Aromatic,
            None => BondOrder::Single,
        };
        self.bonds.push(Bond { i, j, order });
        Ok(())
    }

    fn parse_bond(&mut self) -> Option<BondSym> {
        let sym = match self.peek()? {
            b'-' => BondSym::Order(BondOrder::Single),
            b'=' => BondSym::Order(BondOrder::Double),
            b'#' => BondSym::Order(BondOrder::Triple),
            b':' => BondSym::Order(BondOrder::Aromatic),
            b'/' | b'\\' => BondSym::Directional,
            _ => return None,
        };
        self.pos += 1;
        Some(sym)
    }

    fn organic_atom(&mut self) -> Option<AtomRecord> {
        let c = self.peek()?;
        let (element, aromatic, len) = match c {
            b'C' if self.peek_at(1) == Some(b'l') => ("Cl", false, 2),
            b'B' if self.peek_at(1) == Some(b'r') => ("Br", false, 2),
            b'B' => ("B", false, 1),
            b'C' => ("C", false, 1),
            b'N' => ("N", false, 1),
            b'O' => ("O", false, 1),
            b'P' => ("P", false, 1),
            b'S' => ("S", false, 1),
            b'F' => ("F", false, 1),
            b'I' => ("I", false, 1),
            b'b' => ("B", true, 1),
            b'c' => ("C", true, 1),
            b'n' => ("N", true, 1),
            b'o' => ("O", true, 1),
            b'p' => ("P", true, 1),
            b's' => ("S", true, 1),
            b'*' => ("*", false, 1),
            _ => return None,
        };
        self.pos += len;
        Some(AtomRecord {
            element: element.to_string(),
            aromatic,
            charge: 0,
            h_count: 0,
            bracket: false,
            isotope: None,
            in_ring: false,
            degree: 0,
        })
    }

    fn digits(&mut self) -> Option<u32> {
        let start = self.pos;
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
        if self.pos == start {
            None
        } else {
            std::str::from_utf8(&self.s[start..self.pos]).ok()?.parse().ok()
        }
    }

    fn bracket_atom(&mut self) -> Result<AtomRecord> {
        let open = self.pos;
        self.pos += 1;
        let isotope = self.digits();
        let sym_start = self.pos;
        let (element, aromatic) = match self.peek() {
            Some(b'*') => {
                self.pos += 1;
                ("*".to_string(), false)
            }
            Some(c) if c.is_ascii_uppercase() => {
                self.pos += 1;
                if matches!(self.peek(), Some(b'a'..=b'z')) && is_element(&self.s[sym_start..self.pos + 1]) {
                    self.pos += 1;
                }
                let sym = std::str::from_utf8(&self.s[sym_start..self.pos]).unwrap();
                if !is_element(sym.as_bytes()) {
                    return Err(Error::parse(sym_start, format!("unknown element '{sym}'")));
                }
                (sym.to_string(), false)
            }
            Some(c) if c.is_ascii_lowercase() => {
                let two = self.s.get(sym_start..sym_start + 2);
                let sym = match two {
                    Some(b"se") => "Se",
                    Some(b"as") => "As",
                    Some(b"te") => "Te",
                    _ => match c {
                        b'b' => "B",
                        b'c' => "C",
                        b'n' => "N",
                        b'o' => "O",
                        b'p' => "P",
                        b's' => "S",
                        _ => {
                            return Err(Error::parse(
                                sym_start,
                                format!("unknown aromatic symbol '{}'", c as char),
                            ))
                        }
                    },
                };
                self.pos += if sym.len() == 2 { 2 } else { 1 };
                (sym.to_string(), true)
            }
            _ => return Err(Error::parse(sym_start, "expected element symbol in bracket atom")),
        };
        // chirality
        if self.peek() == Some(b'@') {
            self.pos += 1;
            if self.peek() == Some(b'@') {
                self.pos += 1;
            }
        }
        let mut h = 0;
        if self.peek() == Some(b'H') {
            self.pos += 1;
            h = self.digits().unwrap_or(1);
        }
        let mut charge = 0i32;
        if let Some(sign @ (b'+' | b'-')) = self.peek() {
            let unit = if sign == b'+' { 1 } else { -1 };
            self.pos += 1;
            if let Some(n) = self.digits() {
                charge = unit * n as i32;
            } else {
                charge = unit;
                while self.peek() == Some(sign) {
                    self.pos += 1;
                    charge += unit;
                }
            }
        }
        if self.peek() == Some(b':') {
            self.pos += 1;
            if self.digits().is_none() {
                return Err(Error::parse(self.pos, "atom class needs digits"));
            }
        }
        match self.peek() {
            Some(b']') => self.pos += 1,
            Some(c) => {
                return Err(Error::parse(
                    self.pos,
                    format!("unexpected '{}' in bracket atom", c as char),
                ))
            }
            None => return Err(Error::parse(open, "unclosed bracket atom")),
        }
        Ok(AtomRecord {
            element,
            aromatic,
            charge,
            h_count: h,
            bracket: true,
            isotope,
            in_ring: false,
            degree: 0,
        })
    }

    fn ring_label(&mut self) -> Result<Option<u32>> {
        match self.peek() {
            Some(c @ b'0'..=b'9') => {
                self.pos += 1;
                Ok(Some((c - b'0') as u32))
            }
            Some(b'%') => {
                let at = self.pos;
                match (self.peek_at(1), self.peek_at(2)) {
                    (Some(a @ b'0'..=b'9'), Some(b @ b'0'..=b'9')) => {
                        self.pos += 3;
                        Ok(Some(((a - b'0') * 10 + (b - b'0')) as u32))
                    }
                    _ => Err(Error::parse(at, "'%' must be followed by two digits")),
                }
            }
            _ => Ok(None),
        }
    }

    fn run(&mut self) -> Result<()> {
        let mut prev: Option<usize> = None;
        let mut pending: Option<(BondSym, usize)> = None;
        let mut branches: Vec<(Option<usize>, usize)> = Vec::new();
        let mut rings: BTreeMap<u32, OpenRing> = BTreeMap::new();

        while let Some(c) = self.peek() {
            let at = self.pos;
            match c {
                b'(' => {
                    if prev.is_none() {
                        return Err(Error::parse(at, "branch before any atom"));
                    }
                    if let Some((_, boff)) = pending {
                        return Err(Error::parse(boff, "dangling bond before branch"));
                    }
                    branches.push((prev, at));
                    self.pos += 1;
                }
                b')' => {
                    if let Some((_, boff)) = pending {
                        return Err(Error::parse(boff, "dangling bond at end of branch"));
                    }
                    let (p, _) = branches
                        .pop()
                        .ok_or_else(|| Error::parse(at, "unbalanced ')'"))?;
                    if self.pos > 0 && self.s[self.pos - 1] == b'(' {
                        return Err(Error::parse(at, "empty branch"));
                    }
                    prev = p;
                    self.pos += 1;
                }
                b'.' => {
                    if let Some((_, boff)) = pending {
                        return Err(Error::parse(boff, "dangling bond before '.'"));
                    }
                    if prev.is_none() {
                        return Err(Error::parse(at, "'.' before any atom"));
                    }
                    prev = None;
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' | b':' | b'/' | b'\\' => {
                    if prev.is_none() {
                        return Err(Error::parse(at, "bond without a preceding atom"));
                    }
                    if pending.is_some() {
                        return Err(Error::parse(at, "two consecutive bond symbols"));
                    }
                    let sym = self.parse_bond().expect("bond symbol");
                    pending = Some((sym, at));
                }
                b'0'..=b'9' | b'%' => {
                    let Some(p) = prev else {
                        return Err(Error::parse(at, "ring closure without a preceding atom"));
                    };
                    let label = self.ring_label()?.expect("ring label");
                    let sym = pending.take().map(|(s, _)| s);
                    match rings.remove(&label) {
                        Some(open) => {
                            let bond = match (open.bond, sym) {
                                (Some(a), Some(b)) if a.order() != b.order() => {
                                    return Err(Error::parse(
                                        at,
                                        format!("conflicting bond symbols for ring bond {label}"),
                                    ))
                                }
                                (a, b) => a.or(b),
                            };
                            self.add_bond(open.atom, p, bond, at)?;
                        }
                        None => {
                            rings.insert(
                                label,
                                OpenRing {
                                    atom: p,
                                    bond: sym,
                                },
                            );
                        }
                    }
                }
                b'[' => {
                    let atom = self.bracket_atom()?;
                    self.attach(atom, &mut prev, &mut pending)?;
                }
                b' ' | b'\t' | b'\n' | b'\r' => {
                    return Err(Error::parse(at, "whitespace inside SMILES"));
                }
                _ => match self.organic_atom() {
                    Some(atom) => self.attach(atom, &mut prev, &mut pending)?,
                    None => {
                        let ch = std::str::from_utf8(&self.s[at..])
                            .ok()
                            .and_then(|s| s.chars().next())
                            .unwrap_or('?');
                        return Err(Error::parse(at, format!("unknown symbol '{ch}'")));
                    }
                },
            }
        }
        if let Some((_, boff)) = pending {
            return Err(Error::parse(boff, "dangling bond at end of input"));
        }
        if let Some((_, open)) = branches.last() {
            return Err(Error::parse(*open, "unbalanced '(': branch never closed"));
        }
        if let Some((label, _)) = rings.iter().next() {
            return Err(Error::parse(self.s.len(), format!("unclosed ring bond {label}")));
        }
        Ok(())
    }

    fn attach(
        &mut self,
        atom: AtomRecord,
        prev: &mut Option<usize>,
        pending: &mut Option<(BondSym, usize)>,
    ) -> Result<()> {
        let at = self.pos;
        self.atoms.push(atom);
        let idx = self.atoms.len() - 1;
        if let Some(p) = *prev {
            let sym = pending.take().map(|(s, _)| s);
            self.add_bond(p, idx, sym, at)?;
        }
        *prev = Some(idx);
        Ok(())
    }
}

fn is_element(sym: &[u8]) -> bool {
    const ELEMENTS: &[&str] = &[
        "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S",
        "Cl", "Ar", "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga",
        "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd",
        "Ag", "Cd", "In", "Sn", "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm",
        "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W", "Re", "Os",
        "Ir", "Pt", "Au", "Hg", "Tl", "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa",
        "U", "Np", "Pu", "Am", "Cm", "Bk", "Cf", "Es", "Fm", "Md", "No", "Lr",
    ];
    std::str::from_utf8(sym).is_ok_and(|s| ELEMENTS.contains(&s))
}

/// Marks atoms that sit on a cycle: an atom is in a ring iff one of its
/// bonds is not a bridge.
fn mark_rings(atoms: &mut [AtomRecord], bonds: &[Bond]) {
    let n = atoms.len();
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (e, b) in bonds.iter().enumerate() {
        adj[b.i].push((b.j, e));
        adj[b.j].push((b.i, e));
    }
    // Iterative Tarjan bridge finding.
    let mut disc = vec![usize::MAX; n];
    let mut low = vec![0; n];
    let mut is_bridge = vec![false; bonds.len()];
    let mut time = 0;
    for root in 0..n {
        if disc[root] != usize::MAX {
            continue;
        }
        let mut stack: Vec<(usize, usize, usize)> = vec![(root, usize::MAX, 0)];
        disc[root] = time;
        low[root] = time;
        time += 1;
        while let Some(&mut (u, parent_edge, ref mut next)) = stack.last_mut() {
            if *next < adj[u].len() {
                let (v, e) = adj[u][*next];
                *next += 1;
                if e == parent_edge {
                    continue;
                }
                if disc[v] == usize::MAX {
                    disc[v] = time;
                    low[v] = time;
                    time += 1;
                    stack.push((v, e, 0));
                } else {
                    low[u] = low[u].min(disc[v]);
                }
            } else {
                stack.pop();
                if let Some(&(p, _, _)) = stack.last() {
                    low[p] = low[p].min(low[u]);
                    if low[u] > disc[p] {
                        is_bridge[parent_edge] = true;
                    }
                }
            }
        }
    }
    for (b, bridge) in bonds.iter().zip(is_bridge) {
        if !bridge {
            atoms[b.i].in_ring = true;
            atoms[b.j].in_ring = true;
        }
    }
}

/// Parses a SMILES string. Atom order follows token order.
pub fn parse_smiles(s: &str) -> Result<MolGraph> {
    if s.is_empty() {
        return Err(Error::parse(0, "empty SMILES"));
    }
    if !s.is_ascii() {
        let off = s.char_indices().find(|(_, c)| !c.is_ascii()).map_or(0, |(i, _)| i);
        return Err(Error::parse(off, "non-ASCII character"));
    }
    let mut p = Parser {
        s: s.as_bytes(),
        pos: 0,
        atoms: Vec::new(),
        bonds: Vec::new(),
    };
    p.run()?;
    let Parser {
        mut atoms,
        mut bonds,
        ..
    } = p;
    bonds.sort_by_key(|b| (b.i, b.j));
    let mut valence = vec![0.0; atoms.len()];
    for b in &bonds {
        atoms[b.i].degree += 1;
        atoms[b.j].degree += 1;
        valence[b.i] += b.order.valence();
        valence[b.j] += b.order.valence();
    }
    for (a, &v) in atoms.iter_mut().zip(&valence) {
        if !a.bracket {
            a.h_count = standard_valence(&a.element)
                .map_or(0, |std| (std as f64 - v).floor().max(0.0) as u32);
        }
    }
    mark_rings(&mut atoms, &bonds);
    let features = featurize_atoms(&atoms);
    Ok(MolGraph {
        atoms,
        bonds,
        features,
    })
}

/// Fixed 31-wide atom encoding: element (13) ∥ degree 0–6 (7) ∥ H count 0–4
/// (5) ∥ formal charge −2..2 (5) ∥ aromatic flag (1).
pub fn featurize_atoms(atoms: &[AtomRecord]) -> Tensor {
    let mut data = vec![0.0; atoms.len() * ATOM_FEATURES];
    for (r, a) in atoms.iter().enumerate() {
        let row = &mut data[r * ATOM_FEATURES..(r + 1) * ATOM_FEATURES];
        let el = ELEMENT_VOCAB
            .iter()
            .position(|&e| e == a.element)
            .unwrap_or(ELEMENT_VOCAB.len());
        row[el] = 1.0;
        let mut off = ELEMENT_SLOTS;
        row[off + a.degree.min(DEGREE_SLOTS - 1)] = 1.0;
        off += DEGREE_SLOTS;
        row[off + (a.h_count as usize).min(HCOUNT_SLOTS - 1)] = 1.0;
        off += HCOUNT_SLOTS;
        row[off + (a.charge.clamp(-2, 2) + 2) as usize] = 1.0;
        off += CHARGE_SLOTS;
        row[off] = if a.aromatic { 1.0 } else { 0.0 };
    }
    Tensor::new(vec![atoms.len(), ATOM_FEATURES], data).expect("feature shape")
}

/// Offsets of the one-hot blocks inside an atom feature row.
pub fn feature_blocks() -> [(usize, usize); 4] {
    let e = ELEMENT_SLOTS;
    let d = e + DEGREE_SLOTS;
    let h = d + HCOUNT_SLOTS;
    let c = h + CHARGE_SLOTS;
    [(0, e), (e, d), (d, h), (h, c)]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bond_set(g: &MolGraph) -> Vec<(usize, usize, BondOrder)> {
        g.bonds.iter().map(|b| (b.i, b.j, b.order)).collect()
    }

    #[test]
    fn ethanol() {
        let g = parse_smiles("CCO").unwrap();
        let els: Vec<_> = g.atoms.iter().map(|a| a.element.as_str()).collect();
        assert_eq!(els, ["C", "C", "O"]);
        assert_eq!(
            bond_set(&g),
            vec![(0, 1, BondOrder::Single), (1, 2, BondOrder::Single)]
        );
    }

    #[test]
    fn cyclopropane_ring_closure() {
        let g = parse_smiles("C1CC1").unwrap();
        assert_eq!(g.n_atoms(), 3);
        assert_eq!(g.edges(), vec![(0, 1), (0, 2), (1, 2)]);
        assert!(g.bonds.iter().all(|b| b.order == BondOrder::Single));
        assert!(g.atoms.iter().all(|a| a.in_ring));
    }

    #[test]
    fn benzene_is_aromatic() {
        let g = parse_smiles("c1ccccc1").unwrap();
        assert_eq!(g.n_atoms(), 6);
        assert_eq!(g.bonds.len(), 6);
        assert!(g.bonds.iter().all(|b| b.order == BondOrder::Aromatic));
        assert!(g.atoms.iter().all(|a| a.aromatic && a.h_count == 1));
    }

    #[test]
    fn unclosed_ring_reports_end_offset() {
        let err = parse_smiles("C1CC").unwrap_err();
        assert_eq!(
            err,
            Error::Parse {
                offset: 4,
                message: "unclosed ring bond 1".into()
            }
        );
    }

    #[test]
    fn grammar_errors_carry_offsets() {
        let cases = [
            ("CC)", 2),
            ("C(C", 1),
            ("CC=", 2),
            ("C(=)C", 2),
            ("CQ", 1),
            ("=C", 0),
            ("C[Xx]", 2),
            ("C[C", 1),
            ("C.=C", 2),
        ];
        for (s, off) in cases {
            match parse_smiles(s) {
                Err(Error::Parse { offset, .. }) => assert_eq!(offset, off, "{s}"),
                other => panic!("{s}: expected parse error, got {other:?}"),
            }
        }
    }

    #[test]
    fn bracket_atoms() {
        let g = parse_smiles("[13CH4]").unwrap();
        assert_eq!(g.atoms[0].isotope, Some(13));
        assert_eq!(g.atoms[0].h_count, 4);
        assert_eq!(g.atoms[0].degree, 0);
        let g = parse_smiles("C[N+](C)(C)C").unwrap();
        assert_eq!(g.atoms[1].charge, 1);
        assert_eq!(g.atoms[1].degree, 4);
        let g = parse_smiles("[O--]").unwrap();
        assert_eq!(g.atoms[0].charge, -2);
        let g = parse_smiles("[Fe+3]").unwrap();
        assert_eq!(g.atoms[0].charge, 3);
        let g = parse_smiles("[nH]1cccc1").unwrap();
        assert!(g.atoms[0].aromatic);
        assert_eq!(g.atoms[0].h_count, 1);
        let g = parse_smiles("[se]1cccc1").unwrap();
        assert_eq!(g.atoms[0].element, "Se");
        let g = parse_smiles("[CH3:1]C").unwrap();
        assert_eq!(g.atoms[0].h_count, 3);
    }

    #[test]
    fn stereo_marks_are_dropped() {
        let a = parse_smiles("F/C=C\\F").unwrap();
        let b = parse_smiles("FC=CF").unwrap();
        assert_eq!(a, b);
        let c = parse_smiles("N[C@@H](C)C(=O)O").unwrap();
        assert_eq!(c.n_atoms(), 6);
    }

    #[test]
    fn percent_ring_labels() {
        let g = parse_smiles("C%10CCCCC%10").unwrap();
        assert_eq!(g.bonds.len(), 6);
    }

    #[test]
    fn ring_closure_bond_symbols() {
        let g = parse_smiles("C=1CC1").unwrap();
        assert!(g.bonds.contains(&Bond {
            i: 0,
            j: 2,
            order: BondOrder::Double
        }));
        assert!(parse_smiles("C=1CC#1").is_err());
        assert!(parse_smiles("C11").is_err());
    }

    #[test]
    fn fragments_are_disconnected() {
        let g = parse_smiles("[Na+].[Cl-]").unwrap();
        assert_eq!(g.n_atoms(), 2);
        assert!(g.bonds.is_empty());
    }

    #[test]
    fn ring_flags() {
        let g = parse_smiles("CC1CC1C").unwrap();
        let flags: Vec<_> = g.atoms.iter().map(|a| a.in_ring).collect();
        assert_eq!(flags, [false, true, true, true, false]);
    }

    #[test]
    fn hydroxyl_oxygen_features() {
        let g = parse_smiles("CCO").unwrap();
        let row = g.features.row(2);
        let [el, deg, hc, ch] = feature_blocks();
        assert_eq!(row[el.0 + 2], 1.0); // O
        assert_eq!(row[deg.0 + 1], 1.0);
        assert_eq!(row[hc.0 + 1], 1.0);
        assert_eq!(row[ch.0 + 2], 1.0); // charge 0
        assert_eq!(row[ATOM_FEATURES - 1], 0.0);
    }

    #[test]
    fn methane_bracket_features() {
        let g = parse_smiles("[CH4]").unwrap();
        let row = g.features.row(0);
        let [_, deg, hc, _] = feature_blocks();
        assert_eq!(row[deg.0], 1.0);
        assert_eq!(row[hc.0 + 4], 1.0);
    }

    #[test]
    fn unknown_element_maps_to_other() {
        let g = parse_smiles("[Fe]").unwrap();
        assert_eq!(g.features.row(0)[ELEMENT_VOCAB.len()], 1.0);
    }

    #[test]
    fn each_block_has_one_bit() {
        let g = parse_smiles("CN1CCN(CC1)c1ccc(cc1)Nc1ncc(c(n1)-c1cccnc1)C").unwrap();
        for r in 0..g.n_atoms() {
            let row = g.features.row(r);
            for (a, b) in feature_blocks() {
                assert_eq!(row[a..b].iter().sum::<f64>(), 1.0);
            }
            assert!(row[ATOM_FEATURES - 1] == 0.0 || row[ATOM_FEATURES - 1] == 1.0);
        }
    }
}
