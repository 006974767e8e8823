//! Small deterministic datasets for tests, demos and the CLI `--fixture`
//! option.

use crate::data::{DtaDataset, Provenance, Sample, Split};
use crate::rng;

pub const FIXTURE_SMILES: [&str; 8] = [
    "CCO",
    "c1ccccc1O",
    "CC(=O)Nc1ccc(O)cc1",
    "CN1CCC[C@H]1c1cccnc1",
    "OC(=O)c1ccccc1OC(C)=O",
    "Cc1ccc(cc1)S(=O)(=O)N",
    "C1CCNCC1",
    "NC(=O)c1cnccc1",
];

pub const FIXTURE_SEQUENCES: [&str; 4] = [
    "MKTAYIAKQRQISFVKSHFSRQ",
    "MSTNPKPQRKTKRNTNRRPQDVKFPGG",
    "MGLSDGEWQLVLNVWGKVEAD",
    "MHHHHHHSSGVDLGTENLYFQS",
];

/// Drug effect + target effect + a smaller pair-specific term, rounded to
/// two decimals; always inside `[5, 9]`.
fn label(seed: u64, i: usize, j: usize) -> f64 {
    let drug = rng::uniform_at(&[seed, 0xD, i as u64]);
    let target = rng::uniform_at(&[seed, 0x7, j as u64]);
    let pair = rng::uniform_at(&[seed, 0xF1C5, i as u64, j as u64]);
    (500.0 + 200.0 * drug + 120.0 * target + 80.0 * pair).round() / 100.0
}

/// Every pair of the first `n_drugs` molecules and `n_targets` proteins,
/// with labels in `[5, 9]`. Pairs whose flat index is listed in `test` go
/// to the test split.
pub fn synthetic(n_drugs: usize, n_targets: usize, test: &[usize], seed: u64) -> DtaDataset {
    assert!(n_drugs <= FIXTURE_SMILES.len() && n_targets <= FIXTURE_SEQUENCES.len());
    let mut ds = DtaDataset {
        provenance: Provenance {
            source: "synthetic".into(),
            params: vec![("seed".into(), seed.to_string())],
        },
        ..Default::default()
    };
    for (i, smi) in FIXTURE_SMILES.iter().take(n_drugs).enumerate() {
        ds.add_drug(&format!("drug{i}"), smi).expect("fresh id");
    }
    for (j, seq) in FIXTURE_SEQUENCES.iter().take(n_targets).enumerate() {
        ds.add_target(&format!("target{j}"), seq, None).expect("fresh id");
    }
    for i in 0..n_drugs {
        for j in 0..n_targets {
            let k = i * n_targets + j;
            ds.samples.push(Sample {
                drug: format!("drug{i}"),
                target: format!("target{j}"),
                affinity: label(seed, i, j),
                split: if test.contains(&k) { Split::Test } else { Split::Train },
            });
        }
    }
    ds
}

/// 8 drugs × 4 targets, all training pairs.
pub fn overfit_fixture() -> DtaDataset {
    synthetic(8, 4, &[], 7)
}

/// 2 drugs × 2 targets with the last pair held out.
pub fn four_pair_fixture() -> DtaDataset {
    synthetic(2, 2, &[3], 7)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smiles::parse_smiles;

    #[test]
    fn fixtures_are_valid() {
        let ds = overfit_fixture();
        ds.validate().unwrap();
        assert_eq!(ds.samples.len(), 32);
        for smi in FIXTURE_SMILES {
            parse_smiles(smi).unwrap();
        }
        let four = four_pair_fixture();
        assert_eq!((four.drugs.len(), four.targets.len(), four.samples.len()), (2, 2, 4));
        assert_eq!(four.count(Split::Test), 1);
        assert!(ds.samples.iter().all(|s| (5.0..=9.0).contains(&s.affinity)));
    }
}
