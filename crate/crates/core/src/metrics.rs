//! Training losses and evaluation metrics.

use std::fmt::Write as _;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::prompt::Prompts;
use crate::tensor::Tensor;

/// Mean squared error between a `n × 1` prediction column and labels.
pub fn mse_loss(tape: &mut Tape, preds: Var, labels: &[f64]) -> Result<Var> {
    let n = tape.shape(preds)[0];
    if n == 0 || labels.is_empty() {
        return Err(Error::Contract("mse over an empty batch".into()));
    }
    if n != labels.len() || tape.shape(preds)[1] != 1 {
        return Err(Error::Dimension(format!(
            "predictions {:?} vs {} labels",
            tape.shape(preds),
            labels.len()
        )));
    }
    let y = tape.constant(Tensor::new(vec![n, 1], labels.to_vec())?);
    let diff = tape.sub(preds, y)?;
    let sq = tape.mul(diff, diff)?;
    tape.mean(sq)
}

/// Batch mean of `(‖p_d‖² + ‖p_t‖² + ‖p_pair‖²) / 3`.
pub fn prompt_loss(tape: &mut Tape, prompts: &Prompts) -> Result<Var> {
    let batch = tape.shape(prompts.drug)[0];
    if batch == 0 {
        return Err(Error::Contract("prompt loss over an empty batch".into()));
    }
    let mut total = None;
    for p in [prompts.drug, prompts.target, prompts.pair] {
        let sq = tape.mul(p, p)?;
        let s = tape.sum(sq)?;
        total = Some(match total {
            None => s,
            Some(t) => tape.add(t, s)?,
        });
    }
    Ok(tape.scale(total.expect("three prompts"), 1.0 / (3.0 * batch as f64)))
}

pub fn total_loss(tape: &mut Tape, mse: Var, prompt: Var, alpha: f64) -> Result<Var> {
    if alpha.is_nan() || alpha < 0.0 {
        return Err(Error::Config(format!("alpha must be non-negative, got {alpha}")));
    }
    let weighted = tape.scale(prompt, alpha);
    tape.add(mse, weighted)
}

fn check_pair(labels: &[f64], preds: &[f64]) -> Result<()> {
    if labels.len() != preds.len() {
        return Err(Error::Dimension(format!(
            "{} labels vs {} predictions",
            labels.len(),
            preds.len()
        )));
    }
    if labels.len() < 2 {
        return Err(Error::Undefined("metric needs at least two samples".into()));
    }
    Ok(())
}

/// Concordant-pair tally: `twice_score` counts 2 per concordant pair and 1
/// per prediction tie, over `comparable` pairs with distinct labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConcordanceCounts {
    pub twice_score: u64,
    pub comparable: u64,
}

impl ConcordanceCounts {
    pub fn index(self) -> Result<f64> {
        if self.comparable == 0 {
            return Err(Error::Undefined("concordance index: all labels are equal".into()));
        }
        Ok(self.twice_score as f64 / (2 * self.comparable) as f64)
    }
}

/// Quadratic pair enumeration.
pub fn concordance_counts_pairwise(labels: &[f64], preds: &[f64]) -> ConcordanceCounts {
    let mut c = ConcordanceCounts {
        twice_score: 0,
        comparable: 0,
    };
    for i in 0..labels.len() {
        for j in 0..labels.len() {
            if labels[i] > labels[j] {
                c.comparable += 1;
                if preds[i] > preds[j] {
                    c.twice_score += 2;
                } else if preds[i] == preds[j] {
                    c.twice_score += 1;
                }
            }
        }
    }
    c
}

/// `O(n log n)` tally: sweep labels in increasing order, querying a Fenwick
/// tree over prediction ranks of all strictly smaller labels.
pub fn concordance_counts_sorted(labels: &[f64], preds: &[f64]) -> ConcordanceCounts {
    let n = labels.len();
    let mut sorted_preds: Vec<f64> = preds.to_vec();
    sorted_preds.sort_by(f64::total_cmp);
    sorted_preds.dedup();
    let rank = |p: f64| sorted_preds.partition_point(|&q| q < p);
    let mut tree = vec![0u64; sorted_preds.len() + 1];
    let prefix = |tree: &[u64], mut i: usize| {
        let mut s = 0;
        while i > 0 {
            s += tree[i];
            i &= i - 1;
        }
        s
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| labels[a].total_cmp(&labels[b]));
    let mut c = ConcordanceCounts {
        twice_score: 0,
        comparable: 0,
    };
    let mut inserted = 0u64;
    let mut start = 0;
    while start < n {
        let mut end = start;
        while end < n && labels[order[end]] == labels[order[start]] {
            end += 1;
        }
        for &i in &order[start..end] {
            let r = rank(preds[i]);
            let below = prefix(&tree, r);
            let ties = prefix(&tree, r + 1) - below;
            c.comparable += inserted;
            c.twice_score += 2 * below + ties;
        }
        for &i in &order[start..end] {
            let mut k = rank(preds[i]) + 1;
            while k < tree.len() {
                tree[k] += 1;
                k += k & k.wrapping_neg();
            }
            inserted += 1;
        }
        start = end;
    }
    c
}

/// Fraction of label-ordered pairs ranked in the same order by the
/// predictions, ties in prediction scoring one half.
pub fn concordance_index(labels: &[f64], preds: &[f64]) -> Result<f64> {
    check_pair(labels, preds)?;
    concordance_counts_sorted(labels, preds).index()
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn pearson(labels: &[f64], preds: &[f64]) -> Result<f64> {
    check_pair(labels, preds)?;
    let (my, mp) = (mean(labels), mean(preds));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (y, p) in labels.iter().zip(preds) {
        let (dy, dp) = (y - my, p - mp);
        sxy += dy * dp;
        syy += dy * dy;
        sxx += dp * dp;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("pearson correlation with zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// `r²(1 − √|r² − r₀²|)` with `r₀²` from the through-origin fit of labels on
/// predictions.
pub fn r2m(labels: &[f64], preds: &[f64]) -> Result<f64> {
    let r = pearson(labels, preds)?;
    let r2 = r * r;
    let spp: f64 = preds.iter().map(|p| p * p).sum();
    if spp == 0.0 {
        return Err(Error::Undefined("r2m with all-zero predictions".into()));
    }
    let k = labels.iter().zip(preds).map(|(y, p)| y * p).sum::<f64>() / spp;
    let my = mean(labels);
    let ss_res: f64 = labels.iter().zip(preds).map(|(y, p)| (y - k * p).powi(2)).sum();
    let ss_tot: f64 = labels.iter().map(|y| (y - my).powi(2)).sum();
    let r02 = 1.0 - ss_res / ss_tot;
    Ok(r2 * (1.0 - (r2 - r02).abs().sqrt()))
}

pub fn mse(labels: &[f64], preds: &[f64]) -> Result<f64> {
    if labels.is_empty() || labels.len() != preds.len() {
        return Err(Error::Contract(format!(
            "mse needs equal non-empty inputs, got {} and {}",
            labels.len(),
            preds.len()
        )));
    }
    Ok(labels.iter().zip(preds).map(|(y, p)| (y - p).powi(2)).sum::<f64>() / labels.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ablation {
    pub dp: bool,
    pub gcn: bool,
    pub trans: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation {
            dp: true,
            gcn: true,
            trans: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mse: f64,
    pub ci: f64,
    pub r2m: f64,
    pub pearson: f64,
    pub n_samples: usize,
    pub ablation: Ablation,
}

impl EvalReport {
    pub fn compute(labels: &[f64], preds: &[f64], ablation: Ablation) -> Result<Self> {
        let report = EvalReport {
            mse: mse(labels, preds)?,
            ci: concordance_index(labels, preds)?,
            r2m: r2m(labels, preds)?,
            pearson: pearson(labels, preds)?,
            n_samples: labels.len(),
            ablation,
        };
        report.check()?;
        Ok(report)
    }

    pub fn check(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.ci)
            && (-1.0..=1.0).contains(&self.pearson)
            && self.mse >= 0.0
            && self.r2m <= self.pearson * self.pearson + 1e-12;
        if ok {
            Ok(())
        } else {
            Err(Error::Contract(format!("evaluation report out of range: {self:?}")))
        }
    }

    fn fields(&self) -> Vec<(&'static str, String)> {
        vec![
            ("n_samples", self.n_samples.to_string()),
            ("mse", format!("{:.6}", self.mse)),
            ("ci", format!("{:.6}", self.ci)),
            ("r2m", format!("{:.6}", self.r2m)),
            ("pearson", format!("{:.6}", self.pearson)),
            ("dp", self.ablation.dp.to_string()),
            ("gcn", self.ablation.gcn.to_string()),
            ("trans", self.ablation.trans.to_string()),
        ]
    }

    /// One `key = value` per line.
    pub fn to_block(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.fields() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Single tab-separated `key=value` line.
    pub fn to_record(&self) -> String {
        self.fields()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join("\t")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, random_tensor};
    use crate::prompt::zero_prompts;

    #[test]
    fn mse_examples() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::new(vec![2, 1], vec![1.0, 2.0]).unwrap());
        let l = mse_loss(&mut tape, p, &[1.0, 4.0]).unwrap();
        assert_eq!(tape.value(l).item(), 2.0);
        let l = mse_loss(&mut tape, p, &[1.0, 2.0]).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);
        let empty = tape.constant(Tensor::zeros(&[0, 1]));
        assert!(matches!(mse_loss(&mut tape, empty, &[]), Err(Error::Contract(_))));
    }

    #[test]
    fn mse_gradient_matches_formula_and_differences() {
        let labels = [0.3, -1.2, 2.0, 0.7];
        let x = random_tensor(3, 4, 1);
        let mut tape = Tape::new();
        let p = tape.param(x.clone());
        let l = mse_loss(&mut tape, p, &labels).unwrap();
        tape.backward(l).unwrap();
        let g = tape.grad(p);
        for ((gi, xi), yi) in g.data().iter().zip(x.data()).zip(&labels) {
            assert!((gi - 2.0 * (xi - yi) / 4.0).abs() < 1e-15);
        }
        let err = grad_check(|t, v| mse_loss(t, v, &labels), &x, 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn prompt_loss_examples() {
        let mut tape = Tape::new();
        let z = zero_prompts(&mut tape, 2, 4);
        let l = prompt_loss(&mut tape, &z).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);

        let mut one = vec![0.0; 128];
        one[0] = 1.0;
        let mut p = zero_prompts(&mut tape, 1, 128);
        p.drug = tape.constant(Tensor::row_vector(&one));
        let l = prompt_loss(&mut tape, &p).unwrap();
        assert!((tape.value(l).item() - 1.0 / 3.0).abs() < 1e-15);

        let base = Prompts {
            drug: tape.constant(random_tensor(1, 3, 4)),
            target: tape.constant(random_tensor(2, 3, 4)),
            pair: tape.constant(random_tensor(3, 3, 4)),
        };
        let scaled = Prompts {
            drug: tape.scale(base.drug, 3.0),
            target: tape.scale(base.target, 3.0),
            pair: tape.scale(base.pair, 3.0),
        };
        let a = prompt_loss(&mut tape, &base).unwrap();
        let b = prompt_loss(&mut tape, &scaled).unwrap();
        assert!((tape.value(b).item() - 9.0 * tape.value(a).item()).abs() < 1e-12);
    }

    #[test]
    fn total_loss_examples() {
        let mut tape = Tape::new();
        let m = tape.constant(Tensor::scalar(2.0));
        let p = tape.constant(Tensor::scalar(1.0));
        let t = total_loss(&mut tape, m, p, 0.2).unwrap();
        assert!((tape.value(t).item() - 2.2).abs() < 1e-15);
        let t = total_loss(&mut tape, m, p, 0.0).unwrap();
        assert_eq!(tape.value(t).item(), 2.0);
        assert!(total_loss(&mut tape, m, p, -1.0).is_err());
    }

    #[test]
    fn ci_examples() {
        assert_eq!(concordance_index(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(concordance_index(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap(), 1.0 / 3.0);
        assert_eq!(concordance_index(&[1.0, 2.0], &[5.0, 5.0]).unwrap(), 0.5);
        assert!(matches!(concordance_index(&[2.0, 2.0], &[1.0, 3.0]), Err(Error::Undefined(_))));
    }

    #[test]
    fn ci_fast_path_matches_pairwise_with_ties() {
        for seed in 0..50 {
            let n = 2 + seed as usize % 40;
            let y: Vec<f64> = random_tensor(seed, n, 1).data().iter().map(|v| (v * 3.0).round()).collect();
            let p: Vec<f64> = random_tensor(seed + 1000, n, 1).data().iter().map(|v| (v * 4.0).round()).collect();
            assert_eq!(concordance_counts_sorted(&y, &p), concordance_counts_pairwise(&y, &p));
        }
    }

    #[test]
    fn pearson_and_r2m_examples() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[-1.0, -2.0, -3.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(pearson(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::Undefined(_))));
        assert!((r2m(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((r2m(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn report_formats() {
        let r = EvalReport::compute(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], Ablation::default()).unwrap();
        assert_eq!(r.mse, 0.0);
        assert!(r.to_block().contains("ci = 1.000000\n"));
        assert!(!r.to_record().contains('\n'));
        assert!(r.to_record().contains("trans=true"));
    }
}
