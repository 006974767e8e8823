//! Run configuration: `key = value` files with `#` comments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::Ablation;
use crate::model::ModelConfig;
use crate::protein::{ContactDirection, ContactOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub embed_dim: usize,
    pub alpha: f64,
    /// Accepted for compatibility; nothing consumes it.
    pub beta: f64,
    /// Accepted for compatibility; nothing consumes it.
    pub tau: f64,
    pub threshold_p: f64,
    pub seed: u64,
    pub ablation: Ablation,
    /// Evaluate on the test split every this many epochs (0 disables).
    pub eval_every: usize,
    pub clip_norm: f64,
    /// Fraction of training samples kept (seeded).
    pub subsample: f64,
    pub max_seq_len: usize,
    pub contact: ContactOptions,
    pub n_heads: usize,
    pub d_ff: usize,
    pub n_blocks: usize,
    pub head_hidden: [usize; 2],
    pub dropout: f64,
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        TrainConfig {
            lr: 5e-4,
            batch_size: 512,
            epochs: 2000,
            embed_dim: 128,
            alpha: 0.2,
            beta: 0.2,
            tau: 0.5,
            threshold_p: 6.0,
            seed: 0,
            ablation: Ablation::default(),
            eval_every: 0,
            clip_norm: 5.0,
            subsample: 1.0,
            max_seq_len: m.max_seq_len,
            contact: ContactOptions::default(),
            n_heads: m.n_heads,
            d_ff: m.d_ff,
            n_blocks: m.n_blocks,
            head_hidden: m.head_hidden,
            dropout: m.head_dropout,
            checkpoint_path: None,
        }
    }
}

impl TrainConfig {
    /// Small profile for a single desktop core.
    pub fn desk() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 64,
            subsample: 0.05,
            ..Self::default()
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            embed_dim: self.embed_dim,
            ablation: self.ablation,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            n_blocks: self.n_blocks,
            max_seq_len: self.max_seq_len,
            head_hidden: self.head_hidden,
            head_dropout: self.dropout,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.alpha.is_nan() || self.alpha < 0.0 {
            return Err(Error::Config(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        if !self.threshold_p.is_finite() {
            return Err(Error::Config("threshold_p must be finite".into()));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        if !self.ablation.gcn {
            return Err(Error::Config(
                "gcn = false is not a supported configuration; the graph encoders are always on".into(),
            ));
        }
        self.model_config().validate().map_err(|e| Error::Config(e.to_string()))
    }

    /// Canonical `key = value` text for every field.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("lr", format!("{:e}", self.lr)),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("alpha", self.alpha.to_string()),
            ("beta", self.beta.to_string()),
            ("tau", self.tau.to_string()),
            ("threshold_p", self.threshold_p.to_string()),
            ("seed", self.seed.to_string()),
            ("dp", self.ablation.dp.to_string()),
            ("gcn", self.ablation.gcn.to_string()),
            ("trans", self.ablation.trans.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("clip_norm", self.clip_norm.to_string()),
            ("subsample", self.subsample.to_string()),
            ("max_seq_len", self.max_seq_len.to_string()),
            ("contact_threshold", self.contact.threshold.to_string()),
            (
                "contact_direction",
                match self.contact.direction {
                    ContactDirection::AtLeast => "at_least".into(),
                    ContactDirection::AtMost => "at_most".into(),
                },
            ),
            ("contact_window", self.contact.window.to_string()),
            ("n_heads", self.n_heads.to_string()),
            ("d_ff", self.d_ff.to_string()),
            ("n_blocks", self.n_blocks.to_string()),
            ("head_hidden", format!("{},{}", self.head_hidden[0], self.head_hidden[1])),
            ("dropout", self.dropout.to_string()),
        ]
    }

    /// SHA-256 over everything that shapes the trained parameters except the
    /// epoch budget and reporting cadence, so a resumed run with more epochs
    /// still matches.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for (k, v) in self.entries() {
            if k != "epochs" && k != "eval_every" {
                h.update(format!("{k}={v}\n").as_bytes());
            }
        }
        h.finalize().into()
    }
}

/// Training configuration plus file locations.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub report: Option<PathBuf>,
    /// Informational messages produced while loading (unused keys and so on).
    pub notices: Vec<String>,
}

fn parse_value<T: std::str::FromStr>(key: &str, v: &str, expected: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("key '{key}': expected {expected}, got '{v}'")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("key '{key}': expected a boolean, got '{v}'"))),
    }
}

/// Parses configuration text. Relative paths resolve against `base`.
pub fn parse_config(text: &str, base: Option<&Path>) -> Result<RunConfig> {
    let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", i + 1)))?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if entries.insert(k.clone(), (i + 1, v)).is_some() {
            return Err(Error::Config(format!("line {}: key '{k}' given twice", i + 1)));
        }
    }
    let mut cfg = RunConfig::default();
    if let Some((_, profile)) = entries.remove("profile") {
        cfg.train = match profile.as_str() {
            "full" => TrainConfig::default(),
            "desk" => TrainConfig::desk(),
            other => return Err(Error::Config(format!("key 'profile': unknown profile '{other}'"))),
        };
    }
    let resolve = |v: &str| -> PathBuf {
        match base {
            Some(b) => b.join(v),
            None => PathBuf::from(v),
        }
    };
    let t = &mut cfg.train;
    for (key, (_, v)) in &entries {
        let k = key.as_str();
        let v = v.as_str();
        match k {
            "lr" => t.lr = parse_value(k, v, "a float")?,
            "batch_size" => t.batch_size = parse_value(k, v, "an unsigned integer")?,
            "epochs" => t.epochs = parse_value(k, v, "an unsigned integer")?,
            "embed_dim" => t.embed_dim = parse_value(k, v, "an unsigned integer")?,
            "alpha" => t.alpha = parse_value(k, v, "a float")?,
            "beta" => {
                t.beta = parse_value(k, v, "a float")?;
                cfg.notices.push("beta is recorded but unused by the model".into());
            }
            "tau" => {
                t.tau = parse_value(k, v, "a float")?;
                cfg.notices.push("tau is recorded but unused by the model".into());
            }
            "threshold_p" => t.threshold_p = parse_value(k, v, "a float")?,
            "seed" => t.seed = parse_value(k, v, "an unsigned integer")?,
            "dp" => t.ablation.dp = parse_bool(k, v)?,
            "gcn" => t.ablation.gcn = parse_bool(k, v)?,
            "trans" => t.ablation.trans = parse_bool(k, v)?,
            "eval_every" => t.eval_every = parse_value(k, v, "an unsigned integer")?,
            "clip_norm" => t.clip_norm = parse_value(k, v, "a float")?,
            "subsample" => t.subsample = parse_value(k, v, "a float")?,
            "max_seq_len" => t.max_seq_len = parse_value(k, v, "an unsigned integer")?,
            "contact_threshold" => t.contact.threshold = parse_value(k, v, "a float")?,
            "contact_window" => t.contact.window = parse_value(k, v, "an unsigned integer")?,
            "contact_direction" => {
                t.contact.direction = match v {
                    "at_least" => ContactDirection::AtLeast,
                    "at_most" => ContactDirection::AtMost,
                    _ => {
                        return Err(Error::Config(format!(
                            "key 'contact_direction': expected at_least or at_most, got '{v}'"
                        )))
                    }
                }
            }
            "n_heads" => t.n_heads = parse_value(k, v, "an unsigned integer")?,
            "d_ff" => t.d_ff = parse_value(k, v, "an unsigned integer")?,
            "n_blocks" => t.n_blocks = parse_value(k, v, "an unsigned integer")?,
            "head_hidden" => {
                let parts: Vec<usize> = v
                    .split(',')
                    .map(|p| parse_value(k, p.trim(), "two comma-separated integers"))
                    .collect::<Result<_>>()?;
                t.head_hidden = parts
                    .try_into()
                    .map_err(|_| Error::Config(format!("key '{k}': expected two comma-separated integers")))?;
            }
            "dropout" => t.dropout = parse_value(k, v, "a float")?,
            "checkpoint" => t.checkpoint_path = Some(resolve(v)),
            "data" => {
                let p = resolve(v);
                if !p.exists() {
                    return Err(Error::Config(format!("key 'data': {} does not exist", p.display())));
                }
                cfg.data = Some(p);
            }
            "out_dir" => cfg.out_dir = Some(resolve(v)),
            "report" => cfg.report = Some(resolve(v)),
            _ => return Err(Error::Config(format!("unknown key '{k}'"))),
        }
    }
    cfg.train.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text, path.parent())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_full_defaults() {
        let c = parse_config("", None).unwrap().train;
        assert_eq!((c.lr, c.batch_size, c.epochs, c.embed_dim, c.alpha), (5e-4, 512, 2000, 128, 0.2));
        assert_eq!(c.threshold_p, 6.0);
        assert_eq!(c.ablation, Ablation::default());
    }

    #[test]
    fn keys_and_comments() {
        let c = parse_config("# kiba run\nthreshold_p = 11   # scores\ntrans=false\n", None).unwrap();
        assert_eq!(c.train.threshold_p, 11.0);
        assert!(!c.train.ablation.trans);
    }

    #[test]
    fn rejections() {
        assert!(matches!(parse_config("gcn = false", None), Err(Error::Config(_))));
        let err = parse_config("lr = fast", None).unwrap_err().to_string();
        assert!(err.contains("'lr'") && err.contains("float"), "{err}");
        assert!(parse_config("learning_rate = 1", None).unwrap_err().to_string().contains("unknown key"));
        assert!(parse_config("lr = 1\nlr = 2", None).is_err());
        assert!(parse_config("batch_size = 0", None).is_err());
        assert!(parse_config("data = /definitely/not/here.tsv", None).is_err());
    }

    #[test]
    fn unused_keys_are_noted() {
        let c = parse_config("beta = 0.2\ntau = 0.5", None).unwrap();
        assert_eq!(c.notices.len(), 2);
        assert_eq!(c.train.tau, 0.5);
    }

    #[test]
    fn desk_profile_allows_overrides() {
        let c = parse_config("epochs = 7\nprofile = desk", None).unwrap().train;
        assert_eq!((c.epochs, c.batch_size, c.subsample), (7, 64, 0.05));
    }

    #[test]
    fn text_round_trips_and_fingerprint_ignores_epochs() {
        let mut c = TrainConfig::desk();
        c.seed = 9;
        c.ablation.dp = false;
        let back = parse_config(&c.to_text(), None).unwrap().train;
        assert_eq!(back, c);
        let mut more = c.clone();
        more.epochs += 10;
        assert_eq!(more.fingerprint(), c.fingerprint());
        more.lr *= 2.0;
        assert_ne!(more.fingerprint(), c.fingerprint());
    }
}
