//! Binary checkpoint container.
//!
//! Layout (little-endian): magic `HGTD`, `u32` format version, 32-byte
//! config fingerprint, 32-byte dataset fingerprint, `u64` epoch counter,
//! `u32`-prefixed UTF-8 config text, `u64` array count, then per array a
//! `u32`-prefixed name, `u32` rank, `u64` dims and `f64` values.

use std::path::Path;

use crate::error::{Error, Result};
use crate::optim::AdamState;
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"HGTD";
pub const FORMAT_VERSION: u32 = 1;

const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";
const ADAM_T: &str = "adam.t";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_fingerprint: [u8; 32],
    pub dataset_fingerprint: [u8; 32],
    pub epoch: u64,
    pub config_text: String,
    pub arrays: Vec<(String, Tensor)>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated file at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn fingerprint(&mut self) -> Result<[u8; 32]> {
        Ok(self.take(32)?.try_into().expect("32 bytes"))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("string is not UTF-8".into()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    /// Packs parameters and optimizer state.
    pub fn from_state(
        params: &ParamStore,
        adam: &AdamState,
        epoch: u64,
        config_text: String,
        config_fingerprint: [u8; 32],
        dataset_fingerprint: [u8; 32],
    ) -> Self {
        let mut arrays: Vec<(String, Tensor)> = params.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
        for (id, (name, t)) in params.ids().zip(params.iter()) {
            let shape = t.shape().to_vec();
            let m = Tensor::new(shape.clone(), adam.m[id.index()].clone()).expect("moment shape");
            let v = Tensor::new(shape, adam.v[id.index()].clone()).expect("moment shape");
            arrays.push((format!("{ADAM_M}{name}"), m));
            arrays.push((format!("{ADAM_V}{name}"), v));
        }
        arrays.push((ADAM_T.into(), Tensor::scalar(adam.t as f64)));
        Checkpoint {
            config_fingerprint,
            dataset_fingerprint,
            epoch,
            config_text,
            arrays,
        }
    }

    pub fn array(&self, name: &str) -> Option<&Tensor> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Copies stored parameters into `params` (names and shapes must match)
    /// and returns the optimizer state.
    pub fn restore(&self, params: &mut ParamStore) -> Result<AdamState> {
        let mut adam = AdamState::for_params(params);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let name = params.name(id).to_string();
            let t = self
                .array(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            params
                .set(&name, t.clone())
                .map_err(|e| Error::Checkpoint(format!("parameter {name}: {e}")))?;
            for (prefix, slot) in [(ADAM_M, &mut adam.m), (ADAM_V, &mut adam.v)] {
                let key = format!("{prefix}{name}");
                let buf = self
                    .array(&key)
                    .ok_or_else(|| Error::Checkpoint(format!("missing optimizer buffer {key}")))?;
                if buf.numel() != slot[id.index()].len() {
                    return Err(Error::Checkpoint(format!("optimizer buffer {key} has the wrong size")));
                }
                slot[id.index()] = buf.data().to_vec();
            }
        }
        adam.t = self
            .array(ADAM_T)
            .map(|t| t.data()[0] as u64)
            .ok_or_else(|| Error::Checkpoint("missing optimizer step counter".into()))?;
        Ok(adam)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.config_fingerprint);
        out.extend_from_slice(&self.dataset_fingerprint);
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&(self.config_text.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config_text.as_bytes());
        out.extend_from_slice(&(self.arrays.len() as u64).to_le_bytes());
        for (name, t) in &self.arrays {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let config_fingerprint = r.fingerprint()?;
        let dataset_fingerprint = r.fingerprint()?;
        let epoch = r.u64()?;
        let config_text = r.string()?;
        let count = r.u64()?;
        let mut arrays = Vec::new();
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape: Vec<usize> = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<_>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("array too large".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("array {name}: {e}")))?;
            arrays.push((name, t));
        }
        if r.pos != buf.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(Checkpoint {
            config_fingerprint,
            dataset_fingerprint,
            epoch,
            config_text,
            arrays,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())
            .map_err(|e| Error::Io(format!("cannot write {}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes =
            std::fs::read(path).map_err(|e| Error::Io(format!("cannot read {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    /// Errors unless both fingerprints match.
    pub fn check_compatible(&self, config: &[u8; 32], dataset: &[u8; 32]) -> Result<()> {
        if &self.config_fingerprint != config {
            return Err(Error::Checkpoint(format!(
                "config fingerprint mismatch: checkpoint {} vs run {}",
                hex(&self.config_fingerprint),
                hex(config)
            )));
        }
        if &self.dataset_fingerprint != dataset {
            return Err(Error::Checkpoint(format!(
                "dataset fingerprint mismatch: checkpoint {} vs run {}",
                hex(&self.dataset_fingerprint),
                hex(dataset)
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::random_tensor;

    fn sample() -> (ParamStore, Checkpoint) {
        let mut store = ParamStore::new();
        store.add("a.w", random_tensor(1, 3, 2));
        store.add("b", random_tensor(2, 1, 4));
        let mut adam = AdamState::for_params(&store);
        adam.t = 7;
        adam.m[0][1] = 0.25;
        adam.v[1][3] = 1e-9;
        let ck = Checkpoint::from_state(&store, &adam, 12, "lr = 1e-3\n".into(), [1; 32], [2; 32]);
        (store, ck)
    }

    #[test]
    fn bytes_round_trip_exactly() {
        let (_, ck) = sample();
        let bytes = ck.to_bytes();
        assert_eq!(&bytes[..4], b"HGTD");
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn restore_recovers_state() {
        let (store, ck) = sample();
        let mut fresh = ParamStore::new();
        fresh.add("a.w", Tensor::zeros(&[3, 2]));
        fresh.add("b", Tensor::zeros(&[1, 4]));
        let adam = ck.restore(&mut fresh).unwrap();
        assert_eq!(fresh, store);
        assert_eq!((adam.t, adam.m[0][1], adam.v[1][3]), (7, 0.25, 1e-9));
    }

    #[test]
    fn corrupt_or_mismatched_files_are_rejected() {
        let (_, ck) = sample();
        let mut bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        bytes[0] = b'X';
        assert!(Checkpoint::from_bytes(&bytes).is_err());
        assert!(matches!(ck.check_compatible(&[1; 32], &[3; 32]), Err(Error::Checkpoint(_))));
        assert!(ck.check_compatible(&[1; 32], &[2; 32]).is_ok());
        let mut wrong = ParamStore::new();
        wrong.add("a.w", Tensor::zeros(&[2, 3]));
        assert!(ck.restore(&mut wrong).is_err());
    }
}
