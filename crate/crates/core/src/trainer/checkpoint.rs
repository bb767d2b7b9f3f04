//! Binary checkpoint layout, all integers little-endian:
//!
//! ```text
//! "HMSN"  u32 version  u64 step
//! u32 epoch  f64 best_val_rmse  u32 config_len  config bytes (key=value text)
//! u32 record_count
//! record: u32 name_len  name  u32 rank  u32 dims[rank]  f32 payload[prod(dims)]
//! ```
//!
//! Parameters come first under their own names, followed by the Adam moments
//! as `adam_m/<name>` and `adam_v/<name>`.

use std::path::Path;

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::network::{ParamEntry, ParamStore};

pub const MAGIC: &[u8; 4] = b"HMSN";
pub const VERSION: u32 = 1;

/// Everything needed to resume or deploy a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    pub best_val_rmse: f64,
    pub params: ParamStore,
}

fn put_record(out: &mut Vec<u8>, name: &str, shape: &[usize], vals: &[f64]) {
    out.extend((name.len() as u32).to_le_bytes());
    out.extend(name.as_bytes());
    out.extend((shape.len() as u32).to_le_bytes());
    for d in shape {
        out.extend((*d as u32).to_le_bytes());
    }
    for v in vals {
        out.extend((*v as f32).to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend(MAGIC);
        out.extend(VERSION.to_le_bytes());
        out.extend(self.params.step.to_le_bytes());
        out.extend((self.epoch as u32).to_le_bytes());
        out.extend(self.best_val_rmse.to_le_bytes());
        let cfg = self.config.to_kv();
        out.extend((cfg.len() as u32).to_le_bytes());
        out.extend(cfg.as_bytes());
        let entries = self.params.entries();
        out.extend((3 * entries.len() as u32).to_le_bytes());
        for e in entries {
            put_record(&mut out, &e.name, &e.shape, &e.value);
        }
        for e in entries {
            put_record(&mut out, &format!("adam_m/{}", e.name), &e.shape, &e.m);
        }
        for e in entries {
            put_record(&mut out, &format!("adam_v/{}", e.name), &e.shape, &e.v);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format { offset: 0, msg: "bad magic".into() });
        }
        let at = r.pos;
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format { offset: at, msg: format!("unsupported version {version}") });
        }
        let step = r.u64()?;
        let epoch = r.u32()? as usize;
        let best_val_rmse = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let n = r.u32()? as usize;
        let at = r.pos;
        let text = std::str::from_utf8(r.take(n)?).map_err(|_| Error::Format { offset: at, msg: "config is not UTF-8".into() })?;
        let config = TrainConfig::from_kv(text).map_err(|e| Error::Format { offset: at, msg: e.to_string() })?;

        let count = r.u32()? as usize;
        if count % 3 != 0 {
            return Err(Error::Format { offset: r.pos - 4, msg: format!("record count {count} is not a multiple of 3") });
        }
        let mut entries: Vec<ParamEntry> = Vec::with_capacity(count / 3);
        for i in 0..count {
            let at = r.pos;
            let (name, shape, vals) = r.record()?;
            let group = i / (count / 3);
            let idx = i % (count / 3);
            if group == 0 {
                entries.push(ParamEntry {
                    name,
                    grad: vec![0.0; vals.len()],
                    m: vec![0.0; vals.len()],
                    v: vec![0.0; vals.len()],
                    shape,
                    value: vals,
                });
                continue;
            }
            let prefix = if group == 1 { "adam_m/" } else { "adam_v/" };
            let e = &mut entries[idx];
            if name.strip_prefix(prefix) != Some(e.name.as_str()) || shape != e.shape {
                return Err(Error::Format { offset: at, msg: format!("unexpected record '{name}'") });
            }
            if group == 1 {
                e.m = vals;
            } else {
                e.v = vals;
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Format { offset: r.pos, msg: "trailing bytes".into() });
        }
        let mut params = ParamStore::new();
        for e in entries {
            params.insert_entry(e)?;
        }
        params.step = step;
        Ok(Self { config, epoch, best_val_rmse, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or(Error::Format {
            offset: self.pos,
            msg: format!("truncated: wanted {n} more bytes"),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn record(&mut self) -> Result<(String, Vec<usize>, Vec<f64>)> {
        let at = self.pos;
        let n = self.u32()? as usize;
        let name = std::str::from_utf8(self.take(n)?)
            .map_err(|_| Error::Format { offset: at, msg: "record name is not UTF-8".into() })?
            .to_string();
        let rank = self.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(self.u32()? as usize);
        }
        let len = shape
            .iter()
            .try_fold(1usize, |a, d| a.checked_mul(*d))
            .filter(|l| l.checked_mul(4).is_some())
            .ok_or(Error::Format { offset: at, msg: "record too large".into() })?;
        let payload = self.take(len * 4)?;
        let vals = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        Ok((name, shape, vals))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Network, NetworkConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let mut params = ParamStore::new();
        Network::new(NetworkConfig::default()).init_params(&mut params, &mut ChaCha8Rng::seed_from_u64(1));
        for e in params.entries_mut() {
            for (i, x) in e.m.iter_mut().enumerate() {
                *x = i as f64 * 0.25 - 1.0;
            }
            e.v.fill(0.125);
        }
        params.round_to_f32();
        params.step = 17;
        Checkpoint {
            config: TrainConfig { seed: 5, ..Default::default() },
            epoch: 3,
            best_val_rmse: 1234.5678,
            params,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.params.checksum(), c.params.checksum());
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn header_layout() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..4], b"HMSN");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), VERSION);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 17);
    }

    #[test]
    fn corrupt_inputs_are_format_errors() {
        let bytes = sample().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Format { .. })));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(Checkpoint::from_bytes(&long), Err(Error::Format { .. })));
    }
}
