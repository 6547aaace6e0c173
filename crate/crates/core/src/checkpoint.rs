//! Checkpoint file format.
//!
//! Little-endian throughout: magic "PSSR", u32 format version, u32-length
//! config blob (UTF-8 key=value text), u32-counted parameter records, then
//! optimizer-state records in the same shape, then the run seed as u64.
//! A record is (u32 name length, name bytes, u32 rank, u32 dims x rank,
//! f32 payload).

use crate::error::{Error, Result};
use crate::tensor::{OptimizerState, Tensor};
use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;

const MAGIC: &[u8; 4] = b"PSSR";
const VERSION: u32 = 1;
const MAX_ELEMS: u64 = 1 << 31;

/// Everything a run leaves behind.
pub struct Checkpoint {
    /// Canonical run config text, embedded verbatim.
    pub config_text: String,
    pub params: BTreeMap<String, Tensor>,
    pub opt_m: BTreeMap<String, Tensor>,
    pub opt_v: BTreeMap<String, Tensor>,
    pub opt_t: u64,
    pub seed: u64,
}

impl Checkpoint {
    pub fn from_state(
        config_text: String,
        params: &BTreeMap<String, Tensor>,
        opt: &OptimizerState,
        seed: u64,
    ) -> Checkpoint {
        Checkpoint {
            config_text,
            params: params.clone(),
            opt_m: opt.m.clone(),
            opt_v: opt.v.clone(),
            opt_t: opt.t,
            seed,
        }
    }
}

fn push_record(buf: &mut Vec<u8>, name: &str, t: &Tensor) {
    buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(ckpt.config_text.len() as u32).to_le_bytes());
    buf.extend_from_slice(ckpt.config_text.as_bytes());
    buf.extend_from_slice(&(ckpt.params.len() as u32).to_le_bytes());
    for (name, t) in &ckpt.params {
        push_record(&mut buf, name, t);
    }
    let n_opt = ckpt.opt_m.len() + ckpt.opt_v.len() + 1;
    buf.extend_from_slice(&(n_opt as u32).to_le_bytes());
    for (name, t) in &ckpt.opt_m {
        push_record(&mut buf, &format!("m.{name}"), t);
    }
    for (name, t) in &ckpt.opt_v {
        push_record(&mut buf, &format!("v.{name}"), t);
    }
    push_record(&mut buf, "t", &Tensor::new(vec![1], vec![ckpt.opt_t as f64]).unwrap());
    buf.extend_from_slice(&ckpt.seed.to_le_bytes());
    fs::write(path, buf).map_err(|e| Error::io(path.display().to_string(), e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.at + n > self.bytes.len() {
            return Err(Error::Truncated {
                path: self.path.clone(),
                what,
            });
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn record(&mut self) -> Result<(String, Tensor)> {
        let name_len = self.u32("record name length")? as usize;
        let name = String::from_utf8(self.take(name_len, "record name")?.to_vec())
            .map_err(|_| Error::InvalidArg(format!("non-UTF-8 record name in `{}`", self.path)))?;
        let rank = self.u32("record rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        let mut n: u64 = 1;
        for _ in 0..rank {
            let d = self.u32("record dim")? as u64;
            n = n.checked_mul(d).ok_or_else(|| {
                Error::DimensionOverflow(dims.iter().map(|&d| d as u64).collect())
            })?;
            dims.push(d as usize);
        }
        if n > MAX_ELEMS {
            return Err(Error::DimensionOverflow(
                dims.iter().map(|&d| d as u64).collect(),
            ));
        }
        let payload = self.take(n as usize * 4, "record payload")?;
        let data: Vec<f64> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Ok((name, Tensor::new(dims, data)?))
    }
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = Reader {
        bytes: &bytes,
        at: 0,
        path: path.display().to_string(),
    };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::BadMagic {
            path: r.path,
            expected: "PSSR",
        });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::InvalidArg(format!(
            "unsupported checkpoint version {version} in `{}`",
            r.path
        )));
    }
    let cfg_len = r.u32("config length")? as usize;
    let config_text = String::from_utf8(r.take(cfg_len, "config blob")?.to_vec())
        .map_err(|_| Error::InvalidArg(format!("non-UTF-8 config blob in `{}`", r.path)))?;
    let n_params = r.u32("parameter count")?;
    let mut params = BTreeMap::new();
    for _ in 0..n_params {
        let (name, t) = r.record()?;
        params.insert(name, t);
    }
    let n_opt = r.u32("optimizer record count")?;
    let mut opt_m = BTreeMap::new();
    let mut opt_v = BTreeMap::new();
    let mut opt_t = 0u64;
    for _ in 0..n_opt {
        let (name, t) = r.record()?;
        if let Some(p) = name.strip_prefix("m.") {
            opt_m.insert(p.to_string(), t);
        } else if let Some(p) = name.strip_prefix("v.") {
            opt_v.insert(p.to_string(), t);
        } else if name == "t" {
            opt_t = t.data()[0] as u64;
        } else {
            return Err(Error::InvalidArg(format!(
                "unknown optimizer record `{name}` in `{}`",
                r.path
            )));
        }
    }
    let seed = u64::from_le_bytes(r.take(8, "seed")?.try_into().unwrap());
    Ok(Checkpoint {
        config_text,
        params,
        opt_m,
        opt_v,
        opt_t,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn toy_checkpoint() -> Checkpoint {
        let mut params = BTreeMap::new();
        params.insert(
            "a.w".to_string(),
            Tensor::new(vec![2, 2], vec![0.5, -0.25, 1.0, 2.0]).unwrap(),
        );
        params.insert("a.b".to_string(), Tensor::new(vec![2], vec![0.0, 0.125]).unwrap());
        let opt = OptimizerState::new(&params, 2e-4, 1.5, 100);
        Checkpoint::from_state("seed = 7\n".into(), &params, &opt, 7)
    }

    #[test]
    fn round_trip_preserves_everything() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("m.pssr");
        let ck = toy_checkpoint();
        write_checkpoint(&p, &ck).unwrap();
        let back = read_checkpoint(&p).unwrap();
        assert_eq!(back.config_text, "seed = 7\n");
        assert_eq!(back.seed, 7);
        assert_eq!(back.opt_t, 0);
        assert_eq!(back.params.len(), 2);
        assert_eq!(back.params["a.w"], ck.params["a.w"]);
        assert_eq!(back.opt_m.len(), 2);
        assert_eq!(back.opt_v.len(), 2);
    }

    #[test]
    fn header_layout() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("m.pssr");
        write_checkpoint(&p, &toy_checkpoint()).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[0..4], b"PSSR");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let cfg_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        assert_eq!(&bytes[12..12 + cfg_len], b"seed = 7\n");
        // seed trails the file
        let n = bytes.len();
        assert_eq!(u64::from_le_bytes(bytes[n - 8..].try_into().unwrap()), 7);
    }

    #[test]
    fn bad_magic_and_truncation_are_distinct() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("m.pssr");
        write_checkpoint(&p, &toy_checkpoint()).unwrap();
        let good = fs::read(&p).unwrap();

        let mut bad = good.clone();
        bad[0] = b'Q';
        fs::write(&p, &bad).unwrap();
        assert!(matches!(read_checkpoint(&p), Err(Error::BadMagic { .. })));

        fs::write(&p, &good[..good.len() - 4]).unwrap();
        assert!(matches!(read_checkpoint(&p), Err(Error::Truncated { .. })));
    }

    #[test]
    fn values_are_f32_quantized() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("m.pssr");
        let mut params = BTreeMap::new();
        params.insert("x".to_string(), Tensor::new(vec![1], vec![0.1]).unwrap());
        let opt = OptimizerState::new(&params, 1e-3, 1.5, 10);
        let ck = Checkpoint::from_state(String::new(), &params, &opt, 0);
        write_checkpoint(&p, &ck).unwrap();
        let back = read_checkpoint(&p).unwrap();
        assert_eq!(back.params["x"].data()[0], 0.1f32 as f64);
    }
}
