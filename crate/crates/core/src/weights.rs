//! Binary weights and checkpoint files.
//!
//! Layout, all little-endian: `"ESTN"`, `u32` version, `u32` tensor count,
//! then per tensor `u16` name length, name bytes, `u8` rank, `u32` dims and
//! the `f32` payload in row-major order. Checkpoints append `"ADAM"`, a `u64`
//! step and `u32` count followed by the moment tensors in the same framing.
//! The model configuration lives next to the file as `<path>.cfg`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::network::EstnWeights;
use crate::params::{Init, ParamStore};
use crate::tensor::Tensor;
use crate::training::AdamState;

const MAGIC: &[u8; 4] = b"ESTN";
const ADAM_MAGIC: &[u8; 4] = b"ADAM";
const VERSION: u32 = 1;

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".cfg");
    PathBuf::from(s)
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::io(path, std::io::Error::other("not a file path")))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".{}.tmp", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = fs::File::create(&tmp)
        .and_then(|mut f| f.write_all(bytes).and_then(|_| f.sync_all()))
        .and_then(|_| fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) -> Result<()> {
    let len = u16::try_from(name.len()).map_err(|_| Error::Corrupt(format!("name too long: {name}")))?;
    let rank = u8::try_from(t.rank()).map_err(|_| Error::Corrupt(format!("rank too large: {name}")))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(rank);
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| Error::Corrupt(format!("extent too large: {name}")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Corrupt(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn at_end(&self) -> bool {
        self.pos == self.buf.len()
    }

    fn tensor(&mut self, index: usize) -> Result<(String, Tensor<f32>)> {
        let len = self.u16(&format!("name length of tensor #{index}"))? as usize;
        let name = String::from_utf8(self.take(len, &format!("name of tensor #{index}"))?.to_vec())
            .map_err(|_| Error::Corrupt(format!("tensor #{index} name is not UTF-8")))?;
        let rank = self.u8(&format!("rank of `{name}`"))? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32(&format!("shape of `{name}`"))? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Corrupt(format!("tensor `{name}` is impossibly large")))?;
        let bytes = self.take(n, &format!("payload of `{name}`"))?;
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Corrupt(format!("tensor `{name}` holds non-finite values")));
        }
        let t = Tensor::new(shape, data)?;
        Ok((name, t))
    }

    fn tensors(&mut self, count: usize) -> Result<ParamStore<f32>> {
        let mut store = ParamStore::new();
        for i in 0..count {
            let (name, t) = self.tensor(i)?;
            if store.id_of(&name).is_some() {
                return Err(Error::Corrupt(format!("duplicate tensor `{name}`")));
            }
            store.push(name, t);
        }
        Ok(store)
    }
}

fn encode(params: &ParamStore<f32>, adam: Option<&AdamState<f32>>) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + params.scalar_count() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        put_tensor(&mut out, name, t)?;
    }
    if let Some(st) = adam {
        out.extend_from_slice(ADAM_MAGIC);
        out.extend_from_slice(&st.step.to_le_bytes());
        out.extend_from_slice(&((st.m.len() * 2) as u32).to_le_bytes());
        for (prefix, moments) in [("m", &st.m), ("v", &st.v)] {
            for ((name, _), t) in params.iter().zip(moments.iter()) {
                put_tensor(&mut out, &format!("{prefix}.{name}"), t)?;
            }
        }
    }
    Ok(out)
}

/// Raw tensors and optional optimiser section of a file.
pub struct Decoded {
    pub params: ParamStore<f32>,
    pub adam: Option<(u64, ParamStore<f32>)>,
}

pub fn decode(bytes: &[u8]) -> Result<Decoded> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Corrupt("bad magic, not a weights file".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Corrupt(format!("unsupported version {version}")));
    }
    let count = r.u32("tensor count")? as usize;
    let params = r.tensors(count)?;
    let adam = if r.at_end() {
        None
    } else {
        if r.take(4, "optimiser section")? != ADAM_MAGIC {
            return Err(Error::Corrupt("trailing bytes after tensors".into()));
        }
        let step = r.u64("optimiser step")?;
        let count = r.u32("optimiser tensor count")? as usize;
        let moments = r.tensors(count)?;
        if !r.at_end() {
            return Err(Error::Corrupt("trailing bytes after optimiser section".into()));
        }
        Some((step, moments))
    };
    Ok(Decoded { params, adam })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_config(path: &Path) -> Result<ModelConfig> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    ModelConfig::from_text(&text)
}

pub fn save_weights(w: &EstnWeights<f32>, path: &Path) -> Result<()> {
    write_atomic(&sidecar_path(path), w.config.to_text().as_bytes())?;
    write_atomic(path, &encode(&w.params, None)?)
}

/// Loads a file into a model built from `cfg`, checking every name and shape.
pub fn load_weights_as(path: &Path, cfg: &ModelConfig) -> Result<EstnWeights<f32>> {
    let decoded = decode(&read(path)?)?;
    into_model(&decoded.params, cfg)
}

fn into_model(params: &ParamStore<f32>, cfg: &ModelConfig) -> Result<EstnWeights<f32>> {
    let mut w = EstnWeights::with_init(cfg, 0, Init::Zeros)?;
    w.params.assign_from(params)?;
    for (name, _) in params.iter() {
        if w.params.id_of(name).is_none() {
            return Err(Error::Corrupt(format!("unexpected tensor `{name}` for this configuration")));
        }
    }
    Ok(w)
}

/// Loads weights using the configuration stored next to them.
pub fn load_weights(path: &Path) -> Result<EstnWeights<f32>> {
    let cfg = read_config(path)?;
    load_weights_as(path, &cfg)
}

pub fn save_checkpoint(w: &EstnWeights<f32>, adam: &AdamState<f32>, path: &Path) -> Result<()> {
    if adam.m.len() != w.params.len() {
        return Err(Error::shape("save_checkpoint", "optimiser state does not match parameters"));
    }
    write_atomic(&sidecar_path(path), w.config.to_text().as_bytes())?;
    write_atomic(path, &encode(&w.params, Some(adam))?)
}

pub fn load_checkpoint(path: &Path) -> Result<(EstnWeights<f32>, Option<AdamState<f32>>)> {
    let cfg = read_config(path)?;
    let decoded = decode(&read(path)?)?;
    let w = into_model(&decoded.params, &cfg)?;
    let adam = match decoded.adam {
        None => None,
        Some((step, moments)) => {
            let mut st = AdamState::new(w.params.tensors());
            for (prefix, dst) in [("m", &mut st.m), ("v", &mut st.v)] {
                let mut target = ParamStore::new();
                for ((name, _), t) in w.params.iter().zip(dst.iter()) {
                    target.push(format!("{prefix}.{name}"), t.clone());
                }
                target.assign_from(&moments)?;
                dst.clone_from_slice(target.tensors());
            }
            st.step = step;
            Some(st)
        }
    };
    Ok((w, adam))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        let w = EstnWeights::<f32>::build(&ModelConfig::tiny(6, 1, 2), 4).unwrap();
        save_weights(&w, &path).unwrap();
        assert_eq!(load_weights(&path).unwrap(), w);
    }

    #[test]
    fn truncation_is_corrupt() {
        let w = EstnWeights::<f32>::build(&ModelConfig::tiny(6, 1, 1), 4).unwrap();
        let bytes = encode(&w.params, None).unwrap();
        for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(decode(&bytes[..cut]), Err(Error::Corrupt(_))), "cut {cut}");
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(Error::Corrupt(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        let w = EstnWeights::<f32>::build(&ModelConfig::tiny(6, 1, 1), 4).unwrap();
        let mut st = AdamState::new(w.params.tensors());
        st.step = 17;
        st.m[0].data_mut()[0] = 0.25;
        st.v[1].data_mut()[0] = 0.5;
        save_checkpoint(&w, &st, &path).unwrap();
        let (w2, st2) = load_checkpoint(&path).unwrap();
        assert_eq!(w2, w);
        assert_eq!(st2.unwrap(), st);
        assert_eq!(load_weights(&path).unwrap(), w);
    }
}
