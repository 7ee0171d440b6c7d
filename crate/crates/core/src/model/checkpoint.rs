//! Binary checkpoint: `PLMC`, version, a length-prefixed `key=value` config
//! block, then named little-endian `f32` tensors until end of file.

use std::collections::HashSet;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::kv::{self, Entries};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"PLMC";
pub const VERSION: u32 = 1;
const MAX_RANK: u32 = 8;
const TIE_KEY: &str = "tied_output";
const EMBED: &str = "embed.token";

/// Decoded checkpoint contents before they are matched against a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        let block: String = self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        w.write_all(&(block.len() as u32).to_le_bytes())?;
        w.write_all(block.as_bytes())?;
        for (name, t) in &self.tensors {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(t.len() * 4);
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> Result<Self> {
        let bad = |d: &str| Error::format("checkpoint", d.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = read_u32(r)?.ok_or_else(|| bad("truncated header"))?;
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let len = read_u32(r)?.ok_or_else(|| bad("truncated header"))? as usize;
        let mut block = vec![0u8; len];
        r.read_exact(&mut block).map_err(|_| bad("truncated config block"))?;
        let block = String::from_utf8(block).map_err(|_| bad("config block is not UTF-8"))?;
        let entries = kv::parse(&block)?;

        let mut tensors = Vec::new();
        while let Some(name_len) = read_u32(r)? {
            let mut name = vec![0u8; name_len as usize];
            r.read_exact(&mut name).map_err(|_| bad("truncated tensor name"))?;
            let name = String::from_utf8(name).map_err(|_| bad("tensor name is not UTF-8"))?;
            let rank = read_u32(r)?.ok_or_else(|| bad("truncated tensor header"))?;
            if rank > MAX_RANK {
                return Err(bad(&format!("tensor {name} has rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank as usize);
            for _ in 0..rank {
                shape.push(read_u32(r)?.ok_or_else(|| bad("truncated tensor header"))? as usize);
            }
            let n: usize = shape.iter().product();
            let mut raw = vec![0u8; n * 4];
            r.read_exact(&mut raw).map_err(|_| bad(&format!("truncated data for {name}")))?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        Ok(Self { entries, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = BufWriter::new(fs::File::create(path).map_err(Error::at_path(path))?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = BufReader::new(fs::File::open(path).map_err(Error::at_path(path))?);
        Self::read(&mut r)
    }

    pub fn entry(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

/// Reads a u32, or `None` at a clean end of stream.
fn read_u32(r: &mut impl Read) -> Result<Option<u32>> {
    let mut b = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut b[got..])? {
            0 if got == 0 => return Ok(None),
            0 => return Err(Error::format("checkpoint", "truncated length field")),
            k => got += k,
        }
    }
    Ok(Some(u32::from_le_bytes(b)))
}

impl<T: Scalar> Model<T> {
    /// Checkpoint holding the model config, `meta` entries and the parameters,
    /// followed by any `extra` tensors.
    pub fn to_checkpoint(&self, meta: &[(String, String)], extra: Vec<(String, Tensor<f32>)>) -> Checkpoint {
        let mut entries: Vec<(String, String)> =
            self.config.entries().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        entries.push((TIE_KEY.to_string(), EMBED.to_string()));
        entries.extend(meta.iter().cloned());
        let mut tensors: Vec<(String, Tensor<f32>)> =
            self.params.iter().map(|(n, t)| (n.to_string(), t.cast())).collect();
        tensors.extend(extra);
        Checkpoint { entries, tensors }
    }

    /// Rebuilds a model, checking every parameter shape against the config.
    ///
    /// Returns the model, the non-model entries and the tensors that are not parameters.
    pub fn from_checkpoint(ck: Checkpoint) -> Result<(Self, Vec<(String, String)>, Vec<(String, Tensor<f32>)>)> {
        let mut config = ModelConfig::desk(0);
        let mut entries = Entries::new(ck.entries.clone());
        config.take_from(&mut entries)?;
        let model_keys: Vec<&str> = config.entries().iter().map(|(k, _)| *k).collect();
        // Both output heads read the embedding tensor; a checkpoint naming anything else is not ours.
        match ck.entry(TIE_KEY) {
            Some(EMBED) => {}
            other => return Err(Error::format("checkpoint", format!("output tie {other:?}, expected {EMBED}"))),
        }
        let meta: Vec<(String, String)> = ck
            .entries
            .into_iter()
            .filter(|(k, _)| k != TIE_KEY && !model_keys.contains(&k.as_str()))
            .collect();
        let mut model = Model::<T>::new(config, 0)?;

        let mut found = HashSet::new();
        let mut extra = Vec::new();
        for (name, t) in ck.tensors {
            match model.params.id(&name) {
                Some(id) => {
                    let want = model.params.get(id).shape();
                    if want != t.shape() {
                        return Err(Error::format(
                            "checkpoint",
                            format!("{name}: shape {:?}, config expects {:?}", t.shape(), want),
                        ));
                    }
                    *model.params.get_mut(id) = t.cast();
                    found.insert(id);
                }
                None => extra.push((name, t)),
            }
        }
        if let Some(missing) = (0..model.params.len()).find(|i| !found.contains(i)) {
            return Err(Error::format("checkpoint", format!("missing parameter {}", model.params.name(missing))));
        }
        Ok((model, meta, extra))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint(&[], Vec::new()).save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::from_checkpoint(Checkpoint::load(path)?)?.0)
    }
}
