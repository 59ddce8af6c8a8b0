//! Binary checkpoint: 8-byte magic, `u32` version, `u64` header length, a JSON
//! header, then little-endian `f64` data for parameters followed by the
//! optimizer's first and second moment buffers.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mam::Vocab;
use crate::tensor::Tensor;

use super::TrainConfig;

pub const MAGIC: &[u8; 8] = b"INSTRACK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    /// Frame geometry `[T, N, C]` the model was built for.
    pub shape: [usize; 3],
    pub vocab: Vocab,
    pub step: u64,
    pub params: Vec<(String, Tensor)>,
    pub optimizer_steps: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
    pub rng_seed: [u8; 32],
    pub rng_word_pos: u128,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    shape: [usize; 3],
    vocab: Vocab,
    step: u64,
    tensors: Vec<TensorEntry>,
    optimizer_steps: u64,
    first: Vec<usize>,
    second: Vec<usize>,
    rng_seed: String,
    rng_word_pos: String,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            config: self.config.clone(),
            shape: self.shape,
            vocab: self.vocab.clone(),
            step: self.step,
            tensors: self
                .params
                .iter()
                .map(|(n, t)| TensorEntry { name: n.clone(), shape: t.shape().to_vec() })
                .collect(),
            optimizer_steps: self.optimizer_steps,
            first: self.first.iter().map(Vec::len).collect(),
            second: self.second.iter().map(Vec::len).collect(),
            rng_seed: hex::encode(self.rng_seed),
            rng_word_pos: self.rng_word_pos.to_string(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let data = self
            .params
            .iter()
            .flat_map(|(_, t)| t.data())
            .chain(self.first.iter().flatten())
            .chain(self.second.iter().flatten());
        for x in data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 {
            return Err(Error::Format("checkpoint truncated before header".into()));
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::Format("not a checkpoint: bad magic bytes".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Version { found: version, expected: VERSION });
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = &bytes[20..];
        if body.len() < hlen {
            return Err(Error::Format("checkpoint truncated inside header".into()));
        }
        let header: Header = serde_json::from_slice(&body[..hlen])
            .map_err(|e| Error::Schema(format!("checkpoint header: {e}")))?;
        let mut data = body[hlen..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let wanted: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum::<usize>()
            + header.first.iter().sum::<usize>()
            + header.second.iter().sum::<usize>();
        if body.len() - hlen != wanted * 8 {
            return Err(Error::Format(format!(
                "checkpoint holds {} data bytes, header describes {}",
                body.len() - hlen,
                wanted * 8
            )));
        }
        let mut take = |n: usize| -> Vec<f64> { data.by_ref().take(n).collect() };
        let mut params = Vec::with_capacity(header.tensors.len());
        for t in &header.tensors {
            let n = t.shape.iter().product();
            params.push((t.name.clone(), Tensor::new(&t.shape, take(n))?));
        }
        let first = header.first.iter().map(|&n| take(n)).collect();
        let second = header.second.iter().map(|&n| take(n)).collect();
        let seed_bytes = hex::decode(&header.rng_seed).map_err(|e| Error::Schema(format!("rng seed: {e}")))?;
        let rng_seed: [u8; 32] = seed_bytes
            .try_into()
            .map_err(|_| Error::Schema("rng seed must be 32 bytes".into()))?;
        let rng_word_pos = header
            .rng_word_pos
            .parse()
            .map_err(|e| Error::Schema(format!("rng position: {e}")))?;
        Ok(Self {
            config: header.config,
            shape: header.shape,
            vocab: header.vocab,
            step: header.step,
            params,
            optimizer_steps: header.optimizer_steps,
            first,
            second,
            rng_seed,
            rng_word_pos,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        drop(f);
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
