//! Weight file: a magic line, one line of JSON header (config, shard spec,
//! tensor manifest), then raw little-endian FP16 payloads in manifest order,
//! row-major and untiled.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Fp16, GPTConfig, ModelWeights};

pub const MAGIC: &str = "DFXW1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileShard {
    pub core_id: usize,
    pub n_cores: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub tag: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightHeader {
    pub config: GPTConfig,
    pub shard: FileShard,
    pub tensors: Vec<TensorEntry>,
}

impl WeightHeader {
    pub fn for_config(cfg: GPTConfig) -> Self {
        WeightHeader {
            config: cfg,
            shard: FileShard { core_id: 0, n_cores: 1 },
            tensors: ModelWeights::manifest(&cfg)
                .into_iter()
                .map(|(tag, rows, cols)| TensorEntry { tag, rows, cols })
                .collect(),
        }
    }

    /// Header bytes, magic and newlines included.
    pub fn encode(&self) -> Vec<u8> {
        let json = serde_json::to_string(self).expect("header serializes");
        format!("{MAGIC}\n{json}\n").into_bytes()
    }
}

pub fn write_weights(mut w: impl Write, weights: &ModelWeights) -> Result<()> {
    let header = WeightHeader::for_config(weights.cfg);
    w.write_all(&header.encode())?;
    let mut buf = Vec::new();
    for t in &header.tensors {
        let p = weights.param(&t.tag).ok_or_else(|| Error::WeightFile(format!("missing tensor {}", t.tag)))?;
        buf.clear();
        for v in p.values() {
            buf.extend_from_slice(&v.0.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_weights(r: impl Read) -> Result<ModelWeights> {
    let mut r = BufReader::new(r);
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end() != MAGIC {
        return Err(Error::WeightFile(format!("bad magic {:?}", line.trim_end())));
    }
    line.clear();
    r.read_line(&mut line)?;
    let header: WeightHeader =
        serde_json::from_str(line.trim_end()).map_err(|e| Error::WeightFile(format!("header: {e}")))?;
    header.config.validate()?;
    if header.shard != (FileShard { core_id: 0, n_cores: 1 }) {
        return Err(Error::WeightFile("only unsharded files are supported; sharding happens at load".into()));
    }
    if header.tensors != WeightHeader::for_config(header.config).tensors {
        return Err(Error::WeightFile("tensor manifest does not match the config".into()));
    }
    let mut bytes = Vec::new();
    ModelWeights::from_params(header.config, |tag, rows, cols| {
        bytes.resize(2 * rows * cols, 0);
        r.read_exact(&mut bytes).map_err(|e| Error::WeightFile(format!("payload of {tag}: {e}")))?;
        Ok(bytes.chunks_exact(2).map(|b| Fp16(u16::from_le_bytes([b[0], b[1]]))).collect())
    })
    .and_then(|m| {
        let mut rest = [0u8; 1];
        match r.read(&mut rest)? {
            0 => Ok(m),
            _ => Err(Error::WeightFile("trailing bytes after payload".into())),
        }
    })
}

pub fn save(path: &Path, weights: &ModelWeights) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_weights(std::io::BufWriter::new(f), weights)
}

pub fn load(path: &Path) -> Result<ModelWeights> {
    read_weights(std::fs::File::open(path)?)
}

/// Expected file size for a config.
pub fn file_size(cfg: &GPTConfig) -> usize {
    WeightHeader::for_config(*cfg).encode().len() + 2 * cfg.param_count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_size() {
        let cfg = GPTConfig::TINY;
        let w = ModelWeights::random(cfg, 9, 0.02).unwrap();
        let mut buf = Vec::new();
        write_weights(&mut buf, &w).unwrap();
        assert_eq!(buf.len(), file_size(&cfg));
        assert_eq!(read_weights(&buf[..]).unwrap(), w);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let w = ModelWeights::random(GPTConfig::TINY, 9, 0.02).unwrap();
        let mut buf = Vec::new();
        write_weights(&mut buf, &w).unwrap();
        assert!(read_weights(&buf[..buf.len() - 1]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_weights(&extra[..]).is_err());
        assert!(read_weights(&b"NOPE\n{}\n"[..]).is_err());
    }
}
