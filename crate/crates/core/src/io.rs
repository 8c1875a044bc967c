//! On-disk formats.
//!
//! Checkpoint layout, all integers little-endian:
//!
//! ```text
//! b"RAFCKPT1"
//! u64 descriptor length, descriptor as JSON
//! u64 entry count
//! per entry: u32 name length, name (UTF-8), u32 rank, rank x u64 extents,
//!            product(extents) x f64
//! ```
//!
//! Datasets are one JSON episode per line after a `#` header line.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelSpec};
use crate::numeric::Tensor;
use crate::sim::{Episode, Process};
use crate::training::{Experiment, TrainConfig};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RAFCKPT1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Descriptor {
    pub experiment: Experiment,
    pub model: ModelSpec,
    pub config: TrainConfig,
    pub seed: u64,
    #[serde(default)]
    pub final_train_log_density: Option<f64>,
    #[serde(default)]
    pub final_train_kl: Option<f64>,
    /// Diagnostic when training stopped on a non-finite value.
    #[serde(default)]
    pub aborted: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub descriptor: Descriptor,
    pub params: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(descriptor: Descriptor, model: &Model) -> Result<Self> {
        if descriptor.model != model.spec() {
            return Err(Error::Contract("descriptor does not describe the model".into()));
        }
        let params = model
            .store()
            .iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect();
        Ok(Checkpoint { descriptor, params })
    }

    pub fn model(&self) -> Result<Model> {
        Model::from_parts(&self.descriptor.model, self.params.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let desc = serde_json::to_vec(&self.descriptor).expect("descriptor serializes");
        let mut out = Vec::with_capacity(desc.len() + 64);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(desc.len() as u64).to_le_bytes());
        out.extend_from_slice(&desc);
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for (name, t) in &self.params {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &e in t.shape() {
                out.extend_from_slice(&(e as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let n = r.len("descriptor length")?;
        let descriptor: Descriptor = serde_json::from_slice(r.take(n, "descriptor")?)
            .map_err(|e| Error::Format(format!("checkpoint descriptor: {e}")))?;
        let count = r.len("entry count")?;
        let mut params = Vec::with_capacity(count.min(1 << 16));
        for i in 0..count {
            let n = r.u32(&format!("entry {i} name length"))? as usize;
            let name = std::str::from_utf8(r.take(n, "entry name")?)
                .map_err(|_| Error::Format(format!("entry {i} name is not UTF-8")))?
                .to_string();
            let rank = r.u32(&format!("rank of {name:?}"))? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.len(&format!("extent of {name:?}"))?);
            }
            let size = shape
                .iter()
                .try_fold(1usize, |a, &e| a.checked_mul(e))
                .filter(|s| s.checked_mul(8).is_some())
                .ok_or_else(|| Error::Format(format!("extents of {name:?} overflow")))?;
            let raw = r.take(size * 8, &format!("payload of {name:?}"))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| Error::Format(format!("{name:?}: {e}")))?;
            params.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after the last entry",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint { descriptor, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("checkpoint truncated in {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::Format(format!("{what} too large")))
    }
}

/// Header line of a dataset file.
pub fn dataset_header(process: Process, episodes: usize, seed: u64) -> String {
    format!("# raflow dataset process={process} episodes={episodes} seed={seed}")
}

pub fn write_dataset(out: &mut dyn Write, header: &str, episodes: &[Episode]) -> std::io::Result<()> {
    writeln!(out, "{header}")?;
    for ep in episodes {
        let line = serde_json::to_string(ep).map_err(std::io::Error::other)?;
        writeln!(out, "{line}")?;
    }
    out.flush()
}

pub fn save_dataset(path: &Path, header: &str, episodes: &[Episode]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_dataset(&mut w, header, episodes).map_err(|e| Error::io(path, e))
}

/// Parses a dataset; `#` lines and blank lines are skipped. Every episode
/// must have the same sample dimension.
pub fn read_dataset(input: &mut dyn BufRead) -> Result<Vec<Episode>> {
    let mut out: Vec<Episode> = Vec::new();
    let mut dim = None;
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::Format(format!("line {}: {e}", n + 1)))?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let ep: Episode = serde_json::from_str(text)
            .map_err(|e| Error::Format(format!("line {}: {e}", n + 1)))?;
        let k = ep.dim()?;
        if !ep.is_empty() && *dim.get_or_insert(k) != k {
            return Err(Error::Format(format!(
                "line {}: samples of dimension {k}, earlier episodes have {}",
                n + 1,
                dim.unwrap_or(0)
            )));
        }
        out.push(ep);
    }
    Ok(out)
}

pub fn load_dataset(path: &Path) -> Result<Vec<Episode>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(&mut BufReader::new(file)).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::RngState;
    use crate::sim::generate_episode;
    use crate::training::{model_spec, ModelKind};

    fn checkpoint() -> Checkpoint {
        let config = TrainConfig::new(Experiment::Exp1, ModelKind::Raf);
        let eps: Vec<Episode> = (0..2)
            .map(|i| generate_episode(Process::Hierarchical, 1, i, 5).unwrap())
            .collect();
        let spec = model_spec(&config, &eps, 1).unwrap();
        let model = Model::build(&spec, &mut RngState::new(1, 2)).unwrap();
        let descriptor = Descriptor {
            experiment: Experiment::Exp1,
            model: spec,
            config,
            seed: 1,
            final_train_log_density: Some(-1.0 / 3.0),
            final_train_kl: None,
            aborted: None,
        };
        Checkpoint::new(descriptor, &model).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let c = checkpoint();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.descriptor, c.descriptor);
        assert_eq!(back.params.len(), c.params.len());
        for ((n1, t1), (n2, t2)) in c.params.iter().zip(&back.params) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            let b1: Vec<u64> = t1.data().iter().map(|v| v.to_bits()).collect();
            let b2: Vec<u64> = t2.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(b1, b2);
        }
        assert_eq!(back.to_bytes(), bytes);
        back.model().unwrap();
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let bytes = checkpoint().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format(_))));
        for cut in [4, 12, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Format(_))), "{cut}");
        }
        let mut long = bytes;
        long.push(0);
        assert!(Checkpoint::from_bytes(&long).is_err());
    }

    #[test]
    fn dataset_roundtrip() {
        let eps: Vec<Episode> = (0..3)
            .map(|i| generate_episode(Process::Maze, 9, i, 20).unwrap())
            .collect();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &dataset_header(Process::Maze, 3, 9), &eps).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# raflow dataset process=maze episodes=3 seed=9\n"));
        assert_eq!(text.lines().count(), 4);
        let back = read_dataset(&mut buf.as_slice()).unwrap();
        assert_eq!(back, eps);
    }

    #[test]
    fn dataset_rejects_mixed_dims() {
        let a = Episode::new(Process::Hierarchical, vec![vec![0.0, 1.0]]);
        let b = Episode::new(Process::Hierarchical, vec![vec![0.0]]);
        let mut buf = Vec::new();
        write_dataset(&mut buf, "#", &[a, b]).unwrap();
        assert!(matches!(read_dataset(&mut buf.as_slice()), Err(Error::Format(_))));
    }
}
