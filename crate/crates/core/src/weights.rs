//! Named weight tensors, deterministic initialization, and the PHRW binary
//! file format.
//!
//! Values are held as f64 for computation but always carry f32 precision
//! (initialization rounds through f32, files store f32), so a save/load
//! round trip is bit-exact.

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::rng::Stream;
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

pub const WEIGHT_MAGIC: &[u8; 4] = b"PHRW";
pub const WEIGHT_VERSION: u32 = 1;

/// How a tensor is filled by seeded initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    /// Uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)]; linear weights.
    Uniform { fan_in: usize },
    /// Biases and normalization shifts.
    Zeros,
    /// Normalization scales.
    Ones,
}

/// Declares one tensor of the architecture: its name, shape, and init rule.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: InitKind,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rank-2 view.
    pub fn to_mat(&self) -> Mat {
        assert_eq!(self.shape.len(), 2, "tensor is not rank 2");
        Mat::from_vec(self.shape[0], self.shape[1], self.data.clone())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Immutable map from tensor name to tensor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightStore {
    tensors: BTreeMap<String, Tensor>,
}

impl WeightStore {
    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::invalid(format!("missing weight tensor '{name}'")))
    }

    pub fn mat(&self, name: &str) -> Result<Mat> {
        Ok(self.get(name)?.to_mat())
    }

    pub fn vec(&self, name: &str) -> Result<&[f64]> {
        Ok(self.get(name)?.as_slice())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn total_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Replaces a tensor's values in place (test and experiment hook).
    /// The shape is immutable.
    pub fn set_values(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        let t = self
            .tensors
            .get_mut(name)
            .ok_or_else(|| Error::invalid(format!("missing weight tensor '{name}'")))?;
        if values.len() != t.data.len() {
            return Err(Error::invalid(format!(
                "tensor '{name}' has {} values, got {}",
                t.data.len(),
                values.len()
            )));
        }
        t.data = values;
        Ok(())
    }

    /// Fills every tensor with zeros (test hook).
    pub fn zero_all(&mut self) {
        for t in self.tensors.values_mut() {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// Materializes tensors from their specs. Each value is a pure function of
/// (seed, tensor name, element index), so neither enumeration order nor
/// parallelism can change the result; values are rounded through f32.
pub fn init_from_specs(specs: &[TensorSpec], seed: u64) -> WeightStore {
    let mut tensors = BTreeMap::new();
    for spec in specs {
        let n = spec.len();
        let data = match spec.init {
            InitKind::Uniform { fan_in } => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                let stream = Stream::new(seed, &spec.name);
                (0..n)
                    .map(|i| stream.symmetric_at(i as u64, bound) as f32 as f64)
                    .collect()
            }
            InitKind::Zeros => vec![0.0; n],
            InitKind::Ones => vec![1.0; n],
        };
        let prior = tensors.insert(
            spec.name.clone(),
            Tensor {
                shape: spec.shape.clone(),
                data,
            },
        );
        assert!(prior.is_none(), "duplicate tensor name '{}'", spec.name);
    }
    WeightStore { tensors }
}

pub fn save_weights(store: &WeightStore, path: impl AsRef<Path>) -> Result<()> {
    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(WEIGHT_MAGIC);
    out.extend_from_slice(&WEIGHT_VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, tensor) in store.iter() {
        let name_bytes = name.as_bytes();
        out.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        out.extend_from_slice(name_bytes);
        out.push(tensor.shape.len() as u8);
        for &d in &tensor.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &tensor.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::WeightFormat("unexpected end of file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightStore> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    parse_weights(&buf)
}

pub fn parse_weights(buf: &[u8]) -> Result<WeightStore> {
    let mut cur = Cursor { buf, pos: 0 };
    if cur.take(4)? != WEIGHT_MAGIC {
        return Err(Error::WeightFormat("bad magic, expected PHRW".into()));
    }
    let version = cur.u32()?;
    if version != WEIGHT_VERSION {
        return Err(Error::WeightFormat(format!(
            "unsupported version {version}, expected {WEIGHT_VERSION}"
        )));
    }
    let count = cur.u32()? as usize;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let name_len = cur.u16()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| Error::WeightFormat("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = cur.u8()? as usize;
        if rank == 0 || rank > 4 {
            return Err(Error::WeightFormat(format!(
                "tensor '{name}': invalid rank {rank}"
            )));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        if n == 0 {
            return Err(Error::WeightFormat(format!(
                "tensor '{name}': empty shape {shape:?}"
            )));
        }
        let bytes = cur.take(n * 4).map_err(|_| {
            Error::WeightFormat(format!("tensor '{name}': unexpected end of file"))
        })?;
        let data: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        if tensors.insert(name.clone(), Tensor { shape, data }).is_some() {
            return Err(Error::WeightFormat(format!("duplicate tensor '{name}'")));
        }
    }
    if cur.pos != buf.len() {
        return Err(Error::WeightFormat(format!(
            "trailing data: header declared {count} tensors but {} bytes remain",
            buf.len() - cur.pos
        )));
    }
    Ok(WeightStore { tensors })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_specs() -> Vec<TensorSpec> {
        vec![
            TensorSpec {
                name: "layer.w".into(),
                shape: vec![4, 8],
                init: InitKind::Uniform { fan_in: 4 },
            },
            TensorSpec {
                name: "layer.b".into(),
                shape: vec![8],
                init: InitKind::Zeros,
            },
            TensorSpec {
                name: "norm.gamma".into(),
                shape: vec![8],
                init: InitKind::Ones,
            },
        ]
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let specs = sample_specs();
        let a = init_from_specs(&specs, 42);
        let b = init_from_specs(&specs, 42);
        assert_eq!(a, b);
        let c = init_from_specs(&specs, 43);
        assert_ne!(a, c);
    }

    #[test]
    fn init_values_carry_f32_precision_and_bound() {
        let specs = sample_specs();
        let store = init_from_specs(&specs, 7);
        let w = store.get("layer.w").unwrap();
        let bound = 1.0 / 2.0;
        for &v in &w.data {
            assert!(v.abs() <= bound + 1e-7);
            assert_eq!(v, v as f32 as f64);
        }
        assert!(store.vec("layer.b").unwrap().iter().all(|&v| v == 0.0));
        assert!(store.vec("norm.gamma").unwrap().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = std::env::temp_dir().join("pointhr-weights-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("rt.phrw");
        let store = init_from_specs(&sample_specs(), 7);
        save_weights(&store, &path).unwrap();
        let loaded = load_weights(&path).unwrap();
        assert_eq!(store, loaded);
    }

    #[test]
    fn truncated_file_is_an_error() {
        let store = init_from_specs(&sample_specs(), 7);
        let dir = std::env::temp_dir().join("pointhr-weights-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("trunc.phrw");
        save_weights(&store, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        let err = parse_weights(&bytes).unwrap_err();
        assert!(err.to_string().contains("unexpected end of file"), "{err}");
    }

    #[test]
    fn wrong_count_is_an_error() {
        let store = init_from_specs(&sample_specs(), 7);
        let dir = std::env::temp_dir().join("pointhr-weights-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("count.phrw");
        save_weights(&store, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // Header says 2 tensors, file carries 3.
        bytes[8..12].copy_from_slice(&2u32.to_le_bytes());
        let err = parse_weights(&bytes).unwrap_err();
        assert!(err.to_string().contains("trailing data"), "{err}");
    }

    #[test]
    fn bad_magic_is_an_error() {
        let err = parse_weights(b"NOPE\x01\x00\x00\x00\x00\x00\x00\x00").unwrap_err();
        assert!(err.to_string().contains("magic"));
    }
}
