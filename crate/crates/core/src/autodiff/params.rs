use std::io::{Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to one tensor of one [`ParamStore`]. Handles of different stores
/// never compare equal, so several stores can feed the same graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId {
    store: u64,
    index: usize,
}

impl ParamId {
    pub fn index(self) -> usize {
        self.index
    }
}

static NEXT_STORE: AtomicU64 = AtomicU64::new(0);

/// Named parameter tensors in declaration order.
///
/// The flat view concatenates every tensor's row-major data in that order,
/// which is also the checkpoint layout.
///
/// Clones and casts keep the store's identity; equality compares names and
/// values only.
#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    tag: u64,
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: PartialEq> PartialEq for ParamStore<T> {
    fn eq(&self, other: &Self) -> bool {
        self.names == other.names && self.tensors == other.tensors
    }
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            tag: NEXT_STORE.fetch_add(1, Ordering::Relaxed),
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(value);
        self.id(self.tensors.len() - 1)
    }

    fn id(&self, index: usize) -> ParamId {
        ParamId { store: self.tag, index }
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.index]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.index]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.index]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(|i| self.id(i))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        let tag = self.tag;
        (0..self.tensors.len()).map(move |index| ParamId { store: tag, index })
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    /// Total number of scalar values.
    pub fn flat_len(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    fn locate(&self, mut index: usize) -> (usize, usize) {
        for (i, t) in self.tensors.iter().enumerate() {
            if index < t.len() {
                return (i, index);
            }
            index -= t.len();
        }
        panic!("flat parameter index out of range");
    }

    pub fn get_flat(&self, index: usize) -> T {
        let (t, i) = self.locate(index);
        self.tensors[t].data()[i]
    }

    pub fn set_flat(&mut self, index: usize, value: T) {
        let (t, i) = self.locate(index);
        self.tensors[t].data_mut()[i] = value;
    }

    pub fn to_flat(&self) -> Vec<T> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            tag: self.tag,
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}

/// Checkpoint layout (all little-endian):
///
/// | offset | size | field                                   |
/// |--------|------|-----------------------------------------|
/// | 0      | 4    | magic `b"SNCK"`                         |
/// | 4      | 4    | format version (`u32`, currently 1)     |
/// | 8      | 4    | precision in bits (`u32`, 32 or 64)     |
/// | 12     | 8    | parameter value count (`u64`)           |
/// | 20     | ...  | values in declaration order             |
///
/// Tensor shapes are not stored; they come from the model configuration.
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SNCK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<T: Real, W: Write>(store: &ParamStore<T>, mut w: W) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&T::BITS.to_le_bytes())?;
    w.write_all(&(store.flat_len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(store.flat_len() * (T::BITS as usize / 8));
    for t in store.tensors() {
        for &v in t.data() {
            if T::BITS == 32 {
                buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            } else {
                buf.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Reads values into `template`, whose shapes must match the stored count.
pub fn read_checkpoint<T: Real, R: Read>(template: &mut ParamStore<T>, mut r: R) -> Result<()> {
    let bad = |reason: String| Error::Format {
        path: "<checkpoint>".into(),
        reason,
    };
    let mut header = [0u8; 20];
    r.read_exact(&mut header)?;
    if &header[0..4] != CHECKPOINT_MAGIC {
        return Err(bad("bad magic".into()));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let bits = u32::from_le_bytes(header[8..12].try_into().unwrap());
    let count = u64::from_le_bytes(header[12..20].try_into().unwrap()) as usize;
    if count != template.flat_len() {
        return Err(bad(format!(
            "checkpoint holds {count} values, model expects {}",
            template.flat_len()
        )));
    }
    let width = match bits {
        32 => 4,
        64 => 8,
        other => return Err(bad(format!("unsupported precision {other}"))),
    };
    let mut buf = vec![0u8; count * width];
    r.read_exact(&mut buf)?;
    let mut chunks = buf.chunks_exact(width);
    for t in template.tensors_mut() {
        for slot in t.data_mut() {
            let c = chunks.next().expect("length checked");
            let v = if width == 4 {
                f32::from_le_bytes(c.try_into().unwrap()) as f64
            } else {
                f64::from_le_bytes(c.try_into().unwrap())
            };
            *slot = T::from_f64_lossy(v);
        }
    }
    Ok(())
}

pub fn save_checkpoint<T: Real>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_checkpoint(store, std::io::BufWriter::new(file))
}

pub fn load_checkpoint<T: Real>(template: &mut ParamStore<T>, path: &Path) -> Result<()> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let file = std::fs::File::open(path)?;
    read_checkpoint(template, std::io::BufReader::new(file))
}
