//! Named-tensor archives on top of safetensors, written atomically.
//!
//! Free-form metadata is stored as one JSON string under a single key so the
//! header serialises identically on every run.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;

use crate::error::{format_err, io_err, Result};

const META_KEY: &str = "lipsynth";

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    dtype: Dtype,
    shape: Vec<usize>,
    bytes: Vec<u8>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Archive {
    tensors: BTreeMap<String, Entry>,
    pub meta: serde_json::Value,
}

macro_rules! typed {
    ($put:ident, $get:ident, $t:ty, $dtype:expr) => {
        pub fn $put(&mut self, name: &str, shape: &[usize], data: &[$t]) {
            assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor `{name}`");
            let bytes = data.iter().flat_map(|v| v.to_le_bytes()).collect();
            self.tensors.insert(
                name.to_string(),
                Entry {
                    dtype: $dtype,
                    shape: shape.to_vec(),
                    bytes,
                },
            );
        }

        pub fn $get(&self, name: &str) -> Option<(Vec<usize>, Vec<$t>)> {
            let e = self.tensors.get(name)?;
            if e.dtype != $dtype {
                return None;
            }
            const W: usize = std::mem::size_of::<$t>();
            let v = e
                .bytes
                .chunks_exact(W)
                .map(|c| <$t>::from_le_bytes(c.try_into().expect("chunk width")))
                .collect();
            Some((e.shape.clone(), v))
        }
    };
}

impl Archive {
    pub fn new(meta: serde_json::Value) -> Self {
        Self {
            tensors: BTreeMap::new(),
            meta,
        }
    }

    typed!(put_f32, get_f32, f32, Dtype::F32);
    typed!(put_f64, get_f64, f64, Dtype::F64);
    typed!(put_i64, get_i64, i64, Dtype::I64);
    typed!(put_u8, get_u8, u8, Dtype::U8);

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) {
        self.tensors.remove(name);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn dtype(&self, name: &str) -> Option<Dtype> {
        self.tensors.get(name).map(|e| e.dtype)
    }

    /// Any floating tensor widened to `f64`.
    pub fn get_float(&self, name: &str) -> Option<(Vec<usize>, Vec<f64>)> {
        self.get_f64(name).or_else(|| {
            self.get_f32(name)
                .map(|(s, v)| (s, v.into_iter().map(f64::from).collect()))
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let views: Vec<(String, TensorView<'_>)> = self
            .tensors
            .iter()
            .map(|(k, e)| {
                TensorView::new(e.dtype, e.shape.clone(), &e.bytes)
                    .map(|v| (k.clone(), v))
                    .map_err(|err| format_err(k.as_str(), err))
            })
            .collect::<Result<_>>()?;
        let mut meta = std::collections::HashMap::new();
        meta.insert(META_KEY.to_string(), self.meta.to_string());
        safetensors::serialize(views, Some(meta)).map_err(|e| format_err("<archive>", e))
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let st = SafeTensors::deserialize(bytes).map_err(|e| format_err(origin, e))?;
        let (_, header) = SafeTensors::read_metadata(bytes).map_err(|e| format_err(origin, e))?;
        let meta = match header.metadata().as_ref().and_then(|m| m.get(META_KEY)) {
            Some(s) => serde_json::from_str(s).map_err(|e| format_err(origin, e))?,
            None => serde_json::Value::Null,
        };
        let mut tensors = BTreeMap::new();
        for (name, view) in st.tensors() {
            tensors.insert(
                name,
                Entry {
                    dtype: view.dtype(),
                    shape: view.shape().to_vec(),
                    bytes: view.data().to_vec(),
                },
            );
        }
        Ok(Self { tensors, meta })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }
}

/// Writes to a sibling temporary file, syncs it and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| io_err(path)(e.error))?;
    Ok(())
}

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
