//! Named tensor store backed by a JSON manifest and a raw little-endian
//! `f32` blob. Used for model weights and for feature-map dumps.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::{FeatureMap, FeatureMapSet, Matrix2D};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: usize,
}

impl TensorEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsManifest {
    /// Blob file name, relative to the manifest.
    pub blob: String,
    pub dtype: String,
    pub entries: BTreeMap<String, TensorEntry>,
}

impl WeightsManifest {
    /// Check dtype, bounds and that no two entries overlap.
    pub fn validate(&self, blob_len: usize) -> Result<()> {
        if self.dtype != "f32le" {
            return Err(Error::invalid("dtype", format!("unsupported `{}`", self.dtype)));
        }
        let mut spans: Vec<(usize, usize, &str)> = Vec::new();
        for (name, e) in &self.entries {
            if e.offset % 4 != 0 {
                return Err(Error::invalid(
                    format!("entries.{name}.offset"),
                    "not 4-byte aligned",
                ));
            }
            let end = e.offset + 4 * e.len();
            if end > blob_len {
                return Err(Error::invalid(
                    format!("entries.{name}"),
                    format!("span {}..{end} exceeds blob of {blob_len} bytes", e.offset),
                ));
            }
            spans.push((e.offset, end, name));
        }
        spans.sort();
        for w in spans.windows(2) {
            if w[1].0 < w[0].1 && w[0].0 < w[0].1 && w[1].0 < w[1].1 {
                return Err(Error::invalid(
                    format!("entries.{}", w[1].2),
                    format!("overlaps entry `{}`", w[0].2),
                ));
            }
        }
        Ok(())
    }
}

/// Where learnable tensors come from: a seeded initializer or a loaded store.
#[derive(Debug, Clone, Copy)]
pub enum ParamSource<'a> {
    Seed(u64),
    Store(&'a WeightStore),
}

impl ParamSource<'_> {
    /// Matrix `name` of shape `rows × cols`; seeded values use `fan` for scale.
    pub fn matrix<T: Real>(&self, name: &str, rows: usize, cols: usize, fan: usize) -> Result<Matrix2D<T>> {
        match self {
            ParamSource::Store(s) => s.matrix(name, rows, cols),
            ParamSource::Seed(seed) => {
                let v = crate::rng::named_init(*seed, name, rows * cols, fan);
                Matrix2D::new(rows, cols, v.into_iter().map(T::lit).collect())
            }
        }
    }

    pub fn vector<T: Real>(&self, name: &str, len: usize, fan: usize) -> Result<Vec<T>> {
        match self {
            ParamSource::Store(s) => s.vector(name, len),
            ParamSource::Seed(seed) => Ok(crate::rng::named_init(*seed, name, len, fan)
                .into_iter()
                .map(T::lit)
                .collect()),
        }
    }

    /// Like [`ParamSource::vector`] but seeded values are the constant `fill`.
    pub fn vector_or<T: Real>(&self, name: &str, len: usize, fill: f64) -> Result<Vec<T>> {
        match self {
            ParamSource::Store(s) => s.vector(name, len),
            ParamSource::Seed(_) => Ok(vec![T::lit(fill); len]),
        }
    }
}

/// In-memory collection of named `f32` tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightStore {
    tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, values: &[f64]) {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.tensors
            .insert(name.into(), (shape, values.iter().map(|&v| v as f32).collect()));
    }

    pub fn insert_matrix<T: Real>(&mut self, name: impl Into<String>, m: &Matrix2D<T>) {
        let values: Vec<f64> = m.data().iter().map(|v| v.as_f64()).collect();
        self.insert(name, vec![m.rows(), m.cols()], &values);
    }

    pub fn insert_vector<T: Real>(&mut self, name: impl Into<String>, v: &[T]) {
        let values: Vec<f64> = v.iter().map(|x| x.as_f64()).collect();
        self.insert(name, vec![v.len()], &values);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count across all tensors.
    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(|(_, v)| v.len()).sum()
    }

    pub fn get(&self, name: &str) -> Result<(&[usize], &[f32])> {
        self.tensors
            .get(name)
            .map(|(s, v)| (s.as_slice(), v.as_slice()))
            .ok_or_else(|| Error::MissingWeight(name.to_string()))
    }

    pub fn matrix<T: Real>(&self, name: &str, rows: usize, cols: usize) -> Result<Matrix2D<T>> {
        let (shape, values) = self.get(name)?;
        if shape != [rows, cols] {
            return Err(Error::shape(name, format!("[{rows}, {cols}]"), format!("{shape:?}")));
        }
        Matrix2D::new(rows, cols, values.iter().map(|&v| T::lit(f64::from(v))).collect())
    }

    pub fn vector<T: Real>(&self, name: &str, len: usize) -> Result<Vec<T>> {
        let (shape, values) = self.get(name)?;
        if shape != [len] {
            return Err(Error::shape(name, format!("[{len}]"), format!("{shape:?}")));
        }
        Ok(values.iter().map(|&v| T::lit(f64::from(v))).collect())
    }

    /// Serialize as `(manifest, blob bytes)` with entries laid out in name order.
    pub fn to_parts(&self, blob_name: &str) -> (WeightsManifest, Vec<u8>) {
        let mut blob = Vec::with_capacity(4 * self.scalar_count());
        let mut entries = BTreeMap::new();
        for (name, (shape, values)) in &self.tensors {
            entries.insert(
                name.clone(),
                TensorEntry {
                    shape: shape.clone(),
                    offset: blob.len(),
                },
            );
            for v in values {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = WeightsManifest {
            blob: blob_name.to_string(),
            dtype: "f32le".into(),
            entries,
        };
        (manifest, blob)
    }

    pub fn from_parts(manifest: &WeightsManifest, blob: &[u8]) -> Result<Self> {
        manifest.validate(blob.len())?;
        let mut tensors = BTreeMap::new();
        for (name, e) in &manifest.entries {
            let bytes = &blob[e.offset..e.offset + 4 * e.len()];
            let values: Vec<f32> = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("weight `{name}`")));
            }
            tensors.insert(name.clone(), (e.shape.clone(), values));
        }
        Ok(Self { tensors })
    }

    /// Write `<path>` (manifest) and a sibling blob named after its stem.
    pub fn save(&self, manifest_path: impl AsRef<Path>) -> Result<()> {
        let manifest_path = manifest_path.as_ref();
        let blob_path = blob_path_for(manifest_path);
        let blob_name = blob_path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let (manifest, blob) = self.to_parts(&blob_name);
        crate::scene::write_json(&manifest, manifest_path)?;
        fs::write(&blob_path, blob).map_err(|source| Error::Io {
            path: blob_path,
            source,
        })
    }

    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let manifest_path = manifest_path.as_ref();
        let text = fs::read_to_string(manifest_path).map_err(|source| Error::Io {
            path: manifest_path.to_path_buf(),
            source,
        })?;
        let manifest: WeightsManifest =
            serde_json::from_str(&text).map_err(|source| Error::Json {
                path: manifest_path.to_path_buf(),
                source,
            })?;
        let blob_path = manifest_path
            .parent()
            .unwrap_or(Path::new("."))
            .join(&manifest.blob);
        let blob = fs::read(&blob_path).map_err(|source| Error::Io {
            path: blob_path,
            source,
        })?;
        Self::from_parts(&manifest, &blob)
    }
}

fn blob_path_for(manifest_path: &Path) -> PathBuf {
    let stem = manifest_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "weights".into());
    manifest_path.with_file_name(format!("{stem}.bin"))
}

/// Store feature maps as entries `level{i}` with shape `[C, H, W]`.
pub fn feature_maps_to_store<T: Real>(maps: &FeatureMapSet<T>) -> WeightStore {
    let mut store = WeightStore::new();
    for (i, m) in maps.levels().iter().enumerate() {
        let values: Vec<f64> = m.data().iter().map(|v| v.as_f64()).collect();
        store.insert(
            format!("level{i}"),
            vec![m.channels(), m.height(), m.width()],
            &values,
        );
    }
    store
}

pub fn feature_maps_from_store<T: Real>(store: &WeightStore) -> Result<FeatureMapSet<T>> {
    let mut levels = Vec::new();
    while store.contains(&format!("level{}", levels.len())) {
        let name = format!("level{}", levels.len());
        let (shape, values) = store.get(&name)?;
        let &[c, h, w] = shape else {
            return Err(Error::shape(name, "[C, H, W]", format!("{shape:?}")));
        };
        levels.push(FeatureMap::new(
            c,
            h,
            w,
            values.iter().map(|&v| T::lit(f64::from(v))).collect(),
        )?);
    }
    FeatureMapSet::new(levels)
}
