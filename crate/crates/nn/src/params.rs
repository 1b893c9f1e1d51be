//! Named parameter arrays, gradient buffers and the weight file container.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{NnError, Result};

pub const FORMAT_TAG: &str = "roadex-weights";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Constant(f64),
    /// Uniform on `(-k, k)`.
    Uniform(f64),
    /// Uniform on `(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    FanIn(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Entry {
    name: String,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    #[serde(default = "trainable_default")]
    trainable: bool,
}

fn trainable_default() -> bool {
    true
}

/// Row-major matrices and vectors (`cols == 1`) addressed by name or id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add<R: Rng>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        init: Init,
        rng: &mut R,
    ) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(NnError::DuplicateParam(name.to_string()));
        }
        let n = rows * cols;
        let values = match init {
            Init::Zeros => vec![0.0; n],
            Init::Constant(c) => vec![c; n],
            Init::Uniform(k) => uniform(rng, n, k),
            Init::FanIn(fan_in) => uniform(rng, n, 1.0 / (fan_in.max(1) as f64).sqrt()),
        };
        self.entries.push(Entry {
            name: name.to_string(),
            rows,
            cols,
            values,
            trainable: true,
        });
        self.index.insert(name.to_string(), self.entries.len() - 1);
        Ok(ParamId(self.entries.len() - 1))
    }

    /// Adds a persisted array that optimizers and gradient checks skip.
    pub fn add_buffer(&mut self, name: &str, rows: usize, cols: usize, values: Vec<f64>) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(NnError::DuplicateParam(name.to_string()));
        }
        if values.len() != rows * cols {
            return Err(NnError::Shape(format!("{name}: {} values for {rows}x{cols}", values.len())));
        }
        self.entries.push(Entry {
            name: name.to_string(),
            rows,
            cols,
            values,
            trainable: false,
        });
        self.index.insert(name.to_string(), self.entries.len() - 1);
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(|&id| self.is_trainable(id))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|e| e.values.len()).sum()
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn shape(&self, id: ParamId) -> (usize, usize) {
        let e = &self.entries[id.0];
        (e.rows, e.cols)
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.entries[id.0].values
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.entries[id.0].values
    }

    pub fn set(&mut self, id: ParamId, values: &[f64]) -> Result<()> {
        let e = &mut self.entries[id.0];
        if values.len() != e.values.len() {
            return Err(NnError::Shape(format!(
                "{}: expected {} values, got {}",
                e.name,
                e.values.len(),
                values.len()
            )));
        }
        e.values.copy_from_slice(values);
        Ok(())
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.entries.iter().find(|e| e.values.iter().any(|v| !v.is_finite())) {
            Some(e) => Err(NnError::NonFinite {
                name: e.name.clone(),
            }),
            None => Ok(()),
        }
    }

    /// SHA-256 over names, shapes and little-endian values.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for e in &self.entries {
            h.update(e.name.as_bytes());
            h.update([0u8]);
            h.update((e.rows as u64).to_le_bytes());
            h.update((e.cols as u64).to_le_bytes());
            h.update([e.trainable as u8]);
            for v in &e.values {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn to_json(&self) -> String {
        let c = Container {
            format: FORMAT_TAG.to_string(),
            version: FORMAT_VERSION,
            checksum: self.checksum(),
            params: self.entries.clone(),
        };
        serde_json::to_string(&c).expect("container serializes")
    }

    /// Parses a container, verifying tag, version and checksum.
    pub fn from_json(path: &Path, text: &str) -> Result<Self> {
        let fmt_err = |msg: String| NnError::Format {
            path: path.to_path_buf(),
            msg,
        };
        let c: Container = serde_json::from_str(text).map_err(|e| fmt_err(e.to_string()))?;
        if c.format != FORMAT_TAG || c.version != FORMAT_VERSION {
            return Err(fmt_err(format!(
                "unsupported container {} v{}",
                c.format, c.version
            )));
        }
        let mut store = ParamStore::new();
        for e in c.params {
            if e.values.len() != e.rows * e.cols {
                return Err(fmt_err(format!("{}: value count does not match shape", e.name)));
            }
            if store.index.contains_key(&e.name) {
                return Err(NnError::DuplicateParam(e.name));
            }
            store.index.insert(e.name.clone(), store.entries.len());
            store.entries.push(e);
        }
        let computed = store.checksum();
        if computed != c.checksum {
            return Err(NnError::Checksum {
                path: path.to_path_buf(),
                stored: c.checksum,
                computed,
            });
        }
        store.check_finite()?;
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let io = |source| NnError::Io {
            path: path.to_path_buf(),
            source,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
        std::fs::write(path, self.to_json()).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| NnError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(path, &text)
    }

    /// Replaces every value with the same-named array of `other`; names and
    /// shapes must agree exactly.
    pub fn assign_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.entries.len() != self.entries.len() {
            return Err(NnError::Shape(format!(
                "expected {} arrays, found {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for e in &mut self.entries {
            let o = &other.entries[*other
                .index
                .get(&e.name)
                .ok_or_else(|| NnError::UnknownParam(e.name.clone()))?];
            if (o.rows, o.cols, o.trainable) != (e.rows, e.cols, e.trainable) {
                return Err(NnError::Shape(format!(
                    "{}: expected {}x{}, found {}x{}",
                    e.name, e.rows, e.cols, o.rows, o.cols
                )));
            }
            e.values.copy_from_slice(&o.values);
        }
        Ok(())
    }

    pub fn load_into(&mut self, path: &Path) -> Result<()> {
        let loaded = Self::load(path)?;
        self.assign_from(&loaded).map_err(|e| NnError::Format {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }
}

fn uniform<R: Rng>(rng: &mut R, n: usize, k: f64) -> Vec<f64> {
    if k <= 0.0 {
        return vec![0.0; n];
    }
    (0..n).map(|_| rng.gen_range(-k..k)).collect()
}

#[derive(Serialize, Deserialize)]
struct Container {
    format: String,
    version: u32,
    checksum: String,
    params: Vec<Entry>,
}

/// Gradient arrays shaped like a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    data: Vec<Vec<f64>>,
}

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Grads {
            data: store.entries.iter().map(|e| vec![0.0; e.values.len()]).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.data[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.data[id.0]
    }

    pub fn clear(&mut self) {
        for g in &mut self.data {
            g.fill(0.0);
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in &mut self.data {
            for v in g.iter_mut() {
                *v *= c;
            }
        }
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        self.data
            .iter()
            .flatten()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store(seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        s.add("w", 3, 2, Init::FanIn(2), &mut rng).unwrap();
        s.add("b", 3, 1, Init::Zeros, &mut rng).unwrap();
        s
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let (a, b) = (store(1), store(1));
        assert_eq!(a.checksum(), b.checksum());
        assert_ne!(a.checksum(), store(2).checksum());
        let k = 1.0 / 2f64.sqrt();
        assert!(a.get(a.id("w").unwrap()).iter().all(|v| v.abs() < k));
        assert!(a.get(a.id("b").unwrap()).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn buffers_round_trip_as_buffers() {
        let mut s = store(4);
        let b = s.add_buffer("mean", 2, 1, vec![0.25, -1.0]).unwrap();
        assert!(!s.is_trainable(b));
        assert_eq!(s.trainable_ids().count(), 2);
        let back = ParamStore::from_json(Path::new("m.json"), &s.to_json()).unwrap();
        assert_eq!(back, s);
        assert!(s.add_buffer("bad", 2, 2, vec![0.0]).is_err());
        let mut plain = store(4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        plain.add("mean", 2, 1, Init::Zeros, &mut rng).unwrap();
        assert!(plain.assign_from(&s).is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = store(0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            s.add("w", 1, 1, Init::Zeros, &mut rng),
            Err(NnError::DuplicateParam(_))
        ));
    }

    #[test]
    fn container_round_trip() {
        let s = store(3);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.json");
        s.save(&p).unwrap();
        let back = ParamStore::load(&p).unwrap();
        assert_eq!(back, s);
        let mut fresh = store(4);
        fresh.load_into(&p).unwrap();
        assert_eq!(fresh.checksum(), s.checksum());
    }

    #[test]
    fn corrupted_container_rejected() {
        let s = store(3);
        let text = s.to_json();
        let v = s.get(s.id("w").unwrap())[0];
        let bad = text.replacen(&format!("{v}"), "0.125", 1);
        assert!(matches!(
            ParamStore::from_json(Path::new("x"), &bad),
            Err(NnError::Checksum { .. })
        ));
        assert!(ParamStore::from_json(Path::new("x"), "{}").is_err());
    }

    #[test]
    fn shape_mismatch_rejected_on_load() {
        let s = store(3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut other = ParamStore::new();
        other.add("w", 2, 3, Init::Zeros, &mut rng).unwrap();
        other.add("b", 3, 1, Init::Zeros, &mut rng).unwrap();
        assert!(matches!(other.assign_from(&s), Err(NnError::Shape(_))));
        let mut renamed = ParamStore::new();
        renamed.add("w", 3, 2, Init::Zeros, &mut rng).unwrap();
        renamed.add("bias", 3, 1, Init::Zeros, &mut rng).unwrap();
        assert!(renamed.assign_from(&s).is_err());
    }

    #[test]
    fn grads_arithmetic() {
        let s = store(0);
        let mut g = Grads::zeros_like(&s);
        g.get_mut(ParamId(0))[0] = 3.0;
        g.get_mut(ParamId(1))[2] = 4.0;
        assert_eq!(g.norm(), 5.0);
        let h = g.clone();
        g.add_assign(&h);
        g.scale(0.5);
        assert_eq!(g, h);
        g.clear();
        assert_eq!(g.norm(), 0.0);
    }
}
