//! Named parameter storage, tape binding and the checkpoint archive.
//!
//! Checkpoints are a single file: magic, a JSON manifest (format version,
//! codec mode, architecture dims, entropy-coding constants, entry shapes) and
//! the raw little-endian `f64` blob. The SHA-256 of the blob keys bitstream
//! compatibility checks.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;
use std::rc::Rc;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autograd::{Arr, Tape, Var};

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint format version {0}")]
    BadVersion(u32),
    #[error("malformed manifest: {0}")]
    BadManifest(String),
    #[error("blob length {got} does not match manifest total {want}")]
    BlobLength { got: usize, want: usize },
}

const MAGIC: &[u8; 4] = b"LVCK";
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Handle to one parameter in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

impl ParamId {
    /// Index into the store's definition order.
    pub fn index(self) -> usize {
        self.0
    }

    pub(crate) fn from_index(idx: usize) -> ParamId {
        ParamId(idx)
    }
}

struct Entry {
    name: String,
    value: Rc<Arr>,
}

/// Ordered, named parameter set. Definition order is the serialization
/// order, so network construction must be deterministic.
#[derive(Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn define(&mut self, name: &str, value: Arr) -> ParamId {
        assert!(
            !self.index.contains_key(name),
            "parameter {name} defined twice"
        );
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(Entry {
            name: name.to_string(),
            value: Rc::new(value),
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Rc<Arr> {
        &self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn set(&mut self, id: ParamId, value: Arr) {
        assert_eq!(
            value.dim(),
            self.entries[id.0].value.dim(),
            "parameter {} shape changed",
            self.entries[id.0].name
        );
        self.entries[id.0].value = Rc::new(value);
    }

    /// Apply an in-place update to one parameter.
    pub fn update(&mut self, id: ParamId, f: impl FnOnce(&mut Arr)) {
        let entry = &mut self.entries[id.0];
        let arr = Rc::make_mut(&mut entry.value);
        f(arr);
    }

    /// Inject every parameter into a tape as a leaf.
    pub fn bind(&self, tape: &Tape) -> ParamBinding {
        ParamBinding {
            vars: self
                .entries
                .iter()
                .map(|e| tape.leaf_shared(Rc::clone(&e.value)))
                .collect(),
        }
    }

    /// Deep copy of all parameter values, for divergence recovery.
    pub fn snapshot(&self) -> Vec<Arr> {
        self.entries.iter().map(|e| (*e.value).clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Arr]) {
        assert_eq!(snapshot.len(), self.entries.len());
        for (entry, value) in self.entries.iter_mut().zip(snapshot) {
            entry.value = Rc::new(value.clone());
        }
    }

    /// Serialize all values little-endian in definition order.
    pub fn to_blob(&self) -> Vec<u8> {
        let total: usize = self.entries.iter().map(|e| e.value.len() * 8).sum();
        let mut blob = Vec::with_capacity(total);
        for e in &self.entries {
            for &v in e.value.iter() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        blob
    }

    /// SHA-256 of the serialized blob.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(self.to_blob());
        hasher.finalize().into()
    }

    pub fn load_blob(&mut self, blob: &[u8]) -> Result<(), CheckpointError> {
        let want: usize = self.entries.iter().map(|e| e.value.len() * 8).sum();
        if blob.len() != want {
            return Err(CheckpointError::BlobLength { got: blob.len(), want });
        }
        let mut off = 0usize;
        for entry in &mut self.entries {
            let arr = Rc::make_mut(&mut entry.value);
            for v in arr.iter_mut() {
                let mut buf = [0u8; 8];
                buf.copy_from_slice(&blob[off..off + 8]);
                *v = f64::from_le_bytes(buf);
                off += 8;
            }
        }
        Ok(())
    }
}

/// Tape leaves for every parameter of a store, for one forward pass.
pub struct ParamBinding {
    vars: Vec<Var>,
}

impl ParamBinding {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Manifest header stored in front of the parameter blob.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    /// Codec mode label (which networks exist).
    pub mode: String,
    /// Architecture dims needed to rebuild the parameter layout.
    pub arch: super::transforms::ArchConfig,
    pub sigma_min: f64,
    pub cdf_precision: u32,
    pub entries: Vec<EntrySpec>,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EntrySpec {
    pub name: String,
    pub shape: [usize; 3],
}

impl CheckpointManifest {
    pub fn describe(mode: &str, arch: super::transforms::ArchConfig, store: &ParamStore) -> Self {
        CheckpointManifest {
            format_version: CHECKPOINT_FORMAT_VERSION,
            mode: mode.to_string(),
            arch,
            sigma_min: super::entropy::SIGMA_MIN,
            cdf_precision: super::entropy::CDF_PRECISION,
            entries: store
                .ids()
                .map(|id| {
                    let d = store.value(id).dim();
                    EntrySpec {
                        name: store.name(id).to_string(),
                        shape: [d.0, d.1, d.2],
                    }
                })
                .collect(),
        }
    }
}

/// Write manifest + blob to `path`.
pub fn save_checkpoint(
    path: impl AsRef<Path>,
    manifest: &CheckpointManifest,
    store: &ParamStore,
) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    let json = serde_json::to_vec(manifest)
        .map_err(|e| CheckpointError::BadManifest(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_be_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&store.to_blob());
    std::fs::write(path, out).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Read a checkpoint file into its manifest and raw blob.
pub fn read_checkpoint(
    path: impl AsRef<Path>,
) -> Result<(CheckpointManifest, Vec<u8>), CheckpointError> {
    let path = path.as_ref();
    let mut file = std::fs::File::open(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    if bytes.len() < 8 || &bytes[0..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let json_len = u32::from_be_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + json_len {
        return Err(CheckpointError::BadManifest("manifest truncated".into()));
    }
    let manifest: CheckpointManifest = serde_json::from_slice(&bytes[8..8 + json_len])
        .map_err(|e| CheckpointError::BadManifest(e.to_string()))?;
    if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(CheckpointError::BadVersion(manifest.format_version));
    }
    Ok((manifest, bytes[8 + json_len..].to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn define_bind_and_update() {
        let mut store = ParamStore::new();
        let a = store.define("w", Arr::from_elem((2, 1, 1), 1.5));
        let b = store.define("b", Arr::zeros((1, 1, 1)));
        assert_eq!(store.len(), 2);
        assert_eq!(store.name(a), "w");
        assert_eq!(store.id_of("b"), Some(b));

        let tape = Tape::new();
        let bind = store.bind(&tape);
        assert_eq!(*tape.value(bind.var(a)), *store.value(a).as_ref());

        store.update(b, |arr| arr[(0, 0, 0)] = 3.0);
        assert_eq!(store.value(b)[(0, 0, 0)], 3.0);
    }

    #[test]
    fn blob_round_trips_and_hash_tracks_content() {
        let mut store = ParamStore::new();
        store.define("x", ndarray::arr3(&[[[1.0, -2.0]], [[0.25, 9.0]]]));
        let id = store.define("y", Arr::from_elem((1, 1, 1), 7.0));
        let blob = store.to_blob();
        let h1 = store.content_hash();

        let mut store2 = ParamStore::new();
        store2.define("x", Arr::zeros((2, 1, 2)));
        store2.define("y", Arr::zeros((1, 1, 1)));
        store2.load_blob(&blob).unwrap();
        assert_eq!(store2.content_hash(), h1);
        assert_eq!(store2.value(ParamId(0))[(0, 0, 1)], -2.0);

        store.update(id, |arr| arr[(0, 0, 0)] = 8.0);
        assert_ne!(store.content_hash(), h1);
    }

    #[test]
    fn bad_blob_length_is_rejected() {
        let mut store = ParamStore::new();
        store.define("x", Arr::zeros((1, 1, 3)));
        assert!(matches!(
            store.load_blob(&[0u8; 5]),
            Err(CheckpointError::BlobLength { got: 5, want: 24 })
        ));
    }
}
