//! Token embeddings: a trainable lookup table, or precomputed per-example
//! vectors loaded from a manifest plus raw little-endian `f32` blob.
//!
//! Vector directory layout:
//!
//! ```text
//! manifest.json  {"<example id>": {"offset": <byte offset>, "len": L, "dim": d}, ...}
//! vectors.bin    L*d little-endian f32 values per example, row-major, at its offset
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{EmbeddingKind, EmbeddingProviderConfig};
use crate::data::{Batch, PAD_TOKEN};
use crate::error::{Error, Result};
use crate::layers;
use crate::substrate::{Graph, ParamGroup, ParamId, ParamStore, Scalar, Tensor, Var};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const VECTORS_FILE: &str = "vectors.bin";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VectorEntry {
    pub offset: u64,
    pub len: usize,
    pub dim: usize,
}

/// Precomputed contextual vectors keyed by example id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VectorStore {
    entries: BTreeMap<String, VectorEntry>,
    blob: Vec<u8>,
}

impl VectorStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an `[L x d]` matrix for `id`.
    pub fn insert(&mut self, id: &str, matrix: &Tensor<f32>) -> Result<()> {
        if matrix.rank() != 2 {
            return Err(Error::shape("vector matrix must be [L x d]"));
        }
        let entry = VectorEntry {
            offset: self.blob.len() as u64,
            len: matrix.shape()[0],
            dim: matrix.shape()[1],
        };
        for v in matrix.data() {
            self.blob.extend_from_slice(&v.to_le_bytes());
        }
        self.entries.insert(id.to_string(), entry);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<Tensor<f32>> {
        let e = self
            .entries
            .get(id)
            .ok_or_else(|| Error::Load(format!("no precomputed vectors for example {id:?}")))?;
        let start = e.offset as usize;
        let end = start + e.len * e.dim * 4;
        let bytes = self.blob.get(start..end).ok_or_else(|| {
            Error::Load(format!("vectors for example {id:?} run past the end of {VECTORS_FILE}"))
        })?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Tensor::new(vec![e.len, e.dim], data)
            .map_err(|err| Error::Load(format!("example {id:?}: {err}")))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = dir.join(MANIFEST_FILE);
        fs::write(&manifest, serde_json::to_vec_pretty(&self.entries)?).map_err(|e| Error::io(&manifest, e))?;
        let blob = dir.join(VECTORS_FILE);
        fs::write(&blob, &self.blob).map_err(|e| Error::io(&blob, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest = dir.join(MANIFEST_FILE);
        let text = fs::read(&manifest).map_err(|e| Error::io(&manifest, e))?;
        let entries: BTreeMap<String, VectorEntry> = serde_json::from_slice(&text)
            .map_err(|e| Error::Load(format!("{}: {e}", manifest.display())))?;
        let blob_path = dir.join(VECTORS_FILE);
        let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
        Ok(VectorStore { entries, blob })
    }
}

/// Where token vectors come from for a model.
#[derive(Clone, Debug)]
pub enum Embedder {
    Learned { table: ParamId },
    Frozen { store: Arc<VectorStore>, dim: usize },
}

impl Embedder {
    /// Registers a `uniform(-0.1, 0.1)` table with a zero PAD row, or loads
    /// the vector file.
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        cfg: &EmbeddingProviderConfig,
        vocab_size: usize,
    ) -> Result<Self> {
        match cfg.kind {
            EmbeddingKind::LearnedStatic => {
                let mut table = layers::uniform::<T>(rng, &[vocab_size, cfg.dim], 0.1);
                table.data_mut()[PAD_TOKEN * cfg.dim..(PAD_TOKEN + 1) * cfg.dim].fill(T::zero());
                let id = store.insert("embedding.table", table, ParamGroup::Embedding)?;
                store.get_mut(id).trainable = cfg.trainable;
                Ok(Embedder::Learned { table: id })
            }
            EmbeddingKind::FrozenFile => {
                let dir = cfg
                    .file
                    .as_ref()
                    .ok_or_else(|| Error::config("frozen_file embeddings need a file"))?;
                Ok(Embedder::Frozen {
                    store: Arc::new(VectorStore::load(dir)?),
                    dim: cfg.dim,
                })
            }
        }
    }

    /// `[B x L_max x d]` embeddings; padding rows are zero.
    pub fn embed<T: Scalar>(&self, g: &mut Graph<T>, p: &ParamStore<T>, batch: &Batch) -> Result<Var> {
        let (b, l) = (batch.batch_size(), batch.max_len);
        match self {
            Embedder::Learned { table } => {
                let t = g.param(p, *table);
                g.embedding(t, &batch.token_ids, &[b, l], Some(PAD_TOKEN))
            }
            Embedder::Frozen { store, dim } => {
                let mut data = vec![T::zero(); b * l * dim];
                for (r, id) in batch.ids.iter().enumerate() {
                    let m = store.get(id)?;
                    if m.shape() != [batch.lengths[r], *dim] {
                        return Err(Error::Load(format!(
                            "example {id:?}: stored vectors are {:?}, expected [{}, {dim}]",
                            m.shape(),
                            batch.lengths[r]
                        )));
                    }
                    for (dst, &src) in data[r * l * dim..].iter_mut().zip(m.data()) {
                        *dst = T::of(src as f64);
                    }
                }
                Ok(g.constant(Tensor::new(vec![b, l, *dim], data)?))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{encode_batch, Example, LabelMaps};
    use rand::SeedableRng;

    fn batch() -> (LabelMaps, Batch) {
        let mut ex = Example::new(&["hi", "hi"], &["O", "O"], "greet");
        ex.id = Some("a".into());
        let mut short = Example::new(&["hi"], &["O"], "greet");
        short.id = Some("b".into());
        let maps = LabelMaps::build(&[ex.clone()]).unwrap();
        let b = encode_batch(&[ex, short], &maps, false).unwrap();
        (maps, b)
    }

    #[test]
    fn learned_lookup_repeats_rows_and_zeroes_padding() {
        let (maps, b) = batch();
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = EmbeddingProviderConfig {
            dim: 3,
            ..Default::default()
        };
        let emb = Embedder::new(&mut store, &mut rng, &cfg, maps.vocab_size()).unwrap();
        let mut g = Graph::new();
        let x = emb.embed(&mut g, &store, &b).unwrap();
        let v = g.value(x);
        assert_eq!(v.shape(), &[2, 2, 3]);
        assert_eq!(v.row(0), v.row(1));
        assert!(v.row(0).iter().any(|&x| x != 0.0));
        assert_eq!(v.row(3), &[0.0; 3]);
        assert!(store.by_name("embedding.table").unwrap().value.data().iter().all(|x| x.abs() <= 0.1));
    }

    #[test]
    fn frozen_vectors_pass_through() {
        let (_, b) = batch();
        let dir = tempfile::tempdir().unwrap();
        let mut vs = VectorStore::new();
        let a = Tensor::new(vec![2, 3], vec![1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        vs.insert("a", &a).unwrap();
        vs.insert("b", &Tensor::new(vec![1, 3], vec![7.0f32, 8.0, 9.0]).unwrap()).unwrap();
        vs.save(dir.path()).unwrap();
        let loaded = VectorStore::load(dir.path()).unwrap();
        assert_eq!(loaded, vs);
        assert_eq!(loaded.get("a").unwrap(), a);

        let emb = Embedder::Frozen {
            store: Arc::new(loaded),
            dim: 3,
        };
        let mut g = Graph::<f32>::new();
        let store = ParamStore::new();
        let x = emb.embed(&mut g, &store, &b).unwrap();
        assert_eq!(
            g.value(x).data(),
            &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn frozen_vectors_missing_or_mismatched() {
        let (_, b) = batch();
        let mut vs = VectorStore::new();
        vs.insert("a", &Tensor::zeros(&[2, 3])).unwrap();
        let emb = Embedder::Frozen { store: Arc::new(vs.clone()), dim: 3 };
        let err = emb.embed(&mut Graph::<f32>::new(), &ParamStore::new(), &b).unwrap_err();
        assert!(err.to_string().contains("\"b\""), "{err}");

        vs.insert("b", &Tensor::zeros(&[1, 4])).unwrap();
        let emb = Embedder::Frozen { store: Arc::new(vs), dim: 3 };
        let err = emb.embed(&mut Graph::<f32>::new(), &ParamStore::new(), &b).unwrap_err();
        assert!(matches!(err, Error::Load(_)));
    }
}
