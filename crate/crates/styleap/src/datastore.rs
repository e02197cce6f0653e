//! The (vector key, sentence value) datastore: exact brute-force search,
//! an IVF approximate index, and a checksummed binary file format.
//!
//! File layout: magic `SAPD`, format version, metric tag, dimension,
//! entry count, style id, little-endian f32 key matrix, length-prefixed
//! UTF-8 values, trailing CRC32. The IVF index is not persisted; it is
//! rebuilt deterministically from its seed.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Sentence, StyledCorpus};
use crate::embedder::{EmbeddingProvider, SentenceVector};
use crate::error::{Error, Result};
use crate::util::crc32;

const MAGIC: &[u8; 4] = b"SAPD";
const VERSION: u32 = 1;

/// Distance metric, fixed when a store is built.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Cosine,
    L2,
}

impl Metric {
    pub fn distance(self, a: &SentenceVector, b: &SentenceVector) -> f32 {
        match self {
            Metric::Cosine => 1.0 - a.cosine(b),
            Metric::L2 => a.l2_distance(b),
        }
    }

    fn tag(self) -> u8 {
        match self {
            Metric::Cosine => 0,
            Metric::L2 => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Metric::Cosine),
            1 => Ok(Metric::L2),
            other => Err(Error::Format(format!("unknown metric tag {other}"))),
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Metric::Cosine),
            "l2" => Ok(Metric::L2),
            other => Err(Error::Config(format!("unknown metric {other:?}"))),
        }
    }
}

/// One retrieval hit: entry id, stored sentence, distance to the query.
#[derive(Clone, Debug)]
pub struct Hit {
    pub id: u32,
    pub value: Sentence,
    pub distance: f32,
}

/// Ordered retrieval result. `exhaustive` is true for exact search (or
/// IVF probing every list); `short` flags fewer hits than requested.
#[derive(Clone, Debug)]
pub struct QueryResult {
    pub hits: Vec<Hit>,
    pub exhaustive: bool,
    pub short: bool,
}

/// Inverted-file index: k-means centroids and one entry-id list per
/// centroid; only `nprobe` lists are scanned per query.
#[derive(Clone, Debug)]
pub struct IvfIndex {
    pub centroids: Vec<SentenceVector>,
    pub lists: Vec<Vec<u32>>,
    pub nprobe: usize,
}

/// Immutable collection of (key, value) entries with dense ids `0..n`.
#[derive(Clone, Debug)]
pub struct Datastore {
    style_id: String,
    metric: Metric,
    dim: usize,
    keys: Vec<SentenceVector>,
    values: Vec<Sentence>,
    ivf: Option<IvfIndex>,
}

impl Datastore {
    /// Build a store with one entry per corpus sentence, in corpus order.
    pub fn build(
        corpus: &StyledCorpus,
        provider: &dyn EmbeddingProvider,
        metric: Metric,
    ) -> Result<Self> {
        if corpus.sentences.is_empty() {
            return Err(Error::Config(format!(
                "cannot build datastore for style {:?} from an empty corpus",
                corpus.style_id
            )));
        }
        let keys = provider.embed_batch(&corpus.sentences);
        Ok(Datastore {
            style_id: corpus.style_id.clone(),
            metric,
            dim: provider.dimension(),
            keys,
            values: corpus.sentences.clone(),
            ivf: None,
        })
    }

    /// Assemble a store from precomputed parts (used by the pool builder).
    pub fn from_parts(
        style_id: impl Into<String>,
        metric: Metric,
        dim: usize,
        keys: Vec<SentenceVector>,
        values: Vec<Sentence>,
    ) -> Result<Self> {
        if keys.len() != values.len() || keys.is_empty() {
            return Err(Error::Config("keys/values must be non-empty and equal-length".into()));
        }
        if keys.iter().any(|k| k.dim() != dim) {
            return Err(Error::Config("all keys must share one dimension".into()));
        }
        Ok(Datastore {
            style_id: style_id.into(),
            metric,
            dim,
            keys,
            values,
            ivf: None,
        })
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn style_id(&self) -> &str {
        &self.style_id
    }

    pub fn value(&self, id: u32) -> Option<&Sentence> {
        self.values.get(id as usize)
    }

    pub fn values(&self) -> &[Sentence] {
        &self.values
    }

    pub fn keys(&self) -> &[SentenceVector] {
        &self.keys
    }

    pub fn ivf(&self) -> Option<&IvfIndex> {
        self.ivf.as_ref()
    }

    fn check_query(&self, h: &SentenceVector, k: usize) -> Result<()> {
        if h.dim() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: h.dim(),
            });
        }
        if k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        Ok(())
    }

    fn top_k(
        &self,
        candidates: impl Iterator<Item = u32>,
        h: &SentenceVector,
        k: usize,
        exclude: &HashSet<u32>,
    ) -> Vec<Hit> {
        let mut scored: Vec<(f32, u32)> = candidates
            .filter(|id| !exclude.contains(id))
            .map(|id| (self.metric.distance(h, &self.keys[id as usize]), id))
            .collect();
        scored.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        scored
            .into_iter()
            .take(k)
            .map(|(distance, id)| Hit {
                id,
                value: self.values[id as usize].clone(),
                distance,
            })
            .collect()
    }

    /// Exact search: the k globally smallest-distance entries, ties broken
    /// by smaller id, excluded ids never returned.
    pub fn query(&self, h: &SentenceVector, k: usize, exclude: &HashSet<u32>) -> Result<QueryResult> {
        self.check_query(h, k)?;
        let hits = self.top_k(0..self.len() as u32, h, k, exclude);
        Ok(QueryResult {
            short: hits.len() < k,
            exhaustive: true,
            hits,
        })
    }

    /// Approximate search through the IVF index (errors if none is built).
    pub fn query_approx(
        &self,
        h: &SentenceVector,
        k: usize,
        exclude: &HashSet<u32>,
    ) -> Result<QueryResult> {
        self.check_query(h, k)?;
        let ivf = self
            .ivf
            .as_ref()
            .ok_or_else(|| Error::Config("no IVF index built for this store".into()))?;
        let mut ranked: Vec<(f32, usize)> = ivf
            .centroids
            .iter()
            .enumerate()
            .map(|(i, c)| (self.metric.distance(h, c), i))
            .collect();
        ranked.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let nprobe = ivf.nprobe.min(ivf.centroids.len());
        let candidates = ranked[..nprobe]
            .iter()
            .flat_map(|&(_, ci)| ivf.lists[ci].iter().copied())
            .collect::<Vec<u32>>();
        let hits = self.top_k(candidates.into_iter(), h, k, exclude);
        Ok(QueryResult {
            short: hits.len() < k,
            exhaustive: nprobe == ivf.centroids.len(),
            hits,
        })
    }

    /// Build the IVF index: k-means++ seeding, `iters` Lloyd iterations,
    /// deterministic under `seed`. Every entry lands in exactly one list.
    pub fn build_ivf(&mut self, k_c: usize, iters: usize, nprobe: usize, seed: u64) -> Result<()> {
        let n = self.len();
        if k_c == 0 || k_c > n {
            return Err(Error::Config(format!(
                "k_c must be in 1..={n}, got {k_c}"
            )));
        }
        if nprobe == 0 || nprobe > k_c {
            return Err(Error::Config(format!(
                "nprobe must be in 1..={k_c}, got {nprobe}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut centroids = kmeans_pp_seed(&self.keys, k_c, &mut rng);
        let mut assignment = vec![0usize; n];
        for _ in 0..iters {
            for (i, key) in self.keys.iter().enumerate() {
                assignment[i] = nearest_centroid(key, &centroids);
            }
            let mut sums = vec![vec![0.0f64; self.dim]; k_c];
            let mut counts = vec![0usize; k_c];
            for (i, key) in self.keys.iter().enumerate() {
                let c = assignment[i];
                counts[c] += 1;
                for (s, v) in sums[c].iter_mut().zip(&key.values) {
                    *s += f64::from(*v);
                }
            }
            for c in 0..k_c {
                if counts[c] == 0 {
                    continue; // empty cluster keeps its centroid
                }
                let inv = 1.0 / counts[c] as f64;
                let mean: Vec<f32> = sums[c].iter().map(|s| (s * inv) as f32).collect();
                centroids[c] = SentenceVector::new(mean);
            }
        }
        let mut lists = vec![Vec::new(); k_c];
        for (i, key) in self.keys.iter().enumerate() {
            lists[nearest_centroid(key, &centroids)].push(i as u32);
        }
        self.ivf = Some(IvfIndex {
            centroids,
            lists,
            nprobe,
        });
        Ok(())
    }

    /// Serialize to the binary datastore format.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.metric.tag());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.style_id.len() as u32).to_le_bytes());
        out.extend_from_slice(self.style_id.as_bytes());
        for key in &self.keys {
            for v in &key.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for value in &self.values {
            let bytes = value.text.as_bytes();
            out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
            out.extend_from_slice(bytes);
        }
        let crc = crc32(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        if data.len() < 4 + 4 + 1 + 4 + 8 + 4 + 4 {
            return Err(Error::Format("datastore file truncated".into()));
        }
        let (body, crc_bytes) = data.split_at(data.len() - 4);
        let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
        let computed = crc32(body);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        let mut r = Reader { data: body, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::Format("bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported datastore version {version} (expected {VERSION})"
            )));
        }
        let metric = Metric::from_tag(r.u8()?)?;
        let dim = r.u32()? as usize;
        let n = r.u64()? as usize;
        let style_len = r.u32()? as usize;
        let style_id = String::from_utf8(r.take(style_len)?.to_vec())
            .map_err(|e| Error::Format(format!("style id: {e}")))?;
        let mut keys = Vec::with_capacity(n);
        for _ in 0..n {
            let raw = r.take(dim * 4)?;
            let values: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            keys.push(SentenceVector::new(values));
        }
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            let len = r.u32()? as usize;
            let text = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|e| Error::Format(format!("value: {e}")))?;
            values.push(Sentence::new(text));
        }
        if r.pos != body.len() {
            return Err(Error::Format("trailing bytes in datastore file".into()));
        }
        Ok(Datastore {
            style_id,
            metric,
            dim,
            keys,
            values,
            ivf: None,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let data = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&data)
    }

    /// CRC32 of the serialized store body (the same value stored in the
    /// file trailer), recorded in dataset sidecars.
    pub fn checksum(&self) -> u32 {
        let bytes = self.to_bytes();
        crc32(&bytes[..bytes.len() - 4])
    }
}

fn nearest_centroid(key: &SentenceVector, centroids: &[SentenceVector]) -> usize {
    let mut best = (f32::INFINITY, 0usize);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_l2(&key.values, &c.values);
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

fn sq_l2(a: &[f32], b: &[f32]) -> f32 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// k-means++ seeding: first centroid uniform, the rest D²-sampled.
fn kmeans_pp_seed(keys: &[SentenceVector], k: usize, rng: &mut ChaCha8Rng) -> Vec<SentenceVector> {
    let mut centroids = Vec::with_capacity(k);
    let first = rng.gen_range(0..keys.len());
    centroids.push(keys[first].clone());
    let mut dists: Vec<f32> = keys
        .iter()
        .map(|key| sq_l2(&key.values, &centroids[0].values))
        .collect();
    while centroids.len() < k {
        let total: f64 = dists.iter().map(|&d| f64::from(d)).sum();
        let pick = if total <= 0.0 {
            rng.gen_range(0..keys.len())
        } else {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = keys.len() - 1;
            for (i, &d) in dists.iter().enumerate() {
                target -= f64::from(d);
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        centroids.push(keys[pick].clone());
        for (i, key) in keys.iter().enumerate() {
            let d = sq_l2(&key.values, &keys[pick].values);
            if d < dists[i] {
                dists[i] = d;
            }
        }
    }
    centroids
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Format("datastore file truncated".into()));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
