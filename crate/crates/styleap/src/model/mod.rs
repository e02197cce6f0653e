//! A small encoder-decoder transformer trained from scratch.
//!
//! Post-layer-norm blocks, sinusoidal positions, tied input/output
//! embeddings, label smoothing. Training runs the autograd tape over
//! ragged row-stacked batches; inference uses a separate incremental
//! decoder with cached keys and values that is checked against the tape
//! forward pass by an exact-logits test.

mod decode;
mod gradcheck;
mod tape;
mod train;
mod transformer;

pub use decode::{AttentionTrace, DecodeOptions, Decoder};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use tape::{softmax_rows, NodeId, RowBlock, Tape};
pub use train::{train, Dataset, TrainConfig, TrainStats};
pub use transformer::ForwardPass;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::TokenId;
use crate::error::{Error, Result};
use crate::util::crc32;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub label_smoothing: f64,
    pub max_positions: usize,
}

impl ModelConfig {
    /// Desk-scale defaults sized for CPU training.
    pub fn small(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            enc_layers: 2,
            dec_layers: 2,
            model_dim: 64,
            heads: 4,
            ffn_dim: 256,
            dropout: 0.1,
            label_smoothing: 0.1,
            max_positions: 256,
        }
    }

    /// Tiny configuration for gradient checking and fast tests.
    pub fn tiny(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            enc_layers: 1,
            dec_layers: 1,
            model_dim: 8,
            heads: 2,
            ffn_dim: 16,
            dropout: 0.0,
            label_smoothing: 0.1,
            max_positions: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.model_dim == 0 || self.model_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "model_dim {} must be a positive multiple of heads {}",
                self.model_dim, self.heads
            )));
        }
        if self.vocab_size < 5 {
            return Err(Error::Config("vocab too small for special tokens".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} out of range", self.dropout)));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::Config(format!(
                "label_smoothing {} out of range",
                self.label_smoothing
            )));
        }
        Ok(())
    }
}

/// Named parameter tensors in a fixed registration order.
#[derive(Clone, Debug)]
pub struct ParamSet {
    pub names: Vec<String>,
    pub tensors: Vec<Array2<f64>>,
    index: BTreeMap<String, usize>,
}

impl ParamSet {
    fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            tensors: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    fn add(&mut self, name: String, tensor: Array2<f64>) -> usize {
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let pid = self.tensors.len();
        self.index.insert(name.clone(), pid);
        self.names.push(name);
        self.tensors.push(tensor);
        pid
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn id(&self, name: &str) -> usize {
        *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get(&self, name: &str) -> &Array2<f64> {
        &self.tensors[self.id(name)]
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn zeros_like(&self) -> Vec<Array2<f64>> {
        self.tensors.iter().map(|t| Array2::zeros(t.dim())).collect()
    }
}

/// The trained translation model: configuration plus parameters.
#[derive(Clone, Debug)]
pub struct TranslationModel {
    pub config: ModelConfig,
    pub params: ParamSet,
}

const CKPT_MAGIC: &[u8; 4] = b"SAPM";
const CKPT_VERSION: u8 = 1;

impl TranslationModel {
    /// Fresh model with seeded uniform initialisation.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let d = config.model_dim;
        let f = config.ffn_dim;
        let v = config.vocab_size;

        let weight =
            |params: &mut ParamSet, rng: &mut ChaCha8Rng, name: String, rows: usize, cols: usize| {
                let bound = (6.0 / (rows + cols) as f64).sqrt();
                let t = Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound));
                params.add(name, t);
            };

        // Tied embedding table, also the output projection.
        weight(&mut params, &mut rng, "embed".into(), v, d);

        let norm = |params: &mut ParamSet, prefix: &str| {
            params.add(format!("{prefix}.g"), Array2::ones((1, d)));
            params.add(format!("{prefix}.b"), Array2::zeros((1, d)));
        };
        let attn = |params: &mut ParamSet, rng: &mut ChaCha8Rng, prefix: &str| {
            let bound = (6.0 / (2 * d) as f64).sqrt();
            for w in ["wq", "wk", "wv", "wo"] {
                let t = Array2::from_shape_fn((d, d), |_| rng.gen_range(-bound..bound));
                params.add(format!("{prefix}.{w}"), t);
            }
        };

        for l in 0..config.enc_layers {
            attn(&mut params, &mut rng, &format!("enc{l}.attn"));
            norm(&mut params, &format!("enc{l}.ln1"));
            weight(&mut params, &mut rng, format!("enc{l}.ffn.w1"), d, f);
            params.add(format!("enc{l}.ffn.b1"), Array2::zeros((1, f)));
            weight(&mut params, &mut rng, format!("enc{l}.ffn.w2"), f, d);
            params.add(format!("enc{l}.ffn.b2"), Array2::zeros((1, d)));
            norm(&mut params, &format!("enc{l}.ln2"));
        }
        for l in 0..config.dec_layers {
            attn(&mut params, &mut rng, &format!("dec{l}.self"));
            norm(&mut params, &format!("dec{l}.ln1"));
            attn(&mut params, &mut rng, &format!("dec{l}.cross"));
            norm(&mut params, &format!("dec{l}.ln2"));
            weight(&mut params, &mut rng, format!("dec{l}.ffn.w1"), d, f);
            params.add(format!("dec{l}.ffn.b1"), Array2::zeros((1, f)));
            weight(&mut params, &mut rng, format!("dec{l}.ffn.w2"), f, d);
            params.add(format!("dec{l}.ffn.b2"), Array2::zeros((1, d)));
            norm(&mut params, &format!("dec{l}.ln3"));
        }

        Ok(TranslationModel { config, params })
    }

    /// Sinusoidal positional encoding rows for the given positions.
    pub fn positions(&self, positions: impl Iterator<Item = usize>) -> Array2<f64> {
        let d = self.config.model_dim;
        let pos: Vec<usize> = positions.collect();
        let mut out = Array2::zeros((pos.len(), d));
        for (r, &p) in pos.iter().enumerate() {
            for i in 0..d / 2 {
                let angle = p as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
                out[[r, 2 * i]] = angle.sin();
                out[[r, 2 * i + 1]] = angle.cos();
            }
        }
        out
    }

    pub fn validate_tokens(&self, ids: &[TokenId]) -> Result<()> {
        for &id in ids {
            if id as usize >= self.config.vocab_size {
                return Err(Error::Config(format!(
                    "token id {id} out of vocabulary range {}",
                    self.config.vocab_size
                )));
            }
        }
        Ok(())
    }

    /// Binary checkpoint: JSON header, raw little-endian f64 tensors in
    /// registration order, trailing CRC32 over everything before it.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        #[derive(Serialize)]
        struct Header<'a> {
            config: &'a ModelConfig,
            names: &'a [String],
            shapes: Vec<(usize, usize)>,
        }
        let header = Header {
            config: &self.config,
            names: &self.params.names,
            shapes: self.params.tensors.iter().map(|t| t.dim()).collect(),
        };
        let header_json =
            serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(CKPT_MAGIC);
        out.push(CKPT_VERSION);
        out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
        out.extend_from_slice(&header_json);
        for t in &self.params.tensors {
            for x in t.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let crc = crc32(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            config: ModelConfig,
            names: Vec<String>,
            shapes: Vec<(usize, usize)>,
        }
        if bytes.len() < 13 || &bytes[..4] != CKPT_MAGIC {
            return Err(Error::Format("not a model checkpoint".into()));
        }
        if bytes[4] != CKPT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {}", bytes[4])));
        }
        let body_len = bytes.len() - 4;
        let stored = u32::from_le_bytes(bytes[body_len..].try_into().unwrap());
        let computed = crc32(&bytes[..body_len]);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        let hlen = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let hend = 9 + hlen;
        if hend > body_len {
            return Err(Error::Format("truncated checkpoint header".into()));
        }
        let header: Header = serde_json::from_slice(&bytes[9..hend])
            .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        header.config.validate()?;
        if header.names.len() != header.shapes.len() {
            return Err(Error::Format("checkpoint name/shape mismatch".into()));
        }
        let mut offset = hend;
        let mut params = ParamSet::new();
        for (name, (r, c)) in header.names.into_iter().zip(header.shapes) {
            let n = r * c;
            let end = offset + n * 8;
            if end > body_len {
                return Err(Error::Format("truncated checkpoint tensors".into()));
            }
            let mut data = Vec::with_capacity(n);
            for chunk in bytes[offset..end].chunks_exact(8) {
                data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
            }
            offset = end;
            let t = Array2::from_shape_vec((r, c), data)
                .map_err(|e| Error::Format(e.to_string()))?;
            params.add(name, t);
        }
        if offset != body_len {
            return Err(Error::Format("trailing bytes in checkpoint".into()));
        }
        Ok(TranslationModel {
            config: header.config,
            params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_parameters() {
        let a = TranslationModel::new(ModelConfig::tiny(20), 7).unwrap();
        let b = TranslationModel::new(ModelConfig::tiny(20), 7).unwrap();
        for (x, y) in a.params.tensors.iter().zip(&b.params.tensors) {
            assert_eq!(x, y);
        }
        let c = TranslationModel::new(ModelConfig::tiny(20), 8).unwrap();
        assert_ne!(a.params.get("embed"), c.params.get("embed"));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let m = TranslationModel::new(ModelConfig::tiny(30), 11).unwrap();
        let bytes = m.to_bytes().unwrap();
        let back = TranslationModel::from_bytes(&bytes).unwrap();
        assert_eq!(back.config, m.config);
        assert_eq!(back.params.names, m.params.names);
        for (a, b) in m.params.tensors.iter().zip(&back.params.tensors) {
            assert_eq!(a, b);
        }
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn corrupted_checkpoint_fails_checksum() {
        let m = TranslationModel::new(ModelConfig::tiny(30), 11).unwrap();
        let mut bytes = m.to_bytes().unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(
            TranslationModel::from_bytes(&bytes),
            Err(Error::Checksum { .. })
        ));
    }

    #[test]
    fn config_validation_rejects_bad_dims() {
        let mut c = ModelConfig::small(100);
        c.model_dim = 10; // not divisible by 4 heads
        assert!(c.validate().is_err());
        let mut c2 = ModelConfig::small(100);
        c2.dropout = 1.5;
        assert!(c2.validate().is_err());
    }

    #[test]
    fn positions_alternate_sin_cos() {
        let m = TranslationModel::new(ModelConfig::tiny(20), 1).unwrap();
        let p = m.positions([0usize, 1].into_iter());
        assert_eq!(p[[0, 0]], 0.0);
        assert_eq!(p[[0, 1]], 1.0);
        assert!((p[[1, 0]] - 1f64.sin()).abs() < 1e-12);
    }
}
