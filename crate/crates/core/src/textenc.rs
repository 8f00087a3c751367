//! Text encoders producing word-level and sentence-level embeddings.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Lowercased, punctuation-stripped whitespace tokenization.
pub fn tokenize(prompt: &str) -> Result<Vec<String>> {
    let cleaned: String = prompt
        .chars()
        .map(|c| if c.is_alphanumeric() { c.to_lowercase().next().unwrap_or(c) } else { ' ' })
        .collect();
    let tokens: Vec<String> = cleaned.split_whitespace().map(str::to_string).collect();
    if tokens.is_empty() {
        return Err(Error::Encoder("prompt has no tokens".into()));
    }
    Ok(tokens)
}

/// Word rows (`L x d`, row-major) and the pooled sentence vector.
#[derive(Clone, Debug, PartialEq)]
pub struct TextEmbeddings<T> {
    pub tokens: Vec<String>,
    pub dim: usize,
    pub word: Vec<T>,
    pub sentence: Vec<T>,
}

impl<T: Scalar> TextEmbeddings<T> {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn word_row(&self, i: usize) -> &[T] {
        &self.word[i * self.dim..(i + 1) * self.dim]
    }

    pub fn cast<U: Scalar>(&self) -> TextEmbeddings<U> {
        let c = |v: &T| U::lit(v.to_f64_lossy());
        TextEmbeddings {
            tokens: self.tokens.clone(),
            dim: self.dim,
            word: self.word.iter().map(c).collect(),
            sentence: self.sentence.iter().map(c).collect(),
        }
    }

    /// Builds embeddings from word rows, mean-pooling the rows flagged as
    /// known and normalizing to unit length.
    pub fn mean_pooled(tokens: Vec<String>, dim: usize, word: Vec<T>, known: &[bool]) -> Self {
        let mut sentence = vec![T::zero(); dim];
        let mut n = 0usize;
        for (i, &k) in known.iter().enumerate() {
            if k {
                n += 1;
                for (s, w) in sentence.iter_mut().zip(&word[i * dim..(i + 1) * dim]) {
                    *s += *w;
                }
            }
        }
        let norm = sentence.iter().map(|v| *v * *v).sum::<T>().sqrt();
        if n > 0 && norm > T::zero() {
            for s in sentence.iter_mut() {
                *s /= norm;
            }
        }
        Self { tokens, dim, word, sentence }
    }
}

/// Contract shared by every text encoder. Encoders are immutable once built.
pub trait TextEncoder: Send + Sync {
    fn name(&self) -> String;
    fn width(&self) -> usize;
    fn encode(&self, prompt: &str) -> Result<TextEmbeddings<f64>>;
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic test encoder: every token maps to a pseudo-random Gaussian
/// row seeded by its hash.
#[derive(Clone, Debug)]
pub struct HashEncoder {
    dim: usize,
    seed: u64,
}

impl HashEncoder {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Encoder("hash encoder width must be positive".into()));
        }
        Ok(Self { dim, seed })
    }

    fn row(&self, token: &str) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(token.as_bytes()) ^ self.seed.rotate_left(17));
        let scale = 1.0 / (self.dim as f64).sqrt();
        (0..self.dim)
            .map(|_| {
                let v: f64 = StandardNormal.sample(&mut rng);
                v * scale
            })
            .collect()
    }
}

impl TextEncoder for HashEncoder {
    fn name(&self) -> String {
        format!("hash:{}:{}", self.dim, self.seed)
    }

    fn width(&self) -> usize {
        self.dim
    }

    fn encode(&self, prompt: &str) -> Result<TextEmbeddings<f64>> {
        let tokens = tokenize(prompt)?;
        let word: Vec<f64> = tokens.iter().flat_map(|t| self.row(t)).collect();
        let known = vec![true; tokens.len()];
        Ok(TextEmbeddings::mean_pooled(tokens, self.dim, word, &known))
    }
}

/// Static word-vector table (GloVe-style text file). Unknown tokens get a
/// zero row and are left out of the sentence mean.
#[derive(Clone, Debug)]
pub struct TableEncoder {
    dim: usize,
    source: PathBuf,
    table: HashMap<String, Vec<f64>>,
}

impl TableEncoder {
    /// Parses `token v1 ... vd` lines.
    pub fn load(path: &Path, dim: usize) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Encoder(format!("vocabulary file {}: {e}", path.display())))?;
        let mut table = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let values = parts
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| Error::Encoder(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
            if values.len() != dim {
                return Err(Error::Encoder(format!(
                    "{}:{}: expected {dim} values, found {}",
                    path.display(),
                    lineno + 1,
                    values.len()
                )));
            }
            table.insert(token.to_lowercase(), values);
        }
        Ok(Self {
            dim,
            source: path.to_path_buf(),
            table,
        })
    }

    pub fn from_table(dim: usize, table: HashMap<String, Vec<f64>>) -> Result<Self> {
        if table.values().any(|v| v.len() != dim) {
            return Err(Error::Encoder(format!("table rows must have width {dim}")));
        }
        Ok(Self {
            dim,
            source: PathBuf::new(),
            table,
        })
    }

    pub fn vocabulary_size(&self) -> usize {
        self.table.len()
    }

    pub fn table(&self) -> &HashMap<String, Vec<f64>> {
        &self.table
    }
}

impl TextEncoder for TableEncoder {
    fn name(&self) -> String {
        format!("table:{}:{}", self.dim, self.source.display())
    }

    fn width(&self) -> usize {
        self.dim
    }

    fn encode(&self, prompt: &str) -> Result<TextEmbeddings<f64>> {
        let tokens = tokenize(prompt)?;
        let mut word = Vec::with_capacity(tokens.len() * self.dim);
        let mut known = Vec::with_capacity(tokens.len());
        for t in &tokens {
            match self.table.get(t) {
                Some(row) => {
                    word.extend_from_slice(row);
                    known.push(true);
                }
                None => {
                    word.extend(std::iter::repeat(0.0).take(self.dim));
                    known.push(false);
                }
            }
        }
        Ok(TextEmbeddings::mean_pooled(tokens, self.dim, word, &known))
    }
}

/// Declarative encoder choice, parsed from `hash:<d>[:<seed>]`,
/// `table:<d>:<path>` or `external:<name>`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderSpec {
    Hash { dim: usize, seed: u64 },
    Table { dim: usize, path: PathBuf },
    External { name: String },
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec::Hash { dim: 32, seed: 0 }
    }
}

impl fmt::Display for EncoderSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EncoderSpec::Hash { dim, seed } => write!(f, "hash:{dim}:{seed}"),
            EncoderSpec::Table { dim, path } => write!(f, "table:{dim}:{}", path.display()),
            EncoderSpec::External { name } => write!(f, "external:{name}"),
        }
    }
}

impl FromStr for EncoderSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.splitn(3, ':');
        let kind = parts.next().unwrap_or_default();
        let num = |v: Option<&str>, what: &str| -> Result<u64> {
            v.ok_or_else(|| Error::Encoder(format!("`{s}`: missing {what}")))?
                .parse::<u64>()
                .map_err(|e| Error::Encoder(format!("`{s}`: bad {what}: {e}")))
        };
        match kind {
            "hash" => {
                let dim = num(parts.next(), "width")? as usize;
                let seed = match parts.next() {
                    Some(v) => num(Some(v), "seed")?,
                    None => 0,
                };
                Ok(EncoderSpec::Hash { dim, seed })
            }
            "table" => {
                let dim = num(parts.next(), "width")? as usize;
                let path = parts
                    .next()
                    .ok_or_else(|| Error::Encoder(format!("`{s}`: missing vocabulary path")))?;
                Ok(EncoderSpec::Table { dim, path: path.into() })
            }
            "external" => Ok(EncoderSpec::External {
                name: parts.collect::<Vec<_>>().join(":"),
            }),
            other => Err(Error::Encoder(format!("unknown encoder `{other}`"))),
        }
    }
}

/// Named external encoders (pretrained towers wrapped by the caller).
#[derive(Clone, Default)]
pub struct EncoderRegistry {
    external: HashMap<String, Arc<dyn TextEncoder>>,
}

impl EncoderRegistry {
    pub fn register(&mut self, name: impl Into<String>, enc: Arc<dyn TextEncoder>) {
        self.external.insert(name.into(), enc);
    }

    pub fn build(&self, spec: &EncoderSpec) -> Result<Arc<dyn TextEncoder>> {
        match spec {
            EncoderSpec::Hash { dim, seed } => Ok(Arc::new(HashEncoder::new(*dim, *seed)?)),
            EncoderSpec::Table { dim, path } => Ok(Arc::new(TableEncoder::load(path, *dim)?)),
            EncoderSpec::External { name } => self
                .external
                .get(name)
                .cloned()
                .ok_or_else(|| Error::Encoder(format!("unknown external encoder `{name}`"))),
        }
    }
}

/// Encoder choice plus whether its weights may be updated by training.
/// Built-in encoders are fixed tables, so only external adapters may set
/// `trainable`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub spec: EncoderSpec,
    #[serde(default)]
    pub trainable: bool,
}

impl EncoderConfig {
    pub fn build(&self, registry: &EncoderRegistry) -> Result<Arc<dyn TextEncoder>> {
        if self.trainable && !matches!(self.spec, EncoderSpec::External { .. }) {
            return Err(Error::Encoder(format!(
                "encoder `{}` is a fixed table and cannot be trained",
                self.spec
            )));
        }
        registry.build(&self.spec)
    }
}
