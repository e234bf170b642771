//! Hashed bag-of-n-grams encoder with a two-layer tanh projection.
//!
//! Two scoring modes share this module:
//! - dual encoder: query and document are encoded independently;
//! - dual cross encoder: the document side encodes `query + [SEP] + document`.
//!
//! The same [`Tower`] type backs both sides. With `tie_params` the document
//! side reads the query tower's parameters.

mod checkpoint;
mod features;
mod tower;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::tokenize;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use features::{Symbol, FEATURE_SEPARATOR};
pub use tower::{Tower, TowerGrad, Trace};

/// Floating point type the encoder can run in. Training uses `f32`; gradient
/// verification uses `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Default
    + Debug
    + Send
    + Sync
    + 'static
{
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable")
    }
    fn as_f64(self) -> f64 {
        self.to_f64().expect("representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    pub hash_buckets: usize,
    pub ngram_orders: Vec<usize>,
    pub tie_params: bool,
    pub max_query_tokens: usize,
    pub max_doc_tokens: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            embed_dim: 128,
            hash_buckets: 1 << 18,
            ngram_orders: vec![1, 2],
            tie_params: true,
            max_query_tokens: 16,
            max_doc_tokens: 128,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 {
            return Err(Error::Config("embed_dim must be ≥ 1".into()));
        }
        if self.hash_buckets < self.embed_dim || self.hash_buckets < 2 {
            return Err(Error::Config(format!(
                "hash_buckets ({}) must be ≥ embed_dim ({}) and ≥ 2",
                self.hash_buckets, self.embed_dim
            )));
        }
        if self.hash_buckets > u32::MAX as usize {
            return Err(Error::Config("hash_buckets must fit in 32 bits".into()));
        }
        if self.ngram_orders.is_empty() || self.ngram_orders.contains(&0) {
            return Err(Error::Config(
                "ngram_orders must be a non-empty set of positive integers".into(),
            ));
        }
        if self.max_query_tokens == 0 || self.max_doc_tokens == 0 {
            return Err(Error::Config("sequence caps must be ≥ 1".into()));
        }
        Ok(())
    }

    /// Errors unless `other` describes the same architecture.
    pub fn check_compatible(&self, other: &EncoderConfig) -> Result<()> {
        if self != other {
            return Err(Error::Config(format!(
                "checkpoint/config mismatch: {self:?} vs {other:?}"
            )));
        }
        Ok(())
    }

    fn sorted_orders(&self) -> Vec<usize> {
        let mut o = self.ngram_orders.clone();
        o.sort_unstable();
        o.dedup();
        o
    }
}

/// Scoring architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Vanilla dual encoder: one view per document.
    De,
    /// Dual cross encoder: documents encoded with each pseudo-query.
    Dce,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "de" => Ok(Mode::De),
            "dce" => Ok(Mode::Dce),
            other => Err(Error::Config(format!(
                "unknown mode `{other}` (expected de or dce)"
            ))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::De => "de",
            Mode::Dce => "dce",
        })
    }
}

/// Which side of the two-tower model an input goes through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Query,
    Document,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding<T = f32>(pub Vec<T>);

impl<T: Real> Embedding<T> {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Inner product with `f64` accumulation.
pub fn score<T: Real>(q: &Embedding<T>, d: &Embedding<T>) -> Result<f64> {
    if q.dim() != d.dim() {
        return Err(Error::DimensionMismatch {
            left: q.dim(),
            right: d.dim(),
        });
    }
    Ok(dot_f64(q.as_slice(), d.as_slice()))
}

pub(crate) fn dot_f64<T: Real>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.as_f64() * y.as_f64()).sum()
}

/// An encoder input: either a lone text or a query/document concatenation.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum EncoderInput {
    Query(String),
    Document(String),
    Pair { query: String, document: String },
}

impl EncoderInput {
    pub fn side(&self) -> Side {
        match self {
            EncoderInput::Query(_) => Side::Query,
            _ => Side::Document,
        }
    }

    /// Feature ids after truncation to the configured caps.
    pub fn features(&self, cfg: &EncoderConfig) -> Result<Vec<u32>> {
        let orders = cfg.sorted_orders();
        let capped = |text: &str, cap: usize| -> Result<Vec<String>> {
            let mut toks = tokenize(text);
            if toks.is_empty() {
                return Err(Error::EmptyText);
            }
            toks.truncate(cap);
            Ok(toks)
        };
        let symbols: Vec<Symbol> = match self {
            EncoderInput::Query(q) => capped(q, cfg.max_query_tokens)?
                .into_iter()
                .map(Symbol::Token)
                .collect(),
            EncoderInput::Document(d) => capped(d, cfg.max_doc_tokens)?
                .into_iter()
                .map(Symbol::Token)
                .collect(),
            EncoderInput::Pair { query, document } => {
                let q = capped(query, cfg.max_query_tokens)?;
                let d = capped(document, cfg.max_doc_tokens)?;
                q.into_iter()
                    .map(Symbol::Token)
                    .chain(std::iter::once(Symbol::Separator))
                    .chain(d.into_iter().map(Symbol::Token))
                    .collect()
            }
        };
        Ok(features::hash_ngrams(&symbols, &orders, cfg.hash_buckets))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T = f32> {
    pub config: EncoderConfig,
    pub query: Tower<T>,
    /// Present only when parameters are untied.
    pub document: Option<Tower<T>>,
}

impl<T: Real> EncoderParams<T> {
    /// Token table ~ U(±1/√dim); projections identity plus U(±0.01) noise;
    /// zero biases.
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let query = Tower::random(config.hash_buckets, config.embed_dim, &mut rng);
        let document = if config.tie_params {
            None
        } else {
            Some(Tower::random(
                config.hash_buckets,
                config.embed_dim,
                &mut rng,
            ))
        };
        Ok(Self {
            config,
            query,
            document,
        })
    }

    pub fn zeros(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let query = Tower::zeros(config.hash_buckets, config.embed_dim);
        let document = (!config.tie_params).then(|| query.clone());
        Ok(Self {
            config,
            query,
            document,
        })
    }

    pub fn tower(&self, side: Side) -> &Tower<T> {
        match (side, &self.document) {
            (Side::Document, Some(d)) => d,
            _ => &self.query,
        }
    }

    pub fn tower_mut(&mut self, side: Side) -> &mut Tower<T> {
        match (side, &mut self.document) {
            (Side::Document, Some(d)) => d,
            _ => &mut self.query,
        }
    }

    pub fn towers(&self) -> impl Iterator<Item = &Tower<T>> {
        std::iter::once(&self.query).chain(self.document.as_ref())
    }

    pub fn towers_mut(&mut self) -> impl Iterator<Item = &mut Tower<T>> {
        std::iter::once(&mut self.query).chain(self.document.as_mut())
    }

    pub fn is_finite(&self) -> bool {
        self.towers().all(Tower::is_finite)
    }

    pub fn cast<U: Real>(&self) -> EncoderParams<U> {
        EncoderParams {
            config: self.config.clone(),
            query: self.query.cast(),
            document: self.document.as_ref().map(Tower::cast),
        }
    }

    /// Full forward pass, keeping intermediates for backpropagation.
    pub fn forward(&self, input: &EncoderInput) -> Result<Trace<T>> {
        let feats = input.features(&self.config)?;
        Ok(self.tower(input.side()).forward(feats))
    }

    pub fn encode(&self, input: &EncoderInput) -> Result<Embedding<T>> {
        self.forward(input).map(|t| Embedding(t.output))
    }

    pub fn encode_query(&self, text: &str) -> Result<Embedding<T>> {
        self.encode(&EncoderInput::Query(text.to_owned()))
    }

    pub fn encode_document_de(&self, doc_text: &str) -> Result<Embedding<T>> {
        self.encode(&EncoderInput::Document(doc_text.to_owned()))
    }

    pub fn encode_document_dce(&self, query_text: &str, doc_text: &str) -> Result<Embedding<T>> {
        self.encode(&EncoderInput::Pair {
            query: query_text.to_owned(),
            document: doc_text.to_owned(),
        })
    }
}

/// Gradients shaped like [`EncoderParams`].
#[derive(Debug, Clone)]
pub struct ParamGrads<T> {
    pub query: TowerGrad<T>,
    pub document: Option<TowerGrad<T>>,
}

impl<T: Real> ParamGrads<T> {
    pub fn zeros_like(params: &EncoderParams<T>) -> Self {
        let dim = params.config.embed_dim;
        Self {
            query: TowerGrad::zeros(dim),
            document: params.document.as_ref().map(|_| TowerGrad::zeros(dim)),
        }
    }

    pub fn tower_mut(&mut self, side: Side) -> &mut TowerGrad<T> {
        match (side, &mut self.document) {
            (Side::Document, Some(d)) => d,
            _ => &mut self.query,
        }
    }

    pub fn add(&mut self, other: &ParamGrads<T>) {
        self.query.add(&other.query);
        if let (Some(a), Some(b)) = (self.document.as_mut(), other.document.as_ref()) {
            a.add(b);
        }
    }

    pub fn scale(&mut self, factor: T) {
        self.query.scale(factor);
        if let Some(d) = self.document.as_mut() {
            d.scale(factor);
        }
    }

    pub fn towers(&self) -> impl Iterator<Item = &TowerGrad<T>> {
        std::iter::once(&self.query).chain(self.document.as_ref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> EncoderConfig {
        EncoderConfig {
            embed_dim: 8,
            hash_buckets: 64,
            ..Default::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(EncoderConfig::default().validate().is_ok());
        let bad = EncoderConfig {
            hash_buckets: 4,
            embed_dim: 8,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = EncoderConfig {
            ngram_orders: vec![],
            ..small()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_weights_give_bias_path() {
        let mut p = EncoderParams::<f64>::zeros(small()).unwrap();
        for (i, b) in p.query.b_hidden.iter_mut().enumerate() {
            *b = 0.1 * i as f64;
        }
        for (i, b) in p.query.b_out.iter_mut().enumerate() {
            *b = -0.5 + i as f64;
        }
        // W_out = 0, so output = b_out regardless of tanh(b_hidden)
        let e = p.encode_query("anything at all").unwrap();
        assert_eq!(e.0, p.query.b_out);

        // with W_out = I the output is tanh(b_hidden) + b_out
        let d = 8;
        for i in 0..d {
            p.query.w_out[i * d + i] = 1.0;
        }
        let e = p.encode_query("anything").unwrap();
        for i in 0..d {
            let expect = (0.1 * i as f64).tanh() + (-0.5 + i as f64);
            assert!((e.0[i] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn deterministic_and_truncated() {
        let p = EncoderParams::<f32>::init(small(), 3).unwrap();
        assert_eq!(
            p.encode_query("a b c").unwrap(),
            p.encode_query("a b c").unwrap()
        );
        let long: Vec<String> = (0..40).map(|i| format!("w{i}")).collect();
        let prefix = long[..16].join(" ");
        assert_eq!(
            p.encode_query(&long.join(" ")).unwrap(),
            p.encode_query(&prefix).unwrap()
        );
    }

    #[test]
    fn empty_text_errors() {
        let p = EncoderParams::<f32>::init(small(), 3).unwrap();
        assert!(matches!(p.encode_query(" ?! "), Err(Error::EmptyText)));
        assert!(p.encode_document_dce("", "doc").is_err());
        assert!(p.encode_document_dce("q", "...").is_err());
    }

    #[test]
    fn tied_towers_agree_untied_differ() {
        let cfg = EncoderConfig {
            max_doc_tokens: 16,
            ..small()
        };
        let tied = EncoderParams::<f32>::init(cfg.clone(), 5).unwrap();
        let text = "the same text";
        assert_eq!(
            tied.encode_query(text).unwrap(),
            tied.encode_document_de(text).unwrap()
        );

        let untied = EncoderParams::<f32>::init(
            EncoderConfig {
                tie_params: false,
                ..cfg
            },
            5,
        )
        .unwrap();
        assert_ne!(
            untied.encode_query(text).unwrap(),
            untied.encode_document_de(text).unwrap()
        );
    }

    #[test]
    fn tied_mode_aliases_parameters() {
        let mut p = EncoderParams::<f32>::init(small(), 1).unwrap();
        assert!(p.document.is_none());
        p.tower_mut(Side::Document).b_out[0] = 3.0;
        assert_eq!(p.tower(Side::Query).b_out[0], 3.0);
    }

    #[test]
    fn multi_view_and_separator() {
        let p = EncoderParams::<f64>::init(small(), 11).unwrap();
        let d = "solar power plants";
        let a = p.encode_document_dce("what is solar", d).unwrap();
        assert_eq!(a, p.encode_document_dce("what is solar", d).unwrap());
        assert_ne!(a, p.encode_document_dce("how big are plants", d).unwrap());

        let x = p.encode_document_dce("a b", "c").unwrap();
        let y = p.encode_document_dce("a", "b c").unwrap();
        assert_ne!(x, y);
    }

    #[test]
    fn score_fixtures() {
        let s = |a: Vec<f64>, b: Vec<f64>| score(&Embedding(a), &Embedding(b)).unwrap();
        assert_eq!(s(vec![1.0, 0.0], vec![0.0, 1.0]), 0.0);
        assert_eq!(s(vec![1.0, 2.0], vec![3.0, 4.0]), 11.0);
        assert!(score(&Embedding(vec![1.0f32]), &Embedding(vec![1.0, 2.0])).is_err());
    }

    proptest::proptest! {
        #[test]
        fn score_is_symmetric(a in proptest::collection::vec(-10.0f64..10.0, 6),
                              b in proptest::collection::vec(-10.0f64..10.0, 6)) {
            let (a, b) = (Embedding(a), Embedding(b));
            proptest::prop_assert_eq!(score(&a, &b).unwrap(), score(&b, &a).unwrap());
        }
    }
}
