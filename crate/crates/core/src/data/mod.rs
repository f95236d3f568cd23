//! Embedding datasets and prototype banks.
//!
//! Vectors are stored as `f32` exactly as they appear on disk. Training code
//! never sees [`EmbeddingRecord`] directly: it works from a [`SourceSplit`]
//! (labeled) or a [`TargetSplit`], which carries no label field at all. Target
//! ground truth stays inside [`EmbeddingDataset`] and is read only by `eval`.

pub(crate) mod format;
mod sampler;
mod synth;

use std::collections::BTreeSet;

pub use format::{
    decode_embeddings, decode_prototypes, encode_embeddings, encode_prototypes, load_embeddings,
    load_prototypes, write_embeddings, write_prototypes, EMBEDDING_MAGIC, FORMAT_VERSION,
    PROTOTYPE_MAGIC,
};
pub use sampler::{derive_seed, BatchSampler};
pub use synth::{generate_synthetic, DomainShift, SynthConfig};

use crate::error::{OdaError, Result};

/// Label value for records without ground truth.
pub const UNLABELED: i32 = -1;

const PROTOTYPE_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub(crate) fn to_byte(self) -> u8 {
        match self {
            Domain::Source => 0,
            Domain::Target => 1,
        }
    }

    pub(crate) fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Domain::Source),
            1 => Some(Domain::Target),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub id: u64,
    pub vector: Vec<f32>,
    /// Class index in `[0, |C_t|)`, or [`UNLABELED`].
    pub label: i32,
    pub domain: Domain,
}

impl EmbeddingRecord {
    pub fn vector_f64(&self) -> Vec<f64> {
        self.vector.iter().map(|&v| f64::from(v)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    dim: usize,
    num_known_classes: usize,
    num_total_classes: usize,
    records: Vec<EmbeddingRecord>,
}

impl EmbeddingDataset {
    pub fn new(
        dim: usize,
        num_known_classes: usize,
        num_total_classes: usize,
        records: Vec<EmbeddingRecord>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(OdaError::Invariant("embedding dimension must be positive".into()));
        }
        if num_known_classes == 0 || num_known_classes >= num_total_classes {
            return Err(OdaError::Invariant(format!(
                "need 0 < |C_s| < |C_t|, got {num_known_classes} known of {num_total_classes} total"
            )));
        }
        let mut seen = BTreeSet::new();
        for r in &records {
            if r.vector.len() != dim {
                return Err(OdaError::DimensionMismatch {
                    expected: dim,
                    actual: r.vector.len(),
                });
            }
            if !seen.insert(r.id) {
                return Err(OdaError::Invariant(format!("duplicate record id {}", r.id)));
            }
            let valid = match r.domain {
                Domain::Source => r.label >= 0 && (r.label as usize) < num_known_classes,
                Domain::Target => {
                    r.label == UNLABELED || (r.label >= 0 && (r.label as usize) < num_total_classes)
                }
            };
            if !valid {
                return Err(OdaError::Invariant(format!(
                    "record {} ({:?}) has label {} outside the allowed range",
                    r.id, r.domain, r.label
                )));
            }
        }
        Ok(EmbeddingDataset {
            dim,
            num_known_classes,
            num_total_classes,
            records,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_known_classes(&self) -> usize {
        self.num_known_classes
    }

    pub fn num_total_classes(&self) -> usize {
        self.num_total_classes
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn records_in(&self, domain: Domain) -> impl Iterator<Item = &EmbeddingRecord> {
        self.records.iter().filter(move |r| r.domain == domain)
    }

    pub fn count(&self, domain: Domain) -> usize {
        self.records_in(domain).count()
    }

    /// Labeled source samples, in file order.
    pub fn source_split(&self) -> SourceSplit {
        let samples = self
            .records_in(Domain::Source)
            .map(|r| LabeledSample {
                id: r.id,
                x: r.vector_f64(),
                label: r.label as usize,
            })
            .collect();
        SourceSplit {
            dim: self.dim,
            num_classes: self.num_known_classes,
            samples,
        }
    }

    /// Target samples with labels stripped, in file order.
    pub fn target_split(&self) -> TargetSplit {
        let samples = self
            .records_in(Domain::Target)
            .map(|r| UnlabeledSample {
                id: r.id,
                x: r.vector_f64(),
            })
            .collect();
        TargetSplit {
            dim: self.dim,
            num_known_classes: self.num_known_classes,
            samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub id: u64,
    pub x: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledSample {
    pub id: u64,
    pub x: Vec<f64>,
}

/// The labeled source data `{X_s, Y_s}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSplit {
    pub dim: usize,
    pub num_classes: usize,
    pub samples: Vec<LabeledSample>,
}

/// Unlabeled target data `X_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSplit {
    pub dim: usize,
    pub num_known_classes: usize,
    pub samples: Vec<UnlabeledSample>,
}

impl TargetSplit {
    pub fn from_samples(dim: usize, num_known_classes: usize, samples: Vec<UnlabeledSample>) -> Self {
        TargetSplit {
            dim,
            num_known_classes,
            samples,
        }
    }
}

/// Frozen per-class text prototypes, one unit vector per known class.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank {
    dim: usize,
    class_names: Vec<String>,
    prototypes: Vec<Vec<f32>>,
    prototypes_f64: Vec<Vec<f64>>,
}

impl PrototypeBank {
    /// Builds a bank from vectors that must already be unit-norm within 1e-6.
    pub fn new(dim: usize, class_names: Vec<String>, prototypes: Vec<Vec<f32>>) -> Result<Self> {
        if dim == 0 {
            return Err(OdaError::Invariant("prototype dimension must be positive".into()));
        }
        if class_names.len() != prototypes.len() {
            return Err(OdaError::Invariant(format!(
                "{} class names for {} prototypes",
                class_names.len(),
                prototypes.len()
            )));
        }
        for (k, p) in prototypes.iter().enumerate() {
            if p.len() != dim {
                return Err(OdaError::DimensionMismatch {
                    expected: dim,
                    actual: p.len(),
                });
            }
            let n = p.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
            if (n - 1.0).abs() > PROTOTYPE_NORM_TOL {
                return Err(OdaError::Invariant(format!(
                    "prototype {k} has norm {n}, expected 1"
                )));
            }
        }
        let prototypes_f64 = prototypes
            .iter()
            .map(|p| p.iter().map(|&v| f64::from(v)).collect())
            .collect();
        Ok(PrototypeBank {
            dim,
            class_names,
            prototypes,
            prototypes_f64,
        })
    }

    /// Normalizes each vector to unit length, then builds the bank.
    pub fn from_unnormalized(class_names: Vec<String>, vectors: &[Vec<f64>]) -> Result<Self> {
        let dim = vectors.first().map_or(0, Vec::len);
        let mut protos = Vec::with_capacity(vectors.len());
        for v in vectors {
            let n = crate::numerics::norm(v);
            if n < crate::numerics::MIN_NORM {
                return Err(OdaError::ZeroNormVector);
            }
            let mut p: Vec<f32> = v.iter().map(|x| (x / n) as f32).collect();
            // f32 rounding can leave the norm a few ulps off; one more pass in f64 fixes it.
            let n32 = p.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
            p.iter_mut().for_each(|x| *x = (f64::from(*x) / n32) as f32);
            protos.push(p);
        }
        PrototypeBank::new(dim, class_names, protos)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn prototypes(&self) -> &[Vec<f32>] {
        &self.prototypes
    }

    pub(crate) fn prototypes_f64(&self) -> &[Vec<f64>] {
        &self.prototypes_f64
    }
}
