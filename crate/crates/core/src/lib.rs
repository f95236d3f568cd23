//! Open-set domain adaptation over precomputed embedding vectors.
//!
//! A linear softmax classifier is trained on labeled source embeddings and
//! adapted to an unlabeled target domain that contains classes never seen in
//! the source. A frozen zero-shot classifier (cosine similarity to per-class
//! text prototypes) guides the adaptation: target samples it is confident on
//! become soft pseudo-labels, the rest have their output entropy pushed up.
//! Both joint training and the source-free two-stage variant are supported.

pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod trainer;
pub mod zero_shot;

pub use error::{OdaError, Result};

/// Open-set decision: one of the known source classes, or the unified unknown class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpenSetClass {
    Known(usize),
    Unknown,
}

impl OpenSetClass {
    pub fn is_unknown(self) -> bool {
        matches!(self, OpenSetClass::Unknown)
    }

    /// Row/column in a `(K + 1) x (K + 1)` confusion matrix; unknown is `K`.
    pub fn index(self, num_known: usize) -> usize {
        match self {
            OpenSetClass::Known(k) => k,
            OpenSetClass::Unknown => num_known,
        }
    }
}

/// ln(K) / 2, the default entropy threshold for `K` known classes.
pub fn default_delta(num_known: usize) -> f64 {
    (num_known as f64).ln() / 2.0
}
