//! The adaptable open-set classifier: a linear softmax head `p = softmax(Wx + b)`
//! over embeddings, its SGD-with-momentum optimizer, and the `ODAC` checkpoint
//! format.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::format::{put_f32s, write_file, ByteReader};
use crate::error::{OdaError, Result};
use crate::numerics::{argmax, entropy, softmax_unit, Logits, ProbVector};
use crate::zero_shot::check_threshold;
use crate::OpenSetClass;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ODAC";

#[derive(Debug, Clone, PartialEq)]
pub struct OdaClassifier {
    dim: usize,
    num_classes: usize,
    /// Row-major `num_classes x dim`.
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl OdaClassifier {
    pub fn zeros(dim: usize, num_classes: usize) -> Self {
        OdaClassifier {
            dim,
            num_classes,
            weights: vec![0.0; dim * num_classes],
            biases: vec![0.0; num_classes],
        }
    }

    /// Weights uniform in `(-1/sqrt(d), 1/sqrt(d))`, biases zero.
    pub fn init(dim: usize, num_classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (dim as f64).sqrt();
        let weights = (0..dim * num_classes)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        OdaClassifier {
            dim,
            num_classes,
            weights,
            biases: vec![0.0; num_classes],
        }
    }

    pub fn from_parts(dim: usize, num_classes: usize, weights: Vec<f64>, biases: Vec<f64>) -> Result<Self> {
        if weights.len() != dim * num_classes {
            return Err(OdaError::DimensionMismatch {
                expected: dim * num_classes,
                actual: weights.len(),
            });
        }
        if biases.len() != num_classes {
            return Err(OdaError::DimensionMismatch {
                expected: num_classes,
                actual: biases.len(),
            });
        }
        Ok(OdaClassifier {
            dim,
            num_classes,
            weights,
            biases,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [f64] {
        &mut self.biases
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.biases).all(|v| v.is_finite())
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(OdaError::DimensionMismatch {
                expected: self.dim,
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// `Wx + b` without a dimension check; callers validate batches up front.
    pub(crate) fn logits_unchecked(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.dim)
            .zip(&self.biases)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Logits, ProbVector)> {
        self.check_dim(x)?;
        let z = self.logits_unchecked(x);
        let p = softmax_unit(&z);
        Ok((Logits::from_raw(z), p))
    }

    /// Rejects as unknown when the output entropy exceeds `delta`.
    pub fn predict_open_set(&self, x: &[f64], delta: f64) -> Result<OpenSetClass> {
        check_threshold("delta", delta)?;
        let (_, p) = self.forward(x)?;
        Ok(if entropy(&p) > delta {
            OpenSetClass::Unknown
        } else {
            OpenSetClass::Known(argmax(p.as_slice()))
        })
    }
}

/// Gradients shaped like the classifier parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl ParamGrads {
    pub fn zeros_like(model: &OdaClassifier) -> Self {
        ParamGrads {
            weights: vec![0.0; model.weights.len()],
            biases: vec![0.0; model.biases.len()],
        }
    }

    /// Accumulates `scale * g x^T` into the weights and `scale * g` into the biases,
    /// where `g` is a gradient with respect to the logits of input `x`.
    pub fn accumulate(&mut self, x: &[f64], logit_grad: &[f64], scale: f64) {
        let dim = x.len();
        for (k, &g) in logit_grad.iter().enumerate() {
            let gs = g * scale;
            self.biases[k] += gs;
            for (w, &xv) in self.weights[k * dim..(k + 1) * dim].iter_mut().zip(x) {
                *w += gs * xv;
            }
        }
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.biases).all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.weights
            .iter()
            .chain(&self.biases)
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.weights.iter().chain(&self.biases).all(|&v| v == 0.0)
    }
}

/// SGD with heavy-ball momentum: `v <- mu v + g`, `theta <- theta - lr v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: ParamGrads,
}

impl Optimizer {
    pub fn new(learning_rate: f64, momentum: f64, model: &OdaClassifier) -> Result<Self> {
        if !(learning_rate > 0.0) || !learning_rate.is_finite() {
            return Err(OdaError::InvalidConfig(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(OdaError::InvalidConfig(format!(
                "momentum must be in [0, 1), got {momentum}"
            )));
        }
        Ok(Optimizer {
            learning_rate,
            momentum,
            velocity: ParamGrads::zeros_like(model),
        })
    }

    pub fn velocity(&self) -> &ParamGrads {
        &self.velocity
    }
}

pub fn sgd_step(model: &mut OdaClassifier, grads: &ParamGrads, opt: &mut Optimizer) -> Result<()> {
    if !grads.is_finite() {
        return Err(OdaError::NonFiniteGradient);
    }
    let (mu, lr) = (opt.momentum, opt.learning_rate);
    let update = |params: &mut [f64], vel: &mut [f64], g: &[f64]| {
        for ((p, v), &gi) in params.iter_mut().zip(vel.iter_mut()).zip(g) {
            *v = mu * *v + gi;
            *p -= lr * *v;
        }
    };
    update(&mut model.weights, &mut opt.velocity.weights, &grads.weights);
    update(&mut model.biases, &mut opt.velocity.biases, &grads.biases);
    Ok(())
}

pub fn encode_checkpoint(model: &OdaClassifier) -> Result<Vec<u8>> {
    let to_u32 = |v: usize| {
        u32::try_from(v).map_err(|_| OdaError::Invariant(format!("{v} exceeds u32")))
    };
    let mut out = Vec::with_capacity(16 + 4 * (model.weights.len() + model.biases.len()));
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&crate::data::FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(model.dim)?.to_le_bytes());
    out.extend_from_slice(&to_u32(model.num_classes)?.to_le_bytes());
    put_f32s(&mut out, model.weights.iter().map(|&w| w as f32));
    put_f32s(&mut out, model.biases.iter().map(|&b| b as f32));
    Ok(out)
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<OdaClassifier> {
    let mut rd = ByteReader::new(buf);
    rd.magic(CHECKPOINT_MAGIC)?;
    rd.version()?;
    let dim = rd.u32()? as usize;
    let k = rd.u32()? as usize;
    let n = dim
        .checked_mul(k)
        .filter(|n| n.saturating_add(k).saturating_mul(4) <= buf.len())
        .ok_or_else(|| OdaError::Format("checkpoint shape exceeds file size".into()))?;
    let weights = rd.f32s(n)?.into_iter().map(f64::from).collect();
    let biases = rd.f32s(k)?.into_iter().map(f64::from).collect();
    rd.finish()?;
    let model = OdaClassifier::from_parts(dim, k, weights, biases)?;
    if !model.is_finite() {
        return Err(OdaError::Invariant("checkpoint holds non-finite parameters".into()));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &OdaClassifier, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_checkpoint(model)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<OdaClassifier> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| OdaError::io(path, e))?;
    decode_checkpoint(&bytes)
}
