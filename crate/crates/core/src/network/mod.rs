//! Fully connected autoencoder: encoder `f`, mirrored decoder `g`,
//! layer-wise denoising pretraining and a binary weight file.

mod file;
mod pretrain;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::Centroids;
use crate::seed;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, TensorError, Var};

pub use file::{decode_params, encode_params, load_params, save_params, ModelFileError, FORMAT_VERSION, MAGIC};
pub use pretrain::{pretrain_sdae, PretrainConfig};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("input has {found} columns, network expects {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("non-finite loss while pretraining {stage} (epoch {epoch})")]
    Diverged { stage: String, epoch: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Layer widths of the encoder; the decoder mirrors them.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub embedding_dim: usize,
}

impl ArchitectureSpec {
    /// `d-500-500-2000-10`.
    pub fn standard(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dims: vec![500, 500, 2000],
            embedding_dim: 10,
        }
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.hidden_dims.is_empty() {
            return Err(NetworkError::Architecture("at least one hidden layer is required".into()));
        }
        if self.input_dim == 0 || self.embedding_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(NetworkError::Architecture(format!("zero-width layer in {self:?}")));
        }
        Ok(())
    }

    /// `[d, h1, .., hL, e]`
    pub fn encoder_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden_dims);
        dims.push(self.embedding_dim);
        dims
    }

    pub fn decoder_dims(&self) -> Vec<usize> {
        let mut dims = self.encoder_dims();
        dims.reverse();
        dims
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub relu: bool,
}

impl Linear {
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, TensorError> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let h = tape.matmul(x, w)?;
        let h = tape.add(h, b)?;
        if self.relu {
            tape.relu(h)
        } else {
            Ok(h)
        }
    }

    pub fn dims(&self, store: &ParamStore) -> (usize, usize) {
        let s = store.get(self.weight).shape();
        (s[0], s[1])
    }
}

/// Encoder and decoder layers plus, once clustering starts, the centroids.
/// All trainable tensors live in one store so a single Adam state covers
/// them.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    pub spec: ArchitectureSpec,
    pub store: ParamStore,
    pub encoder: Vec<Linear>,
    pub decoder: Vec<Linear>,
    pub centroids: Option<Centroids>,
}

fn glorot(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let values = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    Tensor::matrix(fan_in, fan_out, values).expect("fan_in × fan_out")
}

impl NetworkParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(spec: &ArchitectureSpec, seed: u64) -> Result<Self, NetworkError> {
        spec.validate()?;
        let mut rng = seed::rng(seed);
        Self::build(spec, |fan_in, fan_out| {
            (glorot(&mut rng, fan_in, fan_out), Tensor::zeros(&[fan_out]).expect("width > 0"))
        })
    }

    /// Layers built from `make(fan_in, fan_out) -> (weight, bias)`, encoder
    /// first.
    pub fn build(
        spec: &ArchitectureSpec,
        mut make: impl FnMut(usize, usize) -> (Tensor, Tensor),
    ) -> Result<Self, NetworkError> {
        spec.validate()?;
        let mut store = ParamStore::new();
        let mut stack = |dims: &[usize], store: &mut ParamStore| {
            let last = dims.len() - 2;
            dims.windows(2)
                .enumerate()
                .map(|(i, w)| {
                    let (weight, bias) = make(w[0], w[1]);
                    Linear {
                        weight: store.push(weight),
                        bias: store.push(bias),
                        relu: i < last,
                    }
                })
                .collect::<Vec<_>>()
        };
        let encoder = stack(&spec.encoder_dims(), &mut store);
        let decoder = stack(&spec.decoder_dims(), &mut store);
        Ok(Self {
            spec: spec.clone(),
            store,
            encoder,
            decoder,
            centroids: None,
        })
    }

    fn check_input(&self, tape: &Tape, x: Var, expected: usize) -> Result<(), NetworkError> {
        let shape = tape.shape(x);
        let found = if shape.len() == 2 { shape[1] } else { 0 };
        if found != expected {
            return Err(NetworkError::Dimension { expected, found });
        }
        Ok(())
    }

    /// `Z = f(X)`; row i of `Z` depends only on row i of `X`.
    pub fn encode(&self, tape: &mut Tape, x: Var) -> Result<Var, NetworkError> {
        self.check_input(tape, x, self.spec.input_dim)?;
        let mut h = x;
        for layer in &self.encoder {
            h = layer.forward(tape, &self.store, h)?;
        }
        Ok(h)
    }

    /// `X̂ = g(Z)`
    pub fn decode(&self, tape: &mut Tape, z: Var) -> Result<Var, NetworkError> {
        self.check_input(tape, z, self.spec.embedding_dim)?;
        let mut h = z;
        for layer in &self.decoder {
            h = layer.forward(tape, &self.store, h)?;
        }
        Ok(h)
    }

    /// Embedding of a data matrix, without recording gradients.
    pub fn embed(&self, x: &Tensor) -> Result<Tensor, NetworkError> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let z = self.encode(&mut tape, xv)?;
        Ok(tape.value(z).clone())
    }

    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor, NetworkError> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let z = self.encode(&mut tape, xv)?;
        let r = self.decode(&mut tape, z)?;
        Ok(tape.value(r).clone())
    }

    /// Parameter ids of the network layers (centroids excluded).
    pub fn layer_params(&self) -> Vec<ParamId> {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .flat_map(|l| [l.weight, l.bias])
            .collect()
    }
}

/// Mean over rows of `‖x − x̂‖²`.
pub fn reconstruction_loss(tape: &mut Tape, x: Var, x_hat: Var) -> Result<Var, TensorError> {
    if tape.shape(x) != tape.shape(x_hat) {
        return Err(TensorError::ShapeMismatch {
            op: "reconstruction_loss",
            left: tape.shape(x).to_vec(),
            right: tape.shape(x_hat).to_vec(),
        });
    }
    let n = tape.shape(x)[0] as f64;
    let diff = tape.sub(x, x_hat)?;
    let sq = tape.square(diff)?;
    let total = tape.sum(sq)?;
    tape.scale(total, 1.0 / n)
}
