//! Minimal neural-network engine: a reverse-mode tape, a 1D U-Net and Adam.

mod optim;
mod real;
mod tape;
mod unet;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use optim::{Adam, AdamConfig, Ema};
pub use real::{matmul, Mat, Real};
pub use tape::{Tape, Var};
pub use unet::{noise_embedding, UNet, UNetConfig};

/// Name, shape and position of one tensor inside a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Init {
    Zeros,
    Ones,
    /// Uniform in `±1/sqrt(fan_in)`.
    FanIn(usize),
}

/// Flat parameter vector with a named-tensor index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    pub tensors: Vec<TensorInfo>,
    pub values: Vec<f32>,
}

impl ParamStore {
    pub(crate) fn add<R: Rng>(&mut self, name: String, shape: &[usize], init: Init, rng: &mut R) -> usize {
        let offset = self.values.len();
        let n: usize = shape.iter().product();
        match init {
            Init::Zeros => self.values.extend(std::iter::repeat_n(0.0, n)),
            Init::Ones => self.values.extend(std::iter::repeat_n(1.0, n)),
            Init::FanIn(fan_in) => {
                let bound = 1.0 / (fan_in as f32).sqrt();
                self.values.extend((0..n).map(|_| rng.random_range(-bound..bound)));
            }
        }
        self.tensors.push(TensorInfo {
            name,
            shape: shape.to_vec(),
            offset,
        });
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<(&TensorInfo, &[f32])> {
        let info = self.tensors.iter().find(|t| t.name == name)?;
        Some((info, &self.values[info.range()]))
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// The index tiles `values` exactly, in order, without gaps.
    pub fn index_is_complete(&self) -> bool {
        let mut next = 0;
        for t in &self.tensors {
            if t.offset != next {
                return false;
            }
            next += t.len();
        }
        next == self.values.len()
    }
}
