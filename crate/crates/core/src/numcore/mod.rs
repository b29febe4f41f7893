//! Small dense tensor library with explicit forward/backward passes.
//!
//! There is no autodiff graph. Each layer exposes `forward`, which returns
//! its output plus whatever the backward pass needs, and `backward`, which
//! accumulates parameter gradients into a same-shaped gradient instance of
//! the layer and returns the gradient with respect to the input.
//!
//! Everything is generic over [`Real`] so training can run in `f32` while
//! gradient checks run in `f64`.

mod batchnorm;
pub mod checkpoint;
mod conv;
pub mod gradcheck;
mod linear;
mod lstm;
pub mod ops;
pub mod optim;
pub mod params;
mod tensor;

use std::fmt::{Debug, Display};
use std::iter::Sum;

pub use batchnorm::{BatchNorm, BnCache, ChannelAxis, Mode};
pub use conv::{Conv2d, Conv2dGeometry};
pub use linear::{Embedding, Linear};
pub use lstm::{BiLstm, BiLstmCache, Lstm, LstmCache};
pub use params::{ParamVisitor, ParamVisitorMut, Parameterized};
pub use tensor::{matmul, Tensor};

/// Floating point element type: `f32` for training, `f64` for verification.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` constant.
    fn c(x: f64) -> Self {
        Self::from_f64(x).expect("finite constant")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Numeric precision selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl std::str::FromStr for Precision {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "f32" | "32" => Ok(Precision::F32),
            "f64" | "64" => Ok(Precision::F64),
            _ => Err(crate::Error::Config(format!("unknown precision `{s}`"))),
        }
    }
}

impl Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}
