use std::fmt;

use ndarray::Array1;

use crate::error::{Error, Result};

/// A system state, flattened. Grids are stored channel-major, row-major.
pub type State = Array1<f64>;

/// Layout of a state: `channels x height x width`. Plain vectors use `(1, 1, d)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Dims {
    pub const fn vector(len: usize) -> Self {
        Dims {
            channels: 1,
            height: 1,
            width: len,
        }
    }

    pub const fn grid(channels: usize, height: usize, width: usize) -> Self {
        Dims {
            channels,
            height,
            width,
        }
    }

    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Image-like states have a genuine 2-D extent; SSIM is only defined for these.
    pub const fn is_grid(&self) -> bool {
        self.height > 1 && self.width > 1
    }

    pub fn check(&self, state: &State) -> Result<()> {
        if state.len() != self.len() {
            return Err(Error::shape(self.len(), state.len()));
        }
        Ok(())
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

pub(crate) fn all_finite(values: &[f64]) -> bool {
    values.iter().all(|v| v.is_finite())
}
