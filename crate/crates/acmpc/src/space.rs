//! State-control pairs and the tag distinguishing the two model spaces.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Which of the two model spaces a vector lives in.
///
/// Every state/control vector carries exactly one tag; operations reject
/// mismatched tags rather than reinterpreting data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Space {
    Complex,
    Simple,
}

impl std::fmt::Display for Space {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Space::Complex => write!(f, "complex"),
            Space::Simple => write!(f, "simple"),
        }
    }
}

/// Dimensions of the two spaces of a model pair.
///
/// The simple space is a strict reduction: `n_xs < n_xc`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub n_xc: usize,
    pub n_uc: usize,
    pub n_xs: usize,
    pub n_us: usize,
}

impl Dims {
    pub fn state_dim(&self, space: Space) -> usize {
        match space {
            Space::Complex => self.n_xc,
            Space::Simple => self.n_xs,
        }
    }

    pub fn control_dim(&self, space: Space) -> usize {
        match space {
            Space::Complex => self.n_uc,
            Space::Simple => self.n_us,
        }
    }
}

/// One state-control pair `z = (x, u)` tagged with its space.
#[derive(Debug, Clone, PartialEq)]
pub struct StagePair {
    pub state: DVector<f64>,
    pub control: DVector<f64>,
    pub space: Space,
}

impl StagePair {
    pub fn new(state: DVector<f64>, control: DVector<f64>, space: Space) -> Self {
        StagePair {
            state,
            control,
            space,
        }
    }

    pub fn complex(state: DVector<f64>, control: DVector<f64>) -> Self {
        Self::new(state, control, Space::Complex)
    }

    pub fn simple(state: DVector<f64>, control: DVector<f64>) -> Self {
        Self::new(state, control, Space::Simple)
    }

    /// Check that the pair's dimensions match `dims` for its tag.
    pub fn check_dims(&self, dims: &Dims) -> Result<()> {
        let (nx, nu) = (dims.state_dim(self.space), dims.control_dim(self.space));
        if self.state.len() != nx || self.control.len() != nu {
            return Err(Error::contract(format!(
                "{} stage pair has dims ({}, {}), model declares ({}, {})",
                self.space,
                self.state.len(),
                self.control.len(),
                nx,
                nu
            )));
        }
        Ok(())
    }

    pub fn expect_space(&self, space: Space) -> Result<()> {
        if self.space != space {
            return Err(Error::contract(format!(
                "expected a {space} stage pair, got {}",
                self.space
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.state.iter().all(|v| v.is_finite()) && self.control.iter().all(|v| v.is_finite())
    }
}
