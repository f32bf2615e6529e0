use serde::{Deserialize, Serialize};

use crate::error::{GmcError, Result};

/// Uniform grid of `n` cells of width `h` starting at `start`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub start: f64,
    pub h: f64,
    pub n: usize,
}

impl Grid {
    pub fn new(start: f64, h: f64, n: usize) -> Result<Self> {
        let g = Grid { start, h, n };
        g.validate()?;
        Ok(g)
    }

    /// `n` equal cells covering `[a, b]`.
    pub fn covering(a: f64, b: f64, n: usize) -> Result<Self> {
        if !(b > a) {
            return Err(GmcError::InvalidGrid(format!("empty interval [{a}, {b}]")));
        }
        Grid::new(a, (b - a) / n as f64, n)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0) || !self.h.is_finite() {
            return Err(GmcError::InvalidGrid(format!("spacing must be positive, got {}", self.h)));
        }
        if self.n == 0 {
            return Err(GmcError::InvalidGrid("grid needs at least one cell".into()));
        }
        if !self.start.is_finite() {
            return Err(GmcError::InvalidGrid("start must be finite".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn center(&self, i: usize) -> f64 {
        self.start + (i as f64 + 0.5) * self.h
    }

    #[inline]
    pub fn end(&self) -> f64 {
        self.start + self.n as f64 * self.h
    }

    /// Total length `n h`.
    #[inline]
    pub fn extent(&self) -> f64 {
        self.n as f64 * self.h
    }
}
