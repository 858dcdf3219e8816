//! Row-major 2D field over an `nz x nx` grid (row = constant depth).

use crate::error::{Error, Result};

/// 2D scalar field, stored row-major: index `iz * nx + ix`.
#[derive(Debug, Clone, PartialEq)]
pub struct Field2 {
    nx: usize,
    nz: usize,
    data: Vec<f64>,
}

impl Field2 {
    pub fn new(nx: usize, nz: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != nx * nz {
            return Err(Error::Dimension {
                context: "field data",
                expected: nx * nz,
                actual: data.len(),
            });
        }
        Ok(Self { nx, nz, data })
    }

    pub fn constant(nx: usize, nz: usize, value: f64) -> Self {
        Self { nx, nz, data: vec![value; nx * nz] }
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn nz(&self) -> usize {
        self.nz
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, ix: usize, iz: usize) -> f64 {
        self.data[iz * self.nx + ix]
    }

    #[inline]
    pub fn set(&mut self, ix: usize, iz: usize, v: f64) {
        self.data[iz * self.nx + ix] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_values(self) -> Vec<f64> {
        self.data
    }
}
