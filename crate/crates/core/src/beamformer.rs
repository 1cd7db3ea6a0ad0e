//! Per-(subcarrier, layer) complex beamformers.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg;

/// `w_{G,n}` for every layer `G` and subcarrier `n`, stored subcarrier-major.
#[derive(Clone, Debug, PartialEq)]
pub struct BeamformerSet {
    subcarriers: usize,
    layers: usize,
    antennas: usize,
    w: Vec<Vec<Complex64>>,
}

impl BeamformerSet {
    pub fn zeros(subcarriers: usize, layers: usize, antennas: usize) -> Self {
        BeamformerSet {
            subcarriers,
            layers,
            antennas,
            w: vec![vec![Complex64::new(0.0, 0.0); antennas]; subcarriers * layers],
        }
    }

    /// `vectors` indexed `n * layers + layer`.
    pub fn new(subcarriers: usize, layers: usize, antennas: usize, vectors: Vec<Vec<Complex64>>) -> Result<Self> {
        if vectors.len() != subcarriers * layers || vectors.iter().any(|v| v.len() != antennas) {
            return Err(Error::Dimension("beamformer set does not match N x L x M".into()));
        }
        Ok(BeamformerSet {
            subcarriers,
            layers,
            antennas,
            w: vectors,
        })
    }

    pub fn subcarriers(&self) -> usize {
        self.subcarriers
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn get(&self, n: usize, layer: usize) -> &[Complex64] {
        &self.w[n * self.layers + layer]
    }

    pub fn get_mut(&mut self, n: usize, layer: usize) -> &mut Vec<Complex64> {
        &mut self.w[n * self.layers + layer]
    }

    /// `Σ_{n,G} ‖w_{G,n}‖²`.
    pub fn total_power(&self) -> f64 {
        self.w.iter().map(|v| linalg::norm_sqr(v)).sum()
    }

    pub fn scale(&mut self, k: f64) {
        for v in &mut self.w {
            for z in v.iter_mut() {
                *z *= k;
            }
        }
    }

    /// `(1 - γ) self + γ other`.
    pub fn blend(&self, other: &BeamformerSet, gamma: f64) -> BeamformerSet {
        let w = self
            .w
            .iter()
            .zip(&other.w)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * (1.0 - gamma) + y * gamma).collect())
            .collect();
        BeamformerSet { w, ..*self }
    }
}
