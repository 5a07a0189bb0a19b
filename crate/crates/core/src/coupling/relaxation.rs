use thiserror::Error;

use crate::fem::solver::{dot, norm};

/// Below this relative size of `r − r_prev` the Aitken step is undefined.
pub const STAGNATION_RATIO: f64 = 1e-15;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OmegaBounds {
    pub min: f64,
    pub max: f64,
}

impl Default for OmegaBounds {
    fn default() -> Self {
        OmegaBounds { min: 0.1, max: 1.9 }
    }
}

impl OmegaBounds {
    pub fn clamp(&self, omega: f64) -> f64 {
        omega.clamp(self.min, self.max)
    }
}

#[derive(Clone, Copy, Debug, Error, PartialEq)]
#[error("residual stagnated: |r - r_prev| = {delta:e} vs |r_prev| = {reference:e}")]
pub struct Stagnation {
    pub delta: f64,
    pub reference: f64,
}

/// Iteration state on the shared interface indexing.
#[derive(Clone, Debug, PartialEq)]
pub struct InterfaceState {
    pub p: Vec<f64>,
    pub r: Vec<f64>,
    pub r_prev: Option<Vec<f64>>,
    pub omega: f64,
    pub k: usize,
}

impl InterfaceState {
    pub fn new(len: usize, omega: f64) -> Self {
        InterfaceState {
            p: vec![0.0; len],
            r: vec![0.0; len],
            r_prev: None,
            omega,
            k: 0,
        }
    }

    /// Stores `r` as the current residual, keeping the old one for Aitken.
    pub fn record_residual(&mut self, r: Vec<f64>) {
        let old = std::mem::replace(&mut self.r, r);
        if self.k > 0 {
            self.r_prev = Some(old);
        }
    }

    /// `p ← p + ω r` with the current residual; advances `k`.
    pub fn richardson_update(&mut self, omega: f64) {
        richardson_update(&mut self.p, &self.r, omega);
        self.omega = omega;
        self.k += 1;
    }
}

pub fn richardson_update(p: &mut [f64], r: &[f64], omega: f64) {
    assert_eq!(p.len(), r.len());
    for (pi, ri) in p.iter_mut().zip(r) {
        *pi += omega * ri;
    }
}

/// Δ² relaxation factor without bounds.
pub fn aitken_omega_unclamped(r_prev: &[f64], r: &[f64], omega_prev: f64) -> Result<f64, Stagnation> {
    assert_eq!(r_prev.len(), r.len());
    let delta: Vec<f64> = r.iter().zip(r_prev).map(|(a, b)| a - b).collect();
    let dn = norm(&delta);
    let reference = norm(r_prev);
    if !(dn >= STAGNATION_RATIO * reference) || dn == 0.0 {
        return Err(Stagnation { delta: dn, reference });
    }
    Ok(-omega_prev * dot(r_prev, &delta) / (dn * dn))
}

pub fn aitken_omega(r_prev: &[f64], r: &[f64], omega_prev: f64, bounds: OmegaBounds) -> Result<f64, Stagnation> {
    aitken_omega_unclamped(r_prev, r, omega_prev).map(|w| bounds.clamp(w))
}
