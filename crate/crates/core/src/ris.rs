//! STAR-RIS coefficient sets and the mode-switching partition.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Which half-space a user or an element serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Reflect,
    Transmit,
}

/// Feasible set for the in-mode coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RisConstraint {
    /// Mode switching with equality: in-mode amplitude exactly one.
    Strict,
    /// Mode switching with inequality: in-mode amplitude at most one.
    Relaxed,
}

/// Per-element reflect and transmit coefficients.
///
/// `reflect[m]` and `transmit[m]` are the diagonal entries of the reflect and
/// transmit coefficient matrices. `modes[m]` says which of the two may be
/// nonzero; the other is pinned to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RisConfig {
    pub reflect: Vec<Complex64>,
    pub transmit: Vec<Complex64>,
    pub modes: Vec<Side>,
    pub constraint: RisConstraint,
}

impl RisConfig {
    /// Standard mode-switching partition: the first half of the elements
    /// transmit, the second half reflect.
    pub fn ms_partition(elements: usize) -> Vec<Side> {
        (0..elements)
            .map(|m| if m < elements / 2 { Side::Transmit } else { Side::Reflect })
            .collect()
    }

    pub fn zeros(modes: Vec<Side>, constraint: RisConstraint) -> Self {
        let m = modes.len();
        Self {
            reflect: vec![Complex64::new(0.0, 0.0); m],
            transmit: vec![Complex64::new(0.0, 0.0); m],
            modes,
            constraint,
        }
    }

    /// Unit-amplitude in-mode coefficients with i.i.d. uniform phases.
    pub fn random_phases<R: Rng + ?Sized>(modes: Vec<Side>, constraint: RisConstraint, rng: &mut R) -> Self {
        let mut cfg = Self::zeros(modes, constraint);
        for m in 0..cfg.len() {
            let phase = rng.random::<f64>() * 2.0 * PI;
            *cfg.in_mode_mut(m) = Complex64::from_polar(1.0, phase);
        }
        cfg
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn side(&self, side: Side) -> &[Complex64] {
        match side {
            Side::Reflect => &self.reflect,
            Side::Transmit => &self.transmit,
        }
    }

    pub fn in_mode(&self, m: usize) -> Complex64 {
        match self.modes[m] {
            Side::Reflect => self.reflect[m],
            Side::Transmit => self.transmit[m],
        }
    }

    pub fn in_mode_mut(&mut self, m: usize) -> &mut Complex64 {
        match self.modes[m] {
            Side::Reflect => &mut self.reflect[m],
            Side::Transmit => &mut self.transmit[m],
        }
    }

    /// Variable layout used by the optimizer: reflect coefficients followed by
    /// transmit coefficients.
    pub fn stacked(&self) -> Vec<Complex64> {
        self.reflect.iter().chain(self.transmit.iter()).copied().collect()
    }

    pub fn with_stacked(&self, x: &[Complex64]) -> Result<Self> {
        let m = self.len();
        if x.len() != 2 * m {
            return Err(Error::DimensionMismatch(format!(
                "stacked RIS vector has {} entries, expected {}",
                x.len(),
                2 * m
            )));
        }
        Ok(Self {
            reflect: x[..m].to_vec(),
            transmit: x[m..].to_vec(),
            modes: self.modes.clone(),
            constraint: self.constraint,
        })
    }

    /// Largest violation of the feasible set (amplitude cap, off-mode zeros,
    /// and unit amplitude for the strict set).
    pub fn feasibility_violation(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for m in 0..self.len() {
            let (on, off) = match self.modes[m] {
                Side::Reflect => (self.reflect[m], self.transmit[m]),
                Side::Transmit => (self.transmit[m], self.reflect[m]),
            };
            worst = worst.max(off.norm());
            let total = on.norm_sqr() + off.norm_sqr();
            worst = worst.max(total - 1.0);
            if self.constraint == RisConstraint::Strict {
                worst = worst.max((on.norm() - 1.0).abs());
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn partition_halves() {
        let modes = RisConfig::ms_partition(4);
        assert_eq!(modes, vec![Side::Transmit, Side::Transmit, Side::Reflect, Side::Reflect]);
    }

    #[test]
    fn random_phases_are_feasible_strict() {
        let cfg = RisConfig::random_phases(RisConfig::ms_partition(24), RisConstraint::Strict, &mut rng_from_seed(1));
        assert!(cfg.feasibility_violation() < 1e-12);
        assert!(cfg.transmit[12..].iter().all(|z| z.norm() == 0.0));
        assert!(cfg.reflect[..12].iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn stacked_layout() {
        let cfg = RisConfig::random_phases(RisConfig::ms_partition(2), RisConstraint::Relaxed, &mut rng_from_seed(2));
        let x = cfg.stacked();
        assert_eq!(x.len(), 4);
        assert_eq!(cfg.with_stacked(&x).unwrap(), cfg);
        assert!(cfg.with_stacked(&x[..3]).is_err());
    }
}
