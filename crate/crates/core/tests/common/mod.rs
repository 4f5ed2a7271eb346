#![allow(dead_code)]

use num_complex::Complex64;
use rand::Rng;
use star_rsma::channel::{rayleigh_vector, CMatrix, CVector, NetworkInstance};
use star_rsma::fbl::BeamformerSet;
use star_rsma::ris::{RisConfig, RisConstraint};
use star_rsma::rng::{rng_from_seed, SimRng};

/// Unit-scale instance (noise power one) with random relaxed RIS coefficients.
pub fn toy_instance(users: usize, antennas: usize, elements: usize, seed: u64) -> (NetworkInstance, RisConfig) {
    let mut rng = rng_from_seed(seed);
    let g = CMatrix::from_fn(elements, antennas, |_, _| gauss(&mut rng));
    let f = (0..users).map(|_| rayleigh_vector(elements, &mut rng) * Complex64::new(0.7, 0.0)).collect();
    let d = (0..users).map(|_| rayleigh_vector(antennas, &mut rng)).collect();
    let sigma2 = 0.2 + rng.random::<f64>();
    let inst = NetworkInstance::new(g, f, d, sigma2).unwrap();
    let mut ris = RisConfig::random_phases(RisConfig::ms_partition(elements), RisConstraint::Relaxed, &mut rng);
    for m in 0..elements {
        let amp: f64 = 0.3 + 0.7 * rng.random::<f64>();
        *ris.in_mode_mut(m) *= amp;
    }
    (inst, ris)
}

pub fn gauss(rng: &mut SimRng) -> Complex64 {
    rayleigh_vector(1, rng)[0]
}

pub fn random_beamformers(users: usize, antennas: usize, power: f64, rng: &mut SimRng) -> BeamformerSet {
    let mut w = BeamformerSet {
        common: rayleigh_vector(antennas, rng),
        private: (0..users).map(|_| rayleigh_vector(antennas, rng)).collect(),
        power_budget: power,
    };
    let scale = (power / w.total_power()).sqrt() * rng.random::<f64>().max(0.2);
    w.common *= Complex64::new(scale, 0.0);
    for p in &mut w.private {
        *p *= Complex64::new(scale, 0.0);
    }
    w
}

pub fn norm(x: &[Complex64]) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Uniform direction, radius uniform in `[0, radius]`.
pub fn perturb(x: &[Complex64], radius: f64, rng: &mut SimRng) -> Vec<Complex64> {
    let dir: Vec<Complex64> = (0..x.len()).map(|_| gauss(rng)).collect();
    let n = norm(&dir).max(1e-300);
    let r = radius * rng.random::<f64>();
    x.iter().zip(&dir).map(|(a, d)| a + d * (r / n)).collect()
}

/// Packed central-difference gradient: real part along `Re(x_j)`, imaginary
/// part along `Im(x_j)`.
pub fn central_difference<F: Fn(&[Complex64]) -> f64>(f: F, x: &[Complex64], step: f64) -> Vec<Complex64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|j| {
            let mut part = [0.0; 2];
            for (i, dir) in [Complex64::new(step, 0.0), Complex64::new(0.0, step)].into_iter().enumerate() {
                y[j] = x[j] + dir;
                let up = f(&y);
                y[j] = x[j] - dir;
                let down = f(&y);
                y[j] = x[j];
                part[i] = (up - down) / (2.0 * step);
            }
            Complex64::new(part[0], part[1])
        })
        .collect()
}

pub fn max_abs_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p.re - q.re).abs().max((p.im - q.im).abs()))
        .fold(0.0, f64::max)
}

pub fn vec_from(values: &[(f64, f64)]) -> CVector {
    CVector::from_iterator(values.len(), values.iter().map(|&(re, im)| Complex64::new(re, im)))
}
