//! Channel generation for the STAR-RIS downlink.
//!
//! The BS-RIS matrix and the RIS-user vectors are Ricean with a steering-vector
//! line-of-sight part; the BS-user direct links are Rayleigh. Large-scale
//! fading follows the log-distance model of [`pathloss_linear`].
//!
//! The effective channel of user `k` is
//!
//! ```text
//! h_k = f_k diag(theta_side(k)) G + d_k
//! ```
//!
//! with `theta_side(k)` the reflect coefficients for users in the first half
//! and the transmit coefficients for the second half.

use std::collections::hash_map::DefaultHasher;
use std::f64::consts::PI;
use std::hash::{Hash, Hasher};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ris::{RisConfig, Side};
use crate::rng::{child_rng, stream};

pub type CVector = DVector<Complex64>;
pub type CMatrix = DMatrix<Complex64>;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Geometry {
    /// BS position in meters.
    pub bs: [f64; 2],
    /// RIS position in meters.
    pub ris: [f64; 2],
    /// Center of the disc holding the reflect-side users.
    pub reflect_center: [f64; 2],
    /// Center of the disc holding the transmit-side users.
    pub transmit_center: [f64; 2],
    pub user_radius: f64,
    /// Fixed user positions; overrides the random placement when present.
    pub user_positions: Option<Vec<[f64; 2]>>,
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            bs: [0.0, 0.0],
            ris: [48.0, 14.0],
            reflect_center: [38.0, 24.0],
            transmit_center: [58.0, 24.0],
            user_radius: 10.0,
            user_positions: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathLossConfig {
    pub bs_ris_exponent: f64,
    pub ris_user_exponent: f64,
    pub bs_user_exponent: f64,
    pub reference_loss_db: f64,
}

impl Default for PathLossConfig {
    fn default() -> Self {
        Self {
            bs_ris_exponent: 2.2,
            ris_user_exponent: 2.2,
            bs_user_exponent: 3.5,
            reference_loss_db: 30.0,
        }
    }
}

/// Scenario description. All values can be overridden from the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub users: usize,
    pub bs_antennas: usize,
    pub ris_elements: usize,
    pub rice_factor: f64,
    pub bandwidth_hz: f64,
    pub noise_psd_dbm_hz: f64,
    pub bs_gain_dbi: f64,
    pub ris_gain_dbi: f64,
    pub user_gain_dbi: f64,
    pub pathloss: PathLossConfig,
    pub geometry: Geometry,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            users: 6,
            bs_antennas: 4,
            ris_elements: 24,
            rice_factor: 3.0,
            bandwidth_hz: 1e6,
            noise_psd_dbm_hz: -174.0,
            bs_gain_dbi: 5.0,
            ris_gain_dbi: 5.0,
            user_gain_dbi: 0.0,
            pathloss: PathLossConfig::default(),
            geometry: Geometry::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        // a single user is allowed for oracle experiments; it sits on the reflect side
        if self.users == 0 || (self.users > 1 && self.users % 2 != 0) {
            return bad(format!("user count must be even and >= 2, got {}", self.users));
        }
        if self.ris_elements % 2 != 0 {
            return bad(format!("RIS element count must be even, got {}", self.ris_elements));
        }
        if self.bs_antennas == 0 {
            return bad("at least one BS antenna is required".into());
        }
        if !(self.rice_factor >= 0.0) {
            return bad(format!("rice factor must be >= 0, got {}", self.rice_factor));
        }
        if !(self.bandwidth_hz > 0.0) {
            return bad(format!("bandwidth must be positive, got {}", self.bandwidth_hz));
        }
        if !(self.geometry.user_radius >= 0.0) {
            return bad("user radius must be >= 0".into());
        }
        if let Some(pos) = &self.geometry.user_positions {
            if pos.len() != self.users {
                return bad(format!("{} user positions given for {} users", pos.len(), self.users));
            }
        }
        Ok(())
    }

    /// Linear noise variance in watts.
    pub fn noise_power_w(&self) -> f64 {
        dbm_to_watts(self.noise_psd_dbm_hz + 10.0 * self.bandwidth_hz.log10())
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) * 1e-3
}

fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Log-distance path loss as a linear power gain.
pub fn pathloss_linear(distance_m: f64, exponent: f64, ref_loss_db: f64) -> Result<f64> {
    if !(distance_m >= 1.0) {
        return Err(Error::InvalidGeometry(format!(
            "link distance {distance_m} m is below the 1 m reference distance"
        )));
    }
    Ok(10f64.powf(-(ref_loss_db + 10.0 * exponent * distance_m.log10()) / 10.0))
}

/// Half-wavelength ULA steering vector for an array with the given
/// direction sine.
fn steering(len: usize, sin_angle: f64) -> Vec<Complex64> {
    (0..len).map(|n| Complex64::from_polar(1.0, PI * n as f64 * sin_angle)).collect()
}

fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Ricean matrix with unit average element power.
///
/// The LOS part is `a_rx(sin_rx) a_tx(sin_tx)^H` for half-wavelength ULAs.
pub fn ricean_matrix<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    rice_factor: f64,
    sin_rx: f64,
    sin_tx: f64,
    rng: &mut R,
) -> Result<CMatrix> {
    if !(rice_factor >= 0.0) {
        return Err(Error::InvalidParameter(format!("rice factor must be >= 0, got {rice_factor}")));
    }
    let los_w = (rice_factor / (1.0 + rice_factor)).sqrt();
    let nlos_w = (1.0 / (1.0 + rice_factor)).sqrt();
    let a_rx = steering(rows, sin_rx);
    let a_tx = steering(cols, sin_tx);
    // column-major fill keeps the RNG draw order fixed
    Ok(CMatrix::from_fn(rows, cols, |i, j| {
        los_w * a_rx[i] * a_tx[j].conj() + nlos_w * complex_gaussian(rng)
    }))
}

/// i.i.d. unit-variance circularly-symmetric complex Gaussian vector.
pub fn rayleigh_vector<R: Rng + ?Sized>(len: usize, rng: &mut R) -> CVector {
    CVector::from_fn(len, |_, _| complex_gaussian(rng))
}

/// One channel draw.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkInstance {
    /// BS to RIS, `M x Nt`.
    pub g: CMatrix,
    /// RIS to user, one length-`M` row per user.
    pub f: Vec<CVector>,
    /// BS to user direct link, one length-`Nt` row per user.
    pub d: Vec<CVector>,
    pub sigma2: f64,
    pub user_positions: Vec<[f64; 2]>,
}

impl NetworkInstance {
    pub fn new(g: CMatrix, f: Vec<CVector>, d: Vec<CVector>, sigma2: f64) -> Result<Self> {
        let inst = Self { user_positions: vec![[0.0, 0.0]; f.len()], g, f, d, sigma2 };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        let (m, nt) = self.g.shape();
        if self.f.len() != self.d.len() || self.f.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "{} RIS links vs {} direct links",
                self.f.len(),
                self.d.len()
            )));
        }
        if let Some(k) = self.f.iter().position(|f| f.len() != m) {
            return Err(Error::DimensionMismatch(format!("user {k}: RIS link length != {m}")));
        }
        if let Some(k) = self.d.iter().position(|d| d.len() != nt) {
            return Err(Error::DimensionMismatch(format!("user {k}: direct link length != {nt}")));
        }
        if !(self.sigma2 > 0.0) {
            return Err(Error::InvalidParameter(format!("noise power must be positive, got {}", self.sigma2)));
        }
        Ok(())
    }

    pub fn users(&self) -> usize {
        self.f.len()
    }

    pub fn antennas(&self) -> usize {
        self.g.ncols()
    }

    pub fn elements(&self) -> usize {
        self.g.nrows()
    }

    /// Users `0..K/2` are on the reflect side, the rest on the transmit side.
    pub fn side_of(&self, k: usize) -> Side {
        side_of(k, self.users())
    }

    /// Same instance with channels rescaled so that the noise power is one.
    /// All SNRs, and hence all rates, are unchanged.
    pub fn normalized(&self) -> Self {
        let s = 1.0 / self.sigma2.sqrt();
        Self {
            g: self.g.clone(),
            f: self.f.iter().map(|f| f * Complex64::new(s, 0.0)).collect(),
            d: self.d.iter().map(|d| d * Complex64::new(s, 0.0)).collect(),
            sigma2: 1.0,
            user_positions: self.user_positions.clone(),
        }
    }

    /// Bit-level fingerprint of all channel coefficients and the noise power.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        let mut put = |z: &Complex64| {
            z.re.to_bits().hash(&mut h);
            z.im.to_bits().hash(&mut h);
        };
        self.g.iter().for_each(&mut put);
        self.f.iter().flat_map(|v| v.iter()).for_each(&mut put);
        self.d.iter().flat_map(|v| v.iter()).for_each(&mut put);
        self.sigma2.to_bits().hash(&mut h);
        h.finish()
    }

    /// Effective channel of every user.
    pub fn effective_channels(&self, ris: &RisConfig) -> Result<Vec<CVector>> {
        (0..self.users()).map(|k| assemble_effective_channel(self, ris, k)).collect()
    }
}

pub fn side_of(k: usize, users: usize) -> Side {
    if k < users.div_ceil(2) {
        Side::Reflect
    } else {
        Side::Transmit
    }
}

/// `h_k = f_k diag(theta) G + d_k` with `theta` taken from the side of user `k`
/// (zero-based).
pub fn assemble_effective_channel(instance: &NetworkInstance, ris: &RisConfig, k: usize) -> Result<CVector> {
    if k >= instance.users() {
        return Err(Error::DimensionMismatch(format!("user {k} out of range 0..{}", instance.users())));
    }
    if ris.len() != instance.elements() {
        return Err(Error::DimensionMismatch(format!(
            "RIS has {} elements, instance has {}",
            ris.len(),
            instance.elements()
        )));
    }
    let theta = ris.side(instance.side_of(k));
    let f = &instance.f[k];
    let mut h = instance.d[k].clone();
    for m in 0..instance.elements() {
        let coef = f[m] * theta[m];
        if coef == ZERO {
            continue;
        }
        for n in 0..instance.antennas() {
            h[n] += coef * instance.g[(m, n)];
        }
    }
    Ok(h)
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Direction sine for an array whose axis is the y axis.
fn sin_towards(from: [f64; 2], to: [f64; 2]) -> f64 {
    let dist = distance(from, to);
    if dist == 0.0 {
        0.0
    } else {
        (to[1] - from[1]) / dist
    }
}

fn place_users<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Vec<[f64; 2]> {
    if let Some(pos) = &cfg.geometry.user_positions {
        return pos.clone();
    }
    (0..cfg.users)
        .map(|k| {
            let center = match side_of(k, cfg.users) {
                Side::Reflect => cfg.geometry.reflect_center,
                Side::Transmit => cfg.geometry.transmit_center,
            };
            // uniform in the disc
            let r = cfg.geometry.user_radius * rng.random::<f64>().sqrt();
            let phi = 2.0 * PI * rng.random::<f64>();
            [center[0] + r * phi.cos(), center[1] + r * phi.sin()]
        })
        .collect()
}

/// Draws one network instance; deterministic given `seed`.
pub fn generate_network(cfg: &ScenarioConfig, seed: u64) -> Result<NetworkInstance> {
    cfg.validate()?;
    let mut rng = child_rng(seed, &[stream::CHANNEL]);
    let geo = &cfg.geometry;
    let pl = &cfg.pathloss;
    let users = place_users(cfg, &mut rng);

    let g_bs = db_to_linear(cfg.bs_gain_dbi);
    let g_ris = db_to_linear(cfg.ris_gain_dbi);
    let g_user = db_to_linear(cfg.user_gain_dbi);

    let bs_ris = pathloss_linear(distance(geo.bs, geo.ris), pl.bs_ris_exponent, pl.reference_loss_db)?;
    let g_scale = Complex64::new((bs_ris * g_bs * g_ris).sqrt(), 0.0);
    let g = ricean_matrix(
        cfg.ris_elements,
        cfg.bs_antennas,
        cfg.rice_factor,
        sin_towards(geo.ris, geo.bs),
        sin_towards(geo.bs, geo.ris),
        &mut rng,
    )? * g_scale;

    let mut f = Vec::with_capacity(cfg.users);
    let mut d = Vec::with_capacity(cfg.users);
    for &pos in &users {
        let ris_user = pathloss_linear(distance(geo.ris, pos), pl.ris_user_exponent, pl.reference_loss_db)?;
        let scale = Complex64::new((ris_user * g_ris * g_user).sqrt(), 0.0);
        // 1 x M row: the user has a single antenna
        let row = ricean_matrix(1, cfg.ris_elements, cfg.rice_factor, 0.0, sin_towards(geo.ris, pos), &mut rng)?;
        f.push(CVector::from_iterator(cfg.ris_elements, row.iter().map(|z| z * scale)));

        let bs_user = pathloss_linear(distance(geo.bs, pos), pl.bs_user_exponent, pl.reference_loss_db)?;
        let scale = Complex64::new((bs_user * g_bs * g_user).sqrt(), 0.0);
        d.push(rayleigh_vector(cfg.bs_antennas, &mut rng) * scale);
    }

    Ok(NetworkInstance { g, f, d, sigma2: cfg.noise_power_w(), user_positions: users })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ris::RisConstraint;
    use crate::rng::rng_from_seed;
    use approx_eq::*;

    mod approx_eq {
        pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
            (a - b).abs() <= tol * b.abs().max(1e-300)
        }
    }

    #[test]
    fn pathloss_reference_points() {
        assert!(rel_close(pathloss_linear(1.0, 3.7, 30.0).unwrap(), 1e-3, 1e-12));
        assert!(rel_close(pathloss_linear(10.0, 2.0, 30.0).unwrap(), 1e-5, 1e-12));
        for d in [1.0, 5.0, 123.0] {
            assert!(rel_close(pathloss_linear(d, 0.0, 17.0).unwrap(), 10f64.powf(-1.7), 1e-12));
        }
        assert!(matches!(pathloss_linear(0.5, 2.0, 30.0), Err(Error::InvalidGeometry(_))));
        assert!(pathloss_linear(2.0, 2.2, 30.0).unwrap() < pathloss_linear(1.5, 2.2, 30.0).unwrap());
    }

    #[test]
    fn ricean_rejects_negative_factor() {
        assert!(ricean_matrix(2, 2, -0.1, 0.0, 0.0, &mut rng_from_seed(0)).is_err());
    }

    #[test]
    fn ricean_los_limit_is_unit_modulus() {
        let h = ricean_matrix(8, 4, 1e9, 0.3, -0.7, &mut rng_from_seed(1)).unwrap();
        for z in h.iter() {
            assert!((z.norm() - 1.0).abs() < 1e-3, "{z}");
        }
    }

    #[test]
    fn ricean_statistics() {
        let mut rng = rng_from_seed(42);
        let draws = 100_000;
        // kappa = 0 is Rayleigh with unit power
        let h = ricean_matrix(1, draws, 0.0, 0.0, 0.0, &mut rng).unwrap();
        let p = h.iter().map(|z| z.norm_sqr()).sum::<f64>() / draws as f64;
        assert!((p - 1.0).abs() < 0.02, "{p}");

        // kappa = 3: deterministic 0.75, random 0.25
        let h = ricean_matrix(1, draws, 3.0, 0.2, 0.4, &mut rng).unwrap();
        let los = steering(draws, 0.4);
        let los_w = 0.75f64.sqrt();
        let var = h.iter().zip(&los).map(|(z, a)| (z - los_w * a.conj()).norm_sqr()).sum::<f64>() / draws as f64;
        assert!((var - 0.25).abs() < 0.25 * 0.02, "{var}");
        let p = h.iter().map(|z| z.norm_sqr()).sum::<f64>() / draws as f64;
        assert!((p - 1.0).abs() < 0.02, "{p}");
    }

    #[test]
    fn rayleigh_statistics() {
        let v = rayleigh_vector(100_000, &mut rng_from_seed(7));
        let n = v.len() as f64;
        let mean = v.iter().sum::<Complex64>() / n;
        let p = v.iter().map(|z| z.norm_sqr()).sum::<f64>() / n;
        assert!(mean.norm() < 0.02, "{mean}");
        assert!((p - 1.0).abs() < 0.02, "{p}");
        assert_eq!(rayleigh_vector(1, &mut rng_from_seed(0)).len(), 1);
    }

    #[test]
    fn default_scenario_dimensions() {
        let inst = generate_network(&ScenarioConfig::default(), 11).unwrap();
        assert_eq!(inst.g.shape(), (24, 4));
        assert_eq!(inst.f.len(), 6);
        assert_eq!(inst.d.len(), 6);
        assert!(inst.f.iter().all(|f| f.len() == 24));
        assert!(inst.d.iter().all(|d| d.len() == 4));
        assert_eq!(inst.side_of(2), Side::Reflect);
        assert_eq!(inst.side_of(3), Side::Transmit);
        let sigma2 = inst.sigma2;
        assert!(rel_close(sigma2, 10f64.powf(-11.4) * 1e-3, 1e-9));
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = ScenarioConfig::default();
        let a = generate_network(&cfg, 5).unwrap();
        let b = generate_network(&cfg, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = generate_network(&cfg, 6).unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn doubling_direct_distance_costs_expected_db() {
        let mut cfg = ScenarioConfig::default();
        cfg.users = 2;
        let power = |dist: f64| {
            let mut cfg = cfg.clone();
            cfg.geometry.user_positions = Some(vec![[dist, 0.0], [60.0, 30.0]]);
            let trials = 4000;
            (0..trials)
                .map(|s| {
                    let inst = generate_network(&cfg, s).unwrap();
                    inst.d[0].iter().map(|z| z.norm_sqr()).sum::<f64>() / inst.antennas() as f64
                })
                .sum::<f64>()
                / trials as f64
        };
        let drop_db = 10.0 * (power(20.0) / power(40.0)).log10();
        let expected = 35.0 * 2f64.log10();
        assert!((drop_db - expected).abs() < 0.3, "{drop_db} vs {expected}");
    }

    #[test]
    fn zero_ris_gives_direct_channel() {
        let inst = generate_network(&ScenarioConfig::default(), 3).unwrap();
        let ris = RisConfig::zeros(RisConfig::ms_partition(24), RisConstraint::Relaxed);
        for k in 0..6 {
            assert_eq!(assemble_effective_channel(&inst, &ris, k).unwrap(), inst.d[k]);
        }
    }

    #[test]
    fn scalar_expansion() {
        let c = |re, im| Complex64::new(re, im);
        let g = CMatrix::from_element(1, 1, c(0.5, -1.0));
        let f = vec![CVector::from_element(1, c(2.0, 1.0)), CVector::from_element(1, c(0.3, 0.3))];
        let d = vec![CVector::from_element(1, c(-1.0, 0.25)), CVector::from_element(1, c(0.0, 0.0))];
        let inst = NetworkInstance::new(g, f, d, 1.0).unwrap();
        let mut ris = RisConfig::zeros(vec![Side::Reflect], RisConstraint::Relaxed);
        ris.reflect[0] = c(0.6, 0.8);
        let h = assemble_effective_channel(&inst, &ris, 0).unwrap();
        let expect = c(2.0, 1.0) * c(0.6, 0.8) * c(0.5, -1.0) + c(-1.0, 0.25);
        assert!((h[0] - expect).norm() < 1e-15);
        // transmit-side user does not see the reflect coefficient
        let h1 = assemble_effective_channel(&inst, &ris, 1).unwrap();
        assert_eq!(h1[0], c(0.0, 0.0));
    }

    #[test]
    fn dimension_errors() {
        let inst = generate_network(&ScenarioConfig::default(), 3).unwrap();
        let ris = RisConfig::zeros(RisConfig::ms_partition(4), RisConstraint::Relaxed);
        assert!(matches!(assemble_effective_channel(&inst, &ris, 0), Err(Error::DimensionMismatch(_))));
        let ris = RisConfig::zeros(RisConfig::ms_partition(24), RisConstraint::Relaxed);
        assert!(assemble_effective_channel(&inst, &ris, 6).is_err());
    }

    #[test]
    fn invalid_scenarios() {
        let mut cfg = ScenarioConfig::default();
        cfg.users = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = ScenarioConfig::default();
        cfg.ris_elements = 5;
        assert!(cfg.validate().is_err());
        let mut cfg = ScenarioConfig::default();
        cfg.rice_factor = -1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn normalization_preserves_snr_ratio() {
        let inst = generate_network(&ScenarioConfig::default(), 9).unwrap();
        let n = inst.normalized();
        let ratio = inst.d[0][0].norm_sqr() / inst.sigma2;
        assert!(rel_close(n.d[0][0].norm_sqr(), ratio, 1e-12));
        assert_eq!(n.sigma2, 1.0);
    }
}
