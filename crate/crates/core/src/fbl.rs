//! Second-order (normal approximation) rates for rate-splitting with a single
//! common stream.
//!
//! All rates are in nats per channel use. Conversion to bits happens at the
//! reporting layer.

use std::f64::consts::LN_2;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc_inv;

use crate::channel::CVector;
use crate::error::{Error, Result};

/// Whether the transmitter sends a common stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RsMode {
    /// 1-layer rate splitting: common stream plus private streams.
    #[serde(rename = "RS")]
    RateSplitting,
    /// Treat interference as noise; private streams only.
    #[serde(rename = "TIN")]
    Tin,
}

/// Inverse of the standard normal tail, `Q(x) = eps`.
pub fn q_inv(eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::Domain { value: eps, domain: "(0, 0.5)" });
    }
    Ok(std::f64::consts::SQRT_2 * erfc_inv(2.0 * eps))
}

/// Channel dispersion for Gaussian signalling and Gaussian interference.
pub fn dispersion(snr: f64) -> Result<f64> {
    if !(snr >= 0.0) {
        return Err(Error::Domain { value: snr, domain: "[0, inf)" });
    }
    Ok(2.0 * snr / (1.0 + snr))
}

/// `ln(1 + snr) - Q^-1(eps) sqrt(V(snr) / n)`; may be negative.
pub fn fbl_rate(snr: f64, eps: f64, n: f64) -> Result<f64> {
    if !(n >= 1.0) {
        return Err(Error::Domain { value: n, domain: "[1, inf)" });
    }
    let v = dispersion(snr)?;
    Ok(snr.ln_1p() - q_inv(eps)? * (v / n).sqrt())
}

/// Error probabilities and blocklengths of the common and private streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FblParams {
    pub eps_common: f64,
    pub eps_private: Vec<f64>,
    pub n_common: f64,
    pub n_private: Vec<f64>,
}

impl FblParams {
    pub fn uniform(users: usize, eps: f64, n: f64) -> Self {
        Self { eps_common: eps, eps_private: vec![eps; users], n_common: n, n_private: vec![n; users] }
    }

    pub fn users(&self) -> usize {
        self.eps_private.len()
    }

    pub fn validate(&self, users: usize) -> Result<()> {
        if self.eps_private.len() != users || self.n_private.len() != users {
            return Err(Error::DimensionMismatch(format!(
                "FBL parameters for {} users, instance has {users}",
                self.eps_private.len()
            )));
        }
        for &eps in std::iter::once(&self.eps_common).chain(&self.eps_private) {
            q_inv(eps)?;
        }
        for &n in std::iter::once(&self.n_common).chain(&self.n_private) {
            if !(n >= 1.0) {
                return Err(Error::Domain { value: n, domain: "blocklength >= 1" });
            }
        }
        Ok(())
    }

    /// Dispersion-penalty weight `Q^-1(eps) / sqrt(n)` of the common stream.
    pub fn common_penalty(&self) -> Result<f64> {
        Ok(q_inv(self.eps_common)? / self.n_common.sqrt())
    }

    pub fn private_penalty(&self, k: usize) -> Result<f64> {
        Ok(q_inv(self.eps_private[k])? / self.n_private[k].sqrt())
    }

    /// Same error probabilities with every dispersion penalty multiplied by
    /// `scale` (blocklengths divided by `scale^2`).
    pub fn with_penalty_scale(&self, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Domain { value: scale, domain: "penalty scale > 0" });
        }
        let f = 1.0 / (scale * scale);
        Ok(Self {
            eps_common: self.eps_common,
            eps_private: self.eps_private.clone(),
            n_common: self.n_common * f,
            n_private: self.n_private.iter().map(|n| n * f).collect(),
        })
    }

    /// Same parameters with users reordered: entry `i` of the result is
    /// entry `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            eps_common: self.eps_common,
            eps_private: perm.iter().map(|&i| self.eps_private[i]).collect(),
            n_common: self.n_common,
            n_private: perm.iter().map(|&i| self.n_private[i]).collect(),
        }
    }
}

/// Common beamformer, one private beamformer per user, and the power budget.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerSet {
    pub common: CVector,
    pub private: Vec<CVector>,
    pub power_budget: f64,
}

impl BeamformerSet {
    pub fn zeros(antennas: usize, users: usize, power_budget: f64) -> Self {
        Self {
            common: CVector::zeros(antennas),
            private: vec![CVector::zeros(antennas); users],
            power_budget,
        }
    }

    pub fn users(&self) -> usize {
        self.private.len()
    }

    pub fn antennas(&self) -> usize {
        self.common.len()
    }

    pub fn total_power(&self) -> f64 {
        self.common.norm_squared() + self.private.iter().map(|w| w.norm_squared()).sum::<f64>()
    }

    /// Beamformer of stream `s`: `0` is the common stream, `l + 1` the private
    /// stream of user `l`.
    pub fn stream(&self, s: usize) -> &CVector {
        if s == 0 {
            &self.common
        } else {
            &self.private[s - 1]
        }
    }

    /// `[w_c, w_1, ..., w_K]` flattened.
    pub fn stacked(&self) -> Vec<Complex64> {
        (0..=self.users()).flat_map(|s| self.stream(s).iter().copied()).collect()
    }

    pub fn from_stacked(x: &[Complex64], antennas: usize, power_budget: f64) -> Result<Self> {
        if antennas == 0 || x.len() % antennas != 0 || x.len() < 2 * antennas {
            return Err(Error::DimensionMismatch(format!(
                "stacked beamformer of length {} does not split into blocks of {antennas}",
                x.len()
            )));
        }
        let mut blocks = x.chunks(antennas).map(|c| CVector::from_column_slice(c));
        let common = blocks.next().unwrap();
        Ok(Self { common, private: blocks.collect(), power_budget })
    }

    pub fn is_common_zero(&self) -> bool {
        self.common.iter().all(|z| z.norm_sqr() == 0.0)
    }
}

/// `h_k w_s` for every user and stream; row `k`, column `s` with the stream
/// numbering of [`BeamformerSet::stream`].
pub fn stream_gains(channels: &[CVector], w: &BeamformerSet) -> Result<Vec<Vec<Complex64>>> {
    if channels.len() != w.users() {
        return Err(Error::DimensionMismatch(format!(
            "{} channels for {} private beamformers",
            channels.len(),
            w.users()
        )));
    }
    channels
        .iter()
        .map(|h| {
            if h.len() != w.antennas() {
                return Err(Error::DimensionMismatch(format!(
                    "channel length {} vs {} antennas",
                    h.len(),
                    w.antennas()
                )));
            }
            Ok((0..=w.users()).map(|s| h.dot(w.stream(s))).collect())
        })
        .collect()
}

/// SNR of the common stream at user `k`; all private streams interfere.
pub fn snr_common(k: usize, channels: &[CVector], w: &BeamformerSet, sigma2: f64) -> Result<f64> {
    let z = stream_gains(channels, w)?;
    check_user(k, z.len())?;
    let interference: f64 = z[k][1..].iter().map(|g| g.norm_sqr()).sum();
    Ok(z[k][0].norm_sqr() / (sigma2 + interference))
}

/// SNR of the private stream of user `k` after the common stream has been
/// removed.
pub fn snr_private(k: usize, channels: &[CVector], w: &BeamformerSet, sigma2: f64) -> Result<f64> {
    let z = stream_gains(channels, w)?;
    check_user(k, z.len())?;
    Ok(private_snr_from_gains(&z[k], k, sigma2))
}

fn check_user(k: usize, users: usize) -> Result<()> {
    if k >= users {
        return Err(Error::DimensionMismatch(format!("user {k} out of range 0..{users}")));
    }
    Ok(())
}

fn private_snr_from_gains(row: &[Complex64], k: usize, sigma2: f64) -> f64 {
    let interference: f64 = row[1..]
        .iter()
        .enumerate()
        .filter(|&(l, _)| l != k)
        .map(|(_, g)| g.norm_sqr())
        .sum();
    row[k + 1].norm_sqr() / (sigma2 + interference)
}

/// Per-user rates and the max-min objective, in nats per channel use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub mode: RsMode,
    /// Common-stream rate decodable at each user.
    pub common_per_user: Vec<f64>,
    /// Shared common rate, `max(0, min_k common_per_user)`.
    pub common: f64,
    /// Private rates, unclamped.
    pub private: Vec<f64>,
    /// `common + private[k]`.
    pub total: Vec<f64>,
    /// `min_k total[k]`.
    pub objective: f64,
}

impl RateReport {
    pub fn objective_bits(&self) -> f64 {
        self.objective / LN_2
    }

    /// Operational max-min rate in bits per channel use: a negative
    /// second-order rate means the stream is not transmitted.
    pub fn reported_bits(&self) -> f64 {
        self.objective_bits().max(0.0)
    }
}

pub fn rate_report(
    channels: &[CVector],
    w: &BeamformerSet,
    params: &FblParams,
    sigma2: f64,
    mode: RsMode,
) -> Result<RateReport> {
    let z = stream_gains(channels, w)?;
    params.validate(z.len())?;
    if mode == RsMode::Tin && !w.is_common_zero() {
        return Err(Error::Contract("TIN mode requires a zero common beamformer".into()));
    }
    let users = z.len();
    let private = (0..users)
        .map(|k| fbl_rate(private_snr_from_gains(&z[k], k, sigma2), params.eps_private[k], params.n_private[k]))
        .collect::<Result<Vec<_>>>()?;
    let (common_per_user, common) = match mode {
        RsMode::Tin => (vec![0.0; users], 0.0),
        RsMode::RateSplitting => {
            let per_user = z
                .iter()
                .map(|row| {
                    let interference: f64 = row[1..].iter().map(|g| g.norm_sqr()).sum();
                    fbl_rate(row[0].norm_sqr() / (sigma2 + interference), params.eps_common, params.n_common)
                })
                .collect::<Result<Vec<_>>>()?;
            let common = per_user.iter().copied().fold(f64::INFINITY, f64::min).max(0.0);
            (per_user, common)
        }
    };
    let total: Vec<f64> = private.iter().map(|p| common + p).collect();
    let objective = total.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(RateReport { mode, common_per_user, common, private, total, objective })
}
