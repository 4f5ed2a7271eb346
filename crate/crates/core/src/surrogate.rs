//! Concave minorizers of the second-order rates.
//!
//! Every stream rate has the form
//!
//! ```text
//! r(a, b) = ln(1 + |a|^2 / D) - c sqrt(V),   D = sigma2 + sum_l |b_l|^2,
//! V = 2 |a|^2 / (D + |a|^2),                 c = Q^-1(eps) / sqrt(n),
//! ```
//!
//! where `a` is the desired gain `h_k w_s` and `b_l` the interfering gains.
//! Around an expansion point (superscript `t`, with `T = D + |a|^2`) the bound
//!
//! ```text
//! r >= A + 2 Re{a_t^* a} / D_t
//!        + (2c / sqrt(V_t)) (sigma2 + sum_l Re{b_lt^* b_l}) / T_t
//!        - B (sigma2 + |a|^2 + sum_l |b_l|^2) / T_t
//!
//! A = ln(1 + snr_t) - snr_t - c (sqrt(V_t) / 2 + 1 / sqrt(V_t))
//! B = snr_t + zeta c / sqrt(V_t),            zeta = D_t / T_t
//! ```
//!
//! holds globally and with equality at the expansion point. It combines three
//! tangent bounds: `-ln(x) >= -ln(x_t) - (x - x_t) / x_t` on `x = D / T`, the
//! tangent of the concave `sqrt(V)`, and tangent planes of the jointly convex
//! quadratic-over-linear terms `|z|^2 / T`. The gains are affine in the
//! beamformers for fixed RIS coefficients and affine in the RIS coefficients
//! for fixed beamformers, so the same bound serves both subproblems.

use std::f64;

use num_complex::Complex64;

use crate::channel::{CVector, NetworkInstance};
use crate::error::{Error, Result};
use crate::fbl::{dispersion, BeamformerSet, FblParams, RsMode};
use crate::ris::{RisConfig, Side};

/// SNR floor applied to the dispersion expansion; keeps `1 / sqrt(V_t)`
/// finite when the expansion point carries no signal.
pub const SNR_FLOOR: f64 = 1e-10;

/// Stream gains `h_k w_s`, `k` over users and `s` over `[common, private_1..K]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamGains {
    users: usize,
    data: Vec<Complex64>,
}

impl StreamGains {
    pub fn zeros(users: usize) -> Self {
        Self { users, data: vec![Complex64::new(0.0, 0.0); users * (users + 1)] }
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn row(&self, k: usize) -> &[Complex64] {
        let n = self.users + 1;
        &self.data[k * n..(k + 1) * n]
    }

    pub fn row_mut(&mut self, k: usize) -> &mut [Complex64] {
        let n = self.users + 1;
        &mut self.data[k * n..(k + 1) * n]
    }
}

/// An affine map from a stacked complex variable to all stream gains.
pub trait GainModel {
    fn dim(&self) -> usize;
    fn users(&self) -> usize;
    fn gains(&self, x: &[Complex64]) -> StreamGains;
    /// Adds `sum_{k,s} cot[k][s] conj(d z_ks / d x)` to `grad`.
    ///
    /// With `cot = dF/dRe(z) + i dF/dIm(z)` this yields the gradient of `F`
    /// in the same packed form: real part along `Re(x)`, imaginary part along
    /// `Im(x)`.
    fn pullback(&self, cot: &StreamGains, grad: &mut [Complex64]);
}

/// Gains as a function of the stacked beamformers `[w_c, w_1, ..., w_K]`.
#[derive(Debug, Clone)]
pub struct BeamformerGains {
    channels: Vec<CVector>,
    antennas: usize,
}

impl BeamformerGains {
    pub fn new(channels: Vec<CVector>) -> Result<Self> {
        let antennas = channels.first().map(|h| h.len()).unwrap_or(0);
        if channels.is_empty() || channels.iter().any(|h| h.len() != antennas) {
            return Err(Error::DimensionMismatch("channels must share one nonzero length".into()));
        }
        Ok(Self { channels, antennas })
    }

    pub fn channels(&self) -> &[CVector] {
        &self.channels
    }
}

impl GainModel for BeamformerGains {
    fn dim(&self) -> usize {
        (self.channels.len() + 1) * self.antennas
    }

    fn users(&self) -> usize {
        self.channels.len()
    }

    fn gains(&self, x: &[Complex64]) -> StreamGains {
        let nt = self.antennas;
        let mut z = StreamGains::zeros(self.users());
        for (k, h) in self.channels.iter().enumerate() {
            for (s, out) in z.row_mut(k).iter_mut().enumerate() {
                *out = h.iter().zip(&x[s * nt..(s + 1) * nt]).map(|(a, b)| a * b).sum();
            }
        }
        z
    }

    fn pullback(&self, cot: &StreamGains, grad: &mut [Complex64]) {
        let nt = self.antennas;
        for (k, h) in self.channels.iter().enumerate() {
            for (s, &u) in cot.row(k).iter().enumerate() {
                if u == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for (g, hi) in grad[s * nt..(s + 1) * nt].iter_mut().zip(h.iter()) {
                    *g += u * hi.conj();
                }
            }
        }
    }
}

/// Gains as a function of the stacked RIS coefficients `[theta_r; theta_t]`
/// for fixed beamformers: `z_ks = sum_m f_km (G w_s)_m theta_side(k),m + d_k w_s`.
#[derive(Debug, Clone)]
pub struct RisGains {
    users: usize,
    elements: usize,
    sides: Vec<Side>,
    /// `coeff[k * (K+1) + s][m] = f_km (G w_s)_m`.
    coeff: Vec<Vec<Complex64>>,
    offset: StreamGains,
}

impl RisGains {
    pub fn new(instance: &NetworkInstance, w: &BeamformerSet) -> Result<Self> {
        let users = instance.users();
        if w.users() != users || w.antennas() != instance.antennas() {
            return Err(Error::DimensionMismatch("beamformers do not match the instance".into()));
        }
        let m = instance.elements();
        // G w_s for every stream
        let gw: Vec<CVector> = (0..=users).map(|s| &instance.g * w.stream(s)).collect();
        let mut coeff = Vec::with_capacity(users * (users + 1));
        let mut offset = StreamGains::zeros(users);
        for k in 0..users {
            for s in 0..=users {
                coeff.push((0..m).map(|e| instance.f[k][e] * gw[s][e]).collect());
                offset.row_mut(k)[s] = instance.d[k].dot(w.stream(s));
            }
        }
        let sides = (0..users).map(|k| instance.side_of(k)).collect();
        Ok(Self { users, elements: m, sides, coeff, offset })
    }

    fn side_offset(&self, k: usize) -> usize {
        match self.sides[k] {
            Side::Reflect => 0,
            Side::Transmit => self.elements,
        }
    }
}

impl GainModel for RisGains {
    fn dim(&self) -> usize {
        2 * self.elements
    }

    fn users(&self) -> usize {
        self.users
    }

    fn gains(&self, x: &[Complex64]) -> StreamGains {
        let mut z = self.offset.clone();
        let n = self.users + 1;
        for k in 0..self.users {
            let theta = &x[self.side_offset(k)..self.side_offset(k) + self.elements];
            for (s, out) in z.row_mut(k).iter_mut().enumerate() {
                *out += self.coeff[k * n + s].iter().zip(theta).map(|(a, b)| a * b).sum::<Complex64>();
            }
        }
        z
    }

    fn pullback(&self, cot: &StreamGains, grad: &mut [Complex64]) {
        let n = self.users + 1;
        for k in 0..self.users {
            let off = self.side_offset(k);
            for (s, &u) in cot.row(k).iter().enumerate() {
                if u == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for (g, c) in grad[off..off + self.elements].iter_mut().zip(&self.coeff[k * n + s]) {
                    *g += u * c.conj();
                }
            }
        }
    }
}

/// Stream selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Common,
    Private,
}

/// Minorizer constants of one stream of one user.
#[derive(Debug, Clone)]
pub struct StreamBound {
    pub user: usize,
    /// Column of the desired gain in the [`StreamGains`] row.
    pub signal: usize,
    /// Columns of the interfering gains.
    pub interferers: Vec<usize>,
    pub sigma2: f64,
    /// Gains at the expansion point (whole row).
    pub expansion: Vec<Complex64>,
    /// Interference plus noise at the expansion point.
    pub denom: f64,
    /// Total received power at the expansion point.
    pub total: f64,
    pub snr: f64,
    /// Dispersion used in the expansion (after flooring).
    pub dispersion: f64,
    pub zeta: f64,
    /// `Q^-1(eps) / sqrt(n)`.
    pub penalty: f64,
    pub const_a: f64,
    pub coef_b: f64,
    /// True rate at the expansion point.
    pub rate: f64,
}

impl StreamBound {
    fn new(user: usize, signal: usize, interferers: Vec<usize>, row: &[Complex64], sigma2: f64, penalty: f64) -> Result<Self> {
        let interference: f64 = interferers.iter().map(|&l| row[l].norm_sqr()).sum();
        let denom = sigma2 + interference;
        let signal_power = row[signal].norm_sqr();
        let total = denom + signal_power;
        if !(denom > 0.0) || !total.is_finite() {
            return Err(Error::Degenerate(format!("user {user}: interference-plus-noise {denom} is not positive")));
        }
        let snr = signal_power / denom;
        let v_true = dispersion(snr)?;
        let v = v_true.max(dispersion(SNR_FLOOR)?);
        let sqrt_v = v.sqrt();
        let zeta = denom / total;
        let const_a = snr.ln_1p() - snr - penalty * (0.5 * sqrt_v + 1.0 / sqrt_v);
        let coef_b = snr + zeta * penalty / sqrt_v;
        let rate = snr.ln_1p() - penalty * v_true.sqrt();
        Ok(Self {
            user,
            signal,
            interferers,
            sigma2,
            expansion: row.to_vec(),
            denom,
            total,
            snr,
            dispersion: v,
            zeta,
            penalty,
            const_a,
            coef_b,
            rate,
        })
    }

    fn lin_dispersion(&self) -> f64 {
        2.0 * self.penalty / self.dispersion.sqrt()
    }

    /// Value of the minorizer at gains `row`.
    pub fn value(&self, row: &[Complex64]) -> f64 {
        let a_t = self.expansion[self.signal];
        let a = row[self.signal];
        let mut cross = self.sigma2;
        let mut power = self.sigma2 + a.norm_sqr();
        for &l in &self.interferers {
            cross += (self.expansion[l].conj() * row[l]).re;
            power += row[l].norm_sqr();
        }
        self.const_a + 2.0 * (a_t.conj() * a).re / self.denom + self.lin_dispersion() * cross / self.total
            - self.coef_b * power / self.total
    }

    /// Adds `weight * d value / d row` (packed complex form) to `cot`.
    pub fn add_cotangent(&self, row: &[Complex64], weight: f64, cot: &mut [Complex64]) {
        let quad = 2.0 * self.coef_b / self.total;
        let lin = self.lin_dispersion() / self.total;
        let s = self.signal;
        cot[s] += weight * (2.0 * self.expansion[s] / self.denom - quad * row[s]);
        for &l in &self.interferers {
            cot[l] += weight * (lin * self.expansion[l] - quad * row[l]);
        }
    }
}

/// Minorizers of every user's common and private rate around one expansion
/// point. Immutable after construction.
#[derive(Debug, Clone)]
pub struct SurrogateContext {
    pub mode: RsMode,
    pub expansion: Vec<Complex64>,
    /// Empty in TIN mode.
    pub common: Vec<StreamBound>,
    pub private: Vec<StreamBound>,
}

impl SurrogateContext {
    pub fn new<M: GainModel>(model: &M, expansion: &[Complex64], params: &FblParams, sigma2: f64, mode: RsMode) -> Result<Self> {
        if expansion.len() != model.dim() {
            return Err(Error::DimensionMismatch(format!(
                "expansion point has {} entries, model expects {}",
                expansion.len(),
                model.dim()
            )));
        }
        let users = model.users();
        params.validate(users)?;
        if !(sigma2 > 0.0) {
            return Err(Error::Degenerate(format!("noise power {sigma2} is not positive")));
        }
        let z = model.gains(expansion);
        let private_streams: Vec<usize> = (1..=users).collect();
        let common = match mode {
            RsMode::Tin => Vec::new(),
            RsMode::RateSplitting => (0..users)
                .map(|k| StreamBound::new(k, 0, private_streams.clone(), z.row(k), sigma2, params.common_penalty()?))
                .collect::<Result<_>>()?,
        };
        let private = (0..users)
            .map(|k| {
                let interferers = private_streams.iter().copied().filter(|&s| s != k + 1).collect();
                StreamBound::new(k, k + 1, interferers, z.row(k), sigma2, params.private_penalty(k)?)
            })
            .collect::<Result<_>>()?;
        Ok(Self { mode, expansion: expansion.to_vec(), common, private })
    }

    pub fn users(&self) -> usize {
        self.private.len()
    }

    pub fn bound(&self, k: usize, stream: Stream) -> Result<&StreamBound> {
        let list = match stream {
            Stream::Common => &self.common,
            Stream::Private => &self.private,
        };
        list.get(k).ok_or_else(|| {
            Error::Contract(format!("no {stream:?} bound for user {k} in {:?} mode", self.mode))
        })
    }

    /// `zeta_{k,c}`: interference-plus-noise over total received power at the
    /// expansion point, common stream.
    pub fn zeta_common(&self, k: usize) -> Result<f64> {
        Ok(self.bound(k, Stream::Common)?.zeta)
    }

    /// Epigraph objective of the minorizers, `max(0, min_k common_k) + min_k private_k`,
    /// from precomputed values.
    pub fn epigraph(&self, common: &[f64], private: &[f64]) -> f64 {
        let p = private.iter().copied().fold(f64::INFINITY, f64::min);
        if common.is_empty() {
            p
        } else {
            common.iter().copied().fold(f64::INFINITY, f64::min).max(0.0) + p
        }
    }

    /// Epigraph objective evaluated with the true rates at the expansion point.
    pub fn expansion_objective(&self) -> f64 {
        let c: Vec<f64> = self.common.iter().map(|b| b.rate).collect();
        let p: Vec<f64> = self.private.iter().map(|b| b.rate).collect();
        self.epigraph(&c, &p)
    }
}

/// A context bundled with the gain model it was built on.
#[derive(Debug, Clone)]
pub struct Surrogate<M: GainModel> {
    pub model: M,
    pub ctx: SurrogateContext,
}

pub type BeamformerSurrogate = Surrogate<BeamformerGains>;
pub type RisSurrogate = Surrogate<RisGains>;

/// Surrogates in the beamformers for fixed effective channels.
pub fn build_context(
    channels: &[CVector],
    w_t: &BeamformerSet,
    params: &FblParams,
    sigma2: f64,
    mode: RsMode,
) -> Result<BeamformerSurrogate> {
    if channels.len() != w_t.users() {
        return Err(Error::DimensionMismatch(format!(
            "{} channels for {} users",
            channels.len(),
            w_t.users()
        )));
    }
    let model = BeamformerGains::new(channels.to_vec())?;
    let ctx = SurrogateContext::new(&model, &w_t.stacked(), params, sigma2, mode)?;
    Ok(Surrogate { model, ctx })
}

/// Surrogates in the RIS coefficients for fixed beamformers.
pub fn build_ris_context(
    instance: &NetworkInstance,
    ris_t: &RisConfig,
    w: &BeamformerSet,
    params: &FblParams,
    mode: RsMode,
) -> Result<RisSurrogate> {
    if ris_t.len() != instance.elements() {
        return Err(Error::DimensionMismatch(format!(
            "RIS has {} elements, instance has {}",
            ris_t.len(),
            instance.elements()
        )));
    }
    let model = RisGains::new(instance, w)?;
    let ctx = SurrogateContext::new(&model, &ris_t.stacked(), params, instance.sigma2, mode)?;
    Ok(Surrogate { model, ctx })
}

impl<M: GainModel> Surrogate<M> {
    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    fn check_dim(&self, x: &[Complex64]) -> Result<()> {
        if x.len() != self.model.dim() {
            return Err(Error::DimensionMismatch(format!(
                "variable has {} entries, surrogate expects {}",
                x.len(),
                self.model.dim()
            )));
        }
        Ok(())
    }

    /// Value and gradient of one stream's minorizer. The gradient is packed:
    /// `grad[j] = d/dRe(x_j) + i d/dIm(x_j)`.
    pub fn stream(&self, k: usize, stream: Stream, x: &[Complex64]) -> Result<(f64, Vec<Complex64>)> {
        self.check_dim(x)?;
        let bound = self.ctx.bound(k, stream)?;
        let z = self.model.gains(x);
        let value = bound.value(z.row(k));
        let mut cot = StreamGains::zeros(self.model.users());
        bound.add_cotangent(z.row(k), 1.0, cot.row_mut(k));
        let mut grad = vec![Complex64::new(0.0, 0.0); x.len()];
        self.model.pullback(&cot, &mut grad);
        Ok((value, grad))
    }

    pub fn common(&self, k: usize, x: &[Complex64]) -> Result<(f64, Vec<Complex64>)> {
        self.stream(k, Stream::Common, x)
    }

    pub fn private(&self, k: usize, x: &[Complex64]) -> Result<(f64, Vec<Complex64>)> {
        self.stream(k, Stream::Private, x)
    }

    /// All minorizer values at `x`: `(common, private, gains)`.
    pub fn values(&self, x: &[Complex64]) -> (Vec<f64>, Vec<f64>, StreamGains) {
        let z = self.model.gains(x);
        let c = self.ctx.common.iter().map(|b| b.value(z.row(b.user))).collect();
        let p = self.ctx.private.iter().map(|b| b.value(z.row(b.user))).collect();
        (c, p, z)
    }

    /// Surrogate epigraph objective at `x`.
    pub fn epigraph(&self, x: &[Complex64]) -> f64 {
        let (c, p, _) = self.values(x);
        self.ctx.epigraph(&c, &p)
    }

    /// Gradient of `sum_k wc[k] common_k + sum_k wp[k] private_k`.
    pub fn weighted_gradient(&self, z: &StreamGains, wc: &[f64], wp: &[f64]) -> Vec<Complex64> {
        let mut cot = StreamGains::zeros(self.model.users());
        for (b, &wt) in self.ctx.common.iter().zip(wc) {
            b.add_cotangent(z.row(b.user), wt, cot.row_mut(b.user));
        }
        for (b, &wt) in self.ctx.private.iter().zip(wp) {
            b.add_cotangent(z.row(b.user), wt, cot.row_mut(b.user));
        }
        let mut grad = vec![Complex64::new(0.0, 0.0); self.model.dim()];
        self.model.pullback(&cot, &mut grad);
        grad
    }
}

/// Beamformer-domain common-stream minorizer of user `k` at `w`.
pub fn surrogate_common(k: usize, w: &BeamformerSet, s: &BeamformerSurrogate) -> Result<(f64, Vec<Complex64>)> {
    s.common(k, &w.stacked())
}

/// Beamformer-domain private-stream minorizer of user `k` at `w`.
pub fn surrogate_private(k: usize, w: &BeamformerSet, s: &BeamformerSurrogate) -> Result<(f64, Vec<Complex64>)> {
    s.private(k, &w.stacked())
}

/// RIS-domain minorizer of one stream of user `k` at `ris`; the gradient is
/// over the stacked `[theta_r; theta_t]` coefficients.
pub fn surrogate_in_ris(k: usize, stream: Stream, ris: &RisConfig, s: &RisSurrogate) -> Result<(f64, Vec<Complex64>)> {
    if ris.len() * 2 != s.dim() {
        return Err(Error::DimensionMismatch(format!(
            "RIS with {} elements for a surrogate over {} coefficients",
            ris.len(),
            s.dim()
        )));
    }
    s.stream(k, stream, &ris.stacked())
}
