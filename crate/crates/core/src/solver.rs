//! Convex inner problems of one alternating-optimization round.
//!
//! Both subproblems maximize the surrogate epigraph objective
//! `max(0, min_k common_k) + min_k private_k` over a convex domain: the power
//! ball for the beamformers, and per-element discs (optionally cut by the
//! linearized unit-modulus constraint) for the RIS coefficients.
//!
//! The clamp at zero makes that objective convex in the common rate, which
//! leaves a flat region whenever some user cannot decode the common stream.
//! The ascent therefore works on the exact-penalty form
//! `y + k min(0, y) + min_k private_k` with `y = min_k common_k`, which is
//! concave and agrees with the epigraph wherever the common stream is
//! decodable. Min and the penalty kink are smoothed (soft-min/soft-plus) with
//! a temperature annealed towards zero, and the result is maximized by
//! projected gradient ascent with Barzilai-Borwein steps and Armijo
//! backtracking. The best point under the exact epigraph objective is
//! returned, and the expansion point is returned when nothing better is
//! found.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbl::{BeamformerSet, RsMode};
use crate::ris::{RisConfig, RisConstraint, Side};
use crate::surrogate::{BeamformerSurrogate, GainModel, RisSurrogate, Surrogate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Gradient steps per subproblem solve, summed over all temperatures.
    pub max_inner: usize,
    /// Relative change of the smoothed objective that ends a temperature stage.
    pub tol: f64,
    /// First soft-min temperature, in nats.
    pub temperature_initial: f64,
    /// Last soft-min temperature, in nats.
    pub temperature_final: f64,
    /// Multiplicative temperature decrease between stages.
    pub temperature_decay: f64,
    /// Armijo sufficient-increase constant.
    pub armijo: f64,
    pub feasibility_tol: f64,
    /// Initial CCP slack of the linearized unit-modulus constraint.
    pub ccp_eps_initial: f64,
    /// Factor applied to the CCP slack, per warm-up round and after every
    /// rejected RIS step of the monotone phase.
    pub ccp_eps_decay: f64,
    pub ccp_eps_min: f64,
    /// Extra slope applied to a negative common rate. Any positive value
    /// keeps the smoothed objective concave.
    pub common_deficit_weight: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_inner: 400,
            tol: 1e-10,
            temperature_initial: 0.05,
            temperature_final: 1e-4,
            temperature_decay: 0.25,
            armijo: 1e-4,
            feasibility_tol: 1e-8,
            ccp_eps_initial: 0.5,
            ccp_eps_decay: 0.5,
            ccp_eps_min: 1e-6,
            common_deficit_weight: 1.0,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tol", self.tol),
            ("temperature_initial", self.temperature_initial),
            ("temperature_final", self.temperature_final),
            ("armijo", self.armijo),
            ("feasibility_tol", self.feasibility_tol),
            ("ccp_eps_initial", self.ccp_eps_initial),
            ("ccp_eps_min", self.ccp_eps_min),
            ("common_deficit_weight", self.common_deficit_weight),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::InvalidParameter(format!("solver option {name} must be > 0, got {v}")));
            }
        }
        if !(self.temperature_decay > 0.0 && self.temperature_decay < 1.0) {
            return Err(Error::InvalidParameter("temperature_decay must lie in (0, 1)".into()));
        }
        if !(self.ccp_eps_decay > 0.0 && self.ccp_eps_decay <= 1.0) {
            return Err(Error::InvalidParameter("ccp_eps_decay must lie in (0, 1]".into()));
        }
        if self.max_inner == 0 {
            return Err(Error::InvalidParameter("max_inner must be >= 1".into()));
        }
        Ok(())
    }

    /// CCP slack used in outer iteration `iter` (zero-based).
    pub fn ccp_eps(&self, iter: usize) -> f64 {
        (self.ccp_eps_initial * self.ccp_eps_decay.powi(iter.min(i32::MAX as usize) as i32)).max(self.ccp_eps_min)
    }

    fn temperatures(&self) -> Vec<f64> {
        let mut out = vec![self.temperature_initial];
        while *out.last().unwrap() > self.temperature_final {
            let next = (out.last().unwrap() * self.temperature_decay).max(self.temperature_final);
            out.push(next);
        }
        out
    }
}

/// Feasible set used by the RIS subproblem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RisVariant {
    /// Mode switching with unit amplitudes: CCP-linearized subproblem, then
    /// projection to unit amplitude.
    StrictMs,
    /// Mode switching with amplitudes at most one.
    RelaxedMs,
    /// Conventional reflecting surface: every element reflects, unit amplitude.
    ReflectOnly,
    /// Coefficients are not optimized.
    Fixed,
}

/// Scales all beamformers down uniformly when the total power exceeds `power`.
pub fn enforce_power(w: &BeamformerSet, power: f64) -> BeamformerSet {
    let total = w.total_power();
    if total <= power {
        return w.clone();
    }
    let s = Complex64::new((power.max(0.0) / total).sqrt(), 0.0);
    BeamformerSet {
        common: &w.common * s,
        private: w.private.iter().map(|p| p * s).collect(),
        power_budget: w.power_budget,
    }
}

/// Unit amplitude on the in-mode coefficient (phase kept, phase zero for a
/// zero coefficient), zero on the off-mode coefficient.
pub fn project_strict_ms(ris: &RisConfig) -> RisConfig {
    let mut out = RisConfig::zeros(ris.modes.clone(), RisConstraint::Strict);
    for m in 0..ris.len() {
        let z = ris.in_mode(m);
        *out.in_mode_mut(m) = if z.norm() > 0.0 { z / z.norm() } else { Complex64::new(1.0, 0.0) };
    }
    out
}

/// Nearest point of the feasible set named by `ris.constraint`: off-mode
/// coefficients zero, in-mode coefficients on the unit circle (strict) or in
/// the unit disc (relaxed).
pub fn project_feasible(ris: &RisConfig) -> RisConfig {
    match ris.constraint {
        RisConstraint::Strict => project_strict_ms(ris),
        RisConstraint::Relaxed => {
            let mut out = RisConfig::zeros(ris.modes.clone(), RisConstraint::Relaxed);
            for m in 0..ris.len() {
                *out.in_mode_mut(m) = project_disc(ris.in_mode(m));
            }
            out
        }
    }
}

fn dot_re(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p.re * q.re + p.im * q.im).sum()
}

fn norm(a: &[Complex64]) -> f64 {
    dot_re(a, a).sqrt()
}

/// Numerically stable soft-min and its weights.
fn soft_min(values: &[f64], mu: f64) -> (f64, Vec<f64>) {
    let m = values.iter().copied().fold(f64::INFINITY, f64::min);
    let e: Vec<f64> = values.iter().map(|v| (-(v - m) / mu).exp()).collect();
    let s: f64 = e.iter().sum();
    (m - mu * s.ln(), e.into_iter().map(|x| x / s).collect())
}

/// `mu ln(1 + exp(y / mu))` and its derivative.
fn soft_plus(y: f64, mu: f64) -> (f64, f64) {
    let t = (-y.abs() / mu).exp();
    let value = y.max(0.0) + mu * t.ln_1p();
    let slope = if y >= 0.0 { 1.0 / (1.0 + t) } else { t / (1.0 + t) };
    (value, slope)
}

struct Smoothed {
    value: f64,
    grad: Vec<Complex64>,
    exact: f64,
}

fn smoothed<M: GainModel>(s: &Surrogate<M>, x: &[Complex64], mu: f64, s_weight: f64) -> Smoothed {
    let (c, p, z) = s.values(x);
    let exact = s.ctx.epigraph(&c, &p);
    let (p_min, wp) = soft_min(&p, mu);
    let (value, wc) = if c.is_empty() {
        (p_min, Vec::new())
    } else {
        // (1 + k) y - k softplus(y): equal to y when the common stream is
        // decodable and steeper below zero, so the objective stays concave
        let (c_min, wc) = soft_min(&c, mu);
        let (sp, sp_slope) = soft_plus(c_min, mu);
        let k = s_weight;
        let slope = 1.0 + k - k * sp_slope;
        ((1.0 + k) * c_min - k * sp + p_min, wc.into_iter().map(|w| w * slope).collect())
    };
    let grad = s.weighted_gradient(&z, &wc, &wp);
    Smoothed { value, grad, exact }
}

/// Projected gradient ascent on the smoothed epigraph objective. Returns the
/// best point found under the exact objective together with its value; the
/// projected starting point is always a candidate.
fn ascend<M: GainModel, P: Fn(&mut [Complex64])>(
    s: &Surrogate<M>,
    start: &[Complex64],
    project: P,
    scale: f64,
    opts: &SolverOptions,
) -> (Vec<Complex64>, f64) {
    let mut x = start.to_vec();
    project(&mut x);
    let temps = opts.temperatures();
    let per_stage = (opts.max_inner / temps.len()).max(1);

    let mut best_x = x.clone();
    let mut best = s.epigraph(&x);
    let mut alpha = f64::NAN;
    for &mu in &temps {
        let mut cur = smoothed(s, &x, mu, opts.common_deficit_weight);
        if !alpha.is_finite() {
            let gn = norm(&cur.grad);
            if gn == 0.0 {
                break;
            }
            alpha = 0.1 * scale / gn;
        }
        for _ in 0..per_stage {
            let mut accepted = None;
            for _ in 0..50 {
                let mut y: Vec<Complex64> = x.iter().zip(&cur.grad).map(|(a, g)| a + g * alpha).collect();
                project(&mut y);
                let d: Vec<Complex64> = y.iter().zip(&x).map(|(a, b)| a - b).collect();
                let dn = norm(&d);
                if dn <= 1e-14 * (1.0 + norm(&x)) {
                    break;
                }
                let next = smoothed(s, &y, mu, opts.common_deficit_weight);
                if next.value >= cur.value + opts.armijo * dot_re(&cur.grad, &d) {
                    accepted = Some((y, d, next));
                    break;
                }
                alpha *= 0.5;
            }
            let Some((y, d, next)) = accepted else { break };
            let yv: Vec<Complex64> = next.grad.iter().zip(&cur.grad).map(|(a, b)| a - b).collect();
            let sy = dot_re(&d, &yv);
            alpha = if sy < 0.0 { dot_re(&d, &d) / -sy } else { alpha * 2.0 };
            let change = (next.value - cur.value).abs();
            let prev_value = cur.value;
            x = y;
            cur = next;
            if cur.exact > best {
                best = cur.exact;
                best_x.clone_from(&x);
            }
            if change <= opts.tol * (1.0 + prev_value.abs()) {
                break;
            }
        }
    }
    (best_x, best)
}

/// Maximizes the beamformer surrogate over the power ball `||W||^2 <= power`.
/// In TIN mode the common beamformer is held at zero.
pub fn solve_beamforming(s: &BeamformerSurrogate, power: f64, mode: RsMode, opts: &SolverOptions) -> Result<BeamformerSet> {
    if !(power > 0.0) {
        return Err(Error::InvalidParameter(format!("power budget must be positive, got {power}")));
    }
    if mode != s.ctx.mode {
        return Err(Error::Contract(format!("context built for {:?}, solve requested for {mode:?}", s.ctx.mode)));
    }
    opts.validate()?;
    let users = s.model.users();
    let antennas = s.dim() / (users + 1);
    let expansion = &s.ctx.expansion;
    let start_power: f64 = expansion.iter().map(|z| z.norm_sqr()).sum();
    if start_power > power * (1.0 + opts.feasibility_tol) + opts.feasibility_tol {
        return Err(Error::Contract(format!(
            "expansion point uses power {start_power}, budget is {power}"
        )));
    }
    let project = |x: &mut [Complex64]| {
        if mode == RsMode::Tin {
            x[..antennas].iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
        }
        let total: f64 = x.iter().map(|z| z.norm_sqr()).sum();
        if total > power {
            let f = (power / total).sqrt();
            x.iter_mut().for_each(|z| *z *= f);
        }
    };
    let baseline = s.epigraph(expansion);
    let (x, best) = ascend(s, expansion, project, power.sqrt(), opts);
    let chosen = if best > baseline { x } else { expansion.clone() };
    BeamformerSet::from_stacked(&chosen, antennas, power)
}

/// Projection of `z` onto `{|z| <= 1, Re(conj(u) z) >= c}` with `|u| = 1`.
fn project_disc_cap(z: Complex64, u: Complex64, c: f64) -> Complex64 {
    // rotate so that the half-plane normal is the real axis
    let q = u.conj() * z;
    let inside_disc = |p: Complex64| p.norm_sqr() <= 1.0;
    let r = if inside_disc(q) && q.re >= c {
        q
    } else {
        let radial = if q.norm() > 1.0 { q / q.norm() } else { q };
        if radial.re >= c && inside_disc(radial) {
            radial
        } else {
            let flat = Complex64::new(c, q.im);
            if inside_disc(flat) {
                flat
            } else {
                let h = (1.0 - c * c).max(0.0).sqrt();
                Complex64::new(c, if q.im >= 0.0 { h } else { -h })
            }
        }
    };
    u * r
}

fn project_disc(z: Complex64) -> Complex64 {
    let n = z.norm();
    if n > 1.0 {
        z / n
    } else {
        z
    }
}

/// Optimizes the RIS coefficients for the beamformers fixed inside `s`.
///
/// `ccp_eps` is the slack of the linearized unit-modulus constraint; it is
/// only used by the strict variants.
pub fn solve_ris(
    s: &RisSurrogate,
    expansion: &RisConfig,
    variant: RisVariant,
    ccp_eps: f64,
    opts: &SolverOptions,
) -> Result<RisConfig> {
    if variant == RisVariant::Fixed {
        return Ok(expansion.clone());
    }
    opts.validate()?;
    let m = expansion.len();
    if 2 * m != s.dim() {
        return Err(Error::DimensionMismatch(format!(
            "RIS with {m} elements for a surrogate over {} coefficients",
            s.dim()
        )));
    }
    if variant == RisVariant::ReflectOnly && expansion.modes.iter().any(|&mode| mode != Side::Reflect) {
        return Err(Error::Contract("reflect-only optimization needs an all-reflect partition".into()));
    }
    if expansion.stacked() != s.ctx.expansion {
        return Err(Error::Contract("RIS surrogate was built around a different expansion point".into()));
    }
    let strict = matches!(variant, RisVariant::StrictMs | RisVariant::ReflectOnly);
    // per element: (stacked index of the in-mode coefficient, CCP cut)
    let cuts: Vec<(usize, usize, Option<(Complex64, f64)>)> = (0..m)
        .map(|e| {
            let (on, off) = match expansion.modes[e] {
                Side::Reflect => (e, m + e),
                Side::Transmit => (m + e, e),
            };
            let z0 = expansion.in_mode(e);
            let amp = z0.norm();
            let cut = if strict && amp > 1e-12 {
                Some((z0 / amp, ((1.0 - ccp_eps + amp * amp) / (2.0 * amp)).min(1.0)))
            } else {
                None
            };
            (on, off, cut)
        })
        .collect();
    let project = |x: &mut [Complex64]| {
        for &(on, off, cut) in &cuts {
            x[off] = Complex64::new(0.0, 0.0);
            x[on] = match cut {
                Some((u, c)) => project_disc_cap(x[on], u, c),
                None => project_disc(x[on]),
            };
        }
    };
    let start = expansion.stacked();
    let mut feasible_start = start.clone();
    project(&mut feasible_start);
    let baseline = s.epigraph(&feasible_start);
    let (x, best) = ascend(s, &start, project, (m as f64).sqrt().max(1.0), opts);
    let chosen = if best > baseline { x } else { feasible_start };
    let mut out = expansion.with_stacked(&chosen)?;
    if strict {
        out = project_strict_ms(&out);
    } else {
        out.constraint = RisConstraint::Relaxed;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn enforce_power_cases() {
        let w = BeamformerSet {
            common: crate::channel::CVector::from_element(2, c(1.0, 0.0)),
            private: vec![crate::channel::CVector::from_element(2, c(0.0, 1.0))],
            power_budget: 2.0,
        };
        assert_eq!(w.total_power(), 4.0);
        let s = enforce_power(&w, 2.0);
        assert!((s.total_power() - 2.0).abs() < 1e-12);
        assert!((s.common[0].norm() - 1.0 / 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(enforce_power(&w, 8.0), w);
        assert_eq!(enforce_power(&w, 4.0), w);
    }

    #[test]
    fn strict_projection_cases() {
        let mut ris = RisConfig::zeros(vec![Side::Reflect, Side::Transmit, Side::Reflect], RisConstraint::Relaxed);
        ris.reflect[0] = Complex64::from_polar(0.5, FRAC_PI_4);
        ris.transmit[0] = c(0.3, 0.0);
        ris.transmit[1] = Complex64::from_polar(1.0, 1.0);
        let p = project_strict_ms(&ris);
        assert!((p.reflect[0] - Complex64::from_polar(1.0, FRAC_PI_4)).norm() < 1e-15);
        assert_eq!(p.transmit[0], c(0.0, 0.0));
        assert_eq!(p.transmit[1], ris.transmit[1]);
        assert_eq!(p.reflect[2], c(1.0, 0.0));
        assert_eq!(project_strict_ms(&p), p);
        assert!(p.feasibility_violation() < 1e-15);
    }

    #[test]
    fn disc_cap_projection_matches_brute_force() {
        let u = Complex64::from_polar(1.0, 0.7);
        let cap = 0.8;
        let pts: Vec<Complex64> = (0..=400)
            .flat_map(|i| (0..=400).map(move |j| c(-1.0 + i as f64 / 200.0, -1.0 + j as f64 / 200.0)))
            .map(|q| u * q)
            .filter(|p| p.norm() <= 1.0 && (u.conj() * p).re >= cap)
            .collect();
        for z in [c(2.0, 0.3), c(-0.2, 0.1), c(0.0, 0.0), u * c(0.9, 0.0), u * c(0.5, 2.0), u * c(0.85, -0.1)] {
            let p = project_disc_cap(z, u, cap);
            assert!(p.norm() <= 1.0 + 1e-12 && (u.conj() * p).re >= cap - 1e-12);
            let brute = pts.iter().map(|q| (q - z).norm()).fold(f64::INFINITY, f64::min);
            assert!((p - z).norm() <= brute + 1e-9, "{z}");
        }
    }

    #[test]
    fn soft_min_and_plus_bounds() {
        let (v, w) = soft_min(&[1.0, 2.0, 0.5], 0.01);
        assert!(v <= 0.5 && v > 0.5 - 0.02);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let (sp, slope) = soft_plus(-3.0, 0.01);
        assert!(sp >= 0.0 && sp < 1e-100 && slope < 1e-100);
        let (sp, slope) = soft_plus(2.0, 0.01);
        assert!((sp - 2.0).abs() < 1e-12 && (slope - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ccp_schedule() {
        let o = SolverOptions::default();
        assert_eq!(o.ccp_eps(0), 0.5);
        assert_eq!(o.ccp_eps(1), 0.25);
        assert_eq!(o.ccp_eps(40), 1e-6);
        assert!(SolverOptions { temperature_decay: 1.0, ..o.clone() }.validate().is_err());
    }
}
