//! Alternating optimization over beamformers and RIS coefficients.
//!
//! One outer iteration runs one beamformer subproblem and then one RIS
//! subproblem, each built around the current iterate. After every candidate
//! step the true max-min objective is recomputed and the step is kept only if
//! the objective did not decrease, so the recorded objective sequence is
//! monotone even when the strict mode-switching projection loses rate.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{CVector, NetworkInstance};
use crate::error::{Error, Result};
use crate::fbl::{rate_report, BeamformerSet, FblParams, RateReport, RsMode};
use crate::ris::{RisConfig, RisConstraint, Side};
use crate::rng::{child_rng, stream};
use crate::solver::{enforce_power, project_feasible, project_strict_ms, solve_beamforming, solve_ris, RisVariant, SolverOptions};
use crate::surrogate::{build_context, build_ris_context};

/// How the RIS is used by a scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeRis {
    /// No RIS: all coefficients zero.
    None,
    /// Conventional reflecting surface, phases optimized.
    ReflectOnlyOptimized,
    /// Mode switching with random unit-amplitude phases, not optimized.
    RandomStrict,
    /// Mode switching, unit amplitudes, optimized.
    StarMsStrict,
    /// Mode switching, amplitudes at most one, optimized.
    StarMsRelaxed,
}

/// A transmission scheme. Serialized as its label; besides the six named
/// schemes, any combination can be written as `MODE:variant`, for example
/// `TIN:star_ms_strict`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SchemeSpec {
    pub rs_mode: RsMode,
    pub ris: SchemeRis,
    pub label: String,
}

impl SchemeSpec {
    pub fn new(rs_mode: RsMode, ris: SchemeRis, label: impl Into<String>) -> Self {
        Self { rs_mode, ris, label: label.into() }
    }

    /// The six compared schemes, baselines first.
    pub fn default_schemes() -> Vec<SchemeSpec> {
        ["R-RIS-TIN", "No-RIS-TIN", "No-RIS-RS", "Rand-RIS-RS_I", "STAR-RIS-RS_I", "STAR-RIS-RS"]
            .iter()
            .map(|l| l.parse().unwrap())
            .collect()
    }

    pub fn partition(&self, elements: usize) -> Vec<Side> {
        match self.ris {
            SchemeRis::ReflectOnlyOptimized => vec![Side::Reflect; elements],
            _ => RisConfig::ms_partition(elements),
        }
    }

    pub fn constraint(&self) -> RisConstraint {
        match self.ris {
            SchemeRis::StarMsRelaxed | SchemeRis::None => RisConstraint::Relaxed,
            _ => RisConstraint::Strict,
        }
    }

    pub fn ris_variant(&self) -> RisVariant {
        match self.ris {
            SchemeRis::None | SchemeRis::RandomStrict => RisVariant::Fixed,
            SchemeRis::ReflectOnlyOptimized => RisVariant::ReflectOnly,
            SchemeRis::StarMsStrict => RisVariant::StrictMs,
            SchemeRis::StarMsRelaxed => RisVariant::RelaxedMs,
        }
    }
}

impl FromStr for SchemeSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (mode, ris) = match s.trim() {
            "R-RIS-TIN" => (RsMode::Tin, SchemeRis::ReflectOnlyOptimized),
            "No-RIS-TIN" => (RsMode::Tin, SchemeRis::None),
            "No-RIS-RS" => (RsMode::RateSplitting, SchemeRis::None),
            "Rand-RIS-RS_I" => (RsMode::RateSplitting, SchemeRis::RandomStrict),
            "STAR-RIS-RS_I" => (RsMode::RateSplitting, SchemeRis::StarMsStrict),
            "STAR-RIS-RS" => (RsMode::RateSplitting, SchemeRis::StarMsRelaxed),
            other => {
                let parsed = other.split_once(':').and_then(|(m, v)| {
                    let mode = match m {
                        "RS" => RsMode::RateSplitting,
                        "TIN" => RsMode::Tin,
                        _ => return None,
                    };
                    let ris = match v {
                        "none" => SchemeRis::None,
                        "reflect_only_optimized" => SchemeRis::ReflectOnlyOptimized,
                        "random_strict" => SchemeRis::RandomStrict,
                        "star_ms_strict" => SchemeRis::StarMsStrict,
                        "star_ms_relaxed" => SchemeRis::StarMsRelaxed,
                        _ => return None,
                    };
                    Some((mode, ris))
                });
                parsed.ok_or_else(|| Error::Config(format!("unknown scheme label {other:?}")))?
            }
        };
        Ok(Self::new(mode, ris, s.trim()))
    }
}

impl TryFrom<String> for SchemeSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SchemeSpec> for String {
    fn from(s: SchemeSpec) -> String {
        s.label
    }
}

impl std::fmt::Display for SchemeSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AoOptions {
    pub max_outer: usize,
    /// Stop when one outer iteration improves the objective by less than
    /// this many bits per channel use.
    pub tol_bits: f64,
    /// Independent starts; the best final objective is kept.
    pub restarts: usize,
    /// Seed of the initial RIS phases.
    pub seed: u64,
    /// Unguarded continuation rounds run before the monotone phase in RS
    /// mode. Round `j` of `J` scales the dispersion penalty by
    /// `(j + 1) / J`. This lets a weak user's common SINR cross the region
    /// near zero where the finite-blocklength rate is negative and
    /// decreasing. The monotone phase then starts from the better of the
    /// initial point and the warm-up result. The rounds count towards
    /// `max_outer` and are capped at `max_outer - 1`.
    pub warmup_outer: usize,
    /// Doubling steps of the guarded extrapolation after an accepted RIS
    /// step; 0 disables it.
    pub extrapolation_steps: usize,
    pub solver: SolverOptions,
}

impl Default for AoOptions {
    fn default() -> Self {
        Self { max_outer: 50, tol_bits: 1e-4, restarts: 1, seed: 0, warmup_outer: 20, extrapolation_steps: 8, solver: SolverOptions::default() }
    }
}

impl AoOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_outer == 0 || self.restarts == 0 {
            return Err(Error::InvalidParameter("max_outer and restarts must be >= 1".into()));
        }
        if !(self.tol_bits > 0.0) {
            return Err(Error::InvalidParameter(format!("tol_bits must be > 0, got {}", self.tol_bits)));
        }
        self.solver.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Converged,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    /// True max-min objective after the iteration, bits per channel use.
    pub objective_bits: f64,
    pub wall_s: f64,
    pub beamformer_accepted: bool,
    pub ris_accepted: bool,
}

#[derive(Debug, Clone)]
pub struct SolveTrace {
    pub scheme: SchemeSpec,
    /// Continuation rounds run before `rows[0]`.
    pub warmup_rounds: usize,
    /// Monotone phase; row 0 is its starting point.
    pub rows: Vec<TraceRow>,
    pub termination: Termination,
    pub beamformers: BeamformerSet,
    pub ris: RisConfig,
    pub report: RateReport,
    /// Set when a warm start had to be projected into the scheme's feasible set.
    pub warm_start_projected: bool,
}

impl SolveTrace {
    /// Warm-up rounds plus monotone iterations.
    pub fn outer_iterations(&self) -> usize {
        self.warmup_rounds + self.rows.len().saturating_sub(1)
    }

    pub fn objective_bits(&self) -> f64 {
        self.report.objective_bits()
    }

    pub fn wall_s(&self) -> f64 {
        self.rows.last().map(|r| r.wall_s).unwrap_or(0.0)
    }

    /// One CSV row per outer iteration.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,objective_bits,wall_s,beamformer_accepted,ris_accepted\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.9e},{:.6e},{},{}",
                r.iteration, r.objective_bits, r.wall_s, r.beamformer_accepted, r.ris_accepted
            );
        }
        out
    }
}

/// Starting point of an optimization run.
#[derive(Debug, Clone)]
pub struct StartPoint {
    pub beamformers: BeamformerSet,
    pub ris: RisConfig,
    pub projected: bool,
}

fn mrt_direction(h: &CVector) -> CVector {
    let n = h.norm();
    if n == 0.0 {
        let mut e = CVector::zeros(h.len());
        e[0] = Complex64::new(1.0, 0.0);
        e
    } else {
        h.map(|z| z.conj() / n)
    }
}

/// Initial beamformers and RIS coefficients.
///
/// Private beamformers point along the direct-channel MRT directions with an
/// equal power split over all streams; the common beamformer (RS only) is the
/// normalized sum of those directions. RIS coefficients get unit amplitude
/// and i.i.d. uniform phases, except for schemes without a RIS.
pub fn initialize<R: Rng + ?Sized>(
    instance: &NetworkInstance,
    scheme: &SchemeSpec,
    power: f64,
    rng: &mut R,
) -> (BeamformerSet, RisConfig) {
    let users = instance.users();
    let streams = match scheme.rs_mode {
        RsMode::RateSplitting => users + 1,
        RsMode::Tin => users,
    };
    let amp = Complex64::new((power / streams as f64).sqrt(), 0.0);
    let dirs: Vec<CVector> = instance.d.iter().map(mrt_direction).collect();
    let mut w = BeamformerSet::zeros(instance.antennas(), users, power);
    for (p, dir) in w.private.iter_mut().zip(&dirs) {
        *p = dir * amp;
    }
    if scheme.rs_mode == RsMode::RateSplitting {
        let sum = dirs.iter().fold(CVector::zeros(instance.antennas()), |acc, d| acc + d);
        let dir = if sum.norm() > 1e-12 { sum.unscale(sum.norm()) } else { dirs[0].clone() };
        w.common = dir * amp;
    }

    let modes = scheme.partition(instance.elements());
    let ris = match scheme.ris {
        SchemeRis::None => RisConfig::zeros(modes, scheme.constraint()),
        _ => RisConfig::random_phases(modes, scheme.constraint(), rng),
    };
    (w, ris)
}

/// Maps a finished run onto the feasible set of `new_scheme`.
pub fn warm_start(donor: &SolveTrace, new_scheme: &SchemeSpec) -> Result<StartPoint> {
    warm_start_from(&donor.beamformers, &donor.ris, new_scheme)
}

pub fn warm_start_from(w: &BeamformerSet, ris: &RisConfig, new_scheme: &SchemeSpec) -> Result<StartPoint> {
    let mut projected = false;
    let mut beamformers = w.clone();
    if new_scheme.rs_mode == RsMode::Tin && !beamformers.is_common_zero() {
        beamformers.common = CVector::zeros(w.antennas());
        projected = true;
    }

    let modes = new_scheme.partition(ris.len());
    let target = match new_scheme.ris {
        SchemeRis::None => RisConfig::zeros(modes, new_scheme.constraint()),
        _ => {
            let mut out = RisConfig::zeros(modes, new_scheme.constraint());
            for m in 0..ris.len() {
                // keep whichever coefficient the donor drove on this element
                let z = match (ris.reflect[m].norm() > 0.0, ris.transmit[m].norm() > 0.0) {
                    (true, false) => ris.reflect[m],
                    (false, true) => ris.transmit[m],
                    _ => ris.in_mode(m),
                };
                *out.in_mode_mut(m) = if z.norm() > 1.0 { z / z.norm() } else { z };
            }
            if new_scheme.constraint() == RisConstraint::Strict {
                out = project_strict_ms(&out);
            }
            out
        }
    };
    let moved = target
        .reflect
        .iter()
        .chain(&target.transmit)
        .zip(ris.reflect.iter().chain(&ris.transmit))
        .any(|(a, b)| (a - b).norm() > 1e-12);
    if new_scheme.ris != SchemeRis::None && moved {
        projected = true;
    }
    Ok(StartPoint { beamformers, ris: target, projected })
}

struct Evaluator<'a> {
    instance: &'a NetworkInstance,
    fbl: &'a FblParams,
    mode: RsMode,
}

impl Evaluator<'_> {
    fn report(&self, w: &BeamformerSet, ris: &RisConfig) -> Result<RateReport> {
        let h = self.instance.effective_channels(ris)?;
        rate_report(&h, w, self.fbl, self.instance.sigma2, self.mode)
    }
}

/// Guarded line search along an accepted RIS step: tries
/// `next + s (next - prev)` for `s = 1, 2, 4, ...`, projected onto the
/// feasible set, for as long as the true objective keeps increasing.
fn extrapolate(
    eval: &Evaluator<'_>,
    w: &BeamformerSet,
    prev: &RisConfig,
    next: RisConfig,
    report: RateReport,
    steps: usize,
) -> Result<(RisConfig, RateReport)> {
    let (x0, x1) = (prev.stacked(), next.stacked());
    let (mut best, mut best_report) = (next, report);
    let mut s = 1.0;
    for _ in 0..steps {
        let x: Vec<Complex64> = x1.iter().zip(&x0).map(|(a, b)| a + (a - b) * s).collect();
        let cand = project_feasible(&best.with_stacked(&x)?);
        let r = eval.report(w, &cand)?;
        if r.objective <= best_report.objective {
            break;
        }
        best = cand;
        best_report = r;
        s *= 2.0;
    }
    Ok((best, best_report))
}

/// Runs the alternating optimization from an explicit start point.
pub fn optimize_from(
    instance: &NetworkInstance,
    scheme: &SchemeSpec,
    fbl: &FblParams,
    start: StartPoint,
    opts: &AoOptions,
) -> Result<SolveTrace> {
    opts.validate()?;
    instance.validate()?;
    fbl.validate(instance.users())?;
    let clock = Instant::now();
    let inst = instance.normalized();
    let mode = scheme.rs_mode;
    let power = start.beamformers.power_budget;
    if !(power > 0.0) {
        return Err(Error::InvalidParameter(format!("power budget must be positive, got {power}")));
    }
    if start.beamformers.users() != inst.users() || start.beamformers.antennas() != inst.antennas() {
        return Err(Error::DimensionMismatch("start beamformers do not match the instance".into()));
    }
    if start.ris.len() != inst.elements() {
        return Err(Error::DimensionMismatch("start RIS does not match the instance".into()));
    }
    let mut w = enforce_power(&start.beamformers, power);
    if mode == RsMode::Tin {
        w.common = CVector::zeros(inst.antennas());
    }
    let mut ris = start.ris;
    let eval = Evaluator { instance: &inst, fbl, mode };
    let mut report = eval.report(&w, &ris)?;
    let variant = scheme.ris_variant();

    let warmup_rounds = if mode == RsMode::RateSplitting { opts.warmup_outer.min(opts.max_outer - 1) } else { 0 };
    if warmup_rounds > 0 {
        let (mut w_c, mut ris_c) = (w.clone(), ris.clone());
        for j in 0..warmup_rounds {
            let params = fbl.with_penalty_scale((j + 1) as f64 / warmup_rounds as f64)?;
            let h = inst.effective_channels(&ris_c)?;
            let s = build_context(&h, &w_c, &params, inst.sigma2, mode)?;
            w_c = solve_beamforming(&s, power, mode, &opts.solver)?;
            if variant != RisVariant::Fixed && inst.elements() > 0 {
                let s = build_ris_context(&inst, &ris_c, &w_c, &params, mode)?;
                ris_c = solve_ris(&s, &ris_c, variant, opts.solver.ccp_eps(j), &opts.solver)?;
            }
        }
        let r_c = eval.report(&w_c, &ris_c)?;
        if r_c.objective > report.objective {
            (w, ris, report) = (w_c, ris_c, r_c);
        }
    }
    let mut rows = vec![TraceRow {
        iteration: 0,
        objective_bits: report.objective_bits(),
        wall_s: clock.elapsed().as_secs_f64(),
        beamformer_accepted: false,
        ris_accepted: false,
    }];
    let mut termination = Termination::MaxIterations;
    // the CCP slack acts as a trust region: kept while RIS steps are
    // accepted, shrunk when the unit-modulus projection loses rate
    let mut ccp_eps = opts.solver.ccp_eps_initial;

    for it in 0..opts.max_outer - warmup_rounds {
        let before = report.objective;

        let h = inst.effective_channels(&ris)?;
        let s = build_context(&h, &w, fbl, inst.sigma2, mode)?;
        let w_new = solve_beamforming(&s, power, mode, &opts.solver)?;
        let r_new = eval.report(&w_new, &ris)?;
        let beamformer_accepted = r_new.objective >= report.objective;
        if beamformer_accepted {
            w = w_new;
            report = r_new;
        }

        let mut ris_accepted = false;
        let mut can_shrink = false;
        if variant != RisVariant::Fixed && inst.elements() > 0 {
            let s = build_ris_context(&inst, &ris, &w, fbl, mode)?;
            let ris_new = solve_ris(&s, &ris, variant, ccp_eps, &opts.solver)?;
            let r_new = eval.report(&w, &ris_new)?;
            if r_new.objective >= report.objective {
                let (ris_ext, r_ext) = extrapolate(&eval, &w, &ris, ris_new, r_new, opts.extrapolation_steps)?;
                ris = ris_ext;
                report = r_ext;
                ris_accepted = true;
            } else if ccp_eps > opts.solver.ccp_eps_min {
                ccp_eps = (ccp_eps * opts.solver.ccp_eps_decay).max(opts.solver.ccp_eps_min);
                can_shrink = true;
            }
        }

        rows.push(TraceRow {
            iteration: it + 1,
            objective_bits: report.objective_bits(),
            wall_s: clock.elapsed().as_secs_f64(),
            beamformer_accepted,
            ris_accepted,
        });
        if (report.objective - before) / std::f64::consts::LN_2 < opts.tol_bits && !can_shrink {
            termination = Termination::Converged;
            break;
        }
    }

    Ok(SolveTrace {
        scheme: scheme.clone(),
        rows,
        termination,
        warmup_rounds,
        beamformers: w,
        ris,
        report,
        warm_start_projected: start.projected,
    })
}

/// Initializes from `opts.seed` (plus restarts) and runs the alternating
/// optimization; with several restarts the best final objective wins.
pub fn optimize(
    instance: &NetworkInstance,
    scheme: &SchemeSpec,
    fbl: &FblParams,
    power: f64,
    opts: &AoOptions,
) -> Result<SolveTrace> {
    opts.validate()?;
    let mut best: Option<SolveTrace> = None;
    for r in 0..opts.restarts {
        let mut rng = if r == 0 {
            child_rng(opts.seed, &[stream::INIT])
        } else {
            child_rng(opts.seed, &[stream::RESTART, r as u64])
        };
        let (beamformers, ris) = initialize(instance, scheme, power, &mut rng);
        let trace = optimize_from(instance, scheme, fbl, StartPoint { beamformers, ris, projected: false }, opts)?;
        if best.as_ref().is_none_or(|b| trace.report.objective > b.report.objective) {
            best = Some(trace);
        }
    }
    Ok(best.expect("at least one restart"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_network, ScenarioConfig};
    use crate::rng::rng_from_seed;

    #[test]
    fn scheme_labels_round_trip() {
        let schemes = SchemeSpec::default_schemes();
        assert_eq!(schemes.len(), 6);
        assert_eq!(schemes[0].rs_mode, RsMode::Tin);
        assert_eq!(schemes[0].ris, SchemeRis::ReflectOnlyOptimized);
        assert_eq!(schemes[5].ris, SchemeRis::StarMsRelaxed);
        assert!("Bogus".parse::<SchemeSpec>().is_err());
        assert!("TIN:sideways".parse::<SchemeSpec>().is_err());
        let custom: SchemeSpec = "TIN:star_ms_strict".parse().unwrap();
        assert_eq!((custom.rs_mode, custom.ris), (RsMode::Tin, SchemeRis::StarMsStrict));
        let json = serde_json::to_string(&schemes[3]).unwrap();
        assert_eq!(json, "\"Rand-RIS-RS_I\"");
        assert_eq!(serde_json::from_str::<SchemeSpec>(&json).unwrap(), schemes[3]);
    }

    #[test]
    fn tin_initialization() {
        let inst = generate_network(&ScenarioConfig::default(), 1).unwrap();
        let scheme: SchemeSpec = "No-RIS-TIN".parse().unwrap();
        let (w, ris) = initialize(&inst, &scheme, 0.6, &mut rng_from_seed(0));
        assert!(w.is_common_zero());
        for p in &w.private {
            assert!((p.norm_squared() - 0.1).abs() < 1e-12);
        }
        assert!(ris.stacked().iter().all(|z| z.norm() == 0.0));
        let h = inst.effective_channels(&ris).unwrap();
        assert_eq!(h, inst.d);
    }

    #[test]
    fn rs_initialization_is_deterministic() {
        let inst = generate_network(&ScenarioConfig::default(), 2).unwrap();
        let scheme: SchemeSpec = "STAR-RIS-RS_I".parse().unwrap();
        let (w1, r1) = initialize(&inst, &scheme, 1.0, &mut rng_from_seed(5));
        let (w2, r2) = initialize(&inst, &scheme, 1.0, &mut rng_from_seed(5));
        assert_eq!(w1, w2);
        assert_eq!(r1, r2);
        assert!((w1.total_power() - 1.0).abs() < 1e-12);
        assert!(r1.feasibility_violation() < 1e-12);
    }

    #[test]
    fn warm_start_cases() {
        let inst = generate_network(&ScenarioConfig::default(), 3).unwrap();
        let strict: SchemeSpec = "STAR-RIS-RS_I".parse().unwrap();
        let relaxed: SchemeSpec = "STAR-RIS-RS".parse().unwrap();
        let (w, ris) = initialize(&inst, &strict, 1.0, &mut rng_from_seed(1));

        let into_relaxed = warm_start_from(&w, &ris, &relaxed).unwrap();
        assert!(!into_relaxed.projected);
        assert_eq!(into_relaxed.ris.stacked(), ris.stacked());

        let mut shrunk = ris.clone();
        for m in 0..shrunk.len() {
            *shrunk.in_mode_mut(m) *= 0.5;
        }
        let into_strict = warm_start_from(&w, &shrunk, &strict).unwrap();
        assert!(into_strict.projected);
        assert!(into_strict.ris.stacked().iter().zip(ris.stacked()).all(|(a, b)| (a - b).norm() < 1e-12));

        let tin: SchemeSpec = "No-RIS-TIN".parse().unwrap();
        let (w_tin, ris_tin) = initialize(&inst, &tin, 1.0, &mut rng_from_seed(1));
        let rs: SchemeSpec = "No-RIS-RS".parse().unwrap();
        let s = warm_start_from(&w_tin, &ris_tin, &rs).unwrap();
        assert!(s.beamformers.is_common_zero());
        assert!(s.beamformers.total_power() <= 1.0 + 1e-12);
    }
}
