//! Closed-form expressions for two-clock correlation spectroscopy.
//!
//! Conventions used throughout the crate:
//!
//! * Phases are in radians and kept unwrapped; values are reduced modulo 2π
//!   only for display.
//! * `delta_phi` (often `Δφ`) is the phase difference accumulated *between*
//!   the two clocks over one dark time, including any applied offset.
//! * Contrast `C` of the correlation fringe is at most 1/2 for a pair of
//!   uncorrelated atoms prepared in equal superpositions; `C = 1/2` means
//!   perfect mutual coherence and detection.

use serde::{Deserialize, Serialize};

use crate::{ensure_finite, Error, Result};

/// Default clock transition frequency in Hz, modeled on an Al+ optical clock.
pub const DEFAULT_NU_HZ: f64 = 1.121e15;

/// Penalty on fringe sensitivity when the laser phase of each probe is drawn
/// uniformly from [0, 2π) instead of servoed to quadrature. Averaging the
/// Fisher information of a sinusoidal fringe over a uniform phase halves it,
/// costing √2 in instability.
pub const UNIFORM_PHASE_PENALTY: f64 = std::f64::consts::SQRT_2;

/// Static description of one clock pair: transition frequency, single-atom
/// coherence budget and measurement overheads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClockSpec {
    /// Transition frequency ν in Hz.
    pub nu: f64,
    /// Excited-state lifetime T′ in seconds. Spontaneous decay at this rate
    /// is the contrast ceiling for a single uncorrelated pair.
    pub t_prime: f64,
    /// Probability that a single-atom state readout is reported correctly.
    /// 1.0 is ideal; 0.5 destroys all information.
    pub detection_fidelity: f64,
    /// Dead time per probe in seconds used for duty-cycle corrections
    /// (state preparation and detection, excluding rare recooling).
    pub overhead: f64,
    /// Dead time per probe in seconds used for wall-clock session accounting
    /// (includes everything: preparation, detection, occasional recooling).
    pub session_overhead: f64,
}

impl ClockSpec {
    /// A spec with the given frequency and lifetime, ideal detection and no
    /// overhead. Use struct update syntax to adjust the rest.
    pub fn new(nu: f64, t_prime: f64) -> Result<Self> {
        let spec = ClockSpec {
            nu,
            t_prime,
            detection_fidelity: 1.0,
            overhead: 0.0,
            session_overhead: 0.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks every field against its documented range.
    pub fn validate(&self) -> Result<()> {
        ensure_finite("nu", self.nu)?;
        ensure_finite("t_prime", self.t_prime)?;
        ensure_finite("detection_fidelity", self.detection_fidelity)?;
        ensure_finite("overhead", self.overhead)?;
        ensure_finite("session_overhead", self.session_overhead)?;
        if self.nu <= 0.0 {
            return Err(Error::Domain(format!("nu must be > 0, got {}", self.nu)));
        }
        if self.t_prime <= 0.0 {
            return Err(Error::Domain(format!(
                "t_prime must be > 0, got {}",
                self.t_prime
            )));
        }
        if !(0.5..=1.0).contains(&self.detection_fidelity) {
            return Err(Error::Domain(format!(
                "detection_fidelity must lie in [0.5, 1], got {}",
                self.detection_fidelity
            )));
        }
        if self.overhead < 0.0 || self.session_overhead < 0.0 {
            return Err(Error::Domain("overheads must be >= 0".into()));
        }
        Ok(())
    }

    /// Contrast reduction from imperfect single-atom readout on both atoms:
    /// each atom contributes a factor 2f − 1.
    pub fn detection_contrast_factor(&self) -> f64 {
        let d = 2.0 * self.detection_fidelity - 1.0;
        d * d
    }
}

impl Default for ClockSpec {
    /// Defaults modeled on a pair of co-trapped Al+ ions: ν = 1.121e15 Hz,
    /// T′ = 20.6 s, 99% readout fidelity, 100 ms nominal overhead and
    /// 753 ms average session overhead per probe.
    fn default() -> Self {
        ClockSpec {
            nu: DEFAULT_NU_HZ,
            t_prime: 20.6,
            detection_fidelity: 0.99,
            overhead: 0.1,
            session_overhead: 0.753,
        }
    }
}

/// Accumulated Ramsey phases of the two clocks for one probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhasePair {
    pub dphi_1: f64,
    pub dphi_2: f64,
}

impl PhasePair {
    pub fn new(dphi_1: f64, dphi_2: f64) -> Result<Self> {
        ensure_finite("dphi_1", dphi_1)?;
        ensure_finite("dphi_2", dphi_2)?;
        Ok(PhasePair { dphi_1, dphi_2 })
    }

    /// Differential phase δφ₂ − δφ₁, the argument of the correlation fringe.
    pub fn difference(&self) -> f64 {
        self.dphi_2 - self.dphi_1
    }
}

/// Exponential decay model for the correlation-fringe contrast as a function
/// of dark time: `C(t) = c0 · exp(−t / t_c)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastModel {
    /// Contrast at zero dark time, in [0, 1/2].
    pub c0: f64,
    /// Pair coherence time in seconds.
    pub t_c: f64,
}

impl ContrastModel {
    pub fn new(c0: f64, t_c: f64) -> Result<Self> {
        ensure_finite("c0", c0)?;
        ensure_finite("t_c", t_c)?;
        if !(0.0..=0.5).contains(&c0) {
            return Err(Error::Domain(format!("c0 must lie in [0, 0.5], got {c0}")));
        }
        if t_c <= 0.0 {
            return Err(Error::Domain(format!("t_c must be > 0, got {t_c}")));
        }
        Ok(ContrastModel { c0, t_c })
    }

    /// Contrast after dark time `t`.
    pub fn contrast_at(&self, t: f64) -> f64 {
        self.c0 * (-t / self.t_c).exp()
    }
}

/// Probability that a single clock flips state in one Ramsey sequence with
/// accumulated phase `dphi`: `(1 + cos dphi) / 2`.
///
/// # Errors
///
/// Non-finite input is rejected.
pub fn ramsey_transition_probability(dphi: f64) -> Result<f64> {
    ensure_finite("dphi", dphi)?;
    Ok((1.0 + dphi.cos()) / 2.0)
}

/// Probability that both clocks report the same answer (both flip or neither
/// flips) in one probe, for fully coherent atoms with the given accumulated
/// phases.
///
/// The flips are independent, so this is `p₁p₂ + (1−p₁)(1−p₂)`, which
/// rearranges to `[2 + cos(δφ₁−δφ₂) + cos(δφ₁+δφ₂)] / 4`. The sum-phase term
/// carries the laser phase and averages away over a randomized probe
/// sequence; the difference-phase term survives.
///
/// # Errors
///
/// Non-finite input is rejected (via [`PhasePair::new`] when constructing the
/// argument).
pub fn joint_correlation_probability(phases: PhasePair) -> Result<f64> {
    let p1 = ramsey_transition_probability(phases.dphi_1)?;
    let p2 = ramsey_transition_probability(phases.dphi_2)?;
    Ok(p1 * p2 + (1.0 - p1) * (1.0 - p2))
}

/// Correlation probability marginalized over a uniformly random laser phase:
/// `P_c(Δφ) = 1/2 + (C/2)·cos Δφ`.
///
/// `contrast` is the pair contrast `C ∈ [0, 1/2]`; `delta_phi` the
/// differential phase between the clocks.
///
/// # Errors
///
/// Contrast outside [0, 1/2] or non-finite input is rejected.
pub fn averaged_correlation(delta_phi: f64, contrast: f64) -> Result<f64> {
    ensure_finite("delta_phi", delta_phi)?;
    ensure_finite("contrast", contrast)?;
    if !(0.0..=0.5).contains(&contrast) {
        return Err(Error::Domain(format!(
            "contrast must lie in [0, 0.5], got {contrast}"
        )));
    }
    Ok(0.5 + 0.5 * contrast * delta_phi.cos())
}

/// Correlation-fringe contrast of a spontaneous-decay-limited pair after dark
/// time `t`: `C(t) = (1/2)·exp(−t / T′)`.
///
/// Each atom decays independently at rate 1/T′; the pair coherence decays at
/// the sum rate 2/T′, but only the amplitude (√ of the coherence) enters the
/// fringe of each atom, leaving `exp(−t/T′)` for the pair.
///
/// # Errors
///
/// Negative `t` is rejected.
pub fn lifetime_contrast(t: f64, spec: &ClockSpec) -> Result<f64> {
    ensure_finite("t", t)?;
    spec.validate()?;
    if t < 0.0 {
        return Err(Error::Domain(format!("t must be >= 0, got {t}")));
    }
    Ok(0.5 * (-t / spec.t_prime).exp())
}

/// Fractional frequency instability at averaging time `tau` of a correlation
/// comparison running probes of dark time `t` with fringe contrast
/// `contrast`, assuming quadrature operation and no dead time:
///
/// `σ(τ) = 1 / (2π ν C √(t τ))`.
///
/// # Errors
///
/// Zero or negative contrast signals an unmeasurable configuration and is
/// rejected, as are non-positive `t` or `tau`.
pub fn instability(spec: &ClockSpec, contrast: f64, t: f64, tau: f64) -> Result<f64> {
    spec.validate()?;
    ensure_finite("contrast", contrast)?;
    ensure_finite("t", t)?;
    ensure_finite("tau", tau)?;
    if contrast <= 0.0 {
        return Err(Error::Domain(format!(
            "contrast must be > 0 for a measurable fringe, got {contrast}"
        )));
    }
    if t <= 0.0 || tau <= 0.0 {
        return Err(Error::Domain(format!(
            "t and tau must be > 0, got t = {t}, tau = {tau}"
        )));
    }
    Ok(1.0 / (2.0 * std::f64::consts::PI * spec.nu * contrast * (t * tau).sqrt()))
}

/// Instability of a lifetime-limited pair at averaging time 1 s as a function
/// of dark time, quadrature operation, no dead time:
///
/// `σ(T) = exp(T/T′) / (π ν √T)`.
///
/// This is [`instability`] with `contrast = lifetime_contrast(T)` and
/// `tau = 1`; it reaches its minimum at `T = T′/2`.
pub fn lifetime_limited_sigma1s(spec: &ClockSpec, t: f64) -> Result<f64> {
    let c = lifetime_contrast(t, spec)?;
    instability(spec, c, t, 1.0)
}

/// Instability at averaging time 1 s for a scan whose laser phase is drawn
/// uniformly per probe, with contrast from `model` and duty cycle from the
/// spec's nominal overhead:
///
/// `σ(T) = √2 / (2π ν C(T) √(T · d(T)))` with `d(T) = T / (T + overhead)`.
pub fn uniform_scan_sigma1s(spec: &ClockSpec, model: &ContrastModel, t: f64) -> Result<f64> {
    spec.validate()?;
    ensure_finite("t", t)?;
    if t <= 0.0 {
        return Err(Error::Domain(format!("t must be > 0, got {t}")));
    }
    let c = model.contrast_at(t);
    let effective_tau = duty_cycle_factor(t, spec);
    Ok(UNIFORM_PHASE_PENALTY * instability(spec, c, t, effective_tau)?)
}

/// Quality factor of the pair coherence, `Q = π ν T_c`: the number of radians
/// of transition phase accumulated over the coherence time, halved because
/// the *pair* dephases at twice the single-atom amplitude rate.
///
/// # Errors
///
/// `t_c` must be > 0.
pub fn q_coherence(spec: &ClockSpec, t_c: f64) -> Result<f64> {
    spec.validate()?;
    ensure_finite("t_c", t_c)?;
    if t_c <= 0.0 {
        return Err(Error::Domain(format!("t_c must be > 0, got {t_c}")));
    }
    Ok(std::f64::consts::PI * spec.nu * t_c)
}

/// Spectroscopic quality factor of a Ramsey fringe of dark time `t`:
/// `Q = 2 ν t` (line quality ν/Δν with Fourier-limited Δν = 1/(2t)).
///
/// # Errors
///
/// `t` must be > 0.
pub fn q_spectroscopic(spec: &ClockSpec, t: f64) -> Result<f64> {
    spec.validate()?;
    ensure_finite("t", t)?;
    if t <= 0.0 {
        return Err(Error::Domain(format!("t must be > 0, got {t}")));
    }
    Ok(2.0 * spec.nu * t)
}

/// Fraction of wall-clock time spent interrogating: `t / (t + overhead)`.
/// Uses the spec's nominal (duty-cycle) overhead. `t` must be > 0 for the
/// result to be meaningful; the value lies in (0, 1].
pub fn duty_cycle_factor(t: f64, spec: &ClockSpec) -> f64 {
    t / (t + spec.overhead)
}
