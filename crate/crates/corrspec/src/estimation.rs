//! Estimators for correlation-spectroscopy data.
//!
//! * [`fit_fringe_mle`] — binomial maximum-likelihood fit of one correlation
//!   fringe, with profile-likelihood confidence intervals.
//! * [`fit_contrast_decay`] — Bayesian extraction of the pair coherence time
//!   from fitted contrasts at several dark times.
//! * [`fit_phase_drift`] — weighted straight-line fit of fringe phase versus
//!   dark time, converting the slope to a fractional frequency difference.
//! * [`allan_deviation`] / [`extrapolate_sigma1s`] — overlapping Allan
//!   statistics and the 1 s instability convention.

use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};
use std::sync::OnceLock;

use crate::physics::ClockSpec;
use crate::protocol::FringeDataset;
use crate::{ensure_finite, Error, Result};

/// Probability clamp keeping the binomial log-likelihood finite at the fringe
/// extremes.
const P_FLOOR: f64 = 1e-12;

/// Log-likelihood drop defining a 68% profile-likelihood interval.
const PROFILE_DROP: f64 = 0.5;

/// Prior support for the coherence time in seconds. The upper bound encodes
/// that the pair cannot outlive the spontaneous-decay limit by much; data
/// pushing against it shows up as an interval endpoint at the bound.
pub const COHERENCE_PRIOR_BOUNDS: (f64, f64) = (0.0, 25.0);

/// `ln(n!)`, exact by summation below 1024 and by a Stirling series above.
pub(crate) fn ln_factorial(n: u64) -> f64 {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let mut t = Vec::with_capacity(1024);
        t.push(0.0);
        for k in 1..1024u64 {
            let prev = *t.last().expect("table is non-empty");
            t.push(prev + (k as f64).ln());
        }
        t
    });
    if let Some(&v) = table.get(n as usize) {
        return v;
    }
    let x = n as f64;
    x * x.ln() - x + 0.5 * (TAU * x).ln() + 1.0 / (12.0 * x) - 1.0 / (360.0 * x.powi(3))
        + 1.0 / (1260.0 * x.powi(5))
}

fn ln_choose(n: u64, k: u64) -> f64 {
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// Result of a maximum-likelihood fringe fit with the model
/// `P_c(φ) = 1/2 + (C/2)·cos(φ + φ₀)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FringeFit {
    /// Fitted contrast `C ∈ [0, 1/2]`.
    pub contrast: f64,
    /// Fitted fringe phase `φ₀`, reported in (−π, π].
    pub phase0: f64,
    /// Maximized log-likelihood, binomial coefficients included.
    pub log_likelihood: f64,
    /// 68% profile-likelihood interval for the contrast; endpoints clamp to
    /// the physical range [0, 1/2].
    pub contrast_ci: (f64, f64),
    /// 68% profile-likelihood interval for the phase, centered on `phase0`
    /// in the unwrapped sense (lower ≤ phase0 ≤ upper, width ≤ 2π).
    pub phase_ci: (f64, f64),
    /// False when the data do not constrain the phase (flat fringe): the
    /// phase interval then spans the full circle and `phase0` is arbitrary.
    pub identifiable: bool,
}

impl FringeFit {
    /// Symmetrized 1σ contrast uncertainty: the larger half-width of the
    /// profile interval (floored to keep downstream weights finite).
    pub fn contrast_sigma(&self) -> f64 {
        let lo = self.contrast - self.contrast_ci.0;
        let hi = self.contrast_ci.1 - self.contrast;
        lo.max(hi).max(1e-6)
    }

    /// Symmetrized 1σ phase uncertainty, same convention.
    pub fn phase_sigma(&self) -> f64 {
        let lo = self.phase0 - self.phase_ci.0;
        let hi = self.phase_ci.1 - self.phase0;
        lo.max(hi).max(1e-6)
    }
}

struct Observation {
    phase: f64,
    k: f64,
    n: f64,
}

fn shape_log_likelihood(obs: &[Observation], contrast: f64, phase0: f64) -> f64 {
    let mut ll = 0.0;
    for o in obs {
        let p = (0.5 + 0.5 * contrast * (o.phase + phase0).cos()).clamp(P_FLOOR, 1.0 - P_FLOOR);
        ll += o.k * p.ln() + (o.n - o.k) * (1.0 - p).ln();
    }
    ll
}

/// Golden-section maximization of a unimodal-near-peak function on [a, b].
fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..70 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
        if (b - a).abs() < 1e-12 {
            break;
        }
    }
    if fc > fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Bisects for `f(x) == target` on [lo, hi] given `f(lo) >= target >= f(hi)`
/// (or the reverse ordering).
fn bisect_crossing(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, target: f64) -> f64 {
    let rising = f(hi) > f(lo);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let above = f(mid) > target;
        if above == rising {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Profile log-likelihood over the phase at fixed contrast: coarse scan of
/// the full circle, then local refinement.
fn profile_over_phase(obs: &[Observation], contrast: f64) -> f64 {
    let coarse = 64;
    let mut best = (0.0, f64::NEG_INFINITY);
    for k in 0..coarse {
        let phase = TAU * k as f64 / coarse as f64;
        let ll = shape_log_likelihood(obs, contrast, phase);
        if ll > best.1 {
            best = (phase, ll);
        }
    }
    let half = TAU / coarse as f64;
    let (_, ll) = golden_max(
        |phase| shape_log_likelihood(obs, contrast, phase),
        best.0 - half,
        best.0 + half,
    );
    ll.max(best.1)
}

/// Profile log-likelihood over the contrast at fixed phase.
fn profile_over_contrast(obs: &[Observation], phase0: f64) -> f64 {
    let coarse = 50;
    let mut best = (0.0, f64::NEG_INFINITY);
    for j in 0..=coarse {
        let c = 0.5 * j as f64 / coarse as f64;
        let ll = shape_log_likelihood(obs, c, phase0);
        if ll > best.1 {
            best = (c, ll);
        }
    }
    let step = 0.5 / coarse as f64;
    let (_, ll) = golden_max(
        |c| shape_log_likelihood(obs, c, phase0),
        (best.0 - step).max(0.0),
        (best.0 + step).min(0.5),
    );
    ll.max(best.1)
}

fn wrap_to_pi(x: f64) -> f64 {
    x - TAU * (x / TAU).round()
}

/// Fits `P_c(φ) = 1/2 + (C/2)·cos(φ + φ₀)` to binomial fringe counts by
/// maximum likelihood.
///
/// The likelihood is seeded on a 50 × 64 (contrast × phase) grid and polished
/// by coordinate-wise golden-section refinement; intervals are 68%
/// profile-likelihood intervals (log-likelihood drop of 1/2). When the data
/// cannot constrain the phase (contrast indistinguishable from zero), the fit
/// returns `contrast ≈ 0`, a full-circle phase interval and
/// `identifiable == false`.
///
/// # Errors
///
/// The dataset must validate, contain at least 4 points and span more than π
/// radians of applied phase.
pub fn fit_fringe_mle(data: &FringeDataset) -> Result<FringeFit> {
    data.validate()?;
    if data.points.len() < 4 {
        return Err(Error::Domain(format!(
            "fringe fit needs >= 4 points, got {}",
            data.points.len()
        )));
    }
    let span =
        data.points.last().expect("validated non-empty").delta_phi_z - data.points[0].delta_phi_z;
    if span <= PI {
        return Err(Error::Domain(format!(
            "fringe fit needs a phase span > pi, got {span}"
        )));
    }
    let obs: Vec<Observation> = data
        .points
        .iter()
        .map(|p| Observation {
            phase: p.delta_phi_z,
            k: p.n_correlated as f64,
            n: p.n_total as f64,
        })
        .collect();

    // Grid seed.
    let (c_cells, ph_cells) = (50usize, 64usize);
    let mut best = (0.0, 0.0, f64::NEG_INFINITY);
    for j in 0..=c_cells {
        let c = 0.5 * j as f64 / c_cells as f64;
        for k in 0..ph_cells {
            let phase = TAU * k as f64 / ph_cells as f64;
            let ll = shape_log_likelihood(&obs, c, phase);
            if ll > best.2 {
                best = (c, phase, ll);
            }
        }
    }

    // Coordinate-wise polish around the best cell.
    let (mut c_hat, mut phase_hat, mut ll_hat) = best;
    let c_step = 0.5 / c_cells as f64;
    let ph_step = TAU / ph_cells as f64;
    for _ in 0..4 {
        let (phase, _) = golden_max(
            |ph| shape_log_likelihood(&obs, c_hat, ph),
            phase_hat - ph_step,
            phase_hat + ph_step,
        );
        phase_hat = phase;
        let (c, ll) = golden_max(
            |c| shape_log_likelihood(&obs, c, phase_hat),
            (c_hat - c_step).max(0.0),
            (c_hat + c_step).min(0.5),
        );
        c_hat = c;
        ll_hat = ll;
    }
    let target = ll_hat - PROFILE_DROP;

    // Contrast interval from the phase-profiled likelihood.
    let c_lo = if profile_over_phase(&obs, 0.0) >= target {
        0.0
    } else {
        bisect_crossing(|c| profile_over_phase(&obs, c), 0.0, c_hat, target)
    };
    let c_hi = if profile_over_phase(&obs, 0.5) >= target {
        0.5
    } else {
        bisect_crossing(|c| profile_over_phase(&obs, c), c_hat, 0.5, target)
    };

    // Phase interval from the contrast-profiled likelihood, walking outward
    // from the peak on each side until the profile drops through the target.
    let scan_step = PI / 128.0;
    let mut side_widths = [PI, PI];
    let mut crossed = [false, false];
    for (side, sign) in [(0usize, -1.0), (1usize, 1.0)] {
        let mut prev = 0.0;
        let mut d = scan_step;
        while d <= PI {
            let ll = profile_over_contrast(&obs, phase_hat + sign * d);
            if ll < target {
                let width = bisect_crossing(
                    |w| profile_over_contrast(&obs, phase_hat + sign * w),
                    prev,
                    d,
                    target,
                );
                side_widths[side] = width;
                crossed[side] = true;
                break;
            }
            prev = d;
            d += scan_step;
        }
    }
    let identifiable = crossed[0] && crossed[1];

    let phase0 = wrap_to_pi(phase_hat);
    let constant: f64 = data
        .points
        .iter()
        .map(|p| ln_choose(p.n_total, p.n_correlated))
        .sum();
    Ok(FringeFit {
        contrast: c_hat,
        phase0,
        log_likelihood: ll_hat + constant,
        contrast_ci: (c_lo, c_hi),
        phase_ci: (phase0 - side_widths[0], phase0 + side_widths[1]),
        identifiable,
    })
}

/// Result of the Bayesian coherence-time fit `C(t) = C₀·exp(−t/T_c)`.
///
/// `ci_lower <= t_c <= ci_upper` always holds, with all three inside
/// `prior_bounds`; when the posterior peaks on a prior edge the central
/// interval is widened through the mode so the invariant survives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceFit {
    /// Posterior mode of the coherence time in seconds.
    pub t_c: f64,
    /// 68% central credible interval, lower edge.
    pub ci_lower: f64,
    /// 68% central credible interval, upper edge.
    pub ci_upper: f64,
    /// Support of the uniform prior on the coherence time.
    pub prior_bounds: (f64, f64),
}

/// Extracts the pair coherence time from `(dark time, fringe fit)` pairs.
///
/// Each fitted contrast is treated as Gaussian with its symmetrized profile
/// uncertainty; the amplitude `C₀` is marginalized over a uniform [0, 1/2]
/// prior and the coherence time carries a uniform prior on
/// [`COHERENCE_PRIOR_BOUNDS`]. Reported are the marginal posterior mode and
/// 68% central interval.
///
/// # Errors
///
/// Requires at least 3 distinct dark times with finite contrasts (otherwise
/// the decay is statistically non-identifiable).
pub fn fit_contrast_decay(points: &[(f64, FringeFit)]) -> Result<CoherenceFit> {
    let mut times: Vec<f64> = points.iter().map(|(t, _)| *t).collect();
    times.sort_by(f64::total_cmp);
    times.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    if times.len() < 3 {
        return Err(Error::NonIdentifiable(format!(
            "coherence fit needs >= 3 distinct dark times, got {}",
            times.len()
        )));
    }
    let mut obs = Vec::with_capacity(points.len());
    for (t, fit) in points {
        ensure_finite("t", *t)?;
        ensure_finite("contrast", fit.contrast)?;
        if *t <= 0.0 {
            return Err(Error::Domain(format!("dark times must be > 0, got {t}")));
        }
        obs.push((*t, fit.contrast, fit.contrast_sigma()));
    }

    let (prior_lo, prior_hi) = COHERENCE_PRIOR_BOUNDS;
    let tc_cells = 2500usize;
    let c0_cells = 200usize;

    // Marginal log-posterior over the coherence time, amplitude integrated
    // out on a uniform grid (logsumexp keeps it stable).
    let mut marginal = Vec::with_capacity(tc_cells + 1);
    for j in 0..=tc_cells {
        let tc = prior_lo + (prior_hi - prior_lo) * j as f64 / tc_cells as f64;
        let decay: Vec<f64> = obs
            .iter()
            .map(|&(t, _, _)| if tc <= 0.0 { 0.0 } else { (-t / tc).exp() })
            .collect();
        let mut max_ll = f64::NEG_INFINITY;
        let mut lls = Vec::with_capacity(c0_cells + 1);
        for m in 0..=c0_cells {
            let c0 = 0.5 * m as f64 / c0_cells as f64;
            let mut ll = 0.0;
            for ((_, c, sigma), d) in obs.iter().zip(&decay) {
                let r = (c - c0 * d) / sigma;
                ll -= 0.5 * r * r;
            }
            max_ll = max_ll.max(ll);
            lls.push(ll);
        }
        let sum: f64 = lls.iter().map(|ll| (ll - max_ll).exp()).sum();
        marginal.push(max_ll + sum.ln());
    }

    let peak = marginal.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = marginal.iter().map(|m| (m - peak).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mode_idx = marginal
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty grid")
        .0;
    let tc_at = |idx: usize| prior_lo + (prior_hi - prior_lo) * idx as f64 / tc_cells as f64;
    let t_c = tc_at(mode_idx);

    let quantile = |q: f64| {
        let mut acc = 0.0;
        for (idx, w) in weights.iter().enumerate() {
            acc += w;
            if acc >= q * total {
                return tc_at(idx);
            }
        }
        prior_hi
    };
    // Widen through the mode if the posterior piles onto a prior edge.
    let ci_lower = quantile(0.16).min(t_c);
    let ci_upper = quantile(0.84).max(t_c);

    Ok(CoherenceFit {
        t_c,
        ci_lower,
        ci_upper,
        prior_bounds: COHERENCE_PRIOR_BOUNDS,
    })
}

/// One phase measurement for the drift fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    /// Dark time in seconds.
    pub t: f64,
    /// Unwrapped fringe phase in radians.
    pub phase: f64,
    /// 1σ phase uncertainty in radians; zero means "unweighted".
    pub sigma: f64,
}

/// Straight-line fit of fringe phase versus dark time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftFit {
    /// Phase slope in rad/s.
    pub slope: f64,
    /// 1σ uncertainty of the slope in rad/s.
    pub slope_err: f64,
    /// The slope expressed as a fractional frequency difference:
    /// `slope / (2π ν)`.
    pub fractional_shift: f64,
}

/// Weighted least-squares line through phase-versus-dark-time points; the
/// slope divided by 2πν is the fractional frequency difference between the
/// clocks.
///
/// Weights are 1/σ². If *every* σ is zero the fit falls back to unit
/// weights; mixing zero and nonzero σ is rejected.
///
/// # Errors
///
/// Fewer than 2 points, negative σ, or mixed zero/nonzero σ are domain
/// errors; a singular design (all dark times equal) is statistically
/// non-identifiable.
pub fn fit_phase_drift(points: &[PhasePoint], spec: &ClockSpec) -> Result<DriftFit> {
    spec.validate()?;
    if points.len() < 2 {
        return Err(Error::Domain(format!(
            "drift fit needs >= 2 points, got {}",
            points.len()
        )));
    }
    let zeros = points.iter().filter(|p| p.sigma == 0.0).count();
    if zeros != 0 && zeros != points.len() {
        return Err(Error::Domain(
            "phase uncertainties must be all zero (unweighted) or all positive".into(),
        ));
    }
    for p in points {
        ensure_finite("t", p.t)?;
        ensure_finite("phase", p.phase)?;
        ensure_finite("sigma", p.sigma)?;
        if p.sigma < 0.0 {
            return Err(Error::Domain(format!(
                "sigma must be >= 0, got {}",
                p.sigma
            )));
        }
    }
    let unweighted = zeros == points.len();
    let (mut s, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for p in points {
        let w = if unweighted {
            1.0
        } else {
            1.0 / (p.sigma * p.sigma)
        };
        s += w;
        sx += w * p.t;
        sy += w * p.phase;
        sxx += w * p.t * p.t;
        sxy += w * p.t * p.phase;
    }
    let det = s * sxx - sx * sx;
    if det.abs() <= 1e-12 * s * sxx.max(1.0) {
        return Err(Error::NonIdentifiable(
            "drift fit design is singular: dark times do not vary".into(),
        ));
    }
    let slope = (s * sxy - sx * sy) / det;
    let slope_err = (s / det).sqrt();
    Ok(DriftFit {
        slope,
        slope_err,
        fractional_shift: slope / (TAU * spec.nu),
    })
}

/// Removes 2π jumps from a sequence of fringe phases, assuming the true
/// phase moves by less than π between consecutive entries.
pub fn unwrap_phases(phases: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(phases.len());
    let mut prev: Option<f64> = None;
    for &p in phases {
        let value = match prev {
            None => p,
            Some(q) => q + wrap_to_pi(p - q),
        };
        out.push(value);
        prev = Some(value);
    }
    out
}

/// Converts an instability measured over `duration_s` of wall-clock averaging
/// to the 1 s convention assuming white frequency noise:
/// `σ(1 s) = σ(duration) · √duration`.
///
/// # Errors
///
/// Both arguments must be positive and finite.
pub fn extrapolate_sigma1s(sigma: f64, duration_s: f64) -> Result<f64> {
    ensure_finite("sigma", sigma)?;
    ensure_finite("duration_s", duration_s)?;
    if sigma <= 0.0 || duration_s <= 0.0 {
        return Err(Error::Domain(format!(
            "sigma and duration must be > 0, got sigma = {sigma}, duration = {duration_s}"
        )));
    }
    Ok(sigma * duration_s.sqrt())
}

/// Overlapping Allan deviation of a fractional-frequency series sampled every
/// `tau0` seconds, evaluated at octave-spaced averaging times
/// `τ = tau0, 2·tau0, 4·tau0, …` while at least one overlapping second
/// difference exists. Returns `(τ, σ_y(τ))` pairs.
///
/// # Errors
///
/// Requires at least 3 samples and a positive sample period.
pub fn allan_deviation(series: &[f64], tau0: f64) -> Result<Vec<(f64, f64)>> {
    ensure_finite("tau0", tau0)?;
    if tau0 <= 0.0 {
        return Err(Error::Domain(format!("tau0 must be > 0, got {tau0}")));
    }
    if series.len() < 3 {
        return Err(Error::Domain(format!(
            "allan deviation needs >= 3 samples, got {}",
            series.len()
        )));
    }
    for &y in series {
        ensure_finite("sample", y)?;
    }
    let n = series.len();
    // Prefix sums make each cluster average O(1).
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for &y in series {
        let last = *prefix.last().expect("prefix is non-empty");
        prefix.push(last + y);
    }
    let cluster = |start: usize, m: usize| (prefix[start + m] - prefix[start]) / m as f64;

    let mut out = Vec::new();
    let mut m = 1usize;
    while 2 * m < n + 1 {
        let terms = n - 2 * m + 1;
        let mut acc = 0.0;
        for j in 0..terms {
            let d = cluster(j + m, m) - cluster(j, m);
            acc += d * d;
        }
        let var = acc / (2.0 * terms as f64);
        out.push((m as f64 * tau0, var.sqrt()));
        m *= 2;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::DEFAULT_NU_HZ;
    use crate::protocol::FringePoint;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    /// Builds counts from exact model fractions: k = round(n · P_c).
    fn synthetic_fringe(
        contrast: f64,
        phase0: f64,
        n_per_point: u64,
        points: usize,
    ) -> FringeDataset {
        let grid = crate::protocol::phase_grid(points, 2.5).unwrap();
        let points = grid
            .iter()
            .map(|&phi| {
                let p = 0.5 + 0.5 * contrast * (phi + phase0).cos();
                FringePoint {
                    delta_phi_z: phi,
                    n_correlated: (p * n_per_point as f64).round() as u64,
                    n_total: n_per_point,
                }
            })
            .collect();
        FringeDataset { t: 1.0, points }
    }

    #[test]
    fn ln_factorial_matches_direct_products() {
        assert_abs_diff_eq!(ln_factorial(0), 0.0);
        assert_abs_diff_eq!(ln_factorial(1), 0.0);
        assert_abs_diff_eq!(ln_factorial(5), 120f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(ln_factorial(10), 3628800f64.ln(), epsilon = 1e-12);
        // Stirling branch continuity across the table edge.
        let direct: f64 = (1..=2000u64).map(|k| (k as f64).ln()).sum();
        assert_abs_diff_eq!(ln_factorial(2000), direct, epsilon = 1e-8);
    }

    #[test]
    fn mle_recovers_noiseless_fringe() {
        let data = synthetic_fringe(0.3, 1.0, 1_000_000, 24);
        let fit = fit_fringe_mle(&data).unwrap();
        assert_abs_diff_eq!(fit.contrast, 0.3, epsilon = 1e-3);
        assert_abs_diff_eq!(fit.phase0, 1.0, epsilon = 1e-3);
        assert!(fit.identifiable);
        assert!(fit.contrast_ci.0 <= fit.contrast && fit.contrast <= fit.contrast_ci.1);
        assert!(fit.phase_ci.0 <= fit.phase0 && fit.phase0 <= fit.phase_ci.1);
    }

    #[test]
    fn mle_handles_negative_phase_convention() {
        let data = synthetic_fringe(0.45, -2.5, 100_000, 24);
        let fit = fit_fringe_mle(&data).unwrap();
        assert_abs_diff_eq!(fit.contrast, 0.45, epsilon = 1e-3);
        assert_abs_diff_eq!(fit.phase0, -2.5, epsilon = 1e-3);
        assert!((-PI..=PI).contains(&fit.phase0));
    }

    #[test]
    fn mle_flags_flat_data() {
        let grid = crate::protocol::phase_grid(24, 2.5).unwrap();
        let points = grid
            .iter()
            .map(|&phi| FringePoint {
                delta_phi_z: phi,
                n_correlated: 50,
                n_total: 100,
            })
            .collect();
        let data = FringeDataset { t: 1.0, points };
        let fit = fit_fringe_mle(&data).unwrap();
        assert!(fit.contrast < 0.05);
        assert!(!fit.identifiable);
        assert!(fit.phase_ci.1 - fit.phase_ci.0 >= TAU - 1e-9);
    }

    #[test]
    fn mle_rejects_degenerate_designs() {
        let mut data = synthetic_fringe(0.3, 0.0, 100, 24);
        data.points.truncate(3);
        assert!(fit_fringe_mle(&data).is_err());
        // 4 points spanning less than pi.
        let narrow = FringeDataset {
            t: 1.0,
            points: (0..4)
                .map(|k| FringePoint {
                    delta_phi_z: k as f64 * 0.5,
                    n_correlated: 30,
                    n_total: 100,
                })
                .collect(),
        };
        assert!(fit_fringe_mle(&narrow).is_err());
    }

    #[test]
    fn mle_interval_width_shrinks_with_counts() {
        let narrow = fit_fringe_mle(&synthetic_fringe(0.3, 0.7, 4000, 24)).unwrap();
        let wide = fit_fringe_mle(&synthetic_fringe(0.3, 0.7, 1000, 24)).unwrap();
        let w_narrow = narrow.contrast_ci.1 - narrow.contrast_ci.0;
        let w_wide = wide.contrast_ci.1 - wide.contrast_ci.0;
        let ratio = w_wide / w_narrow;
        assert!(
            (ratio - 2.0).abs() < 0.4,
            "quadrupling counts should halve the interval, ratio {ratio}"
        );
    }

    #[test]
    fn mle_phase_translation_equivariance() {
        // Shifting the applied-phase grid by a constant shifts the fitted
        // phase the opposite way and leaves the contrast alone.
        let shift = 0.37;
        let base = synthetic_fringe(0.35, 0.4, 200_000, 24);
        let shifted = FringeDataset {
            t: base.t,
            points: base
                .points
                .iter()
                .map(|p| FringePoint {
                    delta_phi_z: p.delta_phi_z + shift,
                    ..*p
                })
                .collect(),
        };
        let f0 = fit_fringe_mle(&base).unwrap();
        let f1 = fit_fringe_mle(&shifted).unwrap();
        assert_abs_diff_eq!(f0.contrast, f1.contrast, epsilon = 2e-3);
        assert_abs_diff_eq!(
            wrap_to_pi(f1.phase0 - (f0.phase0 - shift)),
            0.0,
            epsilon = 2e-3
        );
    }

    #[test]
    fn mle_simulation_round_trip_within_interval() {
        let spec = ClockSpec::new(DEFAULT_NU_HZ, 20.6).unwrap();
        let grid = crate::protocol::default_phase_grid();
        let data =
            crate::protocol::simulate_fringe(2.0, &grid, 2400, [0.0; 2], &spec, 314).unwrap();
        let fit = fit_fringe_mle(&data).unwrap();
        let truth = crate::physics::lifetime_contrast(2.0, &spec).unwrap();
        // 68% interval; allow the generous 3x margin for a single seed.
        let half = (fit.contrast_ci.1 - fit.contrast_ci.0) / 2.0;
        assert!(
            (fit.contrast - truth).abs() < 3.0 * half,
            "fit {} vs truth {truth} (half-width {half})",
            fit.contrast
        );
        assert!(fit.identifiable);
    }

    #[test]
    fn decay_fit_recovers_noiseless_curve() {
        let times = [0.5, 1.0, 2.0, 4.0, 8.0];
        let points: Vec<(f64, FringeFit)> = times
            .iter()
            .map(|&t| {
                let c = 0.5 * (-t / 9.7f64).exp();
                (
                    t,
                    FringeFit {
                        contrast: c,
                        phase0: 0.0,
                        log_likelihood: 0.0,
                        contrast_ci: (c - 1e-4, c + 1e-4),
                        phase_ci: (-0.1, 0.1),
                        identifiable: true,
                    },
                )
            })
            .collect();
        let fit = fit_contrast_decay(&points).unwrap();
        assert_abs_diff_eq!(fit.t_c, 9.7, epsilon = 0.02);
        assert!(fit.ci_lower <= fit.t_c && fit.t_c <= fit.ci_upper);
        assert!(fit.ci_upper - fit.ci_lower < 0.5);
    }

    #[test]
    fn decay_fit_honors_prior_truncation() {
        // Contrasts that barely decay favor coherence times beyond the prior;
        // the interval must stay inside the prior and keep the mode inside.
        let times = [1.0, 2.0, 3.0];
        let points: Vec<(f64, FringeFit)> = times
            .iter()
            .map(|&t| {
                let c = 0.5 * (-t / 500.0f64).exp();
                (
                    t,
                    FringeFit {
                        contrast: c,
                        phase0: 0.0,
                        log_likelihood: 0.0,
                        contrast_ci: (c - 0.01, c + 0.01),
                        phase_ci: (-0.1, 0.1),
                        identifiable: true,
                    },
                )
            })
            .collect();
        let fit = fit_contrast_decay(&points).unwrap();
        let (lo, hi) = fit.prior_bounds;
        assert!(lo <= fit.ci_lower);
        assert!(fit.ci_upper <= hi);
        assert!(fit.ci_lower <= fit.t_c && fit.t_c <= fit.ci_upper);
        assert!(
            fit.t_c > 20.0,
            "flat decay should push t_c to the prior edge"
        );
    }

    #[test]
    fn decay_fit_agrees_with_least_squares_oracle() {
        // Small errors, broad prior: the Bayesian mode must approach the
        // weighted-least-squares minimizer, here computed on an independent
        // dense grid.
        let times = [0.5, 1.5, 3.0, 5.0, 8.0];
        let observed = [0.474, 0.438, 0.368, 0.308, 0.222];
        let sigma = 0.003;
        let points: Vec<(f64, FringeFit)> = times
            .iter()
            .zip(&observed)
            .map(|(&t, &c)| {
                (
                    t,
                    FringeFit {
                        contrast: c,
                        phase0: 0.0,
                        log_likelihood: 0.0,
                        contrast_ci: (c - sigma, c + sigma),
                        phase_ci: (-0.1, 0.1),
                        identifiable: true,
                    },
                )
            })
            .collect();
        let fit = fit_contrast_decay(&points).unwrap();

        let mut best = (f64::INFINITY, 0.0);
        for j in 1..=50_000 {
            let tc = 25.0 * j as f64 / 50_000.0;
            for m in 0..=500 {
                let c0 = 0.5 * m as f64 / 500.0;
                let sse: f64 = times
                    .iter()
                    .zip(&observed)
                    .map(|(&t, &c)| {
                        let r = c - c0 * (-t / tc).exp();
                        r * r
                    })
                    .sum();
                if sse < best.0 {
                    best = (sse, tc);
                }
            }
        }
        let rel = (fit.t_c - best.1).abs() / best.1;
        assert!(
            rel < 0.01,
            "posterior mode {} vs least-squares {} ({}%)",
            fit.t_c,
            best.1,
            rel * 100.0
        );
    }

    #[test]
    fn decay_fit_rejects_underdetermined_input() {
        let fit = FringeFit {
            contrast: 0.4,
            phase0: 0.0,
            log_likelihood: 0.0,
            contrast_ci: (0.39, 0.41),
            phase_ci: (-0.1, 0.1),
            identifiable: true,
        };
        let err = fit_contrast_decay(&[(1.0, fit.clone()), (1.0, fit)]).unwrap_err();
        assert!(matches!(err, Error::NonIdentifiable(_)));
    }

    #[test]
    fn drift_fit_frozen_conversion() {
        let spec = ClockSpec::new(DEFAULT_NU_HZ, 20.6).unwrap();
        let points: Vec<PhasePoint> = [0.1, 0.5, 1.0, 2.0, 3.0, 5.0]
            .iter()
            .map(|&t| PhasePoint {
                t,
                phase: 0.84 * t + 0.05,
                sigma: 0.01,
            })
            .collect();
        let fit = fit_phase_drift(&points, &spec).unwrap();
        assert_abs_diff_eq!(fit.slope, 0.84, epsilon = 1e-9);
        // Oracle: 0.84 / (2 pi * 1.121e15), 30-digit evaluation.
        assert_abs_diff_eq!(fit.fractional_shift, 1.19259725421224e-16, epsilon = 1e-27);
    }

    #[test]
    fn drift_fit_two_point_line() {
        let spec = ClockSpec::new(DEFAULT_NU_HZ, 20.6).unwrap();
        let points = [
            PhasePoint {
                t: 0.0,
                phase: 0.0,
                sigma: 0.0,
            },
            PhasePoint {
                t: 1.0,
                phase: 1.0,
                sigma: 0.0,
            },
        ];
        let fit = fit_phase_drift(&points, &spec).unwrap();
        assert_abs_diff_eq!(fit.slope, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn drift_fit_rejects_bad_designs() {
        let spec = ClockSpec::new(DEFAULT_NU_HZ, 20.6).unwrap();
        let singular = [
            PhasePoint {
                t: 2.0,
                phase: 0.1,
                sigma: 0.1,
            },
            PhasePoint {
                t: 2.0,
                phase: 0.2,
                sigma: 0.1,
            },
        ];
        assert!(matches!(
            fit_phase_drift(&singular, &spec),
            Err(Error::NonIdentifiable(_))
        ));
        let mixed = [
            PhasePoint {
                t: 0.0,
                phase: 0.0,
                sigma: 0.0,
            },
            PhasePoint {
                t: 1.0,
                phase: 1.0,
                sigma: 0.1,
            },
        ];
        assert!(matches!(
            fit_phase_drift(&mixed, &spec),
            Err(Error::Domain(_))
        ));
        assert!(fit_phase_drift(&singular[..1], &spec).is_err());
    }

    #[test]
    fn drift_fit_weights_matter() {
        let spec = ClockSpec::new(DEFAULT_NU_HZ, 20.6).unwrap();
        // A precise pair defines slope 1; an imprecise outlier barely moves it.
        let points = [
            PhasePoint {
                t: 0.0,
                phase: 0.0,
                sigma: 1e-3,
            },
            PhasePoint {
                t: 1.0,
                phase: 1.0,
                sigma: 1e-3,
            },
            PhasePoint {
                t: 2.0,
                phase: 5.0,
                sigma: 10.0,
            },
        ];
        let fit = fit_phase_drift(&points, &spec).unwrap();
        assert!((fit.slope - 1.0).abs() < 0.01, "slope {}", fit.slope);
    }

    #[test]
    fn unwrap_reconstructs_linear_growth() {
        let truth: Vec<f64> = (0..8).map(|k| 0.9 * k as f64).collect();
        let wrapped: Vec<f64> = truth.iter().map(|&p| wrap_to_pi(p)).collect();
        let unwrapped = unwrap_phases(&wrapped);
        for (u, t) in unwrapped.iter().zip(&truth) {
            assert_abs_diff_eq!(u, t, epsilon = 1e-12);
        }
    }

    #[test]
    fn extrapolation_frozen_value() {
        // Oracle: 1.1e-17 * sqrt(1126), 30-digit evaluation.
        assert_abs_diff_eq!(
            extrapolate_sigma1s(1.1e-17, 1126.0).unwrap(),
            3.691151581823754e-16,
            epsilon = 1e-28
        );
        assert!(extrapolate_sigma1s(0.0, 10.0).is_err());
        assert!(extrapolate_sigma1s(1e-16, -1.0).is_err());
    }

    #[test]
    fn allan_deviation_known_series() {
        // A constant series averages to zero deviation.
        let flat = vec![3.5; 64];
        for (_, sigma) in allan_deviation(&flat, 1.0).unwrap() {
            assert_abs_diff_eq!(sigma, 0.0, epsilon = 1e-12);
        }
        // Alternating +/-1 gives sigma(tau0) = sqrt(2).
        let alternating: Vec<f64> = (0..64)
            .map(|k| if k % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let adev = allan_deviation(&alternating, 1.0).unwrap();
        assert_abs_diff_eq!(adev[0].1, std::f64::consts::SQRT_2, epsilon = 1e-12);
        assert_abs_diff_eq!(adev[0].0, 1.0);
    }

    #[test]
    fn allan_deviation_white_noise_slope() {
        // White frequency noise: sigma(tau) ~ tau^(-1/2). Fit the log-log
        // slope over the first octaves of a long simulated series.
        let mut rng = crate::rng::substream(2024, crate::rng::domains::BENCH, 1);
        let series: Vec<f64> = (0..32_768)
            .map(|_| {
                // Sum of 12 uniforms: near-Gaussian, variance 1.
                (0..12).map(|_| rng.random::<f64>()).sum::<f64>() - 6.0
            })
            .collect();
        let adev = allan_deviation(&series, 1.0).unwrap();
        let pts: Vec<(f64, f64)> = adev[..8]
            .iter()
            .map(|&(tau, s)| (tau.ln(), s.ln()))
            .collect();
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        assert!(
            (slope + 0.5).abs() < 0.05,
            "white-noise allan slope {slope}, expected -0.5"
        );
    }

    #[test]
    fn allan_deviation_input_validation() {
        assert!(allan_deviation(&[1.0, 2.0], 1.0).is_err());
        assert!(allan_deviation(&[1.0, 2.0, 3.0], 0.0).is_err());
        assert!(allan_deviation(&[1.0, f64::NAN, 3.0], 1.0).is_err());
        // Octaves stop while at least one second difference exists.
        let adev = allan_deviation(&[1.0, 2.0, 3.0], 1.0).unwrap();
        assert_eq!(adev.len(), 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        /// The fitted contrast and its interval always satisfy the physical
        /// ordering 0 <= lo <= c <= hi <= 1/2, and the phase sits inside its
        /// interval.
        #[test]
        fn mle_interval_ordering(
            c in 0.05f64..0.5,
            phase in -3.0f64..3.0,
            n in 200u64..2000,
        ) {
            let data = synthetic_fringe(c, phase, n, 16);
            let fit = fit_fringe_mle(&data).unwrap();
            prop_assert!(0.0 <= fit.contrast_ci.0);
            prop_assert!(fit.contrast_ci.0 <= fit.contrast + 1e-9);
            prop_assert!(fit.contrast <= fit.contrast_ci.1 + 1e-9);
            prop_assert!(fit.contrast_ci.1 <= 0.5);
            prop_assert!(fit.phase_ci.0 <= fit.phase0 && fit.phase0 <= fit.phase_ci.1);
        }

        /// Coherence fit intervals always respect the prior and bracket the
        /// mode.
        #[test]
        fn decay_fit_interval_invariant(
            tc in 1.0f64..40.0,
            sigma in 0.002f64..0.08,
        ) {
            let times = [0.5, 1.0, 2.0, 4.0, 6.0];
            let points: Vec<(f64, FringeFit)> = times.iter().map(|&t| {
                let c: f64 = 0.5 * (-t / tc).exp();
                (t, FringeFit {
                    contrast: c.clamp(0.0, 0.5),
                    phase0: 0.0,
                    log_likelihood: 0.0,
                    contrast_ci: (c - sigma, c + sigma),
                    phase_ci: (-0.1, 0.1),
                    identifiable: true,
                })
            }).collect();
            let fit = fit_contrast_decay(&points).unwrap();
            let (lo, hi) = fit.prior_bounds;
            prop_assert!(lo <= fit.ci_lower);
            prop_assert!(fit.ci_lower <= fit.t_c);
            prop_assert!(fit.t_c <= fit.ci_upper);
            prop_assert!(fit.ci_upper <= hi);
        }

        /// Unwrapping is exact whenever consecutive true phases move by less
        /// than pi.
        #[test]
        fn unwrap_property(steps in proptest::collection::vec(-3.0f64..3.0, 1..20)) {
            let mut truth = vec![0.25];
            for s in &steps {
                let last = *truth.last().unwrap();
                truth.push(last + s.clamp(-3.1, 3.1));
            }
            let wrapped: Vec<f64> = truth.iter().map(|&p| wrap_to_pi(p)).collect();
            let unwrapped = unwrap_phases(&wrapped);
            for (u, t) in unwrapped.iter().zip(&truth) {
                prop_assert!((u - t).abs() < 1e-9);
            }
        }
    }
}
