//! Synchronized comparison of two remote many-atom clocks.
//!
//! Both ensembles are interrogated by the same local oscillator with
//! synchronized Ramsey pulses, so the (possibly huge) laser phase `φ_L` is
//! common mode. Each clock `X` measures an excitation fraction
//!
//! `p_X = [1 + cos(φ_X − φ_L − θ_X)] / 2`
//!
//! with a controlled offset `θ_X`, and the clock difference is reconstructed
//! from the pair of arccosines:
//!
//! `δφ_AB = cos⁻¹(2p_A − 1) − cos⁻¹(2p_B − 1) + θ_A − θ_B`.
//!
//! The inversion has a fourfold sign ambiguity (each arccos loses the sign of
//! its angle). Calibrating the offsets so `φ_A − φ_B − (θ_A − θ_B) ≈ π/2`
//! makes the two fractions approximate quadratures of the same laser-atom
//! phase: when one clock sits at a fringe extremum the other is maximally
//! sensitive, and a rough prior on `δφ_AB` picks the right branch for almost
//! every laser phase. Shots where competing branches remain materially
//! consistent with the prior are flagged ambiguous and excluded from
//! averages.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, TAU};

use crate::physics::ClockSpec;
use crate::rng::{domains, substream};
use crate::{ensure_finite, Error, Result};

/// Pseudo-count regularizing the measured fractions before inversion:
/// `p̃ = (k + c) / (N + 2c)`. The raw arccos estimator is first-order
/// unbiased but picks up excess variance at the fringe folds, where the
/// clamped inversion is strongly nonlinear; this small shrinkage restores
/// the first-order variance `1/N_A + 1/N_B` at `N ≈ 100` (calibrated by
/// Monte Carlo) while vanishing as `N` grows.
pub const EDGE_PSEUDO_COUNT: f64 = 0.015;

/// Guard width in predicted standard deviations used by the branch-ambiguity
/// rule.
pub const BRANCH_GUARD_SIGMAS: f64 = 3.0;

/// Per-shot laser phase model shared by the two clocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LaserNoiseModel {
    /// Independent uniform draw on [0, 2π) every shot: the dark time exceeds
    /// the laser coherence time, as in the two-ion protocol.
    UniformRandom,
    /// Gaussian random walk across shots with the given step (radians/shot).
    RandomWalk { step: f64 },
    /// Flicker-like spectrum approximated by summing `components` random
    /// walks, where walk `j` advances only every `2^j` shots.
    FlickerApproximation { step: f64, components: u32 },
}

impl LaserNoiseModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LaserNoiseModel::UniformRandom => Ok(()),
            LaserNoiseModel::RandomWalk { step } => {
                ensure_finite("step", step)?;
                if step < 0.0 {
                    return Err(Error::Domain(format!("step must be >= 0, got {step}")));
                }
                Ok(())
            }
            LaserNoiseModel::FlickerApproximation { step, components } => {
                ensure_finite("step", step)?;
                if step < 0.0 {
                    return Err(Error::Domain(format!("step must be >= 0, got {step}")));
                }
                if components == 0 {
                    return Err(Error::Domain("components must be >= 1".into()));
                }
                Ok(())
            }
        }
    }
}

/// Parameters of a two-ensemble comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Atoms in ensemble A.
    pub n_a: u64,
    /// Atoms in ensemble B.
    pub n_b: u64,
    /// Controlled laser phase offset at clock A, radians.
    pub theta_a: f64,
    /// Controlled laser phase offset at clock B, radians.
    pub theta_b: f64,
    /// True clock phase difference `φ_A − φ_B` accumulated over one dark
    /// time, radians. The simulation also uses it as the center of the
    /// calibration prior, as an experiment's prior calibration would.
    pub true_dphi_ab: f64,
    /// 1σ width of the calibration prior on `δφ_AB`, radians (≪ 1).
    pub prior_sigma: f64,
    pub laser_noise: LaserNoiseModel,
    /// Whether the two clocks see the same laser phase each shot.
    pub synchronized: bool,
    /// Ramsey dark time in seconds (enters only the instability conversion).
    pub t: f64,
}

impl RemoteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_a < 1 || self.n_b < 1 {
            return Err(Error::Domain(format!(
                "atom numbers must be >= 1, got n_a = {}, n_b = {}",
                self.n_a, self.n_b
            )));
        }
        ensure_finite("theta_a", self.theta_a)?;
        ensure_finite("theta_b", self.theta_b)?;
        ensure_finite("true_dphi_ab", self.true_dphi_ab)?;
        ensure_finite("prior_sigma", self.prior_sigma)?;
        if self.prior_sigma <= 0.0 || self.prior_sigma >= 1.0 {
            return Err(Error::Domain(format!(
                "prior_sigma must lie in (0, 1), got {}",
                self.prior_sigma
            )));
        }
        ensure_finite("t", self.t)?;
        if self.t <= 0.0 {
            return Err(Error::Domain(format!("t must be > 0, got {}", self.t)));
        }
        self.laser_noise.validate()
    }

    /// Projection-noise standard deviation of one shot's phase-difference
    /// estimate: `√(1/N_A + 1/N_B)`.
    pub fn predicted_sigma(&self) -> f64 {
        (1.0 / self.n_a as f64 + 1.0 / self.n_b as f64).sqrt()
    }

    /// Returns a copy with `theta_a`, `theta_b` set by
    /// [`calibrate_quadrature`].
    pub fn calibrated(mut self) -> Self {
        let (theta_a, theta_b) = calibrate_quadrature(&self);
        self.theta_a = theta_a;
        self.theta_b = theta_b;
        self
    }
}

impl Default for RemoteConfig {
    /// 100 atoms per ensemble, quadrature-calibrated at zero true
    /// difference, uniform laser phase, synchronized, 3 s dark time.
    fn default() -> Self {
        RemoteConfig {
            n_a: 100,
            n_b: 100,
            theta_a: 0.0,
            theta_b: 0.0,
            true_dphi_ab: 0.0,
            prior_sigma: 0.1,
            laser_noise: LaserNoiseModel::UniformRandom,
            synchronized: true,
            t: 3.0,
        }
        .calibrated()
    }
}

/// Excitation probability of one clock: `[1 + cos(φ_X − φ_L − θ_X)] / 2`.
/// Inputs are finite radians.
pub fn clock_transition_probability(phi_x: f64, phi_l: f64, theta_x: f64) -> f64 {
    (1.0 + (phi_x - phi_l - theta_x).cos()) / 2.0
}

/// Principal-branch reconstruction of the clock phase difference:
/// `cos⁻¹(2p_A−1) − cos⁻¹(2p_B−1) + θ_A − θ_B`. Valid as-is only when both
/// laser-atom phases lie in [0, π]; callers resolve the general branch with
/// prior knowledge (see [`RemoteSimulator`]).
///
/// # Errors
///
/// Probabilities outside [0, 1] by more than 1e-9 are rejected; values
/// within the slack are clipped.
pub fn invert_phase_difference(p_a: f64, p_b: f64, theta_a: f64, theta_b: f64) -> Result<f64> {
    ensure_finite("theta_a", theta_a)?;
    ensure_finite("theta_b", theta_b)?;
    let clip = |name: &str, p: f64| -> Result<f64> {
        ensure_finite(name, p)?;
        if !(-1e-9..=1.0 + 1e-9).contains(&p) {
            return Err(Error::Domain(format!(
                "{name} must lie in [0, 1] (slack 1e-9), got {p}"
            )));
        }
        Ok(p.clamp(0.0, 1.0))
    };
    let p_a = clip("p_a", p_a)?;
    let p_b = clip("p_b", p_b)?;
    Ok((2.0 * p_a - 1.0).acos() - (2.0 * p_b - 1.0).acos() + theta_a - theta_b)
}

/// Offsets `(θ_A, θ_B)` satisfying the quadrature condition
/// `φ_A − φ_B − (θ_A − θ_B) = π/2` for the config's prior difference: the
/// two measured fractions then approximate quadratures of the common
/// laser-atom phase.
pub fn calibrate_quadrature(config: &RemoteConfig) -> (f64, f64) {
    (config.true_dphi_ab - FRAC_PI_2, 0.0)
}

/// One comparison shot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemoteShot {
    /// Measured excitation fraction of ensemble A.
    pub p_hat_a: f64,
    /// Measured excitation fraction of ensemble B.
    pub p_hat_b: f64,
    /// Branch-resolved estimate of `δφ_AB`, reported in the prior-centered
    /// window (prior ± π).
    pub estimate: f64,
    /// True when a competing inversion branch is materially consistent with
    /// the prior, so the estimate should not enter averages.
    pub ambiguous: bool,
}

fn wrap_to_pi(x: f64) -> f64 {
    x - TAU * (x / TAU).round()
}

/// Stateful shot generator carrying the laser-noise trajectory.
///
/// Noise and atom-projection draws come from one substream per simulator, in
/// a fixed per-shot order (phase draws, then the A and B binomials), so a
/// `(config, seed)` pair fully determines every shot.
#[derive(Debug, Clone)]
pub struct RemoteSimulator {
    config: RemoteConfig,
    rng: rand_chacha::ChaCha8Rng,
    shot_index: u64,
    walks: [Vec<f64>; 2],
}

impl RemoteSimulator {
    pub fn new(config: RemoteConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let components = match config.laser_noise {
            LaserNoiseModel::FlickerApproximation { components, .. } => components as usize,
            _ => 1,
        };
        Ok(RemoteSimulator {
            config,
            rng: substream(seed, domains::REMOTE_NOISE, 0),
            shot_index: 0,
            walks: [vec![0.0; components], vec![0.0; components]],
        })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    /// Standard normal via Box-Muller (two uniform draws per call, fixed
    /// draw count keeps the stream layout stable).
    fn standard_normal(&mut self) -> f64 {
        let u1: f64 = self.rng.random::<f64>().max(1e-300);
        let u2: f64 = self.rng.random();
        (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
    }

    /// Advances the laser-noise state and returns this shot's phase for one
    /// clock (0 = A, 1 = B). With `synchronized`, clock B reuses A's value.
    fn step_phase(&mut self, clock: usize) -> f64 {
        match self.config.laser_noise {
            LaserNoiseModel::UniformRandom => TAU * self.rng.random::<f64>(),
            LaserNoiseModel::RandomWalk { step } => {
                let delta = step * self.standard_normal();
                self.walks[clock][0] += delta;
                self.walks[clock][0]
            }
            LaserNoiseModel::FlickerApproximation { step, .. } => {
                let n = self.walks[clock].len();
                for j in 0..n {
                    if self.shot_index.is_multiple_of(1u64 << j.min(63)) {
                        let delta = step * self.standard_normal();
                        self.walks[clock][j] += delta;
                    }
                }
                self.walks[clock].iter().sum()
            }
        }
    }

    /// Simulates the next shot.
    pub fn next_shot(&mut self) -> RemoteShot {
        let phi_l_a = self.step_phase(0);
        let phi_l_b = if self.config.synchronized {
            phi_l_a
        } else {
            self.step_phase(1)
        };
        self.shot_index += 1;
        let (config, rng) = (&self.config, &mut self.rng);
        shot_from_phases(config, phi_l_a, phi_l_b, rng)
    }

    /// Simulates `n` consecutive shots.
    pub fn run(&mut self, n: usize) -> Vec<RemoteShot> {
        (0..n).map(|_| self.next_shot()).collect()
    }
}

/// Draws the two binomials for given laser phases and reconstructs the
/// estimate with prior-guided branch selection.
fn shot_from_phases(
    config: &RemoteConfig,
    phi_l_a: f64,
    phi_l_b: f64,
    rng: &mut impl Rng,
) -> RemoteShot {
    let phi = [config.true_dphi_ab, 0.0];
    let thetas = [config.theta_a, config.theta_b];
    let phi_l = [phi_l_a, phi_l_b];
    let ns = [config.n_a, config.n_b];
    let mut p_hat = [0.0; 2];
    let mut folded = [0.0; 2];
    for i in 0..2 {
        let p = clock_transition_probability(phi[i], phi_l[i], thetas[i]);
        let k = Binomial::new(ns[i], p)
            .expect("validated probability")
            .sample(rng);
        p_hat[i] = k as f64 / ns[i] as f64;
        // Edge-regularized fraction, then the principal-branch arccos.
        let regular = (k as f64 + EDGE_PSEUDO_COUNT) / (ns[i] as f64 + 2.0 * EDGE_PSEUDO_COUNT);
        folded[i] = (2.0 * regular - 1.0).clamp(-1.0, 1.0).acos();
    }

    let prior = config.true_dphi_ab;
    let dtheta = config.theta_a - config.theta_b;
    let sigma_pred = config.predicted_sigma();
    let gate = BRANCH_GUARD_SIGMAS
        * (sigma_pred * sigma_pred + config.prior_sigma * config.prior_sigma).sqrt();
    let separation = BRANCH_GUARD_SIGMAS * sigma_pred;

    // Four sign branches of the two arccosines.
    let mut candidates = [0.0f64; 4];
    let mut idx = 0;
    for s_a in [1.0, -1.0] {
        for s_b in [1.0, -1.0] {
            candidates[idx] = s_a * folded[0] - s_b * folded[1] + dtheta;
            idx += 1;
        }
    }
    let selected = candidates
        .iter()
        .copied()
        .min_by(|x, y| {
            wrap_to_pi(x - prior)
                .abs()
                .total_cmp(&wrap_to_pi(y - prior).abs())
        })
        .expect("candidate list is non-empty");
    let estimate = prior + wrap_to_pi(selected - prior);

    // A shot is ambiguous when a competing branch also sits inside the prior
    // gate yet differs from the chosen one by more than the shot noise:
    // branch choice would then materially change the answer. Collapsed
    // branches (near a fringe fold) are not ambiguous.
    let ambiguous = candidates.iter().any(|&c| {
        wrap_to_pi(c - prior).abs() < gate && wrap_to_pi(c - selected).abs() > separation
    });

    RemoteShot {
        p_hat_a: p_hat[0],
        p_hat_b: p_hat[1],
        estimate,
        ambiguous,
    }
}

/// Simulates a single shot with a fresh noise trajectory; equivalent to the
/// first shot of a [`RemoteSimulator`] but drawing from the caller's stream.
/// For walk-type noise across many shots, use the simulator.
pub fn simulate_remote_shot(config: &RemoteConfig, rng: &mut impl Rng) -> Result<RemoteShot> {
    config.validate()?;
    let phi_l_a = match config.laser_noise {
        LaserNoiseModel::UniformRandom => TAU * rng.random::<f64>(),
        LaserNoiseModel::RandomWalk { step }
        | LaserNoiseModel::FlickerApproximation { step, .. } => {
            let u1: f64 = rng.random::<f64>().max(1e-300);
            let u2: f64 = rng.random();
            step * (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
        }
    };
    let phi_l_b = if config.synchronized {
        phi_l_a
    } else {
        match config.laser_noise {
            LaserNoiseModel::UniformRandom => TAU * rng.random::<f64>(),
            LaserNoiseModel::RandomWalk { step }
            | LaserNoiseModel::FlickerApproximation { step, .. } => {
                let u1: f64 = rng.random::<f64>().max(1e-300);
                let u2: f64 = rng.random();
                step * (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
            }
        }
    };
    Ok(shot_from_phases(config, phi_l_a, phi_l_b, rng))
}

/// Aggregate of a shot sequence: ambiguous shots are excluded from the mean
/// and variance and reported as a rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemoteSummary {
    pub shots: u64,
    pub kept: u64,
    pub ambiguity_rate: f64,
    pub mean_estimate: f64,
    pub variance: f64,
    /// First-order projection-noise prediction `1/N_A + 1/N_B`.
    pub predicted_variance: f64,
}

/// Summarizes a shot sequence against the config's projection-noise
/// prediction.
///
/// # Errors
///
/// Requires at least 2 unambiguous shots to form a variance.
pub fn summarize_shots(config: &RemoteConfig, shots: &[RemoteShot]) -> Result<RemoteSummary> {
    config.validate()?;
    let kept: Vec<f64> = shots
        .iter()
        .filter(|s| !s.ambiguous)
        .map(|s| s.estimate)
        .collect();
    if kept.len() < 2 {
        return Err(Error::NonIdentifiable(format!(
            "need >= 2 unambiguous shots to estimate a variance, got {}",
            kept.len()
        )));
    }
    let n = kept.len() as f64;
    let mean = kept.iter().sum::<f64>() / n;
    let variance = kept.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1.0);
    let sigma = config.predicted_sigma();
    Ok(RemoteSummary {
        shots: shots.len() as u64,
        kept: kept.len() as u64,
        ambiguity_rate: 1.0 - kept.len() as f64 / shots.len() as f64,
        mean_estimate: mean,
        variance,
        predicted_variance: sigma * sigma,
    })
}

/// Fractional frequency instability of the comparison:
/// `σ_y(τ) = √(1/N_A + 1/N_B) / (2π ν √(T τ))`.
///
/// # Errors
///
/// Times must be positive; configs and spec must validate.
pub fn comparison_instability(config: &RemoteConfig, tau: f64, spec: &ClockSpec) -> Result<f64> {
    config.validate()?;
    spec.validate()?;
    ensure_finite("tau", tau)?;
    if tau <= 0.0 {
        return Err(Error::Domain(format!("tau must be > 0, got {tau}")));
    }
    Ok(config.predicted_sigma() / (TAU * spec.nu * (config.t * tau).sqrt()))
}
