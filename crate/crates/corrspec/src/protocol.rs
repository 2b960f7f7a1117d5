//! Probe-level simulation of a co-trapped clock pair.
//!
//! One probe = one Ramsey sequence on both clocks simultaneously: a shared
//! π/2 pulse, a dark time `t`, a second π/2 pulse with a deliberately
//! randomized laser phase, then state readout. Each clock `i` accumulates
//!
//! `δφᵢ = φ_L + sᵢ(Δφ_z) + 2π ν yᵢ t`
//!
//! where `φ_L` is the per-probe laser phase (uniform on [0, 2π)), `sᵢ` is the
//! clock's share of the applied differential offset `Δφ_z` (all of it on
//! clock 2 here), and `yᵢ` a fixed fractional frequency offset. Spontaneous
//! decay over the dark time damps each clock's fringe amplitude by
//! `exp(−t/2T′)`, so a flip is reported with probability
//! `[1 + exp(−t/2T′)·cos δφᵢ]/2` regardless of which clock state the probe
//! started in; the carried-over initial states therefore never appear in the
//! statistics and are not tracked. Imperfect readout misreports each flip
//! independently with probability `1 − f`.
//!
//! Within one fringe point, probes consume a single substream sequentially in
//! a fixed draw order (`φ_L`, flip 1, readout 1, flip 2, readout 2); distinct
//! points own distinct substreams, so scans parallelize without changing
//! results.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::physics::ClockSpec;
use crate::rng::{derive_seed, domains, substream};
use crate::{ensure_finite, Error, Result};

/// Dark times (s) of the reference coherence scan.
pub const DEFAULT_SCAN_DARK_TIMES: [f64; 6] = [0.1, 0.5, 1.0, 2.0, 3.0, 5.0];

/// Probes collected per dataset of the reference coherence scan, matched to
/// [`DEFAULT_SCAN_DARK_TIMES`].
pub const DEFAULT_SCAN_PROBE_TOTALS: [u64; 6] = [1500, 600, 600, 360, 300, 100];

/// Parameters of a single probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    /// Ramsey dark time in seconds, > 0.
    pub t: f64,
    /// Fractional frequency offsets of the two clocks (dimensionless,
    /// |y| < 1e-6).
    pub y_offsets: [f64; 2],
    /// Differential phase applied before the final pulse, radians; applied
    /// entirely to clock 2.
    pub delta_phi_z: f64,
    /// Root seed of the run this probe belongs to.
    pub seed: u64,
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_finite("t", self.t)?;
        ensure_finite("delta_phi_z", self.delta_phi_z)?;
        if self.t <= 0.0 {
            return Err(Error::Domain(format!("t must be > 0, got {}", self.t)));
        }
        for (i, y) in self.y_offsets.iter().enumerate() {
            ensure_finite("y_offset", *y)?;
            if y.abs() >= 1e-6 {
                return Err(Error::Domain(format!(
                    "y_offsets[{i}] must satisfy |y| < 1e-6, got {y}"
                )));
            }
        }
        Ok(())
    }
}

/// Readout result of one probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointOutcome {
    /// Clock 1 reported a state flip.
    pub flipped_1: bool,
    /// Clock 2 reported a state flip.
    pub flipped_2: bool,
    /// Both clocks reported the same answer.
    pub correlated: bool,
}

/// Correlation counts accumulated at one applied differential phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringePoint {
    /// Applied differential phase, radians.
    pub delta_phi_z: f64,
    /// Probes whose two readouts agreed.
    pub n_correlated: u64,
    /// Total probes taken at this phase, > 0.
    pub n_total: u64,
}

impl FringePoint {
    /// Observed correlation fraction.
    pub fn fraction(&self) -> f64 {
        self.n_correlated as f64 / self.n_total as f64
    }
}

/// A correlation fringe: counts versus applied differential phase at a fixed
/// dark time. Phases are strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FringeDataset {
    /// Dark time in seconds.
    pub t: f64,
    pub points: Vec<FringePoint>,
}

impl FringeDataset {
    pub fn validate(&self) -> Result<()> {
        ensure_finite("t", self.t)?;
        if self.t <= 0.0 {
            return Err(Error::Domain(format!("t must be > 0, got {}", self.t)));
        }
        if self.points.is_empty() {
            return Err(Error::Domain("fringe dataset has no points".into()));
        }
        for pair in self.points.windows(2) {
            if pair[1].delta_phi_z <= pair[0].delta_phi_z {
                return Err(Error::Domain(format!(
                    "fringe phases must be strictly increasing, got {} after {}",
                    pair[1].delta_phi_z, pair[0].delta_phi_z
                )));
            }
        }
        for p in &self.points {
            ensure_finite("delta_phi_z", p.delta_phi_z)?;
            if p.n_total == 0 {
                return Err(Error::Domain(format!(
                    "n_total must be > 0 at phase {}",
                    p.delta_phi_z
                )));
            }
            if p.n_correlated > p.n_total {
                return Err(Error::Domain(format!(
                    "n_correlated {} exceeds n_total {} at phase {}",
                    p.n_correlated, p.n_total, p.delta_phi_z
                )));
            }
        }
        Ok(())
    }
}

/// Simulates one probe, drawing from `rng` in the fixed order documented at
/// the module level.
///
/// # Errors
///
/// Invalid `config` or `spec` is rejected.
pub fn simulate_probe(
    config: &ProbeConfig,
    spec: &ClockSpec,
    rng: &mut impl Rng,
) -> Result<JointOutcome> {
    config.validate()?;
    spec.validate()?;
    Ok(simulate_probe_unchecked(config, spec, rng))
}

/// [`simulate_probe`] without revalidating inputs; used by the scan loops
/// after validating once.
fn simulate_probe_unchecked(
    config: &ProbeConfig,
    spec: &ClockSpec,
    rng: &mut impl Rng,
) -> JointOutcome {
    let phi_l = TAU * rng.random::<f64>();
    let damping = (-config.t / (2.0 * spec.t_prime)).exp();
    let shares = [0.0, config.delta_phi_z];
    let mut reported = [false; 2];
    for i in 0..2 {
        let dphi = phi_l + shares[i] + TAU * spec.nu * config.y_offsets[i] * config.t;
        let p_flip = 0.5 * (1.0 + damping * dphi.cos());
        let flipped = rng.random::<f64>() < p_flip;
        let misread = rng.random::<f64>() >= spec.detection_fidelity;
        reported[i] = flipped != misread;
    }
    JointOutcome {
        flipped_1: reported[0],
        flipped_2: reported[1],
        correlated: reported[0] == reported[1],
    }
}

/// Evenly spaced phase grid covering `span_cycles` full fringes, inclusive of
/// both endpoints: `n` points from 0 to `span_cycles · 2π`.
///
/// # Errors
///
/// Fewer than 2 points or a non-positive span is rejected.
pub fn phase_grid(n: usize, span_cycles: f64) -> Result<Vec<f64>> {
    ensure_finite("span_cycles", span_cycles)?;
    if n < 2 {
        return Err(Error::Domain(format!("grid needs >= 2 points, got {n}")));
    }
    if span_cycles <= 0.0 {
        return Err(Error::Domain(format!(
            "span_cycles must be > 0, got {span_cycles}"
        )));
    }
    let step = span_cycles * TAU / (n - 1) as f64;
    Ok((0..n).map(|k| k as f64 * step).collect())
}

/// Default 24-point grid spanning 2.5 fringes, enough to resolve contrast,
/// phase and their uncertainties.
pub fn default_phase_grid() -> Vec<f64> {
    phase_grid(24, 2.5).expect("static grid parameters are valid")
}

/// Splits `total` probes as evenly as possible across `points` grid points;
/// the first `total % points` points get one extra.
pub fn split_probes(total: u64, points: usize) -> Vec<u64> {
    let p = points as u64;
    (0..p)
        .map(|i| total / p + u64::from(i < total % p))
        .collect()
}

/// Simulates a full fringe at dark time `t`: `probes[k]` probes at
/// `grid[k]`, with per-point substreams keyed by `(seed, FRINGE_POINT, k)`.
/// Points run in parallel.
///
/// # Errors
///
/// Mismatched lengths, a non-increasing grid, zero probe counts or invalid
/// probe parameters are rejected.
pub fn simulate_fringe_allocated(
    t: f64,
    grid: &[f64],
    probes: &[u64],
    y_offsets: [f64; 2],
    spec: &ClockSpec,
    seed: u64,
) -> Result<FringeDataset> {
    if grid.len() != probes.len() {
        return Err(Error::Domain(format!(
            "grid has {} points but probe allocation has {}",
            grid.len(),
            probes.len()
        )));
    }
    if grid.is_empty() {
        return Err(Error::Domain("empty phase grid".into()));
    }
    spec.validate()?;
    let configs: Vec<ProbeConfig> = grid
        .iter()
        .map(|&phase| ProbeConfig {
            t,
            y_offsets,
            delta_phi_z: phase,
            seed,
        })
        .collect();
    for c in &configs {
        c.validate()?;
    }
    if probes.contains(&0) {
        return Err(Error::Domain("every grid point needs >= 1 probe".into()));
    }

    let points: Vec<FringePoint> = configs
        .par_iter()
        .zip(probes.par_iter())
        .enumerate()
        .map(|(k, (config, &n))| {
            let mut rng = substream(seed, domains::FRINGE_POINT, k as u64);
            let mut n_correlated = 0;
            for _ in 0..n {
                if simulate_probe_unchecked(config, spec, &mut rng).correlated {
                    n_correlated += 1;
                }
            }
            FringePoint {
                delta_phi_z: config.delta_phi_z,
                n_correlated,
                n_total: n,
            }
        })
        .collect();

    let dataset = FringeDataset { t, points };
    dataset.validate()?;
    Ok(dataset)
}

/// [`simulate_fringe_allocated`] with `total` probes split evenly over the
/// grid.
pub fn simulate_fringe(
    t: f64,
    grid: &[f64],
    total_probes: u64,
    y_offsets: [f64; 2],
    spec: &ClockSpec,
    seed: u64,
) -> Result<FringeDataset> {
    let probes = split_probes(total_probes, grid.len());
    simulate_fringe_allocated(t, grid, &probes, y_offsets, spec, seed)
}

/// Simulates one fringe per dark time: `probe_totals[j]` probes spread over
/// `grid` at dark time `dark_times[j]`. Each dataset draws from its own
/// derived seed, so datasets are independent and individually reproducible.
///
/// # Errors
///
/// Mismatched lengths or invalid per-fringe parameters are rejected.
pub fn coherence_scan(
    dark_times: &[f64],
    probe_totals: &[u64],
    grid: &[f64],
    y_offsets: [f64; 2],
    spec: &ClockSpec,
    seed: u64,
) -> Result<Vec<FringeDataset>> {
    if dark_times.len() != probe_totals.len() {
        return Err(Error::Domain(format!(
            "{} dark times but {} probe totals",
            dark_times.len(),
            probe_totals.len()
        )));
    }
    if dark_times.is_empty() {
        return Err(Error::Domain("scan needs >= 1 dark time".into()));
    }
    dark_times
        .iter()
        .zip(probe_totals)
        .enumerate()
        .map(|(j, (&t, &total))| {
            let dataset_seed = derive_seed(seed, domains::SCAN_DATASET, j as u64);
            simulate_fringe(t, grid, total, y_offsets, spec, dataset_seed)
        })
        .collect()
}

/// Wall-clock duration of a session of `n_probes` probes at dark time `t`,
/// including the spec's session overhead per probe.
pub fn session_duration(t: f64, n_probes: u64, spec: &ClockSpec) -> f64 {
    n_probes as f64 * (t + spec.session_overhead)
}
