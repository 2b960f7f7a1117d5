//! On-disk run configuration and reproducibility manifests.
//!
//! A scenario is a TOML file with one section per module; every physical
//! quantity carries its unit in the key name (`t_prime_s`, `nu_hz`, ...) so a
//! value can never silently change units between modules. The `seed` key is
//! required: no command falls back to wall-clock entropy.
//!
//! Each command run writes a [`RunManifest`] next to its outputs recording
//! the scenario hash, seed, tool version and the SHA-256 of every emitted
//! file, so a result can always be traced back to the exact configuration
//! that produced it.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::detection::DetectionModel;
use crate::physics::ClockSpec;
use crate::protocol::{DEFAULT_SCAN_DARK_TIMES, DEFAULT_SCAN_PROBE_TOTALS};
use crate::remote::{LaserNoiseModel, RemoteConfig};
use crate::{Error, Result};

/// Top-level run configuration, deserialized from TOML.
///
/// Unknown keys are rejected so a typo cannot silently fall back to a
/// default. All sections are optional; `seed` is not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Root seed for every random substream in the run.
    pub seed: u64,
    /// Default output directory; the `--out` flag overrides it.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub clock: ClockSection,
    #[serde(default)]
    pub protocol: ProtocolSection,
    #[serde(default)]
    pub detection: DetectionSection,
    #[serde(default)]
    pub remote: RemoteSection,
    #[serde(default)]
    pub instability: InstabilitySection,
}

impl Scenario {
    /// Defaults for everything except the mandatory seed.
    pub fn with_seed(seed: u64) -> Self {
        Scenario {
            seed,
            out_dir: None,
            clock: ClockSection::default(),
            protocol: ProtocolSection::default(),
            detection: DetectionSection::default(),
            remote: RemoteSection::default(),
            instability: InstabilitySection::default(),
        }
    }

    /// Parses a scenario from TOML text.
    ///
    /// # Errors
    ///
    /// Returns [`Error::Config`] naming the offending key for unknown or
    /// missing fields, then validates every section.
    pub fn from_toml(text: &str) -> Result<Self> {
        let scenario: Scenario = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    /// Loads and validates a scenario file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.clock.to_spec()?.validate()?;
        self.protocol.validate()?;
        self.detection.to_model()?.validate()?;
        self.remote.to_config()?.validate()?;
        self.instability.validate()
    }

    /// SHA-256 of the scenario's canonical JSON form, hex-encoded. Two TOML
    /// files differing only in key order or formatting hash identically.
    pub fn sha256(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("scenario serialization cannot fail");
        hex::encode(Sha256::digest(&canonical))
    }
}

/// `[clock]` section: the interrogated transition and detection readout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClockSection {
    /// Transition frequency, Hz.
    pub nu_hz: f64,
    /// Excited-state lifetime, s.
    pub t_prime_s: f64,
    /// Probability a state-detection cycle reports the true state.
    pub detection_fidelity: f64,
    /// Per-probe dead time, s.
    pub overhead_s: f64,
    /// Per-probe dead time of the full comparison session, s.
    pub session_overhead_s: f64,
}

impl ClockSection {
    pub fn to_spec(&self) -> Result<ClockSpec> {
        let spec = ClockSpec {
            nu: self.nu_hz,
            t_prime: self.t_prime_s,
            detection_fidelity: self.detection_fidelity,
            overhead: self.overhead_s,
            session_overhead: self.session_overhead_s,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl Default for ClockSection {
    fn default() -> Self {
        let spec = ClockSpec::default();
        ClockSection {
            nu_hz: spec.nu,
            t_prime_s: spec.t_prime,
            detection_fidelity: spec.detection_fidelity,
            overhead_s: spec.overhead,
            session_overhead_s: spec.session_overhead,
        }
    }
}

/// `[protocol]` section: fringe-scan shape and probe budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolSection {
    /// Dark times of the coherence scan, s.
    pub dark_times_s: Vec<f64>,
    /// Probes per dark time, matched by index.
    pub probe_totals: Vec<u64>,
    /// Grid points per fringe scan.
    pub phase_points: usize,
    /// Scan span in fringe cycles.
    pub span_cycles: f64,
    /// Static fractional frequency offsets of the two clocks.
    pub y_offsets: [f64; 2],
}

impl ProtocolSection {
    pub fn validate(&self) -> Result<()> {
        if self.dark_times_s.is_empty() {
            return Err(Error::Config("dark_times_s must be non-empty".into()));
        }
        if self.dark_times_s.len() != self.probe_totals.len() {
            return Err(Error::Config(format!(
                "dark_times_s ({}) and probe_totals ({}) must have equal length",
                self.dark_times_s.len(),
                self.probe_totals.len()
            )));
        }
        for (&t, &n) in self.dark_times_s.iter().zip(&self.probe_totals) {
            if !t.is_finite() || t <= 0.0 {
                return Err(Error::Config(format!(
                    "dark_times_s entries must be positive and finite, got {t}"
                )));
            }
            if n == 0 {
                return Err(Error::Config("probe_totals entries must be >= 1".into()));
            }
        }
        if self.phase_points < 2 {
            return Err(Error::Config("phase_points must be >= 2".into()));
        }
        if !self.span_cycles.is_finite() || self.span_cycles <= 0.0 {
            return Err(Error::Config(format!(
                "span_cycles must be positive and finite, got {}",
                self.span_cycles
            )));
        }
        for &y in &self.y_offsets {
            if !y.is_finite() || y.abs() >= 1e-6 {
                return Err(Error::Config(format!(
                    "y_offsets entries must be fractional offsets below 1e-6, got {y}"
                )));
            }
        }
        Ok(())
    }
}

impl Default for ProtocolSection {
    fn default() -> Self {
        ProtocolSection {
            dark_times_s: DEFAULT_SCAN_DARK_TIMES.to_vec(),
            probe_totals: DEFAULT_SCAN_PROBE_TOTALS.to_vec(),
            phase_points: 24,
            span_cycles: 2.5,
            y_offsets: [0.0, 0.0],
        }
    }
}

/// `[detection]` section: photon-count rates of the joint readout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionSection {
    /// Mean counts per cycle from one bright (ground-state) ion at the
    /// targeted detection strength.
    pub bright_rate: f64,
    /// Mean background counts per cycle.
    pub dark_rate: f64,
    /// Coupling of a cycle to its primary clock (fraction of `bright_rate`).
    pub strong_coupling: f64,
    /// Residual coupling to the other clock.
    pub weak_coupling: f64,
    /// Duration of one cycle, s.
    pub cycle_duration_s: f64,
    /// Posterior probability at which detection declares a state.
    pub threshold: f64,
    /// Hard cap on cycles per detection.
    pub max_cycles: usize,
    /// Trials used by the detection benchmark.
    pub trials: u64,
}

impl DetectionSection {
    pub fn to_model(&self) -> Result<DetectionModel> {
        DetectionModel::from_rates(
            self.bright_rate,
            self.dark_rate,
            self.strong_coupling,
            self.weak_coupling,
            self.cycle_duration_s,
            self.threshold,
            self.max_cycles,
        )
    }
}

impl Default for DetectionSection {
    fn default() -> Self {
        let [bright, dark, strong, weak] = crate::detection::DEFAULT_DETECTION_RATES;
        let model = DetectionModel::default();
        DetectionSection {
            bright_rate: bright,
            dark_rate: dark,
            strong_coupling: strong,
            weak_coupling: weak,
            cycle_duration_s: model.cycle_duration,
            threshold: model.threshold,
            max_cycles: model.max_cycles,
            trials: 10_000,
        }
    }
}

/// `[remote]` section: two-ensemble comparison parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RemoteSection {
    pub n_a: u64,
    pub n_b: u64,
    /// True clock phase difference per dark time, rad.
    pub true_dphi_ab_rad: f64,
    /// 1σ width of the calibration prior, rad.
    pub prior_sigma_rad: f64,
    /// When true (the default), offsets come from quadrature calibration;
    /// otherwise `theta_a_rad`/`theta_b_rad` are used as given.
    pub quadrature: bool,
    pub theta_a_rad: f64,
    pub theta_b_rad: f64,
    pub laser_noise: LaserNoiseModel,
    pub synchronized: bool,
    /// Ramsey dark time, s.
    pub dark_time_s: f64,
    /// Shots per run.
    pub shots: u64,
}

impl RemoteSection {
    pub fn to_config(&self) -> Result<RemoteConfig> {
        let mut config = RemoteConfig {
            n_a: self.n_a,
            n_b: self.n_b,
            theta_a: self.theta_a_rad,
            theta_b: self.theta_b_rad,
            true_dphi_ab: self.true_dphi_ab_rad,
            prior_sigma: self.prior_sigma_rad,
            laser_noise: self.laser_noise,
            synchronized: self.synchronized,
            t: self.dark_time_s,
        };
        if self.quadrature {
            config = config.calibrated();
        }
        config.validate()?;
        Ok(config)
    }
}

impl Default for RemoteSection {
    fn default() -> Self {
        let config = RemoteConfig::default();
        RemoteSection {
            n_a: config.n_a,
            n_b: config.n_b,
            true_dphi_ab_rad: config.true_dphi_ab,
            prior_sigma_rad: config.prior_sigma,
            quadrature: true,
            theta_a_rad: 0.0,
            theta_b_rad: 0.0,
            laser_noise: config.laser_noise,
            synchronized: config.synchronized,
            dark_time_s: config.t,
            shots: 10_000,
        }
    }
}

/// `[instability]` section: grid for the dark-time/instability curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InstabilitySection {
    /// Smallest dark time on the curve, s.
    pub t_min_s: f64,
    /// Largest dark time on the curve, s.
    pub t_max_s: f64,
    /// Number of grid points.
    pub points: usize,
    /// Averaging time the curves are quoted at, s.
    pub tau_s: f64,
}

impl InstabilitySection {
    pub fn validate(&self) -> Result<()> {
        if !self.t_min_s.is_finite() || self.t_min_s <= 0.0 || self.t_max_s <= self.t_min_s {
            return Err(Error::Config(format!(
                "instability grid needs 0 < t_min_s < t_max_s, got [{}, {}]",
                self.t_min_s, self.t_max_s
            )));
        }
        if self.points < 2 {
            return Err(Error::Config("points must be >= 2".into()));
        }
        if !self.tau_s.is_finite() || self.tau_s <= 0.0 {
            return Err(Error::Config(format!(
                "tau_s must be positive, got {}",
                self.tau_s
            )));
        }
        Ok(())
    }
}

impl Default for InstabilitySection {
    fn default() -> Self {
        InstabilitySection {
            t_min_s: 0.5,
            t_max_s: 25.0,
            points: 200,
            tau_s: 1.0,
        }
    }
}

/// One file recorded by a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    /// File name relative to the manifest's directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub seed: u64,
    /// [`Scenario::sha256`] of the configuration in force.
    pub scenario_sha256: String,
    /// Unix seconds; honors `SOURCE_DATE_EPOCH` for reproducible runs.
    pub created_unix_s: u64,
    pub outputs: Vec<OutputRecord>,
}

fn manifest_timestamp() -> u64 {
    if let Ok(epoch) = std::env::var("SOURCE_DATE_EPOCH") {
        if let Ok(seconds) = epoch.parse() {
            return seconds;
        }
    }
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    /// Hashes the named files (relative to `dir`) and writes
    /// `manifest-<command>.json` beside them. Returns the manifest.
    pub fn write(
        dir: &Path,
        command: &str,
        scenario: &Scenario,
        outputs: &[&str],
    ) -> Result<RunManifest> {
        let mut records = Vec::with_capacity(outputs.len());
        for name in outputs {
            let bytes = fs::read(dir.join(name))?;
            records.push(OutputRecord {
                path: (*name).to_string(),
                sha256: hex::encode(Sha256::digest(&bytes)),
                bytes: bytes.len() as u64,
            });
        }
        let manifest = RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed: scenario.seed,
            scenario_sha256: scenario.sha256(),
            created_unix_s: manifest_timestamp(),
            outputs: records,
        };
        let path = dir.join(format!("manifest-{command}.json"));
        let mut text =
            serde_json::to_string_pretty(&manifest).expect("manifest serialization cannot fail");
        text.push('\n');
        fs::write(path, text)?;
        Ok(manifest)
    }

    /// Checks that every recorded output still exists in `dir` with the
    /// recorded size and hash.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for record in &self.outputs {
            let bytes = fs::read(dir.join(&record.path))?;
            if bytes.len() as u64 != record.bytes {
                return Err(Error::Domain(format!(
                    "{}: size {} does not match manifest ({})",
                    record.path,
                    bytes.len(),
                    record.bytes
                )));
            }
            let digest = hex::encode(Sha256::digest(&bytes));
            if digest != record.sha256 {
                return Err(Error::Domain(format!(
                    "{}: content hash does not match manifest",
                    record.path
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<RunManifest> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_scenario_parses_with_defaults() {
        let scenario = Scenario::from_toml("seed = 7\n").unwrap();
        assert_eq!(scenario.seed, 7);
        assert_eq!(scenario.clock.t_prime_s, 20.6);
        assert_eq!(scenario.protocol.dark_times_s.len(), 6);
        assert_eq!(scenario.remote.n_a, 100);
    }

    #[test]
    fn missing_seed_is_a_config_error() {
        let err = Scenario::from_toml("[clock]\nnu_hz = 1.0e15\n").unwrap_err();
        match err {
            Error::Config(msg) => assert!(msg.contains("seed"), "message was: {msg}"),
            other => panic!("expected Config error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let err = Scenario::from_toml("seed = 1\n[clock]\nt_prime = 20.6\n").unwrap_err();
        match err {
            Error::Config(msg) => assert!(msg.contains("t_prime"), "message was: {msg}"),
            other => panic!("expected Config error, got {other:?}"),
        }
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(Scenario::from_toml("seed = 1\n[clock]\nt_prime_s = -2.0\n").is_err());
        assert!(Scenario::from_toml("seed = 1\n[protocol]\nphase_points = 1\n").is_err());
        assert!(
            Scenario::from_toml("seed = 1\n[instability]\nt_min_s = 5.0\nt_max_s = 1.0\n").is_err()
        );
    }

    #[test]
    fn hash_ignores_key_order_and_formatting() {
        let a =
            Scenario::from_toml("seed = 3\n[clock]\nnu_hz = 1.0e15\nt_prime_s = 10.0\n").unwrap();
        let b = Scenario::from_toml("seed = 3\n\n[clock]\nt_prime_s = 10.0\nnu_hz  =  1.0e15\n")
            .unwrap();
        assert_eq!(a.sha256(), b.sha256());
        let c = Scenario::from_toml("seed = 4\n").unwrap();
        assert_ne!(a.sha256(), c.sha256());
    }

    #[test]
    fn sections_convert_to_validated_configs() {
        let scenario = Scenario::with_seed(1);
        assert!(scenario.clock.to_spec().is_ok());
        assert!(scenario.detection.to_model().is_ok());
        let remote = scenario.remote.to_config().unwrap();
        // Quadrature calibration applied by default.
        assert!(
            (remote.true_dphi_ab - (remote.theta_a - remote.theta_b) - std::f64::consts::FRAC_PI_2)
                .abs()
                < 1e-12
        );
    }

    #[test]
    fn manifest_round_trip_and_verification() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("data.csv");
        fs::write(&file, b"a,b\n1,2\n").unwrap();
        let scenario = Scenario::with_seed(5);
        let manifest =
            RunManifest::write(dir.path(), "simulate-fringe", &scenario, &["data.csv"]).unwrap();
        assert_eq!(manifest.outputs.len(), 1);
        assert_eq!(manifest.outputs[0].bytes, 8);
        let loaded = RunManifest::load(&dir.path().join("manifest-simulate-fringe.json")).unwrap();
        assert_eq!(loaded, manifest);
        loaded.verify(dir.path()).unwrap();
        // Tampering is caught.
        fs::write(&file, b"a,b\n9,9\n").unwrap();
        assert!(loaded.verify(dir.path()).is_err());
    }

    #[test]
    fn manifest_timestamp_honors_reproducibility_epoch() {
        // Serialized runs in tests: set, read, restore.
        std::env::set_var("SOURCE_DATE_EPOCH", "1234567");
        assert_eq!(manifest_timestamp(), 1234567);
        std::env::remove_var("SOURCE_DATE_EPOCH");
        assert!(manifest_timestamp() > 1234567);
    }
}
