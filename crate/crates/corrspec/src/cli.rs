//! The `corrspec` command-line front end.
//!
//! Every command is a pure function of (scenario, seed): identical inputs
//! yield byte-identical CSV/JSON outputs regardless of worker count. Each
//! run writes a `manifest-<command>.json` beside its outputs recording the
//! scenario hash and per-file checksums.
//!
//! CSV files carry a `# schema:` version line and decimal text with 9
//! significant digits (for plotting); JSON files carry full binary64
//! round-trip values (for downstream tools and tests).

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::estimation::{
    fit_contrast_decay, fit_fringe_mle, fit_phase_drift, unwrap_phases, CoherenceFit, DriftFit,
    FringeFit, PhasePoint,
};
use crate::physics::{
    lifetime_limited_sigma1s, q_coherence, q_spectroscopic, uniform_scan_sigma1s, ContrastModel,
};
use crate::protocol::{coherence_scan, phase_grid, session_duration, FringeDataset, FringePoint};
use crate::remote::{comparison_instability, summarize_shots, RemoteSimulator, RemoteSummary};
use crate::scenario::{RunManifest, Scenario};
use crate::{Error, Result};

/// Simulation and estimation toolkit for correlation spectroscopy of
/// optical clocks.
#[derive(Debug, Parser)]
#[command(name = "corrspec", version, about)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Scenario file (TOML). Omitting it uses built-in defaults, in which
    /// case --seed is mandatory.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Root seed; overrides the scenario's.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory (and input directory for pipeline stages). Overrides
    /// the scenario's `out_dir`; defaults to the current directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Workload override: probes per fringe dataset, remote shots, or
    /// detection trials, depending on the command.
    #[arg(long, global = true, value_name = "N")]
    probes: Option<u64>,
    /// Worker threads for simulation (0 = one per core).
    #[arg(long, global = true, value_name = "N", default_value_t = 0)]
    workers: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate correlation-fringe scans over the configured dark times.
    SimulateFringe,
    /// Fit contrast and phase to each dataset in fringes.csv.
    Fit,
    /// Fit coherence time and phase drift to the results in fits.json.
    Coherence,
    /// Tabulate projected instability against dark time.
    Instability,
    /// Simulate a synchronized comparison of two remote ensembles.
    Remote,
    /// Benchmark the adaptive joint-state detection.
    DetectBench,
}

/// Parses `argv`, runs the selected command, and maps failures to the exit
/// codes documented on [`Error::exit_code`]. Flag-parsing failures exit 2
/// inside `clap`.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::parse_from(argv);
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("corrspec: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli) -> Result<()> {
    let scenario = load_scenario(cli)?;
    if cli.workers > 0 {
        // A second build_global (e.g. in tests) is harmless: the pool
        // cannot change once built and determinism never depends on it.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build_global();
    }
    let out = cli
        .out
        .clone()
        .or_else(|| scenario.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out)?;
    match cli.command {
        Command::SimulateFringe => cmd_simulate_fringe(&scenario, &out),
        Command::Fit => cmd_fit(&scenario, &out),
        Command::Coherence => cmd_coherence(&scenario, &out),
        Command::Instability => cmd_instability(&scenario, &out),
        Command::Remote => cmd_remote(&scenario, &out),
        Command::DetectBench => cmd_detect_bench(&scenario, &out),
    }
}

/// Resolves the scenario in force: file (if any), then the --seed and
/// --probes overrides folded in. The manifest hash covers the result.
fn load_scenario(cli: &Cli) -> Result<Scenario> {
    let mut scenario = match (&cli.config, cli.seed) {
        (Some(path), _) => Scenario::load(path)?,
        (None, Some(seed)) => Scenario::with_seed(seed),
        (None, None) => {
            return Err(Error::Config(
                "no scenario file given and no --seed set; runs must be seeded explicitly".into(),
            ))
        }
    };
    if let Some(seed) = cli.seed {
        scenario.seed = seed;
    }
    if let Some(n) = cli.probes {
        if n == 0 {
            return Err(Error::Config("--probes must be >= 1".into()));
        }
        scenario.protocol.probe_totals = vec![n; scenario.protocol.dark_times_s.len()];
        scenario.remote.shots = n;
        scenario.detection.trials = n;
    }
    scenario.validate()?;
    Ok(scenario)
}

/// Writes `value` as pretty JSON with a trailing newline.
fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// 9-significant-digit decimal text used in every CSV column.
fn fmt9(x: f64) -> String {
    format!("{x:.8e}")
}

// ---------------------------------------------------------------------------
// simulate-fringe

/// Per-dataset entry of `fringes.json`.
#[derive(Debug, Serialize, Deserialize)]
struct FringeSummary {
    t_s: f64,
    probes: u64,
    phase_points: usize,
    /// Wall-clock length of the dataset including per-probe overhead, s.
    session_s: f64,
}

fn cmd_simulate_fringe(scenario: &Scenario, out: &Path) -> Result<()> {
    let spec = scenario.clock.to_spec()?;
    let protocol = &scenario.protocol;
    let grid = phase_grid(protocol.phase_points, protocol.span_cycles)?;
    let datasets = coherence_scan(
        &protocol.dark_times_s,
        &protocol.probe_totals,
        &grid,
        protocol.y_offsets,
        &spec,
        scenario.seed,
    )?;

    let csv_path = out.join("fringes.csv");
    let mut w = BufWriter::new(File::create(&csv_path)?);
    writeln!(w, "# schema: corrspec.fringes.v1")?;
    writeln!(w, "t_s,delta_phi_z_rad,n_correlated,n_total")?;
    for dataset in &datasets {
        for point in &dataset.points {
            writeln!(
                w,
                "{},{},{},{}",
                fmt9(dataset.t),
                fmt9(point.delta_phi_z),
                point.n_correlated,
                point.n_total
            )?;
        }
    }
    w.flush()?;

    let summaries: Vec<FringeSummary> = datasets
        .iter()
        .map(|d| {
            let probes = d.points.iter().map(|p| p.n_total).sum();
            FringeSummary {
                t_s: d.t,
                probes,
                phase_points: d.points.len(),
                session_s: session_duration(d.t, probes, &spec),
            }
        })
        .collect();
    write_json(&out.join("fringes.json"), &summaries)?;
    RunManifest::write(
        out,
        "simulate-fringe",
        scenario,
        &["fringes.csv", "fringes.json"],
    )?;
    println!(
        "simulate-fringe: {} datasets, {} probes -> {}",
        datasets.len(),
        summaries.iter().map(|s| s.probes).sum::<u64>(),
        csv_path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// fit

#[derive(Debug, Deserialize)]
struct FringeRow {
    t_s: f64,
    delta_phi_z_rad: f64,
    n_correlated: u64,
    n_total: u64,
}

/// Reads a `fringes.csv` back into datasets, grouping consecutive rows with
/// equal dark time.
fn read_fringe_csv(path: &Path) -> Result<Vec<FringeDataset>> {
    let file = File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(file);
    let mut datasets: Vec<FringeDataset> = Vec::new();
    for row in reader.deserialize() {
        let row: FringeRow = row.map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let point = FringePoint {
            delta_phi_z: row.delta_phi_z_rad,
            n_correlated: row.n_correlated,
            n_total: row.n_total,
        };
        match datasets.last_mut() {
            Some(d) if d.t == row.t_s => d.points.push(point),
            _ => datasets.push(FringeDataset {
                t: row.t_s,
                points: vec![point],
            }),
        }
    }
    if datasets.is_empty() {
        return Err(Error::Config(format!("{}: no data rows", path.display())));
    }
    for dataset in &datasets {
        dataset.validate()?;
    }
    Ok(datasets)
}

/// Per-dataset entry of `fits.json`.
#[derive(Debug, Serialize, Deserialize)]
struct FitRecord {
    t_s: f64,
    probes: u64,
    fit: FringeFit,
}

fn cmd_fit(scenario: &Scenario, out: &Path) -> Result<()> {
    let datasets = read_fringe_csv(&out.join("fringes.csv"))?;
    let mut records = Vec::with_capacity(datasets.len());
    for dataset in &datasets {
        let fit = fit_fringe_mle(dataset)?;
        records.push(FitRecord {
            t_s: dataset.t,
            probes: dataset.points.iter().map(|p| p.n_total).sum(),
            fit,
        });
    }

    let csv_path = out.join("fits.csv");
    let mut w = BufWriter::new(File::create(&csv_path)?);
    writeln!(w, "# schema: corrspec.fits.v1")?;
    writeln!(
        w,
        "t_s,contrast,contrast_ci_lo,contrast_ci_hi,phase0_rad,phase0_ci_lo_rad,phase0_ci_hi_rad,identifiable"
    )?;
    for r in &records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            fmt9(r.t_s),
            fmt9(r.fit.contrast),
            fmt9(r.fit.contrast_ci.0),
            fmt9(r.fit.contrast_ci.1),
            fmt9(r.fit.phase0),
            fmt9(r.fit.phase_ci.0),
            fmt9(r.fit.phase_ci.1),
            r.fit.identifiable
        )?;
    }
    w.flush()?;

    write_json(&out.join("fits.json"), &records)?;
    RunManifest::write(out, "fit", scenario, &["fits.csv", "fits.json"])?;
    let flagged = records.iter().filter(|r| !r.fit.identifiable).count();
    println!(
        "fit: {} datasets ({} non-identifiable) -> {}",
        records.len(),
        flagged,
        csv_path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// coherence

/// Contents of `coherence.json`.
#[derive(Debug, Serialize, Deserialize)]
struct CoherenceReport {
    coherence: CoherenceFit,
    /// Q = π ν T_c at the posterior mode.
    q_coherence: f64,
    drift: DriftFit,
    /// Unwrapped fringe phases the drift fit consumed.
    phase_points: Vec<PhasePoint>,
}

fn cmd_coherence(scenario: &Scenario, out: &Path) -> Result<()> {
    let spec = scenario.clock.to_spec()?;
    let records: Vec<FitRecord> = read_json(&out.join("fits.json"))?;
    if records.is_empty() {
        return Err(Error::Config("fits.json holds no datasets".into()));
    }
    let pairs: Vec<(f64, FringeFit)> = records.iter().map(|r| (r.t_s, r.fit.clone())).collect();
    let coherence = fit_contrast_decay(&pairs)?;

    let wrapped: Vec<f64> = records.iter().map(|r| r.fit.phase0).collect();
    let unwrapped = unwrap_phases(&wrapped);
    let phase_points: Vec<PhasePoint> = records
        .iter()
        .zip(&unwrapped)
        .map(|(r, &phase)| PhasePoint {
            t: r.t_s,
            phase,
            sigma: r.fit.phase_sigma(),
        })
        .collect();
    let drift = fit_phase_drift(&phase_points, &spec)?;

    let report = CoherenceReport {
        q_coherence: q_coherence(&spec, coherence.t_c)?,
        coherence,
        drift,
        phase_points,
    };
    write_json(&out.join("coherence.json"), &report)?;
    RunManifest::write(out, "coherence", scenario, &["coherence.json"])?;
    println!(
        "coherence: T_c = {:.3} s (68% CI {:.3}..{:.3}), drift = {:.3e} rad/s",
        report.coherence.t_c,
        report.coherence.ci_lower,
        report.coherence.ci_upper,
        report.drift.slope
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// instability

/// Contents of `instability.json`.
#[derive(Debug, Serialize, Deserialize)]
struct InstabilityReport {
    /// Dark time minimizing the lifetime-limited curve (half the lifetime), s.
    t_opt_s: f64,
    /// Lifetime-limited instability at 1 s averaging, evaluated at `t_opt_s`.
    sigma_1s_opt: f64,
    /// Q = 2 ν T at the largest tabulated dark time.
    q_spectroscopic_max: f64,
    rows: usize,
}

fn cmd_instability(scenario: &Scenario, out: &Path) -> Result<()> {
    let spec = scenario.clock.to_spec()?;
    let grid = &scenario.instability;
    // Contrast model behind the scanned (dashed) curve: detection-scaled
    // lifetime decay.
    let model = ContrastModel::new(0.5 * spec.detection_contrast_factor(), spec.t_prime)?;

    let csv_path = out.join("instability.csv");
    let mut w = BufWriter::new(File::create(&csv_path)?);
    writeln!(w, "# schema: corrspec.instability.v1")?;
    writeln!(w, "t_s,sigma_1s_lifetime,sigma_1s_uniform_scan")?;
    let ratio = grid.t_max_s / grid.t_min_s;
    for i in 0..grid.points {
        let frac = i as f64 / (grid.points - 1) as f64;
        let t = grid.t_min_s * ratio.powf(frac);
        writeln!(
            w,
            "{},{},{}",
            fmt9(t),
            fmt9(lifetime_limited_sigma1s(&spec, t)?),
            fmt9(uniform_scan_sigma1s(&spec, &model, t)?)
        )?;
    }
    w.flush()?;

    let t_opt = spec.t_prime / 2.0;
    let report = InstabilityReport {
        t_opt_s: t_opt,
        sigma_1s_opt: lifetime_limited_sigma1s(&spec, t_opt)?,
        q_spectroscopic_max: q_spectroscopic(&spec, grid.t_max_s)?,
        rows: grid.points,
    };
    write_json(&out.join("instability.json"), &report)?;
    RunManifest::write(
        out,
        "instability",
        scenario,
        &["instability.csv", "instability.json"],
    )?;
    println!(
        "instability: optimum sigma_1s = {:.3e} at T = {:.3} s -> {}",
        report.sigma_1s_opt,
        report.t_opt_s,
        csv_path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// remote

/// Contents of `remote.json`.
#[derive(Debug, Serialize, Deserialize)]
struct RemoteReport {
    summary: RemoteSummary,
    /// Per-shot phase estimate converted to fractional frequency instability
    /// at the configured averaging time.
    sigma_y: f64,
    tau_s: f64,
}

fn cmd_remote(scenario: &Scenario, out: &Path) -> Result<()> {
    let spec = scenario.clock.to_spec()?;
    let config = scenario.remote.to_config()?;
    let mut simulator = RemoteSimulator::new(config, scenario.seed)?;
    let shots = simulator.run(scenario.remote.shots as usize);
    let summary = summarize_shots(&config, &shots)?;

    let csv_path = out.join("shots.csv");
    let mut w = BufWriter::new(File::create(&csv_path)?);
    writeln!(w, "# schema: corrspec.remote-shots.v1")?;
    writeln!(w, "shot,p_hat_a,p_hat_b,estimate_rad,ambiguous")?;
    for (i, shot) in shots.iter().enumerate() {
        writeln!(
            w,
            "{},{},{},{},{}",
            i,
            fmt9(shot.p_hat_a),
            fmt9(shot.p_hat_b),
            fmt9(shot.estimate),
            shot.ambiguous
        )?;
    }
    w.flush()?;

    let tau = scenario.instability.tau_s;
    let report = RemoteReport {
        summary,
        sigma_y: comparison_instability(&config, tau, &spec)?,
        tau_s: tau,
    };
    write_json(&out.join("remote.json"), &report)?;
    RunManifest::write(out, "remote", scenario, &["shots.csv", "remote.json"])?;
    println!(
        "remote: {} shots, variance {:.4} (predicted {:.4}), ambiguous {:.2}%",
        report.summary.shots,
        report.summary.variance,
        report.summary.predicted_variance,
        100.0 * report.summary.ambiguity_rate
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// detect-bench

/// Contents of `detect.json`.
#[derive(Debug, Serialize, Deserialize)]
struct DetectionReport {
    trials: u64,
    mean_cycles: f64,
    mean_duration_s: f64,
    misidentification_rate: f64,
    convergence_rate: f64,
}

fn cmd_detect_bench(scenario: &Scenario, out: &Path) -> Result<()> {
    let model = scenario.detection.to_model()?;
    let benchmark = crate::detection::run_detection_benchmark(
        &model,
        scenario.detection.trials,
        scenario.seed,
    )?;

    let csv_path = out.join("detect-cycles.csv");
    let mut w = BufWriter::new(File::create(&csv_path)?);
    writeln!(w, "# schema: corrspec.detect-cycles.v1")?;
    writeln!(w, "cycles,count")?;
    for (cycles, &count) in benchmark.cycle_histogram.iter().enumerate() {
        if count > 0 {
            writeln!(w, "{cycles},{count}")?;
        }
    }
    w.flush()?;

    let report = DetectionReport {
        trials: benchmark.trials,
        mean_cycles: benchmark.mean_cycles,
        mean_duration_s: benchmark.mean_duration,
        misidentification_rate: benchmark.misidentification_rate,
        convergence_rate: benchmark.convergence_rate,
    };
    write_json(&out.join("detect.json"), &report)?;
    RunManifest::write(
        out,
        "detect-bench",
        scenario,
        &["detect-cycles.csv", "detect.json"],
    )?;
    println!(
        "detect-bench: mean {:.1} cycles ({:.1} ms), misidentification {:.3}%",
        report.mean_cycles,
        1e3 * report.mean_duration_s,
        100.0 * report.misidentification_rate
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> i32 {
        run(std::iter::once("corrspec").chain(args.iter().copied()))
    }

    #[test]
    fn missing_seed_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap().to_string();
        assert_eq!(run_args(&["simulate-fringe", "--out", &out]), 2);
    }

    #[test]
    fn fringe_pipeline_round_trips_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap().to_string();
        // Small probe budget keeps the test fast; the fit only needs shape.
        let code = run_args(&[
            "simulate-fringe",
            "--seed",
            "11",
            "--probes",
            "240",
            "--out",
            &out,
        ]);
        assert_eq!(code, 0);
        let datasets = read_fringe_csv(&dir.path().join("fringes.csv")).unwrap();
        assert_eq!(datasets.len(), 6);
        assert!(datasets.iter().all(|d| d.points.len() == 24));

        assert_eq!(run_args(&["fit", "--seed", "11", "--out", &out]), 0);
        let records: Vec<FitRecord> = read_json(&dir.path().join("fits.json")).unwrap();
        assert_eq!(records.len(), 6);

        assert_eq!(run_args(&["coherence", "--seed", "11", "--out", &out]), 0);
        let report: CoherenceReport = read_json(&dir.path().join("coherence.json")).unwrap();
        assert!(report.coherence.t_c > 0.0);

        // Manifests validate against the files on disk.
        let manifest =
            RunManifest::load(&dir.path().join("manifest-simulate-fringe.json")).unwrap();
        manifest.verify(dir.path()).unwrap();
    }

    #[test]
    fn reruns_are_byte_identical() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        for dir in [&dir_a, &dir_b] {
            let out = dir.path().to_str().unwrap().to_string();
            assert_eq!(
                run_args(&[
                    "simulate-fringe",
                    "--seed",
                    "5",
                    "--probes",
                    "120",
                    "--out",
                    &out
                ]),
                0
            );
        }
        let a = fs::read(dir_a.path().join("fringes.csv")).unwrap();
        let b = fs::read(dir_b.path().join("fringes.csv")).unwrap();
        assert_eq!(a, b);
        let a = fs::read(dir_a.path().join("fringes.json")).unwrap();
        let b = fs::read(dir_b.path().join("fringes.json")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_values_carry_nine_significant_digits() {
        assert_eq!(fmt9(0.1), "1.00000000e-1");
        assert_eq!(fmt9(1.458724050261861e-16), "1.45872405e-16");
    }

    #[test]
    fn scenario_file_round_trip_with_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scan.toml");
        fs::write(
            &path,
            "seed = 9\n[protocol]\ndark_times_s = [1.0]\nprobe_totals = [96]\n",
        )
        .unwrap();
        let out = dir.path().to_str().unwrap().to_string();
        let code = run_args(&[
            "simulate-fringe",
            "--config",
            path.to_str().unwrap(),
            "--out",
            &out,
        ]);
        assert_eq!(code, 0);
        let datasets = read_fringe_csv(&dir.path().join("fringes.csv")).unwrap();
        assert_eq!(datasets.len(), 1);
        // Bad key exits 2.
        fs::write(&path, "seed = 9\n[clock]\nbogus = 1.0\n").unwrap();
        let code = run_args(&[
            "simulate-fringe",
            "--config",
            path.to_str().unwrap(),
            "--out",
            &out,
        ]);
        assert_eq!(code, 2);
    }
}
