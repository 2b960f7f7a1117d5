//! Adaptive Bayesian discrimination of the pair's joint clock state.
//!
//! The clock states of the two co-trapped ions are read out indirectly: a
//! detection cycle maps population onto a fluorescing readout channel and
//! returns a photon count. The two cycle types address the two clocks
//! asymmetrically (one strongly, the other weakly), so no single cycle
//! resolves the joint state; instead counts are accumulated in a Bayesian
//! posterior over the four hypotheses {↓↓, ↓↑, ↑↓, ↑↑} until one hypothesis
//! reaches a probability threshold. Each next cycle type is chosen to
//! maximize the expected information gain given the current posterior.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::{domains, substream};
use crate::{ensure_finite, Error, Result};

/// Joint clock state of the pair; ↓ is the ground clock state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JointState {
    DownDown,
    DownUp,
    UpDown,
    UpUp,
}

impl JointState {
    pub const ALL: [JointState; 4] = [
        JointState::DownDown,
        JointState::DownUp,
        JointState::UpDown,
        JointState::UpUp,
    ];

    pub fn index(self) -> usize {
        match self {
            JointState::DownDown => 0,
            JointState::DownUp => 1,
            JointState::UpDown => 2,
            JointState::UpUp => 3,
        }
    }

    /// Whether each clock is in ↓ (contributes fluorescence when mapped).
    pub fn down_flags(self) -> [bool; 2] {
        match self {
            JointState::DownDown => [true, true],
            JointState::DownUp => [true, false],
            JointState::UpDown => [false, true],
            JointState::UpUp => [false, false],
        }
    }
}

/// Which clock a detection cycle addresses strongly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CycleType {
    Clock1,
    Clock2,
}

impl CycleType {
    pub const ALL: [CycleType; 2] = [CycleType::Clock1, CycleType::Clock2];

    pub fn index(self) -> usize {
        match self {
            CycleType::Clock1 => 0,
            CycleType::Clock2 => 1,
        }
    }
}

/// Default fluorescence rates `[bright, dark, strong, weak]` for
/// [`DetectionModel::default`], chosen so a fresh detection at threshold
/// 0.99 converges in roughly 30 cycles (~52 ms) with misidentification
/// under 1%.
pub const DEFAULT_DETECTION_RATES: [f64; 4] = [3.5, 2.0, 0.5, 0.25];

/// Poisson count model for the detection cycles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionModel {
    /// Mean photon counts per cycle, indexed `[joint state][cycle type]`.
    pub mean_counts: [[f64; 2]; 4],
    /// Wall-clock duration of one cycle in seconds.
    pub cycle_duration: f64,
    /// Posterior probability at which a state is declared, in (0.5, 1).
    pub threshold: f64,
    /// Hard cap on cycles per detection.
    pub max_cycles: usize,
}

impl DetectionModel {
    pub fn new(
        mean_counts: [[f64; 2]; 4],
        cycle_duration: f64,
        threshold: f64,
        max_cycles: usize,
    ) -> Result<Self> {
        let model = DetectionModel {
            mean_counts,
            cycle_duration,
            threshold,
            max_cycles,
        };
        model.validate()?;
        Ok(model)
    }

    /// Builds the mean-count table from fluorescence rates: a cycle yields
    /// `dark + bright·(strong·[addressed clock ↓] + weak·[other clock ↓])`
    /// mean counts.
    pub fn from_rates(
        bright: f64,
        dark: f64,
        strong: f64,
        weak: f64,
        cycle_duration: f64,
        threshold: f64,
        max_cycles: usize,
    ) -> Result<Self> {
        for (name, v) in [
            ("bright", bright),
            ("dark", dark),
            ("strong", strong),
            ("weak", weak),
        ] {
            ensure_finite(name, v)?;
            if v < 0.0 {
                return Err(Error::Domain(format!("{name} must be >= 0, got {v}")));
            }
        }
        let mut mean_counts = [[0.0; 2]; 4];
        for state in JointState::ALL {
            let down = state.down_flags();
            for cycle in CycleType::ALL {
                let (primary, secondary) = match cycle {
                    CycleType::Clock1 => (down[0], down[1]),
                    CycleType::Clock2 => (down[1], down[0]),
                };
                let mapped = strong * f64::from(primary) + weak * f64::from(secondary);
                mean_counts[state.index()][cycle.index()] = dark + bright * mapped;
            }
        }
        DetectionModel::new(mean_counts, cycle_duration, threshold, max_cycles)
    }

    pub fn validate(&self) -> Result<()> {
        for row in &self.mean_counts {
            for &mu in row {
                ensure_finite("mean count", mu)?;
                if mu < 0.0 {
                    return Err(Error::Domain(format!("mean counts must be >= 0, got {mu}")));
                }
            }
        }
        ensure_finite("cycle_duration", self.cycle_duration)?;
        if self.cycle_duration <= 0.0 {
            return Err(Error::Domain(format!(
                "cycle_duration must be > 0, got {}",
                self.cycle_duration
            )));
        }
        if !(self.threshold > 0.5 && self.threshold < 1.0) {
            return Err(Error::Domain(format!(
                "threshold must lie in (0.5, 1), got {}",
                self.threshold
            )));
        }
        if self.max_cycles == 0 {
            return Err(Error::Domain("max_cycles must be >= 1".into()));
        }
        Ok(())
    }
}

impl Default for DetectionModel {
    /// Rates calibrated so a fresh (uniform-prior) detection at threshold
    /// 0.99 converges in roughly 30 cycles (~50 ms at 1.67 ms per cycle)
    /// with misidentification at the percent level, mimicking a quantum
    /// logic readout whose single cycle carries well under one bit.
    fn default() -> Self {
        let [bright, dark, strong, weak] = DEFAULT_DETECTION_RATES;
        DetectionModel::from_rates(bright, dark, strong, weak, 1.67e-3, 0.99, 200)
            .expect("default detection rates are valid")
    }
}

/// Posterior over the four joint states. Probabilities are kept normalized
/// to 1 within 1e-12.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorState {
    probs: [f64; 4],
}

impl PosteriorState {
    pub fn new(probs: [f64; 4]) -> Result<Self> {
        for &p in &probs {
            ensure_finite("probability", p)?;
            if p < 0.0 {
                return Err(Error::Domain(format!(
                    "probabilities must be >= 0, got {p}"
                )));
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!(
                "posterior must sum to 1 within 1e-12, got {sum}"
            )));
        }
        Ok(PosteriorState { probs })
    }

    pub fn uniform() -> Self {
        PosteriorState { probs: [0.25; 4] }
    }

    /// Prior biased toward the state declared by the previous probe:
    /// `mass` on `previous`, the rest spread evenly.
    pub fn carryover(previous: JointState, mass: f64) -> Result<Self> {
        ensure_finite("mass", mass)?;
        if !(0.0..=1.0).contains(&mass) {
            return Err(Error::Domain(format!(
                "mass must lie in [0, 1], got {mass}"
            )));
        }
        let rest = (1.0 - mass) / 3.0;
        let mut probs = [rest; 4];
        probs[previous.index()] = mass;
        PosteriorState::new(probs)
    }

    pub fn prob(&self, state: JointState) -> f64 {
        self.probs[state.index()]
    }

    /// Most probable state and its probability.
    pub fn map_state(&self) -> (JointState, f64) {
        let mut best = (JointState::DownDown, self.probs[0]);
        for state in JointState::ALL {
            let p = self.probs[state.index()];
            if p > best.1 {
                best = (state, p);
            }
        }
        best
    }
}

fn ln_poisson_pmf(k: u64, mu: f64) -> f64 {
    if mu <= 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    k as f64 * mu.ln() - mu - crate::estimation::ln_factorial(k)
}

/// Draws one photon count for the given true state and cycle type.
pub fn simulate_cycle(
    true_state: JointState,
    cycle: CycleType,
    model: &DetectionModel,
    rng: &mut impl Rng,
) -> Result<u64> {
    model.validate()?;
    Ok(simulate_cycle_unchecked(true_state, cycle, model, rng))
}

fn simulate_cycle_unchecked(
    true_state: JointState,
    cycle: CycleType,
    model: &DetectionModel,
    rng: &mut impl Rng,
) -> u64 {
    let mu = model.mean_counts[true_state.index()][cycle.index()];
    if mu <= 0.0 {
        return 0;
    }
    let poisson = Poisson::new(mu).expect("validated mean is positive and finite");
    poisson.sample(rng) as u64
}

/// Conditions the posterior on an observed count. Likelihoods are combined
/// in the log domain and renormalized, so long cycle sequences cannot
/// underflow.
///
/// # Errors
///
/// An observation with zero likelihood under every hypothesis (possible only
/// for a malformed mean-count table) is rejected.
pub fn bayes_update(
    posterior: &PosteriorState,
    observed: u64,
    cycle: CycleType,
    model: &DetectionModel,
) -> Result<PosteriorState> {
    model.validate()?;
    let mut log_post = [0.0f64; 4];
    for state in JointState::ALL {
        let i = state.index();
        let prior = posterior.probs[i];
        let mu = model.mean_counts[i][cycle.index()];
        log_post[i] = if prior <= 0.0 {
            f64::NEG_INFINITY
        } else {
            prior.ln() + ln_poisson_pmf(observed, mu)
        };
    }
    let peak = log_post.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if peak == f64::NEG_INFINITY {
        return Err(Error::Domain(format!(
            "observation {observed} has zero likelihood under every hypothesis"
        )));
    }
    let mut probs = [0.0f64; 4];
    let mut sum = 0.0;
    for i in 0..4 {
        probs[i] = (log_post[i] - peak).exp();
        sum += probs[i];
    }
    for p in &mut probs {
        *p /= sum;
    }
    PosteriorState::new(probs)
}

/// Expected information gain (in nats) of running one cycle of each type
/// under the current posterior; used to pick the next cycle.
fn information_gain(posterior: &PosteriorState, model: &DetectionModel, cycle: CycleType) -> f64 {
    let c = cycle.index();
    let max_mu = JointState::ALL
        .iter()
        .map(|s| model.mean_counts[s.index()][c])
        .fold(0.0f64, f64::max);
    let k_max = (max_mu + 10.0 * max_mu.sqrt() + 20.0).ceil() as u64;
    let mut gain = 0.0;
    for k in 0..=k_max {
        let lps: [f64; 4] = std::array::from_fn(|i| ln_poisson_pmf(k, model.mean_counts[i][c]));
        let mut mix = 0.0;
        for (&prob, &lp) in posterior.probs.iter().zip(&lps) {
            if prob > 0.0 && lp > f64::NEG_INFINITY {
                mix += prob * lp.exp();
            }
        }
        if mix <= 0.0 {
            continue;
        }
        let ln_mix = mix.ln();
        for (&prob, &lp) in posterior.probs.iter().zip(&lps) {
            if prob > 0.0 && lp > f64::NEG_INFINITY {
                gain += prob * lp.exp() * (lp - ln_mix);
            }
        }
    }
    gain
}

/// Picks the cycle type with the larger expected information gain; ties go
/// to [`CycleType::Clock1`] so the choice is deterministic.
pub fn choose_cycle(posterior: &PosteriorState, model: &DetectionModel) -> CycleType {
    let g1 = information_gain(posterior, model, CycleType::Clock1);
    let g2 = information_gain(posterior, model, CycleType::Clock2);
    if g2 > g1 {
        CycleType::Clock2
    } else {
        CycleType::Clock1
    }
}

/// Result of one adaptive detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    /// State with the highest posterior probability when detection stopped.
    pub declared: JointState,
    /// Cycles consumed.
    pub cycles_used: usize,
    /// Whether the threshold was reached before `max_cycles`.
    pub converged: bool,
    /// `cycles_used · cycle_duration` in seconds.
    pub duration: f64,
}

/// Runs adaptive detection of `true_state`: repeatedly chooses the most
/// informative cycle, simulates its count and updates the posterior, until
/// one hypothesis exceeds the model threshold or `max_cycles` is exhausted.
pub fn detect_joint_state(
    true_state: JointState,
    model: &DetectionModel,
    prior: &PosteriorState,
    rng: &mut impl Rng,
) -> Result<DetectionOutcome> {
    model.validate()?;
    let mut posterior = prior.clone();
    let mut cycles_used = 0;
    let mut converged = false;
    while cycles_used < model.max_cycles {
        let cycle = choose_cycle(&posterior, model);
        let observed = simulate_cycle_unchecked(true_state, cycle, model, rng);
        posterior = bayes_update(&posterior, observed, cycle, model)?;
        cycles_used += 1;
        if posterior.map_state().1 >= model.threshold {
            converged = true;
            break;
        }
    }
    let (declared, _) = posterior.map_state();
    Ok(DetectionOutcome {
        declared,
        cycles_used,
        converged,
        duration: cycles_used as f64 * model.cycle_duration,
    })
}

/// Aggregate statistics of repeated fresh detections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionBenchmark {
    pub trials: u64,
    pub mean_cycles: f64,
    pub mean_duration: f64,
    pub misidentification_rate: f64,
    pub convergence_rate: f64,
    /// Histogram of cycles used, indexed by cycle count (0 unused).
    pub cycle_histogram: Vec<u64>,
}

/// Benchmarks `trials` independent detections from a uniform prior, with the
/// true state drawn uniformly per trial. Trials run in parallel on
/// per-trial substreams keyed by `seed`.
pub fn run_detection_benchmark(
    model: &DetectionModel,
    trials: u64,
    seed: u64,
) -> Result<DetectionBenchmark> {
    model.validate()?;
    if trials == 0 {
        return Err(Error::Domain("benchmark needs >= 1 trial".into()));
    }
    let results: Vec<(usize, bool, bool)> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = substream(seed, domains::DETECTION_TRIAL, trial);
            let truth = JointState::ALL[(rng.random::<u64>() % 4) as usize];
            let outcome = detect_joint_state(truth, model, &PosteriorState::uniform(), &mut rng)
                .expect("validated model cannot fail mid-trial");
            (
                outcome.cycles_used,
                outcome.declared != truth,
                outcome.converged,
            )
        })
        .collect();

    let mut histogram = vec![0u64; model.max_cycles + 1];
    let mut total_cycles = 0usize;
    let mut misids = 0u64;
    let mut converged = 0u64;
    for &(cycles, misid, conv) in &results {
        histogram[cycles] += 1;
        total_cycles += cycles;
        misids += u64::from(misid);
        converged += u64::from(conv);
    }
    let mean_cycles = total_cycles as f64 / trials as f64;
    Ok(DetectionBenchmark {
        trials,
        mean_cycles,
        mean_duration: mean_cycles * model.cycle_duration,
        misidentification_rate: misids as f64 / trials as f64,
        convergence_rate: converged as f64 / trials as f64,
        cycle_histogram: histogram,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn test_rng(index: u64) -> rand_chacha::ChaCha8Rng {
        substream(7, domains::BENCH, index)
    }

    #[test]
    fn cycle_counts_match_poisson_mean() {
        let model = DetectionModel::default();
        let mu = model.mean_counts[JointState::DownDown.index()][0];
        let mut rng = test_rng(0);
        let n = 10_000u64;
        let mut sum = 0u64;
        for _ in 0..n {
            sum +=
                simulate_cycle(JointState::DownDown, CycleType::Clock1, &model, &mut rng).unwrap();
        }
        let mean = sum as f64 / n as f64;
        // 3-sigma Poisson standard error of the mean.
        let tol = 3.0 * (mu / n as f64).sqrt();
        assert!((mean - mu).abs() < tol, "mean {mean} vs mu {mu}");
    }

    #[test]
    fn zero_mean_cycle_yields_zero_counts() {
        let model = DetectionModel::from_rates(0.0, 0.0, 0.5, 0.25, 1.67e-3, 0.99, 10).unwrap();
        let mut rng = test_rng(1);
        for _ in 0..100 {
            assert_eq!(
                simulate_cycle(JointState::UpUp, CycleType::Clock1, &model, &mut rng).unwrap(),
                0
            );
        }
    }

    #[test]
    fn update_with_equal_means_changes_nothing() {
        let model = DetectionModel::new([[2.0; 2]; 4], 1.67e-3, 0.99, 10).unwrap();
        let prior = PosteriorState::new([0.4, 0.3, 0.2, 0.1]).unwrap();
        let post = bayes_update(&prior, 3, CycleType::Clock1, &model).unwrap();
        for state in JointState::ALL {
            assert_abs_diff_eq!(post.prob(state), prior.prob(state), epsilon = 1e-12);
        }
    }

    #[test]
    fn update_rejects_impossible_observation() {
        // All-dark table: seeing a photon is impossible under every
        // hypothesis.
        let model = DetectionModel::new([[0.0; 2]; 4], 1.67e-3, 0.99, 10).unwrap();
        let prior = PosteriorState::uniform();
        assert!(bayes_update(&prior, 1, CycleType::Clock1, &model).is_err());
        // Zero counts are fine.
        assert!(bayes_update(&prior, 0, CycleType::Clock1, &model).is_ok());
    }

    #[test]
    fn update_moves_mass_toward_truth() {
        let model = DetectionModel::default();
        let mut rng = test_rng(2);
        let truth = JointState::DownUp;
        let mut posterior = PosteriorState::uniform();
        for _ in 0..400 {
            let cycle = choose_cycle(&posterior, &model);
            let k = simulate_cycle(truth, cycle, &model, &mut rng).unwrap();
            posterior = bayes_update(&posterior, k, cycle, &model).unwrap();
        }
        let (map, p) = posterior.map_state();
        assert_eq!(map, truth);
        assert!(p > 0.99, "posterior {p}");
    }

    #[test]
    fn posterior_validation_and_carryover() {
        assert!(PosteriorState::new([0.5, 0.5, 0.1, 0.0]).is_err());
        assert!(PosteriorState::new([0.25; 4]).is_ok());
        let carry = PosteriorState::carryover(JointState::UpDown, 0.9).unwrap();
        assert_abs_diff_eq!(carry.prob(JointState::UpDown), 0.9);
        assert_abs_diff_eq!(carry.prob(JointState::DownDown), 0.1 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn carryover_prior_speeds_up_detection() {
        let model = DetectionModel::default();
        let truth = JointState::DownDown;
        let mut total_uniform = 0usize;
        let mut total_carry = 0usize;
        for rep in 0..200 {
            let mut rng = test_rng(100 + rep);
            total_uniform +=
                detect_joint_state(truth, &model, &PosteriorState::uniform(), &mut rng)
                    .unwrap()
                    .cycles_used;
            let mut rng = test_rng(100 + rep);
            let prior = PosteriorState::carryover(truth, 0.9).unwrap();
            total_carry += detect_joint_state(truth, &model, &prior, &mut rng)
                .unwrap()
                .cycles_used;
        }
        assert!(
            total_carry < total_uniform,
            "carryover {total_carry} vs uniform {total_uniform}"
        );
    }

    #[test]
    fn detection_respects_cycle_cap() {
        let model = DetectionModel::from_rates(3.0, 2.0, 0.5, 0.25, 1.67e-3, 0.99, 1).unwrap();
        let mut rng = test_rng(3);
        let out = detect_joint_state(
            JointState::UpUp,
            &model,
            &PosteriorState::uniform(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(out.cycles_used, 1);
        assert!(!out.converged);
        assert_abs_diff_eq!(out.duration, 1.67e-3, epsilon = 1e-15);
    }

    #[test]
    fn stronger_separation_means_fewer_cycles() {
        // Mean cycles to threshold decreases monotonically as the bright
        // rate separates the hypotheses further.
        let mut means = Vec::new();
        for (i, bright) in [2.0, 4.0, 8.0].into_iter().enumerate() {
            let model =
                DetectionModel::from_rates(bright, 2.0, 0.5, 0.25, 1.67e-3, 0.99, 400).unwrap();
            let bench = run_detection_benchmark(&model, 400, 900 + i as u64).unwrap();
            means.push(bench.mean_cycles);
        }
        assert!(
            means[0] > means[1] && means[1] > means[2],
            "mean cycles not monotone: {means:?}"
        );
    }

    #[test]
    fn benchmark_bookkeeping_is_consistent() {
        let model = DetectionModel::default();
        let bench = run_detection_benchmark(&model, 500, 5).unwrap();
        assert_eq!(bench.trials, 500);
        assert_eq!(bench.cycle_histogram.iter().sum::<u64>(), 500);
        let hist_mean: f64 = bench
            .cycle_histogram
            .iter()
            .enumerate()
            .map(|(c, &n)| c as f64 * n as f64)
            .sum::<f64>()
            / 500.0;
        assert_abs_diff_eq!(hist_mean, bench.mean_cycles, epsilon = 1e-12);
        assert_abs_diff_eq!(
            bench.mean_duration,
            bench.mean_cycles * model.cycle_duration,
            epsilon = 1e-15
        );
        assert!(bench.convergence_rate > 0.9);
    }

    #[test]
    fn model_validation() {
        assert!(DetectionModel::new([[1.0; 2]; 4], 0.0, 0.99, 10).is_err());
        assert!(DetectionModel::new([[1.0; 2]; 4], 1e-3, 0.5, 10).is_err());
        assert!(DetectionModel::new([[1.0; 2]; 4], 1e-3, 1.0, 10).is_err());
        assert!(DetectionModel::new([[1.0; 2]; 4], 1e-3, 0.99, 0).is_err());
        assert!(
            DetectionModel::new([[-1.0, 1.0], [1.0; 2], [1.0; 2], [1.0; 2]], 1e-3, 0.99, 10)
                .is_err()
        );
        assert!(DetectionModel::from_rates(3.0, -0.1, 0.5, 0.25, 1e-3, 0.99, 10).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// Any update leaves the posterior normalized within 1e-12.
        #[test]
        fn update_preserves_normalization(
            k in 0u64..40,
            pick in 0usize..2,
            raw in proptest::array::uniform4(0.01f64..1.0),
        ) {
            let sum: f64 = raw.iter().sum();
            let probs = [raw[0] / sum, raw[1] / sum, raw[2] / sum, raw[3] / sum];
            // Renormalize exactly: nudge the last entry onto the simplex.
            let mut probs = probs;
            probs[3] = 1.0 - probs[0] - probs[1] - probs[2];
            let prior = PosteriorState::new(probs).unwrap();
            let model = DetectionModel::default();
            let cycle = CycleType::ALL[pick];
            let post = bayes_update(&prior, k, cycle, &model).unwrap();
            let total: f64 = JointState::ALL.iter().map(|&s| post.prob(s)).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
