//! Experiment harness: scenario presets, seeded Monte-Carlo sweeps, baseline
//! schemes, and CSV emission.
//!
//! Every run of an [`ExperimentSpec`] derives one sub-seed per
//! (sweep value, realization) pair, so the emitted CSV is byte-identical for
//! identical specs regardless of worker count. Wall-clock timings are
//! non-deterministic and therefore left empty unless explicitly requested.

use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{nats_to_bps, PhaseResolution, SystemConfig};
use crate::linalg::CMat;
use crate::metrics::{
    effective_channels, mse_matrix_with_noise, mse_objective, min_rate, BeamformerSet, MseState,
};
use crate::scenario::{sample_channels, build_geometry, ChannelSet, PhaseProfile};
use crate::{Error, Result};

/// Experiment tag mixed into every channel sub-seed.
const EXPERIMENT_TAG: u64 = 0xBE;

/// A baseline or optimized scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Joint beamforming and continuous phase optimization.
    OptimizedContinuous,
    /// Optimized phases quantized to `b` bits, beamforming re-optimized.
    Quantized(u32),
    /// Uniform random phases, beamforming optimized.
    RandomPhase,
    /// Surface removed, beamforming optimized.
    NoIrs,
    /// Half-duplex amplify-and-forward relay in place of the surface.
    AfRelay,
}

impl Scheme {
    /// All rate-comparison schemes in dominance order.
    pub fn comparison_set() -> Vec<Scheme> {
        vec![
            Scheme::OptimizedContinuous,
            Scheme::Quantized(2),
            Scheme::Quantized(1),
            Scheme::RandomPhase,
            Scheme::NoIrs,
        ]
    }

    /// Stable identifier used in CSV output and CLI flags.
    pub fn name(&self) -> String {
        match self {
            Scheme::OptimizedContinuous => "optimized-continuous".to_string(),
            Scheme::Quantized(b) => format!("quantized-b{b}"),
            Scheme::RandomPhase => "random-phase".to_string(),
            Scheme::NoIrs => "no-irs".to_string(),
            Scheme::AfRelay => "af-relay".to_string(),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.name())
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "optimized-continuous" => Ok(Scheme::OptimizedContinuous),
            "random-phase" => Ok(Scheme::RandomPhase),
            "no-irs" => Ok(Scheme::NoIrs),
            "af-relay" => Ok(Scheme::AfRelay),
            other => {
                if let Some(bits) = other.strip_prefix("quantized-b") {
                    let bits: u32 = bits
                        .parse()
                        .map_err(|_| Error::Usage(format!("unknown scheme '{other}'")))?;
                    if bits == 0 {
                        return Err(Error::Usage("quantizer needs at least one bit".into()));
                    }
                    return Ok(Scheme::Quantized(bits));
                }
                Err(Error::Usage(format!("unknown scheme '{other}'")))
            }
        }
    }
}

/// The swept variable of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub enum Sweep {
    /// Single run of the base configuration.
    None,
    /// Transmit power budget in dBm.
    PmaxDbm(Vec<f64>),
    /// Reflecting-element counts.
    IrsElements(Vec<usize>),
    /// Transmit antenna counts.
    TxAntennas(Vec<usize>),
    /// Surface x-position in metres.
    IrsX(Vec<f64>),
}

impl Sweep {
    /// Axis name written to the CSV.
    pub fn axis(&self) -> &'static str {
        match self {
            Sweep::None => "none",
            Sweep::PmaxDbm(_) => "pmax_dbm",
            Sweep::IrsElements(_) => "num_irs_elements",
            Sweep::TxAntennas(_) => "tx_antennas",
            Sweep::IrsX(_) => "irs_x_m",
        }
    }

    /// Number of sweep points (one for `None`).
    pub fn len(&self) -> usize {
        match self {
            Sweep::None => 1,
            Sweep::PmaxDbm(v) => v.len(),
            Sweep::IrsElements(v) => v.len(),
            Sweep::TxAntennas(v) => v.len(),
            Sweep::IrsX(v) => v.len(),
        }
    }

    /// True when the sweep carries no points.
    pub fn is_empty(&self) -> bool {
        match self {
            Sweep::None => false,
            Sweep::PmaxDbm(v) => v.is_empty(),
            Sweep::IrsElements(v) => v.is_empty(),
            Sweep::TxAntennas(v) => v.is_empty(),
            Sweep::IrsX(v) => v.is_empty(),
        }
    }

    /// Numeric value at a sweep point.
    pub fn value(&self, idx: usize) -> f64 {
        match self {
            Sweep::None => 0.0,
            Sweep::PmaxDbm(v) => v[idx],
            Sweep::IrsElements(v) => v[idx] as f64,
            Sweep::TxAntennas(v) => v[idx] as f64,
            Sweep::IrsX(v) => v[idx],
        }
    }

    /// Applies the sweep point to a configuration.
    pub fn apply(&self, idx: usize, config: &mut SystemConfig) {
        match self {
            Sweep::None => {}
            Sweep::PmaxDbm(v) => config.max_power_w = crate::config::dbm_to_watts(v[idx]),
            Sweep::IrsElements(v) => config.num_irs_elements = v[idx],
            Sweep::TxAntennas(v) => config.tx_antennas = v[idx],
            Sweep::IrsX(v) => config.irs_position[0] = v[idx],
        }
    }
}

/// What the experiment writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputKind {
    /// One row per (sweep value, realization, scheme) with the final rate.
    Rates,
    /// One row per outer iteration of the optimized scheme.
    Trajectories,
}

/// A full experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    /// Preset name recorded in the output.
    pub preset: String,
    /// Base configuration; sweep points override it per run.
    pub base: SystemConfig,
    /// Swept variable.
    pub sweep: Sweep,
    /// Independent channel realizations per sweep point.
    pub realizations: usize,
    /// Schemes to run on each realization.
    pub schemes: Vec<Scheme>,
    /// Master seed.
    pub seed: u64,
    /// CSV destination; `None` keeps results in memory only.
    pub out: Option<PathBuf>,
    /// Worker threads (`None` uses the global pool).
    pub workers: Option<usize>,
    /// Include wall-clock timings (breaks byte-for-byte determinism).
    pub include_timing: bool,
    /// Zero the direct links before every scheme (relay-comparison setup).
    pub zero_direct: bool,
    /// Row shape.
    pub output: OutputKind,
}

impl ExperimentSpec {
    /// Basic sanity checks.
    pub fn validate(&self) -> Result<()> {
        if self.realizations == 0 {
            return Err(Error::Usage("need at least one realization".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::Usage("need at least one scheme".into()));
        }
        if self.sweep.is_empty() {
            return Err(Error::Usage("sweep values must be nonempty".into()));
        }
        self.base.validate()
    }
}

/// One result row of a rate experiment.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ResultRow {
    /// Preset name.
    pub preset: String,
    /// Scheme identifier.
    pub scheme: String,
    /// Sweep axis name.
    pub sweep: String,
    /// Sweep value of this run.
    pub sweep_value: f64,
    /// Realization index.
    pub realization: usize,
    /// Channel sub-seed of this run.
    pub seed: u64,
    /// Final max-min rate in nats (empty on failure).
    pub rate_nats: Option<f64>,
    /// Final max-min rate in bits/s/Hz (`nats / ln 2`, empty on failure).
    pub rate_bps_hz: Option<f64>,
    /// Outer iterations spent.
    pub outer_iterations: Option<usize>,
    /// Wall-clock seconds (empty unless timing was requested).
    pub wall_time_s: Option<f64>,
    /// `ok` or `error:<description>`.
    pub status: String,
}

/// One per-iteration row of a convergence experiment.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrajectoryRow {
    /// Preset name.
    pub preset: String,
    /// Scheme identifier.
    pub scheme: String,
    /// Sweep axis name.
    pub sweep: String,
    /// Sweep value of this run.
    pub sweep_value: f64,
    /// Realization index.
    pub realization: usize,
    /// Channel sub-seed of this run.
    pub seed: u64,
    /// Outer iteration (1-based).
    pub iteration: usize,
    /// Objective in nats after the iteration.
    pub objective_nats: f64,
    /// Objective in bits/s/Hz.
    pub objective_bps_hz: f64,
}

/// Outcome of one scheme on one realization.
#[derive(Debug, Clone)]
pub struct SchemeOutcome {
    /// Final max-min rate in nats.
    pub rate_nats: f64,
    /// Outer iterations spent.
    pub outer_iterations: usize,
    /// Objective after every outer iteration (optimized schemes only).
    pub trajectory: Vec<f64>,
}

/// Result of a fixed-phase beamforming-only optimization.
#[derive(Debug, Clone)]
pub struct BeamformingOnly {
    /// Final beamformers.
    pub beamformers: BeamformerSet,
    /// Worst-user rate in nats.
    pub rate_nats: f64,
    /// Outer iterations spent.
    pub outer_iterations: usize,
    /// False when the cap was hit first.
    pub converged: bool,
}

/// Optimizes beamforming only, with the reflecting phases held fixed:
/// receiver/weight updates in closed form, then the closed-form dual solver
/// for one user or the SOCP step for several.
pub fn optimize_beamforming_only(
    config: &SystemConfig,
    channels: &ChannelSet,
    phases: &PhaseProfile,
) -> Result<BeamformingOnly> {
    config.validate()?;
    let sigma2 = config.noise_power_w;
    let p_max = config.max_power_w;
    let num_users = config.num_users;
    let noise_cov: Vec<CMat> = (0..num_users)
        .map(|_| CMat::identity(config.rx_antennas, config.rx_antennas).scale(sigma2))
        .collect();
    let h_bars = effective_channels(channels, phases);

    let mut beamformers =
        BeamformerSet::zeros(config.num_bs, num_users, config.tx_antennas, config.streams);
    for n in 0..config.num_bs {
        for k in 0..num_users {
            let block = crate::metrics::effective_channel_block(channels, phases, n, k);
            beamformers.set_block(
                n,
                k,
                crate::single_user::matched_filter_init(
                    &block,
                    config.streams,
                    p_max / num_users as f64,
                ),
            );
        }
    }

    let sub_opts = crate::single_user::SubgradientOptions::from_config(config);
    let mut last = f64::NEG_INFINITY;
    let mut outer = 0;
    let mut converged = false;
    while outer < config.max_outer_iterations {
        outer += 1;
        let state = MseState::optimal_with_noise(&h_bars, &beamformers, &noise_cov)?;
        let objective_of = |bf: &BeamformerSet| -> Result<f64> {
            let stacked = bf.stacked_all();
            let mut worst = f64::INFINITY;
            for k in 0..num_users {
                let e = mse_matrix_with_noise(
                    &h_bars[k],
                    &stacked,
                    k,
                    &state.receivers[k],
                    &noise_cov[k],
                );
                worst = worst.min(mse_objective(&state.weights[k], &e)?);
            }
            Ok(worst)
        };
        let before = objective_of(&beamformers)?;
        let candidate = if num_users == 1 {
            let blocks: Vec<CMat> = (0..config.num_bs)
                .map(|n| crate::metrics::effective_channel_block(channels, phases, n, 0))
                .collect();
            let solve = crate::single_user::dual_subgradient(
                &blocks,
                &state.receivers[0],
                &state.weights[0],
                p_max,
                &sub_opts,
            )?;
            BeamformerSet::from_stacked(&[solve.stacked], config.num_bs)?
        } else {
            crate::multi_user::beamforming_socp_step(
                &h_bars,
                &state,
                &noise_cov,
                p_max,
                &beamformers,
            )?
            .0
        };
        let after = objective_of(&candidate)?;
        let objective = if after >= before {
            beamformers = candidate;
            after
        } else {
            before
        };
        if last.is_finite() {
            let change = (objective - last) / last.abs().max(1.0);
            if change < config.convergence_threshold {
                converged = true;
            }
        }
        last = objective;
        if converged {
            break;
        }
    }
    beamformers.validate_power(p_max)?;
    let rate_nats = min_rate(&h_bars, &beamformers, sigma2)?;
    Ok(BeamformingOnly { beamformers, rate_nats, outer_iterations: outer, converged })
}

/// Random-phase baseline: phases drawn uniformly once, beamforming
/// optimized.
pub fn baseline_random_phase(
    config: &SystemConfig,
    channels: &ChannelSet,
    rng: &mut impl rand::Rng,
) -> Result<BeamformingOnly> {
    let phases = PhaseProfile::random(config.num_irs_elements, rng);
    optimize_beamforming_only(config, channels, &phases)
}

/// No-surface baseline: surface links zeroed, beamforming optimized.
pub fn baseline_no_irs(config: &SystemConfig, channels: &ChannelSet) -> Result<BeamformingOnly> {
    let stripped = channels.without_irs();
    let phases = PhaseProfile::zeros(config.num_irs_elements);
    optimize_beamforming_only(config, &stripped, &phases)
}

/// Runs one scheme on one realization. `run_seed` personalizes phase
/// initializations and randomization draws.
pub fn run_scheme(
    scheme: Scheme,
    config: &SystemConfig,
    channels: &ChannelSet,
    run_seed: u64,
) -> Result<SchemeOutcome> {
    let mut config = config.clone();
    config.rng_seed = run_seed;
    match scheme {
        Scheme::OptimizedContinuous => optimized_run(&config, channels, PhaseResolution::Continuous),
        Scheme::Quantized(b) => optimized_run(&config, channels, PhaseResolution::Bits(b)),
        Scheme::RandomPhase => {
            let mut rng =
                crate::rng::stream(config.rng_seed, &[crate::rng::tags::RANDOM_PHASE]);
            let result = baseline_random_phase(&config, channels, &mut rng)?;
            Ok(SchemeOutcome {
                rate_nats: result.rate_nats,
                outer_iterations: result.outer_iterations,
                trajectory: Vec::new(),
            })
        }
        Scheme::NoIrs => {
            let result = baseline_no_irs(&config, channels)?;
            Ok(SchemeOutcome {
                rate_nats: result.rate_nats,
                outer_iterations: result.outer_iterations,
                trajectory: Vec::new(),
            })
        }
        Scheme::AfRelay => {
            let result = crate::relay::optimize_af(&config, channels)?;
            Ok(SchemeOutcome {
                rate_nats: result.rate_nats,
                outer_iterations: result.outer_iterations,
                trajectory: result.trajectory.iter().map(|r| r.objective_nats).collect(),
            })
        }
    }
}

/// Optimized scheme, optionally followed by quantization of the phases and a
/// beamforming-only re-optimization at those fixed phases.
fn optimized_run(
    config: &SystemConfig,
    channels: &ChannelSet,
    resolution: PhaseResolution,
) -> Result<SchemeOutcome> {
    let (phases, trajectory, iterations) = if config.num_users == 1 {
        let solution = crate::single_user::optimize_single_user(config, channels)?;
        let traj = solution.trajectory.iter().map(|r| r.objective_nats).collect();
        if resolution == PhaseResolution::Continuous {
            return Ok(SchemeOutcome {
                rate_nats: solution.rate_nats,
                outer_iterations: solution.outer_iterations,
                trajectory: traj,
            });
        }
        (solution.phases, traj, solution.outer_iterations)
    } else {
        let solution = crate::multi_user::optimize_multi_user(config, channels)?;
        let traj = solution.trajectory.iter().map(|r| r.objective_nats).collect();
        if resolution == PhaseResolution::Continuous {
            return Ok(SchemeOutcome {
                rate_nats: solution.rate_nats,
                outer_iterations: solution.outer_iterations,
                trajectory: traj,
            });
        }
        (solution.phases, traj, solution.outer_iterations)
    };
    let quantized = phases.quantized(resolution);
    let reopt = optimize_beamforming_only(config, channels, &quantized)?;
    Ok(SchemeOutcome {
        rate_nats: reopt.rate_nats,
        outer_iterations: iterations + reopt.outer_iterations,
        trajectory,
    })
}

/// Raw per-run results plus the rows ready for CSV emission.
#[derive(Debug, Clone)]
pub struct ExperimentResults {
    /// Rate rows (empty for trajectory output).
    pub rows: Vec<ResultRow>,
    /// Trajectory rows (empty for rate output).
    pub trajectories: Vec<TrajectoryRow>,
}

/// Channel realization sub-seed of one (sweep point, realization) pair.
pub fn realization_seed(spec_seed: u64, sweep_idx: usize, realization: usize) -> u64 {
    crate::rng::sub_seed(spec_seed, &[EXPERIMENT_TAG, sweep_idx as u64, realization as u64])
}

/// Runs the whole experiment and writes the CSV when a path is set.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResults> {
    spec.validate()?;
    let work: Vec<(usize, usize)> = (0..spec.sweep.len())
        .flat_map(|s| (0..spec.realizations).map(move |r| (s, r)))
        .collect();

    type RunRow = (usize, usize, Vec<(Scheme, std::result::Result<SchemeOutcome, String>, f64)>);
    let run_all = || -> Vec<RunRow> {
        work.par_iter()
            .map(|&(sweep_idx, realization)| {
                let mut config = spec.base.clone();
                spec.sweep.apply(sweep_idx, &mut config);
                let run_seed = realization_seed(spec.seed, sweep_idx, realization);
                let outcomes = match prepare_channels(spec, &config, run_seed) {
                    Ok(channels) => spec
                        .schemes
                        .iter()
                        .map(|&scheme| {
                            let begin = Instant::now();
                            let outcome = run_scheme(scheme, &config, &channels, run_seed)
                                .map_err(|e| e.to_string());
                            (scheme, outcome, begin.elapsed().as_secs_f64())
                        })
                        .collect(),
                    Err(e) => spec
                        .schemes
                        .iter()
                        .map(|&scheme| (scheme, Err(e.to_string()), 0.0))
                        .collect::<Vec<_>>(),
                };
                (sweep_idx, realization, outcomes)
            })
            .collect()
    };

    let raw = match spec.workers {
        Some(workers) => rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| Error::Usage(format!("cannot build worker pool: {e}")))?
            .install(run_all),
        None => run_all(),
    };

    let mut rows = Vec::new();
    let mut trajectories = Vec::new();
    for (sweep_idx, realization, outcomes) in raw {
        let sweep_value = spec.sweep.value(sweep_idx);
        let run_seed = realization_seed(spec.seed, sweep_idx, realization);
        for (scheme, outcome, elapsed) in outcomes {
            match outcome {
                Ok(out) => {
                    if spec.output == OutputKind::Trajectories {
                        for (i, &objective) in out.trajectory.iter().enumerate() {
                            trajectories.push(TrajectoryRow {
                                preset: spec.preset.clone(),
                                scheme: scheme.name(),
                                sweep: spec.sweep.axis().to_string(),
                                sweep_value,
                                realization,
                                seed: run_seed,
                                iteration: i + 1,
                                objective_nats: objective,
                                objective_bps_hz: nats_to_bps(objective),
                            });
                        }
                    }
                    rows.push(ResultRow {
                        preset: spec.preset.clone(),
                        scheme: scheme.name(),
                        sweep: spec.sweep.axis().to_string(),
                        sweep_value,
                        realization,
                        seed: run_seed,
                        rate_nats: Some(out.rate_nats),
                        rate_bps_hz: Some(nats_to_bps(out.rate_nats)),
                        outer_iterations: Some(out.outer_iterations),
                        wall_time_s: spec.include_timing.then_some(elapsed),
                        status: "ok".to_string(),
                    });
                }
                Err(message) => rows.push(ResultRow {
                    preset: spec.preset.clone(),
                    scheme: scheme.name(),
                    sweep: spec.sweep.axis().to_string(),
                    sweep_value,
                    realization,
                    seed: run_seed,
                    rate_nats: None,
                    rate_bps_hz: None,
                    outer_iterations: None,
                    wall_time_s: None,
                    status: format!("error:{message}"),
                }),
            }
        }
    }

    if let Some(path) = &spec.out {
        match spec.output {
            OutputKind::Rates => write_csv(path, &rows)?,
            OutputKind::Trajectories => write_trajectory_csv(path, &trajectories)?,
        }
    }
    Ok(ExperimentResults { rows, trajectories })
}

fn prepare_channels(
    spec: &ExperimentSpec,
    config: &SystemConfig,
    run_seed: u64,
) -> Result<ChannelSet> {
    let mut geo_rng = crate::rng::stream(run_seed, &[crate::rng::tags::GEOMETRY]);
    let placement = build_geometry(config, &mut geo_rng)?;
    let mut ch_rng = crate::rng::stream(run_seed, &[crate::rng::tags::CHANNELS]);
    let channels = sample_channels(config, &placement, &mut ch_rng)?;
    Ok(if spec.zero_direct { channels.without_direct() } else { channels })
}

/// Writes rate rows as RFC-4180 CSV.
pub fn write_csv(path: &std::path::Path, rows: &[ResultRow]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut writer = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in rows {
        writer.serialize(row).map_err(csv_err)?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads rate rows back (lossless round trip of the schema).
pub fn read_csv(path: &std::path::Path) -> Result<Vec<ResultRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut rows = Vec::new();
    for record in reader.deserialize() {
        rows.push(record.map_err(csv_err)?);
    }
    Ok(rows)
}

/// Writes trajectory rows as CSV.
pub fn write_trajectory_csv(path: &std::path::Path, rows: &[TrajectoryRow]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut writer = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in rows {
        writer.serialize(row).map_err(csv_err)?;
    }
    writer.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Usage(format!("csv: {e}"))
}

/// Mean and standard error of the mean.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Plain-text summary: mean rate in bits/s/Hz per (scheme, sweep value).
pub fn summary_table(rows: &[ResultRow]) -> String {
    use std::collections::BTreeMap;
    let mut cells: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for row in rows {
        if let Some(bps) = row.rate_bps_hz {
            cells
                .entry((row.scheme.clone(), format!("{:.6}", row.sweep_value)))
                .or_default()
                .push(bps);
        }
    }
    let mut out = String::from("scheme,sweep_value,mean_bps_hz,stderr,count\n");
    for ((scheme, sweep_value), values) in cells {
        let (mean, stderr) = mean_and_stderr(&values);
        out.push_str(&format!(
            "{scheme},{sweep_value},{mean:.6},{stderr:.6},{}\n",
            values.len()
        ));
    }
    out
}

/// Named figure presets (desk-scale realization counts; the paper-scale
/// counts are reachable through the realizations flag).
pub fn figure_spec(name: &str, seed: u64) -> Result<ExperimentSpec> {
    let spec = match name {
        "fig2" => ExperimentSpec {
            preset: "fig2".into(),
            base: SystemConfig::single_user(),
            sweep: Sweep::IrsElements(vec![20, 50, 100]),
            realizations: 10,
            schemes: vec![Scheme::OptimizedContinuous],
            seed,
            out: None,
            workers: None,
            include_timing: false,
            zero_direct: false,
            output: OutputKind::Trajectories,
        },
        "fig3" => ExperimentSpec {
            preset: "fig3".into(),
            base: SystemConfig::single_user(),
            sweep: Sweep::PmaxDbm(vec![10.0, 15.0, 20.0, 25.0, 30.0]),
            realizations: 50,
            schemes: Scheme::comparison_set(),
            seed,
            out: None,
            workers: None,
            include_timing: false,
            zero_direct: false,
            output: OutputKind::Rates,
        },
        "fig5" => ExperimentSpec {
            preset: "fig5".into(),
            base: SystemConfig::single_user(),
            sweep: Sweep::IrsElements(vec![50, 100, 150, 200, 250, 300]),
            realizations: 50,
            schemes: Scheme::comparison_set(),
            seed,
            out: None,
            workers: None,
            include_timing: false,
            zero_direct: false,
            output: OutputKind::Rates,
        },
        "fig6" => ExperimentSpec {
            preset: "fig6".into(),
            base: SystemConfig::single_user(),
            sweep: Sweep::IrsX(vec![-150.0, -100.0, -50.0, 0.0, 50.0, 100.0, 150.0]),
            realizations: 50,
            schemes: vec![Scheme::OptimizedContinuous],
            seed,
            out: None,
            workers: None,
            include_timing: false,
            zero_direct: false,
            output: OutputKind::Rates,
        },
        "fig7" => ExperimentSpec {
            preset: "fig7".into(),
            base: SystemConfig::multi_user(),
            sweep: Sweep::IrsElements(vec![20, 100]),
            realizations: 10,
            schemes: vec![Scheme::OptimizedContinuous],
            seed,
            out: None,
            workers: None,
            include_timing: false,
            zero_direct: false,
            output: OutputKind::Trajectories,
        },
        "fig8" => ExperimentSpec {
            preset: "fig8".into(),
            base: SystemConfig::multi_user(),
            // 0..20 dBW in dBm units.
            sweep: Sweep::PmaxDbm(vec![30.0, 35.0, 40.0, 45.0, 50.0]),
            realizations: 30,
            schemes: Scheme::comparison_set(),
            seed,
            out: None,
            workers: None,
            include_timing: false,
            zero_direct: false,
            output: OutputKind::Rates,
        },
        "fig10" => ExperimentSpec {
            preset: "fig10".into(),
            base: SystemConfig::multi_user(),
            sweep: Sweep::IrsElements(vec![20, 40, 60, 80, 100]),
            realizations: 30,
            schemes: Scheme::comparison_set(),
            seed,
            out: None,
            workers: None,
            include_timing: false,
            zero_direct: false,
            output: OutputKind::Rates,
        },
        "fig11" => ExperimentSpec {
            preset: "fig11".into(),
            base: SystemConfig::multi_user(),
            sweep: Sweep::IrsElements(vec![16, 50, 100]),
            realizations: 20,
            schemes: vec![Scheme::OptimizedContinuous, Scheme::AfRelay],
            seed,
            out: None,
            workers: None,
            include_timing: false,
            zero_direct: true,
            output: OutputKind::Rates,
        },
        other => {
            return Err(Error::Usage(format!(
                "unknown figure '{other}' (expected fig2|fig3|fig5|fig6|fig7|fig8|fig10|fig11)"
            )))
        }
    };
    Ok(spec)
}
