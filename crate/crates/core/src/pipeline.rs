//! End-to-end scenario execution.
//!
//! A run is a pure function of `(scenario, n_pulses)`: pair emission is
//! keyed per pulse, detector randomness is keyed per fixed-size pulse
//! block, each channel stage and each tomography setting owns a derived
//! stream, so results are reproducible bit-for-bit and independent of
//! chunking.
//!
//! Stage application order differs from the physical photon path —
//! detector thinning and jitter run before channel thinning and filter
//! displacement — which is sound because independent Bernoulli survivals
//! commute and so do independent additive time displacements. Dark
//! counts are appended last (they arise in the detector, after every
//! lossy element), while converter background is injected in chain order
//! so that downstream attenuation thins it as it would in the link.
//!
//! The sixteen settings of a tomography sweep re-measure the *same*
//! simulated click streams (each setting re-draws its projection
//! outcomes). The experiment acquires settings sequentially from
//! distinct photons; statistically both give Poisson-like per-setting
//! counts from the same source distribution, and sharing the streams
//! lets a 10⁷-pulse budget serve all sixteen settings at once. Setting
//! k's acquisition is placed at wall-clock offset k·duration for the
//! polarization-drift walk, preserving the sequential-acquisition
//! phenomenology that the alignment search has to cope with.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cascade::{
    append_poisson_noise, detect, generate_pairs_range, sample_pair, sort_records, Arm,
    DetectionRecord, Origin, SourceConfig,
};
use crate::channel::{apply_qfc, attenuate, filter_reshape, DriftTable};
use crate::measures::{
    curve_in_frame, decay_time_average, fit_fidelity, sideband_noise_floor, windowed_rho_in_frame,
    DelayWindow, EntanglementCurve, FitModel, Measure,
};
use crate::qmath::{
    cascade_density, fidelity_to_state, kron_op, mix_with_white_noise, Unitary,
};
use crate::rng::{derive_seed, stream, Domain};
use crate::scenario::{ChannelStage, Scenario, SettingsSet, StageArm};
use crate::tomography::{
    align_basis, full_36, james_16, partial_trace_x, partial_trace_xx, projector_vector,
    simulate_setting, AlignOptions, CoincidenceHistogram, MeasurementSetting, PairProjection,
    PairStateLookup, TomographyResult,
};
use crate::{Error, Result};

/// Pulse-block size for chunked generation/detection.
const BLOCK_PULSES: u64 = 1 << 20;

/// Detector-domain stream indices reserved for run-length dark counts
/// (block streams use indices 0..n_blocks).
const DARK_STREAM_XX: u64 = u64::MAX - 1;
const DARK_STREAM_X: u64 = u64::MAX;

/// Click streams after source, detection and channel.
#[derive(Debug, Clone)]
pub struct SimulatedStreams {
    pub records_xx: Vec<DetectionRecord>,
    pub records_x: Vec<DetectionRecord>,
    /// Wall-clock span of one setting acquisition, s.
    pub duration_s: f64,
    pub n_pulses: u64,
}

impl SimulatedStreams {
    /// (signal, channel-noise, dark) counts for one arm.
    pub fn origin_counts(records: &[DetectionRecord]) -> (u64, u64, u64) {
        let mut c = (0u64, 0u64, 0u64);
        for r in records {
            match r.origin {
                Origin::Signal => c.0 += 1,
                Origin::ChannelNoise => c.1 += 1,
                Origin::Dark => c.2 += 1,
            }
        }
        c
    }
}

/// Source with its seed resolved against the run master seed (an explicit
/// nonzero seed in the config pins the emission stream; the default 0
/// derives it from `master_seed`).
fn effective_source(scenario: &Scenario) -> SourceConfig {
    let mut source = scenario.source.clone();
    if source.seed == 0 {
        source.seed = derive_seed(scenario.master_seed, Domain::Pairs, 0);
    }
    source
}

fn stage_touches(stage_arm: StageArm, arm: Arm) -> bool {
    matches!(
        (stage_arm, arm),
        (StageArm::Both, _) | (StageArm::Xx, Arm::Xx) | (StageArm::X, Arm::X)
    )
}

/// Deterministically simulate emission, detection and the channel chain.
pub fn simulate(scenario: &Scenario, n_pulses: u64) -> Result<SimulatedStreams> {
    scenario.validate()?;
    if n_pulses == 0 {
        return Err(Error::invalid("n_pulses must be positive"));
    }
    let source = effective_source(scenario);
    let duration_s = n_pulses as f64 * source.t_rep_ps() * 1e-12;

    let mut records_xx = Vec::new();
    let mut records_x = Vec::new();
    let n_blocks = n_pulses.div_ceil(BLOCK_PULSES);
    for b in 0..n_blocks {
        let range = b * BLOCK_PULSES..((b + 1) * BLOCK_PULSES).min(n_pulses);
        let pairs = generate_pairs_range(&source, range);
        let mut rng = stream(scenario.master_seed, Domain::Detector, b);
        let (xx, x) = detect(&pairs, &scenario.detector_xx, &scenario.detector_x, 0.0, &mut rng)?;
        records_xx.extend(xx);
        records_x.extend(x);
    }

    for (i, s) in scenario.stages.iter().enumerate() {
        for (arm_bit, arm) in [(0u64, Arm::Xx), (1u64, Arm::X)] {
            if !stage_touches(s.arm, arm) {
                continue;
            }
            let records = if arm == Arm::Xx { &mut records_xx } else { &mut records_x };
            let mut rng = stream(scenario.master_seed, Domain::Stage, ((i as u64) << 1) | arm_bit);
            let taken = std::mem::take(records);
            *records = match &s.stage {
                ChannelStage::Loss(l) => attenuate(taken, l, &mut rng)?,
                ChannelStage::Qfc(q) => apply_qfc(taken, q, arm, duration_s, &mut rng)?,
                ChannelStage::Filter(f) => filter_reshape(taken, f, &mut rng)?,
                // Polarization drift does not move or remove clicks; it is
                // realized at projection time through the drift tables.
                ChannelStage::Drift(_) => taken,
            };
        }
    }

    let mut rng = stream(scenario.master_seed, Domain::Detector, DARK_STREAM_XX);
    append_poisson_noise(
        &mut records_xx,
        Arm::Xx,
        Origin::Dark,
        scenario.detector_xx.dark_rate_hz,
        duration_s,
        &mut rng,
    );
    let mut rng = stream(scenario.master_seed, Domain::Detector, DARK_STREAM_X);
    append_poisson_noise(
        &mut records_x,
        Arm::X,
        Origin::Dark,
        scenario.detector_x.dark_rate_hz,
        duration_s,
        &mut rng,
    );
    sort_records(&mut records_xx);
    sort_records(&mut records_x);

    Ok(SimulatedStreams { records_xx, records_x, duration_s, n_pulses })
}

/// Per-pulse emitted-state lookup: the true XX–X delay is reproduced from
/// the keyed source stream, the white-noise admixture applied, and the
/// polarization-drift rotation at the pair's wall-clock time folded in.
pub struct CascadePairState<'a> {
    source: &'a SourceConfig,
    drift_xx: &'a DriftTable,
    drift_x: &'a DriftTable,
    /// Wall-clock offset of this acquisition slice, s.
    wall_offset_s: f64,
    rotate: bool,
}

impl<'a> CascadePairState<'a> {
    pub fn new(
        source: &'a SourceConfig,
        drift_xx: &'a DriftTable,
        drift_x: &'a DriftTable,
        wall_offset_s: f64,
        rotate: bool,
    ) -> Self {
        CascadePairState { source, drift_xx, drift_x, wall_offset_s, rotate }
    }
}

impl PairStateLookup for CascadePairState<'_> {
    fn projection(&self, pulse_index: u64, setting: &MeasurementSetting) -> PairProjection {
        let Some(pair) = sample_pair(self.source, pulse_index) else {
            // A click attributed to a pulse that emitted nothing can only
            // be mis-tagged noise; treat it as unpolarized.
            return PairProjection { joint: 0.25, marginal_xx: 0.5, marginal_x: 0.5 };
        };
        let mut rho = cascade_density(pair.delay_ps, &self.source.cascade);
        if self.source.state_noise_fraction > 0.0 {
            rho = mix_with_white_noise(&rho, self.source.state_noise_fraction)
                .expect("noise fraction validated with the scenario");
        }
        if self.rotate {
            let t_s = self.wall_offset_s + pair.t_xx_ps * 1e-12;
            // Drift tables are unitary by construction; skip re-validation
            // on this per-pulse path.
            let w = kron_op(self.drift_xx.at(t_s), self.drift_x.at(t_s));
            rho = w * rho * w.adjoint();
        }
        let psi = setting.projector();
        let a = projector_vector(setting.projector_xx);
        let b = projector_vector(setting.projector_x);
        let rho_a = partial_trace_x(&rho);
        let rho_b = partial_trace_xx(&rho);
        PairProjection {
            joint: fidelity_to_state(&rho, &psi),
            marginal_xx: (a.adjoint() * rho_a * a)[(0, 0)].re,
            marginal_x: (b.adjoint() * rho_b * b)[(0, 0)].re,
        }
    }
}

/// Histograms plus the reconstructions of both integration windows.
#[derive(Debug, Clone)]
pub struct TomographyRun {
    pub histograms: Vec<CoincidenceHistogram>,
    /// Aligned analysis frame `(u_xx, u_x)` when the alignment search ran.
    pub frame: Option<(Unitary, Unitary)>,
    pub rho_zero: TomographyResult,
    pub rho_full: TomographyResult,
    /// Width of the zero-delay window used for `rho_zero`, ps.
    pub zero_window_ps: f64,
}

fn settings_for(set: SettingsSet) -> Vec<MeasurementSetting> {
    match set {
        SettingsSet::James16 => james_16(),
        SettingsSet::Full36 => full_36(),
    }
}

fn drift_tables(scenario: &Scenario, horizon_s: f64) -> Result<(DriftTable, DriftTable)> {
    let mut xx = DriftTable::identity();
    let mut x = DriftTable::identity();
    for s in &scenario.stages {
        if let ChannelStage::Drift(model) = &s.stage {
            let mut model = *model;
            if model.seed == 0 {
                let arm_bit = if s.arm == StageArm::Xx { 0 } else { 1 };
                model.seed = derive_seed(scenario.master_seed, Domain::Drift, arm_bit);
            }
            let table = DriftTable::new(&model, horizon_s)?;
            match s.arm {
                StageArm::Xx => xx = table,
                StageArm::X => x = table,
                StageArm::Both => unreachable!("rejected by Scenario::validate"),
            }
        }
    }
    Ok((xx, x))
}

/// Measure all settings over the simulated streams and reconstruct both
/// integration windows.
pub fn tomograph(scenario: &Scenario, streams: &SimulatedStreams) -> Result<TomographyRun> {
    let source = effective_source(scenario);
    let settings = settings_for(scenario.tomography.settings);
    let (drift_xx, drift_x) = drift_tables(scenario, streams.duration_s * settings.len() as f64)?;
    let rotate = scenario
        .stages
        .iter()
        .any(|s| matches!(s.stage, ChannelStage::Drift(_)));
    let window_ps = scenario.coincidence_window_ps();
    let bin_width_ps = scenario.tomography.bin_width_ps;

    let histograms = settings
        .par_iter()
        .enumerate()
        .map(|(k, s)| {
            let lookup = CascadePairState::new(
                &source,
                &drift_xx,
                &drift_x,
                k as f64 * streams.duration_s,
                rotate,
            );
            let mut rng = stream(scenario.master_seed, Domain::Setting, k as u64);
            simulate_setting(
                &streams.records_xx,
                &streams.records_x,
                &lookup,
                s,
                window_ps,
                bin_width_ps,
                &mut rng,
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let frame = if scenario.tomography.align_basis {
        let opts = AlignOptions {
            window_end_ps: source.cascade.t1_x_ps,
            ..AlignOptions::default()
        };
        Some(align_basis(&histograms, &opts)?)
    } else {
        None
    };

    let zero_window_ps = scenario.analysis.zero_delay_window_ps;
    let rho_zero = windowed_rho_in_frame(
        &histograms,
        DelayWindow { center_ps: zero_window_ps / 2.0, width_ps: zero_window_ps },
        frame.as_ref(),
    )?;
    let span = source.t_rep_ps();
    let rho_full = windowed_rho_in_frame(
        &histograms,
        DelayWindow { center_ps: span / 2.0, width_ps: span },
        frame.as_ref(),
    )?;

    Ok(TomographyRun { histograms, frame, rho_zero, rho_full, zero_window_ps })
}

/// Curve, averages and fit for one measured sweep.
#[derive(Debug, Clone)]
pub struct AnalysisRun {
    pub curve: EntanglementCurve,
    /// Accidental floor per curve bin (summed across settings).
    pub noise_floor_per_bin: f64,
    pub max_f_phi_plus: f64,
    pub avg_f_phi_plus: f64,
    pub avg_concurrence: f64,
    pub fit: Option<FitModel>,
}

pub fn analyze(
    scenario: &Scenario,
    histograms: &[CoincidenceHistogram],
    frame: Option<&(Unitary, Unitary)>,
) -> Result<AnalysisRun> {
    let bin_width = scenario.analysis.curve_bin_width_ps;
    let curve = curve_in_frame(histograms, bin_width, frame)?;
    if curve.is_empty() {
        return Err(Error::numeric(
            "no curve bin reached the minimum coincidence count; increase n_pulses",
        ));
    }
    let noise_floor = sideband_noise_floor(histograms, bin_width)?;
    let avg_window = scenario.decay_average_window_ps();
    let avg_f_phi_plus = decay_time_average(&curve, Measure::FidelityPhiPlus, avg_window)?;
    let avg_concurrence = decay_time_average(&curve, Measure::Concurrence, avg_window)?;
    let max_f_phi_plus = curve.f_phi_plus.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let fit = if scenario.analysis.fit {
        Some(fit_fidelity(&curve, noise_floor)?)
    } else {
        None
    };
    Ok(AnalysisRun {
        curve,
        noise_floor_per_bin: noise_floor,
        max_f_phi_plus,
        avg_f_phi_plus,
        avg_concurrence,
        fit,
    })
}

/// Everything one full run computes, before serialization.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub scenario: Scenario,
    pub n_pulses: u64,
    pub streams: SimulatedStreams,
    pub tomography: TomographyRun,
    pub analysis: AnalysisRun,
}

/// Execute the full pipeline for a scenario.
pub fn run(scenario: &Scenario, n_pulses: u64) -> Result<RunOutput> {
    let streams = simulate(scenario, n_pulses)?;
    let tomography = tomograph(scenario, &streams)?;
    let analysis = analyze(scenario, &tomography.histograms, tomography.frame.as_ref())?;
    Ok(RunOutput { scenario: scenario.clone(), n_pulses, streams, tomography, analysis })
}

/// Flat numeric summary of a run (the machine-readable face of
/// `summary.txt`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario_name: String,
    pub n_pulses: u64,
    pub master_seed: u64,
    pub singles_xx: u64,
    pub singles_x: u64,
    pub singles_rate_xx_hz: f64,
    pub singles_rate_x_hz: f64,
    pub total_coincidences: f64,
    pub aligned: bool,
    pub zero_window_ps: f64,
    pub f_phi_plus_zero_window: f64,
    pub f_phi_plus_full_window: f64,
    pub concurrence_zero_window: f64,
    pub inner_diagonal_mass_zero: f64,
    pub inner_diagonal_mass_full: f64,
    pub max_f_phi_plus: f64,
    pub avg_f_phi_plus: f64,
    pub avg_concurrence: f64,
    pub noise_floor_per_bin: f64,
    pub fit: Option<FitModel>,
}

impl RunOutput {
    pub fn summary(&self) -> RunSummary {
        use crate::qmath::{bell_state, concurrence, BellState};
        let phi_plus = bell_state(BellState::PhiPlus);
        let inner = |rho: &crate::qmath::DensityMatrix| rho[(1, 1)].re + rho[(2, 2)].re;
        let total_coincidences: f64 = self
            .tomography
            .histograms
            .iter()
            .map(|h| h.total())
            .sum();
        RunSummary {
            scenario_name: self.scenario.name.clone(),
            n_pulses: self.n_pulses,
            master_seed: self.scenario.master_seed,
            singles_xx: self.streams.records_xx.len() as u64,
            singles_x: self.streams.records_x.len() as u64,
            singles_rate_xx_hz: self.streams.records_xx.len() as f64 / self.streams.duration_s,
            singles_rate_x_hz: self.streams.records_x.len() as f64 / self.streams.duration_s,
            total_coincidences,
            aligned: self.tomography.frame.is_some(),
            zero_window_ps: self.tomography.zero_window_ps,
            f_phi_plus_zero_window: fidelity_to_state(&self.tomography.rho_zero.rho, &phi_plus),
            f_phi_plus_full_window: fidelity_to_state(&self.tomography.rho_full.rho, &phi_plus),
            concurrence_zero_window: concurrence(&self.tomography.rho_zero.rho),
            inner_diagonal_mass_zero: inner(&self.tomography.rho_zero.rho),
            inner_diagonal_mass_full: inner(&self.tomography.rho_full.rho),
            max_f_phi_plus: self.analysis.max_f_phi_plus,
            avg_f_phi_plus: self.analysis.avg_f_phi_plus,
            avg_concurrence: self.analysis.avg_concurrence,
            noise_floor_per_bin: self.analysis.noise_floor_per_bin,
            fit: self.analysis.fit.clone(),
        }
    }
}

impl std::fmt::Display for RunSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "scenario            : {}", self.scenario_name)?;
        writeln!(f, "pulses              : {}", self.n_pulses)?;
        writeln!(f, "master seed         : {}", self.master_seed)?;
        writeln!(
            f,
            "singles XX / X      : {} / {}  ({:.1} / {:.1} kHz)",
            self.singles_xx,
            self.singles_x,
            self.singles_rate_xx_hz / 1e3,
            self.singles_rate_x_hz / 1e3
        )?;
        writeln!(f, "coincidences (all settings): {:.0}", self.total_coincidences)?;
        writeln!(f, "basis aligned       : {}", self.aligned)?;
        writeln!(
            f,
            "F(phi+) {:>5.1} ps window : {:.4}",
            self.zero_window_ps, self.f_phi_plus_zero_window
        )?;
        writeln!(
            f,
            "F(phi+) full period      : {:.4}",
            self.f_phi_plus_full_window
        )?;
        writeln!(
            f,
            "concurrence zero window  : {:.4}",
            self.concurrence_zero_window
        )?;
        writeln!(
            f,
            "inner diagonals zero/full: {:.4} / {:.4}",
            self.inner_diagonal_mass_zero, self.inner_diagonal_mass_full
        )?;
        writeln!(f, "max F(phi+) on curve     : {:.4}", self.max_f_phi_plus)?;
        writeln!(f, "decay-avg F(phi+)        : {:.4}", self.avg_f_phi_plus)?;
        writeln!(f, "decay-avg concurrence    : {:.4}", self.avg_concurrence)?;
        writeln!(f, "noise floor / bin        : {:.3}", self.noise_floor_per_bin)?;
        match &self.fit {
            Some(fit) => {
                writeln!(
                    f,
                    "fit: s = {:.1}±{:.1}, FSS = {:.4}±{:.4} ueV, T1 = {:.1}±{:.1} ps, v = {:.4}±{:.4} (chi2/dof = {:.3}, converged = {})",
                    fit.signal_amplitude,
                    fit.sigma_signal_amplitude,
                    fit.fss_fit_uev,
                    fit.sigma_fss_uev,
                    fit.t1_fit_ps,
                    fit.sigma_t1_ps,
                    fit.visibility,
                    fit.sigma_visibility,
                    fit.chi2_per_dof,
                    fit.converged
                )?;
            }
            None => writeln!(f, "fit: disabled")?,
        }
        Ok(())
    }
}

/// Expected-count (noise-free Monte-Carlo-free) histograms of the bare
/// cascade state: per setting and delay bin, `flux0`·decay(t)·p_setting.
/// The oracle input for closed-form checks of the analysis chain.
pub fn analytic_histograms(
    source: &SourceConfig,
    flux0: f64,
    bin_width_ps: f64,
) -> Result<Vec<CoincidenceHistogram>> {
    source.validate()?;
    if !(flux0 > 0.0) || !(bin_width_ps > 0.0) {
        return Err(Error::invalid("flux and bin width must be positive"));
    }
    let span_ps = source.t_rep_ps();
    let n_bins = (span_ps / bin_width_ps).floor() as usize;
    Ok(james_16()
        .iter()
        .map(|s| {
            let psi = s.projector();
            let bins: Vec<f64> = (0..n_bins)
                .map(|b| {
                    let t = (b as f64 + 0.5) * bin_width_ps;
                    let mut rho = cascade_density(t, &source.cascade);
                    if source.state_noise_fraction > 0.0 {
                        rho = mix_with_white_noise(&rho, source.state_noise_fraction)
                            .expect("validated fraction");
                    }
                    flux0 * (-t / source.cascade.t1_x_ps).exp() * fidelity_to_state(&rho, &psi)
                })
                .collect();
            CoincidenceHistogram {
                setting: *s,
                bin_width_ps,
                span_ps,
                bins,
                total_singles_xx: flux0 * 16.0,
                total_singles_x: flux0 * 16.0,
            }
        })
        .collect())
}
