//! Run configuration: TOML scenarios, validation, and the four shipped
//! presets.
//!
//! A scenario bundles everything a reproducible run needs — source,
//! per-arm channel stages, detectors, tomography and analysis options,
//! and the master seed. Keys carry their units in the name (`loss_db`,
//! `irf_fwhm_ps`, …); a config with unknown keys is rejected rather than
//! silently ignored, because a typo like `loss_dB` must not turn a lossy
//! link into a lossless one.
//!
//! Presets additionally carry a `[physical]` rate-budget block: the
//! measured singles rates of the experiment each preset models, together
//! with the per-stage multiplicative factors that connect them. The
//! budget is pure documentation arithmetic — the simulation itself runs
//! with boosted arm transmissions so that a 10⁷-pulse run produces
//! tomography-grade statistics in minutes, while the budget records what
//! the real link does and is checked for internal consistency at load
//! time.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::cascade::{DetectorConfig, SourceConfig};
use crate::channel::{DriftModel, FilterStage, LossStage, QfcDirection, QfcStage};
use crate::qmath::CascadeParams;
use crate::{Error, Result};

/// Predicted-vs-measured tolerance factor for the `[physical]` budget.
pub const RATE_BUDGET_TOLERANCE: f64 = 1.3;

/// Which detection arm a channel stage acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageArm {
    Xx,
    X,
    Both,
}

/// One channel stage, tagged by `kind` in the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelStage {
    Loss(LossStage),
    Qfc(QfcStage),
    Drift(DriftModel),
    Filter(FilterStage),
}

impl ChannelStage {
    pub fn validate(&self) -> Result<()> {
        match self {
            ChannelStage::Loss(s) => s.validate(),
            ChannelStage::Qfc(s) => s.validate(),
            ChannelStage::Drift(s) => s.validate(),
            ChannelStage::Filter(s) => s.validate(),
        }
    }

    fn kind_name(&self) -> &'static str {
        match self {
            ChannelStage::Loss(_) => "loss",
            ChannelStage::Qfc(_) => "qfc",
            ChannelStage::Drift(_) => "drift",
            ChannelStage::Filter(_) => "filter",
        }
    }
}

/// A stage bound to the arm(s) it acts on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmStage {
    pub arm: StageArm,
    #[serde(flatten)]
    pub stage: ChannelStage,
}

/// Which projective measurement set the tomography sweep uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SettingsSet {
    #[default]
    James16,
    Full36,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TomographyOptions {
    /// Histogram bin width, ps.
    pub bin_width_ps: f64,
    /// Maximum XX–X pairing separation, ps (defaults to the repetition
    /// period: every X photon is attributed to the nearest preceding
    /// pulse's XX photon if one exists).
    pub coincidence_window_ps: Option<f64>,
    pub settings: SettingsSet,
    /// Run the polarization-basis alignment search before reconstruction
    /// (needed when the channel contains drift).
    pub align_basis: bool,
}

impl Default for TomographyOptions {
    fn default() -> Self {
        TomographyOptions {
            bin_width_ps: 8.0,
            coincidence_window_ps: None,
            settings: SettingsSet::James16,
            align_basis: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisOptions {
    /// Width of the zero-delay reconstruction window, ps.
    pub zero_delay_window_ps: f64,
    /// Curve bin width, ps (integer multiple of the histogram binning).
    pub curve_bin_width_ps: f64,
    /// Decay-time averaging window, ps (defaults to the exciton lifetime).
    pub decay_average_window_ps: Option<f64>,
    /// Fit the SNR-damped oscillation model to the fidelity curve.
    pub fit: bool,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            zero_delay_window_ps: 8.0,
            curve_bin_width_ps: 8.0,
            decay_average_window_ps: None,
            fit: true,
        }
    }
}

/// One multiplicative entry of the analytic rate budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetEntry {
    pub label: String,
    pub factor: f64,
}

/// Documented rate arithmetic for the experiment a preset models: the
/// measured rate entering the scenario's distinctive chain, the per-stage
/// factors, and the measured output rate the product must reproduce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateBudget {
    /// Detected rate entering the chain, kHz.
    pub input_rate_khz: f64,
    #[serde(default)]
    pub stage_factors: Vec<BudgetEntry>,
    /// Measured detected rate after the chain, kHz.
    pub measured_rate_khz: f64,
}

impl RateBudget {
    pub fn predicted_rate_khz(&self) -> f64 {
        self.stage_factors
            .iter()
            .fold(self.input_rate_khz, |r, e| r * e.factor)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.input_rate_khz > 0.0) || !(self.measured_rate_khz > 0.0) {
            return Err(Error::invalid("physical: rates must be positive"));
        }
        for e in &self.stage_factors {
            if !(e.factor > 0.0) || !e.factor.is_finite() {
                return Err(Error::invalid(format!(
                    "physical: stage factor '{}' must be positive, got {}",
                    e.label, e.factor
                )));
            }
        }
        let ratio = self.predicted_rate_khz() / self.measured_rate_khz;
        if !(1.0 / RATE_BUDGET_TOLERANCE..=RATE_BUDGET_TOLERANCE).contains(&ratio) {
            return Err(Error::invalid(format!(
                "physical: predicted rate {:.3} kHz disagrees with measured {:.3} kHz by more than a factor {RATE_BUDGET_TOLERANCE}",
                self.predicted_rate_khz(),
                self.measured_rate_khz
            )));
        }
        Ok(())
    }
}

/// Complete run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub master_seed: u64,
    pub source: SourceConfig,
    #[serde(default)]
    pub stages: Vec<ArmStage>,
    pub detector_xx: DetectorConfig,
    pub detector_x: DetectorConfig,
    #[serde(default)]
    pub tomography: TomographyOptions,
    #[serde(default)]
    pub analysis: AnalysisOptions,
    #[serde(default)]
    pub physical: Option<RateBudget>,
}

/// TOML integers are signed 64-bit, so seeds beyond `i64::MAX` would not
/// survive the config round trip; reject them up front.
fn check_config_seed(label: &str, seed: u64) -> Result<()> {
    if seed > i64::MAX as u64 {
        return Err(Error::invalid(format!(
            "{label} = {seed} does not fit a TOML integer (maximum {})",
            i64::MAX
        )));
    }
    Ok(())
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::invalid("scenario name must not be empty"));
        }
        check_config_seed("master_seed", self.master_seed)?;
        check_config_seed("source.seed", self.source.seed)?;
        self.source.validate()?;
        self.detector_xx.validate()?;
        self.detector_x.validate()?;
        let mut drift_arms = Vec::new();
        for (i, s) in self.stages.iter().enumerate() {
            s.stage
                .validate()
                .map_err(|e| Error::invalid(format!("stages[{i}] ({}): {e}", s.stage.kind_name())))?;
            if let ChannelStage::Drift(d) = &s.stage {
                check_config_seed(&format!("stages[{i}].seed"), d.seed)?;
                if s.arm == StageArm::Both {
                    return Err(Error::invalid(format!(
                        "stages[{i}]: drift acts per fiber; configure one drift stage per arm"
                    )));
                }
                if drift_arms.contains(&s.arm) {
                    return Err(Error::invalid(format!(
                        "stages[{i}]: at most one drift stage per arm"
                    )));
                }
                drift_arms.push(s.arm);
            }
        }
        let t = &self.tomography;
        if !(t.bin_width_ps > 0.0) {
            return Err(Error::invalid("tomography.bin_width_ps must be positive"));
        }
        if let Some(w) = t.coincidence_window_ps {
            if !(w > 0.0) {
                return Err(Error::invalid("tomography.coincidence_window_ps must be positive"));
            }
        }
        let a = &self.analysis;
        if !(a.zero_delay_window_ps > 0.0) {
            return Err(Error::invalid("analysis.zero_delay_window_ps must be positive"));
        }
        let ratio = a.curve_bin_width_ps / t.bin_width_ps;
        if !(ratio >= 1.0) || (ratio - ratio.round()).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "analysis.curve_bin_width_ps = {} must be an integer multiple of tomography.bin_width_ps = {}",
                a.curve_bin_width_ps, t.bin_width_ps
            )));
        }
        if let Some(w) = a.decay_average_window_ps {
            if !(w > 0.0) {
                return Err(Error::invalid("analysis.decay_average_window_ps must be positive"));
            }
        }
        if let Some(b) = &self.physical {
            b.validate()?;
        }
        Ok(())
    }

    /// Effective coincidence pairing window, ps.
    pub fn coincidence_window_ps(&self) -> f64 {
        self.tomography
            .coincidence_window_ps
            .unwrap_or_else(|| self.source.t_rep_ps())
    }

    /// Effective decay-time averaging window, ps.
    pub fn decay_average_window_ps(&self) -> f64 {
        self.analysis
            .decay_average_window_ps
            .unwrap_or(self.source.cascade.t1_x_ps)
    }

    pub fn from_toml_str(text: &str) -> Result<Scenario> {
        let sc: Scenario = toml::from_str(text)
            .map_err(|e| Error::invalid(format!("scenario config: {e}")))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("reading {}: {e}", path.display()),
            ))
        })?;
        Scenario::from_toml_str(&text)
            .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
    }

    /// Interpret a CLI `--scenario` argument: a shipped preset name, or a
    /// path to a TOML file.
    pub fn resolve(spec: &str) -> Result<Scenario> {
        if preset_names().contains(&spec) {
            return preset(spec);
        }
        let path = Path::new(spec);
        if path.exists() {
            return Scenario::load(path);
        }
        Err(Error::invalid(format!(
            "'{spec}' is neither a preset ({}) nor an existing config file",
            preset_names().join(", ")
        )))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::invalid(format!("serializing scenario: {e}")))
    }
}

pub fn preset_names() -> Vec<&'static str> {
    vec!["initial", "qfc", "city_loop", "back_conversion"]
}

/// Build one of the shipped presets.
pub fn preset(name: &str) -> Result<Scenario> {
    let sc = match name {
        "initial" => initial(),
        "qfc" => qfc(),
        "city_loop" => city_loop(),
        "back_conversion" => back_conversion(),
        other => {
            return Err(Error::invalid(format!(
                "unknown preset '{other}'; available: {}",
                preset_names().join(", ")
            )))
        }
    };
    sc.validate()?;
    Ok(sc)
}

fn qd_source() -> SourceConfig {
    SourceConfig {
        excitation_rate_mhz: 305.0,
        pair_probability_per_pulse: 0.9,
        state_noise_fraction: 0.024,
        cascade: CascadeParams {
            fss_uev: 2.1,
            t1_x_ps: 171.0,
            t1_xx_ps: 120.0,
            t_rep_ns: 1000.0 / 305.0,
        },
        seed: 0,
    }
}

fn qd_detector() -> DetectorConfig {
    DetectorConfig {
        irf_fwhm_ps: 58.0,
        efficiency: 0.85,
        dark_rate_hz: 100.0,
    }
}

fn loss(arm: StageArm, db: f64) -> ArmStage {
    ArmStage { arm, stage: ChannelStage::Loss(LossStage { loss_db: db }) }
}

/// Source benchmark: tomography directly on the as-generated pair.
///
/// Calibration: the measured singles (507/450 kHz at 305 MHz with 85%
/// detectors) imply end-to-end extraction·coupling probabilities of
/// ~2.0·10⁻³ per arm — rates at which a 10⁷-pulse run would see a few
/// dozen coincidences, and the 8 ps zero-delay window none at all. The
/// simulated couplings are therefore boosted to 6 dB (XX) / 6.5 dB (X,
/// reflecting the measured arm asymmetry), which puts ~3·10⁴ counts into
/// the zero-delay window at 10⁷ pulses; the `[physical]` block keeps the
/// real numbers. The 2.4% white-noise admixture reproduces the measured
/// peak fidelity of ~0.974 and decay-averaged concurrence of ~0.954.
fn initial() -> Scenario {
    Scenario {
        name: "initial".into(),
        master_seed: 1,
        source: qd_source(),
        stages: vec![loss(StageArm::Xx, 6.0), loss(StageArm::X, 6.5)],
        detector_xx: qd_detector(),
        detector_x: qd_detector(),
        tomography: TomographyOptions::default(),
        analysis: AnalysisOptions::default(),
        physical: Some(RateBudget {
            input_rate_khz: 305_000.0,
            stage_factors: vec![BudgetEntry {
                label: "pair generation, XX fiber coupling and detection per pulse".into(),
                factor: 1.662e-3,
            }],
            measured_rate_khz: 507.0,
        }),
    }
}

/// One-way frequency conversion of the XX photon to 1515 nm.
///
/// Calibration: measured 507 kHz → 44 kHz across the conversion chain
/// (external device efficiency, telecom recoupling and the detector
/// change) gives the 0.087 budget factor. The simulation applies a
/// boosted 0.45 conversion efficiency on top of the shared couplings;
/// the converter's pump-induced background is small at this stage (the
/// measured fidelity barely moves: 0.974 → 0.972).
fn qfc() -> Scenario {
    let mut sc = initial();
    sc.name = "qfc".into();
    sc.master_seed = 2;
    sc.stages.push(ArmStage {
        arm: StageArm::Xx,
        stage: ChannelStage::Qfc(QfcStage {
            efficiency: 0.45,
            noise_rate_hz: 1.5e3,
            direction: QfcDirection::Down,
        }),
    });
    sc.physical = Some(RateBudget {
        input_rate_khz: 507.0,
        stage_factors: vec![BudgetEntry {
            label: "QFC unit: external conversion efficiency, telecom recoupling, detector change".into(),
            factor: 0.087,
        }],
        measured_rate_khz: 44.0,
    });
    sc
}

/// Converted photon sent around the deployed 35.8 km intra-city loop.
///
/// Calibration: the loop itself is taken at face value — 14.4 dB — and
/// the budget check reproduces the measured 1.35 kHz from the 44 kHz
/// input within the documented factor-1.3 band (fixed connectors and
/// splices are not itemized). To keep tomography statistics after 14.4 dB
/// the shared couplings are raised to 3 dB for this preset. Polarization
/// drift of the deployed fiber is modelled with the correlation time
/// compressed to the simulated wall clock (a 10⁷-pulse acquisition spans
/// ~0.5 s of simulated time versus hours in the field), and the basis
/// alignment search is enabled as in the experiment.
fn city_loop() -> Scenario {
    let mut sc = qfc();
    sc.name = "city_loop".into();
    sc.master_seed = 3;
    sc.stages = vec![loss(StageArm::Xx, 3.0), loss(StageArm::X, 3.0)];
    sc.stages.push(ArmStage {
        arm: StageArm::Xx,
        stage: ChannelStage::Qfc(QfcStage {
            efficiency: 0.45,
            noise_rate_hz: 1.5e3,
            direction: QfcDirection::Down,
        }),
    });
    sc.stages.push(loss(StageArm::Xx, 14.4));
    sc.stages.push(ArmStage {
        arm: StageArm::Xx,
        stage: ChannelStage::Drift(DriftModel {
            correlation_time_h: 1e-5,
            step_angle_rms_rad: 0.022,
            seed: 0,
        }),
    });
    sc.tomography.align_basis = true;
    sc.physical = Some(RateBudget {
        input_rate_khz: 44.0,
        stage_factors: vec![BudgetEntry {
            label: "35.8 km deployed fiber loop, 14.4 dB".into(),
            factor: 10f64.powf(-1.44),
        }],
        measured_rate_khz: 1.35,
    });
    sc
}

/// Second converter bringing the telecom photon back to 780 nm, with the
/// 0.9 GHz etalon suppressing pump-SHG Raman noise.
///
/// Calibration: the etalon passes 0.9/5.6 of the inhomogeneously
/// broadened line; solving 44 kHz → 5.1 kHz for the remaining factor
/// gives a back-conversion efficiency of 0.72, which the simulation uses
/// directly. The Raman background entering at 780 nm is the dominant
/// noise here. Signal rates in this preset are coupling-boosted
/// (quadratically in the arm transmissions) while a background rate is
/// only linear in them, so the Raman rate is scaled up with the boost to
/// preserve the experiment's in-window signal-to-noise; the value is set
/// so the zero-delay fidelity lands at the measured ~0.90.
fn back_conversion() -> Scenario {
    let mut sc = qfc();
    sc.name = "back_conversion".into();
    sc.master_seed = 104;
    sc.stages = vec![loss(StageArm::Xx, 1.5), loss(StageArm::X, 1.5)];
    sc.stages.push(ArmStage {
        arm: StageArm::Xx,
        stage: ChannelStage::Qfc(QfcStage {
            efficiency: 0.45,
            noise_rate_hz: 1.5e3,
            direction: QfcDirection::Down,
        }),
    });
    sc.stages.push(ArmStage {
        arm: StageArm::Xx,
        stage: ChannelStage::Qfc(QfcStage {
            efficiency: 0.72,
            noise_rate_hz: 2.0e7,
            direction: QfcDirection::Up,
        }),
    });
    sc.stages.push(ArmStage {
        arm: StageArm::Xx,
        stage: ChannelStage::Filter(FilterStage {
            bandwidth_ghz: 0.9,
            inhomogeneous_linewidth_ghz: 5.6,
        }),
    });
    sc.physical = Some(RateBudget {
        input_rate_khz: 44.0,
        stage_factors: vec![
            BudgetEntry {
                label: "back-conversion efficiency (solved from end-to-end rate)".into(),
                factor: 0.72,
            },
            BudgetEntry {
                label: "0.9 GHz etalon clipping the 5.6 GHz inhomogeneous line".into(),
                factor: 0.9 / 5.6,
            },
        ],
        measured_rate_khz: 5.1,
    });
    sc
}

/// JSON schema of the scenario file, for external validation tooling.
pub fn json_schema() -> serde_json::Value {
    let positive = |desc: &str| json!({"type": "number", "exclusiveMinimum": 0, "description": desc});
    let non_negative = |desc: &str| json!({"type": "number", "minimum": 0, "description": desc});
    let fraction = |desc: &str| json!({"type": "number", "minimum": 0, "maximum": 1, "description": desc});
    json!({
        "$schema": "http://json-schema.org/draft-07/schema#",
        "title": "Scenario",
        "type": "object",
        "required": ["name", "source", "detector_xx", "detector_x"],
        "additionalProperties": false,
        "properties": {
            "name": {"type": "string"},
            "master_seed": {"type": "integer", "minimum": 0},
            "source": {
                "type": "object",
                "required": ["excitation_rate_mhz", "pair_probability_per_pulse", "cascade"],
                "additionalProperties": false,
                "properties": {
                    "excitation_rate_mhz": positive("laser repetition rate, MHz"),
                    "pair_probability_per_pulse": fraction("probability a pulse yields a pair"),
                    "state_noise_fraction": fraction("white-noise admixture of the emitted state"),
                    "seed": {"type": "integer", "minimum": 0},
                    "cascade": {
                        "type": "object",
                        "required": ["fss_uev", "t1_x_ps", "t1_xx_ps", "t_rep_ns"],
                        "additionalProperties": false,
                        "properties": {
                            "fss_uev": positive("exciton fine-structure splitting, µeV"),
                            "t1_x_ps": positive("exciton lifetime, ps"),
                            "t1_xx_ps": positive("biexciton lifetime, ps"),
                            "t_rep_ns": positive("repetition period, ns (must equal 1e3/excitation_rate_mhz)")
                        }
                    }
                }
            },
            "stages": {
                "type": "array",
                "items": {
                    "type": "object",
                    "required": ["arm", "kind"],
                    "properties": {
                        "arm": {"enum": ["xx", "x", "both"]},
                        "kind": {"enum": ["loss", "qfc", "drift", "filter"]},
                        "loss_db": non_negative("broadband attenuation, dB (kind = loss)"),
                        "efficiency": fraction("conversion efficiency (kind = qfc)"),
                        "noise_rate_hz": non_negative("converter background rate, Hz (kind = qfc)"),
                        "direction": {"enum": ["down", "up"], "description": "kind = qfc"},
                        "correlation_time_h": positive("drift correlation time, hours (kind = drift)"),
                        "step_angle_rms_rad": non_negative("RMS rotation per drift step, rad (kind = drift)"),
                        "seed": {"type": "integer", "minimum": 0, "description": "kind = drift"},
                        "bandwidth_ghz": positive("filter bandwidth, GHz (kind = filter)"),
                        "inhomogeneous_linewidth_ghz": positive("source linewidth, GHz (kind = filter)")
                    }
                }
            },
            "detector_xx": detector_schema(),
            "detector_x": detector_schema(),
            "tomography": {
                "type": "object",
                "additionalProperties": false,
                "properties": {
                    "bin_width_ps": positive("histogram bin width, ps"),
                    "coincidence_window_ps": positive("max XX–X pairing separation, ps"),
                    "settings": {"enum": ["james16", "full36"]},
                    "align_basis": {"type": "boolean"}
                }
            },
            "analysis": {
                "type": "object",
                "additionalProperties": false,
                "properties": {
                    "zero_delay_window_ps": positive("zero-delay window width, ps"),
                    "curve_bin_width_ps": positive("curve bin width, ps (multiple of bin_width_ps)"),
                    "decay_average_window_ps": positive("averaging window, ps"),
                    "fit": {"type": "boolean"}
                }
            },
            "physical": {
                "type": "object",
                "required": ["input_rate_khz", "measured_rate_khz"],
                "additionalProperties": false,
                "properties": {
                    "input_rate_khz": positive("detected rate entering the chain, kHz"),
                    "measured_rate_khz": positive("measured rate after the chain, kHz"),
                    "stage_factors": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["label", "factor"],
                            "additionalProperties": false,
                            "properties": {
                                "label": {"type": "string"},
                                "factor": positive("multiplicative rate factor")
                            }
                        }
                    }
                }
            }
        }
    })
}

fn detector_schema() -> serde_json::Value {
    json!({
        "type": "object",
        "required": ["irf_fwhm_ps", "efficiency", "dark_rate_hz"],
        "additionalProperties": false,
        "properties": {
            "irf_fwhm_ps": {"type": "number", "minimum": 0, "description": "Gaussian IRF FWHM, ps"},
            "efficiency": {"type": "number", "minimum": 0, "maximum": 1},
            "dark_rate_hz": {"type": "number", "minimum": 0}
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_build_and_validate() {
        for name in preset_names() {
            let sc = preset(name).unwrap();
            assert_eq!(sc.name, name);
            sc.validate().unwrap();
            // Budget arithmetic is internally consistent for every preset.
            let b = sc.physical.as_ref().expect("presets document their budget");
            let ratio = b.predicted_rate_khz() / b.measured_rate_khz;
            assert!((1.0 / RATE_BUDGET_TOLERANCE..=RATE_BUDGET_TOLERANCE).contains(&ratio));
        }
        assert_eq!(preset("unknown").unwrap_err().exit_code(), 2);
    }

    #[test]
    fn loop_budget_reproduces_the_documented_attenuation_arithmetic() {
        let sc = preset("city_loop").unwrap();
        let b = sc.physical.unwrap();
        // 44 kHz · 10^(−1.44) ≈ 1.6 kHz, within a factor 1.3 of 1.35 kHz.
        assert!((b.predicted_rate_khz() - 44.0 * 10f64.powf(-1.44)).abs() < 1e-9);
        assert!(b.predicted_rate_khz() / b.measured_rate_khz < 1.3);
    }

    #[test]
    fn toml_round_trip_preserves_the_scenario() {
        for name in preset_names() {
            let sc = preset(name).unwrap();
            let text = sc.to_toml().unwrap();
            let back = Scenario::from_toml_str(&text).unwrap();
            assert_eq!(sc, back, "round trip of preset {name}");
        }
    }

    #[test]
    fn seeds_beyond_the_toml_integer_range_are_rejected() {
        let mut sc = preset("initial").unwrap();
        sc.master_seed = i64::MAX as u64;
        sc.validate().unwrap();

        sc.master_seed = i64::MAX as u64 + 1;
        let err = sc.validate().unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("master_seed"), "{err}");

        let mut sc = preset("initial").unwrap();
        sc.source.seed = u64::MAX;
        assert!(sc.validate().unwrap_err().to_string().contains("source.seed"));
    }

    #[test]
    fn unknown_keys_are_rejected_with_diagnostics() {
        let mut text = preset("initial").unwrap().to_toml().unwrap();
        text.push_str("\nloss_dB = 3.0\n");
        let err = Scenario::from_toml_str(&text).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("loss_dB"), "diagnostic names the key: {err}");
    }

    #[test]
    fn stage_fields_are_validated_in_context() {
        let mut sc = preset("initial").unwrap();
        sc.stages.push(ArmStage {
            arm: StageArm::X,
            stage: ChannelStage::Loss(LossStage { loss_db: -3.0 }),
        });
        let err = sc.validate().unwrap_err();
        assert!(err.to_string().contains("stages[2]"), "{err}");

        let mut sc = preset("initial").unwrap();
        sc.stages.push(ArmStage {
            arm: StageArm::Both,
            stage: ChannelStage::Drift(DriftModel {
                correlation_time_h: 1.0,
                step_angle_rms_rad: 0.1,
                seed: 0,
            }),
        });
        assert!(sc.validate().is_err());
    }

    #[test]
    fn inconsistent_repetition_period_is_rejected() {
        let mut sc = preset("initial").unwrap();
        sc.source.cascade.t_rep_ns = 3.0;
        assert_eq!(sc.validate().unwrap_err().exit_code(), 2);
    }

    #[test]
    fn mismatched_budget_is_rejected() {
        let mut sc = preset("city_loop").unwrap();
        if let Some(b) = sc.physical.as_mut() {
            b.measured_rate_khz = 10.0;
        }
        assert_eq!(sc.validate().unwrap_err().exit_code(), 2);
    }

    #[test]
    fn curve_binning_must_refine_the_histogram_binning() {
        let mut sc = preset("initial").unwrap();
        sc.analysis.curve_bin_width_ps = 12.0;
        assert!(sc.validate().is_err());
        sc.analysis.curve_bin_width_ps = 16.0;
        sc.validate().unwrap();
        sc.analysis.curve_bin_width_ps = 4.0;
        assert!(sc.validate().is_err());
    }

    #[test]
    fn resolve_accepts_presets_and_paths() {
        assert_eq!(Scenario::resolve("qfc").unwrap().name, "qfc");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("custom.toml");
        let mut sc = preset("initial").unwrap();
        sc.name = "custom".into();
        std::fs::write(&path, sc.to_toml().unwrap()).unwrap();
        assert_eq!(Scenario::resolve(path.to_str().unwrap()).unwrap().name, "custom");
        assert_eq!(Scenario::resolve("no_such_thing").unwrap_err().exit_code(), 2);
    }

    #[test]
    fn schema_is_valid_json_and_names_the_unit_keys() {
        let schema = json_schema();
        let text = serde_json::to_string(&schema).unwrap();
        for key in ["loss_db", "irf_fwhm_ps", "fss_uev", "bandwidth_ghz", "noise_rate_hz"] {
            assert!(text.contains(key), "schema should document {key}");
        }
    }
}
