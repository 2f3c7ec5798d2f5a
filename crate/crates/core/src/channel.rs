//! Photonic link stages acting on detection-record streams: fiber loss,
//! quantum frequency conversion (efficiency + background at the target
//! wavelength), slow polarization drift, and spectral-filter temporal
//! reshaping.
//!
//! Stages are stream transformers: they thin, displace or extend a
//! time-sorted record list and return it time-sorted again. Polarization
//! is *not* carried on the records — the pair state lives in the source
//! lookup (see `tomography`) — so loss-like stages cannot corrupt it by
//! construction; the drift stage exposes its unitary for the projection
//! step instead of mutating records.

use nalgebra::Matrix2;
use num_complex::Complex;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cascade::{append_poisson_noise, sort_records, Arm, DetectionRecord, Origin};
use crate::qmath::Unitary;
use crate::rng::{stream, Domain};
use crate::{Error, Result};

/// Broadband fiber/coupling loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossStage {
    pub loss_db: f64,
}

impl LossStage {
    pub fn validate(&self) -> Result<()> {
        if !(self.loss_db >= 0.0) {
            return Err(Error::invalid("loss_db must be non-negative"));
        }
        Ok(())
    }

    /// Transmission 10^(−dB/10).
    pub fn transmission(&self) -> f64 {
        10f64.powf(-self.loss_db / 10.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QfcDirection {
    /// 780 nm → 1515 nm telecom conversion.
    Down,
    /// 1515 nm → 780 nm back-conversion.
    Up,
}

/// Polarization-preserving quantum frequency converter: thins signal by
/// the external device efficiency and injects pump-induced background
/// photons directly at the target wavelength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QfcStage {
    pub efficiency: f64,
    /// Detected background rate attributable to the converter, Hz.
    pub noise_rate_hz: f64,
    pub direction: QfcDirection,
}

impl QfcStage {
    pub fn validate(&self) -> Result<()> {
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(Error::invalid("QFC efficiency must lie in (0,1]"));
        }
        if self.noise_rate_hz < 0.0 {
            return Err(Error::invalid("QFC noise_rate_hz must be non-negative"));
        }
        Ok(())
    }
}

/// Slow stochastic polarization rotation of a deployed fiber.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftModel {
    /// Correlation time of the drift, hours (default half a day).
    pub correlation_time_h: f64,
    /// RMS rotation angle per step, radians.
    pub step_angle_rms_rad: f64,
    #[serde(default)]
    pub seed: u64,
}

impl DriftModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.correlation_time_h > 0.0) {
            return Err(Error::invalid("correlation_time_h must be positive"));
        }
        if self.step_angle_rms_rad < 0.0 {
            return Err(Error::invalid("step_angle_rms_rad must be non-negative"));
        }
        Ok(())
    }

    /// Step interval: the walk advances every correlation_time/100.
    pub fn step_interval_s(&self) -> f64 {
        self.correlation_time_h * 3600.0 / 100.0
    }
}

/// Narrow spectral filter (etalon), modelled purely in the time domain:
/// a two-sided exponential impulse response of time constant 1/(2πΔν)
/// convolves the arrival times, and clipping the inhomogeneously
/// broadened emission line costs throughput ≈ Δν/ν_inhomo.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterStage {
    pub bandwidth_ghz: f64,
    /// Inhomogeneous linewidth of the source ensemble, GHz.
    pub inhomogeneous_linewidth_ghz: f64,
}

/// Bandwidths at or above this are treated as all-pass (no temporal
/// reshaping; kernel width would be below 0.02 ps).
pub const FILTER_PASSTHROUGH_GHZ: f64 = 1e4;

impl FilterStage {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth_ghz > 0.0) {
            return Err(Error::invalid("filter bandwidth_ghz must be positive"));
        }
        if !(self.inhomogeneous_linewidth_ghz > 0.0) {
            return Err(Error::invalid("inhomogeneous_linewidth_ghz must be positive"));
        }
        Ok(())
    }

    /// Exponential kernel time constant 1/(2πΔν), ps.
    pub fn time_constant_ps(&self) -> f64 {
        1e3 / (2.0 * std::f64::consts::PI * self.bandwidth_ghz)
    }

    /// Survival probability min(1, Δν/ν_inhomo).
    pub fn throughput(&self) -> f64 {
        (self.bandwidth_ghz / self.inhomogeneous_linewidth_ghz).min(1.0)
    }
}

/// Thin a stream by a loss stage; each record survives independently with
/// the stage transmission.
pub fn attenuate(
    records: Vec<DetectionRecord>,
    stage: &LossStage,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<DetectionRecord>> {
    stage.validate()?;
    let t = stage.transmission();
    if t >= 1.0 {
        return Ok(records);
    }
    Ok(records
        .into_iter()
        .filter(|_| rng.gen::<f64>() < t)
        .collect())
}

/// Frequency-convert a stream: signal thinned by device efficiency,
/// polarization untouched (records carry none; the state lookup is keyed
/// by pulse index which survives unchanged), Poisson background injected
/// with origin [`Origin::ChannelNoise`].
pub fn apply_qfc(
    records: Vec<DetectionRecord>,
    stage: &QfcStage,
    arm: Arm,
    duration_s: f64,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<DetectionRecord>> {
    stage.validate()?;
    let mut out: Vec<DetectionRecord> = records
        .into_iter()
        .filter(|_| stage.efficiency >= 1.0 || rng.gen::<f64>() < stage.efficiency)
        .collect();
    append_poisson_noise(&mut out, arm, Origin::ChannelNoise, stage.noise_rate_hz, duration_s, rng);
    sort_records(&mut out);
    Ok(out)
}

/// The drift unitary at wall-clock time `at_time_s`: a piecewise-constant
/// random walk on SU(2) advancing every `correlation_time/100`, each step
/// a rotation by N(0, step_angle_rms) about a uniformly random axis.
/// U(0) = identity; the value is a pure function of `(model, at_time_s)`.
pub fn drift_unitary(at_time_s: f64, model: &DriftModel) -> Unitary {
    let steps = steps_elapsed(at_time_s, model);
    let mut rng = stream(model.seed, Domain::Drift, 0);
    let mut u = Matrix2::identity();
    for _ in 0..steps {
        u = draw_step(model, &mut rng) * u;
    }
    u
}

fn steps_elapsed(at_time_s: f64, model: &DriftModel) -> u64 {
    debug_assert!(at_time_s >= 0.0);
    (at_time_s / model.step_interval_s()) as u64
}

fn draw_step(model: &DriftModel, rng: &mut ChaCha12Rng) -> Unitary {
    // Uniform axis (Marsaglia), Gaussian angle. Draw order frozen.
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let (mut x, mut y, mut z): (f64, f64, f64);
    loop {
        x = normal.sample(rng);
        y = normal.sample(rng);
        z = normal.sample(rng);
        let r2 = x * x + y * y + z * z;
        if r2 > 1e-12 {
            let r = r2.sqrt();
            x /= r;
            y /= r;
            z /= r;
            break;
        }
    }
    let theta = if model.step_angle_rms_rad > 0.0 {
        normal.sample(rng) * model.step_angle_rms_rad
    } else {
        // Consume the draw so the walk shape is angle-independent.
        let _ = normal.sample(rng);
        0.0
    };
    su2_rotation(x, y, z, theta)
}

/// exp(−i θ/2 n̂·σ).
fn su2_rotation(nx: f64, ny: f64, nz: f64, theta: f64) -> Unitary {
    let c = (theta / 2.0).cos();
    let s = (theta / 2.0).sin();
    Matrix2::new(
        Complex::new(c, -s * nz),
        Complex::new(-s * ny, -s * nx),
        Complex::new(s * ny, -s * nx),
        Complex::new(c, s * nz),
    )
}

/// Precomputed cumulative drift walk for fast per-record evaluation.
#[derive(Debug, Clone)]
pub struct DriftTable {
    step_interval_s: f64,
    /// Cumulative unitaries; entry k applies to times in step k.
    table: Vec<Unitary>,
}

impl DriftTable {
    /// Tabulate the walk of `model` out to `max_time_s`.
    pub fn new(model: &DriftModel, max_time_s: f64) -> Result<Self> {
        model.validate()?;
        let steps = steps_elapsed(max_time_s.max(0.0), model);
        let mut rng = stream(model.seed, Domain::Drift, 0);
        let mut table = Vec::with_capacity(steps as usize + 1);
        let mut u: Unitary = Matrix2::identity();
        table.push(u);
        for _ in 0..steps {
            u = draw_step(model, &mut rng) * u;
            table.push(u);
        }
        Ok(DriftTable {
            step_interval_s: model.step_interval_s(),
            table,
        })
    }

    /// Identity table (no drift stage configured).
    pub fn identity() -> Self {
        DriftTable {
            step_interval_s: f64::INFINITY,
            table: vec![Matrix2::identity()],
        }
    }

    pub fn at(&self, at_time_s: f64) -> &Unitary {
        let k = ((at_time_s / self.step_interval_s) as usize).min(self.table.len() - 1);
        &self.table[k]
    }
}

/// Temporal reshaping by a narrow filter: each surviving timestamp gains a
/// two-sided (Laplace) exponential displacement of scale 1/(2πΔν); records
/// are additionally thinned by the line-clipping throughput factor.
pub fn filter_reshape(
    records: Vec<DetectionRecord>,
    stage: &FilterStage,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<DetectionRecord>> {
    stage.validate()?;
    let throughput = stage.throughput();
    if stage.bandwidth_ghz >= FILTER_PASSTHROUGH_GHZ {
        // All-pass limit: no measurable reshaping.
        if throughput >= 1.0 {
            return Ok(records);
        }
        let mut out: Vec<DetectionRecord> = records
            .into_iter()
            .filter(|_| rng.gen::<f64>() < throughput)
            .collect();
        sort_records(&mut out);
        return Ok(out);
    }
    let b = stage.time_constant_ps();
    let mut out: Vec<DetectionRecord> = Vec::with_capacity(records.len());
    for mut r in records {
        if throughput < 1.0 && rng.gen::<f64>() >= throughput {
            continue;
        }
        // Inverse-CDF Laplace sample from one uniform draw.
        let u: f64 = rng.gen::<f64>() - 0.5;
        let d = -b * u.signum() * (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln();
        r.timestamp_ps += d;
        out.push(r);
    }
    sort_records(&mut out);
    Ok(out)
}
