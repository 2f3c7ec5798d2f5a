//! Monte-Carlo generation of time-tagged photon-pair emission and
//! detection events for a pulsed two-photon-excitation source.
//!
//! Emission sampling is keyed *per pulse*: every pulse owns a generator
//! derived from `(seed, pulse index)`, so a pulse range can be generated
//! in any partitioning — or an individual pulse re-derived in isolation —
//! with bit-identical results. At most one pair is emitted per pulse
//! (two-photon excitation at π-pulse acts as a deterministic trigger;
//! re-excitation is out of scope).

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::qmath::CascadeParams;
use crate::rng::{stream, Domain};
use crate::{Error, Result};

/// Pulsed entangled-pair source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceConfig {
    /// Excitation (laser repetition) rate, MHz.
    pub excitation_rate_mhz: f64,
    /// Probability that a pulse yields a photon pair.
    pub pair_probability_per_pulse: f64,
    /// White-noise admixture of the emitted two-photon state: the pair is
    /// born in (1−p)·|ψ(t)⟩⟨ψ(t)| + p·I/4. Lumps together everything that
    /// degrades the as-generated state (re-excitation residue, spin
    /// scattering, multi-photon events) without modelling each mechanism.
    #[serde(default)]
    pub state_noise_fraction: f64,
    pub cascade: CascadeParams,
    /// Seed for emission sampling; derived from the run master seed when
    /// executed through a scenario.
    #[serde(default)]
    pub seed: u64,
}

impl SourceConfig {
    pub fn validate(&self) -> Result<()> {
        self.cascade.validate()?;
        if !(self.excitation_rate_mhz > 0.0) {
            return Err(Error::invalid("excitation_rate_mhz must be positive"));
        }
        if !(0.0..=1.0).contains(&self.pair_probability_per_pulse) {
            return Err(Error::invalid("pair_probability_per_pulse must lie in [0,1]"));
        }
        if !(0.0..=1.0).contains(&self.state_noise_fraction) {
            return Err(Error::invalid("state_noise_fraction must lie in [0,1]"));
        }
        // The repetition period must agree with the excitation rate.
        let t_rep_ns = 1e3 / self.excitation_rate_mhz;
        if (t_rep_ns - self.cascade.t_rep_ns).abs() > 1e-6 {
            return Err(Error::invalid(format!(
                "cascade.t_rep_ns = {} is inconsistent with 1/excitation_rate = {t_rep_ns} ns",
                self.cascade.t_rep_ns
            )));
        }
        Ok(())
    }

    pub fn t_rep_ps(&self) -> f64 {
        self.cascade.t_rep_ps()
    }
}

/// One emitted photon pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairEvent {
    pub pulse_index: u64,
    /// Biexciton photon emission time, ps (absolute).
    pub t_xx_ps: f64,
    /// Exciton photon emission time, ps (absolute).
    pub t_x_ps: f64,
    /// XX–X emission delay t_x − t_xx, ps; carries the entangled-state phase.
    pub delay_ps: f64,
}

/// Emission for one pulse, as a pure function of `(config.seed, pulse)`.
///
/// Draw order within the pulse generator is frozen: pair Bernoulli,
/// XX-offset exponential, X-delay exponential.
pub fn sample_pair(config: &SourceConfig, pulse_index: u64) -> Option<PairEvent> {
    let mut rng = stream(config.seed, Domain::Pairs, pulse_index);
    if config.pair_probability_per_pulse < 1.0
        && rng.gen::<f64>() >= config.pair_probability_per_pulse
    {
        return None;
    }
    if config.pair_probability_per_pulse <= 0.0 {
        return None;
    }
    let exp_xx = Exp::new(1.0 / config.cascade.t1_xx_ps).expect("validated lifetime");
    let exp_x = Exp::new(1.0 / config.cascade.t1_x_ps).expect("validated lifetime");
    let pulse_time = pulse_index as f64 * config.t_rep_ps();
    let t_xx = pulse_time + exp_xx.sample(&mut rng);
    let delay = exp_x.sample(&mut rng);
    Some(PairEvent {
        pulse_index,
        t_xx_ps: t_xx,
        t_x_ps: t_xx + delay,
        delay_ps: delay,
    })
}

/// Pair events for pulses `[0, n_pulses)`, in pulse order.
pub fn generate_pairs(config: &SourceConfig, n_pulses: u64) -> Vec<PairEvent> {
    generate_pairs_range(config, 0..n_pulses)
}

/// Pair events for an arbitrary pulse range. Concatenating the outputs of
/// any partitioning of `[0, n)` reproduces `generate_pairs(config, n)`.
pub fn generate_pairs_range(config: &SourceConfig, pulses: std::ops::Range<u64>) -> Vec<PairEvent> {
    pulses.filter_map(|i| sample_pair(config, i)).collect()
}

/// Detector arm identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Xx,
    X,
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Arm::Xx => write!(f, "XX"),
            Arm::X => write!(f, "X"),
        }
    }
}

/// Provenance of a click; diagnostic only — analysis code must not branch
/// on it except where a contract explicitly concerns truth flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Signal,
    Dark,
    ChannelNoise,
}

/// Time-tagged click on one detector arm. `pulse_index` is meaningful for
/// signal records (it keys the emitted pair state); dark and channel-noise
/// records carry 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub arm: Arm,
    pub timestamp_ps: f64,
    pub pulse_index: u64,
    pub origin: Origin,
}

/// Single detector channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Instrument-response FWHM, ps (Gaussian jitter model).
    pub irf_fwhm_ps: f64,
    /// Detection efficiency.
    pub efficiency: f64,
    /// Dark-count rate, Hz (uniform in time, uncorrelated between arms).
    pub dark_rate_hz: f64,
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.irf_fwhm_ps < 0.0 {
            return Err(Error::invalid("irf_fwhm_ps must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(Error::invalid("detector efficiency must lie in [0,1]"));
        }
        if self.dark_rate_hz < 0.0 {
            return Err(Error::invalid("dark_rate_hz must be non-negative"));
        }
        Ok(())
    }

    fn sigma_ps(&self) -> f64 {
        self.irf_fwhm_ps / crate::consts::FWHM_TO_SIGMA
    }
}

/// Detect the two photons of each pair on their respective arms.
///
/// Each photon survives with the arm's efficiency; surviving timestamps
/// are jittered by the Gaussian IRF; dark counts are a Poisson process at
/// `dark_rate_hz` over `duration_s`. Outputs are sorted by timestamp.
pub fn detect(
    pairs: &[PairEvent],
    det_xx: &DetectorConfig,
    det_x: &DetectorConfig,
    duration_s: f64,
    rng: &mut ChaCha12Rng,
) -> Result<(Vec<DetectionRecord>, Vec<DetectionRecord>)> {
    det_xx.validate()?;
    det_x.validate()?;
    if !(duration_s >= 0.0) {
        return Err(Error::invalid("duration_s must be non-negative"));
    }

    let mut out_xx = Vec::new();
    let mut out_x = Vec::new();
    for (arm, det, out, pick) in [
        (Arm::Xx, det_xx, &mut out_xx, 0usize),
        (Arm::X, det_x, &mut out_x, 1usize),
    ] {
        let jitter = if det.irf_fwhm_ps > 0.0 {
            Some(Normal::new(0.0, det.sigma_ps()).expect("validated sigma"))
        } else {
            None
        };
        for pair in pairs {
            if det.efficiency < 1.0 && rng.gen::<f64>() >= det.efficiency {
                continue;
            }
            let true_t = if pick == 0 { pair.t_xx_ps } else { pair.t_x_ps };
            let t = match &jitter {
                Some(n) => true_t + n.sample(rng),
                None => true_t,
            };
            out.push(DetectionRecord {
                arm,
                timestamp_ps: t,
                pulse_index: pair.pulse_index,
                origin: Origin::Signal,
            });
        }
        append_poisson_noise(out, arm, Origin::Dark, det.dark_rate_hz, duration_s, rng);
        sort_records(out);
    }
    Ok((out_xx, out_x))
}

/// Append a uniform Poisson click process (darks, channel background) to a
/// record list; caller re-sorts.
pub(crate) fn append_poisson_noise(
    records: &mut Vec<DetectionRecord>,
    arm: Arm,
    origin: Origin,
    rate_hz: f64,
    duration_s: f64,
    rng: &mut ChaCha12Rng,
) {
    let mean = rate_hz * duration_s;
    if mean <= 0.0 {
        return;
    }
    let n = Poisson::new(mean).expect("positive mean").sample(rng) as u64;
    let span_ps = duration_s * 1e12;
    for _ in 0..n {
        records.push(DetectionRecord {
            arm,
            timestamp_ps: rng.gen::<f64>() * span_ps,
            pulse_index: 0,
            origin,
        });
    }
}

/// Deterministic total order: timestamp, then pulse, then origin.
pub(crate) fn sort_records(records: &mut [DetectionRecord]) {
    records.sort_unstable_by(|a, b| {
        a.timestamp_ps
            .total_cmp(&b.timestamp_ps)
            .then(a.pulse_index.cmp(&b.pulse_index))
            .then((a.origin as u8).cmp(&(b.origin as u8)))
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn config(p: f64) -> SourceConfig {
        SourceConfig {
            excitation_rate_mhz: 305.0,
            pair_probability_per_pulse: p,
            state_noise_fraction: 0.0,
            cascade: CascadeParams {
                fss_uev: 2.1,
                t1_x_ps: 171.0,
                t1_xx_ps: 120.0,
                t_rep_ns: 1000.0 / 305.0,
            },
            seed: 11,
        }
    }

    #[test]
    fn no_pairs_at_zero_probability() {
        assert!(generate_pairs(&config(0.0), 10_000).is_empty());
    }

    #[test]
    fn delay_sample_mean_matches_x_lifetime() {
        // 10⁶ pulses at p = 1: mean delay = T1_X within 3σ/√n.
        let n = 1_000_000u64;
        let pairs = generate_pairs(&config(1.0), n);
        assert_eq!(pairs.len() as u64, n);
        let mean = pairs.iter().map(|p| p.delay_ps).sum::<f64>() / n as f64;
        let tol = 3.0 * 171.0 / (n as f64).sqrt();
        assert!(
            (mean - 171.0).abs() < tol,
            "mean delay {mean} outside {tol} of 171"
        );
        for p in pairs.iter().take(1000) {
            assert!(p.delay_ps >= 0.0);
            assert!(p.t_x_ps >= p.t_xx_ps);
            assert!(p.t_xx_ps >= p.pulse_index as f64 * 1e6 / 305.0);
        }
    }

    #[test]
    fn xx_offset_mean_matches_xx_lifetime() {
        let cfg = config(1.0);
        let n = 200_000u64;
        let pairs = generate_pairs(&cfg, n);
        let t_rep = cfg.t_rep_ps();
        let mean = pairs
            .iter()
            .map(|p| p.t_xx_ps - p.pulse_index as f64 * t_rep)
            .sum::<f64>()
            / n as f64;
        assert!((mean - 120.0).abs() < 3.0 * 120.0 / (n as f64).sqrt());
    }

    #[test]
    fn generation_is_deterministic_and_partition_independent() {
        let cfg = config(0.7);
        let full = generate_pairs(&cfg, 5000);
        let again = generate_pairs(&cfg, 5000);
        assert_eq!(full, again);

        // Any partition of the pulse range yields the same sequence.
        let mut parts = generate_pairs_range(&cfg, 0..1234);
        parts.extend(generate_pairs_range(&cfg, 1234..1235));
        parts.extend(generate_pairs_range(&cfg, 1235..5000));
        assert_eq!(full, parts);
    }

    #[test]
    fn delay_histogram_is_single_exponential() {
        // Least squares on log counts over the first ~3 lifetimes.
        let pairs = generate_pairs(&config(1.0), 1_000_000);
        let bin = 10.0;
        let mut hist = vec![0u64; 60];
        for p in &pairs {
            let b = (p.delay_ps / bin) as usize;
            if b < hist.len() {
                hist[b] += 1;
            }
        }
        let pts: Vec<(f64, f64)> = hist
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, &c)| ((i as f64 + 0.5) * bin, (c as f64).ln()))
            .collect();
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        let t1 = -1.0 / slope;
        assert!((t1 - 171.0).abs() / 171.0 < 0.02, "fitted T1 = {t1}");
    }

    #[test]
    fn t_rep_must_match_excitation_rate() {
        let mut cfg = config(1.0);
        assert!(cfg.validate().is_ok());
        cfg.cascade.t_rep_ns = 3.28; // rounded value is off by ~1.3e-3 ns
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn detection_efficiency_thins_and_identity_passes_through() {
        let cfg = config(1.0);
        let pairs = generate_pairs(&cfg, 100_000);
        let ideal = DetectorConfig {
            irf_fwhm_ps: 0.0,
            efficiency: 1.0,
            dark_rate_hz: 0.0,
        };
        let duration_s = 100_000.0 * cfg.t_rep_ps() * 1e-12;
        let mut r = rng::stream(1, rng::Domain::Detector, 0);
        let (xx, x) = detect(&pairs, &ideal, &ideal, duration_s, &mut r).unwrap();
        assert_eq!(xx.len(), pairs.len());
        assert_eq!(x.len(), pairs.len());
        // Unit efficiency, zero jitter: timestamps pass through unchanged.
        assert!(xx.iter().zip(&pairs).all(|(r, p)| r.timestamp_ps == p.t_xx_ps));

        let real = DetectorConfig {
            irf_fwhm_ps: 0.0,
            efficiency: 0.85,
            dark_rate_hz: 0.0,
        };
        let mut r = rng::stream(1, rng::Domain::Detector, 1);
        let (xx, _) = detect(&pairs, &real, &ideal, duration_s, &mut r).unwrap();
        let n = pairs.len() as f64;
        let expect = 0.85 * n;
        let sigma = (n * 0.85 * 0.15).sqrt();
        assert!((xx.len() as f64 - expect).abs() < 3.0 * sigma);
    }

    #[test]
    fn irf_jitter_std_matches_fwhm_conversion() {
        // FWHM 58 ps → σ = 58/2.3548 = 24.63 ps, within 2% on 10⁵ samples.
        let cfg = config(1.0);
        let pairs = generate_pairs(&cfg, 100_000);
        let det = DetectorConfig {
            irf_fwhm_ps: 58.0,
            efficiency: 1.0,
            dark_rate_hz: 0.0,
        };
        let mut r = rng::stream(2, rng::Domain::Detector, 0);
        let (xx, _) = detect(&pairs, &det, &det, 1.0, &mut r).unwrap();
        let devs: Vec<f64> = xx
            .iter()
            .zip(&pairs)
            .map(|(r, p)| r.timestamp_ps - p.t_xx_ps)
            .collect();
        let mean = devs.iter().sum::<f64>() / devs.len() as f64;
        let var = devs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / devs.len() as f64;
        let std = var.sqrt();
        assert!((std - 24.6305).abs() / 24.6305 < 0.02, "std = {std}");
    }

    #[test]
    fn dark_counts_follow_poisson_rate() {
        let det = DetectorConfig {
            irf_fwhm_ps: 0.0,
            efficiency: 1.0,
            dark_rate_hz: 1000.0,
        };
        let duration_s = 10.0;
        let mut r = rng::stream(3, rng::Domain::Detector, 0);
        let (xx, x) = detect(&[], &det, &det, duration_s, &mut r).unwrap();
        for recs in [&xx, &x] {
            let n = recs.len() as f64;
            let mean = 10_000.0;
            assert!((n - mean).abs() < 4.0 * mean.sqrt(), "darks = {n}");
            assert!(recs.windows(2).all(|w| w[0].timestamp_ps <= w[1].timestamp_ps));
            assert!(recs.iter().all(|r| r.origin == Origin::Dark));
        }
        assert_ne!(
            xx.iter().map(|r| r.timestamp_ps).collect::<Vec<_>>(),
            x.iter().map(|r| r.timestamp_ps).collect::<Vec<_>>()
        );
    }
}
