//! Time-resolved entanglement analysis.
//!
//! Everything here consumes the per-setting coincidence histograms of one
//! tomography run: reconstruct the state in a delay window
//! ([`windowed_rho`]), sweep a reconstruction across delay bins into
//! fidelity/concurrence curves ([`curve`]), average a curve over the
//! early-delay region weighted by how often each delay actually occurs
//! ([`decay_time_average`]), and fit the φ⁺ fidelity with an SNR-damped
//! oscillation model ([`fit_fidelity`]).
//!
//! The fit's functional form,
//!
//!   F(t) = 1/4 + p(t)·[v·cos(FSS·t/ħ)/2 + 1/4],
//!   p(t) = s·e^(−t/T1) / (s·e^(−t/T1) + n),
//!
//! interpolates between a perfect two-photon fringe at high
//! signal-to-noise and the 1/4 floor of white noise; the noise floor n is
//! measured from accidental sidebands and held fixed, so the fit cannot
//! trade oscillation visibility against background.

use nalgebra::Matrix4;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::consts::fss_phase;
use crate::qmath::{
    bell_state, concurrence, fidelity_to_state, kron_state, BellState, StateVector, Unitary,
};
use crate::tomography::{
    mle_reconstruct_vectors, projector_vector, CoincidenceHistogram, MeasurementSetting,
    TomographyResult,
};
use crate::{Error, Result};

/// Bins with fewer summed coincidences than this are dropped from curves
/// instead of producing garbage reconstructions.
pub const MIN_BIN_COINCIDENCES: f64 = 20.0;

/// Wrapped accidental-sideband window, as fractions of the histogram span.
const SIDEBAND_FRACTION: (f64, f64) = (0.55, 0.75);

/// Per-valid-bin entanglement measures across delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntanglementCurve {
    pub bin_centers_ps: Vec<f64>,
    pub f_phi_plus: Vec<f64>,
    pub f_phi_minus: Vec<f64>,
    pub concurrence: Vec<f64>,
    /// Summed coincidences across settings per bin (reconstruction weight).
    pub counts_per_bin: Vec<u64>,
}

impl EntanglementCurve {
    pub fn len(&self) -> usize {
        self.bin_centers_ps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bin_centers_ps.is_empty()
    }
}

/// Which column of an [`EntanglementCurve`] a scalar summary refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Measure {
    FidelityPhiPlus,
    FidelityPhiMinus,
    Concurrence,
}

/// Delay window for a single reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayWindow {
    pub center_ps: f64,
    pub width_ps: f64,
}

impl DelayWindow {
    pub fn start_ps(&self) -> f64 {
        self.center_ps - self.width_ps / 2.0
    }

    pub fn end_ps(&self) -> f64 {
        self.center_ps + self.width_ps / 2.0
    }
}

/// Projector vectors for the given settings, optionally rotated into an
/// aligned frame `(u_xx, u_x)` found by the basis-alignment search.
pub fn frame_projectors(
    settings: &[MeasurementSetting],
    frame: Option<&(Unitary, Unitary)>,
) -> Vec<StateVector> {
    match frame {
        None => settings.iter().map(|s| s.projector()).collect(),
        Some((u_a, u_b)) => settings
            .iter()
            .map(|s| {
                kron_state(
                    &(u_a * projector_vector(s.projector_xx)),
                    &(u_b * projector_vector(s.projector_x)),
                )
            })
            .collect(),
    }
}

/// Reconstruct the two-photon state from the coincidences inside one
/// delay window (counts summed per setting, then maximum likelihood).
pub fn windowed_rho(
    histograms: &[CoincidenceHistogram],
    window: DelayWindow,
) -> Result<TomographyResult> {
    windowed_rho_in_frame(histograms, window, None)
}

/// [`windowed_rho`] with the projectors rotated into an aligned frame.
pub fn windowed_rho_in_frame(
    histograms: &[CoincidenceHistogram],
    window: DelayWindow,
    frame: Option<&(Unitary, Unitary)>,
) -> Result<TomographyResult> {
    validate_shared_binning(histograms)?;
    let span = histograms[0].span_ps;
    if !(window.width_ps > 0.0) {
        return Err(Error::invalid("delay window must have positive width"));
    }
    if window.start_ps() < -1e-9 || window.end_ps() > span + 1e-9 {
        return Err(Error::invalid(format!(
            "delay window [{:.3}, {:.3}) ps exceeds the histogram span [0, {span:.3}) ps",
            window.start_ps(),
            window.end_ps()
        )));
    }
    let counts: Vec<f64> = histograms
        .iter()
        .map(|h| h.window_counts(window.start_ps(), window.end_ps()))
        .collect();
    let covered = histograms[0]
        .bins
        .iter()
        .enumerate()
        .any(|(i, _)| {
            let c = histograms[0].bin_center_ps(i);
            c >= window.start_ps() && c < window.end_ps()
        });
    if !covered {
        return Err(Error::invalid("delay window covers no histogram bins"));
    }
    let settings: Vec<_> = histograms.iter().map(|h| h.setting).collect();
    let singles: Vec<(f64, f64)> = histograms
        .iter()
        .map(|h| (h.total_singles_xx, h.total_singles_x))
        .collect();
    let projectors = frame_projectors(&settings, frame);
    mle_reconstruct_vectors(&counts, Some(&singles), &projectors)
}

/// Per-bin state reconstruction across the full delay axis.
///
/// `bin_width_ps` must be an integer multiple of the histogram binning;
/// fine bins are summed before reconstruction. Bins with fewer than
/// [`MIN_BIN_COINCIDENCES`] summed counts are omitted.
pub fn curve(histograms: &[CoincidenceHistogram], bin_width_ps: f64) -> Result<EntanglementCurve> {
    curve_in_frame(histograms, bin_width_ps, None)
}

/// [`curve`] with the projectors rotated into an aligned frame.
pub fn curve_in_frame(
    histograms: &[CoincidenceHistogram],
    bin_width_ps: f64,
    frame: Option<&(Unitary, Unitary)>,
) -> Result<EntanglementCurve> {
    validate_shared_binning(histograms)?;
    let fine = histograms[0].bin_width_ps;
    let factor = (bin_width_ps / fine).round();
    if !(factor >= 1.0) || (bin_width_ps - factor * fine).abs() > 1e-9 * bin_width_ps {
        return Err(Error::invalid(format!(
            "curve bin width {bin_width_ps} ps is not an integer multiple of the histogram binning {fine} ps"
        )));
    }
    let factor = factor as usize;
    let n_coarse = histograms[0].bins.len() / factor;
    if n_coarse == 0 {
        return Err(Error::invalid("curve bin width exceeds the histogram span"));
    }
    let settings: Vec<_> = histograms.iter().map(|h| h.setting).collect();
    let projectors = frame_projectors(&settings, frame);

    struct BinPoint {
        center_ps: f64,
        f_plus: f64,
        f_minus: f64,
        conc: f64,
        counts: u64,
    }

    let phi_plus = bell_state(BellState::PhiPlus);
    let phi_minus = bell_state(BellState::PhiMinus);
    let points: Vec<Option<BinPoint>> = (0..n_coarse)
        .into_par_iter()
        .map(|b| {
            let counts: Vec<f64> = histograms
                .iter()
                .map(|h| h.bins[b * factor..(b + 1) * factor].iter().sum())
                .collect();
            let total: f64 = counts.iter().sum();
            if total < MIN_BIN_COINCIDENCES {
                return None;
            }
            let res = mle_reconstruct_vectors(&counts, None, &projectors).ok()?;
            Some(BinPoint {
                center_ps: (b as f64 + 0.5) * bin_width_ps,
                f_plus: fidelity_to_state(&res.rho, &phi_plus),
                f_minus: fidelity_to_state(&res.rho, &phi_minus),
                conc: concurrence(&res.rho),
                counts: total.round() as u64,
            })
        })
        .collect();

    let mut out = EntanglementCurve {
        bin_centers_ps: Vec::new(),
        f_phi_plus: Vec::new(),
        f_phi_minus: Vec::new(),
        concurrence: Vec::new(),
        counts_per_bin: Vec::new(),
    };
    for p in points.into_iter().flatten() {
        out.bin_centers_ps.push(p.center_ps);
        out.f_phi_plus.push(p.f_plus);
        out.f_phi_minus.push(p.f_minus);
        out.concurrence.push(p.conc);
        out.counts_per_bin.push(p.counts);
    }
    Ok(out)
}

/// Coincidence-weighted mean of one measure over delays in
/// [0, `window_width_ps`]: delays are weighted by how often they occur,
/// i.e. by the exciton decay, which is exactly the per-bin coincidence
/// count.
pub fn decay_time_average(
    curve: &EntanglementCurve,
    measure: Measure,
    window_width_ps: f64,
) -> Result<f64> {
    if !(window_width_ps > 0.0) {
        return Err(Error::invalid("averaging window must be positive"));
    }
    let values = match measure {
        Measure::FidelityPhiPlus => &curve.f_phi_plus,
        Measure::FidelityPhiMinus => &curve.f_phi_minus,
        Measure::Concurrence => &curve.concurrence,
    };
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &t) in curve.bin_centers_ps.iter().enumerate() {
        if t <= window_width_ps {
            let w = curve.counts_per_bin[i] as f64;
            num += w * values[i];
            den += w;
        }
    }
    if den <= 0.0 {
        return Err(Error::invalid(
            "no valid bins inside the averaging window",
        ));
    }
    Ok(num / den)
}

/// SNR-damped oscillation model for the φ⁺ fidelity (see module docs).
pub fn model_fidelity(t_ps: f64, s: f64, n: f64, fss_uev: f64, t1_ps: f64, v: f64) -> f64 {
    let e = s * (-t_ps / t1_ps).exp();
    let p = if e + n > 0.0 { e / (e + n) } else { 0.0 };
    0.25 + p * (v * fss_phase(fss_uev, t_ps).cos() / 2.0 + 0.25)
}

/// JSON has no ±∞: an unconstrained uncertainty (a parameter frozen
/// because the data give it no leverage) serializes as `null` and parses
/// back to infinity.
mod sigma_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Fitted model parameters with 1-σ uncertainties from the weighted
/// normal equations. `noise_floor` is the fixed input, not a fitted
/// quantity (its σ is therefore absent).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitModel {
    pub signal_amplitude: f64,
    pub noise_floor: f64,
    pub fss_fit_uev: f64,
    pub t1_fit_ps: f64,
    pub visibility: f64,
    #[serde(with = "sigma_serde")]
    pub sigma_signal_amplitude: f64,
    #[serde(with = "sigma_serde")]
    pub sigma_fss_uev: f64,
    #[serde(with = "sigma_serde")]
    pub sigma_t1_ps: f64,
    #[serde(with = "sigma_serde")]
    pub sigma_visibility: f64,
    pub chi2_per_dof: f64,
    pub iterations: u32,
    pub converged: bool,
}

/// Mean summed-across-settings accidental counts per `bin_width_ps` bin,
/// measured in the wrapped sideband window (0.55–0.75 of the span, far
/// from both the true-coincidence peak and its periodic images).
pub fn sideband_noise_floor(
    histograms: &[CoincidenceHistogram],
    bin_width_ps: f64,
) -> Result<f64> {
    validate_shared_binning(histograms)?;
    let span = histograms[0].span_ps;
    let (lo, hi) = (SIDEBAND_FRACTION.0 * span, SIDEBAND_FRACTION.1 * span);
    let total: f64 = histograms.iter().map(|h| h.window_counts(lo, hi)).sum();
    let fine_in_window = (0..histograms[0].bins.len())
        .filter(|&i| {
            let c = histograms[0].bin_center_ps(i);
            c >= lo && c < hi
        })
        .count() as f64;
    let factor = (bin_width_ps / histograms[0].bin_width_ps).max(1.0);
    let n_bins = (fine_in_window / factor).max(1.0);
    Ok(total / n_bins)
}

const FIT_MAX_ITERATIONS: u32 = 10_000;

/// Weighted Levenberg–Marquardt fit of the φ⁺ fidelity curve, with the
/// noise floor held fixed. Free parameters: signal amplitude, FSS, T1,
/// visibility. Weights are the per-bin coincidence counts. On
/// non-convergence the best iterate is returned with `converged: false`.
pub fn fit_fidelity(curve: &EntanglementCurve, noise_floor: f64) -> Result<FitModel> {
    if curve.len() < 20 {
        return Err(Error::invalid(format!(
            "fidelity fit needs at least 20 valid bins, got {}",
            curve.len()
        )));
    }
    if !(noise_floor >= 0.0) || !noise_floor.is_finite() {
        return Err(Error::invalid("noise floor must be finite and non-negative"));
    }
    let t = &curve.bin_centers_ps;
    let y = &curve.f_phi_plus;
    let w: Vec<f64> = curve.counts_per_bin.iter().map(|&c| c as f64).collect();
    let n = noise_floor;

    // --- initial guesses from the data ---
    let span = t[t.len() - 1] - t[0];
    // Decay time from a log-linear fit of background-subtracted counts.
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut m = 0.0;
    for (i, &ti) in t.iter().enumerate() {
        let c = w[i] - n;
        if c > 1.0 {
            let ly = c.ln();
            sx += ti;
            sy += ly;
            sxx += ti * ti;
            sxy += ti * ly;
            m += 1.0;
        }
    }
    let t1_0 = if m >= 3.0 {
        let slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
        if slope < -1e-12 { (-1.0 / slope).clamp(4.0, 1e7) } else { span / 3.0 }
    } else {
        span / 3.0
    };
    let v0 = 0.9;
    let p0 = ((y[0] - 0.25) / (v0 / 2.0 + 0.25)).clamp(0.05, 0.999);
    let s0 = if n > 0.0 { n * p0 / (1.0 - p0) } else { w[0].max(1.0) };

    let chi2_of = |s: f64, fss: f64, t1: f64, v: f64| -> f64 {
        t.iter()
            .enumerate()
            .map(|(i, &ti)| {
                let r = model_fidelity(ti, s, n, fss, t1, v) - y[i];
                w[i] * r * r
            })
            .sum()
    };

    // FSS by scan: the oscillation frequency is the one genuinely
    // multimodal direction, so seed it globally before refining locally.
    let mut fss0 = 0.2;
    let mut best_scan = f64::INFINITY;
    let mut fss_probe = 0.2;
    while fss_probe <= 8.0 {
        let c = chi2_of(s0, fss_probe, t1_0, v0);
        if c < best_scan {
            best_scan = c;
            fss0 = fss_probe;
        }
        fss_probe += 0.02;
    }

    // --- Levenberg–Marquardt ---
    let clamp = |p: [f64; 4]| -> [f64; 4] {
        [
            p[0].clamp(0.0, 1e12),
            p[1].clamp(1e-6, 1e3),
            p[2].clamp(1e-3, 1e9),
            p[3].clamp(0.0, 1.0),
        ]
    };
    let mut params = clamp([s0, fss0, t1_0, v0]);
    let mut chi2 = chi2_of(params[0], params[1], params[2], params[3]);
    let mut lambda = 1e-3;
    let mut iterations = 0u32;
    let mut converged = false;

    // With a zero noise floor the excited-state fraction p(t) is identically
    // one, so the amplitude and decay time have no leverage on F(t) at all.
    // Freeze them at their count-derived seeds instead of letting a singular
    // normal matrix abort the fit; their uncertainties are reported as ∞.
    let active = [n > 0.0, true, n > 0.0, true];

    let assemble = |p: &[f64; 4]| -> (Matrix4<f64>, nalgebra::Vector4<f64>) {
        let (s, fss, t1, v) = (p[0], p[1], p[2], p[3]);
        let mut h = Matrix4::zeros();
        let mut g = nalgebra::Vector4::zeros();
        for (i, &ti) in t.iter().enumerate() {
            let e = s * (-ti / t1).exp();
            let denom = e + n;
            let prob = if denom > 0.0 { e / denom } else { 0.0 };
            let dp_ds = if denom > 0.0 && s > 0.0 { prob * (1.0 - prob) / s } else { 0.0 };
            let dp_dt1 = if denom > 0.0 { prob * (1.0 - prob) * ti / (t1 * t1) } else { 0.0 };
            let phase = fss_phase(fss, ti);
            let osc = v * phase.cos() / 2.0 + 0.25;
            let f = 0.25 + prob * osc;
            let mut j = nalgebra::Vector4::new(
                osc * dp_ds,
                -prob * v * phase.sin() / 2.0 * (ti / crate::consts::HBAR_UEV_PS),
                osc * dp_dt1,
                prob * phase.cos() / 2.0,
            );
            for k in 0..4 {
                if !active[k] {
                    j[k] = 0.0;
                }
            }
            let r = f - y[i];
            h += j * j.transpose() * w[i];
            g += j * (w[i] * r);
        }
        (h, g)
    };

    while iterations < FIT_MAX_ITERATIONS {
        iterations += 1;
        let (h, g) = assemble(&params);
        // Marquardt scaling: damp by the diagonal so that step sizes are
        // sane across wildly different parameter magnitudes. Frozen rows
        // get a unit pivot, which keeps the solve well posed and their
        // steps exactly zero (their gradient entries are zero).
        let max_diag = (0..4).fold(0.0f64, |acc, k| acc.max(h[(k, k)]));
        let floor = (1e-12 * max_diag).max(1e-300);
        let mut damped = h;
        for k in 0..4 {
            if active[k] {
                damped[(k, k)] += lambda * h[(k, k)].max(floor);
            } else {
                damped[(k, k)] = 1.0;
            }
        }
        let Some(inv) = damped.try_inverse() else {
            lambda *= 10.0;
            if lambda > 1e14 {
                break;
            }
            continue;
        };
        let delta = -(inv * g);
        let cand = clamp([
            params[0] + delta[0],
            params[1] + delta[1],
            params[2] + delta[2],
            params[3] + delta[3],
        ]);
        let chi2_new = chi2_of(cand[0], cand[1], cand[2], cand[3]);
        if chi2_new <= chi2 {
            let rel_drop = (chi2 - chi2_new) / chi2.max(1e-300);
            params = cand;
            chi2 = chi2_new;
            lambda = (lambda / 3.0).max(1e-12);
            if rel_drop < 1e-10 {
                converged = true;
                break;
            }
        } else {
            lambda *= 2.0;
            if lambda > 1e14 {
                // No representable improvement left.
                converged = true;
                break;
            }
        }
    }

    // 1-σ from the weighted normal equations at the optimum, restricted to
    // the parameters the data can actually constrain.
    let (h, _) = assemble(&params);
    let idx: Vec<usize> = (0..4).filter(|&k| active[k]).collect();
    let n_active = idx.len();
    let dof = (curve.len() as f64 - n_active as f64).max(1.0);
    let scale = chi2 / dof;
    let reduced = nalgebra::DMatrix::from_fn(n_active, n_active, |r, c| h[(idx[r], idx[c])]);
    let mut sigma = [f64::INFINITY; 4];
    if let Some(cov) = reduced.try_inverse() {
        for (r, &k) in idx.iter().enumerate() {
            sigma[k] = (cov[(r, r)] * scale).max(0.0).sqrt();
        }
    }

    Ok(FitModel {
        signal_amplitude: params[0],
        noise_floor: n,
        fss_fit_uev: params[1],
        t1_fit_ps: params[2],
        visibility: params[3],
        sigma_signal_amplitude: sigma[0],
        sigma_fss_uev: sigma[1],
        sigma_t1_ps: sigma[2],
        sigma_visibility: sigma[3],
        chi2_per_dof: chi2 / dof,
        iterations,
        converged,
    })
}

fn validate_shared_binning(histograms: &[CoincidenceHistogram]) -> Result<()> {
    if histograms.len() < 16 {
        return Err(Error::invalid(format!(
            "analysis needs a complete tomography set (≥16 settings), got {}",
            histograms.len()
        )));
    }
    let first = &histograms[0];
    for h in histograms {
        if (h.bin_width_ps - first.bin_width_ps).abs() > 1e-12
            || (h.span_ps - first.span_ps).abs() > 1e-9
            || h.bins.len() != first.bins.len()
        {
            return Err(Error::invalid("histograms do not share a common binning"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qmath::{
        cascade_density, mix_with_white_noise, mixed_state, CascadeParams, DensityMatrix,
    };
    use crate::tomography::james_16;
    use approx::assert_abs_diff_eq;

    fn params() -> CascadeParams {
        CascadeParams {
            fss_uev: 2.1,
            t1_x_ps: 171.0,
            t1_xx_ps: 120.0,
            t_rep_ns: 1000.0 / 305.0,
        }
    }

    fn span_ps() -> f64 {
        1000.0 / 305.0 * 1000.0
    }

    /// Analytic histograms for a delay-dependent state: expected counts
    /// per (setting, bin), flux decaying with the exciton lifetime.
    /// `flux0` is normalized to counts per 8 ps bin at zero delay so the
    /// same number means the same brightness at any binning.
    fn cascade_histograms(
        flux0: f64,
        noise_fraction: f64,
        bin_width_ps: f64,
        accidental_per_bin: f64,
    ) -> Vec<CoincidenceHistogram> {
        let p = params();
        let n_bins = (span_ps() / bin_width_ps).floor() as usize;
        let per_bin_flux = flux0 * bin_width_ps / 8.0;
        james_16()
            .iter()
            .map(|s| {
                let psi_s = s.projector();
                let bins: Vec<f64> = (0..n_bins)
                    .map(|b| {
                        let t = (b as f64 + 0.5) * bin_width_ps;
                        let rho = mix_with_white_noise(
                            &cascade_density(t, &p),
                            noise_fraction,
                        )
                        .unwrap();
                        let prob = fidelity_to_state(&rho, &psi_s);
                        per_bin_flux * (-t / p.t1_x_ps).exp() * prob + accidental_per_bin / 16.0
                    })
                    .collect();
                CoincidenceHistogram {
                    setting: *s,
                    bin_width_ps,
                    span_ps: span_ps(),
                    bins,
                    total_singles_xx: flux0 * 100.0,
                    total_singles_x: flux0 * 100.0,
                }
            })
            .collect()
    }

    fn fixed_state_histograms(rho: &DensityMatrix, flux: f64) -> Vec<CoincidenceHistogram> {
        let n_bins = (span_ps() / 8.0).floor() as usize;
        james_16()
            .iter()
            .map(|s| {
                let mut bins = vec![0.0; n_bins];
                bins[0] = flux * fidelity_to_state(rho, &s.projector());
                CoincidenceHistogram {
                    setting: *s,
                    bin_width_ps: 8.0,
                    span_ps: span_ps(),
                    bins,
                    total_singles_xx: flux,
                    total_singles_x: flux,
                }
            })
            .collect()
    }

    #[test]
    fn zero_delay_window_recovers_the_short_time_state() {
        let hists = cascade_histograms(1e4, 0.0, 8.0, 0.0);
        let res = windowed_rho(&hists, DelayWindow { center_ps: 4.0, width_ps: 8.0 }).unwrap();
        let f = fidelity_to_state(&res.rho, &bell_state(BellState::PhiPlus));
        // The 4 ps center has already picked up a little FSS phase.
        let expected = fidelity_to_state(
            &cascade_density(4.0, &params()),
            &bell_state(BellState::PhiPlus),
        );
        assert_abs_diff_eq!(f, expected, epsilon = 2e-3);
        assert!(f > 0.99);
    }

    #[test]
    fn full_period_window_washes_out_coherence() {
        let hists = cascade_histograms(1e4, 0.0, 8.0, 0.0);
        let narrow = windowed_rho(&hists, DelayWindow { center_ps: 4.0, width_ps: 8.0 }).unwrap();
        let wide = windowed_rho(
            &hists,
            DelayWindow { center_ps: span_ps() / 2.0, width_ps: span_ps() },
        )
        .unwrap();
        let f_narrow = fidelity_to_state(&narrow.rho, &bell_state(BellState::PhiPlus));
        let f_wide = fidelity_to_state(&wide.rho, &bell_state(BellState::PhiPlus));
        assert!(
            f_wide < f_narrow - 0.05,
            "full-period integration should lose coherence: {f_wide} vs {f_narrow}"
        );
    }

    #[test]
    fn pure_noise_window_reconstructs_nearly_unentangled() {
        let hists = fixed_state_histograms(&mixed_state(), 2e4);
        let res = windowed_rho(&hists, DelayWindow { center_ps: 4.0, width_ps: 8.0 }).unwrap();
        assert!(concurrence(&res.rho) <= 0.05);
    }

    #[test]
    fn windowed_rho_rejects_bad_windows() {
        let hists = cascade_histograms(1e3, 0.0, 8.0, 0.0);
        for w in [
            DelayWindow { center_ps: 4.0, width_ps: 0.0 },
            DelayWindow { center_ps: -40.0, width_ps: 8.0 },
            DelayWindow { center_ps: span_ps() + 100.0, width_ps: 8.0 },
        ] {
            assert_eq!(windowed_rho(&hists, w).unwrap_err().exit_code(), 2);
        }
    }

    #[test]
    fn curve_tracks_the_closed_form_oscillation() {
        let hists = cascade_histograms(1e4, 0.0, 8.0, 0.0);
        let c = curve(&hists, 8.0).unwrap();
        assert!(c.len() > 100, "expected many valid bins, got {}", c.len());
        let mut sq_sum = 0.0;
        for (i, &t) in c.bin_centers_ps.iter().enumerate() {
            let expected = (1.0 + fss_phase(2.1, t).cos()) / 2.0;
            sq_sum += (c.f_phi_plus[i] - expected).powi(2);
        }
        let rms = (sq_sum / c.len() as f64).sqrt();
        assert!(rms < 0.02, "rms deviation {rms}");
        // All reported values are physical.
        for i in 0..c.len() {
            for v in [c.f_phi_plus[i], c.f_phi_minus[i], c.concurrence[i]] {
                assert!((-1e-9..=1.0 + 1e-9).contains(&v));
            }
        }
    }

    #[test]
    fn phi_plus_and_phi_minus_fidelities_are_anti_phase() {
        let hists = cascade_histograms(1e4, 0.0, 8.0, 0.0);
        let c = curve(&hists, 8.0).unwrap();
        let a: Vec<f64> = c.f_phi_plus.iter().map(|f| f - 0.25).collect();
        let b: Vec<f64> = c.f_phi_minus.iter().map(|f| f - 0.25).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (ma, mb) = (mean(&a), mean(&b));
        let mut cov = 0.0;
        let mut va = 0.0;
        let mut vb = 0.0;
        for i in 0..a.len() {
            cov += (a[i] - ma) * (b[i] - mb);
            va += (a[i] - ma).powi(2);
            vb += (b[i] - mb).powi(2);
        }
        let r = cov / (va * vb).sqrt();
        assert!(r < -0.9, "correlation {r}");
    }

    #[test]
    fn concurrence_rides_above_the_oscillating_fidelities() {
        let hists = cascade_histograms(1e4, 0.0, 8.0, 0.0);
        let c = curve(&hists, 8.0).unwrap();
        // The FSS rotation moves weight between φ⁺ and φ⁻ but never
        // destroys entanglement: per-bin concurrence stays near 1 while
        // each fidelity oscillates down to ~0.
        let min_conc = c.concurrence.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min_conc > 0.98, "minimum concurrence {min_conc}");
        let min_f = c.f_phi_plus.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min_f < 0.1, "fidelity should dip near zero, min {min_f}");
    }

    #[test]
    fn low_count_bins_are_omitted() {
        let mut hists = cascade_histograms(1e4, 0.0, 8.0, 0.0);
        // Starve a mid-curve coarse bin across all settings.
        for h in &mut hists {
            h.bins[77] = 0.01;
        }
        let c = curve(&hists, 8.0).unwrap();
        let center = (77.0 + 0.5) * 8.0;
        assert!(!c.bin_centers_ps.iter().any(|&t| (t - center).abs() < 1e-9));
    }

    #[test]
    fn curve_validates_binning_compatibility() {
        let hists = cascade_histograms(1e3, 0.0, 8.0, 0.0);
        assert_eq!(curve(&hists, 12.0).unwrap_err().exit_code(), 2);
        let mut mixed_bins = cascade_histograms(1e3, 0.0, 8.0, 0.0);
        mixed_bins[3].bin_width_ps = 4.0;
        assert_eq!(curve(&mixed_bins, 8.0).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn rebinned_curve_matches_directly_binned_curve() {
        let fine = cascade_histograms(1e4, 0.0, 4.0, 0.0);
        let coarse = cascade_histograms(1e4, 0.0, 8.0, 0.0);
        let c_re = curve(&fine, 8.0).unwrap();
        let c_direct = curve(&coarse, 8.0).unwrap();
        assert_eq!(c_re.len(), c_direct.len());
        for i in 0..c_re.len() {
            assert_abs_diff_eq!(c_re.f_phi_plus[i], c_direct.f_phi_plus[i], epsilon = 1e-3);
        }
    }

    #[test]
    fn decay_average_of_a_constant_is_that_constant() {
        let c = EntanglementCurve {
            bin_centers_ps: vec![4.0, 12.0, 20.0, 28.0],
            f_phi_plus: vec![0.7; 4],
            f_phi_minus: vec![0.1; 4],
            concurrence: vec![0.42; 4],
            counts_per_bin: vec![1000, 100, 10, 1],
        };
        let avg = decay_time_average(&c, Measure::Concurrence, 100.0).unwrap();
        assert_abs_diff_eq!(avg, 0.42, epsilon = 1e-12);
    }

    #[test]
    fn decay_average_weights_by_counts_and_respects_the_window() {
        let c = EntanglementCurve {
            bin_centers_ps: vec![4.0, 12.0, 500.0],
            f_phi_plus: vec![1.0, 0.0, 0.0],
            f_phi_minus: vec![0.0; 3],
            concurrence: vec![0.0; 3],
            counts_per_bin: vec![300, 100, 1_000_000],
        };
        // Third bin is outside the window; weighted mean = 300/400.
        let avg = decay_time_average(&c, Measure::FidelityPhiPlus, 171.0).unwrap();
        assert_abs_diff_eq!(avg, 0.75, epsilon = 1e-12);
        // Empty window errors.
        assert_eq!(
            decay_time_average(&c, Measure::FidelityPhiPlus, 1.0)
                .unwrap_err()
                .exit_code(),
            2
        );
    }

    #[test]
    fn ideal_cascade_has_unit_average_concurrence() {
        let hists = cascade_histograms(1e4, 0.0, 8.0, 0.0);
        let c = curve(&hists, 8.0).unwrap();
        let avg = decay_time_average(&c, Measure::Concurrence, 171.0).unwrap();
        assert!(avg > 0.99, "average concurrence {avg}");
    }

    #[test]
    fn decay_average_is_stable_under_bin_refinement() {
        let avg8 = decay_time_average(
            &curve(&cascade_histograms(1e4, 0.0, 8.0, 0.0), 8.0).unwrap(),
            Measure::Concurrence,
            171.0,
        )
        .unwrap();
        let avg4 = decay_time_average(
            &curve(&cascade_histograms(1e4, 0.0, 4.0, 0.0), 4.0).unwrap(),
            Measure::Concurrence,
            171.0,
        )
        .unwrap();
        assert!((avg8 - avg4).abs() < 1e-3, "averages {avg8} vs {avg4}");
    }

    #[test]
    fn model_limits_match_the_ideal_fringe() {
        // No noise, unit visibility: perfect oscillation between 1 and 0.
        assert_abs_diff_eq!(model_fidelity(0.0, 1e4, 0.0, 2.1, 171.0, 1.0), 1.0, epsilon = 1e-12);
        let half_period = crate::consts::fss_period_ps(2.1) / 2.0;
        assert_abs_diff_eq!(
            model_fidelity(half_period, 1e4, 0.0, 2.1, 171.0, 1.0),
            0.0,
            epsilon = 1e-9
        );
        // Zero signal: white-noise floor.
        assert_abs_diff_eq!(model_fidelity(50.0, 0.0, 10.0, 2.1, 171.0, 1.0), 0.25, epsilon = 1e-12);
    }

    fn model_curve(s: f64, n: f64, fss: f64, t1: f64, v: f64) -> EntanglementCurve {
        let n_bins = (span_ps() / 8.0).floor() as usize;
        let mut c = EntanglementCurve {
            bin_centers_ps: Vec::new(),
            f_phi_plus: Vec::new(),
            f_phi_minus: Vec::new(),
            concurrence: Vec::new(),
            counts_per_bin: Vec::new(),
        };
        for b in 0..n_bins {
            let t = (b as f64 + 0.5) * 8.0;
            let counts = s * (-t / t1).exp() + n;
            if counts < MIN_BIN_COINCIDENCES {
                continue;
            }
            c.bin_centers_ps.push(t);
            c.f_phi_plus.push(model_fidelity(t, s, n, fss, t1, v));
            c.f_phi_minus.push(0.0);
            c.concurrence.push(0.0);
            c.counts_per_bin.push(counts.round() as u64);
        }
        c
    }

    #[test]
    fn fit_round_trips_model_generated_data() {
        let c = model_curve(1e4, 10.0, 2.1, 171.0, 0.97);
        let fit = fit_fidelity(&c, 10.0).unwrap();
        assert!(fit.converged);
        assert!((fit.signal_amplitude - 1e4).abs() / 1e4 < 0.02, "s = {}", fit.signal_amplitude);
        assert!((fit.fss_fit_uev - 2.1).abs() / 2.1 < 0.02, "fss = {}", fit.fss_fit_uev);
        assert!((fit.t1_fit_ps - 171.0).abs() / 171.0 < 0.02, "t1 = {}", fit.t1_fit_ps);
        assert!((fit.visibility - 0.97).abs() / 0.97 < 0.02, "v = {}", fit.visibility);
    }

    #[test]
    fn fit_residuals_are_unbiased_on_perturbed_data() {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(4242);
        let mut c = model_curve(1e4, 10.0, 2.1, 171.0, 0.95);
        for f in c.f_phi_plus.iter_mut() {
            *f = (*f + rng.gen_range(-0.01..0.01)).clamp(0.0, 1.0);
        }
        let fit = fit_fidelity(&c, 10.0).unwrap();
        let mean_residual: f64 = c
            .bin_centers_ps
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                model_fidelity(
                    t,
                    fit.signal_amplitude,
                    fit.noise_floor,
                    fit.fss_fit_uev,
                    fit.t1_fit_ps,
                    fit.visibility,
                ) - c.f_phi_plus[i]
            })
            .sum::<f64>()
            / c.len() as f64;
        assert!(mean_residual.abs() < 0.005, "mean residual {mean_residual}");
        // Uncertainties are finite and small relative to the values.
        assert!(fit.sigma_fss_uev.is_finite() && fit.sigma_fss_uev < 0.1);
        assert!(fit.sigma_visibility.is_finite() && fit.sigma_visibility < 0.1);
    }

    #[test]
    fn fit_requires_enough_bins_and_a_sane_floor() {
        let c = model_curve(1e4, 10.0, 2.1, 171.0, 0.95);
        let starved = EntanglementCurve {
            bin_centers_ps: c.bin_centers_ps[..10].to_vec(),
            f_phi_plus: c.f_phi_plus[..10].to_vec(),
            f_phi_minus: c.f_phi_minus[..10].to_vec(),
            concurrence: c.concurrence[..10].to_vec(),
            counts_per_bin: c.counts_per_bin[..10].to_vec(),
        };
        assert_eq!(fit_fidelity(&starved, 10.0).unwrap_err().exit_code(), 2);
        assert_eq!(fit_fidelity(&c, f64::NAN).unwrap_err().exit_code(), 2);
        assert_eq!(fit_fidelity(&c, -1.0).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn fit_model_json_round_trips_unconstrained_sigmas() {
        // A zero noise floor freezes s and T1; their σ = ∞ must survive a
        // JSON cycle (as null) instead of poisoning the file.
        let fit = FitModel {
            signal_amplitude: 700.0,
            noise_floor: 0.0,
            fss_fit_uev: 2.095,
            t1_fit_ps: 171.0,
            visibility: 0.93,
            sigma_signal_amplitude: f64::INFINITY,
            sigma_fss_uev: 0.012,
            sigma_t1_ps: f64::INFINITY,
            sigma_visibility: 0.015,
            chi2_per_dof: 1.05,
            iterations: 23,
            converged: true,
        };
        let json = serde_json::to_string(&fit).unwrap();
        assert!(json.contains("\"sigma_t1_ps\":null"));
        let back: FitModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, fit);
    }

    #[test]
    fn sideband_floor_measures_the_accidental_level() {
        // Flat accidentals of 3 counts per 8 ps bin summed over settings.
        // Modest flux keeps true-signal leakage into the sideband (≈11
        // lifetimes out) negligible.
        let hists = cascade_histograms(1e3, 0.0, 8.0, 3.0);
        let floor = sideband_noise_floor(&hists, 8.0).unwrap();
        assert_abs_diff_eq!(floor, 3.0, epsilon = 0.1);
        // Noiseless histograms: only residual signal tails remain in the
        // sideband (the window starts ≈ 10.5 lifetimes after the pulse),
        // orders of magnitude below the zero-delay peak.
        let clean = cascade_histograms(1e3, 0.0, 8.0, 0.0);
        let floor = sideband_noise_floor(&clean, 8.0).unwrap();
        let peak: f64 = clean.iter().map(|h| h.bins[0]).sum();
        assert!(floor < 1e-4 * peak, "clean sideband floor {floor} vs peak {peak}");
    }
}
