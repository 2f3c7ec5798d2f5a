//! Physical constants and unit conventions.
//!
//! Internal unit system: time in **ps**, energy in **µeV**, rates in the
//! unit named by each field (`_mhz`, `_hz`, `_ghz`), wall-clock spans in
//! hours or seconds where suffixed. The only physical constants the crate
//! needs are ħ and h in µeV·time units; they are fixed CODATA values and
//! deliberately not configurable.

/// Reduced Planck constant, µeV·ns (CODATA: ħ = 6.582119569×10⁻¹⁶ eV·s).
pub const HBAR_UEV_NS: f64 = 0.6582119569;

/// Planck constant, µeV·ns (CODATA: h = 4.135667696×10⁻¹⁵ eV·s).
pub const H_UEV_NS: f64 = 4.135667696;

/// Reduced Planck constant, µeV·ps.
pub const HBAR_UEV_PS: f64 = HBAR_UEV_NS * 1e3;

/// Planck constant, µeV·ps.
pub const H_UEV_PS: f64 = H_UEV_NS * 1e3;

/// Gaussian FWHM → standard deviation conversion factor (2√(2 ln 2),
/// truncated to the precision used throughout: detector IRF widths are
/// quoted as FWHM, jitter is sampled with σ = FWHM / `FWHM_TO_SIGMA`).
pub const FWHM_TO_SIGMA: f64 = 2.3548;

/// Phase accumulated by the two-photon state between biexciton and
/// exciton emission: φ = FSS·t/ħ.
#[inline]
pub fn fss_phase(fss_uev: f64, delay_ps: f64) -> f64 {
    fss_uev * delay_ps / HBAR_UEV_PS
}

/// Oscillation period T_P = h/FSS, in ps.
#[inline]
pub fn fss_period_ps(fss_uev: f64) -> f64 {
    H_UEV_PS / fss_uev
}
