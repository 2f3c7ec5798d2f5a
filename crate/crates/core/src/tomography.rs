//! Polarization-analyzer simulation and two-qubit state reconstruction.
//!
//! One tomography run records coincidence histograms for a set of
//! projective settings (the canonical 16-setting set, or the overcomplete
//! 36-setting variant), each accumulated from the *same* underlying click
//! streams with per-setting projection thinning — mirroring a sequential
//! acquisition in which every setting sees statistically identical source
//! and channel behaviour. Reconstruction is Poisson maximum likelihood
//! over a positive-by-construction Cholesky parameterization (see
//! [`mle`]), seeded by linear inversion.

pub mod mle;

use std::collections::VecDeque;

use nalgebra::{Matrix4, Vector2};
use num_complex::Complex;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::cascade::{DetectionRecord, Origin};
use crate::qmath::{
    bell_state, fidelity_to_state, kron_state, BellState, DensityMatrix, StateVector, Unitary, C64,
};
use crate::{Error, Result};

pub use mle::{mle_reconstruct, mle_reconstruct_vectors, TomographyResult};

/// Six-state polarization alphabet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pol {
    H,
    V,
    D,
    A,
    R,
    L,
}

impl Pol {
    pub const ALL: [Pol; 6] = [Pol::H, Pol::V, Pol::D, Pol::A, Pol::R, Pol::L];
}

impl std::fmt::Display for Pol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

impl std::str::FromStr for Pol {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "H" => Ok(Pol::H),
            "V" => Ok(Pol::V),
            "D" => Ok(Pol::D),
            "A" => Ok(Pol::A),
            "R" => Ok(Pol::R),
            "L" => Ok(Pol::L),
            other => Err(Error::invalid(format!("unknown polarization label {other:?}"))),
        }
    }
}

/// Single-qubit projector state for a basis letter:
/// H=(1,0), V=(0,1), D=(1,1)/√2, A=(1,−1)/√2, R=(1,−i)/√2, L=(1,i)/√2.
pub fn projector_vector(label: Pol) -> Vector2<C64> {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let c = |re: f64, im: f64| Complex::new(re, im);
    match label {
        Pol::H => Vector2::new(c(1.0, 0.0), c(0.0, 0.0)),
        Pol::V => Vector2::new(c(0.0, 0.0), c(1.0, 0.0)),
        Pol::D => Vector2::new(c(r, 0.0), c(r, 0.0)),
        Pol::A => Vector2::new(c(r, 0.0), c(-r, 0.0)),
        Pol::R => Vector2::new(c(r, 0.0), c(0.0, -r)),
        Pol::L => Vector2::new(c(r, 0.0), c(0.0, r)),
    }
}

/// A projective basis pair: XX-arm analyzer ⊗ X-arm analyzer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MeasurementSetting {
    pub projector_xx: Pol,
    pub projector_x: Pol,
}

impl MeasurementSetting {
    pub fn new(projector_xx: Pol, projector_x: Pol) -> Self {
        MeasurementSetting { projector_xx, projector_x }
    }

    /// Two-qubit projector state |s_xx⟩⊗|s_x⟩.
    pub fn projector(&self) -> StateVector {
        kron_state(
            &projector_vector(self.projector_xx),
            &projector_vector(self.projector_x),
        )
    }
}

impl std::fmt::Display for MeasurementSetting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}{:?}", self.projector_xx, self.projector_x)
    }
}

/// The canonical 16-setting tomography set (James et al. ordering).
pub fn james_16() -> Vec<MeasurementSetting> {
    use Pol::*;
    [
        (H, H), (H, V), (V, V), (V, H),
        (R, H), (R, V), (D, V), (D, H),
        (D, R), (D, D), (R, D), (H, D),
        (V, D), (V, L), (H, L), (R, L),
    ]
    .into_iter()
    .map(|(a, b)| MeasurementSetting::new(a, b))
    .collect()
}

/// Overcomplete 36-setting set: all ordered pairs of the six-state alphabet.
pub fn full_36() -> Vec<MeasurementSetting> {
    let mut v = Vec::with_capacity(36);
    for a in Pol::ALL {
        for b in Pol::ALL {
            v.push(MeasurementSetting::new(a, b));
        }
    }
    v
}

/// Per-setting coincidence histogram over one repetition period.
/// Bin values are f64 so that analytically generated expected counts can
/// flow through the same reconstruction path as sampled integers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceHistogram {
    pub setting: MeasurementSetting,
    pub bin_width_ps: f64,
    /// Histogram span (the repetition period), ps.
    pub span_ps: f64,
    pub bins: Vec<f64>,
    pub total_singles_xx: f64,
    pub total_singles_x: f64,
}

impl CoincidenceHistogram {
    pub fn n_bins(span_ps: f64, bin_width_ps: f64) -> usize {
        (span_ps / bin_width_ps).ceil() as usize
    }

    pub fn bin_center_ps(&self, idx: usize) -> f64 {
        (idx as f64 + 0.5) * self.bin_width_ps
    }

    /// Sum of counts whose bin centers fall in [start, end).
    pub fn window_counts(&self, start_ps: f64, end_ps: f64) -> f64 {
        self.bins
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                let c = self.bin_center_ps(*i);
                c >= start_ps && c < end_ps
            })
            .map(|(_, &v)| v)
            .sum()
    }

    pub fn total(&self) -> f64 {
        self.bins.iter().sum()
    }
}

/// Projection probabilities of one emitted pair for a given setting.
///
/// `joint` is the probability that both photons pass their analyzers;
/// the marginals are single-arm pass probabilities. Any density matrix
/// yields values satisfying the Fréchet bounds
/// max(0, m_xx + m_x − 1) ≤ joint ≤ min(m_xx, m_x).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairProjection {
    pub joint: f64,
    pub marginal_xx: f64,
    pub marginal_x: f64,
}

/// Source of per-pair projection probabilities, keyed by pulse index.
/// Implementations carry the emitted-state physics (delay phase, white
/// noise, channel drift at the pair's wall-clock time).
pub trait PairStateLookup: Sync {
    fn projection(&self, pulse_index: u64, setting: &MeasurementSetting) -> PairProjection;
}

/// Lookup for a fixed (pulse-independent) two-qubit state — the workhorse
/// for reconstruction tests and calibration checks.
#[derive(Debug, Clone)]
pub struct FixedStateLookup {
    rho: DensityMatrix,
}

impl FixedStateLookup {
    pub fn new(rho: DensityMatrix) -> Self {
        FixedStateLookup { rho }
    }
}

impl PairStateLookup for FixedStateLookup {
    fn projection(&self, _pulse_index: u64, setting: &MeasurementSetting) -> PairProjection {
        let psi = setting.projector();
        let joint = fidelity_to_state(&self.rho, &psi);
        let a = projector_vector(setting.projector_xx);
        let b = projector_vector(setting.projector_x);
        let rho_a = partial_trace_x(&self.rho);
        let rho_b = partial_trace_xx(&self.rho);
        PairProjection {
            joint,
            marginal_xx: (a.adjoint() * rho_a * a)[(0, 0)].re,
            marginal_x: (b.adjoint() * rho_b * b)[(0, 0)].re,
        }
    }
}

/// Reduced state of the XX photon (trace over the X slot).
pub fn partial_trace_x(rho: &DensityMatrix) -> nalgebra::Matrix2<C64> {
    nalgebra::Matrix2::new(
        rho[(0, 0)] + rho[(1, 1)],
        rho[(0, 2)] + rho[(1, 3)],
        rho[(2, 0)] + rho[(3, 1)],
        rho[(2, 2)] + rho[(3, 3)],
    )
}

/// Reduced state of the X photon (trace over the XX slot).
pub fn partial_trace_xx(rho: &DensityMatrix) -> nalgebra::Matrix2<C64> {
    nalgebra::Matrix2::new(
        rho[(0, 0)] + rho[(2, 2)],
        rho[(0, 1)] + rho[(2, 3)],
        rho[(1, 0)] + rho[(3, 2)],
        rho[(1, 1)] + rho[(3, 3)],
    )
}

/// Simulate one tomography setting over prepared click streams.
///
/// Signal pairs pass the two analyzers with the joint probability given
/// by `lookup` (drawn as one correlated four-outcome sample per pulse so
/// that arm correlations are exact); lone signal photons — partner lost
/// upstream — pass with their marginal; noise records pass with 1/2 per
/// arm. Surviving clicks are then matched greedily in time order and a
/// coincidence is an (XX, X) pair with delay in [0, `coincidence_window_ps`).
///
/// Draw order is frozen: signal pulses ascending (one uniform each), then
/// XX-arm noise records in stream order, then X-arm noise records.
pub fn simulate_setting(
    records_xx: &[DetectionRecord],
    records_x: &[DetectionRecord],
    lookup: &dyn PairStateLookup,
    setting: &MeasurementSetting,
    coincidence_window_ps: f64,
    bin_width_ps: f64,
    rng: &mut ChaCha12Rng,
) -> Result<CoincidenceHistogram> {
    if !(coincidence_window_ps > 0.0) || !(bin_width_ps > 0.0) {
        return Err(Error::invalid("coincidence window and bin width must be positive"));
    }
    debug_assert!(records_xx.windows(2).all(|w| w[0].timestamp_ps <= w[1].timestamp_ps));
    debug_assert!(records_x.windows(2).all(|w| w[0].timestamp_ps <= w[1].timestamp_ps));

    // Signal records per arm keyed by pulse (at most one pair per pulse).
    let mut sig_xx: Vec<(u64, f64)> = records_xx
        .iter()
        .filter(|r| r.origin == Origin::Signal)
        .map(|r| (r.pulse_index, r.timestamp_ps))
        .collect();
    let mut sig_x: Vec<(u64, f64)> = records_x
        .iter()
        .filter(|r| r.origin == Origin::Signal)
        .map(|r| (r.pulse_index, r.timestamp_ps))
        .collect();
    sig_xx.sort_unstable_by_key(|&(p, _)| p);
    sig_x.sort_unstable_by_key(|&(p, _)| p);

    let mut kept_xx: Vec<f64> = Vec::new();
    let mut kept_x: Vec<f64> = Vec::new();

    // Merge-join the two signal lists on pulse index.
    let (mut i, mut j) = (0usize, 0usize);
    while i < sig_xx.len() || j < sig_x.len() {
        let pa = sig_xx.get(i).map(|&(p, _)| p);
        let pb = sig_x.get(j).map(|&(p, _)| p);
        match (pa, pb) {
            (Some(a), Some(b)) if a == b => {
                let pp = lookup.projection(a, setting);
                let u: f64 = rng.gen();
                // Correlated four-outcome draw:
                // [0,q) both | [q,m_xx) XX only | [m_xx, m_xx+m_x−q) X only.
                if u < pp.joint {
                    kept_xx.push(sig_xx[i].1);
                    kept_x.push(sig_x[j].1);
                } else if u < pp.marginal_xx {
                    kept_xx.push(sig_xx[i].1);
                } else if u < pp.marginal_xx + pp.marginal_x - pp.joint {
                    kept_x.push(sig_x[j].1);
                }
                i += 1;
                j += 1;
            }
            (Some(a), b) if b.map_or(true, |b| a < b) => {
                let pp = lookup.projection(a, setting);
                if rng.gen::<f64>() < pp.marginal_xx {
                    kept_xx.push(sig_xx[i].1);
                }
                i += 1;
            }
            _ => {
                let pp = lookup.projection(pb.unwrap(), setting);
                if rng.gen::<f64>() < pp.marginal_x {
                    kept_x.push(sig_x[j].1);
                }
                j += 1;
            }
        }
    }

    // Unpolarized noise: each analyzer transmits half.
    for r in records_xx.iter().filter(|r| r.origin != Origin::Signal) {
        if rng.gen::<f64>() < 0.5 {
            kept_xx.push(r.timestamp_ps);
        }
    }
    for r in records_x.iter().filter(|r| r.origin != Origin::Signal) {
        if rng.gen::<f64>() < 0.5 {
            kept_x.push(r.timestamp_ps);
        }
    }
    kept_xx.sort_unstable_by(f64::total_cmp);
    kept_x.sort_unstable_by(f64::total_cmp);

    // Greedy chronological matching: every X click takes the earliest
    // still-unmatched XX click within the window.
    let n_bins = CoincidenceHistogram::n_bins(coincidence_window_ps, bin_width_ps);
    let mut bins = vec![0.0f64; n_bins];
    let mut pending: VecDeque<f64> = VecDeque::new();
    let mut i = 0usize;
    for &tx in &kept_x {
        while i < kept_xx.len() && kept_xx[i] <= tx {
            pending.push_back(kept_xx[i]);
            i += 1;
        }
        while let Some(&front) = pending.front() {
            if tx - front >= coincidence_window_ps {
                pending.pop_front();
            } else {
                break;
            }
        }
        if let Some(&front) = pending.front() {
            let delta = tx - front;
            if delta >= 0.0 {
                let b = ((delta / bin_width_ps) as usize).min(n_bins - 1);
                bins[b] += 1.0;
                pending.pop_front();
            }
        }
    }

    Ok(CoincidenceHistogram {
        setting: *setting,
        bin_width_ps,
        span_ps: coincidence_window_ps,
        bins,
        total_singles_xx: kept_xx.len() as f64,
        total_singles_x: kept_x.len() as f64,
    })
}

/// The 16 Hermitian basis operators used for linear inversion: four
/// diagonal units, then (symmetric, antisymmetric) pairs for each
/// off-diagonal position.
fn hermitian_basis() -> [Matrix4<C64>; 16] {
    let mut out = [Matrix4::zeros(); 16];
    let one = Complex::new(1.0, 0.0);
    let i_c = Complex::new(0.0, 1.0);
    let mut k = 0;
    for d in 0..4 {
        out[k][(d, d)] = one;
        k += 1;
    }
    for r in 0..4 {
        for c in (r + 1)..4 {
            out[k][(r, c)] = one;
            out[k][(c, r)] = one;
            k += 1;
            out[k][(r, c)] = -i_c;
            out[k][(c, r)] = i_c;
            k += 1;
        }
    }
    out
}

/// Least-squares Born-rule inversion of per-setting counts onto a
/// Hermitian (not necessarily positive) matrix.
///
/// Counts are normalized by the total flux estimated from a complete
/// orthogonal group among the settings (the rectilinear quadruple
/// {HH,HV,VH,VV} when present), falling back to `4·total/n_settings`.
pub fn linear_inversion(counts: &[f64], settings: &[MeasurementSetting]) -> Result<Matrix4<C64>> {
    let vecs: Vec<StateVector> = settings.iter().map(|s| s.projector()).collect();
    linear_inversion_vectors(counts, &vecs, flux_estimate(counts, settings))
}

/// Flux normalization N̂ for count vectors on the given settings.
pub fn flux_estimate(counts: &[f64], settings: &[MeasurementSetting]) -> f64 {
    use Pol::*;
    let rect: [MeasurementSetting; 4] = [
        MeasurementSetting::new(H, H),
        MeasurementSetting::new(H, V),
        MeasurementSetting::new(V, H),
        MeasurementSetting::new(V, V),
    ];
    let mut sum = 0.0;
    let mut found = 0;
    for target in rect {
        if let Some(idx) = settings.iter().position(|s| *s == target) {
            sum += counts[idx];
            found += 1;
        }
    }
    if found == 4 && sum > 0.0 {
        sum
    } else {
        4.0 * counts.iter().sum::<f64>() / counts.len().max(1) as f64
    }
}

/// Linear inversion against explicit projector vectors with a given flux
/// normalization.
pub fn linear_inversion_vectors(
    counts: &[f64],
    projectors: &[StateVector],
    flux: f64,
) -> Result<Matrix4<C64>> {
    if counts.len() != projectors.len() {
        return Err(Error::invalid(format!(
            "{} counts for {} settings",
            counts.len(),
            projectors.len()
        )));
    }
    if counts.len() < 16 {
        return Err(Error::invalid("need at least 16 settings for state inversion"));
    }
    if !(flux > 0.0) || !flux.is_finite() {
        return Err(Error::numeric(format!("flux estimate {flux} is unusable")));
    }
    let basis = hermitian_basis();
    let mut design = nalgebra::DMatrix::<f64>::zeros(counts.len(), 16);
    for (s, psi) in projectors.iter().enumerate() {
        for (k, b) in basis.iter().enumerate() {
            design[(s, k)] = (psi.adjoint() * b * psi)[(0, 0)].re;
        }
    }
    let rhs = nalgebra::DVector::from_iterator(counts.len(), counts.iter().map(|&c| c / flux));
    let svd = nalgebra::SVD::new(design, true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-10 * smax) {
        return Err(Error::numeric(
            "singular measurement design: settings are not informationally complete",
        ));
    }
    let x = svd
        .solve(&rhs, 1e-12 * smax)
        .map_err(|e| Error::numeric(format!("SVD solve failed: {e}")))?;
    let mut rho = Matrix4::zeros();
    for (k, b) in basis.iter().enumerate() {
        rho += b * Complex::new(x[k], 0.0);
    }
    Ok(rho)
}

/// Project a Hermitian matrix onto the density-matrix set: clamp negative
/// eigenvalues to zero and renormalize the trace to one.
pub fn nearest_density_matrix(h: &Matrix4<C64>) -> DensityMatrix {
    project_psd(h, 0.0)
}

/// Eigenvalue-floored PSD projection (floor > 0 yields a strictly
/// positive matrix, used to seed the MLE Cholesky factor).
pub(crate) fn project_psd(h: &Matrix4<C64>, floor: f64) -> DensityMatrix {
    let herm = (h + h.adjoint()) * Complex::new(0.5, 0.0);
    let eig = nalgebra::SymmetricEigen::new(herm);
    let mut out = Matrix4::zeros();
    let mut trace = 0.0;
    for k in 0..4 {
        let lambda = eig.eigenvalues[k].max(floor);
        trace += lambda;
        let v = eig.eigenvectors.column(k);
        out += v * v.adjoint() * Complex::new(lambda, 0.0);
    }
    if trace > 0.0 {
        out /= Complex::new(trace, 0.0);
    } else {
        out = Matrix4::identity() * Complex::new(0.25, 0.0);
    }
    out
}

/// Options for polarization-basis alignment.
#[derive(Debug, Clone, Copy)]
pub struct AlignOptions {
    /// Zero-delay window over which counts are summed, ps.
    pub window_start_ps: f64,
    pub window_end_ps: f64,
    /// Minimum total coincidences in the window (explicit failure below).
    pub min_coincidences: f64,
    /// Termination tolerance on the search angles, radians.
    pub angle_tolerance_rad: f64,
}

impl Default for AlignOptions {
    fn default() -> Self {
        AlignOptions {
            window_start_ps: 0.0,
            window_end_ps: 171.0,
            min_coincidences: 100.0,
            angle_tolerance_rad: 1e-4,
        }
    }
}

/// ZYZ Euler rotation Rz(α)·Ry(β)·Rz(γ).
pub fn euler_unitary(alpha: f64, beta: f64, gamma: f64) -> Unitary {
    let rz = |t: f64| {
        nalgebra::Matrix2::new(
            Complex::from_polar(1.0, -t / 2.0),
            Complex::new(0.0, 0.0),
            Complex::new(0.0, 0.0),
            Complex::from_polar(1.0, t / 2.0),
        )
    };
    let (c, s) = ((beta / 2.0).cos(), (beta / 2.0).sin());
    let ry = nalgebra::Matrix2::new(
        Complex::new(c, 0.0),
        Complex::new(-s, 0.0),
        Complex::new(s, 0.0),
        Complex::new(c, 0.0),
    );
    rz(alpha) * ry * rz(gamma)
}

/// Find per-arm measurement-frame rotations (u_a, u_b) such that
/// reconstructing the windowed counts with projectors
/// (u_a⊗u_b)|ψ_s⟩ maximizes the fidelity of the zero-delay state to φ⁺ —
/// i.e. aligns the analyzers with the source's H/V dipole basis.
///
/// The natural-sounding alternative objective, the concurrence of the
/// reconstructed state, is *flat* in these angles: rotating every
/// projector by a fixed local unitary transforms the likelihood's argmax
/// covariantly, and concurrence is invariant under local unitaries. The
/// fidelity objective breaks that degeneracy and is what basis alignment
/// means operationally (sorting the reconstruction into the φ± frame);
/// maximizing it also restores any concurrence lost to inconsistent
/// inter-setting drift.
///
/// One residual degeneracy remains: correlated pairs (u, ū) leave φ⁺
/// itself invariant, so the fidelity cannot distinguish points along that
/// three-angle manifold. A vanishingly weighted rotation-magnitude
/// penalty picks the minimal-rotation representative, which is the
/// physically meaningful one (already-aligned data maps to the identity).
///
/// Search: derivative-free compass (pattern) search over the six Euler
/// angles, restarted from a 3-per-angle grid per arm, objective evaluated
/// on a linear-inversion reconstruction for speed with a final
/// maximum-likelihood polish.
pub fn align_basis(
    histograms: &[CoincidenceHistogram],
    opts: &AlignOptions,
) -> Result<(Unitary, Unitary)> {
    if histograms.len() < 16 {
        return Err(Error::invalid("alignment needs a full tomography set"));
    }
    let counts: Vec<f64> = histograms
        .iter()
        .map(|h| h.window_counts(opts.window_start_ps, opts.window_end_ps))
        .collect();
    let total: f64 = counts.iter().sum();
    if total < opts.min_coincidences {
        return Err(Error::invalid(format!(
            "insufficient coincidences for alignment: {total:.0} in window, need ≥ {:.0}",
            opts.min_coincidences
        )));
    }
    let settings: Vec<MeasurementSetting> = histograms.iter().map(|h| h.setting).collect();
    let base: Vec<(Vector2<C64>, Vector2<C64>)> = settings
        .iter()
        .map(|s| (projector_vector(s.projector_xx), projector_vector(s.projector_x)))
        .collect();
    let flux = flux_estimate(&counts, &settings);
    let target = bell_state(BellState::PhiPlus);

    let objective = |angles: &[f64; 6], polish: bool| -> f64 {
        let u_a = euler_unitary(angles[0], angles[1], angles[2]);
        let u_b = euler_unitary(angles[3], angles[4], angles[5]);
        let projs: Vec<StateVector> = base
            .iter()
            .map(|(a, b)| kron_state(&(u_a * a), &(u_b * b)))
            .collect();
        let rho = if polish {
            match mle_reconstruct_vectors(&counts, None, &projs) {
                Ok(r) => r.rho,
                Err(_) => return f64::NEG_INFINITY,
            }
        } else {
            match linear_inversion_vectors(&counts, &projs, flux) {
                Ok(h) => nearest_density_matrix(&h),
                Err(_) => return f64::NEG_INFINITY,
            }
        };
        let tie_break: f64 = angles.iter().map(|a| a * a).sum();
        fidelity_to_state(&rho, &target) - 1e-6 * tie_break
    };

    // Restart grid: three values per angle and arm.
    let grid = [-std::f64::consts::FRAC_PI_4, 0.0, std::f64::consts::FRAC_PI_4];
    let mut best = [0.0f64; 6];
    let mut best_val = f64::NEG_INFINITY;
    for &a0 in &grid {
        for &a1 in &grid {
            for &a2 in &grid {
                for &b0 in &grid {
                    for &b1 in &grid {
                        for &b2 in &grid {
                            let cand = [a0, a1, a2, b0, b1, b2];
                            let v = objective(&cand, false);
                            if v > best_val {
                                best_val = v;
                                best = cand;
                            }
                        }
                    }
                }
            }
        }
    }

    let compass = |start: [f64; 6], mut step: f64, floor: f64, polish: bool| -> [f64; 6] {
        let mut x = start;
        let mut fx = objective(&x, polish);
        while step > floor {
            let mut improved = false;
            for d in 0..6 {
                for sgn in [1.0, -1.0] {
                    let mut probe = x;
                    probe[d] += sgn * step;
                    let v = objective(&probe, polish);
                    if v > fx {
                        x = probe;
                        fx = v;
                        improved = true;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        x
    };

    let coarse = compass(best, std::f64::consts::FRAC_PI_4 / 2.0, opts.angle_tolerance_rad, false);
    let fine = compass(coarse, 8.0 * opts.angle_tolerance_rad, opts.angle_tolerance_rad, true);

    Ok((
        euler_unitary(fine[0], fine[1], fine[2]),
        euler_unitary(fine[3], fine[4], fine[5]),
    ))
}
