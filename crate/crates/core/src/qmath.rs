//! Exact two-qubit state algebra for the cascade's polarization state.
//!
//! Basis order is fixed as (HH, HV, VH, VV), first slot the biexciton
//! (XX) photon, second the exciton (X) photon. The cascade emits
//!
//! |ψ(t)⟩ = (|HH⟩ + e^{iφ(t)}|VV⟩)/√2,   φ(t) = FSS·t/ħ,
//!
//! i.e. a state rotating between φ⁺ and φ⁻ at the fine-structure
//! splitting frequency; its density matrix carries the phase on the outer
//! anti-diagonal corners. Everything here is a pure function of immutable
//! values and safe for concurrent use.

use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};
use num_complex::Complex;

use crate::consts;
use crate::{Error, Result};

pub type C64 = Complex<f64>;
/// Two-qubit pure state, amplitudes in basis order (HH, HV, VH, VV).
pub type StateVector = Vector4<C64>;
/// Two-qubit density matrix in the same basis; Hermitian, trace one, PSD.
pub type DensityMatrix = Matrix4<C64>;
/// Single-qubit (polarization) operator.
pub type Unitary = Matrix2<C64>;

const ZERO: C64 = Complex::new(0.0, 0.0);
const ONE: C64 = Complex::new(1.0, 0.0);

/// Source parameters governing the emitted two-photon state and timing.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CascadeParams {
    /// Exciton fine-structure splitting, µeV.
    pub fss_uev: f64,
    /// Exciton (X) lifetime, ps — sets the XX–X delay distribution.
    pub t1_x_ps: f64,
    /// Biexciton (XX) lifetime, ps — offsets emission from the pulse.
    pub t1_xx_ps: f64,
    /// Laser repetition period, ns.
    pub t_rep_ns: f64,
}

impl CascadeParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("fss_uev", self.fss_uev),
            ("t1_x_ps", self.t1_x_ps),
            ("t1_xx_ps", self.t1_xx_ps),
            ("t_rep_ns", self.t_rep_ns),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!(
                    "cascade parameter {name} must be strictly positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// FSS oscillation period T_P = h/FSS, ps (derived, never stored).
    pub fn oscillation_period_ps(&self) -> f64 {
        consts::fss_period_ps(self.fss_uev)
    }

    pub fn t_rep_ps(&self) -> f64 {
        self.t_rep_ns * 1e3
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BellState {
    PhiPlus,
    PhiMinus,
    PsiPlus,
    PsiMinus,
}

impl BellState {
    pub const ALL: [BellState; 4] = [
        BellState::PhiPlus,
        BellState::PhiMinus,
        BellState::PsiPlus,
        BellState::PsiMinus,
    ];
}

/// The named maximally entangled state; φ± = (|HH⟩ ± |VV⟩)/√2,
/// ψ± = (|HV⟩ ± |VH⟩)/√2.
pub fn bell_state(which: BellState) -> StateVector {
    let r = Complex::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    match which {
        BellState::PhiPlus => Vector4::new(r, ZERO, ZERO, r),
        BellState::PhiMinus => Vector4::new(r, ZERO, ZERO, -r),
        BellState::PsiPlus => Vector4::new(ZERO, r, r, ZERO),
        BellState::PsiMinus => Vector4::new(ZERO, r, -r, ZERO),
    }
}

/// Two-photon state at XX–X delay `delay_ps`:
/// (|HH⟩ + e^{i·FSS·delay/ħ}|VV⟩)/√2.
pub fn cascade_state(delay_ps: f64, params: &CascadeParams) -> StateVector {
    debug_assert!(delay_ps >= 0.0, "emission delay must be non-negative");
    let phi = consts::fss_phase(params.fss_uev, delay_ps);
    let r = std::f64::consts::FRAC_1_SQRT_2;
    Vector4::new(
        Complex::new(r, 0.0),
        ZERO,
        ZERO,
        Complex::from_polar(r, phi),
    )
}

/// Density matrix of [`cascade_state`]: outer diagonals 1/2, outer
/// anti-diagonal corners (1/2)·e^{∓i·FSS·delay/ħ}, every other entry 0.
pub fn cascade_density(delay_ps: f64, params: &CascadeParams) -> DensityMatrix {
    let phi = consts::fss_phase(params.fss_uev, delay_ps);
    let mut rho = Matrix4::zeros();
    rho[(0, 0)] = Complex::new(0.5, 0.0);
    rho[(3, 3)] = Complex::new(0.5, 0.0);
    // ρ_{HH,VV} = e^{−iφ}/2 pairs with the e^{+iφ} amplitude on |VV⟩.
    rho[(0, 3)] = Complex::from_polar(0.5, -phi);
    rho[(3, 0)] = Complex::from_polar(0.5, phi);
    rho
}

/// |ψ⟩⟨ψ| for a pure state.
pub fn outer_product(psi: &StateVector) -> DensityMatrix {
    psi * psi.adjoint()
}

/// Kronecker product of two single-qubit states, XX slot first.
pub fn kron_state(a: &Vector2<C64>, b: &Vector2<C64>) -> StateVector {
    Vector4::new(a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1])
}

/// Kronecker product of two single-qubit operators, XX slot first.
pub fn kron_op(a: &Unitary, b: &Unitary) -> Matrix4<C64> {
    a.kronecker(b)
}

/// The maximally mixed two-qubit state I/4.
pub fn mixed_state() -> DensityMatrix {
    Matrix4::identity() * Complex::new(0.25, 0.0)
}

/// (1−p)·ρ + p·I/4.
pub fn mix_with_white_noise(rho: &DensityMatrix, noise_fraction: f64) -> Result<DensityMatrix> {
    if !(0.0..=1.0).contains(&noise_fraction) {
        return Err(Error::invalid(format!(
            "noise fraction must lie in [0,1], got {noise_fraction}"
        )));
    }
    let p = Complex::new(noise_fraction, 0.0);
    Ok(rho * (ONE - p) + Matrix4::identity() * (p * Complex::new(0.25, 0.0)))
}

/// Largest entrywise deviation of U†U from the identity.
pub fn unitarity_defect(u: &Unitary) -> f64 {
    let d = u.adjoint() * u - Matrix2::identity();
    d.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// (U_A ⊗ U_B) ρ (U_A ⊗ U_B)† — polarization rotation on each arm.
pub fn apply_local_unitary(rho: &DensityMatrix, u_a: &Unitary, u_b: &Unitary) -> Result<DensityMatrix> {
    const TOL: f64 = 1e-9;
    for (name, u) in [("u_a", u_a), ("u_b", u_b)] {
        let defect = unitarity_defect(u);
        if defect > TOL {
            return Err(Error::invalid(format!(
                "{name} is not unitary (‖U†U − I‖_max = {defect:.3e})"
            )));
        }
    }
    let w = kron_op(u_a, u_b);
    Ok(w * rho * w.adjoint())
}

/// ⟨target|ρ|target⟩. The imaginary residue is numerical noise for valid
/// inputs and is discarded.
pub fn fidelity_to_state(rho: &DensityMatrix, target: &StateVector) -> f64 {
    let f = (target.adjoint() * rho * target)[(0, 0)];
    debug_assert!(f.im.abs() < 1e-9, "fidelity should be real, got {f}");
    f.re
}

/// Tr(ρ²).
pub fn purity(rho: &DensityMatrix) -> f64 {
    (rho * rho).trace().re
}

/// Eigenvalues of a Hermitian 4×4, descending.
fn hermitian_eigenvalues_desc(m: &Matrix4<C64>) -> [f64; 4] {
    let eig = nalgebra::SymmetricEigen::new(*m);
    let mut ev = [eig.eigenvalues[0], eig.eigenvalues[1], eig.eigenvalues[2], eig.eigenvalues[3]];
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

/// Hermitian square root, with eigenvalues in [−1e-9, 0) clamped to zero
/// (numerical PSD noise tolerance).
fn hermitian_sqrt(m: &Matrix4<C64>) -> Matrix4<C64> {
    let eig = nalgebra::SymmetricEigen::new(*m);
    let mut out = Matrix4::zeros();
    for k in 0..4 {
        let lambda = eig.eigenvalues[k].max(0.0);
        let v = eig.eigenvectors.column(k);
        out += v * v.adjoint() * Complex::new(lambda.sqrt(), 0.0);
    }
    out
}

/// Wootters concurrence C(ρ) = max(0, λ₁−λ₂−λ₃−λ₄).
///
/// The λᵢ are the descending square roots of the eigenvalues of
/// ρ·(σy⊗σy)·ρ*·(σy⊗σy). They are computed through the Hermitian form
/// √ρ·ρ̃·√ρ which shares the spectrum but admits a stable symmetric
/// eigensolve. Eigenvalues below 1e-12 of the largest are treated as
/// exact zeros: for pure states three of the four λᵢ vanish identically,
/// and square-rooting raw O(1e-16) eigensolver residue would otherwise
/// contaminate C at the 1e-8 level.
pub fn concurrence(rho: &DensityMatrix) -> f64 {
    let rho_tilde = spin_flip(rho);
    let sqrt_rho = hermitian_sqrt(rho);
    let m = sqrt_rho * rho_tilde * sqrt_rho;
    // Enforce Hermiticity lost to rounding before the symmetric solve.
    let m = (m + m.adjoint()) * Complex::new(0.5, 0.0);
    let ev = hermitian_eigenvalues_desc(&m);
    let floor = 1e-12 * ev[0].max(0.0);
    let lambda: Vec<f64> = ev
        .iter()
        .map(|&x| if x > floor { x.sqrt() } else { 0.0 })
        .collect();
    (lambda[0] - lambda[1] - lambda[2] - lambda[3]).max(0.0)
}

/// ρ̃ = (σy⊗σy) ρ* (σy⊗σy).
fn spin_flip(rho: &DensityMatrix) -> Matrix4<C64> {
    let i = Complex::new(0.0, 1.0);
    let sy = Matrix2::new(ZERO, -i, i, ZERO);
    let syy = kron_op(&sy, &sy);
    syy * rho.conjugate() * syy
}

/// Diagnostic bundle for the density-matrix invariants (Hermiticity
/// defect, trace deviation, most negative eigenvalue).
pub fn density_defects(rho: &DensityMatrix) -> (f64, f64, f64) {
    let herm = (rho - rho.adjoint())
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    let trace_dev = (rho.trace() - ONE).norm();
    let sym = (rho + rho.adjoint()) * Complex::new(0.5, 0.0);
    let min_eig = hermitian_eigenvalues_desc(&sym)[3];
    (herm, trace_dev, min_eig)
}
