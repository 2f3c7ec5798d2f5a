//! Maximum-likelihood density-matrix reconstruction.
//!
//! The state is parameterized as ρ = A/Tr A with A = T†T and T a complex
//! lower-triangular matrix carrying 16 real parameters — every parameter
//! vector maps to a physical (Hermitian, PSD, trace-one) state, so the
//! optimizer can roam freely. The Poisson log-likelihood of the observed
//! per-setting coincidence totals,
//!
//!   ℓ(T) = Σ_s [ n_s ln μ_s − μ_s ],   μ_s = ‖T ψ_s‖²,
//!
//! is maximized over the *unnormalized* A, which profiles the unknown
//! flux out of the problem (at the optimum Σμ matches the observed total).
//! Optimization is L-BFGS with analytic gradients and Armijo
//! backtracking, alternating with a multiplicative fixed-point polish for
//! the boundary cases where ρ̂ is rank-deficient and curvature methods
//! slow down; every candidate step of either kind is accepted only if it
//! improves the likelihood, so the likelihood is non-decreasing across
//! accepted iterates by construction.
//!
//! Counts are flux-normalized internally (the maximizer in ρ is invariant
//! under count rescaling) to keep the objective O(1); the reported
//! log-likelihood is converted back to the original scale.

use nalgebra::Matrix4;
use num_complex::Complex;

use crate::qmath::{DensityMatrix, StateVector, C64};
use crate::{Error, Result};

use super::{linear_inversion_vectors, project_psd, MeasurementSetting};

/// Reconstruction output. `log_likelihood` is the Poisson log-likelihood
/// Σ n_s ln μ_s − μ_s at the returned state (constant n_s! terms dropped).
#[derive(Debug, Clone)]
pub struct TomographyResult {
    pub rho: DensityMatrix,
    pub log_likelihood: f64,
    pub iterations: u32,
    pub converged: bool,
}

/// Maximum iterations before the best iterate is returned unconverged.
const MAX_ITERATIONS: u32 = 100_000;
/// Gradient-norm tolerance, scaled by max(1, |ℓ|).
const GRAD_TOL: f64 = 1e-8;
/// Parameter-step tolerance, scaled by max(1, ‖t‖∞).
const STEP_TOL: f64 = 1e-10;

/// Parameter layout of the lower-triangular factor: (row, col, imaginary).
const PARAMS: [(usize, usize, bool); 16] = [
    (0, 0, false),
    (1, 1, false),
    (2, 2, false),
    (3, 3, false),
    (1, 0, false),
    (1, 0, true),
    (2, 0, false),
    (2, 0, true),
    (2, 1, false),
    (2, 1, true),
    (3, 0, false),
    (3, 0, true),
    (3, 1, false),
    (3, 1, true),
    (3, 2, false),
    (3, 2, true),
];

fn build_t(t: &[f64; 16]) -> Matrix4<C64> {
    let mut m = Matrix4::zeros();
    for (k, &(r, c, imag)) in PARAMS.iter().enumerate() {
        if imag {
            m[(r, c)] += Complex::new(0.0, t[k]);
        } else {
            m[(r, c)] += Complex::new(t[k], 0.0);
        }
    }
    m
}

/// Reconstruct from labelled settings. `singles` (per-arm totals for the
/// analyzed window) are accepted for interface completeness and
/// diagnostics; the flux is profiled out of the likelihood, so they do
/// not enter the estimator.
pub fn mle_reconstruct(
    counts: &[f64],
    singles: Option<&[(f64, f64)]>,
    settings: &[MeasurementSetting],
) -> Result<TomographyResult> {
    let vecs: Vec<StateVector> = settings.iter().map(|s| s.projector()).collect();
    mle_reconstruct_vectors(counts, singles, &vecs)
}

/// Reconstruct against explicit projector vectors (used for drift- or
/// alignment-rotated frames).
pub fn mle_reconstruct_vectors(
    counts: &[f64],
    _singles: Option<&[(f64, f64)]>,
    projectors: &[StateVector],
) -> Result<TomographyResult> {
    optimize(counts, projectors, &mut None)
}

#[cfg(test)]
pub(crate) fn mle_with_trace(
    counts: &[f64],
    projectors: &[StateVector],
    trace: &mut Vec<f64>,
) -> Result<TomographyResult> {
    let mut t = Some(trace);
    optimize(counts, projectors, &mut t)
}

fn optimize(
    counts: &[f64],
    projectors: &[StateVector],
    ll_trace: &mut Option<&mut Vec<f64>>,
) -> Result<TomographyResult> {
    if counts.len() != projectors.len() {
        return Err(Error::invalid(format!(
            "{} counts for {} projectors",
            counts.len(),
            projectors.len()
        )));
    }
    if counts.len() < 16 {
        return Err(Error::invalid("tomography needs at least 16 settings"));
    }
    if counts.iter().any(|c| !c.is_finite() || *c < 0.0) {
        return Err(Error::invalid("counts must be finite and non-negative"));
    }
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return Err(Error::numeric("degenerate counts: all settings are zero"));
    }

    // Work with flux-normalized counts: the flux-profiled likelihood's
    // maximizer in ρ is invariant under count rescaling, and an O(1)
    // objective keeps the attainable gradient floor far below the
    // convergence tolerances (at raw counts of 10⁵ the likelihood sits
    // around 10⁷ and double rounding would stall the line search early).
    let counts: Vec<f64> = counts.iter().map(|&n| n / total).collect();
    let counts = counts.as_slice();

    // Seed: linear inversion (also validates informational completeness),
    // floored PSD projection, scaled so that Σμ ≈ Σn. The floor is kept
    // tiny on purpose: on exact data from a pure state the likelihood is
    // *quartically* flat in some rank-raising directions, so whatever the
    // floor injects there is never optimized away and must already be
    // negligible.
    let seed_flux = 0.25;
    let lin = linear_inversion_vectors(counts, projectors, seed_flux)?;
    let rho0 = project_psd(&lin, 1e-7);
    let p_sum: f64 = projectors
        .iter()
        .map(|psi| (psi.adjoint() * rho0 * psi)[(0, 0)].re)
        .sum();
    let scale = 1.0 / p_sum.max(1e-12);
    let a0 = rho0 * Complex::new(scale, 0.0);
    let t0 = reverse_cholesky(&a0)?;

    let mut x = [0.0f64; 16];
    for (k, &(r, c, imag)) in PARAMS.iter().enumerate() {
        x[k] = if imag { t0[(r, c)].im } else { t0[(r, c)].re };
    }

    let eval = |x: &[f64; 16]| -> (f64, [f64; 16]) {
        let t = build_t(x);
        let mut f = 0.0;
        let mut g = [0.0f64; 16];
        for (s, psi) in projectors.iter().enumerate() {
            let w = t * psi;
            let mu: f64 = w.iter().map(|z| z.norm_sqr()).sum();
            let n = counts[s];
            if mu <= 0.0 {
                if n > 0.0 {
                    return (f64::INFINITY, g);
                }
                continue;
            }
            f -= n * mu.ln() - mu;
            let factor = n / mu - 1.0;
            for (k, &(r, c, imag)) in PARAMS.iter().enumerate() {
                // ∂μ/∂t_k = 2 Re( conj(w[r]) · c_k · ψ[c] ), c_k ∈ {1, i}.
                let z = w[r].conj() * psi[c];
                let dmu = if imag { -2.0 * z.im } else { 2.0 * z.re };
                g[k] -= factor * dmu;
            }
        }
        (f, g)
    };

    let value = |x: &[f64; 16]| -> f64 {
        let t = build_t(x);
        let mut f = 0.0;
        for (s, psi) in projectors.iter().enumerate() {
            let w = t * psi;
            let mu: f64 = w.iter().map(|z| z.norm_sqr()).sum();
            let n = counts[s];
            if mu <= 0.0 {
                if n > 0.0 {
                    return f64::INFINITY;
                }
                continue;
            }
            f -= n * mu.ln() - mu;
        }
        f
    };

    // Measurement-sum operator G = Σ_s P_s and its inverse, used by the
    // multiplicative polish phase below. Informational completeness makes
    // G positive-definite.
    let mut g_op: Matrix4<C64> = Matrix4::zeros();
    for psi in projectors {
        g_op += psi * psi.adjoint();
    }
    let g_inv = g_op
        .try_inverse()
        .ok_or_else(|| Error::numeric("singular measurement-sum operator"))?;

    let mu_of = |a: &Matrix4<C64>| -> Vec<f64> {
        projectors
            .iter()
            .map(|psi| (psi.adjoint() * a * psi)[(0, 0)].re)
            .collect()
    };
    let value_mu = |mus: &[f64]| -> f64 {
        let mut f = 0.0;
        for (s, &mu) in mus.iter().enumerate() {
            let n = counts[s];
            if mu <= 0.0 {
                if n > 0.0 {
                    return f64::INFINITY;
                }
                continue;
            }
            f -= n * mu.ln() - mu;
        }
        f
    };

    // L-BFGS with memory 8 and Armijo backtracking, alternating with a
    // gated fixed-point polish. The polish step A ← G⁻¹RAR G⁻¹ with
    // R = Σ_s (n_s/μ_s)P_s has the likelihood's stationary points as fixed
    // points and contracts support-raising components *geometrically* —
    // the regime where curvature-based steps crawl, because the Cholesky
    // parameterization is singular at rank-deficient states.
    const MEM: usize = 8;
    let mut s_hist: Vec<[f64; 16]> = Vec::new();
    let mut y_hist: Vec<[f64; 16]> = Vec::new();
    let mut rho_hist: Vec<f64> = Vec::new();

    let dot = |a: &[f64; 16], b: &[f64; 16]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };
    let inf_norm = |a: &[f64; 16]| -> f64 { a.iter().fold(0.0f64, |m, v| m.max(v.abs())) };

    let (mut f, mut g) = eval(&x);
    if let Some(tr) = ll_trace.as_deref_mut() {
        tr.push(-f);
    }
    let mut converged = false;
    let mut iterations = 0u32;

    loop {
        // --- Curvature phase ---
        s_hist.clear();
        y_hist.clear();
        rho_hist.clear();
        while iterations < MAX_ITERATIONS {
            if inf_norm(&g) < GRAD_TOL * f.abs().max(1.0) {
                converged = true;
                break;
            }

            // Two-loop recursion for the search direction.
            let mut q = g;
            let m = s_hist.len();
            let mut alpha = vec![0.0f64; m];
            for i in (0..m).rev() {
                alpha[i] = rho_hist[i] * dot(&s_hist[i], &q);
                for k in 0..16 {
                    q[k] -= alpha[i] * y_hist[i][k];
                }
            }
            let gamma = if m > 0 {
                dot(&s_hist[m - 1], &y_hist[m - 1])
                    / dot(&y_hist[m - 1], &y_hist[m - 1]).max(1e-300)
            } else {
                1.0 / inf_norm(&g).max(1.0)
            };
            let mut d = q.map(|v| -v * gamma);
            for i in 0..m {
                let beta = rho_hist[i] * dot(&y_hist[i], &d);
                for k in 0..16 {
                    d[k] += (alpha[i] - beta) * s_hist[i][k];
                }
            }
            let mut slope = dot(&g, &d);
            if slope >= 0.0 {
                // Not a descent direction: fall back to steepest descent.
                d = g.map(|v| -v);
                slope = dot(&g, &d);
                s_hist.clear();
                y_hist.clear();
                rho_hist.clear();
            }

            // Armijo backtracking.
            let mut step = 1.0f64;
            let mut accepted = false;
            let mut x_new = x;
            for _ in 0..60 {
                for k in 0..16 {
                    x_new[k] = x[k] + step * d[k];
                }
                if value(&x_new) <= f + 1e-4 * step * slope {
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            iterations += 1;
            if !accepted {
                // No improving step representable: treat as stationary.
                converged = inf_norm(&g) < 1e-5 * f.abs().max(1.0);
                break;
            }

            let (f_next, g_next) = eval(&x_new);
            debug_assert!(f_next <= f + 1e-9 * f.abs().max(1.0));
            let mut s_vec = [0.0f64; 16];
            let mut y_vec = [0.0f64; 16];
            for k in 0..16 {
                s_vec[k] = x_new[k] - x[k];
                y_vec[k] = g_next[k] - g[k];
            }
            let step_norm = inf_norm(&s_vec);
            let sy = dot(&s_vec, &y_vec);
            if sy > 1e-12 * inf_norm(&s_vec) * inf_norm(&y_vec) {
                if s_hist.len() == MEM {
                    s_hist.remove(0);
                    y_hist.remove(0);
                    rho_hist.remove(0);
                }
                s_hist.push(s_vec);
                y_hist.push(y_vec);
                rho_hist.push(1.0 / sy);
            }
            x = x_new;
            f = f_next;
            g = g_next;
            if let Some(tr) = ll_trace.as_deref_mut() {
                tr.push(-f);
            }

            if step_norm < STEP_TOL * inf_norm(&x).max(1.0) {
                converged = true;
                break;
            }
        }
        if iterations >= MAX_ITERATIONS {
            converged = false;
            break;
        }

        // --- Polish phase (accepted only while strictly improving) ---
        let f_round_start = f;
        while iterations < MAX_ITERATIONS {
            let t_cur = build_t(&x);
            let a = t_cur.adjoint() * t_cur;
            let mus = mu_of(&a);
            let mut r_op: Matrix4<C64> = Matrix4::zeros();
            for (s, psi) in projectors.iter().enumerate() {
                if counts[s] > 0.0 && mus[s] > 0.0 {
                    r_op += (psi * psi.adjoint()) * Complex::new(counts[s] / mus[s], 0.0);
                }
            }
            let m_op = g_inv * r_op;
            let a_step = m_op * a * m_op.adjoint();

            let mut improved = false;
            for &w in &[1.0, 0.5, 0.2, 0.05] {
                let mut a_new = a * Complex::new(1.0 - w, 0.0) + a_step * Complex::new(w, 0.0);
                let mu_raw = mu_of(&a_new);
                let mu_total: f64 = mu_raw.iter().sum();
                if !(mu_total > 0.0) || !mu_total.is_finite() {
                    continue;
                }
                // Exact coordinate ascent in the overall flux (Σn = 1 here).
                let c = 1.0 / mu_total;
                a_new *= Complex::new(c, 0.0);
                let mu_new: Vec<f64> = mu_raw.iter().map(|m| m * c).collect();
                let f_new = value_mu(&mu_new);
                if f_new < f - 1e-14 * f.abs().max(1.0) {
                    let t_new = reverse_cholesky_floored(&a_new);
                    for (k, &(r, col, imag)) in PARAMS.iter().enumerate() {
                        x[k] = if imag { t_new[(r, col)].im } else { t_new[(r, col)].re };
                    }
                    let (f2, g2) = eval(&x);
                    f = f2;
                    g = g2;
                    if let Some(tr) = ll_trace.as_deref_mut() {
                        tr.push(-f);
                    }
                    improved = true;
                    break;
                }
            }
            iterations += 1;
            if !improved {
                break;
            }
        }

        // Another round is only worth it if the polish actually moved.
        if f >= f_round_start - 1e-13 * f_round_start.abs().max(1.0) {
            break;
        }
    }

    let t = build_t(&x);
    let a = t.adjoint() * t;
    let trace = a.trace().re;
    if !(trace > 0.0) || !trace.is_finite() {
        return Err(Error::numeric("MLE collapsed to a zero factor"));
    }
    let rho = a / Complex::new(trace, 0.0);

    // Report the likelihood at the original count scale: the optimal
    // unnormalized factor scales linearly with the counts, so the
    // original-scale intensities are total·μ.
    let mut log_likelihood = 0.0;
    for (s, psi) in projectors.iter().enumerate() {
        let w = t * psi;
        let mu = total * w.iter().map(|z| z.norm_sqr()).sum::<f64>();
        let n = total * counts[s];
        if mu > 0.0 {
            log_likelihood += n * mu.ln() - mu;
        }
    }

    Ok(TomographyResult {
        rho,
        log_likelihood,
        iterations,
        converged,
    })
}

/// Variant of [`reverse_cholesky`] for PSD factors that may be exactly
/// rank-deficient (the polish step produces those when the optimum sits on
/// the boundary): pivots are floored at 1e-16·tr A, which perturbs the
/// factored matrix by a relative 1e-16 at most — far below every
/// reconstruction tolerance — while keeping the triangular entries finite.
fn reverse_cholesky_floored(a: &Matrix4<C64>) -> Matrix4<C64> {
    let floor = 1e-16 * a.trace().re.abs().max(f64::MIN_POSITIVE);
    let mut t: Matrix4<C64> = Matrix4::zeros();
    for i in (0..4).rev() {
        let mut s = a[(i, i)].re;
        for k in (i + 1)..4 {
            s -= t[(k, i)].norm_sqr();
        }
        let tii = s.max(floor).sqrt();
        t[(i, i)] = Complex::new(tii, 0.0);
        for j in (0..i).rev() {
            let mut v = a[(i, j)];
            for k in (i + 1)..4 {
                v -= t[(k, i)].conj() * t[(k, j)];
            }
            t[(i, j)] = v / Complex::new(tii, 0.0);
        }
    }
    t
}

/// Lower-triangular T with T†T = A, for Hermitian positive-definite A
/// (the mirror image of the usual LL† factorization, solved from the
/// bottom-right corner upward).
fn reverse_cholesky(a: &Matrix4<C64>) -> Result<Matrix4<C64>> {
    let mut t: Matrix4<C64> = Matrix4::zeros();
    for i in (0..4).rev() {
        let mut s = a[(i, i)].re;
        for k in (i + 1)..4 {
            s -= t[(k, i)].norm_sqr();
        }
        if !(s > 0.0) {
            return Err(Error::numeric(format!(
                "reverse Cholesky pivot {i} is non-positive ({s:.3e})"
            )));
        }
        let tii = s.sqrt();
        t[(i, i)] = Complex::new(tii, 0.0);
        for j in (0..i).rev() {
            let mut v = a[(i, j)];
            for k in (i + 1)..4 {
                v -= t[(k, i)].conj() * t[(k, j)];
            }
            t[(i, j)] = v / Complex::new(tii, 0.0);
        }
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qmath::{
        bell_state, cascade_density, concurrence, density_defects, fidelity_to_state,
        mixed_state, outer_product, BellState, CascadeParams,
    };
    use crate::tomography::{james_16, linear_inversion, nearest_density_matrix};
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;

    fn exact_counts(rho: &DensityMatrix, flux: f64) -> Vec<f64> {
        james_16()
            .iter()
            .map(|s| flux * fidelity_to_state(rho, &s.projector()))
            .collect()
    }

    fn poisson_counts(expected: &[f64], seed: u64) -> Vec<f64> {
        use rand_distr::Distribution;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        expected
            .iter()
            .map(|&m| {
                if m <= 0.0 {
                    0.0
                } else {
                    rand_distr::Poisson::new(m).unwrap().sample(&mut rng)
                }
            })
            .collect()
    }

    #[test]
    fn reverse_cholesky_factors_correctly() {
        let rho = cascade_density(421.0, &CascadeParams {
            fss_uev: 2.1,
            t1_x_ps: 171.0,
            t1_xx_ps: 120.0,
            t_rep_ns: 1000.0 / 305.0,
        });
        let a = project_psd(&rho, 1e-3) * Complex::new(7.5, 0.0);
        let t = reverse_cholesky(&a).unwrap();
        // T is lower-triangular and reproduces A = T†T.
        for r in 0..4 {
            for c in (r + 1)..4 {
                assert_eq!(t[(r, c)], Complex::new(0.0, 0.0));
            }
        }
        let back = t.adjoint() * t;
        assert!((back - a).iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn exact_phi_plus_counts_recover_the_state() {
        let rho = outer_product(&bell_state(BellState::PhiPlus));
        let counts = exact_counts(&rho, 1e5);
        let res = mle_reconstruct(&counts, None, &james_16()).unwrap();
        assert!(res.converged);
        let f = fidelity_to_state(&res.rho, &bell_state(BellState::PhiPlus));
        assert!(f >= 0.9999, "fidelity {f}");
        let (h, tr, min_eig) = density_defects(&res.rho);
        assert!(h < 1e-12 && tr < 1e-12 && min_eig > -1e-12);
    }

    #[test]
    fn exact_mixed_counts_recover_zero_concurrence() {
        let counts = exact_counts(&mixed_state(), 1e5);
        let res = mle_reconstruct(&counts, None, &james_16()).unwrap();
        assert!(concurrence(&res.rho) < 1e-6);
        assert_abs_diff_eq!(
            fidelity_to_state(&res.rho, &bell_state(BellState::PhiPlus)),
            0.25,
            epsilon = 1e-6
        );
    }

    #[test]
    fn mle_agrees_with_linear_inversion_on_exact_probabilities() {
        // Infinite-statistics agreement within 1e-6 entrywise, on a state
        // that is neither pure nor maximally mixed.
        let pure = cascade_density(222.0, &CascadeParams {
            fss_uev: 2.1,
            t1_x_ps: 171.0,
            t1_xx_ps: 120.0,
            t_rep_ns: 1000.0 / 305.0,
        });
        let rho = crate::qmath::mix_with_white_noise(&pure, 0.21).unwrap();
        let counts = exact_counts(&rho, 1.0); // exact probabilities
        let lin = linear_inversion(&counts, &james_16()).unwrap();
        assert!((lin - rho).iter().all(|z| z.norm() < 1e-9));
        let res = mle_reconstruct(&counts, None, &james_16()).unwrap();
        assert!(
            (res.rho - lin).iter().all(|z| z.norm() < 1e-6),
            "max dev {:?}",
            (res.rho - lin).iter().map(|z| z.norm()).fold(0.0, f64::max)
        );
    }

    #[test]
    fn poisson_sampled_phi_plus_reconstructs_above_0p995_in_median() {
        // Individual draws can genuinely land below the line (the count
        // asymmetries of an unlucky sample move the true maximum, not just
        // the estimate of it), so the statistical statement is about the
        // median, and a loose per-draw floor guards against gross misses.
        let rho = outer_product(&bell_state(BellState::PhiPlus));
        let expected = exact_counts(&rho, 1e5);
        let mut fids: Vec<f64> = (0..11)
            .map(|seed| {
                let counts = poisson_counts(&expected, 100 + seed);
                let res = mle_reconstruct(&counts, None, &james_16()).unwrap();
                let f = fidelity_to_state(&res.rho, &bell_state(BellState::PhiPlus));
                assert!(f >= 0.98, "seed {seed}: fidelity {f}");
                f
            })
            .collect();
        fids.sort_by(f64::total_cmp);
        assert!(fids[5] >= 0.995, "median fidelity {}", fids[5]);
    }

    #[test]
    fn sampled_mixed_state_keeps_concurrence_small() {
        let expected = exact_counts(&mixed_state(), 1e5);
        for seed in 0..5 {
            let counts = poisson_counts(&expected, 500 + seed);
            let res = mle_reconstruct(&counts, None, &james_16()).unwrap();
            assert!(concurrence(&res.rho) <= 0.02);
        }
    }

    #[test]
    fn likelihood_is_monotone_across_accepted_iterates() {
        // A near-pure target: its linear-inversion seed is unphysical, so
        // the optimizer has real ground to cover. (On full-rank noisy data
        // the seed already reproduces all 16 counts exactly — a minimal
        // design — and the trajectory is legitimately empty.)
        let rho = outer_product(&bell_state(BellState::PhiPlus));
        let counts = poisson_counts(&exact_counts(&rho, 1e5), 100);
        let projs: Vec<_> = james_16().iter().map(|s| s.projector()).collect();
        let mut trace = Vec::new();
        let res = mle_with_trace(&counts, &projs, &mut trace).unwrap();
        assert!(res.converged);
        assert!(trace.len() > 2);
        assert!(
            trace.windows(2).all(|w| w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0)),
            "log-likelihood decreased somewhere"
        );
    }

    #[test]
    fn degenerate_counts_fail_explicitly() {
        let counts = vec![0.0; 16];
        let err = mle_reconstruct(&counts, None, &james_16()).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn noisy_linear_inversion_can_go_negative_but_mle_stays_physical() {
        // Nearly pure states + Poisson noise routinely push linear
        // inversion outside the PSD cone; the projection and the MLE both
        // must stay physical.
        let rho = outer_product(&bell_state(BellState::PhiMinus));
        let expected = exact_counts(&rho, 300.0);
        let mut saw_negative = false;
        for seed in 0..20 {
            let counts = poisson_counts(&expected, 7000 + seed);
            if counts.iter().sum::<f64>() == 0.0 {
                continue;
            }
            let lin = linear_inversion(&counts, &james_16()).unwrap();
            let sym = (lin + lin.adjoint()) * Complex::new(0.5, 0.0);
            let eig = nalgebra::SymmetricEigen::new(sym);
            if eig.eigenvalues.iter().any(|&l| l < -1e-9) {
                saw_negative = true;
            }
            let projected = nearest_density_matrix(&lin);
            let (h, tr, min_eig) = density_defects(&projected);
            assert!(h < 1e-9 && tr < 1e-9 && min_eig > -1e-9);
            let res = mle_reconstruct(&counts, None, &james_16()).unwrap();
            let (h, tr, min_eig) = density_defects(&res.rho);
            assert!(h < 1e-9 && tr < 1e-9 && min_eig > -1e-9);
        }
        assert!(saw_negative, "expected at least one unphysical inversion");
    }

    #[test]
    fn fidelity_improves_with_counts_in_median() {
        // Median infidelity at 10⁴ counts/setting must not beat 10⁵.
        let truth = cascade_density(492.0, &CascadeParams {
            fss_uev: 2.1,
            t1_x_ps: 171.0,
            t1_xx_ps: 120.0,
            t_rep_ns: 1000.0 / 305.0,
        });
        let psi = crate::qmath::cascade_state(492.0, &CascadeParams {
            fss_uev: 2.1,
            t1_x_ps: 171.0,
            t1_xx_ps: 120.0,
            t_rep_ns: 1000.0 / 305.0,
        });
        let mut medians = Vec::new();
        for &flux in &[1e4, 1e5] {
            let expected = exact_counts(&truth, flux);
            let mut fids: Vec<f64> = (0..50)
                .map(|seed| {
                    let counts = poisson_counts(&expected, 31_000 + seed);
                    let res = mle_reconstruct(&counts, None, &james_16()).unwrap();
                    fidelity_to_state(&res.rho, &psi)
                })
                .collect();
            fids.sort_by(f64::total_cmp);
            medians.push((fids[24] + fids[25]) / 2.0);
        }
        assert!(
            medians[0] <= medians[1] + 1e-6,
            "median fidelity did not improve: {medians:?}"
        );
    }

    #[test]
    fn random_rotated_states_round_trip() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(5);
        for _ in 0..10 {
            let u_a = crate::tomography::euler_unitary(
                rng.gen::<f64>() * 3.0,
                rng.gen::<f64>() * 3.0,
                rng.gen::<f64>() * 3.0,
            );
            let u_b = crate::tomography::euler_unitary(
                rng.gen::<f64>() * 3.0,
                rng.gen::<f64>() * 3.0,
                rng.gen::<f64>() * 3.0,
            );
            let rho = crate::qmath::apply_local_unitary(
                &outer_product(&bell_state(BellState::PhiPlus)),
                &u_a,
                &u_b,
            )
            .unwrap();
            let counts = exact_counts(&rho, 1e4);
            let res = mle_reconstruct(&counts, None, &james_16()).unwrap();
            assert!((res.rho - rho).iter().all(|z| z.norm() < 1e-5));
            assert_abs_diff_eq!(concurrence(&res.rho), 1.0, epsilon = 1e-4);
        }
    }
}
