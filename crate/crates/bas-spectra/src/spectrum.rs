//! Dynamical-spectrum end-point estimation for the b-, xi^m-, and
//! bxi^m-cocycles, plus the closed-form spectral predictions that follow from
//! the end-points: the essential radius, Sobolev bounds, gap windows,
//! connectivity thresholds, marginal sets, and annulus/band structure.
//!
//! The true dynamical spectrum is defined through exponential dichotomy and
//! is not directly computable; end-points are approximated by ensemble maxima
//! of finite-time exponents at horizons T and 2T, with |est(T) - est(2T)|
//! reported as the convergence diagnostic. Minimal exponents come from the
//! inverse cocycle (the system integrated backward), whose maximal exponent
//! is the negated minimum.

use crate::cocycle::{matrix_growth, matrix_path, MatrixGrowthSample, PhasePoint};
use crate::error::{Error, Result};
use crate::flows::{FlowField, TorusPoint};
use crate::ode::IntegratorOptions;
use crate::symbols::SymbolSpec;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;

/// Phase-space sampling plan for exponent ensembles. Sampling is fully
/// deterministic: structured lattices plus Weyl / golden-angle sequences, no
/// RNG state.
#[derive(Clone, Debug, Serialize)]
pub struct SamplerSpec {
    /// Number of phase-space samples before stagnation injection.
    pub samples: usize,
    /// Primary horizon T; convergence is checked against 2T.
    pub horizon: f64,
    /// Fraction of samples drawn from the structured grid (rest quasi-random).
    pub grid_fraction: f64,
    /// Inject the flow's stagnation points with axis frequency directions.
    pub include_stagnation: bool,
    /// Sample only the invariant set u(x) . xi = 0.
    pub restricted: bool,
    /// Convergence gaps above this value flag the estimate as unconverged.
    pub convergence_threshold: f64,
}

impl Default for SamplerSpec {
    fn default() -> Self {
        SamplerSpec {
            samples: 96,
            horizon: 25.0,
            grid_fraction: 0.5,
            include_stagnation: true,
            restricted: false,
            convergence_threshold: 0.1,
        }
    }
}

impl SamplerSpec {
    fn validate(&self) -> Result<()> {
        if self.samples < 1 {
            return Err(Error::Sampler("sample count must be >= 1".into()));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::Sampler("horizon must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.grid_fraction) {
            return Err(Error::Sampler("grid fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Serializable phase-point witness.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct WitnessPoint {
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
}

impl WitnessPoint {
    fn from_phase(p: &PhasePoint) -> Self {
        WitnessPoint {
            x: p.x.wrapped().coords.clone(),
            xi: p.xi.clone(),
        }
    }
}

/// Estimated end-points of the bxi^m-cocycle spectrum together with the
/// xi-cocycle end-points and convergence diagnostics.
#[derive(Clone, Debug, Serialize)]
pub struct SpectrumEstimate {
    pub m: f64,
    pub mu_max: f64,
    pub mu_min: f64,
    pub lambda_max: f64,
    pub lambda_min: f64,
    pub mu_max_gap: f64,
    pub mu_min_gap: f64,
    pub lambda_max_gap: f64,
    pub lambda_min_gap: f64,
    pub horizon: f64,
    pub ensemble_size: usize,
    pub converged: bool,
    pub argmax: WitnessPoint,
    pub argmin_witness: WitnessPoint,
}

impl SpectrumEstimate {
    /// Worst convergence gap among the four end-points.
    pub fn max_gap(&self) -> f64 {
        self.mu_max_gap
            .max(self.mu_min_gap)
            .max(self.lambda_max_gap)
            .max(self.lambda_min_gap)
    }
}

/// Forward and backward ensemble growth data at horizons T and 2T; all
/// m-dependent estimates are reductions over this shared data.
pub struct EnsembleGrowth {
    pub phases: Vec<PhasePoint>,
    pub forward: Vec<[MatrixGrowthSample; 2]>,
    pub backward: Vec<[MatrixGrowthSample; 2]>,
    pub horizon: f64,
    pub convergence_threshold: f64,
}

fn golden_fract(j: usize, alpha: f64) -> f64 {
    ((j as f64 + 1.0) * alpha).fract()
}

/// Deterministic phase-point ensemble for a flow.
pub fn build_phase_ensemble(flow: &FlowField, sampler: &SamplerSpec) -> Result<Vec<PhasePoint>> {
    sampler.validate()?;
    let n = flow.dim();
    let mut phases: Vec<PhasePoint> = Vec::new();

    if sampler.include_stagnation {
        for sp in flow.stagnation_points() {
            for axis in 0..n {
                for sign in [1.0, -1.0] {
                    let mut xi = vec![0.0; n];
                    xi[axis] = sign;
                    phases.push(PhasePoint::new(sp.clone(), &xi));
                }
            }
        }
    }

    let directions_2d = |j: usize, total: usize| -> Vec<f64> {
        let theta = 2.0 * PI * (j as f64 + 0.37) / total as f64;
        vec![theta.cos(), theta.sin()]
    };
    let fib_sphere = |j: usize, total: usize| -> Vec<f64> {
        // spherical Fibonacci lattice
        let golden = (1.0 + 5.0f64.sqrt()) / 2.0;
        let z = 1.0 - 2.0 * (j as f64 + 0.5) / total as f64;
        let r = (1.0 - z * z).max(0.0).sqrt();
        let phi = 2.0 * PI * (j as f64 / golden).fract();
        vec![r * phi.cos(), r * phi.sin(), z]
    };

    let n_grid = ((sampler.samples as f64) * sampler.grid_fraction).round() as usize;
    let n_dirs = if n == 2 { 4 } else { 6 };
    let n_pos = (n_grid + n_dirs - 1) / n_dirs.max(1);
    let side = (n_pos as f64).powf(1.0 / n as f64).ceil().max(1.0) as usize;
    let mut count = 0usize;
    'grid: for cell in 0..side.pow(n as u32) {
        let mut idx = cell;
        let mut x = vec![0.0; n];
        for xi in x.iter_mut() {
            *xi = (idx % side) as f64;
            idx /= side;
        }
        let pos: Vec<f64> = x
            .iter()
            .map(|v| (v + 0.5) / side as f64 * 2.0 * PI)
            .collect();
        for j in 0..n_dirs {
            if count >= n_grid {
                break 'grid;
            }
            let dir = if n == 2 {
                directions_2d(j, n_dirs)
            } else {
                fib_sphere(j, n_dirs)
            };
            phases.push(PhasePoint::new(TorusPoint::new(&pos), &dir));
            count += 1;
        }
    }

    let alphas = [
        std::f64::consts::SQRT_2,
        1.732_050_807_568_877_2,
        2.236_067_977_499_79,
    ];
    for j in 0..sampler.samples.saturating_sub(n_grid) {
        let x: Vec<f64> = (0..n)
            .map(|i| golden_fract(j, alphas[i]) * 2.0 * PI)
            .collect();
        let dir = if n == 2 {
            let theta = golden_fract(j, 0.618_033_988_749_894_9) * 2.0 * PI;
            vec![theta.cos(), theta.sin()]
        } else {
            fib_sphere(j, sampler.samples.saturating_sub(n_grid).max(1))
        };
        phases.push(PhasePoint::new(TorusPoint::new(&x), &dir));
    }

    if sampler.restricted {
        phases = restrict_ensemble(flow, phases);
    }
    if phases.is_empty() {
        return Err(Error::Sampler("ensemble came out empty".into()));
    }
    Ok(phases)
}

/// Project frequencies onto the invariant set u(x) . xi = 0. Stagnation
/// points admit every direction; elsewhere the projected direction must
/// satisfy |u . xi| <= 1e-10 |u|.
fn restrict_ensemble(flow: &FlowField, phases: Vec<PhasePoint>) -> Vec<PhasePoint> {
    let n = flow.dim();
    phases
        .into_iter()
        .filter_map(|p| {
            let mut u = [0.0; 3];
            flow.velocity(&p.x.coords, &mut u[..n]);
            let speed = u[..n].iter().map(|v| v * v).sum::<f64>().sqrt();
            if speed <= 1e-12 {
                return Some(p);
            }
            let uhat: Vec<f64> = u[..n].iter().map(|v| v / speed).collect();
            let dot: f64 = p.xi.iter().zip(&uhat).map(|(a, b)| a * b).sum();
            let mut xi: Vec<f64> = p
                .xi
                .iter()
                .zip(&uhat)
                .map(|(v, w)| v - dot * w)
                .collect();
            let norm = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-8 {
                // xi was parallel to u; fall back to a deterministic normal
                xi = if n == 2 {
                    vec![-uhat[1], uhat[0]]
                } else {
                    let probe = if uhat[0].abs() < 0.9 {
                        [1.0, 0.0, 0.0]
                    } else {
                        [0.0, 1.0, 0.0]
                    };
                    let c = [
                        uhat[1] * probe[2] - uhat[2] * probe[1],
                        uhat[2] * probe[0] - uhat[0] * probe[2],
                        uhat[0] * probe[1] - uhat[1] * probe[0],
                    ];
                    let cn = c.iter().map(|v| v * v).sum::<f64>().sqrt();
                    c.iter().map(|v| v / cn).collect()
                };
            } else {
                for v in xi.iter_mut() {
                    *v /= norm;
                }
            }
            let check: f64 = xi.iter().zip(&u[..n]).map(|(a, b)| a * b).sum();
            if check.abs() > 1e-10 * speed {
                return None;
            }
            Some(PhasePoint::new(p.x, &xi))
        })
        .collect()
}

/// Run the forward and backward matrix-cocycle ensembles. Results are
/// deterministic: each sample's computation is independent and the reductions
/// downstream fold over this deterministically ordered list.
pub fn ensemble_growth(
    flow: &FlowField,
    symbol: &SymbolSpec,
    sampler: &SamplerSpec,
    opts: &IntegratorOptions,
) -> Result<EnsembleGrowth> {
    let phases = build_phase_ensemble(flow, sampler)?;
    let t = sampler.horizon;
    let fwd_times = [0.0, t, 2.0 * t];
    let bwd_times = [0.0, -t, -2.0 * t];
    let results: Result<Vec<_>> = phases
        .par_iter()
        .map(|phase| {
            let f = matrix_growth(flow, symbol, phase, &fwd_times, opts)?;
            let b = matrix_growth(flow, symbol, phase, &bwd_times, opts)?;
            if sampler.restricted {
                assert_restricted_invariance(&f)?;
            }
            Ok(([f[1].clone(), f[2].clone()], [b[1].clone(), b[2].clone()]))
        })
        .collect();
    let pairs = results?;
    let (forward, backward): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    Ok(EnsembleGrowth {
        phases,
        forward,
        backward,
        horizon: t,
        convergence_threshold: sampler.convergence_threshold,
    })
}

/// The restriction u . xi = 0 is flow-invariant by Hamiltonian conservation;
/// verify it numerically where the frequency magnitude still leaves room
/// for a meaningful check.
fn assert_restricted_invariance(samples: &[MatrixGrowthSample]) -> Result<()> {
    for s in samples {
        let speed = 1.0f64;
        if s.log_r_xi.abs() < 30.0 && s.hamiltonian_unit.abs() > 1e-6 * speed.max(1.0) {
            return Err(Error::Sampler(format!(
                "restricted trajectory left u.xi = 0: |u.xi| = {:.3e} at t = {}",
                s.hamiltonian_unit, s.t
            )));
        }
    }
    Ok(())
}

fn reduce_max(
    data: &[[MatrixGrowthSample; 2]],
    horizon: f64,
    weight: impl Fn(&MatrixGrowthSample) -> f64,
) -> (f64, f64, usize) {
    // returns (estimate at 2T, |gap|, argmax index at 2T)
    let mut best_t = f64::NEG_INFINITY;
    let mut best_2t = f64::NEG_INFINITY;
    let mut arg = 0usize;
    for (i, pair) in data.iter().enumerate() {
        let g_t = weight(&pair[0]) / horizon;
        let g_2t = weight(&pair[1]) / (2.0 * horizon);
        if g_t > best_t {
            best_t = g_t;
        }
        if g_2t > best_2t {
            best_2t = g_2t;
            arg = i;
        }
    }
    (best_2t, (best_2t - best_t).abs(), arg)
}

/// Reduce a shared ensemble to the end-point estimates for one m.
pub fn exponents_from_ensemble(ens: &EnsembleGrowth, m: f64) -> SpectrumEstimate {
    let t = ens.horizon;
    let (mu_max, mu_max_gap, arg_fwd) =
        reduce_max(&ens.forward, t, |s| s.log_sigma_max + m * s.log_r_xi);
    let (neg_mu_min, mu_min_gap, arg_bwd) =
        reduce_max(&ens.backward, t, |s| s.log_sigma_max + m * s.log_r_xi);
    let (lambda_max, lambda_max_gap, _) = reduce_max(&ens.forward, t, |s| s.log_r_xi);
    let (neg_lambda_min, lambda_min_gap, _) = reduce_max(&ens.backward, t, |s| s.log_r_xi);
    let threshold = ens.convergence_threshold;
    let est = SpectrumEstimate {
        m,
        mu_max,
        mu_min: -neg_mu_min,
        lambda_max,
        lambda_min: -neg_lambda_min,
        mu_max_gap,
        mu_min_gap,
        lambda_max_gap,
        lambda_min_gap,
        horizon: 2.0 * t,
        ensemble_size: ens.phases.len(),
        converged: mu_max_gap.max(mu_min_gap).max(lambda_max_gap).max(lambda_min_gap)
            <= threshold,
        argmax: WitnessPoint::from_phase(&ens.phases[arg_fwd]),
        argmin_witness: WitnessPoint::from_phase(&ens.phases[arg_bwd]),
    };
    debug_assert!(est.mu_min <= est.mu_max + 1e-9 || est.ensemble_size < 4);
    est
}

/// End-point estimate of the bxi^m-cocycle spectrum by ensemble maximization
/// of finite-time exponents.
pub fn estimate_exponents(
    flow: &FlowField,
    symbol: &SymbolSpec,
    m: f64,
    sampler: &SamplerSpec,
    opts: &IntegratorOptions,
) -> Result<SpectrumEstimate> {
    let ens = ensemble_growth(flow, symbol, sampler, opts)?;
    Ok(exponents_from_ensemble(&ens, m))
}

/// Same estimator on the invariant set u . xi = 0.
pub fn restricted_exponents(
    flow: &FlowField,
    symbol: &SymbolSpec,
    m: f64,
    sampler: &SamplerSpec,
    opts: &IntegratorOptions,
) -> Result<SpectrumEstimate> {
    let mut s = sampler.clone();
    s.restricted = true;
    estimate_exponents(flow, symbol, m, &s, opts)
}

/// Essential spectral radius of the evolution group at time t: e^{mu_max t}.
pub fn ess_spectral_radius(est: &SpectrumEstimate, t: f64) -> f64 {
    assert!(t >= 0.0, "radius formula holds for t >= 0");
    (est.mu_max * t).exp()
}

/// The four end-point bounds A_m <= mu^m_min <= min(B_m, C_m) and
/// max(B_m, C_m) <= mu^m_max <= D_m, with the lambda roles swapped for
/// negative m.
pub fn sobolev_bounds(
    mu_min: f64,
    mu_max: f64,
    lambda_min: f64,
    lambda_max: f64,
    m: f64,
) -> (f64, f64, f64, f64) {
    let (lo, hi) = if m >= 0.0 {
        (lambda_min, lambda_max)
    } else {
        (lambda_max, lambda_min)
    };
    let a = mu_min + m * lo;
    let b = mu_max + m * lo;
    let c = mu_min + m * hi;
    let d = mu_max + m * hi;
    debug_assert!(a <= b.min(c) + 1e-12 && b.max(c) <= d + 1e-12);
    (a, b, c, d)
}

/// Window that contains any spectral gap of Sigma_m; `None` when the window
/// is empty (no gap possible, the spectrum is connected).
pub fn gap_window(
    mu_min: f64,
    mu_max: f64,
    lambda_min: f64,
    lambda_max: f64,
    m: f64,
) -> Option<(f64, f64)> {
    let (lo, hi) = if m >= 0.0 {
        (mu_min + m * lambda_max, mu_max + m * lambda_min)
    } else {
        (mu_min + m * lambda_min, mu_max + m * lambda_max)
    };
    if lo > hi {
        None
    } else {
        Some((lo, hi))
    }
}

/// Threshold m* = (mu_max - mu_min) / (lambda_max - lambda_min); for
/// |m| >= m* the gap window is empty. `None` when lambda_max = lambda_min
/// (no exponential stretching; connectivity is then not guaranteed by this
/// route).
pub fn connectivity_threshold(
    mu_min: f64,
    mu_max: f64,
    lambda_min: f64,
    lambda_max: f64,
) -> Option<f64> {
    if lambda_max > lambda_min {
        Some((mu_max - mu_min) / (lambda_max - lambda_min))
    } else {
        None
    }
}

/// Aggregated spectral structure for one m: interval hull, bounds, margins,
/// and the predicted semigroup annuli / generator band.
#[derive(Clone, Debug, Serialize)]
pub struct SpectralStructure {
    pub m: f64,
    pub interval: (f64, f64),
    pub bounds_abcd: (f64, f64, f64, f64),
    pub gap_window: Option<(f64, f64)>,
    pub connectivity_threshold: Option<f64>,
    /// s = sup_k mu^k_min over the k-grid (outer approximation from below).
    pub s_hat: f64,
    /// S = inf_k mu^k_max over the k-grid.
    pub s_cap_hat: f64,
    pub k_grid: Vec<f64>,
    /// Structure hypothesis: positive stretching and |m| above the threshold.
    pub hypothesis_satisfied: bool,
    /// Marginal set [mu_min, s] u [S, mu_max] when the hypothesis holds.
    pub margins: Option<((f64, f64), (f64, f64))>,
    /// Tensor inclusion mu^m within mu^0 + m [lambda_min, lambda_max] checked
    /// at tolerance 0.05 + convergence gaps.
    pub tensor_inclusion_ok: bool,
    pub estimate: SpectrumEstimate,
    pub base_estimate: SpectrumEstimate,
}

/// Default k-grid approximating the sup/inf over all rescalings.
pub fn default_k_grid() -> Vec<f64> {
    vec![-4.0, -2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 4.0]
}

/// Positive-stretching test robust against the log(t)/t tail of polynomially
/// stretching flows: the estimate must hold up between horizons.
pub fn has_exponential_stretching(est: &SpectrumEstimate) -> bool {
    let at_t = est.lambda_max + est.lambda_max_gap; // value at the shorter horizon is within the gap
    est.lambda_max > 0.05 && est.lambda_max >= 0.75 * at_t.max(1e-12)
}

pub fn spectral_structure(
    flow: &FlowField,
    symbol: &SymbolSpec,
    m: f64,
    sampler: &SamplerSpec,
    k_grid: &[f64],
    opts: &IntegratorOptions,
) -> Result<SpectralStructure> {
    let ens = ensemble_growth(flow, symbol, sampler, opts)?;
    Ok(spectral_structure_from_ensemble(&ens, m, k_grid))
}

pub fn spectral_structure_from_ensemble(
    ens: &EnsembleGrowth,
    m: f64,
    k_grid: &[f64],
) -> SpectralStructure {
    let est = exponents_from_ensemble(ens, m);
    let base = exponents_from_ensemble(ens, 0.0);
    let mut grid: Vec<f64> = k_grid.to_vec();
    if !grid.iter().any(|&k| k == 0.0) {
        grid.push(0.0);
    }
    let mut s_hat = f64::NEG_INFINITY;
    let mut s_cap_hat = f64::INFINITY;
    for &k in &grid {
        let ek = exponents_from_ensemble(ens, k);
        s_hat = s_hat.max(ek.mu_min);
        s_cap_hat = s_cap_hat.min(ek.mu_max);
    }
    let threshold =
        connectivity_threshold(base.mu_min, base.mu_max, base.lambda_min, base.lambda_max);
    let stretching = has_exponential_stretching(&base);
    let hypothesis = stretching
        && match threshold {
            Some(t) => m.abs() > t,
            None => false,
        };
    let tol = 0.05 + est.max_gap() + base.max_gap();
    let upper = base.mu_max + (m * base.lambda_min).max(m * base.lambda_max);
    let lower = base.mu_min + (m * base.lambda_min).min(m * base.lambda_max);
    let tensor_ok = est.mu_max <= upper + tol && est.mu_min >= lower - tol;
    SpectralStructure {
        m,
        interval: (est.mu_min, est.mu_max),
        bounds_abcd: sobolev_bounds(
            base.mu_min,
            base.mu_max,
            base.lambda_min,
            base.lambda_max,
            m,
        ),
        gap_window: gap_window(
            base.mu_min,
            base.mu_max,
            base.lambda_min,
            base.lambda_max,
            m,
        ),
        connectivity_threshold: threshold,
        s_hat,
        s_cap_hat,
        k_grid: grid,
        hypothesis_satisfied: hypothesis,
        margins: if hypothesis {
            Some(((est.mu_min, s_hat), (s_cap_hat, est.mu_max)))
        } else {
            None
        },
        tensor_inclusion_ok: tensor_ok,
        estimate: est,
        base_estimate: base,
    }
}

/// Instability certificate: a witness trajectory whose bxi^m growth exceeds
/// the threshold with a positive trend at both horizons. Absence of a
/// certificate is a valid (inconclusive) outcome.
#[derive(Clone, Debug, Serialize)]
pub struct InstabilityReport {
    pub m: f64,
    pub certified: bool,
    pub threshold: f64,
    /// Max ensemble log growth at T and 2T.
    pub log_growth_t: f64,
    pub log_growth_2t: f64,
    pub witness: WitnessPoint,
    /// Conservation-law route: a decaying-frequency sample forcing amplitude
    /// growth for determinant-conserving symbols.
    pub conservation_witness: Option<ConservationWitness>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConservationWitness {
    pub phase: WitnessPoint,
    pub xi_log_decay: f64,
    pub b_log_growth: f64,
}

pub fn instability_certificate(
    flow: &FlowField,
    symbol: &SymbolSpec,
    m: f64,
    sampler: &SamplerSpec,
    threshold: f64,
    opts: &IntegratorOptions,
) -> Result<InstabilityReport> {
    let ens = ensemble_growth(flow, symbol, sampler, opts)?;
    let mut best_t = f64::NEG_INFINITY;
    let mut best_2t = f64::NEG_INFINITY;
    let mut arg = 0usize;
    for (i, pair) in ens.forward.iter().enumerate() {
        let g_t = pair[0].log_sigma_max + m * pair[0].log_r_xi;
        let g_2t = pair[1].log_sigma_max + m * pair[1].log_r_xi;
        best_t = best_t.max(g_t);
        if g_2t > best_2t {
            best_2t = g_2t;
            arg = i;
        }
    }
    let base = exponents_from_ensemble(&ens, 0.0);
    let conservation_witness = if matches!(
        symbol.equation,
        crate::symbols::EquationKind::EulerVelocity | crate::symbols::EquationKind::CamassaHolm
    ) && has_exponential_stretching(&base)
    {
        // decaying xi forces growing b through the conserved determinant
        let mut min_xi = f64::INFINITY;
        let mut idx = 0usize;
        for (i, pair) in ens.forward.iter().enumerate() {
            if pair[1].log_r_xi < min_xi {
                min_xi = pair[1].log_r_xi;
                idx = i;
            }
        }
        Some(ConservationWitness {
            phase: WitnessPoint::from_phase(&ens.phases[idx]),
            xi_log_decay: min_xi,
            b_log_growth: ens.forward[idx][1].log_sigma_max,
        })
    } else {
        None
    };
    let certified = best_2t >= threshold && best_t > 0.0 && best_2t > best_t;
    Ok(InstabilityReport {
        m,
        certified,
        threshold,
        log_growth_t: best_t,
        log_growth_2t: best_2t,
        witness: WitnessPoint::from_phase(&ens.phases[arg]),
        conservation_witness,
    })
}

/// Finite-horizon bounded-orbit certificate: searches the fiber frame for a
/// direction whose rescaled cocycle orbit |e^{-mu t} (BX^m)_t v| stays below
/// `bound` over t in [-T, T]. Finite-horizon evidence only, never conclusive.
#[derive(Clone, Debug, Serialize)]
pub struct BoundedOrbitReport {
    pub m: f64,
    pub rescale_mu: f64,
    pub horizon: f64,
    pub bound: f64,
    /// Index of the minimizing frame direction.
    pub direction_index: usize,
    /// sup over the sampled orbit of log |e^{-mu t} (BX^m)_t v|.
    pub sup_log_rescaled: f64,
    pub certified: bool,
    /// Always true: the certificate is evidence at one horizon, not a proof.
    pub finite_horizon_only: bool,
}

pub fn bounded_orbit_certificate(
    flow: &FlowField,
    symbol: &SymbolSpec,
    m: f64,
    rescale_mu: f64,
    phase: &PhasePoint,
    horizon: f64,
    bound: f64,
    opts: &IntegratorOptions,
) -> Result<BoundedOrbitReport> {
    assert!(horizon > 0.0);
    let steps = 64usize;
    let fwd_times: Vec<f64> = (0..=steps)
        .map(|i| horizon * i as f64 / steps as f64)
        .collect();
    let bwd_times: Vec<f64> = (0..=steps)
        .map(|i| -horizon * i as f64 / steps as f64)
        .collect();
    let fwd = matrix_path(flow, symbol, phase, &fwd_times, opts)?;
    let bwd = matrix_path(flow, symbol, phase, &bwd_times, opts)?;
    let frame = symbol.bundle.fiber_frame(&phase.xi);
    let d = symbol.fiber_dim();
    let mut best_idx = 0usize;
    let mut best_sup = f64::INFINITY;
    for (vi, v) in frame.iter().enumerate() {
        let mut sup = f64::NEG_INFINITY;
        for (t, mat, log_rm, log_rxi) in fwd.iter().chain(bwd.iter()) {
            let mut mv = vec![Complex64::new(0.0, 0.0); d];
            mat.apply(v, &mut mv);
            let norm = mv.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt().max(1e-300);
            let log_val = norm.ln() + log_rm + m * log_rxi - rescale_mu * t;
            sup = sup.max(log_val);
        }
        if sup < best_sup {
            best_sup = sup;
            best_idx = vi;
        }
    }
    Ok(BoundedOrbitReport {
        m,
        rescale_mu,
        horizon,
        bound,
        direction_index: best_idx,
        sup_log_rescaled: best_sup,
        certified: best_sup <= bound.ln(),
        finite_horizon_only: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::catalog_flow;
    use crate::symbols::{catalog_symbol, EquationKind, EquilibriumData};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn opts() -> IntegratorOptions {
        IntegratorOptions::with_tols(1e-9, 1e-11)
    }

    fn small_sampler(t: f64) -> SamplerSpec {
        SamplerSpec {
            samples: 24,
            horizon: t,
            ..Default::default()
        }
    }

    #[test]
    fn transport_exponents_are_exactly_zero() {
        for name in ["cellular", "shear"] {
            let flow = Arc::new(catalog_flow(name, &[1.0]).unwrap());
            let s =
                catalog_symbol(EquationKind::Transport, flow.clone(), EquilibriumData::default())
                    .unwrap();
            let est = estimate_exponents(&flow, &s, 0.0, &small_sampler(5.0), &opts()).unwrap();
            assert!(est.mu_max.abs() < 1e-10, "{name}: {}", est.mu_max);
            assert!(est.mu_min.abs() < 1e-10);
        }
    }

    #[test]
    fn cellular_lambda_from_stagnation_point() {
        let flow = Arc::new(catalog_flow("cellular", &[1.0]).unwrap());
        let s = catalog_symbol(EquationKind::Transport, flow.clone(), EquilibriumData::default())
            .unwrap();
        let est = estimate_exponents(&flow, &s, 1.0, &small_sampler(10.0), &opts()).unwrap();
        // the saddle gives exactly 1; nothing in the ensemble exceeds it much
        assert!(est.lambda_max >= 0.99 && est.lambda_max <= 1.05, "{}", est.lambda_max);
        assert!((est.lambda_min + est.lambda_max).abs() <= 0.05, "2D symmetry");
        // for transport, mu^m = m * lambda at the stagnation point
        assert_relative_eq!(est.mu_max, est.lambda_max, max_relative = 1e-6);
    }

    #[test]
    fn dynamo_matches_xi_cocycle_on_cellular() {
        let flow = Arc::new(catalog_flow("cellular", &[1.0]).unwrap());
        let s = catalog_symbol(
            EquationKind::KinematicDynamo,
            flow.clone(),
            EquilibriumData::default(),
        )
        .unwrap();
        let est = estimate_exponents(&flow, &s, 0.0, &small_sampler(10.0), &opts()).unwrap();
        assert!((est.mu_max - est.lambda_max).abs() <= 0.05);
    }

    #[test]
    fn constant_flow_exponents_vanish() {
        let flow = Arc::new(catalog_flow("constant", &[1.0, 0.0]).unwrap());
        let s = catalog_symbol(
            EquationKind::EulerVelocity,
            flow.clone(),
            EquilibriumData::default(),
        )
        .unwrap();
        let est = estimate_exponents(&flow, &s, 0.0, &small_sampler(5.0), &opts()).unwrap();
        assert!(est.mu_max.abs() < 1e-8);
        assert!(est.lambda_max.abs() < 1e-8);
        // restriction selects xi perpendicular to c
        let rest = restricted_exponents(&flow, &s, 0.0, &small_sampler(5.0), &opts()).unwrap();
        assert!(rest.mu_max.abs() < 1e-8);
        for p in &build_phase_ensemble(
            &flow,
            &SamplerSpec {
                restricted: true,
                ..small_sampler(5.0)
            },
        )
        .unwrap()
        {
            assert!(p.xi[0].abs() < 1e-10, "xi must be perpendicular to (1,0)");
        }
    }

    #[test]
    fn ess_radius_closed_forms() {
        let flow = Arc::new(catalog_flow("cellular", &[1.0]).unwrap());
        let s = catalog_symbol(EquationKind::Transport, flow.clone(), EquilibriumData::default())
            .unwrap();
        let est = estimate_exponents(&flow, &s, 0.0, &small_sampler(5.0), &opts()).unwrap();
        assert_relative_eq!(ess_spectral_radius(&est, 3.0), 1.0, epsilon = 1e-9);
        assert_relative_eq!(ess_spectral_radius(&est, 0.0), 1.0, epsilon = 1e-15);
        let est1 = estimate_exponents(&flow, &s, 1.0, &small_sampler(10.0), &opts()).unwrap();
        let r = ess_spectral_radius(&est1, 1.0);
        assert!(r >= (0.95f64).exp() && r <= (1.1f64).exp(), "{r}");
    }

    #[test]
    fn sobolev_bounds_examples() {
        // mu = {0}, lambda = [-1, 1], m = 2 -> (-2, -2, 2, 2)
        assert_eq!(sobolev_bounds(0.0, 0.0, -1.0, 1.0, 2.0), (-2.0, -2.0, 2.0, 2.0));
        // m = 0 -> (mu_min, mu_max, mu_min, mu_max)
        assert_eq!(sobolev_bounds(-0.3, 0.7, -1.0, 1.0, 0.0), (-0.3, 0.7, -0.3, 0.7));
        // mu = [-1, 1], lambda = {0} -> (-1, 1, -1, 1) for any m
        assert_eq!(sobolev_bounds(-1.0, 1.0, 0.0, 0.0, 3.7), (-1.0, 1.0, -1.0, 1.0));
        assert_eq!(sobolev_bounds(-1.0, 1.0, 0.0, 0.0, -2.2), (-1.0, 1.0, -1.0, 1.0));
    }

    #[test]
    fn gap_window_examples() {
        assert_eq!(gap_window(0.0, 0.0, -1.0, 1.0, 2.0), None);
        assert_eq!(gap_window(-0.4, 0.9, -1.0, 1.0, 0.0), Some((-0.4, 0.9)));
        assert_eq!(gap_window(0.0, 3.0, -1.0, 1.0, 1.0), Some((1.0, 2.0)));
    }

    #[test]
    fn connectivity_threshold_examples() {
        assert_eq!(connectivity_threshold(0.0, 0.0, -1.0, 1.0), Some(0.0));
        assert_eq!(connectivity_threshold(0.0, 3.0, -1.0, 1.0), Some(1.5));
        assert_eq!(connectivity_threshold(0.0, 1.0, 0.5, 0.5), None);
    }

    proptest! {
        #[test]
        fn bounds_are_ordered(
            mu_min in -3.0..0.0f64, dmu in 0.0..3.0f64,
            l_min in -2.0..0.0f64, dl in 0.0..2.0f64,
            m in -5.0..5.0f64,
        ) {
            let (a, b, c, d) = sobolev_bounds(mu_min, mu_min + dmu, l_min, l_min + dl, m);
            prop_assert!(a <= b.min(c) + 1e-12);
            prop_assert!(b.max(c) <= d + 1e-12);
        }

        #[test]
        fn window_empty_above_threshold(
            mu_min in -3.0..0.0f64, dmu in 0.001..3.0f64,
            l_min in -2.0..-0.001f64, dl in 0.002..2.0f64,
            extra in 0.001..4.0f64,
        ) {
            let mu_max = mu_min + dmu;
            let l_max = l_min + dl;
            if let Some(mstar) = connectivity_threshold(mu_min, mu_max, l_min, l_max) {
                let m = mstar + extra;
                prop_assert!(gap_window(mu_min, mu_max, l_min, l_max, m).is_none());
                prop_assert!(gap_window(mu_min, mu_max, l_min, l_max, -m).is_none());
            }
        }
    }

    #[test]
    fn structure_on_cellular_transport() {
        // Sigma = {0}: margins cover the whole interval, s ~ S ~ 0.
        let flow = Arc::new(catalog_flow("cellular", &[1.0]).unwrap());
        let s = catalog_symbol(EquationKind::Transport, flow.clone(), EquilibriumData::default())
            .unwrap();
        let st = spectral_structure(
            &flow,
            &s,
            2.0,
            &small_sampler(10.0),
            &default_k_grid(),
            &opts(),
        )
        .unwrap();
        assert!(st.hypothesis_satisfied);
        assert!(st.s_hat.abs() <= 0.05, "s_hat = {}", st.s_hat);
        assert!(st.s_cap_hat.abs() <= 0.05);
        assert!((st.interval.0 + 2.0).abs() <= 0.1);
        assert!((st.interval.1 - 2.0).abs() <= 0.1);
        assert!(st.tensor_inclusion_ok);
        assert!(st.margins.is_some());
    }

    #[test]
    fn structure_on_shear_detects_no_stretching() {
        let flow = Arc::new(catalog_flow("shear", &[1.0]).unwrap());
        let s = catalog_symbol(EquationKind::Transport, flow.clone(), EquilibriumData::default())
            .unwrap();
        let st = spectral_structure(
            &flow,
            &s,
            2.0,
            &small_sampler(25.0),
            &default_k_grid(),
            &opts(),
        )
        .unwrap();
        assert!(!st.hypothesis_satisfied, "shear stretches polynomially");
        assert!(st.margins.is_none());
        // Sigma_m stays close to Sigma_0
        assert!(st.interval.1.abs() <= 0.3, "{}", st.interval.1);
    }

    #[test]
    fn instability_certificates() {
        let flow = Arc::new(catalog_flow("cellular", &[1.0]).unwrap());
        let euler = catalog_symbol(
            EquationKind::EulerVelocity,
            flow.clone(),
            EquilibriumData::default(),
        )
        .unwrap();
        let rep = instability_certificate(&flow, &euler, 0.0, &small_sampler(5.0), 2.0, &opts())
            .unwrap();
        assert!(rep.certified, "hyperbolic point gives growth e^t");
        assert!(rep.conservation_witness.is_some());
        let w = rep.conservation_witness.unwrap();
        assert!(w.xi_log_decay < -2.0, "xi decays at the saddle");
        assert!(w.b_log_growth > 2.0, "b must grow by conservation");

        let transport =
            catalog_symbol(EquationKind::Transport, flow.clone(), EquilibriumData::default())
                .unwrap();
        let rep0 =
            instability_certificate(&flow, &transport, 0.0, &small_sampler(5.0), 2.0, &opts())
                .unwrap();
        assert!(!rep0.certified, "bounded cocycle");
        let rep1 =
            instability_certificate(&flow, &transport, 1.0, &small_sampler(5.0), 2.0, &opts())
                .unwrap();
        assert!(rep1.certified, "|xi| growth certifies for m = 1");
    }

    #[test]
    fn bounded_orbit_reports() {
        let flow = Arc::new(catalog_flow("cellular", &[1.0]).unwrap());
        let transport =
            catalog_symbol(EquationKind::Transport, flow.clone(), EquilibriumData::default())
                .unwrap();
        let phase = PhasePoint::new(TorusPoint::new(&[1.3, 0.4]), &[0.6, 0.8]);
        // transport, mu = 0: cocycle is the identity on fibers, sup = 1
        let rep =
            bounded_orbit_certificate(&flow, &transport, 0.0, 0.0, &phase, 5.0, 10.0, &opts())
                .unwrap();
        assert!(rep.sup_log_rescaled.abs() < 1e-9);
        assert!(rep.certified);

        // stagnation point, m = 1, mu = 1: e^{-t} e^{t} = 1 both directions
        let saddle = PhasePoint::new(TorusPoint::new(&[0.0, 0.0]), &[1.0, 0.0]);
        let rep1 =
            bounded_orbit_certificate(&flow, &transport, 1.0, 1.0, &saddle, 5.0, 10.0, &opts())
                .unwrap();
        assert!(rep1.sup_log_rescaled.abs() < 1e-6, "{}", rep1.sup_log_rescaled);
        assert!(rep1.certified);

        // same with mu = 0: sup = e^{T}, no certificate
        let rep2 =
            bounded_orbit_certificate(&flow, &transport, 1.0, 0.0, &saddle, 5.0, 10.0, &opts())
                .unwrap();
        assert_relative_eq!(rep2.sup_log_rescaled, 5.0, epsilon = 1e-6);
        assert!(!rep2.certified);
        assert!(rep2.finite_horizon_only);
    }

    #[test]
    fn restricted_agrees_with_unrestricted_on_cellular() {
        let flow = Arc::new(catalog_flow("cellular", &[1.0]).unwrap());
        let s = catalog_symbol(EquationKind::Transport, flow.clone(), EquilibriumData::default())
            .unwrap();
        let full = estimate_exponents(&flow, &s, 2.0, &small_sampler(10.0), &opts()).unwrap();
        let rest = restricted_exponents(&flow, &s, 2.0, &small_sampler(10.0), &opts()).unwrap();
        assert!((full.mu_max - rest.mu_max).abs() <= 0.05);
        assert!((full.mu_min - rest.mu_min).abs() <= 0.05);
    }

    #[test]
    fn sampler_validation() {
        let flow = Arc::new(catalog_flow("cellular", &[1.0]).unwrap());
        let bad = SamplerSpec {
            samples: 0,
            ..Default::default()
        };
        assert!(build_phase_ensemble(&flow, &bad).is_err());
        let bad_t = SamplerSpec {
            horizon: -1.0,
            ..Default::default()
        };
        assert!(build_phase_ensemble(&flow, &bad_t).is_err());
    }
}
