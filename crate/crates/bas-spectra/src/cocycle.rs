//! The bicharacteristic-amplitude system
//!
//! ```text
//! x'  =  u(x)
//! xi' = -du(x)^T xi
//! b'  =  a0(x, xi) b
//! ```
//!
//! integrated with per-step renormalization of xi and b. Both unit directions
//! carry log-magnitude accumulators, so exponents of order one per unit time
//! stay representable over horizons of hundreds of time units. The frequency
//! is propagated by its own equation; the identity xi(t) = dphi_t^{-T} xi0 is
//! a cross-check in the tests, not the implementation.

use crate::error::{Error, Result};
use crate::flows::{FlowField, TorusPoint};
use crate::linalg::CMat;
use crate::ode::{integrate_path, IntegratorOptions, OdeSystem, StepStats};
use crate::symbols::SymbolSpec;
use num_complex::Complex64;

/// Projectivized phase point (x, unit xi).
#[derive(Clone, Debug)]
pub struct PhasePoint {
    pub x: TorusPoint,
    pub xi: Vec<f64>,
}

impl PhasePoint {
    pub fn new(x: TorusPoint, xi: &[f64]) -> Self {
        let norm = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm > 0.0, "xi must be non-zero");
        PhasePoint {
            x,
            xi: xi.iter().map(|v| v / norm).collect(),
        }
    }
}

/// One output sample of a BAS run. `b` is the unit amplitude direction (the
/// first fundamental column for matrix runs); magnitudes are reconstructed as
/// |b(t)| = |b0| e^{log_r_b} and |xi(t)| = |xi0| e^{log_r_xi}.
#[derive(Clone, Debug)]
pub struct CocycleSample {
    pub t: f64,
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    pub log_r_xi: f64,
    pub b: Vec<Complex64>,
    pub log_r_b: f64,
    /// Accumulated integral of tr a0 along the orbit.
    pub trace_integral: Complex64,
    /// |(id - p(xi)) b| for the symbol's bundle.
    pub residual: f64,
    /// Unit-frequency Hamiltonian u(x) . xi.
    pub hamiltonian_unit: f64,
}

impl CocycleSample {
    pub fn hamiltonian(&self) -> f64 {
        self.hamiltonian_unit * self.log_r_xi.exp()
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub samples: Vec<CocycleSample>,
    pub fiber_dim: usize,
    pub initial_b_norm: f64,
    pub stats: StepStats,
}

impl Trajectory {
    pub fn last(&self) -> &CocycleSample {
        self.samples.last().expect("non-empty trajectory")
    }

    /// Max relative drift of the conserved Hamiltonian u . xi over the run.
    pub fn hamiltonian_drift(&self) -> f64 {
        let h0 = self.samples[0].hamiltonian();
        let scale = h0.abs().max(1.0);
        self.samples
            .iter()
            .map(|s| (s.hamiltonian() - h0).abs() / scale)
            .fold(0.0, f64::max)
    }

    pub fn max_residual(&self) -> f64 {
        self.samples.iter().map(|s| s.residual).fold(0.0, f64::max)
    }

    /// Write the trajectory as CSV with the standard column layout.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = self.samples[0].x.len();
        let d = self.fiber_dim;
        let mut header = String::from("t");
        for i in 1..=n {
            header.push_str(&format!(",x{i}"));
        }
        for i in 1..=n {
            header.push_str(&format!(",xi{i}"));
        }
        header.push_str(",log_r_xi");
        for i in 1..=d {
            header.push_str(&format!(",re_b{i},im_b{i}"));
        }
        header.push_str(",log_r_b,residual,hamiltonian,consdet");
        writeln!(w, "{header}")?;
        for s in &self.samples {
            let mut row = format!("{:.12e}", s.t);
            for v in &s.x {
                row.push_str(&format!(",{:.12e}", v));
            }
            for v in &s.xi {
                row.push_str(&format!(",{:.12e}", v));
            }
            row.push_str(&format!(",{:.12e}", s.log_r_xi));
            for v in &s.b {
                row.push_str(&format!(",{:.12e},{:.12e}", v.re, v.im));
            }
            let consdet = self.sample_consdet(s);
            row.push_str(&format!(
                ",{:.12e},{:.12e},{:.12e},{}",
                s.log_r_b,
                s.residual,
                s.hamiltonian(),
                consdet.map_or(String::new(), |c| format!("{:.12e}", c)),
            ));
            writeln!(w, "{row}")?;
        }
        Ok(())
    }

    /// Per-sample determinant-law quantity when a single amplitude column
    /// suffices (2D with d = 2); otherwise empty.
    fn sample_consdet(&self, s: &CocycleSample) -> Option<f64> {
        let n = s.xi.len();
        if n != 2 || self.fiber_dim != 2 {
            return None;
        }
        let mut m = CMat::zeros(2, 2);
        m[(0, 0)] = s.b[0];
        m[(1, 0)] = s.b[1];
        m[(0, 1)] = Complex64::new(s.xi[0], 0.0);
        m[(1, 1)] = Complex64::new(s.xi[1], 0.0);
        let scale = (s.log_r_b - s.log_r_xi).exp() * self.initial_b_norm;
        let q = m.det() * Complex64::new(scale, 0.0) * (-s.trace_integral).exp();
        Some(q.re)
    }
}

/// Log magnitude of the b xi^m cocycle applied to b0, per sample:
/// log |b(t)| + m log |xi(t)| (relative to the initial magnitudes).
pub fn bxm_log_growth(traj: &Trajectory, m: f64) -> Vec<f64> {
    traj.samples
        .iter()
        .map(|s| s.log_r_b + m * s.log_r_xi)
        .collect()
}

/// Per-sample constraint residual |(id - p(xi)) b|.
pub fn constraint_residual(traj: &Trajectory) -> Vec<f64> {
    traj.samples.iter().map(|s| s.residual).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum AmplitudeOp {
    /// b' = a0 b.
    Standard,
    /// b' = +a0^* b (dual amplitude flow, used over the reversed base flow).
    Adjoint,
    /// b' = -a0^* b (inverse-adjoint transport along the forward flow; the
    /// duality pairing <B_t b, B_t^{-*} c> is constant along it).
    MinusAdjoint,
}

struct BasSystem<'a> {
    flow: &'a FlowField,
    symbol: &'a SymbolSpec,
    n: usize,
    d: usize,
    r: usize,
    base_reversed: bool,
    amplitude: AmplitudeOp,
}

// State layout: [x(n) | xi(n) | log_r_xi | M re,im (2 d r) | log_r_m | tr re, tr im]
impl BasSystem<'_> {
    fn idx_xi(&self) -> usize {
        self.n
    }
    fn idx_logrxi(&self) -> usize {
        2 * self.n
    }
    fn idx_m(&self) -> usize {
        2 * self.n + 1
    }
    fn idx_logrm(&self) -> usize {
        self.idx_m() + 2 * self.d * self.r
    }
    fn idx_tr(&self) -> usize {
        self.idx_logrm() + 1
    }

    fn read_matrix(&self, y: &[f64]) -> CMat {
        let mut m = CMat::zeros(self.d, self.r);
        let base = self.idx_m();
        for c in 0..self.r {
            for row in 0..self.d {
                let k = base + 2 * (c * self.d + row);
                m[(row, c)] = Complex64::new(y[k], y[k + 1]);
            }
        }
        m
    }

    fn write_matrix(&self, y: &mut [f64], m: &CMat) {
        let base = self.idx_m();
        for c in 0..self.r {
            for row in 0..self.d {
                let k = base + 2 * (c * self.d + row);
                y[k] = m[(row, c)].re;
                y[k + 1] = m[(row, c)].im;
            }
        }
    }
}

impl OdeSystem for BasSystem<'_> {
    fn dim(&self) -> usize {
        2 * self.n + 2 * self.d * self.r + 4
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        let n = self.n;
        let sign = if self.base_reversed { -1.0 } else { 1.0 };
        let x = &y[..n];
        let xi = &y[self.idx_xi()..self.idx_xi() + n];
        let mut u = [0.0; 3];
        let mut du = [0.0; 9];
        self.flow.velocity(x, &mut u[..n]);
        self.flow.jacobian(x, &mut du[..n * n]);
        for i in 0..n {
            dy[i] = sign * u[i];
            // xi' = -du^T xi (forward); sign flips with the base flow
            let mut acc = 0.0;
            for j in 0..n {
                acc += du[j * n + i] * xi[j];
            }
            dy[self.idx_xi() + i] = -sign * acc;
        }
        dy[self.idx_logrxi()] = 0.0;

        let a = self.symbol.eval(x, xi);
        let a_eff = match self.amplitude {
            AmplitudeOp::Standard => a,
            AmplitudeOp::Adjoint => a.adjoint(),
            AmplitudeOp::MinusAdjoint => a.adjoint().scale(Complex64::new(-1.0, 0.0)),
        };
        let m = self.read_matrix(y);
        let dm = a_eff.matmul(&m);
        let base = self.idx_m();
        for c in 0..self.r {
            for row in 0..self.d {
                let k = base + 2 * (c * self.d + row);
                dy[k] = dm[(row, c)].re;
                dy[k + 1] = dm[(row, c)].im;
            }
        }
        dy[self.idx_logrm()] = 0.0;
        let tr = a.trace();
        dy[self.idx_tr()] = tr.re;
        dy[self.idx_tr() + 1] = tr.im;
    }

    fn normalize(&self, y: &mut [f64]) {
        let n = self.n;
        let norm_xi = y[self.idx_xi()..self.idx_xi() + n]
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        if norm_xi > 0.0 {
            for i in self.idx_xi()..self.idx_xi() + n {
                y[i] /= norm_xi;
            }
            y[self.idx_logrxi()] += norm_xi.ln();
        }
        let m = self.read_matrix(y);
        let norm_m = m.frobenius_norm();
        if norm_m > 0.0 {
            let scaled = m.scale(Complex64::new(1.0 / norm_m, 0.0));
            self.write_matrix(y, &scaled);
            y[self.idx_logrm()] += norm_m.ln();
        }
    }
}

fn check_initial_amplitude(symbol: &SymbolSpec, xi: &[f64], b0: &[Complex64]) -> Result<f64> {
    let norm = b0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::ConstraintViolated { residual: 1.0 });
    }
    if !symbol.bundle.is_trivial() {
        let p = symbol.bundle.projector(xi);
        let mut pb = vec![Complex64::new(0.0, 0.0); b0.len()];
        p.apply(b0, &mut pb);
        let res: f64 = b0
            .iter()
            .zip(&pb)
            .map(|(b, pbi)| (b - pbi).norm_sqr())
            .sum::<f64>()
            .sqrt();
        if res > 1e-10 * norm {
            return Err(Error::ConstraintViolated {
                residual: res / norm,
            });
        }
    }
    Ok(norm)
}

fn run_system(
    sys: &BasSystem<'_>,
    phase: &PhasePoint,
    b0_cols: &[Vec<Complex64>],
    times: &[f64],
    opts: &IntegratorOptions,
) -> Result<Trajectory> {
    let n = sys.n;
    let mut y = vec![0.0; sys.dim()];
    y[..n].copy_from_slice(&phase.x.coords);
    y[sys.idx_xi()..sys.idx_xi() + n].copy_from_slice(&phase.xi);
    // columns normalized jointly so log_r_b starts at zero
    let mut m0 = CMat::zeros(sys.d, sys.r);
    for (c, col) in b0_cols.iter().enumerate() {
        for (row, v) in col.iter().enumerate() {
            m0[(row, c)] = *v;
        }
    }
    let norm0 = m0.frobenius_norm();
    let m0n = m0.scale(Complex64::new(1.0 / norm0, 0.0));
    sys.write_matrix(&mut y, &m0n);

    let mut samples = Vec::with_capacity(times.len());
    let flow = sys.flow;
    let symbol = sys.symbol;
    let stats = integrate_path(sys, &mut y, times, opts, |t, state| {
        let x: Vec<f64> = state[..n].to_vec();
        let mut xi: Vec<f64> = state[sys.idx_xi()..sys.idx_xi() + n].to_vec();
        let xi_norm = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in xi.iter_mut() {
            *v /= xi_norm;
        }
        let log_r_xi = state[sys.idx_logrxi()] + xi_norm.ln();
        let m = sys.read_matrix(state);
        let m_norm = m.frobenius_norm();
        let log_r_b = state[sys.idx_logrm()] + m_norm.ln();
        let b: Vec<Complex64> = (0..sys.d).map(|row| m[(row, 0)] / m_norm).collect();
        let mut u = [0.0; 3];
        flow.velocity(&x, &mut u[..n]);
        let hamiltonian_unit: f64 = (0..n).map(|i| u[i] * xi[i]).sum();
        let residual = if symbol.bundle.is_trivial() {
            0.0
        } else {
            let p = symbol.bundle.projector(&xi);
            let mut pb = vec![Complex64::new(0.0, 0.0); sys.d];
            p.apply(&b, &mut pb);
            b.iter()
                .zip(&pb)
                .map(|(bi, pbi)| (bi - pbi).norm_sqr())
                .sum::<f64>()
                .sqrt()
        };
        samples.push(CocycleSample {
            t,
            x: TorusPoint::new(&x).wrapped().coords,
            xi,
            log_r_xi,
            b,
            log_r_b,
            trace_integral: Complex64::new(state[sys.idx_tr()], state[sys.idx_tr() + 1]),
            residual,
            hamiltonian_unit,
        });
    })?;
    Ok(Trajectory {
        samples,
        fiber_dim: sys.d,
        initial_b_norm: norm0,
        stats,
    })
}

/// Integrate the BAS from (x0, xi0, b0) through the requested output times
/// (monotone, starting at 0; negative times run the system backward).
pub fn integrate_bas(
    flow: &FlowField,
    symbol: &SymbolSpec,
    x0: &TorusPoint,
    xi0: &[f64],
    b0: &[Complex64],
    times: &[f64],
    opts: &IntegratorOptions,
) -> Result<Trajectory> {
    let phase = PhasePoint::new(x0.clone(), xi0);
    check_initial_amplitude(symbol, &phase.xi, b0)?;
    let d = symbol.fiber_dim();
    if b0.len() != d {
        return Err(Error::DimensionMismatch {
            context: "initial amplitude".into(),
            expected: d,
            got: b0.len(),
        });
    }
    let sys = BasSystem {
        flow,
        symbol,
        n: flow.dim(),
        d,
        r: 1,
        base_reversed: false,
        amplitude: AmplitudeOp::Standard,
    };
    run_system(&sys, &phase, &[b0.to_vec()], times, opts)
}

/// The inverse cocycle B_{-t}: the same system integrated with time reversed.
/// Sample times decrease from 0 to -horizon.
pub fn inverse_cocycle(
    flow: &FlowField,
    symbol: &SymbolSpec,
    x0: &TorusPoint,
    xi0: &[f64],
    b0: &[Complex64],
    horizon: f64,
    samples: usize,
    opts: &IntegratorOptions,
) -> Result<Trajectory> {
    let times: Vec<f64> = (0..=samples)
        .map(|i| -horizon * i as f64 / samples as f64)
        .collect();
    integrate_bas(flow, symbol, x0, xi0, b0, &times, opts)
}

/// The dual cocycle over the inverse flow: the amplitude solves
/// b' = +a0^*(chi_{-s}) b, realizing the inverse-adjoint of the forward
/// cocycle along the backward orbit. Sample parameter s increases from 0.
pub fn dual_cocycle(
    flow: &FlowField,
    symbol: &SymbolSpec,
    x0: &TorusPoint,
    xi0: &[f64],
    b0: &[Complex64],
    horizon: f64,
    samples: usize,
    opts: &IntegratorOptions,
) -> Result<Trajectory> {
    let phase = PhasePoint::new(x0.clone(), xi0);
    check_initial_amplitude(symbol, &phase.xi, b0)?;
    let times: Vec<f64> = (0..=samples)
        .map(|i| horizon * i as f64 / samples as f64)
        .collect();
    let sys = BasSystem {
        flow,
        symbol,
        n: flow.dim(),
        d: symbol.fiber_dim(),
        r: 1,
        base_reversed: true,
        amplitude: AmplitudeOp::Adjoint,
    };
    run_system(&sys, &phase, &[b0.to_vec()], &times, opts)
}

/// Transport of a covector by the inverse-adjoint of the forward cocycle:
/// c(t) = B_t^{-*} c0 along the forward orbit. The pairing
/// <B_t b, B_t^{-*} c> is constant in t.
pub fn inverse_adjoint_transport(
    flow: &FlowField,
    symbol: &SymbolSpec,
    x0: &TorusPoint,
    xi0: &[f64],
    c0: &[Complex64],
    times: &[f64],
    opts: &IntegratorOptions,
) -> Result<Trajectory> {
    let phase = PhasePoint::new(x0.clone(), xi0);
    let sys = BasSystem {
        flow,
        symbol,
        n: flow.dim(),
        d: symbol.fiber_dim(),
        r: 1,
        base_reversed: false,
        amplitude: AmplitudeOp::MinusAdjoint,
    };
    run_system(&sys, &phase, &[c0.to_vec()], times, opts)
}

/// Maximal drift of the duality pairing <B_t b, B_t^{-*} c> over the run.
pub fn duality_pairing_drift(b_traj: &Trajectory, c_traj: &Trajectory) -> f64 {
    assert_eq!(b_traj.samples.len(), c_traj.samples.len());
    let pair = |bs: &CocycleSample, cs: &CocycleSample, b0n: f64, c0n: f64| -> Complex64 {
        let scale = ((bs.log_r_b + cs.log_r_b).exp()) * b0n * c0n;
        let mut acc = Complex64::new(0.0, 0.0);
        for (b, c) in bs.b.iter().zip(&cs.b) {
            acc += c.conj() * b;
        }
        acc * Complex64::new(scale, 0.0)
    };
    let p0 = pair(
        &b_traj.samples[0],
        &c_traj.samples[0],
        b_traj.initial_b_norm,
        c_traj.initial_b_norm,
    );
    b_traj
        .samples
        .iter()
        .zip(&c_traj.samples)
        .map(|(bs, cs)| {
            (pair(bs, cs, b_traj.initial_b_norm, c_traj.initial_b_norm) - p0).norm()
        })
        .fold(0.0, f64::max)
}

/// Growth data of the fundamental amplitude matrix restricted to an
/// orthonormal frame of F(xi0): log of the largest singular value together
/// with the frequency log magnitude, per output time.
#[derive(Clone, Debug)]
pub struct MatrixGrowthSample {
    pub t: f64,
    pub log_sigma_max: f64,
    pub log_r_xi: f64,
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    pub hamiltonian_unit: f64,
}

/// Renormalized fundamental matrix along an orbit: (t, M_bar, log_r_m,
/// log_r_xi) per output time, with M(t) = e^{log_r_m} M_bar.
pub fn matrix_path(
    flow: &FlowField,
    symbol: &SymbolSpec,
    phase: &PhasePoint,
    times: &[f64],
    opts: &IntegratorOptions,
) -> Result<Vec<(f64, CMat, f64, f64)>> {
    let frame = symbol.bundle.fiber_frame(&phase.xi);
    let d = symbol.fiber_dim();
    let r = frame.len();
    let sys = BasSystem {
        flow,
        symbol,
        n: flow.dim(),
        d,
        r,
        base_reversed: false,
        amplitude: AmplitudeOp::Standard,
    };
    let n = sys.n;
    let mut y = vec![0.0; sys.dim()];
    y[..n].copy_from_slice(&phase.x.coords);
    y[sys.idx_xi()..sys.idx_xi() + n].copy_from_slice(&phase.xi);
    let mut m0 = CMat::zeros(d, r);
    for (c, col) in frame.iter().enumerate() {
        for (row, v) in col.iter().enumerate() {
            m0[(row, c)] = *v;
        }
    }
    sys.write_matrix(&mut y, &m0);
    let mut out = Vec::with_capacity(times.len());
    integrate_path(&sys, &mut y, times, opts, |t, state| {
        let mut xi_norm = 0.0;
        for i in sys.idx_xi()..sys.idx_xi() + n {
            xi_norm += state[i] * state[i];
        }
        out.push((
            t,
            sys.read_matrix(state),
            state[sys.idx_logrm()],
            state[sys.idx_logrxi()] + xi_norm.sqrt().ln(),
        ));
    })?;
    Ok(out)
}

pub fn matrix_growth(
    flow: &FlowField,
    symbol: &SymbolSpec,
    phase: &PhasePoint,
    times: &[f64],
    opts: &IntegratorOptions,
) -> Result<Vec<MatrixGrowthSample>> {
    let frame = symbol.bundle.fiber_frame(&phase.xi);
    if frame.is_empty() {
        return Err(Error::Sampler("empty fiber frame".into()));
    }
    let d = symbol.fiber_dim();
    let r = frame.len();
    let sys = BasSystem {
        flow,
        symbol,
        n: flow.dim(),
        d,
        r,
        base_reversed: false,
        amplitude: AmplitudeOp::Standard,
    };
    let n = sys.n;
    let mut y = vec![0.0; sys.dim()];
    y[..n].copy_from_slice(&phase.x.coords);
    y[sys.idx_xi()..sys.idx_xi() + n].copy_from_slice(&phase.xi);
    let mut m0 = CMat::zeros(d, r);
    for (c, col) in frame.iter().enumerate() {
        for (row, v) in col.iter().enumerate() {
            m0[(row, c)] = *v;
        }
    }
    sys.write_matrix(&mut y, &m0);
    let mut out = Vec::with_capacity(times.len());
    integrate_path(&sys, &mut y, times, opts, |t, state| {
        let m = sys.read_matrix(state);
        let sigma = m.sigma_max().max(1e-300);
        let mut xi_norm = 0.0;
        for i in sys.idx_xi()..sys.idx_xi() + n {
            xi_norm += state[i] * state[i];
        }
        xi_norm = xi_norm.sqrt();
        let x: Vec<f64> = state[..n].to_vec();
        let xi: Vec<f64> = state[sys.idx_xi()..sys.idx_xi() + n]
            .iter()
            .map(|v| v / xi_norm)
            .collect();
        let mut u = [0.0; 3];
        flow.velocity(&x, &mut u[..n]);
        let hamiltonian_unit: f64 = (0..n).map(|i| u[i] * xi[i]).sum();
        out.push(MatrixGrowthSample {
            t,
            log_sigma_max: state[sys.idx_logrm()] + sigma.ln(),
            log_r_xi: state[sys.idx_logrxi()] + xi_norm.ln(),
            x,
            xi,
            hamiltonian_unit,
        });
    })?;
    Ok(out)
}

/// The determinant law: for n-1 independent amplitude solutions over a common
/// phase point, <b_1, ..., b_{n-1}, xi> |xi|^{-2} exp(-int tr a0) is constant.
#[derive(Clone, Debug)]
pub struct ConservedDeterminant {
    pub values: Vec<Complex64>,
}

impl ConservedDeterminant {
    pub fn real_parts(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }

    /// Max deviation from the initial value, relative to its magnitude.
    pub fn relative_drift(&self) -> f64 {
        let v0 = self.values[0];
        let scale = v0.norm().max(1e-30);
        self.values
            .iter()
            .map(|v| (v - v0).norm() / scale)
            .fold(0.0, f64::max)
    }
}

pub fn conserved_determinant(
    trajs: &[&Trajectory],
    symbol: &SymbolSpec,
) -> Result<ConservedDeterminant> {
    let n = trajs
        .first()
        .map(|t| t.samples[0].xi.len())
        .ok_or_else(|| Error::Sampler("no trajectories".into()))?;
    if trajs.len() != n - 1 {
        return Err(Error::DeterminantLawDimension {
            d: trajs.len() + 1,
            n,
        });
    }
    if symbol.fiber_dim() != n {
        return Err(Error::DeterminantLawDimension {
            d: symbol.fiber_dim(),
            n,
        });
    }
    let first = &trajs[0].samples;
    for tr in trajs.iter().skip(1) {
        if tr.samples.len() != first.len() {
            return Err(Error::MismatchedInitialPhase);
        }
        let a = &tr.samples[0];
        let b = &first[0];
        let dx: f64 = a
            .x
            .iter()
            .zip(&b.x)
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max);
        let dxi: f64 = a
            .xi
            .iter()
            .zip(&b.xi)
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max);
        if dx > 1e-12 || dxi > 1e-12 {
            return Err(Error::MismatchedInitialPhase);
        }
    }
    let mut values = Vec::with_capacity(first.len());
    for k in 0..first.len() {
        let mut m = CMat::zeros(n, n);
        let mut log_scale = 0.0;
        let mut amp_scale = 1.0;
        for (c, tr) in trajs.iter().enumerate() {
            let s = &tr.samples[k];
            for row in 0..n {
                m[(row, c)] = s.b[row];
            }
            log_scale += s.log_r_b;
            amp_scale *= tr.initial_b_norm;
        }
        let s0 = &trajs[0].samples[k];
        for row in 0..n {
            m[(row, n - 1)] = Complex64::new(s0.xi[row], 0.0);
        }
        // |xi|^{-2} with |xi(t)| = e^{log_r_xi} and a factor e^{log_r_xi}
        // from the xi column itself.
        let exp_arg = log_scale - s0.log_r_xi;
        let q = m.det()
            * Complex64::new(exp_arg.exp() * amp_scale, 0.0)
            * (-s0.trace_integral).exp();
        values.push(q);
    }
    Ok(ConservedDeterminant { values })
}

/// Uniform output grid helper: 0 .. horizon in `samples` steps (horizon may
/// be negative for backward runs).
pub fn uniform_times(horizon: f64, samples: usize) -> Vec<f64> {
    (0..=samples)
        .map(|i| horizon * i as f64 / samples as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::catalog_flow;
    use crate::symbols::{
        catalog_symbol, constraint_transform, EquationKind, EquilibriumData,
    };
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn opts() -> IntegratorOptions {
        IntegratorOptions::default()
    }

    fn cellular() -> Arc<FlowField> {
        Arc::new(catalog_flow("cellular", &[1.0]).unwrap())
    }

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn transport_amplitude_is_frozen() {
        let flow = cellular();
        let s = catalog_symbol(EquationKind::Transport, flow.clone(), EquilibriumData::default())
            .unwrap();
        let traj = integrate_bas(
            &flow,
            &s,
            &TorusPoint::new(&[1.0, 2.0]),
            &[0.3, 0.9],
            &[c(1.0)],
            &uniform_times(5.0, 10),
            &opts(),
        )
        .unwrap();
        for smp in &traj.samples {
            assert!(smp.log_r_b.abs() < 1e-12);
            assert!((smp.b[0] - c(1.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn cellular_stagnation_frequency_growth() {
        // Oracle: dphi_t^{-T} = diag(e^t, e^{-t}) at the origin, so xi0 = e1
        // gives log |xi(t)| = t.
        let flow = cellular();
        let s = catalog_symbol(EquationKind::Transport, flow.clone(), EquilibriumData::default())
            .unwrap();
        let traj = integrate_bas(
            &flow,
            &s,
            &TorusPoint::new(&[0.0, 0.0]),
            &[1.0, 0.0],
            &[c(1.0)],
            &uniform_times(6.0, 6),
            &opts(),
        )
        .unwrap();
        for smp in &traj.samples {
            assert_relative_eq!(smp.log_r_xi, smp.t, epsilon = 1e-7);
        }
    }

    #[test]
    fn euler_velocity_amplitude_decay_at_stagnation() {
        // a0 = diag(-1,-1) frozen at the fixed point for xi = e1: log|b| = -t.
        let flow = cellular();
        let s = catalog_symbol(
            EquationKind::EulerVelocity,
            flow.clone(),
            EquilibriumData::default(),
        )
        .unwrap();
        let traj = integrate_bas(
            &flow,
            &s,
            &TorusPoint::new(&[0.0, 0.0]),
            &[1.0, 0.0],
            &[c(0.0), c(1.0)],
            &uniform_times(4.0, 8),
            &opts(),
        )
        .unwrap();
        for smp in &traj.samples {
            assert_relative_eq!(smp.log_r_b, -smp.t, epsilon = 1e-7);
        }
    }

    #[test]
    fn frequency_matches_jacobi_inverse_transpose() {
        let flow = cellular();
        let s = catalog_symbol(EquationKind::Transport, flow.clone(), EquilibriumData::default())
            .unwrap();
        let x0 = TorusPoint::new(&[0.7, 1.1]);
        let xi0 = [0.6, 0.8];
        for &t in &[2.0f64, -2.0, 7.0] {
            let traj = integrate_bas(
                &flow,
                &s,
                &x0,
                &xi0,
                &[c(1.0)],
                &[0.0, t],
                &opts(),
            )
            .unwrap();
            let jac = crate::flows::jacobi_cocycle(&flow, &x0, t, &opts()).unwrap();
            let mut expect = [0.0; 2];
            jac.inverse_transpose_apply(&xi0, &mut expect);
            let smp = traj.last();
            let got: Vec<f64> = smp.xi.iter().map(|v| v * smp.log_r_xi.exp()).collect();
            for i in 0..2 {
                assert!(
                    (got[i] - expect[i]).abs() <= 1e-6 * expect.iter().map(|v| v.abs()).fold(1.0, f64::max),
                    "t={t}: {got:?} vs {expect:?}"
                );
            }
        }
    }

    #[test]
    fn bxm_growth_closed_forms() {
        let flow = cellular();
        let transport =
            catalog_symbol(EquationKind::Transport, flow.clone(), EquilibriumData::default())
                .unwrap();
        let traj = integrate_bas(
            &flow,
            &transport,
            &TorusPoint::new(&[0.0, 0.0]),
            &[1.0, 0.0],
            &[c(1.0)],
            &uniform_times(5.0, 5),
            &opts(),
        )
        .unwrap();
        // m = 0: equals log_r_b (identically zero for transport)
        for v in bxm_log_growth(&traj, 0.0) {
            assert!(v.abs() < 1e-12);
        }
        // transport, m = 1 at the stagnation point: growth = t
        for (v, smp) in bxm_log_growth(&traj, 1.0).iter().zip(&traj.samples) {
            assert_relative_eq!(*v, smp.t, epsilon = 1e-7);
        }
        // dynamo, m = -1, xi0 = e1, b0 = e2: log|b| = t and log|xi| = t cancel
        let dynamo = catalog_symbol(
            EquationKind::KinematicDynamo,
            flow.clone(),
            EquilibriumData::default(),
        )
        .unwrap();
        let dt = integrate_bas(
            &flow,
            &dynamo,
            &TorusPoint::new(&[0.0, 0.0]),
            &[1.0, 0.0],
            &[c(0.0), c(1.0)],
            &uniform_times(5.0, 5),
            &opts(),
        )
        .unwrap();
        for v in bxm_log_growth(&dt, -1.0) {
            assert!(v.abs() < 1e-7, "got {v}");
        }
    }

    #[test]
    fn inverse_of_inverse_restores_state() {
        let flow = cellular();
        let s = catalog_symbol(
            EquationKind::EulerVelocity,
            flow.clone(),
            EquilibriumData::default(),
        )
        .unwrap();
        let x0 = TorusPoint::new(&[2.2, 0.4]);
        let xi0 = [0.6, -0.8];
        let b0 = [c(0.8), c(0.6)];
        let fwd = inverse_cocycle(&flow, &s, &x0, &xi0, &b0, 3.0, 3, &opts()).unwrap();
        let end = fwd.last();
        let back = integrate_bas(
            &flow,
            &s,
            &TorusPoint::new(&end.x),
            &end.xi,
            &end.b,
            &[0.0, 3.0],
            &opts(),
        )
        .unwrap();
        let fin = back.last();
        let x_fin = TorusPoint::new(&fin.x);
        assert!(x_fin.torus_distance(&x0) < 1e-7);
        for i in 0..2 {
            assert!((fin.xi[i] - xi0[i]).abs() < 1e-7);
        }
        // total log growth cancels
        assert!((end.log_r_b + fin.log_r_b).abs() < 1e-7);
    }

    #[test]
    fn dual_growth_matches_frozen_oracle() {
        // At the cellular saddle with xi0 = e1 the reversed-flow dual solves
        // b' = a0^* b with a0 = diag(-1,-1): |b(s)| = e^{-s}, the same decay
        // as the forward cocycle at that point.
        let flow = cellular();
        let s = catalog_symbol(
            EquationKind::EulerVelocity,
            flow.clone(),
            EquilibriumData::default(),
        )
        .unwrap();
        let traj = dual_cocycle(
            &flow,
            &s,
            &TorusPoint::new(&[0.0, 0.0]),
            &[1.0, 0.0],
            &[c(0.0), c(1.0)],
            4.0,
            4,
            &opts(),
        )
        .unwrap();
        for smp in &traj.samples {
            assert_relative_eq!(smp.log_r_b, -smp.t, epsilon = 1e-7);
        }
    }

    #[test]
    fn dual_of_transport_is_trivial() {
        let flow = cellular();
        let s = catalog_symbol(EquationKind::Transport, flow.clone(), EquilibriumData::default())
            .unwrap();
        let traj = dual_cocycle(
            &flow,
            &s,
            &TorusPoint::new(&[1.0, 1.5]),
            &[0.0, 1.0],
            &[c(1.0)],
            5.0,
            5,
            &opts(),
        )
        .unwrap();
        for smp in &traj.samples {
            assert!(smp.log_r_b.abs() < 1e-12);
        }
    }

    #[test]
    fn duality_pairing_is_constant() {
        let flow = cellular();
        let s = catalog_symbol(
            EquationKind::EulerVelocity,
            flow.clone(),
            EquilibriumData::default(),
        )
        .unwrap();
        let x0 = TorusPoint::new(&[0.9, 2.6]);
        let xi0 = [0.28, 0.96];
        // b within the fiber; c arbitrary in the fiber too
        let frame = s.bundle.fiber_frame(&xi0);
        let b0 = frame[0].clone();
        let c0 = frame[0].iter().map(|v| v * c(1.3)).collect::<Vec<_>>();
        let times = uniform_times(6.0, 12);
        let bt = integrate_bas(&flow, &s, &x0, &xi0, &b0, &times, &opts()).unwrap();
        let ct = inverse_adjoint_transport(&flow, &s, &x0, &xi0, &c0, &times, &opts()).unwrap();
        assert!(duality_pairing_drift(&bt, &ct) < 1e-8);
    }

    #[test]
    fn cocycle_composition_property() {
        let flow = cellular();
        let s = catalog_symbol(
            EquationKind::EulerVelocity,
            flow.clone(),
            EquilibriumData::default(),
        )
        .unwrap();
        let x0 = TorusPoint::new(&[1.7, 0.6]);
        let xi0 = [0.8, 0.6];
        let frame = s.bundle.fiber_frame(&xi0);
        let b0 = frame[0].clone();
        let t1 = 2.3;
        let t2 = 1.9;
        let first = integrate_bas(&flow, &s, &x0, &xi0, &b0, &[0.0, t1], &opts()).unwrap();
        let mid = first.last().clone();
        let second = integrate_bas(
            &flow,
            &s,
            &TorusPoint::new(&mid.x),
            &mid.xi,
            &mid.b,
            &[0.0, t2],
            &opts(),
        )
        .unwrap();
        let direct = integrate_bas(&flow, &s, &x0, &xi0, &b0, &[0.0, t1 + t2], &opts()).unwrap();
        let composed = mid.log_r_b + second.last().log_r_b;
        assert!(
            (composed - direct.last().log_r_b).abs() < 1e-6,
            "{} vs {}",
            composed,
            direct.last().log_r_b
        );
        let composed_xi = mid.log_r_xi + second.last().log_r_xi;
        assert!((composed_xi - direct.last().log_r_xi).abs() < 1e-6);
    }

    #[test]
    fn scale_invariance_in_xi() {
        let flow = cellular();
        let s = catalog_symbol(
            EquationKind::EulerVelocity,
            flow.clone(),
            EquilibriumData::default(),
        )
        .unwrap();
        let x0 = TorusPoint::new(&[0.4, 1.9]);
        let xi = [0.6, 0.8];
        let xi3 = [1.8, 2.4];
        let frame = s.bundle.fiber_frame(&xi);
        let a = integrate_bas(&flow, &s, &x0, &xi, &frame[0], &[0.0, 4.0], &opts()).unwrap();
        let b = integrate_bas(&flow, &s, &x0, &xi3, &frame[0], &[0.0, 4.0], &opts()).unwrap();
        let sa = a.last();
        let sb = b.last();
        assert!((sa.log_r_xi - sb.log_r_xi).abs() < 1e-9);
        assert!((sa.log_r_b - sb.log_r_b).abs() < 1e-9);
        for i in 0..2 {
            assert!((sa.xi[i] - sb.xi[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn hamiltonian_conserved_on_generic_orbit() {
        let flow = cellular();
        let s = catalog_symbol(EquationKind::Transport, flow.clone(), EquilibriumData::default())
            .unwrap();
        let traj = integrate_bas(
            &flow,
            &s,
            &TorusPoint::new(&[0.5, 1.3]),
            &[0.7, -0.714142842854285],
            &[c(1.0)],
            &uniform_times(20.0, 40),
            &opts(),
        )
        .unwrap();
        assert!(traj.hamiltonian_drift() <= 1e-6);
    }

    #[test]
    fn conserved_determinant_euler_2d_stagnation() {
        // Closed forms: b(t) = e^{-t} b0, xi(t) = e^{t} e1, det [b, xi] = -b2.
        let flow = cellular();
        let s = catalog_symbol(
            EquationKind::EulerVelocity,
            flow.clone(),
            EquilibriumData::default(),
        )
        .unwrap();
        let traj = integrate_bas(
            &flow,
            &s,
            &TorusPoint::new(&[0.0, 0.0]),
            &[1.0, 0.0],
            &[c(0.0), c(1.0)],
            &uniform_times(6.0, 12),
            &opts(),
        )
        .unwrap();
        let law = conserved_determinant(&[&traj], &s).unwrap();
        // ECM specialization: exp(-int tr) cancels |xi|^{-2}, the raw
        // determinant itself is constant here; q(0) = det[e2, e1] = -1.
        assert!(law.relative_drift() <= 1e-7, "drift {}", law.relative_drift());
        assert_relative_eq!(law.values[0].re, -1.0, epsilon = 1e-12);
        // spec example: raw det [b(t), xi(t)] = -b2 for all t
        for smp in &traj.samples {
            let det = smp.b[0] * c(smp.xi[1] * smp.log_r_xi.exp())
                - smp.b[1] * c(smp.xi[0] * smp.log_r_xi.exp());
            let det_scaled = det * c(smp.log_r_b.exp());
            assert_relative_eq!(det_scaled.re, -1.0, max_relative = 1e-7);
        }
    }

    #[test]
    fn conserved_determinant_dynamo_scaling() {
        // det[b, xi] |xi|^{-2} = -1 with b = e^t e2 and xi = e^t e1.
        let flow = cellular();
        let s = catalog_symbol(
            EquationKind::KinematicDynamo,
            flow.clone(),
            EquilibriumData::default(),
        )
        .unwrap();
        let traj = integrate_bas(
            &flow,
            &s,
            &TorusPoint::new(&[0.0, 0.0]),
            &[1.0, 0.0],
            &[c(0.0), c(1.0)],
            &uniform_times(6.0, 12),
            &opts(),
        )
        .unwrap();
        let law = conserved_determinant(&[&traj], &s).unwrap();
        assert!(law.relative_drift() <= 1e-7);
        assert_relative_eq!(law.values[0].re, -1.0, epsilon = 1e-12);
    }

    #[test]
    fn conserved_determinant_generic_orbit_drift() {
        let flow = cellular();
        let s = catalog_symbol(
            EquationKind::CamassaHolm,
            flow.clone(),
            EquilibriumData::default(),
        )
        .unwrap();
        let xi0 = [0.6, 0.8];
        let frame = s.bundle.fiber_frame(&xi0);
        let traj = integrate_bas(
            &flow,
            &s,
            &TorusPoint::new(&[2.9, 1.4]),
            &xi0,
            &frame[0],
            &uniform_times(10.0, 20),
            &opts(),
        )
        .unwrap();
        let law = conserved_determinant(&[&traj], &s).unwrap();
        assert!(law.relative_drift() <= 1e-6, "drift {}", law.relative_drift());
    }

    #[test]
    fn rejects_mismatched_trajectories() {
        let flow = cellular();
        let s = catalog_symbol(
            EquationKind::EulerVelocity,
            flow.clone(),
            EquilibriumData::default(),
        )
        .unwrap();
        let t1 = integrate_bas(
            &flow,
            &s,
            &TorusPoint::new(&[0.0, 0.0]),
            &[1.0, 0.0],
            &[c(0.0), c(1.0)],
            &uniform_times(1.0, 2),
            &opts(),
        )
        .unwrap();
        // 2D law takes exactly one amplitude trajectory
        assert!(matches!(
            conserved_determinant(&[&t1, &t1], &s),
            Err(Error::DeterminantLawDimension { .. })
        ));
    }

    #[test]
    fn residual_stays_small_for_preserving_symbol() {
        let flow = cellular();
        let s = catalog_symbol(
            EquationKind::EulerVelocity,
            flow.clone(),
            EquilibriumData::default(),
        )
        .unwrap();
        let xi0 = [0.38, 0.924989189];
        let frame = s.bundle.fiber_frame(&xi0);
        let traj = integrate_bas(
            &flow,
            &s,
            &TorusPoint::new(&[1.1, 0.3]),
            &xi0,
            &frame[0],
            &uniform_times(10.0, 20),
            &opts(),
        )
        .unwrap();
        assert!(traj.max_residual() <= 1e-8);
    }

    #[test]
    fn raw_vector_transport_loses_constraint_transformed_keeps_it() {
        let flow = cellular();
        let raw = catalog_symbol(
            EquationKind::VectorTransport,
            flow.clone(),
            EquilibriumData::default(),
        )
        .unwrap();
        let fixed = constraint_transform(&raw).unwrap();
        let x0 = TorusPoint::new(&[0.9, 2.2]);
        let xi0 = [0.6, 0.8];
        let frame = raw.bundle.fiber_frame(&xi0);
        let times = uniform_times(6.0, 12);
        let t_raw = integrate_bas(&flow, &raw, &x0, &xi0, &frame[0], &times, &opts()).unwrap();
        let t_fixed = integrate_bas(&flow, &fixed, &x0, &xi0, &frame[0], &times, &opts()).unwrap();
        assert!(
            t_raw.max_residual() > 1e-3,
            "raw residual {} should grow",
            t_raw.max_residual()
        );
        assert!(t_fixed.max_residual() <= 1e-8);
    }

    #[test]
    fn scalar_symbols_have_zero_residual() {
        let flow = cellular();
        let s = catalog_symbol(EquationKind::Transport, flow.clone(), EquilibriumData::default())
            .unwrap();
        let traj = integrate_bas(
            &flow,
            &s,
            &TorusPoint::new(&[1.0, 1.0]),
            &[0.0, 1.0],
            &[c(1.0)],
            &uniform_times(5.0, 10),
            &opts(),
        )
        .unwrap();
        for r in constraint_residual(&traj) {
            assert_eq!(r, 0.0);
        }
    }

    #[test]
    fn rejects_constraint_violating_initial_amplitude() {
        let flow = cellular();
        let s = catalog_symbol(
            EquationKind::EulerVelocity,
            flow.clone(),
            EquilibriumData::default(),
        )
        .unwrap();
        let bad = [c(1.0), c(0.0)]; // parallel to xi = e1
        let got = integrate_bas(
            &flow,
            &s,
            &TorusPoint::new(&[0.0, 0.0]),
            &[1.0, 0.0],
            &bad,
            &[0.0, 1.0],
            &opts(),
        );
        assert!(matches!(got, Err(Error::ConstraintViolated { .. })));
    }

    #[test]
    fn matrix_growth_matches_vector_runs_at_stagnation() {
        // Fundamental matrix of the dynamo at the saddle is diag(e^{-t}, e^{t});
        // sigma_max = e^{t}.
        let flow = cellular();
        let s = catalog_symbol(
            EquationKind::KinematicDynamo,
            flow.clone(),
            EquilibriumData::default(),
        )
        .unwrap();
        let phase = PhasePoint::new(TorusPoint::new(&[0.0, 0.0]), &[1.0, 0.0]);
        let growth = matrix_growth(&flow, &s, &phase, &[0.0, 3.0, 6.0], &opts()).unwrap();
        assert_relative_eq!(growth[1].log_sigma_max, 3.0, epsilon = 1e-6);
        assert_relative_eq!(growth[2].log_sigma_max, 6.0, epsilon = 1e-6);
        assert_relative_eq!(growth[2].log_r_xi, 6.0, epsilon = 1e-6);
    }

    #[test]
    fn csv_dump_has_expected_columns() {
        let flow = cellular();
        let s = catalog_symbol(
            EquationKind::EulerVelocity,
            flow.clone(),
            EquilibriumData::default(),
        )
        .unwrap();
        let traj = integrate_bas(
            &flow,
            &s,
            &TorusPoint::new(&[0.0, 0.0]),
            &[1.0, 0.0],
            &[c(0.0), c(1.0)],
            &uniform_times(1.0, 2),
            &opts(),
        )
        .unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,x1,x2,xi1,xi2,log_r_xi,re_b1,im_b1,re_b2,im_b2,log_r_b,residual,hamiltonian,consdet"
        );
        assert_eq!(lines.count(), 3);
    }
}
