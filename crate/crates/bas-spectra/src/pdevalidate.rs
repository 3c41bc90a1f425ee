//! Desk-scale Fourier-Galerkin evolution of concrete 2D advective equations,
//! used to validate the shortwave asymptotic formula and the cocycle growth
//! predictions against the actual PDE.
//!
//! Products are computed pseudo-spectrally on a zero-padded grid sized so
//! that products with the (low-mode) velocity field cannot alias back into
//! the retained band; truncation acts as the Galerkin projection.

use crate::cocycle::integrate_bas;
use crate::error::{Error, Result};
use crate::flows::{FlowField, TorusPoint};
use crate::ode::{integrate_to, IntegratorOptions, OdeSystem};
use crate::symbols::{catalog_symbol, EquationKind, EquilibriumData, FrequencyBundle, SymbolSpec};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use std::f64::consts::PI;
use std::sync::Arc;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Truncated Fourier coefficient array: all modes |k|_inf <= N with d
/// components per mode.
#[derive(Clone, Debug)]
pub struct SpectralField {
    pub trunc: usize,
    pub components: usize,
    pub coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn zeros(trunc: usize, components: usize) -> Self {
        let side = 2 * trunc + 1;
        SpectralField {
            trunc,
            components,
            coeffs: vec![ZERO; side * side * components],
        }
    }

    #[inline]
    fn idx(&self, k1: i64, k2: i64, c: usize) -> usize {
        let n = self.trunc as i64;
        debug_assert!(k1.abs() <= n && k2.abs() <= n);
        let side = 2 * self.trunc + 1;
        (((k1 + n) as usize) * side + ((k2 + n) as usize)) * self.components + c
    }

    pub fn get(&self, k1: i64, k2: i64, c: usize) -> Complex64 {
        self.coeffs[self.idx(k1, k2, c)]
    }

    pub fn set(&mut self, k1: i64, k2: i64, c: usize, v: Complex64) {
        let i = self.idx(k1, k2, c);
        self.coeffs[i] = v;
    }

    pub fn modes(&self) -> impl Iterator<Item = (i64, i64)> {
        let n = self.trunc as i64;
        (-n..=n).flat_map(move |k1| (-n..=n).map(move |k2| (k1, k2)))
    }

    pub fn l2_norm(&self) -> f64 {
        self.coeffs.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Weighted norm |f(0)|^2 + sum |k|^{2m} |f(k)|^2 over nonzero modes.
    pub fn sobolev_norm(&self, m: f64) -> f64 {
        let mut acc = 0.0;
        for (k1, k2) in self.modes() {
            let w = if k1 == 0 && k2 == 0 {
                1.0
            } else {
                (((k1 * k1 + k2 * k2) as f64).sqrt()).powf(m)
            };
            for c in 0..self.components {
                acc += (w * w) * self.get(k1, k2, c).norm_sqr();
            }
        }
        acc.sqrt()
    }

    /// Apply the bundle projector mode-by-mode; the zero mode is untouched
    /// (constants are unconstrained for the incompressibility bundle).
    pub fn project_bundle(&mut self, bundle: &FrequencyBundle) {
        if bundle.is_trivial() {
            return;
        }
        let d = self.components;
        let n = self.trunc as i64;
        for k1 in -n..=n {
            for k2 in -n..=n {
                if k1 == 0 && k2 == 0 {
                    continue;
                }
                let p = bundle.projector(&[k1 as f64, k2 as f64]);
                let v: Vec<Complex64> = (0..d).map(|c| self.get(k1, k2, c)).collect();
                let mut pv = vec![ZERO; d];
                p.apply(&v, &mut pv);
                for (c, val) in pv.into_iter().enumerate() {
                    self.set(k1, k2, c, val);
                }
            }
        }
    }

    /// Fraction of the norm lying outside the bundle fibers.
    pub fn out_of_bundle_fraction(&self, bundle: &FrequencyBundle) -> f64 {
        if bundle.is_trivial() {
            return 0.0;
        }
        let mut projected = self.clone();
        projected.project_bundle(bundle);
        let mut defect = 0.0;
        for (a, b) in self.coeffs.iter().zip(&projected.coeffs) {
            defect += (a - b).norm_sqr();
        }
        defect.sqrt() / self.l2_norm().max(1e-300)
    }

    /// Largest |f(-k) - conj f(k)| over modes, zero for real fields.
    pub fn hermitian_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for (k1, k2) in self.modes() {
            for c in 0..self.components {
                let a = self.get(k1, k2, c);
                let b = self.get(-k1, -k2, c).conj();
                worst = worst.max((a - b).norm());
            }
        }
        worst
    }

    pub fn rel_l2_distance(&self, other: &SpectralField) -> f64 {
        assert_eq!(self.coeffs.len(), other.coeffs.len());
        let diff: f64 = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        diff / self.l2_norm().max(other.l2_norm()).max(1e-300)
    }

    /// Snapshot rows: k1, k2, component, Re, Im.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "k1,k2,component,re,im")?;
        for (k1, k2) in self.modes() {
            for c in 0..self.components {
                let v = self.get(k1, k2, c);
                if v.norm_sqr() > 0.0 {
                    writeln!(w, "{k1},{k2},{c},{:.12e},{:.12e}", v.re, v.im)?;
                }
            }
        }
        Ok(())
    }
}

/// Smallest 5-smooth integer >= n (pads FFT grids to friendly sizes).
pub fn fft_friendly(n: usize) -> usize {
    let smooth = |mut v: usize| {
        for p in [2, 3, 5] {
            while v % p == 0 {
                v /= p;
            }
        }
        v == 1
    };
    (n..).find(|&v| smooth(v)).unwrap()
}

struct Fft2 {
    size: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    fn new(size: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            size,
            forward: planner.plan_fft_forward(size),
            inverse: planner.plan_fft_inverse(size),
        }
    }

    fn run(&self, data: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        let m = self.size;
        // rows
        for row in data.chunks_exact_mut(m) {
            fft.process(row);
        }
        // columns via transpose
        let mut tr = vec![ZERO; m * m];
        for i in 0..m {
            for j in 0..m {
                tr[j * m + i] = data[i * m + j];
            }
        }
        for row in tr.chunks_exact_mut(m) {
            fft.process(row);
        }
        for i in 0..m {
            for j in 0..m {
                data[i * m + j] = tr[j * m + i];
            }
        }
    }

    /// Coefficients (wrapped indices) -> physical samples, unnormalized IDFT.
    fn to_physical(&self, data: &mut [Complex64]) {
        self.run(data, &self.inverse.clone());
    }

    /// Physical samples -> coefficients * size^2.
    fn to_spectral(&self, data: &mut [Complex64]) {
        self.run(data, &self.forward.clone());
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackendKind {
    /// Componentwise transport -u . grad f, d components.
    Advection { components: usize },
    /// Linearized 2D Euler in velocity form with the Leray projection.
    Euler2dVelocity,
    /// Linearized 2D Euler in vorticity form on mean-zero scalars.
    Euler2dVorticity,
}

impl BackendKind {
    pub fn components(&self) -> usize {
        match self {
            BackendKind::Advection { components } => *components,
            BackendKind::Euler2dVelocity => 2,
            BackendKind::Euler2dVorticity => 1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BackendKind::Advection { .. } => "advection",
            BackendKind::Euler2dVelocity => "euler2d_velocity",
            BackendKind::Euler2dVorticity => "euler2d_vorticity",
        }
    }
}

pub struct PdeBackend {
    pub kind: BackendKind,
    pub flow: Arc<FlowField>,
    pub trunc: usize,
    grid: usize,
    u_grid: Vec<[f64; 2]>,
    du_grid: Vec<[f64; 4]>,
    grad_omega_grid: Vec<[f64; 2]>,
    fft: Fft2,
}

impl PdeBackend {
    pub fn new(kind: BackendKind, flow: Arc<FlowField>, trunc: usize) -> Result<PdeBackend> {
        if flow.dim() != 2 {
            return Err(Error::DimensionMismatch {
                context: "PDE backends are 2D".into(),
                expected: 2,
                got: flow.dim(),
            });
        }
        let q = flow.max_mode().max(1) as usize;
        let grid = fft_friendly(2 * trunc + q + 2);
        let mut u_grid = Vec::with_capacity(grid * grid);
        let mut du_grid = Vec::with_capacity(grid * grid);
        let mut grad_omega_grid = Vec::with_capacity(grid * grid);
        let needs_omega = kind == BackendKind::Euler2dVorticity;
        for i in 0..grid {
            for j in 0..grid {
                let x = [2.0 * PI * i as f64 / grid as f64, 2.0 * PI * j as f64 / grid as f64];
                let mut u = [0.0; 2];
                let mut du = [0.0; 4];
                flow.velocity(&x, &mut u);
                flow.jacobian(&x, &mut du);
                u_grid.push(u);
                du_grid.push(du);
                if needs_omega {
                    let mut g = [0.0; 2];
                    if !flow.vorticity_gradient_2d(&x, &mut g) {
                        return Err(Error::DimensionMismatch {
                            context: "vorticity backend needs a 2D flow with scalar vorticity"
                                .into(),
                            expected: 2,
                            got: flow.dim(),
                        });
                    }
                    grad_omega_grid.push(g);
                }
            }
        }
        Ok(PdeBackend {
            kind,
            flow,
            trunc,
            grid,
            u_grid,
            du_grid,
            grad_omega_grid,
            fft: Fft2::new(grid),
        })
    }

    pub fn grid_size(&self) -> usize {
        self.grid
    }

    fn coeffs_to_grid(&self, f: &SpectralField, c: usize) -> Vec<Complex64> {
        let m = self.grid as i64;
        let mut data = vec![ZERO; self.grid * self.grid];
        for (k1, k2) in f.modes() {
            let i = k1.rem_euclid(m) as usize;
            let j = k2.rem_euclid(m) as usize;
            data[i * self.grid + j] = f.get(k1, k2, c);
        }
        self.fft.to_physical(&mut data);
        data
    }

    fn grid_to_coeffs(&self, data: &mut [Complex64], out: &mut SpectralField, c: usize) {
        self.fft.to_spectral(data);
        let m = self.grid as i64;
        let scale = 1.0 / (self.grid * self.grid) as f64;
        for (k1, k2) in out.modes() {
            let i = k1.rem_euclid(m) as usize;
            let j = k2.rem_euclid(m) as usize;
            let v = data[i * self.grid + j] * scale;
            out.set(k1, k2, c, v);
        }
    }

    /// Spectral partial derivative d/dx_axis evaluated on the physical grid.
    fn derivative_grid(&self, f: &SpectralField, c: usize, axis: usize) -> Vec<Complex64> {
        let m = self.grid as i64;
        let mut data = vec![ZERO; self.grid * self.grid];
        for (k1, k2) in f.modes() {
            let i = k1.rem_euclid(m) as usize;
            let j = k2.rem_euclid(m) as usize;
            let k = if axis == 0 { k1 } else { k2 } as f64;
            data[i * self.grid + j] = f.get(k1, k2, c) * Complex64::new(0.0, k);
        }
        self.fft.to_physical(&mut data);
        data
    }

    /// Apply the generator L = -u . grad + A to a coefficient field.
    pub fn apply_generator(&self, f: &SpectralField) -> Result<SpectralField> {
        let d = self.kind.components();
        if f.components != d || f.trunc != self.trunc {
            return Err(Error::DimensionMismatch {
                context: format!("backend {} field", self.kind.name()),
                expected: d,
                got: f.components,
            });
        }
        let npts = self.grid * self.grid;
        let mut out = SpectralField::zeros(self.trunc, d);
        match self.kind {
            BackendKind::Advection { .. } => {
                for c in 0..d {
                    let fx = self.derivative_grid(f, c, 0);
                    let fy = self.derivative_grid(f, c, 1);
                    let mut adv = vec![ZERO; npts];
                    for p in 0..npts {
                        let u = self.u_grid[p];
                        adv[p] = -(fx[p] * u[0] + fy[p] * u[1]);
                    }
                    self.grid_to_coeffs(&mut adv, &mut out, c);
                }
            }
            BackendKind::Euler2dVelocity => {
                let f0 = self.coeffs_to_grid(f, 0);
                let f1 = self.coeffs_to_grid(f, 1);
                let mut g = SpectralField::zeros(self.trunc, 2);
                for c in 0..2 {
                    let fx = self.derivative_grid(f, c, 0);
                    let fy = self.derivative_grid(f, c, 1);
                    let mut adv = vec![ZERO; npts];
                    let mut stretch = vec![ZERO; npts];
                    for p in 0..npts {
                        let u = self.u_grid[p];
                        let du = self.du_grid[p];
                        adv[p] = -(fx[p] * u[0] + fy[p] * u[1]);
                        // (f . grad) u = du f
                        stretch[p] = f0[p] * du[c * 2] + f1[p] * du[c * 2 + 1];
                    }
                    self.grid_to_coeffs(&mut adv, &mut out, c);
                    self.grid_to_coeffs(&mut stretch, &mut g, c);
                }
                // out += g - 2 P_leray g; the zero mode keeps P = id
                for (k1, k2) in out.modes() {
                    let gv = [g.get(k1, k2, 0), g.get(k1, k2, 1)];
                    let pv = if k1 == 0 && k2 == 0 {
                        gv
                    } else {
                        let kk = (k1 * k1 + k2 * k2) as f64;
                        let kdot = gv[0] * k1 as f64 + gv[1] * k2 as f64;
                        [
                            gv[0] - kdot * k1 as f64 / kk,
                            gv[1] - kdot * k2 as f64 / kk,
                        ]
                    };
                    for c in 0..2 {
                        let cur = out.get(k1, k2, c);
                        out.set(k1, k2, c, cur + gv[c] - pv[c] * 2.0);
                    }
                }
            }
            BackendKind::Euler2dVorticity => {
                // v = grad^perp laplace^{-1} f, mean-zero scalars
                let m = self.grid as i64;
                let mut v0 = vec![ZERO; npts];
                let mut v1 = vec![ZERO; npts];
                for (k1, k2) in f.modes() {
                    if k1 == 0 && k2 == 0 {
                        continue;
                    }
                    let i = k1.rem_euclid(m) as usize;
                    let j = k2.rem_euclid(m) as usize;
                    let kk = (k1 * k1 + k2 * k2) as f64;
                    let val = f.get(k1, k2, 0);
                    v0[i * self.grid + j] = val * Complex64::new(0.0, k2 as f64 / kk);
                    v1[i * self.grid + j] = val * Complex64::new(0.0, -(k1 as f64) / kk);
                }
                self.fft.to_physical(&mut v0);
                self.fft.to_physical(&mut v1);
                let fx = self.derivative_grid(f, 0, 0);
                let fy = self.derivative_grid(f, 0, 1);
                let mut rhs = vec![ZERO; npts];
                for p in 0..npts {
                    let u = self.u_grid[p];
                    let gw = self.grad_omega_grid[p];
                    rhs[p] = -(fx[p] * u[0] + fy[p] * u[1]) - (v0[p] * gw[0] + v1[p] * gw[1]);
                }
                self.grid_to_coeffs(&mut rhs, &mut out, 0);
                out.set(0, 0, 0, ZERO);
            }
        }
        Ok(out)
    }

    /// Stable step for the classical RK4 sweep, from the advective spectral
    /// radius bound.
    fn stable_dt(&self) -> f64 {
        let speed = self.flow.max_speed_bound().max(1e-6);
        let lambda = 2.0 * speed * self.trunc as f64 + 4.0;
        2.0 / lambda
    }

    /// Classical RK4 evolution over time t. `steps = None` picks the step
    /// count from the stability bound; `growth_hint` aborts when the norm
    /// exceeds ten times the predicted e^{mu t} envelope.
    pub fn evolve(
        &self,
        f0: &SpectralField,
        t: f64,
        steps: Option<usize>,
        growth_hint: Option<f64>,
    ) -> Result<SpectralField> {
        let nsteps = steps.unwrap_or_else(|| (t.abs() / self.stable_dt()).ceil().max(1.0) as usize);
        let dt = t / nsteps as f64;
        let norm0 = f0.l2_norm();
        let mut f = f0.clone();
        for step in 0..nsteps {
            let k1 = self.apply_generator(&f)?;
            let mut tmp = f.clone();
            axpy(&mut tmp, &k1, dt * 0.5);
            let k2 = self.apply_generator(&tmp)?;
            tmp = f.clone();
            axpy(&mut tmp, &k2, dt * 0.5);
            let k3 = self.apply_generator(&tmp)?;
            tmp = f.clone();
            axpy(&mut tmp, &k3, dt);
            let k4 = self.apply_generator(&tmp)?;
            for i in 0..f.coeffs.len() {
                f.coeffs[i] += (k1.coeffs[i] + (k2.coeffs[i] + k3.coeffs[i]) * 2.0 + k4.coeffs[i])
                    * (dt / 6.0);
            }
            if let Some(mu) = growth_hint {
                let t_now = dt * (step + 1) as f64;
                let allowed = 10.0 * norm0 * (mu * t_now.abs()).exp();
                let norm = f.l2_norm();
                if norm > allowed {
                    return Err(Error::TimeStepInstability { t: t_now, norm });
                }
            }
        }
        Ok(f)
    }

    /// Eigenvalues of the dense generator truncation in the H^m inner
    /// product, sorted by (re, im). Diagnostic only: Galerkin truncations do
    /// not converge to the essential spectrum.
    pub fn truncated_generator_spectrum(&self, m: f64) -> Result<Vec<Complex64>> {
        const MAX_N: usize = 16;
        if self.trunc > MAX_N {
            return Err(Error::TruncationTooLarge {
                n: self.trunc,
                max: MAX_N,
            });
        }
        let d = self.kind.components();
        let skip_mean = self.kind == BackendKind::Euler2dVorticity;
        let n = self.trunc as i64;
        let mut basis: Vec<(i64, i64, usize)> = Vec::new();
        for k1 in -n..=n {
            for k2 in -n..=n {
                if skip_mean && k1 == 0 && k2 == 0 {
                    continue;
                }
                for c in 0..d {
                    basis.push((k1, k2, c));
                }
            }
        }
        let weight = |k1: i64, k2: i64| -> f64 {
            if k1 == 0 && k2 == 0 {
                1.0
            } else {
                (((k1 * k1 + k2 * k2) as f64).sqrt()).powf(m)
            }
        };
        let dim = basis.len();
        let columns: Vec<Vec<Complex64>> = basis
            .par_iter()
            .map(|&(k1, k2, c)| {
                let mut e = SpectralField::zeros(self.trunc, d);
                e.set(k1, k2, c, Complex64::new(1.0, 0.0));
                let le = self.apply_generator(&e).expect("basis apply");
                let wj = weight(k1, k2);
                basis
                    .iter()
                    .map(|&(q1, q2, qc)| le.get(q1, q2, qc) * (weight(q1, q2) / wj))
                    .collect()
            })
            .collect();
        let mut max_imag = 0.0f64;
        for col in &columns {
            for v in col {
                max_imag = max_imag.max(v.im.abs());
            }
        }
        let mut eigs: Vec<Complex64> = if max_imag <= 1e-12 {
            let mut a = nalgebra::DMatrix::<f64>::zeros(dim, dim);
            for (j, col) in columns.iter().enumerate() {
                for (i, v) in col.iter().enumerate() {
                    a[(i, j)] = v.re;
                }
            }
            a.complex_eigenvalues()
                .iter()
                .map(|z| Complex64::new(z.re, z.im))
                .collect()
        } else {
            // real 2x2 block embedding [[Re, -Im], [Im, Re]]; its eigenvalues
            // are those of the complex matrix together with their conjugates,
            // which coincide with the conjugation-symmetric spectrum of these
            // real-coefficient operators
            let big = 2 * dim;
            let mut a = nalgebra::DMatrix::<f64>::zeros(big, big);
            for (j, col) in columns.iter().enumerate() {
                for (i, v) in col.iter().enumerate() {
                    a[(i, j)] = v.re;
                    a[(i, j + dim)] = -v.im;
                    a[(i + dim, j)] = v.im;
                    a[(i + dim, j + dim)] = v.re;
                }
            }
            let all: Vec<Complex64> = a
                .complex_eigenvalues()
                .iter()
                .map(|z| Complex64::new(z.re, z.im))
                .collect();
            // keep one of each conjugate pair, preferring im >= 0
            let mut kept: Vec<Complex64> = all.into_iter().filter(|z| z.im >= -1e-12).collect();
            kept.truncate(dim);
            kept
        };
        eigs.sort_by(|a, b| {
            a.re.partial_cmp(&b.re)
                .unwrap()
                .then(a.im.partial_cmp(&b.im).unwrap())
        });
        Ok(eigs)
    }
}

fn axpy(dst: &mut SpectralField, src: &SpectralField, a: f64) {
    for (d, s) in dst.coeffs.iter_mut().zip(&src.coeffs) {
        *d += s * a;
    }
}

/// Band-limited envelope h0(x) = sum_{|l|_inf <= max_mode} w_l e^{i l.(x-c)}
/// with Gaussian mode weights; real-valued by symmetry of the weights.
#[derive(Clone, Debug)]
pub struct Envelope {
    pub center: [f64; 2],
    pub max_mode: i64,
    pub width: f64,
}

impl Envelope {
    pub fn coeff(&self, l1: i64, l2: i64) -> Complex64 {
        if l1.abs() > self.max_mode || l2.abs() > self.max_mode {
            return ZERO;
        }
        let w = (-((l1 * l1 + l2 * l2) as f64) / (2.0 * self.width * self.width)).exp();
        let phase = -(l1 as f64 * self.center[0] + l2 as f64 * self.center[1]);
        Complex64::new(0.0, phase).exp() * w
    }

    pub fn eval(&self, x: &[f64]) -> Complex64 {
        let mut acc = ZERO;
        for l1 in -self.max_mode..=self.max_mode {
            for l2 in -self.max_mode..=self.max_mode {
                let phase = l1 as f64 * x[0] + l2 as f64 * x[1];
                acc += self.coeff(l1, l2) * Complex64::new(0.0, phase).exp();
            }
        }
        acc
    }
}

/// Shortwave packet: carrier K xi0 on the integer lattice (delta = 1/K),
/// amplitude b0 in F(xi0), band-limited envelope, projected per mode by the
/// packet bundle.
#[derive(Clone, Debug)]
pub struct WavePacket {
    pub xi0: [i64; 2],
    pub scale_k: i64,
    pub amplitude: Vec<Complex64>,
    pub envelope: Envelope,
    pub bundle: FrequencyBundle,
}

impl WavePacket {
    pub fn delta(&self) -> f64 {
        1.0 / self.scale_k as f64
    }

    pub fn carrier(&self) -> [i64; 2] {
        [self.xi0[0] * self.scale_k, self.xi0[1] * self.scale_k]
    }

    pub fn carrier_direction(&self) -> [f64; 2] {
        let c = self.carrier();
        let n = ((c[0] * c[0] + c[1] * c[1]) as f64).sqrt();
        [c[0] as f64 / n, c[1] as f64 / n]
    }

    /// Assemble the projected coefficient field Pi[b0 h0 e^{i K xi0 . x}].
    pub fn field(&self, trunc: usize) -> Result<SpectralField> {
        let carrier = self.carrier();
        let cmax = carrier[0].abs().max(carrier[1].abs());
        if 2 * cmax > trunc as i64 {
            return Err(Error::TruncationTooSmall {
                carrier: cmax,
                n: trunc,
            });
        }
        let d = self.amplitude.len();
        let mut f = SpectralField::zeros(trunc, d);
        for l1 in -self.envelope.max_mode..=self.envelope.max_mode {
            for l2 in -self.envelope.max_mode..=self.envelope.max_mode {
                let k1 = carrier[0] + l1;
                let k2 = carrier[1] + l2;
                if k1.abs() > trunc as i64 || k2.abs() > trunc as i64 {
                    continue;
                }
                let h = self.envelope.coeff(l1, l2);
                for c in 0..d {
                    f.set(k1, k2, c, self.amplitude[c] * h);
                }
            }
        }
        f.project_bundle(&self.bundle);
        Ok(f)
    }
}

struct BackwardFlow<'a> {
    flow: &'a FlowField,
}

impl OdeSystem for BackwardFlow<'_> {
    fn dim(&self) -> usize {
        2
    }
    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        self.flow.velocity(y, &mut dy[..2]);
    }
}

/// Leading-order prediction for the evolved packet, sampled on the backend's
/// grid: B_t(phi_{-t} x, xi0) b0 h0(phi_{-t} x) e^{i K xi0 . phi_{-t} x},
/// then truncated and projected like the packet itself.
fn predicted_field(
    backend: &PdeBackend,
    packet: &WavePacket,
    t: f64,
    opts: &IntegratorOptions,
) -> Result<SpectralField> {
    let m = backend.grid_size();
    let carrier = packet.carrier();
    let d = packet.amplitude.len();
    let prediction_symbol: Option<SymbolSpec> = match backend.kind {
        BackendKind::Euler2dVelocity => Some(catalog_symbol(
            EquationKind::EulerVelocity,
            backend.flow.clone(),
            EquilibriumData::default(),
        )?),
        // scalar transport and componentwise advection have identity
        // amplitude cocycles
        BackendKind::Advection { .. } | BackendKind::Euler2dVorticity => None,
    };
    let xin = packet.carrier_direction();
    let rows: Result<Vec<Vec<Complex64>>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut row = vec![ZERO; m * d];
            for j in 0..m {
                let x = [2.0 * PI * i as f64 / m as f64, 2.0 * PI * j as f64 / m as f64];
                let mut y = x;
                integrate_to(
                    &BackwardFlow { flow: &backend.flow },
                    &mut y,
                    0.0,
                    -t,
                    opts,
                )?;
                let phase = carrier[0] as f64 * y[0] + carrier[1] as f64 * y[1];
                let factor = packet.envelope.eval(&y) * Complex64::new(0.0, phase).exp();
                match &prediction_symbol {
                    None => {
                        for c in 0..d {
                            row[j * d + c] = packet.amplitude[c] * factor;
                        }
                    }
                    Some(sym) => {
                        let traj = integrate_bas(
                            &backend.flow,
                            sym,
                            &TorusPoint::new(&y),
                            &xin,
                            &packet.amplitude,
                            &[0.0, t],
                            opts,
                        )?;
                        let end = traj.last();
                        let scale = end.log_r_b.exp() * traj.initial_b_norm;
                        for c in 0..d {
                            row[j * d + c] = end.b[c] * scale * factor;
                        }
                    }
                }
            }
            Ok(row)
        })
        .collect();
    let rows = rows?;
    let mut out = SpectralField::zeros(backend.trunc, d);
    for c in 0..d {
        let mut grid = vec![ZERO; m * m];
        for (i, row) in rows.iter().enumerate() {
            for j in 0..m {
                grid[i * m + j] = row[j * d + c];
            }
        }
        backend.grid_to_coeffs(&mut grid, &mut out, c);
    }
    out.project_bundle(&packet.bundle);
    Ok(out)
}

/// Relative L2 distance between the evolved packet and the geometric-optics
/// prediction at time t.
pub fn shortwave_error(
    backend: &PdeBackend,
    packet: &WavePacket,
    t: f64,
    opts: &IntegratorOptions,
) -> Result<f64> {
    let f0 = packet.field(backend.trunc)?;
    let evolved = backend.evolve(&f0, t, None, None)?;
    let predicted = predicted_field(backend, packet, t, opts)?;
    Ok(evolved.rel_l2_distance(&predicted))
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct NormGrowthReport {
    pub m: f64,
    pub t: f64,
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
}

/// H^m norm growth ||G_t f||_m / ||f||_m over a packet ensemble.
pub fn norm_growth(
    backend: &PdeBackend,
    m: f64,
    packets: &[WavePacket],
    t: f64,
) -> Result<NormGrowthReport> {
    let mut ratios = Vec::with_capacity(packets.len());
    for p in packets {
        let f0 = p.field(backend.trunc)?;
        let before = f0.sobolev_norm(m);
        let after = backend.evolve(&f0, t, None, None)?.sobolev_norm(m);
        ratios.push(after / before);
    }
    let max_ratio = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(NormGrowthReport {
        m,
        t,
        ratios,
        max_ratio,
    })
}
