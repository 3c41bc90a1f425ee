//! Steady incompressible flows on the n-torus: a small analytic catalog plus
//! user flows given as truncated Fourier series of a stream function (2D) or
//! vector potential (3D), which are divergence-free by construction.
//!
//! The base flow phi_t and its variational (Jacobi) cocycle dphi_t are
//! integrated jointly; positions are kept unwrapped during integration and
//! reduced to [0, 2pi)^n on read-out.

use crate::error::{Error, Result};
use crate::ode::{integrate_to, IntegratorOptions, OdeSystem};
use std::f64::consts::PI;

const TWO_PI: f64 = 2.0 * PI;

/// Point on the n-torus. Coordinates are interpreted modulo 2pi; the internal
/// representation may be unwrapped for continuity of integration.
#[derive(Clone, Debug, PartialEq)]
pub struct TorusPoint {
    pub coords: Vec<f64>,
}

impl TorusPoint {
    pub fn new(coords: &[f64]) -> Self {
        TorusPoint {
            coords: coords.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    /// Representative with every coordinate reduced to [0, 2pi).
    pub fn wrapped(&self) -> TorusPoint {
        TorusPoint {
            coords: self.coords.iter().map(|&c| c.rem_euclid(TWO_PI)).collect(),
        }
    }

    /// Distance on the torus (per-coordinate shortest arc).
    pub fn torus_distance(&self, other: &TorusPoint) -> f64 {
        self.coords
            .iter()
            .zip(&other.coords)
            .map(|(&a, &b)| {
                let d = (a - b).rem_euclid(TWO_PI);
                d.min(TWO_PI - d).powi(2)
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Real trigonometric series  f(x) = sum_j  a_j cos(k_j . x) + b_j sin(k_j . x).
#[derive(Clone, Debug)]
pub struct TrigSeries {
    pub dim: usize,
    pub modes: Vec<TrigMode>,
}

#[derive(Clone, Debug)]
pub struct TrigMode {
    pub k: [i64; 3],
    pub a: f64,
    pub b: f64,
}

impl TrigSeries {
    pub fn new(dim: usize, modes: Vec<TrigMode>) -> Self {
        assert!(dim == 2 || dim == 3);
        TrigSeries { dim, modes }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.modes
            .iter()
            .map(|m| {
                let phase: f64 = (0..self.dim).map(|i| m.k[i] as f64 * x[i]).sum();
                m.a * phase.cos() + m.b * phase.sin()
            })
            .sum()
    }

    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        out[..self.dim].fill(0.0);
        for m in &self.modes {
            let phase: f64 = (0..self.dim).map(|i| m.k[i] as f64 * x[i]).sum();
            let d = -m.a * phase.sin() + m.b * phase.cos();
            for i in 0..self.dim {
                out[i] += m.k[i] as f64 * d;
            }
        }
    }

    /// Partial derivative series d/dx_i.
    pub fn derivative(&self, i: usize) -> TrigSeries {
        TrigSeries {
            dim: self.dim,
            modes: self
                .modes
                .iter()
                .map(|m| TrigMode {
                    k: m.k,
                    a: m.k[i] as f64 * m.b,
                    b: -(m.k[i] as f64) * m.a,
                })
                .collect(),
        }
    }

    pub fn laplacian(&self) -> TrigSeries {
        TrigSeries {
            dim: self.dim,
            modes: self
                .modes
                .iter()
                .map(|m| {
                    let k2: f64 = (0..self.dim).map(|i| (m.k[i] as f64).powi(2)).sum();
                    TrigMode {
                        k: m.k,
                        a: -k2 * m.a,
                        b: -k2 * m.b,
                    }
                })
                .collect(),
        }
    }

    pub fn max_mode(&self) -> i64 {
        self.modes
            .iter()
            .map(|m| m.k.iter().map(|v| v.abs()).max().unwrap_or(0))
            .max()
            .unwrap_or(0)
    }
}

#[derive(Clone, Debug)]
enum FlowKind {
    /// u(x) = c.
    Constant { c: Vec<f64> },
    /// 2D, u = (-psi_y, psi_x); stagnation points supplied where analytic.
    Stream2D {
        psi: TrigSeries,
        stagnation: Vec<Vec<f64>>,
    },
    /// 3D Beltrami field u = (A sin z + C cos y, B sin x + A cos z, C sin y + B cos x).
    Abc { a: f64, b: f64, c: f64 },
    /// 3D, u = curl A.
    Potential3D { components: [TrigSeries; 3] },
}

/// Steady divergence-free velocity field with analytic Jacobian.
/// Immutable after construction; all evaluators are pure.
#[derive(Clone, Debug)]
pub struct FlowField {
    pub name: String,
    dim: usize,
    kind: FlowKind,
}

impl FlowField {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn velocity(&self, x: &[f64], out: &mut [f64]) {
        match &self.kind {
            FlowKind::Constant { c } => out[..self.dim].copy_from_slice(c),
            FlowKind::Stream2D { psi, .. } => {
                let mut g = [0.0; 3];
                psi.gradient(x, &mut g);
                out[0] = -g[1];
                out[1] = g[0];
            }
            FlowKind::Abc { a, b, c } => {
                out[0] = a * x[2].sin() + c * x[1].cos();
                out[1] = b * x[0].sin() + a * x[2].cos();
                out[2] = c * x[1].sin() + b * x[0].cos();
            }
            FlowKind::Potential3D { components } => {
                // u = curl A
                let mut g = [[0.0; 3]; 3];
                for (i, comp) in components.iter().enumerate() {
                    comp.gradient(x, &mut g[i]);
                }
                out[0] = g[2][1] - g[1][2];
                out[1] = g[0][2] - g[2][0];
                out[2] = g[1][0] - g[0][1];
            }
        }
    }

    /// Jacobian J_ij = d u_i / d x_j, row-major into `out` (dim*dim entries).
    pub fn jacobian(&self, x: &[f64], out: &mut [f64]) {
        let n = self.dim;
        match &self.kind {
            FlowKind::Constant { .. } => out[..n * n].fill(0.0),
            FlowKind::Stream2D { psi, .. } => {
                // u1 = -psi_y, u2 = psi_x
                let psi_x = psi.derivative(0);
                let psi_y = psi.derivative(1);
                let mut gx = [0.0; 3];
                let mut gy = [0.0; 3];
                psi_x.gradient(x, &mut gx); // (psi_xx, psi_xy)
                psi_y.gradient(x, &mut gy); // (psi_yx, psi_yy)
                out[0] = -gy[0];
                out[1] = -gy[1];
                out[2] = gx[0];
                out[3] = gx[1];
            }
            FlowKind::Abc { a, b, c } => {
                out[..9].fill(0.0);
                out[1] = -c * x[1].sin(); // d u1 / dy
                out[2] = a * x[2].cos(); // d u1 / dz
                out[3] = b * x[0].cos(); // d u2 / dx
                out[5] = -a * x[2].sin(); // d u2 / dz
                out[6] = -b * x[0].sin(); // d u3 / dx
                out[7] = c * x[1].cos(); // d u3 / dy
            }
            FlowKind::Potential3D { components } => {
                // d/dx_j of (curl A)_i, via second derivatives of components.
                let mut second = [[[0.0; 3]; 3]; 3]; // second[c][i][j] = d2 A_c / dx_i dx_j
                for (ci, comp) in components.iter().enumerate() {
                    for i in 0..3 {
                        let di = comp.derivative(i);
                        let mut g = [0.0; 3];
                        di.gradient(x, &mut g);
                        second[ci][i] = g;
                    }
                }
                for j in 0..3 {
                    out[j] = second[2][1][j] - second[1][2][j];
                    out[3 + j] = second[0][2][j] - second[2][0][j];
                    out[6 + j] = second[1][0][j] - second[0][1][j];
                }
            }
        }
    }

    /// Scalar vorticity omega = curl u = Laplacian(psi); 2D flows only.
    pub fn vorticity_2d(&self, x: &[f64]) -> Option<f64> {
        match &self.kind {
            FlowKind::Stream2D { psi, .. } if self.dim == 2 => Some(psi.laplacian().eval(x)),
            FlowKind::Constant { .. } if self.dim == 2 => Some(0.0),
            _ => None,
        }
    }

    /// Gradient of the 2D scalar vorticity.
    pub fn vorticity_gradient_2d(&self, x: &[f64], out: &mut [f64]) -> bool {
        match &self.kind {
            FlowKind::Stream2D { psi, .. } if self.dim == 2 => {
                psi.laplacian().gradient(x, out);
                true
            }
            FlowKind::Constant { .. } if self.dim == 2 => {
                out[..2].fill(0.0);
                true
            }
            _ => false,
        }
    }

    /// Vorticity vector curl u in 3D, from the analytic Jacobian.
    pub fn vorticity_3d(&self, x: &[f64]) -> Option<[f64; 3]> {
        if self.dim != 3 {
            return None;
        }
        let mut j = [0.0; 9];
        self.jacobian(x, &mut j);
        Some([j[7] - j[5], j[2] - j[6], j[3] - j[1]])
    }

    /// Zeros of the velocity field known in closed form. Empty when the
    /// catalog entry (or a custom flow) provides none.
    pub fn stagnation_points(&self) -> Vec<TorusPoint> {
        match &self.kind {
            FlowKind::Constant { c } => {
                if c.iter().all(|&v| v == 0.0) {
                    vec![TorusPoint::new(&vec![0.0; self.dim])]
                } else {
                    Vec::new()
                }
            }
            FlowKind::Stream2D { stagnation, .. } => {
                stagnation.iter().map(|p| TorusPoint::new(p)).collect()
            }
            _ => Vec::new(),
        }
    }

    /// Largest wavenumber appearing in the velocity field (used to size
    /// dealiased product grids).
    pub fn max_mode(&self) -> i64 {
        match &self.kind {
            FlowKind::Constant { .. } => 0,
            FlowKind::Stream2D { psi, .. } => psi.max_mode(),
            FlowKind::Abc { .. } => 1,
            FlowKind::Potential3D { components } => {
                components.iter().map(|c| c.max_mode()).max().unwrap_or(0)
            }
        }
    }

    pub fn max_speed_bound(&self) -> f64 {
        // Coarse sup-norm bound per component from coefficients.
        match &self.kind {
            FlowKind::Constant { c } => c.iter().map(|v| v.abs()).fold(0.0, f64::max),
            FlowKind::Stream2D { psi, .. } => {
                let bound = |s: &TrigSeries| -> f64 {
                    s.modes.iter().map(|m| m.a.abs() + m.b.abs()).sum()
                };
                bound(&psi.derivative(0)).max(bound(&psi.derivative(1)))
            }
            FlowKind::Abc { a, b, c } => {
                let m = a.abs().max(b.abs()).max(c.abs());
                2.0 * m
            }
            FlowKind::Potential3D { components } => components
                .iter()
                .flat_map(|c| (0..3).map(move |i| c.derivative(i)))
                .map(|s| s.modes.iter().map(|m| m.a.abs() + m.b.abs()).sum::<f64>())
                .fold(0.0, f64::max),
        }
    }

    pub fn from_stream_function(name: &str, psi: TrigSeries) -> Result<FlowField> {
        if psi.dim != 2 {
            return Err(Error::DimensionMismatch {
                context: "stream function".into(),
                expected: 2,
                got: psi.dim,
            });
        }
        let flow = FlowField {
            name: name.to_string(),
            dim: 2,
            kind: FlowKind::Stream2D {
                psi,
                stagnation: Vec::new(),
            },
        };
        flow.validate()?;
        Ok(flow)
    }

    pub fn from_vector_potential(name: &str, components: [TrigSeries; 3]) -> Result<FlowField> {
        let flow = FlowField {
            name: name.to_string(),
            dim: 3,
            kind: FlowKind::Potential3D { components },
        };
        flow.validate()?;
        Ok(flow)
    }

    /// Construction-time checks: zero Jacobian trace at sampled points and
    /// agreement of the analytic Jacobian with central differences.
    fn validate(&self) -> Result<()> {
        let n = self.dim;
        let mut j = vec![0.0; n * n];
        for s in 0..40 {
            let x: Vec<f64> = (0..n)
                .map(|i| ((s * n + i) as f64 * 0.618_033_988_75).fract() * TWO_PI)
                .collect();
            self.jacobian(&x, &mut j);
            let tr: f64 = (0..n).map(|i| j[i * n + i]).sum();
            if tr.abs() > 1e-12 {
                return Err(Error::NotDivergenceFree { trace: tr.abs() });
            }
            let h = 1e-6;
            let mut up = vec![0.0; n];
            let mut dn = vec![0.0; n];
            let scale = 1.0 + self.max_speed_bound();
            for col in 0..n {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[col] += h;
                xm[col] -= h;
                self.velocity(&xp, &mut up);
                self.velocity(&xm, &mut dn);
                for row in 0..n {
                    let fd = (up[row] - dn[row]) / (2.0 * h);
                    if (fd - j[row * n + col]).abs() > 1e-6 * scale {
                        return Err(Error::NotDivergenceFree {
                            trace: (fd - j[row * n + col]).abs(),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Instantiate a catalog flow.
///
/// * `constant`: params = components of c (length 2 or 3)
/// * `shear`: params = [a], u = (a sin y, 0)
/// * `cellular`: params = [a], u = a (-sin x cos y, cos x sin y)
/// * `abc`: params = [A, B, C]
pub fn catalog_flow(name: &str, params: &[f64]) -> Result<FlowField> {
    let flow = match name {
        "constant" => {
            if params.len() != 2 && params.len() != 3 {
                return Err(Error::WrongArity {
                    name: name.into(),
                    expected: 2,
                    got: params.len(),
                });
            }
            FlowField {
                name: format!("constant{}d", params.len()),
                dim: params.len(),
                kind: FlowKind::Constant {
                    c: params.to_vec(),
                },
            }
        }
        "shear" => {
            if params.len() != 1 {
                return Err(Error::WrongArity {
                    name: name.into(),
                    expected: 1,
                    got: params.len(),
                });
            }
            let a = params[0];
            // u = (a sin y, 0) comes from psi = a cos y.
            let psi = TrigSeries::new(
                2,
                vec![TrigMode {
                    k: [0, 1, 0],
                    a,
                    b: 0.0,
                }],
            );
            FlowField {
                name: "shear".into(),
                dim: 2,
                kind: FlowKind::Stream2D {
                    psi,
                    stagnation: vec![
                        vec![0.0, 0.0],
                        vec![PI, 0.0],
                        vec![0.0, PI],
                        vec![PI, PI],
                    ],
                },
            }
        }
        "cellular" => {
            if params.len() != 1 {
                return Err(Error::WrongArity {
                    name: name.into(),
                    expected: 1,
                    got: params.len(),
                });
            }
            let a = params[0];
            // u = a (-sin x cos y, cos x sin y) comes from psi = a sin x sin y:
            // sin x sin y = (cos(x-y) - cos(x+y)) / 2.
            let psi = TrigSeries::new(
                2,
                vec![
                    TrigMode {
                        k: [1, -1, 0],
                        a: a / 2.0,
                        b: 0.0,
                    },
                    TrigMode {
                        k: [1, 1, 0],
                        a: -a / 2.0,
                        b: 0.0,
                    },
                ],
            );
            FlowField {
                name: "cellular".into(),
                dim: 2,
                kind: FlowKind::Stream2D {
                    psi,
                    stagnation: vec![
                        // hyperbolic saddles
                        vec![0.0, 0.0],
                        vec![PI, 0.0],
                        vec![0.0, PI],
                        vec![PI, PI],
                        // elliptic centers
                        vec![PI / 2.0, PI / 2.0],
                        vec![3.0 * PI / 2.0, PI / 2.0],
                        vec![PI / 2.0, 3.0 * PI / 2.0],
                        vec![3.0 * PI / 2.0, 3.0 * PI / 2.0],
                    ],
                },
            }
        }
        "abc" => {
            if params.len() != 3 {
                return Err(Error::WrongArity {
                    name: name.into(),
                    expected: 3,
                    got: params.len(),
                });
            }
            FlowField {
                name: "abc".into(),
                dim: 3,
                kind: FlowKind::Abc {
                    a: params[0],
                    b: params[1],
                    c: params[2],
                },
            }
        }
        other => return Err(Error::UnknownFlow(other.into())),
    };
    flow.validate()?;
    Ok(flow)
}

/// (x, J) joint system for the base flow and its variational equation
/// dJ/dt = du(x(t)) J.
struct FlowJacobiSystem<'a> {
    flow: &'a FlowField,
    with_jacobi: bool,
}

impl OdeSystem for FlowJacobiSystem<'_> {
    fn dim(&self) -> usize {
        let n = self.flow.dim();
        if self.with_jacobi {
            n + n * n
        } else {
            n
        }
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        let n = self.flow.dim();
        self.flow.velocity(&y[..n], &mut dy[..n]);
        if self.with_jacobi {
            let mut du = [0.0; 9];
            self.flow.jacobian(&y[..n], &mut du[..n * n]);
            // dJ = du * J
            for i in 0..n {
                for j in 0..n {
                    let mut acc = 0.0;
                    for k in 0..n {
                        acc += du[i * n + k] * y[n + k * n + j];
                    }
                    dy[n + i * n + j] = acc;
                }
            }
        }
    }
}

/// Position x(t) together with the Jacobi matrix J(t) = dphi_t(x0).
#[derive(Clone, Debug)]
pub struct JacobiState {
    pub position: TorusPoint,
    /// Row-major n x n matrix.
    pub matrix: Vec<f64>,
}

impl JacobiState {
    pub fn det(&self) -> f64 {
        let n = self.position.dim();
        let m = &self.matrix;
        match n {
            2 => m[0] * m[3] - m[1] * m[2],
            3 => {
                m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
                    + m[2] * (m[3] * m[7] - m[4] * m[6])
            }
            _ => unreachable!(),
        }
    }

    /// Apply J^{-T} to a vector (the frequency transport matrix).
    pub fn inverse_transpose_apply(&self, v: &[f64], out: &mut [f64]) {
        let n = self.position.dim();
        let m = &self.matrix;
        let det = self.det();
        match n {
            2 => {
                // J^{-1} = [[m3, -m1], [-m2, m0]] / det; transpose afterwards.
                let inv = [m[3] / det, -m[1] / det, -m[2] / det, m[0] / det];
                out[0] = inv[0] * v[0] + inv[2] * v[1];
                out[1] = inv[1] * v[0] + inv[3] * v[1];
            }
            3 => {
                let cof = |r: usize, c: usize| -> f64 {
                    let idx = |i: usize, j: usize| m[i * 3 + j];
                    let (r1, r2) = match r {
                        0 => (1, 2),
                        1 => (0, 2),
                        _ => (0, 1),
                    };
                    let (c1, c2) = match c {
                        0 => (1, 2),
                        1 => (0, 2),
                        _ => (0, 1),
                    };
                    let minor = idx(r1, c1) * idx(r2, c2) - idx(r1, c2) * idx(r2, c1);
                    if (r + c) % 2 == 0 {
                        minor
                    } else {
                        -minor
                    }
                };
                // (J^{-T})_ij = cof(i,j) / det
                for i in 0..3 {
                    out[i] = (0..3).map(|j| cof(i, j) / det * v[j]).sum();
                }
            }
            _ => unreachable!(),
        }
    }
}

/// Advance the base flow: phi_t(x0).
pub fn advance_flow(
    flow: &FlowField,
    x0: &TorusPoint,
    t: f64,
    opts: &IntegratorOptions,
) -> Result<TorusPoint> {
    let mut y = x0.coords.clone();
    integrate_to(
        &FlowJacobiSystem {
            flow,
            with_jacobi: false,
        },
        &mut y,
        0.0,
        t,
        opts,
    )?;
    Ok(TorusPoint::new(&y).wrapped())
}

/// Integrate the Jacobi cocycle dphi_t(x0) jointly with the position.
pub fn jacobi_cocycle(
    flow: &FlowField,
    x0: &TorusPoint,
    t: f64,
    opts: &IntegratorOptions,
) -> Result<JacobiState> {
    let n = flow.dim();
    let mut y = vec![0.0; n + n * n];
    y[..n].copy_from_slice(&x0.coords);
    for i in 0..n {
        y[n + i * n + i] = 1.0;
    }
    integrate_to(
        &FlowJacobiSystem {
            flow,
            with_jacobi: true,
        },
        &mut y,
        0.0,
        t,
        opts,
    )?;
    Ok(JacobiState {
        position: TorusPoint::new(&y[..n]).wrapped(),
        matrix: y[n..].to_vec(),
    })
}
