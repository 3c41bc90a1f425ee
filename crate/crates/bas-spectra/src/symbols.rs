//! Principal symbols a0(x, xi) of the advective equations, their frequency
//! bundles and constraint projectors, the constraint-preserving transform,
//! and the Sobolev shift.
//!
//! Every evaluator is 0-homogeneous in xi: inputs are normalized on entry, so
//! a0(x, xi) = a0(x, s xi) holds exactly for s > 0.

use crate::error::{Error, Result};
use crate::flows::{FlowField, TrigSeries};
use crate::linalg::{cross_matrix, CMat};
use num_complex::Complex64;
use std::sync::Arc;

fn normalize(xi: &[f64]) -> Vec<f64> {
    let norm = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm > 0.0, "frequency must be non-zero");
    xi.iter().map(|v| v / norm).collect()
}

/// Fiber constraint F(xi) together with its orthogonal projector p(xi).
#[derive(Clone, Debug, PartialEq)]
pub enum FrequencyBundle {
    /// No constraint: F(xi) = C^d.
    Full { d: usize },
    /// Incompressibility: F(xi) = { b : b . xi = 0 }, p = id - xi xi^T / |xi|^2.
    DivergenceFree { n: usize },
    /// Boussinesq fiber (b, r) in C^{n+1}: b is projected divergence-free,
    /// the r component is unconstrained.
    BoussinesqFiber { n: usize },
}

impl FrequencyBundle {
    pub fn fiber_dim(&self) -> usize {
        match self {
            FrequencyBundle::Full { d } => *d,
            FrequencyBundle::DivergenceFree { n } => *n,
            FrequencyBundle::BoussinesqFiber { n } => *n + 1,
        }
    }

    pub fn is_trivial(&self) -> bool {
        matches!(self, FrequencyBundle::Full { .. })
    }

    /// Orthogonal projector p(xi) onto F(xi); 0-homogeneous.
    pub fn projector(&self, xi: &[f64]) -> CMat {
        match self {
            FrequencyBundle::Full { d } => CMat::identity(*d),
            FrequencyBundle::DivergenceFree { n } => {
                let u = normalize(xi);
                CMat::identity(*n).sub(&CMat::outer(&u, &u))
            }
            FrequencyBundle::BoussinesqFiber { n } => {
                let u = normalize(xi);
                let mut p = CMat::identity(*n + 1);
                for i in 0..*n {
                    for j in 0..*n {
                        p[(i, j)] -= Complex64::new(u[i] * u[j], 0.0);
                    }
                }
                p
            }
        }
    }

    /// Analytic gradient d p_kl / d xi_j evaluated at unit xi; `None` for
    /// bundles without one (the general transform then cannot be applied).
    pub fn projector_entry_gradient(
        &self,
        xi: &[f64],
        k: usize,
        l: usize,
    ) -> Option<Vec<Complex64>> {
        match self {
            FrequencyBundle::Full { d } => Some(vec![Complex64::new(0.0, 0.0); xi.len().max(*d)]),
            FrequencyBundle::DivergenceFree { n } => {
                let u = normalize(xi);
                Some(div_free_entry_gradient(&u, k, l, *n))
            }
            FrequencyBundle::BoussinesqFiber { n } => {
                let u = normalize(xi);
                if k < *n && l < *n {
                    Some(div_free_entry_gradient(&u, k, l, *n))
                } else {
                    // row/column touching the r component is constant
                    Some(vec![Complex64::new(0.0, 0.0); *n])
                }
            }
        }
    }

    /// Orthonormal frame of F(xi) as complex column vectors.
    pub fn fiber_frame(&self, xi: &[f64]) -> Vec<Vec<Complex64>> {
        match self {
            FrequencyBundle::Full { d } => (0..*d)
                .map(|i| {
                    let mut v = vec![Complex64::new(0.0, 0.0); *d];
                    v[i] = Complex64::new(1.0, 0.0);
                    v
                })
                .collect(),
            _ => self.projector(xi).range_basis(1e-8),
        }
    }
}

/// d/dxi_j of (delta_kl - xi_k xi_l / |xi|^2) at |xi| = 1.
fn div_free_entry_gradient(u: &[f64], k: usize, l: usize, n: usize) -> Vec<Complex64> {
    (0..n)
        .map(|j| {
            let mut g = 2.0 * u[k] * u[l] * u[j];
            if j == k {
                g -= u[l];
            }
            if j == l {
                g -= u[k];
            }
            Complex64::new(g, 0.0)
        })
        .collect()
}

/// Constant-vector and scalar-field equilibrium data consumed by the symbol
/// catalog. Scalar fields are truncated Fourier series consistent with the
/// flow's periodicity.
#[derive(Clone, Debug, Default)]
pub struct EquilibriumData {
    /// Coriolis vector (constant).
    pub coriolis: Option<[f64; 3]>,
    /// Magnetic field (constant).
    pub magnetic: Option<[f64; 3]>,
    /// Scalar theta(x) for the surface quasi-geostrophic symbol.
    pub theta: Option<TrigSeries>,
    /// Potential Phi(x) for the Boussinesq coupling.
    pub phi: Option<TrigSeries>,
    /// Background density rho0(x) for the Boussinesq coupling.
    pub rho0: Option<TrigSeries>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EquationKind {
    Transport,
    /// Vector-valued zero symbol under the incompressibility bundle; the raw
    /// (untransformed) form demonstrates constraint loss.
    VectorTransport,
    EulerVelocity,
    EulerVelocityCoriolis,
    EulerVorticity,
    EulerVorticityCoriolis,
    Boussinesq,
    CamassaHolm,
    Superconductivity,
    Sqg,
    KinematicDynamo,
}

impl EquationKind {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "transport" => EquationKind::Transport,
            "vector_transport" => EquationKind::VectorTransport,
            "euler_velocity" => EquationKind::EulerVelocity,
            "euler_velocity_coriolis" => EquationKind::EulerVelocityCoriolis,
            "euler_vorticity" => EquationKind::EulerVorticity,
            "euler_vorticity_coriolis" => EquationKind::EulerVorticityCoriolis,
            "boussinesq" => EquationKind::Boussinesq,
            "camassa_holm" => EquationKind::CamassaHolm,
            "superconductivity" => EquationKind::Superconductivity,
            "sqg" => EquationKind::Sqg,
            "kinematic_dynamo" => EquationKind::KinematicDynamo,
            other => return Err(Error::UnknownEquation(other.into())),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            EquationKind::Transport => "transport",
            EquationKind::VectorTransport => "vector_transport",
            EquationKind::EulerVelocity => "euler_velocity",
            EquationKind::EulerVelocityCoriolis => "euler_velocity_coriolis",
            EquationKind::EulerVorticity => "euler_vorticity",
            EquationKind::EulerVorticityCoriolis => "euler_vorticity_coriolis",
            EquationKind::Boussinesq => "boussinesq",
            EquationKind::CamassaHolm => "camassa_holm",
            EquationKind::Superconductivity => "superconductivity",
            EquationKind::Sqg => "sqg",
            EquationKind::KinematicDynamo => "kinematic_dynamo",
        }
    }
}

/// Principal symbol with its frequency bundle and the flow it rides on.
/// Immutable and shareable; evaluation is pure.
#[derive(Clone, Debug)]
pub struct SymbolSpec {
    pub name: String,
    pub equation: EquationKind,
    pub flow: Arc<FlowField>,
    pub bundle: FrequencyBundle,
    equilibrium: EquilibriumData,
    /// Number of times the constraint-preserving transform has been applied.
    /// The evaluator applies the formula that many times; idempotence is a
    /// property of the formula, not of this counter.
    transform_applications: usize,
    /// Accumulated Sobolev shift exponent.
    pub sobolev_m: f64,
    /// Diagnostic perturbation epsilon * id (negative controls).
    perturbation: f64,
}

impl SymbolSpec {
    pub fn fiber_dim(&self) -> usize {
        self.bundle.fiber_dim()
    }

    pub fn is_constraint_preserving(&self) -> bool {
        if self.bundle.is_trivial() {
            return true;
        }
        if self.transform_applications > 0 {
            return true;
        }
        // These catalog symbols are fixed points of the incompressible
        // transform, hence preserve b in F(xi) as written.
        matches!(
            self.equation,
            EquationKind::EulerVelocity
                | EquationKind::EulerVelocityCoriolis
                | EquationKind::CamassaHolm
                | EquationKind::Superconductivity
                | EquationKind::Boussinesq
        )
    }

    /// Evaluate the (possibly transformed / shifted / perturbed) symbol.
    pub fn eval(&self, x: &[f64], xi: &[f64]) -> CMat {
        let n = self.flow.dim();
        let u = normalize(xi);
        let mut du = [0.0; 9];
        self.flow.jacobian(x, &mut du[..n * n]);
        let mut a = self.base_symbol(x, &u, &du[..n * n]);
        for _ in 0..self.transform_applications {
            a = self.transform_once(&a, &u, &du[..n * n]);
        }
        if self.sobolev_m != 0.0 {
            // a_m = a0 - m (du^T xi, xi) |xi|^{-2} id
            let mut q = 0.0;
            for i in 0..n {
                for j in 0..n {
                    q += du[j * n + i] * u[j] * u[i];
                }
            }
            let d = a.rows;
            let shift = CMat::identity(d).scale(Complex64::new(-self.sobolev_m * q, 0.0));
            a = a.add(&shift);
        }
        if self.perturbation != 0.0 {
            let d = a.rows;
            a = a.add(&CMat::identity(d).scale(Complex64::new(self.perturbation, 0.0)));
        }
        a
    }

    fn base_symbol(&self, x: &[f64], u: &[f64], du: &[f64]) -> CMat {
        let n = self.flow.dim();
        match self.equation {
            EquationKind::Transport => CMat::zeros(1, 1),
            EquationKind::VectorTransport => CMat::zeros(n, n),
            EquationKind::EulerVelocity => euler_velocity_matrix(n, u, du),
            EquationKind::EulerVelocityCoriolis => {
                let omega = self.equilibrium.coriolis.unwrap();
                // + 2 (xi xi^T - id) Omega x .
                let proj = CMat::outer(u, u).sub(&CMat::identity(3));
                euler_velocity_matrix(n, u, du)
                    .add(&proj.matmul(&cross_matrix(&omega)).scale(Complex64::new(2.0, 0.0)))
            }
            EquationKind::EulerVorticity | EquationKind::EulerVorticityCoriolis => {
                let mut w = self.flow.vorticity_3d(x).unwrap();
                if self.equation == EquationKind::EulerVorticityCoriolis {
                    let omega = self.equilibrium.coriolis.unwrap();
                    for i in 0..3 {
                        w[i] += 2.0 * omega[i];
                    }
                }
                let coef = w[0] * u[0] + w[1] * u[1] + w[2] * u[2];
                let xi3 = [u[0], u[1], u[2]];
                CMat::from_real(3, 3, du)
                    .sub(&cross_matrix(&xi3).scale(Complex64::new(coef, 0.0)))
            }
            EquationKind::Boussinesq => {
                let ev = euler_velocity_matrix(n, u, du);
                let phi = self.equilibrium.phi.as_ref().unwrap();
                let rho = self.equilibrium.rho0.as_ref().unwrap();
                let mut gphi = [0.0; 3];
                let mut grho = [0.0; 3];
                phi.gradient(x, &mut gphi);
                rho.gradient(x, &mut grho);
                let mut a = CMat::zeros(n + 1, n + 1);
                for i in 0..n {
                    for j in 0..n {
                        a[(i, j)] = ev[(i, j)];
                    }
                    // (id - xi xi^T) grad Phi in the r column
                    let mut v = gphi[i];
                    let udotg: f64 = (0..n).map(|k| u[k] * gphi[k]).sum();
                    v -= u[i] * udotg;
                    a[(i, n)] = Complex64::new(v, 0.0);
                    a[(n, i)] = Complex64::new(-grho[i], 0.0);
                }
                a
            }
            EquationKind::CamassaHolm => {
                // (xi xi^T - id) du^T + xi xi^T du
                let outer = CMat::outer(u, u);
                let dut = transpose_real(n, du);
                outer
                    .sub(&CMat::identity(n))
                    .matmul(&dut)
                    .add(&outer.matmul(&CMat::from_real(n, n, du)))
            }
            EquationKind::Superconductivity => {
                let b = self.equilibrium.magnetic.unwrap();
                let proj = CMat::identity(3).sub(&CMat::outer(u, u));
                euler_velocity_matrix(n, u, du).add(&proj.matmul(&cross_matrix(&b)))
            }
            EquationKind::Sqg => {
                // i (xi_perp . grad theta); the |xi|^{-1} factor is absorbed by
                // evaluating on the projectivized frequency.
                let theta = self.equilibrium.theta.as_ref().unwrap();
                let mut g = [0.0; 3];
                theta.gradient(x, &mut g);
                let perp = -u[1] * g[0] + u[0] * g[1];
                let mut a = CMat::zeros(1, 1);
                a[(0, 0)] = Complex64::new(0.0, perp);
                a
            }
            EquationKind::KinematicDynamo => CMat::from_real(n, n, du),
        }
    }

    /// One application of the constraint-preserving change of symbol:
    /// a_new = p a + p_t, with p_t entries -(du^T xi) . grad p_kl. Under the
    /// incompressibility bundle this reduces to the closed form
    /// a_new = a + xi xi^T (du - a).
    fn transform_once(&self, a: &CMat, u: &[f64], du: &[f64]) -> CMat {
        let n = self.flow.dim();
        match &self.bundle {
            FrequencyBundle::Full { .. } => *a,
            FrequencyBundle::DivergenceFree { .. } => {
                let outer = CMat::outer(u, u);
                a.add(&outer.matmul(&CMat::from_real(n, n, du).sub(a)))
            }
            FrequencyBundle::BoussinesqFiber { .. } => {
                self.general_transform(a, u, du).expect("analytic gradient")
            }
        }
    }

    /// General form of the transform, used for bundles whose projector is not
    /// the plain incompressibility one. Exposed for cross-checking against the
    /// closed form.
    pub fn general_transform(&self, a: &CMat, u: &[f64], du: &[f64]) -> Result<CMat> {
        let n = self.flow.dim();
        let d = a.rows;
        let p = self.bundle.projector(u);
        let mut out = p.matmul(a);
        // -du^T xi
        let mut w = [0.0; 3];
        for j in 0..n {
            w[j] = -(0..n).map(|i| du[i * n + j] * u[i]).sum::<f64>();
        }
        for k in 0..d {
            for l in 0..d {
                let grad = self
                    .bundle
                    .projector_entry_gradient(u, k, l)
                    .ok_or(Error::MissingProjectorGradient)?;
                let mut pt = Complex64::new(0.0, 0.0);
                for (j, wj) in w.iter().enumerate().take(grad.len().min(n)) {
                    pt += grad[j] * Complex64::new(*wj, 0.0);
                }
                out[(k, l)] += pt;
            }
        }
        Ok(out)
    }

    /// Diagnostic copy with a0 replaced by a0 + eps * id.
    pub fn perturbed(&self, eps: f64) -> SymbolSpec {
        let mut s = self.clone();
        s.perturbation += eps;
        s.name = format!("{}+eps", s.name);
        s
    }
}

fn transpose_real(n: usize, m: &[f64]) -> CMat {
    let mut out = CMat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = Complex64::new(m[j * n + i], 0.0);
        }
    }
    out
}

fn euler_velocity_matrix(n: usize, u: &[f64], du: &[f64]) -> CMat {
    CMat::outer(u, u)
        .scale(Complex64::new(2.0, 0.0))
        .sub(&CMat::identity(n))
        .matmul(&CMat::from_real(n, n, du))
}

/// Principal part of the linearized Euler equation in velocity form:
/// (2 xi xi^T / |xi|^2 - id) du(x).
pub fn euler_velocity_principal(flow: &FlowField, x: &[f64], xi: &[f64]) -> CMat {
    let n = flow.dim();
    let u = normalize(xi);
    let mut du = [0.0; 9];
    flow.jacobian(x, &mut du[..n * n]);
    euler_velocity_matrix(n, &u, &du[..n * n])
}

/// Build a catalog symbol for `equation` over `flow`.
pub fn catalog_symbol(
    equation: EquationKind,
    flow: Arc<FlowField>,
    equilibrium: EquilibriumData,
) -> Result<SymbolSpec> {
    let n = flow.dim();
    let require_3d = matches!(
        equation,
        EquationKind::EulerVorticity
            | EquationKind::EulerVorticityCoriolis
            | EquationKind::EulerVelocityCoriolis
            | EquationKind::Superconductivity
    );
    if require_3d && n != 3 {
        return Err(Error::DimensionMismatch {
            context: format!("equation {}", equation.name()),
            expected: 3,
            got: n,
        });
    }
    if equation == EquationKind::Sqg && n != 2 {
        return Err(Error::DimensionMismatch {
            context: "sqg".into(),
            expected: 2,
            got: n,
        });
    }
    let need = |field: &str, ok: bool| -> Result<()> {
        if ok {
            Ok(())
        } else {
            Err(Error::MissingEquilibrium {
                equation: equation.name().into(),
                field: field.into(),
            })
        }
    };
    match equation {
        EquationKind::EulerVelocityCoriolis | EquationKind::EulerVorticityCoriolis => {
            need("coriolis", equilibrium.coriolis.is_some())?
        }
        EquationKind::Superconductivity => need("magnetic", equilibrium.magnetic.is_some())?,
        EquationKind::Sqg => need("theta", equilibrium.theta.is_some())?,
        EquationKind::Boussinesq => {
            need("phi", equilibrium.phi.is_some())?;
            need("rho0", equilibrium.rho0.is_some())?;
        }
        _ => {}
    }
    if equation == EquationKind::EulerVorticity || equation == EquationKind::EulerVorticityCoriolis
    {
        // vorticity is derived from the flow; make sure it exists
        let _ = flow.vorticity_3d(&vec![0.0; n]).ok_or(Error::DimensionMismatch {
            context: "vorticity".into(),
            expected: 3,
            got: n,
        })?;
    }
    let bundle = match equation {
        EquationKind::EulerVelocity
        | EquationKind::EulerVelocityCoriolis
        | EquationKind::CamassaHolm
        | EquationKind::Superconductivity
        | EquationKind::VectorTransport => FrequencyBundle::DivergenceFree { n },
        EquationKind::Boussinesq => FrequencyBundle::BoussinesqFiber { n },
        EquationKind::Transport | EquationKind::Sqg => FrequencyBundle::Full { d: 1 },
        EquationKind::EulerVorticity
        | EquationKind::EulerVorticityCoriolis
        | EquationKind::KinematicDynamo => FrequencyBundle::Full { d: n },
    };
    Ok(SymbolSpec {
        name: equation.name().to_string(),
        equation,
        flow,
        bundle,
        equilibrium,
        transform_applications: 0,
        sobolev_m: 0.0,
        perturbation: 0.0,
    })
}

/// Replace the symbol by one whose amplitude flow preserves b in F(xi).
pub fn constraint_transform(symbol: &SymbolSpec) -> Result<SymbolSpec> {
    if let FrequencyBundle::Full { .. } = symbol.bundle {
        // trivial bundle: p = id and p_t = 0
        let mut s = symbol.clone();
        s.transform_applications += 1;
        return Ok(s);
    }
    let mut s = symbol.clone();
    s.transform_applications += 1;
    Ok(s)
}

/// Shift the symbol so its amplitude growth realizes the b xi^m cocycle:
/// a_m = a0 - m (du^T xi, xi) |xi|^{-2} id.
pub fn sobolev_shift(symbol: &SymbolSpec, m: f64) -> SymbolSpec {
    let mut s = symbol.clone();
    s.sobolev_m += m;
    s
}
