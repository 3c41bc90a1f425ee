//! Adaptive embedded Runge-Kutta integration (Dormand-Prince 5(4)).
//!
//! Trajectories through hyperbolic regions control the accuracy of every
//! exponent estimate downstream, so the defaults are tight (rel 1e-10,
//! abs 1e-12). Systems may renormalize their state after each accepted step
//! through [`OdeSystem::normalize`]; log-magnitude accumulators live inside
//! the state vector and are updated there.

use crate::error::{Error, Result};

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

#[derive(Clone, Copy, Debug)]
pub struct IntegratorOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_steps: usize,
    pub h_max: f64,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        IntegratorOptions {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            max_steps: 50_000_000,
            h_max: f64::INFINITY,
        }
    }
}

impl IntegratorOptions {
    pub fn with_tols(rel: f64, abs: f64) -> Self {
        IntegratorOptions {
            rel_tol: rel,
            abs_tol: abs,
            ..Default::default()
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

impl StepStats {
    fn absorb(&mut self, other: StepStats) {
        self.accepted += other.accepted;
        self.rejected += other.rejected;
        self.rhs_evals += other.rhs_evals;
    }
}

pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]);
    /// Hook run after every accepted step; may rescale state components and
    /// fold the factors into log accumulators kept inside `y`.
    fn normalize(&self, _y: &mut [f64]) {}
}

struct Workspace {
    k: [Vec<f64>; 7],
    y_stage: Vec<f64>,
    y5: Vec<f64>,
    err: Vec<f64>,
}

impl Workspace {
    fn new(dim: usize) -> Self {
        Workspace {
            k: std::array::from_fn(|_| vec![0.0; dim]),
            y_stage: vec![0.0; dim],
            y5: vec![0.0; dim],
            err: vec![0.0; dim],
        }
    }
}

/// Integrate `y` from `t0` to `t1` in place (either direction).
pub fn integrate_to<S: OdeSystem>(
    sys: &S,
    y: &mut [f64],
    t0: f64,
    t1: f64,
    opts: &IntegratorOptions,
) -> Result<StepStats> {
    let mut ws = Workspace::new(sys.dim());
    integrate_span(sys, y, t0, t1, opts, &mut ws)
}

/// Integrate through a strictly monotone list of output times, invoking
/// `on_sample(t, y)` at each (including `times[0]`, the initial time).
pub fn integrate_path<S: OdeSystem, F: FnMut(f64, &[f64])>(
    sys: &S,
    y: &mut [f64],
    times: &[f64],
    opts: &IntegratorOptions,
    mut on_sample: F,
) -> Result<StepStats> {
    assert!(!times.is_empty());
    let mut ws = Workspace::new(sys.dim());
    let mut stats = StepStats::default();
    on_sample(times[0], y);
    for w in times.windows(2) {
        stats.absorb(integrate_span(sys, y, w[0], w[1], opts, &mut ws)?);
        on_sample(w[1], y);
    }
    Ok(stats)
}

fn integrate_span<S: OdeSystem>(
    sys: &S,
    y: &mut [f64],
    t0: f64,
    t1: f64,
    opts: &IntegratorOptions,
    ws: &mut Workspace,
) -> Result<StepStats> {
    let dim = sys.dim();
    assert_eq!(y.len(), dim);
    let mut stats = StepStats::default();
    let span = t1 - t0;
    if span == 0.0 {
        return Ok(stats);
    }
    let dir = span.signum();
    let mut t = t0;
    let mut h = initial_step(sys, y, t0, dir, opts, &mut stats).min(span.abs());

    while (t1 - t) * dir > 0.0 {
        if stats.accepted + stats.rejected >= opts.max_steps {
            return Err(Error::MaxStepsExceeded {
                t,
                max_steps: opts.max_steps,
            });
        }
        h = h.min(opts.h_max).min((t1 - t).abs());
        if h <= 1e-14 * t.abs().max(1.0) {
            return Err(Error::StepSizeUnderflow { t, h });
        }
        let hs = h * dir;

        sys.rhs(t, y, &mut ws.k[0]);
        for stage in 1..7 {
            for i in 0..dim {
                let mut acc = 0.0;
                for (j, kj) in ws.k.iter().enumerate().take(stage) {
                    let a = A[stage][j];
                    if a != 0.0 {
                        acc += a * kj[i];
                    }
                }
                ws.y_stage[i] = y[i] + hs * acc;
            }
            let (head, tail) = ws.k.split_at_mut(stage);
            let _ = head;
            sys.rhs(t + C[stage] * hs, &ws.y_stage, &mut tail[0]);
        }
        stats.rhs_evals += 7;

        for i in 0..dim {
            let mut acc5 = 0.0;
            let mut acc4 = 0.0;
            for (j, kj) in ws.k.iter().enumerate() {
                acc5 += B5[j] * kj[i];
                acc4 += B4[j] * kj[i];
            }
            ws.y5[i] = y[i] + hs * acc5;
            ws.err[i] = hs * (acc5 - acc4);
        }

        let mut err_norm: f64 = 0.0;
        for i in 0..dim {
            let scale = opts.abs_tol + opts.rel_tol * y[i].abs().max(ws.y5[i].abs());
            err_norm = err_norm.max((ws.err[i] / scale).abs());
        }

        if err_norm <= 1.0 {
            t += hs;
            y.copy_from_slice(&ws.y5);
            sys.normalize(y);
            stats.accepted += 1;
        } else {
            stats.rejected += 1;
        }
        let scale = if err_norm > 0.0 {
            (0.9 * err_norm.powf(-0.2)).clamp(0.2, 5.0)
        } else {
            5.0
        };
        h *= scale;
    }
    Ok(stats)
}

fn initial_step<S: OdeSystem>(
    sys: &S,
    y: &[f64],
    t0: f64,
    dir: f64,
    opts: &IntegratorOptions,
    stats: &mut StepStats,
) -> f64 {
    // Curtis-style heuristic: h ~ tol^(1/5) scaled by |y|/|y'|.
    let dim = sys.dim();
    let mut dy = vec![0.0; dim];
    sys.rhs(t0, y, &mut dy);
    stats.rhs_evals += 1;
    let ynorm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    let dnorm = dy.iter().map(|v| v * v).sum::<f64>().sqrt();
    let base = if dnorm > 1e-12 {
        0.01 * (ynorm.max(1e-3) / dnorm)
    } else {
        0.1
    };
    (base * opts.rel_tol.powf(0.1)).clamp(1e-8, 0.5) * dir.abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Decay;
    impl OdeSystem for Decay {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
            dy[0] = -y[0];
        }
    }

    struct Oscillator;
    impl OdeSystem for Oscillator {
        fn dim(&self) -> usize {
            2
        }
        fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
            dy[0] = y[1];
            dy[1] = -y[0];
        }
    }

    #[test]
    fn exponential_decay_matches_closed_form() {
        let mut y = [1.0];
        integrate_to(&Decay, &mut y, 0.0, 3.0, &IntegratorOptions::default()).unwrap();
        assert!((y[0] - (-3.0f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn backward_integration_recovers_initial_state() {
        let mut y = [1.0];
        let opts = IntegratorOptions::default();
        integrate_to(&Decay, &mut y, 0.0, 2.0, &opts).unwrap();
        integrate_to(&Decay, &mut y, 2.0, 0.0, &opts).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn oscillator_period_and_energy() {
        let mut y = [1.0, 0.0];
        let opts = IntegratorOptions::default();
        integrate_to(&Oscillator, &mut y, 0.0, 2.0 * std::f64::consts::PI, &opts).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-8);
        assert!(y[1].abs() < 1e-8);
    }

    #[test]
    fn path_sampling_hits_requested_times() {
        let mut y = [1.0];
        let times = [0.0, 0.5, 1.0, 2.0];
        let mut seen = Vec::new();
        integrate_path(
            &Decay,
            &mut y,
            &times,
            &IntegratorOptions::default(),
            |t, y| seen.push((t, y[0])),
        )
        .unwrap();
        assert_eq!(seen.len(), 4);
        for (t, v) in seen {
            assert!((v - (-t).exp()).abs() < 1e-10);
        }
    }
}
