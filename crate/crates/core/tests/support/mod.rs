//! Shared helpers for integration tests: an independent finite-difference
//! Ricci oracle and families of random smooth profiles.
#![allow(dead_code)]

use std::sync::Arc;

use rand::Rng;
use warpflow_core::geometry::ProfileGrid as GenericGrid;
use warpflow_core::{Topology, WarpedMetric};

type ProfileGrid = GenericGrid<f64>;

/// Classic centred five-point first-derivative weights (fourth order).
const D1_C5: [f64; 5] = [1.0 / 12.0, -2.0 / 3.0, 0.0, 2.0 / 3.0, -1.0 / 12.0];
/// Classic centred five-point second-derivative weights (fourth order).
const D2_C5: [f64; 5] = [-1.0 / 12.0, 4.0 / 3.0, -5.0 / 2.0, 4.0 / 3.0, -1.0 / 12.0];
/// Fourth-order first derivative at the second node of a six-node edge window
/// (offsets -1..4).
const D1_O1: [f64; 6] = [
    -1.0 / 5.0,
    -13.0 / 12.0,
    2.0,
    -1.0,
    1.0 / 3.0,
    -1.0 / 20.0,
];
/// Fourth-order second derivative at the second node of a six-node edge window.
const D2_O1: [f64; 6] = [
    5.0 / 6.0,
    -5.0 / 4.0,
    -1.0 / 3.0,
    7.0 / 6.0,
    -1.0 / 2.0,
    1.0 / 12.0,
];

fn d_closed(u: &[f64], i: usize, dx: f64, order: usize) -> f64 {
    let n = u.len();
    assert!(i >= 1 && i + 1 < n && n >= 6);
    let scale = dx.powi(order as i32);
    if i >= 2 && i + 2 < n {
        let w = if order == 1 { &D1_C5 } else { &D2_C5 };
        let mut s = 0.0;
        for (k, wk) in w.iter().enumerate() {
            s += wk * u[i - 2 + k];
        }
        s / scale
    } else if i == 1 {
        let w = if order == 1 { &D1_O1 } else { &D2_O1 };
        let mut s = 0.0;
        for (k, wk) in w.iter().enumerate() {
            s += wk * u[k];
        }
        s / scale
    } else {
        // Mirror of the i == 1 window: reverse the weights, negate odd orders.
        let w = if order == 1 { &D1_O1 } else { &D2_O1 };
        let sign = if order == 1 { -1.0 } else { 1.0 };
        let mut s = 0.0;
        for (k, wk) in w.iter().enumerate() {
            s += wk * u[n - 1 - k];
        }
        sign * s / scale
    }
}

fn d_periodic(u: &[f64], i: usize, dx: f64, order: usize) -> f64 {
    let n = u.len();
    let w = if order == 1 { &D1_C5 } else { &D2_C5 };
    let mut s = 0.0;
    for (k, wk) in w.iter().enumerate() {
        s += wk * u[(i + n + k - 2) % n];
    }
    s / dx.powi(order as i32)
}

/// Ricci eigenvalues `(ric_ss, ric_sphere)` computed directly from the metric
/// components `A = phi^2`, `B = psi^2` with uniform-coordinate stencils:
///
/// ```text
/// Ric_xx = -2 [ B_xx/(2B) - B_x^2/(4B^2) - A_x B_x/(4AB) ],   ric_ss = Ric_xx / A
/// ric_sphere = (1 - [ B_xx/(2A) - B_x A_x/(4A^2) ]) / B
/// ```
///
/// This is an independent route to the same tensor: different variables,
/// different formulas, different stencils. Pole nodes of closed profiles are
/// returned as NaN (the component formula is 0/0 there).
pub fn fd_ricci_oracle(m: &WarpedMetric) -> (Vec<f64>, Vec<f64>) {
    let n = m.n();
    let a: Vec<f64> = m.phi().iter().map(|p| p * p).collect();
    let b: Vec<f64> = m.psi().iter().map(|p| p * p).collect();
    let mut ric_ss = vec![f64::NAN; n];
    let mut ric_sphere = vec![f64::NAN; n];
    let eval = |ax: f64, bx: f64, bxx: f64, av: f64, bv: f64| -> (f64, f64) {
        let ric_xx = -2.0 * (bxx / (2.0 * bv) - bx * bx / (4.0 * bv * bv) - ax * bx / (4.0 * av * bv));
        let ss = ric_xx / av;
        let sph = (1.0 - (bxx / (2.0 * av) - bx * ax / (4.0 * av * av))) / bv;
        (ss, sph)
    };
    match m.topology() {
        Topology::ClosedIntervalWithPoles => {
            let dx = 1.0 / (n - 1) as f64;
            for i in 1..n - 1 {
                let ax = d_closed(&a, i, dx, 1);
                let bx = d_closed(&b, i, dx, 1);
                let bxx = d_closed(&b, i, dx, 2);
                let (ss, sph) = eval(ax, bx, bxx, a[i], b[i]);
                ric_ss[i] = ss;
                ric_sphere[i] = sph;
            }
        }
        Topology::Periodic => {
            let dx = 1.0 / n as f64;
            for i in 0..n {
                let ax = d_periodic(&a, i, dx, 1);
                let bx = d_periodic(&b, i, dx, 1);
                let bxx = d_periodic(&b, i, dx, 2);
                let (ss, sph) = eval(ax, bx, bxx, a[i], b[i]);
                ric_ss[i] = ss;
                ric_sphere[i] = sph;
            }
        }
    }
    (ric_ss, ric_sphere)
}

/// Coefficients of a random smooth closed profile: a bumped round sphere with
/// exact pole closure at every resolution.
///
/// `psi = sin(pi x) (1 + sum a_j sin(j pi x) sin(pi x))` and
/// `phi = pi (1 + sum b_k sin(k pi x) sin(pi x))`. The bumps are even about
/// both poles, so the profile stays an odd function of arclength through each
/// pole: a genuinely smooth metric, not just a C^1 splice.
#[derive(Debug, Clone, Copy)]
pub struct ClosedFamily {
    pub a: [f64; 3],
    pub b: [f64; 3],
}

impl ClosedFamily {
    pub fn random(rng: &mut impl Rng) -> Self {
        let mut pick = || rng.gen_range(-0.12..0.12);
        Self {
            a: [pick(), pick(), pick()],
            b: [pick(), pick(), pick()],
        }
    }

    pub fn build(&self, n: usize) -> WarpedMetric {
        let grid = Arc::new(ProfileGrid::uniform(n, Topology::ClosedIntervalWithPoles).unwrap());
        let pi = std::f64::consts::PI;
        let bump = |c: &[f64; 3], x: f64| -> f64 {
            let env = (pi * x).sin();
            1.0 + c
                .iter()
                .enumerate()
                .map(|(j, &cj)| cj * ((j + 1) as f64 * pi * x).sin() * env)
                .sum::<f64>()
        };
        let x = grid.x().to_vec();
        let mut psi: Vec<f64> = x.iter().map(|&xi| (pi * xi).sin() * bump(&self.a, xi)).collect();
        psi[0] = 0.0;
        psi[n - 1] = 0.0;
        let phi: Vec<f64> = x.iter().map(|&xi| pi * bump(&self.b, xi)).collect();
        WarpedMetric::from_profiles(grid, phi, psi, 0.0).unwrap()
    }
}

/// Coefficients of a random smooth periodic profile.
#[derive(Debug, Clone, Copy)]
pub struct PeriodicFamily {
    pub radius: f64,
    pub length: f64,
    pub a: [f64; 4],
    pub b: [f64; 4],
}

impl PeriodicFamily {
    pub fn random(rng: &mut impl Rng) -> Self {
        let radius = rng.gen_range(0.6..1.4);
        let length = rng.gen_range(2.0..5.0);
        let mut pick = || rng.gen_range(-0.1..0.1);
        Self {
            radius,
            length,
            a: [pick(), pick(), pick(), pick()],
            b: [pick(), pick(), pick(), pick()],
        }
    }

    pub fn build(&self, n: usize) -> WarpedMetric {
        let grid = Arc::new(ProfileGrid::uniform(n, Topology::Periodic).unwrap());
        let tau = std::f64::consts::TAU;
        let wave = |c: &[f64; 4], x: f64| -> f64 {
            1.0 + c[0] * (tau * x).sin()
                + c[1] * (tau * x).cos()
                + c[2] * (2.0 * tau * x).sin()
                + c[3] * (2.0 * tau * x).cos()
        };
        let x = grid.x().to_vec();
        let psi: Vec<f64> = x.iter().map(|&xi| self.radius * wave(&self.a, xi)).collect();
        let phi: Vec<f64> = x.iter().map(|&xi| self.length * wave(&self.b, xi)).collect();
        WarpedMetric::from_profiles(grid, phi, psi, 0.0).unwrap()
    }
}

/// Empirical convergence order from two errors at grid counts `n` and `2n`.
pub fn convergence_order(coarse_err: f64, fine_err: f64) -> f64 {
    (coarse_err / fine_err).log2()
}
